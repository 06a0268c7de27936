//! Step-trace export.
//!
//! One line per executed step, tab-separated:
//! `step_index  from_role  to_role  message_name  sim_time_ms`
//! with times printed to three decimals. Handover sessions and FSO link
//! switches share the format; golden-trace files in the repository are
//! compared byte for byte.

use crate::fso::FsoSwitchOutcome;
use crate::handover::HandoverSession;

/// Render one step line.
pub fn step_line(step_index: usize, from: &str, to: &str, message: &str, at_ms: f64) -> String {
    format!("{step_index}\t{from}\t{to}\t{message}\t{at_ms:.3}")
}

/// The executed steps of a handover session, one line each.
pub fn session_lines(session: &HandoverSession) -> Vec<String> {
    session
        .trace()
        .iter()
        .map(|e| {
            step_line(
                e.step_index,
                e.from.as_str(),
                e.to.as_str(),
                e.message,
                e.at.as_millis_f64(),
            )
        })
        .collect()
}

/// Message direction of the six switch steps: beacons and responses come
/// from the AP, requests and setup from the vehicle transceiver.
const SWITCH_FROM_AP: [bool; 6] = [true, false, true, false, false, true];

/// The executed messages of an FSO link switch, in the session line format.
pub fn switch_lines(outcome: &FsoSwitchOutcome) -> Vec<String> {
    let transceiver = "OpticalTransceiver".to_string();
    let target = format!("FsoAP-{}", outcome.to_ap);
    outcome
        .trace
        .iter()
        .map(|e| {
            let from_ap = SWITCH_FROM_AP
                .get(e.step_index - 1)
                .copied()
                .unwrap_or(false);
            let (from, to) = if from_ap {
                (&target, &transceiver)
            } else {
                (&transceiver, &target)
            };
            let at = outcome.started_at + e.at;
            step_line(e.step_index, from, to, &e.message, at.as_millis_f64())
        })
        .collect()
}

/// One exported block: a session or switch with its header comment.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceBlock {
    pub header: String,
    pub lines: Vec<String>,
}

impl TraceBlock {
    pub fn for_session(session: &HandoverSession, outcome_label: &str) -> TraceBlock {
        TraceBlock {
            header: format!(
                "# session kind={} subject={} started={:.3}ms outcome={}",
                session.kind.as_str(),
                session.subject,
                session.started_at.as_millis_f64(),
                outcome_label
            ),
            lines: session_lines(session),
        }
    }

    pub fn for_switch(outcome: &FsoSwitchOutcome, vehicle: usize) -> TraceBlock {
        TraceBlock {
            header: format!(
                "# switch vehicle={} from=FsoAP-{} to=FsoAP-{} started={:.3}ms",
                vehicle,
                outcome.from_ap,
                outcome.to_ap,
                outcome.started_at.as_millis_f64()
            ),
            lines: switch_lines(outcome),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity(64 * (self.lines.len() + 1));
        out.push_str(&self.header);
        out.push('\n');
        for line in &self.lines {
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

/// FNV-1a over the given lines; the determinism checks compare these hashes.
pub fn fnv1a_64<'a>(lines: impl IntoIterator<Item = &'a str>) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for line in lines {
        for byte in line.bytes().chain(std::iter::once(b'\n')) {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    hash
}

/// Incrementally folded trace hash for a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceHasher(u64);

impl TraceHasher {
    pub fn new() -> Self {
        TraceHasher(0xcbf2_9ce4_8422_2325)
    }

    pub fn add_line(&mut self, line: &str) {
        for byte in line.bytes().chain(std::iter::once(b'\n')) {
            self.0 ^= u64::from(byte);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

impl Default for TraceHasher {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fso::{execute_link_switch, FsoSwitchProfile, OpticalSwitchGuard};
    use crate::handover::{
        default_scripts, full_participants, Advance, CacDecision, HandoverEngine, HandoverKind,
    };
    use crate::time::SimDuration;

    #[test]
    fn step_line_formats_three_decimal_ms() {
        assert_eq!(
            step_line(3, "MS", "FAP", "Detach", 15.0),
            "3\tMS\tFAP\tDetach\t15.000"
        );
        assert_eq!(step_line(1, "A", "B", "X", 22.667), "1\tA\tB\tX\t22.667");
    }

    #[test]
    fn session_lines_cover_every_step() {
        let mut engine = HandoverEngine::new(default_scripts(SimDuration::from_micros(5_000)));
        let (id, mut next) = engine
            .start_handover(
                HandoverKind::FemtoToMacro,
                1,
                full_participants(),
                crate::time::SimTime::ZERO,
            )
            .unwrap();
        let mut now = crate::time::SimTime::ZERO;
        loop {
            now += next.latency;
            let decision = engine
                .decision_required(id, next.step_index)
                .unwrap()
                .then_some(CacDecision::Admit);
            match engine.advance(id, next.step_index, now, decision).unwrap() {
                Advance::Scheduled(n) => next = n,
                _ => break,
            }
        }
        let lines = session_lines(engine.session(id).unwrap());
        assert_eq!(lines.len(), 22);
        assert_eq!(lines[0], "1\tMS\tFAP\tMeasurement Report\t5.000");
        assert!(lines[21].starts_with("22\tMS\tFAP\tDelete Old Link Ack\t110.000"));
    }

    #[test]
    fn switch_lines_match_profile_offsets() {
        let outcome = execute_link_switch(
            0,
            1,
            0.0,
            1.0,
            OpticalSwitchGuard::default(),
            &FsoSwitchProfile::default_profile(),
        )
        .unwrap();
        let lines = switch_lines(&outcome);
        assert_eq!(lines.len(), 6);
        assert_eq!(
            lines[0],
            "1\tFsoAP-1\tOpticalTransceiver\tBeacon Measurement\t22.667"
        );
        assert_eq!(
            lines[5],
            "6\tFsoAP-1\tOpticalTransceiver\tSwitch Complete\t136.000"
        );
    }

    #[test]
    fn hash_is_stable_and_order_sensitive() {
        let a = fnv1a_64(["x", "y"]);
        let b = fnv1a_64(["x", "y"]);
        let c = fnv1a_64(["y", "x"]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut h = TraceHasher::new();
        h.add_line("x");
        h.add_line("y");
        assert_eq!(h.finish(), a);
    }
}
