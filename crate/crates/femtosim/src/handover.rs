//! Handover signaling procedures as finite state machines.
//!
//! Three scripted procedures: femtocell-to-macrocell (22 steps),
//! macrocell-to-femtocell (27 steps), and the macrocell-to-macrocell
//! backhaul handover of a whole vehicle (31 steps). A session walks its
//! script strictly in order, collecting an auditable step trace; the CAC
//! decision step either lets the script continue or routes it down the
//! scripted reject-response path. Out-of-order deliveries are protocol
//! errors carrying both the expected and the received step index.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use thiserror::Error;

use crate::time::{SimDuration, SimTime};

#[derive(Debug, Error, PartialEq)]
pub enum HandoverError {
    #[error("participants missing role {0}")]
    MissingRole(&'static str),
    #[error("subject {0} already has a pending handover session")]
    DuplicateSession(u64),
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("session already terminal")]
    TerminalSession,
    #[error("out-of-order message: expected step {expected}, received step {received}")]
    OutOfOrder { expected: usize, received: usize },
    #[error("step {0} is a CAC decision point but no decision was supplied")]
    MissingDecision(usize),
    #[error("session still pending")]
    StillPending,
}

/// Signaling endpoints that appear in the call flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Ms,
    Fap,
    OutsideTransceiver,
    ServingBs,
    TargetBs,
    SourceRnc,
    TargetRnc,
    CoreNetwork,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Ms => "MS",
            Role::Fap => "FAP",
            Role::OutsideTransceiver => "OutsideTransceiver",
            Role::ServingBs => "ServingBS",
            Role::TargetBs => "TargetBS",
            Role::SourceRnc => "S-RNC",
            Role::TargetRnc => "T-RNC",
            Role::CoreNetwork => "CoreNetwork",
        }
    }
}

/// The three scripted procedures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HandoverKind {
    FemtoToMacro,
    MacroToFemto,
    BackhaulMacroToMacro,
}

impl HandoverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HandoverKind::FemtoToMacro => "F2M",
            HandoverKind::MacroToFemto => "M2F",
            HandoverKind::BackhaulMacroToMacro => "BH_M2M",
        }
    }
}

/// Where a script consults something outside pure signaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionPoint {
    /// Admission control: the driver must supply a decision.
    Cac,
    /// The handover trigger; informational (resolved before the session starts).
    Trigger,
}

/// One scripted message.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptStep {
    pub index: usize,
    pub from: Role,
    pub to: Role,
    pub message: &'static str,
    pub latency: SimDuration,
    pub decision: Option<DecisionPoint>,
}

/// A full procedure script.
#[derive(Debug, Clone, PartialEq)]
pub struct StepScript {
    pub kind: HandoverKind,
    steps: Vec<ScriptStep>,
    /// Last step of the scripted response exchange a rejected session still
    /// executes before terminating.
    reject_end: usize,
}

impl StepScript {
    pub fn steps(&self) -> &[ScriptStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, index: usize) -> Option<&ScriptStep> {
        self.steps.get(index.checked_sub(1)?)
    }

    pub fn reject_end(&self) -> usize {
        self.reject_end
    }

    pub fn cac_step(&self) -> Option<usize> {
        self.steps
            .iter()
            .find(|s| s.decision == Some(DecisionPoint::Cac))
            .map(|s| s.index)
    }

    pub fn roles(&self) -> BTreeSet<Role> {
        self.steps.iter().flat_map(|s| [s.from, s.to]).collect()
    }

    /// Override one step's latency (config-driven).
    pub fn set_latency(&mut self, index: usize, latency: SimDuration) -> bool {
        match self.steps.get_mut(index.wrapping_sub(1)) {
            Some(step) => {
                step.latency = latency;
                true
            }
            None => false,
        }
    }
}

/// The built-in scripts for all three procedures.
#[derive(Debug, Clone, PartialEq)]
pub struct Scripts {
    pub f2m: StepScript,
    pub m2f: StepScript,
    pub bh_m2m: StepScript,
}

impl Scripts {
    pub fn get(&self, kind: HandoverKind) -> &StepScript {
        match kind {
            HandoverKind::FemtoToMacro => &self.f2m,
            HandoverKind::MacroToFemto => &self.m2f,
            HandoverKind::BackhaulMacroToMacro => &self.bh_m2m,
        }
    }

    pub fn get_mut(&mut self, kind: HandoverKind) -> &mut StepScript {
        match kind {
            HandoverKind::FemtoToMacro => &mut self.f2m,
            HandoverKind::MacroToFemto => &mut self.m2f,
            HandoverKind::BackhaulMacroToMacro => &mut self.bh_m2m,
        }
    }
}

/// Build the three scripts with a uniform per-step latency.
pub fn default_scripts(step_latency: SimDuration) -> Scripts {
    use DecisionPoint::{Cac, Trigger};
    use Role::*;

    let build = |kind, reject_end, rows: Vec<(Role, Role, &'static str, Option<DecisionPoint>)>| {
        let steps = rows
            .into_iter()
            .enumerate()
            .map(|(i, (from, to, message, decision))| ScriptStep {
                index: i + 1,
                from,
                to,
                message,
                latency: step_latency,
                decision,
            })
            .collect();
        StepScript {
            kind,
            steps,
            reject_end,
        }
    };

    let f2m = build(
        HandoverKind::FemtoToMacro,
        11,
        vec![
            (Ms, Fap, "Measurement Report", None),
            (Fap, OutsideTransceiver, "Measurement Report", None),
            (Ms, Ms, "Neighbor Cell Search", None),
            (Ms, Fap, "Handover Decision", Some(Trigger)),
            (Fap, OutsideTransceiver, "Handover Request", None),
            (OutsideTransceiver, TargetBs, "Handover Request", None),
            (TargetBs, TargetRnc, "CAC Request", None),
            (TargetRnc, TargetRnc, "CAC and RRC", None),
            (TargetRnc, TargetBs, "CAC Response", Some(Cac)),
            (TargetBs, OutsideTransceiver, "Handover Response", None),
            (OutsideTransceiver, Fap, "Handover Response", None),
            (TargetBs, Ms, "Link Setup", None),
            (Ms, TargetBs, "Link Setup Ack", None),
            (TargetBs, Ms, "Link Setup Complete", None),
            (Ms, TargetBs, "Channel Re-establishment", None),
            (TargetBs, Ms, "Channel Re-establishment Ack", None),
            (Ms, Fap, "Detach", None),
            (Ms, TargetBs, "Synchronization", None),
            (Ms, OutsideTransceiver, "Handover Complete", None),
            (OutsideTransceiver, Fap, "Handover Complete", None),
            (Fap, Ms, "Delete Old Link", None),
            (Ms, Fap, "Delete Old Link Ack", None),
        ],
    );

    let m2f = build(
        HandoverKind::MacroToFemto,
        11,
        vec![
            (Ms, ServingBs, "Measurement Report", None),
            (ServingBs, SourceRnc, "Measurement Report", None),
            (Ms, ServingBs, "SON Configuration", None),
            (ServingBs, Ms, "Neighbor Cell List", None),
            (Ms, Fap, "Pre-Authentication", None),
            (Ms, ServingBs, "Handover Decision", Some(Trigger)),
            (ServingBs, OutsideTransceiver, "Handover Request", None),
            (OutsideTransceiver, Fap, "Handover Request", None),
            (Fap, Fap, "CAC and RRC", Some(Cac)),
            (Fap, OutsideTransceiver, "Handover Response", None),
            (OutsideTransceiver, ServingBs, "Handover Response", None),
            (OutsideTransceiver, Fap, "Link Setup", None),
            (Fap, OutsideTransceiver, "Link Setup Ack", None),
            (OutsideTransceiver, Fap, "Link Configuration", None),
            (Fap, OutsideTransceiver, "Link Configuration Ack", None),
            (OutsideTransceiver, Fap, "Link Setup Confirm", None),
            (Fap, OutsideTransceiver, "Link Setup Complete", None),
            (Ms, Fap, "Channel Re-establishment", None),
            (Fap, Ms, "Channel Re-establishment Ack", None),
            (Ms, ServingBs, "Detach", None),
            (Ms, Fap, "Synchronization", None),
            (Fap, Ms, "Synchronization Ack", None),
            (Ms, Fap, "Handover Complete", None),
            (Fap, OutsideTransceiver, "Handover Complete", None),
            (OutsideTransceiver, ServingBs, "Handover Complete", None),
            (ServingBs, OutsideTransceiver, "Delete Old Link", None),
            (OutsideTransceiver, ServingBs, "Delete Old Link Ack", None),
        ],
    );

    let bh_m2m = build(
        HandoverKind::BackhaulMacroToMacro,
        16,
        vec![
            (OutsideTransceiver, ServingBs, "Measurement Report", None),
            (ServingBs, SourceRnc, "Measurement Report", None),
            (
                OutsideTransceiver,
                OutsideTransceiver,
                "Neighbor Cell Search",
                None,
            ),
            (OutsideTransceiver, ServingBs, "SON Configuration", None),
            (ServingBs, TargetBs, "SON Configuration", None),
            (OutsideTransceiver, TargetBs, "Pre-Authentication", None),
            (
                OutsideTransceiver,
                ServingBs,
                "Handover Decision",
                Some(Trigger),
            ),
            (ServingBs, SourceRnc, "Handover Request", None),
            (SourceRnc, TargetRnc, "Handover Request", None),
            (TargetRnc, TargetBs, "Handover Request", None),
            (TargetBs, TargetRnc, "CAC and RRC", Some(Cac)),
            (TargetRnc, TargetBs, "CAC Response", None),
            (TargetBs, TargetRnc, "Handover Response", None),
            (TargetRnc, CoreNetwork, "Handover Response", None),
            (CoreNetwork, SourceRnc, "Handover Response", None),
            (SourceRnc, ServingBs, "Handover Response", None),
            (TargetRnc, TargetBs, "Link Setup", None),
            (TargetBs, TargetRnc, "Link Setup Response", None),
            (TargetRnc, TargetBs, "Link Setup Complete", None),
            (TargetBs, TargetRnc, "Link Setup Ack", None),
            (
                OutsideTransceiver,
                TargetBs,
                "Channel Re-establishment",
                None,
            ),
            (
                TargetBs,
                OutsideTransceiver,
                "Channel Re-establishment Ack",
                None,
            ),
            (OutsideTransceiver, ServingBs, "Detach", None),
            (OutsideTransceiver, TargetBs, "Synchronization", None),
            (OutsideTransceiver, TargetBs, "Handover Complete", None),
            (TargetBs, TargetRnc, "Handover Complete", None),
            (TargetRnc, CoreNetwork, "Delete Old Link", None),
            (CoreNetwork, SourceRnc, "Delete Old Link", None),
            (SourceRnc, ServingBs, "Delete Old Link", None),
            (ServingBs, SourceRnc, "Delete Old Link Ack", None),
            (SourceRnc, CoreNetwork, "Delete Old Link Complete", None),
        ],
    );

    Scripts { f2m, m2f, bh_m2m }
}

/// Identifier of the entity a handover moves (an MS/call or a vehicle);
/// at most one pending session per subject.
pub type SubjectId = u64;
pub type SessionId = u64;
pub type NodeId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionOutcome {
    Pending,
    Completed,
    Rejected,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacDecision {
    Admit,
    Reject,
}

/// One executed step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub step_index: usize,
    pub from: Role,
    pub to: Role,
    pub message: &'static str,
    pub at: SimTime,
}

/// One in-flight (or finished) handover.
#[derive(Debug, Clone)]
pub struct HandoverSession {
    pub id: SessionId,
    pub kind: HandoverKind,
    pub subject: SubjectId,
    pub participants: BTreeMap<Role, NodeId>,
    pub started_at: SimTime,
    trace: Vec<TraceEntry>,
    outcome: SessionOutcome,
    expected_step: usize,
    on_reject_path: bool,
    latency_total: SimDuration,
}

impl HandoverSession {
    pub fn outcome(&self) -> SessionOutcome {
        self.outcome
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn expected_step(&self) -> usize {
        self.expected_step
    }

    pub fn on_reject_path(&self) -> bool {
        self.on_reject_path
    }
}

/// What the caller must do after an `advance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Advance {
    /// Schedule delivery of the named step after its latency.
    Scheduled(NextStep),
    /// Terminal: commit the resource transfer.
    Completed,
    /// Terminal: the target rejected the handover; the old link is kept and
    /// the caller applies its failure policy.
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NextStep {
    pub step_index: usize,
    pub latency: SimDuration,
}

/// Session registry driving the scripts.
#[derive(Debug)]
pub struct HandoverEngine {
    scripts: Scripts,
    sessions: BTreeMap<SessionId, HandoverSession>,
    by_subject: BTreeMap<SubjectId, SessionId>,
    next_id: SessionId,
}

impl HandoverEngine {
    pub fn new(scripts: Scripts) -> Self {
        HandoverEngine {
            scripts,
            sessions: BTreeMap::new(),
            by_subject: BTreeMap::new(),
            next_id: 0,
        }
    }

    pub fn scripts(&self) -> &Scripts {
        &self.scripts
    }

    pub fn session(&self, id: SessionId) -> Result<&HandoverSession, HandoverError> {
        self.sessions
            .get(&id)
            .ok_or(HandoverError::UnknownSession(id))
    }

    pub fn subject_busy(&self, subject: SubjectId) -> bool {
        self.by_subject.contains_key(&subject)
    }

    /// Open a session and hand back step 1 for scheduling.
    pub fn start_handover(
        &mut self,
        kind: HandoverKind,
        subject: SubjectId,
        participants: BTreeMap<Role, NodeId>,
        now: SimTime,
    ) -> Result<(SessionId, NextStep), HandoverError> {
        let script = self.scripts.get(kind);
        for role in script.roles() {
            if !participants.contains_key(&role) {
                return Err(HandoverError::MissingRole(role.as_str()));
            }
        }
        if self.by_subject.contains_key(&subject) {
            return Err(HandoverError::DuplicateSession(subject));
        }
        let first = script.step(1).expect("scripts are non-empty");
        let id = self.next_id;
        self.next_id += 1;
        self.sessions.insert(
            id,
            HandoverSession {
                id,
                kind,
                subject,
                participants,
                started_at: now,
                trace: Vec::with_capacity(script.len()),
                outcome: SessionOutcome::Pending,
                expected_step: 1,
                on_reject_path: false,
                latency_total: SimDuration::ZERO,
            },
        );
        self.by_subject.insert(subject, id);
        Ok((
            id,
            NextStep {
                step_index: 1,
                latency: first.latency,
            },
        ))
    }

    /// Does delivering `step_index` next require a CAC decision?
    pub fn decision_required(
        &self,
        id: SessionId,
        step_index: usize,
    ) -> Result<bool, HandoverError> {
        let session = self.session(id)?;
        let script = self.scripts.get(session.kind);
        Ok(!session.on_reject_path
            && script.step(step_index).and_then(|s| s.decision) == Some(DecisionPoint::Cac))
    }

    /// Deliver the message for `step_index` at time `now`. `decision` must be
    /// supplied exactly when the step is the CAC decision point.
    pub fn advance(
        &mut self,
        id: SessionId,
        step_index: usize,
        now: SimTime,
        decision: Option<CacDecision>,
    ) -> Result<Advance, HandoverError> {
        let session = self
            .sessions
            .get_mut(&id)
            .ok_or(HandoverError::UnknownSession(id))?;
        if session.outcome != SessionOutcome::Pending {
            return Err(HandoverError::TerminalSession);
        }
        if step_index != session.expected_step {
            return Err(HandoverError::OutOfOrder {
                expected: session.expected_step,
                received: step_index,
            });
        }
        let script = self.scripts.get(session.kind);
        let step = script
            .step(step_index)
            .expect("expected_step stays within the script");
        session.trace.push(TraceEntry {
            step_index,
            from: step.from,
            to: step.to,
            message: step.message,
            at: now,
        });
        session.latency_total += step.latency;

        if step.decision == Some(DecisionPoint::Cac) && !session.on_reject_path {
            match decision {
                Some(CacDecision::Admit) => {}
                Some(CacDecision::Reject) => session.on_reject_path = true,
                None => return Err(HandoverError::MissingDecision(step_index)),
            }
        }

        if session.on_reject_path && step_index == script.reject_end() {
            session.outcome = SessionOutcome::Rejected;
            self.by_subject.remove(&session.subject);
            return Ok(Advance::Rejected);
        }
        if step_index == script.len() {
            session.outcome = SessionOutcome::Completed;
            self.by_subject.remove(&session.subject);
            return Ok(Advance::Completed);
        }
        session.expected_step = step_index + 1;
        let next = script
            .step(session.expected_step)
            .expect("not past the end");
        Ok(Advance::Scheduled(NextStep {
            step_index: next.index,
            latency: next.latency,
        }))
    }

    /// Abort a pending session (its subject disappeared mid-flight).
    pub fn fail(&mut self, id: SessionId) -> Result<(), HandoverError> {
        let session = self
            .sessions
            .get_mut(&id)
            .ok_or(HandoverError::UnknownSession(id))?;
        if session.outcome != SessionOutcome::Pending {
            return Err(HandoverError::TerminalSession);
        }
        session.outcome = SessionOutcome::Failed;
        self.by_subject.remove(&session.subject);
        Ok(())
    }

    /// Sum of executed step latencies; defined once the session is terminal.
    pub fn total_latency(&self, id: SessionId) -> Result<SimDuration, HandoverError> {
        let session = self.session(id)?;
        if session.outcome == SessionOutcome::Pending {
            return Err(HandoverError::StillPending);
        }
        Ok(session.latency_total)
    }

    /// Drop a terminal session from the registry.
    pub fn remove(&mut self, id: SessionId) -> Option<HandoverSession> {
        if let Some(s) = self.sessions.get(&id) {
            if s.outcome == SessionOutcome::Pending {
                return None;
            }
        }
        self.sessions.remove(&id)
    }
}

/// Participants map covering every role, for tests and trace generation.
pub fn full_participants() -> BTreeMap<Role, NodeId> {
    [
        Role::Ms,
        Role::Fap,
        Role::OutsideTransceiver,
        Role::ServingBs,
        Role::TargetBs,
        Role::SourceRnc,
        Role::TargetRnc,
        Role::CoreNetwork,
    ]
    .into_iter()
    .enumerate()
    .map(|(i, r)| (r, i as NodeId))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(n: u64) -> SimDuration {
        SimDuration::from_micros(n * 1_000)
    }

    fn engine() -> HandoverEngine {
        HandoverEngine::new(default_scripts(ms(5)))
    }

    /// Drive a session to its terminal state, supplying `decision` at the
    /// CAC point, stepping time by each step's latency.
    fn run_to_end(
        engine: &mut HandoverEngine,
        kind: HandoverKind,
        subject: SubjectId,
        decision: CacDecision,
    ) -> (SessionId, Advance, SimTime) {
        let (id, mut next) = engine
            .start_handover(kind, subject, full_participants(), SimTime::ZERO)
            .unwrap();
        let mut now = SimTime::ZERO;
        loop {
            now += next.latency;
            let supplied = engine
                .decision_required(id, next.step_index)
                .unwrap()
                .then_some(decision);
            match engine.advance(id, next.step_index, now, supplied).unwrap() {
                Advance::Scheduled(n) => next = n,
                terminal => return (id, terminal, now),
            }
        }
    }

    #[test]
    fn script_lengths_match_the_procedures() {
        let scripts = default_scripts(ms(5));
        assert_eq!(scripts.f2m.len(), 22);
        assert_eq!(scripts.m2f.len(), 27);
        assert_eq!(scripts.bh_m2m.len(), 31);
    }

    #[test]
    fn scripts_are_gap_free_and_carry_one_cac_point() {
        let scripts = default_scripts(ms(5));
        for script in [&scripts.f2m, &scripts.m2f, &scripts.bh_m2m] {
            for (i, step) in script.steps().iter().enumerate() {
                assert_eq!(step.index, i + 1);
            }
            let cac = script.cac_step().expect("every procedure has a CAC point");
            assert!(cac < script.reject_end());
            assert!(script.reject_end() <= script.len());
        }
        assert_eq!(scripts.f2m.cac_step(), Some(9));
        assert_eq!(scripts.m2f.cac_step(), Some(9));
        assert_eq!(scripts.bh_m2m.cac_step(), Some(11));
    }

    #[test]
    fn f2m_runs_its_full_script_on_admit() {
        let mut e = engine();
        let (id, terminal, end) =
            run_to_end(&mut e, HandoverKind::FemtoToMacro, 1, CacDecision::Admit);
        assert_eq!(terminal, Advance::Completed);
        let session = e.session(id).unwrap();
        assert_eq!(session.outcome(), SessionOutcome::Completed);
        assert_eq!(session.trace().len(), 22);
        assert_eq!(session.trace()[0].message, "Measurement Report");
        assert_eq!(session.trace()[0].from, Role::Ms);
        assert_eq!(session.trace()[0].to, Role::Fap);
        // Gap-free, strictly increasing step indices from 1.
        for (i, entry) in session.trace().iter().enumerate() {
            assert_eq!(entry.step_index, i + 1);
        }
        assert_eq!(e.total_latency(id).unwrap(), ms(110));
        assert_eq!(end.as_millis_f64(), 110.0);
    }

    #[test]
    fn m2f_reject_stops_after_response_step_11() {
        let mut e = engine();
        let (id, terminal, _) =
            run_to_end(&mut e, HandoverKind::MacroToFemto, 2, CacDecision::Reject);
        assert_eq!(terminal, Advance::Rejected);
        let session = e.session(id).unwrap();
        assert_eq!(session.outcome(), SessionOutcome::Rejected);
        assert_eq!(
            session.trace().len(),
            11,
            "reject path executes the response exchange"
        );
        assert_eq!(e.total_latency(id).unwrap(), ms(55));
    }

    #[test]
    fn bh_reject_stops_after_response_step_16() {
        let mut e = engine();
        let (id, terminal, _) = run_to_end(
            &mut e,
            HandoverKind::BackhaulMacroToMacro,
            3,
            CacDecision::Reject,
        );
        assert_eq!(terminal, Advance::Rejected);
        assert_eq!(e.session(id).unwrap().trace().len(), 16);
    }

    #[test]
    fn out_of_order_delivery_is_a_protocol_error() {
        let mut e = engine();
        let (id, next) = e
            .start_handover(
                HandoverKind::FemtoToMacro,
                7,
                full_participants(),
                SimTime::ZERO,
            )
            .unwrap();
        e.advance(id, next.step_index, SimTime::ZERO + next.latency, None)
            .unwrap();
        e.advance(id, 2, SimTime::from_micros(10_000), None)
            .unwrap();
        // Step 3 is expected; delivering step 5 fails with both indices.
        let err = e
            .advance(id, 5, SimTime::from_micros(15_000), None)
            .unwrap_err();
        assert_eq!(
            err,
            HandoverError::OutOfOrder {
                expected: 3,
                received: 5
            }
        );
    }

    #[test]
    fn duplicate_subject_rejected() {
        let mut e = engine();
        e.start_handover(
            HandoverKind::BackhaulMacroToMacro,
            9,
            full_participants(),
            SimTime::ZERO,
        )
        .unwrap();
        let err = e
            .start_handover(
                HandoverKind::BackhaulMacroToMacro,
                9,
                full_participants(),
                SimTime::ZERO,
            )
            .unwrap_err();
        assert_eq!(err, HandoverError::DuplicateSession(9));
    }

    #[test]
    fn missing_role_is_a_config_error() {
        let mut e = engine();
        let mut participants = full_participants();
        participants.remove(&Role::Fap);
        let err = e
            .start_handover(HandoverKind::MacroToFemto, 4, participants, SimTime::ZERO)
            .unwrap_err();
        assert_eq!(err, HandoverError::MissingRole("FAP"));
    }

    #[test]
    fn decision_point_requires_a_decision() {
        let mut e = engine();
        let (id, mut next) = e
            .start_handover(
                HandoverKind::MacroToFemto,
                5,
                full_participants(),
                SimTime::ZERO,
            )
            .unwrap();
        for _ in 0..8 {
            match e.advance(id, next.step_index, SimTime::ZERO, None).unwrap() {
                Advance::Scheduled(n) => next = n,
                _ => panic!("still mid-script"),
            }
        }
        assert_eq!(next.step_index, 9);
        assert!(e.decision_required(id, 9).unwrap());
        let err = e.advance(id, 9, SimTime::ZERO, None).unwrap_err();
        assert_eq!(err, HandoverError::MissingDecision(9));
    }

    #[test]
    fn subject_frees_at_terminal_and_latency_needs_terminal() {
        let mut e = engine();
        let (id, next) = e
            .start_handover(
                HandoverKind::FemtoToMacro,
                11,
                full_participants(),
                SimTime::ZERO,
            )
            .unwrap();
        assert!(e.subject_busy(11));
        assert_eq!(
            e.total_latency(id).unwrap_err(),
            HandoverError::StillPending
        );
        let _ = next;
        e.fail(id).unwrap();
        assert!(!e.subject_busy(11));
        assert_eq!(e.session(id).unwrap().outcome(), SessionOutcome::Failed);
        assert_eq!(e.total_latency(id).unwrap(), SimDuration::ZERO);
        // A failed session cannot advance: exactly one terminal transition.
        assert_eq!(
            e.advance(id, 1, SimTime::ZERO, None).unwrap_err(),
            HandoverError::TerminalSession
        );
        assert_eq!(e.fail(id).unwrap_err(), HandoverError::TerminalSession);
    }

    #[test]
    fn zero_latency_script_has_zero_total() {
        let mut e = HandoverEngine::new(default_scripts(SimDuration::ZERO));
        let (id, terminal, _) =
            run_to_end(&mut e, HandoverKind::FemtoToMacro, 1, CacDecision::Admit);
        assert_eq!(terminal, Advance::Completed);
        assert_eq!(e.total_latency(id).unwrap(), SimDuration::ZERO);
    }

    #[test]
    fn per_step_latency_override_applies() {
        let mut scripts = default_scripts(ms(5));
        assert!(scripts.f2m.set_latency(3, ms(20)));
        assert!(!scripts.f2m.set_latency(23, ms(20)));
        let mut e = HandoverEngine::new(scripts);
        let (id, terminal, _) =
            run_to_end(&mut e, HandoverKind::FemtoToMacro, 1, CacDecision::Admit);
        assert_eq!(terminal, Advance::Completed);
        assert_eq!(e.total_latency(id).unwrap(), ms(110 - 5 + 20));
    }

    #[test]
    fn completed_trace_equals_script_message_sequence() {
        let mut e = engine();
        for (kind, subject) in [
            (HandoverKind::FemtoToMacro, 20),
            (HandoverKind::MacroToFemto, 21),
            (HandoverKind::BackhaulMacroToMacro, 22),
        ] {
            let (id, terminal, _) = run_to_end(&mut e, kind, subject, CacDecision::Admit);
            assert_eq!(terminal, Advance::Completed);
            let session = e.session(id).unwrap();
            let script = e.scripts().get(kind);
            let traced: Vec<&str> = session.trace().iter().map(|t| t.message).collect();
            let scripted: Vec<&str> = script.steps().iter().map(|s| s.message).collect();
            assert_eq!(traced, scripted);
        }
    }
}
