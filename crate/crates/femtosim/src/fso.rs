//! Free-space optical backhaul: LOS channel model and AP link switching.
//!
//! The channel side is a Lambertian LOS budget: emitter order from the
//! half-power angle, concentrator gain inside the receiver field of view,
//! inverse-square spreading over the hop distance. The switching side is a
//! six-message signaling sequence between the vehicle's optical transceiver
//! and the target AP; its default latency profile sums to exactly 136 ms.
//! While a switch is in flight the backhaul is marked in-switch and traffic
//! is buffered, never dropped.

use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

use crate::time::{SimDuration, SimTime};

#[derive(Debug, Error, PartialEq)]
pub enum FsoError {
    #[error("{name} out of range: {value}")]
    BadParameter { name: &'static str, value: f64 },
    #[error("incidence angle must be nonnegative, got {0}")]
    NegativeIncidence(f64),
    #[error("field of view is zero; concentrator gain undefined")]
    ZeroFieldOfView,
    #[error("switch target equals the serving AP ({0})")]
    SameAp(usize),
    #[error("a link switch is already in progress (target ap {0})")]
    SwitchInProgress(usize),
    #[error("target gain {target:.3e} does not clear serving gain {serving:.3e}")]
    InsufficientGain { serving: f64, target: f64 },
    #[error("switch step {got} delivered, expected {expected}")]
    UnexpectedStep { expected: usize, got: usize },
}

/// Geometry and optics of one FSO hop.
#[derive(Debug, Clone, PartialEq)]
pub struct FsoLinkConfig {
    /// Transmitted optical power, watts.
    pub tx_power_w: f64,
    /// Photo-detector area, m^2.
    pub detector_area_m2: f64,
    /// Transmitter-receiver distance, meters.
    pub distance_m: f64,
    /// Angle of irradiance, radians.
    pub irradiance_angle_rad: f64,
    /// Angle of incidence, radians.
    pub incidence_angle_rad: f64,
    /// Receiver field of view, radians.
    pub fov_rad: f64,
    /// Optical filter transmission coefficient, in [0, 1].
    pub filter_transmission: f64,
    /// Concentrator internal refractive index, >= 1.
    pub refractive_index: f64,
    /// Transmitter half-power angle, radians in (0, pi/2).
    pub half_power_angle_rad: f64,
}

impl FsoLinkConfig {
    fn validate(&self) -> Result<(), FsoError> {
        let check = |name, value, ok: bool| {
            if ok && f64::is_finite(value) {
                Ok(())
            } else {
                Err(FsoError::BadParameter { name, value })
            }
        };
        check("tx power", self.tx_power_w, self.tx_power_w >= 0.0)?;
        check(
            "detector area",
            self.detector_area_m2,
            self.detector_area_m2 > 0.0,
        )?;
        check("distance", self.distance_m, self.distance_m > 0.0)?;
        check(
            "irradiance angle",
            self.irradiance_angle_rad,
            (0.0..=FRAC_PI_2).contains(&self.irradiance_angle_rad),
        )?;
        check(
            "field of view",
            self.fov_rad,
            (0.0..=FRAC_PI_2).contains(&self.fov_rad),
        )?;
        check(
            "filter transmission",
            self.filter_transmission,
            (0.0..=1.0).contains(&self.filter_transmission),
        )?;
        check(
            "refractive index",
            self.refractive_index,
            self.refractive_index >= 1.0,
        )?;
        check(
            "half-power angle",
            self.half_power_angle_rad,
            self.half_power_angle_rad > 0.0 && self.half_power_angle_rad < FRAC_PI_2,
        )
    }
}

/// Order of Lambertian emission from the transmitter half-power angle:
/// `tau = -ln 2 / ln(cos(phi_half))`.
pub fn lambertian_order(half_power_angle_rad: f64) -> Result<f64, FsoError> {
    if !(half_power_angle_rad > 0.0 && half_power_angle_rad < FRAC_PI_2) {
        return Err(FsoError::BadParameter {
            name: "half-power angle",
            value: half_power_angle_rad,
        });
    }
    lambertian_order_from_cos(half_power_angle_rad.cos())
}

/// Core of `lambertian_order`, in the cosine domain. A half-power cosine of
/// exactly 0.5 yields exactly 1: `ln(0.5) == -LN_2` bit-for-bit, so the ratio
/// is an exact IEEE division of a value by itself.
pub fn lambertian_order_from_cos(cos_phi_half: f64) -> Result<f64, FsoError> {
    if !(cos_phi_half > 0.0 && cos_phi_half < 1.0) {
        return Err(FsoError::BadParameter {
            name: "half-power cosine",
            value: cos_phi_half,
        });
    }
    Ok(-std::f64::consts::LN_2 / cos_phi_half.ln())
}

/// Optical concentrator gain: `v^2 / sin^2(psi_c)` inside the field of view,
/// zero elsewhere.
pub fn concentrator_gain(
    incidence_rad: f64,
    fov_rad: f64,
    refractive_index: f64,
) -> Result<f64, FsoError> {
    if incidence_rad < 0.0 {
        return Err(FsoError::NegativeIncidence(incidence_rad));
    }
    if incidence_rad > fov_rad {
        return Ok(0.0);
    }
    let s = fov_rad.sin();
    if s == 0.0 {
        return Err(FsoError::ZeroFieldOfView);
    }
    Ok(refractive_index * refractive_index / (s * s))
}

/// LOS channel DC gain:
/// `(tau+1) A / (2 pi D^2) * cos^tau(phi) * T_s * g(psi) * cos(psi)`
/// inside the field of view, zero elsewhere.
pub fn los_channel_gain(cfg: &FsoLinkConfig) -> Result<f64, FsoError> {
    cfg.validate()?;
    if cfg.incidence_angle_rad < 0.0 {
        return Err(FsoError::NegativeIncidence(cfg.incidence_angle_rad));
    }
    if cfg.incidence_angle_rad > cfg.fov_rad {
        return Ok(0.0);
    }
    let tau = lambertian_order(cfg.half_power_angle_rad)?;
    let g = concentrator_gain(cfg.incidence_angle_rad, cfg.fov_rad, cfg.refractive_index)?;
    let spreading =
        (tau + 1.0) * cfg.detector_area_m2 / (2.0 * PI * cfg.distance_m * cfg.distance_m);
    Ok(spreading
        * cfg.irradiance_angle_rad.cos().powf(tau)
        * cfg.filter_transmission
        * g
        * cfg.incidence_angle_rad.cos())
}

/// Received optical power `P_r = H * P_t`.
pub fn received_optical_power(tx_power_w: f64, channel_gain: f64) -> f64 {
    channel_gain * tx_power_w
}

/// One signaling message of the link-switch sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FsoSwitchStep {
    pub message: String,
    pub latency: SimDuration,
}

/// Per-message latency profile of the link-switch signaling sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FsoSwitchProfile {
    steps: Vec<FsoSwitchStep>,
}

/// The six messages of the switch sequence, in order.
pub const SWITCH_MESSAGES: [&str; 6] = [
    "Beacon Measurement",
    "Switch Request",
    "Switch Response",
    "Link Setup",
    "Synchronization",
    "Switch Complete",
];

impl FsoSwitchProfile {
    /// Default profile: the 136 ms total split evenly across the six
    /// messages at microsecond resolution, remainder on the earliest steps,
    /// so the sum is exactly 136 ms.
    pub fn default_profile() -> Self {
        Self::even_split(SimDuration::from_micros(136_000))
    }

    /// Split `total` evenly over the six standard messages, exact sum.
    pub fn even_split(total: SimDuration) -> Self {
        let n = SWITCH_MESSAGES.len() as u64;
        let each = total.as_micros() / n;
        let remainder = total.as_micros() % n;
        let steps = SWITCH_MESSAGES
            .iter()
            .enumerate()
            .map(|(i, m)| FsoSwitchStep {
                message: (*m).to_string(),
                latency: SimDuration::from_micros(each + u64::from((i as u64) < remainder)),
            })
            .collect();
        FsoSwitchProfile { steps }
    }

    /// The six standard messages with explicit latencies.
    pub fn with_latencies(latencies: [SimDuration; 6]) -> Self {
        let steps = SWITCH_MESSAGES
            .iter()
            .zip(latencies)
            .map(|(m, latency)| FsoSwitchStep {
                message: (*m).to_string(),
                latency,
            })
            .collect();
        FsoSwitchProfile { steps }
    }

    /// A custom sequence; intended for experiments with different signaling.
    pub fn custom(steps: Vec<FsoSwitchStep>) -> Self {
        FsoSwitchProfile { steps }
    }

    pub fn steps(&self) -> &[FsoSwitchStep] {
        &self.steps
    }

    pub fn total(&self) -> SimDuration {
        self.steps
            .iter()
            .fold(SimDuration::ZERO, |acc, s| acc + s.latency)
    }
}

impl Default for FsoSwitchProfile {
    fn default() -> Self {
        Self::default_profile()
    }
}

/// Margin rule for starting a switch: the target gain must exceed the
/// serving gain scaled by `min_gain_ratio`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalSwitchGuard {
    pub min_gain_ratio: f64,
}

impl Default for OpticalSwitchGuard {
    fn default() -> Self {
        OpticalSwitchGuard {
            min_gain_ratio: 1.0,
        }
    }
}

/// One delivered message of an executed switch.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchTraceEntry {
    pub step_index: usize,
    pub message: String,
    /// Offset from the start of the switch.
    pub at: SimDuration,
}

/// Result of a completed switch.
#[derive(Debug, Clone, PartialEq)]
pub struct FsoSwitchOutcome {
    pub from_ap: usize,
    pub to_ap: usize,
    pub started_at: SimTime,
    /// Offset from start at which the final message landed.
    pub completed_at: SimDuration,
    pub trace: Vec<SwitchTraceEntry>,
}

/// Progress report from delivering one switch message.
#[derive(Debug)]
pub enum SwitchProgress {
    InProgress,
    Completed(FsoSwitchOutcome),
}

#[derive(Debug)]
struct InFlightSwitch {
    target_ap: usize,
    started_at: SimTime,
    next_step: usize,
    steps: Vec<FsoSwitchStep>,
    trace: Vec<SwitchTraceEntry>,
}

/// Serving-AP attachment of one optical transceiver, with at most one switch
/// in flight at a time.
#[derive(Debug)]
pub struct LinkSwitchState {
    serving_ap: usize,
    in_flight: Option<InFlightSwitch>,
}

impl LinkSwitchState {
    pub fn new(serving_ap: usize) -> Self {
        LinkSwitchState {
            serving_ap,
            in_flight: None,
        }
    }

    pub fn serving_ap(&self) -> usize {
        self.serving_ap
    }

    /// True while a switch is signaling; traffic is buffered during this.
    pub fn in_switch(&self) -> bool {
        self.in_flight.is_some()
    }

    /// Validate preconditions and open a switch toward `target_ap`. Returns
    /// the (step_index, offset-from-now) schedule of every message for the
    /// caller to enqueue; offsets are cumulative profile latencies.
    pub fn begin(
        &mut self,
        now: SimTime,
        target_ap: usize,
        serving_gain: f64,
        target_gain: f64,
        guard: OpticalSwitchGuard,
        profile: &FsoSwitchProfile,
    ) -> Result<Vec<(usize, SimDuration)>, FsoError> {
        if target_ap == self.serving_ap {
            return Err(FsoError::SameAp(target_ap));
        }
        if let Some(in_flight) = &self.in_flight {
            return Err(FsoError::SwitchInProgress(in_flight.target_ap));
        }
        // Incomparable (NaN) gains also refuse the switch.
        let required = serving_gain * guard.min_gain_ratio;
        if target_gain
            .partial_cmp(&required)
            .is_none_or(|o| o == std::cmp::Ordering::Less)
        {
            return Err(FsoError::InsufficientGain {
                serving: serving_gain,
                target: target_gain,
            });
        }
        let mut offset = SimDuration::ZERO;
        let mut schedule = Vec::with_capacity(profile.steps().len());
        for (i, step) in profile.steps().iter().enumerate() {
            offset += step.latency;
            schedule.push((i + 1, offset));
        }
        self.in_flight = Some(InFlightSwitch {
            target_ap,
            started_at: now,
            next_step: 1,
            steps: profile.steps().to_vec(),
            trace: Vec::with_capacity(profile.steps().len()),
        });
        Ok(schedule)
    }

    /// Deliver message `step_index` at simulation time `now`. On the final
    /// message the attachment moves to the target AP and the outcome, with
    /// the full ordered trace, is returned.
    pub fn deliver(&mut self, now: SimTime, step_index: usize) -> Result<SwitchProgress, FsoError> {
        let in_flight = self.in_flight.as_mut().ok_or(FsoError::UnexpectedStep {
            expected: 0,
            got: step_index,
        })?;
        if step_index != in_flight.next_step {
            return Err(FsoError::UnexpectedStep {
                expected: in_flight.next_step,
                got: step_index,
            });
        }
        in_flight.trace.push(SwitchTraceEntry {
            step_index,
            message: in_flight.steps[step_index - 1].message.clone(),
            at: now.since(in_flight.started_at),
        });
        in_flight.next_step += 1;
        if step_index < in_flight.steps.len() {
            return Ok(SwitchProgress::InProgress);
        }
        let done = self.in_flight.take().expect("checked above");
        let outcome = FsoSwitchOutcome {
            from_ap: self.serving_ap,
            to_ap: done.target_ap,
            started_at: done.started_at,
            completed_at: now.since(done.started_at),
            trace: done.trace,
        };
        self.serving_ap = outcome.to_ap;
        Ok(SwitchProgress::Completed(outcome))
    }
}

/// Run one switch start-to-finish on a private event queue. Used by tests
/// and the trace exporter; the full simulation drives the same state machine
/// through its own queue.
pub fn execute_link_switch(
    serving_ap: usize,
    target_ap: usize,
    serving_gain: f64,
    target_gain: f64,
    guard: OpticalSwitchGuard,
    profile: &FsoSwitchProfile,
) -> Result<FsoSwitchOutcome, FsoError> {
    use crate::kernel::RunContext;

    let mut state = LinkSwitchState::new(serving_ap);
    let schedule = state.begin(
        SimTime::ZERO,
        target_ap,
        serving_gain,
        target_gain,
        guard,
        profile,
    )?;
    let mut ctx: RunContext<usize> = RunContext::new(0);
    for (step, offset) in schedule {
        ctx.schedule(offset, step);
    }
    let mut outcome = None;
    let mut delivery_err = None;
    ctx.run_until(SimTime::from_micros(u64::MAX), |ctx, step| {
        match state.deliver(ctx.clock(), step) {
            Ok(SwitchProgress::Completed(done)) => outcome = Some(done),
            Ok(SwitchProgress::InProgress) => {}
            Err(e) => delivery_err = Some(e),
        }
        Ok::<(), std::convert::Infallible>(())
    })
    .expect("handler is infallible");
    if let Some(e) = delivery_err {
        return Err(e);
    }
    Ok(outcome.expect("switch completes after the final message"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> FsoLinkConfig {
        FsoLinkConfig {
            tx_power_w: 1.0,
            detector_area_m2: 1e-4,
            distance_m: 10.0,
            irradiance_angle_rad: 0.0,
            incidence_angle_rad: 0.0,
            fov_rad: FRAC_PI_2,
            filter_transmission: 1.0,
            refractive_index: 1.0,
            half_power_angle_rad: 60f64.to_radians(),
        }
    }

    #[test]
    fn lambertian_order_hand_values() {
        // cos 60 deg = 1/2 makes the log ratio exactly one.
        let tau = lambertian_order_from_cos(0.5).unwrap();
        assert_eq!(tau, 1.0);
        // The radian route is off by at most the rounding of the 60-degree
        // literal itself (one ulp in the cosine).
        let tau_rad = lambertian_order(60f64.to_radians()).unwrap();
        assert!((tau_rad - 1.0).abs() < 1e-14);

        let tau30 = lambertian_order(30f64.to_radians()).unwrap();
        assert!((tau30 - 4.8187).abs() < 1e-3, "tau(30 deg) = {tau30}");

        // Narrow emitters are sharply directional.
        assert!(lambertian_order(1f64.to_radians()).unwrap() > 1000.0);

        assert!(lambertian_order(0.0).is_err());
        assert!(lambertian_order(FRAC_PI_2).is_err());
    }

    #[test]
    fn lambertian_order_defines_half_power() {
        // By definition, cos(phi_half)^tau = 1/2.
        for deg in [10.0f64, 25.0, 40.0, 60.0, 80.0] {
            let phi = deg.to_radians();
            let tau = lambertian_order(phi).unwrap();
            assert!((phi.cos().powf(tau) - 0.5).abs() < 1e-12, "phi = {deg} deg");
        }
    }

    #[test]
    fn concentrator_gain_hand_values() {
        let g = concentrator_gain(0.0, FRAC_PI_2, 1.0).unwrap();
        assert_eq!(g, 1.0);

        let g = concentrator_gain(10f64.to_radians(), 60f64.to_radians(), 1.5).unwrap();
        assert!((g - 3.0).abs() < 1e-12, "2.25 / 0.75 = {g}");

        let g = concentrator_gain(70f64.to_radians(), 60f64.to_radians(), 1.5).unwrap();
        assert_eq!(g, 0.0);

        assert_eq!(
            concentrator_gain(0.0, 0.0, 1.5),
            Err(FsoError::ZeroFieldOfView)
        );
        assert!(matches!(
            concentrator_gain(-0.1, FRAC_PI_2, 1.5),
            Err(FsoError::NegativeIncidence(_))
        ));
    }

    #[test]
    fn los_gain_hand_value() {
        let cfg = base_config();
        let h = los_channel_gain(&cfg).unwrap();
        // tau = 1: 2 * 1e-4 / (2 pi 100)
        let expected = 2.0 * 1e-4 / (2.0 * PI * 100.0);
        assert!((h - expected).abs() < 1e-18);
        assert!((h - 3.183e-7).abs() < 1e-10);
    }

    #[test]
    fn los_gain_quarter_rule_is_exact() {
        let near = los_channel_gain(&base_config()).unwrap();
        let far = los_channel_gain(&FsoLinkConfig {
            distance_m: 20.0,
            ..base_config()
        })
        .unwrap();
        assert_eq!(far, near / 4.0, "doubling D divides H by exactly four");
    }

    #[test]
    fn los_gain_out_of_fov_is_zero() {
        let cfg = FsoLinkConfig {
            fov_rad: 60f64.to_radians(),
            incidence_angle_rad: 60f64.to_radians() + 1e-9,
            ..base_config()
        };
        assert_eq!(los_channel_gain(&cfg).unwrap(), 0.0);
    }

    #[test]
    fn los_gain_scales_linearly_in_area() {
        let one = los_channel_gain(&base_config()).unwrap();
        let double = los_channel_gain(&FsoLinkConfig {
            detector_area_m2: 2e-4,
            ..base_config()
        })
        .unwrap();
        assert_eq!(double, one * 2.0);
    }

    #[test]
    fn received_power_is_product() {
        assert_eq!(received_optical_power(1.0, 3.183e-7), 3.183e-7);
        assert_eq!(received_optical_power(5.0, 0.0), 0.0);
        assert_eq!(received_optical_power(0.0, 0.3), 0.0);
    }

    #[test]
    fn default_profile_sums_to_exactly_136_ms() {
        let profile = FsoSwitchProfile::default_profile();
        assert_eq!(profile.steps().len(), 6);
        assert_eq!(profile.total().as_micros(), 136_000);
        assert_eq!(profile.total().as_millis_f64(), 136.0);
        for step in profile.steps() {
            assert!(step.latency.as_micros() == 22_667 || step.latency.as_micros() == 22_666);
        }
    }

    #[test]
    fn default_switch_completes_at_136_ms() {
        let outcome = execute_link_switch(
            0,
            1,
            0.5e-7,
            1.0e-7,
            OpticalSwitchGuard::default(),
            &FsoSwitchProfile::default_profile(),
        )
        .unwrap();
        assert_eq!(outcome.completed_at.as_millis_f64(), 136.0);
        assert_eq!(outcome.trace.len(), 6);
        let names: Vec<&str> = outcome.trace.iter().map(|t| t.message.as_str()).collect();
        assert_eq!(names, SWITCH_MESSAGES.to_vec());
    }

    #[test]
    fn all_zero_profile_completes_immediately_with_full_trace() {
        let profile = FsoSwitchProfile::even_split(SimDuration::ZERO);
        let outcome =
            execute_link_switch(0, 1, 0.0, 1.0, OpticalSwitchGuard::default(), &profile).unwrap();
        assert_eq!(outcome.completed_at, SimDuration::ZERO);
        assert_eq!(outcome.trace.len(), 6);
        for (i, entry) in outcome.trace.iter().enumerate() {
            assert_eq!(entry.step_index, i + 1, "messages stay ordered");
        }
    }

    #[test]
    fn custom_profile_sums_latencies() {
        let steps = (0..5)
            .map(|i| FsoSwitchStep {
                message: format!("step {}", i + 1),
                latency: SimDuration::from_millis_f64(10.0).unwrap(),
            })
            .collect();
        let profile = FsoSwitchProfile::custom(steps);
        let outcome =
            execute_link_switch(2, 3, 0.0, 1.0, OpticalSwitchGuard::default(), &profile).unwrap();
        assert_eq!(outcome.completed_at.as_millis_f64(), 50.0);
        assert_eq!(outcome.trace.len(), 5);
    }

    #[test]
    fn switch_preconditions_enforced() {
        let profile = FsoSwitchProfile::default_profile();
        let guard = OpticalSwitchGuard::default();
        assert_eq!(
            execute_link_switch(1, 1, 0.0, 1.0, guard, &profile),
            Err(FsoError::SameAp(1))
        );
        assert!(matches!(
            execute_link_switch(0, 1, 1.0, 0.5, guard, &profile),
            Err(FsoError::InsufficientGain { .. })
        ));

        let mut state = LinkSwitchState::new(0);
        state
            .begin(SimTime::ZERO, 1, 0.0, 1.0, guard, &profile)
            .unwrap();
        assert!(matches!(
            state.begin(SimTime::ZERO, 2, 0.0, 1.0, guard, &profile),
            Err(FsoError::SwitchInProgress(1))
        ));
    }

    #[test]
    fn attachment_moves_only_on_completion() {
        let profile = FsoSwitchProfile::default_profile();
        let mut state = LinkSwitchState::new(0);
        let schedule = state
            .begin(
                SimTime::ZERO,
                1,
                0.0,
                1.0,
                OpticalSwitchGuard::default(),
                &profile,
            )
            .unwrap();
        assert_eq!(state.serving_ap(), 0);
        assert!(state.in_switch());
        let mut now = SimTime::ZERO;
        for (step, offset) in schedule {
            now = SimTime::ZERO + offset;
            state.deliver(now, step).unwrap();
        }
        assert_eq!(state.serving_ap(), 1);
        assert!(!state.in_switch());
        assert_eq!(now.as_millis_f64(), 136.0);
    }
}
