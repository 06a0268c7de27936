//! RF propagation models and the handover trigger rule.
//!
//! The macrocell model is a Hata-style urban formula with an MS antenna
//! height correction; the femtocell model is an indoor distance-power-loss
//! formula with a quadratic wall term. Both are pure functions of their
//! parameter sets. The leading macrocell constant is configurable because
//! published variants of the formula differ; the default is 36.55.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("hysteresis must be nonnegative, got {0}")]
    NegativeHysteresis(f64),
}

/// Default leading constant of the macrocell path-loss formula.
pub const DEFAULT_MACRO_CONSTANT_DB: f64 = 36.55;

/// Parameters of the macrocell path-loss model.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroPathParams {
    /// Carrier frequency, MHz.
    pub f_c_mhz: f64,
    /// Macrocell BS antenna height, meters.
    pub bs_height_m: f64,
    /// MS antenna height, meters.
    pub ms_height_m: f64,
    /// BS-MS distance, kilometers.
    pub distance_km: f64,
    /// Shadowing term, dB (applied additively).
    pub shadowing_db: f64,
    /// Penetration loss, dB.
    pub penetration_db: f64,
    /// Leading constant of the formula, dB.
    pub constant_db: f64,
}

impl MacroPathParams {
    pub fn new(f_c_mhz: f64, bs_height_m: f64, ms_height_m: f64, distance_km: f64) -> Self {
        MacroPathParams {
            f_c_mhz,
            bs_height_m,
            ms_height_m,
            distance_km,
            shadowing_db: 0.0,
            penetration_db: 0.0,
            constant_db: DEFAULT_MACRO_CONSTANT_DB,
        }
    }

    fn validate(&self) -> Result<(), RadioError> {
        require_positive("carrier frequency", self.f_c_mhz)?;
        require_positive("BS antenna height", self.bs_height_m)?;
        require_positive("MS antenna height", self.ms_height_m)?;
        require_positive("BS-MS distance", self.distance_km)
    }
}

/// Parameters of the femtocell (indoor) path-loss model.
#[derive(Debug, Clone, PartialEq)]
pub struct FemtoPathParams {
    /// Carrier frequency, MHz.
    pub f_c_mhz: f64,
    /// Distance power-loss coefficient, dB/decade.
    pub power_loss_coeff: f64,
    /// FAP-MS distance, meters.
    pub distance_m: f64,
    /// Number of walls between FAP and MS.
    pub walls: u32,
}

impl FemtoPathParams {
    fn validate(&self) -> Result<(), RadioError> {
        require_positive("carrier frequency", self.f_c_mhz)?;
        require_positive("power-loss coefficient", self.power_loss_coeff)?;
        require_positive("FAP-MS distance", self.distance_m)
    }
}

fn require_positive(name: &'static str, value: f64) -> Result<(), RadioError> {
    if value <= 0.0 || !value.is_finite() {
        return Err(RadioError::NonPositive { name, value });
    }
    Ok(())
}

/// MS antenna height correction a(h_m), dB:
/// `1.1 (log10 f - 0.7) h_m - (1.56 log10 f - 0.8)`.
pub fn ms_height_correction(f_c_mhz: f64, ms_height_m: f64) -> Result<f64, RadioError> {
    require_positive("carrier frequency", f_c_mhz)?;
    require_positive("MS antenna height", ms_height_m)?;
    let lf = f_c_mhz.log10();
    Ok(1.1 * (lf - 0.7) * ms_height_m - (1.56 * lf - 0.8))
}

/// Macrocell path loss, dB:
/// `K + 26.16 log10 f - 3.82 log10 h_b - a(h_m)
///    + [44.9 - 6.55 log10 h_b] log10 d + L_sh + L_pen`.
pub fn macro_path_loss(p: &MacroPathParams) -> Result<f64, RadioError> {
    p.validate()?;
    let a = ms_height_correction(p.f_c_mhz, p.ms_height_m)?;
    let lhb = p.bs_height_m.log10();
    Ok(p.constant_db + 26.16 * p.f_c_mhz.log10() - 3.82 * lhb - a
        + (44.9 - 6.55 * lhb) * p.distance_km.log10()
        + p.shadowing_db
        + p.penetration_db)
}

/// Femtocell path loss, dB: `20 log10 f + N log10 d1 + 4 n^2 - 28`.
pub fn femto_path_loss(p: &FemtoPathParams) -> Result<f64, RadioError> {
    p.validate()?;
    let walls = p.walls as f64;
    Ok(
        20.0 * p.f_c_mhz.log10() + p.power_loss_coeff * p.distance_m.log10() + 4.0 * walls * walls
            - 28.0,
    )
}

/// Received power from a transmit power and a path loss.
pub fn received_power(tx_power_dbm: f64, loss_db: f64) -> f64 {
    tx_power_dbm - loss_db
}

/// Outcome of the handover trigger rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerDecision {
    Stay,
    Handover,
}

/// A3-style margin rule: hand over iff the serving signal fell below the
/// threshold and the best neighbor clears it by at least the hysteresis.
pub fn trigger_check(
    serving_rx_dbm: f64,
    best_neighbor_rx_dbm: f64,
    hysteresis_db: f64,
    threshold_dbm: f64,
) -> Result<TriggerDecision, RadioError> {
    if hysteresis_db < 0.0 {
        return Err(RadioError::NegativeHysteresis(hysteresis_db));
    }
    if serving_rx_dbm < threshold_dbm && best_neighbor_rx_dbm > serving_rx_dbm + hysteresis_db {
        Ok(TriggerDecision::Handover)
    } else {
        Ok(TriggerDecision::Stay)
    }
}
