//! Scenario configuration.
//!
//! Human-readable TOML with nested sections; unknown keys are rejected.
//! The defaults reproduce the reference parameter table: 6 Mbps macrocell
//! capacity, degradable fraction 0.5, adaptive/non-adaptive traffic 1:1,
//! 120 s mean call duration, 540 s mean cell dwell, 10 s reservation
//! threshold.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::cac::{ClassTable, Scheme, TrafficClass};
use crate::fso::FsoSwitchProfile;
use crate::handover::{default_scripts, HandoverKind, Scripts};
use crate::time::SimDuration;
use crate::traffic::{TrackGeometry, WorkloadParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config field {field}: {reason}")]
    Field { field: &'static str, reason: String },
}

fn field_err(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    Proposed,
    Baseline,
}

impl From<SchemeChoice> for Scheme {
    fn from(c: SchemeChoice) -> Scheme {
        match c {
            SchemeChoice::Proposed => Scheme::Proposed,
            SchemeChoice::Baseline => Scheme::Baseline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackhaulKind {
    Macro,
    Fso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerMode {
    /// Handover clocks: dwell expiries drive the experiments.
    Dwell,
    /// Geometric mode: received-power comparison drives backhaul handover.
    Signal,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub stop_time_s: f64,
    pub warmup_s: f64,
    pub scheme: SchemeChoice,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 1,
            stop_time_s: 20_000.0,
            warmup_s: 1_000.0,
            scheme: SchemeChoice::Proposed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellsSection {
    pub count: usize,
    pub capacity_mbps: f64,
    pub cell_length_m: f64,
    /// Bandwidth reservation threshold T, seconds.
    pub reservation_time_s: f64,
}

impl Default for CellsSection {
    fn default() -> Self {
        CellsSection {
            count: 3,
            capacity_mbps: 6.0,
            cell_length_m: 2_000.0,
            reservation_time_s: 10.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassSection {
    pub name: String,
    pub adaptive: bool,
    pub bandwidth_mbps: f64,
    pub degradable_fraction: f64,
    /// Relative draw weight at call arrival.
    pub weight: f64,
}

impl Default for ClassSection {
    fn default() -> Self {
        ClassSection {
            name: "class".to_string(),
            adaptive: false,
            bandwidth_mbps: 1.0,
            degradable_fraction: 0.0,
            weight: 1.0,
        }
    }
}

fn default_classes() -> Vec<ClassSection> {
    vec![
        ClassSection {
            name: "qos-adaptive".to_string(),
            adaptive: true,
            bandwidth_mbps: 2.0,
            degradable_fraction: 0.5,
            weight: 1.0,
        },
        ClassSection {
            name: "non-adaptive".to_string(),
            adaptive: false,
            bandwidth_mbps: 1.0,
            degradable_fraction: 0.0,
            weight: 1.0,
        },
    ]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSection {
    pub lambda_new_per_cell: f64,
    pub mean_holding_s: f64,
    pub mean_dwell_s: f64,
    pub mean_femto_dwell_s: f64,
    pub mean_m2f_opportunity_s: f64,
    pub user_mobility: bool,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        WorkloadSection {
            lambda_new_per_cell: 0.008,
            mean_holding_s: 120.0,
            mean_dwell_s: 540.0,
            mean_femto_dwell_s: 540.0,
            mean_m2f_opportunity_s: 540.0,
            user_mobility: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehiclesSection {
    pub count: usize,
    pub speed_mps: f64,
    pub fap_capacity: usize,
    /// Defaults to the per-cell new-call rate when absent.
    pub lambda_onboard: Option<f64>,
    pub backhaul: BackhaulKind,
}

impl Default for VehiclesSection {
    fn default() -> Self {
        VehiclesSection {
            count: 3,
            speed_mps: 20.0,
            fap_capacity: 4,
            lambda_onboard: None,
            backhaul: BackhaulKind::Macro,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepOverride {
    pub procedure: String,
    pub step: usize,
    pub latency_ms: f64,
}

impl Default for StepOverride {
    fn default() -> Self {
        StepOverride {
            procedure: "f2m".to_string(),
            step: 1,
            latency_ms: 5.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalingSection {
    pub step_latency_ms: f64,
    /// Back-off before retrying a trigger blocked by an in-flight session.
    pub retry_delay_s: f64,
    #[serde(rename = "override")]
    pub overrides: Vec<StepOverride>,
}

impl Default for SignalingSection {
    fn default() -> Self {
        SignalingSection {
            step_latency_ms: 5.0,
            retry_delay_s: 0.2,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioSection {
    pub trigger: TriggerMode,
    pub hysteresis_db: f64,
    pub threshold_dbm: f64,
    pub tx_power_dbm: f64,
    /// Leading constant of the macrocell path-loss formula.
    pub macro_constant_db: f64,
    pub f_c_macro_mhz: f64,
    pub bs_height_m: f64,
    pub ms_height_m: f64,
    pub shadowing_db: f64,
    pub penetration_db: f64,
    pub f_c_femto_mhz: f64,
    pub femto_power_loss_db_per_decade: f64,
    pub fap_distance_m: f64,
    pub fap_walls: u32,
    /// Signal-mode sampling period.
    pub sample_interval_s: f64,
}

impl Default for RadioSection {
    fn default() -> Self {
        RadioSection {
            trigger: TriggerMode::Dwell,
            hysteresis_db: 3.0,
            threshold_dbm: -90.0,
            tx_power_dbm: 43.0,
            macro_constant_db: 36.55,
            f_c_macro_mhz: 2_000.0,
            bs_height_m: 30.0,
            ms_height_m: 1.5,
            shadowing_db: 8.0,
            penetration_db: 10.0,
            f_c_femto_mhz: 2_000.0,
            femto_power_loss_db_per_decade: 30.0,
            fap_distance_m: 2.0,
            fap_walls: 0,
            sample_interval_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchProfileSection {
    pub beacon_ms: f64,
    pub request_ms: f64,
    pub response_ms: f64,
    pub setup_ms: f64,
    pub synchronization_ms: f64,
    pub complete_ms: f64,
}

impl Default for SwitchProfileSection {
    fn default() -> Self {
        // Even split of the 136 ms total at microsecond resolution.
        SwitchProfileSection {
            beacon_ms: 22.667,
            request_ms: 22.667,
            response_ms: 22.667,
            setup_ms: 22.667,
            synchronization_ms: 22.666,
            complete_ms: 22.666,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FsoSection {
    pub ap_spacing_m: f64,
    pub ap_height_m: f64,
    pub tx_power_w: f64,
    pub detector_area_m2: f64,
    pub half_power_angle_deg: f64,
    pub fov_deg: f64,
    pub filter_transmission: f64,
    pub refractive_index: f64,
    /// Switch guard: target gain must reach this multiple of the serving gain.
    pub min_gain_ratio: f64,
    pub switch_profile: SwitchProfileSection,
}

impl Default for FsoSection {
    fn default() -> Self {
        FsoSection {
            ap_spacing_m: 500.0,
            ap_height_m: 5.0,
            tx_power_w: 1.0,
            detector_area_m2: 1e-4,
            half_power_angle_deg: 60.0,
            fov_deg: 60.0,
            filter_transmission: 1.0,
            refractive_index: 1.5,
            min_gain_ratio: 1.0,
            switch_profile: SwitchProfileSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub lambdas: Vec<f64>,
    pub replications: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            lambdas: vec![0.002, 0.004, 0.006, 0.008, 0.011, 0.015, 0.02, 0.03],
            replications: 10,
        }
    }
}

/// The full scenario; every module's parameters in one place.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub run: RunSection,
    pub cells: CellsSection,
    #[serde(rename = "class")]
    pub classes: Vec<ClassSection>,
    pub workload: WorkloadSection,
    pub vehicles: VehiclesSection,
    pub signaling: SignalingSection,
    pub radio: RadioSection,
    pub fso: FsoSection,
    pub sweep: SweepSection,
}

impl ScenarioConfig {
    /// Built-in defaults (the reference parameter table).
    pub fn table_defaults() -> Self {
        ScenarioConfig {
            classes: default_classes(),
            ..ScenarioConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: ScenarioConfig = toml::from_str(text)?;
        if cfg.classes.is_empty() {
            cfg.classes = default_classes();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(field_err(field, format!("must be positive, got {v}")))
            }
        };
        let nonneg = |field: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(field_err(field, format!("must be nonnegative, got {v}")))
            }
        };
        positive("run.stop_time_s", self.run.stop_time_s)?;
        nonneg("run.warmup_s", self.run.warmup_s)?;
        if self.run.warmup_s >= self.run.stop_time_s {
            return Err(field_err(
                "run.warmup_s",
                "warmup must end before stop_time",
            ));
        }
        if self.cells.count == 0 {
            return Err(field_err(
                "cells.count",
                "at least one macrocell is required",
            ));
        }
        positive("cells.capacity_mbps", self.cells.capacity_mbps)?;
        positive("cells.cell_length_m", self.cells.cell_length_m)?;
        nonneg("cells.reservation_time_s", self.cells.reservation_time_s)?;
        if self.classes.is_empty() {
            return Err(field_err("class", "at least one traffic class is required"));
        }
        for c in &self.classes {
            positive("class.bandwidth_mbps", c.bandwidth_mbps)?;
            nonneg("class.weight", c.weight)?;
            if !(0.0..=1.0).contains(&c.degradable_fraction) {
                return Err(field_err("class.degradable_fraction", "must lie in [0, 1]"));
            }
            if !c.adaptive && c.degradable_fraction != 0.0 {
                return Err(field_err(
                    "class.degradable_fraction",
                    "must be zero for non-adaptive classes",
                ));
            }
        }
        if self.classes.iter().map(|c| c.weight).sum::<f64>() <= 0.0 {
            return Err(field_err("class.weight", "weights must not all be zero"));
        }
        nonneg(
            "workload.lambda_new_per_cell",
            self.workload.lambda_new_per_cell,
        )?;
        positive("workload.mean_holding_s", self.workload.mean_holding_s)?;
        positive("workload.mean_dwell_s", self.workload.mean_dwell_s)?;
        positive(
            "workload.mean_femto_dwell_s",
            self.workload.mean_femto_dwell_s,
        )?;
        positive(
            "workload.mean_m2f_opportunity_s",
            self.workload.mean_m2f_opportunity_s,
        )?;
        if self.vehicles.count > 0 {
            positive("vehicles.speed_mps", self.vehicles.speed_mps)?;
        }
        if let Some(l) = self.vehicles.lambda_onboard {
            nonneg("vehicles.lambda_onboard", l)?;
        }
        nonneg("signaling.step_latency_ms", self.signaling.step_latency_ms)?;
        positive("signaling.retry_delay_s", self.signaling.retry_delay_s)?;
        let script_lengths = default_scripts(SimDuration::ZERO);
        for o in &self.signaling.overrides {
            let kind = procedure_kind(&o.procedure).ok_or_else(|| {
                field_err(
                    "signaling.override.procedure",
                    "must be f2m, m2f, or bh_m2m",
                )
            })?;
            nonneg("signaling.override.latency_ms", o.latency_ms)?;
            let len = script_lengths.get(kind).len();
            if o.step == 0 || o.step > len {
                return Err(field_err(
                    "signaling.override.step",
                    format!(
                        "procedure {} has steps 1..={len}, got {}",
                        o.procedure, o.step
                    ),
                ));
            }
        }
        positive("radio.sample_interval_s", self.radio.sample_interval_s)?;
        nonneg("radio.hysteresis_db", self.radio.hysteresis_db)?;
        positive("fso.ap_spacing_m", self.fso.ap_spacing_m)?;
        positive("fso.ap_height_m", self.fso.ap_height_m)?;
        let p = &self.fso.switch_profile;
        for (field, v) in [
            ("fso.switch_profile.beacon_ms", p.beacon_ms),
            ("fso.switch_profile.request_ms", p.request_ms),
            ("fso.switch_profile.response_ms", p.response_ms),
            ("fso.switch_profile.setup_ms", p.setup_ms),
            (
                "fso.switch_profile.synchronization_ms",
                p.synchronization_ms,
            ),
            ("fso.switch_profile.complete_ms", p.complete_ms),
        ] {
            nonneg(field, v)?;
        }
        if self.sweep.lambdas.is_empty() {
            return Err(field_err("sweep.lambdas", "sweep grid must not be empty"));
        }
        for &l in &self.sweep.lambdas {
            nonneg("sweep.lambdas", l)?;
        }
        if self.sweep.replications == 0 {
            return Err(field_err("sweep.replications", "at least one replication"));
        }
        Ok(())
    }

    /// Build the runtime class table.
    pub fn class_table(&self) -> Result<ClassTable, ConfigError> {
        let classes = self
            .classes
            .iter()
            .map(|c| TrafficClass {
                name: c.name.clone(),
                qos_adaptive: c.adaptive,
                bandwidth_mbps: c.bandwidth_mbps,
                degradable_fraction: c.degradable_fraction,
            })
            .collect();
        ClassTable::new(classes).map_err(|e| field_err("class", e.to_string()))
    }

    pub fn class_weights(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.weight).collect()
    }

    pub fn workload_params(&self) -> WorkloadParams {
        WorkloadParams {
            lambda_new_per_cell: self.workload.lambda_new_per_cell,
            mean_holding_s: self.workload.mean_holding_s,
            mean_dwell_s: self.workload.mean_dwell_s,
            mean_femto_dwell_s: self.workload.mean_femto_dwell_s,
            mean_m2f_opportunity_s: self.workload.mean_m2f_opportunity_s,
            lambda_onboard_per_vehicle: self
                .vehicles
                .lambda_onboard
                .unwrap_or(self.workload.lambda_new_per_cell),
            user_mobility: self.workload.user_mobility,
        }
    }

    pub fn geometry(&self) -> TrackGeometry {
        TrackGeometry {
            cell_count: self.cells.count,
            cell_length_m: self.cells.cell_length_m,
            fso_ap_spacing_m: matches!(self.vehicles.backhaul, BackhaulKind::Fso)
                .then_some(self.fso.ap_spacing_m),
        }
    }

    /// Signaling scripts with the uniform latency and per-step overrides.
    pub fn scripts(&self) -> Result<Scripts, ConfigError> {
        let base = SimDuration::from_millis_f64(self.signaling.step_latency_ms)
            .map_err(|e| field_err("signaling.step_latency_ms", e.to_string()))?;
        let mut scripts = default_scripts(base);
        for o in &self.signaling.overrides {
            let kind = procedure_kind(&o.procedure)
                .ok_or_else(|| field_err("signaling.override.procedure", "unknown procedure"))?;
            let latency = SimDuration::from_millis_f64(o.latency_ms)
                .map_err(|e| field_err("signaling.override.latency_ms", e.to_string()))?;
            if !scripts.get_mut(kind).set_latency(o.step, latency) {
                return Err(field_err(
                    "signaling.override.step",
                    format!("procedure {} has no step {}", o.procedure, o.step),
                ));
            }
        }
        Ok(scripts)
    }

    pub fn switch_profile(&self) -> Result<FsoSwitchProfile, ConfigError> {
        let p = &self.fso.switch_profile;
        let ms = |field: &'static str, v: f64| {
            SimDuration::from_millis_f64(v).map_err(|e| field_err(field, e.to_string()))
        };
        Ok(FsoSwitchProfile::with_latencies([
            ms("fso.switch_profile.beacon_ms", p.beacon_ms)?,
            ms("fso.switch_profile.request_ms", p.request_ms)?,
            ms("fso.switch_profile.response_ms", p.response_ms)?,
            ms("fso.switch_profile.setup_ms", p.setup_ms)?,
            ms(
                "fso.switch_profile.synchronization_ms",
                p.synchronization_ms,
            )?,
            ms("fso.switch_profile.complete_ms", p.complete_ms)?,
        ]))
    }

    pub fn reservation_time(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.cells.reservation_time_s)
            .expect("validated nonnegative finite")
    }
}

pub fn procedure_kind(name: &str) -> Option<HandoverKind> {
    match name.to_ascii_lowercase().as_str() {
        "f2m" => Some(HandoverKind::FemtoToMacro),
        "m2f" => Some(HandoverKind::MacroToFemto),
        "bh_m2m" | "bh" => Some(HandoverKind::BackhaulMacroToMacro),
        _ => None,
    }
}
