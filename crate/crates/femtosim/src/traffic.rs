//! Stochastic workload and vehicle mobility.
//!
//! Poisson call arrivals, exponential holding and dwell times, and a 1-D
//! ring track of macrocells along which vehicles move at constant speed.
//! Crossing a cell boundary re-homes the vehicle's backhaul (group
//! handover); crossing the midpoint between two FSO APs re-homes its
//! optical attachment (link switching).

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

/// Draw an exponential interarrival time with rate `lambda` (mean 1/lambda).
/// Samples are strictly positive.
pub fn next_arrival<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> Result<f64, TrafficError> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(TrafficError::NonPositive {
            name: "arrival rate",
            value: lambda,
        });
    }
    Ok(sample_exp_mean(rng, 1.0 / lambda))
}

/// Exponential sample with the given mean, strictly positive.
pub fn sample_exp_mean<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            // -ln(U) for U in (0,1) is Exp(1).
            return -u.ln() * mean;
        }
    }
}

/// Workload parameters; defaults follow the reference parameter table,
/// with the two clock means the table does not name set to the same scale
/// as the macro dwell time.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadParams {
    /// New-call arrival rate per cell, calls/sec. Zero disables fixed users.
    pub lambda_new_per_cell: f64,
    /// Mean call duration, seconds.
    pub mean_holding_s: f64,
    /// Mean macrocell dwell time of fixed users, seconds.
    pub mean_dwell_s: f64,
    /// Mean time an onboard call keeps femtocell coverage, seconds.
    pub mean_femto_dwell_s: f64,
    /// Mean interval between macro-to-femto opportunities per call, seconds.
    pub mean_m2f_opportunity_s: f64,
    /// Onboard arrival rate per vehicle, calls/sec.
    pub lambda_onboard_per_vehicle: f64,
    /// Master switch for dwell/opportunity clocks.
    pub user_mobility: bool,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        WorkloadParams {
            lambda_new_per_cell: 0.008,
            mean_holding_s: 120.0,
            mean_dwell_s: 540.0,
            mean_femto_dwell_s: 540.0,
            mean_m2f_opportunity_s: 540.0,
            lambda_onboard_per_vehicle: 0.025,
            user_mobility: true,
        }
    }
}

impl WorkloadParams {
    pub fn validate(&self) -> Result<(), TrafficError> {
        let check = |name, v: f64, allow_zero: bool| {
            if v.is_finite() && (v > 0.0 || (allow_zero && v == 0.0)) {
                Ok(())
            } else {
                Err(TrafficError::NonPositive { name, value: v })
            }
        };
        check("lambda_new_per_cell", self.lambda_new_per_cell, true)?;
        check("mean_holding_s", self.mean_holding_s, false)?;
        check("mean_dwell_s", self.mean_dwell_s, false)?;
        check("mean_femto_dwell_s", self.mean_femto_dwell_s, false)?;
        check("mean_m2f_opportunity_s", self.mean_m2f_opportunity_s, false)?;
        check(
            "lambda_onboard_per_vehicle",
            self.lambda_onboard_per_vehicle,
            true,
        )
    }

    pub fn sample_holding<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_exp_mean(rng, self.mean_holding_s)
    }

    pub fn sample_dwell<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_exp_mean(rng, self.mean_dwell_s)
    }

    pub fn sample_femto_dwell<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_exp_mean(rng, self.mean_femto_dwell_s)
    }

    pub fn sample_m2f_opportunity<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_exp_mean(rng, self.mean_m2f_opportunity_s)
    }
}

/// The 1-D ring geometry: `cell_count` equal macrocell segments, and
/// optionally equally spaced FSO APs along the same track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackGeometry {
    pub cell_count: usize,
    pub cell_length_m: f64,
    /// AP spacing when the FSO backhaul is deployed.
    pub fso_ap_spacing_m: Option<f64>,
}

impl TrackGeometry {
    pub fn track_length_m(&self) -> f64 {
        self.cell_count as f64 * self.cell_length_m
    }

    pub fn fso_ap_count(&self) -> usize {
        match self.fso_ap_spacing_m {
            Some(s) if s > 0.0 => (self.track_length_m() / s).round() as usize,
            _ => 0,
        }
    }

    pub fn fso_ap_position_m(&self, ap: usize) -> f64 {
        self.fso_ap_spacing_m.unwrap_or(0.0) * ap as f64
    }

    /// Wrap a coordinate onto the ring.
    pub fn normalize(&self, position_m: f64) -> f64 {
        position_m.rem_euclid(self.track_length_m())
    }

    /// Which cell covers the position. Boundaries belong to the cell ahead.
    pub fn cell_at(&self, position_m: f64) -> usize {
        let p = self.normalize(position_m);
        ((p / self.cell_length_m) as usize).min(self.cell_count - 1)
    }

    /// Which FSO AP is nearest to the position.
    pub fn nearest_fso_ap(&self, position_m: f64) -> Option<usize> {
        let count = self.fso_ap_count();
        let spacing = self.fso_ap_spacing_m?;
        if count == 0 {
            return None;
        }
        let p = self.normalize(position_m);
        Some(((p / spacing).round() as usize) % count)
    }

    /// Distance (forward) to the next cell boundary, with the boundary
    /// coordinate and the cell entered there. A vehicle sitting exactly on a
    /// boundary looks to the next one.
    pub fn next_cell_boundary(&self, position_m: f64) -> BoundaryCrossing {
        let p = self.normalize(position_m);
        let current = self.cell_at(p);
        let boundary = (current + 1) as f64 * self.cell_length_m;
        let distance = boundary - p;
        let distance = if distance <= 0.0 {
            self.cell_length_m
        } else {
            distance
        };
        let to_cell = (current + 1) % self.cell_count;
        let boundary_pos = if to_cell == 0 { 0.0 } else { boundary };
        BoundaryCrossing {
            distance_m: distance,
            boundary_pos_m: boundary_pos,
            to: to_cell,
        }
    }

    /// Distance to the next FSO midpoint, the midpoint coordinate, and the
    /// AP attached past it.
    pub fn next_fso_midpoint(&self, position_m: f64) -> Option<BoundaryCrossing> {
        let spacing = self.fso_ap_spacing_m?;
        let count = self.fso_ap_count();
        if count < 2 {
            return None;
        }
        let p = self.normalize(position_m);
        // Midpoint k sits at (k + 0.5) * spacing, between AP k and AP k+1;
        // the smallest k with (k + 0.5) * spacing strictly ahead of p:
        let k = ((p / spacing) - 0.5).floor() + 1.0;
        let midpoint = (k + 0.5) * spacing;
        let to_ap = (k as i64 + 1).rem_euclid(count as i64) as usize;
        Some(BoundaryCrossing {
            distance_m: midpoint - p,
            boundary_pos_m: self.normalize(midpoint),
            to: to_ap,
        })
    }
}

/// A forward crossing: how far away, where, and what it enters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryCrossing {
    pub distance_m: f64,
    pub boundary_pos_m: f64,
    pub to: usize,
}

/// Events emitted by advancing a vehicle, ordered by crossing time.
#[derive(Debug, Clone, PartialEq)]
pub enum MobilityEvent {
    CellBoundary {
        at_s: f64,
        boundary_pos_m: f64,
        to_cell: usize,
    },
    FsoMidpoint {
        at_s: f64,
        midpoint_pos_m: f64,
        to_ap: usize,
    },
}

impl MobilityEvent {
    pub fn at_s(&self) -> f64 {
        match self {
            MobilityEvent::CellBoundary { at_s, .. } | MobilityEvent::FsoMidpoint { at_s, .. } => {
                *at_s
            }
        }
    }
}

/// Advance a vehicle by `dt_s`, returning its new position and every cell
/// boundary / FSO midpoint crossed, in crossing order. Crossing times are
/// offsets from the start of the step.
pub fn step_vehicle(
    geometry: &TrackGeometry,
    position_m: f64,
    speed_mps: f64,
    dt_s: f64,
) -> Result<(f64, Vec<MobilityEvent>), TrafficError> {
    if speed_mps <= 0.0 || !speed_mps.is_finite() {
        return Err(TrafficError::NonPositive {
            name: "speed",
            value: speed_mps,
        });
    }
    if dt_s <= 0.0 || !dt_s.is_finite() {
        return Err(TrafficError::NonPositive {
            name: "dt",
            value: dt_s,
        });
    }
    let mut events = Vec::new();
    let travel = speed_mps * dt_s;

    let mut covered = 0.0;
    let mut cursor = geometry.normalize(position_m);
    loop {
        let crossing = geometry.next_cell_boundary(cursor);
        if covered + crossing.distance_m > travel {
            break;
        }
        covered += crossing.distance_m;
        cursor = crossing.boundary_pos_m;
        events.push(MobilityEvent::CellBoundary {
            at_s: covered / speed_mps,
            boundary_pos_m: crossing.boundary_pos_m,
            to_cell: crossing.to,
        });
    }

    let mut covered = 0.0;
    let mut cursor = geometry.normalize(position_m);
    while let Some(crossing) = geometry.next_fso_midpoint(cursor) {
        if covered + crossing.distance_m > travel {
            break;
        }
        covered += crossing.distance_m;
        cursor = crossing.boundary_pos_m;
        events.push(MobilityEvent::FsoMidpoint {
            at_s: covered / speed_mps,
            midpoint_pos_m: crossing.boundary_pos_m,
            to_ap: crossing.to,
        });
    }

    events.sort_by(|a, b| a.at_s().total_cmp(&b.at_s()));
    Ok((geometry.normalize(position_m + travel), events))
}
