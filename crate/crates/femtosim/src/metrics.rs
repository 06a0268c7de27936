//! KPI accounting and the Erlang-B analytical oracle.
//!
//! The accumulator counts handover attempts/drops and new-call
//! attempts/blocks after a warmup period, integrates occupied bandwidth
//! over time for the utilization figure, and collects per-procedure
//! signaling latencies. Erlang-B (stable recursion) validates the
//! degenerate single-class loss-system configuration.

use crate::time::SimTime;

/// Erlang-B blocking probability of a loss system with `servers` channels
/// at `offered_load` Erlangs, by the stable recursion
/// `B_0 = 1, B_k = a B_{k-1} / (k + a B_{k-1})`.
pub fn erlang_b(servers: u32, offered_load: f64) -> f64 {
    debug_assert!(offered_load >= 0.0, "offered load must be nonnegative");
    let a = offered_load.max(0.0);
    let mut b = 1.0;
    for k in 1..=servers {
        b = a * b / (f64::from(k) + a * b);
    }
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandoverStream {
    UserM2m,
    F2m,
    BhMember,
}

/// Per-stream attempt counters (diagnostics; the report aggregates them).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamCounts {
    pub m2m_attempts: u64,
    pub f2m_attempts: u64,
    pub bh_member_attempts: u64,
}

/// KPI counters for one run; everything before `warmup` is excluded.
#[derive(Debug, Clone)]
pub struct KpiAccumulator {
    warmup: SimTime,
    pub handover_attempts: u64,
    pub handover_drops: u64,
    pub new_attempts: u64,
    pub new_blocks: u64,
    pub m2f_attempts: u64,
    pub m2f_rejects: u64,
    pub streams: StreamCounts,
    util_integral_mbps_us: f64,
    f2m_latency_us: (u64, u64),
    m2f_latency_us: (u64, u64),
    bh_latency_us: (u64, u64),
}

impl KpiAccumulator {
    pub fn new(warmup: SimTime) -> Self {
        KpiAccumulator {
            warmup,
            handover_attempts: 0,
            handover_drops: 0,
            new_attempts: 0,
            new_blocks: 0,
            m2f_attempts: 0,
            m2f_rejects: 0,
            streams: StreamCounts::default(),
            util_integral_mbps_us: 0.0,
            f2m_latency_us: (0, 0),
            m2f_latency_us: (0, 0),
            bh_latency_us: (0, 0),
        }
    }

    pub fn warmup(&self) -> SimTime {
        self.warmup
    }

    fn counted(&self, now: SimTime) -> bool {
        now >= self.warmup
    }

    pub fn record_new_attempt(&mut self, now: SimTime, blocked: bool) {
        if self.counted(now) {
            self.new_attempts += 1;
            if blocked {
                self.new_blocks += 1;
            }
        }
    }

    pub fn record_handover_attempt(&mut self, now: SimTime, stream: HandoverStream) {
        if self.counted(now) {
            self.handover_attempts += 1;
            match stream {
                HandoverStream::UserM2m => self.streams.m2m_attempts += 1,
                HandoverStream::F2m => self.streams.f2m_attempts += 1,
                HandoverStream::BhMember => self.streams.bh_member_attempts += 1,
            }
        }
    }

    pub fn record_handover_drop(&mut self, now: SimTime, _stream: HandoverStream) {
        if self.counted(now) {
            self.handover_drops += 1;
        }
    }

    pub fn record_m2f_attempt(&mut self, now: SimTime, rejected: bool) {
        if self.counted(now) {
            self.m2f_attempts += 1;
            if rejected {
                self.m2f_rejects += 1;
            }
        }
    }

    pub fn record_f2m_latency(&mut self, now: SimTime, micros: u64) {
        if self.counted(now) {
            self.f2m_latency_us.0 += micros;
            self.f2m_latency_us.1 += 1;
        }
    }

    pub fn record_m2f_latency(&mut self, now: SimTime, micros: u64) {
        if self.counted(now) {
            self.m2f_latency_us.0 += micros;
            self.m2f_latency_us.1 += 1;
        }
    }

    pub fn record_bh_latency(&mut self, now: SimTime, micros: u64) {
        if self.counted(now) {
            self.bh_latency_us.0 += micros;
            self.bh_latency_us.1 += 1;
        }
    }

    /// Integrate a constant occupancy over [from, to], clipped to the
    /// post-warmup window.
    pub fn accumulate_occupancy(&mut self, occupied_mbps: f64, from: SimTime, to: SimTime) {
        let from = from.max(self.warmup);
        if to > from {
            self.util_integral_mbps_us += occupied_mbps * to.since(from).as_micros() as f64;
        }
    }

    pub fn utilization_integral_mbps_us(&self) -> f64 {
        self.util_integral_mbps_us
    }

    pub fn dropping_probability(&self) -> f64 {
        ratio(self.handover_drops, self.handover_attempts)
    }

    pub fn blocking_probability(&self) -> f64 {
        ratio(self.new_blocks, self.new_attempts)
    }

    /// Utilization over the measured window given the aggregate capacity.
    pub fn utilization(&self, total_capacity_mbps: f64, stop: SimTime) -> f64 {
        let span = stop.since(self.warmup).as_micros() as f64;
        if span <= 0.0 || total_capacity_mbps <= 0.0 {
            return 0.0;
        }
        self.util_integral_mbps_us / (total_capacity_mbps * span)
    }

    pub fn mean_f2m_ms(&self) -> f64 {
        mean_ms(self.f2m_latency_us)
    }

    pub fn mean_m2f_ms(&self) -> f64 {
        mean_ms(self.m2f_latency_us)
    }

    pub fn mean_bh_ms(&self) -> f64 {
        mean_ms(self.bh_latency_us)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean_ms((sum_us, count): (u64, u64)) -> f64 {
    if count == 0 {
        f64::NAN
    } else {
        sum_us as f64 / count as f64 / 1_000.0
    }
}

/// One KPI row: the result of a single seeded run.
#[derive(Debug, Clone, PartialEq)]
pub struct KpiReport {
    pub scheme: &'static str,
    pub lambda_per_cell: f64,
    pub offered_erlang: f64,
    pub dropping_prob: f64,
    pub blocking_prob: f64,
    pub utilization: f64,
    pub mean_f2m_ms: f64,
    pub mean_m2f_ms: f64,
    pub mean_bh_ms: f64,
    pub handover_attempts: u64,
    pub handover_drops: u64,
    pub new_attempts: u64,
    pub new_blocks: u64,
    pub seed: u64,
}

impl KpiReport {
    pub fn csv_header() -> &'static str {
        "scheme,lambda_per_cell,offered_erlang,dropping_prob,blocking_prob,utilization,\
         mean_f2m_ms,mean_m2f_ms,mean_bh_ms,handover_attempts,handover_drops,\
         new_attempts,new_blocks,seed"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.3},{:.3},{:.3},{},{},{},{},{}",
            self.scheme,
            self.lambda_per_cell,
            self.offered_erlang,
            self.dropping_prob,
            self.blocking_prob,
            self.utilization,
            self.mean_f2m_ms,
            self.mean_m2f_ms,
            self.mean_bh_ms,
            self.handover_attempts,
            self.handover_drops,
            self.new_attempts,
            self.new_blocks,
            self.seed
        )
    }
}

/// Sample mean with a 95% confidence half-width over independent
/// replications (Student t for small n).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    pub half_width: f64,
}

/// Two-sided 97.5% Student-t quantiles for df = 1..=30; beyond that the
/// normal 1.96 is close enough.
const T_975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
    2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
    2.052, 2.048, 2.045, 2.042,
];

pub fn mean_ci95(samples: &[f64]) -> MeanCi {
    let n = samples.len();
    if n == 0 {
        return MeanCi {
            n: 0,
            mean: f64::NAN,
            half_width: f64::NAN,
        };
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return MeanCi {
            n,
            mean,
            half_width: f64::NAN,
        };
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    let t = T_975.get(n - 2).copied().unwrap_or(1.96);
    MeanCi {
        n,
        mean,
        half_width: t * (var / n as f64).sqrt(),
    }
}
