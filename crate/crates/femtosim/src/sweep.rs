//! Load-sweep driver: scheme x arrival-rate grid x replication seeds.
//!
//! Each point of the cross-product is one fully isolated single-threaded
//! run; points execute in parallel worker threads and results assemble in
//! deterministic job order regardless of thread timing. The summary holds
//! per-(scheme, lambda) means with 95% confidence half-widths over the
//! replication seeds.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::cac::Scheme;
use crate::metrics::{mean_ci95, KpiReport, MeanCi};
use crate::scenario::{ScenarioConfig, SchemeChoice};
use crate::sim::{run_scenario, RunOptions, SimError};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep grid must not be empty")]
    EmptyGrid,
    #[error("seed list must not be empty")]
    EmptySeeds,
    #[error("no scheme selected")]
    EmptySchemes,
    #[error("run (scheme={scheme}, lambda={lambda}, seed={seed}) failed: {source}")]
    Run {
        scheme: &'static str,
        lambda: f64,
        seed: u64,
        #[source]
        source: SimError,
    },
}

/// Aggregate of one (scheme, lambda) sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: &'static str,
    pub lambda_per_cell: f64,
    pub offered_erlang: f64,
    pub replications: usize,
    pub dropping: MeanCi,
    pub blocking: MeanCi,
    pub utilization: MeanCi,
}

impl SummaryRow {
    pub fn csv_header() -> &'static str {
        "scheme,lambda_per_cell,offered_erlang,replications,dropping_mean,dropping_ci95,\
         blocking_mean,blocking_ci95,utilization_mean,utilization_ci95"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.scheme,
            self.lambda_per_cell,
            self.offered_erlang,
            self.replications,
            self.dropping.mean,
            self.dropping.half_width,
            self.blocking.mean,
            self.blocking.half_width,
            self.utilization.mean,
            self.utilization.half_width
        )
    }
}

/// All rows (one per run, in deterministic job order) plus the summary.
#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<KpiReport>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Debug, Clone, Copy)]
struct Job {
    scheme: Scheme,
    lambda: f64,
    seed: u64,
}

/// Run the full cross-product. Rows come back ordered by (scheme, lambda,
/// seed) exactly as enumerated.
pub fn run_sweep(
    base: &ScenarioConfig,
    lambdas: &[f64],
    seeds: &[u64],
    schemes: &[Scheme],
) -> Result<SweepOutcome, SweepError> {
    if lambdas.is_empty() {
        return Err(SweepError::EmptyGrid);
    }
    if seeds.is_empty() {
        return Err(SweepError::EmptySeeds);
    }
    if schemes.is_empty() {
        return Err(SweepError::EmptySchemes);
    }
    let jobs: Vec<Job> = schemes
        .iter()
        .flat_map(|&scheme| {
            lambdas.iter().flat_map(move |&lambda| {
                seeds.iter().map(move |&seed| Job {
                    scheme,
                    lambda,
                    seed,
                })
            })
        })
        .collect();

    let results: Vec<Option<Result<KpiReport, SweepError>>> = {
        let slots: Mutex<Vec<Option<Result<KpiReport, SweepError>>>> =
            Mutex::new((0..jobs.len()).map(|_| None).collect());
        let cursor = AtomicUsize::new(0);
        let workers = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
            .min(jobs.len())
            .max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = cursor.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs.len() {
                        break;
                    }
                    let job = jobs[i];
                    let outcome = run_job(base, job);
                    slots.lock().expect("no poisoned workers")[i] = Some(outcome);
                });
            }
        });
        slots.into_inner().expect("workers joined")
    };

    let mut rows = Vec::with_capacity(jobs.len());
    for slot in results {
        rows.push(slot.expect("every job ran")?);
    }

    let mut summary = Vec::new();
    for &scheme in schemes {
        for &lambda in lambdas {
            let group: Vec<&KpiReport> = rows
                .iter()
                .filter(|r| r.scheme == scheme.as_str() && r.lambda_per_cell == lambda)
                .collect();
            let pick =
                |f: fn(&KpiReport) -> f64| -> Vec<f64> { group.iter().map(|r| f(r)).collect() };
            summary.push(SummaryRow {
                scheme: scheme.as_str(),
                lambda_per_cell: lambda,
                offered_erlang: lambda * base.workload.mean_holding_s,
                replications: group.len(),
                dropping: mean_ci95(&pick(|r| r.dropping_prob)),
                blocking: mean_ci95(&pick(|r| r.blocking_prob)),
                utilization: mean_ci95(&pick(|r| r.utilization)),
            });
        }
    }
    Ok(SweepOutcome { rows, summary })
}

fn run_job(base: &ScenarioConfig, job: Job) -> Result<KpiReport, SweepError> {
    let mut cfg = base.clone();
    cfg.run.seed = job.seed;
    cfg.run.scheme = match job.scheme {
        Scheme::Proposed => SchemeChoice::Proposed,
        Scheme::Baseline => SchemeChoice::Baseline,
    };
    cfg.workload.lambda_new_per_cell = job.lambda;
    run_scenario(&cfg, RunOptions::default())
        .map(|art| art.report)
        .map_err(|source| SweepError::Run {
            scheme: job.scheme.as_str(),
            lambda: job.lambda,
            seed: job.seed,
            source,
        })
}

/// Seeds base..base+n, the replication convention of the CLI.
pub fn replication_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base.wrapping_add(i)).collect()
}
