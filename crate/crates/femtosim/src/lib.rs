//! Discrete-event simulation of mobile-femtocell handover over FSO and
//! macrocellular backhaul: signaling procedures, priority bandwidth
//! reservation with QoS degradation, channel models, and the experiment
//! harness reproducing the dropping-probability and utilization studies.

pub mod cac;
pub mod fso;
pub mod handover;
pub mod kernel;
pub mod metrics;
pub mod radio;
pub mod scenario;
pub mod sim;
pub mod sweep;
pub mod time;
pub mod trace;
pub mod traffic;

// Every fenced Rust block in the guide runs as a doctest, so the book and
// the library cannot drift apart.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(simulation_engine, "../../../book/src/simulation-engine.md");
    chapter!(radio_propagation, "../../../book/src/radio-propagation.md");
    chapter!(fso_backhaul, "../../../book/src/fso-backhaul.md");
    chapter!(
        handover_procedures,
        "../../../book/src/handover-procedures.md"
    );
    chapter!(admission_control, "../../../book/src/admission-control.md");
    chapter!(
        workload_experiments,
        "../../../book/src/workload-and-experiments.md"
    );
    chapter!(cli, "../../../book/src/cli.md");
}
