//! Experiment harness for hiercoord: scenario files, the four experiment
//! families and their CSV and summary output.

pub mod experiments;
pub mod scenario;

use anyhow::Result;

pub use experiments::{run_beta_sweep, run_closed_loop, run_filter_vs_aa, run_memory_sweep, Summary};
pub use scenario::{Experiment, Scenario};

/// Runs one experiment and returns its CSV and summary.
pub fn run(experiment: Experiment, scenario: &Scenario) -> Result<(String, Summary)> {
    scenario.check_experiment(experiment)?;
    Ok(match experiment {
        Experiment::BetaSweep => {
            let r = run_beta_sweep(scenario)?;
            (r.csv()?, r.summary())
        }
        Experiment::MemorySweep => {
            let r = run_memory_sweep(scenario)?;
            (r.csv()?, r.summary())
        }
        Experiment::Race => {
            let r = run_filter_vs_aa(scenario)?;
            (r.csv()?, r.summary())
        }
        Experiment::ClosedLoop => {
            let r = run_closed_loop(scenario)?;
            (r.csv()?, r.summary())
        }
    })
}

/// Renders a two-column table.
pub fn format_summary(title: &str, summary: &Summary) -> String {
    let width = summary.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = format!("{title}\n");
    for (k, v) in summary {
        out.push_str(&format!("  {k:<width$}  {v}\n"));
    }
    out
}
