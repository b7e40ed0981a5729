// The four query renderings on one trained model: generated CoT, empty CoT,
// random-token CoT and the query repeated as its own CoT. Prints the
// per-category HitRate/Precision grid for the cold-start and final models.

use lrem::experiment::{run_experiment, ExperimentConfig, ExperimentReport};
use lrem::retrieval::EvalMode;

pub fn run_example(cfg: &ExperimentConfig) -> lrem::Result<ExperimentReport> {
    let run = run_experiment(cfg, None)?;
    for (stage, table) in [("cold start", &run.report.cold_eval), ("cold start + RL", &run.report.rl_eval)] {
        println!("== {stage}");
        for mode in EvalMode::ALL {
            print!("{}", table[mode.as_str()].table());
        }
    }
    println!("lrem - empty_cot on alternative + negative: {:+.4}", run.report.bridging_margin()?);
    Ok(run.report)
}

fn main() -> lrem::Result<()> {
    run_example(&ExperimentConfig::smoke())?;
    Ok(())
}
