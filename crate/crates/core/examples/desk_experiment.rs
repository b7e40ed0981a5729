// The full desk experiment: generate data, cold start, RL, then evaluate
// both checkpoints in all four query modes.
//
// Usage: `desk_experiment [config-file] [out-dir]`. Without a config file
// the shipped `configs/desk.conf` is used; the out dir keeps data,
// checkpoints, curves and the report.

use std::path::Path;

use lrem::experiment::{run_experiment, Experiment, ExperimentConfig};

pub fn run_example(cfg: &ExperimentConfig, out: Option<&Path>) -> lrem::Result<Experiment> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| lrem::LremError::InvalidArgument(e.to_string()))?;
    }
    let run = run_experiment(cfg, out)?;
    let r = &run.report;
    println!("{} triplets, {} rl pairs, vocab {}", r.stats.triplets, r.stats.rl_pairs, r.vocab_size);
    println!("cold steps {}, rl steps {}, final cold loss {:.4}", r.cold_steps, r.rl_steps, r.cold_final_loss);
    print!("{}", r.summary());
    println!("lrem - empty_cot on alternative + negative: {:+.4}", r.bridging_margin()?);
    println!("{:?}", run.timings);
    Ok(run)
}

fn main() -> lrem::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = match args.first() {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => ExperimentConfig::parse(include_str!("../../../configs/desk.conf"))?,
    };
    run_example(&cfg, args.get(1).map(Path::new))?;
    Ok(())
}
