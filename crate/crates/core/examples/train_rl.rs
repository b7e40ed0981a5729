// Stage two: the cold-start policy writes its own CoTs. Each query gets a
// group of sampled rollouts, rewarded for format, length and the in-batch
// rank of its item; group-normalised advantages drive the clipped update.

use lrem::experiment::ExperimentConfig;
use lrem::net::ModelParams;
use lrem::pipeline::{generate, DataFiles};
use lrem::trainer::{cold_examples, cold_start_run, probe_examples, rl_examples, rl_run, RlRun};

pub fn run_example(cfg: &ExperimentConfig) -> lrem::Result<RlRun> {
    let data = DataFiles::from_dataset(&generate(&cfg.data)?);
    let mut model = cfg.model;
    model.vocab_size = data.vocab.len();
    let cold_ex = cold_examples(&data.vocab, &data.corpus, &data.triplets, cfg.train.cot_max, model.max_seq_len)?;
    let cold = cold_start_run(&cfg.train, &cold_ex, ModelParams::init(model, cfg.train.seed_model)?)?;

    let pairs = rl_examples(&data.vocab, &data.corpus, &data.rl_pairs, model.max_seq_len)?;
    let probe = probe_examples(&data.vocab, &data.corpus, &data.eval, cfg.probe_queries, model.max_seq_len)?;
    println!("{} rl pairs, probe of {} eval queries", pairs.len(), probe.len());
    let run = rl_run(&cfg.train, &data.vocab, &pairs, cold.checkpoint, Some(&probe))?;
    for c in &run.curve {
        println!(
            "step {:>3}  reward {:.3}  format {:.2}  rank {}  grpo {:+.4}  nce {:.4}",
            c.step,
            c.mean_reward.unwrap_or(f64::NAN),
            c.format_rate.unwrap_or(f64::NAN),
            c.mean_rank.map_or("-".to_string(), |r| format!("{r:.2}")),
            c.loss_grpo.unwrap_or(f64::NAN),
            c.loss_nce
        );
    }
    if let (Some(a), Some(b)) = (run.probe_start, run.probe_end) {
        println!("probe reward {:.4} -> {:.4}", a.mean_reward, b.mean_reward);
    }
    Ok(run)
}

fn main() -> lrem::Result<()> {
    run_example(&ExperimentConfig::smoke())?;
    Ok(())
}
