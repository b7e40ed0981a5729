// Stage one on a small world: SFT on the teacher CoT plus in-batch InfoNCE
// between the query's `<emb>` state and the item's.
//
// Prints the loss curve, then round-trips the checkpoint through its byte
// container and checks the fingerprint survives.

use lrem::experiment::ExperimentConfig;
use lrem::net::container::{hex, Container};
use lrem::net::ModelParams;
use lrem::pipeline::{generate, DataFiles};
use lrem::trainer::{cold_examples, cold_start_run, Checkpoint, ColdRun};

pub fn run_example(cfg: &ExperimentConfig) -> lrem::Result<ColdRun> {
    let data = DataFiles::from_dataset(&generate(&cfg.data)?);
    let mut model = cfg.model;
    model.vocab_size = data.vocab.len();
    let examples = cold_examples(&data.vocab, &data.corpus, &data.triplets, cfg.train.cot_max, model.max_seq_len)?;
    println!("{} triplets, {} parameters", examples.len(), ModelParams::init(model, 0)?.num_scalars());

    let run = cold_start_run(&cfg.train, &examples, ModelParams::init(model, cfg.train.seed_model)?)?;
    for c in run.curve.iter().step_by((run.curve.len() / 8).max(1)) {
        println!(
            "step {:>5}  lr {:.2e}  total {:.4}  sft {:.4}  nce {:.4}",
            c.step,
            c.lr,
            c.loss_total,
            c.loss_sft.unwrap_or(f64::NAN),
            c.loss_nce
        );
    }

    let bytes = run.checkpoint.to_container()?.to_bytes();
    let back = Checkpoint::from_container(Container::from_bytes(&bytes).map_err(lrem::LremError::InvalidArgument)?)
        .map_err(lrem::LremError::InvalidArgument)?;
    assert_eq!(back.fingerprint(), run.checkpoint.fingerprint());
    println!("checkpoint {} bytes, fingerprint {}", bytes.len(), hex(&back.fingerprint()));
    Ok(run)
}

fn main() -> lrem::Result<()> {
    run_example(&ExperimentConfig::smoke())?;
    Ok(())
}
