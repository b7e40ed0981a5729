// Builds the synthetic world and runs the Query-CoT-Item pipeline with the
// desk defaults, then prints the pipeline statistics and a few triplets.
//
// `cargo run --example gen_data [out-dir]` also writes the dataset files.

use lrem::pipeline::{generate, DataConfig, Dataset};

pub fn run_example(cfg: &DataConfig) -> lrem::Result<Dataset> {
    let ds = generate(cfg)?;
    let s = &ds.output.stats;
    println!(
        "items {}  vocab {}  train queries {}  eval queries {}",
        ds.corpus.len(),
        ds.vocab.len(),
        ds.train_queries.len(),
        ds.eval_queries.len()
    );
    println!(
        "emitted {}  discarded {} (empty difference {}, nothing relevant {})",
        s.emitted, s.discarded, s.discarded_empty_difference, s.discarded_nothing_relevant
    );
    println!("cold-start triplets {}  rl pairs {}", s.triplets, s.rl_pairs);
    for (cat, c) in &s.per_category {
        println!("  {cat:<12} queries {:>4}  emitted {:>4}  triplets {:>5}", c.queries, c.emitted, c.triplets);
    }
    for t in ds.output.triplets.iter().step_by(ds.output.triplets.len().max(1) / 6 + 1) {
        println!("  [{}] {}  =>  <think> {} </think>  ->  item {}", t.query_id, t.query, t.cot, t.item_id);
    }
    Ok(ds)
}

fn main() -> lrem::Result<()> {
    let ds = run_example(&DataConfig::default())?;
    if let Some(dir) = std::env::args().nth(1) {
        ds.write(dir.as_ref())?;
        println!("wrote {dir}");
    }
    Ok(())
}
