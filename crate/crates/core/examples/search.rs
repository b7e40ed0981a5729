// Interactive-style retrieval: train a small model, embed the corpus, then
// show the generated CoT and the top hits for a few queries, next to the
// same query embedded without reasoning.

use lrem::experiment::ExperimentConfig;
use lrem::net::ModelParams;
use lrem::pipeline::{generate, DataFiles};
use lrem::retrieval::{build_index, search, EvalMode, SearchResult};
use lrem::trainer::{cold_examples, cold_start_run};

pub fn run_example(cfg: &ExperimentConfig) -> lrem::Result<Vec<(EvalMode, SearchResult)>> {
    let data = DataFiles::from_dataset(&generate(&cfg.data)?);
    let mut model = cfg.model;
    model.vocab_size = data.vocab.len();
    let ex = cold_examples(&data.vocab, &data.corpus, &data.triplets, cfg.train.cot_max, model.max_seq_len)?;
    let params = cold_start_run(&cfg.train, &ex, ModelParams::init(model, cfg.train.seed_model)?)?
        .checkpoint
        .params;
    let (index, _) = build_index(&params, &data.vocab, &data.corpus)?;

    let mut out = Vec::new();
    for q in data.eval.iter().step_by(data.eval.len() / 4 + 1) {
        println!("\nquery: {}  ({}, {} relevant)", q.query, q.category, q.gt_ids.len());
        for mode in [EvalMode::Lrem, EvalMode::EmptyCot] {
            let res = search(&params, &data.vocab, &index, &data.corpus, &q.query, mode, 5, cfg.train.cot_max, 0)?;
            println!("  [{mode}] cot: {}", res.cot);
            for h in &res.hits {
                let mark = if q.gt_ids.contains(&h.id) { '*' } else { ' ' };
                println!("    {mark} {:>5} {:.4}  {}", h.id, h.score, h.title);
            }
            out.push((mode, res));
        }
    }
    Ok(out)
}

fn main() -> lrem::Result<()> {
    run_example(&ExperimentConfig::smoke())?;
    Ok(())
}
