use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use lrem::experiment::ExperimentConfig;
use lrem::net::container::hex;
use lrem::net::ModelParams;
use lrem::pipeline::{generate, read_jsonl, DataFiles, EvalQueryRecord};
use lrem::retrieval::{build_index, eval_run, search, EmbIndex, EvalMode, EvalSettings};
use lrem::trainer::{
    cold_examples, cold_start_run, probe_examples, rl_examples, rl_run, write_curve, Checkpoint, RunManifest,
};
use lrem::verify::{run_suite, Suite};
use lrem::{LremError, Result};

#[derive(Parser)]
#[command(name = "lrem", version, about = "Reasoning-then-embedding retrieval at desk scale")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the synthetic world, run the data pipeline and write the dataset files.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        items: Option<usize>,
        #[arg(long = "queries-per-cat")]
        queries_per_cat: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        topk: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage one: SFT + InfoNCE on query-CoT-item triplets.
    TrainCold {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from this checkpoint instead of a fresh initialisation.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage two: GRPO + InfoNCE on query-item pairs.
    TrainRl {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed every corpus item with a checkpoint.
    BuildIndex {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed one query and print the CoT and the top-k items.
    Search {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value = "lrem")]
        mode: EvalMode,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 16)]
        cot_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// HitRate@K and Precision@Kp per query category.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the data directory's eval queries.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        kp: usize,
        /// One of lrem, empty_cot, random_cot, query_cot, or `all`.
        #[arg(long, default_value = "lrem")]
        mode: String,
        #[arg(long, default_value_t = 16)]
        cot_len: usize,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the self-check suites.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| LremError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_index(params: &ModelParams, path: &Path) -> Result<EmbIndex> {
    let index = EmbIndex::load(path)?;
    if index.fingerprint != params.fingerprint() {
        return Err(LremError::FingerprintMismatch);
    }
    Ok(index)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { config, seed, items, queries_per_cat, noise, topk, out } => {
            let mut cfg = load_config(config.as_deref())?;
            let d = &mut cfg.data;
            d.seed = seed.unwrap_or(d.seed);
            d.items = items.unwrap_or(d.items);
            d.queries_per_category = queries_per_cat.unwrap_or(d.queries_per_category);
            d.pipeline.noise = noise.unwrap_or(d.pipeline.noise);
            d.pipeline.k = topk.unwrap_or(d.pipeline.k);
            cfg.validate()?;
            let ds = generate(&cfg.data)?;
            create_dir(&out)?;
            ds.write(&out)?;
            let s = &ds.output.stats;
            println!(
                "items {} vocab {} triplets {} rl_pairs {} eval_queries {} discarded {}",
                ds.corpus.len(),
                ds.vocab.len(),
                s.triplets,
                s.rl_pairs,
                ds.eval_queries.len(),
                s.discarded
            );
        }
        Cmd::TrainCold { data, config, ckpt, out } => {
            let cfg = load_config(config.as_deref())?;
            let files = DataFiles::load(&data)?;
            let params = match ckpt {
                Some(p) => Checkpoint::load(&p)?.params,
                None => {
                    let mut model = cfg.model;
                    model.vocab_size = files.vocab.len();
                    ModelParams::init(model, cfg.train.seed_model)?
                }
            };
            if params.config.vocab_size != files.vocab.len() {
                return Err(LremError::Config("checkpoint vocabulary size does not match the data".into()));
            }
            let t = Instant::now();
            let examples = cold_examples(
                &files.vocab,
                &files.corpus,
                &files.triplets,
                cfg.train.cot_max,
                params.config.max_seq_len,
            )?;
            let run = cold_start_run(&cfg.train, &examples, params)?;
            run.checkpoint.save(&out)?;
            write_curve(&with_suffix(&out, ".curve.jsonl"), &run.curve)?;
            let mut m = RunManifest::default();
            m.set("stage", "cold");
            m.set("steps", run.curve.len());
            m.set("fingerprint", hex(&run.checkpoint.fingerprint()));
            m.save(&with_suffix(&out, ".manifest.json"))?;
            if let Some(last) = run.curve.last() {
                println!("steps {} final loss {:.4} (sft {:.4} nce {:.4})", run.curve.len(), last.loss_total, last.loss_sft.unwrap_or(f64::NAN), last.loss_nce);
            }
            println!("fingerprint {}  ({:.1} s)", hex(&run.checkpoint.fingerprint()), t.elapsed().as_secs_f64());
        }
        Cmd::TrainRl { data, config, ckpt, out } => {
            let cfg = load_config(config.as_deref())?;
            let files = DataFiles::load(&data)?;
            let start = Checkpoint::load(&ckpt)?;
            let max_len = start.params.config.max_seq_len;
            let t = Instant::now();
            let examples = rl_examples(&files.vocab, &files.corpus, &files.rl_pairs, max_len)?;
            let probe = probe_examples(&files.vocab, &files.corpus, &files.eval, cfg.probe_queries, max_len)?;
            let run = rl_run(&cfg.train, &files.vocab, &examples, start, Some(&probe))?;
            run.checkpoint.save(&out)?;
            write_curve(&with_suffix(&out, ".curve.jsonl"), &run.curve)?;
            let mut m = RunManifest::default();
            m.set("stage", "rl");
            m.set("steps", run.curve.len());
            m.set("fingerprint", hex(&run.checkpoint.fingerprint()));
            if let (Some(a), Some(b)) = (run.probe_start, run.probe_end) {
                m.set("probe_reward_start", a.mean_reward);
                m.set("probe_reward_end", b.mean_reward);
                println!("probe reward {:.4} -> {:.4}", a.mean_reward, b.mean_reward);
            }
            m.save(&with_suffix(&out, ".manifest.json"))?;
            println!("steps {}", run.curve.len());
            println!("fingerprint {}  ({:.1} s)", hex(&run.checkpoint.fingerprint()), t.elapsed().as_secs_f64());
        }
        Cmd::BuildIndex { ckpt, data, out } => {
            let params = Checkpoint::load(&ckpt)?.params;
            let files = DataFiles::load(&data)?;
            let (index, skipped) = build_index(&params, &files.vocab, &files.corpus)?;
            index.save(&out)?;
            println!("indexed {} items ({} skipped), dim {}", index.len(), skipped, index.dim);
        }
        Cmd::Search { ckpt, index, data, query, mode, k, cot_len, seed } => {
            let params = Checkpoint::load(&ckpt)?.params;
            let files = DataFiles::load(&data)?;
            let index = load_index(&params, &index)?;
            let res = search(&params, &files.vocab, &index, &files.corpus, &query, mode, k, cot_len, seed)?;
            println!("cot: {}{}", res.cot, if res.fallback { "  (length cap hit, empty CoT used)" } else { "" });
            for h in &res.hits {
                println!("{:>6}  {:>8.5}  {}", h.id, h.score, h.title);
            }
        }
        Cmd::Eval { ckpt, index, data, queries, k, kp, mode, cot_len, seed, out } => {
            let params = Checkpoint::load(&ckpt)?.params;
            let files = DataFiles::load(&data)?;
            let index = load_index(&params, &index)?;
            let qs: Vec<EvalQueryRecord> = match queries {
                Some(p) => read_jsonl(&p)?,
                None => files.eval.clone(),
            };
            let modes: Vec<EvalMode> = if mode == "all" { EvalMode::ALL.to_vec() } else { vec![mode.parse()?] };
            let mut reports = Vec::new();
            for mode in modes {
                let settings = EvalSettings { mode, k, kp, cot_len, seed };
                let r = eval_run(&params, &files.vocab, &index, &qs, &settings)?;
                print!("{}", r.table());
                if mode == EvalMode::Lrem {
                    println!("format rate {:.4}, fallbacks {}", r.format_rate(), r.fallbacks);
                }
                reports.push(r);
            }
            if let Some(path) = out {
                if let [single] = reports.as_slice() {
                    single.save(&path)?;
                } else {
                    let json = serde_json::to_string_pretty(&reports)?;
                    std::fs::write(&path, json + "\n").map_err(|e| LremError::Io { path: path.clone(), source: e })?;
                }
            }
        }
        Cmd::Verify { suite } => {
            let suite: Suite = suite.parse()?;
            let checks = run_suite(suite)?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!("{c}");
            }
            println!("{} checks, {} failed", checks.len(), failed);
            if failed > 0 {
                return Err(LremError::NonFinite(format!("{failed} verification checks failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
