//! The full desk experiment: data, cold start, RL, index, four-mode evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{LremError, Result};
use crate::net::container::hex;
use crate::net::{ModelConfig, ModelParams};
use crate::pipeline::{generate, DataConfig, DataFiles, QueryCategory, Stats};
use crate::retrieval::{build_index, eval_run, EvalMode, EvalReport, EvalSettings};
use crate::trainer::{
    cold_examples, cold_start_run, probe_examples, rl_examples, rl_run, write_curve, Checkpoint, CurveRecord,
    ProbeStats, TrainConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    /// `vocab_size` is replaced by the generated vocabulary's size.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub k: usize,
    pub kp: usize,
    pub probe_queries: usize,
    pub eval_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig::default(),
            model: ModelConfig::desk(0),
            train: TrainConfig::default(),
            k: 50,
            kp: 10,
            probe_queries: 32,
            eval_seed: 11,
        }
    }
}

/// A few-second configuration for examples and tests: 300 items, a
/// 1-layer model and short training.
pub const SMOKE_CONFIG: &str = "\
items = 300
queries_per_category = 15
eval_per_category = 5
n_layers = 1
d_model = 32
d_ff = 64
optimizer_cold = adam
lr_cold = 3e-3
epochs_cold = 40
lr_rl = 1e-3
probe_queries = 8
k = 20
kp = 5
";

impl ExperimentConfig {
    pub fn smoke() -> Self {
        ExperimentConfig::parse(SMOKE_CONFIG).expect("smoke config is valid")
    }
}

/// Everything the run measured. Two runs with the same config must produce
/// equal reports; wall-clock lives in [`Timings`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub stats: Stats,
    pub vocab_size: usize,
    pub cold_steps: usize,
    pub rl_steps: usize,
    pub cold_fingerprint: String,
    pub rl_fingerprint: String,
    pub cold_final_loss: f64,
    pub probe_start: ProbeStats,
    pub probe_end: ProbeStats,
    pub cold_eval: BTreeMap<String, EvalReport>,
    pub rl_eval: BTreeMap<String, EvalReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub data_s: f64,
    pub cold_s: f64,
    pub rl_s: f64,
    pub eval_s: f64,
    pub total_s: f64,
}

pub struct Experiment {
    pub report: ExperimentReport,
    pub timings: Timings,
    pub cold: Checkpoint,
    pub rl: Checkpoint,
    pub cold_curve: Vec<CurveRecord>,
    pub rl_curve: Vec<CurveRecord>,
}

/// The alternative + negative queries, where the query alone does not name
/// the target's tokens.
pub const BRIDGING_SLICE: [QueryCategory; 2] = [QueryCategory::Alternative, QueryCategory::Negative];

impl ExperimentReport {
    fn eval(&self, rl: bool, mode: EvalMode) -> Result<&EvalReport> {
        let table = if rl { &self.rl_eval } else { &self.cold_eval };
        table
            .get(mode.as_str())
            .ok_or_else(|| LremError::InvalidArgument(format!("no {mode} report")))
    }

    /// Overall HitRate@K of the final model in `mode`.
    pub fn final_hitrate(&self, mode: EvalMode) -> Result<f64> {
        Ok(self.eval(true, mode)?.overall.hitrate)
    }

    pub fn cold_hitrate(&self, mode: EvalMode) -> Result<f64> {
        Ok(self.eval(false, mode)?.overall.hitrate)
    }

    pub fn bridging_margin(&self) -> Result<f64> {
        Ok(self.eval(true, EvalMode::Lrem)?.slice_hitrate(&BRIDGING_SLICE)
            - self.eval(true, EvalMode::EmptyCot)?.slice_hitrate(&BRIDGING_SLICE))
    }

    pub fn cold_format_rate(&self) -> Result<f64> {
        Ok(self.eval(false, EvalMode::Lrem)?.format_rate())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (label, table) in [("cold", &self.cold_eval), ("final", &self.rl_eval)] {
            s.push_str(&format!("{label:<6}"));
            for mode in EvalMode::ALL {
                if let Some(r) = table.get(mode.as_str()) {
                    s.push_str(&format!(
                        "  {}: HR@{} {:.4} P@{} {:.4}",
                        mode, r.k, r.overall.hitrate, r.kp, r.overall.precision
                    ));
                }
            }
            s.push('\n');
        }
        s.push_str(&format!(
            "probe reward {:.4} -> {:.4}, cold format rate {:.3}\n",
            self.probe_start.mean_reward,
            self.probe_end.mean_reward,
            self.cold_format_rate().unwrap_or(f64::NAN)
        ));
        s
    }
}

fn eval_all(params: &ModelParams, data: &DataFiles, cfg: &ExperimentConfig) -> Result<BTreeMap<String, EvalReport>> {
    let (index, _) = build_index(params, &data.vocab, &data.corpus)?;
    let mut out = BTreeMap::new();
    for mode in EvalMode::ALL {
        let settings = EvalSettings {
            mode,
            k: cfg.k,
            kp: cfg.kp,
            cot_len: cfg.train.cot_max,
            seed: cfg.eval_seed,
        };
        out.insert(mode.to_string(), eval_run(params, &data.vocab, &index, &data.eval, &settings)?);
    }
    Ok(out)
}

/// Runs the experiment end to end. With `out` set, data files, both
/// checkpoints, curves and the report are written there.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Experiment> {
    let t0 = Instant::now();
    let ds = generate(&cfg.data)?;
    let data = DataFiles::from_dataset(&ds);
    if let Some(dir) = out {
        ds.write(&dir.join("data"))?;
    }
    let mut model = cfg.model;
    model.vocab_size = data.vocab.len();
    let data_s = t0.elapsed().as_secs_f64();

    let t = Instant::now();
    let examples = cold_examples(&data.vocab, &data.corpus, &data.triplets, cfg.train.cot_max, model.max_seq_len)?;
    let init = ModelParams::init(model, cfg.train.seed_model)?;
    let cold = cold_start_run(&cfg.train, &examples, init)?;
    let cold_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let cold_eval = eval_all(&cold.checkpoint.params, &data, cfg)?;
    let mut eval_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let rl_ex = rl_examples(&data.vocab, &data.corpus, &data.rl_pairs, model.max_seq_len)?;
    let probe = probe_examples(&data.vocab, &data.corpus, &data.eval, cfg.probe_queries, model.max_seq_len)?;
    let rl = rl_run(&cfg.train, &data.vocab, &rl_ex, cold.checkpoint.clone(), Some(&probe))?;
    let rl_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let rl_eval = eval_all(&rl.checkpoint.params, &data, cfg)?;
    eval_s += t.elapsed().as_secs_f64();

    let missing = || LremError::InvalidArgument("probe was not run".into());
    let report = ExperimentReport {
        stats: ds.output.stats.clone(),
        vocab_size: data.vocab.len(),
        cold_steps: cold.curve.len(),
        rl_steps: rl.curve.len(),
        cold_fingerprint: hex(&cold.checkpoint.fingerprint()),
        rl_fingerprint: hex(&rl.checkpoint.fingerprint()),
        cold_final_loss: cold.curve.last().map_or(f64::NAN, |c| c.loss_total),
        probe_start: rl.probe_start.ok_or_else(missing)?,
        probe_end: rl.probe_end.ok_or_else(missing)?,
        cold_eval,
        rl_eval,
    };
    let timings = Timings {
        data_s,
        cold_s,
        rl_s,
        eval_s,
        total_s: t0.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        cold.checkpoint.save(&dir.join("cold.ckpt"))?;
        rl.checkpoint.save(&dir.join("rl.ckpt"))?;
        write_curve(&dir.join("curve_cold.jsonl"), &cold.curve)?;
        write_curve(&dir.join("curve_rl.jsonl"), &rl.curve)?;
        let path = dir.join("report.json");
        let json = serde_json::to_string_pretty(&report)?;
        fs::write(&path, json + "\n").map_err(|e| LremError::io(&path, e))?;
    }
    Ok(Experiment {
        report,
        timings,
        cold: cold.checkpoint,
        rl: rl.checkpoint,
        cold_curve: cold.curve,
        rl_curve: rl.curve,
    })
}
