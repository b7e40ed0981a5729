use proptest::prelude::*;

use super::*;
use crate::net::{finite_difference, max_relative_error, GRADCHECK_FLOOR};
use crate::pipeline::{generate, DataConfig, DataFiles};

fn micro_vocab() -> Vocab {
    Vocab::from_surface(["a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k"]).unwrap()
}

fn micro_examples(v: &Vocab) -> Vec<ColdExample> {
    let mk = |q: &str, cot: &str, item: &str| {
        let q = v.encode(q).unwrap();
        ColdExample {
            prompt_len: q.len() + 2,
            query: render_query_input(v, &q, Some(&v.encode(cot).unwrap()), 24).unwrap(),
            item: render_item_input(v, &v.encode(item).unwrap(), 24).unwrap(),
        }
    };
    vec![mk("a b", "c d", "c e f"), mk("g", "h i j", "k h")]
}

#[test]
fn schedule_examples() {
    assert_eq!(lr_schedule(0, 100, 0.5, 0.03), 0.0);
    assert_eq!(lr_schedule(3, 100, 0.5, 0.03), 0.5);
    assert!(lr_schedule(100, 100, 0.5, 0.03).abs() < 1e-15);
    assert!((lr_schedule(1, 100, 0.5, 0.03) - 0.5 / 3.0).abs() < 1e-15);
    // halfway through the decay
    assert!((lr_schedule(3 + 97 / 2, 100, 1.0, 0.03) - 0.5 * (1.0 + (std::f64::consts::PI * 48.0 / 97.0).cos())).abs() < 1e-12);
    assert_eq!(lr_schedule(0, 10, 0.5, 0.0), 0.5);
}

#[test]
fn cold_total_gradcheck_micro() {
    let v = micro_vocab();
    assert_eq!(v.len(), 16);
    let p = ModelParams::init(ModelConfig::micro(16), 8).unwrap();
    let ex = micro_examples(&v);
    let batch: Vec<&ColdExample> = ex.iter().collect();
    let w = LossWeights { tau: 0.5, ..LossWeights::default() };
    let (loss, analytic) = cold_gradients(&p, &batch, &w).unwrap();
    assert!((loss.total - (0.1 * loss.sft + loss.nce)).abs() < 1e-12);
    let numeric = finite_difference(&p, 1e-5, |q| Ok(cold_loss_value(q, &batch, &w)?.total)).unwrap();
    let err = max_relative_error(&analytic, &numeric, GRADCHECK_FLOOR);
    assert!(err <= 1e-5, "{err}");
}

#[test]
fn sft_part_matches_plain_token_mean() {
    let v = micro_vocab();
    let p = ModelParams::init(ModelConfig::micro(16), 8).unwrap();
    let ex = micro_examples(&v);
    let batch: Vec<&ColdExample> = ex.iter().collect();
    let loss = cold_loss_value(&p, &batch, &LossWeights::default()).unwrap();
    // oracle: forward each query, average -log p over every target after the prompt
    let (mut sum, mut n) = (0.0, 0);
    for e in &ex {
        let tr = p.forward(&e.query, None).unwrap();
        for pos in e.prompt_len - 1..e.query.len() - 1 {
            let row = tr.logits.row(pos);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            sum += lse - row[e.query.ids()[pos + 1] as usize];
            n += 1;
        }
    }
    assert_eq!(n, 4 + 5);
    assert!((loss.sft - sum / n as f64).abs() < 1e-12, "{} vs {}", loss.sft, sum / n as f64);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let p = ModelParams::init(ModelConfig::micro(16), 3).unwrap();
    let mut ck = Checkpoint::new(p.clone(), "cold", 12);
    ck.train = Some(TrainConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let _: u64 = rand::Rng::random(&mut rng);
    ck.rng = Some(RngState::of(&rng));
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    let mut r2 = back.rng.unwrap().restore();
    assert_eq!(rand::Rng::random::<u64>(&mut r2), rand::Rng::random::<u64>(&mut rng));
    let toks = TokenSeq(vec![1, 7, 8, 2, 9, 3, 4]);
    assert_eq!(back.params.forward(&toks, None).unwrap(), p.forward(&toks, None).unwrap());

    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(LremError::Format { .. })));

    // flipping a stored value breaks the fingerprint
    ck.save(&path).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 1;
    fs::write(&path, &bytes).unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn fingerprint_changes_after_a_step() {
    let v = micro_vocab();
    let mut p = ModelParams::init(ModelConfig::micro(16), 3).unwrap();
    let before = p.fingerprint();
    let ex = micro_examples(&v);
    let batch: Vec<&ColdExample> = ex.iter().collect();
    let (_, g) = cold_gradients(&p, &batch, &LossWeights::default()).unwrap();
    Optimizer::new(OptimizerKind::Sgd, &p).step(&mut p, &g, 1e-3).unwrap();
    assert_ne!(before, p.fingerprint());
}

fn small_data() -> DataFiles {
    let ds = generate(&DataConfig {
        items: 300,
        queries_per_category: 10,
        eval_per_category: 4,
        ..DataConfig::default()
    })
    .unwrap();
    DataFiles::from_dataset(&ds)
}

#[test]
fn initial_cold_loss_near_uniform_closed_form() {
    let data = small_data();
    let cfg = TrainConfig::default();
    let mc = ModelConfig::desk(data.vocab.len());
    let ex = cold_examples(&data.vocab, &data.corpus, &data.triplets, cfg.cot_max, mc.max_seq_len).unwrap();
    let p = ModelParams::init(mc, cfg.seed_model).unwrap();
    let batch: Vec<&ColdExample> = ex.iter().take(cfg.batch_cold).collect();
    let loss = cold_loss_value(&p, &batch, &cfg.weights()).unwrap();
    let expect = cfg.lambda_sft * (data.vocab.len() as f64).ln() + cfg.lambda_nce * (cfg.batch_cold as f64).ln();
    assert!((loss.total - expect).abs() <= 0.2 * expect, "{} vs {expect}", loss.total);
}

#[test]
fn short_cold_run_is_deterministic() {
    let data = small_data();
    let cfg = TrainConfig {
        batch_cold: 8,
        ..TrainConfig::default()
    };
    let mc = ModelConfig {
        n_layers: 1,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        ..ModelConfig::desk(data.vocab.len())
    };
    let ex = cold_examples(&data.vocab, &data.corpus, &data.triplets, cfg.cot_max, mc.max_seq_len).unwrap();
    let ex = &ex[..40];
    let a = cold_start_run(&cfg, ex, ModelParams::init(mc, 1).unwrap()).unwrap();
    let b = cold_start_run(&cfg, ex, ModelParams::init(mc, 1).unwrap()).unwrap();
    assert_eq!(a.checkpoint.fingerprint(), b.checkpoint.fingerprint());
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.curve.len(), 5);
    assert_eq!(a.checkpoint.step, 5);
    assert!(a.curve.iter().all(|r| r.loss_sft.is_some() && r.loss_grpo.is_none()));

    let rl = rl_examples(&data.vocab, &data.corpus, &data.rl_pairs, mc.max_seq_len).unwrap();
    let probe = probe_examples(&data.vocab, &data.corpus, &data.eval, 4, mc.max_seq_len).unwrap();
    let rcfg = TrainConfig {
        batch_rl: 4,
        group_size: 2,
        ..cfg
    };
    let r1 = rl_run(&rcfg, &data.vocab, &rl, a.checkpoint.clone(), Some(&probe)).unwrap();
    let r2 = rl_run(&rcfg, &data.vocab, &rl, a.checkpoint.clone(), Some(&probe)).unwrap();
    assert_eq!(r1.checkpoint.fingerprint(), r2.checkpoint.fingerprint());
    assert_eq!(r1.curve.len(), r1.checkpoint.step - 5);
    assert!(r1.probe_start.is_some() && r1.probe_end.is_some());
    assert!(r1.curve.iter().all(|r| r.mean_reward.is_some() && r.loss_grpo.is_some()));
}

#[test]
fn rl_batches_hold_distinct_queries() {
    let ex: Vec<RlExample> = (0..40)
        .map(|i| RlExample {
            query_id: (i % 7) as u64,
            prompt: TokenSeq(vec![1, 2]),
            item: TokenSeq(vec![1, 4]),
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batches = rl_batches(&ex, 5, &mut rng);
    let mut used = 0;
    for b in &batches {
        assert!(b.len() >= 2 && b.len() <= 5);
        let q: std::collections::HashSet<u64> = b.iter().map(|&i| ex[i].query_id).collect();
        assert_eq!(q.len(), b.len());
        used += b.len();
    }
    assert!(used >= 38);
}

proptest! {
    #[test]
    fn schedule_shape(total in 1usize..400, ratio in 0.0f64..0.9, peak in 1e-4f64..1.0) {
        let warm = (ratio * total as f64).ceil() as usize;
        let lrs: Vec<f64> = (0..=total).map(|s| lr_schedule(s, total, peak, ratio)).collect();
        for s in 1..=total {
            if s <= warm {
                prop_assert!(lrs[s] >= lrs[s - 1]);
            } else {
                prop_assert!(lrs[s] <= lrs[s - 1] + 1e-15);
            }
            prop_assert!(lrs[s] >= 0.0 && lrs[s] <= peak * (1.0 + 1e-12));
        }
    }
}

