//! End-to-end properties of the training harness.

use std::io::Write;
use std::sync::{Arc, Mutex};

use icrl::envs::EnvKind;
use icrl::harness::metrics::{read_metrics_jsonl, write_ablation_csv, write_metrics_csv, write_metrics_jsonl};
use icrl::harness::{ablate, batch_terms, train, TrainConfig, Trainer, Variant};
use icrl::objective::{load_adam_state, save_adam_state};
use icrl::policy::checkpoint;
use icrl::rollout::collect_groups;

fn short(variant: Variant, seed: u64) -> TrainConfig {
    TrainConfig {
        variant,
        seed,
        steps: 12,
        eval_every: 6,
        ..TrainConfig::default()
    }
}

#[test]
fn runs_are_reproducible_and_seed_dependent() {
    let a = train(&short(Variant::Icrl, 3)).unwrap();
    let b = train(&short(Variant::Icrl, 3)).unwrap();
    let c = train(&short(Variant::Icrl, 4)).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.params.weights(), b.params.weights());
    assert_ne!(a.params.weights(), c.params.weights());
    assert_eq!(a.metrics.iter().filter(|m| m.eval.is_some()).count(), 2);
    assert_eq!(a.metrics.last().unwrap().eval.as_ref().unwrap().len(), 3);
}

#[test]
fn every_environment_trains() {
    for kind in EnvKind::ALL {
        let cfg = TrainConfig {
            steps: 3,
            eval_every: 3,
            ..TrainConfig::for_env(kind)
        };
        let out = train(&cfg).unwrap();
        assert_eq!(out.metrics.len(), 3);
        assert!(out.metrics.iter().all(|m| m.grad_norm.is_finite()));
    }
}

#[test]
fn single_attempt_matches_baseline_bitwise() {
    let mut icrl = short(Variant::Icrl, 5);
    icrl.max_rounds = 1;
    let grpo = TrainConfig {
        variant: Variant::Grpo,
        ..icrl.clone()
    };
    let a = train(&icrl).unwrap();
    let b = train(&grpo).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.params.weights(), b.params.weights());
}

#[test]
fn calibration_is_dropped_only_without_reweighting() {
    let t = Trainer::new(short(Variant::Icrl, 6)).unwrap();
    let groups: Vec<_> = t
        .rollout(1)
        .unwrap()
        .iter()
        .map(|s| collect_groups(s).unwrap())
        .collect();
    let guided = groups
        .iter()
        .flat_map(|g| &g.solver)
        .filter(|s| s.is_critique_guided())
        .map(|s| s.actions.len())
        .sum::<usize>();
    assert!(guided > 0);
    let with = batch_terms(t.params(), t.env(), &short(Variant::Icrl, 6), &groups).unwrap();
    let without = batch_terms(t.params(), t.env(), &short(Variant::NoReweight, 6), &groups).unwrap();
    assert_eq!(with.iter().filter(|x| x.calibration.is_some()).count(), guided);
    assert!(without.iter().all(|x| x.calibration.is_none()));
    assert_eq!(with.len(), without.len());
}

#[test]
fn ablation_covers_every_cell() {
    let base = TrainConfig {
        steps: 2,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let rows = ablate(&base, &Variant::ALL, &[0, 1]).unwrap();
    assert_eq!(rows.len(), 8);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.variant, Variant::ALL[i % 4]);
        assert_eq!(r.seed, (i / 4) as u64);
        assert_eq!(r.final_curve.len(), 3);
        assert_eq!(r.final_curve[0], r.final_round1_success);
        assert_eq!(r.metrics.len(), 2);
    }
    let grpo = rows.iter().find(|r| r.variant == Variant::Grpo).unwrap();
    assert!(grpo.metrics.iter().all(|m| m.critic_samples == 0));
    let dir = tempfile::tempdir().unwrap();
    write_ablation_csv(&dir.path().join("a.csv"), &rows).unwrap();
    let text = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(text.lines().count(), 9);
}

#[derive(Clone, Default)]
struct Shared(Arc<Mutex<Vec<u8>>>);

impl Write for Shared {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[test]
fn rollout_dump_has_one_line_per_session() {
    let cfg = short(Variant::Icrl, 7);
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let buf = Shared::default();
    t.set_rollout_dump(Box::new(buf.clone()));
    t.step().unwrap();
    t.step().unwrap();
    let text = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2 * cfg.batch_queries * cfg.group_size);
    assert_eq!(lines[0]["step"], 1);
    assert_eq!(lines.last().unwrap()["step"], 2);
}

#[test]
fn checkpoints_and_metrics_round_trip() {
    let mut t = Trainer::new(short(Variant::Icrl, 8)).unwrap();
    let metrics: Vec<_> = (0..3).map(|_| t.step().unwrap()).collect();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("policy.txt");
    let adam = dir.path().join("adam.txt");
    checkpoint::save(t.params(), &ckpt).unwrap();
    save_adam_state(t.adam_state(), &adam).unwrap();
    let p = checkpoint::load(&ckpt, Arc::clone(t.env().vocab())).unwrap();
    assert_eq!(p.weights(), t.params().weights());
    assert_eq!(&load_adam_state(&adam).unwrap(), t.adam_state());
    let j = dir.path().join("m.jsonl");
    write_metrics_jsonl(&j, &metrics).unwrap();
    assert_eq!(read_metrics_jsonl(&j).unwrap(), metrics);
    write_metrics_csv(&dir.path().join("m.csv"), &metrics).unwrap();
}

#[test]
fn solver_reward_rises_across_training_windows() {
    let mut rising = 0;
    for seed in 0..5 {
        let cfg = TrainConfig {
            seed,
            eval_every: 0,
            ..TrainConfig::default()
        };
        let m = train(&cfg).unwrap().metrics;
        let window = |k: usize| m[k * 200..(k + 1) * 200].iter().map(|x| x.solver_mean_reward).sum::<f64>();
        rising += usize::from(window(0) < window(1) && window(1) < window(2));
    }
    assert!(rising >= 4, "{rising}/5 seeds rise");
}
