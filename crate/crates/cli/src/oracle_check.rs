//! Identity checks against exhaustive enumeration on small random instances.

use std::sync::Arc;

use anyhow::Result;
use icrl::envs::{Env, EnvConfig};
use icrl::oracle::{check_calibration, enumerate, exact_gradient, exact_objective, solver_prompt};
use icrl::policy::{PolicyParams, TokenId};
use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NORMALIZATION_TOL: f64 = 1e-10;
const CALIBRATION_TOL: f64 = 1e-12;
const GRADIENT_TOL: f64 = 1e-7;
const FD_STEP: f64 = 1e-5;

pub struct Check {
    pub name: &'static str,
    pub worst: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            worst: 0.0,
            tolerance,
        }
    }

    fn record(&mut self, err: f64) {
        self.worst = self.worst.max(err);
    }

    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

fn small_envs() -> Result<Vec<Env>> {
    Ok(vec![
        Env::new(EnvConfig::KeyDoor { rooms: 2, horizon: 3 })?,
        Env::new(EnvConfig::AttrShop { horizon: 3 })?,
        Env::new(EnvConfig::HopChain { entities: 3, horizon: 3 })?,
    ])
}

fn norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Runs every identity on `instances` random (params, query, critique)
/// triples. The last entry reports the capped-weight bias, which is expected
/// to be nonzero and is informational.
pub fn run(instances: usize, seed: u64) -> Result<(Vec<Check>, f64)> {
    let envs = small_envs()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut norm_check = Check::new("ensemble normalization", NORMALIZATION_TOL);
    let mut calib = Check::new("calibration identity (uncapped)", CALIBRATION_TOL);
    let mut grad = Check::new("exact gradient vs finite differences", GRADIENT_TOL);
    let mut cap_bias: f64 = 0.0;
    for n in 0..instances {
        let env = &envs[n % envs.len()];
        let q = env.generate_query(n as u64, &mut rng);
        let mut p = PolicyParams::random(Arc::clone(env.vocab()), 4, 1.0, &mut rng)?;
        p.add_hint_prior(env.action_tokens(), 3.0);
        let critique: Vec<TokenId> = (0..rng.random_range(1..4))
            .map(|_| *env.action_tokens().choose(&mut rng).expect("actions"))
            .collect();

        let free = enumerate(&p, &solver_prompt(env, &q, None)?, env, &q)?;
        let guided = enumerate(&p, &solver_prompt(env, &q, Some(critique.clone()))?, env, &q)?;
        norm_check.record((free.total_probability() - 1.0).abs());
        norm_check.record((guided.total_probability() - 1.0).abs());

        let (l, r) = check_calibration(&p, env, &q, &critique, |t| t.reward, None)?;
        calib.record((l - r).abs());
        for target in &free.trajectories {
            let f = |t: &icrl::oracle::EnumeratedTrajectory| f64::from(u8::from(t.actions == target.actions));
            let (l, r) = check_calibration(&p, env, &q, &critique, f, None)?;
            calib.record((l - r).abs());
        }
        let (lc, rc) = check_calibration(&p, env, &q, &critique, |t| t.reward, Some(2.0))?;
        cap_bias = cap_bias.max((lc - rc).abs());

        if n < 3 {
            let g = exact_gradient(&free, &p)?;
            let mut fd = Array2::zeros(g.dim());
            let mut w = p.clone();
            for ((i, j), out) in fd.indexed_iter_mut() {
                let orig = w.weights()[[i, j]];
                w.weights_mut()[[i, j]] = orig + FD_STEP;
                let up = exact_objective(&enumerate(&w, &free.prompt, env, &q)?);
                w.weights_mut()[[i, j]] = orig - FD_STEP;
                let down = exact_objective(&enumerate(&w, &free.prompt, env, &q)?);
                w.weights_mut()[[i, j]] = orig;
                *out = (up - down) / (2.0 * FD_STEP);
            }
            let scale = norm(&g).max(norm(&fd));
            if scale > 0.0 {
                grad.record(norm(&(&g - &fd)) / scale);
            }
        }
    }
    Ok((vec![norm_check, calib, grad], cap_bias))
}
