//! Adam ascent with decoupled weight decay, plus its text sidecar format.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::OptimizerConfig;
use crate::error::{Error, Result};
use crate::policy::PolicyParams;

pub const ADAM_MAGIC: &str = "ICRL-ADAM-1";

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Array2<f64>,
    pub v: Array2<f64>,
}

impl AdamState {
    pub fn new(shape: (usize, usize)) -> Self {
        Self {
            step: 0,
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
        }
    }

    pub fn for_params(params: &PolicyParams) -> Self {
        Self::new(params.weights().dim())
    }
}

/// One ascent step on the objective whose gradient is `grad`. A non-finite
/// gradient aborts the step and leaves both `params` and `state` untouched.
pub fn optimizer_step(
    params: &mut PolicyParams,
    grad: &Array2<f64>,
    cfg: &OptimizerConfig,
    state: &mut AdamState,
) -> Result<()> {
    let dim = params.weights().dim();
    if grad.dim() != dim || state.m.dim() != dim || state.v.dim() != dim {
        return Err(Error::InvalidInput(format!(
            "shape mismatch: params {dim:?}, gradient {:?}, state {:?}",
            grad.dim(),
            state.m.dim()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient entry at flat index {i}; step aborted"
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let lr = cfg.learning_rate;
    let decay = lr * cfg.weight_decay;
    let w = params.weights_mut();
    ndarray::Zip::from(w)
        .and(&mut state.m)
        .and(&mut state.v)
        .and(grad)
        .for_each(|w, m, v, &g| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w += lr * m_hat / (v_hat.sqrt() + cfg.adam_eps) - decay * *w;
        });
    Ok(())
}

fn write_matrix(out: &mut String, a: &Array2<f64>) {
    for row in a.rows() {
        let line: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

pub fn save_adam_state(state: &AdamState, path: &Path) -> Result<()> {
    let (r, c) = state.m.dim();
    let mut out = format!("{ADAM_MAGIC}\n{} {r} {c}\n", state.step);
    write_matrix(&mut out, &state.m);
    write_matrix(&mut out, &state.v);
    fs::write(path, out)?;
    Ok(())
}

pub fn load_adam_state(path: &Path) -> Result<AdamState> {
    let text = fs::read_to_string(path)?;
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some(ADAM_MAGIC) {
        return Err(bad(format!("expected magic {ADAM_MAGIC}")));
    }
    let header: Vec<u64> = lines
        .next()
        .ok_or_else(|| bad("missing header".into()))?
        .split_whitespace()
        .map(|s| s.parse().map_err(|e| bad(format!("header: {e}"))))
        .collect::<Result<_>>()?;
    let [step, r, c] = header[..] else {
        return Err(bad("header must hold step, rows, cols".into()));
    };
    let (r, c) = (r as usize, c as usize);
    let mut read = |name: &str| -> Result<Array2<f64>> {
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("{name}: missing row {i}")))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse().map_err(|e| bad(format!("{name} row {i}: {e}"))))
                .collect::<Result<_>>()?;
            if row.len() != c {
                return Err(bad(format!("{name} row {i} has {} values, expected {c}", row.len())));
            }
            data.extend(row);
        }
        Array2::from_shape_vec((r, c), data).map_err(|e| bad(e.to_string()))
    };
    let m = read("m")?;
    let v = read("v")?;
    Ok(AdamState { step, m, v })
}
