//! Text checkpoint for policy weights.
//!
//! ```text
//! ICRL-POLICY-1
//! <V> <F> <m>
//! <row 0: F weights>
//! ...
//! <row V-1>
//! ```
//!
//! Weights are written in shortest round-trip exponent form, so a save/load
//! cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;

use super::params::PolicyParams;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

pub const POLICY_MAGIC: &str = "ICRL-POLICY-1";

pub fn encode(params: &PolicyParams) -> String {
    let w = params.weights();
    let mut out = String::with_capacity(w.len() * 12);
    out.push_str(POLICY_MAGIC);
    out.push('\n');
    let _ = writeln!(
        out,
        "{} {} {}",
        params.vocab_size(),
        params.feature_dim(),
        params.context_order()
    );
    for row in w.rows() {
        let line: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn decode(text: &str, vocab: Arc<Vocabulary>, path: &Path) -> Result<PolicyParams> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(POLICY_MAGIC) => {}
        other => return Err(bad(format!("expected magic {POLICY_MAGIC}, found {other:?}"))),
    }
    let header: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("missing header".into()))?
        .split_whitespace()
        .map(|s| s.parse::<usize>().map_err(|e| bad(format!("header: {e}"))))
        .collect::<Result<_>>()?;
    let [v, f, m] = header[..] else {
        return Err(bad(format!("header needs 3 fields, found {}", header.len())));
    };
    if v != vocab.len() || f != m * v + 2 {
        return Err(bad(format!(
            "header (V={v}, F={f}, m={m}) inconsistent with vocabulary of {} tokens",
            vocab.len()
        )));
    }
    let mut data = Vec::with_capacity(v * f);
    for (r, line) in lines.by_ref().take(v).enumerate() {
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(
                tok.parse::<f64>()
                    .map_err(|e| bad(format!("row {r}: {e}")))?,
            );
        }
        if data.len() - before != f {
            return Err(bad(format!("row {r} has {} values, expected {f}", data.len() - before)));
        }
    }
    if data.len() != v * f {
        return Err(bad(format!("expected {v} rows")));
    }
    let w = Array2::from_shape_vec((v, f), data).map_err(|e| bad(e.to_string()))?;
    PolicyParams::from_weights(vocab, m, w)
}

pub fn save(params: &PolicyParams, path: &Path) -> Result<()> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: &Path, vocab: Arc<Vocabulary>) -> Result<PolicyParams> {
    let text = fs::read_to_string(path)?;
    decode(&text, vocab, path)
}
