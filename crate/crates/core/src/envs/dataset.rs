//! Seeded query generation and line-delimited JSON storage.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Env, Query};
use crate::error::{Error, Result};

/// `count` queries with ids `first_id..first_id + count`.
pub fn generate_queries(env: &Env, count: usize, seed: u64, first_id: u64) -> Vec<Query> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count as u64)
        .map(|i| env.generate_query(first_id + i, &mut rng))
        .collect()
}

/// Train and eval sets drawn from independent streams; eval ids follow the
/// train ids so the two never share one.
pub fn split_train_eval(
    env: &Env,
    n_train: usize,
    n_eval: usize,
    seed: u64,
) -> (Vec<Query>, Vec<Query>) {
    let train = generate_queries(env, n_train, seed, 0);
    let eval = generate_queries(
        env,
        n_eval,
        seed ^ 0x9e37_79b9_7f4a_7c15,
        n_train as u64,
    );
    (train, eval)
}

pub fn write_dataset(path: &Path, queries: &[Query]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for q in queries {
        serde_json::to_writer(&mut out, q)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset file, rejecting malformed lines and repeated ids.
pub fn read_dataset(path: &Path) -> Result<Vec<Query>> {
    let reader = BufReader::new(File::open(path)?);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Query = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        if !seen.insert(q.id) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("duplicate query id {}", q.id),
            });
        }
        out.push(q);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvKind;

    #[test]
    fn round_trip_and_disjoint_split() {
        for kind in EnvKind::ALL {
            let env = Env::with_defaults(kind).unwrap();
            let (train, eval) = split_train_eval(&env, 20, 10, 3);
            let ids: HashSet<u64> = train.iter().map(|q| q.id).collect();
            assert!(eval.iter().all(|q| !ids.contains(&q.id)));
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("d.jsonl");
            write_dataset(&p, &train).unwrap();
            assert_eq!(read_dataset(&p).unwrap(), train);
            assert_eq!(generate_queries(&env, 20, 3, 0), train);
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let env = Env::with_defaults(EnvKind::KeyDoor).unwrap();
        let mut qs = generate_queries(&env, 2, 0, 0);
        qs[1].id = qs[0].id;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_dataset(&p, &qs).unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn record_fields() {
        let env = Env::with_defaults(EnvKind::KeyDoor).unwrap();
        let q = &generate_queries(&env, 1, 0, 0)[0];
        let v: serde_json::Value = serde_json::to_value(q).unwrap();
        for f in ["id", "kind", "description", "hidden_truth"] {
            assert!(v.get(f).is_some(), "{f}");
        }
    }
}
