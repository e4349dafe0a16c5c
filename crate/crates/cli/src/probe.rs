//! Speaker-leakage probe: a small freshly trained classifier over frozen
//! acoustic embeddings. Low test accuracy means the embeddings carry
//! little speaker information.

use spontts_core::nn::{Adam, AdamConfig, Graph, Linear, ParamStore};
use spontts_core::util::splitmix64;
use spontts_core::{Error, Mat, Real, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

const PROBE_HIDDEN: usize = 16;
const PROBE_EPOCHS: usize = 200;
const PROBE_LR: Real = 1e-2;
/// Minimum examples per speaker the probe will accept.
pub const MIN_PER_SPEAKER: usize = 20;

/// Trains a fresh 2-layer probe on a 70/30 split of the embeddings and
/// returns its held-out accuracy. Deterministic given the seed.
pub fn probe_speaker(embeddings: &[(Vec<Real>, u8)], seed: u64) -> Result<Real> {
    if embeddings.is_empty() {
        return Err(Error::Config("no embeddings given".into()));
    }
    let dim = embeddings[0].0.len();
    if embeddings.iter().any(|(e, _)| e.len() != dim) {
        return Err(Error::Shape("embedding widths differ".into()));
    }
    let mut counts = [0usize; 2];
    for (_, label) in embeddings {
        if *label > 1 {
            return Err(Error::Config(format!("speaker label {label} out of range")));
        }
        counts[*label as usize] += 1;
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::Config(
            "single-class input: probe needs both speakers".into(),
        ));
    }
    if counts.iter().any(|&c| c < MIN_PER_SPEAKER) {
        return Err(Error::Config(format!(
            "need at least {MIN_PER_SPEAKER} embeddings per speaker, got {counts:?}"
        )));
    }

    let mut order: Vec<usize> = (0..embeddings.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x7072_6f62_6500));
    order.shuffle(&mut rng);
    let train_n = ((0.7 * embeddings.len() as Real).floor() as usize)
        .clamp(1, embeddings.len() - 1);
    let (train_idx, test_idx) = order.split_at(train_n);

    let as_batch = |idx: &[usize]| -> (Mat, Vec<usize>) {
        let mut x = Mat::zeros((idx.len(), dim));
        let mut y = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            for (c, v) in embeddings[i].0.iter().enumerate() {
                x[[r, c]] = *v;
            }
            y.push(embeddings[i].1 as usize);
        }
        (x, y)
    };
    let (train_x, train_y) = as_batch(train_idx);
    let (test_x, test_y) = as_batch(test_idx);
    if train_y.iter().all(|&y| y == train_y[0]) {
        return Err(Error::Config(
            "train split collapsed to one speaker; give more data".into(),
        ));
    }

    let mut store = ParamStore::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x7072_6f62_6531));
    let fc1 = Linear::new(&mut store, "probe.fc1", dim, PROBE_HIDDEN, &mut init_rng);
    let fc2 = Linear::new(&mut store, "probe.fc2", PROBE_HIDDEN, 2, &mut init_rng);
    let mut opt = Adam::new(
        AdamConfig {
            lr: PROBE_LR,
            clip_norm: None,
            ..AdamConfig::default()
        },
        &store,
    );
    let weights = vec![1.0; train_y.len()];
    for _ in 0..PROBE_EPOCHS {
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let x = g.constant(train_x.clone());
        let h = fc1.apply(&mut g, &bind, x);
        let h = g.relu(h);
        let logits = fc2.apply(&mut g, &bind, h);
        let loss = g.cross_entropy(logits, &train_y, &weights);
        let grads = g.backward(loss);
        opt.step(&mut store, &bind, &grads);
    }

    let mut g = Graph::new();
    let bind = store.bind(&mut g);
    let x = g.constant(test_x);
    let h = fc1.apply(&mut g, &bind, x);
    let h = g.relu(h);
    let logits = fc2.apply(&mut g, &bind, h);
    let out = g.value(logits);
    let mut hits = 0usize;
    for (r, &gold) in test_y.iter().enumerate() {
        let pred = if out[[r, 1]] > out[[r, 0]] { 1 } else { 0 };
        hits += (pred == gold) as usize;
    }
    Ok(hits as Real / test_y.len() as Real)
}

/// Loads `<id>.melf` files (1 x D matrices) from a directory together with
/// a JSON label map `{id: speaker}`.
pub fn load_embedding_files(
    embeddings_dir: &Path,
    labels_path: &Path,
) -> Result<Vec<(Vec<Real>, u8)>> {
    let text = std::fs::read_to_string(labels_path)?;
    let labels: BTreeMap<String, u8> =
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(labels.len());
    for (id, label) in labels {
        let path = embeddings_dir.join(format!("{id}.melf"));
        let m = spontts_core::corpus::read_matrix(&path)?;
        if m.nrows() != 1 {
            return Err(Error::Shape(format!(
                "{}: expected a 1-row embedding, got {} rows",
                path.display(),
                m.nrows()
            )));
        }
        out.push((m.row(0).to_vec(), label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separable_one_hot_embeddings_probe_to_perfect_accuracy() {
        let mut data = Vec::new();
        for i in 0..50 {
            let s = (i % 2) as u8;
            let mut e = vec![0.0; 2];
            e[s as usize] = 1.0;
            data.push((e, s));
        }
        let acc = probe_speaker(&data, 1).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn pure_noise_probes_to_chance_level() {
        let mut accs = Vec::new();
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(900 + seed));
            let data: Vec<(Vec<Real>, u8)> = (0..200)
                .map(|i| {
                    let e: Vec<Real> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
                    (e, (i % 2) as u8)
                })
                .collect();
            accs.push(probe_speaker(&data, seed).unwrap());
        }
        let mean = accs.iter().sum::<Real>() / accs.len() as Real;
        assert!(
            (0.4..=0.6).contains(&mean),
            "noise probe should sit near 0.5, got {mean} ({accs:?})"
        );
    }

    #[test]
    fn single_class_and_small_inputs_are_rejected() {
        let one_class: Vec<(Vec<Real>, u8)> = (0..60).map(|_| (vec![0.0; 4], 0u8)).collect();
        assert!(probe_speaker(&one_class, 0).is_err());
        let too_few: Vec<(Vec<Real>, u8)> = (0..10)
            .map(|i| (vec![0.0; 4], (i % 2) as u8))
            .collect();
        assert!(probe_speaker(&too_few, 0).is_err());
    }

    #[test]
    fn probe_is_deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<(Vec<Real>, u8)> = (0..80)
            .map(|i| {
                let s = (i % 2) as u8;
                let e: Vec<Real> = (0..8)
                    .map(|_| rng.random_range(-1.0..1.0) + 0.3 * s as Real)
                    .collect();
                (e, s)
            })
            .collect();
        assert_eq!(
            probe_speaker(&data, 42).unwrap(),
            probe_speaker(&data, 42).unwrap()
        );
    }
}
