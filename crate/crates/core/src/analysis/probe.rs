//! Small MLP regression head scored by Spearman correlation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::stats::spearman;
use crate::error::{Error, Result};
use crate::neuralcore::{Tape, Tensor};
use crate::training::AdamW;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seeds: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 200,
            lr: 1e-3,
            batch_size: 128,
            seeds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

fn zscore_columns(train: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = train[0].len();
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    for row in train {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; d];
    for row in train {
        for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let std = std
        .into_iter()
        .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, std)
}

fn to_tensor(rows: &[Vec<f64>], mean: &[f64], std: &[f64]) -> Result<Tensor> {
    let d = mean.len();
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in rows {
        if r.len() != d {
            return Err(Error::invalid("probe feature vectors differ in length"));
        }
        data.extend(r.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s));
    }
    Tensor::new(rows.len(), d, data)
}

fn init_weights(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<Tensor> {
    use rand_distr::{Distribution, Normal};
    let n = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("positive std");
    Tensor::new(
        rows,
        cols,
        (0..rows * cols).map(|_| n.sample(rng)).collect(),
    )
}

/// Fits one seed's head on `(x_train, y_train)` and returns its predictions
/// for `x_test`.
fn fit_predict(
    x_train: &Tensor,
    y_train: &[f64],
    x_test: &Tensor,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let d = x_train.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![
        init_weights(&mut rng, d, cfg.hidden)?,
        Tensor::zeros(1, cfg.hidden),
        init_weights(&mut rng, cfg.hidden, 1)?,
        Tensor::zeros(1, 1),
    ];
    let mut opt = AdamW::new(&params, 0.0);
    let mut order: Vec<usize> = (0..x_train.rows()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut xb = Vec::with_capacity(chunk.len() * d);
            for &i in chunk {
                xb.extend_from_slice(x_train.row(i));
            }
            let yb = Tensor::new(chunk.len(), 1, chunk.iter().map(|&i| y_train[i]).collect())?;
            let mut tape = Tape::new();
            let vars: Vec<_> = params.iter().map(|p| tape.leaf(p.clone())).collect();
            let x = tape.constant(Tensor::new(chunk.len(), d, xb)?);
            let h = tape.linear(x, vars[0], vars[1]);
            let h = tape.gelu(h);
            let out = tape.linear(h, vars[2], vars[3]);
            let loss = tape.sq_dist_const(out, yb, 1.0 / chunk.len() as f64);
            let g = tape.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| g.wrt(&tape, v)).collect();
            opt.step(&mut params, &grads, cfg.lr)?;
        }
    }
    let mut tape = Tape::new();
    let vars: Vec<_> = params.into_iter().map(|p| tape.constant(p)).collect();
    let x = tape.constant(x_test.clone());
    let h = tape.linear(x, vars[0], vars[1]);
    let h = tape.gelu(h);
    let out = tape.linear(h, vars[2], vars[3]);
    Ok(tape.value(out).data().to_vec())
}

/// Regresses `train_labels` on `train_features` with a one-hidden-layer GELU
/// MLP per seed and reports the Spearman correlation of its predictions on
/// the test residues. Features and labels are z-scored on the training set.
pub fn rmsf_probe(
    train_features: &[Vec<f64>],
    train_labels: &[f64],
    test_features: &[Vec<f64>],
    test_labels: &[f64],
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    if train_features.len() != train_labels.len() || test_features.len() != test_labels.len() {
        return Err(Error::invalid("probe features and labels differ in count"));
    }
    if train_features.len() < 2 || test_features.len() < 3 || cfg.seeds == 0 {
        return Err(Error::invalid(
            "probe needs at least 2 training and 3 test residues, and one seed",
        ));
    }
    if train_labels
        .iter()
        .chain(test_labels)
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("probe labels".into()));
    }
    let n = train_labels.len() as f64;
    let y_mean = train_labels.iter().sum::<f64>() / n;
    let y_std = (train_labels
        .iter()
        .map(|y| (y - y_mean) * (y - y_mean))
        .sum::<f64>()
        / n)
        .sqrt();
    if !(y_std > 0.0) {
        return Err(Error::invalid("training labels are constant"));
    }
    let y: Vec<f64> = train_labels.iter().map(|v| (v - y_mean) / y_std).collect();
    let (mean, std) = zscore_columns(train_features);
    let x_train = to_tensor(train_features, &mean, &std)?;
    let x_test = to_tensor(test_features, &mean, &std)?;
    let mut per_seed = Vec::with_capacity(cfg.seeds);
    for s in 0..cfg.seeds {
        let pred = fit_predict(&x_train, &y, &x_test, cfg, seed.wrapping_add(s as u64))?;
        // A collapsed head predicts a constant and has no rank order.
        per_seed.push(spearman(&pred, test_labels).unwrap_or(0.0));
    }
    let k = per_seed.len() as f64;
    let mean = per_seed.iter().sum::<f64>() / k;
    let std = (per_seed
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / k)
        .sqrt();
    Ok(ProbeResult {
        per_seed,
        mean,
        std,
    })
}
