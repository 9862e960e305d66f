//! Residual vector quantization with EMA codebooks.
//!
//! Level `ℓ` quantizes the residual left by levels `1..ℓ`; the quantized
//! embedding is the sum of the selected codewords. Codewords are never
//! trained by gradient: each tracks the running mean of the inputs assigned
//! to it, and codes whose running count falls below a threshold are reseeded
//! from the current batch.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::neuralcore::Tensor;

pub const DEFAULT_DECAY: f64 = 0.99;
pub const DEFAULT_REVIVAL_THRESHOLD: f64 = 1.0;

/// One codebook with its EMA state.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookLevel {
    codewords: Tensor,
    ema_count: Vec<f64>,
    ema_sum: Tensor,
}

impl CodebookLevel {
    /// Codebook with unit counts and sums equal to the codewords.
    pub fn new(codewords: Tensor) -> Result<Self> {
        let counts = vec![1.0; codewords.rows()];
        let sums = codewords.clone();
        Self::from_parts(codewords, counts, sums)
    }

    pub fn from_parts(codewords: Tensor, ema_count: Vec<f64>, ema_sum: Tensor) -> Result<Self> {
        if codewords.rows() == 0 || codewords.cols() == 0 {
            return Err(Error::invalid(
                "codebook must have at least one codeword of positive dimension",
            ));
        }
        if ema_count.len() != codewords.rows() || ema_sum.shape() != codewords.shape() {
            return Err(Error::invalid(
                "codebook EMA state does not match the codewords",
            ));
        }
        if ema_count.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
            return Err(Error::invalid("EMA counts must be positive"));
        }
        if !codewords.is_finite() || !ema_sum.is_finite() {
            return Err(Error::NonFinite("codebook".into()));
        }
        Ok(Self {
            codewords,
            ema_count,
            ema_sum,
        })
    }

    pub fn size(&self) -> usize {
        self.codewords.rows()
    }

    pub fn dim(&self) -> usize {
        self.codewords.cols()
    }

    pub fn codewords(&self) -> &Tensor {
        &self.codewords
    }

    pub fn codeword(&self, i: usize) -> &[f64] {
        self.codewords.row(i)
    }

    pub fn ema_count(&self) -> &[f64] {
        &self.ema_count
    }

    pub fn ema_sum(&self) -> &Tensor {
        &self.ema_sum
    }

    /// Index of the nearest codeword (lower index on ties) and the squared
    /// distance to it.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for i in 0..self.size() {
            let d: f64 = self
                .codeword(i)
                .iter()
                .zip(x)
                .map(|(c, v)| (c - v) * (c - v))
                .sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }
}

/// Per-residue quantization result.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    /// `(c_1, …, c_K)`.
    pub tokens: Vec<usize>,
    /// Sum of the selected codewords.
    pub quantized: Vec<f64>,
    /// `‖z − C¹_{c_1}‖`.
    pub latent_distance: f64,
}

fn check_levels(levels: &[CodebookLevel], dim: usize) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::invalid(
            "residual quantization needs at least one level",
        ));
    }
    if let Some(l) = levels.iter().find(|l| l.dim() != dim) {
        return Err(Error::invalid(format!(
            "codebook dimension {} does not match latent dimension {dim}",
            l.dim()
        )));
    }
    Ok(())
}

/// Quantizes `z` level by level. Returns the token record and the residuals
/// `ρ_0 = z, …, ρ_K`.
pub fn quantize(z: &[f64], levels: &[CodebookLevel]) -> Result<(TokenRecord, Vec<Vec<f64>>)> {
    check_levels(levels, z.len())?;
    let mut residuals = vec![z.to_vec()];
    let mut tokens = Vec::with_capacity(levels.len());
    let mut q = vec![0.0; z.len()];
    for level in levels {
        let rho = residuals.last().expect("non-empty");
        let (c, _) = level.nearest(rho);
        let cw = level.codeword(c);
        let next: Vec<f64> = rho.iter().zip(cw).map(|(r, e)| r - e).collect();
        for (qv, e) in q.iter_mut().zip(cw) {
            *qv += e;
        }
        tokens.push(c);
        residuals.push(next);
    }
    let c1 = levels[0].codeword(tokens[0]);
    let latent_distance = z
        .iter()
        .zip(c1)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok((
        TokenRecord {
            tokens,
            quantized: q,
            latent_distance,
        },
        residuals,
    ))
}

/// Quantization of a `B × d_z` batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchQuantization {
    /// `B` token tuples.
    pub tokens: Vec<Vec<usize>>,
    /// `B × d_z` quantized embeddings.
    pub quantized: Tensor,
    /// Per level, the `B × d_z` level inputs `ρ_{ℓ−1}`.
    pub level_inputs: Vec<Tensor>,
    /// Per level, the `B × d_z` partial sums `Σ_{m≤ℓ} C^m_{c_m}`.
    pub partial_sums: Vec<Tensor>,
    pub latent_distances: Vec<f64>,
}

pub fn quantize_batch(z: &Tensor, levels: &[CodebookLevel]) -> Result<BatchQuantization> {
    check_levels(levels, z.cols())?;
    let (b, d) = z.shape();
    let k = levels.len();
    let mut out = BatchQuantization {
        tokens: Vec::with_capacity(b),
        quantized: Tensor::zeros(b, d),
        level_inputs: vec![Tensor::zeros(b, d); k],
        partial_sums: vec![Tensor::zeros(b, d); k],
        latent_distances: Vec::with_capacity(b),
    };
    for r in 0..b {
        let (rec, residuals) = quantize(z.row(r), levels)?;
        let mut acc = vec![0.0; d];
        for (l, level) in levels.iter().enumerate() {
            out.level_inputs[l]
                .row_mut(r)
                .copy_from_slice(&residuals[l]);
            for (a, e) in acc.iter_mut().zip(level.codeword(rec.tokens[l])) {
                *a += e;
            }
            out.partial_sums[l].row_mut(r).copy_from_slice(&acc);
        }
        out.quantized.row_mut(r).copy_from_slice(&rec.quantized);
        out.tokens.push(rec.tokens);
        out.latent_distances.push(rec.latent_distance);
    }
    Ok(out)
}

/// EMA update: `N ← γN + (1−γ)n`, `m ← γm + (1−γ)Σρ`, `e ← m/N`, with `n`
/// and `Σρ` the count and sum of the inputs assigned to each code.
pub fn ema_update(
    level: &mut CodebookLevel,
    assigned: &[(usize, &[f64])],
    gamma: f64,
) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!(
            "EMA decay must lie in (0, 1), got {gamma}"
        )));
    }
    let (m, d) = level.codewords.shape();
    let mut counts = vec![0.0; m];
    let mut sums = Tensor::zeros(m, d);
    for &(c, x) in assigned {
        if c >= m || x.len() != d {
            return Err(Error::invalid(format!(
                "assignment to code {c} of a {m}-code, {d}-dim codebook"
            )));
        }
        counts[c] += 1.0;
        for (s, v) in sums.row_mut(c).iter_mut().zip(x) {
            *s += v;
        }
    }
    for i in 0..m {
        level.ema_count[i] = gamma * level.ema_count[i] + (1.0 - gamma) * counts[i];
        let n = level.ema_count[i];
        for j in 0..d {
            let s = gamma * level.ema_sum.get(i, j) + (1.0 - gamma) * sums.get(i, j);
            level.ema_sum.row_mut(i)[j] = s;
            level.codewords.row_mut(i)[j] = s / n;
        }
    }
    Ok(())
}

/// Reseeds every code with `N_i < threshold` to a uniformly drawn row of
/// `batch`, resetting `N_i = 1` and `m_i` to the new codeword. Returns the
/// revived indices.
pub fn revive_dead(
    level: &mut CodebookLevel,
    batch: &Tensor,
    threshold: f64,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if batch.rows() == 0 {
        return Err(Error::invalid("dead-code revival needs a non-empty batch"));
    }
    if batch.cols() != level.dim() {
        return Err(Error::invalid(
            "batch dimension does not match the codebook",
        ));
    }
    let mut revived = Vec::new();
    for i in 0..level.size() {
        if level.ema_count[i] < threshold {
            let pick = rng.random_range(0..batch.rows());
            let v = batch.row(pick).to_vec();
            level.codewords.row_mut(i).copy_from_slice(&v);
            level.ema_sum.row_mut(i).copy_from_slice(&v);
            level.ema_count[i] = 1.0;
            revived.push(i);
        }
    }
    Ok(revived)
}

fn assign_all(centers: &Tensor, samples: &Tensor) -> Vec<usize> {
    let level = CodebookLevel {
        codewords: centers.clone(),
        ema_count: vec![1.0; centers.rows()],
        ema_sum: centers.clone(),
    };
    (0..samples.rows())
        .map(|r| level.nearest(samples.row(r)).0)
        .collect()
}

/// Lloyd's k-means from a uniformly drawn subset of `samples`. With no more
/// samples than codes, the codebook is the samples followed by jittered
/// copies. Counts start at the final cluster sizes (at least 1).
pub fn kmeans_init(
    capacity: usize,
    samples: &Tensor,
    iterations: usize,
    seed: u64,
) -> Result<CodebookLevel> {
    let (n, d) = samples.shape();
    if n == 0 || capacity == 0 {
        return Err(Error::invalid(
            "k-means needs at least one sample and one code",
        ));
    }
    if !samples.is_finite() {
        return Err(Error::NonFinite("k-means samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Tensor::zeros(capacity, d);
    if n <= capacity {
        let rms = (samples.sum_squares() / (n * d) as f64).sqrt().max(1.0);
        let jitter = Normal::new(0.0, 1e-3 * rms).expect("positive std");
        for i in 0..capacity {
            let src = samples.row(i % n).to_vec();
            let row = centers.row_mut(i);
            row.copy_from_slice(&src);
            if i >= n {
                for v in row.iter_mut() {
                    *v += jitter.sample(&mut rng);
                }
            }
        }
    } else {
        let mut picks = sample(&mut rng, n, capacity).into_vec();
        picks.sort_unstable();
        for (i, &p) in picks.iter().enumerate() {
            centers.row_mut(i).copy_from_slice(samples.row(p));
        }
        for _ in 0..iterations {
            let assign = assign_all(&centers, samples);
            let mut sums = Tensor::zeros(capacity, d);
            let mut counts = vec![0usize; capacity];
            for (r, &c) in assign.iter().enumerate() {
                counts[c] += 1;
                for (s, v) in sums.row_mut(c).iter_mut().zip(samples.row(r)) {
                    *s += v;
                }
            }
            for c in 0..capacity {
                if counts[c] > 0 {
                    let inv = 1.0 / counts[c] as f64;
                    for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                        *dst = s * inv;
                    }
                }
            }
        }
    }
    let mut counts = vec![0.0; capacity];
    for c in assign_all(&centers, samples) {
        counts[c] += 1.0;
    }
    let counts: Vec<f64> = counts.into_iter().map(|c: f64| c.max(1.0)).collect();
    let mut sums = centers.clone();
    for (i, n) in counts.iter().enumerate() {
        sums.row_mut(i).iter_mut().for_each(|v| *v *= n);
    }
    CodebookLevel::from_parts(centers, counts, sums)
}

/// `(1/K) Σ_ℓ ‖ρ_{ℓ−1} − C^ℓ_{c_ℓ}‖²` for level inputs and selected codewords.
pub fn commitment_loss(level_inputs: &[Vec<f64>], selected: &[Vec<f64>]) -> Result<f64> {
    if level_inputs.len() != selected.len() || level_inputs.is_empty() {
        return Err(Error::invalid(
            "commitment loss needs one selected codeword per level input",
        ));
    }
    let mut total = 0.0;
    for (r, c) in level_inputs.iter().zip(selected) {
        if r.len() != c.len() {
            return Err(Error::invalid("residual and codeword dimensions differ"));
        }
        total += r.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / level_inputs.len() as f64)
}

/// Fraction of codes used at least once, and `exp` of the assignment entropy.
pub fn codebook_stats(counts: &[u64]) -> Result<(f64, f64)> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid(
            "codebook statistics need at least one assignment",
        ));
    }
    let used = counts.iter().filter(|&&c| c > 0).count();
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    Ok((used as f64 / counts.len() as f64, entropy.exp()))
}
