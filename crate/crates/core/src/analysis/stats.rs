//! One-way ANOVA with permutation null, Spearman correlation and the
//! negative-control groupings.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AnovaReport {
    pub eta2: f64,
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub groups: usize,
    pub samples: usize,
    pub ss_between: f64,
    pub ss_within: f64,
    pub ss_total: f64,
    /// Parametric p from the F distribution.
    pub p_param: f64,
    pub null: Vec<f64>,
    /// Fraction of null samples at or above the observed η².
    pub p_perm: Option<f64>,
}

impl AnovaReport {
    pub fn null_mean(&self) -> Option<f64> {
        (!self.null.is_empty()).then(|| self.null.iter().sum::<f64>() / self.null.len() as f64)
    }

    /// `key value` lines plus a ten-bin histogram of the null samples.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("eta2 {}\n", self.eta2));
        s.push_str(&format!("F {}\n", self.f));
        s.push_str(&format!("df_between {}\n", self.df_between));
        s.push_str(&format!("df_within {}\n", self.df_within));
        s.push_str(&format!("groups {}\n", self.groups));
        s.push_str(&format!("samples {}\n", self.samples));
        s.push_str(&format!("p_param {}\n", self.p_param));
        if let (Some(p), Some(m)) = (self.p_perm, self.null_mean()) {
            s.push_str(&format!("permutations {}\n", self.null.len()));
            s.push_str(&format!("null_mean {m}\n"));
            s.push_str(&format!("eta2_over_null {}\n", self.eta2 / m));
            s.push_str(&format!("p_perm {p}\n"));
            let hi = self.null.iter().cloned().fold(0.0, f64::max);
            let bins = 10;
            let mut counts = vec![0usize; bins];
            for v in &self.null {
                let b = if hi > 0.0 {
                    ((v / hi) * bins as f64) as usize
                } else {
                    0
                };
                counts[b.min(bins - 1)] += 1;
            }
            for (i, c) in counts.iter().enumerate() {
                s.push_str(&format!(
                    "null_bin {} {} {c}\n",
                    hi * i as f64 / bins as f64,
                    hi * (i + 1) as f64 / bins as f64
                ));
            }
        }
        s
    }
}

struct Retained {
    values: Vec<f64>,
    /// Dense labels `0..groups`.
    labels: Vec<usize>,
    groups: usize,
}

fn retain(values: &[f64], groups: &[usize], min_count: usize) -> Result<Retained> {
    if values.len() != groups.len() {
        return Err(Error::invalid(format!(
            "{} values but {} group labels",
            values.len(),
            groups.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ANOVA values".into()));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &g in groups {
        *counts.entry(g).or_default() += 1;
    }
    let dense: BTreeMap<usize, usize> = counts
        .iter()
        .filter(|(_, &c)| c >= min_count)
        .enumerate()
        .map(|(i, (&g, _))| (g, i))
        .collect();
    if dense.len() < 2 {
        return Err(Error::invalid(format!(
            "{} group(s) have at least {min_count} samples; at least 2 required",
            dense.len()
        )));
    }
    let mut out = Retained {
        values: Vec::new(),
        labels: Vec::new(),
        groups: dense.len(),
    };
    for (&v, g) in values.iter().zip(groups) {
        if let Some(&d) = dense.get(g) {
            out.values.push(v);
            out.labels.push(d);
        }
    }
    Ok(out)
}

/// `(SS_between, SS_within, SS_total)`.
fn sums_of_squares(values: &[f64], labels: &[usize], groups: usize) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let grand = values.iter().sum::<f64>() / n;
    let mut sum = vec![0.0; groups];
    let mut cnt = vec![0usize; groups];
    for (&v, &g) in values.iter().zip(labels) {
        sum[g] += v;
        cnt[g] += 1;
    }
    let means: Vec<f64> = sum
        .iter()
        .zip(&cnt)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let ss_between = means
        .iter()
        .zip(&cnt)
        .map(|(m, &c)| c as f64 * (m - grand) * (m - grand))
        .sum();
    let mut ss_within = 0.0;
    let mut ss_total = 0.0;
    for (&v, &g) in values.iter().zip(labels) {
        ss_within += (v - means[g]) * (v - means[g]);
        ss_total += (v - grand) * (v - grand);
    }
    (ss_between, ss_within, ss_total)
}

/// One-way ANOVA of `values` grouped by `groups`, keeping only groups with
/// at least `min_count` samples.
pub fn anova_eta2(values: &[f64], groups: &[usize], min_count: usize) -> Result<AnovaReport> {
    let r = retain(values, groups, min_count)?;
    let (ss_between, ss_within, ss_total) = sums_of_squares(&r.values, &r.labels, r.groups);
    let scale = r
        .values
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    if ss_total <= 1e-24 * scale * scale * r.values.len() as f64 {
        return Err(Error::invalid("all values are identical; η² is undefined"));
    }
    let n = r.values.len();
    let m = r.groups;
    let df_between = m - 1;
    let df_within = n - m;
    let f = if df_within == 0 {
        f64::NAN
    } else {
        (ss_between / df_between as f64) / (ss_within / df_within as f64)
    };
    let p_param = if df_within == 0 || f.is_nan() {
        f64::NAN
    } else {
        f_survival(f, df_between as f64, df_within as f64)
    };
    Ok(AnovaReport {
        eta2: ss_between / ss_total,
        f,
        df_between,
        df_within,
        groups: m,
        samples: n,
        ss_between,
        ss_within,
        ss_total,
        p_param,
        null: Vec::new(),
        p_perm: None,
    })
}

/// η² under `n_perm` uniform relabelings of the retained samples, and the
/// fraction of them at or above the observed η².
pub fn permutation_null(
    values: &[f64],
    groups: &[usize],
    min_count: usize,
    n_perm: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let observed = anova_eta2(values, groups, min_count)?;
    let r = retain(values, groups, min_count)?;
    let mut labels = r.labels.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut null = Vec::with_capacity(n_perm);
    for _ in 0..n_perm {
        labels.shuffle(&mut rng);
        let (b, _, t) = sums_of_squares(&r.values, &labels, r.groups);
        null.push(b / t);
    }
    let above = null.iter().filter(|&&v| v >= observed.eta2).count();
    let p = if n_perm == 0 {
        f64::NAN
    } else {
        above as f64 / n_perm as f64
    };
    Ok((null, p))
}

/// [`anova_eta2`] with its permutation null attached.
pub fn anova_with_null(
    values: &[f64],
    groups: &[usize],
    min_count: usize,
    n_perm: usize,
    seed: u64,
) -> Result<AnovaReport> {
    let mut report = anova_eta2(values, groups, min_count)?;
    let (null, p) = permutation_null(values, groups, min_count, n_perm, seed)?;
    report.null = null;
    report.p_perm = Some(p);
    Ok(report)
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// `P(F > f)` for `F ~ F(d1, d2)`.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f.is_infinite() {
        return 0.0;
    }
    if f <= 0.0 {
        return 1.0;
    }
    regularized_beta(d2 / (d2 + d1 * f), d2 / 2.0, d1 / 2.0)
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average-rank ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "sequences differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::invalid(
            "Spearman correlation needs at least 3 samples",
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Spearman input".into()));
    }
    pearson(&ranks(x), &ranks(y))
        .ok_or_else(|| Error::invalid("constant input; rank correlation undefined"))
}

/// Per-residue context used by the negative controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidueContext {
    pub group: String,
    pub residue: usize,
    pub length: usize,
}

/// Alternative labelings of the same residues.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGroupings {
    /// Ensemble group, numbered in sorted name order.
    pub group: Vec<usize>,
    /// Position quintile within the chain, `⌊5·i/L⌋`.
    pub position: Vec<usize>,
    /// Quintile of the chain length among the distinct lengths present,
    /// ranked per residue.
    pub length: Vec<usize>,
}

pub fn position_quintile(residue: usize, length: usize) -> usize {
    5 * residue / length.max(1)
}

pub fn control_groupings(residues: &[ResidueContext]) -> Result<ControlGroupings> {
    if let Some(r) = residues.iter().find(|r| r.residue >= r.length) {
        return Err(Error::invalid(format!(
            "residue {} outside a chain of length {}",
            r.residue, r.length
        )));
    }
    let names: BTreeMap<&str, usize> = {
        let mut set: Vec<&str> = residues.iter().map(|r| r.group.as_str()).collect();
        set.sort_unstable();
        set.dedup();
        set.into_iter().enumerate().map(|(i, g)| (g, i)).collect()
    };
    // Residues ordered by chain length; the quintile of a length is taken
    // at the rank of its first residue so a chain never straddles two bins.
    let mut order: Vec<usize> = (0..residues.len()).collect();
    order.sort_by_key(|&i| residues[i].length);
    let mut first_rank: BTreeMap<usize, usize> = BTreeMap::new();
    for (rank, &i) in order.iter().enumerate() {
        first_rank.entry(residues[i].length).or_insert(rank);
    }
    let n = residues.len().max(1);
    Ok(ControlGroupings {
        group: residues.iter().map(|r| names[r.group.as_str()]).collect(),
        position: residues
            .iter()
            .map(|r| position_quintile(r.residue, r.length))
            .collect(),
        length: residues
            .iter()
            .map(|r| 5 * first_rank[&r.length] / n)
            .collect(),
    })
}
