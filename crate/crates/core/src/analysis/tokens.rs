//! Token-level analyses: mutation scores and exemplar extraction.

use std::collections::BTreeMap;

use crate::corpus::Ensemble;
use crate::descriptors::{select_neighbors, DescriptorConfig};
use crate::error::{Error, Result};
use crate::geometry::{kabsch_superpose, RigidTransform};
use crate::quantizer::CodebookLevel;
use crate::tokenize::TokenRow;

/// `−Σ_i ‖C_wt,i − C_mut,i‖` over the first-level codewords.
pub fn mutation_score(
    wild_type: &[usize],
    mutant: &[usize],
    codebook: &CodebookLevel,
) -> Result<f64> {
    if wild_type.len() != mutant.len() {
        return Err(Error::invalid(format!(
            "wild-type has {} tokens, mutant {}",
            wild_type.len(),
            mutant.len()
        )));
    }
    let m = codebook.size();
    let mut s = 0.0;
    for (&a, &b) in wild_type.iter().zip(mutant) {
        if a >= m || b >= m {
            return Err(Error::invalid(format!(
                "token {} outside a {m}-code codebook",
                a.max(b)
            )));
        }
        let d: f64 = codebook
            .codeword(a)
            .iter()
            .zip(codebook.codeword(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        s += d.sqrt();
    }
    Ok(-s)
}

/// First-level codeword of each row's token, the probe's input feature.
pub fn codeword_features(rows: &[TokenRow], codebook: &CodebookLevel) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .map(|r| match r.tokens.first() {
            Some(&t) if t < codebook.size() => Ok(codebook.codeword(t).to_vec()),
            _ => Err(Error::invalid(format!(
                "{} residue {}: no first-level token within the {}-code codebook",
                r.protein,
                r.residue,
                codebook.size()
            ))),
        })
        .collect()
}

/// The same rows with first-level tokens drawn uniformly from `size` codes.
pub fn random_tokens(rows: &[TokenRow], size: usize, seed: u64) -> Vec<TokenRow> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rows.iter()
        .map(|r| {
            let mut r = r.clone();
            if let Some(t) = r.tokens.first_mut() {
                *t = rng.random_range(0..size);
            }
            r
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub protein: String,
    pub residue: usize,
    pub latent_distance: f64,
    /// Canonical neighbours with the number of frames that selected them,
    /// most frequent first.
    pub neighbors: Vec<(usize, usize)>,
    /// Per frame, the superposition onto frame 0 that ignores the residue's
    /// and its canonical neighbours' 3-mers.
    pub transforms: Vec<RigidTransform>,
}

/// Neighbours ranked by how many frames selected them (ties to the lower
/// index), truncated to `k`.
pub fn canonical_neighbors(slates: &[Vec<usize>], k: usize) -> Vec<(usize, usize)> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for slate in slates {
        let mut seen: Vec<usize> = slate.clone();
        seen.sort_unstable();
        seen.dedup();
        for j in seen {
            *counts.entry(j).or_default() += 1;
        }
    }
    let mut ranked: Vec<(usize, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

/// The `n` residues assigned first-level `token` closest to its centroid,
/// with their canonical neighbours and alignment transforms.
pub fn token_exemplars(
    ensembles: &[&Ensemble],
    rows: &[TokenRow],
    token: usize,
    n: usize,
    descriptor: &DescriptorConfig,
) -> Result<Vec<Exemplar>> {
    let mut hits: Vec<&TokenRow> = rows
        .iter()
        .filter(|r| r.tokens.first() == Some(&token))
        .collect();
    if hits.is_empty() {
        return Err(Error::invalid(format!(
            "token {token} is not assigned to any residue"
        )));
    }
    if hits.len() < n {
        return Err(Error::invalid(format!(
            "token {token} has {} residues, {n} requested",
            hits.len()
        )));
    }
    hits.sort_by(|a, b| {
        a.latent_distance
            .total_cmp(&b.latent_distance)
            .then_with(|| a.protein.cmp(&b.protein))
            .then(a.residue.cmp(&b.residue))
    });
    hits.truncate(n);
    let mut out = Vec::with_capacity(n);
    for h in hits {
        let e = ensembles
            .iter()
            .find(|e| e.id == h.protein)
            .ok_or_else(|| Error::invalid(format!("no ensemble for protein {}", h.protein)))?;
        let slates = select_neighbors(e, h.residue, descriptor)?;
        let neighbors = canonical_neighbors(&slates, descriptor.k);
        let l = e.residue_count();
        let mut exclude: Vec<usize> = std::iter::once(h.residue)
            .chain(neighbors.iter().map(|n| n.0))
            .flat_map(|c| c.saturating_sub(1)..=(c + 1).min(l - 1))
            .collect();
        exclude.sort_unstable();
        exclude.dedup();
        let traces = e.ca_traces();
        let transforms = traces
            .iter()
            .map(|t| kabsch_superpose(t, &traces[0], &exclude).map(|(x, _)| x))
            .collect::<Result<Vec<_>>>()
            .map_err(|err| err.in_protein(&e.id))?;
        out.push(Exemplar {
            protein: h.protein.clone(),
            residue: h.residue,
            latent_distance: h.latent_distance,
            neighbors,
            transforms,
        });
    }
    Ok(out)
}

/// The exemplar's ensemble with every frame moved by its transform.
pub fn exemplar_bundle(ensemble: &Ensemble, exemplar: &Exemplar) -> Result<Ensemble> {
    if exemplar.transforms.len() != ensemble.frame_count() {
        return Err(Error::invalid(
            "exemplar transforms do not match the frame count",
        ));
    }
    let frames = ensemble
        .frames()
        .iter()
        .zip(&exemplar.transforms)
        .map(|(f, t)| f.transformed(t))
        .collect();
    Ensemble::new(
        format!("{}_r{}", ensemble.id, exemplar.residue),
        ensemble.group.clone(),
        frames,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::Tensor;

    #[test]
    fn mutation_cases() {
        let cb = CodebookLevel::new(
            Tensor::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0], vec![1.0, 1.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(mutation_score(&[0, 2, 1], &[0, 2, 1], &cb).unwrap(), 0.0);
        assert_eq!(mutation_score(&[0, 2], &[1, 2], &cb).unwrap(), -5.0);
        assert_eq!(mutation_score(&[2, 0], &[2, 1], &cb).unwrap(), -5.0);
        assert!(mutation_score(&[0], &[0, 1], &cb).is_err());
        assert!(mutation_score(&[3], &[0], &cb).is_err());
    }

    #[test]
    fn neighbor_counting() {
        let slates = vec![vec![4, 7, 9], vec![4, 7, 2], vec![4, 9, 2]];
        assert_eq!(canonical_neighbors(&slates, 2), vec![(4, 3), (2, 2)]);
        assert_eq!(canonical_neighbors(&slates, 10).len(), 4);
    }
}
