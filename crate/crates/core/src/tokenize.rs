//! Inference: ensembles to residue token tuples, and the token TSV format.
//!
//! ```text
//! protein_id	residue_index	c1	c2	c3	d_z
//! synth_000	0	17	3	30	0.84
//! ```

use crate::corpus::Ensemble;
use crate::error::{Error, Result};
use crate::neuralcore::{SetBatch, Tensor};
use crate::quantizer::{quantize_batch, TokenRecord};
use crate::training::{standardized_descriptors, Checkpoint};

const BATCH: usize = 256;

/// Encoder latents (`L × d_z`) of every residue of `ensemble`.
pub fn encode_ensemble(ckpt: &Checkpoint, ensemble: &Ensemble) -> Result<Tensor> {
    let cfg = ckpt.params.config();
    if ensemble.frame_count() > cfg.p_max {
        return Err(Error::invalid(format!(
            "protein {} has {} frames, the model accepts at most {}",
            ensemble.id,
            ensemble.frame_count(),
            cfg.p_max
        )));
    }
    let set = standardized_descriptors(ensemble, &ckpt.descriptor, &ckpt.standardizer)?;
    let l = set.residue_count();
    let p = set.frame_count();
    let mut out = Vec::with_capacity(l * cfg.latent_dim);
    for start in (0..l).step_by(BATCH) {
        let end = (start + BATCH).min(l);
        let mut data = Vec::with_capacity((end - start) * p * set.dim());
        for r in start..end {
            data.extend_from_slice(set.residue(r));
        }
        let rows = Tensor::new((end - start) * p, set.dim(), data)?;
        let batch = SetBatch::new(rows, vec![p; end - start])?;
        out.extend(ckpt.params.encode_batch(&batch)?.into_data());
    }
    Tensor::new(l, cfg.latent_dim, out)
}

/// Token tuple, quantized embedding and latent distance of every residue.
pub fn tokenize_ensemble(ckpt: &Checkpoint, ensemble: &Ensemble) -> Result<Vec<TokenRecord>> {
    let z = encode_ensemble(ckpt, ensemble)?;
    let q = quantize_batch(&z, &ckpt.codebooks)?;
    Ok((0..z.rows())
        .map(|r| TokenRecord {
            tokens: q.tokens[r].clone(),
            quantized: q.quantized.row(r).to_vec(),
            latent_distance: q.latent_distances[r],
        })
        .collect())
}

/// One line of a token table.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRow {
    pub protein: String,
    pub residue: usize,
    pub tokens: Vec<usize>,
    pub latent_distance: f64,
}

pub fn token_rows(protein: &str, records: &[TokenRecord]) -> Vec<TokenRow> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| TokenRow {
            protein: protein.to_string(),
            residue: i,
            tokens: r.tokens.clone(),
            latent_distance: r.latent_distance,
        })
        .collect()
}

pub fn write_token_tsv(rows: &[TokenRow]) -> Result<String> {
    let k = rows.first().map_or(0, |r| r.tokens.len());
    if rows.iter().any(|r| r.tokens.len() != k) {
        return Err(Error::invalid("token rows differ in level count"));
    }
    let mut s = String::from("protein_id\tresidue_index");
    for l in 1..=k {
        s.push_str(&format!("\tc{l}"));
    }
    s.push_str("\td_z\n");
    for r in rows {
        s.push_str(&format!("{}\t{}", r.protein, r.residue));
        for t in &r.tokens {
            s.push_str(&format!("\t{t}"));
        }
        s.push_str(&format!("\t{}\n", r.latent_distance));
    }
    Ok(s)
}

pub fn parse_token_tsv(text: &str) -> Result<Vec<TokenRow>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty token table"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    let k = cols.len().saturating_sub(3);
    let expected: Vec<String> = ["protein_id".to_string(), "residue_index".to_string()]
        .into_iter()
        .chain((1..=k).map(|l| format!("c{l}")))
        .chain(["d_z".to_string()])
        .collect();
    if cols.len() < 4 || cols != expected {
        return Err(Error::parse(
            1,
            format!("unexpected token table header {header:?}"),
        ));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols.len() {
            return Err(Error::parse(
                i + 1,
                format!("expected {} fields, found {}", cols.len(), f.len()),
            ));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(i + 1, format!("bad integer {s:?}")))
        };
        rows.push(TokenRow {
            protein: f[0].to_string(),
            residue: int(f[1])?,
            tokens: f[2..2 + k].iter().map(|s| int(s)).collect::<Result<_>>()?,
            latent_distance: f[2 + k]
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("bad distance {:?}", f[2 + k])))?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_round_trip() {
        let rows = vec![
            TokenRow {
                protein: "a".into(),
                residue: 0,
                tokens: vec![5, 1, 0],
                latent_distance: 0.1 + 0.2,
            },
            TokenRow {
                protein: "a".into(),
                residue: 1,
                tokens: vec![7, 2, 31],
                latent_distance: 2.5,
            },
        ];
        let text = write_token_tsv(&rows).unwrap();
        assert!(text.starts_with("protein_id\tresidue_index\tc1\tc2\tc3\td_z\n"));
        assert_eq!(parse_token_tsv(&text).unwrap(), rows);
        assert!(parse_token_tsv("protein_id\tc1\n").is_err());
        assert!(parse_token_tsv(&text.replace("\t7\t", "\tx\t")).is_err());
    }
}
