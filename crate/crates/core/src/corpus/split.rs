//! Group-disjoint train/val/test splits.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Ensemble;
use crate::error::{Error, Result};

const SPLIT_FORMAT: &str = "ensembits-split/1";

/// Protein ids per split, each list in corpus order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("format {SPLIT_FORMAT}\n");
        for (name, ids) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            let _ = writeln!(out, "{name} {}", ids.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == format!("format {SPLIT_FORMAT}") => {}
            Some((i, l)) => {
                return Err(Error::parse(
                    i + 1,
                    format!("expected `format {SPLIT_FORMAT}`, found {l:?}"),
                ))
            }
            None => return Err(Error::parse(0, "empty split manifest")),
        }
        let mut lists: [Option<Vec<String>>; 3] = [None, None, None];
        for (i, line) in lines {
            let mut parts = line.split_whitespace();
            let slot = match parts.next() {
                Some("train") => 0,
                Some("val") => 1,
                Some("test") => 2,
                other => return Err(Error::parse(i + 1, format!("unknown split {other:?}"))),
            };
            if lists[slot].is_some() {
                return Err(Error::parse(i + 1, "split listed twice"));
            }
            lists[slot] = Some(parts.map(String::from).collect());
        }
        let [train, val, test] = lists;
        let manifest = SplitManifest {
            train: train.ok_or_else(|| Error::parse(0, "missing train line"))?,
            val: val.ok_or_else(|| Error::parse(0, "missing val line"))?,
            test: test.ok_or_else(|| Error::parse(0, "missing test line"))?,
        };
        let mut seen = BTreeSet::new();
        for id in manifest
            .train
            .iter()
            .chain(&manifest.val)
            .chain(&manifest.test)
        {
            if !seen.insert(id) {
                return Err(Error::invalid(format!(
                    "protein {id} appears in more than one split"
                )));
            }
        }
        Ok(manifest)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Selects the ensembles of one split, in manifest order.
    pub fn select<'a>(&self, ids: &[String], corpus: &'a [Ensemble]) -> Result<Vec<&'a Ensemble>> {
        ids.iter()
            .map(|id| {
                corpus
                    .iter()
                    .find(|e| &e.id == id)
                    .ok_or_else(|| Error::invalid(format!("split lists unknown protein {id}")))
            })
            .collect()
    }
}

/// Shuffles the distinct group labels with `seed` and partitions them by
/// `fractions` (train, val, test). Each split receives at least one group.
pub fn make_splits(
    corpus: &[Ensemble],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitManifest> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !f.is_finite() || *f < 0.0)
        || ((ft + fv + fs) - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let mut groups: Vec<&str> = Vec::new();
    for e in corpus {
        if !groups.contains(&e.group.as_str()) {
            groups.push(&e.group);
        }
    }
    groups.sort_unstable();
    let g = groups.len();
    if g < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 groups to split, found {g}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);

    let n_val = ((fv * g as f64).round() as usize).clamp(1, g - 2);
    let n_test = ((fs * g as f64).round() as usize).clamp(1, g - 1 - n_val);
    let n_train = g - n_val - n_test;
    let train_groups = &groups[..n_train];
    let val_groups = &groups[n_train..n_train + n_val];

    let mut manifest = SplitManifest {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for e in corpus {
        let list = if train_groups.contains(&e.group.as_str()) {
            &mut manifest.train
        } else if val_groups.contains(&e.group.as_str()) {
            &mut manifest.val
        } else {
            &mut manifest.test
        };
        list.push(e.id.clone());
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FrameCoords, Point3};

    fn corpus(groups: &[&str]) -> Vec<Ensemble> {
        let frame = FrameCoords::from_ca(
            (0..4)
                .map(|i| Point3::new(3.8 * i as f64, 0.0, 0.0))
                .collect(),
        )
        .unwrap();
        groups
            .iter()
            .enumerate()
            .map(|(i, g)| Ensemble::new(format!("p{i}"), *g, vec![frame.clone()]).unwrap())
            .collect()
    }

    #[test]
    fn ten_groups_split_8_1_1() {
        let names: Vec<String> = (0..10).map(|i| format!("g{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let m = make_splits(&corpus(&refs), (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!((m.train.len(), m.val.len(), m.test.len()), (8, 1, 1));
    }

    #[test]
    fn shared_group_lands_together_and_is_deterministic() {
        let c = corpus(&["a", "a", "b", "c", "d", "e", "e"]);
        for seed in 0..20 {
            let m = make_splits(&c, (0.8, 0.1, 0.1), seed).unwrap();
            for list in [&m.train, &m.val, &m.test] {
                assert_eq!(
                    list.contains(&"p0".to_string()),
                    list.contains(&"p1".to_string())
                );
                assert_eq!(
                    list.contains(&"p5".to_string()),
                    list.contains(&"p6".to_string())
                );
            }
            assert_eq!(m, make_splits(&c, (0.8, 0.1, 0.1), seed).unwrap());
        }
    }

    #[test]
    fn errors_and_round_trip() {
        assert!(make_splits(&corpus(&["a", "b"]), (0.8, 0.1, 0.1), 0).is_err());
        assert!(make_splits(&corpus(&["a", "b", "c"]), (0.8, 0.1, 0.2), 0).is_err());
        let m = make_splits(&corpus(&["a", "b", "c", "d"]), (0.8, 0.1, 0.1), 0).unwrap();
        assert_eq!(SplitManifest::from_text(&m.to_text()).unwrap(), m);
        assert!(
            SplitManifest::from_text("format ensembits-split/1\ntrain a\nval a\ntest b\n").is_err()
        );
    }
}
