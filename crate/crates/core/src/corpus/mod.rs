//! Conformational ensembles: the in-memory type, file formats, trajectory
//! curation, dataset splits, and a synthetic generator with known dynamics.

mod curation;
mod native;
mod pdb;
mod split;
mod synth;

pub use curation::{fps_select, fps_select_from_matrix, pairwise_rmsd_matrix, stride_sample};
pub use native::{read_corpus_dir, read_ensemble, write_ensemble, ENSEMBLE_FORMAT};
pub use pdb::{parse_pdb_models, write_pdb_models};
pub use split::{make_splits, SplitManifest};
pub use synth::{random_piecewise_profile, synth_corpus, synth_ensemble, SynthSpec};

use crate::error::{Error, Result};
use crate::geometry::{Atom, FrameCoords, Point3};

/// One protein's unordered multiset of backbone frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub id: String,
    /// Homology-family analogue; splits never separate two ensembles that
    /// share it.
    pub group: String,
    frames: Vec<FrameCoords>,
    flexibility: Option<Vec<f64>>,
}

impl Ensemble {
    pub fn new(
        id: impl Into<String>,
        group: impl Into<String>,
        frames: Vec<FrameCoords>,
    ) -> Result<Self> {
        let id = id.into();
        if frames.is_empty() {
            return Err(Error::invalid(format!("ensemble {id} has no frames")));
        }
        let l = frames[0].residue_count();
        let layout = frames[0].layout().to_vec();
        for (p, f) in frames.iter().enumerate() {
            if f.residue_count() != l || f.layout() != layout.as_slice() {
                return Err(Error::invalid(format!(
                    "ensemble {id}: frame {p} is not congruent with frame 0 ({} residues, layout {:?})",
                    f.residue_count(),
                    f.layout()
                )));
            }
        }
        Ok(Self {
            id,
            group: group.into(),
            frames,
            flexibility: None,
        })
    }

    /// Attaches per-residue ground-truth flexibility (synthetic data only).
    pub fn with_flexibility(mut self, flexibility: Vec<f64>) -> Result<Self> {
        if flexibility.len() != self.residue_count() {
            return Err(Error::invalid(format!(
                "flexibility has {} entries for {} residues",
                flexibility.len(),
                self.residue_count()
            )));
        }
        self.flexibility = Some(flexibility);
        Ok(self)
    }

    pub fn frames(&self) -> &[FrameCoords] {
        &self.frames
    }

    pub fn frame(&self, p: usize) -> &FrameCoords {
        &self.frames[p]
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn residue_count(&self) -> usize {
        self.frames[0].residue_count()
    }

    pub fn layout(&self) -> &[Atom] {
        self.frames[0].layout()
    }

    pub fn flexibility(&self) -> Option<&[f64]> {
        self.flexibility.as_deref()
    }

    /// Cα traces of every frame.
    pub fn ca_traces(&self) -> Vec<Vec<Point3>> {
        self.frames.iter().map(|f| f.ca_trace()).collect()
    }

    /// Ensemble restricted to the listed frames, in the given order.
    pub fn sub_ensemble(&self, indices: &[usize]) -> Result<Ensemble> {
        let mut frames = Vec::with_capacity(indices.len());
        for &i in indices {
            let f = self.frames.get(i).ok_or_else(|| {
                Error::invalid(format!(
                    "frame {i} out of range for {} ({} frames)",
                    self.id,
                    self.frame_count()
                ))
            })?;
            frames.push(f.clone());
        }
        let mut sub = Ensemble::new(self.id.clone(), self.group.clone(), frames)?;
        sub.flexibility = self.flexibility.clone();
        Ok(sub)
    }

    /// The first `n` frames (all of them when `n` exceeds the frame count).
    pub fn first_frames(&self, n: usize) -> Result<Ensemble> {
        if n == 0 {
            return Err(Error::invalid("a sub-ensemble needs at least one frame"));
        }
        let idx: Vec<usize> = (0..n.min(self.frame_count())).collect();
        self.sub_ensemble(&idx)
    }
}
