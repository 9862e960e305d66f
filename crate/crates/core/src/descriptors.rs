//! Per-residue, per-frame SE(3)-invariant descriptors.
//!
//! Two families share one neighbour-selection layer:
//!
//! * **3Di**: per neighbour a 10-D pair block from Cα unit vectors, an
//!   optional 4-D ψ block, and a 4-D glue block between consecutive
//!   neighbours.
//! * **Relative frame**: per neighbour the 12 numbers of its backbone frame
//!   expressed in the anchor's frame.
//!
//! Neighbours are chosen in one frame (`Fixed`), in every frame
//! (`Dynamical`), or by concatenating the per-frame lists of all frames
//! (`Fused`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Ensemble;
use crate::error::{Error, Result};
use crate::geometry::{
    build_local_frame, dihedral_angle, knn_neighbors, local_gyration_radius, relative_transform,
    Atom, FrameCoords, Point3, RigidTransform,
};

pub const PAIR_DIM: usize = 10;
pub const PSI_DIM: usize = 4;
pub const GLUE_DIM: usize = 4;
pub const RELATIVE_FRAME_DIM: usize = 12;
/// Floor applied to per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    ThreeDi,
    RelativeFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeighborMode {
    Fixed,
    Dynamical,
    Fused,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::ThreeDi => "3di",
            Family::RelativeFrame => "relative-frame",
        })
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3di" => Ok(Family::ThreeDi),
            "relative-frame" => Ok(Family::RelativeFrame),
            _ => Err(Error::invalid(format!(
                "unknown descriptor family {s:?} (3di | relative-frame)"
            ))),
        }
    }
}

impl fmt::Display for NeighborMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NeighborMode::Fixed => "fixed",
            NeighborMode::Dynamical => "dynamical",
            NeighborMode::Fused => "fused",
        })
    }
}

impl FromStr for NeighborMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(NeighborMode::Fixed),
            "dynamical" => Ok(NeighborMode::Dynamical),
            "fused" => Ok(NeighborMode::Fused),
            _ => Err(Error::invalid(format!(
                "unknown neighbour mode {s:?} (fixed | dynamical | fused)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorConfig {
    pub family: Family,
    pub mode: NeighborMode,
    pub k: usize,
    /// 3Di only.
    pub psi_enabled: bool,
    pub min_seq_sep: usize,
    /// Half-width of the local gyration window.
    pub gyration_window: usize,
    /// Frame count of the fused slate.
    pub frames_max: usize,
}

impl DescriptorConfig {
    /// 3Di family with ψ on and `|i − j| > 3`.
    pub fn three_di(k: usize, mode: NeighborMode) -> Self {
        Self {
            family: Family::ThreeDi,
            mode,
            k,
            psi_enabled: true,
            min_seq_sep: 3,
            gyration_window: 2,
            frames_max: 10,
        }
    }

    pub fn relative_frame(k: usize, mode: NeighborMode) -> Self {
        Self {
            family: Family::RelativeFrame,
            mode,
            k,
            psi_enabled: false,
            min_seq_sep: 0,
            gyration_window: 2,
            frames_max: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("descriptor k must be at least 1"));
        }
        if self.family == Family::RelativeFrame && (self.psi_enabled || self.min_seq_sep != 0) {
            return Err(Error::invalid(
                "relative-frame descriptors take no ψ block and no sequence-gap filter",
            ));
        }
        if self.mode == NeighborMode::Fused && self.frames_max == 0 {
            return Err(Error::invalid("fused mode needs frames_max >= 1"));
        }
        Ok(())
    }

    /// Number of neighbour slots per residue and frame.
    pub fn slots(&self, frames: usize) -> usize {
        match self.mode {
            NeighborMode::Fused => self.k * frames,
            _ => self.k,
        }
    }

    /// Descriptor dimension for inputs of `frames_max` frames.
    pub fn dim(&self) -> usize {
        descriptor_dim(self, self.frames_max)
    }
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self::relative_frame(16, NeighborMode::Dynamical)
    }
}

/// D_f for `frames` frames (the frame count matters only in fused mode).
pub fn descriptor_dim(config: &DescriptorConfig, frames: usize) -> usize {
    let n = config.slots(frames);
    match config.family {
        Family::RelativeFrame => RELATIVE_FRAME_DIM * n,
        Family::ThreeDi => {
            let first = PAIR_DIM + if config.psi_enabled { PSI_DIM } else { 0 };
            if n == 0 {
                0
            } else {
                first + (n - 1) * (first + GLUE_DIM)
            }
        }
    }
}

/// `L × P × D_f` descriptor values, residue-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    residue_count: usize,
    frame_count: usize,
    dim: usize,
    values: Vec<f64>,
}

impl DescriptorSet {
    pub fn new(
        residue_count: usize,
        frame_count: usize,
        dim: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != residue_count * frame_count * dim {
            return Err(Error::invalid(format!(
                "descriptor buffer has {} values, expected {residue_count} × {frame_count} × {dim}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("descriptor value {i}")));
        }
        Ok(Self {
            residue_count,
            frame_count,
            dim,
            values,
        })
    }

    pub fn residue_count(&self) -> usize {
        self.residue_count
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The descriptor of residue `r` in frame `p`.
    pub fn get(&self, r: usize, p: usize) -> &[f64] {
        let start = (r * self.frame_count + p) * self.dim;
        &self.values[start..start + self.dim]
    }

    /// All `P × D_f` values of residue `r`, frame-major.
    pub fn residue(&self, r: usize) -> &[f64] {
        let n = self.frame_count * self.dim;
        &self.values[r * n..(r + 1) * n]
    }
}

/// Per-frame quantities shared by every residue's descriptor.
struct FrameGeometry {
    ca: Vec<Point3>,
    /// `u_{r→r+1}`; zero for the last residue.
    forward: Vec<Point3>,
    /// `unit(Cα_{r−1} → Cα_{r+1})`; zero at the termini.
    tangent: Vec<Point3>,
    /// `(sin ψ_r, cos ψ_r)`; zero where `N_{r+1}` does not exist.
    psi: Vec<[f64; 2]>,
    frames: Vec<RigidTransform>,
}

fn unit_or_zero(v: Point3) -> Point3 {
    let n = v.norm();
    if n < 1e-12 {
        Point3::zeros()
    } else {
        v / n
    }
}

impl FrameGeometry {
    fn new(frame: &FrameCoords, want_psi: bool, want_frames: bool) -> Result<Self> {
        let l = frame.residue_count();
        let ca = frame.ca_trace();
        let forward = (0..l)
            .map(|r| {
                if r + 1 < l {
                    unit_or_zero(ca[r + 1] - ca[r])
                } else {
                    Point3::zeros()
                }
            })
            .collect();
        let tangent = (0..l)
            .map(|r| {
                if r > 0 && r + 1 < l {
                    unit_or_zero(ca[r + 1] - ca[r - 1])
                } else {
                    Point3::zeros()
                }
            })
            .collect();
        let mut psi = Vec::new();
        let mut frames = Vec::new();
        if want_psi || want_frames {
            let bb = frame.with_backbone()?;
            let atom = |r, a| bb.atom(r, a).expect("backbone present");
            if want_psi {
                psi = (0..l)
                    .map(|r| {
                        if r + 1 >= l {
                            return [0.0, 0.0];
                        }
                        match dihedral_angle(
                            &atom(r, Atom::N),
                            &atom(r, Atom::CA),
                            &atom(r, Atom::C),
                            &atom(r + 1, Atom::N),
                        ) {
                            Ok(deg) => {
                                let rad = deg.to_radians();
                                [rad.sin(), rad.cos()]
                            }
                            Err(_) => [0.0, 0.0],
                        }
                    })
                    .collect();
            }
            if want_frames {
                frames = (0..l)
                    .map(|r| {
                        build_local_frame(&atom(r, Atom::N), &atom(r, Atom::CA), &atom(r, Atom::C))
                            .map_err(|e| Error::Degenerate(format!("residue {r}: {e}")))
                    })
                    .collect::<Result<_>>()?;
            }
        }
        Ok(Self {
            ca,
            forward,
            tangent,
            psi,
            frames,
        })
    }

    fn prev(&self, r: usize) -> Point3 {
        if r > 0 {
            self.forward[r - 1]
        } else {
            Point3::zeros()
        }
    }

    fn pair(&self, i: usize, j: usize) -> [f64; PAIR_DIM] {
        let (pi, ni) = (self.prev(i), self.forward[i]);
        let (pj, nj) = (self.prev(j), self.forward[j]);
        let uij = unit_or_zero(self.ca[j] - self.ca[i]);
        let sep = i.abs_diff(j) as f64;
        let sign = match i.cmp(&j) {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Less => -1.0,
            std::cmp::Ordering::Equal => 0.0,
        };
        [
            (self.ca[i] - self.ca[j]).norm(),
            pi.dot(&ni),
            pj.dot(&nj),
            pi.dot(&uij),
            pj.dot(&uij),
            pi.dot(&nj),
            ni.dot(&pj),
            pi.dot(&pj),
            sign * sep.min(4.0),
            sign * (sep + 1.0).ln(),
        ]
    }

    fn psi_pair(&self, i: usize, j: usize) -> [f64; PSI_DIM] {
        [
            self.psi[i][0],
            self.psi[i][1],
            self.psi[j][0],
            self.psi[j][1],
        ]
    }

    fn glue(&self, jm: usize, jm1: usize) -> [f64; GLUE_DIM] {
        let cd = unit_or_zero(self.ca[jm1] - self.ca[jm]);
        let (a, b) = (self.tangent[jm], self.tangent[jm1]);
        [
            (self.ca[jm] - self.ca[jm1]).norm(),
            a.dot(&b),
            a.dot(&cd),
            b.dot(&cd),
        ]
    }

    fn relative(&self, r: usize, j: usize) -> [f64; RELATIVE_FRAME_DIM] {
        relative_transform(&self.frames[r], &self.frames[j]).to_array12()
    }

    fn descriptor(&self, config: &DescriptorConfig, r: usize, slate: &[usize], out: &mut Vec<f64>) {
        match config.family {
            Family::RelativeFrame => {
                for &j in slate {
                    out.extend_from_slice(&self.relative(r, j));
                }
            }
            Family::ThreeDi => {
                for (m, &j) in slate.iter().enumerate() {
                    if m > 0 {
                        out.extend_from_slice(&self.glue(slate[m - 1], j));
                    }
                    out.extend_from_slice(&self.pair(r, j));
                    if config.psi_enabled {
                        out.extend_from_slice(&self.psi_pair(r, j));
                    }
                }
            }
        }
    }
}

/// The ten 3Di pair features of `(i, j)`. Unit vectors reaching past a chain
/// end are zero.
pub fn threedi_pair_block(frame: &FrameCoords, i: usize, j: usize) -> Result<[f64; PAIR_DIM]> {
    check_residues(frame, &[i, j])?;
    Ok(FrameGeometry::new(frame, false, false)?.pair(i, j))
}

/// `(sin ψ_i, cos ψ_i, sin ψ_j, cos ψ_j)`, rebuilding N/C when absent. The
/// last residue has no ψ and contributes `(0, 0)`.
pub fn psi_block(frame: &FrameCoords, i: usize, j: usize) -> Result<[f64; PSI_DIM]> {
    check_residues(frame, &[i, j])?;
    Ok(FrameGeometry::new(frame, true, false)?.psi_pair(i, j))
}

/// Distance, alignment, approach and twist between consecutive neighbours
/// `jm` and `jm1`. The anchor does not enter the block.
pub fn glue_block(
    frame: &FrameCoords,
    anchor: usize,
    jm: usize,
    jm1: usize,
) -> Result<[f64; GLUE_DIM]> {
    check_residues(frame, &[anchor, jm, jm1])?;
    Ok(FrameGeometry::new(frame, false, false)?.glue(jm, jm1))
}

/// The 12 numbers of every neighbour's backbone frame in `r`'s frame.
pub fn relative_frame_block(
    frame: &FrameCoords,
    r: usize,
    neighbors: &[usize],
) -> Result<Vec<f64>> {
    let mut all = neighbors.to_vec();
    all.push(r);
    check_residues(frame, &all)?;
    let g = FrameGeometry::new(frame, false, true)?;
    Ok(neighbors.iter().flat_map(|&j| g.relative(r, j)).collect())
}

fn check_residues(frame: &FrameCoords, idx: &[usize]) -> Result<()> {
    let l = frame.residue_count();
    match idx.iter().find(|&&i| i >= l) {
        Some(i) => Err(Error::invalid(format!(
            "residue {i} out of range (L = {l})"
        ))),
        None => Ok(()),
    }
}

/// Frame indices sorted by decreasing local gyration radius of `r`, ties to
/// the lower frame index.
fn frames_by_gyration(ensemble: &Ensemble, r: usize, window: usize) -> Vec<usize> {
    let rg: Vec<f64> = ensemble
        .frames()
        .iter()
        .map(|f| local_gyration_radius(f, r, window))
        .collect();
    let mut order: Vec<usize> = (0..rg.len()).collect();
    order.sort_by(|&a, &b| rg[b].total_cmp(&rg[a]).then(a.cmp(&b)));
    order
}

/// Per-frame neighbour slates of residue `r`.
pub fn select_neighbors(
    ensemble: &Ensemble,
    r: usize,
    config: &DescriptorConfig,
) -> Result<Vec<Vec<usize>>> {
    config.validate()?;
    let frames = ensemble.frames();
    let knn = |p: usize| {
        knn_neighbors(&frames[p], r, config.k, config.min_seq_sep)
            .map_err(|e| e.in_protein(&ensemble.id))
    };
    match config.mode {
        NeighborMode::Dynamical => (0..frames.len()).map(knn).collect(),
        NeighborMode::Fixed => {
            let best = frames_by_gyration(ensemble, r, config.gyration_window)[0];
            Ok(vec![knn(best)?; frames.len()])
        }
        NeighborMode::Fused => {
            let mut slate = Vec::with_capacity(config.k * frames.len());
            for p in frames_by_gyration(ensemble, r, config.gyration_window) {
                slate.extend(knn(p)?);
            }
            Ok(vec![slate; frames.len()])
        }
    }
}

/// Descriptors of every residue in every frame.
pub fn compute_descriptors(
    ensemble: &Ensemble,
    config: &DescriptorConfig,
) -> Result<DescriptorSet> {
    config.validate()?;
    let p = ensemble.frame_count();
    if config.mode == NeighborMode::Fused && p != config.frames_max {
        return Err(Error::invalid(format!(
            "fused descriptors need exactly frames_max = {} frames, {} has {p}",
            config.frames_max, ensemble.id
        )));
    }
    let l = ensemble.residue_count();
    let dim = descriptor_dim(config, p);
    let want_psi = config.family == Family::ThreeDi && config.psi_enabled;
    let want_frames = config.family == Family::RelativeFrame;
    let geoms = ensemble
        .frames()
        .iter()
        .map(|f| FrameGeometry::new(f, want_psi, want_frames))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_protein(&ensemble.id))?;
    let mut values = Vec::with_capacity(l * p * dim);
    for r in 0..l {
        let slates = select_neighbors(ensemble, r, config)?;
        for (g, slate) in geoms.iter().zip(&slates) {
            g.descriptor(config, r, slate, &mut values);
        }
    }
    DescriptorSet::new(l, p, dim, values).map_err(|e| e.in_protein(&ensemble.id))
}

/// Per-feature mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::invalid(
                "standardizer mean and std must be non-empty and of equal length",
            ));
        }
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid(
                "standardizer needs finite means and positive standard deviations",
            ));
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Standardizes one descriptor vector in place.
    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn apply(&self, set: &DescriptorSet) -> Result<DescriptorSet> {
        if set.dim() != self.dim() {
            return Err(Error::invalid(format!(
                "standardizer has dimension {}, descriptors have {}",
                self.dim(),
                set.dim()
            )));
        }
        let mut out = set.clone();
        for row in out.values.chunks_mut(set.dim) {
            self.apply_row(row);
        }
        Ok(out)
    }
}

pub const STATS_FORMAT: &str = "ensembits-stats/1";

impl Standardizer {
    /// `ensembits-stats/1`, then `mean` and `std` lines of 16-digit
    /// hexadecimal `f64` bit patterns.
    pub fn to_text(&self) -> String {
        let hex = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{:016x}", x.to_bits()))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "{STATS_FORMAT}\nmean {}\nstd {}\n",
            hex(&self.mean),
            hex(&self.std)
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(STATS_FORMAT) {
            return Err(Error::parse(
                1,
                format!("expected format line {STATS_FORMAT}"),
            ));
        }
        let mut field = |n: usize, key: &str| -> Result<Vec<f64>> {
            let line = lines
                .next()
                .ok_or_else(|| Error::parse(n, format!("missing {key} line")))?;
            let rest = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| Error::parse(n, format!("expected `{key} …`")))?;
            rest.split_whitespace()
                .map(|t| {
                    if t.len() != 16 {
                        return Err(Error::parse(n, format!("bad hex float {t:?}")));
                    }
                    u64::from_str_radix(t, 16)
                        .map(f64::from_bits)
                        .map_err(|_| Error::parse(n, format!("bad hex float {t:?}")))
                })
                .collect()
        };
        let mean = field(2, "mean")?;
        let std = field(3, "std")?;
        Standardizer::new(mean, std)
    }
}

/// Fits a [`Standardizer`] on every descriptor vector of the given sets.
pub fn fit_standardizer(sets: &[&DescriptorSet]) -> Result<Standardizer> {
    let first = sets
        .first()
        .ok_or_else(|| Error::invalid("no descriptor sets to fit on"))?;
    let dim = first.dim();
    if sets.iter().any(|s| s.dim() != dim) {
        return Err(Error::invalid("descriptor sets disagree on dimension"));
    }
    let n: usize = sets.iter().map(|s| s.values().len() / dim.max(1)).sum();
    if n < 2 || dim == 0 {
        return Err(Error::invalid(format!(
            "need at least 2 descriptor vectors to standardize, got {n}"
        )));
    }
    let rows = || sets.iter().flat_map(|s| s.values().chunks(dim));
    let mut mean = vec![0.0; dim];
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for row in rows() {
        for d in 0..dim {
            mean[d] += row[d];
            lo[d] = lo[d].min(row[d]);
            hi[d] = hi[d].max(row[d]);
        }
    }
    for d in 0..dim {
        mean[d] = if lo[d] == hi[d] {
            lo[d]
        } else {
            mean[d] / n as f64
        };
    }
    let mut var = vec![0.0; dim];
    for row in rows() {
        for d in 0..dim {
            var[d] += (row[d] - mean[d]).powi(2);
        }
    }
    let std = var
        .iter()
        .map(|v| (v / n as f64).sqrt().max(STD_FLOOR))
        .collect();
    Standardizer::new(mean, std)
}

#[cfg(test)]
mod tests {
    #[test]
    fn stats_text_round_trip() {
        let st = super::Standardizer::new(vec![0.1 + 0.2, -3.0], vec![1e-8, 2.5]).unwrap();
        assert_eq!(super::Standardizer::from_text(&st.to_text()).unwrap(), st);
        assert!(super::Standardizer::from_text("ensembits-stats/1\nmean 0\n").is_err());
    }

    use super::*;

    fn line(l: usize, spacing: f64) -> FrameCoords {
        FrameCoords::from_ca(
            (0..l)
                .map(|i| Point3::new(spacing * i as f64, 0.0, 0.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn dimension_table() {
        let mut c = DescriptorConfig::three_di(1, NeighborMode::Fixed);
        assert_eq!(c.dim(), 14);
        c.k = 2;
        assert_eq!(c.dim(), 32);
        c.k = 3;
        assert_eq!(c.dim(), 50);
        c.k = 15;
        assert_eq!(c.dim(), 266);
        c.k = 3;
        c.mode = NeighborMode::Fused;
        assert_eq!(descriptor_dim(&c, 10), 536);
        c.psi_enabled = false;
        c.mode = NeighborMode::Dynamical;
        assert_eq!(c.dim(), 10 + 2 * 14);
        let r = DescriptorConfig::relative_frame(16, NeighborMode::Dynamical);
        assert_eq!(r.dim(), 192);
        let rf = DescriptorConfig::relative_frame(16, NeighborMode::Fused);
        assert_eq!(descriptor_dim(&rf, 7), 192 * 7);
    }

    #[test]
    fn pair_block_on_straight_chain() {
        let f = line(12, 1.0);
        let b = threedi_pair_block(&f, 1, 6).unwrap();
        assert!((b[0] - 5.0).abs() < 1e-12);
        assert!((b[7] - 1.0).abs() < 1e-12);
        // Residue 0 has no incoming unit vector, so every product with it is 0.
        let b0 = threedi_pair_block(&f, 0, 5).unwrap();
        assert!((b0[0] - 5.0).abs() < 1e-12);
        assert_eq!(b0[7], 0.0);
        let s = threedi_pair_block(&f, 10, 3).unwrap();
        assert_eq!(s[8], 4.0);
        assert!((s[9] - 8f64.ln()).abs() < 1e-12);
        assert!((s[9] - 2.0794).abs() < 1e-4);
    }

    #[test]
    fn glue_cases() {
        let f = line(8, 3.8);
        let g = glue_block(&f, 0, 2, 5).unwrap();
        assert!((g[0] - 3.0 * 3.8).abs() < 1e-12);
        assert!((g[1] - 1.0).abs() < 1e-12);
        let mut ca = f.ca_trace();
        ca[4] = ca[3];
        let same = FrameCoords::from_ca(ca).unwrap();
        let g = glue_block(&same, 0, 3, 4).unwrap();
        assert_eq!((g[0], g[2], g[3]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn psi_padding_and_unit_norm() {
        let ca: Vec<Point3> = (0..10)
            .map(|i| {
                let t = (100.0 * i as f64).to_radians();
                Point3::new(2.3 * t.cos(), 2.3 * t.sin(), 1.5 * i as f64)
            })
            .collect();
        let f = FrameCoords::from_ca(ca).unwrap();
        let b = psi_block(&f, 2, 9).unwrap();
        assert!((b[0] * b[0] + b[1] * b[1] - 1.0).abs() < 1e-12);
        assert_eq!((b[2], b[3]), (0.0, 0.0));
    }

    #[test]
    fn psi_trans_is_minus_one_cosine() {
        // Residue 0 built so that N0, CA0, C0, N1 form a planar trans torsion.
        let layout = vec![Atom::N, Atom::CA, Atom::C];
        let coords = vec![
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(-1.0, 1.0, 0.0),
            Point3::new(-1.5, 2.0, 0.3),
            Point3::new(-2.0, 3.0, 0.0),
        ];
        let f = FrameCoords::new(layout, coords).unwrap();
        let b = psi_block(&f, 0, 1).unwrap();
        assert!(b[0].abs() < 1e-12 && (b[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn relative_block_identity_slot() {
        let ca: Vec<Point3> = (0..6)
            .map(|i| Point3::new(3.8 * i as f64, (i % 2) as f64, 0.0))
            .collect();
        let f = FrameCoords::from_ca(ca).unwrap();
        let b = relative_frame_block(&f, 2, &[2, 3]).unwrap();
        assert_eq!(b.len(), 24);
        let id = RigidTransform::identity().to_array12();
        for (x, y) in b[..12].iter().zip(id) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn standardizer_cases() {
        let a = DescriptorSet::new(1, 2, 2, vec![0.0, 5.0, 2.0, 5.0]).unwrap();
        let s = fit_standardizer(&[&a]).unwrap();
        assert_eq!(s.mean, vec![1.0, 5.0]);
        assert_eq!(s.std, vec![1.0, STD_FLOOR]);
        let t = s.apply(&a).unwrap();
        assert_eq!(t.values(), &[-1.0, 0.0, 1.0, 0.0]);
        assert!(fit_standardizer(&[]).is_err());
        let one = DescriptorSet::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        assert!(fit_standardizer(&[&one]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DescriptorConfig::three_di(0, NeighborMode::Fixed)
            .validate()
            .is_err());
        let mut r = DescriptorConfig::relative_frame(4, NeighborMode::Fixed);
        r.min_seq_sep = 3;
        assert!(r.validate().is_err());
        assert_eq!(
            "fused".parse::<NeighborMode>().unwrap(),
            NeighborMode::Fused
        );
        assert_eq!("3di".parse::<Family>().unwrap().to_string(), "3di");
        assert!("nope".parse::<Family>().is_err());
    }
}
