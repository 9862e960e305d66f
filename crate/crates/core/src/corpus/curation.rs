//! Frame curation: stride sampling and farthest-point sampling under
//! superposed Cα RMSD.

use super::Ensemble;
use crate::error::{Error, Result};
use crate::geometry::kabsch_superpose;

/// `P × P` matrix (row-major) of Kabsch-superposed Cα RMSD between frames.
pub fn pairwise_rmsd_matrix(ensemble: &Ensemble) -> Result<Vec<f64>> {
    let traces = ensemble.ca_traces();
    let p = traces.len();
    let mut m = vec![0.0; p * p];
    for a in 0..p {
        for b in a + 1..p {
            let (_, rmsd) = kabsch_superpose(&traces[b], &traces[a], &[])
                .map_err(|e| e.in_protein(&ensemble.id))?;
            m[a * p + b] = rmsd;
            m[b * p + a] = rmsd;
        }
    }
    Ok(m)
}

/// Greedy max–min selection of `k` of the `p` items of a distance matrix,
/// starting from `seed`. Ties go to the lower index.
pub fn fps_select_from_matrix(dist: &[f64], p: usize, k: usize, seed: usize) -> Result<Vec<usize>> {
    if dist.len() != p * p {
        return Err(Error::invalid("distance matrix is not P × P"));
    }
    if k > p {
        return Err(Error::invalid(format!("cannot select {k} of {p} frames")));
    }
    if seed >= p {
        return Err(Error::invalid(format!("seed frame {seed} out of range")));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut selected = vec![seed];
    let mut chosen = vec![false; p];
    chosen[seed] = true;
    let mut min_d: Vec<f64> = (0..p).map(|i| dist[seed * p + i]).collect();
    while selected.len() < k {
        let mut best: Option<usize> = None;
        for i in (0..p).filter(|&i| !chosen[i]) {
            if best.is_none_or(|b| min_d[i] > min_d[b]) {
                best = Some(i);
            }
        }
        let next = best.expect("k <= p leaves a candidate");
        chosen[next] = true;
        selected.push(next);
        for i in 0..p {
            min_d[i] = min_d[i].min(dist[next * p + i]);
        }
    }
    Ok(selected)
}

/// Farthest-point sampling of `k` frames under superposed Cα RMSD.
pub fn fps_select(ensemble: &Ensemble, k: usize, seed_frame: usize) -> Result<Vec<usize>> {
    let m = pairwise_rmsd_matrix(ensemble)?;
    fps_select_from_matrix(&m, ensemble.frame_count(), k, seed_frame)
}

/// Every `stride`-th entry, starting with the first.
pub fn stride_sample(indices: &[usize], stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    Ok(indices.iter().copied().step_by(stride).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_ensemble, SynthSpec};
    use crate::geometry::{FrameCoords, Point3, RigidTransform};
    use nalgebra::Rotation3;

    fn line_dist(pos: &[f64]) -> Vec<f64> {
        let p = pos.len();
        let mut d = vec![0.0; p * p];
        for a in 0..p {
            for b in 0..p {
                d[a * p + b] = (pos[a] - pos[b]).abs();
            }
        }
        d
    }

    #[test]
    fn fps_picks_the_far_frame() {
        let d = line_dist(&[0.0, 1.0, 10.0]);
        assert_eq!(fps_select_from_matrix(&d, 3, 2, 0).unwrap(), vec![0, 2]);
        assert_eq!(fps_select_from_matrix(&d, 3, 3, 0).unwrap(), vec![0, 2, 1]);
        assert_eq!(fps_select_from_matrix(&d, 3, 1, 1).unwrap(), vec![1]);
        assert!(fps_select_from_matrix(&d, 3, 4, 0).is_err());
    }

    #[test]
    fn stride_cases() {
        let idx: Vec<usize> = (0..25).collect();
        assert_eq!(stride_sample(&idx, 10).unwrap(), vec![0, 10, 20]);
        assert_eq!(stride_sample(&idx, 1).unwrap(), idx);
        assert!(stride_sample(&[], 3).unwrap().is_empty());
        assert!(stride_sample(&idx, 0).is_err());
    }

    #[test]
    fn rmsd_matrix_properties() {
        let e = synth_ensemble(&SynthSpec {
            id: "r".into(),
            group: "g".into(),
            frames: 4,
            profile: vec![1.0; 12],
            seed: 3,
        })
        .unwrap();
        let m = pairwise_rmsd_matrix(&e).unwrap();
        for a in 0..4 {
            assert_eq!(m[a * 4 + a], 0.0);
            for b in 0..4 {
                assert!((m[a * 4 + b] - m[b * 4 + a]).abs() < 1e-9);
            }
        }
        assert!(m[1] > 0.0);
    }

    #[test]
    fn rigid_copies_have_zero_rmsd() {
        let base = FrameCoords::from_ca(
            (0..8)
                .map(|i| Point3::new(i as f64 * 3.8, (i as f64).sin(), 0.3 * i as f64))
                .collect(),
        )
        .unwrap();
        let g = RigidTransform::new(
            *Rotation3::from_euler_angles(0.4, 0.2, -1.0).matrix(),
            Point3::new(5.0, -3.0, 2.0),
        )
        .unwrap();
        let e = Ensemble::new("x", "g", vec![base.clone(), base.transformed(&g), base]).unwrap();
        let m = pairwise_rmsd_matrix(&e).unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-9));
    }
}
