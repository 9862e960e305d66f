//! Per-residue fluctuation measures from aligned ensembles.

use crate::corpus::Ensemble;
use crate::error::{Error, Result};
use crate::geometry::{kabsch_superpose, top_two_singular_values, Point3};

fn mean_structure(frames: &[Vec<Point3>]) -> Vec<Point3> {
    let n = frames.len() as f64;
    (0..frames[0].len())
        .map(|r| frames.iter().map(|f| f[r]).sum::<Point3>() / n)
        .collect()
}

fn align_all(traces: &[Vec<Point3>], reference: &[Point3]) -> Result<Vec<Vec<Point3>>> {
    traces
        .iter()
        .map(|t| {
            let (xf, _) = kabsch_superpose(t, reference, &[])?;
            Ok(t.iter().map(|p| xf.apply(p)).collect())
        })
        .collect()
}

/// Cα RMSF per residue. Frames are aligned to frame 0, then realigned to
/// the resulting mean structure; fluctuations are measured about the mean
/// of the second pass.
pub fn compute_rmsf(ensemble: &Ensemble) -> Result<Vec<f64>> {
    let l = ensemble.residue_count();
    if ensemble.frame_count() == 1 {
        return Ok(vec![0.0; l]);
    }
    let traces = ensemble.ca_traces();
    let pass1 = align_all(&traces, &traces[0]).map_err(|e| e.in_protein(&ensemble.id))?;
    let pass2 =
        align_all(&traces, &mean_structure(&pass1)).map_err(|e| e.in_protein(&ensemble.id))?;
    let mean = mean_structure(&pass2);
    let p = pass2.len() as f64;
    Ok((0..l)
        .map(|r| {
            (pass2
                .iter()
                .map(|f| (f[r] - mean[r]).norm_squared())
                .sum::<f64>()
                / p)
                .sqrt()
        })
        .collect())
}

/// Top two singular values `(s1, s2)` of residue `r`'s centred positions
/// after aligning every frame on the frame-0 Cα ball of `radius` Å around
/// `r`.
pub fn motion_amplitude(ensemble: &Ensemble, r: usize, radius: f64) -> Result<(f64, f64)> {
    if r >= ensemble.residue_count() {
        return Err(Error::invalid(format!(
            "residue {r} out of range for {} residues",
            ensemble.residue_count()
        )));
    }
    let traces = ensemble.ca_traces();
    let center = traces[0][r];
    let ball: Vec<usize> = (0..traces[0].len())
        .filter(|&i| (traces[0][i] - center).norm() <= radius)
        .collect();
    if ball.len() < 3 {
        return Err(Error::invalid(format!(
            "only {} residues within {radius} Å of residue {r}; at least 3 required",
            ball.len()
        )));
    }
    let target: Vec<Point3> = ball.iter().map(|&i| traces[0][i]).collect();
    let mut rows = Vec::with_capacity(traces.len());
    for t in &traces {
        let mobile: Vec<Point3> = ball.iter().map(|&i| t[i]).collect();
        let (xf, _) =
            kabsch_superpose(&mobile, &target, &[]).map_err(|e| e.in_protein(&ensemble.id))?;
        rows.push(xf.apply(&t[r]));
    }
    Ok(top_two_singular_values(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FrameCoords, RigidTransform};
    use nalgebra::{Rotation3, Vector3};

    fn zigzag(l: usize) -> Vec<Point3> {
        (0..l)
            .map(|i| {
                Point3::new(
                    3.8 * i as f64,
                    if i % 2 == 0 { 0.0 } else { 1.5 },
                    0.3 * (i % 3) as f64,
                )
            })
            .collect()
    }

    fn ensemble(frames: Vec<Vec<Point3>>) -> Ensemble {
        Ensemble::new(
            "t",
            "g",
            frames
                .into_iter()
                .map(|f| FrameCoords::from_ca(f).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn moved(
        points: &[Point3],
        axis: Vector3<f64>,
        angle: f64,
        shift: Vector3<f64>,
    ) -> Vec<Point3> {
        let t = RigidTransform::new(
            *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix(),
            shift,
        )
        .unwrap();
        points.iter().map(|p| t.apply(p)).collect()
    }

    #[test]
    fn single_frame_and_rigid_copies_are_still() {
        let base = zigzag(12);
        assert_eq!(
            compute_rmsf(&ensemble(vec![base.clone()])).unwrap(),
            vec![0.0; 12]
        );
        let e = ensemble(vec![
            base.clone(),
            moved(
                &base,
                Vector3::new(1.0, 2.0, 0.5),
                1.1,
                Vector3::new(4.0, -3.0, 9.0),
            ),
            moved(
                &base,
                Vector3::new(0.0, 0.0, 1.0),
                -2.0,
                Vector3::new(-1.0, 0.0, 2.0),
            ),
        ]);
        assert!(compute_rmsf(&e).unwrap().iter().all(|v| v.abs() < 1e-8));
        let (s1, s2) = motion_amplitude(&e, 5, 10.0).unwrap();
        assert!(s1 < 1e-8 && s2 < 1e-8);
    }

    /// Point-symmetric body: residue 0 at (5,0,0), residue 1 at (−5,0,0).
    /// Moving them by ±t along x keeps the centroid and leaves the
    /// cross-covariance symmetric, so the optimal superposition stays the
    /// identity and the displacement survives alignment unchanged.
    fn symmetric_body(t: f64) -> Vec<Point3> {
        let mut pts = vec![
            Point3::new(5.0 + t, 0.0, 0.0),
            Point3::new(-5.0 - t, 0.0, 0.0),
        ];
        for q in [
            Point3::new(1.0, 3.0, 0.5),
            Point3::new(-2.0, 1.0, 3.0),
            Point3::new(3.0, -2.0, 2.0),
            Point3::new(0.5, 4.0, -1.0),
        ] {
            pts.push(q);
            pts.push(-q);
        }
        pts
    }

    #[test]
    fn symmetric_displacement_gives_its_amplitude() {
        let a = 0.7;
        let rmsf = compute_rmsf(&ensemble(vec![symmetric_body(a), symmetric_body(-a)])).unwrap();
        assert!((rmsf[0] - a).abs() < 1e-9, "{}", rmsf[0]);
        assert!((rmsf[1] - a).abs() < 1e-9);
        assert!(rmsf[2..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn axis_oscillation_is_one_dimensional() {
        let t = [-1.0, 0.5, 1.0, -0.5, 0.2, -0.2];
        let frames: Vec<Vec<Point3>> = t.iter().map(|&d| symmetric_body(d)).collect();
        let (s1, s2) = motion_amplitude(&ensemble(frames), 0, 30.0).unwrap();
        let mean = t.iter().sum::<f64>() / 6.0;
        let want = t
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            .sqrt();
        assert!((s1 - want).abs() < 1e-9, "{s1} vs {want}");
        assert!(s2 < 1e-7, "{s2}");
        assert!(motion_amplitude(&ensemble(vec![zigzag(30)]), 0, 1.0).is_err());
    }
}
