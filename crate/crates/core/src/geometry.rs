//! Rigid-body and backbone geometry kernels.
//!
//! Everything here is a pure function of its arguments. Coordinates are in
//! ångström, angles in degrees unless stated otherwise.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

/// Canonical N–CA bond length used when backbone atoms are rebuilt.
pub const N_CA_LENGTH: f64 = 1.46;
/// Canonical CA–C bond length used when backbone atoms are rebuilt.
pub const CA_C_LENGTH: f64 = 1.52;
/// Canonical N–CA–C angle in degrees.
pub const N_CA_C_ANGLE: f64 = 111.0;

const EPS: f64 = 1e-10;

/// Element of SE(3): `x ↦ rotation · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Point3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Point3::zeros(),
        }
    }

    /// Builds a transform, rejecting rotations that are not proper
    /// orthonormal matrices (to 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Point3) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        if (gram - Matrix3::identity()).amax() > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid(
                "rotation is not a proper orthonormal matrix",
            ));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation entries row-major followed by the translation.
    pub fn to_array12(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z,
        ]
    }
}

/// Backbone atom kinds tracked per residue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    N,
    CA,
    C,
}

impl Atom {
    pub fn label(self) -> &'static str {
        match self {
            Atom::N => "N",
            Atom::CA => "CA",
            Atom::C => "C",
        }
    }

    pub fn from_label(label: &str) -> Option<Atom> {
        match label {
            "N" => Some(Atom::N),
            "CA" => Some(Atom::CA),
            "C" => Some(Atom::C),
            _ => None,
        }
    }
}

/// One conformation: `L` residues, each carrying the atoms of `layout`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCoords {
    layout: Vec<Atom>,
    coords: Vec<Point3>,
}

impl FrameCoords {
    /// `coords` is residue-major: residue `r`, atom `a` lives at
    /// `r * layout.len() + a`.
    pub fn new(layout: Vec<Atom>, coords: Vec<Point3>) -> Result<Self> {
        if layout.is_empty() || !layout.contains(&Atom::CA) {
            return Err(Error::invalid("atom layout must contain CA"));
        }
        let mut sorted = layout.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != layout.len() {
            return Err(Error::invalid("atom layout has duplicate atoms"));
        }
        if coords.len() % layout.len() != 0 {
            return Err(Error::invalid(
                "coordinate count is not a multiple of the atom layout",
            ));
        }
        if coords.len() / layout.len() < 2 {
            return Err(Error::invalid("a frame needs at least 2 residues"));
        }
        if !coords.iter().all(|p| p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("frame coordinates".into()));
        }
        Ok(Self { layout, coords })
    }

    /// Frame holding only Cα positions.
    pub fn from_ca(ca: Vec<Point3>) -> Result<Self> {
        Self::new(vec![Atom::CA], ca)
    }

    pub fn residue_count(&self) -> usize {
        self.coords.len() / self.layout.len()
    }

    pub fn layout(&self) -> &[Atom] {
        &self.layout
    }

    pub fn coords(&self) -> &[Point3] {
        &self.coords
    }

    pub fn atom(&self, residue: usize, atom: Atom) -> Option<Point3> {
        let a = self.layout.iter().position(|&x| x == atom)?;
        self.coords.get(residue * self.layout.len() + a).copied()
    }

    pub fn ca(&self, residue: usize) -> Point3 {
        self.atom(residue, Atom::CA)
            .expect("layout always contains CA")
    }

    pub fn ca_trace(&self) -> Vec<Point3> {
        (0..self.residue_count()).map(|r| self.ca(r)).collect()
    }

    pub fn has_backbone(&self) -> bool {
        self.layout.contains(&Atom::N) && self.layout.contains(&Atom::C)
    }

    /// Same frame with layout `[N, CA, C]`; missing N/C are rebuilt from the
    /// Cα trace with ideal peptide geometry.
    pub fn with_backbone(&self) -> Result<FrameCoords> {
        let l = self.residue_count();
        let rebuilt = if self.has_backbone() {
            None
        } else {
            Some(reconstruct_backbone(&self.ca_trace())?)
        };
        let mut coords = Vec::with_capacity(3 * l);
        for r in 0..l {
            let (n, c) = match &rebuilt {
                Some(nc) => nc[r],
                None => (
                    self.atom(r, Atom::N).unwrap(),
                    self.atom(r, Atom::C).unwrap(),
                ),
            };
            coords.push(n);
            coords.push(self.ca(r));
            coords.push(c);
        }
        FrameCoords::new(vec![Atom::N, Atom::CA, Atom::C], coords)
    }

    pub fn transformed(&self, t: &RigidTransform) -> FrameCoords {
        FrameCoords {
            layout: self.layout.clone(),
            coords: self.coords.iter().map(|p| t.apply(p)).collect(),
        }
    }
}

fn centroid<'a>(points: impl Iterator<Item = &'a Point3>) -> Point3 {
    let mut sum = Point3::zeros();
    let mut n = 0usize;
    for p in points {
        sum += p;
        n += 1;
    }
    if n == 0 {
        sum
    } else {
        sum / n as f64
    }
}

/// Least-squares rigid superposition of `mobile` onto `target` over the
/// points whose index is not in `exclude`. Returns the transform and the
/// post-alignment RMSD over those points.
///
/// Collinear point sets are accepted (the optimal RMSD is still attained,
/// the rotation about the line is arbitrary); coincident sets are rejected.
pub fn kabsch_superpose(
    mobile: &[Point3],
    target: &[Point3],
    exclude: &[usize],
) -> Result<(RigidTransform, f64)> {
    if mobile.len() != target.len() {
        return Err(Error::invalid(format!(
            "point lists differ in length: {} vs {}",
            mobile.len(),
            target.len()
        )));
    }
    if mobile.len() < 3 {
        return Err(Error::invalid("superposition needs at least 3 points"));
    }
    let kept: Vec<usize> = (0..mobile.len()).filter(|i| !exclude.contains(i)).collect();
    superpose_subset(mobile, target, &kept)
}

/// Superposition restricted to `indices` (at least two of them).
pub(crate) fn superpose_subset(
    mobile: &[Point3],
    target: &[Point3],
    indices: &[usize],
) -> Result<(RigidTransform, f64)> {
    if indices.len() < 2 {
        return Err(Error::invalid(
            "superposition needs at least 2 points after exclusion",
        ));
    }
    let cm = centroid(indices.iter().map(|&i| &mobile[i]));
    let ct = centroid(indices.iter().map(|&i| &target[i]));
    let spread_m: f64 = indices
        .iter()
        .map(|&i| (mobile[i] - cm).norm_squared())
        .sum();
    let spread_t: f64 = indices
        .iter()
        .map(|&i| (target[i] - ct).norm_squared())
        .sum();
    if spread_m < EPS || spread_t < EPS {
        return Err(Error::Degenerate(
            "coincident point set; reflection guard has no defined orientation".into(),
        ));
    }

    let mut h = Matrix3::zeros();
    for &i in indices {
        h += (mobile[i] - cm) * (target[i] - ct).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate("SVD did not converge".into())),
    };
    let v = v_t.transpose();
    let mut rotation = v * u.transpose();
    if rotation.determinant() < 0.0 {
        // Flip the axis of the smallest singular value.
        let smallest = svd.singular_values.imin();
        let mut v_fixed = v;
        for row in 0..3 {
            v_fixed[(row, smallest)] = -v_fixed[(row, smallest)];
        }
        rotation = v_fixed * u.transpose();
    }
    let translation = ct - rotation * cm;
    let t = RigidTransform {
        rotation,
        translation,
    };
    let sum_sq: f64 = indices
        .iter()
        .map(|&i| (t.apply(&mobile[i]) - target[i]).norm_squared())
        .sum();
    Ok((t, (sum_sq / indices.len() as f64).sqrt()))
}

/// Torsion angle of four points in degrees, range (−180, 180].
///
/// IUPAC sign convention: positive when, looking along p2→p3, the bond to
/// p1 must be rotated clockwise to eclipse the bond to p4.
pub fn dihedral_angle(p1: &Point3, p2: &Point3, p3: &Point3, p4: &Point3) -> Result<f64> {
    let b1 = p2 - p1;
    let b2 = p3 - p2;
    let b3 = p4 - p3;
    if b1.norm() < EPS || b2.norm() < EPS || b3.norm() < EPS {
        return Err(Error::Degenerate("zero-length bond in dihedral".into()));
    }
    let n1 = b1.cross(&b2);
    let n2 = b2.cross(&b3);
    let y = b2.norm() * b1.dot(&n2);
    let x = n1.dot(&n2);
    let deg = y.atan2(x).to_degrees();
    Ok(if deg <= -180.0 { deg + 360.0 } else { deg })
}

fn any_perpendicular(v: &Point3) -> Point3 {
    let axis = if v.x.abs() <= v.y.abs() && v.x.abs() <= v.z.abs() {
        Point3::x()
    } else if v.y.abs() <= v.z.abs() {
        Point3::y()
    } else {
        Point3::z()
    };
    v.cross(&axis).normalize()
}

/// N and C offsets around a Cα given unit directions to its chain
/// neighbours. N and C lie in the plane spanned by the two directions.
fn ideal_offsets(to_prev: &Point3, to_next: &Point3) -> (Point3, Point3) {
    let diff = to_prev - to_next;
    let p = if diff.norm() > 1e-8 {
        diff.normalize()
    } else {
        any_perpendicular(to_prev)
    };
    let sum = to_prev + to_next;
    let sum_perp = sum - p * p.dot(&sum);
    let m = if sum_perp.norm() > 1e-8 {
        sum_perp.normalize()
    } else {
        any_perpendicular(&p)
    };
    let half = (N_CA_C_ANGLE / 2.0).to_radians();
    let n_dir = m * half.cos() + p * half.sin();
    let c_dir = m * half.cos() - p * half.sin();
    (n_dir * N_CA_LENGTH, c_dir * CA_C_LENGTH)
}

/// Rebuilds backbone N and C positions from a Cα trace.
///
/// Interior residues place N toward the previous Cα and C toward the next,
/// at exactly the canonical bond lengths and N–CA–C angle. The first and
/// last residue reuse the offsets of their interior neighbour.
pub fn reconstruct_backbone(ca: &[Point3]) -> Result<Vec<(Point3, Point3)>> {
    if ca.len() < 3 {
        return Err(Error::invalid(
            "backbone reconstruction needs at least 3 Cα positions",
        ));
    }
    for (i, w) in ca.windows(2).enumerate() {
        if (w[1] - w[0]).norm() < EPS {
            return Err(Error::Degenerate(format!(
                "consecutive Cα {} and {} coincide",
                i,
                i + 1
            )));
        }
    }
    let l = ca.len();
    let mut offsets = vec![(Point3::zeros(), Point3::zeros()); l];
    for i in 1..l - 1 {
        let to_prev = (ca[i - 1] - ca[i]).normalize();
        let to_next = (ca[i + 1] - ca[i]).normalize();
        offsets[i] = ideal_offsets(&to_prev, &to_next);
    }
    offsets[0] = offsets[1];
    offsets[l - 1] = offsets[l - 2];
    Ok(ca
        .iter()
        .zip(offsets)
        .map(|(c, (dn, dc))| (c + dn, c + dc))
        .collect())
}

/// Local residue frame: origin at Cα, first axis along N−Cα, second axis
/// the Gram–Schmidt-orthonormalised C−Cα, third their cross product.
pub fn build_local_frame(n: &Point3, ca: &Point3, c: &Point3) -> Result<RigidTransform> {
    let v1 = n - ca;
    let v2 = c - ca;
    if v1.norm() < EPS || v2.norm() < EPS {
        return Err(Error::Degenerate("backbone atom coincides with CA".into()));
    }
    let e1 = v1.normalize();
    let ortho = v2 - e1 * e1.dot(&v2);
    if ortho.norm() < 1e-8 * v2.norm() {
        return Err(Error::Degenerate("collinear N, CA, C".into()));
    }
    let e2 = ortho.normalize();
    let e3 = e1.cross(&e2);
    Ok(RigidTransform {
        rotation: Matrix3::from_columns(&[e1, e2, e3]),
        translation: *ca,
    })
}

/// `anchor⁻¹ ∘ neighbor`: the neighbour frame expressed in anchor coordinates.
pub fn relative_transform(anchor: &RigidTransform, neighbor: &RigidTransform) -> RigidTransform {
    anchor.inverse().compose(neighbor)
}

/// The `k` residues nearest to `query` by Cα distance among those with
/// `|i − query| > min_seq_sep`, closest first, ties to the lower index.
pub fn knn_neighbors(
    frame: &FrameCoords,
    query: usize,
    k: usize,
    min_seq_sep: usize,
) -> Result<Vec<usize>> {
    let l = frame.residue_count();
    if query >= l {
        return Err(Error::invalid(format!(
            "residue {query} out of range (L = {l})"
        )));
    }
    let q = frame.ca(query);
    let mut eligible: Vec<(f64, usize)> = (0..l)
        .filter(|&j| j != query && j.abs_diff(query) > min_seq_sep)
        .map(|j| ((frame.ca(j) - q).norm_squared(), j))
        .collect();
    if eligible.len() < k {
        return Err(Error::TooFewNeighbors {
            residue: query,
            eligible: eligible.len(),
            k,
        });
    }
    eligible.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(eligible.into_iter().take(k).map(|(_, j)| j).collect())
}

/// RMS Cα distance from the centroid of the window `center ± window`,
/// clipped at the chain ends.
pub fn local_gyration_radius(frame: &FrameCoords, center: usize, window: usize) -> f64 {
    let l = frame.residue_count();
    let lo = center.saturating_sub(window);
    let hi = (center + window).min(l - 1);
    let pts: Vec<Point3> = (lo..=hi).map(|r| frame.ca(r)).collect();
    let c = centroid(pts.iter());
    let ms: f64 = pts.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / pts.len() as f64;
    ms.sqrt()
}

/// Two largest singular values of the row-centred `P × 3` matrix.
pub fn top_two_singular_values(rows: &[Point3]) -> (f64, f64) {
    if rows.is_empty() {
        return (0.0, 0.0);
    }
    let c = centroid(rows.iter());
    let mut gram = Matrix3::zeros();
    for r in rows {
        let d = r - c;
        gram += d * d.transpose();
    }
    let eig = SymmetricEigen::new(gram);
    let mut vals: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    (vals[0], vals[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn p(x: f64, y: f64, z: f64) -> Point3 {
        Point3::new(x, y, z)
    }

    fn rot_z90() -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2).matrix()
    }

    fn cloud() -> Vec<Point3> {
        vec![
            p(0.0, 0.0, 0.0),
            p(1.5, 0.2, -0.3),
            p(2.1, 1.9, 0.4),
            p(-0.7, 2.5, 1.1),
            p(0.3, -1.2, 2.2),
        ]
    }

    #[test]
    fn kabsch_identity() {
        let x = cloud();
        let (t, rmsd) = kabsch_superpose(&x, &x, &[]).unwrap();
        assert!(rmsd < 1e-12);
        assert!((t.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn kabsch_inverts_known_transform() {
        let target = cloud();
        let g = RigidTransform::new(rot_z90(), p(1.0, 2.0, 3.0)).unwrap();
        let mobile: Vec<Point3> = target.iter().map(|x| g.apply(x)).collect();
        let (t, rmsd) = kabsch_superpose(&mobile, &target, &[]).unwrap();
        assert!(rmsd < 1e-9);
        let inv = g.inverse();
        assert!((t.rotation - inv.rotation).amax() < 1e-9);
        assert!((t.translation - inv.translation).norm() < 1e-9);
    }

    #[test]
    fn kabsch_exclusion_ignores_perturbed_point() {
        let target = vec![p(0.0, 0.0, 0.0), p(3.8, 0.0, 0.0), p(5.0, 3.0, 0.0)];
        let mut mobile = target.clone();
        mobile[2].z += 0.1;
        let (_, rmsd) = kabsch_superpose(&mobile, &target, &[2]).unwrap();
        assert!(rmsd < 1e-12);
        let (_, full) = kabsch_superpose(&mobile, &target, &[]).unwrap();
        assert!(full > 0.0);
    }

    #[test]
    fn kabsch_rejects_coincident_points() {
        let x = vec![p(1.0, 1.0, 1.0); 4];
        assert!(matches!(
            kabsch_superpose(&x, &x, &[]),
            Err(Error::Degenerate(_))
        ));
        assert!(kabsch_superpose(&cloud()[..2], &cloud()[..2], &[]).is_err());
    }

    #[test]
    fn dihedral_planar_cases() {
        let trans = dihedral_angle(
            &p(1.0, 0.0, 0.0),
            &p(0.0, 0.0, 0.0),
            &p(0.0, 1.0, 0.0),
            &p(-1.0, 1.0, 0.0),
        )
        .unwrap();
        assert!((trans.abs() - 180.0).abs() < 1e-12);
        assert_eq!(trans, 180.0);
        let cis = dihedral_angle(
            &p(1.0, 0.0, 0.0),
            &p(0.0, 0.0, 0.0),
            &p(0.0, 1.0, 0.0),
            &p(1.0, 1.0, 0.0),
        )
        .unwrap();
        assert!(cis.abs() < 1e-12);
    }

    #[test]
    fn dihedral_sign_convention() {
        // b1 = (-1,0,0), b2 = (0,1,0), b3 = (0,0,1): |b2| b1·(b2×b3) = -1, (b1×b2)·(b2×b3) = 0.
        let d = dihedral_angle(
            &p(1.0, 0.0, 0.0),
            &p(0.0, 0.0, 0.0),
            &p(0.0, 1.0, 0.0),
            &p(0.0, 1.0, 1.0),
        )
        .unwrap();
        assert!((d + 90.0).abs() < 1e-12);
    }

    #[test]
    fn dihedral_zero_bond_errors() {
        let o = p(0.0, 0.0, 0.0);
        assert!(dihedral_angle(&o, &o, &p(0.0, 1.0, 0.0), &p(1.0, 1.0, 0.0)).is_err());
    }

    fn angle_deg(a: &Point3, b: &Point3, c: &Point3) -> f64 {
        let u = (a - b).normalize();
        let v = (c - b).normalize();
        u.dot(&v).clamp(-1.0, 1.0).acos().to_degrees()
    }

    #[test]
    fn reconstruct_straight_chain() {
        let ca: Vec<Point3> = (0..6).map(|i| p(3.8 * i as f64, 0.0, 0.0)).collect();
        let nc = reconstruct_backbone(&ca).unwrap();
        for (i, (n, c)) in nc.iter().enumerate() {
            assert!(((n - ca[i]).norm() - 1.46).abs() < 1e-12);
            assert!(((c - ca[i]).norm() - 1.52).abs() < 1e-12);
            assert!((angle_deg(n, &ca[i], c) - 111.0).abs() < 1e-6);
        }
    }

    #[test]
    fn reconstruct_bent_chain_angle() {
        let ca = vec![
            p(0.0, 0.0, 0.0),
            p(3.8, 0.0, 0.0),
            p(5.0, 3.6, 0.5),
            p(8.0, 4.0, 2.0),
        ];
        let nc = reconstruct_backbone(&ca).unwrap();
        for (i, (n, c)) in nc.iter().enumerate() {
            assert!((angle_deg(n, &ca[i], c) - 111.0).abs() < 1e-6);
            assert!(((n - ca[i]).norm() - 1.46).abs() < 1e-12);
        }
        // N sits on the side of the previous residue.
        assert!((nc[1].0 - ca[0]).norm() < (nc[1].1 - ca[0]).norm());
    }

    #[test]
    fn reconstruct_rejects_short_or_coincident() {
        assert!(reconstruct_backbone(&[p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0)]).is_err());
        assert!(
            reconstruct_backbone(&[p(0.0, 0.0, 0.0), p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0)]).is_err()
        );
    }

    #[test]
    fn local_frame_canonical_and_rotated() {
        let (n, ca, c) = (p(1.46, 0.0, 0.0), p(0.0, 0.0, 0.0), p(0.5, 1.4, 0.0));
        let f = build_local_frame(&n, &ca, &c).unwrap();
        assert!((f.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(f.translation.norm() < 1e-12);

        let r = *Rotation3::from_euler_angles(0.3, -1.1, 2.0).matrix();
        let g = build_local_frame(&(r * n), &(r * ca), &(r * c)).unwrap();
        assert!((g.rotation - r).amax() < 1e-12);

        assert!(build_local_frame(&p(1.0, 0.0, 0.0), &ca, &p(2.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn relative_transform_identities() {
        let t = RigidTransform::new(rot_z90(), p(1.0, -2.0, 0.5)).unwrap();
        let same = relative_transform(&t, &t);
        assert!((same.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(same.translation.norm() < 1e-12);
        let from_id = relative_transform(&RigidTransform::identity(), &t);
        assert!((from_id.rotation - t.rotation).amax() < 1e-15);
        assert!((from_id.translation - t.translation).norm() < 1e-15);
    }

    fn line_frame(xs: &[f64]) -> FrameCoords {
        FrameCoords::from_ca(xs.iter().map(|&x| p(x, 0.0, 0.0)).collect()).unwrap()
    }

    #[test]
    fn knn_orders_by_distance() {
        let f = line_frame(&[0.0, 1.0, 2.5, 6.0]);
        assert_eq!(knn_neighbors(&f, 0, 2, 0).unwrap(), vec![1, 2]);
    }

    #[test]
    fn knn_tie_breaks_to_lower_index() {
        let f = line_frame(&[-1.0, 0.0, 1.0, 5.0]);
        assert_eq!(knn_neighbors(&f, 1, 2, 0).unwrap(), vec![0, 2]);
    }

    #[test]
    fn knn_too_few_eligible() {
        let f = line_frame(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let err = knn_neighbors(&f, 0, 2, 3).unwrap_err();
        assert!(matches!(
            err,
            Error::TooFewNeighbors {
                residue: 0,
                eligible: 1,
                k: 2
            }
        ));
    }

    #[test]
    fn gyration_radius_cases() {
        let f = line_frame(&[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(local_gyration_radius(&f, 1, 1), 0.0);
        let g = line_frame(&[0.0, 4.0]);
        assert!((local_gyration_radius(&g, 0, 1) - 2.0).abs() < 1e-12);
        let h = line_frame(&[0.0, 1.0, 3.0, 7.0]);
        let s = line_frame(&[0.0, 2.5, 7.5, 17.5]);
        assert!(
            (local_gyration_radius(&s, 1, 2) - 2.5 * local_gyration_radius(&h, 1, 2)).abs() < 1e-12
        );
    }

    #[test]
    fn singular_values_hand_cases() {
        let same = vec![p(1.0, 2.0, 3.0); 4];
        let (s1, s2) = top_two_singular_values(&same);
        assert!(s1.abs() < 1e-12 && s2.abs() < 1e-12);
        let (s1, s2) = top_two_singular_values(&[p(1.0, 0.0, 0.0), p(-1.0, 0.0, 0.0)]);
        assert!((s1 - 2f64.sqrt()).abs() < 1e-12 && s2.abs() < 1e-12);
        let square = [
            p(1.0, 0.0, 0.0),
            p(0.0, 1.0, 0.0),
            p(-1.0, 0.0, 0.0),
            p(0.0, -1.0, 0.0),
        ];
        let (s1, s2) = top_two_singular_values(&square);
        assert!((s1 - 2f64.sqrt()).abs() < 1e-12 && (s2 - 2f64.sqrt()).abs() < 1e-12);
    }
}
