//! Rotation-only registration between two sets of extracted planes.
//! Candidate pairs are screened by the information their point support
//! carries, then pruned by mutual geometric consistency, and the
//! surviving normal pairs feed a weighted quaternion alignment whose
//! curvature yields both a covariance and the count of observable
//! rotation directions.

use crate::planes::FittedPlane;
use nalgebra::{Matrix3, Matrix4, Matrix4x3, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("rotation needs at least one normal pair")]
    NoPairs,
    #[error("pair weights must be positive and finite")]
    BadWeights,
}

/// Per-point orthogonal noise the information matrix is scaled by.
pub const DEFAULT_SIGMA0: f64 = 0.005;

/// Information carried by a plane's point support: in-plane spread
/// constrains rotation, point count constrains the normal direction.
pub fn plane_information(plane: &FittedPlane, sigma0: f64) -> Matrix3<f64> {
    let n = plane.normal;
    let proj = Matrix3::identity() - n * n.transpose();
    (proj * plane.scatter * proj + n * n.transpose() * plane.count as f64) / (sigma0 * sigma0)
}

pub fn log_det_information(plane: &FittedPlane, sigma0: f64) -> f64 {
    plane_information(plane, sigma0).determinant().max(1e-300).ln()
}

/// Planes of comparable support have comparable information volume.
pub fn log_det_test(a: &FittedPlane, b: &FittedPlane, sigma0: f64, l_det: f64) -> bool {
    (log_det_information(a, sigma0) - log_det_information(b, sigma0)).abs() < l_det
}

/// Rigid motion preserves angles between plane normals, so two correct
/// pairs see the same normal dot product in both frames.
pub fn cross_angle_test(
    na_i: &Vector3<f64>,
    nb_i: &Vector3<f64>,
    na_j: &Vector3<f64>,
    nb_j: &Vector3<f64>,
    tol: f64,
) -> bool {
    (na_i.dot(na_j) - nb_i.dot(nb_j)).abs() < tol
}

#[derive(Debug, PartialEq, Eq)]
enum ParallelClass {
    Parallel,
    Antiparallel,
    NonParallel,
}

fn classify(dot: f64, tol: f64) -> ParallelClass {
    if dot > 1.0 - tol {
        ParallelClass::Parallel
    } else if dot < -(1.0 - tol) {
        ParallelClass::Antiparallel
    } else {
        ParallelClass::NonParallel
    }
}

/// Parallelism between two planes survives rigid motion; a pair of
/// candidates that agrees in one frame and not the other is wrong.
pub fn parallel_consistency(
    na_i: &Vector3<f64>,
    nb_i: &Vector3<f64>,
    na_j: &Vector3<f64>,
    nb_j: &Vector3<f64>,
    tol: f64,
) -> bool {
    classify(na_i.dot(na_j), tol) == classify(nb_i.dot(nb_j), tol)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    /// Planes below this point count never enter matching.
    pub min_points: usize,
    /// Log information-volume gate between candidate mates.
    pub l_det: f64,
    pub cross_angle_tol: f64,
    pub parallel_tol: f64,
    pub sigma0: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            min_points: 300,
            l_det: 1.0,
            cross_angle_tol: 0.1,
            parallel_tol: 0.02,
            sigma0: DEFAULT_SIGMA0,
        }
    }
}

/// Matched plane indices with a normalized weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanePair {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Associates planes between two frames.
///
/// Candidates pass the size and information gates, then conflicts
/// between candidates on four distinct planes are removed greedily,
/// worst offender first. Each plane is finally used at most once,
/// preferring the tightest information agreement. Weights are
/// proportional to combined point support and sum to one.
pub fn match_planes(
    planes_a: &[FittedPlane],
    planes_b: &[FittedPlane],
    params: &MatchParams,
) -> Vec<PlanePair> {
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for (i, a) in planes_a.iter().enumerate() {
        if a.count < params.min_points {
            continue;
        }
        for (j, b) in planes_b.iter().enumerate() {
            if b.count < params.min_points {
                continue;
            }
            if log_det_test(a, b, params.sigma0, params.l_det) {
                candidates.push((i, j));
            }
        }
    }

    let consistent = |x: &(usize, usize), y: &(usize, usize)| {
        let (na_i, nb_i) = (&planes_a[x.0].normal, &planes_b[x.1].normal);
        let (na_j, nb_j) = (&planes_a[y.0].normal, &planes_b[y.1].normal);
        cross_angle_test(na_i, nb_i, na_j, nb_j, params.cross_angle_tol)
            && parallel_consistency(na_i, nb_i, na_j, nb_j, params.parallel_tol)
    };

    loop {
        let mut worst: Option<(usize, usize)> = None;
        for (k, cand) in candidates.iter().enumerate() {
            let conflicts = candidates
                .iter()
                .filter(|other| {
                    other.0 != cand.0 && other.1 != cand.1 && !consistent(cand, other)
                })
                .count();
            if conflicts == 0 {
                continue;
            }
            let better = match worst {
                None => true,
                Some((_, best_count)) => {
                    let best = &candidates[worst.unwrap().0];
                    let support = |c: &(usize, usize)| {
                        planes_a[c.0].count + planes_b[c.1].count
                    };
                    conflicts > best_count
                        || (conflicts == best_count && support(cand) < support(best))
                        || (conflicts == best_count
                            && support(cand) == support(best)
                            && *cand > *best)
                }
            };
            if better {
                worst = Some((k, conflicts));
            }
        }
        match worst {
            Some((k, _)) => {
                candidates.remove(k);
            }
            None => break,
        }
    }

    let quality = |c: &(usize, usize)| {
        (log_det_information(&planes_a[c.0], params.sigma0)
            - log_det_information(&planes_b[c.1], params.sigma0))
        .abs()
    };
    candidates.sort_by(|x, y| quality(x).total_cmp(&quality(y)).then(x.cmp(y)));
    let mut used_a = vec![false; planes_a.len()];
    let mut used_b = vec![false; planes_b.len()];
    let mut pairs = Vec::new();
    for (i, j) in candidates {
        if used_a[i] || used_b[j] {
            continue;
        }
        used_a[i] = true;
        used_b[j] = true;
        pairs.push(PlanePair {
            a: i,
            b: j,
            weight: (planes_a[i].count + planes_b[j].count) as f64,
        });
    }
    let total: f64 = pairs.iter().map(|p| p.weight).sum();
    if total > 0.0 {
        for p in &mut pairs {
            p.weight /= total;
        }
    }
    pairs.sort_by(|x, y| (x.a, x.b).cmp(&(y.a, y.b)));
    pairs
}

/// Normal pairs (frame a, frame b, weight) for the matched planes.
pub fn paired_normals(
    planes_a: &[FittedPlane],
    planes_b: &[FittedPlane],
    pairs: &[PlanePair],
) -> Vec<(Vector3<f64>, Vector3<f64>, f64)> {
    pairs
        .iter()
        .map(|p| (planes_a[p.a].normal, planes_b[p.b].normal, p.weight))
        .collect()
}

/// Weighted rotation alignment result. `rotation` maps frame-b vectors
/// into frame a: n_a = R n_b for every true pair.
#[derive(Debug, Clone)]
pub struct RotationEstimate {
    pub rotation: UnitQuaternion<f64>,
    /// Covariance of the quaternion coefficients (w, x, y, z).
    pub quat_covariance: Matrix4<f64>,
    /// Rotation directions the pairs actually constrain, 0 to 3.
    pub observable_dof: usize,
    /// Alignment objective at the optimum; equals the total weight for
    /// perfectly aligned pairs.
    pub alignment_gain: f64,
}

/// Threshold separating constrained from unconstrained curvature,
/// relative to the largest curvature magnitude.
const RANK_TOL: f64 = 1e-8;

/// Finds the rotation maximizing the weighted alignment of normal
/// pairs, as the principal eigenvector of the quadratic alignment form.
pub fn estimate_rotation(
    pairs: &[(Vector3<f64>, Vector3<f64>, f64)],
) -> Result<RotationEstimate, RegistrationError> {
    if pairs.is_empty() {
        return Err(RegistrationError::NoPairs);
    }
    let mut b_mat = Matrix3::zeros();
    let mut z = Vector3::zeros();
    for &(na, nb, w) in pairs {
        if !(w.is_finite() && w > 0.0) {
            return Err(RegistrationError::BadWeights);
        }
        let na = na.normalize();
        let nb = nb.normalize();
        b_mat += w * na * nb.transpose();
        z += w * na.cross(&nb);
    }
    let sigma = b_mat.trace();
    let s = b_mat + b_mat.transpose();

    let mut k = Matrix4::zeros();
    k[(0, 0)] = sigma;
    for i in 0..3 {
        k[(0, i + 1)] = -z[i];
        k[(i + 1, 0)] = -z[i];
        for j in 0..3 {
            k[(i + 1, j + 1)] = s[(i, j)] - if i == j { sigma } else { 0.0 };
        }
    }

    let eig = k.symmetric_eigen();
    let best = (0..4)
        .max_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]))
        .unwrap();
    let mu = eig.eigenvalues[best];
    let mut q_vec = eig.eigenvectors.column(best).into_owned();
    if q_vec[0] < 0.0 {
        q_vec = -q_vec;
    }
    let rotation = UnitQuaternion::from_quaternion(Quaternion::new(
        q_vec[0], q_vec[1], q_vec[2], q_vec[3],
    ));

    // Curvature of the alignment form restricted to the unit sphere.
    let h_qq = 2.0 * (k - Matrix4::identity() * mu);
    let h_eig = h_qq.symmetric_eigen();
    let scale = h_eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
        .max(1e-300);
    let mut c_qq = Matrix4::zeros();
    for i in 0..4 {
        let lam = h_eig.eigenvalues[i];
        if lam.abs() > RANK_TOL * scale {
            let v = h_eig.eigenvectors.column(i);
            c_qq += (-1.0 / lam) * v * v.transpose();
        }
    }

    let u = tangent_basis(&rotation);
    let h_t = u.transpose() * h_qq * u;
    let t_eig = h_t.symmetric_eigen();
    let observable_dof = (0..3)
        .filter(|i| t_eig.eigenvalues[*i].abs() > RANK_TOL * scale)
        .count();

    Ok(RotationEstimate {
        rotation,
        quat_covariance: c_qq,
        observable_dof,
        alignment_gain: mu,
    })
}

/// Orthonormal basis of the quaternion tangent space at q: columns are
/// the coefficient directions of q composed with each imaginary unit.
fn tangent_basis(q: &UnitQuaternion<f64>) -> Matrix4x3<f64> {
    let mut u = Matrix4x3::zeros();
    for k in 0..3 {
        let mut axis = Vector3::zeros();
        axis[k] = 1.0;
        let dq = q.into_inner() * Quaternion::from_imag(axis);
        u[(0, k)] = dq.w;
        u[(1, k)] = dq.i;
        u[(2, k)] = dq.j;
        u[(3, k)] = dq.k;
    }
    u
}

impl RotationEstimate {
    /// Covariance of the right tangent perturbation, with directions the
    /// measurement does not constrain inflated to `kappa`.
    pub fn tangent_covariance(&self, kappa: f64) -> Matrix3<f64> {
        let u = tangent_basis(&self.rotation);
        // d(q Exp(theta))/d(theta) at 0 is U/2, so Sigma_theta maps
        // through the inverse factor 2.
        let mut sigma = 4.0 * (u.transpose() * self.quat_covariance * u);
        let h_t = u.transpose()
            * (self.quat_covariance_curvature())
            * u;
        let eig = h_t.symmetric_eigen();
        let scale = eig
            .eigenvalues
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
            .max(1e-300);
        for i in 0..3 {
            if eig.eigenvalues[i].abs() <= RANK_TOL * scale {
                let v = eig.eigenvectors.column(i);
                sigma += kappa * v * v.transpose();
            }
        }
        0.5 * (sigma + sigma.transpose())
    }

    /// Reconstructs the sphere-restricted curvature from the stored
    /// covariance: pseudoinversion is an involution on the same basis.
    fn quat_covariance_curvature(&self) -> Matrix4<f64> {
        let eig = self.quat_covariance.symmetric_eigen();
        let scale = eig
            .eigenvalues
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
            .max(1e-300);
        let mut h = Matrix4::zeros();
        for i in 0..4 {
            let lam = eig.eigenvalues[i];
            if lam.abs() > RANK_TOL * scale {
                let v = eig.eigenvectors.column(i);
                h += (-1.0 / lam) * v * v.transpose();
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::geodesic_distance;
    use crate::planes::{fit_plane, PlaneMoments};
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn plane_from_grid(
        normal: Vector3<f64>,
        d: f64,
        extent: f64,
        steps: usize,
        repeat: usize,
    ) -> FittedPlane {
        let n = normal.normalize();
        let pick = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e1 = n.cross(&pick).normalize();
        let e2 = n.cross(&e1);
        let mut moments = PlaneMoments::default();
        for _ in 0..repeat {
            for i in 0..steps {
                for j in 0..steps {
                    let u = -extent + 2.0 * extent * i as f64 / (steps - 1) as f64;
                    let v = -extent + 2.0 * extent * j as f64 / (steps - 1) as f64;
                    moments.update(&(n * d + e1 * u + e2 * v));
                }
            }
        }
        fit_plane(&moments, &(n * (d + 1.0))).unwrap()
    }

    #[test]
    fn information_doubles_with_duplicated_support() {
        let single = plane_from_grid(Vector3::new(0.2, 0.5, 1.0), 1.2, 0.7, 25, 1);
        let double = plane_from_grid(Vector3::new(0.2, 0.5, 1.0), 1.2, 0.7, 25, 2);
        let diff = log_det_information(&double, 0.005) - log_det_information(&single, 0.005);
        assert!((diff - 3.0 * 2.0_f64.ln()).abs() < 1e-9, "diff {diff}");
        let hundred = plane_from_grid(Vector3::new(0.2, 0.5, 1.0), 1.2, 0.7, 25, 100);
        let diff100 = log_det_information(&hundred, 0.005) - log_det_information(&single, 0.005);
        assert!((diff100 - 3.0 * 100.0_f64.ln()).abs() < 1e-9, "diff {diff100}");
    }

    #[test]
    fn information_spectrum_is_rotation_invariant() {
        let base = plane_from_grid(Vector3::z(), 0.8, 0.6, 20, 1);
        let rot = UnitQuaternion::from_euler_angles(0.4, -0.3, 1.1);
        let mut moments = PlaneMoments::default();
        let n = Vector3::z();
        let e1 = Vector3::x();
        let e2 = Vector3::y();
        for i in 0..20 {
            for j in 0..20 {
                let u = -0.6 + 1.2 * i as f64 / 19.0;
                let v = -0.6 + 1.2 * j as f64 / 19.0;
                moments.update(&(rot * (n * 0.8 + e1 * u + e2 * v)));
            }
        }
        let rotated = fit_plane(&moments, &(rot * (n * 1.8))).unwrap();
        let ha = plane_information(&base, 0.005).symmetric_eigen().eigenvalues;
        let hb = plane_information(&rotated, 0.005).symmetric_eigen().eigenvalues;
        let mut sa: Vec<f64> = ha.iter().copied().collect();
        let mut sb: Vec<f64> = hb.iter().copied().collect();
        sa.sort_by(f64::total_cmp);
        sb.sort_by(f64::total_cmp);
        for (x, y) in sa.iter().zip(&sb) {
            assert!((x - y).abs() < 1e-6 * x.abs().max(1.0), "{x} vs {y}");
        }
        assert!(
            (log_det_information(&base, 0.005) - log_det_information(&rotated, 0.005)).abs()
                < 1e-9
        );
    }

    #[test]
    fn consistency_tests_separate_good_from_bad() {
        let ex = Vector3::x();
        let ey = Vector3::y();
        let tilted = (ex + ey * 0.4).normalize();
        assert!(cross_angle_test(&ex, &ex, &ey, &ey, 0.1));
        assert!(!cross_angle_test(&ex, &ex, &ey, &tilted, 0.1));
        assert!(parallel_consistency(&ex, &ex, &ex, &ex, 0.02));
        assert!(parallel_consistency(&ex, &ex, &-ex, &-ex, 0.02));
        assert!(!parallel_consistency(&ex, &ex, &ex, &tilted, 0.02));
        assert!(parallel_consistency(&ex, &ex, &ey, &ey, 0.02));
    }

    #[test]
    fn single_pair_recovers_the_quarter_turn() {
        // One pair leaves a one-parameter family of optima; any member
        // must align the normals and differ from the canonical quarter
        // turn only by a rotation about the aligned axis.
        let est = estimate_rotation(&[(Vector3::y(), Vector3::x(), 1.0)]).unwrap();
        let rotated = est.rotation * Vector3::x();
        assert!((rotated - Vector3::y()).norm() < 1e-9);
        let canonical =
            UnitQuaternion::from_scaled_axis(Vector3::z() * std::f64::consts::FRAC_PI_2);
        let rel = canonical.inverse() * est.rotation;
        let axis = rel.scaled_axis();
        assert!(
            axis.norm() < 1e-9 || (axis.normalize().dot(&Vector3::x())).abs() > 1.0 - 1e-9,
            "family parameter strayed off the aligned axis: {axis:?}"
        );
        assert_eq!(est.observable_dof, 2);
        assert!((est.alignment_gain - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_pairs_pin_the_quarter_turn_exactly() {
        let est = estimate_rotation(&[
            (Vector3::y(), Vector3::x(), 0.7),
            (Vector3::z(), Vector3::z(), 0.3),
        ])
        .unwrap();
        let q = est.rotation.into_inner();
        assert!((q.w - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!((q.k - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!(q.i.abs() < 1e-9 && q.j.abs() < 1e-9);
        assert_eq!(est.observable_dof, 3);
        assert!((est.alignment_gain - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exact_pairs_recover_the_exact_rotation() {
        let mut rng = rng::chacha(31, 0);
        for _ in 0..50 {
            let axis = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let angle = rng.random_range(-3.0..3.0);
            let truth = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
            let normals = [
                Vector3::x(),
                Vector3::y(),
                Vector3::new(0.3, -0.4, 0.9).normalize(),
            ];
            let pairs: Vec<_> = normals
                .iter()
                .enumerate()
                .map(|(k, nb)| (truth * nb, *nb, 0.2 + k as f64 * 0.4))
                .collect();
            let est = estimate_rotation(&pairs).unwrap();
            assert!(
                geodesic_distance(&est.rotation, &truth) < 1e-9,
                "missed rotation by {}",
                geodesic_distance(&est.rotation, &truth)
            );
            assert_eq!(est.observable_dof, 3);
            let total: f64 = pairs.iter().map(|p| p.2).sum();
            assert!((est.alignment_gain - total).abs() < 1e-9);
            assert!(est.rotation.into_inner().w >= 0.0);
        }
    }

    #[test]
    fn noisy_pairs_degrade_gracefully() {
        let mut rng = rng::chacha(32, 0);
        let truth = UnitQuaternion::from_euler_angles(0.2, -0.1, 0.7);
        let normals = [Vector3::x(), Vector3::y(), Vector3::z()];
        let mut errs = [0.0, 0.0];
        for (idx, sigma) in [(0, 0.002), (1, 0.02)] {
            let mut total = 0.0;
            for _ in 0..100 {
                let pairs: Vec<_> = normals
                    .iter()
                    .map(|nb| {
                        let jitter = Vector3::new(
                            rng.sample::<f64, _>(StandardNormal),
                            rng.sample::<f64, _>(StandardNormal),
                            rng.sample::<f64, _>(StandardNormal),
                        ) * sigma;
                        (((truth * nb) + jitter).normalize(), *nb, 1.0)
                    })
                    .collect();
                let est = estimate_rotation(&pairs).unwrap();
                total += geodesic_distance(&est.rotation, &truth);
            }
            errs[idx] = total / 100.0;
        }
        assert!(errs[0] < 0.01, "low noise error {}", errs[0]);
        assert!(errs[1] > 3.0 * errs[0], "noise scaling {errs:?}");
    }

    #[test]
    fn unconstrained_directions_get_inflated_variance() {
        let est = estimate_rotation(&[(Vector3::y(), Vector3::x(), 1.0)]).unwrap();
        let kappa = 1e6;
        let sigma = est.tangent_covariance(kappa);
        let eig = sigma.symmetric_eigen();
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        assert!((vals[2] - kappa).abs() < 1e-3 * kappa, "inflated {}", vals[2]);
        assert!(vals[1] < kappa / 1e3, "constrained {}", vals[1]);
        assert!(vals[0] > 0.0);
        // Unobservable direction is rotation about the aligned normal.
        let axis_var = {
            let n = Vector3::y();
            // Right tangent: rotation about world n is q Exp(R^T n).
            let local = est.rotation.inverse() * n;
            (local.transpose() * sigma * local)[(0, 0)]
        };
        assert!(axis_var > 0.5 * kappa, "axis variance {axis_var}");
    }

    #[test]
    fn three_wall_scene_matches_one_to_one() {
        let rot = UnitQuaternion::from_euler_angles(0.05, -0.03, 0.4);
        let specs = [
            (Vector3::x(), 1.5, 0.9, 40),
            (Vector3::y(), 1.5, 0.8, 33),
            (Vector3::z(), 1.0, 0.7, 26),
        ];
        let planes_a: Vec<FittedPlane> = specs
            .iter()
            .map(|(n, d, e, steps)| plane_from_grid(*n, *d, *e, *steps, 1))
            .collect();
        let mut planes_b: Vec<FittedPlane> = specs
            .iter()
            .map(|(n, d, e, steps)| {
                let base = plane_from_grid(*n, *d, *e, *steps, 1);
                rotate_plane(&base, &rot.inverse())
            })
            .collect();
        // A small distractor that fails the size gate.
        planes_b.push(plane_from_grid(Vector3::new(1.0, 1.0, 0.0), 0.5, 0.2, 12, 1));

        let pairs = match_planes(&planes_a, &planes_b, &MatchParams::default());
        assert_eq!(pairs.len(), 3);
        for (k, p) in pairs.iter().enumerate() {
            assert_eq!(p.a, k);
            assert_eq!(p.b, k);
        }
        let total: f64 = pairs.iter().map(|p| p.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(pairs[0].weight > pairs[2].weight, "weights follow support");

        let est = estimate_rotation(&paired_normals(&planes_a, &planes_b, &pairs)).unwrap();
        assert!(geodesic_distance(&est.rotation, &rot) < 1e-9);
        assert_eq!(est.observable_dof, 3);
    }

    fn rotate_plane(p: &FittedPlane, rot: &UnitQuaternion<f64>) -> FittedPlane {
        let r = rot.to_rotation_matrix();
        FittedPlane {
            normal: rot * p.normal,
            d: p.d,
            centroid: rot * p.centroid,
            count: p.count,
            rms: p.rms,
            scatter: r.matrix() * p.scatter * r.matrix().transpose(),
        }
    }

    #[test]
    fn empty_and_bad_inputs_error_out() {
        assert!(matches!(
            estimate_rotation(&[]),
            Err(RegistrationError::NoPairs)
        ));
        assert!(matches!(
            estimate_rotation(&[(Vector3::x(), Vector3::x(), 0.0)]),
            Err(RegistrationError::BadWeights)
        ));
        assert!(matches!(
            estimate_rotation(&[(Vector3::x(), Vector3::x(), f64::NAN)]),
            Err(RegistrationError::BadWeights)
        ));
    }
}
