//! Per-point geometric features from local neighborhood covariance:
//! linearity, planarity, scattering, verticality and normalized elevation.

use rayon::prelude::*;

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::{eigen_sym3, Eigen3, Sym3, Vec3};

/// Feature order: linearity, planarity, scattering, verticality, elevation.
pub const GEOM_DIM: usize = 5;

#[derive(Debug, Clone)]
pub struct GeomFeatures {
    pub values: Vec<[f64; GEOM_DIM]>,
    /// Points whose neighborhood covariance was all-zero.
    pub degenerate: Vec<usize>,
}

impl GeomFeatures {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Eigen-decomposition of the neighborhood covariance of every point.
/// Each neighbor list must contain the point itself and at least 3 entries;
/// eigenvalues come out sorted descending and clamped at zero.
pub fn local_covariance_eigs(cloud: &PointCloud, neighbors: &[Vec<usize>]) -> Result<Vec<Eigen3>> {
    if neighbors.len() != cloud.len() {
        return Err(Error::contract(format!(
            "neighbor list count {} != point count {}",
            neighbors.len(),
            cloud.len()
        )));
    }
    for (i, list) in neighbors.iter().enumerate() {
        if list.len() < 3 {
            return Err(Error::DegenerateNeighborhood { point: i, size: list.len() });
        }
        if !list.contains(&i) {
            return Err(Error::contract(format!("neighbor list of point {i} misses the point itself")));
        }
    }
    let eigs = neighbors
        .par_iter()
        .map(|list| {
            let pts: Vec<Vec3> = list.iter().map(|&j| cloud.positions[j]).collect();
            let mut e = eigen_sym3(Sym3::covariance(&pts));
            for v in &mut e.values {
                *v = v.max(0.0);
            }
            e
        })
        .collect();
    Ok(eigs)
}

/// Linearity, planarity and scattering from sorted eigenvalues, using the
/// standard deviations `s_k = sqrt(lambda_k)` along the principal axes.
/// Returns the feature triple and whether the neighborhood was degenerate
/// (all-zero covariance, mapped to pure scattering by convention).
pub fn dimensionality_features(lambda: [f64; 3]) -> ([f64; 3], bool) {
    debug_assert!(lambda[0] >= lambda[1] && lambda[1] >= lambda[2] && lambda[2] >= -1e-12);
    if lambda[0] <= 0.0 {
        return ([0.0, 0.0, 1.0], true);
    }
    let s1 = lambda[0].max(0.0).sqrt();
    let s2 = lambda[1].max(0.0).sqrt();
    let s3 = lambda[2].max(0.0).sqrt();
    ([(s1 - s2) / s1, (s2 - s3) / s1, s3 / s1], false)
}

/// Vertical component of the eigenvalue-weighted absolute-eigenvector sum.
pub fn verticality(eig: &Eigen3) -> f64 {
    let mut v = Vec3::ZERO;
    for k in 0..3 {
        let w = eig.values[k].max(0.0).sqrt();
        v = v.add(eig.vectors[k].abs().scale(w));
    }
    let n = v.norm();
    if n == 0.0 {
        0.0
    } else {
        v.z / n
    }
}

/// Per-point z coordinate normalized to [0,1] over the whole cloud.
pub fn elevation(cloud: &PointCloud) -> Vec<f64> {
    let z_min = cloud.positions.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let z_max = cloud.positions.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
    let range = z_max - z_min;
    if range <= 0.0 {
        return vec![0.0; cloud.len()];
    }
    cloud.positions.iter().map(|p| (p.z - z_min) / range).collect()
}

/// The full 5-dimensional feature vector for every point.
pub fn compute_features(cloud: &PointCloud, neighbors: &[Vec<usize>]) -> Result<GeomFeatures> {
    let eigs = local_covariance_eigs(cloud, neighbors)?;
    let elev = elevation(cloud);
    let mut values = Vec::with_capacity(cloud.len());
    let mut degenerate = Vec::new();
    for (i, eig) in eigs.iter().enumerate() {
        let (dims, degen) = dimensionality_features(eig.values);
        if degen {
            degenerate.push(i);
        }
        let vert = verticality(eig);
        values.push([dims[0], dims[1], dims[2], vert, elev[i]]);
    }
    Ok(GeomFeatures { values, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn cloud_from(pts: Vec<Vec3>) -> PointCloud {
        PointCloud::new(pts)
    }

    fn full_lists(n: usize) -> Vec<Vec<usize>> {
        (0..n).map(|_| (0..n).collect()).collect()
    }

    #[test]
    fn collinear_points_are_rank_one() {
        let cloud = cloud_from((0..4).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect());
        let eigs = local_covariance_eigs(&cloud, &full_lists(4)).unwrap();
        for e in &eigs {
            assert!(e.values[1].abs() < 1e-12);
            assert!(e.values[2].abs() < 1e-12);
            assert!(e.vectors[0].x.abs() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn square_in_plane_is_rank_two() {
        let cloud = cloud_from(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
        ]);
        let eigs = local_covariance_eigs(&cloud, &full_lists(4)).unwrap();
        for e in &eigs {
            assert!(e.values[2].abs() < 1e-12);
            assert!(e.vectors[2].z.abs() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn short_neighbor_list_is_rejected() {
        let cloud = cloud_from(vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)]);
        let lists = vec![vec![0, 1], vec![0, 1]];
        let err = local_covariance_eigs(&cloud, &lists).unwrap_err();
        assert!(matches!(err, Error::DegenerateNeighborhood { .. }));
    }

    #[test]
    fn eigenvalues_ignore_neighbor_order() {
        let mut rng = Rng::seed_from(4);
        let pts: Vec<Vec3> = (0..10)
            .map(|_| Vec3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
            .collect();
        let cloud = cloud_from(pts);
        let lists = full_lists(10);
        let mut shuffled = lists.clone();
        for l in &mut shuffled {
            rng.shuffle(l);
        }
        let a = local_covariance_eigs(&cloud, &lists).unwrap();
        let b = local_covariance_eigs(&cloud, &shuffled).unwrap();
        for (ea, eb) in a.iter().zip(&b) {
            for k in 0..3 {
                assert!((ea.values[k] - eb.values[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dimensionality_known_triples() {
        assert_eq!(dimensionality_features([1.0, 0.0, 0.0]).0, [1.0, 0.0, 0.0]);
        assert_eq!(dimensionality_features([1.0, 1.0, 1.0]).0, [0.0, 0.0, 1.0]);
        let (d, degen) = dimensionality_features([4.0, 1.0, 0.0]);
        assert!(!degen);
        assert_eq!(d, [0.5, 0.5, 0.0]);
    }

    #[test]
    fn dimensionality_zero_is_flagged_scattering() {
        let (d, degen) = dimensionality_features([0.0, 0.0, 0.0]);
        assert!(degen);
        assert_eq!(d, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn dimensionality_sums_to_one_over_random_triples() {
        let mut rng = Rng::seed_from(31);
        for _ in 0..2000 {
            let mut l = [rng.next_f64(), rng.next_f64(), rng.next_f64()];
            l.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let (d, _) = dimensionality_features(l);
            let sum: f64 = d.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for v in d {
                assert!((-1e-12..=1.0 + 1e-12).contains(&v));
            }
        }
    }

    #[test]
    fn verticality_of_vertical_line_is_one() {
        let eig = Eigen3 {
            values: [1.0, 0.0, 0.0],
            vectors: [Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
        };
        assert!((verticality(&eig) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn verticality_of_horizontal_plane_is_small() {
        let eig = Eigen3 {
            values: [1.0, 1.0, 0.0],
            vectors: [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0)],
        };
        let v = verticality(&eig);
        assert!(v < 0.5);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn verticality_isotropic_canonical_axes() {
        let eig = Eigen3 {
            values: [1.0, 1.0, 1.0],
            vectors: [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0)],
        };
        assert!((verticality(&eig) - 1.0 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn verticality_zero_weight_is_zero() {
        let eig = Eigen3 {
            values: [0.0, 0.0, 0.0],
            vectors: [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0)],
        };
        assert_eq!(verticality(&eig), 0.0);
    }

    #[test]
    fn elevation_min_max() {
        let cloud = cloud_from(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, 2.0),
        ]);
        assert_eq!(elevation(&cloud), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn elevation_constant_z_is_zero() {
        let cloud = cloud_from(vec![Vec3::new(0.0, 0.0, 5.0), Vec3::new(1.0, 0.0, 5.0)]);
        assert_eq!(elevation(&cloud), vec![0.0, 0.0]);
    }

    #[test]
    fn elevation_is_translation_invariant() {
        let mut rng = Rng::seed_from(8);
        let pts: Vec<Vec3> = (0..50)
            .map(|_| Vec3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
            .collect();
        let a = elevation(&cloud_from(pts.clone()));
        let shifted: Vec<Vec3> = pts.iter().map(|p| p.add(Vec3::new(3.0, -2.0, 10.0))).collect();
        let b = elevation(&cloud_from(shifted));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    /// Rigid motions: translation leaves every feature unchanged; a full 3D
    /// rotation preserves the dimensionality triple; rotation about the
    /// vertical axis preserves elevation exactly and verticality on
    /// structured (plane/line) neighborhoods.
    #[test]
    fn feature_invariances_under_rigid_motion() {
        let mut rng = Rng::seed_from(77);
        let pts: Vec<Vec3> = (0..60)
            .map(|_| Vec3::new(rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)))
            .collect();
        let lists = full_lists(60);
        let base = compute_features(&cloud_from(pts.clone()), &lists).unwrap();

        // translation
        let t = Vec3::new(-4.0, 2.5, 7.0);
        let moved: Vec<Vec3> = pts.iter().map(|p| p.add(t)).collect();
        let trans = compute_features(&cloud_from(moved), &lists).unwrap();
        for (a, b) in base.values.iter().zip(&trans.values) {
            for k in 0..GEOM_DIM {
                assert!((a[k] - b[k]).abs() < 1e-9, "feature {k} not translation invariant");
            }
        }

        // arbitrary rotation preserves linearity/planarity/scattering
        let ang: f64 = 0.731;
        let (s, c) = ang.sin_cos();
        let rot = |p: &Vec3| {
            // rotation about a skew axis: z-rotation then x-rotation
            let q = Vec3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z);
            Vec3::new(q.x, c * q.y - s * q.z, s * q.y + c * q.z)
        };
        let rotated: Vec<Vec3> = pts.iter().map(rot).collect();
        let rot_feats = compute_features(&cloud_from(rotated), &lists).unwrap();
        for (a, b) in base.values.iter().zip(&rot_feats.values) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9, "dimensionality not rotation invariant");
            }
        }

        // vertical-axis rotation preserves elevation for any cloud
        let vrot: Vec<Vec3> = pts
            .iter()
            .map(|p| Vec3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z))
            .collect();
        let v_feats = compute_features(&cloud_from(vrot), &lists).unwrap();
        for (a, b) in base.values.iter().zip(&v_feats.values) {
            assert!((a[4] - b[4]).abs() < 1e-9, "elevation not z-rotation invariant");
        }
    }

    #[test]
    fn verticality_invariant_to_vertical_rotation_on_planes_and_lines() {
        // flat plane and vertical line keep exact verticality under any
        // rotation about z
        let mut plane: Vec<Vec3> = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                plane.push(Vec3::new(i as f64 * 0.3, j as f64 * 0.2, 0.4));
            }
        }
        let line: Vec<Vec3> = (0..8).map(|i| Vec3::new(0.3, 0.7, i as f64 * 0.1)).collect();
        for ang in [0.3_f64, 1.1, 2.7] {
            let (s, c) = ang.sin_cos();
            let rot = |p: &Vec3| Vec3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z);
            for pts in [&plane, &line] {
                let lists = full_lists(pts.len());
                let base = compute_features(&cloud_from(pts.clone()), &lists).unwrap();
                let rotated = compute_features(
                    &cloud_from(pts.iter().map(rot).collect()),
                    &lists,
                )
                .unwrap();
                for (a, b) in base.values.iter().zip(&rotated.values) {
                    assert!((a[3] - b[3]).abs() < 1e-9, "verticality changed under z-rotation");
                }
            }
        }
    }
}
