//! Small fixed-size linear algebra: 3-vectors and a symmetric 3x3
//! eigensolver used for neighborhood covariance analysis.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist(self, o: Vec3) -> f64 {
        self.sub(o).norm()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n == 0.0 {
            self
        } else {
            self.scale(1.0 / n)
        }
    }

    pub fn abs(self) -> Vec3 {
        Vec3::new(self.x.abs(), self.y.abs(), self.z.abs())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Vec3 {
        Vec3::new(a[0], a[1], a[2])
    }
}

/// Symmetric 3x3 matrix stored as the upper triangle
/// (xx, xy, xz, yy, yz, zz).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym3 {
    pub m: [f64; 6],
}

impl Sym3 {
    pub fn zero() -> Self {
        Sym3 { m: [0.0; 6] }
    }

    /// Covariance of a point set (population normalization, 1/n).
    pub fn covariance(points: &[Vec3]) -> Self {
        let n = points.len() as f64;
        let mut mean = Vec3::ZERO;
        for p in points {
            mean = mean.add(*p);
        }
        mean = mean.scale(1.0 / n);
        let mut m = [0.0; 6];
        for p in points {
            let d = p.sub(mean);
            m[0] += d.x * d.x;
            m[1] += d.x * d.y;
            m[2] += d.x * d.z;
            m[3] += d.y * d.y;
            m[4] += d.y * d.z;
            m[5] += d.z * d.z;
        }
        for v in &mut m {
            *v /= n;
        }
        Sym3 { m }
    }

    pub fn to_dense(self) -> [[f64; 3]; 3] {
        let [xx, xy, xz, yy, yz, zz] = self.m;
        [[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]]
    }

    pub fn mul_vec(self, v: Vec3) -> Vec3 {
        let a = self.to_dense();
        Vec3::new(
            a[0][0] * v.x + a[0][1] * v.y + a[0][2] * v.z,
            a[1][0] * v.x + a[1][1] * v.y + a[1][2] * v.z,
            a[2][0] * v.x + a[2][1] * v.y + a[2][2] * v.z,
        )
    }
}

/// Eigen-decomposition of a symmetric 3x3 matrix.
/// Eigenvalues are sorted in decreasing order; eigenvectors are unit-norm
/// and mutually orthogonal, `vectors[k]` belonging to `values[k]`.
#[derive(Debug, Clone, Copy)]
pub struct Eigen3 {
    pub values: [f64; 3],
    pub vectors: [Vec3; 3],
}

/// Cyclic Jacobi iteration. Converges in a handful of sweeps for 3x3 and
/// delivers eigenvalues to near machine precision.
pub fn eigen_sym3(a: Sym3) -> Eigen3 {
    let mut m = a.to_dense();
    // accumulated rotation, starts as identity
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    let scale: f64 = m
        .iter()
        .flatten()
        .fold(0.0_f64, |acc, &x| acc.max(x.abs()));
    if scale > 0.0 {
        for _sweep in 0..64 {
            let off = m[0][1].abs() + m[0][2].abs() + m[1][2].abs();
            if off <= scale * 1e-300 || off == 0.0 {
                break;
            }
            for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
                let apq = m[p][q];
                if apq.abs() <= scale * f64::EPSILON * 1e-3 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..3 {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..3 {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..3 {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut pairs: Vec<(f64, Vec3)> = (0..3)
        .map(|k| (m[k][k], Vec3::new(v[0][k], v[1][k], v[2][k])))
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    Eigen3 {
        values: [pairs[0].0, pairs[1].0, pairs[2].0],
        vectors: [pairs[0].1, pairs[1].1, pairs[2].1],
    }
}
