//! Vectors, matrices, spheres and ray casting for the planar-flight scenes.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// 3-component column vector.
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

    pub fn dot(self, rhs: Vec3) -> f64 {
        self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    pub fn cross(self, rhs: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * rhs.z - self.z * rhs.y,
            y: self.z * rhs.x - self.x * rhs.z,
            z: self.x * rhs.y - self.y * rhs.x,
        }
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector along `self`, or `None` when the norm is (near) zero.
    pub fn try_normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n < 1e-12 {
            None
        } else {
            Some(self / n)
        }
    }

    /// Rescale to the given norm; zero vectors stay zero.
    pub fn with_norm(self, target: f64) -> Vec3 {
        match self.try_normalized() {
            Some(u) => u * target,
            None => Vec3::ZERO,
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, rhs: Vec3) {
        *self = *self + rhs;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// 3x3 matrix, row-major storage: entry (r, c) lives at `d[3 * r + c]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3 {
    pub d: [f64; 9],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 {
        d: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
    };

    pub const ZERO: Mat3 = Mat3 { d: [0.0; 9] };

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Self {
        Mat3 {
            d: [r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z],
        }
    }

    pub fn from_columns(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Mat3 {
            d: [c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z],
        }
    }

    pub fn from_diagonal(v: Vec3) -> Self {
        Mat3 {
            d: [v.x, 0.0, 0.0, 0.0, v.y, 0.0, 0.0, 0.0, v.z],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.d[3 * r + c]
    }

    pub fn column(&self, c: usize) -> Vec3 {
        Vec3::new(self.d[c], self.d[3 + c], self.d[6 + c])
    }

    pub fn transpose(&self) -> Mat3 {
        let d = &self.d;
        Mat3 {
            d: [d[0], d[3], d[6], d[1], d[4], d[7], d[2], d[5], d[8]],
        }
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let d = &self.d;
        Vec3::new(
            d[0] * v.x + d[1] * v.y + d[2] * v.z,
            d[3] * v.x + d[4] * v.y + d[5] * v.z,
            d[6] * v.x + d[7] * v.y + d[8] * v.z,
        )
    }

    pub fn mul_mat(&self, rhs: &Mat3) -> Mat3 {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += self.get(r, k) * rhs.get(k, c);
                }
                out[3 * r + c] = acc;
            }
        }
        Mat3 { d: out }
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut d = self.d;
        for v in &mut d {
            *v *= s;
        }
        Mat3 { d }
    }

    pub fn add_mat(&self, rhs: &Mat3) -> Mat3 {
        let mut d = self.d;
        for (v, r) in d.iter_mut().zip(rhs.d.iter()) {
            *v += r;
        }
        Mat3 { d }
    }

    pub fn sub_mat(&self, rhs: &Mat3) -> Mat3 {
        let mut d = self.d;
        for (v, r) in d.iter_mut().zip(rhs.d.iter()) {
            *v -= r;
        }
        Mat3 { d }
    }

    pub fn det(&self) -> f64 {
        let d = &self.d;
        d[0] * (d[4] * d[8] - d[5] * d[7]) - d[1] * (d[3] * d[8] - d[5] * d[6])
            + d[2] * (d[3] * d[7] - d[4] * d[6])
    }

    pub fn trace(&self) -> f64 {
        self.d[0] + self.d[4] + self.d[8]
    }

    /// Inverse via the adjugate; `None` when the determinant is near zero.
    pub fn try_inverse(&self) -> Option<Mat3> {
        let det = self.det();
        if det.abs() < 1e-300 {
            return None;
        }
        let d = &self.d;
        let cof = [
            d[4] * d[8] - d[5] * d[7],
            d[2] * d[7] - d[1] * d[8],
            d[1] * d[5] - d[2] * d[4],
            d[5] * d[6] - d[3] * d[8],
            d[0] * d[8] - d[2] * d[6],
            d[2] * d[3] - d[0] * d[5],
            d[3] * d[7] - d[4] * d[6],
            d[1] * d[6] - d[0] * d[7],
            d[0] * d[4] - d[1] * d[3],
        ];
        let mut out = [0.0; 9];
        for i in 0..9 {
            out[i] = cof[i] / det;
        }
        Some(Mat3 { d: out })
    }

    pub fn is_finite(&self) -> bool {
        self.d.iter().all(|v| v.is_finite())
    }
}

/// Skew-symmetric cross-product matrix: `hat(v) * w == v x w`.
pub fn hat(v: Vec3) -> Mat3 {
    Mat3 {
        d: [0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0],
    }
}

/// Axis-aligned box, used for scene bounds and the constrained region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) {
            return Err(Error::invalid("box corners must be finite"));
        }
        if min.x > max.x || min.y > max.y || min.z > max.z {
            return Err(Error::invalid("box min must not exceed max"));
        }
        Ok(Aabb { min, max })
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }
}

/// Static spherical obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Vec3, radius: f64) -> Result<Self> {
        if !center.is_finite() || !radius.is_finite() {
            return Err(Error::invalid("sphere must be finite"));
        }
        if radius <= 0.0 {
            return Err(Error::invalid("sphere radius must be positive"));
        }
        Ok(Sphere { center, radius })
    }
}

/// Static obstacle set with bounds. Every obstacle center (inflated by its
/// radius) must lie inside the bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub obstacles: Vec<Sphere>,
    pub bounds: Aabb,
}

impl Scene {
    pub fn new(obstacles: Vec<Sphere>, bounds: Aabb) -> Result<Self> {
        for (i, s) in obstacles.iter().enumerate() {
            let r = Vec3::new(s.radius, s.radius, s.radius);
            if !bounds.contains(s.center - r) || !bounds.contains(s.center + r) {
                return Err(Error::invalid(format!(
                    "obstacle {i} extends outside scene bounds"
                )));
            }
        }
        Ok(Scene { obstacles, bounds })
    }
}

/// Distance along a unit-direction ray to the first intersection with the
/// sphere, if any. The smaller non-negative quadratic root wins; a ray
/// starting inside returns the exit point.
pub(crate) fn ray_sphere(origin: Vec3, dir: Vec3, sphere: &Sphere) -> Option<f64> {
    let oc = origin - sphere.center;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - sphere.radius * sphere.radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = -b - sq;
    if t0 >= 0.0 {
        return Some(t0);
    }
    let t1 = -b + sq;
    if t1 >= 0.0 {
        return Some(t1);
    }
    None
}

/// First obstacle hit within `max_range` along a unit-length direction.
/// Returns the hit point, or `None` when the ray escapes.
pub fn ray_cast(origin: Vec3, direction: Vec3, scene: &Scene, max_range: f64) -> Result<Option<Vec3>> {
    if (direction.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("ray direction must be unit length"));
    }
    if !(max_range > 0.0) {
        return Err(Error::invalid("max_range must be positive"));
    }
    let mut best: Option<f64> = None;
    for sphere in &scene.obstacles {
        if let Some(t) = ray_sphere(origin, direction, sphere) {
            if t <= max_range && best.map_or(true, |b| t < b) {
                best = Some(t);
            }
        }
    }
    Ok(best.map(|t| origin + direction * t))
}
