//! Small 3D vector and quaternion types used by pose tracks and warping.
//!
//! Coordinate convention: x = front, y = right, z = up, with the listener's
//! head at the origin.

use std::ops::{Add, Mul, Sub};

/// 3D vector in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k, self.z * k)
    }

    /// Returns the zero vector unchanged rather than dividing by zero.
    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.scale(1.0 / n)
        } else {
            self
        }
    }

    pub fn lerp(self, other: Self, t: f64) -> Self {
        self + (other - self).scale(t)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
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
    fn mul(self, rhs: f64) -> Vec3 {
        self.scale(rhs)
    }
}

/// Unit quaternion (x, y, z, w) describing an orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { x: 0.0, y: 0.0, z: 0.0, w: 1.0 };

    pub fn new(x: f64, y: f64, z: f64, w: f64) -> Self {
        Self { x, y, z, w }
    }

    /// Rotation of `angle` radians about a (not necessarily unit) axis.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = axis.normalized();
        let (s, c) = (angle * 0.5).sin_cos();
        Self::new(a.x * s, a.y * s, a.z * s, c)
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z + self.w * other.w
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Returns `None` when the quaternion has (near-)zero norm.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n < 1e-12 {
            return None;
        }
        let k = 1.0 / n;
        Some(Self::new(self.x * k, self.y * k, self.z * k, self.w * k))
    }

    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z, -self.w)
    }

    fn add_scaled(self, other: Self, a: f64, b: f64) -> Self {
        Self::new(
            a * self.x + b * other.x,
            a * self.y + b * other.y,
            a * self.z + b * other.z,
            a * self.w + b * other.w,
        )
    }

    /// Rotate a vector by this quaternion: v' = q v q*.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        // t = 2 q_vec x v; v' = v + w t + q_vec x t
        let q = Vec3::new(self.x, self.y, self.z);
        let t = cross(q, v).scale(2.0);
        v + t.scale(self.w) + cross(q, t)
    }

    /// Spherical linear interpolation along the shorter arc.
    ///
    /// The sign of `other` is flipped when the quaternions lie in opposite
    /// hemispheres; nearly parallel inputs fall back to normalized lerp.
    pub fn slerp(self, other: Self, t: f64) -> Self {
        let mut b = other;
        let mut d = self.dot(b);
        if d < 0.0 {
            b = b.neg();
            d = -d;
        }
        if d > 1.0 - 1e-10 {
            // Angle too small for a stable sin ratio.
            let q = self.add_scaled(b, 1.0 - t, t);
            return q.normalized().unwrap_or(Quat::IDENTITY);
        }
        let theta = d.clamp(-1.0, 1.0).acos();
        let sin_theta = theta.sin();
        let a = ((1.0 - t) * theta).sin() / sin_theta;
        let c = (t * theta).sin() / sin_theta;
        self.add_scaled(b, a, c)
    }
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    Vec3::new(
        a.y * b.z - a.z * b.y,
        a.z * b.x - a.x * b.z,
        a.x * b.y - a.y * b.x,
    )
}
