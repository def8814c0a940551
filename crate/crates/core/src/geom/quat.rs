//! Quaternions in (w, x, y, z) order.
//!
//! [`RawQuat`] holds unconstrained coefficients, the form in which rotations
//! are summed and blended. [`UnitQuat`] is normalized and canonicalized to the
//! `w >= 0` hemisphere, so additive blending of equal rotations never cancels.

use core::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};

/// Smallest norm accepted by [`quat_normalize`].
pub const MIN_QUAT_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RawQuat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl RawQuat {
    pub const ZERO: RawQuat = RawQuat::new(0.0, 0.0, 0.0, 0.0);
    pub const IDENTITY: RawQuat = RawQuat::new(1.0, 0.0, 0.0, 0.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        RawQuat { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        RawQuat::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(self, o: RawQuat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        libm::sqrt(self.dot(self))
    }

    pub fn conj(self) -> RawQuat {
        RawQuat::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self ⊗ o`.
    pub fn hamilton(self, o: RawQuat) -> RawQuat {
        let (a, b) = (self, o);
        RawQuat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl Add for RawQuat {
    type Output = RawQuat;
    fn add(self, o: RawQuat) -> RawQuat {
        RawQuat::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for RawQuat {
    type Output = RawQuat;
    fn sub(self, o: RawQuat) -> RawQuat {
        RawQuat::new(self.w - o.w, self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for RawQuat {
    type Output = RawQuat;
    fn neg(self) -> RawQuat {
        RawQuat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for RawQuat {
    type Output = RawQuat;
    fn mul(self, s: f64) -> RawQuat {
        RawQuat::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }
}

impl AddAssign for RawQuat {
    fn add_assign(&mut self, o: RawQuat) {
        *self = *self + o;
    }
}

/// A rotation: unit norm, `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat(RawQuat);

impl Default for UnitQuat {
    fn default() -> Self {
        UnitQuat::IDENTITY
    }
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat(RawQuat::IDENTITY);

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> UnitQuat {
        let a = axis.normalized();
        let (s, c) = (libm::sin(0.5 * angle), libm::cos(0.5 * angle));
        quat_normalize(RawQuat::new(c, a.x * s, a.y * s, a.z * s))
            .expect("axis-angle quaternion has unit norm")
    }

    /// Takes `r` unchanged if it is unit length to within `1e-6` with
    /// `w >= 0`, as when reading back rounded values.
    pub fn from_stored(r: RawQuat) -> Result<UnitQuat> {
        let n = r.norm();
        if !(libm::fabs(n - 1.0) <= 1e-6 && r.w >= 0.0) {
            return Err(Error::InvalidArgument(alloc::format!("stored rotation has norm {n} and w {}", r.w)));
        }
        Ok(UnitQuat(r))
    }

    pub fn raw(self) -> RawQuat {
        self.0
    }

    pub fn to_array(self) -> [f64; 4] {
        self.0.to_array()
    }

    pub fn inverse(self) -> UnitQuat {
        UnitQuat(self.0.conj()).canonical()
    }

    fn canonical(self) -> UnitQuat {
        if self.0.w < 0.0 {
            UnitQuat(-self.0)
        } else {
            self
        }
    }

    pub fn to_mat(self) -> Mat3 {
        rotation_matrix(self.0)
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        self.to_mat().mul_vec(v)
    }

    /// Rotation angle between two rotations.
    pub fn angle_dist(self, o: UnitQuat) -> f64 {
        let r = self.0.conj().hamilton(o.0);
        let v = libm::sqrt(r.x * r.x + r.y * r.y + r.z * r.z);
        2.0 * libm::atan2(v, libm::fabs(r.w))
    }
}

/// Normalizes a raw quaternion into the `w >= 0` hemisphere.
pub fn quat_normalize(r: RawQuat) -> Result<UnitQuat> {
    let n = r.norm();
    if !(n >= MIN_QUAT_NORM) || !n.is_finite() {
        return Err(Error::ZeroNormQuat(n));
    }
    if r.x == 0.0 && r.y == 0.0 && r.z == 0.0 {
        return Ok(UnitQuat::IDENTITY);
    }
    Ok(UnitQuat(r * (1.0 / n)).canonical())
}

/// Hamilton product of two rotations, renormalized. An identity factor
/// returns the other one unchanged.
pub fn quat_compose(a: UnitQuat, b: UnitQuat) -> UnitQuat {
    if a == UnitQuat::IDENTITY {
        return b;
    }
    if b == UnitQuat::IDENTITY {
        return a;
    }
    quat_normalize(a.0.hamilton(b.0)).expect("product of unit quaternions has unit norm")
}

/// Coefficient-wise weighted sum `Σ wᵢ qᵢ`.
pub fn quat_blend(weights: &[f64], quats: &[RawQuat]) -> Result<RawQuat> {
    if weights.len() != quats.len() {
        return Err(Error::ShapeMismatch {
            expected: quats.len(),
            found: weights.len(),
        });
    }
    let mut s = RawQuat::ZERO;
    for (&w, &q) in weights.iter().zip(quats) {
        if !w.is_finite() {
            return Err(Error::NonFinite("blend weight"));
        }
        s += q * w;
    }
    Ok(s)
}

/// Rotation matrix of a unit quaternion (the quadratic form; `q` is not renormalized).
pub fn rotation_matrix(q: RawQuat) -> Mat3 {
    let RawQuat { w, x, y, z } = q;
    Mat3([
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ])
}

/// Pulls a gradient on `rotation_matrix(q)` back onto the coefficients of `q`.
pub fn rotation_matrix_vjp(q: RawQuat, g: &Mat3) -> RawQuat {
    let RawQuat { w, x, y, z } = q;
    let dw = Mat3([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]]);
    let dx = Mat3([[0.0, y, z], [y, -2.0 * x, -w], [z, w, -2.0 * x]]);
    let dy = Mat3([[-2.0 * y, x, w], [x, 0.0, z], [-w, z, -2.0 * y]]);
    let dz = Mat3([[-2.0 * z, -w, x], [w, -2.0 * z, y], [x, y, 0.0]]);
    RawQuat::new(
        2.0 * g.frob_dot(&dw),
        2.0 * g.frob_dot(&dx),
        2.0 * g.frob_dot(&dy),
        2.0 * g.frob_dot(&dz),
    )
}

/// Pulls a gradient on `quat_normalize(s)` back onto `s`, including the
/// hemisphere sign flip.
pub fn normalize_vjp(s: RawQuat, g: RawQuat) -> RawQuat {
    let n = s.norm();
    let u = s * (1.0 / n);
    let sign = if s.w < 0.0 { -1.0 } else { 1.0 };
    (g - u * g.dot(u)) * (sign / n)
}

/// Gradients of `a ⊗ b` with respect to `a` and `b`.
pub fn hamilton_vjp(a: RawQuat, b: RawQuat, g: RawQuat) -> (RawQuat, RawQuat) {
    (g.hamilton(b.conj()), a.conj().hamilton(g))
}
