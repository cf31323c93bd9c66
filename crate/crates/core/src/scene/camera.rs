use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::real::Real;

/// Pinhole intrinsics. Pixel `(x, y)` has its center at coordinate `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Camera<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: usize, height: usize) -> Result<Self> {
        if !(fx > T::zero() && fy > T::zero()) {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::Config("camera resolution must be non-empty".into()));
        }
        let w = T::from_usize_lossy(width);
        let h = T::from_usize_lossy(height);
        if !(cx >= T::zero() && cx < w && cy >= T::zero() && cy < h) {
            return Err(Error::Config(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// `K^-1 (u, v, 1)`: camera-frame direction with unit z component.
    #[inline]
    pub fn unproject(&self, u: T, v: T) -> Vector3<T> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, T::one())
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    #[inline]
    pub fn project(&self, p: &Vector3<T>) -> Option<(T, T)> {
        if p.z <= T::zero() {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub fn matrix(&self) -> Matrix3<T> {
        let (o, z) = (T::one(), T::zero());
        Matrix3::new(self.fx, z, self.cx, z, self.fy, self.cy, z, z, o)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Rigid camera-to-world transform. Camera axes: +x right, +y down, +z forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self> {
        let tol = T::ortho_tolerance();
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.iter().any(|v| !(v.abs() <= tol)) {
            return Err(Error::Config("pose rotation is not orthonormal".into()));
        }
        if !((det3(&rotation) - T::one()).abs() <= tol) {
            return Err(Error::Config("pose rotation has determinant != +1".into()));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("pose translation not finite".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<T>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Camera at `eye` with its optical axis through `target`.
    ///
    /// World +y is the up hint (camera +y points away from it); when the view
    /// direction is parallel to +y, world +x is used instead.
    pub fn look_at(eye: Vector3<T>, target: Vector3<T>) -> Result<Self> {
        let f = target - eye;
        let len = f.dot(&f).sqrt();
        if !(len > T::zero()) {
            return Err(Error::Config("look-at eye coincides with target".into()));
        }
        let f = f / len;
        let mut up = Vector3::new(T::zero(), T::one(), T::zero());
        let mut right = f.cross(&up);
        if right.dot(&right).sqrt() < T::lit(1e-6) {
            up = Vector3::new(T::one(), T::zero(), T::zero());
            right = f.cross(&up);
        }
        let right = right / right.dot(&right).sqrt();
        let down = f.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, f]);
        Ok(Self {
            rotation,
            translation: eye,
        })
    }

    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    pub fn center(&self) -> Vector3<T> {
        self.translation
    }

    /// World-frame optical axis.
    pub fn forward(&self) -> Vector3<T> {
        self.rotation.column(2).into_owned()
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation.tr_mul(&(p - self.translation))
    }

    #[inline]
    pub fn direction_to_world(&self, d: &Vector3<T>) -> Vector3<T> {
        self.rotation * d
    }

    /// Applies an extra rotation of `angle` about the camera-frame `axis`.
    pub fn rotated_locally(&self, axis: &Vector3<T>, angle: T) -> Self {
        Self {
            rotation: self.rotation * axis_angle(axis, angle),
            translation: self.translation,
        }
    }
}

/// Rodrigues rotation matrix; `axis` need not be normalized.
pub(crate) fn axis_angle<T: Real>(axis: &Vector3<T>, angle: T) -> Matrix3<T> {
    let k = axis / axis.dot(axis).sqrt();
    let (s, c) = angle.sin_cos();
    let z = T::zero();
    let cross = Matrix3::new(z, -k.z, k.y, k.z, z, -k.x, -k.y, k.x, z);
    Matrix3::identity() * c + cross * s + (k * k.transpose()) * (T::one() - c)
}

pub(crate) fn det3<T: Real>(m: &Matrix3<T>) -> T {
    m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)]) - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
}

/// Adjugate inverse of a 3x3 matrix; `None` when `|det| <= 1e-12`.
pub(crate) fn invert3<T: Real>(m: &Matrix3<T>) -> Option<Matrix3<T>> {
    let det = det3(m);
    if !(det.abs() > T::lit(1e-12)) {
        return None;
    }
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)];
    let adj = Matrix3::new(
        c(1, 1, 2, 2),
        -c(0, 1, 2, 2),
        c(0, 1, 1, 2),
        -c(1, 0, 2, 2),
        c(0, 0, 2, 2),
        -c(0, 0, 1, 2),
        c(1, 0, 2, 1),
        -c(0, 0, 2, 1),
        c(0, 0, 1, 1),
    );
    Some(adj / det)
}
