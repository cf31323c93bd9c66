//! Procedural volumetric scenes.
//!
//! A [`SceneModel`] is a union of convex primitives with constant density,
//! each clipped to the scene bounds. Densities add where primitives overlap
//! and colors blend by density weight. Because every support is convex, the
//! exact entry distance of a ray into the geometry is available in closed
//! form ([`analytic_first_surface`]), which is what the tests measure the
//! ray marcher against.

pub(crate) mod camera;
pub mod config;
mod poses;

pub use camera::{Camera, Pose};
pub use poses::{sample_pose_pairs, PosePairSpec};

use nalgebra::{Unit, Vector3};

use crate::error::{Error, Result};
use crate::real::Real;

/// Linear RGB triple, each channel in `[0, 1]`.
pub type Rgb<T> = Vector3<T>;

/// A ray `origin + t * direction`. Directions are kept unit length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray<T: Real> {
    pub origin: Vector3<T>,
    pub direction: Vector3<T>,
}

impl<T: Real> Ray<T> {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Vector3<T>, direction: Vector3<T>) -> Self {
        let norm = direction.dot(&direction).sqrt();
        Self {
            origin,
            direction: direction / norm,
        }
    }

    #[inline]
    pub fn at(&self, t: T) -> Vector3<T> {
        self.origin + self.direction * t
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb<T: Real> {
    pub min: Vector3<T>,
    pub max: Vector3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn new(min: Vector3<T>, max: Vector3<T>) -> Result<Self> {
        if (0..3).any(|i| !(min[i] < max[i]) || !min[i].is_finite() || !max[i].is_finite()) {
            return Err(Error::Config(format!(
                "box min {:?} must be strictly below max {:?}",
                min.as_slice(),
                max.as_slice()
            )));
        }
        Ok(Self { min, max })
    }

    #[inline]
    pub fn contains(&self, x: &Vector3<T>) -> bool {
        (0..3).all(|i| self.min[i] <= x[i] && x[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb<T>) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    pub fn center(&self) -> Vector3<T> {
        (self.min + self.max) * T::lit(0.5)
    }

    pub fn diameter(&self) -> T {
        let d = self.max - self.min;
        d.dot(&d).sqrt()
    }

    /// Parameter interval where the ray lies inside the box (slab method).
    fn ray_interval(&self, ray: &Ray<T>) -> Option<(T, T)> {
        let mut lo = T::neg_infinity();
        let mut hi = T::infinity();
        for i in 0..3 {
            let o = ray.origin[i];
            let d = ray.direction[i];
            if d == T::zero() {
                if o < self.min[i] || o > self.max[i] {
                    return None;
                }
                continue;
            }
            let a = (self.min[i] - o) / d;
            let b = (self.max[i] - o) / d;
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            lo = lo.max(a);
            hi = hi.min(b);
            if lo > hi {
                return None;
            }
        }
        Some((lo, hi))
    }

    /// Distance from `p` to the nearest and farthest points of the box.
    pub fn distance_range(&self, p: &Vector3<T>) -> (T, T) {
        let mut near = T::zero();
        let mut far = T::zero();
        for i in 0..3 {
            let below = self.min[i] - p[i];
            let above = p[i] - self.max[i];
            let gap = below.max(above).max(T::zero());
            near += gap * gap;
            let span = (p[i] - self.min[i]).abs().max((p[i] - self.max[i]).abs());
            far += span * span;
        }
        (near.sqrt(), far.sqrt())
    }
}

/// Support geometry of a primitive.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape<T: Real> {
    Sphere {
        center: Vector3<T>,
        radius: T,
    },
    Box(Aabb<T>),
    /// Points with `offset <= normal . x <= offset + thickness`.
    Slab {
        normal: Unit<Vector3<T>>,
        offset: T,
        thickness: T,
    },
}

impl<T: Real> Shape<T> {
    #[inline]
    fn contains(&self, x: &Vector3<T>) -> bool {
        match self {
            Shape::Sphere { center, radius } => {
                let d = x - center;
                d.dot(&d) <= *radius * *radius
            }
            Shape::Box(b) => b.contains(x),
            Shape::Slab { normal, offset, thickness } => {
                let s = normal.dot(x);
                *offset <= s && s <= *offset + *thickness
            }
        }
    }

    fn ray_interval(&self, ray: &Ray<T>) -> Option<(T, T)> {
        match self {
            Shape::Sphere { center, radius } => {
                let oc = ray.origin - center;
                let b = oc.dot(&ray.direction);
                let c = oc.dot(&oc) - *radius * *radius;
                let disc = b * b - c;
                if disc < T::zero() {
                    return None;
                }
                let s = disc.sqrt();
                Some((-b - s, -b + s))
            }
            Shape::Box(b) => b.ray_interval(ray),
            Shape::Slab { normal, offset, thickness } => {
                let s0 = normal.dot(&ray.origin);
                let ds = normal.dot(&ray.direction);
                let upper = *offset + *thickness;
                if ds == T::zero() {
                    return (*offset <= s0 && s0 <= upper).then_some((T::neg_infinity(), T::infinity()));
                }
                let a = (*offset - s0) / ds;
                let b = (upper - s0) / ds;
                Some(if a <= b { (a, b) } else { (b, a) })
            }
        }
    }
}

/// Spatially varying albedo of a primitive.
#[derive(Debug, Clone, PartialEq)]
pub enum ColorFn<T: Real> {
    Constant(Rgb<T>),
    /// 3D checkerboard with cells of edge `scale`.
    Checkerboard {
        scale: T,
        a: Rgb<T>,
        b: Rgb<T>,
    },
    /// `a` at `origin`, `b` one unit of `axis` further, clamped outside.
    Gradient {
        origin: Vector3<T>,
        axis: Vector3<T>,
        a: Rgb<T>,
        b: Rgb<T>,
    },
}

impl<T: Real> ColorFn<T> {
    pub fn eval(&self, x: &Vector3<T>) -> Rgb<T> {
        match self {
            ColorFn::Constant(c) => *c,
            ColorFn::Checkerboard { scale, a, b } => {
                let parity: i64 = (0..3).map(|i| (x[i] / *scale).floor().to_i64().unwrap_or(0)).sum();
                if parity.rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            ColorFn::Gradient { origin, axis, a, b } => {
                let s = (x - origin).dot(axis).max(T::zero()).min(T::one());
                a + (b - a) * s
            }
        }
    }

    fn colors(&self) -> Vec<&Rgb<T>> {
        match self {
            ColorFn::Constant(c) => vec![c],
            ColorFn::Checkerboard { a, b, .. } | ColorFn::Gradient { a, b, .. } => vec![a, b],
        }
    }
}

/// One constant-density primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumePrimitive<T: Real> {
    pub shape: Shape<T>,
    pub density: T,
    pub color: ColorFn<T>,
}

impl<T: Real> VolumePrimitive<T> {
    pub fn new(shape: Shape<T>, density: T, color: ColorFn<T>) -> Result<Self> {
        if !density.is_finite() || density < T::zero() {
            return Err(Error::Config(format!("density {density} must be finite and >= 0")));
        }
        match &shape {
            Shape::Sphere { radius, .. } if !(*radius > T::zero()) => return Err(Error::Config("sphere radius must be positive".into())),
            Shape::Slab { thickness, .. } if !(*thickness > T::zero()) => {
                return Err(Error::Config("slab thickness must be positive".into()))
            }
            _ => {}
        }
        if let ColorFn::Checkerboard { scale, .. } = &color {
            if !(*scale > T::zero()) {
                return Err(Error::Config("checkerboard scale must be positive".into()));
            }
        }
        for c in color.colors() {
            if c.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
                return Err(Error::Config(format!("color {:?} outside [0,1]", c.as_slice())));
            }
        }
        Ok(Self { shape, density, color })
    }
}

/// Volumetric density and color field standing in for a trained radiance field.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel<T: Real> {
    primitives: Vec<VolumePrimitive<T>>,
    bounds: Aabb<T>,
    background: Rgb<T>,
}

impl<T: Real> SceneModel<T> {
    /// Validates that spheres and boxes fit in `bounds`. Slabs are unbounded
    /// and get clipped to `bounds` instead.
    pub fn new(primitives: Vec<VolumePrimitive<T>>, bounds: Aabb<T>, background: Rgb<T>) -> Result<Self> {
        for (i, p) in primitives.iter().enumerate() {
            let inside = match &p.shape {
                Shape::Sphere { center, radius } => {
                    let r = Vector3::repeat(*radius);
                    bounds.contains_box(&Aabb {
                        min: center - r,
                        max: center + r,
                    })
                }
                Shape::Box(b) => bounds.contains_box(b),
                Shape::Slab { .. } => true,
            };
            if !inside {
                return Err(Error::Config(format!("primitive {i} extends outside scene bounds")));
            }
        }
        if background.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(Error::Config("background color outside [0,1]".into()));
        }
        Ok(Self {
            primitives,
            bounds,
            background,
        })
    }

    pub fn primitives(&self) -> &[VolumePrimitive<T>] {
        &self.primitives
    }

    pub fn bounds(&self) -> &Aabb<T> {
        &self.bounds
    }

    pub fn background(&self) -> Rgb<T> {
        self.background
    }

    /// True when `x` lies in the support of any primitive.
    pub fn inside_geometry(&self, x: &Vector3<T>) -> bool {
        self.bounds.contains(x) && self.primitives.iter().any(|p| p.shape.contains(x))
    }
}

/// Density and color at `x`.
///
/// Densities of all primitives containing `x` add up; the color is their
/// density-weighted average, or the background where the total is zero.
pub fn field_at<T: Real>(scene: &SceneModel<T>, x: &Vector3<T>) -> (T, Rgb<T>) {
    if !scene.bounds.contains(x) {
        return (T::zero(), scene.background);
    }
    let mut sigma = T::zero();
    let mut weighted = Rgb::zeros();
    for p in &scene.primitives {
        if p.density > T::zero() && p.shape.contains(x) {
            sigma += p.density;
            weighted += p.color.eval(x) * p.density;
        }
    }
    if sigma > T::zero() {
        (sigma, weighted / sigma)
    } else {
        (T::zero(), scene.background)
    }
}

/// Exact distance at which `ray` first enters any primitive support.
///
/// Returns `Some(0)` when the origin already lies inside geometry and `None`
/// on a miss.
pub fn analytic_first_surface<T: Real>(scene: &SceneModel<T>, ray: &Ray<T>) -> Option<T> {
    let (b0, b1) = scene.bounds.ray_interval(ray)?;
    scene
        .primitives
        .iter()
        .filter(|p| p.density > T::zero())
        .filter_map(|p| {
            let (s0, s1) = p.shape.ray_interval(ray)?;
            let lo = s0.max(b0);
            let hi = s1.min(b1);
            (lo <= hi && hi >= T::zero()).then(|| lo.max(T::zero()))
        })
        .reduce(T::min)
}
