//! TOML scene description.
//!
//! ```toml
//! background = [0.05, 0.05, 0.08]
//!
//! [bounds]
//! min = [-12.0, -3.0, -12.0]
//! max = [12.0, 6.0, 12.0]
//!
//! [camera]
//! fx = 80.0
//! fy = 80.0
//! cx = 47.5
//! cy = 31.5
//! width = 96
//! height = 64
//!
//! [pose_pairs]
//! count = 200
//! orbit_radius = [7.0, 9.0]
//! elevation = [0.25, 0.6]     # radians
//! baseline_max = 0.6
//! rotation_jitter_max = 0.03  # radians
//! seed = 7
//!
//! [[primitive]]
//! density = 120.0
//! shape = { type = "slab", normal = [0.0, 1.0, 0.0], offset = -2.0, thickness = 1.0 }
//! color = { type = "checkerboard", scale = 0.75, a = [0.9, 0.8, 0.6], b = [0.2, 0.25, 0.3] }
//!
//! [[primitive]]
//! density = 150.0
//! shape = { type = "sphere", center = [0.0, 0.5, 0.0], radius = 1.2 }
//! color = { type = "gradient", origin = [0.0, -0.7, 0.0], axis = [0.0, 0.4, 0.0], a = [0.8, 0.1, 0.1], b = [0.1, 0.2, 0.9] }
//! ```
//!
//! Shape types: `sphere { center, radius }`, `box { min, max }`,
//! `slab { normal, offset, thickness }` (slabs are clipped to `bounds`).
//! Color types: `constant { rgb }`, `checkerboard { scale, a, b }`,
//! `gradient { origin, axis, a, b }`. Unknown keys are rejected.

use std::path::Path;

use nalgebra::{Unit, Vector3};
use serde::{Deserialize, Serialize};

use super::{Aabb, Camera, ColorFn, PosePairSpec, SceneModel, Shape, VolumePrimitive};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub background: [f64; 3],
    pub bounds: BoundsConfig,
    pub camera: CameraConfig,
    pub pose_pairs: PosePairConfig,
    #[serde(default, rename = "primitive")]
    pub primitives: Vec<PrimitiveConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosePairConfig {
    pub count: usize,
    pub orbit_radius: [f64; 2],
    pub elevation: [f64; 2],
    pub baseline_max: f64,
    pub rotation_jitter_max: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveConfig {
    pub density: f64,
    pub shape: ShapeConfig,
    pub color: ColorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeConfig {
    Sphere { center: [f64; 3], radius: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
    Slab { normal: [f64; 3], offset: f64, thickness: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ColorConfig {
    Constant {
        rgb: [f64; 3],
    },
    Checkerboard {
        scale: f64,
        a: [f64; 3],
        b: [f64; 3],
    },
    Gradient {
        origin: [f64; 3],
        axis: [f64; 3],
        a: [f64; 3],
        b: [f64; 3],
    },
}

fn v<T: Real>(a: [f64; 3]) -> Vector3<T> {
    Vector3::new(T::lit(a[0]), T::lit(a[1]), T::lit(a[2]))
}

impl SceneConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene config serializes")
    }

    pub fn build_scene<T: Real>(&self) -> Result<SceneModel<T>> {
        let bounds = Aabb::new(v(self.bounds.min), v(self.bounds.max))?;
        let primitives = self.primitives.iter().map(PrimitiveConfig::build).collect::<Result<Vec<_>>>()?;
        SceneModel::new(primitives, bounds, v(self.background))
    }

    pub fn build_camera<T: Real>(&self) -> Result<Camera<T>> {
        let c = &self.camera;
        Camera::new(T::lit(c.fx), T::lit(c.fy), T::lit(c.cx), T::lit(c.cy), c.width, c.height)
    }

    pub fn build_pose_spec<T: Real>(&self) -> Result<PosePairSpec<T>> {
        self.pose_pairs.build()
    }
}

impl PosePairConfig {
    pub fn build<T: Real>(&self) -> Result<PosePairSpec<T>> {
        let spec = PosePairSpec {
            count: self.count,
            orbit_radius_range: (T::lit(self.orbit_radius[0]), T::lit(self.orbit_radius[1])),
            elevation_range: (T::lit(self.elevation[0]), T::lit(self.elevation[1])),
            baseline_max: T::lit(self.baseline_max),
            rotation_jitter_max: T::lit(self.rotation_jitter_max),
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl PrimitiveConfig {
    fn build<T: Real>(&self) -> Result<VolumePrimitive<T>> {
        let shape = match &self.shape {
            ShapeConfig::Sphere { center, radius } => Shape::Sphere {
                center: v(*center),
                radius: T::lit(*radius),
            },
            ShapeConfig::Box { min, max } => Shape::Box(Aabb::new(v(*min), v(*max))?),
            ShapeConfig::Slab { normal, offset, thickness } => {
                let n: Vector3<T> = v(*normal);
                if !(n.dot(&n) > T::zero()) {
                    return Err(Error::Config("slab normal must be non-zero".into()));
                }
                Shape::Slab {
                    normal: Unit::new_unchecked(n / n.dot(&n).sqrt()),
                    offset: T::lit(*offset),
                    thickness: T::lit(*thickness),
                }
            }
        };
        let color = match &self.color {
            ColorConfig::Constant { rgb } => ColorFn::Constant(v(*rgb)),
            ColorConfig::Checkerboard { scale, a, b } => ColorFn::Checkerboard {
                scale: T::lit(*scale),
                a: v(*a),
                b: v(*b),
            },
            ColorConfig::Gradient { origin, axis, a, b } => ColorFn::Gradient {
                origin: v(*origin),
                axis: v(*axis),
                a: v(*a),
                b: v(*b),
            },
        };
        VolumePrimitive::new(shape, T::lit(self.density), color)
    }
}
