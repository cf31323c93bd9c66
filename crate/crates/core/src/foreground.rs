//! Moving foreground slices.
//!
//! A floater is an opaque planar patch outlined by a closed chain of cubic
//! Bézier segments. Between the two frames it moves by a homography, so its
//! flow is known exactly. Compositing paints floaters over both frames,
//! overrides the flow under them and marks background pixels whose target
//! becomes hidden in frame 2 as occluded.
//!
//! Rasterization is even-odd at pixel centers. A pixel center exactly on the
//! outline belongs to the shape when the outline crossing lies at or left of
//! it on its row, and a row exactly through a vertex counts an edge only when
//! the edge starts at or below the row and ends above it (half-open in y).

use nalgebra::{Matrix3, Vector2, Vector3};
use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowgen::OcclusionMask;
use crate::masks::FilteredLabel;
use crate::real::Real;
use crate::scene::camera::invert3;
use crate::scene::Rgb;

/// Largest distance between a Bézier segment and its polyline, pixels.
pub const FLATTEN_TOLERANCE: f64 = 0.25;
const MAX_SEGMENTS: usize = 6;
const MIN_SEGMENTS: usize = 3;
const MAX_ROTATION_DEG: f64 = 15.0;
const SCALE_RANGE: (f64, f64) = (0.9, 1.1);
const PROJECTIVE_JITTER: f64 = 0.02;

/// Floater color as a function of normalized frame-1 position.
#[derive(Debug, Clone, PartialEq)]
pub enum Texture<T: Real> {
    Constant(Rgb<T>),
    /// `a + (b - a) * clamp((p - origin) . axis, 0, 1)`.
    Gradient {
        origin: Vector2<T>,
        axis: Vector2<T>,
        a: Rgb<T>,
        b: Rgb<T>,
    },
}

impl<T: Real> Texture<T> {
    pub fn eval(&self, p: &Vector2<T>) -> Rgb<T> {
        match self {
            Texture::Constant(c) => *c,
            Texture::Gradient { origin, axis, a, b } => {
                let s = (p - origin).dot(axis).max(T::zero()).min(T::one());
                a + (b - a) * s
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Floater<T: Real> {
    /// `3k` points in normalized image coordinates (x / W, y / H). Segment `s`
    /// runs through points `3s .. 3s + 3` and ends at the first point of the
    /// next segment, wrapping around.
    control: Vec<Vector2<T>>,
    pub texture: Texture<T>,
    /// Maps frame-1 pixel coordinates to frame-2 pixel coordinates.
    homography: Matrix3<T>,
    /// Smaller is nearer.
    pub depth_order: usize,
}

/// Applies `h` to a pixel position; `None` when the point maps to infinity
/// or behind the projective plane.
pub fn apply_homography<T: Real>(h: &Matrix3<T>, p: &Vector2<T>) -> Option<Vector2<T>> {
    let q = h * Vector3::new(p.x, p.y, T::one());
    (q.z > T::zero()).then(|| Vector2::new(q.x / q.z, q.y / q.z))
}

impl<T: Real> Floater<T> {
    pub fn new(control: Vec<Vector2<T>>, texture: Texture<T>, homography: Matrix3<T>, depth_order: usize) -> Result<Self> {
        let k = control.len() / 3;
        if !control.len().is_multiple_of(3) || !(MIN_SEGMENTS..=MAX_SEGMENTS).contains(&k) {
            return Err(Error::Config(format!(
                "floater outline needs 3k control points with k in [3, 6], got {}",
                control.len()
            )));
        }
        if control.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::Config("floater control points must be finite".into()));
        }
        if !(crate::scene::camera::det3(&homography).abs() > T::lit(1e-9)) {
            return Err(Error::Config("floater homography is singular".into()));
        }
        Ok(Self {
            control,
            texture,
            homography,
            depth_order,
        })
    }

    pub fn control(&self) -> &[Vector2<T>] {
        &self.control
    }

    pub fn homography(&self) -> &Matrix3<T> {
        &self.homography
    }

    /// Cubic segments in normalized coordinates.
    pub fn segments(&self) -> Vec<[Vector2<T>; 4]> {
        let n = self.control.len();
        (0..n / 3)
            .map(|s| {
                let i = 3 * s;
                [self.control[i], self.control[i + 1], self.control[i + 2], self.control[(i + 3) % n]]
            })
            .collect()
    }

    /// Outline flattened to a closed polygon in pixel coordinates of an
    /// `(h, w)` image.
    pub fn flatten(&self, (h, w): (usize, usize)) -> Vec<Vector2<T>> {
        let scale = Vector2::new(T::from_usize_lossy(w), T::from_usize_lossy(h));
        let mut poly = Vec::new();
        for seg in self.segments() {
            let [p0, p1, p2, p3] = seg.map(|p| p.component_mul(&scale));
            let d1 = p0 - p1 * T::lit(2.0) + p2;
            let d2 = p1 - p2 * T::lit(2.0) + p3;
            let bend = d1.dot(&d1).sqrt().max(d2.dot(&d2).sqrt());
            // Chord error of a cubic is at most max|B''| / (8 n^2) and
            // max|B''| <= 6 * bend.
            let n = (T::lit(6.0) * bend / T::lit(8.0 * FLATTEN_TOLERANCE)).sqrt().ceil();
            let n = n.to_usize().unwrap_or(1).max(1);
            for i in 0..n {
                let t = T::from_usize_lossy(i) / T::from_usize_lossy(n);
                let s = T::one() - t;
                poly.push(p0 * (s * s * s) + p1 * (T::lit(3.0) * s * s * t) + p2 * (T::lit(3.0) * s * t * t) + p3 * (t * t * t));
            }
        }
        poly
    }

    /// Frame-2 outline: the flattened frame-1 outline mapped by the homography.
    pub fn flatten_target(&self, size: (usize, usize)) -> Vec<Vector2<T>> {
        self.flatten(size)
            .iter()
            .filter_map(|p| apply_homography(&self.homography, p))
            .collect()
    }

    /// Displacement of frame-1 pixel `p`.
    pub fn displacement(&self, p: &Vector2<T>) -> Option<Vector2<T>> {
        apply_homography(&self.homography, p).map(|q| q - p)
    }

    pub fn to_record(&self) -> FloaterRecord {
        let v2 = |p: &Vector2<T>| [p.x.as_f64(), p.y.as_f64()];
        let v3 = |p: &Rgb<T>| [p.x.as_f64(), p.y.as_f64(), p.z.as_f64()];
        FloaterRecord {
            control: self.control.iter().map(v2).collect(),
            texture: match &self.texture {
                Texture::Constant(c) => TextureRecord::Constant { rgb: v3(c) },
                Texture::Gradient { origin, axis, a, b } => TextureRecord::Gradient {
                    origin: v2(origin),
                    axis: v2(axis),
                    a: v3(a),
                    b: v3(b),
                },
            },
            homography: std::array::from_fn(|r| std::array::from_fn(|c| self.homography[(r, c)].as_f64())),
            depth_order: self.depth_order,
        }
    }

    pub fn from_record(r: &FloaterRecord) -> Result<Self> {
        let v2 = |p: &[f64; 2]| Vector2::new(T::lit(p[0]), T::lit(p[1]));
        let v3 = |p: &[f64; 3]| Vector3::new(T::lit(p[0]), T::lit(p[1]), T::lit(p[2]));
        let texture = match &r.texture {
            TextureRecord::Constant { rgb } => Texture::Constant(v3(rgb)),
            TextureRecord::Gradient { origin, axis, a, b } => Texture::Gradient {
                origin: v2(origin),
                axis: v2(axis),
                a: v3(a),
                b: v3(b),
            },
        };
        let h = Matrix3::from_fn(|row, col| T::lit(r.homography[row][col]));
        Self::new(r.control.iter().map(v2).collect(), texture, h, r.depth_order)
    }
}

/// Plain-number form of a floater for sample metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloaterRecord {
    pub control: Vec<[f64; 2]>,
    pub texture: TextureRecord,
    pub homography: [[f64; 3]; 3],
    pub depth_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TextureRecord {
    Constant {
        rgb: [f64; 3],
    },
    Gradient {
        origin: [f64; 2],
        axis: [f64; 2],
        a: [f64; 3],
        b: [f64; 3],
    },
}

fn translation<T: Real>(t: Vector2<T>) -> Matrix3<T> {
    let (o, z) = (T::one(), T::zero());
    Matrix3::new(o, z, t.x, z, o, t.y, z, z, o)
}

fn sample_one<T: Real>(rng: &mut ChaCha8Rng, index: usize, (h, w): (usize, usize)) -> Floater<T> {
    let (wf, hf) = (w as f64, h as f64);
    let min_dim = wf.min(hf);
    let radius = 0.25 * min_dim;
    loop {
        let k = rng.random_range(MIN_SEGMENTS..=MAX_SEGMENTS);
        let center = Vector2::new(rng.random_range(0.0..wf), rng.random_range(0.0..hf));
        let n = 3 * k;
        let control: Vec<Vector2<f64>> = (0..n)
            .map(|j| {
                let theta = std::f64::consts::TAU * (j as f64 + rng.random_range(-0.3..0.3)) / n as f64;
                let rho = radius * rng.random_range(0.35..1.0);
                center + Vector2::new(theta.cos(), theta.sin()) * rho
            })
            .collect();

        let color = |rng: &mut ChaCha8Rng| {
            Rgb::new(
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
            )
        };
        let (a, b) = (color(rng), color(rng));
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = Vector2::new(phi.cos(), phi.sin());
        let c_norm = Vector2::new(center.x / wf, center.y / hf);

        let angle = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG).to_radians();
        let scale = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        let t_len = 0.1 * min_dim * rng.random::<f64>().sqrt();
        let t_dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let shift = Vector2::new(t_dir.cos(), t_dir.sin()) * t_len;
        let (s, c) = angle.sin_cos();
        let similarity = translation(center + shift)
            * Matrix3::new(scale * c, -scale * s, 0.0, scale * s, scale * c, 0.0, 0.0, 0.0, 1.0)
            * translation(-center);
        let g = PROJECTIVE_JITTER / min_dim;
        let jitter = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, rng.random_range(-g..g), rng.random_range(-g..g), 1.0);
        let homography = similarity * translation(center) * jitter * translation(-center);

        let to_t = |p: Vector2<f64>| Vector2::new(T::lit(p.x), T::lit(p.y));
        let rgb = |p: Rgb<f64>| Rgb::new(T::lit(p.x), T::lit(p.y), T::lit(p.z));
        let floater = Floater::new(
            control.iter().map(|p| to_t(Vector2::new(p.x / wf, p.y / hf))).collect(),
            Texture::Gradient {
                origin: to_t(c_norm - dir * 0.25),
                axis: to_t(dir * 2.0),
                a: rgb(a),
                b: rgb(b),
            },
            homography.map(T::lit),
            index,
        );
        let Ok(floater) = floater else { continue };
        if overlaps_image(&floater, (h, w)) {
            return floater;
        }
    }
}

fn overlaps_image<T: Real>(f: &Floater<T>, (h, w): (usize, usize)) -> bool {
    let pts = f.flatten_target((h, w));
    if pts.len() != f.flatten((h, w)).len() {
        return false;
    }
    let (mut lo, mut hi) = (Vector2::repeat(T::infinity()), Vector2::repeat(T::neg_infinity()));
    for p in &pts {
        lo = Vector2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vector2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    hi.x >= T::zero() && hi.y >= T::zero() && lo.x <= T::from_usize_lossy(w - 1) && lo.y <= T::from_usize_lossy(h - 1)
}

/// Draws `n` floaters for an `(h, w)` image. Floater `i` gets `depth_order = i`.
pub fn sample_floaters<T: Real>(n: usize, seed: u64, size: (usize, usize)) -> Vec<Floater<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| sample_one(&mut rng, i, size)).collect()
}

/// Even-odd fill of a closed polygon at pixel centers.
pub fn rasterize_polygon<T: Real>(poly: &[Vector2<T>], (h, w): (usize, usize)) -> Array2<bool> {
    let mut mask = Array2::from_elem((h, w), false);
    if poly.len() < 3 {
        return mask;
    }
    mask.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(y, mut row)| {
        let yc = T::from_usize_lossy(y);
        let mut xs: Vec<T> = Vec::new();
        for (i, a) in poly.iter().enumerate() {
            let b = &poly[(i + 1) % poly.len()];
            if (a.y > yc) != (b.y > yc) {
                xs.push(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        xs.sort_by(|p, q| p.partial_cmp(q).expect("finite crossings"));
        for pair in xs.chunks_exact(2) {
            let start = pair[0].ceil().max(T::zero());
            let end = pair[1].ceil().min(T::from_usize_lossy(w));
            let (Some(s), Some(e)) = (start.to_usize(), end.to_usize()) else {
                continue;
            };
            for x in s..e.max(s) {
                row[x] = true;
            }
        }
    });
    mask
}

pub fn rasterize_floater<T: Real>(f: &Floater<T>, size: (usize, usize)) -> Array2<bool> {
    rasterize_polygon(&f.flatten(size), size)
}

/// Frame-2 footprint of a floater.
pub fn rasterize_floater_target<T: Real>(f: &Floater<T>, size: (usize, usize)) -> Array2<bool> {
    rasterize_polygon(&f.flatten_target(size), size)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeResult<T: Real> {
    pub image_1: Array3<T>,
    pub image_2: Array3<T>,
    pub label: FilteredLabel<T>,
    pub occlusion: OcclusionMask<T>,
    pub fg_mask_1: Array2<bool>,
    pub fg_mask_2: Array2<bool>,
    /// Background pixels whose flow target is covered by a floater in frame 2.
    pub occlusion_update: Array2<bool>,
}

fn paint<T: Real>(image: &mut Array3<T>, mask: &Array2<bool>, color_at: impl Fn(usize, usize) -> Option<Rgb<T>>) {
    for ((y, x), &m) in mask.indexed_iter() {
        if !m {
            continue;
        }
        if let Some(c) = color_at(y, x) {
            for k in 0..3 {
                image[[y, x, k]] = c[k];
            }
        }
    }
}

/// Occlusion after compositing: AO occlusion or hidden by a frame-2 floater,
/// never inside a frame-1 floater.
pub fn composite_occlusion<T: Real>(
    ao_values: &Array2<T>,
    th_occ: T,
    fg_mask_1: &Array2<bool>,
    occlusion_update: &Array2<bool>,
) -> OcclusionMask<T> {
    let mut occ = OcclusionMask::from_ao(ao_values.clone(), th_occ);
    ndarray::Zip::from(&mut occ.occluded)
        .and(fg_mask_1)
        .and(occlusion_update)
        .for_each(|o, &fg, &upd| *o = (*o || upd) && !fg);
    occ
}

/// Paints `floaters` over both frames, farthest first, and updates flow,
/// supervision and occlusion. Images are `(H, W, 3)`.
pub fn composite<T: Real>(
    image_1: &Array3<T>,
    image_2: &Array3<T>,
    label: &FilteredLabel<T>,
    occ: &OcclusionMask<T>,
    floaters: &[Floater<T>],
) -> Result<CompositeResult<T>> {
    let (h, w, _) = image_1.dim();
    for d in [(image_2.dim().0, image_2.dim().1), label.flow.dims(), occ.occluded.dim()] {
        if d != (h, w) {
            return Err(Error::Dimension {
                expected: (h, w),
                found: d,
            });
        }
    }
    let size = (h, w);
    let mut order: Vec<&Floater<T>> = floaters.iter().collect();
    order.sort_by_key(|f| std::cmp::Reverse(f.depth_order));

    let mut out = CompositeResult {
        image_1: image_1.clone(),
        image_2: image_2.clone(),
        label: label.clone(),
        occlusion: occ.clone(),
        fg_mask_1: Array2::from_elem(size, false),
        fg_mask_2: Array2::from_elem(size, false),
        occlusion_update: Array2::from_elem(size, false),
    };
    let norm = |x: usize, y: usize| {
        Vector2::new(
            T::from_usize_lossy(x) / T::from_usize_lossy(w),
            T::from_usize_lossy(y) / T::from_usize_lossy(h),
        )
    };
    let pixel = |x: usize, y: usize| Vector2::new(T::from_usize_lossy(x), T::from_usize_lossy(y));

    for f in &order {
        let m1 = rasterize_floater(f, size);
        let m2 = rasterize_floater_target(f, size);
        paint(&mut out.image_1, &m1, |y, x| Some(f.texture.eval(&norm(x, y))));
        let inverse = invert3(f.homography());
        paint(&mut out.image_2, &m2, |y, x| {
            let src = apply_homography(inverse.as_ref()?, &pixel(x, y))?;
            let n = Vector2::new(src.x / T::from_usize_lossy(w), src.y / T::from_usize_lossy(h));
            Some(f.texture.eval(&n))
        });
        let flow = &mut out.label.flow;
        for ((y, x), &m) in m1.indexed_iter() {
            if !m {
                continue;
            }
            match f.displacement(&pixel(x, y)) {
                Some(d) => {
                    flow.u[[y, x]] = d.x;
                    flow.v[[y, x]] = d.y;
                    flow.valid[[y, x]] = true;
                }
                None => flow.valid[[y, x]] = false,
            }
            out.fg_mask_1[[y, x]] = true;
        }
        out.fg_mask_2.zip_mut_with(&m2, |a, &b| *a |= b);
    }

    let (wf, hf) = (T::from_usize_lossy(w), T::from_usize_lossy(h));
    for ((y, x), upd) in out.occlusion_update.indexed_iter_mut() {
        if out.fg_mask_1[[y, x]] {
            continue;
        }
        let Some((u, v)) = label.flow.at(y, x) else { continue };
        let tx = (T::from_usize_lossy(x) + u).round();
        let ty = (T::from_usize_lossy(y) + v).round();
        if tx >= T::zero() && ty >= T::zero() && tx < wf && ty < hf {
            *upd = out.fg_mask_2[[ty.to_usize().unwrap(), tx.to_usize().unwrap()]];
        }
    }
    let fg1 = &out.fg_mask_1;
    ndarray::Zip::from(&mut out.occlusion.occluded)
        .and(fg1)
        .and(&out.occlusion_update)
        .for_each(|o, &fg, &upd| *o = (*o || upd) && !fg);
    ndarray::Zip::from(&mut out.label.supervision_mask)
        .and(fg1)
        .and(&out.label.flow.valid)
        .for_each(|s, &fg, &ok| {
            if fg {
                *s = ok;
            }
        });
    Ok(out)
}
