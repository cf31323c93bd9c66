//! Emission-absorption ray marching.
//!
//! A ray is cut into `n` intervals `[t_k, t_{k+1})`. Density and color are
//! sampled at each interval midpoint; the interval weight is its opacity
//! times the transmittance accumulated in front of it. Everything per pixel
//! (color, depths, CDF quantiles) is read off the resulting [`WeightProfile`].
//!
//! Depth maps in a [`RenderedView`] hold camera-frame z depth, i.e. the
//! along-ray distance scaled by the cosine between the ray and the optical
//! axis. Invalid pixels are NaN.

use nalgebra::Vector3;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene::{field_at, Aabb, Camera, Pose, Ray, Rgb, SceneModel};
use crate::seed;

/// Rays whose total weight stays below this carry no depth.
pub const MIN_DEPTH_WEIGHT: f64 = 0.5;

pub const DEFAULT_INTERVALS: usize = 256;

/// How a ray is cut into intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySamplingConfig<T: Real> {
    pub t_near: T,
    pub t_far: T,
    pub n_intervals: usize,
    /// Jitter interior boundaries inside their strata.
    pub stratified: bool,
    /// Weight-CDF levels stored as the low/high quantile maps of a view.
    pub cdf_levels: (T, T),
}

impl<T: Real> RaySamplingConfig<T> {
    pub fn new(t_near: T, t_far: T, n_intervals: usize, stratified: bool) -> Result<Self> {
        let cfg = Self {
            t_near,
            t_far,
            n_intervals,
            stratified,
            cdf_levels: (T::lit(0.1), T::lit(0.9)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Near/far bounds enclosing `bounds` as seen from `eye`.
    pub fn enclosing(bounds: &Aabb<T>, eye: &Vector3<T>, n_intervals: usize, stratified: bool) -> Result<Self> {
        let (near, far) = bounds.distance_range(eye);
        Self::new(near, far, n_intervals, stratified)
    }

    pub fn with_cdf_levels(mut self, lo: T, hi: T) -> Result<Self> {
        self.cdf_levels = (lo, hi);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_near >= T::zero() && self.t_near < self.t_far && self.t_far.is_finite()) {
            return Err(Error::Config(format!(
                "ray range must satisfy 0 <= t_near < t_far (got {}, {})",
                self.t_near, self.t_far
            )));
        }
        if self.n_intervals < 2 {
            return Err(Error::Config("n_intervals must be >= 2".into()));
        }
        let (lo, hi) = self.cdf_levels;
        if !(T::zero() < lo && lo < hi && hi < T::one()) {
            return Err(Error::Config("cdf levels must satisfy 0 < low < high < 1".into()));
        }
        Ok(())
    }

    /// Nominal (unjittered) interval width.
    pub fn interval_width(&self) -> T {
        (self.t_far - self.t_near) / T::from_usize_lossy(self.n_intervals)
    }

    fn boundaries(&self, seed: u64) -> Vec<T> {
        let n = self.n_intervals;
        let dt = self.interval_width();
        let mut rng = self.stratified.then(|| ChaCha8Rng::seed_from_u64(seed));
        (0..=n)
            .map(|k| {
                if k == 0 {
                    return self.t_near;
                }
                if k == n {
                    return self.t_far;
                }
                let offset = match rng.as_mut() {
                    Some(r) => T::lit(r.random::<f64>() - 0.5),
                    None => T::zero(),
                };
                self.t_near + (T::from_usize_lossy(k) + offset) * dt
            })
            .collect()
    }
}

/// Per-ray interval boundaries, densities, weights and transmittance.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightProfile<T: Real> {
    boundaries: Vec<T>,
    sigmas: Vec<T>,
    weights: Vec<T>,
    transmittance: Vec<T>,
    colors: Vec<Rgb<T>>,
}

impl<T: Real> WeightProfile<T> {
    /// Computes weights from per-interval densities.
    pub fn from_sigmas(boundaries: Vec<T>, sigmas: Vec<T>, colors: Vec<Rgb<T>>) -> Self {
        assert_eq!(boundaries.len(), sigmas.len() + 1);
        assert_eq!(sigmas.len(), colors.len());
        let mut weights = Vec::with_capacity(sigmas.len());
        let mut transmittance = Vec::with_capacity(sigmas.len());
        let mut optical_depth = T::zero();
        for (k, &sigma) in sigmas.iter().enumerate() {
            let e = (-optical_depth).exp();
            let tau = sigma * (boundaries[k + 1] - boundaries[k]);
            transmittance.push(e);
            weights.push((T::one() - (-tau).exp()) * e);
            optical_depth += tau;
        }
        Self {
            boundaries,
            sigmas,
            weights,
            transmittance,
            colors,
        }
    }

    /// Builds a profile with prescribed weights (their sum must not exceed 1).
    /// Densities are back-solved; colors are black.
    pub fn from_weights(boundaries: Vec<T>, weights: Vec<T>) -> Self {
        assert_eq!(boundaries.len(), weights.len() + 1);
        let mut transmittance = Vec::with_capacity(weights.len());
        let mut sigmas = Vec::with_capacity(weights.len());
        let mut remaining = T::one();
        for (k, &w) in weights.iter().enumerate() {
            transmittance.push(remaining);
            let opacity = if remaining > T::zero() { w / remaining } else { T::zero() };
            let dt = boundaries[k + 1] - boundaries[k];
            let absorbed = (T::one() - opacity).max(T::min_positive_value());
            sigmas.push(-absorbed.ln() / dt);
            remaining = (remaining - w).max(T::zero());
        }
        let colors = vec![Rgb::zeros(); weights.len()];
        Self {
            boundaries,
            sigmas,
            weights,
            transmittance,
            colors,
        }
    }

    pub fn boundaries(&self) -> &[T] {
        &self.boundaries
    }

    pub fn sigmas(&self) -> &[T] {
        &self.sigmas
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn transmittance(&self) -> &[T] {
        &self.transmittance
    }

    pub fn colors(&self) -> &[Rgb<T>] {
        &self.colors
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_weight(&self) -> T {
        self.weights.iter().copied().sum()
    }

    pub fn midpoint(&self, k: usize) -> T {
        (self.boundaries[k] + self.boundaries[k + 1]) * T::lit(0.5)
    }
}

/// Marches `ray` through `scene`. `seed` keys the stratified jitter stream.
pub fn march_ray<T: Real>(scene: &SceneModel<T>, ray: &Ray<T>, cfg: &RaySamplingConfig<T>, seed: u64) -> WeightProfile<T> {
    let boundaries = cfg.boundaries(seed);
    let n = cfg.n_intervals;
    let mut sigmas = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    for k in 0..n {
        let mid = (boundaries[k] + boundaries[k + 1]) * T::lit(0.5);
        let (sigma, color) = field_at(scene, &ray.at(mid));
        sigmas.push(sigma);
        colors.push(color);
    }
    WeightProfile::from_sigmas(boundaries, sigmas, colors)
}

/// `sum w_k c_k + (1 - sum w_k) * background`.
pub fn render_pixel_rgb<T: Real>(profile: &WeightProfile<T>, colors: &[Rgb<T>], background: Rgb<T>) -> Rgb<T> {
    assert_eq!(colors.len(), profile.len(), "one color per interval");
    let mut c = Rgb::zeros();
    for (w, col) in profile.weights.iter().zip(colors) {
        c += col * *w;
    }
    c + background * (T::one() - profile.total_weight())
}

/// Weight-averaged interval midpoint, `sum w_k t_mid_k`.
pub fn expected_depth<T: Real>(profile: &WeightProfile<T>) -> Option<T> {
    if profile.total_weight() < T::lit(MIN_DEPTH_WEIGHT) {
        return None;
    }
    Some(profile.weights.iter().enumerate().map(|(k, w)| *w * profile.midpoint(k)).sum())
}

/// Depth where the normalized weight CDF reaches `q`, interpolating linearly
/// inside the crossing interval.
pub fn weight_quantile_depth<T: Real>(profile: &WeightProfile<T>, q: T) -> Option<T> {
    assert!(q > T::zero() && q < T::one(), "quantile level must lie in (0, 1)");
    let total = profile.total_weight();
    if total < T::lit(MIN_DEPTH_WEIGHT) {
        return None;
    }
    let target = q * total;
    let mut below = T::zero();
    for (k, &w) in profile.weights.iter().enumerate() {
        let above = below + w;
        if above >= target && w > T::zero() {
            let frac = ((target - below) / w).max(T::zero()).min(T::one());
            let (t0, t1) = (profile.boundaries[k], profile.boundaries[k + 1]);
            return Some(t0 + frac * (t1 - t0));
        }
        below = above;
    }
    profile.boundaries.last().copied()
}

/// Rendered image plus the depth statistics derived from each pixel's profile.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView<T: Real> {
    /// `(H, W, 3)`.
    pub rgb: Array3<T>,
    pub midpoint_depth: Array2<T>,
    pub expected_depth: Array2<T>,
    pub weight_quantile_lo: Array2<T>,
    pub weight_quantile_hi: Array2<T>,
    pub total_weight: Array2<T>,
    pub cfg: RaySamplingConfig<T>,
}

impl<T: Real> RenderedView<T> {
    pub fn dims(&self) -> (usize, usize) {
        self.total_weight.dim()
    }
}

/// World-space ray through the center of pixel `(u, v)`, plus the cosine
/// between that ray and the optical axis (along-ray distance to z depth).
pub fn pixel_ray<T: Real>(camera: &Camera<T>, pose: &Pose<T>, u: T, v: T) -> (Ray<T>, T) {
    let d = camera.unproject(u, v);
    let norm = d.dot(&d).sqrt();
    (Ray::new(pose.center(), pose.direction_to_world(&d)), T::one() / norm)
}

/// Seed of the jitter stream for pixel `index` of a view rendered with `seed`.
pub fn pixel_seed(seed: u64, index: usize) -> u64 {
    seed::derive(seed, index as u64)
}

struct PixelSample<T: Real> {
    rgb: Rgb<T>,
    mid: T,
    expected: T,
    lo: T,
    hi: T,
    total: T,
}

/// Renders one ray per pixel center. Pixels are independent and rendered in
/// parallel; per-pixel jitter streams make the output independent of scheduling.
pub fn render_view<T: Real>(
    scene: &SceneModel<T>,
    camera: &Camera<T>,
    pose: &Pose<T>,
    cfg: &RaySamplingConfig<T>,
    seed: u64,
) -> RenderedView<T> {
    let (h, w) = camera.dims();
    let nan = T::nan();
    let samples: Vec<PixelSample<T>> = (0..h * w)
        .into_par_iter()
        .map(|idx| {
            let (y, x) = (idx / w, idx % w);
            let (ray, cos) = pixel_ray(camera, pose, T::from_usize_lossy(x), T::from_usize_lossy(y));
            let profile = march_ray(scene, &ray, cfg, pixel_seed(seed, idx));
            let to_z = |d: Option<T>| d.map_or(nan, |t| t * cos);
            PixelSample {
                rgb: render_pixel_rgb(&profile, &profile.colors, scene.background()),
                mid: to_z(weight_quantile_depth(&profile, T::lit(0.5))),
                expected: to_z(expected_depth(&profile)),
                lo: to_z(weight_quantile_depth(&profile, cfg.cdf_levels.0)),
                hi: to_z(weight_quantile_depth(&profile, cfg.cdf_levels.1)),
                total: profile.total_weight(),
            }
        })
        .collect();

    let mut rgb = Array3::zeros((h, w, 3));
    let mut mid = Array2::from_elem((h, w), nan);
    let mut expected = mid.clone();
    let mut lo = mid.clone();
    let mut hi = mid.clone();
    let mut total = Array2::zeros((h, w));
    for (idx, s) in samples.into_iter().enumerate() {
        let (y, x) = (idx / w, idx % w);
        for c in 0..3 {
            rgb[[y, x, c]] = s.rgb[c];
        }
        mid[[y, x]] = s.mid;
        expected[[y, x]] = s.expected;
        lo[[y, x]] = s.lo;
        hi[[y, x]] = s.hi;
        total[[y, x]] = s.total;
    }
    RenderedView {
        rgb,
        midpoint_depth: mid,
        expected_depth: expected,
        weight_quantile_lo: lo,
        weight_quantile_hi: hi,
        total_weight: total,
        cfg: *cfg,
    }
}

/// Text dump of a profile: one line per interval carrying weight.
pub fn describe_profile<T: Real>(profile: &WeightProfile<T>) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4} {:>12} {:>12} {:>12} {:>12}",
        "k", "t_start", "t_end", "weight", "transmit"
    );
    for k in 0..profile.len() {
        if profile.weights[k] > T::lit(1e-6) {
            let _ = writeln!(
                out,
                "{:>4} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                k,
                profile.boundaries[k].as_f64(),
                profile.boundaries[k + 1].as_f64(),
                profile.weights[k].as_f64(),
                profile.transmittance[k].as_f64()
            );
        }
    }
    let _ = writeln!(out, "total weight {:.6}", profile.total_weight().as_f64());
    out
}
