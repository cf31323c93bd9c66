//! Credibility masks and label filtering.
//!
//! Three per-pixel maps judge each generated flow vector: `m_ssim` (local
//! structural dissimilarity between frame i and frame j warped back),
//! `m_conf` (spread of the ray's weight distribution) and `m_dc`
//! (disagreement between reprojected and target-view depth). A pixel is
//! supervised when its flow is valid and each enabled map is strictly below
//! its threshold. Invalid map entries are NaN and fail their test.

use ndarray::{Array2, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowgen::{FlowField, OcclusionMask, ReprojectionMaps};
use crate::real::Real;
use crate::render::{weight_quantile_depth, RenderedView, WeightProfile};

pub const SSIM_RADIUS: usize = 5;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// The three credibility maps of a pixel grid. NaN marks invalid entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CredibilityMaps<T: Real> {
    pub m_ssim: Array2<T>,
    pub m_conf: Array2<T>,
    pub m_dc: Array2<T>,
}

impl<T: Real> CredibilityMaps<T> {
    pub fn dims(&self) -> (usize, usize) {
        self.m_conf.dim()
    }

    pub fn zeros(dims: (usize, usize)) -> Self {
        Self {
            m_ssim: Array2::zeros(dims),
            m_conf: Array2::zeros(dims),
            m_dc: Array2::zeros(dims),
        }
    }

    /// Marks every pixel of `region` fully credible.
    pub fn clear_region(&mut self, region: &Array2<bool>) {
        for m in [&mut self.m_ssim, &mut self.m_conf, &mut self.m_dc] {
            Zip::from(m).and(region).for_each(|v, &r| {
                if r {
                    *v = T::zero();
                }
            });
        }
    }

    /// Rounds every map through `f32`, the precision they are stored at.
    pub fn quantized(&self) -> Self {
        Self {
            m_ssim: quantize_f32(&self.m_ssim),
            m_conf: quantize_f32(&self.m_conf),
            m_dc: quantize_f32(&self.m_dc),
        }
    }
}

pub fn quantize_f32<T: Real>(map: &Array2<T>) -> Array2<T> {
    map.mapv(|v| T::lit(f64::from(v.as_f64() as f32)))
}

/// Thresholds of the label filter.
///
/// A threshold of 1 or more disables its criterion: the pixel passes even
/// where the map is invalid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub th_conf: f64,
    pub th_ssim: f64,
    pub th_dc: f64,
    pub th_occ: f64,
    pub th_low: f64,
    pub th_high: f64,
    pub n_foreground: usize,
    /// Also drop occluded pixels outright instead of only skipping their SSIM test.
    pub occ_hard_filter: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            th_conf: 0.3,
            th_ssim: 0.1,
            th_dc: 0.01,
            th_occ: 0.3,
            th_low: 0.1,
            th_high: 0.9,
            n_foreground: 2,
            occ_hard_filter: false,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, th) in [("th_conf", self.th_conf), ("th_ssim", self.th_ssim), ("th_dc", self.th_dc)] {
            if !(th > 0.0 && th <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {th}")));
            }
        }
        if !(self.th_occ >= 0.0 && self.th_occ <= 1.0) {
            return Err(Error::Config(format!("th_occ must lie in [0, 1], got {}", self.th_occ)));
        }
        if !(0.0 < self.th_low && self.th_low < self.th_high && self.th_high < 1.0) {
            return Err(Error::Config("th_low/th_high must satisfy 0 < low < high < 1".into()));
        }
        Ok(())
    }
}

/// Pass/fail outcome of one criterion at one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// Criterion skipped (occlusion bypass or disabled threshold).
    Skipped,
}

impl Verdict {
    pub fn passes(self) -> bool {
        self != Verdict::Fail
    }
}

fn check<T: Real>(value: T, th: f64) -> Verdict {
    if th >= 1.0 {
        Verdict::Skipped
    } else if value < T::lit(th) {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// Per-criterion verdicts at one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelVerdict {
    pub flow_valid: bool,
    pub conf: Verdict,
    pub ssim: Verdict,
    pub dc: Verdict,
    pub occlusion: Verdict,
}

impl PixelVerdict {
    pub fn supervised(&self) -> bool {
        self.flow_valid && self.conf.passes() && self.ssim.passes() && self.dc.passes() && self.occlusion.passes()
    }
}

/// Evaluates every criterion at a single pixel.
pub fn judge_pixel<T: Real>(flow_valid: bool, m_conf: T, m_ssim: T, m_dc: T, occluded: bool, cfg: &FilterConfig) -> PixelVerdict {
    PixelVerdict {
        flow_valid,
        conf: check(m_conf, cfg.th_conf),
        ssim: if occluded { Verdict::Skipped } else { check(m_ssim, cfg.th_ssim) },
        dc: check(m_dc, cfg.th_dc),
        occlusion: match (cfg.occ_hard_filter, occluded) {
            (false, _) => Verdict::Skipped,
            (true, true) => Verdict::Fail,
            (true, false) => Verdict::Pass,
        },
    }
}

/// Counts over the valid-flow pixels of one label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub pixels: usize,
    pub valid: usize,
    pub pass_conf: usize,
    pub pass_ssim: usize,
    pub pass_dc: usize,
    pub occluded: usize,
    pub supervised: usize,
}

/// Flow plus the pixels allowed into the training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredLabel<T: Real> {
    pub flow: FlowField<T>,
    pub supervision_mask: Array2<bool>,
}

fn check_dims(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension { expected, found });
    }
    Ok(())
}

/// Applies the thresholds of `cfg` to `cred`.
pub fn filter_label<T: Real>(
    flow: &FlowField<T>,
    cred: &CredibilityMaps<T>,
    occ: &OcclusionMask<T>,
    cfg: &FilterConfig,
) -> Result<(FilteredLabel<T>, FilterCounts)> {
    let dims = flow.dims();
    for d in [cred.m_conf.dim(), cred.m_ssim.dim(), cred.m_dc.dim(), occ.occluded.dim()] {
        check_dims(dims, d)?;
    }
    let mut counts = FilterCounts {
        pixels: dims.0 * dims.1,
        ..Default::default()
    };
    let mut supervision = Array2::from_elem(dims, false);
    for ((y, x), s) in supervision.indexed_iter_mut() {
        let at = [y, x];
        if !flow.valid[at] {
            continue;
        }
        let occluded = occ.occluded[at];
        let v = judge_pixel(true, cred.m_conf[at], cred.m_ssim[at], cred.m_dc[at], occluded, cfg);
        counts.valid += 1;
        counts.pass_conf += usize::from(v.conf.passes());
        counts.pass_ssim += usize::from(v.ssim.passes());
        counts.pass_dc += usize::from(v.dc.passes());
        counts.occluded += usize::from(occluded);
        *s = v.supervised();
        counts.supervised += usize::from(*s);
    }
    Ok((
        FilteredLabel {
            flow: flow.clone(),
            supervision_mask: supervision,
        },
        counts,
    ))
}

fn gaussian_taps(radius: usize, sigma: f64) -> Vec<f64> {
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|k| {
            let d = k as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Gaussian blur along one axis; the window is cut at the border and
/// renormalized.
fn blur_axis<T: Real>(src: &Array2<T>, taps: &[T], axis: Axis) -> Array2<T> {
    let r = taps.len() / 2;
    let mut out = Array2::zeros(src.dim());
    let n = src.len_of(axis);
    for (lane_in, mut lane_out) in src.lanes(axis).into_iter().zip(out.lanes_mut(axis)) {
        for i in 0..n {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(n - 1);
            let mut acc = T::zero();
            let mut norm = T::zero();
            for j in lo..=hi {
                let t = taps[j + r - i];
                acc += t * lane_in[j];
                norm += t;
            }
            lane_out[i] = acc / norm;
        }
    }
    out
}

fn blur<T: Real>(src: &Array2<T>, taps: &[T]) -> Array2<T> {
    blur_axis(&blur_axis(src, taps, Axis(1)), taps, Axis(0))
}

/// True where the `(2r+1)^2` window around a pixel contains an invalid sample.
fn dilate_invalid(valid: &Array2<bool>, r: usize) -> Array2<bool> {
    let (h, w) = valid.dim();
    let mut rows = Array2::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
            rows[[y, x]] = (lo..=hi).any(|k| !valid[[y, k]]);
        }
    }
    let mut out = Array2::from_elem((h, w), false);
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            out[[y, x]] = (lo..=hi).any(|k| rows[[k, x]]);
        }
    }
    out
}

/// Per-pixel mean SSIM over channels, NaN where the window touches an
/// invalid sample. Images are `(H, W, C)` on the `[0, 1]` scale.
pub fn ssim_map<T: Real>(a: &Array3<T>, b: &Array3<T>, sampled_valid: &Array2<bool>) -> Result<Array2<T>> {
    let (h, w, c) = a.dim();
    if b.dim() != (h, w, c) {
        return Err(Error::Dimension {
            expected: (h, w),
            found: (b.dim().0, b.dim().1),
        });
    }
    check_dims((h, w), sampled_valid.dim())?;
    let taps: Vec<T> = gaussian_taps(SSIM_RADIUS, SSIM_SIGMA).into_iter().map(T::lit).collect();
    let (c1, c2) = (T::lit(SSIM_C1), T::lit(SSIM_C2));
    let two = T::lit(2.0);
    let mut sum = Array2::<T>::zeros((h, w));
    for ch in 0..c {
        let x = a.index_axis(Axis(2), ch).to_owned();
        let y = b.index_axis(Axis(2), ch).to_owned();
        let mx = blur(&x, &taps);
        let my = blur(&y, &taps);
        let xx = blur(&(&x * &x), &taps);
        let yy = blur(&(&y * &y), &taps);
        let xy = blur(&(&x * &y), &taps);
        Zip::from(&mut sum)
            .and(&mx)
            .and(&my)
            .and(&xx)
            .and(&yy)
            .and(&xy)
            .for_each(|s, &mx, &my, &xx, &yy, &xy| {
                let vx = xx - mx * mx;
                let vy = yy - my * my;
                let cov = xy - mx * my;
                *s += ((two * mx * my + c1) * (two * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            });
    }
    let n = T::from_usize_lossy(c);
    let blocked = dilate_invalid(sampled_valid, SSIM_RADIUS);
    Ok(Zip::from(&sum)
        .and(&blocked)
        .map_collect(|&s, &bad| if bad { T::nan() } else { s / n }))
}

/// `m_ssim = 1 - SSIM`, clamped to `[0, 1]`.
pub fn ssim_mask<T: Real>(image_i: &Array3<T>, warped: &Array3<T>, sampled_valid: &Array2<bool>) -> Result<Array2<T>> {
    Ok(ssim_map(image_i, warped, sampled_valid)?.mapv(|s| {
        if s.is_nan() {
            s
        } else {
            (T::one() - s).max(T::zero()).min(T::one())
        }
    }))
}

/// `(t_h - t_l) / (t_h + t_l)`; NaN when either quantile is missing or both are zero.
pub fn rfc_value<T: Real>(t_lo: T, t_hi: T) -> T {
    let sum = t_hi + t_lo;
    if !(sum > T::zero()) {
        return T::nan();
    }
    (t_hi - t_lo) / sum
}

/// Confidence of a single profile at CDF levels `(lo, hi)`.
pub fn rfc_from_profile<T: Real>(profile: &WeightProfile<T>, lo: T, hi: T) -> Option<T> {
    let t_lo = weight_quantile_depth(profile, lo)?;
    let t_hi = weight_quantile_depth(profile, hi)?;
    let v = rfc_value(t_lo, t_hi);
    (!v.is_nan()).then_some(v)
}

/// `m_conf` from the quantile maps stored in `view`, which must have been
/// rendered at levels `(th_low, th_high)`.
pub fn rfc_mask<T: Real>(view: &RenderedView<T>, th_low: T, th_high: T) -> Result<Array2<T>> {
    if view.cfg.cdf_levels != (th_low, th_high) {
        return Err(Error::Config(format!(
            "view stores quantiles at {:?}, requested ({th_low}, {th_high})",
            view.cfg.cdf_levels
        )));
    }
    Ok(Zip::from(&view.weight_quantile_lo)
        .and(&view.weight_quantile_hi)
        .map_collect(|&lo, &hi| rfc_value(lo, hi)))
}

/// `|Z_j' - Z_i'| / (Z_j' + Z_i')`; NaN where either depth is unavailable.
pub fn depth_consistency_mask<T: Real>(maps: &ReprojectionMaps<T>) -> Array2<T> {
    Zip::from(&maps.depth_in_target)
        .and(&maps.target_sampled_depth)
        .and(&maps.valid)
        .map_collect(|&zi, &zj, &ok| {
            let sum = zi + zj;
            if ok && sum > T::zero() {
                (zj - zi).abs() / sum
            } else {
                T::nan()
            }
        })
}
