//! Flow and depth-ratio metrics.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowgen::{backward_warp, FlowField, OcclusionMask};
use crate::masks::ssim_mask;
use crate::real::Real;

/// How the two Fl_all outlier conditions combine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutlierRule {
    /// Error above 3 px and above 5 % of the ground-truth magnitude (KITTI devkit).
    #[default]
    And,
    /// Error above 3 px or above 5 % of the magnitude.
    Or,
}

impl FromStr for OutlierRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "and" => Ok(Self::And),
            "or" => Ok(Self::Or),
            other => Err(Error::Config(format!("outlier rule must be 'and' or 'or', got {other:?}"))),
        }
    }
}

impl fmt::Display for OutlierRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::And => "and",
            Self::Or => "or",
        })
    }
}

pub const OUTLIER_ABS_PX: f64 = 3.0;
pub const OUTLIER_REL: f64 = 0.05;

impl OutlierRule {
    pub fn is_outlier(self, err: f64, gt_magnitude: f64) -> bool {
        let abs = err > OUTLIER_ABS_PX;
        let rel = err > OUTLIER_REL * gt_magnitude;
        match self {
            Self::And => abs && rel,
            Self::Or => abs || rel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowMetricsReport {
    /// Mean end-point error, px.
    pub fl_epe: f64,
    /// Outlier percentage.
    pub fl_all: f64,
    pub pixel_count: usize,
}

/// EPE and outlier rate of `pred` against `gt` over `eval_mask`.
///
/// The prediction's own validity flags are ignored: every masked pixel is scored.
pub fn flow_epe_all<T: Real>(
    pred: &FlowField<T>,
    gt: &FlowField<T>,
    eval_mask: &Array2<bool>,
    rule: OutlierRule,
) -> Result<FlowMetricsReport> {
    let dims = gt.dims();
    for d in [pred.dims(), eval_mask.dim()] {
        if d != dims {
            return Err(Error::Dimension { expected: dims, found: d });
        }
    }
    let (mut sum, mut outliers, mut count) = (0.0, 0usize, 0usize);
    for ((y, x), &m) in eval_mask.indexed_iter() {
        if !m {
            continue;
        }
        let Some((gu, gv)) = gt.at(y, x) else {
            return Err(Error::MaskOutsideGroundTruth { x, y });
        };
        let (gu, gv) = (gu.as_f64(), gv.as_f64());
        let du = pred.u[[y, x]].as_f64() - gu;
        let dv = pred.v[[y, x]].as_f64() - gv;
        let err = (du * du + dv * dv).sqrt();
        sum += err;
        outliers += usize::from(rule.is_outlier(err, (gu * gu + gv * gv).sqrt()));
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(FlowMetricsReport {
        fl_epe: sum / count as f64,
        fl_all: 100.0 * outliers as f64 / count as f64,
        pixel_count: count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRatioReport {
    /// `mean |ln tau - ln tau_gt| * 1e4`.
    pub mid_error: f64,
    pub pixel_count: usize,
}

/// Mean absolute log difference of depth-change ratios `tau = z2 / z1`, scaled by 1e4.
pub fn mid_error<T: Real>(tau_pred: &Array2<T>, tau_gt: &Array2<T>, eval_mask: &Array2<bool>) -> Result<DepthRatioReport> {
    let dims = tau_gt.dim();
    for d in [tau_pred.dim(), eval_mask.dim()] {
        if d != dims {
            return Err(Error::Dimension { expected: dims, found: d });
        }
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for ((y, x), &m) in eval_mask.indexed_iter() {
        if !m {
            continue;
        }
        let (p, g) = (tau_pred[[y, x]].as_f64(), tau_gt[[y, x]].as_f64());
        for value in [p, g] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonPositiveRatio { x, y, value });
            }
        }
        sum += (p.ln() - g.ln()).abs();
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(DepthRatioReport {
        mid_error: 1e4 * sum / count as f64,
        pixel_count: count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotLosses {
    /// Mean `1 - SSIM` over scored pixels.
    pub s_loss: f64,
    /// Mean absolute difference on the 0-255 scale.
    pub p_loss: f64,
    pub pixel_count: usize,
}

/// Warps `image_j` back with `flow` and compares it with `image_i` on
/// non-occluded pixels whose warp sample exists. Images are `(H, W, C)` in `[0, 1]`.
pub fn zero_shot_losses<T: Real>(
    image_i: &Array3<T>,
    image_j: &Array3<T>,
    flow: &FlowField<T>,
    occ: &OcclusionMask<T>,
) -> Result<ZeroShotLosses> {
    if image_i.dim() != image_j.dim() {
        return Err(Error::Dimension {
            expected: (image_i.dim().0, image_i.dim().1),
            found: (image_j.dim().0, image_j.dim().1),
        });
    }
    let (warped, sampled) = backward_warp(image_j, flow)?;
    if occ.occluded.dim() != sampled.dim() {
        return Err(Error::Dimension {
            expected: sampled.dim(),
            found: occ.occluded.dim(),
        });
    }
    let m_ssim = ssim_mask(image_i, &warped, &sampled)?;
    let channels = image_i.dim().2;
    let (mut s_sum, mut s_count, mut p_sum, mut p_count) = (0.0, 0usize, 0.0, 0usize);
    Zip::indexed(&sampled)
        .and(&occ.occluded)
        .and(&m_ssim)
        .for_each(|(y, x), &ok, &occluded, &m| {
            if !ok || occluded {
                return;
            }
            if !m.is_nan() {
                s_sum += m.as_f64();
                s_count += 1;
            }
            let diff: f64 = (0..channels).map(|c| (image_i[[y, x, c]] - warped[[y, x, c]]).abs().as_f64()).sum();
            p_sum += 255.0 * diff / channels as f64;
            p_count += 1;
        });
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(ZeroShotLosses {
        s_loss: mean(s_sum, s_count),
        p_loss: mean(p_sum, p_count),
        pixel_count: p_count,
    })
}
