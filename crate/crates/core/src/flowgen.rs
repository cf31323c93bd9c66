//! Flow from depth: reprojection of view-i depth into view j, the flow it
//! induces, the occlusion test against view j's density, and backward warping.

use ndarray::{Array2, Array3, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::render::{march_ray, pixel_ray, pixel_seed, RaySamplingConfig};
use crate::scene::{Camera, Pose, SceneModel};
use crate::seed;

/// Default AO threshold above which a pixel counts as occluded.
pub const DEFAULT_OCCLUSION_THRESHOLD: f64 = 0.3;

/// Intervals ending within this many interval widths of the target depth do
/// not count toward AO, so the target surface does not occlude itself.
pub const AO_MARGIN_INTERVALS: f64 = 1.5;

/// Dense flow `f_{i->j}` in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T: Real> {
    pub u: Array2<T>,
    pub v: Array2<T>,
    pub valid: Array2<bool>,
}

impl<T: Real> FlowField<T> {
    pub fn zeros((h, w): (usize, usize)) -> Self {
        Self {
            u: Array2::zeros((h, w)),
            v: Array2::zeros((h, w)),
            valid: Array2::from_elem((h, w), true),
        }
    }

    pub fn invalid((h, w): (usize, usize)) -> Self {
        Self {
            u: Array2::zeros((h, w)),
            v: Array2::zeros((h, w)),
            valid: Array2::from_elem((h, w), false),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.valid.dim()
    }

    /// Flow vector at `(y, x)` if valid.
    pub fn at(&self, y: usize, x: usize) -> Option<(T, T)> {
        self.valid[[y, x]].then(|| (self.u[[y, x]], self.v[[y, x]]))
    }
}

/// Where each view-i pixel lands in view j.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprojectionMaps<T: Real> {
    /// Sub-pixel position `p_i'` in view j (x, y).
    pub target_x: Array2<T>,
    pub target_y: Array2<T>,
    /// z depth of the view-i point in view j's camera frame (`Z_i'`).
    pub depth_in_target: Array2<T>,
    /// View-j midpoint depth bilinearly sampled at `p_i'` (`Z_j'`).
    pub target_sampled_depth: Array2<T>,
    pub valid: Array2<bool>,
}

impl<T: Real> ReprojectionMaps<T> {
    pub fn dims(&self) -> (usize, usize) {
        self.valid.dim()
    }
}

/// Occlusion of view-i pixels as seen from view j.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMask<T: Real> {
    pub occluded: Array2<bool>,
    /// Accumulated weight in front of the reprojected point; NaN where invalid.
    pub ao_values: Array2<T>,
}

impl<T: Real> OcclusionMask<T> {
    /// Thresholds AO values (`ao >= th`).
    pub fn from_ao(ao_values: Array2<T>, th_occ: T) -> Self {
        let occluded = ao_values.mapv(|a| a >= th_occ);
        Self { occluded, ao_values }
    }

    pub fn none((h, w): (usize, usize)) -> Self {
        Self {
            occluded: Array2::from_elem((h, w), false),
            ao_values: Array2::zeros((h, w)),
        }
    }
}

fn check_dims(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension { expected, found });
    }
    Ok(())
}

/// Bilinear sample of a scalar map at `(x, y)`. NaN when outside the pixel
/// grid or when any neighbor with non-zero weight is NaN.
pub fn bilinear<T: Real>(map: &Array2<T>, x: T, y: T) -> T {
    let (h, w) = map.dim();
    let max_x = T::from_usize_lossy(w - 1);
    let max_y = T::from_usize_lossy(h - 1);
    if !(x >= T::zero() && y >= T::zero() && x <= max_x && y <= max_y) {
        return T::nan();
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (xi, yi) = (x0.to_usize().unwrap(), y0.to_usize().unwrap());
    let mut acc = T::zero();
    for (dy, wy) in [(0, T::one() - fy), (1, fy)] {
        if wy == T::zero() {
            continue;
        }
        for (dx, wx) in [(0, T::one() - fx), (1, fx)] {
            if wx == T::zero() {
                continue;
            }
            acc += map[[yi + dy, xi + dx]] * wx * wy;
        }
    }
    acc
}

/// Reprojects view-i depth into view j.
///
/// For each pixel with finite depth `Z`: `X = P_i (Z K^-1 p)` in the world,
/// `X_j = P_j^-1 X`, `Z_i' = X_j.z`, `p_i' = K X_j / Z_i'`. Points with
/// `Z_i' <= 0` are invalid. `Z_j'` samples `depth_j` at `p_i'`.
pub fn reproject<T: Real>(
    depth_i: &Array2<T>,
    depth_j: &Array2<T>,
    camera: &Camera<T>,
    pose_i: &Pose<T>,
    pose_j: &Pose<T>,
) -> Result<ReprojectionMaps<T>> {
    check_dims(camera.dims(), depth_i.dim())?;
    check_dims(camera.dims(), depth_j.dim())?;
    let dims = depth_i.dim();
    let nan = T::nan();
    let mut maps = ReprojectionMaps {
        target_x: Array2::from_elem(dims, nan),
        target_y: Array2::from_elem(dims, nan),
        depth_in_target: Array2::from_elem(dims, nan),
        target_sampled_depth: Array2::from_elem(dims, nan),
        valid: Array2::from_elem(dims, false),
    };
    let (_, w) = dims;
    let hits: Vec<Option<(T, T, T)>> = (0..dims.0 * w)
        .into_par_iter()
        .map(|idx| {
            let (y, x) = (idx / w, idx % w);
            let z = depth_i[[y, x]];
            if !z.is_finite() {
                return None;
            }
            let p_cam = camera.unproject(T::from_usize_lossy(x), T::from_usize_lossy(y)) * z;
            let in_j = pose_j.world_to_camera(&pose_i.camera_to_world(&p_cam));
            camera.project(&in_j).map(|(u, v)| (u, v, in_j.z))
        })
        .collect();
    for (idx, hit) in hits.into_iter().enumerate() {
        let Some((u, v, zt)) = hit else { continue };
        let at = [idx / w, idx % w];
        maps.target_x[at] = u;
        maps.target_y[at] = v;
        maps.depth_in_target[at] = zt;
        maps.target_sampled_depth[at] = bilinear(depth_j, u, v);
        maps.valid[at] = true;
    }
    Ok(maps)
}

/// `f = p_i' - p_i`, validity carried over.
pub fn flow_from_reprojection<T: Real>(maps: &ReprojectionMaps<T>) -> FlowField<T> {
    let mut flow = FlowField::invalid(maps.dims());
    for ((y, x), &ok) in maps.valid.indexed_iter() {
        if ok {
            flow.u[[y, x]] = maps.target_x[[y, x]] - T::from_usize_lossy(x);
            flow.v[[y, x]] = maps.target_y[[y, x]] - T::from_usize_lossy(y);
            flow.valid[[y, x]] = true;
        }
    }
    flow
}

/// AO-based occlusion of each reprojected point.
///
/// Marches view j's ray through `p_i'` and sums weights of the intervals
/// ending at least `1.5` interval widths before the reprojected point. The
/// pixel is occluded when that sum reaches `th_occ`.
pub fn occlusion_from_ao<T: Real>(
    scene: &SceneModel<T>,
    camera: &Camera<T>,
    pose_j: &Pose<T>,
    maps: &ReprojectionMaps<T>,
    cfg: &RaySamplingConfig<T>,
    th_occ: T,
    seed: u64,
) -> OcclusionMask<T> {
    let margin = cfg.interval_width() * T::lit(AO_MARGIN_INTERVALS);
    let mut ao = Array2::from_elem(maps.dims(), T::nan());
    let w = maps.dims().1;
    Zip::indexed(&mut ao)
        .and(&maps.valid)
        .and(&maps.target_x)
        .and(&maps.target_y)
        .and(&maps.depth_in_target)
        .par_for_each(|(y, x), ao, &ok, &tx, &ty, &zt| {
            if !ok {
                return;
            }
            let (ray, cos) = pixel_ray(camera, pose_j, tx, ty);
            let t_target = zt / cos;
            let profile = march_ray(scene, &ray, cfg, pixel_seed(seed, y * w + x));
            let b = profile.boundaries();
            *ao = profile
                .weights()
                .iter()
                .enumerate()
                .take_while(|(k, _)| b[k + 1] <= t_target - margin)
                .map(|(_, w)| *w)
                .sum();
        });
    OcclusionMask::from_ao(ao, th_occ)
}

/// Seed used for the AO rays of a pair rendered with `view_seed`.
pub fn ao_seed(view_seed: u64) -> u64 {
    seed::derive(view_seed, 0xA0)
}

/// Samples `image_j` at `p + flow(p)` for every pixel `p` of view i.
///
/// Out-of-bounds or invalid-flow pixels are zero and flagged in the returned
/// validity map.
pub fn backward_warp<T: Real>(image_j: &Array3<T>, flow: &FlowField<T>) -> Result<(Array3<T>, Array2<bool>)> {
    let (h, w, c) = image_j.dim();
    check_dims((h, w), flow.dims())?;
    let channels: Vec<Array2<T>> = image_j.axis_iter(Axis(2)).map(|ch| ch.to_owned()).collect();
    let mut warped = Array3::zeros((h, w, c));
    let mut sampled = Array2::from_elem((h, w), false);
    warped
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(sampled.axis_iter_mut(Axis(0)).into_par_iter())
        .enumerate()
        .for_each(|(y, (mut row, mut ok_row))| {
            for x in 0..w {
                let Some((u, v)) = flow.at(y, x) else { continue };
                let sx = T::from_usize_lossy(x) + u;
                let sy = T::from_usize_lossy(y) + v;
                let values: Vec<T> = channels.iter().map(|ch| bilinear(ch, sx, sy)).collect();
                if values.iter().all(|v| v.is_finite()) {
                    for (k, v) in values.into_iter().enumerate() {
                        row[[x, k]] = v;
                    }
                    ok_row[x] = true;
                }
            }
        });
    Ok((warped, sampled))
}
