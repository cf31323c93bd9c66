//! End-to-end commands: generate, refilter, eval and inspect.
//!
//! A pipeline config is a TOML file:
//!
//! ```toml
//! scene = "scene.toml"      # relative to this file
//! seed = 42                 # required; every random stream derives from it
//! threads = 4               # 0 = one per core
//!
//! [sampling]
//! n_intervals = 256
//! stratified = true
//! # t_near = 0.5            # default: per view, the range covering the scene bounds
//! # t_far = 40.0
//!
//! [filter]                  # all keys optional
//! th_conf = 0.3
//! th_ssim = 0.1
//! th_dc = 0.01
//! th_occ = 0.3
//! th_low = 0.1
//! th_high = 0.9
//! n_foreground = 2
//! occ_hard_filter = false
//!
//! # [pose_pairs]            # optional override of the scene's pose sampler
//! ```

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{
    self, from_f32_map, from_rgb8, quantize_flow, read_manifest, read_sample, to_f32_map, to_rgb8, write_manifest, write_sample,
    BinaryMasks, DatasetSample, Manifest, PoseRecord, RawMaps, SampleMeta, SamplingRecord,
};
use crate::error::{Error, Result};
use crate::evalmetrics::{flow_epe_all, mid_error, zero_shot_losses, DepthRatioReport, FlowMetricsReport, OutlierRule, ZeroShotLosses};
use crate::flowgen::{ao_seed, backward_warp, flow_from_reprojection, occlusion_from_ao, reproject, FlowField, OcclusionMask};
use crate::foreground::{composite, composite_occlusion, sample_floaters};
use crate::masks::{
    depth_consistency_mask, filter_label, judge_pixel, quantize_f32, rfc_mask, rfc_value, ssim_mask, CredibilityMaps, FilterConfig,
    FilterCounts, Verdict,
};
use crate::render::{
    describe_profile, expected_depth, march_ray, pixel_ray, pixel_seed, render_view, weight_quantile_depth, RaySamplingConfig,
};
use crate::scene::config::{PosePairConfig, SceneConfig};
use crate::scene::{sample_pose_pairs, Camera, Pose, SceneModel};
use crate::seed;

const POSE_STREAM: u64 = 0x706f_7365;
const SAMPLE_STREAM: u64 = 0x7361_6d70;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSettings {
    pub n_intervals: usize,
    pub stratified: bool,
    pub t_near: Option<f64>,
    pub t_far: Option<f64>,
}

impl Default for SamplingSettings {
    fn default() -> Self {
        Self {
            n_intervals: crate::render::DEFAULT_INTERVALS,
            stratified: true,
            t_near: None,
            t_far: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub scene: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub sampling: SamplingSettings,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub pose_pairs: Option<PosePairConfig>,
}

impl PipelineConfig {
    /// Parses a config; a relative scene path is resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.scene.is_relative() {
            cfg.scene = base_dir.join(&cfg.scene);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        if self.sampling.n_intervals < 2 {
            return Err(Error::Config("sampling.n_intervals must be >= 2".into()));
        }
        if self.sampling.t_near.is_some() != self.sampling.t_far.is_some() {
            return Err(Error::Config("sampling.t_near and sampling.t_far must be given together".into()));
        }
        if let Some(p) = &self.pose_pairs {
            p.build::<f64>()?;
        }
        Ok(())
    }
}

/// Scene, camera and settings shared by every sample of a run.
struct Context {
    scene: SceneModel<f64>,
    camera: Camera<f64>,
    sampling: SamplingSettings,
    filter: FilterConfig,
    seed: u64,
}

impl Context {
    fn ray_config(&self, pose: &Pose<f64>) -> Result<RaySamplingConfig<f64>> {
        let s = &self.sampling;
        let cfg = match (s.t_near, s.t_far) {
            (Some(near), Some(far)) => RaySamplingConfig::new(near, far, s.n_intervals, s.stratified)?,
            _ => RaySamplingConfig::enclosing(self.scene.bounds(), &pose.center(), s.n_intervals, s.stratified)?,
        };
        cfg.with_cdf_levels(self.filter.th_low, self.filter.th_high)
    }
}

fn sampling_record(cfg: &RaySamplingConfig<f64>, seed: u64) -> SamplingRecord {
    SamplingRecord {
        t_near: cfg.t_near,
        t_far: cfg.t_far,
        n_intervals: cfg.n_intervals,
        stratified: cfg.stratified,
        cdf_levels: [cfg.cdf_levels.0, cfg.cdf_levels.1],
        seed,
    }
}

fn ray_config_from(rec: &SamplingRecord) -> Result<RaySamplingConfig<f64>> {
    RaySamplingConfig::new(rec.t_near, rec.t_far, rec.n_intervals, rec.stratified)?.with_cdf_levels(rec.cdf_levels[0], rec.cdf_levels[1])
}

fn threshold_masks(cred: &CredibilityMaps<f64>, filter: &FilterConfig) -> (Array2<bool>, Array2<bool>, Array2<bool>) {
    let pass = |m: &Array2<f64>, th: f64| {
        m.mapv(|v| {
            judge_pixel(true, v, 0.0, 0.0, false, &FilterConfig { th_conf: th, ..*filter })
                .conf
                .passes()
        })
    };
    (
        pass(&cred.m_conf, filter.th_conf),
        pass(&cred.m_ssim, filter.th_ssim),
        pass(&cred.m_dc, filter.th_dc),
    )
}

fn masked_flow(flow: &FlowField<f64>, keep: &Array2<bool>) -> FlowField<f64> {
    let mut f = flow.clone();
    ndarray::Zip::from(&mut f.valid).and(keep).for_each(|v, &k| *v &= k);
    quantize_flow(&f)
}

fn sample_id(index: usize) -> String {
    format!("{index:06}")
}

fn build_sample(ctx: &Context, index: usize, pose_1: &Pose<f64>, pose_2: &Pose<f64>) -> Result<DatasetSample> {
    let sample_seed = seed::derive(seed::derive(ctx.seed, SAMPLE_STREAM), index as u64);
    let (seed_1, seed_2, floater_seed) = (
        seed::derive(sample_seed, 1),
        seed::derive(sample_seed, 2),
        seed::derive(sample_seed, 3),
    );
    let cam = &ctx.camera;
    let f = &ctx.filter;
    let cfg_1 = ctx.ray_config(pose_1)?;
    let cfg_2 = ctx.ray_config(pose_2)?;
    let view_1 = render_view(&ctx.scene, cam, pose_1, &cfg_1, seed_1);
    let view_2 = render_view(&ctx.scene, cam, pose_2, &cfg_2, seed_2);

    let maps = reproject(&view_1.midpoint_depth, &view_2.midpoint_depth, cam, pose_1, pose_2)?;
    let flow = quantize_flow(&flow_from_reprojection(&maps));
    let ao = quantize_f32(&occlusion_from_ao(&ctx.scene, cam, pose_2, &maps, &cfg_2, f.th_occ, ao_seed(seed_2)).ao_values);
    let occ = OcclusionMask::from_ao(ao.clone(), f.th_occ);
    let (warped, sampled) = backward_warp(&view_2.rgb, &flow)?;
    let mut cred = CredibilityMaps {
        m_ssim: ssim_mask(&view_1.rgb, &warped, &sampled)?,
        m_conf: rfc_mask(&view_1, f.th_low, f.th_high)?,
        m_dc: depth_consistency_mask(&maps),
    }
    .quantized();
    let (label, _) = filter_label(&flow, &cred, &occ, f)?;

    let floaters = sample_floaters::<f64>(f.n_foreground, floater_seed, cam.dims());
    let comp = composite(&view_1.rgb, &view_2.rgb, &label, &occ, &floaters)?;
    let flow_raw = quantize_flow(&comp.label.flow);
    cred.clear_region(&comp.fg_mask_1);
    let occ = composite_occlusion(&ao, f.th_occ, &comp.fg_mask_1, &comp.occlusion_update);
    let (label, stats) = filter_label(&flow_raw, &cred, &occ, f)?;
    let (conf, ssim, dc) = threshold_masks(&cred, f);

    let id = sample_id(index);
    let meta = SampleMeta {
        id: id.clone(),
        pair_index: index,
        seed: sample_seed,
        ao_seed: ao_seed(seed_2),
        floater_seed,
        foreground_pixels: comp.fg_mask_1.iter().filter(|&&m| m).count(),
        camera: crate::scene::config::CameraConfig {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
        },
        pose_1: PoseRecord::from_pose(pose_1),
        pose_2: PoseRecord::from_pose(pose_2),
        sampling_1: sampling_record(&cfg_1, seed_1),
        sampling_2: sampling_record(&cfg_2, seed_2),
        filter: *f,
        stats,
        floaters: floaters.iter().map(|fl| fl.to_record()).collect(),
    };
    Ok(DatasetSample {
        id,
        image_1: to_rgb8(&comp.image_1),
        image_2: to_rgb8(&comp.image_2),
        flow_gt: masked_flow(&flow_raw, &label.supervision_mask),
        flow_raw,
        depth_1: to_f32_map(&view_1.midpoint_depth),
        depth_2: to_f32_map(&view_2.midpoint_depth),
        raw: RawMaps {
            m_conf: to_f32_map(&cred.m_conf),
            m_ssim: to_f32_map(&cred.m_ssim),
            m_dc: to_f32_map(&cred.m_dc),
            ao: to_f32_map(&ao),
        },
        masks: BinaryMasks {
            conf,
            ssim,
            dc,
            occ: occ.occluded,
            supervision: label.supervision_mask,
            fg_1: comp.fg_mask_1,
            fg_2: comp.fg_mask_2,
            fg_occ: comp.occlusion_update,
        },
        meta,
    })
}

/// Per-sample line of a generate or refilter report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub id: String,
    pub stats: FilterCounts,
    pub foreground_pixels: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerateReport {
    pub samples: Vec<SampleSummary>,
    /// `(pair index, error message)` for pairs that could not be produced.
    pub failures: Vec<(usize, String)>,
}

fn fraction(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

fn totals(samples: &[SampleSummary]) -> FilterCounts {
    samples.iter().fold(FilterCounts::default(), |mut t, s| {
        t.pixels += s.stats.pixels;
        t.valid += s.stats.valid;
        t.pass_conf += s.stats.pass_conf;
        t.pass_ssim += s.stats.pass_ssim;
        t.pass_dc += s.stats.pass_dc;
        t.occluded += s.stats.occluded;
        t.supervised += s.stats.supervised;
        t
    })
}

impl fmt::Display for GenerateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10}",
            "sample", "valid", "conf", "ssim", "dc", "occ", "supervised"
        )?;
        for s in &self.samples {
            let c = &s.stats;
            writeln!(
                f,
                "{:<8} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>10.4}",
                s.id,
                fraction(c.valid, c.pixels),
                fraction(c.pass_conf, c.valid),
                fraction(c.pass_ssim, c.valid),
                fraction(c.pass_dc, c.valid),
                fraction(c.occluded, c.valid),
                fraction(c.supervised, c.pixels),
            )?;
        }
        let t = totals(&self.samples);
        writeln!(
            f,
            "{:<8} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>10.4}",
            "all",
            fraction(t.valid, t.pixels),
            fraction(t.pass_conf, t.valid),
            fraction(t.pass_ssim, t.valid),
            fraction(t.pass_dc, t.valid),
            fraction(t.occluded, t.valid),
            fraction(t.supervised, t.pixels),
        )?;
        write!(f, "{} samples written, {} failed", self.samples.len(), self.failures.len())
    }
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

/// Renders every pose pair of the configured scene and writes the dataset to `out`.
///
/// Per-sample failures are logged and listed in the report; the run continues.
pub fn generate(cfg: &PipelineConfig, out: &Path) -> Result<GenerateReport> {
    cfg.validate()?;
    let scene_text = fs::read_to_string(&cfg.scene).map_err(|e| Error::Config(format!("{}: {e}", cfg.scene.display())))?;
    let scene_cfg = SceneConfig::from_toml_str(&scene_text)?;
    let scene = scene_cfg.build_scene::<f64>()?;
    let camera = scene_cfg.build_camera::<f64>()?;
    let mut spec = match &cfg.pose_pairs {
        Some(p) => p.build::<f64>()?,
        None => scene_cfg.build_pose_spec::<f64>()?,
    };
    spec.seed = seed::derive(seed::derive(cfg.seed, POSE_STREAM), spec.seed);
    let pairs = sample_pose_pairs(&spec, &scene, scene.bounds().center())?;
    let ctx = Context {
        scene,
        camera,
        sampling: cfg.sampling,
        filter: cfg.filter,
        seed: cfg.seed,
    };

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    fs::write(out.join(dataio::SCENE_FILE), &scene_text).map_err(|e| Error::io(out.join(dataio::SCENE_FILE), e))?;
    info!("generating {} samples into {}", pairs.len(), out.display());

    let results: Vec<Result<SampleMeta>> = thread_pool(cfg.threads)?.install(|| {
        pairs
            .par_iter()
            .enumerate()
            .map(|(k, (p1, p2))| {
                let sample = build_sample(&ctx, k, p1, p2)?;
                write_sample(out, &sample)?;
                Ok(sample.meta)
            })
            .collect()
    });

    let mut report = GenerateReport::default();
    let mut entries = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(meta) => {
                entries.push(Manifest::entry_for(&meta));
                report.samples.push(SampleSummary {
                    id: meta.id,
                    stats: meta.stats,
                    foreground_pixels: meta.foreground_pixels,
                });
            }
            Err(e) => {
                warn!("pair {k} failed: {e}");
                report.failures.push((k, e.to_string()));
            }
        }
    }
    write_manifest(out, &Manifest::new(cfg.seed, entries))?;
    Ok(report)
}

/// New thresholds for an existing dataset. `None` keeps the stored value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ThresholdUpdate {
    pub th_conf: Option<f64>,
    pub th_ssim: Option<f64>,
    pub th_dc: Option<f64>,
    pub th_occ: Option<f64>,
}

impl ThresholdUpdate {
    pub fn apply(&self, base: &FilterConfig) -> FilterConfig {
        FilterConfig {
            th_conf: self.th_conf.unwrap_or(base.th_conf),
            th_ssim: self.th_ssim.unwrap_or(base.th_ssim),
            th_dc: self.th_dc.unwrap_or(base.th_dc),
            th_occ: self.th_occ.unwrap_or(base.th_occ),
            ..*base
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefilterLine {
    pub id: String,
    pub pixels: usize,
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefilterReport {
    pub samples: Vec<RefilterLine>,
}

impl fmt::Display for RefilterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>10} {:>10} {:>10}", "sample", "before", "after", "delta")?;
        let (mut p, mut b, mut a) = (0, 0, 0);
        for s in &self.samples {
            let (fb, fa) = (fraction(s.before, s.pixels), fraction(s.after, s.pixels));
            writeln!(f, "{:<8} {:>10.4} {:>10.4} {:>+10.4}", s.id, fb, fa, fa - fb)?;
            p += s.pixels;
            b += s.before;
            a += s.after;
        }
        let (fb, fa) = (fraction(b, p), fraction(a, p));
        write!(f, "{:<8} {:>10.4} {:>10.4} {:>+10.4}", "all", fb, fa, fa - fb)
    }
}

/// Re-thresholds the stored raw maps of `sample` under `filter`.
pub fn refilter_sample(sample: &mut DatasetSample, filter: &FilterConfig) -> Result<()> {
    filter.validate()?;
    let old = &sample.meta.filter;
    if (old.th_low, old.th_high) != (filter.th_low, filter.th_high) {
        return Err(Error::Config("changing th_low/th_high requires regenerating the dataset".into()));
    }
    let cred = CredibilityMaps {
        m_ssim: from_f32_map(&sample.raw.m_ssim),
        m_conf: from_f32_map(&sample.raw.m_conf),
        m_dc: from_f32_map(&sample.raw.m_dc),
    };
    let ao: Array2<f64> = from_f32_map(&sample.raw.ao);
    let occ = composite_occlusion(&ao, filter.th_occ, &sample.masks.fg_1, &sample.masks.fg_occ);
    let (label, stats) = filter_label(&sample.flow_raw, &cred, &occ, filter)?;
    let (conf, ssim, dc) = threshold_masks(&cred, filter);
    sample.flow_gt = masked_flow(&sample.flow_raw, &label.supervision_mask);
    sample.masks.conf = conf;
    sample.masks.ssim = ssim;
    sample.masks.dc = dc;
    sample.masks.occ = occ.occluded;
    sample.masks.supervision = label.supervision_mask;
    sample.meta.filter = *filter;
    sample.meta.stats = stats;
    Ok(())
}

/// Recomputes supervision masks of every sample under `root` without re-rendering.
pub fn refilter(root: &Path, update: &ThresholdUpdate) -> Result<RefilterReport> {
    let manifest = read_manifest(root)?;
    let lines: Vec<Result<(RefilterLine, SampleMeta)>> = manifest
        .samples
        .par_iter()
        .map(|entry| {
            let mut sample = read_sample(root, &entry.id)?;
            let before = sample.meta.stats.supervised;
            let filter = update.apply(&sample.meta.filter);
            refilter_sample(&mut sample, &filter)?;
            write_sample(root, &sample)?;
            Ok((
                RefilterLine {
                    id: entry.id.clone(),
                    pixels: sample.meta.stats.pixels,
                    before,
                    after: sample.meta.stats.supervised,
                },
                sample.meta,
            ))
        })
        .collect();
    let mut report = RefilterReport::default();
    let mut entries = Vec::new();
    for r in lines {
        let (line, meta) = r?;
        entries.push(Manifest::entry_for(&meta));
        report.samples.push(line);
    }
    write_manifest(root, &Manifest::new(manifest.seed, entries))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEval {
    pub id: String,
    /// `None` when the ground truth has no valid pixel.
    pub flow: Option<FlowMetricsReport>,
    pub zero_shot: Option<ZeroShotLosses>,
    pub depth_ratio: Option<DepthRatioReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rule: OutlierRule,
    pub samples: Vec<SampleEval>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl EvalReport {
    pub fn mean_epe(&self) -> Option<f64> {
        mean(self.samples.iter().filter_map(|s| s.flow.map(|f| f.fl_epe)))
    }

    pub fn mean_fl_all(&self) -> Option<f64> {
        mean(self.samples.iter().filter_map(|s| s.flow.map(|f| f.fl_all)))
    }

    pub fn mean_s_loss(&self) -> Option<f64> {
        mean(self.samples.iter().filter_map(|s| s.zero_shot.map(|z| z.s_loss)))
    }

    pub fn mean_p_loss(&self) -> Option<f64> {
        mean(self.samples.iter().filter_map(|s| s.zero_shot.map(|z| z.p_loss)))
    }

    pub fn mean_mid_error(&self) -> Option<f64> {
        mean(self.samples.iter().filter_map(|s| s.depth_ratio.map(|d| d.mid_error)))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        writeln!(
            f,
            "{:<10} {:>10} {:>10} {:>10} {:>10} {:>12}",
            "sample", "fl_epe", "fl_all", "s_loss", "p_loss", "mid_error"
        )?;
        for s in &self.samples {
            writeln!(
                f,
                "{:<10} {:>10} {:>10} {:>10} {:>10} {:>12}",
                s.id,
                cell(s.flow.map(|m| m.fl_epe)),
                cell(s.flow.map(|m| m.fl_all)),
                cell(s.zero_shot.map(|z| z.s_loss)),
                cell(s.zero_shot.map(|z| z.p_loss)),
                cell(s.depth_ratio.map(|d| d.mid_error)),
            )?;
        }
        write!(
            f,
            "{:<10} {:>10} {:>10} {:>10} {:>10} {:>12}\noutlier rule: {}",
            "mean",
            cell(self.mean_epe()),
            cell(self.mean_fl_all()),
            cell(self.mean_s_loss()),
            cell(self.mean_p_loss()),
            cell(self.mean_mid_error()),
            self.rule
        )
    }
}

fn png_stems(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

fn first_existing(candidates: [PathBuf; 2]) -> Option<PathBuf> {
    candidates.into_iter().find(|p| p.is_file())
}

/// Scores predicted flow PNGs against ground truth.
///
/// `gt` is either a dataset root (ids from its manifest, labels from
/// `flow/<id>.png`; zero-shot losses are added using its frames and
/// occlusion masks) or a plain directory of `<id>.png` flow files.
/// Predictions are looked up as `<pred>/<id>.png` or `<pred>/flow/<id>.png`.
/// When both sides carry `tau/<id>.f32` depth-ratio maps, Mid_error is added.
pub fn eval(pred: &Path, gt: &Path, rule: OutlierRule) -> Result<EvalReport> {
    let dataset = gt.join(dataio::MANIFEST_FILE).is_file();
    let ids = if dataset { read_manifest(gt)?.ids() } else { png_stems(gt)? };
    let mut pred_paths = Vec::new();
    let mut missing = Vec::new();
    for id in &ids {
        match first_existing([pred.join(format!("{id}.png")), pred.join("flow").join(format!("{id}.png"))]) {
            Some(p) => pred_paths.push(p),
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::IdMismatch { missing });
    }
    let samples = ids
        .par_iter()
        .zip(pred_paths.par_iter())
        .map(|(id, pred_path)| -> Result<SampleEval> {
            let p: FlowField<f64> = dataio::read_flow_png(pred_path)?;
            let gt_path = if dataset {
                gt.join("flow").join(format!("{id}.png"))
            } else {
                gt.join(format!("{id}.png"))
            };
            let g: FlowField<f64> = dataio::read_flow_png(&gt_path)?;
            let flow = match flow_epe_all(&p, &g, &g.valid, rule) {
                Ok(r) => Some(r),
                Err(Error::EmptyMask) => None,
                Err(e) => return Err(e),
            };
            let zero_shot = if dataset {
                let i1: ndarray::Array3<f64> = from_rgb8(&dataio::read_rgb_png(&gt.join(format!("images/{id}_1.png")))?);
                let i2: ndarray::Array3<f64> = from_rgb8(&dataio::read_rgb_png(&gt.join(format!("images/{id}_2.png")))?);
                let occluded = dataio::read_mask_png(&gt.join(format!("masks/{id}_occ.png")))?;
                let occ = OcclusionMask {
                    ao_values: Array2::zeros(occluded.dim()),
                    occluded,
                };
                Some(zero_shot_losses(&i1, &i2, &p, &occ)?)
            } else {
                None
            };
            let tau = |root: &Path| root.join("tau").join(format!("{id}.f32"));
            let depth_ratio = if tau(pred).is_file() && tau(gt).is_file() {
                let tp: Array2<f64> = from_f32_map(&dataio::read_float_map(&tau(pred))?);
                let tg: Array2<f64> = from_f32_map(&dataio::read_float_map(&tau(gt))?);
                let mask = tg.mapv(|v| v.is_finite());
                Some(mid_error(&tp, &tg, &mask)?)
            } else {
                None
            };
            Ok(SampleEval {
                id: id.clone(),
                flow,
                zero_shot,
                depth_ratio,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { rule, samples })
}

fn verdict_line(name: &str, v: Verdict, value: f32, th: f64, reason: &str) -> String {
    match v {
        Verdict::Pass => format!("pass: {name} {value} < {th}"),
        Verdict::Fail if value.is_nan() => format!("fail: {name} invalid"),
        Verdict::Fail => format!("fail: {name} {value} ≥ {th}"),
        Verdict::Skipped => format!("skip: {name} ({reason})"),
    }
}

/// Text diagnostics for one frame-1 pixel of a stored sample: its re-marched
/// weight profile, depth quantiles, stored mask values and the verdict of each
/// filter criterion.
pub fn inspect(root: &Path, id: &str, x: i64, y: i64) -> Result<String> {
    if !dataio::meta_path(root, id).is_file() {
        return Err(Error::UnknownSample(id.to_string()));
    }
    let sample = read_sample(root, id)?;
    let meta = &sample.meta;
    let (w, h) = (meta.camera.width, meta.camera.height);
    if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
        return Err(Error::PixelOutOfBounds { x, y, width: w, height: h });
    }
    let (xu, yu) = (x as usize, y as usize);
    let scene_cfg = SceneConfig::load(&root.join(dataio::SCENE_FILE))?;
    let scene = scene_cfg.build_scene::<f64>()?;
    let c = &meta.camera;
    let camera = Camera::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height)?;
    let pose: Pose<f64> = meta.pose_1.to_pose()?;
    let cfg = ray_config_from(&meta.sampling_1)?;
    let (ray, cos) = pixel_ray(&camera, &pose, x as f64, y as f64);
    let profile = march_ray(&scene, &ray, &cfg, pixel_seed(meta.sampling_1.seed, yu * w + xu));

    let mut out = String::new();
    let _ = writeln!(out, "sample {id} pixel ({x}, {y})");
    let _ = writeln!(
        out,
        "ray t in [{}, {}], {} intervals, cos {:.6}",
        cfg.t_near, cfg.t_far, cfg.n_intervals, cos
    );
    out.push_str(&describe_profile(&profile));
    let total = profile.total_weight();
    let fmt_depth = |d: Option<f64>| d.map_or_else(|| "invalid".to_string(), |t| format!("t {t:.6} z {:.6}", t * cos));
    let (lo, hi) = cfg.cdf_levels;
    let _ = writeln!(out, "total weight {total:.6}");
    let _ = writeln!(out, "expected depth {}", fmt_depth(expected_depth(&profile)));
    let _ = writeln!(out, "quantile {lo} {}", fmt_depth(weight_quantile_depth(&profile, lo)));
    let _ = writeln!(out, "quantile 0.5 {}", fmt_depth(weight_quantile_depth(&profile, 0.5)));
    let _ = writeln!(out, "quantile {hi} {}", fmt_depth(weight_quantile_depth(&profile, hi)));
    let recomputed = match (weight_quantile_depth(&profile, lo), weight_quantile_depth(&profile, hi)) {
        (Some(a), Some(b)) => rfc_value(a, b),
        _ => f64::NAN,
    };
    let at = [yu, xu];
    let raw = &sample.raw;
    let (m_conf, m_ssim, m_dc, ao) = (raw.m_conf[at], raw.m_ssim[at], raw.m_dc[at], raw.ao[at]);
    let _ = writeln!(out, "m_conf {m_conf} (profile {recomputed:.6})");
    let _ = writeln!(out, "m_ssim {m_ssim}");
    let _ = writeln!(out, "m_dc {m_dc}");
    let _ = writeln!(out, "ao {ao}");
    let occluded = sample.masks.occ[at];
    let fg = sample.masks.fg_1[at];
    let _ = writeln!(out, "occluded {occluded} foreground {fg}");
    match sample.flow_raw.at(yu, xu) {
        Some((u, v)) => {
            let _ = writeln!(out, "flow ({u}, {v})");
        }
        None => {
            let _ = writeln!(out, "flow invalid");
        }
    }
    let f = &meta.filter;
    let v = judge_pixel(
        sample.flow_raw.valid[at],
        f64::from(m_conf),
        f64::from(m_ssim),
        f64::from(m_dc),
        occluded,
        f,
    );
    let _ = writeln!(out, "{}", if v.flow_valid { "pass: flow valid" } else { "fail: flow invalid" });
    let disabled = "threshold ≥ 1";
    let _ = writeln!(out, "{}", verdict_line("m_conf", v.conf, m_conf, f.th_conf, disabled));
    let ssim_reason = if occluded { "occluded" } else { disabled };
    let _ = writeln!(out, "{}", verdict_line("m_ssim", v.ssim, m_ssim, f.th_ssim, ssim_reason));
    let _ = writeln!(out, "{}", verdict_line("m_dc", v.dc, m_dc, f.th_dc, disabled));
    match v.occlusion {
        Verdict::Fail => {
            let _ = writeln!(out, "fail: occluded");
        }
        Verdict::Pass => {
            let _ = writeln!(out, "pass: not occluded");
        }
        Verdict::Skipped => {}
    }
    let _ = write!(out, "supervised {}", sample.masks.supervision[at]);
    Ok(out)
}
