//! On-disk formats and the dataset layout.
//!
//! ```text
//! <root>/
//!   manifest.toml            dataset index, sorted by sample id
//!   scene.toml               scene the samples were rendered from
//!   images/<id>_1.png        8-bit RGB frames (floaters composited)
//!   images/<id>_2.png
//!   flow/<id>.png            training label: valid channel = supervision mask
//!   flow/<id>_raw.png        unfiltered flow and its validity
//!   depth/<id>_1.f32         midpoint depth of each frame
//!   depth/<id>_2.f32
//!   masks/<id>_{conf,ssim,dc,ao}.f32                      raw maps
//!   masks/<id>_{conf,ssim,dc}.png                         255 = criterion passes
//!   masks/<id>_{occ,supervision,fg1,fg2,fgocc}.png        255 = set
//!   meta/<id>.toml           poses, intrinsics, seeds, floaters, thresholds,
//!                            counts and SHA-256 of every file above
//! ```
//!
//! Flow PNGs follow the KITTI convention: 16-bit RGB with
//! `stored = round(64 f) + 32768` in R (u) and G (v) and B = 1 for valid
//! pixels; invalid pixels are `(0, 0, 0)`.
//!
//! Float maps are a 4-byte magic `FFM1`, little-endian `u32` width and
//! height, then `width * height` little-endian `f32` in row-major order.
//! NaN marks invalid entries.

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageFormat, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flowgen::FlowField;
use crate::foreground::FloaterRecord;
use crate::masks::{FilterConfig, FilterCounts};
use crate::real::Real;
use crate::scene::config::CameraConfig;
use crate::scene::Pose;

pub const SAMPLE_SCHEMA: &str = "flowfactory-sample/1";
pub const DATASET_SCHEMA: &str = "flowfactory-dataset/1";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SCENE_FILE: &str = "scene.toml";

const FLOW_SCALE: f64 = 64.0;
const FLOW_OFFSET: f64 = 32768.0;
const FLOAT_MAGIC: &[u8; 4] = b"FFM1";

pub type FlowImage = ImageBuffer<Rgb<u16>, Vec<u16>>;

fn flow_code(f: f64) -> Option<u16> {
    let stored = (f * FLOW_SCALE).round() + FLOW_OFFSET;
    (f.is_finite() && (0.0..=65535.0).contains(&stored)).then_some(stored as u16)
}

/// True when `f` survives the 16-bit flow encoding.
pub fn flow_representable(f: f64) -> bool {
    flow_code(f).is_some()
}

/// Encodes a flow field as a KITTI 16-bit PNG image.
pub fn encode_flow_png<T: Real>(flow: &FlowField<T>) -> Result<FlowImage> {
    let (h, w) = flow.dims();
    let mut img = FlowImage::new(w as u32, h as u32);
    for ((y, x), &ok) in flow.valid.indexed_iter() {
        if !ok {
            continue;
        }
        let code = |f: T| flow_code(f.as_f64()).ok_or(Error::FlowOutOfRange { x, y, value: f.as_f64() });
        let u = code(flow.u[[y, x]])?;
        let v = code(flow.v[[y, x]])?;
        img.put_pixel(x as u32, y as u32, Rgb([u, v, 1]));
    }
    Ok(img)
}

pub fn decode_flow_png<T: Real>(img: &FlowImage) -> FlowField<T> {
    let (w, h) = img.dimensions();
    let mut flow = FlowField::invalid((h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        if p[2] == 0 {
            continue;
        }
        let at = [y as usize, x as usize];
        flow.u[at] = T::lit((f64::from(p[0]) - FLOW_OFFSET) / FLOW_SCALE);
        flow.v[at] = T::lit((f64::from(p[1]) - FLOW_OFFSET) / FLOW_SCALE);
        flow.valid[at] = true;
    }
    flow
}

/// Rounds a flow field to what the PNG codec stores: 1/64 px steps, zeros
/// at invalid pixels. Values outside the codec range become invalid.
pub fn quantize_flow<T: Real>(flow: &FlowField<T>) -> FlowField<T> {
    let mut out = FlowField::invalid(flow.dims());
    for ((y, x), &ok) in flow.valid.indexed_iter() {
        let (u, v) = (flow.u[[y, x]].as_f64(), flow.v[[y, x]].as_f64());
        if ok && flow_representable(u) && flow_representable(v) {
            out.u[[y, x]] = T::lit((u * FLOW_SCALE).round() / FLOW_SCALE);
            out.v[[y, x]] = T::lit((v * FLOW_SCALE).round() / FLOW_SCALE);
            out.valid[[y, x]] = true;
        }
    }
    out
}

fn png_bytes<P, C>(img: &ImageBuffer<P, C>) -> Vec<u8>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("in-memory PNG encoding");
    buf.into_inner()
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<image::DynamicImage> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })
}

fn flow_from_bytes<T: Real>(path: &Path, bytes: &[u8]) -> Result<FlowField<T>> {
    match decode_png(path, bytes)? {
        image::DynamicImage::ImageRgb16(img) => Ok(decode_flow_png(&img)),
        other => Err(Error::format(
            path,
            format!("expected 16-bit RGB flow PNG, found {:?}", other.color()),
        )),
    }
}

pub fn write_flow_png<T: Real>(path: &Path, flow: &FlowField<T>) -> Result<()> {
    write_bytes(path, &png_bytes(&encode_flow_png(flow)?))
}

pub fn read_flow_png<T: Real>(path: &Path) -> Result<FlowField<T>> {
    flow_from_bytes(path, &read_bytes(path)?)
}

fn float_map_bytes(map: &Array2<f32>) -> Vec<u8> {
    let (h, w) = map.dim();
    let mut out = Vec::with_capacity(12 + 4 * h * w);
    out.extend_from_slice(FLOAT_MAGIC);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for v in map.iter() {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    out
}

fn float_map_from_bytes(path: &Path, bytes: &[u8]) -> Result<Array2<f32>> {
    if bytes.len() < 12 || &bytes[..4] != FLOAT_MAGIC {
        return Err(Error::format(path, "missing float map header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let (w, h) = (word(4) as usize, word(8) as usize);
    if bytes.len() != 12 + 4 * w * h {
        return Err(Error::format(path, format!("{w}x{h} header but {} data bytes", bytes.len() - 12)));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    Ok(Array2::from_shape_vec((h, w), data).expect("length checked"))
}

pub fn write_float_map(path: &Path, map: &Array2<f32>) -> Result<()> {
    write_bytes(path, &float_map_bytes(map))
}

pub fn read_float_map(path: &Path) -> Result<Array2<f32>> {
    float_map_from_bytes(path, &read_bytes(path)?)
}

/// Narrows a map to the stored precision.
pub fn to_f32_map<T: Real>(map: &Array2<T>) -> Array2<f32> {
    map.mapv(|v| v.as_f64() as f32)
}

pub fn from_f32_map<T: Real>(map: &Array2<f32>) -> Array2<T> {
    map.mapv(|v| T::lit(f64::from(v)))
}

fn mask_image(mask: &Array2<bool>) -> ImageBuffer<Luma<u8>, Vec<u8>> {
    let (h, w) = mask.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask[[y as usize, x as usize]] { 255 } else { 0 }])
    })
}

fn mask_from_bytes(path: &Path, bytes: &[u8]) -> Result<Array2<bool>> {
    let image::DynamicImage::ImageLuma8(img) = decode_png(path, bytes)? else {
        return Err(Error::format(path, "expected 8-bit grayscale mask"));
    };
    let (w, h) = img.dimensions();
    let mut mask = Array2::from_elem((h as usize, w as usize), false);
    for (x, y, p) in img.enumerate_pixels() {
        mask[[y as usize, x as usize]] = match p[0] {
            0 => false,
            255 => true,
            v => return Err(Error::format(path, format!("mask value {v} at ({x}, {y})"))),
        };
    }
    Ok(mask)
}

pub fn write_mask_png(path: &Path, mask: &Array2<bool>) -> Result<()> {
    write_bytes(path, &png_bytes(&mask_image(mask)))
}

pub fn read_mask_png(path: &Path) -> Result<Array2<bool>> {
    mask_from_bytes(path, &read_bytes(path)?)
}

/// `(H, W, 3)` values in `[0, 1]` to 8-bit RGB.
pub fn to_rgb8<T: Real>(img: &Array3<T>) -> RgbImage {
    let (h, w, _) = img.dim();
    let q = |v: T| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([q(img[[y, x, 0]]), q(img[[y, x, 1]]), q(img[[y, x, 2]])])
    })
}

pub fn from_rgb8<T: Real>(img: &RgbImage) -> Array3<T> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        T::lit(f64::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0)
    })
}

fn rgb_from_bytes(path: &Path, bytes: &[u8]) -> Result<RgbImage> {
    match decode_png(path, bytes)? {
        image::DynamicImage::ImageRgb8(img) => Ok(img),
        other => Err(Error::format(path, format!("expected 8-bit RGB image, found {:?}", other.color()))),
    }
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    rgb_from_bytes(path, &read_bytes(path)?)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_owned())
        } else {
            Error::io(path, e)
        }
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Seeds are written as 16-digit hex strings: TOML integers are signed 64-bit.
pub mod hex_seed {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    /// Row-major camera-to-world rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose<T: Real>(p: &Pose<T>) -> Self {
        let r = p.rotation();
        let t = p.translation();
        Self {
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)].as_f64())),
            translation: [t.x.as_f64(), t.y.as_f64(), t.z.as_f64()],
        }
    }

    pub fn to_pose<T: Real>(&self) -> Result<Pose<T>> {
        let r = nalgebra::Matrix3::from_fn(|i, j| T::lit(self.rotation[i][j]));
        let t = nalgebra::Vector3::new(
            T::lit(self.translation[0]),
            T::lit(self.translation[1]),
            T::lit(self.translation[2]),
        );
        Pose::new(r, t)
    }
}

/// Ray sampling used for one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingRecord {
    pub t_near: f64,
    pub t_far: f64,
    pub n_intervals: usize,
    pub stratified: bool,
    pub cdf_levels: [f64; 2],
    #[serde(with = "hex_seed")]
    pub seed: u64,
}

/// Everything needed to reproduce or audit one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub id: String,
    pub pair_index: usize,
    #[serde(with = "hex_seed")]
    pub seed: u64,
    #[serde(with = "hex_seed")]
    pub ao_seed: u64,
    #[serde(with = "hex_seed")]
    pub floater_seed: u64,
    pub foreground_pixels: usize,
    pub camera: CameraConfig,
    pub pose_1: PoseRecord,
    pub pose_2: PoseRecord,
    pub sampling_1: SamplingRecord,
    pub sampling_2: SamplingRecord,
    pub filter: FilterConfig,
    pub stats: FilterCounts,
    #[serde(default)]
    pub floaters: Vec<FloaterRecord>,
}

/// Raw credibility maps at stored precision. NaN = invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMaps {
    pub m_conf: Array2<f32>,
    pub m_ssim: Array2<f32>,
    pub m_dc: Array2<f32>,
    pub ao: Array2<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMasks {
    pub conf: Array2<bool>,
    pub ssim: Array2<bool>,
    pub dc: Array2<bool>,
    pub occ: Array2<bool>,
    pub supervision: Array2<bool>,
    pub fg_1: Array2<bool>,
    pub fg_2: Array2<bool>,
    pub fg_occ: Array2<bool>,
}

/// One image pair with its labels, masks and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub id: String,
    pub image_1: RgbImage,
    pub image_2: RgbImage,
    /// Flow restricted to supervised pixels.
    pub flow_gt: FlowField<f64>,
    pub flow_raw: FlowField<f64>,
    pub depth_1: Array2<f32>,
    pub depth_2: Array2<f32>,
    pub raw: RawMaps,
    pub masks: BinaryMasks,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRecord {
    path: String,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaFile {
    schema: String,
    sample: SampleMeta,
    files: BTreeMap<String, FileRecord>,
}

pub fn meta_path(root: &Path, id: &str) -> PathBuf {
    root.join("meta").join(format!("{id}.toml"))
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("sample id {id:?} must be non-empty [A-Za-z0-9_-]")))
    }
}

fn sample_files(s: &DatasetSample) -> Result<Vec<(&'static str, String, Vec<u8>)>> {
    let id = &s.id;
    let mut files = vec![
        ("image_1", format!("images/{id}_1.png"), png_bytes(&s.image_1)),
        ("image_2", format!("images/{id}_2.png"), png_bytes(&s.image_2)),
        ("flow_gt", format!("flow/{id}.png"), png_bytes(&encode_flow_png(&s.flow_gt)?)),
        ("flow_raw", format!("flow/{id}_raw.png"), png_bytes(&encode_flow_png(&s.flow_raw)?)),
        ("depth_1", format!("depth/{id}_1.f32"), float_map_bytes(&s.depth_1)),
        ("depth_2", format!("depth/{id}_2.f32"), float_map_bytes(&s.depth_2)),
    ];
    for (key, map) in [
        ("conf", &s.raw.m_conf),
        ("ssim", &s.raw.m_ssim),
        ("dc", &s.raw.m_dc),
        ("ao", &s.raw.ao),
    ] {
        files.push((raw_key(key), format!("masks/{id}_{key}.f32"), float_map_bytes(map)));
    }
    let m = &s.masks;
    for (key, mask) in [
        ("conf", &m.conf),
        ("ssim", &m.ssim),
        ("dc", &m.dc),
        ("occ", &m.occ),
        ("supervision", &m.supervision),
        ("fg1", &m.fg_1),
        ("fg2", &m.fg_2),
        ("fgocc", &m.fg_occ),
    ] {
        files.push((mask_key(key), format!("masks/{id}_{key}.png"), png_bytes(&mask_image(mask))));
    }
    Ok(files)
}

fn raw_key(k: &str) -> &'static str {
    match k {
        "conf" => "raw_conf",
        "ssim" => "raw_ssim",
        "dc" => "raw_dc",
        _ => "raw_ao",
    }
}

fn mask_key(k: &str) -> &'static str {
    match k {
        "conf" => "mask_conf",
        "ssim" => "mask_ssim",
        "dc" => "mask_dc",
        "occ" => "mask_occ",
        "supervision" => "mask_supervision",
        "fg1" => "mask_fg1",
        "fg2" => "mask_fg2",
        _ => "mask_fgocc",
    }
}

/// Writes every file of `sample` under `root` plus its meta record.
pub fn write_sample(root: &Path, sample: &DatasetSample) -> Result<()> {
    check_id(&sample.id)?;
    if sample.meta.id != sample.id {
        return Err(Error::Config(format!(
            "meta id {} differs from sample id {}",
            sample.meta.id, sample.id
        )));
    }
    let mut records = BTreeMap::new();
    for (key, rel, bytes) in sample_files(sample)? {
        write_bytes(&root.join(&rel), &bytes)?;
        records.insert(
            key.to_string(),
            FileRecord {
                path: rel,
                sha256: sha256_hex(&bytes),
            },
        );
    }
    let meta = MetaFile {
        schema: SAMPLE_SCHEMA.into(),
        sample: sample.meta.clone(),
        files: records,
    };
    let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    write_bytes(&meta_path(root, &sample.id), text.as_bytes())
}

/// Reads the meta record of `id` without loading its files.
pub fn read_meta(root: &Path, id: &str) -> Result<SampleMeta> {
    Ok(read_meta_file(root, id)?.sample)
}

fn read_meta_file(root: &Path, id: &str) -> Result<MetaFile> {
    check_id(id)?;
    let path = meta_path(root, id);
    let bytes = read_bytes(&path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(&path, "meta record is not UTF-8"))?;
    #[derive(Deserialize)]
    struct Probe {
        schema: String,
    }
    let probe: Probe = toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if probe.schema != SAMPLE_SCHEMA {
        return Err(Error::Schema {
            expected: SAMPLE_SCHEMA.into(),
            found: probe.schema,
        });
    }
    toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

/// Reads and verifies sample `id`: every listed file must exist and match its checksum.
pub fn read_sample(root: &Path, id: &str) -> Result<DatasetSample> {
    let meta = read_meta_file(root, id)?;
    let load = |key: &str| -> Result<(PathBuf, Vec<u8>)> {
        let rec = meta
            .files
            .get(key)
            .ok_or_else(|| Error::format(meta_path(root, id), format!("no file entry {key:?}")))?;
        let path = root.join(&rec.path);
        let bytes = read_bytes(&path)?;
        if sha256_hex(&bytes) != rec.sha256 {
            return Err(Error::Checksum(path));
        }
        Ok((path, bytes))
    };
    let rgb = |key: &str| load(key).and_then(|(p, b)| rgb_from_bytes(&p, &b));
    let flow = |key: &str| load(key).and_then(|(p, b)| flow_from_bytes::<f64>(&p, &b));
    let float = |key: &str| load(key).and_then(|(p, b)| float_map_from_bytes(&p, &b));
    let mask = |key: &str| load(key).and_then(|(p, b)| mask_from_bytes(&p, &b));
    Ok(DatasetSample {
        id: id.to_string(),
        image_1: rgb("image_1")?,
        image_2: rgb("image_2")?,
        flow_gt: flow("flow_gt")?,
        flow_raw: flow("flow_raw")?,
        depth_1: float("depth_1")?,
        depth_2: float("depth_2")?,
        raw: RawMaps {
            m_conf: float("raw_conf")?,
            m_ssim: float("raw_ssim")?,
            m_dc: float("raw_dc")?,
            ao: float("raw_ao")?,
        },
        masks: BinaryMasks {
            conf: mask("mask_conf")?,
            ssim: mask("mask_ssim")?,
            dc: mask("mask_dc")?,
            occ: mask("mask_occ")?,
            supervision: mask("mask_supervision")?,
            fg_1: mask("mask_fg1")?,
            fg_2: mask("mask_fg2")?,
            fg_occ: mask("mask_fgocc")?,
        },
        meta: meta.sample,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub meta: String,
    pub pixels: usize,
    pub valid: usize,
    pub supervised: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema: String,
    #[serde(with = "hex_seed")]
    pub seed: u64,
    pub scene: String,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(seed: u64, mut samples: Vec<ManifestEntry>) -> Self {
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            schema: DATASET_SCHEMA.into(),
            seed,
            scene: SCENE_FILE.into(),
            samples,
        }
    }

    pub fn entry_for(meta: &SampleMeta) -> ManifestEntry {
        ManifestEntry {
            id: meta.id.clone(),
            meta: format!("meta/{}.toml", meta.id),
            pixels: meta.stats.pixels,
            valid: meta.stats.valid,
            supervised: meta.stats.supervised,
        }
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    let text = toml::to_string(manifest).map_err(|e| Error::Config(e.to_string()))?;
    write_bytes(&root.join(MANIFEST_FILE), text.as_bytes())
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let bytes = read_bytes(&path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(&path, "manifest is not UTF-8"))?;
    let value: toml::Table = toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let found = value.get("schema").and_then(|s| s.as_str()).unwrap_or("").to_string();
    if found != DATASET_SCHEMA {
        return Err(Error::Schema {
            expected: DATASET_SCHEMA.into(),
            found,
        });
    }
    toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flow_code_examples() {
        let mut flow = FlowField::<f64>::zeros((1, 3));
        flow.u[[0, 1]] = 1.0;
        flow.v[[0, 1]] = 2.0;
        flow.valid[[0, 2]] = false;
        let img = encode_flow_png(&flow).unwrap();
        assert_eq!(img.get_pixel(0, 0).0, [32768, 32768, 1]);
        assert_eq!(img.get_pixel(1, 0).0, [32832, 32896, 1]);
        assert_eq!(img.get_pixel(2, 0).0, [0, 0, 0]);
        assert_eq!(decode_flow_png::<f64>(&img), flow);
    }

    #[test]
    fn all_zero_image_is_invalid() {
        let flow: FlowField<f64> = decode_flow_png(&FlowImage::new(4, 3));
        assert!(flow.valid.iter().all(|&v| !v));
    }

    #[test]
    fn out_of_range_flow_names_pixel() {
        let mut flow = FlowField::<f64>::zeros((2, 2));
        flow.v[[1, 0]] = 600.0;
        match encode_flow_png(&flow) {
            Err(Error::FlowOutOfRange { x: 0, y: 1, value }) => assert_eq!(value, 600.0),
            other => panic!("{other:?}"),
        }
        let mut nan = FlowField::<f64>::zeros((1, 1));
        nan.u[[0, 0]] = f64::NAN;
        assert!(encode_flow_png(&nan).is_err());
        nan.valid[[0, 0]] = false;
        assert!(encode_flow_png(&nan).is_ok());
    }

    #[test]
    fn flow_png_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        let mut flow = FlowField::<f64>::zeros((5, 7));
        flow.u[[2, 3]] = -511.9;
        flow.v[[4, 6]] = 511.9;
        write_flow_png(&path, &flow).unwrap();
        let back: FlowField<f64> = read_flow_png(&path).unwrap();
        assert!((back.u[[2, 3]] + 511.9).abs() <= 1.0 / 128.0);
        assert!((back.v[[4, 6]] - 511.9).abs() <= 1.0 / 128.0);
        write_mask_png(&path, &Array2::from_elem((2, 2), true)).unwrap();
        assert!(matches!(read_flow_png::<f64>(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn float_map_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.f32");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut map = Array2::from_shape_fn((9, 13), |_| f32::from_bits(rng.random()));
        map[[0, 0]] = f32::NAN;
        map[[0, 1]] = -0.0;
        write_float_map(&path, &map).unwrap();
        let back = read_float_map(&path).unwrap();
        assert!(map.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        fs::write(&path, b"FFM1\x02\0\0\0\x02\0\0\0").unwrap();
        assert!(matches!(read_float_map(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn mask_and_rgb_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mask = Array2::from_shape_fn((6, 5), |(y, x)| (x * y) % 3 == 1);
        let path = dir.path().join("m.png");
        write_mask_png(&path, &mask).unwrap();
        assert_eq!(read_mask_png(&path).unwrap(), mask);
        let img = Array3::<f64>::from_shape_fn((4, 6, 3), |(y, x, c)| (x + y + c) as f64 / 12.0);
        let rgb = to_rgb8(&img);
        let back: Array3<f64> = from_rgb8(&rgb);
        assert!(img.iter().zip(back.iter()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12));
    }

    pub(crate) fn synthetic_sample(id: &str, seed: u64) -> DatasetSample {
        let (h, w) = (12, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flow = FlowField::<f64>::zeros((h, w));
        for v in flow.u.iter_mut().chain(flow.v.iter_mut()) {
            *v = rng.random_range(-20.0..20.0);
        }
        flow.valid.mapv_inplace(|_| rng.random_bool(0.8));
        let flow_raw = quantize_flow(&flow);
        let mut flow_gt = flow_raw.clone();
        flow_gt.valid.mapv_inplace(|v| v && rng.random_bool(0.5));
        let flow_gt = quantize_flow(&flow_gt);
        let mut map = |nan: bool| {
            Array2::from_shape_fn((h, w), |_| {
                if nan && rng.random_bool(0.1) {
                    f32::NAN
                } else {
                    rng.random::<f32>()
                }
            })
        };
        let raw = RawMaps {
            m_conf: map(true),
            m_ssim: map(true),
            m_dc: map(true),
            ao: map(false),
        };
        let (depth_1, depth_2) = (map(true), map(true));
        let mut bits = || Array2::from_shape_fn((h, w), |_| rng.random_bool(0.5));
        let masks = BinaryMasks {
            conf: bits(),
            ssim: bits(),
            dc: bits(),
            occ: bits(),
            supervision: flow_gt.valid.clone(),
            fg_1: bits(),
            fg_2: bits(),
            fg_occ: bits(),
        };
        let img = |rng: &mut ChaCha8Rng| RgbImage::from_fn(w as u32, h as u32, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
        let image_1 = img(&mut rng);
        let image_2 = img(&mut rng);
        let sampling = SamplingRecord {
            t_near: 0.5,
            t_far: 20.0,
            n_intervals: 256,
            stratified: true,
            cdf_levels: [0.1, 0.9],
            seed: u64::MAX - seed,
        };
        let pose = Pose::<f64>::look_at(nalgebra::Vector3::new(3.0, 1.0, -7.0), nalgebra::Vector3::zeros()).unwrap();
        let meta = SampleMeta {
            id: id.into(),
            pair_index: 4,
            seed: u64::MAX,
            ao_seed: 17,
            floater_seed: 1 << 63,
            foreground_pixels: 3,
            camera: CameraConfig {
                fx: 20.0,
                fy: 20.0,
                cx: 8.0,
                cy: 5.5,
                width: w,
                height: h,
            },
            pose_1: PoseRecord::from_pose(&pose),
            pose_2: PoseRecord::from_pose(&Pose::<f64>::identity()),
            sampling_1: sampling,
            sampling_2: SamplingRecord {
                t_near: 1.0 / 3.0,
                ..sampling
            },
            filter: FilterConfig::default(),
            stats: FilterCounts {
                pixels: h * w,
                valid: 100,
                ..Default::default()
            },
            floaters: crate::foreground::sample_floaters::<f64>(2, seed, (h, w))
                .iter()
                .map(|f| f.to_record())
                .collect(),
        };
        DatasetSample {
            id: id.into(),
            image_1,
            image_2,
            flow_gt,
            flow_raw,
            depth_1,
            depth_2,
            raw,
            masks,
            meta,
        }
    }

    fn same_bits(a: &Array2<f32>, b: &Array2<f32>) -> bool {
        a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    #[test]
    fn sample_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = synthetic_sample("s0003", 5);
        write_sample(dir.path(), &s).unwrap();
        let back = read_sample(dir.path(), "s0003").unwrap();
        // NaN != NaN, so float maps are compared bitwise.
        assert!(same_bits(&s.raw.m_conf, &back.raw.m_conf) && same_bits(&s.depth_1, &back.depth_1));
        assert_eq!(back.image_1, s.image_1);
        assert_eq!(back.flow_gt, s.flow_gt);
        assert_eq!(back.flow_raw, s.flow_raw);
        assert_eq!(back.masks, s.masks);
        assert_eq!(back.meta, s.meta);
        let pose: Pose<f64> = back.meta.pose_1.to_pose().unwrap();
        assert_eq!(PoseRecord::from_pose(&pose), s.meta.pose_1);
    }

    #[test]
    fn missing_and_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        write_sample(dir.path(), &synthetic_sample("a", 1)).unwrap();
        let mask = dir.path().join("masks/a_dc.png");
        fs::remove_file(&mask).unwrap();
        match read_sample(dir.path(), "a") {
            Err(Error::MissingFile(p)) => assert_eq!(p, mask),
            other => panic!("{other:?}"),
        }
        write_sample(dir.path(), &synthetic_sample("a", 1)).unwrap();
        let depth = dir.path().join("depth/a_2.f32");
        let mut bytes = fs::read(&depth).unwrap();
        bytes[20] ^= 1;
        fs::write(&depth, bytes).unwrap();
        assert!(matches!(read_sample(dir.path(), "a"), Err(Error::Checksum(p)) if p == depth));
        assert!(matches!(read_sample(dir.path(), "nope"), Err(Error::MissingFile(_))));
        assert!(read_sample(dir.path(), "../a").is_err());
    }

    #[test]
    fn schema_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        write_sample(dir.path(), &synthetic_sample("a", 1)).unwrap();
        let path = meta_path(dir.path(), "a");
        let text = fs::read_to_string(&path).unwrap().replace(SAMPLE_SCHEMA, "flowfactory-sample/0");
        fs::write(&path, text).unwrap();
        assert!(matches!(read_sample(dir.path(), "a"), Err(Error::Schema { .. })));

        let m = Manifest::new(9, vec![]);
        write_manifest(dir.path(), &m).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        let mp = dir.path().join(MANIFEST_FILE);
        fs::write(&mp, fs::read_to_string(&mp).unwrap().replace(DATASET_SCHEMA, "x")).unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::Schema { .. })));
    }

    #[test]
    fn manifest_is_sorted_and_deterministic() {
        let metas: Vec<SampleMeta> = ["c", "a", "b"].iter().map(|id| synthetic_sample(id, 2).meta).collect();
        let entries: Vec<ManifestEntry> = metas.iter().map(Manifest::entry_for).collect();
        let m = Manifest::new(1, entries.clone());
        assert_eq!(m.ids(), ["a", "b", "c"]);
        let mut rev = entries;
        rev.reverse();
        assert_eq!(toml::to_string(&m).unwrap(), toml::to_string(&Manifest::new(1, rev)).unwrap());
    }

    fn flow_strategy() -> impl Strategy<Value = (usize, usize, Vec<(f64, f64, bool)>)> {
        (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
            let value = prop_oneof![
                8 => -511.9..511.9f64,
                1 => Just(511.9),
                1 => Just(-511.9),
            ];
            (
                Just(h),
                Just(w),
                prop::collection::vec((value.clone(), value, any::<bool>()), h * w),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn flow_codec_roundtrip((h, w, vals) in flow_strategy()) {
            let mut flow = FlowField::<f64>::invalid((h, w));
            for (i, &(u, v, ok)) in vals.iter().enumerate() {
                let at = [i / w, i % w];
                flow.u[at] = u;
                flow.v[at] = v;
                flow.valid[at] = ok;
            }
            let back: FlowField<f64> = decode_flow_png(&encode_flow_png(&flow).unwrap());
            prop_assert_eq!(&back.valid, &flow.valid);
            for ((y, x), &ok) in flow.valid.indexed_iter() {
                if ok {
                    prop_assert!((back.u[[y, x]] - flow.u[[y, x]]).abs() <= 0.5 / 64.0);
                    prop_assert!((back.v[[y, x]] - flow.v[[y, x]]).abs() <= 0.5 / 64.0);
                }
            }
            let q = quantize_flow(&flow);
            prop_assert_eq!(decode_flow_png::<f64>(&encode_flow_png(&q).unwrap()), q);
        }
    }
}
