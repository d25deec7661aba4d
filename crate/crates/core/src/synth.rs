//! Synthetic scene families: textured backgrounds, an articulated instrument
//! with ground-truth part masks, and kinematics carrying a rigid deviation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::kinematics::{add, cross, dot, norm, scale, sub, KinematicsSample, Pose7, Quat, Vec3};
use crate::mesh::shapes::{instrument, InstrumentGeometry};
use crate::mesh::TriangleMesh;
use crate::model::{rendered_tensor, Sample};
use crate::render::{
    parse_pnm_header, write_file, CameraIntrinsics, LabelMask, RenderConfig, SilhouetteRenderer,
};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SceneFamily {
    A,
    B,
    C,
    D,
    E,
}

/// Appearance knobs of one family. Colors are RGB in 0..=255.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyPreset {
    pub background: [f64; 3],
    /// Amplitude of the smoothed color noise.
    pub texture_amp: f64,
    /// Cell size (pixels at 64×64) of the smoothed noise lattice.
    pub texture_cell: f64,
    pub blob_count: usize,
    pub blob_amp: f64,
    /// Per-pixel uniform noise amplitude.
    pub pixel_noise: f64,
    /// Global brightness multiplier range.
    pub brightness: (f64, f64),
    /// Expected number of specular highlights per scene.
    pub specular_rate: f64,
    /// Expected number of tip-colored distractor blobs per scene.
    pub occluder_density: f64,
    /// Base, wrist and tip colors.
    pub palette: [[f64; 3]; 3],
}

impl SceneFamily {
    pub const ALL: [SceneFamily; 5] = [
        SceneFamily::A,
        SceneFamily::B,
        SceneFamily::C,
        SceneFamily::D,
        SceneFamily::E,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneFamily::A => "A",
            SceneFamily::B => "B",
            SceneFamily::C => "C",
            SceneFamily::D => "D",
            SceneFamily::E => "E",
        }
    }

    pub fn preset(self) -> FamilyPreset {
        match self {
            SceneFamily::A => FamilyPreset {
                background: [180.0, 110.0, 100.0],
                texture_amp: 18.0,
                texture_cell: 8.0,
                blob_count: 6,
                blob_amp: 25.0,
                pixel_noise: 6.0,
                brightness: (0.9, 1.1),
                specular_rate: 1.0,
                occluder_density: 1.0,
                palette: [
                    [40.0, 40.0, 45.0],
                    [120.0, 120.0, 130.0],
                    [205.0, 205.0, 215.0],
                ],
            },
            SceneFamily::B => FamilyPreset {
                background: [205.0, 170.0, 120.0],
                texture_amp: 10.0,
                texture_cell: 16.0,
                blob_count: 12,
                blob_amp: 18.0,
                pixel_noise: 4.0,
                brightness: (0.95, 1.05),
                specular_rate: 0.5,
                occluder_density: 1.5,
                palette: [
                    [30.0, 30.0, 30.0],
                    [90.0, 90.0, 105.0],
                    [215.0, 180.0, 60.0],
                ],
            },
            SceneFamily::C => FamilyPreset {
                background: [105.0, 50.0, 55.0],
                texture_amp: 25.0,
                texture_cell: 6.0,
                blob_count: 4,
                blob_amp: 35.0,
                pixel_noise: 8.0,
                brightness: (0.85, 1.15),
                specular_rate: 2.0,
                occluder_density: 0.5,
                palette: [
                    [65.0, 65.0, 75.0],
                    [160.0, 155.0, 150.0],
                    [95.0, 95.0, 110.0],
                ],
            },
            SceneFamily::D => FamilyPreset {
                background: [220.0, 200.0, 195.0],
                texture_amp: 8.0,
                texture_cell: 12.0,
                blob_count: 8,
                blob_amp: 12.0,
                pixel_noise: 3.0,
                brightness: (0.92, 1.02),
                specular_rate: 0.3,
                occluder_density: 2.0,
                palette: [
                    [20.0, 25.0, 30.0],
                    [200.0, 200.0, 205.0],
                    [175.0, 120.0, 85.0],
                ],
            },
            SceneFamily::E => FamilyPreset {
                background: [80.0, 120.0, 100.0],
                texture_amp: 15.0,
                texture_cell: 10.0,
                blob_count: 10,
                blob_amp: 20.0,
                pixel_noise: 10.0,
                brightness: (0.8, 1.2),
                specular_rate: 1.5,
                occluder_density: 1.2,
                palette: [
                    [55.0, 48.0, 40.0],
                    [110.0, 100.0, 125.0],
                    [235.0, 235.0, 235.0],
                ],
            },
        }
    }
}

impl fmt::Display for SceneFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Dataset(format!("unknown scene family `{s}` (expected A..E)")))
    }
}

/// The first `n` families, A onwards.
pub fn first_families(n: usize) -> Result<Vec<SceneFamily>> {
    if n == 0 || n > SceneFamily::ALL.len() {
        return Err(Error::Config(vec![format!(
            "family count must be in 1..=5, got {n}"
        )]));
    }
    Ok(SceneFamily::ALL[..n].to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub image_size: usize,
    /// Focal length as a multiple of the image size.
    pub focal_ratio: f64,
    pub mesh_detail: usize,
    pub geometry: InstrumentGeometry,
    /// Translation deviation bound as a fraction of the image extent.
    pub max_translation: f64,
    pub max_rotation_deg: f64,
    /// Deviation magnitudes are drawn from `[min_deviation, 1] × bound`.
    pub min_deviation: f64,
    /// Setting used to render the kinematics prior fed to the model.
    pub prior_render: RenderConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 64,
            focal_ratio: 1.25,
            mesh_detail: 2,
            geometry: InstrumentGeometry::default(),
            max_translation: 0.05,
            max_rotation_deg: 5.0,
            min_deviation: 0.3,
            prior_render: RenderConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::centered(self.focal_ratio * self.image_size as f64, self.image_size)
    }

    pub fn mesh(&self) -> TriangleMesh {
        instrument(&self.geometry, self.mesh_detail)
    }

    pub fn without_deviation(mut self) -> Self {
        self.max_translation = 0.0;
        self.max_rotation_deg = 0.0;
        self
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.image_size < 16 {
            p.push(format!(
                "image_size must be at least 16, got {}",
                self.image_size
            ));
        }
        if !(self.focal_ratio > 0.0) {
            p.push(format!(
                "focal_ratio must be positive, got {}",
                self.focal_ratio
            ));
        }
        if self.mesh_detail == 0 {
            p.push("mesh_detail must be at least 1".into());
        }
        if !(0.0..=0.5).contains(&self.max_translation) {
            p.push(format!(
                "max_translation must be in [0, 0.5], got {}",
                self.max_translation
            ));
        }
        if !(0.0..=45.0).contains(&self.max_rotation_deg) {
            p.push(format!(
                "max_rotation_deg must be in [0, 45], got {}",
                self.max_rotation_deg
            ));
        }
        if !(0.0..=1.0).contains(&self.min_deviation) {
            p.push(format!(
                "min_deviation must be in [0, 1], got {}",
                self.min_deviation
            ));
        }
        if self.prior_render.scale == 0 || self.image_size % self.prior_render.scale != 0 {
            p.push(format!(
                "prior scale {} must divide image_size {}",
                self.prior_render.scale, self.image_size
            ));
        }
        if self.prior_render.decimation_rate == 0 {
            p.push("prior decimation rate must be at least 1".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("image_size", self.image_size);
        kv.set("focal_ratio", self.focal_ratio);
        kv.set("mesh_detail", self.mesh_detail);
        kv.set("max_translation", self.max_translation);
        kv.set("max_rotation_deg", self.max_rotation_deg);
        kv.set("min_deviation", self.min_deviation);
        kv.set("prior_scale", self.prior_render.scale);
        kv.set("prior_decimation", self.prior_render.decimation_rate);
        kv
    }

    pub fn apply_key_values(&mut self, kv: &KeyValues, problems: &mut Vec<String>) {
        kv.read_into("image_size", &mut self.image_size, problems);
        kv.read_into("focal_ratio", &mut self.focal_ratio, problems);
        kv.read_into("mesh_detail", &mut self.mesh_detail, problems);
        kv.read_into("max_translation", &mut self.max_translation, problems);
        kv.read_into("max_rotation_deg", &mut self.max_rotation_deg, problems);
        kv.read_into("min_deviation", &mut self.min_deviation, problems);
        kv.read_into("prior_scale", &mut self.prior_render.scale, problems);
        kv.read_into(
            "prior_decimation",
            &mut self.prior_render.decimation_rate,
            problems,
        );
    }
}

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::MaskSize(width, height, data.len(), 3));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, u: usize, v: usize) -> [u8; 3] {
        let i = 3 * (v * self.width + u);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Mean over pixels of the per-pixel channel mean.
    pub fn mean_intensity(&self, keep: impl Fn(usize) -> bool) -> Option<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            if keep(i) {
                sum += px.iter().map(|&c| c as f64).sum::<f64>() / 3.0;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// Planar `3×H×W` tensor scaled to roughly [-0.5, 0.5].
    pub fn to_tensor(&self) -> Tensor {
        let hw = self.width * self.height;
        Tensor::from_fn(&[3, self.height, self.width], |k| {
            self.data[3 * (k % hw) + k / hw] as f64 / 255.0 - 0.5
        })
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let (w, h, maxval, payload) = parse_pnm_header(bytes, b"P6")?;
        if maxval > 255 {
            return Err(Error::Dataset("16-bit PPM not supported".into()));
        }
        if payload.len() < w * h * 3 {
            return Err(Error::Dataset(format!(
                "PPM payload {} < {}",
                payload.len(),
                w * h * 3
            )));
        }
        RgbImage::new(w, h, payload[..w * h * 3].to_vec())
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_ppm())
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_ppm(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneMeta {
    pub seed: u64,
    pub family: SceneFamily,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub image: RgbImage,
    /// Rendered from the true poses at full resolution and full detail.
    pub gt_mask: LabelMask,
    /// Perturbed poses, camera at the origin.
    pub kin: KinematicsSample,
    pub true_poses: [Pose7; 3],
    pub meta: SceneMeta,
}

/// Rotation taking +z onto the unit vector `d`.
fn rotation_from_z(d: Vec3) -> Quat {
    let z = [0.0, 0.0, 1.0];
    let axis = cross(z, d);
    let s = norm(axis);
    if s < 1e-12 {
        return if d[2] > 0.0 {
            Quat::IDENTITY
        } else {
            Quat::from_axis_angle([1.0, 0.0, 0.0], std::f64::consts::PI)
        };
    }
    Quat::from_axis_angle(scale(axis, 1.0 / s), s.atan2(dot(z, d)))
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Samples base, wrist and tip poses in the camera frame: the wrist joint
/// lands in the central half of the image and the shaft recedes from it.
pub fn sample_true_poses(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> [Pose7; 3] {
    let intr = cfg.intrinsics();
    let n = cfg.image_size as f64;
    let u = rng.gen_range(0.25 * n..0.75 * n);
    let v = rng.gen_range(0.25 * n..0.75 * n);
    let z = rng.gen_range(60.0..90.0);
    let wrist_point = [(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z];

    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let theta: f64 = rng.gen_range(10f64.to_radians()..40f64.to_radians());
    let dir = [
        theta.cos() * phi.cos(),
        theta.cos() * phi.sin(),
        theta.sin(),
    ];
    let roll = Quat::from_axis_angle([0.0, 0.0, 1.0], rng.gen_range(0.0..std::f64::consts::TAU));
    let base = Pose7 {
        position: sub(wrist_point, scale(dir, cfg.geometry.shaft_length)),
        orientation: rotation_from_z(dir).mul(&roll),
    };
    let bend = rng.gen_range(-40f64..40.0).to_radians();
    let wrist = base.compose(&Pose7 {
        position: [0.0, 0.0, cfg.geometry.shaft_length],
        orientation: Quat::from_axis_angle([1.0, 0.0, 0.0], bend),
    });
    let yaw = rng.gen_range(-30f64..30.0).to_radians();
    let tip = wrist.compose(&Pose7 {
        position: [0.0, 0.0, cfg.geometry.wrist_length],
        orientation: Quat::from_axis_angle([0.0, 1.0, 0.0], yaw),
    });
    [base, wrist, tip]
}

/// One rigid camera-frame offset applied to every part: a rotation about the
/// true wrist joint followed by an image-plane translation.
pub fn sample_deviation(rng: &mut ChaCha8Rng, cfg: &SynthConfig, true_poses: &[Pose7; 3]) -> Pose7 {
    let intr = cfg.intrinsics();
    let pivot = true_poses[1].position;
    let lo = cfg.min_deviation;
    let t_mag =
        rng.gen_range(lo..=1.0) * cfg.max_translation * cfg.image_size as f64 * pivot[2] / intr.fx;
    let t_dir: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let t = [t_mag * t_dir.cos(), t_mag * t_dir.sin(), 0.0];
    let angle = rng.gen_range(lo..=1.0) * cfg.max_rotation_deg.to_radians();
    let r = Quat::from_axis_angle(unit_vector(rng), angle);
    Pose7 {
        position: sub(add(pivot, t), r.rotate_unchecked(pivot)),
        orientation: r,
    }
}

/// Fixed 960×960 scene for renderer benchmarks: the instrument at the given
/// tessellation detail, crossing the view diagonally.
pub fn benchmark_fixture(detail: usize) -> (TriangleMesh, [Pose7; 3], CameraIntrinsics) {
    let geom = InstrumentGeometry::default();
    let base = Pose7 {
        position: [-40.0, 3.0, 90.0],
        orientation: Quat::from_axis_angle([0.0, 1.0, 0.0], 1.3),
    };
    let wrist = base.compose(&Pose7::translation([0.0, 0.0, geom.shaft_length]));
    let tip = wrist.compose(&Pose7::translation([0.0, 0.0, geom.wrist_length]));
    (
        instrument(&geom, detail),
        [base, wrist, tip],
        CameraIntrinsics::centered(1200.0, 960),
    )
}

/// Smoothed noise: a random lattice bilinearly interpolated to full size.
fn smooth_noise(rng: &mut ChaCha8Rng, size: usize, cell: f64) -> Vec<f64> {
    let cells = ((size as f64 / cell).ceil() as usize).max(1) + 2;
    let lattice: Vec<f64> = (0..cells * cells)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let mut out = vec![0.0; size * size];
    for v in 0..size {
        let gy = (v as f64 + 0.5) / cell;
        let (y0, fy) = (gy.floor() as usize, gy.fract());
        for u in 0..size {
            let gx = (u as f64 + 0.5) / cell;
            let (x0, fx) = (gx.floor() as usize, gx.fract());
            let at = |x: usize, y: usize| lattice[y * cells + x];
            let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
            let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
            out[v * size + u] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

/// Poisson-ish count with the given mean: floor plus a Bernoulli remainder.
fn count_with_mean(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    let whole = mean.floor();
    let extra = rng.gen_bool((mean - whole).clamp(0.0, 1.0));
    let jitter = if whole >= 1.0 {
        rng.gen_range(0..=2) as i64 - 1
    } else {
        0
    };
    (whole as i64 + extra as i64 + jitter).max(0) as usize
}

fn composite(rng: &mut ChaCha8Rng, preset: &FamilyPreset, gt: &LabelMask, size: usize) -> RgbImage {
    let k = size as f64 / 64.0;
    let mut px: Vec<[f64; 3]> = vec![preset.background; size * size];

    let noise: Vec<Vec<f64>> = (0..3)
        .map(|_| smooth_noise(rng, size, preset.texture_cell * k))
        .collect();
    let shared = smooth_noise(rng, size, preset.texture_cell * k * 2.0);
    for (i, p) in px.iter_mut().enumerate() {
        for c in 0..3 {
            p[c] += preset.texture_amp * (0.4 * noise[c][i] + 0.6 * shared[i]);
        }
    }

    let disc =
        |px: &mut Vec<[f64; 3]>, center: [f64; 2], radii: [f64; 2], color: [f64; 3], soft: bool| {
            let reach = radii[0].max(radii[1]) * if soft { 2.0 } else { 1.0 };
            let v0 = (center[1] - reach).floor().max(0.0) as usize;
            let v1 = ((center[1] + reach).ceil().max(0.0) as usize).min(size);
            let u0 = (center[0] - reach).floor().max(0.0) as usize;
            let u1 = ((center[0] + reach).ceil().max(0.0) as usize).min(size);
            for v in v0..v1 {
                for u in u0..u1 {
                    let dx = (u as f64 + 0.5 - center[0]) / radii[0];
                    let dy = (v as f64 + 0.5 - center[1]) / radii[1];
                    let r2 = dx * dx + dy * dy;
                    let p = &mut px[v * size + u];
                    if soft {
                        let w = (-r2).exp();
                        for c in 0..3 {
                            p[c] += w * color[c];
                        }
                    } else if r2 <= 1.0 {
                        *p = color;
                    }
                }
            }
        };

    let n = size as f64;
    for _ in 0..preset.blob_count {
        let center = [rng.gen_range(0.0..n), rng.gen_range(0.0..n)];
        let r = rng.gen_range(3.0..10.0) * k;
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let tint = [
            rng.gen_range(0.6..1.0),
            rng.gen_range(0.3..1.0),
            rng.gen_range(0.3..1.0),
        ];
        let color = tint.map(|t| sign * preset.blob_amp * t);
        disc(
            &mut px,
            center,
            [r, r * rng.gen_range(0.6..1.4)],
            color,
            true,
        );
    }

    // distractors share the tip color and sit behind the instrument
    for _ in 0..count_with_mean(rng, preset.occluder_density) {
        let center = [rng.gen_range(0.0..n), rng.gen_range(0.0..n)];
        let radii = [rng.gen_range(2.0..5.0) * k, rng.gen_range(1.5..4.0) * k];
        let shade = rng.gen_range(0.85..1.1);
        disc(
            &mut px,
            center,
            radii,
            preset.palette[2].map(|c| c * shade),
            false,
        );
    }

    let light = rng.gen_range(0.0..std::f64::consts::TAU);
    let (lx, ly) = (light.cos(), light.sin());
    for v in 0..size {
        for u in 0..size {
            let label = gt.get(u, v);
            if label == 0 {
                continue;
            }
            let along = ((u as f64 - n / 2.0) * lx + (v as f64 - n / 2.0) * ly) / n;
            let shade = 0.85 + 0.3 * along;
            px[v * size + u] = preset.palette[label as usize - 1].map(|c| c * shade);
        }
    }

    for _ in 0..count_with_mean(rng, preset.specular_rate) {
        let center = [rng.gen_range(0.0..n), rng.gen_range(0.0..n)];
        let r = rng.gen_range(0.8..2.0) * k;
        disc(&mut px, center, [r, r], [90.0; 3], true);
    }

    let gain = rng.gen_range(preset.brightness.0..=preset.brightness.1);
    let mut data = Vec::with_capacity(size * size * 3);
    for p in &px {
        for &c in p {
            let jitter = rng.gen_range(-1.0..=1.0) * preset.pixel_noise;
            data.push((c * gain + jitter).round().clamp(0.0, 255.0) as u8);
        }
    }
    RgbImage::new(size, size, data).expect("image dimensions")
}

/// Generator with the full-detail mesh prepared once.
#[derive(Debug, Clone)]
pub struct SceneGenerator {
    cfg: SynthConfig,
    intr: CameraIntrinsics,
    truth: SilhouetteRenderer,
}

impl SceneGenerator {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(SceneGenerator {
            intr: cfg.intrinsics(),
            truth: SilhouetteRenderer::new(&cfg.mesh(), RenderConfig::REFERENCE)?,
            cfg,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intr
    }

    pub fn generate(&self, seed: u64, family: SceneFamily) -> Result<SceneSample> {
        let mut rng = substream(seed, &format!("scene/{family}"));
        let true_poses = sample_true_poses(&mut rng, &self.cfg);
        let gt_mask = self
            .truth
            .render(&true_poses, &Pose7::IDENTITY, &self.intr)?;
        let image = composite(&mut rng, &family.preset(), &gt_mask, self.cfg.image_size);
        let offset = sample_deviation(&mut rng, &self.cfg, &true_poses);
        let kin = KinematicsSample {
            timestamp: 0.0,
            instruments: vec![true_poses.map(|p| offset.compose(&p))],
            camera: Pose7::IDENTITY,
        };
        Ok(SceneSample {
            image,
            gt_mask,
            kin,
            true_poses,
            meta: SceneMeta { seed, family },
        })
    }
}

pub fn gen_scene(seed: u64, family: SceneFamily, cfg: &SynthConfig) -> Result<SceneSample> {
    SceneGenerator::new(*cfg)?.generate(seed, family)
}

/// Renders the kinematics prior of a scene.
#[derive(Debug, Clone)]
pub struct PriorRenderer {
    renderer: SilhouetteRenderer,
    intr: CameraIntrinsics,
}

impl PriorRenderer {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(PriorRenderer {
            renderer: SilhouetteRenderer::new(&cfg.mesh(), cfg.prior_render)?,
            intr: cfg.intrinsics(),
        })
    }

    pub fn render(&self, kin: &KinematicsSample) -> Result<LabelMask> {
        self.renderer
            .render_instruments(&kin.instruments, &kin.camera, &self.intr)
    }
}

pub const MANIFEST_HEADER: &str = "family,seed,image,mask,kinematics";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub family: SceneFamily,
    pub seed: u64,
    /// Paths relative to the dataset root.
    pub image: String,
    pub mask: String,
    pub kinematics: String,
}

impl ManifestEntry {
    pub fn new(family: SceneFamily, seed: u64) -> Self {
        ManifestEntry {
            family,
            seed,
            image: format!("{family}/{seed}.ppm"),
            mask: format!("{family}/{seed}.pgm"),
            kinematics: format!("{family}/{seed}.kin.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn families(&self) -> Vec<SceneFamily> {
        let mut f: Vec<SceneFamily> = self.entries.iter().map(|e| e.family).collect();
        f.sort();
        f.dedup();
        f
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.family, e.seed, e.image, e.mask, e.kinematics
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
            _ => {
                return Err(Error::Dataset(format!(
                    "manifest must start with `{MANIFEST_HEADER}`"
                )))
            }
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(Error::Dataset(format!(
                    "manifest line {}: expected 5 fields",
                    i + 1
                )));
            }
            let seed = f[1].parse().map_err(|_| {
                Error::Dataset(format!("manifest line {}: bad seed `{}`", i + 1, f[1]))
            })?;
            entries.push(ManifestEntry {
                family: f[0].parse()?,
                seed,
                image: f[2].to_string(),
                mask: f[3].to_string(),
                kinematics: f[4].to_string(),
            });
        }
        Ok(Manifest { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SYNTH_FILE: &str = "synth.txt";
pub const INTRINSICS_FILE: &str = "intrinsics.txt";

/// Scene seed of the `index`-th sample of a dataset generated from `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

fn write_scene(out_dir: &Path, entry: &ManifestEntry, scene: &SceneSample) -> Result<()> {
    scene.image.write_ppm(&out_dir.join(&entry.image))?;
    scene.gt_mask.write_pgm(&out_dir.join(&entry.mask))?;
    let log = crate::kinematics::format_kinematics_log(std::slice::from_ref(&scene.kin));
    write_file(&out_dir.join(&entry.kinematics), log.as_bytes())
}

/// Writes every scene listed in `manifest` plus the manifest, generator
/// config and intrinsics.
pub fn write_dataset(manifest: &Manifest, cfg: &SynthConfig, out_dir: &Path) -> Result<()> {
    let generator = SceneGenerator::new(*cfg)?;
    for entry in &manifest.entries {
        let scene = generator.generate(entry.seed, entry.family)?;
        write_scene(out_dir, entry, &scene)?;
    }
    write_file(&out_dir.join(MANIFEST_FILE), manifest.to_csv().as_bytes())?;
    write_file(
        &out_dir.join(SYNTH_FILE),
        cfg.to_key_values().to_text().as_bytes(),
    )?;
    let intr = generator
        .intrinsics()
        .to_key_values(cfg.prior_render.near_clip);
    write_file(&out_dir.join(INTRINSICS_FILE), intr.to_text().as_bytes())
}

pub fn gen_dataset(
    families: &[SceneFamily],
    per_family: usize,
    seed: u64,
    cfg: &SynthConfig,
    out_dir: &Path,
) -> Result<Manifest> {
    let mut entries = Vec::with_capacity(families.len() * per_family);
    for &family in families {
        for i in 0..per_family {
            entries.push(ManifestEntry::new(family, scene_seed(seed, i)));
        }
    }
    let manifest = Manifest { entries };
    write_dataset(&manifest, cfg, out_dir)?;
    Ok(manifest)
}

/// A dataset read back from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub cfg: SynthConfig,
    pub manifest: Manifest,
    pub scenes: Vec<LoadedScene>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScene {
    pub family: SceneFamily,
    pub seed: u64,
    pub image: RgbImage,
    pub gt_mask: LabelMask,
    pub kin: KinematicsSample,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest = Manifest::load(&root.join(MANIFEST_FILE))?;
        let mut cfg = SynthConfig::default();
        let synth_path = root.join(SYNTH_FILE);
        if synth_path.exists() {
            let mut problems = Vec::new();
            cfg.apply_key_values(&KeyValues::load(&synth_path)?, &mut problems);
            if !problems.is_empty() {
                return Err(Error::Config(problems));
            }
            cfg.validate()?;
        }
        let mut scenes = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let kin_path = root.join(&e.kinematics);
            let stream = crate::kinematics::load_kinematics_log(&kin_path)?;
            let kin = stream.samples().first().cloned().ok_or_else(|| {
                Error::Dataset(format!("{}: no kinematics sample", kin_path.display()))
            })?;
            let image = RgbImage::read_ppm(&root.join(&e.image))?;
            let gt_mask = LabelMask::read_pgm(&root.join(&e.mask))?;
            if image.width() != cfg.image_size || gt_mask.width() != cfg.image_size {
                return Err(Error::Dataset(format!(
                    "{}: size does not match image_size {}",
                    e.image, cfg.image_size
                )));
            }
            scenes.push(LoadedScene {
                family: e.family,
                seed: e.seed,
                image,
                gt_mask,
                kin,
            });
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            cfg,
            manifest,
            scenes,
        })
    }

    pub fn families(&self) -> Vec<SceneFamily> {
        self.manifest.families()
    }

    /// Model inputs for every scene, with the kinematics prior rendered
    /// under the dataset's prior setting.
    pub fn samples(&self) -> Result<Vec<(SceneFamily, Sample)>> {
        let prior = PriorRenderer::new(&self.cfg)?;
        self.scenes
            .iter()
            .map(|s| {
                Ok((
                    s.family,
                    Sample {
                        image: s.image.to_tensor(),
                        rendered: Some(rendered_tensor(&prior.render(&s.kin)?)),
                        target: s.gt_mask.clone(),
                    },
                ))
            })
            .collect()
    }
}
