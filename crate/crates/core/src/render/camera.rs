use std::path::Path;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::kinematics::Vec3;

/// Default near-plane distance, millimeters.
pub const DEFAULT_NEAR_CLIP: f64 = 1.0;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        let problems = intr.problems();
        if problems.is_empty() {
            Ok(intr)
        } else {
            Err(Error::Intrinsics(problems.join("; ")))
        }
    }

    fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.fx > 0.0 && self.fx.is_finite()) {
            p.push(format!("fx must be positive, got {}", self.fx));
        }
        if !(self.fy > 0.0 && self.fy.is_finite()) {
            p.push(format!("fy must be positive, got {}", self.fy));
        }
        if !(0.0..self.width as f64).contains(&self.cx) {
            p.push(format!("cx {} outside [0, {})", self.cx, self.width));
        }
        if !(0.0..self.height as f64).contains(&self.cy) {
            p.push(format!("cy {} outside [0, {})", self.cy, self.height));
        }
        p
    }

    /// Square image with the principal point at the center.
    pub fn centered(focal: f64, size: usize) -> Self {
        CameraIntrinsics {
            fx: focal,
            fy: focal,
            cx: size as f64 / 2.0,
            cy: size as f64 / 2.0,
            width: size,
            height: size,
        }
    }

    /// Intrinsics of the same camera sampled `scale` times more coarsely.
    /// Pixel centers stay consistent: low-res pixel `U` covers full-res
    /// pixels `sU..sU+s`.
    pub fn scaled(&self, scale: usize) -> Result<Self> {
        if scale == 0 || self.width % scale != 0 || self.height % scale != 0 {
            return Err(Error::RenderConfig(format!(
                "image {}x{} not divisible by scale {scale}",
                self.width, self.height
            )));
        }
        let s = scale as f64;
        Ok(CameraIntrinsics {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: self.cx / s,
            cy: self.cy / s,
            width: self.width / scale,
            height: self.height / scale,
        })
    }

    /// Reads `fx, fy, cx, cy, width, height` and an optional `near_clip`.
    pub fn from_key_values(kv: &KeyValues) -> Result<(Self, f64)> {
        let mut problems = Vec::new();
        let fx = kv.require("fx", &mut problems);
        let fy = kv.require("fy", &mut problems);
        let cx = kv.require("cx", &mut problems);
        let cy = kv.require("cy", &mut problems);
        let width = kv.require("width", &mut problems);
        let height = kv.require("height", &mut problems);
        let mut near = DEFAULT_NEAR_CLIP;
        kv.read_into("near_clip", &mut near, &mut problems);
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let intr = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        let mut problems = intr.problems();
        if !(near > 0.0) {
            problems.push(format!("near_clip must be positive, got {near}"));
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok((intr, near))
    }

    pub fn load(path: &Path) -> Result<(Self, f64)> {
        Self::from_key_values(&KeyValues::load(path)?)
    }

    pub fn to_key_values(&self, near_clip: f64) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("fx", self.fx);
        kv.set("fy", self.fy);
        kv.set("cx", self.cx);
        kv.set("cy", self.cy);
        kv.set("width", self.width);
        kv.set("height", self.height);
        kv.set("near_clip", near_clip);
        kv
    }

    /// Projection without the near-plane check; callers guarantee `z > 0`.
    #[inline]
    pub fn project_unchecked(&self, p: Vec3) -> [f64; 2] {
        [
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        ]
    }
}

/// Pinhole projection of a camera-frame point. Returns `None` for points at
/// or behind the near plane; the caller is expected to clip.
pub fn project(intr: &CameraIntrinsics, p_cam: Vec3, near_clip: f64) -> Option<[f64; 2]> {
    if p_cam[2] > near_clip {
        Some(intr.project_unchecked(p_cam))
    } else {
        None
    }
}
