use super::camera::{CameraIntrinsics, DEFAULT_NEAR_CLIP};
use super::mask::LabelMask;
use super::raster::rasterize;
use crate::error::{Error, Result};
use crate::kinematics::{pose_inverse, Pose7};
use crate::mesh::{decimate, transform_mesh, PartId, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Render at `H/scale × W/scale`, then upsample.
    pub scale: usize,
    pub decimation_rate: usize,
    pub near_clip: f64,
}

impl Default for RenderConfig {
    /// The lightweight setting: half resolution, one tenth of the triangles.
    fn default() -> Self {
        RenderConfig {
            scale: 2,
            decimation_rate: 10,
            near_clip: DEFAULT_NEAR_CLIP,
        }
    }
}

impl RenderConfig {
    pub const REFERENCE: RenderConfig = RenderConfig {
        scale: 1,
        decimation_rate: 1,
        near_clip: DEFAULT_NEAR_CLIP,
    };

    pub fn new(scale: usize, decimation_rate: usize) -> Self {
        RenderConfig {
            scale,
            decimation_rate,
            near_clip: DEFAULT_NEAR_CLIP,
        }
    }

    pub fn validate(&self, intr: &CameraIntrinsics) -> Result<()> {
        let mut problems = Vec::new();
        if self.scale == 0 {
            problems.push("scale must be at least 1".to_string());
        } else if intr.width % self.scale != 0 || intr.height % self.scale != 0 {
            problems.push(format!(
                "image {}x{} not divisible by scale {}",
                intr.width, intr.height, self.scale
            ));
        }
        if self.decimation_rate == 0 {
            problems.push("decimation rate must be at least 1".to_string());
        }
        if !(self.near_clip > 0.0) {
            problems.push(format!(
                "near_clip must be positive, got {}",
                self.near_clip
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::RenderConfig(problems.join("; ")))
        }
    }

    pub fn label(&self) -> String {
        format!("s{}_r{}", self.scale, self.decimation_rate)
    }
}

/// Rendering module with the decimated mesh prepared once up front, so that
/// per-frame cost is transform + rasterize + upsample only.
#[derive(Debug, Clone)]
pub struct SilhouetteRenderer {
    parts: [TriangleMesh; 3],
    cfg: RenderConfig,
}

impl SilhouetteRenderer {
    pub fn new(mesh: &TriangleMesh, cfg: RenderConfig) -> Result<Self> {
        if cfg.decimation_rate == 0 {
            return Err(Error::ZeroDecimationRate);
        }
        let reduced = decimate(mesh, cfg.decimation_rate)?;
        Ok(SilhouetteRenderer {
            parts: PartId::PARTS.map(|p| reduced.part(p)),
            cfg,
        })
    }

    pub fn config(&self) -> &RenderConfig {
        &self.cfg
    }

    pub fn triangle_count(&self) -> usize {
        self.parts.iter().map(TriangleMesh::triangle_count).sum()
    }

    /// Renders every instrument (base, wrist, tip poses in world frame) seen
    /// from `camera` (camera-to-world pose) into one label mask.
    pub fn render_instruments(
        &self,
        instruments: &[[Pose7; 3]],
        camera: &Pose7,
        intr: &CameraIntrinsics,
    ) -> Result<LabelMask> {
        self.cfg.validate(intr)?;
        let world_to_cam = pose_inverse(camera);
        let low = intr.scaled(self.cfg.scale)?;
        let mut placed = Vec::with_capacity(instruments.len() * 3);
        for poses in instruments {
            for (part, pose) in self.parts.iter().zip(poses) {
                placed.push(transform_mesh(part, &world_to_cam.compose(pose)));
            }
        }
        let mask = rasterize(&placed, &low, self.cfg.near_clip);
        Ok(mask.upsample(self.cfg.scale))
    }

    pub fn render(
        &self,
        poses: &[Pose7; 3],
        camera: &Pose7,
        intr: &CameraIntrinsics,
    ) -> Result<LabelMask> {
        self.render_instruments(std::slice::from_ref(poses), camera, intr)
    }
}

/// One-shot rendering: decimate, pose each part, move into the camera frame,
/// rasterize at reduced resolution and upsample back to full size.
pub fn render_parts(
    mesh: &TriangleMesh,
    instrument_poses: &[Pose7; 3],
    camera: &Pose7,
    intr: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Result<LabelMask> {
    cfg.validate(intr)?;
    SilhouetteRenderer::new(mesh, *cfg)?.render(instrument_poses, camera, intr)
}
