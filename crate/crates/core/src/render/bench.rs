use std::fmt::Write as _;
use std::time::Instant;

use super::camera::CameraIntrinsics;
use super::mask::LabelMask;
use super::pipeline::{RenderConfig, SilhouetteRenderer};
use crate::error::{Error, Result};
use crate::kinematics::Pose7;
use crate::mesh::TriangleMesh;
use crate::metrics::part_ious;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub config: RenderConfig,
    pub triangles: usize,
    pub median_ms: f64,
    pub fps: f64,
    /// Reference median time divided by this config's median time.
    pub speedup: f64,
    /// IoU of base, wrist and tip against the reference mask.
    pub iou: [f64; 3],
    /// All repeats produced the same mask.
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub repeats: usize,
    pub reference: BenchRow,
    pub rows: Vec<BenchRow>,
}

pub const BENCH_CSV_HEADER: &str = "config,median_ms,fps,iou_base,iou_wrist,iou_tip";

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(BENCH_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.4},{:.3},{:.6},{:.6},{:.6}",
                r.config.label(),
                r.median_ms,
                r.fps,
                r.iou[0],
                r.iou[1],
                r.iou[2]
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "render benchmark {}x{}, {} repeats, reference {} ({} triangles, {:.3} ms)\n",
            self.width,
            self.height,
            self.repeats,
            self.reference.config.label(),
            self.reference.triangles,
            self.reference.median_ms
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} tris {:>7}  median {:>9.3} ms  {:>8.1} fps  speedup {:>5.2}x  iou base {:.4} wrist {:.4} tip {:.4}{}",
                r.config.label(),
                r.triangles,
                r.median_ms,
                r.fps,
                r.speedup,
                r.iou[0],
                r.iou[1],
                r.iou[2],
                if r.deterministic { "" } else { "  NONDETERMINISTIC" }
            );
        }
        s
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn time_config(
    mesh: &TriangleMesh,
    instruments: &[[Pose7; 3]],
    camera: &Pose7,
    intr: &CameraIntrinsics,
    cfg: RenderConfig,
    repeats: usize,
) -> Result<(LabelMask, f64, usize, bool)> {
    cfg.validate(intr)?;
    let renderer = SilhouetteRenderer::new(mesh, cfg)?;
    // warm-up frame, not timed
    let first = renderer.render_instruments(instruments, camera, intr)?;
    let mut times = Vec::with_capacity(repeats);
    let mut deterministic = true;
    for _ in 0..repeats {
        let t0 = Instant::now();
        let m = renderer.render_instruments(instruments, camera, intr)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        deterministic &= m == first;
    }
    Ok((
        first,
        median(&mut times),
        renderer.triangle_count(),
        deterministic,
    ))
}

/// Times each config per frame (decimation is prepared once beforehand) and
/// compares its mask with the full-resolution, undecimated reference.
pub fn benchmark_render(
    mesh: &TriangleMesh,
    instruments: &[[Pose7; 3]],
    camera: &Pose7,
    intr: &CameraIntrinsics,
    configs: &[RenderConfig],
    repeats: usize,
) -> Result<BenchReport> {
    if repeats < 3 {
        return Err(Error::RenderConfig(format!(
            "repeats must be at least 3, got {repeats}"
        )));
    }
    let reference_cfg = RenderConfig {
        near_clip: configs
            .first()
            .map_or(RenderConfig::REFERENCE.near_clip, |c| c.near_clip),
        ..RenderConfig::REFERENCE
    };
    let (ref_mask, ref_ms, ref_tris, ref_det) =
        time_config(mesh, instruments, camera, intr, reference_cfg, repeats)?;
    let reference = BenchRow {
        config: reference_cfg,
        triangles: ref_tris,
        median_ms: ref_ms,
        fps: 1e3 / ref_ms,
        speedup: 1.0,
        iou: [1.0; 3],
        deterministic: ref_det,
    };
    let mut rows = Vec::with_capacity(configs.len());
    for &cfg in configs {
        if cfg == reference_cfg {
            rows.push(reference.clone());
            continue;
        }
        let (mask, ms, tris, det) = time_config(mesh, instruments, camera, intr, cfg, repeats)?;
        rows.push(BenchRow {
            config: cfg,
            triangles: tris,
            median_ms: ms,
            fps: 1e3 / ms,
            speedup: ref_ms / ms,
            iou: part_ious(&mask, &ref_mask)?,
            deterministic: det,
        });
    }
    Ok(BenchReport {
        width: intr.width,
        height: intr.height,
        repeats,
        reference,
        rows,
    })
}
