//! Part-label silhouette rendering from meshes and kinematics.

mod bench;
mod camera;
mod mask;
mod pipeline;
mod raster;

pub use bench::{benchmark_render, median, BenchReport, BenchRow, BENCH_CSV_HEADER};
pub use camera::{project, CameraIntrinsics, DEFAULT_NEAR_CLIP};
pub(crate) use mask::{parse_pnm_header, write_file};
pub use mask::{LabelMask, PALETTE};
pub use pipeline::{render_parts, RenderConfig, SilhouetteRenderer};
pub use raster::rasterize;
