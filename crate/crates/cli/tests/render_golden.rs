//! `render` against a committed golden mask produced by the brute-force
//! reference rasterizer.

#[path = "../../core/tests/support/raster_oracle.rs"]
mod raster_oracle;

use std::path::{Path, PathBuf};
use std::process::Command;

use tipseg::kinematics::{
    format_kinematics_log, load_kinematics_log, nearest_sample, pose_inverse, KinematicsSample,
    Pose7, Quat,
};
use tipseg::mesh::shapes::{cuboid, cylinder};
use tipseg::mesh::{load_mesh, pose_parts, transform_mesh, write_obj, PartId, TriangleMesh};
use tipseg::render::{CameraIntrinsics, LabelMask};

const FRAME_TIME: f64 = 0.3;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn oracle_mask(dir: &Path) -> LabelMask {
    let mesh = load_mesh(&dir.join("tool.obj")).unwrap();
    let stream = load_kinematics_log(&dir.join("tool_kinematics.txt")).unwrap();
    let (intr, near) = CameraIntrinsics::load(&dir.join("intrinsics.txt")).unwrap();
    let s = nearest_sample(&stream, FRAME_TIME).unwrap();
    let world = pose_parts(&mesh, &s.instruments[0]);
    let cam = transform_mesh(&world, &pose_inverse(&s.camera));
    raster_oracle::oracle_rasterize(&[cam], &intr, near)
}

#[test]
fn cli_render_matches_golden_and_golden_matches_oracle() {
    let dir = fixtures();
    let golden = std::fs::read(dir.join("golden_mask.pgm")).unwrap();
    assert_eq!(oracle_mask(&dir).to_pgm(), golden);

    let out = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_tipseg"))
        .args(["-q", "render", "--mesh"])
        .arg(dir.join("tool.obj"))
        .arg("--kinematics")
        .arg(dir.join("tool_kinematics.txt"))
        .arg("--intrinsics")
        .arg(dir.join("intrinsics.txt"))
        .args(["--time", &FRAME_TIME.to_string(), "--out"])
        .arg(out.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(std::fs::read(out.path().join("mask.pgm")).unwrap(), golden);
    let mask = LabelMask::from_pgm(&golden).unwrap();
    for p in PartId::PARTS {
        assert!(mask.count(p) >= 10, "{p:?} barely visible");
    }
}

/// Writes the fixture inputs and the golden mask.
/// `cargo test -p tipseg-cli --test render_golden -- --ignored`
#[test]
#[ignore]
fn regenerate_fixtures() {
    let dir = fixtures();
    std::fs::create_dir_all(&dir).unwrap();
    let mesh = TriangleMesh::merge(&[
        cylinder(3.0, 40.0, 16, 4, PartId::Base),
        transform_mesh(
            &cuboid([7.0, 7.0, 8.0], 2, PartId::Wrist),
            &Pose7::translation([0.0, 0.0, 4.0]),
        ),
        transform_mesh(
            &cuboid([3.0, 7.0, 10.0], 2, PartId::Tip),
            &Pose7::translation([0.0, 0.0, 5.0]),
        ),
    ]);
    std::fs::write(dir.join("tool.obj"), write_obj(&mesh)).unwrap();

    let sample = |t: f64, yaw: f64, bend: f64| {
        let base = Pose7::new(
            [-30.0, 2.0, 40.0],
            Quat::from_axis_angle([0.0, 1.0, 0.0], yaw),
        )
        .unwrap();
        let wrist = base.compose(
            &Pose7::new(
                [0.0, 0.0, 40.0],
                Quat::from_axis_angle([1.0, 0.0, 0.0], bend),
            )
            .unwrap(),
        );
        let tip = wrist.compose(
            &Pose7::new(
                [0.0, 0.0, 8.0],
                Quat::from_axis_angle([0.0, 1.0, 0.0], -0.4),
            )
            .unwrap(),
        );
        KinematicsSample {
            timestamp: t,
            instruments: vec![[base, wrist, tip]],
            camera: Pose7::new(
                [2.0, -1.0, -5.0],
                Quat::from_axis_angle([0.0, 0.0, 1.0], 0.2),
            )
            .unwrap(),
        }
    };
    let log = format_kinematics_log(&[
        sample(0.0, 0.8, 0.1),
        sample(0.2, 0.85, 0.3),
        sample(0.4, 0.9, 0.5),
    ]);
    std::fs::write(dir.join("tool_kinematics.txt"), log).unwrap();

    let intr = CameraIntrinsics::new(70.0, 72.0, 31.5, 30.0, 64, 64).unwrap();
    std::fs::write(
        dir.join("intrinsics.txt"),
        intr.to_key_values(1.0).to_text(),
    )
    .unwrap();
    oracle_mask(&dir)
        .write_pgm(&dir.join("golden_mask.pgm"))
        .unwrap();
}
