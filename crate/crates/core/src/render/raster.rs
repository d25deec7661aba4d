//! Z-buffered label rasterizer.
//!
//! Conventions:
//! - pixel `(u, v)` is sampled at `(u + 0.5, v + 0.5)`;
//! - camera `z` grows away from the camera; the nearer surface wins and
//!   depth is compared through perspective-correct interpolation of `1/z`;
//! - no backface culling; triangles are reoriented to positive screen area
//!   `E(p0, p1, p2) > 0` with `E(a, b, p) = (b.x-a.x)(p.y-a.y) - (b.y-a.y)(p.x-a.x)`;
//! - a sample exactly on an edge `a → b` is covered only if that edge is a
//!   top or left edge: `b.y < a.y`, or `b.y == a.y && b.x > a.x`;
//! - equal depths keep the triangle drawn first;
//! - geometry in front of `near_clip` is kept; triangles crossing the plane
//!   are clipped to it before projection.

use super::camera::CameraIntrinsics;
use super::mask::LabelMask;
use crate::kinematics::Vec3;
use crate::mesh::TriangleMesh;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ScreenTri {
    p: [[f64; 2]; 3],
    inv_z: [f64; 3],
    label: u8,
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

#[inline]
fn owns(a: [f64; 2], b: [f64; 2]) -> bool {
    b[1] < a[1] || (b[1] == a[1] && b[0] > a[0])
}

fn lerp3(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    [
        a[0] + t * (b[0] - a[0]),
        a[1] + t * (b[1] - a[1]),
        a[2] + t * (b[2] - a[2]),
    ]
}

/// Clips a camera-frame triangle to `z >= near` and appends the projected
/// result (0, 1 or 2 triangles).
pub(crate) fn clip_and_project(
    tri: [Vec3; 3],
    label: u8,
    intr: &CameraIntrinsics,
    near: f64,
    out: &mut Vec<ScreenTri>,
) {
    let mut emit = |a: Vec3, b: Vec3, c: Vec3| {
        let p = [a, b, c].map(|v| intr.project_unchecked(v));
        if p.iter().flatten().all(|x| x.is_finite()) {
            out.push(ScreenTri {
                p,
                inv_z: [1.0 / a[2], 1.0 / b[2], 1.0 / c[2]],
                label,
            });
        }
    };
    let inside = tri.map(|v| v[2] >= near);
    match inside.iter().filter(|&&i| i).count() {
        3 => emit(tri[0], tri[1], tri[2]),
        0 => {}
        _ => {
            // Sutherland–Hodgman against a single plane, keeping vertex order
            let mut poly: Vec<Vec3> = Vec::with_capacity(4);
            for k in 0..3 {
                let (cur, next) = (tri[k], tri[(k + 1) % 3]);
                let (ci, ni) = (inside[k], inside[(k + 1) % 3]);
                if ci {
                    poly.push(cur);
                }
                if ci != ni {
                    let t = (near - cur[2]) / (next[2] - cur[2]);
                    let mut p = lerp3(cur, next, t);
                    p[2] = near;
                    poly.push(p);
                }
            }
            for k in 1..poly.len() - 1 {
                emit(poly[0], poly[k], poly[k + 1]);
            }
        }
    }
}

/// Draws one screen triangle into the depth/label buffers.
pub(crate) fn draw(
    tri: &ScreenTri,
    width: usize,
    height: usize,
    depth: &mut [f64],
    labels: &mut [u8],
) {
    let [p0, mut p1, mut p2] = tri.p;
    let [iz0, mut iz1, mut iz2] = tri.inv_z;
    let mut area = edge(p0, p1, p2);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    if area < 0.0 {
        std::mem::swap(&mut p1, &mut p2);
        std::mem::swap(&mut iz1, &mut iz2);
        area = edge(p0, p1, p2);
        if area <= 0.0 {
            return;
        }
    }
    let (o0, o1, o2) = (owns(p1, p2), owns(p2, p0), owns(p0, p1));

    let min_y = p0[1].min(p1[1]).min(p2[1]);
    let max_y = p0[1].max(p1[1]).max(p2[1]);
    let min_x = p0[0].min(p1[0]).min(p2[0]);
    let max_x = p0[0].max(p1[0]).max(p2[0]);
    let (w, h) = (width as f64, height as f64);
    if max_x < -1.0 || max_y < -1.0 || min_x > w + 1.0 || min_y > h + 1.0 {
        return;
    }
    let clamp = |x: f64, hi: usize| -> usize { x.max(0.0).min(hi as f64) as usize };
    // one-pixel margins; the exact edge test below decides coverage
    let v_lo = clamp((min_y - 0.5).ceil() - 1.0, height);
    let v_hi = clamp((max_y - 0.5).floor() + 2.0, height);
    let u_box_lo = (min_x - 0.5).ceil() - 1.0;
    let u_box_hi = (max_x - 0.5).floor() + 1.0;

    let edges = [(p1, p2), (p2, p0), (p0, p1)];
    for v in v_lo..v_hi {
        let py = v as f64 + 0.5;
        let mut lo = u_box_lo;
        let mut hi = u_box_hi;
        let mut empty = false;
        for &(a, b) in &edges {
            let dx = b[0] - a[0];
            let dy = b[1] - a[1];
            let c = dx * (py - a[1]);
            if dy > 0.0 {
                hi = hi.min((a[0] + c / dy - 0.5).floor() + 1.0);
            } else if dy < 0.0 {
                lo = lo.max((a[0] + c / dy - 0.5).ceil() - 1.0);
            } else if c < 0.0 {
                empty = true;
            }
        }
        if empty || !(lo <= hi) {
            continue;
        }
        let u_lo = clamp(lo, width);
        let u_hi = clamp(hi + 1.0, width);
        let row = v * width;
        for u in u_lo..u_hi {
            let p = [u as f64 + 0.5, py];
            let w0 = edge(p1, p2, p);
            let w1 = edge(p2, p0, p);
            let w2 = edge(p0, p1, p);
            let inside = (w0 > 0.0 || (w0 == 0.0 && o0))
                && (w1 > 0.0 || (w1 == 0.0 && o1))
                && (w2 > 0.0 || (w2 == 0.0 && o2));
            if !inside {
                continue;
            }
            let iz = (w0 * iz0 + w1 * iz1 + w2 * iz2) / area;
            if iz > depth[row + u] {
                depth[row + u] = iz;
                labels[row + u] = tri.label;
            }
        }
    }
}

/// Renders camera-frame meshes into a label mask at the intrinsics'
/// resolution. Uncovered pixels are background.
pub fn rasterize(meshes: &[TriangleMesh], intr: &CameraIntrinsics, near_clip: f64) -> LabelMask {
    let (width, height) = (intr.width, intr.height);
    let mut mask = LabelMask::new(width, height);
    let mut depth = vec![0.0f64; width * height];
    let mut screen = Vec::new();
    for mesh in meshes {
        for t in 0..mesh.triangle_count() {
            screen.clear();
            clip_and_project(
                mesh.corners(t),
                mesh.labels()[t].code(),
                intr,
                near_clip,
                &mut screen,
            );
            for tri in &screen {
                draw(tri, width, height, &mut depth, mask.labels_mut());
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::PartId;

    fn square(x0: f64, y0: f64, x1: f64, y1: f64, z: f64, label: PartId) -> TriangleMesh {
        TriangleMesh::new(
            vec![[x0, y0, z], [x1, y0, z], [x1, y1, z], [x0, y1, z]],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![label; 2],
        )
        .unwrap()
    }

    /// fx = fy = z and cx = cy = 0 make camera x/y equal pixel coordinates.
    fn unit_camera(z: f64) -> CameraIntrinsics {
        CameraIntrinsics::new(z, z, 0.0, 0.0, 64, 64).unwrap()
    }

    #[test]
    fn empty_scene_is_background() {
        let m = rasterize(&[], &unit_camera(100.0), 1.0);
        assert!(m.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn square_covers_exactly_its_pixels() {
        let intr = unit_camera(100.0);
        let sq = square(10.0, 10.0, 20.0, 20.0, 100.0, PartId::Tip);
        let m = rasterize(&[sq], &intr, 1.0);
        assert_eq!(m.count(PartId::Tip), 100);
        for v in 0..64 {
            for u in 0..64 {
                let want = (10..20).contains(&u) && (10..20).contains(&v);
                assert_eq!(m.get(u, v) == 3, want, "pixel ({u},{v})");
            }
        }
    }

    #[test]
    fn shared_diagonal_is_not_double_counted_or_dropped() {
        // diagonal passes exactly through pixel centers
        let intr = unit_camera(100.0);
        let sq = square(0.5, 0.5, 8.5, 8.5, 100.0, PartId::Wrist);
        let m = rasterize(&[sq], &intr, 1.0);
        // centers strictly inside plus top/left boundary rows
        assert_eq!(m.count(PartId::Wrist), 64);
    }

    #[test]
    fn nearer_square_wins_regardless_of_order() {
        // base at z=100 covering pixels [10,30)^2; tip at z=50 projecting to [20,40)^2
        let intr = CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0, 64, 64).unwrap();
        let base = square(10.0, 10.0, 30.0, 30.0, 100.0, PartId::Base);
        let tip = square(10.0, 10.0, 20.0, 20.0, 50.0, PartId::Tip);
        for scene in [vec![base.clone(), tip.clone()], vec![tip, base]] {
            let m = rasterize(&scene, &intr, 1.0);
            assert_eq!(m.get(25, 25), 3);
            assert_eq!(m.get(15, 15), 1);
            assert_eq!(m.get(35, 35), 3);
            assert_eq!(m.count(PartId::Tip), 400);
            assert_eq!(m.count(PartId::Base), 300);
        }
    }

    #[test]
    fn winding_does_not_matter() {
        let intr = unit_camera(100.0);
        let a = square(3.2, 4.7, 17.9, 12.1, 100.0, PartId::Base);
        let flipped = TriangleMesh::new(
            a.vertices().to_vec(),
            a.triangles().iter().map(|t| [t[0], t[2], t[1]]).collect(),
            a.labels().to_vec(),
        )
        .unwrap();
        assert_eq!(
            rasterize(&[a], &intr, 1.0),
            rasterize(&[flipped], &intr, 1.0)
        );
    }

    #[test]
    fn geometry_behind_camera_is_dropped_and_crossing_geometry_clipped() {
        let intr = CameraIntrinsics::centered(50.0, 64);
        let behind = square(-10.0, -10.0, 10.0, 10.0, -20.0, PartId::Tip);
        assert!(rasterize(&[behind], &intr, 1.0)
            .labels()
            .iter()
            .all(|&l| l == 0));

        // a floor plane running from behind the camera to far ahead
        let floor = TriangleMesh::new(
            vec![
                [-50.0, 10.0, -50.0],
                [50.0, 10.0, -50.0],
                [50.0, 10.0, 500.0],
                [-50.0, 10.0, 500.0],
            ],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![PartId::Base; 2],
        )
        .unwrap();
        let m = rasterize(&[floor], &intr, 1.0);
        // below the horizon row (cy = 32) the floor is visible, above it is not
        assert_eq!(m.get(32, 40), 1);
        assert_eq!(m.get(32, 20), 0);
    }
}
