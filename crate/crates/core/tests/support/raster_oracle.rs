//! Brute-force reference rasterizer: for every pixel center, every triangle is
//! tested with edge functions and the nearest covering fragment is kept.

#![allow(dead_code)]

use tipseg::mesh::TriangleMesh;
use tipseg::render::{CameraIntrinsics, LabelMask};

type P2 = [f64; 2];
type P3 = [f64; 3];

fn e(a: P2, b: P2, p: P2) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn top_left(a: P2, b: P2) -> bool {
    b[1] < a[1] || (b[1] == a[1] && b[0] > a[0])
}

fn clip(tri: [P3; 3], near: f64) -> Vec<[P3; 3]> {
    let keep: Vec<bool> = tri.iter().map(|v| v[2] >= near).collect();
    let n_in = keep.iter().filter(|&&k| k).count();
    if n_in == 3 {
        return vec![tri];
    }
    if n_in == 0 {
        return vec![];
    }
    let mut poly = Vec::new();
    for k in 0..3 {
        let a = tri[k];
        let b = tri[(k + 1) % 3];
        if keep[k] {
            poly.push(a);
        }
        if keep[k] != keep[(k + 1) % 3] {
            let t = (near - a[2]) / (b[2] - a[2]);
            poly.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), near]);
        }
    }
    (1..poly.len() - 1)
        .map(|k| [poly[0], poly[k], poly[k + 1]])
        .collect()
}

pub fn oracle_rasterize(meshes: &[TriangleMesh], intr: &CameraIntrinsics, near: f64) -> LabelMask {
    // (screen points, inverse depths, label) in draw order
    let mut tris: Vec<([P2; 3], [f64; 3], u8)> = Vec::new();
    for m in meshes {
        for t in 0..m.triangle_count() {
            for c in clip(m.corners(t), near) {
                let p = c.map(|v| {
                    [
                        intr.fx * v[0] / v[2] + intr.cx,
                        intr.fy * v[1] / v[2] + intr.cy,
                    ]
                });
                if p.iter().flatten().all(|x| x.is_finite()) {
                    tris.push((p, c.map(|v| 1.0 / v[2]), m.labels()[t].code()));
                }
            }
        }
    }
    let mut labels = vec![0u8; intr.width * intr.height];
    for v in 0..intr.height {
        for u in 0..intr.width {
            let px = [u as f64 + 0.5, v as f64 + 0.5];
            let mut best = 0.0f64;
            for &(p, iz, label) in &tris {
                let (mut p, mut iz) = (p, iz);
                let mut area = e(p[0], p[1], p[2]);
                if area < 0.0 {
                    p.swap(1, 2);
                    iz.swap(1, 2);
                    area = e(p[0], p[1], p[2]);
                }
                if !(area > 0.0) {
                    continue;
                }
                let w = [e(p[1], p[2], px), e(p[2], p[0], px), e(p[0], p[1], px)];
                let own = [
                    top_left(p[1], p[2]),
                    top_left(p[2], p[0]),
                    top_left(p[0], p[1]),
                ];
                if (0..3).all(|k| w[k] > 0.0 || (w[k] == 0.0 && own[k])) {
                    let z = (w[0] * iz[0] + w[1] * iz[1] + w[2] * iz[2]) / area;
                    if z > best {
                        best = z;
                        labels[v * intr.width + u] = label;
                    }
                }
            }
        }
    }
    LabelMask::from_labels(intr.width, intr.height, labels).unwrap()
}

/// Seeded scene of at most 20 labeled triangles for a 64×64 camera with
/// fx = fy = 64 and the principal point at the center. Half of the scenes use
/// a common depth and half-integer coordinates so edges pass exactly through
/// pixel centers; some triangles straddle or sit behind the near plane.
pub fn random_scene(seed: u64) -> (Vec<TriangleMesh>, CameraIntrinsics) {
    use rand::{Rng, SeedableRng};
    use tipseg::mesh::PartId;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let intr = CameraIntrinsics::new(64.0, 64.0, 32.0, 32.0, 64, 64).unwrap();
    let snapped = seed % 2 == 0;
    let n = rng.gen_range(1..=20);
    let mut meshes = Vec::new();
    for _ in 0..n {
        let mut verts = Vec::new();
        for _ in 0..3 {
            if snapped {
                let sx = rng.gen_range(-8i32..=144) as f64 / 2.0;
                let sy = rng.gen_range(-8i32..=144) as f64 / 2.0;
                let z = 64.0 * rng.gen_range(1..=3) as f64;
                verts.push([(sx - 32.0) * z / 64.0, (sy - 32.0) * z / 64.0, z]);
            } else {
                let z: f64 = if rng.gen_bool(0.1) {
                    rng.gen_range(-20.0..5.0)
                } else {
                    rng.gen_range(5.0..200.0)
                };
                let sx: f64 = rng.gen_range(-10.0..74.0);
                let sy: f64 = rng.gen_range(-10.0..74.0);
                verts.push([
                    (sx - 32.0) * z.abs().max(1.0) / 64.0,
                    (sy - 32.0) * z.abs().max(1.0) / 64.0,
                    z,
                ]);
            }
        }
        let label = PartId::PARTS[rng.gen_range(0..3)];
        if let Ok(m) = TriangleMesh::new(verts, vec![[0, 1, 2]], vec![label]) {
            meshes.push(m);
        }
    }
    (meshes, intr)
}
