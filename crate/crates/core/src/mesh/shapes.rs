//! Procedural meshes: spheres, cylinders, boxes and the synthetic
//! three-part instrument used for rendering fixtures and data generation.

use std::f64::consts::PI;

use super::{transform_mesh, PartId, TriangleMesh};
use crate::kinematics::{Pose7, Quat, Vec3};

fn build(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>, label: PartId) -> TriangleMesh {
    let n = triangles.len();
    TriangleMesh::new(vertices, triangles, vec![label; n])
        .expect("procedural mesh indices are in range")
        .cleaned()
}

/// Closed UV sphere centered at the origin: `2 * segments * (rings - 1)` triangles.
pub fn uv_sphere(radius: f64, rings: usize, segments: usize, label: PartId) -> TriangleMesh {
    assert!(rings >= 2 && segments >= 3);
    let mut v = vec![[0.0, 0.0, radius]];
    for r in 1..rings {
        let theta = PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = 2.0 * PI * s as f64 / segments as f64;
            v.push([
                radius * theta.sin() * phi.cos(),
                radius * theta.sin() * phi.sin(),
                radius * theta.cos(),
            ]);
        }
    }
    let south = v.len();
    v.push([0.0, 0.0, -radius]);
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + s % segments;
    let mut t = Vec::new();
    for s in 0..segments {
        t.push([0, ring(1, s), ring(1, s + 1)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b, c, d) = (
                ring(r, s),
                ring(r + 1, s),
                ring(r + 1, s + 1),
                ring(r, s + 1),
            );
            t.push([a, b, c]);
            t.push([a, c, d]);
        }
    }
    for s in 0..segments {
        t.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    build(v, t, label)
}

/// Closed cylinder along +z from `z = 0` to `z = length`, with fan caps.
pub fn cylinder(
    radius: f64,
    length: f64,
    segments: usize,
    stacks: usize,
    label: PartId,
) -> TriangleMesh {
    assert!(segments >= 3 && stacks >= 1);
    let mut v = Vec::new();
    for k in 0..=stacks {
        let z = length * k as f64 / stacks as f64;
        for s in 0..segments {
            let phi = 2.0 * PI * s as f64 / segments as f64;
            v.push([radius * phi.cos(), radius * phi.sin(), z]);
        }
    }
    let at = |k: usize, s: usize| k * segments + s % segments;
    let mut t = Vec::new();
    for k in 0..stacks {
        for s in 0..segments {
            t.push([at(k, s), at(k, s + 1), at(k + 1, s + 1)]);
            t.push([at(k, s), at(k + 1, s + 1), at(k + 1, s)]);
        }
    }
    let bottom = v.len();
    v.push([0.0, 0.0, 0.0]);
    let top = v.len();
    v.push([0.0, 0.0, length]);
    for s in 0..segments {
        t.push([bottom, at(0, s + 1), at(0, s)]);
        t.push([top, at(stacks, s), at(stacks, s + 1)]);
    }
    build(v, t, label)
}

/// Flat grid in the plane `z`, `nx * ny * 2` triangles.
pub fn grid(
    min: [f64; 2],
    max: [f64; 2],
    nx: usize,
    ny: usize,
    z: f64,
    label: PartId,
) -> TriangleMesh {
    let mut v = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            v.push([
                min[0] + (max[0] - min[0]) * i as f64 / nx as f64,
                min[1] + (max[1] - min[1]) * j as f64 / ny as f64,
                z,
            ]);
        }
    }
    let at = |i: usize, j: usize| j * (nx + 1) + i;
    let mut t = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            t.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            t.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    build(v, t, label)
}

/// Axis-aligned box centered at the origin, each face split into an
/// `n × n` grid (`12 n²` triangles). Shared face-edge vertices are merged.
pub fn cuboid(size: Vec3, n: usize, label: PartId) -> TriangleMesh {
    assert!(n >= 1);
    let h = [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0];
    let mut faces = Vec::new();
    // (normal axis, sign)
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
            let mut vs = Vec::new();
            for j in 0..=n {
                for i in 0..=n {
                    let mut p = [0.0; 3];
                    p[axis] = sign * h[axis];
                    p[u] = -h[u] + size[u] * i as f64 / n as f64;
                    p[w] = -h[w] + size[w] * j as f64 / n as f64;
                    vs.push(p);
                }
            }
            let at = |i: usize, j: usize| j * (n + 1) + i;
            let mut ts = Vec::new();
            for j in 0..n {
                for i in 0..n {
                    let (a, b, c, d) = (at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
                    // (u × w) points along +axis; flip for the negative face
                    if sign > 0.0 {
                        ts.push([a, b, c]);
                        ts.push([a, c, d]);
                    } else {
                        ts.push([a, c, b]);
                        ts.push([a, d, c]);
                    }
                }
            }
            faces.push(build(vs, ts, label));
        }
    }
    weld(&TriangleMesh::merge(&faces))
}

/// Merges vertices with bit-identical positions.
pub fn weld(mesh: &TriangleMesh) -> TriangleMesh {
    let mut map = std::collections::HashMap::new();
    let mut vertices = Vec::new();
    let remap: Vec<usize> = mesh
        .vertices()
        .iter()
        .map(|v| {
            let key = v.map(|c| (c + 0.0).to_bits());
            *map.entry(key).or_insert_with(|| {
                vertices.push(*v);
                vertices.len() - 1
            })
        })
        .collect();
    let triangles = mesh
        .triangles()
        .iter()
        .map(|t| t.map(|i| remap[i]))
        .collect();
    TriangleMesh::new(vertices, triangles, mesh.labels().to_vec())
        .expect("welding keeps indices in range")
        .cleaned()
}

/// Dimensions (mm) of the synthetic instrument. Every part extends along its
/// own local +z axis from the origin, which is where its joint sits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstrumentGeometry {
    pub shaft_radius: f64,
    pub shaft_length: f64,
    pub wrist_radius: f64,
    pub wrist_length: f64,
    pub jaw_length: f64,
    pub jaw_width: f64,
    pub jaw_thickness: f64,
    /// Half opening angle of the jaws, radians.
    pub jaw_opening: f64,
}

impl Default for InstrumentGeometry {
    fn default() -> Self {
        InstrumentGeometry {
            shaft_radius: 3.0,
            shaft_length: 70.0,
            wrist_radius: 3.2,
            wrist_length: 12.0,
            jaw_length: 12.0,
            jaw_width: 5.0,
            jaw_thickness: 4.0,
            jaw_opening: 0.22,
        }
    }
}

/// Builds the three-part instrument. `detail` scales tessellation; detail 1
/// gives a few hundred triangles, detail 8 gives well over 10 000.
pub fn instrument(geom: &InstrumentGeometry, detail: usize) -> TriangleMesh {
    let d = detail.max(1);
    let segments = 12 * d;
    let base = cylinder(
        geom.shaft_radius,
        geom.shaft_length,
        segments,
        5 * d,
        PartId::Base,
    );
    let wrist = cylinder(
        geom.wrist_radius,
        geom.wrist_length,
        segments,
        d,
        PartId::Wrist,
    );
    let jaw = cuboid(
        [geom.jaw_width, geom.jaw_thickness, geom.jaw_length],
        d,
        PartId::Tip,
    );
    // jaw box is centered; shift so it starts at the hinge
    let jaw = transform_mesh(&jaw, &Pose7::translation([0.0, 0.0, geom.jaw_length / 2.0]));
    let jaws: Vec<TriangleMesh> = [-1.0, 1.0]
        .iter()
        .map(|&side| {
            let q = Quat::from_axis_angle([0.0, 1.0, 0.0], side * geom.jaw_opening);
            let pose = Pose7 {
                position: [side * geom.jaw_width * 0.3, 0.0, 0.0],
                orientation: q,
            };
            transform_mesh(&jaw, &pose)
        })
        .collect();
    TriangleMesh::merge(&[base, wrist, TriangleMesh::merge(&jaws)])
}
