//! Part-labelled triangle meshes: loading, rigid transforms, decimation and
//! procedural instrument geometry.

mod decimate;
mod obj;
pub mod shapes;

use crate::error::{Error, Result};
use crate::kinematics::{cross, norm, sub, Pose7, Vec3};

pub use decimate::{decimate, DECIMATION_MIN_FACTOR};
pub use obj::{load_mesh, parse_obj, write_obj};

/// Triangles with area at or below this (mm²) are dropped during cleanup.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Semantic part code. The numeric values are the on-disk label codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum PartId {
    Background = 0,
    Base = 1,
    Wrist = 2,
    Tip = 3,
}

impl PartId {
    pub const PARTS: [PartId; 3] = [PartId::Base, PartId::Wrist, PartId::Tip];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(PartId::Background),
            1 => Ok(PartId::Base),
            2 => Ok(PartId::Wrist),
            3 => Ok(PartId::Tip),
            c => Err(Error::InvalidLabel(c)),
        }
    }

    /// Case-insensitive part name lookup (`base`, `wrist`, `tip`).
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "base" => Ok(PartId::Base),
            "wrist" => Ok(PartId::Wrist),
            "tip" => Ok(PartId::Tip),
            _ => Err(Error::UnknownPart(name.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PartId::Background => "background",
            PartId::Base => "base",
            PartId::Wrist => "wrist",
            PartId::Tip => "tip",
        }
    }

    /// Index into a (base, wrist, tip) triple; `None` for background.
    pub fn part_index(self) -> Option<usize> {
        match self {
            PartId::Background => None,
            p => Some(p as usize - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    labels: Vec<PartId>,
}

pub fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}

impl TriangleMesh {
    /// Builds a mesh, checking index ranges and label assignment. Degenerate
    /// triangles are not removed here; see [`TriangleMesh::cleaned`].
    pub fn new(
        vertices: Vec<Vec3>,
        triangles: Vec<[usize; 3]>,
        labels: Vec<PartId>,
    ) -> Result<Self> {
        if triangles.len() != labels.len() {
            return Err(Error::InvalidMesh(format!(
                "{} triangles but {} labels",
                triangles.len(),
                labels.len()
            )));
        }
        if let Some(t) = triangles
            .iter()
            .find(|t| t.iter().any(|&i| i >= vertices.len()))
        {
            return Err(Error::InvalidMesh(format!(
                "triangle {t:?} indexes past {} vertices",
                vertices.len()
            )));
        }
        if labels.contains(&PartId::Background) {
            return Err(Error::InvalidMesh("triangle labelled background".into()));
        }
        if vertices.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite("mesh vertex"));
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
            labels,
        })
    }

    pub fn empty() -> Self {
        TriangleMesh {
            vertices: Vec::new(),
            triangles: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn labels(&self) -> &[PartId] {
        &self.labels
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        triangle_area(a, b, c)
    }

    /// Sorted, deduplicated set of labels carried by the triangles.
    pub fn label_set(&self) -> Vec<PartId> {
        let mut set = self.labels.clone();
        set.sort();
        set.dedup();
        set
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.vertices.len().max(1) as f64;
        let mut c = [0.0; 3];
        for v in &self.vertices {
            for k in 0..3 {
                c[k] += v[k];
            }
        }
        [c[0] / n, c[1] / n, c[2] / n]
    }

    /// Drops degenerate triangles and vertices no longer referenced.
    pub fn cleaned(&self) -> TriangleMesh {
        let keep: Vec<usize> = (0..self.triangles.len())
            .filter(|&t| {
                let [a, b, c] = self.triangles[t];
                a != b && b != c && a != c && self.area(t) > DEGENERATE_AREA
            })
            .collect();
        self.select_triangles(&keep)
    }

    /// Submesh made of the given triangles, with unused vertices compacted
    /// away in first-use order.
    pub fn select_triangles(&self, keep: &[usize]) -> TriangleMesh {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut triangles = Vec::with_capacity(keep.len());
        let mut labels = Vec::with_capacity(keep.len());
        for &t in keep {
            let tri = self.triangles[t].map(|i| {
                if remap[i] == usize::MAX {
                    remap[i] = vertices.len();
                    vertices.push(self.vertices[i]);
                }
                remap[i]
            });
            triangles.push(tri);
            labels.push(self.labels[t]);
        }
        TriangleMesh {
            vertices,
            triangles,
            labels,
        }
    }

    pub fn part(&self, part: PartId) -> TriangleMesh {
        let keep: Vec<usize> = (0..self.triangles.len())
            .filter(|&t| self.labels[t] == part)
            .collect();
        self.select_triangles(&keep)
    }

    /// Concatenates meshes, offsetting indices.
    pub fn merge(meshes: &[TriangleMesh]) -> TriangleMesh {
        let mut out = TriangleMesh::empty();
        for m in meshes {
            let base = out.vertices.len();
            out.vertices.extend_from_slice(&m.vertices);
            out.triangles
                .extend(m.triangles.iter().map(|t| t.map(|i| i + base)));
            out.labels.extend_from_slice(&m.labels);
        }
        out
    }

    pub fn relabel(mut self, part: PartId) -> TriangleMesh {
        assert_ne!(part, PartId::Background);
        self.labels.iter_mut().for_each(|l| *l = part);
        self
    }
}

/// Applies `pose` to every vertex; topology and labels are untouched.
pub fn transform_mesh(mesh: &TriangleMesh, pose: &Pose7) -> TriangleMesh {
    TriangleMesh {
        vertices: mesh
            .vertices
            .iter()
            .map(|&v| pose.apply_unchecked(v))
            .collect(),
        triangles: mesh.triangles.clone(),
        labels: mesh.labels.clone(),
    }
}

/// Places each part by its own pose (`poses[k]` for base, wrist, tip).
pub fn pose_parts(mesh: &TriangleMesh, poses: &[Pose7; 3]) -> TriangleMesh {
    let parts: Vec<TriangleMesh> = PartId::PARTS
        .iter()
        .zip(poses)
        .map(|(&p, pose)| transform_mesh(&mesh.part(p), pose))
        .collect();
    TriangleMesh::merge(&parts)
}
