//! Minimal OBJ reader/writer: `v`, `f`, and `g`/`usemtl` part assignment.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{PartId, TriangleMesh};
use crate::error::{Error, Result};
use crate::kinematics::Vec3;

pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text).map_err(|e| match e {
        Error::InvalidMesh(msg) => Error::MeshFormat {
            path: path.to_path_buf(),
            msg,
        },
        other => other,
    })
}

/// Parses the OBJ subset. Vertices with identical positions are merged,
/// degenerate triangles are dropped, and a mesh with no surviving triangle
/// is an error.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut raw_vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut labels: Vec<PartId> = Vec::new();
    let mut current: Option<PartId> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        let Some(kind) = tok.next() else { continue };
        let bad = |msg: String| Error::InvalidMesh(format!("line {}: {msg}", lineno + 1));
        match kind {
            "v" => {
                let coords: Vec<f64> = tok
                    .take(3)
                    .map(|s| {
                        s.parse::<f64>()
                            .map_err(|_| bad(format!("bad coordinate `{s}`")))
                    })
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(bad("vertex needs 3 coordinates".into()));
                }
                raw_vertices.push([coords[0], coords[1], coords[2]]);
            }
            "f" => {
                let part = current.ok_or_else(|| bad("face before any part group".into()))?;
                let idx: Vec<usize> = tok
                    .map(|s| {
                        let head = s.split('/').next().unwrap_or("");
                        let i: i64 = head
                            .parse()
                            .map_err(|_| bad(format!("bad face index `{s}`")))?;
                        let n = raw_vertices.len() as i64;
                        let resolved = if i < 0 { n + i } else { i - 1 };
                        if resolved < 0 || resolved >= n {
                            return Err(bad(format!("face index {i} out of range")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(bad("face needs at least 3 vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                    labels.push(part);
                }
            }
            "g" | "usemtl" => {
                let name = tok
                    .next()
                    .ok_or_else(|| bad(format!("`{kind}` without a name")))?;
                current = Some(PartId::from_name(name)?);
            }
            _ => {}
        }
    }

    // merge exact duplicate positions (+0.0 folds -0.0 onto 0.0)
    let mut unique: HashMap<[u64; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let remap: Vec<usize> = raw_vertices
        .iter()
        .map(|v| {
            let key = v.map(|c| (c + 0.0).to_bits());
            *unique.entry(key).or_insert_with(|| {
                vertices.push(*v);
                vertices.len() - 1
            })
        })
        .collect();
    let faces = faces.into_iter().map(|f| f.map(|i| remap[i])).collect();

    let mesh = TriangleMesh::new(vertices, faces, labels)?.cleaned();
    if mesh.is_empty() {
        return Err(Error::InvalidMesh("no non-degenerate triangles".into()));
    }
    Ok(mesh)
}

pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    let mut current = None;
    for (t, &label) in mesh.triangles().iter().zip(mesh.labels()) {
        if current != Some(label) {
            let _ = writeln!(out, "g {}", label.name());
            current = Some(label);
        }
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Unit cube, 12 triangles, two faces per part group in rotation.
    pub(crate) const BOX_OBJ: &str = "\
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
g base
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
g Wrist
f 1 2 6
f 1 6 5
f 4 8 7
f 4 7 3
usemtl TIP
f 1 5 8
f 1 8 4
f 2 3 7
f 2 7 6
";

    #[test]
    fn loads_labelled_box() {
        let m = parse_obj(BOX_OBJ).unwrap();
        assert_eq!(m.triangle_count(), 12);
        assert_eq!(m.vertices().len(), 8);
        assert_eq!(
            m.label_set(),
            vec![PartId::Base, PartId::Wrist, PartId::Tip]
        );
        assert_eq!(m.labels().iter().filter(|&&l| l == PartId::Tip).count(), 4);
    }

    #[test]
    fn unknown_group_is_named() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\ng shaft\nf 1 2 3\n";
        match parse_obj(text) {
            Err(Error::UnknownPart(name)) => assert_eq!(name, "shaft"),
            other => panic!("expected unknown part error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_vertices_are_merged() {
        // two triangles sharing an edge, each written with its own copies:
        // 6 `v` lines, 4 distinct positions
        let text = "\
v 0 0 0
v 1 0 0
v 0 1 0
v 1 0 0
v 0 1 0
v 1 1 0
g tip
f 1 2 3
f 4 6 5
";
        let m = parse_obj(text).unwrap();
        assert_eq!(m.vertices().len(), 4);
        assert_eq!(m.triangle_count(), 2);
    }

    #[test]
    fn degenerate_only_mesh_is_error() {
        let text = "v 0 0 0\nv 1 0 0\nv 2 0 0\ng base\nf 1 2 3\n";
        assert!(parse_obj(text).is_err());
    }

    #[test]
    fn quads_are_fanned_and_negative_indices_resolve() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\ng wrist\nf -4/1/1 -3 -2 -1\n";
        let m = parse_obj(text).unwrap();
        assert_eq!(m.triangle_count(), 2);
    }

    #[test]
    fn write_then_parse_preserves_mesh() {
        let m = parse_obj(BOX_OBJ).unwrap();
        let again = parse_obj(&write_obj(&m)).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn unreadable_file_is_error() {
        assert!(matches!(
            load_mesh(Path::new("/definitely/not/here.obj")),
            Err(Error::Io { .. })
        ));
    }
}
