//! Quadric-error-metric edge collapse with part-boundary locking.
//!
//! A vertex is locked when its incident triangles carry more than one part
//! label; no collapse may involve a locked vertex, so the boundary between
//! parts is kept verbatim and every surviving triangle stays inside the
//! region of its label. Candidates are ordered by (cost, lower vertex index,
//! higher vertex index), which makes the result deterministic.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use super::{PartId, TriangleMesh, DEGENERATE_AREA};
use crate::error::{Error, Result};
use crate::kinematics::{add, cross, dot, norm, scale, sub, Vec3};

/// Meshes with fewer than `DECIMATION_MIN_FACTOR * rate` triangles are
/// returned unchanged.
pub const DECIMATION_MIN_FACTOR: usize = 4;

/// Weight of the virtual planes that pin open-boundary edges in place.
const BOUNDARY_WEIGHT: f64 = 1e3;

#[derive(Clone, Copy, Debug, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    fn plane(n: Vec3, d: f64, w: f64) -> Self {
        let [a, b, c] = n;
        Quadric([
            w * a * a,
            w * a * b,
            w * a * c,
            w * a * d,
            w * b * b,
            w * b * c,
            w * b * d,
            w * c * c,
            w * c * d,
            w * d * d,
        ])
    }

    fn add(&self, o: &Quadric) -> Quadric {
        let mut q = self.0;
        for (a, b) in q.iter_mut().zip(o.0) {
            *a += b;
        }
        Quadric(q)
    }

    fn eval(&self, p: Vec3) -> f64 {
        let q = &self.0;
        let [x, y, z] = p;
        q[0] * x * x
            + 2.0 * q[1] * x * y
            + 2.0 * q[2] * x * z
            + 2.0 * q[3] * x
            + q[4] * y * y
            + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }

    /// Minimizer of the quadric, when the 3x3 system is well conditioned.
    fn optimum(&self) -> Option<Vec3> {
        let q = &self.0;
        let m = [[q[0], q[1], q[2]], [q[1], q[4], q[5]], [q[2], q[5], q[7]]];
        let rhs = [-q[3], -q[6], -q[8]];
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        let scale_ref = m.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        if scale_ref == 0.0 || det.abs() <= 1e-9 * scale_ref.powi(3) {
            return None;
        }
        let col = |k: usize| -> f64 {
            let mut a = m;
            for r in 0..3 {
                a[r][k] = rhs[r];
            }
            a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
        };
        let p = [col(0) / det, col(1) / det, col(2) / det];
        p.iter().all(|c| c.is_finite()).then_some(p)
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
    target: Vec3,
    stamp: (u32, u32),
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.a.cmp(&other.a))
            .then(self.b.cmp(&other.b))
    }
}

struct State {
    pos: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    labels: Vec<PartId>,
    face_alive: Vec<bool>,
    incident: Vec<Vec<usize>>,
    quadrics: Vec<Quadric>,
    locked: Vec<bool>,
    version: Vec<u32>,
    label_count: HashMap<PartId, usize>,
    alive: usize,
}

fn face_normal(p: [Vec3; 3]) -> Vec3 {
    cross(sub(p[1], p[0]), sub(p[2], p[0]))
}

impl State {
    fn new(mesh: &TriangleMesh) -> Self {
        let nv = mesh.vertices().len();
        let faces = mesh.triangles().to_vec();
        let labels = mesh.labels().to_vec();
        let mut incident = vec![Vec::new(); nv];
        for (f, tri) in faces.iter().enumerate() {
            for &v in tri {
                incident[v].push(f);
            }
        }
        let locked = incident
            .iter()
            .map(|fs| fs.windows(2).any(|w| labels[w[0]] != labels[w[1]]))
            .collect();

        let mut quadrics = vec![Quadric::default(); nv];
        let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (f, tri) in faces.iter().enumerate() {
            let p = tri.map(|i| mesh.vertices()[i]);
            let n = face_normal(p);
            let len = norm(n);
            if len == 0.0 {
                continue;
            }
            let unit = scale(n, 1.0 / len);
            let area = 0.5 * len;
            let q = Quadric::plane(unit, -dot(unit, p[0]), area);
            for &v in tri {
                quadrics[v] = quadrics[v].add(&q);
            }
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                edge_faces.entry((a.min(b), a.max(b))).or_default().push(f);
            }
        }
        // open-boundary edges get a perpendicular constraint plane
        let mut boundary: Vec<_> = edge_faces.iter().filter(|(_, fs)| fs.len() == 1).collect();
        boundary.sort_by_key(|(e, _)| **e);
        for (&(a, b), fs) in boundary {
            let tri = faces[fs[0]];
            let p = tri.map(|i| mesh.vertices()[i]);
            let n = face_normal(p);
            let e = sub(mesh.vertices()[b], mesh.vertices()[a]);
            let perp = cross(e, n);
            let len = norm(perp);
            if len == 0.0 {
                continue;
            }
            let unit = scale(perp, 1.0 / len);
            let w = BOUNDARY_WEIGHT * dot(e, e);
            let q = Quadric::plane(unit, -dot(unit, mesh.vertices()[a]), w);
            quadrics[a] = quadrics[a].add(&q);
            quadrics[b] = quadrics[b].add(&q);
        }

        let mut label_count = HashMap::new();
        for &l in &labels {
            *label_count.entry(l).or_insert(0) += 1;
        }
        State {
            pos: mesh.vertices().to_vec(),
            alive: faces.len(),
            face_alive: vec![true; faces.len()],
            faces,
            labels,
            incident,
            quadrics,
            locked,
            version: vec![0; nv],
            label_count,
        }
    }

    fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut n: Vec<usize> = self.incident[v]
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&u| u != v)
            .collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    fn candidate(&self, a: usize, b: usize) -> Option<Candidate> {
        if self.locked[a] || self.locked[b] {
            return None;
        }
        let (a, b) = (a.min(b), a.max(b));
        let q = self.quadrics[a].add(&self.quadrics[b]);
        let mid = scale(add(self.pos[a], self.pos[b]), 0.5);
        let mut options = vec![self.pos[a], self.pos[b], mid];
        if let Some(opt) = q.optimum() {
            // keep the solve local to the edge
            let reach = norm(sub(self.pos[a], self.pos[b])) * 2.0;
            if norm(sub(opt, mid)) <= reach {
                options.insert(0, opt);
            }
        }
        let (target, cost) = options
            .into_iter()
            .map(|p| (p, q.eval(p).max(0.0)))
            .min_by(|x, y| x.1.total_cmp(&y.1))?;
        Some(Candidate {
            cost,
            a,
            b,
            target,
            stamp: (self.version[a], self.version[b]),
        })
    }

    fn is_fresh(&self, c: &Candidate) -> bool {
        (self.version[c.a], self.version[c.b]) == c.stamp
    }

    /// Checks manifold link condition, label survival, and normal flips.
    fn collapse_allowed(&self, c: &Candidate) -> bool {
        let shared: Vec<usize> = self.incident[c.a]
            .iter()
            .copied()
            .filter(|&f| self.faces[f].contains(&c.b))
            .collect();
        if shared.is_empty() {
            return false;
        }
        let na = self.neighbors(c.a);
        let nb = self.neighbors(c.b);
        let common = na.iter().filter(|v| nb.binary_search(v).is_ok()).count();
        if common != shared.len() {
            return false;
        }
        for &f in &shared {
            let l = self.labels[f];
            let removed = shared.iter().filter(|&&g| self.labels[g] == l).count();
            if self.label_count[&l] <= removed {
                return false;
            }
        }
        for &v in &[c.a, c.b] {
            for &f in &self.incident[v] {
                if shared.contains(&f) {
                    continue;
                }
                let before = self.faces[f].map(|i| self.pos[i]);
                let after = self.faces[f].map(|i| {
                    if i == c.a || i == c.b {
                        c.target
                    } else {
                        self.pos[i]
                    }
                });
                let n0 = face_normal(before);
                let n1 = face_normal(after);
                if 0.5 * norm(n1) <= DEGENERATE_AREA || dot(n0, n1) <= 0.0 {
                    return false;
                }
            }
        }
        true
    }

    /// Merges `b` into `a` at the candidate's target position.
    fn collapse(&mut self, c: &Candidate) {
        let (a, b) = (c.a, c.b);
        let b_faces = std::mem::take(&mut self.incident[b]);
        for f in b_faces {
            if !self.face_alive[f] {
                continue;
            }
            if self.faces[f].contains(&a) {
                self.face_alive[f] = false;
                self.alive -= 1;
                *self.label_count.get_mut(&self.labels[f]).unwrap() -= 1;
                for v in self.faces[f] {
                    if v != b {
                        self.incident[v].retain(|&g| g != f);
                    }
                }
            } else {
                for v in self.faces[f].iter_mut() {
                    if *v == b {
                        *v = a;
                    }
                }
                self.incident[a].push(f);
            }
        }
        self.incident[a].sort_unstable();
        self.pos[a] = c.target;
        self.quadrics[a] = self.quadrics[a].add(&self.quadrics[b]);
        self.version[a] += 1;
        self.version[b] += 1;
        for n in self.neighbors(a) {
            self.version[n] += 1;
        }
    }

    fn push_edges_of(&self, v: usize, heap: &mut BinaryHeap<Reverse<Candidate>>) {
        for n in self.neighbors(v) {
            if let Some(c) = self.candidate(v, n) {
                heap.push(Reverse(c));
            }
        }
    }

    fn into_mesh(self) -> TriangleMesh {
        let keep: Vec<usize> = (0..self.faces.len())
            .filter(|&f| self.face_alive[f])
            .collect();
        let mesh = TriangleMesh {
            vertices: self.pos,
            triangles: self.faces,
            labels: self.labels,
        };
        mesh.select_triangles(&keep)
    }
}

/// Reduces the triangle count to at most `ceil(|T| / rate)` by quadric edge
/// collapse. Collapses that would violate the part-boundary lock, break
/// manifoldness, flip a face, or erase a part are skipped; if none remain
/// the best reachable mesh is returned.
pub fn decimate(mesh: &TriangleMesh, rate: usize) -> Result<TriangleMesh> {
    if rate == 0 {
        return Err(Error::ZeroDecimationRate);
    }
    let n = mesh.triangle_count();
    if rate == 1 || n < DECIMATION_MIN_FACTOR * rate {
        return Ok(mesh.clone());
    }
    let target = n.div_ceil(rate);
    let mut state = State::new(mesh);
    let mut heap = BinaryHeap::new();
    let mut seen = std::collections::HashSet::new();
    for tri in &state.faces {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if seen.insert((a.min(b), a.max(b))) {
                if let Some(c) = state.candidate(a, b) {
                    heap.push(Reverse(c));
                }
            }
        }
    }

    while state.alive > target {
        let Some(Reverse(c)) = heap.pop() else { break };
        if !state.is_fresh(&c) || !state.collapse_allowed(&c) {
            continue;
        }
        state.collapse(&c);
        state.push_edges_of(c.a, &mut heap);
    }

    let out = state.into_mesh().cleaned();
    debug_assert!(out
        .triangles()
        .iter()
        .all(|t| t.iter().all(|&i| i < out.vertices().len())));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    #[test]
    fn zero_rate_is_error() {
        let m = shapes::uv_sphere(10.0, 8, 16, PartId::Tip);
        assert!(matches!(decimate(&m, 0), Err(Error::ZeroDecimationRate)));
    }

    #[test]
    fn rate_one_is_identity() {
        let m = shapes::uv_sphere(10.0, 8, 16, PartId::Tip);
        assert_eq!(decimate(&m, 1).unwrap(), m);
    }

    #[test]
    fn small_meshes_pass_through() {
        let m = shapes::cuboid([1.0, 1.0, 1.0], 1, PartId::Base);
        assert_eq!(m.triangle_count(), 12);
        assert_eq!(decimate(&m, 10).unwrap(), m);
    }

    #[test]
    fn sphere_reaches_target() {
        let m = shapes::uv_sphere(10.0, 20, 40, PartId::Wrist);
        let n = m.triangle_count();
        let d = decimate(&m, 10).unwrap();
        assert!(
            d.triangle_count() <= n.div_ceil(10),
            "{} > {}",
            d.triangle_count(),
            n.div_ceil(10)
        );
        assert!(d.triangle_count() > 0);
        assert_eq!(d.label_set(), vec![PartId::Wrist]);
    }

    #[test]
    fn deterministic() {
        let m = shapes::uv_sphere(10.0, 16, 32, PartId::Wrist);
        assert_eq!(decimate(&m, 5).unwrap(), decimate(&m, 5).unwrap());
    }

    #[test]
    fn planar_grid_keeps_outline() {
        let m = shapes::grid([-5.0, -5.0], [5.0, 5.0], 20, 20, 0.0, PartId::Base);
        let d = decimate(&m, 10).unwrap();
        assert!(d.triangle_count() <= m.triangle_count().div_ceil(10));
        let total: f64 = (0..d.triangle_count()).map(|t| d.area(t)).sum();
        assert!((total - 100.0).abs() < 1e-6, "area {total}");
    }
}
