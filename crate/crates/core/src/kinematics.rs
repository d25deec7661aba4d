//! Rigid poses, kinematics streams and timestamp matching.
//!
//! Positions are in millimeters, timestamps in seconds, and quaternions are
//! stored in (w, x, y, z) order. Instrument part poses are world-frame; the
//! camera pose maps camera coordinates into the world, so its inverse takes
//! world points into the camera frame.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn finite3(v: Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Unit quaternion in (w, x, y, z) order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes the given components. Norms outside [0.5, 2.0] are
    /// rejected as corrupt rather than silently rescaled.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        if ![w, x, y, z].iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite("quaternion"));
        }
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(0.5..=2.0).contains(&n) {
            return Err(Error::CorruptQuaternion(n));
        }
        Ok(Quat {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm(axis);
        if n == 0.0 || angle == 0.0 {
            return Quat::IDENTITY;
        }
        let (s, c) = (angle * 0.5).sin_cos();
        let k = s / n;
        Quat {
            w: c,
            x: axis[0] * k,
            y: axis[1] * k,
            z: axis[2] * k,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn conjugate(&self) -> Self {
        Quat {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self * rhs` (apply `rhs` first, then `self`).
    pub fn mul(&self, rhs: &Quat) -> Quat {
        let (a, b) = (self, rhs);
        Quat {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }

    /// Rotation angle in radians, in [0, π].
    pub fn angle(&self) -> f64 {
        2.0 * self.w.abs().min(1.0).acos()
    }

    /// Rotation without the norm check; `self` must be a unit quaternion.
    pub fn rotate_unchecked(&self, p: Vec3) -> Vec3 {
        // p' = p + 2w(u × p) + 2u × (u × p)
        let u = [self.x, self.y, self.z];
        let t = scale(cross(u, p), 2.0);
        add(add(p, scale(t, self.w)), cross(u, t))
    }
}

/// Rotates `p` by the unit quaternion `q`.
pub fn quat_rotate(q: &Quat, p: Vec3) -> Result<Vec3> {
    if !finite3(p) || ![q.w, q.x, q.y, q.z].iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("quat_rotate input"));
    }
    Ok(q.rotate_unchecked(p))
}

/// Rigid pose: position (mm) plus unit orientation quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose7 {
    pub position: Vec3,
    pub orientation: Quat,
}

impl Default for Pose7 {
    fn default() -> Self {
        Pose7::IDENTITY
    }
}

impl Pose7 {
    pub const IDENTITY: Pose7 = Pose7 {
        position: [0.0; 3],
        orientation: Quat::IDENTITY,
    };

    pub fn new(position: Vec3, orientation: Quat) -> Result<Self> {
        if !finite3(position) {
            return Err(Error::NonFinite("pose position"));
        }
        let orientation = Quat::new(orientation.w, orientation.x, orientation.y, orientation.z)?;
        Ok(Pose7 {
            position,
            orientation,
        })
    }

    pub fn translation(t: Vec3) -> Self {
        Pose7 {
            position: t,
            orientation: Quat::IDENTITY,
        }
    }

    /// `self ∘ rhs`: applying the result equals applying `rhs` then `self`.
    pub fn compose(&self, rhs: &Pose7) -> Pose7 {
        Pose7 {
            position: add(
                self.orientation.rotate_unchecked(rhs.position),
                self.position,
            ),
            orientation: self.orientation.mul(&rhs.orientation),
        }
    }

    /// Applies the pose to a point without validation; used on hot paths
    /// where inputs were validated at construction.
    pub fn apply_unchecked(&self, p: Vec3) -> Vec3 {
        add(self.orientation.rotate_unchecked(p), self.position)
    }
}

pub fn pose_apply(pose: &Pose7, p: Vec3) -> Result<Vec3> {
    Ok(add(quat_rotate(&pose.orientation, p)?, pose.position))
}

pub fn pose_inverse(pose: &Pose7) -> Pose7 {
    let inv = pose.orientation.conjugate();
    Pose7 {
        position: scale(inv.rotate_unchecked(pose.position), -1.0),
        orientation: inv,
    }
}

/// Index of a part pose inside an instrument entry.
pub const BASE: usize = 0;
pub const WRIST: usize = 1;
pub const TIP: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicsSample {
    pub timestamp: f64,
    /// One entry per instrument: base, wrist and tip poses in that order.
    pub instruments: Vec<[Pose7; 3]>,
    pub camera: Pose7,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicsStream {
    samples: Vec<KinematicsSample>,
    pub rate_hz: f64,
}

impl KinematicsStream {
    pub fn new(samples: Vec<KinematicsSample>, rate_hz: f64) -> Result<Self> {
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(Error::KinematicsLog {
                    line: i + 1,
                    msg: format!(
                        "timestamps not strictly increasing ({} then {})",
                        w[0].timestamp, w[1].timestamp
                    ),
                });
            }
        }
        Ok(KinematicsStream { samples, rate_hz })
    }

    pub fn samples(&self) -> &[KinematicsSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Largest gap between consecutive timestamps (0 for fewer than two samples).
    pub fn max_gap(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| w[1].timestamp - w[0].timestamp)
            .fold(0.0, f64::max)
    }
}

/// Sample whose timestamp is nearest to `t`; exact ties go to the earlier sample.
pub fn nearest_sample(stream: &KinematicsStream, t: f64) -> Result<&KinematicsSample> {
    let s = stream.samples();
    if s.is_empty() {
        return Err(Error::EmptyStream);
    }
    // first index with timestamp >= t
    let idx = s.partition_point(|x| x.timestamp < t);
    if idx == 0 {
        return Ok(&s[0]);
    }
    if idx == s.len() {
        return Ok(&s[s.len() - 1]);
    }
    let (before, after) = (&s[idx - 1], &s[idx]);
    if after.timestamp - t < t - before.timestamp {
        Ok(after)
    } else {
        Ok(before)
    }
}

/// Parses the line-oriented kinematics log:
/// `timestamp, instrument_id, part_id, px, py, pz, qw, qx, qy, qz`
/// where part_id is 0=base, 1=wrist, 2=tip or -1 for the camera. Records
/// sharing a timestamp form one sample; `#` starts a comment.
pub fn parse_kinematics_log(text: &str) -> Result<KinematicsStream> {
    struct Pending {
        timestamp: f64,
        parts: Vec<[Option<Pose7>; 3]>,
        camera: Option<Pose7>,
        line: usize,
    }

    fn finish(p: Pending) -> Result<KinematicsSample> {
        let line = p.line;
        let camera = p.camera.ok_or_else(|| Error::KinematicsLog {
            line,
            msg: format!("no camera pose at t={}", p.timestamp),
        })?;
        let mut instruments = Vec::with_capacity(p.parts.len());
        for (id, parts) in p.parts.into_iter().enumerate() {
            match parts {
                [Some(b), Some(w), Some(t)] => instruments.push([b, w, t]),
                _ => {
                    return Err(Error::KinematicsLog {
                        line,
                        msg: format!("instrument {id} at t={} lacks a part pose", p.timestamp),
                    })
                }
            }
        }
        Ok(KinematicsSample {
            timestamp: p.timestamp,
            instruments,
            camera,
        })
    }

    let mut samples = Vec::new();
    let mut pending: Option<Pending> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split(',').map(str::trim).collect();
        let err = |msg: String| Error::KinematicsLog { line, msg };
        if fields.len() != 10 {
            return Err(err(format!("expected 10 fields, found {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| err(format!("field {} `{}` is not a number", i + 1, fields[i])))
        };
        let timestamp = num(0)?;
        let instrument: i64 = fields[1]
            .parse()
            .map_err(|_| err(format!("bad instrument id `{}`", fields[1])))?;
        let part: i64 = fields[2]
            .parse()
            .map_err(|_| err(format!("bad part id `{}`", fields[2])))?;
        let position = [num(3)?, num(4)?, num(5)?];
        let q = Quat::new(num(6)?, num(7)?, num(8)?, num(9)?).map_err(|e| err(e.to_string()))?;
        let pose = Pose7::new(position, q).map_err(|e| err(e.to_string()))?;

        let same = pending.as_ref().is_some_and(|p| p.timestamp == timestamp);
        if !same {
            if let Some(p) = pending.take() {
                samples.push(finish(p)?);
            }
            pending = Some(Pending {
                timestamp,
                parts: Vec::new(),
                camera: None,
                line,
            });
        }
        let p = pending.as_mut().expect("pending sample");
        match part {
            -1 => {
                if p.camera.replace(pose).is_some() {
                    return Err(err(format!("duplicate camera pose at t={timestamp}")));
                }
            }
            0..=2 => {
                if instrument < 0 {
                    return Err(err(format!("negative instrument id {instrument}")));
                }
                let id = instrument as usize;
                if p.parts.len() <= id {
                    p.parts.resize(id + 1, [None; 3]);
                }
                if p.parts[id][part as usize].replace(pose).is_some() {
                    return Err(err(format!(
                        "duplicate pose for instrument {id} part {part} at t={timestamp}"
                    )));
                }
            }
            other => return Err(err(format!("part id {other} not in {{-1, 0, 1, 2}}"))),
        }
    }
    if let Some(p) = pending.take() {
        samples.push(finish(p)?);
    }
    let rate_hz = if samples.len() >= 2 {
        let span = samples[samples.len() - 1].timestamp - samples[0].timestamp;
        (samples.len() - 1) as f64 / span
    } else {
        0.0
    };
    KinematicsStream::new(samples, rate_hz)
}

pub fn format_kinematics_log(samples: &[KinematicsSample]) -> String {
    let mut out = String::from("# timestamp, instrument_id, part_id, px, py, pz, qw, qx, qy, qz\n");
    let mut row = |t: f64, inst: i64, part: i64, p: &Pose7| {
        let q = p.orientation;
        // {:?} keeps the shortest round-trip representation of each f64
        let _ = writeln!(
            out,
            "{:?}, {}, {}, {:?}, {:?}, {:?}, {:?}, {:?}, {:?}, {:?}",
            t, inst, part, p.position[0], p.position[1], p.position[2], q.w, q.x, q.y, q.z
        );
    };
    for s in samples {
        for (id, parts) in s.instruments.iter().enumerate() {
            for (k, pose) in parts.iter().enumerate() {
                row(s.timestamp, id as i64, k as i64, pose);
            }
        }
        row(s.timestamp, -1, -1, &s.camera);
    }
    out
}

pub fn load_kinematics_log(path: &Path) -> Result<KinematicsStream> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kinematics_log(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rotation matrix of a unit quaternion, written out term by term.
    fn rot_matrix(q: &Quat) -> [[f64; 3]; 3] {
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    fn mat_vec(m: &[[f64; 3]; 3], p: Vec3) -> Vec3 {
        [dot(m[0], p), dot(m[1], p), dot(m[2], p)]
    }

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (0..3).all(|i| (a[i] - b[i]).abs() <= tol)
    }

    #[test]
    fn identity_rotation() {
        assert_eq!(
            quat_rotate(&Quat::IDENTITY, [3.0, 4.0, 5.0]).unwrap(),
            [3.0, 4.0, 5.0]
        );
    }

    #[test]
    fn quarter_turn_about_z_matches_matrix() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let q = Quat::new(h, 0.0, 0.0, h).unwrap();
        let got = quat_rotate(&q, [1.0, 0.0, 0.0]).unwrap();
        let oracle = mat_vec(&rot_matrix(&q), [1.0, 0.0, 0.0]);
        assert!(close(oracle, [0.0, 1.0, 0.0], 1e-12));
        assert!(close(got, oracle, 1e-12));
    }

    #[test]
    fn half_turn_about_x_matches_matrix() {
        let q = Quat::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let got = quat_rotate(&q, [0.0, 1.0, 0.0]).unwrap();
        let oracle = mat_vec(&rot_matrix(&q), [0.0, 1.0, 0.0]);
        assert!(close(oracle, [0.0, -1.0, 0.0], 1e-12));
        assert!(close(got, oracle, 1e-12));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(quat_rotate(&Quat::IDENTITY, [f64::NAN, 0.0, 0.0]).is_err());
        assert!(Quat::new(f64::INFINITY, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn corrupt_norm_rejected() {
        assert!(matches!(
            Quat::new(0.1, 0.0, 0.0, 0.0),
            Err(Error::CorruptQuaternion(_))
        ));
        assert!(matches!(
            Quat::new(3.0, 0.0, 0.0, 0.0),
            Err(Error::CorruptQuaternion(_))
        ));
        let q = Quat::new(1.5, 0.0, 0.0, 0.0).unwrap();
        assert!((q.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pose_apply_cases() {
        assert_eq!(
            pose_apply(&Pose7::IDENTITY, [1.0, 2.0, 3.0]).unwrap(),
            [1.0, 2.0, 3.0]
        );
        let t = Pose7::translation([10.0, 0.0, 0.0]);
        assert_eq!(pose_apply(&t, [1.0, 0.0, 0.0]).unwrap(), [11.0, 0.0, 0.0]);

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let q = Quat::new(h, 0.0, 0.0, h).unwrap();
        let pose = Pose7::new([0.0, 0.0, 1.0], q).unwrap();
        let oracle = add(mat_vec(&rot_matrix(&q), [1.0, 0.0, 0.0]), [0.0, 0.0, 1.0]);
        let got = pose_apply(&pose, [1.0, 0.0, 0.0]).unwrap();
        assert!(close(got, oracle, 1e-12));
        assert!(close(got, [0.0, 1.0, 1.0], 1e-12));
    }

    #[test]
    fn inverse_of_identity_and_translation() {
        assert_eq!(pose_inverse(&Pose7::IDENTITY), Pose7::IDENTITY);
        let inv = pose_inverse(&Pose7::translation([1.0, -2.0, 3.5]));
        assert_eq!(inv.position, [-1.0, 2.0, -3.5]);
        assert_eq!(inv.orientation, Quat::IDENTITY);
    }

    #[test]
    fn compose_matches_sequential_application() {
        let a = Pose7::new(
            [1.0, 2.0, 3.0],
            Quat::from_axis_angle([0.3, 1.0, -0.2], 0.7),
        )
        .unwrap();
        let b = Pose7::new(
            [-4.0, 0.5, 2.0],
            Quat::from_axis_angle([1.0, 0.0, 0.4], -1.1),
        )
        .unwrap();
        let p = [0.3, -0.7, 2.2];
        let seq = pose_apply(&a, pose_apply(&b, p).unwrap()).unwrap();
        let comp = pose_apply(&a.compose(&b), p).unwrap();
        assert!(close(seq, comp, 1e-12));
    }

    fn stream(ts: &[f64]) -> KinematicsStream {
        let samples = ts
            .iter()
            .map(|&t| KinematicsSample {
                timestamp: t,
                instruments: vec![[Pose7::IDENTITY; 3]],
                camera: Pose7::IDENTITY,
            })
            .collect();
        KinematicsStream::new(samples, 5.0).unwrap()
    }

    #[test]
    fn nearest_sample_examples() {
        let s = stream(&[0.0, 0.2, 0.4]);
        assert_eq!(nearest_sample(&s, 0.19).unwrap().timestamp, 0.2);
        assert_eq!(nearest_sample(&s, 0.1).unwrap().timestamp, 0.0);
        assert_eq!(nearest_sample(&s, -5.0).unwrap().timestamp, 0.0);
        assert_eq!(nearest_sample(&s, 9.0).unwrap().timestamp, 0.4);
        assert!(matches!(
            nearest_sample(&stream(&[]), 0.0),
            Err(Error::EmptyStream)
        ));
    }

    #[test]
    fn non_monotone_stream_rejected() {
        let samples = [0.0, 0.2, 0.2]
            .iter()
            .map(|&t| KinematicsSample {
                timestamp: t,
                instruments: vec![],
                camera: Pose7::IDENTITY,
            })
            .collect();
        assert!(KinematicsStream::new(samples, 5.0).is_err());
    }

    #[test]
    fn log_round_trip() {
        let q = Quat::from_axis_angle([0.0, 1.0, 0.0], 0.3);
        let pose = Pose7::new([1.0, 2.0, 3.0], q).unwrap();
        let samples = vec![
            KinematicsSample {
                timestamp: 0.0,
                instruments: vec![[pose, Pose7::IDENTITY, pose]],
                camera: Pose7::translation([0.0, 0.0, -5.0]),
            },
            KinematicsSample {
                timestamp: 0.2,
                instruments: vec![[Pose7::IDENTITY; 3]],
                camera: Pose7::IDENTITY,
            },
        ];
        let text = format_kinematics_log(&samples);
        let stream = parse_kinematics_log(&text).unwrap();
        assert_eq!(stream.samples(), &samples[..]);
        assert!((stream.rate_hz - 5.0).abs() < 1e-9);
    }

    #[test]
    fn log_errors() {
        let missing_camera =
            "0.0, 0, 0, 0,0,0, 1,0,0,0\n0.0, 0, 1, 0,0,0, 1,0,0,0\n0.0, 0, 2, 0,0,0, 1,0,0,0\n";
        assert!(parse_kinematics_log(missing_camera).is_err());
        let missing_part = "0.0, 0, 0, 0,0,0, 1,0,0,0\n0.0, -1, -1, 0,0,0, 1,0,0,0\n";
        assert!(parse_kinematics_log(missing_part).is_err());
        let bad_part = "0.0, 0, 7, 0,0,0, 1,0,0,0\n";
        assert!(parse_kinematics_log(bad_part).is_err());
        let short = "0.0, 0, 0, 0,0,0\n";
        assert!(parse_kinematics_log(short).is_err());
    }
}
