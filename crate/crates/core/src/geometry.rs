//! 6-DoF poses, quaternion algebra, and the translation / rotation error
//! metrics used by every evaluation report.
//!
//! Conventions fixed here and relied on by the file formats:
//! - quaternions are stored in `(w, x, y, z)` order,
//! - every quaternion is unit norm and sign-canonicalized so that `w >= 0`
//!   (ties broken by the first nonzero component of `(x, y, z)` being >= 0),
//! - rotation error is the geodesic angle `2 * acos(|<q1, q2>|)` in degrees,
//!   which is invariant under the `q -> -q` double cover.

use crate::error::{CoreError, Result};

/// Unit quaternion in `(w, x, y, z)` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    /// Identity rotation.
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalize an arbitrary 4-vector into a canonical unit quaternion.
    ///
    /// Fails on zero or non-finite norm; the result always satisfies the
    /// `w >= 0` canonical form.
    pub fn normalize(w: f64, x: f64, y: f64, z: f64) -> Result<Quat> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() {
            return Err(CoreError::InvalidQuaternion(format!(
                "non-finite components ({w}, {x}, {y}, {z})"
            )));
        }
        if norm <= 0.0 {
            return Err(CoreError::InvalidQuaternion(
                "zero-norm quaternion".to_string(),
            ));
        }
        Ok(Quat {
            w: w / norm,
            x: x / norm,
            y: y / norm,
            z: z / norm,
        }
        .canonicalized())
    }

    /// Quaternion for a rotation of `angle_rad` about `axis` (need not be
    /// unit length; zero axis means identity).
    pub fn from_axis_angle(axis: [f64; 3], angle_rad: f64) -> Quat {
        let len = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if len == 0.0 || angle_rad == 0.0 {
            return Quat::IDENTITY;
        }
        let half = angle_rad / 2.0;
        let s = half.sin() / len;
        Quat {
            w: half.cos(),
            x: axis[0] * s,
            y: axis[1] * s,
            z: axis[2] * s,
        }
        .canonicalized()
    }

    /// Hamilton product `self * rhs` (apply `rhs` first in body frame).
    pub fn mul(&self, rhs: &Quat) -> Quat {
        Quat {
            w: self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
            x: self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            y: self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            z: self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
        }
    }

    /// Inner product of the two 4-vectors.
    pub fn dot(&self, rhs: &Quat) -> f64 {
        self.w * rhs.w + self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Flip the sign so that `w >= 0`, breaking `w == 0` ties with the first
    /// nonzero of `(x, y, z)`.
    pub fn canonicalized(self) -> Quat {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else if self.x != 0.0 {
            self.x < 0.0
        } else if self.y != 0.0 {
            self.y < 0.0
        } else {
            self.z < 0.0
        };
        if flip {
            Quat {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            self
        }
    }

    /// Renormalize after accumulated drift, keeping the canonical sign.
    pub fn renormalized(self) -> Result<Quat> {
        Quat::normalize(self.w, self.x, self.y, self.z)
    }
}

/// Camera pose: translation in meters plus a canonical unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub t: [f64; 3],
    pub q: Quat,
}

impl Pose {
    pub fn new(t: [f64; 3], q: Quat) -> Pose {
        Pose {
            t,
            q: q.canonicalized(),
        }
    }

    pub fn identity() -> Pose {
        Pose {
            t: [0.0; 3],
            q: Quat::IDENTITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.iter().all(|v| v.is_finite())
            && [self.q.w, self.q.x, self.q.y, self.q.z]
                .iter()
                .all(|v| v.is_finite())
    }
}

/// Translation / rotation error pair as reported in the summary tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    /// Euclidean translation error in meters.
    pub trans_m: f64,
    /// Geodesic rotation error in degrees, in `[0, 180]`.
    pub rot_deg: f64,
}

/// Euclidean distance between the two translations.
pub fn trans_error(pred: &Pose, gt: &Pose) -> f64 {
    dist3(pred.t, gt.t)
}

/// Geodesic rotation error in degrees. The absolute value of the quaternion
/// dot product makes the metric invariant under sign flips of either
/// argument; the clamp absorbs rounding just above 1.
pub fn rot_error(pred: &Pose, gt: &Pose) -> f64 {
    let d = pred.q.dot(&gt.q).abs().min(1.0);
    (2.0 * d.acos()).to_degrees()
}

/// Both error components at once.
pub fn pose_error(pred: &Pose, gt: &Pose) -> PoseError {
    PoseError {
        trans_m: trans_error(pred, gt),
        rot_deg: rot_error(pred, gt),
    }
}

/// Interpolate between two poses: translation linearly, rotation along the
/// shorter great-circle arc. `s = 0` gives `a`, `s = 1` gives `b`.
pub fn slerp(a: &Pose, b: &Pose, s: f64) -> Pose {
    let t = [
        a.t[0] + (b.t[0] - a.t[0]) * s,
        a.t[1] + (b.t[1] - a.t[1]) * s,
        a.t[2] + (b.t[2] - a.t[2]) * s,
    ];

    let mut qb = b.q;
    let mut dot = a.q.dot(&qb);
    if dot < 0.0 {
        qb = Quat {
            w: -qb.w,
            x: -qb.x,
            y: -qb.y,
            z: -qb.z,
        };
        dot = -dot;
    }

    // Nearly parallel: fall back to normalized lerp.
    let (wa, wb) = if dot > 1.0 - 1e-12 {
        (1.0 - s, s)
    } else {
        let theta = dot.min(1.0).acos();
        let sin_theta = theta.sin();
        (
            ((1.0 - s) * theta).sin() / sin_theta,
            (s * theta).sin() / sin_theta,
        )
    };

    let q = Quat {
        w: wa * a.q.w + wb * qb.w,
        x: wa * a.q.x + wb * qb.x,
        y: wa * a.q.y + wb * qb.y,
        z: wa * a.q.z + wb * qb.z,
    };
    // Interpolation of unit quaternions cannot hit zero norm.
    Pose::new(t, q.renormalized().expect("slerp output normalizable"))
}

pub(crate) fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Format a pose as the 7-column text record `tx ty tz qw qx qy qz`.
///
/// Uses the shortest decimal form that parses back to the exact same bits,
/// so text round-trips are lossless.
pub fn format_pose(p: &Pose) -> String {
    format!(
        "{} {} {} {} {} {} {}",
        p.t[0], p.t[1], p.t[2], p.q.w, p.q.x, p.q.y, p.q.z
    )
}

/// Parse seven whitespace-separated fields into a pose. The quaternion is
/// taken as stored, without renormalization, so round-trips are exact;
/// callers validate when ingesting foreign data.
pub fn parse_pose_fields(fields: &[&str]) -> Option<Pose> {
    if fields.len() != 7 {
        return None;
    }
    let mut v = [0.0f64; 7];
    for (slot, field) in v.iter_mut().zip(fields) {
        *slot = field.parse().ok()?;
    }
    Some(Pose {
        t: [v[0], v[1], v[2]],
        q: Quat {
            w: v[3],
            x: v[4],
            y: v[5],
            z: v[6],
        },
    })
}
