//! Poses, oriented boxes, BEV overlap, and ego-motion compensation.
//!
//! All types are immutable values and every operation is a pure function, so
//! everything here is safe to call from any number of workers.

use thiserror::Error;

use crate::scalar::Real;

/// The seven nuScenes tracking classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackingClass {
    Bicycle,
    Bus,
    Car,
    Motorcycle,
    Pedestrian,
    Trailer,
    Truck,
}

impl TrackingClass {
    pub const ALL: [TrackingClass; 7] = [
        TrackingClass::Bicycle,
        TrackingClass::Bus,
        TrackingClass::Car,
        TrackingClass::Motorcycle,
        TrackingClass::Pedestrian,
        TrackingClass::Trailer,
        TrackingClass::Truck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrackingClass::Bicycle => "bicycle",
            TrackingClass::Bus => "bus",
            TrackingClass::Car => "car",
            TrackingClass::Motorcycle => "motorcycle",
            TrackingClass::Pedestrian => "pedestrian",
            TrackingClass::Trailer => "trailer",
            TrackingClass::Truck => "truck",
        }
    }

    pub fn from_name(name: &str) -> Option<TrackingClass> {
        TrackingClass::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn index(self) -> usize {
        TrackingClass::ALL.iter().position(|&c| c == self).unwrap()
    }
}

impl std::fmt::Display for TrackingClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("box size must be strictly positive, got ({0}, {1}, {2})")]
    NonPositiveSize(f64, f64, f64),
    #[error("sin/cos pair deviates from unit norm by more than 1e-6")]
    BadSinCos,
    #[error("quaternion norm deviates from 1 by more than 1e-9")]
    BadQuaternion,
}

/// Normalize an angle into `(-pi, pi]`, with `-pi` mapped to `+pi`.
pub fn normalize_yaw<T: Real>(yaw: T) -> T {
    let tau = T::TAU();
    let mut r = yaw - (yaw / tau).floor() * tau; // [0, tau)
    if r > T::PI() {
        r = r - tau;
    }
    if r == -T::PI() {
        r = T::PI();
    }
    r
}

/// Rigid SE(3) pose: translation plus unit quaternion in (w, x, y, z) order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub translation: [T; 3],
    pub rotation: [T; 4],
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Pose {
            translation: [T::zero(); 3],
            rotation: [T::one(), T::zero(), T::zero(), T::zero()],
        }
    }

    pub fn from_translation(t: [T; 3]) -> Self {
        Pose {
            translation: t,
            rotation: [T::one(), T::zero(), T::zero(), T::zero()],
        }
    }

    /// Pose rotating about +z by `yaw`, then translating by `t`.
    pub fn from_yaw_translation(yaw: T, t: [T; 3]) -> Self {
        let half = yaw * T::half();
        Pose {
            translation: t,
            rotation: [half.cos(), T::zero(), T::zero(), half.sin()],
        }
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let [w, x, y, z] = self.rotation;
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        let eps = T::from_f64(1e-9).unwrap();
        if (norm - T::one()).abs() > eps {
            return Err(GeomError::BadQuaternion);
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(GeomError::NonFinite("pose translation"));
        }
        Ok(())
    }

    fn quat_mul(a: [T; 4], b: [T; 4]) -> [T; 4] {
        let [aw, ax, ay, az] = a;
        let [bw, bx, by, bz] = b;
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    }

    pub fn rotate(&self, v: [T; 3]) -> [T; 3] {
        // v' = q * (0, v) * conj(q)
        let q = self.rotation;
        let p = [T::zero(), v[0], v[1], v[2]];
        let conj = [q[0], -q[1], -q[2], -q[3]];
        let r = Self::quat_mul(Self::quat_mul(q, p), conj);
        [r[1], r[2], r[3]]
    }

    pub fn apply(&self, p: [T; 3]) -> [T; 3] {
        let r = self.rotate(p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    /// `self` then `other` applied last: `(self.then(other)).apply(p) = other.apply(self.apply(p))`.
    pub fn compose(&self, other: &Pose<T>) -> Pose<T> {
        // self: first transform, other: second; result = other * self
        Pose {
            translation: other.apply(self.translation),
            rotation: Self::quat_mul(other.rotation, self.rotation),
        }
    }

    pub fn inverse(&self) -> Pose<T> {
        let q = self.rotation;
        let conj = [q[0], -q[1], -q[2], -q[3]];
        let inv = Pose {
            translation: [T::zero(); 3],
            rotation: conj,
        };
        let t = inv.rotate(self.translation);
        Pose {
            translation: [-t[0], -t[1], -t[2]],
            rotation: conj,
        }
    }

    /// Rotation about +z implied by the quaternion.
    pub fn yaw(&self) -> T {
        let [w, x, y, z] = self.rotation;
        let s = T::two() * (w * z + x * y);
        let c = T::one() - T::two() * (y * y + z * z);
        s.atan2(c)
    }
}

/// Oriented 3D bounding box in some stated frame: the unit of detection,
/// annotation, and track state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D<T: Real> {
    pub center: [T; 3],
    /// Width, length, height; all strictly positive.
    pub size_wlh: [T; 3],
    /// Heading in `(-pi, pi]`; the box x-axis (length) points along yaw.
    pub yaw: T,
    /// BEV velocity (m/s).
    pub velocity: [T; 2],
    pub class: TrackingClass,
}

impl<T: Real> Box3D<T> {
    pub fn new(
        center: [T; 3],
        size_wlh: [T; 3],
        yaw: T,
        velocity: [T; 2],
        class: TrackingClass,
    ) -> Self {
        Box3D {
            center,
            size_wlh,
            yaw: normalize_yaw(yaw),
            velocity,
            class,
        }
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let [w, l, h] = self.size_wlh;
        if !(w > T::zero() && l > T::zero() && h > T::zero()) {
            return Err(GeomError::NonPositiveSize(
                w.to_f64().unwrap_or(f64::NAN),
                l.to_f64().unwrap_or(f64::NAN),
                h.to_f64().unwrap_or(f64::NAN),
            ));
        }
        if self.center.iter().any(|v| !v.is_finite())
            || !self.yaw.is_finite()
            || self.velocity.iter().any(|v| !v.is_finite())
        {
            return Err(GeomError::NonFinite("box"));
        }
        Ok(())
    }

    /// BEV footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[T; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.size_wlh[1] * T::half();
        let hw = self.size_wlh[0] * T::half();
        let [cx, cy, _] = self.center;
        let corner = |dx: T, dy: T| [cx + c * dx - s * dy, cy + s * dx + c * dy];
        [
            corner(hl, hw),
            corner(-hl, hw),
            corner(-hl, -hw),
            corner(hl, -hw),
        ]
    }

    pub fn footprint_area(&self) -> T {
        self.size_wlh[0] * self.size_wlh[1]
    }

    /// Whether the BEV footprint contains the point (closed boundary).
    pub fn bev_contains(&self, p: [T; 2]) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        // rotate into the box frame
        let bx = c * dx + s * dy;
        let by = -s * dx + c * dy;
        bx.abs() <= self.size_wlh[1] * T::half() && by.abs() <= self.size_wlh[0] * T::half()
    }

    /// Whether the full 3D box contains the point (closed boundary, with
    /// optional slack on all faces).
    pub fn contains(&self, p: [T; 3], slack: T) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let dz = p[2] - self.center[2];
        let bx = c * dx + s * dy;
        let by = -s * dx + c * dy;
        bx.abs() <= self.size_wlh[1] * T::half() + slack
            && by.abs() <= self.size_wlh[0] * T::half() + slack
            && dz.abs() <= self.size_wlh[2] * T::half() + slack
    }
}

/// Intersection area (m^2) of the BEV footprints of two boxes.
///
/// Exact polygon clipping of one rotated rectangle against the half-planes of
/// the other; returns 0 when disjoint.
pub fn bev_overlap_area<T: Real>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let subject = a.bev_corners();
    let clip = b.bev_corners();
    let mut poly: Vec<[T; 2]> = subject.to_vec();
    for i in 0..4 {
        if poly.is_empty() {
            return T::zero();
        }
        let e0 = clip[i];
        let e1 = clip[(i + 1) % 4];
        poly = clip_halfplane(&poly, e0, e1);
    }
    polygon_area(&poly)
}

// Keep points on the left of the directed edge e0 -> e1 (clip polygon is CCW).
fn clip_halfplane<T: Real>(poly: &[[T; 2]], e0: [T; 2], e1: [T; 2]) -> Vec<[T; 2]> {
    let side = |p: [T; 2]| (e1[0] - e0[0]) * (p[1] - e0[1]) - (e1[1] - e0[1]) * (p[0] - e0[0]);
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let cur = poly[i];
        let prev = poly[(i + poly.len() - 1) % poly.len()];
        let sc = side(cur);
        let sp = side(prev);
        let inside_cur = sc >= T::zero();
        let inside_prev = sp >= T::zero();
        if inside_cur != inside_prev {
            let t = sp / (sp - sc);
            out.push([
                prev[0] + (cur[0] - prev[0]) * t,
                prev[1] + (cur[1] - prev[1]) * t,
            ]);
        }
        if inside_cur {
            out.push(cur);
        }
    }
    out
}

/// Shoelace area of a simple polygon (absolute value).
pub fn polygon_area<T: Real>(poly: &[[T; 2]]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    (acc * T::half()).abs()
}

/// Re-express a point from the ego frame at t-1 into the ego frame at t.
///
/// Returns `pose_curr^-1 * pose_prev * center`; a world-static point keeps
/// its world coordinates.
pub fn compensate_ego_motion<T: Real>(
    center: [T; 3],
    pose_prev: &Pose<T>,
    pose_curr: &Pose<T>,
) -> [T; 3] {
    pose_curr.inverse().apply(pose_prev.apply(center))
}

/// Re-express a box given in frame `from` in frame `to`.
///
/// The center transforms as a point, yaw shifts by the relative z-rotation,
/// size is preserved exactly, and velocity rotates in the BEV plane.
pub fn transform_box<T: Real>(b: &Box3D<T>, from: &Pose<T>, to: &Pose<T>) -> Box3D<T> {
    if from == to {
        return *b;
    }
    let rel = to.inverse();
    let world_center = from.apply(b.center);
    let center = rel.apply(world_center);
    let dyaw = from.yaw() - to.yaw();
    let (s, c) = dyaw.sin_cos();
    let velocity = [
        c * b.velocity[0] - s * b.velocity[1],
        s * b.velocity[0] + c * b.velocity[1],
    ];
    Box3D {
        center,
        size_wlh: b.size_wlh,
        yaw: normalize_yaw(b.yaw + dyaw),
        velocity,
        class: b.class,
    }
}

/// 10-vector box encoding: `(x, y, z, log w, log l, log h, sin yaw, cos yaw, vx, vy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxEncoding<T: Real>(pub [T; 10]);

pub fn encode_box<T: Real>(b: &Box3D<T>) -> BoxEncoding<T> {
    let (s, c) = b.yaw.sin_cos();
    BoxEncoding([
        b.center[0],
        b.center[1],
        b.center[2],
        b.size_wlh[0].ln(),
        b.size_wlh[1].ln(),
        b.size_wlh[2].ln(),
        s,
        c,
        b.velocity[0],
        b.velocity[1],
    ])
}

pub fn decode_box<T: Real>(
    e: &BoxEncoding<T>,
    class: TrackingClass,
) -> Result<Box3D<T>, GeomError> {
    let v = e.0;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(GeomError::NonFinite("box encoding"));
    }
    let norm = v[6] * v[6] + v[7] * v[7];
    if (norm - T::one()).abs() > T::from_f64(1e-6).unwrap() {
        return Err(GeomError::BadSinCos);
    }
    Ok(Box3D {
        center: [v[0], v[1], v[2]],
        size_wlh: [v[3].exp(), v[4].exp(), v[5].exp()],
        yaw: normalize_yaw(v[6].atan2(v[7])),
        velocity: [v[8], v[9]],
        class,
    })
}

/// L1 distance between two box encodings; the regression half of the match cost.
pub fn encoding_l1<T: Real>(a: &BoxEncoding<T>, b: &BoxEncoding<T>) -> T {
    a.0.iter().zip(b.0.iter()).map(|(x, y)| (*x - *y).abs()).sum()
}

/// LiDAR sweep: `(x, y, z, intensity)` records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f32; 4]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 4]>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        for p in &self.points {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(GeomError::NonFinite("point cloud"));
            }
            if p[3] < 0.0 {
                return Err(GeomError::NonFinite("negative intensity"));
            }
        }
        Ok(())
    }
}
