//! Upper-body pose geometry: the 9-joint human skeleton, its normalized
//! 25-value direction encoding, the mapping onto 10 robot joint angles, and
//! forward kinematics of the robot's upper body.
//!
//! Frames are right-handed with `+y` up. The body frame used by the joint
//! angles has `+x` toward the body's left and `+z` forward. Joint numbers in
//! error messages are 1-based (1 torso ... 9 right wrist).

use std::ops::{Add, Mul, Neg, Sub};

/// Segments below this length have no meaningful direction.
pub const DEGENERATE_LEN: f64 = 1e-6;
/// Below this elbow bend the elbow yaw is unobservable and reported as 0.
pub const STRAIGHT_ARM_BEND: f64 = 1e-3;

pub const NUM_JOINTS: usize = 9;
pub const USER_VEC_LEN: usize = 25;
pub const NUM_ANGLES: usize = 10;

pub const TORSO: usize = 0;
pub const SPINE_SHOULDER: usize = 1;
pub const HEAD: usize = 2;
pub const LEFT_SHOULDER: usize = 3;
pub const LEFT_ELBOW: usize = 4;
pub const LEFT_WRIST: usize = 5;
pub const RIGHT_SHOULDER: usize = 6;
pub const RIGHT_ELBOW: usize = 7;
pub const RIGHT_WRIST: usize = 8;

/// Joints compared by the key-pose and final-pose metrics: head and both wrists.
pub const TRACKED_JOINTS: [usize; 3] = [HEAD, LEFT_WRIST, RIGHT_WRIST];

/// Segments encoded by the user pose vector, in encoding order (0-based joints).
pub const VECTOR_SEGMENTS: [(usize, usize); 8] = [
    (TORSO, SPINE_SHOULDER),
    (SPINE_SHOULDER, HEAD),
    (SPINE_SHOULDER, LEFT_SHOULDER),
    (LEFT_SHOULDER, LEFT_ELBOW),
    (LEFT_ELBOW, LEFT_WRIST),
    (SPINE_SHOULDER, RIGHT_SHOULDER),
    (RIGHT_SHOULDER, RIGHT_ELBOW),
    (RIGHT_ELBOW, RIGHT_WRIST),
];

/// Segments whose directions the joint angles reproduce.
pub const LIMB_SEGMENTS: [(usize, usize); 6] = [
    (TORSO, SPINE_SHOULDER),
    (SPINE_SHOULDER, HEAD),
    (LEFT_SHOULDER, LEFT_ELBOW),
    (LEFT_ELBOW, LEFT_WRIST),
    (RIGHT_SHOULDER, RIGHT_ELBOW),
    (RIGHT_ELBOW, RIGHT_WRIST),
];

pub const HIP_PITCH: usize = 0;
pub const HEAD_PITCH: usize = 1;
pub const L_SHOULDER_PITCH: usize = 2;
pub const L_SHOULDER_ROLL: usize = 3;
pub const L_ELBOW_YAW: usize = 4;
pub const L_ELBOW_ROLL: usize = 5;
pub const R_SHOULDER_PITCH: usize = 6;
pub const R_SHOULDER_ROLL: usize = 7;
pub const R_ELBOW_YAW: usize = 8;
pub const R_ELBOW_ROLL: usize = 9;

pub const ANGLE_NAMES: [&str; NUM_ANGLES] = [
    "hip_pitch",
    "head_pitch",
    "l_shoulder_pitch",
    "l_shoulder_roll",
    "l_elbow_yaw",
    "l_elbow_roll",
    "r_shoulder_pitch",
    "r_shoulder_roll",
    "r_elbow_yaw",
    "r_elbow_roll",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SkeletonError {
    #[error("degenerate segment between joints {0} and {1}")]
    DegenerateSegment(usize, usize),
    #[error("non-finite joint coordinate at joint {0}")]
    NonFinite(usize),
    #[error("expected {expected} values, got {got}")]
    WrongLength { expected: usize, got: usize },
}

/// A 3D point or direction in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Joint3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Joint3 {
    pub const ZERO: Joint3 = Joint3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Joint3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl Add for Joint3 {
    type Output = Joint3;
    fn add(self, o: Joint3) -> Joint3 {
        Joint3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Joint3 {
    type Output = Joint3;
    fn sub(self, o: Joint3) -> Joint3 {
        Joint3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Joint3 {
    type Output = Joint3;
    fn mul(self, k: f64) -> Joint3 {
        Joint3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Joint3 {
    type Output = Joint3;
    fn neg(self) -> Joint3 {
        Joint3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3×3 rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rot3([[f64; 3]; 3]);

impl Rot3 {
    pub const IDENTITY: Rot3 = Rot3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn about_x(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Rot3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    pub fn about_y(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Rot3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    pub fn about_z(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Rot3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn then(self, o: Rot3) -> Rot3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Rot3(r)
    }

    pub fn transpose(self) -> Rot3 {
        let m = self.0;
        Rot3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn apply(self, v: Joint3) -> Joint3 {
        let m = self.0;
        Joint3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }
}

/// Nine upper-body joints in camera coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HumanPose {
    pub joints: [Joint3; NUM_JOINTS],
}

impl HumanPose {
    pub fn new(joints: [Joint3; NUM_JOINTS]) -> Result<Self, SkeletonError> {
        if let Some(i) = joints.iter().position(|j| !j.is_finite()) {
            return Err(SkeletonError::NonFinite(i + 1));
        }
        Ok(Self { joints })
    }

    pub fn from_flat(values: &[f64]) -> Result<Self, SkeletonError> {
        if values.len() != 3 * NUM_JOINTS {
            return Err(SkeletonError::WrongLength {
                expected: 3 * NUM_JOINTS,
                got: values.len(),
            });
        }
        let mut joints = [Joint3::ZERO; NUM_JOINTS];
        for (j, c) in joints.iter_mut().zip(values.chunks(3)) {
            *j = Joint3::from_slice(c);
        }
        Self::new(joints)
    }

    pub fn joint(&self, j: usize) -> Joint3 {
        self.joints[j]
    }

    pub fn translated(&self, t: Joint3) -> Self {
        Self {
            joints: self.joints.map(|j| j + t),
        }
    }

    pub fn rotated(&self, r: Rot3) -> Self {
        Self {
            joints: self.joints.map(|j| r.apply(j)),
        }
    }

    fn direction(&self, a: usize, b: usize) -> Result<Joint3, SkeletonError> {
        unit(self.joints[b] - self.joints[a]).ok_or(SkeletonError::DegenerateSegment(a + 1, b + 1))
    }
}

fn unit(v: Joint3) -> Option<Joint3> {
    let n = v.norm();
    (n > DEGENERATE_LEN).then(|| v * (1.0 / n))
}

/// Nine joints concatenated as 27 coordinates, joint-major.
pub fn human_pose_to_flat27(pose: &HumanPose) -> [f64; 27] {
    let mut out = [0.0; 27];
    for (chunk, j) in out.chunks_mut(3).zip(&pose.joints) {
        chunk.copy_from_slice(&j.to_array());
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationConfig {
    /// Camera-to-torso distance mapped to `d = 1`, meters.
    pub d_max: f64,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self { d_max: 5.0 }
    }
}

/// Eight unit limb directions followed by the normalized torso distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UserPoseVec {
    pub values: [f64; USER_VEC_LEN],
}

impl UserPoseVec {
    pub fn direction(&self, k: usize) -> Joint3 {
        Joint3::from_slice(&self.values[3 * k..3 * k + 3])
    }

    pub fn distance(&self) -> f64 {
        self.values[24]
    }
}

/// Encodes a pose as eight unit segment directions plus `‖p_torso‖ / d_max`.
pub fn normalize_user_pose(
    pose: &HumanPose,
    cfg: &NormalizationConfig,
) -> Result<UserPoseVec, SkeletonError> {
    let mut values = [0.0; USER_VEC_LEN];
    for (k, &(a, b)) in VECTOR_SEGMENTS.iter().enumerate() {
        let d = pose.direction(a, b)?;
        values[3 * k..3 * k + 3].copy_from_slice(&d.to_array());
    }
    values[24] = pose.joints[TORSO].norm() / cfg.d_max;
    Ok(UserPoseVec { values })
}

/// The responder's skeleton in the same 25-value encoding as the user.
pub fn robot_pose_to_vec25(
    pose: &HumanPose,
    cfg: &NormalizationConfig,
) -> Result<UserPoseVec, SkeletonError> {
    normalize_user_pose(pose, cfg)
}

/// Segment lengths of the robot's upper body, meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkLengths {
    pub torso_spine: f64,
    pub spine_head: f64,
    pub spine_shoulder: f64,
    pub upper_arm: f64,
    pub forearm: f64,
}

impl Default for LinkLengths {
    fn default() -> Self {
        Self {
            torso_spine: 0.3,
            spine_head: 0.15,
            spine_shoulder: 0.08,
            upper_arm: 0.15,
            forearm: 0.15,
        }
    }
}

impl LinkLengths {
    /// Length of the chain segment between two adjacent joints (0-based).
    pub fn segment(&self, a: usize, b: usize) -> Option<f64> {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        Some(match (a, b) {
            (TORSO, SPINE_SHOULDER) => self.torso_spine,
            (SPINE_SHOULDER, HEAD) => self.spine_head,
            (SPINE_SHOULDER, LEFT_SHOULDER) | (SPINE_SHOULDER, RIGHT_SHOULDER) => self.spine_shoulder,
            (LEFT_SHOULDER, LEFT_ELBOW) | (RIGHT_SHOULDER, RIGHT_ELBOW) => self.upper_arm,
            (LEFT_ELBOW, LEFT_WRIST) | (RIGHT_ELBOW, RIGHT_WRIST) => self.forearm,
            _ => return None,
        })
    }
}

/// Ten upper-body joint angles, radians, in [`ANGLE_NAMES`] order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RobotJointAngles {
    pub angles: [f64; NUM_ANGLES],
}

impl RobotJointAngles {
    pub fn new(angles: [f64; NUM_ANGLES]) -> Self {
        Self { angles }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self, SkeletonError> {
        let angles: [f64; NUM_ANGLES] = v.try_into().map_err(|_| SkeletonError::WrongLength {
            expected: NUM_ANGLES,
            got: v.len(),
        })?;
        Ok(Self { angles })
    }
}

/// Closed interval per joint angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointLimits {
    pub bounds: [(f64, f64); NUM_ANGLES],
}

impl Default for JointLimits {
    fn default() -> Self {
        let pitch = (-0.64, 0.64);
        let sh_pitch = (-2.09, 2.09);
        let sh_roll = (-1.56, 1.56);
        let el_yaw = (-2.09, 2.09);
        let el_roll = (0.0, 1.56);
        Self {
            bounds: [
                pitch, pitch, sh_pitch, sh_roll, el_yaw, el_roll, sh_pitch, sh_roll, el_yaw, el_roll,
            ],
        }
    }
}

impl JointLimits {
    pub fn contains_strictly(&self, a: &RobotJointAngles) -> bool {
        a.angles
            .iter()
            .zip(&self.bounds)
            .all(|(&v, &(lo, hi))| v > lo && v < hi)
    }
}

/// Projects every angle into its interval.
pub fn clamp_joint_limits(angles: &RobotJointAngles, limits: &JointLimits) -> RobotJointAngles {
    let mut out = *angles;
    for (v, &(lo, hi)) in out.angles.iter_mut().zip(&limits.bounds) {
        *v = v.clamp(lo, hi);
    }
    out
}

/// Joint positions relative to the torso.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FkPose {
    pub positions: [Joint3; NUM_JOINTS],
}

impl FkPose {
    pub fn joint(&self, j: usize) -> Joint3 {
        self.positions[j]
    }
}

const DOWN: Joint3 = Joint3::new(0.0, -1.0, 0.0);
const UP: Joint3 = Joint3::new(0.0, 1.0, 0.0);

/// Upper-arm rotation in the torso frame. `side` is +1 for left, -1 for right.
fn shoulder_rot(pitch: f64, roll: f64, side: f64) -> Rot3 {
    Rot3::about_x(-pitch).then(Rot3::about_z(side * roll))
}

/// Forearm rotation relative to the upper arm.
fn elbow_rot(yaw: f64, bend: f64, side: f64) -> Rot3 {
    Rot3::about_y(side * yaw).then(Rot3::about_x(-bend))
}

/// Positions of the nine joints for the given angles, torso at the origin.
pub fn forward_kinematics(angles: &RobotJointAngles, links: &LinkLengths) -> FkPose {
    let a = &angles.angles;
    let hip = Rot3::about_x(a[HIP_PITCH]);
    let mut p = [Joint3::ZERO; NUM_JOINTS];
    p[SPINE_SHOULDER] = hip.apply(UP * links.torso_spine);
    p[HEAD] = p[SPINE_SHOULDER] + hip.then(Rot3::about_x(a[HEAD_PITCH])).apply(UP * links.spine_head);

    for (side, sh, el, wr, base) in [
        (1.0, LEFT_SHOULDER, LEFT_ELBOW, LEFT_WRIST, L_SHOULDER_PITCH),
        (-1.0, RIGHT_SHOULDER, RIGHT_ELBOW, RIGHT_WRIST, R_SHOULDER_PITCH),
    ] {
        let upper = hip.then(shoulder_rot(a[base], a[base + 1], side));
        let fore = upper.then(elbow_rot(a[base + 2], a[base + 3], side));
        p[sh] = p[SPINE_SHOULDER] + hip.apply(Joint3::new(side * links.spine_shoulder, 0.0, 0.0));
        p[el] = p[sh] + upper.apply(DOWN * links.upper_arm);
        p[wr] = p[el] + fore.apply(DOWN * links.forearm);
    }
    FkPose { positions: p }
}

/// Joint angles reproducing the pose's limb directions, clamped into `limits`.
///
/// Only segment directions are used, so the pose's limb lengths do not matter.
/// The pose is read in the body frame (see module docs).
pub fn skeleton_to_joint_angles(
    pose: &HumanPose,
    limits: &JointLimits,
) -> Result<RobotJointAngles, SkeletonError> {
    Ok(clamp_joint_limits(&skeleton_to_joint_angles_unclamped(pose)?, limits))
}

pub fn skeleton_to_joint_angles_unclamped(pose: &HumanPose) -> Result<RobotJointAngles, SkeletonError> {
    let mut a = [0.0; NUM_ANGLES];
    let spine = pose.direction(TORSO, SPINE_SHOULDER)?;
    a[HIP_PITCH] = spine.z.atan2(spine.y);
    let to_torso = Rot3::about_x(-a[HIP_PITCH]);

    let head = to_torso.apply(pose.direction(SPINE_SHOULDER, HEAD)?);
    a[HEAD_PITCH] = head.z.atan2(head.y);

    for (side, sh, el, wr, base) in [
        (1.0, LEFT_SHOULDER, LEFT_ELBOW, LEFT_WRIST, L_SHOULDER_PITCH),
        (-1.0, RIGHT_SHOULDER, RIGHT_ELBOW, RIGHT_WRIST, R_SHOULDER_PITCH),
    ] {
        let upper = to_torso.apply(pose.direction(sh, el)?);
        let fore = to_torso.apply(pose.direction(el, wr)?);
        // upper = (side·sin r, -cos p cos r, sin p cos r)
        let roll = (side * upper.x).clamp(-1.0, 1.0).asin();
        let pitch = upper.z.atan2(-upper.y);
        let local = shoulder_rot(pitch, roll, side).transpose().apply(fore);
        // local = (side·sin b sin ψ, -cos b, sin b cos ψ)
        let bend = (-local.y).clamp(-1.0, 1.0).acos();
        let yaw = if bend < STRAIGHT_ARM_BEND {
            0.0
        } else {
            (side * local.x).atan2(local.z)
        };
        a[base] = pitch;
        a[base + 1] = roll;
        a[base + 2] = yaw;
        a[base + 3] = bend;
    }
    Ok(RobotJointAngles { angles: a })
}

/// Rotates the pose about the vertical axis so its shoulder line (right to left) points along `+x`.
///
/// Poses whose shoulder line is vertical are returned unchanged.
pub fn align_to_body_frame(pose: &HumanPose) -> HumanPose {
    let s = pose.joints[LEFT_SHOULDER] - pose.joints[RIGHT_SHOULDER];
    if s.x.hypot(s.z) <= DEGENERATE_LEN {
        return *pose;
    }
    pose.rotated(Rot3::about_y(s.z.atan2(s.x)))
}

/// Places a 25-value direction encoding on the robot's links, torso at the origin.
///
/// Direction blocks are renormalized first; a zero block leaves its segment collapsed.
pub fn positions_from_vec25(values: &[f64], links: &LinkLengths) -> FkPose {
    let mut p = [Joint3::ZERO; NUM_JOINTS];
    for (k, &(a, b)) in VECTOR_SEGMENTS.iter().enumerate() {
        let d = Joint3::from_slice(&values[3 * k..3 * k + 3]);
        let dir = unit(d).unwrap_or(Joint3::ZERO);
        let len = links.segment(a, b).expect("vector segments are chain segments");
        p[b] = p[a] + dir * len;
    }
    FkPose { positions: p }
}

/// Unit directions of [`LIMB_SEGMENTS`] for a set of joint positions.
pub fn limb_directions(positions: &[Joint3; NUM_JOINTS]) -> [Joint3; 6] {
    LIMB_SEGMENTS.map(|(a, b)| unit(positions[b] - positions[a]).unwrap_or(Joint3::ZERO))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn j(x: f64, y: f64, z: f64) -> Joint3 {
        Joint3::new(x, y, z)
    }

    /// Both arms hanging, upright spine and head.
    fn rest_pose() -> HumanPose {
        HumanPose::new([
            j(0.0, 0.0, 2.0),
            j(0.0, 0.5, 2.0),
            j(0.0, 0.7, 2.0),
            j(0.2, 0.5, 2.0),
            j(0.2, 0.2, 2.0),
            j(0.2, -0.05, 2.0),
            j(-0.2, 0.5, 2.0),
            j(-0.2, 0.2, 2.0),
            j(-0.2, -0.05, 2.0),
        ])
        .unwrap()
    }

    fn close(a: Joint3, b: Joint3, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn torso_distance_scales_linearly() {
        let pose = rest_pose().translated(j(0.0, 0.0, 0.5));
        let u = normalize_user_pose(&pose, &NormalizationConfig::default()).unwrap();
        assert!((u.distance() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn axis_aligned_segment_is_unit_axis() {
        let mut joints = rest_pose().joints;
        joints[SPINE_SHOULDER] = joints[TORSO] + j(0.0, 0.3, 0.0);
        let u = normalize_user_pose(&HumanPose::new(joints).unwrap(), &NormalizationConfig::default()).unwrap();
        assert_eq!(u.direction(0), j(0.0, 1.0, 0.0));
    }

    #[test]
    fn flat27_layout() {
        let mut joints = [Joint3::ZERO; 9];
        let zeros = human_pose_to_flat27(&HumanPose::new(joints).unwrap());
        assert_eq!(zeros, [0.0; 27]);
        joints[0] = j(1.0, 2.0, 3.0);
        let flat = human_pose_to_flat27(&HumanPose::new(joints).unwrap());
        assert_eq!(&flat[..3], &[1.0, 2.0, 3.0]);
        assert!(flat[3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rest_pose_has_zero_angles() {
        let a = skeleton_to_joint_angles(&rest_pose(), &JointLimits::default()).unwrap();
        for v in a.angles {
            assert!(v.abs() < 1e-12, "{:?}", a.angles);
        }
    }

    #[test]
    fn forward_arm_is_pitch_half_pi() {
        let mut joints = rest_pose().joints;
        joints[LEFT_ELBOW] = joints[LEFT_SHOULDER] + j(0.0, 0.0, 0.25);
        joints[LEFT_WRIST] = joints[LEFT_ELBOW] + j(0.0, 0.0, 0.25);
        let a = skeleton_to_joint_angles(&HumanPose::new(joints).unwrap(), &JointLimits::default()).unwrap();
        assert!((a.angles[L_SHOULDER_PITCH] - FRAC_PI_2).abs() < 1e-12);
        assert!(a.angles[L_SHOULDER_ROLL].abs() < 1e-12);
        assert!(a.angles[L_ELBOW_ROLL].abs() < 1e-12);
    }

    #[test]
    fn coincident_elbow_and_wrist_is_degenerate() {
        let mut joints = rest_pose().joints;
        joints[LEFT_WRIST] = joints[LEFT_ELBOW];
        let pose = HumanPose::new(joints).unwrap();
        assert_eq!(
            skeleton_to_joint_angles(&pose, &JointLimits::default()),
            Err(SkeletonError::DegenerateSegment(5, 6))
        );
        assert_eq!(
            normalize_user_pose(&pose, &NormalizationConfig::default()),
            Err(SkeletonError::DegenerateSegment(5, 6))
        );
    }

    #[test]
    fn non_finite_joints_rejected() {
        let mut joints = rest_pose().joints;
        joints[3].y = f64::NAN;
        assert_eq!(HumanPose::new(joints), Err(SkeletonError::NonFinite(4)));
    }

    #[test]
    fn zero_angle_reference_table() {
        let fk = forward_kinematics(&RobotJointAngles::default(), &LinkLengths::default());
        assert_eq!(fk.joint(TORSO), j(0.0, 0.0, 0.0));
        assert_eq!(fk.joint(SPINE_SHOULDER), j(0.0, 0.3, 0.0));
        assert!(close(fk.joint(HEAD), j(0.0, 0.45, 0.0), 1e-15));
        assert_eq!(fk.joint(LEFT_SHOULDER), j(0.08, 0.3, 0.0));
        assert!(close(fk.joint(LEFT_WRIST), j(0.08, 0.0, 0.0), 1e-15));
        assert!(close(fk.joint(RIGHT_WRIST), j(-0.08, 0.0, 0.0), 1e-15));
    }

    #[test]
    fn pitched_left_arm_points_forward() {
        let mut a = RobotJointAngles::default();
        a.angles[L_SHOULDER_PITCH] = FRAC_PI_2;
        let fk = forward_kinematics(&a, &LinkLengths::default());
        assert!(close(fk.joint(LEFT_WRIST), j(0.08, 0.3, 0.30), 1e-12));
    }

    #[test]
    fn roll_moves_arms_away_from_body() {
        let mut a = RobotJointAngles::default();
        a.angles[L_SHOULDER_ROLL] = 0.5;
        a.angles[R_SHOULDER_ROLL] = 0.5;
        let fk = forward_kinematics(&a, &LinkLengths::default());
        assert!(fk.joint(LEFT_ELBOW).x > 0.08);
        assert!(fk.joint(RIGHT_ELBOW).x < -0.08);
    }

    #[test]
    fn clamp_projects_and_is_idempotent() {
        let limits = JointLimits::default();
        let inside = RobotJointAngles::new([0.1, -0.2, 1.0, 0.5, 0.3, 0.4, -1.0, -0.5, 0.0, 1.0]);
        assert_eq!(clamp_joint_limits(&inside, &limits), inside);
        let mut l = limits;
        l.bounds[HIP_PITCH] = (-1.0, 1.0);
        let mut over = inside;
        over.angles[HIP_PITCH] = 2.0;
        assert_eq!(clamp_joint_limits(&over, &l).angles[HIP_PITCH], 1.0);
    }

    #[test]
    fn body_frame_alignment_undoes_yaw() {
        let pose = rest_pose();
        for yaw in [0.3, 1.7, -2.9, std::f64::consts::PI] {
            let turned = pose.rotated(Rot3::about_y(yaw));
            let back = align_to_body_frame(&turned);
            // rotation is about the camera origin, so compare torso-relative positions
            let ra = back.joints.map(|p| p - back.joints[TORSO]);
            let rb = pose.joints.map(|p| p - pose.joints[TORSO]);
            for (a, b) in ra.iter().zip(&rb) {
                assert!(close(*a, *b, 1e-12), "yaw {yaw}");
            }
        }
    }

    #[test]
    fn vec25_placement_matches_fk_directions() {
        let a = RobotJointAngles::new([0.2, -0.1, 0.7, 0.3, 0.5, 0.9, -0.4, 0.2, -0.6, 0.4]);
        let links = LinkLengths::default();
        let fk = forward_kinematics(&a, &links);
        let pose = HumanPose::new(fk.positions.map(|p| p + j(0.0, 0.0, 3.0))).unwrap();
        let v = robot_pose_to_vec25(&pose, &NormalizationConfig::default()).unwrap();
        let placed = positions_from_vec25(&v.values, &links);
        for (a, b) in placed.positions.iter().zip(&fk.positions) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    fn arb_angles() -> impl Strategy<Value = [f64; NUM_ANGLES]> {
        prop::array::uniform10(-3.0f64..3.0)
    }

    fn arb_pose() -> impl Strategy<Value = HumanPose> {
        prop::array::uniform9(prop::array::uniform3(-2.0f64..2.0)).prop_filter_map("non-degenerate", |js| {
            let pose = HumanPose::new(js.map(|c| j(c[0], c[1], c[2]))).ok()?;
            VECTOR_SEGMENTS
                .iter()
                .all(|&(a, b)| (pose.joints[b] - pose.joints[a]).norm() > 1e-3)
                .then_some(pose)
        })
    }

    proptest! {
        #[test]
        fn fk_preserves_segment_lengths(angles in arb_angles()) {
            let links = LinkLengths::default();
            let fk = forward_kinematics(&RobotJointAngles::new(angles), &links);
            prop_assert_eq!(fk.joint(TORSO), Joint3::ZERO);
            for &(a, b) in VECTOR_SEGMENTS.iter() {
                let len = (fk.joint(b) - fk.joint(a)).norm();
                prop_assert!((len - links.segment(a, b).unwrap()).abs() < 1e-9);
            }
        }

        #[test]
        fn normalization_is_unit_and_invariant(pose in arb_pose(), t in prop::array::uniform3(-3.0f64..3.0), s in 0.1f64..5.0) {
            let cfg = NormalizationConfig::default();
            let u = normalize_user_pose(&pose, &cfg).unwrap();
            for k in 0..8 {
                prop_assert!((u.direction(k).norm() - 1.0).abs() < 1e-9);
            }
            let moved = normalize_user_pose(&pose.translated(j(t[0], t[1], t[2])), &cfg).unwrap();
            for i in 0..24 {
                prop_assert!((moved.values[i] - u.values[i]).abs() < 1e-9);
            }
            let torso = pose.joints[TORSO];
            let scaled = HumanPose::new(pose.joints.map(|p| torso + (p - torso) * s)).unwrap();
            let us = normalize_user_pose(&scaled, &cfg).unwrap();
            for i in 0..25 {
                prop_assert!((us.values[i] - u.values[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn clamp_is_idempotent(angles in arb_angles()) {
            let limits = JointLimits::default();
            let once = clamp_joint_limits(&RobotJointAngles::new(angles), &limits);
            prop_assert_eq!(clamp_joint_limits(&once, &limits), once);
        }
    }
}
