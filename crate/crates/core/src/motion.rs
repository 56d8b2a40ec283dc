//! Human-motion sequences, their part-wise split, a synthetic motion
//! generator and toy forward kinematics for the body and both hands.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, AxisAngle, RotationMatrix, Vec3};
use crate::rng;

pub const BODY_FEET_DIM: usize = 66;
pub const HEAD_DIM: usize = 3;
pub const HAND_DIM: usize = 45;
pub const HANDS_DIM: usize = 2 * HAND_DIM;
pub const FRAME_DIM: usize = BODY_FEET_DIM + HEAD_DIM + HANDS_DIM;

pub const BODY_JOINTS: usize = BODY_FEET_DIM / 3;
pub const HAND_JOINTS: usize = 16;

/// Largest per-coordinate change between adjacent generated frames.
pub const MAX_FRAME_DELTA: f64 = 0.2;

/// Default frame rate of generated motion.
pub const DEFAULT_FPS: f64 = 8.0;

/// Motion parameters of one frame, grouped by body part.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionFrame {
    pub body_feet: [f64; BODY_FEET_DIM],
    pub head: [f64; HEAD_DIM],
    /// Left hand triplets followed by right hand triplets.
    pub hands: [f64; HANDS_DIM],
}

impl Default for MotionFrame {
    fn default() -> Self {
        MotionFrame {
            body_feet: [0.0; BODY_FEET_DIM],
            head: [0.0; HEAD_DIM],
            hands: [0.0; HANDS_DIM],
        }
    }
}

impl MotionFrame {
    pub fn left_hand(&self) -> &[f64] {
        &self.hands[..HAND_DIM]
    }

    pub fn right_hand(&self) -> &[f64] {
        &self.hands[HAND_DIM..]
    }

    /// Concatenation `body_feet ‖ head ‖ hands`.
    pub fn concat(&self) -> [f64; FRAME_DIM] {
        let mut out = [0.0; FRAME_DIM];
        out[..BODY_FEET_DIM].copy_from_slice(&self.body_feet);
        out[BODY_FEET_DIM..BODY_FEET_DIM + HEAD_DIM].copy_from_slice(&self.head);
        out[BODY_FEET_DIM + HEAD_DIM..].copy_from_slice(&self.hands);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.concat().iter().all(|v| v.is_finite())
    }
}

/// Split a flat 159-vector into its body+feet, head and hand groups.
pub fn split_parts(flat: &[f64]) -> Result<MotionFrame> {
    if flat.len() != FRAME_DIM {
        return Err(Error::dim(FRAME_DIM, flat.len()));
    }
    let mut frame = MotionFrame::default();
    frame.body_feet.copy_from_slice(&flat[..BODY_FEET_DIM]);
    frame
        .head
        .copy_from_slice(&flat[BODY_FEET_DIM..BODY_FEET_DIM + HEAD_DIM]);
    frame.hands.copy_from_slice(&flat[BODY_FEET_DIM + HEAD_DIM..]);
    Ok(frame)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub frames: Vec<MotionFrame>,
    pub fps: f64,
}

impl MotionSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Row-major `k x 159` parameters.
    pub fn to_flat(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.concat()).collect()
    }

    pub fn from_flat(flat: &[f64], fps: f64) -> Result<Self> {
        if flat.is_empty() || flat.len() % FRAME_DIM != 0 {
            return Err(Error::dim(format!("k x {FRAME_DIM}, k >= 1"), flat.len()));
        }
        let frames = flat
            .chunks(FRAME_DIM)
            .map(split_parts)
            .collect::<Result<Vec<_>>>()?;
        if frames.iter().any(|f| !f.is_finite()) {
            return Err(Error::NonFinite("motion parameters"));
        }
        Ok(MotionSequence { frames, fps })
    }

    /// `k x d` parameters of one group, row-major.
    pub fn group(&self, group: MotionGroup) -> Vec<f64> {
        self.frames
            .iter()
            .flat_map(|f| match group {
                MotionGroup::BodyFeet => f.body_feet.to_vec(),
                MotionGroup::Hands => f.hands.to_vec(),
                MotionGroup::Head => f.head.to_vec(),
            })
            .collect()
    }
}

/// The three parameter groups, each with its own encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionGroup {
    BodyFeet,
    Hands,
    Head,
}

impl MotionGroup {
    /// Groups in latent channel order.
    pub const ALL: [MotionGroup; 3] = [MotionGroup::BodyFeet, MotionGroup::Hands, MotionGroup::Head];

    pub fn dim(self) -> usize {
        match self {
            MotionGroup::BodyFeet => BODY_FEET_DIM,
            MotionGroup::Hands => HANDS_DIM,
            MotionGroup::Head => HEAD_DIM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionGroup::BodyFeet => "body_feet",
            MotionGroup::Hands => "hands",
            MotionGroup::Head => "head",
        }
    }
}

/// Kind of synthetic motion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Idle,
    Walk,
    Crouch,
    Wave,
}

impl Style {
    pub const ALL: [Style; 4] = [Style::Idle, Style::Walk, Style::Crouch, Style::Wave];

    pub fn as_str(self) -> &'static str {
        match self {
            Style::Idle => "idle",
            Style::Walk => "walk",
            Style::Crouch => "crouch",
            Style::Wave => "wave",
        }
    }

    /// Caption vocabulary index; zero is reserved for "no caption".
    pub fn caption_id(self) -> usize {
        match self {
            Style::Idle => 1,
            Style::Walk => 2,
            Style::Crouch => 3,
            Style::Wave => 4,
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Style::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Precondition(format!("unknown motion style '{s}'")))
    }
}

// Body joint indices used by the generator.
const L_HIP: usize = 1;
const R_HIP: usize = 2;
const L_KNEE: usize = 4;
const R_KNEE: usize = 5;
const SPINE2: usize = 6;
const R_SHOULDER: usize = 17;
const L_SHOULDER: usize = 16;
const L_ELBOW: usize = 18;
const R_ELBOW: usize = 19;

/// Sinusoid whose adjacent-frame change is bounded by `MAX_FRAME_DELTA`.
#[derive(Clone, Copy)]
struct Wave {
    amp: f64,
    omega: f64,
    phase: f64,
}

impl Wave {
    fn new(amp: f64, omega: f64, phase: f64) -> Self {
        // |sin(a+ω) − sin(a)| <= 2 sin(ω/2)
        let bound = 2.0 * amp.abs() * (omega / 2.0).sin();
        let amp = if bound > 0.9 * MAX_FRAME_DELTA {
            amp * 0.9 * MAX_FRAME_DELTA / bound
        } else {
            amp
        };
        Wave { amp, omega, phase }
    }

    fn at(&self, f: f64) -> f64 {
        self.amp * (self.omega * f + self.phase).sin()
    }
}

/// Smooth monotone ramp from 0 to `height` over `duration` frames.
fn ramp(f: f64, start: f64, duration: f64, height: f64) -> f64 {
    let x = ((f - start) / duration).clamp(0.0, 1.0);
    height * x * x * (3.0 - 2.0 * x)
}

/// Peak slope of `ramp`, per frame.
fn ramp_slope(duration: f64, height: f64) -> f64 {
    1.5 * height.abs() / duration
}

/// Synthetic motion; a pure function of `(seed, k, style)`.
///
/// Every coordinate is a constant offset plus at most one bounded term, so
/// the adjacent-frame change never exceeds [`MAX_FRAME_DELTA`]. The crouch
/// style pitches the head down monotonically while the knees bend.
pub fn synth_motion(seed: u64, k: usize, style: Style) -> Result<MotionSequence> {
    if k == 0 {
        return Err(Error::Precondition("motion needs at least one frame".into()));
    }
    let mut r = rng::substream(seed, "motion", style.caption_id() as u64);
    let mut offset = |spread: f64| -> f64 { r.random_range(-spread..=spread) };

    let mut base = MotionFrame::default();
    for v in base.body_feet.iter_mut() {
        *v = offset(0.05);
    }
    for v in base.hands.iter_mut() {
        *v = offset(0.08);
    }
    // Relaxed finger curl at rest.
    for h in 0..2 {
        for j in 1..15 {
            base.hands[h * HAND_DIM + 3 * j] += 0.15;
        }
    }

    let stride_omega = 2.0 * std::f64::consts::PI * 0.8 / DEFAULT_FPS;
    let phase = offset(std::f64::consts::PI);
    let amp_jitter = 1.0 + offset(0.2);
    let finger_omega = 0.4 + offset(0.1);
    let finger_phase = offset(std::f64::consts::PI);
    let yaw_dir = if offset(1.0) >= 0.0 { 1.0 } else { -1.0 };

    let mut frames = Vec::with_capacity(k);
    for fi in 0..k {
        let f = fi as f64;
        let mut m = base.clone();
        match style {
            Style::Idle => {}
            Style::Walk => {
                let leg = Wave::new(0.3 * amp_jitter, stride_omega, phase);
                m.body_feet[3 * L_HIP] += leg.at(f);
                m.body_feet[3 * R_HIP] -= leg.at(f);
                let knee = Wave::new(0.25 * amp_jitter, stride_omega, phase + 0.6);
                m.body_feet[3 * L_KNEE] += 0.25 + knee.at(f);
                m.body_feet[3 * R_KNEE] += 0.25 - knee.at(f);
                let arm = Wave::new(0.2, stride_omega, phase + std::f64::consts::PI);
                m.body_feet[3 * L_SHOULDER] += arm.at(f);
                m.body_feet[3 * R_SHOULDER] -= arm.at(f);
                m.head[0] = -Wave::new(0.05, 2.0 * stride_omega, phase).at(f).abs() + 0.1;
                m.head[1] = Wave::new(0.25 * yaw_dir, stride_omega / 3.0, phase).at(f);
            }
            Style::Crouch => {
                let dur = 10.0;
                m.body_feet[3 * L_KNEE] += ramp(f, 0.0, dur, 1.2);
                m.body_feet[3 * R_KNEE] += ramp(f, 0.0, dur, 1.2);
                m.body_feet[3 * L_HIP] -= ramp(f, 0.0, dur, 0.8);
                m.body_feet[3 * R_HIP] -= ramp(f, 0.0, dur, 0.8);
                m.body_feet[3 * SPINE2] += ramp(f, 0.0, dur, 0.3);
                m.head[0] = ramp(f, 0.0, dur, 0.6 * amp_jitter);
                debug_assert!(ramp_slope(dur, 1.2) < MAX_FRAME_DELTA);
            }
            Style::Wave => {
                let lift_dur = 9.0;
                m.body_feet[3 * R_SHOULDER + 2] += ramp(f, 0.0, lift_dur, 1.1);
                let elbow = Wave::new(0.35, stride_omega * 1.2, phase);
                m.body_feet[3 * R_ELBOW + 2] += elbow.at(f);
                m.body_feet[3 * L_ELBOW] += 0.1;
                m.head[1] = ramp(f, 0.0, lift_dur, 0.3 * yaw_dir);
                m.head[0] = Wave::new(0.08, stride_omega / 2.0, phase).at(f);
                debug_assert!(ramp_slope(lift_dur, 1.1) < MAX_FRAME_DELTA);
            }
        }
        if style != Style::Idle {
            let curl = Wave::new(0.15 * amp_jitter, finger_omega, finger_phase);
            for h in 0..2 {
                for j in 1..15 {
                    let idx = h * HAND_DIM + 3 * j;
                    m.hands[idx] += curl.at(f + j as f64 * 0.3 + h as f64);
                }
            }
            let wrist = Wave::new(0.2, finger_omega / 2.0, finger_phase);
            m.hands[1] += wrist.at(f);
            m.hands[HAND_DIM + 1] -= wrist.at(f);
        }
        frames.push(m);
    }
    Ok(MotionSequence {
        frames,
        fps: DEFAULT_FPS,
    })
}

/// Largest adjacent-frame change of any coordinate.
pub fn max_frame_delta(seq: &MotionSequence) -> f64 {
    seq.frames
        .windows(2)
        .flat_map(|w| {
            let a = w[0].concat();
            let b = w[1].concat();
            (0..FRAME_DIM).map(move |i| (a[i] - b[i]).abs())
        })
        .fold(0.0, f64::max)
}

/// Joint positions of both hands.
#[derive(Clone, Debug, PartialEq)]
pub struct HandJointSet {
    pub left: Vec<Vec3>,
    pub right: Vec<Vec3>,
    pub left_root: usize,
    pub right_root: usize,
}

impl HandJointSet {
    pub fn new(left: Vec<Vec3>, right: Vec<Vec3>, left_root: usize, right_root: usize) -> Result<Self> {
        let ok = left.len() >= 2
            && right.len() >= 2
            && left_root < left.len()
            && right_root < right.len()
            && left.iter().chain(&right).flatten().all(|v| v.is_finite());
        if !ok {
            return Err(Error::Precondition(
                "hand joint sets need >= 2 finite joints and a valid root".into(),
            ));
        }
        Ok(HandJointSet {
            left,
            right,
            left_root,
            right_root,
        })
    }

    pub fn same_topology(&self, other: &HandJointSet) -> bool {
        self.left.len() == other.left.len()
            && self.right.len() == other.right.len()
            && self.left_root == other.left_root
            && self.right_root == other.right_root
    }

    pub fn translated(&self, by: Vec3) -> HandJointSet {
        HandJointSet {
            left: self.left.iter().map(|&p| geom::add(p, by)).collect(),
            right: self.right.iter().map(|&p| geom::add(p, by)).collect(),
            ..self.clone()
        }
    }
}

/// Hand skeleton: parent of each joint. Joint 0 is the wrist root, joint 1
/// the palm, then thumb (2 joints) and four fingers (3 joints each).
pub const HAND_PARENTS: [usize; HAND_JOINTS] = [0, 0, 1, 2, 1, 4, 5, 1, 7, 8, 1, 10, 11, 1, 13, 14];

/// Rest root position of the left hand; the right hand mirrors it.
pub const HAND_ROOT_LEFT: Vec3 = [-3.0, 0.0, 0.0];

fn normalized(v: Vec3) -> Vec3 {
    geom::scale3(v, 1.0 / geom::norm(v))
}

/// Unit rest bone directions of the left hand, indexed by child joint.
fn left_hand_bones() -> [Vec3; HAND_JOINTS] {
    let fwd = [0.0, 0.0, 1.0];
    [
        [0.0; 3],
        fwd,
        normalized([0.8, 0.0, 0.6]),
        normalized([0.6, 0.0, 0.8]),
        normalized([0.3, 0.0, 1.0]),
        fwd,
        fwd,
        normalized([0.1, 0.0, 1.0]),
        fwd,
        fwd,
        normalized([-0.1, 0.0, 1.0]),
        fwd,
        fwd,
        normalized([-0.3, 0.0, 1.0]),
        fwd,
        fwd,
    ]
}

fn chain_fk(root: Vec3, bones: &[Vec3], parents: &[usize], params: &[f64]) -> Vec<Vec3> {
    let n = parents.len();
    let mut pos = vec![[0.0; 3]; n];
    let mut rot = vec![RotationMatrix::IDENTITY; n];
    pos[0] = root;
    for j in 1..n {
        let p = parents[j];
        let local = rotation_of(params, j);
        let g = rot[p].compose(&local);
        pos[j] = geom::add(pos[p], g.apply(bones[j]));
        rot[j] = g;
    }
    pos
}

fn rotation_of(params: &[f64], joint: usize) -> RotationMatrix {
    let o = 3 * (joint - 1);
    let v = [params[o], params[o + 1], params[o + 2]];
    geom::axis_angle_to_rotation(AxisAngle(v)).expect("finite motion parameters")
}

/// Toy forward kinematics of both hands. Joint `j >= 1` is placed by the
/// triplet `j − 1` of its hand, applied at the parent end of its bone, so
/// the first triplet acts as the wrist and moves every other joint. The
/// roots are fixed; body parameters are ignored.
pub fn forward_hand_joints(frame: &MotionFrame) -> HandJointSet {
    let left_bones = left_hand_bones();
    let right_bones: Vec<Vec3> = left_bones.iter().map(|b| [-b[0], b[1], b[2]]).collect();
    let right_root = [-HAND_ROOT_LEFT[0], HAND_ROOT_LEFT[1], HAND_ROOT_LEFT[2]];
    let left = chain_fk(HAND_ROOT_LEFT, &left_bones, &HAND_PARENTS, frame.left_hand());
    let right = chain_fk(right_root, &right_bones, &HAND_PARENTS, frame.right_hand());
    HandJointSet {
        left,
        right,
        left_root: 0,
        right_root: 0,
    }
}

/// SMPL-like body tree over 22 joints.
pub const BODY_PARENTS: [usize; BODY_JOINTS] =
    [0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19];

const BODY_BONES: [Vec3; BODY_JOINTS] = [
    [0.0, 0.0, 0.0],
    [-0.09, 0.06, 0.0],
    [0.09, 0.06, 0.0],
    [0.0, -0.12, 0.0],
    [0.0, 0.40, 0.0],
    [0.0, 0.40, 0.0],
    [0.0, -0.13, 0.0],
    [0.0, 0.40, 0.0],
    [0.0, 0.40, 0.0],
    [0.0, -0.05, 0.0],
    [0.0, 0.05, 0.12],
    [0.0, 0.05, 0.12],
    [0.0, -0.22, 0.0],
    [-0.07, -0.15, 0.0],
    [0.07, -0.15, 0.0],
    [0.0, -0.10, 0.0],
    [-0.12, 0.02, 0.0],
    [0.12, 0.02, 0.0],
    [-0.02, 0.27, 0.0],
    [0.02, 0.27, 0.0],
    [0.0, 0.25, 0.0],
    [0.0, 0.25, 0.0],
];

/// Toy forward kinematics of the 22 body joints, pelvis at `root`. Triplet 0
/// is the global orientation; triplet `j` rotates the bones below joint `j`.
/// Axes follow the camera convention (x right, y down, z forward).
pub fn forward_body_joints(frame: &MotionFrame, root: Vec3) -> Vec<Vec3> {
    let global = geom::axis_angle_to_rotation(AxisAngle([
        frame.body_feet[0],
        frame.body_feet[1],
        frame.body_feet[2],
    ]))
    .expect("finite motion parameters");
    let n = BODY_JOINTS;
    let mut pos = vec![[0.0; 3]; n];
    let mut rot = vec![RotationMatrix::IDENTITY; n];
    pos[0] = root;
    rot[0] = global;
    for j in 1..n {
        let p = BODY_PARENTS[j];
        pos[j] = geom::add(pos[p], rot[p].apply(BODY_BONES[j]));
        let o = 3 * j;
        let local = geom::axis_angle_to_rotation(AxisAngle([
            frame.body_feet[o],
            frame.body_feet[o + 1],
            frame.body_feet[o + 2],
        ]))
        .expect("finite motion parameters");
        rot[j] = rot[p].compose(&local);
    }
    pos
}
