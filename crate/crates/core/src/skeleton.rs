//! Joint layouts, skeleton sequences, part decomposition and preprocessing.

use serde::{Deserialize, Serialize};
use star_tensor::Tensor;

use crate::error::{Result, StarError};

/// Coarse body region of a joint. Every partition strategy is derived from
/// these tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Head,
    Hand,
    Arm,
    Hip,
    Leg,
    Foot,
}

impl Region {
    pub const ALL: [Region; 6] = [Region::Head, Region::Hand, Region::Arm, Region::Hip, Region::Leg, Region::Foot];

    pub fn name(self) -> &'static str {
        match self {
            Region::Head => "head",
            Region::Hand => "hand",
            Region::Arm => "arm",
            Region::Hip => "hip",
            Region::Leg => "leg",
            Region::Foot => "foot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub region: Region,
    /// Rest position relative to the root joint, metres.
    pub rest: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLayout {
    pub joints: Vec<Joint>,
    pub root: usize,
}

impl JointLayout {
    pub fn new(joints: Vec<Joint>, root: usize) -> Result<Self> {
        let layout = Self { joints, root };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(StarError::Layout("layout has no joints".into()));
        }
        if self.root >= self.joints.len() {
            return Err(StarError::Layout(format!(
                "root index {} out of range for {} joints",
                self.root,
                self.joints.len()
            )));
        }
        let mut names: Vec<&str> = self.joints.iter().map(|j| j.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(StarError::Layout(format!("duplicate joint name `{}`", w[0])));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// The 25-joint Kinect v2 skeleton used by NTU RGB+D, rooted at the
    /// middle of the spine.
    ///
    /// Region tags: head = {neck, head, spine shoulder}, hand = {hands, hand
    /// tips, thumbs}, arm = {shoulders, elbows, wrists}, hip = {spine base,
    /// spine mid, hips}, leg = {knees}, foot = {ankles, feet}.
    pub fn ntu25() -> Self {
        use Region::*;
        let spec: [(&str, Region, [f32; 3]); 25] = [
            ("spine_base", Hip, [0.0, -0.30, 0.0]),
            ("spine_mid", Hip, [0.0, 0.0, 0.0]),
            ("neck", Head, [0.0, 0.42, 0.0]),
            ("head", Head, [0.0, 0.58, 0.02]),
            ("shoulder_left", Arm, [-0.18, 0.30, 0.0]),
            ("elbow_left", Arm, [-0.24, 0.05, 0.0]),
            ("wrist_left", Arm, [-0.26, -0.18, 0.03]),
            ("hand_left", Hand, [-0.27, -0.25, 0.04]),
            ("shoulder_right", Arm, [0.18, 0.30, 0.0]),
            ("elbow_right", Arm, [0.24, 0.05, 0.0]),
            ("wrist_right", Arm, [0.26, -0.18, 0.03]),
            ("hand_right", Hand, [0.27, -0.25, 0.04]),
            ("hip_left", Hip, [-0.10, -0.32, 0.0]),
            ("knee_left", Leg, [-0.11, -0.72, 0.02]),
            ("ankle_left", Foot, [-0.11, -1.10, 0.0]),
            ("foot_left", Foot, [-0.11, -1.15, 0.10]),
            ("hip_right", Hip, [0.10, -0.32, 0.0]),
            ("knee_right", Leg, [0.11, -0.72, 0.02]),
            ("ankle_right", Foot, [0.11, -1.10, 0.0]),
            ("foot_right", Foot, [0.11, -1.15, 0.10]),
            ("spine_shoulder", Head, [0.0, 0.33, 0.0]),
            ("hand_tip_left", Hand, [-0.28, -0.32, 0.05]),
            ("thumb_left", Hand, [-0.24, -0.27, 0.08]),
            ("hand_tip_right", Hand, [0.28, -0.32, 0.05]),
            ("thumb_right", Hand, [0.24, -0.27, 0.08]),
        ];
        let joints = spec.iter().map(|&(name, region, rest)| Joint { name: name.to_string(), region, rest }).collect();
        Self { joints, root: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Two,
    Four,
    Six,
}

impl PartitionKind {
    pub const ALL: [PartitionKind; 3] = [PartitionKind::Two, PartitionKind::Four, PartitionKind::Six];

    pub fn parts(self) -> usize {
        match self {
            PartitionKind::Two => 2,
            PartitionKind::Four => 4,
            PartitionKind::Six => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PartitionKind::Two => "two",
            PartitionKind::Four => "four",
            PartitionKind::Six => "six",
        }
    }

    /// Part names with the regions each one covers.
    pub fn groups(self) -> Vec<(&'static str, Vec<Region>)> {
        use Region::*;
        match self {
            PartitionKind::Two => vec![("upper", vec![Head, Hand, Arm]), ("lower", vec![Hip, Leg, Foot])],
            PartitionKind::Four => vec![
                ("head", vec![Head]),
                ("hand_arm", vec![Hand, Arm]),
                ("hip", vec![Hip]),
                ("leg_foot", vec![Leg, Foot]),
            ],
            PartitionKind::Six => Region::ALL.iter().map(|&r| (r.name(), vec![r])).collect(),
        }
    }
}

impl std::str::FromStr for PartitionKind {
    type Err = StarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two" | "2" => Ok(PartitionKind::Two),
            "four" | "4" => Ok(PartitionKind::Four),
            "six" | "6" => Ok(PartitionKind::Six),
            other => Err(StarError::Config(format!("unknown partition strategy `{other}`"))),
        }
    }
}

/// K disjoint joint groups covering the whole layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionStrategy {
    pub kind: PartitionKind,
    pub names: Vec<String>,
    pub joints: Vec<Vec<usize>>,
}

impl PartitionStrategy {
    pub fn new(layout: &JointLayout, kind: PartitionKind) -> Result<Self> {
        let mut names = Vec::new();
        let mut joints = Vec::new();
        for (name, regions) in kind.groups() {
            let members: Vec<usize> =
                layout.joints.iter().enumerate().filter(|(_, j)| regions.contains(&j.region)).map(|(i, _)| i).collect();
            names.push(name.to_string());
            joints.push(members);
        }
        let s = Self { kind, names, joints };
        s.validate(layout.len())?;
        Ok(s)
    }

    /// Disjoint, nonempty, and covering `0..joint_count`.
    pub fn validate(&self, joint_count: usize) -> Result<()> {
        let mut owner = vec![None; joint_count];
        for (e, part) in self.joints.iter().enumerate() {
            if part.is_empty() {
                return Err(StarError::Layout(format!("part `{}` is empty", self.names[e])));
            }
            for &j in part {
                let slot = owner.get_mut(j).ok_or_else(|| {
                    StarError::Layout(format!("joint index {j} out of range for {joint_count} joints"))
                })?;
                if let Some(prev) = slot.replace(e) {
                    return Err(StarError::Layout(format!(
                        "joint {j} is in both `{}` and `{}`",
                        self.names[prev], self.names[e]
                    )));
                }
            }
        }
        if let Some(j) = owner.iter().position(Option::is_none) {
            return Err(StarError::Layout(format!("joint {j} belongs to no part")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn part_sizes(&self) -> Vec<usize> {
        self.joints.iter().map(Vec::len).collect()
    }
}

/// Pose tensor `[3, T, V, M]` with its category index.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub data: Tensor<f32>,
    pub label: usize,
}

impl SkeletonSequence {
    pub fn new(data: Tensor<f32>, label: usize) -> Result<Self> {
        if data.ndim() != 4 || data.shape()[0] != 3 {
            return Err(StarError::Data(format!("skeleton tensor must be [3, T, V, M], got {:?}", data.shape())));
        }
        data.check_finite("skeleton")?;
        Ok(Self { data, label })
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn joints(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn persons(&self) -> usize {
        self.data.shape()[3]
    }

    #[inline]
    pub fn at(&self, c: usize, t: usize, v: usize, m: usize) -> f32 {
        let s = self.data.shape();
        self.data.data()[((c * s[1] + t) * s[2] + v) * s[3] + m]
    }
}

fn gather_joints(x: &Tensor<f32>, idx: &[usize]) -> Result<Tensor<f32>> {
    let s = x.shape();
    let (t, v, m) = (s[1], s[2], s[3]);
    let mut out = Vec::with_capacity(3 * t * idx.len() * m);
    for c in 0..3 {
        for tt in 0..t {
            for &j in idx {
                if j >= v {
                    return Err(StarError::Layout(format!("joint index {j} out of range for {v} joints")));
                }
                let base = ((c * t + tt) * v + j) * m;
                out.extend_from_slice(&x.data()[base..base + m]);
            }
        }
    }
    Ok(Tensor::new(&[3, t, idx.len(), m], out)?)
}

/// Split a sequence into `[3, T, V_e, M]` part tensors, keeping joint order.
pub fn decompose_parts(seq: &SkeletonSequence, strategy: &PartitionStrategy) -> Result<Vec<Tensor<f32>>> {
    strategy.joints.iter().map(|idx| gather_joints(&seq.data, idx)).collect()
}

/// Inverse of [`decompose_parts`].
pub fn reconstruct(parts: &[Tensor<f32>], strategy: &PartitionStrategy, joint_count: usize) -> Result<Tensor<f32>> {
    strategy.validate(joint_count)?;
    let first = parts.first().ok_or_else(|| StarError::Contract("no parts".into()))?;
    let (t, m) = (first.shape()[1], first.shape()[3]);
    let mut out = vec![0f32; 3 * t * joint_count * m];
    for (part, idx) in parts.iter().zip(&strategy.joints) {
        if part.shape() != [3, t, idx.len(), m] {
            return Err(StarError::Data(format!("part shape {:?} does not match strategy", part.shape())));
        }
        let ve = idx.len();
        for c in 0..3 {
            for tt in 0..t {
                for (k, &j) in idx.iter().enumerate() {
                    let src = ((c * t + tt) * ve + k) * m;
                    let dst = ((c * t + tt) * joint_count + j) * m;
                    out[dst..dst + m].copy_from_slice(&part.data()[src..src + m]);
                }
            }
        }
    }
    Ok(Tensor::new(&[3, t, joint_count, m], out)?)
}

/// Root-centre every frame, resample to `frames`, and pad or truncate to
/// `persons`.
///
/// Upsampling interpolates linearly between neighbouring frames;
/// downsampling picks frames at uniform strides. All-zero persons (padding)
/// are left untouched by centring.
pub fn preprocess(seq: &SkeletonSequence, root: usize, frames: usize, persons: usize) -> Result<SkeletonSequence> {
    let (t_in, v, m_in) = (seq.frames(), seq.joints(), seq.persons());
    if t_in == 0 || frames == 0 || persons == 0 {
        return Err(StarError::Data("zero-length sequence".into()));
    }
    if root >= v {
        return Err(StarError::Layout(format!("root index {root} out of range for {v} joints")));
    }
    let m_keep = m_in.min(persons);

    // centred[c][t][v][m] for the kept persons
    let mut centred = vec![0f64; 3 * t_in * v * persons];
    let idx = |c: usize, t: usize, j: usize, m: usize, tn: usize| ((c * tn + t) * v + j) * persons + m;
    for m in 0..m_keep {
        for t in 0..t_in {
            let present = (0..3).any(|c| (0..v).any(|j| seq.at(c, t, j, m) != 0.0));
            for c in 0..3 {
                let origin = if present { seq.at(c, t, root, m) as f64 } else { 0.0 };
                for j in 0..v {
                    centred[idx(c, t, j, m, t_in)] = seq.at(c, t, j, m) as f64 - origin;
                }
            }
        }
    }

    let mut out = vec![0f32; 3 * frames * v * persons];
    for t in 0..frames {
        let (lo, hi, w) = if t_in == frames {
            (t, t, 0.0)
        } else if t_in < frames {
            let pos = if frames == 1 { 0.0 } else { t as f64 * (t_in - 1) as f64 / (frames - 1) as f64 };
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(t_in - 1);
            (lo, hi, pos - lo as f64)
        } else {
            let s = t * t_in / frames;
            (s, s, 0.0)
        };
        for c in 0..3 {
            for j in 0..v {
                for m in 0..persons {
                    let a = centred[idx(c, lo, j, m, t_in)];
                    let b = centred[idx(c, hi, j, m, t_in)];
                    let value = if w == 0.0 { a } else { a + (b - a) * w };
                    out[idx(c, t, j, m, frames)] = value as f32;
                }
            }
        }
    }
    SkeletonSequence::new(Tensor::new(&[3, frames, v, persons], out)?, seq.label)
}
