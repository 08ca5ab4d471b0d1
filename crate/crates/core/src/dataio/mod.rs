//! Interaction samples, downsampling, training-pair extraction and
//! person-disjoint train/test splitting.

pub mod format;
pub mod synth;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::skeleton::{
    align_to_body_frame, human_pose_to_flat27, normalize_user_pose, robot_pose_to_vec25,
    skeleton_to_joint_angles, HumanPose, JointLimits, NormalizationConfig, SkeletonError,
    NUM_ANGLES, USER_VEC_LEN,
};

pub use format::{
    export_sample, import_sample_dir, import_skeleton_file, parse_sample_text, read_pairs, write_pairs,
    write_sample_file, JointIndexMap,
};
pub use synth::{handshake_sample, synthesize_dataset, SynthConfig};

/// Rate every sample is brought to before pairs are extracted.
pub const TARGET_HZ: f64 = 10.0;
pub const NUM_SCENARIOS: u8 = 7;

/// Initiator action and expected responder behavior for each scenario, 1-based.
pub const SCENARIOS: [(&str, &str); NUM_SCENARIOS as usize] = [
    ("enters the service area", "bow"),
    ("walks around", "stare"),
    ("stands still", "stare"),
    ("lifts arm to shake hands", "handshake"),
    ("covers face and cries", "hug"),
    ("threatens to hit", "block face"),
    ("turns back and walks to the door", "bow"),
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("invalid rate: source {src} Hz is below target {dst} Hz")]
    InvalidRate { src: f64, dst: f64 },
    #[error("sequence too short: {len} frames, need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing joint: canonical joint {joint} ({name}) is not available in the source")]
    MissingJoint { joint: usize, name: &'static str },
    #[error("invalid sample {id}: {message}")]
    InvalidSample { id: String, message: String },
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

/// One recorded two-person interaction.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionSample {
    pub sample_id: String,
    /// 1..=7, see [`SCENARIOS`].
    pub scenario: u8,
    pub subject_id: String,
    pub fps: f64,
    /// The person initiating the interaction.
    pub user_track: Vec<HumanPose>,
    /// The person reacting; the robot imitates this track.
    pub responder_track: Vec<HumanPose>,
}

impl InteractionSample {
    pub fn len(&self) -> usize {
        self.user_track.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user_track.is_empty()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |message: String| DataError::InvalidSample {
            id: self.sample_id.clone(),
            message,
        };
        if self.user_track.is_empty() {
            return Err(bad("no frames".into()));
        }
        if self.user_track.len() != self.responder_track.len() {
            return Err(bad(format!(
                "user track has {} frames, responder track {}",
                self.user_track.len(),
                self.responder_track.len()
            )));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(bad(format!("fps must be positive, got {}", self.fps)));
        }
        if !(1..=NUM_SCENARIOS).contains(&self.scenario) {
            return Err(bad(format!("scenario {} outside 1..=7", self.scenario)));
        }
        Ok(())
    }

    /// The same interaction resampled to [`TARGET_HZ`].
    pub fn downsampled(&self) -> Result<Self, DataError> {
        Ok(Self {
            user_track: downsample(&self.user_track, self.fps, TARGET_HZ)?,
            responder_track: downsample(&self.responder_track, self.fps, TARGET_HZ)?,
            fps: TARGET_HZ,
            ..self.clone()
        })
    }
}

/// Keeps frames `0, k, 2k, ...` with `k = round(src_hz / dst_hz)`.
pub fn downsample<T: Clone>(track: &[T], src_hz: f64, dst_hz: f64) -> Result<Vec<T>, DataError> {
    if dst_hz.is_nan() || dst_hz <= 0.0 || src_hz < dst_hz {
        return Err(DataError::InvalidRate {
            src: src_hz,
            dst: dst_hz,
        });
    }
    let k = (src_hz / dst_hz).round().max(1.0) as usize;
    Ok(track.iter().step_by(k).cloned().collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserRepr {
    /// 25 values: eight unit limb directions and the normalized camera distance.
    #[default]
    Vectors,
    /// 27 values: raw joint coordinates.
    Positions,
}

impl UserRepr {
    pub fn dim(self) -> usize {
        match self {
            UserRepr::Vectors => USER_VEC_LEN,
            UserRepr::Positions => 27,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotRepr {
    /// 10 joint angles.
    #[default]
    JointAngles,
    /// 25-value direction encoding of the responder's skeleton.
    Vectors,
}

impl RobotRepr {
    pub fn dim(self) -> usize {
        match self {
            RobotRepr::JointAngles => NUM_ANGLES,
            RobotRepr::Vectors => USER_VEC_LEN,
        }
    }
}

/// Window sizes and pose encodings used to turn samples into training pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractConfig {
    /// User window length.
    pub m: usize,
    /// Predicted robot steps.
    pub n: usize,
    /// Offset of the future window scored by the discriminator.
    pub l: usize,
    pub norm: NormalizationConfig,
    pub limits: JointLimits,
    pub user_repr: UserRepr,
    pub robot_repr: RobotRepr,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            m: 15,
            n: 5,
            l: 30,
            norm: NormalizationConfig::default(),
            limits: JointLimits::default(),
            user_repr: UserRepr::Vectors,
            robot_repr: RobotRepr::JointAngles,
        }
    }
}

/// Encodes one user skeleton.
pub fn encode_user(pose: &HumanPose, cfg: &ExtractConfig) -> Result<Vec<f64>, SkeletonError> {
    Ok(match cfg.user_repr {
        UserRepr::Vectors => normalize_user_pose(pose, &cfg.norm)?.values.to_vec(),
        UserRepr::Positions => human_pose_to_flat27(pose).to_vec(),
    })
}

/// Encodes one responder skeleton as a robot pose, after turning it to face `+z`.
pub fn encode_robot(pose: &HumanPose, cfg: &ExtractConfig) -> Result<Vec<f64>, SkeletonError> {
    let body = align_to_body_frame(pose);
    Ok(match cfg.robot_repr {
        RobotRepr::JointAngles => skeleton_to_joint_angles(&body, &cfg.limits)?.angles.to_vec(),
        RobotRepr::Vectors => robot_pose_to_vec25(&body, &cfg.norm)?.values.to_vec(),
    })
}

/// Encoded user and robot pose streams of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSample {
    pub sample_id: String,
    pub scenario: u8,
    pub subject_id: String,
    pub user: Vec<Vec<f64>>,
    pub robot: Vec<Vec<f64>>,
}

pub fn encode_sample(sample: &InteractionSample, cfg: &ExtractConfig) -> Result<EncodedSample, DataError> {
    let user = sample
        .user_track
        .iter()
        .map(|p| encode_user(p, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let robot = sample
        .responder_track
        .iter()
        .map(|p| encode_robot(p, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EncodedSample {
        sample_id: sample.sample_id.clone(),
        scenario: sample.scenario,
        subject_id: sample.subject_id.clone(),
        user,
        robot,
    })
}

/// One supervised example: `m` user poses and the current robot pose in,
/// the next `n` robot poses and the `n` poses starting `l` steps later out.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub sample_id: String,
    pub scenario: u8,
    pub user_window: Vec<Vec<f64>>,
    pub seed: Vec<f64>,
    pub target: Vec<Vec<f64>>,
    pub future_target: Vec<Vec<f64>>,
}

/// Sliding-window pairs from an already encoded sample.
pub fn pairs_from_encoded(enc: &EncodedSample, m: usize, n: usize, l: usize) -> Result<Vec<TrainingPair>, DataError> {
    let t_len = enc.user.len();
    if m == 0 || n == 0 || t_len < m + n {
        return Err(DataError::TooShort {
            len: t_len,
            needed: m + n,
        });
    }
    let last = enc.robot.len() - 1;
    let robot_at = |i: usize| enc.robot[i.min(last)].clone();
    Ok((m - 1..t_len - n)
        .map(|t| TrainingPair {
            sample_id: enc.sample_id.clone(),
            scenario: enc.scenario,
            user_window: enc.user[t + 1 - m..=t].to_vec(),
            seed: enc.robot[t].clone(),
            target: (t + 1..=t + n).map(robot_at).collect(),
            future_target: (t + l + 1..=t + l + n).map(robot_at).collect(),
        })
        .collect())
}

/// Training pairs of a 10 Hz sample; `T - m - n + 1` of them.
pub fn extract_pairs(sample: &InteractionSample, cfg: &ExtractConfig) -> Result<Vec<TrainingPair>, DataError> {
    sample.validate()?;
    if sample.len() < cfg.m + cfg.n {
        return Err(DataError::TooShort {
            len: sample.len(),
            needed: cfg.m + cfg.n,
        });
    }
    pairs_from_encoded(&encode_sample(sample, cfg)?, cfg.m, cfg.n, cfg.l)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub scenario: u8,
    pub subject_id: String,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn split_of(&self, sample_id: &str) -> Option<Split> {
        self.entries
            .iter()
            .find(|e| e.sample_id == sample_id)
            .map(|e| e.split)
    }
}

/// Assigns whole `(scenario, subject)` groups to train or test.
///
/// Groups are visited in a seeded random order; a group joins the test split
/// while it still fits under `round(test_fraction * total)` samples.
pub fn split_entries(
    samples: &[(String, u8, String)],
    test_fraction: f64,
    rng_seed: u64,
) -> DatasetManifest {
    let mut groups: BTreeMap<(u8, &str), Vec<usize>> = BTreeMap::new();
    for (i, (_, scen, subj)) in samples.iter().enumerate() {
        groups.entry((*scen, subj.as_str())).or_default().push(i);
    }
    let mut order: Vec<Vec<usize>> = groups.into_values().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));

    let target = (test_fraction.clamp(0.0, 1.0) * samples.len() as f64).round() as usize;
    let mut split = vec![Split::Train; samples.len()];
    let mut in_test = 0;
    for members in &order {
        if in_test + members.len() <= target {
            in_test += members.len();
            members.iter().for_each(|&i| split[i] = Split::Test);
        }
    }
    DatasetManifest {
        entries: samples
            .iter()
            .zip(split)
            .map(|((id, scen, subj), split)| ManifestEntry {
                sample_id: id.clone(),
                scenario: *scen,
                subject_id: subj.clone(),
                split,
            })
            .collect(),
    }
}

pub fn split_dataset(samples: &[InteractionSample], test_fraction: f64, rng_seed: u64) -> DatasetManifest {
    let meta: Vec<_> = samples
        .iter()
        .map(|s| (s.sample_id.clone(), s.scenario, s.subject_id.clone()))
        .collect();
    split_entries(&meta, test_fraction, rng_seed)
}
