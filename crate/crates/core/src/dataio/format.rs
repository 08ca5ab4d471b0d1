//! Text formats: interaction samples, manifests and training-pair archives.
//!
//! Interaction-sample files are UTF-8, one frame per line:
//!
//! ```text
//! # fps=30 joints=9
//! <sample_id>,<scenario>,<subject_id>,<frame_index>,<3·K user floats>,<3·K responder floats>
//! ```
//!
//! `K` is the number of joints per person in the source skeleton; a
//! [`JointIndexMap`] picks the nine canonical joints out of them. Lines
//! starting with `#` after the header are comments. Floats use `.` as the
//! decimal separator and are written in shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use super::{DataError, DatasetManifest, InteractionSample, ManifestEntry, Split, TrainingPair};
use crate::skeleton::{HumanPose, Joint3, NUM_JOINTS};

const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "torso",
    "spine shoulder",
    "head",
    "left shoulder",
    "left elbow",
    "left wrist",
    "right shoulder",
    "right elbow",
    "right wrist",
];

/// Source joint index for each canonical joint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointIndexMap {
    pub indices: [Option<usize>; NUM_JOINTS],
}

impl JointIndexMap {
    /// Source files already in canonical order.
    pub fn identity() -> Self {
        Self {
            indices: std::array::from_fn(Some),
        }
    }

    /// Kinect v2 body tracking (25 joints): spine mid, spine shoulder, head,
    /// left shoulder/elbow/wrist, right shoulder/elbow/wrist.
    pub fn kinect_v2() -> Self {
        Self {
            indices: [1, 20, 3, 4, 5, 6, 8, 9, 10].map(Some),
        }
    }

    /// Parses nine comma-separated source indices; `-` marks an unavailable joint.
    pub fn parse(s: &str) -> Result<Self, DataError> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != NUM_JOINTS {
            return Err(DataError::Parse {
                line: 0,
                message: format!("joint map needs {NUM_JOINTS} entries, got {}", parts.len()),
            });
        }
        let mut indices = [None; NUM_JOINTS];
        for (slot, p) in indices.iter_mut().zip(parts) {
            if p != "-" {
                *slot = Some(p.parse().map_err(|_| DataError::Parse {
                    line: 0,
                    message: format!("bad joint index {p:?}"),
                })?);
            }
        }
        Ok(Self { indices })
    }

    fn resolve(&self, source_joints: usize) -> Result<[usize; NUM_JOINTS], DataError> {
        let mut out = [0; NUM_JOINTS];
        for (j, (slot, idx)) in out.iter_mut().zip(&self.indices).enumerate() {
            match idx {
                Some(i) if *i < source_joints => *slot = *i,
                _ => {
                    return Err(DataError::MissingJoint {
                        joint: j + 1,
                        name: JOINT_NAMES[j],
                    })
                }
            }
        }
        Ok(out)
    }
}

fn push_pose(out: &mut String, pose: &HumanPose) {
    for j in &pose.joints {
        let _ = write!(out, ",{},{},{}", j.x, j.y, j.z);
    }
}

/// Serializes a sample with `K = 9` canonical joints.
pub fn export_sample(sample: &InteractionSample) -> String {
    let mut out = format!("# fps={} joints={}\n", sample.fps, NUM_JOINTS);
    for (i, (u, r)) in sample
        .user_track
        .iter()
        .zip(&sample.responder_track)
        .enumerate()
    {
        let _ = write!(
            out,
            "{},{},{},{}",
            sample.sample_id, sample.scenario, sample.subject_id, i
        );
        push_pose(&mut out, u);
        push_pose(&mut out, r);
        out.push('\n');
    }
    out
}

pub fn write_sample_file(path: &Path, sample: &InteractionSample) -> Result<(), DataError> {
    std::fs::write(path, export_sample(sample)).map_err(|e| io_err(path, e))
}

pub(crate) fn io_err(path: &Path, e: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn parse_header(line: &str, lineno: usize) -> Result<(f64, usize), DataError> {
    let perr = |message: String| DataError::Parse {
        line: lineno,
        message,
    };
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| perr("expected header `# fps=<hz> joints=<k>`".into()))?;
    let (mut fps, mut joints) = (None, None);
    for kv in body.split_whitespace() {
        match kv.split_once('=') {
            Some(("fps", v)) => fps = Some(v.parse::<f64>().map_err(|_| perr(format!("bad fps {v:?}")))?),
            Some(("joints", v)) => {
                joints = Some(v.parse::<usize>().map_err(|_| perr(format!("bad joint count {v:?}")))?)
            }
            _ => {}
        }
    }
    match (fps, joints) {
        (Some(f), Some(k)) if f > 0.0 && k > 0 => Ok((f, k)),
        (Some(_), Some(_)) => Err(perr("fps and joints must be positive".into())),
        _ => Err(perr("header needs both fps= and joints=".into())),
    }
}

/// Parses an interaction-sample file body.
pub fn parse_sample_text(text: &str, map: &JointIndexMap) -> Result<InteractionSample, DataError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or(DataError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let (fps, k) = parse_header(header, hline)?;
    let picks = map.resolve(k)?;
    let expected_fields = 4 + 6 * k;

    let mut sample: Option<InteractionSample> = None;
    for (lineno, line) in lines {
        if line.starts_with('#') {
            continue;
        }
        let perr = |message: String| DataError::Parse {
            line: lineno,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != expected_fields {
            return Err(perr(format!(
                "expected {expected_fields} fields, got {}",
                fields.len()
            )));
        }
        let scenario: u8 = fields[1]
            .parse()
            .map_err(|_| perr(format!("bad scenario {:?}", fields[1])))?;
        let frame: usize = fields[3]
            .parse()
            .map_err(|_| perr(format!("bad frame index {:?}", fields[3])))?;
        let nums = fields[4..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| perr(format!("bad number {f:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let pose_at = |offset: usize| -> Result<HumanPose, DataError> {
            let joints = picks.map(|src| Joint3::from_slice(&nums[offset + 3 * src..offset + 3 * src + 3]));
            HumanPose::new(joints).map_err(|e| perr(e.to_string()))
        };
        let user = pose_at(0)?;
        let responder = pose_at(3 * k)?;

        let s = sample.get_or_insert_with(|| InteractionSample {
            sample_id: fields[0].to_string(),
            scenario,
            subject_id: fields[2].to_string(),
            fps,
            user_track: Vec::new(),
            responder_track: Vec::new(),
        });
        if s.sample_id != fields[0] || s.scenario != scenario || s.subject_id != fields[2] {
            return Err(perr("sample id, scenario and subject must match the first record".into()));
        }
        if frame != s.user_track.len() {
            return Err(perr(format!(
                "frame index {frame}, expected {}",
                s.user_track.len()
            )));
        }
        s.user_track.push(user);
        s.responder_track.push(responder);
    }
    let sample = sample.ok_or(DataError::Parse {
        line: hline,
        message: "no frame records".into(),
    })?;
    sample.validate()?;
    Ok(sample)
}

pub fn import_skeleton_file(path: &Path, map: &JointIndexMap) -> Result<InteractionSample, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_sample_text(&text, map)
}

/// Every `*.txt` sample file directly inside `dir`, in file-name order.
pub fn import_sample_dir(dir: &Path, map: &JointIndexMap) -> Result<Vec<InteractionSample>, DataError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            import_skeleton_file(p, map).map_err(|e| match e {
                DataError::Parse { line, message } => DataError::Parse {
                    line,
                    message: format!("{}: {message}", p.display()),
                },
                e => e,
            })
        })
        .collect()
}

impl DatasetManifest {
    /// Tab-separated table with a header row.
    pub fn to_text(&self) -> String {
        let mut out = String::from("sample_id\tscenario\tsubject_id\tsplit\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                e.sample_id,
                e.scenario,
                e.subject_id,
                e.split.as_str()
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let perr = |message: String| DataError::Parse { line: i + 1, message };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(perr(format!("expected 4 fields, got {}", f.len())));
            }
            let split = match f[3] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(perr(format!("unknown split {other:?}"))),
            };
            entries.push(ManifestEntry {
                sample_id: f[0].to_string(),
                scenario: f[1].parse().map_err(|_| perr(format!("bad scenario {:?}", f[1])))?,
                subject_id: f[2].to_string(),
                split,
            });
        }
        Ok(Self { entries })
    }
}

/// Writes pairs as `# pairs m= n= l= user_dim= robot_dim=` followed by one
/// line per pair: `sample_id,scenario,<window>,<seed>,<target>,<future>`.
pub fn write_pairs(path: &Path, pairs: &[TrainingPair], l: usize) -> Result<(), DataError> {
    let (m, n, ud, rd) = pairs.first().map_or((0, 0, 0, 0), |p| {
        (p.user_window.len(), p.target.len(), p.user_window[0].len(), p.seed.len())
    });
    let mut out = format!("# pairs m={m} n={n} l={l} user_dim={ud} robot_dim={rd}\n");
    for p in pairs {
        let _ = write!(out, "{},{}", p.sample_id, p.scenario);
        let values = p
            .user_window
            .iter()
            .flatten()
            .chain(&p.seed)
            .chain(p.target.iter().flatten())
            .chain(p.future_target.iter().flatten());
        for v in values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a pair archive; returns the pairs and the stored `l`.
pub fn read_pairs(path: &Path) -> Result<(Vec<TrainingPair>, usize), DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Parse {
        line: 1,
        message: "empty pair archive".into(),
    })?;
    let mut dims = [0usize; 5];
    for kv in header.trim_start_matches("# pairs").split_whitespace() {
        let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
        let idx = match k {
            "m" => 0,
            "n" => 1,
            "l" => 2,
            "user_dim" => 3,
            "robot_dim" => 4,
            _ => continue,
        };
        dims[idx] = v.parse().map_err(|_| DataError::Parse {
            line: 1,
            message: format!("bad header value {kv:?}"),
        })?;
    }
    let [m, n, l, ud, rd] = dims;
    let width = 2 + m * ud + rd + 2 * n * rd;
    let mut pairs = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let perr = |message: String| DataError::Parse { line: i + 1, message };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != width {
            return Err(perr(format!("expected {width} fields, got {}", f.len())));
        }
        let nums = f[2..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| perr(format!("bad number {s:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let rows = |start: usize, count: usize, dim: usize| -> Vec<Vec<f64>> {
            (0..count)
                .map(|r| nums[start + r * dim..start + (r + 1) * dim].to_vec())
                .collect()
        };
        let seed_at = m * ud;
        pairs.push(TrainingPair {
            sample_id: f[0].to_string(),
            scenario: f[1].parse().map_err(|_| perr(format!("bad scenario {:?}", f[1])))?,
            user_window: rows(0, m, ud),
            seed: nums[seed_at..seed_at + rd].to_vec(),
            target: rows(seed_at + rd, n, rd),
            future_target: rows(seed_at + rd + n * rd, n, rd),
        });
    }
    Ok((pairs, l))
}
