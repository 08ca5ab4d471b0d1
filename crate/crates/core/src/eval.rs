//! Key-pose selection and the behavior similarity metrics.
//!
//! S1 is the RMSE between two pose sequences over every frame and component.
//! S2 sums the head and wrist distances between the two key poses, S3 the
//! same distances between the final poses. Positions come from forward
//! kinematics on the robot's links, torso at the origin.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::dataio::{DataError, EncodedSample, RobotRepr};
use crate::model::ModelParams;
use crate::par::Exec;
use crate::skeleton::{
    forward_kinematics, positions_from_vec25, Joint3, LinkLengths, RobotJointAngles, NUM_JOINTS, TRACKED_JOINTS,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: ground truth has {gt} frames of {gt_dim} values, generated {gen} frames of {gen_dim}")]
    LengthMismatch {
        gt: usize,
        gen: usize,
        gt_dim: usize,
        gen_dim: usize,
    },
    #[error("empty behavior sequence")]
    Empty,
}

pub type Positions = [Joint3; NUM_JOINTS];

/// Torso-relative joint positions of a robot pose.
pub fn pose_positions(pose: &[f64], repr: RobotRepr, links: &LinkLengths) -> Positions {
    match repr {
        RobotRepr::JointAngles => {
            let a = RobotJointAngles::from_slice(pose).expect("10 joint angles");
            forward_kinematics(&a, links).positions
        }
        RobotRepr::Vectors => positions_from_vec25(pose, links).positions,
    }
}

/// Frame whose head and wrists moved furthest in total from frame 0; ties go to the earliest.
pub fn key_pose_index_positions(track: &[Positions]) -> usize {
    let Some(first) = track.first() else { return 0 };
    let mut best = (0, 0.0);
    for (i, p) in track.iter().enumerate() {
        let d: f64 = TRACKED_JOINTS.iter().map(|&j| (p[j] - first[j]).norm()).sum();
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

pub fn key_pose_index(b: &[RobotJointAngles], links: &LinkLengths) -> usize {
    let track: Vec<Positions> = b.iter().map(|a| forward_kinematics(a, links).positions).collect();
    key_pose_index_positions(&track)
}

/// Total and per-joint (head, left wrist, right wrist) distances, meters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JointDistances {
    pub total: f64,
    pub head: f64,
    pub left_wrist: f64,
    pub right_wrist: f64,
}

impl JointDistances {
    pub fn between(a: &Positions, b: &Positions) -> Self {
        let [h, l, r] = TRACKED_JOINTS.map(|j| (a[j] - b[j]).norm());
        Self {
            total: h + l + r,
            head: h,
            left_wrist: l,
            right_wrist: r,
        }
    }

    fn add(&mut self, o: &Self) {
        self.total += o.total;
        self.head += o.head;
        self.left_wrist += o.left_wrist;
        self.right_wrist += o.right_wrist;
    }

    fn scaled(self, k: f64) -> Self {
        Self {
            total: self.total * k,
            head: self.head * k,
            left_wrist: self.left_wrist * k,
            right_wrist: self.right_wrist * k,
        }
    }
}

/// RMSE over all frames and components.
pub fn metric_s1<A: AsRef<[f64]>, B: AsRef<[f64]>>(gt: &[A], gen: &[B]) -> Result<f64, EvalError> {
    if gt.is_empty() {
        return Err(EvalError::Empty);
    }
    let gt_dim = gt[0].as_ref().len();
    let gen_dim = gen.first().map_or(0, |g| g.as_ref().len());
    let rows_ok = gt.iter().all(|r| r.as_ref().len() == gt_dim) && gen.iter().all(|r| r.as_ref().len() == gen_dim);
    if gt.len() != gen.len() || gt_dim != gen_dim || !rows_ok {
        return Err(EvalError::LengthMismatch {
            gt: gt.len(),
            gen: gen.len(),
            gt_dim,
            gen_dim,
        });
    }
    let mut sum = 0.0;
    for (a, b) in gt.iter().zip(gen) {
        for (x, y) in a.as_ref().iter().zip(b.as_ref()) {
            sum += (x - y) * (x - y);
        }
    }
    Ok((sum / (gt.len() * gt_dim) as f64).sqrt())
}

/// Distances between the two sequences' key poses, each chosen independently.
pub fn metric_s2_positions(gt: &[Positions], gen: &[Positions]) -> Result<JointDistances, EvalError> {
    if gt.is_empty() || gen.is_empty() {
        return Err(EvalError::Empty);
    }
    let kg = key_pose_index_positions(gt);
    let kr = key_pose_index_positions(gen);
    Ok(JointDistances::between(&gt[kg], &gen[kr]))
}

/// Distances between the two sequences' final poses.
pub fn metric_s3_positions(gt: &[Positions], gen: &[Positions]) -> Result<JointDistances, EvalError> {
    match (gt.last(), gen.last()) {
        (Some(a), Some(b)) => Ok(JointDistances::between(a, b)),
        _ => Err(EvalError::Empty),
    }
}

fn fk_track(b: &[RobotJointAngles], links: &LinkLengths) -> Vec<Positions> {
    b.iter().map(|a| forward_kinematics(a, links).positions).collect()
}

pub fn metric_s2(gt: &[RobotJointAngles], gen: &[RobotJointAngles], links: &LinkLengths) -> Result<JointDistances, EvalError> {
    metric_s2_positions(&fk_track(gt, links), &fk_track(gen, links))
}

pub fn metric_s3(gt: &[RobotJointAngles], gen: &[RobotJointAngles], links: &LinkLengths) -> Result<JointDistances, EvalError> {
    metric_s3_positions(&fk_track(gt, links), &fk_track(gen, links))
}

/// Metrics of one generated behavior against its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMetrics {
    pub sample_id: String,
    pub scenario: u8,
    pub s1: f64,
    pub s2: JointDistances,
    pub s3: JointDistances,
}

/// All three metrics between equal-length pose sequences.
pub fn compare(
    gt: &[Vec<f64>],
    gen: &[Vec<f64>],
    repr: RobotRepr,
    links: &LinkLengths,
) -> Result<(f64, JointDistances, JointDistances), EvalError> {
    let s1 = metric_s1(gt, gen)?;
    let pg: Vec<Positions> = gt.iter().map(|p| pose_positions(p, repr, links)).collect();
    let pr: Vec<Positions> = gen.iter().map(|p| pose_positions(p, repr, links)).collect();
    Ok((s1, metric_s2_positions(&pg, &pr)?, metric_s3_positions(&pg, &pr)?))
}

/// Closed-loop generation over a whole sample.
///
/// Starts from the ground-truth pose at frame `m - 1` and feeds every
/// generated pose back as the next step's current pose. Returns
/// `T - m + 1` poses: the seed followed by the generated ones.
pub fn rollout_sample(params: &ModelParams, sample: &EncodedSample) -> Result<Vec<Vec<f64>>> {
    Ok(rollout_many(params, &[sample])?.remove(0))
}

/// [`rollout_sample`] for several samples, batched step by step.
pub fn rollout_many(params: &ModelParams, samples: &[&EncodedSample]) -> Result<Vec<Vec<Vec<f64>>>> {
    let c = &params.config;
    for s in samples {
        if s.user.len() < c.m + 1 || s.robot.len() != s.user.len() {
            return Err(DataError::TooShort {
                len: s.user.len(),
                needed: c.m + 1,
            }
            .into());
        }
    }
    let mut out: Vec<Vec<Vec<f64>>> = samples.iter().map(|s| vec![s.robot[c.m - 1].clone()]).collect();
    let longest = samples.iter().map(|s| s.user.len()).max().unwrap_or(0);
    for t in c.m - 1..longest.saturating_sub(1) {
        let active: Vec<usize> = (0..samples.len()).filter(|&i| t + 1 < samples[i].user.len()).collect();
        let windows: Vec<&[Vec<f64>]> = active.iter().map(|&i| &samples[i].user[t + 1 - c.m..=t]).collect();
        let current: Vec<Vec<f64>> = active.iter().map(|&i| out[i].last().expect("seeded").clone()).collect();
        let next = params.generate_batch(&windows, &current)?;
        for (&i, pose) in active.iter().zip(next) {
            out[i].push(pose);
        }
    }
    Ok(out)
}

pub fn evaluate_sample(params: &ModelParams, sample: &EncodedSample, links: &LinkLengths) -> Result<SampleMetrics> {
    let gen = rollout_sample(params, sample)?;
    score(params, sample, &gen, links)
}

fn score(params: &ModelParams, sample: &EncodedSample, gen: &[Vec<f64>], links: &LinkLengths) -> Result<SampleMetrics> {
    let gt = &sample.robot[params.config.m - 1..];
    let (s1, s2, s3) = compare(gt, gen, params.config.robot_repr(), links).map_err(Error::from)?;
    Ok(SampleMetrics {
        sample_id: sample.sample_id.clone(),
        scenario: sample.scenario,
        s1,
        s2,
        s3,
    })
}

/// Mean metrics of one scenario, or of every sample when `scenario` is `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub scenario: Option<u8>,
    pub samples: usize,
    pub s1: f64,
    pub s2: JointDistances,
    pub s3: JointDistances,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub per_sample: Vec<SampleMetrics>,
    /// One row per scenario present, ascending, then the aggregate row.
    pub rows: Vec<MetricRow>,
}

pub const REPORT_HEADER: &str =
    "scenario\tsamples\tS1\tkey_head\tkey_lwrist\tkey_rwrist\tS2\tfinal_head\tfinal_lwrist\tfinal_rwrist\tS3";

impl MetricReport {
    pub fn from_samples(per_sample: Vec<SampleMetrics>) -> Self {
        let mean = |ms: &[&SampleMetrics], scenario: Option<u8>| {
            let k = 1.0 / ms.len().max(1) as f64;
            let mut s2 = JointDistances::default();
            let mut s3 = JointDistances::default();
            for m in ms {
                s2.add(&m.s2);
                s3.add(&m.s3);
            }
            MetricRow {
                scenario,
                samples: ms.len(),
                s1: ms.iter().map(|m| m.s1).sum::<f64>() * k,
                s2: s2.scaled(k),
                s3: s3.scaled(k),
            }
        };
        let mut by_scenario: BTreeMap<u8, Vec<&SampleMetrics>> = BTreeMap::new();
        for m in &per_sample {
            by_scenario.entry(m.scenario).or_default().push(m);
        }
        let mut rows: Vec<MetricRow> = by_scenario.iter().map(|(&s, ms)| mean(ms, Some(s))).collect();
        let all: Vec<&SampleMetrics> = per_sample.iter().collect();
        rows.push(mean(&all, None));
        Self { per_sample, rows }
    }

    pub fn aggregate(&self) -> &MetricRow {
        self.rows.last().expect("aggregate row")
    }

    /// Tab-separated table: scenario rows then `all`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let label = r.scenario.map_or_else(|| "all".to_string(), |s| s.to_string());
            let _ = writeln!(
                out,
                "{label}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                r.samples,
                r.s1,
                r.s2.head,
                r.s2.left_wrist,
                r.s2.right_wrist,
                r.s2.total,
                r.s3.head,
                r.s3.left_wrist,
                r.s3.right_wrist,
                r.s3.total
            );
        }
        out
    }
}

/// Closed-loop generation and scoring of every sample.
///
/// Samples are split into `exec`-mapped groups; each group is rolled out in
/// lockstep as one batch.
pub fn evaluate_dataset(
    params: &ModelParams,
    samples: &[EncodedSample],
    links: &LinkLengths,
    exec: Exec,
) -> Result<MetricReport> {
    const GROUP: usize = 8;
    let groups: Vec<&[EncodedSample]> = samples.chunks(GROUP).collect();
    let scored = exec.map(&groups, |g| -> Result<Vec<SampleMetrics>> {
        let refs: Vec<&EncodedSample> = g.iter().collect();
        let gens = rollout_many(params, &refs)?;
        g.iter().zip(&gens).map(|(s, gen)| score(params, s, gen, links)).collect()
    });
    let mut per_sample = Vec::with_capacity(samples.len());
    for g in scored {
        per_sample.extend(g?);
    }
    Ok(MetricReport::from_samples(per_sample))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::*;
    use proptest::prelude::*;

    fn rest() -> RobotJointAngles {
        RobotJointAngles::default()
    }

    fn raised(k: f64) -> RobotJointAngles {
        let mut a = [0.0; NUM_ANGLES];
        a[R_SHOULDER_PITCH] = k;
        RobotJointAngles::new(a)
    }

    #[test]
    fn key_pose_examples() {
        let links = LinkLengths::default();
        assert_eq!(key_pose_index(&[rest(); 10], &links), 0);
        assert_eq!(key_pose_index(&[raised(0.4)], &links), 0);
        let mut seq = vec![rest(); 12];
        seq[7] = raised(1.5);
        assert_eq!(key_pose_index(&seq, &links), 7);
        // two equally distant frames: the earlier wins
        seq[3] = raised(1.5);
        assert_eq!(key_pose_index(&seq, &links), 3);
    }

    #[test]
    fn s1_examples() {
        let gt = vec![vec![0.1, 0.2, -0.3], vec![0.0, 0.5, 0.25]];
        assert_eq!(metric_s1(&gt, &gt).unwrap(), 0.0);
        let shifted: Vec<Vec<f64>> = gt.iter().map(|r| r.iter().map(|v| v + 0.1).collect()).collect();
        assert!((metric_s1(&gt, &shifted).unwrap() - 0.1).abs() < 1e-12);
        assert!(matches!(metric_s1(&gt, &gt[..1]), Err(EvalError::LengthMismatch { .. })));
        let empty: Vec<Vec<f64>> = Vec::new();
        assert_eq!(metric_s1(&empty, &empty), Err(EvalError::Empty));
    }

    #[test]
    fn s1_matches_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let t = rng.random_range(1..20);
            let a: Vec<Vec<f64>> = (0..t).map(|_| (0..10).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let b: Vec<Vec<f64>> = (0..t).map(|_| (0..10).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let mut acc = 0.0;
            for i in 0..t {
                for j in 0..10 {
                    acc += (a[i][j] - b[i][j]).powi(2);
                }
            }
            let want = (acc / (t * 10) as f64).sqrt();
            assert!((metric_s1(&a, &b).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn s2_compares_content_not_index() {
        let links = LinkLengths::default();
        let gt: Vec<RobotJointAngles> = (0..8).map(|i| raised(0.2 * i as f64)).collect();
        let same = metric_s2(&gt, &gt, &links).unwrap();
        assert_eq!(same, JointDistances::default());
        // same key pose content at a different frame index
        let mut moved = vec![gt[0], gt[7]];
        moved.extend_from_slice(&gt[1..7]);
        assert_eq!(key_pose_index(&gt, &links), 7);
        assert_eq!(key_pose_index(&moved, &links), 1);
        assert_eq!(metric_s2(&gt, &moved, &links).unwrap().total, 0.0);
    }

    #[test]
    fn s2_hand_evaluated_offset() {
        // generated key pose differs only by a 0.1 m wrist offset
        let links = LinkLengths::default();
        let gt = vec![rest(), raised(std::f64::consts::FRAC_PI_2)];
        let gen_pos: Vec<Positions> = gt
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mut p = forward_kinematics(a, &links).positions;
                if i == 1 {
                    p[RIGHT_WRIST].z -= 0.1;
                }
                p
            })
            .collect();
        let gt_pos = fk_track(&gt, &links);
        let s2 = metric_s2_positions(&gt_pos, &gen_pos).unwrap();
        assert!((s2.total - 0.1).abs() < 1e-12);
        assert!((s2.right_wrist - 0.1).abs() < 1e-12);
        assert_eq!(s2.head, 0.0);
        let s3 = metric_s3_positions(&gt_pos, &gen_pos).unwrap();
        assert!((s3.total - 0.1).abs() < 1e-12);
    }

    #[test]
    fn s3_is_local_to_the_last_frame() {
        let links = LinkLengths::default();
        let gt: Vec<RobotJointAngles> = (0..20).map(|i| raised(0.05 * i as f64)).collect();
        let mut gen = gt.clone();
        gen[19] = raised(0.0);
        let s3 = metric_s3(&gt, &gen, &links).unwrap();
        assert!(s3.total > 0.0);
        let flat = |b: &[RobotJointAngles]| b.iter().map(|a| a.angles.to_vec()).collect::<Vec<_>>();
        assert!(metric_s1(&flat(&gt), &flat(&gen)).unwrap() < 0.1);
        assert!(s3.right_wrist > 0.0 && s3.left_wrist == 0.0);
    }

    #[test]
    fn report_has_scenario_rows_and_aggregate() {
        let m = |id: &str, scen: u8, s1: f64| SampleMetrics {
            sample_id: id.into(),
            scenario: scen,
            s1,
            s2: JointDistances {
                total: 3.0 * s1,
                head: s1,
                left_wrist: s1,
                right_wrist: s1,
            },
            s3: JointDistances::default(),
        };
        let r = MetricReport::from_samples(vec![m("a", 4, 0.1), m("b", 2, 0.3), m("c", 4, 0.3)]);
        assert_eq!(r.rows.len(), 3);
        assert_eq!(r.rows[0].scenario, Some(2));
        assert!((r.rows[1].s1 - 0.2).abs() < 1e-12);
        assert_eq!(r.aggregate().samples, 3);
        let tsv = r.to_tsv();
        assert_eq!(tsv.lines().next().unwrap(), REPORT_HEADER);
        assert_eq!(tsv.lines().count(), 4);
        assert!(tsv.lines().last().unwrap().starts_with("all\t3\t"));
        assert_eq!(tsv.lines().nth(1).unwrap().split('\t').count(), 11);
    }

    fn arb_angles() -> impl Strategy<Value = RobotJointAngles> {
        prop::array::uniform10(-1.5f64..1.5).prop_map(RobotJointAngles::new)
    }

    proptest! {
        #[test]
        fn metrics_vanish_on_identical_sequences(seq in prop::collection::vec(arb_angles(), 1..12)) {
            let links = LinkLengths::default();
            let flat: Vec<Vec<f64>> = seq.iter().map(|a| a.angles.to_vec()).collect();
            prop_assert_eq!(metric_s1(&flat, &flat).unwrap(), 0.0);
            prop_assert_eq!(metric_s2(&seq, &seq, &links).unwrap().total, 0.0);
            prop_assert_eq!(metric_s3(&seq, &seq, &links).unwrap().total, 0.0);
        }

        #[test]
        fn s1_is_symmetric(a in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 10), 1..10),
                           seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect()).collect();
            prop_assert_eq!(metric_s1(&a, &b).unwrap(), metric_s1(&b, &a).unwrap());
            prop_assert!(metric_s1(&a, &b).unwrap() >= 0.0);
        }

        #[test]
        fn key_pose_ignores_translation(seq in prop::collection::vec(arb_angles(), 1..10),
                                        t in prop::array::uniform3(-5.0f64..5.0)) {
            let links = LinkLengths::default();
            let track = fk_track(&seq, &links);
            let off = Joint3::new(t[0], t[1], t[2]);
            let moved: Vec<Positions> = track.iter().map(|p| p.map(|j| j + off)).collect();
            prop_assert_eq!(key_pose_index_positions(&track), key_pose_index_positions(&moved));
        }

        #[test]
        fn padding_before_the_key_pose_keeps_s2_and_s3(seq in prop::collection::vec(arb_angles(), 2..10)) {
            let links = LinkLengths::default();
            let gen: Vec<RobotJointAngles> = seq.iter().rev().cloned().collect();
            let base2 = metric_s2(&seq, &gen, &links).unwrap();
            let base3 = metric_s3(&seq, &gen, &links).unwrap();
            // repeating frame 0 changes neither the key pose nor the final pose
            let mut a = seq.clone();
            a.insert(1, seq[0]);
            let mut b = gen.clone();
            b.insert(1, gen[0]);
            prop_assert_eq!(metric_s2(&a, &b, &links).unwrap(), base2);
            prop_assert_eq!(metric_s3(&a, &b, &links).unwrap(), base3);
        }
    }
}
