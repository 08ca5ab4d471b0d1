//! Scripted two-person interactions for desk-scale experiments.
//!
//! Each scenario pairs a user motion with a responder motion. Both people are
//! driven by joint-angle templates through forward kinematics on human-sized
//! links, then placed in the camera frame: the user about 3 m away facing the
//! camera, the responder 1.5 m away facing the user.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{InteractionSample, NUM_SCENARIOS};
use crate::skeleton::*;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub rng_seed: u64,
    pub samples_per_scenario: usize,
    /// Distinct subject ids cycled through within a scenario.
    pub subjects: usize,
    /// Sequence length range in 10 Hz frames, inclusive.
    pub min_frames: usize,
    pub max_frames: usize,
    /// Recording rate of the emitted tracks.
    pub fps: f64,
    /// Relative spread of motion amplitudes.
    pub amplitude_jitter: f64,
    /// Spread of motion onset, seconds.
    pub timing_jitter: f64,
    /// Spread of the user's standing position, meters.
    pub offset_jitter: f64,
    /// Spread of the handshake arm elevation around 1 rad.
    pub handshake_jitter: f64,
    /// Per-coordinate Gaussian noise, meters.
    pub noise_std: f64,
    /// Rest time before any motion starts, seconds.
    pub lead_in: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            samples_per_scenario: 10,
            subjects: 5,
            min_frames: 45,
            max_frames: 60,
            fps: 10.0,
            amplitude_jitter: 0.1,
            timing_jitter: 0.4,
            offset_jitter: 0.15,
            handshake_jitter: 0.5,
            noise_std: 0.002,
            lead_in: 1.6,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        let mags = [
            self.amplitude_jitter,
            self.timing_jitter,
            self.offset_jitter,
            self.handshake_jitter,
            self.noise_std,
            self.lead_in,
        ];
        if mags.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
            return Err("jitter and noise magnitudes must be finite and >= 0".into());
        }
        if self.subjects == 0 {
            return Err("subjects must be >= 1".into());
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err("need 1 <= min_frames <= max_frames".into());
        }
        if !(self.fps >= 10.0 && self.fps.is_finite()) {
            return Err("fps must be >= 10".into());
        }
        if self.handshake_jitter > 0.9 {
            return Err("handshake_jitter must be <= 0.9".into());
        }
        Ok(())
    }
}

const HUMAN_LINKS: LinkLengths = LinkLengths {
    torso_spine: 0.5,
    spine_head: 0.2,
    spine_shoulder: 0.18,
    upper_arm: 0.28,
    forearm: 0.26,
};

const USER_SPOT: Joint3 = Joint3::new(0.0, 0.0, 3.0);
const RESPONDER_SPOT: Joint3 = Joint3::new(0.0, 0.0, 1.5);

/// Seconds the responder trails the user by.
const RESPONSE_LAG: f64 = 0.3;

fn user_rest() -> [f64; NUM_ANGLES] {
    let mut a = [0.0; NUM_ANGLES];
    a[L_SHOULDER_ROLL] = 0.1;
    a[R_SHOULDER_ROLL] = 0.1;
    a[L_ELBOW_ROLL] = 0.2;
    a[R_ELBOW_ROLL] = 0.2;
    a
}

fn responder_rest() -> [f64; NUM_ANGLES] {
    let mut a = [0.0; NUM_ANGLES];
    a[L_SHOULDER_PITCH] = 0.1;
    a[R_SHOULDER_PITCH] = 0.1;
    a[L_SHOULDER_ROLL] = 0.12;
    a[R_SHOULDER_ROLL] = 0.12;
    a[L_ELBOW_ROLL] = 0.4;
    a[R_ELBOW_ROLL] = 0.4;
    a
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Rise, hold and release of one gesture, in seconds.
#[derive(Clone, Copy, Debug)]
struct Envelope {
    start: f64,
    rise: f64,
    hold: f64,
    fall: f64,
}

impl Envelope {
    /// Rise, hold and fall of 15% of the sample each, after `start` seconds.
    fn phases(start: f64, duration: f64) -> Self {
        let k = 0.15 * duration;
        Self {
            start,
            rise: k,
            hold: k,
            fall: k,
        }
    }

    fn at(&self, t: f64) -> f64 {
        smoothstep((t - self.start) / self.rise)
            - smoothstep((t - self.start - self.rise - self.hold) / self.fall)
    }

    /// Rises with the gesture and never releases.
    fn ramp(&self, t: f64) -> f64 {
        smoothstep((t - self.start) / (self.rise + self.hold))
    }

    fn delayed(self, d: f64) -> Self {
        Self {
            start: self.start + d,
            ..self
        }
    }
}

/// Offsets from the rest pose at full gesture strength.
fn offsets(pairs: &[(usize, f64)]) -> [f64; NUM_ANGLES] {
    let mut a = [0.0; NUM_ANGLES];
    for &(i, v) in pairs {
        a[i] = v;
    }
    a
}

/// Everything that varies between repetitions of one scenario.
#[derive(Clone, Copy, Debug)]
struct Script {
    scenario: u8,
    duration: f64,
    env: Envelope,
    amp: f64,
    user_offset: Joint3,
    handshake_pitch: f64,
}

impl Script {
    fn user(&self, t: f64) -> HumanPose {
        use std::f64::consts::PI;
        let e = self.env.at(t);
        let mut a = user_rest();
        let mut root = USER_SPOT + self.user_offset;
        let mut facing = PI;
        let walk_swing = |a: &mut [f64; NUM_ANGLES], w: f64| {
            let s = 0.3 * w * (2.0 * PI * t).sin();
            a[L_SHOULDER_PITCH] += s;
            a[R_SHOULDER_PITCH] -= s;
        };
        let gesture = match self.scenario {
            1 => {
                let r = self.env.ramp(t);
                root = root + Joint3::new(0.0, 0.0, 1.2 * self.amp * (1.0 - r));
                walk_swing(&mut a, 4.0 * r * (1.0 - r));
                [0.0; NUM_ANGLES]
            }
            2 => {
                let ang = 1.2 * self.amp * e;
                root = root + Joint3::new(0.8 * ang.sin(), 0.0, 0.8 * (1.0 - ang.cos()));
                facing -= 0.8 * ang;
                walk_swing(&mut a, (4.0 * e * (1.0 - e)).max(0.3 * e));
                [0.0; NUM_ANGLES]
            }
            3 => offsets(&[(HEAD_PITCH, 0.1), (HIP_PITCH, 0.03)]),
            4 => offsets(&[
                (R_SHOULDER_PITCH, self.handshake_pitch),
                (R_ELBOW_ROLL, 0.2),
            ]),
            5 => offsets(&[
                (HIP_PITCH, 0.25),
                (HEAD_PITCH, 0.35),
                (L_SHOULDER_PITCH, 1.3),
                (R_SHOULDER_PITCH, 1.3),
                (L_SHOULDER_ROLL, -0.25),
                (R_SHOULDER_ROLL, -0.25),
                (L_ELBOW_ROLL, 1.3),
                (R_ELBOW_ROLL, 1.3),
            ]),
            6 => offsets(&[
                (HIP_PITCH, -0.1),
                (R_SHOULDER_PITCH, 2.3),
                (R_SHOULDER_ROLL, 0.2),
                (R_ELBOW_ROLL, 0.7),
            ]),
            _ => {
                let r = self.env.ramp(t);
                facing += PI * smoothstep(2.0 * r);
                let walk = smoothstep(2.0 * r - 1.0);
                root = root + Joint3::new(0.0, 0.0, self.amp * walk);
                walk_swing(&mut a, 4.0 * walk * (1.0 - walk));
                [0.0; NUM_ANGLES]
            }
        };
        for (v, g) in a.iter_mut().zip(gesture) {
            *v += self.amp * g * e;
        }
        place(&a, facing, root)
    }

    fn responder(&self, t: f64) -> HumanPose {
        let e = self.env.delayed(RESPONSE_LAG).at(t);
        let bow = offsets(&[(HIP_PITCH, 0.5), (HEAD_PITCH, 0.25), (L_SHOULDER_PITCH, 0.15), (R_SHOULDER_PITCH, 0.15)]);
        let gesture = match self.scenario {
            1 | 7 => bow,
            2 => offsets(&[(HEAD_PITCH, -0.1), (HIP_PITCH, -0.05)]),
            3 => offsets(&[(HEAD_PITCH, 0.12)]),
            4 => offsets(&[
                (HIP_PITCH, 0.1),
                (R_SHOULDER_PITCH, self.handshake_pitch - 0.1),
                (R_SHOULDER_ROLL, -0.05),
                (R_ELBOW_ROLL, -0.05),
            ]),
            5 => offsets(&[
                (HIP_PITCH, 0.15),
                (L_SHOULDER_PITCH, 1.25),
                (R_SHOULDER_PITCH, 1.25),
                (L_SHOULDER_ROLL, 0.45),
                (R_SHOULDER_ROLL, 0.45),
                (L_ELBOW_YAW, 0.5),
                (R_ELBOW_YAW, 0.5),
                (L_ELBOW_ROLL, 0.5),
                (R_ELBOW_ROLL, 0.5),
            ]),
            _ => offsets(&[
                (HEAD_PITCH, 0.3),
                (HIP_PITCH, -0.1),
                (L_SHOULDER_PITCH, 1.4),
                (R_SHOULDER_PITCH, 1.4),
                (L_SHOULDER_ROLL, -0.05),
                (R_SHOULDER_ROLL, -0.05),
                (L_ELBOW_YAW, 0.4),
                (R_ELBOW_YAW, 0.4),
                (L_ELBOW_ROLL, 0.9),
                (R_ELBOW_ROLL, 0.9),
            ]),
        };
        let mut a = responder_rest();
        for (v, g) in a.iter_mut().zip(gesture) {
            *v += self.amp * g * e;
        }
        place(&a, 0.0, RESPONDER_SPOT)
    }
}

fn place(angles: &[f64; NUM_ANGLES], facing: f64, root: Joint3) -> HumanPose {
    let fk = forward_kinematics(&RobotJointAngles::new(*angles), &HUMAN_LINKS);
    let yaw = Rot3::about_y(facing);
    HumanPose {
        joints: fk.positions.map(|p| yaw.apply(p) + root),
    }
}

fn render(script: &Script, fps: f64, noise: f64, rng: &mut ChaCha8Rng) -> (Vec<HumanPose>, Vec<HumanPose>) {
    let frames = (script.duration * fps).round() as usize;
    let normal = Normal::new(0.0, noise.max(0.0)).expect("finite std");
    let mut jitter = |p: HumanPose| {
        if noise == 0.0 {
            return p;
        }
        HumanPose {
            joints: p
                .joints
                .map(|j| j + Joint3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))),
        }
    };
    let mut user = Vec::with_capacity(frames);
    let mut resp = Vec::with_capacity(frames);
    for i in 0..frames {
        let t = i as f64 / fps;
        user.push(jitter(script.user(t)));
        resp.push(jitter(script.responder(t)));
    }
    (user, resp)
}

fn draw_script(scenario: u8, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Script {
    let mut sym = |mag: f64| if mag > 0.0 { rng.random_range(-mag..=mag) } else { 0.0 };
    let frames = if cfg.max_frames > cfg.min_frames {
        cfg.min_frames + (sym(1.0).abs() * (cfg.max_frames - cfg.min_frames) as f64).round() as usize
    } else {
        cfg.min_frames
    };
    let duration = frames as f64 / 10.0;
    let env = Envelope::phases(cfg.lead_in + sym(cfg.timing_jitter).abs(), duration);
    Script {
        scenario,
        duration,
        env,
        amp: 1.0 + sym(cfg.amplitude_jitter),
        user_offset: Joint3::new(sym(cfg.offset_jitter), 0.0, sym(cfg.offset_jitter)),
        handshake_pitch: 1.0 + sym(cfg.handshake_jitter),
    }
}

/// `7 × samples_per_scenario` samples, deterministic in `rng_seed`.
pub fn synthesize_dataset(cfg: &SynthConfig) -> Vec<InteractionSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut out = Vec::with_capacity(NUM_SCENARIOS as usize * cfg.samples_per_scenario);
    let subjects = cfg.subjects.max(1);
    for scenario in 1..=NUM_SCENARIOS {
        for k in 0..cfg.samples_per_scenario {
            let script = draw_script(scenario, cfg, &mut rng);
            let (user_track, responder_track) = render(&script, cfg.fps, cfg.noise_std, &mut rng);
            out.push(InteractionSample {
                sample_id: format!("s{scenario}_p{:03}_r{:02}", k % subjects, k / subjects),
                scenario,
                subject_id: format!("p{:03}", k % subjects),
                fps: cfg.fps,
                user_track,
                responder_track,
            });
        }
    }
    out
}

/// A handshake whose user raises the right arm to `user_pitch` radians.
///
/// Timing, placement and noise follow `cfg` with the jitter disabled.
pub fn handshake_sample(user_pitch: f64, frames: usize, cfg: &SynthConfig) -> InteractionSample {
    let duration = frames as f64 / 10.0;
    let script = Script {
        scenario: 4,
        duration,
        env: Envelope::phases(cfg.lead_in, duration),
        amp: 1.0,
        user_offset: Joint3::ZERO,
        handshake_pitch: user_pitch,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let (user_track, responder_track) = render(&script, cfg.fps, cfg.noise_std, &mut rng);
    InteractionSample {
        sample_id: format!("handshake_{user_pitch:.3}"),
        scenario: 4,
        subject_id: "probe".into(),
        fps: cfg.fps,
        user_track,
        responder_track,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::key_pose_index;

    #[test]
    fn counts_per_scenario() {
        let data = synthesize_dataset(&SynthConfig::default());
        assert_eq!(data.len(), 70);
        for s in 1..=7 {
            assert_eq!(data.iter().filter(|d| d.scenario == s).count(), 10);
        }
        for d in &data {
            d.validate().unwrap();
            assert!((45..=60).contains(&d.len()));
        }
    }

    #[test]
    fn seeded_and_reproducible() {
        let cfg = SynthConfig::default();
        assert_eq!(synthesize_dataset(&cfg), synthesize_dataset(&cfg));
        let other = SynthConfig { rng_seed: 1, ..cfg };
        assert_ne!(synthesize_dataset(&cfg), synthesize_dataset(&other));
    }

    #[test]
    fn zero_jitter_repeats_exactly() {
        let cfg = SynthConfig {
            samples_per_scenario: 3,
            amplitude_jitter: 0.0,
            timing_jitter: 0.0,
            offset_jitter: 0.0,
            handshake_jitter: 0.0,
            noise_std: 0.0,
            min_frames: 45,
            max_frames: 45,
            ..SynthConfig::default()
        };
        let data = synthesize_dataset(&cfg);
        for scen in data.chunks(3) {
            for rep in &scen[1..] {
                assert_eq!(rep.user_track, scen[0].user_track);
                assert_eq!(rep.responder_track, scen[0].responder_track);
            }
        }
    }

    #[test]
    fn thirty_hz_downsamples_to_ten_hz_render() {
        let base = SynthConfig {
            samples_per_scenario: 1,
            noise_std: 0.0,
            ..SynthConfig::default()
        };
        let ten = synthesize_dataset(&base);
        let thirty = synthesize_dataset(&SynthConfig { fps: 30.0, ..base });
        for (a, b) in ten.iter().zip(&thirty) {
            let d = b.downsampled().unwrap();
            assert_eq!(d.len(), a.len());
            for (p, q) in d.user_track.iter().zip(&a.user_track) {
                for (x, y) in p.joints.iter().zip(&q.joints) {
                    assert!((*x - *y).norm() < 1e-9);
                }
            }
        }
    }

    fn responder_key_wrist_height(s: &InteractionSample) -> f64 {
        let cfg = crate::dataio::ExtractConfig::default();
        let angles: Vec<RobotJointAngles> = s
            .responder_track
            .iter()
            .map(|p| RobotJointAngles::from_slice(&crate::dataio::encode_robot(p, &cfg).unwrap()).unwrap())
            .collect();
        let links = LinkLengths::default();
        let k = key_pose_index(&angles, &links);
        forward_kinematics(&angles[k], &links).joint(RIGHT_WRIST).y
    }

    #[test]
    fn handshake_response_tracks_user_wrist_height() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            ..SynthConfig::default()
        };
        let low = handshake_sample(0.6, 50, &cfg);
        let high = handshake_sample(1.4, 50, &cfg);
        let user_wrist = |s: &InteractionSample| {
            s.user_track.iter().map(|p| p.joints[RIGHT_WRIST].y).fold(f64::MIN, f64::max)
        };
        assert!(user_wrist(&low) < user_wrist(&high));
        assert!(responder_key_wrist_height(&low) < responder_key_wrist_height(&high));
    }

    #[test]
    fn nothing_moves_during_the_lead_in() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            ..SynthConfig::default()
        };
        let still = (cfg.lead_in * cfg.fps) as usize;
        for s in synthesize_dataset(&cfg) {
            assert!(s.len() > still + 20);
            for track in [&s.user_track, &s.responder_track] {
                assert!(track[..still].iter().all(|p| p == &track[0]), "{}", s.sample_id);
                assert_ne!(track[still + 20], track[0], "{}", s.sample_id);
            }
        }
    }

    #[test]
    fn responder_angles_stay_inside_limits() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            ..SynthConfig::default()
        };
        let limits = JointLimits::default();
        for s in synthesize_dataset(&cfg) {
            for p in &s.responder_track {
                let a = skeleton_to_joint_angles_unclamped(&align_to_body_frame(p)).unwrap();
                assert!(limits.contains_strictly(&a), "scenario {} {a:?}", s.scenario);
            }
        }
    }
}
