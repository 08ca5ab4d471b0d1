//! Encoder, decoder and discriminator.
//!
//! The encoder LSTM reads `m` user poses and maps its last hidden state to a
//! latent code `z`. Two dense heads turn `z` into the decoder's initial hidden
//! and cell states. Every decoder step sees the previous robot pose
//! concatenated with the seed pose, and its dense head predicts the change
//! from the previous pose. The discriminator LSTM scores an `n`-step robot
//! sequence with a sigmoid head.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{init_lstm_bias, init_weight, lstm_cell, lstm_sequence, LstmVars, Tape, Tensor, Var};
use crate::dataio::{ExtractConfig, RobotRepr, UserRepr};
use crate::skeleton::{clamp_joint_limits, JointLimits, RobotJointAngles, NUM_ANGLES, USER_VEC_LEN};
use crate::{AutodiffError, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Discriminator scores the next `n` poses instead of a later window.
    OriginalGan,
    /// Reconstruction loss only.
    NoGan,
    /// Raw 27-value joint positions for the user.
    UserPositions,
    /// 25-value direction encoding for the robot.
    RobotVectors,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::OriginalGan,
        Variant::NoGan,
        Variant::UserPositions,
        Variant::RobotVectors,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::OriginalGan => "original-gan",
            Variant::NoGan => "no-gan",
            Variant::UserPositions => "user-positions",
            Variant::RobotVectors => "robot-vectors",
        }
    }

    pub fn uses_gan(self) -> bool {
        self != Variant::NoGan
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let key = s.trim().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| {
                format!("unknown variant {s:?} (expected full, original-gan, no-gan, user-positions or robot-vectors)")
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub m: usize,
    pub n: usize,
    pub l: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub disc_hidden: usize,
    pub z_dim: usize,
    pub user_dim: usize,
    pub robot_dim: usize,
    /// Decoder head predicts the change from the step's input pose rather than the pose itself.
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            m: 15,
            n: 5,
            l: 30,
            enc_hidden: 256,
            dec_hidden: 512,
            disc_hidden: 512,
            z_dim: 128,
            user_dim: USER_VEC_LEN,
            robot_dim: NUM_ANGLES,
            residual: false,
        }
    }
}

impl ModelConfig {
    /// Full-size configuration for a variant.
    pub fn for_variant(variant: Variant) -> Self {
        Self::default().with_variant(variant)
    }

    /// Smaller hidden sizes for single-core runs.
    pub fn desk(variant: Variant) -> Self {
        Self {
            enc_hidden: 64,
            dec_hidden: 128,
            disc_hidden: 128,
            z_dim: 32,
            ..Self::for_variant(variant)
        }
    }

    /// Switches variant and sets the dimensions and offset it implies.
    pub fn with_variant(mut self, variant: Variant) -> Self {
        if self.variant == Variant::OriginalGan && variant != Variant::OriginalGan && self.l == 0 {
            self.l = self.n + 25;
        }
        self.variant = variant;
        self.user_dim = self.user_repr().dim();
        self.robot_dim = self.robot_repr().dim();
        if variant == Variant::OriginalGan {
            self.l = 0;
        }
        self
    }

    pub fn user_repr(&self) -> UserRepr {
        match self.variant {
            Variant::UserPositions => UserRepr::Positions,
            _ => UserRepr::Vectors,
        }
    }

    pub fn robot_repr(&self) -> RobotRepr {
        match self.variant {
            Variant::RobotVectors => RobotRepr::Vectors,
            _ => RobotRepr::JointAngles,
        }
    }

    /// Decoder steps unrolled per training pair.
    pub fn rollout_len(&self) -> usize {
        if self.variant.uses_gan() {
            self.n + self.l
        } else {
            self.n
        }
    }

    /// Whether generated poses are joint angles to be clamped into the limits.
    pub fn clamps_output(&self) -> bool {
        self.robot_repr() == RobotRepr::JointAngles && self.robot_dim == NUM_ANGLES
    }

    pub fn extract_config(&self) -> ExtractConfig {
        ExtractConfig {
            m: self.m,
            n: self.n,
            l: self.l,
            user_repr: self.user_repr(),
            robot_repr: self.robot_repr(),
            ..ExtractConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let sizes = [
            ("m", self.m),
            ("n", self.n),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("disc_hidden", self.disc_hidden),
            ("z_dim", self.z_dim),
            ("user_dim", self.user_dim),
            ("robot_dim", self.robot_dim),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be >= 1"));
        }
        match self.variant {
            Variant::OriginalGan if self.l != 0 => bad(format!("variant original-gan needs l = 0, got {}", self.l)),
            Variant::UserPositions if self.user_dim != 27 => {
                bad(format!("variant user-positions needs user_dim = 27, got {}", self.user_dim))
            }
            Variant::RobotVectors if self.robot_dim != USER_VEC_LEN => {
                bad(format!("variant robot-vectors needs robot_dim = 25, got {}", self.robot_dim))
            }
            _ => Ok(()),
        }
    }
}

pub const PARAM_NAMES: [&str; 19] = [
    "enc.lstm.w_ih",
    "enc.lstm.w_hh",
    "enc.lstm.b",
    "enc.head.w",
    "enc.head.b",
    "bridge.h.w",
    "bridge.h.b",
    "bridge.c.w",
    "bridge.c.b",
    "dec.lstm.w_ih",
    "dec.lstm.w_hh",
    "dec.lstm.b",
    "dec.head.w",
    "dec.head.b",
    "disc.lstm.w_ih",
    "disc.lstm.w_hh",
    "disc.lstm.b",
    "disc.head.w",
    "disc.head.b",
];

/// Encoder, bridge and decoder tensors.
pub const GENERATOR: Range<usize> = 0..14;
pub const DISCRIMINATOR: Range<usize> = 14..19;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// In [`PARAM_NAMES`] order.
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn shapes(c: &ModelConfig) -> Vec<Vec<usize>> {
        let (e, d, h, z, u, r) = (c.enc_hidden, c.dec_hidden, c.disc_hidden, c.z_dim, c.user_dim, c.robot_dim);
        vec![
            vec![4 * e, u],
            vec![4 * e, e],
            vec![4 * e],
            vec![z, e],
            vec![z],
            vec![d, z],
            vec![d],
            vec![d, z],
            vec![d],
            vec![4 * d, 2 * r],
            vec![4 * d, d],
            vec![4 * d],
            vec![r, d],
            vec![r],
            vec![4 * h, r],
            vec![4 * h, h],
            vec![4 * h],
            vec![1, h],
            vec![1],
        ]
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: *config,
            tensors: Self::shapes(config).iter().map(|s| Tensor::zeros(s)).collect(),
        })
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases, forget-gate biases at +1.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = Self::shapes(config)
            .into_iter()
            .zip(PARAM_NAMES)
            .map(|(shape, name)| match shape.as_slice() {
                &[rows, fan_in] => init_weight(&mut rng, rows, fan_in),
                &[len] if name.contains("lstm") => init_lstm_bias(len / 4),
                s => Tensor::zeros(s),
            })
            .collect();
        Ok(Self {
            config: *config,
            tensors,
        })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        PARAM_NAMES.iter().position(|n| *n == name).map(|i| &self.tensors[i])
    }

    pub fn generator(&self) -> &[Tensor] {
        &self.tensors[GENERATOR]
    }

    pub fn discriminator(&self) -> &[Tensor] {
        &self.tensors[DISCRIMINATOR]
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Puts every tensor on the tape; `grad_generator` / `grad_discriminator`
    /// select which groups are tracked.
    pub fn bind(&self, tape: &mut Tape, grad_generator: bool, grad_discriminator: bool) -> Bound {
        let mut vars = vec![None; PARAM_NAMES.len()];
        for i in GENERATOR {
            vars[i] = Some(tape.leaf(self.tensors[i].clone(), grad_generator));
        }
        let mut b = Bound {
            config: self.config,
            vars,
        };
        b.bind_discriminator(self, tape, grad_discriminator);
        b
    }

    /// Binds only the generator; the discriminator can be attached later.
    pub fn bind_generator(&self, tape: &mut Tape, requires_grad: bool) -> Bound {
        let mut vars = vec![None; PARAM_NAMES.len()];
        for i in GENERATOR {
            vars[i] = Some(tape.leaf(self.tensors[i].clone(), requires_grad));
        }
        Bound {
            config: self.config,
            vars,
        }
    }

    /// Binds only the discriminator.
    pub fn bind_discriminator_only(&self, tape: &mut Tape, requires_grad: bool) -> Bound {
        let mut b = Bound {
            config: self.config,
            vars: vec![None; PARAM_NAMES.len()],
        };
        b.bind_discriminator(self, tape, requires_grad);
        b
    }
}

/// Decoder outputs and the previous-pose half of each step's input.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub outputs: Vec<Var>,
    pub inputs: Vec<Var>,
}

/// Tape handles of a model's tensors.
#[derive(Clone, Debug)]
pub struct Bound {
    pub config: ModelConfig,
    vars: Vec<Option<Var>>,
}

impl Bound {
    pub fn bind_discriminator(&mut self, params: &ModelParams, tape: &mut Tape, requires_grad: bool) {
        for i in DISCRIMINATOR {
            self.vars[i] = Some(tape.leaf(params.tensors[i].clone(), requires_grad));
        }
    }

    /// Handle of tensor `i`, if bound.
    pub fn var(&self, i: usize) -> Option<Var> {
        self.vars[i]
    }

    fn v(&self, i: usize) -> Result<Var> {
        self.vars[i].ok_or_else(|| AutodiffError::Graph(format!("{} is not bound", PARAM_NAMES[i])).into())
    }

    fn lstm(&self, first: usize, hidden: usize) -> Result<LstmVars> {
        Ok(LstmVars {
            w_ih: self.v(first)?,
            w_hh: self.v(first + 1)?,
            b: self.v(first + 2)?,
            hidden,
        })
    }

    /// User windows `m × [B×user_dim]` to latent codes `[B×z_dim]`.
    pub fn encode(&self, tape: &mut Tape, window: &[Var]) -> Result<Var> {
        let c = &self.config;
        if window.len() != c.m {
            return Err(shape_err("encode", c.m, window.len()));
        }
        let p = self.lstm(0, c.enc_hidden)?;
        let hs = lstm_sequence(tape, window, &p)?;
        let last = *hs.last().expect("m >= 1");
        Ok(tape.affine(last, self.v(3)?, self.v(4)?)?)
    }

    /// Unrolls the decoder for `steps` steps from `seed` `[B×robot_dim]`.
    ///
    /// The input of step `s + 1` is `forced[s - 1]` on rows where `mask` is
    /// set and `s <= forced.len()`, otherwise the output of step `s`.
    pub fn decode(
        &self,
        tape: &mut Tape,
        z: Var,
        seed: Var,
        steps: usize,
        forced: &[Var],
        mask: &[bool],
    ) -> Result<Vec<Var>> {
        Ok(self.decode_traced(tape, z, seed, steps, forced, mask)?.outputs)
    }

    /// Like [`Bound::decode`], also returning the pose fed to each step.
    pub fn decode_traced(
        &self,
        tape: &mut Tape,
        z: Var,
        seed: Var,
        steps: usize,
        forced: &[Var],
        mask: &[bool],
    ) -> Result<Decoded> {
        let c = &self.config;
        if steps == 0 {
            return Err(shape_err("decode", 1, 0));
        }
        let hb = tape.affine(z, self.v(5)?, self.v(6)?)?;
        let mut h = tape.tanh(hb);
        let mut cell = tape.affine(z, self.v(7)?, self.v(8)?)?;
        let p = self.lstm(9, c.dec_hidden)?;
        let (hw, hb) = (self.v(12)?, self.v(13)?);
        let any_forced = mask.iter().any(|&m| m);

        let mut prev = seed;
        let mut outs = Vec::with_capacity(steps);
        let mut inputs = Vec::with_capacity(steps);
        for s in 0..steps {
            if s > 0 {
                prev = outs[s - 1];
                if any_forced && s <= forced.len() {
                    prev = tape.select_rows(forced[s - 1], prev, mask)?;
                }
            }
            inputs.push(prev);
            let x = tape.concat(&[prev, seed])?;
            let (nh, nc) = lstm_cell(tape, x, h, cell, &p)?;
            h = nh;
            cell = nc;
            let head = tape.affine(h, hw, hb)?;
            outs.push(if c.residual { tape.add(prev, head)? } else { head });
        }
        Ok(Decoded { outputs: outs, inputs })
    }

    /// One unrolling of `n + l` steps (`n` without the discriminator).
    /// Returns the first `n` outputs and the `n` outputs starting at step `l + 1`.
    pub fn rollout_future(
        &self,
        tape: &mut Tape,
        z: Var,
        seed: Var,
        targets: &[Var],
        mask: &[bool],
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let c = &self.config;
        let forced = &targets[..targets.len().min(c.n.saturating_sub(1))];
        let outs = self.decode(tape, z, seed, c.rollout_len(), forced, mask)?;
        let next = outs[..c.n].to_vec();
        let future = if c.variant.uses_gan() {
            outs[c.l..c.l + c.n].to_vec()
        } else {
            Vec::new()
        };
        Ok((next, future))
    }

    /// Probability `[B×1]` that each row's sequence is real.
    pub fn discriminate(&self, tape: &mut Tape, seq: &[Var]) -> Result<Var> {
        let c = &self.config;
        if seq.len() != c.n {
            return Err(shape_err("discriminate", c.n, seq.len()));
        }
        let p = self.lstm(14, c.disc_hidden)?;
        let hs = lstm_sequence(tape, seq, &p)?;
        let logit = tape.affine(*hs.last().expect("n >= 1"), self.v(17)?, self.v(18)?)?;
        Ok(tape.sigmoid(logit))
    }
}

fn shape_err(op: &'static str, expected: usize, got: usize) -> Error {
    AutodiffError::ShapeMismatch {
        op,
        expected: vec![expected],
        got: vec![got],
    }
    .into()
}

/// Stacks row `i` of every sequence: `steps × [B×dim]` from `B` sequences.
pub fn stack_steps<S: AsRef<[Vec<f64>]>>(seqs: &[S]) -> Result<Vec<Tensor>> {
    let steps = seqs.first().map_or(0, |s| s.as_ref().len());
    (0..steps)
        .map(|t| {
            let rows: Vec<&[f64]> = seqs.iter().map(|s| s.as_ref()[t].as_slice()).collect();
            Tensor::from_rows(&rows).map_err(Error::from)
        })
        .collect()
}

impl ModelParams {
    /// Latent codes for a batch of user windows, each `m × user_dim`.
    pub fn encode_batch<S: AsRef<[Vec<f64>]>>(&self, windows: &[S]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind_generator(&mut tape, false);
        let xs: Vec<Var> = stack_steps(windows)?.into_iter().map(|t| tape.constant(t)).collect();
        let z = b.encode(&mut tape, &xs)?;
        Ok(tape.value(z).clone())
    }

    /// Free-running decoder outputs, one `steps × robot_dim` sequence per row.
    pub fn decode_batch(&self, z: &Tensor, seeds: &[Vec<f64>], steps: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut tape = Tape::new();
        let b = self.bind_generator(&mut tape, false);
        let zv = tape.constant(z.clone());
        let sv = tape.constant(Tensor::from_rows(seeds)?);
        let outs = b.decode(&mut tape, zv, sv, steps, &[], &[])?;
        Ok((0..seeds.len())
            .map(|r| outs.iter().map(|&o| tape.value(o).row(r).to_vec()).collect())
            .collect())
    }

    /// Next robot pose for each `(window, current pose)` row; joint angles are clamped.
    pub fn generate_batch<S: AsRef<[Vec<f64>]>>(&self, windows: &[S], current: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let c = &self.config;
        for w in windows {
            if w.as_ref().len() != c.m || w.as_ref().iter().any(|u| u.len() != c.user_dim) {
                return Err(shape_err("generate_step", c.m, w.as_ref().len()));
            }
        }
        if current.iter().any(|r| r.len() != c.robot_dim) {
            return Err(shape_err("generate_step", c.robot_dim, current[0].len()));
        }
        let z = self.encode_batch(windows)?;
        let limits = JointLimits::default();
        Ok(self
            .decode_batch(&z, current, 1)?
            .into_iter()
            .map(|mut seq| {
                let pose = seq.pop().expect("one step");
                if c.clamps_output() {
                    let a = RobotJointAngles::from_slice(&pose).expect("robot_dim = 10");
                    clamp_joint_limits(&a, &limits).angles.to_vec()
                } else {
                    pose
                }
            })
            .collect())
    }

    /// Operational mode: the next robot pose given `m` user poses and the current robot pose.
    pub fn generate_step(&self, window: &[Vec<f64>], current: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .generate_batch(&[window], &[current.to_vec()])?
            .pop()
            .expect("one row"))
    }

    /// Discriminator probability for each `n`-step sequence.
    pub fn discriminate_batch<S: AsRef<[Vec<f64>]>>(&self, seqs: &[S]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.bind_discriminator_only(&mut tape, false);
        let xs: Vec<Var> = stack_steps(seqs)?.into_iter().map(|t| tape.constant(t)).collect();
        let p = b.discriminate(&mut tape, &xs)?;
        Ok(tape.value(p).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy() -> ModelConfig {
        ModelConfig {
            m: 4,
            n: 2,
            l: 3,
            enc_hidden: 6,
            dec_hidden: 7,
            disc_hidden: 5,
            z_dim: 3,
            user_dim: 5,
            robot_dim: 3,
            ..ModelConfig::default()
        }
    }

    fn rand_seq(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..len)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn variant_names_parse_both_spellings() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(v.name().replace('-', "_").parse::<Variant>().unwrap(), v);
        }
        assert!("gan".parse::<Variant>().is_err());
    }

    #[test]
    fn variant_fixes_dimensions() {
        assert_eq!(ModelConfig::for_variant(Variant::OriginalGan).l, 0);
        assert_eq!(ModelConfig::for_variant(Variant::UserPositions).user_dim, 27);
        assert_eq!(ModelConfig::for_variant(Variant::RobotVectors).robot_dim, 25);
        let back = ModelConfig::for_variant(Variant::OriginalGan).with_variant(Variant::Full);
        assert_eq!(back, ModelConfig::default());
        assert_eq!(ModelConfig::default().rollout_len(), 35);
        assert_eq!(ModelConfig::for_variant(Variant::NoGan).rollout_len(), 5);
        let bad = ModelConfig {
            l: 5,
            ..ModelConfig::for_variant(Variant::OriginalGan)
        };
        assert!(bad.validate().is_err());
        for v in Variant::ALL {
            ModelConfig::for_variant(v).validate().unwrap();
        }
    }

    #[test]
    fn init_follows_shape_table() {
        let p = ModelParams::init(&ModelConfig::desk(Variant::Full), 1).unwrap();
        for (t, s) in p.tensors.iter().zip(ModelParams::shapes(&p.config)) {
            assert_eq!(t.shape(), s.as_slice());
        }
        let b = p.get("dec.lstm.b").unwrap();
        assert_eq!(b.data()[128], 1.0);
        assert_eq!(b.data()[0], 0.0);
        assert!(p.get("enc.head.b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn latent_has_z_dim_values() {
        let cfg = ModelConfig::default();
        let p = ModelParams::init(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = rand_seq(&mut rng, 15, 25);
        let z = p.encode_batch(&[w]).unwrap();
        assert_eq!(z.shape(), &[1, 128]);
    }

    #[test]
    fn zero_model_encodes_zero() {
        let p = ModelParams::zeros(&toy()).unwrap();
        let z = p.encode_batch(&[vec![vec![0.0; 5]; 4]]).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let d = p.discriminate_batch(&[vec![vec![0.3; 3]; 2]]).unwrap();
        assert_eq!(d, vec![0.5]);
    }

    #[test]
    fn encoder_remembers_first_pose() {
        let p = ModelParams::init(&toy(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_seq(&mut rng, 4, 5);
        let mut b = a.clone();
        b[0][2] += 0.5;
        let za = p.encode_batch(&[a]).unwrap();
        let zb = p.encode_batch(&[b]).unwrap();
        assert_ne!(za, zb);
    }

    #[test]
    fn decode_shapes_and_operational_mode() {
        let p = ModelParams::init(&toy(), 2).unwrap();
        let z = Tensor::from_rows(&[vec![0.1, -0.2, 0.3]]).unwrap();
        let out = p.decode_batch(&z, &[vec![0.0, 0.5, -0.5]], 5).unwrap();
        assert_eq!(out[0].len(), 5);
        assert!(out[0].iter().all(|r| r.len() == 3));
        let one = p.decode_batch(&z, &[vec![0.0, 0.5, -0.5]], 1).unwrap();
        assert_eq!(one[0][0], out[0][0]);
    }

    fn traced(mask_row: bool, with_targets: bool) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let p = ModelParams::init(&toy(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let seed = rand_seq(&mut rng, 1, 3).remove(0);
        let targets = rand_seq(&mut rng, 4, 3);
        let mut tape = Tape::new();
        let b = p.bind_generator(&mut tape, false);
        let z = tape.constant(Tensor::from_rows(&[vec![0.2, 0.1, -0.3]]).unwrap());
        let s = tape.constant(Tensor::from_rows(&[seed]).unwrap());
        let tv: Vec<Var> = targets
            .iter()
            .map(|t| tape.constant(Tensor::from_rows(&[t.clone()]).unwrap()))
            .collect();
        let forced = if with_targets { &tv[..] } else { &[][..] };
        let d = b.decode_traced(&mut tape, z, s, 5, forced, &[mask_row]).unwrap();
        let rows = |vs: &[Var]| vs.iter().map(|&v| tape.value(v).row(0).to_vec()).collect::<Vec<_>>();
        (rows(&d.inputs), rows(&d.outputs), targets)
    }

    #[test]
    fn full_forcing_feeds_ground_truth() {
        let (inputs, _, targets) = traced(true, true);
        for k in 1..5 {
            assert_eq!(inputs[k], targets[k - 1]);
        }
    }

    #[test]
    fn free_running_feeds_back_outputs() {
        for (mask, with) in [(false, true), (true, false)] {
            let (inputs, outputs, _) = traced(mask, with);
            for k in 1..5 {
                assert_eq!(inputs[k], outputs[k - 1]);
            }
        }
        assert_eq!(traced(false, true).1, traced(true, false).1);
        assert_ne!(traced(true, true).1, traced(false, true).1);
    }

    #[test]
    fn seed_reaches_every_step() {
        let cfg = toy();
        let p = ModelParams::init(&cfg, 21).unwrap();
        let z = Tensor::from_rows(&[vec![0.3, -0.1, 0.2]]).unwrap();
        let a = p.decode_batch(&z, &[vec![0.4, -0.3, 0.2]], 6).unwrap().remove(0);
        let b = p.decode_batch(&z, &[vec![0.0; 3]], 6).unwrap().remove(0);
        for (x, y) in a.iter().zip(&b) {
            assert_ne!(x, y);
        }
    }

    #[test]
    fn rollout_windows() {
        let cfg = toy();
        let p = ModelParams::init(&cfg, 4).unwrap();
        let mut tape = Tape::new();
        let b = p.bind_generator(&mut tape, false);
        let z = tape.constant(Tensor::from_rows(&[vec![0.2, 0.1, -0.3]]).unwrap());
        let s = tape.constant(Tensor::from_rows(&[vec![0.1, 0.1, 0.1]]).unwrap());
        let (next, future) = b.rollout_future(&mut tape, z, s, &[], &[false]).unwrap();
        assert_eq!((next.len(), future.len()), (2, 2));
        let all = p.decode_batch(tape.value(z), &[vec![0.1, 0.1, 0.1]], 5).unwrap().remove(0);
        assert_eq!(tape.value(future[0]).row(0), all[3].as_slice());
        assert_eq!(tape.value(future[1]).row(0), all[4].as_slice());

        let og = ModelConfig {
            variant: Variant::OriginalGan,
            l: 0,
            ..cfg
        };
        let p = ModelParams::init(&og, 4).unwrap();
        let mut tape = Tape::new();
        let b = p.bind_generator(&mut tape, false);
        let z = tape.constant(Tensor::from_rows(&[vec![0.2, 0.1, -0.3]]).unwrap());
        let s = tape.constant(Tensor::from_rows(&[vec![0.1, 0.1, 0.1]]).unwrap());
        let (next, future) = b.rollout_future(&mut tape, z, s, &[], &[false]).unwrap();
        assert_eq!(next, future);
    }

    #[test]
    fn discriminator_output_is_a_probability() {
        let p = ModelParams::init(&toy(), 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seqs: Vec<_> = (0..20).map(|_| {
            let mut s = rand_seq(&mut rng, 2, 3);
            s[0][0] *= 1e3;
            s
        }).collect();
        for d in p.discriminate_batch(&seqs).unwrap() {
            assert!(d > 0.0 && d < 1.0);
        }
    }

    #[test]
    fn generate_step_is_pure_and_clamped() {
        let cfg = ModelConfig::desk(Variant::Full);
        let mut p = ModelParams::init(&cfg, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = rand_seq(&mut rng, 15, 25);
        let cur = vec![0.1; 10];
        let a = p.generate_step(&w, &cur).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, p.generate_step(&w, &cur).unwrap());
        // a large head bias pushes every angle past its limit
        p.tensors[13] = Tensor::vector(vec![10.0; 10]);
        let c = p.generate_step(&w, &cur).unwrap();
        let lim = JointLimits::default();
        for (v, (_, hi)) in c.iter().zip(lim.bounds) {
            assert_eq!(*v, hi);
        }
        assert!(p.generate_step(&w[..14], &cur).is_err());
    }
}
