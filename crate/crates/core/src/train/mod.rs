//! Generator and discriminator losses, the alternating update, and the epoch loop.
//!
//! A batch is cut into shards of `shard_rows` rows. Each shard runs its own
//! forward and backward pass; shard losses are weighted by their share of
//! the batch and gradients are summed in shard order, so the result does not
//! depend on how many threads ran the shards.

pub mod gradcheck;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{clip_grad_norm, Adam, Checkpoint, ParamGroup, Tape, Tensor, Var};
use crate::dataio::TrainingPair;
use crate::model::{stack_steps, Bound, ModelConfig, ModelParams, DISCRIMINATOR, GENERATOR, PARAM_NAMES};
use crate::par::Exec;
use crate::{Error, Result};

pub use gradcheck::{gradcheck, GradcheckReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the reconstruction term of the generator loss.
    pub alpha1: f64,
    /// Weight of the adversarial term of the generator loss.
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub lr: f64,
    /// Per-epoch multiplier of `lr`; epoch `k` trains at `lr * lr_decay^(k-1)`.
    pub lr_decay: f64,
    pub max_grad_norm: f64,
    pub epochs: usize,
    /// Probability that a rollout is fed ground-truth poses.
    pub p_tf: f64,
    pub rng_seed: u64,
    /// Rows per independently processed shard of a batch.
    pub shard_rows: usize,
    /// Most recent epoch checkpoints kept on disk; 0 keeps all.
    pub keep_checkpoints: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha1: 100.0,
            alpha2: 10.0,
            beta1: 0.5,
            beta2: 0.5,
            batch_size: 100,
            lr: Adam::DEFAULT_LR,
            lr_decay: 1.0,
            max_grad_norm: 1.0,
            epochs: 300,
            p_tf: 0.5,
            rng_seed: 0,
            shard_rows: 25,
            keep_checkpoints: 0,
        }
    }
}

impl TrainConfig {
    pub fn epoch_lr(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch.saturating_sub(1) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        let weights = [self.alpha1, self.alpha2, self.beta1, self.beta2];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("loss weights must be finite and >= 0");
        }
        if self.batch_size == 0 || self.shard_rows == 0 {
            return bad("batch_size and shard_rows must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if self.max_grad_norm.is_nan() || self.max_grad_norm <= 0.0 {
            return bad("max_grad_norm must be positive");
        }
        if !(0.0..=1.0).contains(&self.p_tf) {
            return bad("p_tf must lie in [0, 1]");
        }
        Ok(())
    }
}

/// `α₁·MSE(gen, gt) + α₂·BCE(D(gen future), 1)`; the second term is dropped when `d_gen` is `None`.
pub fn loss_g(tape: &mut Tape, gen_next: &[Var], gt_next: &[Var], d_gen: Option<Var>, cfg: &TrainConfig) -> Result<Var> {
    let g = tape.concat(gen_next)?;
    let t = tape.concat(gt_next)?;
    let mse = tape.mse(g, t)?;
    let mut loss = tape.scale(mse, cfg.alpha1);
    if let Some(d) = d_gen {
        let adv = tape.bce(d, 1.0);
        let adv = tape.scale(adv, cfg.alpha2);
        loss = tape.add(loss, adv)?;
    }
    Ok(loss)
}

/// `β₁·BCE(D(real), 1) + β₂·BCE(D(gen), 0)`.
pub fn loss_d(tape: &mut Tape, d_real: Var, d_gen: Var, cfg: &TrainConfig) -> Result<Var> {
    let real = tape.bce(d_real, 1.0);
    let real = tape.scale(real, cfg.beta1);
    let fake = tape.bce(d_gen, 0.0);
    let fake = tape.scale(fake, cfg.beta2);
    Ok(tape.add(real, fake)?)
}

/// Parameters with both optimizer states and the count of finished epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub g_opt: Adam,
    pub d_opt: Adam,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    epoch: usize,
    model: ModelConfig,
    train: TrainConfig,
}

impl TrainState {
    pub fn new(params: ModelParams, lr: f64) -> Self {
        let g_opt = Adam::new(params.generator(), lr);
        let d_opt = Adam::new(params.discriminator(), lr);
        Self {
            params,
            g_opt,
            d_opt,
            epoch: 0,
        }
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let meta = CheckpointMeta {
            epoch: self.epoch,
            model: self.params.config,
            train: *cfg,
        };
        let group = |name: &str, range: std::ops::Range<usize>, adam: &Adam| ParamGroup {
            name: name.into(),
            names: PARAM_NAMES[range.clone()].iter().map(|s| s.to_string()).collect(),
            params: self.params.tensors[range].to_vec(),
            adam: adam.clone(),
        };
        Checkpoint {
            meta: toml::to_string(&meta).expect("plain config serializes"),
            groups: vec![
                group("generator", GENERATOR, &self.g_opt),
                group("discriminator", DISCRIMINATOR, &self.d_opt),
            ],
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, TrainConfig)> {
        let meta: CheckpointMeta =
            toml::from_str(&ckpt.meta).map_err(|e| Error::Config(format!("checkpoint metadata: {e}")))?;
        let params = ModelParams::from_checkpoint(ckpt)?;
        let adam = |name: &str| {
            ckpt.group(name)
                .map(|g| g.adam.clone())
                .ok_or_else(|| Error::Config(format!("checkpoint has no {name} group")))
        };
        Ok((
            Self {
                params,
                g_opt: adam("generator")?,
                d_opt: adam("discriminator")?,
                epoch: meta.epoch,
            },
            meta.train,
        ))
    }

    /// State from the checkpoint named by `<dir>/latest`, if any.
    pub fn load_latest(dir: &Path) -> Result<Option<(Self, TrainConfig)>> {
        match latest_checkpoint(dir)? {
            Some(path) => Ok(Some(Self::from_checkpoint(&Checkpoint::load(&path)?)?)),
            None => Ok(None),
        }
    }
}

impl ModelParams {
    /// Parameters and config stored in a training checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        #[derive(Deserialize)]
        struct ModelOnly {
            model: ModelConfig,
        }
        let meta: ModelOnly =
            toml::from_str(&ckpt.meta).map_err(|e| Error::Config(format!("checkpoint metadata: {e}")))?;
        let mut params = ModelParams::zeros(&meta.model)?;
        for g in &ckpt.groups {
            for (name, t) in g.names.iter().zip(&g.params) {
                let i = PARAM_NAMES
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::Config(format!("unknown tensor {name} in checkpoint")))?;
                if t.shape() != params.tensors[i].shape() {
                    return Err(Error::Config(format!(
                        "tensor {name} has shape {:?}, config implies {:?}",
                        t.shape(),
                        params.tensors[i].shape()
                    )));
                }
                params.tensors[i] = t.clone();
            }
        }
        Ok(params)
    }

    /// Loads a checkpoint file, or the latest checkpoint when `path` is a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            latest_checkpoint(path)?.ok_or_else(|| {
                Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("no checkpoint in {}", path.display()),
                ))
            })?
        } else {
            path.to_path_buf()
        };
        Self::from_checkpoint(&Checkpoint::load(&file)?)
    }
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch}.ckpt"))
}

fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    let marker = dir.join("latest");
    if !marker.exists() {
        return Ok(None);
    }
    let name = std::fs::read_to_string(&marker)?;
    Ok(Some(dir.join(name.trim())))
}

/// Row-aligned tensors of one shard.
struct Shard {
    rows: usize,
    window: Vec<Tensor>,
    seed: Tensor,
    target: Vec<Tensor>,
    future: Vec<Tensor>,
    mask: Vec<bool>,
}

impl Shard {
    fn new(pairs: &[&TrainingPair], mask: &[bool]) -> Result<Self> {
        let windows: Vec<&[Vec<f64>]> = pairs.iter().map(|p| p.user_window.as_slice()).collect();
        let targets: Vec<&[Vec<f64>]> = pairs.iter().map(|p| p.target.as_slice()).collect();
        let futures: Vec<&[Vec<f64>]> = pairs.iter().map(|p| p.future_target.as_slice()).collect();
        let seeds: Vec<&[f64]> = pairs.iter().map(|p| p.seed.as_slice()).collect();
        Ok(Self {
            rows: pairs.len(),
            window: stack_steps(&windows)?,
            seed: Tensor::from_rows(&seeds)?,
            target: stack_steps(&targets)?,
            future: stack_steps(&futures)?,
            mask: mask.to_vec(),
        })
    }
}

/// Generator forward pass of one shard, kept for the generator update.
struct GenPass {
    tape: Tape,
    bound: Bound,
    next: Vec<Var>,
    future: Vec<Var>,
    target: Vec<Var>,
}

fn generator_forward(params: &ModelParams, s: &Shard, requires_grad: bool) -> Result<GenPass> {
    let mut tape = Tape::new();
    let bound = params.bind_generator(&mut tape, requires_grad);
    let window: Vec<Var> = s.window.iter().map(|t| tape.constant(t.clone())).collect();
    let seed = tape.constant(s.seed.clone());
    let target: Vec<Var> = s.target.iter().map(|t| tape.constant(t.clone())).collect();
    let z = bound.encode(&mut tape, &window)?;
    let (next, future) = bound.rollout_future(&mut tape, z, seed, &target, &s.mask)?;
    Ok(GenPass {
        tape,
        bound,
        next,
        future,
        target,
    })
}

fn mean(t: &Tensor) -> f64 {
    t.data().iter().sum::<f64>() / t.len().max(1) as f64
}

fn group_grads(grads: &crate::autodiff::Gradients, bound: &Bound, params: &ModelParams, range: std::ops::Range<usize>) -> Vec<Tensor> {
    range
        .map(|i| match bound.var(i) {
            Some(v) => grads.get_or_zeros(v, &params.tensors[i]),
            None => Tensor::zeros(params.tensors[i].shape()),
        })
        .collect()
}

fn sum_in_order(parts: Vec<Vec<Tensor>>) -> Vec<Tensor> {
    let mut it = parts.into_iter();
    let mut acc = it.next().unwrap_or_default();
    for part in it {
        for (a, g) in acc.iter_mut().zip(&part) {
            a.add_assign(g);
        }
    }
    acc
}

/// Losses and diagnostics of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub loss_g: f64,
    pub loss_d: f64,
    pub d_real: f64,
    pub d_gen: f64,
    /// Global gradient norms before clipping.
    pub g_norm: f64,
    pub d_norm: f64,
}

/// One discriminator update followed by one generator update.
///
/// Teacher forcing is drawn once per pair from `rng`. Without the adversarial
/// term only the generator is updated and the discriminator fields are 0.
pub fn train_step(
    state: &mut TrainState,
    batch: &[&TrainingPair],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    exec: Exec,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mcfg = state.params.config;
    let mask: Vec<bool> = batch.iter().map(|_| rng.random_bool(cfg.p_tf)).collect();
    let total = batch.len() as f64;
    let shard_rows = cfg.shard_rows.max(1);
    let bounds: Vec<(usize, usize)> = (0..batch.len())
        .step_by(shard_rows)
        .map(|s| (s, (s + shard_rows).min(batch.len())))
        .collect();
    let shards = exec
        .map(&bounds, |&(a, b)| Shard::new(&batch[a..b], &mask[a..b]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let params = &state.params;
    let mut passes = exec
        .map(&shards, |s| generator_forward(params, s, true))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut stats = StepStats::default();
    let gan = mcfg.variant.uses_gan();
    if gan {
        let jobs: Vec<(&Shard, Vec<Tensor>)> = shards
            .iter()
            .zip(&passes)
            .map(|(s, p)| (s, p.future.iter().map(|&v| p.tape.value(v).clone()).collect()))
            .collect();
        let results = exec
            .map(&jobs, |(s, gen_future)| -> Result<_> {
                let mut tape = Tape::new();
                let bound = params.bind_discriminator_only(&mut tape, true);
                let real: Vec<Var> = s.future.iter().map(|t| tape.constant(t.clone())).collect();
                let fake: Vec<Var> = gen_future.iter().map(|t| tape.constant(t.clone())).collect();
                let d_real = bound.discriminate(&mut tape, &real)?;
                let d_gen = bound.discriminate(&mut tape, &fake)?;
                let loss = loss_d(&mut tape, d_real, d_gen, cfg)?;
                let w = s.rows as f64 / total;
                let loss = tape.scale(loss, w);
                let grads = tape.backward(loss)?;
                Ok((
                    tape.value(loss).item(),
                    w * mean(tape.value(d_real)),
                    w * mean(tape.value(d_gen)),
                    group_grads(&grads, &bound, params, DISCRIMINATOR),
                ))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let mut parts = Vec::with_capacity(results.len());
        for (l, dr, dg, g) in results {
            stats.loss_d += l;
            stats.d_real += dr;
            stats.d_gen += dg;
            parts.push(g);
        }
        let mut grads = sum_in_order(parts);
        stats.d_norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
        state.d_opt.update(&mut state.params.tensors[DISCRIMINATOR], &grads)?;
    }

    let params = &state.params;
    let grads_and_losses = exec
        .map_mut(&mut passes, |p| -> Result<_> {
            let d_gen = if gan {
                p.bound.bind_discriminator(params, &mut p.tape, false);
                Some(p.bound.discriminate(&mut p.tape, &p.future)?)
            } else {
                None
            };
            let loss = loss_g(&mut p.tape, &p.next, &p.target, d_gen, cfg)?;
            let w = p.tape.value(p.next[0]).rows() as f64 / total;
            let loss = p.tape.scale(loss, w);
            let grads = p.tape.backward(loss)?;
            Ok((p.tape.value(loss).item(), group_grads(&grads, &p.bound, params, GENERATOR)))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut parts = Vec::with_capacity(grads_and_losses.len());
    for (l, g) in grads_and_losses {
        stats.loss_g += l;
        parts.push(g);
    }
    let mut grads = sum_in_order(parts);
    stats.g_norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
    state.g_opt.update(&mut state.params.tensors[GENERATOR], &grads)?;
    Ok(stats)
}

/// Per-epoch means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub steps: usize,
    pub loss_g: f64,
    pub loss_d: f64,
    pub d_real: f64,
    pub d_gen: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    /// `(L_G, L_D)` of every step, in order.
    pub trace: Vec<(f64, f64)>,
}

pub const REPORT_HEADER: &str = "epoch\tsteps\tloss_g\tloss_d\td_real\td_gen\tseconds";

impl EpochRow {
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.3}",
            self.epoch, self.steps, self.loss_g, self.loss_d, self.d_real, self.d_gen, self.seconds
        )
    }
}

impl TrainReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.to_tsv());
        }
        out
    }
}

/// Checks that every pair matches the model's window sizes and dimensions.
pub fn check_pairs(pairs: &[TrainingPair], c: &ModelConfig) -> Result<()> {
    for p in pairs {
        let ok = p.user_window.len() == c.m
            && p.user_window.iter().all(|u| u.len() == c.user_dim)
            && p.seed.len() == c.robot_dim
            && p.target.len() == c.n
            && p.future_target.len() == c.n
            && p.target.iter().chain(&p.future_target).all(|r| r.len() == c.robot_dim);
        if !ok {
            return Err(Error::Config(format!(
                "pair from {} does not match m={} n={} user_dim={} robot_dim={}",
                p.sample_id, c.m, c.n, c.user_dim, c.robot_dim
            )));
        }
    }
    Ok(())
}

/// The generator shared by all epochs: stream `epoch` of the seeded ChaCha8 generator.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Trains from `state.epoch + 1` through `cfg.epochs`.
///
/// With a checkpoint directory, `epoch_<k>.ckpt` is written after every
/// epoch, `latest` names the newest one and `report.tsv` gets one row per
/// epoch.
pub fn train_loop(
    pairs: &[TrainingPair],
    state: &mut TrainState,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<TrainReport> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("no training pairs".into()));
    }
    check_pairs(pairs, &state.params.config)?;

    let report_path = checkpoint_dir.map(|d| d.join("report.tsv"));
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        let rp = report_path.as_ref().expect("dir set");
        let mut kept = String::from(REPORT_HEADER);
        kept.push('\n');
        if state.epoch > 0 {
            if let Ok(old) = std::fs::read_to_string(rp) {
                for line in old.lines().skip(1) {
                    let e: usize = line.split('\t').next().and_then(|f| f.parse().ok()).unwrap_or(usize::MAX);
                    if e <= state.epoch {
                        kept.push_str(line);
                        kept.push('\n');
                    }
                }
            }
        }
        std::fs::write(rp, kept)?;
    }

    let mut report = TrainReport::default();
    for epoch in state.epoch + 1..=cfg.epochs {
        let started = Instant::now();
        let lr = cfg.epoch_lr(epoch);
        state.g_opt.lr = lr;
        state.d_opt.lr = lr;
        let mut rng = epoch_rng(cfg.rng_seed, epoch);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = StepStats::default();
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let s = train_step(state, &batch, cfg, &mut rng, exec)?;
            if !(s.loss_g.is_finite() && s.loss_d.is_finite()) {
                return Err(Error::Config(format!("loss diverged at epoch {epoch}: L_G={} L_D={}", s.loss_g, s.loss_d)));
            }
            report.trace.push((s.loss_g, s.loss_d));
            sums.loss_g += s.loss_g;
            sums.loss_d += s.loss_d;
            sums.d_real += s.d_real;
            sums.d_gen += s.d_gen;
            steps += 1;
        }
        state.epoch = epoch;
        let k = steps as f64;
        let row = EpochRow {
            epoch,
            steps,
            loss_g: sums.loss_g / k,
            loss_d: sums.loss_d / k,
            d_real: sums.d_real / k,
            d_gen: sums.d_gen / k,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(dir) = checkpoint_dir {
            write_epoch(dir, state, cfg)?;
            use std::io::Write as _;
            let mut f = std::fs::OpenOptions::new()
                .append(true)
                .open(report_path.as_ref().expect("dir set"))?;
            writeln!(f, "{}", row.to_tsv())?;
        }
        on_epoch(&row);
        report.rows.push(row);
    }
    Ok(report)
}

fn write_epoch(dir: &Path, state: &TrainState, cfg: &TrainConfig) -> Result<()> {
    let path = checkpoint_path(dir, state.epoch);
    state.to_checkpoint(cfg).save(&path)?;
    let marker = dir.join("latest");
    let tmp = dir.join("latest.tmp");
    std::fs::write(&tmp, format!("epoch_{}.ckpt\n", state.epoch))?;
    std::fs::rename(&tmp, &marker)?;
    if cfg.keep_checkpoints > 0 && state.epoch > cfg.keep_checkpoints {
        let old = checkpoint_path(dir, state.epoch - cfg.keep_checkpoints);
        if old.exists() {
            std::fs::remove_file(old)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::bce_scalar;
    use crate::model::Variant;

    fn col(tape: &mut Tape, rows: &[Vec<f64>]) -> Var {
        tape.constant(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn loss_g_examples() {
        let cfg = TrainConfig::default();
        let mut tape = Tape::new();
        let g = col(&mut tape, &[vec![0.2, -0.1]]);
        let d_one = col(&mut tape, &[vec![1.0]]);
        let l = loss_g(&mut tape, &[g], &[g], Some(d_one), &cfg).unwrap();
        assert!(tape.value(l).item() <= 10.0 * 1.0000001e-7);
        let d_half = col(&mut tape, &[vec![0.5]]);
        let l = loss_g(&mut tape, &[g], &[g], Some(d_half), &cfg).unwrap();
        assert!((tape.value(l).item() - 10.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((tape.value(l).item() - 6.931471805599453).abs() < 1e-9);
    }

    #[test]
    fn loss_g_matches_scalar_hand_evaluation() {
        use rand::Rng;
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let gen: Vec<Vec<Vec<f64>>> = (0..3)
                .map(|_| (0..2).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
                .collect();
            let gt: Vec<Vec<Vec<f64>>> = (0..3)
                .map(|_| (0..2).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
                .collect();
            let d: Vec<f64> = (0..2).map(|_| rng.random_range(0.01..0.99)).collect();

            let mut sq = 0.0;
            for (a, b) in gen.iter().flatten().flatten().zip(gt.iter().flatten().flatten()) {
                sq += (a - b) * (a - b);
            }
            let want = 100.0 * sq / 24.0 + 10.0 * (bce_scalar(d[0], 1.0) + bce_scalar(d[1], 1.0)) / 2.0;

            let mut tape = Tape::new();
            let gv: Vec<Var> = gen.iter().map(|s| col(&mut tape, s)).collect();
            let tv: Vec<Var> = gt.iter().map(|s| col(&mut tape, s)).collect();
            let dv = col(&mut tape, &[vec![d[0]], vec![d[1]]]);
            let l = loss_g(&mut tape, &gv, &tv, Some(dv), &cfg).unwrap();
            assert!((tape.value(l).item() - want).abs() < 1e-10);
            let no = loss_g(&mut tape, &gv, &tv, None, &cfg).unwrap();
            assert!((tape.value(no).item() - 100.0 * sq / 24.0).abs() < 1e-10);
        }
    }

    #[test]
    fn loss_d_examples() {
        let cfg = TrainConfig::default();
        let mut tape = Tape::new();
        let one = col(&mut tape, &[vec![1.0]]);
        let zero = col(&mut tape, &[vec![0.0]]);
        let l = loss_d(&mut tape, one, zero, &cfg).unwrap();
        assert!(tape.value(l).item() < 1e-6);
        let half = col(&mut tape, &[vec![0.5]]);
        let l = loss_d(&mut tape, half, half, &cfg).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
        let r = col(&mut tape, &[vec![0.8], vec![0.3]]);
        let g = col(&mut tape, &[vec![0.6], vec![0.1]]);
        let l = loss_d(&mut tape, r, g, &cfg).unwrap();
        let want = 0.5 * (-(0.8f64.ln()) - 0.3f64.ln()) / 2.0 + 0.5 * (-(0.4f64.ln()) - 0.9f64.ln()) / 2.0;
        assert!((tape.value(l).item() - want).abs() < 1e-12);
    }

    fn toy_pairs(cfg: &ModelConfig, count: usize, seed: u64) -> Vec<TrainingPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = |len: usize, dim: usize| -> Vec<Vec<f64>> {
            (0..len).map(|_| (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect()).collect()
        };
        (0..count)
            .map(|i| TrainingPair {
                sample_id: format!("t{i}"),
                scenario: 1,
                user_window: v(cfg.m, cfg.user_dim),
                seed: v(1, cfg.robot_dim).remove(0),
                target: v(cfg.n, cfg.robot_dim),
                future_target: v(cfg.n, cfg.robot_dim),
            })
            .collect()
    }

    fn small(variant: Variant) -> ModelConfig {
        ModelConfig {
            m: 4,
            n: 2,
            l: if variant == Variant::OriginalGan { 0 } else { 3 },
            enc_hidden: 6,
            dec_hidden: 8,
            disc_hidden: 6,
            z_dim: 3,
            user_dim: 5,
            robot_dim: 3,
            variant,
            residual: true,
        }
    }

    #[test]
    fn shard_size_does_not_change_the_step() {
        let mc = small(Variant::Full);
        let pairs = toy_pairs(&mc, 10, 1);
        let batch: Vec<&TrainingPair> = pairs.iter().collect();
        let run = |shard_rows: usize, exec: Exec| {
            let mut st = TrainState::new(ModelParams::init(&mc, 2).unwrap(), 1e-3);
            let cfg = TrainConfig {
                shard_rows,
                ..TrainConfig::default()
            };
            let s = train_step(&mut st, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(5), exec).unwrap();
            (s, st)
        };
        let (a, sa) = run(3, Exec::Sequential);
        let (b, sb) = run(3, Exec::Parallel);
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        let (c, sc) = run(10, Exec::Sequential);
        assert!((a.loss_g - c.loss_g).abs() < 1e-9 * a.loss_g.abs().max(1.0));
        assert!((a.loss_d - c.loss_d).abs() < 1e-9);
        for (x, y) in sa.params.tensors.iter().zip(&sc.params.tensors) {
            for (p, q) in x.data().iter().zip(y.data()) {
                assert!((p - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn updates_touch_only_their_own_group() {
        let mc = small(Variant::Full);
        let pairs = toy_pairs(&mc, 4, 7);
        let batch: Vec<&TrainingPair> = pairs.iter().collect();
        let mut st = TrainState::new(ModelParams::init(&mc, 3).unwrap(), 1e-3);
        let before = st.params.clone();
        let cfg = TrainConfig::default();
        train_step(&mut st, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(1), Exec::Sequential).unwrap();
        assert_eq!(st.g_opt.step, 1);
        assert_eq!(st.d_opt.step, 1);
        for i in 0..PARAM_NAMES.len() {
            assert_ne!(st.params.tensors[i], before.tensors[i], "{}", PARAM_NAMES[i]);
        }

        let nc = small(Variant::NoGan);
        let mut st = TrainState::new(ModelParams::init(&nc, 3).unwrap(), 1e-3);
        let before = st.params.clone();
        let s = train_step(&mut st, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(1), Exec::Sequential).unwrap();
        assert_eq!(s.loss_d, 0.0);
        assert_eq!(st.params.discriminator(), before.discriminator());
        assert_ne!(st.params.generator(), before.generator());
    }

    #[test]
    fn perfect_targets_are_a_fixed_point_without_gan() {
        let mc = ModelConfig {
            residual: false,
            ..small(Variant::NoGan)
        };
        let mut params = ModelParams::init(&mc, 4).unwrap();
        // zero head weights: the decoder emits its bias at every step
        params.tensors[12] = Tensor::zeros(params.tensors[12].shape());
        params.tensors[13] = Tensor::vector(vec![0.1, -0.2, 0.3]);
        let mut pairs = toy_pairs(&mc, 3, 9);
        for p in &mut pairs {
            p.target = vec![vec![0.1, -0.2, 0.3]; mc.n];
        }
        let batch: Vec<&TrainingPair> = pairs.iter().collect();
        let mut st = TrainState::new(params.clone(), 1e-5);
        let s = train_step(&mut st, &batch, &TrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(0), Exec::Sequential)
            .unwrap();
        assert!(s.loss_g < 1e-20);
        for (a, b) in st.params.tensors.iter().zip(&params.tensors) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn clipped_norms_and_loss_signs() {
        let mc = small(Variant::Full);
        let pairs = toy_pairs(&mc, 6, 2);
        let batch: Vec<&TrainingPair> = pairs.iter().collect();
        let mut st = TrainState::new(ModelParams::init(&mc, 5).unwrap(), 1e-3);
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let s = train_step(&mut st, &batch, &cfg, &mut rng, Exec::Sequential).unwrap();
            assert!(s.loss_g >= 0.0 && s.loss_d >= 0.0);
            assert!(s.d_real > 0.0 && s.d_real < 1.0);
        }
    }

    #[test]
    fn loop_batches_and_reports() {
        let mc = small(Variant::Full);
        let pairs = toy_pairs(&mc, 25, 4);
        let mut st = TrainState::new(ModelParams::init(&mc, 1).unwrap(), 1e-3);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 10,
            lr: 1e-3,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let rep = train_loop(&pairs, &mut st, &cfg, Some(dir.path()), Exec::Sequential, |_| {}).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.rows.iter().all(|r| r.steps == 3));
        assert_eq!(rep.trace.len(), 6);
        let tsv = std::fs::read_to_string(dir.path().join("report.tsv")).unwrap();
        assert_eq!(tsv.lines().count(), 3);
        assert_eq!(std::fs::read_to_string(dir.path().join("latest")).unwrap().trim(), "epoch_2.ckpt");
        assert!(checkpoint_path(dir.path(), 1).exists());
        let loaded = ModelParams::load(dir.path()).unwrap();
        assert_eq!(loaded, st.params);
    }

    #[test]
    fn checkpoint_round_trip_keeps_state() {
        let mc = small(Variant::OriginalGan);
        let st = TrainState::new(ModelParams::init(&mc, 8).unwrap(), 1e-3);
        let cfg = TrainConfig::default();
        let bytes = st.to_checkpoint(&cfg).to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        let (st2, cfg2) = TrainState::from_checkpoint(&back).unwrap();
        assert_eq!(st2, st);
        assert_eq!(cfg2, cfg);
        assert_eq!(st2.to_checkpoint(&cfg2).to_bytes(), bytes);
    }

    #[test]
    fn keep_policy_prunes_old_epochs() {
        let mc = small(Variant::NoGan);
        let pairs = toy_pairs(&mc, 4, 1);
        let mut st = TrainState::new(ModelParams::init(&mc, 1).unwrap(), 1e-3);
        let cfg = TrainConfig {
            epochs: 4,
            keep_checkpoints: 2,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        train_loop(&pairs, &mut st, &cfg, Some(dir.path()), Exec::Sequential, |_| {}).unwrap();
        assert!(!checkpoint_path(dir.path(), 2).exists());
        assert!(checkpoint_path(dir.path(), 3).exists());
        assert!(checkpoint_path(dir.path(), 4).exists());
    }

    #[test]
    fn mismatched_pairs_are_rejected() {
        let mc = small(Variant::Full);
        let mut pairs = toy_pairs(&mc, 2, 1);
        pairs[1].seed.push(0.0);
        let mut st = TrainState::new(ModelParams::init(&mc, 1).unwrap(), 1e-3);
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(train_loop(&pairs, &mut st, &cfg, None, Exec::Sequential, |_| {}).is_err());
    }
}
