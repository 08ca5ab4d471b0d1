//! Central-difference check of the analytic gradients of both losses.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{loss_d, loss_g, TrainConfig};
use crate::autodiff::{Tape, Tensor, Var};
use crate::model::{ModelConfig, ModelParams, Variant, PARAM_NAMES};
use crate::Result;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-7;
/// Below this analytic magnitude the absolute tolerance applies.
pub const SMALL_GRAD: f64 = 1e-4;

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        variant: Variant::Full,
        m: 4,
        n: 2,
        l: 3,
        enc_hidden: 8,
        dec_hidden: 12,
        disc_hidden: 12,
        z_dim: 4,
        user_dim: 5,
        robot_dim: 3,
        residual: true,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub checked: usize,
    /// Largest relative error among entries with `|analytic| >= SMALL_GRAD`.
    pub max_rel_err: f64,
    /// Largest absolute error among the remaining entries.
    pub max_abs_err: f64,
    /// `loss/tensor[index]` of the worst relative error.
    pub worst: String,
    pub failures: usize,
    pub seconds: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

struct Batch {
    window: Vec<Tensor>,
    seed: Tensor,
    target: Vec<Tensor>,
    future: Vec<Tensor>,
    mask: Vec<bool>,
}

#[derive(Clone, Copy, PartialEq)]
enum Which {
    G,
    D,
}

fn build(params: &ModelParams, data: &Batch, which: Which) -> Result<(Tape, Var, Vec<Var>)> {
    let cfg = TrainConfig::default();
    let mut tape = Tape::new();
    let b = params.bind(&mut tape, true, true);
    let vars: Vec<Var> = (0..PARAM_NAMES.len()).map(|i| b.var(i).expect("all bound")).collect();
    let window: Vec<Var> = data.window.iter().map(|t| tape.constant(t.clone())).collect();
    let seed = tape.constant(data.seed.clone());
    let target: Vec<Var> = data.target.iter().map(|t| tape.constant(t.clone())).collect();
    let z = b.encode(&mut tape, &window)?;
    let (next, future) = b.rollout_future(&mut tape, z, seed, &target, &data.mask)?;
    let d_gen = b.discriminate(&mut tape, &future)?;
    let loss = match which {
        Which::G => loss_g(&mut tape, &next, &target, Some(d_gen), &cfg)?,
        Which::D => {
            let real: Vec<Var> = data.future.iter().map(|t| tape.constant(t.clone())).collect();
            let d_real = b.discriminate(&mut tape, &real)?;
            loss_d(&mut tape, d_real, d_gen, &cfg)?
        }
    };
    Ok((tape, loss, vars))
}

fn loss_value(params: &ModelParams, data: &Batch, which: Which) -> Result<f64> {
    let (tape, loss, _) = build(params, data, which)?;
    Ok(tape.value(loss).item())
}

/// Compares every parameter entry's analytic gradient of `L_G` and of `L_D`
/// (discriminator not detached) with `(L(θ+h) − L(θ−h)) / 2h` at toy sizes.
pub fn gradcheck(seed: u64) -> Result<GradcheckReport> {
    let started = Instant::now();
    let cfg = toy_config();
    let mut params = ModelParams::init(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    // nonzero biases so every bias gradient is exercised away from the init values
    for (t, name) in params.tensors.iter_mut().zip(PARAM_NAMES) {
        if t.shape().len() == 1 {
            for v in t.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        } else if name.starts_with("dec.head") {
            t.scale_in_place(0.5);
        }
    }
    let rows = 3;
    let mut rand_t = |r: usize, c: usize| {
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.random_range(-0.8..0.8)).collect()).expect("shape")
    };
    let data = Batch {
        window: (0..cfg.m).map(|_| rand_t(rows, cfg.user_dim)).collect(),
        seed: rand_t(rows, cfg.robot_dim),
        target: (0..cfg.n).map(|_| rand_t(rows, cfg.robot_dim)).collect(),
        future: (0..cfg.n).map(|_| rand_t(rows, cfg.robot_dim)).collect(),
        mask: vec![true, false, true],
    };

    let mut report = GradcheckReport {
        checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: String::new(),
        failures: 0,
        seconds: 0.0,
    };
    for (which, label) in [(Which::G, "L_G"), (Which::D, "L_D")] {
        let (tape, loss, vars) = build(&params, &data, which)?;
        let grads = tape.backward(loss)?;
        for (i, name) in PARAM_NAMES.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[i], &params.tensors[i]);
            for k in 0..params.tensors[i].len() {
                let orig = params.tensors[i].data()[k];
                params.tensors[i].data_mut()[k] = orig + STEP;
                let up = loss_value(&params, &data, which)?;
                params.tensors[i].data_mut()[k] = orig - STEP;
                let down = loss_value(&params, &data, which)?;
                params.tensors[i].data_mut()[k] = orig;

                let num = (up - down) / (2.0 * STEP);
                let a = analytic.data()[k];
                let abs = (a - num).abs();
                report.checked += 1;
                if a.abs() < SMALL_GRAD {
                    report.max_abs_err = report.max_abs_err.max(abs);
                    if abs >= ABS_TOL {
                        report.failures += 1;
                    }
                } else {
                    let rel = abs / a.abs().max(num.abs());
                    if rel > report.max_rel_err {
                        report.max_rel_err = rel;
                        report.worst = format!("{label}/{name}[{k}]");
                    }
                    if rel >= REL_TOL {
                        report.failures += 1;
                    }
                }
            }
        }
    }
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_model_gradients_match_finite_differences() {
        let r = gradcheck(7).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.checked > 4000);
    }
}
