//! Multi-step consistency training.
//!
//! The objective is `L = L_S + λ·L_MCT`. `L_S` regresses the velocity
//! target at a random point of the straight path. `L_MCT` runs the
//! k-step Euler solver from the degraded sample with the tape recording
//! every model call and penalizes the distance of the result to the clean
//! sample. `k` is redrawn every iteration from `mct_steps`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::flow::sample_time;
use crate::model::{AtTime, Checkpoint, TapeModel, TimeConditionedNet};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng;
use crate::sampler::{solve, SamplerConfig};
use crate::tensor::Tensor;
use crate::velocity::{matching_loss, VelocityMode};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda_mct: f64,
    /// Inclusive range for the consistency solver depth.
    pub mct_steps: (usize, usize),
    /// Resolution of the training time grid.
    pub timesteps: u32,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub total_iters: u64,
    pub seed: u64,
    pub lr_halving_interval: Option<u64>,
    /// Field being learned; the consistency term integrates with the
    /// matching solver for that field.
    pub mode: VelocityMode,
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_mct: 0.3,
            mct_steps: (2, 10),
            timesteps: 1000,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            batch_size: 8,
            total_iters: 20_000,
            seed: 0,
            lr_halving_interval: Some(8_000),
            mode: VelocityMode::Cumulative,
            log_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.mct_steps;
        if lo < 1 || hi > 64 || lo > hi {
            return Err(Error::config(format!("mct_steps [{lo}, {hi}] must lie within [1, 64]")));
        }
        if !(self.lambda_mct >= 0.0 && self.lambda_mct.is_finite()) {
            return Err(Error::config("lambda_mct must be finite and non-negative"));
        }
        if self.timesteps < 1 {
            return Err(Error::config("timesteps must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::config("adam_eps must be positive"));
        }
        if self.batch_size == 0 || self.total_iters == 0 || self.log_interval == 0 {
            return Err(Error::config(
                "batch_size, total_iters and log_interval must be positive",
            ));
        }
        if self.lr_halving_interval == Some(0) {
            return Err(Error::config("lr_halving_interval must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    /// Learning rate in effect at a (zero-based) iteration.
    pub fn lr_at(&self, iter: u64) -> f64 {
        match self.lr_halving_interval {
            Some(every) => {
                let halvings = (iter / every).min(1000) as i32;
                self.learning_rate * crate::math::powi(0.5, halvings)
            }
            None => self.learning_rate,
        }
    }

    pub fn draw_mct_steps(&self, rng: &mut dyn RngCore) -> usize {
        let (lo, hi) = self.mct_steps;
        rng.random_range(lo..=hi)
    }
}

/// Aligned clean/degraded rows with one time per row.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    /// `[batch, dim]` clean samples.
    pub x0: Tensor,
    /// `[batch, dim]` degraded samples.
    pub x1: Tensor,
    pub ts: Vec<f64>,
}

impl PairBatch {
    pub fn new(x0: Tensor, x1: Tensor, ts: Vec<f64>) -> Result<Self> {
        if x0.shape() != x1.shape() {
            return Err(Error::shape("PairBatch", x0.shape(), x1.shape()));
        }
        let (rows, _) = x0.as_matrix("PairBatch")?;
        if ts.len() != rows {
            return Err(Error::shape("PairBatch", &[rows], &[ts.len()]));
        }
        if let Some(&t) = ts.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
            return Err(Error::OutOfRange {
                name: "t",
                value: t,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(PairBatch { x0, x1, ts })
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x0.shape()[1]
    }
}

/// Supplies training pairs as `[n, dim]` clean and degraded matrices.
pub trait PairSource {
    fn dim(&self) -> usize;
    fn draw(&self, rng: &mut dyn RngCore, n: usize) -> Result<(Tensor, Tensor)>;
}

fn batch_rows(shape: &[usize]) -> usize {
    if shape.len() >= 2 {
        shape[0]
    } else {
        1
    }
}

/// Solver-based reconstruction loss for either field.
pub fn consistency_loss<'t, M: TapeModel<'t> + ?Sized>(
    tape: &'t Tape,
    model: &M,
    x0: &Tensor,
    x1: &Tensor,
    k: usize,
    mode: VelocityMode,
) -> Result<Var<'t>> {
    if k < 1 {
        return Err(Error::config("consistency solver needs k >= 1"));
    }
    if x0.shape() != x1.shape() {
        return Err(Error::shape("mct_loss", x0.shape(), x1.shape()));
    }
    let start = tape.constant(x1.clone());
    let out = solve(&AtTime(model), &start, &SamplerConfig::new(k, mode))?.output;
    let rows = batch_rows(x0.shape());
    out.squared_error(tape.constant(x0.clone()))?.scale(1.0 / rows as f64)
}

/// Mean `‖ODE_k(x1) − x0‖²` through the k-step cumulative solver, with
/// gradients flowing through all `k` model calls.
pub fn mct_loss<'t, M: TapeModel<'t> + ?Sized>(
    tape: &'t Tape,
    model: &M,
    x0: &Tensor,
    x1: &Tensor,
    k: usize,
) -> Result<Var<'t>> {
    consistency_loss(tape, model, x0, x1, k, VelocityMode::Cumulative)
}

pub struct CompositeLoss<'t> {
    pub total: Var<'t>,
    pub matching: f64,
    pub consistency: f64,
    pub k: usize,
}

/// `L_S + λ·L_MCT` with a fixed solver depth. With `λ = 0` the consistency
/// term is not evaluated and reported as zero.
pub fn composite_loss_with_k<'t, M: TapeModel<'t> + ?Sized>(
    tape: &'t Tape,
    model: &M,
    batch: &PairBatch,
    cfg: &TrainConfig,
    k: usize,
) -> Result<CompositeLoss<'t>> {
    let ls = matching_loss(tape, model, batch, cfg.mode)?;
    let matching = ls.value().item()?;
    if cfg.lambda_mct == 0.0 {
        return Ok(CompositeLoss {
            total: ls,
            matching,
            consistency: 0.0,
            k,
        });
    }
    let lm = consistency_loss(tape, model, &batch.x0, &batch.x1, k, cfg.mode)?;
    let consistency = lm.value().item()?;
    let total = ls.add(lm.scale(cfg.lambda_mct)?)?;
    Ok(CompositeLoss {
        total,
        matching,
        consistency,
        k,
    })
}

/// As [`composite_loss_with_k`], drawing `k` uniformly from `cfg.mct_steps`.
pub fn composite_loss<'t, M: TapeModel<'t> + ?Sized>(
    tape: &'t Tape,
    model: &M,
    batch: &PairBatch,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<CompositeLoss<'t>> {
    let k = cfg.draw_mct_steps(rng);
    composite_loss_with_k(tape, model, batch, cfg, k)
}

/// Losses of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterLoss {
    pub iter: u64,
    pub matching: f64,
    pub consistency: f64,
    pub total: f64,
    pub lr: f64,
    pub k: usize,
}

/// Interval means written to the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    /// Number of completed iterations at the end of the interval.
    pub iter: u64,
    pub matching: f64,
    pub consistency: f64,
    pub total: f64,
    pub lr: f64,
}

/// Groups per-iteration losses into fixed-length intervals.
#[derive(Default)]
pub struct RecordAccumulator {
    sum: (f64, f64, f64),
    count: u64,
}

impl RecordAccumulator {
    pub fn push(&mut self, l: &IterLoss, interval: u64) -> Option<LossRecord> {
        self.sum.0 += l.matching;
        self.sum.1 += l.consistency;
        self.sum.2 += l.total;
        self.count += 1;
        if (l.iter + 1).is_multiple_of(interval) {
            let n = self.count as f64;
            let rec = LossRecord {
                iter: l.iter + 1,
                matching: self.sum.0 / n,
                consistency: self.sum.1 / n,
                total: self.sum.2 / n,
                lr: l.lr,
            };
            *self = RecordAccumulator::default();
            Some(rec)
        } else {
            None
        }
    }
}

/// Resumable training state. Each iteration draws from its own random
/// stream derived from `(seed, iteration)`, so a resumed run replays the
/// same batches as an uninterrupted one.
pub struct Trainer {
    cfg: TrainConfig,
    net: TimeConditionedNet,
    adam: AdamState,
    iter: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, net: TimeConditionedNet) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::zeros_like(net.params());
        Ok(Trainer {
            cfg,
            net,
            adam,
            iter: 0,
        })
    }

    pub fn resume(cfg: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if ckpt.mode != cfg.mode {
            return Err(Error::config(format!(
                "checkpoint was trained for the {} field, config asks for {}",
                ckpt.mode.name(),
                cfg.mode.name()
            )));
        }
        let net = ckpt.network()?;
        let adam = AdamState {
            m: ckpt.adam_m.clone(),
            v: ckpt.adam_v.clone(),
            step: ckpt.adam_step,
        };
        if adam.m.len() != net.params().len() || adam.v.len() != net.params().len() {
            return Err(Error::config("checkpoint optimizer state does not match the network"));
        }
        Ok(Trainer {
            cfg,
            net,
            adam,
            iter: ckpt.iteration,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn net(&self) -> &TimeConditionedNet {
        &self.net
    }

    pub fn into_net(self) -> TimeConditionedNet {
        self.net
    }

    pub fn iteration(&self) -> u64 {
        self.iter
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    pub fn checkpoint(&self, config_echo: String) -> Checkpoint {
        Checkpoint {
            arch: self.net.arch().clone(),
            mode: self.cfg.mode,
            iteration: self.iter,
            params: self.net.named_params(),
            adam_m: self.adam.m.clone(),
            adam_v: self.adam.v.clone(),
            adam_step: self.adam.step,
            config_echo,
        }
    }

    /// Batch and times for an iteration, without touching the model.
    pub fn batch_for(&self, source: &dyn PairSource, iter: u64) -> Result<(PairBatch, usize)> {
        let mut r = rng::child_stream(self.cfg.seed, iter);
        let (x0, x1) = source.draw(&mut r, self.cfg.batch_size)?;
        let ts = (0..self.cfg.batch_size)
            .map(|_| sample_time(&mut r, &self.cfg))
            .collect::<Result<Vec<_>>>()?;
        let k = self.cfg.draw_mct_steps(&mut r);
        Ok((PairBatch::new(x0, x1, ts)?, k))
    }

    /// One optimizer step.
    pub fn step(&mut self, source: &dyn PairSource) -> Result<IterLoss> {
        if source.dim() != self.net.arch().input_dim {
            return Err(Error::shape("train", &[self.net.arch().input_dim], &[source.dim()]));
        }
        let iter = self.iter;
        let (batch, k) = self.batch_for(source, iter)?;
        let lr = self.cfg.lr_at(iter);
        let (loss, grads) = {
            let tape = Tape::new();
            let bound = self.net.bind(&tape);
            let loss = composite_loss_with_k(&tape, &bound, &batch, &self.cfg, k)?;
            let total = loss.total.value().item()?;
            if !total.is_finite() {
                return Err(Error::Diverged { iter });
            }
            let mut g = tape.backward(loss.total)?;
            let grads: Vec<Tensor> = bound.param_vars().iter().map(|v| g.take(*v)).collect();
            if grads.iter().any(|t| !t.all_finite()) {
                return Err(Error::Diverged { iter });
            }
            (
                IterLoss {
                    iter,
                    matching: loss.matching,
                    consistency: loss.consistency,
                    total,
                    lr,
                    k: loss.k,
                },
                grads,
            )
        };
        adam_step(self.net.params_mut(), &grads, &mut self.adam, &self.cfg.adam(), lr)?;
        self.iter += 1;
        Ok(loss)
    }

    /// Runs until `total_iters` iterations have completed, reporting each
    /// step and each finished log interval.
    pub fn run(
        &mut self,
        source: &dyn PairSource,
        mut on_iter: impl FnMut(&IterLoss),
        mut on_record: impl FnMut(&LossRecord),
    ) -> Result<()> {
        let mut acc = RecordAccumulator::default();
        while self.iter < self.cfg.total_iters {
            let l = self.step(source)?;
            on_iter(&l);
            if let Some(rec) = acc.push(&l, self.cfg.log_interval) {
                on_record(&rec);
            }
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    pub net: TimeConditionedNet,
    pub history: Vec<IterLoss>,
    pub records: Vec<LossRecord>,
    pub checkpoint: Checkpoint,
}

/// Trains `net` on `source` for `cfg.total_iters` iterations.
pub fn train(cfg: &TrainConfig, net: TimeConditionedNet, source: &dyn PairSource) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone(), net)?;
    let mut history = Vec::new();
    let mut records = Vec::new();
    trainer.run(source, |l| history.push(*l), |r| records.push(*r))?;
    let checkpoint = trainer.checkpoint(format!("{cfg:?}"));
    Ok(TrainOutcome {
        net: trainer.into_net(),
        history,
        records,
        checkpoint,
    })
}
