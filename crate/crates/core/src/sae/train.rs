use log::{debug, warn};
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Ix1, Ix2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::select;
use super::{Activation, Activations, Result, SaeError, SaeModel};
use crate::optim::{AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    ReluL1,
    TopK,
    BatchTopK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub activation: ActivationKind,
    /// Dictionary size as a multiple of the input dimension.
    pub expansion_factor: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Active features per row (TopK) or per row on average (BatchTopK).
    pub k_active: usize,
    /// L1 weight, ReluL1 only.
    pub l1_beta: f64,
    pub seed: u64,
    /// A feature not selected for this many consecutive steps counts as dead.
    pub dead_feature_window: u64,
    /// Re-initialise dead features towards high-residual inputs.
    pub resample_dead: bool,
    /// No resampling after this fraction of `steps`, so late training can settle.
    pub resample_until: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            activation: ActivationKind::BatchTopK,
            expansion_factor: 64,
            batch_size: 4096,
            steps: 1000,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            k_active: 32,
            l1_beta: 0.0,
            seed: 0,
            dead_feature_window: 200,
            resample_dead: true,
            resample_until: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn activation(&self) -> Activation {
        match self.activation {
            ActivationKind::ReluL1 => Activation::ReluL1 { beta: self.l1_beta },
            ActivationKind::TopK => Activation::TopK { k: self.k_active },
            ActivationKind::BatchTopK => Activation::BatchTopK { k: self.k_active },
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self, d_in: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(SaeError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(SaeError::InvalidConfig("steps must be at least 1".into()));
        }
        if self.expansion_factor == 0 {
            return Err(SaeError::InvalidConfig("expansion_factor must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(SaeError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.activation != ActivationKind::ReluL1
            && (self.k_active == 0 || self.k_active > self.expansion_factor * d_in)
        {
            return Err(SaeError::InvalidConfig(format!(
                "k_active = {} must be in 1..={}",
                self.k_active,
                self.expansion_factor * d_in
            )));
        }
        if !(self.l1_beta >= 0.0) {
            return Err(SaeError::InvalidConfig("l1_beta must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SaeModel,
    /// Minibatch loss at every step.
    pub losses: Vec<f64>,
    /// Features dead at the end of training.
    pub dead_features: Vec<usize>,
    /// Number of feature re-initialisations performed.
    pub resampled: usize,
}

/// Stateful single-writer optimiser over an [`SaeModel`].
pub struct Trainer {
    model: SaeModel,
    cfg: TrainConfig,
    adam: AdamConfig,
    w_enc_state: AdamState<Ix2>,
    b_enc_state: AdamState<Ix1>,
    w_dec_state: AdamState<Ix2>,
    b_dec_state: AdamState<Ix1>,
    t: u64,
    last_active: Vec<u64>,
    losses: Vec<f64>,
    threshold_sum: f64,
    threshold_count: u64,
    last_min_kept: Option<f64>,
    resampled: usize,
}

impl Trainer {
    /// Fresh model of `expansion_factor * d_in` features with `b_dec = data_mean`.
    pub fn new(data_mean: Array1<f64>, cfg: TrainConfig) -> Result<Self> {
        let d_in = data_mean.len();
        cfg.validate(d_in)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = SaeModel::init(d_in, cfg.expansion_factor * d_in, cfg.activation(), data_mean, &mut rng)?;
        Ok(Self::from_model(model, cfg))
    }

    /// Continues training an existing model.
    pub fn from_model(model: SaeModel, cfg: TrainConfig) -> Self {
        let (d, k) = model.w_enc.dim();
        Self {
            adam: cfg.adam(),
            w_enc_state: AdamState::zeros(Ix2(d, k)),
            b_enc_state: AdamState::zeros(Ix1(k)),
            w_dec_state: AdamState::zeros(Ix2(k, d)),
            b_dec_state: AdamState::zeros(Ix1(d)),
            t: 0,
            last_active: vec![0; k],
            losses: Vec::new(),
            threshold_sum: 0.0,
            threshold_count: 0,
            last_min_kept: None,
            resampled: 0,
            model,
            cfg,
        }
    }

    pub fn model(&self) -> &SaeModel {
        &self.model
    }

    /// Loss of the forward pass and the full gradient, without updating anything.
    pub fn loss_and_gradient(&self, batch: ArrayView2<f64>) -> Result<(f64, Gradients, Activations)> {
        forward_backward(&self.model, batch)
    }

    /// One optimisation step on `batch`; returns the loss before the update.
    pub fn step(&mut self, batch: ArrayView2<f64>) -> Result<f64> {
        let (loss, grads, acts) = forward_backward(&self.model, batch)?;
        self.t += 1;
        if !loss.is_finite() {
            return Err(SaeError::NonFiniteLoss {
                step: self.t,
                loss,
                recent_losses: self.losses.iter().rev().take(5).rev().cloned().collect(),
            });
        }
        self.losses.push(loss);

        let t = self.t;
        self.w_enc_state.step(&self.adam, t, &mut self.model.w_enc, &grads.w_enc);
        self.b_enc_state.step(&self.adam, t, &mut self.model.b_enc, &grads.b_enc);
        self.w_dec_state.step(&self.adam, t, &mut self.model.w_dec, &grads.w_dec);
        self.b_dec_state.step(&self.adam, t, &mut self.model.b_dec, &grads.b_dec);
        self.model.normalize_decoder();
        self.model.trained_steps += 1;

        for row in acts.rows() {
            for &(k, _) in row {
                self.last_active[k as usize] = t;
            }
        }
        if matches!(self.model.activation, Activation::BatchTopK { .. }) {
            let min_kept = acts.rows().flat_map(|r| r.iter().map(|&(_, v)| v)).fold(f64::INFINITY, f64::min);
            if min_kept.is_finite() {
                self.last_min_kept = Some(min_kept);
                // average over the second half of training only
                if t > self.cfg.steps / 2 {
                    self.threshold_sum += min_kept;
                    self.threshold_count += 1;
                }
            }
        }

        let resample_window = (self.cfg.resample_until * self.cfg.steps as f64) as u64;
        if self.cfg.resample_dead && self.cfg.dead_feature_window > 0 && t <= resample_window {
            let dead = self.dead_features();
            if !dead.is_empty() {
                self.resample(&dead, batch)?;
            }
        }
        Ok(loss)
    }

    /// Features not selected during the last `dead_feature_window` steps.
    pub fn dead_features(&self) -> Vec<usize> {
        let w = self.cfg.dead_feature_window;
        if w == 0 {
            return Vec::new();
        }
        self.last_active
            .iter()
            .enumerate()
            .filter(|(_, &last)| self.t.saturating_sub(last) >= w)
            .map(|(k, _)| k)
            .collect()
    }

    /// Points each dead feature at the normalised residual of a distinct
    /// high-error row of `batch`.
    fn resample(&mut self, dead: &[usize], batch: ArrayView2<f64>) -> Result<()> {
        let recon = self.model.decode(&self.model.encode(batch)?)?;
        let residual = &batch - &recon;
        let mut order: Vec<(usize, f64)> = residual
            .rows()
            .into_iter()
            .map(|r| r.dot(&r))
            .enumerate()
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (&k, &(i, norm2)) in dead.iter().zip(&order) {
            if norm2 <= 0.0 {
                break;
            }
            let dir = residual.row(i).mapv(|v| v / norm2.sqrt());
            self.model.w_dec.row_mut(k).assign(&dir);
            self.model.w_enc.column_mut(k).assign(&dir);
            self.model.b_enc[k] = -self.model.b_dec.dot(&dir);
            self.w_dec_state.reset_index(0, k);
            self.w_enc_state.reset_index(1, k);
            self.b_enc_state.reset_index(0, k);
            self.last_active[k] = self.t;
            self.resampled += 1;
        }
        debug!("step {}: resampled {} dead features", self.t, dead.len().min(order.len()));
        Ok(())
    }

    pub fn finish(mut self) -> TrainOutcome {
        if matches!(self.model.activation, Activation::BatchTopK { .. }) {
            self.model.batch_threshold = if self.threshold_count > 0 {
                Some(self.threshold_sum / self.threshold_count as f64)
            } else {
                self.last_min_kept
            };
        }
        let dead = self.dead_features();
        if !dead.is_empty() {
            warn!("{} of {} features dead at end of training", dead.len(), self.model.n_features());
        }
        TrainOutcome { model: self.model, losses: self.losses, dead_features: dead, resampled: self.resampled }
    }
}

/// Gradients of the minibatch loss with respect to every parameter block.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w_enc: Array2<f64>,
    pub b_enc: Array1<f64>,
    pub w_dec: Array2<f64>,
    pub b_dec: Array1<f64>,
}

/// Minibatch loss `mean_i ||x_hat_i - x_i||^2 (+ beta mean_i ||a_i||_1)` and its
/// gradient. The selected support is held fixed, so the gradient flows only
/// through retained activations.
fn forward_backward(model: &SaeModel, x: ArrayView2<f64>) -> Result<(f64, Gradients, Activations)> {
    let pre = model.pre_activations(x)?;
    let acts = Activations::new(model.n_features(), select(&pre, model.activation));
    let recon = model.decode(&acts)?;
    let b = x.nrows() as f64;
    let diff = &recon - &x;
    let mut loss = diff.mapv(|v| v * v).sum() / b;
    let beta = match model.activation {
        Activation::ReluL1 { beta } => beta,
        _ => 0.0,
    };
    if beta > 0.0 {
        loss += beta * acts.rows().flat_map(|r| r.iter().map(|&(_, v)| v)).sum::<f64>() / b;
    }

    let g = diff.mapv(|v| 2.0 * v / b);
    let (k, d) = model.w_dec.dim();
    let mut w_dec = Array2::zeros((k, d));
    let mut d_pre = Array2::zeros((x.nrows(), k));
    for (i, row) in acts.rows().enumerate() {
        let gi = g.row(i);
        for &(f, v) in row {
            let f = f as usize;
            w_dec.row_mut(f).scaled_add(v, &gi);
            d_pre[[i, f]] = gi.dot(&model.w_dec.row(f)) + beta / b;
        }
    }
    let grads = Gradients {
        w_enc: x.t().dot(&d_pre),
        b_enc: d_pre.sum_axis(Axis(0)),
        w_dec,
        b_dec: g.sum_axis(Axis(0)),
    };
    Ok((loss, grads, acts))
}

/// Trains on a stream of minibatches, stopping after `cfg.steps` or when the
/// stream ends. The first batch fixes `d_in` and initialises `b_dec` to its mean.
pub fn train_stream<I>(batches: I, cfg: TrainConfig) -> Result<TrainOutcome>
where
    I: IntoIterator<Item = Array2<f64>>,
{
    let mut iter = batches.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| SaeError::DegenerateData("empty batch stream".into()))?;
    let mean = first
        .mean_axis(Axis(0))
        .ok_or_else(|| SaeError::DegenerateData("empty batch".into()))?;
    let steps = cfg.steps;
    let mut trainer = Trainer::new(mean, cfg)?;
    trainer.step(first.view())?;
    for batch in iter.take(steps.saturating_sub(1) as usize) {
        if batch.ncols() != trainer.model.d_in() {
            return Err(SaeError::DimensionMismatch { expected: trainer.model.d_in(), actual: batch.ncols() });
        }
        trainer.step(batch.view())?;
    }
    Ok(trainer.finish())
}

/// Trains on an in-memory matrix with seeded reshuffling every epoch;
/// `b_dec` starts at the full-data mean.
pub fn train(data: ArrayView2<f64>, cfg: TrainConfig) -> Result<TrainOutcome> {
    if data.nrows() == 0 {
        return Err(SaeError::DegenerateData("no training rows".into()));
    }
    let mean = data.mean_axis(Axis(0)).expect("nonempty");
    let mut trainer = Trainer::new(mean, cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let bs = cfg.batch_size.min(data.nrows());
    let mut cursor = data.nrows();
    let mut batch = Array2::zeros((bs, data.ncols()));
    for _ in 0..cfg.steps {
        if cursor + bs > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        for (r, &i) in order[cursor..cursor + bs].iter().enumerate() {
            batch.row_mut(r).assign(&data.row(i));
        }
        cursor += bs;
        trainer.step(batch.slice(s![.., ..]))?;
    }
    Ok(trainer.finish())
}

/// Trailing moving average with window `w`.
pub fn smoothed(losses: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(losses.len());
    let mut acc = 0.0;
    for (i, &l) in losses.iter().enumerate() {
        acc += l;
        if i >= w {
            acc -= losses[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}
