//! Training loop with linear warmup, AdamW, global-norm clipping and
//! selection of the epoch with the lowest validation loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{Example, Gradients, Matrix, Model, ParamStore};

/// Missing fields take the desk preset's values when deserializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_base: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub warmup_steps: usize,
    pub epochs: usize,
    pub batch_size_train: usize,
    pub batch_size_valid: usize,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` or a non-positive value disables
    /// clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    /// Hyperparameters reported for fine-tuning the 90M pretrained model.
    pub fn paper() -> Self {
        TrainConfig {
            lr_base: 2.5e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            warmup_steps: 100,
            epochs: 10,
            batch_size_train: 4,
            batch_size_valid: 16,
            weight_decay: 0.0,
            grad_clip: Some(1.0),
            seed: 0,
        }
    }

    /// Settings that let the toy model memorize a small synthetic corpus.
    pub fn desk() -> Self {
        TrainConfig {
            lr_base: 3e-3,
            batch_size_train: 8,
            epochs: 40,
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::InvalidArgument(format!("unknown preset {other:?} (expected desk or paper)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| b > 0.0 && b < 1.0;
        if !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(Error::InvalidArgument("betas must lie in (0, 1)".into()));
        }
        if self.lr_base.is_nan() || self.lr_base <= 0.0 || self.batch_size_train == 0 || self.batch_size_valid == 0 {
            return Err(Error::InvalidArgument("lr_base > 0 and positive batch sizes are required".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// `lr_base · min(1, step / warmup_steps)`; `step` counts from 1.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    if cfg.warmup_steps == 0 {
        return cfg.lr_base;
    }
    cfg.lr_base * (step as f64 / cfg.warmup_steps as f64).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned; `None` when no epoch ran.
    pub selected_epoch: Option<usize>,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        wr.write_record(["epoch", "train_loss", "valid_loss", "selected"]).map_err(io)?;
        for r in &self.epochs {
            let selected = if Some(r.epoch) == self.selected_epoch { "1" } else { "0" };
            wr.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.valid_loss.to_string(), selected.to_string()])
                .map_err(io)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.train_loss)
    }
}

/// Which target positions a loss average covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenScope {
    /// Strategy token, response tokens and EOS.
    All,
    /// Response tokens and EOS; the strategy token is excluded.
    ResponseOnly,
}

/// Mean over examples of each example's mean NLL within `scope`.
pub fn validate_scoped(model: &Model, examples: &[Example], scope: TokenScope) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("validation set is empty".into()));
    }
    let mut total = 0.0;
    for ex in examples {
        let nll = model.token_nlls(ex)?;
        let part = match scope {
            TokenScope::All => &nll[..],
            TokenScope::ResponseOnly => &nll[1..],
        };
        total += part.iter().sum::<f64>() / part.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

/// Mean [`Model::forward_loss`] over `examples`.
pub fn validate(model: &Model, examples: &[Example]) -> Result<f64> {
    validate_scoped(model, examples, TokenScope::All)
}

struct AdamW {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: usize,
}

impl AdamW {
    fn new(params: &ParamStore) -> Self {
        let zeros = || params.tensors().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
        AdamW { m: zeros(), v: zeros(), t: 0 }
    }

    fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.tensors_mut().iter_mut().zip(&grads.tensors).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (pd, gd) = (p.data_mut(), g.data());
            for i in 0..pd.len() {
                let mi = &mut m.data_mut()[i];
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gd[i];
                let mhat = *mi / bc1;
                let vi = &mut v.data_mut()[i];
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gd[i] * gd[i];
                let vhat = *vi / bc2;
                pd[i] -= lr * cfg.weight_decay * pd[i];
                pd[i] -= lr * mhat / (vhat.sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Progress callback invoked after each epoch.
pub type EpochHook<'a> = &'a mut dyn FnMut(&EpochRecord);

/// Trains for `cfg.epochs` epochs and returns the parameters of the epoch
/// with the lowest validation loss (earliest on ties).
pub fn train(model: Model, train_set: &[Example], valid_set: &[Example], cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    train_with_hook(model, train_set, valid_set, cfg, &mut |_| {})
}

pub fn train_with_hook(mut model: Model, train_set: &[Example], valid_set: &[Example], cfg: &TrainConfig, hook: EpochHook<'_>) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok((model, report));
    }
    if valid_set.is_empty() {
        return Err(Error::InvalidArgument("validation set is empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(&model.params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size_train) {
            let mut grads = Gradients::zeros_like(&model.params);
            let mut batch_loss = 0.0;
            for &i in batch {
                let (loss, g) = model.loss_and_grad(&train_set[i])?;
                batch_loss += loss;
                grads.add_assign(&g);
            }
            step += 1;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { step, loss: batch_loss });
            }
            epoch_loss += batch_loss;
            grads.scale(1.0 / batch.len() as f64);
            if let Some(clip) = cfg.grad_clip.filter(|c| *c > 0.0) {
                let norm = grads.global_norm();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            opt.step(&mut model.params, &grads, lr_at(step, cfg), cfg);
        }
        let valid_loss = validate(&model, valid_set)?;
        if !valid_loss.is_finite() {
            return Err(Error::Diverged { step, loss: valid_loss });
        }
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            valid_loss,
        };
        hook(&record);
        report.epochs.push(record);
        if best.as_ref().is_none_or(|(b, _)| valid_loss < *b) {
            best = Some((valid_loss, model.params.clone()));
            report.selected_epoch = Some(epoch);
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, report))
}
