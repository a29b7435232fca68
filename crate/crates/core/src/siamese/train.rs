use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{contrastive_grad, contrastive_loss, lit, ForwardCache, Mode, Scalar, SiameseModel};
use crate::error::{CclError, Result};
use crate::mining::{PairBatch, PairMiner};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Zero-based epoch from which the reduced rate applies.
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 1e-5,
            lr_drop_epoch: 15,
            lr_drop_factor: 10.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(CclError::Config(format!("train.lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_drop_factor > 0.0) {
            return Err(CclError::Config("train.lr_drop_factor must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(CclError::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_drop_epoch {
            self.lr / self.lr_drop_factor
        } else {
            self.lr
        }
    }
}

/// Gradients of the mean batch loss, laid out like
/// [`SiameseModel::parameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub enc_w: Array2<T>,
    pub enc_b: Array1<T>,
    pub bn_gamma: Array1<T>,
    pub bn_beta: Array1<T>,
    pub proj_w: Array2<T>,
    pub proj_b: Array1<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn as_slices(&self) -> [&[T]; 6] {
        [
            self.enc_w.as_slice().unwrap(),
            self.enc_b.as_slice().unwrap(),
            self.bn_gamma.as_slice().unwrap(),
            self.bn_beta.as_slice().unwrap(),
            self.proj_w.as_slice().unwrap(),
            self.proj_b.as_slice().unwrap(),
        ]
    }
}

/// Stack the two sides of every pair into one `2P x D` matrix: first all
/// `a` rows, then all `b` rows.
pub(crate) fn gather_pairs<T: Scalar>(features: &Array2<f32>, batch: &PairBatch) -> Array2<T> {
    let p = batch.pairs.len();
    let d = features.ncols();
    let mut x = Array2::<T>::zeros((2 * p, d));
    for (k, pair) in batch.pairs.iter().enumerate() {
        for (row, idx) in [(k, pair.a), (p + k, pair.b)] {
            x.row_mut(row)
                .zip_mut_with(&features.row(idx), |dst, &v| *dst = T::from(v).unwrap());
        }
    }
    x
}

impl<T: Scalar> SiameseModel<T> {
    /// Mean contrastive loss of a stacked pair batch (see `gather_pairs`),
    /// with both branches sharing one train-mode forward.
    pub fn batch_loss(&self, x: &Array2<T>, labels: &[u8]) -> Result<(T, ForwardCache<T>)> {
        let cache = self.forward(x.view(), Mode::Train)?;
        let p = labels.len();
        if cache.p.nrows() != 2 * p {
            return Err(CclError::Dimension {
                expected: 2 * p,
                got: cache.p.nrows(),
            });
        }
        let mut total = T::zero();
        for (k, &y) in labels.iter().enumerate() {
            let pa = cache.p.row(k);
            let pb = cache.p.row(p + k);
            total = total + contrastive_loss(pa.as_slice().unwrap(), pb.as_slice().unwrap(), y, self.margin, self.distance);
        }
        Ok((total / lit(p as f64), cache))
    }

    /// Analytic gradients of the mean loss through projection, batch norm and
    /// the shared encoder.
    pub fn backward(&self, cache: &ForwardCache<T>, labels: &[u8]) -> Gradients<T> {
        let p = labels.len();
        let rows = 2 * p;
        let scale = T::one() / lit(p as f64);

        let mut d_out = Array2::<T>::zeros(cache.p.raw_dim());
        for (k, &y) in labels.iter().enumerate() {
            let pa = cache.p.row(k);
            let pb = cache.p.row(p + k);
            let g = contrastive_grad(pa.as_slice().unwrap(), pb.as_slice().unwrap(), y, self.margin, self.distance);
            for (j, gv) in g.into_iter().enumerate() {
                d_out[[k, j]] = gv * scale;
                d_out[[p + k, j]] = -gv * scale;
            }
        }

        let proj_w = cache.h.t().dot(&d_out);
        let proj_b = d_out.sum_axis(Axis(0));
        let d_h = d_out.dot(&self.proj_w.t());

        let (bn_gamma, bn_beta, d_z) = if self.batch_norm {
            let bn_gamma = (&d_h * &cache.xhat).sum_axis(Axis(0));
            let bn_beta = d_h.sum_axis(Axis(0));
            let d_xhat = &d_h * &self.bn_gamma;
            let n: T = lit(rows as f64);
            let sum_dx = d_xhat.sum_axis(Axis(0));
            let sum_dx_xhat = (&d_xhat * &cache.xhat).sum_axis(Axis(0));
            let d_z = ((&d_xhat * n) - &sum_dx - &(&cache.xhat * &sum_dx_xhat)) * &(&cache.inv_std / n);
            (bn_gamma, bn_beta, d_z)
        } else {
            let h = self.hidden_dim();
            (Array1::zeros(h), Array1::zeros(h), d_h)
        };

        Gradients {
            enc_w: cache.x.t().dot(&d_z),
            enc_b: d_z.sum_axis(Axis(0)),
            bn_gamma,
            bn_beta,
            proj_w,
            proj_b,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: &TrainConfig, model: &SiameseModel<T>) -> Self {
        let shapes: Vec<usize> = model.parameters().iter().map(|s| s.len()).collect();
        Adam {
            beta1: lit(cfg.beta1),
            beta2: lit(cfg.beta2),
            eps: lit(cfg.adam_eps),
            step: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn step(&mut self, model: &mut SiameseModel<T>, grads: &Gradients<T>, lr: T) {
        self.step += 1;
        let bc1 = T::one() - self.beta1.powi(self.step);
        let bc2 = T::one() - self.beta2.powi(self.step);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((param, grad), m), v) in model
            .parameters_mut()
            .into_iter()
            .zip(grads.as_slices())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Source of training batches, one finite sequence per epoch.
pub trait BatchStream {
    fn epoch_batches(&self, epoch: usize) -> Box<dyn Iterator<Item = PairBatch> + '_>;
}

impl BatchStream for PairMiner {
    fn epoch_batches(&self, epoch: usize) -> Box<dyn Iterator<Item = PairBatch> + '_> {
        Box::new(self.epoch(epoch))
    }
}

/// Replays the same batches every epoch.
impl BatchStream for [PairBatch] {
    fn epoch_batches(&self, _epoch: usize) -> Box<dyn Iterator<Item = PairBatch> + '_> {
        Box::new(self.iter().cloned())
    }
}

impl BatchStream for Vec<PairBatch> {
    fn epoch_batches(&self, epoch: usize) -> Box<dyn Iterator<Item = PairBatch> + '_> {
        self.as_slice().epoch_batches(epoch)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub batches: usize,
}

/// Optimize `model` in place over `cfg.epochs` epochs of `stream`.
pub fn train<T: Scalar>(
    model: &mut SiameseModel<T>,
    features: &Array2<f32>,
    stream: &(impl BatchStream + ?Sized),
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if features.ncols() != model.input_dim() {
        return Err(CclError::Dimension {
            expected: model.input_dim(),
            got: features.ncols(),
        });
    }
    let mut adam = Adam::new(cfg, model);
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let lr: T = lit(cfg.lr_at(epoch));
        let mut sum = 0.0;
        let mut count = 0usize;
        for (b, batch) in stream.epoch_batches(epoch).enumerate() {
            if batch.is_empty() {
                continue;
            }
            if let Some(p) = batch.pairs.iter().find(|p| p.a >= features.nrows() || p.b >= features.nrows()) {
                return Err(CclError::invalid(format!("pair ({}, {}) indexes past the data", p.a, p.b)));
            }
            let x = gather_pairs::<T>(features, &batch);
            let labels: Vec<u8> = batch.pairs.iter().map(|p| p.y).collect();
            let (loss, cache) = model.batch_loss(&x, &labels)?;
            let loss_f = loss.to_f64().unwrap_or(f64::NAN);
            if !loss_f.is_finite() {
                return Err(CclError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss: loss_f,
                });
            }
            let grads = model.backward(&cache, &labels);
            adam.step(model, &grads, lr);
            model.update_running_stats(&cache);
            sum += loss_f;
            count += 1;
        }
        let mean = if count > 0 { sum / count as f64 } else { 0.0 };
        log::debug!("epoch {epoch}: lr {:.2e}, mean loss {mean:.6}", cfg.lr_at(epoch));
        history.epoch_loss.push(mean);
        history.batches += count;
    }
    if !model.is_finite() {
        return Err(CclError::NonFiniteLoss {
            epoch: cfg.epochs,
            batch: 0,
            loss: f64::NAN,
        });
    }
    Ok(history)
}
