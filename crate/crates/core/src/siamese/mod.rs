//! Shallow Siamese encoder trained with a contrastive objective.
//!
//! The encoder is one linear layer followed by batch normalization
//! (`D -> H`); a second linear layer projects to `d` dimensions and exists
//! only to feed the loss. Clustering uses the normalized `H`-dimensional
//! encoder output.
//!
//! All arithmetic is generic over [`Scalar`], so the same code runs in `f32`
//! for training and in `f64` for gradient checks.

mod checkpoint;
mod loss;
mod train;

use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureSet;
use crate::error::{CclError, Result};

pub use checkpoint::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use loss::{contrastive_grad, contrastive_loss};
pub use train::{train, Adam, BatchStream, Gradients, TrainConfig, TrainHistory};

pub trait Scalar:
    Float + FromPrimitive + LinalgScalar + ScalarOperand + Debug + Send + Sync + std::iter::Sum + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + LinalgScalar + ScalarOperand + Debug + Send + Sync + std::iter::Sum + 'static
{
}

#[inline]
pub(crate) fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("representable constant")
}

/// How the pair distance enters the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    /// `d = ||p1 - p2||`; the loss squares it once more.
    #[default]
    Euclidean,
    /// `d = ||p1 - p2||^2`, used directly in the squared hinge.
    Squared,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm uses statistics of the current batch.
    Train,
    /// Batch-norm uses the running statistics.
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub proj_dim: usize,
    pub margin: f64,
    pub batch_norm: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub distance: DistanceMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 2048,
            hidden_dim: 256,
            proj_dim: 2,
            margin: 1.0,
            batch_norm: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            distance: DistanceMode::Euclidean,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiameseModel<T = f32> {
    /// Encoder weight, `D x H`.
    pub enc_w: Array2<T>,
    pub enc_b: Array1<T>,
    pub bn_gamma: Array1<T>,
    pub bn_beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    /// Projection weight, `H x d`.
    pub proj_w: Array2<T>,
    pub proj_b: Array1<T>,
    pub margin: T,
    pub batch_norm: bool,
    pub bn_eps: T,
    pub bn_momentum: T,
    pub distance: DistanceMode,
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub x: Array2<T>,
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
    pub batch_mean: Array1<T>,
    pub batch_var: Array1<T>,
    pub h: Array2<T>,
    pub p: Array2<T>,
}

impl<T: Scalar> SiameseModel<T> {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases, unit BN scale.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        if cfg.input_dim == 0 || cfg.hidden_dim == 0 || cfg.proj_dim == 0 {
            return Err(CclError::Config("model dimensions must be positive".into()));
        }
        if !(cfg.margin > 0.0) {
            return Err(CclError::Config(format!("margin must be positive, got {}", cfg.margin)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc_bound = 1.0 / (cfg.input_dim as f64).sqrt();
        let proj_bound = 1.0 / (cfg.hidden_dim as f64).sqrt();
        let enc_w = Array2::from_shape_fn((cfg.input_dim, cfg.hidden_dim), |_| {
            lit::<T>(rng.random_range(-enc_bound..enc_bound))
        });
        let proj_w = Array2::from_shape_fn((cfg.hidden_dim, cfg.proj_dim), |_| {
            lit::<T>(rng.random_range(-proj_bound..proj_bound))
        });
        let h = cfg.hidden_dim;
        Ok(SiameseModel {
            enc_w,
            enc_b: Array1::zeros(h),
            bn_gamma: Array1::ones(h),
            bn_beta: Array1::zeros(h),
            running_mean: Array1::zeros(h),
            running_var: Array1::ones(h),
            proj_w,
            proj_b: Array1::zeros(cfg.proj_dim),
            margin: lit(cfg.margin),
            batch_norm: cfg.batch_norm,
            bn_eps: lit(cfg.bn_eps),
            bn_momentum: lit(cfg.bn_momentum),
            distance: cfg.distance,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.enc_w.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.enc_w.ncols()
    }

    pub fn proj_dim(&self) -> usize {
        self.proj_w.ncols()
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.input_dim(),
            hidden_dim: self.hidden_dim(),
            proj_dim: self.proj_dim(),
            margin: self.margin.to_f64().unwrap(),
            batch_norm: self.batch_norm,
            bn_eps: self.bn_eps.to_f64().unwrap(),
            bn_momentum: self.bn_momentum.to_f64().unwrap(),
            distance: self.distance,
        }
    }

    /// Convert every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> SiameseModel<U> {
        let c1 = |a: &Array1<T>| a.mapv(|v| U::from(v).unwrap());
        let c2 = |a: &Array2<T>| a.mapv(|v| U::from(v).unwrap());
        SiameseModel {
            enc_w: c2(&self.enc_w),
            enc_b: c1(&self.enc_b),
            bn_gamma: c1(&self.bn_gamma),
            bn_beta: c1(&self.bn_beta),
            running_mean: c1(&self.running_mean),
            running_var: c1(&self.running_var),
            proj_w: c2(&self.proj_w),
            proj_b: c1(&self.proj_b),
            margin: U::from(self.margin).unwrap(),
            batch_norm: self.batch_norm,
            bn_eps: U::from(self.bn_eps).unwrap(),
            bn_momentum: U::from(self.bn_momentum).unwrap(),
            distance: self.distance,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|s| s.iter().all(|v| v.is_finite()))
            && self.running_mean.iter().chain(self.running_var.iter()).all(|v| v.is_finite())
    }

    /// Trainable tensors in a fixed order: encoder weight, encoder bias,
    /// BN scale, BN shift, projection weight, projection bias.
    pub fn parameters(&self) -> [&[T]; 6] {
        [
            self.enc_w.as_slice().expect("standard layout"),
            self.enc_b.as_slice().unwrap(),
            self.bn_gamma.as_slice().unwrap(),
            self.bn_beta.as_slice().unwrap(),
            self.proj_w.as_slice().expect("standard layout"),
            self.proj_b.as_slice().unwrap(),
        ]
    }

    pub fn parameters_mut(&mut self) -> [&mut [T]; 6] {
        [
            self.enc_w.as_slice_mut().expect("standard layout"),
            self.enc_b.as_slice_mut().unwrap(),
            self.bn_gamma.as_slice_mut().unwrap(),
            self.bn_beta.as_slice_mut().unwrap(),
            self.proj_w.as_slice_mut().expect("standard layout"),
            self.proj_b.as_slice_mut().unwrap(),
        ]
    }

    /// Forward a batch of rows, returning the hidden representation and the
    /// projection together with everything backward needs.
    pub fn forward(&self, x: ArrayView2<'_, T>, mode: Mode) -> Result<ForwardCache<T>> {
        if x.ncols() != self.input_dim() {
            return Err(CclError::Dimension {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        if x.nrows() == 0 {
            return Err(CclError::invalid("empty batch"));
        }
        let x = x.to_owned();
        let z = x.dot(&self.enc_w) + &self.enc_b;
        let hdim = self.hidden_dim();
        let (batch_mean, batch_var, xhat, inv_std, h) = if self.batch_norm {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = z.mean_axis(Axis(0)).unwrap();
                    let var = (&z - &mean).mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
                    (mean, var)
                }
                Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
            };
            let inv_std = var.mapv(|v| T::one() / (v + self.bn_eps).sqrt());
            let xhat = (&z - &mean) * &inv_std;
            let h = &xhat * &self.bn_gamma + &self.bn_beta;
            (mean, var, xhat, inv_std, h)
        } else {
            (Array1::zeros(hdim), Array1::ones(hdim), z.clone(), Array1::ones(hdim), z)
        };
        let p = h.dot(&self.proj_w) + &self.proj_b;
        Ok(ForwardCache {
            x,
            xhat,
            inv_std,
            batch_mean,
            batch_var,
            h,
            p,
        })
    }

    /// Eval-mode hidden representation of a single row.
    pub fn encode_row(&self, x: &[T]) -> Result<Array1<T>> {
        if x.len() != self.input_dim() {
            return Err(CclError::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let row = ndarray::ArrayView1::from(x);
        let z = row.dot(&self.enc_w) + &self.enc_b;
        if !self.batch_norm {
            return Ok(z);
        }
        let inv_std = self.running_var.mapv(|v| T::one() / (v + self.bn_eps).sqrt());
        Ok((z - &self.running_mean) * inv_std * &self.bn_gamma + &self.bn_beta)
    }

    /// Fold the statistics of one training batch into the running averages.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        if !self.batch_norm {
            return;
        }
        let n = cache.x.nrows();
        let unbias = if n > 1 {
            lit::<T>(n as f64 / (n as f64 - 1.0))
        } else {
            T::one()
        };
        let mom = self.bn_momentum;
        let keep = T::one() - mom;
        self.running_mean = &self.running_mean * keep + &cache.batch_mean * mom;
        self.running_var = &self.running_var * keep + &cache.batch_var * (mom * unbias);
    }
}

impl SiameseModel<f32> {
    /// Normalized eval-mode `H`-dimensional embedding of every row; frame,
    /// track and label indices are carried through.
    pub fn embed(&self, fs: &FeatureSet) -> Result<FeatureSet> {
        if fs.dim() != self.input_dim() {
            return Err(CclError::Dimension {
                expected: self.input_dim(),
                got: fs.dim(),
            });
        }
        let rows: Vec<Array1<f32>> = (0..fs.len())
            .into_par_iter()
            .map(|i| {
                let r = fs.features.row(i);
                let r = r.as_standard_layout();
                let h = self.encode_row(r.as_slice().unwrap())?;
                let norm = h.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(CclError::ZeroNorm { row: i });
                }
                Ok(h.mapv(|v| (v as f64 / norm) as f32))
            })
            .collect::<Result<_>>()?;
        let mut out = Array2::<f32>::zeros((fs.len(), self.hidden_dim()));
        for (mut dst, src) in out.outer_iter_mut().zip(&rows) {
            dst.assign(src);
        }
        fs.with_features(out)
    }
}
