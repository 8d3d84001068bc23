use rand::Rng;
use serde::Serialize;

use crate::scalar::Scalar;
use crate::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// `Linear(D, H) -> BatchNorm(H) -> ReLU -> Linear(H, C)`.
///
/// Weight matrices are row-major with the input dimension first, so
/// `w1[i * hidden + j]` connects input `i` to hidden unit `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    pub inputs: usize,
    pub hidden: usize,
    pub classes: usize,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub bn_gamma: Vec<T>,
    pub bn_beta: Vec<T>,
    pub bn_running_mean: Vec<T>,
    pub bn_running_var: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
    pub mode: Mode,
}

/// Gradients with the same layout as the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub bn_gamma: Vec<T>,
    pub bn_beta: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> MlpGrads<T> {
    pub fn slices(&self) -> [&[T]; 6] {
        [&self.w1, &self.b1, &self.bn_gamma, &self.bn_beta, &self.w2, &self.b2]
    }
}

/// Per-feature batch statistics from a train-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased variance, as used for normalization.
    pub var: Vec<T>,
    pub batch: usize,
}

struct Cache<T> {
    xhat: Vec<T>,
    y: Vec<T>,
    act: Vec<T>,
    inv_std: Vec<T>,
    logits: Vec<T>,
    stats: Option<BatchStats<T>>,
}

fn c<T: Scalar>(v: f64) -> T {
    T::from_f64_lossy(v)
}

impl<T: Scalar> MlpModel<T> {
    /// All parameters zero, batch norm as identity affine.
    pub fn zeros(inputs: usize, hidden: usize, classes: usize) -> Self {
        Self {
            inputs,
            hidden,
            classes,
            w1: vec![T::zero(); inputs * hidden],
            b1: vec![T::zero(); hidden],
            bn_gamma: vec![T::one(); hidden],
            bn_beta: vec![T::zero(); hidden],
            bn_running_mean: vec![T::zero(); hidden],
            bn_running_var: vec![T::one(); hidden],
            w2: vec![T::zero(); hidden * classes],
            b2: vec![T::zero(); classes],
            mode: Mode::Train,
        }
    }

    /// Fan-in scaled uniform initialization: weights and biases of a layer
    /// with fan-in `f` are drawn from `U(-1/sqrt(f), 1/sqrt(f))`.
    pub fn init<R: Rng>(inputs: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(inputs, hidden, classes);
        let b1 = 1.0 / (inputs as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        let mut fill = |v: &mut Vec<T>, bound: f64| {
            for x in v.iter_mut() {
                *x = c(rng.random_range(-bound..bound));
            }
        };
        fill(&mut m.w1, b1);
        fill(&mut m.b1, b1);
        fill(&mut m.w2, b2);
        fill(&mut m.b2, b2);
        m
    }

    pub fn train_mode(&mut self) {
        self.mode = Mode::Train;
    }

    pub fn eval_mode(&mut self) {
        self.mode = Mode::Eval;
    }

    pub fn params(&self) -> [&[T]; 6] {
        [&self.w1, &self.b1, &self.bn_gamma, &self.bn_beta, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> [&mut Vec<T>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.bn_gamma,
            &mut self.bn_beta,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
            && self.bn_running_mean.iter().all(|v| v.is_finite())
            && self.bn_running_var.iter().all(|v| v.is_finite())
    }

    fn check_batch(&self, batch: &[T], train: bool) -> Result<usize> {
        if batch.len() % self.inputs != 0 {
            return Err(Error::DimensionMismatch {
                expected: self.inputs,
                found: batch.len(),
            });
        }
        let b = batch.len() / self.inputs;
        if (train && b < 2) || b == 0 {
            return Err(Error::BatchTooSmall(b));
        }
        Ok(b)
    }

    fn forward_cache(&self, batch: &[T], b: usize, train: bool) -> Cache<T> {
        let (d, h, k) = (self.inputs, self.hidden, self.classes);
        let mut z = vec![T::zero(); b * h];
        for r in 0..b {
            let x = &batch[r * d..(r + 1) * d];
            let out = &mut z[r * h..(r + 1) * h];
            out.copy_from_slice(&self.b1);
            for (i, &xi) in x.iter().enumerate() {
                if xi == T::zero() {
                    continue;
                }
                for (o, &w) in out.iter_mut().zip(&self.w1[i * h..(i + 1) * h]) {
                    *o = *o + xi * w;
                }
            }
        }

        let (mean, var, stats) = if train {
            let inv_b = c::<T>(1.0 / b as f64);
            let mut mean = vec![T::zero(); h];
            for r in 0..b {
                for (m, &v) in mean.iter_mut().zip(&z[r * h..(r + 1) * h]) {
                    *m = *m + v;
                }
            }
            mean.iter_mut().for_each(|m| *m = *m * inv_b);
            let mut var = vec![T::zero(); h];
            for r in 0..b {
                for ((s, &v), &m) in var.iter_mut().zip(&z[r * h..(r + 1) * h]).zip(&mean) {
                    *s = *s + (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s = *s * inv_b);
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
                batch: b,
            };
            (mean, var, Some(stats))
        } else {
            (self.bn_running_mean.clone(), self.bn_running_var.clone(), None)
        };
        let eps = c::<T>(BN_EPS);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let mut xhat = vec![T::zero(); b * h];
        let mut y = vec![T::zero(); b * h];
        let mut act = vec![T::zero(); b * h];
        for r in 0..b {
            for j in 0..h {
                let idx = r * h + j;
                xhat[idx] = (z[idx] - mean[j]) * inv_std[j];
                y[idx] = self.bn_gamma[j] * xhat[idx] + self.bn_beta[j];
                act[idx] = if y[idx] > T::zero() { y[idx] } else { T::zero() };
            }
        }

        let mut logits = vec![T::zero(); b * k];
        for r in 0..b {
            let out = &mut logits[r * k..(r + 1) * k];
            out.copy_from_slice(&self.b2);
            for j in 0..h {
                let a = act[r * h + j];
                if a == T::zero() {
                    continue;
                }
                for (o, &w) in out.iter_mut().zip(&self.w2[j * k..(j + 1) * k]) {
                    *o = *o + a * w;
                }
            }
        }
        Cache {
            xhat,
            y,
            act,
            inv_std,
            logits,
            stats,
        }
    }

    /// Logits for a row-major `B x inputs` batch. In train mode batch
    /// statistics are used and the running statistics are updated.
    pub fn forward(&mut self, batch: &[T]) -> Result<Vec<T>> {
        let train = self.mode == Mode::Train;
        let b = self.check_batch(batch, train)?;
        let cache = self.forward_cache(batch, b, train);
        if let Some(stats) = &cache.stats {
            self.update_running_stats(stats);
        }
        Ok(cache.logits)
    }

    /// Eval-mode logits; never touches the running statistics.
    pub fn predict_logits(&self, batch: &[T]) -> Result<Vec<T>> {
        let b = self.check_batch(batch, false)?;
        Ok(self.forward_cache(batch, b, false).logits)
    }

    /// Arg-max class per row under eval mode; ties go to the lower class.
    pub fn predict(&self, batch: &[T]) -> Result<Vec<usize>> {
        let logits = self.predict_logits(batch)?;
        Ok(logits
            .chunks_exact(self.classes)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Momentum update; the running variance uses the unbiased batch
    /// variance.
    pub fn update_running_stats(&mut self, stats: &BatchStats<T>) {
        let mom = c::<T>(BN_MOMENTUM);
        let keep = T::one() - mom;
        let unbias = c::<T>(stats.batch as f64 / (stats.batch as f64 - 1.0));
        for j in 0..self.hidden {
            self.bn_running_mean[j] = keep * self.bn_running_mean[j] + mom * stats.mean[j];
            self.bn_running_var[j] = keep * self.bn_running_var[j] + mom * stats.var[j] * unbias;
        }
    }

    /// Mean softmax cross-entropy of a train-mode pass and the exact
    /// gradient of every trainable parameter. Running statistics are left
    /// untouched; apply the returned [`BatchStats`] with
    /// [`Self::update_running_stats`].
    pub fn loss_and_grads(&self, batch: &[T], labels: &[usize]) -> Result<(T, MlpGrads<T>, BatchStats<T>)> {
        let b = self.check_batch(batch, true)?;
        if labels.len() != b {
            return Err(Error::LengthMismatch {
                what: "labels",
                expected: b,
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.classes) {
            return Err(Error::InvalidParameter(format!("label {bad} outside {} classes", self.classes)));
        }
        let (d, h, k) = (self.inputs, self.hidden, self.classes);
        let cache = self.forward_cache(batch, b, true);
        let inv_b = c::<T>(1.0 / b as f64);

        let mut loss = T::zero();
        let mut dlogits = vec![T::zero(); b * k];
        for r in 0..b {
            let row = &cache.logits[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().fold(T::zero(), |s, &v| s + (v - max).exp());
            let lse = max + sum.ln();
            loss = loss + (lse - row[labels[r]]);
            for j in 0..k {
                let p = (row[j] - lse).exp();
                let target = if j == labels[r] { T::one() } else { T::zero() };
                dlogits[r * k + j] = (p - target) * inv_b;
            }
        }
        loss = loss * inv_b;

        let mut gw2 = vec![T::zero(); h * k];
        let mut gb2 = vec![T::zero(); k];
        let mut dact = vec![T::zero(); b * h];
        for r in 0..b {
            let dl = &dlogits[r * k..(r + 1) * k];
            for (g, &v) in gb2.iter_mut().zip(dl) {
                *g = *g + v;
            }
            for j in 0..h {
                let a = cache.act[r * h + j];
                let w = &self.w2[j * k..(j + 1) * k];
                let mut acc = T::zero();
                for c_ in 0..k {
                    gw2[j * k + c_] = gw2[j * k + c_] + a * dl[c_];
                    acc = acc + w[c_] * dl[c_];
                }
                dact[r * h + j] = acc;
            }
        }

        let mut ggamma = vec![T::zero(); h];
        let mut gbeta = vec![T::zero(); h];
        let mut dxhat = vec![T::zero(); b * h];
        for r in 0..b {
            for j in 0..h {
                let idx = r * h + j;
                let dy = if cache.y[idx] > T::zero() { dact[idx] } else { T::zero() };
                ggamma[j] = ggamma[j] + dy * cache.xhat[idx];
                gbeta[j] = gbeta[j] + dy;
                dxhat[idx] = dy * self.bn_gamma[j];
            }
        }
        let mut sum_dxhat = vec![T::zero(); h];
        let mut sum_dxhat_xhat = vec![T::zero(); h];
        for r in 0..b {
            for j in 0..h {
                let idx = r * h + j;
                sum_dxhat[j] = sum_dxhat[j] + dxhat[idx];
                sum_dxhat_xhat[j] = sum_dxhat_xhat[j] + dxhat[idx] * cache.xhat[idx];
            }
        }
        let bt = c::<T>(b as f64);
        let mut dz = vec![T::zero(); b * h];
        for r in 0..b {
            for j in 0..h {
                let idx = r * h + j;
                dz[idx] = cache.inv_std[j] * inv_b
                    * (bt * dxhat[idx] - sum_dxhat[j] - cache.xhat[idx] * sum_dxhat_xhat[j]);
            }
        }

        let mut gw1 = vec![T::zero(); d * h];
        let mut gb1 = vec![T::zero(); h];
        for r in 0..b {
            let x = &batch[r * d..(r + 1) * d];
            let dzr = &dz[r * h..(r + 1) * h];
            for (g, &v) in gb1.iter_mut().zip(dzr) {
                *g = *g + v;
            }
            for (i, &xi) in x.iter().enumerate() {
                for (g, &v) in gw1[i * h..(i + 1) * h].iter_mut().zip(dzr) {
                    *g = *g + xi * v;
                }
            }
        }

        let grads = MlpGrads {
            w1: gw1,
            b1: gb1,
            bn_gamma: ggamma,
            bn_beta: gbeta,
            w2: gw2,
            b2: gb2,
        };
        Ok((loss, grads, cache.stats.expect("train-mode pass records stats")))
    }

    /// Mean cross-entropy of a train-mode pass without gradients.
    pub fn loss(&self, batch: &[T], labels: &[usize]) -> Result<T> {
        Ok(self.loss_and_grads(batch, labels)?.0)
    }
}
