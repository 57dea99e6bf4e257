use rayon::prelude::*;

use crate::{Scalar, Tensor};

pub(crate) const BN_EPS: f64 = 1e-5;
/// Weight kept by the running statistics at every training step.
pub(crate) const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone)]
pub(crate) struct BatchNorm<T> {
    pub ch: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// Batch statistics from a train-mode forward pass.
#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(ch: usize) -> Self {
        Self {
            ch,
            gamma: vec![T::one(); ch],
            beta: vec![T::zero(); ch],
            running_mean: vec![T::zero(); ch],
            running_var: vec![T::one(); ch],
        }
    }

    fn channel_stats(x: &Tensor<T>) -> Vec<(f64, f64)> {
        let s = x.shape();
        let plane = s.plane();
        (0..s.c)
            .into_par_iter()
            .map(|c| {
                let mut sum = 0.0f64;
                for n in 0..s.n {
                    let off = x.index(n, c, 0, 0);
                    sum += x.data()[off..off + plane].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let m = (s.n * plane) as f64;
                let mean = sum / m;
                let mut sq = 0.0f64;
                for n in 0..s.n {
                    let off = x.index(n, c, 0, 0);
                    sq += x.data()[off..off + plane]
                        .iter()
                        .map(|v| {
                            let d = v.as_f64() - mean;
                            d * d
                        })
                        .sum::<f64>();
                }
                (mean, sq / m)
            })
            .collect()
    }

    fn affine(x: &Tensor<T>, scale: &[f64], shift: &[f64]) -> Tensor<T> {
        let s = x.shape();
        let plane = s.plane();
        let mut out = Tensor::zeros(s);
        out.data_mut()
            .par_chunks_mut(plane)
            .zip(x.data().par_chunks(plane))
            .enumerate()
            .for_each(|(idx, (dst, src))| {
                let c = idx % s.c;
                let a = T::from_f64(scale[c]);
                let b = T::from_f64(shift[c]);
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = a * v + b;
                }
            });
        out
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> (Tensor<T>, BnCache) {
        let s = x.shape();
        let stats = Self::channel_stats(x);
        let m = (s.n * s.plane()) as f64;
        let mut mean = Vec::with_capacity(self.ch);
        let mut inv_std = Vec::with_capacity(self.ch);
        let mut scale = Vec::with_capacity(self.ch);
        let mut shift = Vec::with_capacity(self.ch);
        for (c, &(mu, var)) in stats.iter().enumerate() {
            let is = 1.0 / (var + BN_EPS).sqrt();
            let g = self.gamma[c].as_f64();
            mean.push(mu);
            inv_std.push(is);
            scale.push(g * is);
            shift.push(self.beta[c].as_f64() - g * is * mu);
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            self.running_mean[c] = T::from_f64(
                BN_MOMENTUM * self.running_mean[c].as_f64() + (1.0 - BN_MOMENTUM) * mu,
            );
            self.running_var[c] = T::from_f64(
                BN_MOMENTUM * self.running_var[c].as_f64() + (1.0 - BN_MOMENTUM) * unbiased,
            );
        }
        (Self::affine(x, &scale, &shift), BnCache { mean, inv_std })
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let (scale, shift): (Vec<f64>, Vec<f64>) = (0..self.ch)
            .map(|c| {
                let is = 1.0 / (self.running_var[c].as_f64() + BN_EPS).sqrt();
                let g = self.gamma[c].as_f64();
                (g * is, self.beta[c].as_f64() - g * is * self.running_mean[c].as_f64())
            })
            .unzip();
        Self::affine(x, &scale, &shift)
    }

    /// Returns `(input_grad, gamma_grad, beta_grad)`.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        cache: &BnCache,
        gout: &Tensor<T>,
    ) -> (Tensor<T>, Vec<T>, Vec<T>) {
        let s = x.shape();
        let plane = s.plane();
        let m = (s.n * plane) as f64;
        // Per channel: sum(g), sum(g * xhat).
        let sums: Vec<(f64, f64)> = (0..s.c)
            .into_par_iter()
            .map(|c| {
                let (mu, is) = (cache.mean[c], cache.inv_std[c]);
                let mut sg = 0.0;
                let mut sgx = 0.0;
                for n in 0..s.n {
                    let off = x.index(n, c, 0, 0);
                    for (g, v) in gout.data()[off..off + plane]
                        .iter()
                        .zip(&x.data()[off..off + plane])
                    {
                        let g = g.as_f64();
                        sg += g;
                        sgx += g * (v.as_f64() - mu) * is;
                    }
                }
                (sg, sgx)
            })
            .collect();

        let mut gin = Tensor::zeros(s);
        gin.data_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(idx, dst)| {
                let c = idx % s.c;
                let off = idx * plane;
                let (mu, is) = (cache.mean[c], cache.inv_std[c]);
                let (sg, sgx) = sums[c];
                let k = self.gamma[c].as_f64() * is / m;
                for (i, d) in dst.iter_mut().enumerate() {
                    let xhat = (x.data()[off + i].as_f64() - mu) * is;
                    let g = gout.data()[off + i].as_f64();
                    *d = T::from_f64(k * (m * g - sg - xhat * sgx));
                }
            });

        let ggamma = sums.iter().map(|&(_, sgx)| T::from_f64(sgx)).collect();
        let gbeta = sums.iter().map(|&(sg, _)| T::from_f64(sg)).collect();
        (gin, ggamma, gbeta)
    }
}
