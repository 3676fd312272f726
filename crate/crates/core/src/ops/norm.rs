//! Per-channel batch normalisation over `(n, t, h, w)`.

use crate::error::{shape_err, Result};
use crate::tensor::{lane_dot, lane_sum, Float, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalise with batch statistics.
    Train,
    /// Normalise with running statistics.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

/// Values saved by the forward pass for [`BatchNorm::backward`].
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub mode: NormMode,
    pub xhat: VideoTensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct NormGrads<T> {
    pub d_input: VideoTensor<T>,
    pub d_gamma: Vec<T>,
    pub d_beta: Vec<T>,
}

impl<T: Float> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::lit(1e-5),
            momentum: T::lit(0.1),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &VideoTensor<T>, mode: NormMode) -> Result<(VideoTensor<T>, NormCache<T>)> {
        let s = x.shape();
        if s.c != self.channels() {
            return shape_err(format!("norm has {} channels, input has {}", self.channels(), s.c));
        }
        let count = T::from_usize(s.n * s.channel_len()).expect("count");
        let (mean, var) = match mode {
            NormMode::Train => {
                let mut mean = vec![T::zero(); s.c];
                let mut var = vec![T::zero(); s.c];
                for c in 0..s.c {
                    let mut acc = T::zero();
                    for n in 0..s.n {
                        acc += lane_sum(x.channel(n, c));
                    }
                    mean[c] = acc / count;
                    let mut sq = T::zero();
                    for n in 0..s.n {
                        let centered: Vec<T> = x.channel(n, c).iter().map(|&v| v - mean[c]).collect();
                        sq += lane_dot(&centered, &centered);
                    }
                    var[c] = sq / count;
                }
                (mean, var)
            }
            NormMode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
        let mut xhat = VideoTensor::zeros(s);
        let mut y = VideoTensor::zeros(s);
        for n in 0..s.n {
            for c in 0..s.c {
                let (m, is, g, b) = (mean[c], inv_std[c], self.gamma[c], self.beta[c]);
                let src = x.channel(n, c);
                for ((xh, o), &v) in xhat.channel_mut(n, c).iter_mut().zip(y.channel_mut(n, c)).zip(src) {
                    *xh = (v - m) * is;
                    *o = g * *xh + b;
                }
            }
        }
        Ok((y, NormCache { mode, xhat, inv_std, batch_mean: mean, batch_var: var }))
    }

    pub fn backward(&self, cache: &NormCache<T>, d_out: &VideoTensor<T>) -> Result<NormGrads<T>> {
        let s = cache.xhat.shape();
        if d_out.shape() != s {
            return shape_err(format!("norm backward: d_out {} vs cached {}", d_out.shape(), s));
        }
        let count = T::from_usize(s.n * s.channel_len()).expect("count");
        let mut d_gamma = vec![T::zero(); s.c];
        let mut d_beta = vec![T::zero(); s.c];
        for c in 0..s.c {
            for n in 0..s.n {
                let g = d_out.channel(n, c);
                d_beta[c] += lane_sum(g);
                d_gamma[c] += lane_dot(g, cache.xhat.channel(n, c));
            }
        }
        let mut d_input = VideoTensor::zeros(s);
        for n in 0..s.n {
            for c in 0..s.c {
                let scale = self.gamma[c] * cache.inv_std[c];
                let g = d_out.channel(n, c);
                let dst = d_input.channel_mut(n, c);
                match cache.mode {
                    NormMode::Eval => {
                        for (d, &v) in dst.iter_mut().zip(g) {
                            *d = scale * v;
                        }
                    }
                    NormMode::Train => {
                        // dx = gamma * inv_std / N * (N * dy - sum(dy) - xhat * sum(dy * xhat))
                        let (sum_dy, sum_dy_xhat) = (d_beta[c], d_gamma[c]);
                        for ((d, &v), &xh) in dst.iter_mut().zip(g).zip(cache.xhat.channel(n, c)) {
                            *d = scale * (v - (sum_dy + xh * sum_dy_xhat) / count);
                        }
                    }
                }
            }
        }
        Ok(NormGrads { d_input, d_gamma, d_beta })
    }

    /// Fold a training-mode cache into the running statistics (unbiased variance).
    pub fn update_running(&mut self, cache: &NormCache<T>) {
        if cache.mode != NormMode::Train {
            return;
        }
        let s = cache.xhat.shape();
        let count = (s.n * s.channel_len()) as f64;
        let unbias = T::lit(if count > 1.0 { count / (count - 1.0) } else { 1.0 });
        let m = self.momentum;
        for c in 0..self.channels() {
            self.running_mean[c] = (T::one() - m) * self.running_mean[c] + m * cache.batch_mean[c];
            self.running_var[c] = (T::one() - m) * self.running_var[c] + m * cache.batch_var[c] * unbias;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn train_mode_normalises_each_channel() {
        let x = VideoTensor::from_fn(Shape::new(2, 2, 2, 2, 2), |n, c, t, h, w| {
            (c as f64 + 1.0) * (n + t + h + w) as f64 + 10.0 * c as f64
        });
        let bn = BatchNorm::new(2);
        let (y, cache) = bn.forward(&x, NormMode::Train).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..2).flat_map(|n| y.channel(n, c).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
        let mut bn = bn;
        bn.update_running(&cache);
        assert!(bn.running_mean[1] > 0.0);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut bn = BatchNorm::<f64>::new(1);
        bn.running_mean[0] = 2.0;
        bn.running_var[0] = 4.0 - 1e-5;
        bn.gamma[0] = 3.0;
        bn.beta[0] = 1.0;
        let x = VideoTensor::filled(Shape::new(1, 1, 1, 1, 2), 4.0);
        let (y, _) = bn.forward(&x, NormMode::Eval).unwrap();
        assert!((y.data()[0] - 4.0).abs() < 1e-12);
    }
}
