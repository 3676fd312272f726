//! Classifier head: global average pooling, a fully connected layer and the softmax loss.

use super::gemm::{gemm, MatView};
use super::GradPair;
use crate::error::{domain_err, shape_err, Result};
use crate::tensor::{Float, Shape, VideoTensor};

/// Row-major `rows x cols` matrix (one row per clip).
#[derive(Debug, Clone, PartialEq)]
pub struct Features<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Float> Features<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape_err(format!("{} values cannot form a {rows}x{cols} matrix", data.len()));
        }
        Ok(Features { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Features { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Mean over `(t, h, w)` for every `(n, c)`.
///
/// Per-frame partial sums are added in sorted order, which makes the result bitwise
/// independent of the order of frames.
pub fn global_avg_pool<T: Float>(x: &VideoTensor<T>) -> Features<T> {
    let s = x.shape();
    let fl = s.frame_len();
    let denom = T::from_usize(s.channel_len()).expect("count");
    let mut out = Features::zeros(s.n, s.c);
    let mut partial = vec![T::zero(); s.t];
    for n in 0..s.n {
        for c in 0..s.c {
            for (p, frame) in partial.iter_mut().zip(x.channel(n, c).chunks(fl)) {
                *p = frame.iter().copied().sum();
            }
            partial.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            out.data[n * s.c + c] = partial.iter().copied().sum::<T>() / denom;
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Float>(input_shape: Shape, d_out: &Features<T>) -> Result<VideoTensor<T>> {
    if d_out.rows != input_shape.n || d_out.cols != input_shape.c {
        return shape_err(format!("pool backward: {}x{} vs input {input_shape}", d_out.rows, d_out.cols));
    }
    let denom = T::from_usize(input_shape.channel_len()).expect("count");
    let mut d = VideoTensor::zeros(input_shape);
    for n in 0..input_shape.n {
        for c in 0..input_shape.c {
            let g = d_out.data[n * input_shape.c + c] / denom;
            d.channel_mut(n, c).iter_mut().for_each(|v| *v = g);
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearWeights<T> {
    pub out_features: usize,
    pub in_features: usize,
    /// Row-major `out x in`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Float> LinearWeights<T> {
    pub fn zeros(out_features: usize, in_features: usize) -> Self {
        LinearWeights {
            out_features,
            in_features,
            weight: vec![T::zero(); out_features * in_features],
            bias: vec![T::zero(); out_features],
        }
    }
}

pub fn linear<T: Float>(features: &Features<T>, w: &LinearWeights<T>) -> Result<Features<T>> {
    if features.cols != w.in_features {
        return shape_err(format!("linear expects {} features, got {}", w.in_features, features.cols));
    }
    let mut out = Features::zeros(features.rows, w.out_features);
    for r in 0..features.rows {
        out.data[r * w.out_features..(r + 1) * w.out_features].copy_from_slice(&w.bias);
    }
    gemm(
        T::one(),
        &features.data,
        MatView::dense(0, features.rows, features.cols),
        &w.weight,
        MatView::dense(0, w.out_features, w.in_features).t(),
        T::one(),
        &mut out.data,
        MatView::dense(0, features.rows, w.out_features),
    );
    Ok(out)
}

pub fn linear_backward<T: Float>(
    features: &Features<T>,
    w: &LinearWeights<T>,
    d_out: &Features<T>,
) -> Result<GradPair<Features<T>, LinearWeights<T>>> {
    if d_out.rows != features.rows || d_out.cols != w.out_features || features.cols != w.in_features {
        return shape_err("linear backward: inconsistent shapes");
    }
    let mut d_w = LinearWeights::zeros(w.out_features, w.in_features);
    gemm(
        T::one(),
        &d_out.data,
        MatView::dense(0, d_out.rows, d_out.cols).t(),
        &features.data,
        MatView::dense(0, features.rows, features.cols),
        T::zero(),
        &mut d_w.weight,
        MatView::dense(0, w.out_features, w.in_features),
    );
    for r in 0..d_out.rows {
        for (b, &g) in d_w.bias.iter_mut().zip(d_out.row(r)) {
            *b += g;
        }
    }
    let mut d_in = Features::zeros(features.rows, features.cols);
    gemm(
        T::one(),
        &d_out.data,
        MatView::dense(0, d_out.rows, d_out.cols),
        &w.weight,
        MatView::dense(0, w.out_features, w.in_features),
        T::zero(),
        &mut d_in.data,
        MatView::dense(0, features.rows, features.cols),
    );
    Ok(GradPair { d_input: d_in, d_weights: d_w })
}

/// Numerically stable softmax of one row.
pub fn softmax<T: Float>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean cross-entropy over the batch and its gradient with respect to the logits.
pub fn softmax_xent<T: Float>(logits: &Features<T>, labels: &[usize]) -> Result<(T, Features<T>)> {
    if labels.len() != logits.rows {
        return shape_err(format!("{} labels for {} rows", labels.len(), logits.rows));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.cols) {
        return domain_err(format!("label {bad} out of range for {} classes", logits.cols));
    }
    let rows = T::from_usize(logits.rows).expect("rows");
    let mut loss = T::zero();
    let mut grad = Features::zeros(logits.rows, logits.cols);
    for (r, &label) in labels.iter().enumerate() {
        let p = softmax(logits.row(r));
        loss -= p[label].max(T::min_positive_value()).ln();
        for (k, &pk) in p.iter().enumerate() {
            let target = if k == label { T::one() } else { T::zero() };
            grad.data[r * logits.cols + k] = (pk - target) / rows;
        }
    }
    Ok((loss / rows, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_a_constant_returns_it() {
        let x = VideoTensor::filled(Shape::new(2, 3, 4, 2, 2), 0.75f64);
        let p = global_avg_pool(&x);
        assert!(p.data.iter().all(|&v| v == 0.75));
    }

    #[test]
    fn symmetric_logits_give_ln2() {
        let logits = Features::new(1, 2, vec![0.0f64, 0.0]).unwrap();
        for label in 0..2 {
            let (loss, _) = softmax_xent(&logits, &[label]).unwrap();
            assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        }
        assert!(softmax_xent(&logits, &[2]).is_err());
    }

    #[test]
    fn identity_linear() {
        let f = Features::new(2, 3, vec![1.0f64, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap();
        let mut w = LinearWeights::zeros(3, 3);
        for i in 0..3 {
            w.weight[i * 3 + i] = 1.0;
        }
        assert_eq!(linear(&f, &w).unwrap(), f);
    }
}
