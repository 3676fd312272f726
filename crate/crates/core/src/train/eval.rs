//! Multi-clip, multi-crop inference with softmax averaging.

use serde::{Deserialize, Serialize};

use super::data::{gen_video, item_rng, SyntheticTask};
use crate::error::{domain_err, shape_err, Error, Result};
use crate::net::Network;
use crate::ops::{softmax, Features};
use crate::tensor::{Float, Shape, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    /// One central square.
    #[default]
    Center1,
    /// Three squares spread evenly along the longer side.
    Three,
}

impl CropMode {
    pub fn count(self) -> usize {
        match self {
            CropMode::Center1 => 1,
            CropMode::Three => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalProtocol {
    pub clips_per_video: usize,
    pub crops: CropMode,
    /// Side of the square crop fed to the network.
    pub resolution: usize,
    /// Width of the rendered evaluation videos; wider than `resolution` makes the crops differ.
    pub video_width: usize,
    pub videos: usize,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol { clips_per_video: 1, crops: CropMode::Center1, resolution: 32, video_width: 32, videos: 400, seed: 1001 }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.clips_per_video == 0 || self.videos == 0 || self.resolution == 0 {
            return Err(Error::Config("eval: clips_per_video, videos and resolution must be >= 1".into()));
        }
        if self.video_width < self.resolution {
            return Err(Error::Config("eval: video_width must be >= resolution".into()));
        }
        Ok(())
    }

    pub fn views(&self) -> usize {
        self.clips_per_video * self.crops.count()
    }

    pub fn describe(&self) -> String {
        format!(
            "{} clip(s) x {} crop(s) at {}px from {}px-wide videos",
            self.clips_per_video,
            self.crops.count(),
            self.resolution,
            self.video_width
        )
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: Float>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Average the per-clip softmax probabilities and take the argmax.
pub fn clip_consensus<T: Float>(per_clip_logits: &[Vec<T>]) -> Result<usize> {
    let first = per_clip_logits.first().ok_or_else(|| Error::Domain("consensus over zero clips".into()))?;
    let mut mean = vec![T::zero(); first.len()];
    for logits in per_clip_logits {
        if logits.len() != mean.len() {
            return shape_err("clips disagree on the number of classes");
        }
        for (m, p) in mean.iter_mut().zip(softmax(logits)) {
            *m += p;
        }
    }
    let k = T::from_usize(per_clip_logits.len()).expect("count");
    mean.iter_mut().for_each(|m| *m = *m / k);
    Ok(argmax(&mean))
}

/// Bilinear resampling of every frame (half-pixel centres, edge clamped).
pub fn resize_bilinear<T: Float>(x: &VideoTensor<T>, h: usize, w: usize) -> VideoTensor<T> {
    let s = x.shape();
    if (s.h, s.w) == (h, w) {
        return x.clone();
    }
    let coord = |o: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        let src = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
        let lo = src.floor() as usize;
        (lo, (lo + 1).min(inp - 1), src - lo as f64)
    };
    VideoTensor::from_fn(Shape { h, w, ..s }, |n, c, t, y, xo| {
        let (y0, y1, fy) = coord(y, h, s.h);
        let (x0, x1, fx) = coord(xo, w, s.w);
        let v = |yy, xx| x.get(n, c, t, yy, xx).to_f64().expect("finite");
        let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
        let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
        T::lit(top * (1.0 - fy) + bottom * fy)
    })
}

fn crop<T: Float>(x: &VideoTensor<T>, y0: usize, x0: usize, size: usize) -> VideoTensor<T> {
    let s = x.shape();
    VideoTensor::from_fn(Shape { h: size, w: size, ..s }, |n, c, t, y, xx| x.get(n, c, t, y0 + y, x0 + xx))
}

/// Square crops of side `resolution`, after resizing the short side down to it.
pub fn crop_views<T: Float>(frames: &VideoTensor<T>, mode: CropMode, resolution: usize) -> Result<Vec<VideoTensor<T>>> {
    let s = frames.shape();
    let short = s.h.min(s.w);
    if short < resolution {
        return domain_err(format!("crop {resolution} is larger than the {}x{} frame", s.h, s.w));
    }
    let (h, w) = if short == resolution {
        (s.h, s.w)
    } else {
        let scale = resolution as f64 / short as f64;
        let r = |v: usize| if v == short { resolution } else { ((v as f64 * scale).round() as usize).max(resolution) };
        (r(s.h), r(s.w))
    };
    let x = resize_bilinear(frames, h, w);
    let (long, landscape) = if w >= h { (w, true) } else { (h, false) };
    let slack = long - resolution;
    let offsets = match mode {
        CropMode::Center1 => vec![slack / 2],
        CropMode::Three => vec![0, slack / 2, slack],
    };
    let short_off = |side: usize| (side - resolution) / 2;
    Ok(offsets
        .into_iter()
        .map(|o| if landscape { crop(&x, short_off(h), o, resolution) } else { crop(&x, o, short_off(w), resolution) })
        .collect())
}

/// Split a `clips * frames`-frame video into `clips` interleaved clips (clip `k` takes frames
/// `k, k + clips, ...`), each covering the whole video.
pub fn sample_clips<T: Float>(video: &VideoTensor<T>, clips: usize, frames: usize) -> Result<Vec<VideoTensor<T>>> {
    let s = video.shape();
    if clips == 0 || s.t != clips * frames {
        return shape_err(format!("video has {} frames, expected {clips} x {frames}", s.t));
    }
    Ok((0..clips)
        .map(|k| VideoTensor::from_fn(Shape { t: frames, ..s }, |n, c, t, y, x| video.get(n, c, k + t * clips, y, x)))
        .collect())
}

/// Outcome of [`evaluate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub videos: usize,
    pub views_per_video: usize,
    pub accuracy: f64,
    /// Accuracy of choosing between each video's class and its time-reversed partner.
    pub pair_accuracy: Option<f64>,
}

/// Score a set of labelled logits (one row per item) on the full and the reversed-pair task.
pub fn score<T: Float>(task: &SyntheticTask, logits: &Features<T>, labels: &[usize]) -> (f64, Option<f64>) {
    let n = labels.len().max(1) as f64;
    let correct = labels.iter().enumerate().filter(|&(r, &l)| argmax(logits.row(r)) == l).count();
    let pair = task.partner(0).map(|_| {
        let hits = labels
            .iter()
            .enumerate()
            .filter(|&(r, &l)| {
                let p = task.partner(l).expect("paired task");
                let row = logits.row(r);
                let pick = if row[l] > row[p] || (row[l] == row[p] && l < p) { l } else { p };
                pick == l
            })
            .count();
        hits as f64 / n
    });
    (correct as f64 / n, pair)
}

/// Evaluate on freshly rendered videos under `protocol`.
///
/// Videos come in reversal pairs for tasks that have partner classes, as in validation.
pub fn evaluate<T: Float>(net: &Network<T>, task: &SyntheticTask, protocol: &EvalProtocol) -> Result<EvalReport> {
    protocol.validate()?;
    task.validate()?;
    let k = task.classes();
    let frames = net.spec.frames;
    let mut consensus_rows = Vec::with_capacity(protocol.videos);
    let mut labels = Vec::with_capacity(protocol.videos);
    let paired = task.partner(0).is_some();
    let mut j = 0u64;
    while labels.len() < protocol.videos {
        let class = if paired { (2 * j as usize) % k } else { j as usize % k };
        let video = gen_video::<T>(task, class, frames * protocol.clips_per_video, 1.0 / protocol.clips_per_video as f64, protocol.video_width, &mut item_rng(protocol.seed, j))?;
        let mut items = vec![(video.clone(), class)];
        if let Some(p) = task.partner(class) {
            items.push((video.reverse_frames(), p));
        }
        for (v, label) in items.into_iter().take(protocol.videos - labels.len()) {
            let mut views = Vec::new();
            for clip in sample_clips(&v, protocol.clips_per_video, frames)? {
                views.extend(crop_views(&clip, protocol.crops, protocol.resolution)?);
            }
            let logits = net.logits(&VideoTensor::stack(&views)?)?;
            let per_view: Vec<Vec<T>> = (0..logits.rows).map(|r| logits.row(r).to_vec()).collect();
            let pred = clip_consensus(&per_view)?;
            // Store the averaged probabilities so pair scoring sees the consensus.
            let mut probs = vec![T::zero(); logits.cols];
            for row in &per_view {
                for (m, p) in probs.iter_mut().zip(softmax(row)) {
                    *m += p;
                }
            }
            debug_assert_eq!(argmax(&probs), pred);
            consensus_rows.push(probs);
            labels.push(label);
        }
        j += 1;
    }
    let logits = Features::new(labels.len(), k, consensus_rows.concat())?;
    let (accuracy, pair_accuracy) = score(task, &logits, &labels);
    Ok(EvalReport { protocol: protocol.describe(), videos: labels.len(), views_per_video: protocol.views(), accuracy, pair_accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consensus_ties_go_low() {
        assert_eq!(clip_consensus(&[vec![2.0f64, 0.0], vec![0.0, 2.0]]).unwrap(), 0);
        assert_eq!(clip_consensus(&[vec![0.0f64, 1.0, 0.5]]).unwrap(), 1);
        assert!(clip_consensus::<f64>(&[]).is_err());
    }

    #[test]
    fn three_crops_on_wide_frames() {
        let x = VideoTensor::from_fn(Shape::new(1, 1, 2, 4, 8), |_, _, _, _, w| w as f64);
        let views = crop_views(&x, CropMode::Three, 4).unwrap();
        let firsts: Vec<f64> = views.iter().map(|v| v.get(0, 0, 0, 0, 0)).collect();
        assert_eq!(firsts, vec![0.0, 2.0, 4.0]);
        assert!(views.iter().all(|v| v.shape() == Shape::new(1, 1, 2, 4, 4)));
        assert_eq!(crop_views(&x, CropMode::Center1, 4).unwrap()[0].get(0, 0, 0, 0, 0), 2.0);
        assert!(crop_views(&x, CropMode::Center1, 5).is_err());
    }

    #[test]
    fn interleaved_clips() {
        let v = VideoTensor::from_fn(Shape::new(1, 1, 6, 1, 1), |_, _, t, _, _| t as f64);
        let clips = sample_clips(&v, 2, 3).unwrap();
        assert_eq!(clips[0].data(), &[0.0, 2.0, 4.0]);
        assert_eq!(clips[1].data(), &[1.0, 3.0, 5.0]);
    }
}
