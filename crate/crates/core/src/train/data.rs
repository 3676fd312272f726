//! Procedurally generated motion clips.
//!
//! A bright square translates at constant velocity over a noisy background. Its intensity ramps
//! up over the clip, which gives every clip an arrow of time: a time-reversed clip shows the
//! square fading out while moving the opposite way. Frame-order-blind models cannot tell a clip
//! from its reversal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};
use crate::tensor::{Float, Shape, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Left vs right.
    DirectionLr,
    /// Up vs down.
    DirectionUd,
    /// Forward vs time-reversed playback, direction random.
    TemporalOrder,
    /// {left, right, up, down} x {forward, reversed}.
    FullEight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Left, Direction::Right, Direction::Up, Direction::Down];

    /// Unit displacement per frame as (dx, dy), with y growing downwards.
    pub fn step(self) -> (f64, f64) {
        match self {
            Direction::Left => (-1.0, 0.0),
            Direction::Right => (1.0, 0.0),
            Direction::Up => (0.0, -1.0),
            Direction::Down => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub resolution: usize,
    pub frames: usize,
    /// Square side length range in pixels.
    pub size_range: (f64, f64),
    /// Speed range in pixels per frame.
    pub speed_range: (f64, f64),
    /// Peak intensity range.
    pub intensity_range: (f64, f64),
    /// Intensity of the first frame relative to the last.
    pub fade_start: f64,
    pub noise_std: f64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            kind: TaskKind::FullEight,
            resolution: 32,
            frames: 8,
            size_range: (6.0, 10.0),
            speed_range: (1.0, 2.0),
            intensity_range: (0.6, 1.0),
            fade_start: 0.25,
            noise_std: 0.05,
        }
    }
}

/// Class semantics shared by every task kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassInfo {
    pub direction: Option<Direction>,
    pub reversed: bool,
}

impl SyntheticTask {
    pub fn full_eight() -> Self {
        SyntheticTask::default()
    }

    pub fn with_kind(kind: TaskKind) -> Self {
        SyntheticTask { kind, ..SyntheticTask::default() }
    }

    pub fn classes(&self) -> usize {
        match self.kind {
            TaskKind::FullEight => 8,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("task: {what}")));
        if self.frames < 2 {
            return bad("frames must be >= 2");
        }
        if self.resolution < 8 {
            return bad("resolution must be >= 8");
        }
        for (name, (lo, hi)) in [("size_range", self.size_range), ("speed_range", self.speed_range), ("intensity_range", self.intensity_range)] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
                return bad(&format!("{name} must satisfy 0 < lo <= hi"));
            }
        }
        let travel = self.speed_range.1 * (self.frames - 1) as f64 + self.size_range.1;
        if travel > self.resolution as f64 {
            return bad("square cannot stay inside the frame at the maximum speed and size");
        }
        if !(0.0..=1.0).contains(&self.fade_start) || self.noise_std < 0.0 {
            return bad("fade_start must be in [0, 1] and noise_std >= 0");
        }
        Ok(())
    }

    pub fn class_info(&self, class_id: usize) -> Result<ClassInfo> {
        if class_id >= self.classes() {
            return domain_err(format!("class {class_id} out of range for {:?} ({} classes)", self.kind, self.classes()));
        }
        Ok(match self.kind {
            TaskKind::DirectionLr => ClassInfo { direction: Some([Direction::Left, Direction::Right][class_id]), reversed: false },
            TaskKind::DirectionUd => ClassInfo { direction: Some([Direction::Up, Direction::Down][class_id]), reversed: false },
            TaskKind::TemporalOrder => ClassInfo { direction: None, reversed: class_id == 1 },
            TaskKind::FullEight => ClassInfo { direction: Some(Direction::ALL[class_id / 2]), reversed: class_id % 2 == 1 },
        })
    }

    /// The class whose frame-reversed clips make up `class_id`, if the task has one.
    pub fn partner(&self, class_id: usize) -> Option<usize> {
        match self.kind {
            TaskKind::FullEight | TaskKind::TemporalOrder => Some(class_id ^ 1),
            _ => None,
        }
    }
}

/// Geometry of one rendered square trajectory.
#[derive(Debug, Clone, Copy)]
struct Motion {
    size: f64,
    x0: f64,
    y0: f64,
    vx: f64,
    vy: f64,
    intensity: f64,
}

fn draw_motion(task: &SyntheticTask, dir: Direction, frames: usize, speed_scale: f64, rng: &mut impl Rng) -> Motion {
    let r = task.resolution as f64;
    let size = rng.random_range(task.size_range.0..=task.size_range.1);
    let speed = rng.random_range(task.speed_range.0..=task.speed_range.1) * speed_scale;
    let intensity = rng.random_range(task.intensity_range.0..=task.intensity_range.1);
    let (dx, dy) = dir.step();
    let travel = speed * (frames - 1) as f64;
    // Top-left corner range that keeps the square inside along the motion axis.
    let along = rng.random_range(0.0..=(r - size - travel).max(0.0));
    let across = rng.random_range(0.0..=(r - size));
    let start = |d: f64| if d > 0.0 { along } else { along + travel };
    let (x0, y0) = if dx != 0.0 { (start(dx), across) } else { (across, start(dy)) };
    Motion { size, x0, y0, vx: dx * speed, vy: dy * speed, intensity }
}

/// Length of `[a, a + len) ∩ [p, p + 1)`.
fn overlap(a: f64, len: f64, p: f64) -> f64 {
    ((a + len).min(p + 1.0) - a.max(p)).max(0.0)
}

fn render<T: Float>(task: &SyntheticTask, m: &Motion, frames: usize, width: usize, noise: &mut impl FnMut() -> f64) -> VideoTensor<T> {
    let h = task.resolution;
    VideoTensor::from_fn(Shape::new(1, 1, frames, h, width), |_, _, t, y, x| {
        let (fx, fy) = (m.x0 + m.vx * t as f64, m.y0 + m.vy * t as f64);
        let ramp = task.fade_start + (1.0 - task.fade_start) * t as f64 / (frames - 1) as f64;
        let cover = overlap(fx, m.size, x as f64) * overlap(fy, m.size, y as f64);
        T::lit(m.intensity * ramp * cover + noise())
    })
}

fn noise_source(std: f64, rng: &mut impl Rng) -> impl FnMut() -> f64 + '_ {
    let normal = Normal::new(0.0, std.max(f64::MIN_POSITIVE)).expect("valid std");
    move || if std > 0.0 { normal.sample(rng) } else { 0.0 }
}

/// A `(1, 1, frames, resolution, resolution)` clip of `class_id`.
///
/// Reversed classes draw exactly what their partner would draw from the same rng state, noise
/// included, and then reverse the frame order.
pub fn gen_clip<T: Float>(task: &SyntheticTask, class_id: usize, rng: &mut impl Rng) -> Result<(VideoTensor<T>, usize)> {
    let v = gen_video(task, class_id, task.frames, 1.0, task.resolution, rng)?;
    Ok((v, class_id))
}

/// A longer or wider rendering of `class_id` used for multi-clip and multi-crop evaluation.
///
/// `speed_scale` multiplies the per-frame speed so that a video with `k` times more frames covers
/// the same trajectory as a single clip.
pub fn gen_video<T: Float>(
    task: &SyntheticTask,
    class_id: usize,
    frames: usize,
    speed_scale: f64,
    width: usize,
    rng: &mut impl Rng,
) -> Result<VideoTensor<T>> {
    let info = task.class_info(class_id)?;
    if width < task.resolution || frames < 2 {
        return domain_err(format!("video must have >= 2 frames and width >= {}", task.resolution));
    }
    let dir = match info.direction {
        Some(d) => d,
        None => Direction::ALL[rng.random_range(0..4)],
    };
    let mut m = draw_motion(task, dir, frames, speed_scale, rng);
    // Spread extra width evenly: the square keeps its trajectory relative to the centre.
    m.x0 += (width - task.resolution) as f64 / 2.0;
    let mut noise = noise_source(task.noise_std, rng);
    let clip = render(task, &m, frames, width, &mut noise);
    Ok(if info.reversed { clip.reverse_frames() } else { clip })
}

/// Per-item generator seeded from `(seed, index)`.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Labelled clips, stacked along the batch axis on demand.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub clips: Vec<VideoTensor<T>>,
    pub labels: Vec<usize>,
}

impl<T: Float> Dataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(VideoTensor<T>, Vec<usize>)> {
        let parts: Vec<_> = indices.iter().map(|&i| self.clips[i].clone()).collect();
        Ok((VideoTensor::stack(&parts)?, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}

/// Balanced training set: item `i` has class `i mod classes` and its own rng stream.
pub fn gen_dataset<T: Float>(task: &SyntheticTask, n: usize, seed: u64) -> Result<Dataset<T>> {
    task.validate()?;
    let k = task.classes();
    let mut clips = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (c, l) = gen_clip(task, i % k, &mut item_rng(seed, i as u64))?;
        clips.push(c);
        labels.push(l);
    }
    Ok(Dataset { clips, labels })
}

/// Validation set made of exact reversal pairs.
///
/// For tasks with partners, items `2j` and `2j + 1` are a clip and its frame reversal, labelled
/// with partner classes. Any model that ignores frame order then gets exactly half of every pair
/// right on the reversed-pair subtask.
pub fn gen_paired_dataset<T: Float>(task: &SyntheticTask, n: usize, seed: u64) -> Result<Dataset<T>> {
    task.validate()?;
    let k = task.classes();
    if task.partner(0).is_none() {
        return gen_dataset(task, n, seed);
    }
    let mut clips = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for j in 0..n.div_ceil(2) {
        let class = (2 * j) % k;
        let (c, l) = gen_clip::<T>(task, class, &mut item_rng(seed, j as u64))?;
        let partner = task.partner(class).expect("paired task");
        clips.push(c.reverse_frames());
        labels.push(partner);
        clips.push(c);
        labels.push(l);
    }
    clips.truncate(n);
    labels.truncate(n);
    Ok(Dataset { clips, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centre_x(clip: &VideoTensor<f64>, t: usize) -> f64 {
        let s = clip.shape();
        let (mut num, mut den) = (0.0, 0.0);
        for y in 0..s.h {
            for x in 0..s.w {
                let v = clip.get(0, 0, t, y, x);
                num += v * x as f64;
                den += v;
            }
        }
        num / den
    }

    #[test]
    fn right_moves_right_before_noise() {
        let task = SyntheticTask { noise_std: 0.0, ..SyntheticTask::with_kind(TaskKind::DirectionLr) };
        let (clip, label) = gen_clip::<f64>(&task, 1, &mut item_rng(3, 0)).unwrap();
        assert_eq!(label, 1);
        for t in 1..task.frames {
            assert!(centre_x(&clip, t) > centre_x(&clip, t - 1));
        }
    }

    #[test]
    fn reversed_class_is_reversed_partner() {
        let task = SyntheticTask::full_eight();
        for class in [0, 2, 4, 6] {
            let (a, _) = gen_clip::<f64>(&task, class, &mut item_rng(9, 4)).unwrap();
            let (b, _) = gen_clip::<f64>(&task, class + 1, &mut item_rng(9, 4)).unwrap();
            assert_eq!(a.reverse_frames(), b);
        }
        assert!(gen_clip::<f64>(&task, 8, &mut item_rng(0, 0)).is_err());
    }

    #[test]
    fn paired_set_alternates_partners() {
        let task = SyntheticTask::full_eight();
        let d = gen_paired_dataset::<f32>(&task, 16, 1).unwrap();
        for j in 0..8 {
            assert_eq!(d.labels[2 * j] ^ 1, d.labels[2 * j + 1]);
            assert_eq!(d.clips[2 * j].reverse_frames(), d.clips[2 * j + 1]);
        }
    }
}
