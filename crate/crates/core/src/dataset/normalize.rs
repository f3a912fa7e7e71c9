use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear temperature map `[t_min, t_max] -> [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub t_min: f64,
    pub t_max: f64,
    /// Percentile used when `t_max` is computed from data.
    pub clip_percentile: f64,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        NormalizationSpec {
            t_min: 293.0,
            t_max: 6500.0,
            clip_percentile: 99.9,
        }
    }
}

impl NormalizationSpec {
    pub fn with_t_max(t_max: f64) -> Self {
        NormalizationSpec {
            t_max,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > self.t_min) || !self.t_min.is_finite() || !self.t_max.is_finite() {
            return Err(Error::Config(format!(
                "normalization needs t_max > t_min, got [{}, {}]",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, t: f64) -> f64 {
        (t.clamp(self.t_min, self.t_max) - self.t_min) / (self.t_max - self.t_min)
    }

    pub fn denormalize(&self, n: f64) -> f64 {
        self.t_min + n * (self.t_max - self.t_min)
    }

    pub fn normalize_field(&self, field: &[f32]) -> Vec<f32> {
        field.iter().map(|&t| self.normalize(f64::from(t)) as f32).collect()
    }

    pub fn denormalize_field(&self, field: &[f32]) -> Vec<f32> {
        field.iter().map(|&n| self.denormalize(f64::from(n)) as f32).collect()
    }

    /// Normalized value of a temperature threshold, e.g. the melting point.
    pub fn threshold(&self, t: f64) -> f64 {
        (t - self.t_min) / (self.t_max - self.t_min)
    }
}

/// Linearly interpolated order statistic at `q` percent: position `(n-1)·q/100`
/// in the sorted values. `sorted` must be ascending and non-empty.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let pos = (sorted.len() - 1) as f64 * (q / 100.0).clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, q)
}

/// `q`-th percentile of every temperature strictly above `t_melt`, pooled
/// over all given frames.
pub fn compute_clip_threshold<'a, I>(frames: I, t_melt: f64, q: f64) -> Result<f64>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut pool: Vec<f64> = frames
        .into_iter()
        .flat_map(|f| f.iter().map(|&t| f64::from(t)))
        .filter(|&t| t > t_melt)
        .collect();
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    pool.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&pool, q))
}

/// Per-dataset min/max of each network input, in the dataset's units
/// (W, mm/s, µs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputRanges {
    pub power: [f64; 2],
    pub velocity: [f64; 2],
    pub time: [f64; 2],
}

/// Network input triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessPoint {
    /// W.
    pub power: f64,
    /// mm/s.
    pub velocity: f64,
    /// µs.
    pub time: f64,
}

impl InputRanges {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a ProcessPoint>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut r = InputRanges {
            power: [first.power; 2],
            velocity: [first.velocity; 2],
            time: [first.time; 2],
        };
        for p in it {
            let widen = |range: &mut [f64; 2], v: f64| {
                range[0] = range[0].min(v);
                range[1] = range[1].max(v);
            };
            widen(&mut r.power, p.power);
            widen(&mut r.velocity, p.velocity);
            widen(&mut r.time, p.time);
        }
        Some(r)
    }

    /// Min-max scale each input; a degenerate range maps to 0.
    pub fn normalize(&self, p: &ProcessPoint) -> [f64; 3] {
        let scale = |v: f64, r: [f64; 2]| if r[1] > r[0] { (v - r[0]) / (r[1] - r[0]) } else { 0.0 };
        [scale(p.power, self.power), scale(p.velocity, self.velocity), scale(p.time, self.time)]
    }

    pub fn contains(&self, p: &ProcessPoint) -> bool {
        let within = |v: f64, r: [f64; 2]| v >= r[0] && v <= r[1];
        within(p.power, self.power) && within(p.velocity, self.velocity) && within(p.time, self.time)
    }
}
