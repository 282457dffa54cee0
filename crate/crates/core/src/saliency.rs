//! Attention-map post-processing: align-corners bilinear upsampling,
//! artifact thresholding and multi-head stacking.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest number of attention channels carried per pixel.
pub const MAX_HEADS: usize = 6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SaliencyError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("saliency value {0} outside [0, 1]")]
    Range(f64),
}

/// Per-pixel attention values, `height × width × channels`, pixel-major
/// (`data[(v * width + u) * channels + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, SaliencyError> {
        if data.len() != height * width * channels {
            return Err(SaliencyError::Shape(format!(
                "{} values for {height}x{width}x{channels}",
                data.len()
            )));
        }
        if channels > MAX_HEADS {
            return Err(SaliencyError::Parameter(format!(
                "{channels} channels exceeds maximum of {MAX_HEADS}"
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SaliencyError::Range(*bad));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// The zero-channel map used when no attention heads are configured.
    pub fn none(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0, 0.0)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, v: usize, u: usize, c: usize) -> f64 {
        self.data[(v * self.width + u) * self.channels + c]
    }

    /// Single-channel copy of channel `c`.
    pub fn channel(&self, c: usize) -> Result<SaliencyMap, SaliencyError> {
        self.select(&[c])
    }

    /// Keeps the listed channels, in the given order.
    pub fn select(&self, channels: &[usize]) -> Result<SaliencyMap, SaliencyError> {
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.channels) {
            return Err(SaliencyError::Parameter(format!(
                "channel {bad} out of range for {}-channel map",
                self.channels
            )));
        }
        let data = self
            .data
            .chunks_exact(self.channels.max(1))
            .take(self.height * self.width)
            .flat_map(|px| channels.iter().map(move |&c| px[c]))
            .collect();
        Ok(SaliencyMap {
            height: self.height,
            width: self.width,
            channels: channels.len(),
            data,
        })
    }

    fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Source coordinate table for one output axis: `(i0, i1, t)` per output index.
fn axis_table(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|o| {
            // integer numerator keeps the last output exactly on the last source
            let x = (o * (src - 1)) as f64 / (dst - 1) as f64;
            let i0 = (x.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, x - i0 as f64)
        })
        .collect()
}

/// Align-corners bilinear resize to `target_h × target_w`. Every channel is
/// resized independently; corners are copied exactly.
pub fn upsample_bilinear(
    src: &SaliencyMap,
    target_h: usize,
    target_w: usize,
) -> Result<SaliencyMap, SaliencyError> {
    if src.height < 2 || src.width < 2 {
        return Err(SaliencyError::Degenerate(format!(
            "source {}x{} must be at least 2x2",
            src.height, src.width
        )));
    }
    if target_h < src.height || target_w < src.width {
        return Err(SaliencyError::Parameter(format!(
            "target {target_h}x{target_w} smaller than source {}x{}",
            src.height, src.width
        )));
    }
    let ch = src.channels;
    if ch == 0 {
        return Ok(SaliencyMap::none(target_h, target_w));
    }
    let rows = axis_table(src.height, target_h);
    let cols = axis_table(src.width, target_w);
    let mut data = vec![0.0; target_h * target_w * ch];
    data.par_chunks_mut(target_w * ch)
        .zip(rows.par_iter())
        .for_each(|(out_row, &(r0, r1, ty))| {
            for (x, &(c0, c1, tx)) in cols.iter().enumerate() {
                for c in 0..ch {
                    let a = src.get(r0, c0, c);
                    let b = src.get(r0, c1, c);
                    let d = src.get(r1, c0, c);
                    let e = src.get(r1, c1, c);
                    let top = a * (1.0 - tx) + b * tx;
                    let bottom = d * (1.0 - tx) + e * tx;
                    let v = top * (1.0 - ty) + bottom * ty;
                    // rounding can step one ulp past the neighbourhood extrema
                    let lo = a.min(b).min(d).min(e);
                    let hi = a.max(b).max(d).max(e);
                    out_row[x * ch + c] = v.clamp(lo, hi);
                }
            }
        });
    Ok(SaliencyMap {
        height: target_h,
        width: target_w,
        channels: ch,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// `min(v, tau) / tau`: caps high-intensity spikes, then rescales to `[0, 1]`.
    #[default]
    ClampHigh,
    /// `max(v - tau, 0) / (1 - tau)`: classical soft threshold.
    ZeroLow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdOrder {
    #[default]
    UpsampleThenThreshold,
    ThresholdThenUpsample,
}

/// Applies the artifact threshold to every value. `tau = 1` is the identity
/// in both modes.
pub fn threshold_attention(
    map: &SaliencyMap,
    tau: f64,
    mode: ThresholdMode,
) -> Result<SaliencyMap, SaliencyError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(SaliencyError::Parameter(format!("tau {tau} outside (0, 1]")));
    }
    if tau == 1.0 {
        return Ok(map.clone());
    }
    let f: fn(f64, f64) -> f64 = match mode {
        ThresholdMode::ClampHigh => |v, tau| (v.min(tau) / tau).clamp(0.0, 1.0),
        ThresholdMode::ZeroLow => |v, tau| ((v - tau).max(0.0) / (1.0 - tau)).clamp(0.0, 1.0),
    };
    Ok(SaliencyMap {
        data: map.data.iter().map(|&v| f(v, tau)).collect(),
        ..*map
    })
}

/// Stacks single-channel maps into one multi-channel map, preserving order.
/// An empty list yields the zero-channel map of the given size.
pub fn stack_heads(height: usize, width: usize, maps: &[SaliencyMap]) -> Result<SaliencyMap, SaliencyError> {
    if maps.len() > MAX_HEADS {
        return Err(SaliencyError::Parameter(format!(
            "{} heads exceeds maximum of {MAX_HEADS}",
            maps.len()
        )));
    }
    for (i, m) in maps.iter().enumerate() {
        if m.channels != 1 {
            return Err(SaliencyError::Shape(format!("head {i} has {} channels, expected 1", m.channels)));
        }
        if m.height != height || m.width != width {
            return Err(SaliencyError::Shape(format!(
                "head {i} is {}x{}, expected {height}x{width}",
                m.height, m.width
            )));
        }
    }
    let k = maps.len();
    let mut data = Vec::with_capacity(height * width * k);
    for px in 0..height * width {
        data.extend(maps.iter().map(|m| m.data[px]));
    }
    Ok(SaliencyMap {
        height,
        width,
        channels: k,
        data,
    })
}

/// Saliency post-processing settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaliencyConfig {
    /// Number of attention channels kept (the first `k` heads of the input).
    pub k: usize,
    pub tau: f64,
    pub mode: ThresholdMode,
    pub order: ThresholdOrder,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self {
            k: 1,
            tau: 0.6,
            mode: ThresholdMode::ClampHigh,
            order: ThresholdOrder::UpsampleThenThreshold,
        }
    }
}

impl SaliencyConfig {
    pub fn validate(&self) -> Result<(), SaliencyError> {
        if self.k > MAX_HEADS {
            return Err(SaliencyError::Parameter(format!("k = {} exceeds {MAX_HEADS}", self.k)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(SaliencyError::Parameter(format!("tau {} outside (0, 1]", self.tau)));
        }
        Ok(())
    }
}

/// Full chain: head selection, upsampling to the image size and thresholding
/// in the configured order.
pub fn process_attention(
    raw: &SaliencyMap,
    target_h: usize,
    target_w: usize,
    cfg: &SaliencyConfig,
) -> Result<SaliencyMap, SaliencyError> {
    cfg.validate()?;
    if cfg.k == 0 {
        return Ok(SaliencyMap::none(target_h, target_w));
    }
    if raw.channels < cfg.k {
        return Err(SaliencyError::Shape(format!(
            "map has {} heads, configuration needs {}",
            raw.channels, cfg.k
        )));
    }
    let heads: Vec<usize> = (0..cfg.k).collect();
    let selected = if raw.channels == cfg.k {
        raw.clone()
    } else {
        raw.select(&heads)?
    };
    let resize = |m: &SaliencyMap| {
        if m.height == target_h && m.width == target_w {
            Ok(m.clone())
        } else {
            upsample_bilinear(m, target_h, target_w)
        }
    };
    match cfg.order {
        ThresholdOrder::UpsampleThenThreshold => threshold_attention(&resize(&selected)?, cfg.tau, cfg.mode),
        ThresholdOrder::ThresholdThenUpsample => resize(&threshold_attention(&selected, cfg.tau, cfg.mode)?),
    }
}

/// `(min, max)` over all values; `(inf, -inf)` for an empty map.
pub fn value_range(map: &SaliencyMap) -> (f64, f64) {
    map.min_max()
}
