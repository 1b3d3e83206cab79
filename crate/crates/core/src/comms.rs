//! Stochastic model of vehicle-to-edge uplink and edge-to-signal downlink
//! delays, and of the uplink data volume.
//!
//! Delays are Laplace distributed, truncated at zero by rejection. The
//! location is the configured mean and the scale is `MAD / ln 2`, which makes
//! the median absolute deviation of the untruncated law equal the configured
//! MAD.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommConfig {
    /// Bytes per message.
    pub message_size: u32,
    /// Messages per vehicle per second.
    pub frequency: f64,
    pub uplink_mean: f64,
    pub uplink_mad: f64,
    pub downlink_mean: f64,
    pub downlink_mad: f64,
    /// Decision step length (ms).
    pub step_duration: f64,
}

impl Default for CommConfig {
    fn default() -> Self {
        CommConfig {
            message_size: 1500,
            frequency: 1.0,
            uplink_mean: 110.82,
            uplink_mad: 17.68,
            downlink_mean: 106.23,
            downlink_mad: 0.0,
            step_duration: 1000.0,
        }
    }
}

impl CommConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.1..=1.0).contains(&self.frequency) {
            return Err(Error::config(
                "comm.frequency",
                format!("must lie in [0.1, 1] Hz, got {}", self.frequency),
            ));
        }
        if self.message_size == 0 || self.message_size > 1500 {
            return Err(Error::config(
                "comm.message_size",
                "must lie in 1..=1500 bytes",
            ));
        }
        let non_negative = [
            ("comm.uplink_mean", self.uplink_mean),
            ("comm.uplink_mad", self.uplink_mad),
            ("comm.downlink_mean", self.downlink_mean),
            ("comm.downlink_mad", self.downlink_mad),
        ];
        for (path, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(
                    path,
                    format!("must be non-negative, got {v}"),
                ));
            }
        }
        if !(self.step_duration > 0.0) {
            return Err(Error::config("comm.step_duration", "must be positive"));
        }
        Ok(())
    }
}

/// Delay of one message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelaySample {
    pub uplink: f64,
    pub downlink: f64,
    pub end_to_end: f64,
}

/// Draws from Laplace(`mean`, `mad / ln 2`) conditioned on being non-negative.
pub fn sample_laplace_truncated<R: Rng + ?Sized>(mean: f64, mad: f64, rng: &mut R) -> f64 {
    if mad == 0.0 {
        return mean.max(0.0);
    }
    let scale = mad / std::f64::consts::LN_2;
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let x = mean - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
        if x >= 0.0 && x.is_finite() {
            return x;
        }
    }
}

pub fn sample_message<R: Rng + ?Sized>(cfg: &CommConfig, rng: &mut R) -> DelaySample {
    let uplink = sample_laplace_truncated(cfg.uplink_mean, cfg.uplink_mad, rng);
    let downlink = sample_laplace_truncated(cfg.downlink_mean, cfg.downlink_mad, rng);
    DelaySample {
        uplink,
        downlink,
        end_to_end: uplink + downlink,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayStats {
    pub mean: f64,
    /// Median absolute deviation from the median.
    pub mad: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl DelayStats {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("no samples".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = percentile(&sorted, 0.5);
        let mut dev: Vec<f64> = sorted.iter().map(|x| (x - median).abs()).collect();
        dev.sort_by(f64::total_cmp);
        Ok(DelayStats {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            mad: percentile(&dev, 0.5),
            p95: percentile(&sorted, 0.95),
            p99: percentile(&sorted, 0.99),
            max: *sorted.last().expect("non-empty"),
        })
    }
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayReport {
    pub vehicles: usize,
    pub messages: usize,
    pub uplink: DelayStats,
    pub downlink: DelayStats,
    pub end_to_end: DelayStats,
    /// Share of messages delivered within one decision step.
    pub within_step: f64,
}

/// Simulates every message sent by `n_vehicles` over `n_steps` decision
/// steps at the configured frequency.
pub fn sample_delays<R: Rng + ?Sized>(
    cfg: &CommConfig,
    n_vehicles: usize,
    n_steps: usize,
    rng: &mut R,
) -> Result<DelayReport> {
    cfg.validate()?;
    if n_vehicles == 0 || n_steps == 0 {
        return Err(Error::InvalidArgument(
            "need at least one vehicle and one step".into(),
        ));
    }
    let seconds = n_steps as f64 * cfg.step_duration / 1000.0;
    let messages = ((n_vehicles as f64 * seconds * cfg.frequency).round() as usize).max(1);
    let mut up = Vec::with_capacity(messages);
    let mut down = Vec::with_capacity(messages);
    let mut e2e = Vec::with_capacity(messages);
    for _ in 0..messages {
        let d = sample_message(cfg, rng);
        up.push(d.uplink);
        down.push(d.downlink);
        e2e.push(d.end_to_end);
    }
    let within = e2e.iter().filter(|&&x| x < cfg.step_duration).count() as f64 / messages as f64;
    Ok(DelayReport {
        vehicles: n_vehicles,
        messages,
        uplink: DelayStats::of(&up)?,
        downlink: DelayStats::of(&down)?,
        end_to_end: DelayStats::of(&e2e)?,
        within_step: within,
    })
}

/// Uplink load per base station (bytes per second).
pub fn traffic_volume(cfg: &CommConfig, n_vehicles: usize) -> Result<f64> {
    cfg.validate()?;
    Ok(n_vehicles as f64 * cfg.frequency * f64::from(cfg.message_size))
}

/// Mean and standard deviation of the per-step vehicle counts.
pub fn estimate_active_vehicles(counts: &[usize]) -> Result<(f64, f64)> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument("empty vehicle-count log".into()));
    }
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = counts
        .iter()
        .map(|&c| (c as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok((mean, var.sqrt()))
}
