//! Link latency and request service-time models.

use std::collections::VecDeque;

use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkModel {
    pub base_rtt_ms: f64,
    /// Half-width of the uniform jitter.
    pub jitter_ms: f64,
    pub per_kb_ms: f64,
}

impl LinkModel {
    pub fn new(base_rtt_ms: f64, jitter_ms: f64, per_kb_ms: f64) -> Self {
        Self { base_rtt_ms, jitter_ms, per_kb_ms }
    }

    /// Link with jitter given as a fraction of the base round trip.
    pub fn with_jitter_fraction(base_rtt_ms: f64, fraction: f64, per_kb_ms: f64) -> Self {
        Self::new(base_rtt_ms, base_rtt_ms * fraction, per_kb_ms)
    }
}

/// Samples one round trip for a message of `size_kb`.
pub fn rtt(link: &LinkModel, size_kb: f64, rng: &mut impl Rng) -> f64 {
    let jitter = if link.jitter_ms > 0.0 { rng.gen_range(-link.jitter_ms..=link.jitter_ms) } else { 0.0 };
    (link.base_rtt_ms + jitter + link.per_kb_ms * size_kb).max(0.0)
}

/// Utilisation-inflated service time in milliseconds.
///
/// The per-request time `s = work / cores` is inflated by `1 / (1 - rho)`
/// with `rho = rate * s / 1000 / cores`, clamped at 0.95.
pub fn service_time(work_ms_core: f64, allocated_cores: u32, arrival_rate_hz: f64) -> f64 {
    let cores = f64::from(allocated_cores.max(1));
    let s = work_ms_core / cores;
    let rho = (arrival_rate_hz * s / 1000.0 / cores).min(0.95);
    s / (1.0 - rho)
}

/// Arrival-rate estimate over a trailing window.
#[derive(Clone, Debug)]
pub struct RateWindow {
    width_s: f64,
    arrivals: VecDeque<f64>,
}

impl RateWindow {
    pub fn new(width_s: f64) -> Self {
        Self { width_s, arrivals: VecDeque::new() }
    }

    pub fn record(&mut self, t: f64) {
        self.arrivals.push_back(t);
        self.expire(t);
    }

    /// Arrivals per second within `(t - width, t]`.
    pub fn rate(&mut self, t: f64) -> f64 {
        self.expire(t);
        self.arrivals.len() as f64 / self.width_s
    }

    fn expire(&mut self, t: f64) {
        while self.arrivals.front().is_some_and(|&a| a <= t - self.width_s) {
            self.arrivals.pop_front();
        }
    }
}
