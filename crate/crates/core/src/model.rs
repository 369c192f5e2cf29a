//! Closed-form rate model for a pulsed photon-pair source.
//!
//! Pairs per pulse are Poisson distributed with mean `mu`. With overall
//! detection efficiencies `eta_s`, `eta_i`, per-pulse noise photon means
//! `mu_s`, `mu_i`, dark rates `d_s`, `d_i` and a coincidence window `t`:
//!
//! ```text
//! C   = nu * mu * eta_s * eta_i
//! C_a = nu * ((mu + mu_s) * eta_s + t * d_s) * ((mu + mu_i) * eta_i + t * d_i)
//! CAR = (C + C_a) / C_a
//! ```
//!
//! These functions are the oracle the Monte Carlo engine is checked against.
//! Crosstalk and detector dead time do not enter the closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratio between a Gaussian's FWHM and its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.354820045;

/// Overall signal efficiency fitted from the 1.1 MHz signal singles at mu = 0.12.
pub const PRESET_EFFICIENCY_SIGNAL: f64 = 9.17e-4;
/// Overall idler efficiency fitted from the 4.8 MHz idler singles at mu = 0.12.
pub const PRESET_EFFICIENCY_IDLER: f64 = 4.0e-3;
pub const PRESET_REP_RATE_HZ: f64 = 1e10;
pub const PRESET_DARK_RATE_HZ: f64 = 100.0;
pub const PRESET_JITTER_FWHM_PS: f64 = 65.0;
pub const PRESET_WINDOW_PS: u64 = 60;
/// Dead time used by the simulator when none is configured.
pub const DEFAULT_DEAD_TIME_PS: u64 = 10_000;

pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / FWHM_PER_SIGMA
}

/// Pair source as seen at the demultiplexer outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceParams {
    /// Mean photon pairs per pulse.
    pub mu: f64,
    pub rep_rate_hz: f64,
    /// Mean noise photons per pulse in the signal channel.
    #[serde(default)]
    pub mu_noise_signal: f64,
    /// Mean noise photons per pulse in the idler channel.
    #[serde(default)]
    pub mu_noise_idler: f64,
    /// Probability that a photon leaves through the wrong output port.
    #[serde(default)]
    pub crosstalk: f64,
}

impl SourceParams {
    /// Noise-free source at the default 10 GHz clock.
    pub fn preset(mu: f64) -> Self {
        SourceParams {
            mu,
            rep_rate_hz: PRESET_REP_RATE_HZ,
            mu_noise_signal: 0.0,
            mu_noise_idler: 0.0,
            crosstalk: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        non_negative("mu", self.mu)?;
        non_negative("mu_noise_signal", self.mu_noise_signal)?;
        non_negative("mu_noise_idler", self.mu_noise_idler)?;
        if !(self.rep_rate_hz.is_finite() && self.rep_rate_hz > 0.0) {
            return Err(Error::param("rep_rate_hz", "must be finite and > 0"));
        }
        probability("crosstalk", self.crosstalk)
    }

    /// Pulse period in (possibly fractional) picoseconds.
    pub fn period_ps_f64(&self) -> f64 {
        1e12 / self.rep_rate_hz
    }

    /// Pulse period in whole picoseconds; errors if 1/nu is not an integer number of ps.
    pub fn period_ps(&self) -> Result<u64> {
        self.validate()?;
        let exact = self.period_ps_f64();
        let rounded = exact.round();
        if rounded < 1.0 || (exact - rounded).abs() > 1e-6 * rounded.max(1.0) {
            return Err(Error::param(
                "rep_rate_hz",
                format!("pulse period {exact} ps is not a whole number of picoseconds"),
            ));
        }
        Ok(rounded as u64)
    }
}

/// One single-photon detector, collection losses folded into `efficiency`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams {
    pub efficiency: f64,
    #[serde(default)]
    pub dark_rate_hz: f64,
    #[serde(default)]
    pub jitter_fwhm_ps: f64,
    #[serde(default = "default_dead_time")]
    pub dead_time_ps: u64,
}

fn default_dead_time() -> u64 {
    DEFAULT_DEAD_TIME_PS
}

impl DetectorParams {
    pub fn preset_signal() -> Self {
        DetectorParams {
            efficiency: PRESET_EFFICIENCY_SIGNAL,
            dark_rate_hz: PRESET_DARK_RATE_HZ,
            jitter_fwhm_ps: PRESET_JITTER_FWHM_PS,
            dead_time_ps: DEFAULT_DEAD_TIME_PS,
        }
    }

    pub fn preset_idler() -> Self {
        DetectorParams {
            efficiency: PRESET_EFFICIENCY_IDLER,
            ..Self::preset_signal()
        }
    }

    /// Perfect detector: unit efficiency, no darks, no jitter, no dead time.
    pub fn ideal() -> Self {
        DetectorParams {
            efficiency: 1.0,
            dark_rate_hz: 0.0,
            jitter_fwhm_ps: 0.0,
            dead_time_ps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        probability("efficiency", self.efficiency)?;
        non_negative("dark_rate_hz", self.dark_rate_hz)?;
        non_negative("jitter_fwhm_ps", self.jitter_fwhm_ps)
    }

    pub fn jitter_sigma_ps(&self) -> f64 {
        fwhm_to_sigma(self.jitter_fwhm_ps)
    }
}

/// Coincidence window `t` of the rate formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoincidenceWindow {
    pub width_ps: u64,
}

impl CoincidenceWindow {
    pub fn new(width_ps: u64) -> Result<Self> {
        let w = CoincidenceWindow { width_ps };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_ps == 0 {
            return Err(Error::param("width_ps", "coincidence window must be > 0"));
        }
        Ok(())
    }

    pub fn seconds(&self) -> f64 {
        self.width_ps as f64 * 1e-12
    }
}

impl Default for CoincidenceWindow {
    fn default() -> Self {
        CoincidenceWindow {
            width_ps: PRESET_WINDOW_PS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePrediction {
    pub coincidence_rate: f64,
    pub accidental_rate: f64,
    /// `None` when the accidental rate is zero.
    pub car: Option<f64>,
}

/// Poisson probability of `n` pairs in a pulse with mean `mu`.
pub fn pair_number_pmf(mu: f64, n: u64) -> Result<f64> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::Domain(format!("pair mean must be finite and >= 0, got {mu}")));
    }
    if mu == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    let ln_p = n as f64 * mu.ln() - mu - ln_factorial(n);
    Ok(ln_p.exp())
}

fn ln_factorial(n: u64) -> f64 {
    if n <= 1024 {
        return (2..=n).map(|k| (k as f64).ln()).sum();
    }
    // Stirling series; relative error far below f64 resolution for n > 1024.
    let x = n as f64;
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + 1.0 / (12.0 * x) - 1.0 / (360.0 * x.powi(3))
}

/// True-coincidence rate `C` in Hz.
pub fn coincidence_rate(source: &SourceParams, eta_s: f64, eta_i: f64) -> Result<f64> {
    source.validate()?;
    probability("eta_s", eta_s)?;
    probability("eta_i", eta_i)?;
    Ok(source.rep_rate_hz * source.mu * eta_s * eta_i)
}

/// Per-pulse click probabilities `(mu + mu_s) eta_s + t d_s` and the idler counterpart.
fn click_factors(
    source: &SourceParams,
    det_s: &DetectorParams,
    det_i: &DetectorParams,
    window: &CoincidenceWindow,
) -> Result<(f64, f64)> {
    source.validate()?;
    det_s.validate()?;
    det_i.validate()?;
    window.validate()?;
    let t = window.seconds();
    let a = (source.mu + source.mu_noise_signal) * det_s.efficiency + t * det_s.dark_rate_hz;
    let b = (source.mu + source.mu_noise_idler) * det_i.efficiency + t * det_i.dark_rate_hz;
    Ok((a, b))
}

/// Accidental-coincidence rate `C_a` in Hz.
pub fn accidental_rate(
    source: &SourceParams,
    det_s: &DetectorParams,
    det_i: &DetectorParams,
    window: &CoincidenceWindow,
) -> Result<f64> {
    let (a, b) = click_factors(source, det_s, det_i, window)?;
    Ok(source.rep_rate_hz * a * b)
}

/// Coincidence-to-accidental ratio `(C + C_a) / C_a`.
pub fn car(
    source: &SourceParams,
    det_s: &DetectorParams,
    det_i: &DetectorParams,
    window: &CoincidenceWindow,
) -> Result<f64> {
    let (a, b) = click_factors(source, det_s, det_i, window)?;
    let denom = a * b;
    if denom <= 0.0 {
        return Err(Error::UndefinedCar);
    }
    Ok(1.0 + source.mu * det_s.efficiency * det_i.efficiency / denom)
}

pub fn predict(
    source: &SourceParams,
    det_s: &DetectorParams,
    det_i: &DetectorParams,
    window: &CoincidenceWindow,
) -> Result<RatePrediction> {
    let coincidence = coincidence_rate(source, det_s.efficiency, det_i.efficiency)?;
    let accidental = accidental_rate(source, det_s, det_i, window)?;
    let car = match car(source, det_s, det_i, window) {
        Ok(v) => Some(v),
        Err(Error::UndefinedCar) => None,
        Err(e) => return Err(e),
    };
    Ok(RatePrediction {
        coincidence_rate: coincidence,
        accidental_rate: accidental,
        car,
    })
}

/// Pair mean that maximises CAR for fixed per-pulse channel noise.
///
/// `noise_s = mu_s * eta_s + t * d_s`, `noise_i` likewise. Setting the
/// derivative of the CAR in `mu` to zero gives `mu* = sqrt(a b / (eta_s eta_i))`.
pub fn optimal_mu(noise_s: f64, noise_i: f64, eta_s: f64, eta_i: f64) -> Result<f64> {
    non_negative("noise_s", noise_s)?;
    non_negative("noise_i", noise_i)?;
    probability("eta_s", eta_s)?;
    probability("eta_i", eta_i)?;
    if eta_s == 0.0 || eta_i == 0.0 {
        return Err(Error::Domain("optimal mu needs nonzero efficiencies".into()));
    }
    if noise_s * noise_i == 0.0 {
        return Err(Error::NoInteriorOptimum);
    }
    Ok((noise_s * noise_i / (eta_s * eta_i)).sqrt())
}

/// [`optimal_mu`] with the noise terms taken from full parameter sets.
pub fn optimal_mu_for(
    source: &SourceParams,
    det_s: &DetectorParams,
    det_i: &DetectorParams,
    window: &CoincidenceWindow,
) -> Result<f64> {
    let noise_only = SourceParams { mu: 0.0, ..*source };
    let (a, b) = click_factors(&noise_only, det_s, det_i, window)?;
    optimal_mu(a, b, det_s.efficiency, det_i.efficiency)
}

/// Timing spread contributed by the source side (detector jitter lives on
/// [`DetectorParams`]).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EmissionSpread {
    pub pulse_fwhm_ps: f64,
    pub dispersion_fwhm_signal_ps: f64,
    pub dispersion_fwhm_idler_ps: f64,
}

/// Peak and accidental counting windows of the start-stop CAR measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountingWindows {
    pub width_ps: f64,
    pub slot_spacing_ps: f64,
    pub n_slots: usize,
}

impl CountingWindows {
    /// Offsets of the accidental slots from the peak, in the order they are taken.
    pub fn slot_offsets(&self) -> Vec<f64> {
        (1..)
            .flat_map(|k| {
                let d = k as f64 * self.slot_spacing_ps;
                [-d, d]
            })
            .take(self.n_slots)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowedPrediction {
    /// Expected peak-window counts per pulse.
    pub peak_per_pulse: f64,
    /// Expected counts per accidental slot per pulse (mean over slots).
    pub accidental_per_pulse: f64,
    pub car: Option<f64>,
}

/// Expected CAR of a windowed start-stop measurement.
///
/// Uses the same per-pulse terms as [`car`] but weights photon-photon
/// coincidences by the fraction of their Gaussian delay distribution that
/// falls inside each window (summed over all pulse offsets), and counts
/// dark-dark coincidences at the continuous-time rate `t d_s d_i`. Reduces to
/// [`car`] when all timing spread is zero and the window equals the period.
pub fn windowed_car(
    source: &SourceParams,
    det_s: &DetectorParams,
    det_i: &DetectorParams,
    spread: &EmissionSpread,
    windows: &CountingWindows,
) -> Result<WindowedPrediction> {
    source.validate()?;
    det_s.validate()?;
    det_i.validate()?;
    if !(windows.width_ps > 0.0) || windows.n_slots == 0 {
        return Err(Error::param("windows", "width must be > 0 and n_slots >= 1"));
    }
    let var = |fwhm: f64| fwhm_to_sigma(fwhm).powi(2);
    let pair_sigma = (var(det_s.jitter_fwhm_ps)
        + var(det_i.jitter_fwhm_ps)
        + var(spread.dispersion_fwhm_signal_ps)
        + var(spread.dispersion_fwhm_idler_ps))
    .sqrt();
    let uncorrelated_sigma = (pair_sigma.powi(2) + 2.0 * var(spread.pulse_fwhm_ps)).sqrt();

    let w = windows.width_ps;
    let period = source.period_ps_f64();
    let t = w * 1e-12;
    let pair = source.mu * det_s.efficiency * det_i.efficiency;
    let clicks_s = (source.mu + source.mu_noise_signal) * det_s.efficiency;
    let clicks_i = (source.mu + source.mu_noise_idler) * det_i.efficiency;
    let dark_s = det_s.dark_rate_hz * t;
    let dark_i = det_i.dark_rate_hz * t;
    let dark_terms =
        clicks_s * dark_i + clicks_i * dark_s + det_s.dark_rate_hz * det_i.dark_rate_hz * t / source.rep_rate_hz;

    let counts_at = |offset: f64| {
        pair * capture(pair_sigma, offset, w)
            + clicks_s * clicks_i * periodic_capture(uncorrelated_sigma, offset, w, period)
            + dark_terms
    };
    let peak = counts_at(0.0);
    let offsets = windows.slot_offsets();
    let accidental = offsets.iter().map(|&o| counts_at(o)).sum::<f64>() / offsets.len() as f64;
    Ok(WindowedPrediction {
        peak_per_pulse: peak,
        accidental_per_pulse: accidental,
        car: (accidental > 0.0).then(|| peak / accidental),
    })
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// P(offset - w/2 <= X < offset + w/2) for X ~ N(0, sigma^2).
fn capture(sigma: f64, offset: f64, width: f64) -> f64 {
    let (lo, hi) = (offset - width / 2.0, offset + width / 2.0);
    if sigma == 0.0 {
        return if lo <= 0.0 && 0.0 < hi { 1.0 } else { 0.0 };
    }
    std_normal_cdf(hi / sigma) - std_normal_cdf(lo / sigma)
}

fn periodic_capture(sigma: f64, offset: f64, width: f64, period: f64) -> f64 {
    let reach = ((offset.abs() + width + 12.0 * sigma) / period).ceil() as i64 + 1;
    (-reach..=reach)
        .map(|m| capture(sigma, offset - m as f64 * period, width))
        .sum()
}

fn non_negative(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite and >= 0, got {v}")))
    }
}

fn probability(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::param(name, format!("must lie in [0, 1], got {v}")))
    }
}
