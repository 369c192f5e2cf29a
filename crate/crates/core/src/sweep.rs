//! Pump-power sweeps: analytic or Monte Carlo CAR and count rates versus power.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, CoincidenceWindow, DetectorParams, SourceParams};
use crate::rng::derive_seed;
use crate::simulator::{simulate_stream, Engine, PulseTrainConfig, RunConfig};
use crate::tia::{estimate_car, CarConfig, IntervalExtractor, TiaConfig};

/// Linear map from pump power to per-pulse photon means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerMap {
    /// Pairs per pulse per watt.
    pub mu_per_watt: f64,
    pub noise_signal_per_watt: f64,
    pub noise_idler_per_watt: f64,
}

impl Default for PowerMap {
    /// 0.12 pairs per pulse at 25 uW.
    fn default() -> Self {
        PowerMap {
            mu_per_watt: 4800.0,
            noise_signal_per_watt: 0.0,
            noise_idler_per_watt: 0.0,
        }
    }
}

impl PowerMap {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mu_per_watt", self.mu_per_watt),
            ("noise_signal_per_watt", self.noise_signal_per_watt),
            ("noise_idler_per_watt", self.noise_idler_per_watt),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Source at `power_w`, keeping rate and crosstalk from `base`.
    pub fn source_at(&self, power_w: f64, base: &SourceParams) -> Result<SourceParams> {
        let mu = mu_from_power(power_w, self)?;
        Ok(SourceParams {
            mu,
            mu_noise_signal: self.noise_signal_per_watt * power_w,
            mu_noise_idler: self.noise_idler_per_watt * power_w,
            ..*base
        })
    }
}

pub fn mu_from_power(power_w: f64, map: &PowerMap) -> Result<f64> {
    map.validate()?;
    if !(power_w.is_finite() && power_w >= 0.0) {
        return Err(Error::param(
            "power_w",
            format!("must be finite and >= 0, got {power_w}"),
        ));
    }
    Ok(map.mu_per_watt * power_w)
}

/// Efficiency that reproduces a measured singles rate.
pub fn fit_eta_from_singles(
    singles_rate_hz: f64,
    mu: f64,
    mu_noise: f64,
    dark_rate_hz: f64,
    rep_rate_hz: f64,
) -> Result<f64> {
    for (name, v) in [
        ("singles_rate_hz", singles_rate_hz),
        ("mu", mu),
        ("mu_noise", mu_noise),
        ("dark_rate_hz", dark_rate_hz),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::param(name, format!("must be finite and >= 0, got {v}")));
        }
    }
    if !(rep_rate_hz.is_finite() && rep_rate_hz > 0.0) {
        return Err(Error::param("rep_rate_hz", "must be finite and > 0"));
    }
    if mu + mu_noise <= 0.0 {
        return Err(Error::Domain("no photons per pulse to attribute the singles to".into()));
    }
    if singles_rate_hz < dark_rate_hz {
        return Err(Error::Domain(format!(
            "singles rate {singles_rate_hz} Hz is below the dark rate {dark_rate_hz} Hz"
        )));
    }
    Ok((singles_rate_hz - dark_rate_hz) / (rep_rate_hz * (mu + mu_noise)))
}

/// Expected singles rate `nu (mu + mu_noise) eta + d`.
pub fn singles_rate(source: &SourceParams, mu_noise: f64, det: &DetectorParams) -> f64 {
    source.rep_rate_hz * (source.mu + mu_noise) * det.efficiency + det.dark_rate_hz
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    #[default]
    Analytic,
    MonteCarlo,
}

impl SweepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepMode::Analytic => "analytic",
            SweepMode::MonteCarlo => "montecarlo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointFlag {
    /// No accidentals expected or observed.
    UndefinedCar,
    /// Accidental slots were empty; `car` is a lower bound.
    LowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepInput {
    pub power_w: f64,
    /// Use this pair mean instead of the power map's.
    #[serde(default)]
    pub mu_override: Option<f64>,
}

impl SweepInput {
    pub fn at(power_w: f64) -> Self {
        SweepInput {
            power_w,
            mu_override: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub power_w: f64,
    pub mu: f64,
    pub singles_signal_hz: f64,
    pub singles_idler_hz: f64,
    pub coincidence_hz: f64,
    pub car: Option<f64>,
    pub car_stderr: Option<f64>,
    pub mode: SweepMode,
    pub flag: Option<PointFlag>,
}

/// Everything a sweep holds fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSetup {
    /// Rate and crosstalk; the photon means are replaced per point.
    pub source: SourceParams,
    pub power_map: PowerMap,
    pub signal: DetectorParams,
    pub idler: DetectorParams,
    pub window: CoincidenceWindow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloSettings {
    /// Pulse budget per point.
    pub train: PulseTrainConfig,
    pub seed: u64,
    pub engine: Engine,
    pub tia: TiaConfig,
    pub car: CarConfig,
}

/// Geometric grid of `n` powers from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || n < 2 {
        return Err(Error::Config(format!("bad log grid [{lo}, {hi}] with {n} points")));
    }
    let step = (hi / lo).ln() / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|k| lo * (k as f64 * step).exp()).collect();
    v[n - 1] = hi;
    Ok(v)
}

pub fn run_sweep(
    grid: &[SweepInput],
    setup: &SweepSetup,
    mode: SweepMode,
    mc: Option<&MonteCarloSettings>,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("power grid"));
    }
    if grid.windows(2).any(|w| !(w[1].power_w > w[0].power_w)) {
        return Err(Error::Config("power grid must be strictly increasing".into()));
    }
    setup.power_map.validate()?;
    setup.signal.validate()?;
    setup.idler.validate()?;
    setup.window.validate()?;
    let sources = grid
        .iter()
        .map(|p| {
            let mut s = setup.power_map.source_at(p.power_w, &setup.source)?;
            if let Some(mu) = p.mu_override {
                s.mu = mu;
            }
            s.validate()?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;

    match mode {
        SweepMode::Analytic => grid
            .iter()
            .zip(&sources)
            .map(|(p, s)| analytic_point(p.power_w, s, setup))
            .collect(),
        SweepMode::MonteCarlo => {
            let mc = mc.ok_or_else(|| Error::Config("Monte Carlo sweep needs a pulse budget".into()))?;
            grid.par_iter()
                .zip(&sources)
                .enumerate()
                .map(|(k, (p, s))| mc_point(p.power_w, s, setup, mc, derive_seed(mc.seed, k as u64)))
                .collect()
        }
    }
}

fn analytic_point(power_w: f64, source: &SourceParams, setup: &SweepSetup) -> Result<SweepPoint> {
    let prediction = model::predict(source, &setup.signal, &setup.idler, &setup.window)?;
    Ok(SweepPoint {
        power_w,
        mu: source.mu,
        singles_signal_hz: singles_rate(source, source.mu_noise_signal, &setup.signal),
        singles_idler_hz: singles_rate(source, source.mu_noise_idler, &setup.idler),
        coincidence_hz: prediction.coincidence_rate,
        car: prediction.car,
        car_stderr: prediction.car.map(|_| 0.0),
        mode: SweepMode::Analytic,
        flag: prediction.car.is_none().then_some(PointFlag::UndefinedCar),
    })
}

fn mc_point(
    power_w: f64,
    source: &SourceParams,
    setup: &SweepSetup,
    mc: &MonteCarloSettings,
    seed: u64,
) -> Result<SweepPoint> {
    let run = RunConfig::new(seed).with_engine(mc.engine);
    let mut extractor = IntervalExtractor::new(mc.tia)?;
    let mut intervals = Vec::new();
    let diag = simulate_stream(source, &setup.signal, &setup.idler, &mc.train, &run, &mut |tag| {
        extractor.push(tag, &mut |r| intervals.push(r))
    })?;
    let seconds = mc.train.n_pulses as f64 / source.rep_rate_hz;
    let (car, car_stderr, coincidence_hz, flag) = match estimate_car(&intervals, &mc.car) {
        Ok(est) => {
            let excess = (est.peak_counts as f64 - est.accidental_mean).max(0.0);
            let flag = est.lower_bound.then_some(PointFlag::LowerBound);
            (Some(est.car), Some(est.stderr), excess / seconds, flag)
        }
        Err(Error::EmptyInput(_)) => (None, None, 0.0, Some(PointFlag::UndefinedCar)),
        Err(e) => return Err(e),
    };
    Ok(SweepPoint {
        power_w,
        mu: source.mu,
        singles_signal_hz: diag.tags_signal as f64 / seconds,
        singles_idler_hz: diag.tags_idler as f64 / seconds,
        coincidence_hz,
        car,
        car_stderr,
        mode: SweepMode::MonteCarlo,
        flag,
    })
}

pub const CSV_HEADER: &str = "power_w,mu,singles_signal_hz,singles_idler_hz,coincidence_hz,car,car_stderr,mode";

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_infinite() => "inf".to_string(),
        Some(x) => x.to_string(),
        None => String::new(),
    }
}

/// One row per point; undefined CAR values are left empty.
pub fn write_csv<W: Write>(points: &[SweepPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            p.power_w,
            p.mu,
            p.singles_signal_hz,
            p.singles_idler_hz,
            p.coincidence_hz,
            opt(p.car),
            opt(p.car_stderr),
            p.mode.as_str()
        )?;
    }
    Ok(())
}

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    points: Vec<(f64, f64)>,
    errors: Option<Vec<f64>>,
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 440.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 30.0, 50.0); // left, right, top, bottom

fn log_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite() && *v > 0.0)
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return None;
    }
    let (lo, hi) = (lo.log10().floor(), hi.log10().ceil());
    Some((lo, if hi > lo { hi } else { lo + 1.0 }))
}

/// Log-log scatter/line chart.
fn svg_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs = log_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0))).unwrap_or((0.0, 1.0));
    let ys = log_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))).unwrap_or((0.0, 1.0));
    let (ml, mr, mt, mb) = MARGIN;
    let pw = SVG_W - ml - mr;
    let ph = SVG_H - mt - mb;
    let px = |x: f64| ml + (x.log10() - xs.0) / (xs.1 - xs.0) * pw;
    let py = |y: f64| mt + ph - (y.log10() - ys.0) / (ys.1 - ys.0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle">{title}</text>"#,
        SVG_W / 2.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for d in xs.0 as i32..=xs.1 as i32 {
        let x = px(10f64.powi(d));
        let _ = writeln!(
            s,
            r##"<line x1="{x:.1}" y1="{mt}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">1e{d}</text>"##,
            mt + ph,
            mt + ph + 16.0
        );
    }
    for d in ys.0 as i32..=ys.1 as i32 {
        let y = py(10f64.powi(d));
        let _ = writeln!(
            s,
            r##"<line x1="{ml}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">1e{d}</text>"##,
            ml + pw,
            ml - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text>"#,
        ml + pw / 2.0,
        SVG_H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">{y_label}</text>"#,
        mt + ph / 2.0
    );
    for (k, ser) in series.iter().enumerate() {
        let pts: Vec<(usize, (f64, f64))> = ser
            .points
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, (x, y))| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
            .collect();
        if pts.len() > 1 {
            let path: Vec<String> = pts
                .iter()
                .map(|(_, (x, y))| format!("{:.1},{:.1}", px(*x), py(*y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}"/>"#,
                path.join(" "),
                ser.color
            );
        }
        for &(i, (x, y)) in &pts {
            if let Some(e) = ser.errors.as_ref().map(|e| e[i]).filter(|e| e.is_finite() && *e > 0.0) {
                let lo = (y - e).max(y * 1e-3);
                let _ = writeln!(
                    s,
                    r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="{3}"/>"#,
                    px(x),
                    py(lo),
                    py(y + e),
                    ser.color
                );
            }
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{}"/>"#,
                px(x),
                py(y),
                ser.color
            );
        }
        let ly = mt + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            ml + 14.0,
            ly - 4.0,
            ser.color,
            ml + 24.0,
            ly,
            ser.label
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Singles rates versus pump power.
pub fn singles_svg(points: &[SweepPoint]) -> String {
    let series = [
        Series {
            label: "signal",
            color: "#1f77b4",
            points: points.iter().map(|p| (p.power_w * 1e6, p.singles_signal_hz)).collect(),
            errors: None,
        },
        Series {
            label: "idler",
            color: "#d62728",
            points: points.iter().map(|p| (p.power_w * 1e6, p.singles_idler_hz)).collect(),
            errors: None,
        },
    ];
    svg_chart(
        "Single photon count rates",
        "pump power (uW)",
        "count rate (Hz)",
        &series,
    )
}

/// CAR versus pump power, with error bars for Monte Carlo points.
pub fn car_svg(points: &[SweepPoint]) -> String {
    let defined: Vec<&SweepPoint> = points.iter().filter(|p| p.car.is_some()).collect();
    let series = [Series {
        label: "CAR",
        color: "#2ca02c",
        points: defined
            .iter()
            .map(|p| (p.power_w * 1e6, p.car.unwrap_or(0.0)))
            .collect(),
        errors: Some(defined.iter().map(|p| p.car_stderr.unwrap_or(0.0)).collect()),
    }];
    svg_chart("Coincidence-to-accidental ratio", "pump power (uW)", "CAR", &series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PRESET_EFFICIENCY_IDLER, PRESET_EFFICIENCY_SIGNAL};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn preset_setup() -> SweepSetup {
        SweepSetup {
            source: SourceParams::preset(0.0),
            power_map: PowerMap::default(),
            signal: DetectorParams::preset_signal(),
            idler: DetectorParams::preset_idler(),
            window: CoincidenceWindow::default(),
        }
    }

    #[test]
    fn power_to_mu() {
        let map = PowerMap::default();
        assert_eq!(mu_from_power(0.0, &map).unwrap(), 0.0);
        assert!(rel(mu_from_power(25e-6, &map).unwrap(), 0.12) < 1e-12);
        assert!(rel(mu_from_power(0.02e-6, &map).unwrap(), 9.6e-5) < 1e-12);
        assert!(mu_from_power(-1.0, &map).is_err());
    }

    #[test]
    fn fitted_efficiencies() {
        let s = fit_eta_from_singles(1.1e6, 0.12, 0.0, 0.0, 1e10).unwrap();
        let i = fit_eta_from_singles(4.8e6, 0.12, 0.0, 0.0, 1e10).unwrap();
        assert!(rel(s, 9.1667e-4) < 1e-4);
        assert!(rel(i, 4.0e-3) < 1e-12);
        assert_eq!(fit_eta_from_singles(0.0, 0.12, 0.0, 0.0, 1e10).unwrap(), 0.0);
        assert!(matches!(
            fit_eta_from_singles(50.0, 0.12, 0.0, 100.0, 1e10),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            fit_eta_from_singles(50.0, 0.0, 0.0, 0.0, 1e10),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn preset_point_analytic() {
        let pts = run_sweep(&[SweepInput::at(25e-6)], &preset_setup(), SweepMode::Analytic, None).unwrap();
        assert!((pts[0].car.unwrap() - 9.3327748182).abs() < 1e-8);
        assert!(rel(pts[0].coincidence_hz, 4401.6) < 1e-12);
        assert!(rel(pts[0].singles_idler_hz, 4.8e6 + 100.0) < 1e-12);
    }

    #[test]
    fn mu_override_point() {
        let grid = [
            SweepInput {
                power_w: 0.02e-6,
                mu_override: Some(2e-4),
            },
            SweepInput::at(25e-6),
        ];
        let pts = run_sweep(&grid, &preset_setup(), SweepMode::Analytic, None).unwrap();
        assert_eq!(pts[0].mu, 2e-4);
        assert!(rel(pts[0].car.unwrap(), 4806.56334356) < 1e-9);
    }

    #[test]
    fn grid_validation() {
        let setup = preset_setup();
        assert!(run_sweep(&[], &setup, SweepMode::Analytic, None).is_err());
        let dup = [SweepInput::at(1e-6), SweepInput::at(1e-6)];
        assert!(run_sweep(&dup, &setup, SweepMode::Analytic, None).is_err());
        let down = [SweepInput::at(2e-6), SweepInput::at(1e-6)];
        assert!(run_sweep(&down, &setup, SweepMode::Analytic, None).is_err());
        assert!(run_sweep(&[SweepInput::at(1e-6)], &setup, SweepMode::MonteCarlo, None).is_err());
    }

    #[test]
    fn unimodal_around_optimum() {
        let setup = preset_setup();
        let powers = log_grid(0.01e-6, 30e-6, 400).unwrap();
        let grid: Vec<SweepInput> = powers.iter().map(|&p| SweepInput::at(p)).collect();
        let pts = run_sweep(&grid, &setup, SweepMode::Analytic, None).unwrap();
        let mu_star = model::optimal_mu_for(&setup.source, &setup.signal, &setup.idler, &setup.window).unwrap();
        for w in pts.windows(2) {
            let (a, b) = (w[0].car.unwrap(), w[1].car.unwrap());
            if w[0].mu >= mu_star {
                assert!(b < a);
            }
            if w[1].mu <= mu_star {
                assert!(b > a);
            }
        }
    }

    #[test]
    fn argmax_matches_optimum() {
        // Grid wide enough to contain mu* ~ 3.1e-6 (0.65 nW).
        let setup = preset_setup();
        let powers = log_grid(1e-11, 30e-6, 1000).unwrap();
        let grid: Vec<SweepInput> = powers.iter().map(|&p| SweepInput::at(p)).collect();
        let pts = run_sweep(&grid, &setup, SweepMode::Analytic, None).unwrap();
        let best = pts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.car.unwrap().total_cmp(&b.1.car.unwrap()))
            .unwrap()
            .0;
        let mu_star = model::optimal_mu_for(&setup.source, &setup.signal, &setup.idler, &setup.window).unwrap();
        let p_star = mu_star / setup.power_map.mu_per_watt;
        let step = (powers[1] / powers[0]).ln();
        assert!((powers[best] / p_star).ln().abs() <= step);
    }

    #[test]
    fn zero_map_without_darks_is_flagged() {
        let setup = SweepSetup {
            power_map: PowerMap {
                mu_per_watt: 0.0,
                ..PowerMap::default()
            },
            signal: DetectorParams {
                dark_rate_hz: 0.0,
                ..DetectorParams::preset_signal()
            },
            idler: DetectorParams {
                dark_rate_hz: 0.0,
                ..DetectorParams::preset_idler()
            },
            ..preset_setup()
        };
        let grid = [SweepInput::at(1e-6), SweepInput::at(2e-6)];
        let pts = run_sweep(&grid, &setup, SweepMode::Analytic, None).unwrap();
        for p in pts {
            assert_eq!(p.car, None);
            assert_eq!(p.flag, Some(PointFlag::UndefinedCar));
        }
    }

    #[test]
    fn singles_linear_and_ratio() {
        let setup = SweepSetup {
            signal: DetectorParams {
                dark_rate_hz: 0.0,
                ..DetectorParams::preset_signal()
            },
            idler: DetectorParams {
                dark_rate_hz: 0.0,
                ..DetectorParams::preset_idler()
            },
            ..preset_setup()
        };
        let grid = [SweepInput::at(1e-6), SweepInput::at(2e-6), SweepInput::at(4e-6)];
        let pts = run_sweep(&grid, &setup, SweepMode::Analytic, None).unwrap();
        for w in pts.windows(2) {
            assert!((w[1].singles_signal_hz / w[0].singles_signal_hz - 2.0).abs() < 1e-12);
            assert!((w[1].singles_idler_hz / w[0].singles_idler_hz - 2.0).abs() < 1e-12);
        }
        for p in &pts {
            let ratio = p.singles_idler_hz / p.singles_signal_hz;
            assert!(rel(ratio, PRESET_EFFICIENCY_IDLER / PRESET_EFFICIENCY_SIGNAL) < 1e-12);
        }
    }

    #[test]
    fn monte_carlo_points_match_analytic() {
        let setup = SweepSetup {
            source: SourceParams {
                rep_rate_hz: 1e9,
                ..SourceParams::preset(0.0)
            },
            signal: DetectorParams {
                efficiency: 0.05,
                dead_time_ps: 0,
                ..DetectorParams::preset_signal()
            },
            idler: DetectorParams {
                efficiency: 0.1,
                dead_time_ps: 0,
                ..DetectorParams::preset_idler()
            },
            window: CoincidenceWindow::new(1000).unwrap(),
            ..preset_setup()
        };
        let mc = MonteCarloSettings {
            train: PulseTrainConfig {
                n_pulses: 2_000_000,
                pulse_fwhm_ps: 0.0,
                ..PulseTrainConfig::preset(1)
            },
            seed: 3,
            engine: Engine::Direct,
            tia: TiaConfig {
                start_dead_time_ps: 0,
                ..TiaConfig::default()
            },
            car: CarConfig {
                window_ps: 1000,
                slot_spacing_ps: 1000,
                peak_search_ps: Some((0, 0)),
                ..CarConfig::default()
            },
        };
        let grid = [SweepInput::at(2e-6), SweepInput::at(20e-6)];
        let mc_pts = run_sweep(&grid, &setup, SweepMode::MonteCarlo, Some(&mc)).unwrap();
        let an_pts = run_sweep(&grid, &setup, SweepMode::Analytic, None).unwrap();
        for (m, a) in mc_pts.iter().zip(&an_pts) {
            let seconds = 2e-3;
            let sigma_s = (a.singles_signal_hz / seconds).sqrt();
            assert!(
                (m.singles_signal_hz - a.singles_signal_hz).abs() < 4.0 * sigma_s,
                "{m:?} {a:?}"
            );
            let (car, se) = (m.car.unwrap(), m.car_stderr.unwrap());
            assert!((car - a.car.unwrap()).abs() < 3.0 * se, "{m:?} {a:?}");
        }
        let again = run_sweep(&grid, &setup, SweepMode::MonteCarlo, Some(&mc)).unwrap();
        assert_eq!(mc_pts, again);
    }

    #[test]
    fn csv_layout() {
        let pts = run_sweep(&[SweepInput::at(25e-6)], &preset_setup(), SweepMode::Analytic, None).unwrap();
        let mut buf = Vec::new();
        write_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 8);
        assert_eq!(row[7], "analytic");
        assert_eq!(row[0].parse::<f64>().unwrap(), 25e-6);
    }

    #[test]
    fn svg_outputs() {
        let grid: Vec<SweepInput> = log_grid(0.01e-6, 30e-6, 12)
            .unwrap()
            .into_iter()
            .map(SweepInput::at)
            .collect();
        let pts = run_sweep(&grid, &preset_setup(), SweepMode::Analytic, None).unwrap();
        // One marker per point plus one legend marker per series.
        for (svg, circles) in [(singles_svg(&pts), 2 * 12 + 2), (car_svg(&pts), 12 + 1)] {
            assert!(svg.starts_with("<svg"));
            assert!(svg.trim_end().ends_with("</svg>"));
            assert_eq!(svg.matches("<circle").count(), circles);
        }
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-8, 1e-5, 4).unwrap();
        assert_eq!(g[0], 1e-8);
        assert_eq!(g[3], 1e-5);
        assert!(rel(g[1], 1e-7) < 1e-12);
        assert!(log_grid(0.0, 1.0, 3).is_err());
    }
}
