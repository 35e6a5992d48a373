//! Run metrics, report text, trace export and run comparison.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Share of sunny, partly cloudy and cloudy days used for the weighted mean.
pub const CLASS_WEIGHTS: [f64; 3] = [0.575, 0.4228, 0.0022];

pub fn weighted_mean(sunny: f64, partly_cloudy: f64, cloudy: f64) -> f64 {
    let [a, b, c] = CLASS_WEIGHTS;
    a * sunny + b * partly_cloudy + c * cloudy
}

/// Plant and actuator state at the start of one flow sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub time: f64,
    pub q_total: f64,
    pub dni: f64,
    pub t_a: f64,
    pub n_o: f64,
    pub t_out: Vec<f64>,
    pub q: Vec<f64>,
    pub valves: Vec<f64>,
    pub intercept: Vec<f64>,
    /// W.
    pub power: Vec<f64>,
}

impl TickRecord {
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }

    pub fn mean_intercept(&self) -> f64 {
        self.intercept.iter().sum::<f64>() / self.intercept.len() as f64
    }

    /// Population standard deviation of the loop outlet temperatures.
    pub fn temperature_spread(&self) -> f64 {
        let n = self.t_out.len() as f64;
        let mean = self.t_out.iter().sum::<f64>() / n;
        (self.t_out.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub time: f64,
    pub message: String,
}

/// Wall time spent in the controller, s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControllerTiming {
    pub calls: usize,
    pub total: f64,
    pub max: f64,
}

impl ControllerTiming {
    pub fn record(&mut self, seconds: f64) {
        self.calls += 1;
        self.total += seconds;
        self.max = self.max.max(seconds);
    }

    pub fn mean(&self) -> Option<f64> {
        (self.calls > 0).then(|| self.total / self.calls as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub scenario: String,
    pub fingerprint: u64,
    pub seed: u64,
    pub plant: &'static str,
    pub controller: &'static str,
    pub mean_power_mw: f64,
    /// Percent.
    pub mean_intercept: f64,
    /// Daily mean of the loop temperature spread, °C.
    pub mean_temp_spread: f64,
    pub daylight_dni: f64,
    /// Ticks inside the daylight window.
    pub window_ticks: usize,
    pub flow_splits: usize,
    pub controller_calls: usize,
    pub timing: ControllerTiming,
    pub failure: Option<Failure>,
    pub traces: Vec<TickRecord>,
}

impl RunMetrics {
    /// Fill the means from the traces. Ticks with DNI above `daylight_dni`
    /// are averaged; a day without any such tick averages all of them.
    pub fn summarise(&mut self) {
        let lit: Vec<&TickRecord> = self.traces.iter().filter(|r| r.dni > self.daylight_dni).collect();
        self.window_ticks = lit.len();
        let window: Vec<&TickRecord> = if lit.is_empty() { self.traces.iter().collect() } else { lit };
        let n = window.len().max(1) as f64;
        self.mean_power_mw = window.iter().map(|r| r.total_power()).sum::<f64>() / n / 1e6;
        self.mean_intercept = 100.0 * window.iter().map(|r| r.mean_intercept()).sum::<f64>() / n;
        self.mean_temp_spread = window.iter().map(|r| r.temperature_spread()).sum::<f64>() / n;
    }

    /// Equality of everything except wall-clock timing.
    pub fn same_results(&self, other: &RunMetrics) -> bool {
        let strip = |m: &RunMetrics| RunMetrics {
            timing: ControllerTiming::default(),
            ..m.clone()
        };
        strip(self) == strip(other)
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}: {v}").unwrap();
        kv("scenario", self.scenario.clone());
        kv("scenario_hash", format!("{:016x}", self.fingerprint));
        kv("seed", self.seed.to_string());
        kv("plant", self.plant.into());
        kv("controller", self.controller.into());
        kv("mean_thermal_power_mw", format!("{:.2}", self.mean_power_mw));
        kv("mean_intercept_factor_pct", format!("{:.2}", self.mean_intercept));
        kv("mean_temperature_spread_c", format!("{:.3}", self.mean_temp_spread));
        kv("daylight_threshold_wm2", format!("{}", self.daylight_dni));
        kv("window_ticks", self.window_ticks.to_string());
        kv("flow_splits", self.flow_splits.to_string());
        kv("controller_calls", self.controller_calls.to_string());
        kv(
            "controller_mean_s",
            self.timing.mean().map_or("n/a".into(), |m| format!("{m:.3e}")),
        );
        kv("controller_max_s", format!("{:.3e}", self.timing.max));
        match &self.failure {
            None => kv("status", "ok".into()),
            Some(f) => {
                kv("status", "diverged".into());
                kv("failure_time_s", format!("{}", f.time));
                kv("failure", f.message.clone());
            }
        }
        s
    }

    /// One row per flow sample with every per-loop quantity.
    pub fn write_traces_csv(&self, path: &Path) -> Result<()> {
        let n = self.traces.first().map_or(0, |r| r.t_out.len());
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        let mut header: Vec<String> = ["time_s", "q_total", "dni", "t_a", "n_o", "power_total", "t_spread"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for name in ["t_out", "q", "v", "if", "p_th"] {
            header.extend((1..=n).map(|i| format!("{name}_{i}")));
        }
        w.write_record(&header).map_err(|e| Error::io(path, e.into()))?;
        for r in &self.traces {
            let mut row: Vec<String> = [r.time, r.q_total, r.dni, r.t_a, r.n_o, r.total_power(), r.temperature_spread()]
                .iter()
                .map(|v| v.to_string())
                .collect();
            for col in [&r.t_out, &r.q, &r.valves, &r.intercept, &r.power] {
                row.extend(col.iter().map(|v| v.to_string()));
            }
            w.write_record(&row).map_err(|e| Error::io(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub baseline: String,
    pub candidate: String,
    pub d_power_mw: f64,
    pub d_power_pct: f64,
    /// Percentage points.
    pub d_intercept: f64,
    pub spread_ratio: f64,
    pub time_ratio: Option<f64>,
}

impl Comparison {
    pub fn report(&self) -> String {
        let mut s = String::new();
        writeln!(s, "baseline: {}", self.baseline).unwrap();
        writeln!(s, "candidate: {}", self.candidate).unwrap();
        writeln!(s, "delta_power_mw: {:.2}", self.d_power_mw).unwrap();
        writeln!(s, "delta_power_pct: {:.2}", self.d_power_pct).unwrap();
        writeln!(s, "delta_intercept_factor_pct: {:.2}", self.d_intercept).unwrap();
        writeln!(s, "temperature_spread_ratio: {:.3}", self.spread_ratio).unwrap();
        match self.time_ratio {
            Some(r) => writeln!(s, "controller_time_ratio: {r:.3e}").unwrap(),
            None => writeln!(s, "controller_time_ratio: n/a").unwrap(),
        }
        s
    }
}

pub fn compare_runs(baseline: &RunMetrics, candidate: &RunMetrics) -> Result<Comparison> {
    if baseline.fingerprint != candidate.fingerprint {
        return Err(Error::Comparison(format!(
            "scenario hashes differ ({:016x} vs {:016x})",
            baseline.fingerprint, candidate.fingerprint
        )));
    }
    let ratio = |a: f64, b: f64| if b == 0.0 && a == 0.0 { 1.0 } else { a / b };
    Ok(Comparison {
        baseline: baseline.controller.into(),
        candidate: candidate.controller.into(),
        d_power_mw: candidate.mean_power_mw - baseline.mean_power_mw,
        d_power_pct: 100.0 * ratio(candidate.mean_power_mw - baseline.mean_power_mw, baseline.mean_power_mw.abs()),
        d_intercept: candidate.mean_intercept - baseline.mean_intercept,
        spread_ratio: ratio(candidate.mean_temp_spread, baseline.mean_temp_spread),
        time_ratio: candidate.timing.mean().zip(baseline.timing.mean()).map(|(c, b)| c / b),
    })
}
