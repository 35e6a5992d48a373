//! Scenario definition: weather, field faults, flow schedule, plant model and
//! controller of one closed-loop simulation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;

use super::config::Config;
use super::profile::{Profile, SyntheticDay};
use super::rng::{fnv1a, substream};
use crate::ann::AnnModel;
use crate::auction::{AuctionConfig, DefocusModel, FlowUnit};
use crate::defocus::DefocusLimits;
use crate::error::{Error, Result};
use crate::models::{static_outlet, LoopParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantKind {
    Static,
    Lumped,
    Distributed,
}

impl PlantKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "static" => Some(Self::Static),
            "lumped" => Some(Self::Lumped),
            "distributed" => Some(Self::Distributed),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Static => "static",
            Self::Lumped => "lumped",
            Self::Distributed => "distributed",
        }
    }
}

#[derive(Debug, Clone)]
pub enum ControllerKind {
    /// Valves stay fully open: equal split.
    None,
    Auction,
    Ann { model: Arc<AnnModel>, path: Option<PathBuf> },
}

impl ControllerKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Auction => "auction",
            Self::Ann { .. } => "ann",
        }
    }
}

/// Total sector flow over the day.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowSchedule {
    /// m³/s.
    Constant(f64),
    /// `(time s, flow m³/s)` breakpoints, interpolated linearly.
    Table(Vec<(f64, f64)>),
    /// Flow that would bring a loop with the field-mean faults to
    /// `t_target` in steady state, clamped per loop to `[q_min, q_max]`.
    Feedforward { t_target: f64, q_min: f64, q_max: f64 },
}

impl fmt::Display for FlowSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(q) => write!(f, "constant {q}"),
            Self::Table(t) => {
                write!(f, "table")?;
                for (t, q) in t {
                    write!(f, " {t}:{q}")?;
                }
                Ok(())
            }
            Self::Feedforward { t_target, q_min, q_max } => {
                write!(f, "feedforward {t_target} [{q_min}, {q_max}]")
            }
        }
    }
}

/// Ranges faults are drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultRanges {
    pub kopt: (f64, f64),
    pub hl: (f64, f64),
}

impl Default for FaultRanges {
    fn default() -> Self {
        Self {
            kopt: (0.85, 1.0),
            hl: (0.0, 1.0),
        }
    }
}

/// Per-loop `(alpha_kopt, alpha_hl)` drawn from the `faults` substream.
pub fn sample_faults(seed: u64, n: usize, ranges: &FaultRanges) -> Vec<(f64, f64)> {
    let mut rng = substream(seed, "faults");
    (0..n)
        .map(|_| {
            let k = rng.gen_range(ranges.kopt.0..=ranges.kopt.1);
            let h = rng.gen_range(ranges.hl.0..=ranges.hl.1);
            (k, h)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub profile: Profile,
    pub latitude: f64,
    pub day_of_year: u32,
    pub flow: FlowSchedule,
    pub loops: Vec<LoopParams>,
    pub controller: ControllerKind,
    pub plant: PlantKind,
    /// Includes the sample times `t_s1` and `t_s2`.
    pub auction: AuctionConfig,
    pub predictor: DefocusModel,
    pub defocus: DefocusLimits,
    pub t_in: f64,
    /// Irradiance above which a tick counts towards the daily means, W/m².
    pub daylight_dni: f64,
    pub seed: u64,
    pub run_id: u32,
    pub record_dataset: bool,
}

impl Scenario {
    /// Ten nominal loops on a sunny synthetic day, no allocation.
    pub fn new(profile: Profile) -> Self {
        Self {
            name: "scenario".into(),
            profile,
            latitude: 33.0,
            day_of_year: 172,
            flow: FlowSchedule::Feedforward {
                t_target: 390.0,
                q_min: 1e-3,
                q_max: 0.02,
            },
            loops: vec![LoopParams::default(); 10],
            controller: ControllerKind::None,
            plant: PlantKind::Static,
            auction: AuctionConfig::default(),
            predictor: DefocusModel::Continuous,
            defocus: DefocusLimits::default(),
            t_in: 293.0,
            daylight_dni: 10.0,
            seed: 0,
            run_id: 0,
            record_dataset: false,
        }
    }

    pub fn with_faults(mut self, faults: &[(f64, f64)]) -> Self {
        self.loops = faults
            .iter()
            .map(|&(k, h)| LoopParams::default().with_faults(k, h))
            .collect();
        self
    }

    pub fn t_s1(&self) -> f64 {
        self.auction.t_s1
    }

    pub fn t_s2(&self) -> f64 {
        self.auction.t_s2
    }

    pub fn validate(&self) -> Result<()> {
        self.auction.validate()?;
        self.defocus.validate()?;
        if self.loops.is_empty() {
            return Err(Error::Config("scenario has no loops".into()));
        }
        for p in &self.loops {
            p.validate()?;
        }
        if !(-90.0..=90.0).contains(&self.latitude) || !(1..=366).contains(&self.day_of_year) {
            return Err(Error::Config("latitude or day of year out of range".into()));
        }
        if self.profile.duration() < self.t_s1() {
            return Err(Error::Config("profile shorter than one flow sample".into()));
        }
        match &self.flow {
            FlowSchedule::Constant(q) if !(*q > 0.0) => {
                return Err(Error::Config(format!("constant flow must be positive, got {q}")));
            }
            FlowSchedule::Table(t) => {
                if t.is_empty() || t.iter().any(|&(_, q)| !(q > 0.0)) {
                    return Err(Error::Config("flow table needs positive flows".into()));
                }
                if !t.windows(2).all(|w| w[0].0 < w[1].0) {
                    return Err(Error::Config("flow table times must increase".into()));
                }
            }
            FlowSchedule::Feedforward { t_target, q_min, q_max }
                if !(*q_min > 0.0 && q_min < q_max && *t_target > self.t_in) => {
                    return Err(Error::Config("feedforward needs 0 < q_min < q_max and t_target > t_in".into()));
                }
            _ => {}
        }
        match &self.controller {
            ControllerKind::Auction if self.plant == PlantKind::Distributed => {
                return Err(Error::Config(
                    "the auction controller predicts with the static model; run it on a static or lumped plant".into(),
                ));
            }
            ControllerKind::Ann { model, .. } => {
                let n = self.loops.len();
                if model.net.n_inputs() != 3 * n + 5 || model.net.n_outputs() != n {
                    return Err(Error::Config(format!(
                        "network with {} inputs and {} outputs cannot drive {n} loops",
                        model.net.n_inputs(),
                        model.net.n_outputs()
                    )));
                }
            }
            _ => {}
        }
        if self.record_dataset && matches!(self.controller, ControllerKind::None) {
            log::warn!("recording a dataset without a controller; every target is fully open");
        }
        Ok(())
    }

    /// Collecting area the plant model actually illuminates, relative to the
    /// nominal aperture area.
    pub fn area_ratio(&self) -> f64 {
        match self.plant {
            PlantKind::Distributed => {
                let p = &self.loops[0];
                let active = p.collector_layout().active_segments() as f64;
                active * p.segment_length * p.collector_aperture / p.aperture_area
            }
            _ => 1.0,
        }
    }

    /// Loop with the field-mean faults.
    pub fn nominal_loop(&self) -> LoopParams {
        let n = self.loops.len() as f64;
        let k = self.loops.iter().map(|p| p.alpha_kopt).sum::<f64>() / n;
        let h = self.loops.iter().map(|p| p.alpha_hl).sum::<f64>() / n;
        self.loops[0].clone().with_faults(k, h)
    }

    /// Total sector flow at time `t`, m³/s.
    pub fn total_flow(&self, t: f64, t_a: f64, i_eff: f64) -> Result<f64> {
        let n = self.loops.len() as f64;
        Ok(match &self.flow {
            FlowSchedule::Constant(q) => *q,
            FlowSchedule::Table(tab) => {
                let k = tab.partition_point(|&(x, _)| x <= t);
                if k == 0 {
                    tab[0].1
                } else if k == tab.len() {
                    tab[k - 1].1
                } else {
                    let ((t0, q0), (t1, q1)) = (tab[k - 1], tab[k]);
                    q0 + (t - t0) / (t1 - t0) * (q1 - q0)
                }
            }
            FlowSchedule::Feedforward { t_target, q_min, q_max } => {
                n * feedforward_loop_flow(
                    &self.nominal_loop(),
                    self.t_in,
                    t_a,
                    i_eff * self.area_ratio(),
                    *t_target,
                    (*q_min, *q_max),
                )?
            }
        })
    }

    /// Hash of everything that determines the plant trajectory apart from
    /// the controller. Runs are comparable when it matches.
    pub fn inputs_fingerprint(&self) -> u64 {
        let mut s = String::new();
        for x in self.profile.samples() {
            s.push_str(&format!("{:?},{:?},{:?},{:?};", x.time, x.dni, x.t_a, x.n_o));
        }
        for p in &self.loops {
            s.push_str(&format!("{:?};", p));
        }
        s.push_str(&format!(
            "{:?}|{}|{}|{}|{:?}|{:?}|{:?}|{:?}|{:?}",
            self.latitude,
            self.day_of_year,
            self.flow,
            self.plant.name(),
            self.defocus,
            self.t_in,
            self.daylight_dni,
            self.auction.t_s1,
            self.auction.t_s2
        ));
        fnv1a(s.as_bytes())
    }

    /// Build a scenario from configuration keys (see the `configs/`
    /// directory for the full list).
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let profile = match cfg.get_path("profile")? {
            Some(path) => Profile::load(&path)?,
            None => synthetic_from_config(cfg)?.generate()?,
        };
        let mut s = Scenario::new(profile);
        s.name = cfg.get("name", s.name.clone())?;
        s.seed = cfg.get("seed", 0u64)?;
        s.run_id = cfg.get("run_id", 0u32)?;
        s.latitude = cfg.get("latitude", s.latitude)?;
        s.day_of_year = cfg.get("day_of_year", s.day_of_year)?;
        s.t_in = cfg.get("t_in", s.t_in)?;
        s.daylight_dni = cfg.get("daylight_dni", s.daylight_dni)?;
        s.record_dataset = cfg.get("record_dataset", false)?;

        let plant: String = cfg.get("plant", "static".to_string())?;
        s.plant = PlantKind::parse(&plant).ok_or_else(|| Error::Config(format!("unknown plant {plant:?}")))?;

        let n_loops: usize = cfg.get("n_loops", 10)?;
        let explicit_k = cfg.get_list::<f64>("alpha_kopt")?;
        let explicit_h = cfg.get_list::<f64>("alpha_hl")?;
        let mode: String = cfg.get("faults", "sample".to_string())?;
        let ranges = FaultRanges {
            kopt: (cfg.get("faults.kopt_min", 0.85)?, cfg.get("faults.kopt_max", 1.0)?),
            hl: (cfg.get("faults.hl_min", 0.0)?, cfg.get("faults.hl_max", 1.0)?),
        };
        let faults: Vec<(f64, f64)> = match mode.as_str() {
            "none" => vec![(1.0, 1.0); n_loops],
            "sample" => {
                if !(ranges.kopt.0 <= ranges.kopt.1 && ranges.hl.0 <= ranges.hl.1) {
                    return Err(Error::Config("fault ranges must be ordered".into()));
                }
                sample_faults(s.seed, n_loops, &ranges)
            }
            "list" => {
                let k = explicit_k.ok_or_else(|| Error::Config("faults = list needs alpha_kopt".into()))?;
                let h = explicit_h.unwrap_or_else(|| vec![1.0; k.len()]);
                if k.len() != n_loops || h.len() != n_loops {
                    return Err(Error::Config(format!("fault lists must have {n_loops} entries")));
                }
                k.into_iter().zip(h).collect()
            }
            other => return Err(Error::Config(format!("unknown fault mode {other:?}"))),
        };
        s = s.with_faults(&faults);

        let flow: String = cfg.get("flow", "feedforward".to_string())?;
        s.flow = match flow.as_str() {
            "constant" => FlowSchedule::Constant(cfg.require("flow.value")?),
            "table" => {
                let pairs: Vec<String> = cfg
                    .get_list("flow.table")?
                    .ok_or_else(|| Error::Config("flow = table needs flow.table".into()))?;
                let parsed = pairs
                    .iter()
                    .map(|p| {
                        let (t, q) = p.split_once(':')?;
                        Some((t.trim().parse().ok()?, q.trim().parse().ok()?))
                    })
                    .collect::<Option<Vec<(f64, f64)>>>()
                    .ok_or_else(|| Error::Config("flow.table entries are `time:flow`".into()))?;
                FlowSchedule::Table(parsed)
            }
            "feedforward" => FlowSchedule::Feedforward {
                t_target: cfg.get("flow.target", 390.0)?,
                q_min: cfg.get("flow.q_min", 1e-3)?,
                q_max: cfg.get("flow.q_max", 0.02)?,
            },
            other => return Err(Error::Config(format!("unknown flow schedule {other:?}"))),
        };

        let a = &mut s.auction;
        a.t_s1 = cfg.get("t_s1", a.t_s1)?;
        a.t_s2 = cfg.get("t_s2", a.t_s2)?;
        a.n_it = cfg.get("auction.n_it", a.n_it)?;
        a.n_it_v = cfg.get("auction.n_it_v", a.n_it_v)?;
        a.delta_q = cfg.get("auction.delta_q", a.delta_q)?;
        a.gain = cfg.get("auction.gain", a.gain)?;
        a.valve_gain = cfg.get("auction.valve_gain", a.valve_gain)?;
        a.q_floor = cfg.get("auction.q_floor", a.q_floor)?;
        if let Some(u) = cfg.get_opt::<String>("auction.flow_unit")? {
            a.flow_unit = FlowUnit::parse(&u).ok_or_else(|| Error::Config(format!("unknown flow unit {u:?}")))?;
        }
        let start: String = cfg.get("auction.inversion_start", "open".to_string())?;
        a.warm_inversion = match start.as_str() {
            "open" => false,
            "current" => true,
            other => return Err(Error::Config(format!("unknown inversion start {other:?}"))),
        };
        let predictor: String = cfg.get("auction.predictor", "continuous".to_string())?;
        s.predictor = match predictor.as_str() {
            "continuous" => DefocusModel::Continuous,
            "grid" => DefocusModel::Grid,
            other => return Err(Error::Config(format!("unknown predictor {other:?}"))),
        };

        let d = &mut s.defocus;
        d.gain = cfg.get("defocus.gain", d.gain)?;
        d.deadband = cfg.get("defocus.deadband", d.deadband)?;
        d.lead = cfg.get("defocus.lead", d.lead)?;
        d.lumped_t_max = cfg.get("defocus.lumped_t_max", d.lumped_t_max)?;
        if let Some(limits) = cfg.get_list("defocus.collector_t_max")? {
            d.collector_t_max = limits;
        }

        let controller: String = cfg.get("controller", "none".to_string())?;
        s.controller = match controller.as_str() {
            "none" => ControllerKind::None,
            "auction" => ControllerKind::Auction,
            "ann" => {
                let path = cfg
                    .get_path("ann_model")?
                    .ok_or_else(|| Error::Config("controller = ann needs ann_model".into()))?;
                ControllerKind::Ann {
                    model: Arc::new(AnnModel::load(&path)?),
                    path: Some(path),
                }
            }
            other => return Err(Error::Config(format!("unknown controller {other:?}"))),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Config::load(path)?;
        let s = Self::from_config(&cfg)?;
        cfg.finish()?;
        Ok(s)
    }
}

/// Synthetic day described by `synthetic.*` keys.
pub fn synthetic_from_config(cfg: &Config) -> Result<SyntheticDay> {
    let kind: String = cfg.get("synthetic.kind", "sunny".to_string())?;
    let peak = cfg.get("synthetic.peak_dni", 950.0)?;
    let mut day = match kind.as_str() {
        "sunny" => SyntheticDay::sunny(peak),
        "partly_cloudy" => SyntheticDay::partly_cloudy(
            peak,
            cfg.get("synthetic.clouds", 4usize)?,
            cfg.get("synthetic.cloud_depth", 0.6)?,
        ),
        "cloudy" => SyntheticDay::cloudy(peak),
        other => return Err(Error::Config(format!("unknown synthetic day {other:?}"))),
    };
    day.sunrise_hour = cfg.get("synthetic.sunrise_hour", day.sunrise_hour)?;
    day.sunset_hour = cfg.get("synthetic.sunset_hour", day.sunset_hour)?;
    day.t_a_min = cfg.get("synthetic.t_a_min", day.t_a_min)?;
    day.t_a_max = cfg.get("synthetic.t_a_max", day.t_a_max)?;
    day.step = cfg.get("synthetic.step", day.step)?;
    Ok(day)
}

/// Per-loop flow bringing the static outlet of `nominal` to `t_target`,
/// clamped to `bounds`. The static outlet falls with the flow, so the flow
/// is found by bisection.
pub fn feedforward_loop_flow(
    nominal: &LoopParams,
    t_in: f64,
    t_a: f64,
    i_eff: f64,
    t_target: f64,
    bounds: (f64, f64),
) -> Result<f64> {
    let (q_min, q_max) = bounds;
    let outlet = |q: f64| static_outlet(nominal, t_in, t_a, i_eff, q);
    if outlet(q_min)? <= t_target {
        return Ok(q_min);
    }
    if outlet(q_max)? >= t_target {
        return Ok(q_max);
    }
    let (mut lo, mut hi) = (q_min, q_max);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if outlet(mid)? > t_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-9 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
