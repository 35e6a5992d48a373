//! Closed-loop day simulation with two sample times: the sector flow is split
//! by valve aperture every `t_s1`, the controller updates the apertures
//! every `t_s2`.

use std::time::Instant;

use super::metrics::{ControllerTiming, Failure, RunMetrics, TickRecord};
use super::scenario::{ControllerKind, PlantKind, Scenario};
use crate::ann::{ControllerState, Dataset, InferenceBuffers};
use crate::auction::{allocate, flows_from_valves, invert_valves, StaticPredictor, ValveSet};
use crate::defocus::{
    anticipated_outlets, collector_defocus_step, lumped_defocus, lumped_defocus_step, InterceptFactor,
};
use crate::error::Result;
use crate::models::{
    loop_capacity, thermal_power, DistributedInputs, DistributedLoop, DistributedState, LumpedState,
    DISTRIBUTED_DT,
};
use crate::physics::{volumetric_heat_capacity_clamped, SolarGeometry};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weather {
    pub dni: f64,
    pub t_a: f64,
    pub n_o: f64,
}

impl Weather {
    /// Irradiance on the aperture plane, W/m².
    pub fn i_eff(&self) -> f64 {
        self.dni * self.n_o
    }
}

pub fn weather_at(s: &Scenario, t: f64) -> Result<Weather> {
    let p = s.profile.at(t);
    let n_o = match p.n_o {
        Some(g) => g,
        None => {
            SolarGeometry::at(s.latitude, s.day_of_year, (t / 3600.0).rem_euclid(24.0))?.geometric_efficiency
        }
    };
    Ok(Weather {
        dni: p.dni,
        t_a: p.t_a,
        n_o,
    })
}

#[derive(Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    /// Controller samples, when the scenario asks for them.
    pub dataset: Option<Dataset>,
    /// Largest excess of any monitored temperature over its ceiling, °C.
    /// Outlets for the static and lumped plants, collector blocks for the
    /// distributed one.
    pub max_limit_excess: f64,
}

enum Plant {
    Static {
        t_out: Vec<f64>,
        intercept: Vec<f64>,
    },
    Lumped {
        states: Vec<LumpedState>,
        intercept: Vec<f64>,
    },
    Distributed {
        loops: Vec<DistributedLoop>,
        states: Vec<DistributedState>,
        intercept: Vec<Vec<InterceptFactor>>,
        block_outlets: Vec<Vec<usize>>,
        /// Block outlet temperatures after the previous step.
        previous: Vec<Vec<f64>>,
    },
}

impl Plant {
    fn new(s: &Scenario) -> Result<Self> {
        let n = s.loops.len();
        Ok(match s.plant {
            PlantKind::Static => Plant::Static {
                t_out: vec![s.t_in; n],
                intercept: vec![1.0; n],
            },
            PlantKind::Lumped => Plant::Lumped {
                states: vec![
                    LumpedState {
                        t_out: s.t_in,
                        t_in: s.t_in,
                        q: 0.0,
                    };
                    n
                ],
                intercept: vec![1.0; n],
            },
            PlantKind::Distributed => {
                let loops = s
                    .loops
                    .iter()
                    .map(|p| DistributedLoop::new(p.clone()))
                    .collect::<Result<Vec<_>>>()?;
                let states = s.loops.iter().map(|p| DistributedState::uniform(p, s.t_in, 0.0)).collect();
                let intercept = s.loops.iter().map(|p| vec![InterceptFactor::default(); p.n_collectors]).collect();
                let block_outlets: Vec<Vec<usize>> = loops.iter().map(|l| l.layout.block_outlets()).collect();
                let previous = block_outlets.iter().map(|b| vec![s.t_in; b.len()]).collect();
                Plant::Distributed {
                    loops,
                    states,
                    intercept,
                    block_outlets,
                    previous,
                }
            }
        })
    }

    fn outlets(&self) -> Vec<f64> {
        match self {
            Plant::Static { t_out, .. } => t_out.clone(),
            Plant::Lumped { states, .. } => states.iter().map(|s| s.t_out).collect(),
            Plant::Distributed { states, .. } => states.iter().map(|s| s.outlet()).collect(),
        }
    }

    /// Per-loop intercept factor as reported and fed to the controller:
    /// the collector mean of the filtered values for the distributed plant.
    fn intercepts(&self) -> Vec<f64> {
        match self {
            Plant::Static { intercept, .. } | Plant::Lumped { intercept, .. } => intercept.clone(),
            Plant::Distributed { intercept, .. } => intercept
                .iter()
                .map(|c| c.iter().map(|f| f.filtered_value).sum::<f64>() / c.len() as f64)
                .collect(),
        }
    }

    /// Advance over `[t, t + dt)` with loop flows `q`. Returns the largest
    /// excess over the temperature ceilings seen during the interval.
    fn advance(&mut self, s: &Scenario, t: f64, dt: f64, q: &[f64]) -> Result<f64> {
        let t_max = s.defocus.lumped_t_max;
        let mut excess = f64::NEG_INFINITY;
        match self {
            Plant::Static { t_out, intercept } => {
                let w = weather_at(s, t)?;
                for (i, p) in s.loops.iter().enumerate() {
                    let d = lumped_defocus(p, s.t_in, w.t_a, w.i_eff(), q[i], t_max)?;
                    t_out[i] = d.t_out;
                    intercept[i] = d.intercept;
                    excess = excess.max(d.t_out - t_max);
                }
            }
            Plant::Lumped { states, intercept } => {
                let w = weather_at(s, t)?;
                for (i, p) in s.loops.iter().enumerate() {
                    let st = &mut states[i];
                    st.q = q[i];
                    st.t_in = s.t_in;
                    // keep the explicit step well inside its stability limit
                    let rate = q[i] * volumetric_heat_capacity_clamped(0.5 * (st.t_in + st.t_out));
                    let n_sub = (dt * rate / (0.5 * loop_capacity(p, st))).ceil().max(1.0) as usize;
                    let h = dt / n_sub as f64;
                    for _ in 0..n_sub {
                        let (next, f) = lumped_defocus_step(p, st, w.t_a, w.i_eff(), h, t_max)?;
                        *st = next;
                        intercept[i] = f;
                        excess = excess.max(st.t_out - t_max);
                    }
                }
            }
            Plant::Distributed {
                loops,
                states,
                intercept,
                block_outlets,
                previous,
            } => {
                let n_steps = (dt / DISTRIBUTED_DT).round().max(1.0) as usize;
                let base = dt / n_steps as f64;
                let weather = (0..n_steps)
                    .map(|j| weather_at(s, t + j as f64 * base))
                    .collect::<Result<Vec<_>>>()?;
                for (i, lp) in loops.iter().enumerate() {
                    let st = &mut states[i];
                    st.q = q[i];
                    // split the step further if the flow would break the CFL limit
                    let m = (lp.courant(q[i], st.segment_length, base) / 0.95).ceil().max(1.0) as usize;
                    let h = base / m as f64;
                    let ifs = &mut intercept[i];
                    let mut raw: Vec<f64> = ifs.iter().map(|f| f.value).collect();
                    let mut temps = vec![0.0; raw.len()];
                    let prev = &mut previous[i];
                    for w in &weather {
                        for _ in 0..m {
                            let inputs = DistributedInputs {
                                t_a: w.t_a,
                                dni: w.dni,
                                geometric_efficiency: w.n_o,
                                intercept: &raw,
                                t_in: s.t_in,
                            };
                            lp.step_in_place(st, &inputs, h)?;
                            for (c, &j) in block_outlets[i].iter().enumerate() {
                                temps[c] = st.fluid[j];
                                excess = excess.max(st.fluid[j] - s.defocus.collector_t_max[c]);
                            }
                            let seen = anticipated_outlets(&temps, prev, h, s.defocus.lead);
                            prev.copy_from_slice(&temps);
                            raw = collector_defocus_step(&seen, &s.defocus, &raw, h)?;
                            for (f, &r) in ifs.iter_mut().zip(&raw) {
                                f.update(r, h);
                            }
                        }
                    }
                }
            }
        }
        Ok(excess)
    }
}

enum Controller<'a> {
    None,
    Auction,
    Ann {
        model: &'a crate::ann::AnnModel,
        buf: InferenceBuffers,
    },
}

impl Controller<'_> {
    fn decide(&mut self, s: &Scenario, state: &ControllerState, valves: &ValveSet, q_total: f64) -> Result<ValveSet> {
        match self {
            Controller::None => Ok(valves.clone()),
            Controller::Auction => {
                let mut predictor = StaticPredictor::new(&s.loops, s.t_in, state.t_a, state.irradiance);
                predictor.t_max = s.defocus.lumped_t_max;
                predictor.defocus = s.predictor;
                let targets = allocate(valves, q_total, &s.auction, &predictor)?;
                Ok(invert_valves(valves, &targets, q_total, &s.auction)?.valves)
            }
            Controller::Ann { model, buf } => model.infer_apertures(&state.features(), buf),
        }
    }
}

/// Simulate one day. Divergence of the plant or the controller ends the run
/// early and is reported in `metrics.failure`; the metrics then cover the
/// simulated part of the day.
pub fn run_scenario(s: &Scenario) -> Result<RunOutput> {
    s.validate()?;
    let n = s.loops.len();
    let t_s1 = s.t_s1();
    let ratio = (s.t_s2() / t_s1).round() as usize;
    let n_ticks = (s.profile.duration() / t_s1 + 1e-9).floor() as usize;
    let start = s.profile.start();

    let mut plant = Plant::new(s)?;
    let mut controller = match &s.controller {
        ControllerKind::None => Controller::None,
        ControllerKind::Auction => Controller::Auction,
        ControllerKind::Ann { model, .. } => Controller::Ann {
            model,
            buf: model.buffers(),
        },
    };
    let mut valves = ValveSet::fully_open(n);
    let mut dataset = s.record_dataset.then(|| Dataset::new(3 * n + 5, n));
    let mut traces = Vec::with_capacity(n_ticks);
    let mut timing = ControllerTiming::default();
    let (mut flow_splits, mut controller_calls) = (0, 0);
    let mut failure = None;
    let mut max_excess = f64::NEG_INFINITY;

    for k in 0..n_ticks {
        let t = start + k as f64 * t_s1;
        let step = (|| -> Result<()> {
            let w = weather_at(s, t)?;
            let q_total = s.total_flow(t, w.t_a, w.i_eff())?;
            let q = flows_from_valves(&valves, q_total)?;
            flow_splits += 1;
            max_excess = max_excess.max(plant.advance(s, t, t_s1, &q)?);
            let t_out = plant.outlets();
            let power = q.iter().zip(&t_out).map(|(&qi, &to)| thermal_power(qi, s.t_in, to)).collect();
            traces.push(TickRecord {
                time: t,
                q_total,
                dni: w.dni,
                t_a: w.t_a,
                n_o: w.n_o,
                t_out,
                q,
                valves: valves.apertures.clone(),
                intercept: plant.intercepts(),
                power,
            });

            if (k + 1) % ratio == 0 {
                let t_next = t + t_s1;
                let w = weather_at(s, t_next)?;
                let q_next = s.total_flow(t_next, w.t_a, w.i_eff())?;
                let state = ControllerState {
                    t_in: s.t_in,
                    t_out: plant.outlets(),
                    t_a: w.t_a,
                    irradiance: w.i_eff(),
                    intercept: plant.intercepts(),
                    valves: valves.apertures.clone(),
                };
                let clock = Instant::now();
                let next = controller.decide(s, &state, &valves, q_next)?;
                timing.record(clock.elapsed().as_secs_f64());
                controller_calls += 1;
                if let Some(ds) = dataset.as_mut() {
                    ds.push(s.run_id, controller_calls as u32 - 1, &state.features(), &next.apertures)?;
                }
                valves = next;
            }
            Ok(())
        })();
        if let Err(e) = step {
            log::error!("{}: run stopped at t = {t} s: {e}", s.name);
            failure = Some(Failure {
                time: t,
                message: e.to_string(),
            });
            break;
        }
    }

    let mut metrics = RunMetrics {
        scenario: s.name.clone(),
        fingerprint: s.inputs_fingerprint(),
        seed: s.seed,
        plant: s.plant.name(),
        controller: s.controller.name(),
        mean_power_mw: 0.0,
        mean_intercept: 0.0,
        mean_temp_spread: 0.0,
        daylight_dni: s.daylight_dni,
        window_ticks: 0,
        flow_splits,
        controller_calls,
        timing,
        failure,
        traces,
    };
    metrics.summarise();
    Ok(RunOutput {
        metrics,
        dataset,
        max_limit_excess: max_excess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::profile::{Profile, ProfileSample, SyntheticDay};

    fn short_day(hours: f64) -> Profile {
        let mut d = SyntheticDay::sunny(900.0);
        d.sunrise_hour = 9.0;
        d.sunset_hour = 9.0 + hours;
        d.generate().unwrap()
    }

    fn faults() -> Vec<(f64, f64)> {
        (0..10).map(|i| (1.0 - 0.015 * i as f64, 0.1 * i as f64)).collect()
    }

    #[test]
    fn no_controller_splits_equally() {
        let s = Scenario::new(short_day(1.0)).with_faults(&faults());
        let out = run_scenario(&s).unwrap();
        let m = &out.metrics;
        assert!(m.failure.is_none());
        assert_eq!(m.flow_splits, 120);
        assert_eq!(m.controller_calls, 20);
        for r in &m.traces {
            assert!(r.valves.iter().all(|&v| v == 1.0));
            assert!(r.q.iter().all(|&q| (q - r.q_total / 10.0).abs() <= 1e-15 * r.q_total));
        }
    }

    #[test]
    fn flows_sum_to_schedule_and_calls_match_timing() {
        for plant in [PlantKind::Static, PlantKind::Lumped] {
            let mut s = Scenario::new(short_day(1.25)).with_faults(&faults());
            s.plant = plant;
            s.controller = ControllerKind::Auction;
            s.record_dataset = true;
            let out = run_scenario(&s).unwrap();
            let m = &out.metrics;
            assert_eq!(m.flow_splits, 150);
            assert_eq!(m.controller_calls, 25);
            assert_eq!(out.dataset.as_ref().unwrap().len(), 25);
            for r in &m.traces {
                let sum: f64 = r.q.iter().sum();
                assert!((sum - r.q_total).abs() <= 1e-9 * r.q_total);
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let mut s = Scenario::new(short_day(0.5)).with_faults(&faults());
        s.controller = ControllerKind::Auction;
        let a = run_scenario(&s).unwrap().metrics;
        let b = run_scenario(&s).unwrap().metrics;
        assert!(a.same_results(&b));
    }

    #[test]
    fn zero_auction_rounds_equal_the_baseline() {
        let base = Scenario::new(short_day(0.5)).with_faults(&faults());
        let mut zero = base.clone();
        zero.controller = ControllerKind::Auction;
        zero.auction.n_it = 0;
        let a = run_scenario(&base).unwrap().metrics;
        let b = run_scenario(&zero).unwrap().metrics;
        assert_eq!(a.traces, b.traces);
        assert_eq!(a.mean_power_mw, b.mean_power_mw);
    }

    #[test]
    fn dark_day_loses_power_and_stays_focused() {
        let samples = (0..=60)
            .map(|k| ProfileSample {
                time: 36000.0 + 60.0 * k as f64,
                dni: 0.0,
                t_a: 20.0,
                n_o: None,
            })
            .collect();
        let s = Scenario::new(Profile::new(samples).unwrap());
        let m = run_scenario(&s).unwrap().metrics;
        assert!(m.mean_power_mw <= 0.0);
        assert_eq!(m.mean_intercept, 100.0);
        assert_eq!(m.window_ticks, 0);
    }

    #[test]
    fn distributed_plant_runs_briefly() {
        let mut s = Scenario::new(short_day(0.25)).with_faults(&faults());
        s.plant = PlantKind::Distributed;
        let out = run_scenario(&s).unwrap();
        assert!(out.metrics.failure.is_none());
        assert_eq!(out.metrics.traces.len(), 30);
        let last = out.metrics.traces.last().unwrap();
        assert!(last.t_out.iter().all(|&t| t > s.t_in));
    }
}
