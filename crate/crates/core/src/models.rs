//! Loop models: the static closed form, the lumped dynamic model, the
//! distributed metal/fluid model, and thermal power accounting.
//!
//! Flows are in m³/s throughout. Fluid properties inside the time-stepping
//! models are evaluated with the temperature clamped into the correlation
//! range; the models enforce their own, wider sanity band instead.

use std::ops::Range;

use crate::error::{check_range, Error, Result};
use crate::physics::{self, volumetric_heat_capacity_clamped};

/// Lowest admissible loop flow, m³/s.
pub const FLOW_FLOOR: f64 = 1e-6;
/// Flow-proportional penalty subtracted from the loop thermal power, W/(m³/s).
pub const POWER_PENALTY: f64 = 3000.0;
/// Temperatures outside this band abort a time-stepping simulation, °C.
pub const SANITY_BAND: (f64, f64) = (-20.0, 500.0);
/// Integration step of the distributed model, s.
pub const DISTRIBUTED_DT: f64 = 0.25;

const STATIC_TOL: f64 = 1e-3;
const STATIC_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetalProps {
    /// kg/m³
    pub density: f64,
    /// J/(kg·°C)
    pub heat_capacity: f64,
    /// m²
    pub cross_section: f64,
}

impl MetalProps {
    /// Thermal capacity per metre of receiver tube, J/(m·°C).
    pub fn capacity_per_length(&self) -> f64 {
        self.density * self.heat_capacity * self.cross_section
    }
}

/// Fixed values that replace a correlation. Only meant for tests that need
/// to switch a term off or pin it.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CorrelationOverrides {
    pub loss_coeff: Option<f64>,
    pub convective_coeff: Option<f64>,
}

/// Static description of one loop, including its fault multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopParams {
    /// m
    pub loop_length: f64,
    /// m
    pub active_length: f64,
    /// Collecting surface `S`, m².
    pub aperture_area: f64,
    pub optical_efficiency: f64,
    /// Optical degradation multiplier, in (0, 1].
    pub alpha_kopt: f64,
    /// Thermal loss fault, in [0, 1]; losses are scaled by `2 - alpha_hl`.
    pub alpha_hl: f64,
    pub n_collectors: usize,
    pub metal: MetalProps,
    /// m²
    pub fluid_cross_section: f64,
    /// Collector aperture width `G`, m.
    pub collector_aperture: f64,
    /// Inner tube perimeter `L`, m.
    pub tube_perimeter: f64,
    /// Loss area `A` of the lumped model, m².
    pub lumped_loss_area: f64,
    pub n_segments: usize,
    /// m
    pub segment_length: f64,
    pub overrides: CorrelationOverrides,
}

impl Default for LoopParams {
    fn default() -> Self {
        Self {
            loop_length: 620.0,
            active_length: 593.0,
            aperture_area: 3415.5,
            optical_efficiency: 0.75,
            alpha_kopt: 1.0,
            alpha_hl: 1.0,
            n_collectors: 4,
            metal: MetalProps {
                density: 7800.0,
                heat_capacity: 550.0,
                cross_section: 2.1677e-4,
            },
            fluid_cross_section: 0.0036,
            collector_aperture: 5.75,
            tube_perimeter: 0.2136,
            // 0.8 m² is the area implied by the coefficients of the static
            // closed form (0.4 = A/2 and 0.8 = A).
            lumped_loss_area: 0.8,
            n_segments: 151,
            segment_length: 3.213,
            overrides: CorrelationOverrides::default(),
        }
    }
}

impl LoopParams {
    pub fn with_faults(mut self, alpha_kopt: f64, alpha_hl: f64) -> Self {
        self.alpha_kopt = alpha_kopt;
        self.alpha_hl = alpha_hl;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("loop length", self.loop_length),
            ("active length", self.active_length),
            ("aperture area", self.aperture_area),
            ("optical efficiency", self.optical_efficiency),
            ("metal density", self.metal.density),
            ("metal heat capacity", self.metal.heat_capacity),
            ("metal cross section", self.metal.cross_section),
            ("fluid cross section", self.fluid_cross_section),
            ("collector aperture", self.collector_aperture),
            ("tube perimeter", self.tube_perimeter),
            ("lumped loss area", self.lumped_loss_area),
            ("segment length", self.segment_length),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.active_length > self.loop_length {
            return Err(Error::Config("active length exceeds loop length".into()));
        }
        if !(self.alpha_kopt > 0.0 && self.alpha_kopt <= 1.0) {
            return Err(Error::Config(format!(
                "alpha_kopt must lie in (0, 1], got {}",
                self.alpha_kopt
            )));
        }
        check_range("alpha_hl", self.alpha_hl, 0.0, 1.0).map_err(|e| Error::Config(e.to_string()))?;
        if self.n_collectors == 0 || self.n_segments < 2 * self.n_collectors {
            return Err(Error::Config(format!(
                "{} segments cannot hold {} collectors",
                self.n_segments, self.n_collectors
            )));
        }
        Ok(())
    }

    /// `2 - alpha_hl`, in [1, 2].
    pub fn loss_multiplier(&self) -> f64 {
        2.0 - self.alpha_hl
    }

    fn loss_coeff(&self, delta_t: f64) -> f64 {
        match self.overrides.loss_coeff {
            Some(h) => h,
            None => physics::effective_loss_coeff(delta_t),
        }
    }

    fn convective(&self, flow: f64, t_f: f64) -> f64 {
        match self.overrides.convective_coeff {
            Some(h) => h,
            // flow^0.8 is hoisted by the caller; this path only needs the polynomial
            None => physics::convective_poly(t_f.clamp(physics::FLUID_T_MIN, physics::FLUID_T_MAX)) * flow,
        }
    }

    /// Gain of one loop for an effective irradiance, W.
    pub fn solar_gain(&self, i_eff: f64) -> f64 {
        self.alpha_kopt * self.optical_efficiency * i_eff * self.aperture_area
    }

    pub fn collector_layout(&self) -> CollectorLayout {
        CollectorLayout::proportional(self)
    }
}

/// Outlet temperature of the static loop model, °C.
///
/// `i_eff` is the effective irradiance (geometric efficiency times DNI, and
/// the intercept factor when defocusing). The loss coefficient and `ρ·C`
/// depend on the mean loop temperature, so the closed form is solved by a
/// fixed-point iteration on the outlet temperature.
pub fn static_outlet(params: &LoopParams, t_in: f64, t_a: f64, i_eff: f64, q: f64) -> Result<f64> {
    if !(q >= FLOW_FLOOR) {
        return Err(Error::Domain {
            quantity: "loop flow",
            value: q,
            min: FLOW_FLOOR,
            max: f64::INFINITY,
        });
    }
    if !(i_eff >= 0.0) {
        return Err(Error::Domain {
            quantity: "effective irradiance",
            value: i_eff,
            min: 0.0,
            max: f64::INFINITY,
        });
    }
    let gain = params.solar_gain(i_eff);
    let ambient_term = 0.8 * (0.5 * t_in - t_a) * params.loss_multiplier();
    let map = |t_out: f64| {
        let t_mean = 0.5 * (t_in + t_out);
        let pcp = volumetric_heat_capacity_clamped(t_mean);
        let h = params.loss_coeff(t_mean - t_a);
        (gain - ambient_term + q * t_in * pcp) / (q * pcp + 0.4 * h)
    };

    let mut t_out = t_in;
    let mut damping = 1.0;
    let mut last_sign = 0.0;
    let mut flips = 0;
    for _ in 0..STATIC_MAX_ITER {
        let next = map(t_out);
        if !next.is_finite() {
            return Err(Error::Divergence(format!("static outlet is {next}")));
        }
        let residual = next - t_out;
        if residual.abs() < STATIC_TOL {
            return Ok(next);
        }
        let sign = residual.signum();
        if last_sign != 0.0 && sign != last_sign {
            flips += 1;
            if flips >= 2 {
                damping = 0.5;
            }
        } else {
            flips = 0;
        }
        last_sign = sign;
        t_out += damping * residual;
    }
    // Far outside the operating range (tiny flows with strong sun) the loss
    // polynomial makes the map too steep to contract. The residual
    // `map(T) - T` is positive for very low and negative for very high
    // outlet temperatures, so a bracketing search always finds the root.
    bisect_fixed_point(map, t_in, t_out)
}

fn bisect_fixed_point(map: impl Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
    let r = |t: f64| map(t) - t;
    let (mut lo, mut hi) = (a.min(b), a.max(b));
    let mut width = (hi - lo).max(1.0);
    let mut expansions = 0;
    while !(r(lo) > 0.0 && r(hi) < 0.0) {
        expansions += 1;
        if expansions > 200 || !width.is_finite() {
            return Err(Error::NoConvergence {
                what: "static outlet temperature",
                iterations: STATIC_MAX_ITER,
                last: b,
            });
        }
        if !(r(lo) > 0.0) {
            lo -= width;
        }
        if !(r(hi) < 0.0) {
            hi += width;
        }
        width *= 2.0;
    }
    while hi - lo > 0.1 * STATIC_TOL {
        let mid = 0.5 * (lo + hi);
        if r(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(map(0.5 * (lo + hi)))
}

/// Effective irradiance at which the static outlet equals `t_out` exactly.
///
/// With the outlet pinned, the mean temperature and hence every property in
/// the closed form is known, so the form can be solved for the gain term.
pub fn static_irradiance_for_outlet(params: &LoopParams, t_in: f64, t_a: f64, t_out: f64, q: f64) -> f64 {
    let t_mean = 0.5 * (t_in + t_out);
    let pcp = volumetric_heat_capacity_clamped(t_mean);
    let h = params.loss_coeff(t_mean - t_a);
    let ambient_term = 0.8 * (0.5 * t_in - t_a) * params.loss_multiplier();
    let gain = (q * pcp + 0.4 * h) * t_out + ambient_term - q * t_in * pcp;
    gain / params.solar_gain(1.0)
}

/// State of the lumped loop model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LumpedState {
    pub t_out: f64,
    pub t_in: f64,
    pub q: f64,
}

/// Right-hand side of the lumped energy balance, `C_loop · dT_out/dt`, W.
pub fn lumped_rate(params: &LoopParams, state: &LumpedState, t_a: f64, i_eff: f64) -> f64 {
    let t_mean = 0.5 * (state.t_in + state.t_out);
    let pcp = volumetric_heat_capacity_clamped(t_mean);
    let h = params.loss_coeff(t_mean - t_a);
    params.loss_multiplier() * h * params.lumped_loss_area * (t_a - t_mean)
        + params.solar_gain(i_eff)
        + state.q * pcp * (state.t_in - state.t_out)
}

/// Thermal capacity of the whole loop at its mean temperature, J/°C.
pub fn loop_capacity(params: &LoopParams, state: &LumpedState) -> f64 {
    let t_mean = 0.5 * (state.t_in + state.t_out);
    params.loop_length * volumetric_heat_capacity_clamped(t_mean) * params.fluid_cross_section
}

/// One explicit Euler step of the lumped model.
pub fn lumped_step(
    params: &LoopParams,
    state: &LumpedState,
    t_a: f64,
    i_eff: f64,
    dt: f64,
) -> Result<LumpedState> {
    if !(dt > 0.0) {
        return Err(Error::Domain {
            quantity: "time step",
            value: dt,
            min: 0.0,
            max: f64::INFINITY,
        });
    }
    let rate = lumped_rate(params, state, t_a, i_eff);
    let t_out = state.t_out + dt * rate / loop_capacity(params, state);
    check_sanity("lumped outlet temperature", t_out)?;
    Ok(LumpedState { t_out, ..*state })
}

fn check_sanity(what: &str, t: f64) -> Result<()> {
    if t.is_finite() && t >= SANITY_BAND.0 && t <= SANITY_BAND.1 {
        Ok(())
    } else {
        Err(Error::Divergence(format!("{what} reached {t} °C")))
    }
}

/// Mapping of collectors onto segments of the distributed grid.
///
/// The active fraction of the loop length is mapped proportionally onto the
/// grid, split evenly across the collectors; the remaining passive segments
/// are spread over the inlet, the joints and the outlet.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectorLayout {
    pub blocks: Vec<Range<usize>>,
    /// Collector index of each segment, `None` for passive segments.
    pub segment_collector: Vec<Option<usize>>,
}

impl CollectorLayout {
    pub fn proportional(params: &LoopParams) -> Self {
        let n = params.n_segments;
        let nc = params.n_collectors;
        let active = ((n as f64) * params.active_length / params.loop_length).round() as usize;
        let active = active.clamp(nc, n);
        let passive = n - active;
        let gaps = nc + 1;
        let gap_len = |g: usize| passive / gaps + usize::from(g < passive % gaps);
        let block_len = |c: usize| active / nc + usize::from(c < active % nc);

        let mut blocks = Vec::with_capacity(nc);
        let mut segment_collector = vec![None; n];
        let mut cursor = 0;
        for c in 0..nc {
            cursor += gap_len(c);
            let block = cursor..cursor + block_len(c);
            for s in block.clone() {
                segment_collector[s] = Some(c);
            }
            cursor = block.end;
            blocks.push(block);
        }
        debug_assert_eq!(cursor + gap_len(nc), n);
        Self {
            blocks,
            segment_collector,
        }
    }

    pub fn active_segments(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    /// Index of the last segment of each collector.
    pub fn block_outlets(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.end - 1).collect()
    }
}

/// Metal and fluid temperature profiles along one loop.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributedState {
    pub fluid: Vec<f64>,
    pub metal: Vec<f64>,
    pub segment_length: f64,
    pub q: f64,
}

impl DistributedState {
    pub fn uniform(params: &LoopParams, temperature: f64, q: f64) -> Self {
        Self {
            fluid: vec![temperature; params.n_segments],
            metal: vec![temperature; params.n_segments],
            segment_length: params.segment_length,
            q,
        }
    }

    pub fn outlet(&self) -> f64 {
        *self.fluid.last().expect("empty distributed state")
    }
}

/// Exogenous inputs of one distributed-model step.
#[derive(Debug, Clone, Copy)]
pub struct DistributedInputs<'a> {
    pub t_a: f64,
    pub dni: f64,
    pub geometric_efficiency: f64,
    /// One intercept factor per collector.
    pub intercept: &'a [f64],
    pub t_in: f64,
}

/// Distributed loop model with its collector layout resolved once.
#[derive(Debug, Clone)]
pub struct DistributedLoop {
    pub params: LoopParams,
    pub layout: CollectorLayout,
}

impl DistributedLoop {
    pub fn new(params: LoopParams) -> Result<Self> {
        params.validate()?;
        let layout = params.collector_layout();
        Ok(Self { params, layout })
    }

    /// Courant number of the advection term.
    pub fn courant(&self, q: f64, segment_length: f64, dt: f64) -> f64 {
        q * dt / (self.params.fluid_cross_section * segment_length)
    }

    pub fn step(&self, state: &DistributedState, inputs: &DistributedInputs, dt: f64) -> Result<DistributedState> {
        let mut next = state.clone();
        self.step_in_place(&mut next, inputs, dt)?;
        Ok(next)
    }

    /// Explicit step: metal update per segment, first-order upwind advection
    /// for the fluid with the inlet temperature as the upstream ghost value.
    pub fn step_in_place(&self, state: &mut DistributedState, inputs: &DistributedInputs, dt: f64) -> Result<()> {
        let p = &self.params;
        let n = p.n_segments;
        if state.fluid.len() != n || state.metal.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: state.fluid.len().min(state.metal.len()),
            });
        }
        if inputs.intercept.len() != p.n_collectors {
            return Err(Error::Shape {
                expected: p.n_collectors,
                got: inputs.intercept.len(),
            });
        }
        if !(dt > 0.0) || !(state.q >= 0.0) {
            return Err(Error::Degenerate(format!("dt = {dt}, q = {}", state.q)));
        }
        let dx = state.segment_length;
        let courant = self.courant(state.q, dx, dt);
        if courant > 1.0 {
            return Err(Error::Stability { courant });
        }

        let focused_flux = p.alpha_kopt
            * inputs.geometric_efficiency
            * p.collector_aperture
            * p.optical_efficiency
            * inputs.dni;
        let loss_scale = p.loss_multiplier() * p.collector_aperture;
        let metal_capacity = p.metal.capacity_per_length();
        let flow_factor = state.q.powf(0.8);

        let mut upstream = inputs.t_in;
        for j in 0..n {
            let t_f = state.fluid[j];
            let t_m = state.metal[j];
            let absorbed = match self.layout.segment_collector[j] {
                Some(c) => focused_flux * inputs.intercept[c],
                None => 0.0,
            };
            let dt_amb = t_m - inputs.t_a;
            let loss = loss_scale * p.loss_coeff(dt_amb) * dt_amb.max(0.0);
            let exchange = p.tube_perimeter * p.convective(flow_factor, t_f) * (t_f - t_m);
            let pcp = volumetric_heat_capacity_clamped(t_f);

            let new_m = t_m + dt * (absorbed - loss + exchange) / metal_capacity;
            let new_f = t_f
                + dt * (-state.q * pcp * (t_f - upstream) / dx - exchange) / (pcp * p.fluid_cross_section);

            upstream = t_f;
            state.metal[j] = new_m;
            state.fluid[j] = new_f;
        }
        for (&t_f, &t_m) in state.fluid.iter().zip(&state.metal) {
            check_sanity("distributed temperature", t_f)?;
            check_sanity("metal temperature", t_m)?;
        }
        Ok(())
    }
}

/// Convenience wrapper resolving the collector layout for a single step.
pub fn distributed_step(
    params: &LoopParams,
    state: &DistributedState,
    inputs: &DistributedInputs,
    dt: f64,
) -> Result<DistributedState> {
    DistributedLoop::new(params.clone())?.step(state, inputs, dt)
}

/// Net thermal power of one loop, W, with `ρ·C` at the mean loop temperature
/// and the flow penalty subtracted.
pub fn thermal_power(q: f64, t_in: f64, t_out: f64) -> f64 {
    debug_assert!(q >= 0.0);
    let pcp = volumetric_heat_capacity_clamped(0.5 * (t_in + t_out));
    q * pcp * (t_out - t_in) - POWER_PENALTY * q
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerReport {
    pub per_loop: Vec<f64>,
    pub total: f64,
    pub penalty_factor: f64,
}

pub fn field_power(per_loop: &[f64]) -> Result<PowerReport> {
    if per_loop.is_empty() {
        return Err(Error::Degenerate("no loops to sum".into()));
    }
    Ok(PowerReport {
        per_loop: per_loop.to_vec(),
        total: per_loop.iter().sum(),
        penalty_factor: POWER_PENALTY,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn nominal() -> LoopParams {
        LoopParams::default()
    }

    /// Steady state of the lumped balance by bisection on the outlet temperature.
    fn lumped_equilibrium(p: &LoopParams, t_in: f64, t_a: f64, i_eff: f64, q: f64) -> f64 {
        let f = |t: f64| lumped_rate(p, &LumpedState { t_out: t, t_in, q }, t_a, i_eff);
        let (mut lo, mut hi) = (-20.0, 2000.0);
        assert!(f(lo) > 0.0 && f(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn static_without_gain_keeps_inlet_up_to_constant_term() {
        let p = nominal().with_faults(1.0, 0.4);
        let (t_in, q) = (120.0, 0.01);
        let t_out = static_outlet(&p, t_in, t_in, 0.0, q).unwrap();
        // the printed constant term leaves 0.4·T_a·(2 - α_Hl)/(q·ρC)
        let pcp = volumetric_heat_capacity_clamped(0.5 * (t_in + t_out));
        let expected = 0.4 * t_in * p.loss_multiplier() / (q * pcp);
        assert!((t_out - t_in - expected).abs() < 1e-6, "{t_out}");
        // exact at zero ambient
        let t0 = static_outlet(&p, 0.0, 0.0, 0.0, q).unwrap();
        assert_eq!(t0, 0.0);
    }

    #[test]
    fn static_large_flow_limit() {
        let p = nominal();
        let t_in = 293.0;
        let mut prev = f64::INFINITY;
        for q in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let rise = static_outlet(&p, t_in, 25.0, 900.0, q).unwrap() - t_in;
            assert!(rise < prev);
            prev = rise;
        }
        assert!(prev < 0.02);
    }

    #[test]
    fn static_matches_lumped_equilibrium_nominal_sunny() {
        let p = nominal();
        let (t_in, t_a, i_eff, q) = (293.0, 25.0, 900.0 * 0.95, 0.0122);
        let stat = static_outlet(&p, t_in, t_a, i_eff, q).unwrap();
        let oracle = lumped_equilibrium(&p, t_in, t_a, i_eff, q);
        assert!((stat - oracle).abs() < 0.05, "static {stat} vs bisection {oracle}");
        assert!(stat > 380.0 && stat < 400.0, "{stat}");
    }

    #[test]
    fn static_rejects_flow_below_floor() {
        assert!(matches!(
            static_outlet(&nominal(), 293.0, 25.0, 500.0, 1e-7),
            Err(Error::Domain { .. })
        ));
        assert!(static_outlet(&nominal(), 293.0, 25.0, -1.0, 0.01).is_err());
    }

    #[test]
    fn lumped_rest_state_is_fixed() {
        let p = nominal();
        let s = LumpedState {
            t_out: 150.0,
            t_in: 150.0,
            q: 0.01,
        };
        let next = lumped_step(&p, &s, 150.0, 0.0, 30.0).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn lumped_equilibrium_is_fixed_point() {
        let p = nominal().with_faults(0.9, 0.5);
        let (t_in, t_a, i_eff, q) = (290.0, 30.0, 800.0, 0.011);
        let t_eq = lumped_equilibrium(&p, t_in, t_a, i_eff, q);
        let s = LumpedState { t_out: t_eq, t_in, q };
        let next = lumped_step(&p, &s, t_a, i_eff, 30.0).unwrap();
        assert!((next.t_out - t_eq).abs() < 1e-6);
        // from the static solution the step moves by at most the model offset
        let t_static = static_outlet(&p, t_in, t_a, i_eff, q).unwrap();
        let s = LumpedState { t_out: t_static, ..s };
        let next = lumped_step(&p, &s, t_a, i_eff, 30.0).unwrap();
        assert!((next.t_out - t_static).abs() < (t_eq - t_static).abs() + 1e-9);
    }

    #[test]
    fn lumped_step_response_is_monotone() {
        let p = nominal();
        let mut s = LumpedState {
            t_out: 293.0,
            t_in: 293.0,
            q: 0.012,
        };
        for _ in 0..200 {
            let next = lumped_step(&p, &s, 25.0, 900.0, 30.0).unwrap();
            assert!(next.t_out >= s.t_out);
            s = next;
        }
    }

    #[test]
    fn lumped_divergence_is_reported() {
        let p = nominal();
        let mut s = LumpedState {
            t_out: 450.0,
            t_in: 450.0,
            q: 1e-6,
        };
        let mut outcome = Ok(s);
        for _ in 0..10 {
            outcome = lumped_step(&p, &s, 25.0, 1000.0, 30.0);
            match outcome {
                Ok(next) => s = next,
                Err(_) => break,
            }
        }
        assert!(matches!(outcome, Err(Error::Divergence(_))));
    }

    #[test]
    fn doubling_gain_doubles_rise_without_losses() {
        let mut p = nominal();
        p.overrides.loss_coeff = Some(0.0);
        // zero ambient removes the printed constant term
        let (t_in, q) = (100.0, 0.02);
        let r1 = static_outlet(&p, t_in, 0.5 * t_in, 300.0, q).unwrap() - t_in;
        let r2 = static_outlet(&p, t_in, 0.5 * t_in, 600.0, q).unwrap() - t_in;
        // ρC varies with the mean temperature, so compare energy rises
        let e = |r: f64| q * volumetric_heat_capacity_clamped(t_in + 0.5 * r) * r;
        assert_relative_eq!(e(r2), 2.0 * e(r1), max_relative = 1e-6);
    }

    #[test]
    fn layout_covers_grid() {
        let layout = nominal().collector_layout();
        assert_eq!(layout.blocks.len(), 4);
        assert_eq!(layout.active_segments(), 144);
        assert!(layout.blocks.iter().all(|b| b.len() == 36));
        assert_eq!(layout.blocks[0].start, 2);
        assert_eq!(layout.blocks[3].end, 150);
        let passive = layout.segment_collector.iter().filter(|c| c.is_none()).count();
        assert_eq!(passive, 7);
    }

    fn inputs(intercept: &[f64]) -> DistributedInputs<'_> {
        DistributedInputs {
            t_a: 25.0,
            dni: 900.0,
            geometric_efficiency: 0.95,
            intercept,
            t_in: 293.0,
        }
    }

    #[test]
    fn distributed_rest_state_unchanged() {
        let model = DistributedLoop::new(nominal()).unwrap();
        let state = DistributedState::uniform(&model.params, 25.0, 0.01);
        let ifs = [1.0; 4];
        let inp = DistributedInputs {
            t_a: 25.0,
            dni: 0.0,
            geometric_efficiency: 1.0,
            intercept: &ifs,
            t_in: 25.0,
        };
        let next = model.step(&state, &inp, DISTRIBUTED_DT).unwrap();
        assert_eq!(next, state);
    }

    #[test]
    fn distributed_cfl_violation() {
        let model = DistributedLoop::new(nominal()).unwrap();
        let state = DistributedState::uniform(&model.params, 293.0, 0.05);
        let ifs = [1.0; 4];
        assert!(matches!(
            model.step(&state, &inputs(&ifs), DISTRIBUTED_DT),
            Err(Error::Stability { .. })
        ));
        let ok = DistributedState::uniform(&model.params, 293.0, 0.04);
        assert!(model.step(&ok, &inputs(&ifs), DISTRIBUTED_DT).is_ok());
    }

    #[test]
    fn distributed_shape_checks() {
        let model = DistributedLoop::new(nominal()).unwrap();
        let mut state = DistributedState::uniform(&model.params, 293.0, 0.01);
        state.fluid.pop();
        let ifs = [1.0; 4];
        assert!(matches!(model.step(&state, &inputs(&ifs), 0.25), Err(Error::Shape { .. })));
        let state = DistributedState::uniform(&model.params, 293.0, 0.01);
        assert!(model.step(&state, &inputs(&[1.0; 3]), 0.25).is_err());
    }

    #[test]
    fn metal_and_fluid_relax_without_flow() {
        let mut p = nominal();
        p.overrides.loss_coeff = Some(0.0);
        p.overrides.convective_coeff = Some(500.0);
        let model = DistributedLoop::new(p).unwrap();
        let mut state = DistributedState::uniform(&model.params, 200.0, 0.0);
        for (j, t) in state.metal.iter_mut().enumerate() {
            *t = 200.0 + ((j % 7) as f64 - 3.0) * 10.0 + 0.5;
        }
        let ifs = [1.0; 4];
        let inp = DistributedInputs {
            t_a: 25.0,
            dni: 0.0,
            geometric_efficiency: 1.0,
            intercept: &ifs,
            t_in: 200.0,
        };
        let next = model.step(&state, &inp, DISTRIBUTED_DT).unwrap();
        for j in 0..state.fluid.len() {
            let before = state.fluid[j] - state.metal[j];
            let after = next.fluid[j] - next.metal[j];
            assert!(after.abs() < before.abs(), "segment {j}");
            assert_eq!(after.signum(), before.signum());
        }
    }

    #[test]
    fn distributed_heats_up_toward_outlet() {
        let model = DistributedLoop::new(nominal()).unwrap();
        let mut state = DistributedState::uniform(&model.params, 293.0, 0.0122);
        let ifs = [1.0; 4];
        for _ in 0..(1800.0 / DISTRIBUTED_DT) as usize {
            model.step_in_place(&mut state, &inputs(&ifs), DISTRIBUTED_DT).unwrap();
        }
        let out = state.outlet();
        assert!(out > 330.0 && out < 420.0, "{out}");
        // heating is monotone inside every collector; passive joints only lose heat
        for block in &model.layout.blocks {
            assert!(state.fluid[block.clone()].windows(2).all(|w| w[1] > w[0]));
        }
        let outlets: Vec<f64> = model.layout.block_outlets().iter().map(|&j| state.fluid[j]).collect();
        assert!(outlets.windows(2).all(|w| w[1] > w[0]), "{outlets:?}");
        assert!(out <= outlets[3]);
    }

    #[test]
    fn thermal_power_examples() {
        assert_eq!(thermal_power(0.0, 293.0, 393.0), 0.0);
        assert_eq!(thermal_power(0.01, 300.0, 300.0), -POWER_PENALTY * 0.01);
        // independent evaluation at the mean temperature 343 °C
        assert_relative_eq!(thermal_power(0.005, 293.0, 393.0), 943882.4152694005, max_relative = 1e-12);
    }

    #[test]
    fn field_power_sums() {
        assert!(field_power(&[]).is_err());
        assert_eq!(field_power(&[5.0]).unwrap().total, 5.0);
        assert_eq!(field_power(&[0.0; 10]).unwrap().total, 0.0);
        let r = field_power(&[1.25e6; 10]).unwrap();
        assert_relative_eq!(r.total, 1.25e7, max_relative = 1e-12);
        assert_eq!(r.penalty_factor, 3000.0);
    }

    #[test]
    fn validation_rejects_bad_faults() {
        assert!(nominal().with_faults(0.0, 1.0).validate().is_err());
        assert!(nominal().with_faults(1.1, 1.0).validate().is_err());
        assert!(nominal().with_faults(0.9, 1.5).validate().is_err());
        assert!(nominal().with_faults(0.9, 0.0).validate().is_ok());
    }

    proptest! {
        #[test]
        fn power_linear_in_flow(q in 0.0f64..0.05, a in 0.0f64..4.0, t_in in 250.0f64..300.0, rise in 0.0f64..100.0) {
            let base = thermal_power(q, t_in, t_in + rise);
            let scaled = thermal_power(a * q, t_in, t_in + rise);
            prop_assert!((scaled - a * base).abs() <= 1e-9 * (1.0 + scaled.abs()));
        }

        #[test]
        fn field_total_matches_sum(v in proptest::collection::vec(-1e6f64..3e6, 1..20)) {
            let r = field_power(&v).unwrap();
            let naive: f64 = v.iter().sum();
            prop_assert!((r.total - naive).abs() <= 1e-9 * (1.0 + naive.abs()));
        }
    }
}
