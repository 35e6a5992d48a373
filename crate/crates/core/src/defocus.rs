//! Temperature limiting by defocusing: a per-loop intercept factor for the
//! lumped and static models, and a per-collector proportional rule for the
//! distributed model.

use crate::error::{Error, Result};
use crate::models::{lumped_step, static_irradiance_for_outlet, static_outlet, LoopParams, LumpedState};

/// Outlet ceiling of the per-loop scheme, °C.
pub const LUMPED_T_MAX: f64 = 392.0;
/// Block outlet ceilings along a four-collector loop, °C.
pub const COLLECTOR_T_MAX: [f64; 4] = [323.0, 348.0, 373.0, 390.0];
/// Intercept factor resolution of the per-loop scheme.
pub const IF_STEPS: u32 = 100;
/// Time constant of the intercept factor filter, s.
pub const IF_FILTER_TAU: f64 = 600.0;

/// Intercept factor together with its low-pass filtered value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterceptFactor {
    pub value: f64,
    pub filtered_value: f64,
}

impl Default for InterceptFactor {
    fn default() -> Self {
        Self {
            value: 1.0,
            filtered_value: 1.0,
        }
    }
}

impl InterceptFactor {
    pub fn update(&mut self, raw: f64, dt: f64) {
        self.value = raw.clamp(0.0, 1.0);
        self.filtered_value = filter_if(self.value, self.filtered_value, dt);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefocusLimits {
    pub lumped_t_max: f64,
    pub collector_t_max: Vec<f64>,
    /// Intercept change per °C of excess for each reference step.
    pub gain: f64,
    /// Band below the ceiling in which the intercept factor is held, °C.
    pub deadband: f64,
    /// Step length the gain refers to, s.
    pub reference_dt: f64,
    /// Horizon of the linear extrapolation applied to block temperatures
    /// before they are compared with the ceilings, s. Zero compares the
    /// measured temperatures.
    pub lead: f64,
}

impl Default for DefocusLimits {
    fn default() -> Self {
        Self {
            lumped_t_max: LUMPED_T_MAX,
            collector_t_max: COLLECTOR_T_MAX.to_vec(),
            gain: 0.004,
            deadband: 1.0,
            reference_dt: 0.25,
            lead: 40.0,
        }
    }
}

impl DefocusLimits {
    pub fn validate(&self) -> Result<()> {
        if !self.collector_t_max.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("collector limits must increase along the loop".into()));
        }
        if !(self.gain > 0.0 && self.deadband >= 0.0 && self.reference_dt > 0.0) {
            return Err(Error::Config("defocus gain and reference step must be positive".into()));
        }
        if !(self.lead >= 0.0 && self.lead.is_finite()) {
            return Err(Error::Config("defocus lead must be non-negative".into()));
        }
        Ok(())
    }
}

/// Outlet temperature reached with a given intercept factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefocusOutcome {
    pub t_out: f64,
    pub intercept: f64,
}

fn grid(k: u32) -> f64 {
    f64::from(k) / f64::from(IF_STEPS)
}

/// Largest intercept factor on the 0.01 grid keeping the static outlet at or
/// below `t_max`.
///
/// The static outlet is nondecreasing in the intercept factor, so the grid is
/// bisected instead of scanned; the result equals that of a downward scan
/// from 1.00.
pub fn lumped_defocus(
    params: &LoopParams,
    t_in: f64,
    t_a: f64,
    i_eff: f64,
    q: f64,
    t_max: f64,
) -> Result<DefocusOutcome> {
    let outlet = |k: u32| static_outlet(params, t_in, t_a, i_eff * grid(k), q);
    let full = outlet(IF_STEPS)?;
    if full <= t_max {
        return Ok(DefocusOutcome {
            t_out: full,
            intercept: 1.0,
        });
    }
    let dark = outlet(0)?;
    if dark > t_max {
        return Ok(DefocusOutcome {
            t_out: dark,
            intercept: 0.0,
        });
    }
    // invariant: outlet(lo) <= t_max < outlet(hi)
    let (mut lo, mut hi, mut t_lo) = (0, IF_STEPS, dark);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let t = outlet(mid)?;
        if t <= t_max {
            lo = mid;
            t_lo = t;
        } else {
            hi = mid;
        }
    }
    Ok(DefocusOutcome {
        t_out: t_lo,
        intercept: grid(lo),
    })
}

/// Exact intercept factor holding the static outlet at `t_max`, without the
/// 0.01 grid. Used by the allocator's power predictor, where the grid would
/// turn the power curve into a sawtooth finer than the probe quantum.
pub fn continuous_defocus(
    params: &LoopParams,
    t_in: f64,
    t_a: f64,
    i_eff: f64,
    q: f64,
    t_max: f64,
) -> Result<DefocusOutcome> {
    let full = static_outlet(params, t_in, t_a, i_eff, q)?;
    if full <= t_max {
        return Ok(DefocusOutcome {
            t_out: full,
            intercept: 1.0,
        });
    }
    let needed = static_irradiance_for_outlet(params, t_in, t_a, t_max, q);
    if needed <= 0.0 {
        return Ok(DefocusOutcome {
            t_out: static_outlet(params, t_in, t_a, 0.0, q)?,
            intercept: 0.0,
        });
    }
    Ok(DefocusOutcome {
        t_out: t_max,
        intercept: (needed / i_eff).min(1.0),
    })
}

/// One lumped-model step with the largest grid intercept factor keeping the
/// stepped outlet at or below `t_max`.
///
/// The explicit step is affine in the irradiance, which gives the grid index
/// directly; the neighbouring indices are checked to absorb rounding.
pub fn lumped_defocus_step(
    params: &LoopParams,
    state: &LumpedState,
    t_a: f64,
    i_eff: f64,
    dt: f64,
    t_max: f64,
) -> Result<(LumpedState, f64)> {
    let step = |k: u32| lumped_step(params, state, t_a, i_eff * grid(k), dt);
    let full = step(IF_STEPS)?;
    if full.t_out <= t_max {
        return Ok((full, 1.0));
    }
    let dark = step(0)?;
    if dark.t_out > t_max {
        return Ok((dark, 0.0));
    }
    let slope = full.t_out - dark.t_out;
    let guess = ((t_max - dark.t_out) / slope * f64::from(IF_STEPS)).floor();
    let mut k = (guess.max(0.0) as u32).min(IF_STEPS - 1);
    let mut s = step(k)?;
    while s.t_out > t_max && k > 0 {
        k -= 1;
        s = step(k)?;
    }
    while k + 1 < IF_STEPS {
        let next = step(k + 1)?;
        if next.t_out > t_max {
            break;
        }
        k += 1;
        s = next;
    }
    Ok((s, grid(k)))
}

/// Proportional per-collector defocus update.
///
/// A block outlet above its ceiling lowers that collector's intercept factor
/// by `gain` per °C of excess; one more than `deadband` below the ceiling
/// raises it by the same gain per °C beyond the band. The gain is scaled by
/// `dt / reference_dt`.
pub fn collector_defocus_step(
    block_outlets: &[f64],
    limits: &DefocusLimits,
    current: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    let n = limits.collector_t_max.len();
    for len in [block_outlets.len(), current.len()] {
        if len != n {
            return Err(Error::Shape { expected: n, got: len });
        }
    }
    let scale = limits.gain * dt / limits.reference_dt;
    Ok(block_outlets
        .iter()
        .zip(&limits.collector_t_max)
        .zip(current)
        .map(|((&t, &t_max), &ifc)| {
            let excess = t - t_max;
            let change = if excess > 0.0 {
                -scale * excess
            } else if -excess > limits.deadband {
                scale * (-excess - limits.deadband)
            } else {
                0.0
            };
            (ifc + change).clamp(0.0, 1.0)
        })
        .collect())
}

/// Block temperatures extrapolated `lead` seconds ahead from their change
/// over the last step.
///
/// Comparing these instead of the measured values adds damping to the
/// collector rule. Without it the rule integrates the excess of a block that
/// itself integrates absorbed heat, and the intercept factors cycle between
/// 0 and 1 with outlet excursions of 10 °C and more.
pub fn anticipated_outlets(now: &[f64], prev: &[f64], dt: f64, lead: f64) -> Vec<f64> {
    now.iter().zip(prev).map(|(&t, &p)| t + lead * (t - p) / dt).collect()
}

/// First-order low-pass filter with a 10 min time constant.
pub fn filter_if(raw: f64, prev_filtered: f64, dt: f64) -> f64 {
    let alpha = (dt / IF_FILTER_TAU).clamp(0.0, 1.0);
    prev_filtered + alpha * (raw - prev_filtered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scan(p: &LoopParams, t_in: f64, t_a: f64, i_eff: f64, q: f64) -> DefocusOutcome {
        for k in (0..=IF_STEPS).rev() {
            let t = static_outlet(p, t_in, t_a, i_eff * grid(k), q).unwrap();
            if t <= LUMPED_T_MAX {
                return DefocusOutcome {
                    t_out: t,
                    intercept: grid(k),
                };
            }
        }
        DefocusOutcome {
            t_out: static_outlet(p, t_in, t_a, 0.0, q).unwrap(),
            intercept: 0.0,
        }
    }

    #[test]
    fn night_is_fully_focused() {
        let p = LoopParams::default();
        let r = lumped_defocus(&p, 290.0, 20.0, 0.0, 0.01, LUMPED_T_MAX).unwrap();
        assert_eq!(r.intercept, 1.0);
        assert_eq!(r.t_out, static_outlet(&p, 290.0, 20.0, 0.0, 0.01).unwrap());
    }

    #[test]
    fn boundary_input_keeps_focus() {
        let p = LoopParams::default();
        let t = static_outlet(&p, 293.0, 25.0, 800.0, 0.012).unwrap();
        let r = lumped_defocus(&p, 293.0, 25.0, 800.0, 0.012, t).unwrap();
        assert_eq!(r.intercept, 1.0);
        assert_eq!(r.t_out, t);
    }

    #[test]
    fn low_flow_matches_exhaustive_scan() {
        let p = LoopParams::default().with_faults(0.93, 0.3);
        let r = lumped_defocus(&p, 293.0, 30.0, 950.0, 0.006, LUMPED_T_MAX).unwrap();
        let oracle = scan(&p, 293.0, 30.0, 950.0, 0.006);
        assert!(r.intercept < 1.0);
        assert_eq!(r, oracle);
        assert!(r.t_out <= LUMPED_T_MAX);
    }

    #[test]
    fn hopeless_case_returns_zero() {
        let p = LoopParams::default();
        let r = lumped_defocus(&p, 395.0, 25.0, 900.0, 0.01, LUMPED_T_MAX).unwrap();
        assert_eq!(r.intercept, 0.0);
        assert!(r.t_out > LUMPED_T_MAX);
    }

    #[test]
    fn continuous_defocus_pins_outlet() {
        let p = LoopParams::default().with_faults(0.9, 0.2);
        let r = continuous_defocus(&p, 293.0, 30.0, 950.0, 0.007, LUMPED_T_MAX).unwrap();
        assert!(r.intercept < 1.0);
        let t = static_outlet(&p, 293.0, 30.0, 950.0 * r.intercept, 0.007).unwrap();
        assert!((t - LUMPED_T_MAX).abs() < 1e-3, "{t}");
        let grid = lumped_defocus(&p, 293.0, 30.0, 950.0, 0.007, LUMPED_T_MAX).unwrap();
        assert!(grid.intercept <= r.intercept && r.intercept - grid.intercept < 0.01);
        let unsat = continuous_defocus(&p, 293.0, 30.0, 300.0, 0.012, LUMPED_T_MAX).unwrap();
        assert_eq!(unsat.intercept, 1.0);
    }

    #[test]
    fn dynamic_defocus_is_maximal() {
        let p = LoopParams::default();
        let s = LumpedState {
            t_out: 388.0,
            t_in: 293.0,
            q: 0.008,
        };
        let (next, ifv) = lumped_defocus_step(&p, &s, 25.0, 950.0, 30.0, LUMPED_T_MAX).unwrap();
        assert!(ifv < 1.0 && next.t_out <= LUMPED_T_MAX);
        let above = lumped_step(&p, &s, 25.0, 950.0 * (ifv + 0.01), 30.0).unwrap();
        assert!(above.t_out > LUMPED_T_MAX);
    }

    #[test]
    fn collector_examples() {
        let limits = DefocusLimits::default();
        let cool: Vec<f64> = COLLECTOR_T_MAX.iter().map(|t| t - 10.0).collect();
        assert_eq!(collector_defocus_step(&cool, &limits, &[1.0; 4], 0.25).unwrap(), vec![1.0; 4]);

        let at_limit = [300.0, 300.0, 300.0, 390.0];
        let out = collector_defocus_step(&at_limit, &limits, &[1.0, 1.0, 1.0, 0.7], 0.25).unwrap();
        assert_eq!(out[3], 0.7);

        let hot = [300.0, 300.0, 300.0, 395.0];
        let out = collector_defocus_step(&hot, &limits, &[1.0, 1.0, 1.0, 0.9], 0.25).unwrap();
        assert_relative_eq!(out[3], 0.88, max_relative = 1e-12);

        assert!(collector_defocus_step(&hot[..3], &limits, &[1.0; 4], 0.25).is_err());
    }

    #[test]
    fn limits_must_increase() {
        let mut limits = DefocusLimits::default();
        assert!(limits.validate().is_ok());
        limits.collector_t_max = vec![323.0, 348.0, 348.0, 390.0];
        assert!(limits.validate().is_err());
    }

    #[test]
    fn anticipation() {
        assert_eq!(anticipated_outlets(&[300.0, 310.0], &[299.0, 311.0], 0.25, 0.0), vec![300.0, 310.0]);
        assert_eq!(anticipated_outlets(&[300.0, 310.0], &[299.0, 311.0], 0.25, 1.0), vec![304.0, 306.0]);
    }

    #[test]
    fn filter_examples() {
        assert_eq!(filter_if(0.4, 0.4, 30.0), 0.4);
        assert_eq!(filter_if(1.0, 0.0, 600.0), 1.0);
        assert_eq!(filter_if(1.0, 0.0, 6000.0), 1.0);
        assert_relative_eq!(filter_if(1.0, 0.0, 60.0), 0.1, max_relative = 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bisection_equals_scan(
            t_in in 250.0f64..320.0,
            t_a in 0.0f64..45.0,
            i_eff in 0.0f64..1000.0,
            q in 0.002f64..0.02,
            ak in 0.85f64..1.0,
            ah in 0.0f64..1.0,
        ) {
            let p = LoopParams::default().with_faults(ak, ah);
            let r = lumped_defocus(&p, t_in, t_a, i_eff, q, LUMPED_T_MAX).unwrap();
            prop_assert_eq!(r, scan(&p, t_in, t_a, i_eff, q));
            prop_assert!(r.intercept == 0.0 || r.t_out <= LUMPED_T_MAX + 1e-3);
        }

        #[test]
        fn collector_rule_is_monotone(t in 250.0f64..420.0, dt_up in 0.0f64..20.0, ifc in 0.0f64..1.0) {
            let limits = DefocusLimits::default();
            let a = collector_defocus_step(&[t; 4], &limits, &[ifc; 4], 0.25).unwrap();
            let b = collector_defocus_step(&[t + dt_up; 4], &limits, &[ifc; 4], 0.25).unwrap();
            for c in 0..4 {
                prop_assert!(b[c] <= a[c]);
                prop_assert!((0.0..=1.0).contains(&a[c]));
            }
        }

        #[test]
        fn filter_is_convex(raw in 0.0f64..1.0, prev in 0.0f64..1.0, dt in 1e-3f64..2000.0) {
            let y = filter_if(raw, prev, dt);
            prop_assert!(y >= raw.min(prev) - 1e-15 && y <= raw.max(prev) + 1e-15);
        }
    }
}
