//! Market-based allocation of a sector flow among parallel loops.
//!
//! Each loop is probed with one flow quantum more and one less; the power
//! changes become demand and supply prices, the mean of all prices is the
//! auction price, and every loop whose demand (supply) price beats it buys
//! (sells) flow. Flows are then saturated and rescaled to the sector total.
//! The resulting targets are turned into valve apertures by an iterative
//! inversion of the proportional valve split.
//!
//! Public flows are in m³/s. The auction itself runs in [`FlowUnit`], which
//! sets the unit of the quantum and of the update gain.

use crate::defocus::{continuous_defocus, lumped_defocus, LUMPED_T_MAX};
use crate::error::{Error, Result};
use crate::models::{thermal_power, LoopParams, FLOW_FLOOR};

/// Flow unit the quantum and the update gain are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowUnit {
    CubicMetresPerSecond,
    CubicMetresPerHour,
}

impl FlowUnit {
    /// Number of units in one m³/s.
    pub fn per_si(self) -> f64 {
        match self {
            FlowUnit::CubicMetresPerSecond => 1.0,
            FlowUnit::CubicMetresPerHour => 3600.0,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "m3/s" | "m3s" => Some(FlowUnit::CubicMetresPerSecond),
            "m3/h" | "m3h" => Some(FlowUnit::CubicMetresPerHour),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FlowUnit::CubicMetresPerSecond => "m3/s",
            FlowUnit::CubicMetresPerHour => "m3/h",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionConfig {
    /// Auction rounds per allocation.
    pub n_it: usize,
    /// Iterations of the valve inversion.
    pub n_it_v: usize,
    /// Probe quantum, in `flow_unit`.
    pub delta_q: f64,
    /// Update gain, `flow_unit` per W.
    pub gain: f64,
    /// Gain of the valve inversion, applied to the flow error relative to the
    /// flow per unit of total aperture.
    pub valve_gain: f64,
    /// Lowest flow of any loop, m³/s.
    pub q_floor: f64,
    /// Sample time of the sector flow, s.
    pub t_s1: f64,
    /// Sample time of the allocator, s.
    pub t_s2: f64,
    pub flow_unit: FlowUnit,
    /// Start the valve inversion from the current apertures instead of fully
    /// open valves (see [`refine_valves`]).
    pub warm_inversion: bool,
}

impl Default for AuctionConfig {
    fn default() -> Self {
        Self {
            n_it: 10,
            n_it_v: 150,
            delta_q: 1.0,
            gain: 1e-5,
            valve_gain: 0.25,
            q_floor: FLOW_FLOOR,
            t_s1: 30.0,
            t_s2: 180.0,
            flow_unit: FlowUnit::CubicMetresPerHour,
            warm_inversion: false,
        }
    }
}

impl AuctionConfig {
    /// The quantum and gain taken literally in SI units.
    pub fn si() -> Self {
        Self {
            flow_unit: FlowUnit::CubicMetresPerSecond,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("delta_q", self.delta_q),
            ("gain", self.gain),
            ("valve_gain", self.valve_gain),
            ("q_floor", self.q_floor),
            ("t_s1", self.t_s1),
            ("t_s2", self.t_s2),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("auction {name} must be positive, got {v}")));
            }
        }
        if self.q_floor * self.flow_unit.per_si() >= self.delta_q {
            return Err(Error::Config("auction q_floor must be below delta_q".into()));
        }
        let ratio = self.t_s2 / self.t_s1;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(Error::Config(format!(
                "t_s2 = {} is not a multiple of t_s1 = {}",
                self.t_s2, self.t_s1
            )));
        }
        Ok(())
    }

    fn floor_in_unit(&self) -> f64 {
        self.q_floor * self.flow_unit.per_si()
    }
}

/// Power oracle of the auction: thermal power of loop `index` at flow `q`
/// (m³/s).
pub trait PowerPredictor {
    fn predict(&self, index: usize, q: f64) -> Result<f64>;
}

impl<F> PowerPredictor for F
where
    F: Fn(usize, f64) -> Result<f64>,
{
    fn predict(&self, index: usize, q: f64) -> Result<f64> {
        self(index, q)
    }
}

/// How the predictor limits the outlet temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefocusModel {
    /// Exact intercept factor pinning the outlet at the ceiling.
    Continuous,
    /// The plant's 0.01 intercept factor grid.
    Grid,
}

/// Static-model predictor: outlet temperature from the static closed form
/// with per-loop defocusing, power with the flow penalty.
#[derive(Debug, Clone)]
pub struct StaticPredictor<'a> {
    pub loops: &'a [LoopParams],
    pub t_in: f64,
    pub t_a: f64,
    /// Geometric efficiency times direct irradiance, W/m².
    pub i_eff: f64,
    pub t_max: f64,
    pub defocus: DefocusModel,
}

impl<'a> StaticPredictor<'a> {
    pub fn new(loops: &'a [LoopParams], t_in: f64, t_a: f64, i_eff: f64) -> Self {
        Self {
            loops,
            t_in,
            t_a,
            i_eff,
            t_max: LUMPED_T_MAX,
            defocus: DefocusModel::Continuous,
        }
    }
}

impl PowerPredictor for StaticPredictor<'_> {
    fn predict(&self, index: usize, q: f64) -> Result<f64> {
        let limit = match self.defocus {
            DefocusModel::Continuous => continuous_defocus,
            DefocusModel::Grid => lumped_defocus,
        };
        let d = limit(&self.loops[index], self.t_in, self.t_a, self.i_eff, q, self.t_max)?;
        Ok(thermal_power(q, self.t_in, d.t_out))
    }
}

/// Sum that does not depend on the order of its terms.
fn canonical_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Probe flows `q ± Δq`, with the lower probe held at the floor.
/// All values in `cfg.flow_unit`.
pub fn probe_flows(q: f64, cfg: &AuctionConfig) -> (f64, f64) {
    (q + cfg.delta_q, (q - cfg.delta_q).max(cfg.floor_in_unit()))
}

/// Powers and prices of one auction round. Flows in `flow_unit`, powers in W,
/// prices in W per `flow_unit`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionBook {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub p_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
    pub p_demand: Vec<f64>,
    pub p_supply: Vec<f64>,
    pub c_demand: Vec<f64>,
    pub c_supply: Vec<f64>,
    pub c_au: f64,
}

impl AuctionBook {
    pub fn form(q: Vec<f64>, p: Vec<f64>, p_plus: Vec<f64>, p_minus: Vec<f64>, delta_q: f64) -> Self {
        let p_demand: Vec<f64> = p_plus.iter().zip(&p).map(|(a, b)| a - b).collect();
        let p_supply: Vec<f64> = p_minus.iter().zip(&p).map(|(a, b)| a - b).collect();
        let c_demand = p_demand.iter().map(|v| v / delta_q).collect();
        let c_supply = p_supply.iter().map(|v| v / delta_q).collect();
        let mut book = Self {
            q,
            p,
            p_plus,
            p_minus,
            p_demand,
            p_supply,
            c_demand,
            c_supply,
            c_au: 0.0,
        };
        book.c_au = auction_price(&book, delta_q);
        book
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Mean of all demand and supply powers per quantum.
pub fn auction_price(book: &AuctionBook, delta_q: f64) -> f64 {
    let n = book.p_demand.len();
    if n == 0 {
        return 0.0;
    }
    let mut all = book.p_demand.clone();
    all.extend_from_slice(&book.p_supply);
    canonical_sum(&all) / (2.0 * n as f64 * delta_q)
}

/// Decision of one loop in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bid {
    Buy,
    Sell,
    Hold,
}

pub fn bid(book: &AuctionBook, i: usize) -> Bid {
    let (p, pp, pm) = (book.p[i], book.p_plus[i], book.p_minus[i]);
    if book.c_demand[i] > book.c_au && pp > p && pp > pm {
        Bid::Buy
    } else if book.c_supply[i] > book.c_au && pm > p && pm > pp {
        Bid::Sell
    } else {
        Bid::Hold
    }
}

/// Saturate into `[floor, total]`, rescale to the total and lift any flow
/// the rescaling pushed under the floor, shrinking the others to compensate.
fn conserve(q: &mut [f64], total: f64, floor: f64) {
    for v in q.iter_mut() {
        *v = v.clamp(floor, total);
    }
    let mut pinned = vec![false; q.len()];
    loop {
        let free: Vec<f64> = q.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(v, _)| *v).collect();
        let n_pinned = pinned.iter().filter(|&&p| p).count();
        let target = total - n_pinned as f64 * floor;
        let scale = target / canonical_sum(&free);
        let mut changed = false;
        for (v, p) in q.iter_mut().zip(pinned.iter_mut()) {
            if *p {
                continue;
            }
            *v *= scale;
            if *v < floor {
                *v = floor;
                *p = true;
                changed = true;
            }
        }
        if !changed || pinned.iter().all(|&p| p) {
            break;
        }
    }
}

fn check_total(q_total: f64, n: usize, floor: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::Degenerate("no loops to allocate".into()));
    }
    if !(q_total >= n as f64 * floor) || !q_total.is_finite() {
        return Err(Error::Domain {
            quantity: "sector flow",
            value: q_total,
            min: n as f64 * floor,
            max: f64::INFINITY,
        });
    }
    Ok(())
}

/// One auction round on flows in m³/s. Returns the new flows and the book the
/// decisions were taken from. On a predictor failure nothing is updated.
pub fn auction_round<P: PowerPredictor + ?Sized>(
    q: &[f64],
    q_total: f64,
    cfg: &AuctionConfig,
    predictor: &P,
) -> Result<(Vec<f64>, AuctionBook)> {
    let n = q.len();
    check_total(q_total, n, cfg.q_floor)?;
    let u = cfg.flow_unit.per_si();
    let mut p = Vec::with_capacity(n);
    let mut p_plus = Vec::with_capacity(n);
    let mut p_minus = Vec::with_capacity(n);
    let q_u: Vec<f64> = q.iter().map(|v| v * u).collect();
    for (i, &qi) in q_u.iter().enumerate() {
        let (qp, qm) = probe_flows(qi, cfg);
        let predict = |flow: f64| {
            predictor.predict(i, flow / u).map_err(|e| Error::Predictor {
                index: i,
                source: Box::new(e),
            })
        };
        p.push(predict(qi)?);
        p_plus.push(predict(qp)?);
        p_minus.push(predict(qm)?);
    }
    let book = AuctionBook::form(q_u, p, p_plus, p_minus, cfg.delta_q);

    let mut next: Vec<f64> = (0..n)
        .map(|i| match bid(&book, i) {
            Bid::Buy => book.q[i] + cfg.gain * (book.p_demand[i] - book.c_au),
            Bid::Sell => book.q[i] - cfg.gain * (book.p_supply[i] - book.c_au),
            Bid::Hold => book.q[i],
        })
        .collect();
    if (0..n).all(|i| bid(&book, i) == Bid::Hold) {
        return Ok((q.to_vec(), book));
    }
    conserve(&mut next, q_total * u, cfg.floor_in_unit());
    for v in next.iter_mut() {
        *v = (*v / u).max(cfg.q_floor);
    }
    Ok((next, book))
}

/// `n_it` auction rounds starting from the proportional split of `valves`.
pub fn allocate<P: PowerPredictor + ?Sized>(
    valves: &ValveSet,
    q_total: f64,
    cfg: &AuctionConfig,
    predictor: &P,
) -> Result<Vec<f64>> {
    let mut q = flows_from_valves(valves, q_total)?;
    for _ in 0..cfg.n_it {
        q = auction_round(&q, q_total, cfg, predictor)?.0;
    }
    Ok(q)
}

/// Valve apertures, one per loop, in (0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ValveSet {
    pub apertures: Vec<f64>,
}

impl ValveSet {
    pub fn fully_open(n: usize) -> Self {
        Self {
            apertures: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.apertures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apertures.is_empty()
    }
}

/// Proportional split of the sector flow by valve aperture.
pub fn flows_from_valves(valves: &ValveSet, q_total: f64) -> Result<Vec<f64>> {
    let sum = canonical_sum(&valves.apertures);
    if valves.is_empty() || !(sum > 0.0) {
        return Err(Error::Degenerate("valve apertures sum to zero".into()));
    }
    Ok(valves.apertures.iter().map(|v| q_total * (v / sum)).collect())
}

/// Apertures realising `targets`, iterated from fully open valves or, with
/// `cfg.warm_inversion`, from `current`.
pub fn invert_valves(current: &ValveSet, targets: &[f64], q_total: f64, cfg: &AuctionConfig) -> Result<ValveInversion> {
    if cfg.warm_inversion {
        refine_valves(current, targets, q_total, cfg)
    } else {
        valves_from_flows(targets, q_total, cfg)
    }
}

/// Outcome of the valve inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct ValveInversion {
    pub valves: ValveSet,
    /// Largest per-loop flow mismatch, m³/s.
    pub residual: f64,
    /// Whether every loop is within 1 % of the sector flow of its target.
    pub converged: bool,
}

/// Smallest aperture the inversion will command.
pub const MIN_APERTURE: f64 = 1e-6;

/// Apertures whose proportional split reproduces `targets`.
///
/// The loop with the largest target is held fully open. The others start
/// open and move by `valve_gain` times their flow error, measured relative to
/// the flow one unit of aperture currently passes.
pub fn valves_from_flows(targets: &[f64], q_total: f64, cfg: &AuctionConfig) -> Result<ValveInversion> {
    refine_valves(&ValveSet::fully_open(targets.len()), targets, q_total, cfg)
}

/// [`valves_from_flows`] iterating from the apertures `start` instead of
/// fully open valves. `start` is rescaled so the fixed loop sits at 1.
///
/// From fully open the common mode of the free apertures settles slowly,
/// leaving errors near 1e-3 after the default iterations; a closed loop
/// that starts from its current apertures only has to cover the change.
pub fn refine_valves(start: &ValveSet, targets: &[f64], q_total: f64, cfg: &AuctionConfig) -> Result<ValveInversion> {
    check_total(q_total, targets.len(), 0.0)?;
    if start.len() != targets.len() {
        return Err(Error::Shape {
            expected: targets.len(),
            got: start.len(),
        });
    }
    let fixed = targets
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("nonempty targets");
    let anchor = start.apertures[fixed];
    if !(anchor > 0.0) {
        return Err(Error::Degenerate(format!("start aperture of loop {fixed} is {anchor}")));
    }
    let mut valves = ValveSet {
        apertures: start
            .apertures
            .iter()
            .map(|v| (v / anchor).clamp(MIN_APERTURE, 1.0))
            .collect(),
    };
    valves.apertures[fixed] = 1.0;
    for _ in 0..cfg.n_it_v {
        let flows = flows_from_valves(&valves, q_total)?;
        let per_aperture = q_total / canonical_sum(&valves.apertures);
        for (i, v) in valves.apertures.iter_mut().enumerate() {
            let error = targets[i] - flows[i];
            // errors at rounding level would only make equal loops drift apart
            if i != fixed && error.abs() > 1e-12 * q_total {
                *v = (*v + cfg.valve_gain * error / per_aperture).clamp(MIN_APERTURE, 1.0);
            }
        }
    }
    let flows = flows_from_valves(&valves, q_total)?;
    let residual = flows
        .iter()
        .zip(targets)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let converged = residual <= 0.01 * q_total;
    if !converged {
        log::warn!("valve inversion left a residual of {residual:.3e} m3/s");
    }
    Ok(ValveInversion {
        valves,
        residual,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn field(alpha_kopt: &[f64]) -> Vec<LoopParams> {
        alpha_kopt
            .iter()
            .map(|&a| LoopParams::default().with_faults(a, 1.0))
            .collect()
    }

    #[test]
    fn probe_examples() {
        let si = AuctionConfig::si();
        assert_eq!(probe_flows(5.0, &si), (6.0, 4.0));
        assert_eq!(probe_flows(0.5, &si), (1.5, 1e-6));
        assert_eq!(probe_flows(1e-6, &si), (1e-6 + 1.0, 1e-6));
        let hourly = AuctionConfig::default();
        assert_eq!(probe_flows(40.0, &hourly), (41.0, 39.0));
        assert_eq!(probe_flows(0.5, &hourly).1, 1e-6 * 3600.0);
    }

    #[test]
    fn price_examples() {
        let zero = AuctionBook::form(vec![1.0; 3], vec![0.0; 3], vec![0.0; 3], vec![0.0; 3], 1.0);
        assert_eq!(zero.c_au, 0.0);
        let book = AuctionBook::form(
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![10.0, 20.0],
            vec![-5.0, -5.0],
            1.0,
        );
        assert_eq!(book.c_au, 5.0);
        assert_eq!(book.p_demand, vec![10.0, 20.0]);
        assert_eq!(book.c_supply, vec![-5.0, -5.0]);
        let same = AuctionBook::form(vec![1.0; 4], vec![3.0; 4], vec![7.0; 4], vec![1.0; 4], 2.0);
        assert_eq!(same.c_au, 0.5 * (same.c_demand[0] + same.c_supply[0]));
    }

    #[test]
    fn ties_hold() {
        let book = AuctionBook::form(vec![1.0; 2], vec![0.0; 2], vec![5.0; 2], vec![-5.0, -5.0], 1.0);
        // c_demand = 5 > c_au = 0, so both buy
        assert_eq!(bid(&book, 0), Bid::Buy);
        let tied = AuctionBook::form(vec![1.0; 2], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2], 1.0);
        assert_eq!(bid(&tied, 0), Bid::Hold);
        // equal probe powers never buy or sell
        let flat = AuctionBook::form(vec![1.0; 2], vec![0.0; 2], vec![4.0, 1.0], vec![4.0, 1.0], 1.0);
        assert_eq!(bid(&flat, 0), Bid::Hold);
    }

    #[test]
    fn homogeneous_field_is_invariant() {
        let loops = field(&[0.95; 10]);
        let pred = StaticPredictor::new(&loops, 293.0, 25.0, 900.0);
        let q_total = 0.12;
        let mut q = vec![q_total / 10.0; 10];
        for _ in 0..10 {
            let next = auction_round(&q, q_total, &AuctionConfig::default(), &pred).unwrap().0;
            let spread = next.iter().cloned().fold(f64::MIN, f64::max) - next.iter().cloned().fold(f64::MAX, f64::min);
            assert!(spread <= 1e-9 * q_total);
            q = next;
        }
        assert_relative_eq!(q.iter().sum::<f64>(), q_total, max_relative = 1e-12);
    }

    #[test]
    fn better_loop_gets_more_flow() {
        let loops = field(&[1.0, 0.85]);
        // the first loop saturates, the second does not
        let pred = StaticPredictor::new(&loops, 293.0, 25.0, 800.0);
        let q = allocate(&ValveSet::fully_open(2), 0.02, &AuctionConfig::default(), &pred).unwrap();
        assert!(q[0] > q[1], "{q:?}");
    }

    #[test]
    fn zero_rounds_return_initial_split() {
        let cfg = AuctionConfig {
            n_it: 0,
            ..Default::default()
        };
        let pred = |_: usize, _: f64| -> Result<f64> { unreachable!() };
        let v = ValveSet {
            apertures: vec![1.0, 1.0, 0.5],
        };
        assert_eq!(allocate(&v, 10.0, &cfg, &pred).unwrap(), vec![4.0, 4.0, 2.0]);
    }

    #[test]
    fn predictor_failure_names_loop() {
        let pred = |i: usize, _: f64| -> Result<f64> {
            if i == 2 {
                Err(Error::Degenerate("boom".into()))
            } else {
                Ok(1.0)
            }
        };
        let err = auction_round(&[0.01; 4], 0.04, &AuctionConfig::default(), &pred).unwrap_err();
        assert!(matches!(err, Error::Predictor { index: 2, .. }));
    }

    #[test]
    fn rescaling_respects_floor() {
        // a steep predictor pushes one loop hard; the others must stay above the floor
        let pred = |i: usize, q: f64| -> Result<f64> { Ok(if i == 0 { 1e9 * q } else { -1e9 * q }) };
        let cfg = AuctionConfig::si();
        let q_total = 0.05;
        let (q, _) = auction_round(&[0.01; 5], q_total, &cfg, &pred).unwrap();
        assert!(q.iter().all(|&v| v >= 1e-6));
        assert_relative_eq!(q.iter().sum::<f64>(), q_total, max_relative = 1e-12);
        assert!(q[0] > 0.04);
    }

    #[test]
    fn valve_examples() {
        let v = ValveSet {
            apertures: vec![1.0, 1.0, 0.5],
        };
        assert_eq!(flows_from_valves(&v, 10.0).unwrap(), vec![4.0, 4.0, 2.0]);
        assert_eq!(flows_from_valves(&ValveSet::fully_open(4), 8.0).unwrap(), vec![2.0; 4]);
        let single = ValveSet { apertures: vec![0.3] };
        assert_relative_eq!(flows_from_valves(&single, 7.0).unwrap()[0], 7.0, max_relative = 1e-15);
        let zero = ValveSet { apertures: vec![0.0; 3] };
        assert!(matches!(flows_from_valves(&zero, 1.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn inversion_examples() {
        let cfg = AuctionConfig::default();
        let eq = valves_from_flows(&[0.012; 10], 0.12, &cfg).unwrap();
        assert_eq!(eq.valves.apertures, vec![1.0; 10]);
        assert!(eq.converged);

        let q = 0.03;
        let two = valves_from_flows(&[2.0 * q / 3.0, q / 3.0], q, &cfg).unwrap();
        assert_eq!(two.valves.apertures[0], 1.0);
        assert_relative_eq!(two.valves.apertures[1], 0.5, max_relative = 1e-9);
    }

    #[test]
    fn warm_start_holds_and_tightens() {
        let cfg = AuctionConfig::default();
        let v = ValveSet {
            apertures: vec![0.93, 0.87, 0.94, 1.0, 0.9, 0.94, 0.92, 0.9, 0.99, 0.89],
        };
        let flows = flows_from_valves(&v, 0.15).unwrap();
        assert_eq!(refine_valves(&v, &flows, 0.15, &cfg).unwrap().valves, v);

        let cold = valves_from_flows(&flows, 0.15, &cfg).unwrap().valves;
        let err = |w: &ValveSet| w.apertures.iter().zip(&v.apertures).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err(&cold) > 1e-4);
        // a small change from the current apertures lands much closer
        let mut moved = flows.clone();
        moved[1] += 2e-4;
        moved[4] -= 2e-4;
        let warm = refine_valves(&v, &moved, 0.15, &cfg).unwrap().valves;
        let exact = flows_from_valves(&warm, 0.15).unwrap();
        let resid = exact.iter().zip(&moved).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(resid < 1e-6, "{resid}");
        // the fixed loop moves to the new largest target
        let mut shifted = flows.clone();
        shifted.swap(0, 3);
        let w = refine_valves(&v, &shifted, 0.15, &cfg).unwrap().valves;
        assert_eq!(w.apertures[0], 1.0);
    }

    #[test]
    fn si_quantum_saturates_allocation() {
        // with a quantum far above loop flows every probe saturates the loops
        let loops = field(&[1.0, 0.85]);
        // the first loop saturates, the second does not
        let pred = StaticPredictor::new(&loops, 293.0, 25.0, 800.0);
        let q = allocate(&ValveSet::fully_open(2), 0.02, &AuctionConfig::si(), &pred).unwrap();
        assert_relative_eq!(q.iter().sum::<f64>(), 0.02, max_relative = 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(AuctionConfig::default().validate().is_ok());
        let bad = AuctionConfig {
            t_s2: 200.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AuctionConfig {
            delta_q: 1e-7,
            flow_unit: FlowUnit::CubicMetresPerSecond,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn round_conserves_flow(
            alphas in proptest::collection::vec(0.85f64..1.0, 2..11),
            shares in proptest::collection::vec(0.05f64..1.0, 11),
            q_total in 0.02f64..0.2,
            dni in 0.0f64..1000.0,
        ) {
            let n = alphas.len();
            let loops = field(&alphas);
            let pred = StaticPredictor::new(&loops, 293.0, 25.0, dni);
            let v = ValveSet { apertures: shares[..n].to_vec() };
            let q = allocate(&v, q_total, &AuctionConfig::default(), &pred).unwrap();
            prop_assert!((q.iter().sum::<f64>() - q_total).abs() <= 1e-9 * q_total);
            prop_assert!(q.iter().all(|&x| x >= 1e-6));
        }

        #[test]
        fn round_is_permutation_equivariant(
            alphas in proptest::collection::vec(0.85f64..1.0, 4),
            rot in 1usize..4,
        ) {
            let loops = field(&alphas);
            let mut rotated = loops.clone();
            rotated.rotate_left(rot);
            let cfg = AuctionConfig::default();
            let a = allocate(&ValveSet::fully_open(4), 0.048, &cfg, &StaticPredictor::new(&loops, 293.0, 25.0, 950.0)).unwrap();
            let b = allocate(&ValveSet::fully_open(4), 0.048, &cfg, &StaticPredictor::new(&rotated, 293.0, 25.0, 950.0)).unwrap();
            let mut a_rot = a.clone();
            a_rot.rotate_left(rot);
            prop_assert_eq!(a_rot, b);
        }

        #[test]
        fn inversion_round_trips(shares in proptest::collection::vec(0.3f64..1.0, 2..11), q_total in 0.02f64..0.2) {
            let sum: f64 = shares.iter().sum();
            let targets: Vec<f64> = shares.iter().map(|s| q_total * s / sum).collect();
            let inv = valves_from_flows(&targets, q_total, &AuctionConfig::default()).unwrap();
            prop_assert!(inv.converged);
            prop_assert_eq!(inv.valves.apertures.iter().cloned().fold(0.0, f64::max), 1.0);
            let flows = flows_from_valves(&inv.valves, q_total).unwrap();
            for (f, t) in flows.iter().zip(&targets) {
                prop_assert!((f - t).abs() <= 0.01 * q_total);
            }
        }
    }
}
