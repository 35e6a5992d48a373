use std::time::Instant;

use super::linalg::{accumulate_normal, cholesky_in_place, cholesky_solve, symmetrize_from_upper};
use super::mlp::Mlp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub mu0: f64,
    pub mu_increase: f64,
    pub mu_decrease: f64,
    pub mu_max: f64,
    pub max_epochs: usize,
    pub min_gradient: f64,
    pub max_val_checks: usize,
    /// Samples per Jacobian block; bounds memory at
    /// `chunk_samples · n_outputs · n_params` floats.
    pub chunk_samples: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            mu0: 1e-3,
            mu_increase: 10.0,
            mu_decrease: 0.1,
            mu_max: 1e10,
            max_epochs: 4000,
            min_gradient: 1e-7,
            max_val_checks: 6,
            chunk_samples: 256,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu0 > 0.0
            && self.mu_max > 0.0
            && self.min_gradient > 0.0
            && self.mu_decrease > 0.0
            && self.mu_decrease < 1.0
            && self.mu_increase > 1.0
            && self.max_val_checks > 0
            && self.chunk_samples > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid trainer settings {self:?}")))
        }
    }
}

/// Row-major inputs and targets, both already scaled.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub n_in: usize,
    pub n_out: usize,
}

impl<'a> Samples<'a> {
    pub fn new(x: &'a [f64], y: &'a [f64], n_in: usize, n_out: usize) -> Result<Self> {
        if n_in == 0 || n_out == 0 || !x.len().is_multiple_of(n_in) || !y.len().is_multiple_of(n_out) || x.len() / n_in != y.len() / n_out {
            return Err(Error::Shape {
                expected: x.len() / n_in.max(1) * n_out,
                got: y.len(),
            });
        }
        Ok(Self { x, y, n_in, n_out })
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.n_in
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Sum of squared errors of `net` over `data`.
pub fn sse(net: &Mlp, data: &Samples) -> f64 {
    let mut ws = net.workspace();
    data.x
        .chunks_exact(data.n_in)
        .zip(data.y.chunks_exact(data.n_out))
        .map(|(x, t)| {
            net.forward_ws(x, &mut ws)
                .iter()
                .zip(t)
                .map(|(y, t)| (t - y) * (t - y))
                .sum::<f64>()
        })
        .sum()
}

pub fn mse(net: &Mlp, data: &Samples) -> f64 {
    sse(net, data) / (data.len() * data.n_out).max(1) as f64
}

/// `JᵀJ` (full), `Jᵀe` and the SSE at the current parameters, with `J` the
/// Jacobian of the outputs and `e = t - y`.
pub fn normal_equations(net: &Mlp, data: &Samples, chunk_samples: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let p = net.n_params();
    let n_out = data.n_out;
    let mut jtj = vec![0.0; p * p];
    let mut jte = vec![0.0; p];
    let mut total = 0.0;
    let mut ws = net.workspace();
    let mut y = vec![0.0; n_out];
    let chunk = chunk_samples.min(data.len()).max(1);
    let mut jac = vec![0.0; chunk * n_out * p];
    let mut start = 0;
    while start < data.len() {
        let end = (start + chunk).min(data.len());
        for (r, s) in (start..end).enumerate() {
            let x = &data.x[s * data.n_in..(s + 1) * data.n_in];
            let t = &data.y[s * n_out..(s + 1) * n_out];
            let rows = &mut jac[r * n_out * p..(r + 1) * n_out * p];
            net.jacobian_ws(x, &mut ws, &mut y, rows);
            for k in 0..n_out {
                let e = t[k] - y[k];
                total += e * e;
                for (g, j) in jte.iter_mut().zip(&rows[k * p..(k + 1) * p]) {
                    *g += j * e;
                }
            }
        }
        let rows = (end - start) * n_out;
        accumulate_normal(&jac[..rows * p], rows, p, &mut jtj);
        start = end;
    }
    symmetrize_from_upper(&mut jtj, p);
    (jtj, jte, total)
}

/// Solve `(JᵀJ + μI) δ = Jᵀe`.
pub fn lm_step(jtj: &[f64], jte: &[f64], mu: f64) -> Result<Vec<f64>> {
    let p = jte.len();
    let mut a = jtj.to_vec();
    for i in 0..p {
        a[i * p + i] += mu;
    }
    cholesky_in_place(&mut a, p)?;
    let mut delta = jte.to_vec();
    cholesky_solve(&a, p, &mut delta);
    Ok(delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    MinGradient,
    MuMax,
    ValidationChecks,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mu: f64,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub gradient: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub stop: StopReason,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
}

/// Levenberg–Marquardt training on the summed squared error.
///
/// With validation data, training stops after `max_val_checks` consecutive
/// epochs without a new best validation error and returns the best weights.
pub fn lm_train(net: &Mlp, train: &Samples, val: Option<&Samples>, cfg: &LmConfig) -> Result<(Mlp, History)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if train.n_in != net.n_inputs() || train.n_out != net.n_outputs() {
        return Err(Error::Shape {
            expected: net.n_inputs(),
            got: train.n_in,
        });
    }
    let n_terms = (train.len() * train.n_out) as f64;
    let mut current = net.clone();
    let mut mu = cfg.mu0;
    let clock = Instant::now();
    let (mut jtj, mut jte, mut cur_sse) = normal_equations(&current, train, cfg.chunk_samples);
    let gradient = |jte: &[f64]| 2.0 * jte.iter().map(|g| g * g).sum::<f64>().sqrt() / n_terms;

    let val_mse = |n: &Mlp| val.map(|v| mse(n, v));
    let mut best = current.clone();
    let mut best_val = val_mse(&current);
    let mut best_epoch = 0;
    let mut fails = 0;
    let mut records = vec![EpochRecord {
        epoch: 0,
        mu,
        train_mse: cur_sse / n_terms,
        val_mse: best_val,
        gradient: gradient(&jte),
        seconds: clock.elapsed().as_secs_f64(),
    }];

    let mut stop = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        if gradient(&jte) < cfg.min_gradient {
            stop = StopReason::MinGradient;
            break;
        }
        let mut accepted = None;
        while mu <= cfg.mu_max {
            let delta = match lm_step(&jtj, &jte, mu) {
                Ok(d) => d,
                Err(e) => {
                    if mu * cfg.mu_increase > cfg.mu_max {
                        return Err(Error::Training(format!(
                            "normal equations not positive definite at mu = {mu:e} (epoch {epoch}): {e}"
                        )));
                    }
                    mu *= cfg.mu_increase;
                    continue;
                }
            };
            let mut trial = current.clone();
            for (w, d) in trial.params_mut().iter_mut().zip(&delta) {
                *w += d;
            }
            let trial_sse = sse(&trial, train);
            if trial_sse < cur_sse {
                mu *= cfg.mu_decrease;
                accepted = Some(trial);
                break;
            }
            mu *= cfg.mu_increase;
        }
        let Some(next) = accepted else {
            stop = StopReason::MuMax;
            break;
        };
        current = next;
        (jtj, jte, cur_sse) = normal_equations(&current, train, cfg.chunk_samples);

        let v = val_mse(&current);
        records.push(EpochRecord {
            epoch,
            mu,
            train_mse: cur_sse / n_terms,
            val_mse: v,
            gradient: gradient(&jte),
            seconds: clock.elapsed().as_secs_f64(),
        });
        log::debug!(
            "epoch {epoch}: mse {:.3e} val {:?} mu {mu:.1e}",
            cur_sse / n_terms,
            v
        );
        match (v, best_val) {
            (Some(v), Some(b)) if v >= b => {
                fails += 1;
                if fails >= cfg.max_val_checks {
                    stop = StopReason::ValidationChecks;
                    break;
                }
            }
            _ => {
                fails = 0;
                best = current.clone();
                best_val = v;
                best_epoch = epoch;
            }
        }
    }
    if val.is_none() {
        best = current;
        best_epoch = records.last().map(|r| r.epoch).unwrap_or(0);
    }
    Ok((
        best,
        History {
            records,
            stop,
            best_epoch,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::mlp::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_data(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
        let w = [0.7, -1.3, 0.25];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let row: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            y.push(w.iter().zip(&row).map(|(a, b)| a * b).sum::<f64>() + 0.4 + rng.gen_range(-0.05..0.05));
            x.extend(row);
        }
        (x, y)
    }

    #[test]
    fn linear_neuron_matches_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (x, y) = linear_data(&mut rng, 200);
        let data = Samples::new(&x, &y, 3, 1).unwrap();
        let mut net = Mlp::new(&[3, 1], Activation::Linear, Activation::Linear).unwrap();
        net.init_uniform(&mut rng);
        let (trained, history) = lm_train(&net, &data, None, &LmConfig::default()).unwrap();

        let design = nalgebra::DMatrix::from_fn(200, 4, |r, c| if c < 3 { x[r * 3 + c] } else { 1.0 });
        let rhs = nalgebra::DVector::from_column_slice(&y);
        let beta = (design.transpose() * &design)
            .cholesky()
            .unwrap()
            .solve(&(design.transpose() * rhs));
        for c in 0..3 {
            assert!((trained.weights(0)[c] - beta[c]).abs() < 1e-8);
        }
        assert!((trained.biases(0)[0] - beta[3]).abs() < 1e-8);
        assert_eq!(history.stop, StopReason::MinGradient);
    }

    #[test]
    fn zero_epochs_returns_initial_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, y) = linear_data(&mut rng, 20);
        let data = Samples::new(&x, &y, 3, 1).unwrap();
        let mut net = Mlp::new(&[3, 4, 1], Activation::Tanh, Activation::Linear).unwrap();
        net.init_uniform(&mut rng);
        let cfg = LmConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let (out, h) = lm_train(&net, &data, None, &cfg).unwrap();
        assert_eq!(out, net);
        assert_eq!(h.records.len(), 1);
    }

    #[test]
    fn quadratic_toy_is_learned() {
        let x: Vec<f64> = (0..41).map(|i| -1.0 + i as f64 / 20.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let data = Samples::new(&x, &y, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Mlp::new(&[1, 10, 1], Activation::Tanh, Activation::Linear).unwrap();
        net.init_uniform(&mut rng);
        let cfg = LmConfig {
            max_epochs: 500,
            ..Default::default()
        };
        let (trained, h) = lm_train(&net, &data, None, &cfg).unwrap();
        assert!(mse(&trained, &data) < 1e-6, "{:?}", h.records.last());
    }

    #[test]
    fn sse_never_increases() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v).sin()).collect();
        let data = Samples::new(&x, &y, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = Mlp::new(&[1, 5, 1], Activation::Tanh, Activation::Linear).unwrap();
        net.init_uniform(&mut rng);
        let cfg = LmConfig {
            max_epochs: 60,
            ..Default::default()
        };
        let (_, h) = lm_train(&net, &data, None, &cfg).unwrap();
        assert!(h.records.windows(2).all(|w| w[1].train_mse <= w[0].train_mse));
    }

    #[test]
    fn large_mu_follows_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.chunks(2).map(|r| r[0] * r[1]).collect();
        let data = Samples::new(&x, &y, 2, 1).unwrap();
        let mut net = Mlp::new(&[2, 4, 1], Activation::Tanh, Activation::Linear).unwrap();
        net.init_uniform(&mut rng);
        let (jtj, jte, _) = normal_equations(&net, &data, 7);
        let delta = lm_step(&jtj, &jte, 1e8).unwrap();
        let dot: f64 = delta.iter().zip(&jte).map(|(a, b)| a * b).sum();
        let na = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = jte.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(dot / (na * nb) > 0.999);
    }

    #[test]
    fn early_stopping_returns_best_validation_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        // few noisy points and a large net overfit quickly
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
        let xv: Vec<f64> = (0..30).map(|i| -1.0 + i as f64 / 15.0).collect();
        let yv = xv.clone();
        let train = Samples::new(&x, &y, 1, 1).unwrap();
        let val = Samples::new(&xv, &yv, 1, 1).unwrap();
        let mut net = Mlp::new(&[1, 20, 1], Activation::Tanh, Activation::Linear).unwrap();
        net.init_uniform(&mut rng);
        let (best, h) = lm_train(&net, &train, Some(&val), &LmConfig::default()).unwrap();
        let best_val = h.records[h.best_epoch].val_mse.unwrap();
        assert!((mse(&best, &val) - best_val).abs() < 1e-15);
        let min_val = h.records.iter().filter_map(|r| r.val_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(best_val, min_val);
    }
}
