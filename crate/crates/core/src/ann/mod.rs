//! Neural imitation of the auction allocator: network, scaling,
//! Levenberg–Marquardt training, datasets and inference.

pub mod dataset;
pub mod linalg;
pub mod lm;
pub mod mlp;
pub mod model;
pub mod scaler;

pub use dataset::{ControllerState, Dataset, Split, N_INPUTS, N_LOOPS, N_OUTPUTS};
pub use lm::{lm_train, History, LmConfig, Samples, StopReason};
pub use mlp::{Activation, Mlp, STANDARD_SIZES};
pub use model::{AnnModel, InferenceBuffers, MIN_NET_APERTURE};
pub use scaler::Scaler;

use std::path::PathBuf;

use rand::Rng;

use crate::error::{Error, Result};
use crate::harness::config::Config;
use crate::harness::profile::{campaign_days, Profile};
use crate::harness::rng::substream;
use crate::harness::scenario::{sample_faults, ControllerKind, FaultRanges, PlantKind, Scenario};
use crate::harness::{run_campaign, RunOutput};

/// Closed-loop runs that produce the imitation dataset: every profile is
/// simulated with `fault_sets` independently drawn fault sets.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub profiles: Vec<Profile>,
    pub fault_sets: usize,
    pub ranges: FaultRanges,
    /// Template for every run; profile, faults, plant and controller are
    /// overwritten.
    pub template: Scenario,
    pub seed: u64,
    pub threads: usize,
}

impl Campaign {
    /// `campaign.*` keys; the remaining keys describe the template scenario.
    /// Profiles come from `campaign.profiles` (paths) or, failing that,
    /// `campaign.days` synthetic days.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let seed = cfg.get("campaign.seed", 0u64)?;
        let profiles = match cfg.get_list::<String>("campaign.profiles")? {
            Some(paths) => {
                let resolved: Vec<PathBuf> = paths.iter().map(|p| cfg.resolve(p)).collect();
                let missing: Vec<PathBuf> = resolved.iter().filter(|p| !p.exists()).cloned().collect();
                if !missing.is_empty() {
                    return Err(Error::MissingFiles(missing));
                }
                resolved.iter().map(|p| Profile::load(p)).collect::<Result<Vec<_>>>()?
            }
            None => campaign_days(cfg.get("campaign.days", 27usize)?, cfg.get("campaign.days_seed", seed)?)?,
        };
        Ok(Self {
            profiles,
            fault_sets: cfg.get("campaign.fault_sets", 5usize)?,
            ranges: FaultRanges {
                kopt: (cfg.get("faults.kopt_min", 0.85)?, cfg.get("faults.kopt_max", 1.0)?),
                hl: (cfg.get("faults.hl_min", 0.0)?, cfg.get("faults.hl_max", 1.0)?),
            },
            template: Scenario::from_config(cfg)?,
            seed,
            threads: cfg.get("campaign.threads", 0usize)?,
        })
    }

    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut seeds = substream(self.seed, "campaign");
        let n_loops = self.template.loops.len();
        let mut out = Vec::with_capacity(self.profiles.len() * self.fault_sets);
        for (p, profile) in self.profiles.iter().enumerate() {
            for f in 0..self.fault_sets {
                let run_seed: u64 = seeds.gen();
                let mut s = self
                    .template
                    .clone()
                    .with_faults(&sample_faults(run_seed, n_loops, &self.ranges));
                s.profile = profile.clone();
                s.name = format!("profile{p}-faults{f}");
                s.seed = run_seed;
                s.run_id = (p * self.fault_sets + f) as u32;
                s.plant = PlantKind::Static;
                s.controller = ControllerKind::Auction;
                s.record_dataset = true;
                out.push(s);
            }
        }
        out
    }
}

/// Simulate the campaign with the static plant under the auction allocator,
/// concatenate the recorded controller samples in run order and split them
/// 70/15/15 with the campaign seed.
pub fn generate_dataset(campaign: &Campaign) -> Result<Dataset> {
    if campaign.profiles.is_empty() || campaign.fault_sets == 0 {
        return Err(Error::Config("dataset campaign has no runs".into()));
    }
    let scenarios = campaign.scenarios();
    let n = campaign.template.loops.len();
    let mut ds = Dataset::new(3 * n + 5, n);
    for (s, result) in scenarios.iter().zip(run_campaign(&scenarios, campaign.threads)?) {
        let RunOutput { metrics, dataset, .. } = result?;
        if let Some(f) = metrics.failure {
            return Err(Error::Divergence(format!("{} at t = {} s: {}", s.name, f.time, f.message)));
        }
        ds.append(dataset.expect("recording was requested"))?;
    }
    ds.shuffle_split(campaign.seed);
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lm: LmConfig,
    pub sizes: Vec<usize>,
    pub seed: u64,
}

impl TrainConfig {
    /// `train.*` keys.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let d = LmConfig::default();
        let lm = LmConfig {
            mu0: cfg.get("train.mu0", d.mu0)?,
            mu_increase: cfg.get("train.mu_increase", d.mu_increase)?,
            mu_decrease: cfg.get("train.mu_decrease", d.mu_decrease)?,
            mu_max: cfg.get("train.mu_max", d.mu_max)?,
            max_epochs: cfg.get("train.max_epochs", d.max_epochs)?,
            min_gradient: cfg.get("train.min_gradient", d.min_gradient)?,
            max_val_checks: cfg.get("train.max_val_checks", d.max_val_checks)?,
            chunk_samples: cfg.get("train.chunk_samples", d.chunk_samples)?,
        };
        lm.validate()?;
        Ok(Self {
            lm,
            sizes: cfg.get_list("train.sizes")?.unwrap_or_else(|| STANDARD_SIZES.to_vec()),
            seed: cfg.get("train.seed", 0u64)?,
        })
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lm: LmConfig::default(),
            sizes: STANDARD_SIZES.to_vec(),
            seed: 0,
        }
    }
}

/// Errors on scaled outputs, plus correlation between prediction and target.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mse: f64,
    /// Pearson correlation over all outputs pooled.
    pub correlation: Option<f64>,
    /// Per output; `None` where the target is constant.
    pub per_output: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: History,
    pub train: Evaluation,
    pub val: Evaluation,
    pub test: Evaluation,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Evaluate `model` on the samples `indices` of `ds`, in scaled output units.
pub fn evaluate(model: &AnnModel, ds: &Dataset, indices: &[usize]) -> Result<Evaluation> {
    if indices.is_empty() {
        return Ok(Evaluation {
            mse: f64::NAN,
            correlation: None,
            per_output: vec![None; ds.n_out],
        });
    }
    let n_out = ds.n_out;
    let mut buf = model.buffers();
    let mut pred = Vec::with_capacity(indices.len() * n_out);
    let mut target = Vec::with_capacity(indices.len() * n_out);
    for &i in indices {
        let raw = model.predict_raw(ds.input(i), &mut buf)?;
        for (o, (&p, &y)) in raw.iter().zip(ds.output(i)).enumerate() {
            pred.push(model.output_scaler.scale_one(o, p));
            target.push(model.output_scaler.scale_one(o, y));
        }
    }
    let mse = pred.iter().zip(&target).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / pred.len() as f64;
    let per_output = (0..n_out)
        .map(|o| {
            let col = |v: &[f64]| v.iter().skip(o).step_by(n_out).cloned().collect::<Vec<_>>();
            pearson(&col(&pred), &col(&target))
        })
        .collect();
    Ok(Evaluation {
        mse,
        correlation: pearson(&pred, &target),
        per_output,
    })
}

/// Fit scalers on the training split, initialise the network from the
/// `weight-init` substream and train it with Levenberg–Marquardt, using the
/// validation split for early stopping.
pub fn train_model(ds: &Dataset, cfg: &TrainConfig) -> Result<(AnnModel, TrainReport)> {
    let split = &ds.split;
    if split.train.is_empty() {
        return Err(Error::Training("dataset has no training split".into()));
    }
    if cfg.sizes.first() != Some(&ds.n_in) || cfg.sizes.last() != Some(&ds.n_out) {
        return Err(Error::Shape {
            expected: ds.n_in,
            got: cfg.sizes.first().copied().unwrap_or(0),
        });
    }
    let (x_train, y_train) = ds.gather(&split.train);
    let input_scaler = Scaler::fit(&x_train, ds.n_in)?;
    let output_scaler = Scaler::fit(&y_train, ds.n_out)?;
    let scaled = |idx: &[usize]| {
        let (x, y) = ds.gather(idx);
        (input_scaler.scale_rows(&x), output_scaler.scale_rows(&y))
    };
    let (xt, yt) = scaled(&split.train);
    let (xv, yv) = scaled(&split.val);
    let train = Samples::new(&xt, &yt, ds.n_in, ds.n_out)?;
    let val = Samples::new(&xv, &yv, ds.n_in, ds.n_out)?;

    let mut net = Mlp::new(&cfg.sizes, Activation::Tanh, Activation::Linear)?;
    net.init_uniform(&mut substream(cfg.seed, "weight-init"));
    let (net, history) = lm_train(&net, &train, (!val.is_empty()).then_some(&val), &cfg.lm)?;
    let model = AnnModel::new(net, input_scaler, output_scaler, cfg.seed)?;
    let report = TrainReport {
        history,
        train: evaluate(&model, ds, &split.train)?,
        val: evaluate(&model, ds, &split.val)?,
        test: evaluate(&model, ds, &split.test)?,
    };
    Ok((model, report))
}
