use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use ptc_core::ann::{evaluate, generate_dataset, train_model, AnnModel, Campaign, Dataset, Evaluation, TrainConfig};
use ptc_core::harness::{compare_runs, run_scenario, weighted_mean, Config, PlantKind, RunMetrics, Scenario};
use ptc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ptc", version, about = "Flow allocation and imitation control for parabolic-trough fields")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one day, or three weather classes given by `days`.
    Simulate(Common),
    /// Run the same scenario under two controllers and report the differences.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "none")]
        baseline: String,
        #[arg(long, default_value = "auction")]
        candidate: String,
    },
    /// Record auction decisions from a simulation campaign.
    GenDataset(Common),
    /// Train the imitation network on a recorded dataset.
    Train(Common),
    /// Test-split errors and closed-loop results of a trained network.
    EvalAnn(Common),
    /// Per-tick controller time of the auction against the network.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file.
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Override a configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<Config> {
        load_config(&self.config, &self.set)
    }

    fn prepare_out(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(&self.out)
    }
}

fn load_config(path: &Path, overrides: &[String]) -> Result<Config> {
    let mut cfg = Config::load(path)?;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim());
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

const CLASSES: [&str; 3] = ["sunny", "partly_cloudy", "cloudy"];

/// The scenarios of a config: one, or one per weather class when it lists
/// `days` (sunny, partly cloudy, cloudy day files).
fn day_configs(c: &Common) -> Result<Vec<(String, Config)>> {
    let cfg = c.load()?;
    let Some(days) = cfg.get_list::<String>("days")? else {
        return Ok(vec![("run".into(), cfg)]);
    };
    cfg.finish()?;
    if days.len() != 3 {
        return Err(Error::Config(format!("`days` lists {} files, expected 3 (sunny, partly cloudy, cloudy)", days.len())));
    }
    days.iter()
        .zip(CLASSES)
        .map(|(d, class)| Ok((class.to_string(), load_config(&cfg.resolve(d), &c.set)?)))
        .collect()
}

/// Scenario from `cfg` with the controller replaced by `controller`.
fn scenario_with(cfg: &Config, controller: &str) -> Result<Scenario> {
    let mut c = cfg.clone();
    c.set("controller", controller);
    let s = Scenario::from_config(&c)?;
    cfg.mark_used(&c);
    // a model path is fine when this variant does not load it
    cfg.raw("ann_model");
    Ok(s)
}

fn write_run(dir: &Path, stem: &str, m: &RunMetrics) -> Result<()> {
    write(&dir.join(format!("{stem}.report.txt")), &m.report())?;
    m.write_traces_csv(&dir.join(format!("{stem}.traces.csv")))
}

fn failure_error(m: &RunMetrics) -> Option<Error> {
    m.failure
        .as_ref()
        .map(|f| Error::Divergence(format!("{} diverged at t = {} s: {}", m.scenario, f.time, f.message)))
}

fn simulate(c: &Common) -> Result<()> {
    let days = day_configs(c)?;
    let out = c.prepare_out()?;
    let mut summary = String::new();
    let mut powers = Vec::new();
    let mut intercepts = Vec::new();
    let mut first_failure = None;
    for (label, cfg) in &days {
        let s = Scenario::from_config(cfg)?;
        cfg.finish()?;
        let m = run_scenario(&s)?.metrics;
        write_run(out, label, &m)?;
        if days.len() > 1 {
            writeln!(summary, "[{label}]").unwrap();
        }
        summary.push_str(&m.report());
        powers.push(m.mean_power_mw);
        intercepts.push(m.mean_intercept);
        first_failure = first_failure.or_else(|| failure_error(&m));
    }
    if days.len() == 3 {
        writeln!(summary, "[weighted]").unwrap();
        writeln!(summary, "weighted_mean_thermal_power_mw: {:.2}", weighted_mean(powers[0], powers[1], powers[2])).unwrap();
        writeln!(
            summary,
            "weighted_mean_intercept_factor_pct: {:.2}",
            weighted_mean(intercepts[0], intercepts[1], intercepts[2])
        )
        .unwrap();
    }
    write(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    first_failure.map_or(Ok(()), Err)
}

fn compare(c: &Common, baseline: &str, candidate: &str) -> Result<()> {
    let days = day_configs(c)?;
    let out = c.prepare_out()?;
    let mut summary = String::new();
    let mut means = [[0.0; 3]; 2];
    for (d, (label, cfg)) in days.iter().enumerate() {
        let b = scenario_with(cfg, baseline)?;
        let k = scenario_with(cfg, candidate)?;
        cfg.finish()?;
        let mb = run_scenario(&b)?.metrics;
        let mk = run_scenario(&k)?.metrics;
        write_run(out, &format!("{label}.{baseline}"), &mb)?;
        write_run(out, &format!("{label}.{candidate}"), &mk)?;
        if let Some(e) = failure_error(&mb).or_else(|| failure_error(&mk)) {
            return Err(e);
        }
        let cmp = compare_runs(&mb, &mk)?;
        writeln!(summary, "[{label}]").unwrap();
        writeln!(summary, "scenario_hash: {:016x}", mb.fingerprint).unwrap();
        writeln!(summary, "baseline_power_mw: {:.2}", mb.mean_power_mw).unwrap();
        writeln!(summary, "candidate_power_mw: {:.2}", mk.mean_power_mw).unwrap();
        summary.push_str(&cmp.report());
        if d < 3 {
            means[0][d] = mb.mean_power_mw;
            means[1][d] = mk.mean_power_mw;
        }
    }
    if days.len() == 3 {
        let [b, k] = means.map(|m| weighted_mean(m[0], m[1], m[2]));
        writeln!(summary, "[weighted]").unwrap();
        writeln!(summary, "baseline_weighted_power_mw: {b:.2}").unwrap();
        writeln!(summary, "candidate_weighted_power_mw: {k:.2}").unwrap();
    }
    write(&out.join("comparison.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn gen_dataset(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let campaign = Campaign::from_config(&cfg)?;
    cfg.finish()?;
    let out = c.prepare_out()?;
    let clock = Instant::now();
    let ds = generate_dataset(&campaign)?;
    ds.write_csv(&out.join("dataset.csv"))?;
    let meta = format!(
        "samples = {}\nruns = {}\nprofiles = {}\nfault_sets = {}\nsplit_seed = {}\nkopt_range = {}, {}\nhl_range = {}, {}\nseconds = {:.1}\n",
        ds.len(),
        campaign.profiles.len() * campaign.fault_sets,
        campaign.profiles.len(),
        campaign.fault_sets,
        ds.seed,
        campaign.ranges.kopt.0,
        campaign.ranges.kopt.1,
        campaign.ranges.hl.0,
        campaign.ranges.hl.1,
        clock.elapsed().as_secs_f64()
    );
    write(&out.join("dataset.meta"), &meta)?;
    print!("{meta}");
    Ok(())
}

/// Dataset named by `key`, split with `train.split_seed` or the seed recorded
/// next to it by `gen-dataset`.
fn load_dataset(cfg: &Config, key: &str) -> Result<Option<Dataset>> {
    let Some(path) = cfg.get_path(key)? else {
        return Ok(None);
    };
    let mut ds = Dataset::read_csv(&path, ptc_core::ann::N_OUTPUTS)?;
    let seed = match cfg.get_opt::<u64>("train.split_seed")? {
        Some(s) => s,
        None => {
            let meta = path.with_extension("meta");
            if meta.exists() {
                let m = Config::load(&meta)?;
                m.get("split_seed", 0u64)?
            } else {
                0
            }
        }
    };
    ds.shuffle_split(seed);
    Ok(Some(ds))
}

fn evaluation_lines(s: &mut String, name: &str, e: &Evaluation) {
    writeln!(s, "{name}_mse: {:.4e}", e.mse).unwrap();
    match e.correlation {
        Some(r) => writeln!(s, "{name}_correlation: {r:.6}").unwrap(),
        None => writeln!(s, "{name}_correlation: n/a").unwrap(),
    }
    let per: Vec<String> = e
        .per_output
        .iter()
        .map(|r| r.map_or("n/a".into(), |r| format!("{r:.5}")))
        .collect();
    writeln!(s, "{name}_correlation_per_output: {}", per.join(", ")).unwrap();
}

fn train(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let ds = load_dataset(&cfg, "train.dataset")?.ok_or_else(|| Error::Config("missing required key `train.dataset`".into()))?;
    let tc = TrainConfig::from_config(&cfg)?;
    cfg.finish()?;
    let out = c.prepare_out()?;
    let clock = Instant::now();
    let (model, report) = train_model(&ds, &tc)?;
    model.save(&out.join("model.txt"))?;

    let mut w = csv::Writer::from_path(out.join("history.csv")).map_err(|e| Error::io(out, e.into()))?;
    w.write_record(["epoch", "mu", "train_mse", "val_mse", "gradient", "seconds"])
        .map_err(|e| Error::io(out, e.into()))?;
    for r in &report.history.records {
        w.write_record([
            r.epoch.to_string(),
            r.mu.to_string(),
            r.train_mse.to_string(),
            r.val_mse.map_or(String::new(), |v| v.to_string()),
            r.gradient.to_string(),
            r.seconds.to_string(),
        ])
        .map_err(|e| Error::io(out, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;

    let mut s = String::new();
    writeln!(s, "samples: {}", ds.len()).unwrap();
    writeln!(s, "split: {}/{}/{}", ds.split.train.len(), ds.split.val.len(), ds.split.test.len()).unwrap();
    writeln!(s, "split_seed: {}", ds.seed).unwrap();
    writeln!(s, "init_seed: {}", tc.seed).unwrap();
    writeln!(s, "epochs: {}", report.history.records.len() - 1).unwrap();
    writeln!(s, "best_epoch: {}", report.history.best_epoch).unwrap();
    writeln!(s, "stop: {:?}", report.history.stop).unwrap();
    writeln!(s, "seconds: {:.1}", clock.elapsed().as_secs_f64()).unwrap();
    evaluation_lines(&mut s, "train", &report.train);
    evaluation_lines(&mut s, "val", &report.val);
    evaluation_lines(&mut s, "test", &report.test);
    write(&out.join("train_report.txt"), &s)?;
    print!("{s}");
    Ok(())
}

fn eval_ann(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let path = cfg
        .get_path("ann_model")?
        .ok_or_else(|| Error::Config("missing required key `ann_model`".into()))?;
    let model = AnnModel::load(&path)?;
    let ds = load_dataset(&cfg, "eval.dataset")?;
    let ann = scenario_with(&cfg, "ann")?;
    let none = scenario_with(&cfg, "none")?;
    let auction = (ann.plant != PlantKind::Distributed)
        .then(|| scenario_with(&cfg, "auction"))
        .transpose()?;
    cfg.finish()?;
    let out = c.prepare_out()?;

    let mut s = String::new();
    if let Some(ds) = &ds {
        evaluation_lines(&mut s, "test", &evaluate(&model, ds, &ds.split.test)?);
    }
    let m_ann = run_scenario(&ann)?.metrics;
    let m_none = run_scenario(&none)?.metrics;
    write_run(out, "ann", &m_ann)?;
    write_run(out, "none", &m_none)?;
    if let Some(e) = failure_error(&m_ann).or_else(|| failure_error(&m_none)) {
        return Err(e);
    }
    writeln!(s, "ann_power_mw: {:.2}", m_ann.mean_power_mw).unwrap();
    writeln!(s, "none_power_mw: {:.2}", m_none.mean_power_mw).unwrap();
    writeln!(s, "[ann vs none]").unwrap();
    s.push_str(&compare_runs(&m_none, &m_ann)?.report());
    if let Some(a) = auction {
        let m_auc = run_scenario(&a)?.metrics;
        write_run(out, "auction", &m_auc)?;
        writeln!(s, "auction_power_mw: {:.2}", m_auc.mean_power_mw).unwrap();
        writeln!(s, "ann_to_auction_power_ratio: {:.4}", m_ann.mean_power_mw / m_auc.mean_power_mw).unwrap();
        writeln!(s, "[ann vs auction]").unwrap();
        s.push_str(&compare_runs(&m_auc, &m_ann)?.report());
    }
    write(&out.join("eval_report.txt"), &s)?;
    print!("{s}");
    Ok(())
}

fn bench(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let repeats: usize = cfg.get("bench.repeats", 3)?;
    let auction = scenario_with(&cfg, "auction")?;
    let ann = scenario_with(&cfg, "ann")?;
    cfg.finish()?;
    let out = c.prepare_out()?;
    if auction.plant == PlantKind::Distributed {
        return Err(Error::Config("bench needs a static or lumped plant".into()));
    }
    let best = |s: &Scenario| -> Result<(f64, usize)> {
        let mut best = f64::INFINITY;
        let mut calls = 0;
        for _ in 0..repeats.max(1) {
            let m = run_scenario(s)?.metrics;
            calls = m.timing.calls;
            best = best.min(m.timing.mean().unwrap_or(f64::NAN));
        }
        Ok((best, calls))
    };
    let (t_auc, calls) = best(&auction)?;
    let (t_ann, _) = best(&ann)?;
    let text = format!(
        "controller_calls: {calls}\nrepeats: {repeats}\nauction_mean_s: {t_auc:.3e}\nann_mean_s: {t_ann:.3e}\nspeedup: {:.1}\n",
        t_auc / t_ann
    );
    write(&out.join("bench.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Compare {
            common,
            baseline,
            candidate,
        } => compare(common, baseline, candidate),
        Command::GenDataset(c) => gen_dataset(c),
        Command::Train(c) => train(c),
        Command::EvalAnn(c) => eval_ann(c),
        Command::Bench(c) => bench(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
