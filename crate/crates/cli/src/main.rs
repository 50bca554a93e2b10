//! `prefdyn`: run toy preference-optimisation experiments and the
//! verification battery.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration or I/O
//! error, 3 training divergence (the partial log is still written).

mod figures;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;

use prefdyn::config::{self, ConfigMap};
use prefdyn::numfmt::g9;
use prefdyn::oracle::{self, Sabotage, VerifyOptions, CHECK_NAMES};
use prefdyn::table::Table;
use prefdyn::trainer::{
    average_logs, is_non_decreasing, moving_average, run_dpo_training, run_rm_training,
    run_scenario_suite, run_scenario_suite_seeds, run_seeds, sweep_beta_minus, tail_variance,
    RewardLog,
};
use prefdyn::world::{init_targets, targets_csv, ToySpace};
use prefdyn::{MetricsLog, Objective, TrainConfig, TrainError};

const STABILITY_WINDOW: usize = 100;
const SMOOTHING_WINDOW: usize = 10;

#[derive(Parser)]
#[command(
    name = "prefdyn",
    version,
    about = "Toy-model preference optimisation dynamics"
)]
struct Cli {
    /// Output directory.
    #[arg(
        long,
        global = true,
        env = "PREFDYN_OUT",
        default_value = "prefdyn_out"
    )]
    out: PathBuf,
    /// Flat `key = value` config file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy and chart its likelihood and gradient dynamics.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Run each seed and also write the seed-averaged log.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Also write the initial target table.
        #[arg(long)]
        export_targets: bool,
    },
    /// Run all four scenarios under one config.
    Suite {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// One run per grid value of a hyperparameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "beta-minus")]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
    },
    /// Run the verification battery.
    Verify {
        /// Run a single named check.
        #[arg(long)]
        only: Option<String>,
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Inject a known fault; the battery must then fail.
        #[arg(long, hide = true)]
        sabotage: Option<String>,
    },
    /// Train a policy and a reward model on the same pair stream.
    CompareRm {
        #[command(flatten)]
        run: RunArgs,
    },
}

/// Run settings; each maps onto the config key of the same name.
#[derive(Args, Default)]
struct RunArgs {
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    beta_plus: Option<String>,
    #[arg(long)]
    beta_minus: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    margin_gamma: Option<String>,
    #[arg(long)]
    len_plus: Option<String>,
    #[arg(long)]
    len_minus: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    log_every: Option<String>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    pairing: Option<String>,
    #[arg(long)]
    fit_lr: Option<String>,
    #[arg(long)]
    fit_max_steps: Option<String>,
    #[arg(long)]
    fit_tol: Option<String>,
}

impl RunArgs {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("scenario", &self.scenario),
            ("objective", &self.objective),
            ("beta", &self.beta),
            ("beta_plus", &self.beta_plus),
            ("beta_minus", &self.beta_minus),
            ("gamma", &self.gamma),
            ("eta", &self.eta),
            ("delta", &self.delta),
            ("margin_gamma", &self.margin_gamma),
            ("len_plus", &self.len_plus),
            ("len_minus", &self.len_minus),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("learning_rate", &self.learning_rate),
            ("seed", &self.seed),
            ("log_every", &self.log_every),
            ("optimizer", &self.optimizer),
            ("hidden", &self.hidden),
            ("pairing", &self.pairing),
            ("fit_lr", &self.fit_lr),
            ("fit_max_steps", &self.fit_max_steps),
            ("fit_tol", &self.fit_tol),
        ]
    }
}

#[derive(Debug)]
enum Failure {
    Verify,
    Config(String),
    Diverged(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verify => 1,
            Failure::Config(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(format!("i/o: {e}"))
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// Output directory plus the bookkeeping needed for the manifest.
struct Outputs {
    dir: PathBuf,
    command: &'static str,
    files: Vec<String>,
    configs: Vec<TrainConfig>,
    started: Instant,
}

impl Outputs {
    fn new(dir: &Path, command: &'static str) -> Result<Self, Failure> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            files: Vec::new(),
            configs: Vec::new(),
            started: Instant::now(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        fs::write(self.dir.join(name), contents)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    /// Writes a CSV and returns it re-parsed, so charts only ever see file contents.
    fn write_csv(&mut self, name: &str, csv: &str) -> Result<Table, Failure> {
        self.write(name, csv)?;
        let text = fs::read_to_string(self.dir.join(name))?;
        Table::parse(&text).map_err(|e| Failure::Config(format!("{name}: {e}")))
    }

    fn finish(mut self) -> CmdResult {
        let mut text = format!(
            "tool = prefdyn {}\ncommand = {}\nout_dir = {}\nwall_clock_secs = {:.3}\n",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.dir.display(),
            self.started.elapsed().as_secs_f64()
        );
        self.files.push("manifest.txt".into());
        text.push_str(&format!("files = {}\n", self.files.join(", ")));
        for (i, cfg) in self.configs.iter().enumerate() {
            for (k, v) in cfg.describe() {
                text.push_str(&format!("config.{i}.{k} = {v}\n"));
            }
        }
        fs::write(self.dir.join("manifest.txt"), text)?;
        info!("wrote {} files to {}", self.files.len(), self.dir.display());
        Ok(())
    }
}

fn resolve(config_file: Option<&Path>, run: &RunArgs) -> Result<ConfigMap, Failure> {
    let mut map = match config_file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            ConfigMap::parse(&text)?
        }
        None => ConfigMap::new(),
    };
    let mut flags = ConfigMap::new();
    for (key, value) in run.pairs() {
        if let Some(v) = value {
            flags.set(key, v.as_str())?;
        }
    }
    map.merge(&flags);
    Ok(map)
}

fn train_failure(out: &mut Outputs, name: &str, e: TrainError) -> Failure {
    match e {
        TrainError::InvalidConfig(m) => Failure::Config(m),
        TrainError::Fit(e) => Failure::Diverged(format!("initial fit: {e}")),
        TrainError::Diverged { epoch, reason, log } => {
            if let Err(Failure::Config(m)) = out.write(name, &log.to_csv()) {
                log::error!("could not write partial log: {m}");
            }
            Failure::Diverged(format!("epoch {epoch}: {reason}"))
        }
        TrainError::RewardDiverged { epoch, reason, log } => {
            if let Err(Failure::Config(m)) = out.write(name, &log.to_csv()) {
                log::error!("could not write partial log: {m}");
            }
            Failure::Diverged(format!("reward model, epoch {epoch}: {reason}"))
        }
    }
}

fn chart_run(out: &mut Outputs, csv_name: &str, log: &MetricsLog, suffix: &str) -> CmdResult {
    let table = out.write_csv(csv_name, &log.to_csv())?;
    out.write(
        &format!("likelihood{suffix}.svg"),
        &figures::likelihood(&table, false),
    )?;
    out.write(
        &format!("likelihood_log{suffix}.svg"),
        &figures::likelihood(&table, true),
    )?;
    out.write(
        &format!("gradients{suffix}.svg"),
        &figures::gradients(&table),
    )
}

fn cmd_simulate(
    dir: &Path,
    cfg_file: Option<&Path>,
    run: &RunArgs,
    seeds: &[u64],
    export_targets: bool,
) -> CmdResult {
    let config = resolve(cfg_file, run)?.train_config()?;
    config
        .validate()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let mut out = Outputs::new(dir, "simulate")?;
    if export_targets {
        out.write(
            "targets.csv",
            &targets_csv(&init_targets(&ToySpace::standard(), config.scenario)),
        )?;
    }
    if seeds.is_empty() {
        out.configs.push(config.clone());
        let outcome =
            run_dpo_training(&config).map_err(|e| train_failure(&mut out, "metrics.csv", e))?;
        info!(
            "initial fit: {} steps, residual {:.2e}",
            outcome.fit.steps, outcome.fit.residual
        );
        chart_run(&mut out, "metrics.csv", &outcome.log, "")?;
    } else {
        out.configs.extend(seeds.iter().map(|&seed| TrainConfig {
            seed,
            ..config.clone()
        }));
        let logs = run_seeds(&config, seeds)
            .map_err(|e| train_failure(&mut out, "metrics_partial.csv", e))?;
        for (seed, log) in seeds.iter().zip(&logs) {
            out.write(&format!("metrics_seed{seed}.csv"), &log.to_csv())?;
        }
        let mean = average_logs(&logs)
            .ok_or_else(|| Failure::Config("seed logs disagree on epochs".into()))?;
        chart_run(&mut out, "metrics_mean.csv", &mean, "_mean")?;
    }
    out.finish()
}

fn summary_table(logs: &[MetricsLog]) -> String {
    let mut text = String::from(
        "scenario,initial_avg_chosen,peak_avg_chosen,peak_epoch,final_avg_chosen,final_avg_rejected,final_avg_unseen,decline_epoch\n",
    );
    for log in logs {
        let s = log.summary();
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            log.config.scenario,
            g9(s.initial_avg_chosen),
            g9(s.peak_avg_chosen),
            s.peak_epoch,
            g9(s.final_avg_chosen),
            g9(s.final_avg_rejected),
            g9(s.final_avg_unseen),
            s.decline_epoch
                .map_or("never".to_string(), |e| e.to_string())
        ));
    }
    text
}

fn cmd_suite(dir: &Path, cfg_file: Option<&Path>, run: &RunArgs, seeds: &[u64]) -> CmdResult {
    let base = resolve(cfg_file, run)?.train_config()?;
    base.validate()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let mut out = Outputs::new(dir, "suite")?;
    let logs = if seeds.is_empty() {
        out.configs
            .extend(prefdyn::Scenario::ALL.iter().map(|&scenario| TrainConfig {
                scenario,
                ..base.clone()
            }));
        run_scenario_suite(&base)
    } else {
        for &scenario in &prefdyn::Scenario::ALL {
            out.configs.extend(seeds.iter().map(|&seed| TrainConfig {
                scenario,
                seed,
                ..base.clone()
            }));
        }
        run_scenario_suite_seeds(&base, seeds)
    }
    .map_err(|e| train_failure(&mut out, "partial.csv", e))?;

    let mut tables = Vec::new();
    for log in &logs {
        let name = format!("s{}.csv", log.config.scenario.number());
        tables.push((log.config.scenario, out.write_csv(&name, &log.to_csv())?));
    }
    out.write("suite.svg", &figures::suite(&tables))?;
    out.write("summary.txt", &summary_table(&logs))?;
    out.finish()
}

fn cmd_sweep(
    dir: &Path,
    cfg_file: Option<&Path>,
    run: &RunArgs,
    param: &str,
    grid: &[f64],
) -> CmdResult {
    if param.replace('_', "-") != "beta-minus" {
        return Err(Failure::Config(format!(
            "unsupported sweep parameter {param:?}; only beta-minus is sweepable"
        )));
    }
    let mut map = resolve(cfg_file, run)?;
    if map.get("objective").is_none() {
        map.set("objective", "flex-dpo")?;
    }
    let base = map.train_config()?;
    base.validate()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let Objective::FlexDpo { beta_plus, .. } = base.objective else {
        return Err(Failure::Config(
            "beta-minus sweeps need objective = flex-dpo".into(),
        ));
    };
    let mut out = Outputs::new(dir, "sweep")?;
    out.configs
        .extend(grid.iter().map(|&beta_minus| TrainConfig {
            objective: Objective::FlexDpo {
                beta_plus,
                beta_minus,
            },
            ..base.clone()
        }));
    let runs =
        sweep_beta_minus(&base, grid).map_err(|e| train_failure(&mut out, "partial.csv", e))?;

    let mut tables = Vec::new();
    let mut report = String::from(
        "beta_minus,decline_epoch,final_avg_chosen,final_avg_rejected,final_avg_unseen\n",
    );
    for (beta_minus, log) in &runs {
        tables.push((
            *beta_minus,
            out.write_csv(
                &format!("beta_minus_{}.csv", g9(*beta_minus)),
                &log.to_csv(),
            )?,
        ));
        let s = log.summary();
        report.push_str(&format!(
            "{},{},{},{},{}\n",
            g9(*beta_minus),
            s.decline_epoch
                .map_or("never".to_string(), |e| e.to_string()),
            g9(s.final_avg_chosen),
            g9(s.final_avg_rejected),
            g9(s.final_avg_unseen)
        ));
    }
    out.write("sweep.svg", &figures::sweep(&tables))?;
    out.write("sweep.txt", &report)?;
    out.finish()
}

fn cmd_verify(
    dir: &Path,
    only: Option<String>,
    points: usize,
    seed: u64,
    sabotage: Option<String>,
) -> CmdResult {
    if let Some(name) = &only {
        if !CHECK_NAMES.contains(&name.as_str()) {
            return Err(Failure::Config(format!(
                "unknown check {name:?}; expected one of {}",
                CHECK_NAMES.join(", ")
            )));
        }
    }
    let sabotage = match sabotage {
        None => None,
        Some(s) => Some(
            Sabotage::parse(&s)
                .ok_or_else(|| Failure::Config(format!("unknown sabotage mode {s:?}")))?,
        ),
    };
    let mut out = Outputs::new(dir, "verify")?;
    let results = oracle::run_battery(&VerifyOptions {
        only,
        points,
        seed,
        sabotage,
    });
    print!("{}", oracle::results_table(&results));
    out.write("verify.csv", &oracle::results_csv(&results))?;
    out.finish()?;
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::Verify)
    }
}

fn stability_report(dpo: &MetricsLog, rm: &RewardLog) -> String {
    let dpo_acc: Vec<f64> = dpo.rows.iter().map(|r| r.implicit_accuracy).collect();
    let rm_acc = rm.accuracies();
    let balanced = rm
        .rows
        .iter()
        .all(|r| r.grad_plus_mean == r.grad_minus_mean);
    let first_full = rm.rows.iter().position(|r| r.accuracy == 1.0);
    let holds = first_full.is_some_and(|i| rm.rows[i..].iter().all(|r| r.accuracy == 1.0));
    let lines = [
        ("window", STABILITY_WINDOW.to_string()),
        (
            "dpo_accuracy_tail_variance",
            g9(tail_variance(&dpo_acc, STABILITY_WINDOW)),
        ),
        (
            "rm_accuracy_tail_variance",
            g9(tail_variance(&rm_acc, STABILITY_WINDOW)),
        ),
        (
            "dpo_final_accuracy",
            g9(dpo_acc.last().copied().unwrap_or(f64::NAN)),
        ),
        (
            "rm_final_accuracy",
            g9(rm_acc.last().copied().unwrap_or(f64::NAN)),
        ),
        (
            "rm_first_full_accuracy_epoch",
            first_full.map_or("never".into(), |i| rm.rows[i].epoch.to_string()),
        ),
        ("rm_holds_full_accuracy", holds.to_string()),
        ("rm_gradients_balanced_every_epoch", balanced.to_string()),
        (
            "identical_pair_streams",
            (dpo.pairs == rm.pairs).to_string(),
        ),
        (
            "rm_smoothed_accuracy_non_decreasing",
            is_non_decreasing(&moving_average(&rm_acc, SMOOTHING_WINDOW)).to_string(),
        ),
        (
            "dpo_smoothed_accuracy_non_decreasing",
            is_non_decreasing(&moving_average(&dpo_acc, SMOOTHING_WINDOW)).to_string(),
        ),
    ];
    lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

fn cmd_compare_rm(dir: &Path, cfg_file: Option<&Path>, run: &RunArgs) -> CmdResult {
    let dpo_cfg = resolve(cfg_file, run)?.train_config()?;
    dpo_cfg
        .validate()
        .map_err(|e| Failure::Config(e.to_string()))?;
    if dpo_cfg.objective == Objective::Rm {
        return Err(Failure::Config(
            "compare-rm needs a policy objective; the reward model is trained alongside".into(),
        ));
    }
    let rm_cfg = TrainConfig {
        objective: Objective::Rm,
        ..dpo_cfg.clone()
    };
    let mut out = Outputs::new(dir, "compare-rm")?;
    out.configs.extend([dpo_cfg.clone(), rm_cfg.clone()]);

    let (dpo, rm) = std::thread::scope(|s| {
        let rm = s.spawn(|| run_rm_training(&rm_cfg));
        (
            run_dpo_training(&dpo_cfg),
            rm.join().expect("reward training thread panicked"),
        )
    });
    let dpo = dpo.map_err(|e| train_failure(&mut out, "dpo.csv", e))?.log;
    let rm = rm.map_err(|e| train_failure(&mut out, "rm.csv", e))?.log;

    let dpo_table = out.write_csv("dpo.csv", &dpo.to_csv())?;
    let acc_table = out.write_csv("dpo_accuracy.csv", &dpo.accuracy_csv())?;
    let rm_table = out.write_csv("rm.csv", &rm.to_csv())?;
    out.write("accuracy.svg", &figures::accuracy(&acc_table, &rm_table))?;
    out.write(
        "gradients.svg",
        &figures::paired_gradients(&dpo_table, &rm_table),
    )?;
    out.write("stability.txt", &stability_report(&dpo, &rm))?;
    out.finish()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = cli.config.as_deref();
    let result = match cli.command {
        Command::Simulate {
            run,
            seeds,
            export_targets,
        } => cmd_simulate(&cli.out, cfg, &run, &seeds, export_targets),
        Command::Suite { run, seeds } => cmd_suite(&cli.out, cfg, &run, &seeds),
        Command::Sweep { run, param, grid } => cmd_sweep(&cli.out, cfg, &run, &param, &grid),
        Command::Verify {
            only,
            points,
            seed,
            sabotage,
        } => cmd_verify(&cli.out, only, points, seed, sabotage),
        Command::CompareRm { run } => cmd_compare_rm(&cli.out, cfg, &run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Verify => eprintln!("verification failed"),
                Failure::Config(m) => eprintln!("error: {m}"),
                Failure::Diverged(m) => eprintln!("training diverged: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = std::env::temp_dir().join(format!("prefdyn-cli-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let file = dir.join("run.cfg");
        fs::write(&file, "epochs = 100\nseed = 3\n").unwrap();
        let run = RunArgs {
            epochs: Some("7".into()),
            ..RunArgs::default()
        };
        let cfg = resolve(Some(&file), &run).unwrap().train_config().unwrap();
        assert_eq!((cfg.epochs, cfg.seed), (7, 3));
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            Failure::Verify.code(),
            Failure::Config(String::new()).code(),
            Failure::Diverged(String::new()).code(),
        ];
        assert_eq!(codes, [1, 2, 3]);
    }
}
