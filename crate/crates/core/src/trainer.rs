//! Training loops: preference optimisation of the toy policy and
//! Bradley-Terry training of a toy reward net, with per-epoch metrics.
//!
//! An "epoch" is one minibatch update. Row `e` of a log holds the likelihoods
//! after update `e` and the gradient/loss statistics of the pairs used by
//! update `e`. [`MetricsLog::initial`] holds the fitted starting point.

use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::losses::{rm_grad, rm_loss, LikelihoodPoint, Objective, RewardPoint, LIKELIHOOD_FLOOR};
use crate::numfmt::g9;
use crate::policy::{
    fit_to_targets, FitConfig, FitReport, Mlp, MlpPolicy, MlpShape, Optimizer, OptimizerKind,
    ParamGrad, PolicyError, ReferencePolicy, DEFAULT_HIDDEN, INIT_SCALE,
};
use crate::world::{
    all_pairs, init_targets, PairSampler, PairingMode, PreferencePair, Scenario, ToySpace,
};

pub const METRICS_HEADER: &str =
    "epoch,avg_chosen,min_chosen,avg_rejected,max_rejected,avg_unseen,grad_plus_mean,grad_minus_mean,loss";
pub const REWARD_HEADER: &str = "epoch,accuracy,grad_plus_mean,grad_minus_mean,loss";
pub const ACCURACY_HEADER: &str = "epoch,accuracy";

/// Threshold below which the rejected likelihood counts as having collapsed.
pub const DECLINE_THRESHOLD: f64 = 0.01;
pub const REWARD_HIDDEN: usize = 32;

const STREAM_POLICY_INIT: u64 = 0;
const STREAM_PAIRS: u64 = 1;
const STREAM_REWARD_INIT: u64 = 2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("initial target fit failed: {0}")]
    Fit(PolicyError),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        log: Box<MetricsLog>,
    },
    #[error("reward training diverged at epoch {epoch}: {reason}")]
    RewardDiverged {
        epoch: usize,
        reason: String,
        log: Box<RewardLog>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub scenario: Scenario,
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub log_every: usize,
    pub optimizer: OptimizerKind,
    pub hidden: usize,
    pub pairing: PairingMode,
    pub fit: FitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::S1,
            objective: Objective::Dpo { beta: 0.1 },
            epochs: 500,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 0,
            log_every: 1,
            optimizer: OptimizerKind::Adam,
            hidden: DEFAULT_HIDDEN,
            pairing: PairingMode::RejectedSet,
            fit: FitConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.fit.lr.is_finite() && self.fit.lr > 0.0 && self.fit.tol > 0.0) {
            return bad("fit_lr and fit_tol must be positive".into());
        }
        self.objective
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))
    }

    /// Resolved settings as ordered `key = value` pairs, hyperparameters of
    /// the selected objective only.
    pub fn describe(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("scenario".to_string(), self.scenario.number().to_string()),
            ("objective".to_string(), self.objective.name().to_string()),
        ];
        let mut hp = |k: &str, v: String| kv.push((k.to_string(), v));
        match self.objective {
            Objective::Dpo { beta } => hp("beta", beta.to_string()),
            Objective::FlexDpo {
                beta_plus,
                beta_minus,
            } => {
                hp("beta_plus", beta_plus.to_string());
                hp("beta_minus", beta_minus.to_string());
            }
            Objective::SftDpo { beta, gamma } => {
                hp("beta", beta.to_string());
                hp("gamma", gamma.to_string());
            }
            Objective::Ipo { eta } => hp("eta", eta.to_string()),
            Objective::Slic { delta, eta } => {
                hp("delta", delta.to_string());
                hp("eta", eta.to_string());
            }
            Objective::SimPo {
                beta,
                margin,
                len_plus,
                len_minus,
            } => {
                hp("beta", beta.to_string());
                hp("margin_gamma", margin.to_string());
                hp("len_plus", len_plus.to_string());
                hp("len_minus", len_minus.to_string());
            }
            Objective::Rm => {}
        }
        kv.extend([
            ("epochs".to_string(), self.epochs.to_string()),
            ("batch_size".to_string(), self.batch_size.to_string()),
            ("learning_rate".to_string(), self.learning_rate.to_string()),
            ("seed".to_string(), self.seed.to_string()),
            ("log_every".to_string(), self.log_every.to_string()),
            ("optimizer".to_string(), self.optimizer.name().to_string()),
            ("hidden".to_string(), self.hidden.to_string()),
            ("pairing".to_string(), self.pairing.name().to_string()),
            ("fit_lr".to_string(), self.fit.lr.to_string()),
            ("fit_max_steps".to_string(), self.fit.max_steps.to_string()),
            ("fit_tol".to_string(), self.fit.tol.to_string()),
        ]);
        kv
    }

    fn logs_epoch(&self, epoch: usize) -> bool {
        epoch.is_multiple_of(self.log_every) || epoch == self.epochs
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The pair stream a run with this seed consumes. Independent of scenario
/// and objective, so runs sharing a seed see identical pairs.
pub fn pair_sampler(config: &TrainConfig) -> PairSampler {
    PairSampler::new(
        ToySpace::standard(),
        config.pairing,
        rng_stream(config.seed, STREAM_PAIRS),
    )
}

/// Per-prompt probability mass on each response block.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PromptMass {
    pub chosen: f64,
    pub rejected: f64,
    pub unseen: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    /// Mean over prompts of each prompt's optimal-response likelihood.
    pub avg_chosen: f64,
    pub min_chosen: f64,
    /// Mean and max over prompts × the whole rejected block.
    pub avg_rejected: f64,
    pub max_rejected: f64,
    /// Mean over prompts × the unseen block.
    pub avg_unseen: f64,
    pub grad_plus_mean: f64,
    pub grad_minus_mean: f64,
    pub loss: f64,
    /// Fraction of dataset pairs whose implicit reward ranks chosen first.
    pub implicit_accuracy: f64,
    pub masses: Vec<PromptMass>,
}

impl MetricsRow {
    pub fn csv_fields(&self) -> [f64; 8] {
        [
            self.avg_chosen,
            self.min_chosen,
            self.avg_rejected,
            self.max_rejected,
            self.avg_unseen,
            self.grad_plus_mean,
            self.grad_minus_mean,
            self.loss,
        ]
    }

    /// `grad_minus_mean / grad_plus_mean`.
    pub fn gradient_ratio(&self) -> f64 {
        self.grad_minus_mean / self.grad_plus_mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub config: TrainConfig,
    /// Likelihood statistics of the fitted policy before any update; its
    /// gradient and loss fields are zero.
    pub initial: MetricsRow,
    pub rows: Vec<MetricsRow>,
    /// Every pair consumed, in order.
    pub pairs: Vec<PreferencePair>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(METRICS_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.epoch.to_string());
            for v in row.csv_fields() {
                out.push(',');
                out.push_str(&g9(v));
            }
            out.push('\n');
        }
        out
    }

    pub fn accuracy_csv(&self) -> String {
        let mut out = format!("{ACCURACY_HEADER}\n");
        for row in &self.rows {
            out.push_str(&format!("{},{}\n", row.epoch, g9(row.implicit_accuracy)));
        }
        out
    }

    pub fn last(&self) -> &MetricsRow {
        self.rows.last().unwrap_or(&self.initial)
    }

    pub fn row_at(&self, epoch: usize) -> Option<&MetricsRow> {
        if epoch == 0 {
            return Some(&self.initial);
        }
        self.rows.iter().find(|r| r.epoch == epoch)
    }

    /// Largest avg-chosen likelihood seen, including the starting point, with its epoch.
    pub fn peak_avg_chosen(&self) -> (usize, f64) {
        std::iter::once(&self.initial)
            .chain(&self.rows)
            .fold((0, f64::NEG_INFINITY), |best, r| {
                if r.avg_chosen > best.1 {
                    (r.epoch, r.avg_chosen)
                } else {
                    best
                }
            })
    }

    /// First logged epoch at which avg-rejected falls below `threshold`.
    pub fn decline_epoch(&self, threshold: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.avg_rejected < threshold)
            .map(|r| r.epoch)
    }

    pub fn summary(&self) -> RunSummary {
        let (peak_epoch, peak_avg_chosen) = self.peak_avg_chosen();
        let last = self.last();
        RunSummary {
            initial_avg_chosen: self.initial.avg_chosen,
            final_avg_chosen: last.avg_chosen,
            peak_avg_chosen,
            peak_epoch,
            final_avg_rejected: last.avg_rejected,
            final_avg_unseen: last.avg_unseen,
            decline_epoch: self.decline_epoch(DECLINE_THRESHOLD),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub initial_avg_chosen: f64,
    pub final_avg_chosen: f64,
    pub peak_avg_chosen: f64,
    pub peak_epoch: usize,
    pub final_avg_rejected: f64,
    pub final_avg_unseen: f64,
    pub decline_epoch: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default)]
struct BatchStats {
    grad_plus: f64,
    grad_minus: f64,
    loss: f64,
}

fn implicit_reward(scale: f64, pi: f64, pi0: f64) -> f64 {
    scale * (pi.max(LIKELIHOOD_FLOOR).ln() - pi0.max(LIKELIHOOD_FLOOR).ln())
}

fn measure(
    epoch: usize,
    space: &ToySpace,
    table: &[Vec<f64>],
    reference: &ReferencePolicy,
    dataset: &[PreferencePair],
    objective: &Objective,
    stats: BatchStats,
) -> MetricsRow {
    let n = space.n_prompts as f64;
    let optimal: Vec<f64> = (0..space.n_prompts)
        .map(|x| table[x][space.optimal_of(x)])
        .collect();
    let rejected: Vec<f64> = table
        .iter()
        .flat_map(|row| row[space.rejected.clone()].iter().copied())
        .collect();
    let unseen: Vec<f64> = table
        .iter()
        .flat_map(|row| row[space.unseen.clone()].iter().copied())
        .collect();
    let masses = table
        .iter()
        .map(|row| PromptMass {
            chosen: row[space.chosen.clone()].iter().sum(),
            rejected: row[space.rejected.clone()].iter().sum(),
            unseen: row[space.unseen.clone()].iter().sum(),
            total: row.iter().sum(),
        })
        .collect();
    let (sp, sm) = objective.implicit_reward_scales();
    let correct = dataset
        .iter()
        .filter(|p| {
            let x = p.prompt;
            implicit_reward(sp, table[x][p.chosen], reference.prob(x, p.chosen))
                > implicit_reward(sm, table[x][p.rejected], reference.prob(x, p.rejected))
        })
        .count();
    MetricsRow {
        epoch,
        avg_chosen: optimal.iter().sum::<f64>() / n,
        min_chosen: optimal.iter().cloned().fold(f64::INFINITY, f64::min),
        avg_rejected: rejected.iter().sum::<f64>() / rejected.len() as f64,
        max_rejected: rejected.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        avg_unseen: unseen.iter().sum::<f64>() / unseen.len() as f64,
        grad_plus_mean: stats.grad_plus,
        grad_minus_mean: stats.grad_minus,
        loss: stats.loss,
        implicit_accuracy: correct as f64 / dataset.len() as f64,
        masses,
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: MetricsLog,
    pub policy: MlpPolicy,
    pub reference: ReferencePolicy,
    pub fit: FitReport,
}

/// Fits the policy to the scenario targets, freezes it as the reference, then
/// runs `epochs` minibatch updates of the configured objective.
pub fn run_dpo_training(config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if config.objective == Objective::Rm {
        return Err(TrainError::InvalidConfig(
            "the rm objective trains a reward net; use run_rm_training".into(),
        ));
    }
    let space = ToySpace::standard();
    let mut policy = MlpPolicy::new(
        space.n_prompts,
        space.n_responses,
        config.hidden,
        &mut rng_stream(config.seed, STREAM_POLICY_INIT),
    );
    let fit = fit_to_targets(
        &mut policy,
        &init_targets(&space, config.scenario),
        &config.fit,
    )
    .map_err(TrainError::Fit)?;
    let reference = ReferencePolicy::snapshot(&policy);
    let dataset = all_pairs(&space, config.pairing);
    let mut sampler = pair_sampler(config);
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, policy.n_params());
    let objective = config.objective;

    let initial = measure(
        0,
        &space,
        &policy.table(),
        &reference,
        &dataset,
        &objective,
        BatchStats::default(),
    );
    let mut log = MetricsLog {
        config: config.clone(),
        initial,
        rows: Vec::new(),
        pairs: Vec::new(),
    };
    let inv_batch = 1.0 / config.batch_size as f64;

    for epoch in 1..=config.epochs {
        let batch = sampler.sample(config.batch_size);
        log.pairs.extend_from_slice(&batch);
        let diverged = |log: MetricsLog, reason: String| TrainError::Diverged {
            epoch,
            reason,
            log: Box::new(log),
        };

        let mut grad = ParamGrad::zeros(policy.n_params());
        let mut stats = BatchStats::default();
        for pair in &batch {
            let probs = policy
                .forward(pair.prompt)
                .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
            let point = match LikelihoodPoint::clamped(
                probs[pair.chosen],
                probs[pair.rejected],
                reference.prob(pair.prompt, pair.chosen),
                reference.prob(pair.prompt, pair.rejected),
            ) {
                Ok(p) => p,
                Err(e) => return Err(diverged(log, e.to_string())),
            };
            let (loss, g) = match objective.evaluate(&point) {
                Ok(v) => v,
                Err(e) => return Err(diverged(log, e.to_string())),
            };
            if !loss.is_finite() || !g.is_finite() {
                return Err(diverged(
                    log,
                    format!("non-finite loss {loss} or gradient {g:?}"),
                ));
            }
            stats.loss += loss * inv_batch;
            stats.grad_plus += g.d_plus.abs() * inv_batch;
            stats.grad_minus += g.d_minus.abs() * inv_batch;

            let mut dprobs = vec![0.0; space.n_responses];
            dprobs[pair.chosen] += g.d_plus;
            dprobs[pair.rejected] += g.d_minus;
            policy
                .backward_into(pair.prompt, &dprobs, inv_batch, &mut grad)
                .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        }
        if let Err(e) = policy.apply_update(&grad, &mut opt) {
            return Err(diverged(log, e.to_string()));
        }

        if config.logs_epoch(epoch) {
            let table = policy.table();
            if let Some((x, row)) = table
                .iter()
                .enumerate()
                .find(|(_, r)| !((r.iter().sum::<f64>() - 1.0).abs() <= 1e-9))
            {
                let reason = format!(
                    "prompt {x} output no longer normalised (sum {})",
                    row.iter().sum::<f64>()
                );
                return Err(diverged(log, reason));
            }
            log.rows.push(measure(
                epoch, &space, &table, &reference, &dataset, &objective, stats,
            ));
        }
    }

    Ok(TrainOutcome {
        log,
        policy,
        reference,
        fit,
    })
}

fn run_many<T: Send, F>(jobs: Vec<TrainConfig>, run: F) -> Vec<Result<T, TrainError>>
where
    F: Fn(&TrainConfig) -> Result<T, TrainError> + Sync,
{
    let run = &run;
    thread::scope(|s| {
        let handles: Vec<_> = jobs.iter().map(|cfg| s.spawn(move || run(cfg))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    })
}

fn collect_logs(
    results: Vec<Result<TrainOutcome, TrainError>>,
) -> Result<Vec<MetricsLog>, TrainError> {
    results.into_iter().map(|r| r.map(|o| o.log)).collect()
}

/// One run per seed, executed concurrently, returned in seed order.
pub fn run_seeds(base: &TrainConfig, seeds: &[u64]) -> Result<Vec<MetricsLog>, TrainError> {
    let jobs = seeds
        .iter()
        .map(|&seed| TrainConfig {
            seed,
            ..base.clone()
        })
        .collect();
    collect_logs(run_many(jobs, run_dpo_training))
}

/// Field-wise mean over seeds. Every log must share the same logged epochs.
/// The result carries the first log's config and no pair trace.
pub fn average_logs(logs: &[MetricsLog]) -> Option<MetricsLog> {
    let first = logs.first()?;
    if logs.iter().any(|l| l.rows.len() != first.rows.len()) {
        return None;
    }
    let mean_row = |rows: Vec<&MetricsRow>| -> Option<MetricsRow> {
        let epoch = rows[0].epoch;
        if rows.iter().any(|r| r.epoch != epoch) {
            return None;
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&MetricsRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        let masses = (0..rows[0].masses.len())
            .map(|x| {
                let m = |f: fn(&PromptMass) -> f64| {
                    rows.iter().map(|r| f(&r.masses[x])).sum::<f64>() / n
                };
                PromptMass {
                    chosen: m(|p| p.chosen),
                    rejected: m(|p| p.rejected),
                    unseen: m(|p| p.unseen),
                    total: m(|p| p.total),
                }
            })
            .collect();
        Some(MetricsRow {
            epoch,
            avg_chosen: avg(|r| r.avg_chosen),
            min_chosen: avg(|r| r.min_chosen),
            avg_rejected: avg(|r| r.avg_rejected),
            max_rejected: avg(|r| r.max_rejected),
            avg_unseen: avg(|r| r.avg_unseen),
            grad_plus_mean: avg(|r| r.grad_plus_mean),
            grad_minus_mean: avg(|r| r.grad_minus_mean),
            loss: avg(|r| r.loss),
            implicit_accuracy: avg(|r| r.implicit_accuracy),
            masses,
        })
    };
    let initial = mean_row(logs.iter().map(|l| &l.initial).collect())?;
    let rows = (0..first.rows.len())
        .map(|i| mean_row(logs.iter().map(|l| &l.rows[i]).collect()))
        .collect::<Option<Vec<_>>>()?;
    Some(MetricsLog {
        config: first.config.clone(),
        initial,
        rows,
        pairs: Vec::new(),
    })
}

/// S1 to S4 under otherwise identical settings, in scenario order.
pub fn run_scenario_suite(base: &TrainConfig) -> Result<Vec<MetricsLog>, TrainError> {
    let jobs = Scenario::ALL
        .iter()
        .map(|&scenario| TrainConfig {
            scenario,
            ..base.clone()
        })
        .collect();
    collect_logs(run_many(jobs, run_dpo_training))
}

/// Seed-averaged suite: returns the four mean logs in scenario order.
pub fn run_scenario_suite_seeds(
    base: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<MetricsLog>, TrainError> {
    let jobs: Vec<TrainConfig> = Scenario::ALL
        .iter()
        .flat_map(|&scenario| seeds.iter().map(move |&seed| (scenario, seed)))
        .map(|(scenario, seed)| TrainConfig {
            scenario,
            seed,
            ..base.clone()
        })
        .collect();
    let logs = collect_logs(run_many(jobs, run_dpo_training))?;
    logs.chunks(seeds.len())
        .map(|chunk| {
            average_logs(chunk)
                .ok_or_else(|| TrainError::InvalidConfig("seed logs have mismatched epochs".into()))
        })
        .collect()
}

/// Flex-DPO runs over a grid of β− values, β+ held at the base value.
pub fn sweep_beta_minus(
    base: &TrainConfig,
    grid: &[f64],
) -> Result<Vec<(f64, MetricsLog)>, TrainError> {
    let Objective::FlexDpo { beta_plus, .. } = base.objective else {
        return Err(TrainError::InvalidConfig(
            "beta-minus sweeps need the flex-dpo objective".into(),
        ));
    };
    if grid.is_empty() {
        return Err(TrainError::InvalidConfig("empty sweep grid".into()));
    }
    let jobs = grid
        .iter()
        .map(|&beta_minus| TrainConfig {
            objective: Objective::FlexDpo {
                beta_plus,
                beta_minus,
            },
            ..base.clone()
        })
        .collect();
    let logs = collect_logs(run_many(jobs, run_dpo_training))?;
    Ok(grid.iter().copied().zip(logs).collect())
}

/// Scalar reward over (prompt, response): an MLP on one-hot(prompt) ⊕ one-hot(response).
#[derive(Debug, Clone, PartialEq)]
pub struct RewardNet {
    net: Mlp,
    n_prompts: usize,
}

impl RewardNet {
    pub fn new(space: &ToySpace, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let shape = MlpShape::new(space.n_prompts + space.n_responses, hidden, 1);
        Self {
            net: Mlp::init_uniform(shape, INIT_SCALE, rng),
            n_prompts: space.n_prompts,
        }
    }

    fn features(&self, prompt: usize, response: usize) -> [usize; 2] {
        [prompt, self.n_prompts + response]
    }

    pub fn reward(&self, prompt: usize, response: usize) -> f64 {
        self.net.forward(&self.features(prompt, response)).out[0]
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    fn accumulate(
        &self,
        prompt: usize,
        response: usize,
        dreward: f64,
        scale: f64,
        grad: &mut ParamGrad,
    ) {
        let active = self.features(prompt, response);
        let acts = self.net.forward(&active);
        self.net
            .backward_into(&active, &acts, &[dreward], scale, grad);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardRow {
    pub epoch: usize,
    /// Fraction of dataset pairs with `r+ > r−`.
    pub accuracy: f64,
    pub grad_plus_mean: f64,
    pub grad_minus_mean: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardLog {
    pub config: TrainConfig,
    pub initial_accuracy: f64,
    pub rows: Vec<RewardRow>,
    pub pairs: Vec<PreferencePair>,
}

impl RewardLog {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REWARD_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch,
                g9(r.accuracy),
                g9(r.grad_plus_mean),
                g9(r.grad_minus_mean),
                g9(r.loss)
            ));
        }
        out
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.accuracy).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RewardOutcome {
    pub log: RewardLog,
    pub net: RewardNet,
}

fn reward_accuracy(net: &RewardNet, dataset: &[PreferencePair]) -> f64 {
    let correct = dataset
        .iter()
        .filter(|p| net.reward(p.prompt, p.chosen) > net.reward(p.prompt, p.rejected))
        .count();
    correct as f64 / dataset.len() as f64
}

/// Bradley-Terry training on the same pair stream a policy run with this
/// seed would consume. Uses the config's optimizer and learning rate.
pub fn run_rm_training(config: &TrainConfig) -> Result<RewardOutcome, TrainError> {
    config.validate()?;
    if config.objective != Objective::Rm {
        return Err(TrainError::InvalidConfig(
            "reward-model training needs objective = rm".into(),
        ));
    }
    let space = ToySpace::standard();
    let mut net = RewardNet::new(
        &space,
        REWARD_HIDDEN,
        &mut rng_stream(config.seed, STREAM_REWARD_INIT),
    );
    let dataset = all_pairs(&space, config.pairing);
    let mut sampler = pair_sampler(config);
    let mut opt = Optimizer::new(
        config.optimizer,
        config.learning_rate,
        net.net.shape().n_params(),
    );
    let mut log = RewardLog {
        config: config.clone(),
        initial_accuracy: reward_accuracy(&net, &dataset),
        rows: Vec::new(),
        pairs: Vec::new(),
    };
    let inv_batch = 1.0 / config.batch_size as f64;

    for epoch in 1..=config.epochs {
        let batch = sampler.sample(config.batch_size);
        log.pairs.extend_from_slice(&batch);
        let mut grad = ParamGrad::zeros(net.net.shape().n_params());
        let (mut gp, mut gm, mut loss) = (0.0, 0.0, 0.0);
        for pair in &batch {
            let r = RewardPoint::new(
                net.reward(pair.prompt, pair.chosen),
                net.reward(pair.prompt, pair.rejected),
            );
            let g = rm_grad(&r);
            loss += rm_loss(&r) * inv_batch;
            gp += g.d_plus.abs() * inv_batch;
            gm += g.d_minus.abs() * inv_batch;
            net.accumulate(pair.prompt, pair.chosen, g.d_plus, inv_batch, &mut grad);
            net.accumulate(pair.prompt, pair.rejected, g.d_minus, inv_batch, &mut grad);
        }
        if let Err(e) = opt.step(net.net.params_mut(), &grad) {
            return Err(TrainError::RewardDiverged {
                epoch,
                reason: e.to_string(),
                log: Box::new(log),
            });
        }
        if config.logs_epoch(epoch) {
            log.rows.push(RewardRow {
                epoch,
                accuracy: reward_accuracy(&net, &dataset),
                grad_plus_mean: gp,
                grad_minus_mean: gm,
                loss,
            });
        }
    }
    Ok(RewardOutcome { log, net })
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Variance of the last `window` values (all of them if fewer).
pub fn tail_variance(values: &[f64], window: usize) -> f64 {
    variance(&values[values.len().saturating_sub(window)..])
}

/// Trailing moving average; the first `window − 1` entries average what is available.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

pub fn is_non_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] >= w[0])
}
