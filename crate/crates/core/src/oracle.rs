//! Independent checks on the analytic layer: finite differences, asymptotic
//! sweeps, and direct checkers for the gradient identities and limits.
//!
//! Nothing here reuses the closed-form gradients as ground truth. Numeric
//! derivatives come from loss values only.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::losses::{
    rm_grad, rm_loss, simpo_limit_class, slic_hinge_active, GradientPair, LikelihoodPoint,
    LimitClass, LossError, Objective, RewardPoint,
};
use crate::numfmt::g9;
use crate::trainer::{run_dpo_training, MetricsLog, MetricsRow, TrainConfig};

pub const DEFAULT_REL_STEP: f64 = 1e-6;
/// Final-decade slopes within this of zero are read as a finite limit.
pub const CONSTANT_SLOPE_TOL: f64 = 0.02;
pub const SWEEP_START: f64 = 1e-1;
pub const SWEEP_END: f64 = 1e-12;
pub const POINTS_PER_DECADE: usize = 10;
pub const NORMALIZATION_TOL: f64 = 1e-9;
pub const ACCOUNTING_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("step {h} reaches outside the domain at {coordinate} = {value}")]
    StepTooLarge {
        coordinate: &'static str,
        value: f64,
        h: f64,
    },
    #[error("sweep of {series} is not monotone at pi_minus = {at}")]
    NonMonotone { series: &'static str, at: f64 },
    #[error("slope fit needs at least 8 points, got {0}")]
    TooFewPoints(usize),
    #[error("{0} is not applicable here")]
    WrongObjective(&'static str),
    #[error("malformed log: {0}")]
    MalformedLog(String),
}

/// Deliberate faults for exercising the negative path of the battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sabotage {
    /// Flip the sign of both DPO partials.
    DpoGradSign,
}

impl Sabotage {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dpo-grad-sign" => Some(Sabotage::DpoGradSign),
            _ => None,
        }
    }
}

/// Where analytic gradients come from: the losses module, optionally sabotaged.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradSource {
    pub sabotage: Option<Sabotage>,
}

impl GradSource {
    pub fn sabotaged(s: Sabotage) -> Self {
        Self { sabotage: Some(s) }
    }

    pub fn grad(
        &self,
        objective: &Objective,
        p: &LikelihoodPoint,
    ) -> Result<GradientPair, LossError> {
        let g = objective.grad(p)?;
        Ok(match (self.sabotage, objective) {
            (Some(Sabotage::DpoGradSign), Objective::Dpo { .. }) => {
                GradientPair::new(-g.d_plus, -g.d_minus)
            }
            _ => g,
        })
    }
}

/// `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    Central,
    Forward,
    Backward,
}

impl Stencil {
    fn label(&self) -> &'static str {
        match self {
            Stencil::Central => "central",
            Stencil::Forward => "forward",
            Stencil::Backward => "backward",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffReport {
    pub description: String,
    pub analytic: GradientPair,
    pub numeric: GradientPair,
    pub rel_err_plus: f64,
    pub rel_err_minus: f64,
    pub h_plus: f64,
    pub h_minus: f64,
    pub stencil_plus: Stencil,
    pub stencil_minus: Stencil,
}

impl FiniteDiffReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err_plus.max(self.rel_err_minus)
    }

    pub fn to_text(&self) -> String {
        format!(
            "{}\n  d_plus : analytic {:>16} numeric {:>16} rel_err {:.3e} ({} h={:.3e})\n  d_minus: analytic {:>16} numeric {:>16} rel_err {:.3e} ({} h={:.3e})\n",
            self.description,
            g9(self.analytic.d_plus),
            g9(self.numeric.d_plus),
            self.rel_err_plus,
            self.stencil_plus.label(),
            self.h_plus,
            g9(self.analytic.d_minus),
            g9(self.numeric.d_minus),
            self.rel_err_minus,
            self.stencil_minus.label(),
            self.h_minus,
        )
    }
}

#[derive(Clone, Copy)]
enum Coord {
    Plus,
    Minus,
}

fn shifted(p: &LikelihoodPoint, c: Coord, v: f64) -> Result<LikelihoodPoint, LossError> {
    match c {
        Coord::Plus => p.with_pi_plus(v),
        Coord::Minus => p.with_pi_minus(v),
    }
}

fn one_coordinate(
    objective: &Objective,
    p: &LikelihoodPoint,
    c: Coord,
    h: Option<f64>,
) -> Result<(f64, f64, Stencil), OracleError> {
    let (name, x) = match c {
        Coord::Plus => ("pi_plus", p.pi_plus()),
        Coord::Minus => ("pi_minus", p.pi_minus()),
    };
    let h = h.unwrap_or(DEFAULT_REL_STEP * x);
    let (lo, hi) = (x - h, x + h);
    if !(lo > 0.0) || hi > 1.0 {
        return Err(OracleError::StepTooLarge {
            coordinate: name,
            value: x,
            h,
        });
    }
    let lo_p = shifted(p, c, lo)?;
    let hi_p = shifted(p, c, hi)?;

    let stencil = match *objective {
        Objective::Slic { delta, .. } => {
            let centre = slic_hinge_active(p, delta);
            match (
                slic_hinge_active(&lo_p, delta) == centre,
                slic_hinge_active(&hi_p, delta) == centre,
            ) {
                (true, true) => Stencil::Central,
                (true, false) => Stencil::Backward,
                _ => Stencil::Forward,
            }
        }
        _ => Stencil::Central,
    };
    let f = |q: &LikelihoodPoint| objective.loss(q);
    // Divide by the representable step actually taken, not the nominal one.
    let numeric = match stencil {
        Stencil::Central => (f(&hi_p)? - f(&lo_p)?) / (hi - lo),
        Stencil::Forward => (f(&hi_p)? - f(p)?) / (hi - x),
        Stencil::Backward => (f(p)? - f(&lo_p)?) / (x - lo),
    };
    Ok((numeric, h, stencil))
}

/// Finite-difference check of one objective at one point. `h = None` uses
/// `1e-6 · π` per coordinate. SLiC switches to a one-sided stencil when the
/// central one would straddle the hinge.
pub fn finite_diff(
    objective: &Objective,
    p: &LikelihoodPoint,
    h: Option<f64>,
) -> Result<FiniteDiffReport, OracleError> {
    finite_diff_with(&GradSource::default(), objective, p, h)
}

pub fn finite_diff_with(
    source: &GradSource,
    objective: &Objective,
    p: &LikelihoodPoint,
    h: Option<f64>,
) -> Result<FiniteDiffReport, OracleError> {
    if *objective == Objective::Rm {
        return Err(OracleError::WrongObjective("rm (use finite_diff_rm)"));
    }
    let analytic = source.grad(objective, p)?;
    let (np, hp, sp) = one_coordinate(objective, p, Coord::Plus, h)?;
    let (nm, hm, sm) = one_coordinate(objective, p, Coord::Minus, h)?;
    Ok(FiniteDiffReport {
        description: format!(
            "{} at pi+={} pi-={} pi0+={} pi0-={}",
            objective.name(),
            g9(p.pi_plus()),
            g9(p.pi_minus()),
            g9(p.pi0_plus()),
            g9(p.pi0_minus())
        ),
        analytic,
        numeric: GradientPair::new(np, nm),
        rel_err_plus: relative_error(analytic.d_plus, np),
        rel_err_minus: relative_error(analytic.d_minus, nm),
        h_plus: hp,
        h_minus: hm,
        stencil_plus: sp,
        stencil_minus: sm,
    })
}

/// Central differences on the reward coordinates. `h = None` uses `1e-6 · max(|r|, 1)`.
pub fn finite_diff_rm(r: &RewardPoint, h: Option<f64>) -> FiniteDiffReport {
    let hp = h.unwrap_or(DEFAULT_REL_STEP * r.r_plus.abs().max(1.0));
    let hm = h.unwrap_or(DEFAULT_REL_STEP * r.r_minus.abs().max(1.0));
    let d = |f: &dyn Fn(f64) -> f64, x: f64, h: f64| (f(x + h) - f(x - h)) / ((x + h) - (x - h));
    let np = d(&|v| rm_loss(&RewardPoint::new(v, r.r_minus)), r.r_plus, hp);
    let nm = d(&|v| rm_loss(&RewardPoint::new(r.r_plus, v)), r.r_minus, hm);
    let analytic = rm_grad(r);
    FiniteDiffReport {
        description: format!("rm at r+={} r-={}", g9(r.r_plus), g9(r.r_minus)),
        analytic,
        numeric: GradientPair::new(np, nm),
        rel_err_plus: relative_error(analytic.d_plus, np),
        rel_err_minus: relative_error(analytic.d_minus, nm),
        h_plus: hp,
        h_minus: hm,
        stencil_plus: Stencil::Central,
        stencil_minus: Stencil::Central,
    }
}

/// Log-uniform interior point with every likelihood in `[1e-3, 0.9]`.
pub fn random_point<R: Rng>(rng: &mut R) -> LikelihoodPoint {
    let mut draw = || 10f64.powf(rng.random_range(-3.0..0.9f64.log10()));
    LikelihoodPoint::new(draw(), draw(), draw(), draw()).expect("draws are interior")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioIdentityReport {
    pub n_points: usize,
    pub max_rel_err: f64,
    pub worst: Option<LikelihoodPoint>,
}

/// `d_minus / d_plus = −π+ / π−` for DPO at random points and random β in (0, 1).
pub fn check_ratio_identity(
    n_points: usize,
    seed: u64,
) -> Result<RatioIdentityReport, OracleError> {
    check_ratio_identity_with(&GradSource::default(), n_points, seed)
}

pub fn check_ratio_identity_with(
    source: &GradSource,
    n_points: usize,
    seed: u64,
) -> Result<RatioIdentityReport, OracleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = RatioIdentityReport {
        n_points,
        max_rel_err: 0.0,
        worst: None,
    };
    for _ in 0..n_points {
        let p = random_point(&mut rng);
        let beta = rng.random_range(0.01..0.99);
        let g = source.grad(&Objective::Dpo { beta }, &p)?;
        let target = p.pi_plus() / p.pi_minus();
        let err = (g.d_minus / g.d_plus + target).abs() / target;
        if !(err <= report.max_rel_err) {
            report.max_rel_err = err;
            report.worst = Some(p);
        }
    }
    Ok(report)
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Result<f64, OracleError> {
    if xs.len() < 8 {
        return Err(OracleError::TooFewPoints(xs.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Geometric grid from `1e-1` down to `1e-12`, strictly decreasing.
pub fn sweep_grid(points_per_decade: usize) -> Vec<f64> {
    let decades = (SWEEP_START.log10() - SWEEP_END.log10()).round() as usize;
    let n = decades * points_per_decade;
    (0..=n)
        .map(|k| 10f64.powf(SWEEP_START.log10() - k as f64 / points_per_decade as f64))
        .collect()
}

/// Reads a magnitude series' limit as `π− → 0` from its final-decade slope
/// in log–log space: flat is a finite limit, rising magnitude is infinity.
pub fn classify_slope(slope: f64, last_value: f64) -> LimitClass {
    if slope.abs() <= CONSTANT_SLOPE_TOL {
        LimitClass::Constant(last_value)
    } else if slope < 0.0 {
        LimitClass::Infinity
    } else {
        LimitClass::Zero
    }
}

fn check_monotone(series: &'static str, grid: &[f64], ys: &[f64]) -> Result<(), OracleError> {
    let slack = |a: f64, b: f64| 1e-12 * a.abs().max(b.abs());
    let up = ys.windows(2).all(|w| w[1] >= w[0] - slack(w[0], w[1]));
    let down = ys.windows(2).all(|w| w[1] <= w[0] + slack(w[0], w[1]));
    if up || down {
        return Ok(());
    }
    let at = ys
        .windows(3)
        .position(|w| (w[1] - w[0]).signum() * (w[2] - w[1]).signum() < 0.0)
        .map_or(grid[0], |i| grid[i + 1]);
    Err(OracleError::NonMonotone { series, at })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitSweepReport {
    pub objective: Objective,
    pub pi_plus: f64,
    pub grid: Vec<f64>,
    pub abs_d_plus: Vec<f64>,
    pub abs_d_minus: Vec<f64>,
    pub slope_plus: f64,
    pub slope_minus: f64,
    pub class_plus: LimitClass,
    pub class_minus: LimitClass,
    /// `|d_minus|` at the end of the sweep over its value three decades earlier.
    pub growth_minus_three_decades: f64,
}

impl LimitSweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pi_minus,abs_d_plus,abs_d_minus\n");
        for i in 0..self.grid.len() {
            let _ = writeln!(
                out,
                "{},{},{}",
                g9(self.grid[i]),
                g9(self.abs_d_plus[i]),
                g9(self.abs_d_minus[i])
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        format!(
            "{} sweep, pi+={}, {} points from {} to {}\n  d_plus : final-decade slope {:+.5} -> {}\n  d_minus: final-decade slope {:+.5} -> {} (growth over last 3 decades {:.3e})\n",
            self.objective.name(),
            g9(self.pi_plus),
            self.grid.len(),
            g9(self.grid[0]),
            g9(*self.grid.last().unwrap()),
            self.slope_plus,
            describe_class(&self.class_plus),
            self.slope_minus,
            describe_class(&self.class_minus),
            self.growth_minus_three_decades,
        )
    }
}

fn describe_class(c: &LimitClass) -> String {
    match c {
        LimitClass::Constant(v) => format!("constant ({})", g9(*v)),
        other => other.label().to_string(),
    }
}

/// Sweeps `π−` over the standard grid with `π+` fixed and equal reference
/// likelihoods (`α = 1`), fitting slopes on the last decade.
pub fn limit_sweep(
    objective: &Objective,
    pi_plus: f64,
    points_per_decade: usize,
) -> Result<LimitSweepReport, OracleError> {
    limit_sweep_with(
        &GradSource::default(),
        objective,
        pi_plus,
        points_per_decade,
    )
}

fn limit_sweep_with(
    source: &GradSource,
    objective: &Objective,
    pi_plus: f64,
    points_per_decade: usize,
) -> Result<LimitSweepReport, OracleError> {
    if *objective == Objective::Rm {
        return Err(OracleError::WrongObjective("rm"));
    }
    let grid = sweep_grid(points_per_decade);
    let (mut abs_d_plus, mut abs_d_minus) = (
        Vec::with_capacity(grid.len()),
        Vec::with_capacity(grid.len()),
    );
    for &pm in &grid {
        let g = source.grad(objective, &LikelihoodPoint::new(pi_plus, pm, 0.5, 0.5)?)?;
        abs_d_plus.push(g.d_plus.abs());
        abs_d_minus.push(g.d_minus.abs());
    }
    check_monotone("d_plus", &grid, &abs_d_plus)?;
    check_monotone("d_minus", &grid, &abs_d_minus)?;

    let tail = points_per_decade + 1;
    let start = grid.len() - tail;
    let lx: Vec<f64> = grid[start..].iter().map(|v| v.ln()).collect();
    let slope = |ys: &[f64]| {
        let ly: Vec<f64> = ys[start..].iter().map(|v| v.ln()).collect();
        fit_slope(&lx, &ly)
    };
    let slope_plus = slope(&abs_d_plus)?;
    let slope_minus = slope(&abs_d_minus)?;
    let last = grid.len() - 1;
    let three = last.saturating_sub(3 * points_per_decade);
    Ok(LimitSweepReport {
        objective: *objective,
        pi_plus,
        class_plus: classify_slope(slope_plus, abs_d_plus[last]),
        class_minus: classify_slope(slope_minus, abs_d_minus[last]),
        growth_minus_three_decades: abs_d_minus[last] / abs_d_minus[three],
        grid,
        abs_d_plus,
        abs_d_minus,
        slope_plus,
        slope_minus,
    })
}

/// The vanishing/exploding sweep for the DPO family, at the default density.
pub fn check_dpo_limits(
    objective: &Objective,
    pi_plus: f64,
) -> Result<LimitSweepReport, OracleError> {
    check_dpo_limits_with(&GradSource::default(), objective, pi_plus)
}

pub fn check_dpo_limits_with(
    source: &GradSource,
    objective: &Objective,
    pi_plus: f64,
) -> Result<LimitSweepReport, OracleError> {
    match objective {
        Objective::Dpo { .. } | Objective::FlexDpo { .. } | Objective::SftDpo { .. } => {
            limit_sweep_with(source, objective, pi_plus, POINTS_PER_DECADE)
        }
        _ => Err(OracleError::WrongObjective(objective.name())),
    }
}

/// Final-decade slopes the DPO family should show: `|d_plus| ~ (π−)^s+`,
/// `|d_minus| ~ (π−)^s−`. SFT-DPO's chosen side tends to a constant.
pub fn expected_slopes(objective: &Objective) -> Option<(f64, f64)> {
    match *objective {
        Objective::Dpo { beta } => Some((beta, beta - 1.0)),
        Objective::FlexDpo { beta_minus, .. } => Some((beta_minus, beta_minus - 1.0)),
        Objective::SftDpo { beta, .. } => Some((0.0, beta - 1.0)),
        Objective::SimPo {
            beta, len_minus, ..
        } => Some((
            beta / f64::from(len_minus),
            beta / f64::from(len_minus) - 1.0,
        )),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimpoLimitReport {
    pub sweep: LimitSweepReport,
    pub analytic: LimitClass,
    pub numeric: LimitClass,
    /// Relative gap between the sweep's last value and `βC/|a−|`; constant case only.
    pub plateau_rel_err: Option<f64>,
    pub passed: bool,
}

impl SimpoLimitReport {
    pub fn to_text(&self) -> String {
        let mut s = self.sweep.to_text();
        let _ = writeln!(
            s,
            "  analytic {} / numeric {}{} -> {}",
            describe_class(&self.analytic),
            describe_class(&self.numeric),
            self.plateau_rel_err
                .map_or(String::new(), |e| format!(", plateau rel err {e:.3e}")),
            if self.passed { "PASS" } else { "FAIL" }
        );
        s
    }
}

pub const PLATEAU_REL_TOL: f64 = 0.01;
/// SFT-DPO's chosen-side gradient approaches `γ/π+` only as fast as the DPO
/// term decays, `∝ (π−)^β`; at the end of the sweep with β = 0.1 that term is
/// still about 1.4% of `γ/π+`.
pub const SFT_PLATEAU_REL_TOL: f64 = 0.02;

/// Numeric classification of SimPO's rejected-side limit against the analytic rule.
pub fn check_simpo_limits(
    objective: &Objective,
    pi_plus: f64,
) -> Result<SimpoLimitReport, OracleError> {
    let Objective::SimPo {
        beta,
        margin,
        len_plus,
        len_minus,
    } = *objective
    else {
        return Err(OracleError::WrongObjective(objective.name()));
    };
    let sweep = limit_sweep(objective, pi_plus, POINTS_PER_DECADE)?;
    let analytic = simpo_limit_class(beta, margin, len_plus, len_minus, pi_plus);
    let numeric = sweep.class_minus;
    let plateau_rel_err = match (analytic, numeric) {
        (LimitClass::Constant(a), LimitClass::Constant(n)) => Some((n - a).abs() / a.abs()),
        _ => None,
    };
    let passed =
        analytic.same_kind(&numeric) && plateau_rel_err.is_none_or(|e| e < PLATEAU_REL_TOL);
    Ok(SimpoLimitReport {
        sweep,
        analytic,
        numeric,
        plateau_rel_err,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MassAccountingReport {
    /// Worst `|Σ_a π(a|x) − 1|` over prompts and logged epochs.
    pub max_normalization_residual: f64,
    /// Worst `|Δunseen + Δ(chosen + rejected)|` between consecutive logged epochs.
    pub max_accounting_residual: f64,
    pub worst_epoch: usize,
    pub accounting_ok: bool,
    pub unseen_increased: bool,
    pub rejected_decreased: bool,
}

impl MassAccountingReport {
    pub fn passed(&self) -> bool {
        self.accounting_ok && self.unseen_increased && self.rejected_decreased
    }

    pub fn to_text(&self) -> String {
        format!(
            "mass accounting: normalization residual {:.3e}, transfer residual {:.3e} (worst at epoch {}) -> {}\nunseen mass increased: {}\nrejected mass decreased: {}\n",
            self.max_normalization_residual,
            self.max_accounting_residual,
            self.worst_epoch,
            if self.accounting_ok { "ok" } else { "VIOLATED" },
            self.unseen_increased,
            self.rejected_decreased,
        )
    }
}

/// Per-epoch probability-mass accounting on a policy-training log, plus the
/// over-the-run direction of the unseen and rejected mass.
pub fn check_mass_accounting(log: &MetricsLog) -> Result<MassAccountingReport, OracleError> {
    if log.rows.is_empty() {
        return Err(OracleError::MalformedLog("no logged epochs".into()));
    }
    let n_prompts = log.initial.masses.len();
    if n_prompts == 0 {
        return Err(OracleError::MalformedLog(
            "rows carry no per-prompt masses".into(),
        ));
    }
    if let Some(r) = log.rows.iter().find(|r| r.masses.len() != n_prompts) {
        return Err(OracleError::MalformedLog(format!(
            "epoch {} has {} prompt masses, expected {n_prompts}",
            r.epoch,
            r.masses.len()
        )));
    }
    let mut report = MassAccountingReport {
        max_normalization_residual: 0.0,
        max_accounting_residual: 0.0,
        worst_epoch: 0,
        accounting_ok: true,
        unseen_increased: false,
        rejected_decreased: false,
    };
    let all: Vec<&MetricsRow> = std::iter::once(&log.initial).chain(&log.rows).collect();
    for r in &all {
        for m in &r.masses {
            report.max_normalization_residual =
                report.max_normalization_residual.max((m.total - 1.0).abs());
        }
    }
    for w in all.windows(2) {
        for (a, b) in w[0].masses.iter().zip(&w[1].masses) {
            let residual =
                ((b.unseen - a.unseen) + ((b.chosen + b.rejected) - (a.chosen + a.rejected))).abs();
            if residual > report.max_accounting_residual {
                report.max_accounting_residual = residual;
                report.worst_epoch = w[1].epoch;
            }
        }
    }
    report.accounting_ok = report.max_normalization_residual <= NORMALIZATION_TOL
        && report.max_accounting_residual <= ACCOUNTING_TOL;
    let (first, last) = (all[0], all[all.len() - 1]);
    let sum = |r: &MetricsRow, f: fn(&crate::trainer::PromptMass) -> f64| {
        r.masses.iter().map(f).sum::<f64>()
    };
    report.unseen_increased = sum(last, |m| m.unseen) > sum(first, |m| m.unseen);
    report.rejected_decreased = sum(last, |m| m.rejected) < sum(first, |m| m.rejected);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmBalanceReport {
    pub n_points: usize,
    pub max_abs_sum: f64,
    pub all_finite: bool,
}

/// `d_plus + d_minus` over random reward pairs, including extreme gaps.
pub fn check_rm_balance(n_points: usize, seed: u64) -> RmBalanceReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<RewardPoint> = (0..n_points)
        .map(|_| RewardPoint::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)))
        .collect();
    points.extend([
        RewardPoint::new(500.0, 0.0),
        RewardPoint::new(0.0, 500.0),
        RewardPoint::new(0.0, 0.0),
    ]);
    let mut report = RmBalanceReport {
        n_points: points.len(),
        max_abs_sum: 0.0,
        all_finite: true,
    };
    for r in &points {
        let g = rm_grad(r);
        report.all_finite &= g.is_finite() && rm_loss(r).is_finite();
        report.max_abs_sum = report.max_abs_sum.max((g.d_plus + g.d_minus).abs());
    }
    report
}

/// Hyperparameters used when checking each objective against finite differences.
pub fn battery_objectives() -> Vec<Objective> {
    vec![
        Objective::Dpo { beta: 0.1 },
        Objective::FlexDpo {
            beta_plus: 0.1,
            beta_minus: 0.05,
        },
        Objective::SftDpo {
            beta: 0.1,
            gamma: 0.5,
        },
        Objective::Ipo { eta: 0.1 },
        Objective::Slic {
            delta: 1.0,
            eta: 0.1,
        },
        Objective::SimPo {
            beta: 2.0,
            margin: 0.5,
            len_plus: 3,
            len_minus: 5,
        },
        Objective::Rm,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckSummary {
    pub objective: &'static str,
    pub n_points: usize,
    pub max_rel_err: f64,
    pub worst: FiniteDiffReport,
}

/// Finite-difference agreement for all seven objectives at `n_points` random points each.
pub fn check_all_gradients(
    n_points: usize,
    seed: u64,
) -> Result<Vec<GradientCheckSummary>, OracleError> {
    check_all_gradients_with(&GradSource::default(), n_points, seed)
}

pub fn check_all_gradients_with(
    source: &GradSource,
    n_points: usize,
    seed: u64,
) -> Result<Vec<GradientCheckSummary>, OracleError> {
    let n_points = n_points.max(1);
    battery_objectives()
        .into_iter()
        .enumerate()
        .map(|(i, objective)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let mut worst: Option<FiniteDiffReport> = None;
            for _ in 0..n_points {
                let report = if objective == Objective::Rm {
                    finite_diff_rm(
                        &RewardPoint::new(
                            rng.random_range(-10.0..10.0),
                            rng.random_range(-10.0..10.0),
                        ),
                        None,
                    )
                } else {
                    finite_diff_with(source, &objective, &random_point(&mut rng), None)?
                };
                if worst
                    .as_ref()
                    .is_none_or(|w| !(report.max_rel_err() <= w.max_rel_err()))
                {
                    worst = Some(report);
                }
            }
            let worst = worst.expect("at least one point");
            Ok(GradientCheckSummary {
                objective: objective.name(),
                n_points,
                max_rel_err: worst.max_rel_err(),
                worst,
            })
        })
        .collect()
}

pub const RATIO_IDENTITY_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-5;
pub const SLOPE_TOL: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub only: Option<String>,
    pub points: usize,
    pub seed: u64,
    pub sabotage: Option<Sabotage>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            only: None,
            points: 1000,
            seed: 0,
            sabotage: None,
        }
    }
}

pub const CHECK_NAMES: [&str; 6] = [
    "ratio-identity",
    "gradients",
    "dpo-limits",
    "mass-accounting",
    "simpo-limits",
    "rm-balance",
];

fn verdict(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name,
        passed,
        detail,
    }
}

fn failed(name: &'static str, err: impl std::fmt::Display) -> CheckResult {
    verdict(name, false, format!("error: {err}"))
}

/// Runs the verification battery, or the single check named in `opts.only`.
pub fn run_battery(opts: &VerifyOptions) -> Vec<CheckResult> {
    let source = GradSource {
        sabotage: opts.sabotage,
    };
    let wanted = |name: &str| opts.only.as_deref().is_none_or(|o| o == name);
    let mut results = Vec::new();

    if wanted("ratio-identity") {
        results.push(
            match check_ratio_identity_with(&source, opts.points, opts.seed) {
                Ok(r) => verdict(
                    "ratio-identity",
                    r.max_rel_err < RATIO_IDENTITY_TOL,
                    format!(
                        "{} points, max rel err {:.3e} (tol {RATIO_IDENTITY_TOL:e})",
                        r.n_points, r.max_rel_err
                    ),
                ),
                Err(e) => failed("ratio-identity", e),
            },
        );
    }
    if wanted("gradients") {
        results.push(
            match check_all_gradients_with(&source, opts.points, opts.seed) {
                Ok(all) => {
                    let worst = all.iter().map(|s| s.max_rel_err).fold(0.0, f64::max);
                    let detail = all
                        .iter()
                        .map(|s| format!("{} {:.1e}", s.objective, s.max_rel_err))
                        .collect::<Vec<_>>()
                        .join(", ");
                    verdict(
                        "gradients",
                        worst < GRADIENT_TOL,
                        format!("{} points each; {detail}", opts.points),
                    )
                }
                Err(e) => failed("gradients", e),
            },
        );
    }
    if wanted("dpo-limits") {
        let objectives = [
            Objective::Dpo { beta: 0.1 },
            Objective::FlexDpo {
                beta_plus: 0.1,
                beta_minus: 0.05,
            },
            Objective::SftDpo {
                beta: 0.1,
                gamma: 0.5,
            },
        ];
        let mut ok = true;
        let mut parts = Vec::new();
        for obj in objectives {
            match check_dpo_limits_with(&source, &obj, 0.5) {
                Ok(r) => {
                    let (ep, em) = expected_slopes(&obj).expect("dpo family");
                    ok &= (r.slope_plus - ep).abs() <= SLOPE_TOL
                        && (r.slope_minus - em).abs() <= SLOPE_TOL;
                    ok &= r.class_minus == LimitClass::Infinity;
                    ok &= match obj {
                        Objective::SftDpo { gamma, .. } => match r.class_plus {
                            LimitClass::Constant(v) => {
                                (v - gamma / 0.5).abs() / (gamma / 0.5) < SFT_PLATEAU_REL_TOL
                            }
                            _ => false,
                        },
                        _ => r.class_plus == LimitClass::Zero,
                    };
                    parts.push(format!(
                        "{} slopes {:+.4}/{:+.4}",
                        obj.name(),
                        r.slope_plus,
                        r.slope_minus
                    ));
                }
                Err(e) => {
                    ok = false;
                    parts.push(format!("{}: {e}", obj.name()));
                }
            }
        }
        results.push(verdict("dpo-limits", ok, parts.join(", ")));
    }
    if wanted("mass-accounting") {
        let cfg = TrainConfig {
            seed: opts.seed,
            ..TrainConfig::default()
        };
        results.push(match run_dpo_training(&cfg) {
            Ok(out) => match check_mass_accounting(&out.log) {
                Ok(r) => verdict(
                    "mass-accounting",
                    r.passed(),
                    format!(
                        "normalization {:.1e}, transfer {:.1e}; unseen increased: {}, rejected decreased: {}",
                        r.max_normalization_residual, r.max_accounting_residual, r.unseen_increased, r.rejected_decreased
                    ),
                ),
                Err(e) => failed("mass-accounting", e),
            },
            Err(e) => failed("mass-accounting", e),
        });
    }
    if wanted("simpo-limits") {
        let mut ok = true;
        let mut parts = Vec::new();
        for beta in [0.5, 2.0, 1.0] {
            let obj = Objective::SimPo {
                beta,
                margin: 0.0,
                len_plus: 1,
                len_minus: 1,
            };
            match check_simpo_limits(&obj, 0.5) {
                Ok(r) => {
                    ok &= r.passed;
                    parts.push(format!("beta={beta}: {}", describe_class(&r.numeric)));
                }
                Err(e) => {
                    ok = false;
                    parts.push(format!("beta={beta}: {e}"));
                }
            }
        }
        results.push(verdict("simpo-limits", ok, parts.join(", ")));
    }
    if wanted("rm-balance") {
        let r = check_rm_balance(opts.points, opts.seed);
        results.push(verdict(
            "rm-balance",
            r.max_abs_sum == 0.0 && r.all_finite,
            format!("{} points, max |d+ + d-| = {:e}", r.n_points, r.max_abs_sum),
        ));
    }
    results
}

pub fn results_table(results: &[CheckResult]) -> String {
    let mut out = String::new();
    for r in results {
        let _ = writeln!(
            out,
            "{:<12} {:<4}  {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
    }
    out
}

pub fn results_csv(results: &[CheckResult]) -> String {
    let mut out = String::from("check,passed,detail\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},\"{}\"",
            r.name,
            r.passed,
            r.detail.replace('"', "'")
        );
    }
    out
}
