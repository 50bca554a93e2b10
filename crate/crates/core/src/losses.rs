//! Closed-form preference objectives.
//!
//! Every objective here is a scalar function of a chosen/rejected likelihood
//! pair (plus frozen reference likelihoods), or of a chosen/rejected reward
//! pair for the Bradley-Terry reward model. Gradients are taken with respect
//! to those scalars, not with respect to network parameters; the policy module
//! chains them through the softmax.
//!
//! All logistic objectives are evaluated through a log-domain margin and
//! `softplus`, so ratios like `π− / π+ = 1e-200` do not overflow.

use thiserror::Error;

/// Likelihoods below this are clamped before taking logs.
pub const LIKELIHOOD_FLOOR: f64 = 1e-300;

/// Slack allowed above 1.0 for likelihoods coming out of a softmax.
const UPPER_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("likelihood {name} = {value} is outside (0, 1]")]
    Domain { name: &'static str, value: f64 },
    #[error("hyperparameter {name} = {value} is invalid: {reason}")]
    Hyperparameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("the {0} objective is defined on rewards, not likelihoods")]
    RewardObjective(&'static str),
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow for large `x` or cancellation for very negative `x`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Chosen/rejected likelihoods under the trained policy and the frozen reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodPoint {
    pi_plus: f64,
    pi_minus: f64,
    pi0_plus: f64,
    pi0_minus: f64,
}

fn check_likelihood(name: &'static str, value: f64) -> Result<f64, LossError> {
    if !(value > 0.0) || value > 1.0 + UPPER_SLACK {
        return Err(LossError::Domain { name, value });
    }
    Ok(value.clamp(LIKELIHOOD_FLOOR, 1.0))
}

fn clamp_likelihood(name: &'static str, value: f64) -> Result<f64, LossError> {
    if !(0.0..=1.0 + UPPER_SLACK).contains(&value) {
        return Err(LossError::Domain { name, value });
    }
    Ok(value.clamp(LIKELIHOOD_FLOOR, 1.0))
}

impl LikelihoodPoint {
    /// Strict constructor: every likelihood must lie in `(0, 1]`.
    pub fn new(
        pi_plus: f64,
        pi_minus: f64,
        pi0_plus: f64,
        pi0_minus: f64,
    ) -> Result<Self, LossError> {
        Ok(Self {
            pi_plus: check_likelihood("pi_plus", pi_plus)?,
            pi_minus: check_likelihood("pi_minus", pi_minus)?,
            pi0_plus: check_likelihood("pi0_plus", pi0_plus)?,
            pi0_minus: check_likelihood("pi0_minus", pi0_minus)?,
        })
    }

    /// Like [`LikelihoodPoint::new`] but maps exact zeros (softmax underflow)
    /// to [`LIKELIHOOD_FLOOR`]. Negative or NaN inputs are still rejected.
    pub fn clamped(
        pi_plus: f64,
        pi_minus: f64,
        pi0_plus: f64,
        pi0_minus: f64,
    ) -> Result<Self, LossError> {
        Ok(Self {
            pi_plus: clamp_likelihood("pi_plus", pi_plus)?,
            pi_minus: clamp_likelihood("pi_minus", pi_minus)?,
            pi0_plus: clamp_likelihood("pi0_plus", pi0_plus)?,
            pi0_minus: clamp_likelihood("pi0_minus", pi0_minus)?,
        })
    }

    pub fn pi_plus(&self) -> f64 {
        self.pi_plus
    }

    pub fn pi_minus(&self) -> f64 {
        self.pi_minus
    }

    pub fn pi0_plus(&self) -> f64 {
        self.pi0_plus
    }

    pub fn pi0_minus(&self) -> f64 {
        self.pi0_minus
    }

    /// `z = π− / π+`.
    pub fn z(&self) -> f64 {
        self.pi_minus / self.pi_plus
    }

    pub fn with_pi_plus(&self, pi_plus: f64) -> Result<Self, LossError> {
        Self::new(pi_plus, self.pi_minus, self.pi0_plus, self.pi0_minus)
    }

    pub fn with_pi_minus(&self, pi_minus: f64) -> Result<Self, LossError> {
        Self::new(self.pi_plus, pi_minus, self.pi0_plus, self.pi0_minus)
    }

    fn log_ratio_plus(&self) -> f64 {
        self.pi_plus.ln() - self.pi0_plus.ln()
    }

    fn log_ratio_minus(&self) -> f64 {
        self.pi_minus.ln() - self.pi0_minus.ln()
    }
}

/// Chosen/rejected rewards for the Bradley-Terry reward model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardPoint {
    pub r_plus: f64,
    pub r_minus: f64,
}

impl RewardPoint {
    pub fn new(r_plus: f64, r_minus: f64) -> Self {
        Self { r_plus, r_minus }
    }
}

/// Partial derivatives with respect to the chosen (`d_plus`) and rejected
/// (`d_minus`) likelihood or reward.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradientPair {
    pub d_plus: f64,
    pub d_minus: f64,
}

impl GradientPair {
    pub fn new(d_plus: f64, d_minus: f64) -> Self {
        Self { d_plus, d_minus }
    }

    pub fn is_finite(&self) -> bool {
        self.d_plus.is_finite() && self.d_minus.is_finite()
    }
}

/// Bradley-Terry probability that the chosen response is preferred.
pub fn bt_preference_prob(r_plus: f64, r_minus: f64) -> f64 {
    sigmoid(r_plus - r_minus)
}

// Shared logistic core: loss = softplus(-m), m = b+ log(π+/π0+) - b- log(π-/π0-).
// DPO is the b+ = b- case, so the two are bit-identical when the temperatures agree.
fn logistic_margin(p: &LikelihoodPoint, beta_plus: f64, beta_minus: f64) -> f64 {
    beta_plus * p.log_ratio_plus() - beta_minus * p.log_ratio_minus()
}

fn logistic_grad(p: &LikelihoodPoint, beta_plus: f64, beta_minus: f64) -> GradientPair {
    let weight = sigmoid(-logistic_margin(p, beta_plus, beta_minus));
    GradientPair {
        d_plus: -beta_plus * weight / p.pi_plus,
        d_minus: beta_minus * weight / p.pi_minus,
    }
}

/// `log(1 + α z^β)` with `α = (π0+/π0−)^β`.
pub fn dpo_loss(p: &LikelihoodPoint, beta: f64) -> f64 {
    flex_dpo_loss(p, beta, beta)
}

pub fn dpo_grad(p: &LikelihoodPoint, beta: f64) -> GradientPair {
    flex_dpo_grad(p, beta, beta)
}

/// DPO with separate temperatures on the chosen and rejected log-ratios:
/// `log(1 + (π0+/π+)^β+ · (π−/π0−)^β−)`.
pub fn flex_dpo_loss(p: &LikelihoodPoint, beta_plus: f64, beta_minus: f64) -> f64 {
    softplus(-logistic_margin(p, beta_plus, beta_minus))
}

pub fn flex_dpo_grad(p: &LikelihoodPoint, beta_plus: f64, beta_minus: f64) -> GradientPair {
    logistic_grad(p, beta_plus, beta_minus)
}

/// DPO plus a negative log-likelihood term `-γ log π+` on the chosen response.
pub fn sft_dpo_loss(p: &LikelihoodPoint, beta: f64, gamma: f64) -> f64 {
    dpo_loss(p, beta) - gamma * p.pi_plus.ln()
}

pub fn sft_dpo_grad(p: &LikelihoodPoint, beta: f64, gamma: f64) -> GradientPair {
    let g = dpo_grad(p, beta);
    GradientPair {
        d_plus: g.d_plus - gamma / p.pi_plus,
        d_minus: g.d_minus,
    }
}

fn ipo_bracket(p: &LikelihoodPoint, eta: f64) -> f64 {
    p.log_ratio_plus() - p.log_ratio_minus() - 1.0 / (2.0 * eta)
}

/// Squared distance of the reference-normalised log-odds from `1 / (2η)`.
pub fn ipo_loss(p: &LikelihoodPoint, eta: f64) -> f64 {
    ipo_bracket(p, eta).powi(2)
}

pub fn ipo_grad(p: &LikelihoodPoint, eta: f64) -> GradientPair {
    let b = ipo_bracket(p, eta);
    GradientPair {
        d_plus: 2.0 * b / p.pi_plus,
        d_minus: -2.0 * b / p.pi_minus,
    }
}

/// Whether the SLiC rank hinge is active, i.e. `δ > log(π+/π−)`.
/// The boundary itself counts as inactive.
pub fn slic_hinge_active(p: &LikelihoodPoint, delta: f64) -> bool {
    delta > p.pi_plus.ln() - p.pi_minus.ln()
}

pub fn slic_loss(p: &LikelihoodPoint, delta: f64, eta: f64) -> f64 {
    let hinge = delta - p.pi_plus.ln() + p.pi_minus.ln();
    hinge.max(0.0) - eta * p.pi_plus.ln()
}

pub fn slic_grad(p: &LikelihoodPoint, delta: f64, eta: f64) -> GradientPair {
    if slic_hinge_active(p, delta) {
        GradientPair {
            d_plus: -(1.0 + eta) / p.pi_plus,
            d_minus: 1.0 / p.pi_minus,
        }
    } else {
        GradientPair {
            d_plus: -eta / p.pi_plus,
            d_minus: 0.0,
        }
    }
}

fn simpo_margin(p: &LikelihoodPoint, beta: f64, margin: f64, len_plus: u32, len_minus: u32) -> f64 {
    beta / f64::from(len_plus) * p.pi_plus.ln()
        - beta / f64::from(len_minus) * p.pi_minus.ln()
        - margin
}

/// Reference-free, length-normalised logistic loss with target margin `γ`.
pub fn simpo_loss(
    p: &LikelihoodPoint,
    beta: f64,
    margin: f64,
    len_plus: u32,
    len_minus: u32,
) -> f64 {
    softplus(-simpo_margin(p, beta, margin, len_plus, len_minus))
}

pub fn simpo_grad(
    p: &LikelihoodPoint,
    beta: f64,
    margin: f64,
    len_plus: u32,
    len_minus: u32,
) -> GradientPair {
    let weight = sigmoid(-simpo_margin(p, beta, margin, len_plus, len_minus));
    GradientPair {
        d_plus: -beta / (f64::from(len_plus) * p.pi_plus) * weight,
        d_minus: beta / (f64::from(len_minus) * p.pi_minus) * weight,
    }
}

/// Limit of `∂ℓ/∂π−` for SimPO as `π− → 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LimitClass {
    Zero,
    Infinity,
    /// Finite nonzero limit, carrying its value.
    Constant(f64),
}

impl LimitClass {
    pub fn label(&self) -> &'static str {
        match self {
            LimitClass::Zero => "zero",
            LimitClass::Infinity => "infinity",
            LimitClass::Constant(_) => "constant",
        }
    }

    pub fn same_kind(&self, other: &LimitClass) -> bool {
        self.label() == other.label()
    }
}

/// Analytic three-way limit rule for SimPO's rejected-side gradient. The
/// constant case depends on `π+`, which is held fixed at `pi_plus`.
pub fn simpo_limit_class(
    beta: f64,
    margin: f64,
    len_plus: u32,
    len_minus: u32,
    pi_plus: f64,
) -> LimitClass {
    let len_minus = f64::from(len_minus);
    if beta > len_minus {
        LimitClass::Zero
    } else if beta < len_minus {
        LimitClass::Infinity
    } else {
        let c = (-(beta / f64::from(len_plus)) * pi_plus.ln() + margin).exp();
        LimitClass::Constant(beta * c / len_minus)
    }
}

/// Bradley-Terry negative log-likelihood `log(1 + e^{r− − r+})`.
pub fn rm_loss(r: &RewardPoint) -> f64 {
    softplus(r.r_minus - r.r_plus)
}

/// The two partials are the same floating-point value with opposite signs.
pub fn rm_grad(r: &RewardPoint) -> GradientPair {
    let s = sigmoid(r.r_minus - r.r_plus);
    GradientPair {
        d_plus: -s,
        d_minus: s,
    }
}

/// One of the seven preference objectives with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Dpo {
        beta: f64,
    },
    FlexDpo {
        beta_plus: f64,
        beta_minus: f64,
    },
    SftDpo {
        beta: f64,
        gamma: f64,
    },
    Ipo {
        eta: f64,
    },
    Slic {
        delta: f64,
        eta: f64,
    },
    SimPo {
        beta: f64,
        margin: f64,
        len_plus: u32,
        len_minus: u32,
    },
    Rm,
}

fn positive(name: &'static str, value: f64) -> Result<(), LossError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(LossError::Hyperparameter {
            name,
            value,
            reason: "must be a positive finite number",
        })
    }
}

fn nonnegative(name: &'static str, value: f64) -> Result<(), LossError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(LossError::Hyperparameter {
            name,
            value,
            reason: "must be a nonnegative finite number",
        })
    }
}

fn warn_outside_limit_regime(name: &str, beta: f64) {
    if beta >= 1.0 {
        log::warn!("{name} = {beta} >= 1: the vanishing chosen-gradient regime assumes a temperature below 1");
    }
}

impl Objective {
    pub const NAMES: [&'static str; 7] =
        ["dpo", "flex-dpo", "sft-dpo", "ipo", "slic", "simpo", "rm"];

    pub fn name(&self) -> &'static str {
        match self {
            Objective::Dpo { .. } => "dpo",
            Objective::FlexDpo { .. } => "flex-dpo",
            Objective::SftDpo { .. } => "sft-dpo",
            Objective::Ipo { .. } => "ipo",
            Objective::Slic { .. } => "slic",
            Objective::SimPo { .. } => "simpo",
            Objective::Rm => "rm",
        }
    }

    /// Checks hyperparameter ranges. A DPO-family temperature of 1 or more is
    /// allowed but logged as a warning.
    pub fn validate(&self) -> Result<(), LossError> {
        match *self {
            Objective::Dpo { beta } => {
                positive("beta", beta)?;
                warn_outside_limit_regime("beta", beta);
            }
            Objective::FlexDpo {
                beta_plus,
                beta_minus,
            } => {
                positive("beta_plus", beta_plus)?;
                positive("beta_minus", beta_minus)?;
                warn_outside_limit_regime("beta_minus", beta_minus);
            }
            Objective::SftDpo { beta, gamma } => {
                positive("beta", beta)?;
                nonnegative("gamma", gamma)?;
                warn_outside_limit_regime("beta", beta);
            }
            Objective::Ipo { eta } => positive("eta", eta)?,
            Objective::Slic { delta, eta } => {
                nonnegative("delta", delta)?;
                nonnegative("eta", eta)?;
            }
            Objective::SimPo {
                beta,
                margin,
                len_plus,
                len_minus,
            } => {
                positive("beta", beta)?;
                nonnegative("margin_gamma", margin)?;
                if len_plus == 0 {
                    return Err(LossError::Hyperparameter {
                        name: "len_plus",
                        value: 0.0,
                        reason: "must be at least 1",
                    });
                }
                if len_minus == 0 {
                    return Err(LossError::Hyperparameter {
                        name: "len_minus",
                        value: 0.0,
                        reason: "must be at least 1",
                    });
                }
            }
            Objective::Rm => {}
        }
        Ok(())
    }

    /// Loss and gradient at a likelihood point. Fails for [`Objective::Rm`].
    pub fn evaluate(&self, p: &LikelihoodPoint) -> Result<(f64, GradientPair), LossError> {
        Ok((self.loss(p)?, self.grad(p)?))
    }

    pub fn loss(&self, p: &LikelihoodPoint) -> Result<f64, LossError> {
        Ok(match *self {
            Objective::Dpo { beta } => dpo_loss(p, beta),
            Objective::FlexDpo {
                beta_plus,
                beta_minus,
            } => flex_dpo_loss(p, beta_plus, beta_minus),
            Objective::SftDpo { beta, gamma } => sft_dpo_loss(p, beta, gamma),
            Objective::Ipo { eta } => ipo_loss(p, eta),
            Objective::Slic { delta, eta } => slic_loss(p, delta, eta),
            Objective::SimPo {
                beta,
                margin,
                len_plus,
                len_minus,
            } => simpo_loss(p, beta, margin, len_plus, len_minus),
            Objective::Rm => return Err(LossError::RewardObjective("rm")),
        })
    }

    pub fn grad(&self, p: &LikelihoodPoint) -> Result<GradientPair, LossError> {
        Ok(match *self {
            Objective::Dpo { beta } => dpo_grad(p, beta),
            Objective::FlexDpo {
                beta_plus,
                beta_minus,
            } => flex_dpo_grad(p, beta_plus, beta_minus),
            Objective::SftDpo { beta, gamma } => sft_dpo_grad(p, beta, gamma),
            Objective::Ipo { eta } => ipo_grad(p, eta),
            Objective::Slic { delta, eta } => slic_grad(p, delta, eta),
            Objective::SimPo {
                beta,
                margin,
                len_plus,
                len_minus,
            } => simpo_grad(p, beta, margin, len_plus, len_minus),
            Objective::Rm => return Err(LossError::RewardObjective("rm")),
        })
    }

    /// Temperatures applied to the chosen and rejected log-ratios, where the
    /// objective has them. Used for implicit-reward accuracy.
    pub fn implicit_reward_scales(&self) -> (f64, f64) {
        match *self {
            Objective::Dpo { beta } | Objective::SftDpo { beta, .. } => (beta, beta),
            Objective::FlexDpo {
                beta_plus,
                beta_minus,
            } => (beta_plus, beta_minus),
            _ => (1.0, 1.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(pp: f64, pm: f64, p0p: f64, p0m: f64) -> LikelihoodPoint {
        LikelihoodPoint::new(pp, pm, p0p, p0m).unwrap()
    }

    // Displayed closed forms, written independently of the log-domain implementation.
    fn dpo_loss_alpha_z(p: &LikelihoodPoint, beta: f64) -> f64 {
        let alpha = (p.pi0_plus() / p.pi0_minus()).powf(beta);
        (1.0 + alpha * p.z().powf(beta)).ln()
    }

    fn dpo_loss_sigmoid_form(p: &LikelihoodPoint, beta: f64) -> f64 {
        let m =
            beta * (p.pi_plus() / p.pi0_plus()).ln() - beta * (p.pi_minus() / p.pi0_minus()).ln();
        -(1.0 / (1.0 + (-m).exp())).ln()
    }

    fn dpo_grad_alpha_z(p: &LikelihoodPoint, beta: f64) -> GradientPair {
        let alpha = (p.pi0_plus() / p.pi0_minus()).powf(beta);
        let z = p.z();
        let common = alpha * beta / (1.0 + alpha * z.powf(beta)) * z.powf(beta - 1.0);
        GradientPair::new(
            common * (-p.pi_minus() / (p.pi_plus() * p.pi_plus())),
            common / p.pi_plus(),
        )
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    fn random_points(n: usize, seed: u64) -> Vec<LikelihoodPoint> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut draw = || 10f64.powf(rng.random_range(-3.0..-0.05));
                pt(draw(), draw(), draw(), draw())
            })
            .collect()
    }

    #[test]
    fn bt_probability_examples() {
        assert_eq!(bt_preference_prob(0.0, 0.0), 0.5);
        let direct = 1.0 / (1.0 + (-(3f64.ln())).exp());
        assert!((bt_preference_prob(1.0 + 3f64.ln(), 1.0) - 0.75).abs() < 1e-15);
        assert!((bt_preference_prob(3f64.ln(), 0.0) - direct).abs() < 1e-15);
        assert!((bt_preference_prob(0.3, -1.2) - bt_preference_prob(5.3, 3.8)).abs() < 1e-15);
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(-1000.0), 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn likelihood_domain_is_enforced() {
        assert!(matches!(
            LikelihoodPoint::new(0.0, 0.5, 0.5, 0.5),
            Err(LossError::Domain {
                name: "pi_plus",
                ..
            })
        ));
        assert!(LikelihoodPoint::new(0.5, -0.1, 0.5, 0.5).is_err());
        assert!(LikelihoodPoint::new(0.5, 0.5, 1.5, 0.5).is_err());
        assert!(LikelihoodPoint::new(0.5, f64::NAN, 0.5, 0.5).is_err());
        let p = LikelihoodPoint::clamped(0.5, 0.0, 0.5, 0.5).unwrap();
        assert_eq!(p.pi_minus(), LIKELIHOOD_FLOOR);
        assert!(LikelihoodPoint::clamped(0.5, -1e-3, 0.5, 0.5).is_err());
        let tiny = LikelihoodPoint::new(0.5, 1e-320, 0.5, 0.5).unwrap();
        assert_eq!(tiny.pi_minus(), LIKELIHOOD_FLOOR);
    }

    #[test]
    fn dpo_loss_examples() {
        assert!((dpo_loss(&pt(0.3, 0.3, 0.2, 0.2), 0.1) - 2f64.ln()).abs() < 1e-15);
        let p = pt(0.25, 0.01, 0.12, 0.12);
        assert!((dpo_loss(&p, 0.5) - 1.2f64.ln()).abs() < 1e-14);
        assert!((dpo_loss(&p, 0.5) - 0.182_321_556_793_954_6).abs() < 1e-12);
        assert!((dpo_loss_sigmoid_form(&p, 0.5) - 1.2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn dpo_loss_matches_both_displayed_forms() {
        for p in random_points(100, 11) {
            for beta in [0.05, 0.1, 0.5, 0.9] {
                let ours = dpo_loss(&p, beta);
                assert!((ours - dpo_loss_alpha_z(&p, beta)).abs() < 1e-12, "{p:?}");
                assert!(
                    (ours - dpo_loss_sigmoid_form(&p, beta)).abs() < 1e-12,
                    "{p:?}"
                );
            }
        }
    }

    #[test]
    fn dpo_grad_hand_computed_point() {
        let g = dpo_grad(&pt(0.5, 0.5, 0.3, 0.3), 0.5);
        assert!((g.d_plus + 0.5).abs() < 1e-15);
        assert!((g.d_minus - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dpo_grad_matches_alpha_z_form() {
        for p in random_points(200, 12) {
            for beta in [0.1, 0.5] {
                let ours = dpo_grad(&p, beta);
                let displayed = dpo_grad_alpha_z(&p, beta);
                assert!(rel(ours.d_plus, displayed.d_plus) < 1e-11, "{p:?}");
                assert!(rel(ours.d_minus, displayed.d_minus) < 1e-11, "{p:?}");
            }
        }
    }

    #[test]
    fn dpo_grad_ratio_is_likelihood_ratio() {
        for p in random_points(500, 13) {
            let g = dpo_grad(&p, 0.1);
            let expected = -p.pi_plus() / p.pi_minus();
            assert!(rel(g.d_minus / g.d_plus, expected) < 1e-10);
        }
    }

    #[test]
    fn dpo_grad_vanishing_chosen_exploding_rejected() {
        let beta = 0.1;
        let near = dpo_grad(&pt(0.5, 1e-2, 0.12, 0.12), beta);
        let far = dpo_grad(&pt(0.5, 1e-10, 0.12, 0.12), beta);
        assert!(far.d_minus.abs() > 10.0 * near.d_minus.abs());
        assert!(far.d_plus.abs() < near.d_plus.abs());
        // Over eight decades of π− the chosen gradient shrinks by the closed-form
        // factor (1e-8)^β · (1 + α z_near^β) / (1 + α z_far^β).
        let (z_near, z_far): (f64, f64) = (1e-2 / 0.5, 1e-10 / 0.5);
        let predicted = 1e-8f64.powf(beta) * (1.0 + z_near.powf(beta)) / (1.0 + z_far.powf(beta));
        assert!(rel(far.d_plus / near.d_plus, predicted) < 1e-12);
    }

    #[test]
    fn flex_dpo_examples() {
        for p in random_points(100, 14) {
            assert_eq!(flex_dpo_loss(&p, 0.1, 0.1), dpo_loss(&p, 0.1));
            assert_eq!(flex_dpo_grad(&p, 0.1, 0.1), dpo_grad(&p, 0.1));
        }
        assert!((flex_dpo_loss(&pt(0.2, 0.07, 0.2, 0.07), 0.3, 0.05) - 2f64.ln()).abs() < 1e-15);

        let p = pt(0.3, 0.01, 0.12, 0.12);
        let composed = (1.0 + (0.12f64 / 0.3).powf(0.1) * (0.01f64 / 0.12).powf(0.05)).ln();
        let m = 0.1 * (0.3f64 / 0.12).ln() - 0.05 * (0.01f64 / 0.12).ln();
        let sigmoid_form = -(1.0 / (1.0 + (-m).exp())).ln();
        assert!((flex_dpo_loss(&p, 0.1, 0.05) - composed).abs() < 1e-14);
        assert!((flex_dpo_loss(&p, 0.1, 0.05) - sigmoid_form).abs() < 1e-14);
    }

    #[test]
    fn flex_dpo_smaller_beta_minus_damps_rejected_gradient() {
        let p = pt(0.3, 1e-6, 0.12, 0.12);
        let full = flex_dpo_grad(&p, 0.1, 0.1);
        let halved = flex_dpo_grad(&p, 0.1, 0.05);
        assert!(halved.d_minus.abs() < full.d_minus.abs());
    }

    #[test]
    fn flex_dpo_limit_forms() {
        let (bp, bm) = (0.1, 0.05);
        let p = pt(0.4, 1e-250, 0.12, 0.2);
        let alpha = 0.12f64.powf(bp) / 0.2f64.powf(bm);
        let g = flex_dpo_grad(&p, bp, bm);
        let lim_plus = -alpha * bp * 0.4f64.powf(-bp - 1.0) * 1e-250f64.powf(bm);
        let lim_minus = alpha * bm * 0.4f64.powf(-bp) * 1e-250f64.powf(bm - 1.0);
        // (π−)^β− is about 3e-13 here, so the limit form holds to that order.
        assert!(rel(g.d_plus, lim_plus) < 1e-9);
        assert!(rel(g.d_minus, lim_minus) < 1e-9);
    }

    #[test]
    fn sft_dpo_examples() {
        let p = pt(0.25, 0.01, 0.12, 0.12);
        assert_eq!(sft_dpo_loss(&p, 0.5, 0.0), dpo_loss(&p, 0.5));
        assert_eq!(sft_dpo_grad(&p, 0.5, 0.0), dpo_grad(&p, 0.5));
        let one = pt(1.0, 0.01, 0.12, 0.12);
        assert_eq!(sft_dpo_loss(&one, 0.5, 1.0), dpo_loss(&one, 0.5));
        let expected = 1.2f64.ln() + 0.5 * 4f64.ln();
        assert!((sft_dpo_loss(&p, 0.5, 0.5) - expected).abs() < 1e-14);
    }

    #[test]
    fn sft_dpo_chosen_gradient_survives_rejected_collapse() {
        // β = 0.9 so that the DPO part (∝ (π−)^β) is far below the 1e-6 tolerance at π− = 1e-12.
        let g = sft_dpo_grad(&pt(0.5, 1e-12, 0.12, 0.12), 0.9, 0.5);
        assert!((g.d_plus + 1.0).abs() < 1e-6);
    }

    #[test]
    fn ipo_examples() {
        let eta = 0.1;
        let p = pt(0.12, 0.12, 0.2, 0.2);
        assert!((ipo_loss(&p, eta) - 25.0).abs() < 1e-12);

        // log(π+/π−) = 1/(2η) = 5 with equal references.
        let stationary = pt(0.5, 0.5 * (-5.0f64).exp(), 0.2, 0.2);
        assert!(ipo_loss(&stationary, eta) < 1e-24);
        let g = ipo_grad(&stationary, eta);
        assert!(g.d_plus.abs() < 1e-11 && g.d_minus.abs() < 1e-9);
    }

    #[test]
    fn slic_branches() {
        let inactive = pt(0.5, 0.1, 0.2, 0.2);
        assert!(!slic_hinge_active(&inactive, 0.0));
        assert_eq!(slic_grad(&inactive, 0.0, 0.1).d_minus, 0.0);

        let active = pt(0.12, 0.12, 0.2, 0.2);
        let g = slic_grad(&active, 5.0, 0.1);
        assert!((g.d_plus + 1.1 / 0.12).abs() < 1e-12);
        assert!((g.d_minus - 1.0 / 0.12).abs() < 1e-12);

        assert_eq!(slic_grad(&inactive, 0.0, 0.0), GradientPair::new(-0.0, 0.0));

        // Exactly on the hinge: log(π+/π−) = δ is classified inactive.
        let p = pt(0.5, 0.25, 0.2, 0.2);
        let delta = 0.5f64.ln() - 0.25f64.ln();
        assert!(!slic_hinge_active(&p, delta));
    }

    #[test]
    fn simpo_examples() {
        let p = pt(0.3, 0.3, 0.2, 0.2);
        assert!((simpo_loss(&p, 2.0, 0.0, 1, 1) - 2f64.ln()).abs() < 1e-15);
        for p in random_points(100, 15) {
            let g = simpo_grad(&p, 2.0, 0.5, 3, 5);
            let expected = -(3.0 * p.pi_plus()) / (5.0 * p.pi_minus());
            assert!(rel(g.d_minus / g.d_plus, expected) < 1e-10);
        }
    }

    #[test]
    fn simpo_limit_classes() {
        assert_eq!(simpo_limit_class(0.5, 0.0, 1, 1, 0.5), LimitClass::Infinity);
        assert_eq!(simpo_limit_class(2.0, 0.0, 1, 1, 0.5), LimitClass::Zero);
        match simpo_limit_class(1.0, 0.0, 1, 1, 0.5) {
            LimitClass::Constant(v) => assert!((v - 2.0).abs() < 1e-14),
            other => panic!("expected constant, got {other:?}"),
        }
    }

    #[test]
    fn rm_examples() {
        let g = rm_grad(&RewardPoint::new(0.7, 0.7));
        assert_eq!(g, GradientPair::new(-0.5, 0.5));

        let r = RewardPoint::new(100.0, 0.0);
        let tiny = (-100.0f64).exp();
        // ln(1 + x) = x - x²/2 + ..., x²/2 is far below f64 resolution here.
        assert!(rel(rm_loss(&r), tiny) < 1e-15);
        let g = rm_grad(&r);
        assert!(rel(g.d_minus, tiny / (1.0 + tiny)) < 1e-15);
        assert_eq!(g.d_plus, -g.d_minus);

        let huge = RewardPoint::new(-800.0, 800.0);
        assert_eq!(rm_loss(&huge), 1600.0);
        assert_eq!(rm_grad(&huge), GradientPair::new(-1.0, 1.0));
    }

    #[test]
    fn objective_validation() {
        assert!(Objective::Dpo { beta: 0.1 }.validate().is_ok());
        assert!(Objective::Dpo { beta: 1.5 }.validate().is_ok());
        assert!(Objective::Dpo { beta: 0.0 }.validate().is_err());
        assert!(Objective::Ipo { eta: -1.0 }.validate().is_err());
        assert!(Objective::SimPo {
            beta: 1.0,
            margin: 0.0,
            len_plus: 0,
            len_minus: 1
        }
        .validate()
        .is_err());
        assert!(Objective::Slic {
            delta: 0.0,
            eta: 0.0
        }
        .validate()
        .is_ok());
        let p = pt(0.5, 0.5, 0.5, 0.5);
        assert_eq!(
            Objective::Rm.evaluate(&p),
            Err(LossError::RewardObjective("rm"))
        );
    }

    proptest! {
        #[test]
        fn sign_contract(
            lp in -9.0f64..-0.01, lm in -9.0f64..-0.01,
            l0p in -9.0f64..-0.01, l0m in -9.0f64..-0.01,
            beta in 0.01f64..0.99,
        ) {
            let p = pt(lp.exp(), lm.exp(), l0p.exp(), l0m.exp());
            let objectives = [
                Objective::Dpo { beta },
                Objective::FlexDpo { beta_plus: beta, beta_minus: beta * 0.5 },
                Objective::SftDpo { beta, gamma: 0.1 },
                Objective::SimPo { beta: beta * 4.0, margin: 0.5, len_plus: 2, len_minus: 3 },
            ];
            for obj in objectives {
                let g = obj.grad(&p).unwrap();
                prop_assert!(g.d_plus < 0.0 && g.d_minus > 0.0, "{:?} at {:?}: {:?}", obj, p, g);
            }
        }

        #[test]
        fn rm_gradients_are_exactly_balanced(rp in -700.0f64..700.0, rm in -700.0f64..700.0) {
            let g = rm_grad(&RewardPoint::new(rp, rm));
            prop_assert_eq!(g.d_plus + g.d_minus, 0.0);
            prop_assert!(rm_loss(&RewardPoint::new(rp, rm)).is_finite());
        }
    }
}
