//! Three-layer tanh MLP with hand-written backprop, the categorical policy
//! built on it, and the optimizers that update it.
//!
//! Parameters live in one flat vector laid out as
//! `w1 (H×I) | b1 (H) | w2 (H×H) | b2 (H) | w3 (O×H) | b3 (O)`, row-major.
//! Gradients share that layout, which keeps Adam and snapshotting trivial.

use rand::Rng;
use thiserror::Error;

pub const DEFAULT_HIDDEN: usize = 64;
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("prompt index {index} out of range for {n} prompts")]
    PromptOutOfRange { index: usize, n: usize },
    #[error("shape mismatch: expected {expected} entries, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("gradient contains non-finite entries")]
    NonFiniteGradient,
    #[error("parameters became non-finite after an update")]
    NonFiniteParameters,
    #[error("target fit did not converge in {steps} steps (L-inf residual {residual:.6})")]
    FitFailed { residual: f64, steps: usize },
    #[error("invalid target matrix: {0}")]
    InvalidTargets(String),
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
}

/// Layer sizes of a three-layer MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
}

impl MlpShape {
    pub fn new(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_hidden,
            n_out,
        }
    }

    fn b1(&self) -> usize {
        self.n_hidden * self.n_in
    }
    fn w2(&self) -> usize {
        self.b1() + self.n_hidden
    }
    fn b2(&self) -> usize {
        self.w2() + self.n_hidden * self.n_hidden
    }
    fn w3(&self) -> usize {
        self.b2() + self.n_hidden
    }
    fn b3(&self) -> usize {
        self.w3() + self.n_out * self.n_hidden
    }

    pub fn n_params(&self) -> usize {
        self.b3() + self.n_out
    }
}

/// Gradient with the same flat layout as the parameters it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub data: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn add_scaled(&mut self, other: &ParamGrad, scale: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.data.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Hidden activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    h1: Vec<f64>,
    h2: Vec<f64>,
    pub out: Vec<f64>,
}

/// `I → H → H → O` network with tanh hidden units and a linear output.
/// Inputs are multi-hot: a list of active feature indices, each with value 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    shape: MlpShape,
    params: Vec<f64>,
}

impl Mlp {
    /// Every parameter, biases included, drawn from `uniform(-scale, scale)`.
    pub fn init_uniform<R: Rng>(shape: MlpShape, scale: f64, rng: &mut R) -> Self {
        let params = (0..shape.n_params())
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        Self { shape, params }
    }

    pub fn from_params(shape: MlpShape, params: Vec<f64>) -> Result<Self, PolicyError> {
        if params.len() != shape.n_params() {
            return Err(PolicyError::ShapeMismatch {
                expected: shape.n_params(),
                got: params.len(),
            });
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Zeroes `w3` and `b3`, making every output equal.
    pub fn zero_output_layer(&mut self) {
        let start = self.shape.w3();
        self.params[start..].iter_mut().for_each(|p| *p = 0.0);
    }

    pub fn forward(&self, active: &[usize]) -> Activations {
        let s = self.shape;
        let p = &self.params;
        let (h, n_in) = (s.n_hidden, s.n_in);

        let mut h1: Vec<f64> = p[s.b1()..s.b1() + h].to_vec();
        for (i, a) in h1.iter_mut().enumerate() {
            for &k in active {
                *a += p[i * n_in + k];
            }
            *a = a.tanh();
        }

        let w2 = &p[s.w2()..s.b2()];
        let h2: Vec<f64> = (0..h)
            .map(|i| {
                let row = &w2[i * h..(i + 1) * h];
                (p[s.b2() + i] + row.iter().zip(&h1).map(|(w, x)| w * x).sum::<f64>()).tanh()
            })
            .collect();

        let w3 = &p[s.w3()..s.b3()];
        let out = (0..s.n_out)
            .map(|o| {
                let row = &w3[o * h..(o + 1) * h];
                p[s.b3() + o] + row.iter().zip(&h2).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();

        Activations { h1, h2, out }
    }

    /// Accumulates `scale · ∂(dout · out)/∂θ` into `grad`.
    pub fn backward_into(
        &self,
        active: &[usize],
        acts: &Activations,
        dout: &[f64],
        scale: f64,
        grad: &mut ParamGrad,
    ) {
        let s = self.shape;
        let p = &self.params;
        let g = &mut grad.data;
        let (h, n_in) = (s.n_hidden, s.n_in);

        let mut dh2 = vec![0.0; h];
        for (o, &d) in dout.iter().enumerate() {
            let d = d * scale;
            if d == 0.0 {
                continue;
            }
            g[s.b3() + o] += d;
            let row = s.w3() + o * h;
            for j in 0..h {
                g[row + j] += d * acts.h2[j];
                dh2[j] += p[row + j] * d;
            }
        }

        let da2: Vec<f64> = dh2
            .iter()
            .zip(&acts.h2)
            .map(|(d, y)| d * (1.0 - y * y))
            .collect();
        let mut dh1 = vec![0.0; h];
        for i in 0..h {
            g[s.b2() + i] += da2[i];
            let row = s.w2() + i * h;
            for j in 0..h {
                g[row + j] += da2[i] * acts.h1[j];
                dh1[j] += p[row + j] * da2[i];
            }
        }

        for i in 0..h {
            let da1 = dh1[i] * (1.0 - acts.h1[i] * acts.h1[i]);
            g[s.b1() + i] += da1;
            for &k in active {
                g[i * n_in + k] += da1;
            }
        }
    }

    pub fn to_text(&self) -> String {
        let s = self.shape;
        let mut text = format!("prefdyn-mlp 1 {} {} {}\n", s.n_in, s.n_hidden, s.n_out);
        for p in &self.params {
            // `{:?}` on f64 is the shortest string that round-trips exactly.
            text.push_str(&format!("{p:?}\n"));
        }
        text
    }

    pub fn from_text(text: &str) -> Result<Self, PolicyError> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        if header.len() != 5 || header[0] != "prefdyn-mlp" || header[1] != "1" {
            return Err(PolicyError::Snapshot("bad header".into()));
        }
        let dim = |i: usize| {
            header[i]
                .parse::<usize>()
                .map_err(|e| PolicyError::Snapshot(e.to_string()))
        };
        let shape = MlpShape::new(dim(2)?, dim(3)?, dim(4)?);
        let params = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| PolicyError::Snapshot(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_params(shape, params)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Pulls a gradient on probabilities back to the logits through the softmax
/// Jacobian `∂s_k/∂z_i = s_k(δ_ik − s_i)`.
pub fn softmax_backward(probs: &[f64], dprobs: &[f64]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(dprobs).map(|(s, g)| s * g).sum();
    probs
        .iter()
        .zip(dprobs)
        .map(|(s, g)| s * (g - inner))
        .collect()
}

/// Categorical policy over `n_out` responses for `n_in` one-hot prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    net: Mlp,
}

impl MlpPolicy {
    pub fn new<R: Rng>(n_prompts: usize, n_responses: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::init_uniform(
                MlpShape::new(n_prompts, hidden, n_responses),
                INIT_SCALE,
                rng,
            ),
        }
    }

    pub fn from_net(net: Mlp) -> Self {
        Self { net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn n_prompts(&self) -> usize {
        self.net.shape.n_in
    }

    pub fn n_responses(&self) -> usize {
        self.net.shape.n_out
    }

    pub fn n_params(&self) -> usize {
        self.net.shape.n_params()
    }

    fn check_prompt(&self, prompt: usize) -> Result<(), PolicyError> {
        if prompt >= self.n_prompts() {
            return Err(PolicyError::PromptOutOfRange {
                index: prompt,
                n: self.n_prompts(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, prompt: usize) -> Result<Vec<f64>, PolicyError> {
        self.check_prompt(prompt)?;
        Ok(softmax(&self.net.forward(&[prompt]).out))
    }

    /// Output rows for every prompt.
    pub fn table(&self) -> Vec<Vec<f64>> {
        (0..self.n_prompts())
            .map(|x| softmax(&self.net.forward(&[x]).out))
            .collect()
    }

    pub fn backward(&self, prompt: usize, dloss_dprobs: &[f64]) -> Result<ParamGrad, PolicyError> {
        let mut grad = ParamGrad::zeros(self.n_params());
        self.backward_into(prompt, dloss_dprobs, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Accumulating form of [`MlpPolicy::backward`] used for minibatches.
    pub fn backward_into(
        &self,
        prompt: usize,
        dloss_dprobs: &[f64],
        scale: f64,
        grad: &mut ParamGrad,
    ) -> Result<(), PolicyError> {
        self.check_prompt(prompt)?;
        if dloss_dprobs.len() != self.n_responses() {
            return Err(PolicyError::ShapeMismatch {
                expected: self.n_responses(),
                got: dloss_dprobs.len(),
            });
        }
        if grad.len() != self.n_params() {
            return Err(PolicyError::ShapeMismatch {
                expected: self.n_params(),
                got: grad.len(),
            });
        }
        let acts = self.net.forward(&[prompt]);
        let probs = softmax(&acts.out);
        let dlogits = softmax_backward(&probs, dloss_dprobs);
        self.net
            .backward_into(&[prompt], &acts, &dlogits, scale, grad);
        Ok(())
    }

    pub fn apply_update(
        &mut self,
        grad: &ParamGrad,
        opt: &mut Optimizer,
    ) -> Result<(), PolicyError> {
        opt.step(self.net.params_mut(), grad)
    }
}

/// Frozen output table of a policy, queried only at (prompt, response) cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePolicy {
    table: Vec<Vec<f64>>,
}

impl ReferencePolicy {
    pub fn snapshot(policy: &MlpPolicy) -> Self {
        Self {
            table: policy.table(),
        }
    }

    pub fn prob(&self, prompt: usize, response: usize) -> f64 {
        self.table[prompt][response]
    }

    pub fn row(&self, prompt: usize) -> &[f64] {
        &self.table[prompt]
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Some(OptimizerKind::Adam),
            "sgd" => Some(OptimizerKind::Sgd),
            _ => None,
        }
    }
}

/// Plain gradient descent or Adam (β1 = 0.9, β2 = 0.999, ε = 1e-8, bias-corrected).
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam {
            n_params
        } else {
            0
        };
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
        }
    }

    pub fn adam(lr: f64, n_params: usize) -> Self {
        Self::new(OptimizerKind::Adam, lr, n_params)
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr, 0)
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &ParamGrad) -> Result<(), PolicyError> {
        if params.len() != grad.len() {
            return Err(PolicyError::ShapeMismatch {
                expected: params.len(),
                got: grad.len(),
            });
        }
        if !grad.is_finite() {
            return Err(PolicyError::NonFiniteGradient);
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(&grad.data) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(PolicyError::ShapeMismatch {
                        expected: self.m.len(),
                        got: params.len(),
                    });
                }
                let bc1 = 1.0 - self.beta1.powi(self.t as i32);
                let bc2 = 1.0 - self.beta2.powi(self.t as i32);
                for (((p, &g), m), v) in params
                    .iter_mut()
                    .zip(&grad.data)
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                }
            }
        }
        if params.iter().all(|p| p.is_finite()) {
            Ok(())
        } else {
            Err(PolicyError::NonFiniteParameters)
        }
    }
}

/// Settings for fitting a policy to target output rows by cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub lr: f64,
    pub max_steps: usize,
    /// Largest allowed |π(a|x) − target| over all cells.
    pub tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            max_steps: 50_000,
            tol: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub steps: usize,
    pub residual: f64,
}

/// Largest absolute deviation between policy output and targets.
pub fn linf_residual(policy: &MlpPolicy, targets: &[Vec<f64>]) -> f64 {
    policy
        .table()
        .iter()
        .zip(targets)
        .flat_map(|(row, t)| row.iter().zip(t).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

fn validate_targets(policy: &MlpPolicy, targets: &[Vec<f64>]) -> Result<(), PolicyError> {
    if targets.len() != policy.n_prompts() {
        return Err(PolicyError::InvalidTargets(format!(
            "{} rows for {} prompts",
            targets.len(),
            policy.n_prompts()
        )));
    }
    for (i, row) in targets.iter().enumerate() {
        if row.len() != policy.n_responses() {
            return Err(PolicyError::InvalidTargets(format!(
                "row {i} has {} entries",
                row.len()
            )));
        }
        let sum: f64 = row.iter().sum();
        if row.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(PolicyError::InvalidTargets(format!(
                "row {i} is not a distribution (sum {sum})"
            )));
        }
    }
    Ok(())
}

/// Full-batch Adam on the mean cross-entropy `−Σ t log π` until the L∞
/// residual is within `cfg.tol`.
pub fn fit_to_targets(
    policy: &mut MlpPolicy,
    targets: &[Vec<f64>],
    cfg: &FitConfig,
) -> Result<FitReport, PolicyError> {
    validate_targets(policy, targets)?;
    let mut opt = Optimizer::adam(cfg.lr, policy.n_params());
    let n = policy.n_prompts() as f64;
    let mut residual = f64::INFINITY;
    for step in 0..=cfg.max_steps {
        let mut grad = ParamGrad::zeros(policy.n_params());
        residual = 0.0;
        for (x, target) in targets.iter().enumerate() {
            let acts = policy.net.forward(&[x]);
            let probs = softmax(&acts.out);
            let dlogits: Vec<f64> = probs.iter().zip(target).map(|(s, t)| s - t).collect();
            residual = dlogits.iter().fold(residual, |m, d| m.max(d.abs()));
            policy
                .net
                .backward_into(&[x], &acts, &dlogits, 1.0 / n, &mut grad);
        }
        if residual <= cfg.tol {
            log::debug!("target fit converged after {step} steps, residual {residual:.2e}");
            return Ok(FitReport {
                steps: step,
                residual,
            });
        }
        if step < cfg.max_steps {
            policy.apply_update(&grad, &mut opt)?;
        }
    }
    Err(PolicyError::FitFailed {
        residual,
        steps: cfg.max_steps,
    })
}
