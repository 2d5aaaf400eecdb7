//! Alternating actor-critic minimax loop.
//!
//! Each iteration fits a neural TD critic for the current policy and reward,
//! draws a visitation batch, forms the Fisher / policy-gradient /
//! reward-gradient estimators, solves the ball-constrained natural-gradient
//! least-squares problem for `delta_k`, and then updates
//! `tau_{k+1} = tau_k + eta`, `theta_{k+1} = (tau_k theta_k - eta delta_k) / tau_{k+1}`
//! and `beta_{k+1} = Proj(beta_k + eta grad_beta)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GailError, Result};
use crate::linalg;
use crate::mdp::{FiniteEmbeddedMdp, TabularPolicy};
use crate::net::{project_ball, BallConstraint, InitScheme, TwoLayerNet};
use crate::oracle;
use crate::par;
use crate::policy::{CriticNet, EnergyPolicy, RewardNet};
use crate::td::{self, TdConfig};

/// Largest `m * d` for which a dense Fisher matrix may be formed.
pub const DENSE_FISHER_LIMIT: usize = 2000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizerKind {
    #[default]
    None,
    /// `psi(beta) = ||beta - W_0||^2 / 2`.
    L2ToAnchor,
}

/// Center of the ball that constrains the natural-gradient direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaBallCenter {
    /// `||delta - W_0|| <= B_theta`.
    Anchor,
    /// `||delta|| <= B_theta`.
    Origin,
    /// `||delta + W_0|| <= B_theta`, i.e. `-delta` lies in the parameter ball,
    /// which keeps `theta_{k+1}` a convex combination of points in `S_{B_theta}`.
    #[default]
    Mirrored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NpgSolverConfig {
    pub inner_iters: usize,
    pub power_iters: usize,
    pub ridge: f64,
    pub cr_iters: usize,
}

impl Default for NpgSolverConfig {
    fn default() -> Self {
        Self {
            inner_iters: 200,
            power_iters: 20,
            ridge: 1e-8,
            cr_iters: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GailConfig {
    /// Outer iterations `T`.
    pub t: usize,
    /// Stepsize; `None` selects `1 / sqrt(T)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Batch size `N`.
    pub n: usize,
    #[serde(default)]
    pub lambda: f64,
    /// Radius for `theta` and `delta`; `None` uses `td.b_omega`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_theta: Option<f64>,
    pub b_beta: f64,
    /// Network width `m`.
    pub m: usize,
    #[serde(default)]
    pub init: InitScheme,
    #[serde(default)]
    pub td: TdConfig,
    #[serde(default)]
    pub regularizer: RegularizerKind,
    #[serde(default)]
    pub delta_ball_center: DeltaBallCenter,
    #[serde(default)]
    pub npg: NpgSolverConfig,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GailConfig {
    fn default() -> Self {
        Self {
            t: 64,
            eta: None,
            n: 128,
            lambda: 0.0,
            b_theta: None,
            b_beta: 1.0,
            m: 128,
            init: InitScheme::Symmetric,
            td: TdConfig::default(),
            regularizer: RegularizerKind::None,
            delta_ball_center: DeltaBallCenter::Mirrored,
            npg: NpgSolverConfig::default(),
            seed: 0,
        }
    }
}

impl GailConfig {
    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or_else(|| 1.0 / (self.t as f64).sqrt())
    }

    pub fn b_theta(&self) -> f64 {
        self.b_theta.unwrap_or(self.td.b_omega)
    }

    /// Copy with every defaulted field made explicit.
    pub fn resolved(&self, gamma: f64) -> Self {
        let mut out = self.clone();
        out.eta = Some(self.eta());
        out.b_theta = Some(self.b_theta());
        out.td.alpha = Some(self.td.alpha_for(gamma, self.m));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GailError::Config(msg));
        if self.t == 0 {
            return bad("T must be >= 1".into());
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0) || !eta.is_finite() {
                return bad(format!("eta must be > 0, got {eta}"));
            }
        }
        if self.n == 0 {
            return bad("batch size N must be >= 1".into());
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        for (name, r) in [("b_theta", self.b_theta()), ("b_beta", self.b_beta)] {
            if !(r >= 0.0) || !r.is_finite() {
                return bad(format!("{name} must be >= 0, got {r}"));
            }
        }
        if self.m == 0 {
            return bad("network width m must be >= 1".into());
        }
        if self.init == InitScheme::Symmetric && self.m % 2 != 0 {
            return bad(format!("symmetric init needs an even width, got {}", self.m));
        }
        if self.npg.power_iters == 0 {
            return bad("npg.power_iters must be >= 1".into());
        }
        if !(self.npg.ridge >= 0.0) {
            return bad("npg.ridge must be >= 0".into());
        }
        self.td.validate()
    }
}

/// Implicit Fisher estimate `tau^2 sum_p w_p iota_p iota_p^T`.
///
/// A batch is stored as its distinct score vectors with empirical weights
/// (count / N); population versions use exact visitation weights.
#[derive(Clone, Debug)]
pub struct FisherEstimate {
    tau_sq: f64,
    scores: Vec<Vec<f64>>,
    weights: Vec<f64>,
    dim: usize,
}

impl FisherEstimate {
    pub fn new(tau: f64, scores: Vec<Vec<f64>>, weights: Vec<f64>, dim: usize) -> Self {
        Self {
            tau_sq: tau * tau,
            scores,
            weights,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of distinct score vectors held.
    pub fn rank_bound(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    /// `I v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if self.tau_sq == 0.0 {
            return out;
        }
        let coefs = par::map_range(self.scores.len(), |i| {
            self.tau_sq * self.weights[i] * linalg::dot(&self.scores[i], v)
        });
        for (c, s) in coefs.iter().zip(&self.scores) {
            if *c != 0.0 {
                linalg::axpy(*c, s, &mut out);
            }
        }
        out
    }

    /// `v^T I v`.
    pub fn quadratic(&self, v: &[f64]) -> f64 {
        self.tau_sq
            * self
                .scores
                .iter()
                .zip(&self.weights)
                .map(|(s, w)| {
                    let p = linalg::dot(s, v);
                    w * p * p
                })
                .sum::<f64>()
    }

    /// Dense matrix; only for `m * d <= DENSE_FISHER_LIMIT`.
    pub fn dense(&self) -> Result<DMatrix<f64>> {
        if self.dim > DENSE_FISHER_LIMIT {
            return Err(GailError::Config(format!(
                "refusing to densify a {0}x{0} Fisher matrix",
                self.dim
            )));
        }
        let mut m = DMatrix::<f64>::zeros(self.dim, self.dim);
        for (s, w) in self.scores.iter().zip(&self.weights) {
            let v = nalgebra::DVector::from_column_slice(s);
            m += &v * v.transpose() * (self.tau_sq * w);
        }
        Ok(m)
    }
}

/// Empirical pair weights (count / N) of a batch.
pub fn batch_weights(mdp: &FiniteEmbeddedMdp, batch: &[(usize, usize)]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(GailError::EmptyBatch);
    }
    let mut w = vec![0.0; mdp.n_pairs()];
    for &(s, a) in batch {
        mdp.check_pair(s, a)?;
        w[mdp.pair_index(s, a)] += 1.0;
    }
    let n = batch.len() as f64;
    w.iter_mut().for_each(|x| *x /= n);
    Ok(w)
}

/// Fisher information under pair weights `measure` (a batch's empirical
/// weights or an exact visitation measure).
pub fn fisher_under(pol: &EnergyPolicy, mdp: &FiniteEmbeddedMdp, measure: &[f64]) -> Result<FisherEstimate> {
    let scores = pol.score_table(mdp)?;
    Ok(FisherEstimate::new(pol.tau(), scores, measure.to_vec(), pol.net.n_params()))
}

pub fn estimate_fisher(pol: &EnergyPolicy, mdp: &FiniteEmbeddedMdp, batch: &[(usize, usize)]) -> Result<FisherEstimate> {
    let w = batch_weights(mdp, batch)?;
    fisher_under(pol, mdp, &w)
}

/// `-tau sum_p measure_p q_p iota_p`.
pub fn policy_grad_under(
    pol: &EnergyPolicy,
    mdp: &FiniteEmbeddedMdp,
    q_table: &[f64],
    measure: &[f64],
    scores: Option<&[Vec<f64>]>,
) -> Result<Vec<f64>> {
    let owned;
    let scores = match scores {
        Some(s) => s,
        None => {
            owned = pol.score_table(mdp)?;
            &owned
        }
    };
    let mut g = vec![0.0; pol.net.n_params()];
    for ((s, q), w) in scores.iter().zip(q_table).zip(measure) {
        if *w != 0.0 {
            linalg::axpy(-pol.tau() * w * q, s, &mut g);
        }
    }
    Ok(g)
}

/// Exact `grad_theta L = -grad_theta J(pi_theta; r)`.
///
/// With the `(1 - gamma)`-normalized `Q`, the policy gradient theorem gives
/// `-tau (1 - gamma)^{-1} E_nu[Q iota]`, i.e. the estimator's mean divided by
/// `1 - gamma`.
pub fn population_policy_grad(pol: &EnergyPolicy, mdp: &FiniteEmbeddedMdp, reward: &[f64]) -> Result<Vec<f64>> {
    let pi = pol.policy_as_table(mdp)?;
    let q = oracle::exact_q(mdp, &pi, reward)?;
    let nu = oracle::exact_visitation(mdp, &pi)?.nu;
    let mut g = policy_grad_under(pol, mdp, &q, &nu, None)?;
    linalg::scale(1.0 / (1.0 - mdp.gamma()), &mut g);
    Ok(g)
}

/// Exact `grad_beta L` at `(pi, beta)`.
pub fn population_reward_grad(
    rew: &RewardNet,
    mdp: &FiniteEmbeddedMdp,
    expert: &TabularPolicy,
    pi: &TabularPolicy,
    lambda: f64,
    kind: RegularizerKind,
) -> Result<Vec<f64>> {
    let nu_e = oracle::exact_visitation(mdp, expert)?.nu;
    let nu = oracle::exact_visitation(mdp, pi)?.nu;
    Ok(reward_grad_under(rew, mdp, &nu_e, &nu, lambda, kind))
}

/// `-(tau / N) sum_i Q_hat(s_i, a_i) iota(s_i, a_i)`.
pub fn estimate_policy_grad(
    pol: &EnergyPolicy,
    critic: &CriticNet,
    mdp: &FiniteEmbeddedMdp,
    batch: &[(usize, usize)],
) -> Result<Vec<f64>> {
    let w = batch_weights(mdp, batch)?;
    policy_grad_under(pol, mdp, &critic.q_table(mdp), &w, None)
}

fn regularizer_grad(rew: &RewardNet, lambda: f64, kind: RegularizerKind) -> Option<Vec<f64>> {
    match kind {
        RegularizerKind::None => None,
        RegularizerKind::L2ToAnchor if lambda == 0.0 => None,
        RegularizerKind::L2ToAnchor => Some(linalg::sub(rew.beta(), rew.net.anchor())),
    }
}

/// `(1 - gamma)^{-1} sum_p (expert_p - policy_p) phi_beta(p) - lambda grad psi(beta)`.
pub fn reward_grad_under(
    rew: &RewardNet,
    mdp: &FiniteEmbeddedMdp,
    expert_measure: &[f64],
    policy_measure: &[f64],
    lambda: f64,
    kind: RegularizerKind,
) -> Vec<f64> {
    let scale = 1.0 / (1.0 - mdp.gamma());
    let mut g = vec![0.0; rew.net.n_params()];
    let mut phi = vec![0.0; rew.net.n_params()];
    for (p, x) in mdp.embedded_points().iter().enumerate() {
        let diff = expert_measure[p] - policy_measure[p];
        if diff == 0.0 {
            continue;
        }
        rew.net.features_at_into(rew.beta(), x, &mut phi);
        linalg::axpy(scale * diff, &phi, &mut g);
    }
    if let Some(rg) = regularizer_grad(rew, lambda, kind) {
        linalg::axpy(-lambda, &rg, &mut g);
    }
    g
}

pub fn estimate_reward_grad(
    rew: &RewardNet,
    mdp: &FiniteEmbeddedMdp,
    expert_batch: &[(usize, usize)],
    policy_batch: &[(usize, usize)],
    lambda: f64,
    kind: RegularizerKind,
) -> Result<Vec<f64>> {
    if expert_batch.len() != policy_batch.len() {
        return Err(GailError::BatchMismatch {
            expert: expert_batch.len(),
            policy: policy_batch.len(),
        });
    }
    let we = batch_weights(mdp, expert_batch)?;
    let wp = batch_weights(mdp, policy_batch)?;
    Ok(reward_grad_under(rew, mdp, &we, &wp, lambda, kind))
}

/// Output of the constrained natural-gradient solve.
#[derive(Clone, Debug)]
pub struct NpgSolution {
    pub delta: Vec<f64>,
    /// `||I delta - g||` at the returned point.
    pub residual: f64,
    /// `||I delta_init - g||` at the projected least-squares warm start.
    pub initial_residual: f64,
}

/// Conjugate residual for `(A + ridge I) x = b`, starting at 0.
fn conjugate_residual<F: Fn(&[f64]) -> Vec<f64>>(apply: F, b: &[f64], ridge: f64, iters: usize) -> Vec<f64> {
    let n = b.len();
    let op = |v: &[f64]| {
        let mut out = apply(v);
        linalg::axpy(ridge, v, &mut out);
        out
    };
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let b_norm = linalg::norm(b);
    if b_norm == 0.0 {
        return x;
    }
    let mut p = r.clone();
    let mut ar = op(&r);
    let mut ap = ar.clone();
    let mut r_ar = linalg::dot(&r, &ar);
    for _ in 0..iters {
        let ap_ap = linalg::dot(&ap, &ap);
        if ap_ap <= 0.0 || r_ar == 0.0 {
            break;
        }
        let alpha = r_ar / ap_ap;
        linalg::axpy(alpha, &p, &mut x);
        linalg::axpy(-alpha, &ap, &mut r);
        if linalg::norm(&r) <= 1e-12 * b_norm {
            break;
        }
        ar = op(&r);
        let r_ar_new = linalg::dot(&r, &ar);
        let beta = r_ar_new / r_ar;
        r_ar = r_ar_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
            ap[i] = ar[i] + beta * ap[i];
        }
    }
    x
}

/// Largest eigenvalue of the PSD operator by power iteration from a fixed
/// start vector.
fn power_iteration<F: Fn(&[f64]) -> Vec<f64>>(apply: F, dim: usize, iters: usize) -> f64 {
    let mut v: Vec<f64> = (0..dim)
        .map(|i| 1.0 + ((i as u64).wrapping_mul(2_654_435_761) % 1000) as f64 / 1000.0)
        .collect();
    let n = linalg::norm(&v);
    linalg::scale(1.0 / n, &mut v);
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = apply(&v);
        let wn = linalg::norm(&w);
        if wn == 0.0 {
            return 0.0;
        }
        lambda = wn;
        v = w;
        linalg::scale(1.0 / wn, &mut v);
    }
    lambda
}

/// Approximate minimizer of `||I delta - g||` over the ball: projected
/// least-squares warm start, then projected gradient descent on
/// `||I delta - g||^2 / 2` with stepsize `1 / lambda_max^2`. The best iterate
/// is returned, so the objective never exceeds its warm-start value.
pub fn solve_npg_direction(
    fisher: &FisherEstimate,
    g: &[f64],
    ball: &BallConstraint,
    cfg: &NpgSolverConfig,
) -> NpgSolution {
    let center = ball.anchor();
    let residual_of = |offset: &[f64]| {
        // offset is relative to the ball center
        let x: Vec<f64> = center.iter().zip(offset).map(|(c, o)| c + o).collect();
        let mut r = fisher.apply(&x);
        linalg::axpy(-1.0, g, &mut r);
        r
    };
    // Work in center-relative coordinates: minimize ||I u - rhs||, ||u|| <= B.
    let mut rhs = g.to_vec();
    linalg::axpy(-1.0, &fisher.apply(center), &mut rhs);
    let origin_ball = BallConstraint::new(vec![0.0; g.len()], ball.radius()).expect("radius checked");
    let ls = conjugate_residual(|v| fisher.apply(v), &rhs, cfg.ridge, cfg.cr_iters);
    let mut u = project_ball(&ls, &origin_ball);
    let mut best = u.clone();
    let initial_residual = linalg::norm(&residual_of(&u));
    let mut best_obj = initial_residual;

    let lambda = power_iteration(|v| fisher.apply(v), g.len(), cfg.power_iters);
    if lambda > 0.0 {
        let step = 1.0 / (lambda * lambda);
        for _ in 0..cfg.inner_iters {
            let mut r = fisher.apply(&u);
            linalg::axpy(-1.0, &rhs, &mut r);
            let grad = fisher.apply(&r);
            linalg::axpy(-step, &grad, &mut u);
            u = project_ball(&u, &origin_ball);
            let obj = linalg::norm(&residual_of(&u));
            if obj < best_obj {
                best_obj = obj;
                best.clone_from(&u);
            }
        }
    }
    let delta = center.iter().zip(&best).map(|(c, o)| c + o).collect();
    NpgSolution {
        delta,
        residual: best_obj,
        initial_residual,
    }
}

/// Per-iteration state of the alternating loop.
#[derive(Clone, Debug)]
pub struct GailState {
    pub theta: Vec<f64>,
    pub tau: f64,
    pub beta: Vec<f64>,
    pub omega: Vec<f64>,
    pub k: usize,
    /// `(theta_j, tau_j)` for `j < k`.
    pub policy_history: Vec<(Vec<f64>, f64)>,
    pub ball_violations: usize,
}

impl GailState {
    /// `theta_0 = beta_0 = omega_0 = W_0`, `tau_0 = 0`.
    pub fn initial(net: &TwoLayerNet) -> Self {
        Self {
            theta: net.anchor().to_vec(),
            tau: 0.0,
            beta: net.anchor().to_vec(),
            omega: net.anchor().to_vec(),
            k: 0,
            policy_history: Vec::new(),
            ball_violations: 0,
        }
    }
}

/// `theta_{k+1} = (tau_k theta_k - eta delta_k) / tau_{k+1}` with
/// `tau_{k+1} = (k + 1) eta`. A result outside `S_{B_theta}` is projected
/// back and counted.
pub fn actor_step(state: &mut GailState, delta: &[f64], eta: f64, theta_ball: &BallConstraint) {
    let tau_next = (state.k + 1) as f64 * eta;
    let mut theta: Vec<f64> = state
        .theta
        .iter()
        .zip(delta)
        .map(|(t, d)| (state.tau * t - eta * d) / tau_next)
        .collect();
    let tol = 1e-9 * (1.0 + theta_ball.radius());
    if !theta_ball.contains(&theta, tol) {
        state.ball_violations += 1;
        log::warn!(
            "theta left its ball at k = {} (distance {:.4} > {:.4}); projecting",
            state.k + 1,
            linalg::distance(&theta, theta_ball.anchor()),
            theta_ball.radius()
        );
        theta = project_ball(&theta, theta_ball);
    }
    state.theta = theta;
    state.tau = tau_next;
    state.k += 1;
}

/// `beta <- Proj(beta + eta grad)`.
pub fn reward_step(state: &mut GailState, grad: &[f64], eta: f64, beta_ball: &BallConstraint) {
    let mut beta = state.beta.clone();
    linalg::axpy(eta, grad, &mut beta);
    state.beta = project_ball(&beta, beta_ball);
}

/// Uniform mixture of `pi_0, ..., pi_{T-1}`.
#[derive(Clone, Debug)]
pub struct MixedPolicy {
    pub components: Vec<EnergyPolicy>,
}

impl MixedPolicy {
    pub fn new(components: Vec<EnergyPolicy>) -> Result<Self> {
        if components.is_empty() {
            return Err(GailError::Config("mixed policy needs at least one component".into()));
        }
        Ok(Self { components })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn tables(&self, mdp: &FiniteEmbeddedMdp) -> Result<Vec<TabularPolicy>> {
        par::map(&self.components, |c| c.policy_as_table(mdp))
            .into_iter()
            .collect()
    }

    /// Average of the components' exact visitation measures.
    pub fn visitation(&self, mdp: &FiniteEmbeddedMdp) -> Result<Vec<f64>> {
        let nus: Vec<Result<Vec<f64>>> = par::map(&self.components, |c| {
            Ok(oracle::exact_visitation(mdp, &c.policy_as_table(mdp)?)?.nu)
        });
        let mut total = vec![0.0; mdp.n_pairs()];
        for nu in nus {
            linalg::axpy(1.0, &nu?, &mut total);
        }
        linalg::scale(1.0 / self.len() as f64, &mut total);
        Ok(total)
    }
}

/// `J(pi_bar; r) = (1/T) sum_k J(pi_k; r)`.
pub fn mixed_policy_value(mp: &MixedPolicy, mdp: &FiniteEmbeddedMdp, reward: &[f64]) -> Result<f64> {
    if mp.is_empty() {
        return Err(GailError::Config("empty mixed policy".into()));
    }
    let values: Vec<Result<f64>> = par::map(&mp.components, |c| {
        oracle::exact_j(mdp, &c.policy_as_table(mdp)?, reward)
    });
    let mut total = 0.0;
    for v in values {
        total += v?;
    }
    Ok(total / mp.len() as f64)
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub k: usize,
    pub tau: f64,
    #[serde(rename = "J_pi_r")]
    pub j_pi_r: f64,
    #[serde(rename = "J_E_r")]
    pub j_e_r: f64,
    pub kl_to_expert: f64,
    pub grad_theta_norm: f64,
    pub grad_beta_norm: f64,
    pub td_error: f64,
    pub npg_residual: f64,
    pub ball_violations: usize,
}

impl MetricsRow {
    /// Per-iteration gap `J(pi_E; r_k) - J(pi_k; r_k)`.
    pub fn gap(&self) -> f64 {
        self.j_e_r - self.j_pi_r
    }
}

pub type RunMetrics = Vec<MetricsRow>;

pub fn write_metrics_csv<W: std::io::Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: std::io::Read>(input: R) -> Result<RunMetrics> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
    Ok(rows)
}

/// Everything produced by [`run_gail`].
#[derive(Clone, Debug)]
pub struct GailRun {
    pub mixed: MixedPolicy,
    pub metrics: RunMetrics,
    pub state: GailState,
    /// Shared initialization (`W_0`, `b`) of all three networks.
    pub init: TwoLayerNet,
    /// `||beta_k - W_0||` for `k = 0..=T`.
    pub beta_distances: Vec<f64>,
}

fn validate_expert(mdp: &FiniteEmbeddedMdp, expert_data: &[(usize, usize)]) -> Result<()> {
    if expert_data.is_empty() {
        return Err(GailError::Config("expert data is empty".into()));
    }
    for &(s, a) in expert_data {
        mdp.check_pair(s, a)?;
    }
    Ok(())
}

/// Runs `T` alternating iterations. `expert_policy`, when given, is used only
/// for the exact diagnostics `J_E_r` and `kl_to_expert` (NaN otherwise).
pub fn run_gail<R: Rng + ?Sized>(
    mdp: &FiniteEmbeddedMdp,
    expert_data: &[(usize, usize)],
    expert_policy: Option<&TabularPolicy>,
    cfg: &GailConfig,
    rng: &mut R,
) -> Result<GailRun> {
    cfg.validate()?;
    validate_expert(mdp, expert_data)?;
    let eta = cfg.eta();
    let init = TwoLayerNet::init(cfg.m, mdp.dim(), cfg.init, rng)?;
    let anchor = init.anchor().to_vec();
    let theta_ball = BallConstraint::new(anchor.clone(), cfg.b_theta())?;
    let beta_ball = BallConstraint::new(anchor.clone(), cfg.b_beta)?;
    let delta_center = match cfg.delta_ball_center {
        DeltaBallCenter::Anchor => anchor.clone(),
        DeltaBallCenter::Origin => vec![0.0; anchor.len()],
        DeltaBallCenter::Mirrored => anchor.iter().map(|w| -w).collect(),
    };
    let delta_ball = BallConstraint::new(delta_center, cfg.b_theta())?;
    let expert_d = match expert_policy {
        Some(pe) => Some(oracle::exact_visitation(mdp, pe)?.d),
        None => None,
    };

    let mut state = GailState::initial(&init);
    let mut metrics = Vec::with_capacity(cfg.t);
    let mut components = Vec::with_capacity(cfg.t);
    let mut beta_distances = vec![0.0];

    for k in 0..cfg.t {
        let pol = EnergyPolicy::new(init.with_weights(state.theta.clone())?, state.tau)?;
        let rew = RewardNet::new(init.with_weights(state.beta.clone())?, mdp.gamma());
        let pi_table = pol.policy_as_table(mdp)?;
        let reward = rew.reward_table(mdp);

        // Critic.
        let td_out = td::neural_td(mdp, &pi_table, &reward, &init, &cfg.td, rng)?;
        let critic = td_out.critic;
        state.omega = critic.omega().to_vec();

        // Batches.
        let batch: Vec<(usize, usize)> = (0..cfg.n)
            .map(|_| mdp.sample_visitation(&pi_table, rng))
            .collect::<Result<_>>()?;
        let expert_batch: Vec<(usize, usize)> = (0..cfg.n)
            .map(|_| expert_data[rng.random_range(0..expert_data.len())])
            .collect();
        let weights = batch_weights(mdp, &batch)?;
        let scores = pol.score_table(mdp)?;
        let q_hat = critic.q_table(mdp);
        let grad_theta = policy_grad_under(&pol, mdp, &q_hat, &weights, Some(&scores))?;
        let grad_beta = estimate_reward_grad(&rew, mdp, &expert_batch, &batch, cfg.lambda, cfg.regularizer)?;
        let fisher = FisherEstimate::new(pol.tau(), scores, weights, init.n_params());

        // Natural-gradient direction.
        let g: Vec<f64> = grad_theta.iter().map(|v| state.tau * v).collect();
        let npg = solve_npg_direction(&fisher, &g, &delta_ball, &cfg.npg);

        // Diagnostics at (theta_k, beta_k).
        let j_pi_r = oracle::exact_j(mdp, &pi_table, &reward)?;
        let (j_e_r, kl) = match (expert_policy, &expert_d) {
            (Some(pe), Some(d_e)) => (
                oracle::exact_j(mdp, pe, &reward)?,
                oracle::expected_kl(d_e, pe, &pi_table)?,
            ),
            _ => (f64::NAN, f64::NAN),
        };
        let td_error = td::weighted_q_error(mdp, &pi_table, &reward, &critic)?;

        components.push(pol);
        state.policy_history.push((state.theta.clone(), state.tau));
        actor_step(&mut state, &npg.delta, eta, &theta_ball);
        reward_step(&mut state, &grad_beta, eta, &beta_ball);
        beta_distances.push(linalg::distance(&state.beta, &anchor));

        let row = MetricsRow {
            k,
            tau: components[k].tau(),
            j_pi_r,
            j_e_r,
            kl_to_expert: kl,
            grad_theta_norm: linalg::norm(&grad_theta),
            grad_beta_norm: linalg::norm(&grad_beta),
            td_error,
            npg_residual: npg.residual,
            ball_violations: state.ball_violations,
        };
        log::debug!("iteration {k}: gap {:.5}, td_error {:.4}", row.gap(), row.td_error);
        let finite = [row.j_pi_r, row.grad_theta_norm, row.grad_beta_norm, row.td_error, row.npg_residual]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(GailError::Numerical(format!("non-finite diagnostics at iteration {k}")));
        }
        metrics.push(row);
    }

    Ok(GailRun {
        mixed: MixedPolicy::new(components)?,
        metrics,
        state,
        init,
        beta_distances,
    })
}

/// Convenience wrapper seeding a ChaCha generator from `cfg.seed`.
pub fn run_gail_seeded(
    mdp: &FiniteEmbeddedMdp,
    expert_data: &[(usize, usize)],
    expert_policy: Option<&TabularPolicy>,
    cfg: &GailConfig,
) -> Result<GailRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    run_gail(mdp, expert_data, expert_policy, cfg, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random_mdp;
    use crate::net::uniform_in_ball;
    use rand_distr::{Distribution, StandardNormal};

    fn setup(seed: u64) -> (FiniteEmbeddedMdp, TwoLayerNet, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(3, 2, 3, 0.9, 0.05, &mut rng).unwrap();
        let net = TwoLayerNet::init(8, 3, InitScheme::Symmetric, &mut rng).unwrap();
        (mdp, net, rng)
    }

    fn perturbed(net: &TwoLayerNet, r: f64, rng: &mut ChaCha8Rng) -> TwoLayerNet {
        let ball = BallConstraint::new(net.anchor().to_vec(), r).unwrap();
        net.with_weights(uniform_in_ball(&ball, rng)).unwrap()
    }

    #[test]
    fn fisher_edge_cases() {
        let (mdp, net, mut rng) = setup(1);
        let pol0 = EnergyPolicy::new(perturbed(&net, 1.0, &mut rng), 0.0).unwrap();
        let f = estimate_fisher(&pol0, &mdp, &[(0, 1), (2, 0)]).unwrap();
        assert!(f.dense().unwrap().iter().all(|v| *v == 0.0));
        assert!(matches!(estimate_fisher(&pol0, &mdp, &[]), Err(GailError::EmptyBatch)));

        let pol = EnergyPolicy::new(perturbed(&net, 1.0, &mut rng), 1.5).unwrap();
        let f1 = estimate_fisher(&pol, &mdp, &[(1, 1)]).unwrap();
        let dense = f1.dense().unwrap();
        let sv = dense.clone().singular_values();
        assert!(sv.iter().filter(|s| **s > 1e-10 * sv[0].max(1e-300)).count() <= 1);
        let v: Vec<f64> = (0..24).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mv = f1.apply(&v);
        let dv = &dense * nalgebra::DVector::from_column_slice(&v);
        assert!(mv.iter().zip(dv.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn fisher_is_psd() {
        let (mdp, net, mut rng) = setup(2);
        let pol = EnergyPolicy::new(perturbed(&net, 2.0, &mut rng), 2.0).unwrap();
        let batch: Vec<_> = (0..20).map(|i| (i % 3, (i / 3) % 2)).collect();
        let f = estimate_fisher(&pol, &mdp, &batch).unwrap();
        for _ in 0..50 {
            let v: Vec<f64> = (0..24).map(|_| StandardNormal.sample(&mut rng)).collect();
            assert!(linalg::dot(&v, &f.apply(&v)) >= -1e-10);
            assert!(f.quadratic(&v) >= 0.0);
        }
    }

    #[test]
    fn gradient_estimator_edge_cases() {
        let (mdp, net, mut rng) = setup(3);
        let batch = [(0, 0), (1, 1), (2, 0)];
        let pol = EnergyPolicy::new(perturbed(&net, 1.0, &mut rng), 1.0).unwrap();
        let zero_critic = CriticNet::new(net.clone());
        assert!(estimate_policy_grad(&pol, &zero_critic, &mdp, &batch).unwrap().iter().all(|v| *v == 0.0));
        let critic = CriticNet::new(perturbed(&net, 1.0, &mut rng));
        let cold = EnergyPolicy::new(pol.net.clone(), 0.0).unwrap();
        assert!(estimate_policy_grad(&cold, &critic, &mdp, &batch).unwrap().iter().all(|v| *v == 0.0));

        let rew = RewardNet::new(perturbed(&net, 1.0, &mut rng), mdp.gamma());
        let g = estimate_reward_grad(&rew, &mdp, &batch, &batch, 0.0, RegularizerKind::None).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        let g = estimate_reward_grad(&rew, &mdp, &[(1, 0)], &[(1, 0)], 0.0, RegularizerKind::L2ToAnchor).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(matches!(
            estimate_reward_grad(&rew, &mdp, &batch, &batch[..2], 0.0, RegularizerKind::None),
            Err(GailError::BatchMismatch { expert: 3, policy: 2 })
        ));
        // The regularizer pulls toward the anchor.
        let g = estimate_reward_grad(&rew, &mdp, &batch, &batch, 2.0, RegularizerKind::L2ToAnchor).unwrap();
        let expect: Vec<f64> = linalg::sub(rew.net.anchor(), rew.beta()).iter().map(|v| 2.0 * v).collect();
        assert!(g.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn npg_solver_is_feasible_and_monotone() {
        let (mdp, net, mut rng) = setup(4);
        let pol = EnergyPolicy::new(perturbed(&net, 1.0, &mut rng), 1.0).unwrap();
        let batch: Vec<_> = (0..12).map(|i| (i % 3, i % 2)).collect();
        let f = estimate_fisher(&pol, &mdp, &batch).unwrap();
        for center in [net.anchor().to_vec(), vec![0.0; 24]] {
            let ball = BallConstraint::new(center, 0.3).unwrap();
            let sol = solve_npg_direction(&f, &[0.0; 24], &ball, &NpgSolverConfig::default());
            assert!(ball.contains(&sol.delta, 1e-12));
            assert!(sol.residual <= sol.initial_residual);
            let g: Vec<f64> = (0..24).map(|_| StandardNormal.sample(&mut rng)).collect();
            let sol = solve_npg_direction(&f, &g, &ball, &NpgSolverConfig::default());
            assert!(ball.contains(&sol.delta, 1e-12));
            assert!(sol.residual <= sol.initial_residual);
        }
    }

    #[test]
    fn tau_sequence_and_shrinkage() {
        let (_, net, _) = setup(5);
        let mut st = GailState::initial(&net);
        let big = BallConstraint::new(net.anchor().to_vec(), 1e6).unwrap();
        for k in 0..5 {
            let d = st.theta.clone();
            actor_step(&mut st, &d, 0.1, &big);
            assert_eq!(st.tau, (k + 1) as f64 * 0.1);
        }
        let expect = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert!((st.tau - expect[4]).abs() < 1e-15);

        // delta = theta gives ((tau_k - eta) / tau_{k+1}) theta.
        let mut st = GailState::initial(&net);
        st.k = 3;
        st.tau = 0.3;
        let before = st.theta.clone();
        actor_step(&mut st, &before, 0.1, &big);
        for (a, b) in st.theta.iter().zip(&before) {
            assert!((a - 0.2 / 0.4 * b).abs() < 1e-15);
        }
        // First step: theta_1 = -delta_0.
        let mut st = GailState::initial(&net);
        let delta: Vec<f64> = net.anchor().iter().map(|w| -w).collect();
        let ball = BallConstraint::new(net.anchor().to_vec(), 1.0).unwrap();
        actor_step(&mut st, &delta, 0.25, &ball);
        assert_eq!(st.theta, net.anchor());
        assert_eq!(st.ball_violations, 0);
    }

    #[test]
    fn reward_step_examples() {
        let (_, net, _) = setup(6);
        let ball = BallConstraint::new(net.anchor().to_vec(), 0.5).unwrap();
        let mut st = GailState::initial(&net);
        reward_step(&mut st, &vec![0.0; 24], 0.1, &ball);
        assert_eq!(st.beta, net.anchor());
        let small = vec![0.01; 24];
        reward_step(&mut st, &small, 0.1, &ball);
        assert!(st.beta.iter().zip(net.anchor()).all(|(b, a)| (b - a - 0.001).abs() < 1e-15));
        reward_step(&mut st, &vec![100.0; 24], 0.1, &ball);
        assert!((linalg::distance(&st.beta, net.anchor()) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn config_validation() {
        assert!(GailConfig::default().validate().is_ok());
        let bad = GailConfig { eta: Some(-0.1), ..GailConfig::default() };
        assert!(bad.validate().is_err());
        let bad = GailConfig { m: 7, ..GailConfig::default() };
        assert!(bad.validate().is_err());
        let bad = GailConfig { b_beta: -1.0, ..GailConfig::default() };
        assert!(bad.validate().is_err());
        let cfg = GailConfig { t: 16, ..GailConfig::default() };
        assert_eq!(cfg.eta(), 0.25);
        assert_eq!(cfg.b_theta(), cfg.td.b_omega);
    }

    #[test]
    fn metrics_csv_round_trip() {
        let row = MetricsRow {
            k: 3,
            tau: 0.375,
            j_pi_r: -0.1,
            j_e_r: 0.2,
            kl_to_expert: 0.05,
            grad_theta_norm: 1.0,
            grad_beta_norm: 2.0,
            td_error: 0.01,
            npg_residual: 1e-9,
            ball_violations: 0,
        };
        let mut buf = Vec::new();
        write_metrics_csv(&[row.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,tau,J_pi_r,J_E_r,kl_to_expert,grad_theta_norm,grad_beta_norm,td_error,npg_residual,ball_violations\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), vec![row]);
    }
}
