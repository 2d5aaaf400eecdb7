//! Neural TD policy evaluation with ball projection and iterate averaging.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GailError, Result};
use crate::linalg;
use crate::mdp::{FiniteEmbeddedMdp, TabularPolicy, Transition};
use crate::net::{project_ball, BallConstraint, TwoLayerNet};
use crate::oracle;
use crate::policy::CriticNet;

/// How `(s, a) ~ rho_pi` is drawn at each TD step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TdSampling {
    /// One chain: burn in once, then each step continues from the previous `(s', a')`.
    #[default]
    Chain,
    /// A fresh burned-in chain for every step.
    Iid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdConfig {
    pub t_td: usize,
    /// `None` selects `min((1 - gamma) / 8, m^{-1/2})`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub b_omega: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub sampling: TdSampling,
}

fn default_burn_in() -> usize {
    100
}

impl Default for TdConfig {
    fn default() -> Self {
        Self {
            t_td: 2000,
            alpha: None,
            b_omega: 4.0,
            burn_in: default_burn_in(),
            sampling: TdSampling::Chain,
        }
    }
}

/// `min((1 - gamma) / 8, m^{-1/2})`.
pub fn default_alpha(gamma: f64, width: usize) -> f64 {
    ((1.0 - gamma) / 8.0).min(1.0 / (width as f64).sqrt())
}

impl TdConfig {
    pub fn alpha_for(&self, gamma: f64, width: usize) -> f64 {
        self.alpha.unwrap_or_else(|| default_alpha(gamma, width))
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_td == 0 {
            return Err(GailError::Config("t_td must be >= 1".into()));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0) || !a.is_finite() {
                return Err(GailError::Config(format!("TD stepsize must be > 0, got {a}")));
            }
        }
        if !(self.b_omega >= 0.0) || !self.b_omega.is_finite() {
            return Err(GailError::Config(format!("b_omega must be >= 0, got {}", self.b_omega)));
        }
        Ok(())
    }
}

/// One projected semi-gradient step on `omega` in place. Returns the Bellman
/// residual `Q(s, a) - (1 - gamma) r - gamma Q(s', a')`.
pub fn td_step(
    net: &TwoLayerNet,
    omega: &mut Vec<f64>,
    mdp: &FiniteEmbeddedMdp,
    tr: &Transition,
    alpha: f64,
    ball: &BallConstraint,
) -> f64 {
    let x = mdp.embed(tr.state, tr.action);
    let x_next = mdp.embed(tr.next_state, tr.next_action);
    let gamma = mdp.gamma();
    let residual = net.eval_at(omega, x) - (1.0 - gamma) * tr.reward - gamma * net.eval_at(omega, x_next);
    if residual == 0.0 || alpha == 0.0 {
        return residual;
    }
    let phi = net.features_at(omega, x);
    linalg::axpy(-alpha * residual, &phi, omega);
    if !ball.contains(omega, 0.0) {
        *omega = project_ball(omega, ball);
    }
    residual
}

/// Result of a neural TD run.
#[derive(Clone, Debug)]
pub struct TdOutput {
    /// Critic at the averaged iterate.
    pub critic: CriticNet,
    /// Mean `|residual|` over the run.
    pub mean_abs_residual: f64,
}

/// Runs `t_td` TD steps from `omega(0) = W_0` and returns the average of
/// `omega(0), ..., omega(t_td - 1)`.
pub fn neural_td<R: Rng + ?Sized>(
    mdp: &FiniteEmbeddedMdp,
    pi: &TabularPolicy,
    reward: &[f64],
    init: &TwoLayerNet,
    cfg: &TdConfig,
    rng: &mut R,
) -> Result<TdOutput> {
    cfg.validate()?;
    if reward.len() != mdp.n_pairs() {
        return Err(GailError::Dimension("reward table shape".into()));
    }
    let alpha = cfg.alpha_for(mdp.gamma(), init.width());
    let ball = BallConstraint::new(init.anchor().to_vec(), cfg.b_omega)?;
    let mut omega = init.anchor().to_vec();
    let mut sum = vec![0.0; omega.len()];
    let mut abs_residual = 0.0;

    let (mut s, mut a) = mdp.sample_stationary(pi, rng, cfg.burn_in)?;
    for j in 0..cfg.t_td {
        if cfg.sampling == TdSampling::Iid && j > 0 {
            (s, a) = mdp.sample_stationary(pi, rng, cfg.burn_in)?;
        }
        let next_state = mdp.step(s, a, rng)?;
        let next_action = pi.sample_action(next_state, rng);
        let tr = Transition {
            state: s,
            action: a,
            reward: reward[mdp.pair_index(s, a)],
            next_state,
            next_action,
        };
        linalg::axpy(1.0, &omega, &mut sum);
        abs_residual += td_step(init, &mut omega, mdp, &tr, alpha, &ball).abs();
        (s, a) = (next_state, next_action);
    }
    linalg::scale(1.0 / cfg.t_td as f64, &mut sum);
    Ok(TdOutput {
        critic: CriticNet::new(init.with_weights(sum)?),
        mean_abs_residual: abs_residual / cfg.t_td as f64,
    })
}

/// `||Q_hat - Q^pi_r||_{2, rho_pi}` with exact `Q` and stationary weights.
pub fn weighted_q_error(
    mdp: &FiniteEmbeddedMdp,
    pi: &TabularPolicy,
    reward: &[f64],
    critic: &CriticNet,
) -> Result<f64> {
    let q = oracle::exact_q(mdp, pi, reward)?;
    let weights = oracle::exact_stationary(mdp, pi)?.rho_table;
    Ok(weighted_l2(&critic.q_table(mdp), &q, &weights))
}

pub fn weighted_l2(a: &[f64], b: &[f64], weights: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(weights)
        .map(|((x, y), w)| w * (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
