//! Energy-based softmax policy, reward and critic networks.

use rand::Rng;

use crate::error::{GailError, Result};
use crate::linalg;
use crate::mdp::{sample_categorical, FiniteEmbeddedMdp, TabularPolicy};
use crate::net::TwoLayerNet;

/// `pi(a | s) ∝ exp(tau * u_theta(embed(s, a)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyPolicy {
    pub net: TwoLayerNet,
    tau: f64,
}

/// Numerically stable softmax of `scale * energies`.
pub fn softmax(energies: &[f64], scale: f64) -> Vec<f64> {
    if scale == 0.0 {
        return vec![1.0 / energies.len() as f64; energies.len()];
    }
    let logits: Vec<f64> = energies.iter().map(|e| scale * e).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

fn log_softmax(energies: &[f64], scale: f64, a: usize) -> f64 {
    let logits: Vec<f64> = energies.iter().map(|e| scale * e).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[a] - lse
}

impl EnergyPolicy {
    pub fn new(net: TwoLayerNet, tau: f64) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(GailError::Config(format!("inverse temperature must be >= 0, got {tau}")));
        }
        Ok(Self { net, tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn theta(&self) -> &[f64] {
        self.net.weights()
    }

    fn check_mdp(&self, mdp: &FiniteEmbeddedMdp) -> Result<()> {
        if mdp.dim() != self.net.dim() {
            return Err(GailError::Dimension(format!(
                "MDP embedding dim {} differs from network input dim {}",
                mdp.dim(),
                self.net.dim()
            )));
        }
        Ok(())
    }

    /// `u_theta(embed(s, a))` for every action.
    pub fn energies(&self, mdp: &FiniteEmbeddedMdp, s: usize) -> Vec<f64> {
        (0..mdp.n_actions())
            .map(|a| self.net.eval_at(self.net.weights(), mdp.embed(s, a)))
            .collect()
    }

    pub fn action_probs(&self, mdp: &FiniteEmbeddedMdp, s: usize) -> Result<Vec<f64>> {
        self.check_mdp(mdp)?;
        mdp.check_pair(s, 0)?;
        Ok(softmax(&self.energies(mdp, s), self.tau))
    }

    pub fn log_prob(&self, mdp: &FiniteEmbeddedMdp, s: usize, a: usize) -> Result<f64> {
        self.check_mdp(mdp)?;
        mdp.check_pair(s, a)?;
        Ok(log_softmax(&self.energies(mdp, s), self.tau, a))
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, mdp: &FiniteEmbeddedMdp, s: usize, rng: &mut R) -> Result<usize> {
        Ok(sample_categorical(&self.action_probs(mdp, s)?, rng))
    }

    /// Temperature-adjusted score `iota(s, a) = phi(s, a) - E_{a' ~ pi(·|s)}[phi(s, a')]`,
    /// so that `grad_theta log pi(a|s) = tau * iota(s, a)`.
    pub fn score(&self, mdp: &FiniteEmbeddedMdp, s: usize, a: usize) -> Result<Vec<f64>> {
        self.check_mdp(mdp)?;
        mdp.check_pair(s, a)?;
        let probs = softmax(&self.energies(mdp, s), self.tau);
        let w = self.net.weights();
        let mut out = self.net.features_at(w, mdp.embed(s, a));
        for (b, p) in probs.iter().enumerate() {
            let f = self.net.features_at(w, mdp.embed(s, b));
            linalg::axpy(-p, &f, &mut out);
        }
        Ok(out)
    }

    /// Scores of every pair, in pair order. Shares the per-state feature
    /// mean across actions.
    pub fn score_table(&self, mdp: &FiniteEmbeddedMdp) -> Result<Vec<Vec<f64>>> {
        self.check_mdp(mdp)?;
        let n_a = mdp.n_actions();
        let w = self.net.weights();
        let per_state = crate::par::map_range(mdp.n_states(), |s| {
            let probs = softmax(&self.energies(mdp, s), self.tau);
            let feats: Vec<Vec<f64>> = (0..n_a)
                .map(|a| self.net.features_at(w, mdp.embed(s, a)))
                .collect();
            let mut mean = vec![0.0; self.net.n_params()];
            for (f, p) in feats.iter().zip(&probs) {
                linalg::axpy(*p, f, &mut mean);
            }
            feats
                .into_iter()
                .map(|mut f| {
                    linalg::axpy(-1.0, &mean, &mut f);
                    f
                })
                .collect::<Vec<_>>()
        });
        Ok(per_state.into_iter().flatten().collect())
    }

    pub fn policy_as_table(&self, mdp: &FiniteEmbeddedMdp) -> Result<TabularPolicy> {
        self.check_mdp(mdp)?;
        let probs = (0..mdp.n_states())
            .flat_map(|s| softmax(&self.energies(mdp, s), self.tau))
            .collect();
        TabularPolicy::new(mdp.n_states(), mdp.n_actions(), probs)
    }
}

/// `r_beta(s, a) = (1 - gamma)^{-1} u_beta(embed(s, a))`.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardNet {
    pub net: TwoLayerNet,
    scale: f64,
}

impl RewardNet {
    pub fn new(net: TwoLayerNet, gamma: f64) -> Self {
        Self {
            net,
            scale: 1.0 / (1.0 - gamma),
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn beta(&self) -> &[f64] {
        self.net.weights()
    }

    pub fn reward(&self, mdp: &FiniteEmbeddedMdp, s: usize, a: usize) -> f64 {
        self.scale * self.net.eval_at(self.net.weights(), mdp.embed(s, a))
    }

    pub fn reward_table(&self, mdp: &FiniteEmbeddedMdp) -> Vec<f64> {
        reward_table_at(&self.net, self.net.weights(), mdp)
    }
}

/// Reward table of the reward network evaluated at arbitrary weights.
pub fn reward_table_at(net: &TwoLayerNet, weights: &[f64], mdp: &FiniteEmbeddedMdp) -> Vec<f64> {
    let scale = 1.0 / (1.0 - mdp.gamma());
    mdp.embedded_points()
        .iter()
        .map(|x| scale * net.eval_at(weights, x))
        .collect()
}

/// `Q_omega(s, a) = u_omega(embed(s, a))`.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticNet {
    pub net: TwoLayerNet,
}

impl CriticNet {
    pub fn new(net: TwoLayerNet) -> Self {
        Self { net }
    }

    pub fn omega(&self) -> &[f64] {
        self.net.weights()
    }

    pub fn q(&self, mdp: &FiniteEmbeddedMdp, s: usize, a: usize) -> f64 {
        self.net.eval_at(self.net.weights(), mdp.embed(s, a))
    }

    pub fn q_table(&self, mdp: &FiniteEmbeddedMdp) -> Vec<f64> {
        mdp.embedded_points()
            .iter()
            .map(|x| self.net.eval_at(self.net.weights(), x))
            .collect()
    }
}
