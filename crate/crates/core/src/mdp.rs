//! Finite MDPs whose state-action pairs are embedded in the unit ball of `R^d`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_index, GailError, Result};

const SIMPLEX_TOL: f64 = 1e-12;
/// Slack allowed on the unit-norm bound of embeddings (rounding from rescaling).
const EMBED_NORM_TOL: f64 = 1e-12;

/// A finite MDP `(S, A, P, rho, gamma)` with a feature embedding of every
/// `(s, a)` into `R^d`, `||embed(s, a)|| <= 1`.
///
/// Transition and embedding tables are stored flat, row-major in
/// `(state, action, ·)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteEmbeddedMdp {
    n_states: usize,
    n_actions: usize,
    dim: usize,
    gamma: f64,
    rho: Vec<f64>,
    transitions: Vec<f64>,
    embedding: Vec<f64>,
}

/// On-disk JSON layout of an MDP.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub d: usize,
    pub gamma: f64,
    pub rho: Vec<f64>,
    #[serde(rename = "P")]
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub embedding: Vec<Vec<Vec<f64>>>,
}

fn check_distribution(what: &str, row: &[f64]) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(GailError::InvalidMdp(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(GailError::InvalidMdp(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

/// Draws an index from a probability row by inverse-CDF.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

impl FiniteEmbeddedMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        dim: usize,
        gamma: f64,
        rho: Vec<f64>,
        transitions: Vec<f64>,
        embedding: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || dim == 0 {
            return Err(GailError::InvalidMdp(
                "n_states, n_actions and d must be positive".into(),
            ));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(GailError::InvalidMdp(format!("gamma = {gamma} outside (0, 1)")));
        }
        if rho.len() != n_states {
            return Err(GailError::Dimension(format!(
                "rho has length {}, expected {n_states}",
                rho.len()
            )));
        }
        if transitions.len() != n_states * n_actions * n_states {
            return Err(GailError::Dimension(format!(
                "P has {} entries, expected {}",
                transitions.len(),
                n_states * n_actions * n_states
            )));
        }
        if embedding.len() != n_states * n_actions * dim {
            return Err(GailError::Dimension(format!(
                "embedding has {} entries, expected {}",
                embedding.len(),
                n_states * n_actions * dim
            )));
        }
        check_distribution("rho", &rho)?;
        for (i, row) in transitions.chunks(n_states).enumerate() {
            check_distribution(
                &format!("P[{}, {}, ·]", i / n_actions, i % n_actions),
                row,
            )?;
        }
        for (i, x) in embedding.chunks(dim).enumerate() {
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !n.is_finite() || n > 1.0 + EMBED_NORM_TOL {
                return Err(GailError::InvalidMdp(format!(
                    "embedding of pair {i} has norm {n} > 1"
                )));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            dim,
            gamma,
            rho,
            transitions,
            embedding,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Number of state-action pairs.
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Embedding dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    #[inline]
    pub fn pair_index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// `P[s, a, ·]`.
    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = self.pair_index(s, a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    #[inline]
    pub fn embed(&self, s: usize, a: usize) -> &[f64] {
        let start = self.pair_index(s, a) * self.dim;
        &self.embedding[start..start + self.dim]
    }

    /// All embedded points in pair order.
    pub fn embedded_points(&self) -> Vec<&[f64]> {
        self.embedding.chunks(self.dim).collect()
    }

    pub fn check_pair(&self, s: usize, a: usize) -> Result<()> {
        check_index("state", s, self.n_states)?;
        check_index("action", a, self.n_actions)
    }

    /// Samples `s' ~ P(· | s, a)`.
    pub fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Result<usize> {
        self.check_pair(s, a)?;
        Ok(sample_categorical(self.transition_row(s, a), rng))
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.rho, rng)
    }

    fn check_policy(&self, pi: &TabularPolicy) -> Result<()> {
        if pi.n_states() != self.n_states || pi.n_actions() != self.n_actions {
            return Err(GailError::Dimension(format!(
                "policy is {}x{}, MDP is {}x{}",
                pi.n_states(),
                pi.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }

    /// Draws `(s, a) ~ nu_pi` exactly: a horizon `H ~ Geometric(1 - gamma)` on
    /// `{0, 1, ...}`, then `H` environment steps from `s_0 ~ rho`.
    pub fn sample_visitation<R: Rng + ?Sized>(
        &self,
        pi: &TabularPolicy,
        rng: &mut R,
    ) -> Result<(usize, usize)> {
        self.check_policy(pi)?;
        let horizon = Geometric::new(1.0 - self.gamma)
            .map_err(|e| GailError::Numerical(e.to_string()))?
            .sample(rng);
        let mut s = self.sample_initial(rng);
        let mut a = pi.sample_action(s, rng);
        for _ in 0..horizon {
            s = sample_categorical(self.transition_row(s, a), rng);
            a = pi.sample_action(s, rng);
        }
        Ok((s, a))
    }

    /// Runs the chain `burn_in` steps from `s_0 ~ rho` and returns the current
    /// `(s, a)`. Approximates a draw from the stationary `rho_pi`.
    pub fn sample_stationary<R: Rng + ?Sized>(
        &self,
        pi: &TabularPolicy,
        rng: &mut R,
        burn_in: usize,
    ) -> Result<(usize, usize)> {
        self.check_policy(pi)?;
        let mut s = self.sample_initial(rng);
        let mut a = pi.sample_action(s, rng);
        for _ in 0..burn_in {
            s = sample_categorical(self.transition_row(s, a), rng);
            a = pi.sample_action(s, rng);
        }
        Ok((s, a))
    }

    pub fn to_document(&self) -> MdpDocument {
        let n_s = self.n_states;
        let n_a = self.n_actions;
        MdpDocument {
            n_states: n_s,
            n_actions: n_a,
            d: self.dim,
            gamma: self.gamma,
            rho: self.rho.clone(),
            transitions: (0..n_s)
                .map(|s| (0..n_a).map(|a| self.transition_row(s, a).to_vec()).collect())
                .collect(),
            embedding: (0..n_s)
                .map(|s| (0..n_a).map(|a| self.embed(s, a).to_vec()).collect())
                .collect(),
        }
    }

    pub fn from_document(doc: MdpDocument) -> Result<Self> {
        let nested_len_ok = |t: &Vec<Vec<Vec<f64>>>, inner: usize| {
            t.len() == doc.n_states
                && t.iter()
                    .all(|r| r.len() == doc.n_actions && r.iter().all(|v| v.len() == inner))
        };
        if !nested_len_ok(&doc.transitions, doc.n_states) {
            return Err(GailError::Dimension("P must have shape (n_states, n_actions, n_states)".into()));
        }
        if !nested_len_ok(&doc.embedding, doc.d) {
            return Err(GailError::Dimension("embedding must have shape (n_states, n_actions, d)".into()));
        }
        let transitions = doc.transitions.into_iter().flatten().flatten().collect();
        let embedding = doc.embedding.into_iter().flatten().flatten().collect();
        Self::new(
            doc.n_states,
            doc.n_actions,
            doc.d,
            doc.gamma,
            doc.rho,
            transitions,
            embedding,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Same dynamics with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.dim,
            gamma,
            self.rho.clone(),
            self.transitions.clone(),
            self.embedding.clone(),
        )
    }
}

/// `n` points drawn uniformly from the unit ball of `R^d`, then rescaled so
/// that the largest norm is exactly 1. Returned flat.
pub fn random_embedding<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let mut g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let radius = rng.random::<f64>().powf(1.0 / dim as f64);
        g.iter_mut().for_each(|v| *v *= radius / gn);
        out.extend(g);
    }
    let max_norm = out
        .chunks(dim)
        .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0_f64, f64::max);
    if max_norm > 0.0 {
        out.iter_mut().for_each(|v| *v /= max_norm);
    }
    // Rounding can leave the longest vector a hair above 1.
    for x in out.chunks_mut(dim) {
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1.0 {
            x.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Replaces every row `p` with `(1 - mix) p + mix * uniform`.
pub fn mix_uniform(transitions: &mut [f64], n_states: usize, mix: f64) {
    let u = 1.0 / n_states as f64;
    for row in transitions.chunks_mut(n_states) {
        for p in row.iter_mut() {
            *p = (1.0 - mix) * *p + mix * u;
        }
        renormalize(row);
    }
}

fn renormalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= total);
}

/// Parameters of the random MDP generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpParams {
    pub n_states: usize,
    pub n_actions: usize,
    pub d: usize,
    pub gamma: f64,
    #[serde(default = "default_mixing")]
    pub mixing: f64,
    pub seed: u64,
}

pub(crate) fn default_mixing() -> f64 {
    0.05
}

/// Random dense MDP: Dirichlet(1)-like transition rows mixed with uniform,
/// a random initial distribution and a random unit-ball embedding.
pub fn random_mdp<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    dim: usize,
    gamma: f64,
    mixing: f64,
    rng: &mut R,
) -> Result<FiniteEmbeddedMdp> {
    let exp = rand_distr::Exp1;
    let mut transitions: Vec<f64> = (0..n_states * n_actions * n_states)
        .map(|_| exp.sample(rng))
        .collect();
    for row in transitions.chunks_mut(n_states) {
        renormalize(row);
    }
    mix_uniform(&mut transitions, n_states, mixing);
    let mut rho: Vec<f64> = (0..n_states).map(|_| exp.sample(rng)).collect();
    renormalize(&mut rho);
    let embedding = random_embedding(n_states * n_actions, dim, rng);
    FiniteEmbeddedMdp::new(n_states, n_actions, dim, gamma, rho, transitions, embedding)
}

/// Row-stochastic table of action probabilities, `probs[s * n_actions + a] = pi(a | s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(GailError::Dimension(format!(
                "policy table has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (total - 1.0).abs() > SIMPLEX_TOL {
                return Err(GailError::InvalidPolicy(format!(
                    "row {s} is not a distribution (sum {total})"
                )));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Puts all mass on `actions[s]` at each state.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            check_index("action", a, n_actions)?;
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    /// Random policy with full support.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        let mut probs: Vec<f64> = (0..n_states * n_actions)
            .map(|_| rand_distr::Exp1.sample(rng))
            .map(|x: f64| x + 1e-3)
            .collect();
        for row in probs.chunks_mut(n_actions) {
            renormalize(row);
        }
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_categorical(self.row(s), rng)
    }
}

/// One TD sample `(s, a, r, s', a')`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub next_action: usize,
}

/// `T_E` i.i.d. draws from `nu_E`.
pub fn generate_expert_trajectory<R: Rng + ?Sized>(
    mdp: &FiniteEmbeddedMdp,
    expert: &TabularPolicy,
    t_e: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    (0..t_e).map(|_| mdp.sample_visitation(expert, rng)).collect()
}

/// Empirical frequency table over `(s, a)` pairs.
pub fn empirical_pairs(samples: &[(usize, usize)], n_states: usize, n_actions: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_states * n_actions];
    for &(s, a) in samples {
        counts[s * n_actions + a] += 1.0;
    }
    let n = samples.len().max(1) as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    counts
}

/// Total variation distance between two distributions on the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
