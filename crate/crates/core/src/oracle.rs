//! Closed-form ground truth for finite MDPs.
//!
//! Every quantity the learning code estimates from samples (value functions,
//! visitation and stationary measures, expected return, expected KL) is
//! computed here exactly by dense linear algebra. Value functions follow the
//! normalized convention `Q(s, a) = E[(1 - gamma) sum_t gamma^t r(s_t, a_t)]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{GailError, Result};
use crate::mdp::{FiniteEmbeddedMdp, TabularPolicy};

/// Moduli at or above this are treated as a second unit eigenvalue.
const DEGENERACY_GAP: f64 = 1e-8;

/// `Q`, `V`, `A` tables and `J` for one `(pi, r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactQuantities {
    pub q_table: Vec<f64>,
    pub v_table: Vec<f64>,
    pub a_table: Vec<f64>,
    pub j_value: f64,
}

impl ExactQuantities {
    pub fn compute(mdp: &FiniteEmbeddedMdp, pi: &TabularPolicy, reward: &[f64]) -> Result<Self> {
        let q_table = exact_q(mdp, pi, reward)?;
        let v_table = state_values(mdp, pi, &q_table);
        let n_a = mdp.n_actions();
        let a_table = q_table
            .iter()
            .enumerate()
            .map(|(i, q)| q - v_table[i / n_a])
            .collect();
        let j_value = mdp.rho().iter().zip(&v_table).map(|(p, v)| p * v).sum();
        Ok(Self {
            q_table,
            v_table,
            a_table,
            j_value,
        })
    }
}

fn check_shapes(mdp: &FiniteEmbeddedMdp, pi: &TabularPolicy, reward: Option<&[f64]>) -> Result<()> {
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return Err(GailError::Dimension(format!(
            "policy is {}x{}, MDP is {}x{}",
            pi.n_states(),
            pi.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    if let Some(r) = reward {
        if r.len() != mdp.n_pairs() {
            return Err(GailError::Dimension(format!(
                "reward table has {} entries, expected {}",
                r.len(),
                mdp.n_pairs()
            )));
        }
    }
    Ok(())
}

/// State-to-state kernel `P_pi[s, s'] = sum_a pi(a|s) P[s, a, s']`.
pub fn state_kernel(mdp: &FiniteEmbeddedMdp, pi: &TabularPolicy) -> DMatrix<f64> {
    let n = mdp.n_states();
    DMatrix::from_fn(n, n, |s, t| {
        (0..mdp.n_actions())
            .map(|a| pi.prob(s, a) * mdp.transition_row(s, a)[t])
            .sum()
    })
}

/// `V(s) = sum_a pi(a|s) Q(s, a)`.
pub fn state_values(mdp: &FiniteEmbeddedMdp, pi: &TabularPolicy, q: &[f64]) -> Vec<f64> {
    let n_a = mdp.n_actions();
    (0..mdp.n_states())
        .map(|s| (0..n_a).map(|a| pi.prob(s, a) * q[s * n_a + a]).sum())
        .collect()
}

/// Solves `Q = (1 - gamma) r + gamma P Pi Q` directly.
pub fn exact_q(mdp: &FiniteEmbeddedMdp, pi: &TabularPolicy, reward: &[f64]) -> Result<Vec<f64>> {
    check_shapes(mdp, pi, Some(reward))?;
    let n_s = mdp.n_states();
    let n_a = mdp.n_actions();
    let n = mdp.n_pairs();
    let gamma = mdp.gamma();
    let mut system = DMatrix::<f64>::identity(n, n);
    for s in 0..n_s {
        for a in 0..n_a {
            let row = mdp.pair_index(s, a);
            let p = mdp.transition_row(s, a);
            for (t, &pt) in p.iter().enumerate() {
                if pt == 0.0 {
                    continue;
                }
                for b in 0..n_a {
                    system[(row, t * n_a + b)] -= gamma * pt * pi.prob(t, b);
                }
            }
        }
    }
    let rhs = DVector::from_iterator(n, reward.iter().map(|r| (1.0 - gamma) * r));
    let q = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| GailError::Numerical("Bellman system is singular".into()))?;
    Ok(q.iter().copied().collect())
}

/// Applies the evaluation operator `(T Q)(s, a) = (1 - gamma) r + gamma E[Q(s', a')]`.
pub fn bellman_operator(
    mdp: &FiniteEmbeddedMdp,
    pi: &TabularPolicy,
    reward: &[f64],
    q: &[f64],
) -> Vec<f64> {
    let v = state_values(mdp, pi, q);
    let gamma = mdp.gamma();
    (0..mdp.n_pairs())
        .map(|i| {
            let (s, a) = (i / mdp.n_actions(), i % mdp.n_actions());
            let next: f64 = mdp.transition_row(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
            (1.0 - gamma) * reward[i] + gamma * next
        })
        .collect()
}

/// Discounted state visitation `d_pi` and state-action visitation `nu_pi`.
#[derive(Clone, Debug, PartialEq)]
pub struct Visitation {
    pub d: Vec<f64>,
    pub nu: Vec<f64>,
}

/// `d = (1 - gamma) (I - gamma P_pi^T)^{-1} rho`, `nu(s, a) = d(s) pi(a|s)`.
pub fn exact_visitation(mdp: &FiniteEmbeddedMdp, pi: &TabularPolicy) -> Result<Visitation> {
    check_shapes(mdp, pi, None)?;
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    let system = DMatrix::<f64>::identity(n, n) - state_kernel(mdp, pi).transpose() * gamma;
    let rhs = DVector::from_iterator(n, mdp.rho().iter().map(|p| (1.0 - gamma) * p));
    let d = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| GailError::Numerical("visitation system is singular".into()))?;
    let d: Vec<f64> = d.iter().copied().collect();
    let nu = pair_measure(&d, pi);
    Ok(Visitation { d, nu })
}

/// `mu(s) pi(a|s)` flattened over pairs.
pub fn pair_measure(state_measure: &[f64], pi: &TabularPolicy) -> Vec<f64> {
    let n_a = pi.n_actions();
    (0..state_measure.len() * n_a)
        .map(|i| state_measure[i / n_a] * pi.prob(i / n_a, i % n_a))
        .collect()
}

/// Stationary state distribution and its state-action extension.
#[derive(Clone, Debug, PartialEq)]
pub struct Stationary {
    pub varrho: Vec<f64>,
    pub rho_table: Vec<f64>,
}

/// Principal left eigenvector of `P_pi`, normalized to sum 1.
///
/// Fails with [`GailError::Degenerate`] when the second-largest eigenvalue
/// modulus is within `1e-8` of 1.
pub fn exact_stationary(mdp: &FiniteEmbeddedMdp, pi: &TabularPolicy) -> Result<Stationary> {
    check_shapes(mdp, pi, None)?;
    let n = mdp.n_states();
    let kernel = state_kernel(mdp, pi);
    if n > 1 {
        let mut moduli: Vec<f64> = kernel
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .collect();
        moduli.sort_by(|a, b| b.total_cmp(a));
        if moduli[1] >= 1.0 - DEGENERACY_GAP {
            return Err(GailError::Degenerate(moduli[1]));
        }
    }
    // (P^T - I) x = 0 with the last equation replaced by sum(x) = 1.
    let mut system = kernel.transpose() - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        system[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let x = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| GailError::Numerical("stationary system is singular".into()))?;
    // Clamp roundoff negatives and renormalize.
    let mut varrho: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = varrho.iter().sum();
    varrho.iter_mut().for_each(|v| *v /= total);
    let rho_table = pair_measure(&varrho, pi);
    Ok(Stationary { varrho, rho_table })
}

/// `J(pi; r) = E_{s ~ rho}[V(s)]`.
pub fn exact_j(mdp: &FiniteEmbeddedMdp, pi: &TabularPolicy, reward: &[f64]) -> Result<f64> {
    let q = exact_q(mdp, pi, reward)?;
    let v = state_values(mdp, pi, &q);
    Ok(mdp.rho().iter().zip(&v).map(|(p, v)| p * v).sum())
}

/// `|LHS - RHS|` of the cost-difference identity
/// `J(pi_E; r) - J(pi; r) = (1 - gamma)^{-1} E_{d_E}[<Q^pi_r(s, ·), pi_E(·|s) - pi(·|s)>]`.
pub fn cost_difference_residual(
    mdp: &FiniteEmbeddedMdp,
    expert: &TabularPolicy,
    pi: &TabularPolicy,
    reward: &[f64],
) -> Result<f64> {
    let lhs = exact_j(mdp, expert, reward)? - exact_j(mdp, pi, reward)?;
    let q = exact_q(mdp, pi, reward)?;
    let d_e = exact_visitation(mdp, expert)?.d;
    let n_a = mdp.n_actions();
    let inner: f64 = (0..mdp.n_states())
        .map(|s| {
            d_e[s]
                * (0..n_a)
                    .map(|a| q[s * n_a + a] * (expert.prob(s, a) - pi.prob(s, a)))
                    .sum::<f64>()
        })
        .sum();
    let rhs = inner / (1.0 - mdp.gamma());
    Ok((lhs - rhs).abs())
}

/// `KL^mu(pi1 || pi2) = E_{s ~ mu}[KL(pi1(·|s) || pi2(·|s))]`.
pub fn expected_kl(mu: &[f64], pi1: &TabularPolicy, pi2: &TabularPolicy) -> Result<f64> {
    if pi1.n_states() != pi2.n_states()
        || pi1.n_actions() != pi2.n_actions()
        || mu.len() != pi1.n_states()
    {
        return Err(GailError::Dimension("expected_kl shape mismatch".into()));
    }
    let mut total = 0.0;
    for (s, &weight) in mu.iter().enumerate() {
        if weight == 0.0 {
            continue;
        }
        let mut kl = 0.0;
        for a in 0..pi1.n_actions() {
            let p = pi1.prob(s, a);
            if p == 0.0 {
                continue;
            }
            let q = pi2.prob(s, a);
            if q == 0.0 {
                return Err(GailError::Divergence { state: s, action: a });
            }
            kl += p * (p / q).ln();
        }
        total += weight * kl;
    }
    Ok(total.max(0.0))
}

/// Optimal normalized action values by value iteration:
/// `Q*(s, a) = (1 - gamma) r(s, a) + gamma E[max_a' Q*(s', a')]`.
pub fn optimal_q(mdp: &FiniteEmbeddedMdp, reward: &[f64], tol: f64) -> Result<Vec<f64>> {
    if reward.len() != mdp.n_pairs() {
        return Err(GailError::Dimension("reward table shape".into()));
    }
    let n_a = mdp.n_actions();
    let gamma = mdp.gamma();
    let mut q = vec![0.0; mdp.n_pairs()];
    // Contraction: gamma^k * (r_max - r_min) bounds the error; the cap only
    // guards against a non-finite reward.
    for _ in 0..1_000_000 {
        let v: Vec<f64> = q
            .chunks(n_a)
            .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let next: Vec<f64> = (0..mdp.n_pairs())
            .map(|i| {
                let (s, a) = (i / n_a, i % n_a);
                let ev: f64 = mdp.transition_row(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
                (1.0 - gamma) * reward[i] + gamma * ev
            })
            .collect();
        let diff = next
            .iter()
            .zip(&q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        q = next;
        if diff < tol {
            return Ok(q);
        }
        if !diff.is_finite() {
            break;
        }
    }
    Err(GailError::Numerical("value iteration did not converge".into()))
}
