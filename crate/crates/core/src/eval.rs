//! R-distance over the neural reward ball and convergence summaries.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GailError, Result};
use crate::gail::{MetricsRow, MixedPolicy};
use crate::linalg;
use crate::mdp::{FiniteEmbeddedMdp, TabularPolicy};
use crate::net::{project_ball, uniform_in_ball, BallConstraint, TwoLayerNet};
use crate::oracle;
use crate::par;

/// Projected-ascent steps per restart.
pub const PGA_STEPS: usize = 500;
/// Base stepsize; step `i` (1-based) uses `PGA_STEP / sqrt(i)`.
pub const PGA_STEP: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RDistanceReport {
    /// Best value over all restarts of projected gradient ascent.
    pub value_pga: f64,
    /// Closed-form maximum of the objective with features frozen at `W_0`.
    pub value_linearized: f64,
    pub argmax_beta: Vec<f64>,
    pub n_restarts: usize,
    pub b_beta: f64,
    /// Best value reached by each restart, in restart order.
    pub restart_values: Vec<f64>,
}

/// `f(beta) = (1 - gamma)^{-1} <nu_E - nu_bar, u_beta>` and its gradient,
/// given the measure difference `diff = nu_E - nu_bar`.
pub struct RewardGapObjective<'a> {
    net: &'a TwoLayerNet,
    points: Vec<&'a [f64]>,
    diff: Vec<f64>,
    scale: f64,
}

impl<'a> RewardGapObjective<'a> {
    pub fn new(mdp: &'a FiniteEmbeddedMdp, net: &'a TwoLayerNet, diff: Vec<f64>) -> Self {
        Self {
            net,
            points: mdp.embedded_points(),
            diff,
            scale: 1.0 / (1.0 - mdp.gamma()),
        }
    }

    pub fn value(&self, beta: &[f64]) -> f64 {
        self.scale
            * self
                .points
                .iter()
                .zip(&self.diff)
                .map(|(x, d)| if *d == 0.0 { 0.0 } else { d * self.net.eval_at(beta, x) })
                .sum::<f64>()
    }

    pub fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; beta.len()];
        let mut phi = vec![0.0; beta.len()];
        for (x, d) in self.points.iter().zip(&self.diff) {
            if *d != 0.0 {
                self.net.features_at_into(beta, x, &mut phi);
                linalg::axpy(self.scale * d, &phi, &mut g);
            }
        }
        g
    }

    /// Best point along a projected-ascent path from `start`.
    pub fn ascend(&self, start: Vec<f64>, ball: &BallConstraint) -> (f64, Vec<f64>) {
        let mut beta = start;
        let mut best = (self.value(&beta), beta.clone());
        for i in 1..=PGA_STEPS {
            let g = self.gradient(&beta);
            linalg::axpy(PGA_STEP / (i as f64).sqrt(), &g, &mut beta);
            beta = project_ball(&beta, ball);
            let v = self.value(&beta);
            if v > best.0 {
                best = (v, beta.clone());
            }
        }
        best
    }
}

/// Estimates `max_{beta in S_B} J(pi_E; r_beta) - J(pi_bar; r_beta)`.
///
/// Restart 0 starts at `W_0`, the others at uniform ball points drawn from
/// `rng` in order. Restarts run in parallel; ties go to the lowest index.
pub fn r_distance<R: Rng + ?Sized>(
    mdp: &FiniteEmbeddedMdp,
    expert: &TabularPolicy,
    mp: &MixedPolicy,
    b_beta: f64,
    init: &TwoLayerNet,
    n_restarts: usize,
    rng: &mut R,
) -> Result<RDistanceReport> {
    let nu_bar = mp.visitation(mdp)?;
    r_distance_to_measure(mdp, expert, &nu_bar, b_beta, init, n_restarts, rng)
}

/// As [`r_distance`], with the learner given by its visitation measure.
pub fn r_distance_to_measure<R: Rng + ?Sized>(
    mdp: &FiniteEmbeddedMdp,
    expert: &TabularPolicy,
    learner_nu: &[f64],
    b_beta: f64,
    init: &TwoLayerNet,
    n_restarts: usize,
    rng: &mut R,
) -> Result<RDistanceReport> {
    if n_restarts == 0 {
        return Err(GailError::Config("n_restarts must be >= 1".into()));
    }
    if learner_nu.len() != mdp.n_pairs() {
        return Err(GailError::Dimension("learner measure shape".into()));
    }
    let nu_e = oracle::exact_visitation(mdp, expert)?.nu;
    let diff = linalg::sub(&nu_e, learner_nu);
    let objective = RewardGapObjective::new(mdp, init, diff);
    let ball = BallConstraint::new(init.anchor().to_vec(), b_beta)?;

    let mut starts = vec![init.anchor().to_vec()];
    for _ in 1..n_restarts {
        starts.push(uniform_in_ball(&ball, rng));
    }
    let results = par::map(&starts, |s| objective.ascend(s.clone(), &ball));
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.0 > results[best].0 {
            best = i;
        }
    }

    let f0 = objective.value(init.anchor());
    let g0 = objective.gradient(init.anchor());
    let g_norm = linalg::norm(&g0);
    let value_linearized = if g_norm > 0.0 { b_beta * g_norm + f0 } else { f0 };

    Ok(RDistanceReport {
        value_pga: results[best].0,
        value_linearized,
        argmax_beta: results[best].1.clone(),
        n_restarts,
        b_beta,
        restart_values: results.iter().map(|r| r.0).collect(),
    })
}

/// Maximizer of the frozen-feature objective over the ball.
pub fn linearized_argmax(
    mdp: &FiniteEmbeddedMdp,
    expert_nu: &[f64],
    learner_nu: &[f64],
    b_beta: f64,
    init: &TwoLayerNet,
) -> Vec<f64> {
    let objective = RewardGapObjective::new(mdp, init, linalg::sub(expert_nu, learner_nu));
    let g = objective.gradient(init.anchor());
    let n = linalg::norm(&g);
    let mut beta = init.anchor().to_vec();
    if n > 0.0 {
        linalg::axpy(b_beta / n, &g, &mut beta);
    }
    beta
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub n_iterations: usize,
    /// Mean of `J_E_r - J_pi_r` over the first `n / 4` iterations.
    pub first_quarter_mean: f64,
    /// Mean over the last `n / 4` iterations.
    pub last_quarter_mean: f64,
    pub min_gap: f64,
    pub argmin_gap: usize,
    pub final_kl_to_expert: f64,
    pub total_ball_violations: usize,
}

impl ConvergenceSummary {
    pub fn ratio(&self) -> f64 {
        self.last_quarter_mean / self.first_quarter_mean
    }
}

pub fn convergence_summary(metrics: &[MetricsRow]) -> Result<ConvergenceSummary> {
    let gaps: Vec<f64> = metrics.iter().map(MetricsRow::gap).collect();
    let mut s = summarize_series(&gaps)?;
    s.final_kl_to_expert = metrics.last().map_or(f64::NAN, |r| r.kl_to_expert);
    s.total_ball_violations = metrics.last().map_or(0, |r| r.ball_violations);
    Ok(s)
}

/// Quarter means and minimum of an arbitrary series.
pub fn summarize_series(values: &[f64]) -> Result<ConvergenceSummary> {
    let n = values.len();
    if n < 8 {
        return Err(GailError::TooFewIterations { need: 8, got: n });
    }
    let q = n / 4;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mut argmin = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[argmin] {
            argmin = i;
        }
    }
    Ok(ConvergenceSummary {
        n_iterations: n,
        first_quarter_mean: mean(&values[..q]),
        last_quarter_mean: mean(&values[n - q..]),
        min_gap: values[argmin],
        argmin_gap: argmin,
        final_kl_to_expert: f64::NAN,
        total_ball_violations: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random_mdp;
    use crate::net::InitScheme;
    use crate::policy::EnergyPolicy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64, m: usize) -> (FiniteEmbeddedMdp, TwoLayerNet, TabularPolicy, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(3, 2, 3, 0.8, 0.05, &mut rng).unwrap();
        let net = TwoLayerNet::init(m, 3, InitScheme::Symmetric, &mut rng).unwrap();
        let expert = TabularPolicy::random(3, 2, &mut rng);
        (mdp, net, expert, rng)
    }

    fn uniform_mixture(net: &TwoLayerNet) -> MixedPolicy {
        MixedPolicy::new(vec![EnergyPolicy::new(net.clone(), 0.0).unwrap()]).unwrap()
    }

    #[test]
    fn identical_measures_give_zero() {
        let (mdp, net, _, mut rng) = instance(1, 8);
        let pe = TabularPolicy::uniform(3, 2);
        let rep = r_distance(&mdp, &pe, &uniform_mixture(&net), 1.0, &net, 4, &mut rng).unwrap();
        assert!(rep.value_pga.abs() <= 1e-6);
        assert!(rep.value_linearized.abs() <= 1e-6);
    }

    #[test]
    fn zero_radius_gives_zero() {
        let (mdp, net, pe, mut rng) = instance(2, 8);
        let rep = r_distance(&mdp, &pe, &uniform_mixture(&net), 0.0, &net, 3, &mut rng).unwrap();
        assert_eq!(rep.value_pga, 0.0);
        assert_eq!(rep.value_linearized, 0.0);
        assert_eq!(rep.argmax_beta, net.anchor());
    }

    #[test]
    fn pga_is_max_over_restarts_and_nonnegative() {
        let (mdp, net, pe, mut rng) = instance(3, 8);
        let rep = r_distance(&mdp, &pe, &uniform_mixture(&net), 1.0, &net, 5, &mut rng).unwrap();
        assert!(rep.restart_values.iter().all(|v| *v <= rep.value_pga));
        assert!(rep.value_pga >= -1e-9);
        assert_eq!(rep.restart_values.len(), 5);
        assert!(linalg::distance(&rep.argmax_beta, net.anchor()) <= 1.0 + 1e-12);
    }

    #[test]
    fn objective_matches_exact_values() {
        let (mdp, net, pe, mut rng) = instance(4, 8);
        let ball = BallConstraint::new(net.anchor().to_vec(), 1.0).unwrap();
        let mp = uniform_mixture(&net);
        let diff = linalg::sub(
            &oracle::exact_visitation(&mdp, &pe).unwrap().nu,
            &mp.visitation(&mdp).unwrap(),
        );
        let obj = RewardGapObjective::new(&mdp, &net, diff);
        for _ in 0..5 {
            let beta = uniform_in_ball(&ball, &mut rng);
            let r = crate::policy::reward_table_at(&net, &beta, &mdp);
            let exact = oracle::exact_j(&mdp, &pe, &r).unwrap()
                - crate::gail::mixed_policy_value(&mp, &mdp, &r).unwrap();
            assert!((obj.value(&beta) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn linearized_degenerate_gradient_returns_anchor() {
        let (mdp, net, _, _) = instance(5, 8);
        let nu = vec![1.0 / 6.0; 6];
        assert_eq!(linearized_argmax(&mdp, &nu, &nu, 2.0, &net), net.anchor());
    }

    #[test]
    fn summary_examples() {
        let s = summarize_series(&[0.3; 12]).unwrap();
        assert_eq!(s.first_quarter_mean, s.last_quarter_mean);
        let dec: Vec<f64> = (0..12).map(|i| 1.0 - i as f64 * 0.05).collect();
        let s = summarize_series(&dec).unwrap();
        assert!(s.last_quarter_mean < s.first_quarter_mean);
        assert_eq!(s.argmin_gap, 11);
        assert!(matches!(
            summarize_series(&[1.0; 7]),
            Err(GailError::TooFewIterations { need: 8, got: 7 })
        ));
    }
}
