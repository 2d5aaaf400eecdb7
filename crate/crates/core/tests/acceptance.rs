//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Thresholds are fixed constants below.

use std::path::PathBuf;
use std::time::Instant;

use neural_gail::envs;
use neural_gail::experiment::{self, ExperimentSpec};
use neural_gail::gail::{self, RegularizerKind};
use neural_gail::linalg;
use neural_gail::mdp::{random_mdp, total_variation, empirical_pairs, FiniteEmbeddedMdp, TabularPolicy};
use neural_gail::net::{uniform_in_ball, BallConstraint, InitScheme, TwoLayerNet};
use neural_gail::oracle;
use neural_gail::policy::{reward_table_at, EnergyPolicy, RewardNet};
use neural_gail::td::{self, TdConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SCORE_TOL: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-3;
const COST_DIFF_TOL: f64 = 1e-8;
const ORACLE_TOL: f64 = 1e-10;
const VISITATION_TV: f64 = 0.02;
const STATIONARY_TV: f64 = 0.03;
/// Frozen after calibration: observed mean 0.177 at m = 512, T_TD = 2e4.
const TD_ERROR_THRESHOLD: f64 = 0.20;
/// Frozen after calibration: reference seed ratio 0.369.
const TREND_FACTOR: f64 = 0.5;
const MIXED_VALUE_TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = linalg::norm(&linalg::sub(a, b));
    diff / linalg::norm(b).max(1e-12)
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Parameter point with every gate at least `margin` away from flipping.
fn kink_free_point(net: &TwoLayerNet, mdp: &FiniteEmbeddedMdp, radius: f64, margin: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let ball = BallConstraint::new(net.anchor().to_vec(), radius).unwrap();
    loop {
        let w = uniform_in_ball(&ball, rng);
        if mdp.embedded_points().iter().all(|x| net.gate_margin(&w, x) > margin) {
            return w;
        }
    }
}

fn central_diff(w: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = w.to_vec();
    (0..w.len())
        .map(|i| {
            x[i] = w[i] + h;
            let up = f(&x);
            x[i] = w[i] - h;
            let down = f(&x);
            x[i] = w[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn gradient_identities() -> Outcome {
    let (mut worst_score, mut worst_pg, mut worst_rg) = (0.0f64, 0.0f64, 0.0f64);
    for (e, name) in envs::BUNDLED.iter().enumerate() {
        let mdp = envs::by_name(name).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + e as u64);
        let net = TwoLayerNet::init(8, mdp.dim(), InitScheme::Symmetric, &mut rng).unwrap();
        let hidden = experiment::hidden_reward(&mdp, 7);
        let expert = experiment::make_expert(&mdp, &hidden, 0.1, 1e-10).unwrap();
        for _ in 0..20 {
            let theta = kink_free_point(&net, &mdp, 1.0, 1e-3, &mut rng);
            let beta = kink_free_point(&net, &mdp, 1.0, 1e-3, &mut rng);
            let tau = rng.random_range(0.5..2.0);
            let pol = EnergyPolicy::new(net.with_weights(theta.clone()).unwrap(), tau).unwrap();

            // Score: grad log pi = tau * iota.
            for s in 0..mdp.n_states() {
                for a in 0..mdp.n_actions() {
                    let analytic: Vec<f64> = pol.score(&mdp, s, a).unwrap().iter().map(|v| tau * v).collect();
                    let fd = central_diff(&theta, 1e-6, |w| {
                        EnergyPolicy::new(net.with_weights(w.to_vec()).unwrap(), tau)
                            .unwrap()
                            .log_prob(&mdp, s, a)
                            .unwrap()
                    });
                    worst_score = worst_score.max(rel_err(&fd, &analytic));
                }
            }

            // Policy gradient of L = J(pi_E; r) - J(pi_theta; r).
            let reward = reward_table_at(&net, &beta, &mdp);
            let analytic = gail::population_policy_grad(&pol, &mdp, &reward).unwrap();
            let fd = central_diff(&theta, 1e-5, |w| {
                let p = EnergyPolicy::new(net.with_weights(w.to_vec()).unwrap(), tau).unwrap();
                -oracle::exact_j(&mdp, &p.policy_as_table(&mdp).unwrap(), &reward).unwrap()
            });
            worst_pg = worst_pg.max(rel_err(&fd, &analytic));

            // Reward gradient, with the anchor regularizer switched on.
            let lambda = 0.5;
            let pi = pol.policy_as_table(&mdp).unwrap();
            let rew = RewardNet::new(net.with_weights(beta.clone()).unwrap(), mdp.gamma());
            let analytic =
                gail::population_reward_grad(&rew, &mdp, &expert, &pi, lambda, RegularizerKind::L2ToAnchor).unwrap();
            let fd = central_diff(&beta, 1e-5, |w| {
                let r = reward_table_at(&net, w, &mdp);
                let psi = 0.5 * linalg::distance(w, net.anchor()).powi(2);
                oracle::exact_j(&mdp, &expert, &r).unwrap() - oracle::exact_j(&mdp, &pi, &r).unwrap() - lambda * psi
            });
            worst_rg = worst_rg.max(rel_err(&fd, &analytic));
        }
    }
    Outcome {
        pass: worst_score <= SCORE_TOL && worst_pg <= GRAD_TOL && worst_rg <= GRAD_TOL,
        detail: format!(
            "max rel err: score {worst_score:.2e} (tol {SCORE_TOL:.0e}), policy grad {worst_pg:.2e}, reward grad {worst_rg:.2e} (tol {GRAD_TOL:.0e}); 4 envs x 20 points"
        ),
    }
}

fn cost_difference() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let ns = rng.random_range(2..7);
        let na = rng.random_range(2..5);
        let gamma = rng.random_range(0.5..0.99);
        let mdp = random_mdp(ns, na, 3, gamma, 0.05, &mut rng).unwrap();
        let pe = TabularPolicy::random(ns, na, &mut rng);
        let pi = TabularPolicy::random(ns, na, &mut rng);
        let r: Vec<f64> = (0..ns * na).map(|_| StandardNormal.sample(&mut rng)).collect();
        worst = worst.max(oracle::cost_difference_residual(&mdp, &pe, &pi, &r).unwrap().abs());
    }
    Outcome {
        pass: worst <= COST_DIFF_TOL,
        detail: format!("max residual {worst:.2e} over 25 instances (tol {COST_DIFF_TOL:.0e})"),
    }
}

fn oracle_cross_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let (mut worst_j, mut worst_bellman) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let mdp = random_mdp(5, 3, 4, rng.random_range(0.5..0.99), 0.05, &mut rng).unwrap();
        let pi = TabularPolicy::random(5, 3, &mut rng);
        let r: Vec<f64> = (0..15).map(|_| rng.random::<f64>()).collect();
        let nu = oracle::exact_visitation(&mdp, &pi).unwrap().nu;
        let j = oracle::exact_j(&mdp, &pi, &r).unwrap();
        worst_j = worst_j.max((linalg::dot(&nu, &r) - j).abs());
        let q = oracle::exact_q(&mdp, &pi, &r).unwrap();
        let tq = oracle::bellman_operator(&mdp, &pi, &r, &q);
        worst_bellman = worst_bellman.max(q.iter().zip(&tq).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }

    let mdp = random_mdp(3, 2, 3, 0.9, 0.05, &mut rng).unwrap();
    let pi = TabularPolicy::random(3, 2, &mut rng);
    let samples: Vec<_> = (0..200_000).map(|_| mdp.sample_visitation(&pi, &mut rng).unwrap()).collect();
    let tv_visit = total_variation(
        &empirical_pairs(&samples, 3, 2),
        &oracle::exact_visitation(&mdp, &pi).unwrap().nu,
    );

    let mdp = random_mdp(4, 2, 3, 0.9, 0.05, &mut rng).unwrap();
    let pi = TabularPolicy::random(4, 2, &mut rng);
    let samples: Vec<_> = (0..100_000).map(|_| mdp.sample_stationary(&pi, &mut rng, 100).unwrap()).collect();
    let tv_stat = total_variation(
        &empirical_pairs(&samples, 4, 2),
        &oracle::exact_stationary(&mdp, &pi).unwrap().rho_table,
    );

    Outcome {
        pass: worst_j <= ORACLE_TOL && worst_bellman <= ORACLE_TOL && tv_visit <= VISITATION_TV && tv_stat <= STATIONARY_TV,
        detail: format!(
            "|<nu,r> - J| {worst_j:.1e}, Bellman residual {worst_bellman:.1e} (tol {ORACLE_TOL:.0e}); TV visitation {tv_visit:.4} (n=2e5, tol {VISITATION_TV}), TV stationary {tv_stat:.4} (n=1e5, tol {STATIONARY_TV})"
        ),
    }
}

/// Mean weighted TD error over 10 seeds. Each seed fixes both the network
/// initialization and the sample path, shared across widths.
fn td_error_mean(mdp: &FiniteEmbeddedMdp, pi: &TabularPolicy, reward: &[f64], m: usize, t_td: usize) -> f64 {
    let errs: Vec<f64> = (0..10u64)
        .map(|s| {
            let net = TwoLayerNet::init(m, mdp.dim(), InitScheme::Symmetric, &mut ChaCha8Rng::seed_from_u64(1000 + s))
                .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + s);
            let cfg = TdConfig {
                t_td,
                b_omega: 4.0,
                ..TdConfig::default()
            };
            let out = td::neural_td(mdp, pi, reward, &net, &cfg, &mut rng).unwrap();
            td::weighted_q_error(mdp, pi, reward, &out.critic).unwrap()
        })
        .collect();
    errs.iter().sum::<f64>() / errs.len() as f64
}

fn neural_td_convergence() -> Outcome {
    let mdp = envs::chain4().unwrap();
    assert_eq!(mdp.gamma(), 0.9);
    let reward = experiment::hidden_reward(&mdp, 11);
    let pi = TabularPolicy::random(4, 2, &mut ChaCha8Rng::seed_from_u64(12));
    let by_m: Vec<f64> = [64, 128, 256, 512].iter().map(|&m| td_error_mean(&mdp, &pi, &reward, m, 20_000)).collect();
    let by_t: Vec<f64> = [100, 1_000, 10_000].iter().map(|&t| td_error_mean(&mdp, &pi, &reward, 512, t)).collect();
    let mono_m = by_m.windows(2).all(|w| w[1] <= w[0]);
    let mono_t = by_t.windows(2).all(|w| w[1] <= w[0]);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join(", ");
    Outcome {
        pass: by_m[3] < TD_ERROR_THRESHOLD && mono_m && mono_t,
        detail: format!(
            "error at m=512, T=2e4: {:.4} (threshold {TD_ERROR_THRESHOLD}); by m [64..512]: [{}]; by T_TD [1e2,1e3,1e4]: [{}]",
            by_m[3],
            fmt(&by_m),
            fmt(&by_t)
        ),
    }
}

fn linearization_scaling() -> Outcome {
    let mdp = envs::grid3x3().unwrap();
    let points = mdp.embedded_points();
    let rows = experiment::probe_scaling(&points, mdp.dim(), &[64, 256, 1024, 4096], 1.0, 20, 200, 7).unwrap();
    let gaps: Vec<f64> = rows.iter().map(|r| r.mean_gap).collect();
    Outcome {
        pass: gaps.windows(2).all(|w| w[1] < w[0]),
        detail: format!(
            "mean gap by m [64, 256, 1024, 4096]: [{}]",
            gaps.iter().map(|g| format!("{g:.5}")).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn gail_trend() -> Outcome {
    let base = ExperimentSpec::load(configs_dir().join("grid3x3.toml")).unwrap();
    let mut lines = Vec::new();
    let mut pass = true;
    for seed in 0..=5u64 {
        let mut spec = base.clone();
        spec.gail.seed = seed;
        let out = experiment::compute_experiment(&spec).unwrap();
        let s = &out.summary;
        let ratio_ok = s.convergence.last_quarter_mean <= TREND_FACTOR * s.convergence.first_quarter_mean;
        let rd_ok = s.r_distance_mixed >= 0.0 && s.r_distance_mixed <= s.r_distance_initial;
        // Seed 0 calibrated the factor; seeds 1..5 are the ones required.
        if seed > 0 {
            pass &= ratio_ok && rd_ok;
        }
        lines.push(format!(
            "seed {seed}{}: ratio {:.3}, D {:.4} vs D0 {:.4}",
            if seed == 0 { " (ref)" } else { "" },
            s.gap_ratio,
            s.r_distance_mixed,
            s.r_distance_initial
        ));
    }
    Outcome {
        pass,
        detail: format!("factor {TREND_FACTOR}; {}", lines.join("; ")),
    }
}

fn structural_invariants() -> Outcome {
    let mut spec = ExperimentSpec::load(configs_dir().join("chain4_quick.toml")).unwrap();
    spec.gail.eta = Some(0.1);
    spec.gail.b_beta = 0.3;
    let out = experiment::compute_experiment(&spec).unwrap();
    let eta = spec.gail.eta();
    let tau_ok = out.run.metrics.iter().all(|r| r.tau == r.k as f64 * eta)
        && out.run.mixed.components.iter().enumerate().all(|(k, c)| c.tau() == k as f64 * eta);
    let beta_ok = out.run.beta_distances.iter().all(|d| *d <= spec.gail.b_beta * (1.0 + 1e-12));

    // Fisher estimates are PSD.
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let mdp = envs::grid3x3().unwrap();
    let net = TwoLayerNet::init(16, mdp.dim(), InitScheme::Symmetric, &mut rng).unwrap();
    let ball = BallConstraint::new(net.anchor().to_vec(), 2.0).unwrap();
    let mut min_quad = f64::INFINITY;
    for _ in 0..10 {
        let pol = EnergyPolicy::new(net.with_weights(uniform_in_ball(&ball, &mut rng)).unwrap(), rng.random_range(0.0..4.0)).unwrap();
        let pi = pol.policy_as_table(&mdp).unwrap();
        let batch: Vec<_> = (0..64).map(|_| mdp.sample_visitation(&pi, &mut rng).unwrap()).collect();
        let f = gail::estimate_fisher(&pol, &mdp, &batch).unwrap();
        for _ in 0..20 {
            let v: Vec<f64> = (0..net.n_params()).map(|_| StandardNormal.sample(&mut rng)).collect();
            min_quad = min_quad.min(linalg::dot(&v, &f.apply(&v)));
        }
    }

    // Mixed value is the mean of component values.
    let setup = experiment::prepare(&spec).unwrap();
    let r = experiment::hidden_reward(&setup.mdp, 99);
    let mixed = gail::mixed_policy_value(&out.run.mixed, &setup.mdp, &r).unwrap();
    let values: Vec<f64> = out
        .run
        .mixed
        .components
        .iter()
        .map(|c| oracle::exact_j(&setup.mdp, &c.policy_as_table(&setup.mdp).unwrap(), &r).unwrap())
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mixed_err = (mixed - mean).abs();

    // Bitwise reproducibility of the written artifacts.
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        experiment::run_experiment(&spec, d.path()).unwrap();
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join(experiment::METRICS_CSV)).unwrap();
    let bitwise = read(&dirs[0]) == read(&dirs[1]);

    Outcome {
        pass: tau_ok && beta_ok && min_quad >= -1e-10 && mixed_err <= MIXED_VALUE_TOL && bitwise,
        detail: format!(
            "tau_k = k*eta: {tau_ok}; beta in ball: {beta_ok}; min v'Iv {min_quad:.2e}; |J(mix) - mean| {mixed_err:.1e}; metrics.csv bitwise identical: {bitwise}"
        ),
    }
}

fn main() {
    // `cargo test` passes harness flags; a name filter selects criteria.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("1 gradient identities", gradient_identities),
        ("2 cost-difference identity", cost_difference),
        ("3 oracle cross-checks", oracle_cross_checks),
        ("4 neural TD convergence", neural_td_convergence),
        ("5 linearization scaling", linearization_scaling),
        ("6 GAIL convergence trend", gail_trend),
        ("7 structural invariants", structural_invariants),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{status} [{name}] {} ({:.1}s)", outcome.detail, start.elapsed().as_secs_f64());
        if !outcome.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
