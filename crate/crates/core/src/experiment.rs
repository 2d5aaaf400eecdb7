//! Experiment specification, expert construction, and artifact emission.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs;
use crate::error::{GailError, Result};
use crate::eval::{self, ConvergenceSummary, RDistanceReport};
use crate::gail::{self, GailConfig, GailRun, MixedPolicy};
use crate::mdp::{self, FiniteEmbeddedMdp, RandomMdpParams, TabularPolicy};
use crate::net::{linearization_probe, InitScheme, NetCheckpoint, TwoLayerNet};
use crate::oracle;
use crate::par;
use crate::policy::{softmax, EnergyPolicy};

/// Environment variable naming the root for relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "GAIL_OUTPUT_ROOT";

pub const CONFIG_ECHO: &str = "config.toml";
pub const METRICS_CSV: &str = "metrics.csv";
pub const RDISTANCE_JSON: &str = "rdistance.json";
pub const SUMMARY_JSON: &str = "summary.json";
pub const CHECKPOINT_JSON: &str = "checkpoint.json";

/// Where the MDP comes from; exactly one source must be set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundled: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<RandomMdpParams>,
    /// Overrides the discount of the loaded MDP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl MdpSource {
    pub fn bundled(name: &str) -> Self {
        Self {
            bundled: Some(name.into()),
            ..Self::default()
        }
    }

    /// Relative paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<FiniteEmbeddedMdp> {
        let set = [self.bundled.is_some(), self.path.is_some(), self.generator.is_some()];
        if set.iter().filter(|b| **b).count() != 1 {
            return Err(GailError::Config(
                "mdp: set exactly one of `bundled`, `path`, `generator`".into(),
            ));
        }
        let mdp = if let Some(name) = &self.bundled {
            envs::by_name(name)?
        } else if let Some(p) = &self.path {
            let full = base_dir.join(p);
            let text = fs::read_to_string(&full)
                .map_err(|e| GailError::Config(format!("cannot read MDP file {}: {e}", full.display())))?;
            FiniteEmbeddedMdp::from_json(&text)?
        } else {
            let g = self.generator.as_ref().expect("checked above");
            if !(0.0..=1.0).contains(&g.mixing) {
                return Err(GailError::Config(format!("mixing must lie in [0, 1], got {}", g.mixing)));
            }
            if g.n_states == 0 || g.n_actions == 0 || g.d == 0 {
                return Err(GailError::Config("generator sizes must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
            mdp::random_mdp(g.n_states, g.n_actions, g.d, g.gamma, g.mixing, &mut rng)
                .map_err(|e| GailError::Config(e.to_string()))?
        };
        match self.gamma {
            Some(gamma) => mdp.with_gamma(gamma).map_err(|e| GailError::Config(e.to_string())),
            None => Ok(mdp),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertSpec {
    /// Seed of the hidden reward, uniform on `[0, 1]` per pair.
    #[serde(default)]
    pub reward_seed: u64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_vi_tol")]
    pub vi_tol: f64,
    /// Number of expert visitation samples `T_E`.
    #[serde(default = "default_t_e")]
    pub t_e: usize,
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
}

fn default_temperature() -> f64 {
    0.02
}
fn default_vi_tol() -> f64 {
    1e-10
}
fn default_t_e() -> usize {
    10_000
}
fn default_data_seed() -> u64 {
    1
}

impl Default for ExpertSpec {
    fn default() -> Self {
        Self {
            reward_seed: 0,
            temperature: default_temperature(),
            vi_tol: default_vi_tol(),
            t_e: default_t_e(),
            data_seed: default_data_seed(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    #[serde(default = "default_restarts")]
    pub n_restarts: usize,
    /// Reward-ball radii for the R-distance; empty means `[gail.b_beta]`.
    #[serde(default)]
    pub b_beta_grid: Vec<f64>,
}

fn default_restarts() -> usize {
    4
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            n_restarts: default_restarts(),
            b_beta_grid: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub mdp: MdpSource,
    #[serde(default)]
    pub expert: ExpertSpec,
    #[serde(default)]
    pub gail: GailConfig,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Directory that relative paths in the config resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_name() -> String {
    "experiment".into()
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| GailError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut spec = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)?
        } else {
            Self::from_toml_str(&text)?
        };
        spec.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(spec)
    }

    pub fn radii(&self) -> Vec<f64> {
        if self.eval.b_beta_grid.is_empty() {
            vec![self.gail.b_beta]
        } else {
            self.eval.b_beta_grid.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gail.validate()?;
        let e = &self.expert;
        if !(e.temperature > 0.0) || !e.temperature.is_finite() {
            return Err(GailError::Config(format!("expert temperature must be > 0, got {}", e.temperature)));
        }
        if !(e.vi_tol > 0.0) {
            return Err(GailError::Config("expert vi_tol must be > 0".into()));
        }
        if e.t_e == 0 {
            return Err(GailError::Config("expert t_e must be >= 1".into()));
        }
        if self.eval.n_restarts == 0 {
            return Err(GailError::Config("eval n_restarts must be >= 1".into()));
        }
        if self.radii().iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(GailError::Config("eval radii must be >= 0".into()));
        }
        Ok(())
    }

    /// Copy with every default written out, suitable as a config echo.
    pub fn resolved(&self, gamma: f64) -> Self {
        let mut out = self.clone();
        out.gail = self.gail.resolved(gamma);
        out.eval.b_beta_grid = self.radii();
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Flag overrides; `None` keeps the file value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub t: Option<usize>,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, spec: &mut ExperimentSpec) {
        if let Some(s) = self.seed {
            spec.gail.seed = s;
        }
        if let Some(t) = self.t {
            spec.gail.t = t;
        }
        if let Some(m) = self.m {
            spec.gail.m = m;
        }
        if let Some(n) = self.n {
            spec.gail.n = n;
        }
        if let Some(o) = &self.out {
            spec.output_dir = Some(o.clone());
        }
    }
}

/// Output directory: the configured one (or `runs/<name>-seed<seed>`), with relative
/// paths placed under `root` when given.
pub fn resolve_output_dir(spec: &ExperimentSpec, root: Option<&Path>) -> PathBuf {
    let dir = spec
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-seed{}", spec.name, spec.gail.seed)));
    match root {
        Some(r) if dir.is_relative() => r.join(dir),
        _ => dir,
    }
}

/// Hidden reward: i.i.d. uniform on `[0, 1]` per pair.
pub fn hidden_reward(mdp: &FiniteEmbeddedMdp, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..mdp.n_pairs()).map(|_| rng.random::<f64>()).collect()
}

/// Value iteration on the hidden reward, then `softmax(Q* / temp)` per state.
pub fn make_expert(mdp: &FiniteEmbeddedMdp, hidden_reward: &[f64], temp: f64, tol: f64) -> Result<TabularPolicy> {
    if !(temp > 0.0) {
        return Err(GailError::Config(format!("temperature must be > 0, got {temp}")));
    }
    let q = oracle::optimal_q(mdp, hidden_reward, tol)?;
    let probs: Vec<f64> = q
        .chunks(mdp.n_actions())
        .flat_map(|row| softmax(row, 1.0 / temp))
        .collect();
    TabularPolicy::new(mdp.n_states(), mdp.n_actions(), probs)
}

/// MDP, expert, and expert data for a spec.
#[derive(Clone, Debug)]
pub struct Setup {
    pub mdp: FiniteEmbeddedMdp,
    pub hidden_reward: Vec<f64>,
    pub expert: TabularPolicy,
    pub expert_data: Vec<(usize, usize)>,
}

pub fn prepare(spec: &ExperimentSpec) -> Result<Setup> {
    spec.validate()?;
    let mdp = spec.mdp.build(&spec.base_dir)?;
    let e = &spec.expert;
    let hidden = hidden_reward(&mdp, e.reward_seed);
    let expert = make_expert(&mdp, &hidden, e.temperature, e.vi_tol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(e.data_seed);
    let expert_data = mdp::generate_expert_trajectory(&mdp, &expert, e.t_e, &mut rng)?;
    Ok(Setup {
        mdp,
        hidden_reward: hidden,
        expert,
        expert_data,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub tau: f64,
    pub theta: Vec<f64>,
}

/// Everything needed to rebuild the mixed policy and the final reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunCheckpoint {
    pub format: String,
    pub version: u32,
    /// Shared initialization; `w` holds `W_0`.
    pub init: NetCheckpoint,
    pub components: Vec<PolicySnapshot>,
    pub beta: Vec<f64>,
    pub omega: Vec<f64>,
}

impl RunCheckpoint {
    pub const FORMAT: &'static str = "gail-run";
    pub const VERSION: u32 = 1;

    pub fn from_run(run: &GailRun) -> Self {
        Self {
            format: Self::FORMAT.into(),
            version: Self::VERSION,
            init: run.init.at_anchor().to_checkpoint(),
            components: run
                .mixed
                .components
                .iter()
                .map(|c| PolicySnapshot {
                    tau: c.tau(),
                    theta: c.theta().to_vec(),
                })
                .collect(),
            beta: run.state.beta.clone(),
            omega: run.state.omega.clone(),
        }
    }

    pub fn init_net(&self) -> Result<TwoLayerNet> {
        TwoLayerNet::from_checkpoint(self.init.clone())
    }

    pub fn mixed_policy(&self) -> Result<MixedPolicy> {
        let init = self.init_net()?;
        let comps = self
            .components
            .iter()
            .map(|c| EnergyPolicy::new(init.with_weights(c.theta.clone())?, c.tau))
            .collect::<Result<Vec<_>>>()?;
        MixedPolicy::new(comps)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| GailError::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.format != Self::FORMAT || ck.version != Self::VERSION {
            return Err(GailError::Config(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        Ok(ck)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RDistanceFile {
    /// Learned mixed policy, one report per radius.
    pub mixed: Vec<RDistanceReport>,
    /// The iteration-0 (uniform) policy, for reference.
    pub initial: Vec<RDistanceReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub convergence: ConvergenceSummary,
    /// `first / last` quarter gap ratio.
    pub gap_ratio: f64,
    pub r_distance_mixed: f64,
    pub r_distance_initial: f64,
    pub expert_hidden_value: f64,
    pub mixed_hidden_value: f64,
}

/// Computed results of one experiment, before anything is written.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub resolved: ExperimentSpec,
    pub run: GailRun,
    pub rdistance: RDistanceFile,
    pub summary: RunSummary,
}

/// R-distance of the mixed policy and of the uniform policy for each radius.
pub fn evaluate_mixed(
    setup: &Setup,
    mixed: &MixedPolicy,
    init: &TwoLayerNet,
    radii: &[f64],
    n_restarts: usize,
    seed: u64,
) -> Result<RDistanceFile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0e7a_1u64);
    let uniform = MixedPolicy::new(vec![EnergyPolicy::new(init.at_anchor(), 0.0)?])?;
    let mut out = RDistanceFile {
        mixed: Vec::new(),
        initial: Vec::new(),
    };
    for &b in radii {
        out.mixed
            .push(eval::r_distance(&setup.mdp, &setup.expert, mixed, b, init, n_restarts, &mut rng)?);
        out.initial
            .push(eval::r_distance(&setup.mdp, &setup.expert, &uniform, b, init, n_restarts, &mut rng)?);
    }
    Ok(out)
}

/// Runs the experiment without touching the filesystem.
pub fn compute_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let setup = prepare(spec)?;
    let resolved = spec.resolved(setup.mdp.gamma());
    let run = gail::run_gail_seeded(&setup.mdp, &setup.expert_data, Some(&setup.expert), &spec.gail)?;
    let radii = spec.radii();
    let rdistance = evaluate_mixed(&setup, &run.mixed, &run.init, &radii, spec.eval.n_restarts, spec.gail.seed)?;
    let convergence = eval::convergence_summary(&run.metrics).or_else(|e| match e {
        // Short runs still get a summary of what exists.
        GailError::TooFewIterations { .. } => Ok(short_summary(&run.metrics)),
        other => Err(other),
    })?;
    let summary = RunSummary {
        name: spec.name.clone(),
        seed: spec.gail.seed,
        gap_ratio: convergence.ratio(),
        convergence,
        r_distance_mixed: rdistance.mixed[0].value_pga,
        r_distance_initial: rdistance.initial[0].value_pga,
        expert_hidden_value: oracle::exact_j(&setup.mdp, &setup.expert, &setup.hidden_reward)?,
        mixed_hidden_value: gail::mixed_policy_value(&run.mixed, &setup.mdp, &setup.hidden_reward)?,
    };
    Ok(ExperimentOutcome {
        resolved,
        run,
        rdistance,
        summary,
    })
}

fn short_summary(metrics: &[gail::MetricsRow]) -> ConvergenceSummary {
    let gaps: Vec<f64> = metrics.iter().map(gail::MetricsRow::gap).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len().max(1) as f64;
    let (argmin, min) = gaps
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
    ConvergenceSummary {
        n_iterations: gaps.len(),
        first_quarter_mean: mean,
        last_quarter_mean: mean,
        min_gap: min,
        argmin_gap: argmin,
        final_kl_to_expert: metrics.last().map_or(f64::NAN, |r| r.kl_to_expert),
        total_ball_violations: metrics.last().map_or(0, |r| r.ball_violations),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes the five artifacts into `dir`.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_ECHO), outcome.resolved.to_toml()?)?;
    let file = fs::File::create(dir.join(METRICS_CSV))?;
    gail::write_metrics_csv(&outcome.run.metrics, std::io::BufWriter::new(file))?;
    fs::write(dir.join(RDISTANCE_JSON), to_json(&outcome.rdistance)?)?;
    fs::write(dir.join(SUMMARY_JSON), to_json(&outcome.summary)?)?;
    fs::write(dir.join(CHECKPOINT_JSON), serde_json::to_string(&RunCheckpoint::from_run(&outcome.run))?)?;
    Ok(())
}

/// Computes everything first and writes only on success, so a failed run
/// leaves no partial outputs.
pub fn run_experiment(spec: &ExperimentSpec, dir: &Path) -> Result<ExperimentOutcome> {
    let outcome = compute_experiment(spec)?;
    write_outputs(&outcome, dir)?;
    Ok(outcome)
}

/// Parses `seeds=a..b` (inclusive).
pub fn parse_sweep(arg: &str) -> Result<Vec<u64>> {
    let bad = || GailError::Config(format!("sweep must look like seeds=a..b, got '{arg}'"));
    let range = arg.strip_prefix("seeds=").ok_or_else(bad)?;
    let (a, b) = range.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if b < a {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

/// Runs one isolated experiment per seed, in parallel, each in
/// `<dir>/seed-<s>`. Results are returned in seed order.
pub fn run_sweep(spec: &ExperimentSpec, seeds: &[u64], dir: &Path) -> Vec<(u64, Result<RunSummary>)> {
    par::map(seeds, |&seed| {
        let mut s = spec.clone();
        s.gail.seed = seed;
        let out = dir.join(format!("seed-{seed}"));
        (seed, run_experiment(&s, &out).map(|o| o.summary))
    })
}

/// R-distance of a saved run under the configured MDP and expert.
pub fn eval_checkpoint(spec: &ExperimentSpec, ck: &RunCheckpoint) -> Result<RDistanceFile> {
    let setup = prepare(spec)?;
    let init = ck.init_net()?;
    if init.dim() != setup.mdp.dim() {
        return Err(GailError::Config(format!(
            "checkpoint input dimension {} does not match the MDP embedding dimension {}",
            init.dim(),
            setup.mdp.dim()
        )));
    }
    let mixed = ck.mixed_policy()?;
    evaluate_mixed(&setup, &mixed, &init, &spec.radii(), spec.eval.n_restarts, spec.gail.seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub m: usize,
    pub mean_gap: f64,
    pub std_err: f64,
}

/// Linearization gap at radius `radius` for each width, averaged over
/// `n_seeds` symmetric initializations (seed `base_seed + i`).
pub fn probe_scaling(
    points: &[&[f64]],
    dim: usize,
    widths: &[usize],
    radius: f64,
    n_seeds: usize,
    n_inputs: usize,
    base_seed: u64,
) -> Result<Vec<ProbeRow>> {
    if n_seeds == 0 {
        return Err(GailError::Config("probe needs at least one seed".into()));
    }
    widths
        .iter()
        .map(|&m| {
            let gaps = par::map_range(n_seeds, |i| -> Result<f64> {
                let mut rng = ChaCha8Rng::seed_from_u64(base_seed + i as u64);
                let net = TwoLayerNet::init(m, dim, InitScheme::Symmetric, &mut rng)?;
                linearization_probe(&net, radius, points, n_inputs, &mut rng)
            })
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;
            let n = gaps.len() as f64;
            let mean = gaps.iter().sum::<f64>() / n;
            let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            Ok(ProbeRow {
                m,
                mean_gap: mean,
                std_err: (var / n).sqrt(),
            })
        })
        .collect()
}
