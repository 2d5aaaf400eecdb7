//! Two-layer ReLU network with frozen output signs.
//!
//! `u_W(x) = m^{-1/2} sum_l b_l 1{x^T W_l > 0} x^T W_l = W^T phi_W(x)`, where
//! `W` is a flat vector of `m` blocks of length `d`. The signs `b` and the
//! initialization `W_0` are fixed at construction and shared (by `Arc`)
//! between every network cloned from the same init.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GailError, Result};
use crate::linalg;

static WARNED_INPUT_NORM: AtomicBool = AtomicBool::new(false);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// `b_l ~ Unif{-1, 1}`, `W_0,l ~ N(0, I/d)` independently.
    Standard,
    /// Second half mirrors the first with flipped signs, so `u_{W_0} = 0`.
    #[default]
    Symmetric,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerNet {
    width: usize,
    dim: usize,
    signs: Arc<[f64]>,
    anchor: Arc<[f64]>,
    weights: Vec<f64>,
}

impl TwoLayerNet {
    pub fn init<R: Rng + ?Sized>(width: usize, dim: usize, scheme: InitScheme, rng: &mut R) -> Result<Self> {
        if width == 0 || dim == 0 {
            return Err(GailError::Config("network width and input dim must be positive".into()));
        }
        let normal = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("valid std");
        let draw_sign = |rng: &mut R| if rng.random::<bool>() { 1.0 } else { -1.0 };
        let (signs, anchor) = match scheme {
            InitScheme::Standard => {
                let mut signs = Vec::with_capacity(width);
                let mut anchor = Vec::with_capacity(width * dim);
                for _ in 0..width {
                    signs.push(draw_sign(rng));
                    anchor.extend((0..dim).map(|_| normal.sample(rng)));
                }
                (signs, anchor)
            }
            InitScheme::Symmetric => {
                if width % 2 != 0 {
                    return Err(GailError::Config(format!(
                        "symmetric init needs an even width, got {width}"
                    )));
                }
                let half = width / 2;
                let mut signs = Vec::with_capacity(width);
                let mut anchor = Vec::with_capacity(width * dim);
                for _ in 0..half {
                    signs.push(draw_sign(rng));
                    anchor.extend((0..dim).map(|_| normal.sample(rng)));
                }
                for l in 0..half {
                    signs.push(-signs[l]);
                    anchor.extend_from_within(l * dim..(l + 1) * dim);
                }
                (signs, anchor)
            }
        };
        Ok(Self {
            width,
            dim,
            weights: anchor.clone(),
            signs: signs.into(),
            anchor: anchor.into(),
        })
    }

    pub fn from_parts(width: usize, dim: usize, signs: Vec<f64>, anchor: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if signs.len() != width || anchor.len() != width * dim || weights.len() != width * dim {
            return Err(GailError::Dimension("network parts do not match (m, d)".into()));
        }
        if signs.iter().any(|b| *b != 1.0 && *b != -1.0) {
            return Err(GailError::Config("sign vector entries must be +1 or -1".into()));
        }
        Ok(Self {
            width,
            dim,
            signs: signs.into(),
            anchor: anchor.into(),
            weights,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Length of the flat parameter vector, `m * d`.
    pub fn n_params(&self) -> usize {
        self.width * self.dim
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.n_params() {
            return Err(GailError::Dimension(format!(
                "weights have length {}, expected {}",
                weights.len(),
                self.n_params()
            )));
        }
        self.weights = weights;
        Ok(())
    }

    /// A network sharing `b` and `W_0` with `self` but carrying `weights`.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        let mut net = self.clone();
        net.set_weights(weights)?;
        Ok(net)
    }

    /// Same `b`, `W_0`, with `W` reset to `W_0`.
    pub fn at_anchor(&self) -> Self {
        Self {
            weights: self.anchor.to_vec(),
            ..self.clone()
        }
    }

    /// `true` when both share the same sign vector and anchor allocation.
    pub fn shares_init_with(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.signs, &other.signs) && Arc::ptr_eq(&self.anchor, &other.anchor)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(GailError::Dimension(format!(
                "input has length {}, expected {}",
                x.len(),
                self.dim
            )));
        }
        if linalg::norm(x) > 1.0 + 1e-12 && !WARNED_INPUT_NORM.swap(true, Ordering::Relaxed) {
            log::warn!("network input with norm > 1; feature bounds no longer hold");
        }
        Ok(())
    }

    /// `W^T phi_{W_gate}(x)`: values from `value_weights`, gates from
    /// `gate_weights`. With both equal this is the network output.
    pub fn cross_eval(&self, value_weights: &[f64], gate_weights: &[f64], x: &[f64]) -> f64 {
        let d = self.dim;
        let same = std::ptr::eq(value_weights, gate_weights);
        let term = |l: usize| {
            let gate = linalg::dot(x, &gate_weights[l * d..(l + 1) * d]);
            if gate > 0.0 {
                let value = if same {
                    gate
                } else {
                    linalg::dot(x, &value_weights[l * d..(l + 1) * d])
                };
                self.signs[l] * value
            } else {
                0.0
            }
        };
        // Blocks l and l + m/2 are summed together first so that mirrored
        // pairs cancel exactly.
        let half = self.width / 2;
        let mut acc: f64 = (0..half).map(|l| term(l) + term(l + half)).sum();
        if self.width % 2 == 1 {
            acc += term(self.width - 1);
        }
        acc / (self.width as f64).sqrt()
    }

    /// Output at arbitrary weights with this network's signs.
    pub fn eval_at(&self, weights: &[f64], x: &[f64]) -> f64 {
        self.cross_eval(weights, weights, x)
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.eval_at(&self.weights, x))
    }

    /// `phi_W(x)` at arbitrary weights, written into `out` (length `m d`).
    pub fn features_at_into(&self, weights: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let scale = 1.0 / (self.width as f64).sqrt();
        for (l, &b) in self.signs.iter().enumerate() {
            let block = &mut out[l * d..(l + 1) * d];
            if linalg::dot(x, &weights[l * d..(l + 1) * d]) > 0.0 {
                for (o, xi) in block.iter_mut().zip(x) {
                    *o = scale * b * xi;
                }
            } else {
                block.fill(0.0);
            }
        }
    }

    pub fn features_at(&self, weights: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_params()];
        self.features_at_into(weights, x, &mut out);
        out
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.features_at(&self.weights, x))
    }

    /// Smallest `|x^T W_l|` over blocks; gates are stable under
    /// perturbations of each block smaller than this.
    pub fn gate_margin(&self, weights: &[f64], x: &[f64]) -> f64 {
        let d = self.dim;
        (0..self.width)
            .map(|l| linalg::dot(x, &weights[l * d..(l + 1) * d]).abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_checkpoint(&self) -> NetCheckpoint {
        NetCheckpoint {
            format: NetCheckpoint::FORMAT.into(),
            version: NetCheckpoint::VERSION,
            m: self.width,
            d: self.dim,
            b: self.signs.to_vec(),
            w0: self.anchor.to_vec(),
            w: self.weights.clone(),
        }
    }

    pub fn from_checkpoint(ck: NetCheckpoint) -> Result<Self> {
        ck.check_header()?;
        Self::from_parts(ck.m, ck.d, ck.b, ck.w0, ck.w)
    }
}

/// Versioned JSON form of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub format: String,
    pub version: u32,
    pub m: usize,
    pub d: usize,
    pub b: Vec<f64>,
    pub w0: Vec<f64>,
    pub w: Vec<f64>,
}

impl NetCheckpoint {
    pub const FORMAT: &'static str = "two-layer-relu";
    pub const VERSION: u32 = 1;

    pub fn check_header(&self) -> Result<()> {
        if self.format != Self::FORMAT || self.version != Self::VERSION {
            return Err(GailError::Config(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        Ok(())
    }
}

/// Euclidean ball `{W : ||W - anchor|| <= radius}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallConstraint {
    anchor: Vec<f64>,
    radius: f64,
}

impl BallConstraint {
    pub fn new(anchor: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(GailError::Config(format!("ball radius must be >= 0, got {radius}")));
        }
        Ok(Self { anchor, radius })
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn contains(&self, w: &[f64], tol: f64) -> bool {
        linalg::distance(w, &self.anchor) <= self.radius + tol
    }

    /// Euclidean projection onto the ball.
    pub fn project(&self, w: &[f64]) -> Vec<f64> {
        project_ball(w, self)
    }
}

/// Returns `w` unchanged if it lies in the ball, else its radial projection.
pub fn project_ball(w: &[f64], ball: &BallConstraint) -> Vec<f64> {
    let dist = linalg::distance(w, &ball.anchor);
    // Slack at rounding scale keeps already-projected points fixed.
    let slack = 8.0 * f64::EPSILON * (ball.radius + linalg::norm(&ball.anchor));
    if dist <= ball.radius + slack {
        return w.to_vec();
    }
    let t = ball.radius / dist;
    w.iter()
        .zip(&ball.anchor)
        .map(|(wi, ai)| ai + t * (wi - ai))
        .collect()
}

/// A point drawn uniformly from the ball.
pub fn uniform_in_ball<R: Rng + ?Sized>(ball: &BallConstraint, rng: &mut R) -> Vec<f64> {
    let n = ball.anchor.len();
    let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let dn = linalg::norm(&dir).max(f64::MIN_POSITIVE);
    let r = ball.radius * rng.random::<f64>().powf(1.0 / n as f64);
    ball.anchor
        .iter()
        .zip(&dir)
        .map(|(a, g)| a + r * g / dn)
        .collect()
}

/// Mean `|W^T phi_{W1}(x) - W^T phi_{W2}(x)|` with `W, W1, W2` uniform in the
/// radius-`radius` ball around the network's anchor and `x` drawn uniformly
/// from `points`.
pub fn linearization_probe<R: Rng + ?Sized>(
    net: &TwoLayerNet,
    radius: f64,
    points: &[&[f64]],
    n_inputs: usize,
    rng: &mut R,
) -> Result<f64> {
    if points.is_empty() || n_inputs == 0 {
        return Err(GailError::Config("linearization probe needs inputs".into()));
    }
    let ball = BallConstraint::new(net.anchor().to_vec(), radius)?;
    let w = uniform_in_ball(&ball, rng);
    let w1 = uniform_in_ball(&ball, rng);
    let w2 = uniform_in_ball(&ball, rng);
    let mut total = 0.0;
    for _ in 0..n_inputs {
        let x = points[rng.random_range(0..points.len())];
        total += (net.cross_eval(&w, &w1, x) - net.cross_eval(&w, &w2, x)).abs();
    }
    Ok(total / n_inputs as f64)
}
