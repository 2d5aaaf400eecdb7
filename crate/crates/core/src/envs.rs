//! Bundled reference environments with frozen seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GailError, Result};
use crate::mdp::{mix_uniform, random_embedding, FiniteEmbeddedMdp};

pub const BUNDLED: [&str; 4] = ["single_state", "chain4", "grid3x3", "ring5"];

const MIXING: f64 = 0.05;

pub fn by_name(name: &str) -> Result<FiniteEmbeddedMdp> {
    match name {
        "single_state" => single_state(),
        "chain4" => chain4(),
        "grid3x3" => grid3x3(),
        "ring5" => ring5(),
        other => Err(GailError::Config(format!(
            "unknown bundled environment '{other}' (known: {})",
            BUNDLED.join(", ")
        ))),
    }
}

fn embedding(n_pairs: usize, dim: usize, seed: u64) -> Vec<f64> {
    random_embedding(n_pairs, dim, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Builds a transition tensor from a move function: the intended successor
/// gets `1 - slip`, the current state `slip`; then every row is mixed with
/// the uniform distribution.
fn kernel(n_states: usize, n_actions: usize, slip: f64, next: impl Fn(usize, usize) -> usize) -> Vec<f64> {
    let mut p = vec![0.0; n_states * n_actions * n_states];
    for s in 0..n_states {
        for a in 0..n_actions {
            let row = &mut p[(s * n_actions + a) * n_states..][..n_states];
            row[next(s, a)] += 1.0 - slip;
            row[s] += slip;
        }
    }
    mix_uniform(&mut p, n_states, MIXING);
    p
}

/// One state, two actions, `gamma = 0.5`.
pub fn single_state() -> Result<FiniteEmbeddedMdp> {
    FiniteEmbeddedMdp::new(1, 2, 2, 0.5, vec![1.0], vec![1.0, 1.0], embedding(2, 2, 101))
}

/// Four states in a line; actions move left / right with slip 0.1.
pub fn chain4() -> Result<FiniteEmbeddedMdp> {
    let n = 4;
    let p = kernel(n, 2, 0.1, |s, a| if a == 0 { s.saturating_sub(1) } else { (s + 1).min(n - 1) });
    FiniteEmbeddedMdp::new(n, 2, 4, 0.9, vec![1.0 / n as f64; n], p, embedding(2 * n, 4, 202))
}

/// 3x3 grid; actions up / down / left / right, walls keep the agent in place.
pub fn grid3x3() -> Result<FiniteEmbeddedMdp> {
    let n = 9;
    let p = kernel(n, 4, 0.1, |s, a| {
        let (r, c) = (s / 3, s % 3);
        let (r, c) = match a {
            0 => (r.saturating_sub(1), c),
            1 => ((r + 1).min(2), c),
            2 => (r, c.saturating_sub(1)),
            _ => (r, (c + 1).min(2)),
        };
        3 * r + c
    });
    FiniteEmbeddedMdp::new(n, 4, 8, 0.9, vec![1.0 / n as f64; n], p, embedding(4 * n, 8, 303))
}

/// Five states on a ring; actions step counter-clockwise, stay, or clockwise.
pub fn ring5() -> Result<FiniteEmbeddedMdp> {
    let n = 5;
    let p = kernel(n, 3, 0.1, |s, a| (s + n + a - 1) % n);
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    FiniteEmbeddedMdp::new(n, 3, 6, 0.9, rho, p, embedding(3 * n, 6, 505))
}
