//! Log-linear policy over a frozen reference.
//!
//! `π_θ(y|x) ∝ π_ref(y|x) exp(θᵀψ(x, y))`. The log-normaliser depends on `x`
//! only, so it cancels in the implicit margin and
//! `h_θ = θᵀ(ψ(x, y_w) - ψ(x, y_l))` exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provenance::floats_hash;
use crate::rng::{self, Domain};
use crate::world::{dot, feature_map, Prompt, PreferenceRecord, World};

/// Frozen base scores `log π_ref(y|x) = bᵀψ(x, y) - log Z_ref(x)` over a candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePolicy {
    base: Vec<f64>,
}

impl ReferencePolicy {
    pub fn new(base: Vec<f64>) -> Result<Self> {
        if base.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reference base scores"));
        }
        Ok(Self { base })
    }

    /// Reference that is uniform over whatever candidates the sampler proposes.
    pub fn uniform(dim: usize) -> Self {
        Self { base: vec![0.0; dim] }
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn hash(&self) -> String {
        floats_hash(&self.base)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(dim: usize) -> Self {
        Self { theta: vec![0.0; dim] }
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub fn implicit_margin(theta: &PolicyParams, rec: &PreferenceRecord) -> Result<f64> {
    let z = rec.feature_diff();
    check_dim(theta.theta.len(), z.len())?;
    Ok(dot(&theta.theta, &z))
}

/// `∇_θ h_θ = ψ(x, y_w) - ψ(x, y_l)`, the same for every θ.
pub fn margin_grad_theta(theta: &PolicyParams, rec: &PreferenceRecord) -> Result<Vec<f64>> {
    let z = rec.feature_diff();
    check_dim(theta.theta.len(), z.len())?;
    Ok(z)
}

/// Normalised `log π(y_i | x)` over an explicit candidate set, for the
/// policy with adjustment `theta` on top of `reference`.
pub fn log_probs(theta: &PolicyParams, reference: &ReferencePolicy, x: &[f64], candidates: &[Vec<f64>]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    check_dim(reference.dim(), theta.theta.len())?;
    let mut scores = Vec::with_capacity(candidates.len());
    for y in candidates {
        let psi = feature_map(x, y);
        check_dim(theta.theta.len(), psi.len())?;
        scores.push(dot(&reference.base, &psi) + dot(&theta.theta, &psi));
    }
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    Ok(scores.into_iter().map(|s| s - log_z).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_reward: f64,
    /// Sample standard deviation over prompts divided by `sqrt(n)`.
    pub std_error: f64,
    pub n_prompts: usize,
}

/// Best-of-k evaluation: for every prompt draw `k` generated candidates from
/// a per-prompt seeded stream, keep the one with the largest `θᵀψ` (first
/// wins ties), and average its oracle reward.
pub fn mean_oracle_reward(
    theta: &PolicyParams,
    reference: &ReferencePolicy,
    prompts: &[Prompt],
    world: &World,
    k: usize,
    seed: u64,
) -> Result<EvalSummary> {
    if prompts.is_empty() {
        return Err(Error::Empty("evaluation prompts"));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k_candidates must be at least 1".into()));
    }
    check_dim(world.cfg.psi_dim(), theta.theta.len())?;
    check_dim(reference.dim(), theta.theta.len())?;
    let mut rewards = Vec::with_capacity(prompts.len());
    for p in prompts {
        let mut r = rng::stream(seed, Domain::EVAL, p.id);
        let mut best: Option<(f64, f64)> = None;
        for _ in 0..k {
            let y = world.sample_generated(&mut r);
            let s = dot(&theta.theta, &feature_map(&p.features, &y.features));
            if best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, world.reward(p, &y)?));
            }
        }
        rewards.push(best.expect("k >= 1").1);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = if rewards.len() > 1 {
        rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(EvalSummary { mean_reward: mean, std_error: (var / n).sqrt(), n_prompts: rewards.len() })
}

/// On-disk form of trained policy parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub theta: Vec<f64>,
    pub ref_hash: String,
    pub config_hash: String,
}
