//! Scalar loss kernels for pairwise preference optimization.
//!
//! Everything here is a pure function of the implicit margin `h_theta`
//! (policy log-ratio difference between winner and loser) and, for the
//! margin-adaptive loss, the explicit margin `h_phi` produced by a frozen
//! reward model. Derivatives are taken with respect to `h_theta`.
//!
//! ```text
//! DPO    L = -log σ(β h_θ)
//! IPO    L = (h_θ - 1/(2β))²
//! MADPO  L = -w(h_φ) log σ(β h_θ)
//! ```

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logistic function, branching on sign so neither side overflows.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow for large `z` or precision loss for very negative `z`.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `log σ(z) = -softplus(-z)`.
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

/// Hyperparameters of the margin-adaptive coefficient and weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub c_min: f64,
    pub c_max: f64,
    /// Sharpness of the transition around `tau`.
    pub lambda: f64,
    /// Threshold separating low-margin from high-margin pairs.
    pub tau: f64,
}

impl WeightConfig {
    pub fn new(c_min: f64, c_max: f64, lambda: f64, tau: f64) -> Result<Self> {
        let cfg = Self { c_min, c_max, lambda, tau };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Symmetric intensity parameterization used by the sweeps: `c_max = c`,
    /// `c_min = 1/c`, `lambda = 1`.
    pub fn with_intensity(c: f64, tau: f64) -> Result<Self> {
        if !(c > 1.0) {
            return Err(Error::InvalidConfig(format!("intensity c must exceed 1, got {c}")));
        }
        Self::new(1.0 / c, c, 1.0, tau)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.c_min, self.c_max, self.lambda, self.tau].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("weight config has non-finite entries".into()));
        }
        if !(0.0 <= self.c_min && self.c_min < 1.0 && self.c_max > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= c_min < 1 < c_max, got c_min={}, c_max={}",
                self.c_min, self.c_max
            )));
        }
        if !(self.lambda > 0.0 && self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need lambda > 0 and tau > 0, got lambda={}, tau={}",
                self.lambda, self.tau
            )));
        }
        Ok(())
    }

    /// Numerical supremum of [`weight`] over `[-tau, 200]` on a `1e-3` grid.
    ///
    /// Below `-tau` the weight is identically one, so the grid covers the whole
    /// line up to the far tail, where the weight decays monotonically towards
    /// `σ(c_min h)/σ(h)`. Results are cached per configuration.
    pub fn w_max(&self) -> f64 {
        static CACHE: OnceLock<Mutex<HashMap<[u64; 4], f64>>> = OnceLock::new();
        let key = [
            self.c_min.to_bits(),
            self.c_max.to_bits(),
            self.lambda.to_bits(),
            self.tau.to_bits(),
        ];
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(v) = cache.lock().expect("w_max cache poisoned").get(&key) {
            return *v;
        }
        let step = 1e-3;
        let n = ((200.0 + self.tau) / step).ceil() as usize;
        let (mut best, mut arg) = (1.0_f64, -self.tau);
        for i in 0..=n {
            let h = -self.tau + i as f64 * step;
            let w = weight(h, self);
            if w > best {
                best = w;
                arg = h;
            }
        }
        // Polish the peak between its grid neighbours so the bound also covers
        // off-grid points.
        let peak = crate::numeric::golden_section_min(|h| -weight(h, self), arg - step, arg + step, 1e-12);
        best = best.max(weight(peak, self));
        cache.lock().expect("w_max cache poisoned").insert(key, best);
        best
    }
}

/// Which part of the adaptive weight is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Ablation {
    #[default]
    Full,
    /// Weight forced to one for high-margin pairs (`|h| >= tau`).
    AmpOnly,
    /// Weight forced to one for low-margin pairs (`|h| < tau`).
    RegOnly,
}

impl Ablation {
    pub fn label(&self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::AmpOnly => "amp-only",
            Ablation::RegOnly => "reg-only",
        }
    }
}

/// Margin-dependent coefficient `c(h) ∈ [c_min, c_max]`, strictly decreasing,
/// with `c(tau) = 1`.
pub fn coefficient(h_abs: f64, cfg: &WeightConfig) -> f64 {
    let ratio = (cfg.c_max - 1.0) / (1.0 - cfg.c_min);
    let arg = cfg.lambda * (h_abs - cfg.tau);
    // exp overflows to +inf past ~709, where the fraction is exactly 0 anyway.
    cfg.c_min + (cfg.c_max - cfg.c_min) / (1.0 + ratio * arg.exp())
}

/// Piecewise adaptive weight: `σ(c(|h|) h) / σ(h)` above `-tau`, exactly one at or below.
pub fn weight(h_phi: f64, cfg: &WeightConfig) -> f64 {
    if h_phi <= -cfg.tau {
        return 1.0;
    }
    let c = coefficient(h_phi.abs(), cfg);
    // Ratio in log space keeps σ(h) for very negative h out of the denominator.
    (log_sigmoid(c * h_phi) - log_sigmoid(h_phi)).exp()
}

pub fn weight_ablated(h_phi: f64, cfg: &WeightConfig, mode: Ablation) -> f64 {
    match mode {
        Ablation::Full => weight(h_phi, cfg),
        Ablation::AmpOnly if h_phi.abs() >= cfg.tau => 1.0,
        Ablation::RegOnly if h_phi.abs() < cfg.tau => 1.0,
        _ => weight(h_phi, cfg),
    }
}

/// Loss family selector with its temperature.
///
/// `BetaDpo` carries the base temperature; the trainer supplies the per-batch
/// effective temperature through the raw `dpo_*` kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Dpo { beta: f64 },
    Ipo { beta: f64 },
    Madpo { beta: f64, weight: WeightConfig, ablation: Ablation },
    BetaDpo { beta: f64 },
}

impl LossKind {
    pub fn dpo(beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(LossKind::Dpo { beta })
    }

    pub fn ipo(beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(LossKind::Ipo { beta })
    }

    pub fn madpo(beta: f64, weight: WeightConfig, ablation: Ablation) -> Result<Self> {
        check_beta(beta)?;
        weight.validate()?;
        Ok(LossKind::Madpo { beta, weight, ablation })
    }

    pub fn beta_dpo(beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(LossKind::BetaDpo { beta })
    }

    pub fn beta(&self) -> f64 {
        match *self {
            LossKind::Dpo { beta }
            | LossKind::Ipo { beta }
            | LossKind::Madpo { beta, .. }
            | LossKind::BetaDpo { beta } => beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta())?;
        if let LossKind::Madpo { weight, .. } = self {
            weight.validate()?;
        }
        Ok(())
    }

    /// Per-pair scale applied to the DPO log-likelihood; one for everything but MADPO.
    pub fn pair_weight(&self, h_phi: f64) -> f64 {
        match self {
            LossKind::Madpo { weight, ablation, .. } => weight_ablated(h_phi, weight, *ablation),
            _ => 1.0,
        }
    }

    /// Short method label used in reports.
    pub fn label(&self) -> String {
        match self {
            LossKind::Dpo { .. } => "dpo".into(),
            LossKind::Ipo { .. } => "ipo".into(),
            LossKind::BetaDpo { .. } => "beta-dpo".into(),
            LossKind::Madpo { ablation: Ablation::Full, .. } => "madpo".into(),
            LossKind::Madpo { ablation, .. } => format!("madpo-{}", ablation.label()),
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("beta must be finite and > 0, got {beta}")))
    }
}

fn check_inputs(h_theta: f64, h_phi: f64) -> Result<()> {
    if !h_theta.is_finite() {
        return Err(Error::NonFinite("h_theta"));
    }
    if !h_phi.is_finite() {
        return Err(Error::NonFinite("h_phi"));
    }
    Ok(())
}

/// `-log σ(β h)` for an arbitrary (possibly negative) temperature.
pub fn dpo_loss(h_theta: f64, beta: f64) -> f64 {
    softplus(-beta * h_theta)
}

/// `∂/∂h [-log σ(β h)] = -β σ(-β h)`.
pub fn dpo_grad(h_theta: f64, beta: f64) -> f64 {
    -beta * sigmoid(-beta * h_theta)
}

/// `∂²/∂h² [-log σ(β h)] = β² σ(β h) σ(-β h)`.
pub fn dpo_hessian(h_theta: f64, beta: f64) -> f64 {
    beta * beta * sigmoid(beta * h_theta) * sigmoid(-beta * h_theta)
}

/// Square-loss target `1/(2β)` of IPO.
pub fn ipo_target(beta: f64) -> f64 {
    1.0 / (2.0 * beta)
}

pub fn per_pair_loss(h_theta: f64, h_phi: f64, kind: &LossKind) -> Result<f64> {
    check_inputs(h_theta, h_phi)?;
    Ok(match *kind {
        LossKind::Ipo { beta } => (h_theta - ipo_target(beta)).powi(2),
        _ => kind.pair_weight(h_phi) * dpo_loss(h_theta, kind.beta()),
    })
}

pub fn loss_grad_h_theta(h_theta: f64, h_phi: f64, kind: &LossKind) -> Result<f64> {
    check_inputs(h_theta, h_phi)?;
    Ok(match *kind {
        LossKind::Ipo { beta } => 2.0 * (h_theta - ipo_target(beta)),
        _ => kind.pair_weight(h_phi) * dpo_grad(h_theta, kind.beta()),
    })
}

pub fn loss_hessian_h_theta(h_theta: f64, h_phi: f64, kind: &LossKind) -> Result<f64> {
    check_inputs(h_theta, h_phi)?;
    Ok(match *kind {
        LossKind::Ipo { .. } => 2.0,
        _ => kind.pair_weight(h_phi) * dpo_hessian(h_theta, kind.beta()),
    })
}
