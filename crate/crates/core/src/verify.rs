//! Numerical certificates for the optimality and stability properties of the
//! margin-adaptive loss.
//!
//! For a pair with explicit margin `h`, averaging the per-sample loss over
//! the Bradley-Terry label distribution gives a cross-entropy in the policy
//! logit `t = β h_θ`:
//!
//! ```text
//! |h| < τ :  -[σ(c h) log σ(t) + σ(-c h) log σ(-t)]     argmin t = c h
//! h ≥ τ   :  -[σ(c h) log σ(t) + σ(-h)   log σ(-t)]     argmin t = log(σ(c h)/σ(-h))
//! ```
//!
//! with `c = c(|h|)`. Pairs with `h ≤ -τ` are the same pair seen from the
//! other side, so their loss is the mirror image `L(t, h) = L(-t, -h)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{coefficient, log_sigmoid, loss_grad_h_theta, loss_hessian_h_theta, per_pair_loss, sigmoid, weight, weight_ablated, Ablation, LossKind, WeightConfig};
use crate::numeric::{bisect_root, golden_section_min};
use crate::rng::{self, Domain};
use rand::Rng;

/// Search interval and bracket width for the numeric minimiser.
pub const SEARCH_LO: f64 = -100.0;
pub const SEARCH_HI: f64 = 100.0;
pub const SEARCH_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub grid: Vec<f64>,
    pub predicted: Vec<f64>,
    pub observed: Vec<f64>,
    pub max_abs_error: f64,
    /// Human-readable descriptions of every failed check.
    #[serde(default)]
    pub violations: Vec<String>,
}

impl OracleResult {
    fn from_parts(grid: Vec<f64>, predicted: Vec<f64>, observed: Vec<f64>) -> Self {
        let max_abs_error = predicted.iter().zip(&observed).map(|(p, o)| (p - o).abs()).fold(0.0, f64::max);
        Self { grid, predicted, observed, max_abs_error, violations: Vec::new() }
    }
}

/// Cross-entropy `-[a log σ(t) + b log σ(-t)]`.
fn cross_entropy(t: f64, a: f64, b: f64) -> f64 {
    -(a * log_sigmoid(t) + b * log_sigmoid(-t))
}

/// Label-averaged loss of the high-margin branch for an explicit coefficient `c`.
pub fn high_branch_loss(t: f64, h_phi: f64, c: f64) -> f64 {
    cross_entropy(t, sigmoid(c * h_phi), sigmoid(-h_phi))
}

/// Expected per-pair loss as a function of `t = β h_θ`.
pub fn expected_pair_loss(target: f64, h_phi: f64, cfg: &WeightConfig) -> f64 {
    if h_phi <= -cfg.tau {
        return expected_pair_loss(-target, -h_phi, cfg);
    }
    let c = coefficient(h_phi.abs(), cfg);
    if h_phi.abs() < cfg.tau {
        cross_entropy(target, sigmoid(c * h_phi), sigmoid(-c * h_phi))
    } else {
        high_branch_loss(target, h_phi, c)
    }
}

/// Amplified target `c(|h|) h` of the low-margin branch.
pub fn optimal_target_low(h_phi: f64, cfg: &WeightConfig) -> Result<f64> {
    if !(h_phi.abs() < cfg.tau) {
        return Err(Error::Precondition(format!("|h_phi| = {} is not below tau = {}", h_phi.abs(), cfg.tau)));
    }
    Ok(coefficient(h_phi.abs(), cfg) * h_phi)
}

/// Stationary point of the high-margin branch, `log σ(c h) - log σ(-h)`.
pub fn optimal_target_high(h_phi: f64, c: f64) -> f64 {
    log_sigmoid(c * h_phi) - log_sigmoid(-h_phi)
}

/// `∂t*/∂c` from implicit differentiation of the stationarity condition
/// `σ(c h) σ(-t) - σ(-h) σ(t) = 0`, evaluated at the optimum.
pub fn high_target_sensitivity(h_phi: f64, c: f64) -> f64 {
    let t = optimal_target_high(h_phi, c);
    let (sc, snc) = (sigmoid(c * h_phi), sigmoid(-c * h_phi));
    let (st, snt) = (sigmoid(t), sigmoid(-t));
    h_phi * sc * snc * snt / (st * snt * (sc + sigmoid(-h_phi)))
}

pub fn numeric_minimizer<F: Fn(f64) -> f64>(f: F) -> f64 {
    golden_section_min(f, SEARCH_LO, SEARCH_HI, SEARCH_TOL)
}

/// Closed-form target vs golden-section minimiser over `h` drawn uniformly
/// from `(-τ, τ)`.
pub fn oracle_low(cfg: &WeightConfig, n: usize, seed: u64) -> OracleResult {
    let mut r = rng::stream(seed, Domain::FINITE_DIFF, cfg.tau.to_bits() ^ cfg.c_max.to_bits());
    let grid: Vec<f64> = (0..n).map(|_| cfg.tau * (2.0 * rng::open01(&mut r) - 1.0)).collect();
    let predicted: Vec<f64> = grid.iter().map(|&h| optimal_target_low(h, cfg).expect("grid inside (-tau, tau)")).collect();
    let observed: Vec<f64> = grid.iter().map(|&h| numeric_minimizer(|t| expected_pair_loss(t, h, cfg))).collect();
    OracleResult::from_parts(grid, predicted, observed)
}

/// Closed-form high-margin target vs golden-section minimiser across a
/// strictly increasing positive grid of coefficients; also checks strict
/// increase and the sign of the sensitivity formula.
pub fn check_monotone_in_c(h_phi: f64, c_grid: &[f64]) -> Result<OracleResult> {
    if c_grid.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
        return Err(Error::Precondition("coefficient grid must be positive".into()));
    }
    if c_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("coefficient grid must be strictly increasing".into()));
    }
    let predicted: Vec<f64> = c_grid.iter().map(|&c| optimal_target_high(h_phi, c)).collect();
    let observed: Vec<f64> = c_grid.iter().map(|&c| numeric_minimizer(|t| high_branch_loss(t, h_phi, c))).collect();
    let mut res = OracleResult::from_parts(c_grid.to_vec(), predicted, observed);
    for (i, w) in res.predicted.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            res.violations.push(format!(
                "h={h_phi}: t*(c={}) = {} is not above t*(c={}) = {}",
                c_grid[i + 1], w[1], c_grid[i], w[0]
            ));
        }
    }
    for &c in c_grid {
        let d = high_target_sensitivity(h_phi, c);
        if !(d > 0.0) && h_phi > 0.0 {
            res.violations.push(format!("h={h_phi}, c={c}: sensitivity {d} is not positive"));
        }
    }
    Ok(res)
}

/// Root of `∂/∂t` of the high-margin branch, found by bisection; an
/// independent check on the golden-section minimiser.
pub fn high_target_by_bisection(h_phi: f64, c: f64) -> Option<f64> {
    let a = sigmoid(c * h_phi);
    let b = sigmoid(-h_phi);
    bisect_root(|t| b * sigmoid(t) - a * sigmoid(-t), SEARCH_LO, SEARCH_HI, 1e-13)
}

/// Largest secant slope `|w(h + step) - w(h)| / step` on `[lo, hi]`.
pub fn estimate_lipschitz_w(cfg: &WeightConfig, grid_lo: f64, grid_hi: f64, step: f64) -> Result<f64> {
    if !(grid_lo < grid_hi) || !(step > 0.0) || !grid_lo.is_finite() || !grid_hi.is_finite() {
        return Err(Error::Precondition("need grid_lo < grid_hi and step > 0".into()));
    }
    let n = ((grid_hi - grid_lo) / step).ceil() as usize;
    let mut prev = weight(grid_lo, cfg);
    let mut best = 0.0_f64;
    for i in 1..=n {
        let h = grid_lo + i as f64 * step;
        let w = weight(h, cfg);
        best = best.max((w - prev).abs() / step);
        prev = w;
    }
    Ok(best)
}

/// The sensitivity-analysis grid: `τ ∈ {2, 4, 7, 10}`, `c ∈ {2, 3, 4}` with
/// `c_min = 1/c`, `λ = 1`.
pub fn sensitivity_grid() -> Vec<WeightConfig> {
    let mut out = Vec::new();
    for tau in [2.0, 4.0, 7.0, 10.0] {
        for c in [2.0, 3.0, 4.0] {
            out.push(WeightConfig::with_intensity(c, tau).expect("grid entries are valid"));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDiffReport {
    pub samples: usize,
    pub grad_failures: usize,
    pub hess_failures: usize,
    pub bound_failures: usize,
    pub max_rel_err_grad: f64,
    pub max_rel_err_hess: f64,
    /// The first few failing triples.
    pub examples: Vec<String>,
}

impl FiniteDiffReport {
    pub fn passed(&self) -> bool {
        self.grad_failures == 0 && self.hess_failures == 0 && self.bound_failures == 0
    }
}

pub const FD_REL_TOL: f64 = 1e-5;

type GradFn = fn(f64, f64, &LossKind) -> Result<f64>;

/// Randomised derivative and bound checks; see [`finite_diff_suite_with`].
pub fn finite_diff_suite(n_samples: usize, seed: u64) -> Result<FiniteDiffReport> {
    finite_diff_suite_with(n_samples, seed, loss_grad_h_theta)
}

/// Draw `(h_θ, h_φ, loss)` triples and compare the analytic gradient `grad`
/// (and the analytic Hessian) against central differences, and check
/// `|grad| ≤ w_max β`, `|hess| ≤ w_max β²/4` for the logistic losses.
///
/// `β h_θ` is kept in `[-10, 10]`: beyond that the Hessian is smaller than
/// the rounding error of a finite difference of gradients near `±β`.
pub fn finite_diff_suite_with(n_samples: usize, seed: u64, grad: GradFn) -> Result<FiniteDiffReport> {
    if n_samples == 0 {
        return Err(Error::Precondition("finite-difference suite needs at least one sample".into()));
    }
    let mut pool = sensitivity_grid();
    pool.push(WeightConfig::new(0.0, 2.0, 1.0, 2.0)?);
    let mut r = rng::stream(seed, Domain::FINITE_DIFF, u64::MAX);
    for _ in 0..6 {
        let c_max = 1.1 + 4.0 * rng::open01(&mut r);
        let c_min = 0.95 * rng::open01(&mut r);
        let lambda = 0.25 + 2.75 * rng::open01(&mut r);
        let tau = 0.5 + 9.5 * rng::open01(&mut r);
        pool.push(WeightConfig::new(c_min, c_max, lambda, tau)?);
    }

    let mut rep = FiniteDiffReport {
        samples: n_samples,
        grad_failures: 0,
        hess_failures: 0,
        bound_failures: 0,
        max_rel_err_grad: 0.0,
        max_rel_err_hess: 0.0,
        examples: Vec::new(),
    };
    let mut r = rng::stream(seed, Domain::FINITE_DIFF, 0);
    for _ in 0..n_samples {
        let cfg = pool[r.random_range(0..pool.len())];
        let beta = 0.05 + 0.95 * rng::open01(&mut r);
        let kind = match r.random_range(0..5) {
            0 => LossKind::dpo(beta)?,
            1 => LossKind::ipo(beta)?,
            2 => LossKind::madpo(beta, cfg, Ablation::Full)?,
            3 => LossKind::madpo(beta, cfg, Ablation::AmpOnly)?,
            _ => LossKind::madpo(beta, cfg, Ablation::RegOnly)?,
        };
        let u = 2.0 * rng::open01(&mut r) - 1.0;
        let h_phi = 3.0 * cfg.tau * (2.0 * rng::open01(&mut r) - 1.0);
        let (h_theta, eps) = match kind {
            LossKind::Ipo { beta } => (1.0 / (2.0 * beta) + 20.0 * u, 1e-3),
            _ => (10.0 * u / beta, 1e-3 / beta),
        };

        let g = grad(h_theta, h_phi, &kind)?;
        let hs = loss_hessian_h_theta(h_theta, h_phi, &kind)?;
        let fd_g = (per_pair_loss(h_theta + eps, h_phi, &kind)? - per_pair_loss(h_theta - eps, h_phi, &kind)?) / (2.0 * eps);
        let fd_h = (grad(h_theta + eps, h_phi, &kind)? - grad(h_theta - eps, h_phi, &kind)?) / (2.0 * eps);
        let eg = rel_err(g, fd_g);
        let eh = rel_err(hs, fd_h);
        rep.max_rel_err_grad = rep.max_rel_err_grad.max(eg);
        rep.max_rel_err_hess = rep.max_rel_err_hess.max(eh);
        let describe = |what: &str| format!("{what}: h_theta={h_theta}, h_phi={h_phi}, kind={kind:?}");
        if !(eg <= FD_REL_TOL) {
            rep.grad_failures += 1;
            if rep.examples.len() < 5 {
                rep.examples.push(describe(&format!("gradient rel err {eg:.3e} (analytic {g}, fd {fd_g})")));
            }
        }
        if !(eh <= FD_REL_TOL) {
            rep.hess_failures += 1;
            if rep.examples.len() < 5 {
                rep.examples.push(describe(&format!("hessian rel err {eh:.3e} (analytic {hs}, fd {fd_h})")));
            }
        }
        let w_max = match kind {
            LossKind::Madpo { weight, .. } => Some(weight.w_max()),
            LossKind::Dpo { .. } | LossKind::BetaDpo { .. } => Some(1.0),
            LossKind::Ipo { .. } => None,
        };
        if let Some(wm) = w_max {
            if g.abs() > wm * beta || hs > wm * beta * beta / 4.0 || hs <= 0.0 {
                rep.bound_failures += 1;
                if rep.examples.len() < 5 {
                    rep.examples.push(describe(&format!("bound: |grad|={} hess={} w_max={wm}", g.abs(), hs)));
                }
            }
        }
    }
    Ok(rep)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-12);
    (analytic - numeric).abs() / scale
}

/// One line of the verification table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut s = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            s.push_str(&format!("{status}  {:width$}  {}\n", c.name, c.detail));
        }
        s
    }
}

/// Tolerance on closed-form vs numeric optima.
pub const ORACLE_TOL: f64 = 1e-6;

pub fn check_low_margin_oracle(n_per_config: usize, seed: u64) -> CheckResult {
    let mut worst = 0.0_f64;
    for cfg in sensitivity_grid() {
        worst = worst.max(oracle_low(&cfg, n_per_config, seed).max_abs_error);
    }
    CheckResult {
        name: "low_margin_target".into(),
        passed: worst <= ORACLE_TOL,
        detail: format!("max |c(|h|)h - argmin| = {worst:.2e} over {} configs x {n_per_config} margins", sensitivity_grid().len()),
    }
}

pub fn check_high_margin_oracle() -> CheckResult {
    let c_grid: Vec<f64> = (1..=20).map(|k| k as f64 / 20.0).collect();
    let mut worst = 0.0_f64;
    let mut worst_unit = 0.0_f64;
    let mut violations = Vec::new();
    for tau in [2.0, 4.0, 7.0, 10.0] {
        for k in 0..=8 {
            let h = tau + k as f64;
            match check_monotone_in_c(h, &c_grid) {
                Ok(res) => {
                    worst = worst.max(res.max_abs_error);
                    worst_unit = worst_unit.max((res.predicted[19] - h).abs());
                    violations.extend(res.violations);
                }
                Err(e) => violations.push(e.to_string()),
            }
        }
    }
    let passed = worst <= ORACLE_TOL && worst_unit <= 1e-10 && violations.is_empty();
    let mut detail = format!("max |t* - argmin| = {worst:.2e}, |t*(1) - h| = {worst_unit:.2e}");
    if let Some(v) = violations.first() {
        detail.push_str(&format!(", {} violations, first: {v}", violations.len()));
    }
    CheckResult { name: "high_margin_target".into(), passed, detail }
}

pub fn check_finite_differences(n: usize, seed: u64) -> CheckResult {
    match finite_diff_suite(n, seed) {
        Ok(rep) => CheckResult {
            name: "finite_diff_suite".into(),
            passed: rep.passed(),
            detail: format!(
                "{} samples, grad/hess/bound failures {}/{}/{}, max rel err {:.1e}/{:.1e}{}",
                rep.samples,
                rep.grad_failures,
                rep.hess_failures,
                rep.bound_failures,
                rep.max_rel_err_grad,
                rep.max_rel_err_hess,
                rep.examples.first().map(|e| format!(", first: {e}")).unwrap_or_default()
            ),
        },
        Err(e) => CheckResult { name: "finite_diff_suite".into(), passed: false, detail: e.to_string() },
    }
}

/// Pivot, continuity, unit branch, and Lipschitz stability for every grid config.
pub fn check_weight_function() -> CheckResult {
    let mut problems = Vec::new();
    let mut worst_change = 0.0_f64;
    let eps = 1e-7;
    for cfg in sensitivity_grid() {
        let tag = format!("tau={}, c_max={}", cfg.tau, cfg.c_max);
        if (coefficient(cfg.tau, &cfg) - 1.0).abs() > 1e-12 {
            problems.push(format!("{tag}: c(tau) != 1"));
        }
        let lo = -cfg.tau - 10.0;
        let hi = 50.0;
        let (l1, l2) = match (estimate_lipschitz_w(&cfg, lo, hi, 1e-3), estimate_lipschitz_w(&cfg, lo, hi, 5e-4)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                problems.push(format!("{tag}: lipschitz estimate failed"));
                continue;
            }
        };
        if !l1.is_finite() || !l2.is_finite() {
            problems.push(format!("{tag}: non-finite lipschitz estimate"));
            continue;
        }
        let change = (l1 - l2).abs() / l2.max(f64::MIN_POSITIVE);
        worst_change = worst_change.max(change);
        if change >= 0.05 {
            problems.push(format!("{tag}: lipschitz estimate moved {:.1}% on step halving", 100.0 * change));
        }
        if (weight(-cfg.tau + eps, &cfg) - 1.0).abs() > 10.0 * eps * l1 {
            problems.push(format!("{tag}: discontinuous at -tau"));
        }
        if (weight(eps, &cfg) - weight(-eps, &cfg)).abs() > 10.0 * eps * l1 {
            problems.push(format!("{tag}: discontinuous at 0"));
        }
        let below = (0..=1000).map(|i| -cfg.tau - i as f64 * 0.05).all(|h| weight(h, &cfg) == 1.0);
        if !below {
            problems.push(format!("{tag}: weight differs from 1 below -tau"));
        }
        if weight_ablated(2.0 * cfg.tau, &cfg, Ablation::AmpOnly) != 1.0 {
            problems.push(format!("{tag}: amp-only weight not forced to 1 at 2 tau"));
        }
        if weight_ablated(0.5 * cfg.tau, &cfg, Ablation::RegOnly) != 1.0 {
            problems.push(format!("{tag}: reg-only weight not forced to 1 at tau/2"));
        }
    }
    CheckResult {
        name: "weight_function".into(),
        passed: problems.is_empty(),
        detail: if problems.is_empty() {
            format!("12 configs, worst lipschitz refinement change {:.2}%", 100.0 * worst_change)
        } else {
            format!("{} problems, first: {}", problems.len(), problems[0])
        },
    }
}

/// Gumbel-noise choice frequencies against `σ(Δr)`, 3 binomial std devs.
pub fn check_btl_consistency(draws: u64, seed: u64) -> CheckResult {
    let mut lines = Vec::new();
    let mut passed = true;
    for (k, gap) in [0.0, 1.0, 2.0, 3.0].into_iter().enumerate() {
        let base = (k as u64) * draws;
        let wins = (0..draws)
            .filter(|i| crate::world::sample_preference(gap, 0.0, seed, base + i) == crate::world::Choice::First)
            .count();
        let rate = wins as f64 / draws as f64;
        let p = sigmoid(gap);
        let sd = (p * (1.0 - p) / draws as f64).sqrt();
        let ok = (rate - p).abs() <= 3.0 * sd;
        passed &= ok;
        lines.push(format!("Δ={gap}: {rate:.5} vs {p:.5}"));
    }
    CheckResult { name: "btl_gumbel".into(), passed, detail: lines.join(", ") }
}

/// Second differences of the expected loss are positive on random stencils.
pub fn check_expected_loss_convexity(n: usize, seed: u64) -> CheckResult {
    let mut r = rng::stream(seed, Domain::FINITE_DIFF, 7);
    let grid = sensitivity_grid();
    let mut bad = 0;
    for _ in 0..n {
        let cfg = grid[r.random_range(0..grid.len())];
        let h = 3.0 * cfg.tau * (2.0 * rng::open01(&mut r) - 1.0);
        let t = 20.0 * (2.0 * rng::open01(&mut r) - 1.0);
        let d = 0.1;
        let second = expected_pair_loss(t + d, h, &cfg) - 2.0 * expected_pair_loss(t, h, &cfg) + expected_pair_loss(t - d, h, &cfg);
        if !(second > 0.0) {
            bad += 1;
        }
    }
    CheckResult { name: "expected_loss_convexity".into(), passed: bad == 0, detail: format!("{bad} of {n} stencils not convex") }
}

/// Every verification check, as run by the command-line `verify` command.
pub fn run_suite(seed: u64) -> SuiteReport {
    SuiteReport {
        checks: vec![
            check_low_margin_oracle(100, seed),
            check_high_margin_oracle(),
            check_finite_differences(10_000, seed),
            check_weight_function(),
            check_btl_consistency(100_000, seed),
            check_expected_loss_convexity(2_000, seed),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> WeightConfig {
        WeightConfig::new(0.0, 2.0, 1.0, 2.0).unwrap()
    }

    #[test]
    fn expected_loss_examples() {
        let c = cfg();
        let h = 1.0;
        let t = coefficient(1.0, &c) * h;
        let p = sigmoid(t);
        let entropy = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        assert!((expected_pair_loss(t, h, &c) - entropy).abs() < 1e-14);
        assert!((expected_pair_loss(0.0, 0.0, &c) - std::f64::consts::LN_2).abs() < 1e-15);
        let argmin = numeric_minimizer(|t| expected_pair_loss(t, 0.0, &c));
        assert!(argmin.abs() < 1e-7, "{argmin}");
        let argmin = numeric_minimizer(|t| high_branch_loss(t, 5.0, 1.0));
        assert!((argmin - 5.0).abs() < 1e-6);
    }

    #[test]
    fn mirror_branch() {
        let c = cfg();
        assert_eq!(expected_pair_loss(1.3, -4.0, &c), expected_pair_loss(-1.3, 4.0, &c));
        let t = numeric_minimizer(|t| expected_pair_loss(t, -4.0, &c));
        let expected = -optimal_target_high(4.0, coefficient(4.0, &c));
        assert!((t - expected).abs() < 1e-6);
    }

    #[test]
    fn low_target_examples() {
        let c = cfg();
        assert_eq!(optimal_target_low(0.0, &c).unwrap(), 0.0);
        let t = optimal_target_low(1.0, &c).unwrap();
        assert!((t - 1.462_117_157_260_009_8).abs() < 1e-12);
        let m = numeric_minimizer(|x| expected_pair_loss(x, 1.0, &c));
        assert!((m - t).abs() < 1e-6);
        for h in [0.1, 0.7, 1.5, 1.99] {
            assert!(optimal_target_low(h, &c).unwrap() > h);
        }
        assert!(optimal_target_low(2.0, &c).is_err());
    }

    #[test]
    fn high_target_examples() {
        for h in [2.0, 4.0, 9.0] {
            assert!((optimal_target_high(h, 1.0) - h).abs() < 1e-12);
        }
        let t = optimal_target_high(4.0, 0.5);
        assert!((t - 3.891_221_916_874_837).abs() < 1e-12);
        assert!((high_target_by_bisection(4.0, 0.5).unwrap() - t).abs() < 1e-10);
        for c in [0.1, 0.5, 0.9] {
            assert!(optimal_target_high(3.0, c) < 3.0);
        }
    }

    #[test]
    fn sensitivity_matches_closed_form_derivative() {
        // t* = log σ(ch) - log σ(-h) gives ∂t*/∂c = h σ(-ch)
        for (h, c) in [(2.0, 0.3), (4.0, 0.5), (9.0, 0.95)] {
            let d = high_target_sensitivity(h, c);
            assert!((d - h * sigmoid(-c * h)).abs() < 1e-10, "{d}");
        }
    }

    #[test]
    fn monotone_examples() {
        let res = check_monotone_in_c(4.0, &[0.25, 0.5, 0.75, 1.0]).unwrap();
        assert!(res.violations.is_empty());
        assert!((res.predicted[3] - 4.0).abs() < 1e-12);
        assert!(res.max_abs_error < 1e-6);
        assert!(check_monotone_in_c(2.0, &[0.05, 0.2, 0.6, 1.0]).unwrap().violations.is_empty());
        assert!(check_monotone_in_c(2.0, &[0.5]).unwrap().violations.is_empty());
        assert!(check_monotone_in_c(2.0, &[0.5, 0.4]).is_err());
    }

    #[test]
    fn lipschitz_examples() {
        let c = cfg();
        assert_eq!(estimate_lipschitz_w(&c, -20.0, -2.5, 1e-3).unwrap(), 0.0);
        let l = estimate_lipschitz_w(&c, -10.0, 50.0, 1e-3).unwrap();
        assert!(l.is_finite() && l > 0.0 && l < 10.0);
        let l2 = estimate_lipschitz_w(&c, -10.0, 50.0, 5e-4).unwrap();
        assert!((l - l2).abs() / l2 < 0.05);
        assert!(estimate_lipschitz_w(&c, 1.0, 0.0, 1e-3).is_err());
    }

    #[test]
    fn finite_diff_rules() {
        assert!(finite_diff_suite(0, 1).is_err());
        let rep = finite_diff_suite(500, 1).unwrap();
        assert!(rep.passed(), "{rep:?}");
        fn flipped(h: f64, p: f64, k: &LossKind) -> Result<f64> {
            loss_grad_h_theta(h, p, k).map(|g| -g)
        }
        let bad = finite_diff_suite_with(200, 1, flipped).unwrap();
        assert!(bad.grad_failures > 0);
    }

    #[test]
    fn dpo_gradient_bound_is_tight() {
        let k = LossKind::dpo(0.1).unwrap();
        let g = loss_grad_h_theta(-1e4, 0.0, &k).unwrap();
        assert!((g + 0.1).abs() < 1e-15);
    }
}
