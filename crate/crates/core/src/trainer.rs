//! Policy training under every loss family, plus the two-step pipeline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{dpo_grad, dpo_loss, ipo_target, log_sigmoid, loss_grad_h_theta, per_pair_loss, Ablation, LossKind, WeightConfig};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::policy::PolicyParams;
use crate::reward::{explicit_margin, fit_reward_model, FitReport, RewardFitConfig, RewardParams};
use crate::rng::{self, Domain};
use crate::world::{dot, PreferenceRecord};

/// Order in which β-DPO's two batch-level mechanisms are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOrder {
    /// Subsample first, then adapt β on the surviving records.
    #[default]
    FilterThenAdapt,
    AdaptThenFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaDpoConfig {
    pub m: f64,
    pub h0: f64,
    /// Fraction of each batch kept by the guided filter; 1 disables subsampling.
    pub filter_fraction: f64,
    pub sigma_init: f64,
    pub momentum: f64,
    /// Lower clamp for β_batch. Unset keeps negative values, as the original rule does.
    pub beta_floor: Option<f64>,
    pub order: FilterOrder,
}

impl Default for BetaDpoConfig {
    fn default() -> Self {
        Self { m: 0.6, h0: 0.0, filter_fraction: 0.8, sigma_init: 1.0, momentum: 0.9, beta_floor: None, order: FilterOrder::default() }
    }
}

impl BetaDpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.m <= 1.0) {
            return Err(Error::InvalidConfig(format!("beta-dpo m must be in (0, 1], got {}", self.m)));
        }
        if !(self.filter_fraction > 0.0 && self.filter_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("filter fraction must be in (0, 1], got {}", self.filter_fraction)));
        }
        if !(self.sigma_init > 0.0 && self.sigma_init.is_finite()) {
            return Err(Error::InvalidConfig("sigma_init must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !self.h0.is_finite() {
            return Err(Error::InvalidConfig("momentum must be in [0, 1) and h0 finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub beta_dpo: Option<BetaDpoConfig>,
    /// Keep θ after every optimizer step in the report.
    pub record_trace: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Dpo { beta: 0.1 },
            epochs: 2,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            beta_dpo: None,
            record_trace: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        match (&self.loss, &self.beta_dpo) {
            (LossKind::BetaDpo { .. }, None) => Err(Error::InvalidConfig("beta-dpo loss needs a beta_dpo section".into())),
            (_, Some(b)) => b.validate(),
            _ => Ok(()),
        }
    }
}

/// Running statistics of implicit margins used by the guided filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub mean: f64,
    pub std: f64,
    pub momentum: f64,
}

/// Smallest running std the filter will accept.
const MIN_FILTER_STD: f64 = 1e-12;

impl FilterState {
    pub fn new(h0: f64, sigma_init: f64, momentum: f64) -> Self {
        Self { mean: h0, std: sigma_init.max(MIN_FILTER_STD), momentum }
    }

    fn updated(&self, margins: &[f64]) -> Self {
        let n = margins.len() as f64;
        let mean = margins.iter().sum::<f64>() / n;
        let std = (margins.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n).sqrt();
        let a = self.momentum;
        Self {
            mean: a * self.mean + (1.0 - a) * mean,
            std: (a * self.std + (1.0 - a) * std).max(MIN_FILTER_STD),
            momentum: a,
        }
    }
}

/// Counters for the failure modes of β-DPO's batch machinery.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BetaIncidents {
    pub negative_beta: usize,
    pub clamped_beta: usize,
    pub filter_fallbacks: usize,
}

/// `β_batch = β (1 + m (h̄ - h0))` with `h̄` the batch mean margin.
///
/// A negative result is counted. With a floor it is clamped (and the clamp
/// counted); without one it is returned as is.
pub fn beta_batch_adapt(base_beta: f64, batch_margins: &[f64], m: f64, h0: f64, floor: Option<f64>, incidents: &mut BetaIncidents) -> Result<f64> {
    if batch_margins.is_empty() {
        return Err(Error::Empty("beta adaptation batch"));
    }
    if !(m > 0.0 && m <= 1.0) {
        return Err(Error::InvalidConfig(format!("m must be in (0, 1], got {m}")));
    }
    if batch_margins.iter().any(|h| !h.is_finite()) {
        return Err(Error::NonFinite("batch margins"));
    }
    let mean = batch_margins.iter().sum::<f64>() / batch_margins.len() as f64;
    let beta = base_beta * (1.0 + m * (mean - h0));
    if beta < 0.0 {
        incidents.negative_beta += 1;
    }
    match floor {
        Some(f) if beta < f => {
            incidents.clamped_beta += 1;
            Ok(f)
        }
        _ => Ok(beta),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Positions kept, ascending, so batch order is preserved.
    pub kept: Vec<usize>,
    pub state: FilterState,
    pub fallback: bool,
}

/// β-guided filtering: keep `⌈p·n⌉` records by weighted sampling without
/// replacement, with weights given by the Normal pdf `N(h; h0, σ²)` of each
/// implicit margin under the running σ, then update σ from the batch.
pub fn beta_guided_filter<R: Rng + ?Sized>(margins: &[f64], state: &FilterState, keep_fraction: f64, h0: f64, rng: &mut R) -> Result<FilterOutcome> {
    if margins.is_empty() {
        return Err(Error::Empty("filter batch"));
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("keep fraction must be in (0, 1], got {keep_fraction}")));
    }
    if margins.iter().any(|h| !h.is_finite()) {
        return Err(Error::NonFinite("filter margins"));
    }
    let n = margins.len();
    let amount = ((keep_fraction * n as f64).ceil() as usize).clamp(1, n);
    let next = state.updated(margins);
    if amount == n {
        return Ok(FilterOutcome { kept: (0..n).collect(), state: next, fallback: false });
    }

    // Scores are only needed up to a common factor: shift log-pdfs so the
    // largest weight is one and the remaining ratios are exact.
    let log_pdf: Vec<f64> = margins.iter().map(|h| -((h - h0) / state.std).powi(2) / 2.0).collect();
    let top = log_pdf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_pdf.iter().map(|l| (l - top).exp()).collect();
    let positive = weights.iter().filter(|w| **w > 0.0).count();

    let (mut kept, fallback) = if positive >= amount {
        let idx = rand::seq::index::sample_weighted(rng, n, |i| weights[i], amount)
            .map_err(|e| Error::Precondition(format!("weighted sampling failed: {e}")))?;
        (idx.into_vec(), false)
    } else {
        // Too many scores underflowed: keep every positive one and fill the
        // rest uniformly from the others.
        let mut kept: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
        let rest: Vec<usize> = (0..n).filter(|&i| weights[i] == 0.0).collect();
        let extra = rand::seq::index::sample(rng, rest.len(), amount - kept.len());
        kept.extend(extra.iter().map(|j| rest[j]));
        (kept, true)
    };
    kept.sort_unstable();
    Ok(FilterOutcome { kept, state: next, fallback })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub effective_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub seed: u64,
    /// Mean step loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: Vec<StepRecord>,
    /// Per-step β_batch; empty unless the loss is β-DPO.
    pub effective_beta: Vec<f64>,
    pub incidents: BetaIncidents,
    /// Largest `|∂L/∂h_θ|` seen over all per-record contributions.
    pub max_abs_grad_h: f64,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dataset_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_oracle_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reward_model: Option<RewardFitSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta_trace: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardFitSummary {
    pub stopped_epoch: usize,
    pub val_loss: f64,
}

/// Mini-batch training of a log-linear policy from `θ = 0`.
///
/// MADPO needs `reward`; its explicit margins are computed once per record,
/// so the weights never change during training.
pub fn train_policy(train: &[PreferenceRecord], cfg: &TrainConfig, reward: Option<&RewardParams>) -> Result<(PolicyParams, RunReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let diffs: Vec<Vec<f64>> = train.iter().map(PreferenceRecord::feature_diff).collect();
    let dim = diffs[0].len();
    let h_phi: Vec<f64> = match (&cfg.loss, reward) {
        (LossKind::Madpo { .. }, Some(p)) => train.iter().map(|r| explicit_margin(p, r)).collect::<Result<_>>()?,
        (LossKind::Madpo { .. }, None) => {
            return Err(Error::Precondition("MADPO training needs fitted reward parameters".into()))
        }
        _ => vec![0.0; train.len()],
    };
    train_on_diffs(&diffs, &h_phi, dim, cfg)
}

pub(crate) fn train_on_diffs(diffs: &[Vec<f64>], h_phi: &[f64], dim: usize, cfg: &TrainConfig) -> Result<(PolicyParams, RunReport)> {
    let mut theta = vec![0.0; dim];
    let mut opt = Optimizer::new(cfg.optimizer, dim)?;
    let beta_cfg = cfg.beta_dpo.unwrap_or_default();
    let is_beta_dpo = matches!(cfg.loss, LossKind::BetaDpo { .. });
    let mut filter = FilterState::new(beta_cfg.h0, beta_cfg.sigma_init, beta_cfg.momentum);
    let mut incidents = BetaIncidents::default();

    let mut report = RunReport {
        method: cfg.loss.label(),
        seed: cfg.seed,
        epoch_loss: Vec::with_capacity(cfg.epochs),
        steps: Vec::new(),
        effective_beta: Vec::new(),
        incidents,
        max_abs_grad_h: 0.0,
        config_hash: crate::provenance::config_hash(cfg)?,
        dataset_hash: None,
        mean_oracle_reward: None,
        std_error: None,
        reward_model: None,
        theta_trace: cfg.record_trace.then(Vec::new),
    };

    let mut order: Vec<usize> = (0..diffs.len()).collect();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::stream(cfg.seed, Domain::SHUFFLE, epoch as u64));
        let mut epoch_total = 0.0;
        let mut epoch_steps = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let margins: Vec<f64> = batch.iter().map(|&i| dot(&theta, &diffs[i])).collect();

            let (kept, beta) = if is_beta_dpo {
                let mut r = rng::stream(cfg.seed, Domain::FILTER, step as u64);
                let base = cfg.loss.beta();
                let adapt = |idx: &[usize], inc: &mut BetaIncidents| {
                    let hs: Vec<f64> = idx.iter().map(|&j| margins[j]).collect();
                    beta_batch_adapt(base, &hs, beta_cfg.m, beta_cfg.h0, beta_cfg.beta_floor, inc)
                };
                let all: Vec<usize> = (0..batch.len()).collect();
                let (kept, beta) = match beta_cfg.order {
                    FilterOrder::FilterThenAdapt => {
                        let out = beta_guided_filter(&margins, &filter, beta_cfg.filter_fraction, beta_cfg.h0, &mut r)?;
                        filter = out.state;
                        incidents.filter_fallbacks += usize::from(out.fallback);
                        let beta = adapt(&out.kept, &mut incidents)?;
                        (out.kept, beta)
                    }
                    FilterOrder::AdaptThenFilter => {
                        let beta = adapt(&all, &mut incidents)?;
                        let out = beta_guided_filter(&margins, &filter, beta_cfg.filter_fraction, beta_cfg.h0, &mut r)?;
                        filter = out.state;
                        incidents.filter_fallbacks += usize::from(out.fallback);
                        (out.kept, beta)
                    }
                };
                (kept, beta)
            } else {
                ((0..batch.len()).collect(), cfg.loss.beta())
            };

            let mut grad = vec![0.0; dim];
            let mut loss = 0.0;
            for &j in &kept {
                let i = batch[j];
                let h = margins[j];
                let (l, g) = match cfg.loss {
                    LossKind::BetaDpo { .. } => (dpo_loss(h, beta), dpo_grad(h, beta)),
                    LossKind::Ipo { beta } => ((h - ipo_target(beta)).powi(2), 2.0 * (h - ipo_target(beta))),
                    _ => (per_pair_loss(h, h_phi[i], &cfg.loss)?, loss_grad_h_theta(h, h_phi[i], &cfg.loss)?),
                };
                loss += l;
                report.max_abs_grad_h = report.max_abs_grad_h.max(g.abs());
                grad.iter_mut().zip(&diffs[i]).for_each(|(a, z)| *a += g * z);
            }
            let n = kept.len() as f64;
            loss /= n;
            grad.iter_mut().for_each(|g| *g /= n);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("step {step}: loss {loss}, effective beta {beta}"),
                });
            }
            opt.step(&mut theta, &grad)?;

            report.steps.push(StepRecord { epoch, step, loss, effective_beta: beta });
            if is_beta_dpo {
                report.effective_beta.push(beta);
            }
            if let Some(trace) = report.theta_trace.as_mut() {
                trace.push(theta.clone());
            }
            epoch_total += loss;
            epoch_steps += 1;
            step += 1;
        }
        report.epoch_loss.push(epoch_total / epoch_steps as f64);
    }
    report.incidents = incidents;
    Ok((PolicyParams { theta }, report))
}

pub struct PipelineOutput {
    pub policy: PolicyParams,
    pub reward: FitReport,
    pub report: RunReport,
}

/// Fit the reward model with early stopping on `val`, freeze it, and train
/// the policy with the margin-adaptive loss.
pub fn two_step_pipeline(
    train: &[PreferenceRecord],
    val: &[PreferenceRecord],
    weight: WeightConfig,
    ablation: Ablation,
    train_cfg: &TrainConfig,
    rm_cfg: &RewardFitConfig,
) -> Result<PipelineOutput> {
    let fit = fit_reward_model(train, val, rm_cfg)?;
    let mut cfg = *train_cfg;
    cfg.loss = LossKind::madpo(train_cfg.loss.beta(), weight, ablation)?;
    let (policy, mut report) = train_policy(train, &cfg, Some(&fit.final_params))?;
    report.reward_model = Some(RewardFitSummary { stopped_epoch: fit.stopped_epoch, val_loss: fit.best_val_loss() });
    Ok(PipelineOutput { policy, reward: fit, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub perturbations: usize,
    pub checks: usize,
    pub violations: usize,
    /// `max |log σ(β h_θ)|` over the records.
    pub l_theta_max: f64,
    pub l_w: f64,
    /// Largest `|ΔL| - bound` seen; negative when every check holds with room.
    pub worst_slack: f64,
}

/// Check that moving the frozen reward parameters changes each record's
/// loss by at most `L_θ,max · L_w · |Δh_φ|`.
///
/// `l_w` is a Lipschitz constant of the weight, `radius` bounds `‖δ‖`.
#[allow(clippy::too_many_arguments)]
pub fn plugin_stability_probe(
    records: &[PreferenceRecord],
    theta: &PolicyParams,
    phi: &RewardParams,
    kind: &LossKind,
    l_w: f64,
    n_perturbations: usize,
    radius: f64,
    seed: u64,
) -> Result<ProbeReport> {
    if records.is_empty() {
        return Err(Error::Empty("probe records"));
    }
    let LossKind::Madpo { beta, .. } = *kind else {
        return Err(Error::Precondition("the stability probe applies to the margin-adaptive loss".into()));
    };
    let diffs: Vec<Vec<f64>> = records.iter().map(PreferenceRecord::feature_diff).collect();
    let h_theta: Vec<f64> = diffs.iter().map(|z| dot(&theta.theta, z)).collect();
    let h_phi: Vec<f64> = diffs.iter().map(|z| dot(&phi.phi, z)).collect();
    let l_theta_max = h_theta.iter().map(|h| log_sigmoid(beta * h).abs()).fold(0.0, f64::max);
    let base: Vec<f64> = h_theta.iter().zip(&h_phi).map(|(t, p)| per_pair_loss(*t, *p, kind)).collect::<Result<_>>()?;

    let dim = phi.phi.len();
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..n_perturbations {
        let mut r = rng::stream(seed, Domain::PROBE, k as u64);
        let mut delta = rng::normal_vec(&mut r, dim);
        let norm = dot(&delta, &delta).sqrt();
        let len = radius * rng::open01(&mut r);
        delta.iter_mut().for_each(|d| *d *= len / norm);
        for (i, z) in diffs.iter().enumerate() {
            let h_new = h_phi[i] + dot(&delta, z);
            let lhs = (per_pair_loss(h_theta[i], h_new, kind)? - base[i]).abs();
            let bound = l_theta_max * l_w * (h_new - h_phi[i]).abs() + 1e-9;
            worst = worst.max(lhs - bound);
            if lhs > bound {
                violations += 1;
            }
        }
    }
    Ok(ProbeReport {
        perturbations: n_perturbations,
        checks: n_perturbations * records.len(),
        violations,
        l_theta_max,
        l_w,
        worst_slack: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Prompt, Response, Source, Tier};

    fn rec(id: u64, x: Vec<f64>, yw: Vec<f64>, yl: Vec<f64>) -> PreferenceRecord {
        PreferenceRecord {
            prompt: Prompt { id, features: x },
            winner: Response { features: yw, source: Source::Generated },
            loser: Response { features: yl, source: Source::Generated },
            oracle_reward_w: 0.0,
            oracle_reward_l: 0.0,
            tier: Tier::High,
        }
    }

    fn toy(n: usize) -> Vec<PreferenceRecord> {
        (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                rec(i as u64, vec![t - 0.5], vec![1.0 + t], vec![-1.0 + 0.3 * t])
            })
            .collect()
    }

    #[test]
    fn beta_adapt_examples() {
        let mut inc = BetaIncidents::default();
        assert_eq!(beta_batch_adapt(0.1, &[0.5, -0.5], 0.6, 0.0, None, &mut inc).unwrap(), 0.1);
        let b = beta_batch_adapt(0.1, &[1.0], 0.6, 0.0, None, &mut inc).unwrap();
        assert!((b - 0.16).abs() < 1e-15);
        assert_eq!(inc.negative_beta, 0);
        let b = beta_batch_adapt(0.1, &[-2.0, -2.0], 0.6, 0.0, None, &mut inc).unwrap();
        assert!((b + 0.02).abs() < 1e-15);
        assert_eq!(inc.negative_beta, 1);
        let b = beta_batch_adapt(0.1, &[-2.0], 0.6, 0.0, Some(0.01), &mut inc).unwrap();
        assert_eq!(b, 0.01);
        assert_eq!((inc.negative_beta, inc.clamped_beta), (2, 1));
        assert!(beta_batch_adapt(0.1, &[], 0.6, 0.0, None, &mut inc).is_err());
        assert!(beta_batch_adapt(0.1, &[1.0], 0.0, 0.0, None, &mut inc).is_err());
    }

    #[test]
    fn filter_examples() {
        let st = FilterState::new(0.0, 1.0, 0.9);
        let mut r = rng::stream(1, Domain::FILTER, 0);
        let all = beta_guided_filter(&[3.0, -1.0, 0.2], &st, 1.0, 0.0, &mut r).unwrap();
        assert_eq!(all.kept, vec![0, 1, 2]);
        for s in 0..200 {
            let mut r = rng::stream(s, Domain::FILTER, 0);
            let out = beta_guided_filter(&[0.0, 10.0], &st, 0.5, 0.0, &mut r).unwrap();
            assert_eq!(out.kept, vec![0]);
        }
        let run = |s| beta_guided_filter(&[0.1, 0.5, -0.3, 1.2, 0.0], &st, 0.6, 0.0, &mut rng::stream(s, Domain::FILTER, 4)).unwrap();
        assert_eq!(run(9), run(9));
        assert_eq!(run(9).kept.len(), 3);
    }

    #[test]
    fn filter_updates_sigma_with_momentum() {
        let st = FilterState::new(0.0, 1.0, 0.9);
        let mut r = rng::stream(1, Domain::FILTER, 0);
        let out = beta_guided_filter(&[-3.0, 3.0], &st, 1.0, 0.0, &mut r).unwrap();
        assert!((out.state.std - (0.9 + 0.1 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn filter_falls_back_when_scores_underflow() {
        let st = FilterState::new(0.0, 1.0, 0.9);
        let mut r = rng::stream(2, Domain::FILTER, 0);
        let out = beta_guided_filter(&[0.0, 100.0, 200.0, 300.0], &st, 0.75, 0.0, &mut r).unwrap();
        assert!(out.fallback);
        assert_eq!(out.kept.len(), 3);
        assert!(out.kept.contains(&0));
    }

    #[test]
    fn zero_step_keeps_theta() {
        let cfg = TrainConfig { optimizer: OptimizerConfig::Sgd { lr: 0.0 }, epochs: 3, ..Default::default() };
        let (p, rep) = train_policy(&toy(40), &cfg, None).unwrap();
        assert!(p.theta.iter().all(|v| *v == 0.0));
        assert_eq!(rep.epoch_loss.len(), 3);
    }

    #[test]
    fn dpo_descends_on_separable_data() {
        let cfg = TrainConfig { optimizer: OptimizerConfig::Sgd { lr: 0.5 }, epochs: 4, batch_size: 40, ..Default::default() };
        let (_, rep) = train_policy(&toy(40), &cfg, None).unwrap();
        for w in rep.epoch_loss[..3].windows(2) {
            assert!(w[1] < w[0], "{:?}", rep.epoch_loss);
        }
    }

    #[test]
    fn madpo_requires_reward() {
        let w = WeightConfig::with_intensity(2.0, 2.0).unwrap();
        let cfg = TrainConfig { loss: LossKind::madpo(0.1, w, Ablation::Full).unwrap(), ..Default::default() };
        assert!(matches!(train_policy(&toy(8), &cfg, None), Err(Error::Precondition(_))));
        let bad = TrainConfig { loss: LossKind::BetaDpo { beta: 0.1 }, ..Default::default() };
        assert!(train_policy(&toy(8), &bad, None).is_err());
    }

    #[test]
    fn beta_dpo_runs_both_orders() {
        for order in [FilterOrder::FilterThenAdapt, FilterOrder::AdaptThenFilter] {
            let cfg = TrainConfig {
                loss: LossKind::BetaDpo { beta: 0.1 },
                beta_dpo: Some(BetaDpoConfig { order, ..Default::default() }),
                batch_size: 8,
                ..Default::default()
            };
            let (_, rep) = train_policy(&toy(40), &cfg, None).unwrap();
            assert_eq!(rep.effective_beta.len(), rep.steps.len());
            assert_eq!(rep.effective_beta[0], 0.1);
        }
    }
}
