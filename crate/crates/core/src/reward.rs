//! Step one of the two-step pipeline: a linear Bradley-Terry reward model
//! `r_φ(x, y) = φᵀψ(x, y)` fitted by gradient descent on the pairwise
//! negative log-likelihood, with patience-based early stopping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{sigmoid, softplus};
use crate::rng::{self, Domain};
use crate::world::{dot, feature_map, PreferenceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub phi: Vec<f64>,
    /// Constant that makes rewards zero-mean over the fitting data when
    /// centering is requested. It cancels in every margin.
    #[serde(default)]
    pub offset: f64,
}

impl RewardParams {
    pub fn zeros(dim: usize) -> Self {
        Self { phi: vec![0.0; dim], offset: 0.0 }
    }

    pub fn reward(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let psi = feature_map(x, y);
        check_dim(self.phi.len(), psi.len())?;
        Ok(dot(&self.phi, &psi) + self.offset)
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// `h_φ = r_φ(x, y_w) - r_φ(x, y_l)`.
pub fn explicit_margin(params: &RewardParams, rec: &PreferenceRecord) -> Result<f64> {
    let z = rec.feature_diff();
    check_dim(params.phi.len(), z.len())?;
    Ok(dot(&params.phi, &z))
}

/// Mean of `-log σ(h_φ)` over the batch.
pub fn rm_loss(params: &RewardParams, batch: &[PreferenceRecord]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("reward-model batch"));
    }
    let diffs = diffs_of(batch);
    check_dim(params.phi.len(), diffs[0].len())?;
    Ok(loss_on(&params.phi, &diffs))
}

/// Analytic gradient `mean(-σ(-h_φ) (ψ_w - ψ_l))`.
pub fn rm_grad(params: &RewardParams, batch: &[PreferenceRecord]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Empty("reward-model batch"));
    }
    let diffs = diffs_of(batch);
    check_dim(params.phi.len(), diffs[0].len())?;
    Ok(grad_on(&params.phi, &diffs, &(0..diffs.len()).collect::<Vec<_>>()))
}

fn diffs_of(batch: &[PreferenceRecord]) -> Vec<Vec<f64>> {
    batch.iter().map(PreferenceRecord::feature_diff).collect()
}

fn loss_on(phi: &[f64], diffs: &[Vec<f64>]) -> f64 {
    diffs.iter().map(|z| softplus(-dot(phi, z))).sum::<f64>() / diffs.len() as f64
}

fn grad_on(phi: &[f64], diffs: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
    let mut g = vec![0.0; phi.len()];
    for &i in idx {
        let z = &diffs[i];
        let s = -sigmoid(-dot(phi, z));
        g.iter_mut().zip(z).for_each(|(gj, zj)| *gj += s * zj);
    }
    let n = idx.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardFitConfig {
    pub step_size: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// `None` means full-batch descent.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Standard deviation of a random initialisation; zero starts at `φ = 0`.
    pub init_std: f64,
    pub center: bool,
}

impl Default for RewardFitConfig {
    fn default() -> Self {
        Self { step_size: 0.1, max_epochs: 500, patience: 5, batch_size: None, seed: 0, init_std: 0.0, center: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Index 0 holds the loss of the initial parameters.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Epoch whose parameters were kept (minimum validation loss).
    pub stopped_epoch: usize,
    pub final_params: RewardParams,
}

impl FitReport {
    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.stopped_epoch]
    }
}

pub fn fit_reward_model(train: &[PreferenceRecord], val: &[PreferenceRecord], cfg: &RewardFitConfig) -> Result<FitReport> {
    if train.is_empty() {
        return Err(Error::Empty("reward-model training set"));
    }
    if val.is_empty() {
        return Err(Error::Empty("reward-model validation set"));
    }
    if !(cfg.step_size.is_finite() && cfg.step_size >= 0.0) {
        return Err(Error::InvalidConfig(format!("reward step size must be >= 0, got {}", cfg.step_size)));
    }
    let zt = diffs_of(train);
    let zv = diffs_of(val);
    let dim = zt[0].len();
    check_dim(dim, zv[0].len())?;

    let mut phi = if cfg.init_std > 0.0 {
        let mut r = rng::stream(cfg.seed, Domain::REWARD_INIT, 0);
        rng::normal_vec(&mut r, dim).into_iter().map(|v| v * cfg.init_std).collect()
    } else {
        vec![0.0; dim]
    };

    let mut train_loss = vec![loss_on(&phi, &zt)];
    let mut val_loss = vec![loss_on(&phi, &zv)];
    let mut best = (val_loss[0], phi.clone(), 0usize);
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..zt.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        match cfg.batch_size {
            None => {
                let g = grad_on(&phi, &zt, &order);
                phi.iter_mut().zip(&g).for_each(|(p, gj)| *p -= cfg.step_size * gj);
            }
            Some(bs) => {
                order.shuffle(&mut rng::stream(cfg.seed, Domain::SHUFFLE, epoch as u64));
                for chunk in order.chunks(bs.max(1)) {
                    let g = grad_on(&phi, &zt, chunk);
                    phi.iter_mut().zip(&g).for_each(|(p, gj)| *p -= cfg.step_size * gj);
                }
            }
        }
        let tl = loss_on(&phi, &zt);
        let vl = loss_on(&phi, &zv);
        if !tl.is_finite() || !vl.is_finite() {
            return Err(Error::Diverged { epoch, detail: format!("reward-model loss became {tl} / {vl}") });
        }
        train_loss.push(tl);
        val_loss.push(vl);
        if vl < best.0 {
            best = (vl, phi.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (_, phi, stopped_epoch) = best;
    let mut params = RewardParams { phi, offset: 0.0 };
    if cfg.center {
        params.offset = -mean_reward(&params, train);
    }
    Ok(FitReport { train_loss, val_loss, stopped_epoch, final_params: params })
}

/// Mean of `φᵀψ` over every response (winners and losers) in `records`.
fn mean_reward(params: &RewardParams, records: &[PreferenceRecord]) -> f64 {
    let total: f64 = records
        .iter()
        .map(|r| {
            dot(&params.phi, &feature_map(&r.prompt.features, &r.winner.features))
                + dot(&params.phi, &feature_map(&r.prompt.features, &r.loser.features))
        })
        .sum();
    total / (2 * records.len()) as f64
}

/// On-disk form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModelFile {
    pub phi: Vec<f64>,
    pub config_hash: String,
    pub stopped_epoch: usize,
    pub val_loss: f64,
}

impl RewardModelFile {
    pub fn from_report(report: &FitReport, config_hash: &str) -> Self {
        Self {
            phi: report.final_params.phi.clone(),
            config_hash: config_hash.to_string(),
            stopped_epoch: report.stopped_epoch,
            val_loss: report.best_val_loss(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Prompt, Response, Source, Tier};

    fn rec(x: Vec<f64>, yw: Vec<f64>, yl: Vec<f64>) -> PreferenceRecord {
        PreferenceRecord {
            prompt: Prompt { id: 0, features: x },
            winner: Response { features: yw, source: Source::Generated },
            loser: Response { features: yl, source: Source::Generated },
            oracle_reward_w: 0.0,
            oracle_reward_l: 0.0,
            tier: Tier::High,
        }
    }

    #[test]
    fn margin_examples() {
        let r = rec(vec![1.0], vec![2.0], vec![-1.0]);
        assert_eq!(explicit_margin(&RewardParams::zeros(3), &r).unwrap(), 0.0);
        let same = rec(vec![1.0], vec![2.0], vec![2.0]);
        let p = RewardParams { phi: vec![0.3, -0.7, 1.1], offset: 0.0 };
        assert_eq!(explicit_margin(&p, &same).unwrap(), 0.0);
        let swapped = rec(vec![1.0], vec![-1.0], vec![2.0]);
        assert_eq!(explicit_margin(&p, &r).unwrap(), -explicit_margin(&p, &swapped).unwrap());
        assert!(explicit_margin(&RewardParams::zeros(4), &r).is_err());
    }

    #[test]
    fn loss_examples() {
        let r = rec(vec![0.0], vec![1.0], vec![0.0]);
        assert!((rm_loss(&RewardParams::zeros(3), std::slice::from_ref(&r)).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        // ψ difference is (0, 1, 0), so φ_y = 2 gives h = 2
        let p = RewardParams { phi: vec![0.0, 2.0, 0.0], offset: 0.0 };
        assert!((rm_loss(&p, &[r]).unwrap() - 0.126_928_011_042_972_6).abs() < 1e-12);
        assert!(rm_loss(&p, &[]).is_err());
    }

    #[test]
    fn zero_epochs_returns_initial() {
        let d = vec![rec(vec![1.0], vec![1.0], vec![0.0])];
        let cfg = RewardFitConfig { max_epochs: 0, ..Default::default() };
        let rep = fit_reward_model(&d, &d, &cfg).unwrap();
        assert_eq!(rep.final_params.phi, vec![0.0; 3]);
        assert_eq!(rep.val_loss.len(), 1);
        assert_eq!(rep.stopped_epoch, 0);
    }

    #[test]
    fn separable_descent() {
        let d: Vec<_> = (0..6)
            .map(|i| rec(vec![0.5 * i as f64], vec![1.0 + i as f64 * 0.1], vec![-1.0]))
            .collect();
        let cfg = RewardFitConfig { max_epochs: 20, patience: 50, ..Default::default() };
        let rep = fit_reward_model(&d, &d, &cfg).unwrap();
        for w in rep.val_loss[..10].windows(2) {
            assert!(w[1] < w[0]);
        }
        let best = rep.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(rep.best_val_loss(), best);
    }

    #[test]
    fn centering_leaves_margins_alone() {
        let d: Vec<_> = (0..5).map(|i| rec(vec![i as f64], vec![1.0], vec![0.5 - i as f64])).collect();
        let plain = fit_reward_model(&d, &d, &RewardFitConfig { max_epochs: 30, ..Default::default() }).unwrap();
        let cfg = RewardFitConfig { max_epochs: 30, center: true, ..Default::default() };
        let centered = fit_reward_model(&d, &d, &cfg).unwrap();
        assert_eq!(plain.final_params.phi, centered.final_params.phi);
        for r in &d {
            let a = explicit_margin(&plain.final_params, r).unwrap();
            let b = explicit_margin(&centered.final_params, r).unwrap();
            assert_eq!(a, b);
        }
        assert!(centered.final_params.offset != 0.0);
    }
}
