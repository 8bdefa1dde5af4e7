//! One (method, tier, seed) cell of the comparison grid, end to end:
//! world, dataset, split, training, and best-of-k evaluation.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{Ablation, LossKind, WeightConfig};
use crate::optim::OptimizerConfig;
use crate::policy::{mean_oracle_reward, EvalSummary, PolicyParams, ReferencePolicy};
use crate::provenance::{bytes_hash, config_hash};
use crate::reward::{FitReport, RewardFitConfig};
use crate::trainer::{train_policy, two_step_pipeline, BetaDpoConfig, RunReport, TrainConfig};
use crate::world::{shuffle_and_split, write_ndjson, DatasetHeader, PreferenceRecord, Prompt, Tier, World, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Dpo,
    Ipo,
    BetaDpo,
    Madpo,
    MadpoAmpOnly,
    MadpoRegOnly,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Dpo, Method::Ipo, Method::BetaDpo, Method::Madpo, Method::MadpoAmpOnly, Method::MadpoRegOnly];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Dpo => "dpo",
            Method::Ipo => "ipo",
            Method::BetaDpo => "beta-dpo",
            Method::Madpo => "madpo",
            Method::MadpoAmpOnly => "madpo-amp-only",
            Method::MadpoRegOnly => "madpo-reg-only",
        }
    }

    pub fn ablation(&self) -> Option<Ablation> {
        match self {
            Method::Madpo => Some(Ablation::Full),
            Method::MadpoAmpOnly => Some(Ablation::AmpOnly),
            Method::MadpoRegOnly => Some(Ablation::RegOnly),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.label() == key)
            .or(match key.as_str() {
                "betadpo" | "beta" => Some(Method::BetaDpo),
                "amp-only" => Some(Method::MadpoAmpOnly),
                "reg-only" => Some(Method::MadpoRegOnly),
                _ => None,
            })
            .ok_or_else(|| Error::Parse(format!("unknown method '{s}'")))
    }
}

/// Everything a cell needs besides its method, tier and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub world: WorldConfig,
    pub n_pairs: usize,
    pub n_train: usize,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub madpo: WeightConfig,
    pub beta_dpo: BetaDpoConfig,
    pub reward_model: RewardFitConfig,
    pub k_candidates: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            n_pairs: 1200,
            n_train: 1000,
            beta: 0.1,
            epochs: 2,
            batch_size: 32,
            optimizer: OptimizerConfig::adam(5e-2),
            madpo: WeightConfig::with_intensity(2.0, 2.0).expect("valid default"),
            beta_dpo: BetaDpoConfig::default(),
            reward_model: RewardFitConfig::default(),
            k_candidates: 8,
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.madpo.validate()?;
        self.beta_dpo.validate()?;
        self.optimizer.validate()?;
        if !(self.n_train >= 1 && self.n_train < self.n_pairs) {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= n_train < n_pairs, got n_train={}, n_pairs={}",
                self.n_train, self.n_pairs
            )));
        }
        if self.k_candidates == 0 {
            return Err(Error::InvalidConfig("k_candidates must be positive".into()));
        }
        LossKind::dpo(self.beta)?;
        Ok(())
    }

    pub fn train_fraction(&self) -> f64 {
        self.n_train as f64 / self.n_pairs as f64
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }

    /// The loss and trainer configuration that `method` runs with.
    pub fn train_config(&self, method: Method, seed: u64) -> Result<TrainConfig> {
        let loss = match method {
            Method::Dpo => LossKind::dpo(self.beta)?,
            Method::Ipo => LossKind::ipo(self.beta)?,
            Method::BetaDpo => LossKind::beta_dpo(self.beta)?,
            m => LossKind::madpo(self.beta, self.madpo, m.ablation().expect("madpo variant"))?,
        };
        Ok(TrainConfig {
            loss,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            seed,
            beta_dpo: matches!(method, Method::BetaDpo).then_some(self.beta_dpo),
            record_trace: false,
        })
    }
}

/// A tier dataset with its split and provenance.
#[derive(Debug, Clone)]
pub struct TierData {
    pub tier: Tier,
    pub records: Vec<PreferenceRecord>,
    pub train: Vec<PreferenceRecord>,
    pub eval: Vec<PreferenceRecord>,
    pub dataset_hash: String,
}

impl TierData {
    pub fn from_records(tier: Tier, records: Vec<PreferenceRecord>, settings: &Settings, seed: u64) -> Result<Self> {
        let header = DatasetHeader { seed, tier, config_hash: settings.hash()? };
        let mut buf = Vec::new();
        write_ndjson(&mut buf, &header, &records)?;
        let (train, eval) = shuffle_and_split(&records, seed, settings.train_fraction())?;
        Ok(Self { tier, records, train, eval, dataset_hash: bytes_hash(&buf) })
    }

    pub fn generate(world: &World, tier: Tier, settings: &Settings) -> Result<Self> {
        let records = world.build_dataset(tier, settings.n_pairs)?;
        Self::from_records(tier, records, settings, world.seed)
    }

    pub fn eval_prompts(&self) -> Vec<Prompt> {
        self.eval.iter().map(|r| r.prompt.clone()).collect()
    }
}

pub struct CellOutcome {
    pub report: RunReport,
    pub policy: PolicyParams,
    pub reward: Option<FitReport>,
    pub eval: EvalSummary,
}

/// Train `method` on `data.train` and score it on the evaluation prompts.
/// The evaluation split doubles as the reward model's early-stopping set.
pub fn run_on(settings: &Settings, world: &World, data: &TierData, method: Method, seed: u64) -> Result<CellOutcome> {
    settings.validate()?;
    let cfg = settings.train_config(method, seed)?;
    let (policy, mut report, reward) = match method.ablation() {
        Some(ablation) => {
            let out = two_step_pipeline(&data.train, &data.eval, settings.madpo, ablation, &cfg, &settings.reward_model)?;
            (out.policy, out.report, Some(out.reward))
        }
        None => {
            let (p, r) = train_policy(&data.train, &cfg, None)?;
            (p, r, None)
        }
    };
    let reference = ReferencePolicy::uniform(settings.world.psi_dim());
    let eval = mean_oracle_reward(&policy, &reference, &data.eval_prompts(), world, settings.k_candidates, seed)?;
    report.mean_oracle_reward = Some(eval.mean_reward);
    report.std_error = Some(eval.std_error);
    report.dataset_hash = Some(data.dataset_hash.clone());
    report.config_hash = settings.hash()?;
    Ok(CellOutcome { report, policy, reward, eval })
}

/// Generate the world and dataset for `seed` and run one cell.
pub fn run_cell(settings: &Settings, method: Method, tier: Tier, seed: u64) -> Result<CellOutcome> {
    let world = World::new(settings.world, seed)?;
    let data = TierData::generate(&world, tier, settings)?;
    run_on(settings, &world, &data, method, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub tier: Tier,
    pub seed: u64,
    pub candidates: Vec<WeightConfig>,
    /// Mean oracle reward on the inner validation prompts, per candidate.
    pub scores: Vec<f64>,
    pub best: WeightConfig,
}

/// Choose a weight configuration using only training pairs: hold out a
/// fifth of them, fit and train on the rest, and score each candidate on
/// the held-out prompts.
pub fn select_weight_config(settings: &Settings, world: &World, data: &TierData, candidates: &[WeightConfig], seed: u64) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Empty("selection candidates"));
    }
    let select_seed = seed ^ 0x5e1ec7;
    let (inner_train, inner_val) = shuffle_and_split(&data.train, select_seed, 0.8)?;
    let inner = TierData {
        tier: data.tier,
        records: data.train.clone(),
        train: inner_train,
        eval: inner_val,
        dataset_hash: data.dataset_hash.clone(),
    };
    let mut scores = Vec::with_capacity(candidates.len());
    for w in candidates {
        let s = Settings { madpo: *w, ..*settings };
        scores.push(run_on(&s, world, &inner, Method::Madpo, seed)?.eval.mean_reward);
    }
    let best_idx = scores
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| if *s > scores[b] { i } else { b });
    Ok(Selection { tier: data.tier, seed, candidates: candidates.to_vec(), scores, best: candidates[best_idx] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_parsing() {
        for m in Method::ALL {
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
        }
        assert_eq!("BETA_DPO".parse::<Method>().unwrap(), Method::BetaDpo);
        assert!("ppo".parse::<Method>().is_err());
    }

    #[test]
    fn labels_agree_with_losses() {
        let s = Settings::default();
        for m in Method::ALL {
            assert_eq!(s.train_config(m, 0).unwrap().loss.label(), m.label());
        }
    }

    #[test]
    fn small_cell_is_deterministic() {
        let s = Settings { n_pairs: 120, n_train: 100, ..Default::default() };
        let a = run_cell(&s, Method::Madpo, Tier::Low, 3).unwrap();
        let b = run_cell(&s, Method::Madpo, Tier::Low, 3).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.epoch_loss.len(), 2);
        assert!(a.report.reward_model.is_some());
    }

    #[test]
    fn settings_validation() {
        let bad = Settings { n_train: 1200, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(Settings::default().validate().is_ok());
    }
}
