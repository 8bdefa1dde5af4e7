//! Synthetic preference world.
//!
//! Prompts and responses are Gaussian feature vectors. A fixed bilinear score
//! `s(x, y) = scale · θ*ᵀ ψ(x, y)` over `ψ(x, y) = [x, y, x ⊙ y]` is squashed
//! into a bounded ground-truth reward `6 (σ(s) - 0.5) ∈ (-3, 3)`. Annotator
//! choices add independent Gumbel noise to both rewards, which makes the
//! choice probability exactly Bradley-Terry in the reward gap.
//!
//! Two response samplers exist. "Generated" responses are centred along the
//! reward-increasing direction of `θ*`, like positive-leaning generations of a
//! tuned model. "Negative corpus" responses are centred on the opposite side,
//! with the centre found by bisection so that their mean reward hits a target.

use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::sigmoid;
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    High,
    Medium,
    Low,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::High, Tier::Medium, Tier::Low];

    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::High => "high",
            Tier::Medium => "medium",
            Tier::Low => "low",
        }
    }
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(Tier::High),
            "medium" | "med" => Ok(Tier::Medium),
            "low" => Ok(Tier::Low),
            other => Err(Error::Parse(format!("unknown tier '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Generated,
    NegativeCorpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: u64,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub features: Vec<f64>,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    pub prompt: Prompt,
    pub winner: Response,
    pub loser: Response,
    pub oracle_reward_w: f64,
    pub oracle_reward_l: f64,
    pub tier: Tier,
}

impl PreferenceRecord {
    /// `ψ(x, y_w) - ψ(x, y_l)`: the direction every linear margin is taken along.
    pub fn feature_diff(&self) -> Vec<f64> {
        let w = feature_map(&self.prompt.features, &self.winner.features);
        let l = feature_map(&self.prompt.features, &self.loser.features);
        w.iter().zip(&l).map(|(a, b)| a - b).collect()
    }

    pub fn oracle_margin(&self) -> f64 {
        self.oracle_reward_w - self.oracle_reward_l
    }
}

/// Joint feature map `ψ(x, y) = [x, y, x ⊙ y]`; requires `len(x) == len(y)`.
pub fn feature_map(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() + 2 * y.len());
    out.extend_from_slice(x);
    out.extend_from_slice(y);
    out.extend(x.iter().zip(y).map(|(a, b)| a * b));
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `f(p) = 6 (p - 0.5)` applied to `p = σ(s)`.
pub fn reward_from_score(s: f64) -> f64 {
    6.0 * (sigmoid(s) - 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub dx: usize,
    pub dy: usize,
    /// Norm of the oracle score vector.
    pub score_scale: f64,
    /// Distance of the generated-response mean from the origin along the
    /// reward-increasing direction, in feature units.
    pub gen_center: f64,
    pub gen_std: f64,
    /// Mean oracle reward the negative corpus is calibrated to.
    pub neg_reward_target: f64,
    pub neg_std: f64,
    /// Minimum oracle reward of the "high-scoring" generation in low-quality pairs.
    pub high_score_threshold: f64,
    pub calibration_samples: usize,
    pub max_rejections: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dx: 8,
            dy: 8,
            score_scale: 0.2,
            gen_center: 3.8,
            gen_std: 3.0,
            neg_reward_target: -1.2,
            neg_std: 2.25,
            high_score_threshold: 1.0,
            calibration_samples: 4000,
            max_rejections: 10_000,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dx == 0 || self.dy == 0 || self.dx != self.dy {
            return Err(Error::InvalidConfig(format!(
                "feature dims must be positive and equal (x ⊙ y needs it), got dx={}, dy={}",
                self.dx, self.dy
            )));
        }
        let pos = [self.score_scale, self.gen_std, self.neg_std];
        if !pos.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidConfig("score_scale and sampler stds must be > 0".into()));
        }
        if !(self.neg_reward_target > -3.0 && self.neg_reward_target < 3.0) {
            return Err(Error::InvalidConfig("neg_reward_target must lie in (-3, 3)".into()));
        }
        if !(self.high_score_threshold < 3.0) || !self.gen_center.is_finite() {
            return Err(Error::InvalidConfig("high_score_threshold must be < 3".into()));
        }
        if self.calibration_samples == 0 || self.max_rejections == 0 {
            return Err(Error::InvalidConfig("sample counts must be positive".into()));
        }
        Ok(())
    }

    pub fn psi_dim(&self) -> usize {
        self.dx + 2 * self.dy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthOracle {
    /// Unit-norm score direction over `ψ`.
    pub theta_star: Vec<f64>,
    pub score_scale: f64,
    pub dx: usize,
    pub dy: usize,
}

impl GroundTruthOracle {
    pub fn new(theta_star: Vec<f64>, score_scale: f64, dx: usize, dy: usize) -> Result<Self> {
        if theta_star.len() != dx + 2 * dy {
            return Err(Error::DimensionMismatch { expected: dx + 2 * dy, got: theta_star.len() });
        }
        Ok(Self { theta_star, score_scale, dx, dy })
    }

    pub fn score(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.dx {
            return Err(Error::DimensionMismatch { expected: self.dx, got: x.len() });
        }
        if y.len() != self.dy {
            return Err(Error::DimensionMismatch { expected: self.dy, got: y.len() });
        }
        Ok(self.score_scale * dot(&self.theta_star, &feature_map(x, y)))
    }

    /// Score with the scale folded in, as a vector over `ψ`.
    pub fn scaled_direction(&self) -> Vec<f64> {
        self.theta_star.iter().map(|v| v * self.score_scale).collect()
    }
}

pub fn oracle_reward(oracle: &GroundTruthOracle, x: &Prompt, y: &Response) -> Result<f64> {
    Ok(reward_from_score(oracle.score(&x.features, &y.features)?))
}

/// Which of two candidates an annotator prefers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    First,
    Second,
}

/// Gumbel-perturbed argmax over two rewards, `P(First) = σ(r1 - r2)`.
///
/// The noise for candidate `j` of draw `index` comes from its own counter-based
/// slot, so the outcome depends only on `(seed, index)`.
pub fn sample_preference(r1: f64, r2: f64, seed: u64, index: u64) -> Choice {
    let g1 = rng::gumbel(&mut rng::slot_stream(seed, Domain::GUMBEL, index, 0));
    let g2 = rng::gumbel(&mut rng::slot_stream(seed, Domain::GUMBEL, index, 1));
    if r1 + g1 >= r2 + g2 {
        Choice::First
    } else {
        Choice::Second
    }
}

/// Oracle plus the two calibrated response samplers, all derived from one seed.
#[derive(Debug, Clone)]
pub struct World {
    pub cfg: WorldConfig,
    pub seed: u64,
    pub oracle: GroundTruthOracle,
    /// Unit vector in response space along which reward increases on average.
    direction: Vec<f64>,
    neg_center: f64,
}

impl World {
    pub fn new(cfg: WorldConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::stream(seed, Domain::ORACLE, 0);
        let mut theta = rng::normal_vec(&mut r, cfg.psi_dim());
        normalize(&mut theta);
        let mut direction = theta[cfg.dx..cfg.dx + cfg.dy].to_vec();
        normalize(&mut direction);
        let oracle = GroundTruthOracle::new(theta, cfg.score_scale, cfg.dx, cfg.dy)?;
        let mut world = Self { cfg, seed, oracle, direction, neg_center: 0.0 };
        world.neg_center = world.calibrate_negative();
        Ok(world)
    }

    /// Bisection on the negative-corpus centre so that the mean oracle reward
    /// over a fixed seeded sample equals `neg_reward_target`.
    fn calibrate_negative(&self) -> f64 {
        let n = self.cfg.calibration_samples;
        let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..n as u64)
            .map(|j| {
                let mut r = rng::stream(self.seed, Domain::CALIBRATION, j);
                (rng::normal_vec(&mut r, self.cfg.dx), rng::normal_vec(&mut r, self.cfg.dy))
            })
            .collect();
        let mean_at = |center: f64| {
            draws
                .iter()
                .map(|(x, e)| {
                    let y = self.place(center, self.cfg.neg_std, e);
                    reward_from_score(self.oracle.score(x, &y).expect("dims fixed by config"))
                })
                .sum::<f64>()
                / n as f64
        };
        let (mut lo, mut hi) = (-100.0_f64, 0.0_f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if mean_at(mid) > self.cfg.neg_reward_target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    fn place(&self, center: f64, std: f64, noise: &[f64]) -> Vec<f64> {
        self.direction.iter().zip(noise).map(|(u, e)| center * u + std * e).collect()
    }

    pub fn negative_center(&self) -> f64 {
        self.neg_center
    }

    pub fn prompt(&self, id: u64) -> Prompt {
        let mut r = rng::stream(self.seed, Domain::PROMPT, id);
        Prompt { id, features: rng::normal_vec(&mut r, self.cfg.dx) }
    }

    pub fn sample_generated<R: Rng + ?Sized>(&self, rng: &mut R) -> Response {
        let e = rng::normal_vec(rng, self.cfg.dy);
        Response { features: self.place(self.cfg.gen_center, self.cfg.gen_std, &e), source: Source::Generated }
    }

    pub fn sample_negative<R: Rng + ?Sized>(&self, rng: &mut R) -> Response {
        let e = rng::normal_vec(rng, self.cfg.dy);
        Response { features: self.place(self.neg_center, self.cfg.neg_std, &e), source: Source::NegativeCorpus }
    }

    /// Rejection-sample a generated response with oracle reward at or above
    /// the threshold.
    ///
    /// Some prompts cap the attainable reward below the threshold; after
    /// `max_rejections` draws the best draw seen is returned instead, flagged
    /// by the second tuple element being `false`.
    pub fn sample_high_scoring<R: Rng + ?Sized>(&self, x: &Prompt, rng: &mut R) -> Result<(Response, bool)> {
        let mut best: Option<(f64, Response)> = None;
        for _ in 0..self.cfg.max_rejections {
            let y = self.sample_generated(rng);
            let r = oracle_reward(&self.oracle, x, &y)?;
            if r >= self.cfg.high_score_threshold {
                return Ok((y, true));
            }
            if best.as_ref().is_none_or(|(b, _)| r > *b) {
                best = Some((r, y));
            }
        }
        Ok((best.expect("max_rejections >= 1").1, false))
    }

    pub fn reward(&self, x: &Prompt, y: &Response) -> Result<f64> {
        oracle_reward(&self.oracle, x, y)
    }

    /// Record `index` of a dataset of the given tier and size.
    ///
    /// Prompts depend only on `index`, and the two composition styles have
    /// their own streams, so a medium-tier record equals the low- or
    /// high-tier record at the same index.
    pub fn record(&self, tier: Tier, index: u64, n_pairs: usize) -> Result<PreferenceRecord> {
        let prompt = self.prompt(index);
        let low_style = match tier {
            Tier::Low => true,
            Tier::High => false,
            Tier::Medium => index < (n_pairs / 2) as u64,
        };
        let (a, b) = if low_style {
            let mut r = rng::stream(self.seed, Domain::LOW_STYLE, index);
            (self.sample_high_scoring(&prompt, &mut r)?.0, self.sample_negative(&mut r))
        } else {
            let mut r = rng::stream(self.seed, Domain::HIGH_STYLE, index);
            (self.sample_generated(&mut r), self.sample_generated(&mut r))
        };
        let ra = self.reward(&prompt, &a)?;
        let rb = self.reward(&prompt, &b)?;
        let rec = match sample_preference(ra, rb, self.seed, index) {
            Choice::First => PreferenceRecord {
                prompt,
                winner: a,
                loser: b,
                oracle_reward_w: ra,
                oracle_reward_l: rb,
                tier,
            },
            Choice::Second => PreferenceRecord {
                prompt,
                winner: b,
                loser: a,
                oracle_reward_w: rb,
                oracle_reward_l: ra,
                tier,
            },
        };
        Ok(rec)
    }

    pub fn build_dataset(&self, tier: Tier, n_pairs: usize) -> Result<Vec<PreferenceRecord>> {
        if n_pairs == 0 {
            return Err(Error::Empty("n_pairs must be at least 1"));
        }
        (0..n_pairs as u64).map(|i| self.record(tier, i, n_pairs)).collect()
    }
}

/// Convenience wrapper: build the world for `seed` and one tier of it.
pub fn build_dataset(cfg: &WorldConfig, tier: Tier, n_pairs: usize, seed: u64) -> Result<Vec<PreferenceRecord>> {
    World::new(*cfg, seed)?.build_dataset(tier, n_pairs)
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Seeded permutation of indices `0..n`; identical for every tier of equal size.
pub fn split_permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Domain::SPLIT, n as u64));
    idx
}

/// Shuffle with the shared permutation and split by count: the first
/// `round(n · train_fraction)` shuffled records train, the rest evaluate.
pub fn shuffle_and_split<T: Clone>(records: &[T], seed: u64, train_fraction: f64) -> Result<(Vec<T>, Vec<T>)> {
    if records.is_empty() {
        return Err(Error::Empty("cannot split an empty dataset"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("train_fraction must be in (0, 1), got {train_fraction}")));
    }
    let n = records.len();
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let perm = split_permutation(n, seed);
    let shuffled: Vec<T> = perm.iter().map(|&i| records[i].clone()).collect();
    let eval = shuffled[n_train.min(n)..].to_vec();
    let mut train = shuffled;
    train.truncate(n_train.min(n));
    Ok((train, eval))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecordLine {
    id: u64,
    tier: Tier,
    x: Vec<f64>,
    yw: Vec<f64>,
    yl: Vec<f64>,
    rw: f64,
    rl: f64,
    src_w: Source,
    src_l: Source,
}

/// Provenance written on the first line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetHeader {
    pub seed: u64,
    pub tier: Tier,
    pub config_hash: String,
}

const HEADER_TAG: &str = "# madpo-dataset";

/// Line-delimited JSON, one record per line, after a `#` header line.
pub fn write_ndjson<W: Write>(mut out: W, header: &DatasetHeader, records: &[PreferenceRecord]) -> Result<()> {
    writeln!(out, "{HEADER_TAG} seed={} tier={} config_hash={}", header.seed, header.tier, header.config_hash)?;
    for r in records {
        let line = RecordLine {
            id: r.prompt.id,
            tier: r.tier,
            x: r.prompt.features.clone(),
            yw: r.winner.features.clone(),
            yl: r.loser.features.clone(),
            rw: r.oracle_reward_w,
            rl: r.oracle_reward_l,
            src_w: r.winner.source,
            src_l: r.loser.source,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ndjson<R: BufRead>(input: R) -> Result<(DatasetHeader, Vec<PreferenceRecord>)> {
    let mut lines = input.lines();
    let first = lines.next().ok_or(Error::Empty("dataset file has no header"))??;
    let header = parse_header(&first)?;
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let l: RecordLine = serde_json::from_str(&line)?;
        records.push(PreferenceRecord {
            prompt: Prompt { id: l.id, features: l.x },
            winner: Response { features: l.yw, source: l.src_w },
            loser: Response { features: l.yl, source: l.src_l },
            oracle_reward_w: l.rw,
            oracle_reward_l: l.rl,
            tier: l.tier,
        });
    }
    Ok((header, records))
}

fn parse_header(line: &str) -> Result<DatasetHeader> {
    let rest = line
        .strip_prefix(HEADER_TAG)
        .ok_or_else(|| Error::Parse(format!("missing dataset header, got '{line}'")))?;
    let (mut seed, mut tier, mut hash) = (None, None, None);
    for kv in rest.split_whitespace() {
        match kv.split_once('=') {
            Some(("seed", v)) => seed = Some(v.parse::<u64>().map_err(|e| Error::Parse(e.to_string()))?),
            Some(("tier", v)) => tier = Some(v.parse::<Tier>()?),
            Some(("config_hash", v)) => hash = Some(v.to_string()),
            _ => {}
        }
    }
    match (seed, tier, hash) {
        (Some(seed), Some(tier), Some(config_hash)) => Ok(DatasetHeader { seed, tier, config_hash }),
        _ => Err(Error::Parse(format!("incomplete dataset header '{line}'"))),
    }
}
