use std::path::{Path, PathBuf};

use madpo_core::experiment::{Method, Settings};
use madpo_core::Tier;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Grids for the sensitivity sweeps. `c` entries are intensities: each run
/// uses `c_max = c`, `c_min = 1/c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Which sweeps to run, any of "tau", "c", "m", "p".
    pub params: Vec<String>,
    pub tau: Vec<f64>,
    pub c: Vec<f64>,
    /// τ held fixed while `c` varies, and `c` held fixed while τ varies.
    pub fixed_tau: f64,
    pub fixed_c: f64,
    pub m: Vec<f64>,
    pub p: Vec<f64>,
    pub fixed_m: f64,
    pub fixed_p: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            params: vec!["tau".into(), "c".into()],
            tau: vec![2.0, 4.0, 7.0, 10.0],
            c: vec![2.0, 3.0, 4.0],
            fixed_tau: 7.0,
            fixed_c: 2.0,
            m: vec![0.4, 0.6, 0.8],
            p: vec![0.4, 0.6, 0.8],
            fixed_m: 0.6,
            fixed_p: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub tiers: Vec<Tier>,
    pub methods: Vec<Method>,
    pub parallel: usize,
    pub settings: Settings,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("results"),
            seeds: vec![0],
            tiers: Tier::ALL.to_vec(),
            methods: vec![Method::Dpo, Method::Ipo, Method::BetaDpo, Method::Madpo],
            parallel: 1,
            settings: Settings::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Values given on the command line (or through `MADPO_*` variables).
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<String>,
    pub methods: Option<String>,
    pub tiers: Option<String>,
    pub parallel: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<ExperimentConfig>(&text)
                    .map_err(|e| CliError::Config(format!("invalid config {}: {e}", p.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &overrides.out {
            cfg.out = out.clone();
        }
        if let Some(s) = &overrides.seeds {
            cfg.seeds = parse_seeds(s)?;
        }
        if let Some(s) = &overrides.methods {
            cfg.methods = parse_list(s)?;
        }
        if let Some(s) = &overrides.tiers {
            cfg.tiers = parse_list(s)?;
        }
        if let Some(n) = overrides.parallel {
            cfg.parallel = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.settings.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.seeds.is_empty() || self.tiers.is_empty() || self.methods.is_empty() {
            return Err(CliError::Config("seeds, tiers and methods must be non-empty".into()));
        }
        if self.parallel == 0 {
            return Err(CliError::Config("parallel must be at least 1".into()));
        }
        Ok(())
    }

    pub fn validate_sweep(&self) -> Result<(), CliError> {
        let s = &self.sweep;
        for p in &s.params {
            let grid = match p.as_str() {
                "tau" => &s.tau,
                "c" => &s.c,
                "m" => &s.m,
                "p" => &s.p,
                other => return Err(CliError::Config(format!("unknown sweep parameter '{other}'"))),
            };
            if grid.is_empty() {
                return Err(CliError::Config(format!("sweep grid '{p}' is empty")));
            }
        }
        if s.params.is_empty() {
            return Err(CliError::Config("no sweep parameters selected".into()));
        }
        if s.c.iter().chain([&s.fixed_c]).any(|c| !(*c > 1.0)) {
            return Err(CliError::Config("every intensity c must exceed 1".into()));
        }
        if s.tau.iter().chain([&s.fixed_tau]).any(|t| !(*t > 0.0)) {
            return Err(CliError::Config("every tau must be positive".into()));
        }
        Ok(())
    }
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.parse().map_err(|_| CliError::Config(format!("bad seed range '{part}'")))?;
            let b: u64 = b.parse().map_err(|_| CliError::Config(format!("bad seed range '{part}'")))?;
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|_| CliError::Config(format!("bad seed '{part}'")))?);
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("empty seed list".into()));
    }
    Ok(out)
}

fn parse_list<T: std::str::FromStr<Err = madpo_core::Error>>(s: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| CliError::Config(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_accept_lists_and_ranges() {
        assert_eq!(parse_seeds("0,1,2").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("3..6, 9").unwrap(), vec![3, 4, 5, 9]);
        assert!(parse_seeds("a").is_err());
        assert!(parse_seeds("").is_err());
    }

    #[test]
    fn toml_roundtrip_and_overrides() {
        let text = toml::to_string(&ExperimentConfig::default()).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, ExperimentConfig::default());

        let partial: ExperimentConfig = toml::from_str("seeds = [4, 5]\n[settings]\nbeta = 0.2\n").unwrap();
        assert_eq!(partial.seeds, vec![4, 5]);
        assert_eq!(partial.settings.beta, 0.2);
        assert_eq!(partial.settings.n_pairs, 1200);

        let o = Overrides { methods: Some("dpo,madpo-amp-only".into()), tiers: Some("low".into()), ..Default::default() };
        let cfg = ExperimentConfig::load(None, &o).unwrap();
        assert_eq!(cfg.methods, vec![Method::Dpo, Method::MadpoAmpOnly]);
        assert_eq!(cfg.tiers, vec![Tier::Low]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(toml::from_str::<ExperimentConfig>("unknown_key = 1").is_err());
        let o = Overrides { tiers: Some("ultra".into()), ..Default::default() };
        assert!(matches!(ExperimentConfig::load(None, &o), Err(CliError::Config(_))));
        let mut cfg = ExperimentConfig::default();
        cfg.sweep.c = vec![1.0];
        assert!(cfg.validate_sweep().is_err());
        cfg.sweep = SweepConfig { params: vec!["lambda".into()], ..Default::default() };
        assert!(cfg.validate_sweep().is_err());
    }
}
