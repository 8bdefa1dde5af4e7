use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub tier: String,
    pub seed: u64,
    pub mean_reward: f64,
    /// Standard error over evaluation prompts.
    pub std_error: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub tier: String,
    pub n_seeds: usize,
    /// Mean over per-seed means.
    pub mean_reward: f64,
    /// Sample std of per-seed means over `sqrt(n_seeds)`. With a single seed
    /// this is that cell's own standard error over evaluation prompts.
    pub std_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut groups: BTreeMap<(String, String), Vec<&ResultRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.method.clone(), r.tier.clone())).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|((method, tier), rows)| {
                let v: Vec<f64> = rows.iter().map(|r| r.mean_reward).collect();
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let se = if v.len() > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
                } else {
                    rows[0].std_error
                };
                AggregateRow { method, tier, n_seeds: v.len(), mean_reward: mean, std_error: se }
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| CliError::io(path, e))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, CliError> {
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
        let rows = r.deserialize().collect::<Result<Vec<ResultRow>, _>>().map_err(|e| CliError::io(path, e))?;
        Ok(Self { rows })
    }

    /// Fixed-width `mean (se)` grid with methods as rows and tiers as columns.
    pub fn render(&self) -> String {
        let agg = self.aggregate();
        let mut tiers: Vec<String> = Vec::new();
        let mut methods: Vec<String> = Vec::new();
        for a in &agg {
            if !tiers.contains(&a.tier) {
                tiers.push(a.tier.clone());
            }
            if !methods.contains(&a.method) {
                methods.push(a.method.clone());
            }
        }
        let order = |t: &String| match t.as_str() {
            "high" => 0,
            "medium" => 1,
            "low" => 2,
            _ => 3,
        };
        tiers.sort_by_key(order);
        let mut s = format!("{:<16}", "method");
        for t in &tiers {
            s.push_str(&format!("{t:>18}"));
        }
        s.push('\n');
        for m in &methods {
            s.push_str(&format!("{m:<16}"));
            for t in &tiers {
                match agg.iter().find(|a| &a.method == m && &a.tier == t) {
                    Some(a) => s.push_str(&format!("{:>18}", format!("{:.3} ({:.3})", a.mean_reward, a.std_error))),
                    None => s.push_str(&format!("{:>18}", "-")),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// One tidy row of a sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub method: String,
    pub tier: String,
    pub seed: u64,
    pub mean_reward: f64,
    pub std_error: f64,
    pub config_hash: String,
}

impl SweepRow {
    pub fn to_result(&self) -> ResultRow {
        ResultRow {
            method: format!("{}[{}={}]", self.method, self.param, self.value),
            tier: self.tier.clone(),
            seed: self.seed,
            mean_reward: self.mean_reward,
            std_error: self.std_error,
            config_hash: self.config_hash.clone(),
        }
    }
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    r.deserialize().collect::<Result<Vec<SweepRow>, _>>().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, tier: &str, seed: u64, mean: f64) -> ResultRow {
        ResultRow { method: method.into(), tier: tier.into(), seed, mean_reward: mean, std_error: 0.1, config_hash: "h".into() }
    }

    #[test]
    fn aggregate_over_seed_means() {
        let t = ResultsTable { rows: vec![row("dpo", "low", 0, 1.0), row("dpo", "low", 1, 2.0), row("dpo", "low", 2, 3.0), row("ipo", "low", 0, 0.5)] };
        let agg = t.aggregate();
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].n_seeds, 3);
        assert_eq!(agg[0].mean_reward, 2.0);
        assert!((agg[0].std_error - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(agg[1].std_error, 0.1);
        assert!(t.render().contains("2.000 (0.577)"));
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let t = ResultsTable { rows: vec![row("madpo", "high", 4, 1.234_567_890_123), row("dpo", "low", 0, -0.25)] };
        let p = dir.path().join("r.csv");
        t.write_csv(&p).unwrap();
        assert_eq!(ResultsTable::read_csv(&p).unwrap(), t);
    }
}
