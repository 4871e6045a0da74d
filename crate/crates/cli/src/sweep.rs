//! Parameter sweeps over a scenario, aggregated across seeds.

use std::fmt;
use std::str::FromStr;

use anyhow::{bail, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::run::{execute, RunResult};
use crate::scenario::ScenarioFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    /// Energy prioritizing factor `α`.
    Alpha,
    /// Uniformity factor `Û`.
    Uniformity,
    /// Cap on both threshold link lengths, cm.
    Threshold,
    /// Data rate of the lowest-id node.
    Eta1,
    /// Generated node count.
    N,
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "alpha" => Ok(Self::Alpha),
            "uniformity" | "u" => Ok(Self::Uniformity),
            "threshold" | "lambda_th" => Ok(Self::Threshold),
            "eta1" => Ok(Self::Eta1),
            "n" => Ok(Self::N),
            other => Err(format!(
                "unknown sweep parameter `{other}`; expected alpha, uniformity, threshold, eta1 or n"
            )),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Alpha => "alpha",
            Self::Uniformity => "uniformity",
            Self::Threshold => "threshold",
            Self::Eta1 => "eta1",
            Self::N => "n",
        };
        f.write_str(s)
    }
}

/// Aggregate over the seeds of one sweep value. Means skip failed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub runs: usize,
    pub failures: usize,
    pub mean_k: f64,
    pub mean_k_initial: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_implant_length_cm: Option<f64>,
    pub mean_pt_mw: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_network_lifetime_days: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_network_lifetime_days: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
}

/// Runs `scenario` with `param = value` and seed `seed`.
pub fn run_point(scenario: &ScenarioFile, param: SweepParam, value: f64, seed: u64) -> Result<RunResult> {
    let mut s = scenario.clone();
    s.seed = seed;
    match param {
        SweepParam::Alpha => s.config.alpha = value,
        SweepParam::Uniformity => s.config.uniformity = value,
        SweepParam::Threshold => s.config = s.config.with_threshold_cap(value),
        SweepParam::N => {
            if !(value >= 0.0 && value.fract() == 0.0) {
                bail!("n must be a non-negative integer, got {value}");
            }
            match s.generator.as_mut() {
                Some(g) => g.count = value as usize,
                None => bail!("sweeping n requires a [generator] block"),
            }
        }
        SweepParam::Eta1 => {}
    }
    let mut nodes = s.materialize()?;
    if param == SweepParam::Eta1 {
        match nodes.iter_mut().min_by_key(|n| n.id) {
            Some(first) => first.data_rate = value,
            None => bail!("no nodes"),
        }
    }
    execute(nodes, &s.stack, &s.config, seed)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Runs every `(value, seed)` pair in parallel; rows follow `values` order.
pub fn sweep(scenario: &ScenarioFile, param: SweepParam, values: &[f64], seeds: &[u64]) -> SweepTable {
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Vec<Option<RunResult>> = jobs
        .par_iter()
        .map(|&(v, s)| run_point(scenario, param, values[v], s).ok())
        .collect();
    let rows = values
        .iter()
        .enumerate()
        .map(|(v, &value)| {
            let runs: Vec<&RunResult> = jobs
                .iter()
                .zip(&results)
                .filter(|((jv, _), _)| *jv == v)
                .filter_map(|(_, r)| r.as_ref())
                .collect();
            let lifetimes: Vec<f64> = runs.iter().filter_map(|r| r.energy.network_lifetime).collect();
            SweepRow {
                value,
                runs: seeds.len(),
                failures: seeds.len() - runs.len(),
                mean_k: mean(runs.iter().map(|r| r.outcome.state.k() as f64)).unwrap_or(f64::NAN),
                mean_k_initial: mean(runs.iter().map(|r| r.grid.occupied as f64)).unwrap_or(f64::NAN),
                mean_implant_length_cm: mean(runs.iter().filter_map(|r| mean(r.implant_lengths().into_iter()))),
                mean_pt_mw: mean(runs.iter().flat_map(|r| r.outcome.links.iter().map(|l| l.pt * 1e3)))
                    .unwrap_or(f64::NAN),
                mean_network_lifetime_days: mean(lifetimes.iter().copied()),
                min_network_lifetime_days: lifetimes.iter().copied().reduce(f64::min),
            }
        })
        .collect();
    SweepTable { param, rows }
}

impl fmt::Display for SweepTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        writeln!(
            f,
            "{:>10} {:>5} {:>5} {:>8} {:>8} {:>12} {:>10} {:>14}",
            self.param, "runs", "fail", "K", "K_icap", "implant_cm", "pt_mw", "lifetime_days"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>10} {:>5} {:>5} {:>8.2} {:>8.2} {:>12} {:>10.4} {:>14}",
                r.value,
                r.runs,
                r.failures,
                r.mean_k,
                r.mean_k_initial,
                opt(r.mean_implant_length_cm),
                r.mean_pt_mw,
                opt(r.mean_network_lifetime_days)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_params_only() {
        assert_eq!("alpha".parse::<SweepParam>(), Ok(SweepParam::Alpha));
        assert_eq!("ETA1".parse::<SweepParam>(), Ok(SweepParam::Eta1));
        assert!("beta".parse::<SweepParam>().unwrap_err().contains("unknown sweep parameter"));
    }

    #[test]
    fn n_needs_generator() {
        let s = ScenarioFile::parse("").unwrap();
        assert!(run_point(&s, SweepParam::N, 5.0, 0).is_err());
    }

    #[test]
    fn single_value_matches_plain_runs() {
        let s = ScenarioFile::parse("[generator]\ncount = 12\n").unwrap();
        let table = sweep(&s, SweepParam::Alpha, &[4.0], &[0, 1]);
        assert_eq!(table.rows.len(), 1);
        let ks: Vec<f64> = [0, 1]
            .iter()
            .map(|&seed| {
                let mut t = s.clone();
                t.seed = seed;
                crate::run::run_scenario(&t).unwrap().outcome.state.k() as f64
            })
            .collect();
        assert_eq!(table.rows[0].mean_k, (ks[0] + ks[1]) / 2.0);
        assert_eq!(table.rows[0].failures, 0);
    }
}
