//! Distribution reports for the grid statistics.

use anyhow::Result;
use ibn_topology::analytics::{expected_link_length, link_length_report, period_count_report, DistributionReport};
use ibn_topology::icap::run_icap;
use ibn_topology::model::{link_length, planar_separation};
use serde::{Deserialize, Serialize};

use crate::scenario::ScenarioFile;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOptions {
    /// Grid side, cm.
    pub lambda: f64,
    pub samples: usize,
    pub seed: u64,
    /// Tabulation points for the link-length curve.
    pub points: usize,
    /// `(C1, C2)` for the split-count distribution.
    pub split: Option<(f64, f64)>,
}

/// Node-to-cell-centre link lengths of an ICAP partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionLinks {
    pub grid_size_cm: f64,
    pub occupied_cells: usize,
    pub planar_mean_cm: f64,
    pub depth_mean_cm: f64,
    /// Closed-form mean for two uniform points in one cell.
    pub expected_pair_mean_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub expected_link_length_cm: f64,
    pub link_length: DistributionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period_count: Option<DistributionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionLinks>,
}

pub fn analyze(opts: &AnalyzeOptions, scenario: Option<&ScenarioFile>) -> Result<Analysis> {
    let partition = scenario.map(partition_links).transpose()?;
    Ok(Analysis {
        expected_link_length_cm: expected_link_length(opts.lambda),
        link_length: link_length_report(opts.lambda, opts.samples, opts.seed, opts.points),
        period_count: opts
            .split
            .map(|(c1, c2)| period_count_report(c1, c2, opts.samples, opts.seed)),
        partition,
    })
}

/// Planar and depth-inclusive mean link lengths to the ICAP cell centres.
pub fn partition_links(scenario: &ScenarioFile) -> Result<PartitionLinks> {
    let nodes = scenario.materialize()?;
    let (grid, state) = run_icap(&nodes, &scenario.stack, &scenario.config)?;
    let (mut planar, mut depth) = (0.0, 0.0);
    for c in &state.clusters {
        for m in &c.members {
            let n = nodes.iter().find(|n| n.id == *m).expect("partition holds known ids");
            planar += planar_separation(n, &c.relay);
            depth += link_length(n, &c.relay);
        }
    }
    let count = nodes.len() as f64;
    Ok(PartitionLinks {
        grid_size_cm: grid.lambda,
        occupied_cells: grid.occupied,
        planar_mean_cm: planar / count,
        depth_mean_cm: depth / count,
        expected_pair_mean_cm: expected_link_length(grid.lambda),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reports_are_consistent() {
        let opts = AnalyzeOptions {
            lambda: 1.0,
            samples: 50_000,
            seed: 1,
            points: 11,
            split: Some((10.0, 100.0)),
        };
        let a = analyze(&opts, None).unwrap();
        assert_eq!(a.link_length.closed_form.len(), 11);
        assert!(a.link_length.ks_distance < 0.02);
        assert!(a.period_count.unwrap().ks_distance < 0.03);
        assert!((a.expected_link_length_cm - 0.5214).abs() < 1e-4);
    }

    #[test]
    fn depth_never_shortens_links() {
        let s = ScenarioFile::parse("[generator]\ncount = 40\n").unwrap();
        let p = partition_links(&s).unwrap();
        assert!(p.depth_mean_cm >= p.planar_mean_cm);
        assert!(p.planar_mean_cm <= p.grid_size_cm * std::f64::consts::FRAC_1_SQRT_2 + 1e-9);
    }
}
