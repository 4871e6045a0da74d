//! One clustering run: validation, ICAP, NICO and the energy report.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ibn_topology::analytics::{energy_report, EnergyReport};
use ibn_topology::icap::run_icap;
use ibn_topology::nico::{NicoContext, NicoStep};
use ibn_topology::{GridSpec, NicoOutcome, NodeSpec, ScenarioConfig, TissueStack};

use crate::output::{canonical, to_toml, ClusterRecord, TopologyFile, TraceFile};
use crate::scenario::ScenarioFile;

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub nodes: Vec<NodeSpec>,
    pub grid: GridSpec,
    /// Final state in canonical cluster order.
    pub outcome: NicoOutcome,
    pub energy: EnergyReport,
}

pub fn run_scenario(scenario: &ScenarioFile) -> Result<RunResult> {
    execute(scenario.materialize()?, &scenario.stack, &scenario.config, scenario.seed)
}

pub fn execute(nodes: Vec<NodeSpec>, stack: &TissueStack, config: &ScenarioConfig, seed: u64) -> Result<RunResult> {
    let ctx = NicoContext::new(&nodes, stack, config)?;
    let (grid, initial) = run_icap(&nodes, stack, config)?;
    let mut outcome = ctx.run(initial)?;
    outcome.state = canonical(&outcome.state);
    let energy = energy_report(&outcome.state, &outcome.links);
    Ok(RunResult {
        seed,
        nodes,
        grid,
        outcome,
        energy,
    })
}

impl RunResult {
    pub fn topology(&self) -> TopologyFile {
        let rate = |id| {
            self.nodes
                .iter()
                .find(|n| n.id == id)
                .map_or(0.0, |n| n.data_rate)
        };
        TopologyFile {
            seed: self.seed,
            nodes: self.nodes.len(),
            clusters_initial: self.grid.occupied,
            clusters_final: self.outcome.state.k(),
            grid_size_cm: self.grid.lambda,
            iterations: self.outcome.iterations,
            termination: self.outcome.termination,
            network_lifetime_days: self.energy.network_lifetime,
            clusters: self
                .outcome
                .state
                .clusters
                .iter()
                .map(|c| ClusterRecord::from_cluster(c, &self.outcome.links, rate))
                .collect(),
        }
    }

    /// End-of-iteration records, or every step when `detailed`.
    pub fn trace(&self, detailed: bool) -> TraceFile {
        TraceFile {
            records: self
                .outcome
                .trace
                .iter()
                .filter(|r| detailed || r.step == NicoStep::Dedicate)
                .cloned()
                .collect(),
        }
    }

    pub fn implant_lengths(&self) -> Vec<f64> {
        self.outcome
            .links
            .iter()
            .filter(|l| l.tissue.is_implant())
            .map(|l| l.length)
            .collect()
    }

    /// Writes `topology.toml`, `trace.toml` and `energy.toml` into `out_dir`.
    pub fn write(&self, out_dir: &Path, detailed_trace: bool) -> Result<()> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let files = [
            ("topology.toml", to_toml(&self.topology())?),
            ("trace.toml", to_toml(&self.trace(detailed_trace))?),
            ("energy.toml", to_toml(&self.energy)?),
        ];
        for (name, body) in files {
            let path = out_dir.join(name);
            fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}
