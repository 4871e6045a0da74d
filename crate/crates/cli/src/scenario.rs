//! Scenario files: tissue volume, explicit nodes, an optional random
//! generator, configuration, seed and an optional sweep block.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ibn_topology::{NodeId, NodeSpec, ScenarioConfig, Tissue, TissueStack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sweep::SweepParam;

fn default_stack() -> TissueStack {
    TissueStack::new([0.0, 100.0], [0.0, 100.0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stack")]
    pub stack: TissueStack,
    #[serde(default)]
    pub config: ScenarioConfig,
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

/// iid-uniform node placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub count: usize,
    /// Probability that a generated node is an implant.
    pub implant_fraction: f64,
    /// Inclusive integer range of data rates.
    pub rate_range: [u32; 2],
    /// Implant depth range, cm.
    pub depth_range: [f64; 2],
    pub energy_store: f64,
    pub required_lifetime: f64,
    /// Placement region `[[x0, x1], [y0, y1]]`; the whole surface if absent.
    pub region: Option<[[f64; 2]; 2]>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            count: 50,
            implant_fraction: 0.5,
            rate_range: [1, 5],
            depth_range: [0.0, 2.0],
            energy_store: 2592.0,
            required_lifetime: 259_200.0,
            region: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    /// Seeds `seed, seed + 1, …`; one run per seed and value.
    #[serde(default = "one")]
    pub seeds: u64,
}

fn one() -> u64 {
    1
}

impl GeneratorSpec {
    /// Draws `count` nodes with ids starting at `first_id`.
    pub fn generate(&self, stack: &TissueStack, first_id: u32, rng: &mut ChaCha8Rng) -> Result<Vec<NodeSpec>> {
        self.validate()?;
        let [[x0, x1], [y0, y1]] = self.region.unwrap_or([stack.x_range, stack.y_range]);
        let [r0, r1] = self.rate_range;
        let [d0, d1] = self.depth_range;
        Ok((0..self.count as u32)
            .map(|i| {
                let (x, y) = (rng.gen_range(x0..=x1), rng.gen_range(y0..=y1));
                let rate = rng.gen_range(r0..=r1) as f64;
                let implant = rng.gen_bool(self.implant_fraction);
                let z = if implant { rng.gen_range(d0..=d1) } else { 0.0 };
                NodeSpec {
                    id: NodeId(first_id + i),
                    x,
                    y,
                    z,
                    tissue: if implant { Tissue::Muscle } else { Tissue::Skin },
                    data_rate: rate,
                    energy_store: self.energy_store,
                    required_lifetime: self.required_lifetime,
                    modulation_level: 2,
                }
            })
            .collect())
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.implant_fraction) {
            bail!("generator.implant_fraction must lie in [0, 1]");
        }
        if self.rate_range[0] == 0 || self.rate_range[0] > self.rate_range[1] {
            bail!("generator.rate_range must be an ascending pair of positive integers");
        }
        if !(self.depth_range[0] >= 0.0 && self.depth_range[0] <= self.depth_range[1]) {
            bail!("generator.depth_range must be an ascending non-negative pair");
        }
        if let Some([[x0, x1], [y0, y1]]) = self.region {
            if !(x0 <= x1 && y0 <= y1) {
                bail!("generator.region must hold ascending ranges");
            }
        }
        Ok(())
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Explicit nodes followed by generated ones, drawn from a generator
    /// seeded with `seed`.
    pub fn materialize(&self) -> Result<Vec<NodeSpec>> {
        let mut nodes = self.nodes.clone();
        if let Some(g) = &self.generator {
            let first = nodes.iter().map(|n| n.id.0 + 1).max().unwrap_or(0);
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            nodes.extend(g.generate(&self.stack, first, &mut rng)?);
        }
        Ok(nodes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_uses_defaults() {
        let s = ScenarioFile::parse("").unwrap();
        assert_eq!(s.stack, default_stack());
        assert_eq!(s.config, ScenarioConfig::default());
        assert!(s.materialize().unwrap().is_empty());
    }

    #[test]
    fn generator_is_seed_deterministic() {
        let text = "seed = 4\n[generator]\ncount = 30\n";
        let a = ScenarioFile::parse(text).unwrap().materialize().unwrap();
        let b = ScenarioFile::parse(text).unwrap().materialize().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        let c = ScenarioFile::parse("seed = 5\n[generator]\ncount = 30\n")
            .unwrap()
            .materialize()
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_nodes_respect_ranges() {
        let s = ScenarioFile::parse("[generator]\ncount = 200\nregion = [[10.0, 20.0], [30.0, 40.0]]\n").unwrap();
        for n in s.materialize().unwrap() {
            assert!((10.0..=20.0).contains(&n.x) && (30.0..=40.0).contains(&n.y));
            assert!((1.0..=5.0).contains(&n.data_rate) && n.data_rate.fract() == 0.0);
            if n.is_implant() {
                assert!((0.0..=2.0).contains(&n.z));
            } else {
                assert_eq!(n.z, 0.0);
            }
        }
    }

    #[test]
    fn generated_ids_follow_explicit_ones() {
        let text = r#"
[[nodes]]
id = 7
x = 1.0
y = 1.0
tissue = "skin"
data_rate = 1.0
energy_store = 2592.0
required_lifetime = 259200.0

[generator]
count = 2
"#;
        let ids: Vec<u32> = ScenarioFile::parse(text)
            .unwrap()
            .materialize()
            .unwrap()
            .iter()
            .map(|n| n.id.0)
            .collect();
        assert_eq!(ids, vec![7, 8, 9]);
    }

    #[test]
    fn unknown_field_reports_location() {
        let err = ScenarioFile::parse("seed = 1\n[config]\nalpah = 3.0\n").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("alpah") || msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn round_trips_through_toml() {
        let s = ScenarioFile::parse("seed = 9\n[generator]\ncount = 3\n[sweep]\nparam = \"alpha\"\nvalues = [2.0, 4.0]\n").unwrap();
        assert_eq!(ScenarioFile::parse(&s.to_toml().unwrap()).unwrap(), s);
    }
}
