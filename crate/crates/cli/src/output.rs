//! Result files. Clusters are ordered by relay `(x, y)` and nodes by id, so
//! identical runs produce identical bytes.

use std::collections::BTreeSet;

use anyhow::Result;
use ibn_topology::nico::{NodeLink, Termination, TraceRecord};
use ibn_topology::{Cluster, ClusterId, ClusterState, NodeId, RelayPlacement, Tissue};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub tissue: Tissue,
    pub length_cm: f64,
    pub threshold_cm: f64,
    pub pt_mw: f64,
    pub pt_max_mw: f64,
    pub lifetime_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub id: ClusterId,
    pub relay_x: f64,
    pub relay_y: f64,
    pub rate_sum: f64,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub seed: u64,
    pub nodes: usize,
    pub clusters_initial: usize,
    pub clusters_final: usize,
    pub grid_size_cm: f64,
    pub iterations: usize,
    pub termination: Termination,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network_lifetime_days: Option<f64>,
    pub clusters: Vec<ClusterRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub records: Vec<TraceRecord>,
}

/// Clusters sorted by relay `(x, y)`, then id.
pub fn canonical(state: &ClusterState) -> ClusterState {
    let mut clusters = state.clusters.clone();
    clusters.sort_by(|a, b| {
        a.relay
            .x
            .total_cmp(&b.relay.x)
            .then(a.relay.y.total_cmp(&b.relay.y))
            .then(a.id.cmp(&b.id))
    });
    ClusterState::from_parts(clusters, state.not_clustered.clone())
}

impl ClusterRecord {
    pub fn from_cluster(cluster: &Cluster, links: &[NodeLink], rates: impl Fn(NodeId) -> f64) -> Self {
        let nodes = cluster
            .members
            .iter()
            .map(|&m| {
                let l = links
                    .iter()
                    .find(|l| l.id == m)
                    .expect("every member has a link");
                NodeRecord {
                    id: m,
                    tissue: l.tissue,
                    length_cm: l.length,
                    threshold_cm: l.threshold,
                    pt_mw: l.pt * 1e3,
                    pt_max_mw: l.pt_max * 1e3,
                    lifetime_days: l.lifetime_days,
                }
            })
            .collect();
        Self {
            id: cluster.id,
            relay_x: cluster.relay.x,
            relay_y: cluster.relay.y,
            rate_sum: cluster.members.iter().map(|&m| rates(m)).sum(),
            nodes,
        }
    }
}

impl TopologyFile {
    /// Rebuilds the final cluster state.
    pub fn to_state(&self) -> ClusterState {
        let clusters = self
            .clusters
            .iter()
            .map(|c| {
                Cluster::new(
                    c.id,
                    c.nodes.iter().map(|n| n.id).collect(),
                    RelayPlacement::new(c.relay_x, c.relay_y),
                )
            })
            .collect();
        ClusterState::from_parts(clusters, BTreeSet::new())
    }
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    Ok(toml::to_string(value)?)
}

pub fn from_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(toml::from_str(text)?)
}

