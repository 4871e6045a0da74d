//! Domain types and the geometric / weighting formulas shared by every phase.
//!
//! All lengths are centimetres. A node's `z` is its depth below the surface of
//! the tissue it lives in; surface nodes and relays always have `z = 0`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelModel, LifetimeModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("empty cluster")]
    EmptyCluster,
    #[error("invalid tissue stack: {0}")]
    InvalidStack(String),
    #[error("invalid node {id}: {reason}")]
    InvalidNode { id: NodeId, reason: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Tissue a node is embedded in. The discriminants are the values that enter
/// the weight exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tissue {
    Skin = 1,
    Muscle = 2,
}

impl Tissue {
    pub fn index(self) -> f64 {
        self as u8 as f64
    }

    pub fn is_implant(self) -> bool {
        matches!(self, Tissue::Muscle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub u32);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

/// Layered tissue volume. Fat is carried for geometry only; nodes live in
/// skin or muscle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TissueStack {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    #[serde(default = "TissueStack::default_skin")]
    pub skin: f64,
    #[serde(default = "TissueStack::default_fat")]
    pub fat: f64,
    #[serde(default = "TissueStack::default_muscle")]
    pub muscle: f64,
}

impl TissueStack {
    fn default_skin() -> f64 {
        0.2
    }
    fn default_fat() -> f64 {
        0.8
    }
    fn default_muscle() -> f64 {
        3.0
    }

    pub fn new(x_range: [f64; 2], y_range: [f64; 2]) -> Self {
        Self {
            x_range,
            y_range,
            skin: Self::default_skin(),
            fat: Self::default_fat(),
            muscle: Self::default_muscle(),
        }
    }

    /// Total depth `D` of the stack.
    pub fn depth(&self) -> f64 {
        self.skin + self.fat + self.muscle
    }

    pub fn width(&self) -> f64 {
        self.x_range[1] - self.x_range[0]
    }

    pub fn height(&self) -> f64 {
        self.y_range[1] - self.y_range[0]
    }

    pub fn contains_surface(&self, x: f64, y: f64) -> bool {
        x >= self.x_range[0] && x <= self.x_range[1] && y >= self.y_range[0] && y <= self.y_range[1]
    }

    pub fn clamp_surface(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x.clamp(self.x_range[0], self.x_range[1]),
            y.clamp(self.y_range[0], self.y_range[1]),
        )
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = [
            self.x_range[0],
            self.x_range[1],
            self.y_range[0],
            self.y_range[1],
            self.skin,
            self.fat,
            self.muscle,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(ModelError::InvalidStack("non-finite dimension".into()));
        }
        if self.x_range[1] <= self.x_range[0] || self.y_range[1] <= self.y_range[0] {
            return Err(ModelError::InvalidStack("surface ranges must be increasing".into()));
        }
        if self.skin < 0.0 || self.fat < 0.0 || self.muscle < 0.0 {
            return Err(ModelError::InvalidStack("negative layer thickness".into()));
        }
        if self.depth() <= 0.0 {
            return Err(ModelError::InvalidStack("total depth must be positive".into()));
        }
        Ok(())
    }
}

fn default_modulation() -> u32 {
    2
}

/// A sensor or actuator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub z: f64,
    pub tissue: Tissue,
    /// Required data rate `η` in bandwidth units.
    pub data_rate: f64,
    /// Initial energy store `E_0`, joules.
    pub energy_store: f64,
    /// Required lifetime `H`, seconds.
    pub required_lifetime: f64,
    #[serde(default = "default_modulation")]
    pub modulation_level: u32,
}

impl NodeSpec {
    pub fn surface(id: u32, x: f64, y: f64, data_rate: f64) -> Self {
        Self {
            id: NodeId(id),
            x,
            y,
            z: 0.0,
            tissue: Tissue::Skin,
            data_rate,
            energy_store: 2592.0,
            required_lifetime: 259_200.0,
            modulation_level: 2,
        }
    }

    pub fn implant(id: u32, x: f64, y: f64, z: f64, data_rate: f64) -> Self {
        Self {
            tissue: Tissue::Muscle,
            z,
            ..Self::surface(id, x, y, data_rate)
        }
    }

    pub fn is_implant(&self) -> bool {
        self.tissue.is_implant()
    }

    pub fn validate(&self, stack: &TissueStack) -> Result<(), ModelError> {
        let bad = |reason: &str| ModelError::InvalidNode {
            id: self.id,
            reason: reason.to_string(),
        };
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return Err(bad("non-finite position"));
        }
        if !stack.contains_surface(self.x, self.y) {
            return Err(bad("node out of volume"));
        }
        match self.tissue {
            Tissue::Skin if self.z != 0.0 => return Err(bad("surface node must have z = 0")),
            Tissue::Muscle if self.z < 0.0 || self.z > stack.muscle => {
                return Err(bad("implant depth outside the muscle layer"))
            }
            _ => {}
        }
        if !(self.data_rate > 0.0) {
            return Err(bad("data rate must be positive"));
        }
        if !(self.energy_store > 0.0) {
            return Err(bad("energy store must be positive"));
        }
        if !(self.required_lifetime > 0.0) {
            return Err(bad("required lifetime must be positive"));
        }
        if self.modulation_level < 2 {
            return Err(bad("modulation level must be at least 2"));
        }
        Ok(())
    }
}

/// On-skin relay position. Relays always sit at depth 0; the same `(x, y)`
/// is its vertical projection onto any implant plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayPlacement {
    pub x: f64,
    pub y: f64,
}

impl RelayPlacement {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn z(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: ClusterId,
    /// Member ids, kept sorted.
    pub members: Vec<NodeId>,
    pub relay: RelayPlacement,
}

impl Cluster {
    pub fn new(id: ClusterId, mut members: Vec<NodeId>, relay: RelayPlacement) -> Self {
        members.sort_unstable();
        members.dedup();
        Self { id, members, relay }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.members.binary_search(&id).is_ok()
    }

    pub fn insert(&mut self, id: NodeId) {
        if let Err(pos) = self.members.binary_search(&id) {
            self.members.insert(pos, id);
        }
    }

    pub fn remove(&mut self, id: NodeId) -> bool {
        match self.members.binary_search(&id) {
            Ok(pos) => {
                self.members.remove(pos);
                true
            }
            Err(_) => false,
        }
    }
}

/// Memberships, relays and the not-clustered list `NL` of one clustering run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterState {
    pub clusters: Vec<Cluster>,
    pub not_clustered: BTreeSet<NodeId>,
    next_id: u32,
}

impl ClusterState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cluster count `K`.
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn push_cluster(&mut self, members: Vec<NodeId>, relay: RelayPlacement) -> ClusterId {
        let id = ClusterId(self.next_id);
        self.next_id += 1;
        self.clusters.push(Cluster::new(id, members, relay));
        id
    }

    /// Rebuilds a state from explicit clusters, e.g. when re-reading results.
    pub fn from_parts(clusters: Vec<Cluster>, not_clustered: BTreeSet<NodeId>) -> Self {
        let next_id = clusters.iter().map(|c| c.id.0 + 1).max().unwrap_or(0);
        Self {
            clusters,
            not_clustered,
            next_id,
        }
    }

    pub fn cluster(&self, id: ClusterId) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.id == id)
    }

    pub fn cluster_of(&self, node: NodeId) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.contains(node))
    }

    pub fn drop_empty(&mut self) -> usize {
        let before = self.clusters.len();
        self.clusters.retain(|c| !c.is_empty());
        before - self.clusters.len()
    }

    pub fn assigned_count(&self) -> usize {
        self.clusters.iter().map(Cluster::len).sum::<usize>() + self.not_clustered.len()
    }

    /// Canonical membership snapshot: sorted member lists plus `NL`.
    pub fn membership_key(&self) -> (Vec<Vec<NodeId>>, Vec<NodeId>) {
        let mut sets: Vec<Vec<NodeId>> = self.clusters.iter().map(|c| c.members.clone()).collect();
        sets.sort();
        (sets, self.not_clustered.iter().copied().collect())
    }

    /// Checks that every id in `ids` appears exactly once across clusters and
    /// `NL`, and that no cluster is empty.
    pub fn check_conservation(&self, ids: &[NodeId]) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for c in &self.clusters {
            if c.is_empty() {
                return Err(format!("{} has no members", c.id));
            }
            for &m in &c.members {
                if !seen.insert(m) {
                    return Err(format!("{m} appears more than once"));
                }
            }
        }
        for &m in &self.not_clustered {
            if !seen.insert(m) {
                return Err(format!("{m} is both clustered and in NL"));
            }
        }
        let expected: BTreeSet<NodeId> = ids.iter().copied().collect();
        if seen != expected {
            return Err(format!(
                "membership covers {} ids, expected {}",
                seen.len(),
                expected.len()
            ));
        }
        Ok(())
    }
}

/// Every tunable of a clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Energy prioritizing factor, in `[1, 10]`.
    pub alpha: f64,
    /// Uniformity factor `Û`, in `(0, 1]`.
    pub uniformity: f64,
    /// Outgoing-link capacity `Q_o` of a relay, bandwidth units.
    pub capacity: f64,
    pub snr_target: f64,
    /// Interpret `snr_target` as decibels instead of a linear ratio.
    pub snr_in_db: bool,
    /// Noise power spectral density `N_o`, W/Hz.
    pub noise_psd: f64,
    /// Receiver bandwidth `f`, Hz.
    pub bandwidth: f64,
    /// Maximum tissue-safe transmit power `Pt_s`, W.
    pub safe_power: f64,
    /// Multiplier turning a depth in cm into the unit used in the weight exponent.
    pub depth_scale: f64,
    /// Mean implant power must not exceed this fraction of the mean surface power.
    pub heterogeneity_ratio: f64,
    /// Scale of the L1 balancing penalty for clusters with several implants.
    pub l1_penalty: f64,
    /// Initial log-barrier weight of the relay optimizer.
    pub barrier_mu: f64,
    pub max_iterations: usize,
    /// Optional cap on the skin-to-skin threshold link length, cm.
    pub threshold_cap_ss: Option<f64>,
    /// Optional cap on the muscle-to-skin threshold link length, cm.
    pub threshold_cap_ms: Option<f64>,
    pub channel: ChannelModel,
    pub lifetime: LifetimeModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            alpha: 4.0,
            uniformity: 0.5,
            capacity: 10.0,
            snr_target: 5.0,
            snr_in_db: false,
            noise_psd: 1e-12,
            bandwidth: 1e4,
            safe_power: 1e-2,
            depth_scale: 1.0,
            heterogeneity_ratio: 0.5,
            l1_penalty: 0.1,
            barrier_mu: 0.1,
            max_iterations: 100,
            threshold_cap_ss: None,
            threshold_cap_ms: None,
            channel: ChannelModel::default(),
            lifetime: LifetimeModel::default(),
        }
    }
}

impl ScenarioConfig {
    /// SNR target as a linear power ratio.
    pub fn snr_linear(&self) -> f64 {
        if self.snr_in_db {
            10f64.powf(self.snr_target / 10.0)
        } else {
            self.snr_target
        }
    }

    /// `δ · N_o · f`, the received power the link budget must reach.
    pub fn noise_floor(&self) -> f64 {
        self.snr_linear() * self.noise_psd * self.bandwidth
    }

    /// Applies the same cap to both threshold link lengths.
    pub fn with_threshold_cap(mut self, cap: f64) -> Self {
        self.threshold_cap_ss = Some(cap);
        self.threshold_cap_ms = Some(cap);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |s: &str| Err(ModelError::InvalidConfig(s.to_string()));
        if !(1.0..=10.0).contains(&self.alpha) {
            return err("alpha must lie in [1, 10]");
        }
        if !(self.uniformity > 0.0 && self.uniformity <= 1.0) {
            return err("uniformity must lie in (0, 1]");
        }
        if !(self.capacity > 0.0) {
            return err("capacity must be positive");
        }
        if !(self.snr_linear() > 0.0) {
            return err("snr target must be positive");
        }
        if !(self.noise_psd > 0.0 && self.bandwidth > 0.0) {
            return err("noise psd and bandwidth must be positive");
        }
        if !(self.safe_power > 0.0) {
            return err("safe power must be positive");
        }
        if !(self.depth_scale >= 0.0) {
            return err("depth scale must be non-negative");
        }
        if !(self.heterogeneity_ratio > 0.0) {
            return err("heterogeneity ratio must be positive");
        }
        if !(self.l1_penalty >= 0.0) {
            return err("l1 penalty must be non-negative");
        }
        if !(self.barrier_mu > 0.0) {
            return err("barrier weight must be positive");
        }
        if self.max_iterations == 0 {
            return err("max_iterations must be at least 1");
        }
        for cap in [self.threshold_cap_ss, self.threshold_cap_ms].into_iter().flatten() {
            if !(cap > 0.0) {
                return err("threshold caps must be positive");
            }
        }
        self.channel.validate().map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        self.lifetime.validate().map_err(ModelError::InvalidConfig)?;
        Ok(())
    }
}

/// Horizontal offset and depth between a node and a relay.
fn offsets(node: &NodeSpec, relay: &RelayPlacement) -> (f64, f64, f64) {
    // Implants measure to the relay's projection onto their own plane, which
    // shares (x, y) with the relay, so both branches reduce to the same form.
    (node.x - relay.x, node.y - relay.y, node.z)
}

/// Link length between a node and a surface relay.
pub fn link_length(node: &NodeSpec, relay: &RelayPlacement) -> f64 {
    let (dx, dy, dz) = offsets(node, relay);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Horizontal (in-plane) separation between a node and a relay.
pub fn planar_separation(node: &NodeSpec, relay: &RelayPlacement) -> f64 {
    let (dx, dy, _) = offsets(node, relay);
    dx.hypot(dy)
}

/// Link weight `α^((T + z) − 1) · η / Ση`.
///
/// `cluster_rates` are the data rates of every member of the node's cluster,
/// the node itself included.
pub fn node_weight(
    node: &NodeSpec,
    cluster_rates: &[f64],
    alpha: f64,
    depth_scale: f64,
) -> Result<f64, ModelError> {
    if cluster_rates.is_empty() {
        return Err(ModelError::EmptyCluster);
    }
    let total: f64 = cluster_rates.iter().sum();
    let exponent = node.tissue.index() + node.z * depth_scale - 1.0;
    Ok(alpha.powf(exponent) * node.data_rate / total)
}

/// Cluster capacity: at least one member and `Ση ≤ Q_o`.
pub fn capacity_ok(cluster_rates: &[f64], capacity: f64) -> bool {
    !cluster_rates.is_empty() && cluster_rates.iter().sum::<f64>() <= capacity
}

/// Implant uniformity: `min / max > Û`, vacuously true for at most one implant.
pub fn uniformity_ok(implant_lengths: &[f64], uniformity: f64) -> bool {
    if implant_lengths.len() <= 1 {
        return true;
    }
    let (lo, hi) = implant_lengths
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    if hi <= 0.0 {
        // every implant co-located with the relay
        return true;
    }
    lo / hi > uniformity
}
