//! Iterative cluster optimization.
//!
//! Starting from the ICAP partition, each iteration runs five steps:
//!
//! 1. optimize every relay position ([`NicoContext::optimize_relay`]);
//! 2. evict members that break a cluster constraint into `NL`
//!    ([`NicoContext::reform_cluster`]);
//! 3. place `NL` nodes at the nearest relay that can accept them;
//! 4. move nodes that are strictly closer to a foreign relay, drop emptied
//!    clusters and merge compatible neighbours;
//! 5. give every node still in `NL` a dedicated relay.
//!
//! The loop stops once an iteration changes no membership. A repeated
//! membership snapshot freezes the cycle's state with the fewest clusters and
//! finishes with relay optimization plus eviction only.

mod relay;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{effective_threshold, pt_max, pt_min_at};
use crate::model::{
    capacity_ok, link_length, uniformity_ok, Cluster, ClusterId, ClusterState, ModelError, NodeId, NodeSpec,
    RelayPlacement, ScenarioConfig, Tissue, TissueStack,
};

pub use relay::{Infeasible, RelayProblem, RelaySolution, RelayTerm};

/// Relative slack on length and power comparisons.
const REL_TOL: f64 = 1e-9;
/// Distances are compared after rounding to this many units per cm.
const DISTANCE_QUANTUM: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NicoError {
    #[error("no nodes")]
    NoNodes,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("infeasible scenario, unreachable nodes: {}", join_ids(.nodes))]
    Unreachable { nodes: Vec<NodeId> },
    #[error("no convergence after {iterations} iterations (possible oscillation)")]
    MaxIterations {
        iterations: usize,
        state: Box<ClusterState>,
    },
    #[error("membership invariant broken: {0}")]
    Conservation(String),
}

fn join_ids(ids: &[NodeId]) -> String {
    ids.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// First constraint a cluster breaks at a given relay.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    /// Transmit power above `min(Pt_s, E0/H)`.
    PowerBound(Vec<NodeId>),
    /// Link longer than the node's threshold.
    LinkLength(Vec<NodeId>),
    /// Mean implant power above `β ×` mean surface power.
    Heterogeneity,
    /// Implant link ratio `min / max ≤ Û`.
    Uniformity,
    /// `Ση > Q_o`.
    Capacity,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty cluster"),
            Violation::PowerBound(ids) => write!(f, "power bound exceeded by {}", join_ids(ids)),
            Violation::LinkLength(ids) => write!(f, "threshold length exceeded by {}", join_ids(ids)),
            Violation::Heterogeneity => write!(f, "implant power not below surface power"),
            Violation::Uniformity => write!(f, "implant link ratio at or below uniformity factor"),
            Violation::Capacity => write!(f, "capacity exceeded"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NicoStep {
    OptimizeRelays,
    Reform,
    AssignNearest,
    ReassignMerge,
    Dedicate,
}

/// State summary after one step of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub step: NicoStep,
    pub clusters: usize,
    pub not_clustered: usize,
    /// Sum of relay objectives over all clusters at their current relays.
    pub objective: f64,
    pub changed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    /// A membership snapshot repeated; memberships were frozen.
    OscillationFrozen,
}

/// Final link of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLink {
    pub id: NodeId,
    pub cluster: ClusterId,
    pub tissue: Tissue,
    /// `Λ`, cm.
    pub length: f64,
    pub threshold: f64,
    /// Minimum transmit power at `length`, W.
    pub pt: f64,
    pub pt_max: f64,
    pub lifetime_days: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NicoOutcome {
    pub state: ClusterState,
    /// One entry per node, sorted by id.
    pub links: Vec<NodeLink>,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: Vec<TraceRecord>,
}

impl NicoOutcome {
    pub fn link(&self, id: NodeId) -> Option<&NodeLink> {
        self.links.binary_search_by_key(&id, |l| l.id).ok().map(|i| &self.links[i])
    }
}

/// Validated nodes, per-node thresholds and configuration shared by every step.
#[derive(Debug, Clone)]
pub struct NicoContext<'a> {
    config: &'a ScenarioConfig,
    stack: &'a TissueStack,
    nodes: BTreeMap<NodeId, NodeSpec>,
    thresholds: BTreeMap<NodeId, f64>,
}

impl<'a> NicoContext<'a> {
    /// Validates inputs. Nodes that no relay could ever serve (threshold below
    /// their depth, zero power budget, or a rate above `Q_o`) make the whole
    /// scenario infeasible and are listed together.
    pub fn new(nodes: &[NodeSpec], stack: &'a TissueStack, config: &'a ScenarioConfig) -> Result<Self, NicoError> {
        if nodes.is_empty() {
            return Err(NicoError::NoNodes);
        }
        config.validate()?;
        stack.validate()?;
        let mut map = BTreeMap::new();
        for n in nodes {
            n.validate(stack)?;
            if map.insert(n.id, n.clone()).is_some() {
                return Err(ModelError::InvalidNode {
                    id: n.id,
                    reason: "duplicate id".into(),
                }
                .into());
            }
        }
        let mut thresholds = BTreeMap::new();
        let mut unreachable = Vec::new();
        for n in map.values() {
            match effective_threshold(config, n) {
                Ok(th) if th >= n.z && n.data_rate <= config.capacity => {
                    thresholds.insert(n.id, th);
                }
                _ => unreachable.push(n.id),
            }
        }
        if !unreachable.is_empty() {
            return Err(NicoError::Unreachable { nodes: unreachable });
        }
        Ok(Self {
            config,
            stack,
            nodes: map,
            thresholds,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        self.config
    }

    pub fn stack(&self) -> &TissueStack {
        self.stack
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.nodes.keys().copied().collect()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.values()
    }

    pub fn node(&self, id: NodeId) -> &NodeSpec {
        &self.nodes[&id]
    }

    pub fn threshold(&self, id: NodeId) -> f64 {
        self.thresholds[&id]
    }

    pub fn link(&self, id: NodeId, relay: &RelayPlacement) -> f64 {
        link_length(self.node(id), relay)
    }

    pub fn pt(&self, id: NodeId, relay: &RelayPlacement) -> f64 {
        pt_min_at(self.config, self.node(id), self.link(id, relay))
    }

    fn rate_sum(&self, members: &[NodeId]) -> f64 {
        members.iter().map(|&m| self.node(m).data_rate).sum()
    }

    pub fn problem(&self, members: &[NodeId]) -> Result<RelayProblem, ModelError> {
        let specs: Vec<&NodeSpec> = members.iter().map(|&m| self.node(m)).collect();
        let th: Vec<f64> = members.iter().map(|&m| self.threshold(m)).collect();
        RelayProblem::new(&specs, &th, self.config, self.stack.x_range, self.stack.y_range)
    }

    /// Optimal relay for `members`, or a certificate naming the members that
    /// no surface point can serve together with the rest.
    pub fn optimize_relay(&self, members: &[NodeId]) -> Result<RelaySolution, Infeasible> {
        self.problem(members)
            .expect("members are validated and non-empty")
            .solve()
    }

    /// Checks link, power, heterogeneity, uniformity and capacity constraints
    /// of `members` served from `relay`.
    pub fn check(&self, members: &[NodeId], relay: &RelayPlacement) -> Result<(), Violation> {
        if members.is_empty() {
            return Err(Violation::Empty);
        }
        let mut too_long = Vec::new();
        let mut too_loud = Vec::new();
        let (mut imp_pt, mut imp_n, mut surf_pt, mut surf_n) = (0.0, 0usize, 0.0, 0usize);
        let mut implant_lengths = Vec::new();
        for &m in members {
            let node = self.node(m);
            let len = self.link(m, relay);
            if len > self.threshold(m) * (1.0 + REL_TOL) {
                too_long.push(m);
            }
            let pt = pt_min_at(self.config, node, len);
            if pt > pt_max(self.config, node) * (1.0 + REL_TOL) {
                too_loud.push(m);
            }
            if node.is_implant() {
                imp_pt += pt;
                imp_n += 1;
                implant_lengths.push(len);
            } else {
                surf_pt += pt;
                surf_n += 1;
            }
        }
        if !too_loud.is_empty() {
            return Err(Violation::PowerBound(too_loud));
        }
        if !too_long.is_empty() {
            return Err(Violation::LinkLength(too_long));
        }
        if imp_n > 0 && surf_n > 0 {
            let (imp_mean, surf_mean) = (imp_pt / imp_n as f64, surf_pt / surf_n as f64);
            if imp_mean > self.config.heterogeneity_ratio * surf_mean * (1.0 + REL_TOL) {
                return Err(Violation::Heterogeneity);
            }
        }
        if !uniformity_ok(&implant_lengths, self.config.uniformity) {
            return Err(Violation::Uniformity);
        }
        let rates: Vec<f64> = members.iter().map(|&m| self.node(m).data_rate).collect();
        if !capacity_ok(&rates, self.config.capacity) {
            return Err(Violation::Capacity);
        }
        Ok(())
    }

    /// Member with the longest link, preferring implants when any qualify.
    /// Lengths compare after quantization; ties go to the higher id.
    fn longest(&self, candidates: &[NodeId], relay: &RelayPlacement, implants_first: bool) -> Option<NodeId> {
        let pick = |pool: Vec<NodeId>| {
            pool.into_iter().max_by(|&a, &b| {
                quantize(self.link(a, relay))
                    .cmp(&quantize(self.link(b, relay)))
                    .then(a.cmp(&b))
            })
        };
        let implants: Vec<NodeId> = candidates
            .iter()
            .copied()
            .filter(|&m| self.node(m).is_implant())
            .collect();
        if implants_first && !implants.is_empty() {
            pick(implants)
        } else {
            pick(candidates.to_vec())
        }
    }

    /// Member chosen for eviction under `violation`.
    fn eviction_target(&self, cluster: &Cluster, violation: &Violation) -> Option<NodeId> {
        match violation {
            Violation::Empty => None,
            Violation::PowerBound(ids) | Violation::LinkLength(ids) => self.longest(ids, &cluster.relay, true),
            Violation::Heterogeneity | Violation::Uniformity => self.longest(&cluster.members, &cluster.relay, true),
            Violation::Capacity => cluster.members.iter().copied().max_by(|&a, &b| {
                self.node(a)
                    .data_rate
                    .total_cmp(&self.node(b).data_rate)
                    .then(self.link(a, &cluster.relay).total_cmp(&self.link(b, &cluster.relay)))
                    .then(a.cmp(&b))
            }),
        }
    }

    /// Evicts members into `not_clustered` until `cluster` conforms at its
    /// relay. With a certificate, violators are evicted one at a time (longest
    /// link first) and the relay re-optimized until it becomes feasible.
    /// Returns the evicted ids in eviction order.
    pub fn reform_cluster(
        &self,
        cluster: &mut Cluster,
        certificate: Option<Infeasible>,
        not_clustered: &mut BTreeSet<NodeId>,
    ) -> Vec<NodeId> {
        let mut evicted = Vec::new();
        let mut pending = certificate;
        while let Some(cert) = pending.take() {
            let victim = self
                .longest(&cert.violators, &cert.closest, false)
                .expect("certificate lists at least one violator");
            cluster.remove(victim);
            not_clustered.insert(victim);
            evicted.push(victim);
            if cluster.is_empty() {
                return evicted;
            }
            match self.optimize_relay(&cluster.members) {
                Ok(sol) => cluster.relay = sol.relay,
                Err(next) => pending = Some(next),
            }
        }
        while let Err(v) = self.check(&cluster.members, &cluster.relay) {
            let Some(victim) = self.eviction_target(cluster, &v) else {
                break;
            };
            cluster.remove(victim);
            not_clustered.insert(victim);
            evicted.push(victim);
        }
        evicted
    }

    /// Assigns each `NL` node (ascending id) to the nearest relay whose cluster
    /// still conforms with it added. Ties prefer fewer members, then the lower
    /// rate sum, then the lower cluster id. Unassignable nodes stay in `NL`.
    pub fn assign_nearest_relay(&self, state: &mut ClusterState) -> Vec<(NodeId, ClusterId)> {
        let mut assigned = Vec::new();
        let pending: Vec<NodeId> = state.not_clustered.iter().copied().collect();
        for id in pending {
            if let Some(idx) = self.best_host(id, &state.clusters, None, f64::INFINITY) {
                state.clusters[idx].insert(id);
                state.not_clustered.remove(&id);
                assigned.push((id, state.clusters[idx].id));
            }
        }
        assigned
    }

    /// Index of the preferred cluster that can accept `id` at its current relay,
    /// skipping `exclude` and any relay not strictly closer than `within`.
    fn best_host(&self, id: NodeId, clusters: &[Cluster], exclude: Option<usize>, within: f64) -> Option<usize> {
        let th = self.threshold(id) * (1.0 + REL_TOL);
        let mut candidates: Vec<(i64, usize, f64, ClusterId, usize)> = clusters
            .iter()
            .enumerate()
            .filter(|&(i, _)| Some(i) != exclude)
            .filter_map(|(i, c)| {
                let d = self.link(id, &c.relay);
                (d <= th && d < within).then(|| (quantize(d), c.len(), self.rate_sum(&c.members), c.id, i))
            })
            .collect();
        candidates.sort_by(|a, b| {
            a.0.cmp(&b.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.total_cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        candidates.into_iter().map(|c| c.4).find(|&i| {
            let mut members = clusters[i].members.clone();
            members.push(id);
            self.check(&members, &clusters[i].relay).is_ok()
        })
    }

    /// Moves nodes that are strictly closer to a foreign relay when both
    /// clusters still conform, deletes emptied clusters, then merges pairs of
    /// clusters whose union conforms at its own optimal relay. Returns whether
    /// any membership changed.
    pub fn reassign_and_merge(&self, state: &mut ClusterState) -> bool {
        let mut changed = false;
        let snapshot: Vec<(usize, NodeId)> = state
            .clusters
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.members.iter().map(move |&m| (i, m)))
            .collect();
        for (from, id) in snapshot {
            if !state.clusters[from].contains(id) {
                continue;
            }
            let current = quantize(self.link(id, &state.clusters[from].relay));
            let mut rest = state.clusters[from].members.clone();
            rest.retain(|&m| m != id);
            if !rest.is_empty() && self.check(&rest, &state.clusters[from].relay).is_err() {
                continue;
            }
            let strictly_closer = (current as f64 - 0.5) / DISTANCE_QUANTUM;
            if let Some(to) = self.best_host(id, &state.clusters, Some(from), strictly_closer) {
                state.clusters[from].remove(id);
                state.clusters[to].insert(id);
                changed = true;
            }
        }
        if state.drop_empty() > 0 {
            changed = true;
        }
        changed | self.merge_clusters(state)
    }

    /// Greedy pairwise merging, closest relays first; each cluster takes part
    /// in at most one merge per call.
    fn merge_clusters(&self, state: &mut ClusterState) -> bool {
        let k = state.clusters.len();
        let rates: Vec<f64> = state.clusters.iter().map(|c| self.rate_sum(&c.members)).collect();
        let mut pairs: Vec<(i64, usize, usize)> = Vec::new();
        for a in 0..k {
            for b in a + 1..k {
                if rates[a] + rates[b] > self.config.capacity {
                    continue;
                }
                if !self.reachable_together(&state.clusters[a].members, &state.clusters[b].members) {
                    continue;
                }
                let (ra, rb) = (&state.clusters[a].relay, &state.clusters[b].relay);
                pairs.push((quantize((ra.x - rb.x).hypot(ra.y - rb.y)), a, b));
            }
        }
        pairs.sort();
        let mut used = vec![false; k];
        let mut merged = Vec::new();
        for (_, a, b) in pairs {
            if used[a] || used[b] {
                continue;
            }
            let mut union = state.clusters[a].members.clone();
            union.extend_from_slice(&state.clusters[b].members);
            union.sort();
            let Ok(sol) = self.optimize_relay(&union) else {
                continue;
            };
            if self.check(&union, &sol.relay).is_ok() {
                used[a] = true;
                used[b] = true;
                merged.push((a, b, union, sol.relay));
            }
        }
        if merged.is_empty() {
            return false;
        }
        for (a, b, union, relay) in merged {
            // the lower cluster id survives
            let (keep, drop) = if state.clusters[a].id < state.clusters[b].id { (a, b) } else { (b, a) };
            state.clusters[keep].members = union;
            state.clusters[keep].relay = relay;
            state.clusters[drop].members.clear();
        }
        state.drop_empty();
        true
    }

    /// Necessary condition for a common relay: every cross pair's threshold
    /// disks on the surface overlap.
    fn reachable_together(&self, a: &[NodeId], b: &[NodeId]) -> bool {
        let reach = |id: NodeId| {
            let n = self.node(id);
            let th = self.threshold(id);
            (th * th - n.z * n.z).max(0.0).sqrt()
        };
        a.iter().all(|&i| {
            b.iter().all(|&j| {
                let (ni, nj) = (self.node(i), self.node(j));
                (ni.x - nj.x).hypot(ni.y - nj.y) <= (reach(i) + reach(j)) * (1.0 + REL_TOL)
            })
        })
    }

    /// Gives every node left in `NL` its own cluster with an optimized relay.
    pub fn dedicate_relays(&self, state: &mut ClusterState) -> Vec<ClusterId> {
        let pending: Vec<NodeId> = std::mem::take(&mut state.not_clustered).into_iter().collect();
        pending
            .into_iter()
            .map(|id| {
                let relay = match self.optimize_relay(&[id]) {
                    Ok(sol) => sol.relay,
                    // unreachable ids are rejected up front
                    Err(cert) => cert.closest,
                };
                state.push_cluster(vec![id], relay)
            })
            .collect()
    }

    /// Re-optimizes every relay in parallel; returns certificates for the
    /// clusters that have no feasible relay.
    fn optimize_all(&self, state: &mut ClusterState) -> Vec<Option<Infeasible>> {
        let results: Vec<Result<RelaySolution, Infeasible>> = state
            .clusters
            .par_iter()
            .map(|c| self.optimize_relay(&c.members))
            .collect();
        state
            .clusters
            .iter_mut()
            .zip(results)
            .map(|(c, r)| match r {
                Ok(sol) => {
                    c.relay = sol.relay;
                    None
                }
                Err(cert) => Some(cert),
            })
            .collect()
    }

    fn reform_all(&self, state: &mut ClusterState, certificates: Vec<Option<Infeasible>>) -> usize {
        let mut evicted = 0;
        let mut nl = std::mem::take(&mut state.not_clustered);
        for (c, cert) in state.clusters.iter_mut().zip(certificates) {
            evicted += self.reform_cluster(c, cert, &mut nl).len();
        }
        state.not_clustered = nl;
        state.drop_empty();
        evicted
    }

    /// Sum of relay objectives over all clusters at their current relays.
    pub fn total_objective(&self, state: &ClusterState) -> f64 {
        state
            .clusters
            .iter()
            .filter(|c| !c.is_empty())
            .map(|c| {
                self.problem(&c.members)
                    .expect("non-empty validated members")
                    .objective(&c.relay)
            })
            .sum()
    }

    /// Runs steps 1–5 until an iteration leaves memberships unchanged.
    pub fn run(&self, initial: ClusterState) -> Result<NicoOutcome, NicoError> {
        let ids = self.ids();
        let mut state = initial;
        state.drop_empty();
        state.check_conservation(&ids).map_err(NicoError::Conservation)?;
        let mut trace = Vec::new();
        // start-of-iteration snapshots, for cycle detection
        let mut seen: HashMap<MembershipKey, usize> = HashMap::new();
        let mut history: Vec<ClusterState> = Vec::new();

        for iteration in 1..=self.config.max_iterations {
            let start = state.membership_key();
            if let Some(&first) = seen.get(&start) {
                // freeze the cycle member with the fewest clusters, earliest first
                let mut frozen = history[first..]
                    .iter()
                    .min_by_key(|s| s.k())
                    .cloned()
                    .expect("cycle holds at least one state");
                self.finish_frozen(&mut frozen, iteration, &mut trace);
                return self.outcome(frozen, iteration, Termination::OscillationFrozen, trace);
            }
            seen.insert(start.clone(), history.len());
            history.push(state.clone());

            let certs = self.optimize_all(&mut state);
            self.record(&mut trace, iteration, NicoStep::OptimizeRelays, &state, false);
            let evicted = self.reform_all(&mut state, certs);
            self.record(&mut trace, iteration, NicoStep::Reform, &state, evicted > 0);
            let assigned = self.assign_nearest_relay(&mut state);
            self.record(&mut trace, iteration, NicoStep::AssignNearest, &state, !assigned.is_empty());
            let moved = self.reassign_and_merge(&mut state);
            self.record(&mut trace, iteration, NicoStep::ReassignMerge, &state, moved);
            let dedicated = self.dedicate_relays(&mut state);
            self.record(&mut trace, iteration, NicoStep::Dedicate, &state, !dedicated.is_empty());

            state.check_conservation(&ids).map_err(NicoError::Conservation)?;
            let changed = state.membership_key() != start;
            if !changed && state.not_clustered.is_empty() && state.k() <= ids.len() {
                return self.outcome(state, iteration, Termination::Converged, trace);
            }
        }
        Err(NicoError::MaxIterations {
            iterations: self.config.max_iterations,
            state: Box::new(state),
        })
    }

    /// Frozen memberships: optimize, evict and dedicate until nothing is
    /// evicted. Terminates because each round either evicts or stops, and a
    /// singleton never evicts.
    fn finish_frozen(&self, state: &mut ClusterState, iteration: usize, trace: &mut Vec<TraceRecord>) {
        loop {
            let certs = self.optimize_all(state);
            self.record(trace, iteration, NicoStep::OptimizeRelays, state, false);
            let evicted = self.reform_all(state, certs);
            self.record(trace, iteration, NicoStep::Reform, state, evicted > 0);
            let dedicated = self.dedicate_relays(state);
            self.record(trace, iteration, NicoStep::Dedicate, state, !dedicated.is_empty());
            if evicted == 0 {
                break;
            }
        }
    }

    fn record(&self, trace: &mut Vec<TraceRecord>, iteration: usize, step: NicoStep, state: &ClusterState, changed: bool) {
        trace.push(TraceRecord {
            iteration,
            step,
            clusters: state.k(),
            not_clustered: state.not_clustered.len(),
            objective: self.total_objective(state),
            changed,
        });
    }

    fn outcome(
        &self,
        state: ClusterState,
        iterations: usize,
        termination: Termination,
        trace: Vec<TraceRecord>,
    ) -> Result<NicoOutcome, NicoError> {
        let mut links = Vec::with_capacity(self.nodes.len());
        for c in &state.clusters {
            for &m in &c.members {
                let node = self.node(m);
                let length = self.link(m, &c.relay);
                let pt = pt_min_at(self.config, node, length);
                links.push(NodeLink {
                    id: m,
                    cluster: c.id,
                    tissue: node.tissue,
                    length,
                    threshold: self.threshold(m),
                    pt,
                    pt_max: pt_max(self.config, node),
                    lifetime_days: self.config.lifetime.lifetime_days(pt),
                });
            }
        }
        links.sort_by_key(|l| l.id);
        Ok(NicoOutcome {
            state,
            links,
            iterations,
            termination,
            trace,
        })
    }
}

type MembershipKey = (Vec<Vec<NodeId>>, Vec<NodeId>);

fn quantize(d: f64) -> i64 {
    (d * DISTANCE_QUANTUM).round() as i64
}

/// Runs NICO from `initial` over `nodes`.
pub fn run_nico(
    nodes: &[NodeSpec],
    stack: &TissueStack,
    config: &ScenarioConfig,
    initial: ClusterState,
) -> Result<NicoOutcome, NicoError> {
    NicoContext::new(nodes, stack, config)?.run(initial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icap::run_icap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stack() -> TissueStack {
        TissueStack::new([0.0, 100.0], [0.0, 100.0])
    }

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn capacity_eviction_takes_highest_rate() {
        let (st, cfg) = (stack(), ScenarioConfig::default());
        let nodes = [
            NodeSpec::surface(0, 50.0, 50.0, 4.0),
            NodeSpec::surface(1, 51.0, 50.0, 4.0),
            NodeSpec::surface(2, 50.0, 51.0, 5.0),
        ];
        let ctx = NicoContext::new(&nodes, &st, &cfg).unwrap();
        let mut c = Cluster::new(ClusterId(0), ids(&[0, 1, 2]), RelayPlacement::new(50.3, 50.3));
        let mut nl = BTreeSet::new();
        assert_eq!(ctx.reform_cluster(&mut c, None, &mut nl), ids(&[2]));
        assert_eq!(c.members, ids(&[0, 1]));
        assert_eq!(nl, ids(&[2]).into_iter().collect());
    }

    #[test]
    fn uniformity_eviction_takes_longest_implant() {
        let st = stack();
        let cfg = ScenarioConfig {
            uniformity: 0.9,
            ..ScenarioConfig::default()
        };
        let nodes = [NodeSpec::implant(0, 54.0, 50.0, 0.0, 1.0), NodeSpec::implant(1, 45.0, 50.0, 0.0, 1.0)];
        let ctx = NicoContext::new(&nodes, &st, &cfg).unwrap();
        let mut c = Cluster::new(ClusterId(0), ids(&[0, 1]), RelayPlacement::new(50.0, 50.0));
        assert_eq!(ctx.check(&c.members, &c.relay), Err(Violation::Uniformity));
        let mut nl = BTreeSet::new();
        assert_eq!(ctx.reform_cluster(&mut c, None, &mut nl), ids(&[1]));
    }

    #[test]
    fn conforming_cluster_is_untouched() {
        let (st, cfg) = (stack(), ScenarioConfig::default());
        let nodes = [NodeSpec::surface(0, 50.0, 50.0, 2.0), NodeSpec::surface(1, 53.0, 50.0, 2.0)];
        let ctx = NicoContext::new(&nodes, &st, &cfg).unwrap();
        let mut c = Cluster::new(ClusterId(3), ids(&[0, 1]), RelayPlacement::new(51.0, 50.0));
        let before = c.clone();
        let mut nl = BTreeSet::new();
        assert!(ctx.reform_cluster(&mut c, None, &mut nl).is_empty());
        assert_eq!(c, before);
        assert!(nl.is_empty());
    }

    #[test]
    fn certificate_evicts_until_feasible() {
        let (st, cfg) = (stack(), ScenarioConfig::default().with_threshold_cap(5.0));
        let nodes = [
            NodeSpec::surface(0, 10.0, 10.0, 1.0),
            NodeSpec::surface(1, 12.0, 10.0, 1.0),
            NodeSpec::surface(2, 40.0, 10.0, 1.0),
        ];
        let ctx = NicoContext::new(&nodes, &st, &cfg).unwrap();
        let members = ids(&[0, 1, 2]);
        let cert = ctx.optimize_relay(&members).unwrap_err();
        let mut c = Cluster::new(ClusterId(0), members, RelayPlacement::new(20.0, 10.0));
        let mut nl = BTreeSet::new();
        assert_eq!(ctx.reform_cluster(&mut c, Some(cert), &mut nl), ids(&[2]));
        assert!(ctx.check(&c.members, &c.relay).is_ok());
    }

    #[test]
    fn tie_goes_to_lighter_relay() {
        let (st, cfg) = (stack(), ScenarioConfig::default());
        let nodes = [
            NodeSpec::surface(0, 50.0, 50.0, 1.0),
            NodeSpec::surface(1, 44.0, 50.0, 1.0),
            NodeSpec::surface(2, 44.0, 50.0, 1.0),
            NodeSpec::surface(3, 44.0, 50.0, 1.0),
            NodeSpec::surface(4, 56.0, 50.0, 1.0),
            NodeSpec::surface(5, 56.0, 50.0, 1.0),
            NodeSpec::surface(6, 56.0, 50.0, 1.0),
            NodeSpec::surface(7, 56.0, 50.0, 1.0),
            NodeSpec::surface(8, 56.0, 50.0, 1.0),
        ];
        let ctx = NicoContext::new(&nodes, &st, &cfg).unwrap();
        let mut state = ClusterState::new();
        state.push_cluster(ids(&[4, 5, 6, 7, 8]), RelayPlacement::new(56.0, 50.0));
        state.push_cluster(ids(&[1, 2, 3]), RelayPlacement::new(44.0, 50.0));
        state.not_clustered.insert(NodeId(0));
        assert_eq!(ctx.assign_nearest_relay(&mut state), vec![(NodeId(0), ClusterId(1))]);
    }

    #[test]
    fn unique_and_missing_candidates() {
        let (st, cfg) = (stack(), ScenarioConfig::default().with_threshold_cap(10.0));
        let nodes = [
            NodeSpec::surface(0, 10.0, 10.0, 1.0),
            NodeSpec::surface(1, 15.0, 10.0, 1.0),
            NodeSpec::surface(2, 90.0, 90.0, 1.0),
        ];
        let ctx = NicoContext::new(&nodes, &st, &cfg).unwrap();
        let mut state = ClusterState::new();
        state.push_cluster(ids(&[0]), RelayPlacement::new(10.0, 10.0));
        state.not_clustered.extend(ids(&[1, 2]));
        assert_eq!(ctx.assign_nearest_relay(&mut state), vec![(NodeId(1), ClusterId(0))]);
        assert_eq!(state.not_clustered, ids(&[2]).into_iter().collect());
    }

    #[test]
    fn adjacent_singletons_merge() {
        let (st, cfg) = (stack(), ScenarioConfig::default());
        let nodes = [NodeSpec::surface(0, 10.0, 10.0, 2.0), NodeSpec::surface(1, 14.0, 10.0, 3.0)];
        let ctx = NicoContext::new(&nodes, &st, &cfg).unwrap();
        let mut state = ClusterState::new();
        state.push_cluster(ids(&[0]), RelayPlacement::new(10.0, 10.0));
        state.push_cluster(ids(&[1]), RelayPlacement::new(14.0, 10.0));
        assert!(ctx.reassign_and_merge(&mut state));
        assert_eq!(state.k(), 1);
        assert_eq!(state.clusters[0].members, ids(&[0, 1]));
    }

    #[test]
    fn equidistant_node_stays() {
        let (st, cfg) = (stack(), ScenarioConfig::default());
        let nodes = [
            NodeSpec::surface(0, 50.0, 50.0, 3.0),
            NodeSpec::surface(1, 46.0, 50.0, 4.0),
            NodeSpec::surface(2, 54.0, 50.0, 4.0),
        ];
        let ctx = NicoContext::new(&nodes, &st, &cfg).unwrap();
        let mut state = ClusterState::new();
        state.push_cluster(ids(&[0, 1]), RelayPlacement::new(47.0, 50.0));
        state.push_cluster(ids(&[2]), RelayPlacement::new(53.0, 50.0));
        // capacity blocks any merge, and node 0 is 3 cm from both relays
        assert!(!ctx.reassign_and_merge(&mut state));
        assert_eq!(state.clusters[0].members, ids(&[0, 1]));
    }

    #[test]
    fn move_overflowing_capacity_is_rejected() {
        let (st, cfg) = (stack(), ScenarioConfig::default());
        let nodes = [
            NodeSpec::surface(0, 50.0, 50.0, 4.0),
            NodeSpec::surface(1, 45.0, 50.0, 2.0),
            NodeSpec::surface(2, 53.0, 50.0, 4.0),
            NodeSpec::surface(3, 53.0, 51.0, 4.0),
        ];
        let ctx = NicoContext::new(&nodes, &st, &cfg).unwrap();
        let mut state = ClusterState::new();
        state.push_cluster(ids(&[0, 1]), RelayPlacement::new(45.0, 50.0));
        state.push_cluster(ids(&[2, 3]), RelayPlacement::new(53.0, 50.5));
        assert!(!ctx.reassign_and_merge(&mut state));
        assert!(state.clusters[0].contains(NodeId(0)));
    }

    #[test]
    fn dedicated_relays_sit_over_their_nodes() {
        let (st, cfg) = (stack(), ScenarioConfig::default());
        let nodes = [NodeSpec::surface(0, 20.0, 30.0, 1.0), NodeSpec::implant(1, 70.0, 60.0, 1.2, 1.0)];
        let ctx = NicoContext::new(&nodes, &st, &cfg).unwrap();
        let mut state = ClusterState::new();
        assert!(ctx.dedicate_relays(&mut state).is_empty());
        state.not_clustered.extend(ids(&[0, 1]));
        assert_eq!(ctx.dedicate_relays(&mut state).len(), 2);
        assert!(state.not_clustered.is_empty());
        assert_eq!(state.clusters[0].relay, RelayPlacement::new(20.0, 30.0));
        let r = state.clusters[1].relay;
        assert!((r.x - 70.0).abs() < 1e-6 && (r.y - 60.0).abs() < 1e-6);
    }

    #[test]
    fn single_node_converges_in_one_iteration() {
        let (st, cfg) = (stack(), ScenarioConfig::default());
        let nodes = [NodeSpec::surface(0, 20.0, 30.0, 1.0)];
        let (_, initial) = run_icap(&nodes, &st, &cfg).unwrap();
        let out = run_nico(&nodes, &st, &cfg, initial).unwrap();
        assert_eq!((out.iterations, out.state.k()), (1, 1));
        assert_eq!(out.termination, Termination::Converged);
    }

    #[test]
    fn unreachable_nodes_are_listed() {
        let st = stack();
        let cfg = ScenarioConfig::default().with_threshold_cap(1.0);
        let nodes = [
            NodeSpec::implant(0, 20.0, 30.0, 2.0, 1.0),
            NodeSpec::surface(1, 20.0, 30.0, 11.0),
            NodeSpec::surface(2, 20.0, 30.0, 1.0),
        ];
        let err = NicoContext::new(&nodes, &st, &cfg).unwrap_err();
        assert_eq!(err, NicoError::Unreachable { nodes: ids(&[0, 1]) });
        assert!(err.to_string().contains("N0, N1"));
        assert_eq!(NicoContext::new(&[], &st, &cfg).unwrap_err(), NicoError::NoNodes);
    }

    #[test]
    fn random_runs_terminate_conforming() {
        let st = stack();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..8 {
            let cfg = ScenarioConfig::default().with_threshold_cap(rng.gen_range(8.0..15.0));
            let n = rng.gen_range(1..=40);
            let nodes: Vec<NodeSpec> = (0..n)
                .map(|i| {
                    let (x, y) = (rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0));
                    let eta = rng.gen_range(1..=5) as f64;
                    if rng.gen_bool(0.5) {
                        NodeSpec::implant(i, x, y, rng.gen_range(0.0..2.0), eta)
                    } else {
                        NodeSpec::surface(i, x, y, eta)
                    }
                })
                .collect();
            let (_, initial) = run_icap(&nodes, &st, &cfg).unwrap();
            let out = run_nico(&nodes, &st, &cfg, initial).unwrap();
            let ctx = NicoContext::new(&nodes, &st, &cfg).unwrap();
            out.state.check_conservation(&ctx.ids()).unwrap();
            assert!(out.state.not_clustered.is_empty() && out.state.k() <= nodes.len());
            for c in &out.state.clusters {
                assert_eq!(ctx.check(&c.members, &c.relay), Ok(()));
            }
            assert_eq!(out.links.len(), nodes.len());
        }
    }
}
