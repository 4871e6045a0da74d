//! Closed-form grid statistics, their Monte Carlo counterparts, and the
//! post-clustering energy report.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{ClusterId, ClusterState, NodeId};
use crate::nico::NodeLink;

const BATCH: usize = 1 << 16;

/// CDF of the grid side `λ ~ U[1, C1]`.
pub fn cdf_lambda(lambda: f64, c1: f64) -> f64 {
    assert!(c1 > 1.0, "C1 must exceed 1");
    ((lambda - 1.0) / (c1 - 1.0)).clamp(0.0, 1.0)
}

/// CDF of the split count `P = ⌈C2 / λ⌉` with `λ ~ U[1, C1]`:
/// `1 − ((C2/p) − 1)/(C1 − 1)` on `[⌈C2/C1⌉, C2]`.
pub fn cdf_period_count(p: f64, c1: f64, c2: f64) -> f64 {
    assert!(c1 > 1.0, "C1 must exceed 1");
    let p = p.floor();
    if p < 1.0 {
        return 0.0;
    }
    (1.0 - (c2 / p - 1.0) / (c1 - 1.0)).clamp(0.0, 1.0)
}

/// Product-form CDF of the grid cell count, `F_P(p) · F_Q(q)`.
pub fn cdf_grid_count(p: f64, q: f64, c1: f64, c2: f64, c3: f64) -> f64 {
    cdf_period_count(p, c1, c2) * cdf_period_count(q, c1, c3)
}

/// CDF of the distance between two independent uniform points in a square
/// of side `λ`.
pub fn cdf_link_length(r: f64, lambda: f64) -> f64 {
    assert!(lambda > 0.0, "grid side must be positive");
    if r <= 0.0 {
        return 0.0;
    }
    if r >= lambda * SQRT_2 {
        return 1.0;
    }
    let s = (r / lambda).powi(2);
    let f = if s < 1.0 {
        PI * s - 8.0 / 3.0 * s.powf(1.5) + 0.5 * s * s
    } else {
        let bracket = 2.0 / 3.0 + 2.0 * s + 0.5 * s * s
            - 4.0 / 3.0 * (2.0 * s + 1.0) * (s - 1.0).sqrt()
            - 2.0 * s * ((2.0 - s) / s).asin();
        1.0 - bracket
    };
    f.clamp(0.0, 1.0)
}

/// Mean distance between two independent uniform points in a square of
/// side `λ`: `(λ/3)·ln(1 + √2) + (λ√2/15)·(1 + √2)`.
pub fn expected_link_length(lambda: f64) -> f64 {
    lambda / 3.0 * (1.0 + SQRT_2).ln() + lambda * SQRT_2 / 15.0 * (1.0 + SQRT_2)
}

/// Draws `samples` values in parallel batches; batch `b` uses stream `b` of
/// a generator seeded with `seed`, so output depends only on the arguments.
fn sample_batched<T: Send>(samples: usize, seed: u64, draw: impl Fn(&mut ChaCha8Rng) -> T + Sync) -> Vec<T> {
    let batches = samples.div_ceil(BATCH);
    (0..batches)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let n = BATCH.min(samples - b * BATCH);
            (0..n).map(|_| draw(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

/// Split counts `⌈C2/λ⌉` for `λ ~ U[1, C1]`.
pub fn sample_period_counts(c1: f64, c2: f64, samples: usize, seed: u64) -> Vec<f64> {
    sample_batched(samples, seed, |rng| (c2 / rng.gen_range(1.0..=c1)).ceil())
}

/// Distances between pairs of uniform points in a `λ` square.
pub fn sample_link_lengths(lambda: f64, samples: usize, seed: u64) -> Vec<f64> {
    sample_batched(samples, seed, |rng| {
        let (dx, dy) = (rng.gen::<f64>() - rng.gen::<f64>(), rng.gen::<f64>() - rng.gen::<f64>());
        lambda * dx.hypot(dy)
    })
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `samples` and a
/// continuous `cdf`.
pub fn ks_continuous(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Kolmogorov-Smirnov distance for an integer-valued variable, evaluated at
/// every observed support point.
pub fn ks_discrete(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &s in samples {
        *counts.entry(s as i64).or_default() += 1;
    }
    let n = samples.len() as f64;
    let mut acc = 0usize;
    let mut worst: f64 = 0.0;
    for (v, c) in counts {
        // left limit and value at the jump
        worst = worst.max((acc as f64 / n - cdf(v as f64 - 1.0)).abs());
        acc += c;
        worst = worst.max((acc as f64 / n - cdf(v as f64)).abs());
    }
    worst
}

/// Closed-form and empirical CDF samples of one distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub name: String,
    pub closed_form: Vec<(f64, f64)>,
    pub empirical: Vec<(f64, f64)>,
    pub ks_distance: f64,
    pub samples: usize,
}

fn empirical_at(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64
}

/// Link-length distribution in a `λ` square, tabulated at `points` abscissae.
pub fn link_length_report(lambda: f64, samples: usize, seed: u64, points: usize) -> DistributionReport {
    let mut draws = sample_link_lengths(lambda, samples, seed);
    let ks = ks_continuous(&draws, |r| cdf_link_length(r, lambda));
    draws.sort_by(f64::total_cmp);
    let xs: Vec<f64> = (0..points)
        .map(|i| lambda * SQRT_2 * i as f64 / (points.max(2) - 1) as f64)
        .collect();
    DistributionReport {
        name: "link_length".into(),
        closed_form: xs.iter().map(|&x| (x, cdf_link_length(x, lambda))).collect(),
        empirical: xs.iter().map(|&x| (x, empirical_at(&draws, x))).collect(),
        ks_distance: ks,
        samples,
    }
}

/// Split-count distribution, tabulated on its integer support.
pub fn period_count_report(c1: f64, c2: f64, samples: usize, seed: u64) -> DistributionReport {
    let mut draws = sample_period_counts(c1, c2, samples, seed);
    let ks = ks_discrete(&draws, |p| cdf_period_count(p, c1, c2));
    draws.sort_by(f64::total_cmp);
    let lo = (c2 / c1).ceil() as i64;
    let hi = c2.ceil() as i64;
    let xs: Vec<f64> = (lo..=hi).map(|p| p as f64).collect();
    DistributionReport {
        name: "period_count".into(),
        closed_form: xs.iter().map(|&x| (x, cdf_period_count(x, c1, c2))).collect(),
        empirical: xs.iter().map(|&x| (x, empirical_at(&draws, x))).collect(),
        ks_distance: ks,
        samples,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEnergy {
    pub cluster: ClusterId,
    /// Lifetime of every member, days.
    pub lifetimes: Vec<(NodeId, f64)>,
    /// First death among implants, or among all members without implants.
    pub first_death: f64,
    /// Residual energy fraction `1 − t*/tᵢ` of each other member at that time.
    pub residuals: Vec<(NodeId, f64)>,
    /// Largest residual among the implants (all members without implants).
    pub residual_spread: f64,
    /// `min / max` implant link length, for clusters with several implants.
    pub link_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub clusters: Vec<ClusterEnergy>,
    /// Earliest implant death, days; `None` without implants.
    pub network_lifetime: Option<f64>,
}

/// Per-cluster lifetime statistics from the final links.
pub fn energy_report(state: &ClusterState, links: &[NodeLink]) -> EnergyReport {
    let by_id: BTreeMap<NodeId, &NodeLink> = links.iter().map(|l| (l.id, l)).collect();
    let mut network: Option<f64> = None;
    let clusters = state
        .clusters
        .iter()
        .map(|c| {
            let members: Vec<&NodeLink> = c.members.iter().filter_map(|m| by_id.get(m).copied()).collect();
            let implants: Vec<&NodeLink> = members.iter().copied().filter(|l| l.tissue.is_implant()).collect();
            let reference = if implants.is_empty() { &members } else { &implants };
            let first_death = reference.iter().map(|l| l.lifetime_days).fold(f64::INFINITY, f64::min);
            let dying = reference
                .iter()
                .find(|l| l.lifetime_days == first_death)
                .map(|l| l.id);
            let residual = |l: &NodeLink| (1.0 - first_death / l.lifetime_days).max(0.0);
            let residuals = members
                .iter()
                .filter(|l| Some(l.id) != dying)
                .map(|l| (l.id, residual(l)))
                .collect();
            let residual_spread = reference.iter().map(|l| residual(l)).fold(0.0, f64::max);
            if !implants.is_empty() {
                network = Some(network.map_or(first_death, |n| n.min(first_death)));
            }
            let link_ratio = (implants.len() > 1).then(|| {
                let (lo, hi) = implants
                    .iter()
                    .fold((f64::INFINITY, 0.0f64), |(lo, hi), l| (lo.min(l.length), hi.max(l.length)));
                if hi > 0.0 {
                    lo / hi
                } else {
                    1.0
                }
            });
            ClusterEnergy {
                cluster: c.id,
                lifetimes: members.iter().map(|l| (l.id, l.lifetime_days)).collect(),
                first_death,
                residuals,
                residual_spread,
                link_ratio,
            }
        })
        .collect();
    EnergyReport {
        clusters,
        network_lifetime: network,
    }
}
