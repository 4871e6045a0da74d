//! Relay placement for one cluster.
//!
//! The relay minimizes the weighted link-length sum over all members plus,
//! for clusters with several implants, a weighted L1 pull toward the implants:
//!
//! ```text
//! min  Σᵢ wᵢ Λᵢ(r) + γ Σ_{i ∈ A} wᵢ ‖Lᵢ − r‖₁
//! s.t. Λᵢ(r) ≤ Λthᵢ                     (slack pᵢ = Λthᵢ − Λᵢ ≥ 0)
//! ```
//!
//! Constraints are handled with a log barrier `−μ Σ log pᵢ` whose weight is
//! halved each outer round; each round is solved by damped Newton steps on a
//! smoothed objective (`|·|` and `‖·‖₂` regularized by `ε = 1e-6` cm). A
//! strictly feasible start comes from the member centroid or, failing that,
//! from the point minimizing the largest constraint violation.

use serde::{Deserialize, Serialize};

use crate::model::{node_weight, ModelError, NodeId, NodeSpec, RelayPlacement, ScenarioConfig};

const SMOOTHING: f64 = 1e-6;
const FEASIBILITY_TOL: f64 = 1e-9;
const MAX_NEWTON_STEPS: usize = 200;
const MAX_BARRIER_ROUNDS: usize = 80;

/// One member's contribution to the relay problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayTerm {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub weight: f64,
    pub threshold: f64,
    pub implant: bool,
}

impl RelayTerm {
    fn length(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.x, y - self.y);
        (dx * dx + dy * dy + self.z * self.z).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayProblem {
    pub terms: Vec<RelayTerm>,
    /// `u`: the cluster has no implant.
    pub surface_only: bool,
    /// `v`: the cluster has more than one implant.
    pub multi_implant: bool,
    /// `A = u|C| + (1 − u)I`, the number of nodes under the L1 term.
    pub active: usize,
    /// `γ`, the effective L1 penalty.
    pub l1_weight: f64,
    /// Initial barrier weight `μ`.
    pub barrier_mu: f64,
    /// Surface rectangle the relay must stay in.
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaySolution {
    pub relay: RelayPlacement,
    /// Objective value (without the barrier) at `relay`.
    pub objective: f64,
    /// Link length per term, in term order.
    pub lengths: Vec<f64>,
}

/// No surface point satisfies every member's threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Infeasible {
    /// Members whose threshold is exceeded at `closest`.
    pub violators: Vec<NodeId>,
    /// Point minimizing the largest violation.
    pub closest: RelayPlacement,
    pub worst_violation: f64,
}

impl RelayProblem {
    /// Builds the problem for `members` with per-member thresholds.
    pub fn new(
        members: &[&NodeSpec],
        thresholds: &[f64],
        config: &ScenarioConfig,
        x_range: [f64; 2],
        y_range: [f64; 2],
    ) -> Result<Self, ModelError> {
        assert_eq!(members.len(), thresholds.len());
        let rates: Vec<f64> = members.iter().map(|n| n.data_rate).collect();
        let terms = members
            .iter()
            .zip(thresholds)
            .map(|(n, &threshold)| {
                Ok(RelayTerm {
                    id: n.id,
                    x: n.x,
                    y: n.y,
                    z: n.z,
                    weight: node_weight(n, &rates, config.alpha, config.depth_scale)?,
                    threshold,
                    implant: n.is_implant(),
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        if terms.is_empty() {
            return Err(ModelError::EmptyCluster);
        }
        let implants = terms.iter().filter(|t| t.implant).count();
        let surface_only = implants == 0;
        let multi_implant = implants > 1;
        let (u, v) = (surface_only as u8 as f64, multi_implant as u8 as f64);
        Ok(Self {
            active: if surface_only { terms.len() } else { implants },
            terms,
            surface_only,
            multi_implant,
            l1_weight: (1.0 - u) * v * config.l1_penalty,
            barrier_mu: config.barrier_mu,
            x_range,
            y_range,
        })
    }

    fn penalized(&self, t: &RelayTerm) -> bool {
        self.l1_weight > 0.0 && (self.surface_only || t.implant)
    }

    /// Objective without barrier or smoothing.
    pub fn objective(&self, relay: &RelayPlacement) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let mut v = t.weight * t.length(relay.x, relay.y);
                if self.penalized(t) {
                    v += self.l1_weight * t.weight * ((relay.x - t.x).abs() + (relay.y - t.y).abs());
                }
                v
            })
            .sum()
    }

    /// Largest `Λᵢ − Λthᵢ` at `relay`; non-positive means feasible.
    pub fn max_violation(&self, relay: &RelayPlacement) -> f64 {
        self.terms
            .iter()
            .map(|t| t.length(relay.x, relay.y) - t.threshold)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn lengths(&self, relay: &RelayPlacement) -> Vec<f64> {
        self.terms.iter().map(|t| t.length(relay.x, relay.y)).collect()
    }

    fn is_feasible(&self, relay: &RelayPlacement) -> bool {
        self.max_violation(relay) <= FEASIBILITY_TOL
    }

    fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x.clamp(self.x_range[0], self.x_range[1]),
            y.clamp(self.y_range[0], self.y_range[1]),
        )
    }

    /// Barrier-augmented smoothed objective. Returns infinity outside the
    /// strict interior.
    fn barrier_value(&self, x: f64, y: f64, mu: f64) -> f64 {
        let mut f = 0.0;
        let eps2 = SMOOTHING * SMOOTHING;
        for t in &self.terms {
            let (dx, dy) = (x - t.x, y - t.y);
            let s = (dx * dx + dy * dy + t.z * t.z + eps2).sqrt();
            f += t.weight * s;
            if self.penalized(t) {
                f += self.l1_weight * t.weight * ((dx * dx + eps2).sqrt() + (dy * dy + eps2).sqrt());
            }
            let slack = t.threshold - s;
            if slack <= 0.0 {
                return f64::INFINITY;
            }
            f -= mu * slack.ln();
        }
        f
    }

    /// Value, gradient and Hessian of [`Self::barrier_value`].
    fn barrier_derivatives(&self, x: f64, y: f64, mu: f64) -> (f64, [f64; 2], [f64; 3]) {
        let eps2 = SMOOTHING * SMOOTHING;
        let mut f = 0.0;
        let mut g = [0.0; 2];
        // packed symmetric Hessian: xx, xy, yy
        let mut h = [0.0; 3];
        for t in &self.terms {
            let (dx, dy) = (x - t.x, y - t.y);
            let c = t.z * t.z + eps2;
            let s2 = dx * dx + dy * dy + c;
            let s = s2.sqrt();
            let s3 = s2 * s;
            let ds = [dx / s, dy / s];
            let d2s = [(dy * dy + c) / s3, -dx * dy / s3, (dx * dx + c) / s3];

            f += t.weight * s;
            g[0] += t.weight * ds[0];
            g[1] += t.weight * ds[1];
            for k in 0..3 {
                h[k] += t.weight * d2s[k];
            }

            if self.penalized(t) {
                let lw = self.l1_weight * t.weight;
                let ax = (dx * dx + eps2).sqrt();
                let ay = (dy * dy + eps2).sqrt();
                f += lw * (ax + ay);
                g[0] += lw * dx / ax;
                g[1] += lw * dy / ay;
                h[0] += lw * eps2 / (ax * ax * ax);
                h[2] += lw * eps2 / (ay * ay * ay);
            }

            let slack = t.threshold - s;
            f -= mu * slack.ln();
            g[0] += mu * ds[0] / slack;
            g[1] += mu * ds[1] / slack;
            let inv = 1.0 / slack;
            let inv2 = inv * inv;
            h[0] += mu * (d2s[0] * inv + ds[0] * ds[0] * inv2);
            h[1] += mu * (d2s[1] * inv + ds[0] * ds[1] * inv2);
            h[2] += mu * (d2s[2] * inv + ds[1] * ds[1] * inv2);
        }
        (f, g, h)
    }

    /// Damped Newton on the barrier objective for a fixed `mu`, from a strictly
    /// feasible point.
    fn newton(&self, mut x: f64, mut y: f64, mu: f64) -> (f64, f64) {
        for _ in 0..MAX_NEWTON_STEPS {
            let (f, g, h) = self.barrier_derivatives(x, y, mu);
            let reg = 1e-12 * (h[0] + h[2]).abs().max(1e-12);
            let (a, b, d) = (h[0] + reg, h[1], h[2] + reg);
            let det = a * d - b * b;
            let mut step = if det > 0.0 && det.is_finite() {
                [-(d * g[0] - b * g[1]) / det, -(a * g[1] - b * g[0]) / det]
            } else {
                [-g[0], -g[1]]
            };
            let mut slope = g[0] * step[0] + g[1] * step[1];
            if !(slope < 0.0) {
                step = [-g[0], -g[1]];
                slope = -(g[0] * g[0] + g[1] * g[1]);
            }
            if -slope <= 1e-15 * (1.0 + f.abs()) {
                break;
            }
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..80 {
                let (nx, ny) = self.clamp(x + t * step[0], y + t * step[1]);
                let nf = self.barrier_value(nx, ny, mu);
                let actual = [nx - x, ny - y];
                let predicted = g[0] * actual[0] + g[1] * actual[1];
                if nf.is_finite() && nf <= f + 1e-4 * predicted.min(0.0) && nf <= f {
                    moved = (nx - x).abs() + (ny - y).abs() > 0.0;
                    x = nx;
                    y = ny;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        (x, y)
    }

    /// Point minimizing the largest constraint violation, by nested
    /// golden-section search over the members' bounding box.
    fn most_interior(&self) -> (RelayPlacement, f64) {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for t in &self.terms {
            x0 = x0.min(t.x);
            x1 = x1.max(t.x);
            y0 = y0.min(t.y);
            y1 = y1.max(t.y);
        }
        let (x0, y0) = self.clamp(x0, y0);
        let (x1, y1) = self.clamp(x1, y1);
        let viol = |x: f64, y: f64| self.max_violation(&RelayPlacement::new(x, y));
        let inner = |x: f64| golden_section(|y| viol(x, y), y0, y1, 1e-11);
        let (bx, _) = golden_section(|x| inner(x).1, x0, x1, 1e-11);
        let (by, v) = inner(bx);
        (RelayPlacement::new(bx, by), v)
    }

    /// Solves the problem. On infeasibility the certificate lists the members
    /// that cannot be served from the least-violating point.
    pub fn solve(&self) -> Result<RelaySolution, Infeasible> {
        let n = self.terms.len() as f64;
        let cx = self.terms.iter().map(|t| t.x).sum::<f64>() / n;
        let cy = self.terms.iter().map(|t| t.y).sum::<f64>() / n;
        let (cx, cy) = self.clamp(cx, cy);

        let start = if self.barrier_value(cx, cy, 1.0).is_finite() {
            Some((cx, cy))
        } else {
            let (p, v) = self.most_interior();
            if v > FEASIBILITY_TOL {
                let violators = self
                    .terms
                    .iter()
                    .filter(|t| t.length(p.x, p.y) - t.threshold > FEASIBILITY_TOL)
                    .map(|t| t.id)
                    .collect();
                return Err(Infeasible {
                    violators,
                    closest: p,
                    worst_violation: v,
                });
            }
            if self.barrier_value(p.x, p.y, 1.0).is_finite() {
                Some((p.x, p.y))
            } else {
                // feasible set has no interior; the touching point is the answer
                return Ok(self.solution_at(p));
            }
        };

        let (mut x, mut y) = start.expect("start chosen above");
        let mut mu = self.barrier_mu;
        let m = self.terms.len() as f64;
        for _ in 0..MAX_BARRIER_ROUNDS {
            let (nx, ny) = self.newton(x, y, mu);
            x = nx;
            y = ny;
            let scale = 1.0 + self.objective(&RelayPlacement::new(x, y)).abs();
            if m * mu <= 1e-11 * scale {
                break;
            }
            mu *= 0.5;
        }

        let mut best = RelayPlacement::new(x, y);
        let mut best_value = self.objective(&best);
        for cand in self.kink_candidates() {
            if self.is_feasible(&cand) {
                let v = self.objective(&cand);
                if v < best_value {
                    best = cand;
                    best_value = v;
                }
            }
        }
        Ok(self.solution_at(best))
    }

    /// Points where the unsmoothed objective is non-differentiable and may
    /// hold the optimum: surface projections of depth-0 members, and the
    /// L1 crossing lines of penalized members.
    fn kink_candidates(&self) -> Vec<RelayPlacement> {
        let mut out: Vec<RelayPlacement> = self
            .terms
            .iter()
            .filter(|t| t.z == 0.0 || self.penalized(t))
            .map(|t| RelayPlacement::new(t.x, t.y))
            .collect();
        let pen: Vec<&RelayTerm> = self.terms.iter().filter(|t| self.penalized(t)).collect();
        for a in &pen {
            for b in &pen {
                if a.id != b.id {
                    out.push(RelayPlacement::new(a.x, b.y));
                }
            }
        }
        out.into_iter()
            .map(|p| {
                let (x, y) = self.clamp(p.x, p.y);
                RelayPlacement::new(x, y)
            })
            .collect()
    }

    fn solution_at(&self, relay: RelayPlacement) -> RelaySolution {
        RelaySolution {
            objective: self.objective(&relay),
            lengths: self.lengths(&relay),
            relay,
        }
    }
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
/// Returns the best abscissa and value found.
pub(crate) fn golden_section(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    if !(hi > lo) {
        return (lo, f(lo));
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol * (1.0 + a.abs().max(b.abs())) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for edge in [lo, hi] {
        let v = f(edge);
        if v < best.1 {
            best = (edge, v);
        }
    }
    best
}
