use ibn_topology::analytics::energy_report;
use ibn_topology::channel::{effective_threshold, pt_max, pt_min_at};
use ibn_topology::icap::run_icap;
use ibn_topology::model::link_length;
use ibn_topology::nico::{run_nico, NicoContext, NicoOutcome};
use ibn_topology::{NodeId, NodeSpec, RelayPlacement, ScenarioConfig, TissueStack};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stack() -> TissueStack {
    TissueStack::new([0.0, 100.0], [0.0, 100.0])
}

/// Half implants at depth U[0, 2], integer rates in 1..=5, uniform over the surface.
fn scatter(n: usize, seed: u64) -> Vec<NodeSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u32)
        .map(|i| {
            let (x, y) = (rng.gen_range(0.0..=100.0), rng.gen_range(0.0..=100.0));
            let eta = rng.gen_range(1..=5) as f64;
            if rng.gen_bool(0.5) {
                NodeSpec::implant(i, x, y, rng.gen_range(0.0..=2.0), eta)
            } else {
                NodeSpec::surface(i, x, y, eta)
            }
        })
        .collect()
}

fn cluster(nodes: &[NodeSpec], cfg: &ScenarioConfig) -> (usize, NicoOutcome) {
    let (grid, initial) = run_icap(nodes, &stack(), cfg).unwrap();
    (grid.occupied, run_nico(nodes, &stack(), cfg, initial).unwrap())
}

fn assert_conforms(nodes: &[NodeSpec], cfg: &ScenarioConfig, out: &NicoOutcome) {
    let st = &out.state;
    assert!(st.not_clustered.is_empty());
    let mut seen: Vec<NodeId> = st.clusters.iter().flat_map(|c| c.members.clone()).collect();
    seen.sort();
    assert_eq!(seen, nodes.iter().map(|n| n.id).collect::<Vec<_>>());
    for c in &st.clusters {
        let members: Vec<&NodeSpec> = c.members.iter().map(|m| &nodes[m.0 as usize]).collect();
        assert!(members.iter().map(|n| n.data_rate).sum::<f64>() <= cfg.capacity);
        let mut implant_lengths = Vec::new();
        for n in &members {
            let len = link_length(n, &c.relay);
            assert!(len <= effective_threshold(cfg, n).unwrap() * (1.0 + 1e-9));
            assert!(pt_min_at(cfg, n, len) <= pt_max(cfg, n) * (1.0 + 1e-9));
            if n.is_implant() {
                implant_lengths.push(len);
            }
        }
        if implant_lengths.len() > 1 {
            let lo = implant_lengths.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = implant_lengths.iter().copied().fold(0.0, f64::max);
            assert!(lo / hi > cfg.uniformity);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_run_conserves_nodes_and_conforms(
        n in 1usize..=40,
        seed in any::<u64>(),
        alpha in 1.0f64..=10.0,
        uniformity in 0.3f64..=0.95,
        cap in 6.0f64..=18.0,
    ) {
        let nodes = scatter(n, seed);
        let cfg = ScenarioConfig { alpha, uniformity, ..ScenarioConfig::default() }.with_threshold_cap(cap);
        let (occupied, out) = cluster(&nodes, &cfg);
        assert_conforms(&nodes, &cfg, &out);
        prop_assert!(out.state.k() <= occupied);
        prop_assert!(out.state.k() <= n);
    }
}

#[test]
fn nico_never_needs_more_relays_than_the_grid() {
    for th in [8.0, 10.0, 12.0, 14.0] {
        let cfg = ScenarioConfig::default().with_threshold_cap(th);
        for seed in 0..10 {
            let nodes = scatter(50, seed);
            let (occupied, out) = cluster(&nodes, &cfg);
            assert!(out.state.k() < occupied, "threshold {th} seed {seed}");
        }
    }
}

#[test]
fn returned_relay_beats_random_feasible_perturbations() {
    let cfg = ScenarioConfig::default();
    let stack = stack();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..20 {
        let nodes: Vec<NodeSpec> = scatter(6, 100 + trial)
            .into_iter()
            .map(|mut n| {
                n.x = 45.0 + n.x / 10.0;
                n.y = 45.0 + n.y / 10.0;
                n
            })
            .collect();
        let ctx = NicoContext::new(&nodes, &stack, &cfg).unwrap();
        let ids: Vec<NodeId> = nodes.iter().map(|n| n.id).collect();
        let problem = ctx.problem(&ids).unwrap();
        let best = problem.solve().unwrap();
        let mut tried = 0;
        while tried < 1000 {
            let r = RelayPlacement::new(
                best.relay.x + rng.gen_range(-3.0..3.0),
                best.relay.y + rng.gen_range(-3.0..3.0),
            );
            if problem.max_violation(&r) > 0.0 {
                continue;
            }
            tried += 1;
            assert!(best.objective <= problem.objective(&r) * (1.0 + 1e-9), "trial {trial}");
        }
    }
}

#[test]
fn tighter_uniformity_tightens_residual_spread() {
    let spread = |u: f64| {
        let cfg = ScenarioConfig {
            uniformity: u,
            ..ScenarioConfig::default()
        };
        let (mut sum, mut count) = (0.0, 0);
        for seed in 0..30 {
            let nodes = scatter(50, 500 + seed);
            let (_, out) = cluster(&nodes, &cfg);
            let report = energy_report(&out.state, &out.links);
            for c in report.clusters.iter().filter(|c| c.link_ratio.is_some()) {
                sum += c.residual_spread;
                count += 1;
            }
        }
        sum / count.max(1) as f64
    };
    let (loose, tight) = (spread(0.5), spread(0.9));
    assert!(tight < loose, "spread {tight} at 0.9 vs {loose} at 0.5");
}

#[test]
fn repeated_runs_are_identical() {
    let nodes = scatter(50, 7);
    let cfg = ScenarioConfig::default();
    assert_eq!(cluster(&nodes, &cfg).1.state, cluster(&nodes, &cfg).1.state);
}
