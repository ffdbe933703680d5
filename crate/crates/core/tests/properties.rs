use std::collections::{BTreeMap, BTreeSet};

use byzalloc::aggregation::{AggregatorConfig, TrimCount};
use byzalloc::attacks::{preset, AttackContext, AttackSpec};
use byzalloc::engine::{run_attack_free, run_resilient, RunConfig, StepSchedule};
use byzalloc::graph::{kappa, metropolis_weights, random_regular, KappaVariant, Topology};
use byzalloc::problem::{dual_gradient, AgentSpec, BoxConstraint, ProblemInstance, QuadraticCost};
use byzalloc::theory::{delta_bound, DeltaMode};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn connected_graph() -> impl Strategy<Value = Topology> {
    (3usize..10, any::<u64>()).prop_map(|(n, seed)| {
        let mut state = seed;
        let mut coin = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 33) % 2 == 0
        };
        loop {
            let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
            for a in 0..n {
                for b in a + 2..n {
                    if coin() {
                        edges.push((a, b));
                    }
                }
            }
            let t = Topology::new(n, edges).unwrap();
            if t.is_connected() {
                return t;
            }
        }
    })
}

fn instance(n: usize, dim: usize) -> impl Strategy<Value = ProblemInstance> {
    let agent = (
        prop::collection::vec(0.5f64..3.0, dim),
        prop::collection::vec(-10.0f64..10.0, dim),
        prop::collection::vec(-30.0f64..-5.0, dim),
        prop::collection::vec(5.0f64..30.0, dim),
    );
    (
        prop::collection::vec(agent, n),
        prop::collection::vec(-3.0f64..3.0, dim),
    )
        .prop_map(move |(agents, s)| {
            let agents = agents
                .into_iter()
                .enumerate()
                .map(|(i, (a, b, lo, hi))| {
                    AgentSpec::new(
                        i,
                        QuadraticCost::new(a, b, 0.0).unwrap(),
                        BoxConstraint::new(lo, hi).unwrap(),
                    )
                    .unwrap()
                })
                .collect();
            ProblemInstance::new(agents, s, BTreeSet::new()).unwrap()
        })
}

fn config(problem: ProblemInstance, topology: Topology, schedule: StepSchedule, iterations: usize) -> RunConfig {
    let weights = metropolis_weights(&topology).unwrap();
    let dim = problem.dim();
    RunConfig {
        problem,
        topology,
        weights,
        aggregator: AggregatorConfig::mean(),
        attacks: BTreeMap::new(),
        schedule,
        iterations,
        lambda0: vec![0.0; dim],
        nonneg_dual: false,
        seed: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metropolis_kappa_matches_eigenvalues(t in connected_graph()) {
        let w = metropolis_weights(&t).unwrap();
        let n = t.num_nodes();
        prop_assert!(w.is_doubly_stochastic());
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(w.get(i, j), w.get(j, i));
            }
        }
        let k = kappa(&w, KappaVariant::Full).unwrap();
        prop_assert!(k < 1.0);
        let m = DMatrix::from_fn(n, n, |i, j| w.get(i, j));
        let mut eig: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().map(|x| x.abs()).collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        prop_assert!((k - eig[1] * eig[1]).abs() < 1e-9, "kappa {} vs {}", k, eig[1] * eig[1]);
    }

    #[test]
    fn local_allocations_stay_feasible(p in instance(6, 2), seed in any::<u64>()) {
        let t = random_regular(6, 3, seed).unwrap();
        let trace = run_attack_free(&config(p.clone(), t, StepSchedule::power(0.5), 60)).unwrap();
        for r in &trace.records {
            for (id, theta) in trace.honest_ids.iter().zip(&r.theta) {
                prop_assert!(p.agent(*id).bounds.contains(theta));
            }
        }
        prop_assert_eq!(trace.records[0].metrics.dual_consensus, 0.0);
    }

    #[test]
    fn resilient_runs_repeat_bit_for_bit(p in instance(8, 1), seed in any::<u64>()) {
        let t = random_regular(8, 5, seed).unwrap();
        let p = p.with_byzantine(BTreeSet::from([3])).unwrap();
        let mut cfg = config(p, t, StepSchedule::power(0.3), 40);
        cfg.aggregator = AggregatorConfig::ctm(TrimCount::ByzantineNeighbors);
        cfg.attacks.insert(3, preset("gauss_small_c1", 1, seed).unwrap());
        let a = run_resilient(&cfg).unwrap();
        let b = run_resilient(&cfg).unwrap();
        prop_assert_eq!(a.to_csv(), b.to_csv());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn forged_messages_are_reproducible(seed in any::<u64>(), k in 0usize..1000, r in 0usize..5) {
        let attack = AttackSpec::gaussian(vec![-5.0, 2.0], 3.0, seed);
        let hs = vec![vec![0.0, 0.0]; 6];
        let byz = BTreeSet::from([5]);
        let ctx = AttackContext { iteration: k, recipient: r, sender: 5, half_steps: &hs, byzantine: &byz };
        prop_assert_eq!(attack.forge(&ctx), attack.forge(&ctx));
    }

    #[test]
    fn gradient_deviation_within_delta(p in instance(5, 2), l0 in -200.0f64..200.0, l1 in -200.0f64..200.0) {
        let delta = delta_bound(&p, DeltaMode::Analytic);
        let lambda = [l0, l1];
        let h = p.num_honest();
        let grads: Vec<Vec<f64>> = p
            .agents()
            .iter()
            .map(|a| dual_gradient(a, &lambda, p.target(), h).unwrap())
            .collect();
        let mean: Vec<f64> = (0..2).map(|d| grads.iter().map(|g| g[d]).sum::<f64>() / h as f64).collect();
        for g in &grads {
            let dev = g.iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dev <= delta * (1.0 + 1e-12), "{} > {}", dev, delta);
        }
    }
}

#[test]
fn consensus_error_shrinks_over_the_second_half() {
    for seed in 0..5u64 {
        let topology = random_regular(10, 3, seed).unwrap();
        let agents = (0..10)
            .map(|i| {
                let a = 1.0 + (i as f64) / 10.0;
                let b = (i as f64 * 1.7) % 5.0;
                AgentSpec::new(
                    i,
                    QuadraticCost::new(vec![a], vec![b], 0.0).unwrap(),
                    BoxConstraint::new(vec![-50.0], vec![50.0]).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let p = ProblemInstance::new(agents, vec![3.0], BTreeSet::new()).unwrap();
        let trace = run_attack_free(&config(p, topology, StepSchedule::power(0.5), 4000)).unwrap();
        let half = trace.records[2000].metrics.dual_consensus;
        let end = trace.last().metrics.dual_consensus;
        assert!(end <= half, "seed {seed}: {end} > {half}");
    }
}
