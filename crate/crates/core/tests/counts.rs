use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use savi_core::models::{presets, LatentModel, QuadraticModel, QuadraticParams};
use savi_core::savi::complexity::{approx_calls, bao_gradient_calls, predict_dag};
use savi_core::savi::{solve_approx_dag, solve_bao, solve_dag, solve_dag_on, HvpMode, OptimConfig};
use savi_core::verify::random_dag;
use savi_core::NodeId;

#[test]
fn exact_counts_match_recurrence_on_random_dags() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut forests = 0;
    for _ in 0..25 {
        let dag = random_dag(&mut rng).unwrap();
        let m = QuadraticModel::random(
            dag.clone(),
            &QuadraticParams {
                seed: rng.random(),
                ..Default::default()
            },
        )
        .unwrap();
        let mut cfg = OptimConfig::new(0.5 / m.lambda_max(), rng.random_range(0..=3)).with_events();
        cfg.overrides.insert(NodeId(1), rng.random_range(0..=3));
        for (mode, closed) in [(HvpMode::Analytic, true), (HvpMode::Fd, false)] {
            let cfg = cfg.clone().with_hvp(mode);
            let r = solve_dag(&m, &cfg).unwrap();
            let (cost, events) = predict_dag(&dag, &dag, &cfg, closed).unwrap();
            let c = r.counter;
            let measured = [c.gradient_calls, c.hvp_calls, c.favi_calls, c.jacobian_calls];
            let predicted = [
                cost.gradient_calls,
                cost.hvp_calls,
                cost.favi_calls,
                cost.jacobian_calls,
            ];
            let forest = dag.latent_nodes().all(|n| dag.parents(n).len() <= 1);
            if forest {
                assert_eq!(measured, predicted, "dag {} / {:?}", dag.edges_literal(), mode);
            } else {
                for (m, p) in measured.iter().zip(&predicted) {
                    assert!(
                        m <= p,
                        "dag {} / {:?}: {measured:?} > {predicted:?}",
                        dag.edges_literal(),
                        mode
                    );
                }
                assert_eq!((c.favi_calls, c.jacobian_calls), (cost.favi_calls, cost.jacobian_calls));
            }
            forests += forest as usize;
            assert_eq!(r.events.len() as u64, events);
        }
    }
    assert!(forests > 0, "no tree-shaped graphs drawn");
}

#[test]
fn partial_and_approximate_counts_are_closed_form() {
    for n in 1..=4 {
        for k in 0..=4 {
            let m = QuadraticModel::random(
                savi_core::LatentDag::chain(vec![2; n]).unwrap(),
                &QuadraticParams::default(),
            )
            .unwrap();
            let cfg = OptimConfig::new(0.1, k);
            let b = solve_bao(&m, &cfg).unwrap();
            assert_eq!(b.counter.gradient_calls, bao_gradient_calls(n as u64, k as u64));
            let a = solve_approx_dag(&m, &cfg).unwrap();
            let (g, f) = approx_calls(n as u64, k as u64);
            assert_eq!((a.counter.gradient_calls, a.counter.favi_calls), (g, f));
        }
    }
}

#[test]
fn codec_exact_on_reduced_graph_matches_recurrence() {
    let m = presets::codec_suite(1);
    let reduced = m.dag().transitive_reduction();
    let cfg = OptimConfig::new(0.05, 2);
    let r = solve_dag_on(&m, &reduced, &cfg).unwrap();
    let (cost, _) = predict_dag(m.dag(), &reduced, &cfg, false).unwrap();
    assert_eq!(r.counter.gradient_calls, cost.gradient_calls);
    assert_eq!(r.counter.jacobian_calls, cost.jacobian_calls);
}
