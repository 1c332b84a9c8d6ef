use serde::Serialize;

use super::engine::{Engine, State};
use super::{check_finite, EvalCounter, LatentAssignment, OptimConfig, SolveResult};
use crate::error::{Error, Result};
use crate::graph::{LatentDag, NodeId};
use crate::models::{check_assignment, favi_init_all, LatentModel};
use crate::values::LatentValues;

/// Exact semi-amortized ascent on the model's own DAG.
pub fn solve_dag<M: LatentModel + ?Sized>(model: &M, config: &OptimConfig) -> Result<SolveResult> {
    solve_dag_on(model, model.dag(), config)
}

/// As [`solve_dag`], visiting children along `solve_graph`. Any graph with the
/// same reachability as the model's DAG (for example its transitive
/// reduction) yields the same converged values up to rounding, since
/// re-converging an already converged block from unchanged inputs is a no-op.
pub fn solve_dag_on<M: LatentModel + ?Sized>(
    model: &M,
    solve_graph: &LatentDag,
    config: &OptimConfig,
) -> Result<SolveResult> {
    check_graph(model, solve_graph)?;
    config.validate(model.dag())?;
    let n = model.dag().node_count();
    let init = favi_init_all(model)?;
    let mut engine = Engine::new(model, solve_graph, config)?;
    engine.counter.favi_calls += n as u64;
    let mut trace = vec![check_finite(model.objective(&init), "objective", 0)?];
    let mut st = State {
        values: init,
        ks: vec![0; n + 1],
    };
    engine.conv(&mut st, NodeId::ROOT, None, true, 0, &mut |_, phi| trace.push(phi))?;
    let objective = check_finite(model.objective(&st.values), "objective", engine.event_count())?;
    trace.push(objective);
    Ok(SolveResult {
        method: "dag".into(),
        assignment: LatentAssignment::new(st.values, &st.ks, config),
        objective,
        trace,
        counter: engine.counter,
        events: std::mem::take(&mut engine.events),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DagGradient {
    /// Total derivative of the converged objective with respect to the node.
    pub gradient: Vec<f64>,
    /// Objective after converging the node's descendants.
    pub objective: f64,
    pub counter: EvalCounter,
}

/// Total derivative of `L` with respect to `node` when every descendant of
/// `node` is re-initialized from `values` and converged. Blocks that are not
/// descendants of `node` are held at their given values.
pub fn grad_dag<M: LatentModel + ?Sized>(
    model: &M,
    values: &LatentValues,
    node: NodeId,
    config: &OptimConfig,
) -> Result<DagGradient> {
    grad_dag_on(model, model.dag(), values, node, config)
}

/// As [`grad_dag`], visiting children along `solve_graph`.
pub fn grad_dag_on<M: LatentModel + ?Sized>(
    model: &M,
    solve_graph: &LatentDag,
    values: &LatentValues,
    node: NodeId,
    config: &OptimConfig,
) -> Result<DagGradient> {
    check_graph(model, solve_graph)?;
    let dag = model.dag();
    check_assignment(dag, values)?;
    dag.check_node(node)?;
    if node.is_root() {
        return Err(Error::InvalidNode {
            node,
            count: dag.node_count(),
        });
    }
    config.validate(dag)?;
    let mut engine = Engine::new(model, solve_graph, config)?;
    let st = State {
        values: values.clone(),
        ks: vec![0; dag.node_count() + 1],
    };
    let (objective, adj) = engine.grad_full(&st, node, true, 1)?;
    Ok(DagGradient {
        gradient: adj.block(node).to_vec(),
        objective,
        counter: engine.counter,
    })
}

/// Values after converging the descendants of `node` from `values`, exactly
/// as the exact solver's forward pass does.
pub(crate) fn converge<M: LatentModel + ?Sized>(
    model: &M,
    values: &LatentValues,
    node: NodeId,
    config: &OptimConfig,
) -> Result<LatentValues> {
    let mut engine = Engine::new(model, model.dag(), config)?;
    let mut st = State {
        values: values.clone(),
        ks: vec![0; model.dag().node_count() + 1],
    };
    engine.conv(&mut st, node, None, false, 1, &mut |_, _| {})?;
    Ok(st.values)
}

fn check_graph<M: LatentModel + ?Sized>(model: &M, g: &LatentDag) -> Result<()> {
    let dag = model.dag();
    if g.node_count() != dag.node_count() {
        return Err(Error::Config(format!(
            "solve graph has {} nodes, model has {}",
            g.node_count(),
            dag.node_count()
        )));
    }
    for n in dag.latent_nodes() {
        if g.dim(n) != dag.dim(n) {
            return Err(Error::DimensionMismatch {
                node: n,
                expected: dag.dim(n),
                got: g.dim(n),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::presets;
    use crate::savi::{solve_bao, EventKind, HvpMode};

    #[test]
    fn zero_steps_return_initialization() {
        let m = presets::quadratic_chain_q3();
        let r = solve_dag(&m, &OptimConfig::new(0.1, 0)).unwrap();
        assert_eq!(r.values(), &favi_init_all(&m).unwrap());
        assert_eq!(r.counter.gradient_calls, 0);
    }

    #[test]
    fn single_node_is_plain_ascent() {
        let m = presets::quadratic_separable(4, vec![3]);
        let cfg = OptimConfig::new(0.1, 5);
        let r = solve_dag(&m, &cfg).unwrap();
        let mut y = favi_init_all(&m).unwrap();
        for _ in 0..5 {
            let g = m.grad(&y, NodeId(1));
            for (a, b) in y.block_mut(NodeId(1)).iter_mut().zip(&g) {
                *a += 0.1 * b;
            }
        }
        assert_eq!(r.values(), &y);
        assert_eq!(solve_bao(&m, &cfg).unwrap().values(), &y);
    }

    #[test]
    fn leaf_gradient_is_partial() {
        let m = presets::quadratic_chain_q3();
        let y = favi_init_all(&m).unwrap();
        let g = grad_dag(&m, &y, NodeId(3), &OptimConfig::new(0.1, 2)).unwrap();
        assert_eq!(g.gradient, m.grad(&y, NodeId(3)));
    }

    #[test]
    fn events_follow_recursion() {
        let m = presets::quadratic_chain_q1();
        let cfg = OptimConfig::new(0.05, 2).with_events();
        let r = solve_dag(&m, &cfg).unwrap();
        assert_eq!(r.events.len(), 39);
        assert_eq!(r.events[0].kind, EventKind::Init);
        assert_eq!(r.events[0].node, NodeId(1));
        assert!(r.events.iter().enumerate().all(|(k, e)| e.seq == k));
        let last = r.events.last().unwrap();
        assert_eq!(last.steps, vec![2, 2, 2]);
        assert_eq!(r.assignment.steps, vec![2, 2, 2]);
    }

    #[test]
    fn final_objective_matches_assignment() {
        let m = presets::quadratic_chain_q3();
        for mode in [HvpMode::Analytic, HvpMode::Fd] {
            let r = solve_dag(&m, &OptimConfig::new(0.05, 2).with_hvp(mode)).unwrap();
            assert_eq!(r.objective, m.objective(r.values()));
            assert_eq!(*r.trace.last().unwrap(), r.objective);
        }
    }

    #[test]
    fn reduction_gives_same_values_on_complete_graph() {
        let m = presets::codec_suite(1);
        let cfg = OptimConfig::new(0.05, 2);
        let full = solve_dag(&m, &cfg).unwrap();
        let red = solve_dag_on(&m, &m.dag().transitive_reduction(), &cfg).unwrap();
        let diff = crate::values::rel_error(full.values().as_slice(), red.values().as_slice(), 1.0);
        assert!(diff < 1e-12, "{diff}");
        assert!(red.counter.gradient_calls < full.counter.gradient_calls);
    }
}
