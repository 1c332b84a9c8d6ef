use super::bao::step;
use super::{check_finite, check_finite_values, EvalCounter, LatentAssignment, OptimConfig, SolveResult};
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::models::{favi_init_all, LatentModel};
use crate::values::LatentValues;

/// Linear-cost approximation of the exact solver. Nodes are visited in
/// topological order; before and after every step on node `i`, all later
/// nodes are re-initialized from the current values, and `i` ascends the
/// total derivative of `L` through those initializations (but not through
/// any later ascent).
pub fn solve_approx_dag<M: LatentModel + ?Sized>(model: &M, config: &OptimConfig) -> Result<SolveResult> {
    let dag = model.dag();
    config.validate(dag)?;
    let order = dag.topo_sort()?;
    let nodes = order.as_slice().to_vec();
    let n = nodes.len();
    let mut counter = EvalCounter::default();
    let mut values = LatentValues::zeros(model.layout().clone());
    let mut ks = vec![0usize; n + 1];
    let mut trace = Vec::new();
    let mut event = 0usize;

    for (pos, &node) in nodes.iter().enumerate() {
        reinit(model, &mut values, &nodes[pos..], &mut ks, &mut counter, event)?;
        trace.push(check_finite(model.objective(&values), "objective", event)?);
        for _ in 0..config.steps_for(node) {
            let g = total_gradient(model, &values, &nodes, pos, &mut counter, event)?;
            step(&mut values, node, config.alpha, &g);
            ks[node.index()] += 1;
            event += 1;
            reinit(model, &mut values, &nodes[pos + 1..], &mut ks, &mut counter, event)?;
            trace.push(check_finite(model.objective(&values), "objective", event)?);
        }
    }
    if n == 0 {
        values = favi_init_all(model)?;
    }
    let objective = check_finite(model.objective(&values), "objective", event)?;
    Ok(SolveResult {
        method: "approx".into(),
        assignment: LatentAssignment::new(values, &ks, config),
        objective,
        trace,
        counter,
        events: Vec::new(),
    })
}

fn reinit<M: LatentModel + ?Sized>(
    model: &M,
    values: &mut LatentValues,
    targets: &[NodeId],
    ks: &mut [usize],
    counter: &mut EvalCounter,
    event: usize,
) -> Result<()> {
    for &t in targets {
        counter.favi_calls += 1;
        let v = model.favi_init(values, t);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "initialization",
                event,
            });
        }
        values.set_block(t, &v);
        ks[t.index()] = 0;
    }
    Ok(())
}

/// `dL/dy_i` with every node after position `pos` a function of `y_i`
/// through its initializer: `∇L` pulled back through the initializers of
/// the later nodes, latest first.
fn total_gradient<M: LatentModel + ?Sized>(
    model: &M,
    values: &LatentValues,
    nodes: &[NodeId],
    pos: usize,
    counter: &mut EvalCounter,
    event: usize,
) -> Result<Vec<f64>> {
    let dag = model.dag();
    counter.gradient_calls += 1;
    let mut adj = model.grad_all(values);
    check_finite_values(&adj, "gradient", event)?;
    let order_pos = |n: NodeId| nodes.iter().position(|&m| m == n).expect("node in order");
    for &later in nodes[pos + 1..].iter().rev() {
        let u = adj.block(later).to_vec();
        if u.iter().all(|&x| x == 0.0) {
            continue;
        }
        for &p in dag.parents(later) {
            if order_pos(p) < pos {
                continue;
            }
            counter.jacobian_calls += 1;
            let jac = model.favi_jacobian(values, later, p);
            let pb = adj.block_mut(p);
            for (col, slot) in pb.iter_mut().enumerate() {
                let mut s = 0.0;
                for (row, &ur) in u.iter().enumerate() {
                    s += jac[(row, col)] * ur;
                }
                *slot += s;
            }
        }
    }
    Ok(adj.block(nodes[pos]).to_vec())
}
