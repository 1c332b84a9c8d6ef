use super::{check_finite, check_finite_values, EvalCounter, LatentAssignment, OptimConfig, SolveResult};
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::models::{favi_init_all, LatentModel};
use crate::values::LatentValues;

/// Simultaneous partial-gradient ascent from the joint initialization: in
/// each iteration every block steps along `∂L/∂y_i` taken at the same joint
/// assignment. A node whose step budget is exhausted stays put.
pub fn solve_bao<M: LatentModel + ?Sized>(model: &M, config: &OptimConfig) -> Result<SolveResult> {
    let dag = model.dag();
    config.validate(dag)?;
    let n = dag.node_count();
    let mut counter = EvalCounter::default();
    let mut values = favi_init_all(model)?;
    counter.favi_calls += n as u64;
    let mut ks = vec![0usize; n + 1];
    let mut trace = vec![check_finite(model.objective(&values), "objective", 0)?];
    let rounds = dag.latent_nodes().map(|v| config.steps_for(v)).max().unwrap_or(0);
    for round in 0..rounds {
        let mut next = values.clone();
        for node in dag.latent_nodes() {
            if ks[node.index()] >= config.steps_for(node) {
                continue;
            }
            counter.gradient_calls += 1;
            let g = model.grad(&values, node);
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: "gradient",
                    event: round,
                });
            }
            step(&mut next, node, config.alpha, &g);
            ks[node.index()] += 1;
        }
        values = next;
        check_finite_values(&values, "assignment", round)?;
        trace.push(check_finite(model.objective(&values), "objective", round + 1)?);
    }
    let objective = *trace.last().expect("trace starts with the initialization");
    Ok(SolveResult {
        method: "bao".into(),
        assignment: LatentAssignment::new(values, &ks, config),
        objective,
        trace,
        counter,
        events: Vec::new(),
    })
}

pub(crate) fn step(values: &mut LatentValues, node: NodeId, alpha: f64, g: &[f64]) {
    for (y, d) in values.block_mut(node).iter_mut().zip(g) {
        *y += alpha * d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::presets;

    #[test]
    fn zero_steps_keep_initialization() {
        let m = presets::quadratic_chain_q1();
        let r = solve_bao(&m, &OptimConfig::new(0.1, 0)).unwrap();
        assert_eq!(r.values(), &favi_init_all(&m).unwrap());
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn separable_single_step_is_formula() {
        let m = presets::quadratic_separable(2, vec![2, 1, 2]);
        let y0 = favi_init_all(&m).unwrap();
        let r = solve_bao(&m, &OptimConfig::new(0.1, 1)).unwrap();
        for node in m.dag().latent_nodes() {
            let g = m.grad(&y0, node);
            for (k, (&a, &b)) in r.values().block(node).iter().zip(y0.block(node)).enumerate() {
                assert_eq!(a, b + 0.1 * g[k]);
            }
        }
    }

    #[test]
    fn counts_one_gradient_per_node_per_round() {
        let m = presets::quadratic_chain_q1();
        let r = solve_bao(&m, &OptimConfig::new(0.1, 4)).unwrap();
        assert_eq!(r.counter.gradient_calls, 12);
        assert_eq!(r.counter.favi_calls, 3);
        assert_eq!(r.assignment.steps, vec![4, 4, 4]);
    }
}
