use std::cell::RefCell;

use super::dag::{converge, grad_dag};
use super::OptimConfig;
use crate::diff::grad_fd;
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::models::{check_assignment, LatentModel};
use crate::values::{norm2, LatentValues};

/// Size limits for [`oracle_outer_grad`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleGuard {
    pub max_descendant_dim: usize,
    pub max_steps: usize,
}

impl Default for OracleGuard {
    fn default() -> Self {
        OracleGuard {
            max_descendant_dim: 16,
            max_steps: 8,
        }
    }
}

impl OracleGuard {
    fn check<M: LatentModel + ?Sized>(&self, model: &M, node: NodeId, config: &OptimConfig) -> Result<()> {
        let dag = model.dag();
        let desc = dag.descendants(node);
        let dim: usize = desc.iter().map(|&n| dag.dim(n)).sum();
        if dim > self.max_descendant_dim {
            return Err(Error::Guard(format!(
                "descendants of node {node} span {dim} coordinates (limit {})",
                self.max_descendant_dim
            )));
        }
        if let Some(&k) = desc
            .iter()
            .map(|&n| config.steps_for(n))
            .collect::<Vec<_>>()
            .iter()
            .max()
        {
            if k > self.max_steps {
                return Err(Error::Guard(format!(
                    "K = {k} exceeds the oracle limit {}",
                    self.max_steps
                )));
            }
        }
        Ok(())
    }
}

/// Central differences, with step `config.fd.h`, of the objective after
/// re-initializing and converging the descendants of `node`. The reference
/// for [`grad_dag`] and [`super::grad_2_level`].
pub fn oracle_outer_grad<M: LatentModel + ?Sized>(
    model: &M,
    values: &LatentValues,
    node: NodeId,
    config: &OptimConfig,
) -> Result<Vec<f64>> {
    let dag = model.dag();
    check_assignment(dag, values)?;
    dag.check_node(node)?;
    config.validate(dag)?;
    OracleGuard::default().check(model, node, config)?;
    let h = config.fd.h;
    let failure = RefCell::new(None);
    let g = grad_fd(
        |v| match converge(model, v, node, config) {
            Ok(c) => model.objective(&c),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        values,
        node,
        h,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    g
}

/// `‖dL/dy_node − ∂L/∂y_node‖` at `values`: the part of the total derivative
/// that a partial-gradient method never sees. Zero when nothing downstream of
/// `node` depends on it.
pub fn bao_gradient_gap<M: LatentModel + ?Sized>(
    model: &M,
    values: &LatentValues,
    node: NodeId,
    config: &OptimConfig,
) -> Result<f64> {
    OracleGuard::default().check(model, node, config)?;
    let total = grad_dag(model, values, node, config)?.gradient;
    let partial = model.grad(values, node);
    let diff: Vec<f64> = total.iter().zip(&partial).map(|(a, b)| a - b).collect();
    Ok(norm2(&diff))
}
