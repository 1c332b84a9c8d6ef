//! The contract every solver consumes, and two reference models.
//!
//! A model owns its evidence and frozen parameters. It exposes the objective
//! `L` (the ELBO to maximize), plain partial derivatives with respect to one
//! block at a time, the amortized (FAVI) initializer `f`, and that
//! initializer's Jacobians. Second derivatives are optional.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{LatentDag, NodeId};
use crate::values::{LatentValues, Layout};

pub mod codec;
pub mod presets;
pub mod quadratic;

pub use codec::{CodecModel, CodecParams, FrameReport};
pub use quadratic::{QuadraticModel, QuadraticParams};

/// Whether the Hessian of `L` is the same everywhere and the initializer is
/// affine. Solvers may then differentiate affine maps by exact secants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curvature {
    Constant,
    Variable,
}

pub trait LatentModel: Send + Sync {
    /// Dependency structure of the initializer: `f` for node `j` reads only
    /// the values of `parents(j)`.
    fn dag(&self) -> &LatentDag;

    fn layout(&self) -> &Arc<Layout>;

    fn objective(&self, values: &LatentValues) -> f64;

    /// `∂L/∂y_node` with every other block held fixed.
    fn grad(&self, values: &LatentValues, node: NodeId) -> Vec<f64>;

    /// All partials in one pass. Must agree bit-for-bit with [`LatentModel::grad`].
    fn grad_all(&self, values: &LatentValues) -> LatentValues {
        let mut out = LatentValues::zeros(self.layout().clone());
        for n in self.dag().latent_nodes() {
            let g = self.grad(values, n);
            out.set_block(n, &g);
        }
        out
    }

    /// Amortized initial value of `node` given the current values of its parents.
    fn favi_init(&self, values: &LatentValues, node: NodeId) -> Vec<f64>;

    /// `∂f_child/∂y_ancestor`, shaped `dim(child) × dim(ancestor)`.
    fn favi_jacobian(&self, values: &LatentValues, child: NodeId, ancestor: NodeId) -> DMatrix<f64>;

    /// `(∂²L/∂y_row ∂y_col) v`, if the model has closed-form second derivatives.
    fn hvp(&self, _values: &LatentValues, _row: NodeId, _col: NodeId, _v: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Every row block of `(∂²L/∂y ∂y_col) v` in one pass.
    fn hvp_column(&self, values: &LatentValues, col: NodeId, v: &[f64]) -> Option<LatentValues> {
        let mut out = LatentValues::zeros(self.layout().clone());
        for n in self.dag().latent_nodes() {
            let h = self.hvp(values, n, col, v)?;
            out.set_block(n, &h);
        }
        Some(out)
    }

    fn curvature(&self) -> Curvature {
        Curvature::Variable
    }

    fn name(&self) -> &str;
}

/// Checks that `values` has exactly the model's block dimensions.
pub fn check_assignment(dag: &LatentDag, values: &LatentValues) -> Result<()> {
    if values.node_count() != dag.node_count() {
        return Err(Error::DimensionMismatch {
            node: NodeId(values.node_count().min(dag.node_count()) + 1),
            expected: dag.node_count(),
            got: values.node_count(),
        });
    }
    for n in dag.latent_nodes() {
        if values.dim(n) != dag.dim(n) {
            return Err(Error::DimensionMismatch {
                node: n,
                expected: dag.dim(n),
                got: values.dim(n),
            });
        }
    }
    Ok(())
}

pub fn objective_checked<M: LatentModel + ?Sized>(model: &M, values: &LatentValues) -> Result<f64> {
    check_assignment(model.dag(), values)?;
    Ok(model.objective(values))
}

pub fn grad_checked<M: LatentModel + ?Sized>(model: &M, values: &LatentValues, node: NodeId) -> Result<Vec<f64>> {
    check_assignment(model.dag(), values)?;
    model.dag().check_node(node)?;
    if node.is_root() {
        return Err(Error::InvalidNode {
            node,
            count: model.dag().node_count(),
        });
    }
    Ok(model.grad(values, node))
}

/// Initializes `targets` (in topological order) from the given ancestor
/// values. A target initialized earlier in the call counts as assigned for
/// later targets.
pub fn favi_init_targets<M: LatentModel + ?Sized>(
    model: &M,
    assigned: &BTreeMap<NodeId, Vec<f64>>,
    targets: &[NodeId],
) -> Result<BTreeMap<NodeId, Vec<f64>>> {
    let dag = model.dag();
    let order = dag.topo_sort()?;
    let mut values = LatentValues::zeros(model.layout().clone());
    let mut known = vec![false; dag.node_count() + 1];
    for (&n, v) in assigned {
        dag.check_node(n)?;
        if v.len() != dag.dim(n) {
            return Err(Error::DimensionMismatch {
                node: n,
                expected: dag.dim(n),
                got: v.len(),
            });
        }
        values.set_block(n, v);
        known[n.index()] = true;
    }
    let mut sorted = targets.to_vec();
    for &t in &sorted {
        dag.check_node(t)?;
    }
    sorted.sort_by_key(|&t| order.position(t));
    sorted.dedup();
    let mut out = BTreeMap::new();
    for t in sorted {
        if let Some(&p) = dag.parents(t).iter().find(|p| !known[p.index()]) {
            return Err(Error::MissingAncestor { node: t, ancestor: p });
        }
        let v = model.favi_init(&values, t);
        values.set_block(t, &v);
        known[t.index()] = true;
        out.insert(t, v);
    }
    Ok(out)
}

/// Initializes every block jointly, in topological order.
pub fn favi_init_all<M: LatentModel + ?Sized>(model: &M) -> Result<LatentValues> {
    let order = model.dag().topo_sort()?;
    let mut values = LatentValues::zeros(model.layout().clone());
    for n in order.iter() {
        let v = model.favi_init(&values, n);
        values.set_block(n, &v);
    }
    Ok(values)
}

pub fn favi_jacobian_checked<M: LatentModel + ?Sized>(
    model: &M,
    values: &LatentValues,
    child: NodeId,
    ancestor: NodeId,
) -> Result<DMatrix<f64>> {
    let dag = model.dag();
    check_assignment(dag, values)?;
    dag.check_node(child)?;
    dag.check_node(ancestor)?;
    if child == ancestor || child.is_root() || ancestor.is_root() || dag.descendants(child).contains(&ancestor) {
        return Err(Error::InvalidPair { child, ancestor });
    }
    Ok(model.favi_jacobian(values, child, ancestor))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn favi_targets_require_ancestors() {
        let m = presets::quadratic_chain_q1();
        let err = favi_init_targets(&m, &BTreeMap::new(), &[NodeId(2)]).unwrap_err();
        assert_eq!(
            err,
            Error::MissingAncestor {
                node: NodeId(2),
                ancestor: NodeId(1)
            }
        );
        // Targets initialized within the same call satisfy later targets.
        let out = favi_init_targets(&m, &BTreeMap::new(), &[NodeId(3), NodeId(2), NodeId(1)]).unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn jacobian_pair_validation() {
        let m = presets::quadratic_chain_q1();
        let v = favi_init_all(&m).unwrap();
        assert!(matches!(
            favi_jacobian_checked(&m, &v, NodeId(1), NodeId(2)),
            Err(Error::InvalidPair { .. })
        ));
        assert!(matches!(
            favi_jacobian_checked(&m, &v, NodeId(2), NodeId(2)),
            Err(Error::InvalidPair { .. })
        ));
        let z = favi_jacobian_checked(&m, &v, NodeId(3), NodeId(1)).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = presets::quadratic_chain_q1();
        let wrong = LatentValues::from_blocks(&[0, 1, 1, 1], &[vec![0.0], vec![0.0], vec![0.0]]);
        assert!(matches!(
            objective_checked(&m, &wrong),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            grad_checked(&m, &wrong, NodeId(1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
