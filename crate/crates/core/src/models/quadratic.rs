//! Strictly concave quadratic over a DAG of blocks:
//! `L(y) = -½ yᵀAy + bᵀy`, with the affine initializer
//! `f_j = c_j + Σ_{i∈P(j)} C_{j←i} y_i`.
//!
//! Every derivative is closed-form, which makes this the testbed for the
//! hypergradient identities.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Curvature, LatentModel};
use crate::error::{Error, Result};
use crate::graph::{LatentDag, NodeId};
use crate::values::{LatentValues, Layout};

#[derive(Debug, Clone)]
pub struct QuadraticModel {
    dag: LatentDag,
    layout: Arc<Layout>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    favi: BTreeMap<(NodeId, NodeId), DMatrix<f64>>,
    offsets: Vec<Vec<f64>>,
    name: String,
}

/// Knobs for [`QuadraticModel::random`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticParams {
    pub seed: u64,
    /// Magnitude of the cross blocks `A_ij` placed on each edge; 0 gives a
    /// separable objective.
    pub coupling: f64,
    /// Magnitude of the initializer matrices `C_{j←i}`.
    pub favi_scale: f64,
}

impl Default for QuadraticParams {
    fn default() -> Self {
        QuadraticParams {
            seed: 1,
            coupling: 0.4,
            favi_scale: 0.5,
        }
    }
}

impl QuadraticModel {
    /// `favi` maps `(parent, child)` to `C_{child←parent}`; `offsets[k]` is `c`
    /// for node `k + 1`.
    pub fn new(
        dag: LatentDag,
        a: DMatrix<f64>,
        b: DVector<f64>,
        favi: BTreeMap<(NodeId, NodeId), DMatrix<f64>>,
        offsets: Vec<Vec<f64>>,
    ) -> Result<Self> {
        dag.topo_sort()?;
        let layout = Layout::for_dag(&dag);
        let n = layout.total_dim();
        if a.nrows() != n || a.ncols() != n || b.len() != n {
            return Err(Error::Config(format!("A must be {n}x{n} and b of length {n}")));
        }
        if (&a - a.transpose()).amax() > 0.0 {
            return Err(Error::Config("A must be symmetric".into()));
        }
        if a.clone().cholesky().is_none() {
            return Err(Error::Config("A must be positive definite".into()));
        }
        for (&(p, c), m) in &favi {
            if !dag.has_edge(p, c) {
                return Err(Error::InvalidPair { child: c, ancestor: p });
            }
            if m.nrows() != dag.dim(c) || m.ncols() != dag.dim(p) {
                return Err(Error::DimensionMismatch {
                    node: c,
                    expected: dag.dim(c) * dag.dim(p),
                    got: m.len(),
                });
            }
        }
        if offsets.len() != dag.node_count() {
            return Err(Error::Config("one FAVI offset per node is required".into()));
        }
        for (k, c) in offsets.iter().enumerate() {
            let node = NodeId(k + 1);
            if c.len() != dag.dim(node) {
                return Err(Error::DimensionMismatch {
                    node,
                    expected: dag.dim(node),
                    got: c.len(),
                });
            }
        }
        Ok(QuadraticModel {
            dag,
            layout,
            a,
            b,
            favi,
            offsets,
            name: "quadratic".into(),
        })
    }

    /// Seeded instance. `A` is symmetric and strictly diagonally dominant with
    /// a positive diagonal, hence positive definite. Cross blocks appear only on
    /// edges; initializer matrices exist for every edge.
    pub fn random(dag: LatentDag, params: &QuadraticParams) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let layout = Layout::for_dag(&dag);
        let n = layout.total_dim();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for node in dag.latent_nodes() {
            let r = layout.range(node);
            for i in r.clone() {
                for j in (i + 1)..r.end {
                    let v = 0.3 * rng.random_range(-1.0..1.0);
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
        }
        for (p, c) in dag.edges() {
            for i in layout.range(p) {
                for j in layout.range(c) {
                    let v = params.coupling * rng.random_range(-1.0..1.0);
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
        }
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
            a[(i, i)] = 1.0 + off + rng.random_range(0.0..1.0);
        }
        let b = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let mut favi = BTreeMap::new();
        for (p, c) in dag.edges() {
            let m = DMatrix::from_fn(dag.dim(c), dag.dim(p), |_, _| {
                params.favi_scale * rng.random_range(-1.0..1.0)
            });
            favi.insert((p, c), m);
        }
        let offsets = dag
            .latent_nodes()
            .map(|node| {
                (0..dag.dim(node))
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        0.5 * z
                    })
                    .collect()
            })
            .collect();
        Self::new(dag, a, b, favi, offsets)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn favi_matrix(&self, parent: NodeId, child: NodeId) -> Option<&DMatrix<f64>> {
        self.favi.get(&(parent, child))
    }

    pub fn favi_offset(&self, node: NodeId) -> &[f64] {
        &self.offsets[node.index() - 1]
    }

    pub fn block_of_a(&self, row: NodeId, col: NodeId) -> DMatrix<f64> {
        let r = self.layout.range(row);
        let c = self.layout.range(col);
        self.a.view((r.start, c.start), (r.len(), c.len())).into_owned()
    }

    /// Largest eigenvalue of `A`, i.e. the curvature bound used for safe steps.
    pub fn lambda_max(&self) -> f64 {
        self.a
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::MIN, |m, &v| m.max(v))
    }

    /// The unique maximizer `A⁻¹b`.
    pub fn optimum(&self) -> LatentValues {
        let y = self.a.clone().cholesky().expect("A is SPD").solve(&self.b);
        LatentValues::from_flat(self.layout.clone(), y.as_slice().to_vec())
    }

    fn residual_row(&self, y: &[f64], row: usize) -> f64 {
        let mut s = self.b[row];
        for (c, &yc) in y.iter().enumerate() {
            s -= self.a[(row, c)] * yc;
        }
        s
    }
}

impl LatentModel for QuadraticModel {
    fn dag(&self) -> &LatentDag {
        &self.dag
    }

    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn objective(&self, values: &LatentValues) -> f64 {
        let y = values.as_slice();
        let mut quad = 0.0;
        let mut lin = 0.0;
        for (r, &yr) in y.iter().enumerate() {
            let mut ay = 0.0;
            for (c, &yc) in y.iter().enumerate() {
                ay += self.a[(r, c)] * yc;
            }
            quad += yr * ay;
            lin += self.b[r] * yr;
        }
        -0.5 * quad + lin
    }

    fn grad(&self, values: &LatentValues, node: NodeId) -> Vec<f64> {
        let y = values.as_slice();
        self.layout.range(node).map(|r| self.residual_row(y, r)).collect()
    }

    fn grad_all(&self, values: &LatentValues) -> LatentValues {
        let y = values.as_slice();
        let g = (0..y.len()).map(|r| self.residual_row(y, r)).collect();
        LatentValues::from_flat(self.layout.clone(), g)
    }

    fn favi_init(&self, values: &LatentValues, node: NodeId) -> Vec<f64> {
        let mut out = self.favi_offset(node).to_vec();
        for &p in self.dag.parents(node) {
            let m = &self.favi[&(p, node)];
            let yp = values.block(p);
            for (r, o) in out.iter_mut().enumerate() {
                for (c, &v) in yp.iter().enumerate() {
                    *o += m[(r, c)] * v;
                }
            }
        }
        out
    }

    fn favi_jacobian(&self, _values: &LatentValues, child: NodeId, ancestor: NodeId) -> DMatrix<f64> {
        match self.favi.get(&(ancestor, child)) {
            Some(m) => m.clone(),
            None => DMatrix::zeros(self.dag.dim(child), self.dag.dim(ancestor)),
        }
    }

    fn hvp(&self, _values: &LatentValues, row: NodeId, col: NodeId, v: &[f64]) -> Option<Vec<f64>> {
        let rr = self.layout.range(row);
        let cr = self.layout.range(col);
        Some(
            rr.map(|r| {
                let mut s = 0.0;
                for (k, c) in cr.clone().enumerate() {
                    s -= self.a[(r, c)] * v[k];
                }
                s
            })
            .collect(),
        )
    }

    fn curvature(&self) -> Curvature {
        Curvature::Constant
    }

    fn name(&self) -> &str {
        &self.name
    }
}
