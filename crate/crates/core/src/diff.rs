//! Finite-difference gradients and Hessian-vector products, and a gradient
//! checker for [`LatentModel`] implementations.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LatentDag, NodeId};
use crate::models::{favi_init_all, Curvature, LatentModel};
use crate::values::{norm_inf, rel_error, LatentValues, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FdScaling {
    /// The perturbation of the target block has infinity norm `r`.
    Absolute,
    /// As `Absolute`, scaled by `1 + ‖y_target‖∞`.
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    /// Central-difference step.
    pub h: f64,
    /// Forward-difference radius for Hessian-vector products.
    pub r: f64,
    pub scaling: FdScaling,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            h: 1e-6,
            r: 1e-4,
            scaling: FdScaling::Relative,
        }
    }
}

impl FdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) || !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Config(format!(
                "fd.h and fd.r must be positive, got h={} r={}",
                self.h, self.r
            )));
        }
        Ok(())
    }

    /// Radius for differences nested `height` levels deep. Roundoff from the
    /// innermost level is divided by every enclosing radius, roughly
    /// `ε_mach / r^(height+1)`, against truncation of order `r`; the radius is
    /// raised to at least `ε_mach^(1/(height+2))`.
    pub fn nested(&self, height: usize) -> FdConfig {
        let floor = f64::EPSILON.powf(1.0 / (height as f64 + 2.0));
        FdConfig {
            r: self.r.max(floor),
            ..*self
        }
    }

    /// Multiplier `ε` such that `y + ε·dir` is the perturbed point, or `None`
    /// for a zero direction.
    pub fn step(&self, point: &[f64], dir: &[f64]) -> Option<f64> {
        let size = norm_inf(dir);
        if size == 0.0 {
            return None;
        }
        let radius = match self.scaling {
            FdScaling::Absolute => self.r,
            FdScaling::Relative => self.r * (1.0 + norm_inf(point)),
        };
        Some(radius / size)
    }
}

/// Central differences of `f` over the coordinates of `node`.
pub fn grad_fd<F>(f: F, values: &LatentValues, node: NodeId, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&LatentValues) -> f64,
{
    let mut work = values.clone();
    let mut out = Vec::with_capacity(values.dim(node));
    for k in 0..values.dim(node) {
        let base = values.block(node)[k];
        work.block_mut(node)[k] = base + h;
        let up = f(&work);
        work.block_mut(node)[k] = base - h;
        let down = f(&work);
        work.block_mut(node)[k] = base;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite {
                what: "objective",
                event: k,
            });
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Forward-difference `(∂²L/∂y_source ∂y_target) v`: the change of the
/// `source` gradient when `target` moves along `v`, divided by the step.
pub fn hvp_fd<G>(
    grad_source: G,
    values: &LatentValues,
    source: NodeId,
    target: NodeId,
    v: &[f64],
    fd: &FdConfig,
) -> Result<Vec<f64>>
where
    G: Fn(&LatentValues) -> Vec<f64>,
{
    let Some(eps) = fd.step(values.block(target), v) else {
        return Ok(vec![0.0; values.dim(source)]);
    };
    let base = grad_source(values);
    let mut moved = values.clone();
    for (y, d) in moved.block_mut(target).iter_mut().zip(v) {
        *y += eps * d;
    }
    let shifted = grad_source(&moved);
    let out: Vec<f64> = shifted.iter().zip(&base).map(|(a, b)| (a - b) / eps).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            event: 0,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeCheck {
    pub node: NodeId,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub model: String,
    pub trials: usize,
    pub tol: f64,
    pub per_node: Vec<NodeCheck>,
    pub max_rel_error: f64,
    /// Node with the largest error; the failing node when `passed` is false.
    pub worst_node: NodeId,
    pub passed: bool,
}

/// Floor on the reference norm when forming relative errors.
const REL_FLOOR: f64 = 1e-3;

/// Compares `grad` against central differences at `trials` seeded points
/// (the joint initialization plus Gaussian noise of scale 0.5).
pub fn grad_check<M: LatentModel + ?Sized>(
    model: &M,
    trials: usize,
    tol: f64,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let base = favi_init_all(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let nodes: Vec<NodeId> = model.dag().latent_nodes().collect();
    let mut per_node: Vec<NodeCheck> = nodes
        .iter()
        .map(|&node| NodeCheck {
            node,
            max_rel_error: 0.0,
        })
        .collect();
    for _ in 0..trials {
        let mut point = base.clone();
        for x in point.as_mut_slice() {
            *x += noise.sample(&mut rng);
        }
        for (k, &node) in nodes.iter().enumerate() {
            let g = model.grad(&point, node);
            let fd = grad_fd(|v| model.objective(v), &point, node, h)?;
            let err = rel_error(&g, &fd, REL_FLOOR);
            if !err.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradient",
                    event: k,
                });
            }
            per_node[k].max_rel_error = per_node[k].max_rel_error.max(err);
        }
    }
    let worst = per_node.iter().fold(
        &per_node[0],
        |w, c| if c.max_rel_error > w.max_rel_error { c } else { w },
    );
    Ok(GradCheckReport {
        model: model.name().to_string(),
        trials,
        tol,
        max_rel_error: worst.max_rel_error,
        worst_node: worst.node,
        passed: worst.max_rel_error < tol,
        per_node: per_node.clone(),
    })
}

/// Wraps a model and adds `offset` to one coordinate of one node's gradient.
/// Used to confirm that checkers and verifiers catch wrong gradients.
pub struct CorruptedGradient<M> {
    pub inner: M,
    pub node: NodeId,
    pub coord: usize,
    pub offset: f64,
}

impl<M: LatentModel> CorruptedGradient<M> {
    pub fn new(inner: M, node: NodeId) -> Self {
        CorruptedGradient {
            inner,
            node,
            coord: 0,
            offset: 0.1,
        }
    }
}

impl<M: LatentModel> LatentModel for CorruptedGradient<M> {
    fn dag(&self) -> &LatentDag {
        self.inner.dag()
    }

    fn layout(&self) -> &Arc<Layout> {
        self.inner.layout()
    }

    fn objective(&self, values: &LatentValues) -> f64 {
        self.inner.objective(values)
    }

    fn grad(&self, values: &LatentValues, node: NodeId) -> Vec<f64> {
        let mut g = self.inner.grad(values, node);
        if node == self.node {
            g[self.coord] += self.offset;
        }
        g
    }

    fn grad_all(&self, values: &LatentValues) -> LatentValues {
        let mut g = self.inner.grad_all(values);
        g.block_mut(self.node)[self.coord] += self.offset;
        g
    }

    fn favi_init(&self, values: &LatentValues, node: NodeId) -> Vec<f64> {
        self.inner.favi_init(values, node)
    }

    fn favi_jacobian(&self, values: &LatentValues, child: NodeId, ancestor: NodeId) -> DMatrix<f64> {
        self.inner.favi_jacobian(values, child, ancestor)
    }

    fn hvp(&self, values: &LatentValues, row: NodeId, col: NodeId, v: &[f64]) -> Option<Vec<f64>> {
        self.inner.hvp(values, row, col, v)
    }

    fn curvature(&self) -> Curvature {
        self.inner.curvature()
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{presets, QuadraticModel, QuadraticParams};
    use crate::values::dot;
    use nalgebra::DVector;
    use std::collections::BTreeMap;

    fn identity_quadratic() -> QuadraticModel {
        let dag = LatentDag::edgeless(vec![2]).unwrap();
        QuadraticModel::new(
            dag,
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            BTreeMap::new(),
            vec![vec![0.0, 0.0]],
        )
        .unwrap()
    }

    fn random_point(m: &QuadraticModel, seed: u64) -> LatentValues {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let data = (0..m.layout().total_dim()).map(|_| n.sample(&mut rng)).collect();
        LatentValues::from_flat(m.layout().clone(), data)
    }

    #[test]
    fn grad_fd_examples() {
        let v = LatentValues::from_blocks(&[0, 2], &[vec![3.0, 4.0]]);
        let g = grad_fd(|_| 7.0, &v, NodeId(1), 1e-6).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        let g = grad_fd(|v| 0.5 * dot(v.as_slice(), v.as_slice()), &v, NodeId(1), 1e-6).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn grad_fd_matches_quadratic() {
        let m = presets::quadratic_chain_q1();
        let v = random_point(&m, 5);
        for n in m.dag().latent_nodes() {
            let fd = grad_fd(|x| m.objective(x), &v, n, 1e-6).unwrap();
            assert!(rel_error(&fd, &m.grad(&v, n), 1e-12) < 1e-8);
        }
    }

    #[test]
    fn grad_fd_reports_non_finite() {
        let v = LatentValues::from_blocks(&[0, 1], &[vec![0.0]]);
        let err = grad_fd(|_| f64::NAN, &v, NodeId(1), 1e-6).unwrap_err();
        assert!(err.is_numeric());
    }

    #[test]
    fn hvp_fd_examples() {
        let m = identity_quadratic();
        let v = LatentValues::from_blocks(&[0, 2], &[vec![0.3, -0.1]]);
        let fd = FdConfig::default();
        let h = hvp_fd(|x| m.grad(x, NodeId(1)), &v, NodeId(1), NodeId(1), &[1.0, 0.0], &fd).unwrap();
        assert!((h[0] + 1.0).abs() < 1e-10 && h[1].abs() < 1e-10);
        let z = hvp_fd(|x| m.grad(x, NodeId(1)), &v, NodeId(1), NodeId(1), &[0.0, 0.0], &fd).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn hvp_fd_cross_block_matches_a() {
        let m = presets::quadratic_chain_q1();
        let v = random_point(&m, 9);
        let dir = [0.4, -1.1];
        let (i, j) = (NodeId(1), NodeId(2));
        let got = hvp_fd(|x| m.grad(x, i), &v, i, j, &dir, &FdConfig::default()).unwrap();
        let expect = -(m.block_of_a(i, j) * DVector::from_column_slice(&dir));
        let bound = 1e-6 * m.a().norm() * DVector::from_column_slice(&dir).norm();
        for k in 0..2 {
            assert!((got[k] - expect[k]).abs() <= bound);
        }
    }

    /// A quadratic plus a cubic term, so forward differences carry an O(r) bias.
    struct Cubic(QuadraticModel);

    impl Cubic {
        fn grad(&self, v: &LatentValues, node: NodeId) -> Vec<f64> {
            let mut g = self.0.grad(v, node);
            for (gi, yi) in g.iter_mut().zip(v.block(node)) {
                *gi += yi * yi;
            }
            g
        }
    }

    #[test]
    fn hvp_fd_error_shrinks_linearly_in_r() {
        for seed in 0..20u64 {
            let dag = LatentDag::chain(vec![2, 2]).unwrap();
            let m = Cubic(
                QuadraticModel::random(
                    dag,
                    &QuadraticParams {
                        seed,
                        ..Default::default()
                    },
                )
                .unwrap(),
            );
            let v = random_point(&m.0, 100 + seed);
            let dir = [0.7, -0.3];
            let node = NodeId(2);
            let exact: Vec<f64> = {
                let a = -(m.0.block_of_a(node, node) * DVector::from_column_slice(&dir));
                let y = v.block(node);
                (0..2).map(|k| a[k] + 2.0 * y[k] * dir[k]).collect()
            };
            let err = |r: f64| {
                let fd = FdConfig {
                    r,
                    scaling: FdScaling::Absolute,
                    ..Default::default()
                };
                let h = hvp_fd(|x| m.grad(x, node), &v, node, node, &dir, &fd).unwrap();
                rel_error(&h, &exact, 1e-12)
            };
            let (e1, e2) = (err(1e-2), err(5e-3));
            assert!(e2 <= 0.5 * e1 * (1.0 + 1e-6), "seed {seed}: {e1} {e2}");
        }
    }

    #[test]
    fn hvp_fd_is_symmetric_on_quadratic() {
        let m = presets::quadratic_chain_q1();
        let v = random_point(&m, 3);
        let node = NodeId(2);
        let (u, w) = ([0.5, -1.0], [1.5, 0.25]);
        let fd = FdConfig::default();
        let hw = hvp_fd(|x| m.grad(x, node), &v, node, node, &w, &fd).unwrap();
        let hu = hvp_fd(|x| m.grad(x, node), &v, node, node, &u, &fd).unwrap();
        let (a, b) = (dot(&u, &hw), dot(&w, &hu));
        assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()));
    }

    #[test]
    fn grad_check_passes_on_both_models() {
        let q = grad_check(&presets::quadratic_chain_q1(), 10, 1e-5, 1e-6, 1).unwrap();
        assert!(q.passed, "{q:?}");
        let c = grad_check(&presets::codec_suite(1), 10, 1e-4, 1e-6, 1).unwrap();
        assert!(c.passed, "{c:?}");
    }

    #[test]
    fn grad_check_flags_corrupted_node() {
        let m = CorruptedGradient::new(presets::quadratic_chain_q1(), NodeId(2));
        let r = grad_check(&m, 3, 1e-5, 1e-6, 1).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_node, NodeId(2));
        assert!(r.per_node[0].max_rel_error < 1e-5);
    }

    #[test]
    fn relative_step_scales_with_point() {
        let fd = FdConfig::default();
        assert_eq!(fd.step(&[0.0], &[2.0]), Some(0.5e-4));
        assert_eq!(fd.step(&[3.0], &[1.0]), Some(4e-4));
        assert_eq!(fd.step(&[3.0], &[0.0]), None);
        assert!(FdConfig { r: 0.0, ..fd }.validate().is_err());
    }
}
