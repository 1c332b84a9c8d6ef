//! Predicted evaluation counts, computed from the structure of the recursion
//! alone (no model is evaluated).
//!
//! For the exact solver, with `K_c` the steps of child `c`:
//!
//! ```text
//! conv(i)  = Σ_{c ∈ C(i)} [ init + K_c·full(c) + conv(c) ]
//! full(j)  = conv(j) + 1 gradient + back(j)
//! back(j)  = Σ_{c ∈ C(j)} [ back(c) + K_c·col(c) + |P(c)| jacobians ]
//! col(c)   = 1 hvp (leaf, closed form) | 1 gradient (leaf, differences) | full(c)
//! ```
//!
//! Events follow `ev(i) = Σ_c [1 + K_c·(ev(c) + 1) + ev(c)]`.
//!
//! The counts are exact when every node of the solve graph has one parent.
//! With shared children, a child re-initialized under a later parent leaves
//! zero adjoints on its earlier steps; the solver skips those columns, so
//! the prediction is an upper bound there.

use serde::Serialize;

use super::OptimConfig;
use crate::error::Result;
use crate::graph::{LatentDag, NodeId};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Cost {
    pub gradient_calls: u64,
    pub hvp_calls: u64,
    pub favi_calls: u64,
    pub jacobian_calls: u64,
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost {
            gradient_calls: self.gradient_calls + o.gradient_calls,
            hvp_calls: self.hvp_calls + o.hvp_calls,
            favi_calls: self.favi_calls + o.favi_calls,
            jacobian_calls: self.jacobian_calls + o.jacobian_calls,
        }
    }
}

impl std::ops::Mul<u64> for Cost {
    type Output = Cost;
    fn mul(self, k: u64) -> Cost {
        Cost {
            gradient_calls: self.gradient_calls * k,
            hvp_calls: self.hvp_calls * k,
            favi_calls: self.favi_calls * k,
            jacobian_calls: self.jacobian_calls * k,
        }
    }
}

struct Recurrence<'a> {
    solve: &'a LatentDag,
    model: &'a LatentDag,
    cfg: &'a OptimConfig,
    closed_form_leaf: bool,
    conv: Vec<Option<Cost>>,
    full: Vec<Option<Cost>>,
    back: Vec<Option<Cost>>,
    events: Vec<Option<u64>>,
}

impl Recurrence<'_> {
    fn k(&self, c: NodeId) -> u64 {
        self.cfg.steps_for(c) as u64
    }

    fn conv(&mut self, i: NodeId) -> Cost {
        if let Some(c) = self.conv[i.index()] {
            return c;
        }
        let mut total = Cost::default();
        for c in self.solve.children(i).to_vec() {
            let init = Cost {
                favi_calls: 1,
                ..Default::default()
            };
            total = total + init + self.full(c) * self.k(c) + self.conv(c);
        }
        self.conv[i.index()] = Some(total);
        total
    }

    fn full(&mut self, j: NodeId) -> Cost {
        if let Some(c) = self.full[j.index()] {
            return c;
        }
        let one = Cost {
            gradient_calls: 1,
            ..Default::default()
        };
        let total = self.conv(j) + one + self.back(j);
        self.full[j.index()] = Some(total);
        total
    }

    fn back(&mut self, j: NodeId) -> Cost {
        if let Some(c) = self.back[j.index()] {
            return c;
        }
        let mut total = Cost::default();
        for c in self.solve.children(j).to_vec() {
            let col = if !self.solve.children(c).is_empty() {
                self.full(c)
            } else if self.closed_form_leaf {
                Cost {
                    hvp_calls: 1,
                    ..Default::default()
                }
            } else {
                Cost {
                    gradient_calls: 1,
                    ..Default::default()
                }
            };
            let jac = Cost {
                jacobian_calls: self.model.parents(c).len() as u64,
                ..Default::default()
            };
            total = total + self.back(c) + col * self.k(c) + jac;
        }
        self.back[j.index()] = Some(total);
        total
    }

    fn events(&mut self, i: NodeId) -> u64 {
        if let Some(e) = self.events[i.index()] {
            return e;
        }
        let mut total = 0;
        for c in self.solve.children(i).to_vec() {
            let below = self.events(c);
            total += 1 + self.k(c) * (below + 1) + below;
        }
        self.events[i.index()] = Some(total);
        total
    }
}

/// Predicted counts of the exact solver on `solve_graph` for a model whose
/// own DAG is `model_dag`. `closed_form_leaf` says whether leaf Hessian
/// products come from the model rather than from gradient differences.
/// Returns the counts and the number of logged events.
pub fn predict_dag(
    model_dag: &LatentDag,
    solve_graph: &LatentDag,
    config: &OptimConfig,
    closed_form_leaf: bool,
) -> Result<(Cost, u64)> {
    let rooted = solve_graph.add_virtual_root()?;
    let slots = rooted.node_count() + 1;
    let mut r = Recurrence {
        solve: &rooted,
        model: model_dag,
        cfg: config,
        closed_form_leaf,
        conv: vec![None; slots],
        full: vec![None; slots],
        back: vec![None; slots],
        events: vec![None; slots],
    };
    let joint_init = Cost {
        favi_calls: model_dag.node_count() as u64,
        ..Default::default()
    };
    let cost = joint_init + r.conv(NodeId::ROOT);
    Ok((cost, r.events(NodeId::ROOT)))
}

/// Gradient calls of the exact solver on an `n`-node chain with `k` steps
/// everywhere, in closed form: `Σ_{d<n} k·G(d)` with
/// `G(d) = (2k+1)^d` under differences, or `G(0) = 1`,
/// `G(d) = (2k+1)·G(d−1) − k·[d = 1]` with closed-form leaf products.
pub fn chain_gradient_calls(n: u32, k: u64, closed_form_leaf: bool) -> u64 {
    let mut g = 1u64;
    let mut total = 0u64;
    for d in 0..n {
        if d > 0 {
            g = (2 * k + 1) * g - if closed_form_leaf && d == 1 { k } else { 0 };
        }
        total += k * g;
    }
    total
}

/// Gradient calls of the simultaneous partial-gradient solver.
pub fn bao_gradient_calls(n: u64, k: u64) -> u64 {
    n * k
}

/// Gradient and initializer calls of the approximate solver.
pub fn approx_calls(n: u64, k: u64) -> (u64, u64) {
    (k * n, n * (n + 1) / 2 + k * n * n.saturating_sub(1) / 2)
}

/// Events of the exact solver on an `n`-node chain.
pub fn chain_events(n: u32, k: u64) -> u64 {
    (0..n).fold(0, |e, _| 1 + k + (k + 1) * e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_agree_with_recurrence() {
        for n in 1..=5u32 {
            for k in 0..=4u64 {
                let dag = LatentDag::chain(vec![1; n as usize]).unwrap();
                let cfg = OptimConfig::new(0.1, k as usize);
                for leaf in [true, false] {
                    let (c, e) = predict_dag(&dag, &dag, &cfg, leaf).unwrap();
                    assert_eq!(c.gradient_calls, chain_gradient_calls(n, k, leaf), "n={n} k={k}");
                    assert_eq!(e, chain_events(n, k));
                }
            }
        }
    }

    #[test]
    fn worked_values() {
        assert_eq!(chain_gradient_calls(3, 3, true), 99);
        assert_eq!(chain_gradient_calls(3, 3, false), 171);
        assert_eq!(chain_events(1, 2), 3);
        assert_eq!(chain_events(2, 2), 12);
        assert_eq!(chain_events(3, 2), 39);
        assert_eq!(approx_calls(3, 4), (12, 6 + 12));
    }

    #[test]
    fn exact_count_outgrows_k_to_the_n_minus_one() {
        for n in 2..=5u32 {
            for k in 2..=4u64 {
                assert!(chain_gradient_calls(n, k, true) >= k.pow(n - 1));
            }
        }
    }
}
