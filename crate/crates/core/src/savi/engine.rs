//! The nested converge-and-differentiate machinery behind the exact solver.
//!
//! `conv(S, i)` re-initializes every child `c` of `i` from the current state,
//! takes `K_c` ascent steps on `c` along the total derivative of
//! `Φ_c(S) = L(conv(S, c))`, then re-converges `c`'s own subtree against the
//! final `y_c`. `grad_full(S, j)` runs `conv(S, j)` on a copy while recording
//! a tape, and propagates `∇L` back through the tape.

use nalgebra::DMatrix;

use super::{check_finite, check_finite_values, EvalCounter, Event, EventKind, HvpMode, OptimConfig};
use crate::error::{Error, Result};
use crate::graph::{LatentDag, NodeId};
use crate::models::{Curvature, LatentModel};
use crate::values::{norm_inf, LatentValues};

#[derive(Debug, Clone)]
pub(crate) struct State {
    pub values: LatentValues,
    /// Step counters indexed by node id; slot 0 is the virtual root.
    pub ks: Vec<usize>,
}

pub(crate) enum Op {
    Init {
        node: NodeId,
        at: LatentValues,
    },
    Step {
        node: NodeId,
        before: LatentValues,
        grad: LatentValues,
    },
    Final {
        tape: Vec<Op>,
    },
}

pub(crate) struct Engine<'a, M: LatentModel + ?Sized> {
    model: &'a M,
    cfg: &'a OptimConfig,
    /// Children lists of the rooted solve graph, in topological order.
    children: Vec<Vec<NodeId>>,
    /// Longest path below any latent node of the solve graph, the deepest
    /// nesting of differenced gradients.
    nesting: usize,
    analytic_hvp: bool,
    secant: bool,
    limit: usize,
    seq: usize,
    pub counter: EvalCounter,
    pub events: Vec<Event>,
}

impl<'a, M: LatentModel + ?Sized> Engine<'a, M> {
    /// `solve_graph` decides which children each convergence visits; it
    /// must have the same nodes as the model's DAG.
    pub fn new(model: &'a M, solve_graph: &LatentDag, cfg: &'a OptimConfig) -> Result<Self> {
        let rooted = solve_graph.add_virtual_root()?;
        let order = rooted.topo_sort()?;
        let children: Vec<Vec<NodeId>> = (0..=solve_graph.node_count())
            .map(|i| {
                let mut c = rooted.children(NodeId(i)).to_vec();
                c.sort_by_key(|&n| order.position(n));
                c
            })
            .collect();
        let mut heights = vec![0usize; children.len()];
        for &n in order.as_slice().iter().rev() {
            heights[n.index()] = children[n.index()]
                .iter()
                .map(|c| heights[c.index()] + 1)
                .max()
                .unwrap_or(0);
        }
        let probe = LatentValues::zeros(model.layout().clone());
        let has_hvp = model.dag().latent_nodes().next().is_some_and(|n| {
            let v = vec![0.0; model.dag().dim(n)];
            model.hvp(&probe, n, n, &v).is_some()
        });
        let analytic = cfg.hvp == HvpMode::Analytic;
        Ok(Engine {
            model,
            cfg,
            children,
            nesting: heights[1..].iter().copied().max().unwrap_or(0),
            analytic_hvp: analytic && has_hvp,
            secant: analytic && model.curvature() == Curvature::Constant,
            limit: solve_graph.node_count() + 1,
            seq: 0,
            counter: EvalCounter::default(),
            events: Vec::new(),
        })
    }

    pub fn event_count(&self) -> usize {
        self.seq
    }

    fn record(&mut self, kind: EventKind, node: NodeId, st: &State) {
        let seq = self.seq;
        self.seq += 1;
        if self.cfg.record_events {
            self.events.push(Event {
                seq,
                kind,
                node,
                steps: st.ks[1..].to_vec(),
                objective: self.model.objective(&st.values),
            });
        }
    }

    fn favi(&mut self, values: &LatentValues, node: NodeId) -> Result<Vec<f64>> {
        self.counter.favi_calls += 1;
        let v = self.model.favi_init(values, node);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "initialization",
                event: self.seq,
            });
        }
        Ok(v)
    }

    fn grad_all(&mut self, values: &LatentValues) -> Result<LatentValues> {
        self.counter.gradient_calls += 1;
        let g = self.model.grad_all(values);
        check_finite_values(&g, "gradient", self.seq)?;
        Ok(g)
    }

    /// Converges the subtree below `i` in place. With `primary`, events are
    /// logged and `on_step` sees `(child, Φ_child before the step)`.
    pub fn conv(
        &mut self,
        st: &mut State,
        i: NodeId,
        mut tape: Option<&mut Vec<Op>>,
        primary: bool,
        depth: usize,
        on_step: &mut dyn FnMut(NodeId, f64),
    ) -> Result<()> {
        if depth > self.limit {
            return Err(Error::RecursionDepth {
                depth,
                limit: self.limit,
            });
        }
        let children = self.children[i.index()].clone();
        for c in children {
            let init = self.favi(&st.values, c)?;
            if let Some(t) = tape.as_deref_mut() {
                t.push(Op::Init {
                    node: c,
                    at: st.values.clone(),
                });
            }
            st.values.set_block(c, &init);
            st.ks[c.index()] = 0;
            if primary {
                self.record(EventKind::Init, c, st);
            }
            for _ in 0..self.cfg.steps_for(c) {
                let (phi, grad) = self.grad_full(st, c, primary, depth + 1)?;
                if primary {
                    on_step(c, phi);
                }
                let before = tape.is_some().then(|| st.values.clone());
                for (y, g) in st.values.block_mut(c).iter_mut().zip(grad.block(c)) {
                    *y += self.cfg.alpha * g;
                }
                st.ks[c.index()] += 1;
                if let (Some(t), Some(before)) = (tape.as_deref_mut(), before) {
                    t.push(Op::Step { node: c, before, grad });
                }
                if primary {
                    self.record(EventKind::Step, c, st);
                }
            }
            match tape.as_deref_mut() {
                Some(t) => {
                    let mut sub = Vec::new();
                    self.conv(st, c, Some(&mut sub), primary, depth + 1, &mut |_, _| {})?;
                    t.push(Op::Final { tape: sub });
                }
                None => self.conv(st, c, None, primary, depth + 1, &mut |_, _| {})?,
            }
        }
        Ok(())
    }

    /// `Φ_j(S)` and its gradient with respect to every block of `S`.
    pub fn grad_full(&mut self, st: &State, j: NodeId, primary: bool, depth: usize) -> Result<(f64, LatentValues)> {
        let mut work = st.clone();
        let mut tape = Vec::new();
        self.conv(&mut work, j, Some(&mut tape), primary, depth, &mut |_, _| {})?;
        let phi = check_finite(self.model.objective(&work.values), "objective", self.seq)?;
        let mut adj = self.grad_all(&work.values)?;
        self.vjp(&tape, &mut adj, depth)?;
        check_finite_values(&adj, "gradient", self.seq)?;
        Ok((phi, adj))
    }

    fn vjp(&mut self, tape: &[Op], adj: &mut LatentValues, depth: usize) -> Result<()> {
        for op in tape.iter().rev() {
            match op {
                Op::Final { tape } => self.vjp(tape, adj, depth + 1)?,
                Op::Step { node, before, grad } => {
                    let u = adj.block(*node).to_vec();
                    if let Some(col) = self.phi_hessian_column(before, grad, *node, &u, depth + 1)? {
                        adj.axpy(self.cfg.alpha, &col);
                    }
                }
                Op::Init { node, at } => {
                    let u = adj.block(*node).to_vec();
                    for &p in self.model.dag().parents(*node) {
                        self.counter.jacobian_calls += 1;
                        let jac: DMatrix<f64> = self.model.favi_jacobian(at, *node, p);
                        let pb = adj.block_mut(p);
                        for (col, slot) in pb.iter_mut().enumerate() {
                            let mut s = 0.0;
                            for (row, &ur) in u.iter().enumerate() {
                                s += jac[(row, col)] * ur;
                            }
                            *slot += s;
                        }
                    }
                    adj.block_mut(*node).fill(0.0);
                }
            }
        }
        Ok(())
    }

    /// `(∂²Φ_c/∂S ∂y_c) u` at `before`, where `grad = ∇Φ_c(before)`.
    /// `None` when `u` is zero.
    fn phi_hessian_column(
        &mut self,
        before: &LatentValues,
        grad: &LatentValues,
        c: NodeId,
        u: &[f64],
        depth: usize,
    ) -> Result<Option<LatentValues>> {
        let size = norm_inf(u);
        if size == 0.0 {
            return Ok(None);
        }
        let leaf = self.children[c.index()].is_empty();
        if leaf && self.analytic_hvp {
            self.counter.hvp_calls += 1;
            let col = self
                .model
                .hvp_column(before, c, u)
                .expect("model reported analytic hvp");
            check_finite_values(&col, "hessian product", self.seq)?;
            return Ok(Some(col));
        }
        let eps = if self.secant && !leaf {
            1.0 / size
        } else {
            let fd = self.cfg.fd.nested(self.nesting);
            fd.step(before.block(c), u).expect("nonzero direction")
        };
        let mut moved = before.clone();
        for (y, d) in moved.block_mut(c).iter_mut().zip(u) {
            *y += eps * d;
        }
        let shifted = if leaf {
            self.grad_all(&moved)?
        } else {
            let st = State {
                values: moved,
                ks: vec![0; self.children.len()],
            };
            self.grad_full(&st, c, false, depth)?.1
        };
        let mut col = shifted;
        for (a, b) in col.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *a = (*a - b) / eps;
        }
        Ok(Some(col))
    }
}
