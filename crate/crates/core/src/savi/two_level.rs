use serde::Serialize;

use super::bao::step;
use super::{check_finite, check_finite_values, EvalCounter, HvpMode, LatentAssignment, OptimConfig, SolveResult};
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::models::LatentModel;
use crate::values::LatentValues;

const W: NodeId = NodeId(1);
const Y: NodeId = NodeId(2);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoLevelGradient {
    /// `dL(w, y^K(w))/dw`.
    pub gradient: Vec<f64>,
    /// Inner solution `y^K(w)`, with `w` in node 1.
    pub inner: LatentValues,
    pub counter: EvalCounter,
}

fn check_shape<M: LatentModel + ?Sized>(model: &M) -> Result<()> {
    let dag = model.dag();
    if dag.node_count() != 2 || dag.has_edge(Y, W) {
        return Err(Error::Config(
            "the two-level solver needs exactly two blocks, w = node 1 and y = node 2".into(),
        ));
    }
    Ok(())
}

/// Inner ascent on `y` from its initialization given `w`; returns the
/// trajectory `y^0..y^K` as full assignments.
fn inner_solve<M: LatentModel + ?Sized>(
    model: &M,
    values: &LatentValues,
    config: &OptimConfig,
    counter: &mut EvalCounter,
) -> Result<Vec<LatentValues>> {
    let mut cur = values.clone();
    counter.favi_calls += 1;
    let y0 = model.favi_init(&cur, Y);
    cur.set_block(Y, &y0);
    check_finite_values(&cur, "initialization", 0)?;
    let mut traj = vec![cur.clone()];
    for k in 0..config.steps_for(Y) {
        counter.gradient_calls += 1;
        let g = model.grad(&cur, Y);
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                event: k,
            });
        }
        step(&mut cur, Y, config.alpha, &g);
        traj.push(cur.clone());
    }
    Ok(traj)
}

/// Hessian rows for `w` and `y` against the `y` column, applied to `v`.
fn hessian_y_column<M: LatentModel + ?Sized>(
    model: &M,
    at: &LatentValues,
    v: &[f64],
    config: &OptimConfig,
    counter: &mut EvalCounter,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if config.hvp == HvpMode::Analytic {
        if let (Some(hw), Some(hy)) = (model.hvp(at, W, Y, v), model.hvp(at, Y, Y, v)) {
            counter.hvp_calls += 1;
            return Ok((hw, hy));
        }
    }
    let Some(eps) = config.fd.step(at.block(Y), v) else {
        return Ok((vec![0.0; at.dim(W)], vec![0.0; at.dim(Y)]));
    };
    let mut moved = at.clone();
    step(&mut moved, Y, eps, v);
    counter.gradient_calls += 2;
    let g0 = model.grad_all(at);
    let g1 = model.grad_all(&moved);
    let diff = |n: NodeId| -> Vec<f64> {
        g1.block(n)
            .iter()
            .zip(g0.block(n))
            .map(|(a, b)| (a - b) / eps)
            .collect()
    };
    Ok((diff(W), diff(Y)))
}

/// Hypergradient of `L(w, y^K(w))` by reverse accumulation through the
/// inner ascent and the initializer of `y`. `values` supplies `w` in node 1;
/// its `y` block is ignored.
pub fn grad_2_level<M: LatentModel + ?Sized>(
    model: &M,
    values: &LatentValues,
    config: &OptimConfig,
) -> Result<TwoLevelGradient> {
    check_shape(model)?;
    config.validate(model.dag())?;
    let mut counter = EvalCounter::default();
    let traj = inner_solve(model, values, config, &mut counter)?;
    let last = traj.last().expect("trajectory holds y^0");
    counter.gradient_calls += 2;
    let mut gw = model.grad(last, W);
    let mut gy = model.grad(last, Y);
    let alpha = config.alpha;
    for at in traj[..traj.len() - 1].iter().rev() {
        let (hw, hy) = hessian_y_column(model, at, &gy, config, &mut counter)?;
        for (a, b) in gw.iter_mut().zip(&hw) {
            *a += alpha * b;
        }
        for (a, b) in gy.iter_mut().zip(&hy) {
            *a += alpha * b;
        }
    }
    counter.jacobian_calls += 1;
    let jac = model.favi_jacobian(&traj[0], Y, W);
    for (col, a) in gw.iter_mut().enumerate() {
        for (row, &g) in gy.iter().enumerate() {
            *a += jac[(row, col)] * g;
        }
    }
    if gw.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            event: 0,
        });
    }
    Ok(TwoLevelGradient {
        gradient: gw,
        inner: last.clone(),
        counter,
    })
}

/// Outer ascent on `w` along the hypergradient, then a final inner solve.
pub fn solve_2_level<M: LatentModel + ?Sized>(model: &M, config: &OptimConfig) -> Result<SolveResult> {
    check_shape(model)?;
    config.validate(model.dag())?;
    let mut counter = EvalCounter::default();
    let mut values = LatentValues::zeros(model.layout().clone());
    counter.favi_calls += 1;
    let w0 = model.favi_init(&values, W);
    values.set_block(W, &w0);
    let mut trace = Vec::new();
    let outer = config.steps_for(W);
    for k in 0..outer {
        let g = grad_2_level(model, &values, config)?;
        add(&mut counter, &g.counter);
        trace.push(check_finite(model.objective(&g.inner), "objective", k)?);
        step(&mut values, W, config.alpha, &g.gradient);
    }
    let traj = inner_solve(model, &values, config, &mut counter)?;
    let last = traj.into_iter().last().expect("trajectory holds y^0");
    let objective = check_finite(model.objective(&last), "objective", outer)?;
    trace.push(objective);
    let ks = [0, outer, config.steps_for(Y)];
    Ok(SolveResult {
        method: "two-level".into(),
        assignment: LatentAssignment::new(last, &ks, config),
        objective,
        trace,
        counter,
        events: Vec::new(),
    })
}

fn add(total: &mut EvalCounter, part: &EvalCounter) {
    total.gradient_calls += part.gradient_calls;
    total.hvp_calls += part.hvp_calls;
    total.favi_calls += part.favi_calls;
    total.jacobian_calls += part.jacobian_calls;
}
