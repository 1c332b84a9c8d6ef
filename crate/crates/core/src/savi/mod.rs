//! Solvers for semi-amortized inference and their shared bookkeeping.
//!
//! Every solver starts from the amortized initialization and refines blocks
//! by plain gradient ascent with a fixed step size. They differ in which
//! gradient they ascend:
//!
//! * [`solve_bao`]: the partial `∂L/∂y_i`, all blocks updated together.
//! * [`solve_2_level`] and [`solve_dag`]: the total derivative through the
//!   re-initialization and re-convergence of every descendant.
//! * [`solve_approx_dag`]: the total derivative through re-initialization
//!   only, with descendants left at their fresh initial values.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diff::FdConfig;
use crate::error::{Error, Result};
use crate::graph::{LatentDag, NodeId};
use crate::values::LatentValues;

mod approx;
mod bao;
pub mod complexity;
mod dag;
mod engine;
mod oracle;
mod two_level;

pub use approx::solve_approx_dag;
pub use bao::solve_bao;
pub use dag::{grad_dag, grad_dag_on, solve_dag, solve_dag_on};
pub use oracle::{bao_gradient_gap, oracle_outer_grad, OracleGuard};
pub use two_level::{grad_2_level, solve_2_level, TwoLevelGradient};

/// Source of the second-derivative products needed by the exact solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HvpMode {
    /// Closed-form products when the model has them; finite differences otherwise.
    Analytic,
    /// Always forward differences of gradients.
    Fd,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimConfig {
    pub alpha: f64,
    /// Default number of ascent steps per block.
    pub steps: usize,
    /// Per-node step counts overriding `steps`.
    pub overrides: BTreeMap<NodeId, usize>,
    pub hvp: HvpMode,
    pub fd: FdConfig,
    pub seed: u64,
    /// Keep the init/step event log (it grows with the recursion).
    pub record_events: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            alpha: 0.1,
            steps: 3,
            overrides: BTreeMap::new(),
            hvp: HvpMode::Analytic,
            fd: FdConfig::default(),
            seed: 0,
            record_events: false,
        }
    }
}

impl OptimConfig {
    pub fn new(alpha: f64, steps: usize) -> Self {
        OptimConfig {
            alpha,
            steps,
            ..Default::default()
        }
    }

    pub fn with_hvp(mut self, hvp: HvpMode) -> Self {
        self.hvp = hvp;
        self
    }

    pub fn with_events(mut self) -> Self {
        self.record_events = true;
        self
    }

    pub fn steps_for(&self, node: NodeId) -> usize {
        self.overrides.get(&node).copied().unwrap_or(self.steps)
    }

    pub fn validate(&self, dag: &LatentDag) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        for &n in self.overrides.keys() {
            if n.is_root() || !dag.contains(n) {
                return Err(Error::InvalidNode {
                    node: n,
                    count: dag.node_count(),
                });
            }
        }
        self.fd.validate()
    }
}

/// Work done by one solver run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EvalCounter {
    /// Gradient passes; a single-block and an all-block gradient count one each.
    pub gradient_calls: u64,
    pub hvp_calls: u64,
    pub favi_calls: u64,
    pub jacobian_calls: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    FaviInit,
    Updated,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentAssignment {
    pub values: LatentValues,
    /// `steps[k]` is the step counter of node `k + 1`.
    pub steps: Vec<usize>,
    pub provenance: Vec<Provenance>,
}

impl LatentAssignment {
    pub(crate) fn new(values: LatentValues, ks: &[usize], config: &OptimConfig) -> Self {
        let steps: Vec<usize> = ks[1..].to_vec();
        let provenance = steps
            .iter()
            .enumerate()
            .map(|(k, &s)| {
                if s == config.steps_for(NodeId(k + 1)) {
                    Provenance::Converged
                } else if s == 0 {
                    Provenance::FaviInit
                } else {
                    Provenance::Updated
                }
            })
            .collect();
        LatentAssignment {
            values,
            steps,
            provenance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Init,
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub seq: usize,
    pub kind: EventKind,
    pub node: NodeId,
    /// Step counters of nodes `1..=N` right after the event.
    pub steps: Vec<usize>,
    /// Objective right after the event.
    pub objective: f64,
}

impl Event {
    pub fn to_line(&self) -> String {
        let kind = match self.kind {
            EventKind::Init => "init",
            EventKind::Step => "step",
        };
        let ks: Vec<String> = self.steps.iter().map(|k| k.to_string()).collect();
        format!(
            "E {} {} node={} k=({}) L={:.17e}",
            self.seq,
            kind,
            self.node,
            ks.join(","),
            self.objective
        )
    }
}

/// One line per event.
pub fn format_trace(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        let _ = writeln!(out, "{}", e.to_line());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    pub method: String,
    pub assignment: LatentAssignment,
    /// Objective of the final assignment.
    pub objective: f64,
    /// Objective after each outer event, starting from the initialization.
    pub trace: Vec<f64>,
    pub counter: EvalCounter,
    /// Empty unless the config asked for events.
    pub events: Vec<Event>,
}

impl SolveResult {
    pub fn values(&self) -> &LatentValues {
        &self.assignment.values
    }
}

pub(crate) fn check_finite(x: f64, what: &'static str, event: usize) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite { what, event })
    }
}

pub(crate) fn check_finite_values(v: &LatentValues, what: &'static str, event: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what, event })
    }
}
