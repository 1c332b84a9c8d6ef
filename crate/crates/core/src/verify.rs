//! Property checks behind `savi verify`. Each check returns its raw numbers so
//! callers can apply their own tolerances; [`run`] applies the defaults below.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::alloc::{compare_methods, Comparison, ExactGuard, Method, Optimize};
use crate::diff::{grad_check, CorruptedGradient};
use crate::error::{Error, Result};
use crate::graph::{LatentDag, NodeId};
use crate::models::{favi_init_all, presets, LatentModel, QuadraticModel, QuadraticParams};
use crate::savi::complexity::{approx_calls, bao_gradient_calls, predict_dag};
use crate::savi::{
    bao_gradient_gap, grad_2_level, grad_dag, oracle_outer_grad, solve_2_level, solve_approx_dag, solve_bao, solve_dag,
    HvpMode, OptimConfig, SolveResult,
};
use crate::values::{rel_error, LatentValues};

pub const TWO_LEVEL_INSTANCES: usize = 50;
pub const TWO_LEVEL_TOL_ANALYTIC: f64 = 1e-5;
pub const TWO_LEVEL_TOL_FD: f64 = 1e-3;
pub const DAG_INSTANCES: usize = 30;
pub const DAG_TOL_ANALYTIC: f64 = 1e-6;
pub const DAG_TOL_FD: f64 = 1e-4;
pub const GAP_ZERO_TOL: f64 = 1e-12;
pub const GAP_MIN_COUPLED: f64 = 0.01;
pub const COMPLEXITY_GRID: [(usize, usize); 4] = [(2, 2), (2, 4), (3, 2), (3, 3)];
pub const COMPLEXITY_MIN_RATIO: f64 = 3.0;
pub const GRADCHECK_TOL: f64 = 1e-6;
/// Reference-norm floor for the oracle comparisons.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Thm1,
    Thm2,
    Complexity,
    Gap,
    Factorized,
    Ordering,
    Monotone,
    Gradcheck,
    All,
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "thm1" => Profile::Thm1,
            "thm2" => Profile::Thm2,
            "complexity" => Profile::Complexity,
            "gap" => Profile::Gap,
            "factorized" => Profile::Factorized,
            "ordering" => Profile::Ordering,
            "monotone" => Profile::Monotone,
            "gradcheck" => Profile::Gradcheck,
            "all" => Profile::All,
            _ => {
                return Err(Error::Config(format!(
                    "unknown profile `{s}` (expected thm1, thm2, complexity, gap, factorized, ordering, monotone, gradcheck or all)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Runs the gradient-based checks on models with a corrupted gradient.
    pub inject_fault: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Check {
    pub fn line(&self) -> String {
        format!(
            "[{}] {} ({:.1}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            self.detail
        )
    }
}

fn faulty(model: QuadraticModel, node: NodeId, fault: bool) -> Box<dyn LatentModel> {
    if fault {
        Box::new(CorruptedGradient::new(model, node))
    } else {
        Box::new(model)
    }
}

fn perturbed_init<M: LatentModel + ?Sized>(model: &M, rng: &mut ChaCha8Rng, scale: f64) -> Result<LatentValues> {
    let mut v = favi_init_all(model)?;
    let noise = Normal::new(0.0, scale).expect("valid normal");
    for x in v.as_mut_slice() {
        *x += noise.sample(rng);
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct OracleStats {
    pub instances: usize,
    pub comparisons: usize,
    pub max_err_analytic: f64,
    pub max_err_fd: f64,
}

/// Hypergradient of the two-level solver against the unrolled oracle on
/// seeded quadratics with `dim ≤ 4`, `K ≤ 8` and `α ≤ 0.2/λ_max`.
pub fn two_level_oracle(instances: usize, seed: u64, fault: bool) -> Result<OracleStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = OracleStats {
        instances,
        ..Default::default()
    };
    for _ in 0..instances {
        let (dw, dy) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let k = rng.random_range(0..=8);
        let m = presets::quadratic_two_level(rng.random(), dw, dy);
        let alpha = rng.random_range(0.5..=1.0) * 0.2 / m.lambda_max();
        let point = perturbed_init(&m, &mut rng, 0.5)?;
        let model = faulty(m, NodeId(2), fault);
        for mode in [HvpMode::Analytic, HvpMode::Fd] {
            let cfg = OptimConfig::new(alpha, k).with_hvp(mode);
            let g = grad_2_level(&*model, &point, &cfg)?.gradient;
            let o = oracle_outer_grad(&*model, &point, NodeId(1), &cfg)?;
            let err = rel_error(&g, &o, REL_FLOOR);
            match mode {
                HvpMode::Analytic => stats.max_err_analytic = stats.max_err_analytic.max(err),
                HvpMode::Fd => stats.max_err_fd = stats.max_err_fd.max(err),
            }
            stats.comparisons += 1;
        }
    }
    Ok(stats)
}

/// A random DAG over 2..=4 nodes with block dimensions 1..=3, each forward
/// pair joined with probability ½.
pub fn random_dag(rng: &mut ChaCha8Rng) -> Result<LatentDag> {
    let n = rng.random_range(2..=4);
    let dims = (0..n).map(|_| rng.random_range(1..=3)).collect();
    let mut edges = Vec::new();
    for c in 2..=n {
        for p in 1..c {
            if rng.random_bool(0.5) {
                edges.push((p, c));
            }
        }
    }
    LatentDag::new(dims, edges)
}

/// Recursive DAG gradient against the oracle at every node of seeded random
/// DAGs with `N ≤ 4`, `K ≤ 3`.
pub fn dag_oracle(instances: usize, seed: u64, fault: bool) -> Result<OracleStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = OracleStats {
        instances,
        ..Default::default()
    };
    for _ in 0..instances {
        let dag = random_dag(&mut rng)?;
        let last = NodeId(dag.node_count());
        let m = QuadraticModel::random(
            dag,
            &QuadraticParams {
                seed: rng.random(),
                ..Default::default()
            },
        )?;
        let k = rng.random_range(1..=3);
        let alpha = rng.random_range(0.5..=1.0) * 0.5 / m.lambda_max();
        let point = perturbed_init(&m, &mut rng, 0.5)?;
        let model = faulty(m, last, fault);
        for node in model.dag().latent_nodes() {
            for mode in [HvpMode::Analytic, HvpMode::Fd] {
                let cfg = OptimConfig::new(alpha, k).with_hvp(mode);
                let g = grad_dag(&*model, &point, node, &cfg)?.gradient;
                let o = oracle_outer_grad(&*model, &point, node, &cfg)?;
                let err = rel_error(&g, &o, REL_FLOOR);
                match mode {
                    HvpMode::Analytic => stats.max_err_analytic = stats.max_err_analytic.max(err),
                    HvpMode::Fd => stats.max_err_fd = stats.max_err_fd.max(err),
                }
                stats.comparisons += 1;
            }
        }
    }
    Ok(stats)
}

/// Measured against predicted counts for one chain size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ComplexityRow {
    pub n: usize,
    pub k: usize,
    /// `(measured, predicted)` pairs.
    pub dag_analytic: (u64, u64),
    pub dag_fd: (u64, u64),
    pub dag_events: (u64, u64),
    pub bao: (u64, u64),
    pub approx_gradient: (u64, u64),
    pub approx_favi: (u64, u64),
}

impl ComplexityRow {
    pub fn exact(&self) -> bool {
        [
            self.dag_analytic,
            self.dag_fd,
            self.dag_events,
            self.bao,
            self.approx_gradient,
            self.approx_favi,
        ]
        .iter()
        .all(|(a, b)| a == b)
    }

    /// Exact-to-partial-gradient cost ratio.
    pub fn ratio(&self) -> f64 {
        self.dag_analytic.0 as f64 / self.bao.0.max(1) as f64
    }
}

pub fn complexity(grid: &[(usize, usize)]) -> Result<Vec<ComplexityRow>> {
    grid.iter()
        .map(|&(n, k)| {
            let dag = LatentDag::chain(vec![2; n])?;
            let m = QuadraticModel::random(
                dag.clone(),
                &QuadraticParams {
                    seed: 1,
                    ..Default::default()
                },
            )?;
            let alpha = 0.5 / m.lambda_max();
            let analytic = OptimConfig::new(alpha, k).with_events();
            let fd = analytic.clone().with_hvp(HvpMode::Fd);
            let ra = solve_dag(&m, &analytic)?;
            let rf = solve_dag(&m, &fd)?;
            let (pa, ev) = predict_dag(&dag, &dag, &analytic, true)?;
            let (pf, _) = predict_dag(&dag, &dag, &fd, false)?;
            let bao = solve_bao(&m, &analytic)?;
            let approx = solve_approx_dag(&m, &analytic)?;
            let (ag, af) = approx_calls(n as u64, k as u64);
            Ok(ComplexityRow {
                n,
                k,
                dag_analytic: (ra.counter.gradient_calls, pa.gradient_calls),
                dag_fd: (rf.counter.gradient_calls, pf.gradient_calls),
                dag_events: (ra.events.len() as u64, ev),
                bao: (bao.counter.gradient_calls, bao_gradient_calls(n as u64, k as u64)),
                approx_gradient: (approx.counter.gradient_calls, ag),
                approx_favi: (approx.counter.favi_calls, af),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapStats {
    /// Largest gap over every node of the separable instances.
    pub separable_max: f64,
    /// Gap at the root of the coupled chain Q3.
    pub coupled: f64,
}

pub fn gradient_gap(seed: u64) -> Result<GapStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut separable_max: f64 = 0.0;
    for _ in 0..10 {
        let n = rng.random_range(1..=4);
        let dims = (0..n).map(|_| rng.random_range(1..=3)).collect();
        let m = presets::quadratic_separable(rng.random(), dims);
        let cfg = OptimConfig::new(0.5 / m.lambda_max(), rng.random_range(0..=3));
        let point = perturbed_init(&m, &mut rng, 0.5)?;
        for node in m.dag().latent_nodes() {
            separable_max = separable_max.max(bao_gradient_gap(&m, &point, node, &cfg)?);
        }
    }
    let q3 = presets::quadratic_chain_q3();
    let cfg = OptimConfig::new(0.05, 2);
    let coupled = bao_gradient_gap(&q3, &favi_init_all(&q3)?, NodeId(1), &cfg)?;
    Ok(GapStats { separable_max, coupled })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FactorizedStats {
    pub instances: usize,
    pub identical: usize,
}

fn bits(v: &LatentValues) -> Vec<u64> {
    v.as_slice().iter().map(|x| x.to_bits()).collect()
}

/// Whether the three solvers return bit-identical values on edgeless
/// separable quadratics.
pub fn factorized(instances: usize, seed: u64) -> Result<FactorizedStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut identical = 0;
    for _ in 0..instances {
        let n = rng.random_range(1..=5);
        let dims = (0..n).map(|_| rng.random_range(1..=3)).collect();
        let m = presets::quadratic_separable(rng.random(), dims);
        let cfg = OptimConfig::new(rng.random_range(0.1..=1.0) / m.lambda_max(), rng.random_range(0..=6));
        let b = bits(solve_bao(&m, &cfg)?.values());
        let a = bits(solve_approx_dag(&m, &cfg)?.values());
        let d = bits(solve_dag(&m, &cfg)?.values());
        if a == b && d == b {
            identical += 1;
        }
    }
    Ok(FactorizedStats { instances, identical })
}

/// Method and mask pairs run on every suite member.
pub const SUITE_RUNS: [(Method, Optimize); 8] = [
    (Method::Favi, Optimize::Joint),
    (Method::Bao, Optimize::Joint),
    (Method::Approx, Optimize::Joint),
    (Method::Exact, Optimize::Joint),
    (Method::Approx, Optimize::WOnly),
    (Method::Approx, Optimize::YOnly),
    (Method::Bao, Optimize::WOnly),
    (Method::Bao, Optimize::YOnly),
];

/// Every suite member under [`SUITE_RUNS`] with the suite's α and `steps`.
pub fn codec_suite_runs(steps: usize) -> Result<Vec<Comparison>> {
    let cfg = OptimConfig::new(presets::CODEC_SUITE_ALPHA, steps);
    let guard = ExactGuard {
        max_frames: 3,
        max_steps: steps.max(3),
    };
    (1..=5)
        .map(|i| compare_methods(&presets::codec_suite(i), &SUITE_RUNS, &cfg, guard))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingRow {
    pub spec: String,
    pub favi: f64,
    pub bao: f64,
    pub approx: f64,
    pub exact: f64,
}

impl OrderingRow {
    pub fn holds(&self) -> bool {
        self.exact >= self.approx && self.approx >= self.bao && self.bao >= self.favi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub spec: String,
    pub approx: [f64; 3],
    pub bao: [f64; 3],
}

impl AblationRow {
    /// Joint at least as good as either single set, for the corrected solver.
    pub fn holds(&self) -> bool {
        self.approx[0] >= self.approx[1] && self.approx[0] >= self.approx[2]
    }

    pub fn bao_holds(&self) -> bool {
        self.bao[0] >= self.bao[1] && self.bao[0] >= self.bao[2]
    }
}

fn total(c: &Comparison, method: Method, optimize: Optimize) -> Result<f64> {
    c.find(method, optimize)
        .map(|r| r.totals.objective)
        .ok_or_else(|| Error::Config(format!("missing run {method} {}", optimize.as_str())))
}

pub fn ordering_rows(runs: &[Comparison]) -> Result<Vec<OrderingRow>> {
    runs.iter()
        .map(|c| {
            Ok(OrderingRow {
                spec: c.spec.clone(),
                favi: total(c, Method::Favi, Optimize::Joint)?,
                bao: total(c, Method::Bao, Optimize::Joint)?,
                approx: total(c, Method::Approx, Optimize::Joint)?,
                exact: total(c, Method::Exact, Optimize::Joint)?,
            })
        })
        .collect()
}

pub fn ablation_rows(runs: &[Comparison]) -> Result<Vec<AblationRow>> {
    let masks = [Optimize::Joint, Optimize::WOnly, Optimize::YOnly];
    runs.iter()
        .map(|c| {
            let mut approx = [0.0; 3];
            let mut bao = [0.0; 3];
            for (k, &mask) in masks.iter().enumerate() {
                approx[k] = total(c, Method::Approx, mask)?;
                bao[k] = total(c, Method::Bao, mask)?;
            }
            Ok(AblationRow {
                spec: c.spec.clone(),
                approx,
                bao,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MonotoneStats {
    pub traces: usize,
    /// Largest decrease between consecutive trace entries.
    pub worst_drop: f64,
}

fn worst_drop(trace: &[f64]) -> f64 {
    trace.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
}

/// Objective traces of every solver on concave quadratics with
/// `α = 1/λ_max(A)`.
pub fn monotone(seed: u64) -> Result<MonotoneStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut models = vec![
        presets::quadratic_chain_q1(),
        presets::quadratic_two_level_q2(),
        presets::quadratic_chain_q3(),
        presets::quadratic_separable(5, vec![2, 1, 3]),
    ];
    for _ in 0..6 {
        let dag = random_dag(&mut rng)?;
        models.push(QuadraticModel::random(
            dag,
            &QuadraticParams {
                seed: rng.random(),
                ..Default::default()
            },
        )?);
    }
    let mut stats = MonotoneStats::default();
    for m in &models {
        let cfg = OptimConfig::new(1.0 / m.lambda_max(), 4);
        let mut results: Vec<SolveResult> = vec![solve_dag(m, &cfg)?, solve_bao(m, &cfg)?, solve_approx_dag(m, &cfg)?];
        if m.dag().node_count() == 2 && m.dag().has_edge(NodeId(1), NodeId(2)) {
            results.push(solve_2_level(m, &cfg)?);
        }
        for r in &results {
            stats.traces += 1;
            stats.worst_drop = stats.worst_drop.max(worst_drop(&r.trace));
        }
    }
    Ok(stats)
}

/// With `K = 0` every solver returns the joint initialization bit for bit.
pub fn zero_steps_fixed_point() -> Result<bool> {
    let cfg = OptimConfig::new(0.05, 0);
    let q: Vec<Box<dyn LatentModel>> = vec![
        Box::new(presets::quadratic_chain_q1()),
        Box::new(presets::quadratic_two_level_q2()),
        Box::new(presets::codec_suite(1)),
        Box::new(presets::codec_suite(2)),
    ];
    for m in &q {
        let init = bits(&favi_init_all(&**m)?);
        for r in [
            solve_dag(&**m, &cfg)?,
            solve_bao(&**m, &cfg)?,
            solve_approx_dag(&**m, &cfg)?,
        ] {
            if bits(r.values()) != init {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Runs the C1 comparison twice and compares the CSV bytes.
pub fn deterministic_csv() -> Result<bool> {
    let m = presets::codec_suite(1);
    let cfg = OptimConfig::new(presets::CODEC_SUITE_ALPHA, 3);
    let runs = [
        (Method::Favi, Optimize::Joint),
        (Method::Bao, Optimize::Joint),
        (Method::Approx, Optimize::Joint),
        (Method::Exact, Optimize::Joint),
    ];
    let a = compare_methods(&m, &runs, &cfg, ExactGuard::default())?.to_csv();
    let b = compare_methods(&m, &runs, &cfg, ExactGuard::default())?.to_csv();
    Ok(a == b)
}

/// Largest relative gradient error per model.
pub fn gradcheck(seed: u64, fault: bool) -> Result<Vec<(String, f64)>> {
    let mut models: Vec<Box<dyn LatentModel>> = vec![
        faulty(presets::quadratic_chain_q1(), NodeId(2), fault),
        faulty(presets::quadratic_two_level_q2(), NodeId(2), fault),
        faulty(presets::quadratic_chain_q3(), NodeId(2), fault),
    ];
    for i in 1..=5 {
        let c = presets::codec_suite(i);
        models.push(if fault {
            Box::new(CorruptedGradient::new(c, NodeId(2)))
        } else {
            Box::new(c)
        });
    }
    models
        .iter()
        .map(|m| {
            let r = grad_check(&**m, 5, GRADCHECK_TOL, 1e-6, seed)?;
            Ok((r.model, r.max_rel_error))
        })
        .collect()
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64()))
}

fn check(name: &str, passed: bool, detail: String, seconds: f64) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
        seconds,
    }
}

/// Runs one profile with the default tolerances.
pub fn run(profile: Profile, opts: &VerifyOptions) -> Result<Vec<Check>> {
    let want = |p: Profile| profile == p || profile == Profile::All;
    let seed = opts.seed;
    let fault = opts.inject_fault;
    let mut out = Vec::new();
    if want(Profile::Thm1) {
        let (s, t) = timed(|| two_level_oracle(TWO_LEVEL_INSTANCES, seed, fault))?;
        out.push(check(
            "thm1",
            s.max_err_analytic < TWO_LEVEL_TOL_ANALYTIC && s.max_err_fd < TWO_LEVEL_TOL_FD,
            format!(
                "{} instances, max rel err {:.2e} analytic (< {:.0e}), {:.2e} fd (< {:.0e})",
                s.instances, s.max_err_analytic, TWO_LEVEL_TOL_ANALYTIC, s.max_err_fd, TWO_LEVEL_TOL_FD
            ),
            t,
        ));
    }
    if want(Profile::Thm2) {
        let (s, t) = timed(|| dag_oracle(DAG_INSTANCES, seed, fault))?;
        out.push(check(
            "thm2",
            s.max_err_analytic < DAG_TOL_ANALYTIC && s.max_err_fd < DAG_TOL_FD,
            format!(
                "{} dags, {} comparisons, max rel err {:.2e} analytic (< {:.0e}), {:.2e} fd (< {:.0e})",
                s.instances, s.comparisons, s.max_err_analytic, DAG_TOL_ANALYTIC, s.max_err_fd, DAG_TOL_FD
            ),
            t,
        ));
    }
    if want(Profile::Complexity) {
        let (rows, t) = timed(|| complexity(&COMPLEXITY_GRID))?;
        let ratio = rows.iter().find(|r| (r.n, r.k) == (3, 3)).map_or(0.0, |r| r.ratio());
        let mut detail = String::new();
        for r in &rows {
            let _ = write!(
                detail,
                "(N={},K={}) dag {}/{} fd {}/{} bao {}; ",
                r.n, r.k, r.dag_analytic.0, r.dag_analytic.1, r.dag_fd.0, r.dag_fd.1, r.bao.0
            );
        }
        let _ = write!(detail, "ratio at (3,3) {ratio:.1}");
        out.push(check(
            "complexity",
            rows.iter().all(ComplexityRow::exact) && ratio > COMPLEXITY_MIN_RATIO,
            detail,
            t,
        ));
    }
    if want(Profile::Gap) {
        let (s, t) = timed(|| gradient_gap(seed))?;
        out.push(check(
            "gap",
            s.separable_max <= GAP_ZERO_TOL && s.coupled > GAP_MIN_COUPLED,
            format!("separable max {:.2e}, coupled chain {:.4}", s.separable_max, s.coupled),
            t,
        ));
    }
    if want(Profile::Factorized) {
        let (s, t) = timed(|| factorized(20, seed))?;
        out.push(check(
            "factorized",
            s.identical == s.instances,
            format!("{}/{} instances bit-identical", s.identical, s.instances),
            t,
        ));
    }
    if want(Profile::Ordering) {
        let (runs, t) = timed(|| codec_suite_runs(presets::CODEC_SUITE_STEPS))?;
        let ord = ordering_rows(&runs)?;
        let abl = ablation_rows(&runs)?;
        let mut detail = String::new();
        for r in &ord {
            let _ = write!(
                detail,
                "{}: exact {:.4} approx {:.4} bao {:.4} favi {:.4} [{}]; ",
                r.spec,
                r.exact,
                r.approx,
                r.bao,
                r.favi,
                if r.holds() { "ok" } else { "violated" }
            );
        }
        out.push(check("ordering", ord.iter().all(OrderingRow::holds), detail, t));
        let mut detail = String::new();
        for r in &abl {
            let _ = write!(
                detail,
                "{}: approx joint {:.4} w-only {:.4} y-only {:.4} [{}], bao {} ; ",
                r.spec,
                r.approx[0],
                r.approx[1],
                r.approx[2],
                if r.holds() { "ok" } else { "violated" },
                if r.bao_holds() { "joint best" } else { "joint not best" }
            );
        }
        out.push(check("ablation", abl.iter().all(AblationRow::holds), detail, 0.0));
    }
    if want(Profile::Monotone) {
        let (s, t) = timed(|| monotone(seed))?;
        let (k0, t0) = timed(zero_steps_fixed_point)?;
        let (det, t1) = timed(deterministic_csv)?;
        out.push(check(
            "monotone",
            s.worst_drop <= 0.0 && k0 && det,
            format!(
                "{} traces, worst drop {:.2e}; K=0 fixed point {}; repeated CSV identical {}",
                s.traces, s.worst_drop, k0, det
            ),
            t + t0 + t1,
        ));
    }
    if want(Profile::Gradcheck) {
        let (rows, t) = timed(|| gradcheck(seed, fault))?;
        let worst = rows.iter().map(|r| r.1).fold(0.0, f64::max);
        let detail = rows
            .iter()
            .map(|(m, e)| format!("{m} {e:.2e}"))
            .collect::<Vec<_>>()
            .join(", ");
        out.push(check("gradcheck", worst < GRADCHECK_TOL, detail, t));
    }
    Ok(out)
}
