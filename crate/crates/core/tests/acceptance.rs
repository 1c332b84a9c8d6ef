//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Criteria listed in `KNOWN_FAILING` fail on this implementation and are
//! reported as such; the test fails if that set changes in either direction
//! or if the frozen codec-suite totals drift.

// Goldens keep the 17 digits they were printed with.
#![allow(clippy::excessive_precision)]

use std::fmt::Write as _;
use std::io::Write as _;
use std::time::Instant;

use savi_core::models::presets;
use savi_core::verify::{self, ablation_rows, codec_suite_runs, ordering_rows, ComplexityRow, OrderingRow, SUITE_RUNS};

const TWO_LEVEL_TOL_ANALYTIC: f64 = 1e-5;
const TWO_LEVEL_TOL_FD: f64 = 1e-3;
const TWO_LEVEL_MAX_SECONDS: f64 = 30.0;
const DAG_TOL_ANALYTIC: f64 = 1e-6;
const DAG_TOL_FD: f64 = 1e-4;
const DAG_MAX_SECONDS: f64 = 120.0;
const COMPLEXITY_MIN_RATIO: f64 = 3.0;
const GAP_ZERO_TOL: f64 = 1e-12;
const GAP_MIN_COUPLED: f64 = 0.01;
const MONOTONE_TOL: f64 = 0.0;
const SUITE_MAX_SECONDS: f64 = 300.0;
/// Relative tolerance against the frozen suite totals.
const GOLDEN_REL_TOL: f64 = 1e-8;
const SEED: u64 = 0;

/// Criteria that fail on the toy codec; see the ledger for the values.
const KNOWN_FAILING: &[u8] = &[6, 7];

/// Total objective per suite member, in `SUITE_RUNS` order:
/// favi, bao, approx, exact, approx w-only, approx y-only, bao w-only, bao y-only.
const SUITE_TOTALS: [[f64; 8]; 5] = [
    [
        -1.02870953252998927e1,
        -8.77792863020884795e0,
        -8.78940946745225560e0,
        -8.61328571782629027e0,
        -9.21053998732234547e0,
        -8.86754021978660489e0,
        -9.80286257512937098e0,
        -9.20751084814501120e0,
    ],
    [
        -2.54657734594818912e1,
        -1.33712956881905178e1,
        -1.56085581422651600e1,
        -1.33562401738856309e1,
        -1.83808868125640608e1,
        -1.42276608416176167e1,
        -2.22563990624697539e1,
        -1.36248605431249636e1,
    ],
    [
        -2.06353630411989215e1,
        -9.83241337385868874e0,
        -9.59669111002582120e0,
        -9.44522756842319566e0,
        -1.15474448939761558e1,
        -1.19395017896995750e1,
        -1.87802631864192264e1,
        -1.26279437898818756e1,
    ],
    [
        -2.55593292381000197e1,
        -1.49175624820043229e1,
        -1.56090331616900002e1,
        -1.48109601544347900e1,
        -2.39632172730883823e1,
        -1.60274877180647017e1,
        -2.46256771657070530e1,
        -1.53375100331682059e1,
    ],
    [
        -1.06698032737189763e1,
        -8.78815222302615418e0,
        -8.52266912969306745e0,
        -8.61385589652669914e0,
        -9.13061850022728194e0,
        -9.16929491509121064e0,
        -1.01244872780116566e1,
        -9.53003377111773808e0,
    ],
];

struct Outcome {
    id: u8,
    name: &'static str,
    passed: bool,
    detail: String,
}

impl Outcome {
    fn line(&self) -> String {
        format!(
            "criterion {} [{}] {}: {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

/// Writes to the process stdout directly; the test harness only captures the
/// print macros, so these lines show up in a plain `cargo test` run.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn acceptance() {
    let start = Instant::now();
    let mut out = Vec::new();

    let (s, t) = timed(|| verify::two_level_oracle(50, SEED, false).unwrap());
    out.push(Outcome {
        id: 1,
        name: "two-level gradient vs oracle",
        passed: s.max_err_analytic < TWO_LEVEL_TOL_ANALYTIC
            && s.max_err_fd < TWO_LEVEL_TOL_FD
            && t < TWO_LEVEL_MAX_SECONDS,
        detail: format!(
            "{} instances, max rel err {:.2e} analytic, {:.2e} fd, {t:.1}s",
            s.instances, s.max_err_analytic, s.max_err_fd
        ),
    });

    let (s, t) = timed(|| verify::dag_oracle(30, SEED, false).unwrap());
    out.push(Outcome {
        id: 2,
        name: "DAG gradient vs oracle",
        passed: s.max_err_analytic < DAG_TOL_ANALYTIC && s.max_err_fd < DAG_TOL_FD && t < DAG_MAX_SECONDS,
        detail: format!(
            "{} dags, {} comparisons, max rel err {:.2e} analytic, {:.2e} fd, {t:.1}s",
            s.instances, s.comparisons, s.max_err_analytic, s.max_err_fd
        ),
    });

    let rows = verify::complexity(&verify::COMPLEXITY_GRID).unwrap();
    let ratio = rows.iter().find(|r| (r.n, r.k) == (3, 3)).unwrap().ratio();
    let mut detail = String::new();
    for r in &rows {
        let _ = write!(
            detail,
            "(N={},K={}) {}/{} ",
            r.n, r.k, r.dag_analytic.0, r.dag_analytic.1
        );
    }
    let _ = write!(detail, "ratio {ratio:.1}");
    out.push(Outcome {
        id: 3,
        name: "gradient-call counts",
        passed: rows.iter().all(ComplexityRow::exact) && ratio > COMPLEXITY_MIN_RATIO,
        detail,
    });

    let g = verify::gradient_gap(SEED).unwrap();
    out.push(Outcome {
        id: 4,
        name: "partial-gradient gap",
        passed: g.separable_max <= GAP_ZERO_TOL && g.coupled > GAP_MIN_COUPLED,
        detail: format!("separable {:.1e}, coupled chain {:.4}", g.separable_max, g.coupled),
    });

    let f = verify::factorized(20, SEED).unwrap();
    out.push(Outcome {
        id: 5,
        name: "factorized equivalence",
        passed: f.identical == f.instances,
        detail: format!("{}/{} bit-identical", f.identical, f.instances),
    });

    let (runs, t) = timed(|| codec_suite_runs(presets::CODEC_SUITE_STEPS).unwrap());
    let mut drift = Vec::new();
    for (i, c) in runs.iter().enumerate() {
        for (j, &(m, o)) in SUITE_RUNS.iter().enumerate() {
            let got = c.find(m, o).unwrap().totals.objective;
            if rel(got, SUITE_TOTALS[i][j]) > GOLDEN_REL_TOL {
                drift.push(format!(
                    "{} {m}:{} got {got:.17e} want {:.17e}",
                    c.spec,
                    o.as_str(),
                    SUITE_TOTALS[i][j]
                ));
            }
        }
    }
    let ord = ordering_rows(&runs).unwrap();
    let mut detail = String::new();
    for r in &ord {
        let _ = write!(
            detail,
            "{} {} (exact {:.4}, approx {:.4}, bao {:.4}, favi {:.4}); ",
            r.spec,
            if r.holds() { "ok" } else { "violated" },
            r.exact,
            r.approx,
            r.bao,
            r.favi
        );
    }
    let _ = write!(detail, "{t:.1}s");
    out.push(Outcome {
        id: 6,
        name: "method ordering on the codec suite",
        passed: ord.iter().all(OrderingRow::holds),
        detail,
    });

    let abl = ablation_rows(&runs).unwrap();
    let mut detail = String::new();
    for r in &abl {
        let _ = write!(
            detail,
            "{} {} (joint {:.4}, w-only {:.4}, y-only {:.4}; bao {}); ",
            r.spec,
            if r.holds() { "ok" } else { "violated" },
            r.approx[0],
            r.approx[1],
            r.approx[2],
            if r.bao_holds() { "ok" } else { "violated" }
        );
    }
    out.push(Outcome {
        id: 7,
        name: "joint vs single-set ablation",
        passed: abl.iter().all(|r| r.holds()),
        detail,
    });

    let m = verify::monotone(SEED).unwrap();
    let fixed = verify::zero_steps_fixed_point().unwrap();
    let det = verify::deterministic_csv().unwrap();
    let wall = start.elapsed().as_secs_f64();
    out.push(Outcome {
        id: 8,
        name: "monotone traces, K=0 fixed point, determinism, runtime",
        passed: m.worst_drop <= MONOTONE_TOL && fixed && det && wall < SUITE_MAX_SECONDS,
        detail: format!(
            "{} traces, worst drop {:.1e}, fixed point {fixed}, identical csv {det}, suite {wall:.1}s",
            m.traces, m.worst_drop
        ),
    });

    for o in &out {
        report(&o.line());
    }
    let failing: Vec<u8> = out.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    report(&format!("failing criteria: {failing:?} (known: {KNOWN_FAILING:?})"));
    assert!(drift.is_empty(), "suite totals drifted:\n{}", drift.join("\n"));
    assert_eq!(failing, KNOWN_FAILING, "set of failing criteria changed");
}
