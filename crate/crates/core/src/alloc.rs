//! Bit allocation on the toy codec: run a solver on the codec's latents and
//! report per-frame rate, distortion and objective.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{favi_init_all, CodecModel, FrameReport, LatentModel};
use crate::savi::complexity::{predict_dag, Cost};
use crate::savi::{solve_approx_dag, solve_bao, solve_dag_on, EvalCounter, Event, OptimConfig, SolveResult};
use crate::values::LatentValues;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Favi,
    Bao,
    Approx,
    Exact,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Favi, Method::Bao, Method::Approx, Method::Exact];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Favi => "favi",
            Method::Bao => "bao",
            Method::Approx => "approx",
            Method::Exact => "exact",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected favi, bao, approx or exact)")))
    }
}

/// Which latents may move; the others stay at their initialization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimize {
    #[default]
    Joint,
    WOnly,
    YOnly,
}

impl FromStr for Optimize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Optimize::Joint),
            "w-only" => Ok(Optimize::WOnly),
            "y-only" => Ok(Optimize::YOnly),
            _ => Err(Error::Config(format!(
                "unknown optimize mask `{s}` (expected joint, w-only or y-only)"
            ))),
        }
    }
}

impl Optimize {
    pub fn as_str(self) -> &'static str {
        match self {
            Optimize::Joint => "joint",
            Optimize::WOnly => "w-only",
            Optimize::YOnly => "y-only",
        }
    }

    /// `config` with zero steps on every masked latent.
    pub fn apply(self, model: &CodecModel, config: &OptimConfig) -> OptimConfig {
        let mut cfg = config.clone();
        for t in 1..=model.frames() {
            match self {
                Optimize::Joint => {}
                Optimize::WOnly => {
                    cfg.overrides.insert(CodecModel::y_node(t), 0);
                }
                Optimize::YOnly => {
                    cfg.overrides.insert(CodecModel::w_node(t), 0);
                }
            }
        }
        cfg
    }
}

/// Size limit for the exact method, whose cost grows exponentially.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactGuard {
    pub max_frames: usize,
    pub max_steps: usize,
}

impl Default for ExactGuard {
    fn default() -> Self {
        ExactGuard {
            max_frames: 3,
            max_steps: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocOptions {
    pub optimize: Optimize,
    pub exact_guard: ExactGuard,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRow {
    pub frame: usize,
    pub rate: f64,
    pub distortion: f64,
    pub objective: f64,
    pub bpp_like: f64,
    /// Ascent steps taken by the frame's `w` and `y` latents together.
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Totals {
    pub rate: f64,
    pub distortion: f64,
    pub objective: f64,
    pub bpp_like: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationReport {
    pub spec: String,
    pub method: Method,
    pub optimize: Optimize,
    pub frames: Vec<FrameRow>,
    pub totals: Totals,
    /// `|R − R_init| / R_init` against the initialization's total rate.
    pub bitrate_error: f64,
    pub counter: EvalCounter,
    /// Predicted counts of the exact recursion at this configuration.
    pub exact_cost: Cost,
    #[serde(skip)]
    pub values: LatentValues,
    /// Exact-method events, when the configuration records them.
    #[serde(skip)]
    pub events: Vec<Event>,
}

/// Runs one method on the codec and reports the result.
pub fn run_allocation(
    model: &CodecModel,
    method: Method,
    config: &OptimConfig,
    opts: &AllocOptions,
) -> Result<AllocationReport> {
    let cfg = opts.optimize.apply(model, config);
    let reduced = model.dag().transitive_reduction();
    let (exact_cost, _) = predict_dag(model.dag(), &reduced, &cfg, false)?;
    let mut events = Vec::new();
    let (values, ks, counter) = match method {
        Method::Favi => {
            let v = favi_init_all(model)?;
            let n = model.dag().node_count();
            let counter = EvalCounter {
                favi_calls: n as u64,
                ..Default::default()
            };
            (v, vec![0; n], counter)
        }
        Method::Bao => unpack(solve_bao(model, &cfg)?),
        Method::Approx => unpack(solve_approx_dag(model, &cfg)?),
        Method::Exact => {
            let guard = opts.exact_guard;
            let k = model.dag().latent_nodes().map(|n| cfg.steps_for(n)).max().unwrap_or(0);
            if model.frames() > guard.max_frames || k > guard.max_steps {
                return Err(Error::Guard(format!(
                    "exact method limited to T <= {} and K <= {} (got T = {}, K = {}; predicted {} gradient calls)",
                    guard.max_frames,
                    guard.max_steps,
                    model.frames(),
                    k,
                    exact_cost.gradient_calls
                )));
            }
            let mut r = solve_dag_on(model, &reduced, &cfg)?;
            events = std::mem::take(&mut r.events);
            unpack(r)
        }
    };
    let init_rate: f64 = if method == Method::Favi {
        0.0
    } else {
        model.frame_reports(&favi_init_all(model)?).iter().map(|f| f.rate).sum()
    };
    let mut report = build_report(
        model,
        method,
        opts.optimize,
        values,
        &ks,
        counter,
        exact_cost,
        init_rate,
    );
    report.events = events;
    Ok(report)
}

fn unpack(r: SolveResult) -> (LatentValues, Vec<usize>, EvalCounter) {
    (r.assignment.values, r.assignment.steps, r.counter)
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    model: &CodecModel,
    method: Method,
    optimize: Optimize,
    values: LatentValues,
    ks: &[usize],
    counter: EvalCounter,
    exact_cost: Cost,
    init_rate: f64,
) -> AllocationReport {
    let d = model.params().dim as f64;
    let frames: Vec<FrameRow> = model
        .frame_reports(&values)
        .into_iter()
        .map(|f: FrameReport| FrameRow {
            frame: f.frame,
            rate: f.rate,
            distortion: f.distortion,
            objective: f.objective,
            bpp_like: f.rate / d,
            steps: ks[2 * f.frame - 2] + ks[2 * f.frame - 1],
        })
        .collect();
    let mut totals = Totals {
        rate: 0.0,
        distortion: 0.0,
        objective: 0.0,
        bpp_like: 0.0,
        steps: 0,
    };
    for f in &frames {
        totals.rate += f.rate;
        totals.distortion += f.distortion;
        totals.objective += f.objective;
        totals.bpp_like += f.bpp_like;
        totals.steps += f.steps;
    }
    let bitrate_error = if method == Method::Favi {
        0.0
    } else {
        (totals.rate - init_rate).abs() / init_rate
    };
    AllocationReport {
        spec: model.name().to_string(),
        method,
        optimize,
        frames,
        totals,
        bitrate_error,
        counter,
        exact_cost,
        values,
        events: Vec::new(),
    }
}

pub const CSV_HEADER: &str = "method,frame,R,D,L,bpp_like,steps";

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl AllocationReport {
    fn tag(&self) -> String {
        match self.optimize {
            Optimize::Joint => self.method.to_string(),
            other => format!("{}:{}", self.method, other.as_str()),
        }
    }

    fn write_rows(&self, out: &mut String) {
        let tag = self.tag();
        for f in &self.frames {
            let _ = writeln!(
                out,
                "{tag},{},{},{},{},{},{}",
                f.frame,
                fmt_float(f.rate),
                fmt_float(f.distortion),
                fmt_float(f.objective),
                fmt_float(f.bpp_like),
                f.steps
            );
        }
        let t = &self.totals;
        let _ = writeln!(
            out,
            "{tag},TOTALS,{},{},{},{},{}",
            fmt_float(t.rate),
            fmt_float(t.distortion),
            fmt_float(t.objective),
            fmt_float(t.bpp_like),
            t.steps
        );
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        self.write_rows(&mut out);
        out
    }

    /// `<spec>_<method>.csv`, with the mask appended when not joint.
    pub fn file_name(&self) -> String {
        match self.optimize {
            Optimize::Joint => format!("{}_{}.csv", self.spec, self.method),
            other => format!("{}_{}_{}.csv", self.spec, self.method, other.as_str()),
        }
    }
}

/// Every method on the same codec, in the order given.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub spec: String,
    pub reports: Vec<AllocationReport>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.reports {
            r.write_rows(&mut out);
        }
        out
    }

    pub fn get(&self, method: Method) -> Option<&AllocationReport> {
        self.find(method, Optimize::Joint)
    }

    pub fn find(&self, method: Method, optimize: Optimize) -> Option<&AllocationReport> {
        self.reports
            .iter()
            .find(|r| r.method == method && r.optimize == optimize)
    }

    /// Plain-text summary, one line per report.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{:<16} {:>14} {:>14} {:>14} {:>12}\n",
            "method", "R", "D", "L", "bitrate_err"
        );
        for r in &self.reports {
            let _ = writeln!(
                out,
                "{:<16} {:>14.6} {:>14.6} {:>14.6} {:>12.6}",
                r.tag(),
                r.totals.rate,
                r.totals.distortion,
                r.totals.objective,
                r.bitrate_error
            );
        }
        out
    }
}

/// Runs each `(method, mask)` pair on its own thread; output order follows
/// the input order.
pub fn compare_methods(
    model: &CodecModel,
    runs: &[(Method, Optimize)],
    config: &OptimConfig,
    guard: ExactGuard,
) -> Result<Comparison> {
    if runs.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    let results: Vec<Result<AllocationReport>> = std::thread::scope(|s| {
        let handles: Vec<_> = runs
            .iter()
            .map(|&(method, optimize)| {
                s.spawn(move || {
                    run_allocation(
                        model,
                        method,
                        config,
                        &AllocOptions {
                            optimize,
                            exact_guard: guard,
                        },
                    )
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("solver thread panicked"))
            .collect()
    });
    Ok(Comparison {
        spec: model.name().to_string(),
        reports: results.into_iter().collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::presets;

    fn cfg(k: usize) -> OptimConfig {
        OptimConfig::new(0.05, k)
    }

    #[test]
    fn favi_report_is_the_initialization() {
        let m = presets::codec_suite(1);
        let r = run_allocation(&m, Method::Favi, &cfg(3), &AllocOptions::default()).unwrap();
        assert_eq!(r.bitrate_error, 0.0);
        let init = m.frame_reports(&favi_init_all(&m).unwrap());
        for (row, f) in r.frames.iter().zip(&init) {
            assert_eq!(
                (row.rate, row.distortion, row.objective),
                (f.rate, f.distortion, f.objective)
            );
        }
    }

    #[test]
    fn zero_steps_match_favi() {
        let m = presets::codec_suite(2);
        let favi = run_allocation(&m, Method::Favi, &cfg(0), &AllocOptions::default()).unwrap();
        for method in [Method::Bao, Method::Approx, Method::Exact] {
            let r = run_allocation(&m, method, &cfg(0), &AllocOptions::default()).unwrap();
            assert_eq!(r.frames, favi.frames, "{method}");
            assert_eq!(r.bitrate_error, 0.0);
        }
    }

    #[test]
    fn rows_are_consistent() {
        let m = presets::codec_suite(1);
        let r = run_allocation(&m, Method::Approx, &cfg(3), &AllocOptions::default()).unwrap();
        let lam = m.params().lambda0;
        let sum: f64 = r.frames.iter().map(|f| f.objective).sum();
        assert!((sum - r.totals.objective).abs() <= 1e-12);
        for f in &r.frames {
            assert_eq!(f.objective, -(f.rate + lam * f.distortion));
        }
        assert!(r.bitrate_error >= 0.0);
    }

    #[test]
    fn exact_guard_is_enforced() {
        let m = presets::codec_suite(1);
        let err = run_allocation(&m, Method::Exact, &cfg(4), &AllocOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Guard(_)));
    }

    #[test]
    fn masks_freeze_latents() {
        let m = presets::codec_suite(1);
        let init = favi_init_all(&m).unwrap();
        let opts = AllocOptions {
            optimize: Optimize::WOnly,
            ..Default::default()
        };
        let r = run_allocation(&m, Method::Bao, &cfg(3), &opts).unwrap();
        for t in 1..=m.frames() {
            assert_eq!(r.values.block(CodecModel::y_node(t)), init.block(CodecModel::y_node(t)));
        }
        assert_eq!(r.file_name(), "c1_bao_w-only.csv");
    }

    #[test]
    fn csv_layout() {
        let m = presets::codec_suite(1);
        let c = compare_methods(
            &m,
            &[(Method::Favi, Optimize::Joint), (Method::Bao, Optimize::Joint)],
            &cfg(2),
            ExactGuard::default(),
        )
        .unwrap();
        let csv = c.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 1 + 2 * (m.frames() + 1));
        assert!(lines[m.frames() + 1].starts_with("favi,TOTALS,"));
        assert_eq!(c.reports[0].to_csv().lines().count(), m.frames() + 2);
        assert!(compare_methods(&m, &[], &cfg(2), ExactGuard::default()).is_err());
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 123456.789] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
        }
    }
}
