//! Experiment configuration files (TOML). Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use savi_core::alloc::{ExactGuard, Method, Optimize};
use savi_core::diff::{FdConfig, FdScaling};
use savi_core::graph::{LatentDag, NodeId};
use savi_core::models::{CodecModel, CodecParams, QuadraticModel, QuadraticParams};
use savi_core::savi::{HvpMode, OptimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dag: Option<DagSection>,
    #[serde(default)]
    pub optim: OptimSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Codec,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, alias = "T", skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    #[serde(default, alias = "d", skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub favi_scale: Option<f64>,
    /// Codec evidence, `T·d` comma-separated floats frame after frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_codec: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    /// Comma-separated block dimensions, e.g. `"2,2,2"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<String>,
    /// Comma-separated `parent>child` pairs, e.g. `"1>2,2>3"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HvpSetting {
    Analytic,
    Fd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingSetting {
    Absolute,
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Per-node step counts, keyed by node id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, usize>,
    #[serde(default = "default_hvp")]
    pub hvp: HvpSetting,
    #[serde(default = "default_fd_h")]
    pub fd_h: f64,
    #[serde(default = "default_fd_r")]
    pub fd_r: f64,
    #[serde(default = "default_scaling")]
    pub fd_scaling: ScalingSetting,
}

fn default_alpha() -> f64 {
    0.05
}
fn default_steps() -> usize {
    3
}
fn default_hvp() -> HvpSetting {
    HvpSetting::Analytic
}
fn default_fd_h() -> f64 {
    FdConfig::default().h
}
fn default_fd_r() -> f64 {
    FdConfig::default().r
}
fn default_scaling() -> ScalingSetting {
    ScalingSetting::Relative
}

impl Default for OptimSection {
    fn default() -> Self {
        OptimSection {
            alpha: default_alpha(),
            steps: default_steps(),
            overrides: BTreeMap::new(),
            hvp: default_hvp(),
            fd_h: default_fd_h(),
            fd_r: default_fd_r(),
            fd_scaling: default_scaling(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_optimize")]
    pub optimize: Vec<Optimize>,
    #[serde(default = "default_out")]
    pub out: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_guard_frames")]
    pub exact_max_frames: usize,
    #[serde(default = "default_guard_steps")]
    pub exact_max_steps: usize,
    /// Also write the exact method's event log.
    #[serde(default)]
    pub events: bool,
}

fn default_methods() -> Vec<String> {
    vec!["favi".into(), "bao".into(), "approx".into()]
}
fn default_optimize() -> Vec<Optimize> {
    vec![Optimize::Joint]
}
fn default_out() -> String {
    "out".into()
}
fn default_guard_frames() -> usize {
    ExactGuard::default().max_frames
}
fn default_guard_steps() -> usize {
    ExactGuard::default().max_steps
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            methods: default_methods(),
            optimize: default_optimize(),
            out: default_out(),
            seed: None,
            exact_max_frames: default_guard_frames(),
            exact_max_steps: default_guard_steps(),
            events: false,
        }
    }
}

/// Solver selected for a quadratic model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadraticMethod {
    Favi,
    Bao,
    Approx,
    Exact,
    TwoLevel,
}

impl QuadraticMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            QuadraticMethod::Favi => "favi",
            QuadraticMethod::Bao => "bao",
            QuadraticMethod::Approx => "approx",
            QuadraticMethod::Exact => "exact",
            QuadraticMethod::TwoLevel => "two-level",
        }
    }
}

pub enum BuiltModel {
    Codec(Box<CodecModel>),
    Quadratic(Box<QuadraticModel>),
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.check_keys()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn check_keys(&self) -> Result<(), String> {
        let m = &self.model;
        let reject = |present: bool, key: &str, kind: &str| {
            if present {
                Err(format!("key `model.{key}` does not apply to kind = \"{kind}\""))
            } else {
                Ok(())
            }
        };
        match m.kind {
            ModelKind::Codec => {
                reject(m.coupling.is_some(), "coupling", "codec")?;
                reject(m.favi_scale.is_some(), "favi_scale", "codec")?;
                if let Some(d) = &self.dag {
                    if d.from_codec != Some(true) || d.nodes.is_some() || d.dims.is_some() || d.edges.is_some() {
                        return Err("codec models derive their DAG; `[dag]` may only hold `from_codec = true`".into());
                    }
                }
            }
            ModelKind::Quadratic => {
                for (present, key) in [
                    (m.frames.is_some(), "frames"),
                    (m.dim.is_some(), "dim"),
                    (m.lambda0.is_some(), "lambda0"),
                    (m.precision.is_some(), "precision"),
                    (m.rate_offset.is_some(), "rate_offset"),
                    (m.evidence.is_some(), "evidence"),
                ] {
                    reject(present, key, "quadratic")?;
                }
                match &self.dag {
                    Some(d) if d.from_codec != Some(true) && d.nodes.is_some() && d.dims.is_some() => {}
                    _ => {
                        return Err(
                            "quadratic models need `[dag]` with `nodes` and `dims` (and optional `edges`)".into(),
                        )
                    }
                }
            }
        }
        Ok(())
    }

    /// Seed used to draw the model: `override_seed`, then `run.seed`, then
    /// `model.seed`.
    pub fn seed(&self, override_seed: Option<u64>) -> u64 {
        override_seed.or(self.run.seed).or(self.model.seed).unwrap_or(7)
    }

    pub fn name(&self) -> String {
        self.model.name.clone().unwrap_or_else(|| match self.model.kind {
            ModelKind::Codec => "codec".into(),
            ModelKind::Quadratic => "quadratic".into(),
        })
    }

    pub fn build_model(&self, override_seed: Option<u64>) -> Result<BuiltModel, String> {
        let m = &self.model;
        let seed = self.seed(override_seed);
        match m.kind {
            ModelKind::Codec => {
                let d = CodecParams::default();
                let frames = m.frames.unwrap_or(d.frames);
                let dim = m.dim.unwrap_or(d.dim);
                let evidence = match &m.evidence {
                    Some(text) => Some(parse_evidence(text, frames, dim)?),
                    None => None,
                };
                let params = CodecParams {
                    frames,
                    dim,
                    lambda0: m.lambda0.unwrap_or(d.lambda0),
                    seed,
                    precision: m.precision.unwrap_or(d.precision),
                    rate_offset: m.rate_offset.unwrap_or(d.rate_offset),
                    evidence,
                };
                let model = CodecModel::new(params).map_err(|e| e.to_string())?;
                Ok(BuiltModel::Codec(Box::new(model.with_name(self.name()))))
            }
            ModelKind::Quadratic => {
                let dag = self.dag.as_ref().expect("checked at parse time");
                let graph = LatentDag::parse(
                    dag.nodes.unwrap_or(0),
                    dag.dims.as_deref().unwrap_or(""),
                    dag.edges.as_deref().unwrap_or(""),
                )
                .map_err(|e| format!("[dag]: {e}"))?;
                graph.topo_sort().map_err(|e| format!("[dag]: {e}"))?;
                let d = QuadraticParams::default();
                let params = QuadraticParams {
                    seed,
                    coupling: m.coupling.unwrap_or(d.coupling),
                    favi_scale: m.favi_scale.unwrap_or(d.favi_scale),
                };
                let model = QuadraticModel::random(graph, &params).map_err(|e| e.to_string())?;
                Ok(BuiltModel::Quadratic(Box::new(model.with_name(self.name()))))
            }
        }
    }

    pub fn optim(&self, dag: &LatentDag) -> Result<OptimConfig, String> {
        let o = &self.optim;
        let mut cfg = OptimConfig::new(o.alpha, o.steps).with_hvp(match o.hvp {
            HvpSetting::Analytic => HvpMode::Analytic,
            HvpSetting::Fd => HvpMode::Fd,
        });
        cfg.fd = FdConfig {
            h: o.fd_h,
            r: o.fd_r,
            scaling: match o.fd_scaling {
                ScalingSetting::Absolute => FdScaling::Absolute,
                ScalingSetting::Relative => FdScaling::Relative,
            },
        };
        for (key, &k) in &o.overrides {
            let id: usize = key
                .parse()
                .map_err(|_| format!("[optim.overrides]: key `{key}` is not a node id"))?;
            cfg.overrides.insert(NodeId(id), k);
        }
        cfg.validate(dag).map_err(|e| format!("[optim]: {e}"))?;
        Ok(cfg)
    }

    pub fn guard(&self) -> ExactGuard {
        ExactGuard {
            max_frames: self.run.exact_max_frames,
            max_steps: self.run.exact_max_steps,
        }
    }

    pub fn codec_methods(&self) -> Result<Vec<Method>, String> {
        self.run
            .methods
            .iter()
            .map(|m| m.parse::<Method>().map_err(|e| format!("[run] methods: {e}")))
            .collect()
    }

    pub fn quadratic_methods(&self) -> Result<Vec<QuadraticMethod>, String> {
        self.run
            .methods
            .iter()
            .map(|m| match m.as_str() {
                "favi" => Ok(QuadraticMethod::Favi),
                "bao" => Ok(QuadraticMethod::Bao),
                "approx" => Ok(QuadraticMethod::Approx),
                "exact" => Ok(QuadraticMethod::Exact),
                "two-level" => Ok(QuadraticMethod::TwoLevel),
                other => Err(format!(
                    "[run] methods: unknown method `{other}` (expected favi, bao, approx, exact or two-level)"
                )),
            })
            .collect()
    }
}

fn parse_evidence(text: &str, frames: usize, dim: usize) -> Result<Vec<Vec<f64>>, String> {
    let xs: Vec<f64> = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("model.evidence: `{}` is not a number", t.trim()))
        })
        .collect::<Result<_, _>>()?;
    if xs.len() != frames * dim {
        return Err(format!(
            "model.evidence: expected {} values (T = {frames}, d = {dim}), got {}",
            frames * dim,
            xs.len()
        ));
    }
    Ok(xs.chunks(dim).map(<[f64]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CODEC: &str = r#"
[model]
kind = "codec"
name = "c1"
seed = 7
frames = 2
dim = 2
lambda0 = 1.0

[optim]
alpha = 0.05
steps = 10

[optim.overrides]
1 = 20

[run]
methods = ["favi", "bao", "approx", "exact"]
optimize = ["joint", "w-only"]
exact_max_steps = 10
"#;

    #[test]
    fn parses_and_round_trips() {
        let c = ExperimentConfig::parse(CODEC).unwrap();
        assert_eq!(c.optim.overrides["1"], 20);
        assert_eq!(c.run.optimize, vec![Optimize::Joint, Optimize::WOnly]);
        let again = ExperimentConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let bad = CODEC.replace("steps = 10", "steps = 10\nstep_size = 1");
        let err = ExperimentConfig::parse(&bad).unwrap_err();
        assert!(err.contains("step_size"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn kind_specific_keys() {
        let bad = CODEC.replace("dim = 2", "dim = 2\ncoupling = 0.3");
        assert!(ExperimentConfig::parse(&bad).unwrap_err().contains("coupling"));
        let q = "[model]\nkind = \"quadratic\"\n";
        assert!(ExperimentConfig::parse(q).unwrap_err().contains("[dag]"));
    }

    #[test]
    fn overrides_must_name_nodes() {
        let c = ExperimentConfig::parse(&CODEC.replace("1 = 20", "9 = 20")).unwrap();
        let BuiltModel::Codec(m) = c.build_model(None).unwrap() else {
            panic!("codec expected")
        };
        use savi_core::models::LatentModel;
        assert!(c.optim(m.dag()).is_err());
    }

    #[test]
    fn short_keys_and_inline_evidence() {
        let text = "[model]\nkind = \"codec\"\nT = 2\nd = 2\nevidence = \"0.1, 0.2, 0.3, 0.4\"\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!((c.model.frames, c.model.dim), (Some(2), Some(2)));
        let BuiltModel::Codec(m) = c.build_model(None).unwrap() else {
            panic!("codec expected")
        };
        assert_eq!(m.evidence(2), &[0.3, 0.4]);
        let short = text.replace("0.4\"", "\"");
        let c = ExperimentConfig::parse(&short).unwrap();
        assert!(c.build_model(None).is_err());
    }

    #[test]
    fn seed_precedence() {
        let c = ExperimentConfig::parse(CODEC).unwrap();
        assert_eq!(c.seed(None), 7);
        assert_eq!(c.seed(Some(3)), 3);
    }
}
