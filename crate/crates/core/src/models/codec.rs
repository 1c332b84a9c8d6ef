//! A toy autoregressive codec. Frame `t` has a motion-like latent `w_t`
//! (node `2t-1`) and a residual-like latent `y_t` (node `2t`). Every block
//! conditions on all earlier blocks, so the DAG is complete.
//!
//! Decoder: `x'_t = tanh(P x'_{t-1} + Q w_t) + U y_t`, with `x'_0 = 0`.
//! Prior means: `μw_t = tanh(Mw z_{t-1})`, `μy_t = tanh(My [z_{t-1}; w_t])`,
//! where `z_{t-1} = [w_{t-1}; y_{t-1}]` (zero for the first frame).
//! Per frame: `R_t = ½ρ(‖w_t-μw_t‖² + ‖y_t-μy_t‖²) + 2d·rate_offset`,
//! `D_t = ‖x_t - x'_t‖²`, `L_t = -(R_t + λ0 D_t)`.
//! Initializer: `w_t⁰ = tanh(Ew [x_t; x'_{t-1}])`,
//! `y_t⁰ = Ey (x_t - tanh(P x'_{t-1} + Q w_t))`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::LatentModel;
use crate::error::{Error, Result};
use crate::graph::{LatentDag, NodeId};
use crate::values::{LatentValues, Layout};

#[derive(Debug, Clone, PartialEq)]
pub struct CodecParams {
    pub frames: usize,
    pub dim: usize,
    pub lambda0: f64,
    pub seed: u64,
    /// Prior precision ρ.
    pub precision: f64,
    /// Constant per-coordinate rate, so that total rate stays positive.
    pub rate_offset: f64,
    /// Explicit evidence; drawn from the seed when absent.
    pub evidence: Option<Vec<Vec<f64>>>,
}

impl Default for CodecParams {
    fn default() -> Self {
        CodecParams {
            frames: 2,
            dim: 2,
            lambda0: 1.0,
            seed: 7,
            precision: 1.0,
            rate_offset: 1.0,
            evidence: None,
        }
    }
}

/// Frozen network weights. Shapes with `d` the latent dimension:
/// `p, q, u, ey` are `d×d`, `ew` and `mw` are `d×2d`, `my` is `d×3d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecWeights {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub ew: DMatrix<f64>,
    pub ey: DMatrix<f64>,
    pub mw: DMatrix<f64>,
    pub my: DMatrix<f64>,
}

impl CodecWeights {
    pub fn zeros(d: usize) -> Self {
        CodecWeights {
            p: DMatrix::zeros(d, d),
            q: DMatrix::zeros(d, d),
            u: DMatrix::zeros(d, d),
            ew: DMatrix::zeros(d, 2 * d),
            ey: DMatrix::zeros(d, d),
            mw: DMatrix::zeros(d, 2 * d),
            my: DMatrix::zeros(d, 3 * d),
        }
    }

    fn random(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = 0.5 / (d as f64).sqrt();
        let mut draw = |r: usize, c: usize| {
            DMatrix::from_fn(r, c, |_, _| {
                let z: f64 = StandardNormal.sample(&mut *rng);
                s * z
            })
        };
        let p = draw(d, d);
        let q = draw(d, d);
        let u = DMatrix::identity(d, d) + draw(d, d);
        let ew = draw(d, 2 * d);
        let ey = DMatrix::identity(d, d) + draw(d, d);
        let mw = draw(d, 2 * d);
        let my = draw(d, 3 * d);
        CodecWeights {
            p,
            q,
            u,
            ew,
            ey,
            mw,
            my,
        }
    }
}

/// Rate, distortion and objective of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameReport {
    pub frame: usize,
    pub rate: f64,
    pub distortion: f64,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct CodecModel {
    params: CodecParams,
    weights: CodecWeights,
    evidence: Vec<DVector<f64>>,
    dag: LatentDag,
    layout: Arc<Layout>,
    name: String,
}

impl CodecModel {
    pub fn new(params: CodecParams) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let weights = CodecWeights::random(params.dim, &mut rng);
        let evidence = match &params.evidence {
            Some(e) => e.clone(),
            None => (0..params.frames)
                .map(|_| (0..params.dim).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect(),
        };
        Self::with_weights(params, weights, evidence)
    }

    pub fn with_weights(params: CodecParams, weights: CodecWeights, evidence: Vec<Vec<f64>>) -> Result<Self> {
        let (t, d) = (params.frames, params.dim);
        if t == 0 || d == 0 {
            return Err(Error::Config("codec needs at least one frame and d > 0".into()));
        }
        if evidence.len() != t || evidence.iter().any(|x| x.len() != d) {
            return Err(Error::Config(format!("evidence must be {t} frames of length {d}")));
        }
        let shapes = [
            (&weights.p, d, d),
            (&weights.q, d, d),
            (&weights.u, d, d),
            (&weights.ew, d, 2 * d),
            (&weights.ey, d, d),
            (&weights.mw, d, 2 * d),
            (&weights.my, d, 3 * d),
        ];
        if shapes.iter().any(|(m, r, c)| m.nrows() != *r || m.ncols() != *c) {
            return Err(Error::Config("codec weight shapes do not match d".into()));
        }
        let dag = LatentDag::complete(vec![d; 2 * t])?;
        let layout = Layout::for_dag(&dag);
        let evidence = evidence.into_iter().map(DVector::from_vec).collect();
        Ok(CodecModel {
            params,
            weights,
            evidence,
            dag,
            layout,
            name: "codec".into(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn params(&self) -> &CodecParams {
        &self.params
    }

    pub fn weights(&self) -> &CodecWeights {
        &self.weights
    }

    pub fn frames(&self) -> usize {
        self.params.frames
    }

    pub fn evidence(&self, frame: usize) -> &[f64] {
        self.evidence[frame - 1].as_slice()
    }

    pub fn w_node(frame: usize) -> NodeId {
        NodeId(2 * frame - 1)
    }

    pub fn y_node(frame: usize) -> NodeId {
        NodeId(2 * frame)
    }

    /// Frame index of a node and whether it is the `w` latent.
    pub fn frame_of(node: NodeId) -> (usize, bool) {
        (node.index().div_ceil(2), node.index() % 2 == 1)
    }

    /// Same model with a different trade-off.
    pub fn with_lambda0(&self, lambda0: f64) -> Self {
        let mut m = self.clone();
        m.params.lambda0 = lambda0;
        m
    }

    /// Decoder outputs `x'_0..x'_upto` and activations, `d` entries per frame
    /// (frame 0 is zero).
    fn decode(&self, v: &LatentValues, upto: usize) -> (Vec<f64>, Vec<f64>) {
        let d = self.params.dim;
        let wts = &self.weights;
        let mut recon = vec![0.0; (upto + 1) * d];
        let mut act = vec![0.0; (upto + 1) * d];
        for t in 1..=upto {
            let (done, rest) = recon.split_at_mut(t * d);
            let a = &mut act[t * d..(t + 1) * d];
            mv_add(&wts.p, 0, &done[(t - 1) * d..], a);
            mv_add(&wts.q, 0, v.block(Self::w_node(t)), a);
            a.iter_mut().for_each(|x| *x = x.tanh());
            let x = &mut rest[..d];
            x.copy_from_slice(a);
            mv_add(&wts.u, 0, v.block(Self::y_node(t)), x);
        }
        (recon, act)
    }

    /// Prior means of frame `t` written into `mw` and `my`.
    fn prior_means(&self, v: &LatentValues, t: usize, mw: &mut [f64], my: &mut [f64]) {
        let d = self.params.dim;
        let wts = &self.weights;
        mw.fill(0.0);
        my.fill(0.0);
        if t > 1 {
            let (wp, yp) = (v.block(Self::w_node(t - 1)), v.block(Self::y_node(t - 1)));
            mv_add(&wts.mw, 0, wp, mw);
            mv_add(&wts.mw, d, yp, mw);
            mv_add(&wts.my, 0, wp, my);
            mv_add(&wts.my, d, yp, my);
        }
        mv_add(&wts.my, 2 * d, v.block(Self::w_node(t)), my);
        mw.iter_mut().chain(my.iter_mut()).for_each(|x| *x = x.tanh());
    }

    /// Per-frame rate, distortion and objective in frame order.
    pub fn frame_reports(&self, v: &LatentValues) -> Vec<FrameReport> {
        let mut out = Vec::with_capacity(self.params.frames);
        self.each_frame(v, |frame, rate, distortion, objective| {
            out.push(FrameReport {
                frame,
                rate,
                distortion,
                objective,
            })
        });
        out
    }

    fn each_frame(&self, v: &LatentValues, mut f: impl FnMut(usize, f64, f64, f64)) {
        let t_max = self.params.frames;
        let d = self.params.dim;
        let (recon, _) = self.decode(v, t_max);
        let rho = self.params.precision;
        let offset = 2.0 * d as f64 * self.params.rate_offset;
        let mut mw = vec![0.0; d];
        let mut my = vec![0.0; d];
        for t in 1..=t_max {
            self.prior_means(v, t, &mut mw, &mut my);
            let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            let rate = 0.5 * rho * (sq(v.block(Self::w_node(t)), &mw) + sq(v.block(Self::y_node(t)), &my)) + offset;
            let distortion = sq(self.evidence[t - 1].as_slice(), &recon[t * d..(t + 1) * d]);
            f(t, rate, distortion, -(rate + self.params.lambda0 * distortion));
        }
    }

    /// Reverse-mode gradient of the whole objective.
    fn gradient(&self, v: &LatentValues) -> LatentValues {
        let t_max = self.params.frames;
        let d = self.params.dim;
        let wts = &self.weights;
        let rho = self.params.precision;
        let lam = self.params.lambda0;
        let (recon, act) = self.decode(v, t_max);
        let mut out = LatentValues::zeros(self.layout.clone());

        // Decoder path, last frame first.
        let mut next_ga = vec![0.0; d];
        let mut ga = vec![0.0; d];
        let mut gx = vec![0.0; d];
        for t in (1..=t_max).rev() {
            let x = self.evidence[t - 1].as_slice();
            for k in 0..d {
                gx[k] = -2.0 * lam * (recon[t * d + k] - x[k]);
            }
            if t < t_max {
                mtv_add(&wts.p, 0, &next_ga, &mut gx);
            }
            for k in 0..d {
                let a = act[t * d + k];
                ga[k] = (1.0 - a * a) * gx[k];
            }
            mtv_add(&wts.q, 0, &ga, out.block_mut(Self::w_node(t)));
            mtv_add(&wts.u, 0, &gx, out.block_mut(Self::y_node(t)));
            std::mem::swap(&mut next_ga, &mut ga);
        }

        // Prior path.
        let mut mw = vec![0.0; d];
        let mut my = vec![0.0; d];
        let mut sw = vec![0.0; d];
        let mut sy = vec![0.0; d];
        for t in 1..=t_max {
            let (wn, yn) = (Self::w_node(t), Self::y_node(t));
            self.prior_means(v, t, &mut mw, &mut my);
            for k in 0..d {
                let rw = v.block(wn)[k] - mw[k];
                let ry = v.block(yn)[k] - my[k];
                out.block_mut(wn)[k] -= rho * rw;
                out.block_mut(yn)[k] -= rho * ry;
                sw[k] = (1.0 - mw[k] * mw[k]) * rho * rw;
                sy[k] = (1.0 - my[k] * my[k]) * rho * ry;
            }
            mtv_add(&wts.my, 2 * d, &sy, out.block_mut(wn));
            if t > 1 {
                let (wp, yp) = (Self::w_node(t - 1), Self::y_node(t - 1));
                mtv_add(&wts.mw, 0, &sw, out.block_mut(wp));
                mtv_add(&wts.my, 0, &sy, out.block_mut(wp));
                mtv_add(&wts.mw, d, &sw, out.block_mut(yp));
                mtv_add(&wts.my, d, &sy, out.block_mut(yp));
            }
        }
        out
    }

    /// `∂x'_upto/∂(ancestor)`, holding every other block fixed.
    fn recon_jacobian(&self, act: &[f64], ancestor: NodeId, upto: usize) -> DMatrix<f64> {
        let d = self.params.dim;
        let (u, is_w) = Self::frame_of(ancestor);
        if u > upto {
            return DMatrix::zeros(d, d);
        }
        let mut jac = if is_w {
            scale_rows(self.weights.q.clone(), &act[u * d..(u + 1) * d])
        } else {
            self.weights.u.clone()
        };
        for s in u + 1..=upto {
            jac = scale_rows(&self.weights.p * jac, &act[s * d..(s + 1) * d]);
        }
        jac
    }
}

/// `diag(1 − a²) m`.
fn scale_rows(mut m: DMatrix<f64>, a: &[f64]) -> DMatrix<f64> {
    for (i, &ai) in a.iter().enumerate() {
        m.row_mut(i).scale_mut(1.0 - ai * ai);
    }
    m
}

/// `out += A[:, c0..c0+len(x)] x`.
fn mv_add(a: &DMatrix<f64>, c0: usize, x: &[f64], out: &mut [f64]) {
    let r = a.nrows();
    let s = a.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        let col = &s[(c0 + j) * r..(c0 + j + 1) * r];
        for (o, &aij) in out.iter_mut().zip(col) {
            *o += aij * xj;
        }
    }
}

/// `out += A[:, c0..c0+len(out)]ᵀ x`.
fn mtv_add(a: &DMatrix<f64>, c0: usize, x: &[f64], out: &mut [f64]) {
    let r = a.nrows();
    let s = a.as_slice();
    for (j, o) in out.iter_mut().enumerate() {
        let col = &s[(c0 + j) * r..(c0 + j + 1) * r];
        *o += col.iter().zip(x).map(|(aij, xi)| aij * xi).sum::<f64>();
    }
}

impl LatentModel for CodecModel {
    fn dag(&self) -> &LatentDag {
        &self.dag
    }

    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn objective(&self, values: &LatentValues) -> f64 {
        let mut total = 0.0;
        self.each_frame(values, |_, _, _, l| total += l);
        total
    }

    fn grad(&self, values: &LatentValues, node: NodeId) -> Vec<f64> {
        self.gradient(values).block(node).to_vec()
    }

    fn grad_all(&self, values: &LatentValues) -> LatentValues {
        self.gradient(values)
    }

    fn favi_init(&self, values: &LatentValues, node: NodeId) -> Vec<f64> {
        let d = self.params.dim;
        let wts = &self.weights;
        let (t, is_w) = Self::frame_of(node);
        let (recon, _) = self.decode(values, t - 1);
        let prev = &recon[(t - 1) * d..];
        let x = self.evidence[t - 1].as_slice();
        let mut out = vec![0.0; d];
        if is_w {
            mv_add(&wts.ew, 0, x, &mut out);
            mv_add(&wts.ew, d, prev, &mut out);
            out.iter_mut().for_each(|o| *o = o.tanh());
        } else {
            let mut pred = vec![0.0; d];
            mv_add(&wts.p, 0, prev, &mut pred);
            mv_add(&wts.q, 0, values.block(Self::w_node(t)), &mut pred);
            let resid: Vec<f64> = x.iter().zip(&pred).map(|(a, p)| a - p.tanh()).collect();
            mv_add(&wts.ey, 0, &resid, &mut out);
        }
        out
    }

    fn favi_jacobian(&self, values: &LatentValues, child: NodeId, ancestor: NodeId) -> DMatrix<f64> {
        let d = self.params.dim;
        let wts = &self.weights;
        let (t, child_is_w) = Self::frame_of(child);
        if ancestor.index() >= child.index() || ancestor.is_root() {
            return DMatrix::zeros(d, d);
        }
        let (recon, act) = self.decode(values, t - 1);
        let prev = &recon[(t - 1) * d..];
        let dprev = self.recon_jacobian(&act, ancestor, t - 1);
        let mut out = vec![0.0; d];
        if child_is_w {
            mv_add(&wts.ew, 0, self.evidence[t - 1].as_slice(), &mut out);
            mv_add(&wts.ew, d, prev, &mut out);
            out.iter_mut().for_each(|o| *o = o.tanh());
            scale_rows(wts.ew.columns(d, d) * dprev, &out)
        } else {
            mv_add(&wts.p, 0, prev, &mut out);
            mv_add(&wts.q, 0, values.block(Self::w_node(t)), &mut out);
            out.iter_mut().for_each(|o| *o = o.tanh());
            let inner = if ancestor == Self::w_node(t) {
                wts.q.clone()
            } else {
                &wts.p * dprev
            };
            -(&wts.ey * scale_rows(inner, &out))
        }
    }

    fn name(&self) -> &str {
        &self.name
    }
}
