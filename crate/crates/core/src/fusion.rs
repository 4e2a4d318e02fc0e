//! Gated fusion head.
//!
//! ```text
//! z  = [essay; prompt; rubric; features]     (context and features optional)
//! g  = σ(W_z z)
//! h  = z ⊙ g
//! h' = W_2 ReLU(dropout(W_1 h + b_1)) + b_2
//! ```
//!
//! Dropout is inverted: kept units are scaled by `1 / (1 - rate)` in training
//! and eval mode is the identity. All arithmetic is `f64`.

use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{all_finite, matvec, matvec_t_acc, outer_acc, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    /// Embedding dimension of essay, prompt and rubric vectors.
    pub d: usize,
    /// Engineered-feature dimension; 0 disables features.
    pub d_u: usize,
    /// Whether prompt and rubric embeddings are part of `z`.
    pub use_context: bool,
    pub dropout_rate: f64,
}

impl HeadConfig {
    pub fn z_dim(&self) -> usize {
        self.d * (1 + 2 * usize::from(self.use_context)) + self.d_u
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.z_dim() == 0 {
            return Err(Error::InvalidConfig("head dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig("dropout_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let z = self.z_dim();
        2 * z * z + z + self.d * z + self.d
    }
}

/// Head parameters in one flat buffer laid out as `W_z, W_1, b_1, W_2, b_2`,
/// matrices row-major. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    z_dim: usize,
    d: usize,
    data: Vec<f64>,
}

/// Mutable views into each parameter block.
pub struct ParamsMut<'a> {
    pub w_z: &'a mut [f64],
    pub w1: &'a mut [f64],
    pub b1: &'a mut [f64],
    pub w2: &'a mut [f64],
    pub b2: &'a mut [f64],
}

impl HeadParams {
    pub fn zeros(config: &HeadConfig) -> Self {
        HeadParams { z_dim: config.z_dim(), d: config.d, data: vec![0.0; config.param_count()] }
    }

    pub fn from_vec(config: &HeadConfig, data: Vec<f64>) -> Result<Self> {
        if data.len() != config.param_count() {
            return Err(Error::DimensionMismatch {
                what: "head parameter buffer".into(),
                expected: config.param_count(),
                found: data.len(),
            });
        }
        Ok(HeadParams { z_dim: config.z_dim(), d: config.d, data })
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn matches(&self, config: &HeadConfig) -> bool {
        self.z_dim == config.z_dim() && self.d == config.d
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn offsets(&self) -> [usize; 5] {
        let z = self.z_dim;
        let a = z * z;
        let b = a + z * z;
        let c = b + z;
        let d = c + self.d * z;
        [0, a, b, c, d]
    }

    pub fn w_z(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[0]..o[1]]
    }

    pub fn w1(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[1]..o[2]]
    }

    pub fn b1(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[2]..o[3]]
    }

    pub fn w2(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[3]..o[4]]
    }

    pub fn b2(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[4]..]
    }

    pub fn parts_mut(&mut self) -> ParamsMut<'_> {
        let o = self.offsets();
        let (w_z, rest) = self.data.split_at_mut(o[1]);
        let (w1, rest) = rest.split_at_mut(o[2] - o[1]);
        let (b1, rest) = rest.split_at_mut(o[3] - o[2]);
        let (w2, b2) = rest.split_at_mut(o[4] - o[3]);
        ParamsMut { w_z, w1, b1, w2, b2 }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn add_assign(&mut self, other: &HeadParams) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|x| x * x).sum())
    }
}

/// Xavier-uniform matrices, zero biases.
pub fn init_params(config: &HeadConfig, rng: &mut dyn RngCore) -> HeadParams {
    let mut p = HeadParams::zeros(config);
    let z = config.z_dim() as f64;
    let d = config.d as f64;
    let square = xavier_bound(z, z);
    let proj = xavier_bound(z, d);
    let parts = p.parts_mut();
    for (block, bound) in [(parts.w_z, square), (parts.w1, square), (parts.w2, proj)] {
        let dist = Uniform::new_inclusive(-bound, bound);
        for w in block.iter_mut() {
            *w = dist.sample(rng);
        }
    }
    p
}

pub fn xavier_bound(fan_in: f64, fan_out: f64) -> f64 {
    libm::sqrt(6.0 / (fan_in + fan_out))
}

/// Input vectors for one shot. Prompt and rubric are read only when the
/// head uses context; features only when `d_u > 0`.
#[derive(Debug, Clone, Copy)]
pub struct HeadInput<'a> {
    pub essay: &'a [f64],
    pub prompt: Option<&'a [f64]>,
    pub rubric: Option<&'a [f64]>,
    pub features: Option<&'a [f64]>,
}

impl<'a> HeadInput<'a> {
    pub fn essay_only(essay: &'a [f64]) -> Self {
        HeadInput { essay, prompt: None, rubric: None, features: None }
    }

    /// Concatenated `z` for `config`.
    pub fn concat(&self, config: &HeadConfig) -> Result<Vec<f64>> {
        let mut z = Vec::with_capacity(config.z_dim());
        let mut push = |seg: Option<&[f64]>, len: usize, what: &'static str| -> Result<()> {
            let seg = seg.ok_or(Error::MissingContext(what.into()))?;
            if seg.len() != len {
                return Err(Error::DimensionMismatch { what: what.into(), expected: len, found: seg.len() });
            }
            z.extend_from_slice(seg);
            Ok(())
        };
        push(Some(self.essay), config.d, "essay vector")?;
        if config.use_context {
            push(self.prompt, config.d, "prompt vector")?;
            push(self.rubric, config.d, "rubric vector")?;
        }
        if config.d_u > 0 {
            push(self.features, config.d_u, "feature vector")?;
        }
        if !all_finite(&z) {
            return Err(Error::NonFinite("head input"));
        }
        Ok(z)
    }
}

pub enum Mode<'r> {
    Eval,
    Train(&'r mut dyn RngCore),
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub config: HeadConfig,
    pub z: Vec<f64>,
    /// Pre-gate activations `W_z z`.
    pub pre_gate: Vec<f64>,
    pub gate: Vec<f64>,
    pub gated: Vec<f64>,
    /// `W_1 h + b_1`.
    pub pre_activation: Vec<f64>,
    /// Dropout multipliers (0 or `1/(1-rate)`; all 1 in eval mode).
    pub dropout: Vec<f64>,
    /// ReLU output fed to `W_2`.
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl ForwardTrace {
    /// Recomputes the output from the cached `z` and dropout mask.
    pub fn replay(&self, params: &HeadParams) -> Vec<f64> {
        project(params, &self.z, &self.dropout).output
    }
}

fn project(params: &HeadParams, z: &[f64], dropout: &[f64]) -> ProjectOut {
    let zd = z.len();
    let mut pre_gate = vec![0.0; zd];
    matvec(params.w_z(), z, &mut pre_gate);
    let gate: Vec<f64> = pre_gate.iter().map(|&a| sigmoid(a)).collect();
    let gated: Vec<f64> = z.iter().zip(&gate).map(|(x, g)| x * g).collect();
    let mut pre_activation = vec![0.0; zd];
    matvec(params.w1(), &gated, &mut pre_activation);
    for (s, b) in pre_activation.iter_mut().zip(params.b1()) {
        *s += b;
    }
    let hidden: Vec<f64> = pre_activation
        .iter()
        .zip(dropout)
        .map(|(s, m)| {
            let v = s * m;
            if v > 0.0 { v } else { 0.0 }
        })
        .collect();
    let mut output = vec![0.0; params.d()];
    matvec(params.w2(), &hidden, &mut output);
    for (o, b) in output.iter_mut().zip(params.b2()) {
        *o += b;
    }
    ProjectOut { pre_gate, gate, gated, pre_activation, hidden, output }
}

struct ProjectOut {
    pre_gate: Vec<f64>,
    gate: Vec<f64>,
    gated: Vec<f64>,
    pre_activation: Vec<f64>,
    hidden: Vec<f64>,
    output: Vec<f64>,
}

pub fn forward(
    params: &HeadParams,
    config: &HeadConfig,
    input: &HeadInput<'_>,
    mode: Mode<'_>,
) -> Result<(Vec<f64>, ForwardTrace)> {
    if !params.matches(config) {
        return Err(Error::DimensionMismatch {
            what: "head parameters vs config".into(),
            expected: config.z_dim(),
            found: params.z_dim(),
        });
    }
    let z = input.concat(config)?;
    let dropout = match mode {
        Mode::Eval => vec![1.0; z.len()],
        Mode::Train(rng) => {
            let keep = 1.0 / (1.0 - config.dropout_rate);
            (0..z.len())
                .map(|_| if rng.gen::<f64>() < config.dropout_rate { 0.0 } else { keep })
                .collect()
        }
    };
    let out = project(params, &z, &dropout);
    if !all_finite(&out.output) {
        return Err(Error::NonFinite("head output"));
    }
    let trace = ForwardTrace {
        config: *config,
        z,
        pre_gate: out.pre_gate,
        gate: out.gate,
        gated: out.gated,
        pre_activation: out.pre_activation,
        dropout,
        hidden: out.hidden,
        output: out.output.clone(),
    };
    Ok((out.output, trace))
}

/// Gradients with respect to each input segment.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    pub essay: Vec<f64>,
    pub prompt: Option<Vec<f64>>,
    pub rubric: Option<Vec<f64>>,
    pub features: Option<Vec<f64>>,
}

impl InputGrads {
    fn split(config: &HeadConfig, grad_z: &[f64]) -> Self {
        let d = config.d;
        let mut rest = grad_z;
        let mut take = |n: usize| {
            let (a, b) = rest.split_at(n);
            rest = b;
            a.to_vec()
        };
        let essay = take(d);
        let (prompt, rubric) = if config.use_context {
            (Some(take(d)), Some(take(d)))
        } else {
            (None, None)
        };
        let features = (config.d_u > 0).then(|| take(config.d_u));
        InputGrads { essay, prompt, rubric, features }
    }
}

/// Adds the gradient of `⟨grad_out, h'⟩` w.r.t. every parameter into
/// `grads` and returns the gradient w.r.t. `z`.
pub fn backward_into(
    trace: &ForwardTrace,
    params: &HeadParams,
    grad_out: &[f64],
    grads: &mut HeadParams,
) -> Result<Vec<f64>> {
    let cfg = &trace.config;
    if !params.matches(cfg) || !grads.matches(cfg) || trace.z.len() != cfg.z_dim() {
        return Err(Error::StaleTrace);
    }
    if grad_out.len() != cfg.d {
        return Err(Error::DimensionMismatch { what: "output gradient".into(), expected: cfg.d, found: grad_out.len() });
    }
    let zd = cfg.z_dim();
    let g = grads.parts_mut();
    for (b, go) in g.b2.iter_mut().zip(grad_out) {
        *b += go;
    }
    outer_acc(g.w2, grad_out, &trace.hidden);
    let mut grad_hidden = vec![0.0; zd];
    matvec_t_acc(params.w2(), grad_out, &mut grad_hidden);
    // through ReLU and dropout
    let grad_pre: Vec<f64> = grad_hidden
        .iter()
        .zip(&trace.hidden)
        .zip(&trace.dropout)
        .map(|((gh, h), m)| if *h > 0.0 { gh * m } else { 0.0 })
        .collect();
    for (b, gp) in g.b1.iter_mut().zip(&grad_pre) {
        *b += gp;
    }
    outer_acc(g.w1, &grad_pre, &trace.gated);
    let mut grad_gated = vec![0.0; zd];
    matvec_t_acc(params.w1(), &grad_pre, &mut grad_gated);
    // h = z ⊙ σ(W_z z)
    let mut grad_z: Vec<f64> = grad_gated.iter().zip(&trace.gate).map(|(gh, gt)| gh * gt).collect();
    let grad_a: Vec<f64> = grad_gated
        .iter()
        .zip(&trace.z)
        .zip(&trace.gate)
        .map(|((gh, z), gt)| gh * z * gt * (1.0 - gt))
        .collect();
    outer_acc(g.w_z, &grad_a, &trace.z);
    matvec_t_acc(params.w_z(), &grad_a, &mut grad_z);
    Ok(grad_z)
}

pub fn backward(
    trace: &ForwardTrace,
    params: &HeadParams,
    grad_out: &[f64],
) -> Result<(HeadParams, InputGrads)> {
    let mut grads = HeadParams::zeros(&trace.config);
    let grad_z = backward_into(trace, params, grad_out, &mut grads)?;
    Ok((grads, InputGrads::split(&trace.config, &grad_z)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(d: usize, d_u: usize, ctx: bool, rate: f64) -> HeadConfig {
        HeadConfig { d, d_u, use_context: ctx, dropout_rate: rate }
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    struct Inputs {
        e: Vec<f64>,
        p: Vec<f64>,
        r: Vec<f64>,
        u: Vec<f64>,
    }

    impl Inputs {
        fn new(rng: &mut ChaCha8Rng, c: &HeadConfig) -> Self {
            Inputs {
                e: rand_vec(rng, c.d),
                p: rand_vec(rng, c.d),
                r: rand_vec(rng, c.d),
                u: rand_vec(rng, c.d_u),
            }
        }

        fn head(&self) -> HeadInput<'_> {
            HeadInput { essay: &self.e, prompt: Some(&self.p), rubric: Some(&self.r), features: Some(&self.u) }
        }
    }

    #[test]
    fn z_dim_follows_flags() {
        assert_eq!(cfg(4, 0, false, 0.5).z_dim(), 4);
        assert_eq!(cfg(4, 0, true, 0.5).z_dim(), 12);
        assert_eq!(cfg(4, 4, true, 0.5).z_dim(), 16);
        assert_eq!(cfg(4, 3, false, 0.5).z_dim(), 7);
        assert!(cfg(4, 0, false, 1.0).validate().is_err());
    }

    #[test]
    fn zero_gate_halves_z() {
        let c = cfg(2, 0, true, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = init_params(&c, &mut rng);
        p.parts_mut().w_z.fill(0.0);
        let x = Inputs::new(&mut rng, &c);
        let (_, t) = forward(&p, &c, &x.head(), Mode::Eval).unwrap();
        for (h, z) in t.gated.iter().zip(&t.z) {
            assert_eq!(*h, z / 2.0);
        }
        assert!(t.gate.iter().all(|&g| g == 0.5));
    }

    #[test]
    fn dead_projection_returns_bias() {
        let c = cfg(2, 0, true, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = init_params(&c, &mut rng);
        {
            let parts = p.parts_mut();
            parts.w1.fill(0.0);
            parts.b1.iter_mut().enumerate().for_each(|(i, b)| *b = -(i as f64) * 0.1);
            parts.b2.copy_from_slice(&[0.25, -3.0]);
        }
        let x = Inputs::new(&mut rng, &c);
        let (out, _) = forward(&p, &c, &x.head(), Mode::Train(&mut rng)).unwrap();
        assert_eq!(out, vec![0.25, -3.0]);
    }

    #[test]
    fn forward_matches_straight_line_recomputation() {
        // z_dim = 6, d = 2: context on, no features
        let c = cfg(2, 0, true, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = init_params(&c, &mut rng);
        let mut p = p;
        p.parts_mut().b1.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        p.parts_mut().b2.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        let x = Inputs::new(&mut rng, &c);
        let (out, _) = forward(&p, &c, &x.head(), Mode::Eval).unwrap();
        // independent re-evaluation with explicit index arithmetic
        let z: Vec<f64> = x.e.iter().chain(&x.p).chain(&x.r).copied().collect();
        let n = 6;
        let wz = p.w_z();
        let w1 = p.w1();
        let w2 = p.w2();
        let mut h = [0.0f64; 6];
        for i in 0..n {
            let mut a = 0.0;
            for j in 0..n {
                a += wz[i * n + j] * z[j];
            }
            h[i] = z[i] / (1.0 + (-a).exp());
        }
        let mut r = [0.0f64; 6];
        for i in 0..n {
            let mut s = p.b1()[i];
            for j in 0..n {
                s += w1[i * n + j] * h[j];
            }
            r[i] = s.max(0.0);
        }
        for o in 0..2 {
            let mut v = p.b2()[o];
            for j in 0..n {
                v += w2[o * n + j] * r[j];
            }
            assert!((v - out[o]).abs() <= 1e-14 * (1.0 + v.abs()), "{v} vs {}", out[o]);
        }
    }

    #[test]
    fn trace_replay_is_bit_exact() {
        let c = cfg(3, 2, true, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = init_params(&c, &mut rng);
        let x = Inputs::new(&mut rng, &c);
        let (out, t) = forward(&p, &c, &x.head(), Mode::Train(&mut rng)).unwrap();
        assert_eq!(t.replay(&p), out);
        let (a, _) = forward(&p, &c, &x.head(), Mode::Eval).unwrap();
        let (b, _) = forward(&p, &c, &x.head(), Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = cfg(2, 0, true, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = init_params(&c, &mut rng);
        let e = [1.0, f64::NAN];
        let x = HeadInput { essay: &e, prompt: Some(&[0.0, 0.0]), rubric: Some(&[0.0, 0.0]), features: None };
        assert_eq!(forward(&p, &c, &x, Mode::Eval).unwrap_err(), Error::NonFinite("head input"));
        let x = HeadInput { essay: &[1.0], prompt: None, rubric: None, features: None };
        assert!(matches!(forward(&p, &c, &x, Mode::Eval), Err(Error::DimensionMismatch { .. })));
        let x = HeadInput::essay_only(&[1.0, 2.0]);
        assert!(matches!(forward(&p, &c, &x, Mode::Eval), Err(Error::MissingContext(_))));
        let other = cfg(2, 0, false, 0.0);
        assert!(forward(&p, &other, &x, Mode::Eval).is_err());
    }

    fn scalar_loss(p: &HeadParams, c: &HeadConfig, x: &Inputs, w: &[f64]) -> f64 {
        let (out, _) = forward(p, c, &x.head(), Mode::Eval).unwrap();
        out.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    fn check_fd(c: HeadConfig, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = init_params(&c, &mut rng);
        // push biases so that some ReLUs are active and some are not
        p.parts_mut().b1.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
        let x = Inputs::new(&mut rng, &c);
        let w = rand_vec(&mut rng, c.d);
        let (_, t) = forward(&p, &c, &x.head(), Mode::Eval).unwrap();
        let (grads, ig) = backward(&t, &p, &w).unwrap();
        let eps = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / (a.abs().max(b.abs()).max(1e-6));
        for i in 0..p.as_slice().len() {
            let mut pp = p.clone();
            pp.as_mut_slice()[i] += eps;
            let up = scalar_loss(&pp, &c, &x, &w);
            pp.as_mut_slice()[i] -= 2.0 * eps;
            let dn = scalar_loss(&pp, &c, &x, &w);
            let fd = (up - dn) / (2.0 * eps);
            assert!(rel(fd, grads.as_slice()[i]) <= 1e-4, "param {i}: fd {fd} vs {}", grads.as_slice()[i]);
        }
        let check_seg = |seg: usize, grad: &[f64]| {
            for i in 0..grad.len() {
                let mut xx = Inputs { e: x.e.clone(), p: x.p.clone(), r: x.r.clone(), u: x.u.clone() };
                let v = match seg {
                    0 => &mut xx.e,
                    1 => &mut xx.p,
                    2 => &mut xx.r,
                    _ => &mut xx.u,
                };
                v[i] += eps;
                let up = scalar_loss(&p, &c, &xx, &w);
                let v = match seg {
                    0 => &mut xx.e,
                    1 => &mut xx.p,
                    2 => &mut xx.r,
                    _ => &mut xx.u,
                };
                v[i] -= 2.0 * eps;
                let dn = scalar_loss(&p, &c, &xx, &w);
                let fd = (up - dn) / (2.0 * eps);
                assert!(rel(fd, grad[i]) <= 1e-4, "segment {seg} idx {i}: fd {fd} vs {}", grad[i]);
            }
        };
        check_seg(0, &ig.essay);
        if c.use_context {
            check_seg(1, ig.prompt.as_ref().unwrap());
            check_seg(2, ig.rubric.as_ref().unwrap());
        }
        if c.d_u > 0 {
            check_seg(3, ig.features.as_ref().unwrap());
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_fd(cfg(2, 0, true, 0.0), 10);
        check_fd(cfg(4, 4, true, 0.0), 11);
        check_fd(cfg(3, 2, false, 0.0), 12);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let c = cfg(3, 1, true, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = init_params(&c, &mut rng);
        let x = Inputs::new(&mut rng, &c);
        let (_, t) = forward(&p, &c, &x.head(), Mode::Train(&mut rng)).unwrap();
        let (g, ig) = backward(&t, &p, &[0.0; 3]).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
        assert!(ig.essay.iter().chain(ig.features.as_ref().unwrap()).all(|&v| v == 0.0));
    }

    #[test]
    fn gate_weight_gradient_symbolic() {
        // size 3, context off: grad W_z = (g(1-g) ⊙ z ⊙ grad_h) zᵀ
        let c = cfg(3, 0, false, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = init_params(&c, &mut rng);
        let e = rand_vec(&mut rng, 3);
        let (_, t) = forward(&p, &c, &HeadInput::essay_only(&e), Mode::Eval).unwrap();
        let up = rand_vec(&mut rng, 3);
        let (g, _) = backward(&t, &p, &up).unwrap();
        // upstream at h, derived by hand: W_1ᵀ (ReLU' ⊙ W_2ᵀ up)
        let mut gh = [0.0f64; 3];
        for j in 0..3 {
            for i in 0..3 {
                let mut back = 0.0;
                for o in 0..3 {
                    back += p.w2()[o * 3 + i] * up[o];
                }
                if t.hidden[i] > 0.0 {
                    gh[j] += p.w1()[i * 3 + j] * back;
                }
            }
        }
        for i in 0..3 {
            let gi = t.gate[i];
            for j in 0..3 {
                let expect = gi * (1.0 - gi) * t.z[i] * gh[i] * t.z[j];
                assert!((g.w_z()[i * 3 + j] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn stale_trace_rejected() {
        let c = cfg(2, 0, false, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = init_params(&c, &mut rng);
        let (_, t) = forward(&p, &c, &HeadInput::essay_only(&[0.5, 0.1]), Mode::Eval).unwrap();
        let other = init_params(&cfg(2, 0, true, 0.0), &mut rng);
        assert_eq!(backward(&t, &other, &[1.0, 1.0]).unwrap_err(), Error::StaleTrace);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let c = cfg(4, 4, true, 0.5);
        let a = init_params(&c, &mut ChaCha8Rng::seed_from_u64(9));
        let b = init_params(&c, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let bound = xavier_bound(16.0, 16.0);
        assert!(a.w1().iter().all(|w| w.abs() <= bound));
        assert!(a.w2().iter().all(|w| w.abs() <= xavier_bound(16.0, 4.0)));
        assert!(a.b1().iter().chain(a.b2()).all(|&b| b == 0.0));
    }

    #[test]
    fn init_variance_matches_uniform_moment() {
        // W_1 at z_dim = 320 holds 102 400 draws
        let c = cfg(320, 0, false, 0.5);
        let p = init_params(&c, &mut ChaCha8Rng::seed_from_u64(10));
        let w = p.w1();
        let n = w.len() as f64;
        assert!(n >= 1e5);
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let bound = xavier_bound(320.0, 320.0);
        let expect = bound * bound / 3.0;
        assert!((var - expect).abs() / expect < 0.05, "{var} vs {expect}");
    }

    #[test]
    fn dropout_expectation_converges_to_eval() {
        let c = cfg(3, 0, true, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = init_params(&c, &mut rng);
        let x = Inputs::new(&mut rng, &c);
        let (eval, _) = forward(&p, &c, &x.head(), Mode::Eval).unwrap();
        let n = 20_000;
        let mut acc = [0.0; 3];
        for _ in 0..n {
            let (o, _) = forward(&p, &c, &x.head(), Mode::Train(&mut rng)).unwrap();
            for (a, v) in acc.iter_mut().zip(&o) {
                *a += v;
            }
        }
        for (a, e) in acc.iter().zip(&eval) {
            let mean = a / n as f64;
            assert!((mean - e).abs() / e.abs().max(1e-3) <= 0.02, "{mean} vs {e}");
        }
    }
}
