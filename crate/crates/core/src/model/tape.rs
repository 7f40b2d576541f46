//! A small tensor-level reverse-mode differentiation tape.
//!
//! Each forward computation records nodes on a [`Graph`]; [`Graph::backward`]
//! walks them in reverse and returns the gradients of a scalar node with
//! respect to every parameter leaf. Parameter leaves are deduplicated by name,
//! so a parameter used twice (shared weights) accumulates both contributions.

use std::collections::HashMap;

use super::params::{Gradients, ParameterSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    c_in: usize,
    d: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kd: usize,
    kh: usize,
    kw: usize,
    pd: usize,
    ph: usize,
    pw: usize,
    stride: usize,
    od: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    fn new(
        c_in: usize,
        (d, h, w): (usize, usize, usize),
        c_out: usize,
        (kd, kh, kw): (usize, usize, usize),
        (pd, ph, pw): (usize, usize, usize),
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 || d + 2 * pd < kd || h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::invalid("convolution kernel larger than padded input"));
        }
        Ok(Self {
            c_in,
            d,
            h,
            w,
            c_out,
            kd,
            kh,
            kw,
            pd,
            ph,
            pw,
            stride,
            od: d + 2 * pd - kd + 1,
            oh: (h + 2 * ph - kh) / stride + 1,
            ow: (w + 2 * pw - kw) / stride + 1,
        })
    }

    /// Output x range `[lo, hi)` whose input column `ox*stride + kx - pw` is in bounds.
    #[inline]
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if kx >= self.pw { 0 } else { (self.pw - kx).div_ceil(s) };
        let top = self.w + self.pw;
        let hi = if top <= kx {
            0
        } else {
            ((top - kx - 1) / s + 1).min(self.ow)
        };
        (lo, hi.max(lo))
    }

    fn forward(&self, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
        let (od, oh, ow) = (self.od, self.oh, self.ow);
        let s = self.stride;
        for o in 0..self.c_out {
            out[o * od * oh * ow..(o + 1) * od * oh * ow].fill(b[o]);
        }
        for o in 0..self.c_out {
            for c in 0..self.c_in {
                for kz in 0..self.kd {
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            let wv = w[(((o * self.c_in + c) * self.kd + kz) * self.kh + ky) * self.kw + kx];
                            let (lo, hi) = self.ox_range(kx);
                            for oz in 0..od {
                                let iz = oz + kz;
                                if iz < self.pd || iz - self.pd >= self.d {
                                    continue;
                                }
                                let iz = iz - self.pd;
                                for oy in 0..oh {
                                    let iy = oy * s + ky;
                                    if iy < self.ph || iy - self.ph >= self.h {
                                        continue;
                                    }
                                    let iy = iy - self.ph;
                                    let orow = ((o * od + oz) * oh + oy) * ow;
                                    let irow = ((c * self.d + iz) * self.h + iy) * self.w;
                                    let out_row = &mut out[orow + lo..orow + hi];
                                    if s == 1 {
                                        let start = irow + lo + kx - self.pw;
                                        let in_row = &x[start..start + (hi - lo)];
                                        for (y, xv) in out_row.iter_mut().zip(in_row) {
                                            *y += wv * xv;
                                        }
                                    } else {
                                        for (i, y) in out_row.iter_mut().enumerate() {
                                            *y += wv * x[irow + (lo + i) * s + kx - self.pw];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward(
        &self,
        x: &[f64],
        w: &[f64],
        gout: &[f64],
        mut dx: Option<&mut [f64]>,
        mut dw: Option<&mut [f64]>,
        db: Option<&mut [f64]>,
    ) {
        let (od, oh, ow) = (self.od, self.oh, self.ow);
        let s = self.stride;
        if let Some(db) = db {
            for o in 0..self.c_out {
                db[o] += gout[o * od * oh * ow..(o + 1) * od * oh * ow].iter().sum::<f64>();
            }
        }
        for o in 0..self.c_out {
            for c in 0..self.c_in {
                for kz in 0..self.kd {
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            let widx = (((o * self.c_in + c) * self.kd + kz) * self.kh + ky) * self.kw + kx;
                            let wv = w[widx];
                            let (lo, hi) = self.ox_range(kx);
                            let mut gw = 0.0;
                            for oz in 0..od {
                                let iz = oz + kz;
                                if iz < self.pd || iz - self.pd >= self.d {
                                    continue;
                                }
                                let iz = iz - self.pd;
                                for oy in 0..oh {
                                    let iy = oy * s + ky;
                                    if iy < self.ph || iy - self.ph >= self.h {
                                        continue;
                                    }
                                    let iy = iy - self.ph;
                                    let orow = ((o * od + oz) * oh + oy) * ow;
                                    let irow = ((c * self.d + iz) * self.h + iy) * self.w;
                                    let g_row = &gout[orow + lo..orow + hi];
                                    if s == 1 {
                                        let start = irow + lo + kx - self.pw;
                                        let in_row = &x[start..start + (hi - lo)];
                                        gw += g_row.iter().zip(in_row).map(|(g, v)| g * v).sum::<f64>();
                                        if let Some(dx) = dx.as_deref_mut() {
                                            let dx_row = &mut dx[start..start + (hi - lo)];
                                            for (d, g) in dx_row.iter_mut().zip(g_row) {
                                                *d += wv * g;
                                            }
                                        }
                                    } else {
                                        for (i, g) in g_row.iter().enumerate() {
                                            let ix = irow + (lo + i) * s + kx - self.pw;
                                            gw += g * x[ix];
                                            if let Some(dx) = dx.as_deref_mut() {
                                                dx[ix] += wv * g;
                                            }
                                        }
                                    }
                                }
                            }
                            if let Some(dw) = dw.as_deref_mut() {
                                dw[widx] += gw;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    MeanDepth {
        x: Var,
        depth: usize,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Concat(Vec<Var>),
    Reshape(Var),
    Softmax(Var),
    KlLoss {
        pred: Var,
        truth: Vec<f64>,
        eps: f64,
    },
    WeightedSquaredError {
        x: Var,
        target: Vec<f64>,
        weights: Vec<f64>,
    },
    SquashControls {
        x: Var,
        speed_scale: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input (no gradient flows into it).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf bound to the named parameter. Repeated calls return the same node.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<Var> {
        if let Some(v) = self.param_index.get(name) {
            return Ok(*v);
        }
        let value = params.get(name)?.clone();
        let v = self.push(value, Op::Leaf, true);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        Ok(v)
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::invalid(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect());
        let ng = self.needs(a);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_parts(self.shape(a).to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_parts(self.shape(a).to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| k * x, Op::Scale(a, k))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// `w·x + b` for a vector `x` of length n and `w` of shape [m, n].
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let n = self.value(x).len();
        if ws.len() != 2 || ws[1] != n || bs != [ws[0]] {
            return Err(Error::invalid(format!("linear shapes: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let m = ws[0];
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let out: Vec<f64> = (0..m)
            .map(|i| bv[i] + wv[i * n..(i + 1) * n].iter().zip(xv).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![m], out), Op::Linear { x, w, b }, ng))
    }

    /// 2D convolution of `x` [C, H, W] with `w` [O, C, K, K], zero padding `pad`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || self.shape(b) != [ws[0]] {
            return Err(Error::invalid(format!("conv2d shapes: x {xs:?}, w {ws:?}")));
        }
        let geom = ConvGeom::new(
            xs[0],
            (1, xs[1], xs[2]),
            ws[0],
            (1, ws[2], ws[3]),
            (0, pad, pad),
            stride,
        )?;
        let out_shape = vec![ws[0], geom.oh, geom.ow];
        self.conv(x, w, b, geom, out_shape)
    }

    /// 3D convolution (stride 1) of `x` [C, D, H, W] with `w` [O, C, KD, KH, KW].
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, pad: (usize, usize, usize)) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 5 || ws[1] != xs[0] || self.shape(b) != [ws[0]] {
            return Err(Error::invalid(format!("conv3d shapes: x {xs:?}, w {ws:?}")));
        }
        let geom = ConvGeom::new(xs[0], (xs[1], xs[2], xs[3]), ws[0], (ws[2], ws[3], ws[4]), pad, 1)?;
        let out_shape = vec![ws[0], geom.od, geom.oh, geom.ow];
        self.conv(x, w, b, geom, out_shape)
    }

    fn conv(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom, out_shape: Vec<usize>) -> Result<Var> {
        let mut out = vec![0.0; out_shape.iter().product()];
        geom.forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &mut out,
        );
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Conv { x, w, b, geom }, ng))
    }

    /// Mean over the depth axis: [C, D, H, W] → [C, H, W].
    pub fn mean_depth(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::invalid(format!("mean_depth expects rank 4, got {s:?}")));
        }
        let (c, d, hw) = (s[0], s[1], s[2] * s[3]);
        let xv = self.value(x).data();
        let mut out = vec![0.0; c * hw];
        for ci in 0..c {
            for di in 0..d {
                let src = &xv[(ci * d + di) * hw..(ci * d + di + 1) * hw];
                out[ci * hw..(ci + 1) * hw]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(o, v)| *o += v / d as f64);
            }
        }
        let ng = self.needs(x);
        Ok(self.push(
            Tensor::from_parts(vec![c, s[2], s[3]], out),
            Op::MeanDepth { x, depth: d },
            ng,
        ))
    }

    /// Nearest-neighbour upsampling of [C, H, W] by an integer factor.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || factor == 0 {
            return Err(Error::invalid(format!("upsample expects rank 3, got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h * factor, w * factor);
        let xv = self.value(x).data();
        let mut out = vec![0.0; c * oh * ow];
        for ci in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[(ci * oh + y) * ow + xx] = xv[(ci * h + y / factor) * w + xx / factor];
                }
            }
        }
        let ng = self.needs(x);
        Ok(self.push(Tensor::from_parts(vec![c, oh, ow], out), Op::Upsample { x, factor }, ng))
    }

    /// Concatenation along the leading axis; trailing dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            let s = self.shape(*p);
            if s.len() != first.len() || s[1..] != first[1..] {
                return Err(Error::invalid(format!("concat shapes {first:?} vs {s:?}")));
            }
            lead += s[0];
            data.extend_from_slice(self.value(*p).data());
        }
        let mut shape = first;
        shape[0] = lead;
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat(parts.to_vec()), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::invalid(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape(x)
            )));
        }
        let out = Tensor::from_parts(shape.to_vec(), self.value(x).data().to_vec());
        let ng = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    /// Softmax over all elements.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = t.data().iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let out = Tensor::from_parts(t.shape().to_vec(), e.into_iter().map(|v| v / z).collect());
        let ng = self.needs(x);
        self.push(out, Op::Softmax(x), ng)
    }

    /// `Σ_i y_i·log(ε + y_i/(ε + p_i))` against a constant target distribution.
    pub fn kl_loss(&mut self, pred: Var, truth: &[f64], eps: f64) -> Result<Var> {
        if self.value(pred).len() != truth.len() {
            return Err(Error::invalid("kl_loss: prediction and truth sizes differ"));
        }
        let v = crate::metrics::kl_divergence_values(truth, self.value(pred).data(), eps);
        let ng = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(v),
            Op::KlLoss {
                pred,
                truth: truth.to_vec(),
                eps,
            },
            ng,
        ))
    }

    /// `Σ_k w_k (x_k − t_k)² / Σ_k w_k`.
    pub fn weighted_squared_error(&mut self, x: Var, target: &[f64], weights: &[f64]) -> Result<Var> {
        let xv = self.value(x).data();
        if xv.len() != target.len() || xv.len() != weights.len() {
            return Err(Error::invalid("weighted_squared_error: size mismatch"));
        }
        let total: f64 = weights.iter().sum();
        let v = xv
            .iter()
            .zip(target)
            .zip(weights)
            .map(|((a, t), w)| w * (a - t) * (a - t))
            .sum::<f64>()
            / total;
        let ng = self.needs(x);
        Ok(self.push(
            Tensor::scalar(v),
            Op::WeightedSquaredError {
                x,
                target: target.to_vec(),
                weights: weights.to_vec(),
            },
            ng,
        ))
    }

    /// Maps four raw outputs to (tanh, sigmoid, sigmoid, speed_scale·softplus).
    pub fn squash_controls(&mut self, x: Var, speed_scale: f64) -> Result<Var> {
        let z = self.value(x).data();
        if z.len() != 4 {
            return Err(Error::invalid("squash_controls expects 4 values"));
        }
        let out = vec![z[0].tanh(), sigmoid(z[1]), sigmoid(z[2]), speed_scale * softplus(z[3])];
        let ng = self.needs(x);
        Ok(self.push(
            Tensor::from_parts(vec![4], out),
            Op::SquashControls { x, speed_scale },
            ng,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::invalid("backward needs a scalar loss"));
        }
        if !lv.item().is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut out = Gradients::default();
        for (name, v) in &self.params {
            if let Some(g) = grads.get(v.0).and_then(|g| g.as_ref()) {
                out.insert(name.clone(), g.clone());
            }
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::OneMinus(a) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g)),
            Op::Scale(a, k) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += k * g)),
            Op::Tanh(a) => acc(*a, &mut |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * (1.0 - out[i] * out[i]);
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            }),
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let n = xv.len();
                acc(*x, &mut |d| {
                    for (i, gi) in g.iter().enumerate() {
                        d.iter_mut()
                            .zip(&wv[i * n..(i + 1) * n])
                            .for_each(|(d, w)| *d += gi * w);
                    }
                });
                acc(*w, &mut |d| {
                    for (i, gi) in g.iter().enumerate() {
                        d[i * n..(i + 1) * n].iter_mut().zip(xv).for_each(|(d, x)| *d += gi * x);
                    }
                });
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Conv { x, w, b, geom } => {
                // split borrows: take the slots out, run the kernel, put them back
                let mut take = |v: Var| -> Option<Vec<f64>> {
                    self.nodes[v.0].needs_grad.then(|| {
                        grads[v.0]
                            .take()
                            .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()])
                    })
                };
                let (mut dx, mut dw, mut db) = (take(*x), take(*w), take(*b));
                geom.backward(
                    val(*x),
                    val(*w),
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (v, slot) in [(*x, dx), (*w, dw), (*b, db)] {
                    if slot.is_some() {
                        grads[v.0] = slot;
                    }
                }
            }
            Op::MeanDepth { x, depth } => {
                let hw_c = out.len();
                let s = self.nodes[x.0].value.shape();
                let hw = s[2] * s[3];
                acc(*x, &mut |d| {
                    for (idx, gv) in g.iter().enumerate().take(hw_c) {
                        let (ci, p) = (idx / hw, idx % hw);
                        for di in 0..*depth {
                            d[(ci * depth + di) * hw + p] += gv / *depth as f64;
                        }
                    }
                });
            }
            Op::Upsample { x, factor } => {
                let s = self.nodes[x.0].value.shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h * factor, w * factor);
                acc(*x, &mut |d| {
                    for ci in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                d[(ci * h + y / factor) * w + xx / factor] += g[(ci * oh + y) * ow + xx];
                            }
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.len();
                    acc(*p, &mut |d| {
                        d.iter_mut().zip(&g[off..off + n]).for_each(|(d, g)| *d += g)
                    });
                    off += n;
                }
            }
            Op::Reshape(x) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g)),
            Op::Softmax(x) => {
                let dot: f64 = g.iter().zip(out).map(|(g, p)| g * p).sum();
                acc(*x, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += out[i] * (g[i] - dot);
                    }
                });
            }
            Op::KlLoss { pred, truth, eps } => {
                let pv = val(*pred);
                acc(*pred, &mut |d| {
                    for i in 0..d.len() {
                        let y = truth[i];
                        if y == 0.0 {
                            continue;
                        }
                        let q = eps + pv[i];
                        let r = y / q;
                        d[i] += g[0] * y * (-r / q) / (eps + r);
                    }
                });
            }
            Op::WeightedSquaredError { x, target, weights } => {
                let xv = val(*x);
                let total: f64 = weights.iter().sum();
                acc(*x, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[0] * 2.0 * weights[i] * (xv[i] - target[i]) / total;
                    }
                });
            }
            Op::SquashControls { x, speed_scale } => {
                let z = val(*x);
                acc(*x, &mut |d| {
                    d[0] += g[0] * (1.0 - out[0] * out[0]);
                    d[1] += g[1] * out[1] * (1.0 - out[1]);
                    d[2] += g[2] * out[2] * (1.0 - out[2]);
                    d[3] += g[3] * speed_scale * sigmoid(z[3]);
                });
            }
        }
    }
}
