//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends one node holding its forward value. `backward` walks the
//! tape in reverse and returns a gradient for each node that transitively
//! depends on a trainable leaf; nodes outside that cone are skipped, so
//! frozen networks cost no weight-gradient work.

use crate::error::{NnError, Result};
use crate::kernels::{self, ConvGeom, LerpTap};
use crate::scalar::{gemm, gemm_ld, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Scale(Var, S),
    LeakyRelu(Var, S),
    Sigmoid(Var),
    UpsampleNearest2x(Var),
    UpsampleBilinear {
        x: Var,
        ty: Vec<LerpTap<S>>,
        tx: Vec<LerpTap<S>>,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<S>,
    },
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    ConcatChannels(Var, Var),
    SpatialMean(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Nll {
        logp: Var,
        labels: Vec<usize>,
    },
    BceWithLogits {
        logits: Var,
        target: S,
    },
    SquaredError {
        x: Var,
        target: S,
    },
    Mean(Var),
    WeightedSum(Vec<(Var, S)>),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by `Var`.
pub struct Grads<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(NnError::Shape(msg))
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> S {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let [n, c, h, wd] = self.value(x).dims4()?;
        let [o, ci, k, k2] = self.value(w).dims4()?;
        if ci != c || k != k2 {
            return shape_err(format!(
                "conv2d: input {:?} vs weight {:?}",
                self.value(x).shape(),
                self.value(w).shape()
            ));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [o] {
                return shape_err(format!("conv2d: bias {:?} for {o} outputs", self.value(b).shape()));
            }
        }
        let geom = ConvGeom::new(c, h, wd, k, stride, pad)
            .ok_or_else(|| NnError::Shape(format!("conv2d: kernel {k} too large for {h}x{wd}")))?;
        let (rows, ncol) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![S::zero(); n * o * ncol];
        let band = kernels::band_rows(&geom);
        let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![S::zero(); rows * band * geom.wo] };
        {
            let xv = self.value(x);
            let wv = self.value(w).data();
            for i in 0..n {
                let xi = xv.item(i);
                let oi = &mut out[i * o * ncol..(i + 1) * o * ncol];
                if geom.is_pointwise() {
                    gemm(o, rows, ncol, wv, false, xi, false, oi, false);
                } else {
                    for oy0 in (0..geom.ho).step_by(band) {
                        let oy1 = (oy0 + band).min(geom.ho);
                        let bw = (oy1 - oy0) * geom.wo;
                        kernels::im2col_band(xi, &geom, oy0, oy1, &mut cols);
                        gemm_ld(o, rows, bw, wv, rows, false, &cols, bw, false, &mut oi[oy0 * geom.wo..], ncol, false);
                    }
                }
                if let Some(b) = b {
                    for (oc, &bv) in self.value(b).data().iter().enumerate() {
                        for v in &mut oi[oc * ncol..(oc + 1) * ncol] {
                            *v += bv;
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::new(vec![n, o, geom.ho, geom.wo], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, rg))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return shape_err(format!("linear: input {xs:?} vs weight {ws:?}"));
        }
        let (n, f, o) = (xs[0], xs[1], ws[0]);
        let mut out = vec![S::zero(); n * o];
        gemm(n, f, o, self.value(x).data(), false, self.value(w).data(), true, &mut out, false);
        if let Some(b) = b {
            let bv = self.value(b).data();
            if bv.len() != o {
                return shape_err(format!("linear: bias len {} for {o} outputs", bv.len()));
            }
            for row in out.chunks_mut(o) {
                for (v, &bb) in row.iter_mut().zip(bv) {
                    *v += bb;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(vec![n, o], out)?, Op::Linear { x, w, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Var {
        let v = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Var {
        let v = self.value(a).map(|x| if x > S::zero() { x } else { x * slope });
        let rg = self.rg(a);
        self.push(v, Op::LeakyRelu(a, slope), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, S::zero())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn upsample_nearest2x(&mut self, a: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(a).dims4()?;
        let src = self.value(a).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![S::zero(); n * c * h2 * w2];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let d = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
            for y in 0..h2 {
                for x in 0..w2 {
                    d[y * w2 + x] = s[(y / 2) * w + x / 2];
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![n, c, h2, w2], out)?, Op::UpsampleNearest2x(a), rg))
    }

    pub fn upsample_bilinear(&mut self, a: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(a).dims4()?;
        let ty = kernels::bilinear_taps::<S>(h, out_h);
        let tx = kernels::bilinear_taps::<S>(w, out_w);
        let mut out = vec![S::zero(); n * c * out_h * out_w];
        let src = self.value(a).data();
        for p in 0..n * c {
            kernels::bilinear_forward(
                &src[p * h * w..(p + 1) * h * w],
                w,
                &ty,
                &tx,
                &mut out[p * out_h * out_w..(p + 1) * out_h * out_w],
            );
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![n, c, out_h, out_w], out)?,
            Op::UpsampleBilinear { x: a, ty, tx },
            rg,
        ))
    }

    /// Per-sample, per-channel normalization to zero mean and unit variance.
    pub fn instance_norm(&mut self, a: Var, eps: S) -> Result<Var> {
        let [n, c, h, w] = self.value(a).dims4()?;
        let hw = h * w;
        let count = S::from_usize(hw).unwrap();
        let mut out = self.value(a).data().to_vec();
        let mut inv_std = Vec::with_capacity(n * c);
        for plane in out.chunks_mut(hw) {
            let mean = plane.iter().copied().sum::<S>() / count;
            let var = plane.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / count;
            let is = S::one() / (var + eps).sqrt();
            for x in plane.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![n, c, h, w], out)?, Op::InstanceNorm { x: a, inv_std }, rg))
    }

    /// `x * (1 + gamma) + beta` with `gamma`, `beta` of shape `[N, C]`.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if self.value(gamma).shape() != [n, c] || self.value(beta).shape() != [n, c] {
            return shape_err(format!(
                "channel_affine: features {:?}, gamma {:?}, beta {:?}",
                self.value(x).shape(),
                self.value(gamma).shape(),
                self.value(beta).shape()
            ));
        }
        let hw = h * w;
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = self.value(x).data().to_vec();
        for (p, plane) in out.chunks_mut(hw).enumerate() {
            let scale = S::one() + g[p];
            for v in plane.iter_mut() {
                *v = *v * scale + b[p];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(Tensor::new(vec![n, c, h, w], out)?, Op::ChannelAffine { x, gamma, beta }, rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = self.value(a).dims4()?;
        let [nb, cb, hb, wb] = self.value(b).dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return shape_err(format!(
                "concat_channels: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        let mut out = Vec::with_capacity(n * (ca + cb) * h * w);
        for i in 0..n {
            out.extend_from_slice(self.value(a).item(i));
            out.extend_from_slice(self.value(b).item(i));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, ca + cb, h, w], out)?, Op::ConcatChannels(a, b), rg))
    }

    /// `[N, C, H, W] -> [N, C]`.
    pub fn spatial_mean(&mut self, a: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(a).dims4()?;
        let count = S::from_usize(h * w).unwrap();
        let out: Vec<S> = self
            .value(a)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<S>() / count)
            .collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![n, c], out)?, Op::SpatialMean(a), rg))
    }

    fn channel_softmax_values(&self, a: Var, log: bool) -> Result<Tensor<S>> {
        let [n, c, h, w] = self.value(a).dims4()?;
        let hw = h * w;
        let src = self.value(a).data();
        let mut out = vec![S::zero(); src.len()];
        for i in 0..n {
            let base = i * c * hw;
            for p in 0..hw {
                let mut m = S::neg_infinity();
                for ch in 0..c {
                    m = m.max(src[base + ch * hw + p]);
                }
                let mut z = S::zero();
                for ch in 0..c {
                    z += (src[base + ch * hw + p] - m).exp();
                }
                let lz = z.ln() + m;
                for ch in 0..c {
                    let idx = base + ch * hw + p;
                    out[idx] = if log { src[idx] - lz } else { (src[idx] - lz).exp() };
                }
            }
        }
        Tensor::new(vec![n, c, h, w], out)
    }

    /// Softmax over the channel axis of an NCHW tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.channel_softmax_values(a, false)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::Softmax(a), rg))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.channel_softmax_values(a, true)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::LogSoftmax(a), rg))
    }

    /// Pixel-mean negative log-likelihood of `labels` (NHW order) under the
    /// channel log-probabilities `logp`.
    pub fn nll(&mut self, logp: Var, labels: &[usize]) -> Result<Var> {
        let [n, c, h, w] = self.value(logp).dims4()?;
        let hw = h * w;
        if labels.len() != n * hw {
            return shape_err(format!("nll: {} labels for {n}x{h}x{w} pixels", labels.len()));
        }
        let lp = self.value(logp).data();
        let mut total = S::zero();
        for (idx, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(NnError::LabelOutOfRange { label: y, classes: c });
            }
            let (i, p) = (idx / hw, idx % hw);
            total -= lp[i * c * hw + y * hw + p];
        }
        let v = total / S::from_usize(labels.len()).unwrap();
        let rg = self.rg(logp);
        Ok(self.push(
            Tensor::scalar(v),
            Op::Nll {
                logp,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against a constant target,
    /// evaluated in the overflow-free softplus form.
    pub fn bce_with_logits(&mut self, logits: Var, target: S) -> Var {
        let vals = self.value(logits).data();
        let mut total = S::zero();
        for &z in vals {
            total += z.max(S::zero()) - z * target + (-z.abs()).exp().ln_1p();
        }
        let v = total / S::from_usize(vals.len()).unwrap();
        let rg = self.rg(logits);
        self.push(Tensor::scalar(v), Op::BceWithLogits { logits, target }, rg)
    }

    /// Mean of `(x - target)^2`.
    pub fn squared_error(&mut self, x: Var, target: S) -> Var {
        let vals = self.value(x).data();
        let total: S = vals.iter().map(|&v| (v - target) * (v - target)).sum();
        let v = total / S::from_usize(vals.len()).unwrap();
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::SquaredError { x, target }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a).mean();
        let rg = self.rg(a);
        self.push(Tensor::scalar(v), Op::Mean(a), rg)
    }

    /// `sum_i w_i * v_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, S)]) -> Result<Var> {
        let mut total = S::zero();
        for &(v, w) in terms {
            if self.value(v).numel() != 1 {
                return shape_err(format!("weighted_sum: non-scalar term {:?}", self.value(v).shape()));
            }
            total += self.scalar(v) * w;
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads<S> {
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Grads { grads };
        }
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), S::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn accum(&self, grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn zeros_like(&self, v: Var) -> Tensor<S> {
        Tensor::zeros(self.value(v).shape())
    }

    fn propagate(&self, idx: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (x, w) = (*x, *w);
                let n = self.value(x).shape()[0];
                let o = self.value(w).shape()[0];
                let (rows, ncol) = (geom.col_rows(), geom.col_cols());
                let need_x = self.rg(x);
                let need_w = self.rg(w);
                let mut dx = need_x.then(|| self.zeros_like(x));
                let mut dw = need_w.then(|| self.zeros_like(w));
                let band = kernels::band_rows(geom);
                let buf = if geom.is_pointwise() { 0 } else { rows * band * geom.wo };
                let mut cols = vec![S::zero(); if need_w { buf } else { 0 }];
                let mut cols_t = cols.clone();
                let mut dcols = vec![S::zero(); if need_x { buf } else { 0 }];
                let wv = self.value(w).data();
                for i in 0..n {
                    let gi = &gd[i * o * ncol..(i + 1) * o * ncol];
                    let xi = self.value(x).item(i);
                    let per = xi.len();
                    if geom.is_pointwise() {
                        if let Some(dw) = dw.as_mut() {
                            gemm(o, ncol, rows, gi, false, xi, true, dw.data_mut(), true);
                        }
                        if let Some(dx) = dx.as_mut() {
                            let dxi = &mut dx.data_mut()[i * per..(i + 1) * per];
                            gemm(rows, o, ncol, wv, true, gi, false, dxi, true);
                        }
                        continue;
                    }
                    for oy0 in (0..geom.ho).step_by(band) {
                        let oy1 = (oy0 + band).min(geom.ho);
                        let bw = (oy1 - oy0) * geom.wo;
                        let gband = &gi[oy0 * geom.wo..];
                        if let Some(dw) = dw.as_mut() {
                            // transposing first keeps both gemm operands unit-stride
                            kernels::im2col_band(xi, geom, oy0, oy1, &mut cols);
                            kernels::transpose(&cols[..rows * bw], rows, bw, &mut cols_t);
                            gemm_ld(o, bw, rows, gband, ncol, false, &cols_t, rows, false, dw.data_mut(), rows, true);
                        }
                        if let Some(dx) = dx.as_mut() {
                            let dxi = &mut dx.data_mut()[i * per..(i + 1) * per];
                            gemm_ld(rows, o, bw, wv, rows, true, gband, ncol, false, &mut dcols, bw, false);
                            kernels::col2im_band(&dcols, geom, oy0, oy1, dxi);
                        }
                    }
                }
                if let Some(b) = *b {
                    if self.rg(b) {
                        let mut db = vec![S::zero(); o];
                        for i in 0..n {
                            for (oc, acc) in db.iter_mut().enumerate() {
                                let base = (i * o + oc) * ncol;
                                *acc += gd[base..base + ncol].iter().copied().sum::<S>();
                            }
                        }
                        self.accum(grads, b, Tensor::new(vec![o], db).unwrap());
                    }
                }
                if let Some(dx) = dx {
                    self.accum(grads, x, dx);
                }
                if let Some(dw) = dw {
                    self.accum(grads, w, dw);
                }
            }
            Op::Linear { x, w, b } => {
                let (x, w) = (*x, *w);
                let xs = self.value(x).shape();
                let (n, f) = (xs[0], xs[1]);
                let o = self.value(w).shape()[0];
                if self.rg(x) {
                    let mut dx = self.zeros_like(x);
                    gemm(n, o, f, gd, false, self.value(w).data(), false, dx.data_mut(), false);
                    self.accum(grads, x, dx);
                }
                if self.rg(w) {
                    let mut dw = self.zeros_like(w);
                    gemm(o, n, f, gd, true, self.value(x).data(), false, dw.data_mut(), false);
                    self.accum(grads, w, dw);
                }
                if let Some(b) = *b {
                    if self.rg(b) {
                        let mut db = vec![S::zero(); o];
                        for row in gd.chunks(o) {
                            for (acc, &v) in db.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        self.accum(grads, b, Tensor::new(vec![o], db).unwrap());
                    }
                }
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Scale(a, s) => self.accum(grads, *a, g.map(|v| v * *s)),
            Op::LeakyRelu(a, slope) => {
                let xv = self.value(*a).data();
                let data = gd
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &x)| if x > S::zero() { gv } else { gv * *slope })
                    .collect();
                self.accum(grads, *a, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::Sigmoid(a) => {
                let yv = node.value.data();
                let data = gd.iter().zip(yv).map(|(&gv, &y)| gv * y * (S::one() - y)).collect();
                self.accum(grads, *a, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::UpsampleNearest2x(a) => {
                let [n, c, h, w] = self.value(*a).dims4().unwrap();
                let w2 = 2 * w;
                let mut dx = vec![S::zero(); n * c * h * w];
                for p in 0..n * c {
                    let src = &gd[p * 4 * h * w..(p + 1) * 4 * h * w];
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for (i, &v) in src.iter().enumerate() {
                        let (y, x) = (i / w2, i % w2);
                        dst[(y / 2) * w + x / 2] += v;
                    }
                }
                self.accum(grads, *a, Tensor::new(vec![n, c, h, w], dx).unwrap());
            }
            Op::UpsampleBilinear { x, ty, tx } => {
                let [n, c, h, w] = self.value(*x).dims4().unwrap();
                let plane = ty.len() * tx.len();
                let mut dx = vec![S::zero(); n * c * h * w];
                for p in 0..n * c {
                    kernels::bilinear_backward(
                        &gd[p * plane..(p + 1) * plane],
                        w,
                        ty,
                        tx,
                        &mut dx[p * h * w..(p + 1) * h * w],
                    );
                }
                self.accum(grads, *x, Tensor::new(vec![n, c, h, w], dx).unwrap());
            }
            Op::InstanceNorm { x, inv_std } => {
                let shape = self.value(*x).shape().to_vec();
                let hw = shape[2] * shape[3];
                let count = S::from_usize(hw).unwrap();
                let yv = node.value.data();
                let mut dx = vec![S::zero(); yv.len()];
                for (p, &is) in inv_std.iter().enumerate() {
                    let r = p * hw..(p + 1) * hw;
                    let (gy, y) = (&gd[r.clone()], &yv[r.clone()]);
                    let mg = gy.iter().copied().sum::<S>() / count;
                    let mgy = gy.iter().zip(y).map(|(&a, &b)| a * b).sum::<S>() / count;
                    for ((d, &gv), &yy) in dx[r].iter_mut().zip(gy).zip(y) {
                        *d = is * (gv - mg - yy * mgy);
                    }
                }
                self.accum(grads, *x, Tensor::new(shape, dx).unwrap());
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let [n, c, h, w] = self.value(*x).dims4().unwrap();
                let hw = h * w;
                let gam = self.value(*gamma).data();
                let xv = self.value(*x).data();
                if self.rg(*x) {
                    let mut dx = gd.to_vec();
                    for (p, plane) in dx.chunks_mut(hw).enumerate() {
                        let s = S::one() + gam[p];
                        for v in plane {
                            *v *= s;
                        }
                    }
                    self.accum(grads, *x, Tensor::new(vec![n, c, h, w], dx).unwrap());
                }
                if self.rg(*gamma) || self.rg(*beta) {
                    let mut dg = vec![S::zero(); n * c];
                    let mut db = vec![S::zero(); n * c];
                    for p in 0..n * c {
                        let r = p * hw..(p + 1) * hw;
                        dg[p] = gd[r.clone()].iter().zip(&xv[r.clone()]).map(|(&a, &b)| a * b).sum();
                        db[p] = gd[r].iter().copied().sum();
                    }
                    self.accum(grads, *gamma, Tensor::new(vec![n, c], dg).unwrap());
                    self.accum(grads, *beta, Tensor::new(vec![n, c], db).unwrap());
                }
            }
            Op::ConcatChannels(a, b) => {
                let [n, ca, h, w] = self.value(*a).dims4().unwrap();
                let cb = self.value(*b).shape()[1];
                let (pa, pb) = (ca * h * w, cb * h * w);
                let mut da = Vec::with_capacity(n * pa);
                let mut db = Vec::with_capacity(n * pb);
                for i in 0..n {
                    let base = i * (pa + pb);
                    da.extend_from_slice(&gd[base..base + pa]);
                    db.extend_from_slice(&gd[base + pa..base + pa + pb]);
                }
                self.accum(grads, *a, Tensor::new(vec![n, ca, h, w], da).unwrap());
                self.accum(grads, *b, Tensor::new(vec![n, cb, h, w], db).unwrap());
            }
            Op::SpatialMean(a) => {
                let shape = self.value(*a).shape().to_vec();
                let hw = shape[2] * shape[3];
                let inv = S::one() / S::from_usize(hw).unwrap();
                let mut dx = Vec::with_capacity(gd.len() * hw);
                for &v in gd {
                    dx.extend(std::iter::repeat_n(v * inv, hw));
                }
                self.accum(grads, *a, Tensor::new(shape, dx).unwrap());
            }
            Op::Softmax(a) => {
                let [n, c, h, w] = node.value.dims4().unwrap();
                let hw = h * w;
                let yv = node.value.data();
                let mut dx = vec![S::zero(); yv.len()];
                for i in 0..n {
                    let base = i * c * hw;
                    for p in 0..hw {
                        let dot: S = (0..c).map(|ch| gd[base + ch * hw + p] * yv[base + ch * hw + p]).sum();
                        for ch in 0..c {
                            let k = base + ch * hw + p;
                            dx[k] = yv[k] * (gd[k] - dot);
                        }
                    }
                }
                self.accum(grads, *a, Tensor::new(vec![n, c, h, w], dx).unwrap());
            }
            Op::LogSoftmax(a) => {
                let [n, c, h, w] = node.value.dims4().unwrap();
                let hw = h * w;
                let yv = node.value.data();
                let mut dx = vec![S::zero(); yv.len()];
                for i in 0..n {
                    let base = i * c * hw;
                    for p in 0..hw {
                        let gsum: S = (0..c).map(|ch| gd[base + ch * hw + p]).sum();
                        for ch in 0..c {
                            let k = base + ch * hw + p;
                            dx[k] = gd[k] - yv[k].exp() * gsum;
                        }
                    }
                }
                self.accum(grads, *a, Tensor::new(vec![n, c, h, w], dx).unwrap());
            }
            Op::Nll { logp, labels } => {
                let [_, c, h, w] = self.value(*logp).dims4().unwrap();
                let hw = h * w;
                let mut dx = self.zeros_like(*logp);
                let scale = -gd[0] / S::from_usize(labels.len()).unwrap();
                let d = dx.data_mut();
                for (idx, &y) in labels.iter().enumerate() {
                    let (i, p) = (idx / hw, idx % hw);
                    d[i * c * hw + y * hw + p] += scale;
                }
                self.accum(grads, *logp, dx);
            }
            Op::BceWithLogits { logits, target } => {
                let zv = self.value(*logits);
                let scale = gd[0] / S::from_usize(zv.numel()).unwrap();
                self.accum(grads, *logits, zv.map(|z| (sigmoid(z) - *target) * scale));
            }
            Op::SquaredError { x, target } => {
                let xv = self.value(*x);
                let scale = gd[0] * S::lit(2.0) / S::from_usize(xv.numel()).unwrap();
                self.accum(grads, *x, xv.map(|v| (v - *target) * scale));
            }
            Op::Mean(a) => {
                let shape = self.value(*a).shape();
                let inv = gd[0] / S::from_usize(self.value(*a).numel()).unwrap();
                self.accum(grads, *a, Tensor::full(shape, inv));
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    self.accum(grads, v, Tensor::scalar(gd[0] * w));
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
