//! Operation tape and reverse-mode sweep.

use std::hash::{DefaultHasher, Hash, Hasher};

use crate::conv::{self, ConvDims};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, k: usize },
    Relu { x: Var },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Upsample2 { x: Var },
    Concat { a: Var, b: Var },
    Mae { pred: Var, target: Var },
    L1 { params: Vec<Var>, lambda: F },
    Add { a: Var, b: Var },
    Scale { x: Var, factor: F },
    WeightedSum { x: Var, weights: Vec<F> },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records executed operations in order, with the activations the backward
/// sweep needs.
#[derive(Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Float> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced by {op:?}");
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

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Fingerprint of every piecewise choice the recorded graph made: relu
    /// masks, max-pool winners and the signs inside MAE and L1. Two
    /// evaluations with equal patterns lie in the same smooth region.
    pub fn piecewise_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let signs = |h: &mut DefaultHasher, values: &mut dyn Iterator<Item = F>| {
            for v in values {
                (v > F::ZERO).hash(h);
                (v < F::ZERO).hash(h);
            }
        };
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu { x } => {
                    i.hash(&mut h);
                    signs(&mut h, &mut self.value(*x).data().iter().copied());
                }
                Op::MaxPool2 { argmax, .. } => {
                    i.hash(&mut h);
                    argmax.hash(&mut h);
                }
                Op::Mae { pred, target } => {
                    i.hash(&mut h);
                    let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                    signs(&mut h, &mut p.iter().zip(t).map(|(a, b)| *a - *b));
                }
                Op::L1 { params, .. } => {
                    i.hash(&mut h);
                    for p in params {
                        signs(&mut h, &mut self.value(*p).data().iter().copied());
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Same-padded, stride-1 convolution. `w` has shape `(out, in, k, k)` with odd `k`,
    /// `b` has shape `(out)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [n, cin, h, wd] = self.value(x).dims4("conv2d")?;
        let [cout, wcin, k, k2] = self.value(w).dims4("conv2d")?;
        if wcin != cin {
            return Err(shape_err("conv2d", format!("input has {cin} channels, kernel expects {wcin}")));
        }
        if k != k2 || k % 2 == 0 {
            return Err(shape_err("conv2d", format!("kernel must be square and odd, got {k}x{k2}")));
        }
        if self.value(b).shape() != [cout] {
            return Err(shape_err("conv2d", format!("bias shape {:?}, expected [{cout}]", self.value(b).shape())));
        }
        let dims = ConvDims {
            n,
            cin,
            cout,
            h,
            w: wd,
            k,
        };
        let out = conv::forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), &dims);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new(&[n, cout, h, wd], out)?, Op::Conv2d { x, w, b, k }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|v| if *v > F::ZERO { *v } else { F::ZERO }).collect();
        let out = Tensor::new(src.shape(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Relu { x }, rg)
    }

    /// 2x2 max pooling with stride 2. Ties go to the first cell in row-major window order.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err("maxpool2", format!("spatial dims must be even, got {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[n, c, oh, ow], out)?, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("upsample2")?;
        let (oh, ow) = (2 * h, 2 * w);
        let src = self.value(x).data();
        let mut out = vec![F::ZERO; n * c * oh * ow];
        for plane in 0..n * c {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            let d = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for oy in 0..oh {
                let srow = &s[(oy / 2) * w..(oy / 2 + 1) * w];
                let drow = &mut d[oy * ow..(oy + 1) * ow];
                for (ox, v) in drow.iter_mut().enumerate() {
                    *v = srow[ox / 2];
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[n, c, oh, ow], out)?, Op::Upsample2 { x }, rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = self.value(a).dims4("concat_channels")?;
        let [nb, cb, hb, wb] = self.value(b).dims4("concat_channels")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(shape_err(
                "concat_channels",
                format!("batch/spatial dims differ: {:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut out = Vec::with_capacity(n * (sa + sb));
        for i in 0..n {
            out.extend_from_slice(&self.value(a).data()[i * sa..(i + 1) * sa]);
            out.extend_from_slice(&self.value(b).data()[i * sb..(i + 1) * sb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[n, ca + cb, h, w], out)?, Op::Concat { a, b }, rg))
    }

    /// Mean absolute error over every element.
    pub fn mae_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(shape_err("mae_loss", format!("{:?} vs {:?}", p.shape(), t.shape())));
        }
        if p.is_empty() {
            return Err(shape_err("mae_loss", "empty tensors".into()));
        }
        let mut s = 0.0f64;
        for (a, b) in p.data().iter().zip(t.data()) {
            s += (*a - *b).abs().to_f64();
        }
        let v = F::from_f64(s / p.len() as f64);
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(v), Op::Mae { pred, target }, rg))
    }

    /// `lambda * sum |w|` over the given tensors.
    pub fn l1_penalty(&mut self, params: &[Var], lambda: F) -> Var {
        let mut s = 0.0f64;
        for p in params {
            for v in self.value(*p).data() {
                s += v.abs().to_f64();
            }
        }
        let rg = params.iter().any(|p| self.rg(*p));
        let value = F::from_f64(lambda.to_f64() * s);
        self.push(
            Tensor::scalar(value),
            Op::L1 {
                params: params.to_vec(),
                lambda,
            },
            rg,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape())));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| *x + *y).collect();
        let out = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Var {
        let src = self.value(x);
        let out = Tensor::new(src.shape(), src.data().iter().map(|v| *v * factor).collect()).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Scale { x, factor }, rg)
    }

    /// Scalar `sum_i weights_i * x_i`.
    pub fn weighted_sum(&mut self, x: Var, weights: &[F]) -> Result<Var> {
        let src = self.value(x);
        if src.len() != weights.len() {
            return Err(shape_err("weighted_sum", format!("{} values vs {} weights", src.len(), weights.len())));
        }
        let mut s = F::ZERO;
        for (a, b) in src.data().iter().zip(weights) {
            s += *a * *b;
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        self.weighted_sum(x, &vec![F::ONE; n]).expect("matching length")
    }

    /// Reverse sweep from a scalar output. Intermediate gradients are released as
    /// soon as they have been propagated; only leaf gradients are returned.
    pub fn backward(&self, output: Var) -> Result<Gradients<F>> {
        if self.value(output).len() != 1 {
            return Err(shape_err(
                "backward",
                format!("output must be a scalar, got shape {:?}", self.value(output).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaf = Gradients {
            grads: (0..self.nodes.len()).map(|_| None).collect(),
        };
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), F::ONE));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => leaf.grads[i] = Some(g),
                op => self.propagate(op, &g, &mut grads)?,
            }
        }
        Ok(leaf)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
        if !self.rg(v) {
            return;
        }
        debug_assert_eq!(g.shape(), self.value(v).shape());
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, k } => {
                let [n, cin, h, wd] = self.value(*x).dims4("conv2d")?;
                let cout = self.value(*w).shape()[0];
                let dims = ConvDims {
                    n,
                    cin,
                    cout,
                    h,
                    w: wd,
                    k: *k,
                };
                let need_dw = self.rg(*w) || self.rg(*b);
                let (dx, dw, db) = conv::backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g.data(),
                    &dims,
                    self.rg(*x),
                    need_dw,
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, Tensor::new(self.value(*x).shape(), dx)?);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, Tensor::new(self.value(*w).shape(), dw)?);
                }
                if let Some(db) = db {
                    self.accumulate(grads, *b, Tensor::new(&[cout], db)?);
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(v, gv)| if *v > F::ZERO { *gv } else { F::ZERO })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape(), data)?);
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let d = dx.data_mut();
                for (idx, gv) in argmax.iter().zip(g.data()) {
                    d[*idx as usize] += *gv;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Upsample2 { x } => {
                let [n, c, h, w] = self.value(*x).dims4("upsample2")?;
                let ow = 2 * w;
                let mut dx = Tensor::zeros(&[n, c, h, w]);
                let d = dx.data_mut();
                let gd = g.data();
                for plane in 0..n * c {
                    let src = &gd[plane * 4 * h * w..(plane + 1) * 4 * h * w];
                    let dst = &mut d[plane * h * w..(plane + 1) * h * w];
                    for (oy, row) in src.chunks_exact(ow).enumerate() {
                        let drow = &mut dst[(oy / 2) * w..(oy / 2 + 1) * w];
                        for (ox, v) in row.iter().enumerate() {
                            drow[ox / 2] += *v;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Concat { a, b } => {
                let [n, ca, h, w] = self.value(*a).dims4("concat_channels")?;
                let cb = self.value(*b).shape()[1];
                let (sa, sb) = (ca * h * w, cb * h * w);
                let mut ga = Vec::with_capacity(n * sa);
                let mut gb = Vec::with_capacity(n * sb);
                for chunk in g.data().chunks_exact(sa + sb) {
                    ga.extend_from_slice(&chunk[..sa]);
                    gb.extend_from_slice(&chunk[sa..]);
                }
                self.accumulate(grads, *a, Tensor::new(self.value(*a).shape(), ga)?);
                self.accumulate(grads, *b, Tensor::new(self.value(*b).shape(), gb)?);
            }
            Op::Mae { pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let scale = g.item() / F::from_f64(p.len() as f64);
                let dp: Vec<F> = p.data().iter().zip(t.data()).map(|(a, b)| (*a - *b).sign() * scale).collect();
                if self.rg(*target) {
                    let dt = dp.iter().map(|v| -*v).collect();
                    self.accumulate(grads, *target, Tensor::new(t.shape(), dt)?);
                }
                self.accumulate(grads, *pred, Tensor::new(p.shape(), dp)?);
            }
            Op::L1 { params, lambda } => {
                let scale = g.item() * *lambda;
                for p in params {
                    let v = self.value(*p);
                    let d = v.data().iter().map(|x| x.sign() * scale).collect();
                    self.accumulate(grads, *p, Tensor::new(v.shape(), d)?);
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Scale { x, factor } => {
                let d = g.data().iter().map(|v| *v * *factor).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape(), d)?);
            }
            Op::WeightedSum { x, weights } => {
                let gi = g.item();
                let d = weights.iter().map(|w| *w * gi).collect();
                self.accumulate(grads, *x, Tensor::new(self.value(*x).shape(), d)?);
            }
        }
        Ok(())
    }
}
