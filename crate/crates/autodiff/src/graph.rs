//! Dynamic reverse-mode tape.
//!
//! A [`Graph`] records every operation as it is evaluated. Leaves are moved in
//! with [`Graph::leaf`]; after [`Graph::backward`] their gradients are
//! accumulated into the leaf tensors, which are moved back out with
//! [`Graph::into_tensors`]. A new graph is built for every optimization step.

use crate::conv::{self, ConvGeometry};
use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Mean(Var),
    Sum(Var),
    SumSquares(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geometry: ConvGeometry,
        cols: Option<Vec<T>>,
    },
    Upsample2x(Var),
    Concat(Vec<Var>),
    ChannelNorm {
        input: Var,
        scale: Var,
        shift: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn chw(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(TensorError::invalid(
            op,
            format!("expected a C×H×W tensor, got shape {shape:?}"),
        )),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients flow to it iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_requires_grad(false);
        self.push(tensor, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Moves leaves back out of the graph, gradients included.
    pub fn into_tensors(mut self, vars: impl IntoIterator<Item = Var>) -> Vec<Tensor<T>> {
        vars.into_iter()
            .map(|v| std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(Vec::<usize>::new())))
            .collect()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn derived(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        let value = Tensor::new(shape, data).expect("op produced consistent shape");
        self.push(value, op, needs_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.derived(self.shape(a).to_vec(), data, op, needs))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        let needs = self.needs(a);
        self.derived(self.shape(a).to_vec(), data, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scalar_mul(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    /// `1 − a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scalar_mul(a, -T::one());
        self.add_scalar(neg, T::one())
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(
            a,
            |x| if x > T::zero() { x } else { x * slope },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let m = d.iter().copied().sum::<T>() / T::from_usize(d.len().max(1)).unwrap();
        let needs = self.needs(a);
        self.derived(Vec::new(), vec![m], Op::Mean(a), needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum::<T>();
        let needs = self.needs(a);
        self.derived(Vec::new(), vec![s], Op::Sum(a), needs)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().map(|&x| x * x).sum::<T>();
        let needs = self.needs(a);
        self.derived(Vec::new(), vec![s], Op::SumSquares(a), needs)
    }

    /// Cross-correlation of a `C_in×H×W` input with a `C_out×C_in×k×k` weight.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (c_in, height, width) = chw(self.shape(input), "conv2d")?;
        let (c_out, wc_in, kh, kw) = match *self.shape(weight) {
            [a, b, c, d] => (a, b, c, d),
            ref s => {
                return Err(TensorError::invalid(
                    "conv2d",
                    format!("weight must be C_out×C_in×k×k, got shape {s:?}"),
                ))
            }
        };
        if wc_in != c_in {
            return Err(TensorError::invalid(
                "conv2d",
                format!("weight expects {wc_in} input channels, input has {c_in}"),
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(TensorError::invalid(
                "conv2d",
                format!("kernel must be square with odd extent, got {kh}×{kw}"),
            ));
        }
        if stride == 0 {
            return Err(TensorError::invalid("conv2d", "stride must be ≥ 1"));
        }
        if height + 2 * padding < kh || width + 2 * padding < kw {
            return Err(TensorError::invalid(
                "conv2d",
                format!("padded input {height}×{width} (+{padding}) smaller than kernel {kh}"),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(TensorError::invalid(
                    "conv2d",
                    format!("bias must have shape [{c_out}], got {:?}", self.shape(b)),
                ));
            }
        }
        let geometry = ConvGeometry {
            c_in,
            c_out,
            height,
            width,
            kernel: kh,
            stride,
            padding,
        };
        let (out, cols) = conv::conv2d_forward_keep(
            self.data(input),
            self.data(weight),
            bias.map(|b| self.data(b)),
            &geometry,
            self.needs(weight),
        );
        let needs = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.derived(
            vec![c_out, geometry.out_height(), geometry.out_width()],
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
                cols,
            },
            needs,
        ))
    }

    pub fn upsample_nearest2x(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = chw(self.shape(a), "upsample_nearest2x")?;
        let out = conv::upsample_nearest2x_forward(self.data(a), c, h, w);
        let needs = self.needs(a);
        Ok(self.derived(vec![c, 2 * h, 2 * w], out, Op::Upsample2x(a), needs))
    }

    /// Concatenates `C_i×H×W` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat_channels", "no inputs"))?;
        let (_, h, w) = chw(self.shape(first), "concat_channels")?;
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (c, ph, pw) = chw(self.shape(p), "concat_channels")?;
            if (ph, pw) != (h, w) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_channels",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            channels += c;
            data.extend_from_slice(self.data(p));
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.derived(vec![channels, h, w], data, Op::Concat(parts.to_vec()), needs))
    }

    /// Normalizes every channel of a `C×H×W` map to zero mean and unit
    /// variance over its spatial extent, then applies a per-channel affine
    /// `scale·x̂ + shift`.
    pub fn channel_norm(&mut self, input: Var, scale: Var, shift: Var, eps: T) -> Result<Var> {
        let (c, h, w) = chw(self.shape(input), "channel_norm")?;
        for (name, v) in [("scale", scale), ("shift", shift)] {
            if self.shape(v) != [c] {
                return Err(TensorError::invalid(
                    "channel_norm",
                    format!("{name} must have shape [{c}], got {:?}", self.shape(v)),
                ));
            }
        }
        let n = h * w;
        let nf = T::from_usize(n).unwrap();
        let x = self.data(input);
        let (gamma, beta) = (self.data(scale), self.data(shift));
        let mut normalized = vec![T::zero(); c * n];
        let mut inv_std = vec![T::zero(); c];
        let mut out = vec![T::zero(); c * n];
        for ch in 0..c {
            let plane = &x[ch * n..(ch + 1) * n];
            let mean = plane.iter().copied().sum::<T>() / nf;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let istd = T::one() / (var + eps).sqrt();
            inv_std[ch] = istd;
            for i in 0..n {
                let xh = (plane[i] - mean) * istd;
                normalized[ch * n + i] = xh;
                out[ch * n + i] = gamma[ch] * xh + beta[ch];
            }
        }
        let needs = self.needs(input) || self.needs(scale) || self.needs(shift);
        Ok(self.derived(
            vec![c, h, w],
            out,
            Op::ChannelNorm {
                input,
                scale,
                shift,
                normalized,
                inv_std,
            },
            needs,
        ))
    }

    /// Reverse pass from a single-element `loss`.
    ///
    /// Intermediate gradients are discarded afterwards; leaf gradients are
    /// added onto whatever the leaves already hold, so repeated calls
    /// accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_shape = self.shape(loss);
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, g, &mut grads, &mut leaf_grads);
        }
        for (i, g) in leaf_grads {
            self.nodes[i].value.add_to_grad(&g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: Vec<T>, grads: &mut [Option<Vec<T>>], leaf_grads: &mut Vec<(usize, Vec<T>)>) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, contribution: &mut dyn FnMut(&mut [T])| {
            if !self.needs(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.data(v).len()]);
            contribution(slot);
        };
        match &node.op {
            Op::Leaf => leaf_grads.push((i, g)),
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |s| add_into(s, &g));
                }
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, &g));
                acc(*b, &mut |s| s.iter_mut().zip(&g).for_each(|(d, &gv)| *d -= gv));
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                acc(*a, &mut |s| {
                    for ((d, &gv), &y) in s.iter_mut().zip(&g).zip(db) {
                        *d += gv * y;
                    }
                });
                acc(*b, &mut |s| {
                    for ((d, &gv), &x) in s.iter_mut().zip(&g).zip(da) {
                        *d += gv * x;
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |s| s.iter_mut().zip(&g).for_each(|(d, &gv)| *d += gv * *k)),
            Op::AddScalar(a) => acc(*a, &mut |s| add_into(s, &g)),
            Op::LeakyRelu(a, slope) => {
                let x = self.data(*a);
                acc(*a, &mut |s| {
                    for ((d, &gv), &xv) in s.iter_mut().zip(&g).zip(x) {
                        *d += if xv > T::zero() { gv } else { gv * *slope };
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |s| {
                    for ((d, &gv), &yv) in s.iter_mut().zip(&g).zip(y) {
                        *d += gv * yv * (T::one() - yv);
                    }
                });
            }
            Op::Mean(a) => {
                let n = T::from_usize(self.data(*a).len().max(1)).unwrap();
                let gv = g[0] / n;
                acc(*a, &mut |s| s.iter_mut().for_each(|d| *d += gv));
            }
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|d| *d += g[0])),
            Op::SumSquares(a) => {
                let x = self.data(*a);
                let two = T::one() + T::one();
                acc(*a, &mut |s| {
                    for (d, &xv) in s.iter_mut().zip(x) {
                        *d += two * xv * g[0];
                    }
                });
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
                cols,
            } => {
                let (x, w) = (self.data(*input), self.data(*weight));
                let cols = cols.as_deref();
                if let Some(b) = bias {
                    acc(*b, &mut |s| {
                        conv::conv2d_backward(x, w, &g, geometry, None, None, Some(s))
                    });
                }
                acc(*weight, &mut |s| {
                    conv::conv2d_backward_cols(x, cols, w, &g, geometry, None, Some(s), None)
                });
                acc(*input, &mut |s| {
                    conv::conv2d_backward(x, w, &g, geometry, Some(s), None, None)
                });
            }
            Op::Upsample2x(a) => {
                let &[c, h, w] = self.shape(*a) else {
                    unreachable!("validated on record")
                };
                acc(*a, &mut |s| conv::upsample_nearest2x_backward(&g, c, h, w, s));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.data(p).len();
                    acc(p, &mut |s| add_into(s, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::ChannelNorm {
                input,
                scale,
                shift,
                normalized,
                inv_std,
            } => {
                let c = inv_std.len();
                let n = g.len() / c;
                let nf = T::from_usize(n).unwrap();
                let gamma = self.data(*scale);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for ch in 0..c {
                    for k in ch * n..(ch + 1) * n {
                        sum_g[ch] += g[k];
                        sum_gx[ch] += g[k] * normalized[k];
                    }
                }
                acc(*shift, &mut |s| add_into(s, &sum_g));
                acc(*scale, &mut |s| add_into(s, &sum_gx));
                acc(*input, &mut |s| {
                    for ch in 0..c {
                        let k0 = gamma[ch] * inv_std[ch] / nf;
                        for k in ch * n..(ch + 1) * n {
                            s[k] += k0 * (nf * g[k] - sum_g[ch] - normalized[k] * sum_gx[ch]);
                        }
                    }
                });
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
