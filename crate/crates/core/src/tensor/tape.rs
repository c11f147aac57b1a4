use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The differentiable op vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Sqrt,
    Gelu,
    Matmul,
    Softmax,
    LayerNorm,
    Conv2d,
    PixelShuffle,
    PixelUnshuffle,
    Reshape,
    Permute,
    Roll,
    Narrow,
    Concat,
    IndexSelect,
    Sum,
    Mean,
}

impl OpKind {
    /// Every differentiable op, leaves excluded.
    pub const ALL: [OpKind; 21] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::Sqrt,
        OpKind::Gelu,
        OpKind::Matmul,
        OpKind::Softmax,
        OpKind::LayerNorm,
        OpKind::Conv2d,
        OpKind::PixelShuffle,
        OpKind::PixelUnshuffle,
        OpKind::Reshape,
        OpKind::Permute,
        OpKind::Roll,
        OpKind::Narrow,
        OpKind::Concat,
        OpKind::IndexSelect,
        OpKind::Sum,
        OpKind::Mean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::Sqrt => "sqrt",
            OpKind::Gelu => "gelu",
            OpKind::Matmul => "matmul",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Conv2d => "conv2d",
            OpKind::PixelShuffle => "pixel_shuffle",
            OpKind::PixelUnshuffle => "pixel_unshuffle",
            OpKind::Reshape => "reshape",
            OpKind::Permute => "permute",
            OpKind::Roll => "roll",
            OpKind::Narrow => "narrow",
            OpKind::Concat => "concat",
            OpKind::IndexSelect => "index_select",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        std::iter::once(OpKind::Leaf)
            .chain(OpKind::ALL)
            .find(|k| k.name() == name)
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sqrt(Var),
    Gelu(Var),
    Matmul(Var, Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: Vec<(T, T)> },
    Conv2d { x: Var, weight: Var, bias: Option<Var>, geom: ConvGeom },
    PixelShuffle { x: Var, r: usize },
    PixelUnshuffle { x: Var, r: usize },
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    Roll { x: Var, axis: usize, shift: isize },
    Narrow { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    IndexSelect { x: Var, indices: Vec<usize> },
    Sum(Var),
    Mean(Var),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Sqrt(..) => OpKind::Sqrt,
            Op::Gelu(..) => OpKind::Gelu,
            Op::Matmul(..) => OpKind::Matmul,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::PixelShuffle { .. } => OpKind::PixelShuffle,
            Op::PixelUnshuffle { .. } => OpKind::PixelUnshuffle,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Permute { .. } => OpKind::Permute,
            Op::Roll { .. } => OpKind::Roll,
            Op::Narrow { .. } => OpKind::Narrow,
            Op::Concat { .. } => OpKind::Concat,
            Op::IndexSelect { .. } => OpKind::IndexSelect,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    shape: Vec<usize>,
    value: Vec<T>,
    requires_grad: bool,
}

/// Topologically ordered record of every op evaluated since construction.
///
/// Values are immutable once pushed; a node can only reference earlier nodes,
/// so reverse iteration is a valid backward schedule.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    negate_backward: Option<OpKind>,
}

/// Gradients produced by one [`Tape::backward`] call, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn check_finite<T: Real>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn add_into<T: Real>(dst: &mut Option<Vec<T>>, src: &[T]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, &b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

/// Sums a broadcast gradient back down to `target` shape.
fn reduce_broadcast<T: Real>(g: &[T], out_shape: &[usize], target: &[usize]) -> Vec<T> {
    if out_shape == target {
        return g.to_vec();
    }
    let st = kernels::broadcast_strides(target, out_shape);
    let mut acc = vec![T::zero(); target.iter().product()];
    kernels::for_each_strided(out_shape, [&st], |i, [t]| acc[t] += g[i]);
    acc
}

fn gelu_cdf<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    half * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_pdf<T: Real>(x: T) -> T {
    let inv_sqrt_2pi = T::lit(0.398_942_280_401_432_7);
    inv_sqrt_2pi * (-(x * x) * T::lit(0.5)).exp()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            negate_backward: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Test hook: flips the sign of every gradient produced by `kind`'s backward rule.
    pub fn inject_backward_fault(&mut self, kind: Option<OpKind>) {
        self.negate_backward = kind;
    }

    fn push(&mut self, op: Op<T>, shape: Vec<usize>, value: Vec<T>) -> Result<Var> {
        check_finite(op.kind().name(), &value)?;
        let requires_grad = match &op {
            Op::Leaf => false,
            other => self.inputs_of(other).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            shape,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs_of(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Sqrt(a)
            | Op::Gelu(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Softmax { x, .. }
            | Op::PixelShuffle { x, .. }
            | Op::PixelUnshuffle { x, .. }
            | Op::Permute { x, .. }
            | Op::Roll { x, .. }
            | Op::Narrow { x, .. }
            | Op::IndexSelect { x, .. } => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Conv2d { x, weight, bias, .. } => {
                let mut v = vec![*x, *weight];
                v.extend(bias.iter().copied());
                v
            }
            Op::Concat { xs, .. } => xs.clone(),
        }
    }

    /// Records a leaf; gradients flow to it iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        let value = tensor.into_data();
        self.nodes.push(Node {
            op: Op::Leaf,
            shape,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("tape node shape is consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Vec<usize>, Vec<T>)> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = kernels::broadcast_shape(&sa, &sb).ok_or_else(|| {
            Error::dim(name, format!("shapes {sa:?} and {sb:?} do not broadcast"))
        })?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let st_a = kernels::broadcast_strides(&sa, &out_shape);
            let st_b = kernels::broadcast_strides(&sb, &out_shape);
            let mut out = Vec::with_capacity(out_shape.iter().product());
            kernels::for_each_strided(&out_shape, [&st_a, &st_b], |_, [i, j]| {
                out.push(f(va[i], vb[j]))
            });
            out
        };
        Ok((out_shape, out))
    }

    /// Elementwise sum with numpy broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out) = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        self.push(Op::Add(a, b), shape, out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out) = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        self.push(Op::Sub(a, b), shape, out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out) = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        self.push(Op::Mul(a, b), shape, out)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).iter().map(|&v| v * c).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Scale(a, c), shape, out)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).iter().map(|&v| v + c).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::AddScalar(a), shape, out)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).iter().any(|&v| v <= T::zero()) {
            return Err(Error::Numeric("sqrt of nonpositive value".into()));
        }
        let out = self.value(a).iter().map(|&v| v.sqrt()).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Sqrt(a), shape, out)
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|&v| v * gelu_cdf(v)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Gelu(a), shape, out)
    }

    /// Batched matrix product `[.., m, k] · [.., k, n]` with broadcast batch axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let plan = MatmulPlan::new(&sa, &sb)?;
        let mut out = vec![T::zero(); plan.batch_count() * plan.m * plan.n];
        let (va, vb) = (self.value(a), self.value(b));
        plan.for_each_batch(|ob, oa, obb| {
            kernels::gemm_acc(
                &va[oa * plan.m * plan.k..(oa + 1) * plan.m * plan.k],
                &vb[obb * plan.k * plan.n..(obb + 1) * plan.k * plan.n],
                &mut out[ob * plan.m * plan.n..(ob + 1) * plan.m * plan.n],
                plan.m,
                plan.k,
                plan.n,
            )
        });
        self.push(Op::Matmul(a, b), plan.out_shape(), out)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, n, inner) = kernels::axis_split(&shape, axis);
        let v = self.value(x);
        let mut out = vec![T::zero(); v.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let mut m = T::neg_infinity();
                for k in 0..n {
                    m = m.max(v[at(k)]);
                }
                let mut s = T::zero();
                for k in 0..n {
                    let e = (v[at(k)] - m).exp();
                    out[at(k)] = e;
                    s += e;
                }
                for k in 0..n {
                    out[at(k)] = out[at(k)] / s;
                }
            }
        }
        self.push(Op::Softmax { x, axis }, shape, out)
    }

    /// LayerNorm over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| Error::dim("layer_norm", "scalar input"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} for normalized extent {c}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let (v, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let rows = v.len() / c;
        let inv_c = T::one() / T::lit(c as f64);
        let mut out = vec![T::zero(); v.len()];
        let mut stats = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &v[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<T>() * inv_c;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<T>() * inv_c;
            let rstd = T::one() / (var + eps).sqrt();
            for k in 0..c {
                out[r * c + k] = (row[k] - mean) * rstd * g[k] + b[k];
            }
            stats.push((mean, rstd));
        }
        self.push(Op::LayerNorm { x, gamma, beta, stats }, shape, out)
    }

    /// 2-D convolution over `[n, c_in, h, w]` with weight `[c_out, c_in/groups, kh, kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(weight).to_vec());
        if sx.len() != 4 || sw.len() != 4 {
            return Err(Error::dim("conv2d", format!("input {sx:?}, weight {sw:?} must be rank 4")));
        }
        if groups == 0 || stride == 0 {
            return Err(Error::dim("conv2d", "groups and stride must be positive"));
        }
        if sx[1] % groups != 0 || sw[0] % groups != 0 || sw[1] * groups != sx[1] {
            return Err(Error::dim(
                "conv2d",
                format!("input {sx:?} and weight {sw:?} disagree with groups={groups}"),
            ));
        }
        if sx[2] + 2 * padding < sw[2] || sx[3] + 2 * padding < sw[3] {
            return Err(Error::dim("conv2d", format!("kernel {sw:?} larger than padded input {sx:?}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sw[0]] {
                return Err(Error::dim(
                    "conv2d",
                    format!("bias {:?} for {} output channels", self.shape(b), sw[0]),
                ));
            }
        }
        let geom = ConvGeom {
            n: sx[0],
            c_in: sx[1],
            h: sx[2],
            w: sx[3],
            c_out: sw[0],
            kh: sw[2],
            kw: sw[3],
            stride,
            padding,
            groups,
            oh: (sx[2] + 2 * padding - sw[2]) / stride + 1,
            ow: (sx[3] + 2 * padding - sw[3]) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            &geom,
        );
        let shape = vec![geom.n, geom.c_out, geom.oh, geom.ow];
        self.push(Op::Conv2d { x, weight, bias, geom }, shape, out)
    }

    /// Sub-pixel rearrangement `[n, c·r², h, w] -> [n, c, r·h, r·w]`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || r == 0 || !s[1].is_multiple_of(r * r) {
            return Err(Error::dim("pixel_shuffle", format!("shape {s:?} with factor {r}")));
        }
        let out = kernels::pixel_shuffle(self.value(x), &s, r, false);
        let shape = vec![s[0], s[1] / (r * r), s[2] * r, s[3] * r];
        self.push(Op::PixelShuffle { x, r }, shape, out)
    }

    /// Inverse of [`pixel_shuffle`](Self::pixel_shuffle).
    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || r == 0 || !s[2].is_multiple_of(r) || !s[3].is_multiple_of(r) {
            return Err(Error::dim("pixel_unshuffle", format!("shape {s:?} with factor {r}")));
        }
        let low = vec![s[0], s[1] * r * r, s[2] / r, s[3] / r];
        let out = kernels::pixel_shuffle(self.value(x), &low, r, true);
        self.push(Op::PixelUnshuffle { x, r }, low, out)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() || shape.contains(&0) {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape(x)),
            ));
        }
        let out = self.value(x).to_vec();
        self.push(Op::Reshape(x), shape.to_vec(), out)
    }

    /// Reorders axes; output is materialized contiguously.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if axes.len() != s.len() || axes.iter().any(|&a| a >= s.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::dim("permute", format!("axes {axes:?} for shape {s:?}")));
        }
        let (out, shape) = kernels::permute(self.value(x), &s, axes);
        self.push(Op::Permute { x, axes: axes.to_vec() }, shape, out)
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::dim("transpose", "rank below 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    /// Toroidal roll: `out[(i + shift) mod n] = x[i]` along `axis`.
    pub fn roll(&mut self, x: Var, axis: usize, shift: isize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::dim("roll", format!("axis {axis} for shape {s:?}")));
        }
        let out = kernels::roll(self.value(x), &s, axis, shift);
        self.push(Op::Roll { x, axis, shift }, s, out)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::dim(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {s:?}", start + len),
            ));
        }
        let (outer, n, inner) = kernels::axis_split(&s, axis);
        let v = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            out.extend_from_slice(&v[from..from + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push(Op::Narrow { x, axis, start }, shape, out)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let n = self.shape(x)[axis];
                out.extend_from_slice(&self.value(x)[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(Op::Concat { xs: xs.to_vec(), axis }, shape, out)
    }

    /// Gathers rows of the leading axis.
    pub fn index_select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || indices.is_empty() || indices.iter().any(|&i| i >= s[0]) {
            return Err(Error::dim("index_select", format!("indices out of range for {s:?}")));
        }
        let inner: usize = s[1..].iter().product();
        let v = self.value(x);
        let mut out = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            out.extend_from_slice(&v[i * inner..(i + 1) * inner]);
        }
        let mut shape = s;
        shape[0] = indices.len();
        self.push(Op::IndexSelect { x, indices: indices.to_vec() }, shape, out)
    }

    /// Sum of all elements, compensated, in linear index order.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = kernels::compensated_sum(self.value(x));
        self.push(Op::Sum(x), vec![], vec![s])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = kernels::compensated_sum(v) / T::lit(v.len() as f64);
        self.push(Op::Mean(x), vec![], vec![s])
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients for a node used several times accumulate additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let mut contribs = self.backward_node(node, &g);
            if self.negate_backward == Some(node.op.kind()) {
                for (_, c) in contribs.iter_mut() {
                    c.iter_mut().for_each(|v| *v = -*v);
                }
            }
            for (v, c) in contribs {
                add_into(&mut grads[v.0], &c);
            }
            grads[idx] = Some(g);
        }
        // intermediate buffers are kept; callers look up only what they need
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<T>, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let mut out = Vec::new();
        let out_shape = &node.shape;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.wants(*a) {
                    out.push((*a, reduce_broadcast(g, out_shape, self.shape(*a))));
                }
                if self.wants(*b) {
                    out.push((*b, reduce_broadcast(g, out_shape, self.shape(*b))));
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    out.push((*a, reduce_broadcast(g, out_shape, self.shape(*a))));
                }
                if self.wants(*b) {
                    let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                    out.push((*b, reduce_broadcast(&neg, out_shape, self.shape(*b))));
                }
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let st_a = kernels::broadcast_strides(sa, out_shape);
                let st_b = kernels::broadcast_strides(sb, out_shape);
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let mut ga = vec![T::zero(); va.len()];
                    kernels::for_each_strided(out_shape, [&st_a, &st_b], |o, [i, j]| {
                        ga[i] += g[o] * vb[j]
                    });
                    out.push((*a, ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![T::zero(); vb.len()];
                    kernels::for_each_strided(out_shape, [&st_a, &st_b], |o, [i, j]| {
                        gb[j] += g[o] * va[i]
                    });
                    out.push((*b, gb));
                }
            }
            Op::Scale(a, c) => out.push((*a, g.iter().map(|&v| v * *c).collect())),
            Op::AddScalar(a) => out.push((*a, g.to_vec())),
            Op::Sqrt(a) => {
                let half = T::lit(0.5);
                let gx = g.iter().zip(&node.value).map(|(&gv, &y)| gv * half / y).collect();
                out.push((*a, gx));
            }
            Op::Gelu(a) => {
                let gx = g
                    .iter()
                    .zip(self.value(*a))
                    .map(|(&gv, &x)| gv * (gelu_cdf(x) + x * gelu_pdf(x)))
                    .collect();
                out.push((*a, gx));
            }
            Op::Matmul(a, b) => {
                let plan = MatmulPlan::new(self.shape(*a), self.shape(*b)).expect("validated in forward");
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (plan.m, plan.k, plan.n);
                if self.wants(*a) {
                    let mut ga = vec![T::zero(); va.len()];
                    plan.for_each_batch(|ob, oa, obb| {
                        kernels::gemm_nt_acc(
                            &g[ob * m * n..(ob + 1) * m * n],
                            &vb[obb * k * n..(obb + 1) * k * n],
                            &mut ga[oa * m * k..(oa + 1) * m * k],
                            m,
                            k,
                            n,
                        )
                    });
                    out.push((*a, ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![T::zero(); vb.len()];
                    plan.for_each_batch(|ob, oa, obb| {
                        kernels::gemm_tn_acc(
                            &va[oa * m * k..(oa + 1) * m * k],
                            &g[ob * m * n..(ob + 1) * m * n],
                            &mut gb[obb * k * n..(obb + 1) * k * n],
                            m,
                            k,
                            n,
                        )
                    });
                    out.push((*b, gb));
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = kernels::axis_split(out_shape, *axis);
                let y = &node.value;
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let mut dot = T::zero();
                        for k in 0..n {
                            dot += g[at(k)] * y[at(k)];
                        }
                        for k in 0..n {
                            gx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                out.push((*x, gx));
            }
            Op::LayerNorm { x, gamma, beta, stats } => {
                let c = *out_shape.last().expect("rank >= 1");
                let (v, gam) = (self.value(*x), self.value(*gamma));
                let inv_c = T::one() / T::lit(c as f64);
                let mut gx = vec![T::zero(); v.len()];
                let mut gg = vec![T::zero(); c];
                let mut gbeta = vec![T::zero(); c];
                let mut xhat = vec![T::zero(); c];
                let mut dxhat = vec![T::zero(); c];
                for (r, &(mean, rstd)) in stats.iter().enumerate() {
                    let row = &v[r * c..(r + 1) * c];
                    let grow = &g[r * c..(r + 1) * c];
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for k in 0..c {
                        xhat[k] = (row[k] - mean) * rstd;
                        dxhat[k] = grow[k] * gam[k];
                        sum_d += dxhat[k];
                        sum_dx += dxhat[k] * xhat[k];
                        gg[k] += grow[k] * xhat[k];
                        gbeta[k] += grow[k];
                    }
                    for k in 0..c {
                        gx[r * c + k] = rstd * (dxhat[k] - sum_d * inv_c - xhat[k] * sum_dx * inv_c);
                    }
                }
                if self.wants(*x) {
                    out.push((*x, gx));
                }
                if self.wants(*gamma) {
                    out.push((*gamma, gg));
                }
                if self.wants(*beta) {
                    out.push((*beta, gbeta));
                }
            }
            Op::Conv2d { x, weight, bias, geom } => {
                if self.wants(*x) {
                    out.push((*x, kernels::conv2d_backward_input(g, self.value(*weight), geom)));
                }
                if self.wants(*weight) {
                    out.push((*weight, kernels::conv2d_backward_weight(g, self.value(*x), geom)));
                }
                if let Some(b) = bias {
                    if self.wants(*b) {
                        out.push((*b, kernels::conv2d_backward_bias(g, geom)));
                    }
                }
            }
            Op::PixelShuffle { x, r } => {
                let gx = kernels::pixel_shuffle(g, self.shape(*x), *r, true);
                out.push((*x, gx));
            }
            Op::PixelUnshuffle { x, r } => {
                let gx = kernels::pixel_shuffle(g, out_shape, *r, false);
                out.push((*x, gx));
            }
            Op::Reshape(x) => out.push((*x, g.to_vec())),
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let (gx, _) = kernels::permute(g, out_shape, &inverse);
                out.push((*x, gx));
            }
            Op::Roll { x, axis, shift } => out.push((*x, kernels::roll(g, out_shape, *axis, -*shift))),
            Op::Narrow { x, axis, start } => {
                let s = self.shape(*x);
                let (outer, n, inner) = kernels::axis_split(s, *axis);
                let len = out_shape[*axis];
                let mut gx = vec![T::zero(); self.value(*x).len()];
                for o in 0..outer {
                    let to = (o * n + start) * inner;
                    gx[to..to + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                out.push((*x, gx));
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = kernels::axis_split(out_shape, *axis);
                let mut offset = 0;
                for &x in xs {
                    let n = self.shape(x)[*axis];
                    if self.wants(x) {
                        let mut gx = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let from = (o * total + offset) * inner;
                            gx.extend_from_slice(&g[from..from + n * inner]);
                        }
                        out.push((x, gx));
                    }
                    offset += n;
                }
            }
            Op::IndexSelect { x, indices } => {
                let inner: usize = out_shape[1..].iter().product();
                let mut gx = vec![T::zero(); self.value(*x).len()];
                for (row, &i) in indices.iter().enumerate() {
                    for k in 0..inner {
                        gx[i * inner + k] += g[row * inner + k];
                    }
                }
                out.push((*x, gx));
            }
            Op::Sum(x) => out.push((*x, vec![g[0]; self.value(*x).len()])),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                out.push((*x, vec![g[0] / T::lit(n as f64); n]));
            }
        }
        out
    }
}

struct MatmulPlan {
    m: usize,
    k: usize,
    n: usize,
    batch: Vec<usize>,
    stride_a: Vec<usize>,
    stride_b: Vec<usize>,
}

impl MatmulPlan {
    fn new(sa: &[usize], sb: &[usize]) -> Result<Self> {
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::dim("matmul", format!("operands {sa:?} and {sb:?} need rank >= 2")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(Error::dim("matmul", format!("inner extents differ: {sa:?} x {sb:?}")));
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let batch = kernels::broadcast_shape(ba, bb)
            .ok_or_else(|| Error::dim("matmul", format!("batch extents of {sa:?} x {sb:?} do not broadcast")))?;
        Ok(MatmulPlan {
            m,
            k,
            n,
            stride_a: kernels::broadcast_strides(ba, &batch),
            stride_b: kernels::broadcast_strides(bb, &batch),
            batch,
        })
    }

    fn batch_count(&self) -> usize {
        self.batch.iter().product()
    }

    fn out_shape(&self) -> Vec<usize> {
        let mut s = self.batch.clone();
        s.extend([self.m, self.n]);
        s
    }

    /// `f(out_batch, a_batch, b_batch)` in batch order.
    fn for_each_batch(&self, mut f: impl FnMut(usize, usize, usize)) {
        if self.batch.is_empty() {
            f(0, 0, 0);
        } else {
            kernels::for_each_strided(&self.batch, [&self.stride_a, &self.stride_b], |o, [a, b]| f(o, a, b));
        }
    }
}
