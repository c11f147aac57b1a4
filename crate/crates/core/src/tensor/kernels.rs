//! Raw loops shared by forward and backward rules.

use super::Real;

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Right-aligned numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `input` expressed in the index space of `out`, zero on broadcast axes.
pub(crate) fn broadcast_strides(input: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(input);
    let offset = out.len() - input.len();
    (0..out.len())
        .map(|i| {
            if i < offset || input[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Visits every index of `shape` in row-major order, passing the linear offsets
/// of each strided operand. The last axis is the inner loop.
pub(crate) fn for_each_strided<const K: usize>(
    shape: &[usize],
    operand_strides: [&[usize]; K],
    mut f: impl FnMut(usize, [usize; K]),
) {
    let numel: usize = shape.iter().product();
    if numel == 0 {
        return;
    }
    if shape.is_empty() {
        f(0, [0; K]);
        return;
    }
    let rank = shape.len();
    let inner = shape[rank - 1];
    let inner_strides: [usize; K] = std::array::from_fn(|k| operand_strides[k][rank - 1]);
    let mut idx = vec![0usize; rank];
    let mut base = [0usize; K];
    let mut linear = 0;
    loop {
        let mut offs = base;
        for _ in 0..inner {
            f(linear, offs);
            linear += 1;
            for k in 0..K {
                offs[k] += inner_strides[k];
            }
        }
        // advance outer odometer
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            for k in 0..K {
                base[k] += operand_strides[k][axis];
            }
            if idx[axis] < shape[axis] {
                break;
            }
            for k in 0..K {
                base[k] -= operand_strides[k][axis] * shape[axis];
            }
            idx[axis] = 0;
        }
    }
}

/// `out[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] · b[k,n]ᵀ`
pub(crate) fn gemm_nt_acc<T: Real>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            out[i * k + p] += acc;
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · g[m,n]`
pub(crate) fn gemm_tn_acc<T: Real>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    /// Output index range along one axis for kernel tap `k` that lands inside the input.
    fn valid(&self, k: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let p = self.padding as isize;
        let k = k as isize;
        // o*s + k - p in [0, extent)
        let lo = (p - k).max(0);
        let lo = (lo + s - 1) / s;
        let hi_pos = extent as isize - 1 + p - k;
        if hi_pos < 0 {
            return (0, 0);
        }
        let hi = (hi_pos / s + 1).min(out_extent as isize);
        if lo >= hi {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }

    /// Calls `f(x_offset, w_offset, out_offset, run_len)` for every contiguous run of
    /// output pixels touched by one (n, oc, ic, ky, kx) tap, in a fixed order.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let cin_g = self.cin_g();
        let cout_g = self.cout_g();
        for n in 0..self.n {
            for oc in 0..self.c_out {
                let g = oc / cout_g;
                for icg in 0..cin_g {
                    let ic = g * cin_g + icg;
                    for ky in 0..self.kh {
                        let (oy0, oy1) = self.valid(ky, self.h, self.oh);
                        for kx in 0..self.kw {
                            let (ox0, ox1) = self.valid(kx, self.w, self.ow);
                            if ox0 >= ox1 {
                                continue;
                            }
                            let w_off = ((oc * cin_g + icg) * self.kh + ky) * self.kw + kx;
                            for oy in oy0..oy1 {
                                let iy = oy * self.stride + ky - self.padding;
                                let ix0 = ox0 * self.stride + kx - self.padding;
                                let x_off = ((n * self.c_in + ic) * self.h + iy) * self.w + ix0;
                                let o_off = ((n * self.c_out + oc) * self.oh + oy) * self.ow + ox0;
                                f(x_off, w_off, o_off, ox1 - ox0, self.stride);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    geom: &ConvGeom,
) -> Vec<T> {
    let plane = geom.oh * geom.ow;
    let mut out = vec![T::zero(); geom.n * geom.c_out * plane];
    if let Some(b) = bias {
        for n in 0..geom.n {
            for oc in 0..geom.c_out {
                let start = (n * geom.c_out + oc) * plane;
                out[start..start + plane].fill(b[oc]);
            }
        }
    }
    geom.for_each_tap(|x_off, w_off, o_off, len, stride| {
        let wv = weight[w_off];
        let dst = &mut out[o_off..o_off + len];
        if stride == 1 {
            for (o, &xv) in dst.iter_mut().zip(&x[x_off..x_off + len]) {
                *o += wv * xv;
            }
        } else {
            for (i, o) in dst.iter_mut().enumerate() {
                *o += wv * x[x_off + i * stride];
            }
        }
    });
    out
}

pub(crate) fn conv2d_backward_input<T: Real>(g: &[T], weight: &[T], geom: &ConvGeom) -> Vec<T> {
    let mut gx = vec![T::zero(); geom.n * geom.c_in * geom.h * geom.w];
    geom.for_each_tap(|x_off, w_off, o_off, len, stride| {
        let wv = weight[w_off];
        for i in 0..len {
            gx[x_off + i * stride] += wv * g[o_off + i];
        }
    });
    gx
}

pub(crate) fn conv2d_backward_weight<T: Real>(g: &[T], x: &[T], geom: &ConvGeom) -> Vec<T> {
    let mut gw = vec![T::zero(); geom.c_out * geom.cin_g() * geom.kh * geom.kw];
    geom.for_each_tap(|x_off, w_off, o_off, len, stride| {
        let mut acc = T::zero();
        for i in 0..len {
            acc += g[o_off + i] * x[x_off + i * stride];
        }
        gw[w_off] += acc;
    });
    gw
}

pub(crate) fn conv2d_backward_bias<T: Real>(g: &[T], geom: &ConvGeom) -> Vec<T> {
    let plane = geom.oh * geom.ow;
    let mut gb = vec![T::zero(); geom.c_out];
    for n in 0..geom.n {
        for (oc, b) in gb.iter_mut().enumerate() {
            let start = (n * geom.c_out + oc) * plane;
            for &v in &g[start..start + plane] {
                *b += v;
            }
        }
    }
    gb
}

/// `[n, c·r², h, w] -> [n, c, h·r, w·r]`; `inverse` runs the opposite direction
/// with `shape` still describing the shuffled (input) side.
pub(crate) fn pixel_shuffle<T: Real>(x: &[T], shape: &[usize], r: usize, inverse: bool) -> Vec<T> {
    let (n, cr2, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let c = cr2 / (r * r);
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let src_c = ch * r * r + i * r + j;
                    for y in 0..h {
                        for xx in 0..w {
                            let lo = ((b * cr2 + src_c) * h + y) * w + xx;
                            let hi = ((b * c + ch) * h * r + y * r + i) * w * r + xx * r + j;
                            if inverse {
                                out[lo] = x[hi];
                            } else {
                                out[hi] = x[lo];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn permute<T: Real>(x: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(x.len());
    for_each_strided(&out_shape, [&src_strides], |_, [s]| out.push(x[s]));
    (out, out_shape)
}

/// Splits `shape` around `axis` into (outer, extent, inner) counts.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn roll<T: Real>(x: &[T], shape: &[usize], axis: usize, shift: isize) -> Vec<T> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut out = vec![T::zero(); x.len()];
    let s = shift.rem_euclid(n as isize) as usize;
    for o in 0..outer {
        for i in 0..n {
            let dst = (i + s) % n;
            let src_off = (o * n + i) * inner;
            let dst_off = (o * n + dst) * inner;
            out[dst_off..dst_off + inner].copy_from_slice(&x[src_off..src_off + inner]);
        }
    }
    out
}

/// Neumaier-compensated sum in index order.
pub(crate) fn compensated_sum<T: Real>(xs: &[T]) -> T {
    let (mut sum, mut comp) = (T::zero(), T::zero());
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
