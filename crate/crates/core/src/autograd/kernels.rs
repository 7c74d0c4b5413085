//! Forward and backward kernels on raw buffers. These carry no graph state;
//! [`super::Tape`] wires them together.

use crate::error::{Error, Result};
use crate::tensor::{fmt_shape, numel, strides, Scalar, Tensor};

/// Geometry of a 2-D convolution. Same padding on all four sides.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for ConvGeom {
    fn default() -> Self {
        ConvGeom {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl ConvGeom {
    /// Padding that keeps the spatial size at stride 1 for an odd kernel.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        ConvGeom {
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
            groups: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn out_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < span {
            None
        } else {
            Some((padded - span) / self.stride + 1)
        }
    }
}

pub(crate) struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

pub(crate) fn conv_dims(
    x: &[usize],
    w: &[usize],
    bias: Option<&[usize]>,
    g: &ConvGeom,
) -> Result<ConvDims> {
    if x.len() != 4 || w.len() != 4 {
        return Err(Error::shape(
            "conv2d",
            "input [N,C,H,W] and weight [Cout,Cin/groups,kH,kW]",
            format!("{} and {}", fmt_shape(x), fmt_shape(w)),
        ));
    }
    if g.groups == 0 || g.stride == 0 || g.dilation == 0 {
        return Err(Error::Usage("conv2d: stride, dilation and groups must be positive".into()));
    }
    let (n, cin, h, wd) = (x[0], x[1], x[2], x[3]);
    let (cout, cpg, kh, kw) = (w[0], w[1], w[2], w[3]);
    if cin % g.groups != 0 || cout % g.groups != 0 || cpg * g.groups != cin {
        return Err(Error::shape(
            "conv2d",
            format!(
                "C_in and C_out divisible by groups={} with weight in-channels C_in/groups",
                g.groups
            ),
            format!("input {} weight {}", fmt_shape(x), fmt_shape(w)),
        ));
    }
    if let Some(b) = bias {
        if b != [cout] {
            return Err(Error::shape("conv2d bias", fmt_shape(&[cout]), fmt_shape(b)));
        }
    }
    let ho = g.out_extent(h, kh);
    let wo = g.out_extent(wd, kw);
    match (ho, wo) {
        (Some(ho), Some(wo)) => Ok(ConvDims {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            ho,
            wo,
        }),
        _ => Err(Error::shape(
            "conv2d",
            "output extent >= 1",
            format!("input {} kernel {}×{} {:?}", fmt_shape(x), kh, kw, g),
        )),
    }
}

impl ConvDims {
    pub(crate) fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.cout, self.ho, self.wo]
    }

    fn is_pointwise(&self, g: &ConvGeom) -> bool {
        self.kh == 1 && self.kw == 1 && g.stride == 1 && g.padding == 0
    }

    fn is_depthwise(&self, g: &ConvGeom) -> bool {
        g.groups == self.cin && g.groups == self.cout
    }
}

/// Unfold one group of one sample into a `[cpg·kh·kw, ho·wo]` column matrix.
fn im2col<T: Scalar>(x: &[T], d: &ConvDims, g: &ConvGeom, c0: usize, cpg: usize, col: &mut [T]) {
    let p = d.ho * d.wo;
    for c in 0..cpg {
        let plane = &x[(c0 + c) * d.h * d.w..(c0 + c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..d.ho {
                    let iy = (oy * g.stride + ki * g.dilation) as isize - g.padding as isize;
                    let drow = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    if iy < 0 || iy >= d.h as isize {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj * g.dilation) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= d.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a column matrix back into the input plane.
fn col2im<T: Scalar>(col: &[T], d: &ConvDims, g: &ConvGeom, c0: usize, cpg: usize, dx: &mut [T]) {
    let p = d.ho * d.wo;
    for c in 0..cpg {
        let plane = &mut dx[(c0 + c) * d.h * d.w..(c0 + c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..d.ho {
                    let iy = (oy * g.stride + ki * g.dilation) as isize - g.padding as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.wo {
                        let ix = (ox * g.stride + kj * g.dilation) as isize - g.padding as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Valid output index range `[lo, hi)` along one axis for kernel tap offset
/// `tap`, i.e. outputs whose input coordinate `o·stride + tap − pad` is in bounds.
fn tap_range(out: usize, input: usize, stride: usize, tap: usize, pad: usize) -> (usize, usize) {
    let lo = if tap >= pad {
        0
    } else {
        (pad - tap).div_ceil(stride)
    };
    // largest o with o·stride + tap − pad <= input − 1
    let hi = if input + pad < tap + 1 {
        0
    } else {
        ((input + pad - tap - 1) / stride + 1).min(out)
    };
    (lo, hi.max(lo))
}

fn depthwise_forward<T: Scalar>(x: &[T], w: &[T], d: &ConvDims, g: &ConvGeom, y: &mut [T]) {
    let (hw, ohw) = (d.h * d.w, d.ho * d.wo);
    for n in 0..d.n {
        for c in 0..d.cin {
            let plane = &x[(n * d.cin + c) * hw..][..hw];
            let out = &mut y[(n * d.cout + c) * ohw..][..ohw];
            let kern = &w[c * d.kh * d.kw..][..d.kh * d.kw];
            for ki in 0..d.kh {
                let (y0, y1) = tap_range(d.ho, d.h, g.stride, ki * g.dilation, g.padding);
                for kj in 0..d.kw {
                    let wv = kern[ki * d.kw + kj];
                    let (x0, x1) = tap_range(d.wo, d.w, g.stride, kj * g.dilation, g.padding);
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ki * g.dilation - g.padding;
                        let src = &plane[iy * d.w..];
                        let dst = &mut out[oy * d.wo..];
                        for ox in x0..x1 {
                            dst[ox] += wv * src[ox * g.stride + kj * g.dilation - g.padding];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn depthwise_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    d: &ConvDims,
    g: &ConvGeom,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
) {
    let (hw, ohw) = (d.h * d.w, d.ho * d.wo);
    let kk = d.kh * d.kw;
    let mut dx = dx;
    let mut dw = dw;
    for n in 0..d.n {
        for c in 0..d.cin {
            let plane = &x[(n * d.cin + c) * hw..][..hw];
            let gout = &dy[(n * d.cout + c) * ohw..][..ohw];
            for ki in 0..d.kh {
                let (y0, y1) = tap_range(d.ho, d.h, g.stride, ki * g.dilation, g.padding);
                for kj in 0..d.kw {
                    let (x0, x1) = tap_range(d.wo, d.w, g.stride, kj * g.dilation, g.padding);
                    let tap = c * kk + ki * d.kw + kj;
                    if let Some(dw) = dw.as_deref_mut() {
                        let mut acc = T::zero();
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ki * g.dilation - g.padding;
                            for ox in x0..x1 {
                                let ix = ox * g.stride + kj * g.dilation - g.padding;
                                acc += gout[oy * d.wo + ox] * plane[iy * d.w + ix];
                            }
                        }
                        dw[tap] += acc;
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = w[tap];
                        let gin = &mut dx[(n * d.cin + c) * hw..][..hw];
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ki * g.dilation - g.padding;
                            for ox in x0..x1 {
                                let ix = ox * g.stride + kj * g.dilation - g.padding;
                                gin[iy * d.w + ix] += wv * gout[oy * d.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Result<Tensor<T>> {
    let d = conv_dims(x.shape(), w.shape(), bias.map(|b| b.shape()), g)?;
    let mut y = vec![T::zero(); numel(&d.out_shape())];
    let (xs, ws) = (x.data(), w.data());
    let ohw = d.ho * d.wo;
    if d.is_depthwise(g) && !d.is_pointwise(g) {
        depthwise_forward(xs, ws, &d, g, &mut y);
    } else {
        let cpg = d.cin / g.groups;
        let opg = d.cout / g.groups;
        let kc = cpg * d.kh * d.kw;
        let pointwise = d.is_pointwise(g);
        let mut col = if pointwise { Vec::new() } else { vec![T::zero(); kc * ohw] };
        for n in 0..d.n {
            let xn = &xs[n * d.cin * d.h * d.w..(n + 1) * d.cin * d.h * d.w];
            for grp in 0..g.groups {
                let cols: &[T] = if pointwise {
                    &xn[grp * cpg * ohw..(grp + 1) * cpg * ohw]
                } else {
                    im2col(xn, &d, g, grp * cpg, cpg, &mut col);
                    &col
                };
                let wg = &ws[grp * opg * kc..(grp + 1) * opg * kc];
                let yg = &mut y[(n * d.cout + grp * opg) * ohw..(n * d.cout + (grp + 1) * opg) * ohw];
                T::gemm(opg, kc, ohw, wg, kc as isize, 1, cols, ohw as isize, 1, yg, false);
            }
        }
    }
    if let Some(b) = bias {
        for n in 0..d.n {
            for (c, &bv) in b.data().iter().enumerate() {
                y[(n * d.cout + c) * ohw..(n * d.cout + c + 1) * ohw]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    Ok(Tensor::from_parts(d.out_shape(), y))
}

/// Returns `(dx, dw, db)`; each is computed only when requested.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    has_bias: bool,
    g: &ConvGeom,
    dy: &Tensor<T>,
    need: (bool, bool, bool),
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let bshape = [w.shape()[0]];
    let d = conv_dims(x.shape(), w.shape(), has_bias.then_some(&bshape[..]), g)
        .expect("shapes validated in forward");
    let ohw = d.ho * d.wo;
    let mut dx = need.0.then(|| vec![T::zero(); x.numel()]);
    let mut dw = need.1.then(|| vec![T::zero(); w.numel()]);
    let (xs, ws, dys) = (x.data(), w.data(), dy.data());
    if d.is_depthwise(g) && !d.is_pointwise(g) {
        depthwise_backward(xs, ws, dys, &d, g, dx.as_deref_mut(), dw.as_deref_mut());
    } else if need.0 || need.1 {
        let cpg = d.cin / g.groups;
        let opg = d.cout / g.groups;
        let kc = cpg * d.kh * d.kw;
        let pointwise = d.is_pointwise(g);
        let mut col = vec![T::zero(); kc * ohw];
        let chw = d.cin * d.h * d.w;
        for n in 0..d.n {
            let xn = &xs[n * chw..(n + 1) * chw];
            for grp in 0..g.groups {
                let dyg = &dys[(n * d.cout + grp * opg) * ohw..(n * d.cout + (grp + 1) * opg) * ohw];
                if let Some(dw) = dw.as_deref_mut() {
                    let cols: &[T] = if pointwise {
                        &xn[grp * cpg * ohw..(grp + 1) * cpg * ohw]
                    } else {
                        im2col(xn, &d, g, grp * cpg, cpg, &mut col);
                        &col
                    };
                    // dW_g[opg×kc] += dY_g[opg×P] · colᵀ[P×kc]
                    let dwg = &mut dw[grp * opg * kc..(grp + 1) * opg * kc];
                    T::gemm(opg, ohw, kc, dyg, ohw as isize, 1, cols, 1, ohw as isize, dwg, true);
                }
                if let Some(dx) = dx.as_deref_mut() {
                    let wg = &ws[grp * opg * kc..(grp + 1) * opg * kc];
                    let dxn = &mut dx[n * chw..(n + 1) * chw];
                    if pointwise {
                        let dst = &mut dxn[grp * cpg * ohw..(grp + 1) * cpg * ohw];
                        T::gemm(kc, opg, ohw, wg, 1, kc as isize, dyg, ohw as isize, 1, dst, true);
                    } else {
                        // dcol[kc×P] = W_gᵀ[kc×opg] · dY_g[opg×P]
                        T::gemm(kc, opg, ohw, wg, 1, kc as isize, dyg, ohw as isize, 1, &mut col, false);
                        col2im(&col, &d, g, grp * cpg, cpg, dxn);
                    }
                }
            }
        }
    }
    let db = (has_bias && need.2).then(|| {
        let mut db = vec![T::zero(); d.cout];
        for n in 0..d.n {
            for (c, acc) in db.iter_mut().enumerate() {
                *acc += dys[(n * d.cout + c) * ohw..(n * d.cout + c + 1) * ohw]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
        }
        Tensor::from_parts(vec![d.cout], db)
    });
    (
        dx.map(|v| Tensor::from_parts(x.shape().to_vec(), v)),
        dw.map(|v| Tensor::from_parts(w.shape().to_vec(), v)),
        db,
    )
}

/// Shape of `a @ b` for `[..., M, K] @ [..., K, P]` with equal leading dims.
pub(crate) fn matmul_shape(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize, Vec<usize>)> {
    let err = || {
        Error::shape(
            "matmul",
            "[...,M,K] @ [...,K,P] with equal leading dims",
            format!("{} @ {}", fmt_shape(a), fmt_shape(b)),
        )
    };
    if a.len() < 2 || a.len() != b.len() {
        return Err(err());
    }
    let r = a.len();
    let (m, k, k2, p) = (a[r - 2], a[r - 1], b[r - 2], b[r - 1]);
    if k != k2 || a[..r - 2] != b[..r - 2] {
        return Err(err());
    }
    let batch = numel(&a[..r - 2]);
    let mut out = a[..r - 2].to_vec();
    out.extend([m, p]);
    Ok((batch, m, k, p, out))
}

pub fn matmul_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, m, k, p, shape) = matmul_shape(a.shape(), b.shape())?;
    let mut c = vec![T::zero(); batch * m * p];
    for i in 0..batch {
        T::gemm(
            m,
            k,
            p,
            &a.data()[i * m * k..],
            k as isize,
            1,
            &b.data()[i * k * p..],
            p as isize,
            1,
            &mut c[i * m * p..(i + 1) * m * p],
            false,
        );
    }
    Ok(Tensor::from_parts(shape, c))
}

pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    dc: &Tensor<T>,
    need: (bool, bool),
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (batch, m, k, p, _) = matmul_shape(a.shape(), b.shape()).expect("validated");
    let da = need.0.then(|| {
        let mut da = vec![T::zero(); a.numel()];
        for i in 0..batch {
            // dA = dC · Bᵀ
            T::gemm(
                m,
                p,
                k,
                &dc.data()[i * m * p..],
                p as isize,
                1,
                &b.data()[i * k * p..],
                1,
                p as isize,
                &mut da[i * m * k..(i + 1) * m * k],
                false,
            );
        }
        Tensor::from_parts(a.shape().to_vec(), da)
    });
    let db = need.1.then(|| {
        let mut db = vec![T::zero(); b.numel()];
        for i in 0..batch {
            // dB = Aᵀ · dC
            T::gemm(
                k,
                m,
                p,
                &a.data()[i * m * k..],
                1,
                k as isize,
                &dc.data()[i * m * p..],
                p as isize,
                1,
                &mut db[i * k * p..(i + 1) * k * p],
                false,
            );
        }
        Tensor::from_parts(b.shape().to_vec(), db)
    });
    (da, db)
}

/// Check that `rhs` broadcasts into `lhs`: equal rank, each rhs extent equal
/// to the lhs extent or 1.
pub(crate) fn check_broadcast(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<()> {
    let ok = lhs.len() == rhs.len() && lhs.iter().zip(rhs).all(|(&l, &r)| r == l || r == 1);
    if ok {
        Ok(())
    } else {
        Err(Error::shape(
            op,
            format!("rhs broadcastable into {} (same rank, extents equal or 1)", fmt_shape(lhs)),
            fmt_shape(rhs),
        ))
    }
}

/// Visit `(lhs_flat, rhs_flat)` index pairs of a broadcast binary op, in
/// row-major order of the lhs.
pub(crate) fn for_each_broadcast(lhs: &[usize], rhs: &[usize], mut f: impl FnMut(usize, usize)) {
    if lhs == rhs {
        (0..numel(lhs)).for_each(|i| f(i, i));
        return;
    }
    let rs = strides(rhs);
    let eff: Vec<usize> = rhs
        .iter()
        .zip(&rs)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let rank = lhs.len();
    // innermost axis handled in a tight loop
    let inner = lhs[rank - 1];
    let inner_stride = eff[rank - 1];
    let outer = numel(&lhs[..rank - 1]);
    let mut idx = vec![0usize; rank.saturating_sub(1)];
    let mut li = 0;
    for _ in 0..outer {
        let base: usize = idx.iter().zip(&eff).map(|(i, s)| i * s).sum();
        for j in 0..inner {
            f(li, base + j * inner_stride);
            li += 1;
        }
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < lhs[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

pub(crate) fn permute_forward<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let shape = x.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(x.numel());
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let data = x.data();
    for _ in 0..x.numel() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::from_parts(out_shape, out)
}

pub(crate) fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// `(outer, axis extent, inner)` decomposition around `axis`.
pub(crate) fn split_around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

pub(crate) fn slice_forward<T: Scalar>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let (outer, ext, inner) = split_around(x.shape(), axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * ext + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::from_parts(shape, out)
}

pub(crate) fn concat_forward<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Tensor<T> {
    let first = parts[0].shape();
    let outer = numel(&first[..axis]);
    let inner = numel(&first[axis + 1..]);
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let e = p.shape()[axis];
            out.extend_from_slice(&p.data()[o * e * inner..(o + 1) * e * inner]);
        }
    }
    let mut shape = first.to_vec();
    shape[axis] = total;
    Tensor::from_parts(shape, out)
}

pub(crate) fn upsample2x_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let mut out = vec![T::zero(); planes * 4 * h * w];
    for p in 0..planes {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::from_parts(vec![s[0], s[1], 2 * h, 2 * w], out)
}

pub(crate) fn upsample2x_backward<T: Scalar>(dy: &Tensor<T>, in_shape: &[usize]) -> Tensor<T> {
    let (planes, h, w) = (in_shape[0] * in_shape[1], in_shape[2], in_shape[3]);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dy.data()[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dx[p * h * w + (y / 2) * w + xx / 2] += src[y * 2 * w + xx];
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), dx)
}

/// 2×2 max pooling with stride 2; returns the output and the flat argmax of
/// every output cell (first maximum wins on ties).
pub(crate) fn maxpool2x2_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let s = x.shape();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut arg = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = p * h * w + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = p * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                    if x.data()[i] > x.data()[best] {
                        best = i;
                    }
                }
                out.push(x.data()[best]);
                arg.push(best);
            }
        }
    }
    (Tensor::from_parts(vec![s[0], s[1], ho, wo], out), arg)
}

pub(crate) fn softmax_last_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let d = *x.shape().last().expect("rank >= 1");
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v = *v / z);
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// Per-channel batch statistics over N, H, W: (mean, biased variance).
pub(crate) fn channel_stats<T: Scalar>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let s = x.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let count = T::of((n * hw) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = T::zero();
        for b in 0..n {
            acc += x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
        }
        let m = acc / count;
        let mut sq = T::zero();
        for b in 0..n {
            for &v in &x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                sq += (v - m) * (v - m);
            }
        }
        mean[ch] = m;
        var[ch] = sq / count;
    }
    (mean, var)
}
