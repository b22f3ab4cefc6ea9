//! Forward and backward kernels shared by the recording graph and the eager
//! evaluator. Convolution is im2col + GEMM, chunked over output depth planes
//! so the column buffer stays bounded.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Upper bound on column-buffer elements per GEMM chunk.
const COL_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    /// Cubic kernel `k` with "same" padding at the given stride.
    pub fn cube(k: usize, stride: usize) -> Self {
        ConvGeom { kernel: [k; 3], stride: [stride; 3], pad: [k / 2; 3] }
    }

    /// `k x k` in-plane kernel for images stored with `D = 1`.
    pub fn planar(k: usize) -> Self {
        ConvGeom { kernel: [1, k, k], stride: [1; 3], pad: [0, k / 2, k / 2] }
    }

    pub fn pointwise() -> Self {
        ConvGeom { kernel: [1; 3], stride: [1; 3], pad: [0; 3] }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.pad == [0; 3]
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn out_dims(&self, d: usize, h: usize, w: usize) -> Result<[usize; 3]> {
        let inp = [d, h, w];
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = inp[a] + 2 * self.pad[a];
            if padded < self.kernel[a] {
                bail!(Dimension, "extent {} too small for kernel {}", inp[a], self.kernel[a]);
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }
}

struct ConvPlan {
    cin: usize,
    cout: usize,
    inp: [usize; 3],
    out: [usize; 3],
    geom: ConvGeom,
    k: usize,
    planes_per_chunk: usize,
}

impl ConvPlan {
    fn new<T: Scalar>(x: Shape, w: Shape, geom: ConvGeom) -> Result<Self> {
        if w.c() != x.c() || [w.d(), w.h(), w.w()] != geom.kernel {
            bail!(Shape, "weight {w} incompatible with input {x} and kernel {:?}", geom.kernel);
        }
        let out = geom.out_dims(x.d(), x.h(), x.w())?;
        let k = x.c() * geom.taps();
        let plane = out[1] * out[2];
        let planes_per_chunk = (COL_BUDGET / (k * plane).max(1)).clamp(1, out[0]);
        Ok(ConvPlan {
            cin: x.c(),
            cout: w.n(),
            inp: [x.d(), x.h(), x.w()],
            out,
            geom,
            k,
            planes_per_chunk,
        })
    }

    fn out_spatial(&self) -> usize {
        self.out.iter().product()
    }

    fn in_spatial(&self) -> usize {
        self.inp.iter().product()
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.out[0])
            .step_by(self.planes_per_chunk)
            .map(move |z0| (z0, (z0 + self.planes_per_chunk).min(self.out[0])))
    }

    /// Fill `col` (`k x cols`) for output planes `z0..z1` of one sample.
    fn im2col<T: Scalar>(&self, x: &[T], z0: usize, z1: usize, col: &mut [T]) {
        let [id, ih, iw] = self.inp;
        let [_, oh, ow] = self.out;
        let [kd, kh, kw] = self.geom.kernel;
        let [sd, sh, sw] = self.geom.stride;
        let [pd, ph, pw] = self.geom.pad;
        let cols = (z1 - z0) * oh * ow;
        let mut row = 0;
        for ci in 0..self.cin {
            let xc = &x[ci * id * ih * iw..(ci + 1) * id * ih * iw];
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let dst = &mut col[row * cols..(row + 1) * cols];
                        row += 1;
                        let mut p = 0;
                        for oz in z0..z1 {
                            let iz = (oz * sd + kz) as isize - pd as isize;
                            if iz < 0 || iz >= id as isize {
                                dst[p..p + oh * ow].fill(T::zero());
                                p += oh * ow;
                                continue;
                            }
                            let src_plane = &xc[iz as usize * ih * iw..(iz as usize + 1) * ih * iw];
                            for oy in 0..oh {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                let seg = &mut dst[p..p + ow];
                                p += ow;
                                if iy < 0 || iy >= ih as isize {
                                    seg.fill(T::zero());
                                    continue;
                                }
                                let src = &src_plane[iy as usize * iw..(iy as usize + 1) * iw];
                                if sw == 1 {
                                    // ix = ox + kx - pw must lie in [0, iw)
                                    let lo = pw.saturating_sub(kx).min(ow);
                                    let hi = (iw + pw).saturating_sub(kx).min(ow).max(lo);
                                    seg[..lo].fill(T::zero());
                                    seg[hi..].fill(T::zero());
                                    if hi > lo {
                                        let s0 = lo + kx - pw;
                                        seg[lo..hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                                    }
                                } else {
                                    for (ox, v) in seg.iter_mut().enumerate() {
                                        let ix = (ox * sw + kx) as isize - pw as isize;
                                        *v = if ix < 0 || ix >= iw as isize {
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
            }
        }
    }

    /// Scatter-add `col` back into the input gradient `dx`.
    fn col2im<T: Scalar>(&self, col: &[T], z0: usize, z1: usize, dx: &mut [T]) {
        let [id, ih, iw] = self.inp;
        let [_, oh, ow] = self.out;
        let [kd, kh, kw] = self.geom.kernel;
        let [sd, sh, sw] = self.geom.stride;
        let [pd, ph, pw] = self.geom.pad;
        let cols = (z1 - z0) * oh * ow;
        let mut row = 0;
        for ci in 0..self.cin {
            let xc = &mut dx[ci * id * ih * iw..(ci + 1) * id * ih * iw];
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let src = &col[row * cols..(row + 1) * cols];
                        row += 1;
                        let mut p = 0;
                        for oz in z0..z1 {
                            let iz = (oz * sd + kz) as isize - pd as isize;
                            if iz < 0 || iz >= id as isize {
                                p += oh * ow;
                                continue;
                            }
                            let plane = &mut xc[iz as usize * ih * iw..(iz as usize + 1) * ih * iw];
                            for oy in 0..oh {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                let seg = &src[p..p + ow];
                                p += ow;
                                if iy < 0 || iy >= ih as isize {
                                    continue;
                                }
                                let dst = &mut plane[iy as usize * iw..(iy as usize + 1) * iw];
                                for (ox, &g) in seg.iter().enumerate() {
                                    let ix = (ox * sw + kx) as isize - pw as isize;
                                    if ix >= 0 && ix < iw as isize {
                                        dst[ix as usize] += g;
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

/// 3-D convolution (cross-correlation) with optional bias.
pub fn conv_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let plan = ConvPlan::new::<T>(xs, w.shape(), geom)?;
    if let Some(b) = b {
        if b.shape().len() != plan.cout {
            bail!(Shape, "bias {} does not match {} output channels", b.shape(), plan.cout);
        }
    }
    let [od, oh, ow] = plan.out;
    let out_shape = Shape::new(xs.n(), plan.cout, od, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let p_out = plan.out_spatial();
    let p_in = plan.in_spatial();
    let wd = w.data();
    let mut col = if geom.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); plan.k * plan.planes_per_chunk * oh * ow]
    };
    for n in 0..xs.n() {
        let xn = &x.data()[n * plan.cin * p_in..(n + 1) * plan.cin * p_in];
        let on = &mut out.data_mut()[n * plan.cout * p_out..(n + 1) * plan.cout * p_out];
        if geom.is_pointwise() {
            crate::scalar::matmul(plan.cout, plan.k, p_out, wd, xn, on, false);
        } else {
            for (z0, z1) in plan.chunks() {
                let cols = (z1 - z0) * oh * ow;
                plan.im2col(xn, z0, z1, &mut col[..plan.k * cols]);
                unsafe {
                    T::gemm(
                        plan.cout,
                        plan.k,
                        cols,
                        T::one(),
                        wd.as_ptr(),
                        plan.k as isize,
                        1,
                        col.as_ptr(),
                        cols as isize,
                        1,
                        T::zero(),
                        on.as_mut_ptr().add(z0 * oh * ow),
                        p_out as isize,
                        1,
                    );
                }
            }
        }
        if let Some(b) = b {
            for (co, &bv) in b.data().iter().enumerate() {
                for v in &mut on[co * p_out..(co + 1) * p_out] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv_forward`]; each output is produced only when requested.
pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    geom: ConvGeom,
    dout: &Tensor<T>,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let xs = x.shape();
    let plan = ConvPlan::new::<T>(xs, w.shape(), geom)?;
    let [_, oh, ow] = plan.out;
    let p_out = plan.out_spatial();
    let p_in = plan.in_spatial();
    let mut dx = need[0].then(|| Tensor::zeros(xs));
    let mut dw = need[1].then(|| Tensor::zeros(w.shape()));
    let mut db = need[2].then(|| Tensor::zeros(Shape::new(plan.cout, 1, 1, 1, 1)));
    let wd = w.data();
    let chunk_cols = plan.planes_per_chunk * oh * ow;
    let mut col = vec![T::zero(); if geom.is_pointwise() { 0 } else { plan.k * chunk_cols }];
    let mut dcol = vec![T::zero(); if dx.is_some() && !geom.is_pointwise() { plan.k * chunk_cols } else { 0 }];
    for n in 0..xs.n() {
        let xn = &x.data()[n * plan.cin * p_in..(n + 1) * plan.cin * p_in];
        let gn = &dout.data()[n * plan.cout * p_out..(n + 1) * plan.cout * p_out];
        if let Some(db) = db.as_mut() {
            for (co, v) in db.data_mut().iter_mut().enumerate() {
                *v += gn[co * p_out..(co + 1) * p_out].iter().copied().sum::<T>();
            }
        }
        if geom.is_pointwise() {
            if let Some(dw) = dw.as_mut() {
                crate::scalar::matmul_a_bt(plan.cout, p_out, plan.k, gn, xn, dw.data_mut(), true);
            }
            if let Some(dx) = dx.as_mut() {
                let dxn = &mut dx.data_mut()[n * plan.cin * p_in..(n + 1) * plan.cin * p_in];
                crate::scalar::matmul_at_b(plan.k, plan.cout, p_in, wd, gn, dxn, true);
            }
            continue;
        }
        for (z0, z1) in plan.chunks() {
            let cols = (z1 - z0) * oh * ow;
            let g_ptr = unsafe { gn.as_ptr().add(z0 * oh * ow) };
            if let Some(dw) = dw.as_mut() {
                plan.im2col(xn, z0, z1, &mut col[..plan.k * cols]);
                unsafe {
                    T::gemm(
                        plan.cout,
                        cols,
                        plan.k,
                        T::one(),
                        g_ptr,
                        p_out as isize,
                        1,
                        col.as_ptr(),
                        1,
                        cols as isize,
                        T::one(),
                        dw.data_mut().as_mut_ptr(),
                        plan.k as isize,
                        1,
                    );
                }
            }
            if let Some(dx) = dx.as_mut() {
                unsafe {
                    T::gemm(
                        plan.k,
                        plan.cout,
                        cols,
                        T::one(),
                        wd.as_ptr(),
                        1,
                        plan.k as isize,
                        g_ptr,
                        p_out as isize,
                        1,
                        T::zero(),
                        dcol.as_mut_ptr(),
                        cols as isize,
                        1,
                    );
                }
                let dxn = &mut dx.data_mut()[n * plan.cin * p_in..(n + 1) * plan.cin * p_in];
                plan.col2im(&dcol[..plan.k * cols], z0, z1, dxn);
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

/// 2x2 max pooling over `H, W` (floor mode). Returns the flat argmax of each
/// output element within the input buffer.
pub fn maxpool2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let s = x.shape();
    let (oh, ow) = (s.h() / 2, s.w() / 2);
    if oh == 0 || ow == 0 {
        bail!(Dimension, "cannot 2x2-pool {s}");
    }
    let out_shape = Shape::new(s.n(), s.c(), s.d(), oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let mut arg = vec![0u32; out_shape.len()];
    let planes = s.n() * s.c() * s.d();
    let xd = x.data();
    let od = out.data_mut();
    for p in 0..planes {
        let base = p * s.h() * s.w();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * s.w() + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * s.w() + 2 * ox + dx;
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                let o = p * oh * ow + oy * ow + ox;
                od[o] = xd[best];
                arg[o] = best as u32;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2_backward<T: Scalar>(in_shape: Shape, arg: &[u32], dout: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    let d = dx.data_mut();
    for (&i, &g) in arg.iter().zip(dout.data()) {
        d[i as usize] += g;
    }
    dx
}

/// Source taps for half-pixel-centred bilinear resampling of one axis.
fn bilinear_taps(inp: usize, out: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of every `H x W` plane.
pub fn resize_bilinear_forward<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let s = x.shape();
    let ty = bilinear_taps(s.h(), oh);
    let tx = bilinear_taps(s.w(), ow);
    let mut out = Tensor::zeros(Shape::new(s.n(), s.c(), s.d(), oh, ow));
    let planes = s.n() * s.c() * s.d();
    let xd = x.data();
    let od = out.data_mut();
    for p in 0..planes {
        let src = &xd[p * s.h() * s.w()..(p + 1) * s.h() * s.w()];
        let dst = &mut od[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::from_f64c(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::from_f64c(lx);
                let top = src[y0 * s.w() + x0] * (T::one() - lx) + src[y0 * s.w() + x1] * lx;
                let bot = src[y1 * s.w() + x0] * (T::one() - lx) + src[y1 * s.w() + x1] * lx;
                dst[oy * ow + ox] = top * (T::one() - ly) + bot * ly;
            }
        }
    }
    out
}

pub fn resize_bilinear_backward<T: Scalar>(in_shape: Shape, dout: &Tensor<T>) -> Tensor<T> {
    let (oh, ow) = (dout.shape().h(), dout.shape().w());
    let ty = bilinear_taps(in_shape.h(), oh);
    let tx = bilinear_taps(in_shape.w(), ow);
    let mut dx = Tensor::zeros(in_shape);
    let (h, w) = (in_shape.h(), in_shape.w());
    let planes = in_shape.n() * in_shape.c() * in_shape.d();
    let gd = dout.data();
    let dd = dx.data_mut();
    for p in 0..planes {
        let g = &gd[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dd[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::from_f64c(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::from_f64c(lx);
                let v = g[oy * ow + ox];
                let top = v * (T::one() - ly);
                let bot = v * ly;
                dst[y0 * w + x0] += top * (T::one() - lx);
                dst[y0 * w + x1] += top * lx;
                dst[y1 * w + x0] += bot * (T::one() - lx);
                dst[y1 * w + x1] += bot * lx;
            }
        }
    }
    dx
}

/// Orientation of 2-D slices cut from a `Z x Y x X` volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    /// Slices along Z; images are `Y x X`.
    Axial,
    /// Slices along Y; images are `Z x X`.
    Coronal,
    /// Slices along X; images are `Z x Y`.
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];

    /// Shape of the slice stack cut from a volume tensor of shape `s`.
    pub fn slice_shape(self, s: Shape) -> Shape {
        let (d, h, w) = (s.d(), s.h(), s.w());
        match self {
            Plane::Axial => Shape::new(s.n() * d, s.c(), 1, h, w),
            Plane::Coronal => Shape::new(s.n() * h, s.c(), 1, d, w),
            Plane::Sagittal => Shape::new(s.n() * w, s.c(), 1, d, h),
        }
    }

    /// Index in the slice stack for volume element `(n, c, z, y, x)`.
    #[inline]
    fn map(self, s: Shape, n: usize, c: usize, z: usize, y: usize, x: usize) -> usize {
        let (cc, d, h, w) = (s.c(), s.d(), s.h(), s.w());
        match self {
            Plane::Axial => (((n * d + z) * cc + c) * h + y) * w + x,
            Plane::Coronal => (((n * h + y) * cc + c) * d + z) * w + x,
            Plane::Sagittal => (((n * w + x) * cc + c) * d + z) * h + y,
        }
    }
}

pub fn planes_forward<T: Scalar>(x: &Tensor<T>, plane: Plane) -> Tensor<T> {
    let s = x.shape();
    let mut out = Tensor::zeros(plane.slice_shape(s));
    let od = out.data_mut();
    let mut i = 0;
    for n in 0..s.n() {
        for c in 0..s.c() {
            for z in 0..s.d() {
                for y in 0..s.h() {
                    for xx in 0..s.w() {
                        od[plane.map(s, n, c, z, y, xx)] = x.data()[i];
                        i += 1;
                    }
                }
            }
        }
    }
    out
}

pub fn planes_backward<T: Scalar>(in_shape: Shape, plane: Plane, dout: &Tensor<T>) -> Tensor<T> {
    let s = in_shape;
    let mut dx = Tensor::zeros(s);
    let g = dout.data();
    let dd = dx.data_mut();
    let mut i = 0;
    for n in 0..s.n() {
        for c in 0..s.c() {
            for z in 0..s.d() {
                for y in 0..s.h() {
                    for xx in 0..s.w() {
                        dd[i] = g[plane.map(s, n, c, z, y, xx)];
                        i += 1;
                    }
                }
            }
        }
    }
    dx
}

pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs[0].shape();
    let mut c_total = 0;
    for x in xs {
        let s = x.shape();
        if s.n() != first.n() || s.spatial() != first.spatial() || s.0[2..] != first.0[2..] {
            bail!(Shape, "cannot concatenate {s} with {first}");
        }
        c_total += s.c();
    }
    let out_shape = Shape::new(first.n(), c_total, first.d(), first.h(), first.w());
    let mut data = Vec::with_capacity(out_shape.len());
    for n in 0..first.n() {
        for x in xs {
            let item = x.shape().item();
            data.extend_from_slice(&x.data()[n * item..(n + 1) * item]);
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Split a channel-concatenated gradient back into per-input pieces.
pub fn split_channels<T: Scalar>(g: &Tensor<T>, channels: &[usize]) -> Vec<Tensor<T>> {
    let s = g.shape();
    let sp = s.spatial();
    let mut parts: Vec<Vec<T>> = channels.iter().map(|&c| Vec::with_capacity(s.n() * c * sp)).collect();
    for n in 0..s.n() {
        let mut off = n * s.item();
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&g.data()[off..off + c * sp]);
            off += c * sp;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(data, &c)| Tensor::from_vec(Shape::new(s.n(), c, s.d(), s.h(), s.w()), data).unwrap())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 7-deep loop convolution.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], g: ConvGeom) -> Tensor<f64> {
        let s = x.shape();
        let [od, oh, ow] = g.out_dims(s.d(), s.h(), s.w()).unwrap();
        let co = w.shape().n();
        let mut out = Tensor::zeros(Shape::new(s.n(), co, od, oh, ow));
        let [kd, kh, kw] = g.kernel;
        for n in 0..s.n() {
            for o in 0..co {
                for z in 0..od {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut acc = b[o];
                            for ci in 0..s.c() {
                                for a in 0..kd {
                                    for bb in 0..kh {
                                        for cc in 0..kw {
                                            let iz = (z * g.stride[0] + a) as isize - g.pad[0] as isize;
                                            let iy = (y * g.stride[1] + bb) as isize - g.pad[1] as isize;
                                            let ix = (xx * g.stride[2] + cc) as isize - g.pad[2] as isize;
                                            if iz < 0 || iy < 0 || ix < 0 || iz >= s.d() as isize || iy >= s.h() as isize || ix >= s.w() as isize {
                                                continue;
                                            }
                                            let xi = (((n * s.c() + ci) * s.d() + iz as usize) * s.h() + iy as usize) * s.w() + ix as usize;
                                            let wi = (((o * s.c() + ci) * kd + a) * kh + bb) * kw + cc;
                                            acc += x.data()[xi] * w.data()[wi];
                                        }
                                    }
                                }
                            }
                            let oi = (((n * co + o) * od + z) * oh + y) * ow + xx;
                            out.data_mut()[oi] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: Shape, seed: f64) -> Tensor<f64> {
        let data = (0..shape.len()).map(|i| ((i as f64 + seed) * 0.7311).sin()).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn conv_matches_naive_loops() {
        for geom in [ConvGeom::cube(3, 1), ConvGeom::cube(3, 2), ConvGeom::planar(3), ConvGeom::pointwise()] {
            let x = pseudo(Shape::new(2, 3, if geom.kernel[0] == 1 { 1 } else { 5 }, 6, 7), 0.3);
            let w = pseudo(Shape::new(4, 3, geom.kernel[0], geom.kernel[1], geom.kernel[2]), 1.7);
            let b = Tensor::from_vec(Shape::new(4, 1, 1, 1, 1), vec![0.1, -0.2, 0.3, 0.0]).unwrap();
            let got = conv_forward(&x, &w, Some(&b), geom).unwrap();
            let want = naive_conv(&x, &w, b.data(), geom);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-12, "{geom:?}");
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x), g> must equal <x, dx> + <w, dw> terms by linearity.
        for geom in [ConvGeom::cube(3, 1), ConvGeom::cube(3, 2), ConvGeom::pointwise()] {
            let x = pseudo(Shape::new(2, 2, 4, 5, 6), 0.9);
            let w = pseudo(Shape::new(3, 2, geom.kernel[0], geom.kernel[1], geom.kernel[2]), 2.1);
            let y = conv_forward(&x, &w, None, geom).unwrap();
            let g = pseudo(y.shape(), 4.2);
            let grads = conv_backward(&x, &w, geom, &g, [true, true, true]).unwrap();
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
            let lhs = dot(y.data(), g.data());
            let via_x = dot(x.data(), grads.dx.as_ref().unwrap().data());
            let via_w = dot(w.data(), grads.dw.as_ref().unwrap().data());
            assert!((lhs - via_x).abs() < 1e-9 * lhs.abs().max(1.0));
            assert!((lhs - via_w).abs() < 1e-9 * lhs.abs().max(1.0));
            let gsum: f64 = g.data()[..].iter().sum();
            let dbsum: f64 = grads.db.unwrap().data().iter().sum();
            assert!((gsum - dbsum).abs() < 1e-9);
        }
    }

    #[test]
    fn planes_backward_inverts_forward() {
        let x = pseudo(Shape::new(2, 1, 3, 4, 5), 0.0);
        for p in Plane::ALL {
            let s = planes_forward(&x, p);
            assert_eq!(planes_backward(x.shape(), p, &s), x);
        }
        let ax = planes_forward(&x, Plane::Sagittal);
        // sagittal slice x=2 of item 0, pixel (z=1, y=3)
        let want = x.data()[(1 * 4 + 3) * 5 + 2];
        assert_eq!(ax.data()[2 * 12 + 1 * 4 + 3], want);
    }

    #[test]
    fn bilinear_identity_and_adjoint() {
        let x = pseudo(Shape::new(1, 2, 1, 5, 6), 0.2);
        assert!(resize_bilinear_forward(&x, 5, 6).max_abs_diff(&x) < 1e-15);
        let y = resize_bilinear_forward(&x, 9, 11);
        let g = pseudo(y.shape(), 3.0);
        let dx = resize_bilinear_backward(x.shape(), &g);
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn maxpool_picks_block_maximum() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 2, 4), vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 8.0]).unwrap();
        let (y, arg) = maxpool2_forward(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 9.0]);
        let dx = maxpool2_backward(x.shape(), &arg, &Tensor::from_vec(y.shape(), vec![1.0, 2.0]).unwrap());
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }
}
