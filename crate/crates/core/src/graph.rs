//! Two interchangeable evaluators for network code.
//!
//! Model forward passes are written once against [`Ops`]. [`Graph`] records
//! every intermediate so [`Graph::backward`] can run reverse-mode
//! differentiation; [`Eager`] computes values only and frees intermediates as
//! soon as they are dropped, which is what inference uses.

use alloc::collections::BTreeMap;
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::kernels::{self, ConvGeom, Plane};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub trait Ops<T: Scalar> {
    type V: Clone;

    /// A value that never receives gradient.
    fn constant(&mut self, t: Tensor<T>) -> Self::V;
    /// A named parameter; trainable unless the evaluator is frozen.
    fn param(&mut self, name: &str, t: &Tensor<T>) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<T>;

    fn conv(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>, geom: ConvGeom) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn scale(&mut self, a: &Self::V, k: f64) -> Self::V;
    fn leaky_relu(&mut self, a: &Self::V, slope: f64) -> Self::V;
    fn concat(&mut self, xs: &[Self::V]) -> Result<Self::V>;
    fn maxpool2(&mut self, a: &Self::V) -> Result<Self::V>;
    fn resize_bilinear(&mut self, a: &Self::V, h: usize, w: usize) -> Self::V;
    fn planes(&mut self, a: &Self::V, plane: Plane) -> Self::V;
    /// Per-channel `x * scale[c] + shift[c]` with constant coefficients.
    fn channel_affine(&mut self, a: &Self::V, scale: &[f64], shift: &[f64]) -> Result<Self::V>;
    fn global_mean_pool(&mut self, a: &Self::V) -> Self::V;
    fn narrow_batch(&mut self, a: &Self::V, start: usize, len: usize) -> Self::V;
    /// Mean squared difference, as a scalar.
    fn mse(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    /// Mean of `softplus(sign * a)`, as a scalar.
    fn softplus_mean(&mut self, a: &Self::V, sign: f64) -> Self::V;
}

pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + libm::log1p(libm::exp(-z.abs()))
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

fn map<T: Scalar>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::from_vec(t.shape(), t.data().iter().map(|&v| f(v)).collect()).unwrap()
}

fn check_same(a: Shape, b: Shape) -> Result<()> {
    if a != b {
        bail!(Shape, "operands have shapes {a} and {b}");
    }
    Ok(())
}

fn add_values<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same(a.shape(), b.shape())?;
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

fn channel_affine_value<T: Scalar>(a: &Tensor<T>, scale: &[f64], shift: &[f64]) -> Result<Tensor<T>> {
    let s = a.shape();
    if scale.len() != s.c() || shift.len() != s.c() {
        bail!(Shape, "affine coefficients for {} channels applied to {s}", scale.len());
    }
    let sp = s.spatial();
    let mut out = a.clone();
    for (i, chunk) in out.data_mut().chunks_mut(sp).enumerate() {
        let c = i % s.c();
        let (k, b) = (T::from_f64c(scale[c]), T::from_f64c(shift[c]));
        for v in chunk {
            *v = *v * k + b;
        }
    }
    Ok(out)
}

fn global_mean_value<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let s = a.shape();
    let sp = s.spatial();
    let inv = T::one() / T::from_usize(sp).unwrap();
    let data = a.data().chunks(sp).map(|c| c.iter().copied().sum::<T>() * inv).collect();
    Tensor::from_vec(Shape::new(s.n(), s.c(), 1, 1, 1), data).unwrap()
}

fn mse_value<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    check_same(a.shape(), b.shape())?;
    let n = T::from_usize(a.data().len()).unwrap();
    Ok(a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() / n)
}

fn softplus_mean_value<T: Scalar>(a: &Tensor<T>, sign: f64) -> T {
    let n = a.data().len() as f64;
    T::from_f64c(a.data().iter().map(|&z| softplus(sign * z.as_f64())).sum::<f64>() / n)
}

/// Value-only evaluator.
#[derive(Debug, Default)]
pub struct Eager;

impl<T: Scalar> Ops<T> for Eager {
    type V = Rc<Tensor<T>>;

    fn constant(&mut self, t: Tensor<T>) -> Self::V {
        Rc::new(t)
    }
    fn param(&mut self, _name: &str, t: &Tensor<T>) -> Self::V {
        Rc::new(t.clone())
    }
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<T> {
        v
    }
    fn conv(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>, geom: ConvGeom) -> Result<Self::V> {
        Ok(Rc::new(kernels::conv_forward(x, w, b.map(|b| &**b), geom)?))
    }
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        Ok(Rc::new(add_values(a, b)?))
    }
    fn scale(&mut self, a: &Self::V, k: f64) -> Self::V {
        let k = T::from_f64c(k);
        Rc::new(map(a, |v| v * k))
    }
    fn leaky_relu(&mut self, a: &Self::V, slope: f64) -> Self::V {
        let s = T::from_f64c(slope);
        Rc::new(map(a, |v| if v > T::zero() { v } else { v * s }))
    }
    fn concat(&mut self, xs: &[Self::V]) -> Result<Self::V> {
        let refs: Vec<&Tensor<T>> = xs.iter().map(|x| &**x).collect();
        Ok(Rc::new(kernels::concat_channels(&refs)?))
    }
    fn maxpool2(&mut self, a: &Self::V) -> Result<Self::V> {
        Ok(Rc::new(kernels::maxpool2_forward(a)?.0))
    }
    fn resize_bilinear(&mut self, a: &Self::V, h: usize, w: usize) -> Self::V {
        Rc::new(kernels::resize_bilinear_forward(a, h, w))
    }
    fn planes(&mut self, a: &Self::V, plane: Plane) -> Self::V {
        Rc::new(kernels::planes_forward(a, plane))
    }
    fn channel_affine(&mut self, a: &Self::V, scale: &[f64], shift: &[f64]) -> Result<Self::V> {
        Ok(Rc::new(channel_affine_value(a, scale, shift)?))
    }
    fn global_mean_pool(&mut self, a: &Self::V) -> Self::V {
        Rc::new(global_mean_value(a))
    }
    fn narrow_batch(&mut self, a: &Self::V, start: usize, len: usize) -> Self::V {
        Rc::new(a.narrow_batch(start, len))
    }
    fn mse(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        Ok(Rc::new(Tensor::scalar(mse_value(a, b)?)))
    }
    fn softplus_mean(&mut self, a: &Self::V, sign: f64) -> Self::V {
        Rc::new(Tensor::scalar(softplus_mean_value(a, sign)))
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { x: usize, w: usize, b: Option<usize>, geom: ConvGeom },
    Add(usize, usize),
    Scale(usize, f64),
    LeakyRelu(usize, f64),
    Concat(Vec<usize>),
    MaxPool2 { x: usize, arg: Vec<u32> },
    Resize(usize),
    Planes(usize, Plane),
    ChannelAffine { x: usize, scale: Vec<f64> },
    GlobalMean(usize),
    Narrow { x: usize, start: usize },
    Mse(usize, usize),
    SoftplusMean(usize, f64),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Recording evaluator with reverse-mode differentiation.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    frozen: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, Var)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every trainable parameter that was reached, by name.
    /// Parameters registered more than once have their gradients summed.
    pub fn params(&self) -> BTreeMap<String, Tensor<T>> {
        let mut out: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        for (name, v) in &self.params {
            if let Some(g) = self.get(*v) {
                match out.get_mut(name) {
                    Some(acc) => acc.add_assign(g),
                    None => {
                        out.insert(name.clone(), g.clone());
                    }
                }
            }
        }
        out
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: Vec::new(), frozen: false }
    }

    /// While frozen, [`Ops::param`] records constants instead of trainable leaves.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// A leaf that receives gradient without being a named parameter.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: &Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Reverse pass seeded with `d loss / d loss = 1`; `loss` must hold one element.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.data().len() != 1 {
            bail!(Shape, "backward needs a scalar loss, got {}", self.nodes[loss.0].value.shape());
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], i: usize, g: Tensor<T>) {
        if !self.nodes[i].requires_grad {
            return;
        }
        match &mut grads[i] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |i: usize| &self.nodes[i].value;
        let rg = |i: usize| self.nodes[i].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let need = [rg(*x), rg(*w), b.map(rg).unwrap_or(false)];
                let cg = kernels::conv_backward(val(*x), val(*w), *geom, g, need)?;
                if let Some(dx) = cg.dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = cg.dw {
                    self.accumulate(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    let db = db.reshape(val(*b).shape())?;
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Scale(a, k) => {
                let k = T::from_f64c(*k);
                self.accumulate(grads, *a, map(g, |v| v * k));
            }
            Op::LeakyRelu(a, slope) => {
                let s = T::from_f64c(*slope);
                let x = val(*a);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv > T::zero() { gv } else { gv * s })
                    .collect();
                self.accumulate(grads, *a, Tensor::from_vec(x.shape(), data)?);
            }
            Op::Concat(inputs) => {
                let channels: Vec<usize> = inputs.iter().map(|&i| val(i).shape().c()).collect();
                for (&i, part) in inputs.iter().zip(kernels::split_channels(g, &channels)) {
                    self.accumulate(grads, i, part);
                }
            }
            Op::MaxPool2 { x, arg } => {
                self.accumulate(grads, *x, kernels::maxpool2_backward(val(*x).shape(), arg, g));
            }
            Op::Resize(x) => {
                self.accumulate(grads, *x, kernels::resize_bilinear_backward(val(*x).shape(), g));
            }
            Op::Planes(x, plane) => {
                self.accumulate(grads, *x, kernels::planes_backward(val(*x).shape(), *plane, g));
            }
            Op::ChannelAffine { x, scale } => {
                let zero = vec![0.0; scale.len()];
                self.accumulate(grads, *x, channel_affine_value(g, scale, &zero)?);
            }
            Op::GlobalMean(x) => {
                let s = val(*x).shape();
                let sp = s.spatial();
                let inv = T::one() / T::from_usize(sp).unwrap();
                let mut dx = Tensor::zeros(s);
                for (chunk, &gv) in dx.data_mut().chunks_mut(sp).zip(g.data()) {
                    chunk.fill(gv * inv);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Narrow { x, start } => {
                let s = val(*x).shape();
                let mut dx = Tensor::zeros(s);
                let off = start * s.item();
                dx.data_mut()[off..off + g.data().len()].copy_from_slice(g.data());
                self.accumulate(grads, *x, dx);
            }
            Op::Mse(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let k = g.item() * T::from_f64c(2.0) / T::from_usize(av.data().len()).unwrap();
                let diff: Vec<T> = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y) * k).collect();
                let da = Tensor::from_vec(av.shape(), diff)?;
                if rg(*b) {
                    self.accumulate(grads, *b, map(&da, |v| -v));
                }
                self.accumulate(grads, *a, da);
            }
            Op::SoftplusMean(a, sign) => {
                let av = val(*a);
                let k = g.item().as_f64() * sign / av.data().len() as f64;
                self.accumulate(grads, *a, map(av, |z| T::from_f64c(k * sigmoid(sign * z.as_f64()))));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Ops<T> for Graph<T> {
    type V = Var;

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }
    fn param(&mut self, name: &str, t: &Tensor<T>) -> Var {
        if self.frozen {
            return self.constant(t.clone());
        }
        let v = self.push(t.clone(), Op::Leaf, true);
        self.params.push((name.to_string(), v));
        v
    }
    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }
    fn conv(&mut self, x: &Var, w: &Var, b: Option<&Var>, geom: ConvGeom) -> Result<Var> {
        let value = kernels::conv_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            b.map(|b| &self.nodes[b.0].value),
            geom,
        )?;
        let rg = self.rg(x) || self.rg(w) || b.map(|b| self.rg(b)).unwrap_or(false);
        Ok(self.push(value, Op::Conv { x: x.0, w: w.0, b: b.map(|b| b.0), geom }, rg))
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = add_values(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a.0, b.0), rg))
    }
    fn scale(&mut self, a: &Var, k: f64) -> Var {
        let kk = T::from_f64c(k);
        let value = map(&self.nodes[a.0].value, |v| v * kk);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a.0, k), rg)
    }
    fn leaky_relu(&mut self, a: &Var, slope: f64) -> Var {
        let s = T::from_f64c(slope);
        let value = map(&self.nodes[a.0].value, |v| if v > T::zero() { v } else { v * s });
        let rg = self.rg(a);
        self.push(value, Op::LeakyRelu(a.0, slope), rg)
    }
    fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = xs.iter().map(|x| &self.nodes[x.0].value).collect();
        let value = kernels::concat_channels(&refs)?;
        let rg = xs.iter().any(|x| self.rg(x));
        Ok(self.push(value, Op::Concat(xs.iter().map(|x| x.0).collect()), rg))
    }
    fn maxpool2(&mut self, a: &Var) -> Result<Var> {
        let (value, arg) = kernels::maxpool2_forward(&self.nodes[a.0].value)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::MaxPool2 { x: a.0, arg }, rg))
    }
    fn resize_bilinear(&mut self, a: &Var, h: usize, w: usize) -> Var {
        let value = kernels::resize_bilinear_forward(&self.nodes[a.0].value, h, w);
        let rg = self.rg(a);
        self.push(value, Op::Resize(a.0), rg)
    }
    fn planes(&mut self, a: &Var, plane: Plane) -> Var {
        let value = kernels::planes_forward(&self.nodes[a.0].value, plane);
        let rg = self.rg(a);
        self.push(value, Op::Planes(a.0, plane), rg)
    }
    fn channel_affine(&mut self, a: &Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let value = channel_affine_value(&self.nodes[a.0].value, scale, shift)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::ChannelAffine { x: a.0, scale: scale.to_vec() }, rg))
    }
    fn global_mean_pool(&mut self, a: &Var) -> Var {
        let value = global_mean_value(&self.nodes[a.0].value);
        let rg = self.rg(a);
        self.push(value, Op::GlobalMean(a.0), rg)
    }
    fn narrow_batch(&mut self, a: &Var, start: usize, len: usize) -> Var {
        let value = self.nodes[a.0].value.narrow_batch(start, len);
        let rg = self.rg(a);
        self.push(value, Op::Narrow { x: a.0, start }, rg)
    }
    fn mse(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = Tensor::scalar(mse_value(&self.nodes[a.0].value, &self.nodes[b.0].value)?);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mse(a.0, b.0), rg))
    }
    fn softplus_mean(&mut self, a: &Var, sign: f64) -> Var {
        let value = Tensor::scalar(softplus_mean_value(&self.nodes[a.0].value, sign));
        let rg = self.rg(a);
        self.push(value, Op::SoftplusMean(a.0, sign), rg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(shape: Shape, seed: f64) -> Tensor<f64> {
        let data = (0..shape.len()).map(|i| ((i as f64 + seed) * 1.37).sin()).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Scalar loss through every op kind, evaluated generically.
    fn net<O: Ops<f64>>(o: &mut O, x: &O::V, w: &Tensor<f64>, b: &Tensor<f64>) -> O::V {
        let w = o.param("w", w);
        let b = o.param("b", b);
        let h = o.conv(x, &w, Some(&b), ConvGeom::cube(3, 1)).unwrap();
        let h = o.leaky_relu(&h, 0.2);
        let h2 = o.scale(&h, 0.5);
        let h = o.concat(&[h.clone(), h2]).unwrap();
        let h = o.add(&h, &h.clone()).unwrap();
        let p = o.planes(&h, Plane::Coronal);
        let p = o.channel_affine(&p, &[1.5, -0.5, 2.0, 1.0], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let p = o.resize_bilinear(&p, 7, 9);
        let p = o.maxpool2(&p).unwrap();
        let p = o.narrow_batch(&p, 1, 3);
        let g = o.global_mean_pool(&p);
        let t = o.constant(Tensor::zeros(o.value(&g).shape()));
        let l1 = o.mse(&g, &t).unwrap();
        let l2 = o.softplus_mean(&p, -1.0);
        let l2 = o.scale(&l2, 0.3);
        o.add(&l1, &l2).unwrap()
    }

    #[test]
    fn graph_gradients_match_finite_differences() {
        let x = pseudo(Shape::new(1, 1, 4, 5, 6), 0.0);
        let w = pseudo(Shape::new(2, 1, 3, 3, 3), 3.0);
        let b = pseudo(Shape::new(2, 1, 1, 1, 1), 5.0);
        let mut g = Graph::new();
        let xv = g.variable(x.clone());
        let loss = net(&mut g, &xv, &w, &b);
        let grads = g.backward(loss).unwrap();
        let pg = grads.params();
        let dx = grads.get(xv).unwrap().clone();

        let eval = |x: &Tensor<f64>, w: &Tensor<f64>| {
            let mut e = Eager;
            let xv = Ops::<f64>::constant(&mut e, x.clone());
            net(&mut e, &xv, w, &b).item()
        };
        // eager and graph agree on the value
        assert!((eval(&x, &w) - g.value(&loss).item()).abs() < 1e-14);

        let h = 1e-6;
        for i in [0usize, 7, 33, 61, 119] {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (eval(&xp, &w) - eval(&xm, &w)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-7, "dx[{i}]: {fd} vs {}", dx.data()[i]);
        }
        for i in [0usize, 13, 40, 53] {
            let mut wp = w.clone();
            wp.data_mut()[i] += h;
            let mut wm = w.clone();
            wm.data_mut()[i] -= h;
            let fd = (eval(&x, &wp) - eval(&x, &wm)) / (2.0 * h);
            let an = pg["w"].data()[i];
            assert!((fd - an).abs() < 1e-7, "dw[{i}]: {fd} vs {an}");
        }
        assert!(pg.contains_key("b"));
    }

    #[test]
    fn frozen_params_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::full(Shape::new(1, 1, 1, 1, 2), 1.0));
        g.set_frozen(true);
        let w = g.param("w", &Tensor::full(Shape::new(1, 1, 1, 1, 1), 2.0));
        g.set_frozen(false);
        let y = g.conv(&x, &w, None, ConvGeom::pointwise()).unwrap();
        let z = g.constant(Tensor::zeros(Shape::new(1, 1, 1, 1, 2)));
        let l = g.mse(&y, &z).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.params().is_empty());
        assert_eq!(grads.get(x).unwrap().data(), &[4.0, 4.0]);
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert!((softplus(100.0) - 100.0).abs() < 1e-12);
        assert!(softplus(-100.0) > 0.0 && softplus(-100.0) < 1e-40);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
