//! Named parameter tensors and their initialisers.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Parameters keyed by dotted name, iterated in sorted order.
pub type ParamSet<T> = BTreeMap<String, Tensor<T>>;

/// He-normal conv weights (`std = gain * sqrt(2 / fan_in)`) and zero bias,
/// inserted as `<prefix>.weight` / `<prefix>.bias`.
pub fn init_conv<T: Scalar, R: Rng>(
    params: &mut ParamSet<T>,
    prefix: &str,
    cout: usize,
    cin: usize,
    kernel: [usize; 3],
    gain: f64,
    rng: &mut R,
) {
    let shape = Shape::new(cout, cin, kernel[0], kernel[1], kernel[2]);
    let fan_in = (cin * kernel.iter().product::<usize>()) as f64;
    let std = gain * libm::sqrt(2.0 / fan_in);
    let data = (0..shape.len())
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::from_f64c(z * std)
        })
        .collect();
    params.insert(format!("{prefix}.weight"), Tensor::from_vec(shape, data).unwrap());
    params.insert(format!("{prefix}.bias"), Tensor::zeros(Shape::new(cout, 1, 1, 1, 1)));
}

/// All-zero conv weights and bias.
pub fn init_conv_zero<T: Scalar>(params: &mut ParamSet<T>, prefix: &str, cout: usize, cin: usize, kernel: [usize; 3]) {
    let shape = Shape::new(cout, cin, kernel[0], kernel[1], kernel[2]);
    params.insert(format!("{prefix}.weight"), Tensor::zeros(shape));
    params.insert(format!("{prefix}.bias"), Tensor::zeros(Shape::new(cout, 1, 1, 1, 1)));
}

pub fn get<'a, T>(params: &'a ParamSet<T>, name: &str) -> Result<&'a Tensor<T>> {
    match params.get(name) {
        Some(t) => Ok(t),
        None => bail!(Corruption, "missing parameter `{name}`"),
    }
}

pub fn cast<T: Scalar, U: Scalar>(params: &ParamSet<T>) -> ParamSet<U> {
    params.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
}

pub fn all_finite<T: Scalar>(params: &ParamSet<T>) -> bool {
    params.values().all(|t| t.all_finite())
}

/// Names and shapes must agree exactly.
pub fn same_layout<T: Scalar>(a: &ParamSet<T>, b: &ParamSet<T>) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
}

pub fn count<T: Scalar>(params: &ParamSet<T>) -> usize {
    params.values().map(|t| t.data().len()).sum()
}

