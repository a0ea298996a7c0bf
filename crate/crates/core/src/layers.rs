//! Trainable layer bundles: thin structs that own parameters, pair the pure
//! ops with their backward passes, and accumulate gradients in place.
//!
//! Naming: every tensor in a layer gets "<layer>.<leaf>" so checkpoints are
//! flat name -> tensor maps. Initialization draws from a stream keyed by the
//! parameter name, so adding or reordering layers never shifts other layers'
//! initial weights.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FotsError, Result};
use crate::ops::{
    batch_norm_eval, batch_norm_train, batch_norm_train_backward, bilstm_backward, bilstm_forward,
    conv2d, conv2d_backward, leaky_relu, leaky_relu_backward, linear, linear_backward, BiLstmCache,
    BnCache,
};
use crate::rng::stream;
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Tensor};

fn gaussian<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        // Box-Muller keeps this independent of rand_distr's internals
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        *v = T::from_f64(z * std);
    }
    t
}

fn init_param<T: Scalar>(seed: u64, name: &str, shape: &[usize], std: f64) -> Parameter<T> {
    let mut rng = stream(seed, name, 0);
    Parameter::new(name, gaussian(&mut rng, shape, std))
}

/// Copy a named tensor out of a checkpoint map, checking its shape.
pub fn take_named<T: Scalar>(
    map: &BTreeMap<String, Tensor<T>>,
    name: &str,
    expect: &[usize],
) -> Result<Tensor<T>> {
    let t = map
        .get(name)
        .ok_or_else(|| FotsError::Invalid(format!("checkpoint missing tensor {name}")))?;
    if t.shape() != expect {
        return Err(FotsError::Invalid(format!(
            "checkpoint tensor {name} has shape {:?}, expected {expect:?}",
            t.shape()
        )));
    }
    Ok(t.clone())
}

/// Negative-side slope for conv-block activations; keeps gradient flowing
/// through channels that would otherwise die at these small widths.
pub const CBR_LEAK: f64 = 0.1;

/// 2d convolution + batch norm + leaky ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu<T> {
    pub w: Parameter<T>,
    pub b: Parameter<T>,
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    name: String,
}

pub struct CbrCache<T> {
    x: Tensor<T>,
    conv_out_shape: Vec<usize>,
    bn: BnCache<T>,
    bn_out: Tensor<T>,
}

impl<T: Scalar> ConvBnRelu<T> {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        ksize: usize,
        stride: (usize, usize),
        padding: (usize, usize),
        seed: u64,
    ) -> Self {
        let fan_in = (cin * ksize * ksize) as f64;
        let std = (2.0 / fan_in).sqrt();
        ConvBnRelu {
            w: init_param(seed, &format!("{name}.w"), &[cout, cin, ksize, ksize], std),
            b: Parameter::new(&format!("{name}.b"), Tensor::zeros(&[cout])),
            gamma: Parameter::new(&format!("{name}.gamma"), Tensor::full(&[cout], T::one())),
            beta: Parameter::new(&format!("{name}.beta"), Tensor::zeros(&[cout])),
            running_mean: Tensor::zeros(&[cout]),
            running_var: Tensor::full(&[cout], T::one()),
            stride,
            padding,
            name: name.to_string(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.w.value.shape()[0]
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, CbrCache<T>)> {
        let conv = conv2d(x, &self.w.value, &self.b.value, self.stride, self.padding)?;
        let (bn_out, bn) = batch_norm_train(
            &conv,
            &self.gamma.value,
            &self.beta.value,
            &mut self.running_mean,
            &mut self.running_var,
        );
        let out = leaky_relu(&bn_out, CBR_LEAK);
        Ok((
            out,
            CbrCache {
                x: x.clone(),
                conv_out_shape: conv.shape().to_vec(),
                bn,
                bn_out,
            },
        ))
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let conv = conv2d(x, &self.w.value, &self.b.value, self.stride, self.padding)?;
        let bn = batch_norm_eval(
            &conv,
            &self.gamma.value,
            &self.beta.value,
            &self.running_mean,
            &self.running_var,
        );
        Ok(leaky_relu(&bn, CBR_LEAK))
    }

    pub fn backward(&mut self, cache: &CbrCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g_bn = leaky_relu_backward(&cache.bn_out, grad_out, CBR_LEAK);
        debug_assert_eq!(cache.conv_out_shape, g_bn.shape());
        let (g_conv, g_gamma, g_beta) =
            batch_norm_train_backward(&cache.bn, &self.gamma.value, &g_bn);
        self.gamma.grad.add_assign(&g_gamma);
        self.beta.grad.add_assign(&g_beta);
        let (gx, gw, gb) =
            conv2d_backward(&cache.x, &self.w.value, &g_conv, self.stride, self.padding)?;
        self.w.grad.add_assign(&gw);
        self.b.grad.add_assign(&gb);
        Ok(gx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.w, &mut self.b, &mut self.gamma, &mut self.beta]
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            (format!("{}.w", self.name), &self.w.value),
            (format!("{}.b", self.name), &self.b.value),
            (format!("{}.gamma", self.name), &self.gamma.value),
            (format!("{}.beta", self.name), &self.beta.value),
            (format!("{}.rmean", self.name), &self.running_mean),
            (format!("{}.rvar", self.name), &self.running_var),
        ]
    }

    pub fn load(&mut self, map: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        self.w.value = take_named(map, &format!("{}.w", self.name), self.w.value.shape())?;
        self.b.value = take_named(map, &format!("{}.b", self.name), self.b.value.shape())?;
        self.gamma.value =
            take_named(map, &format!("{}.gamma", self.name), self.gamma.value.shape())?;
        self.beta.value =
            take_named(map, &format!("{}.beta", self.name), self.beta.value.shape())?;
        self.running_mean = take_named(
            map,
            &format!("{}.rmean", self.name),
            self.running_mean.shape(),
        )?;
        self.running_var = take_named(
            map,
            &format!("{}.rvar", self.name),
            self.running_var.shape(),
        )?;
        Ok(())
    }
}

/// Plain convolution with bias, no norm or activation (prediction heads).
#[derive(Clone, Debug)]
pub struct Conv2dLayer<T> {
    pub w: Parameter<T>,
    pub b: Parameter<T>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    name: String,
}

pub struct ConvCache<T> {
    x: Tensor<T>,
}

impl<T: Scalar> Conv2dLayer<T> {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        ksize: usize,
        stride: (usize, usize),
        padding: (usize, usize),
        seed: u64,
    ) -> Self {
        let fan_in = (cin * ksize * ksize) as f64;
        let std = (1.0 / fan_in).sqrt();
        Conv2dLayer {
            w: init_param(seed, &format!("{name}.w"), &[cout, cin, ksize, ksize], std),
            b: Parameter::new(&format!("{name}.b"), Tensor::zeros(&[cout])),
            stride,
            padding,
            name: name.to_string(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let out = conv2d(x, &self.w.value, &self.b.value, self.stride, self.padding)?;
        Ok((out, ConvCache { x: x.clone() }))
    }

    pub fn backward(&mut self, cache: &ConvCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (gx, gw, gb) =
            conv2d_backward(&cache.x, &self.w.value, grad_out, self.stride, self.padding)?;
        self.w.grad.add_assign(&gw);
        self.b.grad.add_assign(&gb);
        Ok(gx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            (format!("{}.w", self.name), &self.w.value),
            (format!("{}.b", self.name), &self.b.value),
        ]
    }

    pub fn load(&mut self, map: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        self.w.value = take_named(map, &format!("{}.w", self.name), self.w.value.shape())?;
        self.b.value = take_named(map, &format!("{}.b", self.name), self.b.value.shape())?;
        Ok(())
    }
}

/// Fully connected layer over row vectors.
#[derive(Clone, Debug)]
pub struct LinearLayer<T> {
    pub w: Parameter<T>,
    pub b: Parameter<T>,
    name: String,
}

pub struct LinearCache<T> {
    x: Tensor<T>,
}

impl<T: Scalar> LinearLayer<T> {
    pub fn new(name: &str, cin: usize, cout: usize, seed: u64) -> Self {
        let std = (1.0 / cin as f64).sqrt();
        LinearLayer {
            w: init_param(seed, &format!("{name}.w"), &[cout, cin], std),
            b: Parameter::new(&format!("{name}.b"), Tensor::zeros(&[cout])),
            name: name.to_string(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, LinearCache<T>) {
        (
            linear(x, &self.w.value, &self.b.value),
            LinearCache { x: x.clone() },
        )
    }

    pub fn backward(&mut self, cache: &LinearCache<T>, grad_out: &Tensor<T>) -> Tensor<T> {
        let (gx, gw, gb) = linear_backward(&cache.x, &self.w.value, grad_out);
        self.w.grad.add_assign(&gw);
        self.b.grad.add_assign(&gb);
        gx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            (format!("{}.w", self.name), &self.w.value),
            (format!("{}.b", self.name), &self.b.value),
        ]
    }

    pub fn load(&mut self, map: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        self.w.value = take_named(map, &format!("{}.w", self.name), self.w.value.shape())?;
        self.b.value = take_named(map, &format!("{}.b", self.name), self.b.value.shape())?;
        Ok(())
    }
}

/// Bidirectional recurrent layer with summed direction outputs.
#[derive(Clone, Debug)]
pub struct BiLstmLayer<T> {
    pub fw_ih: Parameter<T>,
    pub fw_hh: Parameter<T>,
    pub fw_b: Parameter<T>,
    pub bw_ih: Parameter<T>,
    pub bw_hh: Parameter<T>,
    pub bw_b: Parameter<T>,
    name: String,
}

impl<T: Scalar> BiLstmLayer<T> {
    pub fn new(name: &str, cin: usize, hidden: usize, seed: u64) -> Self {
        let std_ih = (1.0 / cin as f64).sqrt();
        let std_hh = (1.0 / hidden as f64).sqrt();
        let mut forget_bias = Tensor::zeros(&[4 * hidden]);
        for h in hidden..2 * hidden {
            forget_bias.data_mut()[h] = T::one(); // bias the forget gate open
        }
        BiLstmLayer {
            fw_ih: init_param(seed, &format!("{name}.fw_ih"), &[4 * hidden, cin], std_ih),
            fw_hh: init_param(seed, &format!("{name}.fw_hh"), &[4 * hidden, hidden], std_hh),
            fw_b: Parameter::new(&format!("{name}.fw_b"), forget_bias.clone()),
            bw_ih: init_param(seed, &format!("{name}.bw_ih"), &[4 * hidden, cin], std_ih),
            bw_hh: init_param(seed, &format!("{name}.bw_hh"), &[4 * hidden, hidden], std_hh),
            bw_b: Parameter::new(&format!("{name}.bw_b"), forget_bias),
            name: name.to_string(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fw_hh.value.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BiLstmCache<T>)> {
        bilstm_forward(
            x,
            (&self.fw_ih.value, &self.fw_hh.value, &self.fw_b.value),
            (&self.bw_ih.value, &self.bw_hh.value, &self.bw_b.value),
        )
    }

    pub fn backward(
        &mut self,
        x: &Tensor<T>,
        cache: &BiLstmCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let (gx, gf, gb) = bilstm_backward(
            x,
            (&self.fw_ih.value, &self.fw_hh.value, &self.fw_b.value),
            (&self.bw_ih.value, &self.bw_hh.value, &self.bw_b.value),
            cache,
            grad_out,
        )?;
        self.fw_ih.grad.add_assign(&gf.w_ih);
        self.fw_hh.grad.add_assign(&gf.w_hh);
        self.fw_b.grad.add_assign(&gf.b);
        self.bw_ih.grad.add_assign(&gb.w_ih);
        self.bw_hh.grad.add_assign(&gb.w_hh);
        self.bw_b.grad.add_assign(&gb.b);
        Ok(gx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![
            &mut self.fw_ih,
            &mut self.fw_hh,
            &mut self.fw_b,
            &mut self.bw_ih,
            &mut self.bw_hh,
            &mut self.bw_b,
        ]
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            (format!("{}.fw_ih", self.name), &self.fw_ih.value),
            (format!("{}.fw_hh", self.name), &self.fw_hh.value),
            (format!("{}.fw_b", self.name), &self.fw_b.value),
            (format!("{}.bw_ih", self.name), &self.bw_ih.value),
            (format!("{}.bw_hh", self.name), &self.bw_hh.value),
            (format!("{}.bw_b", self.name), &self.bw_b.value),
        ]
    }

    pub fn load(&mut self, map: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for (param, leaf) in [
            (&mut self.fw_ih, "fw_ih"),
            (&mut self.fw_hh, "fw_hh"),
            (&mut self.fw_b, "fw_b"),
            (&mut self.bw_ih, "bw_ih"),
            (&mut self.bw_hh, "bw_hh"),
            (&mut self.bw_b, "bw_b"),
        ] {
            param.value = take_named(map, &format!("{}.{leaf}", self.name), param.value.shape())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_name_keyed_and_reproducible() {
        let a = ConvBnRelu::<f32>::new("stem", 3, 8, 3, (1, 1), (1, 1), 42);
        let b = ConvBnRelu::<f32>::new("stem", 3, 8, 3, (1, 1), (1, 1), 42);
        assert_eq!(a.w.value.data(), b.w.value.data());
        let c = ConvBnRelu::<f32>::new("other", 3, 8, 3, (1, 1), (1, 1), 42);
        assert_ne!(a.w.value.data(), c.w.value.data());
    }

    #[test]
    fn gaussian_moments_are_sane() {
        let mut rng = stream(5, "gauss-test", 0);
        let t: Tensor<f64> = gaussian(&mut rng, &[10_000], 0.5);
        let mean: f64 = t.data().iter().sum::<f64>() / 1e4;
        let var: f64 = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 1e4;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 0.25).abs() < 0.02, "var {var}");
    }

    #[test]
    fn cbr_roundtrip_named_load() {
        let mut a = ConvBnRelu::<f32>::new("l0", 2, 4, 3, (1, 1), (1, 1), 1);
        let b = ConvBnRelu::<f32>::new("l0", 2, 4, 3, (1, 1), (1, 1), 99);
        let map: BTreeMap<String, Tensor<f32>> = b
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        a.load(&map).unwrap();
        assert_eq!(a.w.value.data(), b.w.value.data());
        assert_eq!(a.running_var.data(), b.running_var.data());
        // shape mismatch rejected
        let mut bad = map.clone();
        bad.insert("l0.w".into(), Tensor::zeros(&[1, 2, 3, 3]));
        assert!(a.load(&bad).is_err());
    }

    #[test]
    fn forget_gate_bias_starts_open() {
        let l = BiLstmLayer::<f32>::new("r", 6, 4, 7);
        for h in 0..16 {
            let want = if (4..8).contains(&h) { 1.0 } else { 0.0 };
            assert_eq!(l.fw_b.value.data()[h], want);
        }
    }
}
