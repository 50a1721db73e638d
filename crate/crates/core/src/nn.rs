//! Minimal differentiable MLP stack: linear, batch-norm and ReLU layers with
//! hand-written backward passes.

use serde::{Deserialize, Serialize};

use crate::checkpoint::TensorMap;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear { input: usize, output: usize, bias: bool },
    BatchNorm { features: usize, eps: f64, momentum: f64 },
    Relu,
}

impl LayerSpec {
    pub fn linear(input: usize, output: usize) -> Self {
        LayerSpec::Linear { input, output, bias: true }
    }

    pub fn batch_norm(features: usize) -> Self {
        LayerSpec::BatchNorm { features, eps: BN_EPS, momentum: BN_MOMENTUM }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { layers };
        spec.dims()?;
        Ok(spec)
    }

    /// `Linear -> BN -> ReLU` between consecutive widths, plain `Linear` at
    /// the end.
    pub fn mlp(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("an MLP needs at least input and output widths".into()));
        }
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            layers.push(LayerSpec::linear(pair[0], pair[1]));
            if i + 2 < widths.len() {
                layers.push(LayerSpec::batch_norm(pair[1]));
                layers.push(LayerSpec::Relu);
            }
        }
        Self::new(layers)
    }

    /// `(input, output)` feature widths; errors on incompatible neighbours.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let mut input = None;
        let mut cur: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let (need, produce) = match *layer {
                LayerSpec::Linear { input, output, .. } => (Some(input), Some(output)),
                LayerSpec::BatchNorm { features, .. } => (Some(features), Some(features)),
                LayerSpec::Relu => (None, None),
            };
            if let (Some(need), Some(have)) = (need, cur) {
                if need != have {
                    return Err(Error::ShapeMismatch(format!("layer {i} expects {need} features, receives {have}")));
                }
            }
            if input.is_none() && need.is_some() {
                input = need;
            }
            if produce.is_some() {
                cur = produce;
            }
        }
        match (input, cur) {
            (Some(i), Some(o)) => Ok((i, o)),
            _ => Err(Error::Config("network needs at least one linear or batch-norm layer".into())),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims().map(|d| d.0).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.dims().map(|d| d.1).unwrap_or(0)
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::BatchNorm { .. }))
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Linear { input, output, bias } => input * output + if bias { output } else { 0 },
                LayerSpec::BatchNorm { features, .. } => 2 * features,
                LayerSpec::Relu => 0,
            })
            .sum()
    }
}

/// What a trainable tensor is, for optimizer exclusion rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    NormScale,
    NormShift,
}

impl ParamRole {
    pub fn is_bias(self) -> bool {
        self == ParamRole::Bias
    }

    pub fn is_norm_param(self) -> bool {
        matches!(self, ParamRole::NormScale | ParamRole::NormShift)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    Linear { weight: Tensor<T>, bias: Option<Tensor<T>> },
    BatchNorm { gamma: Tensor<T>, beta: Tensor<T>, running_mean: Tensor<T>, running_var: Tensor<T> },
    Relu,
}

#[derive(Debug, Clone)]
enum LayerCache<T> {
    Linear { input: Tensor<T> },
    BatchNorm { xhat: Tensor<T>, inv_std: Vec<T> },
    Relu { input: Tensor<T> },
}

/// Activations cached by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    caches: Vec<LayerCache<T>>,
}

impl<T> ForwardTrace<T> {
    pub fn len(&self) -> usize {
        self.caches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.caches.is_empty()
    }
}

/// Gradients aligned one-to-one with [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn add_assign(&mut self, other: &Gradients<T>) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::ShapeMismatch("gradient sets differ in length".into()));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = *x + y;
            }
        }
        Ok(())
    }
}

/// A trainable tensor with its local name (`"{layer}.{kind}"`).
pub struct NamedParam<'a, T> {
    pub name: String,
    pub role: ParamRole,
    pub tensor: &'a Tensor<T>,
}

pub struct NamedParamMut<'a, T> {
    pub name: String,
    pub role: ParamRole,
    pub tensor: &'a mut Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    spec: NetSpec,
    layers: Vec<LayerParams<T>>,
}

fn mat<T: Scalar>(rows: usize, cols: usize, data: Vec<T>) -> Tensor<T> {
    Tensor::from_vec(&[rows, cols], data).expect("consistent shape")
}

impl<T: Scalar> Network<T> {
    /// Linear weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)); biases and
    /// `beta` zero, `gamma` one, running mean 0 and variance 1.
    pub fn init(spec: &NetSpec, seed: u64) -> Result<Self> {
        spec.dims()?;
        let mut rng = Rng::new(seed);
        let layers = spec
            .layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Linear { input, output, bias } => {
                    let bound = (6.0 / input as f64).sqrt();
                    let data = (0..input * output).map(|_| T::from_f64(rng.uniform(-bound, bound))).collect();
                    LayerParams::Linear {
                        weight: mat(output, input, data),
                        bias: bias.then(|| Tensor::zeros(&[output])),
                    }
                }
                LayerSpec::BatchNorm { features, .. } => LayerParams::BatchNorm {
                    gamma: Tensor::full(&[features], T::one()),
                    beta: Tensor::zeros(&[features]),
                    running_mean: Tensor::zeros(&[features]),
                    running_var: Tensor::full(&[features], T::one()),
                },
                LayerSpec::Relu => LayerParams::Relu,
            })
            .collect();
        Ok(Self { spec: spec.clone(), layers })
    }

    pub fn from_layers(spec: NetSpec, layers: Vec<LayerParams<T>>) -> Result<Self> {
        spec.dims()?;
        if spec.layers.len() != layers.len() {
            return Err(Error::ShapeMismatch("layer parameter count differs from spec".into()));
        }
        for (i, (s, p)) in spec.layers.iter().zip(&layers).enumerate() {
            let ok = match (s, p) {
                (LayerSpec::Linear { input, output, bias }, LayerParams::Linear { weight, bias: b }) => {
                    weight.shape() == [*output, *input]
                        && b.is_some() == *bias
                        && b.as_ref().is_none_or(|b| b.shape() == [*output])
                }
                (
                    LayerSpec::BatchNorm { features, .. },
                    LayerParams::BatchNorm { gamma, beta, running_mean, running_var },
                ) => [gamma, beta, running_mean, running_var].iter().all(|t| t.shape() == [*features]),
                (LayerSpec::Relu, LayerParams::Relu) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::ShapeMismatch(format!("layer {i} parameters do not match its spec")));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let want = self.spec.input_dim();
        if x.shape().len() != 2 || x.cols() != want {
            return Err(Error::ShapeMismatch(format!("network expects [batch, {want}] input, got {:?}", x.shape())));
        }
        Ok(())
    }

    /// Training-mode pass: batch statistics, running-stat updates, cached
    /// activations for [`Network::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        self.check_input(x)?;
        let n = x.rows();
        if n < 2 && self.spec.has_batch_norm() {
            return Err(Error::BatchTooSmall(n));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (spec, layer) in self.spec.layers.iter().zip(self.layers.iter_mut()) {
            match (spec, layer) {
                (_, LayerParams::Linear { weight, bias }) => {
                    let y = linear_forward(&cur, weight, bias.as_ref())?;
                    caches.push(LayerCache::Linear { input: std::mem::replace(&mut cur, y) });
                }
                (
                    LayerSpec::BatchNorm { eps, momentum, .. },
                    LayerParams::BatchNorm { gamma, beta, running_mean, running_var },
                ) => {
                    let f = cur.cols();
                    let nf = T::from_f64(n as f64);
                    let mut mean = vec![T::zero(); f];
                    for r in 0..n {
                        for (m, &v) in mean.iter_mut().zip(cur.row(r)) {
                            *m = *m + v;
                        }
                    }
                    mean.iter_mut().for_each(|m| *m = *m / nf);
                    let mut var = vec![T::zero(); f];
                    for r in 0..n {
                        for ((s, &v), &m) in var.iter_mut().zip(cur.row(r)).zip(&mean) {
                            let d = v - m;
                            *s = *s + d * d;
                        }
                    }
                    var.iter_mut().for_each(|s| *s = *s / nf);
                    let eps = T::from_f64(*eps);
                    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                    let mut xhat = cur.clone();
                    let mut y = cur;
                    for r in 0..n {
                        let (xr, yr) = (xhat.row_mut(r), y.row_mut(r));
                        for j in 0..f {
                            let h = (xr[j] - mean[j]) * inv_std[j];
                            xr[j] = h;
                            yr[j] = gamma.data()[j] * h + beta.data()[j];
                        }
                    }
                    let mom = T::from_f64(*momentum);
                    let unbias = nf / T::from_f64((n - 1) as f64);
                    for j in 0..f {
                        let rm = &mut running_mean.data_mut()[j];
                        *rm = (T::one() - mom) * *rm + mom * mean[j];
                        let rv = &mut running_var.data_mut()[j];
                        *rv = (T::one() - mom) * *rv + mom * var[j] * unbias;
                    }
                    caches.push(LayerCache::BatchNorm { xhat, inv_std });
                    cur = y;
                }
                (_, LayerParams::Relu) => {
                    let mut y = cur.clone();
                    y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
                    caches.push(LayerCache::Relu { input: std::mem::replace(&mut cur, y) });
                }
                _ => unreachable!("spec and parameters validated at construction"),
            }
        }
        Ok((cur, ForwardTrace { caches }))
    }

    /// Inference with running statistics; never mutates the network.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for (spec, layer) in self.spec.layers.iter().zip(&self.layers) {
            match (spec, layer) {
                (_, LayerParams::Linear { weight, bias }) => cur = linear_forward(&cur, weight, bias.as_ref())?,
                (
                    LayerSpec::BatchNorm { eps, .. },
                    LayerParams::BatchNorm { gamma, beta, running_mean, running_var },
                ) => {
                    let eps = T::from_f64(*eps);
                    let scale: Vec<T> =
                        gamma.data().iter().zip(running_var.data()).map(|(&g, &v)| g / (v + eps).sqrt()).collect();
                    for r in 0..cur.rows() {
                        for (j, v) in cur.row_mut(r).iter_mut().enumerate() {
                            *v = (*v - running_mean.data()[j]) * scale[j] + beta.data()[j];
                        }
                    }
                }
                (_, LayerParams::Relu) => cur.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero())),
                _ => unreachable!("spec and parameters validated at construction"),
            }
        }
        Ok(cur)
    }

    /// Gradient of the input and of every trainable tensor.
    pub fn backward(&self, trace: &ForwardTrace<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Gradients<T>)> {
        let (dx, grads) = self.backward_inner(trace, dy, true)?;
        Ok((dx.expect("input gradient requested"), grads))
    }

    /// Like [`Network::backward`] but skips the input gradient.
    pub fn param_grads(&self, trace: &ForwardTrace<T>, dy: &Tensor<T>) -> Result<Gradients<T>> {
        Ok(self.backward_inner(trace, dy, false)?.1)
    }

    fn backward_inner(
        &self,
        trace: &ForwardTrace<T>,
        dy: &Tensor<T>,
        want_input_grad: bool,
    ) -> Result<(Option<Tensor<T>>, Gradients<T>)> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::TraceMismatch);
        }
        let out_dim = self.spec.output_dim();
        if dy.shape().len() != 2 || dy.cols() != out_dim {
            return Err(Error::ShapeMismatch(format!("output gradient {:?} vs width {out_dim}", dy.shape())));
        }
        let mut per_layer: Vec<Vec<Tensor<T>>> = vec![Vec::new(); self.layers.len()];
        let mut grad = dy.clone();
        for i in (0..self.layers.len()).rev() {
            let need_dx = want_input_grad || i > 0;
            match (&self.layers[i], &trace.caches[i]) {
                (LayerParams::Linear { weight, bias }, LayerCache::Linear { input }) => {
                    let (n, fin) = (input.rows(), input.cols());
                    let fout = weight.rows();
                    if grad.rows() != n || grad.cols() != fout {
                        return Err(Error::TraceMismatch);
                    }
                    let mut dw = Tensor::zeros(&[fout, fin]);
                    T::gemm(
                        fout,
                        n,
                        fin,
                        T::one(),
                        grad.data(),
                        1,
                        fout as isize,
                        input.data(),
                        fin as isize,
                        1,
                        T::zero(),
                        dw.data_mut(),
                        fin as isize,
                        1,
                    );
                    let mut grads = vec![dw];
                    if bias.is_some() {
                        let mut db = Tensor::zeros(&[fout]);
                        for r in 0..n {
                            for (d, &g) in db.data_mut().iter_mut().zip(grad.row(r)) {
                                *d = *d + g;
                            }
                        }
                        grads.push(db);
                    }
                    per_layer[i] = grads;
                    if need_dx {
                        let mut dx = Tensor::zeros(&[n, fin]);
                        T::gemm(
                            n,
                            fout,
                            fin,
                            T::one(),
                            grad.data(),
                            fout as isize,
                            1,
                            weight.data(),
                            fin as isize,
                            1,
                            T::zero(),
                            dx.data_mut(),
                            fin as isize,
                            1,
                        );
                        grad = dx;
                    }
                }
                (LayerParams::BatchNorm { gamma, .. }, LayerCache::BatchNorm { xhat, inv_std }) => {
                    let (n, f) = (xhat.rows(), xhat.cols());
                    if grad.shape() != xhat.shape() {
                        return Err(Error::TraceMismatch);
                    }
                    let mut dgamma = vec![T::zero(); f];
                    let mut dbeta = vec![T::zero(); f];
                    for r in 0..n {
                        for j in 0..f {
                            let g = grad.row(r)[j];
                            dbeta[j] = dbeta[j] + g;
                            dgamma[j] = dgamma[j] + g * xhat.row(r)[j];
                        }
                    }
                    if need_dx {
                        let nf = T::from_f64(n as f64);
                        for r in 0..n {
                            let xr = xhat.row(r);
                            let gr = grad.row_mut(r);
                            for j in 0..f {
                                let scale = gamma.data()[j] * inv_std[j];
                                gr[j] = scale * (gr[j] - dbeta[j] / nf - xr[j] * dgamma[j] / nf);
                            }
                        }
                    }
                    per_layer[i] = vec![Tensor::from_vec(&[f], dgamma)?, Tensor::from_vec(&[f], dbeta)?];
                }
                (LayerParams::Relu, LayerCache::Relu { input }) => {
                    if grad.shape() != input.shape() {
                        return Err(Error::TraceMismatch);
                    }
                    for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
                        if x <= T::zero() {
                            *g = T::zero();
                        }
                    }
                }
                _ => return Err(Error::TraceMismatch),
            }
        }
        Ok((want_input_grad.then_some(grad), Gradients { tensors: per_layer.into_iter().flatten().collect() }))
    }

    /// Trainable tensors in layer order.
    pub fn params(&self) -> Vec<NamedParam<'_, T>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerParams::Linear { weight, bias } => {
                    out.push(NamedParam { name: format!("{i}.weight"), role: ParamRole::Weight, tensor: weight });
                    if let Some(b) = bias {
                        out.push(NamedParam { name: format!("{i}.bias"), role: ParamRole::Bias, tensor: b });
                    }
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    out.push(NamedParam { name: format!("{i}.gamma"), role: ParamRole::NormScale, tensor: gamma });
                    out.push(NamedParam { name: format!("{i}.beta"), role: ParamRole::NormShift, tensor: beta });
                }
                LayerParams::Relu => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<NamedParamMut<'_, T>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                LayerParams::Linear { weight, bias } => {
                    out.push(NamedParamMut { name: format!("{i}.weight"), role: ParamRole::Weight, tensor: weight });
                    if let Some(b) = bias {
                        out.push(NamedParamMut { name: format!("{i}.bias"), role: ParamRole::Bias, tensor: b });
                    }
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    out.push(NamedParamMut { name: format!("{i}.gamma"), role: ParamRole::NormScale, tensor: gamma });
                    out.push(NamedParamMut { name: format!("{i}.beta"), role: ParamRole::NormShift, tensor: beta });
                }
                LayerParams::Relu => {}
            }
        }
        out
    }

    /// Every stored tensor, running statistics included.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerParams::Linear { weight, bias } => {
                    out.push((format!("{i}.weight"), weight));
                    if let Some(b) = bias {
                        out.push((format!("{i}.bias"), b));
                    }
                }
                LayerParams::BatchNorm { gamma, beta, running_mean, running_var } => {
                    out.push((format!("{i}.gamma"), gamma));
                    out.push((format!("{i}.beta"), beta));
                    out.push((format!("{i}.running_mean"), running_mean));
                    out.push((format!("{i}.running_var"), running_var));
                }
                LayerParams::Relu => {}
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                LayerParams::Linear { weight, bias } => {
                    out.push((format!("{i}.weight"), weight));
                    if let Some(b) = bias {
                        out.push((format!("{i}.bias"), b));
                    }
                }
                LayerParams::BatchNorm { gamma, beta, running_mean, running_var } => {
                    out.push((format!("{i}.gamma"), gamma));
                    out.push((format!("{i}.beta"), beta));
                    out.push((format!("{i}.running_mean"), running_mean));
                    out.push((format!("{i}.running_var"), running_var));
                }
                LayerParams::Relu => {}
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerParams::Linear { weight, bias } => {
                    LayerParams::Linear { weight: weight.cast(), bias: bias.as_ref().map(Tensor::cast) }
                }
                LayerParams::BatchNorm { gamma, beta, running_mean, running_var } => LayerParams::BatchNorm {
                    gamma: gamma.cast(),
                    beta: beta.cast(),
                    running_mean: running_mean.cast(),
                    running_var: running_var.cast(),
                },
                LayerParams::Relu => LayerParams::Relu,
            })
            .collect();
        Network { spec: self.spec.clone(), layers }
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients { tensors: self.params().iter().map(|p| Tensor::zeros(p.tensor.shape())).collect() }
    }
}

impl Network<f32> {
    /// Insert every tensor under `"{prefix}.{layer}.{kind}"`.
    pub fn export(&self, prefix: &str, map: &mut TensorMap) {
        for (name, t) in self.tensors() {
            map.insert(format!("{prefix}.{name}"), t.clone());
        }
    }

    /// Rebuild from tensors exported under `prefix`, validated against `spec`.
    pub fn import(spec: &NetSpec, prefix: &str, map: &TensorMap) -> Result<Self> {
        let mut net = Network::<f32>::init(spec, 0)?;
        for (name, t) in net.tensors_mut() {
            let key = format!("{prefix}.{name}");
            let src = map.get(&key).ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {key}")))?;
            if src.shape() != t.shape() {
                return Err(Error::ShapeMismatch(format!("{key}: {:?} vs {:?}", src.shape(), t.shape())));
            }
            *t = src.clone();
        }
        Ok(net)
    }
}

fn linear_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let mut y = x.matmul_t(weight)?;
    if let Some(b) = bias {
        for r in 0..y.rows() {
            for (v, &bb) in y.row_mut(r).iter_mut().zip(b.data()) {
                *v = *v + bb;
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_layout_and_dims() {
        let spec = NetSpec::mlp(&[4, 8, 3]).unwrap();
        assert_eq!(
            spec.layers,
            vec![LayerSpec::linear(4, 8), LayerSpec::batch_norm(8), LayerSpec::Relu, LayerSpec::linear(8, 3)]
        );
        assert_eq!(spec.dims().unwrap(), (4, 3));
        assert!(NetSpec::new(vec![LayerSpec::linear(4, 8), LayerSpec::linear(7, 2)]).is_err());
        assert!(NetSpec::new(vec![LayerSpec::Relu]).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = NetSpec::mlp(&[3072, 16, 2]).unwrap();
        let a = Network::<f32>::init(&spec, 7).unwrap();
        assert_eq!(a, Network::<f32>::init(&spec, 7).unwrap());
        let bound = (6.0f64 / 3072.0).sqrt();
        assert!(bound < 0.0442);
        for p in a.params() {
            match p.role {
                ParamRole::Weight if p.name == "0.weight" => {
                    assert!(p.tensor.data().iter().all(|&w| (w as f64).abs() < bound))
                }
                ParamRole::Bias | ParamRole::NormShift => assert!(p.tensor.data().iter().all(|&w| w == 0.0)),
                ParamRole::NormScale => assert!(p.tensor.data().iter().all(|&w| w == 1.0)),
                _ => {}
            }
        }
    }

    #[test]
    fn identity_linear() {
        let spec = NetSpec::new(vec![LayerSpec::linear(2, 2)]).unwrap();
        let eye = mat(2, 2, vec![1.0f64, 0.0, 0.0, 1.0]);
        let net =
            Network::from_layers(spec, vec![LayerParams::Linear { weight: eye, bias: Some(Tensor::zeros(&[2])) }])
                .unwrap();
        let x = mat(3, 2, vec![1.0, -2.0, 3.5, 0.0, -1.0, 9.0]);
        assert_eq!(net.forward_eval(&x).unwrap(), x);
    }

    #[test]
    fn relu_forward() {
        let spec = NetSpec::new(vec![LayerSpec::batch_norm(2), LayerSpec::Relu]).unwrap();
        let mut net = Network::<f64>::init(&spec, 0).unwrap();
        // Eval BN with fresh stats is x / sqrt(1 + eps); check the sign pattern.
        let y = net.forward_eval(&mat(1, 2, vec![-1.0, 2.0])).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 2.0).abs() < 1e-4);
        assert!(matches!(net.forward_train(&mat(1, 2, vec![0.0, 0.0])), Err(Error::BatchTooSmall(1))));
    }

    #[test]
    fn batch_norm_two_rows() {
        let spec = NetSpec::new(vec![LayerSpec::batch_norm(1)]).unwrap();
        let mut net = Network::<f64>::init(&spec, 0).unwrap();
        let (y, trace) = net.forward_train(&mat(2, 1, vec![0.0, 2.0])).unwrap();
        assert_eq!(trace.len(), 1);
        assert!((y.data()[0] + 1.0).abs() < 1e-4 && (y.data()[1] - 1.0).abs() < 1e-4);
        match &net.layers()[0] {
            LayerParams::BatchNorm { running_mean, running_var, .. } => {
                assert!((running_mean.data()[0] - 0.1).abs() < 1e-12);
                // Unbiased batch variance 2 blended with the initial 1.
                assert!((running_var.data()[0] - 1.1).abs() < 1e-12);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn linear_outer_product_gradient() {
        let spec = NetSpec::new(vec![LayerSpec::Linear { input: 2, output: 1, bias: false }]).unwrap();
        let mut net = Network::<f64>::init(&spec, 1).unwrap();
        let (_, trace) = net.forward_train(&mat(1, 2, vec![1.0, 0.0])).unwrap();
        let (_, g) = net.backward(&trace, &mat(1, 1, vec![1.0])).unwrap();
        assert_eq!(g.tensors[0].data(), &[1.0, 0.0]);
    }

    #[test]
    fn zero_upstream_gradient() {
        let spec = NetSpec::mlp(&[3, 4, 2]).unwrap();
        let mut net = Network::<f64>::init(&spec, 2).unwrap();
        let x = mat(3, 3, vec![0.1, 0.5, -0.3, 1.0, 2.0, 0.0, -1.0, 0.2, 0.7]);
        let (_, trace) = net.forward_train(&x).unwrap();
        let (dx, g) = net.backward(&trace, &Tensor::zeros(&[3, 2])).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(g.tensors.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn trace_mismatch_detected() {
        let a = NetSpec::mlp(&[3, 4, 2]).unwrap();
        let b = NetSpec::new(vec![LayerSpec::linear(3, 2)]).unwrap();
        let mut na = Network::<f64>::init(&a, 0).unwrap();
        let nb = Network::<f64>::init(&b, 0).unwrap();
        let (_, trace) = na.forward_train(&Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(nb.backward(&trace, &Tensor::zeros(&[2, 2])), Err(Error::TraceMismatch)));
    }

    #[test]
    fn eval_is_pure() {
        let spec = NetSpec::mlp(&[3, 4, 2]).unwrap();
        let net = Network::<f32>::init(&spec, 3).unwrap();
        let before = net.clone();
        let x = Tensor::from_vec(&[2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(net.forward_eval(&x).unwrap(), net.forward_eval(&x).unwrap());
        assert_eq!(net, before);
    }
}
