use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamGroup, ParamKind, ParamSet};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{dot, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Valid,
    Same,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    Conv2d {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: Padding,
        #[serde(default = "yes")]
        bias: bool,
    },
    Relu,
    Tanh,
    Flatten,
    MeanPool {
        window: usize,
    },
    Dropout {
        p: f64,
    },
    /// Masks the weights of the dense or conv layer that follows it.
    DropConnect {
        p: f64,
    },
}

/// Layer stack plus the per-example input shape: `[features]` for vectors,
/// `[height, width, channels]` for images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// `features → hidden[0] → … → classes` with the given activation.
    pub fn mlp(features: usize, hidden: &[usize], classes: usize, activation: LayerSpec) -> ModelSpec {
        let mut layers = Vec::new();
        for &h in hidden {
            layers.push(LayerSpec::Dense { units: h, bias: true });
            layers.push(activation.clone());
        }
        layers.push(LayerSpec::Dense {
            units: classes,
            bias: true,
        });
        ModelSpec {
            input: vec![features],
            layers,
        }
    }
}

#[derive(Debug, Clone)]
enum Layer {
    Dense {
        inputs: usize,
        units: usize,
        weight: usize,
        bias: Option<usize>,
        dropconnect: Option<f64>,
    },
    Conv {
        geom: ConvGeom,
        weight: usize,
        bias: Option<usize>,
        dropconnect: Option<f64>,
    },
    Relu,
    Tanh,
    Flatten,
    MeanPool {
        h: usize,
        w: usize,
        c: usize,
        window: usize,
    },
    Dropout {
        p: f64,
    },
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    h: usize,
    w: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

#[derive(Debug, Clone)]
struct ParamShape {
    name: String,
    kind: ParamKind,
    shape: Vec<usize>,
    fan_in: usize,
}

/// Per-example losses, their mean, and the logits of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub loss: f64,
    pub per_example: Vec<f64>,
    pub logits: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape().first() != Some(&labels.len()) {
            return Err(Error::shape("batch", inputs.shape(), &[labels.len()]));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Feed-forward classifier with softmax cross-entropy loss.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
    params: Vec<ParamShape>,
    classes: usize,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if spec.input.is_empty() || spec.input.contains(&0) {
            return Err(Error::invalid(format!("bad input shape {:?}", spec.input)));
        }
        let mut shape = spec.input.clone();
        let mut layers = Vec::new();
        let mut params: Vec<ParamShape> = Vec::new();
        let mut pending_dropconnect: Option<f64> = None;

        for (i, ls) in spec.layers.iter().enumerate() {
            if pending_dropconnect.is_some() && !matches!(ls, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. }) {
                return Err(Error::invalid(format!(
                    "layer {i}: drop_connect must precede a dense or conv2d layer"
                )));
            }
            match *ls {
                LayerSpec::Dense { units, bias } => {
                    let [inputs] = shape[..] else {
                        return Err(Error::invalid(format!(
                            "layer {i}: dense needs a flat input, got {shape:?}"
                        )));
                    };
                    if units == 0 {
                        return Err(Error::invalid(format!("layer {i}: zero units")));
                    }
                    let weight = params.len();
                    params.push(ParamShape {
                        name: format!("dense{i}.weight"),
                        kind: ParamKind::Dense,
                        shape: vec![units, inputs],
                        fan_in: inputs,
                    });
                    let bias = bias.then(|| {
                        params.push(ParamShape {
                            name: format!("dense{i}.bias"),
                            kind: ParamKind::Bias,
                            shape: vec![units],
                            fan_in: inputs,
                        });
                        params.len() - 1
                    });
                    layers.push(Layer::Dense {
                        inputs,
                        units,
                        weight,
                        bias,
                        dropconnect: pending_dropconnect.take(),
                    });
                    shape = vec![units];
                }
                LayerSpec::Conv2d {
                    filters,
                    kernel,
                    stride,
                    padding,
                    bias,
                } => {
                    let [h, w, c_in] = shape[..] else {
                        return Err(Error::invalid(format!(
                            "layer {i}: conv2d needs [h, w, c] input, got {shape:?}"
                        )));
                    };
                    if !(1..=2).contains(&stride) || kernel == 0 || filters == 0 {
                        return Err(Error::invalid(format!("layer {i}: unsupported conv geometry")));
                    }
                    let pad = match padding {
                        Padding::Valid => 0,
                        Padding::Same if kernel % 2 == 1 => (kernel - 1) / 2,
                        Padding::Same => {
                            return Err(Error::invalid(format!("layer {i}: same padding needs an odd kernel")))
                        }
                    };
                    if h + 2 * pad < kernel || w + 2 * pad < kernel {
                        return Err(Error::invalid(format!("layer {i}: kernel larger than input")));
                    }
                    let geom = ConvGeom {
                        h,
                        w,
                        c_in,
                        c_out: filters,
                        k: kernel,
                        stride,
                        pad,
                        oh: (h + 2 * pad - kernel) / stride + 1,
                        ow: (w + 2 * pad - kernel) / stride + 1,
                    };
                    let weight = params.len();
                    params.push(ParamShape {
                        name: format!("conv{i}.weight"),
                        kind: ParamKind::Conv,
                        shape: vec![filters, kernel, kernel, c_in],
                        fan_in: kernel * kernel * c_in,
                    });
                    let bias = bias.then(|| {
                        params.push(ParamShape {
                            name: format!("conv{i}.bias"),
                            kind: ParamKind::Bias,
                            shape: vec![filters],
                            fan_in: kernel * kernel * c_in,
                        });
                        params.len() - 1
                    });
                    layers.push(Layer::Conv {
                        geom,
                        weight,
                        bias,
                        dropconnect: pending_dropconnect.take(),
                    });
                    shape = vec![geom.oh, geom.ow, filters];
                }
                LayerSpec::Relu => layers.push(Layer::Relu),
                LayerSpec::Tanh => layers.push(Layer::Tanh),
                LayerSpec::Flatten => {
                    layers.push(Layer::Flatten);
                    shape = vec![shape.iter().product()];
                }
                LayerSpec::MeanPool { window } => {
                    let [h, w, c] = shape[..] else {
                        return Err(Error::invalid(format!(
                            "layer {i}: mean_pool needs [h, w, c] input, got {shape:?}"
                        )));
                    };
                    if window == 0 || window > h || window > w {
                        return Err(Error::invalid(format!("layer {i}: bad pooling window {window}")));
                    }
                    layers.push(Layer::MeanPool { h, w, c, window });
                    shape = vec![h / window, w / window, c];
                }
                LayerSpec::Dropout { p } => {
                    check_drop_prob(p)?;
                    layers.push(Layer::Dropout { p });
                }
                LayerSpec::DropConnect { p } => {
                    check_drop_prob(p)?;
                    pending_dropconnect = Some(p);
                }
            }
        }
        if pending_dropconnect.is_some() {
            return Err(Error::invalid("trailing drop_connect layer"));
        }
        let [classes] = shape[..] else {
            return Err(Error::invalid(format!(
                "model output must be flat logits, got {shape:?}"
            )));
        };
        if classes < 2 {
            return Err(Error::invalid("model needs at least two output classes"));
        }
        Ok(Model {
            spec,
            layers,
            params,
            classes,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }

    /// Weights ~ N(0, 1/fan_in), biases zero. The logit layer's weights are
    /// shrunk by 10x so an untrained model predicts near-uniformly.
    pub fn init_params(&self, rng: &mut RngState) -> ParamSet {
        let last_weight = self.params.iter().rposition(|p| p.kind != ParamKind::Bias).unwrap_or(0);
        let groups = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let n = p.shape.iter().product();
                let data = if p.kind == ParamKind::Bias {
                    vec![0.0; n]
                } else {
                    let mut std = (1.0 / p.fan_in as f64).sqrt();
                    if i == last_weight {
                        std *= 0.1;
                    }
                    (0..n).map(|_| std * rng.normal()).collect()
                };
                ParamGroup::new(
                    p.name.clone(),
                    p.kind,
                    Tensor::new(p.shape.clone(), data).expect("sized"),
                )
            })
            .collect();
        ParamSet::new(groups).expect("unique names")
    }

    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Misaligned(format!(
                "model expects {} groups, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (want, got) in self.params.iter().zip(params.groups()) {
            if want.name != got.name() || want.shape != got.shape() || want.kind != got.kind() {
                return Err(Error::Misaligned(format!(
                    "expected `{}` {:?}, got `{}` {:?}",
                    want.name,
                    want.shape,
                    got.name(),
                    got.shape()
                )));
            }
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<usize> {
        let b = batch.len();
        let mut want = vec![b];
        want.extend_from_slice(&self.spec.input);
        if b == 0 || batch.inputs.shape() != want.as_slice() {
            return Err(Error::shape("batch", batch.inputs.shape(), &want));
        }
        if let Some(&l) = batch.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::invalid(format!(
                "label {l} out of range for {} classes",
                self.classes
            )));
        }
        Ok(b)
    }

    pub fn forward(&self, params: &ParamSet, batch: &Batch, mode: Mode, rng: &mut RngState) -> Result<ForwardOutput> {
        Ok(self.run(params, batch, mode, rng, false)?.0)
    }

    /// Mean batch loss and its exact gradient. Masks drawn for the forward
    /// pass are reused by the backward pass.
    pub fn grad(&self, params: &ParamSet, batch: &Batch, mode: Mode, rng: &mut RngState) -> Result<(f64, Gradients)> {
        let (out, grads) = self.run(params, batch, mode, rng, true)?;
        Ok((out.loss, grads.expect("requested")))
    }

    /// Eval-mode loss without an rng.
    pub fn loss(&self, params: &ParamSet, batch: &Batch) -> Result<f64> {
        let mut unused = RngState::new(0);
        Ok(self.forward(params, batch, Mode::Eval, &mut unused)?.loss)
    }

    pub fn finite_diff_grad(&self, params: &ParamSet, batch: &Batch, h: f64) -> Result<Gradients> {
        finite_diff_grad(|p| self.loss(p, batch), params, h)
    }

    fn run(
        &self,
        params: &ParamSet,
        batch: &Batch,
        mode: Mode,
        rng: &mut RngState,
        want_grad: bool,
    ) -> Result<(ForwardOutput, Option<Gradients>)> {
        self.check_params(params)?;
        let b = self.check_batch(batch)?;
        let train = mode == Mode::Train;
        let p = |i: usize| params.groups()[i].data();

        // acts[i] is the input to layer i; masks[i] holds the dropout or
        // dropconnect mask drawn for layer i, if any.
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        let mut masks: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.layers.len());
        let mut x = batch.inputs.data().to_vec();

        for layer in &self.layers {
            let mut mask = None;
            let y = match *layer {
                Layer::Dense {
                    inputs,
                    units,
                    weight,
                    bias,
                    dropconnect,
                } => {
                    let masked;
                    let w = match dropconnect {
                        Some(pr) if train => {
                            let m = keep_mask(pr, units * inputs, rng);
                            masked = p(weight).iter().zip(&m).map(|(a, b)| a * b).collect::<Vec<_>>();
                            mask = Some(m);
                            &masked[..]
                        }
                        _ => p(weight),
                    };
                    dense_forward(&x, w, bias.map(p), b, inputs, units)
                }
                Layer::Conv {
                    geom,
                    weight,
                    bias,
                    dropconnect,
                } => {
                    let masked;
                    let w = match dropconnect {
                        Some(pr) if train => {
                            let m = keep_mask(pr, p(weight).len(), rng);
                            masked = p(weight).iter().zip(&m).map(|(a, b)| a * b).collect::<Vec<_>>();
                            mask = Some(m);
                            &masked[..]
                        }
                        _ => p(weight),
                    };
                    conv_forward(&x, w, bias.map(p), b, &geom)
                }
                Layer::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
                Layer::Tanh => x.iter().map(|&v| v.tanh()).collect(),
                Layer::Flatten => x.clone(),
                Layer::MeanPool { h, w, c, window } => pool_forward(&x, b, h, w, c, window),
                Layer::Dropout { p: pr } => {
                    if train {
                        let m = keep_mask(pr, x.len(), rng);
                        let y = x.iter().zip(&m).map(|(a, b)| a * b).collect();
                        mask = Some(m);
                        y
                    } else {
                        x.clone()
                    }
                }
            };
            masks.push(mask);
            acts.push(std::mem::replace(&mut x, y));
        }

        let logits = x;
        let c = self.classes;
        let mut per_example = Vec::with_capacity(b);
        let mut dlogits = if want_grad { vec![0.0; b * c] } else { Vec::new() };
        for (i, &label) in batch.labels.iter().enumerate() {
            let row = &logits[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
            let lse = max + sum.ln();
            per_example.push(lse - row[label]);
            if want_grad {
                let d = &mut dlogits[i * c..(i + 1) * c];
                for (dj, &z) in d.iter_mut().zip(row) {
                    *dj = (z - lse).exp() / b as f64;
                }
                d[label] -= 1.0 / b as f64;
            }
        }
        let loss = per_example.iter().sum::<f64>() / b as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let out = ForwardOutput {
            loss,
            per_example,
            logits: Tensor::new(vec![b, c], logits).expect("sized"),
        };
        if !want_grad {
            return Ok((out, None));
        }

        let mut grads = params.zeros_like();
        let mut dy = dlogits;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let xin = &acts[li];
            let mask = masks[li].as_deref();
            dy = match *layer {
                Layer::Dense {
                    inputs,
                    units,
                    weight,
                    bias,
                    ..
                } => {
                    let masked;
                    let w = match mask {
                        Some(m) => {
                            masked = p(weight).iter().zip(m).map(|(a, b)| a * b).collect::<Vec<_>>();
                            &masked[..]
                        }
                        None => p(weight),
                    };
                    let mut dw = vec![0.0; units * inputs];
                    let mut db = bias.map(|_| vec![0.0; units]);
                    let dx = dense_backward(&dy, xin, w, &mut dw, db.as_deref_mut(), b, inputs, units);
                    if let Some(m) = mask {
                        dw.iter_mut().zip(m).for_each(|(g, k)| *g *= k);
                    }
                    grads.groups_mut()[weight].data_mut().copy_from_slice(&dw);
                    if let (Some(bi), Some(db)) = (bias, db) {
                        grads.groups_mut()[bi].data_mut().copy_from_slice(&db);
                    }
                    dx
                }
                Layer::Conv { geom, weight, bias, .. } => {
                    let masked;
                    let w = match mask {
                        Some(m) => {
                            masked = p(weight).iter().zip(m).map(|(a, b)| a * b).collect::<Vec<_>>();
                            &masked[..]
                        }
                        None => p(weight),
                    };
                    let mut dw = vec![0.0; w.len()];
                    let mut db = bias.map(|_| vec![0.0; geom.c_out]);
                    let dx = conv_backward(&dy, xin, w, &mut dw, db.as_deref_mut(), b, &geom);
                    if let Some(m) = mask {
                        dw.iter_mut().zip(m).for_each(|(g, k)| *g *= k);
                    }
                    grads.groups_mut()[weight].data_mut().copy_from_slice(&dw);
                    if let (Some(bi), Some(db)) = (bias, db) {
                        grads.groups_mut()[bi].data_mut().copy_from_slice(&db);
                    }
                    dx
                }
                Layer::Relu => dy
                    .iter()
                    .zip(xin)
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect(),
                Layer::Tanh => dy
                    .iter()
                    .zip(xin)
                    .map(|(&g, &v)| {
                        let t = v.tanh();
                        g * (1.0 - t * t)
                    })
                    .collect(),
                Layer::Flatten => dy,
                Layer::MeanPool { h, w, c, window } => pool_backward(&dy, b, h, w, c, window),
                Layer::Dropout { .. } => match mask {
                    Some(m) => dy.iter().zip(m).map(|(a, b)| a * b).collect(),
                    None => dy,
                },
            };
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok((out, Some(grads)))
    }
}

fn check_drop_prob(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!("drop probability {p} outside [0, 1)")))
    }
}

fn keep_mask(p: f64, n: usize, rng: &mut RngState) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n).map(|_| if rng.uniform() < p { 0.0 } else { keep }).collect()
}

/// Inverted-dropout unit mask: each entry is 0 with probability `p`,
/// otherwise `1/(1-p)`.
pub fn dropout_mask(p: f64, shape: &[usize], rng: &mut RngState) -> Result<Tensor> {
    check_drop_prob(p)?;
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), keep_mask(p, n, rng))
}

/// Weight mask for one parameter group, same convention as [`dropout_mask`].
pub fn dropconnect_mask(p: f64, group: &ParamGroup, rng: &mut RngState) -> Result<Tensor> {
    dropout_mask(p, group.shape(), rng)
}

/// Central differences `(L(w + h e_j) - L(w - h e_j)) / 2h` for every
/// coordinate.
pub fn finite_diff_grad(loss: impl Fn(&ParamSet) -> Result<f64>, params: &ParamSet, h: f64) -> Result<Gradients> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut probe = params.clone();
    let mut grads = params.zeros_like();
    for gi in 0..params.len() {
        for j in 0..params.groups()[gi].data().len() {
            let w0 = params.groups()[gi].data()[j];
            probe.groups_mut()[gi].data_mut()[j] = w0 + h;
            let up = loss(&probe)?;
            probe.groups_mut()[gi].data_mut()[j] = w0 - h;
            let down = loss(&probe)?;
            probe.groups_mut()[gi].data_mut()[j] = w0;
            grads.groups_mut()[gi].data_mut()[j] = (up - down) / (2.0 * h);
        }
    }
    Ok(grads)
}

fn dense_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, b: usize, inputs: usize, units: usize) -> Vec<f64> {
    let mut y = vec![0.0; b * units];
    for i in 0..b {
        let xi = &x[i * inputs..(i + 1) * inputs];
        for (o, yo) in y[i * units..(i + 1) * units].iter_mut().enumerate() {
            *yo = dot(xi, &w[o * inputs..(o + 1) * inputs]) + bias.map_or(0.0, |bb| bb[o]);
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    dy: &[f64],
    x: &[f64],
    w: &[f64],
    dw: &mut [f64],
    mut db: Option<&mut [f64]>,
    b: usize,
    inputs: usize,
    units: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; b * inputs];
    for i in 0..b {
        let xi = &x[i * inputs..(i + 1) * inputs];
        let dxi = &mut dx[i * inputs..(i + 1) * inputs];
        for o in 0..units {
            let g = dy[i * units + o];
            if let Some(db) = db.as_deref_mut() {
                db[o] += g;
            }
            if g == 0.0 {
                continue;
            }
            let wo = &w[o * inputs..(o + 1) * inputs];
            let dwo = &mut dw[o * inputs..(o + 1) * inputs];
            for j in 0..inputs {
                dwo[j] += g * xi[j];
                dxi[j] += g * wo[j];
            }
        }
    }
    dx
}

impl ConvGeom {
    /// Input row/column for output position `o` and kernel offset `k`.
    #[inline]
    fn src(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.pad).filter(|&v| v < limit)
    }
}

fn conv_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, b: usize, g: &ConvGeom) -> Vec<f64> {
    let (c, f, k) = (g.c_in, g.c_out, g.k);
    let mut y = vec![0.0; b * g.oh * g.ow * f];
    for n in 0..b {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let out = &mut y[((n * g.oh + oy) * g.ow + ox) * f..][..f];
                for (fi, yo) in out.iter_mut().enumerate() {
                    let mut acc = bias.map_or(0.0, |bb| bb[fi]);
                    for ky in 0..k {
                        let Some(iy) = g.src(oy, ky, g.h) else { continue };
                        for kx in 0..k {
                            let Some(ix) = g.src(ox, kx, g.w) else { continue };
                            let xs = &x[((n * g.h + iy) * g.w + ix) * c..][..c];
                            let ws = &w[((fi * k + ky) * k + kx) * c..][..c];
                            acc += dot(xs, ws);
                        }
                    }
                    *yo = acc;
                }
            }
        }
    }
    y
}

fn conv_backward(
    dy: &[f64],
    x: &[f64],
    w: &[f64],
    dw: &mut [f64],
    mut db: Option<&mut [f64]>,
    b: usize,
    g: &ConvGeom,
) -> Vec<f64> {
    let (c, f, k) = (g.c_in, g.c_out, g.k);
    let mut dx = vec![0.0; x.len()];
    for n in 0..b {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let grads = &dy[((n * g.oh + oy) * g.ow + ox) * f..][..f];
                for (fi, &gv) in grads.iter().enumerate() {
                    if let Some(db) = db.as_deref_mut() {
                        db[fi] += gv;
                    }
                    if gv == 0.0 {
                        continue;
                    }
                    for ky in 0..k {
                        let Some(iy) = g.src(oy, ky, g.h) else { continue };
                        for kx in 0..k {
                            let Some(ix) = g.src(ox, kx, g.w) else { continue };
                            let xo = ((n * g.h + iy) * g.w + ix) * c;
                            let wo = ((fi * k + ky) * k + kx) * c;
                            for ch in 0..c {
                                dw[wo + ch] += gv * x[xo + ch];
                                dx[xo + ch] += gv * w[wo + ch];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn pool_forward(x: &[f64], b: usize, h: usize, w: usize, c: usize, win: usize) -> Vec<f64> {
    let (oh, ow) = (h / win, w / win);
    let scale = 1.0 / (win * win) as f64;
    let mut y = vec![0.0; b * oh * ow * c];
    for n in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let out = &mut y[((n * oh + oy) * ow + ox) * c..][..c];
                for dy in 0..win {
                    for dx in 0..win {
                        let src = &x[((n * h + oy * win + dy) * w + ox * win + dx) * c..][..c];
                        out.iter_mut().zip(src).for_each(|(o, &s)| *o += s);
                    }
                }
                out.iter_mut().for_each(|o| *o *= scale);
            }
        }
    }
    y
}

fn pool_backward(dy: &[f64], b: usize, h: usize, w: usize, c: usize, win: usize) -> Vec<f64> {
    let (oh, ow) = (h / win, w / win);
    let scale = 1.0 / (win * win) as f64;
    let mut dx = vec![0.0; b * h * w * c];
    for n in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = &dy[((n * oh + oy) * ow + ox) * c..][..c];
                for ddy in 0..win {
                    for ddx in 0..win {
                        let dst = &mut dx[((n * h + oy * win + ddy) * w + ox * win + ddx) * c..][..c];
                        dst.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv * scale);
                    }
                }
            }
        }
    }
    dx
}
