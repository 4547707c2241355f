//! Convolution and max-pooling feature stacks trained jointly with LDNN heads.
//!
//! A convolutional layer computes, for every output map `j`,
//!
//! ```text
//! S_j = sum_{i in m_j} X_i (*) H_ij + b_j      (valid cross-correlation)
//! X_j = act(S_j)
//! ```
//!
//! The flattened output of the last stage (maps in index order, each map
//! row-major) is the input vector of a [`MulticlassModel`]. The heads' input
//! sensitivities are reshaped back into maps and propagated down the stack.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_len, LdnnError, Result};
use crate::init::InitMode;
use crate::model::{
    argmax, check_version, ForwardTrace, Gradient, LossKind, ModelDocument, MulticlassModel, FORMAT_VERSION,
};
use crate::seed::{derive_seed, derived_rng, rng_from};
use crate::train::{
    apply_update, initialize_multiclass, training_parts, EpochRecord, History, TrainConfig, Velocity,
    DEFAULT_PATIENCE, SHUFFLE_TAG,
};

/// A stack of equally sized 2-D maps, stored `[map][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Maps {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Maps {
    pub fn zeros(count: usize, height: usize, width: usize) -> Self {
        Maps {
            count,
            height,
            width,
            data: vec![0.0; count * height * width],
        }
    }

    pub fn from_vec(count: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len("map data", count * height * width, data.len())?;
        Ok(Maps {
            count,
            height,
            width,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.count, self.height, self.width)
    }

    pub fn map_len(&self) -> usize {
        self.height * self.width
    }

    pub fn map(&self, m: usize) -> &[f64] {
        let len = self.map_len();
        &self.data[m * len..(m + 1) * len]
    }

    pub fn map_mut(&mut self, m: usize) -> &mut [f64] {
        let len = self.map_len();
        &mut self.data[m * len..(m + 1) * len]
    }

    pub fn at(&self, m: usize, r: usize, c: usize) -> f64 {
        self.data[(m * self.height + r) * self.width + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Logistic,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, s: f64) -> f64 {
        match self {
            Activation::Logistic => crate::model::sigmoid(s),
            Activation::Relu => s.max(0.0),
            Activation::Identity => s,
        }
    }

    /// Derivative at preactivation `s` whose output is `x`.
    #[inline]
    pub fn derivative(self, s: f64, x: f64) -> f64 {
        match self {
            Activation::Logistic => x * (1.0 - x),
            Activation::Relu => {
                if s > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One convolutional layer. Filters are stored densely as
/// `[out][in][kernel_h][kernel_w]`; slices for unconnected `(in, out)` pairs
/// are kept at zero and never read.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    maps_in: usize,
    maps_out: usize,
    kernel_h: usize,
    kernel_w: usize,
    filters: Vec<f64>,
    biases: Vec<f64>,
    connectivity: Vec<Vec<usize>>,
    pub activation: Activation,
}

impl ConvLayer {
    /// Fully connected layer with all-zero parameters.
    pub fn zeros(maps_in: usize, maps_out: usize, kernel_h: usize, kernel_w: usize, activation: Activation) -> Result<Self> {
        let connectivity = vec![(0..maps_in).collect(); maps_out];
        ConvLayer::with_connectivity(maps_in, maps_out, kernel_h, kernel_w, connectivity, activation)
    }

    pub fn with_connectivity(
        maps_in: usize,
        maps_out: usize,
        kernel_h: usize,
        kernel_w: usize,
        connectivity: Vec<Vec<usize>>,
        activation: Activation,
    ) -> Result<Self> {
        if maps_in == 0 || maps_out == 0 || kernel_h == 0 || kernel_w == 0 {
            return Err(LdnnError::param("convolution sizes must be positive"));
        }
        check_len("connectivity lists", maps_out, connectivity.len())?;
        let mut connectivity = connectivity;
        for (j, inputs) in connectivity.iter_mut().enumerate() {
            inputs.sort_unstable();
            inputs.dedup();
            if inputs.is_empty() {
                return Err(LdnnError::param(format!("output map {j} has no input maps")));
            }
            if let Some(&bad) = inputs.iter().find(|&&i| i >= maps_in) {
                return Err(LdnnError::param(format!(
                    "output map {j} connects to input map {bad}, layer has {maps_in}"
                )));
            }
        }
        Ok(ConvLayer {
            maps_in,
            maps_out,
            kernel_h,
            kernel_w,
            filters: vec![0.0; maps_out * maps_in * kernel_h * kernel_w],
            biases: vec![0.0; maps_out],
            connectivity,
            activation,
        })
    }

    /// Fully connected layer with filters drawn i.i.d. from `U(-r, r)`,
    /// `r = 1 / sqrt(fan_in)`, and zero biases.
    pub fn random(
        maps_in: usize,
        maps_out: usize,
        kernel_h: usize,
        kernel_w: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut layer = ConvLayer::zeros(maps_in, maps_out, kernel_h, kernel_w, activation)?;
        layer.randomize(rng);
        Ok(layer)
    }

    /// Redraws every connected filter from `U(-r, r)`, `r = 1 / sqrt(fan_in)`.
    pub fn randomize(&mut self, rng: &mut ChaCha8Rng) {
        let k = self.kernel_len();
        for j in 0..self.maps_out {
            let fan_in = (self.connectivity[j].len() * k) as f64;
            let r = 1.0 / fan_in.sqrt();
            for &i in &self.connectivity[j] {
                let at = self.filter_offset(j, i);
                for w in &mut self.filters[at..at + k] {
                    *w = rng.random_range(-r..r);
                }
            }
        }
    }

    pub fn maps_in(&self) -> usize {
        self.maps_in
    }

    pub fn maps_out(&self) -> usize {
        self.maps_out
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.kernel_h, self.kernel_w)
    }

    fn kernel_len(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    fn filter_offset(&self, out: usize, inp: usize) -> usize {
        (out * self.maps_in + inp) * self.kernel_len()
    }

    pub fn connectivity(&self) -> &[Vec<usize>] {
        &self.connectivity
    }

    /// Kernel `H_ij` for input map `inp` and output map `out`, row-major.
    pub fn filter(&self, out: usize, inp: usize) -> &[f64] {
        let at = self.filter_offset(out, inp);
        &self.filters[at..at + self.kernel_len()]
    }

    pub fn filter_mut(&mut self, out: usize, inp: usize) -> &mut [f64] {
        let at = self.filter_offset(out, inp);
        let k = self.kernel_len();
        &mut self.filters[at..at + k]
    }

    pub fn filters(&self) -> &[f64] {
        &self.filters
    }

    pub fn filters_mut(&mut self) -> &mut [f64] {
        &mut self.filters
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    pub fn is_finite(&self) -> bool {
        self.filters.iter().chain(&self.biases).all(|v| v.is_finite())
    }

    pub fn output_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (maps, h, w) = input;
        check_len("convolution input maps", self.maps_in, maps)?;
        if self.kernel_h > h || self.kernel_w > w {
            return Err(LdnnError::Shape {
                context: "kernel larger than input map",
                expected: h.min(w),
                found: self.kernel_h.max(self.kernel_w),
            });
        }
        Ok((self.maps_out, h - self.kernel_h + 1, w - self.kernel_w + 1))
    }
}

/// Adds the valid cross-correlation `input (*) kernel` into `out`.
fn correlate_into(input: &[f64], in_w: usize, kernel: &[f64], kw: usize, out: &mut [f64], out_h: usize, out_w: usize) {
    let kh = kernel.len() / kw;
    for kr in 0..kh {
        for kc in 0..kw {
            let h = kernel[kr * kw + kc];
            if h == 0.0 {
                continue;
            }
            for r in 0..out_h {
                let src = &input[(r + kr) * in_w + kc..(r + kr) * in_w + kc + out_w];
                let dst = &mut out[r * out_w..(r + 1) * out_w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += h * s;
                }
            }
        }
    }
}

/// Forward pass of one layer: returns `(S, X)`.
pub fn conv_forward(layer: &ConvLayer, input: &Maps) -> Result<(Maps, Maps)> {
    let (maps, oh, ow) = layer.output_shape(input.shape())?;
    let mut s = Maps::zeros(maps, oh, ow);
    for j in 0..maps {
        let out = s.map_mut(j);
        out.fill(layer.biases[j]);
        for &i in &layer.connectivity[j] {
            correlate_into(input.map(i), input.width, layer.filter(j, i), layer.kernel_w, out, oh, ow);
        }
    }
    let x = Maps {
        data: s.data.iter().map(|&v| layer.activation.apply(v)).collect(),
        ..s.clone()
    };
    Ok((s, x))
}

/// Parameter (and optionally input) gradients of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGradient {
    /// Same layout as the layer's filters.
    pub filters: Vec<f64>,
    pub biases: Vec<f64>,
    /// `dE/dX` of the layer input, when requested.
    pub input: Option<Maps>,
}

impl ConvGradient {
    pub fn is_finite(&self) -> bool {
        self.filters
            .iter()
            .chain(&self.biases)
            .chain(self.input.iter().flat_map(|m| m.data.iter()))
            .all(|v| v.is_finite())
    }
}

/// Backward pass of one layer given the forward caches and `dE/dX` of its
/// output.
///
/// `dE/dS = dE/dX . act'(S)`, `dE/dH_ij = X_i (*) dE/dS_j`,
/// `dE/db_j = sum dE/dS_j` and the input sensitivity is the full convolution
/// `dE/dS_j * H_ij` summed over the output maps connected to `i`.
pub fn conv_backward(
    layer: &ConvLayer,
    input: &Maps,
    pre: &Maps,
    output: &Maps,
    upstream: &Maps,
    want_input: bool,
) -> Result<ConvGradient> {
    let expected = layer.output_shape(input.shape())?;
    if pre.shape() != expected || output.shape() != expected || upstream.shape() != expected {
        return Err(LdnnError::shape(
            "convolution backward maps",
            expected.0 * expected.1 * expected.2,
            upstream.data.len(),
        ));
    }
    let (_, oh, ow) = expected;
    let ds: Vec<f64> = upstream
        .data
        .iter()
        .zip(pre.data.iter().zip(&output.data))
        .map(|(&d, (&s, &x))| d * layer.activation.derivative(s, x))
        .collect();
    let plane = oh * ow;
    let (kh, kw) = (layer.kernel_h, layer.kernel_w);
    let mut grad = ConvGradient {
        filters: vec![0.0; layer.filters.len()],
        biases: vec![0.0; layer.maps_out],
        input: want_input.then(|| Maps::zeros(input.count, input.height, input.width)),
    };
    for j in 0..layer.maps_out {
        let dsj = &ds[j * plane..(j + 1) * plane];
        grad.biases[j] = dsj.iter().sum();
        for &i in &layer.connectivity[j] {
            let xi = input.map(i);
            let at = layer.filter_offset(j, i);
            for kr in 0..kh {
                for kc in 0..kw {
                    let mut acc = 0.0;
                    for r in 0..oh {
                        let src = &xi[(r + kr) * input.width + kc..(r + kr) * input.width + kc + ow];
                        let d = &dsj[r * ow..(r + 1) * ow];
                        acc += src.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grad.filters[at + kr * kw + kc] = acc;
                }
            }
            if let Some(dx) = grad.input.as_mut() {
                let width = dx.width;
                let dxi = dx.map_mut(i);
                let h = layer.filter(j, i);
                for kr in 0..kh {
                    for kc in 0..kw {
                        let w = h[kr * kw + kc];
                        for r in 0..oh {
                            let dst = &mut dxi[(r + kr) * width + kc..(r + kr) * width + kc + ow];
                            let d = &dsj[r * ow..(r + 1) * ow];
                            for (o, g) in dst.iter_mut().zip(d) {
                                *o += w * g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Non-overlapping max pooling. Returns the pooled maps and, for each pooled
/// cell, the flat index of the winning input cell (first in row-major order on
/// ties).
pub fn maxpool_forward(input: &Maps, window: usize) -> Result<(Maps, Vec<usize>)> {
    let (oh, ow) = pooled_size(input.height, input.width, window)?;
    let mut out = Maps::zeros(input.count, oh, ow);
    let mut argmax = vec![0; out.data.len()];
    for m in 0..input.count {
        for r in 0..oh {
            for c in 0..ow {
                let mut best_at = (m * input.height + r * window) * input.width + c * window;
                let mut best = input.data[best_at];
                for dr in 0..window {
                    for dc in 0..window {
                        let at = (m * input.height + r * window + dr) * input.width + c * window + dc;
                        if input.data[at] > best {
                            best = input.data[at];
                            best_at = at;
                        }
                    }
                }
                let o = (m * oh + r) * ow + c;
                out.data[o] = best;
                argmax[o] = best_at;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each upstream value to its window's winning input cell.
pub fn maxpool_backward(input_shape: (usize, usize, usize), argmax: &[usize], upstream: &Maps) -> Result<Maps> {
    check_len("pool backward", argmax.len(), upstream.data.len())?;
    let (count, h, w) = input_shape;
    let mut dx = Maps::zeros(count, h, w);
    for (&at, &g) in argmax.iter().zip(&upstream.data) {
        dx.data[at] += g;
    }
    Ok(dx)
}

fn pooled_size(h: usize, w: usize, window: usize) -> Result<(usize, usize)> {
    if window == 0 {
        return Err(LdnnError::param("pool window must be positive"));
    }
    if h % window != 0 || w % window != 0 {
        return Err(LdnnError::Shape {
            context: "pool window must divide the map size",
            expected: window,
            found: if h % window != 0 { h } else { w },
        });
    }
    Ok((h / window, w / window))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Conv(ConvLayer),
    Pool { window: usize },
}

/// Ordered convolution/pooling stages applied to `(maps, height, width)` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack {
    input: (usize, usize, usize),
    stages: Vec<Stage>,
}

/// Intermediate maps of one stack forward pass.
#[derive(Debug, Clone)]
pub struct StackTrace {
    /// `activations[k]` is the input of stage `k`; the last entry is the output.
    pub activations: Vec<Maps>,
    /// Preactivations `S` of convolution stages.
    pub pre: Vec<Option<Maps>>,
    /// Winner indices of pooling stages.
    pub argmax: Vec<Option<Vec<usize>>>,
}

impl StackTrace {
    pub fn output(&self) -> &Maps {
        self.activations.last().expect("trace holds the input")
    }
}

/// Per-stage parameter gradients (`None` for pooling stages).
#[derive(Debug, Clone, PartialEq)]
pub struct StackGradient {
    pub layers: Vec<Option<ConvGradient>>,
}

impl ConvStack {
    pub fn new(input: (usize, usize, usize), stages: Vec<Stage>) -> Result<Self> {
        let stack = ConvStack { input, stages };
        stack.output_shape()?;
        Ok(stack)
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn input_len(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn stages_mut(&mut self) -> &mut [Stage] {
        &mut self.stages
    }

    /// Output shape computed from the stage parameters alone.
    pub fn output_shape(&self) -> Result<(usize, usize, usize)> {
        let mut shape = self.input;
        for stage in &self.stages {
            shape = match stage {
                Stage::Conv(layer) => layer.output_shape(shape)?,
                Stage::Pool { window } => {
                    let (h, w) = pooled_size(shape.1, shape.2, *window)?;
                    (shape.0, h, w)
                }
            };
        }
        Ok(shape)
    }

    pub fn output_len(&self) -> Result<usize> {
        let (m, h, w) = self.output_shape()?;
        Ok(m * h * w)
    }

    pub fn is_finite(&self) -> bool {
        self.stages.iter().all(|s| match s {
            Stage::Conv(l) => l.is_finite(),
            Stage::Pool { .. } => true,
        })
    }

    pub fn forward(&self, input: &[f64]) -> Result<StackTrace> {
        let (m, h, w) = self.input;
        let first = Maps::from_vec(m, h, w, input.to_vec())?;
        let mut trace = StackTrace {
            activations: vec![first],
            pre: Vec::with_capacity(self.stages.len()),
            argmax: Vec::with_capacity(self.stages.len()),
        };
        for stage in &self.stages {
            let current = trace.activations.last().expect("nonempty");
            match stage {
                Stage::Conv(layer) => {
                    let (s, x) = conv_forward(layer, current)?;
                    trace.pre.push(Some(s));
                    trace.argmax.push(None);
                    trace.activations.push(x);
                }
                Stage::Pool { window } => {
                    let (out, idx) = maxpool_forward(current, *window)?;
                    trace.pre.push(None);
                    trace.argmax.push(Some(idx));
                    trace.activations.push(out);
                }
            }
        }
        Ok(trace)
    }

    /// Flattened output features.
    pub fn features(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.activations.pop().expect("nonempty").data)
    }

    /// Backpropagates `dE/d(output)` (flattened) through every stage.
    pub fn backward(&self, trace: &StackTrace, d_output: &[f64]) -> Result<StackGradient> {
        let out = trace.output();
        check_len("stack output sensitivity", out.data.len(), d_output.len())?;
        let mut upstream = Maps {
            data: d_output.to_vec(),
            ..out.clone()
        };
        let mut layers = vec![None; self.stages.len()];
        for (k, stage) in self.stages.iter().enumerate().rev() {
            let input = &trace.activations[k];
            // The first stage's input is the image; its sensitivity is never needed.
            let want_input = k > 0;
            match stage {
                Stage::Conv(layer) => {
                    let pre = trace.pre[k].as_ref().ok_or_else(|| LdnnError::param("trace/stack mismatch"))?;
                    let mut grad = conv_backward(layer, input, pre, &trace.activations[k + 1], &upstream, want_input)?;
                    if let Some(dx) = grad.input.take() {
                        upstream = dx;
                    }
                    layers[k] = Some(grad);
                }
                Stage::Pool { .. } => {
                    if want_input {
                        let idx = trace.argmax[k].as_ref().ok_or_else(|| LdnnError::param("trace/stack mismatch"))?;
                        upstream = maxpool_backward(input.shape(), idx, &upstream)?;
                    }
                }
            }
        }
        Ok(StackGradient { layers })
    }
}

/// Serializable description of a stack to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSpec {
    /// `[maps, height, width]` of the input.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        maps_out: usize,
        kernel: usize,
        #[serde(default)]
        activation: Activation,
    },
    Pool {
        window: usize,
    },
}

impl StackSpec {
    /// Builds the stack with randomly initialized, fully connected filters.
    pub fn build(&self, seed: u64) -> Result<ConvStack> {
        let mut rng = rng_from(seed);
        let mut maps = self.input[0];
        let mut stages = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            stages.push(match *layer {
                LayerSpec::Conv {
                    maps_out,
                    kernel,
                    activation,
                } => {
                    let l = ConvLayer::random(maps, maps_out, kernel, kernel, activation, &mut rng)?;
                    maps = maps_out;
                    Stage::Conv(l)
                }
                LayerSpec::Pool { window } => Stage::Pool { window },
            });
        }
        ConvStack::new((self.input[0], self.input[1], self.input[2]), stages)
    }
}

/// A convolutional stack feeding one LDNN head per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLdnn {
    pub stack: ConvStack,
    pub heads: MulticlassModel,
}

/// Gradient of the summed per-class loss for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLdnnGradient {
    pub stack: StackGradient,
    pub heads: Vec<Gradient>,
    pub loss: f64,
}

fn one_hot(classes: usize, label: usize) -> Vec<f64> {
    (0..classes).map(|c| if c == label { 1.0 } else { 0.0 }).collect()
}

impl ConvLdnn {
    pub fn new(stack: ConvStack, heads: MulticlassModel) -> Result<Self> {
        check_len("head inputs vs stack output", stack.output_len()?, heads.inputs())?;
        Ok(ConvLdnn { stack, heads })
    }

    pub fn forward(&self, image: &[f64]) -> Result<(Vec<f64>, usize)> {
        let features = self.stack.features(image)?;
        self.heads.forward(&features)
    }

    pub fn predict(&self, image: &[f64]) -> Result<usize> {
        Ok(self.forward(image)?.1)
    }

    /// `sum_c E(f_c, y_c)` with one-hot targets.
    pub fn loss(&self, image: &[f64], label: usize, kind: LossKind) -> Result<f64> {
        let (scores, _) = self.forward(image)?;
        let y = one_hot(scores.len(), label);
        Ok(scores.iter().zip(&y).map(|(&f, &t)| kind.loss(f, t)).sum())
    }

    /// Analytic gradient of [`ConvLdnn::loss`] for every parameter.
    pub fn gradient(&self, image: &[f64], label: usize, kind: LossKind) -> Result<ConvLdnnGradient> {
        let trace = self.stack.forward(image)?;
        let features = &trace.output().data;
        let y = one_hot(self.heads.classes(), label);
        let mut heads = Vec::with_capacity(self.heads.classes());
        let mut d_features = vec![0.0; features.len()];
        let mut loss = 0.0;
        for (model, &t) in self.heads.models().iter().zip(&y) {
            let head_trace = model.forward(features)?;
            loss += kind.loss(head_trace.f, t);
            let deltas = model.unit_sensitivities(&head_trace, t, kind)?;
            model.accumulate_input_sensitivity(&deltas, &mut d_features);
            heads.push(model.backward(&head_trace, features, t, kind)?);
        }
        let stack = self.stack.backward(&trace, &d_features)?;
        Ok(ConvLdnnGradient { stack, heads, loss })
    }

    pub fn to_document(&self) -> ConvLdnnDocument {
        let heads = self.heads.to_document();
        let layers = self
            .stack
            .stages
            .iter()
            .map(|stage| match stage {
                Stage::Pool { window } => LayerDocument::Pool { window: *window },
                Stage::Conv(l) => LayerDocument::Conv {
                    kernel_h: l.kernel_h,
                    kernel_w: l.kernel_w,
                    maps_in: l.maps_in,
                    maps_out: l.maps_out,
                    connectivity: l.connectivity.clone(),
                    activation: l.activation,
                    filters: (0..l.maps_out)
                        .map(|j| {
                            (0..l.maps_in)
                                .map(|i| l.filter(j, i).chunks(l.kernel_w).map(<[f64]>::to_vec).collect())
                                .collect()
                        })
                        .collect(),
                    biases: l.biases.clone(),
                },
            })
            .collect();
        let (m, h, w) = self.stack.input;
        ConvLdnnDocument {
            format_version: FORMAT_VERSION,
            classes: heads.classes,
            models: heads.models,
            input: [m, h, w],
            layers,
        }
    }

    pub fn from_document(doc: &ConvLdnnDocument) -> Result<Self> {
        check_version(doc.format_version)?;
        let heads = MulticlassModel::from_document(&crate::model::MulticlassDocument {
            format_version: doc.format_version,
            classes: doc.classes,
            models: doc.models.clone(),
        })?;
        let mut stages = Vec::with_capacity(doc.layers.len());
        for layer in &doc.layers {
            stages.push(match layer {
                LayerDocument::Pool { window } => Stage::Pool { window: *window },
                LayerDocument::Conv {
                    kernel_h,
                    kernel_w,
                    maps_in,
                    maps_out,
                    connectivity,
                    activation,
                    filters,
                    biases,
                } => {
                    let mut l = ConvLayer::with_connectivity(
                        *maps_in,
                        *maps_out,
                        *kernel_h,
                        *kernel_w,
                        connectivity.clone(),
                        *activation,
                    )?;
                    check_len("document filter maps_out", *maps_out, filters.len())?;
                    check_len("document biases", *maps_out, biases.len())?;
                    for (j, per_in) in filters.iter().enumerate() {
                        check_len("document filter maps_in", *maps_in, per_in.len())?;
                        for (i, kernel) in per_in.iter().enumerate() {
                            check_len("document kernel rows", *kernel_h, kernel.len())?;
                            let dst = l.filter_mut(j, i);
                            for (r, row) in kernel.iter().enumerate() {
                                check_len("document kernel cols", *kernel_w, row.len())?;
                                dst[r * kernel_w..(r + 1) * kernel_w].copy_from_slice(row);
                            }
                        }
                    }
                    l.biases.copy_from_slice(biases);
                    if !l.is_finite() {
                        return Err(LdnnError::Document("non-finite convolution parameter".into()));
                    }
                    Stage::Conv(l)
                }
            });
        }
        let stack = ConvStack::new((doc.input[0], doc.input[1], doc.input[2]), stages)?;
        ConvLdnn::new(stack, heads)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ConvLdnnDocument = serde_json::from_str(text).map_err(|e| LdnnError::Document(e.to_string()))?;
        ConvLdnn::from_document(&doc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLdnnDocument {
    pub format_version: u32,
    pub classes: usize,
    pub models: Vec<ModelDocument>,
    pub input: [usize; 3],
    pub layers: Vec<LayerDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerDocument {
    Conv {
        kernel_h: usize,
        kernel_w: usize,
        maps_in: usize,
        maps_out: usize,
        connectivity: Vec<Vec<usize>>,
        activation: Activation,
        /// `[maps_out][maps_in][kernel_h][kernel_w]`.
        filters: Vec<Vec<Vec<Vec<f64>>>>,
        biases: Vec<f64>,
    },
    Pool {
        window: usize,
    },
}

/// Stack features for every row of `data`, as a new dataset.
pub fn feature_dataset(stack: &ConvStack, data: &Dataset) -> Result<Dataset> {
    check_len("image length", stack.input_len(), data.dim())?;
    let n = stack.output_len()?;
    let mut features = Vec::with_capacity(n * data.len());
    for row in data.rows() {
        features.extend(stack.features(row)?);
    }
    Dataset::new(features, n, data.labels().to_vec(), data.classes())
}

/// One-vs-rest head initialization on the stack's current features.
pub fn initialize_heads(stack: &ConvStack, data: &Dataset, init: &InitMode, seed: u64) -> Result<MulticlassModel> {
    let features = feature_dataset(stack, data)?;
    initialize_multiclass(&features, init, seed)
}

/// Momentum state for every conv layer.
struct StackVelocity {
    filters: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl StackVelocity {
    fn new(stack: &ConvStack) -> Self {
        let mut filters = Vec::new();
        let mut biases = Vec::new();
        for stage in &stack.stages {
            match stage {
                Stage::Conv(l) => {
                    filters.push(vec![0.0; l.filters.len()]);
                    biases.push(vec![0.0; l.biases.len()]);
                }
                Stage::Pool { .. } => {
                    filters.push(Vec::new());
                    biases.push(Vec::new());
                }
            }
        }
        StackVelocity { filters, biases }
    }
}

fn momentum_step(params: &mut [f64], velocity: &mut [f64], grad: &[f64], step: f64, momentum: f64) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - step * g;
        *p += *v;
    }
}

/// Loss and error totals of one joint epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvEpochStats {
    pub mean_loss: f64,
    pub errors: usize,
}

struct ConvTrainer {
    head_velocity: Vec<Velocity>,
    stack_velocity: StackVelocity,
    traces: Vec<ForwardTrace>,
    deltas: Vec<Vec<f64>>,
    scores: Vec<f64>,
}

impl ConvTrainer {
    fn new(net: &ConvLdnn) -> Self {
        let models = net.heads.models();
        ConvTrainer {
            head_velocity: models.iter().map(Gradient::zeros_like).collect(),
            stack_velocity: StackVelocity::new(&net.stack),
            traces: models.iter().map(ForwardTrace::for_model).collect(),
            deltas: models.iter().map(|m| vec![0.0; m.units()]).collect(),
            scores: vec![0.0; models.len()],
        }
    }

    fn diverged(epoch: usize, stage: String, detail: String) -> LdnnError {
        LdnnError::Divergence { epoch, stage, detail }
    }

    #[allow(clippy::too_many_arguments)]
    fn epoch(
        &mut self,
        net: &mut ConvLdnn,
        data: &Dataset,
        step: f64,
        momentum: f64,
        loss: LossKind,
        rng: &mut ChaCha8Rng,
        epoch: usize,
    ) -> Result<ConvEpochStats> {
        let classes = net.heads.classes();
        let mut total = 0.0;
        let mut errors = 0;
        for idx in crate::train::epoch_order(data.len(), rng) {
            let image = data.row(idx);
            let label = data.label(idx);
            let trace = net.stack.forward(image)?;
            let features = &trace.output().data;
            let mut d_features = vec![0.0; features.len()];
            for c in 0..classes {
                let model = &net.heads.models()[c];
                model.forward_into(features, &mut self.traces[c])?;
                let f = self.traces[c].f;
                let y = if c == label { 1.0 } else { 0.0 };
                let l = loss.loss(f, y);
                if !l.is_finite() {
                    return Err(Self::diverged(epoch, format!("head {c}"), format!("non-finite loss on instance {idx}")));
                }
                total += l;
                self.scores[c] = f;
                model.unit_sensitivities_into(&self.traces[c], loss.derivative(f, y), &mut self.deltas[c]);
                // Input sensitivities use the heads' pre-update weights.
                model.accumulate_input_sensitivity(&self.deltas[c], &mut d_features);
            }
            if argmax(&self.scores) != label {
                errors += 1;
            }
            let grads = net.stack.backward(&trace, &d_features)?;
            for c in 0..classes {
                if self.deltas[c].iter().any(|d| !d.is_finite()) {
                    return Err(Self::diverged(epoch, format!("head {c}"), format!("non-finite gradient on instance {idx}")));
                }
                let model = &mut net.heads.models_mut()[c];
                apply_update(model, &mut self.head_velocity[c], features, &self.deltas[c], step, momentum);
            }
            for (k, (stage, grad)) in net.stack.stages.iter_mut().zip(&grads.layers).enumerate() {
                if let (Stage::Conv(layer), Some(g)) = (stage, grad) {
                    if !g.is_finite() {
                        return Err(Self::diverged(
                            epoch,
                            format!("conv layer {k}"),
                            format!("non-finite gradient on instance {idx}"),
                        ));
                    }
                    momentum_step(&mut layer.filters, &mut self.stack_velocity.filters[k], &g.filters, step, momentum);
                    momentum_step(&mut layer.biases, &mut self.stack_velocity.biases[k], &g.biases, step, momentum);
                    // Unconnected kernel slices have zero gradient and stay zero.
                }
            }
        }
        for (k, stage) in net.stack.stages.iter().enumerate() {
            if let Stage::Conv(layer) = stage {
                if !layer.is_finite() {
                    return Err(Self::diverged(epoch, format!("conv layer {k}"), "parameters became non-finite".into()));
                }
            }
        }
        if !net.heads.models().iter().all(|m| m.is_finite()) {
            return Err(Self::diverged(epoch, "heads".into(), "parameters became non-finite".into()));
        }
        Ok(ConvEpochStats {
            mean_loss: total / data.len() as f64,
            errors,
        })
    }
}

/// Multi-class error (%) of a conv network on `data`.
pub fn conv_error(net: &ConvLdnn, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(LdnnError::param("cannot measure error on an empty dataset"));
    }
    let mut wrong = 0;
    for (x, &label) in data.rows().zip(data.labels()) {
        if net.predict(x)? != label {
            wrong += 1;
        }
    }
    Ok(100.0 * wrong as f64 / data.len() as f64)
}

/// Joint per-sample training of the stack and the heads.
///
/// Every sample runs the stack forward, the heads forward and backward, sends
/// the summed head input sensitivities back through the stack, and applies
/// momentum updates to every parameter. Per-epoch history mirrors
/// [`crate::train::fit`], including optional validation-based early stopping.
pub fn train_convldnn(net: ConvLdnn, data: &Dataset, cfg: &TrainConfig) -> Result<(ConvLdnn, History)> {
    cfg.validate()?;
    check_len("image length", net.stack.input_len(), data.dim())?;
    if data.is_empty() {
        return Err(LdnnError::EmptyInput("training data has no instances".into()));
    }
    check_len("head count vs classes", data.classes(), net.heads.classes())?;
    let (train, val) = training_parts(data, cfg)?;
    let mut net = net;
    let mut trainer = ConvTrainer::new(&net);
    let mut rng = derived_rng(cfg.seed, SHUFFLE_TAG);
    let mut history = History::default();
    let patience = cfg.early_stop.map_or(DEFAULT_PATIENCE, |e| e.patience);
    let mut best = match &val {
        Some(v) => Some((conv_error(&net, v)?, net.clone())),
        None => None,
    };
    for (e, step) in cfg.schedule().into_iter().enumerate() {
        let epoch = e + 1;
        let stats = trainer.epoch(&mut net, &train, step, cfg.momentum, cfg.loss, &mut rng, epoch)?;
        let val_error = val.as_ref().map(|v| conv_error(&net, v)).transpose()?;
        log::info!(
            "epoch {epoch}: loss {:.6}, online error {:.3}%",
            stats.mean_loss,
            100.0 * stats.errors as f64 / train.len() as f64
        );
        history.epochs.push(EpochRecord {
            epoch,
            step,
            train_loss: stats.mean_loss,
            train_error: 100.0 * stats.errors as f64 / train.len() as f64,
            val_error,
        });
        if let (Some(err), Some((best_err, snapshot))) = (val_error, best.as_mut()) {
            if err < *best_err {
                *best_err = err;
                *snapshot = net.clone();
                history.best_epoch = epoch;
            } else if epoch - history.best_epoch >= patience {
                history.stopped_early = true;
                break;
            }
        } else {
            history.best_epoch = epoch;
        }
    }
    if let Some((_, snapshot)) = best {
        net = snapshot;
    }
    Ok((net, history))
}

/// Seed tags for building a conv network from a spec.
const STACK_TAG: u64 = 30;
const HEADS_TAG: u64 = 31;

/// Builds a stack from `spec` and initializes heads on its initial features.
pub fn build_convldnn(spec: &StackSpec, data: &Dataset, heads: &InitMode, seed: u64) -> Result<ConvLdnn> {
    let stack = spec.build(derive_seed(seed, STACK_TAG))?;
    let heads = initialize_heads(&stack, data, heads, derive_seed(seed, HEADS_TAG))?;
    ConvLdnn::new(stack, heads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::initialize_random;

    fn maps(count: usize, h: usize, w: usize, seed: u64) -> Maps {
        let mut rng = rng_from(seed);
        let data = (0..count * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        Maps::from_vec(count, h, w, data).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let mut layer = ConvLayer::zeros(1, 1, 1, 1, Activation::Identity).unwrap();
        layer.filter_mut(0, 0)[0] = 1.0;
        let input = maps(1, 4, 5, 1);
        let (_, x) = conv_forward(&layer, &input).unwrap();
        assert_eq!(x, input);
    }

    #[test]
    fn bias_only_is_constant() {
        let mut layer = ConvLayer::zeros(2, 1, 3, 3, Activation::Logistic).unwrap();
        layer.biases_mut()[0] = 0.7;
        let (_, x) = conv_forward(&layer, &maps(2, 5, 5, 2)).unwrap();
        assert!(x.data.iter().all(|&v| v == crate::model::sigmoid(0.7)));
    }

    #[test]
    fn hand_cross_correlation() {
        let mut layer = ConvLayer::zeros(1, 1, 2, 2, Activation::Identity).unwrap();
        layer.filter_mut(0, 0).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let input = Maps::from_vec(1, 3, 3, (1..=9).map(f64::from).collect()).unwrap();
        let (_, x) = conv_forward(&layer, &input).unwrap();
        assert_eq!(x.data, vec![6.0, 8.0, 12.0, 14.0]);
    }

    #[test]
    fn kernel_larger_than_map() {
        let layer = ConvLayer::zeros(1, 1, 4, 4, Activation::Identity).unwrap();
        assert!(matches!(conv_forward(&layer, &maps(1, 3, 3, 0)), Err(LdnnError::Shape { .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let layer = ConvLayer::random(2, 3, 3, 3, Activation::Logistic, &mut rng_from(1)).unwrap();
        let input = maps(2, 6, 6, 3);
        let (s, x) = conv_forward(&layer, &input).unwrap();
        let up = Maps::zeros(3, 4, 4);
        let g = conv_backward(&layer, &input, &s, &x, &up, true).unwrap();
        assert!(g.filters.iter().chain(&g.biases).all(|&v| v == 0.0));
        assert!(g.input.unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_gradient() {
        let mut layer = ConvLayer::zeros(1, 1, 1, 1, Activation::Identity).unwrap();
        layer.filter_mut(0, 0)[0] = 1.0;
        let input = maps(1, 3, 4, 5);
        let (s, x) = conv_forward(&layer, &input).unwrap();
        let up = maps(1, 3, 4, 6);
        let g = conv_backward(&layer, &input, &s, &x, &up, true).unwrap();
        assert_eq!(g.input.unwrap(), up);
    }

    /// Full 2-D convolution written out directly.
    fn full_convolution(d: &[f64], dh: usize, dw: usize, k: &[f64], kh: usize, kw: usize) -> Vec<f64> {
        let (h, w) = (dh + kh - 1, dw + kw - 1);
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for a in 0..kh {
                    for b in 0..kw {
                        // out[r][c] = sum_{a,b} d[r-a][c-b] * k[a][b]
                        if r >= a && c >= b && r - a < dh && c - b < dw {
                            acc += d[(r - a) * dw + (c - b)] * k[a * kw + b];
                        }
                    }
                }
                out[r * w + c] = acc;
            }
        }
        out
    }

    #[test]
    fn input_sensitivity_is_full_convolution() {
        let mut layer = ConvLayer::random(1, 1, 3, 2, Activation::Identity, &mut rng_from(2)).unwrap();
        layer.biases_mut()[0] = 0.3;
        let input = maps(1, 6, 5, 7);
        let (s, x) = conv_forward(&layer, &input).unwrap();
        let up = maps(1, 4, 4, 8);
        let g = conv_backward(&layer, &input, &s, &x, &up, true).unwrap();
        let expected = full_convolution(&up.data, 4, 4, layer.filter(0, 0), 3, 2);
        for (a, b) in g.input.unwrap().data.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_equals_convolution_with_rotated_kernel() {
        let mut layer = ConvLayer::random(1, 1, 3, 3, Activation::Identity, &mut rng_from(3)).unwrap();
        layer.biases_mut()[0] = 0.0;
        let input = maps(1, 7, 6, 4);
        let (_, x) = conv_forward(&layer, &input).unwrap();
        let k = layer.filter(0, 0);
        let rotated: Vec<f64> = k.iter().rev().copied().collect();
        // Valid convolution: out[r][c] = sum_{a,b} in[r+2-a][c+2-b] * rot[a][b].
        for r in 0..5 {
            for c in 0..4 {
                let mut acc = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        acc += input.at(0, r + 2 - a, c + 2 - b) * rotated[a * 3 + b];
                    }
                }
                assert!((x.at(0, r, c) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sparse_connectivity_ignores_other_maps() {
        let mut layer =
            ConvLayer::with_connectivity(2, 1, 1, 1, vec![vec![1]], Activation::Identity).unwrap();
        layer.filter_mut(0, 1)[0] = 2.0;
        layer.filter_mut(0, 0)[0] = 100.0;
        let input = maps(2, 2, 2, 9);
        let (_, x) = conv_forward(&layer, &input).unwrap();
        for (a, b) in x.data.iter().zip(input.map(1)) {
            assert_eq!(*a, 2.0 * b);
        }
        assert!(ConvLayer::with_connectivity(2, 1, 1, 1, vec![vec![2]], Activation::Identity).is_err());
    }

    #[test]
    fn pooling_single_window() {
        let m = Maps::from_vec(1, 2, 2, vec![1.0, 3.0, 2.0, 0.0]).unwrap();
        let (p, idx) = maxpool_forward(&m, 2).unwrap();
        assert_eq!(p.data, vec![3.0]);
        let back = maxpool_backward(m.shape(), &idx, &Maps::from_vec(1, 1, 1, vec![1.0]).unwrap()).unwrap();
        assert_eq!(back.data, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn pooling_ties_go_to_first_cell() {
        let m = Maps::from_vec(1, 4, 4, vec![5.0; 16]).unwrap();
        let (p, idx) = maxpool_forward(&m, 2).unwrap();
        assert!(p.data.iter().all(|&v| v == 5.0));
        let back = maxpool_backward(m.shape(), &idx, &Maps::from_vec(1, 2, 2, vec![1.0; 4]).unwrap()).unwrap();
        let firsts = [0, 2, 8, 10];
        for (at, &v) in back.data.iter().enumerate() {
            assert_eq!(v, if firsts.contains(&at) { 1.0 } else { 0.0 });
        }
        assert!(maxpool_forward(&Maps::zeros(1, 3, 4), 2).is_err());
    }

    fn tiny_net(seed: u64) -> ConvLdnn {
        let spec = StackSpec {
            input: [1, 8, 8],
            layers: vec![
                LayerSpec::Conv {
                    maps_out: 2,
                    kernel: 3,
                    activation: Activation::Logistic,
                },
                LayerSpec::Pool { window: 2 },
            ],
        };
        let stack = spec.build(seed).unwrap();
        let n = stack.output_len().unwrap();
        let heads = MulticlassModel::new(vec![
            initialize_random(n, 1, 2, seed + 1).unwrap(),
            initialize_random(n, 1, 2, seed + 2).unwrap(),
        ])
        .unwrap();
        ConvLdnn::new(stack, heads).unwrap()
    }

    #[test]
    fn symbolic_shape_matches_forward() {
        let net = tiny_net(1);
        let img = maps(1, 8, 8, 3);
        assert_eq!(net.stack.output_len().unwrap(), net.stack.features(&img.data).unwrap().len());
        assert_eq!(net.stack.output_shape().unwrap(), (2, 3, 3));
    }

    #[test]
    fn document_round_trip() {
        let net = tiny_net(4);
        let back = ConvLdnn::from_json(&net.to_json()).unwrap();
        assert_eq!(back, net);
        let text = net.to_json();
        assert!(text.contains("\"kind\": \"pool\""));
        assert!(text.contains("\"connectivity\""));
    }

    #[test]
    fn zero_epochs_leaves_network_unchanged() {
        let net = tiny_net(5);
        let data = Dataset::new(maps(4, 8, 8, 1).data, 64, vec![0, 1, 0, 1], 2).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (out, history) = train_convldnn(net.clone(), &data, &cfg).unwrap();
        assert_eq!(out, net);
        assert!(history.epochs.is_empty());
    }

    #[test]
    fn training_reduces_loss() {
        let net = tiny_net(6);
        // Class 1 images are bright in the top half, class 0 in the bottom half.
        let mut rng = rng_from(3);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for k in 0..40 {
            let label = k % 2;
            for r in 0..8 {
                for _ in 0..8 {
                    let bright = (r < 4) == (label == 1);
                    features.push(if bright { 0.8 } else { 0.1 } + rng.random_range(-0.1..0.1));
                }
            }
            labels.push(label);
        }
        let data = Dataset::new(features, 64, labels, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 15,
            step: 0.1,
            momentum: 0.5,
            loss: LossKind::CrossEntropy,
            ..TrainConfig::default()
        };
        let (trained, history) = train_convldnn(net, &data, &cfg).unwrap();
        assert!(history.epochs.last().unwrap().train_loss < history.epochs[0].train_loss);
        assert_eq!(conv_error(&trained, &data).unwrap(), 0.0);
    }
}
