//! The LDNN model: an `N x M` grid of logistic discriminants feeding `N`
//! product (soft-AND) gates whose negations are combined by a final soft NAND.
//!
//! ```text
//! sigma_ij(x) = 1 / (1 + exp(-(w_ij . x + b_ij)))
//! g_i(x)      = prod_j sigma_ij(x)
//! f(x)        = 1 - prod_i (1 - g_i(x))
//! ```
//!
//! Weights are stored flat in `[i][j][k]` row-major order, biases in `[i][j]`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, LdnnError, Result};

/// Version written into every model document.
pub const FORMAT_VERSION: u32 = 1;

/// Preactivations are clamped to this magnitude before exponentiation.
pub const PREACTIVATION_CLAMP: f64 = 500.0;

/// Cross-entropy evaluates the log terms on `f` clamped to `[EPS, 1 - EPS]`.
pub const CROSS_ENTROPY_EPS: f64 = 1e-12;

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    let t = t.clamp(-PREACTIVATION_CLAMP, PREACTIVATION_CLAMP);
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Quadratic,
    CrossEntropy,
}

impl LossKind {
    /// Per-sample loss for output `f` and binary target `y`.
    pub fn loss(self, f: f64, y: f64) -> f64 {
        match self {
            LossKind::Quadratic => (y - f) * (y - f),
            LossKind::CrossEntropy => {
                let f = f.clamp(CROSS_ENTROPY_EPS, 1.0 - CROSS_ENTROPY_EPS);
                -(y * f.ln() + (1.0 - y) * (1.0 - f).ln())
            }
        }
    }

    /// `dE/df`. The cross-entropy clamp is flat, so its derivative is zero
    /// outside `[EPS, 1 - EPS]`.
    pub fn derivative(self, f: f64, y: f64) -> f64 {
        match self {
            LossKind::Quadratic => 2.0 * (f - y),
            LossKind::CrossEntropy => {
                if !(CROSS_ENTROPY_EPS..=1.0 - CROSS_ENTROPY_EPS).contains(&f) {
                    0.0
                } else {
                    (f - y) / (f * (1.0 - f))
                }
            }
        }
    }
}

/// Free function form of [`LossKind::loss`].
pub fn loss(f: f64, y: f64, kind: LossKind) -> f64 {
    kind.loss(f, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdnnModel {
    inputs: usize,
    groups: usize,
    per_group: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `w_ij . x + b_ij`, `[i][j]` row-major.
    pub preactivation: Vec<f64>,
    /// `sigma_ij`, `[i][j]` row-major.
    pub sigma: Vec<f64>,
    /// Conjunction outputs `g_i`.
    pub g: Vec<f64>,
    /// Network output.
    pub f: f64,
}

impl ForwardTrace {
    pub fn for_model(model: &LdnnModel) -> Self {
        let units = model.units();
        ForwardTrace {
            preactivation: vec![0.0; units],
            sigma: vec![0.0; units],
            g: vec![0.0; model.groups],
            f: 0.0,
        }
    }
}

/// Loss gradient with the same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(model: &LdnnModel) -> Self {
        Gradient {
            weights: vec![0.0; model.weights.len()],
            biases: vec![0.0; model.biases.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|v| v.is_finite())
    }
}

/// Combines conjunction outputs into `f = 1 - prod_i (1 - g_i)`.
///
/// Evaluated as `-expm1(sum_i ln1p(-g_i))` so that tiny conjunctions still
/// yield a positive output instead of rounding to zero.
#[inline]
pub fn disjunction(g: &[f64]) -> f64 {
    let log_miss: f64 = g.iter().map(|&gi| (-gi).ln_1p()).sum();
    -log_miss.exp_m1()
}

impl LdnnModel {
    /// All-zero model of the given shape.
    pub fn zeros(inputs: usize, groups: usize, per_group: usize) -> Result<Self> {
        validate_shape(inputs, groups, per_group)?;
        Ok(LdnnModel {
            inputs,
            groups,
            per_group,
            weights: vec![0.0; inputs * groups * per_group],
            biases: vec![0.0; groups * per_group],
        })
    }

    pub fn from_parts(
        inputs: usize,
        groups: usize,
        per_group: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        validate_shape(inputs, groups, per_group)?;
        check_len("model weights", inputs * groups * per_group, weights.len())?;
        check_len("model biases", groups * per_group, biases.len())?;
        if !weights.iter().chain(&biases).all(|v| v.is_finite()) {
            return Err(LdnnError::param("model parameters must be finite"));
        }
        Ok(LdnnModel {
            inputs,
            groups,
            per_group,
            weights,
            biases,
        })
    }

    /// Input dimensionality `n`.
    pub fn inputs(&self) -> usize {
        self.inputs
    }

    /// Number of conjunction groups `N`.
    pub fn groups(&self) -> usize {
        self.groups
    }

    /// Discriminants per group `M`.
    pub fn per_group(&self) -> usize {
        self.per_group
    }

    /// Total number of discriminants, `N * M`.
    pub fn units(&self) -> usize {
        self.groups * self.per_group
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    /// Weight vector `w_ij`.
    pub fn discriminant(&self, i: usize, j: usize) -> &[f64] {
        let u = i * self.per_group + j;
        &self.weights[u * self.inputs..(u + 1) * self.inputs]
    }

    pub fn discriminant_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let u = i * self.per_group + j;
        &mut self.weights[u * self.inputs..(u + 1) * self.inputs]
    }

    pub fn bias(&self, i: usize, j: usize) -> f64 {
        self.biases[i * self.per_group + j]
    }

    pub fn set_bias(&mut self, i: usize, j: usize, value: f64) {
        self.biases[i * self.per_group + j] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|v| v.is_finite())
    }

    /// Returns a copy with every weight and bias multiplied by `scale`.
    pub fn scaled(&self, scale: f64) -> LdnnModel {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w *= scale);
        out.biases.iter_mut().for_each(|b| *b *= scale);
        out
    }

    /// Preactivation `w_ij . x + b_ij` for unit `u = i * M + j`.
    #[inline]
    pub fn preactivation(&self, u: usize, x: &[f64]) -> f64 {
        let w = &self.weights[u * self.inputs..(u + 1) * self.inputs];
        w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.biases[u]
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        let mut trace = ForwardTrace::for_model(self);
        self.forward_into(x, &mut trace)?;
        Ok(trace)
    }

    /// Forward pass reusing the buffers of `trace`.
    pub fn forward_into(&self, x: &[f64], trace: &mut ForwardTrace) -> Result<()> {
        check_len("forward input", self.inputs, x.len())?;
        let units = self.units();
        trace.preactivation.resize(units, 0.0);
        trace.sigma.resize(units, 0.0);
        trace.g.resize(self.groups, 0.0);
        for u in 0..units {
            let z = self.preactivation(u, x);
            trace.preactivation[u] = z;
            trace.sigma[u] = sigmoid(z);
        }
        for (i, g) in trace.g.iter_mut().enumerate() {
            *g = trace.sigma[i * self.per_group..(i + 1) * self.per_group]
                .iter()
                .product();
        }
        trace.f = disjunction(&trace.g);
        Ok(())
    }

    /// Network output only.
    pub fn output(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.f)
    }

    /// Thresholded prediction: class 1 iff `f >= 0.5`.
    pub fn predict(&self, x: &[f64]) -> Result<bool> {
        Ok(self.output(x)? >= 0.5)
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        check_len("trace sigma", self.units(), trace.sigma.len())?;
        check_len("trace preactivation", self.units(), trace.preactivation.len())?;
        check_len("trace conjunctions", self.groups, trace.g.len())
    }

    /// `dE/dz_ij` for every discriminant given `dE/df`, written into `out`.
    ///
    /// `dE/dz_ij = dE/df * prod_{r != i}(1 - g_r) * g_i * (1 - sigma_ij)`. The
    /// leave-one-out product over groups comes from prefix/suffix products so
    /// that a conjunction saturated at 1 never causes a division by zero.
    pub fn unit_sensitivities_into(&self, trace: &ForwardTrace, d_out: f64, out: &mut [f64]) {
        let n_groups = self.groups;
        let m = self.per_group;
        // suffix[i] = prod_{r > i} (1 - g_r)
        let mut suffix = vec![1.0; n_groups + 1];
        for i in (0..n_groups).rev() {
            suffix[i] = suffix[i + 1] * (1.0 - trace.g[i]);
        }
        let mut prefix = 1.0;
        for i in 0..n_groups {
            let others = prefix * suffix[i + 1];
            let common = d_out * others * trace.g[i];
            for j in 0..m {
                let u = i * m + j;
                // 1 - sigma(z) evaluated as sigma(-z) to keep precision when saturated.
                out[u] = common * sigmoid(-trace.preactivation[u]);
            }
            prefix *= 1.0 - trace.g[i];
        }
    }

    pub fn unit_sensitivities(&self, trace: &ForwardTrace, y: f64, kind: LossKind) -> Result<Vec<f64>> {
        self.check_trace(trace)?;
        let mut out = vec![0.0; self.units()];
        self.unit_sensitivities_into(trace, kind.derivative(trace.f, y), &mut out);
        Ok(out)
    }

    /// Gradient of the per-sample loss with respect to all weights and biases.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        x: &[f64],
        y: f64,
        kind: LossKind,
    ) -> Result<Gradient> {
        check_len("backward input", self.inputs, x.len())?;
        let deltas = self.unit_sensitivities(trace, y, kind)?;
        let mut grad = Gradient::zeros_like(self);
        for (u, &delta) in deltas.iter().enumerate() {
            grad.biases[u] = delta;
            let row = &mut grad.weights[u * self.inputs..(u + 1) * self.inputs];
            for (g, &xk) in row.iter_mut().zip(x) {
                *g = delta * xk;
            }
        }
        Ok(grad)
    }

    /// Accumulates `dE/dx` given unit sensitivities into `out` (`out += W^T delta`).
    pub fn accumulate_input_sensitivity(&self, deltas: &[f64], out: &mut [f64]) {
        for (u, &delta) in deltas.iter().enumerate() {
            if delta == 0.0 {
                continue;
            }
            let w = &self.weights[u * self.inputs..(u + 1) * self.inputs];
            for (o, &wk) in out.iter_mut().zip(w) {
                *o += delta * wk;
            }
        }
    }

    /// Gradient of the per-sample loss with respect to the input vector.
    pub fn input_sensitivity(&self, trace: &ForwardTrace, y: f64, kind: LossKind) -> Result<Vec<f64>> {
        let deltas = self.unit_sensitivities(trace, y, kind)?;
        let mut out = vec![0.0; self.inputs];
        self.accumulate_input_sensitivity(&deltas, &mut out);
        Ok(out)
    }

    pub fn to_document(&self) -> ModelDocument {
        let m = self.per_group;
        let n = self.inputs;
        let weights = (0..self.groups)
            .map(|i| (0..m).map(|j| self.discriminant(i, j).to_vec()).collect())
            .collect();
        let biases = (0..self.groups)
            .map(|i| self.biases[i * m..(i + 1) * m].to_vec())
            .collect();
        ModelDocument {
            format_version: FORMAT_VERSION,
            n,
            groups: self.groups,
            per_group: m,
            weights,
            biases,
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        check_version(doc.format_version)?;
        let mut weights = Vec::with_capacity(doc.n * doc.groups * doc.per_group);
        check_len("document weight groups", doc.groups, doc.weights.len())?;
        check_len("document bias groups", doc.groups, doc.biases.len())?;
        for group in &doc.weights {
            check_len("document discriminants", doc.per_group, group.len())?;
            for w in group {
                check_len("document weight vector", doc.n, w.len())?;
                weights.extend_from_slice(w);
            }
        }
        let mut biases = Vec::with_capacity(doc.groups * doc.per_group);
        for group in &doc.biases {
            check_len("document biases", doc.per_group, group.len())?;
            biases.extend_from_slice(group);
        }
        LdnnModel::from_parts(doc.n, doc.groups, doc.per_group, weights, biases)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| LdnnError::Document(e.to_string()))?;
        LdnnModel::from_document(&doc)
    }
}

fn validate_shape(inputs: usize, groups: usize, per_group: usize) -> Result<()> {
    if inputs == 0 || groups == 0 || per_group == 0 {
        return Err(LdnnError::param(format!(
            "model shape must be positive, got n={inputs}, N={groups}, M={per_group}"
        )));
    }
    Ok(())
}

pub(crate) fn check_version(version: u32) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(LdnnError::Document(format!(
            "unsupported format_version {version} (expected {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

/// Serialized form of a binary model. Floats are written with the shortest
/// decimal that round-trips, so save/load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format_version: u32,
    pub n: usize,
    #[serde(rename = "N")]
    pub groups: usize,
    #[serde(rename = "M")]
    pub per_group: usize,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

/// One LDNN per class, trained one-vs-rest.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassModel {
    models: Vec<LdnnModel>,
}

impl MulticlassModel {
    pub fn new(models: Vec<LdnnModel>) -> Result<Self> {
        if models.len() < 2 {
            return Err(LdnnError::param(format!(
                "a multi-class model needs at least 2 classes, got {}",
                models.len()
            )));
        }
        let n = models[0].inputs();
        for m in &models[1..] {
            check_len("per-class model inputs", n, m.inputs())?;
        }
        Ok(MulticlassModel { models })
    }

    pub fn classes(&self) -> usize {
        self.models.len()
    }

    pub fn inputs(&self) -> usize {
        self.models[0].inputs()
    }

    pub fn models(&self) -> &[LdnnModel] {
        &self.models
    }

    pub fn models_mut(&mut self) -> &mut [LdnnModel] {
        &mut self.models
    }

    /// Per-class scores `f_c(x)` and the argmax class (lowest index on ties).
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, usize)> {
        let scores = self
            .models
            .iter()
            .map(|m| m.output(x))
            .collect::<Result<Vec<_>>>()?;
        let predicted = argmax(&scores);
        Ok((scores, predicted))
    }

    pub fn traces(&self, x: &[f64]) -> Result<Vec<ForwardTrace>> {
        self.models.iter().map(|m| m.forward(x)).collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(self.forward(x)?.1)
    }

    /// Summed input sensitivity of all per-class losses.
    pub fn input_sensitivity(
        &self,
        traces: &[ForwardTrace],
        targets: &[f64],
        kind: LossKind,
    ) -> Result<Vec<f64>> {
        multiclass_input_sensitivity(&self.models, traces, targets, kind)
    }

    pub fn to_document(&self) -> MulticlassDocument {
        MulticlassDocument {
            format_version: FORMAT_VERSION,
            classes: self.classes(),
            models: self.models.iter().map(LdnnModel::to_document).collect(),
        }
    }

    pub fn from_document(doc: &MulticlassDocument) -> Result<Self> {
        check_version(doc.format_version)?;
        check_len("document classes", doc.classes, doc.models.len())?;
        let models = doc
            .models
            .iter()
            .map(LdnnModel::from_document)
            .collect::<Result<Vec<_>>>()?;
        MulticlassModel::new(models)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MulticlassDocument =
            serde_json::from_str(text).map_err(|e| LdnnError::Document(e.to_string()))?;
        MulticlassModel::from_document(&doc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MulticlassDocument {
    pub format_version: u32,
    pub classes: usize,
    pub models: Vec<ModelDocument>,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = c;
        }
    }
    best
}

/// `sum_c dE_c/dx` over any number of per-class models (including one).
pub fn multiclass_input_sensitivity(
    models: &[LdnnModel],
    traces: &[ForwardTrace],
    targets: &[f64],
    kind: LossKind,
) -> Result<Vec<f64>> {
    check_len("multiclass traces", models.len(), traces.len())?;
    check_len("multiclass targets", models.len(), targets.len())?;
    let n = models.first().map(LdnnModel::inputs).unwrap_or(0);
    let mut out = vec![0.0; n];
    for ((model, trace), &y) in models.iter().zip(traces).zip(targets) {
        check_len("per-class model inputs", n, model.inputs())?;
        let deltas = model.unit_sensitivities(trace, y, kind)?;
        model.accumulate_input_sensitivity(&deltas, &mut out);
    }
    Ok(out)
}
