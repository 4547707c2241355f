//! Central finite-difference checks of every analytic gradient.
//!
//! Each suite draws seeded random configurations, evaluates the scalar loss at
//! `theta +- h` for every parameter (and every input, where an input
//! sensitivity exists) and compares against the hand-coded derivative.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::conv::{maxpool_forward, Activation, ConvLayer, ConvLdnn, ConvStack, Maps, Stage};
use crate::error::Result;
use crate::model::{multiclass_input_sensitivity, LdnnModel, LossKind, MulticlassModel};
use crate::seed::derived_rng;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Smallest denominator used in the relative error. Round-off in
/// `E(theta + h) - E(theta - h)` limits the absolute accuracy of a central
/// difference to roughly `1e-16 |E| / h`, so derivatives far below this
/// floor are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Tolerance for the LDNN and multiclass suites.
pub const CORE_TOLERANCE: f64 = 1e-6;

/// Tolerance for the convolutional suites.
pub const CONV_TOLERANCE: f64 = 1e-5;

/// Preactivation magnitude used for the saturated configurations.
pub const SATURATED_PREACTIVATION: f64 = 30.0;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn central<F: FnMut(f64) -> f64>(value: f64, mut loss: F) -> f64 {
    (loss(value + FD_STEP) - loss(value - FD_STEP)) / (2.0 * FD_STEP)
}

/// Result of one suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub configs: usize,
    pub derivatives: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    /// Location of the largest error.
    pub worst: String,
}

impl SuiteResult {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        SuiteResult {
            name: name.into(),
            configs: 0,
            derivatives: 0,
            max_relative_error: 0.0,
            tolerance,
            worst: String::new(),
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, what: impl FnOnce() -> String) {
        self.derivatives += 1;
        let err = relative_error(analytic, numeric);
        // NaN counts as a failure.
        if err.is_nan() || err > self.max_relative_error {
            self.max_relative_error = if err.is_nan() { f64::INFINITY } else { err };
            self.worst = format!("config {}: {} (analytic {analytic:e}, numeric {numeric:e})", self.configs, what());
        }
    }

    pub fn passed(&self) -> bool {
        self.derivatives > 0 && self.max_relative_error < self.tolerance
    }
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} {:>3} configs {:>6} derivatives  max rel err {:.2e} (tol {:.0e})  {}",
            self.name,
            self.configs,
            self.derivatives,
            self.max_relative_error,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        if !self.passed() && !self.worst.is_empty() {
            write!(f, "\n    worst: {}", self.worst)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub suites: Vec<SuiteResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            writeln!(f, "{s}")?;
        }
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

fn loss_name(kind: LossKind) -> &'static str {
    match kind {
        LossKind::Quadratic => "quadratic",
        LossKind::CrossEntropy => "cross-entropy",
    }
}

fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, r: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-r..r)).collect()
}

fn random_model(rng: &mut ChaCha8Rng, n: usize, groups: usize, per: usize) -> Result<LdnnModel> {
    let w = uniform_vec(rng, n * groups * per, 1.5);
    let b = uniform_vec(rng, groups * per, 1.0);
    LdnnModel::from_parts(n, groups, per, w, b)
}

/// Moves one discriminant's bias so that its preactivation at `x` is `+-30`.
fn saturate_one(model: &mut LdnnModel, x: &[f64], rng: &mut ChaCha8Rng) {
    let u = rng.random_range(0..model.units());
    let target = if rng.random_bool(0.5) {
        SATURATED_PREACTIVATION
    } else {
        -SATURATED_PREACTIVATION
    };
    let z = model.preactivation(u, x);
    model.biases_mut()[u] += target - z;
}

/// Weight, bias and input gradients of single LDNNs.
///
/// Every fourth configuration has one sigmoid saturated at `|w.x + b| = 30`.
pub fn check_ldnn(seed: u64, configs: usize, kind: LossKind) -> Result<SuiteResult> {
    let mut rng = derived_rng(seed, 1 + kind as u64);
    let mut suite = SuiteResult::new(format!("ldnn/{}", loss_name(kind)), CORE_TOLERANCE);
    for c in 0..configs {
        suite.configs = c;
        let n = rng.random_range(1..=5);
        let groups = rng.random_range(1..=4);
        let per = rng.random_range(1..=4);
        let mut model = random_model(&mut rng, n, groups, per)?;
        let x = uniform_vec(&mut rng, n, 2.0);
        let y = f64::from(u8::from(rng.random_bool(0.5)));
        if c % 4 == 3 {
            saturate_one(&mut model, &x, &mut rng);
        }
        let trace = model.forward(&x)?;
        let grad = model.backward(&trace, &x, y, kind)?;
        let dx = model.input_sensitivity(&trace, y, kind)?;
        let eval = |m: &LdnnModel, x: &[f64]| kind.loss(m.output(x).expect("shapes checked"), y);
        for k in 0..model.weights().len() {
            let numeric = central(model.weights()[k], |v| {
                let mut m = model.clone();
                m.weights_mut()[k] = v;
                eval(&m, &x)
            });
            suite.record(grad.weights[k], numeric, || format!("weight {k}"));
        }
        for u in 0..model.units() {
            let numeric = central(model.biases()[u], |v| {
                let mut m = model.clone();
                m.biases_mut()[u] = v;
                eval(&m, &x)
            });
            suite.record(grad.biases[u], numeric, || format!("bias {u}"));
        }
        for k in 0..n {
            let numeric = central(x[k], |v| {
                let mut xp = x.clone();
                xp[k] = v;
                eval(&model, &xp)
            });
            suite.record(dx[k], numeric, || format!("input {k}"));
        }
    }
    suite.configs = configs;
    Ok(suite)
}

/// Summed-loss input sensitivity of three-class models.
pub fn check_multiclass(seed: u64, configs: usize, kind: LossKind) -> Result<SuiteResult> {
    let mut rng = derived_rng(seed, 11 + kind as u64);
    let mut suite = SuiteResult::new(format!("multiclass/{}", loss_name(kind)), CORE_TOLERANCE);
    const CLASSES: usize = 3;
    for c in 0..configs {
        suite.configs = c;
        let n = rng.random_range(1..=5);
        let x = uniform_vec(&mut rng, n, 2.0);
        let mut models = Vec::with_capacity(CLASSES);
        for _ in 0..CLASSES {
            let groups = rng.random_range(1..=3);
            let per = rng.random_range(1..=3);
            let mut m = random_model(&mut rng, n, groups, per)?;
            if c % 4 == 3 {
                saturate_one(&mut m, &x, &mut rng);
            }
            models.push(m);
        }
        let mc = MulticlassModel::new(models)?;
        let label = rng.random_range(0..CLASSES);
        let targets: Vec<f64> = (0..CLASSES).map(|k| f64::from(u8::from(k == label))).collect();
        let traces = mc.traces(&x)?;
        let dx = multiclass_input_sensitivity(mc.models(), &traces, &targets, kind)?;
        for k in 0..n {
            let numeric = central(x[k], |v| {
                let mut xp = x.clone();
                xp[k] = v;
                let (scores, _) = mc.forward(&xp).expect("shapes checked");
                scores.iter().zip(&targets).map(|(&f, &t)| kind.loss(f, t)).sum()
            });
            suite.record(dx[k], numeric, || format!("input {k}"));
        }
    }
    suite.configs = configs;
    Ok(suite)
}

/// Max-pool input gradients on tie-free random maps.
pub fn check_pool(seed: u64, configs: usize) -> Result<SuiteResult> {
    let mut rng = derived_rng(seed, 21);
    let mut suite = SuiteResult::new("maxpool", CONV_TOLERANCE);
    for c in 0..configs {
        suite.configs = c;
        let window = rng.random_range(1..=3);
        let (count, h, w) = (rng.random_range(1..=3), window * rng.random_range(1..=3), window * rng.random_range(1..=3));
        let input = Maps::from_vec(count, h, w, uniform_vec(&mut rng, count * h * w, 1.0))?;
        let (pooled, idx) = maxpool_forward(&input, window)?;
        let coeff = uniform_vec(&mut rng, pooled.data.len(), 1.0);
        let upstream = Maps {
            data: coeff.clone(),
            ..pooled.clone()
        };
        let dx = crate::conv::maxpool_backward(input.shape(), &idx, &upstream)?;
        for k in 0..input.data.len() {
            let numeric = central(input.data[k], |v| {
                let mut m = input.clone();
                m.data[k] = v;
                let (p, _) = maxpool_forward(&m, window).expect("shapes checked");
                p.data.iter().zip(&coeff).map(|(a, b)| a * b).sum()
            });
            suite.record(dx.data[k], numeric, || format!("input {k}"));
        }
    }
    suite.configs = configs;
    Ok(suite)
}

fn random_heads(rng: &mut ChaCha8Rng, n: usize, classes: usize, groups: usize, per: usize) -> Result<MulticlassModel> {
    let models = (0..classes)
        .map(|_| {
            let w = uniform_vec(rng, n * groups * per, 0.8);
            let b = uniform_vec(rng, groups * per, 0.5);
            LdnnModel::from_parts(n, groups, per, w, b)
        })
        .collect::<Result<Vec<_>>>()?;
    MulticlassModel::new(models)
}

/// Tiny end-to-end network: 8x8 input, one 3x3 convolution with 2 maps, a
/// 2x2 pool and two 1x2 heads.
pub fn tiny_conv_net(rng: &mut ChaCha8Rng) -> Result<ConvLdnn> {
    let mut layer = ConvLayer::random(1, 2, 3, 3, Activation::Logistic, rng)?;
    for b in layer.biases_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    let stack = ConvStack::new((1, 8, 8), vec![Stage::Conv(layer), Stage::Pool { window: 2 }])?;
    let heads = random_heads(rng, stack.output_len()?, 2, 1, 2)?;
    ConvLdnn::new(stack, heads)
}

/// Two convolution stages with a pool between them and three 2x2 heads;
/// exercises input sensitivities flowing through a conv layer and a pool.
fn deeper_conv_net(rng: &mut ChaCha8Rng, second: Activation) -> Result<ConvLdnn> {
    let mut first = ConvLayer::random(2, 2, 3, 3, Activation::Logistic, rng)?;
    let mut last = ConvLayer::with_connectivity(2, 3, 2, 2, vec![vec![0], vec![1], vec![0, 1]], second)?;
    last.randomize(rng);
    for b in first.biases_mut().iter_mut().chain(last.biases_mut()) {
        *b = rng.random_range(-0.5..0.5);
    }
    let stack = ConvStack::new(
        (2, 12, 12),
        vec![
            Stage::Conv(first),
            Stage::Pool { window: 2 },
            Stage::Conv(last),
            Stage::Pool { window: 2 },
        ],
    )?;
    let heads = random_heads(rng, stack.output_len()?, 3, 2, 2)?;
    ConvLdnn::new(stack, heads)
}

/// End-to-end gradients of every filter, conv bias and head parameter.
///
/// Even configurations use [`tiny_conv_net`]; odd ones a deeper stack with
/// sparse connectivity.
pub fn check_conv(seed: u64, configs: usize, kind: LossKind) -> Result<SuiteResult> {
    let mut rng = derived_rng(seed, 31 + kind as u64);
    let mut suite = SuiteResult::new(format!("conv end-to-end/{}", loss_name(kind)), CONV_TOLERANCE);
    for c in 0..configs {
        suite.configs = c;
        let net = if c % 2 == 0 {
            tiny_conv_net(&mut rng)?
        } else {
            let second = if c % 4 == 1 { Activation::Logistic } else { Activation::Identity };
            deeper_conv_net(&mut rng, second)?
        };
        let image = uniform_vec(&mut rng, net.stack.input_len(), 1.0);
        let label = rng.random_range(0..net.heads.classes());
        let grad = net.gradient(&image, label, kind)?;
        let eval = |n: &ConvLdnn| n.loss(&image, label, kind).expect("shapes checked");

        for (s, stage) in net.stack.stages().iter().enumerate() {
            let Stage::Conv(layer) = stage else { continue };
            let g = grad.stack.layers[s].as_ref().expect("conv stage has a gradient");
            let (kh, kw) = layer.kernel();
            let klen = kh * kw;
            for (j, inputs) in layer.connectivity().iter().enumerate() {
                for &i in inputs {
                    let at = (j * layer.maps_in() + i) * klen;
                    for t in 0..klen {
                        let numeric = central(layer.filters()[at + t], |v| {
                            let mut n = net.clone();
                            let Stage::Conv(l) = &mut n.stack.stages_mut()[s] else { unreachable!() };
                            l.filters_mut()[at + t] = v;
                            eval(&n)
                        });
                        suite.record(g.filters[at + t], numeric, || format!("stage {s} filter ({j},{i})[{t}]"));
                    }
                }
                let numeric = central(layer.biases()[j], |v| {
                    let mut n = net.clone();
                    let Stage::Conv(l) = &mut n.stack.stages_mut()[s] else { unreachable!() };
                    l.biases_mut()[j] = v;
                    eval(&n)
                });
                suite.record(g.biases[j], numeric, || format!("stage {s} bias {j}"));
            }
        }
        for (h, model) in net.heads.models().iter().enumerate() {
            for k in 0..model.weights().len() {
                let numeric = central(model.weights()[k], |v| {
                    let mut n = net.clone();
                    n.heads.models_mut()[h].weights_mut()[k] = v;
                    eval(&n)
                });
                suite.record(grad.heads[h].weights[k], numeric, || format!("head {h} weight {k}"));
            }
            for u in 0..model.units() {
                let numeric = central(model.biases()[u], |v| {
                    let mut n = net.clone();
                    n.heads.models_mut()[h].biases_mut()[u] = v;
                    eval(&n)
                });
                suite.record(grad.heads[h].biases[u], numeric, || format!("head {h} bias {u}"));
            }
        }
    }
    suite.configs = configs;
    Ok(suite)
}

/// Number of random configurations per suite.
pub const DEFAULT_CONFIGS: usize = 24;

/// Runs every suite with both losses.
pub fn run_all(seed: u64, configs: usize) -> Result<GradcheckReport> {
    let mut suites = Vec::new();
    for kind in [LossKind::Quadratic, LossKind::CrossEntropy] {
        suites.push(check_ldnn(seed, configs, kind)?);
        suites.push(check_multiclass(seed, configs, kind)?);
    }
    suites.push(check_pool(seed, configs)?);
    for kind in [LossKind::Quadratic, LossKind::CrossEntropy] {
        suites.push(check_conv(seed, configs, kind)?);
    }
    Ok(GradcheckReport { suites })
}
