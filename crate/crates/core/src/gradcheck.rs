//! Central finite-difference checks of every analytic gradient.
//!
//! Each check contracts an operator's output with a random upstream tensor
//! `R`, so the scalar objective is `Σ R ∘ f(x)` and its gradient is exactly
//! what `backward(R)` returns.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::kernels::{kernel_backward, kernel_forward, KernelKind, KernelSpec};
use crate::layers::{
    softmax_cross_entropy, AvgPool2d, Dense, Flatten, Kerv2d, Kerv2dConfig, Layer, MaxPool2d, ParamRole, Relu,
};
use crate::model::{build_lenet5, Arrangement, Model, ModelConfig};
use crate::patch::{PaddingMode, PatchGeometry};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so near-zero gradients are
/// compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    rel_error_with_floor(analytic, numeric, REL_ERR_FLOOR)
}

pub fn rel_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Kernels,
    Layers,
    Model,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Kernels => "kernels",
            Scope::Layers => "layers",
            Scope::Model => "model",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kernels" => Ok(Scope::Kernels),
            "layers" => Ok(Scope::Layers),
            "model" => Ok(Scope::Model),
            other => Err(Error::Argument(format!("unknown gradcheck scope `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Random instances per component.
    pub instances: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Model-scope coordinates sampled per parameter tensor.
    pub model_coords: usize,
    /// Test hook: corrupt the analytic gradient of the named component.
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            instances: 100,
            seed: 0,
            step: FD_STEP,
            tolerance: TOLERANCE,
            model_coords: 16,
            corrupt: None,
        }
    }
}

/// One analytic/numeric comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub component: String,
    pub instance: usize,
    pub parameter: String,
    pub index: Vec<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} instance {} {}{:?}: analytic {:.10e} vs numeric {:.10e} (rel err {:.3e})",
            self.component, self.instance, self.parameter, self.index, self.analytic, self.numeric, self.rel_err
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentReport {
    pub component: String,
    pub instances: usize,
    pub checks: usize,
    pub failures: usize,
    /// Model-scope coordinates where a ReLU or max-pool switch fell inside
    /// the stencil and a one-sided difference was used.
    pub one_sided: usize,
    /// Model-scope coordinates with switches on both sides, left unchecked.
    pub straddled: usize,
    pub worst: Option<Comparison>,
    pub first_failure: Option<Comparison>,
}

impl ComponentReport {
    pub fn worst_rel_err(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |c| c.rel_err)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub scope: Scope,
    pub tolerance: f64,
    pub components: Vec<ComponentReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.failures == 0)
    }

    pub fn worst_rel_err(&self) -> f64 {
        self.components
            .iter()
            .map(ComponentReport::worst_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn component(&self, name: &str) -> Option<&ComponentReport> {
        self.components.iter().find(|c| c.component == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.components {
            let status = if c.failures == 0 { "ok" } else { "FAIL" };
            let _ = writeln!(
                out,
                "{status:4} {:40} instances={:4} checks={:7} worst_rel_err={:.3e}",
                c.component,
                c.instances,
                c.checks,
                c.worst_rel_err()
            );
            if c.one_sided + c.straddled > 0 {
                let _ = writeln!(
                    out,
                    "     branch switches near {} coordinate(s): {} one-sided, {} skipped",
                    c.one_sided + c.straddled,
                    c.one_sided,
                    c.straddled
                );
            }
            if let Some(f) = &c.first_failure {
                let _ = writeln!(out, "     first failure: {f}");
            }
        }
        out
    }

    /// `Ok(self)` when everything passed, otherwise a gradient-check error
    /// naming each failing component.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        let failures: Vec<String> = self
            .components
            .iter()
            .filter_map(|c| {
                c.first_failure
                    .as_ref()
                    .map(|f| format!("{} ({} failures); {f}", c.component, c.failures))
            })
            .collect();
        Err(Error::GradCheck(failures.join("\n")))
    }
}

struct Recorder<'a> {
    options: &'a GradCheckOptions,
    report: ComponentReport,
    instance: usize,
    floor: f64,
}

impl<'a> Recorder<'a> {
    fn new(options: &'a GradCheckOptions, component: String) -> Self {
        Self {
            options,
            report: ComponentReport {
                component,
                instances: 0,
                checks: 0,
                failures: 0,
                one_sided: 0,
                straddled: 0,
                worst: None,
                first_failure: None,
            },
            instance: 0,
            floor: REL_ERR_FLOOR,
        }
    }

    fn corrupted(&self) -> bool {
        self.options.corrupt.as_deref() == Some(self.report.component.as_str())
    }

    fn analytic(&self, analytic: f64) -> f64 {
        if self.corrupted() {
            analytic * 1.5 + 0.1
        } else {
            analytic
        }
    }

    fn compare_outcome(&mut self, parameter: &str, shape: &[usize], flat: usize, analytic: f64, outcome: Piecewise) {
        match outcome {
            Piecewise::Smooth(numeric) => self.compare(parameter, shape, flat, analytic, numeric),
            Piecewise::OneSided(numeric) => {
                self.report.one_sided += 1;
                self.compare(parameter, shape, flat, analytic, numeric);
            }
            Piecewise::Straddled => self.report.straddled += 1,
        }
    }

    fn compare(&mut self, parameter: &str, shape: &[usize], flat: usize, analytic: f64, numeric: f64) {
        let analytic = self.analytic(analytic);
        let rel_err = rel_error_with_floor(analytic, numeric, self.floor);
        let passed = rel_err <= self.options.tolerance;
        self.report.checks += 1;
        let worse = self
            .report
            .worst
            .as_ref()
            .is_none_or(|w| rel_err > w.rel_err || rel_err.is_nan());
        if !passed || worse {
            let cmp = Comparison {
                component: self.report.component.clone(),
                instance: self.instance,
                parameter: parameter.to_string(),
                index: unravel(flat, shape),
                analytic,
                numeric,
                rel_err,
            };
            if !passed {
                self.report.failures += 1;
                if self.report.first_failure.is_none() {
                    self.report.first_failure = Some(cmp.clone());
                }
            }
            if worse {
                self.report.worst = Some(cmp);
            }
        }
    }

    fn finish_instance(&mut self) {
        self.instance += 1;
        self.report.instances += 1;
    }
}

fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for (slot, &dim) in idx.iter_mut().zip(shape).rev() {
        *slot = flat % dim.max(1);
        flat /= dim.max(1);
    }
    idx
}

/// Five-point central difference
/// `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`; `eval` writes the
/// coordinate and is left at `x0`.
fn central(step: f64, x0: f64, mut eval: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let near = eval(x0 + step)? - eval(x0 - step)?;
    let far = eval(x0 + 2.0 * step)? - eval(x0 - 2.0 * step)?;
    eval(x0)?;
    Ok((8.0 * near - far) / (12.0 * step))
}

/// Outcome of differencing a piecewise-smooth objective.
enum Piecewise {
    /// Five-point central difference; no branch switched inside the stencil.
    Smooth(f64),
    /// A branch switched on one side; second-order one-sided difference from
    /// the other.
    OneSided(f64),
    /// Switches on both sides within `2h`.
    Straddled,
}

/// `eval` returns the objective and the branch pattern at a coordinate value
/// and is left at `x0`.
fn piecewise(step: f64, x0: f64, mut eval: impl FnMut(f64) -> Result<(f64, Vec<usize>)>) -> Result<Piecewise> {
    let (f0, p0) = eval(x0)?;
    let mut side = |sign: f64| -> Result<(f64, f64, bool)> {
        let (f1, p1) = eval(x0 + sign * step)?;
        let (f2, p2) = eval(x0 + sign * 2.0 * step)?;
        Ok((f1, f2, p1 == p0 && p2 == p0))
    };
    let (r1, r2, right_clean) = side(1.0)?;
    let (l1, l2, left_clean) = side(-1.0)?;
    eval(x0)?;
    Ok(match (left_clean, right_clean) {
        (true, true) => Piecewise::Smooth((8.0 * (r1 - l1) - (r2 - l2)) / (12.0 * step)),
        (_, true) => Piecewise::OneSided((-3.0 * f0 + 4.0 * r1 - r2) / (2.0 * step)),
        (true, _) => Piecewise::OneSided((3.0 * f0 - 4.0 * l1 + l2) / (2.0 * step)),
        _ => Piecewise::Straddled,
    })
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let seed = rng.random();
    Tensor::randn(shape, seed).expect("valid shape").map(|v| v * scale)
}

/// Values on two interleaved lattices (`0.1·k + u` and `0.1·k + 0.05 + u`,
/// `u < 0.02`) never come within 0.03 of each other or of zero padding,
/// keeping `|x − w|` away from its kink.
fn lattice(rng: &mut ChaCha8Rng, shape: &[usize], offset: bool) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let k = rng.random_range(-10i32..=10) as f64;
        let shift = if offset { 0.05 } else { 0.0 };
        *v = 0.1 * k + shift + 0.01 + 0.01 * rng.random::<f64>();
    }
    t
}

fn instance_rng(seed: u64, component: usize, instance: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ ((component as u64) << 40) ^ (instance as u64).wrapping_mul(0x9E37_79B9))
}

/// Kernels covered by the kernel and layer scopes.
pub fn kernel_grid() -> Vec<KernelSpec> {
    vec![
        KernelSpec::Linear,
        KernelSpec::polynomial(2, 1.0).learnable(),
        KernelSpec::polynomial(3, 0.5).learnable(),
        KernelSpec::gaussian(0.5).learnable(),
        KernelSpec::L1,
        KernelSpec::L2,
        KernelSpec::Sigmoid,
    ]
}

fn contract(out: &Tensor, upstream: &Tensor) -> f64 {
    out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
}

fn check_kernel(options: &GradCheckOptions, ci: usize, spec: KernelSpec) -> Result<ComponentReport> {
    let mut rec = Recorder::new(options, format!("kernel/{spec}"));
    let h = options.step;
    for inst in 0..options.instances {
        let mut rng = instance_rng(options.seed, ci, inst);
        let p = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let n = rng.random_range(1..=6);
        let scale = 1.0 / (n as f64).sqrt();
        let (patches, filters) = if spec.kind() == KernelKind::L1 {
            (lattice(&mut rng, &[p, n], false), lattice(&mut rng, &[k, n], true))
        } else {
            (randn(&mut rng, &[p, n], scale), randn(&mut rng, &[k, n], scale))
        };
        let upstream = randn(&mut rng, &[p, k], 1.0);
        let objective = |x: &Tensor, w: &Tensor, s: &KernelSpec| -> Result<f64> {
            Ok(contract(&kernel_forward(x.clone(), w.clone(), s)?.0, &upstream))
        };

        let (_, cache) = kernel_forward(patches.clone(), filters.clone(), &spec)?;
        let grads = kernel_backward(&cache, &upstream)?;

        for (name, base, analytic) in [
            ("patches", &patches, &grads.patches),
            ("filters", &filters, &grads.filters),
        ] {
            let mut probe = base.clone();
            for i in 0..base.len() {
                let x0 = base.data()[i];
                let numeric = central(h, x0, |v| {
                    probe.data_mut()[i] = v;
                    if name == "patches" {
                        objective(&probe, &filters, &spec)
                    } else {
                        objective(&patches, &probe, &spec)
                    }
                })?;
                rec.compare(name, base.shape(), i, analytic.data()[i], numeric);
            }
        }
        if let (Some(x0), Some(analytic)) = (spec.hyper(), grads.hyper) {
            let numeric = central(h, x0, |v| objective(&patches, &filters, &spec.with_hyper(v)))?;
            rec.compare("hyper", &[1], 0, analytic, numeric);
        }
        rec.finish_instance();
    }
    Ok(rec.report)
}

fn role_name(role: ParamRole) -> &'static str {
    match role {
        ParamRole::Weight => "weight",
        ParamRole::Bias => "bias",
        ParamRole::KernelHyper => "hyper",
    }
}

/// Checks input and parameter gradients of one layer at one input.
fn check_layer_instance(
    rec: &mut Recorder<'_>,
    layer: &mut dyn Layer,
    input: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let h = rec.options.step;
    let out = layer.forward(input, true)?;
    let upstream = randn(rng, out.shape(), 1.0);
    layer.zero_grad();
    let input_grad = layer.backward(&upstream)?;
    let param_grads: Vec<Tensor> = layer.grads().into_iter().cloned().collect();
    let roles: Vec<ParamRole> = layer.params_mut().iter().map(|p| p.role).collect();

    let mut probe = input.clone();
    for i in 0..input.len() {
        let numeric = central(h, input.data()[i], |v| {
            probe.data_mut()[i] = v;
            Ok(contract(&layer.forward(&probe, true)?, &upstream))
        })?;
        rec.compare("input", input.shape(), i, input_grad.data()[i], numeric);
    }

    for (pi, grad) in param_grads.iter().enumerate() {
        for i in 0..grad.len() {
            let x0 = layer.params()[pi].data()[i];
            let numeric = central(h, x0, |v| {
                layer.params_mut()[pi].value.data_mut()[i] = v;
                Ok(contract(&layer.forward(input, true)?, &upstream))
            })?;
            rec.compare(role_name(roles[pi]), grad.shape(), i, grad.data()[i], numeric);
        }
    }
    Ok(())
}

fn random_kerv2d(rng: &mut ChaCha8Rng, spec: KernelSpec) -> Result<(Kerv2d, Tensor)> {
    let groups = rng.random_range(1..=2);
    let cin = groups * rng.random_range(1..=2);
    let cout = groups * rng.random_range(1..=2);
    let (kh, kw) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let stride = (rng.random_range(1..=2), rng.random_range(1..=2));
    let dilation = (rng.random_range(1..=2), rng.random_range(1..=2));
    let mode = if rng.random_bool(0.5) {
        PaddingMode::Zeros
    } else {
        PaddingMode::Circular
    };
    let pad = (rng.random_range(0..=2), rng.random_range(0..=2));
    let h = (kh - 1) * dilation.0 + 1 + rng.random_range(0..=3);
    let w = (kw - 1) * dilation.1 + 1 + rng.random_range(0..=3);
    let n = rng.random_range(1..=2);
    let geom = PatchGeometry::new(kh, kw)
        .with_stride(stride.0, stride.1)
        .with_dilation(dilation.0, dilation.1)
        .with_pad(pad.0, pad.1)
        .with_padding_mode(mode);
    let config = Kerv2dConfig::new(cin, cout, geom, spec)
        .with_groups(groups)
        .with_bias(rng.random_bool(0.8));
    let mut layer = Kerv2d::new(config, rng.random())?;
    let input = if spec.kind() == KernelKind::L1 {
        let shape = layer.weight().shape().to_vec();
        *layer.weight_mut() = lattice(rng, &shape, true);
        lattice(rng, &[n, cin, h, w], false)
    } else {
        let fan = (cin / groups * kh * kw) as f64;
        let shape = layer.weight().shape().to_vec();
        *layer.weight_mut() = randn(rng, &shape, 1.0 / fan.sqrt());
        randn(rng, &[n, cin, h, w], 1.0 / fan.sqrt())
    };
    Ok((layer, input))
}

/// Inputs at least 0.01 away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    randn(rng, shape, 1.0).map(|v| if v < 0.0 { v - 0.01 } else { v + 0.01 })
}

/// A shuffled, evenly spaced set of values: no two within 0.01, so a window
/// maximum never changes under a step of `h`.
fn distinct_values(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..len).map(|i| (i as f64 - len as f64 / 2.0) * 0.01).collect();
    values.shuffle(rng);
    Tensor::new(shape, values).expect("matching length")
}

fn check_layers(options: &GradCheckOptions) -> Result<Vec<ComponentReport>> {
    let mut reports = Vec::new();
    let mut ci = 100;
    for spec in kernel_grid() {
        let mut rec = Recorder::new(options, format!("kerv2d/{spec}"));
        for inst in 0..options.instances {
            let mut rng = instance_rng(options.seed, ci, inst);
            let (mut layer, input) = random_kerv2d(&mut rng, spec)?;
            check_layer_instance(&mut rec, &mut layer, &input, &mut rng)?;
            rec.finish_instance();
        }
        reports.push(rec.report);
        ci += 1;
    }

    type Builder = fn(&mut ChaCha8Rng) -> (Box<dyn Layer>, Tensor);
    let others: [(&str, Builder); 5] = [
        ("dense", |rng| {
            let (i, o, n) = (
                rng.random_range(1..=6),
                rng.random_range(1..=5),
                rng.random_range(1..=3),
            );
            (Box::new(Dense::new(i, o, rng.random())), randn(rng, &[n, i], 1.0))
        }),
        ("relu", |rng| {
            let shape = [rng.random_range(1..=3), rng.random_range(1..=8)];
            (Box::new(Relu::new()), away_from_zero(rng, &shape))
        }),
        ("maxpool2d", |rng| {
            let (win, stride) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let shape = [
                rng.random_range(1..=2),
                rng.random_range(1..=2),
                win + rng.random_range(0..=4),
                win + rng.random_range(0..=4),
            ];
            (Box::new(MaxPool2d::new(win, stride)), distinct_values(rng, &shape))
        }),
        ("avgpool2d", |rng| {
            let (win, stride) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let shape = [
                rng.random_range(1..=2),
                rng.random_range(1..=2),
                win + rng.random_range(0..=4),
                win + rng.random_range(0..=4),
            ];
            (Box::new(AvgPool2d::new(win, stride)), randn(rng, &shape, 1.0))
        }),
        ("flatten", |rng| {
            let shape = [
                rng.random_range(1..=2),
                rng.random_range(1..=3),
                rng.random_range(1..=3),
                rng.random_range(1..=3),
            ];
            (Box::new(Flatten::new()), randn(rng, &shape, 1.0))
        }),
    ];
    for (name, build) in others {
        let mut rec = Recorder::new(options, name.to_string());
        for inst in 0..options.instances {
            let mut rng = instance_rng(options.seed, ci, inst);
            let (mut layer, input) = build(&mut rng);
            check_layer_instance(&mut rec, layer.as_mut(), &input, &mut rng)?;
            rec.finish_instance();
        }
        reports.push(rec.report);
        ci += 1;
    }

    let mut rec = Recorder::new(options, "softmax-cross-entropy".to_string());
    for inst in 0..options.instances {
        let mut rng = instance_rng(options.seed, ci, inst);
        let (n, classes) = (rng.random_range(1..=4), rng.random_range(2..=6));
        let logits = randn(&mut rng, &[n, classes], 2.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let (_, analytic) = softmax_cross_entropy(&logits, &labels)?;
        let mut probe = logits.clone();
        for i in 0..logits.len() {
            let numeric = central(options.step, logits.data()[i], |v| {
                probe.data_mut()[i] = v;
                Ok(softmax_cross_entropy(&probe, &labels)?.0)
            })?;
            rec.compare("logits", logits.shape(), i, analytic.data()[i], numeric);
        }
        rec.finish_instance();
    }
    reports.push(rec.report);
    Ok(reports)
}

/// Model configurations covered by the model scope.
pub fn model_grid() -> Vec<(String, ModelConfig)> {
    let poly = KernelSpec::polynomial(3, 1.0).learnable();
    vec![
        ("lenet5/conv-conv".into(), ModelConfig::default()),
        ("lenet5/poly-poly".into(), ModelConfig::kerv_kerv(poly)),
        (
            "lenet5/gaussian-poly".into(),
            ModelConfig {
                arrangement: Arrangement::KERV_KERV,
                kernel1: KernelSpec::gaussian(1.0).learnable(),
                kernel2: poly,
                ..ModelConfig::default()
            },
        ),
        ("lenet5/l2-l2".into(), ModelConfig::kerv_kerv(KernelSpec::L2)),
        (
            "lenet5/poly-poly-norelu".into(),
            ModelConfig::kerv_kerv(poly).without_relu(),
        ),
    ]
}

/// Sparse images in raw `[0, 1]` (mostly faint background), normalized with
/// MNIST-like statistics. The background is not exactly constant, so max
/// pooling never sees exact ties.
fn mnist_like(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let norm = Normalization {
        mean: 0.1307,
        std: 0.3081,
    };
    let mut x = Tensor::zeros(&[n, 1, 28, 28]);
    for v in x.data_mut() {
        let raw = if rng.random_bool(0.2) {
            rng.random::<f64>()
        } else {
            0.02 * rng.random::<f64>()
        };
        *v = norm.apply(raw);
    }
    x
}

fn model_probe(model: &mut Model, x: &Tensor, y: &[usize]) -> Result<(f64, Vec<usize>)> {
    let loss = softmax_cross_entropy(&model.forward(x, true)?, y)?.0;
    Ok((loss, model.branch_pattern()))
}

fn check_model(options: &GradCheckOptions, ci: usize, name: String, config: ModelConfig) -> Result<ComponentReport> {
    let mut rec = Recorder::new(options, name);
    let mut rng = instance_rng(options.seed, ci, 0);
    let mut model = build_lenet5(&config.with_seed(rng.random()))?;
    let x = mnist_like(&mut rng, 4);
    let y: Vec<usize> = (0..4).map(|_| rng.random_range(0..10)).collect();

    model.zero_grad();
    let logits = model.forward(&x, true)?;
    let (loss, grad) = softmax_cross_entropy(&logits, &y)?;
    // rounding in the loss grows with its size, and so does the noise in
    // the differences
    rec.floor = REL_ERR_FLOOR * loss.abs().max(1.0);
    let input_grad = model.backward(&grad)?;
    let grads: Vec<Tensor> = model.grads().into_iter().cloned().collect();
    let roles: Vec<ParamRole> = model.params_mut().iter().map(|p| p.role).collect();
    let h = options.step;

    let pick = |rng: &mut ChaCha8Rng, len: usize| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..len).collect();
        idx.shuffle(rng);
        idx.truncate(options.model_coords);
        idx
    };

    let mut probe = x.clone();
    for i in pick(&mut rng, x.len()) {
        let outcome = piecewise(h, x.data()[i], |v| {
            probe.data_mut()[i] = v;
            model_probe(&mut model, &probe, &y)
        })?;
        rec.compare_outcome("input", x.shape(), i, input_grad.data()[i], outcome);
    }
    for (pi, g) in grads.iter().enumerate() {
        let param = format!("param{pi}.{}", role_name(roles[pi]));
        for i in pick(&mut rng, g.len()) {
            let x0 = model.params()[pi].data()[i];
            let outcome = piecewise(h, x0, |v| {
                model.params_mut()[pi].value.data_mut()[i] = v;
                model_probe(&mut model, &x, &y)
            })?;
            rec.compare_outcome(&param, g.shape(), i, g.data()[i], outcome);
        }
    }
    rec.finish_instance();
    Ok(rec.report)
}

/// Runs every check in `scope`. Failures are reported, not raised; see
/// [`GradCheckReport::into_result`].
pub fn run_gradcheck(scope: Scope, options: &GradCheckOptions) -> Result<GradCheckReport> {
    if options.instances == 0 {
        return Err(Error::Argument("gradcheck needs at least one instance".into()));
    }
    let components = match scope {
        Scope::Kernels => kernel_grid()
            .into_iter()
            .enumerate()
            .map(|(i, spec)| check_kernel(options, i, spec))
            .collect::<Result<_>>()?,
        Scope::Layers => check_layers(options)?,
        Scope::Model => model_grid()
            .into_iter()
            .enumerate()
            .map(|(i, (name, cfg))| check_model(options, 200 + i, name, cfg))
            .collect::<Result<_>>()?,
    };
    Ok(GradCheckReport {
        scope,
        tolerance: options.tolerance,
        components,
    })
}
