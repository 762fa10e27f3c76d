//! White-box FGSM: `x' = clamp(x + ε·sign(∇ₓ L))`, with ε given in raw
//! `[0, 1]` pixel units and clamping back into the valid image range.

use std::fmt::Write as _;

use crate::data::{BatchPlan, Dataset, Normalization};
use crate::error::{Error, Result};
use crate::kernels::sign;
use crate::layers::softmax_cross_entropy;
use crate::model::{argmax_rows, Model};
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackConfig {
    /// Perturbation size in raw pixel units.
    pub epsilon: f64,
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.15,
            sample_count: 10_000,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Argument(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.sample_count == 0 {
            return Err(Error::Argument("attack sample count must be >= 1".into()));
        }
        Ok(())
    }
}

/// `sign(∇ₓ L(model(x), y))` from one forward/backward pass. Leaves the
/// model's parameter gradients zeroed.
pub fn fgsm_direction(model: &mut Model, images: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let logits = model.forward(images, false)?;
    let (_, grad) = softmax_cross_entropy(&logits, labels)?;
    let input_grad = model.backward(&grad)?;
    model.zero_grad();
    Ok(input_grad.map(sign))
}

/// Perturbs normalized `images` by `epsilon` raw-pixel units along the FGSM
/// direction and clamps to the normalized image of `[0, 1]`.
pub fn fgsm_perturb(
    model: &mut Model,
    images: &Tensor,
    labels: &[usize],
    epsilon: f64,
    normalization: &Normalization,
) -> Result<Tensor> {
    if !(epsilon >= 0.0) {
        return Err(Error::Argument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if epsilon == 0.0 {
        return Ok(images.clone());
    }
    let step = epsilon / normalization.std;
    let (lo, hi) = normalization.valid_range();
    let dir = fgsm_direction(model, images, labels)?;
    let data = images
        .data()
        .iter()
        .zip(dir.data())
        .map(|(&x, &d)| (x + step * d).clamp(lo, hi))
        .collect();
    Tensor::new(images.shape(), data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackRow {
    pub model: String,
    pub kernel: String,
    pub epsilon: f64,
    pub clean_acc: f64,
    pub attacked_acc: f64,
}

/// Attack results, one row per model.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackTable {
    pub rows: Vec<AttackRow>,
}

impl AttackTable {
    pub const CSV_HEADER: &'static str = "model,kernel,epsilon,clean_acc,attacked_acc";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.model, r.kernel, r.epsilon, r.clean_acc, r.attacked_acc
            );
        }
        out
    }

    pub fn row(&self, model: &str) -> Option<&AttackRow> {
        self.rows.iter().find(|r| r.model == model)
    }
}

/// Seeded choice of `count` test indices (all of them, in seeded order, when
/// `count` covers the set).
pub fn select_samples(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut order = BatchPlan::new(n, seed, 0).order(n);
    order.truncate(count.min(n));
    order
}

/// Clean and attacked accuracy of one model on the chosen samples.
pub fn attack_accuracy(model: &mut Model, test: &Dataset, indices: &[usize], epsilon: f64) -> Result<(f64, f64)> {
    let (mut clean, mut attacked) = (0usize, 0usize);
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, y) = test.batch(chunk);
        let pred = argmax_rows(&model.forward(&x, false)?);
        clean += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
        let adv = fgsm_perturb(model, &x, &y, epsilon, &test.normalization)?;
        let pred = argmax_rows(&model.forward(&adv, false)?);
        attacked += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    let n = indices.len() as f64;
    Ok((clean as f64 / n, attacked as f64 / n))
}

/// Attacks each named model against itself on the same seeded sample.
pub fn evaluate_attack(models: &mut [(String, Model)], test: &Dataset, config: &AttackConfig) -> Result<AttackTable> {
    config.validate()?;
    if config.sample_count > test.len() {
        return Err(Error::Argument(format!(
            "attack asks for {} samples, test set has {}",
            config.sample_count,
            test.len()
        )));
    }
    let indices = select_samples(test.len(), config.sample_count, config.seed);
    let mut rows = Vec::with_capacity(models.len());
    for (name, model) in models.iter_mut() {
        let (clean_acc, attacked_acc) = attack_accuracy(model, test, &indices, config.epsilon)?;
        let kernel = model.config().effective_kernel(0).kind().name().to_string();
        rows.push(AttackRow {
            model: name.clone(),
            kernel,
            epsilon: config.epsilon,
            clean_acc,
            attacked_acc,
        });
    }
    Ok(AttackTable { rows })
}
