use serde::Serialize;

use super::model::{backward, forward, softmax_cross_entropy, Mode, ModelParams};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Below this magnitude (both analytic and numeric) the absolute error is used.
pub const ZERO_GRADIENT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// Largest `|a − n| / max(|a|, |n|)` over entries above the floor.
    pub max_relative_error: f64,
    /// Largest `|a − n|` over entries below the floor.
    pub max_absolute_error: f64,
    /// Tensor holding the worst relative error.
    pub worst_tensor: String,
    pub checked: usize,
    pub below_floor: usize,
}

/// Training-mode loss and analytic gradients.
pub fn loss_and_gradients(params: &ModelParams<f64>, x: &[f64], targets: &[f64], batch: usize) -> Result<(f64, ModelParams<f64>)> {
    let pass = forward(params, x, batch, Mode::Train)?;
    let (loss, dlogits) = softmax_cross_entropy(&pass.logits, targets, params.arch.n_classes)?;
    Ok((loss, backward(params, &pass, &dlogits)?))
}

fn loss_only(params: &ModelParams<f64>, x: &[f64], targets: &[f64], batch: usize) -> Result<f64> {
    let pass = forward(params, x, batch, Mode::Train)?;
    Ok(softmax_cross_entropy(&pass.logits, targets, params.arch.n_classes)?.0)
}

/// Central finite differences of the training-mode loss for every trainable scalar.
pub fn numeric_gradients(params: &ModelParams<f64>, x: &[f64], targets: &[f64], batch: usize, step: f64) -> Result<ModelParams<f64>> {
    let mask = params.trainable_mask();
    let mut out = ModelParams::<f64>::zeros(&params.arch)?;
    let mut work = params.clone();
    let sizes: Vec<usize> = params.named_tensors().iter().map(|(_, t)| t.len()).collect();
    for (ti, &n) in sizes.iter().enumerate() {
        if !mask[ti] {
            continue;
        }
        for j in 0..n {
            let orig = work.tensors_mut()[ti].data()[j];
            work.tensors_mut()[ti].data_mut()[j] = orig + step;
            let up = loss_only(&work, x, targets, batch)?;
            work.tensors_mut()[ti].data_mut()[j] = orig - step;
            let down = loss_only(&work, x, targets, batch)?;
            work.tensors_mut()[ti].data_mut()[j] = orig;
            out.tensors_mut()[ti].data_mut()[j] = (up - down) / (2.0 * step);
        }
    }
    Ok(out)
}

/// Entry-wise comparison over trainable tensors.
pub fn compare_gradients(analytic: &ModelParams<f64>, numeric: &ModelParams<f64>) -> GradCheckReport {
    let mask = analytic.trainable_mask();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        worst_tensor: String::new(),
        checked: 0,
        below_floor: 0,
    };
    for (i, ((name, a), (_, n))) in analytic.named_tensors().into_iter().zip(numeric.named_tensors()).enumerate() {
        if !mask[i] {
            continue;
        }
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            report.checked += 1;
            let scale = av.abs().max(nv.abs());
            let diff = (av - nv).abs();
            if scale < ZERO_GRADIENT_FLOOR {
                report.below_floor += 1;
                report.max_absolute_error = report.max_absolute_error.max(diff);
            } else if diff / scale > report.max_relative_error {
                report.max_relative_error = diff / scale;
                report.worst_tensor = name.clone();
            }
        }
    }
    report
}

/// Analytic vs finite-difference gradients of the loss on one batch.
pub fn grad_check(params: &ModelParams<f64>, x: &[f64], targets: &[f64], batch: usize) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_gradients(params, x, targets, batch)?;
    let numeric = numeric_gradients(params, x, targets, batch, FD_STEP)?;
    Ok(compare_gradients(&analytic, &numeric))
}
