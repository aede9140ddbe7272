use super::{backward, evaluate_loss, Batch, DenseNet, Gradients, Loss};
use crate::error::Result;

/// Maximum relative error between `backward` and central differences with
/// step `h`, over every parameter.
pub fn finite_diff_check(net: &DenseNet, batch: &Batch, loss: Loss, h: f64) -> Result<f64> {
    let (analytic, _) = backward(net, batch, loss)?;
    finite_diff_check_against(net, batch, loss, h, &analytic)
}

/// As [`finite_diff_check`], against externally supplied gradients.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// rounding noise on vanishing gradients from dominating.
pub fn finite_diff_check_against(
    net: &DenseNet,
    batch: &Batch,
    loss: Loss,
    h: f64,
    analytic: &Gradients,
) -> Result<f64> {
    assert!(h > 0.0, "step must be positive");
    let analytic = analytic.flat();
    let mut probe = net.clone();
    let n_slices = probe.param_slices_mut().len();
    let mut worst: f64 = 0.0;
    let mut flat_index = 0;
    for s in 0..n_slices {
        let len = probe.param_slices_mut()[s].len();
        for j in 0..len {
            let original = probe.param_slices_mut()[s][j];
            probe.param_slices_mut()[s][j] = original + h;
            let plus = evaluate_loss(&probe, batch, loss)?;
            probe.param_slices_mut()[s][j] = original - h;
            let minus = evaluate_loss(&probe, batch, loss)?;
            probe.param_slices_mut()[s][j] = original;

            let a = analytic[flat_index];
            let numeric = (plus - minus) / (2.0 * h);
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
            flat_index += 1;
        }
    }
    Ok(worst)
}
