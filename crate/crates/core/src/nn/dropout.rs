use rand::Rng;

/// Inverted dropout: in training mode each entry is zeroed with probability
/// `tau` and survivors are scaled by `1 / (1 - tau)`; inference is identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub tau: f64,
    pub training: bool,
}

impl DropoutSpec {
    pub fn new(tau: f64, training: bool) -> crate::Result<Self> {
        if !(0.0..1.0).contains(&tau) {
            return Err(crate::Error::Validation(format!(
                "dropout rate must lie in [0, 1), got {tau}"
            )));
        }
        Ok(DropoutSpec { tau, training })
    }

    /// Whether applying the spec can change anything. No randomness is
    /// consumed when it cannot.
    pub fn is_active(&self) -> bool {
        self.training && self.tau > 0.0
    }
}

/// Per-entry multipliers (`0` or `1 / (1 - tau)`).
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, spec: &DropoutSpec, rng: &mut R) -> Vec<f64> {
    if !spec.is_active() {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - spec.tau);
    (0..n)
        .map(|_| if rng.random::<f64>() < spec.tau { 0.0 } else { keep })
        .collect()
}

pub fn dropout_apply<R: Rng + ?Sized>(v: &[f64], spec: &DropoutSpec, rng: &mut R) -> Vec<f64> {
    if !spec.is_active() {
        return v.to_vec();
    }
    dropout_mask(v.len(), spec, rng)
        .into_iter()
        .zip(v)
        .map(|(m, x)| m * x)
        .collect()
}
