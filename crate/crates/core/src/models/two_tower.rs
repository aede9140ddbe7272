use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use super::{BiasTower, ClickRows, CurvePoint, NaiveModel, Trained, TrainConfig, TwoTowerModel, Variant};
use crate::data::Impression;
use crate::error::{Error, Result};
use crate::nn::{
    dropout_mask, loss_and_gradient, AdamConfig, AdamState, DenseNet, DropoutSpec, Loss,
};
use crate::seed::rng_for;

/// How the bias tower takes part in a fit.
pub(crate) enum BiasMode<'a> {
    /// Relevance only; no position term.
    Absent,
    /// Learned jointly with the relevance tower.
    Trained(&'a mut BiasTower),
    /// Added to the logit but never updated.
    Frozen(&'a BiasTower),
}

impl BiasMode<'_> {
    fn tower(&self) -> Option<&BiasTower> {
        match self {
            BiasMode::Absent => None,
            BiasMode::Trained(b) => Some(b),
            BiasMode::Frozen(b) => Some(b),
        }
    }
}

fn mean_bce(relevance: &DenseNet, bias: Option<&BiasTower>, rows: &ClickRows) -> Result<f64> {
    let mut total = 0.0;
    let chunk = 4096;
    for start in (0..rows.len()).step_by(chunk) {
        let end = (start + chunk).min(rows.len());
        let x = rows.features.slice(ndarray::s![start..end, ..]);
        let rel = relevance.forward_batch(x)?;
        let z: Vec<f64> = (start..end)
            .map(|r| rel[[r - start, 0]] + bias.map_or(0.0, |b| b.logit(rows.positions[r])))
            .collect();
        let (loss, _) = loss_and_gradient(Loss::BinaryCrossEntropy, &z, &rows.clicks[start..end], &[])?;
        total += loss * (end - start) as f64;
    }
    Ok(total / rows.len() as f64)
}

/// Mini-batch Adam on binary cross-entropy of `relevance(x) + bias(k)`.
///
/// Rows are reshuffled every epoch from the `shuffle` stream of `cfg.seed`;
/// dropout masks come from a separate `dropout` stream and are only drawn
/// when the spec is active, so a zero rate leaves every other draw intact.
pub(crate) fn fit_click_model(
    rows: &ClickRows,
    validation: Option<&ClickRows>,
    relevance: &mut DenseNet,
    mut bias: BiasMode<'_>,
    dropout: DropoutSpec,
    cfg: &TrainConfig,
) -> Result<Vec<CurvePoint>> {
    let n_bias = match &bias {
        BiasMode::Trained(b) => b.weights.len() + 1,
        _ => 0,
    };
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(relevance.param_count() + n_bias, adam);
    let mut shuffle_rng = rng_for(cfg.seed, "shuffle");
    let mut dropout_rng = rng_for(cfg.seed, "dropout");
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut curve = Vec::new();
    let mut batch_index = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let x = rows.features.select(Axis(0), idx);
            let trace = relevance.forward_trace(x.view())?;
            let rel = trace.output().column(0);
            let (raw_bias, mask) = match bias.tower() {
                Some(b) => (
                    idx.iter().map(|&r| b.logit(rows.positions[r])).collect(),
                    dropout_mask(idx.len(), &dropout, &mut dropout_rng),
                ),
                None => (vec![0.0; idx.len()], vec![1.0; idx.len()]),
            };
            let z: Vec<f64> = (0..idx.len()).map(|i| rel[i] + mask[i] * raw_bias[i]).collect();
            let y: Vec<f64> = idx.iter().map(|&r| rows.clicks[r]).collect();
            let (loss, grad) = loss_and_gradient(Loss::BinaryCrossEntropy, &z, &y, &[])
                .map_err(|e| e.at_batch(batch_index))?;
            epoch_loss += loss * idx.len() as f64;

            let d_out = Array2::from_shape_vec((idx.len(), 1), grad.clone()).expect("column");
            let grads = relevance.backward_trace(&trace, d_out);
            let step = if let BiasMode::Trained(b) = &mut bias {
                let mut dw = vec![0.0; b.weights.len()];
                let mut db = 0.0;
                for (i, &r) in idx.iter().enumerate() {
                    let g = grad[i] * mask[i];
                    dw[b.slot(rows.positions[r])] += g;
                    db += g;
                }
                let mut params = relevance.param_slices_mut();
                params.push(b.weights.as_mut_slice());
                params.push(std::slice::from_mut(&mut b.offset));
                let mut g = grads.slices();
                g.push(&dw);
                g.push(std::slice::from_ref(&db));
                state.step(params, g)
            } else {
                state.step(relevance.param_slices_mut(), grads.slices())
            };
            step.map_err(|e| e.at_batch(batch_index))?;
            if !relevance.params_finite() {
                return Err(Error::training("parameters became non-finite").at_batch(batch_index));
            }
            batch_index += 1;
        }
        curve.push(CurvePoint {
            epoch,
            split: "train".into(),
            loss: epoch_loss / rows.len() as f64,
        });
        if let Some(v) = validation.filter(|v| !v.is_empty()) {
            curve.push(CurvePoint {
                epoch,
                split: "validation".into(),
                loss: mean_bce(relevance, bias.tower(), v)?,
            });
        }
    }
    Ok(curve)
}

pub(crate) fn prepare(
    train: &[Impression],
    validation: &[Impression],
    cfg: &TrainConfig,
) -> Result<(ClickRows, Option<ClickRows>)> {
    cfg.validate()?;
    let rows = ClickRows::from_impressions(train)?;
    if rows.is_empty() {
        return Err(Error::validation("no click rows to train on"));
    }
    let val = ClickRows::from_impressions(validation)?;
    if !val.is_empty() && val.dim() != rows.dim() {
        return Err(Error::validation("validation features differ in width"));
    }
    Ok((rows, Some(val).filter(|v| !v.is_empty())))
}

pub(crate) fn init_tower(cfg: &TrainConfig, dim: usize) -> Result<DenseNet> {
    DenseNet::glorot(&cfg.tower_dims(dim), &mut rng_for(cfg.seed, "init"))
}

/// Fits the additive two-tower click model. For the dropout variant the
/// bias-tower output is dropped with rate `tau` during training only.
pub fn train_two_tower(
    train: &[Impression],
    validation: &[Impression],
    variant: Variant,
    cfg: &TrainConfig,
) -> Result<Trained<TwoTowerModel>> {
    let tau = match variant {
        Variant::Standard => 0.0,
        Variant::Dropout { tau } => tau,
        Variant::Backdoor => {
            return Err(Error::validation(
                "the backdoor variant needs a policy estimator; use train_backdoor_variant",
            ))
        }
    };
    let dropout = DropoutSpec::new(tau, true)?;
    let (rows, val) = prepare(train, validation, cfg)?;
    let mut relevance = init_tower(cfg, rows.dim())?;
    let mut bias = BiasTower::zeros(cfg.max_position);
    let curve = fit_click_model(
        &rows,
        val.as_ref(),
        &mut relevance,
        BiasMode::Trained(&mut bias),
        dropout,
        cfg,
    )?;
    Ok(Trained {
        model: TwoTowerModel {
            relevance,
            bias,
            variant,
        },
        curve,
    })
}

/// Fits a relevance tower directly on clicks, ignoring positions.
pub fn train_naive(
    train: &[Impression],
    validation: &[Impression],
    cfg: &TrainConfig,
) -> Result<Trained<NaiveModel>> {
    let (rows, val) = prepare(train, validation, cfg)?;
    let mut relevance = init_tower(cfg, rows.dim())?;
    let curve = fit_click_model(
        &rows,
        val.as_ref(),
        &mut relevance,
        BiasMode::Absent,
        DropoutSpec::new(0.0, false)?,
        cfg,
    )?;
    Ok(Trained {
        model: NaiveModel { relevance },
        curve,
    })
}
