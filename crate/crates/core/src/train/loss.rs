use crate::autodiff::{Real, Tape, Var};
use crate::data::ItemId;
use crate::label::SoftLabel;

/// Lower bound applied to a target probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Batch means of the loss and its parts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub loss: f64,
    pub ce: f64,
    pub kl: f64,
    /// Sessions that had a soft label.
    pub labeled: usize,
}

/// Per-sample loss from a probability vector:
/// `−ln ŷ[target] + λ Σ_j ỹ_j (ln ỹ_j − ln ŷ_j)`.
pub fn loss_value(probs: &[f64], target: ItemId, soft: Option<&SoftLabel>, lambda: f64) -> LossParts {
    let ln = |p: f64| {
        if p < PROB_FLOOR {
            log::warn!("probability {p:e} clamped to {PROB_FLOOR:e}");
        }
        p.max(PROB_FLOOR).ln()
    };
    let ce = -ln(probs[target as usize]);
    let kl = match soft {
        Some(s) if lambda != 0.0 => s
            .entries
            .iter()
            .filter(|e| e.1 > 0.0)
            .map(|&(j, y)| y * (y.ln() - ln(probs[j as usize])))
            .sum(),
        _ => 0.0,
    };
    LossParts {
        loss: ce + lambda * kl,
        ce,
        kl,
        labeled: usize::from(soft.is_some()),
    }
}

/// Mean over the batch of cross entropy plus `λ` times the KL divergence
/// from each session's soft label. Sessions without a label contribute no
/// KL; with `λ = 0` the soft labels are ignored entirely.
pub fn batch_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    logits: Var,
    targets: &[ItemId],
    labels: &[Option<SoftLabel>],
    lambda: f64,
) -> (Var, LossParts) {
    let b = targets.len();
    assert_eq!(tape.shape(logits)[0], b, "one logit row per target");
    let logp = tape.row_log_softmax(logits);
    let scale = 1.0 / b as f64;
    let mut picks: Vec<(usize, usize, f64)> = targets.iter().enumerate().map(|(r, &t)| (r, t as usize, -scale)).collect();
    let values = tape.value(logp);
    let ce = -targets
        .iter()
        .enumerate()
        .map(|(r, &t)| values.get(r, t as usize).as_f64())
        .sum::<f64>()
        * scale;

    let mut kl = 0.0;
    let mut entropy = 0.0;
    let mut labeled = 0;
    if lambda != 0.0 {
        for (r, label) in labels.iter().enumerate() {
            let Some(label) = label else { continue };
            labeled += 1;
            for &(j, y) in label.entries.iter().filter(|e| e.1 > 0.0) {
                let h = y * y.ln();
                entropy += h;
                kl += h - y * values.get(r, j as usize).as_f64();
                picks.push((r, j as usize, -lambda * y * scale));
            }
        }
        kl *= scale;
    }
    let loss = tape.pick_weighted_sum(logp, &picks);
    let loss = if entropy != 0.0 {
        tape.add_scalar(loss, lambda * entropy * scale)
    } else {
        loss
    };
    (
        loss,
        LossParts {
            loss: ce + lambda * kl,
            ce,
            kl,
            labeled,
        },
    )
}
