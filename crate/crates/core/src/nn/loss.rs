use serde::{Deserialize, Serialize};

/// Predictions are clamped into this window before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

/// Per-sample loss. Vector outputs are averaged over their components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    BinaryCrossEntropy,
    MeanSquaredError,
}

impl LossKind {
    pub fn value(self, pred: &[f64], target: &[f64]) -> Result<f64, String> {
        check_lengths(pred, target)?;
        let n = pred.len() as f64;
        match self {
            LossKind::BinaryCrossEntropy => {
                let mut s = 0.0;
                for (&p, &y) in pred.iter().zip(target) {
                    let p = clamp_prediction(p)?;
                    s -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
                }
                Ok(s / n)
            }
            LossKind::MeanSquaredError => Ok(pred
                .iter()
                .zip(target)
                .map(|(p, y)| (p - y) * (p - y))
                .sum::<f64>()
                / n),
        }
    }

    /// Derivative of [`LossKind::value`] with respect to each prediction.
    pub fn gradient(self, pred: &[f64], target: &[f64], out: &mut [f64]) -> Result<(), String> {
        check_lengths(pred, target)?;
        let n = pred.len() as f64;
        match self {
            LossKind::BinaryCrossEntropy => {
                for ((o, &p), &y) in out.iter_mut().zip(pred).zip(target) {
                    let c = clamp_prediction(p)?;
                    // clamped region is flat
                    *o = if c != p {
                        0.0
                    } else {
                        (-y / p + (1.0 - y) / (1.0 - p)) / n
                    };
                }
            }
            LossKind::MeanSquaredError => {
                for ((o, &p), &y) in out.iter_mut().zip(pred).zip(target) {
                    *o = 2.0 * (p - y) / n;
                }
            }
        }
        Ok(())
    }
}

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<(), String> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(format!(
            "prediction length {} does not match label length {}",
            pred.len(),
            target.len()
        ));
    }
    Ok(())
}

fn clamp_prediction(p: f64) -> Result<f64, String> {
    if !(0.0..=1.0).contains(&p) {
        return Err(format!(
            "binary cross entropy needs predictions in [0, 1], got {p}"
        ));
    }
    Ok(p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP))
}
