use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactFlag {
    pub sample_id: String,
    pub rec_loss: f64,
    pub threshold: f64,
    pub flagged: bool,
}

/// Flag samples whose reconstruction loss exceeds `mean + multiplier·std`.
///
/// The statistics for each sample are computed over the *other* samples
/// (population standard deviation), so a single large outlier cannot mask
/// itself by inflating the spread. With fewer than three samples the
/// threshold is undefined: a warning is logged and nothing is flagged.
pub fn flag_artifacts(losses: &[(String, f64)], multiplier: f64) -> Result<Vec<ArtifactFlag>> {
    ensure!(!losses.is_empty(), "no reconstruction losses to screen");
    ensure!(
        multiplier.is_finite() && multiplier >= 0.0,
        "artifact multiplier must be finite and nonnegative, got {multiplier}"
    );
    if let Some((id, v)) = losses.iter().find(|(_, v)| !v.is_finite()) {
        return Err(crate::Error::Validation(format!("reconstruction loss of {id} is not finite ({v})")));
    }
    let n = losses.len();
    if n < 3 {
        log::warn!("artifact threshold undefined for {n} sample(s); nothing flagged");
        return Ok(losses
            .iter()
            .map(|(id, v)| ArtifactFlag {
                sample_id: id.clone(),
                rec_loss: *v,
                threshold: f64::NAN,
                flagged: false,
            })
            .collect());
    }
    let m = (n - 1) as f64;
    Ok(losses
        .iter()
        .enumerate()
        .map(|(i, (id, v))| {
            let others = || losses.iter().enumerate().filter(move |&(j, _)| j != i).map(|(_, (_, x))| *x);
            // mean taken as an offset from v, which keeps equal inputs exactly equal
            let mean = v - others().map(|x| v - x).sum::<f64>() / m;
            let var = others().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
            let threshold = mean + multiplier * var.sqrt();
            ArtifactFlag {
                sample_id: id.clone(),
                rec_loss: *v,
                threshold,
                flagged: *v > threshold,
            }
        })
        .collect())
}
