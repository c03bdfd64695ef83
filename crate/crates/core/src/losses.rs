//! Proportion loss, hypergeometric supervision perturbation, and
//! PMF-based loss weighting.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::bags::Bag;
use crate::error::{LlpError, Result};
use crate::hypergeom::MultivariateHypergeometric;
pub use crate::proportion::ProportionVector;

/// Lower clamp applied to predicted proportions before taking the log.
pub const LOG_EPSILON: f64 = 1e-12;

/// Attempts made by [`gaussian_perturb_supervision`] before it falls back to
/// the unperturbed proportion.
pub const GAUSSIAN_MAX_RETRIES: usize = 16;

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(LlpError::Dimension { expected, found });
    }
    Ok(())
}

/// Bag-level cross-entropy `-sum_c target_c * ln(predicted_c)`.
///
/// Predictions are clamped to `[LOG_EPSILON, 1]`; classes with zero target
/// contribute nothing.
pub fn proportion_loss(predicted: &ProportionVector, target: &ProportionVector) -> Result<f64> {
    check_dims(target.num_classes(), predicted.num_classes())?;
    Ok(cross_entropy(predicted.as_slice(), target.as_slice()))
}

pub(crate) fn cross_entropy(predicted: &[f64], target: &[f64]) -> f64 {
    let loss: f64 = predicted
        .iter()
        .zip(target)
        .filter(|(_, &t)| t > 0.0)
        .map(|(&p, &t)| -t * p.clamp(LOG_EPSILON, 1.0).ln())
        .sum();
    // -0.0 when every term vanishes
    loss.max(0.0)
}

/// Column-wise mean of per-instance class confidences.
pub fn predict_bag_proportion<R: AsRef<[f64]>>(confidences: &[R]) -> Result<ProportionVector> {
    let first = confidences
        .first()
        .ok_or_else(|| LlpError::invalid("confidences", "empty matrix"))?;
    let classes = first.as_ref().len();
    let mut mean = vec![0.0; classes];
    for row in confidences {
        let row = row.as_ref();
        check_dims(classes, row.len())?;
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > crate::proportion::SUM_TOLERANCE {
            return Err(LlpError::InvalidProportion(format!(
                "confidence row sums to {sum}"
            )));
        }
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = confidences.len() as f64;
    // Averaging can push an entry a few ulps outside [0, 1].
    ProportionVector::new(mean.into_iter().map(|m| (m / n).clamp(0.0, 1.0)).collect())
}

/// Draws a perturbed supervision `q = k / n` with `k ~ H(N, n, K)` for the
/// bag's class counts `K`, and returns it together with the PMF at `k`.
pub fn perturb_supervision<R: Rng + ?Sized>(
    bag: &Bag,
    n: usize,
    rng: &mut R,
) -> Result<(ProportionVector, f64)> {
    if n == 0 || n > bag.size() {
        return Err(LlpError::invalid(
            "sample_size",
            format!("{n} not in 1..={}", bag.size()),
        ));
    }
    let dist = MultivariateHypergeometric::new(bag.class_counts().clone(), n)?;
    let k = dist.sample(rng);
    let pmf = dist.pmf(k.as_slice())?;
    Ok((ProportionVector::from_counts(k.as_slice())?, pmf))
}

/// Median of a nonempty slice; even lengths average the two central values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    })
}

/// Divides each raw weight by the batch median.
///
/// Fails with [`LlpError::DegenerateWeights`] when the median is zero, which
/// includes the all-zero batch.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(LlpError::invalid("raw_pmfs", "empty batch"));
    }
    if let Some(bad) = raw.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(LlpError::invalid(
            "raw_pmfs",
            format!("weight {bad} is not a finite nonnegative number"),
        ));
    }
    let m = median(raw).unwrap_or(0.0);
    if m <= 0.0 {
        return Err(LlpError::DegenerateWeights);
    }
    Ok(raw.iter().map(|w| w / m).collect())
}

/// One term of the weighted batch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBagLoss {
    pub bag_id: usize,
    pub per_bag_loss: f64,
    pub weight: f64,
}

impl WeightedBagLoss {
    pub fn contribution(&self) -> f64 {
        self.weight * self.per_bag_loss
    }
}

/// `sum_i w_i * proportion_loss(predicted_i, target_i)` over
/// `(predicted, target, weight)` entries.
pub fn weighted_batch_loss(entries: &[(ProportionVector, ProportionVector, f64)]) -> Result<f64> {
    entries.iter().try_fold(0.0, |acc, (predicted, target, w)| {
        Ok(acc + w * proportion_loss(predicted, target)?)
    })
}

/// Adds independent `N(0, sd^2)` noise to each class of the bag proportion,
/// clips to `[0, 1]` and renormalizes. A draw clipped to all zeros is
/// retried; after [`GAUSSIAN_MAX_RETRIES`] failures the bag proportion is
/// returned unchanged.
pub fn gaussian_perturb_supervision<R: Rng + ?Sized>(
    bag: &Bag,
    sd: f64,
    rng: &mut R,
) -> Result<ProportionVector> {
    let p = bag.proportion();
    if sd == 0.0 {
        return Ok(p.clone());
    }
    let noise = Normal::new(0.0, sd).map_err(|e| LlpError::invalid("sd", e.to_string()))?;
    for _ in 0..GAUSSIAN_MAX_RETRIES {
        let raw: Vec<f64> = p
            .as_slice()
            .iter()
            .map(|&pc| (pc + noise.sample(rng)).clamp(0.0, 1.0))
            .collect();
        let sum: f64 = raw.iter().sum();
        if sum > 0.0 {
            return ProportionVector::new(raw.into_iter().map(|v| (v / sum).min(1.0)).collect());
        }
    }
    Ok(p.clone())
}
