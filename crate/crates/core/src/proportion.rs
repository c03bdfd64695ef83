use std::fmt;

use crate::error::{LlpError, Result};

/// Tolerance on the sum of a proportion vector.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Class proportions: unit-interval fractions summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionVector(Vec<f64>);

impl ProportionVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(LlpError::InvalidProportion("no classes".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(LlpError::InvalidProportion(format!(
                "entry {v} outside [0, 1]"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(LlpError::InvalidProportion(format!("entries sum to {sum}")));
        }
        Ok(ProportionVector(values))
    }

    /// `counts / sum(counts)`; each entry is an exact multiple of `1 / sum`.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(LlpError::InvalidProportion("counts sum to zero".into()));
        }
        Self::new(counts.iter().map(|&k| k as f64 / total as f64).collect())
    }

    /// Wraps values already known to be a valid proportion vector.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!((values.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        ProportionVector(values)
    }

    pub fn uniform(classes: usize) -> Self {
        ProportionVector(vec![1.0 / classes as f64; classes])
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl std::ops::Index<usize> for ProportionVector {
    type Output = f64;

    fn index(&self, class: usize) -> &f64 {
        &self.0[class]
    }
}

impl fmt::Display for ProportionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.4}")?;
        }
        write!(f, "]")
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ProportionVector::new(vec![0.5, 0.5]).is_ok());
        assert!(ProportionVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProportionVector::new(vec![1.2, -0.2]).is_err());
        assert!(ProportionVector::new(vec![]).is_err());
        assert!(ProportionVector::from_counts(&[0, 0]).is_err());
        let p = ProportionVector::from_counts(&[7, 3]).unwrap();
        assert_eq!(p.as_slice(), &[0.7, 0.3]);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.3, 0.3, 0.4]), 2);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert!((ProportionVector::uniform(2).entropy() - 2f64.ln()).abs() < 1e-15);
    }
}
