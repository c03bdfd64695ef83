//! Exact and sampled multivariate hypergeometric distribution.
//!
//! `H(N, n, K)` is the law of the per-class counts obtained when `n` items
//! are drawn without replacement from a population of `N` items holding
//! `K_c` items of class `c`. It is the law of the class composition of a
//! mini-bag drawn from a larger bag, and the law used to perturb mini-bag
//! supervision.
//!
//! All probabilities are computed in log space through the log-gamma
//! function, so populations of `10^5` and beyond do not overflow.

use rand::Rng;

use crate::error::{LlpError, Result};

/// Default maximum number of outcomes [`MultivariateHypergeometric::enumerate_support`]
/// will materialize.
pub const DEFAULT_SUPPORT_CAP: usize = 1_000_000;

/// Natural log of the binomial coefficient `C(a, b)`; `-inf` when `b > a`.
pub fn ln_choose(a: usize, b: usize) -> f64 {
    if b > a {
        return f64::NEG_INFINITY;
    }
    if b == 0 || b == a {
        return 0.0;
    }
    let (a, b) = (a as f64, b as f64);
    libm::lgamma(a + 1.0) - libm::lgamma(b + 1.0) - libm::lgamma(a - b + 1.0)
}

/// Number of instances per class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassCounts(Vec<usize>);

impl ClassCounts {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(LlpError::invalid(
                "counts",
                "at least one class is required",
            ));
        }
        Ok(ClassCounts(counts))
    }

    pub fn zeros(classes: usize) -> Self {
        ClassCounts(vec![0; classes.max(1)])
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn get(&self, class: usize) -> usize {
        self.0[class]
    }
}

impl std::ops::Index<usize> for ClassCounts {
    type Output = usize;

    fn index(&self, class: usize) -> &usize {
        &self.0[class]
    }
}

/// Univariate hypergeometric law: successes among `draws` items taken from
/// `population` items of which `successes` are marked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hypergeometric {
    population: usize,
    successes: usize,
    draws: usize,
}

impl Hypergeometric {
    pub fn new(population: usize, successes: usize, draws: usize) -> Result<Self> {
        if successes > population {
            return Err(LlpError::invalid(
                "successes",
                format!("{successes} exceeds population {population}"),
            ));
        }
        if draws > population {
            return Err(LlpError::invalid(
                "draws",
                format!("{draws} exceeds population {population}"),
            ));
        }
        Ok(Hypergeometric {
            population,
            successes,
            draws,
        })
    }

    pub fn population(&self) -> usize {
        self.population
    }

    pub fn successes(&self) -> usize {
        self.successes
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    /// Smallest value with positive probability.
    pub fn min_value(&self) -> usize {
        (self.draws + self.successes).saturating_sub(self.population)
    }

    /// Largest value with positive probability.
    pub fn max_value(&self) -> usize {
        self.successes.min(self.draws)
    }

    pub fn mode(&self) -> usize {
        let m = ((self.draws as u128 + 1) * (self.successes as u128 + 1)
            / (self.population as u128 + 2)) as usize;
        m.clamp(self.min_value(), self.max_value())
    }

    pub fn mean(&self) -> f64 {
        if self.population == 0 {
            return 0.0;
        }
        self.draws as f64 * self.successes as f64 / self.population as f64
    }

    pub fn variance(&self) -> f64 {
        let (n, k, big) = (
            self.draws as f64,
            self.successes as f64,
            self.population as f64,
        );
        if self.population <= 1 {
            return 0.0;
        }
        n * (k / big) * (1.0 - k / big) * (big - n) / (big - 1.0)
    }

    pub fn log_pmf(&self, k: usize) -> f64 {
        if k < self.min_value() || k > self.max_value() {
            return f64::NEG_INFINITY;
        }
        ln_choose(self.successes, k) + ln_choose(self.population - self.successes, self.draws - k)
            - ln_choose(self.population, self.draws)
    }

    pub fn pmf(&self, k: usize) -> f64 {
        let lp = self.log_pmf(k);
        if lp == f64::NEG_INFINITY {
            0.0
        } else {
            lp.exp()
        }
    }

    /// `pmf(k + 1) / pmf(k)` for `k` and `k + 1` inside the support.
    fn step_up_ratio(&self, k: usize) -> f64 {
        let failures = self.population - self.successes;
        let num = (self.successes - k) as f64 * (self.draws - k) as f64;
        let den = (k + 1) as f64 * (failures + k + 1 - self.draws) as f64;
        num / den
    }

    /// Draws one value by inverse-CDF search that starts at the mode and
    /// walks outward, alternating sides, with probabilities from the PMF
    /// recurrence.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let (lo_bound, hi_bound) = (self.min_value(), self.max_value());
        if lo_bound == hi_bound {
            return lo_bound;
        }
        let mode = self.mode();
        let p_mode = self.pmf(mode);
        let u: f64 = rng.random();
        let mut acc = p_mode;
        if u < acc {
            return mode;
        }
        let (mut lo, mut hi) = (mode, mode);
        let (mut p_lo, mut p_hi) = (p_mode, p_mode);
        while lo > lo_bound || hi < hi_bound {
            if hi < hi_bound {
                p_hi *= self.step_up_ratio(hi);
                hi += 1;
                acc += p_hi;
                if u < acc {
                    return hi;
                }
            }
            if lo > lo_bound {
                p_lo /= self.step_up_ratio(lo - 1);
                lo -= 1;
                acc += p_lo;
                if u < acc {
                    return lo;
                }
            }
        }
        // Only reachable when rounding leaves the accumulated mass just below u.
        mode
    }
}

/// Multivariate hypergeometric distribution `H(N, n, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateHypergeometric {
    population: ClassCounts,
    total: usize,
    draws: usize,
}

impl MultivariateHypergeometric {
    pub fn new(population: ClassCounts, draws: usize) -> Result<Self> {
        let total = population.total();
        if draws > total {
            return Err(LlpError::invalid(
                "draws",
                format!("{draws} exceeds population size {total}"),
            ));
        }
        Ok(MultivariateHypergeometric {
            population,
            total,
            draws,
        })
    }

    pub fn population_counts(&self) -> &ClassCounts {
        &self.population
    }

    /// `N`, the population size.
    pub fn population_size(&self) -> usize {
        self.total
    }

    /// `n`, the number of draws.
    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn num_classes(&self) -> usize {
        self.population.num_classes()
    }

    /// Population proportion `K_c / N` of each class.
    pub fn population_proportions(&self) -> Vec<f64> {
        self.population
            .as_slice()
            .iter()
            .map(|&k| {
                if self.total == 0 {
                    0.0
                } else {
                    k as f64 / self.total as f64
                }
            })
            .collect()
    }

    fn check_len(&self, k: &[usize]) -> Result<()> {
        if k.len() != self.num_classes() {
            return Err(LlpError::Dimension {
                expected: self.num_classes(),
                found: k.len(),
            });
        }
        Ok(())
    }

    pub fn in_support(&self, k: &[usize]) -> Result<bool> {
        self.check_len(k)?;
        let fits = k
            .iter()
            .zip(self.population.as_slice())
            .all(|(&kc, &big_kc)| kc <= big_kc);
        Ok(fits && k.iter().sum::<usize>() == self.draws)
    }

    /// `ln[ prod_c C(K_c, k_c) / C(N, n) ]`, or `-inf` outside the support.
    pub fn log_pmf(&self, k: &[usize]) -> Result<f64> {
        if !self.in_support(k)? {
            return Ok(f64::NEG_INFINITY);
        }
        let numerator: f64 = k
            .iter()
            .zip(self.population.as_slice())
            .map(|(&kc, &big_kc)| ln_choose(big_kc, kc))
            .sum();
        Ok(numerator - ln_choose(self.total, self.draws))
    }

    pub fn pmf(&self, k: &[usize]) -> Result<f64> {
        let lp = self.log_pmf(k)?;
        Ok(if lp == f64::NEG_INFINITY {
            0.0
        } else {
            lp.exp()
        })
    }

    /// Upper bound `prod_c (min(K_c, n) + 1)` on the number of support points.
    pub fn support_bound(&self) -> u128 {
        self.population
            .as_slice()
            .iter()
            .fold(1u128, |acc, &big_kc| {
                acc.saturating_mul(big_kc.min(self.draws) as u128 + 1)
            })
    }

    /// Every support point paired with its probability, using the default cap.
    pub fn enumerate_support(&self) -> Result<Vec<(ClassCounts, f64)>> {
        self.enumerate_support_capped(DEFAULT_SUPPORT_CAP)
    }

    /// Every support point paired with its probability. The first class
    /// varies slowest, from its largest feasible count downward.
    pub fn enumerate_support_capped(&self, cap: usize) -> Result<Vec<(ClassCounts, f64)>> {
        let bound = self.support_bound();
        if bound > cap as u128 {
            return Err(LlpError::Capacity { size: bound, cap });
        }
        let counts = self.population.as_slice();
        // suffix[c] = sum of K over classes c.., bounds what later classes can absorb.
        let mut suffix = vec![0usize; counts.len() + 1];
        for c in (0..counts.len()).rev() {
            suffix[c] = suffix[c + 1] + counts[c];
        }
        let mut out = Vec::new();
        let mut current = vec![0usize; counts.len()];
        self.enumerate_rec(0, self.draws, &suffix, &mut current, &mut out);
        Ok(out)
    }

    fn enumerate_rec(
        &self,
        class: usize,
        remaining: usize,
        suffix: &[usize],
        current: &mut Vec<usize>,
        out: &mut Vec<(ClassCounts, f64)>,
    ) {
        let counts = self.population.as_slice();
        if class + 1 == counts.len() {
            if remaining <= counts[class] {
                current[class] = remaining;
                let k = current.clone();
                let p = self.pmf(&k).unwrap_or(0.0);
                out.push((ClassCounts(k), p));
            }
            return;
        }
        let hi = counts[class].min(remaining);
        let lo = remaining.saturating_sub(suffix[class + 1]);
        for kc in (lo..=hi).rev() {
            current[class] = kc;
            self.enumerate_rec(class + 1, remaining - kc, suffix, current, out);
        }
        current[class] = 0;
    }

    /// Draws class counts by sequential conditional univariate draws: class
    /// `c` is drawn from the hypergeometric law over the population not yet
    /// assigned, and the last class takes the remaining draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ClassCounts {
        let counts = self.population.as_slice();
        let mut out = vec![0usize; counts.len()];
        let mut pop_left = self.total;
        let mut draws_left = self.draws;
        let last = counts.len() - 1;
        for (c, &big_kc) in counts.iter().enumerate().take(last) {
            if draws_left == 0 {
                break;
            }
            let kc = Hypergeometric {
                population: pop_left,
                successes: big_kc,
                draws: draws_left,
            }
            .sample(rng);
            out[c] = kc;
            pop_left -= big_kc;
            draws_left -= kc;
        }
        out[last] += draws_left;
        ClassCounts(out)
    }

    /// Exact marginal law of the count of `class`.
    pub fn marginal(&self, class: usize) -> Result<Hypergeometric> {
        if class >= self.num_classes() {
            return Err(LlpError::invalid(
                "class_index",
                format!("{class} out of range for {} classes", self.num_classes()),
            ));
        }
        Hypergeometric::new(self.total, self.population[class], self.draws)
    }
}
