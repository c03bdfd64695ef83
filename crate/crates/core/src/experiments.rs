//! Statistical and learning experiments: mini-bag proportion error, confidence
//! histograms, reliability tables, and the method/sample-size grid.

use rand::Rng;
use rayon::prelude::*;

use crate::audit;
use crate::bags::{
    generate_synthetic_dataset, make_bags, sample_minibag, true_minibag_proportion, Bag,
    ClusterModel, Instance, InstancePool,
};
use crate::error::{LlpError, Result};
use crate::model::ClassifierParams;
use crate::proportion::argmax;
use crate::rng::stream;
use crate::trainer::{run_training, Method, TrainConfig, TrainTrace};

/// Width of one reliability bin.
pub const CALIBRATION_BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct MaeCurve {
    pub sample_sizes: Vec<usize>,
    pub mae: Vec<f64>,
    pub sd: Vec<f64>,
}

impl MaeCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_size,mae,sd\n");
        for ((n, m), s) in self.sample_sizes.iter().zip(&self.mae).zip(&self.sd) {
            out.push_str(&format!("{n},{m},{s}\n"));
        }
        out
    }
}

/// Mean over classes of `|a_c - b_c|`.
pub fn proportion_mae(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Monte Carlo estimate of the gap between a mini-bag's true proportion and
/// its parent bag's proportion.
///
/// For every sample size, `draws_per_point` mini-bags are drawn, visiting
/// the bags round-robin. Each draw scores [`proportion_mae`]; the curve holds
/// the mean and the standard deviation of those scores.
pub fn mae_vs_sample_size<R: Rng + ?Sized>(
    bags: &[Bag],
    sample_sizes: &[usize],
    draws_per_point: usize,
    rng: &mut R,
) -> Result<MaeCurve> {
    if bags.is_empty() {
        return Err(LlpError::invalid("bags", "no bags"));
    }
    if draws_per_point == 0 {
        return Err(LlpError::invalid("draws_per_point", "must be at least 1"));
    }
    let min_size = bags.iter().map(Bag::size).min().unwrap_or(0);
    if let Some(&n) = sample_sizes.iter().find(|&&n| n == 0 || n > min_size) {
        return Err(LlpError::invalid(
            "sample_size",
            format!("{n} is outside 1..={min_size} (smallest bag size)"),
        ));
    }

    let mut curve = MaeCurve {
        sample_sizes: sample_sizes.to_vec(),
        mae: Vec::with_capacity(sample_sizes.len()),
        sd: Vec::with_capacity(sample_sizes.len()),
    };
    for &n in sample_sizes {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for d in 0..draws_per_point {
            let bag = &bags[d % bags.len()];
            let mb = sample_minibag(bag, n, rng)?;
            let p = true_minibag_proportion(bag, &mb)?;
            let e = proportion_mae(p.as_slice(), bag.proportion().as_slice());
            sum += e;
            sum_sq += e * e;
        }
        let k = draws_per_point as f64;
        let mean = sum / k;
        let var = if draws_per_point > 1 {
            ((sum_sq - k * mean * mean) / (k - 1.0)).max(0.0)
        } else {
            0.0
        };
        curve.mae.push(mean);
        curve.sd.push(var.sqrt());
    }
    Ok(curve)
}

/// Counts of max-class confidences in `num_bins` equal bins over `[0, 1]`.
///
/// A confidence of exactly 1 falls in the last bin.
pub fn confidence_histogram<'a, I>(
    params: &ClassifierParams,
    instances: I,
    num_bins: usize,
) -> Result<Vec<usize>>
where
    I: IntoIterator<Item = &'a Instance>,
{
    if num_bins == 0 {
        return Err(LlpError::invalid("num_bins", "must be at least 1"));
    }
    let mut counts = vec![0usize; num_bins];
    for inst in instances {
        let conf = params.forward(inst.features())?.max();
        counts[bin_index(conf, num_bins)] += 1;
    }
    Ok(counts)
}

fn bin_index(value: f64, num_bins: usize) -> usize {
    ((value * num_bins as f64).floor().max(0.0) as usize).min(num_bins - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// NaN when the bin is empty.
    pub mean_confidence: f64,
    /// NaN when the bin is empty.
    pub accuracy: f64,
}

/// Reliability table over max-class confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationTable {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn occupied(&self) -> impl Iterator<Item = &CalibrationBin> {
        self.bins.iter().filter(|b| b.count > 0)
    }

    /// Unweighted mean of `|confidence - accuracy|` over occupied bins.
    pub fn mean_gap(&self) -> f64 {
        let (sum, k) = self.occupied().fold((0.0, 0usize), |(s, k), b| {
            (s + (b.mean_confidence - b.accuracy).abs(), k + 1)
        });
        sum / k as f64
    }

    /// Gap weighted by bin occupancy.
    pub fn expected_calibration_error(&self) -> f64 {
        let total = self.total() as f64;
        self.occupied()
            .map(|b| b.count as f64 / total * (b.mean_confidence - b.accuracy).abs())
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lower,bin_upper,count,mean_confidence,accuracy\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                b.lower, b.upper, b.count, b.mean_confidence, b.accuracy
            ));
        }
        out
    }
}

/// Bins each instance's top confidence in width-0.05 bins and records the
/// mean confidence and the fraction of correct argmax predictions per bin.
pub fn calibration_curve<'a, I>(params: &ClassifierParams, instances: I) -> Result<CalibrationTable>
where
    I: IntoIterator<Item = &'a Instance>,
{
    let num_bins = (1.0 / CALIBRATION_BIN_WIDTH).round() as usize;
    let mut count = vec![0usize; num_bins];
    let mut conf_sum = vec![0.0; num_bins];
    let mut correct = vec![0usize; num_bins];
    let _eval = audit::eval_scope();
    for inst in instances {
        let probs = params.forward(inst.features())?;
        let top = argmax(probs.as_slice());
        let b = bin_index(probs[top], num_bins);
        count[b] += 1;
        conf_sum[b] += probs[top];
        if top == inst.true_label() {
            correct[b] += 1;
        }
    }
    if count.iter().all(|&c| c == 0) {
        return Err(LlpError::invalid("instances", "empty evaluation set"));
    }
    let bins = (0..num_bins)
        .map(|b| {
            let c = count[b];
            let (mean_confidence, accuracy) = if c == 0 {
                (f64::NAN, f64::NAN)
            } else {
                (conf_sum[b] / c as f64, correct[b] as f64 / c as f64)
            };
            CalibrationBin {
                lower: b as f64 * CALIBRATION_BIN_WIDTH,
                upper: (b + 1) as f64 * CALIBRATION_BIN_WIDTH,
                count: c,
                mean_confidence,
                accuracy,
            }
        })
        .collect();
    Ok(CalibrationTable { bins })
}

/// Synthetic data layout shared by every method in a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub classes: usize,
    pub dim: usize,
    /// Pool instances generated per class; bags draw from this pool.
    pub pool_per_class: usize,
    pub separation: f64,
    pub num_bags: usize,
    pub bag_size: usize,
    pub proportion_sd: f64,
    pub test_per_class: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            classes: 10,
            dim: 16,
            pool_per_class: 1000,
            separation: 3.0,
            num_bags: 100,
            bag_size: 200,
            proportion_sd: crate::bags::DEFAULT_PROPORTION_SD,
            test_per_class: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub model: ClusterModel,
    pub pool: InstancePool,
    pub bags: Vec<Bag>,
    pub test: Vec<Instance>,
}

/// Generates the clusters, bags, and test set for one seed.
pub fn build_dataset(config: &DatasetConfig, seed: u64) -> Result<SyntheticDataset> {
    let (model, pool) = generate_synthetic_dataset(
        config.classes,
        config.dim,
        config.pool_per_class,
        config.separation,
        &mut stream(seed, "data/pool"),
    )?;
    let bags = make_bags(
        &pool,
        config.num_bags,
        config.bag_size,
        config.proportion_sd,
        &mut stream(seed, "data/bags"),
    )?;
    let test = model
        .sample_pool(
            config.test_per_class,
            pool.len(),
            &mut stream(seed, "data/test"),
        )
        .instances()
        .to_vec();
    Ok(SyntheticDataset {
        model,
        pool,
        bags,
        test,
    })
}

/// One (method, sample size, seed) cell of a grid.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub method: Method,
    pub sample_size: usize,
    pub seed: u64,
    /// Test accuracy of the selected (lowest validation loss) model.
    pub test_acc: f64,
    pub test_mdice: f64,
    /// Validation loss of the selected model.
    pub final_val_loss: f64,
    pub best_epoch: usize,
    pub trace: TrainTrace,
}

pub const RESULTS_HEADER: &str = "method,sample_size,seed,test_acc,test_mdice,final_val_loss";

/// Methods evaluated by default: the three ablation rows plus Gaussian
/// perturbation at sd 0.05, 0.15, 0.25.
pub fn default_methods() -> Vec<Method> {
    vec![
        Method::Pl,
        Method::Ours,
        Method::OursNoLw,
        Method::Gaussian(0.05),
        Method::Gaussian(0.15),
        Method::Gaussian(0.25),
    ]
}

#[derive(Debug, Clone)]
pub struct GridSpec {
    pub dataset: DatasetConfig,
    /// Template; `method`, `sample_size`, and `seed` are overwritten per cell.
    pub train: TrainConfig,
    pub methods: Vec<Method>,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Keep perturbing methods at `n = bag_size`, where the draw is degenerate.
    pub include_full_perturbed: bool,
}

impl GridSpec {
    /// Cells in output order: seed, then sample size, then method.
    pub fn cells(&self) -> Vec<(u64, usize, Method)> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &n in &self.sample_sizes {
                for &m in &self.methods {
                    let degenerate =
                        n >= self.dataset.bag_size && matches!(m, Method::Ours | Method::OursNoLw);
                    if degenerate && !self.include_full_perturbed {
                        continue;
                    }
                    out.push((seed, n, m));
                }
            }
        }
        out
    }
}

/// Trains every grid cell. Each seed builds one dataset shared by all of its
/// cells; cells run in parallel and results come back in [`GridSpec::cells`]
/// order.
pub fn ablation_grid(spec: &GridSpec) -> Result<Vec<GridCell>> {
    if let Some(&n) = spec
        .sample_sizes
        .iter()
        .find(|&&n| n == 0 || n > spec.dataset.bag_size)
    {
        return Err(LlpError::invalid(
            "sample_size",
            format!("{n} is outside 1..={}", spec.dataset.bag_size),
        ));
    }
    let datasets: Vec<(u64, SyntheticDataset)> = spec
        .seeds
        .par_iter()
        .map(|&s| Ok((s, build_dataset(&spec.dataset, s)?)))
        .collect::<Result<_>>()?;
    spec.cells()
        .into_par_iter()
        .map(|(seed, n, method)| {
            let data = &datasets
                .iter()
                .find(|(s, _)| *s == seed)
                .expect("dataset per seed")
                .1;
            let config = TrainConfig {
                method,
                sample_size: n,
                seed,
                ..spec.train.clone()
            };
            let out = run_training(&data.bags, &data.test, &config)?;
            let best = out.best_record().clone();
            Ok(GridCell {
                method,
                sample_size: n,
                seed,
                test_acc: best.test_acc,
                test_mdice: best.test_mdice,
                final_val_loss: out.best_val_loss,
                best_epoch: out.best_epoch,
                trace: out.trace,
            })
        })
        .collect()
}

pub fn results_csv(cells: &[GridCell]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.method, c.sample_size, c.seed, c.test_acc, c.test_mdice, c.final_val_loss
        ));
    }
    out
}

/// Mean test accuracy and mDice over seeds for one (method, sample size).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    pub method: Method,
    pub sample_size: usize,
    pub seeds: usize,
    pub mean_test_acc: f64,
    pub mean_test_mdice: f64,
}

pub fn summarize(cells: &[GridCell]) -> Vec<GridSummary> {
    let mut keys: Vec<(Method, usize)> = Vec::new();
    for c in cells {
        if !keys.contains(&(c.method, c.sample_size)) {
            keys.push((c.method, c.sample_size));
        }
    }
    keys.into_iter()
        .map(|(method, sample_size)| {
            let group: Vec<&GridCell> = cells
                .iter()
                .filter(|c| c.method == method && c.sample_size == sample_size)
                .collect();
            let k = group.len() as f64;
            GridSummary {
                method,
                sample_size,
                seeds: group.len(),
                mean_test_acc: group.iter().map(|c| c.test_acc).sum::<f64>() / k,
                mean_test_mdice: group.iter().map(|c| c.test_mdice).sum::<f64>() / k,
            }
        })
        .collect()
}

/// Mean accuracy for `(method, n)` in a summary, if present.
pub fn mean_accuracy(summary: &[GridSummary], method: Method, sample_size: usize) -> Option<f64> {
    summary
        .iter()
        .find(|s| s.method == method && s.sample_size == sample_size)
        .map(|s| s.mean_test_acc)
}

pub fn summary_csv(summary: &[GridSummary]) -> String {
    let mut out = String::from("method,sample_size,seeds,mean_test_acc,mean_test_mdice\n");
    for s in summary {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.method, s.sample_size, s.seeds, s.mean_test_acc, s.mean_test_mdice
        ));
    }
    out
}

/// Largest training accuracy over epochs minus the final one.
pub fn train_accuracy_drop(trace: &TrainTrace) -> f64 {
    let last = trace.records.last().map_or(0.0, |r| r.train_acc);
    let max = trace
        .records
        .iter()
        .map(|r| r.train_acc)
        .fold(f64::NEG_INFINITY, f64::max);
    max - last
}
