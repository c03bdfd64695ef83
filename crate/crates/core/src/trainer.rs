//! Mini-bag training loop with per-iteration resampling, supervision
//! perturbation, and loss weighting; model selection on validation
//! proportion loss.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::audit;
use crate::bags::{sample_minibag, Bag, Instance, MiniBag};
use crate::error::{LlpError, Result};
use crate::losses::{
    cross_entropy, gaussian_perturb_supervision, median, normalize_weights, perturb_supervision,
};
use crate::model::{batch_gradient, BagExample, ClassifierParams, Optimizer, OptimizerKind, Shape};
use crate::proportion::{argmax, ProportionVector};
use crate::rng::stream;

/// Tolerance on the median of normalized weights checked in every batch.
pub const WEIGHT_MEDIAN_TOLERANCE: f64 = 1e-12;

/// How each mini-bag is supervised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Parent bag proportion, weight 1.
    Pl,
    /// Hypergeometric perturbation with median-normalized PMF weights.
    Ours,
    /// Hypergeometric perturbation, weight 1.
    OursNoLw,
    /// Gaussian perturbation of the parent proportion with the given sd, weight 1.
    Gaussian(f64),
}

impl Method {
    pub fn perturbs(&self) -> bool {
        !matches!(self, Method::Pl)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Pl => write!(f, "PL"),
            Method::Ours => write!(f, "OURS"),
            Method::OursNoLw => write!(f, "OURS_NO_LW"),
            Method::Gaussian(sd) => write!(f, "GAUSSIAN({sd})"),
        }
    }
}

impl FromStr for Method {
    type Err = LlpError;

    /// Accepts `PL`, `OURS`, `OURS_NO_LW`, and `GAUSSIAN(sd)` or
    /// `gaussian:sd`, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_uppercase();
        let bad = || LlpError::invalid("method", format!("unknown method `{s}`"));
        match t.as_str() {
            "PL" => Ok(Method::Pl),
            "OURS" => Ok(Method::Ours),
            "OURS_NO_LW" | "OURS-NO-LW" => Ok(Method::OursNoLw),
            _ => {
                let sd = t
                    .strip_prefix("GAUSSIAN(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| t.strip_prefix("GAUSSIAN:"))
                    .ok_or_else(bad)?;
                let sd: f64 = sd.trim().parse().map_err(|_| bad())?;
                if !(sd >= 0.0 && sd.is_finite()) {
                    return Err(LlpError::invalid("method", "gaussian sd must be >= 0"));
                }
                Ok(Method::Gaussian(sd))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub sample_size: usize,
    pub batch_bags: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Heavy-ball momentum; used by SGD only.
    pub momentum: f64,
    /// Hidden width; zero trains softmax regression.
    pub hidden: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Fixed validation mini-bags drawn per validation bag.
    pub val_minibags: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Ours,
            sample_size: 12,
            batch_bags: 8,
            epochs: 50,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Sgd,
            momentum: 0.0,
            hidden: 64,
            seed: 0,
            validation_fraction: 0.2,
            val_minibags: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size == 0 {
            return Err(LlpError::invalid("sample_size", "must be at least 1"));
        }
        if self.batch_bags == 0 {
            return Err(LlpError::invalid("batch_bags", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(LlpError::invalid("epochs", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(LlpError::invalid(
                "learning_rate",
                "must be finite and >= 0",
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(LlpError::invalid("momentum", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(LlpError::invalid(
                "validation_fraction",
                "must be in [0, 1)",
            ));
        }
        if self.val_minibags == 0 {
            return Err(LlpError::invalid("val_minibags", "must be at least 1"));
        }
        Ok(())
    }
}

/// Metrics recorded after one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean weighted per-bag proportion loss over the epoch's iterations.
    pub train_prop_loss: f64,
    pub val_prop_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub test_mdice: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
    /// Largest `|median(normalized weights) - 1|` seen in any batch.
    pub max_weight_median_deviation: f64,
}

pub const TRACE_HEADER: &str = "epoch,train_prop_loss,val_prop_loss,train_acc,test_acc,test_mdice";

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.train_prop_loss, r.val_prop_loss, r.train_acc, r.test_acc, r.test_mdice
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub best_params: ClassifierParams,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_params: ClassifierParams,
    pub trace: TrainTrace,
}

impl TrainOutcome {
    pub fn best_record(&self) -> &EpochRecord {
        &self.trace.records[self.best_epoch - 1]
    }
}

/// What the trainer fed to the optimizer in one iteration.
#[derive(Debug, Clone)]
pub struct IterationEvent<'a> {
    pub epoch: usize,
    pub iteration: usize,
    pub bag_ids: &'a [usize],
    pub supervisions: &'a [ProportionVector],
    pub weights: &'a [f64],
}

/// Splits bag indices into `(train, validation)` after a seeded shuffle.
pub fn split_bags(
    num_bags: usize,
    validation_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut order: Vec<usize> = (0..num_bags).collect();
    order.shuffle(&mut stream(seed, "train/split"));
    let mut n_val = (num_bags as f64 * validation_fraction).round() as usize;
    if validation_fraction > 0.0 {
        n_val = n_val.max(1);
    }
    if n_val == 0 || n_val >= num_bags {
        return Err(LlpError::invalid(
            "validation_fraction",
            format!("{num_bags} bags cannot be split into nonempty train and validation sets"),
        ));
    }
    let val = order.split_off(num_bags - n_val);
    Ok((order, val))
}

/// Trains on `bags` (split into train and validation) and tracks held-out
/// `test` metrics.
pub fn run_training(bags: &[Bag], test: &[Instance], config: &TrainConfig) -> Result<TrainOutcome> {
    run_training_observed(bags, test, config, |_| {})
}

/// [`run_training`] with a callback invoked after every optimizer step.
pub fn run_training_observed<F>(
    bags: &[Bag],
    test: &[Instance],
    config: &TrainConfig,
    mut observe: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&IterationEvent<'_>),
{
    config.validate()?;
    let first = bags
        .first()
        .ok_or_else(|| LlpError::invalid("bags", "no bags"))?;
    if test.is_empty() {
        return Err(LlpError::invalid("test", "no held-out instances"));
    }
    let min_size = bags.iter().map(Bag::size).min().unwrap_or(0);
    if config.sample_size > min_size {
        return Err(LlpError::invalid(
            "sample_size",
            format!(
                "{} exceeds the smallest bag size {min_size}",
                config.sample_size
            ),
        ));
    }
    let dim = first.instances()[0].dim();
    let shape = Shape::new(dim, config.hidden, first.num_classes())?;
    let (train_idx, val_idx) = split_bags(bags.len(), config.validation_fraction, config.seed)?;

    let _guard = audit::training_scope();

    let mut params = ClassifierParams::init(shape, &mut stream(config.seed, "train/init"));
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, config.momentum);
    let mut order_rng = stream(config.seed, "train/order");
    let mut minibag_rng = stream(config.seed, "train/minibag");
    let mut perturb_rng = stream(config.seed, "train/perturb");

    let mut val_rng = stream(config.seed, "train/validation");
    let val_sets: Vec<(usize, MiniBag)> = val_idx
        .iter()
        .flat_map(|&b| std::iter::repeat_n(b, config.val_minibags))
        .map(|b| {
            let n = config.sample_size.min(bags[b].size());
            Ok((b, sample_minibag(&bags[b], n, &mut val_rng)?))
        })
        .collect::<Result<_>>()?;
    let train_instances: Vec<&Instance> = train_idx
        .iter()
        .flat_map(|&b| bags[b].instances())
        .collect();

    let mut trace = TrainTrace::default();
    let mut best: Option<(usize, f64, ClassifierParams)> = None;
    let mut order = train_idx.clone();
    let mut iteration = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_bags) {
            let mut minibags = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            let mut raw = Vec::with_capacity(chunk.len());
            for &b in chunk {
                let bag = &bags[b];
                minibags.push(sample_minibag(bag, config.sample_size, &mut minibag_rng)?);
                let (q, w) = match config.method {
                    Method::Pl => (bag.proportion().clone(), 1.0),
                    Method::Ours | Method::OursNoLw => {
                        perturb_supervision(bag, config.sample_size, &mut perturb_rng)?
                    }
                    Method::Gaussian(sd) => (
                        gaussian_perturb_supervision(bag, sd, &mut perturb_rng)?,
                        1.0,
                    ),
                };
                targets.push(q);
                raw.push(w);
            }
            let weights = if config.method == Method::Ours {
                let w = normalize_weights(&raw)?;
                let dev = (median(&w).unwrap_or(f64::NAN) - 1.0).abs();
                if dev.is_nan() || dev > WEIGHT_MEDIAN_TOLERANCE {
                    return Err(LlpError::Data(format!(
                        "median of normalized weights deviates from 1 by {dev}"
                    )));
                }
                trace.max_weight_median_deviation = trace.max_weight_median_deviation.max(dev);
                w
            } else {
                vec![1.0; chunk.len()]
            };
            let examples: Vec<BagExample<'_>> = chunk
                .iter()
                .zip(&minibags)
                .zip(targets.iter().zip(&weights))
                .map(|((&b, mb), (q, &w))| BagExample {
                    instances: mb.features(&bags[b]),
                    target: q.clone(),
                    weight: w,
                })
                .collect();
            let (loss, grads) = batch_gradient(&params, &examples)?;
            opt.step(&mut params, &grads)?;
            loss_sum += loss;
            iteration += 1;
            observe(&IterationEvent {
                epoch,
                iteration,
                bag_ids: chunk,
                supervisions: &targets,
                weights: &weights,
            });
        }

        let val_loss = validation_loss(&params, bags, &val_sets)?;
        let record = EpochRecord {
            epoch,
            train_prop_loss: loss_sum / train_idx.len() as f64,
            val_prop_loss: val_loss,
            train_acc: evaluate_instance_accuracy(&params, train_instances.iter().copied())?,
            test_acc: evaluate_instance_accuracy(&params, test)?,
            test_mdice: evaluate_mdice(&params, test)?,
        };
        if best.as_ref().is_none_or(|(_, l, _)| val_loss < *l) {
            best = Some((epoch, val_loss, params.clone()));
        }
        trace.records.push(record);
    }

    let (best_epoch, best_val_loss, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best_params,
        best_epoch,
        best_val_loss,
        final_params: params,
        trace,
    })
}

/// Mean proportion loss of fixed validation mini-bags against their parent
/// bag's (unperturbed) proportion.
fn validation_loss(
    params: &ClassifierParams,
    bags: &[Bag],
    sets: &[(usize, MiniBag)],
) -> Result<f64> {
    let mut total = 0.0;
    for (b, mb) in sets {
        let probs = params.predict_many(mb.features(&bags[*b]))?;
        let n = probs.len() as f64;
        let mut mean = vec![0.0; params.shape().classes];
        for row in &probs {
            for (m, p) in mean.iter_mut().zip(row) {
                *m += p / n;
            }
        }
        total += cross_entropy(&mean, bags[*b].proportion().as_slice());
    }
    Ok(total / sets.len() as f64)
}

/// Argmax-confidence class of every instance; ties go to the lowest class.
pub fn predict_labels<'a, I>(params: &ClassifierParams, instances: I) -> Result<Vec<usize>>
where
    I: IntoIterator<Item = &'a Instance>,
{
    instances
        .into_iter()
        .map(|inst| Ok(argmax(&params.logits(inst.features())?)))
        .collect()
}

/// Fraction of instances whose argmax prediction equals the hidden label.
pub fn evaluate_instance_accuracy<'a, I>(params: &ClassifierParams, instances: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Instance>,
{
    let _eval = audit::eval_scope();
    let mut total = 0usize;
    let mut correct = 0usize;
    for inst in instances {
        total += 1;
        if argmax(&params.logits(inst.features())?) == inst.true_label() {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(LlpError::invalid("instances", "empty evaluation set"));
    }
    Ok(correct as f64 / total as f64)
}

/// Mean over classes of `2TP / (2TP + FP + FN)`.
///
/// A class absent from both predictions and truth scores 1.
pub fn mean_dice(predicted: &[usize], truth: &[usize], classes: usize) -> f64 {
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    (0..classes)
        .map(|c| {
            let den = 2 * tp[c] + fp[c] + fn_[c];
            if den == 0 {
                1.0
            } else {
                2.0 * tp[c] as f64 / den as f64
            }
        })
        .sum::<f64>()
        / classes as f64
}

pub fn evaluate_mdice(params: &ClassifierParams, instances: &[Instance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(LlpError::invalid("instances", "empty evaluation set"));
    }
    let _eval = audit::eval_scope();
    let predicted = predict_labels(params, instances)?;
    let truth: Vec<usize> = instances.iter().map(Instance::true_label).collect();
    Ok(mean_dice(&predicted, &truth, params.shape().classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bags::{generate_synthetic_dataset, make_bags};
    use crate::hypergeom::MultivariateHypergeometric;

    fn toy(
        seed: u64,
        classes: usize,
        bag_size: usize,
        num_bags: usize,
    ) -> (Vec<Bag>, Vec<Instance>) {
        let mut rng = stream(seed, "toy");
        let (model, pool) = generate_synthetic_dataset(classes, 4, 200, 4.0, &mut rng).unwrap();
        let bags = make_bags(&pool, num_bags, bag_size, 0.2, &mut rng).unwrap();
        let test = model.sample_pool(50, 10_000, &mut rng).instances().to_vec();
        (bags, test)
    }

    fn cfg(method: Method, n: usize) -> TrainConfig {
        TrainConfig {
            method,
            sample_size: n,
            epochs: 5,
            learning_rate: 0.05,
            hidden: 8,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn method_parsing() {
        for (s, m) in [
            ("pl", Method::Pl),
            ("OURS", Method::Ours),
            ("ours_no_lw", Method::OursNoLw),
            ("GAUSSIAN(0.05)", Method::Gaussian(0.05)),
            ("gaussian:0.25", Method::Gaussian(0.25)),
        ] {
            assert_eq!(s.parse::<Method>().unwrap(), m);
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("vat".parse::<Method>().is_err());
        assert!("gaussian(-1)".parse::<Method>().is_err());
    }

    #[test]
    fn trace_has_one_record_per_epoch() {
        let (bags, test) = toy(1, 3, 30, 10);
        let out = run_training(&bags, &test, &cfg(Method::Ours, 6)).unwrap();
        assert_eq!(out.trace.records.len(), 5);
        assert!(out
            .trace
            .records
            .iter()
            .enumerate()
            .all(|(i, r)| r.epoch == i + 1));
        assert!(out.trace.max_weight_median_deviation <= WEIGHT_MEDIAN_TOLERANCE);
        let csv = out.trace.to_csv();
        assert!(
            csv.starts_with("epoch,train_prop_loss,val_prop_loss,train_acc,test_acc,test_mdice\n")
        );
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let (bags, test) = toy(2, 3, 30, 10);
        for method in [Method::Pl, Method::Ours, Method::Gaussian(0.1)] {
            let a = run_training(&bags, &test, &cfg(method, 6)).unwrap();
            let b = run_training(&bags, &test, &cfg(method, 6)).unwrap();
            assert_eq!(a.trace, b.trace);
            assert_eq!(a.best_params, b.best_params);
        }
    }

    #[test]
    fn ours_with_full_bags_matches_pl() {
        let (bags, test) = toy(3, 3, 20, 10);
        let pl = run_training(&bags, &test, &cfg(Method::Pl, 20)).unwrap();
        let ours = run_training(&bags, &test, &cfg(Method::Ours, 20)).unwrap();
        assert_eq!(
            pl.trace,
            TrainTrace {
                max_weight_median_deviation: 0.0,
                ..ours.trace.clone()
            }
        );
        assert_eq!(pl.best_params, ours.best_params);
    }

    #[test]
    fn model_selection_picks_lowest_validation_loss() {
        let (bags, test) = toy(4, 3, 30, 10);
        let out = run_training(&bags, &test, &cfg(Method::OursNoLw, 6)).unwrap();
        let min = out
            .trace
            .records
            .iter()
            .map(|r| r.val_prop_loss)
            .fold(f64::INFINITY, f64::min);
        let first_min = out
            .trace
            .records
            .iter()
            .find(|r| r.val_prop_loss == min)
            .unwrap();
        assert_eq!(out.best_epoch, first_min.epoch);
        assert_eq!(out.best_val_loss, min);
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let (bags, test) = toy(5, 3, 20, 4);
        assert!(run_training(&bags, &test, &cfg(Method::Pl, 21)).is_err());
        let mut c = cfg(Method::Pl, 5);
        c.validation_fraction = 0.0;
        assert!(run_training(&bags, &test, &c).is_err());
        assert!(run_training(&bags[..1], &test, &cfg(Method::Pl, 5)).is_err());
        assert!(run_training(&bags, &[], &cfg(Method::Pl, 5)).is_err());
        let mut c = cfg(Method::Pl, 5);
        c.epochs = 0;
        assert!(matches!(
            run_training(&bags, &test, &c),
            Err(LlpError::InvalidArgument { name: "epochs", .. })
        ));
    }

    #[test]
    fn perturbed_supervision_varies_across_iterations() {
        let (bags, test) = toy(6, 3, 30, 10);
        let mut seen: std::collections::HashMap<usize, Vec<ProportionVector>> = Default::default();
        let mut config = cfg(Method::Ours, 6);
        config.epochs = 40;
        run_training_observed(&bags, &test, &config, |ev| {
            assert!((median(ev.weights).unwrap() - 1.0).abs() <= WEIGHT_MEDIAN_TOLERANCE);
            for (id, q) in ev.bag_ids.iter().zip(ev.supervisions) {
                seen.entry(*id).or_default().push(q.clone());
            }
        })
        .unwrap();
        for (id, qs) in seen {
            let dist = MultivariateHypergeometric::new(bags[id].class_counts().clone(), 6).unwrap();
            let mode_mass = dist
                .enumerate_support()
                .unwrap()
                .iter()
                .map(|(_, p)| *p)
                .fold(0.0, f64::max);
            let changes = qs.windows(2).filter(|w| w[0] != w[1]).count() as f64;
            let rate = changes / (qs.len() - 1) as f64;
            // consecutive draws differ with probability 1 - sum p^2 >= 1 - max p
            assert!(
                rate >= (1.0 - mode_mass) - 0.25,
                "bag {id}: rate {rate}, mode {mode_mass}"
            );
        }
    }

    #[test]
    fn training_never_reads_hidden_labels_outside_eval() {
        // The audit panics on any training-path label read in debug builds.
        let (bags, test) = toy(7, 3, 30, 10);
        const { assert!(audit::ENABLED || cfg!(not(debug_assertions))) };
        run_training(&bags, &test, &cfg(Method::Ours, 6)).unwrap();
    }

    #[test]
    fn mdice_examples() {
        assert_eq!(mean_dice(&[0, 1, 2], &[0, 1, 2], 3), 1.0);
        let truth = [0, 0, 1, 1];
        let d = mean_dice(&[0, 0, 0, 0], &truth, 2);
        assert!((d - 1.0 / 3.0).abs() < 1e-15);
        // class 2 absent from both sides scores 1
        assert!((mean_dice(&[0, 1], &[0, 1], 3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn accuracy_examples() {
        let instances: Vec<Instance> = (0..4)
            .map(|i| Instance::new(i, vec![if i % 2 == 0 { 1.0 } else { -1.0 }, 0.0], i % 2))
            .collect();
        let shape = Shape::new(2, 0, 2).unwrap();
        // logits z0 = x0, z1 = -x0
        let perfect =
            ClassifierParams::from_flat(shape, vec![1.0, 0.0, -1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            evaluate_instance_accuracy(&perfect, &instances).unwrap(),
            1.0
        );
        let scaled =
            ClassifierParams::from_flat(shape, vec![3.0, 0.0, -3.0, 0.0, 0.5, 0.5]).unwrap();
        assert_eq!(
            evaluate_instance_accuracy(&scaled, &instances).unwrap(),
            1.0
        );
        let zero = ClassifierParams::zeros(shape);
        // ties go to class 0
        assert_eq!(evaluate_instance_accuracy(&zero, &instances).unwrap(), 0.5);
        assert!(evaluate_instance_accuracy(&zero, &[]).is_err());
    }
}
