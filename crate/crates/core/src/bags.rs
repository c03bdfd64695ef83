//! Synthetic instance pools, original bags, and mini-bag sampling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::audit;
use crate::error::{LlpError, Result};
use crate::hypergeom::ClassCounts;
use crate::proportion::ProportionVector;

/// Default standard deviation of the per-class Gaussian used to draw bag
/// proportions.
pub const DEFAULT_PROPORTION_SD: f64 = 0.1;

/// One feature vector with its hidden class label.
///
/// The label is readable only through [`Instance::true_label`], which is
/// audited: training code paths may not call it.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    id: usize,
    features: Vec<f64>,
    label: usize,
}

impl Instance {
    pub fn new(id: usize, features: Vec<f64>, label: usize) -> Self {
        Instance {
            id,
            features,
            label,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// The hidden label. Panics when called from inside a training scope.
    pub fn true_label(&self) -> usize {
        audit::check_label_read();
        self.label
    }
}

/// Class-conditional Gaussian clusters with identity covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    means: Vec<Vec<f64>>,
}

impl ClusterModel {
    /// Places each class mean uniformly at random on the sphere of radius
    /// `separation`.
    pub fn new<R: Rng + ?Sized>(
        classes: usize,
        dim: usize,
        separation: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(LlpError::invalid("classes", "need at least 2 classes"));
        }
        if dim < 2 {
            return Err(LlpError::invalid("dim", "need at least 2 features"));
        }
        if !(separation >= 0.0 && separation.is_finite()) {
            return Err(LlpError::invalid("separation", "must be finite and >= 0"));
        }
        let means = (0..classes)
            .map(|_| {
                let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                let norm = dir
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
                    .max(f64::MIN_POSITIVE);
                dir.into_iter().map(|v| v / norm * separation).collect()
            })
            .collect();
        Ok(ClusterModel { means })
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    /// Draws `per_class` instances of every class; ids start at `first_id`.
    pub fn sample_pool<R: Rng + ?Sized>(
        &self,
        per_class: usize,
        first_id: usize,
        rng: &mut R,
    ) -> InstancePool {
        let mut instances = Vec::with_capacity(per_class * self.num_classes());
        for (label, mean) in self.means.iter().enumerate() {
            for _ in 0..per_class {
                let features = mean
                    .iter()
                    .map(|m| {
                        let e: f64 = StandardNormal.sample(rng);
                        m + e
                    })
                    .collect();
                let id = first_id + instances.len();
                instances.push(Instance::new(id, features, label));
            }
        }
        InstancePool {
            classes: self.num_classes(),
            dim: self.dim(),
            instances,
        }
    }
}

/// A labeled collection of instances from which bags are assembled.
#[derive(Debug, Clone, PartialEq)]
pub struct InstancePool {
    classes: usize,
    dim: usize,
    instances: Vec<Instance>,
}

impl InstancePool {
    pub fn new(classes: usize, instances: Vec<Instance>) -> Result<Self> {
        let dim = instances.first().map(Instance::dim).unwrap_or(0);
        if let Some(bad) = instances.iter().find(|i| i.dim() != dim) {
            return Err(LlpError::Dimension {
                expected: dim,
                found: bad.dim(),
            });
        }
        if let Some(bad) = instances.iter().find(|i| i.label >= classes) {
            return Err(LlpError::Data(format!(
                "instance {} has label {} but there are {classes} classes",
                bad.id, bad.label
            )));
        }
        Ok(InstancePool {
            classes,
            dim,
            instances,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Gaussian class clusters: `instances_per_class` instances of each of
/// `classes` classes in `dim` dimensions.
pub fn generate_synthetic_dataset<R: Rng + ?Sized>(
    classes: usize,
    dim: usize,
    instances_per_class: usize,
    separation: f64,
    rng: &mut R,
) -> Result<(ClusterModel, InstancePool)> {
    let model = ClusterModel::new(classes, dim, separation, rng)?;
    let pool = model.sample_pool(instances_per_class, 0, rng);
    Ok((model, pool))
}

/// An original bag: its instances and its label proportion.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    id: usize,
    instances: Vec<Instance>,
    class_counts: ClassCounts,
    proportion: ProportionVector,
}

impl Bag {
    /// Builds a bag and checks that the hidden labels agree with `class_counts`.
    pub fn new(id: usize, instances: Vec<Instance>, class_counts: ClassCounts) -> Result<Self> {
        if instances.len() != class_counts.total() {
            return Err(LlpError::Data(format!(
                "bag {id}: {} instances but class counts sum to {}",
                instances.len(),
                class_counts.total()
            )));
        }
        let mut observed = vec![0usize; class_counts.num_classes()];
        for inst in &instances {
            let label = inst.label;
            if label >= observed.len() {
                return Err(LlpError::Data(format!(
                    "bag {id}: label {label} out of range"
                )));
            }
            observed[label] += 1;
        }
        if observed != class_counts.as_slice() {
            return Err(LlpError::Data(format!(
                "bag {id}: hidden labels give counts {observed:?}, expected {:?}",
                class_counts.as_slice()
            )));
        }
        let proportion = ProportionVector::from_counts(class_counts.as_slice())?;
        Ok(Bag {
            id,
            instances,
            class_counts,
            proportion,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn size(&self) -> usize {
        self.instances.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.num_classes()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn class_counts(&self) -> &ClassCounts {
        &self.class_counts
    }

    pub fn proportion(&self) -> &ProportionVector {
        &self.proportion
    }
}

/// Splits `total` into integer parts proportional to `weights` (which sum
/// to one) by largest-remainder rounding; ties go to the lower class index.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let scaled: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = scaled.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().take(total.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

/// Draws one bag proportion: per-class Gaussian values with mean `1/C` and
/// standard deviation `sd`, clipped at zero and renormalized. An all-zero
/// draw falls back to uniform.
pub fn draw_bag_proportion<R: Rng + ?Sized>(
    classes: usize,
    sd: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mean = 1.0 / classes as f64;
    let normal =
        Normal::new(mean, sd).map_err(|e| LlpError::invalid("proportion_sd", e.to_string()))?;
    let raw: Vec<f64> = (0..classes).map(|_| normal.sample(rng).max(0.0)).collect();
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return Ok(vec![mean; classes]);
    }
    Ok(raw.into_iter().map(|v| v / sum).collect())
}

/// Builds `num_bags` bags of `bag_size` instances. Each bag draws its class
/// proportions with [`draw_bag_proportion`], rounds them to integer counts,
/// then picks that many distinct instances of each class uniformly from the
/// pool. Instances may recur across bags but never within one.
pub fn make_bags<R: Rng + ?Sized>(
    pool: &InstancePool,
    num_bags: usize,
    bag_size: usize,
    proportion_sd: f64,
    rng: &mut R,
) -> Result<Vec<Bag>> {
    if bag_size == 0 {
        return Err(LlpError::invalid("bag_size", "must be positive"));
    }
    if !(proportion_sd >= 0.0 && proportion_sd.is_finite()) {
        return Err(LlpError::invalid(
            "proportion_sd",
            "must be finite and >= 0",
        ));
    }
    let classes = pool.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, inst) in pool.instances().iter().enumerate() {
        by_class[inst.label].push(i);
    }
    let mut bags = Vec::with_capacity(num_bags);
    for id in 0..num_bags {
        let weights = draw_bag_proportion(classes, proportion_sd, rng)?;
        let counts = largest_remainder(&weights, bag_size);
        let mut instances = Vec::with_capacity(bag_size);
        for (c, &kc) in counts.iter().enumerate() {
            let members = &by_class[c];
            if kc > members.len() {
                return Err(LlpError::Data(format!(
                    "bag {id} needs {kc} instances of class {c}, pool has {}",
                    members.len()
                )));
            }
            for j in rand::seq::index::sample(rng, members.len(), kc) {
                instances.push(pool.instances()[members[j]].clone());
            }
        }
        instances.shuffle(rng);
        bags.push(Bag::new(id, instances, ClassCounts::new(counts)?)?);
    }
    Ok(bags)
}

/// A subset of a bag's instances together with its assigned supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBag {
    pub parent_bag_id: usize,
    pub instance_indices: Vec<usize>,
    pub supervision: Option<ProportionVector>,
}

impl MiniBag {
    pub fn sample_size(&self) -> usize {
        self.instance_indices.len()
    }

    pub fn features<'a>(&self, bag: &'a Bag) -> Vec<&'a [f64]> {
        self.instance_indices
            .iter()
            .map(|&i| bag.instances[i].features())
            .collect()
    }
}

/// Samples `n` distinct instance indices of `bag` uniformly without replacement.
pub fn sample_minibag<R: Rng + ?Sized>(bag: &Bag, n: usize, rng: &mut R) -> Result<MiniBag> {
    if n == 0 || n > bag.size() {
        return Err(LlpError::invalid(
            "sample_size",
            format!("{n} not in 1..={} for bag {}", bag.size(), bag.id),
        ));
    }
    Ok(MiniBag {
        parent_bag_id: bag.id,
        instance_indices: rand::seq::index::sample(rng, bag.size(), n).into_vec(),
        supervision: None,
    })
}

/// Exact class counts of a mini-bag, read from hidden labels. Evaluation only.
pub fn true_minibag_counts(bag: &Bag, minibag: &MiniBag) -> Result<ClassCounts> {
    let _eval = audit::eval_scope();
    let mut counts = vec![0usize; bag.num_classes()];
    for &i in &minibag.instance_indices {
        let inst = bag.instances.get(i).ok_or_else(|| {
            LlpError::invalid(
                "instance_indices",
                format!("{i} out of range for bag {}", bag.id),
            )
        })?;
        counts[inst.true_label()] += 1;
    }
    ClassCounts::new(counts)
}

/// Exact proportion of a mini-bag, read from hidden labels. Evaluation only.
pub fn true_minibag_proportion(bag: &Bag, minibag: &MiniBag) -> Result<ProportionVector> {
    let counts = true_minibag_counts(bag, minibag)?;
    ProportionVector::from_counts(counts.as_slice())
}
