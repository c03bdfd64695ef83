use llp_core::bags::{make_bags, sample_minibag, true_minibag_counts};
use llp_core::experiments::{build_dataset, DatasetConfig};
use llp_core::losses::perturb_supervision;
use llp_core::rng::stream;
use llp_core::{ClassCounts, Hypergeometric, MultivariateHypergeometric};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson goodness of fit, pooling cells with expected count below 5 into
/// their neighbour. Returns the p-value.
fn chi_square_p(observed: &[usize], expected_prob: &[f64], draws: usize) -> f64 {
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(expected_prob) {
        o_acc += o as f64;
        e_acc += p * draws as f64;
        if e_acc >= 5.0 {
            obs.push(o_acc);
            exp.push(e_acc);
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if let (Some(o), Some(e)) = (obs.last_mut(), exp.last_mut()) {
        *o += o_acc;
        *e += e_acc;
    }
    let stat: f64 = obs.iter().zip(&exp).map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = (obs.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

#[test]
fn univariate_sampler_passes_goodness_of_fit() {
    let cases = [
        (20, 7, 5),
        (200, 30, 12),
        (200, 3, 150),
        (50, 25, 25),
        (1000, 400, 60),
    ];
    for (seed, &(total, succ, draws)) in cases.iter().enumerate() {
        let h = Hypergeometric::new(total, succ, draws).unwrap();
        let mut rng = stream(seed as u64, "gof");
        let reps = 40_000;
        let mut counts = vec![0usize; draws + 1];
        for _ in 0..reps {
            counts[h.sample(&mut rng)] += 1;
        }
        let probs: Vec<f64> = (0..=draws).map(|k| h.pmf(k)).collect();
        let p = chi_square_p(&counts, &probs, reps);
        assert!(p > 1e-4, "H({total},{succ},{draws}) p = {p}");
    }
}

#[test]
fn multivariate_moments_match_theory() {
    let counts = vec![30usize, 25, 20, 15, 10, 50, 0, 20, 15, 15];
    let total: usize = counts.iter().sum();
    let n = 25;
    let dist =
        MultivariateHypergeometric::new(ClassCounts::new(counts.clone()).unwrap(), n).unwrap();
    let mut rng = stream(3, "moments");
    let reps = 50_000;
    let mut sum = vec![0.0; counts.len()];
    let mut sum_sq = vec![0.0; counts.len()];
    let mut cross01 = 0.0;
    for _ in 0..reps {
        let k = dist.sample(&mut rng);
        assert_eq!(k.total(), n);
        for (c, &v) in k.as_slice().iter().enumerate() {
            sum[c] += v as f64;
            sum_sq[c] += (v * v) as f64;
        }
        cross01 += (k.get(0) * k.get(1)) as f64;
    }
    let r = reps as f64;
    let (nf, tf) = (n as f64, total as f64);
    let fpc = (tf - nf) / (tf - 1.0);
    for (c, &kc) in counts.iter().enumerate() {
        let p = kc as f64 / tf;
        let mean = sum[c] / r;
        let var = sum_sq[c] / r - mean * mean;
        let true_var = nf * p * (1.0 - p) * fpc;
        assert!(
            (mean - nf * p).abs() < 4.0 * (true_var / r).sqrt() + 1e-12,
            "mean class {c}"
        );
        if true_var > 0.0 {
            assert!(
                (var / true_var - 1.0).abs() < 0.05,
                "var class {c}: {var} vs {true_var}"
            );
        } else {
            assert_eq!(var, 0.0);
        }
    }
    let (p0, p1) = (counts[0] as f64 / tf, counts[1] as f64 / tf);
    let cov = cross01 / r - (sum[0] / r) * (sum[1] / r);
    let true_cov = -nf * p0 * p1 * fpc;
    assert!(
        (cov - true_cov).abs() < 0.05 * true_cov.abs() + 0.02,
        "{cov} vs {true_cov}"
    );
}

#[test]
fn perturbed_targets_share_the_law_of_true_minibag_counts() {
    // the supervision law and the law of a real mini-bag's composition agree
    let data = build_dataset(
        &DatasetConfig {
            classes: 3,
            num_bags: 1,
            bag_size: 30,
            pool_per_class: 50,
            proportion_sd: 0.2,
            ..DatasetConfig::default()
        },
        8,
    )
    .unwrap();
    let bag = &data.bags[0];
    let n = 6;
    let mut a_rng = stream(1, "a");
    let mut b_rng = stream(2, "b");
    let reps = 30_000;
    let dist = MultivariateHypergeometric::new(bag.class_counts().clone(), n).unwrap();
    let support = dist.enumerate_support().unwrap();
    let index = |k: &[usize]| support.iter().position(|(s, _)| s.as_slice() == k).unwrap();
    let mut from_targets = vec![0usize; support.len()];
    let mut from_minibags = vec![0usize; support.len()];
    for _ in 0..reps {
        let (q, w) = perturb_supervision(bag, n, &mut a_rng).unwrap();
        let k: Vec<usize> = q
            .as_slice()
            .iter()
            .map(|v| (v * n as f64).round() as usize)
            .collect();
        let i = index(&k);
        assert!((w - support[i].1).abs() < 1e-12);
        from_targets[i] += 1;
        let mb = sample_minibag(bag, n, &mut b_rng).unwrap();
        from_minibags[index(true_minibag_counts(bag, &mb).unwrap().as_slice())] += 1;
    }
    let probs: Vec<f64> = support.iter().map(|(_, p)| *p).collect();
    assert!(chi_square_p(&from_targets, &probs, reps) > 1e-4);
    assert!(chi_square_p(&from_minibags, &probs, reps) > 1e-4);
}

#[test]
fn bag_proportions_follow_their_counts() {
    let data = build_dataset(&DatasetConfig::default(), 4).unwrap();
    let mut rng = stream(4, "bags");
    let bags = make_bags(&data.pool, 20, 200, 0.1, &mut rng).unwrap();
    for bag in &bags {
        assert_eq!(bag.size(), 200);
        let p = bag.proportion().as_slice();
        for (c, &k) in bag.class_counts().as_slice().iter().enumerate() {
            assert_eq!(p[c], k as f64 / 200.0);
        }
        let mut ids: Vec<usize> = bag.instances().iter().map(|i| i.id()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 200);
    }
}
