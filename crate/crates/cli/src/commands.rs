use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use llp_core::bags::{Bag, Instance};
use llp_core::experiments::{
    ablation_grid, build_dataset, calibration_curve, confidence_histogram, mae_vs_sample_size,
    results_csv, summarize, summary_csv, GridSpec,
};
use llp_core::model::{format_checkpoint, CheckpointMeta};
use llp_core::plot::{mae_chart, reliability_chart, trace_chart};
use llp_core::rng::stream;
use llp_core::snapshot::{format_snapshot, read_snapshot};
use llp_core::trainer::run_training;
use llp_core::Method;

use crate::config::RunConfig;

pub const BAGS_FILE: &str = "bags.csv";
pub const TEST_FILE: &str = "test.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Output directory that refuses to clobber earlier results unless forced.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn prepare(root: &Path, force: bool) -> Result<Self> {
        if root.exists() {
            if !root.is_dir() {
                bail!("output path {} is not a directory", root.display());
            }
            let occupied = fs::read_dir(root)
                .with_context(|| format!("reading {}", root.display()))?
                .next()
                .is_some();
            if occupied && !force {
                bail!(
                    "output directory {} is not empty (pass --force to overwrite)",
                    root.display()
                );
            }
        } else {
            fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        }
        Ok(OutDir {
            root: root.to_path_buf(),
        })
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }
}

/// File-name stem for a method, e.g. `gaussian_0.05`.
pub fn method_slug(method: Method) -> String {
    match method {
        Method::Gaussian(sd) => format!("gaussian_{sd}"),
        other => other.to_string().to_ascii_lowercase(),
    }
}

/// Bags and held-out instances, read from `data_dir` when set.
fn load_data(cfg: &RunConfig, seed: u64) -> Result<(Vec<Bag>, Vec<Instance>)> {
    match &cfg.data_dir {
        Some(dir) => {
            let classes = cfg.dataset.classes;
            let read = |name: &str| {
                let path = dir.join(name);
                if !path.is_file() {
                    bail!("missing input file {}", path.display());
                }
                Ok(read_snapshot(&path, classes)?)
            };
            let bags = read(BAGS_FILE)?.bags;
            let test = read(TEST_FILE)?.held_out;
            if bags.is_empty() || test.is_empty() {
                bail!("{} holds no bags or no held-out rows", dir.display());
            }
            Ok((bags, test))
        }
        None => {
            let data = build_dataset(&cfg.dataset, seed)?;
            Ok((data.bags, data.test))
        }
    }
}

pub fn gen_data(cfg: &RunConfig, out: &OutDir) -> Result<()> {
    let data = build_dataset(&cfg.dataset, cfg.seed)?;
    out.write(BAGS_FILE, &format_snapshot(&data.bags, &[])?)?;
    out.write(TEST_FILE, &format_snapshot(&[], &data.test)?)?;
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &OutDir) -> Result<()> {
    if cfg.data_dir.is_none() {
        cfg.validate_sample_size()?;
    }
    let (bags, test) = load_data(cfg, cfg.seed)?;
    let config = cfg.train_config();
    let outcome = run_training(&bags, &test, &config)?;
    out.write("trace.csv", &outcome.trace.to_csv())?;
    let meta = CheckpointMeta {
        seed: cfg.seed,
        epoch: outcome.best_epoch,
    };
    out.write("model.txt", &format_checkpoint(&outcome.best_params, meta))?;
    let title = format!("{} n={}", config.method, config.sample_size);
    out.write("trace.svg", &trace_chart(&title, &outcome.trace).to_svg())?;
    Ok(())
}

pub fn mae_curve(cfg: &RunConfig, out: &OutDir) -> Result<()> {
    if cfg.data_dir.is_none() {
        cfg.validate_sample_sizes()?;
    }
    let (bags, _) = load_data(cfg, cfg.seed)?;
    let mut rng = stream(cfg.seed, "mae");
    let curve = mae_vs_sample_size(&bags, &cfg.sample_sizes, cfg.draws_per_point, &mut rng)?;
    out.write("mae.csv", &curve.to_csv())?;
    out.write("mae.svg", &mae_chart(&curve).to_svg())?;
    Ok(())
}

pub fn ablation(cfg: &RunConfig, out: &OutDir) -> Result<()> {
    if cfg.data_dir.is_some() {
        bail!("`data_dir` is not supported by ablation; each seed generates its own data");
    }
    cfg.validate_sample_sizes()?;
    let spec = GridSpec {
        dataset: cfg.dataset.clone(),
        train: cfg.train.clone(),
        methods: cfg.methods.clone(),
        sample_sizes: cfg.sample_sizes.clone(),
        seeds: cfg.seeds(),
        include_full_perturbed: cfg.include_full_perturbed,
    };
    let cells = ablation_grid(&spec)?;
    out.write("results.csv", &results_csv(&cells))?;
    out.write("summary.csv", &summary_csv(&summarize(&cells)))?;
    for c in &cells {
        let stem = format!(
            "traces/{}_n{}_s{}",
            method_slug(c.method),
            c.sample_size,
            c.seed
        );
        out.write(&format!("{stem}.csv"), &c.trace.to_csv())?;
        let title = format!("{} n={} seed={}", c.method, c.sample_size, c.seed);
        out.write(
            &format!("{stem}.svg"),
            &trace_chart(&title, &c.trace).to_svg(),
        )?;
    }
    Ok(())
}

pub fn calibrate(cfg: &RunConfig, out: &OutDir) -> Result<()> {
    if cfg.data_dir.is_none() {
        cfg.validate_sample_size()?;
    }
    let mut summary = String::from("method,seed,test_acc,mean_gap,ece\n");
    for seed in cfg.seeds() {
        let (bags, test) = load_data(cfg, seed)?;
        let mut tables = Vec::new();
        for &method in &cfg.methods {
            let config = llp_core::TrainConfig {
                method,
                seed,
                ..cfg.train.clone()
            };
            let outcome = run_training(&bags, &test, &config)?;
            let table = calibration_curve(&outcome.best_params, &test)?;
            let hist = confidence_histogram(&outcome.best_params, &test, cfg.num_bins)?;
            let stem = format!("{}_s{seed}", method_slug(method));
            out.write(&format!("calibration_{stem}.csv"), &table.to_csv())?;
            let mut h = String::from("bin_lower,bin_upper,count\n");
            for (i, c) in hist.iter().enumerate() {
                let w = 1.0 / hist.len() as f64;
                h.push_str(&format!("{},{},{c}\n", i as f64 * w, (i + 1) as f64 * w));
            }
            out.write(&format!("histogram_{stem}.csv"), &h)?;
            summary.push_str(&format!(
                "{method},{seed},{},{},{}\n",
                outcome.best_record().test_acc,
                table.mean_gap(),
                table.expected_calibration_error()
            ));
            tables.push((method.to_string(), table));
        }
        let refs: Vec<(&str, &_)> = tables.iter().map(|(m, t)| (m.as_str(), t)).collect();
        let title = format!("reliability n={} seed={seed}", cfg.train.sample_size);
        out.write(
            &format!("reliability_s{seed}.svg"),
            &reliability_chart(&title, &refs).to_svg(),
        )?;
    }
    out.write("calibration_summary.csv", &summary)?;
    Ok(())
}
