//! Dataset snapshots as CSV: `bag_id,instance_id,class_label,f0,..`.
//!
//! Held-out instances use the same columns with an empty `bag_id`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::audit;
use crate::bags::{Bag, Instance};
use crate::error::{LlpError, Result};
use crate::hypergeom::ClassCounts;

fn header(dim: usize) -> Vec<String> {
    let mut h = vec![
        "bag_id".to_string(),
        "instance_id".into(),
        "class_label".into(),
    ];
    h.extend((0..dim).map(|i| format!("f{i}")));
    h
}

fn write_rows<W: std::io::Write>(
    out: &mut csv::Writer<W>,
    bag_id: Option<usize>,
    instances: &[Instance],
) -> Result<()> {
    for inst in instances {
        let mut row = vec![
            bag_id.map(|b| b.to_string()).unwrap_or_default(),
            inst.id().to_string(),
            inst.true_label().to_string(),
        ];
        row.extend(inst.features().iter().map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    Ok(())
}

/// CSV text for a set of bags, or for held-out instances when `bags` is empty.
pub fn format_snapshot(bags: &[Bag], held_out: &[Instance]) -> Result<String> {
    let dim = bags
        .first()
        .and_then(|b| b.instances().first())
        .or(held_out.first())
        .map_or(0, Instance::dim);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(dim))?;
    let _eval = audit::eval_scope();
    for bag in bags {
        write_rows(&mut w, Some(bag.id()), bag.instances())?;
    }
    write_rows(&mut w, None, held_out)?;
    let bytes = w.into_inner().map_err(|e| LlpError::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| LlpError::Data(e.to_string()))
}

pub fn write_snapshot(path: &Path, bags: &[Bag], held_out: &[Instance]) -> Result<()> {
    std::fs::write(path, format_snapshot(bags, held_out)?)?;
    Ok(())
}

/// Bags rebuilt from a snapshot, plus rows with an empty `bag_id`.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub bags: Vec<Bag>,
    pub held_out: Vec<Instance>,
}

/// Parses snapshot CSV. `classes` fixes the proportion length so bags missing
/// a class still get a zero entry.
pub fn parse_snapshot(text: &str, classes: usize, path: &Path) -> Result<Snapshot> {
    let fail = |reason: String| LlpError::Format {
        what: "snapshot",
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let head = r.headers()?.clone();
    if head.len() < 4
        || head
            .iter()
            .take(3)
            .ne(["bag_id", "instance_id", "class_label"])
    {
        return Err(fail(
            "expected header bag_id,instance_id,class_label,f0,..".into(),
        ));
    }
    let dim = head.len() - 3;
    let mut grouped: BTreeMap<usize, Vec<Instance>> = BTreeMap::new();
    let mut held_out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let id: usize = field(1)
            .parse()
            .map_err(|_| fail(format!("row {row}: bad instance_id")))?;
        let label: usize = field(2)
            .parse()
            .map_err(|_| fail(format!("row {row}: bad class_label")))?;
        if label >= classes {
            return Err(fail(format!("row {row}: class_label {label} >= {classes}")));
        }
        let features = (0..dim)
            .map(|j| {
                field(3 + j)
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| fail(format!("row {row}: bad f{j}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let inst = Instance::new(id, features, label);
        match field(0) {
            "" => held_out.push(inst),
            b => {
                let b: usize = b
                    .parse()
                    .map_err(|_| fail(format!("row {row}: bad bag_id")))?;
                grouped.entry(b).or_default().push(inst);
            }
        }
    }
    let _eval = audit::eval_scope();
    let bags = grouped
        .into_iter()
        .map(|(id, instances)| {
            let mut counts = vec![0usize; classes];
            for inst in &instances {
                counts[inst.true_label()] += 1;
            }
            Bag::new(id, instances, ClassCounts::new(counts)?)
        })
        .collect::<Result<_>>()?;
    Ok(Snapshot { bags, held_out })
}

pub fn read_snapshot(path: &Path, classes: usize) -> Result<Snapshot> {
    let text = std::fs::read_to_string(path)?;
    parse_snapshot(&text, classes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{build_dataset, DatasetConfig};

    #[test]
    fn snapshot_round_trips() {
        let cfg = DatasetConfig {
            classes: 3,
            dim: 4,
            pool_per_class: 20,
            num_bags: 4,
            bag_size: 10,
            test_per_class: 3,
            ..DatasetConfig::default()
        };
        let data = build_dataset(&cfg, 9).unwrap();
        let text = format_snapshot(&data.bags, &data.test).unwrap();
        let back = parse_snapshot(&text, 3, Path::new("mem")).unwrap();
        assert_eq!(back.bags, data.bags);
        assert_eq!(back.held_out, data.test);
        assert_eq!(format_snapshot(&back.bags, &back.held_out).unwrap(), text);
    }

    #[test]
    fn bad_rows_are_reported() {
        let p = Path::new("x.csv");
        assert!(parse_snapshot("a,b\n", 2, p).is_err());
        let bad = "bag_id,instance_id,class_label,f0\n0,1,5,0.5\n";
        assert!(parse_snapshot(bad, 2, p)
            .unwrap_err()
            .to_string()
            .contains("class_label"));
        let nan = "bag_id,instance_id,class_label,f0\n0,1,0,NaN\n";
        assert!(parse_snapshot(nan, 2, p).is_err());
    }
}
