//! Top-k accuracy and class-mean top-5 recall.
//!
//! Ranking ties are broken by ascending class index, so the metrics are
//! deterministic and depend only on the order of logits within a row.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Position of `label` in the row's descending order (0 = top).
pub fn rank_of<T: Scalar>(row: &[T], label: usize) -> usize {
    let x = row[label];
    row.iter()
        .enumerate()
        .filter(|&(c, &v)| v > x || (v == x && c < label))
        .count()
}

fn check<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(usize, usize)> {
    let (b, c) = logits.require_matrix("metrics")?;
    if b == 0 {
        return Err(Error::Usage("metrics over an empty evaluation set".into()));
    }
    if labels.len() != b {
        return Err(Error::Shape(format!(
            "{b} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
        return Err(Error::Data(format!("sample {i}: label {l} outside [0, {c})")));
    }
    Ok((b, c))
}

fn clamp_k(k: usize, c: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::Usage("top-k needs k >= 1".into()));
    }
    if k > c {
        log::warn!("top-{k} requested with {c} classes; clamping k to {c}");
    }
    Ok(k.min(c))
}

pub fn top_k_accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize], k: usize) -> Result<f64> {
    let (b, c) = check(logits, labels)?;
    let k = clamp_k(k, c)?;
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| rank_of(logits.row(i), l) < k)
        .count();
    Ok(hits as f64 / b as f64)
}

/// Unweighted mean over present classes of per-class top-k recall.
pub fn class_mean_recall<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    k: usize,
) -> Result<(f64, BTreeMap<usize, f64>)> {
    let (_, c) = check(logits, labels)?;
    let k = clamp_k(k, c)?;
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        let e = counts.entry(l).or_default();
        e.1 += 1;
        if rank_of(logits.row(i), l) < k {
            e.0 += 1;
        }
    }
    let per_class: BTreeMap<usize, f64> = counts
        .into_iter()
        .map(|(cls, (hit, n))| (cls, hit as f64 / n as f64))
        .collect();
    let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok((mean, per_class))
}

pub fn class_mean_top5_recall<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, BTreeMap<usize, f64>)> {
    class_mean_recall(logits, labels, 5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub top1: f64,
    pub top5: f64,
    pub class_mean_top5_recall: f64,
    pub per_class_recall: BTreeMap<usize, f64>,
    pub n_samples: usize,
    pub n_classes_present: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// Picks the format from a path's extension (`.csv` → CSV, otherwise JSON).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

impl MetricsReport {
    pub fn compute<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Self> {
        let top1 = top_k_accuracy(logits, labels, 1)?;
        let top5 = top_k_accuracy(logits, labels, 5)?;
        let (class_mean_top5_recall, per_class_recall) = class_mean_top5_recall(logits, labels)?;
        Ok(Self {
            top1,
            top5,
            class_mean_top5_recall,
            n_classes_present: per_class_recall.len(),
            per_class_recall,
            n_samples: labels.len(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "top1,{}", self.top1);
        let _ = writeln!(s, "top5,{}", self.top5);
        let _ = writeln!(s, "class_mean_top5_recall,{}", self.class_mean_top5_recall);
        for (c, r) in &self.per_class_recall {
            let _ = writeln!(s, "recall_class_{c},{r}");
        }
        s
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => Ok(self.to_csv()),
        }
    }
}

pub fn emit_report(report: &MetricsReport, format: ReportFormat, path: &Path) -> Result<()> {
    write_atomic(path, report.render(format)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle: stable sort of class indices by descending logit.
    fn oracle_topk(row: &[f64], label: usize, k: usize) -> bool {
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
        idx[..k.min(row.len())].contains(&label)
    }

    fn oracle_class_mean(rows: &[Vec<f64>], labels: &[usize]) -> f64 {
        let classes: std::collections::BTreeSet<_> = labels.iter().copied().collect();
        let mut total = 0.0;
        for &c in &classes {
            let members: Vec<_> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let hits = members.iter().filter(|&&i| oracle_topk(&rows[i], c, 5)).count();
            total += hits as f64 / members.len() as f64;
        }
        total / classes.len() as f64
    }

    fn tensor(rows: &[Vec<f64>]) -> Tensor<f64> {
        let c = rows[0].len();
        Tensor::matrix(rows.len(), c, rows.concat()).unwrap()
    }

    #[test]
    fn hand_cases() {
        let t = tensor(&[vec![0.1, 0.5, 0.4]]);
        assert_eq!(top_k_accuracy(&t, &[1], 1).unwrap(), 1.0);
        let tie = tensor(&[vec![0.3, 0.3, 0.3]]);
        assert_eq!(top_k_accuracy(&tie, &[0], 1).unwrap(), 1.0);
        assert_eq!(top_k_accuracy(&tie, &[1], 1).unwrap(), 0.0);
        assert!(matches!(top_k_accuracy(&t, &[1], 0), Err(Error::Usage(_))));
        let empty = Tensor::<f64>::zeros(&[0, 3]);
        assert!(matches!(top_k_accuracy(&empty, &[], 1), Err(Error::Usage(_))));
    }

    /// Class A has two samples, both hits; class B has one sample, a miss.
    #[test]
    fn hand_enumerated_class_mean() {
        let mut rows = Vec::new();
        for _ in 0..2 {
            let mut r = vec![0.0; 7];
            r[0] = 1.0;
            rows.push(r);
        }
        // Class 1 ranks 6th out of 7.
        rows.push(vec![5.0, -1.0, 4.0, 3.0, 2.0, 1.0, 0.0]);
        let (mean, per) = class_mean_top5_recall(&tensor(&rows), &[0, 0, 1]).unwrap();
        assert_eq!(per[&0], 1.0);
        assert_eq!(per[&1], 0.0);
        assert_eq!(mean, 0.5);
    }

    #[test]
    fn balanced_and_single_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..9).map(|_| rng.gen()).collect()).collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 8).collect();
        let t = tensor(&rows);
        let (mean, _) = class_mean_top5_recall(&t, &labels).unwrap();
        assert!((mean - top_k_accuracy(&t, &labels, 5).unwrap()).abs() < 1e-12);

        let one = vec![2; 40];
        let (mean, per) = class_mean_top5_recall(&t, &one).unwrap();
        assert_eq!(per.len(), 1);
        assert_eq!(mean, per[&2]);
    }

    #[test]
    fn k_at_least_classes_is_perfect() {
        let t = tensor(&[vec![0.1, 0.9, 0.2], vec![3.0, 1.0, 2.0]]);
        assert_eq!(top_k_accuracy(&t, &[0, 1], 5).unwrap(), 1.0);
        assert_eq!(top_k_accuracy(&t, &[0, 1], 3).unwrap(), 1.0);
    }

    #[test]
    fn oracle_equivalence_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let b = rng.gen_range(1..=50);
            let c = rng.gen_range(1..=20);
            // Coarse integer logits make ties frequent.
            let rows: Vec<Vec<f64>> = (0..b)
                .map(|_| (0..c).map(|_| rng.gen_range(0..5) as f64).collect())
                .collect();
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
            let t = tensor(&rows);
            for k in [1, 3, 5] {
                let hits = (0..b).filter(|&i| oracle_topk(&rows[i], labels[i], k)).count();
                assert_eq!(top_k_accuracy(&t, &labels, k).unwrap(), hits as f64 / b as f64);
            }
            let (mean, _) = class_mean_top5_recall(&t, &labels).unwrap();
            assert_eq!(mean, oracle_class_mean(&rows, &labels));
        }
    }

    #[test]
    fn report_emission() {
        let t = tensor(&[vec![0.1, 0.9, 0.2], vec![3.0, 1.0, 2.0], vec![0.0, 0.0, 1.0]]);
        let r = MetricsReport::compute(&t, &[1, 2, 2]).unwrap();
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(json["top1"].as_f64().unwrap(), r.top1);
        assert_eq!(
            json["per_class_recall"]["2"].as_f64().unwrap(),
            r.per_class_recall[&2]
        );
        let back: MetricsReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.to_csv().lines().count(), 4 + r.n_classes_present);
        assert!(r.to_csv().contains("recall_class_1,1\n"));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        emit_report(&r, ReportFormat::from_path(&p), &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), r.to_csv());
    }

    proptest! {
        #[test]
        fn monotone_in_k_and_rank_invariant(
            seed in any::<u64>(),
            b in 1usize..30,
            c in 1usize..12,
            scale in 0.01f64..100.0,
            shift in -50.0f64..50.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..b).map(|_| (0..c).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
            let t = tensor(&rows);
            let mut prev = 0.0;
            for k in 1..=c {
                let a = top_k_accuracy(&t, &labels, k).unwrap();
                prop_assert!(a >= prev);
                prev = a;
            }
            prop_assert_eq!(prev, 1.0);

            let base = MetricsReport::compute(&t, &labels).unwrap();
            let scaled = tensor(&rows.iter().map(|r| r.iter().map(|v| v * scale + shift).collect()).collect::<Vec<_>>());
            // Affine maps can merge nearly-equal logits in floating point; only
            // compare when the ordering is provably untouched.
            let same_order = rows.iter().zip(scaled.data().chunks(c)).all(|(r, s)| {
                (0..c).all(|i| (0..c).all(|j| (r[i] < r[j]) == (s[i] < s[j]) && (r[i] == r[j]) == (s[i] == s[j])))
            });
            if same_order {
                prop_assert_eq!(MetricsReport::compute(&scaled, &labels).unwrap(), base.clone());
            }

            let mut order: Vec<usize> = (0..b).collect();
            order.reverse();
            let perm_rows: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
            let perm_labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
            let p = MetricsReport::compute(&tensor(&perm_rows), &perm_labels).unwrap();
            prop_assert_eq!(p.top1, base.top1);
            prop_assert_eq!(p.top5, base.top5);
            prop_assert_eq!(p.per_class_recall, base.per_class_recall);
        }
    }
}
