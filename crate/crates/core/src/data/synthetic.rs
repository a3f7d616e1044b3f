//! Seeded synthetic datasets whose labels depend on a chosen input path.
//!
//! - `history_determined`: label = perm(last history id); frames are noise.
//! - `rgb_cluster_determined`: label = Gaussian cluster of the RGB vector;
//!   history is uniform noise.
//! - `mixed`: label = (perm(last history id) + rgb cluster) mod C.
//!
//! Labels are balanced (round-robin) and the 80/20 split is stratified by
//! class, so every class with at least two samples lands in both splits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ClassTextTable, Dataset, DatasetMeta, DepthSource, EmbeddingRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    HistoryDetermined,
    RgbClusterDetermined,
    Mixed,
}

fn one() -> usize {
    1
}

fn default_delta() -> u32 {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub d_ft: usize,
    pub d_txt: usize,
    #[serde(alias = "N")]
    pub history_len: usize,
    pub n_samples: usize,
    pub label_rule: LabelRule,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Frames per sample (the window length for video-mode data).
    #[serde(default = "one")]
    pub frames: usize,
    /// Also emit a per-sample description embedding.
    #[serde(default)]
    pub with_description: bool,
    #[serde(default = "default_delta")]
    pub delta_ms: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 5,
            d_ft: 16,
            d_txt: 16,
            history_len: 2,
            n_samples: 500,
            label_rule: LabelRule::HistoryDetermined,
            noise_sigma: 0.0,
            seed: 0,
            frames: 1,
            with_description: false,
            delta_ms: 1000,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_classes == 0 || self.d_ft == 0 || self.d_txt == 0 || self.frames == 0 {
            return bad("n_classes, d_ft, d_txt and frames must be positive".into());
        }
        if self.n_samples < self.n_classes {
            return bad(format!(
                "n_samples ({}) must be at least n_classes ({})",
                self.n_samples, self.n_classes
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if self.history_len == 0 && self.label_rule != LabelRule::RgbClusterDetermined {
            return bad("history-dependent label rules need history_len >= 1".into());
        }
        Ok(())
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            d_ft: self.d_ft,
            d_txt: self.d_txt,
            n_classes: self.n_classes,
            history_len: self.history_len,
            frames: self.frames,
            delta_ms: self.delta_ms,
            depth_source: DepthSource::Estimated,
            has_description: self.with_description,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Returns `(train, val, class table)`; identical specs give identical output.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset, ClassTextTable)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.n_classes;

    let mut perm: Vec<usize> = (0..c).collect();
    perm.shuffle(&mut rng);
    let mut inv = vec![0; c];
    for (h, &l) in perm.iter().enumerate() {
        inv[l] = h;
    }

    let table_rows: Vec<Vec<f64>> = (0..c)
        .map(|_| unit(gaussian(&mut rng, spec.d_txt, 1.0)))
        .collect();
    let table = ClassTextTable::new(
        spec.d_txt,
        table_rows.iter().flatten().map(|&v| v as f32).collect(),
        (0..c).map(|i| format!("action_{i}")).collect(),
    )?;
    let centroids: Vec<Vec<f64>> = (0..c).map(|_| gaussian(&mut rng, spec.d_ft, 1.0)).collect();

    let n_hist = spec.history_len;
    let mut records = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let target = i % c;
        let mut history: Vec<i32> = (0..n_hist).map(|_| rng.gen_range(0..c) as i32).collect();
        let (label, cluster) = match spec.label_rule {
            LabelRule::HistoryDetermined => {
                history[n_hist - 1] = inv[target] as i32;
                (target, None)
            }
            LabelRule::RgbClusterDetermined => (target, Some(target)),
            LabelRule::Mixed => {
                let cluster = rng.gen_range(0..c);
                history[n_hist - 1] = inv[(target + c - cluster) % c] as i32;
                (target, Some(cluster))
            }
        };
        let frame_block = |rng: &mut ChaCha8Rng, centre: Option<usize>| -> Vec<f32> {
            (0..spec.frames)
                .flat_map(|_| match centre {
                    Some(k) => centroids[k]
                        .iter()
                        .zip(gaussian(rng, spec.d_ft, spec.noise_sigma))
                        .map(|(m, e)| (m + e) as f32)
                        .collect::<Vec<_>>(),
                    None => gaussian(rng, spec.d_ft, 1.0)
                        .into_iter()
                        .map(|v| v as f32)
                        .collect(),
                })
                .collect()
        };
        let rgb = frame_block(&mut rng, cluster);
        let depth = frame_block(&mut rng, None);
        let desc_embedding = spec.with_description.then(|| {
            // Later actions weigh more, so the last id dominates.
            let mut acc = vec![0.0; spec.d_txt];
            for (j, &h) in history.iter().enumerate() {
                let w = (j + 1) as f64 / n_hist as f64;
                for (a, &e) in acc.iter_mut().zip(&table_rows[h as usize]) {
                    *a += w * e;
                }
            }
            unit(acc).into_iter().map(|v| v as f32).collect()
        });
        records.push(EmbeddingRecord {
            sample_id: i as u64,
            label,
            history,
            rgb,
            depth,
            desc_embedding,
        });
    }

    let mut by_class: Vec<Vec<EmbeddingRecord>> = vec![Vec::new(); c];
    for r in records {
        by_class[r.label].push(r);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for mut group in by_class {
        group.shuffle(&mut rng);
        let n_train = if group.len() >= 2 {
            ((group.len() as f64 * 0.8).round() as usize).clamp(1, group.len() - 1)
        } else {
            group.len()
        };
        val.extend(group.split_off(n_train));
        train.extend(group);
    }
    train.shuffle(&mut rng);
    val.shuffle(&mut rng);

    let meta = spec.meta();
    Ok((
        Dataset {
            meta: meta.clone(),
            records: train,
        },
        Dataset { meta, records: val },
        table,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_seed_same_bytes() {
        let spec = SyntheticSpec {
            with_description: true,
            ..Default::default()
        };
        let (a, b, t) = generate_synthetic(&spec).unwrap();
        let (a2, b2, t2) = generate_synthetic(&spec).unwrap();
        assert_eq!(
            crate::data::encode_aagf(&a).unwrap(),
            crate::data::encode_aagf(&a2).unwrap()
        );
        assert_eq!(
            crate::data::encode_aagf(&b).unwrap(),
            crate::data::encode_aagf(&b2).unwrap()
        );
        assert_eq!(t, t2);
        assert_eq!(a.len() + b.len(), 500);
        assert_eq!(b.len(), 100);
    }

    #[test]
    fn history_rule_is_a_function_of_the_last_id() {
        let (train, val, _) = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let mut map = std::collections::HashMap::new();
        for r in train.records.iter().chain(&val.records) {
            let last = *r.history.last().unwrap();
            assert_eq!(*map.entry(last).or_insert(r.label), r.label);
        }
        assert_eq!(map.len(), 5);
    }

    /// Nearest-centroid oracle: centroids estimated on train, scored on val.
    #[test]
    fn clusters_are_separable_by_nearest_centroid() {
        let spec = SyntheticSpec {
            label_rule: LabelRule::RgbClusterDetermined,
            noise_sigma: 0.1,
            ..Default::default()
        };
        let (train, val, _) = generate_synthetic(&spec).unwrap();
        let d = spec.d_ft;
        let mut sums = vec![vec![0.0f64; d]; 5];
        let mut counts = [0usize; 5];
        for r in &train.records {
            counts[r.label] += 1;
            for (s, &v) in sums[r.label].iter_mut().zip(&r.rgb) {
                *s += v as f64;
            }
        }
        let hits = val
            .records
            .iter()
            .filter(|r| {
                let best = (0..5)
                    .min_by(|&a, &b| {
                        let dist = |k: usize| -> f64 {
                            r.rgb
                                .iter()
                                .zip(&sums[k])
                                .map(|(&x, s)| (x as f64 - s / counts[k] as f64).powi(2))
                                .sum()
                        };
                        dist(a).total_cmp(&dist(b))
                    })
                    .unwrap();
                best == r.label
            })
            .count();
        assert!(hits as f64 / val.len() as f64 > 0.99, "{hits}/{}", val.len());
    }

    #[test]
    fn invalid_specs_rejected() {
        let spec = SyntheticSpec {
            n_samples: 3,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
        let spec = SyntheticSpec {
            noise_sigma: -1.0,
            ..Default::default()
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn spec_json_rejects_unknown_keys_and_accepts_n_alias() {
        let ok = r#"{"n_classes":3,"d_ft":4,"d_txt":4,"N":2,"n_samples":30,
            "label_rule":"mixed","noise_sigma":0.1,"seed":1}"#;
        let s: SyntheticSpec = serde_json::from_str(ok).unwrap();
        assert_eq!(s.history_len, 2);
        let bad = ok.replace("\"seed\":1", "\"seed\":1,\"sede\":2");
        assert!(serde_json::from_str::<SyntheticSpec>(&bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn every_class_present_in_train(seed in any::<u64>(), c in 2usize..8, mult in 10usize..14, rule in 0..3) {
            let spec = SyntheticSpec {
                n_classes: c,
                n_samples: c * mult,
                seed,
                d_ft: 4,
                d_txt: 4,
                label_rule: [LabelRule::HistoryDetermined, LabelRule::RgbClusterDetermined, LabelRule::Mixed][rule as usize],
                ..Default::default()
            };
            let (train, _, _) = generate_synthetic(&spec).unwrap();
            let mut seen = vec![false; c];
            for r in &train.records {
                seen[r.label] = true;
            }
            prop_assert!(seen.iter().all(|&s| s));
        }
    }
}
