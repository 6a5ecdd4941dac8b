//! Batch composition from mixture proportions, and the held-out reference
//! split used for scheduling decisions.

use std::collections::HashSet;
use std::io::Write;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::MixtureProportions;
use crate::rng::{SeededRng, WeightedIndex};

/// Reference samples per task when not configured otherwise.
pub const DEFAULT_REFERENCE_SIZE: usize = 10;

pub type SampleId = u64;

/// The sample identifiers belonging to one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDataset {
    task_id: usize,
    samples: Vec<SampleId>,
}

impl TaskDataset {
    pub fn new(task_id: usize, samples: Vec<SampleId>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(*s) {
                return Err(Error::invalid(format!(
                    "sample {s} appears twice in task {task_id}"
                )));
            }
        }
        Ok(Self { task_id, samples })
    }

    /// Task `task_id` with samples `0..n`.
    pub fn with_count(task_id: usize, n: usize) -> Self {
        Self {
            task_id,
            samples: (0..n as u64).collect(),
        }
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn samples(&self) -> &[SampleId] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// Task counts drawn multinomially; samples with replacement.
    #[default]
    Multinomial,
    /// Largest-remainder task counts; samples without replacement.
    Quota,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub task_id: usize,
    pub sample_id: SampleId,
}

/// One training batch as a list of (task, sample) draws.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    entries: Vec<BatchEntry>,
}

impl BatchPlan {
    pub fn entries(&self) -> &[BatchEntry] {
        &self.entries
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    /// Number of entries per task index `0..k`.
    pub fn task_counts(&self, k: usize) -> Vec<usize> {
        let mut counts = vec![0; k];
        for e in &self.entries {
            if e.task_id < k {
                counts[e.task_id] += 1;
            }
        }
        counts
    }

    /// Appends `iteration,task_id,sample_id` rows (no header).
    pub fn write_csv_rows<W: Write>(&self, iteration: u64, out: &mut W) -> std::io::Result<()> {
        for e in &self.entries {
            writeln!(out, "{iteration},{},{}", e.task_id, e.sample_id)?;
        }
        Ok(())
    }

    pub const CSV_HEADER: &'static str = "iteration,task_id,sample_id";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train: Vec<TaskDataset>,
    pub reference: Vec<TaskDataset>,
}

/// Largest-remainder apportionment of `total` seats by `weights`; ties on
/// the remainder go to the lower index.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    // Over-assignment can only come from rounding in w * total; trim from
    // the smallest remainders.
    if assigned > total {
        let mut excess = assigned - total;
        for &i in order.iter().rev() {
            if excess == 0 {
                break;
            }
            if counts[i] > 0 {
                counts[i] -= 1;
                excess -= 1;
            }
        }
    } else {
        for &i in order.iter().take(total - assigned) {
            if weights[i] > 0.0 {
                counts[i] += 1;
            } else if let Some(j) = order.iter().find(|&&j| weights[j] > 0.0) {
                counts[*j] += 1;
            }
        }
    }
    counts
}

/// Draws `count` distinct positions of `0..n` by a partial Fisher-Yates
/// shuffle, in draw order.
fn choose_distinct(rng: &mut SeededRng, n: usize, count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = i + rng.below_usize(n - i);
        idx.swap(i, j);
    }
    idx.truncate(count);
    idx
}

/// Samples one batch from the mixture over `datasets`.
///
/// `datasets[i]` supplies the samples for task index `i`. The same seed and
/// inputs always produce the same plan.
pub fn compose_batch(
    datasets: &[TaskDataset],
    lambda: &MixtureProportions,
    batch_size: usize,
    seed: u64,
    mode: BatchMode,
) -> Result<BatchPlan> {
    if datasets.len() != lambda.len() {
        return Err(Error::invalid(format!(
            "{} datasets for a {}-task mixture",
            datasets.len(),
            lambda.len()
        )));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    if let Some(d) = datasets.iter().find(|d| d.is_empty()) {
        return Err(Error::invalid(format!("dataset for task {} is empty", d.task_id())));
    }

    let mut rng = SeededRng::new(seed);
    let mut entries = Vec::with_capacity(batch_size);
    match mode {
        BatchMode::Multinomial => {
            let picker = WeightedIndex::new(lambda.weights())
                .ok_or_else(|| Error::invalid("mixture has no positive weight"))?;
            for _ in 0..batch_size {
                let t = picker.sample(&mut rng);
                let ds = &datasets[t];
                let s = ds.samples()[rng.below_usize(ds.len())];
                entries.push(BatchEntry {
                    task_id: ds.task_id(),
                    sample_id: s,
                });
            }
        }
        BatchMode::Quota => {
            let counts = apportion(batch_size, lambda.weights());
            for (ds, &c) in datasets.iter().zip(&counts) {
                if c <= ds.len() {
                    for i in choose_distinct(&mut rng, ds.len(), c) {
                        entries.push(BatchEntry {
                            task_id: ds.task_id(),
                            sample_id: ds.samples()[i],
                        });
                    }
                } else {
                    for _ in 0..c {
                        entries.push(BatchEntry {
                            task_id: ds.task_id(),
                            sample_id: ds.samples()[rng.below_usize(ds.len())],
                        });
                    }
                }
            }
        }
    }
    Ok(BatchPlan { entries })
}

/// Moves `m` uniformly chosen samples of every task into a reference set.
///
/// The remaining samples keep their original order in `train`.
pub fn split_reference(datasets: &[TaskDataset], m: usize, seed: u64) -> Result<SplitResult> {
    if m == 0 {
        return Err(Error::invalid("reference size m must be >= 1"));
    }
    if let Some(d) = datasets.iter().find(|d| d.len() <= m) {
        return Err(Error::invalid(format!(
            "task {} has {} samples; need more than m = {m} for a reference split",
            d.task_id(),
            d.len()
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut train = Vec::with_capacity(datasets.len());
    let mut reference = Vec::with_capacity(datasets.len());
    for ds in datasets {
        let picked = choose_distinct(&mut rng, ds.len(), m);
        let mut is_ref = vec![false; ds.len()];
        for &i in &picked {
            is_ref[i] = true;
        }
        reference.push(TaskDataset {
            task_id: ds.task_id(),
            samples: picked.iter().map(|&i| ds.samples()[i]).collect(),
        });
        train.push(TaskDataset {
            task_id: ds.task_id(),
            samples: ds
                .samples()
                .iter()
                .zip(&is_ref)
                .filter(|(_, r)| !**r)
                .map(|(s, _)| *s)
                .collect(),
        });
    }
    Ok(SplitResult { train, reference })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tasks(sizes: &[usize]) -> Vec<TaskDataset> {
        sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| TaskDataset::with_count(i, n))
            .collect()
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(TaskDataset::new(0, vec![1, 2, 1]).is_err());
    }

    #[test]
    fn degenerate_mixture_quota() {
        let l = MixtureProportions::new(vec![1.0, 0.0]).unwrap();
        let b = compose_batch(&tasks(&[10, 10]), &l, 8, 1, BatchMode::Quota).unwrap();
        assert_eq!(b.size(), 8);
        assert!(b.entries().iter().all(|e| e.task_id == 0));
    }

    #[test]
    fn quota_three_to_one() {
        let l = MixtureProportions::new(vec![0.75, 0.25]).unwrap();
        let b = compose_batch(&tasks(&[40, 40]), &l, 32, 5, BatchMode::Quota).unwrap();
        assert_eq!(b.task_counts(2), vec![24, 8]);
        // Without replacement when the quota fits.
        let mut ids: Vec<_> = b.entries().iter().filter(|e| e.task_id == 0).map(|e| e.sample_id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 24);
    }

    #[test]
    fn quota_larger_than_task_uses_replacement() {
        let l = MixtureProportions::new(vec![0.5, 0.5]).unwrap();
        let b = compose_batch(&tasks(&[3, 3]), &l, 10, 5, BatchMode::Quota).unwrap();
        assert_eq!(b.task_counts(2), vec![5, 5]);
    }

    #[test]
    fn multinomial_concentration() {
        let l = MixtureProportions::uniform(2).unwrap();
        let n = 100_000;
        let b = compose_batch(&tasks(&[50, 50]), &l, n, 2024, BatchMode::Multinomial).unwrap();
        let c0 = b.task_counts(2)[0] as f64;
        let three_sigma = 3.0 * (n as f64 * 0.25).sqrt();
        assert!((c0 - 50_000.0).abs() <= three_sigma, "count {c0}");
    }

    #[test]
    fn batch_is_deterministic_and_seed_sensitive() {
        let l = MixtureProportions::new(vec![0.2, 0.3, 0.5]).unwrap();
        let ds = tasks(&[7, 9, 11]);
        for mode in [BatchMode::Multinomial, BatchMode::Quota] {
            let a = compose_batch(&ds, &l, 64, 77, mode).unwrap();
            let b = compose_batch(&ds, &l, 64, 77, mode).unwrap();
            let c = compose_batch(&ds, &l, 64, 78, mode).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let l = MixtureProportions::uniform(2).unwrap();
        let ds = vec![TaskDataset::with_count(0, 3), TaskDataset::with_count(1, 0)];
        assert!(compose_batch(&ds, &l, 4, 0, BatchMode::Quota).is_err());
    }

    #[test]
    fn csv_rows() {
        let l = MixtureProportions::new(vec![1.0]).unwrap();
        let b = compose_batch(&tasks(&[1]), &l, 2, 0, BatchMode::Quota).unwrap();
        let mut out = Vec::new();
        b.write_csv_rows(3, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "3,0,0\n3,0,0\n");
    }

    #[test]
    fn split_counts() {
        let split = split_reference(&tasks(&[5, 5, 5]), 2, 9).unwrap();
        let total: usize = split.reference.iter().map(|d| d.len()).sum();
        assert_eq!(total, 6);
        for (tr, rf) in split.train.iter().zip(&split.reference) {
            assert_eq!(rf.len(), 2);
            assert_eq!(tr.len(), 3);
            assert!(rf.samples().iter().all(|s| !tr.samples().contains(s)));
        }
    }

    #[test]
    fn split_needs_more_than_m() {
        let err = split_reference(&tasks(&[20, 10]), 10, 0).unwrap_err();
        assert!(err.to_string().contains("task 1"), "{err}");
        assert!(split_reference(&tasks(&[20, 11]), DEFAULT_REFERENCE_SIZE, 0).is_ok());
    }

    proptest! {
        #[test]
        fn quota_counts_are_exact(
            raw in prop::collection::vec(0.0f64..1.0, 1..8),
            batch in 1usize..500,
        ) {
            let s: f64 = raw.iter().sum();
            prop_assume!(s > 1e-6);
            let w: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let counts = apportion(batch, &w);
            prop_assert_eq!(counts.iter().sum::<usize>(), batch);
            for (c, wi) in counts.iter().zip(&w) {
                prop_assert!((*c as f64 - batch as f64 * wi).abs() < 1.0);
            }
        }

        #[test]
        fn split_is_disjoint_and_deterministic(
            sizes in prop::collection::vec(4usize..30, 1..5),
            m in 1usize..4,
            seed in any::<u64>(),
        ) {
            let ds = tasks(&sizes);
            let a = split_reference(&ds, m, seed).unwrap();
            prop_assert_eq!(&a, &split_reference(&ds, m, seed).unwrap());
            for ((tr, rf), orig) in a.train.iter().zip(&a.reference).zip(&ds) {
                let t: HashSet<_> = tr.samples().iter().collect();
                let r: HashSet<_> = rf.samples().iter().collect();
                prop_assert!(t.is_disjoint(&r));
                prop_assert_eq!(rf.len(), m);
                prop_assert_eq!(t.len() + r.len(), orig.len());
            }
        }
    }
}
