//! Classifier evaluation: confusion matrix, per-class precision/recall/F1,
//! and stratified k-fold cross-validation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LadriError, Result};
use crate::hara::{Stage, STAGE_COUNT};
use crate::model::{predict, train, NetworkSpec, Sample, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Standard multi-class metrics; 0/0 ratios resolve to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    /// Rows are true stages, columns predicted stages.
    pub confusion: Vec<Vec<usize>>,
    /// Seconds per frame, when the caller measured it.
    pub mean_inference_latency: Option<f64>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Computes metrics from aligned prediction/label sequences.
pub fn evaluate(preds: &[Stage], labels: &[Stage], mean_inference_latency: Option<f64>) -> Result<Metrics> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(LadriError::Data(format!(
            "need equal non-zero lengths, got {} predictions and {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0usize; STAGE_COUNT]; STAGE_COUNT];
    for (&p, &y) in preds.iter().zip(labels) {
        confusion[y.index()][p.index()] += 1;
    }
    let total = preds.len();
    let diagonal: usize = (0..STAGE_COUNT).map(|i| confusion[i][i]).sum();
    let per_class: Vec<ClassMetrics> = (0..STAGE_COUNT)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let predicted: usize = (0..STAGE_COUNT).map(|r| confusion[r][c]).sum();
            let actual: usize = confusion[c].iter().sum();
            let precision = ratio(tp, predicted as f64);
            let recall = ratio(tp, actual as f64);
            let f1 = ratio(2.0 * precision * recall, precision + recall);
            ClassMetrics {
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / STAGE_COUNT as f64;
    Ok(Metrics {
        accuracy: diagonal as f64 / total as f64,
        per_class,
        macro_f1,
        confusion,
        mean_inference_latency,
    })
}

/// Stratified fold assignment: per class, shuffled indices are dealt
/// round-robin, so every fold's class proportions match the global ones
/// within one sample per class.
pub fn stratified_folds(stages: &[Stage], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(LadriError::Data(format!("k must be >= 2, got {k}")));
    }
    if stages.len() < k {
        return Err(LadriError::Data(format!(
            "need at least {k} rows for {k} folds, got {}",
            stages.len()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); STAGE_COUNT];
    for (i, stage) in stages.iter().enumerate() {
        by_class[stage.index()].push(i);
    }
    for (class, indices) in by_class.iter().enumerate() {
        if indices.len() < k {
            return Err(LadriError::Stratify {
                class,
                count: indices.len(),
                needed: k,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for indices in &mut by_class {
        shuffle(indices, &mut rng);
        for (pos, &row) in indices.iter().enumerate() {
            folds[pos % k].push(row);
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
}

/// Per-fold metrics plus the mean/std summary (population std over folds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: Vec<Metrics>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Stratified k-fold cross-validation. Each fold trains an independent model
/// seeded `config.seed + fold_index` on the remaining rows and is evaluated
/// on the held-out fold.
pub fn cross_validate(
    spec: &NetworkSpec,
    config: &TrainConfig,
    rows: &[Sample],
    k: usize,
) -> Result<CvSummary> {
    let stages: Vec<Stage> = rows.iter().map(|r| r.stage).collect();
    let folds = stratified_folds(&stages, k, config.seed)?;
    let mut fold_metrics = Vec::with_capacity(k);
    for (fold_index, fold) in folds.iter().enumerate() {
        let in_fold: std::collections::HashSet<usize> = fold.iter().copied().collect();
        let train_rows: Vec<Sample> = rows
            .iter()
            .enumerate()
            .filter(|(i, _)| !in_fold.contains(i))
            .map(|(_, r)| *r)
            .collect();
        let held_out: Vec<Sample> = fold.iter().map(|&i| rows[i]).collect();
        let fold_config = TrainConfig {
            seed: config.seed + fold_index as u64,
            ..config.clone()
        };
        let (model, _) = train(spec, &fold_config, &train_rows, &held_out)?;
        let preds: Vec<Stage> = held_out
            .iter()
            .map(|r| predict(&model, &r.features))
            .collect::<Result<_>>()?;
        let labels: Vec<Stage> = held_out.iter().map(|r| r.stage).collect();
        fold_metrics.push(evaluate(&preds, &labels, None)?);
    }
    let accuracies: Vec<f64> = fold_metrics.iter().map(|m| m.accuracy).collect();
    let f1s: Vec<f64> = fold_metrics.iter().map(|m| m.macro_f1).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accuracies);
    let (mean_macro_f1, std_macro_f1) = mean_std(&f1s);
    Ok(CvSummary {
        folds: fold_metrics,
        mean_accuracy,
        std_accuracy,
        mean_macro_f1,
        std_macro_f1,
    })
}
