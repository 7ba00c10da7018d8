//! Metrics, chunk/admission scoring modes, the zero-shot protocol and PCA.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{extended_class_map, ChunkSet};
use crate::error::{Error, Result};
use crate::mtmodel::{predict_proba, task_embedding, Model};
use crate::numcore::Graph;
use crate::synthdata::{AdmissionRecord, Holdout};
use crate::taskcond::TaskSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    /// Elementwise max, renormalized to sum to one.
    Max,
}

/// Collapses one admission's chunk predictions into a single distribution.
pub fn aggregate(chunk_probs: &[Vec<f64>]) -> Result<Vec<f64>> {
    aggregate_with(chunk_probs, Aggregation::Mean)
}

pub fn aggregate_with(chunk_probs: &[Vec<f64>], how: Aggregation) -> Result<Vec<f64>> {
    let first = chunk_probs
        .first()
        .ok_or_else(|| Error::InvalidArgument("aggregate of zero chunks".into()))?;
    let m = first.len();
    if chunk_probs.iter().any(|p| p.len() != m) {
        return Err(Error::dim("aggregate", "chunk vectors differ in length"));
    }
    if chunk_probs.len() == 1 {
        return Ok(first.clone());
    }
    match how {
        Aggregation::Mean => {
            // Running mean: exact when every chunk agrees.
            let mut mean = first.clone();
            for (k, p) in chunk_probs.iter().enumerate().skip(1) {
                for (acc, &x) in mean.iter_mut().zip(p) {
                    *acc += (x - *acc) / (k + 1) as f64;
                }
            }
            Ok(mean)
        }
        Aggregation::Max => {
            let max: Vec<f64> = (0..m)
                .map(|j| chunk_probs.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let total: f64 = max.iter().sum();
            Ok(max.into_iter().map(|v| v / total).collect())
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mann-Whitney AUC with mid-ranks for ties.
pub fn auc_roc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim("auc_roc_binary", "scores and labels differ in length"));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite score {s}")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(
            "AUC is undefined unless both classes are present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        pos_rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicroScores {
    pub micro_f1: f64,
    pub micro_auc: f64,
}

/// Micro-averaged F1 and AUC over pooled one-vs-rest decisions.
pub fn micro_scores(probs: &[Vec<f64>], gold: &[usize]) -> Result<MicroScores> {
    check_gold(probs, gold)?;
    let m = probs[0].len();
    // Pooled one-vs-rest counts: every wrong argmax is one FP and one FN.
    let tp = probs.iter().zip(gold).filter(|(p, &g)| argmax(p) == g).count() as f64;
    let fp = probs.len() as f64 - tp;
    let fn_ = fp;
    let micro_f1 = 2.0 * tp / (2.0 * tp + fp + fn_);
    let mut scores = Vec::with_capacity(probs.len() * m);
    let mut labels = Vec::with_capacity(probs.len() * m);
    for (p, &g) in probs.iter().zip(gold) {
        for (c, &s) in p.iter().enumerate() {
            scores.push(s);
            labels.push(c == g);
        }
    }
    Ok(MicroScores {
        micro_f1,
        micro_auc: auc_roc_binary(&scores, &labels)?,
    })
}

fn check_gold(probs: &[Vec<f64>], gold: &[usize]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    if probs.len() != gold.len() {
        return Err(Error::dim("metrics", "predictions and gold differ in length"));
    }
    let m = probs[0].len();
    if probs.iter().any(|p| p.len() != m) {
        return Err(Error::dim("metrics", "prediction vectors differ in length"));
    }
    if let Some(&g) = gold.iter().find(|&&g| g >= m) {
        return Err(Error::InvalidArgument(format!(
            "gold class {g} out of range for {m} classes"
        )));
    }
    Ok(())
}

/// Per-class F1 averaged with class-support weights.
pub fn weighted_f1(preds: &[usize], gold: &[usize]) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::InvalidArgument("weighted F1 of empty gold".into()));
    }
    if preds.len() != gold.len() {
        return Err(Error::dim("weighted_f1", "predictions and gold differ in length"));
    }
    let m = preds.iter().chain(gold).max().copied().unwrap_or(0) + 1;
    let mut total = 0.0;
    for c in 0..m {
        let support = gold.iter().filter(|&&g| g == c).count();
        if support == 0 {
            continue;
        }
        let tp = preds.iter().zip(gold).filter(|(&p, &g)| p == c && g == c).count() as f64;
        let predicted = preds.iter().filter(|&&p| p == c).count() as f64;
        let f1 = 2.0 * tp / (predicted + support as f64);
        total += f1 * support as f64;
    }
    Ok(total / gold.len() as f64)
}

/// Scoring granularity: per chunk or per aggregated admission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Progressive,
    Ultimate,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Progressive => "progressive",
            Mode::Ultimate => "ultimate",
        }
    }
}

/// One admission's predictions: `chunks[task][chunk][class]` and the
/// aggregated `aggregated[task][class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub admission_id: String,
    pub chunks: Vec<Vec<Vec<f64>>>,
    pub aggregated: Vec<Vec<f64>>,
}

/// Groups chunk-level predictions `probs[task][chunk][class]` by admission.
pub fn prediction_sets(probs: &[Vec<Vec<f64>>], set: &ChunkSet, how: Aggregation) -> Result<Vec<PredictionSet>> {
    if probs.iter().any(|p| p.len() != set.len()) {
        return Err(Error::dim("prediction_sets", "one prediction per chunk required"));
    }
    let mut by_adm: Vec<Vec<usize>> = vec![Vec::new(); set.num_admissions()];
    for (i, &a) in set.admission.iter().enumerate() {
        by_adm[a].push(i);
    }
    by_adm
        .into_iter()
        .zip(&set.admission_ids)
        .map(|(idx, id)| {
            let chunks: Vec<Vec<Vec<f64>>> = probs
                .iter()
                .map(|task| idx.iter().map(|&i| task[i].clone()).collect())
                .collect();
            let aggregated = chunks
                .iter()
                .map(|c| aggregate_with(c, how))
                .collect::<Result<Vec<_>>>()?;
            Ok(PredictionSet {
                admission_id: id.clone(),
                chunks,
                aggregated,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub task: String,
    pub mode: Mode,
    pub f1: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    /// Per-task rows followed by one `average` row per mode.
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn get(&self, task: &str, mode: Mode) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.task == task && r.mode == mode)
    }
}

pub const AVERAGE: &str = "average";

/// Binary tasks use weighted F1 and positive-class AUC; others use micro scores.
pub fn task_scores(probs: &[Vec<f64>], gold: &[usize]) -> Result<(f64, f64)> {
    check_gold(probs, gold)?;
    if probs[0].len() == 2 {
        let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        let labels: Vec<bool> = gold.iter().map(|&g| g == 1).collect();
        Ok((weighted_f1(&preds, gold)?, auc_roc_binary(&scores, &labels)?))
    } else {
        let s = micro_scores(probs, gold)?;
        Ok((s.micro_f1, s.micro_auc))
    }
}

/// Scores chunk predictions `probs[task][chunk][class]` against `set`.
pub fn evaluate_predictions(
    probs: &[Vec<Vec<f64>>],
    set: &ChunkSet,
    tasks: &[TaskSpec],
    modes: &[Mode],
    how: Aggregation,
) -> Result<MetricReport> {
    if probs.len() != tasks.len() || set.gold.len() != tasks.len() {
        return Err(Error::Data("predictions, gold and tasks disagree on task count".into()));
    }
    let sets = prediction_sets(probs, set, how)?;
    let mut report = MetricReport::default();
    for &mode in modes {
        let start = report.rows.len();
        for (t, task) in tasks.iter().enumerate() {
            let (f1, auc) = match mode {
                Mode::Progressive => task_scores(&probs[t], &set.gold[t])?,
                Mode::Ultimate => {
                    let agg: Vec<Vec<f64>> = sets.iter().map(|s| s.aggregated[t].clone()).collect();
                    task_scores(&agg, &set.admission_gold[t])?
                }
            };
            report.rows.push(MetricRow {
                task: task.name.clone(),
                mode,
                f1,
                auc,
            });
        }
        let n = tasks.len() as f64;
        let rows = &report.rows[start..];
        let f1 = rows.iter().map(|r| r.f1).sum::<f64>() / n;
        let auc = rows.iter().map(|r| r.auc).sum::<f64>() / n;
        report.rows.push(MetricRow {
            task: AVERAGE.into(),
            mode,
            f1,
            auc,
        });
    }
    Ok(report)
}

/// Runs the model over `set` and scores every task.
pub fn evaluate(
    model: &Model,
    set: &ChunkSet,
    tasks: &[TaskSpec],
    modes: &[Mode],
    how: Aggregation,
) -> Result<MetricReport> {
    let probs = predict_proba(model, &set.chunk_refs(), tasks)?;
    evaluate_predictions(&probs, set, tasks, modes, how)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub progressive_auc: f64,
    pub ultimate_auc: f64,
    pub admissions: usize,
    pub chunks: usize,
}

/// Pooled one-vs-rest AUC over the unseen-class columns `cols` of
/// full-softmax predictions.
fn unseen_auc(probs: &[Vec<f64>], gold: &[usize], cols: std::ops::Range<usize>) -> Result<f64> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (p, &g) in probs.iter().zip(gold) {
        for c in cols.clone() {
            scores.push(p[c]);
            labels.push(c == g);
        }
    }
    auc_roc_binary(&scores, &labels)
}

/// Extends the holdout task with its held-out label texts and scores the
/// test admissions whose gold class is unseen, restricted to unseen classes.
pub fn zero_shot_eval(
    model: &Model,
    full_task: &TaskSpec,
    holdout: &Holdout,
    test: &[AdmissionRecord],
    how: Aggregation,
) -> Result<ZeroShotReport> {
    if holdout.classes.is_empty() {
        return Err(Error::Data(
            "holdout list is empty; nothing to evaluate zero-shot".into(),
        ));
    }
    if full_task.name != holdout.task {
        return Err(Error::Data(format!(
            "holdout refers to task {:?}, not {:?}",
            holdout.task, full_task.name
        )));
    }
    let trained = &model.tasks[model.task_index(&full_task.name)?];
    let (extra, map) = extended_class_map(full_task, holdout)?;
    let seen = trained.num_classes();
    if seen + extra.len() != full_task.num_classes() {
        return Err(Error::Data(format!(
            "model has {seen} {} classes; task spec minus holdout has {}",
            full_task.name,
            full_task.num_classes() - extra.len()
        )));
    }
    let ext = model.with_extra_classes(&full_task.name, &extra)?;
    let ext_task = ext.tasks[model.task_index(&full_task.name)?].clone();
    let unseen_only: Vec<Option<usize>> = map.iter().map(|m| m.filter(|&c| c >= seen)).collect();
    let set = ChunkSet::build(
        test,
        &ext.vocab,
        std::slice::from_ref(&ext_task),
        &[unseen_only],
        ext.config.chunk_len,
    )?;
    if set.is_empty() {
        return Err(Error::Data("no test admission has an unseen gold class".into()));
    }
    let probs = predict_proba(&ext, &set.chunk_refs(), std::slice::from_ref(&ext_task))?;
    let cols = seen..ext_task.num_classes();
    let progressive_auc = unseen_auc(&probs[0], &set.gold[0], cols.clone())?;
    let sets = prediction_sets(&probs, &set, how)?;
    let agg: Vec<Vec<f64>> = sets.into_iter().map(|s| s.aggregated[0].clone()).collect();
    let ultimate_auc = unseen_auc(&agg, &set.admission_gold[0], cols)?;
    Ok(ZeroShotReport {
        progressive_auc,
        ultimate_auc,
        admissions: set.num_admissions(),
        chunks: set.len(),
    })
}

/// Mean-pooled task embedding `Z_t` per task.
pub fn task_vectors(model: &Model, tasks: &[TaskSpec]) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g, false);
    tasks
        .iter()
        .map(|t| {
            let z = task_embedding(&mut g, model, &bound, t)?;
            let v = g.mean_rows(z)?;
            Ok(g.value(v).data().to_vec())
        })
        .collect()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("cosine_similarity", "vectors differ in length"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine of a zero vector".into()));
    }
    Ok(dot / (na * nb))
}

/// For each vector, the index of its most cosine-similar other vector.
pub fn nearest_neighbors(vectors: &[Vec<f64>]) -> Result<Vec<usize>> {
    if vectors.len() < 2 {
        return Err(Error::InvalidArgument("need at least two vectors".into()));
    }
    (0..vectors.len())
        .map(|i| {
            let mut best = (f64::NEG_INFINITY, 0);
            for j in (0..vectors.len()).filter(|&j| j != i) {
                let s = cosine_similarity(&vectors[i], &vectors[j])?;
                if s > best.0 {
                    best = (s, j);
                }
            }
            Ok(best.1)
        })
        .collect()
}

const PCA_TOL: f64 = 1e-10;
const PCA_MAX_ITERS: usize = 200_000;

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn mat_vec(c: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    c.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn remove_component(v: &mut [f64], u: &[f64]) {
    let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
}

/// Flips `v` so its largest-magnitude entry is positive.
fn fix_sign(v: &mut [f64]) {
    let k = (0..v.len()).fold(0, |k, i| if v[i].abs() > v[k].abs() { i } else { k });
    if v[k] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Dominant eigenvector of symmetric `c`, orthogonal to `against`.
fn power_iteration(c: &[Vec<f64>], against: Option<&[f64]>) -> (Vec<f64>, f64) {
    let d = c.len();
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * i as f64).collect();
    if let Some(u) = against {
        remove_component(&mut v, u);
    }
    if normalize(&mut v) == 0.0 {
        v = vec![0.0; d];
        v[d - 1] = 1.0;
    }
    let mut lambda = 0.0;
    for _ in 0..PCA_MAX_ITERS {
        let mut next = mat_vec(c, &v);
        if let Some(u) = against {
            remove_component(&mut next, u);
        }
        lambda = normalize(&mut next);
        if lambda == 0.0 {
            // Null space: any unit vector orthogonal to `against` will do.
            return (v, 0.0);
        }
        fix_sign(&mut next);
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < PCA_TOL {
            break;
        }
    }
    (v, lambda)
}

/// Projects points onto the top two principal axes of their covariance.
pub fn pca2(points: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs at least 3 points, got {}",
            points.len()
        )));
    }
    let d = points[0].len();
    if d < 2 {
        return Err(Error::InvalidArgument("PCA needs at least 2 dimensions".into()));
    }
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::dim("pca2", "points differ in dimension"));
    }
    let n = points.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(a, m)| a - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for p in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += p[i] * p[j];
            }
        }
    }
    cov.iter_mut().flatten().for_each(|c| *c /= n - 1.0);
    let trace: f64 = (0..d).map(|i| cov[i][i]).sum();
    if trace <= f64::MIN_POSITIVE {
        return Err(Error::InvalidArgument("PCA of zero-variance data".into()));
    }
    let (v1, l1) = power_iteration(&cov, None);
    let mut deflated = cov.clone();
    for i in 0..d {
        for j in 0..d {
            deflated[i][j] -= l1 * v1[i] * v1[j];
        }
    }
    let (v2, _) = power_iteration(&deflated, Some(&v1));
    Ok(centered
        .iter()
        .map(|p| {
            let x = p.iter().zip(&v1).map(|(a, b)| a * b).sum();
            let y = p.iter().zip(&v2).map(|(a, b)| a * b).sum();
            [x, y]
        })
        .collect())
}

/// `name,x,y` rows.
pub fn pca_csv(names: &[String], coords: &[[f64; 2]]) -> String {
    let mut out = String::from("name,x,y\n");
    for (name, [x, y]) in names.iter().zip(coords) {
        writeln!(out, "{name},{x},{y}").unwrap();
    }
    out
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub task: String,
    pub method: String,
    pub mode: Mode,
    /// `None` for rows that report only AUC.
    pub f1: Option<(f64, f64)>,
    pub auc: (f64, f64),
}

/// Mean ± std across runs of every `(task, mode)` row of the reports.
pub fn summarize(method: &str, reports: &[MetricReport]) -> Result<Vec<SummaryRow>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("no reports to summarize".into()))?;
    first
        .rows
        .iter()
        .map(|row| {
            let matched = reports
                .iter()
                .map(|r| r.get(&row.task, row.mode))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Data(format!("report missing {} {}", row.task, row.mode.name())))?;
            let f1: Vec<f64> = matched.iter().map(|r| r.f1).collect();
            let auc: Vec<f64> = matched.iter().map(|r| r.auc).collect();
            Ok(SummaryRow {
                task: row.task.clone(),
                method: method.into(),
                mode: row.mode,
                f1: Some(mean_std(&f1)),
                auc: mean_std(&auc),
            })
        })
        .collect()
}

/// Unseen-class AUC rows (`task` suffixed with `_unseen`) across runs.
pub fn summarize_zero_shot(task: &str, method: &str, reports: &[ZeroShotReport]) -> Result<Vec<SummaryRow>> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to summarize".into()));
    }
    let prog: Vec<f64> = reports.iter().map(|r| r.progressive_auc).collect();
    let ult: Vec<f64> = reports.iter().map(|r| r.ultimate_auc).collect();
    Ok([(Mode::Progressive, prog), (Mode::Ultimate, ult)]
        .into_iter()
        .map(|(mode, v)| SummaryRow {
            task: format!("{task}_unseen"),
            method: method.into(),
            mode,
            f1: None,
            auc: mean_std(&v),
        })
        .collect())
}

pub const SUMMARY_HEADER: &str = "task,method,mode,f1_mean,f1_std,auc_mean,auc_std";

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let f1 = r.f1.map_or_else(|| ",".to_string(), |(m, s)| format!("{m},{s}"));
        writeln!(
            out,
            "{},{},{},{f1},{},{}",
            r.task,
            r.method,
            r.mode.name(),
            r.auc.0,
            r.auc.1
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn auc_by_pairs(scores: &[f64], labels: &[bool]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    total += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        total / pairs
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[vec![0.3, 0.7]]).unwrap(), vec![0.3, 0.7]);
        let avg = aggregate(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        assert!((avg[0] - 0.4).abs() < 1e-15 && (avg[1] - 0.6).abs() < 1e-15);
        let same = vec![0.1, 0.2, 0.7];
        assert_eq!(aggregate(&[same.clone(), same.clone(), same.clone()]).unwrap()[2], 0.7);
        assert!(aggregate(&[]).is_err());
        assert!(aggregate(&[vec![1.0], vec![0.5, 0.5]]).is_err());
        let mx = aggregate_with(&[vec![0.2, 0.8], vec![0.6, 0.4]], Aggregation::Max).unwrap();
        assert!((mx[0] - 0.6 / 1.4).abs() < 1e-15);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc_binary(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auc_roc_binary(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(
            auc_roc_binary(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(),
            0.75
        );
        assert!(auc_roc_binary(&[0.1, 0.2], &[true, true]).is_err());
        assert!(auc_roc_binary(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn micro_examples() {
        let perfect = micro_scores(&[vec![0.9, 0.1], vec![0.2, 0.8]], &[0, 1]).unwrap();
        assert_eq!(perfect.micro_f1, 1.0);
        let probs = vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.8, 0.1], vec![0.5, 0.3, 0.2]];
        let s = micro_scores(&probs, &[0, 1, 2]).unwrap();
        assert!((s.micro_f1 - 2.0 / 3.0).abs() < 1e-15);
        let uniform = micro_scores(&[vec![0.25; 4], vec![0.25; 4], vec![0.25; 4]], &[0, 3, 1]).unwrap();
        assert_eq!(uniform.micro_auc, 0.5);
        assert!(micro_scores(&probs, &[0, 1, 3]).is_err());
    }

    #[test]
    fn weighted_f1_examples() {
        assert_eq!(weighted_f1(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        let w = weighted_f1(&[1, 0, 0, 0], &[1, 1, 0, 0]).unwrap();
        assert!((w - (0.5 * 2.0 / 3.0 + 0.5 * 0.8)).abs() < 1e-15);
        assert!((w - 0.733_333_333_333_333_3).abs() < 1e-12);
        // Equal supports: weighted equals macro.
        let macro_f1 = (2.0 / 3.0 + 0.8) / 2.0;
        assert!((w - macro_f1).abs() < 1e-15);
        assert!(weighted_f1(&[], &[]).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    #[test]
    fn pca_examples() {
        // A 2-D configuration embedded in 4-D by an orthonormal frame.
        let flat = [[0.0, 0.0], [3.0, 1.0], [-1.0, 2.0], [2.0, -2.5], [0.5, 0.7]];
        let e1 = [0.5, 0.5, 0.5, 0.5];
        let e2 = [0.5, -0.5, 0.5, -0.5];
        let pts: Vec<Vec<f64>> = flat
            .iter()
            .map(|[a, b]| (0..4).map(|k| a * e1[k] + b * e2[k] + 7.0).collect())
            .collect();
        let out = pca2(&pts).unwrap();
        for i in 0..flat.len() {
            for j in 0..flat.len() {
                let d_in = ((flat[i][0] - flat[j][0]).powi(2) + (flat[i][1] - flat[j][1]).powi(2)).sqrt();
                let d_out = ((out[i][0] - out[j][0]).powi(2) + (out[i][1] - out[j][1]).powi(2)).sqrt();
                assert!((d_in - d_out).abs() < 1e-6);
            }
        }

        let dup = vec![
            vec![1.0, 2.0, 0.0],
            vec![1.0, 2.0, 0.0],
            vec![0.0, -1.0, 3.0],
            vec![2.0, 0.0, 1.0],
        ];
        let out = pca2(&dup).unwrap();
        assert_eq!(out[0], out[1]);

        let line: Vec<Vec<f64>> = (0..4).map(|t| vec![t as f64, 2.0 * t as f64, -(t as f64)]).collect();
        for [_, y] in pca2(&line).unwrap() {
            assert!(y.abs() < 1e-8);
        }

        assert!(pca2(&dup[..2]).is_err());
        assert!(pca2(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn summary_std_and_csv() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        let rows = summarize_zero_shot(
            "diagnosis",
            "hyper",
            &[ZeroShotReport {
                progressive_auc: 0.75,
                ultimate_auc: 0.5,
                admissions: 3,
                chunks: 4,
            }],
        )
        .unwrap();
        assert_eq!(
            summary_csv(&rows),
            format!("{SUMMARY_HEADER}\ndiagnosis_unseen,hyper,progressive,,,0.75,0\ndiagnosis_unseen,hyper,ultimate,,,0.5,0\n")
        );
    }

    fn rotation(d: usize, seed: u64) -> Vec<Vec<f64>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < d {
            let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for u in &basis {
                remove_component(&mut v, u);
            }
            if normalize(&mut v) > 1e-3 {
                basis.push(v);
            }
        }
        basis
    }

    proptest! {
        #[test]
        fn auc_matches_pair_enumeration(
            data in prop::collection::vec((0u8..6, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 5.0).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            prop_assert_eq!(auc_roc_binary(&scores, &labels).unwrap(), auc_by_pairs(&scores, &labels));
        }

        #[test]
        fn auc_invariant_under_monotone_transform(
            data in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..30)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let moved: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
            prop_assert_eq!(auc_roc_binary(&scores, &labels).unwrap(), auc_roc_binary(&moved, &labels).unwrap());
        }

        #[test]
        fn micro_f1_is_accuracy(
            data in prop::collection::vec((prop::collection::vec(0.0f64..1.0, 4), 0usize..4), 1..40)
        ) {
            let probs: Vec<Vec<f64>> = data.iter().map(|(p, _)| p.clone()).collect();
            let gold: Vec<usize> = data.iter().map(|(_, g)| *g).collect();
            let correct = probs.iter().zip(&gold).filter(|(p, &g)| argmax(p) == g).count();
            let acc = correct as f64 / gold.len() as f64;
            let f1 = micro_scores(&probs, &gold).unwrap().micro_f1;
            prop_assert!((f1 - acc).abs() < 1e-15);
        }

        #[test]
        fn pca_is_rotation_invariant(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = 4;
            // Well-separated variances along the axes keep the eigenproblem well conditioned.
            let scales = [4.0, 2.0, 0.5, 0.1];
            let pts: Vec<Vec<f64>> = (0..8)
                .map(|_| scales.iter().map(|s| s * rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let r = rotation(d, seed ^ 1);
            let rotated: Vec<Vec<f64>> = pts.iter().map(|p| mat_vec(&r, p)).collect();
            let a = pca2(&pts).unwrap();
            let b = pca2(&rotated).unwrap();
            for axis in 0..2 {
                let sign = if a.iter().zip(&b).map(|(x, y)| x[axis] * y[axis]).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x[axis] - sign * y[axis]).abs() < 1e-6, "{} vs {}", x[axis], y[axis]);
                }
            }
        }
    }
}
