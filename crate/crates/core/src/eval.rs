//! Cluster assignment through the discriminator posterior, and scoring
//! against ground truth with Hungarian-matched accuracy and NMI.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use c3gan_tensor::Array;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::discriminator::{posterior, Discriminator};
use crate::error::{invalid, Error, Result};
use crate::nn::ParamStore;

/// Anything that maps images `[B, 3, H, W]` to embeddings `[B, d_h]`.
pub trait Embedder {
    fn embed(&self, images: &Array<f32>) -> Result<Array<f32>>;
}

/// A discriminator with its parameters, run in inference mode.
pub struct DiscriminatorEmbedder<'a> {
    pub discriminator: &'a Discriminator,
    pub params: &'a ParamStore<f32>,
}

impl Embedder for DiscriminatorEmbedder<'_> {
    fn embed(&self, images: &Array<f32>) -> Result<Array<f32>> {
        self.discriminator.embed(self.params, images)
    }
}

/// Hard cluster ids with the winning posterior probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    pub cluster_ids: Vec<usize>,
    pub confidences: Vec<f64>,
}

/// Assigns each embedding row to its most probable centroid.
pub fn assign_embeddings(h: &Array<f32>, centroids: &Array<f32>, temperature: f64) -> Result<ClusterAssignment> {
    let (cluster_ids, confidences) = posterior(h, centroids, temperature)?.argmax().into_iter().unzip();
    Ok(ClusterAssignment { cluster_ids, confidences })
}

/// Embeds and assigns a whole dataset, `batch_size` images at a time.
pub fn assign(
    dataset: &Dataset,
    model: &dyn Embedder,
    centroids: &Array<f32>,
    temperature: f64,
    batch_size: usize,
) -> Result<ClusterAssignment> {
    let mut out = ClusterAssignment { cluster_ids: Vec::new(), confidences: Vec::new() };
    for batch in dataset.sequential(batch_size) {
        let a = assign_embeddings(&model.embed(batch.images())?, centroids, temperature)?;
        out.cluster_ids.extend(a.cluster_ids);
        out.confidences.extend(a.confidences);
    }
    Ok(out)
}

/// Joint counts of predicted clusters (rows) and true classes (columns).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

impl ContingencyTable {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let cols = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|r| r.len() != cols) {
            return Err(invalid("contingency rows differ in length"));
        }
        let n = counts.iter().flatten().sum();
        Ok(Self { counts, n })
    }

    pub fn rows(&self) -> usize {
        self.counts.len()
    }

    pub fn cols(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }
}

/// `counts[p][t] = |{i : pred_i = p, true_i = t}|`.
pub fn contingency(pred: &[usize], truth: &[usize], y_eff: usize, y_true: usize) -> Result<ContingencyTable> {
    if pred.len() != truth.len() {
        return Err(invalid(format!("{} predictions but {} labels", pred.len(), truth.len())));
    }
    let mut counts = vec![vec![0u64; y_true]; y_eff];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= y_eff || t >= y_true {
            return Err(invalid(format!("id pair ({p}, {t}) outside table {y_eff}×{y_true}")));
        }
        counts[p][t] += 1;
    }
    Ok(ContingencyTable { counts, n: pred.len() as u64 })
}

/// Minimum-cost assignment of every row to a distinct column (`rows ≤ cols`).
/// Returns the column of each row.
fn min_cost_assignment(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    debug_assert!(n <= m);
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Best injective cluster→class matching: `(cluster, class)` pairs.
pub fn hungarian_matching(table: &ContingencyTable) -> Vec<(usize, usize)> {
    let (r, c) = (table.rows(), table.cols());
    if r == 0 || c == 0 {
        return Vec::new();
    }
    if r <= c {
        let cost: Vec<Vec<i64>> = table.counts.iter().map(|row| row.iter().map(|&v| -(v as i64)).collect()).collect();
        min_cost_assignment(&cost).into_iter().enumerate().collect()
    } else {
        let cost: Vec<Vec<i64>> = (0..c).map(|t| (0..r).map(|p| -(table.counts[p][t] as i64)).collect()).collect();
        min_cost_assignment(&cost).into_iter().enumerate().map(|(t, p)| (p, t)).collect()
    }
}

/// Fraction of items covered by the best injective cluster→class map;
/// unmatched clusters contribute nothing.
pub fn hungarian_accuracy(table: &ContingencyTable) -> Result<f64> {
    if table.n == 0 {
        return Err(invalid("accuracy of an empty table"));
    }
    let hit: u64 = hungarian_matching(table).into_iter().map(|(p, t)| table.counts[p][t]).sum();
    Ok(hit as f64 / table.n as f64)
}

fn entropy(counts: impl Iterator<Item = u64>, n: f64) -> f64 {
    counts.filter(|&c| c > 0).map(|c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

/// `I(P; T) / sqrt(H(P) H(T))` in nats; 0 when either entropy vanishes.
pub fn nmi(table: &ContingencyTable) -> Result<f64> {
    if table.n == 0 {
        return Err(invalid("NMI of an empty table"));
    }
    let n = table.n as f64;
    let row: Vec<u64> = table.counts.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<u64> = (0..table.cols()).map(|t| table.counts.iter().map(|r| r[t]).sum()).collect();
    let (hp, ht) = (entropy(row.iter().copied(), n), entropy(col.iter().copied(), n));
    if hp <= 0.0 || ht <= 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (p, r) in table.counts.iter().enumerate() {
        for (t, &c) in r.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (row[p] as f64 * col[t] as f64)).ln();
            }
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

/// Evaluation summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub acc: f64,
    pub nmi: f64,
    #[serde(rename = "Y_eff")]
    pub y_eff: usize,
    #[serde(rename = "Y_true")]
    pub y_true: usize,
    pub n: u64,
}

/// Scores predictions against labels.
pub fn score(pred: &[usize], truth: &[usize], y_eff: usize) -> Result<Scores> {
    let y_true = truth.iter().max().map_or(0, |m| m + 1);
    let table = contingency(pred, truth, y_eff, y_true)?;
    Ok(Scores { acc: hungarian_accuracy(&table)?, nmi: nmi(&table)?, y_eff, y_true, n: table.n })
}

/// Assigns a labeled dataset and scores it.
pub fn evaluate(
    dataset: &Dataset,
    model: &dyn Embedder,
    centroids: &Array<f32>,
    temperature: f64,
    batch_size: usize,
) -> Result<(ClusterAssignment, Scores)> {
    let truth = dataset.labels().ok_or(Error::MissingLabels)?;
    if truth.is_empty() {
        return Err(invalid("evaluation set is empty"));
    }
    let a = assign(dataset, model, centroids, temperature, batch_size)?;
    let s = score(&a.cluster_ids, &truth, centroids.dim(0))?;
    Ok((a, s))
}

/// Writes `path<TAB>cluster_id<TAB>confidence` lines.
pub fn write_assignments(path: &Path, items: &[PathBuf], a: &ClusterAssignment) -> Result<()> {
    let mut text = String::new();
    for ((p, id), conf) in items.iter().zip(&a.cluster_ids).zip(&a.confidences) {
        let _ = writeln!(text, "{}\t{id}\t{conf:.6}", p.display());
    }
    fs::write(path, text)?;
    Ok(())
}
