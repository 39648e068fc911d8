//! Report data: field-distance matrices and voting-fraction curves.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::experiment::{predict_site, ExperimentError, Stage};
use super::metrics::page_level_f1;
use crate::checkpoint::Checkpoint;
use crate::dom::{match_truth_nodes, LoadedVertical, Page, SiteCorpus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub site_id: String,
    pub fields: Vec<String>,
    /// Mean of `(ordinal(col) - ordinal(row)) / page_size`; `None` when no page has both.
    pub raw: Vec<Vec<Option<f64>>>,
    /// `raw` min-max scaled to `[-1, 1]` over the whole matrix.
    pub scaled: Vec<Vec<Option<f64>>>,
    pub pages_used: Vec<Vec<usize>>,
}

/// Signed, size-normalized distances between the value nodes of every field pair.
pub fn distance_matrix(site: &SiteCorpus) -> DistanceMatrix {
    let schema = &site.vertical;
    let k = schema.len();
    let mut sums = vec![vec![0.0; k]; k];
    let mut counts = vec![vec![0usize; k]; k];
    for page in &site.pages {
        let size = page.nodes.len().max(1) as f64;
        let m = match_truth_nodes(page, schema);
        let first: Vec<Option<usize>> =
            schema.fields.iter().map(|f| m.nodes_for(f).and_then(|s| s.iter().next().copied())).collect();
        for r in 0..k {
            for c in 0..k {
                if let (Some(a), Some(b)) = (first[r], first[c]) {
                    sums[r][c] += (b as f64 - a as f64) / size;
                    counts[r][c] += 1;
                }
            }
        }
    }
    let raw: Vec<Vec<Option<f64>>> = (0..k)
        .map(|r| (0..k).map(|c| (counts[r][c] > 0).then(|| sums[r][c] / counts[r][c] as f64)).collect())
        .collect();
    let present = raw.iter().flatten().flatten().copied();
    let (lo, hi) = present.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let scaled = raw
        .iter()
        .map(|row| {
            row.iter().map(|v| v.map(|v| if hi > lo { 2.0 * (v - lo) / (hi - lo) - 1.0 } else { 0.0 })).collect()
        })
        .collect();
    DistanceMatrix { site_id: site.site_id.clone(), fields: schema.fields.clone(), raw, scaled, pages_used: counts }
}

impl DistanceMatrix {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<14}", self.site_id);
        for f in &self.fields {
            let _ = write!(out, " {f:>10}");
        }
        out.push('\n');
        for (f, row) in self.fields.iter().zip(&self.scaled) {
            let _ = write!(out, "{f:<14}");
            for v in row {
                match v {
                    Some(v) => {
                        let _ = write!(out, " {v:>10.3}");
                    }
                    None => {
                        let _ = write!(out, " {:>10}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// Scaled entries present in both matrices, row-major.
    pub fn shared_entries(&self, other: &DistanceMatrix) -> (Vec<f64>, Vec<f64>) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (ra, rb) in self.scaled.iter().zip(&other.scaled) {
            for (x, y) in ra.iter().zip(rb) {
                if let (Some(x), Some(y)) = (x, y) {
                    a.push(*x);
                    b.push(*y);
                }
            }
        }
        (a, b)
    }
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (x, y) = (a[i] - ma, b[i] - mb);
        cov += x * y;
        va += x * x;
        vb += y * y;
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VotingPoint {
    pub fraction: f64,
    pub macro_f1: f64,
}

/// Macro F1 on `targets` as the share of pages used to elect majority XPaths grows.
pub fn voting_curve(
    checkpoint: &Checkpoint,
    corpus: &LoadedVertical,
    targets: &[String],
    stage: Stage,
    fractions: &[f64],
) -> Result<Vec<VotingPoint>, ExperimentError> {
    let schema = &checkpoint.meta.schema;
    let mut sites = Vec::new();
    for id in targets {
        let raw = corpus.site(id).ok_or_else(|| ExperimentError::UnknownSite(id.clone()))?;
        sites.push(predict_site(checkpoint, raw, stage == Stage::Two)?);
    }
    let pages: Vec<&Page> = sites.iter().flat_map(|s| s.prepared.filtered.pages.iter()).collect();
    fractions
        .iter()
        .map(|&fraction| {
            let mut preds = Vec::new();
            for site in &sites {
                let choices = site.resolve(stage, fraction > 0.0, fraction, schema.len())?;
                preds.extend(site.predictions(&choices, schema));
            }
            Ok(VotingPoint { fraction, macro_f1: page_level_f1(schema, &preds, &pages)?.macro_f1 })
        })
        .collect()
}
