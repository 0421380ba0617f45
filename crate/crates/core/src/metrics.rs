//! Return-correlation machinery and the mean intra-cluster correlation (MC)
//! evaluation metric.
//!
//! Two MC normalizations coexist: `pair_mean` averages each cluster's
//! pairwise correlations over the pair count; `paper_literal` divides the
//! pair sum by the cluster size instead, which grows with cluster size.
//! Every report carries the mode it was computed under.

use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::{CompanyId, ReturnSeries, YearPanel};
use crate::error::{Error, Result};
use crate::graphcluster::{MethodTag, YearClustering};
use crate::sparsefeat::from_csv_open;

/// Normalization used inside a cluster's correlation aggregate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum McMode {
    /// Mean over within-cluster pairs.
    PairMean,
    /// Pair sum divided by cluster size.
    PaperLiteral,
}

impl McMode {
    pub fn label(self) -> &'static str {
        match self {
            McMode::PairMean => "pair_mean",
            McMode::PaperLiteral => "paper_literal",
        }
    }
}

impl std::str::FromStr for McMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pair_mean" => Ok(McMode::PairMean),
            "paper_literal" => Ok(McMode::PaperLiteral),
            other => Err(Error::Config(format!(
                "unknown MC mode {other:?} (expected \"pair_mean\" or \"paper_literal\")"
            ))),
        }
    }
}

impl std::fmt::Display for McMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Pearson correlation of two equal-length series. Zero variance on either
/// side is an error so callers can skip the pair explicitly.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InsufficientData(
            "pearson needs at least 2 observations".to_string(),
        ));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0))
}

/// Per-year MC value with its bookkeeping.
#[derive(Clone, Copy, Debug)]
pub struct McResult {
    pub mc: f64,
    /// Clusters that contributed (size >= 2 with at least one defined pair).
    pub scorable_clusters: usize,
    /// Pairs dropped for undefined correlation.
    pub skipped_pairs: usize,
    /// Mean size over all clusters of the partition.
    pub mean_cluster_size: f64,
    pub total_clusters: usize,
}

/// Mean intra-cluster correlation of one year's clustering. Clusters below
/// two members are excluded; pairs with undefined correlation are skipped
/// and counted. All clustered companies must carry a return series.
pub fn mean_intra_cluster_correlation(
    clustering: &YearClustering,
    returns: &BTreeMap<CompanyId, ReturnSeries>,
    mode: McMode,
) -> Result<McResult> {
    let mut cluster_scores = Vec::new();
    let mut skipped_pairs = 0usize;
    for cluster in &clustering.clusters {
        if cluster.members.len() < 2 {
            continue;
        }
        let series: Vec<&ReturnSeries> = cluster
            .members
            .iter()
            .map(|m| {
                returns.get(m).ok_or_else(|| {
                    Error::Validation(format!(
                        "company {m} clustered in year {} but has no return series",
                        clustering.year
                    ))
                })
            })
            .collect::<Result<_>>()?;
        let mut pair_sum = 0.0;
        let mut defined = 0usize;
        for i in 0..series.len() {
            for j in (i + 1)..series.len() {
                match pearson(&series[i].values, &series[j].values) {
                    Ok(rho) => {
                        pair_sum += rho;
                        defined += 1;
                    }
                    Err(Error::UndefinedCorrelation) => skipped_pairs += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        if defined == 0 {
            continue;
        }
        let score = match mode {
            McMode::PairMean => pair_sum / defined as f64,
            McMode::PaperLiteral => pair_sum / cluster.members.len() as f64,
        };
        cluster_scores.push(score);
    }
    if cluster_scores.is_empty() {
        return Err(Error::NoScorableClusters);
    }
    let total_clusters = clustering.clusters.len();
    let mean_cluster_size = clustering
        .clusters
        .iter()
        .map(|c| c.members.len() as f64)
        .sum::<f64>()
        / total_clusters as f64;
    Ok(McResult {
        mc: cluster_scores.iter().sum::<f64>() / cluster_scores.len() as f64,
        scorable_clusters: cluster_scores.len(),
        skipped_pairs,
        mean_cluster_size,
        total_clusters,
    })
}

/// Arithmetic mean of per-year MC values over the evaluated year set.
pub fn overall_mc(per_year: &BTreeMap<i32, f64>) -> Result<f64> {
    if per_year.is_empty() {
        return Err(Error::InsufficientData(
            "overall MC needs at least one year".to_string(),
        ));
    }
    Ok(per_year.values().sum::<f64>() / per_year.len() as f64)
}

/// Mean pairwise correlation over all company pairs of each year, averaged
/// over years: the whole-panel reference MC.
pub fn population_baseline(panels: &[YearPanel]) -> Result<f64> {
    let mut per_year = BTreeMap::new();
    for panel in panels {
        let series: Vec<&ReturnSeries> = panel.returns.values().collect();
        let mut sum = 0.0;
        let mut defined = 0usize;
        for i in 0..series.len() {
            for j in (i + 1)..series.len() {
                match pearson(&series[i].values, &series[j].values) {
                    Ok(rho) => {
                        sum += rho;
                        defined += 1;
                    }
                    Err(Error::UndefinedCorrelation) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        if defined > 0 {
            per_year.insert(panel.year, sum / defined as f64);
        }
    }
    overall_mc(&per_year)
}

/// One row of the evaluation report.
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub method: MethodTag,
    pub year: i32,
    pub mc: f64,
    pub clusters: usize,
    pub mean_cluster_size: f64,
    pub skipped_pairs: usize,
}

/// Evaluation table across methods and years, plus per-method overall MC.
#[derive(Clone, Debug, Default)]
pub struct EvaluationReport {
    pub mode_label: String,
    pub rows: Vec<EvalRow>,
    /// `(method label, overall MC)`; includes the population baseline under
    /// the label `population`.
    pub summary: Vec<(String, f64)>,
}

impl EvaluationReport {
    pub fn push_method(&mut self, method: MethodTag, per_year: &BTreeMap<i32, McResult>) -> Result<()> {
        for (&year, res) in per_year {
            self.rows.push(EvalRow {
                method,
                year,
                mc: res.mc,
                clusters: res.total_clusters,
                mean_cluster_size: res.mean_cluster_size,
                skipped_pairs: res.skipped_pairs,
            });
        }
        let mc_by_year: BTreeMap<i32, f64> = per_year.iter().map(|(&y, r)| (y, r.mc)).collect();
        self.summary
            .push((method.label().to_string(), overall_mc(&mc_by_year)?));
        Ok(())
    }

    /// Writes `method,year,mc,clusters,mean_cluster_size,skipped_pairs`; the
    /// per-method summary rows carry `overall` in the year column.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(from_csv_open(path))?;
        writer.write_record([
            "method",
            "year",
            "mc",
            "clusters",
            "mean_cluster_size",
            "skipped_pairs",
        ])?;
        for row in &self.rows {
            writer.write_record([
                row.method.label(),
                &row.year.to_string(),
                &row.mc.to_string(),
                &row.clusters.to_string(),
                &row.mean_cluster_size.to_string(),
                &row.skipped_pairs.to_string(),
            ])?;
        }
        for (method, mc) in &self.summary {
            writer.write_record([method.as_str(), "overall", &mc.to_string(), "", "", ""])?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}
