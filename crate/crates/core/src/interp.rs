//! Activation-patching importance: how much each feature moves the
//! within-cluster normalized cosine distances when zeroed out before the
//! projection, plus the greedy important-set and cluster sparsity stats.
//!
//! The year's normalization constants are frozen while patching, so a
//! patched distance is standardized with the original mean and sigma. Only
//! features active somewhere in the cluster are scanned: a feature inactive
//! in every member leaves every projected vector unchanged (the projection
//! is affine in the feature's value), so its impact is exactly zero.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graphcluster::{cosine_distance, NormalizationStats};
use crate::pca::{patch_transformed, transform, PcaModel};
use crate::sparsefeat::{from_csv_open, FeatureId, HistogramBin, SummedFeatureVector};

/// Per-cluster importance ledger.
#[derive(Clone, Debug)]
pub struct ImportanceReport {
    pub year: i32,
    pub cluster_id: String,
    /// Impact per scanned (active) feature; inactive features are zero by
    /// construction and not stored.
    pub impacts: BTreeMap<FeatureId, f64>,
    /// Greedy important set, impact-descending.
    pub important_set: Vec<FeatureId>,
    /// Features active somewhere in the cluster.
    pub n_active: usize,
    /// Feature-space size used as the sparsity denominator.
    pub n_features: u32,
    /// `|S*| / n_features`.
    pub sparsity_ratio: f64,
    /// Pairs skipped because a patched vector lost its norm.
    pub skipped_pairs: usize,
}

struct MemberCache {
    transformed: Vec<DVector<f64>>,
    active_by_feature: BTreeMap<FeatureId, Vec<usize>>,
}

fn build_cache(members: &[&SummedFeatureVector], model: &PcaModel) -> Result<MemberCache> {
    let mut transformed = Vec::with_capacity(members.len());
    let mut active_by_feature: BTreeMap<FeatureId, Vec<usize>> = BTreeMap::new();
    for (i, v) in members.iter().enumerate() {
        transformed.push(transform(model, v)?.values);
        for &(f, _) in v.entries() {
            active_by_feature.entry(f).or_default().push(i);
        }
    }
    Ok(MemberCache {
        transformed,
        active_by_feature,
    })
}

/// Impact of zeroing feature `z` on one pair set: the sum over unordered
/// within-cluster pairs of the absolute change in normalized cosine
/// distance. Returns `(impact, skipped_pairs)`.
fn impact_of(
    members: &[&SummedFeatureVector],
    cache: &MemberCache,
    model: &PcaModel,
    norm: &NormalizationStats,
    z: FeatureId,
) -> (f64, usize) {
    let Some(touched) = cache.active_by_feature.get(&z) else {
        return (0.0, 0);
    };
    let touched: BTreeSet<usize> = touched.iter().copied().collect();
    let patched: BTreeMap<usize, DVector<f64>> = touched
        .iter()
        .map(|&i| {
            (
                i,
                patch_transformed(model, &cache.transformed[i], members[i].get(z), z),
            )
        })
        .collect();
    let n = members.len();
    let mut impact = 0.0;
    let mut skipped = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            if !touched.contains(&i) && !touched.contains(&j) {
                continue; // both legs unchanged, distance unchanged
            }
            let gi = patched.get(&i).unwrap_or(&cache.transformed[i]);
            let gj = patched.get(&j).unwrap_or(&cache.transformed[j]);
            let base = cosine_distance(&cache.transformed[i], &cache.transformed[j]);
            let after = cosine_distance(gi, gj);
            match (base, after) {
                (Ok(d0), Ok(d1)) => {
                    // CD = (d - mu)/sigma with frozen constants; mu cancels.
                    impact += (d0 - d1).abs() / norm.std_dev;
                }
                _ => skipped += 1,
            }
        }
    }
    (impact, skipped)
}

/// Impact of a single feature on a cluster (standalone form of the scan).
pub fn feature_impact(
    members: &[&SummedFeatureVector],
    model: &PcaModel,
    norm: &NormalizationStats,
    z: FeatureId,
) -> Result<f64> {
    if members.len() < 2 {
        return Err(Error::InsufficientData(
            "feature impact needs a cluster of at least 2 members".to_string(),
        ));
    }
    if (z as usize) >= model.dim() {
        return Err(Error::Validation(format!(
            "feature {z} out of range (dim {})",
            model.dim()
        )));
    }
    let cache = build_cache(members, model)?;
    Ok(impact_of(members, &cache, model, norm, z).0)
}

/// Greedy important set: features sorted by impact descending (ties by id
/// ascending), prefix taken until its cumulative impact is at least half of
/// the total. Only strictly positive impacts qualify.
pub fn important_set(impacts: &BTreeMap<FeatureId, f64>) -> Result<Vec<FeatureId>> {
    let mut positives: Vec<(FeatureId, f64)> = impacts
        .iter()
        .filter(|&(_, &v)| v > 0.0)
        .map(|(&f, &v)| (f, v))
        .collect();
    if positives.is_empty() {
        return Err(Error::Validation(
            "important set undefined: no feature has positive impact".to_string(),
        ));
    }
    positives.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite impacts").then(a.0.cmp(&b.0)));
    let total: f64 = positives.iter().map(|&(_, v)| v).sum();
    let mut cum = 0.0;
    let mut set = Vec::new();
    for &(f, v) in &positives {
        cum += v;
        set.push(f);
        if 2.0 * cum >= total {
            break;
        }
    }
    Ok(set)
}

/// Full importance ledger for one cluster. `max_features` caps the scan to
/// the highest-total-activation candidates when positive (0 scans every
/// active feature); capping never changes the zero impact of inactive
/// features.
pub fn cluster_importance(
    year: i32,
    cluster_id: &str,
    members: &[&SummedFeatureVector],
    model: &PcaModel,
    norm: &NormalizationStats,
    max_features: usize,
) -> Result<ImportanceReport> {
    if members.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "cluster {cluster_id} of year {year} has fewer than 2 members"
        )));
    }
    let cache = build_cache(members, model)?;
    let n_active = cache.active_by_feature.len();
    let candidates: Vec<FeatureId> = if max_features > 0 && n_active > max_features {
        let mut by_mass: Vec<(f64, FeatureId)> = cache
            .active_by_feature
            .keys()
            .map(|&f| {
                let mass: f64 = members.iter().map(|v| v.get(f)).sum();
                (mass, f)
            })
            .collect();
        by_mass.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite mass").then(a.1.cmp(&b.1)));
        let mut picked: Vec<FeatureId> =
            by_mass.iter().take(max_features).map(|&(_, f)| f).collect();
        picked.sort_unstable();
        picked
    } else {
        cache.active_by_feature.keys().copied().collect()
    };

    let scanned: Vec<(FeatureId, f64, usize)> = candidates
        .par_iter()
        .map(|&z| {
            let (impact, skipped) = impact_of(members, &cache, model, norm, z);
            (z, impact, skipped)
        })
        .collect();
    let mut impacts = BTreeMap::new();
    let mut skipped_pairs = 0usize;
    for (z, impact, skipped) in scanned {
        impacts.insert(z, impact);
        skipped_pairs += skipped;
    }
    let set = important_set(&impacts)?;
    let sparsity_ratio = set.len() as f64 / model.dim() as f64;
    Ok(ImportanceReport {
        year,
        cluster_id: cluster_id.to_string(),
        impacts,
        important_set: set,
        n_active,
        n_features: model.dim() as u32,
        sparsity_ratio,
        skipped_pairs,
    })
}

/// Distribution of sparsity ratios over clusters plus the median ratio.
pub fn sparsity_distribution(
    reports: &[ImportanceReport],
    bin_width: f64,
) -> Result<(Vec<HistogramBin>, f64)> {
    if reports.is_empty() {
        return Err(Error::InsufficientData(
            "sparsity distribution needs at least one report".to_string(),
        ));
    }
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(Error::Validation(format!(
            "bin width must be in (0, 1], got {bin_width}"
        )));
    }
    let mut ratios: Vec<f64> = reports.iter().map(|r| r.sparsity_ratio).collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).expect("finite ratios"));
    let mid = ratios.len() / 2;
    let median = if ratios.len() % 2 == 1 {
        ratios[mid]
    } else {
        (ratios[mid - 1] + ratios[mid]) / 2.0
    };
    let n_bins = (1.0 / bin_width).ceil() as usize;
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|i| HistogramBin {
            lo: i as f64 * bin_width,
            hi: ((i + 1) as f64 * bin_width).min(1.0),
            count: 0,
        })
        .collect();
    for &r in &ratios {
        let idx = ((r / bin_width) as usize).min(n_bins - 1);
        bins[idx].count += 1;
    }
    Ok((bins, median))
}

/// For each feature, the number of clusters whose important set contains it.
pub fn feature_cluster_frequency(reports: &[ImportanceReport]) -> BTreeMap<FeatureId, usize> {
    let mut counts = BTreeMap::new();
    for report in reports {
        for &f in &report.important_set {
            *counts.entry(f).or_insert(0) += 1;
        }
    }
    counts
}

/// Features in the top `percentile` (0-100) by cluster count, count
/// descending then id ascending.
pub fn top_percentile_features(
    counts: &BTreeMap<FeatureId, usize>,
    percentile: f64,
) -> Vec<FeatureId> {
    let mut ranked: Vec<(usize, FeatureId)> = counts.iter().map(|(&f, &c)| (c, f)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let keep = ((ranked.len() as f64) * percentile / 100.0).ceil() as usize;
    ranked.into_iter().take(keep).map(|(_, f)| f).collect()
}

/// Writes `year,cluster_id,feature_id,impact,in_s_star` over all scanned
/// features of every report.
pub fn write_importance_csv(path: &Path, reports: &[ImportanceReport]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(from_csv_open(path))?;
    writer.write_record(["year", "cluster_id", "feature_id", "impact", "in_s_star"])?;
    for report in reports {
        let in_set: BTreeSet<FeatureId> = report.important_set.iter().copied().collect();
        for (&f, &impact) in &report.impacts {
            writer.write_record([
                report.year.to_string().as_str(),
                &report.cluster_id,
                &f.to_string(),
                &impact.to_string(),
                &in_set.contains(&f).to_string(),
            ])?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes `year,cluster_id,n_active,s_star_size,sparsity_ratio`.
pub fn write_sparsity_csv(path: &Path, reports: &[ImportanceReport]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(from_csv_open(path))?;
    writer.write_record(["year", "cluster_id", "n_active", "s_star_size", "sparsity_ratio"])?;
    for report in reports {
        writer.write_record([
            report.year.to_string().as_str(),
            &report.cluster_id,
            &report.n_active.to_string(),
            &report.important_set.len().to_string(),
            &report.sparsity_ratio.to_string(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes `feature_id,clusters_important_count` for downstream
/// interpretation tooling, count descending then id ascending.
pub fn write_feature_export(path: &Path, counts: &BTreeMap<FeatureId, usize>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(from_csv_open(path))?;
    writer.write_record(["feature_id", "clusters_important_count"])?;
    let mut ranked: Vec<(usize, FeatureId)> = counts.iter().map(|(&f, &c)| (c, f)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (count, f) in ranked {
        writer.write_record([f.to_string().as_str(), &count.to_string()])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
