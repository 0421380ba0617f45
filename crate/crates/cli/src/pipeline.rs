//! End-to-end batch pipeline: ingest, project, cluster, calibrate,
//! evaluate, trade, and explain, leaving a run directory of CSV artifacts
//! plus a manifest. Any stage failure aborts the run, names the stage, and
//! leaves partial outputs behind a FAILED marker.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use sha2::{Digest, Sha256};

use peergraph::backtest::{
    self, in_sample_monthly_returns, portfolio_trajectory, preselect_pairs, select_cointegrated,
    sharpe_ratio, simulate_pair, BacktestSummary, PairTradeLog, TradingConfig,
};
use peergraph::calib::{
    calibrate_fixed, calibrate_rolling, write_calibration_report, write_rolling_series,
    CalibrationResult, YearData,
};
use peergraph::cointegration::EngleGrangerConfig;
use peergraph::corpus::{
    self, benchmark_clusters, filter_min_history, load_panel, write_clusters, CodeScheme,
    CompanyId, PriceSeries,
};
use peergraph::graphcluster::{
    build_year_graph, cut_mst, write_edge_dump, MethodTag, NormalizationStats, YearClustering,
    YearGraph,
};
use peergraph::interp::{
    cluster_importance, feature_cluster_frequency, write_feature_export, write_importance_csv,
    write_sparsity_csv, ImportanceReport,
};
use peergraph::metrics::{
    mean_intra_cluster_correlation, population_baseline, EvaluationReport, McResult,
};
use peergraph::pca::{fit_pca, PcaModel};
use peergraph::sparsefeat::SummedFeatureVector;

use crate::config::{CalibrationChoice, RunConfig};

/// Summary of a completed run.
#[derive(Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub years: Vec<i32>,
    pub fixed_theta: Option<f64>,
    pub rolling_thetas: BTreeMap<i32, f64>,
    pub methods_evaluated: Vec<String>,
    pub config_hash: String,
}

fn stage<T>(dir: &Path, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {name}");
    f().map_err(|e| {
        let marker = dir.join("FAILED");
        let body = format!("stage={name}\nerror={e:#}\n");
        let _ = std::fs::write(&marker, body);
        anyhow!("stage {name} failed: {e:#}")
    })
}

/// Runs the whole pipeline per the config, returning the artifact summary.
pub fn run_pipeline(config: &RunConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output dir {}", dir.display()))?;
    let _ = std::fs::remove_file(dir.join("FAILED"));

    let canonical = config.canonical_toml()?;
    let config_hash = hex_digest(&canonical);
    std::fs::write(dir.join("config.toml"), &canonical)?;

    // Load and validate the panel.
    let load_config = config.load_config()?;
    let panels = stage(&dir, "load", || {
        let (panels, mut report) = load_panel(
            &config.data.features,
            &config.data.returns,
            &config.data.metadata,
            &load_config,
        )?;
        let (panels, removed) = filter_min_history(panels, config.data.min_years)?;
        report.add("companies_removed_min_history", removed as u64);
        std::fs::write(dir.join("load_report.txt"), report.to_string())?;
        if panels.is_empty() {
            bail!("no year is present in all three input files");
        }
        Ok(panels)
    })?;
    let years: Vec<i32> = panels.iter().map(|p| p.year).collect();

    // Global projection.
    let model = stage(&dir, "pca", || {
        let all_vectors: Vec<SummedFeatureVector> = panels
            .iter()
            .flat_map(|p| p.summed_features.values().cloned())
            .collect();
        let cap = all_vectors.len().min(config.features.dim as usize);
        let k = config.pca.n_components.min(cap).max(1);
        if k < config.pca.n_components {
            log::warn!(
                "pca: requested {} components capped at {k}",
                config.pca.n_components
            );
        }
        let model = fit_pca(&all_vectors, k)?;
        model.save(&dir.join("pca_model.bin"))?;
        write_variance_table(&dir.join("pca_variance.csv"), &model)?;
        Ok(model)
    })?;

    // Year graphs and MSTs.
    let graphs = stage(&dir, "graphs", || {
        let mut graphs: BTreeMap<i32, YearGraph> = BTreeMap::new();
        for panel in &panels {
            graphs.insert(panel.year, build_year_graph(panel, &model)?);
        }
        if config.clustering.dump_edges {
            let all: Vec<_> = graphs.values().map(|g| g.graph.clone()).collect();
            write_edge_dump(&dir.join("edges.csv"), &all)?;
        }
        Ok(graphs)
    })?;

    let year_data: Vec<YearData> = panels
        .iter()
        .map(|p| YearData {
            year: p.year,
            mst: graphs[&p.year].mst.clone(),
            returns: p.returns.clone(),
        })
        .collect();

    // Threshold calibration.
    let grid = config.theta_grid()?;
    let mode = config.mc_mode()?;
    let choice = config.calibration_choice()?;
    let (fixed, rolling) = stage(&dir, "calibrate", || {
        let fixed = if matches!(choice, CalibrationChoice::Fixed | CalibrationChoice::Both) {
            Some(calibrate_fixed(&grid, &year_data, mode)?)
        } else {
            None
        };
        let rolling = if matches!(choice, CalibrationChoice::Rolling | CalibrationChoice::Both) {
            match calibrate_rolling(&grid, &year_data, config.clustering.rolling_lookback, mode) {
                Ok(r) => Some(r),
                Err(peergraph::Error::InsufficientData(msg)) => {
                    log::warn!("rolling calibration skipped: {msg}");
                    None
                }
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        let mut results: Vec<&CalibrationResult> = Vec::new();
        if let Some(f) = &fixed {
            results.push(f);
        }
        if let Some(r) = &rolling {
            results.push(r);
        }
        write_calibration_report(&dir.join("calibration.csv"), &results)?;
        if let Some(r) = &rolling {
            write_rolling_series(&dir.join("calibration_rolling_series.csv"), r)?;
        }
        Ok((fixed, rolling))
    })?;

    // Clusterings per method.
    let clusterings = stage(&dir, "cluster", || {
        let mut out: BTreeMap<MethodTag, Vec<YearClustering>> = BTreeMap::new();
        if let Some(f) = &fixed {
            let theta = f.fixed_theta.expect("fixed result carries theta");
            let cd: Vec<YearClustering> = panels
                .iter()
                .map(|p| cut_mst(&graphs[&p.year].mst, theta, MethodTag::Cd))
                .collect();
            write_clusters(&dir.join("clusters_cd.csv"), &cd)?;
            out.insert(MethodTag::Cd, cd);
        }
        if let Some(r) = &rolling {
            let cdr: Vec<YearClustering> = r
                .rolling_thetas
                .iter()
                .map(|(&year, &theta)| cut_mst(&graphs[&year].mst, theta, MethodTag::Cdr))
                .collect();
            write_clusters(&dir.join("clusters_cdr.csv"), &cdr)?;
            out.insert(MethodTag::Cdr, cdr);
        }
        let sic: Vec<YearClustering> = panels
            .iter()
            .map(|p| benchmark_clusters(p, CodeScheme::Sic))
            .collect();
        write_clusters(&dir.join("clusters_sic.csv"), &sic)?;
        out.insert(MethodTag::Sic, sic);
        let bisc: Vec<YearClustering> = panels
            .iter()
            .map(|p| benchmark_clusters(p, CodeScheme::Bisc))
            .collect();
        write_clusters(&dir.join("clusters_bisc.csv"), &bisc)?;
        out.insert(MethodTag::Bisc, bisc);
        if let Some(path) = &config.data.external_clusters {
            let mut external = Vec::new();
            for year in corpus::clustered_years(path)? {
                let Some(panel) = panels.iter().find(|p| p.year == year) else {
                    log::warn!("external clusters for year {year} ignored: year not in panel");
                    continue;
                };
                external.push(corpus::load_external_clustering(path, year, panel)?);
            }
            write_clusters(&dir.join("clusters_external.csv"), &external)?;
            out.insert(MethodTag::External, external);
        }
        Ok(out)
    })?;

    // Evaluation report.
    let methods_evaluated = stage(&dir, "evaluate", || {
        let mut report = EvaluationReport {
            mode_label: mode.label().to_string(),
            ..EvaluationReport::default()
        };
        let mut evaluated = Vec::new();
        for (method, yearly) in &clusterings {
            let mut per_year: BTreeMap<i32, McResult> = BTreeMap::new();
            for clustering in yearly {
                let panel = panels
                    .iter()
                    .find(|p| p.year == clustering.year)
                    .expect("clustering year came from panels");
                match mean_intra_cluster_correlation(clustering, &panel.returns, mode) {
                    Ok(res) => {
                        per_year.insert(clustering.year, res);
                    }
                    Err(peergraph::Error::NoScorableClusters) => {
                        log::warn!("{method} {}: no scorable clusters", clustering.year);
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            if per_year.is_empty() {
                log::warn!("{method}: nothing scorable, method dropped from report");
                continue;
            }
            report.push_method(*method, &per_year)?;
            evaluated.push(method.label().to_string());
        }
        report
            .summary
            .push(("population".to_string(), population_baseline(&panels)?));
        report.write_csv(&dir.join("evaluation.csv"))?;
        Ok(evaluated)
    })?;

    // Pairs-trading backtest per method group.
    if config.trading.enabled {
        stage(&dir, "backtest", || {
            let trading = config.trading_config()?;
            let eg_config = config.engle_granger_config()?;
            let prices_path = config
                .data
                .prices
                .as_ref()
                .ok_or_else(|| anyhow!("trading enabled but data.prices is not set"))?;
            let mut price_report = corpus::LoadReport::default();
            let prices = corpus::load_prices(prices_path, &mut price_report)?;
            let monthly = in_sample_monthly_returns(&panels, &trading);
            let mut summaries = Vec::new();
            for (method, yearly) in &clusterings {
                let summary = backtest_method(
                    &dir, *method, yearly, &monthly, &prices, &trading, &eg_config,
                )?;
                summaries.push(summary);
            }
            backtest::write_backtest_summary(&dir.join("backtest_summary.csv"), &summaries)?;
            Ok(())
        })?;
    }

    // Importance ledgers.
    if config.interp.enabled {
        stage(&dir, "interpret", || {
            let mut reports: Vec<ImportanceReport> = Vec::new();
            for label in &config.interp.methods {
                let tag = match label.as_str() {
                    "CD" => MethodTag::Cd,
                    "CDR" => MethodTag::Cdr,
                    other => bail!("interp method {other:?} is not CD or CDR"),
                };
                let Some(yearly) = clusterings.get(&tag) else {
                    log::warn!("interp: no {label} clustering available");
                    continue;
                };
                for clustering in yearly {
                    let panel = panels
                        .iter()
                        .find(|p| p.year == clustering.year)
                        .expect("clustering year came from panels");
                    let norm: NormalizationStats = graphs[&clustering.year]
                        .graph
                        .norm
                        .expect("graphs are normalized");
                    for cluster in &clustering.clusters {
                        if cluster.members.len() < 2 {
                            continue;
                        }
                        let members: Vec<&SummedFeatureVector> = cluster
                            .members
                            .iter()
                            .filter_map(|c| panel.summed_features.get(c))
                            .collect();
                        if members.len() < 2 {
                            continue;
                        }
                        reports.push(cluster_importance(
                            clustering.year,
                            &format!("{}_{}", label, cluster.id),
                            &members,
                            &model,
                            &norm,
                            config.interp.max_features_per_cluster,
                        )?);
                    }
                }
            }
            write_importance_csv(&dir.join("importance.csv"), &reports)?;
            write_sparsity_csv(&dir.join("sparsity.csv"), &reports)?;
            let counts = feature_cluster_frequency(&reports);
            write_feature_export(&dir.join("feature_export.csv"), &counts)?;
            Ok(())
        })?;
    }

    // Manifest last: a complete run always carries one.
    let manifest = render_manifest(config, &config_hash, &dir)?;
    std::fs::write(dir.join("run.manifest"), manifest)?;

    Ok(RunArtifacts {
        dir,
        years,
        fixed_theta: fixed.as_ref().and_then(|f| f.fixed_theta),
        rolling_thetas: rolling
            .as_ref()
            .map(|r| r.rolling_thetas.clone())
            .unwrap_or_default(),
        methods_evaluated,
        config_hash,
    })
}

#[allow(clippy::too_many_arguments)]
fn backtest_method(
    dir: &Path,
    method: MethodTag,
    yearly: &[YearClustering],
    monthly: &BTreeMap<CompanyId, Vec<f64>>,
    prices: &BTreeMap<CompanyId, PriceSeries>,
    trading: &TradingConfig,
    eg_config: &EngleGrangerConfig,
) -> Result<BacktestSummary> {
    let in_sample_years: Vec<&YearClustering> = yearly
        .iter()
        .filter(|c| {
            let jan = NaiveDate::from_ymd_opt(c.year, 1, 1).unwrap();
            let dec = NaiveDate::from_ymd_opt(c.year, 12, 31).unwrap();
            jan >= trading.in_sample_start && dec <= trading.in_sample_end
        })
        .collect();
    let mut pairs: Vec<(CompanyId, CompanyId)> = in_sample_years
        .iter()
        .flat_map(|c| preselect_pairs(c, monthly, trading))
        .collect();
    pairs.sort();
    pairs.dedup();
    let (passing, skipped) = select_cointegrated(&pairs, prices, trading, eg_config);
    for s in &skipped {
        log::warn!("{method}: pair ({}, {}) skipped: {}", s.pair.0, s.pair.1, s.reason);
    }
    let label_lower = method.label().to_lowercase();
    peergraph::cointegration::write_coint_report(
        &dir.join(format!("cointegration_{label_lower}.csv")),
        &passing,
    )?;
    let mut logs: Vec<PairTradeLog> = Vec::new();
    for coint in &passing {
        let params = match backtest::fit_spread_params(coint, prices, trading) {
            Ok(p) => p,
            Err(peergraph::Error::ZeroVariance(msg)) => {
                log::warn!("{method}: pair excluded: {msg}");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        logs.push(simulate_pair(
            &params,
            (&coint.pair.0, &coint.pair.1),
            prices,
            trading,
        )?);
    }
    backtest::write_trade_logs(&dir.join(format!("trades_{label_lower}.csv")), &logs)?;
    let round_trips = logs.iter().map(|l| l.round_trips).sum();
    let sharpe = if logs.is_empty() {
        log::warn!("{method}: no tradable pairs; Sharpe undefined");
        None
    } else {
        let trajectory = portfolio_trajectory(&logs, trading, method.label())?;
        backtest::write_trajectory(
            &dir.join(format!("trajectory_{label_lower}.csv")),
            &trajectory,
        )?;
        match sharpe_ratio(&trajectory) {
            Ok(s) => Some(s),
            Err(e) => {
                log::warn!("{method}: Sharpe undefined: {e}");
                None
            }
        }
    };
    Ok(BacktestSummary {
        method_label: method.label().to_string(),
        pairs_traded: logs.len(),
        round_trips,
        sharpe,
    })
}

/// Writes `component,variance,ratio,cumulative_ratio` (ratios only when the
/// total is known, i.e. right after a fit).
pub fn write_variance_table(path: &Path, model: &PcaModel) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["component", "variance", "ratio", "cumulative_ratio"])?;
    let ratios = model.explained_variance_ratio();
    let mut cumulative = 0.0;
    for (i, &variance) in model.explained_variance().iter().enumerate() {
        let (ratio, cum) = match &ratios {
            Some(r) => {
                cumulative += r[i];
                (r[i].to_string(), cumulative.to_string())
            }
            None => (String::new(), String::new()),
        };
        writer.write_record([i.to_string().as_str(), &variance.to_string(), &ratio, &cum])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn hex_digest(payload: &str) -> String {
    let hash = Sha256::digest(payload.as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

fn render_manifest(config: &RunConfig, config_hash: &str, dir: &Path) -> Result<String> {
    let mut lines = vec![
        format!("engine=peergraph {}", env!("CARGO_PKG_VERSION")),
        format!("config_hash=sha256:{config_hash}"),
        format!("seed={}", config.seed),
        format!("created_utc={}", chrono::Utc::now().to_rfc3339()),
    ];
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().to_string())
        .filter(|n| n != "run.manifest")
        .collect();
    names.sort();
    for name in names {
        lines.push(format!("artifact={name}"));
    }
    lines.push(String::new());
    Ok(lines.join("\n"))
}
