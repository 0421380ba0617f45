use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use peergraph::backtest::{
    self, in_sample_monthly_returns, portfolio_trajectory, preselect_pairs, select_cointegrated,
    sharpe_ratio, simulate_pair, BacktestSummary,
};
use peergraph::calib::{calibrate_fixed, calibrate_rolling, ThetaGrid, YearData};
use peergraph::corpus::{self, FeaturesFormat, LoadConfig, YearPanel};
use peergraph::graphcluster::{build_year_graph, cut_mst, MethodTag, YearGraph};
use peergraph::interp;
use peergraph::metrics::{
    mean_intra_cluster_correlation, population_baseline, EvaluationReport, McMode, McResult,
};
use peergraph::pca::{fit_pca, PcaModel};
use peergraph::sparsefeat::{self, FeatureSpace, SummedFeatureVector};
use peergraph::synth::{generate_universe, write_universe_csvs, SynthConfig};
use peergraph_cli::pipeline::{run_pipeline, write_variance_table};
use peergraph_cli::RunConfig;

/// Company-similarity research engine: sparse-feature clustering,
/// return-correlation evaluation, cointegration pairs trading, and cluster
/// importance ledgers.
#[derive(Parser)]
#[command(name = "peergraph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and cross-validate the panel inputs, printing the load report.
    Ingest(IngestArgs),
    /// Token-level feature utilities.
    Features {
        #[command(subcommand)]
        command: FeaturesCommand,
    },
    /// Fit or inspect the global projection.
    Pca {
        #[command(subcommand)]
        command: PcaCommand,
    },
    /// Build year graphs and cut the MSTs at a given threshold.
    Cluster(ClusterArgs),
    /// Select the cut-off threshold (fixed and/or rolling).
    Calibrate(CalibrateArgs),
    /// Score a clusters file by mean intra-cluster correlation.
    Evaluate(EvaluateArgs),
    /// Run the cluster-conditioned pairs-trading backtest.
    Backtest(BacktestArgs),
    /// Produce per-cluster feature-importance ledgers.
    Interpret(InterpretArgs),
    /// Generate a synthetic ground-truth universe.
    Synth(SynthArgs),
    /// Run the full pipeline from a config file.
    Run(RunArgs),
}

/// Panel input flags shared by several subcommands.
#[derive(Args, Clone)]
struct PanelArgs {
    /// Feature activations CSV.
    #[arg(long)]
    features: PathBuf,
    /// Monthly returns CSV.
    #[arg(long)]
    returns: PathBuf,
    /// Company metadata CSV.
    #[arg(long)]
    metadata: PathBuf,
    /// Feature file layout.
    #[arg(long, default_value = "summed")]
    features_format: String,
    /// Feature-space size.
    #[arg(long, default_value_t = 131_072)]
    dim: u32,
    /// Maximum active features per token.
    #[arg(long, default_value_t = 128)]
    k_active: u32,
    /// Returns arrive raw; apply log(1+r) on ingest.
    #[arg(long)]
    raw_returns: bool,
    /// Drop companies present in fewer than this many years.
    #[arg(long, default_value_t = 1)]
    min_years: usize,
}

impl PanelArgs {
    fn space(&self) -> FeatureSpace {
        FeatureSpace {
            dim: self.dim,
            k_active: self.k_active,
        }
    }

    fn load(&self) -> Result<(Vec<YearPanel>, corpus::LoadReport)> {
        let config = LoadConfig {
            feature_space: self.space(),
            features_format: self.features_format.parse::<FeaturesFormat>()?,
            raw_returns: self.raw_returns,
            min_return_months: 12,
        };
        let (panels, mut report) =
            corpus::load_panel(&self.features, &self.returns, &self.metadata, &config)?;
        let (panels, removed) = corpus::filter_min_history(panels, self.min_years)?;
        report.add("companies_removed_min_history", removed as u64);
        Ok((panels, report))
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Also write the report to this path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum FeaturesCommand {
    /// Sum token-level activations into per-document vectors.
    Sum {
        /// Token activations CSV (doc_id,token_index,feature_id,activation).
        #[arg(long)]
        input: PathBuf,
        /// Output summed CSV.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 131_072)]
        dim: u32,
        #[arg(long, default_value_t = 128)]
        k_active: u32,
    },
    /// Histogram of summed activation values.
    Hist {
        /// Summed features CSV.
        #[arg(long)]
        input: PathBuf,
        /// Output histogram CSV (bin_lo,bin_hi,count).
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 131_072)]
        dim: u32,
        #[arg(long, default_value_t = 0.25)]
        bin_width: f64,
        /// Values at or above this pool into the final bin.
        #[arg(long, default_value_t = 50.0)]
        clip_max: f64,
    },
}

#[derive(Subcommand)]
enum PcaCommand {
    /// Fit the global projection on a summed features file.
    Fit {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value = "summed")]
        features_format: String,
        #[arg(long, default_value_t = 131_072)]
        dim: u32,
        #[arg(long, default_value_t = 128)]
        k_active: u32,
        /// Requested components (capped at min(#documents, dim)).
        #[arg(long, default_value_t = 4000)]
        components: usize,
        /// Output model file.
        #[arg(long)]
        model: PathBuf,
        /// Optional variance table CSV.
        #[arg(long)]
        variance_table: Option<PathBuf>,
    },
    /// Print the variance table of a persisted model.
    Info {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Persisted projection model.
    #[arg(long)]
    model: PathBuf,
    /// Cut-off threshold in normalized z-units.
    #[arg(long)]
    theta: f64,
    /// Output clusters CSV (year,cluster_id,company_id).
    #[arg(long)]
    output: PathBuf,
    /// Optional per-edge audit dump.
    #[arg(long)]
    dump_edges: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[arg(long)]
    model: PathBuf,
    /// `fixed`, `rolling`, or `both`.
    #[arg(long, default_value = "fixed")]
    variant: String,
    #[arg(long, default_value_t = -4.5)]
    grid_start: f64,
    #[arg(long, default_value_t = -1.0)]
    grid_stop: f64,
    #[arg(long, default_value_t = 0.1)]
    grid_step: f64,
    #[arg(long, default_value_t = 5)]
    lookback: usize,
    #[arg(long, default_value = "pair_mean")]
    mode: String,
    /// Candidate score table CSV.
    #[arg(long)]
    output: PathBuf,
    /// Rolling series CSV (year,theta_star,mc_oos).
    #[arg(long)]
    series: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Clusters CSV to score.
    #[arg(long)]
    clusters: PathBuf,
    /// Label for the report rows.
    #[arg(long, default_value = "external")]
    method_label: String,
    #[arg(long, default_value = "pair_mean")]
    mode: String,
    /// Also score SIC and BISC benchmark partitions and the population
    /// baseline.
    #[arg(long)]
    benchmarks: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct BacktestArgs {
    /// Clusters CSV defining the candidate universe.
    #[arg(long)]
    clusters: PathBuf,
    /// Daily prices CSV.
    #[arg(long)]
    prices: PathBuf,
    /// Run config TOML supplying the trading parameters and panel paths.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's output_dir).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Label used in the output file names and summary.
    #[arg(long, default_value = "external")]
    method_label: String,
}

#[derive(Args)]
struct InterpretArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[arg(long)]
    model: PathBuf,
    /// Clusters CSV to explain.
    #[arg(long)]
    clusters: PathBuf,
    /// Cap on scanned features per cluster (0 scans all active).
    #[arg(long, default_value_t = 0)]
    max_features: usize,
    /// Output directory for importance.csv, sparsity.csv, feature_export.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the generated CSVs.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    companies: usize,
    #[arg(long, default_value_t = 8)]
    sectors: usize,
    #[arg(long, default_value_t = 2016)]
    start_year: i32,
    #[arg(long, default_value_t = 2020)]
    end_year: i32,
    #[arg(long, default_value_t = 1024)]
    dim: u32,
    #[arg(long, default_value_t = 12)]
    signature_size: usize,
    #[arg(long, default_value_t = 0.3)]
    signature_noise: f64,
    #[arg(long, default_value_t = 40)]
    tokens_per_doc: usize,
    #[arg(long, default_value_t = 1)]
    planted_pairs_per_sector: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Emit `summed` or `tokens` feature layout.
    #[arg(long, default_value = "summed")]
    format: String,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration TOML.
    #[arg(long)]
    config: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Features { command } => cmd_features(command),
        Command::Pca { command } => cmd_pca(command),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Backtest(args) => cmd_backtest(args),
        Command::Interpret(args) => cmd_interpret(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Run(args) => {
            let config = RunConfig::from_file(&args.config)?;
            let artifacts = run_pipeline(&config)?;
            println!("run complete: {}", artifacts.dir.display());
            if let Some(theta) = artifacts.fixed_theta {
                println!("fixed theta* = {theta}");
            }
            for (year, theta) in &artifacts.rolling_thetas {
                println!("rolling theta*[{year}] = {theta}");
            }
            println!("methods evaluated: {}", artifacts.methods_evaluated.join(", "));
            Ok(())
        }
    }
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let (panels, report) = args.panel.load()?;
    print!("{report}");
    println!("panels={}", panels.len());
    for p in &panels {
        println!(
            "year_{}_companies={} year_{}_with_features={}",
            p.year,
            p.records.len(),
            p.year,
            p.summed_features.len()
        );
    }
    if let Some(path) = args.report {
        std::fs::write(&path, report.to_string())
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn cmd_features(command: FeaturesCommand) -> Result<()> {
    match command {
        FeaturesCommand::Sum {
            input,
            output,
            dim,
            k_active,
        } => {
            let space = FeatureSpace { dim, k_active };
            let tokens = sparsefeat::load_token_activations(&input, space)?;
            let mut order = Vec::new();
            let mut by_doc: std::collections::BTreeMap<_, Vec<_>> = Default::default();
            for tok in tokens {
                if !by_doc.contains_key(&tok.doc_id) {
                    order.push(tok.doc_id.clone());
                }
                by_doc.entry(tok.doc_id.clone()).or_default().push(tok);
            }
            let vectors: Vec<SummedFeatureVector> = order
                .iter()
                .map(|doc| sparsefeat::sum_token_features(doc, &by_doc[doc], space))
                .collect::<peergraph::Result<_>>()?;
            sparsefeat::write_summed_features(&output, &vectors)?;
            println!("summed {} documents -> {}", vectors.len(), output.display());
            Ok(())
        }
        FeaturesCommand::Hist {
            input,
            output,
            dim,
            bin_width,
            clip_max,
        } => {
            let space = FeatureSpace { dim, k_active: u32::MAX };
            let vectors = sparsefeat::load_summed_features(&input, space)?;
            let bins = sparsefeat::activation_histogram(&vectors, bin_width, clip_max)?;
            sparsefeat::write_histogram(&output, &bins)?;
            println!(
                "histogram of {} values -> {}",
                bins.iter().map(|b| b.count).sum::<u64>(),
                output.display()
            );
            Ok(())
        }
    }
}

fn cmd_pca(command: PcaCommand) -> Result<()> {
    match command {
        PcaCommand::Fit {
            features,
            features_format,
            dim,
            k_active,
            components,
            model,
            variance_table,
        } => {
            let space = FeatureSpace { dim, k_active };
            let vectors = match features_format.parse::<FeaturesFormat>()? {
                FeaturesFormat::Summed => sparsefeat::load_summed_features(&features, space)?,
                FeaturesFormat::Tokens => {
                    bail!("pca fit expects a summed features file; run `features sum` first")
                }
            };
            let k = components.min(vectors.len()).min(dim as usize).max(1);
            if k < components {
                log::warn!("requested {components} components capped at {k}");
            }
            let fitted = fit_pca(&vectors, k)?;
            fitted.save(&model)?;
            if let Some(path) = &variance_table {
                write_variance_table(path, &fitted)?;
            }
            println!(
                "fitted {} components over {} documents (dim {})",
                fitted.n_components(),
                vectors.len(),
                fitted.dim()
            );
            if let Some(cum) = fitted.cumulative_variance_ratio() {
                println!("cumulative explained variance ratio: {cum:.4}");
            }
            Ok(())
        }
        PcaCommand::Info { model } => {
            let loaded = PcaModel::load(&model)?;
            println!(
                "dim={} n_components={}",
                loaded.dim(),
                loaded.n_components()
            );
            println!("component,variance,retained_share");
            let total: f64 = loaded.explained_variance().iter().sum();
            for (i, &v) in loaded.explained_variance().iter().enumerate() {
                let share = if total > 0.0 { v / total } else { 0.0 };
                println!("{i},{v},{share}");
            }
            Ok(())
        }
    }
}

/// Builds the per-year graphs and calibration inputs shared by the cluster,
/// calibrate, and interpret subcommands.
fn prepare_years(
    panels: &[YearPanel],
    model: &PcaModel,
) -> Result<std::collections::BTreeMap<i32, YearGraph>> {
    let mut graphs = std::collections::BTreeMap::new();
    for panel in panels {
        graphs.insert(panel.year, build_year_graph(panel, model)?);
    }
    Ok(graphs)
}

fn cmd_cluster(args: ClusterArgs) -> Result<()> {
    let (panels, _) = args.panel.load()?;
    let model = PcaModel::load(&args.model)?;
    let graphs = prepare_years(&panels, &model)?;
    let clusterings: Vec<_> = graphs
        .values()
        .map(|g| cut_mst(&g.mst, args.theta, MethodTag::Cd))
        .collect();
    corpus::write_clusters(&args.output, &clusterings)?;
    if let Some(path) = &args.dump_edges {
        let all: Vec<_> = graphs.values().map(|g| g.graph.clone()).collect();
        peergraph::graphcluster::write_edge_dump(path, &all)?;
    }
    for c in &clusterings {
        println!("year {}: {} clusters", c.year, c.clusters.len());
    }
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let (panels, _) = args.panel.load()?;
    let model = PcaModel::load(&args.model)?;
    let graphs = prepare_years(&panels, &model)?;
    let year_data: Vec<YearData> = panels
        .iter()
        .map(|p| YearData {
            year: p.year,
            mst: graphs[&p.year].mst.clone(),
            returns: p.returns.clone(),
        })
        .collect();
    let grid = ThetaGrid::new(args.grid_start, args.grid_stop, args.grid_step)?;
    let mode = args.mode.parse::<McMode>()?;
    let mut results = Vec::new();
    if args.variant == "fixed" || args.variant == "both" {
        let fixed = calibrate_fixed(&grid, &year_data, mode)?;
        println!("fixed theta* = {}", fixed.fixed_theta.unwrap());
        results.push(fixed);
    }
    if args.variant == "rolling" || args.variant == "both" {
        let rolling = calibrate_rolling(&grid, &year_data, args.lookback, mode)?;
        for (year, theta) in &rolling.rolling_thetas {
            println!("rolling theta*[{year}] = {theta}");
        }
        if let Some(path) = &args.series {
            peergraph::calib::write_rolling_series(path, &rolling)?;
        }
        results.push(rolling);
    }
    if results.is_empty() {
        bail!("--variant must be fixed, rolling, or both");
    }
    let refs: Vec<&_> = results.iter().collect();
    peergraph::calib::write_calibration_report(&args.output, &refs)?;
    Ok(())
}

fn load_clusterings_from_csv(
    path: &std::path::Path,
    panels: &[YearPanel],
) -> Result<Vec<peergraph::graphcluster::YearClustering>> {
    let mut out = Vec::new();
    for year in corpus::clustered_years(path)? {
        let panel = panels
            .iter()
            .find(|p| p.year == year)
            .ok_or_else(|| anyhow!("clusters file names year {year}, which is not in the panel"))?;
        out.push(corpus::load_external_clustering(path, year, panel)?);
    }
    Ok(out)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let (panels, _) = args.panel.load()?;
    let mode = args.mode.parse::<McMode>()?;
    let clusterings = load_clusterings_from_csv(&args.clusters, &panels)?;
    let mut report = EvaluationReport {
        mode_label: mode.label().to_string(),
        ..EvaluationReport::default()
    };
    let score = |label: &str,
                     tag: MethodTag,
                     yearly: &[peergraph::graphcluster::YearClustering],
                     report: &mut EvaluationReport|
     -> Result<()> {
        let mut per_year: std::collections::BTreeMap<i32, McResult> = Default::default();
        for clustering in yearly {
            let panel = panels.iter().find(|p| p.year == clustering.year).unwrap();
            match mean_intra_cluster_correlation(clustering, &panel.returns, mode) {
                Ok(res) => {
                    per_year.insert(clustering.year, res);
                }
                Err(peergraph::Error::NoScorableClusters) => {
                    log::warn!("{label} {}: no scorable clusters", clustering.year)
                }
                Err(e) => return Err(e.into()),
            }
        }
        if per_year.is_empty() {
            bail!("{label}: nothing scorable");
        }
        report.push_method(tag, &per_year)?;
        Ok(())
    };
    score(&args.method_label, MethodTag::External, &clusterings, &mut report)?;
    if args.benchmarks {
        let sic: Vec<_> = panels
            .iter()
            .map(|p| corpus::benchmark_clusters(p, corpus::CodeScheme::Sic))
            .collect();
        score("SIC", MethodTag::Sic, &sic, &mut report)?;
        let bisc: Vec<_> = panels
            .iter()
            .map(|p| corpus::benchmark_clusters(p, corpus::CodeScheme::Bisc))
            .collect();
        score("BISC", MethodTag::Bisc, &bisc, &mut report)?;
        report
            .summary
            .push(("population".to_string(), population_baseline(&panels)?));
    }
    report.write_csv(&args.output)?;
    for (method, mc) in &report.summary {
        println!("{method}: overall MC = {mc}");
    }
    Ok(())
}

fn cmd_backtest(args: BacktestArgs) -> Result<()> {
    let config = RunConfig::from_file(&args.config)?;
    let trading = config.trading_config()?;
    let eg_config = config.engle_granger_config()?;
    let load_config = config.load_config()?;
    let (panels, _) = corpus::load_panel(
        &config.data.features,
        &config.data.returns,
        &config.data.metadata,
        &load_config,
    )?;
    let (panels, _) = corpus::filter_min_history(panels, config.data.min_years)?;
    let clusterings = load_clusterings_from_csv(&args.clusters, &panels)?;
    let mut price_report = corpus::LoadReport::default();
    let prices = corpus::load_prices(&args.prices, &mut price_report)?;
    let out_dir = args.output.unwrap_or_else(|| config.output_dir.clone());
    std::fs::create_dir_all(&out_dir)?;

    let monthly = in_sample_monthly_returns(&panels, &trading);
    let mut pairs: Vec<_> = clusterings
        .iter()
        .filter(|c| {
            let jan = chrono::NaiveDate::from_ymd_opt(c.year, 1, 1).unwrap();
            let dec = chrono::NaiveDate::from_ymd_opt(c.year, 12, 31).unwrap();
            jan >= trading.in_sample_start && dec <= trading.in_sample_end
        })
        .flat_map(|c| preselect_pairs(c, &monthly, &trading))
        .collect();
    pairs.sort();
    pairs.dedup();
    println!("pre-selected pairs: {}", pairs.len());
    let (passing, skipped) = select_cointegrated(&pairs, &prices, &trading, &eg_config);
    println!("cointegrated pairs: {} ({} skipped)", passing.len(), skipped.len());
    let label = args.method_label.to_lowercase();
    peergraph::cointegration::write_coint_report(
        &out_dir.join(format!("cointegration_{label}.csv")),
        &passing,
    )?;
    let mut logs = Vec::new();
    for coint in &passing {
        match backtest::fit_spread_params(coint, &prices, &trading) {
            Ok(params) => logs.push(simulate_pair(
                &params,
                (&coint.pair.0, &coint.pair.1),
                &prices,
                &trading,
            )?),
            Err(peergraph::Error::ZeroVariance(msg)) => log::warn!("pair excluded: {msg}"),
            Err(e) => return Err(e.into()),
        }
    }
    backtest::write_trade_logs(&out_dir.join(format!("trades_{label}.csv")), &logs)?;
    let sharpe = if logs.is_empty() {
        None
    } else {
        let trajectory = portfolio_trajectory(&logs, &trading, &args.method_label)?;
        backtest::write_trajectory(&out_dir.join(format!("trajectory_{label}.csv")), &trajectory)?;
        sharpe_ratio(&trajectory).ok()
    };
    let summary = BacktestSummary {
        method_label: args.method_label.clone(),
        pairs_traded: logs.len(),
        round_trips: logs.iter().map(|l| l.round_trips).sum(),
        sharpe,
    };
    backtest::write_backtest_summary(&out_dir.join("backtest_summary.csv"), &[summary])?;
    match sharpe {
        Some(s) => println!("sharpe = {s}"),
        None => println!("sharpe = undefined"),
    }
    Ok(())
}

// Importance ledgers for an arbitrary clusters file.
fn cmd_interpret(args: InterpretArgs) -> Result<()> {
    let (panels, _) = args.panel.load()?;
    let model = PcaModel::load(&args.model)?;
    let graphs = prepare_years(&panels, &model)?;
    let clusterings = load_clusterings_from_csv(&args.clusters, &panels)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let mut reports = Vec::new();
    for clustering in &clusterings {
        let panel = panels.iter().find(|p| p.year == clustering.year).unwrap();
        let norm = graphs[&clustering.year]
            .graph
            .norm
            .expect("graphs are normalized");
        for cluster in &clustering.clusters {
            let members: Vec<&SummedFeatureVector> = cluster
                .members
                .iter()
                .filter_map(|c| panel.summed_features.get(c))
                .collect();
            if members.len() < 2 {
                continue;
            }
            reports.push(interp::cluster_importance(
                clustering.year,
                &cluster.id,
                &members,
                &model,
                &norm,
                args.max_features,
            )?);
        }
    }
    interp::write_importance_csv(&args.out_dir.join("importance.csv"), &reports)?;
    interp::write_sparsity_csv(&args.out_dir.join("sparsity.csv"), &reports)?;
    let counts = interp::feature_cluster_frequency(&reports);
    interp::write_feature_export(&args.out_dir.join("feature_export.csv"), &counts)?;
    let (_, median) = interp::sparsity_distribution(&reports, 0.01)?;
    println!(
        "{} cluster reports, median sparsity ratio {median}",
        reports.len()
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_companies: args.companies,
        n_sectors: args.sectors,
        start_year: args.start_year,
        end_year: args.end_year,
        feature_dim: args.dim,
        signature_size: args.signature_size,
        signature_noise: args.signature_noise,
        tokens_per_doc: args.tokens_per_doc,
        planted_pairs_per_sector: args.planted_pairs_per_sector,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let universe = generate_universe(&config)?;
    let format = args.format.parse::<FeaturesFormat>()?;
    write_universe_csvs(&universe, &args.out, format)?;
    println!(
        "wrote universe: {} companies, {} sectors, years {}-{}, {} planted pairs -> {}",
        config.n_companies,
        config.n_sectors,
        config.start_year,
        config.end_year,
        universe.truth.planted_pairs.len(),
        args.out.display()
    );
    Ok(())
}
