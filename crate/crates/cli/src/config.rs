//! Declarative run configuration (TOML).
//!
//! Defaults mirror the standard evaluation setup: theta grid
//! {-4.5, ..., -1.0}, 0.95 pre-selection, 1% cointegration cutoff, 1/2-sigma
//! bands, zero costs, in-sample 2002-2013 and out-of-sample 2014-2020,
//! five-year minimum history, pair-mean MC.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use peergraph::backtest::TradingConfig;
use peergraph::calib::ThetaGrid;
use peergraph::cointegration::{EngleGrangerConfig, LagRule};
use peergraph::corpus::{FeaturesFormat, LoadConfig};
use peergraph::metrics::McMode;
use peergraph::sparsefeat::FeatureSpace;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub features: FeaturesConfig,
    #[serde(default)]
    pub pca: PcaConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub trading: TradingSection,
    #[serde(default)]
    pub interp: InterpConfig,
}

fn default_seed() -> u64 {
    42
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub metadata: PathBuf,
    pub returns: PathBuf,
    pub features: PathBuf,
    #[serde(default)]
    pub prices: Option<PathBuf>,
    #[serde(default)]
    pub external_clusters: Option<PathBuf>,
    #[serde(default)]
    pub features_format: String,
    /// Apply log(1+r) to returns on ingest.
    #[serde(default)]
    pub raw_returns: bool,
    /// Companies present in fewer panels are dropped everywhere.
    #[serde(default = "default_min_years")]
    pub min_years: usize,
    #[serde(default = "default_min_return_months")]
    pub min_return_months: u32,
}

fn default_min_years() -> usize {
    5
}

fn default_min_return_months() -> u32 {
    12
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    pub dim: u32,
    pub k_active: u32,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        let space = FeatureSpace::default();
        FeaturesConfig {
            dim: space.dim,
            k_active: space.k_active,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaConfig {
    /// Requested components; capped at min(#documents, dim) at fit time.
    pub n_components: usize,
}

impl Default for PcaConfig {
    fn default() -> Self {
        PcaConfig { n_components: 4000 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub theta_start: f64,
    pub theta_stop: f64,
    pub theta_step: f64,
    /// `fixed`, `rolling`, or `both`.
    pub calibration: String,
    pub rolling_lookback: usize,
    /// `pair_mean` or `paper_literal`.
    pub mc_mode: String,
    /// Emit the per-edge audit CSV.
    pub dump_edges: bool,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            theta_start: -4.5,
            theta_stop: -1.0,
            theta_step: 0.1,
            calibration: "both".to_string(),
            rolling_lookback: 5,
            mc_mode: "pair_mean".to_string(),
            dump_edges: false,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct TradingSection {
    pub enabled: bool,
    pub in_sample_start: String,
    pub in_sample_end: String,
    pub out_of_sample_start: String,
    pub out_of_sample_end: String,
    pub preselect_corr_min: f64,
    pub coint_p_max: f64,
    pub entry_band: f64,
    pub stop_band: f64,
    pub transaction_cost: f64,
    pub initial_cash_per_pair: f64,
    pub min_overlap_days: usize,
    /// 0 applies Schwert's rule.
    pub max_lag: usize,
    /// `aic` or `fixed`.
    pub lag_rule: String,
    pub fixed_lag: usize,
}

impl Default for TradingSection {
    fn default() -> Self {
        let base = TradingConfig::default();
        TradingSection {
            enabled: true,
            in_sample_start: base.in_sample_start.to_string(),
            in_sample_end: base.in_sample_end.to_string(),
            out_of_sample_start: base.out_of_sample_start.to_string(),
            out_of_sample_end: base.out_of_sample_end.to_string(),
            preselect_corr_min: base.preselect_corr_min,
            coint_p_max: base.coint_p_max,
            entry_band: base.entry_band,
            stop_band: base.stop_band,
            transaction_cost: base.transaction_cost,
            initial_cash_per_pair: base.initial_cash_per_pair,
            min_overlap_days: 100,
            max_lag: 0,
            lag_rule: "aic".to_string(),
            fixed_lag: 0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpConfig {
    pub enabled: bool,
    /// 0 scans every active feature of a cluster.
    pub max_features_per_cluster: usize,
    /// Clusterings to explain; any of `CD`, `CDR`.
    pub methods: Vec<String>,
}

impl Default for InterpConfig {
    fn default() -> Self {
        InterpConfig {
            enabled: true,
            max_features_per_cluster: 0,
            methods: vec!["CD".to_string()],
        }
    }
}

/// Calibration variants requested by the config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CalibrationChoice {
    Fixed,
    Rolling,
    Both,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&raw)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.mc_mode()?;
        self.calibration_choice()?;
        self.theta_grid()?;
        self.features_format()?;
        if self.trading.enabled {
            self.trading_config()?;
            self.engle_granger_config()?;
        }
        for m in &self.interp.methods {
            if m != "CD" && m != "CDR" {
                bail!("interp.methods entries must be CD or CDR, got {m:?}");
            }
        }
        Ok(())
    }

    /// Canonical serialized form; its hash identifies the run.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("cannot serialize config")
    }

    pub fn feature_space(&self) -> FeatureSpace {
        FeatureSpace {
            dim: self.features.dim,
            k_active: self.features.k_active,
        }
    }

    pub fn features_format(&self) -> Result<FeaturesFormat> {
        let raw = if self.data.features_format.is_empty() {
            "summed"
        } else {
            self.data.features_format.as_str()
        };
        Ok(raw.parse::<FeaturesFormat>()?)
    }

    pub fn load_config(&self) -> Result<LoadConfig> {
        Ok(LoadConfig {
            feature_space: self.feature_space(),
            features_format: self.features_format()?,
            raw_returns: self.data.raw_returns,
            min_return_months: self.data.min_return_months,
        })
    }

    pub fn mc_mode(&self) -> Result<McMode> {
        Ok(self.clustering.mc_mode.parse::<McMode>()?)
    }

    pub fn calibration_choice(&self) -> Result<CalibrationChoice> {
        match self.clustering.calibration.as_str() {
            "fixed" => Ok(CalibrationChoice::Fixed),
            "rolling" => Ok(CalibrationChoice::Rolling),
            "both" => Ok(CalibrationChoice::Both),
            other => bail!("clustering.calibration must be fixed, rolling, or both, got {other:?}"),
        }
    }

    pub fn theta_grid(&self) -> Result<ThetaGrid> {
        Ok(ThetaGrid::new(
            self.clustering.theta_start,
            self.clustering.theta_stop,
            self.clustering.theta_step,
        )?)
    }

    pub fn trading_config(&self) -> Result<TradingConfig> {
        let date = |label: &str, raw: &str| -> Result<NaiveDate> {
            NaiveDate::parse_from_str(raw, "%Y-%m-%d")
                .with_context(|| format!("trading.{label}: bad date {raw:?}"))
        };
        let config = TradingConfig {
            in_sample_start: date("in_sample_start", &self.trading.in_sample_start)?,
            in_sample_end: date("in_sample_end", &self.trading.in_sample_end)?,
            out_of_sample_start: date("out_of_sample_start", &self.trading.out_of_sample_start)?,
            out_of_sample_end: date("out_of_sample_end", &self.trading.out_of_sample_end)?,
            preselect_corr_min: self.trading.preselect_corr_min,
            coint_p_max: self.trading.coint_p_max,
            entry_band: self.trading.entry_band,
            stop_band: self.trading.stop_band,
            transaction_cost: self.trading.transaction_cost,
            initial_cash_per_pair: self.trading.initial_cash_per_pair,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn engle_granger_config(&self) -> Result<EngleGrangerConfig> {
        let lag_rule = match self.trading.lag_rule.as_str() {
            "aic" => LagRule::Aic,
            "fixed" => LagRule::Fixed(self.trading.fixed_lag),
            other => bail!("trading.lag_rule must be aic or fixed, got {other:?}"),
        };
        Ok(EngleGrangerConfig {
            p_cutoff: self.trading.coint_p_max,
            max_lag: (self.trading.max_lag > 0).then_some(self.trading.max_lag),
            lag_rule,
            min_len: self.trading.min_overlap_days,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let raw = r#"
            output_dir = "out"
            [data]
            metadata = "m.csv"
            returns = "r.csv"
            features = "f.csv"
        "#;
        let config: RunConfig = toml::from_str(raw).unwrap();
        config.validate().unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.pca.n_components, 4000);
        assert_eq!(config.clustering.theta_start, -4.5);
        assert_eq!(config.data.min_years, 5);
        let grid = config.theta_grid().unwrap();
        assert_eq!(grid.values().len(), 36);
        let trading = config.trading_config().unwrap();
        assert_eq!(trading.preselect_corr_min, 0.95);
        assert_eq!(trading.coint_p_max, 0.01);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let raw = r#"
            output_dir = "out"
            typo_field = 1
            [data]
            metadata = "m.csv"
            returns = "r.csv"
            features = "f.csv"
        "#;
        assert!(toml::from_str::<RunConfig>(raw).is_err());
    }

    #[test]
    fn bad_mode_is_rejected() {
        let raw = r#"
            output_dir = "out"
            [data]
            metadata = "m.csv"
            returns = "r.csv"
            features = "f.csv"
            [clustering]
            mc_mode = "geometric"
        "#;
        let config: RunConfig = toml::from_str(raw).unwrap();
        assert!(config.validate().is_err());
    }
}
