//! Ground-truth synthetic universes: sector-structured sparse features,
//! factor-driven returns, and planted cointegrated price pairs.
//!
//! Every company belongs to one sector for its whole life. Sector
//! membership shows up twice: in the features (each sector owns a disjoint
//! block of signature features that its companies activate with
//! company-specific loadings) and in the returns (a shared daily sector
//! factor plus idiosyncratic noise). Prices exponentiate the cumulative
//! daily log returns and monthly returns aggregate the same dailies, so the
//! backtest and the correlation metric see one consistent world.
//!
//! Planted pairs are generated in price levels instead: the second leg is a
//! slow random walk and the first is an affine function of it plus a
//! stationary AR(1) disturbance, which is exactly the structure the
//! Engle-Granger test is built to detect.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal};

use crate::corpus::{self, CompanyId, CompanyRecord, PriceSeries, ReturnSeries, YearPanel};
use crate::error::{Error, Result};
use crate::sparsefeat::{
    sum_token_features, DocId, FeatureId, FeatureSpace, SummedFeatureVector,
    TokenFeatureActivations,
};

/// Generator knobs. `signature_noise` scales everything unrelated to the
/// sector signal: per-company identity features and per-token transient
/// activations.
#[derive(Clone, Copy, Debug)]
pub struct SynthConfig {
    pub n_companies: usize,
    pub n_sectors: usize,
    pub start_year: i32,
    /// Inclusive.
    pub end_year: i32,
    pub feature_dim: u32,
    /// Signature features per sector.
    pub signature_size: usize,
    pub signature_noise: f64,
    /// Daily sector-factor volatility (log-return units).
    pub factor_vol: f64,
    /// Daily idiosyncratic volatility.
    pub idio_vol: f64,
    pub tokens_per_doc: usize,
    pub planted_pairs_per_sector: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_companies: 200,
            n_sectors: 8,
            start_year: 2016,
            end_year: 2020,
            feature_dim: 1024,
            signature_size: 12,
            signature_noise: 0.3,
            factor_vol: 0.012,
            idio_vol: 0.007,
            tokens_per_doc: 40,
            planted_pairs_per_sector: 1,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sectors == 0 || self.n_companies < self.n_sectors {
            return Err(Error::Config(format!(
                "need n_sectors in [1, n_companies]: {} sectors, {} companies",
                self.n_sectors, self.n_companies
            )));
        }
        if self.signature_size * self.n_sectors > self.feature_dim as usize {
            return Err(Error::Config(format!(
                "signature blocks exceed the feature space: {} x {} > {}",
                self.signature_size, self.n_sectors, self.feature_dim
            )));
        }
        if self.start_year > self.end_year {
            return Err(Error::Config("start_year must not exceed end_year".to_string()));
        }
        if self.n_companies / self.n_sectors < 2 * self.planted_pairs_per_sector {
            return Err(Error::Config(
                "not enough companies per sector for the planted pairs".to_string(),
            ));
        }
        Ok(())
    }

    pub fn feature_space(&self) -> FeatureSpace {
        FeatureSpace {
            dim: self.feature_dim,
            k_active: 128,
        }
    }

    pub fn years(&self) -> Vec<i32> {
        (self.start_year..=self.end_year).collect()
    }
}

/// What the generator knows and the pipeline must rediscover.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    /// Sector index per company (constant across years).
    pub sector_of: BTreeMap<CompanyId, usize>,
    /// Signature feature set per sector.
    pub signatures: Vec<BTreeSet<FeatureId>>,
    pub planted_pairs: Vec<(CompanyId, CompanyId)>,
}

/// A generated world: panels, prices, the truth behind them, and the raw
/// token activations the summed vectors came from.
#[derive(Clone, Debug)]
pub struct Universe {
    pub panels: Vec<YearPanel>,
    pub prices: BTreeMap<CompanyId, PriceSeries>,
    pub truth: GroundTruth,
    pub tokens: Vec<TokenFeatureActivations>,
}

/// Representative SIC code per sector; sectors spread over the twelve BISC
/// divisions, wrapping into neighboring codes of the same division beyond
/// twelve sectors.
pub fn sector_sic_code(sector: usize) -> u16 {
    const BASES: [u16; 12] = [
        100, 1000, 1500, 2000, 4000, 5000, 5200, 6000, 7000, 9100, 9900, 1800,
    ];
    BASES[sector % 12] + 10 * (sector / 12) as u16
}

/// Sector sizes alternate around the mean (roughly -16%/+16%), yielding a
/// mildly heterogeneous size distribution; contiguous company blocks map to
/// sectors in id order.
fn assign_sectors(n_companies: usize, n_sectors: usize) -> Vec<usize> {
    let base = n_companies / n_sectors;
    let spread = base / 6;
    let mut sizes: Vec<usize> = (0..n_sectors)
        .map(|s| {
            if s % 2 == 0 {
                base - spread
            } else {
                base + spread
            }
        })
        .collect();
    let assigned: usize = sizes.iter().sum();
    // Remainder (and odd-sector imbalance) lands on the last sector.
    let last = sizes.len() - 1;
    sizes[last] += n_companies - assigned.min(n_companies);
    let mut out = Vec::with_capacity(n_companies);
    for (s, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            if out.len() < n_companies {
                out.push(s);
            }
        }
    }
    while out.len() < n_companies {
        out.push(n_sectors - 1);
    }
    out
}

fn weekdays(start_year: i32, end_year: i32) -> Vec<NaiveDate> {
    let mut out = Vec::new();
    let mut d = NaiveDate::from_ymd_opt(start_year, 1, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(end_year, 12, 31).unwrap();
    while d <= end {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().unwrap();
    }
    out
}

struct CompanyProfile {
    sector: usize,
    /// Loading per signature feature of the company's sector.
    signature_loadings: Vec<f64>,
    /// Persistent idiosyncratic features.
    identity: Vec<FeatureId>,
    initial_price: f64,
}

/// Per-company count of persistent identity features.
const IDENTITY_FEATURES: usize = 16;
/// Identity loading scale relative to `signature_noise`.
const IDENTITY_SCALE: f64 = 2.0;
/// Transient activations per token.
const TRANSIENTS_PER_TOKEN: usize = 2;
/// Fraction of tokens a signature feature fires on.
const P_SIGNATURE: f64 = 0.55;
/// Fraction of tokens an identity feature fires on.
const P_IDENTITY: f64 = 0.35;
/// Mean magnitude of a single activation.
const ACTIVATION_MEAN: f64 = 0.7;
/// Relative jitter of each document's realized signature/identity sums.
const DOC_JITTER: f64 = 0.005;
/// Transient magnitude scale relative to `signature_noise`.
const TRANSIENT_SCALE: f64 = 0.35;

/// Planted-pair dynamics: slow level random walk plus an AR(1) spread.
const PLANT_WALK_STEP: f64 = 0.30;
const PLANT_SPREAD_PHI: f64 = 0.90;
const PLANT_SPREAD_SIGMA: f64 = 0.20;

/// Generates a full universe from the config. The same seed reproduces the
/// same universe byte for byte.
pub fn generate_universe(config: &SynthConfig) -> Result<Universe> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let space = config.feature_space();
    let exp = Exp::new(1.0 / ACTIVATION_MEAN).expect("positive rate");
    let years = config.years();
    let calendar = weekdays(config.start_year, config.end_year);
    let n = config.n_companies;

    let company_ids: Vec<CompanyId> = (0..n).map(|i| CompanyId(format!("C{i:04}"))).collect();
    let sector_of_idx = assign_sectors(n, config.n_sectors);
    let signatures: Vec<BTreeSet<FeatureId>> = (0..config.n_sectors)
        .map(|s| {
            let lo = (s * config.signature_size) as u32;
            (lo..lo + config.signature_size as u32).collect()
        })
        .collect();
    let noise_pool_start = (config.n_sectors * config.signature_size) as u32;

    // Persistent per-company structure. Identity dims are dealt round-robin
    // from the noise pool, so companies of one sector never share one (the
    // pool cycles far slower than sector blocks).
    let pool_size = (config.feature_dim - noise_pool_start) as usize;
    let identity_count = IDENTITY_FEATURES.min(pool_size);
    let identity_slots = (pool_size / identity_count.max(1)).max(1);
    let mut profiles = Vec::with_capacity(n);
    for (i, &sector) in sector_of_idx.iter().enumerate() {
        let signature_loadings: Vec<f64> = (0..config.signature_size)
            .map(|_| rng.random_range(0.95..1.05))
            .collect();
        let slot = i % identity_slots;
        let identity: Vec<FeatureId> = (0..identity_count)
            .map(|k| noise_pool_start + ((slot * identity_count + k) % pool_size) as u32)
            .collect();
        profiles.push(CompanyProfile {
            sector,
            signature_loadings,
            identity,
            initial_price: rng.random_range(40.0..160.0),
        });
    }

    // Planted pairs: last 2k companies of each sector.
    let mut members_by_sector: Vec<Vec<usize>> = vec![Vec::new(); config.n_sectors];
    for (i, p) in profiles.iter().enumerate() {
        members_by_sector[p.sector].push(i);
    }
    let mut planted_pairs = Vec::new();
    let mut planted_role: BTreeMap<usize, (usize, bool)> = BTreeMap::new(); // company -> (pair idx, is_dependent_leg)
    for members in &members_by_sector {
        if members.len() < 2 * config.planted_pairs_per_sector {
            return Err(Error::Config(format!(
                "sector of {} companies cannot host {} planted pairs",
                members.len(),
                config.planted_pairs_per_sector
            )));
        }
        for k in 0..config.planted_pairs_per_sector {
            let b = members[members.len() - 1 - 2 * k];
            let a = members[members.len() - 2 - 2 * k];
            let idx = planted_pairs.len();
            planted_pairs.push((company_ids[a].clone(), company_ids[b].clone()));
            planted_role.insert(a, (idx, true));
            planted_role.insert(b, (idx, false));
        }
    }

    // Daily sector factors.
    let drift = 0.0002;
    let factor_dist = Normal::new(0.0, config.factor_vol).expect("positive vol");
    let idio_dist = Normal::new(0.0, config.idio_vol).expect("positive vol");
    let n_days = calendar.len();
    let mut sector_factor = vec![vec![0.0f64; n_days]; config.n_sectors];
    for factors in &mut sector_factor {
        for v in factors.iter_mut() {
            *v = drift + factor_dist.sample(&mut rng);
        }
    }

    // Planted price paths, pairwise.
    let walk_dist = Normal::new(0.0, PLANT_WALK_STEP).expect("positive step");
    let eta = PLANT_SPREAD_SIGMA * (1.0 - PLANT_SPREAD_PHI * PLANT_SPREAD_PHI).sqrt();
    let eta_dist = Normal::new(0.0, eta).expect("positive sigma");
    struct PlantedPaths {
        anchor_a: f64,
        anchor_b: f64,
        path_a: Vec<f64>,
        path_b: Vec<f64>,
    }
    let mut planted_paths = Vec::with_capacity(planted_pairs.len());
    for _ in &planted_pairs {
        let level0 = rng.random_range(150.0..250.0);
        let alpha = rng.random_range(5.0..20.0);
        let beta = rng.random_range(0.7..1.3);
        let mut level = level0;
        let mut spread = 0.0;
        let mut path_a = Vec::with_capacity(n_days);
        let mut path_b = Vec::with_capacity(n_days);
        for _ in 0..n_days {
            level = (level + walk_dist.sample(&mut rng)).max(1.0);
            spread = PLANT_SPREAD_PHI * spread + eta_dist.sample(&mut rng);
            path_b.push(level);
            path_a.push((alpha + beta * level + spread).max(1.0));
        }
        planted_paths.push(PlantedPaths {
            anchor_a: alpha + beta * level0,
            anchor_b: level0,
            path_a,
            path_b,
        });
    }

    // Prices and monthly returns.
    let mut prices = BTreeMap::new();
    let mut monthly: BTreeMap<(usize, i32), [f64; 12]> = BTreeMap::new();
    for (i, profile) in profiles.iter().enumerate() {
        let (anchor, path): (f64, Vec<f64>) = match planted_role.get(&i) {
            Some(&(pair_idx, is_a)) => {
                let paths = &planted_paths[pair_idx];
                if is_a {
                    (paths.anchor_a, paths.path_a.clone())
                } else {
                    (paths.anchor_b, paths.path_b.clone())
                }
            }
            None => {
                let mut level = profile.initial_price;
                let mut path = Vec::with_capacity(n_days);
                for d in 0..n_days {
                    let r = sector_factor[profile.sector][d] + idio_dist.sample(&mut rng);
                    level *= r.exp();
                    path.push(level);
                }
                (profile.initial_price, path)
            }
        };
        // Monthly log returns off month-end closes; the first month of the
        // first year anchors on the inception price.
        let mut prev_close = anchor;
        for (d, date) in calendar.iter().enumerate() {
            let is_month_end = d + 1 == n_days || calendar[d + 1].month() != date.month();
            if is_month_end {
                let r = (path[d] / prev_close).ln();
                let slot = monthly.entry((i, date.year())).or_insert([f64::NAN; 12]);
                slot[(date.month() - 1) as usize] = r;
                prev_close = path[d];
            }
        }
        let observations: Vec<(NaiveDate, f64)> =
            calendar.iter().copied().zip(path.iter().copied()).collect();
        prices.insert(
            company_ids[i].clone(),
            PriceSeries::new(company_ids[i].clone(), observations)?,
        );
    }

    // Features. Signature and identity sums are concentrated around their
    // per-company bases (small per-document jitter); transient activations
    // carry exponential magnitudes and land on uniform random features. The
    // doc's token-level form spreads each persistent feature evenly over its
    // firing tokens, so sums are exact and every per-activation magnitude
    // sits near the single-activation scale.
    let tokens_per_doc = config.tokens_per_doc;
    let sig_tokens = ((tokens_per_doc as f64 * P_SIGNATURE).round() as usize).max(1);
    let id_tokens = ((tokens_per_doc as f64 * P_IDENTITY).round() as usize).max(1);
    let sig_base = ACTIVATION_MEAN * sig_tokens as f64;
    let id_base = ACTIVATION_MEAN * id_tokens as f64 * config.signature_noise * IDENTITY_SCALE;
    let mut tokens = Vec::new();
    let mut summed: BTreeMap<(usize, i32), SummedFeatureVector> = BTreeMap::new();
    for (i, profile) in profiles.iter().enumerate() {
        let signature: Vec<FeatureId> = signatures[profile.sector].iter().copied().collect();
        for &year in &years {
            let doc_id = DocId(corpus::doc_id_for(&company_ids[i], year));
            let mut token_entries: Vec<Vec<(FeatureId, f64)>> = vec![Vec::new(); tokens_per_doc];
            for (k, &f) in signature.iter().enumerate() {
                let jitter = 1.0 + DOC_JITTER * rng.random_range(-1.0..1.0);
                let value = (sig_base * profile.signature_loadings[k] * jitter).max(1e-9);
                for entries in token_entries.iter_mut().take(sig_tokens) {
                    entries.push((f, value / sig_tokens as f64));
                }
            }
            for &f in &profile.identity {
                let jitter = 1.0 + DOC_JITTER * rng.random_range(-1.0..1.0);
                let value = (id_base * jitter).max(1e-9);
                for entries in token_entries.iter_mut().take(id_tokens) {
                    entries.push((f, value / id_tokens as f64));
                }
            }
            for t in 0..tokens_per_doc {
                let persistent: BTreeSet<FeatureId> =
                    token_entries[t].iter().map(|&(f, _)| f).collect();
                let mut seen = persistent;
                for _ in 0..TRANSIENTS_PER_TOKEN {
                    let f = rng.random_range(0..config.feature_dim);
                    let mag: f64 = exp.sample(&mut rng) * config.signature_noise * TRANSIENT_SCALE;
                    if seen.insert(f) {
                        token_entries[t].push((f, mag.max(1e-9)));
                    }
                }
            }
            let doc_tokens: Vec<TokenFeatureActivations> = token_entries
                .into_iter()
                .enumerate()
                .filter(|(_, entries)| !entries.is_empty())
                .map(|(t, entries)| TokenFeatureActivations {
                    doc_id: doc_id.clone(),
                    token_index: t as u32,
                    entries,
                })
                .collect();
            let vector = sum_token_features(&doc_id, &doc_tokens, space)?;
            summed.insert((i, year), vector);
            tokens.extend(doc_tokens);
        }
    }

    // Assemble panels.
    let mut panels = Vec::with_capacity(years.len());
    for &year in &years {
        let mut records = BTreeMap::new();
        let mut returns = BTreeMap::new();
        let mut features = BTreeMap::new();
        for (i, profile) in profiles.iter().enumerate() {
            let company = company_ids[i].clone();
            let values = monthly[&(i, year)];
            debug_assert!(values.iter().all(|v| v.is_finite()));
            records.insert(
                company.clone(),
                CompanyRecord::new(
                    company.clone(),
                    format!("T{i:04}"),
                    year,
                    sector_sic_code(profile.sector),
                )?,
            );
            returns.insert(
                company.clone(),
                ReturnSeries {
                    company_id: company.clone(),
                    year,
                    values,
                },
            );
            features.insert(company.clone(), summed[&(i, year)].clone());
        }
        panels.push(YearPanel {
            year,
            records,
            returns,
            summed_features: features,
        });
    }

    let sector_of: BTreeMap<CompanyId, usize> = company_ids
        .iter()
        .cloned()
        .zip(sector_of_idx.iter().copied())
        .collect();
    Ok(Universe {
        panels,
        prices,
        truth: GroundTruth {
            sector_of,
            signatures,
            planted_pairs,
        },
        tokens,
    })
}

/// Chance-corrected agreement of two labelings over the same element set.
pub fn adjusted_rand_index<K: Ord>(
    labels_a: &BTreeMap<K, usize>,
    labels_b: &BTreeMap<K, usize>,
) -> Result<f64> {
    if labels_a.len() != labels_b.len()
        || !labels_a.keys().zip(labels_b.keys()).all(|(x, y)| x == y)
    {
        return Err(Error::Validation(
            "adjusted Rand index needs identical element sets".to_string(),
        ));
    }
    let n = labels_a.len();
    if n < 2 {
        return Err(Error::InsufficientData(
            "adjusted Rand index needs at least 2 elements".to_string(),
        ));
    }
    let mut contingency: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, f64> = BTreeMap::new();
    for (key, &a) in labels_a {
        let b = labels_b[key];
        *contingency.entry((a, b)).or_insert(0.0) += 1.0;
        *rows.entry(a).or_insert(0.0) += 1.0;
        *cols.entry(b).or_insert(0.0) += 1.0;
    }
    let comb2 = |x: f64| x * (x - 1.0) / 2.0;
    let sum_ij: f64 = contingency.values().map(|&v| comb2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| comb2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| comb2(v)).sum();
    let total = comb2(n as f64);
    let expected = sum_a * sum_b / total;
    let max_index = (sum_a + sum_b) / 2.0;
    let denom = max_index - expected;
    if denom == 0.0 {
        // Both partitions trivial; they agree iff the contingency is exact.
        return Ok(if (sum_ij - expected).abs() < 1e-12 && sum_a == sum_b {
            1.0
        } else {
            0.0
        });
    }
    Ok((sum_ij - expected) / denom)
}

/// Ground-truth sector labels restricted to one year's panel companies.
pub fn sector_labels(truth: &GroundTruth, panel: &YearPanel) -> BTreeMap<CompanyId, usize> {
    panel
        .records
        .keys()
        .map(|c| (c.clone(), truth.sector_of[c]))
        .collect()
}

/// Writes the universe in the exact CSV formats the loader consumes, plus
/// `ground_truth.csv` (`company_id,year,sector_id,planted_pair_with`).
pub fn write_universe_csvs(
    universe: &Universe,
    dir: &Path,
    format: corpus::FeaturesFormat,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let open = |name: &str| -> Result<csv::Writer<std::fs::File>> {
        let path = dir.join(name);
        csv::Writer::from_path(&path).map_err(|e| Error::Csv(e))
    };

    let mut meta = open("metadata.csv")?;
    meta.write_record(["company_id", "ticker", "year", "sic_code"])?;
    for panel in &universe.panels {
        for record in panel.records.values() {
            meta.write_record([
                record.company_id.as_str(),
                &record.ticker,
                &record.year.to_string(),
                &record.sic_code.to_string(),
            ])?;
        }
    }
    meta.flush().map_err(|e| Error::io(dir.join("metadata.csv"), e))?;

    let mut returns = open("returns.csv")?;
    returns.write_record(["company_id", "year", "month", "log_return"])?;
    for panel in &universe.panels {
        for series in panel.returns.values() {
            for (m, v) in series.values.iter().enumerate() {
                returns.write_record([
                    series.company_id.as_str(),
                    &series.year.to_string(),
                    &(m + 1).to_string(),
                    &v.to_string(),
                ])?;
            }
        }
    }
    returns
        .flush()
        .map_err(|e| Error::io(dir.join("returns.csv"), e))?;

    let mut prices = open("prices.csv")?;
    prices.write_record(["company_id", "date", "adj_close"])?;
    for series in universe.prices.values() {
        for &(date, px) in &series.observations {
            prices.write_record([
                series.company_id.as_str(),
                &date.to_string(),
                &px.to_string(),
            ])?;
        }
    }
    prices
        .flush()
        .map_err(|e| Error::io(dir.join("prices.csv"), e))?;

    match format {
        corpus::FeaturesFormat::Summed => {
            let vectors: Vec<SummedFeatureVector> = universe
                .panels
                .iter()
                .flat_map(|p| p.summed_features.values().cloned())
                .collect();
            crate::sparsefeat::write_summed_features(&dir.join("features.csv"), &vectors)?;
        }
        corpus::FeaturesFormat::Tokens => {
            crate::sparsefeat::write_token_activations(&dir.join("features.csv"), &universe.tokens)?;
        }
    }

    let planted_partner: BTreeMap<&CompanyId, &CompanyId> = universe
        .truth
        .planted_pairs
        .iter()
        .flat_map(|(a, b)| [(a, b), (b, a)])
        .collect();
    let mut truth = open("ground_truth.csv")?;
    truth.write_record(["company_id", "year", "sector_id", "planted_pair_with"])?;
    for panel in &universe.panels {
        for company in panel.records.keys() {
            truth.write_record([
                company.as_str(),
                &panel.year.to_string(),
                &universe.truth.sector_of[company].to_string(),
                planted_partner
                    .get(company)
                    .map(|p| p.as_str())
                    .unwrap_or(""),
            ])?;
        }
    }
    truth
        .flush()
        .map_err(|e| Error::io(dir.join("ground_truth.csv"), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SynthConfig {
        SynthConfig {
            n_companies: 24,
            n_sectors: 4,
            start_year: 2018,
            end_year: 2019,
            feature_dim: 256,
            tokens_per_doc: 12,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn one_sector_is_one_ground_truth_cluster() {
        let config = SynthConfig {
            n_sectors: 1,
            n_companies: 8,
            feature_dim: 128,
            ..small_config()
        };
        let universe = generate_universe(&config).unwrap();
        let sectors: BTreeSet<usize> = universe.truth.sector_of.values().copied().collect();
        assert_eq!(sectors.len(), 1);
    }

    #[test]
    fn labels_cover_all_companies() {
        let universe = generate_universe(&small_config()).unwrap();
        for panel in &universe.panels {
            for company in panel.records.keys() {
                assert!(universe.truth.sector_of.contains_key(company));
            }
        }
    }

    #[test]
    fn same_seed_reproduces_identical_csvs() {
        let config = small_config();
        let a = generate_universe(&config).unwrap();
        let b = generate_universe(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let da = dir.path().join("a");
        let db = dir.path().join("b");
        write_universe_csvs(&a, &da, corpus::FeaturesFormat::Summed).unwrap();
        write_universe_csvs(&b, &db, corpus::FeaturesFormat::Summed).unwrap();
        for name in [
            "metadata.csv",
            "returns.csv",
            "prices.csv",
            "features.csv",
            "ground_truth.csv",
        ] {
            let ba = std::fs::read(da.join(name)).unwrap();
            let bb = std::fs::read(db.join(name)).unwrap();
            assert_eq!(ba, bb, "{name} differs across identical seeds");
        }
    }

    #[test]
    fn panels_are_loadable_and_consistent() {
        let config = small_config();
        let universe = generate_universe(&config).unwrap();
        assert_eq!(universe.panels.len(), 2);
        for panel in &universe.panels {
            assert_eq!(panel.records.len(), config.n_companies);
            assert_eq!(panel.returns.len(), config.n_companies);
            assert_eq!(panel.summed_features.len(), config.n_companies);
            for series in panel.returns.values() {
                assert!(series.values.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn monthly_returns_match_month_end_prices() {
        let config = small_config();
        let universe = generate_universe(&config).unwrap();
        let company = CompanyId::from("C0003");
        let series = &universe.prices[&company];
        // February 2018 return equals log(feb close / jan close).
        let close_of_month = |year: i32, month: u32| {
            series
                .observations
                .iter()
                .filter(|(d, _)| d.year() == year && d.month() == month)
                .next_back()
                .unwrap()
                .1
        };
        let expect = (close_of_month(2018, 2) / close_of_month(2018, 1)).ln();
        let got = universe.panels[0].returns[&company].values[1];
        assert!((expect - got).abs() < 1e-12);
    }

    #[test]
    fn round_trip_through_loader() {
        let config = small_config();
        let universe = generate_universe(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_universe_csvs(&universe, dir.path(), corpus::FeaturesFormat::Summed).unwrap();
        let load_cfg = corpus::LoadConfig {
            feature_space: config.feature_space(),
            ..corpus::LoadConfig::default()
        };
        let (panels, report) = corpus::load_panel(
            &dir.path().join("features.csv"),
            &dir.path().join("returns.csv"),
            &dir.path().join("metadata.csv"),
            &load_cfg,
        )
        .unwrap();
        assert_eq!(panels.len(), universe.panels.len());
        assert_eq!(report.get("metadata_rows_dropped_missing_returns"), 0);
        for (loaded, original) in panels.iter().zip(&universe.panels) {
            assert_eq!(loaded.records, original.records);
            for (c, s) in &original.summed_features {
                let l = &loaded.summed_features[c];
                assert_eq!(l.entries().len(), s.entries().len());
                for (a, b) in l.entries().iter().zip(s.entries()) {
                    assert_eq!(a.0, b.0);
                    assert!((a.1 - b.1).abs() < 1e-9 * b.1.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn tokens_format_round_trips_to_same_sums() {
        let config = SynthConfig {
            tokens_per_doc: 8,
            ..small_config()
        };
        let universe = generate_universe(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_universe_csvs(&universe, dir.path(), corpus::FeaturesFormat::Tokens).unwrap();
        let load_cfg = corpus::LoadConfig {
            feature_space: config.feature_space(),
            features_format: corpus::FeaturesFormat::Tokens,
            ..corpus::LoadConfig::default()
        };
        let (panels, _) = corpus::load_panel(
            &dir.path().join("features.csv"),
            &dir.path().join("returns.csv"),
            &dir.path().join("metadata.csv"),
            &load_cfg,
        )
        .unwrap();
        for (loaded, original) in panels.iter().zip(&universe.panels) {
            for (c, s) in &original.summed_features {
                let l = &loaded.summed_features[c];
                assert_eq!(l.entries().len(), s.entries().len());
                for (a, b) in l.entries().iter().zip(s.entries()) {
                    assert!((a.1 - b.1).abs() < 1e-9 * b.1.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn ari_identical_labelings() {
        let labels: BTreeMap<u32, usize> = (0..30).map(|i| (i, (i % 3) as usize)).collect();
        assert!((adjusted_rand_index(&labels, &labels).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_singletons_vs_one_cluster_nonpositive() {
        let singles: BTreeMap<u32, usize> = (0..20).map(|i| (i, i as usize)).collect();
        let one: BTreeMap<u32, usize> = (0..20).map(|i| (i, 0)).collect();
        assert!(adjusted_rand_index(&singles, &one).unwrap() <= 0.0);
    }

    #[test]
    fn ari_independent_labelings_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let a: BTreeMap<u32, usize> = (0..500).map(|i| (i, rng.random_range(0..8))).collect();
        let b: BTreeMap<u32, usize> = (0..500).map(|i| (i, rng.random_range(0..8))).collect();
        let ari = adjusted_rand_index(&a, &b).unwrap();
        assert!(ari.abs() < 0.05, "ari {ari}");
    }

    #[test]
    fn ari_rejects_mismatched_elements() {
        let a: BTreeMap<u32, usize> = (0..5).map(|i| (i, 0)).collect();
        let b: BTreeMap<u32, usize> = (1..6).map(|i| (i, 0)).collect();
        assert!(adjusted_rand_index(&a, &b).is_err());
    }

    #[test]
    fn sector_codes_coarsen_consistently() {
        // Distinct codes per sector; codes 12 apart share a BISC division.
        let codes: Vec<u16> = (0..24).map(sector_sic_code).collect();
        let distinct: BTreeSet<u16> = codes.iter().copied().collect();
        assert_eq!(distinct.len(), 24);
        for s in 0..12 {
            assert_eq!(
                corpus::bisc_division(codes[s]),
                corpus::bisc_division(codes[s + 12])
            );
        }
    }

    #[test]
    fn planted_pairs_share_sector() {
        let universe = generate_universe(&small_config()).unwrap();
        assert_eq!(universe.truth.planted_pairs.len(), 4);
        for (a, b) in &universe.truth.planted_pairs {
            assert_eq!(universe.truth.sector_of[a], universe.truth.sector_of[b]);
        }
    }
}
