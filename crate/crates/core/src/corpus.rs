//! Company panel loading, validation, and benchmark (code-based) clusterings.
//!
//! Input files are plain CSV:
//! - metadata: `company_id,ticker,year,sic_code`
//! - returns: `company_id,year,month,log_return` (month 1-12)
//! - prices: `company_id,date,adj_close` (date `YYYY-MM-DD`)
//! - external clusters: `year,cluster_id,company_id`
//!
//! Feature vectors are joined to the panel through the document id
//! convention `doc_id = "<company_id>:<year>"`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::graphcluster::{Cluster, MethodTag, YearClustering};
use crate::sparsefeat::{
    self, field, from_csv_open, parse_field, FeatureSpace, SummedFeatureVector,
};

/// Opaque company identifier; ordering is plain string order and is used as
/// the deterministic tie-break everywhere.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CompanyId(pub String);

impl CompanyId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CompanyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CompanyId {
    fn from(s: &str) -> Self {
        CompanyId(s.to_string())
    }
}

/// Static SIC major-division table: 2-digit prefix ranges mapped onto twelve
/// buckets (the classic divisions plus one bucket for prefixes the standard
/// leaves unassigned: 18-19, 90, 98).
const BISC_TABLE: [(u16, u16, u8, &str); 11] = [
    (1, 9, 1, "Agriculture, Forestry & Fishing"),
    (10, 14, 2, "Mining"),
    (15, 17, 3, "Construction"),
    (20, 39, 4, "Manufacturing"),
    (40, 49, 5, "Transportation & Public Utilities"),
    (50, 51, 6, "Wholesale Trade"),
    (52, 59, 7, "Retail Trade"),
    (60, 67, 8, "Finance, Insurance & Real Estate"),
    (70, 89, 9, "Services"),
    (91, 97, 10, "Public Administration"),
    (99, 99, 11, "Nonclassifiable"),
];

const BISC_UNASSIGNED: u8 = 12;

/// Major-division bucket (1-12) for a 4-digit SIC code.
pub fn bisc_division(sic_code: u16) -> u8 {
    let prefix = sic_code / 100;
    for &(lo, hi, div, _) in &BISC_TABLE {
        if (lo..=hi).contains(&prefix) {
            return div;
        }
    }
    BISC_UNASSIGNED
}

/// Human-readable name of a BISC division.
pub fn bisc_name(division: u8) -> &'static str {
    BISC_TABLE
        .iter()
        .find(|&&(_, _, d, _)| d == division)
        .map(|&(_, _, _, name)| name)
        .unwrap_or("Unassigned")
}

/// One company-year metadata row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompanyRecord {
    pub company_id: CompanyId,
    pub ticker: String,
    pub year: i32,
    pub sic_code: u16,
    pub bisc_code: u8,
}

impl CompanyRecord {
    pub fn new(company_id: CompanyId, ticker: String, year: i32, sic_code: u16) -> Result<Self> {
        if !(100..=9999).contains(&sic_code) {
            return Err(Error::Validation(format!(
                "sic_code {sic_code} outside [100, 9999] for {company_id}/{year}"
            )));
        }
        let bisc_code = bisc_division(sic_code);
        Ok(CompanyRecord {
            company_id,
            ticker,
            year,
            sic_code,
            bisc_code,
        })
    }
}

/// Twelve logged monthly returns of one company-year.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnSeries {
    pub company_id: CompanyId,
    pub year: i32,
    pub values: [f64; 12],
}

/// Daily adjusted close prices of one company; dates strictly increasing,
/// prices strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceSeries {
    pub company_id: CompanyId,
    pub observations: Vec<(NaiveDate, f64)>,
}

impl PriceSeries {
    pub fn new(company_id: CompanyId, observations: Vec<(NaiveDate, f64)>) -> Result<Self> {
        for w in observations.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Validation(format!(
                    "price dates for {company_id} not strictly increasing at {}",
                    w[1].0
                )));
            }
        }
        if let Some(&(date, px)) = observations.iter().find(|&&(_, px)| !(px > 0.0)) {
            return Err(Error::Validation(format!(
                "non-positive price {px} for {company_id} at {date}"
            )));
        }
        Ok(PriceSeries {
            company_id,
            observations,
        })
    }

    /// Observations within `[start, end]` inclusive.
    pub fn slice(&self, start: NaiveDate, end: NaiveDate) -> &[(NaiveDate, f64)] {
        let lo = self.observations.partition_point(|&(d, _)| d < start);
        let hi = self.observations.partition_point(|&(d, _)| d <= end);
        &self.observations[lo..hi]
    }
}

/// All data of one calendar year. Companies carrying features always carry a
/// return series; the reverse need not hold.
#[derive(Clone, Debug)]
pub struct YearPanel {
    pub year: i32,
    pub records: BTreeMap<CompanyId, CompanyRecord>,
    pub returns: BTreeMap<CompanyId, ReturnSeries>,
    pub summed_features: BTreeMap<CompanyId, SummedFeatureVector>,
}

/// Counters of rows read and dropped per reason, emitted as a key-value
/// text summary.
#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    counts: BTreeMap<String, u64>,
}

impl LoadReport {
    pub fn inc(&mut self, key: &str) {
        self.add(key, 1);
    }

    pub fn add(&mut self, key: &str, n: u64) {
        *self.counts.entry(key.to_string()).or_insert(0) += n;
    }

    pub fn get(&self, key: &str) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.counts {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Accepted feature-file layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeaturesFormat {
    /// `doc_id,feature_id,summed_activation`
    Summed,
    /// `doc_id,token_index,feature_id,activation`; summed on ingest.
    Tokens,
}

impl std::str::FromStr for FeaturesFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "summed" => Ok(FeaturesFormat::Summed),
            "tokens" => Ok(FeaturesFormat::Tokens),
            other => Err(Error::Config(format!(
                "unknown features format {other:?} (expected \"summed\" or \"tokens\")"
            ))),
        }
    }
}

/// Loader options.
#[derive(Clone, Copy, Debug)]
pub struct LoadConfig {
    pub feature_space: FeatureSpace,
    pub features_format: FeaturesFormat,
    /// Apply log(1+r) to the return column on ingest.
    pub raw_returns: bool,
    /// Months required for a valid return series. The loader only forms
    /// 12-month series; values below 12 are rejected.
    pub min_return_months: u32,
}

impl Default for LoadConfig {
    fn default() -> Self {
        LoadConfig {
            feature_space: FeatureSpace::default(),
            features_format: FeaturesFormat::Summed,
            raw_returns: false,
            min_return_months: 12,
        }
    }
}

/// Splits `"<company_id>:<year>"`. The year is everything after the last
/// colon, so company ids may themselves contain colons.
pub fn parse_doc_id(doc_id: &str) -> Result<(CompanyId, i32)> {
    let (company, year) = doc_id.rsplit_once(':').ok_or_else(|| {
        Error::Validation(format!(
            "doc_id {doc_id:?} does not follow the \"<company_id>:<year>\" convention"
        ))
    })?;
    let year: i32 = year.parse().map_err(|_| {
        Error::Validation(format!("doc_id {doc_id:?} carries a non-numeric year"))
    })?;
    Ok((CompanyId::from(company), year))
}

/// Formats the document id for `(company, year)`.
pub fn doc_id_for(company: &CompanyId, year: i32) -> String {
    format!("{company}:{year}")
}

/// Loads and cross-validates the three panel inputs. One panel is produced
/// per year present in all three sources; rows failing validation are
/// dropped and counted in the report. Duplicate `(company, year)` keys and
/// unreadable files are fatal.
pub fn load_panel(
    features_path: &Path,
    returns_path: &Path,
    metadata_path: &Path,
    config: &LoadConfig,
) -> Result<(Vec<YearPanel>, LoadReport)> {
    if config.min_return_months != 12 {
        return Err(Error::Config(format!(
            "min_return_months must be 12 (got {}); the loader forms complete 12-month series only",
            config.min_return_months
        )));
    }
    let mut report = LoadReport::default();

    let metadata = load_metadata(metadata_path, &mut report)?;
    let returns = load_returns(returns_path, config, &mut report)?;
    let features = load_features(features_path, config, &mut report)?;

    let meta_years: BTreeSet<i32> = metadata.keys().map(|&(_, y)| y).collect();
    let return_years: BTreeSet<i32> = returns.keys().map(|&(_, y)| y).collect();
    let feature_years: BTreeSet<i32> = features.keys().map(|&(_, y)| y).collect();
    let years: BTreeSet<i32> = meta_years
        .intersection(&return_years)
        .copied()
        .collect::<BTreeSet<_>>()
        .intersection(&feature_years)
        .copied()
        .collect();

    let mut panels: BTreeMap<i32, YearPanel> = years
        .iter()
        .map(|&year| {
            (
                year,
                YearPanel {
                    year,
                    records: BTreeMap::new(),
                    returns: BTreeMap::new(),
                    summed_features: BTreeMap::new(),
                },
            )
        })
        .collect();

    for ((company, year), record) in metadata {
        let Some(panel) = panels.get_mut(&year) else {
            report.inc("metadata_rows_dropped_year_not_in_all_sources");
            continue;
        };
        match returns.get(&(company.clone(), year)) {
            Some(series) => {
                panel.returns.insert(company.clone(), series.clone());
                panel.records.insert(company, record);
            }
            None => {
                report.inc("metadata_rows_dropped_missing_returns");
            }
        }
    }

    for ((company, year), vector) in features {
        let Some(panel) = panels.get_mut(&year) else {
            report.inc("feature_docs_dropped_year_not_in_all_sources");
            continue;
        };
        if panel.records.contains_key(&company) {
            panel.summed_features.insert(company, vector);
        } else {
            // Company has features but no metadata+returns row this year.
            report.inc("feature_docs_dropped_missing_cross_reference");
        }
    }

    report.add("panels_produced", panels.len() as u64);
    for key in [
        "metadata_rows_dropped_missing_returns",
        "feature_docs_dropped_missing_cross_reference",
        "metadata_rows_dropped_bad_sic",
        "return_series_dropped_incomplete",
        "return_series_dropped_nonfinite",
    ] {
        report.add(key, 0);
    }
    Ok((panels.into_values().collect(), report))
}

fn load_metadata(
    path: &Path,
    report: &mut LoadReport,
) -> Result<BTreeMap<(CompanyId, i32), CompanyRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(from_csv_open(path))?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        report.inc("metadata_rows_read");
        let company = CompanyId::from(field(&record, 0, path)?);
        let ticker = field(&record, 1, path)?.to_string();
        let year: i32 = parse_field(&record, 2, path)?;
        let sic_raw = field(&record, 3, path)?.trim();
        let Ok(sic_code) = sic_raw.parse::<u16>() else {
            report.inc("metadata_rows_dropped_bad_sic");
            continue;
        };
        let row = match CompanyRecord::new(company.clone(), ticker, year, sic_code) {
            Ok(r) => r,
            Err(_) => {
                report.inc("metadata_rows_dropped_bad_sic");
                continue;
            }
        };
        if out.insert((company.clone(), year), row).is_some() {
            return Err(Error::Duplicate(format!(
                "metadata row for ({company}, {year}) appears twice"
            )));
        }
    }
    Ok(out)
}

fn load_returns(
    path: &Path,
    config: &LoadConfig,
    report: &mut LoadReport,
) -> Result<BTreeMap<(CompanyId, i32), ReturnSeries>> {
    let mut reader = csv::Reader::from_path(path).map_err(from_csv_open(path))?;
    let mut cells: BTreeMap<(CompanyId, i32), [Option<f64>; 12]> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        report.inc("return_rows_read");
        let company = CompanyId::from(field(&record, 0, path)?);
        let year: i32 = parse_field(&record, 1, path)?;
        let month: u32 = parse_field(&record, 2, path)?;
        let raw: f64 = parse_field(&record, 3, path)?;
        if !(1..=12).contains(&month) {
            return Err(Error::Validation(format!(
                "month {month} out of range for ({company}, {year}) in {}",
                path.display()
            )));
        }
        let value = if config.raw_returns { (1.0 + raw).ln() } else { raw };
        let slot = &mut cells.entry((company.clone(), year)).or_insert([None; 12])
            [(month - 1) as usize];
        if slot.is_some() {
            return Err(Error::Duplicate(format!(
                "return for ({company}, {year}, month {month}) appears twice"
            )));
        }
        *slot = Some(value);
    }

    let mut out = BTreeMap::new();
    for ((company, year), months) in cells {
        if months.iter().any(|m| m.is_none()) {
            report.inc("return_series_dropped_incomplete");
            continue;
        }
        let values: [f64; 12] = std::array::from_fn(|i| months[i].unwrap());
        if values.iter().any(|v| !v.is_finite()) {
            report.inc("return_series_dropped_nonfinite");
            continue;
        }
        out.insert(
            (company.clone(), year),
            ReturnSeries {
                company_id: company,
                year,
                values,
            },
        );
    }
    Ok(out)
}

fn load_features(
    path: &Path,
    config: &LoadConfig,
    report: &mut LoadReport,
) -> Result<BTreeMap<(CompanyId, i32), SummedFeatureVector>> {
    let vectors = match config.features_format {
        FeaturesFormat::Summed => sparsefeat::load_summed_features(path, config.feature_space)?,
        FeaturesFormat::Tokens => {
            let tokens = sparsefeat::load_token_activations(path, config.feature_space)?;
            let mut by_doc: Vec<(crate::sparsefeat::DocId, Vec<_>)> = Vec::new();
            for tok in tokens {
                match by_doc.iter_mut().find(|(d, _)| d == &tok.doc_id) {
                    Some((_, list)) => list.push(tok),
                    None => by_doc.push((tok.doc_id.clone(), vec![tok])),
                }
            }
            by_doc
                .into_iter()
                .map(|(doc, toks)| sparsefeat::sum_token_features(&doc, &toks, config.feature_space))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let mut out = BTreeMap::new();
    for v in vectors {
        report.inc("feature_docs_read");
        let (company, year) = parse_doc_id(v.doc_id.as_str())?;
        if out.insert((company.clone(), year), v).is_some() {
            return Err(Error::Duplicate(format!(
                "features for ({company}, {year}) appear twice"
            )));
        }
    }
    Ok(out)
}

/// Loads daily prices keyed by company. Rows with non-positive prices are
/// dropped and counted; duplicate `(company, date)` keys are fatal.
pub fn load_prices(
    path: &Path,
    report: &mut LoadReport,
) -> Result<BTreeMap<CompanyId, PriceSeries>> {
    let mut reader = csv::Reader::from_path(path).map_err(from_csv_open(path))?;
    let mut obs: BTreeMap<CompanyId, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        report.inc("price_rows_read");
        let company = CompanyId::from(field(&record, 0, path)?);
        let date_raw = field(&record, 1, path)?.trim();
        let date = NaiveDate::parse_from_str(date_raw, "%Y-%m-%d").map_err(|e| {
            Error::Validation(format!("bad date {date_raw:?} in {}: {e}", path.display()))
        })?;
        let px: f64 = parse_field(&record, 2, path)?;
        if !(px > 0.0) || !px.is_finite() {
            report.inc("price_rows_dropped_nonpositive");
            continue;
        }
        if obs.entry(company.clone()).or_default().insert(date, px).is_some() {
            return Err(Error::Duplicate(format!(
                "price for ({company}, {date}) appears twice"
            )));
        }
    }
    obs.into_iter()
        .map(|(company, days)| {
            let series = PriceSeries::new(company.clone(), days.into_iter().collect())?;
            Ok((company, series))
        })
        .collect()
}

/// Removes companies present in fewer than `min_years` panels from every
/// panel. Returns the survivors and the number of removed companies.
pub fn filter_min_history(
    mut panels: Vec<YearPanel>,
    min_years: usize,
) -> Result<(Vec<YearPanel>, usize)> {
    if min_years < 1 {
        return Err(Error::Config("min_years must be at least 1".to_string()));
    }
    let mut tenure: BTreeMap<CompanyId, usize> = BTreeMap::new();
    for panel in &panels {
        for company in panel.records.keys() {
            *tenure.entry(company.clone()).or_insert(0) += 1;
        }
    }
    let removed: BTreeSet<CompanyId> = tenure
        .into_iter()
        .filter(|&(_, n)| n < min_years)
        .map(|(c, _)| c)
        .collect();
    for panel in &mut panels {
        panel.records.retain(|c, _| !removed.contains(c));
        panel.returns.retain(|c, _| !removed.contains(c));
        panel.summed_features.retain(|c, _| !removed.contains(c));
    }
    Ok((panels, removed.len()))
}

/// Classification scheme for code-based benchmark clusters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeScheme {
    Sic,
    Bisc,
}

/// Groups the panel's companies by SIC or BISC code; each distinct code is
/// one cluster. The cut-off field is not applicable to code partitions.
pub fn benchmark_clusters(panel: &YearPanel, scheme: CodeScheme) -> YearClustering {
    let mut groups: BTreeMap<u32, Vec<CompanyId>> = BTreeMap::new();
    for (company, record) in &panel.records {
        let code = match scheme {
            CodeScheme::Sic => record.sic_code as u32,
            CodeScheme::Bisc => record.bisc_code as u32,
        };
        groups.entry(code).or_default().push(company.clone());
    }
    let clusters = groups
        .into_iter()
        .map(|(code, members)| Cluster {
            id: code.to_string(),
            members,
        })
        .collect();
    YearClustering {
        year: panel.year,
        theta: None,
        method: match scheme {
            CodeScheme::Sic => MethodTag::Sic,
            CodeScheme::Bisc => MethodTag::Bisc,
        },
        clusters,
    }
}

/// Loads one year's externally produced clustering. Every company listed for
/// that year must exist in the panel and appear in exactly one cluster.
pub fn load_external_clustering(
    path: &Path,
    year: i32,
    panel: &YearPanel,
) -> Result<YearClustering> {
    let mut groups: BTreeMap<String, Vec<CompanyId>> = BTreeMap::new();
    let mut seen: BTreeSet<CompanyId> = BTreeSet::new();
    let mut reader = csv::Reader::from_path(path).map_err(from_csv_open(path))?;
    for record in reader.records() {
        let record = record?;
        let row_year: i32 = parse_field(&record, 0, path)?;
        if row_year != year {
            continue;
        }
        let cluster_id = field(&record, 1, path)?.to_string();
        let company = CompanyId::from(field(&record, 2, path)?);
        if !panel.records.contains_key(&company) {
            return Err(Error::Validation(format!(
                "external clustering names unknown company {company} for year {year}"
            )));
        }
        if !seen.insert(company.clone()) {
            return Err(Error::Duplicate(format!(
                "company {company} assigned to more than one external cluster in year {year}"
            )));
        }
        groups.entry(cluster_id).or_default().push(company);
    }
    let mut clusters: Vec<Cluster> = groups
        .into_iter()
        .map(|(id, mut members)| {
            members.sort();
            Cluster { id, members }
        })
        .collect();
    clusters.sort_by(|a, b| a.members[0].cmp(&b.members[0]));
    Ok(YearClustering {
        year,
        theta: None,
        method: MethodTag::External,
        clusters,
    })
}

/// Writes clusterings (any number of years) as `year,cluster_id,company_id`.
pub fn write_clusters(path: &Path, clusterings: &[YearClustering]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(from_csv_open(path))?;
    writer.write_record(["year", "cluster_id", "company_id"])?;
    for clustering in clusterings {
        for cluster in &clustering.clusters {
            for member in &cluster.members {
                writer.write_record([
                    clustering.year.to_string().as_str(),
                    &cluster.id,
                    member.as_str(),
                ])?;
            }
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Years present in a clusters CSV.
pub fn clustered_years(path: &Path) -> Result<Vec<i32>> {
    let mut reader = csv::Reader::from_path(path).map_err(from_csv_open(path))?;
    let mut years = BTreeSet::new();
    for record in reader.records() {
        let record = record?;
        years.insert(parse_field::<i32>(&record, 0, path)?);
    }
    Ok(years.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(path: &Path, body: &str) {
        fs::write(path, body).unwrap();
    }

    fn full_inputs(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
        let meta = dir.join("metadata.csv");
        let returns = dir.join("returns.csv");
        let features = dir.join("features.csv");
        let mut meta_body = String::from("company_id,ticker,year,sic_code\n");
        let mut ret_body = String::from("company_id,year,month,log_return\n");
        let mut feat_body = String::from("doc_id,feature_id,summed_activation\n");
        for company in ["a", "b", "c"] {
            for year in [2001, 2002] {
                meta_body.push_str(&format!("{company},{company}T,{year},6021\n"));
                for month in 1..=12 {
                    ret_body.push_str(&format!("{company},{year},{month},0.01\n"));
                }
                feat_body.push_str(&format!("{company}:{year},3,1.5\n"));
            }
        }
        write(&meta, &meta_body);
        write(&returns, &ret_body);
        write(&features, &feat_body);
        (features, returns, meta)
    }

    #[test]
    fn consistent_input_gives_complete_panels() {
        let dir = tempfile::tempdir().unwrap();
        let (f, r, m) = full_inputs(dir.path());
        let cfg = LoadConfig {
            feature_space: FeatureSpace { dim: 16, k_active: 8 },
            ..LoadConfig::default()
        };
        let (panels, report) = load_panel(&f, &r, &m, &cfg).unwrap();
        assert_eq!(panels.len(), 2);
        for p in &panels {
            assert_eq!(p.records.len(), 3);
            assert_eq!(p.returns.len(), 3);
            assert_eq!(p.summed_features.len(), 3);
        }
        assert_eq!(report.get("metadata_rows_dropped_missing_returns"), 0);
    }

    #[test]
    fn feature_without_returns_is_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let (f, r, m) = full_inputs(dir.path());
        // Company d has metadata and features for 2001 but no returns.
        let mut meta = fs::read_to_string(&m).unwrap();
        meta.push_str("d,dT,2001,2834\n");
        write(&m, &meta);
        let mut feat = fs::read_to_string(&f).unwrap();
        feat.push_str("d:2001,5,0.5\n");
        write(&f, &feat);
        let cfg = LoadConfig {
            feature_space: FeatureSpace { dim: 16, k_active: 8 },
            ..LoadConfig::default()
        };
        let (panels, report) = load_panel(&f, &r, &m, &cfg).unwrap();
        let p2001 = panels.iter().find(|p| p.year == 2001).unwrap();
        assert!(!p2001.records.contains_key(&CompanyId::from("d")));
        assert_eq!(report.get("feature_docs_dropped_missing_cross_reference"), 1);
        assert_eq!(report.get("metadata_rows_dropped_missing_returns"), 1);
    }

    #[test]
    fn duplicate_company_year_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let (f, r, m) = full_inputs(dir.path());
        let mut meta = fs::read_to_string(&m).unwrap();
        meta.push_str("a,aT,2001,6021\n");
        write(&m, &meta);
        let cfg = LoadConfig {
            feature_space: FeatureSpace { dim: 16, k_active: 8 },
            ..LoadConfig::default()
        };
        assert!(matches!(
            load_panel(&f, &r, &m, &cfg),
            Err(Error::Duplicate(_))
        ));
    }

    #[test]
    fn nonfinite_return_drops_series() {
        let dir = tempfile::tempdir().unwrap();
        let (f, r, m) = full_inputs(dir.path());
        let body = fs::read_to_string(&r).unwrap();
        let body = body.replacen("a,2001,3,0.01", "a,2001,3,NaN", 1);
        write(&r, &body);
        let cfg = LoadConfig {
            feature_space: FeatureSpace { dim: 16, k_active: 8 },
            ..LoadConfig::default()
        };
        let (panels, report) = load_panel(&f, &r, &m, &cfg).unwrap();
        let p2001 = panels.iter().find(|p| p.year == 2001).unwrap();
        assert!(!p2001.records.contains_key(&CompanyId::from("a")));
        assert_eq!(report.get("return_series_dropped_nonfinite"), 1);
    }

    #[test]
    fn raw_returns_are_logged_on_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let (f, r, m) = full_inputs(dir.path());
        let cfg = LoadConfig {
            feature_space: FeatureSpace { dim: 16, k_active: 8 },
            raw_returns: true,
            ..LoadConfig::default()
        };
        let (panels, _) = load_panel(&f, &r, &m, &cfg).unwrap();
        let series = &panels[0].returns[&CompanyId::from("a")];
        assert!((series.values[0] - (1.0f64 + 0.01).ln()).abs() < 1e-15);
    }

    #[test]
    fn min_history_filter_matches_brute_force() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let years: Vec<i32> = (2000..2010).collect();
        let mut panels: Vec<YearPanel> = years
            .iter()
            .map(|&year| YearPanel {
                year,
                records: BTreeMap::new(),
                returns: BTreeMap::new(),
                summed_features: BTreeMap::new(),
            })
            .collect();
        let mut tenure = BTreeMap::new();
        for i in 0..40 {
            let company = CompanyId(format!("c{i:02}"));
            let start = rng.random_range(0..years.len());
            let len = rng.random_range(1..=years.len() - start);
            tenure.insert(company.clone(), len);
            for p in panels.iter_mut().skip(start).take(len) {
                let year = p.year;
                p.records.insert(
                    company.clone(),
                    CompanyRecord::new(company.clone(), format!("{company}T"), year, 6021)
                        .unwrap(),
                );
            }
        }
        let min_years = 5;
        let expected_survivors: BTreeSet<_> = tenure
            .iter()
            .filter(|&(_, &n)| n >= min_years)
            .map(|(c, _)| c.clone())
            .collect();
        let (filtered, removed) = filter_min_history(panels, min_years).unwrap();
        assert_eq!(removed, 40 - expected_survivors.len());
        for p in &filtered {
            for c in p.records.keys() {
                assert!(expected_survivors.contains(c));
            }
        }
        let survivors_seen: BTreeSet<_> = filtered
            .iter()
            .flat_map(|p| p.records.keys().cloned())
            .collect();
        assert_eq!(survivors_seen, expected_survivors);
    }

    #[test]
    fn min_years_one_is_identity() {
        let panel = YearPanel {
            year: 2001,
            records: BTreeMap::new(),
            returns: BTreeMap::new(),
            summed_features: BTreeMap::new(),
        };
        let (filtered, removed) = filter_min_history(vec![panel], 1).unwrap();
        assert_eq!(filtered.len(), 1);
        assert_eq!(removed, 0);
    }

    fn panel_with_codes(codes: &[(&str, u16)]) -> YearPanel {
        let mut records = BTreeMap::new();
        for &(id, sic) in codes {
            let company = CompanyId::from(id);
            records.insert(
                company.clone(),
                CompanyRecord::new(company, format!("{id}T"), 2001, sic).unwrap(),
            );
        }
        YearPanel {
            year: 2001,
            records,
            returns: BTreeMap::new(),
            summed_features: BTreeMap::new(),
        }
    }

    #[test]
    fn sic_clusters_group_by_code() {
        let panel = panel_with_codes(&[("a", 6021), ("b", 6021), ("c", 2834)]);
        let clustering = benchmark_clusters(&panel, CodeScheme::Sic);
        assert_eq!(clustering.theta, None);
        let sets: Vec<Vec<&str>> = clustering
            .clusters
            .iter()
            .map(|c| c.members.iter().map(|m| m.as_str()).collect())
            .collect();
        assert!(sets.contains(&vec!["a", "b"]));
        assert!(sets.contains(&vec!["c"]));
    }

    #[test]
    fn bisc_groups_by_division() {
        // 6021 -> Finance; 2834 -> Manufacturing.
        let panel = panel_with_codes(&[("a", 6021), ("b", 6099), ("c", 2834)]);
        let clustering = benchmark_clusters(&panel, CodeScheme::Bisc);
        assert_eq!(clustering.clusters.len(), 2);
    }

    #[test]
    fn bisc_coarsens_sic() {
        // Every SIC cluster must land inside exactly one BISC cluster.
        let panel = panel_with_codes(&[
            ("a", 6021),
            ("b", 6021),
            ("c", 6099),
            ("d", 2834),
            ("e", 100),
            ("f", 9900),
        ]);
        let sic = benchmark_clusters(&panel, CodeScheme::Sic);
        let bisc = benchmark_clusters(&panel, CodeScheme::Bisc);
        let bisc_of = bisc.labels();
        for cluster in &sic.clusters {
            let first = bisc_of[&cluster.members[0]];
            assert!(cluster.members.iter().all(|m| bisc_of[m] == first));
        }
    }

    #[test]
    fn bisc_has_at_most_twelve_divisions() {
        let mut seen = BTreeSet::new();
        for sic in 100..=9999u16 {
            seen.insert(bisc_division(sic));
        }
        assert!(seen.len() <= 12);
        assert!(seen.iter().all(|&d| (1..=12).contains(&d)));
    }

    #[test]
    fn external_clustering_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let panel = panel_with_codes(&[("a", 6021), ("b", 6021), ("c", 2834), ("d", 100)]);
        let clusters_path = dir.path().join("clusters.csv");
        write(
            &clusters_path,
            "year,cluster_id,company_id\n2001,g1,a\n2001,g1,b\n2001,g2,c\n2001,g2,d\n",
        );
        let loaded = load_external_clustering(&clusters_path, 2001, &panel).unwrap();
        assert_eq!(loaded.clusters.len(), 2);

        let round = dir.path().join("round.csv");
        write_clusters(&round, std::slice::from_ref(&loaded)).unwrap();
        let again = load_external_clustering(&round, 2001, &panel).unwrap();
        assert_eq!(loaded.partition(), again.partition());
    }

    #[test]
    fn external_clustering_rejects_unknown_company() {
        let dir = tempfile::tempdir().unwrap();
        let panel = panel_with_codes(&[("a", 6021)]);
        let clusters_path = dir.path().join("clusters.csv");
        write(&clusters_path, "year,cluster_id,company_id\n2001,g1,zz\n");
        assert!(load_external_clustering(&clusters_path, 2001, &panel).is_err());
    }

    #[test]
    fn loading_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (f, r, m) = full_inputs(dir.path());
        let cfg = LoadConfig {
            feature_space: FeatureSpace { dim: 16, k_active: 8 },
            ..LoadConfig::default()
        };
        let (a, _) = load_panel(&f, &r, &m, &cfg).unwrap();
        let (b, _) = load_panel(&f, &r, &m, &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.year, pb.year);
            assert_eq!(pa.records, pb.records);
            assert_eq!(pa.returns, pb.returns);
            assert_eq!(pa.summed_features, pb.summed_features);
        }
    }
}
