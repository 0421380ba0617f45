//! Cluster-conditioned pairs trading: pre-selection, cointegration
//! filtering, out-of-sample sigma-band simulation, portfolio accounting,
//! and the Sharpe ratio.
//!
//! Position sizing is hedge-ratio-weighted: one unit of the dependent leg
//! against beta units of the other, one concurrent position per pair, so a
//! spread move of x closes for a PnL of x price units. Cash only moves when
//! a trade closes; open positions are marked to market daily and
//! `V_t = cash_t + unrealized_t` holds at every step.
//!
//! Data access is instrumented: spread reads beyond the current simulation
//! day and parameters fitted outside the in-sample window are counted as
//! look-ahead violations in the audit (zero in a correct run).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;

use crate::cointegration::{engle_granger, CointResult, EngleGrangerConfig};
use crate::corpus::{CompanyId, PriceSeries, YearPanel};
use crate::error::{Error, Result};
use crate::graphcluster::YearClustering;
use crate::metrics::pearson;
use crate::sparsefeat::from_csv_open;

/// Trading windows, bands, and budgets. Defaults mirror the evaluation
/// setup: in-sample 2002-2013, out-of-sample 2014-2020, 0.95 pre-selection,
/// 1% cointegration cutoff, 1-sigma entry / 2-sigma stop, zero costs.
#[derive(Clone, Copy, Debug)]
pub struct TradingConfig {
    pub in_sample_start: NaiveDate,
    pub in_sample_end: NaiveDate,
    pub out_of_sample_start: NaiveDate,
    pub out_of_sample_end: NaiveDate,
    pub preselect_corr_min: f64,
    pub coint_p_max: f64,
    /// Entry band in spread-sigma units.
    pub entry_band: f64,
    /// Stop-loss band in spread-sigma units.
    pub stop_band: f64,
    /// Cost charged per executed transition (entry or exit); zero by
    /// default.
    pub transaction_cost: f64,
    pub initial_cash_per_pair: f64,
}

impl Default for TradingConfig {
    fn default() -> Self {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).unwrap();
        TradingConfig {
            in_sample_start: d(2002, 1, 1),
            in_sample_end: d(2013, 12, 31),
            out_of_sample_start: d(2014, 1, 1),
            out_of_sample_end: d(2020, 12, 31),
            preselect_corr_min: 0.95,
            coint_p_max: 0.01,
            entry_band: 1.0,
            stop_band: 2.0,
            transaction_cost: 0.0,
            initial_cash_per_pair: 10_000.0,
        }
    }
}

impl TradingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_sample_start > self.in_sample_end
            || self.out_of_sample_start > self.out_of_sample_end
        {
            return Err(Error::Config("trading windows must be ordered".to_string()));
        }
        if self.in_sample_end >= self.out_of_sample_start {
            return Err(Error::Config(
                "in-sample and out-of-sample windows must be disjoint and ordered".to_string(),
            ));
        }
        if !(self.entry_band > 0.0 && self.entry_band < self.stop_band) {
            return Err(Error::Config(format!(
                "bands must satisfy 0 < entry ({}) < stop ({})",
                self.entry_band, self.stop_band
            )));
        }
        Ok(())
    }
}

/// Concatenated in-sample monthly returns per company: one value per month
/// of every panel year falling fully inside the in-sample window. Companies
/// missing any of those years are excluded so pair series stay aligned.
pub fn in_sample_monthly_returns(
    panels: &[YearPanel],
    config: &TradingConfig,
) -> BTreeMap<CompanyId, Vec<f64>> {
    let years: Vec<&YearPanel> = panels
        .iter()
        .filter(|p| {
            let jan = NaiveDate::from_ymd_opt(p.year, 1, 1).unwrap();
            let dec = NaiveDate::from_ymd_opt(p.year, 12, 31).unwrap();
            jan >= config.in_sample_start && dec <= config.in_sample_end
        })
        .collect();
    let Some(first) = years.first() else {
        return BTreeMap::new();
    };
    let mut companies: BTreeSet<CompanyId> = first.returns.keys().cloned().collect();
    for panel in &years[1..] {
        companies.retain(|c| panel.returns.contains_key(c));
    }
    companies
        .into_iter()
        .map(|c| {
            let mut values = Vec::with_capacity(years.len() * 12);
            for panel in &years {
                values.extend_from_slice(&panel.returns[&c].values);
            }
            (c, values)
        })
        .collect()
}

/// Within-cluster pairs whose in-sample return correlation strictly exceeds
/// the threshold. Pairs with undefined correlation are skipped.
pub fn preselect_pairs(
    clustering: &YearClustering,
    in_sample_returns: &BTreeMap<CompanyId, Vec<f64>>,
    config: &TradingConfig,
) -> Vec<(CompanyId, CompanyId)> {
    let mut out = Vec::new();
    for cluster in &clustering.clusters {
        for i in 0..cluster.members.len() {
            for j in (i + 1)..cluster.members.len() {
                let (a, b) = (&cluster.members[i], &cluster.members[j]);
                let (Some(ra), Some(rb)) = (in_sample_returns.get(a), in_sample_returns.get(b))
                else {
                    continue;
                };
                match pearson(ra, rb) {
                    Ok(rho) if rho > config.preselect_corr_min => {
                        out.push((a.min(b).clone(), a.max(b).clone()));
                    }
                    _ => {}
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// A pair dropped before testing, with the reason.
#[derive(Clone, Debug)]
pub struct SkippedPair {
    pub pair: (CompanyId, CompanyId),
    pub reason: String,
}

/// Runs Engle-Granger on each candidate pair over common in-sample trading
/// days; returns the passing results and an audit of skipped pairs.
pub fn select_cointegrated(
    pairs: &[(CompanyId, CompanyId)],
    prices: &BTreeMap<CompanyId, PriceSeries>,
    config: &TradingConfig,
    eg_config: &EngleGrangerConfig,
) -> (Vec<CointResult>, Vec<SkippedPair>) {
    let mut passing = Vec::new();
    let mut skipped = Vec::new();
    for (a, b) in pairs {
        let (Some(pa), Some(pb)) = (prices.get(a), prices.get(b)) else {
            skipped.push(SkippedPair {
                pair: (a.clone(), b.clone()),
                reason: "missing price series".to_string(),
            });
            continue;
        };
        let (_, va, vb) = common_days(pa, pb, config.in_sample_start, config.in_sample_end);
        if va.len() < eg_config.min_len {
            skipped.push(SkippedPair {
                pair: (a.clone(), b.clone()),
                reason: format!(
                    "only {} overlapping in-sample days (floor {})",
                    va.len(),
                    eg_config.min_len
                ),
            });
            continue;
        }
        let eg = EngleGrangerConfig {
            p_cutoff: config.coint_p_max,
            ..*eg_config
        };
        match engle_granger(a, &va, b, &vb, &eg) {
            Ok(res) if res.is_cointegrated => passing.push(res),
            Ok(_) => {}
            Err(e) => skipped.push(SkippedPair {
                pair: (a.clone(), b.clone()),
                reason: e.to_string(),
            }),
        }
    }
    (passing, skipped)
}

fn common_days(
    pa: &PriceSeries,
    pb: &PriceSeries,
    start: NaiveDate,
    end: NaiveDate,
) -> (Vec<NaiveDate>, Vec<f64>, Vec<f64>) {
    let a = pa.slice(start, end);
    let b = pb.slice(start, end);
    let mut dates = Vec::new();
    let mut va = Vec::new();
    let mut vb = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dates.push(a[i].0);
                va.push(a[i].1);
                vb.push(b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    (dates, va, vb)
}

/// Frozen in-sample spread parameters: `s = p_dep - alpha - beta p_indep`,
/// with the band center and scale taken from the in-sample residuals
/// (population sigma).
#[derive(Clone, Copy, Debug)]
pub struct SpreadParams {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Last date whose data entered the fit; feeds the look-ahead audit.
    pub fitted_through: NaiveDate,
}

/// Recomputes the in-sample spread moments for a tested pair.
pub fn fit_spread_params(
    coint: &CointResult,
    prices: &BTreeMap<CompanyId, PriceSeries>,
    config: &TradingConfig,
) -> Result<SpreadParams> {
    let (dep, indep) = (&coint.pair.0, &coint.pair.1);
    let pa = prices
        .get(dep)
        .ok_or_else(|| Error::Validation(format!("no prices for {dep}")))?;
    let pb = prices
        .get(indep)
        .ok_or_else(|| Error::Validation(format!("no prices for {indep}")))?;
    let (dates, va, vb) = common_days(pa, pb, config.in_sample_start, config.in_sample_end);
    if dates.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no common in-sample days for ({dep}, {indep})"
        )));
    }
    let spreads: Vec<f64> = va
        .iter()
        .zip(&vb)
        .map(|(&a, &b)| a - coint.alpha - coint.beta * b)
        .collect();
    let n = spreads.len() as f64;
    let mu = spreads.iter().sum::<f64>() / n;
    let sigma = (spreads.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / n).sqrt();
    if sigma == 0.0 {
        return Err(Error::ZeroVariance(format!(
            "in-sample spread of ({dep}, {indep}) has zero variance"
        )));
    }
    Ok(SpreadParams {
        alpha: coint.alpha,
        beta: coint.beta,
        mu,
        sigma,
        fitted_through: *dates.last().unwrap(),
    })
}

/// Open-position direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    LongSpread,
    ShortSpread,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Side::LongSpread => "long_spread",
            Side::ShortSpread => "short_spread",
        }
    }

    fn sign(self) -> f64 {
        match self {
            Side::LongSpread => 1.0,
            Side::ShortSpread => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Entry,
    Exit,
}

impl Action {
    pub fn label(self) -> &'static str {
        match self {
            Action::Entry => "entry",
            Action::Exit => "exit",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reason {
    BandEntry,
    MeanExit,
    StopLoss,
    ForcedClose,
}

impl Reason {
    pub fn label(self) -> &'static str {
        match self {
            Reason::BandEntry => "band_entry",
            Reason::MeanExit => "mean_exit",
            Reason::StopLoss => "stop_loss",
            Reason::ForcedClose => "forced_close",
        }
    }
}

/// One entry or exit.
#[derive(Clone, Copy, Debug)]
pub struct TradeEvent {
    pub date: NaiveDate,
    pub action: Action,
    pub side: Side,
    pub spread: f64,
    pub reason: Reason,
    /// Realized PnL on exits.
    pub pnl: Option<f64>,
}

/// Daily mark of one pair's sub-account.
#[derive(Clone, Copy, Debug)]
pub struct DailyMark {
    pub date: NaiveDate,
    pub spread: f64,
    pub cash: f64,
    pub unrealized: f64,
}

/// Look-ahead and data-quality audit of one simulation.
#[derive(Clone, Copy, Debug, Default)]
pub struct SimAudit {
    pub out_of_window_accesses: usize,
    pub carried_forward_prices: usize,
}

/// Full record of one pair's out-of-sample simulation.
#[derive(Clone, Debug)]
pub struct PairTradeLog {
    pub pair: (CompanyId, CompanyId),
    pub events: Vec<TradeEvent>,
    pub daily: Vec<DailyMark>,
    pub round_trips: usize,
    pub realized_pnl: f64,
    pub initial_cash: f64,
    pub audit: SimAudit,
}

/// Spread reads go through this cursor; an index beyond the current day is
/// recorded as a look-ahead violation.
struct SpreadCursor<'a> {
    spreads: &'a [f64],
    today: usize,
    violations: usize,
}

impl SpreadCursor<'_> {
    fn read(&mut self, idx: usize) -> f64 {
        if idx > self.today {
            self.violations += 1;
        }
        self.spreads[idx]
    }
}

/// Walks the out-of-sample window day by day with the frozen in-sample
/// parameters. When flat, a close beyond the entry band opens a position
/// against the deviation; stop-loss (checked first) closes beyond the stop
/// band; otherwise the first touch or crossing of the band center closes.
/// Any position still open on the final day is force-closed. Re-entry after
/// a close is allowed from the next day on.
pub fn simulate_pair(
    params: &SpreadParams,
    pair: (&CompanyId, &CompanyId),
    prices: &BTreeMap<CompanyId, PriceSeries>,
    config: &TradingConfig,
) -> Result<PairTradeLog> {
    config.validate()?;
    if params.sigma <= 0.0 {
        return Err(Error::ZeroVariance(format!(
            "pair ({}, {}) has zero in-sample spread sigma",
            pair.0, pair.1
        )));
    }
    let mut audit = SimAudit::default();
    if params.fitted_through >= config.out_of_sample_start {
        audit.out_of_window_accesses += 1;
    }
    let pa = prices
        .get(pair.0)
        .ok_or_else(|| Error::Validation(format!("no prices for {}", pair.0)))?;
    let pb = prices
        .get(pair.1)
        .ok_or_else(|| Error::Validation(format!("no prices for {}", pair.1)))?;

    // Union of out-of-sample trading days, marking with the last known price
    // when one leg is missing a day.
    let a_days = pa.slice(config.out_of_sample_start, config.out_of_sample_end);
    let b_days = pb.slice(config.out_of_sample_start, config.out_of_sample_end);
    let all_dates: BTreeSet<NaiveDate> = a_days
        .iter()
        .map(|&(d, _)| d)
        .chain(b_days.iter().map(|&(d, _)| d))
        .collect();
    let mut dates = Vec::new();
    let mut spreads = Vec::new();
    let (mut ia, mut ib) = (0usize, 0usize);
    let (mut last_a, mut last_b) = (None, None);
    for &date in &all_dates {
        while ia < a_days.len() && a_days[ia].0 <= date {
            last_a = Some(a_days[ia].1);
            ia += 1;
        }
        while ib < b_days.len() && b_days[ib].0 <= date {
            last_b = Some(b_days[ib].1);
            ib += 1;
        }
        let (Some(va), Some(vb)) = (last_a, last_b) else {
            continue; // before both legs have traded
        };
        let a_fresh = a_days.get(ia - 1).map(|&(dd, _)| dd) == Some(date);
        let b_fresh = b_days.get(ib - 1).map(|&(dd, _)| dd) == Some(date);
        if !a_fresh || !b_fresh {
            audit.carried_forward_prices += 1;
        }
        dates.push(date);
        spreads.push(va - params.alpha - params.beta * vb);
    }

    let mut cursor = SpreadCursor {
        spreads: &spreads,
        today: 0,
        violations: 0,
    };
    let mut events = Vec::new();
    let mut daily = Vec::with_capacity(dates.len());
    let mut open: Option<(Side, f64)> = None; // (side, entry spread)
    let mut cash = config.initial_cash_per_pair;
    let mut round_trips = 0usize;
    let n = dates.len();
    for t in 0..n {
        cursor.today = t;
        let s = cursor.read(t);
        let deviation = s - params.mu;
        if let Some((side, entry_spread)) = open {
            let stop = deviation.abs() > config.stop_band * params.sigma;
            let mean_hit = match side {
                Side::ShortSpread => s <= params.mu,
                Side::LongSpread => s >= params.mu,
            };
            let forced = t == n - 1;
            // Stop-loss wins over mean-exit on the same day.
            let reason = if stop {
                Some(Reason::StopLoss)
            } else if mean_hit {
                Some(Reason::MeanExit)
            } else if forced {
                Some(Reason::ForcedClose)
            } else {
                None
            };
            if let Some(reason) = reason {
                let pnl = side.sign() * (s - entry_spread) - 2.0 * config.transaction_cost;
                cash += pnl;
                round_trips += 1;
                events.push(TradeEvent {
                    date: dates[t],
                    action: Action::Exit,
                    side,
                    spread: s,
                    reason,
                    pnl: Some(pnl),
                });
                open = None;
            }
        } else if t < n - 1 {
            let side = if deviation > config.entry_band * params.sigma {
                Some(Side::ShortSpread)
            } else if deviation < -config.entry_band * params.sigma {
                Some(Side::LongSpread)
            } else {
                None
            };
            if let Some(side) = side {
                open = Some((side, s));
                events.push(TradeEvent {
                    date: dates[t],
                    action: Action::Entry,
                    side,
                    spread: s,
                    reason: Reason::BandEntry,
                    pnl: None,
                });
            }
        }
        let unrealized = open.map_or(0.0, |(side, entry)| side.sign() * (s - entry));
        daily.push(DailyMark {
            date: dates[t],
            spread: s,
            cash,
            unrealized,
        });
    }
    audit.out_of_window_accesses += cursor.violations;
    Ok(PairTradeLog {
        pair: (pair.0.clone(), pair.1.clone()),
        events,
        daily,
        round_trips,
        realized_pnl: cash - config.initial_cash_per_pair,
        initial_cash: config.initial_cash_per_pair,
        audit,
    })
}

/// One day of the aggregated portfolio.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryPoint {
    pub date: NaiveDate,
    pub cash: f64,
    pub unrealized: f64,
    pub value: f64,
}

/// Daily portfolio trajectory: each pair's sub-account starts at the
/// configured initial cash and the portfolio is the exact sum across pairs.
#[derive(Clone, Debug)]
pub struct PortfolioTrajectory {
    pub method_label: String,
    pub points: Vec<TrajectoryPoint>,
}

/// Folds the pair logs into the daily portfolio series, carrying each
/// pair's last mark across days it did not trade.
pub fn portfolio_trajectory(
    logs: &[PairTradeLog],
    config: &TradingConfig,
    method_label: &str,
) -> Result<PortfolioTrajectory> {
    config.validate()?;
    if logs.is_empty() {
        return Err(Error::InsufficientData(
            "portfolio trajectory needs at least one pair log".to_string(),
        ));
    }
    let dates: BTreeSet<NaiveDate> = logs
        .iter()
        .flat_map(|l| l.daily.iter().map(|m| m.date))
        .collect();
    let mut pointers = vec![0usize; logs.len()];
    let mut last: Vec<(f64, f64)> = logs.iter().map(|l| (l.initial_cash, 0.0)).collect();
    let mut points = Vec::with_capacity(dates.len());
    for date in dates {
        let mut cash = 0.0;
        let mut unrealized = 0.0;
        for (i, log) in logs.iter().enumerate() {
            while pointers[i] < log.daily.len() && log.daily[pointers[i]].date <= date {
                let mark = log.daily[pointers[i]];
                last[i] = (mark.cash, mark.unrealized);
                pointers[i] += 1;
            }
            cash += last[i].0;
            unrealized += last[i].1;
        }
        points.push(TrajectoryPoint {
            date,
            cash,
            unrealized,
            value: cash + unrealized,
        });
    }
    Ok(PortfolioTrajectory {
        method_label: method_label.to_string(),
        points,
    })
}

/// Annualized Sharpe ratio of the daily simple returns of `V` (risk-free
/// rate zero, sample standard deviation, sqrt(252) annualization). Zero
/// return variance is an error, never infinity or a silent zero.
pub fn sharpe_ratio(trajectory: &PortfolioTrajectory) -> Result<f64> {
    let v: Vec<f64> = trajectory.points.iter().map(|p| p.value).collect();
    if v.len() < 30 {
        return Err(Error::InsufficientData(format!(
            "Sharpe needs at least 30 daily observations, got {}",
            v.len()
        )));
    }
    let mut returns = Vec::with_capacity(v.len() - 1);
    for w in v.windows(2) {
        if w[0] == 0.0 {
            return Err(Error::ZeroVariance(
                "portfolio value hit zero; daily returns undefined".to_string(),
            ));
        }
        returns.push(w[1] / w[0] - 1.0);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(Error::ZeroVariance(
            "daily portfolio returns have zero variance; Sharpe undefined".to_string(),
        ));
    }
    Ok(mean / var.sqrt() * 252.0_f64.sqrt())
}

/// Writes `id_a,id_b,date,action,side,spread,pnl`.
pub fn write_trade_logs(path: &Path, logs: &[PairTradeLog]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(from_csv_open(path))?;
    writer.write_record(["id_a", "id_b", "date", "action", "side", "spread", "pnl"])?;
    for log in logs {
        for e in &log.events {
            writer.write_record([
                log.pair.0.as_str(),
                log.pair.1.as_str(),
                &e.date.to_string(),
                e.action.label(),
                e.side.label(),
                &e.spread.to_string(),
                &e.pnl.map(|p| p.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes `date,cash,unrealized,V`.
pub fn write_trajectory(path: &Path, trajectory: &PortfolioTrajectory) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(from_csv_open(path))?;
    writer.write_record(["date", "cash", "unrealized", "V"])?;
    for p in &trajectory.points {
        writer.write_record([
            p.date.to_string().as_str(),
            &p.cash.to_string(),
            &p.unrealized.to_string(),
            &p.value.to_string(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// One method group's backtest summary row.
#[derive(Clone, Debug)]
pub struct BacktestSummary {
    pub method_label: String,
    pub pairs_traded: usize,
    pub round_trips: usize,
    /// `None` when undefined (no trades / zero variance).
    pub sharpe: Option<f64>,
}

/// Writes `method,pairs_traded,round_trips,sharpe`; an undefined Sharpe is
/// reported as the literal `undefined`.
pub fn write_backtest_summary(path: &Path, rows: &[BacktestSummary]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(from_csv_open(path))?;
    writer.write_record(["method", "pairs_traded", "round_trips", "sharpe"])?;
    for row in rows {
        writer.write_record([
            row.method_label.as_str(),
            &row.pairs_traded.to_string(),
            &row.round_trips.to_string(),
            &row
                .sharpe
                .map(|s| s.to_string())
                .unwrap_or_else(|| "undefined".to_string()),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Checks `V_t = cash_t + unrealized_t` on every point, exactly to rounding.
pub fn accounting_identity_holds(trajectory: &PortfolioTrajectory) -> bool {
    trajectory
        .points
        .iter()
        .all(|p| (p.value - (p.cash + p.unrealized)).abs() <= 1e-9 * p.value.abs().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn test_config() -> TradingConfig {
        TradingConfig {
            in_sample_start: d(2018, 1, 1),
            in_sample_end: d(2018, 12, 31),
            out_of_sample_start: d(2019, 1, 1),
            out_of_sample_end: d(2019, 12, 31),
            ..TradingConfig::default()
        }
    }

    /// Builds the two price series so the out-of-sample spread follows the
    /// given path under params alpha=0, beta=1, mu=0, sigma=1.
    fn prices_for_spread_path(path: &[f64]) -> BTreeMap<CompanyId, PriceSeries> {
        let base = 100.0;
        let mut obs_a = Vec::new();
        let mut obs_b = Vec::new();
        for (i, &s) in path.iter().enumerate() {
            let date = d(2019, 1, 2) + chrono::Days::new(i as u64);
            obs_a.push((date, base + s));
            obs_b.push((date, base));
        }
        let mut prices = BTreeMap::new();
        prices.insert(
            CompanyId::from("a"),
            PriceSeries::new(CompanyId::from("a"), obs_a).unwrap(),
        );
        prices.insert(
            CompanyId::from("b"),
            PriceSeries::new(CompanyId::from("b"), obs_b).unwrap(),
        );
        prices
    }

    fn unit_params() -> SpreadParams {
        SpreadParams {
            alpha: 0.0,
            beta: 1.0,
            mu: 0.0,
            sigma: 1.0,
            fitted_through: d(2018, 12, 31),
        }
    }

    #[test]
    fn round_trip_on_mean_reversion() {
        // mu -> mu+1.2s -> mu: one short round trip, PnL +1.2 sigma.
        let prices = prices_for_spread_path(&[0.0, 1.2, 0.0]);
        let config = test_config();
        let log = simulate_pair(
            &unit_params(),
            (&CompanyId::from("a"), &CompanyId::from("b")),
            &prices,
            &config,
        )
        .unwrap();
        assert_eq!(log.round_trips, 1);
        assert!((log.realized_pnl - 1.2).abs() < 1e-12);
        let exit = log.events.last().unwrap();
        assert_eq!(exit.action, Action::Exit);
        assert_eq!(exit.reason, Reason::MeanExit);
        assert_eq!(exit.side, Side::ShortSpread);
        assert_eq!(log.audit.out_of_window_accesses, 0);
    }

    #[test]
    fn stop_loss_cuts_runaway_spread() {
        // mu -> mu+1.2s -> mu+2.4s: short entry, stop-loss, loss of 1.2 sigma.
        let prices = prices_for_spread_path(&[0.0, 1.2, 2.4]);
        let config = test_config();
        let log = simulate_pair(
            &unit_params(),
            (&CompanyId::from("a"), &CompanyId::from("b")),
            &prices,
            &config,
        )
        .unwrap();
        assert_eq!(log.round_trips, 1);
        assert!((log.realized_pnl + 1.2).abs() < 1e-12);
        assert_eq!(log.events.last().unwrap().reason, Reason::StopLoss);
    }

    #[test]
    fn quiet_spread_never_trades() {
        let prices = prices_for_spread_path(&[0.0, 0.5, -0.6, 0.3, -0.2]);
        let config = test_config();
        let log = simulate_pair(
            &unit_params(),
            (&CompanyId::from("a"), &CompanyId::from("b")),
            &prices,
            &config,
        )
        .unwrap();
        assert!(log.events.is_empty());
        assert_eq!(log.round_trips, 0);
        assert_eq!(log.realized_pnl, 0.0);
    }

    #[test]
    fn forced_close_on_final_day() {
        let prices = prices_for_spread_path(&[0.0, -1.5, -1.2, -0.9]);
        let config = test_config();
        let log = simulate_pair(
            &unit_params(),
            (&CompanyId::from("a"), &CompanyId::from("b")),
            &prices,
            &config,
        )
        .unwrap();
        // Long entered at -1.5, never recovers to mu, force-closed at -0.9.
        assert_eq!(log.events.last().unwrap().reason, Reason::ForcedClose);
        assert!((log.realized_pnl - 0.6).abs() < 1e-12);
        // Entries and exits alternate and every entry is closed.
        let mut open = false;
        for e in &log.events {
            match e.action {
                Action::Entry => {
                    assert!(!open);
                    open = true;
                }
                Action::Exit => {
                    assert!(open);
                    open = false;
                }
            }
        }
        assert!(!open);
    }

    #[test]
    fn accounting_identity_and_no_lookahead() {
        let path: Vec<f64> = (0..120)
            .map(|i| 1.8 * ((i as f64) * 0.37).sin())
            .collect();
        let prices = prices_for_spread_path(&path);
        let config = test_config();
        let log = simulate_pair(
            &unit_params(),
            (&CompanyId::from("a"), &CompanyId::from("b")),
            &prices,
            &config,
        )
        .unwrap();
        assert!(log.round_trips > 0);
        assert_eq!(log.audit.out_of_window_accesses, 0);
        let traj = portfolio_trajectory(std::slice::from_ref(&log), &config, "CD").unwrap();
        assert!(accounting_identity_holds(&traj));
    }

    #[test]
    fn params_fitted_inside_oos_window_are_flagged() {
        let prices = prices_for_spread_path(&[0.0, 1.2, 0.0]);
        let config = test_config();
        let bad_params = SpreadParams {
            fitted_through: d(2019, 6, 1),
            ..unit_params()
        };
        let log = simulate_pair(
            &bad_params,
            (&CompanyId::from("a"), &CompanyId::from("b")),
            &prices,
            &config,
        )
        .unwrap();
        assert!(log.audit.out_of_window_accesses > 0);
    }

    #[test]
    fn no_trades_give_flat_trajectory() {
        let prices = prices_for_spread_path(&[0.0, 0.1, -0.1, 0.2]);
        let config = test_config();
        let log = simulate_pair(
            &unit_params(),
            (&CompanyId::from("a"), &CompanyId::from("b")),
            &prices,
            &config,
        )
        .unwrap();
        let traj = portfolio_trajectory(&[log], &config, "CD").unwrap();
        assert!(traj
            .points
            .iter()
            .all(|p| (p.value - config.initial_cash_per_pair).abs() < 1e-12));
    }

    #[test]
    fn single_closed_trade_moves_terminal_value() {
        let prices = prices_for_spread_path(&[0.0, 1.2, 0.0, 0.1, 0.0]);
        let config = test_config();
        let log = simulate_pair(
            &unit_params(),
            (&CompanyId::from("a"), &CompanyId::from("b")),
            &prices,
            &config,
        )
        .unwrap();
        let traj = portfolio_trajectory(&[log], &config, "CD").unwrap();
        let terminal = traj.points.last().unwrap().value;
        assert!((terminal - (config.initial_cash_per_pair + 1.2)).abs() < 1e-9);
    }

    #[test]
    fn portfolio_is_exact_sum_of_pairs() {
        let path1: Vec<f64> = (0..90).map(|i| 1.6 * ((i as f64) * 0.41).sin()).collect();
        let path2: Vec<f64> = (0..90).map(|i| 1.4 * ((i as f64) * 0.23).cos()).collect();
        let config = test_config();
        let prices1 = prices_for_spread_path(&path1);
        let prices2 = prices_for_spread_path(&path2);
        let log1 = simulate_pair(
            &unit_params(),
            (&CompanyId::from("a"), &CompanyId::from("b")),
            &prices1,
            &config,
        )
        .unwrap();
        let mut log2 = simulate_pair(
            &unit_params(),
            (&CompanyId::from("a"), &CompanyId::from("b")),
            &prices2,
            &config,
        )
        .unwrap();
        log2.pair = (CompanyId::from("c"), CompanyId::from("d"));
        let combined = portfolio_trajectory(&[log1.clone(), log2.clone()], &config, "CD").unwrap();
        let solo1 = portfolio_trajectory(std::slice::from_ref(&log1), &config, "CD").unwrap();
        let solo2 = portfolio_trajectory(std::slice::from_ref(&log2), &config, "CD").unwrap();
        for (i, p) in combined.points.iter().enumerate() {
            let expect = solo1.points[i].value + solo2.points[i].value;
            assert!((p.value - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn sharpe_constant_value_is_error() {
        let points: Vec<TrajectoryPoint> = (0..60)
            .map(|i| TrajectoryPoint {
                date: d(2019, 1, 1) + chrono::Days::new(i),
                cash: 100.0,
                unrealized: 0.0,
                value: 100.0,
            })
            .collect();
        let traj = PortfolioTrajectory {
            method_label: "CD".to_string(),
            points,
        };
        assert!(matches!(sharpe_ratio(&traj), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn sharpe_alternating_returns_near_zero() {
        let mut value = 100.0;
        let points: Vec<TrajectoryPoint> = (0..61)
            .map(|i| {
                let p = TrajectoryPoint {
                    date: d(2019, 1, 1) + chrono::Days::new(i),
                    cash: value,
                    unrealized: 0.0,
                    value,
                };
                value *= if i % 2 == 0 { 1.01 } else { 0.99 };
                p
            })
            .collect();
        let traj = PortfolioTrajectory {
            method_label: "CD".to_string(),
            points,
        };
        let sharpe = sharpe_ratio(&traj).unwrap();
        assert!(sharpe.abs() < 0.05, "sharpe {sharpe}");
    }

    #[test]
    fn sharpe_requires_thirty_days() {
        let points: Vec<TrajectoryPoint> = (0..10)
            .map(|i| TrajectoryPoint {
                date: d(2019, 1, 1) + chrono::Days::new(i),
                cash: 100.0 + i as f64,
                unrealized: 0.0,
                value: 100.0 + i as f64,
            })
            .collect();
        let traj = PortfolioTrajectory {
            method_label: "CD".to_string(),
            points,
        };
        assert!(matches!(
            sharpe_ratio(&traj),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn preselect_strict_threshold() {
        use crate::graphcluster::{Cluster, MethodTag};
        let clustering = YearClustering {
            year: 2018,
            theta: Some(-2.0),
            method: MethodTag::Cd,
            clusters: vec![Cluster {
                id: "0001".to_string(),
                members: vec![CompanyId::from("a"), CompanyId::from("b"), CompanyId::from("c")],
            }],
        };
        let mut returns = BTreeMap::new();
        let base: Vec<f64> = (0..24).map(|i| (i as f64 * 0.7).sin() * 0.05).collect();
        returns.insert(CompanyId::from("a"), base.clone());
        returns.insert(CompanyId::from("b"), base.clone()); // rho = 1 with a
        let noise: Vec<f64> = (0..24).map(|i| (i as f64 * 1.3).cos() * 0.05).collect();
        returns.insert(CompanyId::from("c"), noise);
        let config = test_config();
        let pairs = preselect_pairs(&clustering, &returns, &config);
        assert_eq!(pairs, vec![(CompanyId::from("a"), CompanyId::from("b"))]);
    }

    #[test]
    fn preselect_boundary_is_exclusive() {
        use crate::graphcluster::{Cluster, MethodTag};
        let clustering = YearClustering {
            year: 2018,
            theta: None,
            method: MethodTag::Sic,
            clusters: vec![Cluster {
                id: "x".to_string(),
                members: vec![CompanyId::from("a"), CompanyId::from("b")],
            }],
        };
        // Construct two series with correlation exactly 0.95: u and
        // 0.95 u + sqrt(1-0.95^2) w with u, w orthonormal and centered.
        let mut u = vec![0.0; 24];
        let mut w = vec![0.0; 24];
        u[0] = 1.0;
        u[1] = -1.0;
        w[2] = 1.0;
        w[3] = -1.0;
        let rho: f64 = 0.95;
        let mixed: Vec<f64> = u
            .iter()
            .zip(&w)
            .map(|(&a, &b)| rho * a + (1.0 - rho * rho).sqrt() * b)
            .collect();
        let mut returns = BTreeMap::new();
        returns.insert(CompanyId::from("a"), u.clone());
        returns.insert(CompanyId::from("b"), mixed);
        let config = test_config();
        assert!((pearson(&returns[&CompanyId::from("a")], &returns[&CompanyId::from("b")])
            .unwrap()
            - 0.95)
            .abs()
            < 1e-12);
        assert!(preselect_pairs(&clustering, &returns, &config).is_empty());
    }

    #[test]
    fn short_overlap_pairs_are_skipped() {
        let mut prices = BTreeMap::new();
        let obs: Vec<(NaiveDate, f64)> = (0..10)
            .map(|i| (d(2018, 3, 1) + chrono::Days::new(i), 100.0 + i as f64))
            .collect();
        prices.insert(
            CompanyId::from("a"),
            PriceSeries::new(CompanyId::from("a"), obs.clone()).unwrap(),
        );
        prices.insert(
            CompanyId::from("b"),
            PriceSeries::new(CompanyId::from("b"), obs).unwrap(),
        );
        let config = test_config();
        let (passing, skipped) = select_cointegrated(
            &[(CompanyId::from("a"), CompanyId::from("b"))],
            &prices,
            &config,
            &EngleGrangerConfig::default(),
        );
        assert!(passing.is_empty());
        assert_eq!(skipped.len(), 1);
        assert!(skipped[0].reason.contains("overlapping"));
    }
}
