//! OLS hedge regression, the augmented Dickey-Fuller statistic with
//! response-surface p-values, and the two-step Engle-Granger test.
//!
//! The ADF regression on Engle-Granger residuals carries no deterministic
//! terms (the residuals are mean-zero by construction); the standard
//! with-constant variant exists for validation against published
//! Dickey-Fuller quantiles. P-values come from the MacKinnon tau response
//! surfaces embedded under `data/mackinnon_tau_c.csv`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::corpus::CompanyId;
use crate::error::{Error, Result};

/// First-stage hedge regression `y = alpha + beta x + e`.
#[derive(Clone, Debug)]
pub struct OlsFit {
    pub alpha: f64,
    pub beta: f64,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
}

/// Bivariate least squares with intercept. Constant `x` is fatal.
pub fn ols(y: &[f64], x: &[f64]) -> Result<OlsFit> {
    if y.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: x.len(),
        });
    }
    let n = y.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "OLS needs at least 3 observations, got {n}"
        )));
    }
    let nf = n as f64;
    let mean_x = x.iter().sum::<f64>() / nf;
    let mean_y = y.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mean_x;
        let dy = yi - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::SingularDesign);
    }
    let beta = sxy / sxx;
    let alpha = mean_y - beta * mean_x;
    let residuals: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| yi - alpha - beta * xi)
        .collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - rss / syy };
    Ok(OlsFit {
        alpha,
        beta,
        residuals,
        r_squared,
    })
}

/// Deterministic terms of the ADF regression.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Deterministic {
    None,
    Constant,
}

/// Lag-order policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LagRule {
    Fixed(usize),
    /// Downward AIC selection from the maximum lag; candidates are compared
    /// on a common max-lag-aligned sample, the final fit realigns at the
    /// chosen lag.
    Aic,
}

/// Schwert's rule of thumb: `floor(12 (T/100)^{1/4})`.
pub fn schwert_max_lag(t: usize) -> usize {
    (12.0 * (t as f64 / 100.0).powf(0.25)).floor() as usize
}

struct AdfFit {
    t_stat: f64,
    rss: f64,
    nobs: usize,
    k: usize,
}

/// One ADF regression: target `dy[i]` for `i in align..`, regressors
/// `[x[i], dy[i-1..i-p], (1)]`.
fn adf_regression(x: &[f64], dy: &[f64], align: usize, p: usize, det: Deterministic) -> Result<AdfFit> {
    let t = dy.len(); // == x.len() - 1
    if align >= t {
        return Err(Error::InsufficientData(
            "no observations left after lag alignment".to_string(),
        ));
    }
    let nobs = t - align;
    let k = 1 + p + usize::from(det == Deterministic::Constant);
    if nobs < k + 2 {
        return Err(Error::InsufficientData(format!(
            "ADF regression has {nobs} observations for {k} coefficients"
        )));
    }
    let mut design = DMatrix::zeros(nobs, k);
    let mut target = DVector::zeros(nobs);
    for (row, i) in (align..t).enumerate() {
        design[(row, 0)] = x[i];
        for j in 1..=p {
            design[(row, j)] = dy[i - j];
        }
        if det == Deterministic::Constant {
            design[(row, k - 1)] = 1.0;
        }
        target[row] = dy[i];
    }
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * &target;
    let chol = nalgebra::Cholesky::new(xtx.clone()).ok_or(Error::SingularDesign)?;
    let coef = chol.solve(&xty);
    let fitted = &design * &coef;
    let rss = (&target - &fitted).norm_squared();
    let sigma2 = rss / (nobs - k) as f64;
    let xtx_inv = xtx.try_inverse().ok_or(Error::SingularDesign)?;
    let se = (sigma2 * xtx_inv[(0, 0)]).sqrt();
    if se == 0.0 || !se.is_finite() {
        return Err(Error::SingularDesign);
    }
    Ok(AdfFit {
        t_stat: coef[0] / se,
        rss,
        nobs,
        k,
    })
}

/// ADF t-statistic of the lagged-level coefficient, plus the lag order used.
pub fn adf_statistic(
    series: &[f64],
    det: Deterministic,
    max_lag: usize,
    rule: LagRule,
) -> Result<(f64, usize)> {
    if series.len() <= max_lag + 2 {
        return Err(Error::InsufficientData(format!(
            "series of length {} too short for max_lag {max_lag}",
            series.len()
        )));
    }
    let dy: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    match rule {
        LagRule::Fixed(p) => {
            if p > max_lag {
                return Err(Error::Config(format!(
                    "fixed lag {p} exceeds max_lag {max_lag}"
                )));
            }
            let fit = adf_regression(series, &dy, p, p, det)?;
            Ok((fit.t_stat, p))
        }
        LagRule::Aic => {
            let mut best: Option<(f64, usize)> = None;
            for p in 0..=max_lag {
                let fit = adf_regression(series, &dy, max_lag, p, det)?;
                let aic = fit.nobs as f64 * (fit.rss / fit.nobs as f64).ln() + 2.0 * fit.k as f64;
                if best.map_or(true, |(b, _)| aic < b) {
                    best = Some((aic, p));
                }
            }
            let (_, p) = best.expect("at least lag 0 evaluated");
            let fit = adf_regression(series, &dy, p, p, det)?;
            Ok((fit.t_stat, p))
        }
    }
}

/// Which response surface applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PvalueCase {
    /// Standard unit-root test with constant (one series).
    StandardConstant,
    /// Residuals of a two-variable cointegrating regression.
    EgResiduals2Var,
}

struct TauSurface {
    tau_min: f64,
    tau_max: f64,
    tau_star: f64,
    small_p: [f64; 3],
    large_p: [f64; 4],
}

fn tau_surfaces() -> &'static Vec<TauSurface> {
    static SURFACES: OnceLock<Vec<TauSurface>> = OnceLock::new();
    SURFACES.get_or_init(|| {
        let raw = include_str!("../data/mackinnon_tau_c.csv");
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(raw.as_bytes());
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.expect("embedded coefficient table is well-formed");
            let get = |i: usize| -> f64 { record[i].trim().parse().expect("numeric coefficient") };
            rows.push(TauSurface {
                tau_min: get(1),
                tau_max: get(2),
                tau_star: get(3),
                small_p: [get(4), get(5), get(6)],
                large_p: [get(7), get(8), get(9), get(10)],
            });
        }
        assert_eq!(rows.len(), 6, "six N rows expected in the tau table");
        rows
    })
}

const P_FLOOR: f64 = 1e-6;

/// Approximate p-value of an ADF/cointegration tau statistic, clamped to
/// `[1e-6, 1 - 1e-6]`.
pub fn adf_pvalue(stat: f64, case: PvalueCase) -> f64 {
    let n = match case {
        PvalueCase::StandardConstant => 1,
        PvalueCase::EgResiduals2Var => 2,
    };
    let surface = &tau_surfaces()[n - 1];
    let raw = if stat > surface.tau_max {
        1.0
    } else if stat < surface.tau_min {
        0.0
    } else {
        let poly = if stat <= surface.tau_star {
            let b = surface.small_p;
            b[0] + b[1] * stat + b[2] * stat * stat
        } else {
            let b = surface.large_p;
            b[0] + b[1] * stat + b[2] * stat * stat + b[3] * stat * stat * stat
        };
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        normal.cdf(poly)
    };
    raw.clamp(P_FLOOR, 1.0 - P_FLOOR)
}

/// Engle-Granger configuration.
#[derive(Clone, Copy, Debug)]
pub struct EngleGrangerConfig {
    /// Cointegration cutoff on the p-value.
    pub p_cutoff: f64,
    /// Maximum ADF lag; `None` applies Schwert's rule.
    pub max_lag: Option<usize>,
    pub lag_rule: LagRule,
    /// Minimum aligned series length.
    pub min_len: usize,
}

impl Default for EngleGrangerConfig {
    fn default() -> Self {
        EngleGrangerConfig {
            p_cutoff: 0.01,
            max_lag: None,
            lag_rule: LagRule::Aic,
            min_len: 100,
        }
    }
}

/// Outcome of one Engle-Granger test.
#[derive(Clone, Debug)]
pub struct CointResult {
    /// `(dependent, independent)` legs; the dependent leg is the
    /// lexicographically smaller company id.
    pub pair: (CompanyId, CompanyId),
    pub alpha: f64,
    pub beta: f64,
    pub adf_stat: f64,
    pub p_value: f64,
    pub lag_order: usize,
    pub is_cointegrated: bool,
    /// Residual spread was (numerically) zero-variance; reported as
    /// cointegrated with this flag raised.
    pub zero_variance_spread: bool,
}

/// Two-step Engle-Granger test on aligned price series. The regression
/// direction is fixed: the lexicographically smaller id is the dependent
/// leg. Swapping legs may change the outcome; callers surface the direction
/// through `pair`, never hide it.
pub fn engle_granger(
    id_a: &CompanyId,
    prices_a: &[f64],
    id_b: &CompanyId,
    prices_b: &[f64],
    config: &EngleGrangerConfig,
) -> Result<CointResult> {
    if prices_a.len() != prices_b.len() {
        return Err(Error::DimensionMismatch {
            expected: prices_a.len(),
            got: prices_b.len(),
        });
    }
    let t = prices_a.len();
    if t < config.min_len {
        return Err(Error::InsufficientData(format!(
            "aligned window of {t} trading days is below the floor of {}",
            config.min_len
        )));
    }
    let (dep_id, dep, indep_id, indep) = if id_a <= id_b {
        (id_a, prices_a, id_b, prices_b)
    } else {
        (id_b, prices_b, id_a, prices_a)
    };
    let fit = ols(dep, indep)?;
    let resid_scale = dep.iter().map(|v| v * v).sum::<f64>() / t as f64;
    let resid_var = fit.residuals.iter().map(|e| e * e).sum::<f64>() / t as f64;
    if resid_var <= 1e-20 * resid_scale.max(1.0) {
        return Ok(CointResult {
            pair: (dep_id.clone(), indep_id.clone()),
            alpha: fit.alpha,
            beta: fit.beta,
            adf_stat: f64::NEG_INFINITY,
            p_value: P_FLOOR,
            lag_order: 0,
            is_cointegrated: true,
            zero_variance_spread: true,
        });
    }
    let max_lag = config
        .max_lag
        .unwrap_or_else(|| schwert_max_lag(t))
        .min((t.saturating_sub(13)) / 2);
    let (adf_stat, lag_order) =
        adf_statistic(&fit.residuals, Deterministic::None, max_lag, config.lag_rule)?;
    let p_value = adf_pvalue(adf_stat, PvalueCase::EgResiduals2Var);
    Ok(CointResult {
        pair: (dep_id.clone(), indep_id.clone()),
        alpha: fit.alpha,
        beta: fit.beta,
        adf_stat,
        p_value,
        lag_order,
        is_cointegrated: p_value < config.p_cutoff,
        zero_variance_spread: false,
    })
}

/// Writes `id_a,id_b,beta,alpha,adf_stat,lag,p_value,cointegrated`.
pub fn write_coint_report(path: &std::path::Path, results: &[CointResult]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(crate::sparsefeat::from_csv_open(path))?;
    writer.write_record([
        "id_a",
        "id_b",
        "beta",
        "alpha",
        "adf_stat",
        "lag",
        "p_value",
        "cointegrated",
    ])?;
    for r in results {
        writer.write_record([
            r.pair.0.as_str(),
            r.pair.1.as_str(),
            &r.beta.to_string(),
            &r.alpha.to_string(),
            &r.adf_stat.to_string(),
            &r.lag_order.to_string(),
            &r.p_value.to_string(),
            &r.is_cointegrated.to_string(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
