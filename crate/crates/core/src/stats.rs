//! Rater-consistency statistics: per-case mean and sample standard
//! deviation (n−1 denominator throughout), Pearson correlation with a
//! two-sided t-test p-value, and one-way random-effects ICC(1,1) and ICC(1,k).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate variance: every rating is identical")]
    DegenerateVariance,

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Cases × repeated ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingsMatrix {
    case_ids: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl RatingsMatrix {
    /// Cases are labelled `c1`, `c2`, ...
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        let ids = (1..=values.len()).map(|i| format!("c{i}")).collect();
        Self::with_ids(ids, values)
    }

    pub fn with_ids(case_ids: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        if case_ids.len() != values.len() {
            return Err(StatsError::InvalidInput(format!(
                "{} case ids for {} rows",
                case_ids.len(),
                values.len()
            )));
        }
        if values.len() < 2 {
            return Err(StatsError::InvalidInput(format!("need at least 2 cases, got {}", values.len())));
        }
        let m = values[0].len();
        if m < 2 {
            return Err(StatsError::InvalidInput(format!("need at least 2 ratings per case, got {m}")));
        }
        for (id, row) in case_ids.iter().zip(&values) {
            if row.len() != m {
                return Err(StatsError::InvalidInput(format!(
                    "case {id} has {} ratings, expected {m}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(StatsError::InvalidInput(format!("case {id} has a non-finite rating")));
            }
        }
        Ok(Self { case_ids, values })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn m(&self) -> usize {
        self.values[0].len()
    }

    pub fn case_ids(&self) -> &[String] {
        &self.case_ids
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn row_means(&self) -> Vec<f64> {
        self.values.iter().map(|r| mean(r)).collect()
    }

    pub fn row_stds(&self) -> Vec<f64> {
        self.values.iter().map(|r| sample_std(r)).collect()
    }

    /// Long-format CSV with header `case_id,repeat,score`. Rows may come in
    /// any order; every case must carry repeats `0..m` exactly once.
    pub fn read_csv(path: &Path) -> Result<Self, StatsError> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: io::Read>(reader: R) -> Result<Self, StatsError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut order: Vec<String> = Vec::new();
        let mut cells: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
        for rec in rdr.deserialize::<CsvRow>() {
            let row = rec.map_err(|e| StatsError::Csv(e.to_string()))?;
            let case = cells.entry(row.case_id.clone()).or_insert_with(|| {
                order.push(row.case_id.clone());
                BTreeMap::new()
            });
            if case.insert(row.repeat, row.score).is_some() {
                return Err(StatsError::Csv(format!(
                    "case {} repeat {} appears twice",
                    row.case_id, row.repeat
                )));
            }
        }
        let mut values = Vec::with_capacity(order.len());
        for id in &order {
            let reps = &cells[id];
            if reps.keys().copied().ne(0..reps.len()) {
                return Err(StatsError::Csv(format!("case {id} repeats are not numbered 0..{}", reps.len())));
            }
            values.push(reps.values().copied().collect());
        }
        Self::with_ids(order, values)
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), StatsError> {
        write_long_csv(&self.case_ids, &self.values, writer)
    }
}

/// Writes `case_id,repeat,score` rows, one per rating.
pub fn write_long_csv<W: io::Write>(case_ids: &[String], rows: &[Vec<f64>], writer: W) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_writer(writer);
    for (id, row) in case_ids.iter().zip(rows) {
        for (repeat, &score) in row.iter().enumerate() {
            w.serialize(CsvRow { case_id: id.clone(), repeat, score })
                .map_err(|e| StatsError::Csv(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    case_id: String,
    repeat: usize,
    score: f64,
}

/// Exact for constant input, where naive summation can drift by an ulp.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return xs.first().copied().unwrap_or(f64::NAN);
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation, n−1 denominator. Zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided; exactly 0 when |r| = 1.
    pub p: f64,
    pub n: usize,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::InvalidInput(format!("series lengths {} and {} differ", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::InvalidInput(format!("need at least 3 pairs, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite value".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::UndefinedCorrelation("a series has zero variance".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(Correlation { r, p: two_sided_p(r, n), n })
}

fn two_sided_p(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let one_minus = 1.0 - r * r;
    if one_minus <= 0.0 {
        return 0.0;
    }
    let t2 = r * r * df / one_minus;
    // P(|T| >= |t|) = I_{df/(df+t²)}(df/2, 1/2)
    reg_inc_beta(df / 2.0, 0.5, df / (df + t2))
}

fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta I_x(a, b), continued fraction by the modified
/// Lentz method.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = f64::from(m);
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// One-way ANOVA mean squares (between cases, within cases).
pub fn mean_squares(ratings: &RatingsMatrix) -> (f64, f64) {
    let (n, m) = (ratings.n() as f64, ratings.m() as f64);
    let means = ratings.row_means();
    let grand = mean(&means);
    let bms = m * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (n - 1.0);
    let ss_within: f64 = ratings
        .rows()
        .iter()
        .zip(&means)
        .map(|(row, mu)| row.iter().map(|x| (x - mu).powi(2)).sum::<f64>())
        .sum();
    (bms, ss_within / (n * (m - 1.0)))
}

/// Single-rating ICC: (BMS − WMS) / (BMS + (m − 1)·WMS).
pub fn icc_1_1(ratings: &RatingsMatrix) -> Result<f64, StatsError> {
    let (bms, wms) = mean_squares(ratings);
    let denom = bms + (ratings.m() as f64 - 1.0) * wms;
    if denom == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    Ok((bms - wms) / denom)
}

/// Averaged-rating ICC: (BMS − WMS) / BMS.
pub fn icc_1_k(ratings: &RatingsMatrix) -> Result<f64, StatsError> {
    let (bms, wms) = mean_squares(ratings);
    if bms == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    Ok((bms - wms) / bms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case_id: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub n: usize,
    pub m: usize,
    pub cases: Vec<CaseSummary>,
    /// Pearson r between case means and case standard deviations.
    pub correlation: Option<Correlation>,
    pub icc_1_1: Option<f64>,
    pub icc_1_k: Option<f64>,
    /// Why a statistic above is missing.
    pub degenerate: Vec<String>,
}

pub fn stability_report(ratings: &RatingsMatrix) -> StabilityReport {
    let means = ratings.row_means();
    let stds = ratings.row_stds();
    let mut degenerate = Vec::new();
    let correlation = match pearson(&means, &stds) {
        Ok(c) => Some(c),
        Err(e) => {
            degenerate.push(format!("correlation: {e}"));
            None
        }
    };
    let mut icc = |name: &str, r: Result<f64, StatsError>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            degenerate.push(format!("{name}: {e}"));
            None
        }
    };
    let icc_1_1 = icc("icc_1_1", icc_1_1(ratings));
    let icc_1_k = icc("icc_1_k", icc_1_k(ratings));
    let cases = ratings
        .case_ids()
        .iter()
        .zip(means.iter().zip(&stds))
        .map(|(id, (&mean, &std))| CaseSummary { case_id: id.clone(), mean, std })
        .collect();
    StabilityReport { n: ratings.n(), m: ratings.m(), cases, correlation, icc_1_1, icc_1_k, degenerate }
}

impl StabilityReport {
    pub fn correlation_degenerate(&self) -> bool {
        self.correlation.is_none()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "cases: {}  ratings per case: {}", self.n, self.m);
        let _ = writeln!(s, "{:<12} {:>10} {:>10}", "case", "mean", "std");
        for c in &self.cases {
            let _ = writeln!(s, "{:<12} {:>10.4} {:>10.4}", c.case_id, c.mean, c.std);
        }
        match &self.correlation {
            Some(c) => {
                let _ = writeln!(s, "pearson r(mean, std) = {:.4}  p = {:.4}  (n = {})", c.r, c.p, c.n);
            }
            None => s.push_str("pearson r(mean, std) = undefined\n"),
        }
        let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(s, "ICC(1,1) = {}", fmt(self.icc_1_1));
        let _ = writeln!(s, "ICC(1,{}) = {}", self.m, fmt(self.icc_1_k));
        for d in &self.degenerate {
            let _ = writeln!(s, "degenerate: {d}");
        }
        s
    }
}
