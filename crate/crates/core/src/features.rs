//! Interpretable feature matrix for the surrogate.
//!
//! Every row is addressed by a forecast origin `o` and a step `h >= 1`; the
//! row describes time `k = o + h - 1` and may only read target values at
//! positions `< o`. In-sample rows are the special case `h = 1`, `o = k`.
//! Horizon rows therefore see lag, rolling and decomposition values frozen at
//! the last training observation, while calendar and age move with `k`.

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::data::{ProcessedSeries, SeriesStats};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub lags: Vec<usize>,
    pub windows: Vec<usize>,
    pub pct_changes: Vec<usize>,
    /// Decomposition period (7 for daily data).
    pub period: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            lags: vec![1, 7, 14, 28],
            windows: vec![7, 28],
            pct_changes: vec![1, 7],
            period: 7,
        }
    }
}

impl FeatureConfig {
    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["day_of_week", "day_of_month", "week_of_year", "month"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend(self.lags.iter().map(|l| format!("lag_{l}")));
        for w in &self.windows {
            names.push(format!("roll_mean_{w}"));
            names.push(format!("roll_std_{w}"));
            names.push(format!("roll_skew_{w}"));
        }
        names.push("expanding_mean".into());
        names.push("expanding_std".into());
        names.extend(self.pct_changes.iter().map(|p| format!("pct_change_{p}")));
        names.push("trend".into());
        names.push("seasonal".into());
        names.push("age".into());
        names.push("steps_ahead".into());
        names
    }

    pub fn validate(&self) -> Result<()> {
        if self.lags.contains(&0) || self.windows.contains(&0) || self.pct_changes.contains(&0) {
            return Err(Error::InvalidParameter("lags, windows and pct_changes must be >= 1".into()));
        }
        if self.period < 2 {
            return Err(Error::InvalidParameter(format!("period {} < 2", self.period)));
        }
        Ok(())
    }
}

/// Column names in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
}

impl FeatureSchema {
    pub fn new(names: Vec<String>) -> Self {
        Self { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub item_id: String,
    /// Position `k` in the processed series.
    pub time: usize,
    pub origin: usize,
    pub step: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub schema: FeatureSchema,
    pub rows: Vec<FeatureRow>,
}

impl FeatureMatrix {
    pub fn empty(schema: FeatureSchema) -> Self {
        Self { schema, rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn append(&mut self, other: FeatureMatrix) -> Result<()> {
        if other.schema != self.schema {
            return Err(Error::SchemaMismatch {
                expected: self.schema.len(),
                got: other.schema.len(),
            });
        }
        self.rows.extend(other.rows);
        Ok(())
    }

    /// Appends a column whose value for each row is `value(row)`.
    pub fn push_column(&mut self, name: &str, mut value: impl FnMut(&FeatureRow) -> f64) {
        self.schema.names.push(name.to_string());
        for row in &mut self.rows {
            let v = value(row);
            row.values.push(v);
        }
    }

    pub fn column(&self, index: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.values[index]).collect()
    }
}

/// Classical additive decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    /// One period of the seasonal component, indexed by `position % period`.
    pub pattern: Vec<f64>,
}

/// Centered moving-average trend (2xp for even periods) with per-phase
/// seasonal means re-centered to sum to zero. Trend edges take the nearest
/// valid value.
pub fn decompose(values: &[f64], period: usize) -> Result<Decomposition> {
    if period < 2 {
        return Err(Error::InvalidParameter(format!("period {period} < 2")));
    }
    let n = values.len();
    if n < 2 * period {
        return Err(Error::TooShort {
            length: n,
            required: 2 * period,
        });
    }
    let half = period / 2;
    let mut trend = vec![f64::NAN; n];
    for (i, t) in trend.iter_mut().enumerate().take(n - half).skip(half) {
        *t = if period % 2 == 1 {
            values[i - half..=i + half].iter().sum::<f64>() / period as f64
        } else {
            let inner: f64 = values[i + 1 - half..i + half].iter().sum();
            (inner + 0.5 * (values[i - half] + values[i + half])) / period as f64
        };
    }

    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for i in half..n - half {
        sums[i % period] += values[i] - trend[i];
        counts[i % period] += 1;
    }
    let mut pattern: Vec<f64> = sums.iter().zip(&counts).map(|(s, c)| s / *c as f64).collect();
    let center = pattern.iter().sum::<f64>() / period as f64;
    pattern.iter_mut().for_each(|p| *p -= center);

    let first = trend[half];
    let last = trend[n - half - 1];
    trend[..half].iter_mut().for_each(|t| *t = first);
    trend[n - half..].iter_mut().for_each(|t| *t = last);

    let seasonal = (0..n).map(|i| pattern[i % period]).collect();
    Ok(Decomposition {
        trend,
        seasonal,
        pattern,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pop_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Adjusted Fisher-Pearson skewness; 0 when undefined.
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 3 {
        return 0.0;
    }
    let nf = n as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / nf;
    if m2 <= 1e-24 * m.abs().max(1.0).powi(2) {
        return 0.0;
    }
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / nf;
    (nf * (nf - 1.0)).sqrt() / (nf - 2.0) * m3 / m2.powf(1.5)
}

/// Builds rows for one processed series.
pub struct FeatureBuilder<'a> {
    series: &'a ProcessedSeries,
    /// Target on the modelling scale (normalized when stats are non-identity).
    target: Vec<f64>,
    config: &'a FeatureConfig,
}

impl<'a> FeatureBuilder<'a> {
    pub fn new(series: &'a ProcessedSeries, stats: &SeriesStats, config: &'a FeatureConfig) -> Result<Self> {
        config.validate()?;
        if let Some(&lag) = config.lags.iter().find(|&&l| l >= series.effective_length()) {
            return Err(Error::InvalidParameter(format!(
                "lag {lag} >= series length {}",
                series.effective_length()
            )));
        }
        Ok(Self {
            series,
            target: series.values.iter().map(|v| stats.normalize(*v)).collect(),
            config,
        })
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::new(self.config.column_names())
    }

    /// Row for time `origin + step - 1` using history strictly before `origin`.
    pub fn row(&self, origin: usize, step: usize) -> FeatureRow {
        self.rows_for_origin(origin, &[step]).pop().expect("one row")
    }

    /// Rows for several steps sharing the origin; the history-derived block
    /// is computed once.
    pub fn rows_for_origin(&self, origin: usize, steps: &[usize]) -> Vec<FeatureRow> {
        assert!(origin <= self.target.len(), "origin beyond observed history");
        let hist = &self.target[..origin];
        let raw = &self.series.values[..origin];
        let cfg = self.config;
        let o = origin;

        let mut frozen = Vec::new();
        for &lag in &cfg.lags {
            frozen.push(if o >= lag { hist[o - lag] } else { f64::NAN });
        }
        for &w in &cfg.windows {
            if o >= w {
                let win = &hist[o - w..];
                frozen.extend([mean(win), pop_std(win), skewness(win)]);
            } else {
                frozen.extend([f64::NAN; 3]);
            }
        }
        if o >= 1 {
            frozen.extend([mean(hist), pop_std(hist)]);
        } else {
            frozen.extend([f64::NAN; 2]);
        }
        // Percentage changes are ratios of raw demand, which are already scale free.
        for &p in &cfg.pct_changes {
            let v = if o > p {
                let prev = raw[o - 1 - p];
                if prev != 0.0 {
                    (raw[o - 1] - prev) / prev.abs()
                } else {
                    f64::NAN
                }
            } else {
                f64::NAN
            };
            frozen.push(v);
        }
        let decomposition = decompose(hist, cfg.period).ok();

        steps
            .iter()
            .map(|&step| {
                assert!(step >= 1, "steps are 1-based");
                let k = o + step - 1;
                let date = self.series.date_at(k);
                let mut values = Vec::with_capacity(frozen.len() + 8);
                values.extend([
                    date.weekday().num_days_from_monday() as f64,
                    date.day() as f64,
                    date.iso_week().week() as f64,
                    date.month() as f64,
                ]);
                values.extend_from_slice(&frozen);
                match &decomposition {
                    Some(d) => values.extend([*d.trend.last().unwrap(), d.pattern[k % cfg.period]]),
                    None => values.extend([f64::NAN, f64::NAN]),
                }
                values.push((k + self.series.offset) as f64);
                values.push(step as f64);
                FeatureRow {
                    item_id: self.series.item_id.clone(),
                    time: k,
                    origin: o,
                    step,
                    values,
                }
            })
            .collect()
    }

    /// Rows for steps `1..=horizon` from `origin`.
    pub fn horizon_rows(&self, origin: usize, horizon: usize) -> FeatureMatrix {
        let steps: Vec<usize> = (1..=horizon).collect();
        FeatureMatrix {
            schema: self.schema(),
            rows: self.rows_for_origin(origin, &steps),
        }
    }
}

/// In-sample matrix: one row per time step, each using strictly earlier values.
pub fn build_feature_matrix(series: &ProcessedSeries, stats: &SeriesStats, config: &FeatureConfig) -> Result<FeatureMatrix> {
    let builder = FeatureBuilder::new(series, stats, config)?;
    let rows = (0..series.effective_length()).map(|k| builder.row(k, 1)).collect();
    Ok(FeatureMatrix {
        schema: builder.schema(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn series(values: Vec<f64>) -> ProcessedSeries {
        let start = NaiveDate::from_ymd_opt(2025, 5, 1).unwrap();
        ProcessedSeries {
            item_id: "x".into(),
            dates: (0..values.len()).map(|i| start + chrono::Days::new(i as u64)).collect(),
            values,
            offset: 0,
        }
    }

    fn col(m: &FeatureMatrix, name: &str) -> usize {
        m.schema.index_of(name).unwrap()
    }

    #[test]
    fn lag_and_rolling_use_strictly_prior_values() {
        let s = series(vec![3.0, 5.0, 7.0]);
        let cfg = FeatureConfig {
            lags: vec![1],
            windows: vec![2],
            pct_changes: vec![1],
            period: 2,
        };
        let m = build_feature_matrix(&s, &SeriesStats::IDENTITY, &cfg).unwrap();
        assert_eq!(m.rows[2].values[col(&m, "lag_1")], 5.0);
        assert_eq!(m.rows[2].values[col(&m, "roll_mean_2")], 4.0);
        assert!(m.rows[0].values[col(&m, "lag_1")].is_nan());
    }

    #[test]
    fn calendar_is_monday_based() {
        let s = series(vec![1.0; 40]);
        let m = build_feature_matrix(&s, &SeriesStats::IDENTITY, &FeatureConfig::default()).unwrap();
        // 2025-05-01 is a Thursday.
        assert_eq!(m.rows[0].values[col(&m, "day_of_week")], 3.0);
        assert_eq!(m.rows[0].values[col(&m, "month")], 5.0);
        assert_eq!(m.rows[0].values[col(&m, "day_of_month")], 1.0);
        assert_eq!(m.rows[0].values[col(&m, "week_of_year")], 18.0);
    }

    #[test]
    fn lag_longer_than_series_is_rejected() {
        let s = series(vec![1.0; 20]);
        assert!(build_feature_matrix(&s, &SeriesStats::IDENTITY, &FeatureConfig::default()).is_err());
    }

    #[test]
    fn decompose_alternating_pattern() {
        let v: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { 2.0 }).collect();
        let d = decompose(&v, 2).unwrap();
        for t in &d.trend {
            assert!((t - 1.5).abs() < 1e-12);
        }
        assert!((d.pattern[0] + 0.5).abs() < 1e-12);
        assert!((d.pattern[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn decompose_constant_and_ramp() {
        let d = decompose(&[4.0; 21], 7).unwrap();
        assert!(d.trend.iter().all(|t| (*t - 4.0).abs() < 1e-12));
        assert!(d.seasonal.iter().all(|s| s.abs() < 1e-12));

        let ramp: Vec<f64> = (0..50).map(|i| 2.0 * i as f64 + 1.0).collect();
        let d = decompose(&ramp, 7).unwrap();
        // brute force: every detrended value at a valid position is zero
        for i in 3..47 {
            let window: f64 = ramp[i - 3..=i + 3].iter().sum::<f64>() / 7.0;
            assert!((window - ramp[i]).abs() < 1e-9);
        }
        assert!(d.seasonal.iter().all(|s| s.abs() < 1e-9));
    }

    #[test]
    fn decompose_errors() {
        assert!(decompose(&[1.0; 10], 1).is_err());
        assert!(decompose(&[1.0; 13], 7).is_err());
    }

    #[test]
    fn skewness_edge_cases() {
        assert_eq!(skewness(&[1.0, 2.0]), 0.0);
        assert_eq!(skewness(&[3.0, 3.0, 3.0]), 0.0);
        assert_eq!(skewness(&[1.0, 2.0, 3.0]), 0.0);
        // [0,0,3]: m=1, m2=2, m3=2 -> g1=2/2^1.5; G1 = sqrt(6)/1 * g1
        let expected = 6f64.sqrt() * 2.0 / 2f64.powf(1.5);
        assert!((skewness(&[0.0, 0.0, 3.0]) - expected).abs() < 1e-12);
    }

    #[test]
    fn horizon_rows_freeze_history() {
        let v: Vec<f64> = (0..80).map(|i| (i as f64 * 0.7).sin() + 3.0).collect();
        let s = series(v);
        let cfg = FeatureConfig::default();
        let b = FeatureBuilder::new(&s, &SeriesStats::IDENTITY, &cfg).unwrap();
        let m = b.horizon_rows(60, 10);
        let lag = col(&m, "lag_1");
        let dow = col(&m, "day_of_week");
        let age = col(&m, "age");
        assert!(m.rows.iter().all(|r| r.values[lag] == s.values[59]));
        assert_ne!(m.rows[0].values[dow], m.rows[1].values[dow]);
        assert_eq!(m.rows[9].values[age], 69.0);
        assert_eq!(m.rows[9].time, 69);
    }
}
