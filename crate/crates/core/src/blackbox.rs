//! The forecaster being explained. Downstream code only ever sees its point
//! forecasts, either read from a file or produced by the small built-in
//! ensemble below.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Member {
    SeasonalNaive { period: usize },
    /// `alpha: None` fits alpha over {0.1, ..., 0.9} by one-step SSE.
    Ses { alpha: Option<f64> },
    DampedTrend { damping: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedMember {
    #[serde(flatten)]
    pub member: Member,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<WeightedMember>,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            members: vec![
                WeightedMember {
                    member: Member::SeasonalNaive { period: 7 },
                    weight: 0.5,
                },
                WeightedMember {
                    member: Member::Ses { alpha: None },
                    weight: 0.3,
                },
                WeightedMember {
                    member: Member::DampedTrend { damping: 0.98 },
                    weight: 0.2,
                },
            ],
        }
    }
}

impl EnsembleSpec {
    pub fn single(member: Member) -> Self {
        Self {
            members: vec![WeightedMember { member, weight: 1.0 }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::InvalidParameter("ensemble has no members".into()));
        }
        if self.members.iter().any(|m| !(m.weight >= 0.0)) {
            return Err(Error::InvalidParameter("ensemble weights must be >= 0".into()));
        }
        let total: f64 = self.members.iter().map(|m| m.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("ensemble weights sum to {total}, expected 1")));
        }
        for m in &self.members {
            match m.member {
                Member::SeasonalNaive { period } if period == 0 => {
                    return Err(Error::InvalidParameter("seasonal period must be >= 1".into()))
                }
                Member::Ses { alpha: Some(a) } if !(a > 0.0 && a <= 1.0) => {
                    return Err(Error::InvalidParameter(format!("ses alpha {a} outside (0, 1]")))
                }
                Member::DampedTrend { damping } if !(0.0..=1.0).contains(&damping) => {
                    return Err(Error::InvalidParameter(format!("damping {damping} outside [0, 1]")))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

pub fn seasonal_naive(train: &[f64], horizon: usize, period: usize) -> Vec<f64> {
    let n = train.len();
    if n < period {
        return vec![train[n - 1]; horizon];
    }
    let last_cycle = &train[n - period..];
    (0..horizon).map(|h| last_cycle[h % period]).collect()
}

fn ses_level(train: &[f64], alpha: f64) -> (f64, f64) {
    let mut level = train[0];
    let mut sse = 0.0;
    for &y in &train[1..] {
        sse += (y - level).powi(2);
        level = alpha * y + (1.0 - alpha) * level;
    }
    (level, sse)
}

/// Returns the flat forecast and the alpha used.
pub fn simple_exponential_smoothing(train: &[f64], horizon: usize, alpha: Option<f64>) -> (Vec<f64>, f64) {
    let alpha = alpha.unwrap_or_else(|| {
        let mut best = (f64::INFINITY, 0.1);
        for i in 1..=9 {
            let a = i as f64 / 10.0;
            let (_, sse) = ses_level(train, a);
            if sse < best.0 {
                best = (sse, a);
            }
        }
        best.1
    });
    let (level, _) = ses_level(train, alpha);
    (vec![level; horizon], alpha)
}

/// Least-squares line anchored at the last fitted point, slope damped per step.
pub fn damped_trend(train: &[f64], horizon: usize, damping: f64) -> Vec<f64> {
    let (intercept, slope) = linear_fit(train);
    let anchor = intercept + slope * (train.len() - 1) as f64;
    let mut out = Vec::with_capacity(horizon);
    let mut cum = 0.0;
    let mut phi = 1.0;
    for _ in 0..horizon {
        phi *= damping;
        cum += phi;
        out.push(anchor + slope * cum);
    }
    out
}

/// Intercept and slope of y against 0..n.
pub(crate) fn linear_fit(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    if y.len() < 2 {
        return (y.first().copied().unwrap_or(0.0), 0.0);
    }
    let t_mean = (n - 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, v) in y.iter().enumerate() {
        let dt = i as f64 - t_mean;
        sxy += dt * (v - y_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    (y_mean - slope * t_mean, slope)
}

pub fn member_forecast(member: Member, train: &[f64], horizon: usize) -> Vec<f64> {
    match member {
        Member::SeasonalNaive { period } => seasonal_naive(train, horizon, period),
        Member::Ses { alpha } => simple_exponential_smoothing(train, horizon, alpha).0,
        Member::DampedTrend { damping } => damped_trend(train, horizon, damping),
    }
}

/// Weighted average of member forecasts.
pub fn forecast(train: &[f64], horizon: usize, spec: &EnsembleSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidParameter("empty training series".into()));
    }
    let mut out = vec![0.0; horizon];
    for m in &spec.members {
        let f = member_forecast(m.member, train, horizon);
        for (o, v) in out.iter_mut().zip(f) {
            *o += m.weight * v;
        }
    }
    Ok(out)
}

/// Forecast with one known covariate: demand is regressed on the covariate by
/// least squares, the ensemble forecasts the residual series, and the
/// covariate effect is added back over the horizon. Returns the forecast and
/// the estimated coefficient.
pub fn forecast_with_covariate(
    train: &[f64],
    covariate_history: &[f64],
    covariate_future: &[f64],
    spec: &EnsembleSpec,
) -> Result<(Vec<f64>, f64)> {
    if covariate_history.len() != train.len() {
        return Err(Error::InvalidParameter("covariate history length differs from training series".into()));
    }
    let n = train.len() as f64;
    let xm = covariate_history.iter().sum::<f64>() / n;
    let ym = train.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in covariate_history.iter().zip(train) {
        sxy += (x - xm) * (y - ym);
        sxx += (x - xm) * (x - xm);
    }
    let beta = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let residual: Vec<f64> = train.iter().zip(covariate_history).map(|(y, x)| y - beta * x).collect();
    let base = forecast(&residual, covariate_future.len(), spec)?;
    let out = base.iter().zip(covariate_future).map(|(b, x)| b + beta * x).collect();
    Ok((out, beta))
}

/// Horizon-aligned point forecasts per item, in original units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForecastSet {
    pub horizon: usize,
    pub items: BTreeMap<String, Vec<f64>>,
}

impl ForecastSet {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            items: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, item: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.horizon {
            return Err(Error::InvalidParameter(format!(
                "item `{item}` has {} forecasts, expected {}",
                values.len(),
                self.horizon
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("forecast for item `{item}`")));
        }
        self.items.insert(item.to_string(), values);
        Ok(())
    }

    pub fn get(&self, item: &str) -> Option<&[f64]> {
        self.items.get(item).map(Vec::as_slice)
    }
}

#[derive(Debug, Deserialize)]
struct ForecastRow {
    item_id: String,
    step: usize,
    forecast: String,
}

/// Reads `item_id,step,forecast`. Every item must be one of `known_items` and
/// carry steps `1..=horizon`.
pub fn load_external_forecasts<'a>(
    path: impl AsRef<Path>,
    known_items: impl IntoIterator<Item = &'a str>,
    horizon: usize,
) -> Result<ForecastSet> {
    read_forecasts(std::fs::File::open(path.as_ref())?, known_items, horizon)
}

pub fn read_forecasts<'a, R: Read>(
    reader: R,
    known_items: impl IntoIterator<Item = &'a str>,
    horizon: usize,
) -> Result<ForecastSet> {
    let known: std::collections::HashSet<&str> = known_items.into_iter().collect();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut raw: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    for record in rdr.deserialize::<ForecastRow>() {
        let row = record.map_err(|e| Error::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        if !known.contains(row.item_id.as_str()) {
            return Err(Error::UnknownItem(row.item_id));
        }
        let value: f64 = row
            .forecast
            .parse()
            .map_err(|_| Error::NonFinite(format!("item `{}` step {}: `{}`", row.item_id, row.step, row.forecast)))?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("item `{}` step {}: `{}`", row.item_id, row.step, row.forecast)));
        }
        if row.step == 0 || row.step > horizon {
            return Err(Error::InvalidParameter(format!(
                "item `{}` step {} outside 1..={horizon}",
                row.item_id, row.step
            )));
        }
        if raw.entry(row.item_id.clone()).or_default().insert(row.step, value).is_some() {
            return Err(Error::Duplicate {
                item: row.item_id,
                key: format!("step {}", row.step),
            });
        }
    }
    let mut set = ForecastSet::new(horizon);
    for (item, steps) in raw {
        if let Some(step) = (1..=horizon).find(|s| !steps.contains_key(s)) {
            return Err(Error::MissingStep { item, step });
        }
        set.insert(&item, steps.into_values().collect())?;
    }
    Ok(set)
}

pub fn write_forecasts<W: Write>(set: &ForecastSet, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["item_id", "step", "forecast"])?;
    for (item, values) in &set.items {
        for (i, v) in values.iter().enumerate() {
            wtr.write_record([item.as_str(), &(i + 1).to_string(), &v.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
