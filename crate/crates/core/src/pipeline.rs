//! Stage plumbing shared by the CLI, the injection experiment and the
//! normalization comparison: item preparation, black-box runs at backtest
//! origins, surrogate datasets, explanations and per-item performance.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blackbox::{self, EnsembleSpec, ForecastSet};
use crate::data::{compute_stats, ProcessedSeries, SeriesSet, SeriesStats, SplitSpec};
use crate::error::{Error, Result};
use crate::evaluation::{metrics, ItemPerformance};
use crate::features::{FeatureBuilder, FeatureConfig, FeatureMatrix, FeatureRow};
use crate::surrogate::{self, TrainParams, TreeEnsemble};
use crate::treeshap::{Explanation, TreeExplainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub horizon: usize,
    pub features: FeatureConfig,
    pub surrogate: TrainParams,
    pub ensemble: EnsembleSpec,
    /// Number of earlier origins at which the black box is re-run to build
    /// surrogate training data.
    pub backtest_origins: usize,
    pub backtest_stride: usize,
    /// Per-item z-scoring of targets and history features.
    pub normalize: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            horizon: 28,
            features: FeatureConfig::default(),
            surrogate: TrainParams::default(),
            ensemble: EnsembleSpec::default(),
            backtest_origins: 16,
            backtest_stride: 7,
            normalize: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if self.backtest_origins > 0 && self.backtest_stride == 0 {
            return Err(Error::InvalidParameter("backtest_stride must be at least 1".into()));
        }
        self.features.validate()?;
        self.surrogate.validate()?;
        self.ensemble.validate()
    }

    /// Shortest history a backtest origin may have.
    pub fn min_history(&self) -> usize {
        let f = &self.features;
        let lag = f.lags.iter().copied().max().unwrap_or(0);
        let win = f.windows.iter().copied().max().unwrap_or(0);
        lag.max(win).max(2 * f.period).max(self.horizon)
    }
}

/// A processed series with its training cut and scaling statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedItem {
    pub series: ProcessedSeries,
    pub train_end: usize,
    pub stats: SeriesStats,
}

impl PreparedItem {
    /// Statistics come from the training portion only; `normalize = false`
    /// uses the identity transform.
    pub fn new(series: ProcessedSeries, train_end: usize, normalize: bool) -> Result<Self> {
        let stats = if normalize {
            compute_stats(&series.values[..train_end])?
        } else {
            SeriesStats::IDENTITY
        };
        Ok(Self {
            series,
            train_end,
            stats,
        })
    }

    pub fn item_id(&self) -> &str {
        &self.series.item_id
    }

    pub fn train(&self) -> &[f64] {
        &self.series.values[..self.train_end]
    }

    pub fn actual(&self) -> &[f64] {
        &self.series.values[self.train_end..]
    }

    pub fn date_at(&self, k: usize) -> NaiveDate {
        self.series.date_at(k)
    }
}

/// Trims, length-gates, splits and scales every series in item-id order.
pub fn prepare(set: &SeriesSet, config: &PipelineConfig) -> Result<Vec<PreparedItem>> {
    config.validate()?;
    if set.is_empty() {
        return Err(Error::NoSeries);
    }
    let split = SplitSpec {
        horizon: config.horizon,
    };
    set.iter()
        .map(|(id, obs)| {
            let series = ProcessedSeries::new(id, obs, Some(config.horizon))?;
            let train_end = split.train_end(series.effective_length())?;
            PreparedItem::new(series, train_end, config.normalize)
        })
        .collect()
}

/// A known exogenous series, aligned with each item's processed positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub values: BTreeMap<String, Vec<f64>>,
}

impl Covariate {
    fn for_item(&self, item: &str, needed: usize) -> Result<&[f64]> {
        let v = self
            .values
            .get(item)
            .ok_or_else(|| Error::UnknownItem(format!("{item} (covariate `{}`)", self.name)))?;
        if v.len() < needed {
            return Err(Error::InvalidParameter(format!(
                "covariate `{}` for `{item}` has {} values, need {needed}",
                self.name,
                v.len()
            )));
        }
        Ok(v)
    }
}

/// Black-box forecasts at one origin, in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct Backtest {
    pub origin: usize,
    pub forecasts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlackBoxRun {
    /// Forecasts from the end of training over the held-out horizon.
    pub final_forecasts: ForecastSet,
    pub backtests: BTreeMap<String, Vec<Backtest>>,
    /// Covariate coefficient per item at the final origin, when one is used.
    pub covariate_betas: BTreeMap<String, f64>,
}

impl BlackBoxRun {
    /// Wraps externally supplied forecasts that come without backtests.
    pub fn external(final_forecasts: ForecastSet) -> Self {
        Self {
            final_forecasts,
            backtests: BTreeMap::new(),
            covariate_betas: BTreeMap::new(),
        }
    }
}

/// Backtest origins for an item, latest first.
pub fn backtest_origins(item: &PreparedItem, config: &PipelineConfig) -> Vec<usize> {
    let min = config.min_history();
    (1..=config.backtest_origins)
        .filter_map(|j| item.train_end.checked_sub(j * config.backtest_stride))
        .filter(|&o| o >= min)
        .collect()
}

fn run_one(
    item: &PreparedItem,
    origin: usize,
    config: &PipelineConfig,
    covariate: Option<&Covariate>,
) -> Result<(Vec<f64>, Option<f64>)> {
    let h = config.horizon;
    let history = &item.series.values[..origin];
    match covariate {
        None => Ok((blackbox::forecast(history, h, &config.ensemble)?, None)),
        Some(cov) => {
            let x = cov.for_item(item.item_id(), origin + h)?;
            let (f, beta) = blackbox::forecast_with_covariate(history, &x[..origin], &x[origin..origin + h], &config.ensemble)?;
            Ok((f, Some(beta)))
        }
    }
}

/// Runs the black box at the final origin and at every backtest origin.
pub fn run_black_box(items: &[PreparedItem], config: &PipelineConfig, covariate: Option<&Covariate>) -> Result<BlackBoxRun> {
    let per_item: Vec<(Vec<f64>, Option<f64>, Vec<Backtest>)> = items
        .par_iter()
        .map(|item| {
            let (f, beta) = run_one(item, item.train_end, config, covariate)?;
            let backtests = backtest_origins(item, config)
                .into_iter()
                .map(|o| run_one(item, o, config, covariate).map(|(f, _)| Backtest { origin: o, forecasts: f }))
                .collect::<Result<Vec<_>>>()?;
            Ok((f, beta, backtests))
        })
        .collect::<Result<_>>()?;
    let mut run = BlackBoxRun::external(ForecastSet::new(config.horizon));
    for (item, (f, beta, backtests)) in items.iter().zip(per_item) {
        run.final_forecasts.insert(item.item_id(), f)?;
        if let Some(b) = beta {
            run.covariate_betas.insert(item.item_id().to_string(), b);
        }
        run.backtests.insert(item.item_id().to_string(), backtests);
    }
    Ok(run)
}

/// Surrogate training rows (backtest horizons) and held-out rows (final
/// horizon), with normalized black-box forecasts as targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateData {
    pub train: FeatureMatrix,
    pub train_targets: Vec<f64>,
    pub holdout: FeatureMatrix,
    pub holdout_targets: Vec<f64>,
}

type ItemRows = (Vec<FeatureRow>, Vec<f64>, Vec<FeatureRow>, Vec<f64>);

pub fn build_surrogate_data(
    items: &[PreparedItem],
    run: &BlackBoxRun,
    config: &PipelineConfig,
    covariate: Option<&Covariate>,
) -> Result<SurrogateData> {
    let h = config.horizon;
    let per_item: Vec<ItemRows> = items
        .par_iter()
        .map(|item| {
            let id = item.item_id();
            let history = item.series.truncated(item.train_end);
            let builder = FeatureBuilder::new(&history, &item.stats, &config.features)?;
            let cov = covariate.map(|c| c.for_item(id, item.train_end + h)).transpose()?;
            let rows_at = |origin: usize, forecasts: &[f64]| -> (Vec<FeatureRow>, Vec<f64>) {
                let mut rows = builder.horizon_rows(origin, h).rows;
                if let Some(x) = cov {
                    for r in &mut rows {
                        r.values.push(x[r.time]);
                    }
                }
                (rows, forecasts.iter().map(|v| item.stats.normalize(*v)).collect())
            };
            let mut train_rows = Vec::new();
            let mut train_targets = Vec::new();
            for bt in run.backtests.get(id).map(Vec::as_slice).unwrap_or_default() {
                let (r, t) = rows_at(bt.origin, &bt.forecasts);
                train_rows.extend(r);
                train_targets.extend(t);
            }
            let f = run
                .final_forecasts
                .get(id)
                .ok_or_else(|| Error::UnknownItem(format!("{id} (no black-box forecast)")))?;
            let (hold_rows, hold_targets) = rows_at(item.train_end, f);
            Ok((train_rows, train_targets, hold_rows, hold_targets))
        })
        .collect::<Result<_>>()?;

    let mut names = config.features.column_names();
    if let Some(c) = covariate {
        names.push(c.name.clone());
    }
    let schema = crate::features::FeatureSchema::new(names);
    let mut data = SurrogateData {
        train: FeatureMatrix::empty(schema.clone()),
        train_targets: Vec::new(),
        holdout: FeatureMatrix::empty(schema),
        holdout_targets: Vec::new(),
    };
    for (tr, tt, hr, ht) in per_item {
        data.train.rows.extend(tr);
        data.train_targets.extend(tt);
        data.holdout.rows.extend(hr);
        data.holdout_targets.extend(ht);
    }
    if data.train.is_empty() {
        log::warn!("no backtest forecasts available; training the surrogate on the explained horizon itself");
        data.train = data.holdout.clone();
        data.train_targets = data.holdout_targets.clone();
    }
    Ok(data)
}

pub fn fit_surrogate(data: &SurrogateData, config: &PipelineConfig) -> Result<TreeEnsemble> {
    surrogate::fit(&data.train, &data.train_targets, &config.surrogate)
}

/// One explained forecast step.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplainedRow {
    pub item_id: String,
    pub step: usize,
    /// Position in the processed series.
    pub time: usize,
    pub date: NaiveDate,
    pub normalized: Explanation,
    pub original: Explanation,
    /// Black-box forecast in original units.
    pub forecast: f64,
}

/// TreeSHAP over the held-out rows, denormalized per item.
pub fn explain_rows(items: &[PreparedItem], model: &TreeEnsemble, data: &SurrogateData, run: &BlackBoxRun) -> Result<Vec<ExplainedRow>> {
    let explainer = TreeExplainer::new(model)?;
    let by_id: BTreeMap<&str, &PreparedItem> = items.iter().map(|i| (i.item_id(), i)).collect();
    data.holdout
        .rows
        .par_iter()
        .map(|row| {
            let item = by_id
                .get(row.item_id.as_str())
                .ok_or_else(|| Error::UnknownItem(row.item_id.clone()))?;
            let normalized = explainer.explain(&row.values)?;
            let original = crate::explain::denormalize_explanation(&normalized, &item.stats)?;
            let forecast = run
                .final_forecasts
                .get(&row.item_id)
                .map(|f| f[row.step - 1])
                .ok_or_else(|| Error::UnknownItem(row.item_id.clone()))?;
            Ok(ExplainedRow {
                item_id: row.item_id.clone(),
                step: row.step,
                time: row.time,
                date: item.date_at(row.time),
                normalized,
                original,
                forecast,
            })
        })
        .collect()
}

/// Surrogate and black-box values for one held-out step, original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityPair {
    pub item_id: String,
    pub step: usize,
    pub surrogate: f64,
    pub black_box: f64,
    pub actual: f64,
}

pub fn fidelity_pairs(items: &[PreparedItem], model: &TreeEnsemble, data: &SurrogateData) -> Result<Vec<FidelityPair>> {
    let by_id: BTreeMap<&str, &PreparedItem> = items.iter().map(|i| (i.item_id(), i)).collect();
    data.holdout
        .rows
        .iter()
        .zip(&data.holdout_targets)
        .map(|(row, target)| {
            let item = by_id
                .get(row.item_id.as_str())
                .ok_or_else(|| Error::UnknownItem(row.item_id.clone()))?;
            Ok(FidelityPair {
                item_id: row.item_id.clone(),
                step: row.step,
                surrogate: item.stats.denormalize(model.predict_row(row)?),
                black_box: item.stats.denormalize(*target),
                actual: item.series.values[row.time],
            })
        })
        .collect()
}

/// Fidelity on both scales and black-box accuracy against the actuals.
pub fn performance(items: &[PreparedItem], pairs: &[FidelityPair]) -> Result<Vec<ItemPerformance>> {
    let mut grouped: BTreeMap<&str, Vec<&FidelityPair>> = BTreeMap::new();
    for p in pairs {
        grouped.entry(p.item_id.as_str()).or_default().push(p);
    }
    items
        .iter()
        .filter_map(|item| grouped.get(item.item_id()).map(|ps| (item, ps)))
        .map(|(item, ps)| {
            let sur: Vec<f64> = ps.iter().map(|p| p.surrogate).collect();
            let bb: Vec<f64> = ps.iter().map(|p| p.black_box).collect();
            let actual: Vec<f64> = ps.iter().map(|p| p.actual).collect();
            let zs: Vec<f64> = sur.iter().map(|v| item.stats.normalize(*v)).collect();
            let zb: Vec<f64> = bb.iter().map(|v| item.stats.normalize(*v)).collect();
            Ok(ItemPerformance {
                item_id: item.item_id().to_string(),
                fidelity_normalized: metrics(&zs, &zb)?,
                fidelity_original: metrics(&sur, &bb)?,
                accuracy: metrics(&bb, &actual)?,
            })
        })
        .collect()
}

/// Every in-memory product of a full pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub items: Vec<PreparedItem>,
    pub run: BlackBoxRun,
    pub data: SurrogateData,
    pub model: TreeEnsemble,
    pub explanations: Vec<ExplainedRow>,
    pub pairs: Vec<FidelityPair>,
    pub performance: Vec<ItemPerformance>,
}

impl PipelineOutput {
    /// Base value of the surrogate on its modelling scale.
    pub fn model_base_value(&self) -> f64 {
        self.explanations
            .first()
            .map(|e| e.normalized.base_value)
            .unwrap_or(self.model.base_score)
    }
}

/// Prepare, forecast, fit, explain and score in one call.
pub fn run(set: &SeriesSet, config: &PipelineConfig) -> Result<PipelineOutput> {
    let items = prepare(set, config)?;
    let run = run_black_box(&items, config, None)?;
    finish(items, run, config)
}

/// Continues a run from black-box output, which may be external.
pub fn finish(items: Vec<PreparedItem>, run: BlackBoxRun, config: &PipelineConfig) -> Result<PipelineOutput> {
    let data = build_surrogate_data(&items, &run, config, None)?;
    let model = fit_surrogate(&data, config)?;
    let explanations = explain_rows(&items, &model, &data, &run)?;
    let pairs = fidelity_pairs(&items, &model, &data)?;
    let performance = performance(&items, &pairs)?;
    Ok(PipelineOutput {
        items,
        run,
        data,
        model,
        explanations,
        pairs,
        performance,
    })
}

#[derive(Debug, Deserialize)]
struct BacktestRow {
    item_id: String,
    origin: usize,
    step: usize,
    forecast: f64,
}

/// Reads `item_id,origin,step,forecast`.
pub fn read_backtests<'a, R: Read>(
    reader: R,
    known_items: impl IntoIterator<Item = &'a str>,
    horizon: usize,
) -> Result<BTreeMap<String, Vec<Backtest>>> {
    let known: std::collections::HashSet<&str> = known_items.into_iter().collect();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut raw: BTreeMap<String, BTreeMap<usize, BTreeMap<usize, f64>>> = BTreeMap::new();
    for record in rdr.deserialize::<BacktestRow>() {
        let row = record.map_err(|e| Error::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        if !known.contains(row.item_id.as_str()) {
            return Err(Error::UnknownItem(row.item_id));
        }
        if !row.forecast.is_finite() {
            return Err(Error::NonFinite(format!("backtest for `{}`", row.item_id)));
        }
        if row.step == 0 || row.step > horizon {
            return Err(Error::InvalidParameter(format!("backtest step {} outside 1..={horizon}", row.step)));
        }
        let prev = raw
            .entry(row.item_id.clone())
            .or_default()
            .entry(row.origin)
            .or_default()
            .insert(row.step, row.forecast);
        if prev.is_some() {
            return Err(Error::Duplicate {
                item: row.item_id,
                key: format!("origin {} step {}", row.origin, row.step),
            });
        }
    }
    let mut out = BTreeMap::new();
    for (item, origins) in raw {
        let mut list = Vec::new();
        for (origin, steps) in origins.into_iter().rev() {
            if let Some(step) = (1..=horizon).find(|s| !steps.contains_key(s)) {
                return Err(Error::MissingStep { item, step });
            }
            list.push(Backtest {
                origin,
                forecasts: steps.into_values().collect(),
            });
        }
        out.insert(item, list);
    }
    Ok(out)
}

pub fn write_backtests<W: Write>(backtests: &BTreeMap<String, Vec<Backtest>>, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["item_id", "origin", "step", "forecast"])?;
    for (item, list) in backtests {
        for bt in list {
            for (i, v) in bt.forecasts.iter().enumerate() {
                wtr.write_record([item.as_str(), &bt.origin.to_string(), &(i + 1).to_string(), &v.to_string()])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize, len: usize) -> SeriesSet {
        let start = NaiveDate::from_ymd_opt(2022, 1, 3).unwrap();
        SeriesSet::from_daily(
            start,
            (0..n).map(|i| {
                let scale = 10f64.powi(i as i32);
                let v = (0..len)
                    .map(|t| scale * (5.0 + [0.0, 1.0, 2.0, 1.0, 0.0, -2.0, -2.0][t % 7] + 0.01 * t as f64))
                    .collect();
                (format!("s{i}"), v)
            }),
        )
        .unwrap()
    }

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            horizon: 14,
            surrogate: TrainParams {
                n_trees: 30,
                ..TrainParams::default()
            },
            backtest_origins: 6,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn origins_respect_minimum_history() {
        let cfg = small_config();
        let items = prepare(&corpus(1, 120), &cfg).unwrap();
        let origins = backtest_origins(&items[0], &cfg);
        assert_eq!(items[0].train_end, 106);
        assert_eq!(origins, vec![99, 92, 85, 78, 71, 64]);
        assert!(origins.iter().all(|&o| o >= cfg.min_history()));
    }

    #[test]
    fn stats_use_training_slice_only() {
        let cfg = small_config();
        let items = prepare(&corpus(1, 120), &cfg).unwrap();
        let expect = compute_stats(&items[0].series.values[..106]).unwrap();
        assert_eq!(items[0].stats, expect);
    }

    #[test]
    fn end_to_end_explanations_are_additive() {
        let cfg = small_config();
        let out = run(&corpus(3, 150), &cfg).unwrap();
        assert_eq!(out.explanations.len(), 3 * 14);
        for e in &out.explanations {
            for x in [&e.normalized, &e.original] {
                assert!(x.additivity_gap() <= 1e-8 * x.prediction.abs().max(1.0));
            }
        }
        assert_eq!(out.performance.len(), 3);
    }

    #[test]
    fn backtests_round_trip() {
        let cfg = small_config();
        let items = prepare(&corpus(2, 120), &cfg).unwrap();
        let run = run_black_box(&items, &cfg, None).unwrap();
        let mut buf = Vec::new();
        write_backtests(&run.backtests, &mut buf).unwrap();
        let back = read_backtests(buf.as_slice(), ["s0", "s1"], cfg.horizon).unwrap();
        assert_eq!(back.len(), 2);
        for (k, list) in &back {
            let orig = &run.backtests[k];
            assert_eq!(list.len(), orig.len());
            for (a, b) in list.iter().zip(orig) {
                assert_eq!(a.origin, b.origin);
                for (x, y) in a.forecasts.iter().zip(&b.forecasts) {
                    assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn short_series_rejected() {
        let cfg = small_config();
        assert!(matches!(prepare(&corpus(1, 55), &cfg), Err(Error::BelowMinimumLength { .. })));
    }
}
