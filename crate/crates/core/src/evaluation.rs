//! Fidelity and accuracy metrics, correlation, the feature-injection
//! faithfulness experiment and the SP-vs-performance analysis.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SeriesSet;
use crate::error::{Error, Result};
use crate::forecastability::ForecastabilityReport;
use crate::pipeline::{self, Covariate, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    /// Percent; `None` when every reference value is ~0.
    pub mape: Option<f64>,
    pub mape_excluded: usize,
    pub rmse: f64,
    pub r2: f64,
    /// R² fell back to the constant-reference rule (SStot = 0).
    pub r2_degenerate: bool,
}

/// Reference magnitudes at or below this are left out of MAPE.
pub const MAPE_EPS: f64 = 1e-9;

pub fn metrics(pred: &[f64], reference: &[f64]) -> Result<Metrics> {
    if pred.is_empty() || reference.is_empty() {
        return Err(Error::InvalidParameter("metrics on empty vectors".into()));
    }
    if pred.len() != reference.len() {
        return Err(Error::InvalidParameter(format!(
            "metrics on vectors of length {} and {}",
            pred.len(),
            reference.len()
        )));
    }
    let n = pred.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut pct = 0.0;
    let mut pct_n = 0usize;
    for (p, r) in pred.iter().zip(reference) {
        let e = p - r;
        abs += e.abs();
        sq += e * e;
        if r.abs() > MAPE_EPS {
            pct += (e / r).abs();
            pct_n += 1;
        }
    }
    let mean_ref = reference.iter().sum::<f64>() / n;
    let ss_tot: f64 = reference.iter().map(|r| (r - mean_ref).powi(2)).sum();
    let (r2, r2_degenerate) = if ss_tot > 0.0 {
        (1.0 - sq / ss_tot, false)
    } else {
        (if sq == 0.0 { 1.0 } else { 0.0 }, true)
    };
    Ok(Metrics {
        mae: abs / n,
        mape: (pct_n > 0).then(|| 100.0 * pct / pct_n as f64),
        mape_excluded: pred.len() - pct_n,
        rmse: (sq / n).sqrt(),
        r2,
        r2_degenerate,
    })
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter("pearson on vectors of different length".into()));
    }
    if x.len() < 3 {
        return Err(Error::InvalidParameter("pearson needs at least 3 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Average ranks (1-based); ties share their mean rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&ranks(x), &ranks(y))
}

/// Seeded price paths and per-item demand sensitivities. The effect on demand
/// is additive: `-beta_i * (price - base_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectionSpec {
    pub feature_name: String,
    pub base_price: f64,
    /// Per-item overrides of `base_price`.
    pub base_prices: BTreeMap<String, f64>,
    pub beta_range: (f64, f64),
    /// Per-item overrides of the drawn beta.
    pub betas: BTreeMap<String, f64>,
    /// Random-walk step as a fraction of the base price.
    pub step_fraction: f64,
    /// Maximum deviation from base as a fraction of the base price.
    pub clip_fraction: f64,
    pub seed: u64,
}

impl Default for InjectionSpec {
    fn default() -> Self {
        Self {
            feature_name: "price".into(),
            base_price: 10.0,
            base_prices: BTreeMap::new(),
            beta_range: (5.0, 15.0),
            betas: BTreeMap::new(),
            step_fraction: 0.05,
            clip_fraction: 0.30,
            seed: 11,
        }
    }
}

/// Price path and sensitivity for one item.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectedItem {
    pub base_price: f64,
    pub beta: f64,
    pub prices: Vec<f64>,
}

impl InjectedItem {
    /// Ground-truth demand delta at position `k`.
    pub fn effect(&self, k: usize) -> f64 {
        -self.beta * (self.prices[k] - self.base_price)
    }
}

impl InjectionSpec {
    /// Path of `length` prices for the item at position `index` in sorted order.
    pub fn generate(&self, item: &str, index: usize, length: usize) -> InjectedItem {
        let base = self.base_prices.get(item).copied().unwrap_or(self.base_price);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let drawn = if self.beta_range.1 > self.beta_range.0 {
            rng.random_range(self.beta_range.0..self.beta_range.1)
        } else {
            self.beta_range.0
        };
        let beta = self.betas.get(item).copied().unwrap_or(drawn);
        let step = self.step_fraction * base;
        let (lo, hi) = (base * (1.0 - self.clip_fraction), base * (1.0 + self.clip_fraction));
        let mut price = base;
        let prices = (0..length)
            .map(|k| {
                if k > 0 {
                    let dir = rng.random_range(-1i32..=1) as f64;
                    price = (price + dir * step).clamp(lo, hi);
                }
                price
            })
            .collect();
        InjectedItem {
            base_price: base,
            beta,
            prices,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessPair {
    pub item_id: String,
    pub step: usize,
    pub price: f64,
    /// Denormalized attribution of the injected feature.
    pub phi: f64,
    pub ground_truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub feature_name: String,
    pub pearson: f64,
    pub n_pairs: usize,
    pub betas: BTreeMap<String, f64>,
    /// Black-box covariate coefficients estimated at the final origin.
    pub estimated_betas: BTreeMap<String, f64>,
    pub pairs: Vec<FaithfulnessPair>,
}

/// Adds a synthetic price effect to every series, re-runs the black box on the
/// modified data, retrains the surrogate with price as a feature and
/// correlates the denormalized price attributions with the known effect.
pub fn inject_and_evaluate(set: &SeriesSet, spec: &InjectionSpec, config: &PipelineConfig) -> Result<FaithfulnessReport> {
    let base_items = pipeline::prepare(set, config)?;
    let mut injected = BTreeMap::new();
    for (index, item) in base_items.iter().enumerate() {
        injected.insert(item.series.item_id.clone(), spec.generate(&item.series.item_id, index, item.series.effective_length()));
    }
    if injected.values().all(|i| i.beta == 0.0) {
        return Err(Error::NoInjectedSignal("all betas are zero".into()));
    }

    let mut modified = Vec::with_capacity(base_items.len());
    for item in &base_items {
        let inj = &injected[&item.series.item_id];
        let mut series = item.series.clone();
        for (k, v) in series.values.iter_mut().enumerate() {
            *v += inj.effect(k);
        }
        modified.push(pipeline::PreparedItem::new(series, item.train_end, config.normalize)?);
    }

    let covariate = Covariate {
        name: spec.feature_name.clone(),
        values: injected.iter().map(|(k, v)| (k.clone(), v.prices.clone())).collect(),
    };
    let bb = pipeline::run_black_box(&modified, config, Some(&covariate))?;
    let data = pipeline::build_surrogate_data(&modified, &bb, config, Some(&covariate))?;
    let model = crate::surrogate::fit(&data.train, &data.train_targets, &config.surrogate)?;
    let explained = pipeline::explain_rows(&modified, &model, &data, &bb)?;
    let col = model
        .schema
        .index_of(&spec.feature_name)
        .ok_or_else(|| Error::InvalidParameter(format!("feature `{}` missing from schema", spec.feature_name)))?;

    let pairs: Vec<FaithfulnessPair> = explained
        .iter()
        .map(|row| {
            let inj = &injected[&row.item_id];
            FaithfulnessPair {
                item_id: row.item_id.clone(),
                step: row.step,
                price: inj.prices[row.time],
                phi: row.original.attributions[col],
                ground_truth: inj.effect(row.time),
            }
        })
        .collect();
    let phi: Vec<f64> = pairs.iter().map(|p| p.phi).collect();
    let truth: Vec<f64> = pairs.iter().map(|p| p.ground_truth).collect();
    let r = pearson(&phi, &truth).map_err(|e| match e {
        Error::Degenerate(_) if truth.iter().all(|g| *g == truth[0]) => Error::NoInjectedSignal("no injected variance".into()),
        other => other,
    })?;
    Ok(FaithfulnessReport {
        feature_name: spec.feature_name.clone(),
        pearson: r,
        n_pairs: pairs.len(),
        betas: injected.iter().map(|(k, v)| (k.clone(), v.beta)).collect(),
        estimated_betas: bb.covariate_betas.clone(),
        pairs,
    })
}

/// Per-item scatter point for the SP analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpPoint {
    pub item_id: String,
    pub sp: f64,
    pub forecastable: bool,
    pub fidelity_r2: f64,
    pub fidelity_mape: Option<f64>,
    pub accuracy_r2: f64,
    pub accuracy_mape: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
}

impl Correlation {
    fn of(x: &[f64], y: &[f64]) -> Self {
        Self {
            spearman: spearman(x, y).ok(),
            pearson: pearson(x, y).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub n_items: usize,
    pub warnings: Vec<String>,
    /// Mean noise-benchmark SP across items: the vertical reference line.
    pub noise_reference: f64,
    pub sp_vs_fidelity_r2: Correlation,
    pub sp_vs_fidelity_mape: Correlation,
    pub sp_vs_accuracy_r2: Correlation,
    pub sp_vs_accuracy_mape: Correlation,
    pub points: Vec<SpPoint>,
}

/// Per-item fidelity (surrogate vs black box) and accuracy (black box vs actuals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPerformance {
    pub item_id: String,
    pub fidelity_normalized: Metrics,
    pub fidelity_original: Metrics,
    pub accuracy: Metrics,
}

/// Correlates SP with R² and MAPE for both fidelity and accuracy. Items missing
/// any of the three quantities are skipped.
pub fn correlate_sp(performance: &[ItemPerformance], sp: &[ForecastabilityReport]) -> CorrelationSummary {
    let by_item: BTreeMap<&str, &ForecastabilityReport> = sp.iter().map(|r| (r.item_id.as_str(), r)).collect();
    let points: Vec<SpPoint> = performance
        .iter()
        .filter_map(|p| {
            let f = by_item.get(p.item_id.as_str())?;
            Some(SpPoint {
                item_id: p.item_id.clone(),
                sp: f.sp,
                forecastable: f.forecastable,
                fidelity_r2: p.fidelity_original.r2,
                fidelity_mape: p.fidelity_original.mape,
                accuracy_r2: p.accuracy.r2,
                accuracy_mape: p.accuracy.mape,
            })
        })
        .collect();
    let mut warnings = Vec::new();
    if points.len() < 10 {
        warnings.push(format!("only {} items; correlations are unreliable", points.len()));
    }
    let sps: Vec<f64> = points.iter().map(|p| p.sp).collect();
    let col = |f: fn(&SpPoint) -> f64| -> Vec<f64> { points.iter().map(f).collect() };
    let mape_pairs = |f: fn(&SpPoint) -> Option<f64>| -> (Vec<f64>, Vec<f64>) {
        points.iter().filter_map(|p| f(p).map(|m| (p.sp, m))).unzip()
    };
    let (fs, fm) = mape_pairs(|p| p.fidelity_mape);
    let (as_, am) = mape_pairs(|p| p.accuracy_mape);
    let summary = CorrelationSummary {
        n_items: points.len(),
        warnings: Vec::new(),
        noise_reference: if sp.is_empty() { f64::NAN } else { sp.iter().map(|r| r.noise_mean).sum::<f64>() / sp.len() as f64 },
        sp_vs_fidelity_r2: Correlation::of(&sps, &col(|p| p.fidelity_r2)),
        sp_vs_fidelity_mape: Correlation::of(&fs, &fm),
        sp_vs_accuracy_r2: Correlation::of(&sps, &col(|p| p.accuracy_r2)),
        sp_vs_accuracy_mape: Correlation::of(&as_, &am),
        points,
    };
    for (name, c) in [
        ("sp_vs_fidelity_r2", summary.sp_vs_fidelity_r2),
        ("sp_vs_fidelity_mape", summary.sp_vs_fidelity_mape),
        ("sp_vs_accuracy_r2", summary.sp_vs_accuracy_r2),
        ("sp_vs_accuracy_mape", summary.sp_vs_accuracy_mape),
    ] {
        if c.spearman.is_none() {
            warnings.push(format!("{name}: degenerate (zero variance)"));
        }
    }
    CorrelationSummary { warnings, ..summary }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let m = metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.mae, m.rmse, m.r2), (0.0, 0.0, 1.0));
        let m = metrics(&[10.0, 12.0], &[11.0, 13.0]).unwrap();
        assert_eq!((m.mae, m.rmse), (1.0, 1.0));
        let m = metrics(&[11.0, 18.0], &[10.0, 20.0]).unwrap();
        assert!((m.mape.unwrap() - 10.0).abs() < 1e-12);
        assert!(metrics(&[], &[]).is_err());
    }

    #[test]
    fn mape_excludes_zero_reference() {
        let m = metrics(&[1.0, 11.0], &[0.0, 10.0]).unwrap();
        assert_eq!(m.mape_excluded, 1);
        assert!((m.mape.unwrap() - 10.0).abs() < 1e-12);
        let m = metrics(&[1.0], &[0.0]).unwrap();
        assert_eq!(m.mape, None);
    }

    #[test]
    fn r2_degenerate_reference() {
        let m = metrics(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert_eq!((m.r2, m.r2_degenerate), (1.0, true));
        let m = metrics(&[2.0, 3.0], &[2.0, 2.0]).unwrap();
        assert_eq!((m.r2, m.r2_degenerate), (0.0, true));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let yn: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &y2).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &yn).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn injection_effect_row() {
        // ITEM_A: base price 10, price 11, beta 10 -> effect -10; 102 -> 92
        let item = InjectedItem {
            base_price: 10.0,
            beta: 10.0,
            prices: vec![10.0, 11.0],
        };
        assert_eq!(item.effect(0), 0.0);
        assert_eq!(item.effect(1), -10.0);
        assert_eq!(102.0 + item.effect(1), 92.0);
        // ITEM_B: base 20, beta 5; 21 -> -5, 19 -> +5
        let b = InjectedItem {
            base_price: 20.0,
            beta: 5.0,
            prices: vec![20.0, 21.0, 19.0],
        };
        assert_eq!([51.0 + b.effect(1), 49.0 + b.effect(2)], [46.0, 54.0]);
    }

    #[test]
    fn price_path_respects_clip_and_step() {
        let spec = InjectionSpec::default();
        let item = spec.generate("a", 0, 500);
        assert!((5.0..15.0).contains(&item.beta));
        assert_eq!(item.prices[0], 10.0);
        for w in item.prices.windows(2) {
            let d = (w[1] - w[0]).abs();
            assert!(d < 1e-9 || (d - 0.5).abs() < 1e-9 || w[1] == 7.0 || w[1] == 13.0);
        }
        assert!(item.prices.iter().all(|p| (7.0 - 1e-9..=13.0 + 1e-9).contains(p)));
        assert_eq!(item, spec.generate("a", 0, 500));
    }
}
