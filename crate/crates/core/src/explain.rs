//! End-user explanations: denormalization, optional calibration to the
//! black-box forecast, and the raw-vs-normalized comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{compute_stats, SeriesSet, SeriesStats};
use crate::error::{Error, Result};
use crate::evaluation::spearman;
use crate::pipeline::{self, PipelineConfig, PipelineOutput};
use crate::treeshap::{Explanation, Units};

/// Maps a normalized explanation back to the item's units. The map is affine,
/// so additivity carries over.
pub fn denormalize_explanation(e: &Explanation, stats: &SeriesStats) -> Result<Explanation> {
    if e.units == Units::Original {
        return Err(Error::Units("explanation is already in original units".into()));
    }
    Ok(Explanation {
        base_value: stats.denormalize(e.base_value),
        attributions: e.attributions.iter().map(|p| p * stats.sigma_eff).collect(),
        prediction: stats.denormalize(e.prediction),
        units: Units::Original,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationStatus {
    Calibrated,
    SkippedAgreement,
    FailedDegenerate,
    ZeroForecastRule,
}

impl CalibrationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Calibrated => "calibrated",
            Self::SkippedAgreement => "skipped-agreement",
            Self::FailedDegenerate => "failed-degenerate",
            Self::ZeroForecastRule => "zero-forecast-rule",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedExplanation {
    pub source: Explanation,
    pub target: f64,
    pub scale: f64,
    pub attributions: Vec<f64>,
    pub status: CalibrationStatus,
}

impl CalibratedExplanation {
    pub fn reconstruction(&self) -> f64 {
        self.source.base_value + self.attributions.iter().sum::<f64>()
    }
}

/// Tolerance for treating the attribution sum as zero.
pub fn calibration_epsilon(base_value: f64) -> f64 {
    1e-9 * base_value.abs().max(1.0)
}

/// Rescales attributions so they sum to `target - phi_0`. When the sum is
/// (near) zero the attributions are returned unchanged with `scale = 1`.
pub fn calibrate(e: &Explanation, target: f64) -> CalibratedExplanation {
    let eps = calibration_epsilon(e.base_value);
    let total = e.attribution_sum();
    let (scale, status) = if total.abs() > eps {
        let s = (target - e.base_value) / total;
        (s, if target == 0.0 { CalibrationStatus::ZeroForecastRule } else { CalibrationStatus::Calibrated })
    } else if (target - e.base_value).abs() <= eps {
        (1.0, CalibrationStatus::SkippedAgreement)
    } else {
        log::warn!(
            "calibration impossible: attributions sum to {total:e} but forecast {target} differs from base value {}",
            e.base_value
        );
        (1.0, CalibrationStatus::FailedDegenerate)
    };
    CalibratedExplanation {
        source: e.clone(),
        target,
        scale,
        attributions: e.attributions.iter().map(|p| scale * p).collect(),
        status,
    }
}

/// Per-item view of one mode of the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    /// Global base value on the modelling scale.
    pub base_value: f64,
    /// Mean of `sum |phi_j|` over the item's explained rows, modelling scale.
    pub mean_abs_attribution: f64,
    /// Mean `|phi_j|` per feature in original units.
    pub feature_importance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemComparison {
    pub item_id: String,
    /// Training mean of the item in original units.
    pub item_mean: f64,
    pub raw: ModeSummary,
    pub normalized: ModeSummary,
    /// `|phi_0 - item mean|` in raw mode.
    pub raw_base_gap: f64,
    /// `|phi_0|` in normalized mode (z scale).
    pub normalized_base_gap: f64,
    /// Spearman correlation of feature importances between the two modes.
    pub rank_agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationComparison {
    pub feature_names: Vec<String>,
    pub items: Vec<ItemComparison>,
    pub warnings: Vec<String>,
}

fn summarize_mode(out: &PipelineOutput, item: &str) -> ModeSummary {
    let rows: Vec<_> = out.explanations.iter().filter(|r| r.item_id == item).collect();
    let n = rows.len().max(1) as f64;
    let width = out.model.n_features();
    let mut importance = vec![0.0; width];
    for r in &rows {
        for (acc, p) in importance.iter_mut().zip(&r.original.attributions) {
            *acc += p.abs() / n;
        }
    }
    ModeSummary {
        base_value: out.model_base_value(),
        mean_abs_attribution: rows.iter().map(|r| r.normalized.attributions.iter().map(|p| p.abs()).sum::<f64>()).sum::<f64>() / n,
        feature_importance: importance,
    }
}

/// Trains raw-target and normalized-target surrogates on the same items and
/// contrasts their base values and attributions.
pub fn normalization_comparison(corpus: &SeriesSet, items: &[String], config: &PipelineConfig) -> Result<NormalizationComparison> {
    let mut subset = BTreeMap::new();
    for id in items {
        let obs = corpus.get(id).ok_or_else(|| Error::UnknownItem(id.clone()))?;
        subset.insert(id.clone(), obs.to_vec());
    }
    let subset = SeriesSet::from_items(subset)?;
    let raw = pipeline::run(&subset, &PipelineConfig { normalize: false, ..config.clone() })?;
    let norm = pipeline::run(&subset, &PipelineConfig { normalize: true, ..config.clone() })?;

    let mut out = Vec::new();
    for item in &norm.items {
        let id = item.item_id();
        let mean = compute_stats(item.train())?.mu;
        let r = summarize_mode(&raw, id);
        let z = summarize_mode(&norm, id);
        let rank_agreement = spearman(&r.feature_importance, &z.feature_importance).ok();
        out.push(ItemComparison {
            item_id: id.to_string(),
            item_mean: mean,
            raw_base_gap: (r.base_value - mean).abs(),
            normalized_base_gap: z.base_value.abs(),
            raw: r,
            normalized: z,
            rank_agreement,
        });
    }
    let mut warnings = Vec::new();
    let means: Vec<f64> = out.iter().map(|c| c.item_mean.abs()).collect();
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    if out.len() < 2 || !(hi >= 10.0 * lo) {
        log::warn!("comparison uninformative");
        warnings.push("comparison uninformative".to_string());
    }
    Ok(NormalizationComparison {
        feature_names: norm.model.schema.names.clone(),
        items: out,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expl(base: f64, phi: Vec<f64>) -> Explanation {
        let prediction = base + phi.iter().sum::<f64>();
        Explanation {
            base_value: base,
            attributions: phi,
            prediction,
            units: Units::Original,
        }
    }

    #[test]
    fn denormalize_example() {
        let e = Explanation {
            base_value: 0.0,
            attributions: vec![1.0, -0.5],
            prediction: 0.5,
            units: Units::Normalized,
        };
        let stats = SeriesStats {
            mu: 10.0,
            sigma: 2.0,
            sigma_eff: 2.0,
        };
        let d = denormalize_explanation(&e, &stats).unwrap();
        assert_eq!((d.base_value, d.attributions.clone(), d.prediction), (10.0, vec![2.0, -1.0], 11.0));
        assert_eq!(d.additivity_gap(), 0.0);
        assert!(matches!(denormalize_explanation(&d, &stats), Err(Error::Units(_))));
        let id = denormalize_explanation(&e, &SeriesStats::IDENTITY).unwrap();
        assert_eq!((id.base_value, id.attributions, id.prediction), (0.0, vec![1.0, -0.5], 0.5));
    }

    #[test]
    fn calibrate_examples() {
        let c = calibrate(&expl(10.0, vec![3.0, 1.0]), 12.0);
        assert_eq!(c.status, CalibrationStatus::Calibrated);
        assert_eq!(c.scale, 0.5);
        assert_eq!(c.attributions.iter().sum::<f64>(), 2.0);
        assert_eq!(c.reconstruction(), 12.0);

        let c = calibrate(&expl(10.0, vec![3.0, 1.0]), 14.0);
        assert_eq!((c.scale, c.attributions.clone()), (1.0, vec![3.0, 1.0]));

        let c = calibrate(&expl(10.0, vec![0.0, 0.0]), 13.0);
        assert_eq!(c.status, CalibrationStatus::FailedDegenerate);
        let c = calibrate(&expl(10.0, vec![0.0, 0.0]), 10.0);
        assert_eq!(c.status, CalibrationStatus::SkippedAgreement);
        assert_eq!(c.attributions, vec![0.0, 0.0]);

        let c = calibrate(&expl(10.0, vec![3.0, 1.0]), 0.0);
        assert_eq!(c.status, CalibrationStatus::ZeroForecastRule);
        assert_eq!(c.scale, -2.5);
        assert!(c.reconstruction().abs() < 1e-12);
    }

    #[test]
    fn sign_flips_when_base_between() {
        // f = 14, phi_0 = 10, target 8: phi_0 is between -> s < 0
        assert!(calibrate(&expl(10.0, vec![4.0]), 8.0).scale < 0.0);
        assert!(calibrate(&expl(10.0, vec![4.0]), 11.0).scale > 0.0);
    }
}
