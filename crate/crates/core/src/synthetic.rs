//! Seeded synthetic demand corpus with known archetypes.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::SeriesSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    SinusoidTrend,
    WeeklySeasonal,
    WhiteNoise,
    SparseIntermittent,
}

impl Archetype {
    pub fn is_signal(self) -> bool {
        matches!(self, Self::SinusoidTrend | Self::WeeklySeasonal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SinusoidTrend => "sinusoid_trend",
            Self::WeeklySeasonal => "weekly_seasonal",
            Self::WhiteNoise => "white_noise",
            Self::SparseIntermittent => "sparse_intermittent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_signal: usize,
    pub n_noise: usize,
    pub length: usize,
    pub start: NaiveDate,
    pub seed: u64,
    /// Mean demand of the smallest and largest items; scales are log-spaced
    /// between them and shuffled across items.
    pub min_scale: f64,
    pub max_scale: f64,
    /// Explicit per-item mean demand, overriding the log spacing.
    pub scales: Vec<f64>,
    /// Archetypes cycled over the signal items.
    pub signal_archetypes: Vec<Archetype>,
    /// Archetypes cycled over the noise items.
    pub noise_archetypes: Vec<Archetype>,
    /// Observation noise on signal items, relative to the item mean.
    pub signal_noise: f64,
    /// Relative amplitude of the periodic component of signal items.
    pub amplitude: f64,
    /// Share of signal items that start with a run of zeros.
    pub leading_zero_share: f64,
    pub max_leading_zeros: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_signal: 66,
            n_noise: 4,
            length: 730,
            start: NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date"),
            seed: 20,
            min_scale: 1.0,
            max_scale: 2000.0,
            scales: Vec::new(),
            signal_archetypes: vec![Archetype::WeeklySeasonal, Archetype::SinusoidTrend],
            noise_archetypes: vec![Archetype::WhiteNoise, Archetype::SparseIntermittent],
            signal_noise: 0.03,
            amplitude: 0.5,
            leading_zero_share: 0.2,
            max_leading_zeros: 120,
        }
    }
}

impl SyntheticConfig {
    pub fn n_items(&self) -> usize {
        self.n_signal + self.n_noise
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_items();
        if n == 0 {
            return Err(Error::InvalidParameter("synthetic corpus needs at least one item".into()));
        }
        if self.length < 8 {
            return Err(Error::InvalidParameter(format!("synthetic length {} < 8", self.length)));
        }
        if !self.scales.is_empty() && self.scales.len() != n {
            return Err(Error::InvalidParameter(format!("{} scales given for {n} items", self.scales.len())));
        }
        if self.scales.is_empty() && !(self.min_scale > 0.0 && self.max_scale >= self.min_scale) {
            return Err(Error::InvalidParameter("scales must satisfy 0 < min_scale <= max_scale".into()));
        }
        if self.n_signal > 0 && self.signal_archetypes.iter().all(|a| !a.is_signal()) {
            return Err(Error::InvalidParameter("signal_archetypes holds no signal archetype".into()));
        }
        if self.n_noise > 0 && (self.noise_archetypes.is_empty() || self.noise_archetypes.iter().any(|a| a.is_signal())) {
            return Err(Error::InvalidParameter("noise_archetypes must be non-empty and hold only noise archetypes".into()));
        }
        if self.signal_archetypes.iter().any(|a| !a.is_signal()) {
            return Err(Error::InvalidParameter("signal_archetypes must hold only signal archetypes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub set: SeriesSet,
    pub archetypes: BTreeMap<String, Archetype>,
    pub scales: BTreeMap<String, f64>,
}

impl SyntheticCorpus {
    pub fn signal_items(&self) -> Vec<String> {
        self.archetypes.iter().filter(|(_, a)| a.is_signal()).map(|(k, _)| k.clone()).collect()
    }
}

const WEEKLY_PROFILE: [f64; 7] = [-0.6, -0.4, -0.2, 0.0, 0.2, 0.6, 0.4];

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn generate_item(archetype: Archetype, scale: f64, config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = config.length;
    let a = config.amplitude;
    let noise = |rng: &mut ChaCha8Rng| -> f64 { rng.sample::<f64, _>(StandardNormal) };
    let mut values: Vec<f64> = match archetype {
        Archetype::WeeklySeasonal => {
            let phase = rng.random_range(0..7);
            (0..n)
                .map(|t| scale * (1.0 + a * WEEKLY_PROFILE[(t + phase) % 7] + config.signal_noise * noise(rng)))
                .collect()
        }
        Archetype::SinusoidTrend => {
            let phase = rng.random_range(0.0..2.0 * PI);
            let growth = rng.random_range(-0.3..0.6);
            (0..n)
                .map(|t| {
                    let trend = growth * (t as f64 / n as f64 - 0.5);
                    let wave = 0.5 * a * (2.0 * PI * t as f64 / 7.0 + phase).sin();
                    scale * (1.0 + trend + wave + config.signal_noise * noise(rng))
                })
                .collect()
        }
        Archetype::WhiteNoise => (0..n).map(|_| scale * (1.0 + 0.3 * noise(rng))).collect(),
        Archetype::SparseIntermittent => (0..n)
            .map(|_| {
                if rng.random_bool(0.3) {
                    scale / 0.3 * rng.sample::<f64, _>(Exp1)
                } else {
                    0.0
                }
            })
            .collect(),
    };
    for v in &mut values {
        *v = round4(v.max(0.0));
    }
    if archetype.is_signal() && config.max_leading_zeros > 0 && rng.random_bool(config.leading_zero_share.clamp(0.0, 1.0)) {
        let z = rng.random_range(1..=config.max_leading_zeros.min(n / 4).max(1));
        values[..z].iter_mut().for_each(|v| *v = 0.0);
    }
    values
}

/// Generates `n_signal + n_noise` daily series named `item_000`, `item_001`, ...
/// Signal items come first. Same config, same corpus.
pub fn gen_synthetic(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let n = config.n_items();
    let scales: Vec<f64> = if config.scales.is_empty() {
        let (lo, hi) = (config.min_scale.ln(), config.max_scale.ln());
        let mut s: Vec<f64> = (0..n)
            .map(|i| {
                let f = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                (lo + f * (hi - lo)).exp()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        s.shuffle(&mut rng);
        s
    } else {
        config.scales.clone()
    };

    let mut archetypes = BTreeMap::new();
    let mut scale_map = BTreeMap::new();
    let mut series = Vec::with_capacity(n);
    for (i, &scale) in scales.iter().enumerate() {
        let archetype = if i < config.n_signal {
            config.signal_archetypes[i % config.signal_archetypes.len()]
        } else {
            config.noise_archetypes[(i - config.n_signal) % config.noise_archetypes.len()]
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64 + 1);
        let id = format!("item_{i:03}");
        series.push((id.clone(), generate_item(archetype, scale, config, &mut rng)));
        archetypes.insert(id.clone(), archetype);
        scale_map.insert(id, scale);
    }
    Ok(SyntheticCorpus {
        set: SeriesSet::from_daily(config.start, series)?,
        archetypes,
        scales: scale_map,
    })
}

/// Writes `item_id,archetype,signal,scale`.
pub fn write_archetypes<W: Write>(corpus: &SyntheticCorpus, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["item_id", "archetype", "signal", "scale"])?;
    for (id, a) in &corpus.archetypes {
        wtr.write_record([id.as_str(), a.as_str(), &a.is_signal().to_string(), &corpus.scales[id].to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
