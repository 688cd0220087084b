//! Series ingestion, leading-zero trimming, train/test splitting, per-item
//! statistics and hierarchical aggregation.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One dated demand observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub date: NaiveDate,
    pub value: f64,
}

/// Keyed collection of univariate series. Items iterate in sorted id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeriesSet {
    items: BTreeMap<String, Vec<Observation>>,
}

impl SeriesSet {
    /// Builds a set, sorting each item by date and rejecting duplicates or
    /// non-finite values.
    pub fn from_items(items: BTreeMap<String, Vec<Observation>>) -> Result<Self> {
        let mut out = BTreeMap::new();
        for (id, mut obs) in items {
            obs.sort_by_key(|o| o.date);
            for w in obs.windows(2) {
                if w[0].date == w[1].date {
                    return Err(Error::Duplicate {
                        item: id.clone(),
                        key: w[0].date.to_string(),
                    });
                }
            }
            if let Some(o) = obs.iter().find(|o| !o.value.is_finite()) {
                return Err(Error::NonFinite(format!("item `{id}` at {}", o.date)));
            }
            out.insert(id, obs);
        }
        Ok(Self { items: out })
    }

    /// Convenience constructor for contiguous daily series.
    pub fn from_daily(start: NaiveDate, series: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let items = series
            .into_iter()
            .map(|(id, values)| {
                let obs = values
                    .into_iter()
                    .enumerate()
                    .map(|(i, value)| Observation {
                        date: start + chrono::Days::new(i as u64),
                        value,
                    })
                    .collect();
                (id, obs)
            })
            .collect();
        Self::from_items(items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, item: &str) -> Option<&[Observation]> {
        self.items.get(item).map(Vec::as_slice)
    }

    pub fn values(&self, item: &str) -> Option<Vec<f64>> {
        self.get(item).map(|obs| obs.iter().map(|o| o.value).collect())
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.items.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Observation])> {
        self.items.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn contains(&self, item: &str) -> bool {
        self.items.contains_key(item)
    }
}

#[derive(Debug, Deserialize)]
struct LongRow {
    item_id: String,
    date: String,
    value: String,
}

/// Reads a long-format CSV with header `item_id,date,value`.
pub fn load_series(path: impl AsRef<Path>) -> Result<SeriesSet> {
    let file = std::fs::File::open(path.as_ref())?;
    read_series(file)
}

pub fn read_series<R: Read>(reader: R) -> Result<SeriesSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut items: BTreeMap<String, Vec<Observation>> = BTreeMap::new();
    let mut seen: HashSet<(String, NaiveDate)> = HashSet::new();
    let headers = rdr.headers()?.clone();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                return Err(Error::MalformedRow {
                    line: e.position().map(|p| p.line()).unwrap_or(0),
                    reason: e.to_string(),
                })
            }
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: LongRow = record.deserialize(Some(&headers)).map_err(|e| Error::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d").map_err(|e| Error::MalformedRow {
            line,
            reason: format!("bad date `{}`: {e}", row.date),
        })?;
        let value: f64 = row.value.parse().map_err(|_| Error::MalformedRow {
            line,
            reason: format!("bad value `{}`", row.value),
        })?;
        if !value.is_finite() {
            return Err(Error::MalformedRow {
                line,
                reason: format!("non-finite value `{}`", row.value),
            });
        }
        if !seen.insert((row.item_id.clone(), date)) {
            return Err(Error::Duplicate {
                item: row.item_id,
                key: date.to_string(),
            });
        }
        items.entry(row.item_id).or_default().push(Observation { date, value });
    }
    if items.is_empty() {
        return Err(Error::NoSeries);
    }
    SeriesSet::from_items(items)
}

pub fn write_series<W: Write>(set: &SeriesSet, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["item_id", "date", "value"])?;
    for (id, obs) in set.iter() {
        for o in obs {
            wtr.write_record([id, &o.date.to_string(), &o.value.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// A series after leading-zero removal.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedSeries {
    pub item_id: String,
    pub values: Vec<f64>,
    pub dates: Vec<NaiveDate>,
    /// Number of leading zeros removed.
    pub offset: usize,
}

impl ProcessedSeries {
    /// Trims leading zeros from an observed series; when `horizon` is given,
    /// enforces the minimum effective length of four horizons.
    pub fn new(item_id: &str, obs: &[Observation], horizon: Option<usize>) -> Result<Self> {
        let values: Vec<f64> = obs.iter().map(|o| o.value).collect();
        let trimmed = trim_leading_zeros(&values, horizon).map_err(|e| with_item(e, item_id))?;
        Ok(Self {
            item_id: item_id.to_string(),
            dates: obs[trimmed.offset..].iter().map(|o| o.date).collect(),
            values: trimmed.values,
            offset: trimmed.offset,
        })
    }

    pub fn effective_length(&self) -> usize {
        self.values.len()
    }

    /// Date of position `k`, extrapolating daily past the last observation.
    pub fn date_at(&self, k: usize) -> NaiveDate {
        if k < self.dates.len() {
            self.dates[k]
        } else {
            let last = *self.dates.last().expect("processed series is non-empty");
            last + chrono::Days::new((k + 1 - self.dates.len()) as u64)
        }
    }

    /// Zero fraction of the processed values.
    pub fn sparsity(&self) -> f64 {
        self.values.iter().filter(|v| **v == 0.0).count() as f64 / self.values.len() as f64
    }

    /// First `len` observations as a new processed series.
    pub fn truncated(&self, len: usize) -> Self {
        Self {
            item_id: self.item_id.clone(),
            values: self.values[..len].to_vec(),
            dates: self.dates[..len].to_vec(),
            offset: self.offset,
        }
    }
}

fn with_item(err: Error, item: &str) -> Error {
    match err {
        Error::NoSignal(_) => Error::NoSignal(item.to_string()),
        Error::BelowMinimumLength { length, required, .. } => Error::BelowMinimumLength {
            item: item.to_string(),
            length,
            required,
        },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trimmed {
    pub values: Vec<f64>,
    pub offset: usize,
}

/// Minimum effective length for a forecast horizon.
pub const fn min_effective_length(horizon: usize) -> usize {
    4 * horizon
}

pub fn trim_leading_zeros(values: &[f64], horizon: Option<usize>) -> Result<Trimmed> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("empty series".into()));
    }
    let offset = values
        .iter()
        .position(|v| *v != 0.0)
        .ok_or_else(|| Error::NoSignal(String::new()))?;
    let trimmed = values[offset..].to_vec();
    if let Some(h) = horizon {
        let required = min_effective_length(h);
        if trimmed.len() < required {
            return Err(Error::BelowMinimumLength {
                item: String::new(),
                length: trimmed.len(),
                required,
            });
        }
    }
    Ok(Trimmed { values: trimmed, offset })
}

/// Per-item location and scale used for z-scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mu: f64,
    pub sigma: f64,
    /// `sigma`, or 1 when the training slice is (numerically) constant.
    pub sigma_eff: f64,
}

impl SeriesStats {
    /// Stats that make normalization the identity (raw-target mode).
    pub const IDENTITY: SeriesStats = SeriesStats {
        mu: 0.0,
        sigma: 1.0,
        sigma_eff: 1.0,
    };

    pub fn normalize(&self, value: f64) -> f64 {
        (value - self.mu) / self.sigma_eff
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.sigma_eff + self.mu
    }
}

/// Population mean and standard deviation of a training slice.
pub fn compute_stats(train: &[f64]) -> Result<SeriesStats> {
    if train.is_empty() {
        return Err(Error::InvalidParameter("empty training slice".into()));
    }
    let n = train.len() as f64;
    let mu = train.iter().sum::<f64>() / n;
    let var = train.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    let eps = 1e-12 * mu.abs().max(1.0);
    let sigma_eff = if sigma > eps { sigma } else { 1.0 };
    Ok(SeriesStats { mu, sigma, sigma_eff })
}

pub fn normalize(value: f64, stats: &SeriesStats) -> f64 {
    stats.normalize(value)
}

pub fn denormalize(z: f64, stats: &SeriesStats) -> f64 {
    stats.denormalize(z)
}

/// Horizon and the per-item training cut implied by it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub horizon: usize,
}

impl SplitSpec {
    pub fn train_end(&self, len: usize) -> Result<usize> {
        if len <= self.horizon {
            return Err(Error::TooShort {
                length: len,
                required: self.horizon,
            });
        }
        Ok(len - self.horizon)
    }
}

/// Splits off the final `horizon` observations as the test window.
pub fn split_train_test<T>(series: &[T], spec: SplitSpec) -> Result<(&[T], &[T])> {
    let end = spec.train_end(series.len())?;
    Ok(series.split_at(end))
}

/// Sums items date-wise within each group. Dates missing from an item count as zero.
pub fn aggregate(set: &SeriesSet, grouping: &BTreeMap<String, String>) -> Result<SeriesSet> {
    if grouping.is_empty() {
        return Err(Error::EmptyGrouping);
    }
    let mut groups: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for (item, obs) in set.iter() {
        let group = grouping
            .get(item)
            .ok_or_else(|| Error::UnknownItem(format!("{item} (not in grouping)")))?;
        let acc = groups.entry(group.clone()).or_default();
        for o in obs {
            *acc.entry(o.date).or_insert(0.0) += o.value;
        }
    }
    let items = groups
        .into_iter()
        .map(|(g, by_date)| {
            let obs = by_date
                .into_iter()
                .map(|(date, value)| Observation { date, value })
                .collect();
            (g, obs)
        })
        .collect();
    SeriesSet::from_items(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn parses_long_csv() {
        let csv = "item_id,date,value\nA,2025-05-01,10\nA,2025-05-02,12\n";
        let set = read_series(csv.as_bytes()).unwrap();
        assert_eq!(set.values("A").unwrap(), vec![10.0, 12.0]);
    }

    #[test]
    fn empty_file_has_no_series() {
        let err = read_series("item_id,date,value\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::NoSeries));
        assert!(err.to_string().contains("no series"));
    }

    #[test]
    fn out_of_order_rows_are_sorted() {
        let a = read_series("item_id,date,value\nA,2025-05-02,12\nA,2025-05-01,10\n".as_bytes()).unwrap();
        let b = read_series("item_id,date,value\nA,2025-05-01,10\nA,2025-05-02,12\n".as_bytes()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_row_names_line() {
        let err = read_series("item_id,date,value\nA,2025-05-01,10\nA,notadate,3\n".as_bytes()).unwrap_err();
        match err {
            Error::MalformedRow { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let err = read_series("item_id,date,value\nA,2025-05-01,abc\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_rows_rejected() {
        let err = read_series("item_id,date,value\nA,2025-05-01,10\nA,2025-05-01,11\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Duplicate { .. }));
    }

    #[test]
    fn nan_value_rejected() {
        let err = read_series("item_id,date,value\nA,2025-05-01,NaN\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { .. }));
    }

    #[test]
    fn trim_examples() {
        let t = trim_leading_zeros(&[0.0, 0.0, 5.0, 0.0, 3.0], None).unwrap();
        assert_eq!(t.values, vec![5.0, 0.0, 3.0]);
        assert_eq!(t.offset, 2);
        assert!(matches!(trim_leading_zeros(&[0.0; 4], None), Err(Error::NoSignal(_))));
        let hundred = vec![1.0; 100];
        let err = trim_leading_zeros(&hundred, Some(28)).unwrap_err();
        assert!(matches!(err, Error::BelowMinimumLength { length: 100, required: 112, .. }));
        assert!(err.to_string().contains("below minimum effective length"));
        assert!(trim_leading_zeros(&vec![1.0; 112], Some(28)).is_ok());
    }

    #[test]
    fn stats_examples() {
        let s = compute_stats(&[10.0, 10.0, 10.0]).unwrap();
        assert_eq!((s.mu, s.sigma, s.sigma_eff), (10.0, 0.0, 1.0));
        let s = compute_stats(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mu, s.sigma), (2.0, 1.0));
        assert_eq!(s.normalize(3.0), 1.0);
    }

    #[test]
    fn normalize_examples() {
        let s = SeriesStats {
            mu: 1179.86,
            sigma: 315.96,
            sigma_eff: 315.96,
        };
        assert_eq!(s.normalize(1179.86), 0.0);
        assert!((s.normalize(1495.82) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_examples() {
        let v: Vec<u32> = (0..1941).collect();
        let (tr, te) = split_train_test(&v, SplitSpec { horizon: 28 }).unwrap();
        assert_eq!((tr.len(), te.len()), (1913, 28));
        assert_eq!(te[0], 1913);
        let v = vec![0.0; 29];
        let (tr, te) = split_train_test(&v, SplitSpec { horizon: 28 }).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 28));
        assert!(split_train_test(&vec![0.0; 28], SplitSpec { horizon: 28 }).is_err());
    }

    #[test]
    fn aggregate_sums_and_identity() {
        let start = d("2025-01-01");
        let set = SeriesSet::from_daily(start, [("a".to_string(), vec![1.0, 2.0]), ("b".to_string(), vec![3.0, 4.0])]).unwrap();
        let g: BTreeMap<_, _> = [("a".into(), "g".into()), ("b".into(), "g".into())].into();
        assert_eq!(aggregate(&set, &g).unwrap().values("g").unwrap(), vec![4.0, 6.0]);
        let id: BTreeMap<_, _> = [("a".into(), "a".into()), ("b".into(), "b".into())].into();
        assert_eq!(aggregate(&set, &id).unwrap(), set);
        assert!(matches!(aggregate(&set, &BTreeMap::new()), Err(Error::EmptyGrouping)));
    }

    #[test]
    fn aggregate_fills_missing_dates_with_zero() {
        let mut items = BTreeMap::new();
        items.insert("a".to_string(), vec![Observation { date: d("2025-01-01"), value: 1.0 }, Observation { date: d("2025-01-02"), value: 2.0 }]);
        items.insert("b".to_string(), vec![Observation { date: d("2025-01-02"), value: 5.0 }]);
        let set = SeriesSet::from_items(items).unwrap();
        let g: BTreeMap<_, _> = [("a".into(), "g".into()), ("b".into(), "g".into())].into();
        assert_eq!(aggregate(&set, &g).unwrap().values("g").unwrap(), vec![1.0, 7.0]);
    }

    #[test]
    fn processed_series_extrapolates_dates() {
        let set = SeriesSet::from_daily(d("2025-01-01"), [("a".to_string(), vec![0.0, 1.0, 2.0])]).unwrap();
        let p = ProcessedSeries::new("a", set.get("a").unwrap(), None).unwrap();
        assert_eq!(p.offset, 1);
        assert_eq!(p.date_at(0), d("2025-01-02"));
        assert_eq!(p.date_at(3), d("2025-01-05"));
    }
}
