//! Raw series ingestion, monthly aggregation, variable transforms and
//! panel alignment.
//!
//! Raw inputs arrive at daily, weekly or monthly frequency as one CSV
//! per series (`date,value` with ISO-8601 dates). They are averaged
//! within each calendar month, transformed, and aligned into a single
//! `ObservationPanel` with no missing cells. Gaps inside the sample
//! range are hard errors, never silently imputed.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::month::{Month, MonthRange};

/// Identifies one series: a country code plus a variable name.
///
/// Area-wide exogenous series use the pseudo-country `EA`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeriesKey {
    pub country: String,
    pub variable: String,
}

impl SeriesKey {
    pub fn new(country: impl Into<String>, variable: impl Into<String>) -> Self {
        Self {
            country: country.into(),
            variable: variable.into(),
        }
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.country, self.variable)
    }
}

impl FromStr for SeriesKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (country, variable) = s
            .split_once('.')
            .ok_or_else(|| format!("invalid series key `{s}`, expected COUNTRY.variable"))?;
        if country.is_empty() || variable.is_empty() {
            return Err(format!("invalid series key `{s}`"));
        }
        Ok(Self::new(country, variable))
    }
}

impl Serialize for SeriesKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SeriesKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Measurement unit annotation. Units are never converted automatically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Percent,
    EurBn,
    Count,
    #[default]
    Dimensionless,
}

/// Pointwise variable transform.
///
/// `Level` and `None` are both the identity; they are kept distinct so a
/// configuration can state intent (a variable "in levels" vs. a dummy
/// that carries no transform at all).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Level,
    Log,
    Log1p,
    None,
}

impl Transform {
    /// Applies the transform to a single value, checking its domain.
    pub fn apply(&self, x: f64) -> Result<f64, TransformDomain> {
        match self {
            Transform::Level | Transform::None => Ok(x),
            Transform::Log => {
                if x > 0.0 {
                    Ok(x.ln())
                } else {
                    Err(TransformDomain {
                        kind: *self,
                        value: x,
                    })
                }
            }
            Transform::Log1p => {
                if x >= 0.0 {
                    Ok(x.ln_1p())
                } else {
                    Err(TransformDomain {
                        kind: *self,
                        value: x,
                    })
                }
            }
        }
    }

    /// Inverse mapping from transformed back to raw units.
    pub fn invert(&self, y: f64) -> f64 {
        match self {
            Transform::Level | Transform::None => y,
            Transform::Log => y.exp(),
            Transform::Log1p => y.exp_m1(),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Transform::Level => "level",
            Transform::Log => "log",
            Transform::Log1p => "log1p",
            Transform::None => "none",
        };
        f.write_str(s)
    }
}

impl FromStr for Transform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "level" => Ok(Transform::Level),
            "log" => Ok(Transform::Log),
            "log1p" => Ok(Transform::Log1p),
            "none" => Ok(Transform::None),
            other => Err(format!("unknown transform `{other}`")),
        }
    }
}

/// A transform assigned to a specific series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: Transform,
    pub applied_to: SeriesKey,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformDomain {
    pub kind: Transform,
    pub value: f64,
}

#[derive(Debug, Error)]
pub enum TimeseriesError {
    #[error("series {0} has no observations")]
    EmptySeries(SeriesKey),
    #[error("series {key}: dates not strictly increasing at {date}")]
    UnorderedDates { key: SeriesKey, date: NaiveDate },
    #[error("series {key}: non-finite value at {date}")]
    NonFiniteValue { key: SeriesKey, date: NaiveDate },
    #[error("series {key}: {kind} transform undefined for value {value} at {date}")]
    DomainViolation {
        key: SeriesKey,
        kind: Transform,
        date: NaiveDate,
        value: f64,
    },
    #[error("series {key} has multiple observations in {month}; aggregate to monthly first")]
    NotMonthly { key: SeriesKey, month: Month },
    #[error("series {key} missing observation for {month}")]
    MissingObservation { key: SeriesKey, month: Month },
    #[error("series {0} not found among the supplied inputs")]
    MissingSeries(SeriesKey),
    #[error("series key {0} appears more than once in the panel ordering")]
    DuplicateKey(SeriesKey),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad CSV record in {path} line {line}: {message}")]
    BadRecord {
        path: String,
        line: u64,
        message: String,
    },
}

/// One raw input series at its native frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub key: SeriesKey,
    pub unit: Unit,
    observations: Vec<(NaiveDate, f64)>,
}

impl RawSeries {
    /// Builds a series, enforcing strictly increasing dates and finite values.
    pub fn new(
        key: SeriesKey,
        unit: Unit,
        observations: Vec<(NaiveDate, f64)>,
    ) -> Result<Self, TimeseriesError> {
        for window in observations.windows(2) {
            if window[1].0 <= window[0].0 {
                return Err(TimeseriesError::UnorderedDates {
                    key,
                    date: window[1].0,
                });
            }
        }
        if let Some(&(date, value)) = observations.iter().find(|(_, v)| !v.is_finite()) {
            let _ = value;
            return Err(TimeseriesError::NonFiniteValue { key, date });
        }
        Ok(Self {
            key,
            unit,
            observations,
        })
    }

    pub fn observations(&self) -> &[(NaiveDate, f64)] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Reads a `date,value` CSV with a header row.
    pub fn read_csv(path: &Path, key: SeriesKey, unit: Unit) -> Result<Self, TimeseriesError> {
        let display = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| match e.kind() {
                csv::ErrorKind::Io(_) => TimeseriesError::MissingSeries(key.clone()),
                _ => TimeseriesError::BadRecord {
                    path: display.clone(),
                    line: 0,
                    message: e.to_string(),
                },
            })?;
        let mut observations = Vec::new();
        for result in reader.records() {
            let record = result.map_err(|e| TimeseriesError::BadRecord {
                path: display.clone(),
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let bad = |message: String| TimeseriesError::BadRecord {
                path: display.clone(),
                line,
                message,
            };
            let date_field = record.get(0).ok_or_else(|| bad("missing date".into()))?;
            let value_field = record.get(1).ok_or_else(|| bad("missing value".into()))?;
            let date = NaiveDate::parse_from_str(date_field.trim(), "%Y-%m-%d")
                .map_err(|e| bad(format!("bad date `{date_field}`: {e}")))?;
            let value: f64 = value_field
                .trim()
                .parse()
                .map_err(|e| bad(format!("bad value `{value_field}`: {e}")))?;
            observations.push((date, value));
        }
        Self::new(key, unit, observations)
    }

    /// Writes the series in the same `date,value` format `read_csv` accepts.
    pub fn write_csv(&self, path: &Path) -> Result<(), TimeseriesError> {
        let mut out = String::from("date,value\n");
        for (date, value) in &self.observations {
            out.push_str(&format!("{},{}\n", date.format("%Y-%m-%d"), fmt_f64(*value)));
        }
        std::fs::write(path, out).map_err(|source| TimeseriesError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Renders a float with 17 significant digits so values round-trip exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Averages all observations within each calendar month.
///
/// Months with no observations are simply absent from the output; they
/// are never zero-filled. The result has one observation per month,
/// dated at the first of the month.
pub fn aggregate_to_monthly(raw: &RawSeries) -> Result<RawSeries, TimeseriesError> {
    if raw.is_empty() {
        return Err(TimeseriesError::EmptySeries(raw.key.clone()));
    }
    let mut sums: BTreeMap<Month, (f64, usize)> = BTreeMap::new();
    for &(date, value) in raw.observations() {
        let entry = sums.entry(Month::from_date(date)).or_insert((0.0, 0));
        entry.0 += value;
        entry.1 += 1;
    }
    let observations = sums
        .into_iter()
        .map(|(month, (sum, n))| (month.first_day(), sum / n as f64))
        .collect();
    RawSeries::new(raw.key.clone(), raw.unit, observations)
}

/// Applies a transform pointwise, leaving dates untouched.
///
/// Fails on the first observation outside the transform's domain.
pub fn apply_transform(raw: &RawSeries, spec: &TransformSpec) -> Result<RawSeries, TimeseriesError> {
    let mut observations = Vec::with_capacity(raw.len());
    for &(date, value) in raw.observations() {
        let transformed =
            spec.kind
                .apply(value)
                .map_err(|domain| TimeseriesError::DomainViolation {
                    key: raw.key.clone(),
                    kind: domain.kind,
                    date,
                    value: domain.value,
                })?;
        observations.push((date, transformed));
    }
    RawSeries::new(raw.key.clone(), raw.unit, observations)
}

/// The aligned estimation panel: endogenous block, exogenous block, and
/// the orderings that give every column a name.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPanel {
    pub time_index: Vec<Month>,
    pub endogenous: DMatrix<f64>,
    pub exogenous: DMatrix<f64>,
    pub endo_order: Vec<SeriesKey>,
    pub exo_order: Vec<SeriesKey>,
    pub transforms: Vec<TransformSpec>,
}

impl ObservationPanel {
    pub fn t_len(&self) -> usize {
        self.time_index.len()
    }

    pub fn endo_dim(&self) -> usize {
        self.endo_order.len()
    }

    pub fn exo_dim(&self) -> usize {
        self.exo_order.len()
    }

    /// Panel position of a month, if inside the sample.
    pub fn month_index(&self, month: Month) -> Option<usize> {
        let first = *self.time_index.first()?;
        let offset = first.months_until(month);
        if offset >= 0 && (offset as usize) < self.time_index.len() {
            Some(offset as usize)
        } else {
            None
        }
    }

    /// Trend value of a month under the estimation-time numbering, where
    /// the first sample month counts as 1. Months after the sample
    /// continue the count.
    pub fn trend_value(&self, month: Month) -> f64 {
        let first = self.time_index[0];
        (first.months_until(month) + 1) as f64
    }

    pub fn endo_column(&self, key: &SeriesKey) -> Option<usize> {
        self.endo_order.iter().position(|k| k == key)
    }

    pub fn exo_column(&self, key: &SeriesKey) -> Option<usize> {
        self.exo_order.iter().position(|k| k == key)
    }

    pub fn transform_for(&self, key: &SeriesKey) -> Transform {
        self.transforms
            .iter()
            .find(|spec| &spec.applied_to == key)
            .map_or(Transform::Level, |spec| spec.kind)
    }
}

/// Aligns monthly series into a full panel over an inclusive month range.
///
/// Every key in `endo_order` and `exo_order` must be present in `series`
/// and cover every month of `range`; anything else is an error, not an
/// interpolation. Cells are copied exactly as supplied.
pub fn align_panel(
    series: &[RawSeries],
    range: MonthRange,
    endo_order: Vec<SeriesKey>,
    exo_order: Vec<SeriesKey>,
    transforms: Vec<TransformSpec>,
) -> Result<ObservationPanel, TimeseriesError> {
    let mut seen = std::collections::BTreeSet::new();
    for key in endo_order.iter().chain(exo_order.iter()) {
        if !seen.insert(key.clone()) {
            return Err(TimeseriesError::DuplicateKey(key.clone()));
        }
    }

    let mut by_key: BTreeMap<&SeriesKey, BTreeMap<Month, f64>> = BTreeMap::new();
    for s in series {
        let mut monthly = BTreeMap::new();
        for &(date, value) in s.observations() {
            let month = Month::from_date(date);
            if monthly.insert(month, value).is_some() {
                return Err(TimeseriesError::NotMonthly {
                    key: s.key.clone(),
                    month,
                });
            }
        }
        by_key.insert(&s.key, monthly);
    }

    let months: Vec<Month> = range.iter().collect();
    let t_len = months.len();

    let fill = |order: &[SeriesKey]| -> Result<DMatrix<f64>, TimeseriesError> {
        let mut matrix = DMatrix::zeros(t_len, order.len());
        for (j, key) in order.iter().enumerate() {
            let monthly = by_key
                .get(key)
                .ok_or_else(|| TimeseriesError::MissingSeries(key.clone()))?;
            for (t, month) in months.iter().enumerate() {
                let value = monthly
                    .get(month)
                    .ok_or_else(|| TimeseriesError::MissingObservation {
                        key: key.clone(),
                        month: *month,
                    })?;
                matrix[(t, j)] = *value;
            }
        }
        Ok(matrix)
    };

    let endogenous = fill(&endo_order)?;
    let exogenous = fill(&exo_order)?;

    Ok(ObservationPanel {
        time_index: months,
        endogenous,
        exogenous,
        endo_order,
        exo_order,
        transforms,
    })
}
