//! Country-level VARX* models linked into a global VAR.
//!
//! The pipeline runs raw per-series CSVs through monthly aggregation,
//! transforms and panel alignment, estimates one VARX* per country with
//! contemporaneous and lagged foreign-star variables and common
//! exogenous policy variables, stacks the estimates into the global
//! reduced form, and analyzes the system with generalized impulse
//! responses and counterfactual exogenous-path scenarios.

pub mod month;
pub mod timeseries;
pub mod linkage;
pub mod varx;

pub use month::{Month, MonthRange};
pub use timeseries::{ObservationPanel, RawSeries, SeriesKey, Transform, TransformSpec, Unit};
