//! Bilateral exposure weights and the per-country link matrices.
//!
//! Gross bilateral financial positions are normalized into row-stochastic
//! weights, and each country gets a selection-plus-weights matrix `W_i`
//! that maps the stacked global endogenous vector into its (domestic,
//! foreign) blocks. Foreign rows average the counterpart series of the
//! other countries; when some country lacks a series, the remaining
//! weights are renormalized so every foreign row still sums to one.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::{fmt_f64, ObservationPanel, SeriesKey};

pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LinkageError {
    #[error("exposure matrix must be square with matching labels, got {0}")]
    BadShape(String),
    #[error("exposure entry for {from}->{to} is negative")]
    NegativeExposure { from: String, to: String },
    #[error("country {0} has no positive off-diagonal exposure; weights undefined")]
    ZeroRow(String),
    #[error("domestic variable {0} not present in the global ordering")]
    DomesticVarMissing(SeriesKey),
    #[error("foreign variable `{0}` is carried by no other country")]
    ForeignVarUnavailable(String),
    #[error("country {0} not present in the weight matrix")]
    UnknownCountry(String),
    #[error("panel ordering does not match the link matrix's global ordering")]
    OrderMismatch,
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad exposure CSV {path}: {message}")]
    BadCsv { path: String, message: String },
}

/// Gross bilateral exposures: `exposure[(i, j)]` is what country `i`
/// owes country `j`. Diagonal entries are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureMatrix {
    pub countries: Vec<String>,
    pub exposure: DMatrix<f64>,
}

impl ExposureMatrix {
    pub fn new(countries: Vec<String>, exposure: DMatrix<f64>) -> Result<Self, LinkageError> {
        let n = countries.len();
        if exposure.nrows() != n || exposure.ncols() != n {
            return Err(LinkageError::BadShape(format!(
                "{} labels vs {}x{} matrix",
                n,
                exposure.nrows(),
                exposure.ncols()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && exposure[(i, j)] < 0.0 {
                    return Err(LinkageError::NegativeExposure {
                        from: countries[i].clone(),
                        to: countries[j].clone(),
                    });
                }
            }
        }
        Ok(Self {
            countries,
            exposure,
        })
    }

    /// Reads a CSV whose header row and first column carry country codes.
    pub fn read_csv(path: &Path) -> Result<Self, LinkageError> {
        let display = path.display().to_string();
        let content = std::fs::read_to_string(path).map_err(|source| LinkageError::Io {
            path: display.clone(),
            source,
        })?;
        let bad = |message: String| LinkageError::BadCsv {
            path: display.clone(),
            message,
        };
        let mut lines = content.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let countries: Vec<String> = header
            .split(',')
            .skip(1)
            .map(|s| s.trim().to_string())
            .collect();
        if countries.is_empty() {
            return Err(bad("header row has no country codes".into()));
        }
        let n = countries.len();
        let mut exposure = DMatrix::zeros(n, n);
        let mut row_count = 0;
        for (i, line) in lines.enumerate() {
            if i >= n {
                return Err(bad(format!("more than {n} data rows")));
            }
            let mut fields = line.split(',').map(str::trim);
            let label = fields.next().unwrap_or_default();
            if label != countries[i] {
                return Err(bad(format!(
                    "row {i} labeled `{label}`, expected `{}`",
                    countries[i]
                )));
            }
            for j in 0..n {
                let field = fields
                    .next()
                    .ok_or_else(|| bad(format!("row `{label}` has fewer than {n} values")))?;
                exposure[(i, j)] = field
                    .parse()
                    .map_err(|e| bad(format!("bad value `{field}` in row `{label}`: {e}")))?;
            }
            row_count += 1;
        }
        if row_count != n {
            return Err(bad(format!("expected {n} data rows, found {row_count}")));
        }
        Self::new(countries, exposure)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), LinkageError> {
        let mut out = String::new();
        out.push(',');
        out.push_str(&self.countries.join(","));
        out.push('\n');
        for (i, code) in self.countries.iter().enumerate() {
            out.push_str(code);
            for j in 0..self.countries.len() {
                out.push(',');
                out.push_str(&fmt_f64(self.exposure[(i, j)]));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|source| LinkageError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Row-stochastic bilateral weights with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkageWeights {
    pub countries: Vec<String>,
    pub w: DMatrix<f64>,
}

impl LinkageWeights {
    pub fn country_index(&self, code: &str) -> Option<usize> {
        self.countries.iter().position(|c| c == code)
    }

    pub fn weight(&self, from: &str, to: &str) -> Option<f64> {
        Some(self.w[(self.country_index(from)?, self.country_index(to)?)])
    }
}

/// Normalizes each row of the exposure matrix to off-diagonal shares.
///
/// `w[i][j] = exposure[i][j] / sum_{j != i} exposure[i][j]`, diagonal zero.
pub fn normalize_weights(e: &ExposureMatrix) -> Result<LinkageWeights, LinkageError> {
    let n = e.countries.len();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let row_sum: f64 = (0..n).filter(|&j| j != i).map(|j| e.exposure[(i, j)]).sum();
        if row_sum <= 0.0 {
            return Err(LinkageError::ZeroRow(e.countries[i].clone()));
        }
        for j in 0..n {
            if j != i {
                w[(i, j)] = e.exposure[(i, j)] / row_sum;
            }
        }
    }
    Ok(LinkageWeights {
        countries: e.countries.clone(),
        w,
    })
}

/// One country's variable layout: its domestic variables and the foreign
/// variable types it imports as cross-country averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountrySpec {
    pub country: String,
    pub domestic_vars: Vec<String>,
    pub foreign_vars: Vec<String>,
}

impl CountrySpec {
    pub fn domestic_keys(&self) -> Vec<SeriesKey> {
        self.domestic_vars
            .iter()
            .map(|v| SeriesKey::new(&self.country, v))
            .collect()
    }
}

/// The `(k_i + k_i*) x k` matrix mapping the global vector into a
/// country's stacked (domestic, foreign) block.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkMatrix {
    pub country: String,
    pub w: DMatrix<f64>,
    /// Domestic keys followed by foreign-star keys (labeled by variable).
    pub row_labels: Vec<SeriesKey>,
    pub domestic_len: usize,
    pub global_order: Vec<SeriesKey>,
}

impl LinkMatrix {
    pub fn foreign_len(&self) -> usize {
        self.w.nrows() - self.domestic_len
    }

    /// The foreign block of `W`, i.e. the rows below the selection rows.
    pub fn foreign_rows(&self) -> DMatrix<f64> {
        self.w
            .rows(self.domestic_len, self.foreign_len())
            .into_owned()
    }
}

/// Builds `W_i` for one country against a global variable ordering.
///
/// The top `k_i` rows select the country's own variables; each foreign
/// row spreads the country's bilateral weights over the other countries
/// that carry the variable, renormalized to sum to one when some of them
/// do not.
pub fn build_link_matrix(
    spec: &CountrySpec,
    weights: &LinkageWeights,
    global_order: &[SeriesKey],
) -> Result<LinkMatrix, LinkageError> {
    let k = global_order.len();
    let own = weights
        .country_index(&spec.country)
        .ok_or_else(|| LinkageError::UnknownCountry(spec.country.clone()))?;

    let k_i = spec.domestic_vars.len();
    let k_star = spec.foreign_vars.len();
    let mut w = DMatrix::zeros(k_i + k_star, k);
    let mut row_labels = Vec::with_capacity(k_i + k_star);

    for (r, var) in spec.domestic_vars.iter().enumerate() {
        let key = SeriesKey::new(&spec.country, var);
        let col = global_order
            .iter()
            .position(|g| g == &key)
            .ok_or_else(|| LinkageError::DomesticVarMissing(key.clone()))?;
        w[(r, col)] = 1.0;
        row_labels.push(key);
    }

    for (f, var) in spec.foreign_vars.iter().enumerate() {
        let r = k_i + f;
        let mut available = Vec::new();
        for (col, key) in global_order.iter().enumerate() {
            if key.variable == *var && key.country != spec.country {
                let j = weights
                    .country_index(&key.country)
                    .ok_or_else(|| LinkageError::UnknownCountry(key.country.clone()))?;
                available.push((col, weights.w[(own, j)]));
            }
        }
        let total: f64 = available.iter().map(|(_, wt)| wt).sum();
        if available.is_empty() || total <= 0.0 {
            return Err(LinkageError::ForeignVarUnavailable(var.clone()));
        }
        for (col, wt) in available {
            w[(r, col)] = wt / total;
        }
        row_labels.push(SeriesKey::new(&spec.country, format!("{var}_star")));
    }

    Ok(LinkMatrix {
        country: spec.country.clone(),
        w,
        row_labels,
        domestic_len: k_i,
        global_order: global_order.to_vec(),
    })
}

/// Evaluates the foreign block of `W_i x_t` for every panel month,
/// producing the country's `T x k_i*` foreign-star series.
pub fn foreign_series(
    panel: &ObservationPanel,
    lm: &LinkMatrix,
) -> Result<DMatrix<f64>, LinkageError> {
    if panel.endo_order != lm.global_order {
        return Err(LinkageError::OrderMismatch);
    }
    // rows of the result are (W_foreign x_t)' = x_t' W_foreign'
    Ok(&panel.endogenous * lm.foreign_rows().transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::month::MonthRange;
    use crate::timeseries::align_panel;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn exposure(countries: &[&str], rows: &[&[f64]]) -> ExposureMatrix {
        let n = countries.len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ExposureMatrix::new(
            countries.iter().map(|s| s.to_string()).collect(),
            DMatrix::from_row_slice(n, n, &flat),
        )
        .unwrap()
    }

    #[test]
    fn two_country_weights_are_forced_to_one() {
        let e = exposure(&["A", "B"], &[&[0.0, 5.0], &[7.0, 0.0]]);
        let w = normalize_weights(&e).unwrap();
        assert_eq!(w.w, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn proportional_shares() {
        let e = exposure(
            &["A", "B", "C", "D"],
            &[
                &[0.0, 2.0, 2.0, 4.0],
                &[1.0, 0.0, 1.0, 1.0],
                &[1.0, 1.0, 0.0, 1.0],
                &[1.0, 1.0, 1.0, 0.0],
            ],
        );
        let w = normalize_weights(&e).unwrap();
        let row: Vec<f64> = (0..4).map(|j| w.w[(0, j)]).collect();
        assert_eq!(row, vec![0.0, 0.25, 0.25, 0.5]);
    }

    #[test]
    fn equal_exposures_give_uniform_weights() {
        let e = exposure(
            &["A", "B", "C"],
            &[&[0.0, 3.0, 3.0], &[3.0, 0.0, 3.0], &[3.0, 3.0, 0.0]],
        );
        let w = normalize_weights(&e).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 0.0 } else { 0.5 };
                assert_abs_diff_eq!(w.w[(i, j)], expected, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn zero_row_is_an_error() {
        let e = exposure(&["A", "B"], &[&[0.0, 0.0], &[7.0, 0.0]]);
        assert!(matches!(
            normalize_weights(&e),
            Err(LinkageError::ZeroRow(c)) if c == "A"
        ));
    }

    /// Weights over {FRA, GER, ESP} from Italy's point of view, plus a
    /// four-country global ordering where Spain lacks repo variables.
    fn fixture() -> (LinkageWeights, Vec<SeriesKey>) {
        let countries = vec![
            "ITA".to_string(),
            "FRA".to_string(),
            "GER".to_string(),
            "ESP".to_string(),
        ];
        #[rustfmt::skip]
        let w = DMatrix::from_row_slice(4, 4, &[
            0.0, 0.3, 0.5, 0.2,   // ITA ->
            0.4, 0.0, 0.4, 0.2,   // FRA ->
            0.4, 0.3, 0.0, 0.3,   // GER -> {FRA, ITA, ESP} reordered below
            0.3, 0.3, 0.4, 0.0,   // ESP ->
        ]);
        let weights = LinkageWeights { countries, w };
        let mut order = Vec::new();
        for c in ["ITA", "FRA", "GER"] {
            for v in ["repo_vol", "gov_yield"] {
                order.push(SeriesKey::new(c, v));
            }
        }
        order.push(SeriesKey::new("ESP", "gov_yield"));
        (weights, order)
    }

    #[test]
    fn foreign_row_places_weights_directly() {
        let (weights, order) = fixture();
        let spec = CountrySpec {
            country: "ITA".into(),
            domestic_vars: vec!["repo_vol".into(), "gov_yield".into()],
            foreign_vars: vec!["gov_yield".into()],
        };
        let lm = build_link_matrix(&spec, &weights, &order).unwrap();
        // all three partners carry gov_yield: weights used as-is
        let row = lm.w.row(2);
        let col_of = |key: &SeriesKey| order.iter().position(|k| k == key).unwrap();
        assert_abs_diff_eq!(row[col_of(&SeriesKey::new("FRA", "gov_yield"))], 0.3);
        assert_abs_diff_eq!(row[col_of(&SeriesKey::new("GER", "gov_yield"))], 0.5);
        assert_abs_diff_eq!(row[col_of(&SeriesKey::new("ESP", "gov_yield"))], 0.2);
    }

    // Renormalization oracle: divide each available weight by the sum of
    // available weights.
    #[test]
    fn foreign_row_renormalizes_over_available_countries() {
        let (weights, order) = fixture();
        let spec = CountrySpec {
            country: "GER".into(),
            domestic_vars: vec!["repo_vol".into(), "gov_yield".into()],
            foreign_vars: vec!["repo_vol".into()],
        };
        let lm = build_link_matrix(&spec, &weights, &order).unwrap();
        let row = lm.w.row(2);
        let col_of = |key: &SeriesKey| order.iter().position(|k| k == key).unwrap();
        // GER weights: FRA 0.3, ITA 0.4, ESP 0.3 but ESP has no repo_vol
        let expected_fra = 0.3 / (0.3 + 0.4);
        let expected_ita = 0.4 / (0.3 + 0.4);
        assert_abs_diff_eq!(
            row[col_of(&SeriesKey::new("FRA", "repo_vol"))],
            expected_fra,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            row[col_of(&SeriesKey::new("ITA", "repo_vol"))],
            expected_ita,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(row.sum(), 1.0, epsilon = ROW_SUM_TOL);
    }

    #[test]
    fn domestic_rows_select_exactly() {
        let (weights, order) = fixture();
        let spec = CountrySpec {
            country: "FRA".into(),
            domestic_vars: vec!["repo_vol".into(), "gov_yield".into()],
            foreign_vars: vec!["gov_yield".into()],
        };
        let lm = build_link_matrix(&spec, &weights, &order).unwrap();
        let x: Vec<f64> = (0..order.len()).map(|i| (i * i) as f64 + 0.5).collect();
        let xv = nalgebra::DVector::from_vec(x.clone());
        let picked = lm.w.rows(0, 2) * &xv;
        let col_of = |key: &SeriesKey| order.iter().position(|k| k == key).unwrap();
        assert_eq!(picked[0], x[col_of(&SeriesKey::new("FRA", "repo_vol"))]);
        assert_eq!(picked[1], x[col_of(&SeriesKey::new("FRA", "gov_yield"))]);
    }

    #[test]
    fn unavailable_foreign_variable_is_an_error() {
        let (weights, order) = fixture();
        let spec = CountrySpec {
            country: "ESP".into(),
            domestic_vars: vec!["gov_yield".into()],
            foreign_vars: vec!["cds".into()],
        };
        assert!(matches!(
            build_link_matrix(&spec, &weights, &order),
            Err(LinkageError::ForeignVarUnavailable(v)) if v == "cds"
        ));
    }

    #[test]
    fn link_matrix_has_full_row_rank() {
        let (weights, order) = fixture();
        for (country, domestic) in [
            ("ITA", vec!["repo_vol", "gov_yield"]),
            ("ESP", vec!["gov_yield"]),
        ] {
            let spec = CountrySpec {
                country: country.into(),
                domestic_vars: domestic.iter().map(|s| s.to_string()).collect(),
                foreign_vars: vec!["repo_vol".into(), "gov_yield".into()],
            };
            let lm = build_link_matrix(&spec, &weights, &order).unwrap();
            let svals = lm.w.clone().singular_values();
            assert!(svals.min() > 1e-10, "{country}: W_i rank-deficient");
        }
    }

    fn tiny_panel(order: &[SeriesKey], rows: &[&[f64]]) -> ObservationPanel {
        use crate::timeseries::{RawSeries, Unit};
        let start: Month = "2010-01".parse().unwrap();
        let range = MonthRange::new(start, start.add_months(rows.len() as i64 - 1)).unwrap();
        let series: Vec<RawSeries> = order
            .iter()
            .enumerate()
            .map(|(j, key)| {
                let obs: Vec<(chrono::NaiveDate, f64)> = rows
                    .iter()
                    .enumerate()
                    .map(|(t, row)| (start.add_months(t as i64).first_day(), row[j]))
                    .collect();
                RawSeries::new(key.clone(), Unit::Dimensionless, obs).unwrap()
            })
            .collect();
        align_panel(&series, range, order.to_vec(), vec![], vec![]).unwrap()
    }

    use crate::month::Month;

    #[test]
    fn foreign_series_of_equal_values_is_the_common_value() {
        let (weights, order) = fixture();
        let spec = CountrySpec {
            country: "ITA".into(),
            domestic_vars: vec!["repo_vol".into(), "gov_yield".into()],
            foreign_vars: vec!["gov_yield".into()],
        };
        let lm = build_link_matrix(&spec, &weights, &order).unwrap();
        let row = vec![9.5; order.len()];
        let panel = tiny_panel(&order, &[&row]);
        let fs = foreign_series(&panel, &lm).unwrap();
        assert_abs_diff_eq!(fs[(0, 0)], 9.5, epsilon = 1e-12);
    }

    #[test]
    fn one_hot_weights_select_the_partner_series() {
        let countries = vec!["A".to_string(), "B".to_string()];
        let weights = LinkageWeights {
            countries,
            w: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        };
        let order = vec![SeriesKey::new("A", "y"), SeriesKey::new("B", "y")];
        let spec = CountrySpec {
            country: "A".into(),
            domestic_vars: vec!["y".into()],
            foreign_vars: vec!["y".into()],
        };
        let lm = build_link_matrix(&spec, &weights, &order).unwrap();
        let panel = tiny_panel(&order, &[&[1.0, 42.0], &[2.0, 43.5]]);
        let fs = foreign_series(&panel, &lm).unwrap();
        assert_eq!(fs[(0, 0)], 42.0);
        assert_eq!(fs[(1, 0)], 43.5);
    }

    #[test]
    fn half_half_weights_average() {
        let countries = vec!["A".into(), "B".into(), "C".into()];
        #[rustfmt::skip]
        let w = DMatrix::from_row_slice(3, 3, &[
            0.0, 0.5, 0.5,
            0.5, 0.0, 0.5,
            0.5, 0.5, 0.0,
        ]);
        let weights = LinkageWeights { countries, w };
        let order = vec![
            SeriesKey::new("A", "y"),
            SeriesKey::new("B", "y"),
            SeriesKey::new("C", "y"),
        ];
        let spec = CountrySpec {
            country: "A".into(),
            domestic_vars: vec!["y".into()],
            foreign_vars: vec!["y".into()],
        };
        let lm = build_link_matrix(&spec, &weights, &order).unwrap();
        let panel = tiny_panel(&order, &[&[0.0, 2.0, 4.0]]);
        let fs = foreign_series(&panel, &lm).unwrap();
        assert_abs_diff_eq!(fs[(0, 0)], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn foreign_series_rejects_reordered_panel() {
        let (weights, order) = fixture();
        let spec = CountrySpec {
            country: "ITA".into(),
            domestic_vars: vec!["repo_vol".into(), "gov_yield".into()],
            foreign_vars: vec!["gov_yield".into()],
        };
        let lm = build_link_matrix(&spec, &weights, &order).unwrap();
        let mut reversed = order.clone();
        reversed.reverse();
        let panel = tiny_panel(&reversed, &[&[0.0; 7]]);
        assert!(matches!(
            foreign_series(&panel, &lm),
            Err(LinkageError::OrderMismatch)
        ));
    }

    proptest! {
        // Row-stochasticity holds for arbitrary positive exposures.
        #[test]
        fn weight_rows_sum_to_one(values in proptest::collection::vec(0.01f64..1000.0, 12)) {
            let mut m = DMatrix::zeros(4, 4);
            let mut it = values.into_iter();
            for i in 0..4 {
                for j in 0..4 {
                    if i != j {
                        m[(i, j)] = it.next().unwrap();
                    }
                }
            }
            let e = ExposureMatrix::new(
                vec!["A".into(), "B".into(), "C".into(), "D".into()],
                m,
            ).unwrap();
            let w = normalize_weights(&e).unwrap();
            for i in 0..4 {
                let sum: f64 = (0..4).map(|j| w.w[(i, j)]).sum();
                prop_assert!((sum - 1.0).abs() <= ROW_SUM_TOL);
                prop_assert_eq!(w.w[(i, i)], 0.0);
                for j in 0..4 {
                    prop_assert!((0.0..=1.0).contains(&w.w[(i, j)]));
                }
            }
        }

        // Convexity: a foreign value lies inside the contributing range.
        #[test]
        fn foreign_value_is_convex_combination(
            a in -10.0f64..10.0,
            b in -10.0f64..10.0,
            c in -10.0f64..10.0,
            wa in 0.05f64..1.0,
            wb in 0.05f64..1.0,
            wc in 0.05f64..1.0,
        ) {
            let total = wa + wb + wc;
            let countries = vec!["I".into(), "A".into(), "B".into(), "C".into()];
            let mut w = DMatrix::zeros(4, 4);
            w[(0, 1)] = wa / total;
            w[(0, 2)] = wb / total;
            w[(0, 3)] = wc / total;
            // other rows arbitrary valid
            for i in 1..4 {
                for j in 0..4 {
                    if i != j { w[(i, j)] = 1.0 / 3.0; }
                }
            }
            let weights = LinkageWeights { countries, w };
            let order = vec![
                SeriesKey::new("I", "y"),
                SeriesKey::new("A", "y"),
                SeriesKey::new("B", "y"),
                SeriesKey::new("C", "y"),
            ];
            let spec = CountrySpec {
                country: "I".into(),
                domestic_vars: vec!["y".into()],
                foreign_vars: vec!["y".into()],
            };
            let lm = build_link_matrix(&spec, &weights, &order).unwrap();
            let panel = tiny_panel(&order, &[&[0.0, a, b, c]]);
            let fs = foreign_series(&panel, &lm).unwrap();
            let lo = a.min(b).min(c) - 1e-9;
            let hi = a.max(b).max(c) + 1e-9;
            prop_assert!(fs[(0, 0)] >= lo && fs[(0, 0)] <= hi);
        }
    }
}
