//! Country-level VARX* estimation by equation-by-equation least squares.
//!
//! Each country's domestic block is regressed on an intercept, a linear
//! trend, its own first lag, contemporaneous and lagged foreign-star
//! variables, and contemporaneous and lagged common exogenous variables.
//! The solve goes through an orthogonal decomposition, never the normal
//! equations; rank deficiency is detected against the singular-value
//! spectrum and reported with the offending column's label.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linkage::{foreign_series, CountrySpec, LinkMatrix, LinkageError};
use crate::timeseries::{ObservationPanel, SeriesKey};

/// Singular values below this fraction of the largest mark the design
/// matrix as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum VarxError {
    #[error("too few observations: T={t} cannot identify {p} regressors (need T >= p + 2)")]
    TooFewObservations { t: usize, p: usize },
    #[error("design matrix is rank deficient; column `{0}` is collinear")]
    RankDeficient(String),
    #[error("domestic variable {0} not found in the panel")]
    UnknownDomesticVar(SeriesKey),
    #[error(transparent)]
    Linkage(#[from] LinkageError),
}

/// Coefficients of one country's VARX* equation system.
#[derive(Debug, Clone, PartialEq)]
pub struct CountryCoefficients {
    /// Constants, one per domestic equation.
    pub a0: DVector<f64>,
    /// Linear-trend coefficients.
    pub a1: DVector<f64>,
    /// Own first-lag matrix, `k_i x k_i`.
    pub phi: DMatrix<f64>,
    /// Contemporaneous foreign-star loadings, `k_i x k_i*`.
    pub lambda0: DMatrix<f64>,
    /// Lagged foreign-star loadings, `k_i x k_i*`.
    pub lambda1: DMatrix<f64>,
    /// Contemporaneous exogenous loadings, `k_i x m`.
    pub psi0: DMatrix<f64>,
    /// Lagged exogenous loadings, `k_i x m`.
    pub psi1: DMatrix<f64>,
}

impl CountryCoefficients {
    pub fn domestic_dim(&self) -> usize {
        self.a0.len()
    }

    pub fn foreign_dim(&self) -> usize {
        self.lambda0.ncols()
    }

    pub fn exo_dim(&self) -> usize {
        self.psi0.ncols()
    }
}

/// Design matrix for one country with its column layout.
///
/// Rows are aligned to target months 2..T: the row for calendar month
/// `s` carries month `s` contemporaneous values and month `s-1` lags.
/// The trend column holds the target month's position in the sample,
/// counting the first sample month as 1 (so its values run 2..T).
#[derive(Debug, Clone)]
pub struct RegressorBlock {
    pub design: DMatrix<f64>,
    pub column_labels: Vec<String>,
    pub domestic_dim: usize,
    pub foreign_dim: usize,
    pub exo_dim: usize,
}

impl RegressorBlock {
    pub fn column_count(&self) -> usize {
        self.design.ncols()
    }
}

/// One country's estimate: coefficients, residuals and their covariance.
#[derive(Debug, Clone)]
pub struct VarxEstimate {
    pub country: String,
    /// The domestic keys, in equation order.
    pub target_keys: Vec<SeriesKey>,
    pub coef: CountryCoefficients,
    /// `(T-1) x k_i` least-squares residuals.
    pub residuals: DMatrix<f64>,
    /// `k_i x k_i` residual covariance with a `T-1-p` degrees-of-freedom
    /// correction.
    pub sigma_nu: DMatrix<f64>,
    pub column_labels: Vec<String>,
}

/// Builds the stacked regressor matrix for one country.
pub fn build_regressor_matrix(
    panel: &ObservationPanel,
    spec: &CountrySpec,
    lm: &LinkMatrix,
) -> Result<RegressorBlock, VarxError> {
    let t_len = panel.t_len();
    let k_i = spec.domestic_vars.len();
    let k_star = spec.foreign_vars.len();
    let m = panel.exo_dim();
    let p = 2 + k_i + 2 * k_star + 2 * m;
    if t_len < p + 2 {
        return Err(VarxError::TooFewObservations { t: t_len, p });
    }

    let domestic_cols: Vec<usize> = spec
        .domestic_keys()
        .iter()
        .map(|key| {
            panel
                .endo_column(key)
                .ok_or_else(|| VarxError::UnknownDomesticVar(key.clone()))
        })
        .collect::<Result<_, _>>()?;
    let stars = foreign_series(panel, lm)?;

    let rows = t_len - 1;
    let mut design = DMatrix::zeros(rows, p);
    for r in 0..rows {
        let target = r + 1; // panel index of month s
        let lagged = r; // panel index of month s-1
        let mut c = 0;
        design[(r, c)] = 1.0;
        c += 1;
        design[(r, c)] = (target + 1) as f64; // first sample month counts as 1
        c += 1;
        for &col in &domestic_cols {
            design[(r, c)] = panel.endogenous[(lagged, col)];
            c += 1;
        }
        for j in 0..k_star {
            design[(r, c)] = stars[(target, j)];
            c += 1;
        }
        for j in 0..k_star {
            design[(r, c)] = stars[(lagged, j)];
            c += 1;
        }
        for j in 0..m {
            design[(r, c)] = panel.exogenous[(target, j)];
            c += 1;
        }
        for j in 0..m {
            design[(r, c)] = panel.exogenous[(lagged, j)];
            c += 1;
        }
        debug_assert_eq!(c, p);
    }

    let mut column_labels = Vec::with_capacity(p);
    column_labels.push("const".to_string());
    column_labels.push("trend".to_string());
    for key in spec.domestic_keys() {
        column_labels.push(format!("{key}[t-1]"));
    }
    for var in &spec.foreign_vars {
        column_labels.push(format!("{var}_star[t]"));
    }
    for var in &spec.foreign_vars {
        column_labels.push(format!("{var}_star[t-1]"));
    }
    for key in &panel.exo_order {
        column_labels.push(format!("{key}[t]"));
    }
    for key in &panel.exo_order {
        column_labels.push(format!("{key}[t-1]"));
    }

    Ok(RegressorBlock {
        design,
        column_labels,
        domestic_dim: k_i,
        foreign_dim: k_star,
        exo_dim: m,
    })
}

/// The `(T-1) x k_i` target block: the country's domestic variables at
/// months 2..T, aligned with the design rows.
pub fn domestic_targets(
    panel: &ObservationPanel,
    spec: &CountrySpec,
) -> Result<DMatrix<f64>, VarxError> {
    let t_len = panel.t_len();
    let k_i = spec.domestic_vars.len();
    let mut y = DMatrix::zeros(t_len - 1, k_i);
    for (j, key) in spec.domestic_keys().iter().enumerate() {
        let col = panel
            .endo_column(key)
            .ok_or_else(|| VarxError::UnknownDomesticVar(key.clone()))?;
        for r in 0..t_len - 1 {
            y[(r, j)] = panel.endogenous[(r + 1, col)];
        }
    }
    Ok(y)
}

/// Least-squares estimation of all equations of one country at once.
pub fn estimate_varx(
    country: &str,
    target_keys: Vec<SeriesKey>,
    x: &RegressorBlock,
    y: &DMatrix<f64>,
) -> Result<VarxEstimate, VarxError> {
    let n = x.design.nrows();
    let p = x.design.ncols();
    assert_eq!(y.nrows(), n, "target rows must match design rows");
    assert_eq!(
        2 + x.domestic_dim + 2 * x.foreign_dim + 2 * x.exo_dim,
        p,
        "column layout inconsistent with declared dimensions"
    );
    if n < p + 1 {
        return Err(VarxError::TooFewObservations { t: n + 1, p });
    }

    let svals = x.design.clone().singular_values();
    if svals.min() < RANK_TOL * svals.max() {
        return Err(VarxError::RankDeficient(collinear_column_label(x)));
    }

    // thin QR: solve R b = Q' y per equation
    let qr = x.design.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let rhs = q.transpose() * y;
    let mut beta = DMatrix::zeros(p, y.ncols());
    for j in 0..y.ncols() {
        let col = rhs.column(j).into_owned();
        let solved = r
            .solve_upper_triangular(&col)
            .ok_or_else(|| VarxError::RankDeficient(collinear_column_label(x)))?;
        beta.set_column(j, &solved);
    }

    let residuals = y - &x.design * &beta;
    let dof = (n - p) as f64;
    let sigma_raw = residuals.transpose() * &residuals / dof;
    let sigma_nu = (&sigma_raw + sigma_raw.transpose()) * 0.5;

    let coef = split_coefficients(&beta, x.domestic_dim, x.foreign_dim, x.exo_dim);

    Ok(VarxEstimate {
        country: country.to_string(),
        target_keys,
        coef,
        residuals,
        sigma_nu,
        column_labels: x.column_labels.clone(),
    })
}

/// Names a column implicated in the rank deficiency via the pivoted-QR
/// factorization: the last pivot with a negligible diagonal.
fn collinear_column_label(x: &RegressorBlock) -> String {
    let cpqr = x.design.clone().col_piv_qr();
    let r = cpqr.r();
    let p = x.design.ncols();
    let scale = r[(0, 0)].abs().max(f64::MIN_POSITIVE);
    let mut order = nalgebra::RowDVector::<usize>::from_iterator(p, 0..p);
    cpqr.p().permute_columns(&mut order);
    for i in (0..p.min(r.nrows())).rev() {
        if r[(i, i)].abs() <= RANK_TOL * scale {
            return x.column_labels[order[i]].clone();
        }
    }
    // fall back to the last pivoted column
    x.column_labels[order[p - 1]].clone()
}

/// Slices the stacked coefficient matrix by the fixed column layout.
/// `beta` is `p x k_i` (one column per equation), so each block is
/// transposed into equation-major form.
fn split_coefficients(
    beta: &DMatrix<f64>,
    k_i: usize,
    k_star: usize,
    m: usize,
) -> CountryCoefficients {
    let block = |start: usize, len: usize| -> DMatrix<f64> {
        beta.rows(start, len).transpose()
    };
    let mut c = 0;
    let a0 = DVector::from_iterator(beta.ncols(), beta.row(c).iter().copied());
    c += 1;
    let a1 = DVector::from_iterator(beta.ncols(), beta.row(c).iter().copied());
    c += 1;
    let phi = block(c, k_i);
    c += k_i;
    let lambda0 = block(c, k_star);
    c += k_star;
    let lambda1 = block(c, k_star);
    c += k_star;
    let psi0 = block(c, m);
    c += m;
    let psi1 = block(c, m);
    CountryCoefficients {
        a0,
        a1,
        phi,
        lambda0,
        lambda1,
        psi0,
        psi1,
    }
}

/// Reassembles the stacked `p x k_i` coefficient matrix from its blocks,
/// in design-column order. Inverse of [`split_coefficients`].
pub fn stack_coefficients(coef: &CountryCoefficients) -> DMatrix<f64> {
    let n_eq = coef.a0.len();
    let p = 2 + coef.phi.ncols() + 2 * coef.lambda0.ncols() + 2 * coef.psi0.ncols();
    let mut beta = DMatrix::zeros(p, n_eq);
    let mut c = 0;
    beta.row_mut(c).copy_from(&coef.a0.transpose());
    c += 1;
    beta.row_mut(c).copy_from(&coef.a1.transpose());
    c += 1;
    for block in [
        &coef.phi,
        &coef.lambda0,
        &coef.lambda1,
        &coef.psi0,
        &coef.psi1,
    ] {
        beta.rows_mut(c, block.ncols())
            .copy_from(&block.transpose());
        c += block.ncols();
    }
    beta
}
