//! Moment models, datasets, and sample moment means.
//!
//! A moment model supplies the moment function `g(x, θ)` (length `L_g`), its
//! Jacobian `G(x, θ) = ∂g/∂θ'` (`L_g × L_θ`), and the derivative of the
//! vectorized Jacobian `G2(x, θ) = ∂ vec{G}/∂θ'` (`(L_g·L_θ) × L_θ`). The
//! overidentified case `L_g > L_θ` is the interesting one; just-identified
//! models are allowed.
//!
//! # `G2` layout
//!
//! `vec{G}` stacks the columns of `G` (column-major), so row `i + L_g·p` of
//! `G2` is the derivative of `G[i, p]`, and `G2[(i + L_g·p, k)] =
//! ∂²g_i/∂θ_p∂θ_k`. Worked 2×2 example with `L_g = L_θ = 2`:
//!
//! ```text
//! G = [ G00 G01 ]      vec{G} = (G00, G10, G01, G11)'
//!     [ G10 G11 ]
//!
//! G2 row 0: ∂G00/∂θ'      G2 row 2: ∂G01/∂θ'
//! G2 row 1: ∂G10/∂θ'      G2 row 3: ∂G11/∂θ'
//! ```
//!
//! Built-in models ship analytic `G` and `G2`; a model built from `g` alone
//! synthesizes both by central differences with step `1e-6 · max(1, |θ_k|)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::kahan::KahanVec;
use crate::{Error, Result};

/// Default per-coordinate parameter box when a model does not give one: a
/// practically unbinding compact set.
pub const DEFAULT_DOMAIN: (f64, f64) = (-1e6, 1e6);

type EvalFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// An n×d matrix of iid observations, row per observation.
#[derive(Debug, Clone)]
pub struct Dataset {
    values: Vec<f64>,
    n: usize,
    d: usize,
    columns: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from row-major values.
    pub fn from_rows(values: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 || values.is_empty() || values.len() % d != 0 {
            return Err(Error::Dataset(format!(
                "row-major buffer of length {} does not form rows of width {}",
                values.len(),
                d
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!(
                "non-finite entry at observation {}, column {}",
                pos / d,
                pos % d
            )));
        }
        let n = values.len() / d;
        Ok(Dataset {
            values,
            n,
            d,
            columns: Vec::new(),
        })
    }

    /// Single-column convenience constructor.
    pub fn from_column(values: Vec<f64>) -> Result<Self> {
        Self::from_rows(values, 1)
    }

    /// Reads a CSV with a header row naming the columns, one observation per
    /// line. Values are parsed as decimal IEEE-754 (round-trip parsing).
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let columns: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Dataset(format!("bad CSV header: {e}")))?
            .iter()
            .map(|s| s.to_string())
            .collect();
        let d = columns.len();
        let mut values = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Dataset(format!("bad CSV record: {e}")))?;
            if record.len() != d {
                return Err(Error::Dataset(format!(
                    "observation {} has {} fields, expected {}",
                    line,
                    record.len(),
                    d
                )));
            }
            for field in record.iter() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Dataset(format!("observation {line}: cannot parse '{field}' as f64"))
                })?;
                values.push(v);
            }
        }
        let mut data = Self::from_rows(values, d)?;
        data.columns = columns;
        Ok(data)
    }

    pub fn from_csv_path(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Dataset(format!("cannot open {}: {e}", path.display())))?;
        Self::from_csv_reader(file)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    /// Gathers `rows[k] = self.row(indices[k])` into `out` (a resample
    /// buffer), reusing its allocation.
    pub fn gather_into(&self, indices: &[usize], out: &mut Vec<f64>) {
        out.clear();
        out.reserve(indices.len() * self.d);
        for &i in indices {
            out.extend_from_slice(self.row(i));
        }
    }

    /// Wraps an externally gathered buffer as a dataset view with the same
    /// width.
    pub fn from_gathered(&self, values: Vec<f64>) -> Dataset {
        let n = values.len() / self.d;
        Dataset {
            values,
            n,
            d: self.d,
            columns: self.columns.clone(),
        }
    }
}

/// A moment-condition model: `E g(X, θ) = 0` is the (possibly misspecified)
/// assumption under study.
#[derive(Clone)]
pub struct MomentModel {
    lg: usize,
    ltheta: usize,
    obs_dim: usize,
    g: EvalFn,
    jac: Option<EvalFn>,
    jac2: Option<EvalFn>,
    domain: Vec<(f64, f64)>,
}

impl std::fmt::Debug for MomentModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MomentModel")
            .field("lg", &self.lg)
            .field("ltheta", &self.ltheta)
            .field("obs_dim", &self.obs_dim)
            .field("analytic_jac", &self.jac.is_some())
            .field("analytic_jac2", &self.jac2.is_some())
            .finish()
    }
}

impl MomentModel {
    /// A model from the moment function alone. `G`/`G2` are synthesized by
    /// central differences unless analytic evaluators are attached.
    pub fn new(
        lg: usize,
        ltheta: usize,
        obs_dim: usize,
        g: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if lg < ltheta || ltheta == 0 {
            return Err(Error::argument(format!(
                "need L_g >= L_theta >= 1, got L_g={lg}, L_theta={ltheta}"
            )));
        }
        Ok(MomentModel {
            lg,
            ltheta,
            obs_dim,
            g: Arc::new(g),
            jac: None,
            jac2: None,
            domain: vec![DEFAULT_DOMAIN; ltheta],
        })
    }

    /// Attaches an analytic Jacobian writing `∂g_i/∂θ_j` into
    /// `out[i + L_g·j]`.
    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jac = Some(Arc::new(jac));
        self
    }

    /// Attaches an analytic second-derivative array writing
    /// `∂²g_i/∂θ_p∂θ_k` into `out[(i + L_g·p) + L_g·L_θ·k]`.
    pub fn with_second_jacobian(
        mut self,
        jac2: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jac2 = Some(Arc::new(jac2));
        self
    }

    /// Replaces the optimizer box bounds (inclusive).
    pub fn with_domain(mut self, domain: Vec<(f64, f64)>) -> Result<Self> {
        if domain.len() != self.ltheta || domain.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::argument("domain must give lo < hi per coordinate"));
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn lg(&self) -> usize {
        self.lg
    }

    pub fn ltheta(&self) -> usize {
        self.ltheta
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    pub fn theta_in_domain(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(&self.domain)
            .all(|(t, (lo, hi))| *t >= *lo && *t <= *hi)
    }

    /// The same model with the moment function shifted by a fixed vector:
    /// `g'(x, θ) = g(x, θ) - center`. Derivatives are unchanged. This is the
    /// recentering used by the Hall-Horowitz bootstrap.
    pub fn recentered(&self, center: &[f64]) -> MomentModel {
        assert_eq!(center.len(), self.lg);
        let base = Arc::clone(&self.g);
        let shift: Vec<f64> = center.to_vec();
        let lg = self.lg;
        MomentModel {
            lg: self.lg,
            ltheta: self.ltheta,
            obs_dim: self.obs_dim,
            g: Arc::new(move |row, theta, out| {
                base(row, theta, out);
                for i in 0..lg {
                    out[i] -= shift[i];
                }
            }),
            jac: self.jac.clone(),
            jac2: self.jac2.clone(),
            domain: self.domain.clone(),
        }
    }

    #[inline]
    pub fn eval_g(&self, row: &[f64], theta: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.lg);
        (self.g)(row, theta, out);
    }

    /// Fills the Jacobian buffer (column-major, `L_g × L_θ`), analytic when
    /// available, otherwise central differences of `g`.
    pub fn eval_jac(&self, row: &[f64], theta: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.lg * self.ltheta);
        if let Some(jac) = &self.jac {
            jac(row, theta, out);
            return;
        }
        let mut th = theta.to_vec();
        let mut plus = vec![0.0; self.lg];
        let mut minus = vec![0.0; self.lg];
        for j in 0..self.ltheta {
            let h = fd_step(theta[j]);
            th[j] = theta[j] + h;
            (self.g)(row, &th, &mut plus);
            th[j] = theta[j] - h;
            (self.g)(row, &th, &mut minus);
            th[j] = theta[j];
            for i in 0..self.lg {
                out[i + self.lg * j] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
    }

    /// Fills the `G2` buffer (column-major, `(L_g·L_θ) × L_θ`), analytic when
    /// available, otherwise central differences of the Jacobian.
    pub fn eval_jac2(&self, row: &[f64], theta: &[f64], out: &mut [f64]) {
        let rows = self.lg * self.ltheta;
        debug_assert_eq!(out.len(), rows * self.ltheta);
        if let Some(jac2) = &self.jac2 {
            jac2(row, theta, out);
            return;
        }
        let mut th = theta.to_vec();
        let mut plus = vec![0.0; rows];
        let mut minus = vec![0.0; rows];
        for k in 0..self.ltheta {
            let h = fd_step(theta[k]);
            th[k] = theta[k] + h;
            self.eval_jac(row, &th, &mut plus);
            th[k] = theta[k] - h;
            self.eval_jac(row, &th, &mut minus);
            th[k] = theta[k];
            for r in 0..rows {
                out[r + rows * k] = (plus[r] - minus[r]) / (2.0 * h);
            }
        }
    }
}

fn fd_step(theta_k: f64) -> f64 {
    1e-6 * theta_k.abs().max(1.0)
}

/// Sample means of `g`, `G`, and `G2` at one parameter value.
#[derive(Debug, Clone)]
pub struct MomentStats {
    /// `g_n(θ)`, length `L_g`.
    pub g_n: DVector<f64>,
    /// `G_n(θ)`, `L_g × L_θ`.
    pub jac_n: DMatrix<f64>,
    /// `G2_n(θ)`, `(L_g·L_θ) × L_θ`.
    pub jac2_n: DMatrix<f64>,
    /// Evaluation point.
    pub theta: DVector<f64>,
}

/// Arithmetic means of the per-observation evaluations at `θ`, accumulated
/// in observation order with compensated summation.
pub fn eval_moment_means(model: &MomentModel, data: &Dataset, theta: &[f64]) -> Result<MomentStats> {
    check_model_data(model, data)?;
    if theta.len() != model.ltheta() {
        return Err(Error::argument(format!(
            "theta has length {}, model expects {}",
            theta.len(),
            model.ltheta()
        )));
    }
    if !model.theta_in_domain(theta) {
        return Err(Error::argument("theta outside the model domain"));
    }
    let (lg, lt) = (model.lg(), model.ltheta());
    let mut g_acc = KahanVec::zeros(lg);
    let mut jac_acc = KahanVec::zeros(lg * lt);
    let mut jac2_acc = KahanVec::zeros(lg * lt * lt);
    let mut g_buf = vec![0.0; lg];
    let mut jac_buf = vec![0.0; lg * lt];
    let mut jac2_buf = vec![0.0; lg * lt * lt];
    for i in 0..data.n() {
        let row = data.row(i);
        model.eval_g(row, theta, &mut g_buf);
        if g_buf.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { what: "g", index: i });
        }
        model.eval_jac(row, theta, &mut jac_buf);
        if jac_buf.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { what: "G", index: i });
        }
        model.eval_jac2(row, theta, &mut jac2_buf);
        if jac2_buf.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { what: "G2", index: i });
        }
        g_acc.add_slice(&g_buf);
        jac_acc.add_slice(&jac_buf);
        jac2_acc.add_slice(&jac2_buf);
    }
    let n = data.n();
    Ok(MomentStats {
        g_n: DVector::from_vec(g_acc.into_mean(n)),
        jac_n: DMatrix::from_vec(lg, lt, jac_acc.into_mean(n)),
        jac2_n: DMatrix::from_vec(lg * lt, lt, jac2_acc.into_mean(n)),
        theta: DVector::from_row_slice(theta),
    })
}

/// Mean of `g` alone (no derivatives) — the optimizer line-search path.
pub fn eval_g_mean(model: &MomentModel, data: &Dataset, theta: &[f64]) -> Result<DVector<f64>> {
    let lg = model.lg();
    let mut acc = KahanVec::zeros(lg);
    let mut buf = vec![0.0; lg];
    for i in 0..data.n() {
        model.eval_g(data.row(i), theta, &mut buf);
        if buf.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { what: "g", index: i });
        }
        acc.add_slice(&buf);
    }
    Ok(DVector::from_vec(acc.into_mean(data.n())))
}

pub(crate) fn check_model_data(model: &MomentModel, data: &Dataset) -> Result<()> {
    if model.obs_dim() != data.d() {
        return Err(Error::argument(format!(
            "model expects observations of dimension {}, dataset has {}",
            model.obs_dim(),
            data.d()
        )));
    }
    Ok(())
}

/// Outcome of comparing analytic derivatives against central differences of
/// the sample moment means.
#[derive(Debug, Clone)]
pub struct DerivativeReport {
    pub max_rel_err_jac: f64,
    pub max_rel_err_jac2: f64,
    pub step: f64,
    pub tol: f64,
}

impl DerivativeReport {
    pub fn jac_ok(&self) -> bool {
        self.max_rel_err_jac <= self.tol
    }

    pub fn jac2_ok(&self) -> bool {
        self.max_rel_err_jac2 <= self.tol
    }

    pub fn all_ok(&self) -> bool {
        self.jac_ok() && self.jac2_ok()
    }
}

/// Checks `G_n` against a central difference of `g_n` and `G2_n` against a
/// central difference of `G_n`, both with the given step. Errors are scaled
/// by `max(1, |finite difference|_max)`.
pub fn check_derivatives(
    model: &MomentModel,
    data: &Dataset,
    theta: &[f64],
    step: f64,
    tol: f64,
) -> Result<DerivativeReport> {
    if step <= 0.0 {
        return Err(Error::argument("derivative check step must be positive"));
    }
    let interior = theta.iter().zip(model.domain()).all(|(t, (lo, hi))| {
        *t - step >= *lo && *t + step <= *hi
    });
    if !interior {
        return Err(Error::argument(
            "theta must be interior to the domain by at least the step",
        ));
    }
    let stats = eval_moment_means(model, data, theta)?;
    let (lg, lt) = (model.lg(), model.ltheta());
    let mut th = theta.to_vec();

    let mut fd_jac = DMatrix::zeros(lg, lt);
    for j in 0..lt {
        th[j] = theta[j] + step;
        let plus = eval_g_mean(model, data, &th)?;
        th[j] = theta[j] - step;
        let minus = eval_g_mean(model, data, &th)?;
        th[j] = theta[j];
        for i in 0..lg {
            fd_jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }

    let mut fd_jac2 = DMatrix::zeros(lg * lt, lt);
    for k in 0..lt {
        th[k] = theta[k] + step;
        let plus = eval_moment_means(model, data, &th)?;
        th[k] = theta[k] - step;
        let minus = eval_moment_means(model, data, &th)?;
        th[k] = theta[k];
        for r in 0..lg * lt {
            // column-major over (i, p): r = i + lg*p
            let (i, p) = (r % lg, r / lg);
            fd_jac2[(r, k)] = (plus.jac_n[(i, p)] - minus.jac_n[(i, p)]) / (2.0 * step);
        }
    }

    let scale_jac = fd_jac.amax().max(1.0);
    let scale_jac2 = fd_jac2.amax().max(1.0);
    Ok(DerivativeReport {
        max_rel_err_jac: (stats.jac_n - fd_jac).amax() / scale_jac,
        max_rel_err_jac2: (stats.jac2_n - fd_jac2).amax() / scale_jac2,
        step,
        tol,
    })
}

// ---------------------------------------------------------------------------
// Built-in models
// ---------------------------------------------------------------------------

/// Just-identified sample-mean model: `g(x, θ) = x - θ`, one parameter per
/// column.
pub fn mean_model(dim: usize) -> MomentModel {
    let model = MomentModel::new(dim, dim, dim, move |row, theta, out| {
        for i in 0..dim {
            out[i] = row[i] - theta[i];
        }
    })
    .expect("mean model dims");
    model
        .with_jacobian(move |_row, _theta, out| {
            out.fill(0.0);
            for i in 0..dim {
                out[i + dim * i] = -1.0;
            }
        })
        .with_second_jacobian(|_row, _theta, out| out.fill(0.0))
}

/// Combining-data model: observations `(Y, Z)`, parameter the mean of `Z`,
/// with the extra (possibly wrong) restriction `E Y = 0`:
/// `g(X, θ) = (Y, Z - θ)'`.
pub fn combining_data_model() -> MomentModel {
    MomentModel::new(2, 1, 2, |row, theta, out| {
        out[0] = row[0];
        out[1] = row[1] - theta[0];
    })
    .expect("combining-data dims")
    .with_jacobian(|_row, _theta, out| {
        out[0] = 0.0;
        out[1] = -1.0;
    })
    .with_second_jacobian(|_row, _theta, out| out.fill(0.0))
}

/// Linear instrumental-variables model: observations `(y, x, z1, z2)`,
/// scalar coefficient β, moments `g(X, β) = (z1(y - xβ), z2(y - xβ))'`.
pub fn linear_iv_model() -> MomentModel {
    MomentModel::new(2, 1, 4, |row, theta, out| {
        let resid = row[0] - row[1] * theta[0];
        out[0] = row[2] * resid;
        out[1] = row[3] * resid;
    })
    .expect("linear IV dims")
    .with_jacobian(|row, _theta, out| {
        out[0] = -row[2] * row[1];
        out[1] = -row[3] * row[1];
    })
    .with_second_jacobian(|_row, _theta, out| out.fill(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_model_moment_means() {
        let model = mean_model(1);
        let data = Dataset::from_column(vec![1.0, 2.0, 3.0]).unwrap();
        let stats = eval_moment_means(&model, &data, &[2.0]).unwrap();
        assert_eq!(stats.g_n[0], 0.0);
        assert_eq!(stats.jac_n[(0, 0)], -1.0);
        assert_eq!(stats.jac2_n[(0, 0)], 0.0);
    }

    #[test]
    fn combining_data_hand_arithmetic() {
        let model = combining_data_model();
        let data =
            Dataset::from_rows(vec![1.0, 2.0, 0.0, 0.0, 2.0, 4.0], 2).unwrap();
        let stats = eval_moment_means(&model, &data, &[0.0]).unwrap();
        assert_eq!(stats.g_n[0], 1.0);
        assert_eq!(stats.g_n[1], 2.0);
        assert_eq!(stats.jac_n[(0, 0)], 0.0);
        assert_eq!(stats.jac_n[(1, 0)], -1.0);
    }

    #[test]
    fn boundary_theta_is_allowed() {
        let model = mean_model(1).with_domain(vec![(-1.0, 1.0)]).unwrap();
        let data = Dataset::from_column(vec![0.5]).unwrap();
        assert!(eval_moment_means(&model, &data, &[1.0]).is_ok());
        assert!(eval_moment_means(&model, &data, &[1.0 + 1e-9]).is_err());
    }

    #[test]
    fn permutation_leaves_means_unchanged() {
        let model = combining_data_model();
        let rows = [[0.3, -1.2], [2.0, 0.7], [-0.5, 0.9], [1.1, 1.3]];
        let fwd: Vec<f64> = rows.iter().flatten().copied().collect();
        let rev: Vec<f64> = rows.iter().rev().flatten().copied().collect();
        let a = eval_moment_means(
            &model,
            &Dataset::from_rows(fwd, 2).unwrap(),
            &[0.4],
        )
        .unwrap();
        let b = eval_moment_means(
            &model,
            &Dataset::from_rows(rev, 2).unwrap(),
            &[0.4],
        )
        .unwrap();
        assert!((a.g_n - b.g_n).amax() <= 1e-13);
        assert!((a.jac_n - b.jac_n).amax() <= 1e-13);
    }

    #[test]
    fn derivative_check_linear_models_exact() {
        let model = mean_model(1);
        let data = Dataset::from_column(vec![1.0, 2.0, 5.0]).unwrap();
        let report = check_derivatives(&model, &data, &[0.3], 1e-5, 1e-6).unwrap();
        // exact up to fl(θ ± h) rounding in the difference quotient
        assert!(report.max_rel_err_jac <= 1e-11);
        assert!(report.max_rel_err_jac2 <= 1e-11);
        assert!(report.all_ok());
    }

    #[test]
    fn derivative_check_linear_iv() {
        let model = linear_iv_model();
        let data = Dataset::from_rows(
            vec![
                1.0, 0.5, 0.2, -0.4, //
                -0.3, 1.1, 0.7, 0.2, //
                0.8, -0.9, 1.5, 0.3,
            ],
            4,
        )
        .unwrap();
        let report = check_derivatives(&model, &data, &[0.25], 1e-5, 1e-6).unwrap();
        assert!(report.max_rel_err_jac <= 1e-8, "{}", report.max_rel_err_jac);
        assert!(report.all_ok());
    }

    #[test]
    fn sign_flipped_jacobian_fails_with_error_two() {
        let broken = MomentModel::new(1, 1, 1, |row, theta, out| {
            out[0] = row[0] - theta[0];
        })
        .unwrap()
        .with_jacobian(|_row, _theta, out| out[0] = 1.0); // true G is -1
        let data = Dataset::from_column(vec![0.0, 1.0]).unwrap();
        let report = check_derivatives(&broken, &data, &[0.2], 1e-5, 1e-6).unwrap();
        assert!((report.max_rel_err_jac - 2.0).abs() < 1e-6);
        assert!(!report.jac_ok());
    }

    #[test]
    fn fd_synthesis_matches_analytic_on_nonlinear_model() {
        // g(x, θ) = (x - θ², x·θ)' has nonzero G2.
        let g = |row: &[f64], theta: &[f64], out: &mut [f64]| {
            out[0] = row[0] - theta[0] * theta[0];
            out[1] = row[0] * theta[0];
        };
        let fd_model = MomentModel::new(2, 1, 1, g).unwrap();
        let analytic = MomentModel::new(2, 1, 1, g)
            .unwrap()
            .with_jacobian(|row, theta, out| {
                out[0] = -2.0 * theta[0];
                out[1] = row[0];
            })
            .with_second_jacobian(|_row, _theta, out| {
                out[0] = -2.0;
                out[1] = 0.0;
            });
        let data = Dataset::from_column(vec![0.4, 1.7, -0.6]).unwrap();
        let a = eval_moment_means(&fd_model, &data, &[0.8]).unwrap();
        let b = eval_moment_means(&analytic, &data, &[0.8]).unwrap();
        assert!((a.jac_n - b.jac_n).amax() < 1e-7);
        assert!((a.jac2_n - b.jac2_n).amax() < 1e-4);
        let report = check_derivatives(&analytic, &data, &[0.8], 1e-5, 1e-6).unwrap();
        assert!(report.all_ok(), "{report:?}");
    }

    #[test]
    fn nonfinite_evaluator_names_observation() {
        let model = MomentModel::new(1, 1, 1, |row, theta, out| {
            out[0] = if row[0] == 3.0 { f64::NAN } else { row[0] - theta[0] };
        })
        .unwrap();
        let data = Dataset::from_column(vec![1.0, 3.0, 2.0]).unwrap();
        match eval_moment_means(&model, &data, &[0.0]) {
            Err(Error::Evaluation { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected evaluation error, got {other:?}"),
        }
    }

    #[test]
    fn csv_roundtrip() {
        let csv = "y,z\n1.0,2.5\n-0.25,3.5\n";
        let data = Dataset::from_csv_reader(csv.as_bytes()).unwrap();
        assert_eq!(data.n(), 2);
        assert_eq!(data.d(), 2);
        assert_eq!(data.columns(), &["y".to_string(), "z".to_string()]);
        assert_eq!(data.row(1), &[-0.25, 3.5]);
    }
}
