//! Weighted sample covariance, eigendecomposition and rotation-invariant estimators.

use std::io::{BufRead, BufReader, Read, Write};

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Absolute symmetry tolerance, scaled by `max(1, max |a_ij|)`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Dense real symmetric `n × n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorMatrix(Mat<f64>);

impl EstimatorMatrix {
    pub fn new(m: Mat<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        let mut scale: f64 = 1.0;
        let mut asym: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                let a = m[(i, j)];
                if !a.is_finite() {
                    return Err(Error::InvalidParameter(format!("non-finite entry at ({i}, {j})")));
                }
                scale = scale.max(a.abs());
                asym = asym.max((a - m[(j, i)]).abs());
            }
        }
        if asym > SYMMETRY_TOLERANCE * scale {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self(m))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self(Mat::from_fn(n, n, |i, j| if i == j { d[i] } else { 0.0 }))
    }

    /// Averages `m` with its transpose.
    fn symmetrized(m: Mat<f64>) -> Self {
        let n = m.nrows();
        Self(Mat::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)])))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_ref(&self) -> MatRef<'_, f64> {
        self.0.as_ref()
    }

    pub fn into_inner(self) -> Mat<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        (0..self.n()).map(|i| self.0[(i, i)]).sum()
    }
}

/// Eigenpairs with `values` decreasing; column `i` of `vectors` pairs with `values[i]`.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

impl EigenSystem {
    pub fn reconstruct(&self) -> EstimatorMatrix {
        rotation_invariant(self.vectors.as_ref(), &self.values).expect("consistent dimensions")
    }
}

/// `B = (1/N) Y diag(w) Yᵀ` for an `n × N` matrix `Y`. Weights must be nonnegative.
pub fn weighted_sample_cov(y: MatRef<'_, f64>, w: &[f64]) -> Result<EstimatorMatrix> {
    let (n, big_n) = (y.nrows(), y.ncols());
    if w.len() != big_n {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} observations",
            w.len(),
            big_n
        )));
    }
    if big_n == 0 || n == 0 {
        return Err(Error::DimensionMismatch("empty data matrix".into()));
    }
    if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidParameter(format!("weights must be nonnegative, got {bad}")));
    }
    let scale = 1.0 / big_n as f64;
    let yw = Mat::from_fn(n, big_n, |i, j| y[(i, j)] * w[j] * scale);
    Ok(EstimatorMatrix::symmetrized(&yw * y.transpose()))
}

/// Symmetric eigendecomposition with eigenvalues in decreasing order.
pub fn eigh(m: &EstimatorMatrix) -> Result<EigenSystem> {
    let evd = m.as_ref().self_adjoint_eigen(Side::Lower).map_err(|_| Error::Eigen)?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let n = m.n();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep the solver's order
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    Ok(EigenSystem {
        values: order.iter().map(|&k| s[k]).collect(),
        vectors: Mat::from_fn(n, n, |i, j| u[(i, order[j])]),
    })
}

fn check_square(u: MatRef<'_, f64>, sigma: MatRef<'_, f64>) -> Result<()> {
    if u.nrows() != u.ncols() || sigma.nrows() != sigma.ncols() || u.nrows() != sigma.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "basis {}x{} against matrix {}x{}",
            u.nrows(),
            u.ncols(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    Ok(())
}

fn column_dots(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Vec<f64> {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)] * b[(i, j)]).sum())
        .collect()
}

/// Oracle covariance eigenvalues `d̃_i = u_iᵀ Σ u_i`.
pub fn oracle_cov_eigs(u: MatRef<'_, f64>, sigma: MatRef<'_, f64>) -> Result<Vec<f64>> {
    check_square(u, sigma)?;
    let su = sigma * u;
    Ok(column_dots(u, su.as_ref()))
}

/// Oracle precision eigenvalues `γ̃_i = u_iᵀ Σ⁻¹ u_i`.
pub fn oracle_prec_eigs(u: MatRef<'_, f64>, sigma: MatRef<'_, f64>) -> Result<Vec<f64>> {
    check_square(u, sigma)?;
    let llt = sigma
        .llt(Side::Lower)
        .map_err(|_| Error::Singular("covariance is not positive definite".into()))?;
    let su = llt.solve(u);
    Ok(column_dots(u, su.as_ref()))
}

fn check_diag(u: MatRef<'_, f64>, d: &[f64]) -> Result<()> {
    if u.nrows() != u.ncols() || u.nrows() != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "basis {}x{} against {} diagonal entries",
            u.nrows(),
            u.ncols(),
            d.len()
        )));
    }
    Ok(())
}

/// [`oracle_cov_eigs`] for a diagonal `Σ = diag(sigma)`.
pub fn oracle_cov_eigs_diag(u: MatRef<'_, f64>, sigma: &[f64]) -> Result<Vec<f64>> {
    check_diag(u, sigma)?;
    Ok((0..u.ncols())
        .map(|j| (0..u.nrows()).map(|i| sigma[i] * u[(i, j)] * u[(i, j)]).sum())
        .collect())
}

/// [`oracle_prec_eigs`] for a diagonal `Σ = diag(sigma)`.
pub fn oracle_prec_eigs_diag(u: MatRef<'_, f64>, sigma: &[f64]) -> Result<Vec<f64>> {
    check_diag(u, sigma)?;
    if sigma.iter().any(|s| *s <= 0.0) {
        return Err(Error::Singular("covariance is not positive definite".into()));
    }
    let inv: Vec<f64> = sigma.iter().map(|s| 1.0 / s).collect();
    oracle_cov_eigs_diag(u, &inv)
}

/// `U diag(d) Uᵀ`.
pub fn rotation_invariant(u: MatRef<'_, f64>, d: &[f64]) -> Result<EstimatorMatrix> {
    check_diag(u, d)?;
    let ud = Mat::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * d[j]);
    Ok(EstimatorMatrix::symmetrized(&ud * u.transpose()))
}

/// `‖a - b‖_F`.
pub fn frobenius_loss(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<f64> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} against {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok((a - b).norm_l2())
}

/// `1 - mean(est²) / mean(sample²)` over Monte Carlo Frobenius losses.
pub fn prial(losses_sample: &[f64], losses_est: &[f64]) -> Result<f64> {
    if losses_sample.is_empty() || losses_sample.len() != losses_est.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} sample losses against {} estimator losses",
            losses_sample.len(),
            losses_est.len()
        )));
    }
    let mean_sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    let den = mean_sq(losses_sample);
    if den == 0.0 {
        return Err(Error::ZeroDenominator("sample covariance has zero loss".into()));
    }
    Ok(1.0 - mean_sq(losses_est) / den)
}

/// Writes a matrix as CSV rows preceded by a `# rows,cols` comment line.
pub fn write_matrix_csv<W: Write>(m: MatRef<'_, f64>, mut out: W) -> Result<()> {
    writeln!(out, "# {},{}", m.nrows(), m.ncols())?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| m[(i, j)].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(input: R) -> Result<Mat<f64>> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let dims = first
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse("missing '# rows,cols' line".into()))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("bad dimension {s:?}: {e}")))
    };
    let (r, c) = dims
        .split_once(',')
        .ok_or_else(|| Error::Parse(format!("bad dimension line {first:?}")))?;
    let (rows, cols) = (parse(r)?, parse(c)?);
    let mut data = Vec::with_capacity(rows * cols);
    let mut csv = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    for record in csv.records() {
        let record = record?;
        if record.len() != cols {
            return Err(Error::Parse(format!("expected {cols} columns, got {}", record.len())));
        }
        for field in record.iter() {
            data.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad entry {field:?}: {e}")))?,
            );
        }
    }
    if data.len() != rows * cols {
        return Err(Error::Parse(format!("expected {rows} rows, got {}", data.len() / cols.max(1))));
    }
    Ok(Mat::from_fn(rows, cols, |i, j| data[i * cols + j]))
}
