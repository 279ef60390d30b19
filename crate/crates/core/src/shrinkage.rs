//! Asymptotic oracle shrinkage intensities.
//!
//! With kernel moments `a_k(λ) = ∫ τ^k / |τ X̌(λ) + 1|² dH(τ)`, the covariance
//! intensity is `h = a_2 / a_1` and the precision intensity is `t = a_0 / a_1`.
//! The limiting cumulative functions `Δ(x) = ∫_{-∞}^x h dF` and `Ψ(x) = ∫ t dF`
//! have densities `π⁻¹ Im Θ̌^(1)` and `π⁻¹ Im Θ̌^(-1)`.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmath::expm1;
use crate::error::{Error, Result};
use crate::fixedpoint::{theta_g, FixedPointSolver, SolverOptions};
use crate::spectra::{DiracMixture, ModelConfig};

/// Densities at or below this value are treated as outside the support.
pub const DENSITY_FLOOR: f64 = 1e-8;

fn kernel_moments(x: Complex64, h: &DiracMixture) -> [f64; 3] {
    h.atoms().fold([0.0; 3], |[a0, a1, a2], (tau, p)| {
        let w = p / (tau * x + 1.0).norm_sqr();
        [a0 + w, a1 + w * tau, a2 + w * tau * tau]
    })
}

fn checked_ratio(num: f64, den: f64, lambda: f64) -> Result<f64> {
    let r = num / den;
    if den == 0.0 || !r.is_finite() {
        return Err(Error::DegenerateKernel { lambda });
    }
    Ok(r)
}

/// Covariance intensity `h(λ) = ∫ τ²/|τX̌+1|² dH / ∫ τ/|τX̌+1|² dH`.
pub fn h_intensity(lambda: f64, x_check: Complex64, h: &DiracMixture) -> Result<f64> {
    let [_, a1, a2] = kernel_moments(x_check, h);
    checked_ratio(a2, a1, lambda)
}

/// Precision intensity `t(λ) = ∫ 1/|τX̌+1|² dH / ∫ τ/|τX̌+1|² dH`.
pub fn t_intensity(lambda: f64, x_check: Complex64, h: &DiracMixture) -> Result<f64> {
    let [a0, a1, _] = kernel_moments(x_check, h);
    checked_ratio(a0, a1, lambda)
}

/// Closed form of `Θ̌^(1)(λ)` for the α-exponential weight law:
///
/// ```text
/// (1/(βc)) (e^{αc(1+λm̌)} - 1) / (1 - e^{-α + αc(1+λm̌)}),   β = α / (1 - e^{-α})
/// ```
pub fn ewma_theta1_closed(lambda: f64, m_check: Complex64, alpha: f64, c: f64) -> Result<Complex64> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::RequiresSubunitRatio(c));
    }
    let s = (1.0 + lambda * m_check) * (alpha * c);
    let beta = alpha / -(-alpha).exp_m1();
    let num = expm1(s);
    let den = -expm1(s - alpha);
    if den.norm() == 0.0 || !den.re.is_finite() || !den.im.is_finite() {
        return Err(Error::Singular(format!(
            "c(1 + λm̌) = 1 at lambda = {lambda}"
        )));
    }
    Ok(num / (den * beta * c))
}

/// Per-λ asymptotic quantities on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityTable {
    pub lambdas: Vec<f64>,
    pub x_check: Vec<Complex64>,
    pub m_check: Vec<Complex64>,
    pub f_density: Vec<f64>,
    pub h_vals: Vec<f64>,
    pub t_vals: Vec<f64>,
    pub delta_density: Vec<f64>,
    pub psi_density: Vec<f64>,
    /// True where `F' ≤ DENSITY_FLOOR` and `h`, `t` were extended from a neighbor.
    pub flagged: Vec<bool>,
}

/// One CSV row of an [`IntensityTable`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityRow {
    pub lambda: f64,
    pub f_density: f64,
    pub h: f64,
    pub t: f64,
    pub delta_density: f64,
    pub psi_density: f64,
    pub flagged: bool,
}

struct Point {
    x: Complex64,
    m: Complex64,
    h: f64,
    t: f64,
    delta: f64,
    psi: f64,
}

/// Solves the boundary problem at every `λ` and assembles intensities and densities.
///
/// `lambdas` must be nondecreasing and exclude zero; requires `c < 1`.
pub fn intensity_table(model: &ModelConfig, lambdas: &[f64], opts: &SolverOptions) -> Result<IntensityTable> {
    intensity_table_with_floor(model, lambdas, opts, DENSITY_FLOOR)
}

pub fn intensity_table_with_floor(
    model: &ModelConfig,
    lambdas: &[f64],
    opts: &SolverOptions,
    density_floor: f64,
) -> Result<IntensityTable> {
    model.require_subunit()?;
    if lambdas.iter().any(|l| !l.is_finite() || *l == 0.0) {
        return Err(Error::Domain("lambda grid must be finite and exclude 0".into()));
    }
    if lambdas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("lambda grid must be nondecreasing".into()));
    }
    let solver = FixedPointSolver::new(model, opts)?;
    let h = &model.h;
    let points: Vec<Point> = lambdas
        .par_iter()
        .map(|&lambda| {
            let b = solver.boundary(lambda)?;
            let z = Complex64::new(lambda, 0.0);
            let theta1 = theta_g(z, b.x_check, |t| t, h)?;
            let theta_inv = theta_g(z, b.x_check, |t| 1.0 / t, h)?;
            Ok(Point {
                x: b.x_check,
                m: b.m_check,
                h: h_intensity(lambda, b.x_check, h)?,
                t: t_intensity(lambda, b.x_check, h)?,
                delta: (theta1.im / PI).max(0.0),
                psi: (theta_inv.im / PI).max(0.0),
            })
        })
        .collect::<Result<_>>()?;

    let f_density: Vec<f64> = points.iter().map(|p| (p.m.im / PI).max(0.0)).collect();
    let flagged: Vec<bool> = f_density.iter().map(|&f| f <= density_floor).collect();
    let mut h_vals: Vec<f64> = points.iter().map(|p| p.h).collect();
    let mut t_vals: Vec<f64> = points.iter().map(|p| p.t).collect();
    let inside: Vec<usize> = (0..lambdas.len()).filter(|&i| !flagged[i]).collect();
    if !inside.is_empty() {
        for i in (0..lambdas.len()).filter(|&i| flagged[i]) {
            let k = inside.partition_point(|&j| lambdas[j] < lambdas[i]);
            let nearest = match (k.checked_sub(1).map(|k| inside[k]), inside.get(k).copied()) {
                (Some(a), Some(b)) => {
                    if lambdas[i] - lambdas[a] <= lambdas[b] - lambdas[i] {
                        a
                    } else {
                        b
                    }
                }
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => unreachable!("inside is non-empty"),
            };
            h_vals[i] = h_vals[nearest];
            t_vals[i] = t_vals[nearest];
        }
    }

    Ok(IntensityTable {
        lambdas: lambdas.to_vec(),
        x_check: points.iter().map(|p| p.x).collect(),
        m_check: points.iter().map(|p| p.m).collect(),
        f_density,
        h_vals,
        t_vals,
        delta_density: points.iter().map(|p| p.delta).collect(),
        psi_density: points.iter().map(|p| p.psi).collect(),
        flagged,
    })
}

/// Trapezoid integral of `values` over the grid up to `x`, interpolating linearly
/// inside the last cell.
fn cumulative(lambdas: &[f64], values: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for i in 1..lambdas.len() {
        let (l0, l1) = (lambdas[i - 1], lambdas[i]);
        if x <= l0 {
            break;
        }
        let (v0, v1) = (values[i - 1], values[i]);
        if x >= l1 {
            acc += 0.5 * (l1 - l0) * (v0 + v1);
        } else {
            let vx = v0 + (v1 - v0) * (x - l0) / (l1 - l0);
            acc += 0.5 * (x - l0) * (v0 + vx);
            break;
        }
    }
    acc
}

impl IntensityTable {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn rows(&self) -> Vec<IntensityRow> {
        (0..self.len())
            .map(|i| IntensityRow {
                lambda: self.lambdas[i],
                f_density: self.f_density[i],
                h: self.h_vals[i],
                t: self.t_vals[i],
                delta_density: self.delta_density[i],
                psi_density: self.psi_density[i],
                flagged: self.flagged[i],
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Vec<IntensityRow>> {
        csv::Reader::from_reader(input)
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(Error::from)
    }
}

/// `Δ(x) = ∫_{-∞}^x h dF` by the trapezoid rule on the table grid.
pub fn cumulative_delta(table: &IntensityTable, x: f64) -> f64 {
    let v: Vec<f64> = table.h_vals.iter().zip(&table.f_density).map(|(h, f)| h * f).collect();
    cumulative(&table.lambdas, &v, x)
}

/// `Ψ(x) = ∫_{-∞}^x t dF` by the trapezoid rule on the table grid.
pub fn cumulative_psi(table: &IntensityTable, x: f64) -> f64 {
    let v: Vec<f64> = table.t_vals.iter().zip(&table.f_density).map(|(t, f)| t * f).collect();
    cumulative(&table.lambdas, &v, x)
}

/// `F(x)` by the trapezoid rule on the table grid.
pub fn cumulative_f(table: &IntensityTable, x: f64) -> f64 {
    cumulative(&table.lambdas, &table.f_density, x)
}
