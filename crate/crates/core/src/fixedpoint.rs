//! Fixed-point characterization of the limiting weighted spectrum.
//!
//! For `z` in the upper half-plane, `X(z)` is the unique solution in `C+` of
//!
//! ```text
//! X = -∫ δ / (z - δ c ∫ τ / (τ X + 1) dH(τ)) dD(δ)
//! ```
//!
//! and every functional `Θ^g(z) = -(1/z) ∫ g(τ) / (τ X(z) + 1) dH(τ)` follows
//! from it; `g ≡ 1` gives the Stieltjes transform `m`.
//!
//! The solver alternates Newton steps on `x - F(x)` with damped fixed-point
//! steps `x ← (1 - γ) x + γ F(x)`. A Newton step is taken only when it stays in
//! `C+` and lowers the residual, so the damped map (a self-map of `C+`) keeps
//! the iteration inside the half-plane. Boundary values on the real axis are
//! obtained by continuation `z = λ + iη` along a decreasing `η` schedule.

use faer::MatRef;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cmath::ln_1p;
use crate::error::{Error, Result};
use crate::spectra::{unit_gauss_legendre, DiracMixture, ModelConfig, WeightLaw, DEFAULT_QUAD_NODES};

/// Consecutive non-improving steps tolerated before giving up.
const STAGNATION_LIMIT: usize = 60;
/// Damping halvings allowed when a fixed-point step raises the residual.
const MAX_HALVINGS: usize = 6;

/// How the α-exponential weight integral inside the fixed point is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EwmaKernel {
    /// Closed-form logarithmic antiderivative in the weight variable.
    Antiderivative,
    /// `quad_nodes`-point Gauss–Legendre in the uniform variable.
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub damping: f64,
    pub eta_schedule: Vec<f64>,
    pub quad_nodes: usize,
    pub ewma_kernel: EwmaKernel,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 10_000,
            damping: 0.5,
            eta_schedule: (1..=9).map(|k| 10f64.powi(-k)).collect(),
            quad_nodes: DEFAULT_QUAD_NODES,
            ewma_kernel: EwmaKernel::Antiderivative,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return bad(format!("tolerance must be positive, got {}", self.tolerance));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        if self.eta_schedule.is_empty()
            || self.eta_schedule.iter().any(|e| !(e.is_finite() && *e > 0.0))
            || self.eta_schedule.windows(2).any(|w| w[1] >= w[0])
        {
            return bad("eta schedule must be strictly decreasing and positive".into());
        }
        if self.quad_nodes == 0 {
            return bad("quad_nodes must be positive".into());
        }
        Ok(())
    }
}

/// Solution of the fixed point at one `z ∈ C+`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointSolution {
    pub z: Complex64,
    pub x: Complex64,
    pub m: Complex64,
    pub residual: f64,
    pub iterations: usize,
}

/// Limit of the solution as `z = λ + iη` approaches the real axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryValue {
    pub lambda: f64,
    pub x_check: Complex64,
    pub m_check: Complex64,
    pub eta_final: f64,
    /// Continuation stages actually solved.
    pub stages: usize,
}

impl BoundaryValue {
    /// Limiting spectral density `Im m̌(λ) / π`, clamped at zero.
    pub fn density(&self) -> f64 {
        (self.m_check.im / std::f64::consts::PI).max(0.0)
    }
}

#[derive(Debug, Clone)]
enum WeightIntegrator {
    Atoms(Vec<(f64, f64)>),
    Exponential {
        alpha: f64,
        lo: f64,
        hi: f64,
        /// Gauss–Legendre atoms in `δ`, used where the antiderivative cancels.
        fallback: Vec<(f64, f64)>,
    },
}

impl WeightIntegrator {
    fn new(d: &WeightLaw, opts: &SolverOptions) -> Result<Self> {
        Ok(match d {
            WeightLaw::Standard => WeightIntegrator::Atoms(vec![(1.0, 1.0)]),
            WeightLaw::Mixture(m) => WeightIntegrator::Atoms(m.atoms().collect()),
            WeightLaw::ExponentialAlpha { alpha } => {
                let beta = WeightLaw::ewma_beta(*alpha);
                let atoms: Vec<(f64, f64)> = unit_gauss_legendre(opts.quad_nodes)?
                    .into_iter()
                    .map(|(t, w)| (beta * (-alpha * t).exp(), w))
                    .collect();
                match opts.ewma_kernel {
                    EwmaKernel::Quadrature => WeightIntegrator::Atoms(atoms),
                    EwmaKernel::Antiderivative => {
                        let (lo, hi) = d.support();
                        WeightIntegrator::Exponential {
                            alpha: *alpha,
                            lo,
                            hi,
                            fallback: atoms,
                        }
                    }
                }
            }
        })
    }

    /// `(∫ δ/(z - δs) dD, ∫ δ²/(z - δs)² dD)`.
    fn integrals(&self, z: Complex64, s: Complex64) -> (Complex64, Complex64) {
        let atoms = |atoms: &[(f64, f64)]| {
            atoms.iter().fold(
                (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)),
                |(a, b), &(delta, p)| {
                    let r = delta / (z - delta * s);
                    (a + p * r, b + p * r * r)
                },
            )
        };
        match self {
            WeightIntegrator::Atoms(a) => atoms(a),
            WeightIntegrator::Exponential {
                alpha,
                lo,
                hi,
                fallback,
            } => {
                if (*hi * s).norm() < 1e-3 * z.norm() {
                    return atoms(fallback);
                }
                // dD(δ) = dδ / (α δ) on [lo, hi]; both z - lo·s and z - hi·s lie in the
                // closed upper half-plane when Im s ≤ 0, so the log difference is a
                // principal log of their ratio.
                let q_hi = z - *hi * s;
                let q_lo = z - *lo * s;
                let log_ratio = ln_1p((*hi - *lo) * s / q_hi);
                let first = log_ratio / (*alpha * s);
                let second = (z / q_hi - z / q_lo - log_ratio) / (*alpha * s * s);
                (first, second)
            }
        }
    }
}

/// Reusable solver for one model; precomputes the weight integrator.
#[derive(Debug, Clone)]
pub struct FixedPointSolver {
    h: DiracMixture,
    c: f64,
    weights: WeightIntegrator,
    opts: SolverOptions,
}

fn is_finite(z: Complex64) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

impl FixedPointSolver {
    pub fn new(model: &ModelConfig, opts: &SolverOptions) -> Result<Self> {
        opts.validate()?;
        Ok(Self {
            h: model.h.clone(),
            c: model.c,
            weights: WeightIntegrator::new(&model.d, opts)?,
            opts: opts.clone(),
        })
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    /// Right-hand side `F(x)` of the fixed point and its derivative `F'(x)`.
    pub fn rhs(&self, x: Complex64, z: Complex64) -> (Complex64, Complex64) {
        let (a, da) = self.h.atoms().fold(
            (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)),
            |(a, da), (tau, p)| {
                let k = tau / (tau * x + 1.0);
                (a + p * k, da - p * k * k)
            },
        );
        let s = self.c * a;
        let (i1, i2) = self.weights.integrals(z, s);
        (-i1, -i2 * self.c * da)
    }

    /// `m = -(1/z) ∫ 1 / (τ x + 1) dH`.
    pub fn stieltjes(&self, x: Complex64, z: Complex64) -> Complex64 {
        let s: Complex64 = self.h.atoms().map(|(tau, p)| p / (tau * x + 1.0)).sum();
        -s / z
    }

    /// Solves at `z ∈ C+`. When iterating from the start point stalls, the
    /// solution is continued from `z + iη` with large `η` down to `z`.
    pub fn solve(&self, z: Complex64, warm_start: Option<Complex64>) -> Result<FixedPointSolution> {
        if !is_finite(z) || z.im <= 0.0 {
            return Err(Error::Domain(format!(
                "fixed point requires Im z > 0, got z = {z}"
            )));
        }
        let x0 = warm_start
            .filter(|w| is_finite(*w) && w.im > 0.0)
            .unwrap_or(Complex64::i());
        match self.iterate(z, x0) {
            Err(Error::NotConverged { .. }) => self.continue_from_above(z),
            other => other,
        }
    }

    fn continue_from_above(&self, z: Complex64) -> Result<FixedPointSolution> {
        let mut eta = (4.0 * z.im).max(2.0 * (z.re.abs() + 1.0));
        let mut sol = self.iterate(Complex64::new(z.re, eta), Complex64::i())?;
        let mut total = sol.iterations;
        let mut ratio = 0.5;
        let mut refinements = 0;
        while eta > z.im {
            let next = (eta * ratio).max(z.im);
            match self.iterate(Complex64::new(z.re, next), sol.x) {
                Ok(s) => {
                    total += s.iterations;
                    sol = s;
                    eta = next;
                    ratio = (ratio * ratio).max(0.5);
                }
                Err(Error::NotConverged { best_residual, .. }) => {
                    refinements += 1;
                    if refinements > 60 {
                        return Err(Error::NotConverged {
                            z,
                            iterations: total,
                            best_residual,
                        });
                    }
                    ratio = ratio.sqrt();
                }
                Err(e) => return Err(e),
            }
        }
        sol.iterations = total;
        Ok(sol)
    }

    fn iterate(&self, z: Complex64, x0: Complex64) -> Result<FixedPointSolution> {
        let tol = self.opts.tolerance;
        let mut x = x0;
        let (mut fx, mut dfx) = self.rhs(x, z);
        let mut r = (x - fx).norm();
        if !r.is_finite() {
            x = Complex64::i();
            (fx, dfx) = self.rhs(x, z);
            r = (x - fx).norm();
        }
        let mut best = r;
        let mut stalled = 0;

        // evaluates a candidate, returning it only if it is a usable interior point
        let probe = |c: Complex64| -> Option<(Complex64, Complex64, Complex64, f64)> {
            if !is_finite(c) || c.im <= 0.0 {
                return None;
            }
            let (f, df) = self.rhs(c, z);
            let r = (c - f).norm();
            r.is_finite().then_some((c, f, df, r))
        };

        for iteration in 0..self.opts.max_iterations {
            if r <= tol {
                return Ok(FixedPointSolution {
                    z,
                    x,
                    m: self.stieltjes(x, z),
                    residual: r,
                    iterations: iteration,
                });
            }

            let mut next = None;
            let jac = Complex64::new(1.0, 0.0) - dfx;
            if is_finite(jac) && jac.norm() > 0.0 {
                let step = (x - fx) / jac;
                let mut scale = 1.0;
                for _ in 0..4 {
                    if let Some(cand) = probe(x - scale * step) {
                        if cand.3 < r {
                            next = Some(cand);
                            break;
                        }
                    }
                    scale *= 0.5;
                }
            }
            if next.is_none() {
                let mut gamma = self.opts.damping;
                for k in 0..=MAX_HALVINGS {
                    if let Some(cand) = probe((1.0 - gamma) * x + gamma * fx) {
                        if cand.3 < r || k == MAX_HALVINGS {
                            next = Some(cand);
                            break;
                        }
                    }
                    gamma *= 0.5;
                }
            }
            let Some((nx, nf, ndf, nr)) = next else {
                break;
            };
            (x, fx, dfx, r) = (nx, nf, ndf, nr);
            if r < best {
                best = r;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled > STAGNATION_LIMIT {
                    return Err(Error::NotConverged {
                        z,
                        iterations: iteration + 1,
                        best_residual: best,
                    });
                }
            }
        }
        if r <= tol {
            return Ok(FixedPointSolution {
                z,
                x,
                m: self.stieltjes(x, z),
                residual: r,
                iterations: self.opts.max_iterations,
            });
        }
        Err(Error::NotConverged {
            z,
            iterations: self.opts.max_iterations,
            best_residual: best,
        })
    }

    /// Continues the solution to `λ` on the real axis along the `η` schedule,
    /// warm-starting each stage from the previous one.
    pub fn boundary(&self, lambda: f64) -> Result<BoundaryValue> {
        if !lambda.is_finite() || lambda == 0.0 {
            return Err(Error::Domain(format!(
                "boundary values are defined on nonzero reals, got {lambda}"
            )));
        }
        let mut prev: Option<FixedPointSolution> = None;
        let mut before: Option<FixedPointSolution> = None;
        let mut stages = 0;
        for (stage, &eta) in self.opts.eta_schedule.iter().enumerate() {
            let sol = self
                .solve(Complex64::new(lambda, eta), prev.map(|p| p.x))
                .map_err(|e| Error::BoundaryStage {
                    lambda,
                    stage,
                    eta,
                    source: Box::new(e),
                })?;
            stages += 1;
            let converged = prev.is_some_and(|p| (sol.x - p.x).norm() <= 10.0 * self.opts.tolerance);
            before = prev.replace(sol);
            if converged {
                break;
            }
        }
        let last = prev.expect("schedule is non-empty");
        // X(λ + iη) = X̌ + O(η): one Richardson step over the last two stages
        // removes the linear term
        let x_check = match before {
            Some(b) => last.x + (last.x - b.x) * (last.z.im / (b.z.im - last.z.im)),
            None => last.x,
        };
        let z = Complex64::new(lambda, 0.0);
        Ok(BoundaryValue {
            lambda,
            x_check,
            m_check: self.stieltjes(x_check, z),
            eta_final: last.z.im,
            stages,
        })
    }
}

/// Solves for `X(z)`, `z ∈ C+`, optionally warm-started.
pub fn solve_x(
    z: Complex64,
    model: &ModelConfig,
    opts: &SolverOptions,
    warm_start: Option<Complex64>,
) -> Result<FixedPointSolution> {
    FixedPointSolver::new(model, opts)?.solve(z, warm_start)
}

/// `Θ^g(z) = -(1/z) ∫ g(τ) / (τ x + 1) dH(τ)` for a solution `x` at `z`.
pub fn theta_g<G>(z: Complex64, x: Complex64, g: G, h: &DiracMixture) -> Result<Complex64>
where
    G: Fn(f64) -> f64,
{
    if z.norm() == 0.0 {
        return Err(Error::Domain("theta_g is undefined at z = 0".into()));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (tau, p) in h.atoms() {
        let den = tau * x + 1.0;
        if den.norm() == 0.0 || !is_finite(den) {
            return Err(Error::Singular(format!("tau x + 1 vanishes at tau = {tau}")));
        }
        let gv = g(tau);
        if !gv.is_finite() {
            return Err(Error::NonFiniteIntegrand { at: tau });
        }
        acc += p * gv / den;
    }
    Ok(-acc / z)
}

/// Boundary values `X̌(λ)`, `m̌(λ)` at a nonzero real `λ`.
pub fn boundary_x(lambda: f64, model: &ModelConfig, opts: &SolverOptions) -> Result<BoundaryValue> {
    FixedPointSolver::new(model, opts)?.boundary(lambda)
}

/// Limiting spectral density `F'(λ) = max(0, Im m̌(λ) / π)`.
pub fn density_f(lambda: f64, model: &ModelConfig, opts: &SolverOptions) -> Result<f64> {
    Ok(boundary_x(lambda, model, opts)?.density())
}

/// Finite-sample `Θ^g_n(z) = (1/n) Σ_i (λ_i - z)^{-1} Σ_j |u_i·v_j|² g(τ_j)`.
///
/// Columns of `u` and `v` are the eigenvectors paired with `b_eigs` and `t_eigs`.
pub fn empirical_theta_g<G>(
    b_eigs: &[f64],
    u: MatRef<'_, f64>,
    t_eigs: &[f64],
    v: MatRef<'_, f64>,
    g: G,
    z: Complex64,
) -> Result<Complex64>
where
    G: Fn(f64) -> f64,
{
    let n = b_eigs.len();
    if t_eigs.len() != n || u.nrows() != n || u.ncols() != n || v.nrows() != n || v.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} sample and {} population eigenvalues with {}x{} and {}x{} bases",
            n,
            t_eigs.len(),
            u.nrows(),
            u.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    if z.im == 0.0 {
        return Err(Error::Domain("empirical theta_g requires Im z != 0".into()));
    }
    let overlap = u.transpose() * v;
    let gv: Vec<f64> = t_eigs.iter().map(|&t| g(t)).collect();
    let total: Complex64 = (0..n)
        .map(|i| {
            let w: f64 = (0..n).map(|j| overlap[(i, j)].powi(2) * gv[j]).sum();
            w / (b_eigs[i] - z)
        })
        .sum();
    Ok(total / n as f64)
}

/// Interval guaranteed to contain the limiting spectrum when `c < 1`:
/// `[h1 d1 (1 - √c)², h2 d2 (1 + √c)²]`.
pub fn support_bounds(model: &ModelConfig) -> (f64, f64) {
    let (d1, d2) = model.d.support();
    let r = model.c.sqrt();
    let lo = if model.c < 1.0 {
        model.h.min_location() * d1 * (1.0 - r).powi(2)
    } else {
        0.0
    };
    (lo, model.h.max_location() * d2 * (1.0 + r).powi(2))
}
