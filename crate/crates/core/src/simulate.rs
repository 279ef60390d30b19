//! Synthetic ensembles and the Monte Carlo experiments.
//!
//! Noise is drawn from ChaCha8 seeded with the configured 64-bit seed, one
//! stream per draw index (`set_stream(draw)`), so each draw is reproducible
//! on its own and parallel runs match serial ones. Entries are generated
//! column by column.

use std::time::Instant;

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    eigh, frobenius_loss, oracle_cov_eigs_diag, oracle_prec_eigs_diag, prial, rotation_invariant,
    weighted_sample_cov, EigenSystem, EstimatorMatrix,
};
use crate::fixedpoint::{support_bounds, SolverOptions};
use crate::shrinkage::{cumulative_f, intensity_table, IntensityTable, DENSITY_FLOOR};
use crate::spectra::{finite_weights, DiracMixture, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    #[serde(rename = "t")]
    StudentT { nu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian(seed: u64) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            seed,
        }
    }

    pub fn student_t(nu: f64, seed: u64) -> Result<Self> {
        let s = Self {
            kind: NoiseKind::StudentT { nu },
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            NoiseKind::StudentT { nu } if !(nu.is_finite() && nu > 2.0) => Err(Error::InvalidParameter(format!(
                "t noise needs nu > 2 for unit variance, got {nu}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Unit-variance `n × N` noise matrix for draw 0.
pub fn sample_noise(spec: &NoiseSpec, n: usize, big_n: usize) -> Result<Mat<f64>> {
    sample_noise_draw(spec, n, big_n, 0)
}

/// Unit-variance `n × N` noise matrix from stream `draw` of the seeded generator.
pub fn sample_noise_draw(spec: &NoiseSpec, n: usize, big_n: usize, draw: u64) -> Result<Mat<f64>> {
    spec.validate()?;
    if n == 0 || big_n == 0 {
        return Err(Error::InvalidParameter("noise dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(draw);
    let len = n * big_n;
    let data: Vec<f64> = match spec.kind {
        NoiseKind::Gaussian => (0..len).map(|_| StandardNormal.sample(&mut rng)).collect(),
        NoiseKind::StudentT { nu } => {
            let t = StudentT::new(nu).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let scale = ((nu - 2.0) / nu).sqrt();
            (0..len).map(|_| scale * t.sample(&mut rng)).collect()
        }
    };
    Ok(Mat::from_fn(n, big_n, |i, j| data[j * n + i]))
}

/// Quantile realization `τ_i = H⁻¹((i - 1/2)/n)`, returned in decreasing order.
pub fn true_cov_from_h(h: &DiracMixture, n: usize) -> Vec<f64> {
    (1..=n).rev().map(|i| h.quantile((i as f64 - 0.5) / n as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub n: usize,
    pub noise: NoiseSpec,
    pub n_mc: usize,
    pub lambda_grid_size: usize,
}

impl ExperimentConfig {
    /// Sample count `N = round(n / c)`.
    pub fn big_n(&self) -> usize {
        (self.n as f64 / self.model.c).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.big_n() < 2 {
            return Err(Error::InvalidParameter(format!(
                "need n >= 2 and N >= 2, got n = {}, N = {}",
                self.n,
                self.big_n()
            )));
        }
        if self.n_mc == 0 || self.lambda_grid_size == 0 {
            return Err(Error::InvalidParameter("n_mc and lambda_grid_size must be positive".into()));
        }
        self.noise.validate()
    }

    /// The model at the realized ratio `n / N`.
    pub fn finite_model(&self) -> Result<ModelConfig> {
        self.model.with_c(self.n as f64 / self.big_n() as f64)
    }
}

/// Draw-level quantities shared by the experiments.
struct Draw {
    tau: Vec<f64>,
    b: EstimatorMatrix,
    eig: EigenSystem,
}

fn make_draw(config: &ExperimentConfig, tau: &[f64], w: &[f64], draw: u64) -> Result<Draw> {
    let z = sample_noise_draw(&config.noise, config.n, config.big_n(), draw)?;
    let y = Mat::from_fn(config.n, z.ncols(), |i, j| tau[i].sqrt() * z[(i, j)]);
    let b = weighted_sample_cov(y.as_ref(), w)?;
    let eig = eigh(&b)?;
    Ok(Draw {
        tau: tau.to_vec(),
        b,
        eig,
    })
}

/// Intensities at every sample eigenvalue, in the eigensystem's (decreasing) order.
fn intensities_at(model: &ModelConfig, values: &[f64], opts: &SolverOptions) -> Result<IntensityTable> {
    let increasing: Vec<f64> = values.iter().rev().copied().collect();
    if increasing.iter().any(|l| *l <= 0.0) {
        return Err(Error::Domain("sample covariance is singular".into()));
    }
    intensity_table(model, &increasing, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorLosses {
    pub sample: Vec<f64>,
    pub oracle: Vec<f64>,
    pub asymptotic: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrialValues {
    pub sample: f64,
    pub oracle: f64,
    pub asymptotic: f64,
}

impl EstimatorLosses {
    fn prials(&self) -> Result<PrialValues> {
        Ok(PrialValues {
            sample: prial(&self.sample, &self.sample)?,
            oracle: prial(&self.sample, &self.oracle)?,
            asymptotic: prial(&self.sample, &self.asymptotic)?,
        })
    }

    /// Ratio of the asymptotic-formula PRIAL to the oracle PRIAL.
    pub fn ratio(p: &PrialValues) -> f64 {
        p.asymptotic / p.oracle
    }
}

/// Frobenius losses and PRIALs of the sample, oracle and asymptotic estimators
/// for the covariance (against `Σ`) and the precision (against `Σ⁻¹`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrialReport {
    pub config: ExperimentConfig,
    pub big_n: usize,
    pub c_effective: f64,
    pub covariance: EstimatorLosses,
    pub precision: EstimatorLosses,
    pub prial_covariance: PrialValues,
    pub prial_precision: PrialValues,
    #[serde(skip)]
    pub seconds: f64,
}

type DrawLosses = ([f64; 3], [f64; 3]);

fn draw_losses(config: &ExperimentConfig, model: &ModelConfig, tau: &[f64], w: &[f64], draw: u64, opts: &SolverOptions) -> Result<DrawLosses> {
    let d = make_draw(config, tau, w, draw)?;
    let u = d.eig.vectors.as_ref();
    let sigma = EstimatorMatrix::from_diagonal(&d.tau);
    let inv_tau: Vec<f64> = d.tau.iter().map(|t| 1.0 / t).collect();
    let sigma_inv = EstimatorMatrix::from_diagonal(&inv_tau);
    let table = intensities_at(model, &d.eig.values, opts)?;
    let n = d.eig.values.len();
    let h: Vec<f64> = (0..n).map(|i| table.h_vals[n - 1 - i]).collect();
    let t: Vec<f64> = (0..n).map(|i| table.t_vals[n - 1 - i]).collect();

    let loss = |est: &EstimatorMatrix, target: &EstimatorMatrix| frobenius_loss(est.as_ref(), target.as_ref());
    let oracle_cov = rotation_invariant(u, &oracle_cov_eigs_diag(u, &d.tau)?)?;
    let asym_cov = rotation_invariant(u, &h)?;
    let inv_sample: Vec<f64> = d.eig.values.iter().map(|l| 1.0 / l).collect();
    let sample_prec = rotation_invariant(u, &inv_sample)?;
    let oracle_prec = rotation_invariant(u, &oracle_prec_eigs_diag(u, &d.tau)?)?;
    let asym_prec = rotation_invariant(u, &t)?;
    Ok((
        [loss(&d.b, &sigma)?, loss(&oracle_cov, &sigma)?, loss(&asym_cov, &sigma)?],
        [
            loss(&sample_prec, &sigma_inv)?,
            loss(&oracle_prec, &sigma_inv)?,
            loss(&asym_prec, &sigma_inv)?,
        ],
    ))
}

/// Monte Carlo PRIAL experiment. Asymptotic intensities are evaluated at each
/// sample eigenvalue with the model at the realized ratio `n / N`.
pub fn run_prial(config: &ExperimentConfig, opts: &SolverOptions) -> Result<PrialReport> {
    let start = Instant::now();
    config.validate()?;
    config.model.require_subunit()?;
    let model = config.finite_model()?;
    model.require_subunit()?;
    let big_n = config.big_n();
    let tau = true_cov_from_h(&config.model.h, config.n);
    let w = finite_weights(&config.model.d, big_n)?;
    let per_draw: Vec<DrawLosses> = (0..config.n_mc as u64)
        .into_par_iter()
        .map(|draw| draw_losses(config, &model, &tau, &w, draw, opts))
        .collect::<Result<_>>()?;
    let column = |k: usize, prec: bool| -> Vec<f64> {
        per_draw.iter().map(|(c, p)| if prec { p[k] } else { c[k] }).collect()
    };
    let covariance = EstimatorLosses {
        sample: column(0, false),
        oracle: column(1, false),
        asymptotic: column(2, false),
    };
    let precision = EstimatorLosses {
        sample: column(0, true),
        oracle: column(1, true),
        asymptotic: column(2, true),
    };
    Ok(PrialReport {
        config: config.clone(),
        big_n,
        c_effective: model.c,
        prial_covariance: covariance.prials()?,
        prial_precision: precision.prials()?,
        covariance,
        precision,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistogramTarget {
    Covariance,
    Precision,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_center: f64,
    pub empirical: f64,
    /// Limiting density at the bin center.
    pub theoretical: f64,
    /// Limiting density averaged over the bin.
    pub theoretical_bin_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub config: ExperimentConfig,
    pub target: HistogramTarget,
    pub bin_width: f64,
    pub bins: Vec<HistogramBin>,
    /// `max_k |empirical_k - theoretical_bin_mean_k|`.
    pub sup_deviation: f64,
    pub max_theoretical: f64,
    /// Share of the empirical weight carried by eigenvalues where `F' ≤ 1e-8`.
    pub out_of_support_mass: f64,
    /// Share of eigenvalues outside the limiting support.
    pub out_of_support_fraction: f64,
}

impl HistogramReport {
    pub fn relative_deviation(&self) -> f64 {
        self.sup_deviation / self.max_theoretical
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.relative_deviation() < threshold
    }
}

/// Points per bin used for [`HistogramBin::theoretical_bin_mean`].
const BIN_SUBDIVISIONS: usize = 8;

/// Single-draw histogram of `Δ_n` (or `Ψ_n`) against `π⁻¹ Im Θ̌^(±1)`.
///
/// Bins are equal-width on `[0.9 min λ, 1.1 max λ]`; the eigenvalue `λ_i` carries
/// weight `d̃_i / n` (or `γ̃_i / n`) and bin masses are divided by the bin width.
pub fn delta_histogram(
    config: &ExperimentConfig,
    bins: usize,
    target: HistogramTarget,
    opts: &SolverOptions,
) -> Result<HistogramReport> {
    config.validate()?;
    config.model.require_subunit()?;
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be positive".into()));
    }
    let model = config.finite_model()?;
    model.require_subunit()?;
    let tau = true_cov_from_h(&config.model.h, config.n);
    let w = finite_weights(&config.model.d, config.big_n())?;
    let d = make_draw(config, &tau, &w, 0)?;
    let u = d.eig.vectors.as_ref();
    let oracle = match target {
        HistogramTarget::Covariance => oracle_cov_eigs_diag(u, &d.tau)?,
        HistogramTarget::Precision => oracle_prec_eigs_diag(u, &d.tau)?,
    };
    let n = config.n as f64;
    let values = &d.eig.values;
    let (lmin, lmax) = (values[values.len() - 1], values[0]);
    if lmin <= 0.0 {
        return Err(Error::Domain("sample covariance is singular".into()));
    }
    let (lo, hi) = (0.9 * lmin, 1.1 * lmax);
    let width = (hi - lo) / bins as f64;
    let mut mass = vec![0.0; bins];
    for (l, g) in values.iter().zip(&oracle) {
        let k = (((l - lo) / width) as usize).min(bins - 1);
        mass[k] += g / n;
    }

    let fine: Vec<f64> = (0..bins * BIN_SUBDIVISIONS)
        .map(|k| lo + width * (k as f64 + 0.5) / BIN_SUBDIVISIONS as f64)
        .collect();
    let centers: Vec<f64> = (0..bins).map(|k| lo + width * (k as f64 + 0.5)).collect();
    let pick = |t: &IntensityTable| match target {
        HistogramTarget::Covariance => t.delta_density.clone(),
        HistogramTarget::Precision => t.psi_density.clone(),
    };
    let at_centers = pick(&intensity_table(&model, &centers, opts)?);
    let at_fine = pick(&intensity_table(&model, &fine, opts)?);

    let table: Vec<HistogramBin> = (0..bins)
        .map(|k| HistogramBin {
            bin_center: centers[k],
            empirical: mass[k] / width,
            theoretical: at_centers[k],
            theoretical_bin_mean: at_fine[k * BIN_SUBDIVISIONS..(k + 1) * BIN_SUBDIVISIONS]
                .iter()
                .sum::<f64>()
                / BIN_SUBDIVISIONS as f64,
        })
        .collect();
    let sup_deviation = table
        .iter()
        .map(|b| (b.empirical - b.theoretical_bin_mean).abs())
        .fold(0.0, f64::max);
    let max_theoretical = table.iter().map(|b| b.theoretical_bin_mean).fold(0.0, f64::max);

    let at_eigs = intensities_at(&model, values, opts)?;
    let m = values.len();
    let outside: Vec<bool> = (0..m).map(|i| at_eigs.f_density[m - 1 - i] <= DENSITY_FLOOR).collect();
    let total: f64 = oracle.iter().sum();
    let out_mass: f64 = oracle.iter().zip(&outside).filter(|(_, o)| **o).fold(0.0, |acc, (g, _)| acc + g);
    Ok(HistogramReport {
        config: config.clone(),
        target,
        bin_width: width,
        bins: table,
        sup_deviation,
        max_theoretical,
        out_of_support_mass: out_mass / total,
        out_of_support_fraction: outside.iter().filter(|o| **o).count() as f64 / m as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub lambda: f64,
    pub f_density: f64,
}

/// Sample spectrum of one draw with the limiting density on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsdReport {
    pub config: ExperimentConfig,
    /// Sample eigenvalues, increasing.
    pub eigenvalues: Vec<f64>,
    pub grid: Vec<DensityPoint>,
    /// Kolmogorov distance between the e.s.d. and the limiting cdf.
    pub ks_distance: f64,
}

/// Draws one sample covariance and compares its spectrum with the limiting law
/// on `lambda_grid_size` points spanning `[0.9 min λ, 1.1 max λ]` and the
/// support bounds. For `c > 1` the limiting law carries an atom `1 - 1/c` at zero.
pub fn esd_report(config: &ExperimentConfig, opts: &SolverOptions) -> Result<EsdReport> {
    config.validate()?;
    let model = config.finite_model()?;
    let tau = true_cov_from_h(&config.model.h, config.n);
    let w = finite_weights(&config.model.d, config.big_n())?;
    let d = make_draw(config, &tau, &w, 0)?;
    let mut eigenvalues = d.eig.values.clone();
    eigenvalues.reverse();
    let lmax = eigenvalues[eigenvalues.len() - 1];
    let positive_min = eigenvalues
        .iter()
        .copied()
        .find(|l| *l > 1e-10 * lmax)
        .unwrap_or(lmax);
    let (slo, shi) = support_bounds(&model);
    let lo = 0.9 * positive_min.min(if slo > 0.0 { slo } else { positive_min });
    let hi = 1.1 * lmax.max(shi);
    let k = config.lambda_grid_size.max(2);
    let grid: Vec<f64> = (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect();

    let solver = crate::fixedpoint::FixedPointSolver::new(&model, opts)?;
    let f: Vec<f64> = grid
        .par_iter()
        .map(|&l| solver.boundary(l).map(|b| b.density()))
        .collect::<Result<_>>()?;
    let atom = (1.0 - 1.0 / model.c).max(0.0);
    let table = IntensityTable {
        lambdas: grid.clone(),
        x_check: vec![],
        m_check: vec![],
        f_density: f.clone(),
        h_vals: vec![],
        t_vals: vec![],
        delta_density: vec![],
        psi_density: vec![],
        flagged: vec![],
    };
    // limiting cdf, with the continuous part renormalized to 1 - atom against
    // trapezoid error
    let continuous = cumulative_f(&table, hi);
    let cdf = |x: f64| -> f64 {
        if x < lo {
            return if x >= 0.0 { atom } else { 0.0 };
        }
        atom + (1.0 - atom) * cumulative_f(&table, x) / continuous
    };
    let m = eigenvalues.len() as f64;
    let ks_distance = eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let f = cdf(l);
            (f - i as f64 / m).abs().max((f - (i + 1) as f64 / m).abs())
        })
        .fold(0.0, f64::max);
    Ok(EsdReport {
        config: config.clone(),
        eigenvalues,
        grid: grid.iter().zip(&f).map(|(&lambda, &f_density)| DensityPoint { lambda, f_density }).collect(),
        ks_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{bai_silverstein_h, WeightLaw};

    fn moments(m: &Mat<f64>) -> (f64, f64) {
        let k = (m.nrows() * m.ncols()) as f64;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                s += m[(i, j)];
                s2 += m[(i, j)] * m[(i, j)];
            }
        }
        let mean = s / k;
        (mean, s2 / k - mean * mean)
    }

    #[test]
    fn noise_moments_and_determinism() {
        let g = sample_noise(&NoiseSpec::gaussian(1), 1000, 1000).unwrap();
        let (mean, var) = moments(&g);
        assert!(mean.abs() < 5e-3 && (var - 1.0).abs() < 1e-2, "{mean} {var}");
        assert_eq!(g, sample_noise(&NoiseSpec::gaussian(1), 1000, 1000).unwrap());
        assert_ne!(g, sample_noise_draw(&NoiseSpec::gaussian(1), 1000, 1000, 1).unwrap());

        let t = sample_noise(&NoiseSpec::student_t(12.0, 2).unwrap(), 1000, 1000).unwrap();
        let (_, var) = moments(&t);
        assert!((var - 1.0).abs() < 1e-2, "{var}");

        assert!(NoiseSpec::student_t(2.0, 0).is_err());
        assert!(sample_noise(&NoiseSpec::gaussian(0), 0, 3).is_err());
    }

    #[test]
    fn quantile_realization_examples() {
        let mut tau = true_cov_from_h(&bai_silverstein_h(), 10);
        assert!(tau.windows(2).all(|w| w[0] >= w[1]));
        tau.reverse();
        assert_eq!(tau, vec![1.0, 1.0, 3.0, 3.0, 3.0, 3.0, 10.0, 10.0, 10.0, 10.0]);
        assert_eq!(true_cov_from_h(&DiracMixture::point(5.0).unwrap(), 7), vec![5.0; 7]);
        assert_eq!(true_cov_from_h(&bai_silverstein_h(), 1), vec![3.0]);
    }

    fn config(n: usize, c: f64, alpha: f64, n_mc: usize) -> ExperimentConfig {
        ExperimentConfig {
            model: ModelConfig::new(bai_silverstein_h(), WeightLaw::ewma(alpha).unwrap(), c).unwrap(),
            n,
            noise: NoiseSpec::gaussian(7),
            n_mc,
            lambda_grid_size: 128,
        }
    }

    #[test]
    fn prial_report_properties() {
        let cfg = config(60, 0.5, 2.0, 4);
        let opts = SolverOptions::default();
        let r = run_prial(&cfg, &opts).unwrap();
        assert_eq!(r.big_n, 120);
        assert_eq!(r.prial_covariance.sample, 0.0);
        assert_eq!(r.prial_precision.sample, 0.0);
        for l in [&r.covariance, &r.precision] {
            for k in 0..4 {
                assert!(l.oracle[k] <= l.sample[k] && l.oracle[k] <= l.asymptotic[k]);
            }
        }
        assert!(r.prial_covariance.oracle > 0.0 && r.prial_covariance.oracle <= 1.0);
        let again = run_prial(&cfg, &opts).unwrap();
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
        assert!(run_prial(&config(60, 1.5, 2.0, 1), &opts).is_err());
    }

    #[test]
    fn single_atom_histogram_matches_density() {
        let cfg = ExperimentConfig {
            model: ModelConfig::new(DiracMixture::point(1.0).unwrap(), WeightLaw::Standard, 0.25).unwrap(),
            n: 400,
            noise: NoiseSpec::gaussian(3),
            n_mc: 1,
            lambda_grid_size: 64,
        };
        let r = delta_histogram(&cfg, 20, HistogramTarget::Covariance, &SolverOptions::default()).unwrap();
        // h ≡ 1 and d̃ ≡ 1: the histogram is the plain e.s.d. histogram
        let total: f64 = r.bins.iter().map(|b| b.empirical * r.bin_width).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(r.passes(0.25), "relative deviation {}", r.relative_deviation());
    }

    #[test]
    fn esd_of_marcenko_pastur_sits_in_bulk() {
        let cfg = ExperimentConfig {
            model: ModelConfig::new(DiracMixture::point(1.0).unwrap(), WeightLaw::Standard, 0.25).unwrap(),
            n: 400,
            noise: NoiseSpec::gaussian(5),
            n_mc: 1,
            lambda_grid_size: 200,
        };
        let r = esd_report(&cfg, &SolverOptions::default()).unwrap();
        assert!(r.eigenvalues[0] > 0.25 - 0.05 && *r.eigenvalues.last().unwrap() < 2.25 + 0.05);
        assert!(r.ks_distance < 0.05, "{}", r.ks_distance);
    }
}
