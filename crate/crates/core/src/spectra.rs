//! Population spectra and weight laws.
//!
//! The limiting spectral distribution `H` of the true covariance is a finite
//! mixture of point masses. The weight law `D` describing the diagonal weight
//! matrix is either the point mass at one (equal weighting), the α-exponential
//! law that mimics EWMA weighting, or a finite mixture of point masses.
//!
//! The α-exponential law has cdf `D(x) = 1 + ln(x / β) / α` on
//! `[β e^{-α}, β]` with `β = α / (1 - e^{-α})`, which fixes its mean at one.
//! Under the change of variables `δ = β e^{-α t}` it becomes the uniform law
//! on `t ∈ [0, 1]`, which is how [`integrate_d`] evaluates it.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Masses of a [`DiracMixture`] must sum to one within this tolerance.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Default Gauss–Legendre order for integrals against the α-exponential law.
pub const DEFAULT_QUAD_NODES: usize = 64;

/// Finite discrete probability distribution with positive atoms.
///
/// Atoms are stored in strictly increasing order; duplicate locations passed
/// to the constructor are merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRepr", into = "MixtureRepr")]
pub struct DiracMixture {
    locations: Vec<f64>,
    masses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MixtureRepr {
    locations: Vec<f64>,
    masses: Vec<f64>,
}

impl TryFrom<MixtureRepr> for DiracMixture {
    type Error = Error;
    fn try_from(r: MixtureRepr) -> Result<Self> {
        DiracMixture::new(r.locations, r.masses)
    }
}

impl From<DiracMixture> for MixtureRepr {
    fn from(m: DiracMixture) -> Self {
        MixtureRepr {
            locations: m.locations,
            masses: m.masses,
        }
    }
}

impl DiracMixture {
    pub fn new(locations: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::InvalidDistribution("mixture has no atoms".into()));
        }
        if locations.len() != masses.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} locations but {} masses",
                locations.len(),
                masses.len()
            )));
        }
        if let Some(&l) = locations.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidDistribution(format!(
                "atom location {l} is not a positive finite number"
            )));
        }
        if let Some(&m) = masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::InvalidDistribution(format!(
                "atom mass {m} is not a positive finite number"
            )));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "masses sum to {total}, expected 1"
            )));
        }

        let mut atoms: Vec<(f64, f64)> = locations.into_iter().zip(masses).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut locations = Vec::with_capacity(atoms.len());
        let mut masses: Vec<f64> = Vec::with_capacity(atoms.len());
        for (l, m) in atoms {
            if locations.last() == Some(&l) {
                *masses.last_mut().unwrap() += m;
            } else {
                locations.push(l);
                masses.push(m);
            }
        }
        Ok(Self { locations, masses })
    }

    /// Builds a mixture from nonnegative weights that are rescaled to sum to one.
    pub fn normalized(locations: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}"
            )));
        }
        Self::new(locations, weights.into_iter().map(|w| w / total).collect())
    }

    /// Point mass at `location`.
    pub fn point(location: f64) -> Result<Self> {
        Self::new(vec![location], vec![1.0])
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.locations.iter().copied().zip(self.masses.iter().copied())
    }

    pub fn min_location(&self) -> f64 {
        self.locations[0]
    }

    pub fn max_location(&self) -> f64 {
        *self.locations.last().unwrap()
    }

    /// `∫ x^k dH(x)` for any integer `k`.
    pub fn moment(&self, k: i32) -> f64 {
        self.atoms().map(|(l, m)| m * l.powi(k)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    /// Left-continuous quantile: the smallest atom whose cdf reaches `p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let mut cdf = 0.0;
        for (l, m) in self.atoms() {
            cdf += m;
            if p <= cdf + MASS_TOLERANCE {
                return l;
            }
        }
        self.max_location()
    }
}

/// Bai–Silverstein population spectrum: atoms 1, 3, 10 with masses 0.2, 0.4, 0.4.
pub fn bai_silverstein_h() -> DiracMixture {
    DiracMixture::new(vec![1.0, 3.0, 10.0], vec![0.2, 0.4, 0.4]).expect("valid preset")
}

/// Five-atom weight mixture producing an extra gap in the sample spectrum at low `c`.
pub fn five_dirac_weight_law() -> WeightLaw {
    WeightLaw::Mixture(
        DiracMixture::new(
            vec![0.337, 0.674, 2.696, 6.74, 33.7],
            vec![0.593, 0.297, 0.074, 0.030, 0.006],
        )
        .expect("valid preset"),
    )
}

/// Limiting distribution `D` of the diagonal weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightLawRepr", into = "WeightLawRepr")]
pub enum WeightLaw {
    /// Point mass at one.
    Standard,
    /// α-exponential law, the limit of EWMA weights `∝ e^{-α i / N}`.
    ExponentialAlpha { alpha: f64 },
    Mixture(DiracMixture),
}

#[derive(Serialize, Deserialize, Clone, Copy, PartialEq, Debug)]
#[serde(rename_all = "lowercase")]
enum WeightKind {
    Standard,
    Ewma,
    Mixture,
}

#[derive(Serialize, Deserialize)]
struct WeightLawRepr {
    kind: WeightKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    locations: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    masses: Option<Vec<f64>>,
}

impl TryFrom<WeightLawRepr> for WeightLaw {
    type Error = Error;
    fn try_from(r: WeightLawRepr) -> Result<Self> {
        match r.kind {
            WeightKind::Standard => Ok(WeightLaw::Standard),
            WeightKind::Ewma => {
                let alpha = r.alpha.ok_or_else(|| {
                    Error::InvalidDistribution("ewma weight law needs \"alpha\"".into())
                })?;
                WeightLaw::ewma(alpha)
            }
            WeightKind::Mixture => match (r.locations, r.masses) {
                (Some(l), Some(m)) => Ok(WeightLaw::Mixture(DiracMixture::new(l, m)?)),
                _ => Err(Error::InvalidDistribution(
                    "mixture weight law needs \"locations\" and \"masses\"".into(),
                )),
            },
        }
    }
}

impl From<WeightLaw> for WeightLawRepr {
    fn from(d: WeightLaw) -> Self {
        let empty = WeightLawRepr {
            kind: WeightKind::Standard,
            alpha: None,
            locations: None,
            masses: None,
        };
        match d {
            WeightLaw::Standard => empty,
            WeightLaw::ExponentialAlpha { alpha } => WeightLawRepr {
                kind: WeightKind::Ewma,
                alpha: Some(alpha),
                ..empty
            },
            WeightLaw::Mixture(m) => WeightLawRepr {
                kind: WeightKind::Mixture,
                locations: Some(m.locations),
                masses: Some(m.masses),
                ..empty
            },
        }
    }
}

impl WeightLaw {
    pub fn ewma(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "alpha must be positive and finite, got {alpha}"
            )));
        }
        Ok(WeightLaw::ExponentialAlpha { alpha })
    }

    /// Upper end `β = α / (1 - e^{-α})` of the α-exponential support.
    pub fn ewma_beta(alpha: f64) -> f64 {
        alpha / -(-alpha).exp_m1()
    }

    /// Smallest closed interval `[d1, d2]` containing the support.
    pub fn support(&self) -> (f64, f64) {
        match self {
            WeightLaw::Standard => (1.0, 1.0),
            WeightLaw::ExponentialAlpha { alpha } => {
                let beta = Self::ewma_beta(*alpha);
                (beta * (-alpha).exp(), beta)
            }
            WeightLaw::Mixture(m) => (m.min_location(), m.max_location()),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            WeightLaw::Standard | WeightLaw::ExponentialAlpha { .. } => 1.0,
            WeightLaw::Mixture(m) => m.mean(),
        }
    }
}

/// Model parameters: population spectrum, weight law and concentration `c = n / N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct ModelConfig {
    pub h: DiracMixture,
    pub d: WeightLaw,
    pub c: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    h: DiracMixture,
    d: WeightLaw,
    c: f64,
}

impl TryFrom<ModelRepr> for ModelConfig {
    type Error = Error;
    fn try_from(r: ModelRepr) -> Result<Self> {
        ModelConfig::new(r.h, r.d, r.c)
    }
}

impl From<ModelConfig> for ModelRepr {
    fn from(m: ModelConfig) -> Self {
        ModelRepr {
            h: m.h,
            d: m.d,
            c: m.c,
        }
    }
}

impl ModelConfig {
    pub fn new(h: DiracMixture, d: WeightLaw, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "concentration c must be positive, got {c}"
            )));
        }
        Ok(Self { h, d, c })
    }

    /// Errors unless `c < 1`, which the shrinkage formulas require.
    pub fn require_subunit(&self) -> Result<()> {
        if self.c < 1.0 {
            Ok(())
        } else {
            Err(Error::RequiresSubunitRatio(self.c))
        }
    }

    pub fn with_c(&self, c: f64) -> Result<Self> {
        Self::new(self.h.clone(), self.d.clone(), c)
    }
}

fn checked(at: f64, v: Complex64) -> Result<Complex64> {
    if v.re.is_finite() && v.im.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteIntegrand { at })
    }
}

/// `∫ f dH`, evaluated exactly as a sum over atoms.
pub fn integrate_h<F>(f: F, h: &DiracMixture) -> Result<Complex64>
where
    F: Fn(f64) -> Complex64,
{
    h.atoms()
        .try_fold(Complex64::new(0.0, 0.0), |acc, (l, m)| {
            Ok(acc + m * checked(l, f(l))?)
        })
}

/// Gauss–Legendre rule mapped to `[0, 1]`, as `(node, weight)` pairs.
pub fn unit_gauss_legendre(nodes: usize) -> Result<Vec<(f64, f64)>> {
    let degree = NonZeroUsize::new(nodes)
        .ok_or_else(|| Error::InvalidParameter("quadrature needs at least one node".into()))?;
    let rule = GaussLegendre::new(degree);
    Ok(rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect())
}

/// `∫ f dD`. Exact for point-mass laws; `nodes`-point Gauss–Legendre in the
/// uniform variable `t` for the α-exponential law.
pub fn integrate_d<F>(f: F, d: &WeightLaw, nodes: usize) -> Result<Complex64>
where
    F: Fn(f64) -> Complex64,
{
    match d {
        WeightLaw::Standard => checked(1.0, f(1.0)),
        WeightLaw::Mixture(m) => integrate_h(f, m),
        WeightLaw::ExponentialAlpha { alpha } => {
            let beta = WeightLaw::ewma_beta(*alpha);
            unit_gauss_legendre(nodes)?
                .into_iter()
                .try_fold(Complex64::new(0.0, 0.0), |acc, (t, w)| {
                    let delta = beta * (-alpha * t).exp();
                    Ok(acc + w * checked(delta, f(delta))?)
                })
        }
    }
}

/// Finite-sample diagonal weights realizing `d` for `big_n` observations,
/// always rescaled so that they sum to `big_n`.
///
/// EWMA weights decay with the observation index (most recent first);
/// mixture weights are midpoint quantiles in increasing order.
pub fn finite_weights(d: &WeightLaw, big_n: usize) -> Result<Vec<f64>> {
    if big_n == 0 {
        return Err(Error::InvalidParameter("need at least one observation".into()));
    }
    let nf = big_n as f64;
    let raw: Vec<f64> = match d {
        WeightLaw::Standard => return Ok(vec![1.0; big_n]),
        WeightLaw::ExponentialAlpha { alpha } => (1..=big_n)
            .map(|i| (-alpha * i as f64 / nf).exp())
            .collect(),
        WeightLaw::Mixture(m) => (1..=big_n)
            .map(|i| m.quantile((i as f64 - 0.5) / nf))
            .collect(),
    };
    let scale = nf / raw.iter().sum::<f64>();
    Ok(raw.into_iter().map(|w| w * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn bai_silverstein_preset() {
        let h = bai_silverstein_h();
        assert_eq!(h.locations(), &[1.0, 3.0, 10.0]);
        assert_eq!(h.masses(), &[0.2, 0.4, 0.4]);
        assert_abs_diff_eq!(h.mean(), 5.4, epsilon = 1e-14);
        assert_abs_diff_eq!(h.moment(-1), 0.2 + 0.4 / 3.0 + 0.04, epsilon = 1e-14);
        assert_abs_diff_eq!(h.moment(-1), 0.373_333_333_333_333_3, epsilon = 1e-14);
    }

    #[test]
    fn five_dirac_preset() {
        let WeightLaw::Mixture(m) = five_dirac_weight_law() else {
            panic!("expected a mixture");
        };
        assert_eq!(m.locations(), &[0.337, 0.674, 2.696, 6.74, 33.7]);
        assert_eq!(m.masses(), &[0.593, 0.297, 0.074, 0.030, 0.006]);
        assert_abs_diff_eq!(m.masses().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        // 0.199841 + 0.200178 + 0.199504 + 0.2022 + 0.2022
        assert_abs_diff_eq!(m.mean(), 1.003923, epsilon = 1e-12);
    }

    #[test]
    fn mixture_validation() {
        assert!(DiracMixture::new(vec![], vec![]).is_err());
        assert!(DiracMixture::new(vec![1.0], vec![0.5]).is_err());
        assert!(DiracMixture::new(vec![-1.0, 2.0], vec![0.5, 0.5]).is_err());
        assert!(DiracMixture::new(vec![1.0, 2.0], vec![1.0, 0.0]).is_err());
        assert!(DiracMixture::new(vec![1.0, 2.0], vec![0.5]).is_err());
        let m = DiracMixture::new(vec![3.0, 1.0, 3.0], vec![0.25, 0.5, 0.25]).unwrap();
        assert_eq!(m.locations(), &[1.0, 3.0]);
        assert_eq!(m.masses(), &[0.5, 0.5]);
    }

    #[test]
    fn integrate_h_examples() {
        let h = bai_silverstein_h();
        assert_abs_diff_eq!(integrate_h(|_| c(1.0), &h).unwrap().re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(integrate_h(c, &h).unwrap().re, 5.4, epsilon = 1e-14);
        let one = DiracMixture::point(1.0).unwrap();
        let v = integrate_h(|t| 1.0 / (Complex64::i() * t + 1.0), &one).unwrap();
        assert_abs_diff_eq!(v.re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v.im, -0.5, epsilon = 1e-15);
        assert!(matches!(
            integrate_h(|t| c(1.0 / (t - 3.0)), &h),
            Err(Error::NonFiniteIntegrand { at }) if at == 3.0
        ));
    }

    #[test]
    fn integrate_d_means() {
        assert_abs_diff_eq!(
            integrate_d(c, &WeightLaw::Standard, 64).unwrap().re,
            1.0,
            epsilon = 1e-15
        );
        for alpha in [1e-6, 0.5, 1.0, 2.0, 5.0, 20.0] {
            let d = WeightLaw::ewma(alpha).unwrap();
            let mean = integrate_d(c, &d, DEFAULT_QUAD_NODES).unwrap();
            assert_abs_diff_eq!(mean.re, 1.0, epsilon = 1e-10);
            assert_eq!(mean.im, 0.0);
        }
        let mean = integrate_d(c, &five_dirac_weight_law(), 64).unwrap();
        assert_abs_diff_eq!(mean.re, 1.003923, epsilon = 1e-12);
        assert!(integrate_d(c, &WeightLaw::ewma(1.0).unwrap(), 0).is_err());
    }

    #[test]
    fn ewma_support_and_cdf_edges() {
        let d = WeightLaw::ewma(1.0).unwrap();
        let (lo, hi) = d.support();
        let beta = 1.0 / (1.0 - (-1.0f64).exp());
        assert_abs_diff_eq!(hi, beta, epsilon = 1e-15);
        assert_abs_diff_eq!(lo, beta / std::f64::consts::E, epsilon = 1e-15);
        // second moment of the law, closed form β²(1 - e^{-2α}) / (2α)
        let second = integrate_d(|x| c(x * x), &d, 64).unwrap().re;
        assert_abs_diff_eq!(second, beta * beta * (1.0 - (-2.0f64).exp()) / 2.0, epsilon = 1e-13);
    }

    #[test]
    fn gauss_legendre_order_is_converged_for_smooth_integrands() {
        let z = Complex64::new(2.0, 0.5);
        for alpha in [1.0, 5.0] {
            let d = WeightLaw::ewma(alpha).unwrap();
            let f = |x: f64| x / (z - 0.4 * x);
            let a = integrate_d(f, &d, 64).unwrap();
            let b = integrate_d(f, &d, 128).unwrap();
            assert!((a - b).norm() < 1e-12, "alpha {alpha}: {}", (a - b).norm());
        }
    }

    #[test]
    fn finite_weight_examples() {
        assert_eq!(finite_weights(&WeightLaw::Standard, 5).unwrap(), vec![1.0; 5]);
        assert!(finite_weights(&WeightLaw::Standard, 0).is_err());

        let w = finite_weights(&WeightLaw::ewma(1.0).unwrap(), 4).unwrap();
        let raw: Vec<f64> = [0.25, 0.5, 0.75, 1.0].iter().map(|x: &f64| (-x).exp()).collect();
        let s: f64 = raw.iter().sum();
        for (a, r) in w.iter().zip(&raw) {
            assert_abs_diff_eq!(*a, 4.0 * r / s, epsilon = 1e-14);
        }
        assert!(w.windows(2).all(|p| p[0] > p[1]));

        let flat = finite_weights(&WeightLaw::ewma(1e-9).unwrap(), 50).unwrap();
        assert!(flat.iter().all(|x| (x - 1.0).abs() < 1e-8));

        let m = finite_weights(&five_dirac_weight_law(), 1000).unwrap();
        assert!(m.windows(2).all(|p| p[0] <= p[1]));
        assert_abs_diff_eq!(m.iter().sum::<f64>(), 1000.0, epsilon = 1e-9);
    }

    #[test]
    fn model_json_schema() {
        let json = r#"{"h": {"locations": [1, 3, 10], "masses": [0.2, 0.4, 0.4]},
                       "d": {"kind": "ewma", "alpha": 2.0}, "c": 0.2}"#;
        let m: ModelConfig = serde_json::from_str(json).unwrap();
        assert_eq!(m.h, bai_silverstein_h());
        assert_eq!(m.d, WeightLaw::ExponentialAlpha { alpha: 2.0 });
        let back: ModelConfig = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);

        let mix = r#"{"h": {"locations": [1], "masses": [1]},
                      "d": {"kind": "mixture", "locations": [0.5, 2], "masses": [0.5, 0.5]}, "c": 0.5}"#;
        let m: ModelConfig = serde_json::from_str(mix).unwrap();
        assert!(matches!(m.d, WeightLaw::Mixture(_)));

        for bad in [
            r#"{"h": {"locations": [1], "masses": [1]}, "d": {"kind": "ewma"}, "c": 0.5}"#,
            r#"{"h": {"locations": [1], "masses": [1]}, "d": {"kind": "standard"}, "c": -1}"#,
            r#"{"h": {"locations": [1], "masses": [0.9]}, "d": {"kind": "standard"}, "c": 0.5}"#,
            r#"{"h": {"locations": [1], "masses": [1]}, "d": {"kind": "mixture"}, "c": 0.5}"#,
        ] {
            assert!(serde_json::from_str::<ModelConfig>(bad).is_err(), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn finite_weights_sum_to_n(alpha in 1e-6f64..30.0, big_n in 1usize..3000, which in 0u8..3) {
            let d = match which {
                0 => WeightLaw::Standard,
                1 => WeightLaw::ewma(alpha).unwrap(),
                _ => five_dirac_weight_law(),
            };
            let w = finite_weights(&d, big_n).unwrap();
            prop_assert_eq!(w.len(), big_n);
            prop_assert!((w.iter().sum::<f64>() - big_n as f64).abs() < 1e-10 * (big_n as f64).max(1.0));
            prop_assert!(w.iter().all(|x| *x > 0.0));
        }

        #[test]
        fn integrals_are_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, alpha in 0.1f64..8.0, s in 0.1f64..2.0) {
            let z = Complex64::new(1.5, 0.3);
            let f1 = |x: f64| 1.0 / (z - s * x);
            let f2 = |x: f64| Complex64::new(x.sqrt(), x * x);
            let h = bai_silverstein_h();
            let lhs = integrate_h(|x| a * f1(x) + b * f2(x), &h).unwrap();
            let rhs = a * integrate_h(f1, &h).unwrap() + b * integrate_h(f2, &h).unwrap();
            prop_assert!((lhs - rhs).norm() < 1e-12 * (1.0 + rhs.norm()));

            let d = WeightLaw::ewma(alpha).unwrap();
            let lhs = integrate_d(|x| a * f1(x) + b * f2(x), &d, 64).unwrap();
            let rhs = a * integrate_d(f1, &d, 64).unwrap() + b * integrate_d(f2, &d, 64).unwrap();
            prop_assert!((lhs - rhs).norm() < 1e-12 * (1.0 + rhs.norm()));
        }
    }
}
