//! Environment laws, their cumulant generating functions, and deterministic
//! seed-addressed sampling, including the path-tilted and truncated variants.

use crate::error::{Error, Result};
use crate::lattice::Walk;
use crate::rng::{self, DOMAIN_FIELD};
use crate::scalar::{cast, Scalar};

/// Supported i.i.d. environment laws. All are centered with unit variance and
/// have an entire cumulant generating function, so every finite tilt is legal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DisorderLaw {
    StandardGaussian,
    Rademacher,
    /// Two-point law taking `sqrt((1-p)/p)` with probability `p` and
    /// `-sqrt(p/(1-p))` otherwise.
    ShiftedBernoulli { p: f64 },
}

/// lambda, lambda', lambda'' of the cumulant generating function at one beta.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cumulants<T> {
    pub lambda: T,
    pub lambda1: T,
    pub lambda2: T,
}

impl DisorderLaw {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "standard-gaussian" || s == "gaussian" {
            return Ok(Self::StandardGaussian);
        }
        if s == "rademacher" {
            return Ok(Self::Rademacher);
        }
        if let Some(rest) = s
            .strip_prefix("shifted-bernoulli:")
            .or_else(|| s.strip_prefix("shifted-bernoulli(").and_then(|r| r.strip_suffix(')')))
        {
            let p: f64 = rest
                .parse()
                .map_err(|_| Error::Config(format!("bad shifted-bernoulli parameter {rest:?}")))?;
            let law = Self::ShiftedBernoulli { p };
            law.validate()?;
            return Ok(law);
        }
        Err(Error::Config(format!("unknown disorder law {s:?}")))
    }

    pub fn name(&self) -> String {
        match self {
            Self::StandardGaussian => "standard-gaussian".into(),
            Self::Rademacher => "rademacher".into(),
            Self::ShiftedBernoulli { p } => format!("shifted-bernoulli:{p}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::ShiftedBernoulli { p } = self {
            if !(p.is_finite() && *p > 0.0 && *p < 1.0) {
                return Err(Error::Config(format!(
                    "shifted-bernoulli parameter must lie in (0,1), got {p}"
                )));
            }
        }
        Ok(())
    }

    /// The two support points (positive value, negative value) of a two-point
    /// law, if this is one.
    fn two_point(&self) -> Option<(f64, f64)> {
        match *self {
            Self::Rademacher => Some((1.0, -1.0)),
            Self::ShiftedBernoulli { p } => {
                Some((((1.0 - p) / p).sqrt(), -(p / (1.0 - p)).sqrt()))
            }
            Self::StandardGaussian => None,
        }
    }

    fn positive_mass(&self) -> f64 {
        match *self {
            Self::Rademacher => 0.5,
            Self::ShiftedBernoulli { p } => p,
            Self::StandardGaussian => unreachable!(),
        }
    }

    /// Exponential tail rate c0 with `P(|omega| >= v) <= 2 exp(-c0 v)` for all
    /// v > 0. Recorded as `None` ("infinite") for the Gaussian and for the
    /// symmetric bounded law; the rough tail bound is only exercised for laws
    /// that report a finite rate.
    pub fn tail_rate(&self) -> Option<f64> {
        match self.two_point() {
            Some((a, b)) if *self != Self::Rademacher => {
                let p = self.positive_mass();
                let from_inner = std::f64::consts::LN_2 / (-b);
                let from_outer = (2.0 / p).ln() / a;
                Some(from_inner.min(from_outer))
            }
            _ => None,
        }
    }

    /// Closed-form cumulants. `beta` must be finite; all supported laws have
    /// entire cumulant generating functions.
    pub fn cumulants<T: Scalar>(&self, beta: T) -> Result<Cumulants<T>> {
        if !beta.is_finite() {
            return Err(Error::Domain(format!(
                "beta must be finite, got {beta}"
            )));
        }
        self.validate()?;
        Ok(match self {
            Self::StandardGaussian => Cumulants {
                lambda: beta * beta / cast(2.0),
                lambda1: beta,
                lambda2: T::one(),
            },
            Self::Rademacher => {
                let t = beta.tanh();
                Cumulants {
                    lambda: beta.cosh().ln(),
                    lambda1: t,
                    lambda2: T::one() - t * t,
                }
            }
            Self::ShiftedBernoulli { .. } => {
                let (a, b) = self.two_point().unwrap();
                let p: T = cast(self.positive_mass());
                let q = T::one() - p;
                let (a, b): (T, T) = (cast(a), cast(b));
                let wa = p * (beta * a).exp();
                let wb = q * (beta * b).exp();
                let m = wa + wb;
                let m1 = (wa * a + wb * b) / m;
                let m2 = (wa * a * a + wb * b * b) / m;
                Cumulants {
                    lambda: m.ln(),
                    lambda1: m1,
                    lambda2: m2 - m1 * m1,
                }
            }
        })
    }

    /// Draw from the untilted law, as a pure function of the coordinate key.
    #[inline]
    pub fn sample(&self, key: u64) -> f64 {
        match self.two_point() {
            None => rng::standard_gaussian(key),
            Some((a, b)) => {
                let u = rng::uniform_01(rng::stream(key, 0));
                if u < self.positive_mass() {
                    a
                } else {
                    b
                }
            }
        }
    }

    /// Draw from the beta-exponentially-tilted law, reusing the same
    /// underlying uniforms as [`Self::sample`].
    #[inline]
    pub fn sample_tilted(&self, key: u64, beta: f64) -> f64 {
        match self.two_point() {
            // Gaussian tilt is a mean shift by lambda'(beta) = beta.
            None => rng::standard_gaussian(key) + beta,
            Some((a, b)) => {
                let p = self.positive_mass();
                let wa = p * (beta * a).exp();
                let wb = (1.0 - p) * (beta * b).exp();
                let u = rng::uniform_01(rng::stream(key, 0));
                if u < wa / (wa + wb) {
                    a
                } else {
                    b
                }
            }
        }
    }
}

/// Read access to a disorder configuration. Implemented by the concrete
/// seed-addressed field and by its shifted / tilted / perturbed views, so the
/// transfer-matrix code is agnostic to which one it reads.
pub trait Disorder: Sync {
    fn dim(&self) -> usize;
    fn law(&self) -> DisorderLaw;
    fn omega(&self, n: i64, x: &[i64]) -> Result<f64>;
}

/// Deterministic i.i.d. field on the box `1..=time_extent x [-radius, radius]^dim`.
///
/// The value at `(n, x)` is a pure function of `(seed, n, x)`: re-reading a
/// coordinate returns identical bits, and distinct coordinates are generated
/// from independent counter keys.
#[derive(Clone, Debug)]
pub struct EnvironmentField {
    law: DisorderLaw,
    seed: u64,
    dim: usize,
    time_extent: i64,
    radius: i64,
    truncation: Option<f64>,
}

impl EnvironmentField {
    pub fn new(law: DisorderLaw, seed: u64, dim: usize, time_extent: i64, radius: i64) -> Self {
        assert!(dim >= 1 && time_extent >= 0 && radius >= 0);
        Self {
            law,
            seed,
            dim,
            time_extent,
            radius,
        truncation: None,
        }
    }

    /// Same field returning `omega * 1{|omega| <= tau}`.
    pub fn with_truncation(mut self, tau: f64) -> Self {
        self.truncation = Some(tau);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn time_extent(&self) -> i64 {
        self.time_extent
    }

    pub fn radius(&self) -> i64 {
        self.radius
    }

    #[inline]
    fn check_box(&self, n: i64, x: &[i64]) -> Result<()> {
        if n < 1
            || n > self.time_extent
            || x.len() != self.dim
            || x.iter().any(|&c| c.abs() > self.radius)
        {
            return Err(Error::OutOfBox {
                n,
                x: x.to_vec(),
                time_extent: self.time_extent,
                radius: self.radius,
            });
        }
        Ok(())
    }

    #[inline]
    fn raw(&self, n: i64, x: &[i64]) -> f64 {
        let v = self.law.sample(rng::coord_key(self.seed, DOMAIN_FIELD, n, x));
        match self.truncation {
            Some(tau) if v.abs() > tau => 0.0,
            _ => v,
        }
    }

    /// Tilted view: coordinates on `path` follow the beta-tilted law.
    pub fn tilted<'a>(&'a self, beta: f64, path: &'a Walk) -> TiltedField<'a> {
        TiltedField {
            base: self,
            beta,
            path,
        }
    }
}

impl Disorder for EnvironmentField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn law(&self) -> DisorderLaw {
        self.law
    }

    fn omega(&self, n: i64, x: &[i64]) -> Result<f64> {
        self.check_box(n, x)?;
        Ok(self.raw(n, x))
    }
}

/// Field under the path-tilted measure: off-path coordinates keep the base
/// law, the coordinate `(n, S_n)` follows the beta-exponentially-tilted law.
pub struct TiltedField<'a> {
    base: &'a EnvironmentField,
    beta: f64,
    path: &'a Walk,
}

impl Disorder for TiltedField<'_> {
    fn dim(&self) -> usize {
        self.base.dim
    }

    fn law(&self) -> DisorderLaw {
        self.base.law
    }

    fn omega(&self, n: i64, x: &[i64]) -> Result<f64> {
        self.base.check_box(n, x)?;
        let on_path = n >= 0 && (n as usize) <= self.path.len() && self.path.at(n as usize) == x;
        if !on_path {
            return Ok(self.base.raw(n, x));
        }
        let key = rng::coord_key(self.base.seed, DOMAIN_FIELD, n, x);
        let v = self.base.law.sample_tilted(key, self.beta);
        Ok(match self.base.truncation {
            Some(tau) if v.abs() > tau => 0.0,
            _ => v,
        })
    }
}

/// Space-time translated view: `omega(n, x) = base(n + dt, x + dx)`.
pub struct ShiftedField<'a, D: Disorder> {
    base: &'a D,
    dt: i64,
    dx: Vec<i64>,
}

impl<'a, D: Disorder> ShiftedField<'a, D> {
    pub fn new(base: &'a D, dt: i64, dx: Vec<i64>) -> Self {
        assert_eq!(dx.len(), base.dim());
        Self { base, dt, dx }
    }
}

impl<D: Disorder> Disorder for ShiftedField<'_, D> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn law(&self) -> DisorderLaw {
        self.base.law()
    }

    fn omega(&self, n: i64, x: &[i64]) -> Result<f64> {
        let shifted: Vec<i64> = x.iter().zip(&self.dx).map(|(a, b)| a + b).collect();
        self.base.omega(n + self.dt, &shifted)
    }
}

/// View with a single coordinate overridden (finite-difference probes).
pub struct PerturbedField<'a, D: Disorder> {
    base: &'a D,
    n: i64,
    x: Vec<i64>,
    value: f64,
}

impl<'a, D: Disorder> PerturbedField<'a, D> {
    pub fn new(base: &'a D, n: i64, x: Vec<i64>, value: f64) -> Self {
        Self { base, n, x, value }
    }
}

impl<D: Disorder> Disorder for PerturbedField<'_, D> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn law(&self) -> DisorderLaw {
        self.base.law()
    }

    fn omega(&self, n: i64, x: &[i64]) -> Result<f64> {
        if n == self.n && x == self.x.as_slice() {
            return Ok(self.value);
        }
        self.base.omega(n, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::StreamingStat;

    const LAWS: [DisorderLaw; 3] = [
        DisorderLaw::StandardGaussian,
        DisorderLaw::Rademacher,
        DisorderLaw::ShiftedBernoulli { p: 0.25 },
    ];

    #[test]
    fn gaussian_cumulants_closed_form() {
        let c = DisorderLaw::StandardGaussian.cumulants::<f64>(0.5).unwrap();
        assert_eq!(c.lambda, 0.125);
        assert_eq!(c.lambda1, 0.5);
        assert_eq!(c.lambda2, 1.0);
    }

    #[test]
    fn rademacher_cumulants_at_zero_and_one() {
        let c0 = DisorderLaw::Rademacher.cumulants::<f64>(0.0).unwrap();
        assert_eq!((c0.lambda, c0.lambda1, c0.lambda2), (0.0, 0.0, 1.0));

        let c = DisorderLaw::Rademacher.cumulants::<f64>(1.0).unwrap();
        assert!((c.lambda - 1f64.cosh().ln()).abs() < 1e-15);
        assert!((c.lambda1 - 1f64.tanh()).abs() < 1e-15);
        assert!((c.lambda2 - (1.0 - 1f64.tanh().powi(2))).abs() < 1e-15);

        // independent check of the derivatives by central differences of
        // lambda (the second difference needs a wider step to keep the f64
        // difference quotient quiet)
        let lam = |b: f64| DisorderLaw::Rademacher.cumulants::<f64>(b).unwrap().lambda;
        let h1 = 1e-5;
        let d1 = (lam(1.0 + h1) - lam(1.0 - h1)) / (2.0 * h1);
        assert!((d1 - c.lambda1).abs() / c.lambda1.abs() < 1e-6);
        let h2 = 1e-3;
        let d2 = (lam(1.0 + h2) - 2.0 * lam(1.0) + lam(1.0 - h2)) / (h2 * h2);
        assert!((d2 - c.lambda2).abs() / c.lambda2.abs() < 1e-6);
    }

    #[test]
    fn all_laws_centered_unit_variance() {
        for law in LAWS {
            let c = law.cumulants::<f64>(0.0).unwrap();
            assert!(c.lambda.abs() < 1e-15, "{law:?}");
            assert!(c.lambda1.abs() < 1e-15, "{law:?}");
            assert!((c.lambda2 - 1.0).abs() < 1e-12, "{law:?}");
        }
    }

    #[test]
    fn second_derivative_matches_finite_difference_up_to_one() {
        let h = 1e-3;
        for law in LAWS {
            for i in 0..=20 {
                let b = -1.0 + 0.1 * i as f64;
                let c = law.cumulants::<f64>(b).unwrap();
                assert!(c.lambda2 > 0.0, "{law:?} convexity at {b}");
                let lam = |b: f64| law.cumulants::<f64>(b).unwrap().lambda;
                let d2 = (lam(b + h) - 2.0 * lam(b) + lam(b - h)) / (h * h);
                assert!(
                    (d2 - c.lambda2).abs() / c.lambda2 < 1e-5,
                    "{law:?} at beta={b}: fd {d2} vs {}",
                    c.lambda2
                );
            }
        }
    }

    // Smallness conditions |lambda'(b)-b|/b <= eps^3, lambda'' <= 1+eps^3/2
    // at eps = 0.1. They hold on (0, 0.05] for the symmetric laws; a skewed
    // two-point law has a third cumulant of order one (kappa3 ~ 1.155 at
    // p = 0.25), which pushes its admissible range down to
    // beta <= eps^3 / (2 kappa3) ~ 4e-4 through the variance bound.
    #[test]
    fn tilt_smallness_thresholds_per_law() {
        let eps3 = 0.1f64.powi(3);
        let check = |law: DisorderLaw, beta_max: f64| {
            for i in 1..=40 {
                let b = beta_max * i as f64 / 40.0;
                let c = law.cumulants::<f64>(b).unwrap();
                assert!(
                    ((c.lambda1 - b) / b).abs() <= eps3,
                    "{law:?} mean shift at beta={b}"
                );
                assert!(c.lambda2 <= 1.0 + eps3 / 2.0, "{law:?} variance at beta={b}");
            }
        };
        check(DisorderLaw::StandardGaussian, 0.05);
        check(DisorderLaw::Rademacher, 0.05);
        check(DisorderLaw::ShiftedBernoulli { p: 0.25 }, 0.0004);
    }

    #[test]
    fn tail_rates() {
        assert_eq!(DisorderLaw::StandardGaussian.tail_rate(), None);
        assert_eq!(DisorderLaw::Rademacher.tail_rate(), None);
        let c0 = DisorderLaw::ShiftedBernoulli { p: 0.25 }.tail_rate().unwrap();
        // both branches of the min evaluate to ~1.20 at p = 1/4
        assert!((c0 - 1.2).abs() < 0.01, "c0 = {c0}");
        // and the bound it promises actually holds at the support points
        let (a, b) = DisorderLaw::ShiftedBernoulli { p: 0.25 }.two_point().unwrap();
        assert!(2.0 * (-c0 * (-b)).exp() >= 1.0 - 1e-12);
        assert!(2.0 * (-c0 * a).exp() >= 0.25 - 1e-12);
    }

    #[test]
    fn field_values_are_pure_and_box_checked() {
        let f = EnvironmentField::new(DisorderLaw::StandardGaussian, 42, 2, 16, 16);
        let a = f.omega(3, &[1, -2]).unwrap();
        let b = f.omega(3, &[1, -2]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(f.omega(0, &[0, 0]).is_err());
        assert!(f.omega(17, &[0, 0]).is_err());
        assert!(f.omega(3, &[17, 0]).is_err());
    }

    #[test]
    fn empirical_moments_match_law() {
        for law in LAWS {
            let f = EnvironmentField::new(law, 7, 2, 100, 50);
            let mut stat = StreamingStat::new();
            for n in 1..=100 {
                for x0 in -50..50 {
                    for x1 in -50..50 {
                        stat.push(f.omega(n, &[x0, x1]).unwrap());
                    }
                }
            }
            // 10^6 coordinates, mean/variance within 4 standard errors
            let n = stat.count as f64;
            let se_mean = (1.0 / n).sqrt();
            assert!(stat.mean().abs() < 4.0 * se_mean, "{law:?} mean {}", stat.mean());
            let kurt_minus1 = match law {
                DisorderLaw::StandardGaussian => 2.0,
                DisorderLaw::Rademacher => 0.0,
                DisorderLaw::ShiftedBernoulli { p } => {
                    let (a, b) = law.two_point().unwrap();
                    p * a.powi(4) + (1.0 - p) * b.powi(4) - 1.0
                }
            };
            let se_var = (kurt_minus1.max(0.05) / n).sqrt();
            assert!(
                (stat.variance() - 1.0).abs() < 4.0 * se_var,
                "{law:?} variance {}",
                stat.variance()
            );
        }
    }

    #[test]
    fn infinite_truncation_is_identity() {
        let base = EnvironmentField::new(DisorderLaw::StandardGaussian, 5, 2, 8, 8);
        let trunc = base.clone().with_truncation(f64::INFINITY);
        for n in 1..=8i64 {
            for x0 in -8..=8i64 {
                let a = base.omega(n, &[x0, 0]).unwrap();
                let b = trunc.omega(n, &[x0, 0]).unwrap();
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn truncation_zeroes_large_values() {
        let f = EnvironmentField::new(DisorderLaw::StandardGaussian, 11, 2, 50, 50)
            .with_truncation(0.5);
        let mut zeroed = 0usize;
        let mut kept = 0usize;
        for n in 1..=50 {
            for x0 in -20..=20 {
                let v = f.omega(n, &[x0, 3]).unwrap();
                assert!(v.abs() <= 0.5 || v == 0.0);
                if v == 0.0 {
                    zeroed += 1;
                } else {
                    kept += 1;
                }
            }
        }
        assert!(zeroed > 0 && kept > 0);
    }

    #[test]
    fn zero_tilt_equals_base_law() {
        let f = EnvironmentField::new(DisorderLaw::ShiftedBernoulli { p: 0.25 }, 3, 2, 32, 32);
        let path = Walk::sample(99, 2, 32);
        let tilted = f.tilted(0.0, &path);
        for n in 1..=32i64 {
            let x = path.at(n as usize).to_vec();
            let a = f.omega(n, &x).unwrap();
            let b = tilted.omega(n, &x).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn tilted_on_path_gaussian_mean() {
        // on-path coordinates are Normal(beta, 1) under the tilt
        let beta = 0.8;
        let path = Walk::sample(4, 2, 4);
        let mut stat = StreamingStat::new();
        for s in 0..100_000u64 {
            let f = EnvironmentField::new(DisorderLaw::StandardGaussian, rng::sample_seed(1, s), 2, 4, 4);
            let t = f.tilted(beta, &path);
            stat.push(t.omega(2, path.at(2)).unwrap());
        }
        assert!((stat.mean() - beta).abs() < 4.0 * stat.stderr());
        // off-path coordinate keeps the base moments
        let mut off = StreamingStat::new();
        for s in 0..100_000u64 {
            let f = EnvironmentField::new(DisorderLaw::StandardGaussian, rng::sample_seed(2, s), 2, 4, 4);
            let t = f.tilted(beta, &path);
            let mut x = path.at(2).to_vec();
            x[0] += 2; // same parity, off the path
            off.push(t.omega(2, &x).unwrap());
        }
        assert!(off.mean().abs() < 4.0 * off.stderr());
    }

    #[test]
    fn tilted_two_point_mean_matches_lambda1() {
        let beta = 0.7;
        let law = DisorderLaw::ShiftedBernoulli { p: 0.25 };
        let lam1 = law.cumulants::<f64>(beta).unwrap().lambda1;
        let path = Walk::sample(8, 2, 4);
        let mut stat = StreamingStat::new();
        for s in 0..100_000u64 {
            let f = EnvironmentField::new(law, rng::sample_seed(3, s), 2, 4, 4);
            stat.push(f.tilted(beta, &path).omega(1, path.at(1)).unwrap());
        }
        assert!(
            (stat.mean() - lam1).abs() < 4.0 * stat.stderr(),
            "mean {} vs lambda' {}",
            stat.mean(),
            lam1
        );
    }

    #[test]
    fn renormalized_path_weight_has_mean_one() {
        // E[exp(sum beta*omega - lambda per step)] = 1 along a fixed path
        let beta = 0.6;
        let law = DisorderLaw::Rademacher;
        let lambda = law.cumulants::<f64>(beta).unwrap().lambda;
        let path = Walk::sample(21, 2, 8);
        let mut stat = StreamingStat::new();
        for s in 0..10_000u64 {
            let f = EnvironmentField::new(law, rng::sample_seed(4, s), 2, 8, 8);
            let mut acc = 0.0;
            for n in 1..=8 {
                acc += beta * f.omega(n as i64, path.at(n)).unwrap() - lambda;
            }
            stat.push(acc.exp());
        }
        assert!((stat.mean() - 1.0).abs() < 3.0 * stat.stderr());
    }

    #[test]
    fn shift_composition_is_bit_identical() {
        let f = EnvironmentField::new(DisorderLaw::StandardGaussian, 13, 2, 64, 64);
        let once = ShiftedField::new(&f, 8, vec![4, -4]);
        let a = ShiftedField::new(&f, 3, vec![4, 0]);
        let twice = ShiftedField::new(&a, 5, vec![0, -4]);
        for n in 1..=16i64 {
            let v = once.omega(n, &[n, -n]).unwrap();
            let w = twice.omega(n, &[n, -n]).unwrap();
            assert_eq!(v.to_bits(), w.to_bits());
        }
    }

    #[test]
    fn law_parsing_round_trips() {
        for law in LAWS {
            assert_eq!(DisorderLaw::parse(&law.name()).unwrap(), law);
        }
        assert!(DisorderLaw::parse("shifted-bernoulli:1.5").is_err());
        assert!(DisorderLaw::parse("cauchy").is_err());
    }
}
