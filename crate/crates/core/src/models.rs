//! Built-in parametric families: simulation, log-likelihood derivatives to
//! third order, expected information and closed-form cumulant tensors.

use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma as GammaDist, Normal, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::array::Tensor3;
use crate::error::{Error, Result};
use crate::numeric::{digamma, ln_gamma, tetragamma, trigamma};
use crate::rng::rng_from_seed;
use crate::tensors::CumulantTensors;

/// A parameter vector `θ = (ψ, φ)`; the interest components come first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub values: Vec<f64>,
    pub interest_dim: usize,
}

impl ParamPoint {
    pub fn new(values: Vec<f64>, interest_dim: usize) -> Result<Self> {
        if interest_dim == 0 || interest_dim > values.len() {
            return Err(Error::Invalid(format!(
                "interest dimension {interest_dim} incompatible with {} parameters",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("parameter component {i} is not finite")));
        }
        Ok(ParamPoint { values, interest_dim })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn psi(&self) -> &[f64] {
        &self.values[..self.interest_dim]
    }

    pub fn phi(&self) -> &[f64] {
        &self.values[self.interest_dim..]
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    /// Copy with the interest slice replaced.
    pub fn with_psi(&self, psi: &[f64]) -> Self {
        let mut values = self.values.clone();
        values[..self.interest_dim].copy_from_slice(psi);
        ParamPoint { values, interest_dim: self.interest_dim }
    }
}

/// `n` observations of `p` variables each, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Dataset {
    pub fn from_rows(n: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * p || p == 0 {
            return Err(Error::Invalid(format!("{} values do not form a {n}×{p} matrix", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite observation in row {}", i / p)));
        }
        Ok(Dataset { n, p, data })
    }

    pub fn from_column(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Dataset::from_rows(n, 1, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    /// First column; the univariate families use only this.
    pub fn column0(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().step_by(self.p).copied()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Log-likelihood value and derivatives up to the requested order.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLikDerivs {
    pub value: f64,
    pub grad: Option<DVector<f64>>,
    pub hess: Option<DMatrix<f64>>,
    pub third: Option<Tensor3>,
}

/// Base density of a location-scale family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseDensity {
    Normal,
    Logistic,
    StudentT { df: f64 },
}

impl BaseDensity {
    /// `log f(z)` and its first three derivatives.
    fn log_density(&self, z: f64) -> [f64; 4] {
        match *self {
            BaseDensity::Normal => [-0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln(), -z, -1.0, 0.0],
            BaseDensity::Logistic => {
                let a = z.abs();
                let g = -a - 2.0 * (-a).exp().ln_1p();
                let s = 1.0 / (1.0 + (-z).exp());
                let g1 = 1.0 - 2.0 * s;
                let g2 = -2.0 * s * (1.0 - s);
                [g, g1, g2, g2 * g1]
            }
            BaseDensity::StudentT { df: nu } => {
                let q = nu + z * z;
                let c = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln();
                let g = c - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p();
                let g1 = -(nu + 1.0) * z / q;
                let g2 = -(nu + 1.0) * (nu - z * z) / (q * q);
                let g3 = 2.0 * (nu + 1.0) * z * (3.0 * nu - z * z) / (q * q * q);
                [g, g1, g2, g3]
            }
        }
    }

    /// Per-observation Fisher information for `(μ, σ)` at `σ = 1`.
    fn unit_information(&self) -> (f64, f64) {
        match *self {
            BaseDensity::Normal => (1.0, 2.0),
            BaseDensity::Logistic => (1.0 / 3.0, (std::f64::consts::PI.powi(2) + 3.0) / 9.0),
            BaseDensity::StudentT { df } => ((df + 1.0) / (df + 3.0), 2.0 * df / (df + 3.0)),
        }
    }

    /// Upper quartile of the base density, used to turn a MAD into a scale.
    fn upper_quartile(&self) -> f64 {
        match *self {
            BaseDensity::Normal => 0.674_489_750_196_081_7,
            BaseDensity::Logistic => 3f64.ln(),
            BaseDensity::StudentT { df } => {
                use statrs::distribution::{ContinuousCDF, StudentsT};
                StudentsT::new(0.0, 1.0, df).map(|t| t.inverse_cdf(0.75)).unwrap_or(0.6745)
            }
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            BaseDensity::Normal => StandardNormal.sample(rng),
            BaseDensity::Logistic => {
                let u: f64 = rng.sample(Open01);
                (u / (1.0 - u)).ln()
            }
            BaseDensity::StudentT { df } => StudentT::new(df).expect("validated df").sample(rng),
        }
    }

    /// Log-density of one standardized observation; used by the conditional
    /// quadrature where only the value is needed.
    pub fn log_f(&self, z: f64) -> f64 {
        self.log_density(z)[0]
    }
}

/// Built-in model registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// Exponential with rate `θ`.
    Exponential,
    /// Normal with `ψ` the mean and `φ` the variance.
    NormalMv,
    /// Gamma with `ψ` the shape and `φ` the rate.
    Gamma,
    /// `μ + σ·Z` with `Z` from the base density; `ψ = μ`, `φ = σ`.
    LocationScale { base: BaseDensity },
    /// `q`-variate normal with unknown mean (all interest) and known covariance.
    NormalMean { covariance: Vec<Vec<f64>> },
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::LocationScale { base: BaseDensity::StudentT { df } } if !(*df > 0.0 && df.is_finite()) => {
                Err(Error::Invalid(format!("Student-t degrees of freedom must be positive, got {df}")))
            }
            ModelSpec::NormalMean { covariance } => {
                let q = covariance.len();
                if q == 0 || covariance.iter().any(|r| r.len() != q) {
                    return Err(Error::Invalid("covariance must be a non-empty square matrix".into()));
                }
                let m = self.covariance_matrix();
                if (&m - m.transpose()).amax() > 1e-12 * m.amax() {
                    return Err(Error::Invalid("covariance must be symmetric".into()));
                }
                m.cholesky()
                    .map(|_| ())
                    .ok_or_else(|| Error::NotPositiveDefinite("normal-mean covariance".into()))
                    .map_err(|e| Error::Invalid(e.to_string()))
            }
            _ => Ok(()),
        }
    }

    fn covariance_matrix(&self) -> DMatrix<f64> {
        match self {
            ModelSpec::NormalMean { covariance } => {
                let q = covariance.len();
                DMatrix::from_fn(q, q, |i, j| covariance[i][j])
            }
            _ => unreachable!("covariance requested for a family without one"),
        }
    }

    fn precision_matrix(&self) -> DMatrix<f64> {
        self.covariance_matrix().try_inverse().expect("validated covariance")
    }

    pub fn name(&self) -> String {
        match self {
            ModelSpec::Exponential => "exponential".into(),
            ModelSpec::NormalMv => "normal-mv".into(),
            ModelSpec::Gamma => "gamma".into(),
            ModelSpec::LocationScale { base: BaseDensity::Normal } => "ls-normal".into(),
            ModelSpec::LocationScale { base: BaseDensity::Logistic } => "ls-logistic".into(),
            ModelSpec::LocationScale { base: BaseDensity::StudentT { df } } => format!("ls-t{df}"),
            ModelSpec::NormalMean { covariance } => format!("normal-mean{}", covariance.len()),
        }
    }

    /// Inverse of [`ModelSpec::name`]; `normal-mean{q}` gets the identity covariance.
    pub fn from_name(name: &str) -> Result<Self> {
        let spec = match name {
            "exponential" => ModelSpec::Exponential,
            "normal-mv" => ModelSpec::NormalMv,
            "gamma" => ModelSpec::Gamma,
            "ls-normal" => ModelSpec::LocationScale { base: BaseDensity::Normal },
            "ls-logistic" => ModelSpec::LocationScale { base: BaseDensity::Logistic },
            _ => {
                if let Some(df) = name.strip_prefix("ls-t") {
                    let df: f64 = df.parse().map_err(|_| Error::Invalid(format!("bad degrees of freedom in model name `{name}`")))?;
                    ModelSpec::LocationScale { base: BaseDensity::StudentT { df } }
                } else if let Some(q) = name.strip_prefix("normal-mean") {
                    let q: usize = q.parse().map_err(|_| Error::Invalid(format!("bad dimension in model name `{name}`")))?;
                    ModelSpec::NormalMean { covariance: (0..q).map(|i| (0..q).map(|j| f64::from(u8::from(i == j))).collect()).collect() }
                } else {
                    return Err(Error::Invalid(format!("unknown model `{name}`")));
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Number of parameters `d`.
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Exponential => 1,
            ModelSpec::NormalMv | ModelSpec::Gamma | ModelSpec::LocationScale { .. } => 2,
            ModelSpec::NormalMean { covariance } => covariance.len(),
        }
    }

    /// Number of interest parameters `q`.
    pub fn interest_dim(&self) -> usize {
        match self {
            ModelSpec::NormalMean { covariance } => covariance.len(),
            _ => 1,
        }
    }

    /// Variables per observation.
    pub fn obs_dim(&self) -> usize {
        match self {
            ModelSpec::NormalMean { covariance } => covariance.len(),
            _ => 1,
        }
    }

    pub fn min_n(&self) -> usize {
        self.dim() + 1
    }

    pub fn analytic_tensors(&self) -> bool {
        !matches!(self, ModelSpec::LocationScale { .. })
    }

    /// True when a location-scale ancillary configuration is available.
    pub fn base_density(&self) -> Option<BaseDensity> {
        match self {
            ModelSpec::LocationScale { base } => Some(*base),
            _ => None,
        }
    }

    pub fn in_domain(&self, theta: &[f64]) -> bool {
        if theta.len() != self.dim() || theta.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            ModelSpec::Exponential => theta[0] > 0.0,
            ModelSpec::NormalMv | ModelSpec::LocationScale { .. } => theta[1] > 0.0,
            ModelSpec::Gamma => theta[0] > 0.0 && theta[1] > 0.0,
            ModelSpec::NormalMean { .. } => true,
        }
    }

    /// Lower bound on the interest parameter when it is positive.
    pub fn psi_lower_bound(&self) -> Option<f64> {
        match self {
            ModelSpec::Exponential | ModelSpec::Gamma => Some(0.0),
            _ => None,
        }
    }

    pub fn check_theta(&self, theta: &ParamPoint) -> Result<()> {
        if theta.interest_dim != self.interest_dim() {
            return Err(Error::Invalid(format!(
                "{} has interest dimension {}, got {}",
                self.name(),
                self.interest_dim(),
                theta.interest_dim
            )));
        }
        if !self.in_domain(&theta.values) {
            return Err(Error::Domain(format!("{:?} outside the {} parameter space", theta.values, self.name())));
        }
        Ok(())
    }

    pub fn param(&self, values: Vec<f64>) -> Result<ParamPoint> {
        let p = ParamPoint::new(values, self.interest_dim())?;
        self.check_theta(&p)?;
        Ok(p)
    }

    pub fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.p() != self.obs_dim() {
            return Err(Error::Invalid(format!(
                "{} expects {} columns, data has {}",
                self.name(),
                self.obs_dim(),
                data.p()
            )));
        }
        if data.n() < self.min_n() {
            return Err(Error::Invalid(format!("{} needs n ≥ {}, got {}", self.name(), self.min_n(), data.n())));
        }
        Ok(())
    }

    /// Draw `n` independent observations at `θ`.
    pub fn simulate(&self, theta: &ParamPoint, n: usize, seed: u64) -> Result<Dataset> {
        self.check_theta(theta)?;
        if n < self.min_n() {
            return Err(Error::Invalid(format!("{} needs n ≥ {}, got {n}", self.name(), self.min_n())));
        }
        let mut rng = rng_from_seed(seed);
        let th = &theta.values;
        let data: Vec<f64> = match self {
            ModelSpec::Exponential => {
                let dist = Exp::new(th[0]).map_err(|e| Error::Domain(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            ModelSpec::NormalMv => {
                let dist = Normal::new(th[0], th[1].sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            ModelSpec::Gamma => {
                let dist = GammaDist::new(th[0], 1.0 / th[1]).map_err(|e| Error::Domain(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            ModelSpec::LocationScale { base } => (0..n).map(|_| th[0] + th[1] * base.sample(&mut rng)).collect(),
            ModelSpec::NormalMean { .. } => {
                let q = self.dim();
                let chol = self.covariance_matrix().cholesky().expect("validated covariance");
                let l = chol.l();
                let mut out = Vec::with_capacity(n * q);
                for _ in 0..n {
                    let z = DVector::from_fn(q, |_, _| StandardNormal.sample(&mut rng));
                    let y = &l * z;
                    out.extend((0..q).map(|j| th[j] + y[j]));
                }
                out
            }
        };
        Dataset::from_rows(n, self.obs_dim(), data)
    }

    /// Log-likelihood and analytic derivatives up to `order` (0..=3).
    pub fn loglik_derivs(&self, theta: &[f64], data: &Dataset, order: usize) -> Result<LogLikDerivs> {
        if order > 3 {
            return Err(Error::Invalid(format!("derivative order {order} exceeds 3")));
        }
        if !self.in_domain(theta) {
            return Err(Error::Domain(format!("{theta:?} outside the {} parameter space", self.name())));
        }
        let d = self.dim();
        let n = data.n() as f64;
        let value;
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        let mut t = Tensor3::zeros(d);
        match self {
            ModelSpec::Exponential => {
                let th = theta[0];
                let mut sy = 0.0;
                for (i, y) in data.column0().enumerate() {
                    if y < 0.0 {
                        return Err(Error::NonFiniteLogLik { row: i });
                    }
                    sy += y;
                }
                value = n * th.ln() - th * sy;
                g[0] = n / th - sy;
                h[(0, 0)] = -n / (th * th);
                t.set(0, 0, 0, 2.0 * n / (th * th * th));
            }
            ModelSpec::NormalMv => {
                let (mu, v) = (theta[0], theta[1]);
                let (mut s1, mut s2) = (0.0, 0.0);
                for y in data.column0() {
                    let e = y - mu;
                    s1 += e;
                    s2 += e * e;
                }
                value = -0.5 * n * (2.0 * std::f64::consts::PI * v).ln() - s2 / (2.0 * v);
                let (v2, v3) = (v * v, v * v * v);
                g[0] = s1 / v;
                g[1] = -n / (2.0 * v) + s2 / (2.0 * v2);
                h[(0, 0)] = -n / v;
                h[(0, 1)] = -s1 / v2;
                h[(1, 1)] = n / (2.0 * v2) - s2 / v3;
                fill_sym3_2(&mut t, n / v2, 2.0 * s1 / v3, -n / v3 + 3.0 * s2 / (v2 * v2));
            }
            ModelSpec::Gamma => {
                let (a, b) = (theta[0], theta[1]);
                let (mut sl, mut sy) = (0.0, 0.0);
                for (i, y) in data.column0().enumerate() {
                    if y <= 0.0 {
                        return Err(Error::NonFiniteLogLik { row: i });
                    }
                    sl += y.ln();
                    sy += y;
                }
                value = n * (a * b.ln() - ln_gamma(a)) + (a - 1.0) * sl - b * sy;
                if order >= 1 {
                    g[0] = n * (b.ln() - digamma(a)) + sl;
                    g[1] = n * a / b - sy;
                }
                if order >= 2 {
                    h[(0, 0)] = -n * trigamma(a);
                    h[(0, 1)] = n / b;
                    h[(1, 1)] = -n * a / (b * b);
                }
                if order >= 3 {
                    t.set(0, 0, 0, -n * tetragamma(a));
                    fill_sym3_2(&mut t, 0.0, -n / (b * b), 2.0 * n * a / (b * b * b));
                }
            }
            ModelSpec::LocationScale { base } => {
                let (mu, s) = (theta[0], theta[1]);
                let (mut g0, mut g1s, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
                let (mut t000, mut t001, mut t011, mut t111) = (0.0, 0.0, 0.0, 0.0);
                let mut gsum = 0.0;
                for (i, y) in data.column0().enumerate() {
                    let z = (y - mu) / s;
                    let [lg, d1, d2, d3] = base.log_density(z);
                    if !lg.is_finite() {
                        return Err(Error::NonFiniteLogLik { row: i });
                    }
                    gsum += lg;
                    if order >= 1 {
                        g0 -= d1;
                        g1s += -1.0 - z * d1;
                    }
                    if order >= 2 {
                        h00 += d2;
                        h01 += z * d2 + d1;
                        h11 += 1.0 + 2.0 * z * d1 + z * z * d2;
                    }
                    if order >= 3 {
                        t000 -= d3;
                        t001 -= z * d3 + 2.0 * d2;
                        t011 -= 2.0 * d1 + 4.0 * z * d2 + z * z * d3;
                        t111 -= 2.0 + 6.0 * z * d1 + 6.0 * z * z * d2 + z * z * z * d3;
                    }
                }
                value = gsum - n * s.ln();
                g[0] = g0 / s;
                g[1] = g1s / s;
                let s2 = s * s;
                h[(0, 0)] = h00 / s2;
                h[(0, 1)] = h01 / s2;
                h[(1, 1)] = h11 / s2;
                let s3 = s2 * s;
                t.set(0, 0, 0, t000 / s3);
                fill_sym3_2(&mut t, t001 / s3, t011 / s3, t111 / s3);
            }
            ModelSpec::NormalMean { .. } => {
                let q = d;
                let prec = self.precision_matrix();
                let cov = self.covariance_matrix();
                let mut sum_e = DVector::zeros(q);
                let mut quad = 0.0;
                for i in 0..data.n() {
                    let e = DVector::from_fn(q, |j, _| data.row(i)[j] - theta[j]);
                    quad += (e.transpose() * &prec * &e)[(0, 0)];
                    sum_e += e;
                }
                let logdet = cov.cholesky().expect("validated covariance").l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
                value = -0.5 * quad - 0.5 * n * (q as f64 * (2.0 * std::f64::consts::PI).ln() + logdet);
                g = &prec * sum_e;
                h = -prec * n;
            }
        }
        if d == 2 {
            h[(1, 0)] = h[(0, 1)];
        }
        if !value.is_finite() {
            return Err(Error::NonFiniteLogLik { row: 0 });
        }
        Ok(LogLikDerivs {
            value,
            grad: (order >= 1).then_some(g),
            hess: (order >= 2).then_some(h),
            third: (order >= 3).then_some(t),
        })
    }

    /// Log-likelihood value only.
    pub fn loglik(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        Ok(self.loglik_derivs(theta, data, 0)?.value)
    }

    /// Expected information `−λ_{rs}` for a sample of size `n`.
    pub fn expected_information(&self, theta: &[f64], n: usize) -> Result<DMatrix<f64>> {
        if !self.in_domain(theta) {
            return Err(Error::Domain(format!("{theta:?} outside the {} parameter space", self.name())));
        }
        let nf = n as f64;
        Ok(match self {
            ModelSpec::Exponential => DMatrix::from_element(1, 1, nf / (theta[0] * theta[0])),
            ModelSpec::NormalMv => {
                let v = theta[1];
                DMatrix::from_row_slice(2, 2, &[nf / v, 0.0, 0.0, nf / (2.0 * v * v)])
            }
            ModelSpec::Gamma => {
                let (a, b) = (theta[0], theta[1]);
                DMatrix::from_row_slice(2, 2, &[nf * trigamma(a), -nf / b, -nf / b, nf * a / (b * b)])
            }
            ModelSpec::LocationScale { base } => {
                let (im, is) = base.unit_information();
                let c = nf / (theta[1] * theta[1]);
                DMatrix::from_row_slice(2, 2, &[c * im, 0.0, 0.0, c * is])
            }
            ModelSpec::NormalMean { .. } => self.precision_matrix() * nf,
        })
    }

    /// Closed-form λ-arrays, or `None` when they must be estimated by simulation.
    pub fn exact_tensors(&self, theta: &ParamPoint, n: usize) -> Result<Option<CumulantTensors>> {
        self.check_theta(theta)?;
        let th = &theta.values;
        let nf = n as f64;
        let d = self.dim();
        let lam2 = -self.expected_information(th, n)?;
        let mut lam3 = Tensor3::zeros(d);
        let mut lam21 = Tensor3::zeros(d);
        let mut lam111 = Tensor3::zeros(d);
        match self {
            ModelSpec::Exponential => {
                let c = 2.0 * nf / th[0].powi(3);
                lam3.set(0, 0, 0, c);
                lam111.set(0, 0, 0, -c);
            }
            ModelSpec::NormalMv => {
                let v = th[1];
                let (v2, v3) = (v * v, v * v * v);
                fill_sym3_2(&mut lam3, nf / v2, 0.0, 2.0 * nf / v3);
                // λ_{rs,t}: only (μv,μ) and (vv,v) are non-zero
                lam21.set(0, 1, 0, -nf / v2);
                lam21.set(1, 0, 0, -nf / v2);
                lam21.set(1, 1, 1, -nf / v3);
                fill_sym3_2(&mut lam111, nf / v2, 0.0, nf / v3);
            }
            ModelSpec::Gamma => {
                let (a, b) = (th[0], th[1]);
                lam3.set(0, 0, 0, -nf * tetragamma(a));
                fill_sym3_2(&mut lam3, 0.0, -nf / (b * b), 2.0 * nf * a / (b * b * b));
                lam111 = lam3.scale(-1.0);
            }
            ModelSpec::NormalMean { .. } => {}
            ModelSpec::LocationScale { .. } => return Ok(None),
        }
        Ok(Some(CumulantTensors { lam2, lam3, lam21, lam111, n, mc_se: None }))
    }

    /// Method-of-moments starting value.
    pub fn initial_values(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.check_data(data)?;
        let ys: Vec<f64> = data.column0().collect();
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
        let init = match self {
            ModelSpec::Exponential => vec![1.0 / mean],
            ModelSpec::NormalMv => vec![mean, var],
            ModelSpec::Gamma => vec![mean * mean / var, mean / var],
            ModelSpec::LocationScale { base } => {
                let med = median(&ys);
                let dev: Vec<f64> = ys.iter().map(|y| (y - med).abs()).collect();
                let mad = median(&dev);
                let scale = if mad > 0.0 { mad / base.upper_quartile() } else { var.sqrt() };
                vec![med, scale]
            }
            ModelSpec::NormalMean { .. } => {
                let q = self.dim();
                let mut m = vec![0.0; q];
                for i in 0..data.n() {
                    for (j, mj) in m.iter_mut().enumerate() {
                        *mj += data.row(i)[j];
                    }
                }
                m.iter().map(|v| v / n).collect()
            }
        };
        if !self.in_domain(&init) {
            return Err(Error::Domain(format!("moment estimate {init:?} lies outside the parameter space")));
        }
        Ok(init)
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            ModelSpec::Exponential => vec!["rate".into()],
            ModelSpec::NormalMv => vec!["mean".into(), "variance".into()],
            ModelSpec::Gamma => vec!["shape".into(), "rate".into()],
            ModelSpec::LocationScale { .. } => vec!["location".into(), "scale".into()],
            ModelSpec::NormalMean { covariance } => (0..covariance.len()).map(|j| format!("mean{}", j + 1)).collect(),
        }
    }
}

/// Fill a 2-parameter symmetric array from `(001, 011, 111)`, keeping `000`.
fn fill_sym3_2(t: &mut Tensor3, t001: f64, t011: f64, t111: f64) {
    for (i, j, k) in [(0, 0, 1), (0, 1, 0), (1, 0, 0)] {
        t.set(i, j, k, t001);
    }
    for (i, j, k) in [(0, 1, 1), (1, 0, 1), (1, 1, 0)] {
        t.set(i, j, k, t011);
    }
    t.set(1, 1, 1, t111);
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}
