// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded generators for piecewise linear regression data.
//!
//! Every configuration carries a 64-bit seed. Draws come from ChaCha20 with
//! three fixed streams per seed: covariates on stream 0, noise on stream 1
//! and preset randomness (random supports, random change points) on
//! stream 2. A given seed therefore reproduces the same data bit for bit,
//! and changing the noise model leaves the covariates untouched.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MosegError, Result};

pub const STREAM_COVARIATES: u64 = 0;
pub const STREAM_NOISE: u64 = 1;
pub const STREAM_PRESET: u64 = 2;

/// Steps discarded before the first row of an autoregressive process.
pub const AR_BURN_IN: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Covariance {
    Identity,
    /// `rho^|i - j|`.
    Toeplitz { rho: f64 },
    /// `factor * rho^|i - j|`.
    Scaled { factor: f64, rho: f64 },
}

impl Covariance {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let d = i.abs_diff(j) as i32;
        match *self {
            Covariance::Identity => f64::from(u8::from(i == j)),
            Covariance::Toeplitz { rho } => rho.powi(d),
            Covariance::Scaled { factor, rho } => factor * rho.powi(d),
        }
    }

    fn validate(&self) -> Result<()> {
        let rho = match *self {
            Covariance::Identity => return Ok(()),
            Covariance::Toeplitz { rho } => rho,
            Covariance::Scaled { factor, rho } => {
                if !(factor > 0.0 && factor.is_finite()) {
                    return Err(MosegError::param(format!("covariance factor must be positive, got {factor}")));
                }
                rho
            }
        };
        if !(rho > -1.0 && rho < 1.0) {
            return Err(MosegError::param(format!("Toeplitz rho must lie in (-1, 1), got {rho}")));
        }
        Ok(())
    }

    /// Lower Cholesky factor, or `None` for the identity.
    fn cholesky(&self, p: usize) -> Result<Option<DMatrix<f64>>> {
        if let Covariance::Identity = self {
            return Ok(None);
        }
        let sigma = DMatrix::from_fn(p, p, |i, j| self.entry(i, j));
        sigma
            .cholesky()
            .map(|c| Some(c.l()))
            .ok_or_else(|| MosegError::param("covariance matrix is not positive definite"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Noise {
    Gaussian { sigma: f64 },
    /// `sigma * sqrt(3/5) * t_5`, unit variance before scaling.
    StudentT5Scaled { sigma: f64 },
    /// `e_t = phi e_{t-1} + sqrt(1 - phi^2) sigma z_t`.
    Ar1 { phi: f64, sigma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateProcess {
    Iid,
    /// Independent unit-variance `t_5` coordinates, then correlated by the
    /// Cholesky factor.
    StudentT5,
    /// `x_t = phi x_{t-1} + sqrt(1 - phi^2) L z_t`, stationary covariance `L L'`.
    Ar1 { phi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub change_points: Vec<usize>,
    /// One coefficient vector per segment.
    pub betas: Vec<Vec<f64>>,
    pub covariance: Covariance,
    pub noise: Noise,
    pub covariate_process: CovariateProcess,
    pub seed: u64,
}

impl SimConfig {
    pub fn q(&self) -> usize {
        self.change_points.len()
    }

    /// Segment index of zero-based row `t`.
    pub fn segment_of(&self, t: usize) -> usize {
        self.change_points.partition_point(|&c| c <= t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p == 0 {
            return Err(MosegError::param(format!("need n >= 2 and p >= 1, got n = {}, p = {}", self.n, self.p)));
        }
        let mut prev = 0;
        for &c in &self.change_points {
            if c <= prev || c >= self.n {
                return Err(MosegError::param(format!(
                    "change points must be strictly increasing inside (0, n): {:?}",
                    self.change_points
                )));
            }
            prev = c;
        }
        if self.betas.len() != self.q() + 1 {
            return Err(MosegError::param(format!(
                "{} coefficient vectors for {} segments",
                self.betas.len(),
                self.q() + 1
            )));
        }
        if let Some(b) = self.betas.iter().find(|b| b.len() != self.p) {
            return Err(MosegError::DimensionMismatch(format!("coefficient vector of length {} for p = {}", b.len(), self.p)));
        }
        if self.betas.windows(2).any(|w| w[0] == w[1]) {
            return Err(MosegError::param("consecutive coefficient vectors must differ"));
        }
        self.covariance.validate()?;
        let check_phi = |phi: f64| {
            if phi > -1.0 && phi < 1.0 {
                Ok(())
            } else {
                Err(MosegError::param(format!("AR coefficient must lie in (-1, 1), got {phi}")))
            }
        };
        match self.noise {
            Noise::Gaussian { sigma } | Noise::StudentT5Scaled { sigma } if sigma >= 0.0 => {}
            Noise::Ar1 { phi, sigma } if sigma >= 0.0 => check_phi(phi)?,
            _ => return Err(MosegError::param("noise scale must be non-negative")),
        }
        if let CovariateProcess::Ar1 { phi } = self.covariate_process {
            check_phi(phi)?;
        }
        Ok(())
    }
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// One unit-variance `sqrt(3/5) t_5` draw as `sqrt(3) z / sqrt(chi2_5)`.
fn t5_unit<R: Rng>(rng: &mut R, chi: &ChiSquared<f64>) -> f64 {
    let z = normal(rng);
    let c = chi.sample(rng);
    3f64.sqrt() * z / c.sqrt()
}

fn chi5() -> ChiSquared<f64> {
    ChiSquared::new(5.0).expect("five degrees of freedom")
}

/// `count` draws of `sqrt(3/5) t_5`.
pub fn student_t5_scaled(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, STREAM_NOISE);
    let chi = chi5();
    (0..count).map(|_| t5_unit(&mut rng, &chi)).collect()
}

fn covariates(config: &SimConfig) -> Result<Array2<f64>> {
    let (n, p) = (config.n, config.p);
    let chol = config.covariance.cholesky(p)?;
    let mut rng = stream(config.seed, STREAM_COVARIATES);
    let chi = chi5();
    let innovation = |rng: &mut ChaCha20Rng| -> Vec<f64> {
        let w: Vec<f64> = match config.covariate_process {
            CovariateProcess::StudentT5 => (0..p).map(|_| t5_unit(rng, &chi)).collect(),
            _ => (0..p).map(|_| normal(rng)).collect(),
        };
        match &chol {
            None => w,
            Some(l) => (0..p).map(|i| (0..=i).map(|j| l[(i, j)] * w[j]).sum()).collect(),
        }
    };
    let mut x = Array2::zeros((n, p));
    match config.covariate_process {
        CovariateProcess::Iid | CovariateProcess::StudentT5 => {
            for t in 0..n {
                let row = innovation(&mut rng);
                x.row_mut(t).assign(&Array1::from(row));
            }
        }
        CovariateProcess::Ar1 { phi } => {
            let scale = (1.0 - phi * phi).sqrt();
            let mut state = vec![0.0; p];
            for t in 0..AR_BURN_IN + n {
                let e = innovation(&mut rng);
                for (s, e) in state.iter_mut().zip(e) {
                    *s = phi * *s + scale * e;
                }
                if t >= AR_BURN_IN {
                    x.row_mut(t - AR_BURN_IN).assign(&Array1::from(state.clone()));
                }
            }
        }
    }
    Ok(x)
}

fn noise(config: &SimConfig) -> Array1<f64> {
    let n = config.n;
    let mut rng = stream(config.seed, STREAM_NOISE);
    match config.noise {
        Noise::Gaussian { sigma } => Array1::from_shape_fn(n, |_| sigma * normal(&mut rng)),
        Noise::StudentT5Scaled { sigma } => {
            let chi = chi5();
            Array1::from_shape_fn(n, |_| sigma * t5_unit(&mut rng, &chi))
        }
        Noise::Ar1 { phi, sigma } => {
            let scale = (1.0 - phi * phi).sqrt() * sigma;
            let mut e = 0.0;
            let mut out = Array1::zeros(n);
            for t in 0..AR_BURN_IN + n {
                e = phi * e + scale * normal(&mut rng);
                if t >= AR_BURN_IN {
                    out[t - AR_BURN_IN] = e;
                }
            }
            out
        }
    }
}

/// Draws `(Y, X)` with `Y_t = x_t' beta_{segment(t)} + e_t`.
pub fn generate(config: &SimConfig) -> Result<Dataset> {
    config.validate()?;
    let x = covariates(config)?;
    let eps = noise(config);
    let betas: Vec<Array1<f64>> = config.betas.iter().map(|b| Array1::from(b.clone())).collect();
    let y = Array1::from_shape_fn(config.n, |t| x.row(t).dot(&betas[config.segment_of(t)]) + eps[t]);
    Dataset::new(y, x)
}

/// How the support of a sparse coefficient vector is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Prefix,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignPattern {
    Alternating,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseBetaSpec {
    pub sparsity: usize,
    pub support: Support,
    pub magnitude: f64,
    pub signs: SignPattern,
}

impl SparseBetaSpec {
    /// `magnitude * beta_bar`: entries `(-1)^(i-1)` on the first `s` coordinates.
    pub fn alternating_prefix(sparsity: usize, magnitude: f64) -> Self {
        Self {
            sparsity,
            support: Support::Prefix,
            magnitude,
            signs: SignPattern::Alternating,
        }
    }

    pub fn build<R: Rng>(&self, p: usize, rng: &mut R) -> Result<Vec<f64>> {
        if self.sparsity == 0 || self.sparsity > p {
            return Err(MosegError::param(format!("sparsity {} outside 1..={p}", self.sparsity)));
        }
        let support: Vec<usize> = match self.support {
            Support::Prefix => (0..self.sparsity).collect(),
            Support::Random => {
                let mut s = rand::seq::index::sample(rng, p, self.sparsity).into_vec();
                s.sort_unstable();
                s
            }
        };
        let mut beta = vec![0.0; p];
        for (rank, &i) in support.iter().enumerate() {
            let sign = match self.signs {
                SignPattern::Alternating if rank % 2 == 1 => -1.0,
                _ => 1.0,
            };
            beta[i] = sign * self.magnitude;
        }
        Ok(beta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    S1,
    S2,
    S3,
    S4,
    S5,
    EHeavy,
    EDep,
    /// Single random change point, used to compare Stage 1 and Stage 2.
    A1,
    /// Runtime setting with a variable dimension.
    Rt,
}

impl Preset {
    pub const ALL: [Preset; 9] = [
        Preset::S1,
        Preset::S2,
        Preset::S3,
        Preset::S4,
        Preset::S5,
        Preset::EHeavy,
        Preset::EDep,
        Preset::A1,
        Preset::Rt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::S1 => "S1",
            Preset::S2 => "S2",
            Preset::S3 => "S3",
            Preset::S4 => "S4",
            Preset::S5 => "S5",
            Preset::EHeavy => "E_heavy",
            Preset::EDep => "E_dep",
            Preset::A1 => "A1",
            Preset::Rt => "RT",
        }
    }

    /// Meaning of the preset's single numeric knob.
    pub fn knob(&self) -> &'static str {
        match self {
            Preset::S1 | Preset::S5 => "sparsity s",
            Preset::S2 | Preset::EHeavy | Preset::EDep | Preset::A1 => "jump size delta",
            Preset::S3 => "sample size n",
            Preset::S4 => "scale kappa",
            Preset::Rt => "dimension p",
        }
    }

    pub fn default_knob(&self) -> f64 {
        match self {
            Preset::S1 | Preset::S5 => 10.0,
            Preset::S2 => 1.6 * 40f64.sqrt(),
            Preset::S3 => 480.0,
            Preset::S4 | Preset::EHeavy | Preset::EDep => 1.6,
            Preset::A1 => 0.8,
            Preset::Rt => 100.0,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = MosegError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| MosegError::UnknownPreset(s.to_string()))
    }
}

fn integer_knob(v: f64, what: &str, lo: usize, hi: usize) -> Result<usize> {
    if v.fract() != 0.0 || v < lo as f64 || v > hi as f64 {
        return Err(MosegError::param(format!("{what} must be an integer in [{lo}, {hi}], got {v}")));
    }
    Ok(v as usize)
}

fn positive_knob(v: f64, what: &str) -> Result<f64> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(MosegError::param(format!("{what} must be positive, got {v}")));
    }
    Ok(v)
}

fn scaled(v: &[f64], c: f64) -> Vec<f64> {
    v.iter().map(|x| c * x).collect()
}

fn base(n: usize, p: usize, change_points: Vec<usize>, betas: Vec<Vec<f64>>, covariance: Covariance, seed: u64) -> SimConfig {
    SimConfig {
        n,
        p,
        change_points,
        betas,
        covariance,
        noise: Noise::Gaussian { sigma: 1.0 },
        covariate_process: CovariateProcess::Iid,
        seed,
    }
}

/// Configuration of a named simulation setting; `knob` defaults to
/// [`Preset::default_knob`].
pub fn preset(which: Preset, knob: Option<f64>, seed: u64) -> Result<SimConfig> {
    let k = knob.unwrap_or_else(|| which.default_knob());
    let mut rng = stream(seed, STREAM_PRESET);
    let toeplitz = Covariance::Toeplitz { rho: 0.6 };
    let config = match which {
        Preset::S1 | Preset::S5 => {
            let p = 100;
            let s = integer_knob(k, which.knob(), 1, p)?;
            let spec = SparseBetaSpec {
                sparsity: s,
                support: Support::Random,
                magnitude: 1.0 / (4.0 * s as f64).sqrt(),
                signs: SignPattern::Constant,
            };
            let b = spec.build(p, &mut rng)?;
            if which == Preset::S1 {
                base(300, p, vec![100, 200], vec![b.clone(), scaled(&b, -1.0), b], toeplitz, seed)
            } else {
                let mut c = base(300, p, vec![], vec![b], Covariance::Scaled { factor: 100.0, rho: 0.6 }, seed);
                c.noise = Noise::Gaussian { sigma: 10.0 };
                c
            }
        }
        Preset::S2 => {
            let delta = positive_knob(k, which.knob())?;
            let b = SparseBetaSpec::alternating_prefix(10, delta / 40f64.sqrt()).build(100, &mut rng)?;
            base(300, 100, vec![100, 200], vec![b.clone(), scaled(&b, -1.0), b], toeplitz, seed)
        }
        Preset::S3 => {
            let n = integer_knob(k, which.knob(), 40, 1_000_000)?;
            let b = SparseBetaSpec::alternating_prefix(4, 0.4).build(100, &mut rng)?;
            let nb = scaled(&b, -1.0);
            base(
                n,
                100,
                vec![n / 4, n / 2, 3 * n / 4],
                vec![b.clone(), nb.clone(), b, nb],
                Covariance::Identity,
                seed,
            )
        }
        Preset::S4 => {
            let kappa = positive_knob(k, which.knob())?;
            let bar = SparseBetaSpec::alternating_prefix(10, 1.0).build(50, &mut rng)?;
            let r2 = 2f64.sqrt();
            let c = [2.0, -2.0, r2, -r2, 1.0, -1.0].map(|c| c * kappa / 10f64.sqrt());
            base(
                840,
                50,
                vec![60, 120, 240, 360, 600],
                c.iter().map(|&c| scaled(&bar, c)).collect(),
                Covariance::Identity,
                seed,
            )
        }
        Preset::EHeavy | Preset::EDep => {
            let delta = positive_knob(k, which.knob())?;
            let b = SparseBetaSpec::alternating_prefix(2, delta / 2.0).build(100, &mut rng)?;
            let mut c = base(300, 100, vec![100, 200], vec![b.clone(), scaled(&b, -1.0), b], Covariance::Identity, seed);
            if which == Preset::EHeavy {
                c.noise = Noise::StudentT5Scaled { sigma: 1.0 };
                c.covariate_process = CovariateProcess::StudentT5;
            } else {
                c.noise = Noise::Ar1 { phi: 0.3, sigma: 1.0 };
                c.covariate_process = CovariateProcess::Ar1 { phi: 0.3 };
            }
            c
        }
        Preset::A1 => {
            let delta = positive_knob(k, which.knob())?;
            let b = SparseBetaSpec::alternating_prefix(2, delta / 2.0).build(100, &mut rng)?;
            let theta = rng.random_range(50..=250);
            base(300, 100, vec![theta], vec![b.clone(), scaled(&b, -1.0)], Covariance::Identity, seed)
        }
        Preset::Rt => {
            let p = integer_knob(k, which.knob(), 10, 100_000)?;
            let n = 300;
            let b = SparseBetaSpec::alternating_prefix(10, 1.6 / 10f64.sqrt()).build(p, &mut rng)?;
            base(n, p, vec![n / 3, 2 * n / 3], vec![b.clone(), scaled(&b, -1.0), b], toeplitz, seed)
        }
    };
    config.validate()?;
    Ok(config)
}
