//! Covariance functions: Matern kernels over spatial distance plus a
//! quality-dependent noise kernel on the diagonal.
//!
//! The combined covariance between observations `i` and `j` is
//!
//! ```text
//! k(i, j) = matern(d(p_i, p_j)) + [i == j] * lambda / q_i^2
//! ```
//!
//! so a station with a low quality score contributes a large private
//! noise term and is downweighted by the regression, while `q = 1`
//! reduces to ordinary noisy kriging with noise `lambda`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geo::{distance, DistanceMetric, GeoPoint, QualityObservation};

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("length scale must be finite and positive, got {0}")]
    InvalidLengthScale(f64),
    #[error("variance must be finite and positive, got {0}")]
    InvalidVariance(f64),
    #[error("lambda must be finite and positive, got {0}")]
    InvalidLambda(f64),
    #[error("jitter must be finite and nonnegative, got {0}")]
    InvalidJitter(f64),
    #[error("not enough observations to derive kernel parameters")]
    TooFewObservations,
}

/// Smoothness order of the Matern family. Only the three half-integer
/// orders with closed forms are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternParams {
    nu: MaternNu,
    length_scale: f64,
    variance: f64,
}

impl MaternParams {
    pub fn new(nu: MaternNu, length_scale: f64, variance: f64) -> Result<Self, KernelError> {
        if !length_scale.is_finite() || length_scale <= 0.0 {
            return Err(KernelError::InvalidLengthScale(length_scale));
        }
        if !variance.is_finite() || variance <= 0.0 {
            return Err(KernelError::InvalidVariance(variance));
        }
        Ok(MaternParams { nu, length_scale, variance })
    }

    pub fn nu(&self) -> MaternNu {
        self.nu
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityKernelParams {
    lambda: f64,
}

impl QualityKernelParams {
    pub fn new(lambda: f64) -> Result<Self, KernelError> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(KernelError::InvalidLambda(lambda));
        }
        Ok(QualityKernelParams { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Everything needed to evaluate the combined kernel: the Matern part,
/// the quality noise scale, the distance metric, and a diagonal jitter
/// added for numerical stability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedKernelParams {
    pub matern: MaternParams,
    pub quality: QualityKernelParams,
    pub metric: DistanceMetric,
    pub jitter: f64,
}

impl CombinedKernelParams {
    /// Combines the parts with the default jitter of
    /// `1e-10 * variance`.
    pub fn new(matern: MaternParams, quality: QualityKernelParams, metric: DistanceMetric) -> Self {
        CombinedKernelParams { matern, quality, metric, jitter: 1e-10 * matern.variance }
    }

    pub fn with_jitter(mut self, jitter: f64) -> Result<Self, KernelError> {
        if !jitter.is_finite() || jitter < 0.0 {
            return Err(KernelError::InvalidJitter(jitter));
        }
        self.jitter = jitter;
        Ok(self)
    }

    /// Derives length scale and variance from data: the length scale is
    /// the median pairwise distance between the observation locations
    /// and the variance is the sample variance of the values. Needs at
    /// least two observations at two distinct locations.
    pub fn data_driven(
        obs: &[QualityObservation],
        nu: MaternNu,
        lambda: f64,
        metric: DistanceMetric,
    ) -> Result<Self, KernelError> {
        if obs.len() < 2 {
            return Err(KernelError::TooFewObservations);
        }
        let mut dists = Vec::with_capacity(obs.len() * (obs.len() - 1) / 2);
        for i in 0..obs.len() {
            for j in (i + 1)..obs.len() {
                dists.push(distance(obs[i].location, obs[j].location, metric));
            }
        }
        dists.sort_by(|a, b| a.total_cmp(b));
        let mid = dists.len() / 2;
        let median = if dists.len() % 2 == 0 {
            0.5 * (dists[mid - 1] + dists[mid])
        } else {
            dists[mid]
        };
        if median <= 0.0 {
            return Err(KernelError::TooFewObservations);
        }

        let n = obs.len() as f64;
        let mean = obs.iter().map(|o| o.value()).sum::<f64>() / n;
        let var = obs.iter().map(|o| (o.value() - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // A flat field still needs a positive prior variance.
        let var = if var > 0.0 { var } else { 1.0 };

        let matern = MaternParams::new(nu, median, var)?;
        let quality = QualityKernelParams::new(lambda)?;
        Ok(CombinedKernelParams::new(matern, quality, metric))
    }
}

/// Matern covariance at distance `d >= 0`.
pub fn matern_cov(d: f64, params: &MaternParams) -> f64 {
    assert!(d.is_finite() && d >= 0.0, "matern_cov needs a finite nonnegative distance, got {d}");
    let s2 = params.variance;
    let r = d / params.length_scale;
    match params.nu {
        MaternNu::Half => s2 * (-r).exp(),
        MaternNu::ThreeHalves => {
            let t = 3f64.sqrt() * r;
            s2 * (1.0 + t) * (-t).exp()
        }
        MaternNu::FiveHalves => {
            let t = 5f64.sqrt() * r;
            s2 * (1.0 + t + 5.0 * r * r / 3.0) * (-t).exp()
        }
    }
}

/// Quality noise kernel: `lambda / q^2` when both indices refer to the
/// same observation, zero otherwise. Keyed on observation identity,
/// not on coordinates, so co-located stations do not share noise.
pub fn quality_cov(same_observation: bool, q: f64, params: &QualityKernelParams) -> f64 {
    assert!(q.is_finite() && q > 0.0, "quality_cov needs a positive quality, got {q}");
    if same_observation {
        params.lambda / (q * q)
    } else {
        0.0
    }
}

/// Dense Gram matrix of the combined kernel over a training set.
/// Each off-diagonal entry is evaluated once and mirrored, so the
/// result is bitwise symmetric; the diagonal carries the quality noise
/// plus jitter.
pub fn build_gram(obs: &[QualityObservation], params: &CombinedKernelParams) -> DMatrix<f64> {
    assert!(!obs.is_empty(), "build_gram needs at least one observation");
    let n = obs.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let d = distance(obs[i].location, obs[j].location, params.metric);
            let value = matern_cov(d, &params.matern);
            if i == j {
                gram[(i, i)] =
                    value + quality_cov(true, obs[i].quality(), &params.quality) + params.jitter;
            } else {
                gram[(i, j)] = value;
                gram[(j, i)] = value;
            }
        }
    }
    gram
}

/// Cross-covariance between training observations (rows) and query
/// points (columns). Query points never receive the noise term, even
/// if they coincide with a training location.
pub fn cross_cov(
    obs: &[QualityObservation],
    queries: &[GeoPoint],
    params: &CombinedKernelParams,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(obs.len(), queries.len());
    for (i, o) in obs.iter().enumerate() {
        for (j, q) in queries.iter().enumerate() {
            out[(i, j)] = matern_cov(distance(o.location, *q, params.metric), &params.matern);
        }
    }
    out
}
