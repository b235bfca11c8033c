//! Gaussian process regression on the combined Matern + quality
//! kernel, with the sample mean of the training targets as the prior
//! mean (ordinary kriging style centering).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::geo::{GeoPoint, QualityObservation};
use crate::kernel::{build_gram, cross_cov, matern_cov, CombinedKernelParams, MaternParams, QualityKernelParams};

/// Number of times the jitter is escalated (tenfold each time) before
/// a factorization failure is reported.
const JITTER_ESCALATIONS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum GprError {
    #[error("cannot fit a model on an empty training set")]
    EmptyTrainingSet,
    #[error(
        "Gram matrix not positive definite after jitter escalation \
         (n = {n}, final jitter = {final_jitter:.3e}, diagonal in [{diag_min:.6e}, {diag_max:.6e}])"
    )]
    CholeskyFailure { n: usize, final_jitter: f64, diag_min: f64, diag_max: f64 },
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("no hyperparameter candidate produced a usable model")]
    AllCandidatesFailed,
    #[error("leave-one-out selection needs at least two observations")]
    TooFewForSearch,
    #[error(transparent)]
    Kernel(#[from] crate::kernel::KernelError),
}

/// Posterior mean and variance at a single query point, in degrees
/// Celsius and squared degrees Celsius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean_c: f64,
    pub variance_c2: f64,
}

/// A fitted model: the training set, the kernel parameters actually
/// used (including any escalated jitter), the Cholesky factor of the
/// Gram matrix and the precomputed weight vector.
#[derive(Debug, Clone)]
pub struct GprModel {
    training: Vec<QualityObservation>,
    params: CombinedKernelParams,
    mean_offset: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl GprModel {
    /// Fits the model: builds the Gram matrix, factorizes it (escalating
    /// the jitter tenfold up to three times if the factorization fails)
    /// and solves for the weights of the centered targets.
    pub fn fit(
        training: Vec<QualityObservation>,
        params: CombinedKernelParams,
    ) -> Result<Self, GprError> {
        if training.is_empty() {
            return Err(GprError::EmptyTrainingSet);
        }
        let n = training.len();
        let mean_offset = training.iter().map(|o| o.value()).sum::<f64>() / n as f64;
        let centered =
            DVector::from_iterator(n, training.iter().map(|o| o.value() - mean_offset));

        // Build the Gram matrix once without jitter, then retry the
        // factorization with increasing diagonal shifts.
        let base_params = params.with_jitter(0.0).expect("zero jitter is valid");
        let base = build_gram(&training, &base_params);
        let variance = params.matern.variance();
        let mut jitter = params.jitter;
        for attempt in 0..=JITTER_ESCALATIONS {
            let mut gram = base.clone();
            for i in 0..n {
                gram[(i, i)] += jitter;
            }
            match Cholesky::new(gram) {
                Some(chol) => {
                    if attempt > 0 {
                        log::warn!("gram factorization needed jitter escalation to {jitter:.3e}");
                    }
                    let alpha = chol.solve(&centered);
                    let params = params.with_jitter(jitter).expect("escalated jitter is valid");
                    return Ok(GprModel { training, params, mean_offset, chol, alpha });
                }
                None if attempt < JITTER_ESCALATIONS => {
                    jitter = if jitter > 0.0 { jitter * 10.0 } else { 1e-10 * variance };
                }
                None => break,
            }
        }
        let diag_min = (0..n).map(|i| base[(i, i)] + jitter).fold(f64::INFINITY, f64::min);
        let diag_max = (0..n).map(|i| base[(i, i)] + jitter).fold(f64::NEG_INFINITY, f64::max);
        Err(GprError::CholeskyFailure { n, final_jitter: jitter, diag_min, diag_max })
    }

    pub fn training(&self) -> &[QualityObservation] {
        &self.training
    }

    /// Kernel parameters in effect, with `jitter` reflecting any
    /// escalation that happened during the fit.
    pub fn params(&self) -> &CombinedKernelParams {
        &self.params
    }

    pub fn mean_offset(&self) -> f64 {
        self.mean_offset
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Lower-triangular Cholesky factor of the Gram matrix.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Posterior mean and variance at each query point. The variance
    /// is clamped to `[0, variance]`; it never includes the quality
    /// noise or jitter terms.
    pub fn predict(&self, points: &[GeoPoint]) -> Vec<Prediction> {
        if points.is_empty() {
            return Vec::new();
        }
        let cross = cross_cov(&self.training, points, &self.params);
        let solved = self.chol.solve(&cross);
        let prior = matern_cov(0.0, &self.params.matern);
        points
            .iter()
            .enumerate()
            .map(|(j, _)| {
                let k = cross.column(j);
                let mean_c = self.mean_offset + self.alpha.dot(&k);
                let variance_c2 = (prior - k.dot(&solved.column(j))).clamp(0.0, prior);
                Prediction { mean_c, variance_c2 }
            })
            .collect()
    }
}

/// Exhaustive search over `(length_scale, variance, lambda)` triples,
/// scored by leave-one-out squared prediction error: each observation
/// is predicted from a model refitted on the remaining ones. The
/// candidate with the smallest total score wins; ties keep the first.
/// Candidates whose fits fail anywhere are skipped with a warning.
pub fn grid_search_hyperparams(
    obs: &[QualityObservation],
    candidates: &[(f64, f64, f64)],
    base: &CombinedKernelParams,
) -> Result<CombinedKernelParams, GprError> {
    if candidates.is_empty() {
        return Err(GprError::EmptyGrid);
    }
    if obs.len() < 2 {
        return Err(GprError::TooFewForSearch);
    }
    let mut best: Option<(f64, CombinedKernelParams)> = None;
    for &(length_scale, variance, lambda) in candidates {
        let matern = MaternParams::new(base.matern.nu(), length_scale, variance)?;
        let quality = QualityKernelParams::new(lambda)?;
        let params = CombinedKernelParams::new(matern, quality, base.metric);
        match loo_squared_error(obs, &params) {
            Ok(score) => {
                if best.as_ref().is_none_or(|(s, _)| score < *s) {
                    best = Some((score, params));
                }
            }
            Err(err) => {
                log::warn!(
                    "skipping candidate (l = {length_scale}, s2 = {variance}, lambda = {lambda}): {err}"
                );
            }
        }
    }
    best.map(|(_, params)| params).ok_or(GprError::AllCandidatesFailed)
}

/// Total leave-one-out squared error of `params` on `obs`.
fn loo_squared_error(
    obs: &[QualityObservation],
    params: &CombinedKernelParams,
) -> Result<f64, GprError> {
    let mut total = 0.0;
    for i in 0..obs.len() {
        let mut rest = obs.to_vec();
        let held = rest.remove(i);
        let model = GprModel::fit(rest, *params)?;
        let pred = model.predict(&[held.location]);
        total += (pred[0].mean_c - held.value()).powi(2);
    }
    Ok(total)
}
