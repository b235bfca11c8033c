//! Cross-validated comparison of quality parametrizations.
//!
//! Reference stations are split into k folds; for each fold the
//! held-out stations are predicted from the remaining data under four
//! different quality assignments (reference-only baseline, everything
//! trusted, fixed per-class scores, evolved scores) and the signed
//! prediction errors are pooled into per-fold and aggregate metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataio::DataError;
use crate::evolve::{self, EvolveConfig, EvolveError};
use crate::fsutil::atomic_write;
use crate::geo::{Dataset, DomainError, GeoPoint, SourceClass, StationId};
use crate::gpr::{GprError, GprModel};
use crate::kernel::CombinedKernelParams;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("fold count must be between 1 and the number of stations ({n}), got {k}")]
    BadFoldCount { k: usize, n: usize },
    #[error("cannot compute statistics over an empty error list")]
    EmptyErrors,
    #[error("histogram bin width must be finite and positive, got {0}")]
    BadBinWidth(f64),
    #[error("no evaluation slices (dataset holds too few distinct slices)")]
    NoEvalSlices,
    #[error("the learned model needs nonempty training slices")]
    NoTrainSlices,
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Gpr(#[from] GprError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
}

/// A quality parametrization to evaluate.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    /// Reference stations only, all fully trusted.
    Baseline,
    /// Reference plus volunteered stations, all fully trusted.
    NaiveFusion,
    /// Fixed per-class scores.
    APriori { q_reference: f64, q_volunteered: f64 },
    /// Scores learned by the evolutionary search on the training
    /// slices of each fold.
    Learned { config: EvolveConfig },
}

impl ModelSpec {
    pub fn label(&self) -> &'static str {
        match self {
            ModelSpec::Baseline => "baseline",
            ModelSpec::NaiveFusion => "naive_fusion",
            ModelSpec::APriori { .. } => "a_priori",
            ModelSpec::Learned { .. } => "learned",
        }
    }

    /// The usual fixed scores: trusted hardware slightly below one,
    /// volunteered hardware markedly lower.
    pub fn a_priori_default() -> Self {
        ModelSpec::APriori { q_reference: 0.98, q_volunteered: 0.81 }
    }
}

/// Splits station ids into `k` folds: the id-sorted list is shuffled
/// once with a seeded generator and dealt round-robin, so fold sizes
/// differ by at most one and the same seed reproduces the same folds.
pub fn kfold(
    ids: &[StationId],
    k: usize,
    seed: u64,
) -> Result<Vec<BTreeSet<StationId>>, EvalError> {
    if k == 0 || k > ids.len() {
        return Err(EvalError::BadFoldCount { k, n: ids.len() });
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != ids.len() {
        return Err(EvalError::BadFoldCount { k, n: sorted.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let mut folds = vec![BTreeSet::new(); k];
    for (i, id) in sorted.into_iter().enumerate() {
        folds[i % k].insert(id);
    }
    Ok(folds)
}

/// Mean absolute error and the population standard deviation of the
/// absolute errors.
pub fn mae_and_sd(errors: &[f64]) -> Result<(f64, f64), EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyErrors);
    }
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    let mae = abs.iter().sum::<f64>() / abs.len() as f64;
    Ok((mae, population_sd(&abs)))
}

/// Population standard deviation (of signed values).
pub fn population_sd(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

/// Histogram of the errors with bins aligned to integer multiples of
/// `bin_width` (bin `k` covers `[k*w, (k+1)*w)`). The returned bins are
/// contiguous from the smallest to the largest populated bin; interior
/// empty bins are kept with a zero count.
pub fn histogram(errors: &[f64], bin_width: f64) -> Result<Vec<HistogramBin>, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyErrors);
    }
    if !bin_width.is_finite() || bin_width <= 0.0 {
        return Err(EvalError::BadBinWidth(bin_width));
    }
    let indices: Vec<i64> = errors.iter().map(|e| (e / bin_width).floor() as i64).collect();
    let lo = *indices.iter().min().expect("nonempty");
    let hi = *indices.iter().max().expect("nonempty");
    let mut counts = vec![0u64; (hi - lo + 1) as usize];
    for i in indices {
        counts[(i - lo) as usize] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(offset, count)| {
            let k = lo + offset as i64;
            HistogramBin { lo: k as f64 * bin_width, hi: (k + 1) as f64 * bin_width, count }
        })
        .collect())
}

/// Evaluation controls. Empty slice sets mean "derive from the data":
/// the distinct observed slices are split in half, the first half
/// training and the second half evaluation.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub k: usize,
    pub seed: u64,
    pub kernel: CombinedKernelParams,
    pub train_slices: BTreeSet<u32>,
    pub eval_slices: BTreeSet<u32>,
    pub histogram_bin_width: f64,
}

impl EvalOptions {
    pub fn new(kernel: CombinedKernelParams, k: usize, seed: u64) -> Self {
        EvalOptions {
            k,
            seed,
            kernel,
            train_slices: BTreeSet::new(),
            eval_slices: BTreeSet::new(),
            histogram_bin_width: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    pub mae_c: f64,
    pub sd_abs_c: f64,
    pub sd_signed_c: f64,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct ModelReport {
    pub label: &'static str,
    pub mae_c: f64,
    pub sd_abs_c: f64,
    pub sd_signed_c: f64,
    pub n: usize,
    pub folds: Vec<FoldReport>,
    pub histogram: Vec<HistogramBin>,
    /// Pooled signed errors (prediction minus observation).
    pub errors: Vec<f64>,
    /// For the learned model: one quality map per fold.
    pub learned_qualities: Vec<BTreeMap<StationId, f64>>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub k: usize,
    pub train_slices: BTreeSet<u32>,
    pub eval_slices: BTreeSet<u32>,
    pub models: Vec<ModelReport>,
}

impl EvalReport {
    pub fn model(&self, label: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.label == label)
    }
}

fn resolve_slices(
    all: &BTreeSet<u32>,
    options: &EvalOptions,
    needs_training: bool,
) -> Result<(BTreeSet<u32>, BTreeSet<u32>), EvalError> {
    let (train, eval) = if options.train_slices.is_empty() && options.eval_slices.is_empty() {
        let slices: Vec<u32> = all.iter().copied().collect();
        let half = slices.len() / 2;
        (
            slices[..half].iter().copied().collect::<BTreeSet<u32>>(),
            slices[half..].iter().copied().collect::<BTreeSet<u32>>(),
        )
    } else {
        (options.train_slices.clone(), options.eval_slices.clone())
    };
    if eval.is_empty() {
        return Err(EvalError::NoEvalSlices);
    }
    if needs_training && train.is_empty() {
        return Err(EvalError::NoTrainSlices);
    }
    Ok((train, eval))
}

/// Runs the full comparison. Deterministic in `options.seed` (fold
/// assignment) and the per-model evolve seeds; the learned model gets
/// `config.seed + fold` so folds explore independent partitions.
pub fn run_evaluation(
    reference: &Dataset,
    volunteered: &Dataset,
    specs: &[ModelSpec],
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let merged = reference.merge(volunteered)?;
    let needs_training = specs.iter().any(|s| matches!(s, ModelSpec::Learned { .. }));
    let (train_slices, eval_slices) = resolve_slices(&merged.slices(), options, needs_training)?;

    let ref_ids: Vec<StationId> = reference.station_ids().cloned().collect();
    let folds = kfold(&ref_ids, options.k, options.seed)?;

    let mut models = Vec::with_capacity(specs.len());
    for spec in specs {
        models.push(evaluate_spec(
            spec,
            reference,
            volunteered,
            &folds,
            &train_slices,
            &eval_slices,
            options,
        )?);
    }

    Ok(EvalReport { k: options.k, train_slices, eval_slices, models })
}

fn evaluate_spec(
    spec: &ModelSpec,
    reference: &Dataset,
    volunteered: &Dataset,
    folds: &[BTreeSet<StationId>],
    train_slices: &BTreeSet<u32>,
    eval_slices: &BTreeSet<u32>,
    options: &EvalOptions,
) -> Result<ModelReport, EvalError> {
    let mut pooled: Vec<f64> = Vec::new();
    let mut fold_reports = Vec::with_capacity(folds.len());
    let mut learned_qualities = Vec::new();

    for (fold, held) in folds.iter().enumerate() {
        let train_ref = reference.remove_stations(held);

        // Conditioning data and quality map for this fold.
        let (conditioning, qualities) = match spec {
            ModelSpec::Baseline => {
                let q = uniform_qualities(&train_ref, 1.0);
                (train_ref.clone(), q)
            }
            ModelSpec::NaiveFusion => {
                let merged = train_ref.merge(volunteered)?;
                let q = uniform_qualities(&merged, 1.0);
                (merged, q)
            }
            ModelSpec::APriori { q_reference, q_volunteered } => {
                let merged = train_ref.merge(volunteered)?;
                let q = merged
                    .stations()
                    .iter()
                    .map(|s| {
                        let q = match s.source {
                            SourceClass::Reference => *q_reference,
                            SourceClass::Volunteered => *q_volunteered,
                        };
                        (s.id.clone(), q)
                    })
                    .collect();
                (merged, q)
            }
            ModelSpec::Learned { config } => {
                let mut config = config.clone();
                config.kernel = options.kernel;
                config.seed = config.seed.wrapping_add(fold as u64);
                let result = evolve::run(
                    &train_ref.filter_slices(train_slices),
                    &volunteered.filter_slices(train_slices),
                    &config,
                )?;
                learned_qualities.push(result.final_qualities.clone());
                (train_ref.merge(volunteered)?, result.final_qualities)
            }
        };

        let mut errors = Vec::new();
        for slice in eval_slices {
            let conditioning_obs = conditioning.slice_quality_observations(*slice, &qualities)?;
            if conditioning_obs.is_empty() {
                log::warn!("slice {slice} has no conditioning observations; skipping");
                continue;
            }
            let model = GprModel::fit(conditioning_obs, options.kernel)?;
            let mut targets = Vec::new();
            let mut points: Vec<GeoPoint> = Vec::new();
            for obs in reference.observations() {
                if obs.slice == *slice && held.contains(&obs.station_id) {
                    let station =
                        reference.station(&obs.station_id).expect("held-out station exists");
                    targets.push(obs.value_c);
                    points.push(station.location);
                }
            }
            for (prediction, target) in model.predict(&points).iter().zip(&targets) {
                errors.push(prediction.mean_c - target);
            }
        }

        let (mae_c, sd_abs_c) = mae_and_sd(&errors)?;
        fold_reports.push(FoldReport {
            fold,
            mae_c,
            sd_abs_c,
            sd_signed_c: population_sd(&errors),
            n: errors.len(),
        });
        pooled.extend(errors);
    }

    let (mae_c, sd_abs_c) = mae_and_sd(&pooled)?;
    let histogram = histogram(&pooled, options.histogram_bin_width)?;
    Ok(ModelReport {
        label: spec.label(),
        mae_c,
        sd_abs_c,
        sd_signed_c: population_sd(&pooled),
        n: pooled.len(),
        folds: fold_reports,
        histogram,
        errors: pooled,
        learned_qualities,
    })
}

fn uniform_qualities(data: &Dataset, q: f64) -> BTreeMap<StationId, f64> {
    data.station_ids().map(|id| (id.clone(), q)).collect()
}

/// `report.csv`: one row per model and fold.
pub fn write_report_csv(path: impl AsRef<Path>, report: &EvalReport) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let path = path.as_ref();
    let as_err = |e: csv::Error| DataError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    wtr.write_record(["model", "fold", "mae_c", "sd_abs_c", "sd_signed_c", "n"]).map_err(as_err)?;
    for model in &report.models {
        for fold in &model.folds {
            wtr.write_record([
                model.label.to_owned(),
                fold.fold.to_string(),
                fold.mae_c.to_string(),
                fold.sd_abs_c.to_string(),
                fold.sd_signed_c.to_string(),
                fold.n.to_string(),
            ])
            .map_err(as_err)?;
        }
    }
    let bytes = wtr.into_inner().expect("writing to a Vec cannot fail");
    atomic_write(path, &bytes).map_err(|e| DataError::Io { path: path.to_path_buf(), source: e })
}

/// `aggregate.csv`: one row per model with pooled statistics.
pub fn write_aggregate_csv(path: impl AsRef<Path>, report: &EvalReport) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let path = path.as_ref();
    let as_err = |e: csv::Error| DataError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    wtr.write_record(["model", "mae_c", "sd_abs_c"]).map_err(as_err)?;
    for model in &report.models {
        wtr.write_record([model.label.to_owned(), model.mae_c.to_string(), model.sd_abs_c.to_string()])
            .map_err(as_err)?;
    }
    let bytes = wtr.into_inner().expect("writing to a Vec cannot fail");
    atomic_write(path, &bytes).map_err(|e| DataError::Io { path: path.to_path_buf(), source: e })
}

/// `histogram.csv`: one row per model and bin.
pub fn write_histogram_csv(path: impl AsRef<Path>, report: &EvalReport) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let path = path.as_ref();
    let as_err = |e: csv::Error| DataError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    wtr.write_record(["model", "bin_lo", "bin_hi", "count"]).map_err(as_err)?;
    for model in &report.models {
        for bin in &model.histogram {
            wtr.write_record([
                model.label.to_owned(),
                bin.lo.to_string(),
                bin.hi.to_string(),
                bin.count.to_string(),
            ])
            .map_err(as_err)?;
        }
    }
    let bytes = wtr.into_inner().expect("writing to a Vec cannot fail");
    atomic_write(path, &bytes).map_err(|e| DataError::Io { path: path.to_path_buf(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ids(n: usize) -> Vec<StationId> {
        (0..n).map(|i| StationId::new(format!("s{i:03}"))).collect()
    }

    #[test]
    fn kfold_shapes_and_disjointness() {
        let folds = kfold(&ids(48), 10, 42).unwrap();
        assert_eq!(folds.len(), 10);
        let mut sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![4, 4, 5, 5, 5, 5, 5, 5, 5, 5]);
        let mut union = BTreeSet::new();
        for fold in &folds {
            for id in fold {
                assert!(union.insert(id.clone()), "station {id} appears in two folds");
            }
        }
        assert_eq!(union.len(), 48);
    }

    #[test]
    fn kfold_is_deterministic_and_seed_sensitive() {
        let a = kfold(&ids(20), 5, 1).unwrap();
        let b = kfold(&ids(20), 5, 1).unwrap();
        let c = kfold(&ids(20), 5, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn kfold_rejects_bad_k() {
        assert!(matches!(kfold(&ids(5), 0, 0), Err(EvalError::BadFoldCount { .. })));
        assert!(matches!(kfold(&ids(5), 6, 0), Err(EvalError::BadFoldCount { .. })));
        assert!(kfold(&ids(5), 5, 0).is_ok());
    }

    #[test]
    fn mae_and_sd_reference_values() {
        // mean(|1|, |-1|, |2|) = 4/3; population variance of (1, 1, 2)
        // is 2/9.
        let (mae, sd) = mae_and_sd(&[1.0, -1.0, 2.0]).unwrap();
        assert_relative_eq!(mae, 4.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(sd, (2.0f64 / 9.0).sqrt(), epsilon = 1e-15);
        assert!(matches!(mae_and_sd(&[]), Err(EvalError::EmptyErrors)));

        let (mae, sd) = mae_and_sd(&[-2.5]).unwrap();
        assert_relative_eq!(mae, 2.5);
        assert_relative_eq!(sd, 0.0);
    }

    #[test]
    fn signed_sd_differs_from_absolute_sd() {
        let errors = [1.0, -1.0, 1.0, -1.0];
        let (_, sd_abs) = mae_and_sd(&errors).unwrap();
        assert_relative_eq!(sd_abs, 0.0);
        assert_relative_eq!(population_sd(&errors), 1.0);
    }

    #[test]
    fn histogram_bins_are_aligned_and_contiguous() {
        let bins = histogram(&[-0.4, 0.2, 0.3, 2.5], 1.0).unwrap();
        assert_eq!(bins.len(), 4);
        assert_relative_eq!(bins[0].lo, -1.0);
        assert_relative_eq!(bins[0].hi, 0.0);
        assert_eq!(bins[0].count, 1);
        assert_eq!(bins[1].count, 2);
        // The empty interior bin [1, 2) is kept.
        assert_eq!(bins[2].count, 0);
        assert_eq!(bins[3].count, 1);
        assert_relative_eq!(bins[3].lo, 2.0);

        for pair in bins.windows(2) {
            assert_relative_eq!(pair[0].hi, pair[1].lo);
        }
        let total: u64 = bins.iter().map(|b| b.count).sum();
        assert_eq!(total, 4);
    }

    #[test]
    fn histogram_fractional_width_and_errors() {
        let bins = histogram(&[0.25, 0.74], 0.5).unwrap();
        assert_eq!(bins.len(), 2);
        assert_relative_eq!(bins[0].lo, 0.0);
        assert_relative_eq!(bins[1].lo, 0.5);
        assert!(matches!(histogram(&[], 1.0), Err(EvalError::EmptyErrors)));
        assert!(matches!(histogram(&[1.0], 0.0), Err(EvalError::BadBinWidth(_))));
        assert!(matches!(histogram(&[1.0], f64::NAN), Err(EvalError::BadBinWidth(_))));
    }

    #[test]
    fn boundary_value_lands_in_upper_bin() {
        let bins = histogram(&[1.0], 1.0).unwrap();
        assert_eq!(bins.len(), 1);
        assert_relative_eq!(bins[0].lo, 1.0);
        assert_relative_eq!(bins[0].hi, 2.0);
    }
}
