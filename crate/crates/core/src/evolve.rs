//! Evolutionary search for per-station quality scores.
//!
//! Each generation carries one quality score per station. A step draws
//! a random partition of the stations into a prediction set, an
//! unchanged set and a mutation set, evaluates three candidate quality
//! maps (identity, mutate up, mutate down on the mutation set) by how
//! well the remaining stations predict the prediction set across the
//! training slices, and keeps the best candidate unless it is worse
//! than the parent, in which case the parent survives (rollback).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataio::DataError;
use crate::fsutil::atomic_write;
use crate::geo::{Dataset, DomainError, GeoPoint, QualityObservation, SourceClass, StationId};
use crate::gpr::{GprError, GprModel};
use crate::kernel::CombinedKernelParams;

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid evolve configuration: {0}")]
    InvalidConfig(String),
    #[error("evolution needs observations in both the reference and volunteered datasets")]
    EmptyDataset,
    #[error("cannot partition {0} stations (at least 10 are needed for the configured fractions)")]
    TooFewStations(usize),
    #[error("fitness needs nonempty prediction and conditioning sets")]
    EmptyFitnessSet,
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Gpr(#[from] GprError),
}

/// Tunables of the evolutionary search. `new` fills in the defaults;
/// every field can be adjusted before the run.
#[derive(Debug, Clone)]
pub struct EvolveConfig {
    pub kernel: CombinedKernelParams,
    pub seed: u64,
    /// Initial quality score of volunteered stations.
    pub mu: f64,
    /// Fractions of stations assigned to the prediction, unchanged and
    /// mutation sets. Must sum to one.
    pub proportions: (f64, f64, f64),
    /// Fraction of stations seeded into the prediction set by taking
    /// the current quality ranking from the top.
    pub top_quality_fraction: f64,
    pub min_iter: usize,
    pub max_iter: usize,
    /// The run converges when the relative fitness improvement over
    /// this many iterations drops to `convergence_threshold` or below
    /// (checked only once `min_iter` iterations have run).
    pub convergence_window: usize,
    pub convergence_threshold: f64,
    /// Keep reference stations pinned at quality 1.0.
    pub freeze_reference: bool,
}

impl EvolveConfig {
    pub fn new(kernel: CombinedKernelParams, seed: u64) -> Self {
        EvolveConfig {
            kernel,
            seed,
            mu: 0.81,
            proportions: (0.3, 0.5, 0.2),
            top_quality_fraction: 0.2,
            min_iter: 20,
            max_iter: 100,
            convergence_window: 5,
            convergence_threshold: 1e-4,
            freeze_reference: true,
        }
    }

    pub fn validate(&self) -> Result<(), EvolveError> {
        let bad = |msg: String| Err(EvolveError::InvalidConfig(msg));
        if !self.mu.is_finite() || self.mu <= 0.0 || self.mu > 1.0 {
            return bad(format!("mu must be in (0, 1], got {}", self.mu));
        }
        let (p, u, m) = self.proportions;
        for share in [p, u, m] {
            if !share.is_finite() || share <= 0.0 || share >= 1.0 {
                return bad(format!("partition fractions must be in (0, 1), got {share}"));
            }
        }
        if ((p + u + m) - 1.0).abs() > 1e-9 {
            return bad(format!("partition fractions must sum to 1, got {}", p + u + m));
        }
        if !self.top_quality_fraction.is_finite()
            || self.top_quality_fraction < 0.0
            || self.top_quality_fraction > p
        {
            return bad(format!(
                "top quality fraction must be in [0, {p}], got {}",
                self.top_quality_fraction
            ));
        }
        if self.min_iter == 0 || self.min_iter > self.max_iter {
            return bad(format!(
                "need 1 <= min_iter <= max_iter, got {} and {}",
                self.min_iter, self.max_iter
            ));
        }
        if self.convergence_window == 0 {
            return bad("convergence window must be at least 1".to_owned());
        }
        if !self.convergence_threshold.is_finite() || self.convergence_threshold < 0.0 {
            return bad(format!(
                "convergence threshold must be nonnegative, got {}",
                self.convergence_threshold
            ));
        }
        Ok(())
    }
}

/// One state of the search: the quality map, its accepted fitness and
/// the iteration counter (0 for the initial generation).
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub qualities: BTreeMap<StationId, f64>,
    pub fitness: f64,
    pub iteration: usize,
}

/// Disjoint split of the station set for one iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub pred: BTreeSet<StationId>,
    pub unchanged: BTreeSet<StationId>,
    pub mutated: BTreeSet<StationId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantChoice {
    Identity,
    Up,
    Down,
}

impl VariantChoice {
    pub fn label(&self) -> &'static str {
        match self {
            VariantChoice::Identity => "identity",
            VariantChoice::Up => "up",
            VariantChoice::Down => "down",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterReached,
}

/// What one iteration produced: the surviving generation, the variant
/// that won the three-way comparison, and whether it was discarded in
/// favour of the parent.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub generation: Generation,
    pub variant: VariantChoice,
    pub rollback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub accepted_fitness: f64,
    pub variant: VariantChoice,
    pub rollback: bool,
}

#[derive(Debug, Clone)]
pub struct EvolveResult {
    pub final_qualities: BTreeMap<StationId, f64>,
    /// Accepted fitness after each iteration; non-increasing.
    pub fitness_trace: Vec<f64>,
    pub iterations_run: usize,
    pub termination: Termination,
    pub log: Vec<IterationRecord>,
}

/// Raises a quality score, saturating at 1.
pub fn mutate_up(q: f64) -> f64 {
    0.9 * q + 0.1
}

/// Lowers a quality score, never reaching 0.
pub fn mutate_down(q: f64) -> f64 {
    0.9 * q
}

/// Builds the initial generation: reference stations start at quality
/// 1, volunteered stations at `config.mu`, and the fitness is evaluated
/// on a partition drawn from a generator seeded with `config.seed`.
pub fn initialize(
    reference: &Dataset,
    volunteered: &Dataset,
    config: &EvolveConfig,
) -> Result<Generation, EvolveError> {
    config.validate()?;
    let data = merged(reference, volunteered)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    initialize_generation(&data, config, &mut rng)
}

fn merged(reference: &Dataset, volunteered: &Dataset) -> Result<Dataset, EvolveError> {
    if reference.n_observations() == 0 || volunteered.n_observations() == 0 {
        return Err(EvolveError::EmptyDataset);
    }
    Ok(reference.merge(volunteered)?)
}

fn initialize_generation(
    data: &Dataset,
    config: &EvolveConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Generation, EvolveError> {
    let qualities: BTreeMap<StationId, f64> = data
        .stations()
        .iter()
        .map(|s| {
            let q = match s.source {
                SourceClass::Reference => 1.0,
                SourceClass::Volunteered => config.mu,
            };
            (s.id.clone(), q)
        })
        .collect();
    let mut generation = Generation { qualities, fitness: f64::INFINITY, iteration: 0 };
    let part = partition(&generation, config, rng)?;
    generation.fitness = fitness_of_partition(&generation.qualities, &part, data, &config.kernel)?;
    Ok(generation)
}

/// Draws the station partition for one iteration. The prediction set
/// is seeded with the `top_quality_fraction` highest-quality stations
/// (ties broken by station id); everything else is distributed by a
/// shuffle of the id-sorted remainder, so equal seeds give equal
/// partitions.
pub fn partition(
    generation: &Generation,
    config: &EvolveConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Partition, EvolveError> {
    let n = generation.qualities.len();
    if n < 10 {
        return Err(EvolveError::TooFewStations(n));
    }
    let (p_pred, _, p_mut) = config.proportions;
    let pred_n = (p_pred * n as f64).round() as usize;
    let mut_n = (p_mut * n as f64).round() as usize;
    if pred_n == 0 || mut_n == 0 || pred_n + mut_n >= n {
        return Err(EvolveError::TooFewStations(n));
    }

    let mut ranked: Vec<(&StationId, f64)> =
        generation.qualities.iter().map(|(id, q)| (id, *q)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let seed_n = ((config.top_quality_fraction * n as f64).round() as usize).min(pred_n);

    let mut pred: BTreeSet<StationId> =
        ranked[..seed_n].iter().map(|(id, _)| (*id).clone()).collect();
    let mut rest: Vec<&StationId> = ranked[seed_n..].iter().map(|(id, _)| *id).collect();
    rest.sort();
    rest.shuffle(rng);

    let mut remaining = rest.into_iter();
    pred.extend(remaining.by_ref().take(pred_n - seed_n).cloned());
    let mutated: BTreeSet<StationId> = remaining.by_ref().take(mut_n).cloned().collect();
    let unchanged: BTreeSet<StationId> = remaining.cloned().collect();
    Ok(Partition { pred, unchanged, mutated })
}

/// Total squared prediction error of the prediction set, conditioned
/// per time slice on the conditioning set. Both lists may span several
/// slices; each slice gets its own regression.
pub fn fitness(
    pred: &[QualityObservation],
    conditioning: &[QualityObservation],
    kernel: &CombinedKernelParams,
) -> Result<f64, EvolveError> {
    if pred.is_empty() || conditioning.is_empty() {
        return Err(EvolveError::EmptyFitnessSet);
    }
    debug_assert!(
        {
            let idents: BTreeSet<(&StationId, u32)> =
                conditioning.iter().map(|o| (o.station_id(), o.slice())).collect();
            pred.iter().all(|o| !idents.contains(&(o.station_id(), o.slice())))
        },
        "prediction and conditioning sets must not share observations"
    );

    let mut pred_by_slice: BTreeMap<u32, Vec<&QualityObservation>> = BTreeMap::new();
    for o in pred {
        pred_by_slice.entry(o.slice()).or_default().push(o);
    }

    let mut total = 0.0;
    for (slice, slice_pred) in pred_by_slice {
        let cond: Vec<QualityObservation> =
            conditioning.iter().filter(|o| o.slice() == slice).cloned().collect();
        let model = GprModel::fit(cond, *kernel)?;
        let points: Vec<GeoPoint> = slice_pred.iter().map(|o| o.location).collect();
        let predictions = model.predict(&points);
        for (o, p) in slice_pred.iter().zip(&predictions) {
            total += (p.mean_c - o.value()).powi(2);
        }
    }
    Ok(total)
}

/// Fitness of a candidate quality map under a given partition: the
/// prediction set is scored against a model trained on everything else.
fn fitness_of_partition(
    qualities: &BTreeMap<StationId, f64>,
    part: &Partition,
    data: &Dataset,
    kernel: &CombinedKernelParams,
) -> Result<f64, EvolveError> {
    let mut pred = Vec::new();
    let mut cond = Vec::new();
    for slice in data.slices() {
        for qo in data.slice_quality_observations(slice, qualities)? {
            if part.pred.contains(qo.station_id()) {
                pred.push(qo);
            } else {
                cond.push(qo);
            }
        }
    }
    fitness(&pred, &cond, kernel)
}

/// Runs one iteration: draws a partition, scores the identity, up and
/// down variants (ties keep the earlier variant in that order) and
/// rolls back to the parent if even the best variant is worse than the
/// parent's accepted fitness.
pub fn step(
    generation: &Generation,
    data: &Dataset,
    config: &EvolveConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepResult, EvolveError> {
    let part = partition(generation, config, rng)?;
    let frozen: BTreeSet<&StationId> = if config.freeze_reference {
        data.stations()
            .iter()
            .filter(|s| s.source == SourceClass::Reference)
            .map(|s| &s.id)
            .collect()
    } else {
        BTreeSet::new()
    };

    let mutate = |f: fn(f64) -> f64| -> BTreeMap<StationId, f64> {
        generation
            .qualities
            .iter()
            .map(|(id, q)| {
                let q = if part.mutated.contains(id) && !frozen.contains(id) { f(*q) } else { *q };
                (id.clone(), q)
            })
            .collect()
    };

    let candidates = [
        (VariantChoice::Identity, generation.qualities.clone()),
        (VariantChoice::Up, mutate(mutate_up)),
        (VariantChoice::Down, mutate(mutate_down)),
    ];

    let mut best: Option<(f64, VariantChoice, BTreeMap<StationId, f64>)> = None;
    for (variant, qualities) in candidates {
        let score = fitness_of_partition(&qualities, &part, data, &config.kernel)?;
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, variant, qualities));
        }
    }
    let (score, variant, qualities) = best.expect("three candidates were scored");

    if score > generation.fitness {
        Ok(StepResult {
            generation: Generation {
                qualities: generation.qualities.clone(),
                fitness: generation.fitness,
                iteration: generation.iteration + 1,
            },
            variant,
            rollback: true,
        })
    } else {
        Ok(StepResult {
            generation: Generation { qualities, fitness: score, iteration: generation.iteration + 1 },
            variant,
            rollback: false,
        })
    }
}

/// Full search loop. Deterministic in `config.seed`: the partition
/// sequence is the only source of randomness.
pub fn run(
    reference: &Dataset,
    volunteered: &Dataset,
    config: &EvolveConfig,
) -> Result<EvolveResult, EvolveError> {
    config.validate()?;
    let data = merged(reference, volunteered)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut generation = initialize_generation(&data, config, &mut rng)?;

    let mut trace = Vec::with_capacity(config.max_iter);
    let mut log = Vec::with_capacity(config.max_iter);
    let mut termination = Termination::MaxIterReached;
    while generation.iteration < config.max_iter {
        let outcome = step(&generation, &data, config, &mut rng)?;
        generation = outcome.generation;
        trace.push(generation.fitness);
        log.push(IterationRecord {
            iteration: generation.iteration,
            accepted_fitness: generation.fitness,
            variant: outcome.variant,
            rollback: outcome.rollback,
        });

        let it = generation.iteration;
        if it >= config.min_iter && it > config.convergence_window {
            let current = trace[it - 1];
            let before = trace[it - 1 - config.convergence_window];
            let improvement = if before > 0.0 { (before - current) / before } else { 0.0 };
            if improvement <= config.convergence_threshold {
                termination = Termination::Converged;
                break;
            }
        }
    }

    Ok(EvolveResult {
        final_qualities: generation.qualities,
        fitness_trace: trace,
        iterations_run: generation.iteration,
        termination,
        log,
    })
}

/// Writes the per-iteration log as CSV with the columns
/// `iteration,accepted_fitness,variant,rollback`.
pub fn write_iteration_log(
    path: impl AsRef<Path>,
    records: &[IterationRecord],
) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let as_parse = |e: csv::Error| DataError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    wtr.write_record(["iteration", "accepted_fitness", "variant", "rollback"]).map_err(as_parse)?;
    for r in records {
        wtr.write_record([
            r.iteration.to_string(),
            r.accepted_fitness.to_string(),
            r.variant.label().to_string(),
            r.rollback.to_string(),
        ])
        .map_err(as_parse)?;
    }
    let bytes = wtr.into_inner().expect("writing to a Vec cannot fail");
    atomic_write(path, &bytes).map_err(|e| DataError::Io { path: path.to_path_buf(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{GeoPoint, Observation, SensorStation};
    use crate::kernel::{CombinedKernelParams, MaternNu, MaternParams, QualityKernelParams};
    use crate::geo::DistanceMetric;

    fn kernel() -> CombinedKernelParams {
        CombinedKernelParams::new(
            MaternParams::new(MaternNu::ThreeHalves, 0.5, 1.0).unwrap(),
            QualityKernelParams::new(0.25).unwrap(),
            DistanceMetric::EuclideanDegrees,
        )
    }

    fn config(seed: u64) -> EvolveConfig {
        EvolveConfig::new(kernel(), seed)
    }

    /// A small deterministic scenario: `n_ref` reference and `n_vgi`
    /// volunteered stations on a jittered lattice, values from a smooth
    /// field, `n_bad` volunteered stations stuck at a constant.
    fn toy_data(n_ref: usize, n_vgi: usize, n_bad: usize, slices: u32) -> (Dataset, Dataset) {
        let field = |p: GeoPoint, s: u32| {
            20.0 + s as f64 * 0.5 - 1.0 * (p.lat() - 48.0) + 0.5 * (p.lon() - 8.0)
        };
        let spot = |i: usize, n: usize, shift: f64| {
            let cols = (n as f64).sqrt().ceil() as usize;
            let lat = 47.6 + 1.8 * ((i / cols) as f64 + shift) / cols as f64;
            let lon = 7.6 + 1.8 * ((i % cols) as f64 + shift) / cols as f64;
            GeoPoint::new(lat, lon).unwrap()
        };

        let mut ref_stations = Vec::new();
        let mut ref_obs = Vec::new();
        for i in 0..n_ref {
            let id = StationId::new(format!("R{i:03}"));
            let location = spot(i, n_ref, 0.3);
            ref_stations.push(SensorStation { id: id.clone(), location, source: SourceClass::Reference });
            for s in 0..slices {
                ref_obs.push(Observation::new(id.clone(), s, field(location, s)).unwrap());
            }
        }
        let mut vgi_stations = Vec::new();
        let mut vgi_obs = Vec::new();
        for i in 0..n_vgi {
            let id = StationId::new(format!("V{i:03}"));
            let location = spot(i, n_vgi, 0.7);
            vgi_stations.push(SensorStation { id: id.clone(), location, source: SourceClass::Volunteered });
            for s in 0..slices {
                let value = if i < n_bad { 35.0 } else { field(location, s) };
                vgi_obs.push(Observation::new(id.clone(), s, value).unwrap());
            }
        }
        (
            Dataset::with_uniform_quality(ref_stations, ref_obs, 1.0).unwrap(),
            Dataset::with_uniform_quality(vgi_stations, vgi_obs, 1.0).unwrap(),
        )
    }

    #[test]
    fn mutation_algebra() {
        assert_eq!(mutate_up(0.5), 0.55);
        assert_eq!(mutate_up(1.0), 1.0);
        assert_eq!(mutate_down(1.0), 0.9);
        assert_eq!(mutate_down(mutate_up(1.0)), 0.9);
        // Both maps keep scores inside (0, 1].
        for q in [0.001, 0.1, 0.33, 0.5, 0.77, 1.0] {
            let up = mutate_up(q);
            let down = mutate_down(q);
            assert!(up > 0.0 && up <= 1.0);
            assert!(down > 0.0 && down <= 1.0);
            assert!(up >= q);
            assert!(down < q);
        }
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let mut c = config(0);
        c.mu = 0.0;
        assert!(matches!(c.validate(), Err(EvolveError::InvalidConfig(_))));
        let mut c = config(0);
        c.proportions = (0.5, 0.5, 0.2);
        assert!(matches!(c.validate(), Err(EvolveError::InvalidConfig(_))));
        let mut c = config(0);
        c.top_quality_fraction = 0.4;
        assert!(matches!(c.validate(), Err(EvolveError::InvalidConfig(_))));
        let mut c = config(0);
        c.min_iter = 30;
        c.max_iter = 10;
        assert!(matches!(c.validate(), Err(EvolveError::InvalidConfig(_))));
        assert!(config(0).validate().is_ok());
    }

    #[test]
    fn initialize_assigns_class_qualities() {
        let (reference, volunteered) = toy_data(4, 12, 2, 2);
        let generation = initialize(&reference, &volunteered, &config(5)).unwrap();
        assert_eq!(generation.iteration, 0);
        assert!(generation.fitness.is_finite());
        for (id, q) in &generation.qualities {
            if id.as_str().starts_with('R') {
                assert_eq!(*q, 1.0);
            } else {
                assert_eq!(*q, 0.81);
            }
        }
    }

    #[test]
    fn partition_sizes_and_top_seeding() {
        let qualities: BTreeMap<StationId, f64> = (0..100)
            .map(|i| (StationId::new(format!("s{i:03}")), 0.005 + (i as f64) * 0.0099))
            .collect();
        let generation = Generation { qualities, fitness: 1.0, iteration: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let part = partition(&generation, &config(0), &mut rng).unwrap();
        assert_eq!(part.pred.len(), 30);
        assert_eq!(part.unchanged.len(), 50);
        assert_eq!(part.mutated.len(), 20);
        // The 20 highest-quality stations (s080..s099) must all be in
        // the prediction set.
        for i in 80..100 {
            let id = StationId::new(format!("s{i:03}"));
            assert!(part.pred.contains(&id), "top station {id} missing from pred");
        }
        // Disjoint and complete.
        let mut union = part.pred.clone();
        union.extend(part.unchanged.iter().cloned());
        union.extend(part.mutated.iter().cloned());
        assert_eq!(union.len(), 100);
    }

    #[test]
    fn partition_is_deterministic_in_the_seed() {
        let (reference, volunteered) = toy_data(4, 12, 0, 1);
        let data = reference.merge(&volunteered).unwrap();
        let qualities = data.qualities().clone();
        let generation = Generation { qualities, fitness: 1.0, iteration: 0 };
        let a = partition(&generation, &config(0), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = partition(&generation, &config(0), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = partition(&generation, &config(0), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn partition_rejects_small_populations() {
        let qualities: BTreeMap<StationId, f64> =
            (0..9).map(|i| (StationId::new(format!("s{i}")), 1.0)).collect();
        let generation = Generation { qualities, fitness: 1.0, iteration: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            partition(&generation, &config(0), &mut rng),
            Err(EvolveError::TooFewStations(9))
        ));
    }

    #[test]
    fn fitness_rejects_empty_sets() {
        assert!(matches!(fitness(&[], &[], &kernel()), Err(EvolveError::EmptyFitnessSet)));
    }

    #[test]
    fn step_accepts_improvement_and_rolls_back_regression() {
        let (reference, volunteered) = toy_data(4, 12, 3, 2);
        let data = reference.merge(&volunteered).unwrap();
        let cfg = config(3);

        // A parent claiming perfect fitness forces a rollback.
        let perfect = Generation {
            qualities: data.qualities().clone(),
            fitness: 0.0,
            iteration: 7,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rolled = step(&perfect, &data, &cfg, &mut rng).unwrap();
        assert!(rolled.rollback);
        assert_eq!(rolled.generation.qualities, perfect.qualities);
        assert_eq!(rolled.generation.fitness, 0.0);
        assert_eq!(rolled.generation.iteration, 8);

        // A parent with infinite fitness accepts whatever wins.
        let awful = Generation {
            qualities: data.qualities().clone(),
            fitness: f64::INFINITY,
            iteration: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let accepted = step(&awful, &data, &cfg, &mut rng).unwrap();
        assert!(!accepted.rollback);
        assert!(accepted.generation.fitness.is_finite());
    }

    #[test]
    fn step_freezes_reference_qualities() {
        let (reference, volunteered) = toy_data(6, 14, 3, 2);
        let data = reference.merge(&volunteered).unwrap();
        let cfg = config(11);
        let mut generation = Generation {
            qualities: data.qualities().clone(),
            fitness: f64::INFINITY,
            iteration: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            generation = step(&generation, &data, &cfg, &mut rng).unwrap().generation;
        }
        for (id, q) in &generation.qualities {
            if id.as_str().starts_with('R') {
                assert_eq!(*q, 1.0, "reference {id} must stay frozen");
            }
        }
    }

    #[test]
    fn run_is_deterministic_and_respects_iteration_bounds() {
        let (reference, volunteered) = toy_data(4, 12, 3, 2);
        let mut cfg = config(21);
        cfg.min_iter = 5;
        cfg.max_iter = 12;
        let a = run(&reference, &volunteered, &cfg).unwrap();
        let b = run(&reference, &volunteered, &cfg).unwrap();
        assert_eq!(a.final_qualities, b.final_qualities);
        assert_eq!(a.fitness_trace, b.fitness_trace);
        assert!(a.iterations_run >= cfg.min_iter && a.iterations_run <= cfg.max_iter);
        assert_eq!(a.log.len(), a.iterations_run);
        assert_eq!(a.fitness_trace.len(), a.iterations_run);

        // Accepted fitness never increases.
        for w in a.fitness_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        // Qualities stay in (0, 1] and cover every station.
        assert_eq!(a.final_qualities.len(), 16);
        for q in a.final_qualities.values() {
            assert!(*q > 0.0 && *q <= 1.0);
        }
    }

    #[test]
    fn run_hits_iteration_cap_with_zero_threshold() {
        let (reference, volunteered) = toy_data(4, 12, 2, 2);
        let mut cfg = config(2);
        cfg.min_iter = 20;
        cfg.max_iter = 20;
        cfg.convergence_threshold = 0.0;
        let result = run(&reference, &volunteered, &cfg).unwrap();
        assert_eq!(result.iterations_run, 20);
        // With a zero threshold the run only counts as converged if the
        // improvement over the window is exactly zero.
        let n = result.fitness_trace.len();
        let improved = result.fitness_trace[n - 1 - cfg.convergence_window]
            - result.fitness_trace[n - 1];
        if improved == 0.0 {
            assert_eq!(result.termination, Termination::Converged);
        } else {
            assert_eq!(result.termination, Termination::MaxIterReached);
        }
    }

    #[test]
    fn empty_datasets_are_rejected() {
        let (reference, volunteered) = toy_data(4, 12, 0, 2);
        let empty = reference.filter_slices(&BTreeSet::new());
        assert!(matches!(
            run(&empty, &volunteered, &config(0)),
            Err(EvolveError::EmptyDataset)
        ));
        assert!(matches!(
            initialize(&reference, &empty, &config(0)),
            Err(EvolveError::EmptyDataset)
        ));
    }

    #[test]
    fn iteration_log_round_trips_as_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let records = vec![
            IterationRecord { iteration: 1, accepted_fitness: 3.5, variant: VariantChoice::Down, rollback: false },
            IterationRecord { iteration: 2, accepted_fitness: 3.5, variant: VariantChoice::Up, rollback: true },
        ];
        write_iteration_log(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iteration,accepted_fitness,variant,rollback");
        assert_eq!(lines.next().unwrap(), "1,3.5,down,false");
        assert_eq!(lines.next().unwrap(), "2,3.5,up,true");
    }
}
