//! Integration tests for the evolutionary quality search: fitness
//! against the dense oracle, determinism, and the run-level invariants.

mod common;

use common::{kernel_params, oracle_posterior, quality_observation, toy_datasets, OracleInstance, OracleKernel};
use qkrige::evolve::{
    fitness, initialize, mutate_down, mutate_up, partition, run, EvolveConfig, Generation,
    Termination,
};
use qkrige::geo::{DistanceMetric, StationId};
use qkrige::kernel::MaternNu;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn toy_kernel() -> OracleKernel {
    OracleKernel {
        metric: DistanceMetric::EuclideanDegrees,
        nu: MaternNu::ThreeHalves,
        length_scale: 0.3,
        variance: 2.0,
        lambda: 0.4,
        jitter: 1e-10,
    }
}

fn toy_config(seed: u64) -> EvolveConfig {
    let mut config = EvolveConfig::new(kernel_params(&toy_kernel()), seed);
    config.min_iter = 20;
    config.max_iter = 30;
    config
}

#[test]
fn fitness_equals_sum_of_squared_oracle_residuals() {
    let kernel = toy_kernel();
    // Five conditioning stations and three prediction stations, two
    // slices each, with deliberately uneven qualities.
    let coords = [
        (48.1, 8.2),
        (48.4, 8.9),
        (48.8, 8.3),
        (49.2, 9.1),
        (48.6, 8.6),
        (48.3, 9.3),
        (49.0, 8.8),
        (48.9, 9.4),
    ];
    let values = [
        [14.5, 15.1],
        [16.0, 16.4],
        [15.2, 15.9],
        [17.1, 17.5],
        [15.8, 16.1],
        [16.6, 17.0],
        [15.0, 15.6],
        [16.2, 16.9],
    ];
    let qualities = [1.0, 0.8, 0.6, 0.9, 0.7, 0.81, 0.5, 0.95];

    let mut pred = Vec::new();
    let mut cond = Vec::new();
    for slice in 0..2u32 {
        for i in 0..coords.len() {
            let qo = quality_observation(
                i,
                slice,
                coords[i].0,
                coords[i].1,
                values[i][slice as usize],
                qualities[i],
            );
            if i < 3 {
                pred.push(qo);
            } else {
                cond.push(qo);
            }
        }
    }

    let got = fitness(&pred, &cond, &kernel_params(&kernel)).unwrap();

    let mut want = 0.0;
    for slice in 0..2usize {
        let inst = OracleInstance {
            points: coords[3..].to_vec(),
            values: values[3..].iter().map(|v| v[slice]).collect(),
            qualities: qualities[3..].to_vec(),
        };
        for i in 0..3 {
            let (mean, _) = oracle_posterior(&inst, coords[i], &kernel);
            want += (mean - values[i][slice]).powi(2);
        }
    }
    assert!((got - want).abs() < 1e-8, "fitness {got} vs oracle {want}");
}

#[test]
fn initialize_assigns_mu_to_volunteered_and_one_to_reference() {
    let (reference, volunteered) = toy_datasets(4, 20, 3, &[]);
    let config = toy_config(9);
    let generation = initialize(&reference, &volunteered, &config).unwrap();
    assert_eq!(generation.qualities.len(), 20);
    for station in reference.stations() {
        assert_eq!(generation.qualities[&station.id], 1.0);
    }
    for station in volunteered.stations() {
        assert_eq!(generation.qualities[&station.id], config.mu);
    }
    assert!(generation.fitness.is_finite());
}

#[test]
fn run_is_bit_identical_for_a_fixed_seed() {
    let (reference, volunteered) = toy_datasets(4, 22, 3, &[18, 19]);
    let config = toy_config(31);
    let a = run(&reference, &volunteered, &config).unwrap();
    let b = run(&reference, &volunteered, &config).unwrap();
    assert_eq!(a.final_qualities, b.final_qualities);
    assert_eq!(a.fitness_trace, b.fitness_trace);
    assert_eq!(a.iterations_run, b.iterations_run);

    let c = run(&reference, &volunteered, &toy_config(32)).unwrap();
    assert_ne!(
        a.fitness_trace, c.fitness_trace,
        "different seeds should explore different partitions"
    );
}

#[test]
fn accepted_trace_never_increases_and_qualities_stay_legal() {
    let (reference, volunteered) = toy_datasets(4, 24, 3, &[20, 21]);
    for seed in 0..6 {
        let result = run(&reference, &volunteered, &toy_config(seed)).unwrap();
        assert_eq!(result.fitness_trace.len(), result.iterations_run);
        for pair in result.fitness_trace.windows(2) {
            assert!(
                pair[1] <= pair[0],
                "seed {seed}: accepted fitness rose from {} to {}",
                pair[0],
                pair[1]
            );
        }
        for (id, q) in &result.final_qualities {
            assert!(*q > 0.0 && *q <= 1.0, "seed {seed}: quality {q} for {id:?}");
        }
        for station in reference.stations() {
            assert_eq!(
                result.final_qualities[&station.id], 1.0,
                "reference stations must stay pinned at quality one"
            );
        }
        // Every rollback keeps the parent's fitness.
        for pair in result.log.windows(2) {
            if pair[1].rollback {
                assert_eq!(pair[1].accepted_fitness, pair[0].accepted_fitness);
            }
        }
    }
}

#[test]
fn mutation_operators_follow_the_linear_form_exactly() {
    for q in [0.05, 0.25, 0.5, 0.81, 0.9, 1.0] {
        assert_eq!(mutate_up(q), 0.9 * q + 0.1);
        assert_eq!(mutate_down(q), 0.9 * q);
    }
    assert_eq!(mutate_up(1.0), 1.0, "q = 1 must be a fixed point of mutate_up");
}

#[test]
fn partition_seeds_top_qualities_and_respects_proportions() {
    let config = toy_config(3);
    // Thirty stations: ids s000..s029 with qualities descending in id
    // order, except for a tie block at the top.
    let mut qualities = BTreeMap::new();
    for i in 0..30usize {
        let q = if i < 8 { 0.95 } else { 0.9 - 0.02 * (i as f64 - 8.0) };
        qualities.insert(common::station_id(i), q);
    }
    let generation = Generation { qualities: qualities.clone(), fitness: 1.0, iteration: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let part = partition(&generation, &config, &mut rng).unwrap();

    // 30%/20% of thirty stations.
    assert_eq!(part.pred.len(), 9);
    assert_eq!(part.mutated.len(), 6);
    assert_eq!(part.unchanged.len(), 15);

    // The top 20% by quality (six stations; the 0.95 tie block resolves
    // by id order) must all sit in the prediction set.
    for i in 0..6 {
        assert!(
            part.pred.contains(&common::station_id(i)),
            "top-quality station s{i:03} missing from the prediction set"
        );
    }

    // The three sets are disjoint and cover everything.
    let mut all: Vec<&StationId> = part
        .pred
        .iter()
        .chain(part.unchanged.iter())
        .chain(part.mutated.iter())
        .collect();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), 30);
}

#[test]
fn converged_runs_stop_before_the_iteration_cap() {
    let (reference, volunteered) = toy_datasets(4, 20, 3, &[]);
    let mut config = toy_config(11);
    config.max_iter = 100;
    config.convergence_window = 5;
    config.convergence_threshold = 0.0;
    let result = run(&reference, &volunteered, &config).unwrap();
    assert_eq!(result.termination, Termination::Converged);
    assert!(
        result.iterations_run >= config.min_iter && result.iterations_run < config.max_iter,
        "converged after {} iterations",
        result.iterations_run
    );
}

#[test]
fn learned_qualities_respond_to_a_grossly_corrupted_station() {
    // One volunteered station reports +4 degrees everywhere. Over a
    // batch of seeds the search should never end up trusting it more
    // than the median clean volunteer by a wide margin.
    let (reference, volunteered) = toy_datasets(4, 18, 4, &[17]);
    let corrupted = common::station_id(17);
    let mut worse = 0u64;
    let seeds = 8u64;
    for seed in 0..seeds {
        let mut config = toy_config(seed);
        config.max_iter = 40;
        let result = run(&reference, &volunteered, &config).unwrap();
        let mut clean: Vec<f64> = volunteered
            .stations()
            .iter()
            .filter(|s| s.id != corrupted)
            .map(|s| result.final_qualities[&s.id])
            .collect();
        clean.sort_by(f64::total_cmp);
        let median = clean[clean.len() / 2];
        if result.final_qualities[&corrupted] <= median {
            worse += 1;
        }
    }
    assert!(
        worse * 2 >= seeds,
        "corrupted station outranked the clean median in {} of {seeds} runs",
        seeds - worse
    );
}
