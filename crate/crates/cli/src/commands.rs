//! Implementations of the four subcommands.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use qkrige::dataio;
use qkrige::evaluate::{self, EvalOptions, ModelSpec};
use qkrige::evolve;
use qkrige::geo::{BoundingBox, Dataset, QualityObservation, SourceClass, StationId};
use qkrige::gpr::GprModel;
use qkrige::grid::{self, GridSpec};
use qkrige::kernel::{CombinedKernelParams, MaternParams, QualityKernelParams};
use qkrige::pixmap;

use crate::config::{ModelChoice, RunConfig};
use crate::CliError;

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Data(format!("cannot create output directory {}: {e}", out.display())))
}

/// Loads stations and observations into one dataset (uniform quality 1).
fn load_dataset(config: &RunConfig) -> Result<Dataset, CliError> {
    let stations = dataio::load_stations(&config.stations_path())?;
    let dataset = dataio::load_observations(&config.observations_path(), &stations)?;
    Ok(dataset)
}

/// Resolves kernel parameters, deriving unset ones from the observations
/// of `reference_slice`.
fn resolve_kernel(
    config: &RunConfig,
    dataset: &Dataset,
    reference_slice: u32,
) -> Result<CombinedKernelParams, CliError> {
    let quality = QualityKernelParams::new(config.kernel_lambda)?;
    let mut params = match (config.kernel_length_scale, config.kernel_variance) {
        (Some(ell), Some(var)) => CombinedKernelParams::new(
            MaternParams::new(config.kernel_nu, ell, var)?,
            quality,
            config.kernel_metric,
        ),
        _ => {
            let observations = dataset.slice_quality_observations(
                reference_slice,
                &uniform_qualities(dataset),
            )?;
            let derived = CombinedKernelParams::data_driven(
                &observations,
                config.kernel_nu,
                config.kernel_lambda,
                config.kernel_metric,
            )?;
            let ell = config.kernel_length_scale.unwrap_or(derived.matern.length_scale());
            let var = config.kernel_variance.unwrap_or(derived.matern.variance());
            CombinedKernelParams::new(
                MaternParams::new(config.kernel_nu, ell, var)?,
                quality,
                config.kernel_metric,
            )
        }
    };
    if let Some(jitter) = config.kernel_jitter {
        params = params.with_jitter(jitter)?;
    }
    Ok(params)
}

fn uniform_qualities(dataset: &Dataset) -> BTreeMap<qkrige::geo::StationId, f64> {
    dataset.stations().iter().map(|s| (s.id.clone(), 1.0)).collect()
}

fn first_slice(dataset: &Dataset, preferred: Option<&[u32]>) -> Result<u32, CliError> {
    if let Some(slices) = preferred {
        if let Some(first) = slices.iter().min() {
            return Ok(*first);
        }
    }
    dataset
        .slices()
        .into_iter()
        .next()
        .ok_or_else(|| CliError::Data("dataset contains no observations".into()))
}

pub fn cmd_synth(config: &RunConfig) -> Result<(), CliError> {
    let scenario_config = config.scenario_config();
    scenario_config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let scenario = dataio::generate_scenario(&scenario_config)?;
    ensure_out_dir(&config.out)?;
    scenario.save(&config.out)?;
    let dataset = scenario.reference.merge(&scenario.volunteered)?;
    println!(
        "synth: wrote {} stations, {} observations, {} corrupted sensors to {}",
        dataset.stations().len(),
        dataset.observations().len(),
        scenario.corrupted_ids().len(),
        config.out.display()
    );
    Ok(())
}

pub fn cmd_train(config: &RunConfig) -> Result<(), CliError> {
    let dataset = load_dataset(config)?;
    let train = match &config.train_slices {
        Some(slices) => dataset.filter_slices(&slices.iter().copied().collect()),
        None => dataset,
    };
    let reference_slice = first_slice(&train, config.train_slices.as_deref())?;
    let kernel = resolve_kernel(config, &train, reference_slice)?;
    let (reference, volunteered) = split_by_source(&train);
    let evolve_config = config.evolve_config(kernel);
    let result = evolve::run(&reference, &volunteered, &evolve_config)?;

    ensure_out_dir(&config.out)?;
    let qualities_path = config.out.join("qualities.csv");
    dataio::save_qualities(&qualities_path, &result.final_qualities)?;
    let log_path = config.out.join("iteration_log.csv");
    evolve::write_iteration_log(&log_path, &result.log)?;

    println!(
        "train: {} iterations ({:?}), final fitness {:.6}",
        result.iterations_run,
        result.termination,
        result.fitness_trace.last().copied().unwrap_or(f64::NAN)
    );
    println!("train: wrote {} and {}", qualities_path.display(), log_path.display());
    Ok(())
}

fn split_by_source(dataset: &Dataset) -> (Dataset, Dataset) {
    let reference_ids: BTreeSet<StationId> = dataset
        .stations()
        .iter()
        .filter(|s| s.source == SourceClass::Reference)
        .map(|s| s.id.clone())
        .collect();
    let reference = dataset.retain_stations(&reference_ids);
    let volunteered = dataset.remove_stations(&reference_ids);
    (reference, volunteered)
}

/// Builds the conditioning set for one slice under the chosen model.
fn conditioning_for_model(
    config: &RunConfig,
    dataset: &Dataset,
    slice: u32,
) -> Result<Vec<QualityObservation>, CliError> {
    let qualities = match config.model {
        ModelChoice::Baseline => {
            let (reference, _) = split_by_source(dataset);
            let qualities = uniform_qualities(&reference);
            return Ok(reference.slice_quality_observations(slice, &qualities)?);
        }
        ModelChoice::NaiveFusion => uniform_qualities(dataset),
        ModelChoice::APriori => dataset
            .stations()
            .iter()
            .map(|s| {
                let quality = match s.source {
                    SourceClass::Reference => config.apriori_q_ref,
                    SourceClass::Volunteered => config.apriori_q_vgi,
                };
                (s.id.clone(), quality)
            })
            .collect(),
        ModelChoice::Learned => dataio::load_qualities(&config.qualities_path())?,
    };
    Ok(dataset.slice_quality_observations(slice, &qualities)?)
}

fn bbox_from_stations(dataset: &Dataset) -> Result<BoundingBox, CliError> {
    let mut lat_min = f64::INFINITY;
    let mut lat_max = f64::NEG_INFINITY;
    let mut lon_min = f64::INFINITY;
    let mut lon_max = f64::NEG_INFINITY;
    for station in dataset.stations() {
        lat_min = lat_min.min(station.location.lat());
        lat_max = lat_max.max(station.location.lat());
        lon_min = lon_min.min(station.location.lon());
        lon_max = lon_max.max(station.location.lon());
    }
    BoundingBox::new(lat_min, lat_max, lon_min, lon_max)
        .map_err(|e| CliError::Data(format!("cannot derive bounding box from stations: {e}")))
}

pub fn cmd_predict(config: &RunConfig) -> Result<(), CliError> {
    let dataset = load_dataset(config)?;
    let slice = config.slice;
    let conditioning = conditioning_for_model(config, &dataset, slice)?;
    if conditioning.is_empty() {
        return Err(CliError::Data(format!("no observations in slice {slice}")));
    }
    let kernel = resolve_kernel(config, &dataset, slice)?;
    let model = GprModel::fit(conditioning, kernel)?;

    let bbox = match config.bbox {
        Some(bbox) => bbox,
        None => bbox_from_stations(&dataset)?,
    };
    let spec = GridSpec::new(bbox, config.grid_cells_per_degree)?;
    let cells = grid::predict_grid(&model, &spec);

    ensure_out_dir(&config.out)?;
    let grid_path = config.out.join("grid.csv");
    dataio::save_grid(&grid_path, &cells)?;
    let map = grid::heatmap(&cells, &spec);
    let map_path = config.out.join("heatmap.ppm");
    map.write_ppm(&map_path).map_err(|e| CliError::Data(e.to_string()))?;

    println!(
        "predict: model {} on slice {slice}, {} cells ({} x {})",
        config.model.label(),
        cells.len(),
        spec.n_lat(),
        spec.n_lon()
    );
    println!("predict: wrote {} and {}", grid_path.display(), map_path.display());
    Ok(())
}

fn model_spec(config: &RunConfig, choice: ModelChoice, kernel: CombinedKernelParams) -> ModelSpec {
    match choice {
        ModelChoice::Baseline => ModelSpec::Baseline,
        ModelChoice::NaiveFusion => ModelSpec::NaiveFusion,
        ModelChoice::APriori => ModelSpec::APriori {
            q_reference: config.apriori_q_ref,
            q_volunteered: config.apriori_q_vgi,
        },
        ModelChoice::Learned => ModelSpec::Learned { config: config.evolve_config(kernel) },
    }
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<(), CliError> {
    let dataset = load_dataset(config)?;
    let (reference, volunteered) = split_by_source(&dataset);
    let kernel_slice = first_slice(&dataset, config.train_slices.as_deref())?;
    let kernel = resolve_kernel(config, &dataset, kernel_slice)?;

    let mut options = EvalOptions::new(kernel, config.k, config.seed);
    options.histogram_bin_width = config.histogram_bin_width;
    if let Some(slices) = &config.train_slices {
        options.train_slices = slices.iter().copied().collect();
    }
    if let Some(slices) = &config.eval_slices {
        options.eval_slices = slices.iter().copied().collect();
    }
    let specs: Vec<ModelSpec> =
        config.models.iter().map(|choice| model_spec(config, *choice, kernel)).collect();

    let report = evaluate::run_evaluation(&reference, &volunteered, &specs, &options)?;

    ensure_out_dir(&config.out)?;
    let report_path = config.out.join("report.csv");
    evaluate::write_report_csv(&report_path, &report)?;
    let aggregate_path = config.out.join("aggregate.csv");
    evaluate::write_aggregate_csv(&aggregate_path, &report)?;
    let histogram_path = config.out.join("histogram.csv");
    evaluate::write_histogram_csv(&histogram_path, &report)?;

    println!("evaluate: k = {}, train slices {:?}, eval slices {:?}", report.k, report.train_slices, report.eval_slices);
    for model in &report.models {
        let counts: Vec<u64> = model.histogram.iter().map(|b| b.count).collect();
        let chart = pixmap::bar_chart(&counts, 24, 160);
        let chart_path = config.out.join(format!("histogram_{}.ppm", model.label));
        chart.write_ppm(&chart_path).map_err(|e| CliError::Data(e.to_string()))?;
        println!(
            "evaluate: {:<12} mae {:.4} C, sd |e| {:.4} C, n = {}",
            model.label, model.mae_c, model.sd_abs_c, model.n
        );
    }
    println!(
        "evaluate: wrote {}, {}, {}",
        report_path.display(),
        aggregate_path.display(),
        histogram_path.display()
    );
    Ok(())
}
