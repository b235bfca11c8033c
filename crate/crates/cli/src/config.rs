//! Flat key-value run configuration.
//!
//! The file format is one `key = value` pair per line; blank lines and
//! lines starting with `#` are ignored. Unknown keys are rejected so
//! typos surface immediately. Command line flags (`--seed`, `--out`)
//! override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qkrige::dataio::{CorruptionModel, FieldSpec, GaussianBump, SyntheticScenarioConfig};
use qkrige::evolve::EvolveConfig;
use qkrige::geo::{BoundingBox, DistanceMetric, GeoPoint};
use qkrige::kernel::{CombinedKernelParams, MaternNu};

use crate::CliError;

/// Which quality parametrization a command should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Baseline,
    NaiveFusion,
    APriori,
    Learned,
}

impl ModelChoice {
    pub fn label(&self) -> &'static str {
        match self {
            ModelChoice::Baseline => "baseline",
            ModelChoice::NaiveFusion => "naive_fusion",
            ModelChoice::APriori => "a_priori",
            ModelChoice::Learned => "learned",
        }
    }
}

impl FromStr for ModelChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(ModelChoice::Baseline),
            "naive_fusion" => Ok(ModelChoice::NaiveFusion),
            "a_priori" => Ok(ModelChoice::APriori),
            "learned" => Ok(ModelChoice::Learned),
            other => Err(format!(
                "unknown model {other:?} (expected baseline, naive_fusion, a_priori or learned)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub stations: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub qualities: Option<PathBuf>,
    pub model: ModelChoice,
    pub slice: u32,
    pub bbox: Option<BoundingBox>,
    pub grid_cells_per_degree: f64,

    pub kernel_nu: MaternNu,
    pub kernel_length_scale: Option<f64>,
    pub kernel_variance: Option<f64>,
    pub kernel_lambda: f64,
    pub kernel_jitter: Option<f64>,
    pub kernel_metric: DistanceMetric,

    pub evolve_mu: f64,
    pub evolve_prop_pred: f64,
    pub evolve_prop_unchanged: f64,
    pub evolve_prop_mut: f64,
    pub evolve_top_fraction: f64,
    pub evolve_min_iter: usize,
    pub evolve_max_iter: usize,
    pub evolve_window: usize,
    pub evolve_threshold: f64,
    pub evolve_freeze_reference: bool,

    pub models: Vec<ModelChoice>,
    pub k: usize,
    pub apriori_q_ref: f64,
    pub apriori_q_vgi: f64,
    pub train_slices: Option<Vec<u32>>,
    pub eval_slices: Option<Vec<u32>>,
    pub histogram_bin_width: f64,

    pub n_reference: usize,
    pub n_volunteered: usize,
    pub n_slices: u32,
    pub noise_good: f64,
    pub corruption_fraction: f64,
    pub corruption_models: Vec<CorruptionModel>,
    pub slice_offset_amplitude: f64,
    pub field_base: f64,
    pub field_gradient: (f64, f64),
    pub field_bumps: Vec<GaussianBump>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bundled = SyntheticScenarioConfig::bundled(1);
        RunConfig {
            out: PathBuf::from("out"),
            seed: 1,
            stations: None,
            observations: None,
            qualities: None,
            model: ModelChoice::Learned,
            slice: 0,
            bbox: None,
            grid_cells_per_degree: 10.0,
            kernel_nu: MaternNu::ThreeHalves,
            kernel_length_scale: None,
            kernel_variance: None,
            kernel_lambda: 0.5,
            kernel_jitter: None,
            kernel_metric: DistanceMetric::EuclideanDegrees,
            evolve_mu: 0.81,
            evolve_prop_pred: 0.3,
            evolve_prop_unchanged: 0.5,
            evolve_prop_mut: 0.2,
            evolve_top_fraction: 0.2,
            evolve_min_iter: 20,
            evolve_max_iter: 100,
            evolve_window: 5,
            evolve_threshold: 1e-4,
            evolve_freeze_reference: true,
            models: vec![
                ModelChoice::Baseline,
                ModelChoice::NaiveFusion,
                ModelChoice::APriori,
                ModelChoice::Learned,
            ],
            k: 10,
            apriori_q_ref: 0.98,
            apriori_q_vgi: 0.81,
            train_slices: None,
            eval_slices: None,
            histogram_bin_width: 1.0,
            n_reference: bundled.n_reference,
            n_volunteered: bundled.n_volunteered,
            n_slices: bundled.n_slices,
            noise_good: bundled.noise_good_c,
            corruption_fraction: bundled.corruption_fraction,
            corruption_models: bundled.corruption_models,
            slice_offset_amplitude: bundled.slice_offset_amplitude_c,
            field_base: bundled.field.base_c,
            field_gradient: (
                bundled.field.lat_gradient_c_per_deg,
                bundled.field.lon_gradient_c_per_deg,
            ),
            field_bumps: bundled.field.bumps,
        }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| usage(format!("config key {key}: cannot parse {value:?}: {e}")))
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    if value == "auto" {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse_value(key, s)).collect()
}

fn parse_nu(key: &str, value: &str) -> Result<MaternNu, CliError> {
    match value {
        "0.5" => Ok(MaternNu::Half),
        "1.5" => Ok(MaternNu::ThreeHalves),
        "2.5" => Ok(MaternNu::FiveHalves),
        other => Err(usage(format!("config key {key}: nu must be 0.5, 1.5 or 2.5, got {other:?}"))),
    }
}

fn parse_metric(key: &str, value: &str) -> Result<DistanceMetric, CliError> {
    match value {
        "euclidean" => Ok(DistanceMetric::EuclideanDegrees),
        "haversine" => Ok(DistanceMetric::HaversineKm),
        other => {
            Err(usage(format!("config key {key}: metric must be euclidean or haversine, got {other:?}")))
        }
    }
}

fn parse_bbox(key: &str, value: &str) -> Result<BoundingBox, CliError> {
    let parts: Vec<f64> = parse_list(key, value)?;
    if parts.len() != 4 {
        return Err(usage(format!(
            "config key {key}: expected lat_min,lat_max,lon_min,lon_max, got {value:?}"
        )));
    }
    BoundingBox::new(parts[0], parts[1], parts[2], parts[3])
        .map_err(|e| usage(format!("config key {key}: {e}")))
}

fn parse_corruption_models(key: &str, value: &str) -> Result<Vec<CorruptionModel>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|entry| {
            let (kind, param) = entry
                .split_once(':')
                .ok_or_else(|| usage(format!("config key {key}: expected kind:value, got {entry:?}")))?;
            let param: f64 = parse_value(key, param.trim())?;
            match kind.trim() {
                "stuck" => Ok(CorruptionModel::ConstantStuck(param)),
                "bias" => Ok(CorruptionModel::Bias(param)),
                "noise" => Ok(CorruptionModel::HighNoise(param)),
                other => Err(usage(format!(
                    "config key {key}: unknown corruption kind {other:?} (stuck, bias or noise)"
                ))),
            }
        })
        .collect()
}

fn parse_bumps(key: &str, value: &str) -> Result<Vec<GaussianBump>, CliError> {
    value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|entry| {
            let parts: Vec<f64> = parse_list(key, entry)?;
            if parts.len() != 4 {
                return Err(usage(format!(
                    "config key {key}: bump needs lat,lon,amplitude,width, got {entry:?}"
                )));
            }
            let center = GeoPoint::new(parts[0], parts[1])
                .map_err(|e| usage(format!("config key {key}: {e}")))?;
            Ok(GaussianBump { center, amplitude_c: parts[2], width_deg: parts[3] })
        })
        .collect()
}

impl RunConfig {
    /// Parses a config file into the defaults.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut pairs = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                usage(format!("{}:{}: expected key = value, got {raw:?}", path.display(), i + 1))
            })?;
            pairs.insert(key.trim().to_owned(), value.trim().to_owned());
        }
        let mut config = RunConfig::default();
        for (key, value) in &pairs {
            config.apply(key, value)?;
        }
        Ok(config)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse_value(key, value)?,
            "stations" => self.stations = Some(PathBuf::from(value)),
            "observations" => self.observations = Some(PathBuf::from(value)),
            "qualities" => self.qualities = Some(PathBuf::from(value)),
            "model" => self.model = value.parse().map_err(usage)?,
            "slice" => self.slice = parse_value(key, value)?,
            "bbox" => self.bbox = Some(parse_bbox(key, value)?),
            "grid_cells_per_degree" => self.grid_cells_per_degree = parse_value(key, value)?,
            "kernel_nu" => self.kernel_nu = parse_nu(key, value)?,
            "kernel_length_scale" => self.kernel_length_scale = parse_optional(key, value)?,
            "kernel_variance" => self.kernel_variance = parse_optional(key, value)?,
            "kernel_lambda" => self.kernel_lambda = parse_value(key, value)?,
            "kernel_jitter" => self.kernel_jitter = parse_optional(key, value)?,
            "kernel_metric" => self.kernel_metric = parse_metric(key, value)?,
            "evolve_mu" => self.evolve_mu = parse_value(key, value)?,
            "evolve_prop_pred" => self.evolve_prop_pred = parse_value(key, value)?,
            "evolve_prop_unchanged" => self.evolve_prop_unchanged = parse_value(key, value)?,
            "evolve_prop_mut" => self.evolve_prop_mut = parse_value(key, value)?,
            "evolve_top_fraction" => self.evolve_top_fraction = parse_value(key, value)?,
            "evolve_min_iter" => self.evolve_min_iter = parse_value(key, value)?,
            "evolve_max_iter" => self.evolve_max_iter = parse_value(key, value)?,
            "evolve_window" => self.evolve_window = parse_value(key, value)?,
            "evolve_threshold" => self.evolve_threshold = parse_value(key, value)?,
            "evolve_freeze_reference" => self.evolve_freeze_reference = parse_value(key, value)?,
            "models" => {
                self.models = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(usage))
                    .collect::<Result<_, _>>()?
            }
            "k" => self.k = parse_value(key, value)?,
            "apriori_q_ref" => self.apriori_q_ref = parse_value(key, value)?,
            "apriori_q_vgi" => self.apriori_q_vgi = parse_value(key, value)?,
            "train_slices" => self.train_slices = Some(parse_list(key, value)?),
            "eval_slices" => self.eval_slices = Some(parse_list(key, value)?),
            "histogram_bin_width" => self.histogram_bin_width = parse_value(key, value)?,
            "n_reference" => self.n_reference = parse_value(key, value)?,
            "n_volunteered" => self.n_volunteered = parse_value(key, value)?,
            "n_slices" => self.n_slices = parse_value(key, value)?,
            "noise_good" => self.noise_good = parse_value(key, value)?,
            "corruption_fraction" => self.corruption_fraction = parse_value(key, value)?,
            "corruption_models" => self.corruption_models = parse_corruption_models(key, value)?,
            "slice_offset_amplitude" => self.slice_offset_amplitude = parse_value(key, value)?,
            "field_base" => self.field_base = parse_value(key, value)?,
            "field_gradient" => {
                let parts: Vec<f64> = parse_list(key, value)?;
                if parts.len() != 2 {
                    return Err(usage(format!(
                        "config key {key}: expected lat_gradient,lon_gradient, got {value:?}"
                    )));
                }
                self.field_gradient = (parts[0], parts[1]);
            }
            "field_bumps" => self.field_bumps = parse_bumps(key, value)?,
            other => return Err(usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn stations_path(&self) -> PathBuf {
        self.stations.clone().unwrap_or_else(|| self.out.join("stations.csv"))
    }

    pub fn observations_path(&self) -> PathBuf {
        self.observations.clone().unwrap_or_else(|| self.out.join("observations.csv"))
    }

    pub fn qualities_path(&self) -> PathBuf {
        self.qualities.clone().unwrap_or_else(|| self.out.join("qualities.csv"))
    }

    /// The synthetic scenario this configuration describes.
    pub fn scenario_config(&self) -> SyntheticScenarioConfig {
        let bbox = self.bbox.unwrap_or_else(|| SyntheticScenarioConfig::bundled(0).bbox);
        SyntheticScenarioConfig {
            bbox,
            n_reference: self.n_reference,
            n_volunteered: self.n_volunteered,
            n_slices: self.n_slices,
            field: FieldSpec {
                base_c: self.field_base,
                origin: bbox.center(),
                lat_gradient_c_per_deg: self.field_gradient.0,
                lon_gradient_c_per_deg: self.field_gradient.1,
                bumps: self.field_bumps.clone(),
            },
            slice_offset_amplitude_c: self.slice_offset_amplitude,
            noise_good_c: self.noise_good,
            corruption_fraction: self.corruption_fraction,
            corruption_models: self.corruption_models.clone(),
            seed: self.seed,
        }
    }

    pub fn evolve_config(&self, kernel: CombinedKernelParams) -> EvolveConfig {
        let mut config = EvolveConfig::new(kernel, self.seed);
        config.mu = self.evolve_mu;
        config.proportions =
            (self.evolve_prop_pred, self.evolve_prop_unchanged, self.evolve_prop_mut);
        config.top_quality_fraction = self.evolve_top_fraction;
        config.min_iter = self.evolve_min_iter;
        config.max_iter = self.evolve_max_iter;
        config.convergence_window = self.evolve_window;
        config.convergence_threshold = self.evolve_threshold;
        config.freeze_reference = self.evolve_freeze_reference;
        config
    }
}
