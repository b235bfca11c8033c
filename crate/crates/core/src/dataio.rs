//! CSV ingestion and serialisation, plus synthetic scenario generation
//! with known ground truth and controlled sensor corruption.
//!
//! File formats (all with headers, comma separated):
//!
//! * `stations.csv`: `station_id,lat,lon,source` with source `REF`/`VGI`
//! * `observations.csv`: `station_id,slice,value_c`
//! * `qualities.csv`: `station_id,quality`
//! * `grid.csv`: `lat,lon,mean_c,variance_c2`
//! * `truth.csv`: `station_id,slice,truth_c,corrupted` (flag 0/1)
//!
//! All writers are atomic (temp file plus rename) and all loaders
//! report the offending line on malformed input.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use thiserror::Error;

use crate::fsutil::atomic_write;
use crate::geo::{
    distance, BoundingBox, Dataset, DistanceMetric, DomainError, GeoPoint, Observation,
    SensorStation, SourceClass, StationId,
};
use crate::grid::GridCell;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{path}:{line}: reference to unknown station {station}")]
    Referential { path: PathBuf, line: u64, station: StationId },
    #[error("{path}:{line}: duplicate {what}")]
    Duplicate { path: PathBuf, line: u64, what: String },
    #[error("invalid scenario configuration: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

fn csv_error(path: &Path, err: csv::Error) -> DataError {
    let line = err.position().map_or(0, |p| p.line());
    let message = err.to_string();
    match err.into_kind() {
        csv::ErrorKind::Io(source) => DataError::Io { path: path.to_path_buf(), source },
        _ => DataError::Parse { path: path.to_path_buf(), line, message },
    }
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> DataError {
    DataError::Parse { path: path.to_path_buf(), line, message: message.into() }
}

/// Iterates a CSV file record by record, handing each deserialised row
/// and its 1-based line number to `each`.
fn for_each_row<R, F>(path: &Path, mut each: F) -> Result<(), DataError>
where
    R: for<'de> Deserialize<'de>,
    F: FnMut(u64, R) -> Result<(), DataError>,
{
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let row: R = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_error(path, line, e.to_string()))?;
        each(line, row)?;
    }
    Ok(())
}

fn write_csv<F>(path: &Path, fill: F) -> Result<(), DataError>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<(), csv::Error>,
{
    let mut wtr = csv::Writer::from_writer(Vec::new());
    fill(&mut wtr).map_err(|e| csv_error(path, e))?;
    let bytes = wtr.into_inner().expect("writing to a Vec cannot fail");
    atomic_write(path, &bytes).map_err(|e| DataError::Io { path: path.to_path_buf(), source: e })
}

#[derive(Deserialize)]
struct StationRow {
    station_id: String,
    lat: f64,
    lon: f64,
    source: String,
}

#[derive(Deserialize)]
struct ObservationRow {
    station_id: String,
    slice: u32,
    value_c: f64,
}

#[derive(Deserialize)]
struct QualityRow {
    station_id: String,
    quality: f64,
}

#[derive(Deserialize)]
struct GridRow {
    lat: f64,
    lon: f64,
    mean_c: f64,
    variance_c2: f64,
}

#[derive(Deserialize)]
struct TruthRow {
    station_id: String,
    slice: u32,
    truth_c: f64,
    corrupted: u8,
}

pub fn load_stations(path: impl AsRef<Path>) -> Result<Vec<SensorStation>, DataError> {
    let path = path.as_ref();
    let mut stations = Vec::new();
    let mut seen: BTreeSet<StationId> = BTreeSet::new();
    for_each_row(path, |line, row: StationRow| {
        let id = StationId::new(row.station_id);
        if !seen.insert(id.clone()) {
            return Err(DataError::Duplicate {
                path: path.to_path_buf(),
                line,
                what: format!("station id {id}"),
            });
        }
        let location =
            GeoPoint::new(row.lat, row.lon).map_err(|e| parse_error(path, line, e.to_string()))?;
        let source: SourceClass =
            row.source.parse().map_err(|e: DomainError| parse_error(path, line, e.to_string()))?;
        stations.push(SensorStation { id, location, source });
        Ok(())
    })?;
    Ok(stations)
}

pub fn save_stations(path: impl AsRef<Path>, stations: &[SensorStation]) -> Result<(), DataError> {
    write_csv(path.as_ref(), |wtr| {
        wtr.write_record(["station_id", "lat", "lon", "source"])?;
        for s in stations {
            wtr.write_record([
                s.id.as_str().to_owned(),
                s.location.lat().to_string(),
                s.location.lon().to_string(),
                s.source.code().to_owned(),
            ])?;
        }
        Ok(())
    })
}

/// Loads observations and joins them against the given stations into a
/// dataset with uniform quality 1. Unknown stations, duplicate
/// `(station, slice)` pairs and non-finite values are rejected with
/// their line numbers.
pub fn load_observations(
    path: impl AsRef<Path>,
    stations: &[SensorStation],
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let known: BTreeSet<&StationId> = stations.iter().map(|s| &s.id).collect();
    let mut seen: BTreeSet<(StationId, u32)> = BTreeSet::new();
    let mut observations = Vec::new();
    for_each_row(path, |line, row: ObservationRow| {
        let id = StationId::new(row.station_id);
        if !known.contains(&id) {
            return Err(DataError::Referential { path: path.to_path_buf(), line, station: id });
        }
        if !seen.insert((id.clone(), row.slice)) {
            return Err(DataError::Duplicate {
                path: path.to_path_buf(),
                line,
                what: format!("observation for station {id}, slice {}", row.slice),
            });
        }
        let obs = Observation::new(id, row.slice, row.value_c)
            .map_err(|e| parse_error(path, line, e.to_string()))?;
        observations.push(obs);
        Ok(())
    })?;
    Ok(Dataset::with_uniform_quality(stations.to_vec(), observations, 1.0)?)
}

pub fn save_observations(
    path: impl AsRef<Path>,
    observations: &[Observation],
) -> Result<(), DataError> {
    write_csv(path.as_ref(), |wtr| {
        wtr.write_record(["station_id", "slice", "value_c"])?;
        for o in observations {
            wtr.write_record([
                o.station_id.as_str().to_owned(),
                o.slice.to_string(),
                o.value_c.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn load_qualities(path: impl AsRef<Path>) -> Result<BTreeMap<StationId, f64>, DataError> {
    let path = path.as_ref();
    let mut out = BTreeMap::new();
    for_each_row(path, |line, row: QualityRow| {
        let id = StationId::new(row.station_id);
        if !row.quality.is_finite() || row.quality <= 0.0 || row.quality > 1.0 {
            return Err(parse_error(
                path,
                line,
                format!("quality must be in (0, 1], got {}", row.quality),
            ));
        }
        if out.insert(id.clone(), row.quality).is_some() {
            return Err(DataError::Duplicate {
                path: path.to_path_buf(),
                line,
                what: format!("quality for station {id}"),
            });
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn save_qualities(
    path: impl AsRef<Path>,
    qualities: &BTreeMap<StationId, f64>,
) -> Result<(), DataError> {
    write_csv(path.as_ref(), |wtr| {
        wtr.write_record(["station_id", "quality"])?;
        for (id, q) in qualities {
            wtr.write_record([id.as_str().to_owned(), q.to_string()])?;
        }
        Ok(())
    })
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<Vec<GridCell>, DataError> {
    let path = path.as_ref();
    let mut cells = Vec::new();
    for_each_row(path, |line, row: GridRow| {
        GeoPoint::new(row.lat, row.lon).map_err(|e| parse_error(path, line, e.to_string()))?;
        if !row.mean_c.is_finite() {
            return Err(parse_error(path, line, format!("non-finite mean {}", row.mean_c)));
        }
        if !row.variance_c2.is_finite() || row.variance_c2 < 0.0 {
            return Err(parse_error(
                path,
                line,
                format!("variance must be finite and nonnegative, got {}", row.variance_c2),
            ));
        }
        cells.push(GridCell {
            lat: row.lat,
            lon: row.lon,
            mean_c: row.mean_c,
            variance_c2: row.variance_c2,
        });
        Ok(())
    })?;
    Ok(cells)
}

pub fn save_grid(path: impl AsRef<Path>, cells: &[GridCell]) -> Result<(), DataError> {
    write_csv(path.as_ref(), |wtr| {
        wtr.write_record(["lat", "lon", "mean_c", "variance_c2"])?;
        for c in cells {
            wtr.write_record([
                c.lat.to_string(),
                c.lon.to_string(),
                c.mean_c.to_string(),
                c.variance_c2.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Ground truth row of a synthetic scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub station_id: StationId,
    pub slice: u32,
    pub truth_c: f64,
    pub corrupted: bool,
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>, DataError> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for_each_row(path, |line, row: TruthRow| {
        let corrupted = match row.corrupted {
            0 => false,
            1 => true,
            other => {
                return Err(parse_error(path, line, format!("corrupted flag must be 0 or 1, got {other}")))
            }
        };
        if !row.truth_c.is_finite() {
            return Err(parse_error(path, line, format!("non-finite truth value {}", row.truth_c)));
        }
        out.push(TruthRecord {
            station_id: StationId::new(row.station_id),
            slice: row.slice,
            truth_c: row.truth_c,
            corrupted,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn save_truth(path: impl AsRef<Path>, records: &[TruthRecord]) -> Result<(), DataError> {
    write_csv(path.as_ref(), |wtr| {
        wtr.write_record(["station_id", "slice", "truth_c", "corrupted"])?;
        for r in records {
            wtr.write_record([
                r.station_id.as_str().to_owned(),
                r.slice.to_string(),
                r.truth_c.to_string(),
                if r.corrupted { "1".to_owned() } else { "0".to_owned() },
            ])?;
        }
        Ok(())
    })
}

/// A radially symmetric Gaussian temperature anomaly.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBump {
    pub center: GeoPoint,
    pub amplitude_c: f64,
    pub width_deg: f64,
}

/// Deterministic part of the synthetic temperature field: a base value
/// at `origin`, linear gradients away from it and a set of bumps.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub base_c: f64,
    pub origin: GeoPoint,
    pub lat_gradient_c_per_deg: f64,
    pub lon_gradient_c_per_deg: f64,
    pub bumps: Vec<GaussianBump>,
}

impl FieldSpec {
    pub fn value_at(&self, p: GeoPoint) -> f64 {
        let mut v = self.base_c
            + self.lat_gradient_c_per_deg * (p.lat() - self.origin.lat())
            + self.lon_gradient_c_per_deg * (p.lon() - self.origin.lon());
        for b in &self.bumps {
            let d = distance(p, b.center, DistanceMetric::EuclideanDegrees);
            v += b.amplitude_c * (-0.5 * (d / b.width_deg).powi(2)).exp();
        }
        v
    }
}

/// The full ground truth: the spatial field plus one additive offset
/// per time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthField {
    pub field: FieldSpec,
    pub slice_offsets: Vec<f64>,
}

impl TruthField {
    pub fn n_slices(&self) -> u32 {
        self.slice_offsets.len() as u32
    }

    /// True temperature at a point and slice. Panics on a slice beyond
    /// the configured range.
    pub fn value_at(&self, p: GeoPoint, slice: u32) -> f64 {
        self.field.value_at(p) + self.slice_offsets[slice as usize]
    }
}

/// How a corrupted station misbehaves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorruptionModel {
    /// Always reports this constant, whatever the weather.
    ConstantStuck(f64),
    /// Adds a constant offset on top of the usual good-sensor noise.
    Bias(f64),
    /// Reports the truth plus noise with this standard deviation.
    HighNoise(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenarioConfig {
    pub bbox: BoundingBox,
    pub n_reference: usize,
    pub n_volunteered: usize,
    pub n_slices: u32,
    pub field: FieldSpec,
    /// Per-slice offsets are drawn uniformly from plus/minus this value.
    pub slice_offset_amplitude_c: f64,
    /// Noise standard deviation of healthy sensors.
    pub noise_good_c: f64,
    /// Fraction of volunteered stations to corrupt (rounded).
    pub corruption_fraction: f64,
    /// Applied cyclically over the corrupted stations in id order.
    pub corruption_models: Vec<CorruptionModel>,
    pub seed: u64,
}

impl SyntheticScenarioConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidScenario(m));
        if self.n_reference == 0 || self.n_volunteered == 0 {
            return bad("need at least one reference and one volunteered station".into());
        }
        if self.n_slices == 0 {
            return bad("need at least one time slice".into());
        }
        if !self.noise_good_c.is_finite() || self.noise_good_c < 0.0 {
            return bad(format!("noise must be finite and nonnegative, got {}", self.noise_good_c));
        }
        if !self.slice_offset_amplitude_c.is_finite() || self.slice_offset_amplitude_c < 0.0 {
            return bad(format!(
                "slice offset amplitude must be finite and nonnegative, got {}",
                self.slice_offset_amplitude_c
            ));
        }
        if !self.corruption_fraction.is_finite()
            || !(0.0..=1.0).contains(&self.corruption_fraction)
        {
            return bad(format!(
                "corruption fraction must be in [0, 1], got {}",
                self.corruption_fraction
            ));
        }
        let n_corrupt = (self.corruption_fraction * self.n_volunteered as f64).round() as usize;
        if n_corrupt > 0 && self.corruption_models.is_empty() {
            return bad("corruption requested but no corruption models given".into());
        }
        for b in &self.field.bumps {
            if !b.width_deg.is_finite() || b.width_deg <= 0.0 {
                return bad(format!("bump width must be finite and positive, got {}", b.width_deg));
            }
            if !b.amplitude_c.is_finite() {
                return bad("bump amplitude must be finite".into());
            }
        }
        if !self.field.base_c.is_finite()
            || !self.field.lat_gradient_c_per_deg.is_finite()
            || !self.field.lon_gradient_c_per_deg.is_finite()
        {
            return bad("field parameters must be finite".into());
        }
        Ok(())
    }

    /// The scenario bundled with the crate: a two-degree box, 20
    /// reference and 200 volunteered stations over 8 slices, and 30% of
    /// the volunteered stations corrupted by stuck or biased sensors.
    ///
    /// The temperature field combines a broad north-south slope with a
    /// lattice of alternating small-scale anomalies, so the reference
    /// network alone undersamples the field and dense volunteered
    /// coverage genuinely adds information.
    pub fn bundled(seed: u64) -> Self {
        let bbox = BoundingBox::new(47.5, 49.5, 7.5, 9.5).unwrap();
        let mut bumps = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                let lat = 47.5 + (i as f64 + 0.5) / 3.0;
                let lon = 7.5 + (j as f64 + 0.5) / 3.0;
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                let amplitude_c = sign * (1.2 + 0.4 * ((i + 2 * j) % 3) as f64);
                let width_deg = 0.12 + 0.03 * ((i * 3 + j) % 3) as f64;
                bumps.push(GaussianBump {
                    center: GeoPoint::new(lat, lon).unwrap(),
                    amplitude_c,
                    width_deg,
                });
            }
        }
        SyntheticScenarioConfig {
            bbox,
            n_reference: 20,
            n_volunteered: 200,
            n_slices: 8,
            field: FieldSpec {
                base_c: 20.0,
                origin: bbox.center(),
                lat_gradient_c_per_deg: -1.2,
                lon_gradient_c_per_deg: 0.4,
                bumps,
            },
            slice_offset_amplitude_c: 1.0,
            noise_good_c: 0.3,
            corruption_fraction: 0.3,
            corruption_models: vec![
                CorruptionModel::ConstantStuck(21.5),
                CorruptionModel::Bias(3.0),
            ],
            seed,
        }
    }
}

/// A generated scenario: the two datasets, the ground truth field and
/// which volunteered stations were corrupted how.
#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub reference: Dataset,
    pub volunteered: Dataset,
    pub truth: TruthField,
    pub corruption: BTreeMap<StationId, CorruptionModel>,
}

impl SyntheticScenario {
    pub fn corrupted_ids(&self) -> BTreeSet<StationId> {
        self.corruption.keys().cloned().collect()
    }

    /// Ground truth rows for every station and slice; reference
    /// stations are never corrupted.
    pub fn truth_records(&self) -> Vec<TruthRecord> {
        let mut out = Vec::new();
        for station in self.reference.stations().iter().chain(self.volunteered.stations()) {
            for slice in 0..self.truth.n_slices() {
                out.push(TruthRecord {
                    station_id: station.id.clone(),
                    slice,
                    truth_c: self.truth.value_at(station.location, slice),
                    corrupted: self.corruption.contains_key(&station.id),
                });
            }
        }
        out
    }

    /// Writes `stations.csv`, `observations.csv` and `truth.csv` into
    /// the directory.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), DataError> {
        let dir = dir.as_ref();
        let mut stations = self.reference.stations().to_vec();
        stations.extend(self.volunteered.stations().iter().cloned());
        save_stations(dir.join("stations.csv"), &stations)?;
        let mut observations = self.reference.observations().to_vec();
        observations.extend(self.volunteered.observations().iter().cloned());
        observations.sort_by(|a, b| (&a.station_id, a.slice).cmp(&(&b.station_id, b.slice)));
        save_observations(dir.join("observations.csv"), &observations)?;
        save_truth(dir.join("truth.csv"), &self.truth_records())?;
        Ok(())
    }
}

/// Generates a scenario deterministically from `config.seed`: slice
/// offsets first, then reference and volunteered station placement,
/// then the corrupted subset, then the observation noise, so the same
/// seed always yields byte-identical data.
pub fn generate_scenario(config: &SyntheticScenarioConfig) -> Result<SyntheticScenario, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bbox = config.bbox;

    let amplitude = config.slice_offset_amplitude_c;
    let slice_offsets: Vec<f64> =
        (0..config.n_slices).map(|_| rng.random_range(-amplitude..=amplitude)).collect();
    let truth = TruthField { field: config.field.clone(), slice_offsets };

    let place = |prefix: &str, n: usize, source: SourceClass, rng: &mut ChaCha8Rng| {
        (0..n)
            .map(|i| {
                let lat = rng.random_range(bbox.lat_min()..bbox.lat_max());
                let lon = rng.random_range(bbox.lon_min()..bbox.lon_max());
                SensorStation {
                    id: StationId::new(format!("{prefix}-{i:04}")),
                    location: GeoPoint::new(lat, lon).expect("inside a valid box"),
                    source,
                }
            })
            .collect::<Vec<_>>()
    };
    let ref_stations = place("REF", config.n_reference, SourceClass::Reference, &mut rng);
    let vgi_stations = place("VGI", config.n_volunteered, SourceClass::Volunteered, &mut rng);

    let n_corrupt = (config.corruption_fraction * config.n_volunteered as f64).round() as usize;
    let mut indices: Vec<usize> = (0..config.n_volunteered).collect();
    indices.shuffle(&mut rng);
    let mut chosen = indices[..n_corrupt].to_vec();
    chosen.sort_unstable();
    let corruption: BTreeMap<StationId, CorruptionModel> = chosen
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            (vgi_stations[i].id.clone(), config.corruption_models[rank % config.corruption_models.len()])
        })
        .collect();

    let good_noise = Normal::new(0.0, config.noise_good_c)
        .map_err(|e| DataError::InvalidScenario(e.to_string()))?;
    let observe = |stations: &[SensorStation], rng: &mut ChaCha8Rng| -> Vec<Observation> {
        let mut out = Vec::with_capacity(stations.len() * config.n_slices as usize);
        for station in stations {
            for slice in 0..config.n_slices {
                let t = truth.value_at(station.location, slice);
                let value = match corruption.get(&station.id) {
                    None => t + good_noise.sample(rng),
                    Some(CorruptionModel::ConstantStuck(v)) => *v,
                    Some(CorruptionModel::Bias(b)) => t + good_noise.sample(rng) + b,
                    Some(CorruptionModel::HighNoise(sd)) => {
                        let noisy = Normal::new(0.0, *sd)
                            .expect("validated standard deviation");
                        t + noisy.sample(rng)
                    }
                };
                out.push(Observation::new(station.id.clone(), slice, value).expect("finite value"));
            }
        }
        out
    };
    let ref_obs = observe(&ref_stations, &mut rng);
    let vgi_obs = observe(&vgi_stations, &mut rng);

    Ok(SyntheticScenario {
        reference: Dataset::with_uniform_quality(ref_stations, ref_obs, 1.0)?,
        volunteered: Dataset::with_uniform_quality(vgi_stations, vgi_obs, 1.0)?,
        truth,
        corruption,
    })
}
