//! Core spatial types: geographic points, stations, observations and
//! the dataset container the rest of the crate operates on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Mean Earth radius in kilometres, used by the haversine metric.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("observation value must be finite, got {0}")]
    NonFiniteValue(f64),
    #[error("quality must be finite and in (0, 1], got {0}")]
    QualityOutOfRange(f64),
    #[error("quality must be finite and positive, got {0}")]
    NonPositiveQuality(f64),
    #[error("duplicate station id {0}")]
    DuplicateStation(StationId),
    #[error("observation references unknown station {0}")]
    UnknownStation(StationId),
    #[error("duplicate observation for station {0}, slice {1}")]
    DuplicateObservation(StationId, u32),
    #[error("station {0} has no quality entry")]
    MissingQuality(StationId),
    #[error("quality entry references unknown station {0}")]
    QualityWithoutStation(StationId),
    #[error("station id {0} present in both datasets being merged")]
    OverlappingStation(StationId),
    #[error("bounding box must satisfy lat_min < lat_max and lon_min < lon_max")]
    EmptyBoundingBox,
    #[error("unknown source class {0:?} (expected REF or VGI)")]
    UnknownSourceClass(String),
}

/// Opaque station identifier. Ordering is lexicographic and is the
/// canonical iteration order everywhere in the crate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StationId(String);

impl StationId {
    pub fn new(id: impl Into<String>) -> Self {
        StationId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StationId {
    fn from(s: &str) -> Self {
        StationId(s.to_owned())
    }
}

impl From<String> for StationId {
    fn from(s: String) -> Self {
        StationId(s)
    }
}

/// A point on the globe in decimal degrees (WGS84 semantics are not
/// needed; the crate treats coordinates as plain spherical lat/lon).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, DomainError> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(DomainError::LatitudeOutOfRange(lat));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(DomainError::LongitudeOutOfRange(lon));
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Axis-aligned lat/lon box with strictly positive extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    lat_min: f64,
    lat_max: f64,
    lon_min: f64,
    lon_max: f64,
}

impl BoundingBox {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self, DomainError> {
        // Reuse the point checks for range validation of the corners.
        GeoPoint::new(lat_min, lon_min)?;
        GeoPoint::new(lat_max, lon_max)?;
        if lat_min >= lat_max || lon_min >= lon_max {
            return Err(DomainError::EmptyBoundingBox);
        }
        Ok(BoundingBox { lat_min, lat_max, lon_min, lon_max })
    }

    pub fn lat_min(&self) -> f64 {
        self.lat_min
    }

    pub fn lat_max(&self) -> f64 {
        self.lat_max
    }

    pub fn lon_min(&self) -> f64 {
        self.lon_min
    }

    pub fn lon_max(&self) -> f64 {
        self.lon_max
    }

    pub fn lat_span(&self) -> f64 {
        self.lat_max - self.lat_min
    }

    pub fn lon_span(&self) -> f64 {
        self.lon_max - self.lon_min
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lat: 0.5 * (self.lat_min + self.lat_max),
            lon: 0.5 * (self.lon_min + self.lon_max),
        }
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.lat_min..=self.lat_max).contains(&p.lat)
            && (self.lon_min..=self.lon_max).contains(&p.lon)
    }
}

/// Provenance class of a station: curated reference network or
/// volunteered (citizen) hardware.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SourceClass {
    Reference,
    Volunteered,
}

impl SourceClass {
    /// Two-letter code used in the CSV interchange format.
    pub fn code(&self) -> &'static str {
        match self {
            SourceClass::Reference => "REF",
            SourceClass::Volunteered => "VGI",
        }
    }
}

impl fmt::Display for SourceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for SourceClass {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, DomainError> {
        match s {
            "REF" => Ok(SourceClass::Reference),
            "VGI" => Ok(SourceClass::Volunteered),
            other => Err(DomainError::UnknownSourceClass(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorStation {
    pub id: StationId,
    pub location: GeoPoint,
    pub source: SourceClass,
}

/// A single temperature reading (degrees Celsius) at a discrete time
/// slice. Values are validated to be finite on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub station_id: StationId,
    pub slice: u32,
    pub value_c: f64,
}

impl Observation {
    pub fn new(station_id: StationId, slice: u32, value_c: f64) -> Result<Self, DomainError> {
        if !value_c.is_finite() {
            return Err(DomainError::NonFiniteValue(value_c));
        }
        Ok(Observation { station_id, slice, value_c })
    }
}

/// An observation joined with its station location and quality score,
/// the unit the kernel and regression layers consume.
///
/// The kernel mathematics only needs `q > 0`; values above 1 are
/// accepted here so that the noise-vanishing limit can be exercised
/// directly. Ingestion and the evolutionary search keep scores within
/// `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityObservation {
    pub observation: Observation,
    pub location: GeoPoint,
    quality: f64,
}

impl QualityObservation {
    pub fn new(observation: Observation, location: GeoPoint, quality: f64) -> Result<Self, DomainError> {
        if !quality.is_finite() || quality <= 0.0 {
            return Err(DomainError::NonPositiveQuality(quality));
        }
        Ok(QualityObservation { observation, location, quality })
    }

    pub fn quality(&self) -> f64 {
        self.quality
    }

    pub fn value(&self) -> f64 {
        self.observation.value_c
    }

    pub fn slice(&self) -> u32 {
        self.observation.slice
    }

    pub fn station_id(&self) -> &StationId {
        &self.observation.station_id
    }
}

/// How spatial separation between two points is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMetric {
    /// Plain Euclidean distance in degree space. Adequate for the
    /// small mid-latitude boxes this crate targets and cheap.
    EuclideanDegrees,
    /// Great-circle distance in kilometres on a sphere of radius
    /// [`EARTH_RADIUS_KM`].
    HaversineKm,
}

/// Distance between two points under the chosen metric. Symmetric,
/// nonnegative and zero for identical inputs.
pub fn distance(a: GeoPoint, b: GeoPoint, metric: DistanceMetric) -> f64 {
    match metric {
        DistanceMetric::EuclideanDegrees => {
            let dlat = a.lat - b.lat;
            let dlon = a.lon - b.lon;
            (dlat * dlat + dlon * dlon).sqrt()
        }
        DistanceMetric::HaversineKm => {
            let lat1 = a.lat.to_radians();
            let lat2 = b.lat.to_radians();
            let dlat = (b.lat - a.lat).to_radians();
            let dlon = (b.lon - a.lon).to_radians();
            let h = (dlat / 2.0).sin().powi(2)
                + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
            // Clamp against rounding before the square roots.
            let h = h.clamp(0.0, 1.0);
            2.0 * EARTH_RADIUS_KM * h.sqrt().asin()
        }
    }
}

/// An immutable collection of stations, their observations over a set
/// of time slices, and one quality score per station.
///
/// Invariants, enforced on every construction:
/// * station ids are unique,
/// * every observation references a known station and the
///   `(station, slice)` pair is unique,
/// * the quality map has exactly one entry in `(0, 1]` per station.
///
/// Stations are held sorted by id and observations by
/// `(station id, slice)`, which makes iteration order, and therefore
/// every downstream computation, deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    stations: Vec<SensorStation>,
    observations: Vec<Observation>,
    qualities: BTreeMap<StationId, f64>,
}

impl Dataset {
    pub fn new(
        mut stations: Vec<SensorStation>,
        mut observations: Vec<Observation>,
        qualities: BTreeMap<StationId, f64>,
    ) -> Result<Self, DomainError> {
        stations.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in stations.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(DomainError::DuplicateStation(pair[0].id.clone()));
            }
        }
        let ids: BTreeSet<&StationId> = stations.iter().map(|s| &s.id).collect();

        observations.sort_by(|a, b| (&a.station_id, a.slice).cmp(&(&b.station_id, b.slice)));
        for obs in &observations {
            if !obs.value_c.is_finite() {
                return Err(DomainError::NonFiniteValue(obs.value_c));
            }
            if !ids.contains(&obs.station_id) {
                return Err(DomainError::UnknownStation(obs.station_id.clone()));
            }
        }
        for pair in observations.windows(2) {
            if pair[0].station_id == pair[1].station_id && pair[0].slice == pair[1].slice {
                return Err(DomainError::DuplicateObservation(
                    pair[0].station_id.clone(),
                    pair[0].slice,
                ));
            }
        }

        for (id, q) in &qualities {
            if !ids.contains(id) {
                return Err(DomainError::QualityWithoutStation(id.clone()));
            }
            if !q.is_finite() || *q <= 0.0 || *q > 1.0 {
                return Err(DomainError::QualityOutOfRange(*q));
            }
        }
        if let Some(station) = stations.iter().find(|s| !qualities.contains_key(&s.id)) {
            return Err(DomainError::MissingQuality(station.id.clone()));
        }

        Ok(Dataset { stations, observations, qualities })
    }

    /// Builds a dataset assigning the same quality score to every station.
    pub fn with_uniform_quality(
        stations: Vec<SensorStation>,
        observations: Vec<Observation>,
        quality: f64,
    ) -> Result<Self, DomainError> {
        let qualities = stations.iter().map(|s| (s.id.clone(), quality)).collect();
        Dataset::new(stations, observations, qualities)
    }

    pub fn stations(&self) -> &[SensorStation] {
        &self.stations
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn qualities(&self) -> &BTreeMap<StationId, f64> {
        &self.qualities
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn n_observations(&self) -> usize {
        self.observations.len()
    }

    pub fn station(&self, id: &StationId) -> Option<&SensorStation> {
        self.stations
            .binary_search_by(|s| s.id.cmp(id))
            .ok()
            .map(|i| &self.stations[i])
    }

    pub fn station_ids(&self) -> impl Iterator<Item = &StationId> {
        self.stations.iter().map(|s| &s.id)
    }

    /// The distinct time slices observed anywhere in the dataset.
    pub fn slices(&self) -> BTreeSet<u32> {
        self.observations.iter().map(|o| o.slice).collect()
    }

    /// Keeps only observations whose slice is in `keep`. Stations and
    /// qualities are untouched.
    pub fn filter_slices(&self, keep: &BTreeSet<u32>) -> Dataset {
        Dataset {
            stations: self.stations.clone(),
            observations: self
                .observations
                .iter()
                .filter(|o| keep.contains(&o.slice))
                .cloned()
                .collect(),
            qualities: self.qualities.clone(),
        }
    }

    /// Drops the given stations together with their observations and
    /// quality entries.
    pub fn remove_stations(&self, drop: &BTreeSet<StationId>) -> Dataset {
        Dataset {
            stations: self.stations.iter().filter(|s| !drop.contains(&s.id)).cloned().collect(),
            observations: self
                .observations
                .iter()
                .filter(|o| !drop.contains(&o.station_id))
                .cloned()
                .collect(),
            qualities: self
                .qualities
                .iter()
                .filter(|(id, _)| !drop.contains(*id))
                .map(|(id, q)| (id.clone(), *q))
                .collect(),
        }
    }

    /// Keeps only the given stations together with their observations
    /// and quality entries.
    pub fn retain_stations(&self, keep: &BTreeSet<StationId>) -> Dataset {
        Dataset {
            stations: self.stations.iter().filter(|s| keep.contains(&s.id)).cloned().collect(),
            observations: self
                .observations
                .iter()
                .filter(|o| keep.contains(&o.station_id))
                .cloned()
                .collect(),
            qualities: self
                .qualities
                .iter()
                .filter(|(id, _)| keep.contains(*id))
                .map(|(id, q)| (id.clone(), *q))
                .collect(),
        }
    }

    /// Union of two datasets with disjoint station id sets.
    pub fn merge(&self, other: &Dataset) -> Result<Dataset, DomainError> {
        if let Some(id) = self.station_ids().find(|id| other.qualities.contains_key(*id)) {
            return Err(DomainError::OverlappingStation(id.clone()));
        }
        let mut stations = self.stations.clone();
        stations.extend(other.stations.iter().cloned());
        let mut observations = self.observations.clone();
        observations.extend(other.observations.iter().cloned());
        let mut qualities = self.qualities.clone();
        qualities.extend(other.qualities.iter().map(|(id, q)| (id.clone(), *q)));
        Dataset::new(stations, observations, qualities)
    }

    /// Assembles the regression input for one time slice, attaching
    /// locations and quality scores from the supplied map (which may
    /// differ from the dataset's own, e.g. a candidate during the
    /// evolutionary search). Stations without an observation in the
    /// slice are skipped; an observed station missing from `qualities`
    /// is an error.
    pub fn slice_quality_observations(
        &self,
        slice: u32,
        qualities: &BTreeMap<StationId, f64>,
    ) -> Result<Vec<QualityObservation>, DomainError> {
        let mut out = Vec::new();
        for obs in self.observations.iter().filter(|o| o.slice == slice) {
            let station = self
                .station(&obs.station_id)
                .ok_or_else(|| DomainError::UnknownStation(obs.station_id.clone()))?;
            let q = *qualities
                .get(&obs.station_id)
                .ok_or_else(|| DomainError::MissingQuality(obs.station_id.clone()))?;
            out.push(QualityObservation::new(obs.clone(), station.location, q)?);
        }
        Ok(out)
    }
}
