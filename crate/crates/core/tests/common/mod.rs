//! Shared helpers for the integration suites: a self-contained dense
//! GPR oracle plus small constructors for domain values.
//!
//! The oracle deliberately avoids the crate's linear algebra. Distances,
//! Matern values, the Gram assembly and the solve are all spelled out
//! here (Gaussian elimination with partial pivoting), so agreement with
//! the library is evidence rather than tautology.
#![allow(dead_code)]

use qkrige::geo::{
    Dataset, DistanceMetric, GeoPoint, Observation, QualityObservation, SensorStation,
    SourceClass, StationId,
};
use qkrige::kernel::{CombinedKernelParams, MaternNu, MaternParams, QualityKernelParams};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const EARTH_RADIUS_KM: f64 = 6371.0;

pub fn oracle_distance(metric: DistanceMetric, a: (f64, f64), b: (f64, f64)) -> f64 {
    match metric {
        DistanceMetric::EuclideanDegrees => {
            ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
        }
        DistanceMetric::HaversineKm => {
            let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
            let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
            let h = ((lat2 - lat1) / 2.0).sin().powi(2)
                + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
            2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin()
        }
    }
}

pub fn oracle_matern(nu: MaternNu, d: f64, ell: f64, s2: f64) -> f64 {
    let r = d / ell;
    match nu {
        MaternNu::Half => s2 * (-r).exp(),
        MaternNu::ThreeHalves => {
            let t = 3.0_f64.sqrt() * r;
            s2 * (1.0 + t) * (-t).exp()
        }
        MaternNu::FiveHalves => {
            let t = 5.0_f64.sqrt() * r;
            s2 * (1.0 + t + 5.0 * r * r / 3.0) * (-t).exp()
        }
    }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// Panics on a numerically singular system; oracle instances are
/// generated well away from singularity.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("nonempty column");
        assert!(a[pivot][col].abs() > 1e-300, "oracle system is singular");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// One dense-oracle training set: points as `(lat, lon)` plus one
/// value and one quality per point.
#[derive(Debug, Clone)]
pub struct OracleInstance {
    pub points: Vec<(f64, f64)>,
    pub values: Vec<f64>,
    pub qualities: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleKernel {
    pub metric: DistanceMetric,
    pub nu: MaternNu,
    pub length_scale: f64,
    pub variance: f64,
    pub lambda: f64,
    pub jitter: f64,
}

/// Full dense posterior at one query point: sample-mean centering,
/// Gram matrix with `lambda / q^2` plus jitter on the diagonal, one
/// solve for the mean weights and one for the variance reduction.
pub fn oracle_posterior(inst: &OracleInstance, query: (f64, f64), k: &OracleKernel) -> (f64, f64) {
    let n = inst.points.len();
    let mean_offset = inst.values.iter().sum::<f64>() / n as f64;
    let mut gram = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let d = oracle_distance(k.metric, inst.points[i], inst.points[j]);
            gram[i][j] = oracle_matern(k.nu, d, k.length_scale, k.variance);
        }
        gram[i][i] += k.lambda / (inst.qualities[i] * inst.qualities[i]) + k.jitter;
    }
    let centered: Vec<f64> = inst.values.iter().map(|v| v - mean_offset).collect();
    let cross: Vec<f64> = inst
        .points
        .iter()
        .map(|p| oracle_matern(k.nu, oracle_distance(k.metric, *p, query), k.length_scale, k.variance))
        .collect();

    let alpha = solve_dense(gram.clone(), centered);
    let mean = mean_offset + cross.iter().zip(&alpha).map(|(c, a)| c * a).sum::<f64>();

    let w = solve_dense(gram, cross.clone());
    let reduction: f64 = cross.iter().zip(&w).map(|(c, w)| c * w).sum();
    let variance = (k.variance - reduction).clamp(0.0, k.variance);
    (mean, variance)
}

pub fn station_id(n: usize) -> StationId {
    StationId::new(format!("s{n:03}"))
}

pub fn quality_observation(
    id: usize,
    slice: u32,
    lat: f64,
    lon: f64,
    value: f64,
    quality: f64,
) -> QualityObservation {
    QualityObservation::new(
        Observation::new(station_id(id), slice, value).unwrap(),
        GeoPoint::new(lat, lon).unwrap(),
        quality,
    )
    .unwrap()
}

pub fn kernel_params(k: &OracleKernel) -> CombinedKernelParams {
    let matern = MaternParams::new(k.nu, k.length_scale, k.variance).unwrap();
    let quality = QualityKernelParams::new(k.lambda).unwrap();
    CombinedKernelParams::new(matern, quality, k.metric)
        .with_jitter(k.jitter)
        .unwrap()
}

/// Draws a random oracle instance: `n` points in a small mid-latitude
/// box with pairwise separation, values in a weather-like range and
/// qualities bounded away from zero so the system stays well
/// conditioned relative to the 1e-8 comparison tolerance.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> OracleInstance {
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(n);
    while points.len() < n {
        let p = (48.0 + rng.random::<f64>(), 8.0 + rng.random::<f64>());
        if points
            .iter()
            .all(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt() > 1e-3)
        {
            points.push(p);
        }
    }
    let values = (0..n).map(|_| 10.0 + 15.0 * rng.random::<f64>()).collect();
    let qualities = (0..n).map(|_| 0.2 + 0.8 * rng.random::<f64>()).collect();
    OracleInstance { points, values, qualities }
}

pub fn instance_observations(inst: &OracleInstance) -> Vec<QualityObservation> {
    inst.points
        .iter()
        .zip(&inst.values)
        .zip(&inst.qualities)
        .enumerate()
        .map(|(i, ((p, v), q))| quality_observation(i, 0, p.0, p.1, *v, *q))
        .collect()
}

/// A small deterministic station layout on a jittered grid, split into
/// `n_ref` reference stations followed by volunteered ones.
pub fn toy_stations(n_ref: usize, n_total: usize) -> Vec<SensorStation> {
    let mut rng = ChaCha8Rng::seed_from_u64(424242);
    (0..n_total)
        .map(|i| {
            let lat = 48.0 + 1.5 * rng.random::<f64>();
            let lon = 8.0 + 1.5 * rng.random::<f64>();
            SensorStation {
                id: station_id(i),
                location: GeoPoint::new(lat, lon).unwrap(),
                source: if i < n_ref { SourceClass::Reference } else { SourceClass::Volunteered },
            }
        })
        .collect()
}

/// A smooth synthetic temperature surface used by the toy datasets.
pub fn toy_field(lat: f64, lon: f64, slice: u32) -> f64 {
    18.0 + 1.4 * (lat - 48.7) - 0.9 * (lon - 8.7) + 0.5 * (slice as f64 - 1.0)
}

/// Builds reference and volunteered datasets over `slices` time slices
/// from [`toy_field`] plus small deterministic perturbations; stations
/// listed in `corrupt` get a constant +4 degree offset.
pub fn toy_datasets(
    n_ref: usize,
    n_total: usize,
    slices: u32,
    corrupt: &[usize],
) -> (Dataset, Dataset) {
    let stations = toy_stations(n_ref, n_total);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut ref_obs = Vec::new();
    let mut vol_obs = Vec::new();
    for (i, s) in stations.iter().enumerate() {
        for slice in 0..slices {
            let noise = 0.2 * (rng.random::<f64>() - 0.5);
            let mut value = toy_field(s.location.lat(), s.location.lon(), slice) + noise;
            if corrupt.contains(&i) {
                value += 4.0;
            }
            let obs = Observation::new(s.id.clone(), slice, value).unwrap();
            if i < n_ref {
                ref_obs.push(obs);
            } else {
                vol_obs.push(obs);
            }
        }
    }
    let reference =
        Dataset::with_uniform_quality(stations[..n_ref].to_vec(), ref_obs, 1.0).unwrap();
    let volunteered =
        Dataset::with_uniform_quality(stations[n_ref..].to_vec(), vol_obs, 1.0).unwrap();
    (reference, volunteered)
}
