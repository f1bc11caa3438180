//! Supervision losses evaluated as scalar diagnostics of a fitted field
//! against a dense oriented reference.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{dist2, OrientedPointCloud, Point, Vector};
use crate::model::KernelModel;
use crate::solver::FitResult;
use crate::spatial::PointIndex;

pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_ETA: f64 = 0.5;

/// Gradients shorter than this are treated as undefined directions.
pub const MIN_GRADIENT: f64 = 1e-12;

/// Dense oriented cloud with its near-surface band radius.
#[derive(Debug, Clone)]
pub struct DenseReference {
    cloud: OrientedPointCloud,
    epsilon: f64,
    index: PointIndex,
}

impl DenseReference {
    pub fn new(cloud: OrientedPointCloud, epsilon: f64) -> Result<Self> {
        if cloud.is_empty() || cloud.normals().is_none() {
            return Err(Error::EmptyReference);
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("band radius must be positive, got {epsilon}")));
        }
        let index = PointIndex::new(cloud.positions().to_vec());
        Ok(Self { cloud, epsilon, index })
    }

    pub fn cloud(&self) -> &OrientedPointCloud {
        &self.cloud
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn normal(&self, i: usize) -> Vector {
        self.cloud.normals().unwrap()[i]
    }

    /// Point-to-plane distance to the nearest reference point, clamped to
    /// `[-trunc, trunc]`.
    pub fn tsdf(&self, x: &Point, trunc: f64) -> f64 {
        let (i, _) = self.index.nearest(x).expect("reference is non-empty");
        let p = self.cloud.positions()[i];
        (x - p).dot(&self.normal(i)).clamp(-trunc, trunc)
    }

    /// Strictly inside the band around the reference.
    pub fn in_band(&self, x: &Point) -> bool {
        self.index.nearest(x).is_some_and(|(_, d2)| d2 < self.epsilon * self.epsilon)
    }
}

/// Truncated signed distance of `x` against `reference` (nearest point's
/// tangent plane).
pub fn tsdf(x: &Point, reference: &DenseReference, trunc: f64) -> f64 {
    reference.tsdf(x, trunc)
}

/// Closed-ball test: some point of `cloud` lies within `tau` of `x`.
pub fn mask_distance(x: &Point, cloud: &[Point], tau: f64) -> bool {
    let t2 = tau * tau;
    cloud.iter().any(|p| dist2(x, p) <= t2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleCounts {
    pub surface: usize,
    pub band: usize,
    pub normal: usize,
    pub outside: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        Self {
            surface: 10_000,
            band: 10_000,
            normal: 10_000,
            outside: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub counts: SampleCounts,
    pub beta: f64,
    pub eta: f64,
    /// TSDF truncation; the band radius when absent.
    pub truncation: Option<f64>,
    pub seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            counts: SampleCounts::default(),
            beta: DEFAULT_BETA,
            eta: DEFAULT_ETA,
            truncation: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub surf: f64,
    pub tsdf: f64,
    /// `None` when every normal sample had a vanishing gradient.
    pub normal: Option<f64>,
    /// `None` without sensor origins.
    pub outside: Option<f64>,
    pub min_surf: f64,
    pub zero_gradient_samples: usize,
    pub counts: SampleCounts,
    pub seed: u64,
}

impl LossReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Indices of up to `count` distinct reference points; all of them, in
/// order, when `count >= n`.
fn pick(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    if count >= n {
        (0..n).collect()
    } else {
        let mut v = sample(rng, n, count).into_vec();
        v.sort_unstable();
        v
    }
}

/// Gaussian perturbations of random reference points kept when inside the
/// band.
fn band_samples(rng: &mut ChaCha8Rng, reference: &DenseReference, count: usize) -> Vec<Point> {
    let pts = reference.cloud.positions();
    let normal = Normal::new(0.0, reference.epsilon / 2.0).expect("positive sigma");
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count && attempts < count.saturating_mul(100).max(1000) {
        attempts += 1;
        let p = pts[rng.random_range(0..pts.len())];
        let x = p + Vector::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        if reference.in_band(&x) {
            out.push(x);
        }
    }
    out
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Monte-Carlo estimates of the five supervision losses of `fit`.
pub fn loss_report(
    model: &KernelModel,
    fit: &FitResult,
    reference: &DenseReference,
    cfg: &LossConfig,
) -> Result<LossReport> {
    if fit.alpha.len() != model.hierarchy().total_len() {
        return Err(Error::InvalidFit(format!(
            "{} coefficients for {} voxels",
            fit.alpha.len(),
            model.hierarchy().total_len()
        )));
    }
    if !(cfg.beta > 0.0 && cfg.eta > 0.0) {
        return Err(Error::InvalidConfig("beta and eta must be positive".into()));
    }
    let trunc = cfg.truncation.unwrap_or(reference.epsilon);
    let f = |x: &Point| model.field_unchecked(&fit.alpha, x);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pts = reference.cloud.positions();
    let n = pts.len();

    let surf_idx = pick(&mut rng, n, cfg.counts.surface);
    let surf = mean(surf_idx.iter().map(|&i| f(&pts[i]).abs())).unwrap_or(0.0);

    let band = band_samples(&mut rng, reference, cfg.counts.band);
    if band.is_empty() {
        return Err(Error::EmptyReference);
    }
    let tsdf = mean(band.iter().map(|x| (f(x) - reference.tsdf(x, trunc)).abs())).unwrap();
    let eta = cfg.eta;
    let min_surf = mean(band.iter().map(|x| {
        let v = f(x);
        (eta / PI) / (eta * eta + v * v)
    }))
    .unwrap();

    let normal_idx = pick(&mut rng, n, cfg.counts.normal);
    let mut zero_gradient_samples = 0;
    let normal = mean(normal_idx.iter().filter_map(|&i| {
        let (_, g) = model.field_grad_unchecked(&fit.alpha, &pts[i]);
        let len = g.norm();
        if len < MIN_GRADIENT {
            zero_gradient_samples += 1;
            return None;
        }
        Some(1.0 - (g / len).dot(&reference.normal(i)))
    }));

    let outside = match reference.cloud.sensor_origins() {
        None => None,
        Some(origins) => {
            let mut vals = Vec::with_capacity(cfg.counts.outside);
            for _ in 0..cfg.counts.outside {
                let i = rng.random_range(0..n);
                let t: f64 = rng.random();
                let x = pts[i] + (origins[i] - pts[i]) * t;
                vals.push((-cfg.beta * f(&x).abs()).exp());
            }
            mean(vals.into_iter())
        }
    };

    Ok(LossReport {
        surf,
        tsdf,
        normal,
        outside,
        min_surf,
        zero_gradient_samples,
        counts: cfg.counts,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::hierarchy::{HierarchyParams, InputBuildOptions, VoxelHierarchy};

    fn plane(n: usize) -> OrientedPointCloud {
        let pts: Vec<Point> = (0..n * n)
            .map(|i| Point::new((i % n) as f64 * 0.05, (i / n) as f64 * 0.05, 0.0))
            .collect();
        let m = pts.len();
        OrientedPointCloud::new(pts)
            .unwrap()
            .with_normals(vec![Vector::z(); m])
            .unwrap()
    }

    fn brute_tsdf(x: &Point, cloud: &OrientedPointCloud, trunc: f64) -> f64 {
        let pts = cloud.positions();
        let mut best = 0;
        for i in 1..pts.len() {
            if dist2(x, &pts[i]) < dist2(x, &pts[best]) {
                best = i;
            }
        }
        (x - pts[best]).dot(&cloud.normals().unwrap()[best]).clamp(-trunc, trunc)
    }

    #[test]
    fn tsdf_cases() {
        let r = DenseReference::new(plane(10), 0.1).unwrap();
        assert_eq!(tsdf(&Point::new(0.12, 0.31, 0.0), &r, 0.1), 0.0);
        assert!((tsdf(&Point::new(0.1, 0.1, 0.05), &r, 0.1) - 0.05).abs() < 1e-15);
        assert_eq!(tsdf(&Point::new(0.1, 0.1, -3.0), &r, 0.1), -0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let x = Point::new(
                rng.random_range(-0.2..0.7),
                rng.random_range(-0.2..0.7),
                rng.random_range(-0.2..0.2),
            );
            assert_eq!(tsdf(&x, &r, 0.1), brute_tsdf(&x, r.cloud(), 0.1));
        }
    }

    #[test]
    fn reference_errors() {
        let bare = OrientedPointCloud::new(vec![Point::origin()]).unwrap();
        assert!(matches!(DenseReference::new(bare, 0.1), Err(Error::EmptyReference)));
        assert!(matches!(
            DenseReference::new(plane(2), 0.0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn mask_distance_closed_ball() {
        let pts = [Point::new(0.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0)];
        assert!(mask_distance(&pts[1], &pts, 0.25));
        assert!(mask_distance(&Point::new(0.0, 0.25, 0.0), &pts, 0.25));
        assert!(!mask_distance(&Point::new(0.0, 2.5, 0.0), &pts, 0.25));
    }

    #[test]
    fn zero_field_report() {
        let cloud = plane(8);
        let n = cloud.len();
        let cloud = cloud
            .with_sensor_origins(vec![Point::new(0.2, 0.2, 1.0); n])
            .unwrap();
        let h = VoxelHierarchy::build_from_input(
            &cloud,
            HierarchyParams::new(0.1, 2, 1).unwrap(),
            InputBuildOptions::default(),
        )
        .unwrap();
        let model = KernelModel::constant(Arc::new(h), 2);
        let fit = FitResult::zeros(&model);
        let r = DenseReference::new(cloud, 0.1).unwrap();
        let cfg = LossConfig {
            counts: SampleCounts {
                surface: 50,
                band: 200,
                normal: 30,
                outside: 100,
            },
            seed: 4,
            ..Default::default()
        };
        let rep = loss_report(&model, &fit, &r, &cfg).unwrap();
        assert_eq!(rep.surf, 0.0);
        assert_eq!(rep.outside, Some(1.0));
        assert!((rep.min_surf - 1.0 / (0.5 * PI)).abs() < 1e-9);
        assert_eq!(rep.normal, None);
        assert_eq!(rep.zero_gradient_samples, 30);
        assert_eq!(rep, loss_report(&model, &fit, &r, &cfg).unwrap());
        let no_sensor = DenseReference::new(plane(8), 0.1).unwrap();
        assert_eq!(loss_report(&model, &fit, &no_sensor, &cfg).unwrap().outside, None);
    }
}
