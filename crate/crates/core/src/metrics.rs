//! Surface comparison metrics: Chamfer distance, F-score and normal
//! consistency, plus area-weighted mesh sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{OrientedPointCloud, Point, TriangleMesh, Vector};
use crate::spatial::PointIndex;

pub const DEFAULT_SAMPLES: usize = 100_000;
pub const OBJECT_XI: f64 = 0.01;
pub const SCENE_XI: f64 = 0.1;

/// Area-weighted uniform samples with the face normal of their triangle.
pub fn sample_mesh(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<OrientedPointCloud> {
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += 0.5 * mesh.face_normal(t).norm();
        cumulative.push(total);
    }
    if !(total > 0.0) || count == 0 {
        return Err(Error::EmptyMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for _ in 0..count {
        let u = rng.random::<f64>() * total;
        let t = cumulative
            .partition_point(|&c| c <= u)
            .min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangles[t].map(|i| mesh.vertices[i as usize]);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let p = a.coords * (1.0 - s) + b.coords * (s * (1.0 - r2)) + c.coords * (s * r2);
        positions.push(Point::from(p));
        normals.push(mesh.face_normal(t).normalize());
    }
    OrientedPointCloud::new(positions)?.with_normals(normals)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Chamfer {
    pub dc: f64,
    #[serde(rename = "comp")]
    pub completeness: f64,
    #[serde(rename = "acc")]
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FScore {
    #[serde(rename = "f")]
    pub fscore: f64,
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    pub xi: f64,
}

/// Nearest-neighbor distance from every query point to `target`.
pub fn nn_distances(queries: &[Point], target: &[Point]) -> Vec<f64> {
    let index = PointIndex::new(target.to_vec());
    queries
        .par_iter()
        .map(|q| index.nearest(q).map_or(f64::INFINITY, |(_, d2)| d2.sqrt()))
        .collect()
}

fn nn_indices(queries: &[Point], target: &[Point]) -> Vec<usize> {
    let index = PointIndex::new(target.to_vec());
    queries
        .par_iter()
        .map(|q| index.nearest(q).map(|(i, _)| i).unwrap_or(0))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn check_nonempty(a: &[Point], b: &[Point]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Completeness averages over `gt`, accuracy over `pred`.
pub fn chamfer(gt: &[Point], pred: &[Point]) -> Result<Chamfer> {
    check_nonempty(gt, pred)?;
    let completeness = mean(&nn_distances(gt, pred));
    let accuracy = mean(&nn_distances(pred, gt));
    Ok(Chamfer {
        dc: 0.5 * (completeness + accuracy),
        completeness,
        accuracy,
    })
}

fn fraction_below(d: &[f64], xi: f64) -> f64 {
    d.iter().filter(|&&v| v < xi).count() as f64 / d.len() as f64
}

/// F-score in percent with strict `< xi` matching.
pub fn fscore(gt: &[Point], pred: &[Point], xi: f64) -> Result<FScore> {
    check_nonempty(gt, pred)?;
    if !(xi > 0.0) {
        return Err(Error::InvalidConfig(format!("threshold must be positive, got {xi}")));
    }
    let precision = fraction_below(&nn_distances(pred, gt), xi);
    let recall = fraction_below(&nn_distances(gt, pred), xi);
    let fscore = if precision + recall > 0.0 {
        100.0 * 2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(FScore {
        fscore,
        precision,
        recall,
        xi,
    })
}

fn directional_nc(from: &[Point], from_n: &[Vector], to: &[Point], to_n: &[Vector]) -> f64 {
    let nn = nn_indices(from, to);
    let dots: Vec<f64> = nn
        .iter()
        .zip(from_n)
        .map(|(&j, n)| n.dot(&to_n[j]).abs())
        .collect();
    mean(&dots)
}

/// Mean absolute normal agreement with nearest neighbors, averaged over
/// both directions.
pub fn normal_consistency(gt: &OrientedPointCloud, pred: &OrientedPointCloud) -> Result<f64> {
    let (Some(gn), Some(pn)) = (gt.normals(), pred.normals()) else {
        return Err(Error::InvalidInput("normal consistency needs normals on both sets".into()));
    };
    let (g, p) = (gt.positions(), pred.positions());
    Ok(0.5 * (directional_nc(g, gn, p, pn) + directional_nc(p, pn, g, gn)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Counts {
    pub gt: usize,
    pub pred: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub chamfer: Chamfer,
    pub fscore: FScore,
    pub normal_consistency: f64,
    pub counts: Counts,
    pub seed: u64,
}

/// All metrics between two oriented samples.
pub fn evaluate(gt: &OrientedPointCloud, pred: &OrientedPointCloud, xi: f64, seed: u64) -> Result<MetricReport> {
    Ok(MetricReport {
        chamfer: chamfer(gt.positions(), pred.positions())?,
        fscore: fscore(gt.positions(), pred.positions(), xi)?,
        normal_consistency: normal_consistency(gt, pred)?,
        counts: Counts {
            gt: gt.len(),
            pred: pred.len(),
        },
        seed,
    })
}

/// Sample both meshes with the same seed and compare them.
pub fn evaluate_meshes(
    gt: &TriangleMesh,
    pred: &TriangleMesh,
    samples: usize,
    xi: f64,
    seed: u64,
) -> Result<MetricReport> {
    let g = sample_mesh(gt, samples, seed)?;
    let p = sample_mesh(pred, samples, seed)?;
    evaluate(&g, &p, xi, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point::new(0.0, 0.0, 0.0),
                Point::new(1.0, 0.0, 0.0),
                Point::new(1.0, 1.0, 0.0),
                Point::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn square_samples_are_centered() {
        let s = sample_mesh(&square(), 10_000, 5).unwrap();
        let m = s.positions().iter().fold(Vector::zeros(), |a, p| a + p.coords) / 10_000.0;
        assert!((m.x - 0.5).abs() < 0.02 && (m.y - 0.5).abs() < 0.02);
        assert!(s.normals().unwrap().iter().all(|n| *n == Vector::z()));
        assert_eq!(s, sample_mesh(&square(), 10_000, 5).unwrap());
    }

    #[test]
    fn identity_cases() {
        let s = sample_mesh(&square(), 500, 1).unwrap();
        let c = chamfer(s.positions(), s.positions()).unwrap();
        assert_eq!((c.dc, c.completeness, c.accuracy), (0.0, 0.0, 0.0));
        assert_eq!(fscore(s.positions(), s.positions(), 0.01).unwrap().fscore, 100.0);
        assert_eq!(normal_consistency(&s, &s).unwrap(), 1.0);
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(chamfer(&[], &[Point::origin()]), Err(Error::EmptyInput)));
        assert!(matches!(sample_mesh(&TriangleMesh::default(), 10, 0), Err(Error::EmptyMesh)));
    }

    #[test]
    fn half_precision_configuration() {
        let gt = vec![Point::new(0.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0)];
        let pred = vec![
            Point::new(0.0, 0.0, 0.0),
            Point::new(1.0, 0.0, 0.0),
            Point::new(5.0, 0.0, 0.0),
            Point::new(6.0, 0.0, 0.0),
        ];
        let f = fscore(&gt, &pred, 0.1).unwrap();
        assert_eq!(f.precision, 0.5);
        assert_eq!(f.recall, 1.0);
        assert!((f.fscore - 200.0 / 3.0).abs() < 1e-12);
        let far: Vec<Point> = gt.iter().map(|p| p + Vector::new(0.0, 1.0, 0.0)).collect();
        assert_eq!(fscore(&gt, &far, 0.5).unwrap().fscore, 0.0);
    }
}
