mod common;

use std::sync::Arc;

use common::{random_unit, rng};
use kernelsurf::bspline::{bezier_kernel, bspline, SUPPORT};
use kernelsurf::geometry::dist2;
use kernelsurf::hierarchy::InputBuildOptions;
use kernelsurf::metrics::{chamfer, fscore, nn_distances};
use kernelsurf::outofcore::{merge_eval, plan_chunks, ChunkResult};
use kernelsurf::sparse::{dot, CsrMatrix};
use kernelsurf::{FitResult, HierarchyParams, KernelModel, OrientedPointCloud, Point, VoxelHierarchy};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

fn cloud(seed: u64, n: usize) -> OrientedPointCloud {
    let mut r = rng(seed);
    let c = Point::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    let radius = r.random_range(0.1..0.4);
    let normals: Vec<_> = (0..n).map(|_| random_unit(&mut r)).collect();
    let positions = normals.iter().map(|v| c + v * radius).collect();
    OrientedPointCloud::new(positions).unwrap().with_normals(normals).unwrap()
}

fn points(seed: u64, n: usize) -> Vec<Point> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| Point::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect()
}

fn hierarchy(seed: u64, n: usize, w: f64, levels: usize, lp: usize) -> (OrientedPointCloud, VoxelHierarchy) {
    let c = cloud(seed, n);
    let params = HierarchyParams::new(w, levels, lp).unwrap();
    let h = VoxelHierarchy::build_from_input(&c, params, InputBuildOptions::default()).unwrap();
    (c, h)
}

fn random_csr(seed: u64, rows: usize, cols: usize) -> CsrMatrix {
    let mut r = rng(seed);
    let rows = (0..rows)
        .map(|_| {
            let mut row = Vec::new();
            for c in 0..cols as u32 {
                if r.random_bool(0.3) {
                    row.push((c, r.random_range(-2.0..2.0)));
                }
            }
            row
        })
        .collect();
    CsrMatrix::from_rows(cols, rows)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bspline_shifts_sum_to_two(s in -10.0f64..10.0) {
        let k0 = s.floor() as i64;
        let sum: f64 = (k0 - 3..=k0 + 3).map(|k| bspline(s - k as f64)).sum();
        prop_assert!((sum - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bspline_is_even_nonnegative_and_compact(s in -3.0f64..3.0) {
        prop_assert_eq!(bspline(s), bspline(-s));
        prop_assert!(bspline(s) >= 0.0);
        if s.abs() >= SUPPORT {
            prop_assert_eq!(bspline(s), 0.0);
        }
    }

    #[test]
    fn kernel_is_symmetric(seed in 0u64..1000, w in 0.01f64..1.0) {
        let p = points(seed, 2);
        let a = bezier_kernel(&p[0], &p[1], w);
        let b = bezier_kernel(&p[1], &p[0], w);
        prop_assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
    }

    #[test]
    fn hierarchy_is_consistent_and_deterministic(
        seed in 0u64..1000,
        n in 20usize..200,
        w in 0.03f64..0.15,
        levels in 1usize..=4,
        lp_frac in 0.0f64..1.0,
    ) {
        let lp = 1 + ((levels - 1) as f64 * lp_frac).round() as usize;
        let (c, h) = hierarchy(seed, n, w, levels, lp);
        prop_assert_eq!(h.check_invariants(), Ok(()));
        let (_, again) = hierarchy(seed, n, w, levels, lp);
        for l in 1..=levels {
            prop_assert_eq!(h.keys(l), again.keys(l));
        }
        for p in c.positions() {
            prop_assert!(!h.bezier_weights(1, p).is_empty());
        }
    }

    #[test]
    fn bezier_weights_stay_in_support(seed in 0u64..1000, q in 0u64..1000, level in 1usize..=3) {
        let (_, h) = hierarchy(seed, 100, 0.06, 3, 1);
        let x = points(q, 1)[0] * 0.5;
        let x = Point::from(x.coords + h.center(1, &h.keys(1)[0]).coords);
        let weights = h.bezier_weights(level, &x);
        let w = h.width(level);
        let mut total = 0.0;
        for (key, v) in &weights {
            prop_assert_eq!(key.level, level);
            prop_assert!(*v > 0.0);
            let c = h.center(level, &key.ijk);
            for a in 0..3 {
                prop_assert!((x[a] - c[a]).abs() < SUPPORT * w);
            }
            total += v;
        }
        prop_assert!(total <= 8.0 + 1e-12);
    }

    #[test]
    fn csr_transpose_and_matvec_agree_with_dense(seed in 0u64..1000, rows in 1usize..20, cols in 1usize..20) {
        let a = random_csr(seed, rows, cols);
        let t = a.transpose();
        prop_assert_eq!(t.to_dense(), a.to_dense().transpose());
        prop_assert_eq!(t.transpose().to_dense(), a.to_dense());
        let mut r = rng(seed + 1);
        let x: Vec<f64> = (0..cols).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..rows).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut ax = vec![0.0; rows];
        a.matvec(&x, &mut ax);
        let dense = a.to_dense() * DVector::from_vec(x.clone());
        for (u, v) in ax.iter().zip(dense.iter()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
        let mut aty = vec![0.0; cols];
        t.matvec(&y, &mut aty);
        prop_assert!((dot(&ax, &y) - dot(&x, &aty)).abs() < 1e-10);
    }

    #[test]
    fn nearest_distances_match_brute_force(seed in 0u64..1000, n in 1usize..300, m in 1usize..300) {
        let q = points(seed, n);
        let t = points(seed + 7, m);
        let fast = nn_distances(&q, &t);
        for (p, d) in q.iter().zip(&fast) {
            let brute = t.iter().map(|y| dist2(p, y)).fold(f64::INFINITY, f64::min).sqrt();
            prop_assert_eq!(*d, brute);
        }
    }

    #[test]
    fn metrics_swap_roles(seed in 0u64..1000, xi in 0.01f64..0.5) {
        let a = points(seed, 150);
        let b = points(seed + 3, 120);
        let ab = chamfer(&a, &b).unwrap();
        let ba = chamfer(&b, &a).unwrap();
        prop_assert_eq!(ab.completeness, ba.accuracy);
        prop_assert_eq!(ab.accuracy, ba.completeness);
        let f = fscore(&a, &b, xi).unwrap();
        let g = fscore(&b, &a, xi).unwrap();
        prop_assert_eq!(f.precision, g.recall);
        prop_assert_eq!(f.recall, g.precision);
        prop_assert!((f.fscore - g.fscore).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn merge_is_independent_of_chunk_order(seed in 0u64..1000, q in 0u64..1000) {
        let c = cloud(seed, 400);
        let params = HierarchyParams::new(0.05, 2, 1).unwrap();
        let layout = plan_chunks(&c, 0.4, 0.16, &params).unwrap();
        let mut r = rng(seed);
        let results: Vec<ChunkResult> = layout
            .chunks
            .iter()
            .enumerate()
            .filter(|(_, ch)| !ch.members.is_empty())
            .map(|(id, ch)| {
                let sub = c.subset(&ch.members.iter().map(|&i| i as usize).collect::<Vec<_>>()).unwrap();
                let h = VoxelHierarchy::build_from_input(&sub, params, InputBuildOptions::default()).unwrap();
                let model = KernelModel::constant(Arc::new(h), 4);
                let mut fit = FitResult::zeros(&model);
                fit.alpha.iter_mut().for_each(|a| *a = r.random_range(-1.0..1.0));
                ChunkResult { id, chunk: ch.clone(), model, fit, mask: None, tau: 1.0 }
            })
            .collect();
        let probes: Vec<Point> = {
            let mut pr = rng(q);
            (0..20)
                .map(|_| {
                    let p = c.positions()[pr.random_range(0..c.len())];
                    Point::new(p.x + pr.random_range(-0.05..0.05), p.y + pr.random_range(-0.05..0.05), p.z)
                })
                .collect()
        };
        let forward: Vec<&ChunkResult> = results.iter().collect();
        let mut reversed = forward.clone();
        reversed.reverse();
        let mut rotated = forward.clone();
        rotated.rotate_left(forward.len() / 2);
        for p in &probes {
            let a = merge_eval(&forward, p);
            prop_assert_eq!(a, merge_eval(&reversed, p));
            prop_assert_eq!(a, merge_eval(&rotated, p));
            prop_assert!((0.0..=1.0).contains(&a.mask));
        }
    }
}
