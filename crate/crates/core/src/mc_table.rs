//! Marching-cubes case table generated from first principles.
//!
//! Corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`. Edge
//! `axis * 4 + combo` runs along `axis`, with `combo` giving the bits of the
//! two remaining axes in increasing axis order. For every inside/outside
//! configuration, each cube face contributes segments joining its crossing
//! edges; on ambiguous faces the inside corners are kept apart. The face rule
//! depends only on the face's own corners, so neighboring cells agree on
//! shared faces. Segments are chained into
//! loops, oriented so their normal points from inside to outside, and
//! fan-triangulated.

use std::sync::OnceLock;

/// Triangles for each of the 256 cases, as edge-index triples.
pub struct McTable {
    pub cases: Vec<Vec<[u8; 3]>>,
}

pub fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

fn other_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// The two corners joined by `edge`, lower endpoint first.
pub fn edge_corners(edge: usize) -> (usize, usize) {
    let axis = edge / 4;
    let combo = edge % 4;
    let (b, c) = other_axes(axis);
    let base = ((combo & 1) << b) | (((combo >> 1) & 1) << c);
    (base, base | (1 << axis))
}

fn edge_between(a: usize, b: usize) -> usize {
    let diff = a ^ b;
    debug_assert!(diff.count_ones() == 1);
    let axis = diff.trailing_zeros() as usize;
    let (p, q) = other_axes(axis);
    let lo = a & !diff;
    axis * 4 + ((lo >> p) & 1) + 2 * ((lo >> q) & 1)
}

/// The four corners of each face in cyclic order.
fn faces() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(6);
    for axis in 0..3 {
        let (b, c) = other_axes(axis);
        for side in 0..2 {
            let base = side << axis;
            out.push([
                base,
                base | (1 << b),
                base | (1 << b) | (1 << c),
                base | (1 << c),
            ]);
        }
    }
    out
}

fn edge_midpoint(edge: usize) -> [f64; 3] {
    let (a, b) = edge_corners(edge);
    let (pa, pb) = (corner_offset(a), corner_offset(b));
    std::array::from_fn(|i| 0.5 * (pa[i] + pb[i]) as f64)
}

fn build_case(case: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| (case >> c) & 1 == 1;
    let mut link: [Vec<usize>; 12] = Default::default();
    for face in faces() {
        let crossing: Vec<(usize, usize)> = (0..4)
            .filter_map(|k| {
                let (a, b) = (face[k], face[(k + 1) % 4]);
                (inside(a) != inside(b)).then(|| (k, edge_between(a, b)))
            })
            .collect();
        let mut segments = Vec::new();
        match crossing.len() {
            0 => {}
            2 => segments.push((crossing[0].1, crossing[1].1)),
            4 => {
                // Two diagonal inside corners: cut each one off on its own.
                for k in 0..4 {
                    if inside(face[k]) {
                        let prev = edge_between(face[(k + 3) % 4], face[k]);
                        let next = edge_between(face[k], face[(k + 1) % 4]);
                        segments.push((prev, next));
                    }
                }
            }
            _ => unreachable!("a face has an even number of crossings"),
        }
        for (a, b) in segments {
            link[a].push(b);
            link[b].push(a);
        }
    }

    let mut used = [false; 12];
    let mut triangles = Vec::new();
    for start in 0..12 {
        if used[start] || link[start].is_empty() {
            continue;
        }
        let mut chain = vec![start];
        used[start] = true;
        let mut prev = start;
        let mut cur = link[start][0];
        while cur != start {
            chain.push(cur);
            used[cur] = true;
            let next = if link[cur][0] == prev { link[cur][1] } else { link[cur][0] };
            prev = cur;
            cur = next;
        }
        let pts: Vec<[f64; 3]> = chain.iter().map(|&e| edge_midpoint(e)).collect();
        let mut normal = [0.0; 3];
        for i in 0..pts.len() {
            let (p, q) = (pts[i], pts[(i + 1) % pts.len()]);
            normal[0] += (p[1] - q[1]) * (p[2] + q[2]);
            normal[1] += (p[2] - q[2]) * (p[0] + q[0]);
            normal[2] += (p[0] - q[0]) * (p[1] + q[1]);
        }
        let mut outward = [0.0; 3];
        for &e in &chain {
            let (a, b) = edge_corners(e);
            let (inner, outer) = if inside(a) { (a, b) } else { (b, a) };
            let (pi, po) = (corner_offset(inner), corner_offset(outer));
            for i in 0..3 {
                outward[i] += po[i] as f64 - pi[i] as f64;
            }
        }
        let agree: f64 = (0..3).map(|i| normal[i] * outward[i]).sum();
        if agree < 0.0 {
            chain.reverse();
        }
        for k in 1..chain.len() - 1 {
            triangles.push([chain[0] as u8, chain[k] as u8, chain[k + 1] as u8]);
        }
    }
    triangles
}

pub fn table() -> &'static McTable {
    static TABLE: OnceLock<McTable> = OnceLock::new();
    TABLE.get_or_init(|| McTable {
        cases: (0..256).map(build_case).collect(),
    })
}
