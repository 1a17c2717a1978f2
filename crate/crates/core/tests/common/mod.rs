//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use orbilab::linalg::{c64, CMat, UnitaryMatrix};
use rand::Rng;
use rand_distr::StandardNormal;

/// Minimum transport cost by enumerating every spanning tree of the
/// bipartite graph `K_{m,n}`: each tree carries at most one basic solution,
/// and the linear program attains its optimum at one of them.
pub fn brute_force_ot(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (m, n) = (a.len(), b.len());
    let edges: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(m + n - 1);
    enumerate_trees(&edges, 0, m, n, &mut chosen, &mut |tree| {
        if let Some(c) = tree_solution_cost(tree, a, b, cost) {
            best = best.min(c);
        }
    });
    best
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    r
}

fn enumerate_trees(
    edges: &[(usize, usize)],
    start: usize,
    m: usize,
    n: usize,
    chosen: &mut Vec<(usize, usize)>,
    visit: &mut dyn FnMut(&[(usize, usize)]),
) {
    let need = m + n - 1;
    if chosen.len() == need {
        visit(chosen);
        return;
    }
    if edges.len() - start < need - chosen.len() {
        return;
    }
    for k in start..edges.len() {
        if edges.len() - k < need - chosen.len() {
            break;
        }
        chosen.push(edges[k]);
        let mut parent: Vec<usize> = (0..m + n).collect();
        let mut acyclic = true;
        for &(i, j) in chosen.iter() {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, m + j));
            if ri == rj {
                acyclic = false;
                break;
            }
            parent[ri] = rj;
        }
        if acyclic {
            enumerate_trees(edges, k + 1, m, n, chosen, visit);
        }
        chosen.pop();
    }
}

/// Flows on a spanning tree by peeling leaves; `None` if some flow is
/// negative.
fn tree_solution_cost(tree: &[(usize, usize)], a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> Option<f64> {
    let m = a.len();
    let mut supply: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut alive = vec![true; tree.len()];
    let mut total = 0.0;
    for _ in 0..tree.len() {
        let mut degree = vec![0usize; supply.len()];
        for (e, &(i, j)) in tree.iter().enumerate() {
            if alive[e] {
                degree[i] += 1;
                degree[m + j] += 1;
            }
        }
        let (e, leaf) = tree
            .iter()
            .enumerate()
            .filter(|(e, _)| alive[*e])
            .find_map(|(e, &(i, j))| {
                if degree[i] == 1 {
                    Some((e, i))
                } else if degree[m + j] == 1 {
                    Some((e, m + j))
                } else {
                    None
                }
            })?;
        let (i, j) = tree[e];
        let other = if leaf == i { m + j } else { i };
        let f = supply[leaf];
        if f < -1e-12 {
            return None;
        }
        supply[leaf] = 0.0;
        supply[other] -= f;
        total += f * cost[i][j];
        alive[e] = false;
    }
    Some(total)
}

/// Haar unitary by modified Gram–Schmidt on a complex Ginibre matrix,
/// independent of the library's QR path.
pub fn gram_schmidt_haar<R: Rng>(n: usize, rng: &mut R) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut cols: Vec<Vec<c64>> = (0..n)
        .map(|_| {
            (0..n)
                .map(|_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    c64::new(s * re, s * im)
                })
                .collect()
        })
        .collect();
    for k in 0..n {
        for p in 0..k {
            let (left, right) = cols.split_at_mut(k);
            let q = &left[p];
            let v = &mut right[0];
            let proj: c64 = q.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
            for (x, y) in v.iter_mut().zip(q) {
                *x -= proj * y;
            }
        }
        let norm = cols[k].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        cols[k].iter_mut().for_each(|z| *z /= norm);
    }
    CMat::from_fn(n, n, |i, j| cols[j][i])
}

pub fn trace(m: &CMat) -> c64 {
    (0..m.nrows()).map(|i| m[(i, i)]).sum()
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            d = d.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    d
}

/// `‖U*U − I‖` entrywise maximum.
pub fn unitarity_defect(u: &UnitaryMatrix) -> f64 {
    let m = u.as_mat();
    let n = m.nrows();
    let mut d: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let z: c64 = (0..n).map(|k| m[(k, i)].conj() * m[(k, j)]).sum();
            let id = if i == j { 1.0 } else { 0.0 };
            d = d.max((z - id).norm());
        }
    }
    d
}

/// Squared Euclidean cost between two point lists.
pub fn sq_cost(x: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|p| {
            y.iter()
                .map(|q| p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum())
                .collect()
        })
        .collect()
}
