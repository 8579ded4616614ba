//! Independent oracles shared by the property and acceptance suites.

#![allow(dead_code)]

pub mod props;

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use mfg_core::grid::{dist, Point};
use mfg_core::static_game::residual;
use mfg_core::{CostFunctional, DiscreteMeasure, SpatialGrid};
use proptest::prelude::*;

/// Optimal coupling cost by a dense transportation LP over all couplings.
pub fn lp_w1(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
    let mut pb = Problem::new(OptimizationDirection::Minimize);
    let n = a.len();
    let m = b.len();
    let mut vars = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            vars.push(pb.add_var(dist(&a.points()[i], &b.points()[j]), (0.0, f64::INFINITY)));
        }
    }
    for i in 0..n {
        let mut row = LinearExpr::empty();
        for j in 0..m {
            row.add(vars[i * m + j], 1.0);
        }
        pb.add_constraint(row, ComparisonOp::Eq, a.weights()[i]);
    }
    // one column constraint is implied by the others and total mass
    for j in 0..m - 1 {
        let mut col = LinearExpr::empty();
        for i in 0..n {
            col.add(vars[i * m + j], 1.0);
        }
        pb.add_constraint(col, ComparisonOp::Eq, b.weights()[j]);
    }
    pb.solve().expect("transportation LP is feasible").objective()
}

/// `Σ_i w_i (F(s_i, m) − min)` minimized over weight vectors on a simplex mesh.
pub fn brute_force_static(cost: &CostFunctional, grid: &SpatialGrid, support: &[Point], mesh: usize) -> f64 {
    let mut best = f64::INFINITY;
    let mut counts = vec![0usize; support.len()];
    enumerate_compositions(mesh, support.len(), 0, &mut counts, &mut |c| {
        let (points, weights): (Vec<Point>, Vec<f64>) = c
            .iter()
            .zip(support)
            .filter(|(k, _)| **k > 0)
            .map(|(k, p)| (*p, *k as f64 / mesh as f64))
            .unzip();
        let m = DiscreteMeasure::new(cost.dim(), points, weights).unwrap();
        best = best.min(residual(cost, &m, grid));
    });
    best
}

fn enumerate_compositions(
    total: usize,
    parts: usize,
    idx: usize,
    counts: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
) {
    if idx == parts - 1 {
        counts[idx] = total;
        visit(counts);
        return;
    }
    for k in 0..=total {
        counts[idx] = k;
        enumerate_compositions(total - k, parts, idx + 1, counts, visit);
    }
}

/// Random measure on `[lo, hi]^dim` with 1..=`max_atoms` atoms.
pub fn measure_strategy(dim: usize, lo: f64, hi: f64, max_atoms: usize) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec(((lo..hi), (lo..hi), (0.05f64..1.0)), 1..=max_atoms).prop_map(move |atoms| {
        let points = atoms
            .iter()
            .map(|(x, y, _)| if dim == 1 { [*x, 0.0] } else { [*x, *y] })
            .collect();
        let weights = atoms.iter().map(|a| a.2).collect();
        DiscreteMeasure::normalized(dim, points, weights).unwrap()
    })
}
