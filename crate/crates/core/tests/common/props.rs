//! Property checks, shared by the proptest suite and the acceptance run.
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use mfg_core::ergodic::solve_eikonal;
use mfg_core::measure::push_forward;
use mfg_core::static_game::residual;
use mfg_core::transport::cdf_distance_1d;
use mfg_core::{wasserstein1, DiscreteMeasure, NodeSet, SpatialGrid};
use super::{lp_w1, measure_strategy};

fn box_grid(dim: usize) -> SpatialGrid {
    if dim == 1 {
    SpatialGrid::line(-2.0, 2.0, 40).unwrap()
    } else {
    SpatialGrid::square(-2.0, 2.0, 20).unwrap()
    }
}

pub fn w1_matches_coupling_lp_strategy() -> impl Strategy<Value = (usize, DiscreteMeasure, DiscreteMeasure)> {
    (1usize..=2, measure_strategy(2, -1.5, 1.5, 6), measure_strategy(2, -1.5, 1.5, 6))
}

pub fn w1_matches_coupling_lp((dim, a, b): (usize, DiscreteMeasure, DiscreteMeasure)) -> Result<(), TestCaseError> {
    let flat = |m: &DiscreteMeasure| {
        if dim == 2 { m.clone() } else {
            DiscreteMeasure::new(1, m.points().iter().map(|p| [p[0], 0.0]).collect(), m.weights().to_vec()).unwrap()
        }
    };
    let (a, b) = (flat(&a), flat(&b));
    let exact = wasserstein1(&a, &b).unwrap();
    let lp = lp_w1(&a, &b);
    prop_assert!((exact - lp).abs() <= 1e-9 * (1.0 + lp), "{exact} vs {lp}");
    if dim == 1 {
        prop_assert!((cdf_distance_1d(&a, &b) - lp).abs() <= 1e-10);
    }
    Ok(())
}

pub fn w1_metric_axioms_strategy() -> impl Strategy<Value = (DiscreteMeasure, DiscreteMeasure, DiscreteMeasure)> {
    (measure_strategy(2, -1.5, 1.5, 5), measure_strategy(2, -1.5, 1.5, 5), measure_strategy(2, -1.5, 1.5, 5))
}

pub fn w1_metric_axioms((a, b, c): (DiscreteMeasure, DiscreteMeasure, DiscreteMeasure)) -> Result<(), TestCaseError> {
    let ab = wasserstein1(&a, &b).unwrap();
    let ba = wasserstein1(&b, &a).unwrap();
    let bc = wasserstein1(&b, &c).unwrap();
    let ac = wasserstein1(&a, &c).unwrap();
    prop_assert!(ab >= 0.0);
    prop_assert!((ab - ba).abs() <= 1e-12);
    prop_assert!(ac <= ab + bc + 1e-12);
    prop_assert_eq!(wasserstein1(&a, &a).unwrap(), 0.0);
    // a shuffled copy with split atoms is the same measure
    let mut pts = a.points().to_vec();
    pts.extend_from_slice(a.points());
    let mut w: Vec<f64> = a.weights().iter().map(|w| 0.5 * w).collect();
    w.extend(a.weights().iter().map(|w| 0.5 * w));
    pts.reverse();
    w.reverse();
    let split = DiscreteMeasure::new(2, pts, w).unwrap();
    prop_assert!(wasserstein1(&a, &split).unwrap() <= 1e-12);
    Ok(())
}

pub fn w1_between_diracs_is_euclidean_strategy() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0)
}

pub fn w1_between_diracs_is_euclidean((a, b, c, d): (f64, f64, f64, f64)) -> Result<(), TestCaseError> {
    let one = wasserstein1(&DiscreteMeasure::dirac(1, [a, 0.0]), &DiscreteMeasure::dirac(1, [b, 0.0])).unwrap();
    prop_assert_eq!(one, (a - b).abs());
    let two = wasserstein1(&DiscreteMeasure::dirac(2, [a, c]), &DiscreteMeasure::dirac(2, [b, d])).unwrap();
    prop_assert_eq!(two, (a - b).hypot(c - d));
    Ok(())
}

pub fn push_forward_conserves_mass_and_commutes_with_relabeling_strategy() -> impl Strategy<Value = (DiscreteMeasure, f64)> {
    (measure_strategy(2, -1.5, 1.5, 6), -0.3f64..0.3)
}

pub fn push_forward_conserves_mass_and_commutes_with_relabeling((m, shift): (DiscreteMeasure, f64)) -> Result<(), TestCaseError> {
    let g = box_grid(2);
    let flow = |p: &[f64; 2]| [0.8 * p[0] + shift, p[1] - 0.5 * shift];
    let image = push_forward(&m, flow, &g).unwrap();
    let mass: f64 = image.weights().iter().sum();
    prop_assert!((mass - 1.0).abs() <= 1e-15);
    prop_assert_eq!(image.weights(), m.weights());
    let mut idx: Vec<usize> = (0..m.len()).collect();
    idx.reverse();
    let relabeled = DiscreteMeasure::new(
        2,
        idx.iter().map(|&i| m.points()[i]).collect(),
        idx.iter().map(|&i| m.weights()[i]).collect(),
    ).unwrap();
    let image2 = push_forward(&relabeled, flow, &g).unwrap();
    prop_assert_eq!(image.merged(), image2.merged());
    Ok(())
}

pub fn interpolation_reproduces_multilinear_strategy() -> impl Strategy<Value = (f64, f64, usize, [f64; 4], [f64; 2])> {
    (-3.0f64..0.0, 0.5f64..4.0, 2usize..30, prop::array::uniform4(-2.0f64..2.0), prop::array::uniform2(0.0f64..1.0))
}

pub fn interpolation_reproduces_multilinear((lo, span, cells, c, t): (f64, f64, usize, [f64; 4], [f64; 2])) -> Result<(), TestCaseError> {
    let g = SpatialGrid::new(&[lo, lo - 0.5], &[lo + span, lo + 1.5 * span], &[cells, cells + 3]).unwrap();
    let f = |p: &[f64; 2]| c[0] + c[1] * p[0] + c[2] * p[1] + c[3] * p[0] * p[1];
    let field = g.sample(f);
    let x = [lo + t[0] * span, lo - 0.5 + t[1] * (1.5 * span + 0.5)];
    let got = g.interpolate(&field, &x).unwrap();
    prop_assert!((got - f(&x)).abs() <= 1e-12 * (1.0 + f(&x).abs()) * 10.0, "{got} vs {}", f(&x));
    let line = SpatialGrid::line(lo, lo + span, cells).unwrap();
    let affine = line.sample(|p| c[0] + c[1] * p[0]);
    let y = [lo + t[0] * span, 0.0];
    prop_assert!((line.interpolate(&affine, &y).unwrap() - (c[0] + c[1] * y[0])).abs() <= 1e-12 * 10.0);
    Ok(())
}

pub fn upwind_norm_of_linear_field_is_slope_strategy() -> impl Strategy<Value = (f64, f64)> {
    (-3.0f64..3.0, -3.0f64..3.0)
}

pub fn upwind_norm_of_linear_field_is_slope((a, b): (f64, f64)) -> Result<(), TestCaseError> {
    let g = SpatialGrid::square(-1.0, 1.0, 10).unwrap();
    let field = g.sample(|p| a * p[0] + b * p[1]);
    for i in 0..g.n_nodes() {
        if !g.is_boundary_node(i) {
            prop_assert!((g.upwind_gradient_norm(&field, i) - a.hypot(b)).abs() <= 1e-12);
        }
    }
    Ok(())
}

pub fn distance_to_set_triangle_strategy() -> impl Strategy<Value = ([f64; 2], [f64; 2], Vec<usize>)> {
    (prop::array::uniform2(-2.0f64..2.0), prop::array::uniform2(-2.0f64..2.0), prop::collection::vec(0usize..441, 1..6))
}

pub fn distance_to_set_triangle((x, y, seeds): ([f64; 2], [f64; 2], Vec<usize>)) -> Result<(), TestCaseError> {
    let g = SpatialGrid::square(-2.0, 2.0, 20).unwrap();
    let set = NodeSet::new(g, seeds, 0.0).unwrap();
    let dx = set.distance(&x).unwrap();
    let dy = set.distance(&y).unwrap();
    prop_assert!(dx <= dy + mfg_core::grid::dist(&x, &y) + 1e-12);
    Ok(())
}

pub fn eikonal_homogeneity_and_monotonicity_strategy() -> impl Strategy<Value = (usize, f64, usize, usize, f64)> {
    (1usize..=2, 0.1f64..5.0, 0usize..1000, 0usize..1000, 0.0f64..2.0)
}

pub fn eikonal_homogeneity_and_monotonicity((dim, scale, a, b, bump): (usize, f64, usize, usize, f64)) -> Result<(), TestCaseError> {
    let g = box_grid(dim);
    let n = g.n_nodes();
    let ell = g.sample(|p| 0.5 + bump * p[0] * p[0] + 0.3 * p[1].abs());
    let small = NodeSet::new(g, vec![a % n], 0.0).unwrap();
    let large = NodeSet::new(g, vec![a % n, b % n], 0.0).unwrap();
    let tol = 1e-13;
    let v = solve_eikonal(&ell, &small, &g, tol).unwrap();
    let scaled: Vec<f64> = ell.iter().map(|l| scale * l).collect();
    let vs = solve_eikonal(&scaled, &small, &g, tol).unwrap();
    let vl = solve_eikonal(&ell, &large, &g, tol).unwrap();
    for i in 0..n {
        prop_assert!(v[i] >= 0.0);
        prop_assert!((vs[i] - scale * v[i]).abs() <= 2.0 * tol * scale.max(1.0) + 1e-12 * vs[i].abs());
        prop_assert!(vl[i] <= v[i] + 1e-12);
    }
    for &i in large.indices() {
        prop_assert_eq!(vl[i], 0.0);
    }
    Ok(())
}

pub fn static_residual_is_nonnegative_strategy() -> impl Strategy<Value = (DiscreteMeasure,)> {
    (measure_strategy(1, -1.5, 1.5, 5),)
}

pub fn static_residual_is_nonnegative((m,): (DiscreteMeasure,)) -> Result<(), TestCaseError> {
    let g = SpatialGrid::line(-2.0, 2.0, 100).unwrap();
    for name in ["quadratic_congestion", "two_wells", "fG_plus_g", "separated_kernel"] {
        let f = mfg_core::cost::builtin(name, &Default::default(), &g).unwrap();
        prop_assert!(residual(&f, &m, &g) >= 0.0);
    }
    Ok(())
}
