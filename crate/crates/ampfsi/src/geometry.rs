//! Deforming transfinite-interpolation grids for rectangle-like chambers
//! bounded on one side by the beam, with the metric terms and grid velocity
//! needed by the moving-frame momentum equations.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("mapping folded over: jac <= 0 at node ({0},{1})")]
    FoldedGrid(usize, usize),
    #[error("eta has {0} entries, grid wants {1}")]
    DimensionMismatch(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BeamSide {
    Top,
    Bottom,
    None,
}

/// Undeformed chamber rectangle. The beam-side extent (`y_b` for `Top`,
/// `y_a` for `Bottom`) is the rest position of the wetted beam surface, i.e.
/// it already carries the ±h̄/2 offset from the beam reference line.
#[derive(Clone, Copy, Debug)]
pub struct DomainSpec {
    pub x_a: f64,
    pub x_b: f64,
    pub y_a: f64,
    pub y_b: f64,
    pub beam_side: BeamSide,
}

impl DomainSpec {
    pub fn new(x_a: f64, x_b: f64, y_a: f64, y_b: f64, beam_side: BeamSide) -> Self {
        assert!(x_a < x_b && y_a < y_b);
        DomainSpec { x_a, x_b, y_a, y_b, beam_side }
    }
}

/// Logically rectangular grid with mapping metrics.
///
/// `rx11 = ∂r1/∂x`, `rx12 = ∂r1/∂y`, `rx21 = ∂r2/∂x`, `rx22 = ∂r2/∂y`,
/// `jac = det(∂x/∂r)`. The contravariant combinations
/// `gmk = jac * (∂rm/∂x ∂rk/∂x + ∂rm/∂y ∂rk/∂y)` feed both the conservative
/// pressure operator and the pointwise Laplacian coefficients.
#[derive(Clone)]
pub struct MappedGrid {
    pub n1: usize,
    pub n2: usize,
    pub dr1: f64,
    pub dr2: f64,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub rx11: DMatrix<f64>,
    pub rx12: DMatrix<f64>,
    pub rx21: DMatrix<f64>,
    pub rx22: DMatrix<f64>,
    pub jac: DMatrix<f64>,
    pub g11: DMatrix<f64>,
    pub g12: DMatrix<f64>,
    pub g22: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
}

/// Build the TFI grid for `spec` with the beam-side boundary displaced by the
/// nodal displacement `eta` (reference-line displacement; the surface moves
/// vertically by the same amount). `halfthick` is h̄/2 and is used only to
/// sanity-check the deformed gap; the rest offset is baked into `spec`.
pub fn build_tfi_grid(
    spec: &DomainSpec,
    eta: &[f64],
    halfthick: f64,
    n1: usize,
    n2: usize,
) -> Result<MappedGrid, GridError> {
    assert!(n1 >= 3 && n2 >= 3);
    let _ = halfthick;
    if eta.len() != n1 {
        return Err(GridError::DimensionMismatch(eta.len(), n1));
    }
    let dr1 = 1.0 / (n1 as f64 - 1.0);
    let dr2 = 1.0 / (n2 as f64 - 1.0);
    let mut x = DMatrix::zeros(n1, n2);
    let mut y = DMatrix::zeros(n1, n2);
    for i in 0..n1 {
        let r1 = i as f64 * dr1;
        let xi = spec.x_a + (spec.x_b - spec.x_a) * r1;
        let (ylo, yhi) = match spec.beam_side {
            BeamSide::Top => (spec.y_a, spec.y_b + eta[i]),
            BeamSide::Bottom => (spec.y_a + eta[i], spec.y_b),
            BeamSide::None => (spec.y_a, spec.y_b),
        };
        for j in 0..n2 {
            let r2 = j as f64 * dr2;
            x[(i, j)] = xi;
            y[(i, j)] = ylo + (yhi - ylo) * r2;
        }
    }
    metrics_from_nodes(n1, n2, dr1, dr2, x, y)
}

/// Metrics by second-order differencing of node coordinates (centered in the
/// interior, one-sided 3-point at the edges), so analytically and numerically
/// defined boundaries share a code path.
fn metrics_from_nodes(
    n1: usize,
    n2: usize,
    dr1: f64,
    dr2: f64,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
) -> Result<MappedGrid, GridError> {
    let mut rx11 = DMatrix::zeros(n1, n2);
    let mut rx12 = DMatrix::zeros(n1, n2);
    let mut rx21 = DMatrix::zeros(n1, n2);
    let mut rx22 = DMatrix::zeros(n1, n2);
    let mut jac = DMatrix::zeros(n1, n2);
    let mut g11 = DMatrix::zeros(n1, n2);
    let mut g12 = DMatrix::zeros(n1, n2);
    let mut g22 = DMatrix::zeros(n1, n2);
    let d1 = |f: &DMatrix<f64>, i: usize, j: usize| -> f64 {
        if i == 0 {
            (-3.0 * f[(0, j)] + 4.0 * f[(1, j)] - f[(2, j)]) / (2.0 * dr1)
        } else if i == n1 - 1 {
            (3.0 * f[(i, j)] - 4.0 * f[(i - 1, j)] + f[(i - 2, j)]) / (2.0 * dr1)
        } else {
            (f[(i + 1, j)] - f[(i - 1, j)]) / (2.0 * dr1)
        }
    };
    let d2 = |f: &DMatrix<f64>, i: usize, j: usize| -> f64 {
        if j == 0 {
            (-3.0 * f[(i, 0)] + 4.0 * f[(i, 1)] - f[(i, 2)]) / (2.0 * dr2)
        } else if j == n2 - 1 {
            (3.0 * f[(i, j)] - 4.0 * f[(i, j - 1)] + f[(i, j - 2)]) / (2.0 * dr2)
        } else {
            (f[(i, j + 1)] - f[(i, j - 1)]) / (2.0 * dr2)
        }
    };
    for i in 0..n1 {
        for j in 0..n2 {
            let xr1 = d1(&x, i, j);
            let yr1 = d1(&y, i, j);
            let xr2 = d2(&x, i, j);
            let yr2 = d2(&y, i, j);
            let det = xr1 * yr2 - xr2 * yr1;
            if det <= 0.0 {
                return Err(GridError::FoldedGrid(i, j));
            }
            jac[(i, j)] = det;
            // Inverse of the mapping Jacobian: [r1x r1y; r2x r2y].
            let r1x = yr2 / det;
            let r1y = -xr2 / det;
            let r2x = -yr1 / det;
            let r2y = xr1 / det;
            rx11[(i, j)] = r1x;
            rx12[(i, j)] = r1y;
            rx21[(i, j)] = r2x;
            rx22[(i, j)] = r2y;
            g11[(i, j)] = det * (r1x * r1x + r1y * r1y);
            g12[(i, j)] = det * (r1x * r2x + r1y * r2y);
            g22[(i, j)] = det * (r2x * r2x + r2y * r2y);
        }
    }
    Ok(MappedGrid {
        n1,
        n2,
        dr1,
        dr2,
        x,
        y,
        rx11,
        rx12,
        rx21,
        rx22,
        jac,
        g11,
        g12,
        g22,
        w1: DMatrix::zeros(n1, n2),
        w2: DMatrix::zeros(n1, n2),
    })
}

/// Two-level backward difference of node positions between grid snapshots.
/// Second order only at the half level; the stepping code uses this on the
/// first step (reflected about the seeded initial rate) and grid_velocity3
/// afterwards.
pub fn grid_velocity(prev: &MappedGrid, next: &mut MappedGrid, dt: f64) {
    assert!(dt > 0.0);
    assert_eq!((prev.n1, prev.n2), (next.n1, next.n2), "grid velocity wants matching dimensions");
    for j in 0..next.n2 {
        for i in 0..next.n1 {
            next.w1[(i, j)] = (next.x[(i, j)] - prev.x[(i, j)]) / dt;
            next.w2[(i, j)] = (next.y[(i, j)] - prev.y[(i, j)]) / dt;
        }
    }
}

/// Three-level backward difference w = (3x^{n+1} - 4x^n + x^{n-1})/(2 dt),
/// second-order at the new time level. Needs a uniform step.
pub fn grid_velocity3(prev2: &MappedGrid, prev: &MappedGrid, next: &mut MappedGrid, dt: f64) {
    assert!(dt > 0.0);
    assert_eq!((prev.n1, prev.n2), (next.n1, next.n2), "grid velocity wants matching dimensions");
    assert_eq!((prev2.n1, prev2.n2), (next.n1, next.n2), "grid velocity wants matching dimensions");
    for j in 0..next.n2 {
        for i in 0..next.n1 {
            next.w1[(i, j)] =
                (3.0 * next.x[(i, j)] - 4.0 * prev.x[(i, j)] + prev2.x[(i, j)]) / (2.0 * dt);
            next.w2[(i, j)] =
                (3.0 * next.y[(i, j)] - 4.0 * prev.y[(i, j)] + prev2.y[(i, j)]) / (2.0 * dt);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_spec() -> DomainSpec {
        DomainSpec::new(0.0, 1.0, 0.0, 1.0, BeamSide::Top)
    }

    #[test]
    fn undeformed_grid_is_cartesian() {
        let n = 11;
        let eta = vec![0.0; n];
        let g = build_tfi_grid(&unit_spec(), &eta, 0.0, n, n).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((g.x[(i, j)] - i as f64 / 10.0).abs() < 1e-15);
                assert!((g.y[(i, j)] - j as f64 / 10.0).abs() < 1e-15);
                assert!((g.jac[(i, j)] - 1.0).abs() < 1e-12);
                assert!((g.rx11[(i, j)] - 1.0).abs() < 1e-12);
                assert!((g.rx22[(i, j)] - 1.0).abs() < 1e-12);
                assert!(g.rx12[(i, j)].abs() < 1e-12);
                assert!(g.rx21[(i, j)].abs() < 1e-12);
            }
        }
        assert!((g.y[(5, n - 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tfi_interpolates_displaced_boundary() {
        let n = 21;
        let mut eta = vec![0.0; n];
        for (i, e) in eta.iter_mut().enumerate() {
            let xi = i as f64 / 20.0;
            *e = 0.1 * xi * (1.0 - xi);
        }
        let g = build_tfi_grid(&unit_spec(), &eta, 0.0, n, n).unwrap();
        for i in 0..n {
            let xi = i as f64 / 20.0;
            assert!((g.y[(i, n - 1)] - (1.0 + 0.1 * xi * (1.0 - xi))).abs() < 1e-15);
            assert!(g.jac[(i, 0)] > 0.0);
        }
    }

    #[test]
    fn lower_chamber_surface_offset() {
        // Lower chamber of a two-chamber problem with h̄ = 0.1: the rest
        // surface sits at -h̄/2.
        let spec = DomainSpec::new(-1.0, 1.0, -0.55, -0.05, BeamSide::Top);
        let n = 11;
        let eta = vec![0.0; n];
        let g = build_tfi_grid(&spec, &eta, 0.05, n, n).unwrap();
        for i in 0..n {
            assert!((g.y[(i, n - 1)] + 0.05).abs() < 1e-15);
        }
    }

    #[test]
    fn folded_grid_detected() {
        let n = 11;
        let eta = vec![-1.5; n]; // pushes the top boundary below the bottom
        let err = build_tfi_grid(&unit_spec(), &eta, 0.0, n, n);
        assert!(matches!(err, Err(GridError::FoldedGrid(_, _))));
    }

    #[test]
    fn eta_length_checked() {
        let err = build_tfi_grid(&unit_spec(), &[0.0; 5], 0.0, 11, 11);
        assert!(matches!(err, Err(GridError::DimensionMismatch(5, 11))));
    }

    #[test]
    fn metric_identity_second_order() {
        // For the TFI map with eta = 0.1 sin(pi x), compare computed rx
        // against the analytic inverse Jacobian on three refinements.
        let exact_err = |n: usize| -> f64 {
            let mut eta = vec![0.0; n];
            for (i, e) in eta.iter_mut().enumerate() {
                let xi = i as f64 / (n as f64 - 1.0);
                *e = 0.1 * (std::f64::consts::PI * xi).sin();
            }
            let g = build_tfi_grid(&unit_spec(), &eta, 0.0, n, n).unwrap();
            let mut emax: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let xi = g.x[(i, j)];
                    let r2 = j as f64 / (n as f64 - 1.0);
                    let h = 1.0 + 0.1 * (std::f64::consts::PI * xi).sin();
                    let hp = 0.1 * std::f64::consts::PI * (std::f64::consts::PI * xi).cos();
                    // x = r1, y = h(r1) r2 => r2x = -r2 h'/h, r2y = 1/h.
                    let r2x = -r2 * hp / h;
                    let r2y = 1.0 / h;
                    emax = emax
                        .max((g.rx11[(i, j)] - 1.0).abs())
                        .max(g.rx12[(i, j)].abs())
                        .max((g.rx21[(i, j)] - r2x).abs())
                        .max((g.rx22[(i, j)] - r2y).abs());
                }
            }
            emax
        };
        let e1 = exact_err(11);
        let e2 = exact_err(21);
        let e3 = exact_err(41);
        let r1 = (e1 / e2).log2();
        let r2 = (e2 / e3).log2();
        assert!(r1 > 1.7 && r1 < 2.3, "rate {r1}");
        assert!(r2 > 1.7 && r2 < 2.3, "rate {r2}");
    }

    #[test]
    fn grid_velocity_static_and_translation() {
        let n = 11;
        let eta = vec![0.0; n];
        let g0 = build_tfi_grid(&unit_spec(), &eta, 0.0, n, n).unwrap();
        let mut g1 = g0.clone();
        grid_velocity(&g0, &mut g1, 0.1);
        assert!(g1.w1.amax() < 1e-15);
        assert!(g1.w2.amax() < 1e-15);

        // Rigid vertical translation by delta over dt.
        let spec = DomainSpec::new(0.0, 1.0, 0.25, 1.25, BeamSide::None);
        let mut g2 = build_tfi_grid(&spec, &eta, 0.0, n, n).unwrap();
        grid_velocity(&g0, &mut g2, 0.5);
        for i in 0..n {
            for j in 0..n {
                assert!(g2.w1[(i, j)].abs() < 1e-14);
                assert!((g2.w2[(i, j)] - 0.5).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn grid_velocity_recovers_interface_rate() {
        let n = 21;
        let dt = 1e-3;
        let eta0 = vec![0.0; n];
        let mut eta1 = vec![0.0; n];
        let eps = 0.02;
        for (i, e) in eta1.iter_mut().enumerate() {
            let xi = i as f64 / 20.0;
            *e = dt * eps * xi * (1.0 - xi);
        }
        let g0 = build_tfi_grid(&unit_spec(), &eta0, 0.0, n, n).unwrap();
        let mut g1 = build_tfi_grid(&unit_spec(), &eta1, 0.0, n, n).unwrap();
        grid_velocity(&g0, &mut g1, dt);
        for i in 0..n {
            let xi = i as f64 / 20.0;
            let etadot = eps * xi * (1.0 - xi);
            assert!((g1.w2[(i, n - 1)] - etadot).abs() < 1e-12);
            // Interior scales linearly with r2 for the vertical blend.
            assert!((g1.w2[(i, 10)] - 0.5 * etadot).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_velocity3_is_exact_on_quadratic_motion() {
        // Surface height b(t) = 0.1 t + 0.3 t^2; the three-level difference
        // must return db/dt at the newest level exactly.
        let n = 11;
        let dt = 0.05;
        let grid_at = |t: f64| {
            let eta = vec![0.1 * t + 0.3 * t * t; n];
            build_tfi_grid(&unit_spec(), &eta, 0.0, n, n).unwrap()
        };
        let g0 = grid_at(0.0);
        let g1 = grid_at(dt);
        let mut g2 = grid_at(2.0 * dt);
        grid_velocity3(&g0, &g1, &mut g2, dt);
        let bdot = 0.1 + 0.6 * (2.0 * dt);
        for i in 0..n {
            assert!((g2.w2[(i, n - 1)] - bdot).abs() < 1e-13);
            assert!((g2.w2[(i, 5)] - 0.5 * bdot).abs() < 1e-13);
            assert!(g2.w1[(i, 5)].abs() < 1e-13);
        }
    }
}
