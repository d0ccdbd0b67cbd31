//! Interface exchange for the partitioned schemes: AMP Robin pressure rows,
//! TP Neumann rows, beam force extraction, the weighted interface-velocity
//! projection, the fourth-order interface filter, and the under-relaxed
//! traction sub-iteration used by TP-SI.
//!
//! All interface coupling is written in terms of the vertical direction: the
//! generalized beam moves along the reference normal, the TFI grids offset
//! nodes vertically, and the chamber grids keep r1 independent of y, so the
//! normal derivative of the pressure reduces to a within-station stencil.

use crate::fluid::{self, BcRow, Edge};
use crate::geometry::MappedGrid;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum CouplingError {
    #[error("interface nodes of the two chambers do not coincide")]
    MismatchedInterface,
    #[error("sub-iteration did not converge within {0} iterations")]
    NoConvergence(usize),
}

/// Partitioned scheme selector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SchemeChoice {
    #[serde(rename = "AMP_FD")]
    AmpFd,
    #[serde(rename = "AMP_PBA_FEM")]
    AmpPbaFem,
    #[serde(rename = "TP")]
    Tp,
    #[serde(rename = "TP_SI")]
    TpSi {
        omega: f64,
        tol: f64,
        max_iters: usize,
    },
}

impl SchemeChoice {
    pub fn validate(&self) -> Result<(), String> {
        if let SchemeChoice::TpSi {
            omega,
            tol,
            max_iters,
        } = self
        {
            if !(*omega > 0.0 && *omega <= 1.0) {
                return Err(format!("TP_SI relaxation {} outside (0, 1]", omega));
            }
            if !(*tol > 0.0) {
                return Err("TP_SI tolerance must be positive".into());
            }
            if *max_iters == 0 {
                return Err("TP_SI needs at least one sub-iteration".into());
            }
        }
        Ok(())
    }

    pub fn is_amp(&self) -> bool {
        matches!(self, SchemeChoice::AmpFd | SchemeChoice::AmpPbaFem)
    }
}

/// Per-step interface exchange record.
#[derive(Clone, Debug)]
pub struct InterfaceData {
    /// normal traction from the chamber below the beam, per node
    pub traction_minus: Option<Vec<f64>>,
    /// normal traction from the chamber above the beam, per node
    pub traction_plus: Option<Vec<f64>>,
    /// pointwise L^(p) + forcing, equivalently rho_h a^(p) - f^(p)
    pub beam_rhs: Vec<f64>,
    pub gamma: f64,
    pub a_f: f64,
}

impl InterfaceData {
    pub fn new(
        beam_rhs: Vec<f64>,
        rho_a_bar: f64,
        rho: f64,
        a_f: f64,
    ) -> Self {
        let gamma = projection_gamma(rho_a_bar, rho, a_f);
        if rho_a_bar > 0.0 {
            debug_assert!(gamma > 0.0 && gamma < 1.0);
        }
        InterfaceData {
            traction_minus: None,
            traction_plus: None,
            beam_rhs,
            gamma,
            a_f,
        }
    }
}

/// Projection weight gamma = 1 / (1 + rho_a_bar / (rho A_f)).
pub fn projection_gamma(rho_a_bar: f64, rho: f64, a_f: f64) -> f64 {
    1.0 / (1.0 + rho_a_bar / (rho * a_f))
}

/// One chamber's view of the interface: its grid, the fields entering the
/// viscous terms, and which horizontal edge touches the beam.
pub struct SideData<'a> {
    pub grid: &'a MappedGrid,
    pub v2: &'a DMatrix<f64>,
    pub p: Option<&'a DMatrix<f64>>,
    pub edge: Edge,
    /// chamber index inside the assembled pressure system
    pub chamber: usize,
    pub rho: f64,
}

impl SideData<'_> {
    fn surface_j(&self) -> usize {
        match self.edge {
            Edge::Top => self.grid.n2 - 1,
            Edge::Bottom => 0,
            _ => panic!("beam edge must be horizontal"),
        }
    }

    /// tau22 = 2 mu dv2/dy at the surface node of station i
    fn tau22(&self, i: usize, mu: f64) -> f64 {
        2.0 * mu * fluid::ddy_at(self.grid, self.v2, i, self.surface_j())
    }

    fn lap_v2(&self, i: usize) -> f64 {
        fluid::laplacian_at_edge5(self.grid, self.v2, i, self.edge)
    }
}

fn check_interface_match(a: &SideData, b: &SideData) -> Result<(), CouplingError> {
    if a.grid.n1 != b.grid.n1 {
        return Err(CouplingError::MismatchedInterface);
    }
    let (ja, jb) = (a.surface_j(), b.surface_j());
    for i in 0..a.grid.n1 {
        if (a.grid.x[(i, ja)] - b.grid.x[(i, jb)]).abs() > 1e-12 {
            return Err(CouplingError::MismatchedInterface);
        }
    }
    Ok(())
}

/// AMP Robin rows for a beam wetted on one side. With beta = rho_a_bar / rho
/// and the surface value s = +1 for fluid below (interface on the chamber's
/// top edge) or s = -1 for fluid above:
///   s p + beta dp/dy = -beam_rhs + s tau22 + beta mu lap(v2) + rho_a_bar fb2
/// discretized with the one-sided within-station vertical stencil.
pub fn amp_pressure_rows_one_sided(
    side: &SideData,
    beam_rhs: &[f64],
    body_v: Option<&[f64]>,
    rho_a_bar: f64,
    mu: f64,
) -> (Vec<BcRow>, Vec<f64>) {
    let n1 = side.grid.n1;
    assert_eq!(beam_rhs.len(), n1);
    let beta = rho_a_bar / side.rho;
    let js = side.surface_j();
    let sgn = match side.edge {
        Edge::Top => 1.0,
        _ => -1.0,
    };
    let mut rows = Vec::with_capacity(n1);
    let mut rhs = Vec::with_capacity(n1);
    for i in 0..n1 {
        let mut cols = vec![(side.chamber, i, js, sgn)];
        for (j, c) in fluid::ddy_stencil_r2_hi(side.grid, i, side.edge) {
            cols.push((side.chamber, i, j, beta * c));
        }
        rows.push(BcRow {
            node: (side.chamber, i, js),
            cols,
        });
        let fb = body_v.map_or(0.0, |b| b[i]);
        rhs.push(
            -beam_rhs[i] + sgn * side.tau22(i, mu) + beta * mu * side.lap_v2(i) + rho_a_bar * fb,
        );
    }
    (rows, rhs)
}

/// AMP Robin rows for a beam wetted on both sides; one row per station per
/// chamber d:
///   (p- - p+) + beta_d dp_d/dy
///     = -beam_rhs - tau22+ + tau22- + beta_d mu lap(v2)_d + rho_a_bar fb2
/// The minus row replaces the lower chamber's surface node, the plus row the
/// upper chamber's, so the coupled system stays square.
pub fn amp_pressure_rows_two_sided(
    below: &SideData,
    above: &SideData,
    beam_rhs: &[f64],
    body_v: Option<&[f64]>,
    rho_a_bar: f64,
    mu: f64,
) -> Result<(Vec<BcRow>, Vec<f64>), CouplingError> {
    check_interface_match(below, above)?;
    assert_eq!(below.edge, Edge::Top, "lower chamber touches the beam from below");
    assert_eq!(above.edge, Edge::Bottom, "upper chamber touches the beam from above");
    let n1 = below.grid.n1;
    assert_eq!(beam_rhs.len(), n1);
    let jm = below.surface_j();
    let jp = above.surface_j();
    let mut rows = Vec::with_capacity(2 * n1);
    let mut rhs = Vec::with_capacity(2 * n1);
    for i in 0..n1 {
        let fb = body_v.map_or(0.0, |b| b[i]);
        let tau_m = below.tau22(i, mu);
        let tau_p = above.tau22(i, mu);
        let shared = -beam_rhs[i] - tau_p + tau_m + rho_a_bar * fb;
        for side in [below, above] {
            let beta = rho_a_bar / side.rho;
            let mut cols = vec![
                (below.chamber, i, jm, 1.0),
                (above.chamber, i, jp, -1.0),
            ];
            for (j, c) in fluid::ddy_stencil_r2_hi(side.grid, i, side.edge) {
                cols.push((side.chamber, i, j, beta * c));
            }
            rows.push(BcRow {
                node: (side.chamber, i, side.surface_j()),
                cols,
            });
            rhs.push(shared + beta * mu * side.lap_v2(i));
        }
    }
    Ok((rows, rhs))
}

/// TP Neumann rows: dp/dy at the interface equals -rho_d times the
/// (time-lagged) beam acceleration.
pub fn tp_pressure_rows(side: &SideData, beam_accel: &[f64]) -> (Vec<BcRow>, Vec<f64>) {
    let n1 = side.grid.n1;
    assert_eq!(beam_accel.len(), n1);
    let js = side.surface_j();
    let mut rows = Vec::with_capacity(n1);
    let mut rhs = Vec::with_capacity(n1);
    for i in 0..n1 {
        let cols = fluid::ddy_stencil_r2_hi(side.grid, i, side.edge)
            .iter()
            .map(|&(j, c)| (side.chamber, i, j, c))
            .collect();
        rows.push(BcRow {
            node: (side.chamber, i, js),
            cols,
        });
        rhs.push(-side.rho * beam_accel[i]);
    }
    (rows, rhs)
}

/// Net vertical fluid force on the beam:
/// two-sided f = (p- - p+) + (tau22+ - tau22-); a missing side drops out.
pub fn beam_force_from_fluid(
    below: Option<&SideData>,
    above: Option<&SideData>,
    mu: f64,
) -> Vec<f64> {
    let n1 = below
        .map(|s| s.grid.n1)
        .or_else(|| above.map(|s| s.grid.n1))
        .expect("at least one wetted side");
    let mut f = vec![0.0; n1];
    if let Some(s) = below {
        let js = s.surface_j();
        let p = s.p.expect("pressure required for force extraction");
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += p[(i, js)] - s.tau22(i, mu);
        }
    }
    if let Some(s) = above {
        let js = s.surface_j();
        let p = s.p.expect("pressure required for force extraction");
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += -p[(i, js)] + s.tau22(i, mu);
        }
    }
    f
}

/// Weighted interface-velocity projection: per side
///   vI_d = gamma v_d + (1 - gamma)(v_beam + w_base)
/// and the new beam velocity is the plain mean over sides of (vI_d - w_base).
/// Only the normal (vertical) component takes part. The caller filters the
/// result and then resets the fluid surface velocity to v_beam_new + w_base,
/// which restores the kinematic condition exactly.
pub fn project_interface_velocity(
    v_fluid_sides: &[&[f64]],
    v_beam: &[f64],
    w_base: &[f64],
    gamma: f64,
) -> Vec<f64> {
    assert!(!v_fluid_sides.is_empty());
    let n = v_beam.len();
    let mut out = vec![0.0; n];
    for side in v_fluid_sides {
        assert_eq!(side.len(), n);
        for i in 0..n {
            let vi = gamma * side[i] + (1.0 - gamma) * (v_beam[i] + w_base[i]);
            out[i] += (vi - w_base[i]) / v_fluid_sides.len() as f64;
        }
    }
    out
}

/// A few iterations of the fourth-order interface filter
///   u_i <- u_i - (beta/16)(u_{i-2} - 4 u_{i-1} + 6 u_i - 4 u_{i+1} + u_{i+2})
/// applied simultaneously on interior points; the two points nearest each
/// boundary are left untouched.
pub fn filter_interface_velocity(u: &mut [f64], iterations: usize, beta: f64) {
    let n = u.len();
    if n < 5 {
        return;
    }
    for _ in 0..iterations {
        let old = u.to_vec();
        for i in 2..n - 2 {
            u[i] -= beta / 16.0
                * (old[i - 2] - 4.0 * old[i - 1] + 6.0 * old[i] - 4.0 * old[i + 1] + old[i + 2]);
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SubiterationReport {
    pub iterations: usize,
    pub converged: bool,
    pub last_change: f64,
}

/// Under-relaxed fixed-point iteration on the interface traction:
/// t_{k+1} = (1 - omega) t_k + omega step(t_k), stopping when the applied
/// max-norm change drops below tol. Non-convergence is reported, not raised:
/// for light beams it is an expected experimental outcome.
pub fn tp_subiterate(
    traction: &mut [f64],
    omega: f64,
    tol: f64,
    max_iters: usize,
    mut step: impl FnMut(&[f64]) -> Vec<f64>,
) -> SubiterationReport {
    assert!(omega > 0.0 && omega <= 1.0);
    let mut last_change = f64::INFINITY;
    for k in 1..=max_iters {
        let t_new = step(traction);
        assert_eq!(t_new.len(), traction.len());
        let mut change = 0.0f64;
        for (t, tn) in traction.iter_mut().zip(&t_new) {
            let applied = omega * (tn - *t);
            change = change.max(applied.abs());
            *t += applied;
        }
        last_change = change;
        if change < tol {
            return SubiterationReport {
                iterations: k,
                converged: true,
                last_change,
            };
        }
    }
    SubiterationReport {
        iterations: max_iters,
        converged: false,
        last_change,
    }
}
