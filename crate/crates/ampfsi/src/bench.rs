//! Benchmark exact solutions, manufactured forcings, error norms, and
//! convergence-rate estimation. The manufactured forcing kernels are
//! machine-generated from the symbolic momentum/beam residuals and validated
//! against a high-order finite-difference differentiation oracle in the
//! tests below.

use crate::beam::{BeamBc, BeamParams};
use crate::coupling::SchemeChoice;
use crate::fluid::{FluidBc, FluidBcTag, FluidParams, ScalarProfile, VelProfile};
use crate::geometry::{BeamSide, DomainSpec, MappedGrid};
use crate::sim::{ChamberSpec, InitData, Problem, Simulator};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Manufactured-solution parameters (amplitude and space/time frequencies).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MmsParams {
    pub a: f64,
    pub fx: f64,
    pub ft: f64,
}

impl Default for MmsParams {
    fn default() -> Self {
        MmsParams {
            a: 0.5,
            fx: 2.0,
            ft: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MmsFields {
    pub v1: f64,
    pub v2: f64,
    pub p: f64,
    pub eta: f64,
    pub etadot: f64,
}

pub fn mms_eta(x: f64, t: f64, m: &MmsParams) -> f64 {
    m.a / (PI * m.ft) * (m.fx * PI * x).sin() * (m.ft * PI * t).sin()
}

pub fn mms_etadot(x: f64, t: f64, m: &MmsParams) -> f64 {
    m.a * (m.fx * PI * x).sin() * (m.ft * PI * t).cos()
}

pub fn mms_etaddot(x: f64, t: f64, m: &MmsParams) -> f64 {
    -m.a * PI * m.ft * (m.fx * PI * x).sin() * (m.ft * PI * t).sin()
}

fn mms_eta_x(x: f64, t: f64, m: &MmsParams) -> f64 {
    m.a * m.fx / m.ft * (m.fx * PI * x).cos() * (m.ft * PI * t).sin()
}

pub fn mms_v1(x: f64, y: f64, t: f64, m: &MmsParams) -> f64 {
    let ytil = y - 1.0 - mms_eta(x, t, m);
    -m.a * (m.fx * PI * x).cos() * (m.fx * PI * ytil).sin() * (m.ft * PI * t).cos()
}

pub fn mms_v2(x: f64, y: f64, t: f64, m: &MmsParams) -> f64 {
    let ytil = y - 1.0 - mms_eta(x, t, m);
    let c = (m.fx * PI * x).cos();
    let s = (m.fx * PI * x).sin();
    let tc = (m.ft * PI * t).cos();
    m.a * s * (m.fx * PI * ytil).cos() * tc
        - m.a * mms_eta_x(x, t, m) * c * (m.fx * PI * ytil).sin() * tc
}

pub fn mms_p(x: f64, y: f64, t: f64, m: &MmsParams) -> f64 {
    (m.fx * PI * x).cos() * (m.fx * PI * y).cos() * (m.ft * PI * t).cos()
}

/// Analytic pressure gradient (side/bottom Neumann data).
pub fn mms_p_grad(x: f64, y: f64, t: f64, m: &MmsParams) -> [f64; 2] {
    let tc = (m.ft * PI * t).cos();
    [
        -m.fx * PI * (m.fx * PI * x).sin() * (m.fx * PI * y).cos() * tc,
        -m.fx * PI * (m.fx * PI * x).cos() * (m.fx * PI * y).sin() * tc,
    ]
}

pub fn manufactured_exact(x: f64, y: f64, t: f64, m: &MmsParams) -> MmsFields {
    MmsFields {
        v1: mms_v1(x, y, t, m),
        v2: mms_v2(x, y, t, m),
        p: mms_p(x, y, t, m),
        eta: mms_eta(x, t, m),
        etadot: mms_etadot(x, t, m),
    }
}

/// dv1/dx and dv2/dy by the chain rule, coded independently of the field
/// evaluators (used to confirm the construction is divergence-free).
pub fn mms_div_terms(x: f64, y: f64, t: f64, m: &MmsParams) -> (f64, f64) {
    let ytil = y - 1.0 - mms_eta(x, t, m);
    let c = (m.fx * PI * x).cos();
    let s = (m.fx * PI * x).sin();
    let ct = (m.fx * PI * ytil).cos();
    let st = (m.fx * PI * ytil).sin();
    let tc = (m.ft * PI * t).cos();
    let ex = mms_eta_x(x, t, m);
    let dv1dx = m.a * m.fx * PI * tc * (s * st + c * ct * ex);
    let dv2dy = -m.a * m.fx * PI * tc * (s * st + ex * c * ct);
    (dv1dx, dv2dy)
}

// Momentum-residual kernel, machine-generated from the symbolic form of
// f = v_t + (v.grad)v + grad(p)/rho - (mu/rho) lap(v) on the exact fields.
#[allow(clippy::too_many_arguments)]
#[rustfmt::skip]
fn mms_fluid_forcing_gen(x: f64, y: f64, t: f64, a: f64, fx: f64, ft: f64, rho: f64, mu: f64) -> (f64, f64) {
    let x0 = PI*fx;
    let x1 = x0*y;
    let x2 = x*x0;
    let x3 = x2.sin();
    let x4 = x0*x3;
    let x5 = PI*ft;
    let x6 = t*x5;
    let x7 = x6.cos();
    let x8 = rho.recip()*x7;
    let x9 = x6.sin();
    let x10 = a*x9;
    let x11 = x2.cos();
    let x12 = ft.recip();
    let x13 = x10*x3;
    let x14 = fx*x12*x13 + x0 - x1;
    let x15 = x14.sin();
    let x16 = x11*x15;
    let x17 = x14.cos();
    let x18 = a.powi(2);
    let x19 = x7.powi(2);
    let x20 = x18*x19;
    let x21 = x11*x20*x4;
    let x22 = fx.powi(2);
    let x23 = 2.0*x22;
    let x24 = PI.powi(2)*mu;
    let x25 = x24*x8;
    let x26 = a*x23*x25;
    let x27 = x15.powi(2);
    let x28 = x17.powi(2);
    let x29 = a.powi(3);
    let x30 = x15*x25;
    let x31 = x9.powi(2);
    let x32 = ft.powi(-2)*fx.powi(4)*x31;
    let x33 = fx.powi(3);
    let x34 = x11*x8;
    let x35 = x17*x3;
    let x36 = x12*x9;
    let x37 = x35*x36;
    let x38 = 3.0*x18;
    let x39 = x11.powi(2);
    let x40 = x15*x39;
    let x41 = x0*x20;
    let x42 = x40*x41;
    let x43 = x18*x40;
    let x44 = x15*x3.powi(2);
    let x45 = x41*x44;
    let x46 = x29*x39;
    let x47 = PI*x19*x46;
    let x48 = x22*x47;
    let x49 = x25*x33*x36;
    let x50 = x3*x36;
    (-x10*x16*x5 + x11.powi(3)*x29*x30*x32 + x16*x26 + x17*x21 - x21*x27 - x21*x28 + x24*x33*x34*x37*x38 - x4*x8*x1.cos(), a.powi(4)*ft.powi(-3)*fx.powi(5)*x30*x11.powi(4)*x9.powi(3) - x0*x31*x43 - x0*x34*x1.sin() - x13*x17*x5 + x17*x42 + x17*x45 - x23*x27*x47*x50 + 6.0*x25*x32*x35*x46 + x26*x35 - x28*x48*x50 + x37*x48 - x38*x44*x49 + x42 + 5.0*x43*x49 - x45)
}

#[allow(clippy::too_many_arguments)]
#[rustfmt::skip]
fn mms_beam_forcing_gen(x: f64, t: f64, a: f64, fx: f64, ft: f64, mu: f64, rho_h: f64, k0: f64, tt: f64, ei: f64, k1: f64, t1: f64) -> f64 {
    let x0 = PI*ft;
    let x1 = t*x0;
    let x2 = x1.cos();
    let x3 = PI*fx;
    let x4 = x*x3;
    let x5 = a*x4.sin();
    let x6 = x2*x5;
    let x7 = x1.sin();
    let x8 = x5*x7;
    let x9 = ft.recip();
    let x10 = x8*x9;
    let x11 = fx.powi(2);
    let x12 = PI*x11;
    let x13 = x4.cos();
    -2.0*a.powi(2)*mu*x12*x2*x7*x9*x13.powi(2) + PI.powi(3)*ei*fx.powi(4)*x10 + k0*x10/PI + k1*x6 - rho_h*x0*x8 + PI.powi(2)*t1*x11*x6 + tt*x10*x12 - x13*x2*(fx*x10 + x3).cos()
}

/// Fluid body force of the manufactured problem:
/// f = v_t + (v.grad)v + grad(p)/rho - (mu/rho) lap(v).
pub fn mms_fluid_forcing(x: f64, y: f64, t: f64, m: &MmsParams, rho: f64, mu: f64) -> [f64; 2] {
    let (f1, f2) = mms_fluid_forcing_gen(x, y, t, m.a, m.fx, m.ft, rho, mu);
    [f1, f2]
}

/// Beam forcing g so that rho_h eta_tt = L(eta, eta_t) + f_interface + g
/// holds for the exact fields; f_interface = p - tau22 on the one-sided
/// surface.
pub fn mms_beam_forcing(x: f64, t: f64, m: &MmsParams, bp: &BeamParams, mu: f64) -> f64 {
    mms_beam_forcing_gen(
        x, t, m.a, m.fx, m.ft, mu, bp.rho_h, bp.k0, bp.t, bp.ei, bp.k1, bp.t1,
    )
}

/// Steady one-chamber solution eta = P_a x (1-x) / (2 T) on [0, 1].
pub fn exact_steady_parabolic(x: f64, p_a: f64, tension: f64) -> f64 {
    p_a * x * (1.0 - x) / (2.0 * tension)
}

/// Steady two-chamber solution eta = P0 (1-x^2)^2 / (24 EI) on [-1, 1].
pub fn exact_steady_quartic(x: f64, p0: f64, ei: f64) -> f64 {
    let q = 1.0 - x * x;
    p0 * q * q / (24.0 * ei)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SpringParams {
    pub dp: f64,
    pub k0: f64,
    pub k1: f64,
    pub rho_h: f64,
    pub rho: f64,
    /// total fluid column height H = H+ - H- - h_bar
    pub h: f64,
}

impl SpringParams {
    pub fn effective_mass(&self) -> f64 {
        self.rho_h + self.rho * self.h
    }

    pub fn omega(&self) -> f64 {
        (self.k0 / self.effective_mass()).sqrt()
    }
}

/// Closed-form solution of m eta'' + K1 eta' + K0 eta = dP from rest.
pub fn spring_exact(t: f64, sp: &SpringParams) -> (f64, f64) {
    let m = sp.effective_mass();
    let einf = sp.dp / sp.k0;
    let disc = sp.k1 * sp.k1 - 4.0 * m * sp.k0;
    if disc < 0.0 {
        let zeta = sp.k1 / (2.0 * m);
        let wd = (sp.k0 / m - zeta * zeta).sqrt();
        let e = (-zeta * t).exp();
        let eta = einf * (1.0 - e * ((wd * t).cos() + zeta / wd * (wd * t).sin()));
        let etadot = sp.dp / (m * wd) * e * (wd * t).sin();
        (eta, etadot)
    } else if disc > 0.0 {
        let sq = disc.sqrt();
        let r1 = (-sp.k1 + sq) / (2.0 * m);
        let r2 = (-sp.k1 - sq) / (2.0 * m);
        let eta = einf * (1.0 - (r2 * (r1 * t).exp() - r1 * (r2 * t).exp()) / (r2 - r1));
        let etadot = -einf * r1 * r2 * ((r1 * t).exp() - (r2 * t).exp()) / (r2 - r1);
        (eta, etadot)
    } else {
        let r = -sp.k1 / (2.0 * m);
        let eta = einf * (1.0 - (1.0 - r * t) * (r * t).exp());
        let etadot = einf * r * r * t * (r * t).exp();
        (eta, etadot)
    }
}

/// Smoothstep ramp: (35+(-84+(70-20t)t)t)t^4 on [0,1], then 1. The raw
/// polynomial can overshoot 1 by an ulp just below t=1, so clamp.
pub fn ramp(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        ((35.0 + (-84.0 + (70.0 - 20.0 * t) * t) * t) * t.powi(4)).min(1.0)
    }
}

/// Inflow pressure pulse: p_max sin(pi t / t_max) while t <= t_max, then 0.
pub fn pulse_inflow_pressure(t: f64, p_max: f64, t_max: f64) -> f64 {
    if t >= 0.0 && t <= t_max {
        p_max * (PI * t / t_max).sin()
    } else {
        0.0
    }
}

/// Max-norm error of a grid field against an (x, y) evaluator.
pub fn max_norm_error(
    grid: &MappedGrid,
    field: &DMatrix<f64>,
    exact: impl Fn(f64, f64) -> f64,
) -> f64 {
    let mut e = 0.0f64;
    for i in 0..grid.n1 {
        for j in 0..grid.n2 {
            e = e.max((field[(i, j)] - exact(grid.x[(i, j)], grid.y[(i, j)])).abs());
        }
    }
    e
}

/// Max-norm error of nodal values against an evaluator of the coordinate.
pub fn max_norm_error_1d(xs: &[f64], vals: &[f64], exact: impl Fn(f64) -> f64) -> f64 {
    xs.iter()
        .zip(vals)
        .map(|(&x, &v)| (v - exact(x)).abs())
        .fold(0.0, f64::max)
}

/// Least-squares slope of log(error) against log(h). NaN when fewer than two
/// usable (positive-error) points exist.
pub fn ls_rate(hs: &[f64], errors: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = hs
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&h, &e)| (h.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Self-convergence rate log2(d_coarse / d_fine) from successive grid
/// difference norms; NaN when either difference is not positive.
pub fn self_convergence_rate(d_coarse: f64, d_fine: f64) -> f64 {
    if d_coarse > 0.0 && d_fine > 0.0 {
        (d_coarse / d_fine).log2()
    } else {
        f64::NAN
    }
}

/// Per-grid max-norm errors for the five solution components.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ErrorReport {
    pub hs: Vec<f64>,
    pub e_p: Vec<f64>,
    pub e_v1: Vec<f64>,
    pub e_v2: Vec<f64>,
    pub e_eta: Vec<f64>,
    pub e_etadot: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct FieldScalars {
    pub p: f64,
    pub v1: f64,
    pub v2: f64,
    pub eta: f64,
    pub etadot: f64,
}

impl ErrorReport {
    pub fn push(&mut self, h: f64, e: FieldScalars) {
        self.hs.push(h);
        self.e_p.push(e.p);
        self.e_v1.push(e.v1);
        self.e_v2.push(e.v2);
        self.e_eta.push(e.eta);
        self.e_etadot.push(e.etadot);
    }

    /// Least-squares convergence rates (NaN with fewer than two grids).
    pub fn rates(&self) -> FieldScalars {
        FieldScalars {
            p: ls_rate(&self.hs, &self.e_p),
            v1: ls_rate(&self.hs, &self.e_v1),
            v2: ls_rate(&self.hs, &self.e_v2),
            eta: ls_rate(&self.hs, &self.e_eta),
            etadot: ls_rate(&self.hs, &self.e_etadot),
        }
    }

    /// Coarse-to-fine error ratios of one component column.
    pub fn pairwise_ratios(errs: &[f64]) -> Vec<f64> {
        errs.windows(2).map(|w| w[0] / w[1]).collect()
    }
}

/// Manufactured one-sided verification problem: fluid in the unit box under
/// a deforming lid, exact Dirichlet data on the other three edges (pressure
/// given on the bottom, its normal derivative on the sides), and body/beam
/// forcings that make the chosen trigonometric fields an exact solution.
pub fn mms_problem(rho_h: f64, n: usize, t_final: f64) -> Problem {
    let m = MmsParams::default();
    let rho = 1.0;
    let mu = 0.05;
    let beam = BeamParams {
        rho_h,
        h_bar: 0.0,
        k0: 1.0,
        t: rho_h,
        ei: 0.0,
        k1: 0.0,
        t1: 0.0,
        length: 1.0,
        bc_left: BeamBc::Pinned,
        bc_right: BeamBc::Pinned,
    };
    let ve: VelProfile = Arc::new(move |x, y, t| [mms_v1(x, y, t, &m), mms_v2(x, y, t, &m)]);
    let pe: ScalarProfile = Arc::new(move |x, y, t| mms_p(x, y, t, &m));
    let dpdn_left: ScalarProfile = Arc::new(move |x, y, t| -mms_p_grad(x, y, t, &m)[0]);
    let dpdn_right: ScalarProfile = Arc::new(move |x, y, t| mms_p_grad(x, y, t, &m)[0]);
    let bc = FluidBc {
        left: FluidBcTag::DirichletExact {
            v: ve.clone(),
            p: None,
            dpdn: Some(dpdn_left),
        },
        right: FluidBcTag::DirichletExact {
            v: ve.clone(),
            p: None,
            dpdn: Some(dpdn_right),
        },
        bottom: FluidBcTag::DirichletExact {
            v: ve.clone(),
            p: Some(pe),
            dpdn: None,
        },
        top: FluidBcTag::InterfaceAmp,
    };
    let bp = beam.clone();
    Problem {
        chambers: vec![ChamberSpec {
            domain: DomainSpec::new(0.0, 1.0, 0.0, 1.0, BeamSide::Top),
            bc,
            n1: n,
            n2: n,
        }],
        beam,
        fluid: FluidParams {
            rho,
            mu,
            c_dd: 1.0,
        },
        scheme: SchemeChoice::AmpFd,
        filter_iters: if rho_h < 0.1 { 1 } else { 0 },
        a_f: 1.0,
        body_force: Some(Arc::new(move |x, y, t| {
            mms_fluid_forcing(x, y, t, &m, rho, mu)
        })),
        beam_forcing: Some(Arc::new(move |x, t| mms_beam_forcing(x, t, &m, &bp, mu))),
        init: InitData {
            eta: Some(Arc::new(move |x| mms_eta(x, 0.0, &m))),
            etadot: Some(Arc::new(move |x| mms_etadot(x, 0.0, &m))),
            velocity: Some(ve),
        },
        t_final,
    }
}

/// Max-norm errors of a finished manufactured run against the exact fields.
pub fn mms_errors(sim: &Simulator) -> FieldScalars {
    let m = MmsParams::default();
    let t = sim.t;
    let g = &sim.grids[0];
    let st = &sim.states[0];
    FieldScalars {
        p: max_norm_error(g, &st.p, |x, y| mms_p(x, y, t, &m)),
        v1: max_norm_error(g, &st.v1, |x, y| mms_v1(x, y, t, &m)),
        v2: max_norm_error(g, &st.v2, |x, y| mms_v2(x, y, t, &m)),
        eta: max_norm_error_1d(&sim.x_nodes, &sim.beam_state.eta, |x| {
            mms_eta(x, t, &m)
        }),
        etadot: max_norm_error_1d(&sim.x_nodes, &sim.beam_state.etadot, |x| {
            mms_etadot(x, t, &m)
        }),
    }
}
