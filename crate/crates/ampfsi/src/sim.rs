//! Partitioned time stepping: the staged predictor-corrector loop that ties
//! the deforming-grid fluid solver to the beam through the scheme-specific
//! interface conditions. One `Simulator` owns the full mutable state of a run;
//! `run_simulation` drives it to a final time with monitoring and blow-up
//! detection.

use crate::beam::{
    self, apply_beam_bcs, beam_operator_fd, bootstrap_beam_history, fem_assemble,
    step_beam_corrector, step_beam_predictor, BeamError, BeamParams, BeamState, FemBeam,
};
use crate::coupling::{
    self, amp_pressure_rows_one_sided, amp_pressure_rows_two_sided, beam_force_from_fluid,
    filter_interface_velocity, project_interface_velocity, projection_gamma, tp_pressure_rows,
    CouplingError, SchemeChoice, SideData,
};
use crate::fluid::{
    self, apply_velocity_bcs, correct_velocity, momentum_rhs, predict_velocity, BcRow, ChamberCtx,
    ChamberFields, Edge, FluidBc, FluidError, FluidParams, FluidState, PressureSystem, Regularize,
};
use crate::geometry::{build_tfi_grid, grid_velocity, grid_velocity3, DomainSpec, GridError, MappedGrid};
use nalgebra::DMatrix;
use std::sync::Arc;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum SimError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error(transparent)]
    Beam(#[from] BeamError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error("bad problem setup: {0}")]
    Setup(String),
}

pub type BodyForce = Arc<dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync>;
pub type BeamForcing = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type Profile1d = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One fluid chamber: rest rectangle, discretization, and edge conditions.
/// The interface tag on `bc` marks which horizontal edge touches the beam.
#[derive(Clone)]
pub struct ChamberSpec {
    pub domain: DomainSpec,
    pub bc: FluidBc,
    pub n1: usize,
    pub n2: usize,
}

/// Initial data; anything left as None starts from rest.
#[derive(Clone, Default)]
pub struct InitData {
    pub eta: Option<Profile1d>,
    pub etadot: Option<Profile1d>,
    pub velocity: Option<fluid::VelProfile>,
}

/// A complete coupled problem: one or two chambers, the beam between or above
/// them, the scheme, and the forcing/initial data.
#[derive(Clone)]
pub struct Problem {
    pub chambers: Vec<ChamberSpec>,
    pub beam: BeamParams,
    pub fluid: FluidParams,
    pub scheme: SchemeChoice,
    pub filter_iters: usize,
    /// adjacent fluid cross-section entering the projection weight gamma
    pub a_f: f64,
    pub body_force: Option<BodyForce>,
    pub beam_forcing: Option<BeamForcing>,
    pub init: InitData,
    pub t_final: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SimOutcome {
    Completed,
    BlowUp { t: f64 },
}

#[derive(Clone, Copy, Debug)]
pub struct MonitorRow {
    pub t: f64,
    pub eta_mid: f64,
    pub etadot_mid: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub div_max: f64,
    pub dt: f64,
    pub subiters: usize,
}

pub struct SimResult {
    pub outcome: SimOutcome,
    pub history: Vec<MonitorRow>,
    pub sim: Simulator,
}

#[derive(Clone, Copy, Debug)]
pub struct SimOptions {
    /// fixed time step; None selects one from the stability estimates
    pub fixed_dt: Option<f64>,
    pub lambda_fluid: f64,
    pub lambda_beam: f64,
    /// steps between monitor rows
    pub cadence: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            fixed_dt: None,
            lambda_fluid: 0.9,
            lambda_beam: 2.0,
            cadence: 1,
        }
    }
}

/// Advective-diffusive von Neumann bound on the mapped grid plus the explicit
/// beam bound 2/omega_max, each scaled by its safety factor; a `fixed_dt` is
/// returned verbatim. Chosen once at t = 0 and held for the whole run.
pub fn select_time_step(
    problem: &Problem,
    grids: &[MappedGrid],
    states: &[FluidState],
    opts: &SimOptions,
) -> f64 {
    if let Some(dt) = opts.fixed_dt {
        return dt;
    }
    let nu = problem.fluid.mu / problem.fluid.rho;
    let mut rate_max = 0.0f64;
    for (g, st) in grids.iter().zip(states) {
        for i in 0..g.n1 {
            for j in 0..g.n2 {
                let (u1, u2) = (st.v1[(i, j)], st.v2[(i, j)]);
                let adv = (u1 * g.rx11[(i, j)] + u2 * g.rx12[(i, j)]).abs() / g.dr1
                    + (u1 * g.rx21[(i, j)] + u2 * g.rx22[(i, j)]).abs() / g.dr2;
                let s1 = g.rx11[(i, j)].powi(2) + g.rx12[(i, j)].powi(2);
                let s2 = g.rx21[(i, j)].powi(2) + g.rx22[(i, j)].powi(2);
                let diff = 4.0 * nu * (s1 / (g.dr1 * g.dr1) + s2 / (g.dr2 * g.dr2));
                rate_max = rate_max.max(adv + diff);
            }
        }
    }
    let dt_fluid = if rate_max > 0.0 {
        opts.lambda_fluid / rate_max
    } else {
        f64::INFINITY
    };
    // The leap-frog beam carries an explicit stability bound; the Newmark
    // back end is unconditionally stable and imposes none.
    let dt_beam = match problem.scheme {
        SchemeChoice::AmpFd | SchemeChoice::Tp => {
            let om = beam::beam_omega_max_fd(&problem.beam, problem.chambers[0].n1);
            if om > 0.0 {
                opts.lambda_beam * 2.0 / om
            } else {
                f64::INFINITY
            }
        }
        _ => f64::INFINITY,
    };
    let dt = dt_fluid.min(dt_beam);
    if dt.is_finite() {
        dt
    } else {
        problem.t_final / 200.0
    }
}

/// Outputs of one predictor..re-solve sweep of the fluid over a step, held
/// until the step (or sub-iteration) commits.
struct FluidPass {
    v1: Vec<DMatrix<f64>>,
    v2: Vec<DMatrix<f64>>,
    p: Vec<DMatrix<f64>>,
    f1n: Vec<DMatrix<f64>>,
    f2n: Vec<DMatrix<f64>>,
}

pub struct Simulator {
    pub problem: Problem,
    pub grids: Vec<MappedGrid>,
    grids_prev: Option<Vec<MappedGrid>>,
    pub states: Vec<FluidState>,
    pub beam_state: BeamState,
    fem: Option<FemBeam>,
    /// fluid traction on the beam at the current level, and one level back
    pub force: Vec<f64>,
    pub force_prev: Vec<f64>,
    pub x_nodes: Vec<f64>,
    below: Option<usize>,
    above: Option<usize>,
    pub t: f64,
    pub dt: f64,
    pub subiters_last: usize,
    pub subiter_failures: usize,
}

impl Simulator {
    pub fn new(problem: Problem, dt: f64) -> Result<Self, SimError> {
        if problem.chambers.is_empty() || problem.chambers.len() > 2 {
            return Err(SimError::Setup("expected one or two chambers".into()));
        }
        problem
            .beam
            .validate()
            .map_err(SimError::Setup)?;
        problem
            .scheme
            .validate()
            .map_err(SimError::Setup)?;
        let n1 = problem.chambers[0].n1;
        let mut below = None;
        let mut above = None;
        for (c, ch) in problem.chambers.iter().enumerate() {
            if ch.n1 != n1 {
                return Err(SimError::Setup("chambers must share n1".into()));
            }
            match ch.bc.interface_edge() {
                Some(Edge::Top) => {
                    if below.replace(c).is_some() {
                        return Err(SimError::Setup("two chambers below the beam".into()));
                    }
                }
                Some(Edge::Bottom) => {
                    if above.replace(c).is_some() {
                        return Err(SimError::Setup("two chambers above the beam".into()));
                    }
                }
                _ => return Err(SimError::Setup("every chamber must touch the beam".into())),
            }
        }

        // beam state and back end
        let fem_backend = matches!(
            problem.scheme,
            SchemeChoice::AmpPbaFem | SchemeChoice::TpSi { .. }
        );
        let iface = below.or(above).unwrap();
        let spec0 = &problem.chambers[iface];
        let x_nodes: Vec<f64> = (0..n1)
            .map(|i| {
                spec0.domain.x_a
                    + (spec0.domain.x_b - spec0.domain.x_a) * i as f64 / (n1 - 1) as f64
            })
            .collect();
        let mut beam_state = if fem_backend {
            BeamState::new_fem(n1)
        } else {
            BeamState::new_fd(n1)
        };
        if let Some(f) = &problem.init.eta {
            for i in 0..n1 {
                beam_state.eta[i] = f(x_nodes[i]);
            }
        }
        if let Some(f) = &problem.init.etadot {
            for i in 0..n1 {
                beam_state.etadot[i] = f(x_nodes[i]);
            }
        }
        apply_beam_bcs(&mut beam_state.eta, &mut beam_state.etadot, &problem.beam);
        if fem_backend {
            // slope dofs from one-sided/centered differences of the nodal data
            let ds = x_nodes[1] - x_nodes[0];
            let der = |v: &[f64], i: usize| -> f64 {
                if i == 0 {
                    (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * ds)
                } else if i == n1 - 1 {
                    (3.0 * v[n1 - 1] - 4.0 * v[n1 - 2] + v[n1 - 3]) / (2.0 * ds)
                } else {
                    (v[i + 1] - v[i - 1]) / (2.0 * ds)
                }
            };
            for i in 0..n1 {
                beam_state.etaprime[i] = der(&beam_state.eta, i);
                beam_state.etadotprime[i] = der(&beam_state.etadot, i);
            }
        }
        let fem = if fem_backend {
            Some(fem_assemble(&problem.beam, n1 - 1))
        } else {
            None
        };

        // grids at the initial displacement, with the grid velocity seeded
        // from the initial beam velocity (the TFI blend is linear in r2)
        let mut grids = Vec::with_capacity(problem.chambers.len());
        for ch in &problem.chambers {
            let mut g = build_tfi_grid(
                &ch.domain,
                &beam_state.eta,
                0.5 * problem.beam.h_bar,
                ch.n1,
                ch.n2,
            )?;
            let side_top = matches!(ch.bc.interface_edge(), Some(Edge::Top));
            for i in 0..g.n1 {
                for j in 0..g.n2 {
                    let r2 = j as f64 / (g.n2 - 1) as f64;
                    let blend = if side_top { r2 } else { 1.0 - r2 };
                    g.w2[(i, j)] = blend * beam_state.etadot[i];
                }
            }
            grids.push(g);
        }

        // initial velocity
        let mut states: Vec<FluidState> = problem
            .chambers
            .iter()
            .map(|ch| FluidState::new(ch.n1, ch.n2))
            .collect();
        for (c, ch) in problem.chambers.iter().enumerate() {
            if let Some(v) = &problem.init.velocity {
                let g = &grids[c];
                for i in 0..ch.n1 {
                    for j in 0..ch.n2 {
                        let vv = v(g.x[(i, j)], g.y[(i, j)], 0.0);
                        states[c].v1[(i, j)] = vv[0];
                        states[c].v2[(i, j)] = vv[1];
                    }
                }
            }
            let st = &mut states[c];
            apply_velocity_bcs(&grids[c], &mut st.v1, &mut st.v2, &ch.bc, 0.0);
        }

        let mut sim = Simulator {
            problem,
            grids,
            grids_prev: None,
            states,
            beam_state,
            fem,
            force: vec![0.0; n1],
            force_prev: vec![0.0; n1],
            x_nodes,
            below,
            above,
            t: 0.0,
            dt,
            subiters_last: 0,
            subiter_failures: 0,
        };
        sim.bootstrap()?;
        Ok(sim)
    }

    fn forcing_at(&self, t: f64) -> Vec<f64> {
        match &self.problem.beam_forcing {
            Some(g) => self.x_nodes.iter().map(|&x| g(x, t)).collect(),
            None => vec![0.0; self.x_nodes.len()],
        }
    }

    fn body_closure(&self, t: f64) -> Option<Box<dyn Fn(f64, f64) -> [f64; 2]>> {
        self.problem.body_force.as_ref().map(|f| {
            let f = f.clone();
            Box::new(move |x, y| f(x, y, t)) as Box<dyn Fn(f64, f64) -> [f64; 2]>
        })
    }

    /// Vertical body-force component sampled at the interface stations.
    fn body_at_surface(&self, grids: &[MappedGrid], t: f64) -> Option<Vec<f64>> {
        let f = self.problem.body_force.as_ref()?;
        let c = self.below.or(self.above).unwrap();
        let g = &grids[c];
        let js = if self.below == Some(c) { g.n2 - 1 } else { 0 };
        Some(
            (0..g.n1)
                .map(|i| f(g.x[(i, js)], g.y[(i, js)], t)[1])
                .collect(),
        )
    }

    fn is_fd(&self) -> bool {
        self.fem.is_none()
    }

    /// The dense beam right-hand side entering the AMP Robin rows: pointwise
    /// L(eta, etadot) + forcing for the FD back end.
    fn beam_rhs_fd(&self, eta: &[f64], etadot: &[f64], t: f64) -> Vec<f64> {
        let l = beam_operator_fd(eta, etadot, &self.problem.beam);
        let g = self.forcing_at(t);
        l.iter().zip(&g).map(|(a, b)| a + b).collect()
    }

    /// Robin/Neumann interface row assembly for the AMP family on the given
    /// grids and candidate velocity fields.
    fn amp_rows(
        &self,
        grids: &[MappedGrid],
        v2s: &[DMatrix<f64>],
        beam_rhs: &[f64],
        body_v: Option<&[f64]>,
    ) -> Result<(Vec<BcRow>, Vec<f64>), SimError> {
        let rho_a = self.problem.beam.rho_h;
        let mu = self.problem.fluid.mu;
        match (self.below, self.above) {
            (Some(b), Some(a)) => {
                let sb = SideData {
                    grid: &grids[b],
                    v2: &v2s[b],
                    p: None,
                    edge: Edge::Top,
                    chamber: b,
                    rho: self.problem.fluid.rho,
                };
                let sa = SideData {
                    grid: &grids[a],
                    v2: &v2s[a],
                    p: None,
                    edge: Edge::Bottom,
                    chamber: a,
                    rho: self.problem.fluid.rho,
                };
                Ok(amp_pressure_rows_two_sided(
                    &sb, &sa, beam_rhs, body_v, rho_a, mu,
                )?)
            }
            (Some(c), None) | (None, Some(c)) => {
                let edge = if self.below == Some(c) {
                    Edge::Top
                } else {
                    Edge::Bottom
                };
                let s = SideData {
                    grid: &grids[c],
                    v2: &v2s[c],
                    p: None,
                    edge,
                    chamber: c,
                    rho: self.problem.fluid.rho,
                };
                Ok(amp_pressure_rows_one_sided(
                    &s, beam_rhs, body_v, rho_a, mu,
                ))
            }
            _ => unreachable!(),
        }
    }

    fn tp_rows(
        &self,
        grids: &[MappedGrid],
        v2s: &[DMatrix<f64>],
        accel: &[f64],
    ) -> (Vec<BcRow>, Vec<f64>) {
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for (c, edge) in [(self.below, Edge::Top), (self.above, Edge::Bottom)] {
            if let Some(c) = c {
                let s = SideData {
                    grid: &grids[c],
                    v2: &v2s[c],
                    p: None,
                    edge,
                    chamber: c,
                    rho: self.problem.fluid.rho,
                };
                let (r, b) = tp_pressure_rows(&s, accel);
                rows.extend(r);
                rhs.extend(b);
            }
        }
        (rows, rhs)
    }

    /// Net fluid traction on the beam from the given grids/fields.
    fn extract_force(
        &self,
        grids: &[MappedGrid],
        v2s: &[DMatrix<f64>],
        ps: &[DMatrix<f64>],
    ) -> Vec<f64> {
        let mk = |c: usize, edge: Edge| SideData {
            grid: &grids[c],
            v2: &v2s[c],
            p: Some(&ps[c]),
            edge,
            chamber: c,
            rho: self.problem.fluid.rho,
        };
        let sb = self.below.map(|c| mk(c, Edge::Top));
        let sa = self.above.map(|c| mk(c, Edge::Bottom));
        beam_force_from_fluid(sb.as_ref(), sa.as_ref(), self.problem.fluid.mu)
    }

    /// Write the interface tangential condition (the beam moves vertically,
    /// so the surface horizontal velocity vanishes) and optionally the
    /// vertical Dirichlet value used by the TP family.
    fn set_surface_velocity(
        &self,
        v1s: &mut [DMatrix<f64>],
        v2s: &mut [DMatrix<f64>],
        vertical: Option<&[f64]>,
    ) {
        for (copt, top) in [(self.below, true), (self.above, false)] {
            if let Some(c) = copt {
                let js = if top { self.grids[c].n2 - 1 } else { 0 };
                for i in 0..self.grids[c].n1 {
                    v1s[c][(i, js)] = 0.0;
                    if let Some(vb) = vertical {
                        v2s[c][(i, js)] = vb[i];
                    }
                }
            }
        }
    }

    /// Consistent start: an initial pressure solve gives p0 and the traction
    /// f0, the momentum RHS seeds the Adams-Bashforth history, and the beam
    /// gets its leap-frog history (FD) or acceleration cache (FEM).
    fn bootstrap(&mut self) -> Result<(), SimError> {
        let v2s: Vec<DMatrix<f64>> = self.states.iter().map(|s| s.v2.clone()).collect();
        let body = self.body_closure(0.0);
        let body_v = self.body_at_surface(&self.grids, 0.0);

        // The compatibility solve for p0 always uses the Robin condition: it
        // eliminates the beam acceleration analytically, so it needs no
        // traction guess. Scheme-specific interface rows only enter stepping.
        let b = self.beam_rhs_fd(&self.beam_state.eta, &self.beam_state.etadot, 0.0);
        let (rows, rhs) = self.amp_rows(&self.grids, &v2s, &b, body_v.as_deref())?;
        let ctxs: Vec<ChamberCtx> = self
            .problem
            .chambers
            .iter()
            .zip(&self.grids)
            .map(|(ch, g)| ChamberCtx { grid: g, bc: &ch.bc })
            .collect();
        let fields: Vec<ChamberFields> = self
            .states
            .iter()
            .map(|s| ChamberFields {
                v1: &s.v1,
                v2: &s.v2,
                body: body.as_deref(),
            })
            .collect();
        let sys = PressureSystem::build(&ctxs, &rows, Regularize::Auto)?;
        let ps = sys.solve(&ctxs, &fields, &rhs, &self.problem.fluid, 0.0, self.dt)?;
        for (c, p) in ps.iter().enumerate() {
            self.states[c].p = p.clone();
            self.states[c].p_prev = p.clone();
            self.states[c].p_prev2 = p.clone();
        }
        let f0 = self.extract_force(&self.grids, &v2s, &ps);
        self.force = f0.clone();
        self.force_prev = f0.clone();

        // momentum RHS at t = 0 seeds the AB2 history (first step is Euler)
        for c in 0..self.states.len() {
            let (f1, f2) = momentum_rhs(
                &self.grids[c],
                &self.states[c].v1,
                &self.states[c].v2,
                &self.states[c].p,
                body.as_deref(),
                &self.problem.fluid,
            );
            self.states[c].f1_prev = f1;
            self.states[c].f2_prev = f2;
        }

        let g0 = self.forcing_at(0.0);
        let ftot: Vec<f64> = f0.iter().zip(&g0).map(|(a, b)| a + b).collect();
        if self.is_fd() {
            bootstrap_beam_history(&mut self.beam_state, &ftot, self.dt, &self.problem.beam);
        } else {
            self.fem
                .as_mut()
                .unwrap()
                .refresh_acceleration(&mut self.beam_state, &ftot)?;
        }
        Ok(())
    }

    /// Grids displaced to the given surface, with grid velocities from the
    /// three-level backward difference once two history levels exist. On the
    /// first step the two-level difference is reflected about the seeded w^0
    /// (w^1 = 2(x^1-x^0)/dt - w^0), which is also second order.
    fn move_grids(&self, eta: &[f64]) -> Result<Vec<MappedGrid>, SimError> {
        let mut out = Vec::with_capacity(self.grids.len());
        for (c, (ch, old)) in self.problem.chambers.iter().zip(&self.grids).enumerate() {
            let mut g = build_tfi_grid(
                &ch.domain,
                eta,
                0.5 * self.problem.beam.h_bar,
                ch.n1,
                ch.n2,
            )?;
            match &self.grids_prev {
                Some(prev) => grid_velocity3(&prev[c], old, &mut g, self.dt),
                None => {
                    grid_velocity(old, &mut g, self.dt);
                    for j in 0..g.n2 {
                        for i in 0..g.n1 {
                            g.w1[(i, j)] = 2.0 * g.w1[(i, j)] - old.w1[(i, j)];
                            g.w2[(i, j)] = 2.0 * g.w2[(i, j)] - old.w2[(i, j)];
                        }
                    }
                }
            }
            out.push(g);
        }
        Ok(out)
    }

    /// Predictor velocity on the moved grids, with wall conditions applied.
    /// Returns the new fields and the saved level-n momentum RHS.
    fn predict(
        &self,
        grids_new: &[MappedGrid],
        tnew: f64,
        body_n: Option<&dyn Fn(f64, f64) -> [f64; 2]>,
    ) -> FluidPass {
        let mut pass = FluidPass {
            v1: Vec::new(),
            v2: Vec::new(),
            p: Vec::new(),
            f1n: Vec::new(),
            f2n: Vec::new(),
        };
        for (c, st) in self.states.iter().enumerate() {
            let (f1n, f2n) = momentum_rhs(
                &self.grids[c],
                &st.v1,
                &st.v2,
                &st.p,
                body_n,
                &self.problem.fluid,
            );
            let (mut v1p, mut v2p) = predict_velocity(st, &f1n, &f2n, self.dt);
            apply_velocity_bcs(
                &grids_new[c],
                &mut v1p,
                &mut v2p,
                &self.problem.chambers[c].bc,
                tnew,
            );
            pass.v1.push(v1p);
            pass.v2.push(v2p);
            pass.f1n.push(f1n);
            pass.f2n.push(f2n);
        }
        pass
    }

    /// Corrector velocity: Adams-Moulton with F^(p) on the moved grids.
    fn correct(
        &self,
        grids_new: &[MappedGrid],
        pass: &FluidPass,
        tnew: f64,
        body_new: Option<&dyn Fn(f64, f64) -> [f64; 2]>,
    ) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let mut v1out = Vec::new();
        let mut v2out = Vec::new();
        for (c, st) in self.states.iter().enumerate() {
            let (f1p, f2p) = momentum_rhs(
                &grids_new[c],
                &pass.v1[c],
                &pass.v2[c],
                &pass.p[c],
                body_new,
                &self.problem.fluid,
            );
            let (mut v1, mut v2) =
                correct_velocity(st, &f1p, &f2p, &pass.f1n[c], &pass.f2n[c], self.dt);
            apply_velocity_bcs(
                &grids_new[c],
                &mut v1,
                &mut v2,
                &self.problem.chambers[c].bc,
                tnew,
            );
            v1out.push(v1);
            v2out.push(v2);
        }
        (v1out, v2out)
    }

    fn solve_pressure_on(
        &self,
        sys: &PressureSystem,
        grids_new: &[MappedGrid],
        v1s: &[DMatrix<f64>],
        v2s: &[DMatrix<f64>],
        rhs: &[f64],
        tnew: f64,
        body_new: Option<&dyn Fn(f64, f64) -> [f64; 2]>,
    ) -> Result<Vec<DMatrix<f64>>, SimError> {
        let ctxs: Vec<ChamberCtx> = self
            .problem
            .chambers
            .iter()
            .zip(grids_new)
            .map(|(ch, g)| ChamberCtx { grid: g, bc: &ch.bc })
            .collect();
        let fields: Vec<ChamberFields> = (0..v1s.len())
            .map(|c| ChamberFields {
                v1: &v1s[c],
                v2: &v2s[c],
                body: body_new,
            })
            .collect();
        Ok(sys.solve(&ctxs, &fields, rhs, &self.problem.fluid, tnew, self.dt)?)
    }

    fn build_system(
        &self,
        grids_new: &[MappedGrid],
        rows: &[BcRow],
    ) -> Result<PressureSystem, SimError> {
        let ctxs: Vec<ChamberCtx> = self
            .problem
            .chambers
            .iter()
            .zip(grids_new)
            .map(|(ch, g)| ChamberCtx { grid: g, bc: &ch.bc })
            .collect();
        Ok(PressureSystem::build(&ctxs, rows, Regularize::Auto)?)
    }

    /// Commit a completed step: rotate fluid histories, adopt the new grids,
    /// store the traction level, advance time.
    fn commit(
        &mut self,
        grids_new: Vec<MappedGrid>,
        pass: FluidPass,
        v1: Vec<DMatrix<f64>>,
        v2: Vec<DMatrix<f64>>,
        p: Vec<DMatrix<f64>>,
        f_new: Vec<f64>,
    ) {
        let FluidPass { f1n, f2n, .. } = pass;
        for (((st, v1c), v2c), (pc, (f1c, f2c))) in self
            .states
            .iter_mut()
            .zip(v1)
            .zip(v2)
            .zip(p.into_iter().zip(f1n.into_iter().zip(f2n)))
        {
            st.shift(v1c, v2c, pc, f1c, f2c);
        }
        self.grids_prev = Some(std::mem::replace(&mut self.grids, grids_new));
        self.force_prev = std::mem::replace(&mut self.force, f_new);
        self.t += self.dt;
    }

    /// One full AMP step, stages I-IX (VI skipped: the corrected displacement
    /// reuses the predictor grid, as is standard practice for this scheme).
    fn step_amp(&mut self) -> Result<(), SimError> {
        let dt = self.dt;
        let (tn, tnew) = (self.t, self.t + dt);
        let thalf = self.t + 0.5 * dt;
        let pba = !self.is_fd();

        // Stage I: beam predictor
        let gn = self.forcing_at(tn);
        let gnew = self.forcing_at(tnew);
        let (eta_p, etadot_p, fem_pred, f_pred_fluid);
        if pba {
            let fp: Vec<f64> = self
                .force
                .iter()
                .zip(&self.force_prev)
                .map(|(a, b)| 2.0 * a - b)
                .collect();
            let ftot: Vec<f64> = fp.iter().zip(&gnew).map(|(a, b)| a + b).collect();
            let st =
                self.fem
                    .as_mut()
                    .unwrap()
                    .newmark_step(&self.beam_state, &ftot, dt, 0.25, 0.5)?;
            eta_p = st.eta.clone();
            etadot_p = st.etadot.clone();
            fem_pred = Some(st);
            f_pred_fluid = fp;
        } else {
            let ftot: Vec<f64> = self.force.iter().zip(&gn).map(|(a, b)| a + b).collect();
            let (e, ed) = step_beam_predictor(&self.beam_state, &ftot, dt, &self.problem.beam);
            eta_p = e;
            etadot_p = ed;
            fem_pred = None;
            f_pred_fluid = Vec::new();
        }

        // Stage II: move the grids to the predicted surface
        let grids_new = self.move_grids(&eta_p)?;

        // Stage III: velocity predictor
        let body_n = self.body_closure(tn);
        let body_new = self.body_closure(tnew);
        let mut pass = self.predict(&grids_new, tnew, body_n.as_deref());
        self.set_surface_velocity(&mut pass.v1, &mut pass.v2, None);

        // Stage IV: pressure with the predicted beam data
        let beam_rhs_p = if pba {
            let st = fem_pred.as_ref().unwrap();
            (0..st.eta.len())
                .map(|i| self.problem.beam.rho_h * st.etaddot[i] - f_pred_fluid[i])
                .collect::<Vec<f64>>()
        } else {
            self.beam_rhs_fd(&eta_p, &etadot_p, tnew)
        };
        let body_v = self.body_at_surface(&grids_new, tnew);
        let (rows, rhs) = self.amp_rows(&grids_new, &pass.v2, &beam_rhs_p, body_v.as_deref())?;
        let sys = self.build_system(&grids_new, &rows)?;
        pass.p = self.solve_pressure_on(
            &sys,
            &grids_new,
            &pass.v1,
            &pass.v2,
            &rhs,
            tnew,
            body_new.as_deref(),
        )?;

        // Stage V: beam corrector with the predicted-pressure traction
        let f_p = self.extract_force(&grids_new, &pass.v2, &pass.p);
        if pba {
            let ftot: Vec<f64> = f_p.iter().zip(&gnew).map(|(a, b)| a + b).collect();
            let st =
                self.fem
                    .as_mut()
                    .unwrap()
                    .newmark_step(&self.beam_state, &ftot, dt, 0.25, 0.5)?;
            self.beam_state = st;
        } else {
            let ghalf = self.forcing_at(thalf);
            let f_half: Vec<f64> = (0..f_p.len())
                .map(|i| 0.5 * (f_p[i] + self.force[i]) + ghalf[i])
                .collect();
            step_beam_corrector(
                &mut self.beam_state,
                &eta_p,
                &etadot_p,
                &f_half,
                dt,
                &self.problem.beam,
            );
        }

        // Stage VII: velocity corrector (Stage VI skipped)
        let (mut v1, mut v2) = self.correct(&grids_new, &pass, tnew, body_new.as_deref());
        self.set_surface_velocity(&mut v1, &mut v2, None);

        // Stage VIII: pressure re-solve with the corrected data, same matrix
        let beam_rhs_c = if pba {
            (0..self.beam_state.eta.len())
                .map(|i| self.problem.beam.rho_h * self.beam_state.etaddot[i] - f_p[i])
                .collect::<Vec<f64>>()
        } else {
            self.beam_rhs_fd(&self.beam_state.eta, &self.beam_state.etadot, tnew)
        };
        let (rows_c, rhs_c) = self.amp_rows(&grids_new, &v2, &beam_rhs_c, body_v.as_deref())?;
        debug_assert_eq!(rows.len(), rows_c.len());
        let p_new = self.solve_pressure_on(
            &sys,
            &grids_new,
            &v1,
            &v2,
            &rhs_c,
            tnew,
            body_new.as_deref(),
        )?;

        // Stage IX: interface velocity projection and filter
        let gamma = projection_gamma(
            self.problem.beam.rho_h,
            self.problem.fluid.rho,
            self.problem.a_f,
        );
        let n1 = self.x_nodes.len();
        let w0 = vec![0.0; n1];
        let mut sides: Vec<Vec<f64>> = Vec::new();
        if let Some(c) = self.below {
            let js = grids_new[c].n2 - 1;
            sides.push((0..n1).map(|i| v2[c][(i, js)]).collect());
        }
        if let Some(c) = self.above {
            sides.push((0..n1).map(|i| v2[c][(i, 0)]).collect());
        }
        let side_refs: Vec<&[f64]> = sides.iter().map(|s| s.as_slice()).collect();
        let mut vbeam =
            project_interface_velocity(&side_refs, &self.beam_state.etadot, &w0, gamma);
        filter_interface_velocity(&mut vbeam, self.problem.filter_iters, 1.0);
        self.beam_state.etadot = vbeam;
        apply_beam_bcs(
            &mut self.beam_state.eta,
            &mut self.beam_state.etadot,
            &self.problem.beam,
        );
        // reset the fluid surface to the (filtered) beam velocity: the
        // kinematic condition holds exactly after this stage
        let vb = self.beam_state.etadot.clone();
        for (copt, top) in [(self.below, true), (self.above, false)] {
            if let Some(c) = copt {
                let js = if top { grids_new[c].n2 - 1 } else { 0 };
                for i in 0..n1 {
                    v2[c][(i, js)] = vb[i];
                }
            }
        }
        let f_new = self.extract_force(&grids_new, &v2, &p_new);
        if pba {
            let ftot: Vec<f64> = f_new.iter().zip(&gnew).map(|(a, b)| a + b).collect();
            self.fem
                .as_mut()
                .unwrap()
                .refresh_acceleration(&mut self.beam_state, &ftot)?;
        }
        self.subiters_last = 0;
        self.commit(grids_new, pass, v1, v2, p_new, f_new);
        Ok(())
    }

    /// One fluid sweep of the traditional scheme on fixed new grids: AB2
    /// predictor, Neumann pressure, AM2 corrector, re-solve. The interface
    /// velocity is the Dirichlet value from the already-advanced beam.
    #[allow(clippy::too_many_arguments)]
    fn tp_fluid_pass(
        &self,
        grids_new: &[MappedGrid],
        sys: &PressureSystem,
        accel: &[f64],
        etadot_new: &[f64],
        tnew: f64,
        body_n: Option<&dyn Fn(f64, f64) -> [f64; 2]>,
        body_new: Option<&dyn Fn(f64, f64) -> [f64; 2]>,
    ) -> Result<(FluidPass, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>), SimError>
    {
        let mut pass = self.predict(grids_new, tnew, body_n);
        self.set_surface_velocity(&mut pass.v1, &mut pass.v2, Some(etadot_new));
        let (_, rhs) = self.tp_rows(grids_new, &pass.v2, accel);
        pass.p =
            self.solve_pressure_on(sys, grids_new, &pass.v1, &pass.v2, &rhs, tnew, body_new)?;
        let (mut v1, mut v2) = self.correct(grids_new, &pass, tnew, body_new);
        self.set_surface_velocity(&mut v1, &mut v2, Some(etadot_new));
        let (_, rhs2) = self.tp_rows(grids_new, &v2, accel);
        let p_new = self.solve_pressure_on(sys, grids_new, &v1, &v2, &rhs2, tnew, body_new)?;
        Ok((pass, v1, v2, p_new))
    }

    /// Traditional partitioned step: the beam leap-frogs first on the lagged
    /// traction, then the fluid runs once with Neumann pressure data and a
    /// Dirichlet interface velocity. No projection, no sub-iterations.
    fn step_tp(&mut self) -> Result<(), SimError> {
        let (tn, tnew) = (self.t, self.t + self.dt);
        let gn = self.forcing_at(tn);
        let ftot: Vec<f64> = self.force.iter().zip(&gn).map(|(a, b)| a + b).collect();
        let (eta_new, etadot_new) =
            step_beam_predictor(&self.beam_state, &ftot, self.dt, &self.problem.beam);
        // time-lagged discrete acceleration from the three displacement levels
        let accel: Vec<f64> = (0..eta_new.len())
            .map(|i| {
                (eta_new[i] - 2.0 * self.beam_state.eta[i] + self.beam_state.eta_prev[i])
                    / (self.dt * self.dt)
            })
            .collect();
        let grids_new = self.move_grids(&eta_new)?;
        let body_n = self.body_closure(tn);
        let body_new = self.body_closure(tnew);
        let v2s: Vec<DMatrix<f64>> = self.states.iter().map(|s| s.v2.clone()).collect();
        let (rows, _) = self.tp_rows(&grids_new, &v2s, &accel);
        let sys = self.build_system(&grids_new, &rows)?;
        let (pass, v1, v2, p_new) = self.tp_fluid_pass(
            &grids_new,
            &sys,
            &accel,
            &etadot_new,
            tnew,
            body_n.as_deref(),
            body_new.as_deref(),
        )?;
        // adopt the beam level
        self.beam_state.eta_prev = std::mem::replace(&mut self.beam_state.eta, eta_new);
        self.beam_state.etadot_prev =
            std::mem::replace(&mut self.beam_state.etadot, etadot_new);
        let f_new = self.extract_force(&grids_new, &v2, &p_new);
        self.subiters_last = 0;
        self.commit(grids_new, pass, v1, v2, p_new, f_new);
        Ok(())
    }

    /// One traction-to-traction pass of the sub-iterated scheme: implicit
    /// beam step from the level-n state, fluid sweep on the (lazily frozen)
    /// moved grids, traction extraction.
    #[allow(clippy::type_complexity)]
    fn tpsi_pass(
        &mut self,
        tk: &[f64],
        gnew: &[f64],
        tnew: f64,
        frozen: &mut Option<(Vec<MappedGrid>, PressureSystem)>,
        body_n: Option<&dyn Fn(f64, f64) -> [f64; 2]>,
        body_new: Option<&dyn Fn(f64, f64) -> [f64; 2]>,
    ) -> Result<
        (
            Vec<f64>,
            BeamState,
            FluidPass,
            Vec<DMatrix<f64>>,
            Vec<DMatrix<f64>>,
            Vec<DMatrix<f64>>,
        ),
        SimError,
    > {
        let ftot: Vec<f64> = tk.iter().zip(gnew).map(|(a, b)| a + b).collect();
        let st_b =
            self.fem
                .as_mut()
                .unwrap()
                .newmark_step(&self.beam_state, &ftot, self.dt, 0.25, 0.5)?;
        if frozen.is_none() {
            let grids_new = self.move_grids(&st_b.eta)?;
            let v2s: Vec<DMatrix<f64>> = self.states.iter().map(|s| s.v2.clone()).collect();
            let (rows, _) = self.tp_rows(&grids_new, &v2s, &st_b.etaddot);
            let sys = self.build_system(&grids_new, &rows)?;
            *frozen = Some((grids_new, sys));
        }
        let (grids_new, sys) = frozen.as_ref().unwrap();
        let (pass, v1, v2, p_new) = self.tp_fluid_pass(
            grids_new,
            sys,
            &st_b.etaddot,
            &st_b.etadot,
            tnew,
            body_n,
            body_new,
        )?;
        let f_new = self.extract_force(grids_new, &v2, &p_new);
        Ok((f_new, st_b, pass, v1, v2, p_new))
    }

    /// Sub-iterated traditional scheme: an under-relaxed fixed point on the
    /// interface traction with an implicit (Newmark) beam inside each pass.
    /// The grid is moved on the first pass and frozen for the rest.
    fn step_tpsi(&mut self, omega: f64, tol: f64, max_iters: usize) -> Result<(), SimError> {
        let (tn, tnew) = (self.t, self.t + self.dt);
        let gnew = self.forcing_at(tnew);
        let body_n = self.body_closure(tn);
        let body_new = self.body_closure(tnew);
        let mut traction = self.force.clone();

        let mut frozen: Option<(Vec<MappedGrid>, PressureSystem)> = None;
        let mut committed = None;
        let mut err: Option<SimError> = None;
        let report = coupling::tp_subiterate(&mut traction, omega, tol, max_iters, |tk| {
            match self.tpsi_pass(
                tk,
                &gnew,
                tnew,
                &mut frozen,
                body_n.as_deref(),
                body_new.as_deref(),
            ) {
                Ok((f_new, st_b, pass, v1, v2, p_new)) => {
                    committed = Some((st_b, pass, v1, v2, p_new));
                    f_new
                }
                Err(e) => {
                    err = Some(e);
                    tk.to_vec()
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        self.subiters_last = report.iterations;
        if !report.converged {
            self.subiter_failures += 1;
        }
        let (st_b, pass, v1, v2, p_new) = committed.unwrap();
        let (grids_new, _) = frozen.unwrap();
        self.beam_state = st_b;
        self.commit(grids_new, pass, v1, v2, p_new, traction);
        Ok(())
    }

    pub fn step(&mut self) -> Result<(), SimError> {
        match self.problem.scheme {
            SchemeChoice::AmpFd | SchemeChoice::AmpPbaFem => self.step_amp(),
            SchemeChoice::Tp => self.step_tp(),
            SchemeChoice::TpSi {
                omega,
                tol,
                max_iters,
            } => self.step_tpsi(omega, tol, max_iters),
        }
    }

    /// Max-norm of all evolving fields; used for blow-up detection.
    pub fn state_magnitude(&self) -> f64 {
        let mut m = 0.0f64;
        for st in &self.states {
            m = m.max(st.v1.amax()).max(st.v2.amax()).max(st.p.amax());
        }
        for v in self.beam_state.eta.iter().chain(&self.beam_state.etadot) {
            m = m.max(v.abs());
        }
        if m.is_nan() {
            f64::INFINITY
        } else {
            m
        }
    }

    pub fn monitor(&self) -> MonitorRow {
        let mid = self.x_nodes.len() / 2;
        let mut p_min = f64::INFINITY;
        let mut p_max = f64::NEG_INFINITY;
        let mut div_max = 0.0f64;
        for (c, st) in self.states.iter().enumerate() {
            p_min = p_min.min(st.p.min());
            p_max = p_max.max(st.p.max());
            div_max = div_max.max(fluid::max_interior_divergence(
                &self.grids[c],
                &st.v1,
                &st.v2,
            ));
        }
        MonitorRow {
            t: self.t,
            eta_mid: self.beam_state.eta[mid],
            etadot_mid: self.beam_state.etadot[mid],
            p_min,
            p_max,
            div_max,
            dt: self.dt,
            subiters: self.subiters_last,
        }
    }
}

/// Run a problem to its final time. The step count divides t_final exactly so
/// the constant-dt multistep formulas stay clean; blow-up (max-norm beyond
/// 1e6, or non-finite values) ends the run with the onset time recorded.
pub fn run_simulation(problem: Problem, opts: &SimOptions) -> Result<SimResult, SimError> {
    let dt_raw = match opts.fixed_dt {
        Some(d) => d,
        None => {
            let probe = Simulator::new(problem.clone(), 1.0)?;
            select_time_step(&probe.problem, &probe.grids, &probe.states, opts)
        }
    };
    let n_steps = (problem.t_final / dt_raw).ceil().max(1.0) as usize;
    let dt = problem.t_final / n_steps as f64;

    let mut sim = Simulator::new(problem, dt)?;
    let mut history = Vec::new();
    history.push(sim.monitor());
    for k in 0..n_steps {
        match sim.step() {
            Ok(()) => {}
            // a folded grid means the beam ran out of the chamber, and a
            // diverging solve on an already-inflated state means the fields
            // degenerated: both are how instability surfaces before the
            // plain magnitude check trips
            Err(SimError::Grid(GridError::FoldedGrid(_, _))) => {
                return Ok(SimResult {
                    outcome: SimOutcome::BlowUp { t: sim.t },
                    history,
                    sim,
                });
            }
            Err(e @ SimError::Fluid(FluidError::SolverDivergence(_))) => {
                let m = sim.state_magnitude();
                if m > 1e2 {
                    return Ok(SimResult {
                        outcome: SimOutcome::BlowUp { t: sim.t },
                        history,
                        sim,
                    });
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        }
        if k % opts.cadence == opts.cadence - 1 || k == n_steps - 1 {
            history.push(sim.monitor());
        }
        if sim.state_magnitude() > 1e6 {
            return Ok(SimResult {
                outcome: SimOutcome::BlowUp { t: sim.t },
                history,
                sim,
            });
        }
    }
    Ok(SimResult {
        outcome: SimOutcome::Completed,
        history,
        sim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluid::FluidBcTag;
    use crate::geometry::BeamSide;

    fn const_p(v: f64) -> fluid::ScalarProfile {
        Arc::new(move |_, _, _| v)
    }

    fn one_chamber_problem(scheme: SchemeChoice, rho_h: f64, k0: f64, pa: f64) -> Problem {
        let n = 11;
        let beam = BeamParams {
            rho_h,
            h_bar: 0.0,
            k0,
            t: 0.0,
            ei: 0.0,
            k1: 0.0,
            t1: 0.0,
            length: 1.0,
            bc_left: beam::BeamBc::Sliding,
            bc_right: beam::BeamBc::Sliding,
        };
        let bc = FluidBc {
            left: FluidBcTag::SlipWall,
            right: FluidBcTag::SlipWall,
            bottom: FluidBcTag::OutflowPressure {
                p: const_p(pa),
                extrapolate_velocity: false,
            },
            top: match scheme {
                SchemeChoice::Tp | SchemeChoice::TpSi { .. } => FluidBcTag::InterfaceTp,
                _ => FluidBcTag::InterfaceAmp,
            },
        };
        Problem {
            chambers: vec![ChamberSpec {
                domain: DomainSpec::new(0.0, 1.0, 0.0, 1.0, BeamSide::Top),
                bc,
                n1: n,
                n2: n,
            }],
            beam,
            fluid: FluidParams {
                rho: 1.0,
                mu: 0.02,
                c_dd: 1.0,
            },
            scheme,
            filter_iters: 0,
            a_f: 1.0,
            body_force: None,
            beam_forcing: None,
            init: InitData::default(),
            t_final: 0.1,
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        for scheme in [SchemeChoice::AmpFd, SchemeChoice::Tp] {
            let prob = one_chamber_problem(scheme, 1.0, 10.0, 0.0);
            let mut sim = Simulator::new(prob, 0.005).unwrap();
            for _ in 0..20 {
                sim.step().unwrap();
            }
            assert!(sim.state_magnitude() < 1e-12, "{:?}", scheme);
        }
    }

    #[test]
    fn uniform_equilibrium_is_preserved_amp_fd() {
        // sliding flat beam with K0 only: eta = P_a/K0, p = P_a, v = 0 is an
        // exact discrete steady state of the full staged scheme
        let (k0, pa) = (10.0, 2.0);
        let mut prob = one_chamber_problem(SchemeChoice::AmpFd, 0.5, k0, pa);
        prob.init.eta = Some(Arc::new(move |_x| pa / k0));
        let mut sim = Simulator::new(prob, 0.004).unwrap();
        for _ in 0..50 {
            sim.step().unwrap();
        }
        for &e in &sim.beam_state.eta {
            assert!((e - pa / k0).abs() < 1e-11, "eta {}", e);
        }
        for &ed in &sim.beam_state.etadot {
            assert!(ed.abs() < 1e-11);
        }
        assert!(sim.states[0].v1.amax() < 1e-11);
        assert!(sim.states[0].v2.amax() < 1e-11);
        for v in sim.states[0].p.iter() {
            assert!((v - pa).abs() < 1e-9, "p {}", v);
        }
    }

    #[test]
    fn uniform_equilibrium_is_preserved_pba_and_tp() {
        let (k0, pa) = (10.0, 2.0);
        for scheme in [
            SchemeChoice::AmpPbaFem,
            SchemeChoice::Tp,
            SchemeChoice::TpSi {
                omega: 0.8,
                tol: 1e-10,
                max_iters: 50,
            },
        ] {
            // TP runs heavy so its explicit coupling is stable
            let rho_h = if scheme == SchemeChoice::Tp { 10.0 } else { 0.5 };
            let mut prob = one_chamber_problem(scheme, rho_h, k0, pa);
            prob.init.eta = Some(Arc::new(move |_x| pa / k0));
            let mut sim = Simulator::new(prob, 0.004).unwrap();
            for _ in 0..30 {
                sim.step().unwrap();
            }
            for &e in &sim.beam_state.eta {
                assert!((e - pa / k0).abs() < 1e-9, "{:?} eta {}", scheme, e);
            }
            assert!(sim.states[0].v2.amax() < 1e-9, "{:?}", scheme);
            if matches!(scheme, SchemeChoice::TpSi { .. }) {
                // equilibrium traction is already converged
                assert!(sim.subiters_last <= 2, "subiters {}", sim.subiters_last);
                assert_eq!(sim.subiter_failures, 0);
            }
        }
    }

    #[test]
    fn select_time_step_examples() {
        // nu = 0, v = 0, static beam with EI = 0: the K0 mode governs
        let mut prob = one_chamber_problem(SchemeChoice::AmpFd, 0.4, 10.0, 0.0);
        prob.fluid.mu = 0.0;
        let sim = Simulator::new(prob.clone(), 0.01).unwrap();
        let opts = SimOptions {
            lambda_beam: 2.0,
            ..Default::default()
        };
        let dt = select_time_step(&sim.problem, &sim.grids, &sim.states, &opts);
        let expect = 2.0 * 2.0 * (0.4f64 / 10.0).sqrt();
        assert!((dt - expect).abs() < 1e-6 * expect, "{} vs {}", dt, expect);

        // bending: halving h quarters the beam bound
        let mut pb = prob.clone();
        pb.beam.ei = 1.0;
        pb.beam.k0 = 0.0;
        let om_coarse = beam::beam_omega_max_fd(&pb.beam, 11);
        let om_fine = beam::beam_omega_max_fd(&pb.beam, 21);
        let ratio = om_fine / om_coarse;
        assert!((3.0..=5.0).contains(&ratio), "omega ratio {}", ratio);

        // fixed_dt returned verbatim
        let opts = SimOptions {
            fixed_dt: Some(0.123),
            ..Default::default()
        };
        let dt = select_time_step(&sim.problem, &sim.grids, &sim.states, &opts);
        assert_eq!(dt, 0.123);
    }

    #[test]
    fn leapfrog_instability_reports_blowup() {
        // drive the vacuum beam far beyond its stability limit with a seeded
        // perturbation; the run must end in BlowUp, not a panic
        let k0 = 1e4;
        let mut prob = one_chamber_problem(SchemeChoice::AmpFd, 1.0, k0, 0.0);
        prob.fluid.mu = 1e-6;
        prob.init.eta = Some(Arc::new(|x| 1e-3 * (13.0 * x).sin()));
        prob.t_final = 2.0;
        let opts = SimOptions {
            fixed_dt: Some(0.2),
            ..Default::default()
        };
        let res = run_simulation(prob, &opts).unwrap();
        assert!(matches!(res.outcome, SimOutcome::BlowUp { .. }));
    }

    #[test]
    fn history_cadence_and_final_time() {
        let prob = one_chamber_problem(SchemeChoice::AmpFd, 1.0, 10.0, 0.0);
        let opts = SimOptions {
            fixed_dt: Some(0.013),
            cadence: 3,
            ..Default::default()
        };
        let res = run_simulation(prob, &opts).unwrap();
        assert_eq!(res.outcome, SimOutcome::Completed);
        assert!((res.sim.t - 0.1).abs() < 1e-12);
        let last = res.history.last().unwrap();
        assert!((last.t - 0.1).abs() < 1e-12);
    }
}
