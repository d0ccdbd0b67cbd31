//! Generalized Euler–Bernoulli beam dynamics.
//!
//! Two interchangeable back ends: second-order finite differences stepped with
//! a leap-frog predictor / Adams–Moulton corrector pair, and cubic Hermite
//! finite elements stepped with Newmark-beta. Also provides beam surface
//! geometry/velocity and the cantilever mode formula used by the tests.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BeamError {
    #[error("beam solver diverged: {0}")]
    SolverDivergence(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BeamBc {
    Pinned,
    Clamped,
    Sliding,
    Free,
}

/// Beam material/geometry parameters.
///
/// The mass per unit length rho_h = ρ̄h̄ is stored directly rather than as a
/// product: several benchmarks set ρ̄h̄ finite while the geometric thickness
/// h_bar is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    /// mass per unit length ρ̄h̄
    pub rho_h: f64,
    /// geometric thickness h̄ (may be zero)
    pub h_bar: f64,
    /// linear restoring coefficient K̄0
    pub k0: f64,
    /// tension T̄
    pub t: f64,
    /// bending stiffness ĒĪ
    pub ei: f64,
    /// linear damping K̄1
    pub k1: f64,
    /// visco-elastic damping T̄1
    pub t1: f64,
    /// beam length l̄
    pub length: f64,
    pub bc_left: BeamBc,
    pub bc_right: BeamBc,
}

impl BeamParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.rho_h > 0.0) {
            return Err(format!("rho_h must be positive, got {}", self.rho_h));
        }
        if self.ei < 0.0 || self.t < 0.0 || !(self.length > 0.0) {
            return Err("ei, t must be nonnegative and length positive".into());
        }
        Ok(())
    }
}

/// Nodal beam state. The FD back end uses eta/etadot plus one history level
/// for the leap-frog predictor; the FEM back end additionally carries slope
/// dofs and an acceleration cache (and leaves the history arrays empty).
#[derive(Clone, Debug, Default)]
pub struct BeamState {
    pub eta: Vec<f64>,
    pub etadot: Vec<f64>,
    pub eta_prev: Vec<f64>,
    pub etadot_prev: Vec<f64>,
    pub etaprime: Vec<f64>,
    pub etadotprime: Vec<f64>,
    pub etaddot: Vec<f64>,
    pub etaddotprime: Vec<f64>,
}

impl BeamState {
    pub fn new_fd(n: usize) -> Self {
        BeamState {
            eta: vec![0.0; n],
            etadot: vec![0.0; n],
            eta_prev: vec![0.0; n],
            etadot_prev: vec![0.0; n],
            ..Default::default()
        }
    }

    pub fn new_fem(n_nodes: usize) -> Self {
        BeamState {
            eta: vec![0.0; n_nodes],
            etadot: vec![0.0; n_nodes],
            etaprime: vec![0.0; n_nodes],
            etadotprime: vec![0.0; n_nodes],
            etaddot: vec![0.0; n_nodes],
            etaddotprime: vec![0.0; n_nodes],
            ..Default::default()
        }
    }
}

/// Extend nodal values by two ghost points per end. Returned vector has
/// length n+4 with interior node i at index i+2.
///
/// Closures: Pinned odd (η=0, η_ss=0), Clamped/Sliding even (η_s=0; the
/// sliding second ghost from η_sss=0 reduces to the even image as well),
/// Free from η_ss=0 and η_sss=0.
fn extend_with_ghosts(vals: &[f64], params: &BeamParams) -> Vec<f64> {
    let n = vals.len();
    let mut e = vec![0.0; n + 4];
    e[2..2 + n].copy_from_slice(vals);
    match params.bc_left {
        BeamBc::Pinned => {
            e[1] = -vals[1];
            e[0] = -vals[2];
        }
        BeamBc::Clamped | BeamBc::Sliding => {
            e[1] = vals[1];
            e[0] = vals[2];
        }
        BeamBc::Free => {
            e[1] = 2.0 * vals[0] - vals[1];
            e[0] = 4.0 * vals[0] - 4.0 * vals[1] + vals[2];
        }
    }
    match params.bc_right {
        BeamBc::Pinned => {
            e[n + 2] = -vals[n - 2];
            e[n + 3] = -vals[n - 3];
        }
        BeamBc::Clamped | BeamBc::Sliding => {
            e[n + 2] = vals[n - 2];
            e[n + 3] = vals[n - 3];
        }
        BeamBc::Free => {
            e[n + 2] = 2.0 * vals[n - 1] - vals[n - 2];
            e[n + 3] = 4.0 * vals[n - 1] - 4.0 * vals[n - 2] + vals[n - 3];
        }
    }
    e
}

/// Beam spatial operator L = -K0 η + T η_ss - EI η_ssss - K1 η̇ + T1 η̇_ss
/// with centered 3-point/5-point stencils and ghost closures per BC.
pub fn beam_operator_fd(eta: &[f64], etadot: &[f64], params: &BeamParams) -> Vec<f64> {
    let n = eta.len();
    assert!(n >= 4 && etadot.len() == n);
    let ds = params.length / (n - 1) as f64;
    let ds2 = ds * ds;
    let ds4 = ds2 * ds2;
    let e = extend_with_ghosts(eta, params);
    let ed = extend_with_ghosts(etadot, params);
    let mut l = vec![0.0; n];
    for i in 0..n {
        let k = i + 2;
        let ss = (e[k - 1] - 2.0 * e[k] + e[k + 1]) / ds2;
        let ssss =
            (e[k - 2] - 4.0 * e[k - 1] + 6.0 * e[k] - 4.0 * e[k + 1] + e[k + 2]) / ds4;
        let dss = (ed[k - 1] - 2.0 * ed[k] + ed[k + 1]) / ds2;
        l[i] = -params.k0 * eta[i] + params.t * ss - params.ei * ssss
            - params.k1 * etadot[i]
            + params.t1 * dss;
    }
    l
}

/// Enforce essential boundary values on the end nodes. Pinned and Clamped fix
/// the end node at zero; Sliding and Free ends evolve (their constraints act
/// through the ghost closures).
pub fn apply_beam_bcs(eta: &mut [f64], etadot: &mut [f64], params: &BeamParams) {
    let n = eta.len();
    if matches!(params.bc_left, BeamBc::Pinned | BeamBc::Clamped) {
        eta[0] = 0.0;
        etadot[0] = 0.0;
    }
    if matches!(params.bc_right, BeamBc::Pinned | BeamBc::Clamped) {
        eta[n - 1] = 0.0;
        etadot[n - 1] = 0.0;
    }
}

/// Taylor-start the leap-frog history: η^{-1} = η⁰ - Δt η̇⁰ + Δt²a⁰/2 with
/// a⁰ from the beam equation at t=0.
pub fn bootstrap_beam_history(state: &mut BeamState, f0: &[f64], dt: f64, params: &BeamParams) {
    let l = beam_operator_fd(&state.eta, &state.etadot, params);
    let n = state.eta.len();
    let mut ep = vec![0.0; n];
    let mut edp = vec![0.0; n];
    for i in 0..n {
        let a = (l[i] + f0[i]) / params.rho_h;
        ep[i] = state.eta[i] - dt * state.etadot[i] + 0.5 * dt * dt * a;
        edp[i] = state.etadot[i] - dt * a;
    }
    apply_beam_bcs(&mut ep, &mut edp, params);
    state.eta_prev = ep;
    state.etadot_prev = edp;
}

/// Leap-frog predictor: η^(p) = η^{n-1} + 2Δt η̇^n and
/// ρ̄h̄ (η̇^(p) - η̇^{n-1})/(2Δt) = L(η^n, η̇^n) + f^n.
pub fn step_beam_predictor(
    state: &BeamState,
    f_ext: &[f64],
    dt: f64,
    params: &BeamParams,
) -> (Vec<f64>, Vec<f64>) {
    let n = state.eta.len();
    let l = beam_operator_fd(&state.eta, &state.etadot, params);
    let mut eta_p = vec![0.0; n];
    let mut etadot_p = vec![0.0; n];
    for i in 0..n {
        eta_p[i] = state.eta_prev[i] + 2.0 * dt * state.etadot[i];
        etadot_p[i] = state.etadot_prev[i] + 2.0 * dt * (l[i] + f_ext[i]) / params.rho_h;
    }
    apply_beam_bcs(&mut eta_p, &mut etadot_p, params);
    (eta_p, etadot_p)
}

/// Adams–Moulton corrector evaluated at the midpoint built from the predicted
/// and current levels:
/// (η^{n+1} - η^n)/Δt = η̇^{n+1/2},
/// ρ̄h̄ (η̇^{n+1} - η̇^n)/Δt = L(η^{n+1/2}, η̇^{n+1/2}) + f^{n+1/2}.
/// Shifts the history levels on completion.
pub fn step_beam_corrector(
    state: &mut BeamState,
    eta_p: &[f64],
    etadot_p: &[f64],
    f_half: &[f64],
    dt: f64,
    params: &BeamParams,
) {
    let n = state.eta.len();
    let mut eta_h = vec![0.0; n];
    let mut etadot_h = vec![0.0; n];
    for i in 0..n {
        eta_h[i] = 0.5 * (eta_p[i] + state.eta[i]);
        etadot_h[i] = 0.5 * (etadot_p[i] + state.etadot[i]);
    }
    let l = beam_operator_fd(&eta_h, &etadot_h, params);
    let mut eta_new = vec![0.0; n];
    let mut etadot_new = vec![0.0; n];
    for i in 0..n {
        eta_new[i] = state.eta[i] + dt * etadot_h[i];
        etadot_new[i] = state.etadot[i] + dt * (l[i] + f_half[i]) / params.rho_h;
    }
    apply_beam_bcs(&mut eta_new, &mut etadot_new, params);
    state.eta_prev = std::mem::replace(&mut state.eta, eta_new);
    state.etadot_prev = std::mem::replace(&mut state.etadot, etadot_new);
}

/// Power-iteration estimate of the largest eigenfrequency of the undamped FD
/// beam operator, used for time-step selection.
pub fn beam_omega_max_fd(params: &BeamParams, n: usize) -> f64 {
    let stiff = BeamParams {
        k1: 0.0,
        t1: 0.0,
        ..params.clone()
    };
    let zero = vec![0.0; n];
    // alternating start excites the top of the spectrum
    let mut x: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let mut zdot = vec![0.0; n];
    apply_beam_bcs(&mut x, &mut zdot, params);
    let mut lam = 0.0;
    for _ in 0..400 {
        let l = beam_operator_fd(&x, &zero, &stiff);
        let mut y: Vec<f64> = l.iter().map(|v| -v / params.rho_h).collect();
        let mut ydot = vec![0.0; n];
        apply_beam_bcs(&mut y, &mut ydot, params);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let new_lam = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        for v in y.iter_mut() {
            *v /= norm;
        }
        x = y;
        if lam > 0.0 && ((new_lam - lam) / new_lam).abs() < 1e-12 {
            lam = new_lam;
            break;
        }
        lam = new_lam;
    }
    lam.abs().sqrt()
}

/// Cantilever fundamental mode: ω̄0 = (1.875)² sqrt(ĒĪ/(ρ̄h̄ l̄⁴)), τ̄0 = 2π/ω̄0.
pub fn cantilever_frequency(params: &BeamParams) -> (f64, f64) {
    assert!(params.ei > 0.0);
    let om = 1.875f64.powi(2)
        * (params.ei / (params.rho_h * params.length.powi(4))).sqrt();
    (om, 2.0 * std::f64::consts::PI / om)
}

// ---------------------------------------------------------------------------
// Beam surface geometry

/// Positions/normal/velocity corrections of the upper (+) and lower (-)
/// surfaces of a beam of thickness h̄ about its reference line.
#[derive(Clone, Debug)]
pub struct SurfaceGeometry {
    pub xplus: Vec<[f64; 2]>,
    pub xminus: Vec<[f64; 2]>,
    pub nbar: Vec<[f64; 2]>,
    pub wplus: Vec<[f64; 2]>,
    pub wminus: Vec<[f64; 2]>,
}

/// Surface geometry from the nodal state: x̄± = x̄0 ± (h̄/2) n̄ with
/// n̄ = (-η_s, 1)/sqrt(1+η_s²), and w̄± = ±(h̄/2) ∂n̄/∂t where ∂n̄/∂t is
/// obtained by the chain rule through η_s.
///
/// x_nodes are the reference-line abscissae and y_ref its rest height.
pub fn surface_geometry(
    state: &BeamState,
    params: &BeamParams,
    x_nodes: &[f64],
    y_ref: f64,
) -> SurfaceGeometry {
    let n = x_nodes.len();
    assert!(state.eta.len() == n && n >= 3);
    let deriv = |v: &[f64], i: usize| -> f64 {
        let ds = x_nodes[1] - x_nodes[0];
        if i == 0 {
            (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * ds)
        } else if i == n - 1 {
            (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * ds)
        } else {
            (v[i + 1] - v[i - 1]) / (2.0 * ds)
        }
    };
    let half = 0.5 * params.h_bar;
    let mut g = SurfaceGeometry {
        xplus: vec![[0.0; 2]; n],
        xminus: vec![[0.0; 2]; n],
        nbar: vec![[0.0; 2]; n],
        wplus: vec![[0.0; 2]; n],
        wminus: vec![[0.0; 2]; n],
    };
    for i in 0..n {
        let q = deriv(&state.eta, i);
        let qdot = deriv(&state.etadot, i);
        let denom = (1.0 + q * q).sqrt();
        let nb = [-q / denom, 1.0 / denom];
        // ∂n̄/∂t = (-1, -q) (1+q²)^{-3/2} η̇_s
        let c = qdot / (denom * denom * denom);
        let ndot = [-c, -q * c];
        let x0 = [x_nodes[i], y_ref + state.eta[i]];
        g.nbar[i] = nb;
        g.xplus[i] = [x0[0] + half * nb[0], x0[1] + half * nb[1]];
        g.xminus[i] = [x0[0] - half * nb[0], x0[1] - half * nb[1]];
        g.wplus[i] = [half * ndot[0], half * ndot[1]];
        g.wminus[i] = [-half * ndot[0], -half * ndot[1]];
    }
    g
}

// ---------------------------------------------------------------------------
// Finite-element back end (cubic Hermite / Newmark-beta)

/// Assembled Hermite finite-element beam. Dof ordering interleaves
/// displacement and slope: [η_0, η'_0, η_1, η'_1, ...].
pub struct FemBeam {
    pub n_elems: usize,
    pub le: f64,
    pub params: BeamParams,
    /// consistent mass, ρ̄h̄ (φ,φ)
    pub m: DMatrix<f64>,
    /// stiffness, K0 (φ,φ) + T (φ',φ') + EI (φ'',φ'')
    pub k: DMatrix<f64>,
    /// damping, K1 (φ,φ) + T1 (φ',φ')
    pub b: DMatrix<f64>,
    /// essential-BC dof indices (all constrained to zero)
    pub constrained: Vec<usize>,
    newmark_cache: Option<(f64, f64, f64, nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>)>,
    mass_cache: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

// 4-point Gauss on [0,1]: exact through degree 7, enough for (φ,φ) products.
const GAUSS_X: [f64; 4] = [
    0.5 - 0.430_568_155_797_026_3,
    0.5 - 0.169_990_521_792_428_13,
    0.5 + 0.169_990_521_792_428_13,
    0.5 + 0.430_568_155_797_026_3,
];
const GAUSS_W: [f64; 4] = [
    0.173_927_422_568_726_93,
    0.326_072_577_431_273_07,
    0.326_072_577_431_273_07,
    0.173_927_422_568_726_93,
];

fn hermite_shapes(xi: f64, le: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let n = [
        1.0 - 3.0 * xi * xi + 2.0 * xi * xi * xi,
        le * (xi - 2.0 * xi * xi + xi * xi * xi),
        3.0 * xi * xi - 2.0 * xi * xi * xi,
        le * (xi * xi * xi - xi * xi),
    ];
    let d1 = [
        (-6.0 * xi + 6.0 * xi * xi) / le,
        1.0 - 4.0 * xi + 3.0 * xi * xi,
        (6.0 * xi - 6.0 * xi * xi) / le,
        3.0 * xi * xi - 2.0 * xi,
    ];
    let d2 = [
        (-6.0 + 12.0 * xi) / (le * le),
        (-4.0 + 6.0 * xi) / le,
        (6.0 - 12.0 * xi) / (le * le),
        (6.0 * xi - 2.0) / le,
    ];
    (n, d1, d2)
}

/// Assemble mass/stiffness/damping matrices for the Hermite beam and record
/// the essential constraints implied by the end BCs.
pub fn fem_assemble(params: &BeamParams, n_elems: usize) -> FemBeam {
    assert!(n_elems >= 2);
    let ndof = 2 * (n_elems + 1);
    let le = params.length / n_elems as f64;
    let mut mphi = DMatrix::zeros(ndof, ndof);
    let mut s = DMatrix::zeros(ndof, ndof);
    let mut b4 = DMatrix::zeros(ndof, ndof);
    for e in 0..n_elems {
        let base = 2 * e;
        for g in 0..4 {
            let (n, d1, d2) = hermite_shapes(GAUSS_X[g], le);
            let w = GAUSS_W[g] * le;
            for a in 0..4 {
                for bidx in 0..4 {
                    mphi[(base + a, base + bidx)] += w * n[a] * n[bidx];
                    s[(base + a, base + bidx)] += w * d1[a] * d1[bidx];
                    b4[(base + a, base + bidx)] += w * d2[a] * d2[bidx];
                }
            }
        }
    }
    let m = params.rho_h * &mphi;
    let k = params.k0 * &mphi + params.t * &s + params.ei * &b4;
    let b = params.k1 * &mphi + params.t1 * &s;
    let mut constrained = Vec::new();
    let ends = [(params.bc_left, 0usize), (params.bc_right, ndof - 2)];
    for (bc, disp) in ends {
        match bc {
            BeamBc::Pinned => constrained.push(disp),
            BeamBc::Clamped => {
                constrained.push(disp);
                constrained.push(disp + 1);
            }
            BeamBc::Sliding => constrained.push(disp + 1),
            BeamBc::Free => {}
        }
    }
    FemBeam {
        n_elems,
        le,
        params: params.clone(),
        m,
        k,
        b,
        constrained,
        newmark_cache: None,
        mass_cache: None,
    }
}

impl FemBeam {
    pub fn n_nodes(&self) -> usize {
        self.n_elems + 1
    }

    fn pack(&self, state: &BeamState) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let nn = self.n_nodes();
        let mut d = DVector::zeros(2 * nn);
        let mut v = DVector::zeros(2 * nn);
        let mut a = DVector::zeros(2 * nn);
        for i in 0..nn {
            d[2 * i] = state.eta[i];
            d[2 * i + 1] = state.etaprime[i];
            v[2 * i] = state.etadot[i];
            v[2 * i + 1] = state.etadotprime[i];
            a[2 * i] = state.etaddot[i];
            a[2 * i + 1] = state.etaddotprime[i];
        }
        (d, v, a)
    }

    fn unpack(&self, d: &DVector<f64>, v: &DVector<f64>, a: &DVector<f64>) -> BeamState {
        let nn = self.n_nodes();
        let mut st = BeamState::new_fem(nn);
        for i in 0..nn {
            st.eta[i] = d[2 * i];
            st.etaprime[i] = d[2 * i + 1];
            st.etadot[i] = v[2 * i];
            st.etadotprime[i] = v[2 * i + 1];
            st.etaddot[i] = a[2 * i];
            st.etaddotprime[i] = a[2 * i + 1];
        }
        st
    }

    /// Consistent load vector for nodal forces interpreted as a piecewise
    /// linear density f(s).
    pub fn load_from_nodal(&self, f_nodes: &[f64]) -> DVector<f64> {
        assert_eq!(f_nodes.len(), self.n_nodes());
        let mut load = DVector::zeros(2 * self.n_nodes());
        for e in 0..self.n_elems {
            let (fl, fr) = (f_nodes[e], f_nodes[e + 1]);
            for g in 0..4 {
                let xi = GAUSS_X[g];
                let (n, _, _) = hermite_shapes(xi, self.le);
                let w = GAUSS_W[g] * self.le;
                let fval = fl * (1.0 - xi) + fr * xi;
                for a in 0..4 {
                    load[2 * e + a] += w * fval * n[a];
                }
            }
        }
        load
    }

    fn constrain_rows(&self, mat: &mut DMatrix<f64>) {
        for &c in &self.constrained {
            for j in 0..mat.ncols() {
                mat[(c, j)] = 0.0;
            }
            mat[(c, c)] = 1.0;
        }
    }

    fn zero_constrained(&self, v: &mut DVector<f64>) {
        for &c in &self.constrained {
            v[c] = 0.0;
        }
    }

    /// Solve M η̈ = F - K d - B v for the acceleration of the given state
    /// (constrained dofs held at zero). Returns the full interleaved vector.
    pub fn acceleration(
        &mut self,
        state: &BeamState,
        f_nodes: &[f64],
    ) -> Result<DVector<f64>, BeamError> {
        let (d, v, _) = self.pack(state);
        let mut rhs = self.load_from_nodal(f_nodes) - &self.k * &d - &self.b * &v;
        self.zero_constrained(&mut rhs);
        if self.mass_cache.is_none() {
            let mut meff = self.m.clone();
            self.constrain_rows(&mut meff);
            self.mass_cache = Some(meff.lu());
        }
        self.mass_cache
            .as_ref()
            .unwrap()
            .solve(&rhs)
            .ok_or_else(|| BeamError::SolverDivergence("singular mass matrix".into()))
    }

    /// Refresh the acceleration cache of `state` from the weak form.
    pub fn refresh_acceleration(
        &mut self,
        state: &mut BeamState,
        f_nodes: &[f64],
    ) -> Result<(), BeamError> {
        let a = self.acceleration(state, f_nodes)?;
        for i in 0..self.n_nodes() {
            state.etaddot[i] = a[2 * i];
            state.etaddotprime[i] = a[2 * i + 1];
        }
        Ok(())
    }

    /// One Newmark-beta step from `state` under nodal forcing f_nodes,
    /// returning the advanced state (the input is not modified, so a
    /// predicted step can be discarded and redone with corrected forcing).
    pub fn newmark_step(
        &mut self,
        state: &BeamState,
        f_nodes: &[f64],
        dt: f64,
        beta: f64,
        gamma: f64,
    ) -> Result<BeamState, BeamError> {
        let (d, v, a) = self.pack(state);
        let d_pred = &d + dt * &v + (0.5 - beta) * dt * dt * &a;
        let v_pred = &v + (1.0 - gamma) * dt * &a;
        let mut rhs = self.load_from_nodal(f_nodes) - &self.k * &d_pred - &self.b * &v_pred;
        self.zero_constrained(&mut rhs);
        let rebuild = match &self.newmark_cache {
            Some((cdt, cb, cg, _)) => *cdt != dt || *cb != beta || *cg != gamma,
            None => true,
        };
        if rebuild {
            let mut aeff = &self.m + gamma * dt * &self.b + beta * dt * dt * &self.k;
            self.constrain_rows(&mut aeff);
            self.newmark_cache = Some((dt, beta, gamma, aeff.lu()));
        }
        let a_new = self
            .newmark_cache
            .as_ref()
            .unwrap()
            .3
            .solve(&rhs)
            .ok_or_else(|| BeamError::SolverDivergence("singular Newmark matrix".into()))?;
        let d_new = d_pred + beta * dt * dt * &a_new;
        let v_new = v_pred + gamma * dt * &a_new;
        Ok(self.unpack(&d_new, &v_new, &a_new))
    }

    /// Largest eigenfrequency of M⁻¹K (undamped), power iteration.
    pub fn omega_max(&mut self) -> Result<f64, BeamError> {
        let ndof = 2 * self.n_nodes();
        let mut x = DVector::from_fn(ndof, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        self.zero_constrained(&mut x);
        if self.mass_cache.is_none() {
            let mut meff = self.m.clone();
            self.constrain_rows(&mut meff);
            self.mass_cache = Some(meff.lu());
        }
        let mut lam = 0.0;
        for _ in 0..400 {
            let mut kx = &self.k * &x;
            self.zero_constrained(&mut kx);
            let mut y = self
                .mass_cache
                .as_ref()
                .unwrap()
                .solve(&kx)
                .ok_or_else(|| BeamError::SolverDivergence("singular mass matrix".into()))?;
            self.zero_constrained(&mut y);
            let norm = y.norm();
            if norm == 0.0 {
                return Ok(0.0);
            }
            let new_lam = x.dot(&y);
            y /= norm;
            x = y;
            if lam > 0.0 && ((new_lam - lam) / new_lam).abs() < 1e-12 {
                lam = new_lam;
                break;
            }
            lam = new_lam;
        }
        Ok(lam.abs().sqrt())
    }
}

/// AMP-PBA combination: solve M η̈ = -K d - B v + f^(p) for the (predicted)
/// state and return ρ̄h̄ η̈ - f^(p) at the nodes, the quantity the modified
/// AMP right-hand side substitutes for the beam operator.
pub fn beam_acceleration_pba(
    beam: &mut FemBeam,
    state: &BeamState,
    f_pred: &[f64],
) -> Result<Vec<f64>, BeamError> {
    let a = beam.acceleration(state, f_pred)?;
    let nn = beam.n_nodes();
    let mut out = vec![0.0; nn];
    for i in 0..nn {
        out[i] = beam.params.rho_h * a[2 * i] - f_pred[i];
    }
    Ok(out)
}
