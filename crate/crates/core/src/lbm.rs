//! D2Q9 BGK lattice Boltzmann solver.
//!
//! Populations are stored direction-major (`f[i * N + n]`, `n = x + nx·y`).
//! One step is: BGK collision on fluid nodes, pull streaming with link-wise
//! bounce-back from solid nodes, Zou–He closures on the inlet and outlet
//! columns, then a moment refresh. Lattice units throughout: Δx = Δt = 1.

use thiserror::Error;

use crate::grid::SolidMask;

pub const Q: usize = 9;
/// Direction order: rest, E, N, W, S, NE, NW, SW, SE.
pub const CX: [i32; Q] = [0, 1, 0, -1, 0, 1, -1, -1, 1];
pub const CY: [i32; Q] = [0, 0, 1, 0, -1, 1, 1, -1, -1];
pub const OPPOSITE: [usize; Q] = [0, 3, 4, 1, 2, 7, 8, 5, 6];
pub const WEIGHTS: [f64; Q] = [
    4.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
];
/// Squared lattice sound speed.
pub const CS2: f64 = 1.0 / 3.0;
/// Low-Mach ceiling on the inlet speed.
pub const MAX_INLET_SPEED: f64 = 0.1;
pub const DEFAULT_INLET_RAMP: u64 = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LbmError {
    #[error("flow parameter out of domain: {0}")]
    Parameter(String),
    #[error("state does not match lattice: {0}")]
    Shape(String),
    #[error("instability at step {t}, node ({x}, {y}): non-finite state, max |f| = {max_abs_f:e}")]
    Unstable {
        t: u64,
        x: usize,
        y: usize,
        max_abs_f: f64,
    },
}

pub fn tau_from_viscosity(nu: f64) -> Result<f64, LbmError> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(LbmError::Parameter(format!(
            "viscosity {nu} must be positive"
        )));
    }
    Ok(nu / CS2 + 0.5)
}

pub fn viscosity_from_tau(tau: f64) -> f64 {
    CS2 * (tau - 0.5)
}

#[inline]
pub fn pressure_from_density(rho: f64) -> f64 {
    CS2 * rho
}

/// Second-order Hermite equilibrium.
#[inline]
pub fn equilibrium(rho: f64, u: [f64; 2]) -> [f64; Q] {
    let usq = 1.5 * (u[0] * u[0] + u[1] * u[1]);
    let mut feq = [0.0; Q];
    for i in 0..Q {
        let cu = 3.0 * (CX[i] as f64 * u[0] + CY[i] as f64 * u[1]);
        feq[i] = WEIGHTS[i] * rho * (1.0 + cu + 0.5 * cu * cu - usq);
    }
    feq
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Streamwise {
    /// Populations leaving the last column re-enter the first.
    Periodic,
    /// Velocity inlet at x = 0, pressure outlet at x = nx - 1.
    InletOutlet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    mask: SolidMask,
    pub streamwise: Streamwise,
    /// Wrap in y; otherwise rows outside the lattice reflect like solids.
    pub periodic_y: bool,
}

impl LatticeSpec {
    pub fn channel(mask: SolidMask) -> Self {
        Self {
            mask,
            streamwise: Streamwise::InletOutlet,
            periodic_y: false,
        }
    }

    pub fn periodic(mask: SolidMask, periodic_y: bool) -> Self {
        Self {
            mask,
            streamwise: Streamwise::Periodic,
            periodic_y,
        }
    }

    pub fn mask(&self) -> &SolidMask {
        &self.mask
    }

    pub fn nx(&self) -> usize {
        self.mask.nx()
    }

    pub fn ny(&self) -> usize {
        self.mask.ny()
    }

    pub fn node_count(&self) -> usize {
        self.mask.len()
    }

    /// Where population `i` arriving at `(x, y)` comes from: `Some(n)` for a
    /// lattice node, `None` when the source lies outside a non-periodic edge.
    fn source(&self, x: usize, y: usize, i: usize) -> Option<usize> {
        let nx = self.nx() as i64;
        let ny = self.ny() as i64;
        let mut sx = x as i64 - CX[i] as i64;
        let mut sy = y as i64 - CY[i] as i64;
        if sx < 0 || sx >= nx {
            match self.streamwise {
                Streamwise::Periodic => sx = sx.rem_euclid(nx),
                Streamwise::InletOutlet => return None,
            }
        }
        if sy < 0 || sy >= ny {
            if self.periodic_y {
                sy = sy.rem_euclid(ny);
            } else {
                return None;
            }
        }
        Some((sx + nx * sy) as usize)
    }

    /// Fluid nodes of an edge column that get the Zou–He closure. Walls are
    /// solid node rows, so the inlet/outlet corners themselves are solid and
    /// reflect like any other wall node. A rough wall can also cut the edge
    /// column so that a fluid edge node faces a solid node one column inward;
    /// prescribing a through-flow there pumps mass into a dead end, so such
    /// nodes are left to bounce-back as well.
    fn zou_he_rows(&self, x: usize) -> Vec<usize> {
        let inward = if x == 0 { 1 } else { x - 1 };
        self.mask
            .fluid_rows(x)
            .filter(|&y| !self.mask.is_solid(inward, y))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub inlet_speed: f64,
    pub viscosity: f64,
    pub tau: f64,
    pub outlet_pressure: f64,
    pub reynolds: f64,
    /// Steps over which the inlet speed rises from 0 to `inlet_speed` along a
    /// half cosine. An impulsive start excites a period-2 mode at the pressure
    /// outlet that BGK never damps.
    pub inlet_ramp: u64,
}

impl FlowParams {
    pub fn from_reynolds(
        inlet_speed: f64,
        mean_gap: f64,
        reynolds: f64,
        outlet_pressure: f64,
    ) -> Result<Self, LbmError> {
        if !(reynolds > 0.0) {
            return Err(LbmError::Parameter(format!(
                "Reynolds number {reynolds} must be positive"
            )));
        }
        Self::from_viscosity(
            inlet_speed,
            mean_gap,
            inlet_speed * mean_gap / reynolds,
            outlet_pressure,
        )
    }

    pub fn from_viscosity(
        inlet_speed: f64,
        mean_gap: f64,
        viscosity: f64,
        outlet_pressure: f64,
    ) -> Result<Self, LbmError> {
        let tau = tau_from_viscosity(viscosity)?;
        let p = Self {
            inlet_speed,
            viscosity,
            tau,
            outlet_pressure,
            reynolds: inlet_speed * mean_gap / viscosity,
            inlet_ramp: DEFAULT_INLET_RAMP,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), LbmError> {
        if !(self.tau > 0.5) {
            return Err(LbmError::Parameter(format!(
                "relaxation time {} must exceed 1/2",
                self.tau
            )));
        }
        if !(self.inlet_speed.abs() < MAX_INLET_SPEED) {
            return Err(LbmError::Parameter(format!(
                "inlet speed {} violates the low-Mach limit {MAX_INLET_SPEED}",
                self.inlet_speed
            )));
        }
        if !(self.outlet_pressure > 0.0) {
            return Err(LbmError::Parameter(format!(
                "outlet pressure {} must be positive",
                self.outlet_pressure
            )));
        }
        Ok(())
    }

    pub fn with_inlet_ramp(mut self, steps: u64) -> Self {
        self.inlet_ramp = steps;
        self
    }

    /// Inlet speed imposed when producing step `t`.
    pub fn inlet_speed_at(&self, t: u64) -> f64 {
        if t >= self.inlet_ramp {
            return self.inlet_speed;
        }
        let s = t as f64 / self.inlet_ramp as f64;
        self.inlet_speed * 0.5 * (1.0 - (std::f64::consts::PI * s).cos())
    }

    pub fn outlet_density(&self) -> f64 {
        self.outlet_pressure / CS2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbmState {
    nx: usize,
    ny: usize,
    /// Post-streaming populations, direction-major.
    pub f: Vec<f64>,
    pub rho: Vec<f64>,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
    pub t: u64,
}

impl LbmState {
    /// Global equilibrium at ρ = 1, u = 0 on fluid nodes.
    pub fn at_rest(spec: &LatticeSpec) -> Self {
        Self::from_macroscopic(spec, |_, _| (1.0, [0.0, 0.0]))
    }

    /// Equilibrium populations for the given macroscopic field.
    pub fn from_macroscopic(
        spec: &LatticeSpec,
        field: impl Fn(usize, usize) -> (f64, [f64; 2]),
    ) -> Self {
        let nx = spec.nx();
        let ny = spec.ny();
        let n = nx * ny;
        let mut s = Self {
            nx,
            ny,
            f: vec![0.0; Q * n],
            rho: vec![0.0; n],
            ux: vec![0.0; n],
            uy: vec![0.0; n],
            t: 0,
        };
        for y in 0..ny {
            for x in 0..nx {
                let k = x + nx * y;
                if spec.mask().is_solid_at(k) {
                    continue;
                }
                let (rho, u) = field(x, y);
                let feq = equilibrium(rho, u);
                for i in 0..Q {
                    s.f[i * n + k] = feq[i];
                }
            }
        }
        s.refresh_moments(spec.mask());
        s
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn population(&self, i: usize, x: usize, y: usize) -> f64 {
        self.f[i * self.nx * self.ny + x + self.nx * y]
    }

    pub fn population_mut(&mut self, i: usize, x: usize, y: usize) -> &mut f64 {
        let n = self.nx * self.ny;
        &mut self.f[i * n + x + self.nx * y]
    }

    /// Recomputes ρ and u at fluid nodes from the populations.
    pub fn refresh_moments(&mut self, mask: &SolidMask) {
        let n = self.nx * self.ny;
        for k in 0..n {
            if mask.is_solid_at(k) {
                self.rho[k] = 0.0;
                self.ux[k] = 0.0;
                self.uy[k] = 0.0;
                continue;
            }
            let (rho, ux, uy) = moments_at(&self.f, n, k);
            self.rho[k] = rho;
            self.ux[k] = ux;
            self.uy[k] = uy;
        }
    }

    /// Total density over fluid nodes.
    pub fn mass(&self, mask: &SolidMask) -> f64 {
        (0..self.rho.len())
            .filter(|&k| !mask.is_solid_at(k))
            .map(|k| self.rho[k])
            .sum()
    }

    pub fn snapshot(&self, mask: &SolidMask) -> FieldSnapshot {
        let n = self.nx * self.ny;
        let mut snap = FieldSnapshot::solid(self.nx, self.ny, self.t);
        for k in 0..n {
            if mask.is_solid_at(k) {
                continue;
            }
            snap.rho[k] = self.rho[k];
            snap.u[k] = self.ux[k];
            snap.v[k] = self.uy[k];
            snap.p[k] = pressure_from_density(self.rho[k]);
        }
        snap
    }

    fn check_shape(&self, spec: &LatticeSpec) -> Result<(), LbmError> {
        if self.nx != spec.nx() || self.ny != spec.ny() || self.f.len() != Q * self.nx * self.ny {
            return Err(LbmError::Shape(format!(
                "state {}x{} vs lattice {}x{}",
                self.nx,
                self.ny,
                spec.nx(),
                spec.ny()
            )));
        }
        Ok(())
    }

    fn check_finite(&self, mask: &SolidMask) -> Result<(), LbmError> {
        let n = self.nx * self.ny;
        for k in 0..n {
            if mask.is_solid_at(k) {
                continue;
            }
            let rho = self.rho[k];
            if !(rho.is_finite() && rho > 0.0 && self.ux[k].is_finite() && self.uy[k].is_finite()) {
                let max_abs_f = self
                    .f
                    .iter()
                    .filter(|v| v.is_finite())
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                return Err(LbmError::Unstable {
                    t: self.t,
                    x: k % self.nx,
                    y: k / self.nx,
                    max_abs_f,
                });
            }
        }
        Ok(())
    }
}

/// Density and velocity from the nine populations. Opposite directions are
/// paired so a symmetric population set yields exactly zero momentum and the
/// lattice weights sum to exactly one.
#[inline]
pub fn moments(f: &[f64; Q]) -> (f64, f64, f64) {
    let rho = f[0] + ((f[1] + f[3]) + (f[2] + f[4])) + ((f[5] + f[7]) + (f[6] + f[8]));
    let jx = (f[1] - f[3]) + ((f[5] - f[7]) + (f[8] - f[6]));
    let jy = (f[2] - f[4]) + ((f[5] - f[7]) + (f[6] - f[8]));
    (rho, jx / rho, jy / rho)
}

#[inline]
fn moments_at(f: &[f64], n: usize, k: usize) -> (f64, f64, f64) {
    let mut local = [0.0; Q];
    for (i, v) in local.iter_mut().enumerate() {
        *v = f[i * n + k];
    }
    moments(&local)
}

/// Macroscopic fields at one instant; solid nodes hold NaN in every field.
#[derive(Debug, Clone)]
pub struct FieldSnapshot {
    pub nx: usize,
    pub ny: usize,
    pub t: u64,
    pub rho: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
}

impl FieldSnapshot {
    pub fn solid(nx: usize, ny: usize, t: u64) -> Self {
        let n = nx * ny;
        Self {
            nx,
            ny,
            t,
            rho: vec![f64::NAN; n],
            u: vec![f64::NAN; n],
            v: vec![f64::NAN; n],
            p: vec![f64::NAN; n],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        x + self.nx * y
    }

    #[inline]
    pub fn is_fluid(&self, k: usize) -> bool {
        !self.u[k].is_nan()
    }

    /// Solid mask recovered from the NaN sentinels.
    pub fn mask(&self) -> SolidMask {
        SolidMask::from_cells(
            self.nx,
            self.ny,
            self.u.iter().map(|v| v.is_nan()).collect(),
        )
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// Bitwise equality, NaN payloads included.
    pub fn bit_eq(&self, other: &Self) -> bool {
        let same = |a: &[f64], b: &[f64]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        };
        self.nx == other.nx
            && self.ny == other.ny
            && self.t == other.t
            && same(&self.rho, &other.rho)
            && same(&self.u, &other.u)
            && same(&self.v, &other.v)
            && same(&self.p, &other.p)
    }
}

/// BGK relaxation of every fluid node, written into `post`.
fn collide(state: &LbmState, mask: &SolidMask, omega: f64, post: &mut [f64]) {
    let n = state.nx * state.ny;
    for k in 0..n {
        if mask.is_solid_at(k) {
            for i in 0..Q {
                post[i * n + k] = 0.0;
            }
            continue;
        }
        let feq = equilibrium(state.rho[k], [state.ux[k], state.uy[k]]);
        for i in 0..Q {
            let fi = state.f[i * n + k];
            post[i * n + k] = fi - omega * (fi - feq[i]);
        }
    }
}

/// Plain streaming: every fluid node pulls from its upstream neighbour
/// when that neighbour is a fluid node; other links are left untouched.
pub fn stream(post: &[f64], f: &mut [f64], spec: &LatticeSpec) {
    let nx = spec.nx();
    let ny = spec.ny();
    let n = nx * ny;
    let mask = spec.mask();
    for y in 0..ny {
        for x in 0..nx {
            let k = x + nx * y;
            if mask.is_solid_at(k) {
                continue;
            }
            for i in 0..Q {
                if let Some(src) = spec.source(x, y, i) {
                    if !mask.is_solid_at(src) {
                        f[i * n + k] = post[i * n + src];
                    }
                }
            }
        }
    }
}

/// Link-wise bounce-back: a population whose upstream node is solid (or
/// lies past a closed edge) is the reversed population that left this node.
pub fn apply_bounce_back(post: &[f64], f: &mut [f64], spec: &LatticeSpec) {
    let nx = spec.nx();
    let ny = spec.ny();
    let n = nx * ny;
    let mask = spec.mask();
    for y in 0..ny {
        for x in 0..nx {
            let k = x + nx * y;
            if mask.is_solid_at(k) {
                continue;
            }
            for i in 0..Q {
                let blocked = match spec.source(x, y, i) {
                    Some(src) => mask.is_solid_at(src),
                    None => true,
                };
                if blocked {
                    f[i * n + k] = post[OPPOSITE[i] * n + k];
                }
            }
        }
    }
}

/// Zou–He velocity closure `(U, 0)` on the inlet column.
pub fn apply_inlet_velocity(state: &mut LbmState, spec: &LatticeSpec, speed: f64) {
    let n = state.nx * state.ny;
    let f = &mut state.f;
    for y in spec.zou_he_rows(0) {
        let k = spec.nx() * y;
        let g = |i: usize| f[i * n + k];
        let rho = (g(0) + g(2) + g(4) + 2.0 * (g(3) + g(6) + g(7))) / (1.0 - speed);
        let ru = rho * speed;
        let half_dy = 0.5 * (g(2) - g(4));
        let f1 = g(3) + 2.0 / 3.0 * ru;
        let f5 = g(7) - half_dy + ru / 6.0;
        let f8 = g(6) + half_dy + ru / 6.0;
        f[n + k] = f1;
        f[5 * n + k] = f5;
        f[8 * n + k] = f8;
    }
}

/// Zou–He pressure closure `ρ = p₀ / c_s²` on the outlet column.
pub fn apply_outlet_pressure(state: &mut LbmState, spec: &LatticeSpec, pressure: f64) {
    let n = state.nx * state.ny;
    let rho0 = pressure / CS2;
    let x = spec.nx() - 1;
    let f = &mut state.f;
    for y in spec.zou_he_rows(x) {
        let k = x + spec.nx() * y;
        let g = |i: usize| f[i * n + k];
        let u = -1.0 + (g(0) + g(2) + g(4) + 2.0 * (g(1) + g(5) + g(8))) / rho0;
        let ru = rho0 * u;
        let half_dy = 0.5 * (g(2) - g(4));
        let f3 = g(1) - 2.0 / 3.0 * ru;
        let f7 = g(5) + half_dy - ru / 6.0;
        let f6 = g(8) - half_dy - ru / 6.0;
        f[3 * n + k] = f3;
        f[7 * n + k] = f7;
        f[6 * n + k] = f6;
    }
}

fn apply_open_boundaries(state: &mut LbmState, spec: &LatticeSpec, params: &FlowParams) {
    if spec.streamwise == Streamwise::InletOutlet {
        let speed = params.inlet_speed_at(state.t + 1);
        apply_inlet_velocity(state, spec, speed);
        apply_outlet_pressure(state, spec, params.outlet_pressure);
    }
}

/// One full update built from the individual stages. [`Solver`] produces
/// bit-identical results through a precomputed gather table.
pub fn collide_and_stream(
    state: &mut LbmState,
    spec: &LatticeSpec,
    params: &FlowParams,
) -> Result<(), LbmError> {
    state.check_shape(spec)?;
    let mut post = vec![0.0; state.f.len()];
    collide(state, spec.mask(), 1.0 / params.tau, &mut post);
    stream(&post, &mut state.f, spec);
    apply_bounce_back(&post, &mut state.f, spec);
    apply_open_boundaries(state, spec, params);
    state.refresh_moments(spec.mask());
    state.t += 1;
    state.check_finite(spec.mask())
}

/// Solver with cached streaming table and scratch buffer.
#[derive(Debug, Clone)]
pub struct Solver {
    spec: LatticeSpec,
    params: FlowParams,
    state: LbmState,
    post: Vec<f64>,
    /// `gather[i * N + k]` indexes `post` for population `i` at node `k`.
    gather: Vec<u32>,
    fluid: Vec<u32>,
}

impl Solver {
    pub fn new(spec: LatticeSpec, params: FlowParams) -> Result<Self, LbmError> {
        let state = LbmState::at_rest(&spec);
        Self::with_state(spec, params, state)
    }

    pub fn with_state(
        spec: LatticeSpec,
        params: FlowParams,
        state: LbmState,
    ) -> Result<Self, LbmError> {
        params.validate()?;
        state.check_shape(&spec)?;
        let n = spec.node_count();
        if Q * n >= u32::MAX as usize {
            return Err(LbmError::Shape("lattice too large".into()));
        }
        let mut gather = vec![0u32; Q * n];
        let mut fluid = Vec::new();
        for y in 0..spec.ny() {
            for x in 0..spec.nx() {
                let k = x + spec.nx() * y;
                if spec.mask().is_solid_at(k) {
                    for i in 0..Q {
                        gather[i * n + k] = (i * n + k) as u32;
                    }
                    continue;
                }
                fluid.push(k as u32);
                for i in 0..Q {
                    let src = match spec.source(x, y, i) {
                        Some(s) if !spec.mask().is_solid_at(s) => i * n + s,
                        _ => OPPOSITE[i] * n + k,
                    };
                    gather[i * n + k] = src as u32;
                }
            }
        }
        Ok(Self {
            post: vec![0.0; Q * n],
            spec,
            params,
            state,
            gather,
            fluid,
        })
    }

    pub fn state(&self) -> &LbmState {
        &self.state
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn params(&self) -> &FlowParams {
        &self.params
    }

    pub fn time(&self) -> u64 {
        self.state.t
    }

    pub fn snapshot(&self) -> FieldSnapshot {
        self.state.snapshot(self.spec.mask())
    }

    pub fn step(&mut self) -> Result<(), LbmError> {
        let n = self.spec.node_count();
        let omega = 1.0 / self.params.tau;
        let st = &mut self.state;
        let post = &mut self.post;
        for &k in &self.fluid {
            let k = k as usize;
            let feq = equilibrium(st.rho[k], [st.ux[k], st.uy[k]]);
            for i in 0..Q {
                let fi = st.f[i * n + k];
                post[i * n + k] = fi - omega * (fi - feq[i]);
            }
        }
        for &k in &self.fluid {
            let k = k as usize;
            for i in 0..Q {
                st.f[i * n + k] = post[self.gather[i * n + k] as usize];
            }
        }
        apply_open_boundaries(st, &self.spec, &self.params);
        for &k in &self.fluid {
            let k = k as usize;
            let (rho, ux, uy) = moments_at(&st.f, n, k);
            st.rho[k] = rho;
            st.ux[k] = ux;
            st.uy[k] = uy;
        }
        st.t += 1;
        if st.t % 64 == 0 {
            st.check_finite(self.spec.mask())?;
        }
        Ok(())
    }

    pub fn run(&mut self, steps: u64) -> Result<(), LbmError> {
        for _ in 0..steps {
            self.step()?;
        }
        self.state.check_finite(self.spec.mask())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub total_steps: u64,
    pub interval: u64,
}

/// Snapshots at t = 0, every `interval` steps, and at the final step.
pub struct SnapshotStream {
    solver: Solver,
    schedule: Schedule,
    emitted_initial: bool,
    failed: bool,
}

impl Iterator for SnapshotStream {
    type Item = Result<FieldSnapshot, LbmError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if !self.emitted_initial {
            self.emitted_initial = true;
            return Some(Ok(self.solver.snapshot()));
        }
        let t = self.solver.time();
        if t >= self.schedule.total_steps {
            return None;
        }
        let next = ((t / self.schedule.interval) + 1) * self.schedule.interval;
        let target = next.min(self.schedule.total_steps);
        match self.solver.run(target - t) {
            Ok(()) => Some(Ok(self.solver.snapshot())),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

pub fn run_simulation(
    spec: LatticeSpec,
    params: FlowParams,
    schedule: Schedule,
) -> Result<SnapshotStream, LbmError> {
    if schedule.interval == 0 {
        return Err(LbmError::Parameter("snapshot interval must be >= 1".into()));
    }
    Ok(SnapshotStream {
        solver: Solver::new(spec, params)?,
        schedule,
        emitted_initial: false,
        failed: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lattice_constants() {
        assert_eq!(moments(&WEIGHTS), (1.0, 0.0, 0.0));
        assert_eq!(CS2, 1.0 / 3.0);
        for i in 0..Q {
            assert_eq!(CX[OPPOSITE[i]], -CX[i]);
            assert_eq!(CY[OPPOSITE[i]], -CY[i]);
        }
    }

    #[test]
    fn tau_viscosity_relation() {
        assert_eq!(tau_from_viscosity(1.0 / 6.0).unwrap(), 1.0);
        assert_eq!(tau_from_viscosity(1.0 / 3.0).unwrap(), 1.5);
        for nu in [0.01, 0.048, 1.0 / 6.0, 0.3, 2.5] {
            let back = viscosity_from_tau(tau_from_viscosity(nu).unwrap());
            assert!((back - nu).abs() <= 1e-15 * nu.max(1.0), "{nu} -> {back}");
        }
        assert!(tau_from_viscosity(0.0).is_err());
        assert!(tau_from_viscosity(-1.0).is_err());
    }

    #[test]
    fn pressure_closure() {
        assert_eq!(pressure_from_density(1.0), 1.0 / 3.0);
        assert_eq!(pressure_from_density(3.0), 1.0);
        let a = 2.5;
        assert!((pressure_from_density(a * 1.2) - a * pressure_from_density(1.2)).abs() < 1e-15);
    }

    #[test]
    fn rest_equilibrium_is_weights() {
        let feq = equilibrium(1.0, [0.0, 0.0]);
        assert_eq!(feq, WEIGHTS);
        let feq = equilibrium(1.7, [0.0, 0.0]);
        for i in 0..Q {
            assert_eq!(feq[i], WEIGHTS[i] * 1.7);
        }
    }

    /// Exact rational evaluation for ρ = 1, u = (1/20, 0).
    #[test]
    fn equilibrium_matches_rational_oracle() {
        fn gcd(a: i128, b: i128) -> i128 {
            if b == 0 {
                a.abs()
            } else {
                gcd(b, a % b)
            }
        }
        #[derive(Clone, Copy)]
        struct Fr(i128, i128);
        impl Fr {
            fn norm(self) -> Fr {
                let g = gcd(self.0, self.1);
                Fr(self.0 / g, self.1 / g)
            }
            fn add(self, o: Fr) -> Fr {
                Fr(self.0 * o.1 + o.0 * self.1, self.1 * o.1).norm()
            }
            fn mul(self, o: Fr) -> Fr {
                Fr(self.0 * o.0, self.1 * o.1).norm()
            }
        }
        let w = [
            Fr(4, 9),
            Fr(1, 9),
            Fr(1, 9),
            Fr(1, 9),
            Fr(1, 9),
            Fr(1, 36),
            Fr(1, 36),
            Fr(1, 36),
            Fr(1, 36),
        ];
        let u = Fr(1, 20);
        let inv_cs2 = Fr(3, 1);
        let feq = equilibrium(1.0, [0.05, 0.0]);
        for i in 0..Q {
            let cu = Fr(CX[i] as i128, 1).mul(u);
            let term = Fr(1, 1)
                .add(cu.mul(inv_cs2))
                .add(cu.mul(cu).mul(Fr(9, 2)))
                .add(u.mul(u).mul(Fr(-3, 2)));
            let exact = w[i].mul(term);
            let expect = exact.0 as f64 / exact.1 as f64;
            assert!(
                (feq[i] - expect).abs() <= 2.0 * f64::EPSILON * expect,
                "i={i}: {} vs {}",
                feq[i],
                expect
            );
        }
    }

    proptest! {
        #[test]
        fn equilibrium_moments(rho in 0.2..3.0f64, ux in -0.2..0.2f64, uy in -0.2..0.2f64) {
            let feq = equilibrium(rho, [ux, uy]);
            let m0: f64 = feq.iter().sum();
            let mx: f64 = (0..Q).map(|i| CX[i] as f64 * feq[i]).sum();
            let my: f64 = (0..Q).map(|i| CY[i] as f64 * feq[i]).sum();
            prop_assert!((m0 - rho).abs() < 1e-14 * rho.max(1.0));
            prop_assert!((mx - rho * ux).abs() < 1e-15 * 10.0);
            prop_assert!((my - rho * uy).abs() < 1e-15 * 10.0);
        }
    }

    fn smooth_channel(nx: usize, ny: usize) -> LatticeSpec {
        LatticeSpec::channel(SolidMask::smooth_channel(nx, ny))
    }

    fn params(u: f64, re: f64, gap: f64) -> FlowParams {
        FlowParams::from_reynolds(u, gap, re, CS2).unwrap()
    }

    #[test]
    fn flow_param_validation() {
        assert!(FlowParams::from_reynolds(0.2, 48.0, 10.0, CS2).is_err());
        assert!(FlowParams::from_viscosity(0.05, 48.0, 0.0, CS2).is_err());
        let p = FlowParams::from_reynolds(0.05, 48.0, 10.0, CS2).unwrap();
        assert!((p.viscosity - 0.24).abs() < 1e-15);
        assert!((p.reynolds - 10.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_rest_state_is_fixed_point() {
        let spec = LatticeSpec::periodic(SolidMask::all_fluid(16, 12), true);
        let p = FlowParams::from_viscosity(0.0, 10.0, 0.1, CS2).unwrap();
        let mut s = LbmState::at_rest(&spec);
        let s0 = s.clone();
        for _ in 0..50 {
            collide_and_stream(&mut s, &spec, &p).unwrap();
        }
        assert_eq!(s.f, s0.f);
        assert_eq!(s.rho, s0.rho);
        assert_eq!(s.t, 50);
    }

    #[test]
    fn uniform_moving_state_is_fixed_point() {
        let spec = LatticeSpec::periodic(SolidMask::all_fluid(10, 10), true);
        let p = FlowParams::from_viscosity(0.0, 10.0, 0.05, CS2).unwrap();
        let mut s = LbmState::from_macroscopic(&spec, |_, _| (1.1, [0.03, -0.02]));
        let s0 = s.clone();
        for _ in 0..20 {
            collide_and_stream(&mut s, &spec, &p).unwrap();
        }
        for (a, b) in s.f.iter().zip(&s0.f) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn shear_wave(spec: &LatticeSpec) -> LbmState {
        let ny = spec.ny() as f64;
        let nx = spec.nx() as f64;
        LbmState::from_macroscopic(spec, move |x, y| {
            let s = (std::f64::consts::TAU * y as f64 / ny).sin();
            let c = (std::f64::consts::TAU * x as f64 / nx).cos();
            (1.0 + 0.01 * c, [0.04 * s, 0.02 * c])
        })
    }

    #[test]
    fn mass_conserved_with_walls_and_periodic_streamwise() {
        let spec = LatticeSpec::periodic(SolidMask::smooth_channel(40, 20), false);
        let p = FlowParams::from_viscosity(0.0, 18.0, 0.08, CS2).unwrap();
        let mut solver = Solver::with_state(spec.clone(), p, shear_wave(&spec)).unwrap();
        let m0 = solver.state().mass(spec.mask());
        for _ in 0..3 {
            solver.run(1000).unwrap();
            let m = solver.state().mass(spec.mask());
            assert!(((m - m0) / m0).abs() < 1e-10 * 3.0);
        }
    }

    #[test]
    fn fast_path_matches_staged_reference() {
        let nx = 30;
        let ny = 14;
        let mut mask = SolidMask::smooth_channel(nx, ny);
        mask.set(10, 1, true);
        mask.set(10, 2, true);
        mask.set(17, 12, true);
        mask.set(1, 1, true);
        let spec = LatticeSpec::channel(mask);
        let p = params(0.04, 10.0, 12.0);
        let mut reference = LbmState::at_rest(&spec);
        let mut solver = Solver::new(spec.clone(), p).unwrap();
        for _ in 0..200 {
            collide_and_stream(&mut reference, &spec, &p).unwrap();
            solver.step().unwrap();
        }
        let fast = solver.state();
        for (a, b) in reference.f.iter().zip(&fast.f) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(reference.rho, fast.rho);
    }

    #[test]
    fn moments_stay_consistent() {
        let spec = smooth_channel(24, 12);
        let p = params(0.05, 10.0, 10.0);
        let mut solver = Solver::new(spec.clone(), p).unwrap();
        for _ in 0..100 {
            solver.step().unwrap();
            let st = solver.state();
            let n = 24 * 12;
            for k in 0..n {
                if spec.mask().is_solid_at(k) {
                    continue;
                }
                let (rho, ux, uy) = moments_at(&st.f, n, k);
                assert!((rho - st.rho[k]).abs() <= 1e-14);
                assert!((ux - st.ux[k]).abs() <= 1e-14);
                assert!((uy - st.uy[k]).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn bounce_back_reverses_single_population() {
        let spec = LatticeSpec::periodic(SolidMask::smooth_channel(5, 5), false);
        let n = 25;
        let mut post = vec![0.0; Q * n];
        let k = 2 + 5; // node (2, 1), just above the bottom wall
        post[4 * n + k] = 0.37; // heading south into the wall
        let mut f = vec![0.0; Q * n];
        stream(&post, &mut f, &spec);
        apply_bounce_back(&post, &mut f, &spec);
        assert_eq!(f[2 * n + k], 0.37);
        let total: f64 = f.iter().sum();
        assert_eq!(total, 0.37);
        // diagonal into the wall
        let mut post = vec![0.0; Q * n];
        post[7 * n + k] = 0.11;
        let mut f = vec![0.0; Q * n];
        stream(&post, &mut f, &spec);
        apply_bounce_back(&post, &mut f, &spec);
        assert_eq!(f[5 * n + k], 0.11);
        assert_eq!(f.iter().sum::<f64>(), 0.11);
    }

    #[test]
    fn bounce_back_exchanges_no_mass() {
        let spec = LatticeSpec::periodic(SolidMask::smooth_channel(12, 8), false);
        let st = shear_wave(&spec);
        let n = 96;
        let mut post = vec![0.0; Q * n];
        collide(&st, spec.mask(), 1.0 / 0.8, &mut post);
        let mut f = vec![0.0; Q * n];
        stream(&post, &mut f, &spec);
        apply_bounce_back(&post, &mut f, &spec);
        let before: f64 = post.iter().sum();
        let after: f64 = f.iter().sum();
        assert!((before - after).abs() < 1e-13);
    }

    #[test]
    fn near_wall_velocity_decays() {
        let spec = LatticeSpec::periodic(SolidMask::smooth_channel(8, 18), false);
        let p = FlowParams::from_viscosity(0.0, 16.0, 0.1, CS2).unwrap();
        let st = LbmState::from_macroscopic(&spec, |_, _| (1.0, [0.05, 0.0]));
        let mut solver = Solver::with_state(spec, p, st).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..5 {
            solver.run(200).unwrap();
            let u = solver.state().ux[3 + 8];
            assert!(u.abs() < last);
            last = u.abs();
        }
        assert!(last < 0.01);
    }

    #[test]
    fn zou_he_boundaries_hit_targets() {
        let nx = 20;
        let ny = 12;
        let spec = smooth_channel(nx, ny);
        let p = params(0.03, 10.0, 10.0);
        let mut solver = Solver::new(spec.clone(), p.with_inlet_ramp(20)).unwrap();
        solver.run(50).unwrap();
        let st = solver.state();
        for y in 1..ny - 1 {
            let k = nx * y;
            assert!((st.ux[k] - 0.03).abs() < 1e-12, "inlet u {}", st.ux[k]);
            assert!(st.uy[k].abs() < 1e-12);
            let k = nx - 1 + nx * y;
            assert!((st.rho[k] - 1.0).abs() < 1e-12, "outlet rho {}", st.rho[k]);
        }
    }

    #[test]
    fn wall_step_behind_inlet_stays_bounded() {
        // Bottom wall rises to row 6 from x = 1 and at the outlet's inner
        // column, leaving edge nodes that face solid.
        let nx = 40;
        let ny = 20;
        let mut mask = SolidMask::smooth_channel(nx, ny);
        for y in 1..=6 {
            mask.set(1, y, true);
            mask.set(2, y, y <= 4);
            mask.set(nx - 2, y, y <= 3);
        }
        let spec = LatticeSpec::channel(mask);
        let p = params(0.05, 10.0, 16.0).with_inlet_ramp(100);
        let mut solver = Solver::new(spec, p).unwrap();
        let max_rho = |s: &Solver| {
            s.state()
                .rho
                .iter()
                .filter(|r| !r.is_nan())
                .fold(0.0, |a: f64, &r| a.max(r))
        };
        solver.run(5000).unwrap();
        let before = max_rho(&solver);
        solver.run(1000).unwrap();
        let after = max_rho(&solver);
        // Steady, with no mass piling up in front of the step.
        assert!(
            after < 1.2 && (after - before).abs() < 1e-4,
            "max rho {before} -> {after}"
        );
        let st = solver.state();
        for y in 7..ny - 1 {
            assert!((st.ux[nx * y] - 0.05).abs() < 1e-12);
        }
        assert_eq!(st.ux[nx * 3], 0.0);
    }

    #[test]
    fn steady_channel_flux_balance() {
        let nx = 60;
        let ny = 18;
        let spec = smooth_channel(nx, ny);
        let p = params(0.05, 10.0, 16.0);
        let mut solver = Solver::new(spec, p).unwrap();
        solver.run(12_000).unwrap();
        let st = solver.state();
        let flux = |x: usize| -> f64 {
            (1..ny - 1)
                .map(|y| st.rho[x + nx * y] * st.ux[x + nx * y])
                .sum()
        };
        let fin = flux(0);
        let fout = flux(nx - 1);
        assert!(((fin - fout) / fin).abs() < 1e-3, "in {fin} out {fout}");
    }

    #[test]
    fn inlet_ramp_profile() {
        let p = params(0.04, 10.0, 10.0).with_inlet_ramp(100);
        assert_eq!(p.inlet_speed_at(0), 0.0);
        assert!((p.inlet_speed_at(50) - 0.02).abs() < 1e-15);
        assert_eq!(p.inlet_speed_at(100), 0.04);
        assert_eq!(p.inlet_speed_at(10_000), 0.04);
        let p = p.with_inlet_ramp(0);
        assert_eq!(p.inlet_speed_at(0), 0.04);
    }

    #[test]
    fn instability_is_reported() {
        let spec = smooth_channel(10, 8);
        let p = params(0.03, 10.0, 6.0);
        let mut st = LbmState::at_rest(&spec);
        *st.population_mut(1, 4, 3) = f64::NAN;
        st.refresh_moments(spec.mask());
        let err = collide_and_stream(&mut st, &spec, &p).unwrap_err();
        match err {
            LbmError::Unstable { t, max_abs_f, .. } => {
                assert_eq!(t, 1);
                assert!(max_abs_f.is_finite());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn snapshot_cadence() {
        let spec = smooth_channel(10, 8);
        let p = params(0.02, 10.0, 6.0);
        let snaps: Vec<_> = run_simulation(
            spec.clone(),
            p,
            Schedule {
                total_steps: 30,
                interval: 30,
            },
        )
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap();
        assert_eq!(snaps.iter().map(|s| s.t).collect::<Vec<_>>(), vec![0, 30]);
        let snaps: Vec<_> = run_simulation(
            spec,
            p,
            Schedule {
                total_steps: 25,
                interval: 10,
            },
        )
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap();
        assert_eq!(
            snaps.iter().map(|s| s.t).collect::<Vec<_>>(),
            vec![0, 10, 20, 25]
        );
        assert!(run_simulation(
            smooth_channel(10, 8),
            p,
            Schedule {
                total_steps: 5,
                interval: 0
            }
        )
        .is_err());
    }

    #[test]
    fn snapshot_fields() {
        let spec = smooth_channel(6, 5);
        let st = LbmState::at_rest(&spec);
        let snap = st.snapshot(spec.mask());
        assert!(snap.u[0].is_nan());
        let k = snap.index(2, 2);
        assert_eq!(snap.rho[k], 1.0);
        assert_eq!(snap.p[k], CS2);
        assert_eq!(snap.mask(), *spec.mask());
    }
}
