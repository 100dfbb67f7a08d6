//! Composite loss: data mismatch, momentum and continuity residuals,
//! boundary penalties and kinetic moment consistency.

use crate::autodiff::{loss_gradient_parts, map_jets, JetAdjoint, JetLayout, JetView};
use crate::lbm::{CX, CY, Q};

use super::{PinnError, PinnModel, MACRO_OUTPUTS, OUT_P, OUT_RHO, OUT_U, OUT_V, RHO_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub data: f64,
    pub physics: f64,
    pub cont: f64,
    pub bc: f64,
    pub moment: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            data: 1.0,
            physics: 0.8,
            cont: 0.6,
            bc: 1.2,
            moment: 0.8,
        }
    }
}

impl LossWeights {
    pub fn only_data() -> Self {
        Self {
            data: 1.0,
            physics: 0.0,
            cont: 0.0,
            bc: 0.0,
            moment: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.data, self.physics, self.cont, self.bc, self.moment]
    }

    pub fn validate(&self) -> Result<(), PinnError> {
        let w = self.as_array();
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(PinnError::Config(format!(
                "loss weights must be >= 0: {w:?}"
            )));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(PinnError::Config("all loss weights are zero".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, f: f64) -> Self {
        Self {
            data: self.data * f,
            physics: self.physics * f,
            cont: self.cont * f,
            bc: self.bc * f,
            moment: self.moment * f,
        }
    }
}

/// Unweighted terms plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub data: f64,
    pub mom: f64,
    pub cont: f64,
    pub bc: f64,
    pub moment: f64,
}

impl LossBreakdown {
    fn weigh(&mut self, w: &LossWeights) {
        self.total = w.data * self.data
            + w.physics * self.mom
            + w.cont * self.cont
            + w.bc * self.bc
            + w.moment * self.moment;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    Wall,
    Inlet,
    Outlet,
    Initial,
}

impl BoundaryKind {
    pub const ALL: [BoundaryKind; 4] = [
        BoundaryKind::Wall,
        BoundaryKind::Inlet,
        BoundaryKind::Outlet,
        BoundaryKind::Initial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundaryKind::Wall => "wall",
            BoundaryKind::Inlet => "inlet",
            BoundaryKind::Outlet => "outlet",
            BoundaryKind::Initial => "initial",
        }
    }

    pub fn parse(s: &str) -> Result<Self, PinnError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| PinnError::UnknownBoundaryKind(s.to_string()))
    }
}

/// Tilde outlet pressure; p̃ is measured from p₀.
pub const OUTLET_PRESSURE_TILDE: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub point: [f64; 3],
    pub kind: BoundaryKind,
    /// Tilde `[ũ, ṽ, p̃, ρ]` the initial condition must reproduce; unused by
    /// the other kinds.
    pub target: [f64; MACRO_OUTPUTS],
}

/// Tilde fields and their input derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldJet {
    pub u: f64,
    pub v: f64,
    pub p: f64,
    pub rho: f64,
    pub u_x: f64,
    pub u_y: f64,
    pub u_t: f64,
    pub u_xx: f64,
    pub u_yy: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub v_t: f64,
    pub v_xx: f64,
    pub v_yy: f64,
    pub p_x: f64,
    pub p_y: f64,
}

/// `[R_cont, R_x, R_y]` of the incompressible equations in tilde form.
pub fn residuals(j: &FieldJet, reynolds: f64) -> [f64; 3] {
    let inv_re = 1.0 / reynolds;
    let cont = j.u_x + j.v_y;
    let mx = j.u_t + j.u * j.u_x + j.v * j.u_y + j.p_x / j.rho - inv_re * (j.u_xx + j.u_yy);
    let my = j.v_t + j.u * j.v_x + j.v * j.v_y + j.p_y / j.rho - inv_re * (j.v_xx + j.v_yy);
    [cont, mx, my]
}

/// Pulls `g = ∂L/∂[R_cont, R_x, R_y]` back onto every jet component.
pub fn residual_adjoint(j: &FieldJet, reynolds: f64, g: [f64; 3]) -> FieldJet {
    let inv_re = 1.0 / reynolds;
    let [gc, gx, gy] = g;
    let inv_rho = 1.0 / j.rho;
    FieldJet {
        u: gx * j.u_x + gy * j.v_x,
        v: gx * j.u_y + gy * j.v_y,
        p: 0.0,
        rho: -(gx * j.p_x + gy * j.p_y) * inv_rho * inv_rho,
        u_x: gc + gx * j.u,
        u_y: gx * j.v,
        u_t: gx,
        u_xx: -gx * inv_re,
        u_yy: -gx * inv_re,
        v_x: gy * j.u,
        v_y: gc + gy * j.v,
        v_t: gy,
        v_xx: -gy * inv_re,
        v_yy: -gy * inv_re,
        p_x: gx * inv_rho,
        p_y: gy * inv_rho,
    }
}

/// Jet channel order for residual evaluation.
const CH_X: usize = 1;
const CH_Y: usize = 2;
const CH_T: usize = 3;
const CH_XX: usize = 4;
const CH_YY: usize = 5;

fn residual_layout(model: &PinnModel) -> JetLayout {
    JetLayout {
        first: vec![
            (0, model.input_gain(0)),
            (1, model.input_gain(1)),
            (2, model.input_gain(2)),
        ],
        second: 2,
    }
}

fn field_jet(model: &PinnModel, out: &JetView<'_>, p: usize) -> FieldJet {
    let m = &model.outputs;
    let val = |k: usize| m.denormalize(k, out.get(k, 0, p));
    let d = |k: usize, c: usize| m.scale[k] * out.get(k, c, p);
    FieldJet {
        u: val(OUT_U),
        v: val(OUT_V),
        p: val(OUT_P),
        rho: val(OUT_RHO),
        u_x: d(OUT_U, CH_X),
        u_y: d(OUT_U, CH_Y),
        u_t: d(OUT_U, CH_T),
        u_xx: d(OUT_U, CH_XX),
        u_yy: d(OUT_U, CH_YY),
        v_x: d(OUT_V, CH_X),
        v_y: d(OUT_V, CH_Y),
        v_t: d(OUT_V, CH_T),
        v_xx: d(OUT_V, CH_XX),
        v_yy: d(OUT_V, CH_YY),
        p_x: d(OUT_P, CH_X),
        p_y: d(OUT_P, CH_Y),
    }
}

fn push_field_adjoint(model: &PinnModel, adj: &mut JetAdjoint<'_>, p: usize, a: &FieldJet) {
    let s = &model.outputs.scale;
    let entries = [
        (OUT_U, 0, a.u),
        (OUT_U, CH_X, a.u_x),
        (OUT_U, CH_Y, a.u_y),
        (OUT_U, CH_T, a.u_t),
        (OUT_U, CH_XX, a.u_xx),
        (OUT_U, CH_YY, a.u_yy),
        (OUT_V, 0, a.v),
        (OUT_V, CH_X, a.v_x),
        (OUT_V, CH_Y, a.v_y),
        (OUT_V, CH_T, a.v_t),
        (OUT_V, CH_XX, a.v_xx),
        (OUT_V, CH_YY, a.v_yy),
        (OUT_P, 0, a.p),
        (OUT_P, CH_X, a.p_x),
        (OUT_P, CH_Y, a.p_y),
        (OUT_RHO, 0, a.rho),
    ];
    for (k, c, v) in entries {
        if v != 0.0 {
            adj.add(k, c, p, s[k] * v);
        }
    }
}

/// Kinetic moment defects `[ε₀, ε₁, ε₂]` in lattice units.
pub fn moment_defects(f: &[f64; Q], rho: f64, u_lattice: f64, v_lattice: f64) -> [f64; 3] {
    let mut m0 = 0.0;
    let mut mx = 0.0;
    let mut my = 0.0;
    for i in 0..Q {
        m0 += f[i];
        mx += CX[i] as f64 * f[i];
        my += CY[i] as f64 * f[i];
    }
    [m0 - rho, mx - rho * u_lattice, my - rho * v_lattice]
}

/// Point sets already encoded as network inputs.
#[derive(Debug, Clone, Default)]
pub struct Problem {
    pub data_inputs: Vec<f64>,
    /// Normalized targets of the macroscopic head.
    pub data_targets: Vec<[f64; MACRO_OUTPUTS]>,
    pub colloc_inputs: Vec<f64>,
    pub boundary_inputs: Vec<f64>,
    pub boundary_kinds: Vec<BoundaryKind>,
    /// Normalized targets (initial points only).
    pub boundary_targets: Vec<[f64; MACRO_OUTPUTS]>,
}

impl Problem {
    /// `data` pairs tilde points with tilde labels `[ũ, ṽ, p̃, ρ]`.
    pub fn new(
        model: &PinnModel,
        data: &[([f64; 3], [f64; MACRO_OUTPUTS])],
        interior: &[[f64; 3]],
        boundary: &[BoundaryPoint],
    ) -> Self {
        let pts: Vec<[f64; 3]> = data.iter().map(|d| d.0).collect();
        let norm = |q: &[f64; MACRO_OUTPUTS]| {
            let mut t = [0.0; MACRO_OUTPUTS];
            for k in 0..MACRO_OUTPUTS {
                t[k] = model.outputs.normalize(k, q[k]);
            }
            t
        };
        let bpts: Vec<[f64; 3]> = boundary.iter().map(|b| b.point).collect();
        Self {
            data_inputs: model.encode(&pts),
            data_targets: data.iter().map(|d| norm(&d.1)).collect(),
            colloc_inputs: model.encode(interior),
            boundary_inputs: model.encode(&bpts),
            boundary_kinds: boundary.iter().map(|b| b.kind).collect(),
            boundary_targets: boundary.iter().map(|b| norm(&b.target)).collect(),
        }
    }

    pub fn data_len(&self) -> usize {
        self.data_targets.len()
    }

    pub fn boundary_len(&self) -> usize {
        self.boundary_kinds.len()
    }

    pub fn colloc_len(&self, width: usize) -> usize {
        self.colloc_inputs.len() / width
    }

    /// Rows selected by index from each set.
    pub fn subset(
        &self,
        width: usize,
        data: &[usize],
        colloc: &[usize],
        boundary: &[usize],
    ) -> Self {
        let rows = |src: &[f64], idx: &[usize]| {
            let mut out = Vec::with_capacity(idx.len() * width);
            for &i in idx {
                out.extend_from_slice(&src[i * width..(i + 1) * width]);
            }
            out
        };
        Self {
            data_inputs: rows(&self.data_inputs, data),
            data_targets: data.iter().map(|&i| self.data_targets[i]).collect(),
            colloc_inputs: rows(&self.colloc_inputs, colloc),
            boundary_inputs: rows(&self.boundary_inputs, boundary),
            boundary_kinds: boundary.iter().map(|&i| self.boundary_kinds[i]).collect(),
            boundary_targets: boundary.iter().map(|&i| self.boundary_targets[i]).collect(),
        }
    }
}

#[derive(Default)]
struct ChunkTerms {
    a: f64,
    b: f64,
    c: f64,
    singular: Option<(usize, f64)>,
}

/// Loss terms and the parameter gradient of the weighted total.
pub fn evaluate(
    model: &PinnModel,
    problem: &Problem,
    weights: &LossWeights,
    chunk: usize,
) -> Result<(LossBreakdown, Vec<f64>), PinnError> {
    let params = &model.params;
    let act = model.activation();
    let m = &model.outputs;
    let mut out = LossBreakdown::default();
    let mut grad = vec![0.0; params.len()];
    let mut add = |g: Vec<f64>| {
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    };

    let nd = problem.data_len();
    if nd > 0 {
        let scale = weights.data / nd as f64;
        let (parts, g) = loss_gradient_parts(
            params,
            act,
            &JetLayout::value_only(),
            &problem.data_inputs,
            chunk,
            |s, jets, adj| {
                let mut sum = 0.0;
                for p in 0..jets.points() {
                    let t = &problem.data_targets[s + p];
                    for k in 0..MACRO_OUTPUTS {
                        let r = jets.get(k, 0, p) - t[k];
                        sum += r * r;
                        adj.add(k, 0, p, 2.0 * scale * r);
                    }
                }
                Ok(sum)
            },
        )?;
        out.data = parts.iter().sum::<f64>() / nd as f64;
        add(g);
    }

    let width = model.input_width();
    let nc = problem.colloc_len(width);
    if nc > 0 {
        let re = model.scales.reynolds;
        let inv_n = 1.0 / nc as f64;
        let kinetic = model.options.kinetic_head;
        let vel = model.scales.velocity;
        let (parts, g) = loss_gradient_parts(
            params,
            act,
            &residual_layout(model),
            &problem.colloc_inputs,
            chunk,
            |s, jets, adj| {
                let mut t = ChunkTerms::default();
                for p in 0..jets.points() {
                    let j = field_jet(model, &jets, p);
                    if !(j.rho > RHO_FLOOR) {
                        t.singular.get_or_insert((s + p, j.rho));
                        continue;
                    }
                    let [rc, rx, ry] = residuals(&j, re);
                    t.a += rx * rx + ry * ry;
                    t.b += rc * rc;
                    let g = [
                        2.0 * weights.cont * rc * inv_n,
                        2.0 * weights.physics * rx * inv_n,
                        2.0 * weights.physics * ry * inv_n,
                    ];
                    let mut a = residual_adjoint(&j, re, g);
                    if kinetic {
                        let mut f = [0.0; Q];
                        for (i, fi) in f.iter_mut().enumerate() {
                            *fi =
                                m.denormalize(MACRO_OUTPUTS + i, jets.get(MACRO_OUTPUTS + i, 0, p));
                        }
                        let e = moment_defects(&f, j.rho, j.u * vel, j.v * vel);
                        t.c += e[0] * e[0] + e[1] * e[1] + e[2] * e[2];
                        let w = 2.0 * weights.moment * inv_n;
                        for i in 0..Q {
                            let gf = w * (e[0] + e[1] * CX[i] as f64 + e[2] * CY[i] as f64);
                            adj.add(MACRO_OUTPUTS + i, 0, p, m.scale[MACRO_OUTPUTS + i] * gf);
                        }
                        a.rho -= w * (e[0] + e[1] * j.u * vel + e[2] * j.v * vel);
                        a.u -= w * e[1] * j.rho * vel;
                        a.v -= w * e[2] * j.rho * vel;
                    }
                    push_field_adjoint(model, adj, p, &a);
                }
                Ok(t)
            },
        )?;
        for t in &parts {
            if let Some((index, rho)) = t.singular {
                return Err(PinnError::SingularDensity { index, rho });
            }
        }
        out.mom = parts.iter().map(|t| t.a).sum::<f64>() * inv_n;
        out.cont = parts.iter().map(|t| t.b).sum::<f64>() * inv_n;
        out.moment = parts.iter().map(|t| t.c).sum::<f64>() * inv_n;
        add(g);
    }

    let nb = problem.boundary_len();
    if nb > 0 {
        let scale = weights.bc / nb as f64;
        let (parts, g) = loss_gradient_parts(
            params,
            act,
            &JetLayout::value_only(),
            &problem.boundary_inputs,
            chunk,
            |s, jets, adj| {
                let mut sum = 0.0;
                for p in 0..jets.points() {
                    let i = s + p;
                    let tilde = |k: usize| m.denormalize(k, jets.get(k, 0, p));
                    match problem.boundary_kinds[i] {
                        BoundaryKind::Wall | BoundaryKind::Inlet => {
                            let target_u = if problem.boundary_kinds[i] == BoundaryKind::Inlet {
                                1.0
                            } else {
                                0.0
                            };
                            let du = tilde(OUT_U) - target_u;
                            let dv = tilde(OUT_V);
                            sum += du * du + dv * dv;
                            adj.add(OUT_U, 0, p, 2.0 * scale * du * m.scale[OUT_U]);
                            adj.add(OUT_V, 0, p, 2.0 * scale * dv * m.scale[OUT_V]);
                        }
                        BoundaryKind::Outlet => {
                            let dp = tilde(OUT_P) - OUTLET_PRESSURE_TILDE;
                            sum += dp * dp;
                            adj.add(OUT_P, 0, p, 2.0 * scale * dp * m.scale[OUT_P]);
                        }
                        BoundaryKind::Initial => {
                            let t = &problem.boundary_targets[i];
                            for k in 0..MACRO_OUTPUTS {
                                let r = jets.get(k, 0, p) - t[k];
                                sum += r * r;
                                adj.add(k, 0, p, 2.0 * scale * r);
                            }
                        }
                    }
                }
                Ok(sum)
            },
        )?;
        out.bc = parts.iter().sum::<f64>() / nb as f64;
        add(g);
    }

    out.weigh(weights);
    if !out.total.is_finite() {
        return Err(PinnError::Autodiff(
            crate::autodiff::AutodiffError::NonFinite(format!("total loss {}", out.total)),
        ));
    }
    Ok((out, grad))
}

/// `[R_cont, R_x, R_y]` at tilde points.
pub fn pde_residuals(model: &PinnModel, points: &[[f64; 3]]) -> Result<Vec<[f64; 3]>, PinnError> {
    let inputs = model.encode(points);
    let re = model.scales.reynolds;
    let parts = map_jets(
        &model.params,
        model.activation(),
        &residual_layout(model),
        &inputs,
        crate::autodiff::DEFAULT_CHUNK,
        |s, jets| {
            let mut rows = Vec::with_capacity(jets.points());
            for p in 0..jets.points() {
                let j = field_jet(model, &jets, p);
                rows.push((s + p, j.rho, residuals(&j, re)));
            }
            Ok(rows)
        },
    )?;
    let mut out = Vec::with_capacity(points.len());
    for (index, rho, r) in parts.into_iter().flatten() {
        if !(rho > RHO_FLOOR) {
            return Err(PinnError::SingularDensity { index, rho });
        }
        out.push(r);
    }
    Ok(out)
}

/// Tilde velocity gradients `[u_x, u_y, v_x, v_y]` at tilde points.
pub fn velocity_gradients(
    model: &PinnModel,
    points: &[[f64; 3]],
) -> Result<Vec<[f64; 4]>, PinnError> {
    let inputs = model.encode(points);
    let layout = JetLayout {
        first: vec![(0, model.input_gain(0)), (1, model.input_gain(1))],
        second: 0,
    };
    let s = &model.outputs.scale;
    let parts = map_jets(
        &model.params,
        model.activation(),
        &layout,
        &inputs,
        crate::autodiff::DEFAULT_CHUNK,
        |_, jets| {
            Ok((0..jets.points())
                .map(|p| {
                    [
                        s[OUT_U] * jets.get(OUT_U, 1, p),
                        s[OUT_U] * jets.get(OUT_U, 2, p),
                        s[OUT_V] * jets.get(OUT_V, 1, p),
                        s[OUT_V] * jets.get(OUT_V, 2, p),
                    ]
                })
                .collect::<Vec<_>>())
        },
    )?;
    Ok(parts.concat())
}
