//! Error metrics and flow diagnostics comparing predicted and reference
//! fields. Solid (NaN) entries are excluded pairwise everywhere.

use thiserror::Error;

use crate::grid::SolidMask;
use crate::lbm::FieldSnapshot;
use crate::pinn::loss::velocity_gradients;
use crate::pinn::{PinnError, PinnModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("no comparable (non-NaN) entries")]
    Empty,
    #[error("undefined metric: {0}")]
    Undefined(&'static str),
    #[error("grid mismatch: {0}x{1} vs {2}x{3}")]
    Shape(usize, usize, usize, usize),
    #[error("{0}")]
    Range(String),
    #[error(transparent)]
    Model(#[from] PinnError),
}

fn pairs<'a>(y: &'a [f64], r: &'a [f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    if y.len() != r.len() {
        return Err(MetricsError::Length(y.len(), r.len()));
    }
    let v: Vec<(f64, f64)> = y
        .iter()
        .zip(r)
        .filter(|(a, b)| !a.is_nan() && !b.is_nan())
        .map(|(a, b)| (*a, *b))
        .collect();
    if v.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(v)
}

pub fn mae(y: &[f64], y_ref: &[f64]) -> Result<f64, MetricsError> {
    let p = pairs(y, y_ref)?;
    Ok(p.iter().map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64)
}

pub fn rmse(y: &[f64], y_ref: &[f64]) -> Result<f64, MetricsError> {
    let p = pairs(y, y_ref)?;
    Ok((p.iter().map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64).sqrt())
}

pub fn rel_l2(y: &[f64], y_ref: &[f64]) -> Result<f64, MetricsError> {
    let p = pairs(y, y_ref)?;
    let den: f64 = p.iter().map(|(_, b)| b * b).sum();
    if den == 0.0 {
        return Err(MetricsError::Undefined("relL2 of a zero-norm reference"));
    }
    let num: f64 = p.iter().map(|(a, b)| (a - b).powi(2)).sum();
    Ok((num / den).sqrt())
}

pub fn r2(y: &[f64], y_ref: &[f64]) -> Result<f64, MetricsError> {
    let p = pairs(y, y_ref)?;
    let mean = p.iter().map(|(_, b)| b).sum::<f64>() / p.len() as f64;
    let ss_tot: f64 = p.iter().map(|(_, b)| (b - mean).powi(2)).sum();
    if p.iter().all(|(_, b)| *b == p[0].1) {
        return Err(MetricsError::Undefined("R² of a constant reference"));
    }
    let ss_res: f64 = p.iter().map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Pearson correlation coefficient.
pub fn pearson(y: &[f64], y_ref: &[f64]) -> Result<f64, MetricsError> {
    let p = pairs(y, y_ref)?;
    let n = p.len() as f64;
    let my = p.iter().map(|(a, _)| a).sum::<f64>() / n;
    let mr = p.iter().map(|(_, b)| b).sum::<f64>() / n;
    let mut syy = 0.0;
    let mut srr = 0.0;
    let mut syr = 0.0;
    for (a, b) in &p {
        syy += (a - my).powi(2);
        srr += (b - mr).powi(2);
        syr += (a - my) * (b - mr);
    }
    if p.iter().all(|(a, _)| *a == p[0].0) || p.iter().all(|(_, b)| *b == p[0].1) {
        return Err(MetricsError::Undefined(
            "correlation with a constant series",
        ));
    }
    Ok(syr / (syy * srr).sqrt())
}

/// Columns at each streamwise edge whose finite-difference stencils reach
/// the inlet or outlet column. A uniform inlet meeting a no-slip wall gives a
/// corner vorticity of order U/Δx there whatever the roughness.
pub const OPEN_EDGE_MARGIN: usize = 3;

/// Scalar field on the lattice, NaN on solid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i + self.nx * j]
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| a * v).collect(),
            ..self.clone()
        }
    }

    /// Largest finite magnitude.
    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .filter(|v| !v.is_nan())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest finite magnitude at least `margin` columns away from both
    /// streamwise edges.
    pub fn max_abs_interior(&self, margin: usize) -> f64 {
        let mut m: f64 = 0.0;
        for j in 0..self.ny {
            for i in margin..self.nx.saturating_sub(margin) {
                let v = self.get(i, j);
                if !v.is_nan() {
                    m = m.max(v.abs());
                }
            }
        }
        m
    }

    pub fn mean_abs(&self) -> f64 {
        let (s, n) = self
            .data
            .iter()
            .filter(|v| !v.is_nan())
            .fold((0.0, 0usize), |(s, n), v| (s + v.abs(), n + 1));
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }
}

/// Derivative along one axis at node `(i, j)` of a field with NaN at solid
/// nodes: central where both neighbours are fluid, second-order one-sided
/// next to a solid or the lattice edge, first-order with a single neighbour.
fn derivative(nx: usize, ny: usize, f: &[f64], i: usize, j: usize, along_x: bool) -> f64 {
    let at = |k: i64| -> Option<f64> {
        let (a, b) = if along_x {
            (i as i64 + k, j as i64)
        } else {
            (i as i64, j as i64 + k)
        };
        if a < 0 || b < 0 || a >= nx as i64 || b >= ny as i64 {
            return None;
        }
        let v = f[a as usize + nx * b as usize];
        (!v.is_nan()).then_some(v)
    };
    let f0 = f[i + nx * j];
    match (at(-1), at(1)) {
        (Some(m), Some(p)) => 0.5 * (p - m),
        (None, Some(p)) => match at(2) {
            Some(p2) => 0.5 * (-3.0 * f0 + 4.0 * p - p2),
            None => p - f0,
        },
        (Some(m), None) => match at(-2) {
            Some(m2) => 0.5 * (3.0 * f0 - 4.0 * m + m2),
            None => f0 - m,
        },
        (None, None) => 0.0,
    }
}

fn map_fluid(s: &FieldSnapshot, f: impl Fn(usize, usize) -> f64) -> ScalarField {
    let mut data = vec![f64::NAN; s.nx * s.ny];
    for j in 0..s.ny {
        for i in 0..s.nx {
            if !s.u[i + s.nx * j].is_nan() {
                data[i + s.nx * j] = f(i, j);
            }
        }
    }
    ScalarField {
        nx: s.nx,
        ny: s.ny,
        data,
    }
}

/// ω = ∂v/∂x − ∂u/∂y by finite differences (lattice units).
pub fn vorticity(s: &FieldSnapshot) -> ScalarField {
    map_fluid(s, |i, j| {
        derivative(s.nx, s.ny, &s.v, i, j, true) - derivative(s.nx, s.ny, &s.u, i, j, false)
    })
}

/// ∂u/∂x + ∂v/∂y by finite differences (lattice units).
pub fn continuity_field(s: &FieldSnapshot) -> ScalarField {
    map_fluid(s, |i, j| {
        derivative(s.nx, s.ny, &s.u, i, j, true) + derivative(s.nx, s.ny, &s.v, i, j, false)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    pub mean_abs: f64,
    pub max_abs: f64,
}

pub fn continuity_residual(s: &FieldSnapshot) -> (ScalarField, ResidualStats) {
    let f = continuity_field(s);
    let stats = ResidualStats {
        mean_abs: f.mean_abs(),
        max_abs: f.max_abs(),
    };
    (f, stats)
}

fn model_gradient_field(
    model: &PinnModel,
    mask: &SolidMask,
    t: u64,
    combine: impl Fn([f64; 4]) -> f64,
) -> Result<ScalarField, MetricsError> {
    let (nx, ny) = (mask.nx(), mask.ny());
    let mut nodes = Vec::new();
    let mut pts = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if !mask.is_solid(i, j) {
                nodes.push(i + nx * j);
                pts.push(model.scales.point_to_tilde(i as f64, j as f64, t as f64));
            }
        }
    }
    let grads = velocity_gradients(model, &pts)?;
    let k = model.scales.gradient_to_lattice();
    let mut data = vec![f64::NAN; nx * ny];
    for (n, g) in nodes.into_iter().zip(grads) {
        data[n] = k * combine(g);
    }
    Ok(ScalarField { nx, ny, data })
}

/// Vorticity of a trained model from exact input derivatives (lattice units).
pub fn model_vorticity(
    model: &PinnModel,
    mask: &SolidMask,
    t: u64,
) -> Result<ScalarField, MetricsError> {
    model_gradient_field(model, mask, t, |g| g[2] - g[1])
}

/// Divergence of a trained model's velocity from exact input derivatives.
pub fn model_continuity(
    model: &PinnModel,
    mask: &SolidMask,
    t: u64,
) -> Result<ScalarField, MetricsError> {
    model_gradient_field(model, mask, t, |g| g[0] + g[3])
}

fn check_shape(a: (usize, usize), b: (usize, usize)) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::Shape(a.0, a.1, b.0, b.1));
    }
    Ok(())
}

/// Σω² over nodes fluid in both fields (unit cell area).
fn enstrophy_pair(pred: &ScalarField, reference: &ScalarField) -> Result<(f64, f64), MetricsError> {
    check_shape((pred.nx, pred.ny), (reference.nx, reference.ny))?;
    let p = pairs(&pred.data, &reference.data)?;
    Ok(p.iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x * x, b + y * y)))
}

/// |∫ω_pred² − ∫ω_ref²| / ∫ω_ref².
pub fn enstrophy_deviation(
    pred: &ScalarField,
    reference: &ScalarField,
) -> Result<f64, MetricsError> {
    let (ep, er) = enstrophy_pair(pred, reference)?;
    if er == 0.0 {
        return Err(MetricsError::Undefined("zero reference enstrophy"));
    }
    Ok((ep - er).abs() / er)
}

/// Relative deviation of Σρu² over nodes fluid in both snapshots.
pub fn momentum_flux_deviation(
    pred: &FieldSnapshot,
    reference: &FieldSnapshot,
) -> Result<f64, MetricsError> {
    check_shape(pred.shape(), reference.shape())?;
    let mut fp = 0.0;
    let mut fr = 0.0;
    let mut any = false;
    for k in 0..pred.rho.len() {
        let (a, b) = (
            pred.rho[k] * pred.u[k] * pred.u[k],
            reference.rho[k] * reference.u[k] * reference.u[k],
        );
        if a.is_nan() || b.is_nan() {
            continue;
        }
        any = true;
        fp += a;
        fr += b;
    }
    if !any {
        return Err(MetricsError::Empty);
    }
    if fr == 0.0 {
        return Err(MetricsError::Undefined("zero reference momentum flux"));
    }
    Ok((fp - fr).abs() / fr)
}

/// Magnitude floor for vorticity extrema (lu/lu).
pub const EXTREMA_FLOOR: f64 = 6e-3;

fn is_local_max_abs(f: &ScalarField, i: usize, j: usize) -> bool {
    let c = f.get(i, j).abs();
    for dj in -1i64..=1 {
        for di in -1i64..=1 {
            if di == 0 && dj == 0 {
                continue;
            }
            let (a, b) = (i as i64 + di, j as i64 + dj);
            if a < 0 || b < 0 || a >= f.nx as i64 || b >= f.ny as i64 {
                continue;
            }
            let v = f.get(a as usize, b as usize);
            if !v.is_nan() && v.abs() > c {
                return false;
            }
        }
    }
    true
}

/// Local maxima of |ω_ref| above `floor`.
pub fn vorticity_extrema(reference: &ScalarField, floor: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for j in 0..reference.ny {
        for i in 0..reference.nx {
            let v = reference.get(i, j);
            if !v.is_nan() && v.abs() > floor && is_local_max_abs(reference, i, j) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Fraction of reference extrema (local maxima of |ω| above `floor`) for
/// which the prediction has a local |ω| maximum within the surrounding 3×3
/// block whose value is within `tolerance` (relative) of the reference.
pub fn extrema_match_rate(
    pred: &ScalarField,
    reference: &ScalarField,
    tolerance: f64,
    floor: f64,
) -> Result<f64, MetricsError> {
    check_shape((pred.nx, pred.ny), (reference.nx, reference.ny))?;
    if !(tolerance > 0.0) {
        return Err(MetricsError::Range(format!(
            "tolerance {tolerance} must be > 0"
        )));
    }
    let ext = vorticity_extrema(reference, floor);
    if ext.is_empty() {
        return Err(MetricsError::Undefined(
            "no reference vorticity extrema above the floor",
        ));
    }
    let mut matched = 0;
    for &(i, j) in &ext {
        let r = reference.get(i, j);
        let mut hit = false;
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                let (a, b) = (i as i64 + di, j as i64 + dj);
                if a < 0 || b < 0 || a >= pred.nx as i64 || b >= pred.ny as i64 {
                    continue;
                }
                let (a, b) = (a as usize, b as usize);
                let p = pred.get(a, b);
                if !p.is_nan()
                    && is_local_max_abs(pred, a, b)
                    && (p - r).abs() <= tolerance * r.abs()
                {
                    hit = true;
                }
            }
        }
        matched += hit as usize;
    }
    Ok(matched as f64 / ext.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Column at fixed x.
    X,
    /// Row at fixed y.
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Rho,
    U,
    V,
    P,
}

impl Field {
    fn of(self, s: &FieldSnapshot) -> &[f64] {
        match self {
            Field::Rho => &s.rho,
            Field::U => &s.u,
            Field::V => &s.v,
            Field::P => &s.p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    /// Lattice coordinate along the profile.
    pub coords: Vec<f64>,
    pub values: Vec<f64>,
}

/// Column (`Axis::X`) or row (`Axis::Y`) of a field, solid nodes omitted.
pub fn extract_profile(
    s: &FieldSnapshot,
    field: Field,
    axis: Axis,
    position: usize,
) -> Result<Profile, MetricsError> {
    let (limit, len) = match axis {
        Axis::X => (s.nx, s.ny),
        Axis::Y => (s.ny, s.nx),
    };
    if position >= limit {
        return Err(MetricsError::Range(format!(
            "profile position {position} outside 0..{limit}"
        )));
    }
    let data = field.of(s);
    let mut out = Profile {
        coords: Vec::new(),
        values: Vec::new(),
    };
    for k in 0..len {
        let n = match axis {
            Axis::X => position + s.nx * k,
            Axis::Y => k + s.nx * position,
        };
        if !data[n].is_nan() {
            out.coords.push(k as f64);
            out.values.push(data[n]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VorticitySource {
    FiniteDifference,
    Autodiff,
}

impl VorticitySource {
    pub fn name(self) -> &'static str {
        match self {
            VorticitySource::FiniteDifference => "finite_difference",
            VorticitySource::Autodiff => "autodiff",
        }
    }
}

/// Each entry is `None` when the metric is undefined for the data.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldMetrics {
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub rel_l2: Option<f64>,
    pub r2: Option<f64>,
    pub pearson: Option<f64>,
}

impl FieldMetrics {
    pub fn compute(y: &[f64], y_ref: &[f64]) -> Result<Self, MetricsError> {
        let ok = |r: Result<f64, MetricsError>| match r {
            Ok(v) => Ok(Some(v)),
            Err(MetricsError::Undefined(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Self {
            mae: ok(mae(y, y_ref))?,
            rmse: ok(rmse(y, y_ref))?,
            rel_l2: ok(rel_l2(y, y_ref))?,
            r2: ok(r2(y, y_ref))?,
            pearson: ok(pearson(y, y_ref))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub u: FieldMetrics,
    pub v: FieldMetrics,
    pub p: FieldMetrics,
    pub omega: FieldMetrics,
    pub continuity: ResidualStats,
    pub momentum_flux_deviation: Option<f64>,
    pub enstrophy_deviation: Option<f64>,
    pub extrema_match_rate: Option<f64>,
    pub max_abs_omega_pred: f64,
    pub max_abs_omega_ref: f64,
    /// Reference peak away from the open edges; see [`OPEN_EDGE_MARGIN`].
    pub max_abs_omega_ref_interior: f64,
    pub vorticity_source: VorticitySource,
}

/// Inputs for [`MetricsReport::compare`] beyond the two snapshots.
#[derive(Debug, Clone, Default)]
pub struct DerivedFields {
    /// Exact vorticity and divergence of a model; finite differences of the
    /// predicted snapshot otherwise.
    pub omega: Option<ScalarField>,
    pub continuity: Option<ScalarField>,
}

pub const EXTREMA_TOLERANCE: f64 = 0.15;

impl MetricsReport {
    pub fn compare(
        pred: &FieldSnapshot,
        reference: &FieldSnapshot,
        derived: DerivedFields,
    ) -> Result<Self, MetricsError> {
        check_shape(pred.shape(), reference.shape())?;
        let ref_omega = vorticity(reference);
        let (pred_omega, source) = match derived.omega {
            Some(w) => (w, VorticitySource::Autodiff),
            None => (vorticity(pred), VorticitySource::FiniteDifference),
        };
        check_shape((pred_omega.nx, pred_omega.ny), pred.shape())?;
        let cont = derived.continuity.unwrap_or_else(|| continuity_field(pred));
        let soft = |r: Result<f64, MetricsError>| match r {
            Ok(v) => Ok(Some(v)),
            Err(MetricsError::Undefined(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Self {
            u: FieldMetrics::compute(&pred.u, &reference.u)?,
            v: FieldMetrics::compute(&pred.v, &reference.v)?,
            p: FieldMetrics::compute(&pred.p, &reference.p)?,
            omega: FieldMetrics::compute(&pred_omega.data, &ref_omega.data)?,
            continuity: ResidualStats {
                mean_abs: cont.mean_abs(),
                max_abs: cont.max_abs(),
            },
            momentum_flux_deviation: soft(momentum_flux_deviation(pred, reference))?,
            enstrophy_deviation: soft(enstrophy_deviation(&pred_omega, &ref_omega))?,
            extrema_match_rate: soft(extrema_match_rate(
                &pred_omega,
                &ref_omega,
                EXTREMA_TOLERANCE,
                EXTREMA_FLOOR,
            ))?,
            max_abs_omega_pred: pred_omega.max_abs(),
            max_abs_omega_ref: ref_omega.max_abs(),
            max_abs_omega_ref_interior: ref_omega.max_abs_interior(OPEN_EDGE_MARGIN),
            vorticity_source: source,
        })
    }

    /// `(field, metric, value)` rows; undefined metrics read `undefined`.
    pub fn rows(&self) -> Vec<(String, String, String)> {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:e}"));
        let mut rows = Vec::new();
        for (name, m) in [
            ("u", &self.u),
            ("v", &self.v),
            ("p", &self.p),
            ("omega", &self.omega),
        ] {
            for (metric, v) in [
                ("mae", m.mae),
                ("rmse", m.rmse),
                ("rel_l2", m.rel_l2),
                ("r2", m.r2),
                ("pearson", m.pearson),
            ] {
                rows.push((name.to_string(), metric.to_string(), fmt(v)));
            }
        }
        let mut push = |f: &str, m: &str, v: String| rows.push((f.to_string(), m.to_string(), v));
        push("omega", "max_abs_pred", fmt(Some(self.max_abs_omega_pred)));
        push("omega", "max_abs_ref", fmt(Some(self.max_abs_omega_ref)));
        push(
            "omega",
            "max_abs_ref_interior",
            fmt(Some(self.max_abs_omega_ref_interior)),
        );
        push("omega", "extrema_match_rate", fmt(self.extrema_match_rate));
        push("omega", "source", self.vorticity_source.name().to_string());
        push(
            "continuity",
            "mean_abs",
            fmt(Some(self.continuity.mean_abs)),
        );
        push("continuity", "max_abs", fmt(Some(self.continuity.max_abs)));
        push(
            "global",
            "momentum_flux_deviation",
            fmt(self.momentum_flux_deviation),
        );
        push(
            "global",
            "enstrophy_deviation",
            fmt(self.enstrophy_deviation),
        );
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("field,metric,value\n");
        for (f, m, v) in self.rows() {
            s.push_str(&format!("{f},{m},{v}\n"));
        }
        s
    }
}
