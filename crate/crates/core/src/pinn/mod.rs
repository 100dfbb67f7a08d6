//! Physics-informed network over (x̃, ỹ, t̃) with a macroscopic head
//! (ũ, ṽ, p̃, ρ̂) and an optional kinetic head (f̂₀ … f̂₈).
//!
//! Non-dimensional ("tilde") variables use the mean gap H and inlet speed U:
//! x̃ = x/H, t̃ = tU/H, ũ = u/U, p̃ = (p − p₀)/U². Density stays as ρ.

pub mod loss;
pub mod optim;
pub mod sampling;
pub mod train;

use thiserror::Error;

use crate::autodiff::{
    forward_batch, init_parameters, Activation, AutodiffError, NetworkSpec, ParameterSet,
};
use crate::grid::SolidMask;
use crate::lbm::{FieldSnapshot, Q, WEIGHTS};

pub use loss::{BoundaryKind, BoundaryPoint, LossBreakdown, LossWeights};
pub use sampling::{
    probe_points, sample_collocation, CollocationSet, LabeledDataset, SamplingConfig, Strategy,
};
pub use train::{train, HistoryRow, Phase, TrainConfig, TrainReport};

pub const OUT_U: usize = 0;
pub const OUT_V: usize = 1;
pub const OUT_P: usize = 2;
pub const OUT_RHO: usize = 3;
pub const MACRO_OUTPUTS: usize = 4;
/// Density below which the momentum residual is singular.
pub const RHO_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PinnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("singular density {rho:e} at point {index}")]
    SingularDensity { index: usize, rho: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("geometry too tight: {0}")]
    Geometry(String),
    #[error("unknown boundary kind `{0}`")]
    UnknownBoundaryKind(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("non-finite loss at {phase} iteration {iter}")]
    NonFinite {
        phase: &'static str,
        iter: usize,
        last_good: Box<ParameterSet>,
    },
}

/// Reference scales linking lattice and tilde variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scales {
    pub length: f64,
    pub velocity: f64,
    pub outlet_pressure: f64,
    pub reynolds: f64,
}

impl Scales {
    pub fn point_to_tilde(&self, x: f64, y: f64, t: f64) -> [f64; 3] {
        [
            x / self.length,
            y / self.length,
            t * self.velocity / self.length,
        ]
    }

    pub fn point_to_lattice(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0] * self.length,
            p[1] * self.length,
            p[2] * self.length / self.velocity,
        ]
    }

    /// Lattice `(ρ, u, v, p)` to tilde `[ũ, ṽ, p̃, ρ]`.
    pub fn fields_to_tilde(&self, rho: f64, u: f64, v: f64, p: f64) -> [f64; MACRO_OUTPUTS] {
        let u2 = self.velocity * self.velocity;
        [
            u / self.velocity,
            v / self.velocity,
            (p - self.outlet_pressure) / u2,
            rho,
        ]
    }

    /// Tilde `[ũ, ṽ, p̃, ρ]` back to lattice `(ρ, u, v, p)`.
    pub fn fields_to_lattice(&self, q: [f64; MACRO_OUTPUTS]) -> (f64, f64, f64, f64) {
        let u2 = self.velocity * self.velocity;
        (
            q[OUT_RHO],
            q[OUT_U] * self.velocity,
            q[OUT_V] * self.velocity,
            self.outlet_pressure + q[OUT_P] * u2,
        )
    }

    /// Factor turning a tilde velocity gradient into lattice units (1/step).
    pub fn gradient_to_lattice(&self) -> f64 {
        self.velocity / self.length
    }
}

/// Per-channel affine map: `normalized = (raw − shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl AffineMap {
    pub fn identity(n: usize) -> Self {
        Self {
            shift: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Maps `[lo, hi]` of each channel onto `[−1, 1]`; a degenerate range
    /// maps its single value to 0.
    pub fn from_ranges(ranges: &[(f64, f64)]) -> Self {
        let mut m = Self::identity(ranges.len());
        for (k, &(lo, hi)) in ranges.iter().enumerate() {
            m.shift[k] = 0.5 * (lo + hi);
            let h = 0.5 * (hi - lo);
            m.scale[k] = if h > 0.0 { h } else { 1.0 };
        }
        m
    }

    /// Mean and standard deviation per channel; a near-constant channel gets
    /// a scale of 1% of its magnitude (at least 0.01).
    pub fn from_samples(rows: &[[f64; MACRO_OUTPUTS]]) -> Self {
        let mut m = Self::identity(MACRO_OUTPUTS);
        if rows.is_empty() {
            return m;
        }
        let n = rows.len() as f64;
        for k in 0..MACRO_OUTPUTS {
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            m.shift[k] = mean;
            m.scale[k] = if sd > 1e-12 * mean.abs().max(1.0) {
                sd
            } else {
                1e-2 * mean.abs().max(1.0)
            };
        }
        m
    }

    pub fn len(&self) -> usize {
        self.shift.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shift.is_empty()
    }

    #[inline]
    pub fn normalize(&self, k: usize, raw: f64) -> f64 {
        (raw - self.shift[k]) / self.scale[k]
    }

    #[inline]
    pub fn denormalize(&self, k: usize, v: f64) -> f64 {
        self.shift[k] + self.scale[k] * v
    }
}

/// Ranges used to normalize the optional descriptor inputs: the roughness
/// amplitudes, fractal dimensions and Reynolds numbers the model family
/// covers.
pub const AMPLITUDE_RANGE: (f64, f64) = (5.0, 20.0);
pub const DIMENSION_RANGE: (f64, f64) = (1.3, 1.7);
pub const REYNOLDS_RANGE: (f64, f64) = (10.0, 45.0);

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModelOptions {
    pub kinetic_head: bool,
    /// `(A_s, D)` fed as two extra constant inputs.
    pub geometry: Option<(f64, f64)>,
    /// Feed Re as an extra constant input.
    pub reynolds_input: bool,
}

impl ModelOptions {
    pub fn extra_inputs(&self, reynolds: f64) -> Vec<f64> {
        let mut v = Vec::new();
        if let Some((a, d)) = self.geometry {
            v.push(a);
            v.push(d);
        }
        if self.reynolds_input {
            v.push(reynolds);
        }
        v
    }

    fn extra_ranges(&self) -> Vec<(f64, f64)> {
        let mut v = Vec::new();
        if self.geometry.is_some() {
            v.push(AMPLITUDE_RANGE);
            v.push(DIMENSION_RANGE);
        }
        if self.reynolds_input {
            v.push(REYNOLDS_RANGE);
        }
        v
    }

    pub fn output_width(&self) -> usize {
        MACRO_OUTPUTS + if self.kinetic_head { Q } else { 0 }
    }
}

/// Bounds of the training domain in tilde units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TildeBox {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub t: (f64, f64),
}

impl TildeBox {
    /// Whole lattice over the lattice-time window `[t0, t1]`.
    pub fn lattice(nx: usize, ny: usize, t0: f64, t1: f64, scales: &Scales) -> Self {
        let lo = scales.point_to_tilde(0.0, 0.0, t0);
        let hi = scales.point_to_tilde((nx - 1) as f64, (ny - 1) as f64, t1);
        Self {
            x: (lo[0], hi[0]),
            y: (lo[1], hi[1]),
            t: (lo[2], hi[2]),
        }
    }
}

/// Shape of the network behind a model; input and output widths follow from
/// the model options.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub init_seed: u64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden_layers: 8,
            hidden_width: 128,
            activation: Activation::Tanh,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinnModel {
    pub network: NetworkSpec,
    pub params: ParameterSet,
    /// Tilde coordinates (plus descriptors) to network inputs.
    pub inputs: AffineMap,
    /// Network outputs to tilde fields (macroscopic) and lattice
    /// populations (kinetic).
    pub outputs: AffineMap,
    pub scales: Scales,
    pub options: ModelOptions,
}

impl PinnModel {
    /// Glorot-initialized model. `output_stats` normalizes the macroscopic
    /// head, usually [`AffineMap::from_samples`] over the training labels.
    pub fn new(
        arch: Architecture,
        options: ModelOptions,
        scales: Scales,
        domain: TildeBox,
        output_stats: AffineMap,
    ) -> Result<Self, PinnError> {
        if output_stats.len() != MACRO_OUTPUTS {
            return Err(PinnError::Config(format!(
                "output normalization has {} channels, expected {MACRO_OUTPUTS}",
                output_stats.len()
            )));
        }
        let mut ranges = vec![domain.x, domain.y, domain.t];
        ranges.extend(options.extra_ranges());
        let inputs = AffineMap::from_ranges(&ranges);
        let mut outputs = output_stats;
        if options.kinetic_head {
            for w in WEIGHTS {
                outputs.shift.push(w);
                outputs.scale.push(0.1 * w);
            }
        }
        let network = NetworkSpec {
            input_width: inputs.len(),
            hidden_layers: arch.hidden_layers,
            hidden_width: arch.hidden_width,
            output_width: options.output_width(),
            activation: arch.activation,
            init_seed: arch.init_seed,
        };
        let params = init_parameters(&network)?;
        Ok(Self {
            network,
            params,
            inputs,
            outputs,
            scales,
            options,
        })
    }

    pub fn activation(&self) -> Activation {
        self.network.activation
    }

    pub fn input_width(&self) -> usize {
        self.inputs.len()
    }

    pub fn output_width(&self) -> usize {
        self.outputs.len()
    }

    /// Network input vectors for tilde points, row-major.
    pub fn encode(&self, points: &[[f64; 3]]) -> Vec<f64> {
        let extra = self.options.extra_inputs(self.scales.reynolds);
        let w = self.input_width();
        let mut out = Vec::with_capacity(points.len() * w);
        for p in points {
            for (k, v) in p.iter().chain(extra.iter()).enumerate() {
                out.push(self.inputs.normalize(k, *v));
            }
        }
        out
    }

    /// Chain-rule factor d(normalized input k)/d(tilde coordinate k).
    pub fn input_gain(&self, k: usize) -> f64 {
        1.0 / self.inputs.scale[k]
    }

    /// Macroscopic fields `[ũ, ṽ, p̃, ρ]` at tilde points.
    pub fn predict_tilde(
        &self,
        points: &[[f64; 3]],
    ) -> Result<Vec<[f64; MACRO_OUTPUTS]>, PinnError> {
        let raw = forward_batch(&self.params, self.activation(), &self.encode(points))?;
        let w = self.output_width();
        Ok(raw
            .chunks(w)
            .map(|o| {
                let mut q = [0.0; MACRO_OUTPUTS];
                for k in 0..MACRO_OUTPUTS {
                    q[k] = self.outputs.denormalize(k, o[k]);
                }
                q
            })
            .collect())
    }
}

/// Evaluates the macroscopic head at every fluid node of `mask` at lattice
/// time `t`; solid nodes hold NaN.
pub fn predict_fields(
    model: &PinnModel,
    mask: &SolidMask,
    t: u64,
) -> Result<FieldSnapshot, PinnError> {
    let (nx, ny) = (mask.nx(), mask.ny());
    let mut nodes = Vec::new();
    let mut points = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if !mask.is_solid(i, j) {
                nodes.push(i + nx * j);
                points.push(model.scales.point_to_tilde(i as f64, j as f64, t as f64));
            }
        }
    }
    let q = model.predict_tilde(&points)?;
    let mut snap = FieldSnapshot::solid(nx, ny, t);
    for (k, fields) in nodes.into_iter().zip(q) {
        let (rho, u, v, p) = model.scales.fields_to_lattice(fields);
        snap.rho[k] = rho;
        snap.u[k] = u;
        snap.v[k] = v;
        snap.p[k] = p;
    }
    Ok(snap)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn scales() -> Scales {
        Scales {
            length: 40.0,
            velocity: 0.03,
            outlet_pressure: 1.0 / 3.0,
            reynolds: 10.0,
        }
    }

    #[test]
    fn tilde_round_trip() {
        let s = scales();
        let q = s.fields_to_tilde(1.01, 0.02, -0.001, 0.34);
        let (rho, u, v, p) = s.fields_to_lattice(q);
        assert!((rho - 1.01).abs() < 1e-15);
        assert!((u - 0.02).abs() < 1e-15);
        assert!((v + 0.001).abs() < 1e-15);
        assert!((p - 0.34).abs() < 1e-15);
        let pt = s.point_to_tilde(80.0, 20.0, 4000.0);
        assert_eq!(pt, [2.0, 0.5, 3.0]);
        let back = s.point_to_lattice(pt);
        assert!((back[2] - 4000.0).abs() < 1e-9);
    }

    #[test]
    fn input_normalization_spans_unit_box() {
        let s = scales();
        let dom = TildeBox::lattice(200, 50, 1000.0, 2000.0, &s);
        let m = PinnModel::new(
            Architecture {
                hidden_layers: 1,
                hidden_width: 4,
                ..Default::default()
            },
            ModelOptions {
                geometry: Some((5.0, 1.5)),
                reynolds_input: true,
                ..Default::default()
            },
            s,
            dom,
            AffineMap::identity(4),
        )
        .unwrap();
        let lo = s.point_to_tilde(0.0, 0.0, 1000.0);
        let hi = s.point_to_tilde(199.0, 49.0, 2000.0);
        let enc = m.encode(&[lo, hi]);
        assert_eq!(m.input_width(), 6);
        for k in 0..3 {
            assert!((enc[k] + 1.0).abs() < 1e-12);
            assert!((enc[6 + k] - 1.0).abs() < 1e-12);
        }
        assert!((enc[3] + 1.0).abs() < 1e-12); // A_s = 5 at the low end
        assert!(enc[4].abs() < 1e-12); // D = 1.5 mid-range
        assert!((enc[5] + 1.0).abs() < 1e-12); // Re = 10
    }

    #[test]
    fn zero_network_predicts_denormalized_zero() {
        let s = scales();
        let stats = AffineMap {
            shift: vec![0.7, 0.01, 2.0, 1.0001],
            scale: vec![0.3, 0.05, 1.5, 1e-4],
        };
        let mut m = PinnModel::new(
            Architecture {
                hidden_layers: 2,
                hidden_width: 8,
                ..Default::default()
            },
            ModelOptions::default(),
            s,
            TildeBox::lattice(20, 10, 0.0, 100.0, &s),
            stats,
        )
        .unwrap();
        m.params.as_mut_slice().fill(0.0);
        let mask = SolidMask::smooth_channel(20, 10);
        let a = predict_fields(&m, &mask, 50).unwrap();
        let b = predict_fields(&m, &mask, 50).unwrap();
        assert!(a.bit_eq(&b));
        let k = a.index(5, 5);
        assert_eq!(a.rho[k], 1.0001);
        assert!((a.u[k] - 0.7 * 0.03).abs() < 1e-15);
        assert!((a.v[k] - 0.01 * 0.03).abs() < 1e-15);
        assert!((a.p[k] - (1.0 / 3.0 + 2.0 * 0.03 * 0.03)).abs() < 1e-15);
        assert!(a.u[a.index(5, 0)].is_nan());
        assert!(a.u.iter().filter(|v| !v.is_nan()).all(|v| *v == a.u[k]));
    }

    #[test]
    fn fresh_model_is_deterministic() {
        let s = scales();
        let mk = || {
            PinnModel::new(
                Architecture {
                    hidden_layers: 2,
                    hidden_width: 8,
                    init_seed: 3,
                    ..Default::default()
                },
                ModelOptions::default(),
                s,
                TildeBox::lattice(20, 10, 0.0, 100.0, &s),
                AffineMap::identity(4),
            )
            .unwrap()
        };
        let mask = SolidMask::smooth_channel(20, 10);
        let a = predict_fields(&mk(), &mask, 10).unwrap();
        let b = predict_fields(&mk(), &mask, 10).unwrap();
        assert!(a.bit_eq(&b));
    }
}
