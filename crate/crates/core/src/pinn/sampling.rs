//! Collocation sampling and labeled datasets drawn from simulator snapshots.

use rand_chacha::ChaCha20Rng;

use crate::grid::SolidMask;
use crate::lbm::FieldSnapshot;
use crate::rng::{shuffle, stream, stream_rng, uniform, unit};

use super::loss::{BoundaryKind, BoundaryPoint};
use super::{AffineMap, PinnError, Scales, MACRO_OUTPUTS};

/// Minimum distance (lattice units) between any collocation point and a
/// solid node.
pub const SOLID_CLEARANCE: f64 = 1.0;
/// Rejection sampling gives up after this many candidates per accepted point.
pub const MAX_ATTEMPTS_PER_POINT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Uniform,
    NearWallEnriched,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::NearWallEnriched => "near_wall_enriched",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Strategy::Uniform, Strategy::NearWallEnriched]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    pub strategy: Strategy,
    /// Interior plus band points.
    pub n_points: usize,
    /// Share of `n_points` kept away from the wall bands (enriched only).
    pub interior_fraction: f64,
    /// Band width as a fraction of the mean gap H.
    pub band_width: f64,
    pub n_wall: usize,
    pub n_inlet: usize,
    pub n_outlet: usize,
    pub n_initial: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::NearWallEnriched,
            n_points: 3072,
            interior_fraction: 0.6,
            band_width: 0.2,
            n_wall: 256,
            n_inlet: 64,
            n_outlet: 64,
            n_initial: 128,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), PinnError> {
        if self.n_points == 0 {
            return Err(PinnError::Config("collocation count must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.interior_fraction) {
            return Err(PinnError::Config(format!(
                "interior fraction {} outside [0, 1]",
                self.interior_fraction
            )));
        }
        if !(self.band_width > 0.0 && self.band_width < 0.5) {
            return Err(PinnError::Config(format!(
                "band width {} outside (0, 0.5)",
                self.band_width
            )));
        }
        Ok(())
    }

    /// `(interior, band)` counts; the interior share is rounded half-up.
    pub fn split(&self) -> (usize, usize) {
        match self.strategy {
            Strategy::Uniform => (self.n_points, 0),
            Strategy::NearWallEnriched => {
                let interior =
                    ((self.n_points as f64 * self.interior_fraction) + 0.5).floor() as usize;
                let interior = interior.min(self.n_points);
                (interior, self.n_points - interior)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    /// Tilde `(x̃, ỹ, t̃)`; the first `n_interior` are away from the bands.
    pub interior: Vec<[f64; 3]>,
    pub n_interior: usize,
    pub boundary: Vec<BoundaryPoint>,
    pub strategy: Strategy,
    pub seed: u64,
}

impl CollocationSet {
    pub fn band_count(&self) -> usize {
        self.interior.len() - self.n_interior
    }
}

/// Distance from `(x, y)` to the nearer half-way wall of its column.
pub fn wall_distance(mask: &SolidMask, x: f64, y: f64) -> Option<f64> {
    let i = (x.round().max(0.0) as usize).min(mask.nx() - 1);
    let (lo, hi) = mask.wall_heights(i)?;
    Some((y - lo).min(hi - y))
}

/// Draws collocation points over the fluid region of `mask` and the lattice
/// time window `[t0, t1]`. Initial-condition points take their targets from
/// `initial` (the snapshot at `t0`) and are skipped without one.
pub fn sample_collocation(
    mask: &SolidMask,
    scales: &Scales,
    window: (f64, f64),
    initial: Option<&FieldSnapshot>,
    cfg: &SamplingConfig,
) -> Result<CollocationSet, PinnError> {
    cfg.validate()?;
    if mask.fluid_count() == 0 {
        return Err(PinnError::Geometry("no fluid nodes".into()));
    }
    let (nx, ny) = (mask.nx() as f64, mask.ny() as f64);
    let band = cfg.band_width * scales.length;
    let (n_interior, n_band) = cfg.split();
    let mut rng = stream_rng(cfg.seed, stream::COLLOCATION);
    let draw =
        |rng: &mut ChaCha20Rng, count: usize, accept: &dyn Fn(f64, f64) -> bool, what: &str| {
            let mut pts = Vec::with_capacity(count);
            let budget = count
                .saturating_mul(MAX_ATTEMPTS_PER_POINT)
                .max(MAX_ATTEMPTS_PER_POINT);
            let mut attempts = 0usize;
            while pts.len() < count {
                attempts += 1;
                if attempts > budget {
                    return Err(PinnError::Geometry(format!(
                        "{what}: accepted {} of {attempts} candidates",
                        pts.len()
                    )));
                }
                let x = uniform(rng, 0.0, nx - 1.0);
                let y = uniform(rng, 0.0, ny - 1.0);
                if mask.near_solid(x, y, SOLID_CLEARANCE) || !accept(x, y) {
                    continue;
                }
                let t = uniform(rng, window.0, window.1);
                pts.push(scales.point_to_tilde(x, y, t));
            }
            Ok(pts)
        };

    let in_band = |x: f64, y: f64| wall_distance(mask, x, y).is_some_and(|d| d < band);
    let mut interior = match cfg.strategy {
        Strategy::Uniform => draw(&mut rng, n_interior, &|_, _| true, "interior")?,
        Strategy::NearWallEnriched => {
            draw(&mut rng, n_interior, &|x, y| !in_band(x, y), "interior")?
        }
    };
    interior.extend(draw(&mut rng, n_band, &in_band, "wall band")?);

    let mut boundary = Vec::new();
    let none = [0.0; MACRO_OUTPUTS];
    for _ in 0..cfg.n_wall {
        let x = uniform(&mut rng, 0.0, nx - 1.0);
        let i = (x.round() as usize).min(mask.nx() - 1);
        let Some((lo, hi)) = mask.wall_heights(i) else {
            continue;
        };
        let y = if unit(&mut rng) < 0.5 { lo } else { hi };
        let t = uniform(&mut rng, window.0, window.1);
        boundary.push(BoundaryPoint {
            point: scales.point_to_tilde(x, y, t),
            kind: BoundaryKind::Wall,
            target: none,
        });
    }
    for (count, col, kind) in [
        (cfg.n_inlet, 0, BoundaryKind::Inlet),
        (cfg.n_outlet, mask.nx() - 1, BoundaryKind::Outlet),
    ] {
        let Some((lo, hi)) = mask.wall_heights(col) else {
            continue;
        };
        for _ in 0..count {
            let y = uniform(&mut rng, lo + 0.5, hi - 0.5);
            let t = uniform(&mut rng, window.0, window.1);
            boundary.push(BoundaryPoint {
                point: scales.point_to_tilde(col as f64, y, t),
                kind,
                target: none,
            });
        }
    }
    if let Some(snap) = initial {
        let mut nodes: Vec<(usize, usize)> = (0..mask.ny())
            .flat_map(|j| (0..mask.nx()).map(move |i| (i, j)))
            .filter(|&(i, j)| !mask.is_solid(i, j))
            .collect();
        shuffle(&mut rng, &mut nodes);
        for &(i, j) in nodes.iter().take(cfg.n_initial) {
            let k = snap.index(i, j);
            boundary.push(BoundaryPoint {
                point: scales.point_to_tilde(i as f64, j as f64, snap.t as f64),
                kind: BoundaryKind::Initial,
                target: scales.fields_to_tilde(snap.rho[k], snap.u[k], snap.v[k], snap.p[k]),
            });
        }
    }

    Ok(CollocationSet {
        interior,
        n_interior,
        boundary,
        strategy: cfg.strategy,
        seed: cfg.seed,
    })
}

/// `n` uniform fluid points (tilde) for evaluating residuals, drawn on their
/// own stream so they never coincide with a collocation set. With
/// `max_wall_distance` (lattice units) only points that close to a wall are
/// kept.
pub fn probe_points(
    mask: &SolidMask,
    scales: &Scales,
    window: (f64, f64),
    n: usize,
    seed: u64,
    max_wall_distance: Option<f64>,
) -> Result<Vec<[f64; 3]>, PinnError> {
    if mask.fluid_count() == 0 {
        return Err(PinnError::Geometry("no fluid nodes".into()));
    }
    let mut rng = stream_rng(seed, stream::PROBE);
    let (nx, ny) = (mask.nx() as f64, mask.ny() as f64);
    let budget = n
        .saturating_mul(MAX_ATTEMPTS_PER_POINT)
        .max(MAX_ATTEMPTS_PER_POINT);
    let mut pts = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while pts.len() < n {
        attempts += 1;
        if attempts > budget {
            return Err(PinnError::Geometry(format!(
                "probe: accepted {} of {attempts} candidates",
                pts.len()
            )));
        }
        let x = uniform(&mut rng, 0.0, nx - 1.0);
        let y = uniform(&mut rng, 0.0, ny - 1.0);
        let t = uniform(&mut rng, window.0, window.1);
        if mask.near_solid(x, y, SOLID_CLEARANCE) {
            continue;
        }
        if let Some(d) = max_wall_distance {
            if !wall_distance(mask, x, y).is_some_and(|w| w < d) {
                continue;
            }
        }
        pts.push(scales.point_to_tilde(x, y, t));
    }
    Ok(pts)
}

/// Labeled samples `(x̃, ỹ, t̃) → [ũ, ṽ, p̃, ρ]` drawn from snapshots.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledDataset {
    pub points: Vec<[f64; 3]>,
    pub labels: Vec<[f64; MACRO_OUTPUTS]>,
    /// Manifest the snapshots came from, if any.
    pub manifest: Option<String>,
}

impl LabeledDataset {
    /// Up to `n` distinct (fluid node, snapshot) pairs chosen uniformly;
    /// `n = 0` takes every pair.
    pub fn from_snapshots(
        snaps: &[FieldSnapshot],
        mask: &SolidMask,
        scales: &Scales,
        n: usize,
        seed: u64,
    ) -> Result<Self, PinnError> {
        let mut pairs = Vec::new();
        for (s, snap) in snaps.iter().enumerate() {
            if snap.shape() != (mask.nx(), mask.ny()) {
                return Err(PinnError::Config(format!(
                    "snapshot {s} is {:?}, mask is {}x{}",
                    snap.shape(),
                    mask.nx(),
                    mask.ny()
                )));
            }
            for k in 0..mask.len() {
                if !mask.is_solid_at(k) {
                    pairs.push((s, k));
                }
            }
        }
        if pairs.is_empty() {
            return Err(PinnError::Empty("dataset"));
        }
        if n > 0 && n < pairs.len() {
            let mut rng = stream_rng(seed, stream::DATASET);
            shuffle(&mut rng, &mut pairs);
            pairs.truncate(n);
            pairs.sort_unstable();
        }
        let mut out = Self::default();
        for (s, k) in pairs {
            let snap = &snaps[s];
            let (i, j) = (k % mask.nx(), k / mask.nx());
            let label = scales.fields_to_tilde(snap.rho[k], snap.u[k], snap.v[k], snap.p[k]);
            if label.iter().any(|v| !v.is_finite()) {
                return Err(PinnError::Config(format!(
                    "non-finite label at node ({i}, {j}) of snapshot t = {}",
                    snap.t
                )));
            }
            out.points
                .push(scales.point_to_tilde(i as f64, j as f64, snap.t as f64));
            out.labels.push(label);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn pairs(&self) -> Vec<([f64; 3], [f64; MACRO_OUTPUTS])> {
        self.points
            .iter()
            .copied()
            .zip(self.labels.iter().copied())
            .collect()
    }

    pub fn output_stats(&self) -> AffineMap {
        AffineMap::from_samples(&self.labels)
    }
}
