//! Artifact files: RFS1 snapshots, RFP1 parameter checkpoints with a text
//! `.model` sidecar, and dataset manifests. Every artifact carries the
//! FNV-1a hash of the config that produced it. All binary fields are
//! little-endian.
//!
//! RFS1: `RFS1`, u32 nx, u32 ny, u64 t, f64 c_s², then ρ, u, v, p as
//! row-major f64 arrays (x fastest, NaN on solid nodes), then u64 config hash.
//!
//! RFP1: `RFP1`, u32 layer count, per layer u32 rows, u32 cols, row-major
//! weights, biases; then u64 init seed, u32 activation tag, u64 config hash.

pub mod config;
pub mod tables;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::{Activation, NetworkSpec, ParameterSet};
use crate::lbm::{FieldSnapshot, CS2};
use crate::pinn::{AffineMap, ModelOptions, PinnModel, Scales};

pub use config::{fnv1a, parse_config, serialize, ConfigError, RunConfig};
pub use tables::{encode_collocation, encode_dataset, parse_collocation, parse_dataset};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"RFS1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RFP1";
const SNAPSHOT_HEADER: usize = 28;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatastoreError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn format_err(offset: usize, message: impl Into<String>) -> DatastoreError {
    DatastoreError::Format {
        offset,
        message: message.into(),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> DatastoreError {
    DatastoreError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes through a sibling temporary file so readers never see a partial
/// artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatastoreError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, DatastoreError> {
    fs::read(path).map_err(|e| io_err(path, e))
}

pub fn read_text(path: &Path) -> Result<String, DatastoreError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DatastoreError> {
        if self.buf.len() - self.pos < n {
            return Err(format_err(
                self.pos,
                format!(
                    "truncated: {what} needs {n} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, DatastoreError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, DatastoreError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, DatastoreError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, DatastoreError> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| format_err(self.pos, format!("{what}: length overflow")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<(), DatastoreError> {
        let m = self.take(4, "magic")?;
        if m != magic {
            return Err(format_err(
                0,
                format!(
                    "bad magic {m:?}, expected {:?}",
                    std::str::from_utf8(magic).unwrap()
                ),
            ));
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), DatastoreError> {
        if self.pos != self.buf.len() {
            return Err(format_err(
                self.pos,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn encode_snapshot(s: &FieldSnapshot, config_hash: u64) -> Vec<u8> {
    let n = s.nx * s.ny;
    let mut out = Vec::with_capacity(SNAPSHOT_HEADER + 32 * n + 8);
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(s.nx as u32).to_le_bytes());
    out.extend_from_slice(&(s.ny as u32).to_le_bytes());
    out.extend_from_slice(&s.t.to_le_bytes());
    out.extend_from_slice(&CS2.to_le_bytes());
    for field in [&s.rho, &s.u, &s.v, &s.p] {
        for v in field.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&config_hash.to_le_bytes());
    out
}

/// Snapshot and the config hash stored with it.
pub fn decode_snapshot(bytes: &[u8]) -> Result<(FieldSnapshot, u64), DatastoreError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.magic(SNAPSHOT_MAGIC)?;
    let nx = r.u32("nx")? as usize;
    let ny = r.u32("ny")? as usize;
    if nx == 0 || ny == 0 {
        return Err(format_err(4, format!("empty grid {nx}x{ny}")));
    }
    let t = r.u64("timestep")?;
    let cs2 = r.f64("c_s^2")?;
    if cs2.to_bits() != CS2.to_bits() {
        return Err(format_err(20, format!("c_s^2 = {cs2}, expected 1/3")));
    }
    let n = nx
        .checked_mul(ny)
        .ok_or_else(|| format_err(4, "grid size overflow"))?;
    let rho = r.f64s(n, "rho")?;
    let u = r.f64s(n, "u")?;
    let v = r.f64s(n, "v")?;
    let p = r.f64s(n, "p")?;
    let hash = r.u64("config hash")?;
    r.finish()?;
    Ok((
        FieldSnapshot {
            nx,
            ny,
            t,
            rho,
            u,
            v,
            p,
        },
        hash,
    ))
}

pub fn write_snapshot(
    path: &Path,
    s: &FieldSnapshot,
    config_hash: u64,
) -> Result<(), DatastoreError> {
    write_atomic(path, &encode_snapshot(s, config_hash))
}

pub fn read_snapshot(path: &Path) -> Result<(FieldSnapshot, u64), DatastoreError> {
    decode_snapshot(&read_bytes(path)?)
}

/// Like [`read_snapshot`], rejecting a grid other than `nx × ny`.
pub fn read_snapshot_expect(
    path: &Path,
    nx: usize,
    ny: usize,
) -> Result<(FieldSnapshot, u64), DatastoreError> {
    let (s, h) = read_snapshot(path)?;
    if s.shape() != (nx, ny) {
        return Err(DatastoreError::Shape {
            expected: (nx, ny),
            found: s.shape(),
        });
    }
    Ok((s, h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterSet,
    pub seed: u64,
    pub activation: Activation,
    pub config_hash: u64,
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let p = &c.params;
    let mut out = Vec::with_capacity(16 + 8 * p.len() + 8 * p.layer_count() + 20);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(p.layer_count() as u32).to_le_bytes());
    for (l, &(rows, cols)) in p.shapes().iter().enumerate() {
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for v in p.weights(l).iter().chain(p.biases(l)) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.extend_from_slice(&c.activation.tag().to_le_bytes());
    out.extend_from_slice(&c.config_hash.to_le_bytes());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, DatastoreError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.magic(CHECKPOINT_MAGIC)?;
    let layers = r.u32("layer count")? as usize;
    if layers == 0 {
        return Err(format_err(4, "no layers"));
    }
    let mut parts = Vec::new();
    let mut prev_rows: Option<usize> = None;
    for l in 0..layers {
        let at = r.pos;
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        if rows == 0 || cols == 0 {
            return Err(format_err(at, format!("layer {l} has shape {rows}x{cols}")));
        }
        if let Some(pr) = prev_rows.filter(|&pr| pr != cols) {
            return Err(format_err(
                at,
                format!("layer {l} takes {cols} inputs, previous layer emits {pr}"),
            ));
        }
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| format_err(at, "layer size overflow"))?;
        let w = r.f64s(n, "weights")?;
        let b = r.f64s(rows, "biases")?;
        parts.push((rows, cols, w, b));
        prev_rows = Some(rows);
    }
    let seed = r.u64("seed")?;
    let tag_at = r.pos;
    let tag = r.u32("activation tag")?;
    let activation = Activation::from_tag(tag)
        .ok_or_else(|| format_err(tag_at, format!("unknown activation tag {tag}")))?;
    let config_hash = r.u64("config hash")?;
    r.finish()?;
    let params = ParameterSet::from_layers(&parts).map_err(|e| format_err(4, e.to_string()))?;
    Ok(Checkpoint {
        params,
        seed,
        activation,
        config_hash,
    })
}

pub fn write_checkpoint(path: &Path, c: &Checkpoint) -> Result<(), DatastoreError> {
    write_atomic(path, &encode_checkpoint(c))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, DatastoreError> {
    decode_checkpoint(&read_bytes(path)?)
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Text sidecar with everything a checkpoint needs to become a model.
pub fn encode_model_sidecar(m: &PinnModel, config_hash: u64) -> String {
    let mut s = String::from("# roughflow model\n");
    let s_ = &m.scales;
    let mut put = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    put("config_hash", format!("{config_hash:016x}"));
    put("length", format!("{:?}", s_.length));
    put("velocity", format!("{:?}", s_.velocity));
    put("outlet_pressure", format!("{:?}", s_.outlet_pressure));
    put("reynolds", format!("{:?}", s_.reynolds));
    put("kinetic_head", m.options.kinetic_head.to_string());
    put(
        "geometry",
        m.options
            .geometry
            .map_or("none".to_string(), |(a, d)| format!("{a:?},{d:?}")),
    );
    put("reynolds_input", m.options.reynolds_input.to_string());
    put("hidden_layers", m.network.hidden_layers.to_string());
    put("hidden_width", m.network.hidden_width.to_string());
    put("input_shift", join(&m.inputs.shift));
    put("input_scale", join(&m.inputs.scale));
    put("output_shift", join(&m.outputs.shift));
    put("output_scale", join(&m.outputs.scale));
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSidecar {
    pub config_hash: u64,
    pub scales: Scales,
    pub options: ModelOptions,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub inputs: AffineMap,
    pub outputs: AffineMap,
}

pub fn parse_model_sidecar(text: &str) -> Result<ModelSidecar, DatastoreError> {
    let mut kv = std::collections::BTreeMap::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len();
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(format_err(
                at,
                format!("expected `key = value`, got `{body}`"),
            ));
        };
        if kv
            .insert(k.trim().to_string(), (at, v.trim().to_string()))
            .is_some()
        {
            return Err(format_err(at, format!("duplicate key `{}`", k.trim())));
        }
    }
    let end = text.len();
    let get = |k: &str| {
        kv.get(k)
            .ok_or_else(|| format_err(end, format!("missing `{k}`")))
    };
    let real = |k: &str| -> Result<f64, DatastoreError> {
        let (at, v) = get(k)?;
        v.parse::<f64>()
            .map_err(|_| format_err(*at, format!("`{k}`: bad real `{v}`")))
    };
    let boolean = |k: &str| -> Result<bool, DatastoreError> {
        let (at, v) = get(k)?;
        match v.as_str() {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format_err(*at, format!("`{k}`: bad boolean `{v}`"))),
        }
    };
    let count = |k: &str| -> Result<usize, DatastoreError> {
        let (at, v) = get(k)?;
        v.parse::<usize>()
            .map_err(|_| format_err(*at, format!("`{k}`: bad count `{v}`")))
    };
    let list = |k: &str| -> Result<Vec<f64>, DatastoreError> {
        let (at, v) = get(k)?;
        v.split(',')
            .map(|x| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| format_err(*at, format!("`{k}`: bad real `{x}`")))
            })
            .collect()
    };
    let (hat, hv) = get("config_hash")?;
    let config_hash = u64::from_str_radix(hv, 16)
        .map_err(|_| format_err(*hat, format!("bad config hash `{hv}`")))?;
    let geometry = {
        let (at, v) = get("geometry")?;
        if v == "none" {
            None
        } else {
            let p: Vec<f64> = v
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| format_err(*at, format!("bad geometry `{v}`")))?;
            if p.len() != 2 {
                return Err(format_err(
                    *at,
                    format!("geometry needs two values, got `{v}`"),
                ));
            }
            Some((p[0], p[1]))
        }
    };
    let inputs = AffineMap {
        shift: list("input_shift")?,
        scale: list("input_scale")?,
    };
    let outputs = AffineMap {
        shift: list("output_shift")?,
        scale: list("output_scale")?,
    };
    for (name, m) in [("input", &inputs), ("output", &outputs)] {
        if m.shift.len() != m.scale.len() || m.scale.iter().any(|s| *s == 0.0 || !s.is_finite()) {
            return Err(format_err(end, format!("invalid {name} normalization")));
        }
    }
    Ok(ModelSidecar {
        config_hash,
        scales: Scales {
            length: real("length")?,
            velocity: real("velocity")?,
            outlet_pressure: real("outlet_pressure")?,
            reynolds: real("reynolds")?,
        },
        options: ModelOptions {
            kinetic_head: boolean("kinetic_head")?,
            geometry,
            reynolds_input: boolean("reynolds_input")?,
        },
        hidden_layers: count("hidden_layers")?,
        hidden_width: count("hidden_width")?,
        inputs,
        outputs,
    })
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("model")
}

/// Writes the RFP1 checkpoint and its `.model` sidecar.
pub fn write_model(path: &Path, m: &PinnModel, config_hash: u64) -> Result<(), DatastoreError> {
    write_checkpoint(
        path,
        &Checkpoint {
            params: m.params.clone(),
            seed: m.network.init_seed,
            activation: m.activation(),
            config_hash,
        },
    )?;
    write_atomic(
        &sidecar_path(path),
        encode_model_sidecar(m, config_hash).as_bytes(),
    )
}

/// Model, its checkpoint hash and any provenance warnings.
pub fn read_model(path: &Path) -> Result<(PinnModel, u64, Vec<String>), DatastoreError> {
    let ck = read_checkpoint(path)?;
    let side_path = sidecar_path(path);
    let side = parse_model_sidecar(&read_text(&side_path)?)?;
    assemble_model(ck, side, &side_path.display().to_string())
}

fn assemble_model(
    ck: Checkpoint,
    side: ModelSidecar,
    side_name: &str,
) -> Result<(PinnModel, u64, Vec<String>), DatastoreError> {
    let mut warnings = Vec::new();
    if side.config_hash != ck.config_hash {
        warnings.push(format!(
            "{side_name}: config hash {:016x} differs from checkpoint {:016x}",
            side.config_hash, ck.config_hash
        ));
    }
    let network = NetworkSpec {
        input_width: ck.params.input_width(),
        hidden_layers: side.hidden_layers,
        hidden_width: side.hidden_width,
        output_width: ck.params.output_width(),
        activation: ck.activation,
        init_seed: ck.seed,
    };
    let consistent = network.layer_shapes() == ck.params.shapes()
        && side.inputs.len() == network.input_width
        && side.outputs.len() == network.output_width
        && side.options.output_width() == network.output_width
        && 3 + side.options.extra_inputs(side.scales.reynolds).len() == network.input_width;
    if !consistent {
        return Err(format_err(
            0,
            format!(
                "{side_name} does not describe a network with shapes {:?}",
                ck.params.shapes()
            ),
        ));
    }
    let model = PinnModel {
        network,
        params: ck.params,
        inputs: side.inputs,
        outputs: side.outputs,
        scales: side.scales,
        options: side.options,
    };
    Ok((model, ck.config_hash, warnings))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub config_hash: u64,
    /// Other `# key = value` header entries, in file order.
    pub header: Vec<(String, String)>,
    /// Paths as written (relative ones resolve against the manifest's
    /// directory).
    pub entries: Vec<String>,
}

pub fn encode_manifest(m: &Manifest) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# config_hash = {:016x}", m.config_hash);
    for (k, v) in &m.header {
        let _ = writeln!(s, "# {k} = {v}");
    }
    for e in &m.entries {
        let _ = writeln!(s, "{e}");
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Manifest, DatastoreError> {
    let mut hash = None;
    let mut header = Vec::new();
    let mut entries = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len();
        let body = line.trim();
        if body.is_empty() {
            continue;
        }
        if let Some(c) = body.strip_prefix('#') {
            let Some((k, v)) = c.split_once('=') else {
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            if k == "config_hash" {
                if hash.is_some() {
                    return Err(format_err(at, "duplicate config_hash"));
                }
                hash = Some(
                    u64::from_str_radix(v, 16)
                        .map_err(|_| format_err(at, format!("bad config hash `{v}`")))?,
                );
            } else {
                header.push((k.to_string(), v.to_string()));
            }
            continue;
        }
        entries.push(body.to_string());
    }
    let config_hash =
        hash.ok_or_else(|| format_err(text.len(), "manifest has no config_hash header"))?;
    Ok(Manifest {
        config_hash,
        header,
        entries,
    })
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<(), DatastoreError> {
    write_atomic(path, encode_manifest(m).as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Manifest, DatastoreError> {
    parse_manifest(&read_text(path)?)
}

pub fn resolve_entry(manifest_path: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Reads every snapshot of a manifest; snapshots stamped with a different
/// config hash than the manifest come back with a warning.
pub fn load_manifest_snapshots(
    path: &Path,
) -> Result<(Manifest, Vec<FieldSnapshot>, Vec<String>), DatastoreError> {
    let m = read_manifest(path)?;
    let mut snaps = Vec::with_capacity(m.entries.len());
    let mut warnings = Vec::new();
    let mut shape = None;
    for e in &m.entries {
        let p = resolve_entry(path, e);
        let (s, h) = read_snapshot(&p)?;
        if h != m.config_hash {
            warnings.push(format!(
                "{}: config hash {h:016x} differs from manifest {:016x}",
                p.display(),
                m.config_hash
            ));
        }
        match shape {
            None => shape = Some(s.shape()),
            Some(sh) if sh != s.shape() => {
                return Err(DatastoreError::Shape {
                    expected: sh,
                    found: s.shape(),
                })
            }
            _ => {}
        }
        snaps.push(s);
    }
    Ok((m, snaps, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::init_parameters;
    use crate::pinn::{Architecture, TildeBox};

    fn snap() -> FieldSnapshot {
        let mut s = FieldSnapshot::solid(5, 4, 1234);
        for k in 5..15 {
            s.rho[k] = 1.0 + k as f64 * 1e-3;
            s.u[k] = 0.01 * k as f64;
            s.v[k] = -1e-5 * k as f64;
            s.p[k] = s.rho[k] / 3.0;
        }
        s
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let s = snap();
        let bytes = encode_snapshot(&s, 0xdead_beef);
        assert_eq!(bytes.len(), 28 + 4 * 20 * 8 + 8);
        assert_eq!(&bytes[..4], b"RFS1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 5);
        let (r, h) = decode_snapshot(&bytes).unwrap();
        assert!(r.bit_eq(&s));
        assert_eq!(h, 0xdead_beef);
        assert_eq!(r.u[0].to_bits(), f64::NAN.to_bits());
    }

    #[test]
    fn truncation_and_magic_errors() {
        let bytes = encode_snapshot(&snap(), 1);
        let e = decode_snapshot(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(e, DatastoreError::Format { offset, .. } if offset == bytes.len() - 8));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_snapshot(&bad),
            Err(DatastoreError::Format { offset: 0, .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            decode_snapshot(&long),
            Err(DatastoreError::Format { .. })
        ));
        // Without its trailing hash the payload is short by 8 bytes.
        assert!(decode_snapshot(&bytes[..bytes.len() - 8]).is_err());
        let mut huge = bytes[..28].to_vec();
        huge[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_snapshot(&huge).is_err());
    }

    #[test]
    fn snapshot_files_and_shape_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.rfs");
        write_snapshot(&p, &snap(), 7).unwrap();
        assert_eq!(read_snapshot(&p).unwrap().1, 7);
        assert!(read_snapshot_expect(&p, 5, 4).is_ok());
        assert_eq!(
            read_snapshot_expect(&p, 6, 4).unwrap_err(),
            DatastoreError::Shape {
                expected: (6, 4),
                found: (5, 4)
            }
        );
    }

    fn model() -> PinnModel {
        let s = Scales {
            length: 40.0,
            velocity: 0.03,
            outlet_pressure: 1.0 / 3.0,
            reynolds: 10.0,
        };
        PinnModel::new(
            Architecture {
                hidden_layers: 2,
                hidden_width: 6,
                init_seed: 11,
                activation: Activation::Gelu,
            },
            ModelOptions {
                kinetic_head: true,
                geometry: Some((5.0, 1.5)),
                reynolds_input: false,
            },
            s,
            TildeBox::lattice(20, 10, 0.0, 100.0, &s),
            AffineMap {
                shift: vec![0.5, 0.0, 1.0, 1.0],
                scale: vec![0.1, 0.2, 0.3, 0.01],
            },
        )
        .unwrap()
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model();
        let ck = Checkpoint {
            params: m.params.clone(),
            seed: 11,
            activation: Activation::Gelu,
            config_hash: 99,
        };
        let bytes = encode_checkpoint(&ck);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), ck);
        for cut in [1, 8, 13, bytes.len() - 30] {
            assert!(matches!(
                decode_checkpoint(&bytes[..bytes.len() - cut]),
                Err(DatastoreError::Format { .. })
            ));
        }
        let mut bad = bytes.clone();
        let tag = bytes.len() - 12;
        bad[tag..tag + 4].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(DatastoreError::Format { offset, .. }) if offset == tag
        ));
    }

    #[test]
    fn checkpoint_layers_must_chain() {
        let spec = NetworkSpec {
            input_width: 2,
            hidden_layers: 1,
            hidden_width: 3,
            output_width: 1,
            activation: Activation::Tanh,
            init_seed: 0,
        };
        let ck = Checkpoint {
            params: init_parameters(&spec).unwrap(),
            seed: 0,
            activation: Activation::Tanh,
            config_hash: 0,
        };
        let mut bytes = encode_checkpoint(&ck);
        // Second layer header sits after layer 0 (3x2 weights + 3 biases).
        let at = 8 + 8 + 9 * 8;
        bytes[at + 4..at + 8].copy_from_slice(&4u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(DatastoreError::Format { offset, .. }) if offset == at
        ));
    }

    #[test]
    fn model_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.rfp");
        let m = model();
        write_model(&p, &m, 0xabc).unwrap();
        let (r, h, w) = read_model(&p).unwrap();
        assert_eq!(r, m);
        assert_eq!(h, 0xabc);
        assert!(w.is_empty());
        let side = read_text(&sidecar_path(&p)).unwrap();
        let side = side.replace("0000000000000abc", "0000000000000abd");
        fs::write(sidecar_path(&p), side).unwrap();
        let (_, _, w) = read_model(&p).unwrap();
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn sidecar_errors_carry_offsets() {
        let text = encode_model_sidecar(&model(), 5);
        let broken = text.replace("velocity = 0.03", "velocity = fast");
        let at = broken.find("velocity =").unwrap();
        assert_eq!(
            parse_model_sidecar(&broken).unwrap_err(),
            format_err(at, "`velocity`: bad real `fast`")
        );
        let missing = text.replace("reynolds = 10.0\n", "");
        assert!(matches!(
            parse_model_sidecar(&missing),
            Err(DatastoreError::Format { .. })
        ));
    }

    #[test]
    fn manifest_round_trip_and_warnings() {
        let dir = tempfile::tempdir().unwrap();
        let s = snap();
        write_snapshot(&dir.path().join("s0.rfs"), &s, 0x10).unwrap();
        write_snapshot(&dir.path().join("s1.rfs"), &s, 0x11).unwrap();
        let m = Manifest {
            config_hash: 0x10,
            header: vec![("kind".into(), "snapshots".into())],
            entries: vec!["s0.rfs".into(), "s1.rfs".into()],
        };
        let text = encode_manifest(&m);
        assert_eq!(parse_manifest(&text).unwrap(), m);
        let mp = dir.path().join("manifest.txt");
        write_manifest(&mp, &m).unwrap();
        let (_, snaps, warnings) = load_manifest_snapshots(&mp).unwrap();
        assert_eq!(snaps.len(), 2);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("s1.rfs"));
        let e = parse_manifest("# kind = x\na.rfs\n").unwrap_err();
        assert_eq!(e, format_err(17, "manifest has no config_hash header"));
        let e = parse_manifest("a.rfs\n# config_hash = zz\n").unwrap_err();
        assert!(matches!(e, DatastoreError::Format { offset: 6, .. }));
    }
}
