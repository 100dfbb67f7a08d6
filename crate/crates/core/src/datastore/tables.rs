//! CSV tables for labeled datasets and collocation sets. Reals are written
//! in shortest round-trip form, so decoding is bit-exact.

use std::fmt::Write as _;

use super::{format_err, DatastoreError};
use crate::pinn::{BoundaryKind, BoundaryPoint, CollocationSet, LabeledDataset, Strategy};

pub const DATASET_HEADER: &str = "x,y,t,u,v,p,rho";
pub const COLLOCATION_HEADER: &str = "kind,x,y,t,u,v,p,rho";

fn row(out: &mut String, lead: Option<&str>, vals: impl IntoIterator<Item = f64>) {
    let mut first = true;
    if let Some(l) = lead {
        out.push_str(l);
        first = false;
    }
    for v in vals {
        if !first {
            out.push(',');
        }
        first = false;
        let _ = write!(out, "{v:?}");
    }
    out.push('\n');
}

pub fn encode_dataset(d: &LabeledDataset) -> String {
    let mut s = String::new();
    if let Some(m) = &d.manifest {
        let _ = writeln!(s, "# manifest = {m}");
    }
    s.push_str(DATASET_HEADER);
    s.push('\n');
    for (p, l) in d.points.iter().zip(&d.labels) {
        row(&mut s, None, p.iter().chain(l).copied());
    }
    s
}

pub fn encode_collocation(c: &CollocationSet) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# strategy = {}", c.strategy.name());
    let _ = writeln!(s, "# seed = {}", c.seed);
    s.push_str(COLLOCATION_HEADER);
    s.push('\n');
    for (k, p) in c.interior.iter().enumerate() {
        let kind = if k < c.n_interior { "interior" } else { "band" };
        row(&mut s, Some(kind), p.iter().copied().chain([0.0; 4]));
    }
    for b in &c.boundary {
        row(
            &mut s,
            Some(b.kind.name()),
            b.point.iter().chain(&b.target).copied(),
        );
    }
    s
}

/// Non-comment lines with their byte offsets, header checked; comment
/// headers come back as `(key, value, offset)`.
#[allow(clippy::type_complexity)]
fn lines<'a>(
    text: &'a str,
    header: &str,
) -> Result<(Vec<(&'a str, &'a str, usize)>, Vec<(usize, &'a str)>), DatastoreError> {
    let mut meta = Vec::new();
    let mut body = Vec::new();
    let mut seen_header = false;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len();
        let l = line.trim();
        if l.is_empty() {
            continue;
        }
        if let Some(c) = l.strip_prefix('#') {
            if let Some((k, v)) = c.split_once('=') {
                meta.push((k.trim(), v.trim(), at));
            }
            continue;
        }
        if !seen_header {
            if l != header {
                return Err(format_err(at, format!("expected header `{header}`")));
            }
            seen_header = true;
            continue;
        }
        body.push((at, l));
    }
    if !seen_header {
        return Err(format_err(text.len(), format!("missing header `{header}`")));
    }
    Ok((meta, body))
}

fn reals<const N: usize>(at: usize, cells: &[&str]) -> Result<[f64; N], DatastoreError> {
    if cells.len() != N {
        return Err(format_err(
            at,
            format!("expected {N} numeric columns, found {}", cells.len()),
        ));
    }
    let mut out = [0.0; N];
    for (o, c) in out.iter_mut().zip(cells) {
        *o = c
            .trim()
            .parse()
            .map_err(|_| format_err(at, format!("bad real `{c}`")))?;
    }
    Ok(out)
}

pub fn parse_dataset(text: &str) -> Result<LabeledDataset, DatastoreError> {
    let (meta, body) = lines(text, DATASET_HEADER)?;
    let mut d = LabeledDataset {
        manifest: meta
            .iter()
            .find(|m| m.0 == "manifest")
            .map(|m| m.1.to_string()),
        ..Default::default()
    };
    for (at, l) in body {
        let cells: Vec<&str> = l.split(',').collect();
        let v: [f64; 7] = reals(at, &cells)?;
        d.points.push([v[0], v[1], v[2]]);
        d.labels.push([v[3], v[4], v[5], v[6]]);
    }
    Ok(d)
}

pub fn parse_collocation(text: &str) -> Result<CollocationSet, DatastoreError> {
    let (meta, body) = lines(text, COLLOCATION_HEADER)?;
    let find = |k: &str| {
        meta.iter()
            .find(|m| m.0 == k)
            .ok_or_else(|| format_err(0, format!("missing `# {k} = ...` header")))
    };
    let (_, sv, sat) = find("strategy")?;
    let strategy =
        Strategy::parse(sv).ok_or_else(|| format_err(*sat, format!("unknown strategy `{sv}`")))?;
    let (_, seedv, seedat) = find("seed")?;
    let seed = seedv
        .parse()
        .map_err(|_| format_err(*seedat, format!("bad seed `{seedv}`")))?;
    let mut interior = Vec::new();
    let mut band = Vec::new();
    let mut boundary = Vec::new();
    for (at, l) in body {
        let (kind, rest) = l
            .split_once(',')
            .ok_or_else(|| format_err(at, "missing columns"))?;
        let cells: Vec<&str> = rest.split(',').collect();
        let v: [f64; 7] = reals(at, &cells)?;
        let point = [v[0], v[1], v[2]];
        match kind {
            "interior" | "band"
                if !boundary.is_empty() || (kind == "interior" && !band.is_empty()) =>
            {
                return Err(format_err(
                    at,
                    "rows must run interior, band, then boundary",
                ));
            }
            "interior" => interior.push(point),
            "band" => band.push(point),
            other => {
                let kind = BoundaryKind::parse(other).map_err(|e| format_err(at, e.to_string()))?;
                boundary.push(BoundaryPoint {
                    point,
                    kind,
                    target: [v[3], v[4], v[5], v[6]],
                });
            }
        }
    }
    let n_interior = interior.len();
    interior.extend(band);
    Ok(CollocationSet {
        interior,
        n_interior,
        boundary,
        strategy,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn colloc() -> CollocationSet {
        CollocationSet {
            interior: vec![[0.1, 0.2, 0.3], [1.0 / 3.0, 0.5, 0.0], [2.0, 1e-300, -0.0]],
            n_interior: 2,
            boundary: vec![
                BoundaryPoint {
                    point: [0.0, 0.4, 0.1],
                    kind: BoundaryKind::Inlet,
                    target: [0.0; 4],
                },
                BoundaryPoint {
                    point: [0.3, 0.4, 0.0],
                    kind: BoundaryKind::Initial,
                    target: [0.7, -1e-3, 1.5e-2, 1.0000001],
                },
            ],
            strategy: Strategy::NearWallEnriched,
            seed: 42,
        }
    }

    #[test]
    fn collocation_round_trip() {
        let c = colloc();
        let text = encode_collocation(&c);
        assert_eq!(parse_collocation(&text).unwrap(), c);
    }

    #[test]
    fn dataset_round_trip() {
        let d = LabeledDataset {
            points: vec![[0.1, 0.2, 0.3], [f64::MIN_POSITIVE, 5.0, 1e9]],
            labels: vec![[1.0, 0.0, -0.25, 1.0], [0.1 + 0.2, 2.0, 3.0, 0.99]],
            manifest: Some("sim/manifest.txt".into()),
        };
        assert_eq!(parse_dataset(&encode_dataset(&d)).unwrap(), d);
    }

    #[test]
    fn bad_rows_report_offsets() {
        let text = encode_collocation(&colloc());
        let broken = text.replacen("inlet,", "sideways,", 1);
        let at = broken.find("sideways").unwrap();
        assert!(
            matches!(parse_collocation(&broken), Err(DatastoreError::Format { offset, .. }) if offset == at)
        );
        let bad = format!("{DATASET_HEADER}\n1,2,3\n");
        assert_eq!(
            parse_dataset(&bad).unwrap_err(),
            format_err(
                DATASET_HEADER.len() + 1,
                "expected 7 numeric columns, found 3"
            )
        );
        assert!(parse_dataset("").is_err());
        let reordered = format!("# strategy = uniform\n# seed = 1\n{COLLOCATION_HEADER}\nwall,0,0,0,0,0,0,0\ninterior,0,0,0,0,0,0,0\n");
        assert!(parse_collocation(&reordered).is_err());
    }
}
