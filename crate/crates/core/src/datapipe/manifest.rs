//! Tab-separated corpus manifest: a header line, one row per sample in
//! ascending id order, and a trailing `#stats` line recomputed on every
//! write. Lines starting with `#` are ignored on read.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::motion::Style;

pub const HEADER: [&str; 11] = [
    "id", "style", "video", "motion", "points", "keypoints", "k", "height", "width", "error", "kept",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub id: u64,
    pub style: Style,
    /// Tensor paths relative to the manifest directory.
    pub video: String,
    pub motion: String,
    pub points: String,
    pub keypoints: String,
    pub k: usize,
    pub height: usize,
    pub width: usize,
    /// Reprojection error in pixels.
    pub error: f64,
    pub kept: bool,
}

impl ManifestRow {
    #[cfg(test)]
    pub(crate) fn placeholder(id: u64, error: f64) -> Self {
        ManifestRow {
            id,
            style: Style::Idle,
            video: format!("v{id}"),
            motion: format!("m{id}"),
            points: format!("p{id}"),
            keypoints: format!("k{id}"),
            k: 1,
            height: 4,
            width: 4,
            error,
            kept: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManifestStats {
    pub count: usize,
    pub kept: usize,
    pub q50: f64,
    pub q90: f64,
    pub max: f64,
}

/// Nearest-rank quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

impl Manifest {
    pub fn stats(&self) -> Option<ManifestStats> {
        if self.rows.is_empty() {
            return None;
        }
        let mut e: Vec<f64> = self.rows.iter().map(|r| r.error).collect();
        e.sort_by(f64::total_cmp);
        Some(ManifestStats {
            count: e.len(),
            kept: self.rows.iter().filter(|r| r.kept).count(),
            q50: quantile(&e, 0.5),
            q90: quantile(&e, 0.9),
            max: e[e.len() - 1],
        })
    }

    pub fn removed(&self) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(|r| !r.kept)
    }
}

/// Nine significant digits, enough to round-trip an f32.
fn fmt_error(e: f64) -> String {
    format!("{e:.8e}")
}

pub fn render_manifest(manifest: &Manifest) -> String {
    let mut rows: Vec<&ManifestRow> = manifest.rows.iter().collect();
    rows.sort_by_key(|r| r.id);
    let mut out = HEADER.join("\t");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.id,
            r.style,
            r.video,
            r.motion,
            r.points,
            r.keypoints,
            r.k,
            r.height,
            r.width,
            fmt_error(r.error),
            r.kept
        );
    }
    if let Some(s) = manifest.stats() {
        let _ = writeln!(
            out,
            "#stats\tcount={}\tkept={}\tq50={}\tq90={}\tmax={}",
            s.count,
            s.kept,
            fmt_error(s.q50),
            fmt_error(s.q90),
            fmt_error(s.max)
        );
    }
    out
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    io::write_bytes(path, render_manifest(manifest).as_bytes())
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Manifest> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split('\t').eq(HEADER.iter().copied()) => {}
        Some((_, h)) => return Err(err(1, format!("unexpected header '{h}'"))),
        None => return Err(err(1, "missing header".into())),
    }
    let mut rows: Vec<ManifestRow> = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != HEADER.len() {
            return Err(err(n, format!("expected {} fields, found {}", HEADER.len(), f.len())));
        }
        let num = |idx: usize| -> Result<usize> {
            f[idx]
                .parse()
                .map_err(|_| err(n, format!("invalid {} '{}'", HEADER[idx], f[idx])))
        };
        let error: f64 = f[9].parse().map_err(|_| err(n, format!("invalid error '{}'", f[9])))?;
        if !(error >= 0.0 && error.is_finite()) {
            return Err(err(n, format!("reprojection error must be finite and non-negative, got {error}")));
        }
        let row = ManifestRow {
            id: f[0].parse().map_err(|_| err(n, format!("invalid id '{}'", f[0])))?,
            style: f[1].parse().map_err(|e| err(n, format!("{e}")))?,
            video: f[2].to_string(),
            motion: f[3].to_string(),
            points: f[4].to_string(),
            keypoints: f[5].to_string(),
            k: num(6)?,
            height: num(7)?,
            width: num(8)?,
            error: error as f32 as f64,
            kept: match f[10] {
                "true" => true,
                "false" => false,
                other => return Err(err(n, format!("invalid kept flag '{other}'"))),
            },
        };
        if rows.last().is_some_and(|p| p.id >= row.id) {
            return Err(err(n, format!("ids must be strictly ascending, found {} after {}", row.id, rows.last().unwrap().id)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(err(2, "manifest has no records".into()));
    }
    Ok(Manifest { rows })
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = io::read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "not UTF-8".into(),
    })?;
    parse_manifest(&text, path)
}
