//! Whitespace-delimited trajectory text files: one `frame agent x y` observation per line.
//!
//! Parsing re-indexes frames to consecutive integers using the greatest common
//! step between distinct frame ids, maps agent ids densely, and splits any
//! track with a temporal gap into separate agents.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{build_scene, Record, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnOrder {
    /// `frame agent x y`
    #[default]
    FrameAgentXy,
    /// `frame agent y x`
    FrameAgentYx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParseOptions {
    /// Seconds between consecutive frames after re-indexing and subsampling.
    pub frame_interval: f64,
    pub column_order: ColumnOrder,
    /// Keep every `subsample`-th re-indexed frame.
    pub subsample: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            frame_interval: 0.4,
            column_order: ColumnOrder::FrameAgentXy,
            subsample: 1,
        }
    }
}

fn parse_integral(token: &str, what: &str, line: usize) -> Result<i64> {
    let v: f64 = token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("{what} '{token}' is not a number"),
    })?;
    let r = v.round();
    if !v.is_finite() || (v - r).abs() > 1e-6 || r.abs() > 9.0e15 {
        return Err(Error::Parse {
            line,
            message: format!("{what} '{token}' is not an integer"),
        });
    }
    Ok(r as i64)
}

fn parse_coordinate(token: &str, line: usize) -> Result<f64> {
    let v: f64 = token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("coordinate '{token}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("coordinate '{token}' is not finite"),
        });
    }
    Ok(v)
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

struct RawRecord {
    frame: i64,
    agent: i64,
    x: f64,
    y: f64,
}

fn parse_lines<R: BufRead>(reader: R, order: ColumnOrder) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = text.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        let frame = parse_integral(cols[0], "frame", line_no)?;
        let agent = parse_integral(cols[1], "agent id", line_no)?;
        let a = parse_coordinate(cols[2], line_no)?;
        let b = parse_coordinate(cols[3], line_no)?;
        let (x, y) = match order {
            ColumnOrder::FrameAgentXy => (a, b),
            ColumnOrder::FrameAgentYx => (b, a),
        };
        out.push(RawRecord { frame, agent, x, y });
    }
    Ok(out)
}

/// Parse one trajectory file into a scene named `id`.
pub fn parse_trajectory<R: Read>(reader: R, id: &str, opts: &ParseOptions) -> Result<Scene> {
    if opts.subsample == 0 {
        return Err(Error::InvalidConfig("subsample factor must be at least 1".into()));
    }
    let raw = parse_lines(BufReader::new(reader), opts.column_order)?;
    if raw.is_empty() {
        return Err(Error::EmptyRecords);
    }

    let mut frames: Vec<i64> = raw.iter().map(|r| r.frame).collect();
    frames.sort_unstable();
    frames.dedup();
    let first = frames[0];
    let step = frames.windows(2).fold(0, |g, w| gcd(g, w[1] - w[0])).max(1);

    // (agent id) -> frame index -> position, keeping only subsampled frames
    let mut tracks: BTreeMap<i64, BTreeMap<usize, (f64, f64)>> = BTreeMap::new();
    let mut duplicates = Vec::new();
    for r in &raw {
        let idx = ((r.frame - first) / step) as usize;
        if !idx.is_multiple_of(opts.subsample) {
            continue;
        }
        let idx = idx / opts.subsample;
        if let Some(prev) = tracks.entry(r.agent).or_default().insert(idx, (r.x, r.y)) {
            duplicates.push((idx, r.agent, prev, (r.x, r.y)));
        }
    }
    if let Some(&(frame, _, (x1, y1), (x2, y2))) = duplicates.first() {
        let agent = tracks.keys().position(|&k| k == duplicates[0].1).unwrap_or(0);
        return Err(Error::DuplicateRecord {
            frame,
            agent,
            x1,
            y1,
            x2,
            y2,
        });
    }

    // split each track at gaps; pieces get indices in (id, piece start) order
    let mut records = Vec::with_capacity(raw.len());
    let mut next_agent = 0;
    for track in tracks.values() {
        let mut prev: Option<usize> = None;
        for (&f, &(x, y)) in track {
            if prev.is_some_and(|p| f != p + 1) {
                next_agent += 1;
            }
            records.push(Record::new(f, next_agent, x, y));
            prev = Some(f);
        }
        next_agent += 1;
    }
    if next_agent < 2 {
        return Err(Error::TooFewAgents(next_agent));
    }
    Ok(build_scene(&records, opts.frame_interval)?.with_id(id))
}

pub fn parse_trajectory_str(text: &str, id: &str, opts: &ParseOptions) -> Result<Scene> {
    parse_trajectory(text.as_bytes(), id, opts)
}

/// Parse a file; the scene id is the file stem.
pub fn read_trajectory_file(path: impl AsRef<Path>, opts: &ParseOptions) -> Result<Scene> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_trajectory(file, &id, opts)
}

/// One line per present state, frame-major then agent-ascending, coordinates
/// with nine decimals.
pub fn format_trajectory(scene: &Scene) -> String {
    let mut out = String::new();
    for r in scene.to_records() {
        let _ = writeln!(out, "{} {} {:.9} {:.9}", r.frame, r.agent, r.x, r.y);
    }
    out
}

pub fn write_trajectory<W: Write>(scene: &Scene, mut writer: W) -> Result<()> {
    writer.write_all(format_trajectory(scene).as_bytes())?;
    Ok(())
}

pub fn write_trajectory_file(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_trajectory(scene)).map_err(|e| Error::file(path, e))
}
