//! CSV trajectory files.
//!
//! Format: header `traj_id,seq,lon,lat`, then one row per point. Rows of one
//! trajectory are contiguous, `seq` starts at 0 and increments by 1. Written
//! floats use the shortest representation that round-trips, so a
//! read-write-read cycle is lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::traj::{Point, Trajectory};

const HEADER: &str = "traj_id,seq,lon,lat";

/// Read trajectories from a CSV file. An empty file yields an empty list.
pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_trajectories(BufReader::new(file))
        .map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
}

/// Read trajectories from any reader; see [`load_trajectories`].
pub fn read_trajectories<R: Read>(reader: R) -> Result<Vec<Trajectory>> {
    let mut lines = BufReader::new(reader).lines().enumerate();

    let header = loop {
        match lines.next() {
            None => return Ok(Vec::new()),
            Some((_, Err(e))) => return Err(Error::Io(e)),
            Some((lineno, Ok(line))) => {
                if line.trim().is_empty() {
                    continue;
                }
                break (lineno + 1, line);
            }
        }
    };
    if header.1.trim() != HEADER {
        return Err(Error::Data(format!(
            "line {}: expected header '{HEADER}', got '{}'",
            header.0,
            header.1.trim()
        )));
    }

    let mut out: Vec<Trajectory> = Vec::new();
    let mut seen_ids: std::collections::HashSet<String> = std::collections::HashSet::new();

    for (lineno, line) in lines {
        let lineno = lineno + 1;
        let line = line.map_err(Error::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (id, seq, lon, lat) = match (fields.next(), fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), Some(c), Some(d), None) => (a, b, c, d),
            _ => {
                return Err(Error::Data(format!(
                    "line {lineno}: expected 4 comma-separated fields"
                )))
            }
        };
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::Data(format!("line {lineno}: empty traj_id")));
        }
        let seq: usize = seq.trim().parse().map_err(|_| {
            Error::Data(format!("line {lineno}: bad seq '{}'", seq.trim()))
        })?;
        let lon: f64 = lon.trim().parse().map_err(|_| {
            Error::Data(format!("line {lineno}: bad lon '{}'", lon.trim()))
        })?;
        let lat: f64 = lat.trim().parse().map_err(|_| {
            Error::Data(format!("line {lineno}: bad lat '{}'", lat.trim()))
        })?;
        if !lon.is_finite() || !lat.is_finite() {
            return Err(Error::Data(format!(
                "line {lineno}: non-finite coordinate"
            )));
        }

        let start_new = match out.last() {
            Some(t) => t.id != id,
            None => true,
        };
        if start_new {
            if !seen_ids.insert(id.to_string()) {
                return Err(Error::Data(format!(
                    "line {lineno}: trajectory '{id}' reappears after other rows"
                )));
            }
            if seq != 0 {
                return Err(Error::Data(format!(
                    "line {lineno}: trajectory '{id}' must start at seq 0, got {seq}"
                )));
            }
            out.push(Trajectory::new(id, vec![Point::new(lon, lat)]));
        } else {
            let t = out.last_mut().unwrap();
            if seq != t.points.len() {
                return Err(Error::Data(format!(
                    "line {lineno}: trajectory '{id}' expected seq {}, got {seq}",
                    t.points.len()
                )));
            }
            t.points.push(Point::new(lon, lat));
        }
    }
    Ok(out)
}

/// Write trajectories to a CSV file, creating or truncating it.
pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{HEADER}")?;
    for t in trajs {
        for (seq, p) in t.points.iter().enumerate() {
            writeln!(w, "{},{},{},{}", t.id, seq, p.lon, p.lat)?;
        }
    }
    w.flush()?;
    Ok(())
}
