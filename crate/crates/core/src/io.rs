//! Plain CSV readers and writers. Lines starting with `#` are comments;
//! the first other line is the header.

use std::io::Write;

use crate::benchmark::{Trajectory, TrajectorySet, TransitionSet};
use crate::error::{check_dim, Error, Result};
use crate::points::PointSet;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn parse_table(text: &str) -> Result<Table> {
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match &header {
            None => header = Some(fields.iter().map(|s| s.to_string()).collect()),
            Some(h) => {
                if fields.len() != h.len() {
                    return Err(Error::Parse { line: k + 1, message: format!("expected {} fields, found {}", h.len(), fields.len()) });
                }
                let row = fields
                    .iter()
                    .map(|f| f.parse::<f64>().map_err(|e| Error::Parse { line: k + 1, message: format!("{f:?}: {e}") }))
                    .collect::<Result<Vec<_>>>()?;
                rows.push(row);
            }
        }
    }
    let header = header.ok_or(Error::Parse { line: 0, message: "missing header".into() })?;
    Ok(Table { header, rows })
}

fn coord_names(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("{prefix}{j}")).collect()
}

/// Grid column names: `gx,gy` in two dimensions, `g1..gd` otherwise.
pub fn grid_names(d: usize) -> Vec<String> {
    if d == 2 {
        vec!["gx".into(), "gy".into()]
    } else {
        coord_names("g", d)
    }
}

/// Full-precision, round-trippable float formatting.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Rows `traj_id,t,x1..xd`.
pub fn write_trajectories<W: Write>(ts: &TrajectorySet, mut out: W) -> Result<()> {
    let mut header = vec!["traj_id".to_string(), "t".to_string()];
    header.extend(coord_names("x", ts.dim()));
    writeln!(out, "{}", header.join(","))?;
    for (i, t) in ts.trajectories().iter().enumerate() {
        for (k, x) in t.states().enumerate() {
            let vals: Vec<String> = x.iter().map(|&v| fmt_f64(v)).collect();
            writeln!(out, "{i},{k},{}", vals.join(","))?;
        }
    }
    Ok(())
}

pub fn read_trajectories(text: &str) -> Result<TrajectorySet> {
    let table = parse_table(text)?;
    let d = table.header.len().checked_sub(2).filter(|&d| d > 0).ok_or(Error::Parse { line: 0, message: "trajectory file needs traj_id,t,x1..".into() })?;
    let mut trajs: Vec<Vec<f64>> = Vec::new();
    for row in &table.rows {
        let id = row[0] as usize;
        if id == trajs.len() {
            trajs.push(Vec::new());
        } else if id + 1 != trajs.len() {
            return Err(Error::Parse { line: 0, message: format!("trajectory ids must be contiguous, saw {id}") });
        }
        trajs[id].extend_from_slice(&row[2..]);
    }
    TrajectorySet::new(trajs.into_iter().map(|data| Trajectory::new(d, data)).collect::<Result<Vec<_>>>()?)
}

/// Rows `x1..xd,y1..yd` (source, successor).
pub fn write_pairs<W: Write>(pairs: &TransitionSet, mut out: W) -> Result<()> {
    let d = pairs.sources.dim();
    let mut header = coord_names("x", d);
    header.extend(coord_names("y", d));
    writeln!(out, "{}", header.join(","))?;
    for (s, t) in pairs.sources.rows().zip(pairs.targets.rows()) {
        let vals: Vec<String> = s.iter().chain(t).map(|&v| fmt_f64(v)).collect();
        writeln!(out, "{}", vals.join(","))?;
    }
    Ok(())
}

pub fn read_pairs(text: &str) -> Result<TransitionSet> {
    let table = parse_table(text)?;
    let w = table.header.len();
    if w == 0 || w % 2 != 0 {
        return Err(Error::Parse { line: 0, message: "pair file needs x1..xd,y1..yd".into() });
    }
    let d = w / 2;
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for row in &table.rows {
        src.extend_from_slice(&row[..d]);
        dst.extend_from_slice(&row[d..]);
    }
    TransitionSet::new(PointSet::new(d, src)?, PointSet::new(d, dst)?)
}

/// Grid coordinates followed by named value columns.
pub fn write_grid<W: Write>(points: &PointSet, columns: &[(&str, &[f64])], mut out: W) -> Result<()> {
    for (_, c) in columns {
        check_dim(points.len(), c.len())?;
    }
    let mut header = grid_names(points.dim());
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    writeln!(out, "{}", header.join(","))?;
    for (g, x) in points.rows().enumerate() {
        let vals: Vec<String> = x.iter().copied().chain(columns.iter().map(|(_, c)| c[g])).map(fmt_f64).collect();
        writeln!(out, "{}", vals.join(","))?;
    }
    Ok(())
}

/// Reads a grid file, returning the points and the named column.
pub fn read_grid(text: &str, dim: usize, column: &str) -> Result<(PointSet, Vec<f64>)> {
    let table = parse_table(text)?;
    let names = grid_names(dim);
    if table.header.len() < dim || table.header[..dim] != names[..] {
        return Err(Error::Parse { line: 0, message: format!("grid file must start with {}", names.join(",")) });
    }
    let c = table.column(column).ok_or(Error::Parse { line: 0, message: format!("missing column {column}") })?;
    let mut data = Vec::with_capacity(table.rows.len() * dim);
    let mut vals = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        data.extend_from_slice(&row[..dim]);
        vals.push(row[c]);
    }
    Ok((PointSet::new(dim, data)?, vals))
}
