//! Plain-text grid format: one header row of column nodes, then one row per
//! row node. Values use 17 significant digits so a write/read round trip is
//! exact; unavailable values are written as `NaN`.

use crate::error::{Result, SlvError};
use crate::grids::{Axis, DensitySlice, Surface, MESH_TOL};

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn csv_err(e: csv::Error) -> SlvError {
    SlvError::Parse(e.to_string())
}

fn write_grid(corner: &str, rows: &Axis, cols: &Axis, values: &[f64]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let header =
        std::iter::once(corner.to_string()).chain((0..cols.len()).map(|i| fmt(cols.node(i))));
    w.write_record(header).expect("in-memory write");
    for (n, row) in values.chunks(cols.len()).enumerate() {
        let record = std::iter::once(fmt(rows.node(n))).chain(row.iter().map(|&v| fmt(v)));
        w.write_record(record).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

fn parse_num(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| SlvError::Parse(format!("{what}: `{s}`: {e}")))
}

/// Rebuilds a uniform axis from listed nodes, rejecting anything non-uniform.
fn axis_from_nodes(nodes: &[f64], name: &str) -> Result<Axis> {
    if nodes.len() < 2 {
        return Err(SlvError::Parse(format!(
            "{name} axis needs at least 2 nodes"
        )));
    }
    let (min, max) = (nodes[0], nodes[nodes.len() - 1]);
    let axis = Axis::new(min, max, (max - min) / (nodes.len() - 1) as f64)?;
    let tol = MESH_TOL * (1.0 + min.abs().max(max.abs()));
    if axis.len() != nodes.len()
        || nodes
            .iter()
            .enumerate()
            .any(|(i, &v)| (axis.node(i) - v).abs() > tol)
    {
        return Err(SlvError::Parse(format!(
            "{name} nodes are not evenly spaced"
        )));
    }
    Ok(axis)
}

fn read_grid(text: &str, corner: &str) -> Result<(Axis, Axis, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| SlvError::Parse("empty grid file".into()))?
        .map_err(csv_err)?;
    let tag = header.get(0).unwrap_or_default().trim();
    if tag != corner {
        return Err(SlvError::Parse(format!(
            "expected header to start with `{corner}`, got `{tag}`"
        )));
    }
    let cols: Vec<f64> = header
        .iter()
        .skip(1)
        .map(|s| parse_num(s, "header"))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (k, record) in records.enumerate() {
        let record = record.map_err(csv_err)?;
        let what = format!("row {}", k + 2);
        rows.push(parse_num(record.get(0).unwrap_or_default(), &what)?);
        for c in record.iter().skip(1) {
            values.push(parse_num(c, &what)?);
        }
    }
    Ok((
        axis_from_nodes(&rows, "row")?,
        axis_from_nodes(&cols, "column")?,
        values,
    ))
}

/// Surface with header `t\x,x_0,...` and rows `t_n,v_n0,...`.
pub fn write_surface(s: &Surface) -> String {
    write_grid("t\\x", s.time_axis(), s.x_axis(), s.values())
}

pub fn read_surface(text: &str) -> Result<Surface> {
    let (t, x, values) = read_grid(text, "t\\x")?;
    Surface::new(t, x, values)
}

/// Density slice with header `x\v,v_0,...` and one row per x-node.
pub fn write_density(d: &DensitySlice) -> String {
    write_grid("x\\v", d.x_axis(), d.v_axis(), d.values())
}

pub fn read_density(text: &str, time_index: usize) -> Result<DensitySlice> {
    let (x, v, values) = read_grid(text, "x\\v")?;
    DensitySlice::new(x, v, values, time_index)
}
