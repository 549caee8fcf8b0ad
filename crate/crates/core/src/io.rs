//! Text serialization: graph/clustering files, covariance CSV, and batch
//! CSV.
//!
//! Graph files are line oriented: a `R m` header, one `index l_x l_y label`
//! line per region, and an optional explicit `edges E` section. Without an
//! edge section the adjacency is reconstructed as lattice 4-connectivity
//! from the coordinates. Numbers use Rust's shortest round-trip decimal
//! formatting, so files are diff-stable across platforms.

use nalgebra::DMatrix;

use crate::covariance::{CovarianceMatrix, CovarianceOrigin};
use crate::error::{Error, Result};
use crate::estimator::ExperimentBatch;
use crate::graph::{Clustering, RegionGraph};

/// Render a graph and clustering to the line-oriented text format, with an
/// explicit edge list.
pub fn render_graph(g: &RegionGraph, c: &Clustering) -> String {
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", g.region_count(), c.cluster_count()));
    for i in 0..g.region_count() {
        let (x, y) = g.coord(i);
        out.push_str(&format!("{i} {x} {y} {}\n", c.label(i)));
    }
    let edges = g.edges();
    out.push_str(&format!("edges {}\n", edges.len()));
    for (i, j) in edges {
        out.push_str(&format!("{i} {j}\n"));
    }
    out
}

/// Parse the text format back into a graph and clustering.
pub fn parse_graph(text: &str) -> Result<(RegionGraph, Clustering)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty graph file".into()))?;
    let mut head = header.split_whitespace();
    let r: usize = parse_field(head.next(), "region count")?;
    let m: usize = parse_field(head.next(), "cluster count")?;
    let mut coords = vec![(f64::NAN, f64::NAN); r];
    let mut labels = vec![0usize; r];
    let mut seen = vec![false; r];
    for _ in 0..r {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("expected {r} region lines")))?;
        let mut fields = line.split_whitespace();
        let idx: usize = parse_field(fields.next(), "region index")?;
        if idx >= r {
            return Err(Error::Parse(format!("region index {idx} out of range (R = {r})")));
        }
        if seen[idx] {
            return Err(Error::Parse(format!("duplicate region index {idx}")));
        }
        seen[idx] = true;
        let x: f64 = parse_field(fields.next(), "l_x")?;
        let y: f64 = parse_field(fields.next(), "l_y")?;
        let label: usize = parse_field(fields.next(), "cluster label")?;
        coords[idx] = (x, y);
        labels[idx] = label;
    }
    let edges = match lines.next() {
        None => lattice_edges(&coords),
        Some(section) => {
            let mut fields = section.split_whitespace();
            match fields.next() {
                Some("edges") => {
                    let count: usize = parse_field(fields.next(), "edge count")?;
                    let mut edges = Vec::with_capacity(count);
                    for _ in 0..count {
                        let line = lines
                            .next()
                            .ok_or_else(|| Error::Parse(format!("expected {count} edge lines")))?;
                        let mut f = line.split_whitespace();
                        let i: usize = parse_field(f.next(), "edge endpoint")?;
                        let j: usize = parse_field(f.next(), "edge endpoint")?;
                        edges.push((i, j));
                    }
                    edges
                }
                other => {
                    return Err(Error::Parse(format!(
                        "expected 'edges' section, found {other:?}"
                    )))
                }
            }
        }
    };
    let graph = RegionGraph::from_parts(coords, &edges)?;
    let clustering = Clustering::new(labels)?;
    if clustering.cluster_count() != m {
        return Err(Error::Parse(format!(
            "header declares {m} clusters but labels span {}",
            clustering.cluster_count()
        )));
    }
    Ok((graph, clustering))
}

/// 4-connectivity over integer lattice coordinates.
fn lattice_edges(coords: &[(f64, f64)]) -> Vec<(usize, usize)> {
    let index: std::collections::HashMap<(i64, i64), usize> = coords
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| ((x.round() as i64, y.round() as i64), i))
        .collect();
    let mut edges = Vec::new();
    for (i, &(x, y)) in coords.iter().enumerate() {
        let (cx, cy) = (x.round() as i64, y.round() as i64);
        for next in [(cx + 1, cy), (cx, cy + 1)] {
            if let Some(&j) = index.get(&next) {
                edges.push((i, j));
            }
        }
    }
    edges
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T> {
    field
        .ok_or_else(|| Error::Parse(format!("missing {what}")))?
        .parse::<T>()
        .map_err(|_| Error::Parse(format!("malformed {what}: '{}'", field.unwrap())))
}

/// Covariance as CSV: R rows of R comma-separated values.
pub fn render_covariance(sigma: &CovarianceMatrix) -> String {
    render_matrix(sigma.values())
}

pub fn render_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_covariance(text: &str) -> Result<CovarianceMatrix> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            line.split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad covariance entry '{f}'")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let r = rows.len();
    if r == 0 {
        return Err(Error::Parse("empty covariance file".into()));
    }
    if rows.iter().any(|row| row.len() != r) {
        return Err(Error::Parse(format!("covariance rows must all have {r} columns")));
    }
    let m = DMatrix::from_fn(r, r, |i, j| rows[i][j]);
    CovarianceMatrix::new(m, CovarianceOrigin::External)
}

/// Batch as CSV with header `t,i,O,A,Y`, rows ordered by repetition then
/// region.
pub fn render_batch(batch: &ExperimentBatch) -> String {
    let mut out = String::from("t,i,O,A,Y\n");
    for t in 0..batch.n_reps() {
        for i in 0..batch.region_count() {
            out.push_str(&format!(
                "{t},{i},{},{},{}\n",
                batch.covariates[(t, i)],
                batch.treatments[(t, i)],
                batch.outcomes[(t, i)]
            ));
        }
    }
    out
}

/// Parse a batch CSV against the design it was collected under.
pub fn parse_batch(text: &str, design: &Clustering) -> Result<ExperimentBatch> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == "t,i,O,A,Y" => {}
        other => return Err(Error::Parse(format!("expected batch header 't,i,O,A,Y', got {other:?}"))),
    }
    let r = design.len();
    let mut cells: Vec<(usize, usize, f64, u8, f64)> = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!("batch row needs 5 fields: '{line}'")));
        }
        let t: usize = parse_field(Some(fields[0]), "repetition index")?;
        let i: usize = parse_field(Some(fields[1]), "region index")?;
        let o: f64 = parse_field(Some(fields[2]), "covariate")?;
        let a: u8 = parse_field(Some(fields[3]), "treatment")?;
        let y: f64 = parse_field(Some(fields[4]), "outcome")?;
        if i >= r {
            return Err(Error::Parse(format!("region index {i} out of range (R = {r})")));
        }
        cells.push((t, i, o, a, y));
    }
    if cells.is_empty() {
        return Err(Error::Parse("batch file has no data rows".into()));
    }
    let n = cells.iter().map(|c| c.0).max().unwrap() + 1;
    if cells.len() != n * r {
        return Err(Error::Parse(format!(
            "batch file has {} cells, expected {n} repetitions x {r} regions",
            cells.len()
        )));
    }
    let mut covariates = DMatrix::zeros(n, r);
    let mut treatments = DMatrix::zeros(n, r);
    let mut outcomes = DMatrix::zeros(n, r);
    let mut seen = vec![false; n * r];
    for (t, i, o, a, y) in cells {
        if seen[t * r + i] {
            return Err(Error::Parse(format!("duplicate batch cell ({t}, {i})")));
        }
        seen[t * r + i] = true;
        covariates[(t, i)] = o;
        treatments[(t, i)] = a;
        outcomes[(t, i)] = y;
    }
    ExperimentBatch::new(covariates, treatments, outcomes, design.clone())
}
