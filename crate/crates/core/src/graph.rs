//! Spatial region graphs and cluster partitions.
//!
//! A [`RegionGraph`] holds the lattice coordinates of `R` regions together
//! with a symmetric binary adjacency and the self-inclusive neighborhoods
//! `N_i = {i} ∪ {j : W_ij = 1}` that every exposure probability and MSE
//! formula consumes. A [`Clustering`] is a partition of the regions — the
//! object a cluster-randomized design randomizes over.
//!
//! Regions on lattice grids are indexed row-major; this index order defines
//! the index distance `|i - j|` used by the model covariance structures.

use crate::bits::BitSet;
use crate::error::{Error, Result};

/// Immutable spatial graph over `R` regions.
#[derive(Clone, Debug)]
pub struct RegionGraph {
    coords: Vec<(f64, f64)>,
    adjacency: Vec<BitSet>,
    neighborhoods: Vec<Vec<usize>>,
}

impl RegionGraph {
    /// Build a graph from coordinates and an explicit undirected edge list.
    ///
    /// Coordinates must be unique; self-loops are rejected.
    pub fn from_parts(coords: Vec<(f64, f64)>, edges: &[(usize, usize)]) -> Result<Self> {
        let r = coords.len();
        if r == 0 {
            return Err(Error::InvalidArgument("graph must have at least one region".into()));
        }
        for (a, (x, y)) in coords.iter().enumerate() {
            for (x2, y2) in coords.iter().skip(a + 1) {
                if x == x2 && y == y2 {
                    return Err(Error::InvalidArgument(format!(
                        "duplicate region coordinates ({x}, {y})"
                    )));
                }
            }
        }
        let mut adjacency = vec![BitSet::new(r); r];
        for &(i, j) in edges {
            if i >= r || j >= r {
                return Err(Error::InvalidArgument(format!("edge ({i}, {j}) out of range")));
            }
            if i == j {
                return Err(Error::InvalidArgument(format!("self-loop on region {i}")));
            }
            adjacency[i].set(j);
            adjacency[j].set(i);
        }
        let neighborhoods = (0..r)
            .map(|i| {
                let mut n: Vec<usize> = (0..r).filter(|&j| j == i || adjacency[i].contains(j)).collect();
                n.sort_unstable();
                n
            })
            .collect();
        Ok(RegionGraph { coords, adjacency, neighborhoods })
    }

    /// Build the 4-connectivity graph over a set of integer lattice cells,
    /// indexed row-major (by `y`, then `x`).
    pub fn from_lattice_cells(mut cells: Vec<(i64, i64)>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidArgument("shape produced zero regions".into()));
        }
        cells.sort_unstable_by_key(|&(x, y)| (y, x));
        cells.dedup();
        let index: std::collections::HashMap<(i64, i64), usize> =
            cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut edges = Vec::new();
        for (i, &(x, y)) in cells.iter().enumerate() {
            // Right and up neighbors suffice; the left/down duals are the same edges.
            for next in [(x + 1, y), (x, y + 1)] {
                if let Some(&j) = index.get(&next) {
                    edges.push((i, j));
                }
            }
        }
        let coords = cells.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
        RegionGraph::from_parts(coords, &edges)
    }

    pub fn region_count(&self) -> usize {
        self.coords.len()
    }

    pub fn coord(&self, i: usize) -> (f64, f64) {
        self.coords[i]
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].contains(j)
    }

    /// The closed neighborhood `N_i` (sorted, includes `i` itself).
    pub fn neighborhood(&self, i: usize) -> &[usize] {
        &self.neighborhoods[i]
    }

    /// Number of neighbors of `i`, excluding `i` itself.
    pub fn degree(&self, i: usize) -> usize {
        self.neighborhoods[i].len() - 1
    }

    /// Maximum degree over all regions.
    pub fn max_degree(&self) -> usize {
        (0..self.region_count()).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    /// Undirected edge list with `i < j`, in row-major index order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let r = self.region_count();
        let mut out = Vec::new();
        for i in 0..r {
            for j in (i + 1)..r {
                if self.adjacent(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Lattice grid shapes used by the synthetic environments.
#[derive(Clone, Debug, PartialEq)]
pub enum GridShape {
    /// `side × side` cells.
    Square { side: u32 },
    /// `width × height` cells.
    Rectangle { width: u32, height: u32 },
    /// All integer cells with `x² + y² ≤ radius²`, centered at the origin.
    Circle { radius: u32 },
    /// Circle cells split into `sectors` equal angular blades separated by
    /// one-cell-wide gaps along each sector's lower boundary ray.
    Fan { radius: u32, sectors: u32 },
}

/// Construct a spatial grid with 4-connectivity (edge-sharing cells are
/// neighbors). Rejects parameter combinations yielding zero regions.
pub fn build_grid(shape: &GridShape) -> Result<RegionGraph> {
    let cells: Vec<(i64, i64)> = match *shape {
        GridShape::Square { side } => lattice_rect(side, side),
        GridShape::Rectangle { width, height } => lattice_rect(width, height),
        GridShape::Circle { radius } => circle_cells(radius),
        GridShape::Fan { radius, sectors } => {
            if sectors == 0 {
                return Err(Error::InvalidArgument("fan needs at least one sector".into()));
            }
            let width = std::f64::consts::TAU / f64::from(sectors);
            circle_cells(radius)
                .into_iter()
                .filter(|&(x, y)| {
                    let r = ((x * x + y * y) as f64).sqrt();
                    let theta = (y as f64).atan2(x as f64).rem_euclid(std::f64::consts::TAU);
                    let lower = (theta / width).floor() * width;
                    // Perpendicular distance to the sector's lower boundary ray.
                    r * (theta - lower).sin() >= 1.0
                })
                .collect()
        }
    };
    RegionGraph::from_lattice_cells(cells)
}

fn lattice_rect(width: u32, height: u32) -> Vec<(i64, i64)> {
    let mut cells = Vec::new();
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            cells.push((x, y));
        }
    }
    cells
}

fn circle_cells(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut cells = Vec::new();
    for y in -r..=r {
        for x in -r..=r {
            if x * x + y * y <= r * r {
                cells.push((x, y));
            }
        }
    }
    cells
}

/// A partition of regions into `m` non-empty clusters, labeled `0..m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clustering {
    labels: Vec<usize>,
    cluster_count: usize,
}

impl Clustering {
    /// Wrap a label vector. Labels must be dense: every value in
    /// `[0, max_label]` used at least once.
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("clustering over zero regions".into()));
        }
        let m = labels.iter().max().unwrap() + 1;
        let mut used = vec![false; m];
        for &l in &labels {
            used[l] = true;
        }
        if let Some(missing) = used.iter().position(|u| !u) {
            return Err(Error::InvalidArgument(format!("cluster label {missing} is empty")));
        }
        Ok(Clustering { labels, cluster_count: m })
    }

    /// The global design: one cluster covering all regions.
    pub fn global(region_count: usize) -> Self {
        Clustering { labels: vec![0; region_count], cluster_count: 1 }
    }

    /// The individual design: every region its own cluster.
    pub fn individual(region_count: usize) -> Self {
        Clustering { labels: (0..region_count).collect(), cluster_count: region_count }
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    /// Number of regions.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Region indices of every cluster, in label order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Relabel so clusters appear in first-occurrence order of the input.
    pub fn canonicalized(&self) -> Clustering {
        let mut map = vec![usize::MAX; self.cluster_count];
        let mut next = 0;
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                if map[l] == usize::MAX {
                    map[l] = next;
                    next += 1;
                }
                map[l]
            })
            .collect();
        Clustering { labels, cluster_count: next }
    }
}

/// Partition a full rectangular grid into `tiles_per_side²` contiguous
/// axis-aligned tiles. When a side is not divisible, the last tile row or
/// column absorbs the remainder. Errors on non-grid graphs and on
/// `tiles_per_side` exceeding a side length.
pub fn tiling_partition(g: &RegionGraph, tiles_per_side: usize) -> Result<Clustering> {
    if tiles_per_side == 0 {
        return Err(Error::InvalidArgument("tiles_per_side must be positive".into()));
    }
    let (min_x, min_y, width, height) = grid_extent(g)?;
    if tiles_per_side > width.min(height) {
        return Err(Error::InvalidArgument(format!(
            "{tiles_per_side} tiles per side exceed the {width}x{height} grid"
        )));
    }
    let base_x = width / tiles_per_side;
    let base_y = height / tiles_per_side;
    let labels = g
        .coords()
        .iter()
        .map(|&(x, y)| {
            let cx = (x as i64 - min_x) as usize;
            let cy = (y as i64 - min_y) as usize;
            let tx = (cx / base_x).min(tiles_per_side - 1);
            let ty = (cy / base_y).min(tiles_per_side - 1);
            ty * tiles_per_side + tx
        })
        .collect();
    Clustering::new(labels)
}

/// Bounding box of a graph that must be a complete `width × height` lattice.
fn grid_extent(g: &RegionGraph) -> Result<(i64, i64, usize, usize)> {
    let cells: Vec<(i64, i64)> = g
        .coords()
        .iter()
        .map(|&(x, y)| (x.round() as i64, y.round() as i64))
        .collect();
    let min_x = cells.iter().map(|c| c.0).min().unwrap();
    let max_x = cells.iter().map(|c| c.0).max().unwrap();
    let min_y = cells.iter().map(|c| c.1).min().unwrap();
    let max_y = cells.iter().map(|c| c.1).max().unwrap();
    let width = (max_x - min_x + 1) as usize;
    let height = (max_y - min_y + 1) as usize;
    if width * height != g.region_count() {
        return Err(Error::InvalidArgument(
            "tiling requires a full rectangular grid".into(),
        ));
    }
    Ok((min_x, min_y, width, height))
}

/// Boundary of cluster `j`: its regions with at least one neighbor outside.
pub fn boundary_regions(g: &RegionGraph, c: &Clustering, j: usize) -> Result<Vec<usize>> {
    check_graph_clustering(g, c)?;
    if j >= c.cluster_count() {
        return Err(Error::InvalidArgument(format!(
            "cluster label {j} out of range (m = {})",
            c.cluster_count()
        )));
    }
    Ok((0..g.region_count())
        .filter(|&i| c.label(i) == j && g.neighborhood(i).iter().any(|&n| c.label(n) != j))
        .collect())
}

/// Number of distinct clusters intersecting the closed neighborhood `N_i`.
pub fn cluster_touch_count(g: &RegionGraph, c: &Clustering, i: usize) -> usize {
    let mut seen = BitSet::new(c.cluster_count());
    for &n in g.neighborhood(i) {
        seen.set(c.label(n));
    }
    seen.count()
}

/// Number of clusters touched by both `N_i` and `N_{i2}` — the `m_{ii'}`
/// of the exact variance formula. Symmetric; equals the touch count on the
/// diagonal.
pub fn shared_cluster_count(g: &RegionGraph, c: &Clustering, i: usize, i2: usize) -> usize {
    let touched = |i: usize| {
        let mut s = BitSet::new(c.cluster_count());
        for &n in g.neighborhood(i) {
            s.set(c.label(n));
        }
        s
    };
    touched(i).intersection_count(&touched(i2))
}

/// Touched-cluster bitsets for all regions at once, for pairwise
/// `m_{ii'}` evaluation without rebuilding sets per pair.
pub(crate) fn touched_clusters(g: &RegionGraph, c: &Clustering) -> Vec<BitSet> {
    (0..g.region_count())
        .map(|i| {
            let mut s = BitSet::new(c.cluster_count());
            for &n in g.neighborhood(i) {
                s.set(c.label(n));
            }
            s
        })
        .collect()
}

pub(crate) fn check_graph_clustering(g: &RegionGraph, c: &Clustering) -> Result<()> {
    if g.region_count() != c.len() {
        return Err(Error::Dimension(format!(
            "graph has {} regions but clustering covers {}",
            g.region_count(),
            c.len()
        )));
    }
    Ok(())
}
