//! Structured triangulations of the unit square.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Side of the unit square an edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Bottom => "bottom",
            Side::Top => "top",
        };
        f.write_str(s)
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            "bottom" => Ok(Side::Bottom),
            "top" => Ok(Side::Top),
            other => Err(Error::InvalidArgument(format!(
                "unknown boundary tag '{other}'"
            ))),
        }
    }
}

/// A boundary segment: any union of the four sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct SideSet(u8);

impl SideSet {
    pub const EMPTY: SideSet = SideSet(0);
    pub const ALL: SideSet = SideSet(0b1111);

    pub fn from_sides(sides: &[Side]) -> Self {
        SideSet(sides.iter().fold(0, |acc, s| acc | s.bit()))
    }

    pub fn contains(self, side: Side) -> bool {
        self.0 & side.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn complement(self) -> Self {
        SideSet(!self.0 & 0b1111)
    }

    pub fn sides(self) -> impl Iterator<Item = Side> {
        Side::ALL.into_iter().filter(move |s| self.contains(*s))
    }
}

impl fmt::Display for SideSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        if *self == SideSet::ALL {
            return f.write_str("all");
        }
        let names: Vec<String> = self.sides().map(|s| s.to_string()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for SideSet {
    type Err = Error;

    /// Accepts `none`, `all`, or a comma separated list of side names.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "" | "none" => Ok(SideSet::EMPTY),
            "all" => Ok(SideSet::ALL),
            list => {
                let sides = list
                    .split(',')
                    .map(str::parse)
                    .collect::<Result<Vec<Side>>>()?;
                Ok(SideSet::from_sides(&sides))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub side: Side,
}

/// Conforming triangulation of the unit square.
#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    h: f64,
    subdivisions: usize,
}

impl Mesh {
    /// `n x n` squares, each split along its bottom-left to top-right diagonal.
    /// Nodes are numbered lexicographically, `x` fastest.
    pub fn unit_square(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "mesh subdivision count must be >= 1".into(),
            ));
        }
        let np = n + 1;
        let id = |i: usize, j: usize| j * np + i;
        let nodes = (0..np)
            .flat_map(|j| (0..np).map(move |i| [i as f64 / n as f64, j as f64 / n as f64]))
            .collect();
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        let mut boundary_edges = Vec::with_capacity(4 * n);
        for i in 0..n {
            boundary_edges.push(BoundaryEdge {
                nodes: [id(i, 0), id(i + 1, 0)],
                side: Side::Bottom,
            });
            boundary_edges.push(BoundaryEdge {
                nodes: [id(i + 1, n), id(i, n)],
                side: Side::Top,
            });
            boundary_edges.push(BoundaryEdge {
                nodes: [id(n, i), id(n, i + 1)],
                side: Side::Right,
            });
            boundary_edges.push(BoundaryEdge {
                nodes: [id(0, i + 1), id(0, i)],
                side: Side::Left,
            });
        }
        Ok(Self {
            nodes,
            triangles,
            boundary_edges,
            h: std::f64::consts::SQRT_2 / n as f64,
            subdivisions: n,
        })
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Longest edge length.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn subdivisions(&self) -> usize {
        self.subdivisions
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|k| self.nodes[k]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Sorted node indices lying on any side of `set`.
    pub fn boundary_nodes(&self, set: SideSet) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .boundary_edges
            .iter()
            .filter(|e| set.contains(e.side))
            .flat_map(|e| e.nodes)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Writes `# <nodes> <triangles>`, then `x y` lines, then `i j k` lines.
    pub fn write_dump(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# {} {}", self.num_nodes(), self.num_triangles())?;
        for p in &self.nodes {
            writeln!(w, "{:.17e} {:.17e}", p[0], p[1])?;
        }
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}
