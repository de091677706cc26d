use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i64; 2]", into = "[i64; 2]")]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0, y: 0 };

    pub const fn new(x: i64, y: i64) -> Self {
        Point { x, y }
    }

    pub fn l1(self) -> i64 {
        self.x.abs() + self.y.abs()
    }

    pub fn linf(self) -> i64 {
        self.x.abs().max(self.y.abs())
    }

    pub fn l1_dist(self, o: Point) -> i64 {
        (self - o).l1()
    }

    pub fn is_adjacent(self, o: Point) -> bool {
        self.l1_dist(o) == 1
    }

    pub fn to_f64(self) -> [f64; 2] {
        [self.x as f64, self.y as f64]
    }
}

impl From<[i64; 2]> for Point {
    fn from(a: [i64; 2]) -> Self {
        Point::new(a[0], a[1])
    }
}

impl From<Point> for [i64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<i64> for Point {
    type Output = Point;
    fn mul(self, k: i64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Neighbour steps in the fixed order east, north, west, south.
pub const STEPS: [Point; 4] = [
    Point::new(1, 0),
    Point::new(0, 1),
    Point::new(-1, 0),
    Point::new(0, -1),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// An undirected nearest-neighbour edge, stored by its lower-left endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub base: Point,
    pub axis: Axis,
}

impl Edge {
    pub fn horizontal(base: Point) -> Edge {
        Edge { base, axis: Axis::Horizontal }
    }

    pub fn vertical(base: Point) -> Edge {
        Edge { base, axis: Axis::Vertical }
    }

    pub fn between(a: Point, b: Point) -> Option<Edge> {
        let d = b - a;
        match (d.x, d.y) {
            (1, 0) => Some(Edge::horizontal(a)),
            (-1, 0) => Some(Edge::horizontal(b)),
            (0, 1) => Some(Edge::vertical(a)),
            (0, -1) => Some(Edge::vertical(b)),
            _ => None,
        }
    }

    pub fn endpoints(self) -> (Point, Point) {
        match self.axis {
            Axis::Horizontal => (self.base, self.base + Point::new(1, 0)),
            Axis::Vertical => (self.base, self.base + Point::new(0, 1)),
        }
    }
}

/// The box B(n) = [-n, n]^2 of the square lattice with a dense vertex and edge numbering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoxLattice {
    pub n: i64,
}

impl BoxLattice {
    pub fn new(n: i64) -> Self {
        BoxLattice { n }
    }

    pub fn side(&self) -> usize {
        (2 * self.n + 1) as usize
    }

    pub fn num_vertices(&self) -> usize {
        self.side() * self.side()
    }

    pub fn num_edges(&self) -> usize {
        2 * self.side() * (self.side() - 1)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x.abs() <= self.n && p.y.abs() <= self.n
    }

    pub fn index(&self, p: Point) -> Option<usize> {
        if self.contains(p) {
            Some(self.index_unchecked(p))
        } else {
            None
        }
    }

    #[inline]
    pub fn index_unchecked(&self, p: Point) -> usize {
        (p.y + self.n) as usize * self.side() + (p.x + self.n) as usize
    }

    #[inline]
    pub fn point(&self, idx: usize) -> Point {
        let s = self.side();
        Point::new((idx % s) as i64 - self.n, (idx / s) as i64 - self.n)
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.num_vertices()).map(move |i| self.point(i))
    }

    pub fn edge_id(&self, e: Edge) -> Option<usize> {
        let (a, b) = e.endpoints();
        if !self.contains(a) || !self.contains(b) {
            return None;
        }
        let s = self.side();
        let row = (e.base.y + self.n) as usize;
        let col = (e.base.x + self.n) as usize;
        Some(match e.axis {
            Axis::Horizontal => row * (s - 1) + col,
            Axis::Vertical => s * (s - 1) + row * s + col,
        })
    }

    pub fn edge(&self, id: usize) -> Edge {
        let s = self.side();
        let h = s * (s - 1);
        if id < h {
            let (row, col) = (id / (s - 1), id % (s - 1));
            Edge::horizontal(Point::new(col as i64 - self.n, row as i64 - self.n))
        } else {
            let id = id - h;
            let (row, col) = (id / s, id % s);
            Edge::vertical(Point::new(col as i64 - self.n, row as i64 - self.n))
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.num_edges()).map(move |i| self.edge(i))
    }
}

/// Closed lattice rectangle [x0, x1] x [y0, y1].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Rect {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> i64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0
    }

    pub fn is_empty(&self) -> bool {
        self.x1 < self.x0 || self.y1 < self.y0
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn contains_rect(&self, o: &Rect) -> bool {
        o.x0 >= self.x0 && o.x1 <= self.x1 && o.y0 >= self.y0 && o.y1 <= self.y1
    }

    pub fn intersect(&self, o: &Rect) -> Rect {
        Rect::new(
            self.x0.max(o.x0),
            self.y0.max(o.y0),
            self.x1.min(o.x1),
            self.y1.min(o.y1),
        )
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (self.y0..=self.y1).flat_map(move |y| (self.x0..=self.x1).map(move |x| Point::new(x, y)))
    }

    pub fn vertex_count(&self) -> i64 {
        if self.is_empty() {
            0
        } else {
            (self.width() + 1) * (self.height() + 1)
        }
    }
}

/// SplitMix64 finaliser, used for deterministic per-vertex marks.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
