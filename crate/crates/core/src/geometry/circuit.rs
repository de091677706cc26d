use crate::error::{Error, Result};
use crate::lattice::{BoxLattice, Point};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

/// A simple closed lattice path, stored counterclockwise and rotated to start at its
/// lexicographically smallest vertex. The closing step back to the start is implicit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Circuit {
    vertices: Vec<Point>,
}

impl TryFrom<Vec<Point>> for Circuit {
    type Error = Error;
    fn try_from(v: Vec<Point>) -> Result<Circuit> {
        Circuit::new(v)
    }
}

impl From<Circuit> for Vec<Point> {
    fn from(c: Circuit) -> Vec<Point> {
        c.vertices
    }
}

pub fn twice_signed_area(vs: &[Point]) -> i64 {
    let k = vs.len();
    (0..k)
        .map(|i| {
            let (a, b) = (vs[i], vs[(i + 1) % k]);
            a.x * b.y - b.x * a.y
        })
        .sum()
}

impl Circuit {
    /// Validates a cyclic vertex list; a repeated closing vertex is accepted and dropped,
    /// clockwise input is reversed.
    pub fn new(mut vs: Vec<Point>) -> Result<Circuit> {
        if vs.len() > 1 && vs.first() == vs.last() {
            vs.pop();
        }
        if vs.len() < 4 {
            return Err(Error::InvalidCircuit(format!("{} vertices, need at least 4", vs.len())));
        }
        let k = vs.len();
        for i in 0..k {
            if !vs[i].is_adjacent(vs[(i + 1) % k]) {
                return Err(Error::InvalidCircuit(format!("non-unit step at {}", vs[i])));
            }
        }
        let mut seen = HashSet::with_capacity(k);
        for &v in &vs {
            if !seen.insert(v) {
                return Err(Error::InvalidCircuit(format!("repeated vertex {v}")));
            }
        }
        let a2 = twice_signed_area(&vs);
        if a2 == 0 {
            return Err(Error::InvalidCircuit("zero area".into()));
        }
        if a2 < 0 {
            vs.reverse();
        }
        let start = (0..k).min_by_key(|&i| vs[i]).unwrap();
        vs.rotate_left(start);
        Ok(Circuit { vertices: vs })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn twice_area(&self) -> i64 {
        twice_signed_area(&self.vertices)
    }

    /// Strictly interior lattice points, I = A - B/2 + 1.
    pub fn interior_points(&self) -> i64 {
        (self.twice_area() - self.len() as i64 + 2) / 2
    }

    /// Lattice points on or inside the circuit, I + B.
    pub fn vol(&self) -> i64 {
        self.interior_points() + self.len() as i64
    }

    pub fn to_curve(&self) -> super::PolyCurve {
        let mut pts: Vec<[f64; 2]> = self.vertices.iter().map(|p| p.to_f64()).collect();
        pts.push(pts[0]);
        super::PolyCurve::closed(pts).expect("closed by construction")
    }

    pub fn bbox(&self) -> (Point, Point) {
        let mut lo = self.vertices[0];
        let mut hi = lo;
        for v in &self.vertices {
            lo = Point::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Point::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        (lo, hi)
    }

    /// Closed vertical runs of vol(γ) along each lattice column, as (x, y_lo, y_hi).
    pub fn column_runs(&self) -> Vec<(i64, i64, i64)> {
        // Horizontal edges grouped by the cell column they bound; for a counterclockwise
        // circuit, rightward edges are bottoms of the enclosed region and leftward ones tops.
        let mut cols: HashMap<i64, Vec<(i64, i8)>> = HashMap::new();
        let k = self.len();
        for i in 0..k {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % k]);
            if a.y == b.y {
                let s = if b.x > a.x { 1 } else { -1 };
                cols.entry(a.x.min(b.x)).or_default().push((a.y, s));
            }
        }
        let mut per_vertex_col: HashMap<i64, Vec<(i64, i64)>> = HashMap::new();
        for (cx, mut es) in cols {
            es.sort_unstable();
            for pair in es.chunks(2) {
                debug_assert!(pair[0].1 == 1 && pair[1].1 == -1);
                let run = (pair[0].0, pair[1].0);
                per_vertex_col.entry(cx).or_default().push(run);
                per_vertex_col.entry(cx + 1).or_default().push(run);
            }
        }
        let mut out = Vec::new();
        for (x, mut runs) in per_vertex_col {
            runs.sort_unstable();
            let mut cur = runs[0];
            for &r in &runs[1..] {
                if r.0 <= cur.1 {
                    cur.1 = cur.1.max(r.1);
                } else {
                    out.push((x, cur.0, cur.1));
                    cur = r;
                }
            }
            out.push((x, cur.0, cur.1));
        }
        out.sort_unstable();
        out
    }

    /// Whether p is on the circuit or enclosed by it.
    pub fn vol_contains(&self, p: Point) -> bool {
        self.column_runs().iter().any(|&(x, a, b)| x == p.x && a <= p.y && p.y <= b)
    }
}

/// Per-column prefix sums of a vertex mark on B(n).
#[derive(Clone, Debug)]
pub struct MarkGrid {
    pub n: i64,
    /// cum[col][k] = marked vertices in column col with y-index < k.
    cum: Vec<Vec<u32>>,
}

impl MarkGrid {
    pub fn new(n: i64, marks: &[bool]) -> Self {
        let b = BoxLattice::new(n);
        assert_eq!(marks.len(), b.num_vertices());
        let s = b.side();
        let cum = (0..s)
            .map(|col| {
                let mut c = Vec::with_capacity(s + 1);
                c.push(0u32);
                for row in 0..s {
                    c.push(c[row] + marks[row * s + col] as u32);
                }
                c
            })
            .collect();
        MarkGrid { n, cum }
    }

    pub fn is_marked(&self, p: Point) -> bool {
        if !BoxLattice::new(self.n).contains(p) {
            return false;
        }
        let (c, r) = ((p.x + self.n) as usize, (p.y + self.n) as usize);
        self.cum[c][r + 1] > self.cum[c][r]
    }

    /// Marked vertices in column x with y in [lo, hi]; zero outside the box.
    pub fn column_count(&self, x: i64, lo: i64, hi: i64) -> u64 {
        if x.abs() > self.n {
            return 0;
        }
        let lo = lo.max(-self.n);
        let hi = hi.min(self.n);
        if lo > hi {
            return 0;
        }
        let c = &self.cum[(x + self.n) as usize];
        (c[(hi + self.n + 1) as usize] - c[(lo + self.n) as usize]) as u64
    }
}

/// Number of marked vertices in vol(γ); boundary vertices count iff marked.
pub fn weighted_interior_count(circuit: &Circuit, marks: &MarkGrid) -> u64 {
    circuit.column_runs().iter().map(|&(x, a, b)| marks.column_count(x, a, b)).sum()
}

/// Same count for an arbitrary predicate, evaluated only on vol(γ).
pub fn weighted_count_by(circuit: &Circuit, mark: impl Fn(Point) -> bool) -> u64 {
    circuit
        .column_runs()
        .iter()
        .map(|&(x, a, b)| (a..=b).filter(|&y| mark(Point::new(x, y))).count() as u64)
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoCheck {
    /// `None` when the side conditions vol > R and |γ| <= vol^(2/3) fail.
    pub holds_4eps: Option<bool>,
    pub holds_c0: bool,
    pub c0_used: f64,
}

pub fn discrete_iso_check(circuit: &Circuit, eps: f64, r: f64) -> Result<IsoCheck> {
    if !(eps > 0.0 && eps < 4.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} outside (0, 4)")));
    }
    let len = circuit.len() as f64;
    let vol = circuit.vol() as f64;
    let applicable = vol > r && len <= vol.powf(2.0 / 3.0);
    Ok(IsoCheck {
        holds_4eps: applicable.then(|| len >= (4.0 - eps) * vol.sqrt()),
        holds_c0: len >= crate::constants::C0 * vol.sqrt(),
        c0_used: crate::constants::C0,
    })
}

/// Joins two simple paths sharing an endpoint, cutting at the first vertex of `a` that
/// `b` visits: (u_0..u_k, v_{l+1}..v_m) with u_k = v_l.
pub fn concatenate(a: &[Point], b: &[Point]) -> Result<Vec<Point>> {
    match (a.last(), b.first()) {
        (Some(x), Some(y)) if x == y => {}
        _ => return Err(Error::InvalidParameter("paths do not share an endpoint".into())),
    }
    let pos: HashMap<Point, usize> = b.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let (k, l) = a
        .iter()
        .enumerate()
        .find_map(|(i, v)| pos.get(v).map(|&j| (i, j)))
        .expect("the shared endpoint is always found");
    let mut out = a[..=k].to_vec();
    out.extend_from_slice(&b[l + 1..]);
    Ok(out)
}

/// Every circuit with vol <= max_vol, up to translation, generated as boundaries of
/// hole-free polyominoes whose corner set has at most max_vol points.
pub fn small_circuits(max_vol: usize) -> Vec<Circuit> {
    type Cells = Vec<(i32, i32)>;
    let normalize = |mut cs: Cells| {
        let mx = cs.iter().map(|c| c.0).min().unwrap();
        let my = cs.iter().map(|c| c.1).min().unwrap();
        for c in cs.iter_mut() {
            c.0 -= mx;
            c.1 -= my;
        }
        cs.sort_unstable();
        cs
    };
    let corners = |cs: &Cells| {
        let mut s = HashSet::new();
        for &(x, y) in cs {
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                s.insert((x + dx, y + dy));
            }
        }
        s.len()
    };
    let mut all: HashSet<Cells> = HashSet::new();
    let mut layer: Vec<Cells> = vec![vec![(0, 0)]];
    all.insert(layer[0].clone());
    while !layer.is_empty() {
        let mut next = Vec::new();
        for cs in &layer {
            let set: HashSet<(i32, i32)> = cs.iter().copied().collect();
            for &(x, y) in cs {
                for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let c = (x + dx, y + dy);
                    if set.contains(&c) {
                        continue;
                    }
                    let mut grown = cs.clone();
                    grown.push(c);
                    if corners(&grown) > max_vol {
                        continue;
                    }
                    let g = normalize(grown);
                    if all.insert(g.clone()) {
                        next.push(g);
                    }
                }
            }
        }
        layer = next;
    }
    let mut out: Vec<Circuit> = all.iter().filter_map(|cs| boundary_circuit(cs)).collect();
    out.sort();
    out
}

/// The boundary of a set of unit cells (given by lower-left corners) if it is a single simple circuit.
pub fn boundary_circuit(cells: &[(i32, i32)]) -> Option<Circuit> {
    let set: HashSet<(i32, i32)> = cells.iter().copied().collect();
    let mut succ: HashMap<Point, Point> = HashMap::new();
    let mut count = 0;
    for &(x, y) in cells {
        let (x, y) = (x as i64, y as i64);
        let sides = [
            ((x, y - 1), Point::new(x, y), Point::new(x + 1, y)),
            ((x + 1, y), Point::new(x + 1, y), Point::new(x + 1, y + 1)),
            ((x, y + 1), Point::new(x + 1, y + 1), Point::new(x, y + 1)),
            ((x - 1, y), Point::new(x, y + 1), Point::new(x, y)),
        ];
        for (nb, a, b) in sides {
            if !set.contains(&(nb.0 as i32, nb.1 as i32)) {
                if succ.insert(a, b).is_some() {
                    return None;
                }
                count += 1;
            }
        }
    }
    let start = *succ.keys().min()?;
    let mut vs = vec![start];
    let mut cur = succ[&start];
    while cur != start {
        vs.push(cur);
        cur = *succ.get(&cur)?;
        if vs.len() > count {
            return None;
        }
    }
    if vs.len() != count {
        return None;
    }
    Circuit::new(vs).ok()
}

/// min |γ| / sqrt(vol γ) over all circuits with vol <= max_vol.
pub fn scan_c0(max_vol: usize) -> f64 {
    small_circuits(max_vol)
        .iter()
        .map(|c| c.len() as f64 / (c.vol() as f64).sqrt())
        .fold(f64::INFINITY, f64::min)
}
