use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub type Vec2 = [f64; 2];

pub trait Norm: Sync {
    fn eval(&self, v: Vec2) -> f64;

    /// Outward normals of the Wulff shape's facets when the norm is polyhedral. These are the
    /// directions of the unit ball's vertices.
    fn wulff_normals(&self) -> Vec<Vec2> {
        Vec::new()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct L1;

#[derive(Clone, Copy, Debug)]
pub struct LInf;

#[derive(Clone, Copy, Debug)]
pub struct L2;

impl Norm for L1 {
    fn eval(&self, v: Vec2) -> f64 {
        v[0].abs() + v[1].abs()
    }

    fn wulff_normals(&self) -> Vec<Vec2> {
        vec![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]
    }
}

impl Norm for LInf {
    fn eval(&self, v: Vec2) -> f64 {
        v[0].abs().max(v[1].abs())
    }

    fn wulff_normals(&self) -> Vec<Vec2> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        vec![[h, h], [-h, h], [-h, -h], [h, -h]]
    }
}

impl Norm for L2 {
    fn eval(&self, v: Vec2) -> f64 {
        v[0].hypot(v[1])
    }
}

pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn linf(v: Vec2) -> f64 {
    v[0].abs().max(v[1].abs())
}

fn lerp(a: Vec2, b: Vec2, s: f64) -> Vec2 {
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyCurve {
    pub points: Vec<Vec2>,
    pub closed: bool,
}

impl PolyCurve {
    pub fn open(points: Vec<Vec2>) -> Result<PolyCurve> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("empty curve".into()));
        }
        Ok(PolyCurve { points, closed: false })
    }

    /// A closed curve; the last point must repeat the first.
    pub fn closed(points: Vec<Vec2>) -> Result<PolyCurve> {
        if points.len() < 2 || points[0] != points[points.len() - 1] {
            return Err(Error::InvalidParameter("closed curve must end at its start".into()));
        }
        Ok(PolyCurve { points, closed: true })
    }

    pub fn segments(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn segment_lengths(&self, norm: &dyn Norm) -> Vec<f64> {
        self.segments().map(|(a, b)| norm.eval(sub(b, a))).collect()
    }

    pub fn len_norm(&self, norm: &dyn Norm) -> f64 {
        self.segment_lengths(norm).iter().sum()
    }

    pub fn bbox(&self) -> (Vec2, Vec2) {
        let mut lo = self.points[0];
        let mut hi = lo;
        for p in &self.points {
            lo = [lo[0].min(p[0]), lo[1].min(p[1])];
            hi = [hi[0].max(p[0]), hi[1].max(p[1])];
        }
        (lo, hi)
    }

    pub fn scaled(&self, k: f64, shift: Vec2) -> PolyCurve {
        PolyCurve {
            points: self.points.iter().map(|p| [k * p[0] + shift[0], k * p[1] + shift[1]]).collect(),
            closed: self.closed,
        }
    }

    /// Points spaced at most `h` apart along the trace, including all vertices.
    pub fn samples(&self, h: f64) -> Vec<Vec2> {
        let mut out = vec![self.points[0]];
        for (a, b) in self.segments() {
            let k = (linf(sub(b, a)) / h).ceil().max(1.0) as usize;
            for j in 1..=k {
                out.push(lerp(a, b, j as f64 / k as f64));
            }
        }
        out
    }

    pub fn winding_number(&self, q: Vec2) -> i32 {
        let mut w = 0;
        for (a, b) in self.segments() {
            let is_left = cross(sub(b, a), sub(q, a));
            if a[1] <= q[1] {
                if b[1] > q[1] && is_left > 0.0 {
                    w += 1;
                }
            } else if b[1] <= q[1] && is_left < 0.0 {
                w -= 1;
            }
        }
        w
    }

    pub fn dist_linf(&self, q: Vec2) -> f64 {
        self.segments().map(|(a, b)| seg_dist_linf(q, a, b)).fold(f64::INFINITY, f64::min)
    }

    pub fn on_curve(&self, q: Vec2) -> bool {
        self.dist_linf(q) <= 1e-12
    }
}

/// l-infinity distance from q to the segment [a, b], minimised exactly over the
/// breakpoints of the piecewise-linear objective.
pub fn seg_dist_linf(q: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = sub(b, a);
    let c = sub(a, q);
    let f = |s: f64| (c[0] + s * d[0]).abs().max((c[1] + s * d[1]).abs());
    let mut best = f(0.0).min(f(1.0));
    let mut try_s = |s: f64| {
        if s.is_finite() && (0.0..=1.0).contains(&s) {
            best = best.min(f(s));
        }
    };
    if d[0] != 0.0 {
        try_s(-c[0] / d[0]);
    }
    if d[1] != 0.0 {
        try_s(-c[1] / d[1]);
    }
    if d[0] != d[1] {
        try_s((c[1] - c[0]) / (d[0] - d[1]));
    }
    if d[0] != -d[1] {
        try_s(-(c[0] + c[1]) / (d[0] + d[1]));
    }
    best
}

/// Greedy breakpoints: each new breakpoint is the first point of the curve at
/// l-infinity distance r from the previous one; the curve's end is appended.
pub fn polygonal_approx(curve: &PolyCurve, r: f64) -> Result<PolyCurve> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("r = {r} must be positive")));
    }
    let pts = &curve.points;
    let mut out = vec![pts[0]];
    let mut anchor = pts[0];
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut start = a;
        // Within one segment the distance to the anchor is convex, so once the endpoint is
        // beyond r the crossing is the first time a coordinate reaches r in magnitude.
        while linf(sub(b, anchor)) > r {
            let d = sub(b, start);
            let c = sub(start, anchor);
            let mut s_star = f64::INFINITY;
            for i in 0..2 {
                if d[i] != 0.0 {
                    let target = r * d[i].signum();
                    let s = (target - c[i]) / d[i];
                    if s >= 0.0 {
                        s_star = s_star.min(s);
                    }
                }
            }
            let s_star = s_star.clamp(0.0, 1.0);
            let x = lerp(start, b, s_star);
            out.push(x);
            anchor = x;
            start = x;
        }
    }
    let end = *pts.last().unwrap();
    if out.len() == 1 || *out.last().unwrap() != end {
        out.push(end);
    }
    Ok(PolyCurve { points: out, closed: curve.closed })
}

/// Area of the set of points with odd crossing parity with respect to the union of segments,
/// integrated exactly slab by slab between event ordinates.
pub fn odd_area(segs: &[(Vec2, Vec2)]) -> f64 {
    let segs: Vec<(Vec2, Vec2)> = segs.iter().copied().filter(|(a, b)| a[1] != b[1]).collect();
    if segs.is_empty() {
        return 0.0;
    }
    let mut ys: Vec<f64> = segs.iter().flat_map(|(a, b)| [a[1], b[1]]).collect();
    for i in 0..segs.len() {
        for j in i + 1..segs.len() {
            if let Some(p) = segment_intersection(segs[i].0, segs[i].1, segs[j].0, segs[j].1) {
                ys.push(p[1]);
            }
        }
    }
    ys.sort_by(|a, b| a.total_cmp(b));
    ys.dedup();
    let mut area = 0.0;
    let mut xs = Vec::new();
    for w in ys.windows(2) {
        let (y0, y1) = (w[0], w[1]);
        if y1 - y0 <= 0.0 {
            continue;
        }
        let ym = 0.5 * (y0 + y1);
        xs.clear();
        for (a, b) in &segs {
            let (lo, hi) = if a[1] < b[1] { (a, b) } else { (b, a) };
            if lo[1] < ym && ym < hi[1] {
                xs.push(lo[0] + (ym - lo[1]) / (hi[1] - lo[1]) * (hi[0] - lo[0]));
            }
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        let width: f64 = xs.chunks(2).filter(|c| c.len() == 2).map(|c| c[1] - c[0]).sum();
        area += width * (y1 - y0);
    }
    area
}

/// A single intersection point of two non-parallel segments, if they meet.
pub fn segment_intersection(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> Option<Vec2> {
    let r = sub(b, a);
    let s = sub(d, c);
    let den = cross(r, s);
    if den == 0.0 {
        return None;
    }
    let t = cross(sub(c, a), s) / den;
    let u = cross(sub(c, a), r) / den;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then(|| lerp(a, b, t))
}

#[derive(Clone, Debug)]
pub struct WindingHull {
    pub curve: PolyCurve,
    pub area: f64,
}

impl WindingHull {
    pub fn contains(&self, q: Vec2) -> bool {
        self.curve.winding_number(q) % 2 != 0 || self.curve.on_curve(q)
    }
}

pub fn winding_hull(curve: &PolyCurve) -> Result<WindingHull> {
    if !curve.closed {
        return Err(Error::InvalidParameter("winding hull needs a closed curve".into()));
    }
    let segs: Vec<(Vec2, Vec2)> = curve.segments().collect();
    Ok(WindingHull { curve: curve.clone(), area: odd_area(&segs) })
}

/// Area of hull(a) symmetric-difference hull(b).
pub fn symmetric_difference_area(a: &PolyCurve, b: &PolyCurve) -> f64 {
    let segs: Vec<(Vec2, Vec2)> = a.segments().chain(b.segments()).collect();
    odd_area(&segs)
}

#[derive(Clone, Debug)]
pub enum Shape {
    Points(Vec<Vec2>),
    Curve(PolyCurve),
    Hull(PolyCurve),
}

pub const HAUSDORFF_STEP: f64 = 0.25;

impl Shape {
    fn samples(&self, h: f64) -> Vec<Vec2> {
        match self {
            Shape::Points(p) => p.clone(),
            Shape::Curve(c) => c.samples(h),
            Shape::Hull(c) => {
                let mut out = c.samples(h);
                let (lo, hi) = c.bbox();
                let nx = ((hi[0] - lo[0]) / h).ceil() as usize;
                let ny = ((hi[1] - lo[1]) / h).ceil() as usize;
                for i in 0..=nx {
                    for j in 0..=ny {
                        let q = [lo[0] + i as f64 * h, lo[1] + j as f64 * h];
                        if c.winding_number(q) % 2 != 0 {
                            out.push(q);
                        }
                    }
                }
                out
            }
        }
    }

    fn dist(&self, q: Vec2) -> f64 {
        match self {
            Shape::Points(p) => p.iter().map(|x| linf(sub(*x, q))).fold(f64::INFINITY, f64::min),
            Shape::Curve(c) => c.dist_linf(q),
            Shape::Hull(c) => {
                if c.winding_number(q) % 2 != 0 {
                    0.0
                } else {
                    c.dist_linf(q)
                }
            }
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Shape::Points(p) => p.is_empty(),
            Shape::Curve(c) | Shape::Hull(c) => c.points.is_empty(),
        }
    }
}

/// l-infinity Hausdorff distance, with the supremum taken over samples at spacing h.
pub fn hausdorff(a: &Shape, b: &Shape, h: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter("hausdorff of an empty set".into()));
    }
    let directed = |x: &Shape, y: &Shape| x.samples(h).into_iter().map(|q| y.dist(q)).fold(0.0, f64::max);
    Ok(directed(a, b).max(directed(b, a)))
}
