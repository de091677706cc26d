use crate::error::{io_err, Error, Result};
use crate::geometry::{Norm, PolyCurve, Vec2};
use crate::metric::TimeConstantEstimate;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

const HULL_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NormSamples {
    directions: Vec<Vec2>,
    values: Vec<f64>,
    #[serde(default)]
    stderrs: Vec<f64>,
    p: Option<f64>,
    provenance: String,
}

/// A norm built from values at sampled first-quadrant directions. The samples are extended by
/// the symmetries of the square and the unit ball is the convex hull of the points u / value(u).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormSamples", into = "NormSamples")]
pub struct NormModel {
    samples: NormSamples,
    /// Unit-ball vertices, counterclockwise.
    ball: Vec<Vec2>,
    /// Facet normals a with a . x <= 1 on the unit ball.
    facets: Vec<Vec2>,
}

impl TryFrom<NormSamples> for NormModel {
    type Error = Error;

    fn try_from(s: NormSamples) -> Result<NormModel> {
        NormModel::build(s)
    }
}

impl From<NormModel> for NormSamples {
    fn from(m: NormModel) -> NormSamples {
        m.samples
    }
}

fn d4_orbit(v: Vec2) -> [Vec2; 8] {
    let [x, y] = v;
    [[x, y], [-x, y], [x, -y], [-x, -y], [y, x], [-y, x], [y, -x], [-y, -x]]
}

fn cross3(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counterclockwise convex hull without collinear points.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let scale = pts.iter().map(|p| p[0].abs().max(p[1].abs())).fold(0.0, f64::max);
    let tol = HULL_TOL * scale * scale;
    let mut hull: Vec<Vec2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let it: Box<dyn Iterator<Item = &Vec2>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in it {
            while hull.len() >= start + 2 && cross3(hull[hull.len() - 2], hull[hull.len() - 1], p) <= tol {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

impl NormModel {
    pub fn new(directions: Vec<Vec2>, values: Vec<f64>, p: Option<f64>, provenance: &str) -> Result<NormModel> {
        NormModel::build(NormSamples { directions, values, stderrs: Vec::new(), p, provenance: provenance.into() })
    }

    pub fn with_stderrs(mut self, stderrs: Vec<f64>) -> Result<NormModel> {
        self.samples.stderrs = stderrs;
        NormModel::build(self.samples)
    }

    fn build(mut s: NormSamples) -> Result<NormModel> {
        if s.directions.is_empty() || s.directions.len() != s.values.len() {
            return Err(Error::Norm("directions and values must be nonempty and of equal length".into()));
        }
        if !s.stderrs.is_empty() && s.stderrs.len() != s.values.len() {
            return Err(Error::Norm("stderrs must match the number of directions".into()));
        }
        let mut pts = Vec::new();
        for (d, &v) in s.directions.iter_mut().zip(&s.values) {
            let len = d[0].hypot(d[1]);
            if !(len > 0.0) || d[0] < 0.0 || d[1] < 0.0 {
                return Err(Error::Norm(format!("direction {d:?} is not a nonzero first-quadrant vector")));
            }
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Norm(format!("value {v} at direction {d:?} is not positive")));
            }
            *d = [d[0] / len, d[1] / len];
            for q in d4_orbit(*d) {
                pts.push([q[0] / v, q[1] / v]);
            }
        }
        let ball = convex_hull(&pts);
        if ball.len() < 3 {
            return Err(Error::Norm("unit ball is degenerate".into()));
        }
        let k = ball.len();
        let facets = (0..k)
            .map(|i| {
                let (p, q) = (ball[i], ball[(i + 1) % k]);
                let c = p[0] * q[1] - p[1] * q[0];
                [(q[1] - p[1]) / c, (p[0] - q[0]) / c]
            })
            .collect();
        Ok(NormModel { samples: s, ball, facets })
    }

    /// The l1 norm as a model.
    pub fn l1() -> NormModel {
        NormModel::new(vec![[1.0, 0.0]], vec![1.0], None, "l1").unwrap()
    }

    /// Norm from time-constant estimates, one per first-quadrant direction. Values are
    /// clamped from below by the l1 norm, which the chemical distance always dominates.
    pub fn from_time_constants(estimates: &[TimeConstantEstimate]) -> Result<NormModel> {
        let mut directions = Vec::new();
        let mut values = Vec::new();
        let mut stderrs = Vec::new();
        for e in estimates {
            let d = [e.direction.x as f64, e.direction.y as f64];
            let len = d[0].hypot(d[1]);
            let u = [d[0].abs() / len, d[1].abs() / len];
            let l1 = u[0] + u[1];
            directions.push(u);
            values.push((e.mu_hat * l1).max(l1));
            stderrs.push(e.stderr * l1);
        }
        let p = estimates.first().map(|e| e.p);
        let prov = estimates
            .iter()
            .map(|e| {
                let ls: Vec<String> = e.lengths.iter().map(|l| l.length.to_string()).collect();
                format!("dir ({},{}) L={} samples={}", e.direction.x, e.direction.y, ls.join("/"), e.samples_per_length)
            })
            .collect::<Vec<_>>()
            .join("; ");
        NormModel::build(NormSamples { directions, values, stderrs, p, provenance: format!("time constant: {prov}") })
    }

    pub fn directions(&self) -> &[Vec2] {
        &self.samples.directions
    }

    pub fn values(&self) -> &[f64] {
        &self.samples.values
    }

    pub fn stderrs(&self) -> &[f64] {
        &self.samples.stderrs
    }

    pub fn p(&self) -> Option<f64> {
        self.samples.p
    }

    pub fn provenance(&self) -> &str {
        &self.samples.provenance
    }

    pub fn unit_ball(&self) -> &[Vec2] {
        &self.ball
    }

    /// sup { x . y : norm(x) <= 1 }, attained at a unit-ball vertex.
    pub fn dual(&self, y: Vec2) -> f64 {
        self.ball.iter().map(|v| v[0] * y[0] + v[1] * y[1]).fold(f64::NEG_INFINITY, f64::max).max(0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<NormModel> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<NormModel> {
        NormModel::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Isoperimetric constant with an error bar propagated from the per-direction standard
    /// errors: each sample is moved by one standard error and the shifts in the constant are
    /// added in quadrature.
    pub fn iso_constant(&self, k: usize) -> Result<IsoConstant> {
        let mut iso = iso_constant(self, k)?;
        let mut var = 0.0;
        for (i, &se) in self.samples.stderrs.iter().enumerate() {
            if se <= 0.0 {
                continue;
            }
            let mut s = self.samples.clone();
            s.values[i] += se;
            let shifted = iso_constant(&NormModel::build(s)?, k)?.value;
            var += (shifted - iso.value).powi(2);
        }
        iso.stderr = var.sqrt();
        Ok(iso)
    }
}

impl Norm for NormModel {
    fn eval(&self, v: Vec2) -> f64 {
        self.facets.iter().map(|a| a[0] * v[0] + a[1] * v[1]).fold(0.0, f64::max)
    }

    fn wulff_normals(&self) -> Vec<Vec2> {
        self.ball
            .iter()
            .map(|v| {
                let l = v[0].hypot(v[1]);
                [v[0] / l, v[1] / l]
            })
            .collect()
    }
}

/// Dual norm of a model at y.
pub fn dual_norm_eval(norm: &NormModel, y: Vec2) -> f64 {
    norm.dual(y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WulffShape {
    pub k: usize,
    /// Counterclockwise polygon.
    pub vertices: Vec<Vec2>,
    pub area: f64,
    /// The same polygon scaled to area 1.
    pub normalized: Vec<Vec2>,
}

fn polygon_area(vs: &[Vec2]) -> f64 {
    let k = vs.len();
    (0..k).map(|i| vs[i][0] * vs[(i + 1) % k][1] - vs[(i + 1) % k][0] * vs[i][1]).sum::<f64>() / 2.0
}

#[derive(Clone, Copy, Debug)]
struct Line {
    n: Vec2,
    c: f64,
}

fn meet(a: Line, b: Line) -> Vec2 {
    let det = a.n[0] * b.n[1] - a.n[1] * b.n[0];
    [(a.c * b.n[1] - b.c * a.n[1]) / det, (a.n[0] * b.c - b.n[0] * a.c) / det]
}

/// Unit vector at angle 2 pi i / k, exact on the axes.
fn equiangular(i: usize, k: usize) -> Vec2 {
    if (4 * i) % k == 0 {
        return match 4 * i / k {
            0 => [1.0, 0.0],
            1 => [0.0, 1.0],
            2 => [-1.0, 0.0],
            _ => [0.0, -1.0],
        };
    }
    let t = 2.0 * PI * i as f64 / k as f64;
    [t.cos(), t.sin()]
}

/// Intersection of the half-planes {x : n . x <= norm(n)} over k equiangular unit normals and
/// over the facet normals the norm reports.
pub fn wulff_shape(norm: &dyn Norm, k: usize) -> Result<WulffShape> {
    if k < 8 || k % 4 != 0 {
        return Err(Error::InvalidParameter(format!("direction count {k} must be a multiple of 4 and at least 8")));
    }
    let mut lines = Vec::new();
    // Axis and facet normals go first so that exact corners are never cut by a nearly tangent line.
    let axes = (0..4).map(|i| equiangular(i * k / 4, k));
    let rest = (0..k).filter(|i| (4 * i) % k != 0).map(|i| equiangular(i, k));
    for n in axes.chain(norm.wulff_normals()).chain(rest) {
        let c = norm.eval(n);
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Norm(format!("norm vanishes or is invalid in direction {n:?}")));
        }
        lines.push(Line { n, c });
    }
    let r = 2.0 * lines.iter().map(|l| l.c).fold(0.0, f64::max) + 1.0;
    let boxed = [
        Line { n: [0.0, -1.0], c: r },
        Line { n: [1.0, 0.0], c: r },
        Line { n: [0.0, 1.0], c: r },
        Line { n: [-1.0, 0.0], c: r },
    ];
    // Each vertex carries the line of the edge leaving it.
    let mut poly: Vec<(Vec2, Line)> = vec![
        ([-r, -r], boxed[0]),
        ([r, -r], boxed[1]),
        ([r, r], boxed[2]),
        ([-r, r], boxed[3]),
    ];
    let tol = 1e-12 * r;
    for l in lines {
        let inside = |v: Vec2| l.n[0] * v[0] + l.n[1] * v[1] - l.c <= tol;
        let m = poly.len();
        let mut next = Vec::with_capacity(m + 1);
        for i in 0..m {
            let (v, e) = poly[i];
            let w = poly[(i + 1) % m].0;
            match (inside(v), inside(w)) {
                (true, true) => next.push((v, e)),
                (true, false) => {
                    next.push((v, e));
                    next.push((meet(e, l), l));
                }
                (false, true) => next.push((meet(e, l), e)),
                (false, false) => {}
            }
        }
        let mut cleaned: Vec<(Vec2, Line)> = Vec::with_capacity(next.len());
        for i in 0..next.len() {
            let w = next[(i + 1) % next.len()].0;
            let v = next[i].0;
            if (v[0] - w[0]).abs().max((v[1] - w[1]).abs()) > tol {
                cleaned.push(next[i]);
            }
        }
        poly = cleaned;
        if poly.len() < 3 {
            return Err(Error::Norm("Wulff shape is degenerate".into()));
        }
    }
    let vertices: Vec<Vec2> = poly.iter().map(|x| x.0).collect();
    let area = polygon_area(&vertices);
    let s = 1.0 / area.sqrt();
    let normalized = vertices.iter().map(|v| [v[0] * s, v[1] * s]).collect();
    Ok(WulffShape { k, vertices, area, normalized })
}

impl WulffShape {
    pub fn normalized_area(&self) -> f64 {
        polygon_area(&self.normalized)
    }

    /// Largest |coordinate| of the normalized shape.
    pub fn normalized_half_width(&self) -> f64 {
        self.normalized.iter().map(|v| v[0].abs().max(v[1].abs())).fold(0.0, f64::max)
    }

    pub fn boundary(&self) -> PolyCurve {
        closed_curve(&self.vertices)
    }

    pub fn normalized_boundary(&self) -> PolyCurve {
        closed_curve(&self.normalized)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Outline of the normalized shape.
    pub fn to_svg(&self) -> String {
        let pts: Vec<String> = self.normalized.iter().map(|v| format!("{:.6},{:.6}", v[0], -v[1])).collect();
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"-1 -1 2 2\" width=\"400\" height=\"400\">\n\
             <rect x=\"-0.7071068\" y=\"-0.7071068\" width=\"1.4142136\" height=\"1.4142136\" fill=\"none\" stroke=\"#bbb\" stroke-width=\"0.004\"/>\n\
             <polygon points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"0.006\"/>\n</svg>\n",
            pts.join(" ")
        )
    }
}

fn closed_curve(vs: &[Vec2]) -> PolyCurve {
    let mut pts = vs.to_vec();
    pts.push(vs[0]);
    PolyCurve::closed(pts).expect("closed by construction")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoConstant {
    pub value: f64,
    pub k: usize,
    /// Estimated gap to the k -> infinity limit, from comparing k with 8k directions.
    pub resolution_bound: f64,
    /// Propagated from the norm's sample errors; zero for exact norms.
    pub stderr: f64,
}

/// Norm length of the boundary of the area-one Wulff shape.
pub fn iso_constant(norm: &dyn Norm, k: usize) -> Result<IsoConstant> {
    let coarse = wulff_shape(norm, k)?.normalized_boundary().len_norm(norm);
    let fine = wulff_shape(norm, 8 * k)?.normalized_boundary().len_norm(norm);
    Ok(IsoConstant { value: coarse, k, resolution_bound: (coarse - fine).abs() * 64.0 / 63.0, stderr: 0.0 })
}

pub fn len_norm(curve: &PolyCurve, norm: &dyn Norm) -> f64 {
    curve.len_norm(norm)
}
