use crate::error::{Error, Result};
use crate::lattice::{BoxLattice, Point};
use crate::percolation::{
    check_uniq_event, default_kappa, eta_mark, label_clusters, sample_configuration, ClusterLabeling,
    Configuration, GridSpec,
};
use crate::geometry::{concatenate, Norm, PolyCurve, Shape, HAUSDORFF_STEP};
use crate::stats;
use crate::wulff::NormModel;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

pub const UNREACHED: u32 = u32::MAX;

#[derive(Clone, Debug)]
pub struct DistanceField {
    pub source: Point,
    pub n: i64,
    /// Hop counts; `UNREACHED` off the source's cluster.
    pub dist: Vec<u32>,
}

impl DistanceField {
    pub fn get(&self, p: Point) -> Option<u32> {
        BoxLattice::new(self.n).index(p).map(|i| self.dist[i]).filter(|&d| d != UNREACHED)
    }
}

/// Reusable breadth-first search over the open edges of a configuration.
pub struct Bfs {
    lattice: BoxLattice,
    dist: Vec<u32>,
    parent: Vec<u32>,
    stamp: Vec<u32>,
    generation: u32,
    queue: VecDeque<u32>,
}

impl Bfs {
    pub fn new(lattice: BoxLattice) -> Self {
        let nv = lattice.num_vertices();
        Bfs {
            lattice,
            dist: vec![0; nv],
            parent: vec![0; nv],
            stamp: vec![0; nv],
            generation: 0,
            queue: VecDeque::new(),
        }
    }

    fn reached(&self, i: usize) -> bool {
        self.stamp[i] == self.generation
    }

    /// Explores from `source`, stopping early once `target` is reached.
    fn run(&mut self, config: &Configuration, source: usize, target: Option<usize>) {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
        let side = self.lattice.side() as isize;
        let offsets = [1isize, side, -1, -side];
        self.queue.clear();
        self.stamp[source] = self.generation;
        self.dist[source] = 0;
        self.parent[source] = source as u32;
        self.queue.push_back(source as u32);
        if target == Some(source) {
            return;
        }
        while let Some(u) = self.queue.pop_front() {
            let u = u as usize;
            let m = config.mask(u);
            for (k, off) in offsets.iter().enumerate() {
                if m >> k & 1 == 0 {
                    continue;
                }
                let v = (u as isize + off) as usize;
                if self.stamp[v] == self.generation {
                    continue;
                }
                self.stamp[v] = self.generation;
                self.dist[v] = self.dist[u] + 1;
                self.parent[v] = u as u32;
                if Some(v) == target {
                    return;
                }
                self.queue.push_back(v as u32);
            }
        }
    }

    pub fn distance(&mut self, config: &Configuration, x: Point, y: Point) -> Option<u32> {
        let (ix, iy) = (self.lattice.index(x)?, self.lattice.index(y)?);
        self.run(config, ix, Some(iy));
        self.reached(iy).then(|| self.dist[iy])
    }

    pub fn geodesic(&mut self, config: &Configuration, x: Point, y: Point) -> Option<Vec<Point>> {
        let (ix, iy) = (self.lattice.index(x)?, self.lattice.index(y)?);
        self.run(config, ix, Some(iy));
        if !self.reached(iy) {
            return None;
        }
        let mut path = vec![y];
        let mut i = iy;
        while i != ix {
            i = self.parent[i] as usize;
            path.push(self.lattice.point(i));
        }
        path.reverse();
        Some(path)
    }
}

pub fn distance_field(config: &Configuration, source: Point) -> Result<DistanceField> {
    let b = config.lattice();
    let s = b.index(source).ok_or(Error::PointOutsideBox(source))?;
    let mut bfs = Bfs::new(b);
    bfs.run(config, s, None);
    let dist = (0..b.num_vertices())
        .map(|i| if bfs.reached(i) { bfs.dist[i] } else { UNREACHED })
        .collect();
    Ok(DistanceField { source, n: b.n, dist })
}

/// Fewest open edges joining x and y inside the box; `None` stands for infinity.
pub fn chemical_distance(config: &Configuration, x: Point, y: Point) -> Result<Option<u32>> {
    let b = config.lattice();
    for p in [x, y] {
        if !b.contains(p) {
            return Err(Error::PointOutsideBox(p));
        }
    }
    Ok(Bfs::new(b).distance(config, x, y))
}

pub fn geodesic(config: &Configuration, x: Point, y: Point) -> Result<Option<Vec<Point>>> {
    let b = config.lattice();
    for p in [x, y] {
        if !b.contains(p) {
            return Err(Error::PointOutsideBox(p));
        }
    }
    Ok(Bfs::new(b).geodesic(config, x, y))
}

#[derive(Clone, Debug)]
pub struct ClosestVertexIndex {
    pub n: i64,
    pub seed: u64,
    pub giant: Vec<bool>,
    giant_count: usize,
}

impl ClosestVertexIndex {
    pub fn new(n: i64, seed: u64, giant: Vec<bool>) -> Self {
        let giant_count = giant.iter().filter(|&&g| g).count();
        ClosestVertexIndex { n, seed, giant, giant_count }
    }

    pub fn from_labeling(labeling: &ClusterLabeling, label: u32, seed: u64) -> Self {
        ClosestVertexIndex::new(labeling.n, seed, labeling.members(label))
    }

    pub fn eta(&self, p: Point) -> f64 {
        eta_mark(self.seed, p)
    }

    pub fn contains(&self, p: Point) -> bool {
        BoxLattice::new(self.n).index(p).map(|i| self.giant[i]).unwrap_or(false)
    }

    /// The l-infinity nearest giant vertex to x, ties broken by the smallest mark.
    pub fn closest(&self, x: [f64; 2]) -> Result<Point> {
        if self.giant_count == 0 {
            return Err(Error::EmptyGiant);
        }
        let b = BoxLattice::new(self.n);
        let mut r = 1.0f64;
        loop {
            let lo_x = ((x[0] - r).ceil() as i64).max(-self.n);
            let hi_x = ((x[0] + r).floor() as i64).min(self.n);
            let lo_y = ((x[1] - r).ceil() as i64).max(-self.n);
            let hi_y = ((x[1] + r).floor() as i64).min(self.n);
            let mut best: Option<(f64, f64, Point)> = None;
            for yy in lo_y..=hi_y {
                for xx in lo_x..=hi_x {
                    let z = Point::new(xx, yy);
                    if !self.giant[b.index_unchecked(z)] {
                        continue;
                    }
                    let d = (xx as f64 - x[0]).abs().max((yy as f64 - x[1]).abs());
                    let better = match best {
                        None => true,
                        Some((bd, be, _)) => d < bd || (d == bd && self.eta(z) < be),
                    };
                    if better {
                        best = Some((d, self.eta(z), z));
                    }
                }
            }
            if let Some((_, _, z)) = best {
                return Ok(z);
            }
            r *= 2.0;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimeConstantConfig {
    pub p: f64,
    pub direction: Point,
    pub lengths: Vec<i64>,
    pub samples_per_length: usize,
    pub seed: u64,
    /// Giant-density threshold; `None` uses the cached default for p.
    pub kappa: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthStat {
    pub length: i64,
    pub box_n: i64,
    pub used: usize,
    pub mean_d: f64,
    pub stderr: f64,
    pub dropped: usize,
    pub truncated: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeConstantEstimate {
    pub p: f64,
    pub direction: Point,
    pub mu_hat: f64,
    pub stderr: f64,
    pub lengths: Vec<LengthStat>,
    pub samples_per_length: usize,
}

impl TimeConstantEstimate {
    /// 95% normal interval.
    pub fn ci95(&self) -> (f64, f64) {
        (self.mu_hat - 1.96 * self.stderr, self.mu_hat + 1.96 * self.stderr)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["p", "dir_x", "dir_y", "L", "samples", "mean_D", "stderr", "dropped"])?;
        for s in &self.lengths {
            wr.write_record(&[
                self.p.to_string(),
                self.direction.x.to_string(),
                self.direction.y.to_string(),
                s.length.to_string(),
                s.used.to_string(),
                s.mean_d.to_string(),
                s.stderr.to_string(),
                s.dropped.to_string(),
            ])?;
        }
        wr.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

struct DistanceSample {
    d: Option<u32>,
    truncated: bool,
}

fn one_distance_sample(spec: GridSpec, index: u64, a: Point, b: Point, kappa: f64) -> DistanceSample {
    let config = sample_configuration(spec, index).expect("validated spec");
    let lab = label_clusters(&config);
    let rep = check_uniq_event(&lab, kappa);
    let Some(g) = rep.giant_label else {
        return DistanceSample { d: None, truncated: false };
    };
    let idx = ClosestVertexIndex::from_labeling(&lab, g, spec.master_seed ^ index.rotate_left(17));
    let (ca, cb) = (idx.closest(a.to_f64()).unwrap(), idx.closest(b.to_f64()).unwrap());
    let mut bfs = Bfs::new(config.lattice());
    let path = bfs.geodesic(&config, ca, cb);
    match path {
        None => DistanceSample { d: None, truncated: false },
        Some(path) => {
            let d = (path.len() - 1) as u32;
            assert!(d as i64 >= ca.l1_dist(cb), "chemical distance below the l1 distance");
            let truncated = path.iter().any(|q| q.linf() == spec.n);
            DistanceSample { d: Some(d), truncated }
        }
    }
}

/// Box half-size for endpoints `a`, `b`: both fit with an extra quarter of |b - a|_inf all round.
pub fn time_constant_box(a: Point, b: Point) -> i64 {
    let span = (b - a).linf();
    a.linf().max(b.linf()) + (span as f64 * 0.25).ceil() as i64
}

pub fn estimate_time_constant(cfg: &TimeConstantConfig) -> Result<TimeConstantEstimate> {
    let dir = cfg.direction;
    if dir == Point::ORIGIN {
        return Err(Error::InvalidParameter("direction must be nonzero".into()));
    }
    if cfg.lengths.is_empty() || cfg.lengths.windows(2).any(|w| w[0] >= w[1]) || cfg.lengths[0] < 1 {
        return Err(Error::InvalidParameter("lengths must be positive and increasing".into()));
    }
    if cfg.samples_per_length == 0 {
        return Err(Error::InvalidParameter("samples_per_length must be >= 1".into()));
    }
    GridSpec::new(1, cfg.p, cfg.seed)?;
    let kappa = cfg.kappa.unwrap_or_else(|| default_kappa(cfg.p));
    let mut stats_out = Vec::new();
    for (j, &l) in cfg.lengths.iter().enumerate() {
        let v = dir * l;
        let a = Point::new(-v.x.div_euclid(2), -v.y.div_euclid(2));
        let b = a + v;
        let n = time_constant_box(a, b);
        let spec = GridSpec::new(n, cfg.p, cfg.seed)?;
        let base = (j as u64) << 32;
        let samples: Vec<DistanceSample> = (0..cfg.samples_per_length as u64)
            .into_par_iter()
            .map(|i| one_distance_sample(spec, base + i, a, b, kappa))
            .collect();
        let ds: Vec<f64> = samples.iter().filter_map(|s| s.d.map(|d| d as f64)).collect();
        if ds.is_empty() {
            return Err(Error::InvalidParameter(format!("all samples disconnected at L = {l}")));
        }
        let (mean, se) = stats::mean_stderr(&ds);
        stats_out.push(LengthStat {
            length: l,
            box_n: n,
            used: ds.len(),
            mean_d: mean,
            stderr: se,
            dropped: samples.len() - ds.len(),
            truncated: samples.iter().filter(|s| s.truncated).count(),
        });
    }
    let norm1 = dir.l1() as f64;
    // Normalising before the fit keeps the full-grid case exact.
    let xs: Vec<f64> = stats_out.iter().map(|s| s.length as f64).collect();
    let ys: Vec<f64> = stats_out.iter().map(|s| s.mean_d / norm1).collect();
    let ses: Vec<f64> = stats_out.iter().map(|s| s.stderr / norm1).collect();
    let (slope, slope_se) = if xs.len() == 1 {
        (ys[0] / xs[0], ses[0] / xs[0])
    } else {
        let fit = stats::linear_fit(&xs, &ys);
        (fit.slope, stats::slope_stderr(&xs, &ses))
    };
    Ok(TimeConstantEstimate {
        p: cfg.p,
        direction: dir,
        mu_hat: slope,
        stderr: slope_se,
        lengths: stats_out,
        samples_per_length: cfg.samples_per_length,
    })
}

impl ClosestVertexIndex {
    /// Index over the giant of `config` under the uniqueness event, with marks seeded from the
    /// configuration's seed and sample index.
    pub fn for_config(config: &Configuration, labeling: &ClusterLabeling, label: u32) -> Self {
        let seed = config.spec.master_seed ^ config.sample_index.rotate_left(17);
        ClosestVertexIndex::from_labeling(labeling, label, seed)
    }
}

/// Giant cluster of `config` under the uniqueness event at the default threshold.
pub fn giant_of(config: &Configuration) -> Result<(ClusterLabeling, u32)> {
    let lab = label_clusters(config);
    let rep = check_uniq_event(&lab, default_kappa(config.spec.p));
    match rep.giant_label {
        Some(g) => Ok((lab, g)),
        None => Err(Error::NoUniqueLargest),
    }
}

/// Joins the closest giant vertices of successive waypoints by geodesics and concatenates the
/// pieces, cutting each join at the first vertex the next piece revisits. Repeated projections
/// are skipped. Returns `None` if some piece is missing.
pub fn join_waypoints(
    config: &Configuration,
    index: &ClosestVertexIndex,
    bfs: &mut Bfs,
    waypoints: &[[f64; 2]],
) -> Result<Option<Vec<Point>>> {
    let mut anchors: Vec<Point> = Vec::with_capacity(waypoints.len());
    for w in waypoints {
        let c = index.closest(*w)?;
        if anchors.last() != Some(&c) {
            anchors.push(c);
        }
    }
    let mut path = vec![anchors[0]];
    for pair in anchors.windows(2) {
        let Some(piece) = bfs.geodesic(config, pair[0], pair[1]) else {
            return Ok(None);
        };
        path = concatenate(&path, &piece)?;
    }
    Ok(Some(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsOptimalPath {
    pub path: Vec<Point>,
    /// Number of equal pieces the segment was cut into.
    pub pieces: usize,
    /// (1 + eps) times the norm of y - x.
    pub length_bound: f64,
    /// l-infinity Hausdorff distance between the path and the segment [x, y].
    pub hausdorff: f64,
}

impl EpsOptimalPath {
    pub fn len(&self) -> usize {
        self.path.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.path.len() <= 1
    }
}

/// Shortest piece, in l1 units, that the segment [x, y] is cut into.
pub const MIN_PIECE_L1: f64 = 8.0;

/// The smallest M above 16 A / (eps eps'), where A bounds the norm on the l1 unit sphere and
/// eps' = |y - x|_1 / n.
pub fn eps_optimal_pieces_formula(norm: &NormModel, x: [f64; 2], y: [f64; 2], eps: f64, n: i64) -> usize {
    let a = norm.eval([1.0, 0.0]).max(norm.eval([0.0, 1.0]));
    let l1 = (y[0] - x[0]).abs() + (y[1] - x[1]).abs();
    if l1 == 0.0 {
        return 1;
    }
    let eps_prime = l1 / n as f64;
    (16.0 * a / (eps * eps_prime)).floor() as usize + 1
}

/// Piece count actually used: the formula value, capped so that no piece is shorter than
/// `MIN_PIECE_L1`. Below that length a geodesic between neighbouring projections is dominated
/// by single closed edges rather than by the time constant.
pub fn eps_optimal_pieces(norm: &NormModel, x: [f64; 2], y: [f64; 2], eps: f64, n: i64) -> usize {
    let l1 = (y[0] - x[0]).abs() + (y[1] - x[1]).abs();
    let cap = ((l1 / MIN_PIECE_L1).floor() as usize).max(1);
    eps_optimal_pieces_formula(norm, x, y, eps, n).min(cap)
}

/// Open path in the giant from [x] to [y] built by cutting [x, y] into equal pieces and
/// joining successive closest vertices by geodesics. `None` when the path is longer than
/// (1 + eps) norm(y - x).
pub fn epsilon_optimal_path(
    config: &Configuration,
    x: [f64; 2],
    y: [f64; 2],
    eps: f64,
    norm: &NormModel,
) -> Result<Option<EpsOptimalPath>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let (lab, g) = giant_of(config)?;
    let index = ClosestVertexIndex::for_config(config, &lab, g);
    let m = eps_optimal_pieces(norm, x, y, eps, config.n());
    let waypoints: Vec<[f64; 2]> = (0..=m)
        .map(|k| {
            let t = k as f64 / m as f64;
            [x[0] + t * (y[0] - x[0]), x[1] + t * (y[1] - x[1])]
        })
        .collect();
    let mut bfs = Bfs::new(config.lattice());
    let Some(path) = join_waypoints(config, &index, &mut bfs, &waypoints)? else {
        return Ok(None);
    };
    let bound = (1.0 + eps) * norm.eval([y[0] - x[0], y[1] - x[1]]);
    if (path.len() - 1) as f64 > bound {
        return Ok(None);
    }
    let pts: Vec<[f64; 2]> = path.iter().map(|p| p.to_f64()).collect();
    let trace = if pts.len() == 1 { Shape::Points(pts) } else { Shape::Curve(PolyCurve::open(pts)?) };
    let segment = if x == y { Shape::Points(vec![x]) } else { Shape::Curve(PolyCurve::open(vec![x, y])?) };
    let hausdorff = crate::geometry::hausdorff(&trace, &segment, HAUSDORFF_STEP)?;
    Ok(Some(EpsOptimalPath { path, pieces: m, length_bound: bound, hausdorff }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Edge;

    #[test]
    fn full_grid_distance_is_l1() {
        let c = Configuration::all_open(6);
        for (a, b) in [(3, 4), (-6, 2), (0, 0), (5, -5)] {
            assert_eq!(
                chemical_distance(&c, Point::ORIGIN, Point::new(a, b)).unwrap(),
                Some((a.abs() + b.abs()) as u32)
            );
        }
    }

    #[test]
    fn straight_geodesic_on_full_grid() {
        let c = Configuration::all_open(4);
        let g = geodesic(&c, Point::ORIGIN, Point::new(3, 0)).unwrap().unwrap();
        assert_eq!(g, (0..=3).map(|x| Point::new(x, 0)).collect::<Vec<_>>());
        let g = geodesic(&c, Point::new(1, 1), Point::new(1, 1)).unwrap().unwrap();
        assert_eq!(g, vec![Point::new(1, 1)]);
    }

    fn corridor() -> (Configuration, Vec<Point>) {
        // On the 5x5 box B(2), a snake corridor from (-2,-2) to (2,2); all else closed.
        let path = vec![
            Point::new(-2, -2),
            Point::new(-1, -2),
            Point::new(0, -2),
            Point::new(0, -1),
            Point::new(-1, -1),
            Point::new(-2, -1),
            Point::new(-2, 0),
            Point::new(-2, 1),
            Point::new(-1, 1),
            Point::new(0, 1),
            Point::new(1, 1),
            Point::new(1, 2),
            Point::new(2, 2),
        ];
        let edges: Vec<Edge> = path.windows(2).map(|w| Edge::between(w[0], w[1]).unwrap()).collect();
        (Configuration::with_open_edges(2, &edges).unwrap(), path)
    }

    /// Shortest path length by enumerating all simple open paths.
    fn enumerate_shortest(c: &Configuration, x: Point, y: Point) -> Option<usize> {
        fn go(c: &Configuration, p: Point, y: Point, seen: &mut Vec<Point>, best: &mut Option<usize>) {
            if p == y {
                let l = seen.len() - 1;
                *best = Some(best.map_or(l, |b| b.min(l)));
                return;
            }
            for q in c.open_neighbors(p).collect::<Vec<_>>() {
                if !seen.contains(&q) {
                    seen.push(q);
                    go(c, q, y, seen, best);
                    seen.pop();
                }
            }
        }
        let mut best = None;
        go(c, x, y, &mut vec![x], &mut best);
        best
    }

    #[test]
    fn corridor_instance() {
        let (c, path) = corridor();
        let (x, y) = (path[0], *path.last().unwrap());
        let oracle = enumerate_shortest(&c, x, y).unwrap();
        assert_eq!(oracle, 12);
        assert_eq!(chemical_distance(&c, x, y).unwrap(), Some(oracle as u32));
        assert_eq!(geodesic(&c, x, y).unwrap().unwrap(), path);
        assert_eq!(chemical_distance(&c, x, Point::new(2, -2)).unwrap(), None);
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let spec = GridSpec::new(10, 0.7, 8).unwrap();
        let c = sample_configuration(spec, 1).unwrap();
        let lab = label_clusters(&c);
        let g = lab.largest();
        let pts: Vec<Point> = c.lattice().points().filter(|&p| lab.label_of(p) == Some(g)).collect();
        let fields: Vec<DistanceField> = pts.iter().take(40).map(|&p| distance_field(&c, p).unwrap()).collect();
        for (i, fi) in fields.iter().enumerate() {
            for (j, fj) in fields.iter().enumerate() {
                let dij = fi.get(pts[j]).unwrap();
                assert_eq!(dij, fj.get(pts[i]).unwrap());
                assert!(dij as i64 >= pts[i].l1_dist(pts[j]));
                for &z in pts.iter().step_by(7) {
                    assert!(dij <= fi.get(z).unwrap() + fj.get(z).unwrap());
                }
            }
        }
    }

    #[test]
    fn geodesic_length_matches_distance() {
        let spec = GridSpec::new(12, 0.65, 3).unwrap();
        for s in 0..20 {
            let c = sample_configuration(spec, s).unwrap();
            let x = Point::new(-5, 3);
            let y = Point::new(6, -2);
            let d = chemical_distance(&c, x, y).unwrap();
            let g = geodesic(&c, x, y).unwrap();
            assert_eq!(d.map(|d| d as usize + 1), g.as_ref().map(|g| g.len()));
            if let Some(g) = g {
                assert!(g.windows(2).all(|w| c.is_open_between(w[0], w[1])));
                let mut u = g.clone();
                u.sort();
                u.dedup();
                assert_eq!(u.len(), g.len());
            }
        }
    }

    #[test]
    fn closest_vertex_rules() {
        let c = sample_configuration(GridSpec::new(8, 0.7, 2).unwrap(), 0).unwrap();
        let lab = label_clusters(&c);
        let idx = ClosestVertexIndex::from_labeling(&lab, lab.largest(), 5);
        for p in c.lattice().points() {
            if idx.contains(p) {
                assert_eq!(idx.closest(p.to_f64()).unwrap(), p);
            }
        }
        // Two candidates at distance 1 from (0, 0): pick the smaller mark.
        let mut giant = vec![false; 25];
        let b = BoxLattice::new(2);
        let (u, v) = (Point::new(1, 0), Point::new(-1, 0));
        giant[b.index(u).unwrap()] = true;
        giant[b.index(v).unwrap()] = true;
        let idx = ClosestVertexIndex::new(2, 11, giant);
        let want = if idx.eta(u) < idx.eta(v) { u } else { v };
        assert_eq!(idx.closest([0.0, 0.0]).unwrap(), want);
        assert!(ClosestVertexIndex::new(2, 0, vec![false; 25]).closest([0.0, 0.0]).is_err());
    }

    #[test]
    fn closest_vertex_matches_linear_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let c = sample_configuration(GridSpec::new(15, 0.55, 6).unwrap(), 0).unwrap();
        let lab = label_clusters(&c);
        let idx = ClosestVertexIndex::from_labeling(&lab, lab.largest(), 21);
        let members: Vec<Point> = c.lattice().points().filter(|&p| idx.contains(p)).collect();
        for _ in 0..1000 {
            let x = [rng.gen_range(-18.0..18.0), rng.gen_range(-18.0..18.0)];
            let dist = |z: Point| (z.x as f64 - x[0]).abs().max((z.y as f64 - x[1]).abs());
            let best = members
                .iter()
                .copied()
                .min_by(|&a, &b| dist(a).partial_cmp(&dist(b)).unwrap().then(idx.eta(a).partial_cmp(&idx.eta(b)).unwrap()))
                .unwrap();
            assert_eq!(idx.closest(x).unwrap(), best);
        }
    }

    #[test]
    fn time_constant_is_one_on_full_grid() {
        for dir in [Point::new(1, 0), Point::new(0, 1), Point::new(2, 1)] {
            let est = estimate_time_constant(&TimeConstantConfig {
                p: 1.0,
                direction: dir,
                lengths: vec![4, 8, 16],
                samples_per_length: 3,
                seed: 1,
                kappa: None,
            })
            .unwrap();
            assert_eq!(est.mu_hat, 1.0);
            assert_eq!(est.stderr, 0.0);
        }
    }

    #[test]
    fn time_constant_dominates_l1() {
        let est = estimate_time_constant(&TimeConstantConfig {
            p: 0.7,
            direction: Point::new(1, 1),
            lengths: vec![8, 16],
            samples_per_length: 60,
            seed: 2,
            kappa: Some(0.3),
        })
        .unwrap();
        assert!(est.mu_hat >= 1.0 - 2.0 * est.stderr, "{est:?}");
        let mut out = Vec::new();
        est.write_csv(&mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.starts_with("p,dir_x,dir_y,L,samples,mean_D,stderr,dropped\n"));
        assert_eq!(s.lines().count(), 3);
    }

    #[test]
    fn time_constant_rejects_bad_input() {
        let mut cfg = TimeConstantConfig {
            p: 0.7,
            direction: Point::ORIGIN,
            lengths: vec![8],
            samples_per_length: 1,
            seed: 0,
            kappa: Some(0.3),
        };
        assert!(estimate_time_constant(&cfg).is_err());
        cfg.direction = Point::new(1, 0);
        cfg.lengths = vec![8, 4];
        assert!(estimate_time_constant(&cfg).is_err());
    }

    #[test]
    fn eps_optimal_on_full_grid_is_straight() {
        let c = Configuration::all_open(16);
        let r = epsilon_optimal_path(&c, [0.0, 0.0], [10.0, 0.0], 0.1, &NormModel::l1()).unwrap().unwrap();
        let straight: Vec<Point> = (0..=10).map(|x| Point::new(x, 0)).collect();
        assert_eq!(r.path, straight);
        assert_eq!(r.hausdorff, 0.0);
        assert!(r.len() as f64 <= 1.1 * 10.0);
        assert!(eps_optimal_pieces_formula(&NormModel::l1(), [0.0, 0.0], [10.0, 0.0], 0.1, 16) > r.pieces);
    }

    #[test]
    fn eps_optimal_degenerate_segment() {
        let c = Configuration::all_open(6);
        let r = epsilon_optimal_path(&c, [1.3, -0.4], [1.3, -0.4], 0.2, &NormModel::l1()).unwrap().unwrap();
        assert_eq!(r.path, vec![Point::new(1, 0)]);
        assert!(r.hausdorff <= 0.4 + 1e-12);
        assert!(epsilon_optimal_path(&c, [0.0, 0.0], [1.0, 1.0], 0.0, &NormModel::l1()).is_err());
    }

    #[test]
    fn eps_optimal_paths_are_simple() {
        let spec = GridSpec::new(24, 0.8, 5).unwrap();
        let norm = NormModel::new(vec![[1.0, 0.0], [1.0, 1.0]], vec![1.2, 1.5], Some(0.8), "test").unwrap();
        let mut seen = 0;
        for i in 0..20 {
            let c = sample_configuration(spec, i).unwrap();
            let Ok(Some(r)) = epsilon_optimal_path(&c, [-15.0, -6.0], [14.0, 9.0], 0.5, &norm) else { continue };
            seen += 1;
            let set: std::collections::HashSet<_> = r.path.iter().collect();
            assert_eq!(set.len(), r.path.len());
            for w in r.path.windows(2) {
                assert!(c.is_open_between(w[0], w[1]));
            }
        }
        assert!(seen > 10);
    }
}
