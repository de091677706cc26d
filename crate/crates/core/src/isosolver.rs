use crate::constants::C0;
use crate::error::{Error, Result};
use crate::geometry::{polygonal_approx, weighted_interior_count, Circuit, MarkGrid, PolyCurve, Vec2};
use crate::lattice::{BoxLattice, Point, STEPS};
use crate::metric::{Bfs, ClosestVertexIndex};
use crate::percolation::{check_uniq_event, default_kappa, label_clusters, ClusterLabeling, Configuration};
use crate::wulff::{len_norm, wulff_shape, NormModel, WulffShape};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::HashSet;

/// Largest admissible volume, floor(|B(n)| / 2).
pub fn volume_cap(n: i64) -> i64 {
    let s = 2 * n + 1;
    s * s / 2
}

/// Largest box size the exhaustive search accepts.
pub const BRUTE_FORCE_MAX_N: i64 = 4;

/// Largest box size on which `phi` runs the parametric bound by default.
pub const PARAMETRIC_MAX_N: i64 = 16;

#[derive(Clone, Debug)]
pub struct Giant {
    pub n: i64,
    pub label: u32,
    pub members: Vec<bool>,
    pub size: usize,
    marks: MarkGrid,
}

impl Giant {
    pub fn from_labeling(labeling: &ClusterLabeling, label: u32) -> Giant {
        let members = labeling.members(label);
        let size = members.iter().filter(|&&m| m).count();
        let marks = MarkGrid::new(labeling.n, &members);
        Giant { n: labeling.n, label, members, size, marks }
    }

    /// The giant under the uniqueness event at threshold `kappa` (the default for p when absent),
    /// or `None` if the event fails.
    pub fn under_event(config: &Configuration, kappa: Option<f64>) -> (ClusterLabeling, Option<Giant>) {
        let lab = label_clusters(config);
        let rep = check_uniq_event(&lab, kappa.unwrap_or_else(|| default_kappa(config.spec.p)));
        let g = rep.giant_label.map(|l| Giant::from_labeling(&lab, l));
        (lab, g)
    }

    /// The largest cluster, provided no other cluster has the same size.
    pub fn unique_largest(config: &Configuration) -> Option<Giant> {
        let lab = label_clusters(config);
        lab.largest_is_unique().then(|| Giant::from_labeling(&lab, lab.largest()))
    }

    pub fn contains(&self, p: Point) -> bool {
        BoxLattice::new(self.n).index(p).is_some_and(|i| self.members[i])
    }

    pub fn marks(&self) -> &MarkGrid {
        &self.marks
    }
}

/// A valid circuit together with |γ| and the number of giant vertices in vol(γ).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub circuit: Circuit,
    pub length: u64,
    pub count: u64,
    pub vol: i64,
}

impl Witness {
    pub fn ratio(&self) -> f64 {
        self.length as f64 / self.count as f64
    }

    fn cmp_ratio(&self, o: &Witness) -> Ordering {
        (self.length as u128 * o.count as u128).cmp(&(o.length as u128 * self.count as u128))
    }

    /// Smaller ratio first, ties broken by the lexicographically smaller vertex list.
    pub fn better_than(&self, o: &Witness) -> bool {
        match self.cmp_ratio(o) {
            Ordering::Less => true,
            Ordering::Equal => self.circuit < o.circuit,
            Ordering::Greater => false,
        }
    }
}

fn keep_best(best: &mut Option<Witness>, w: Witness) {
    if best.as_ref().map_or(true, |b| w.better_than(b)) {
        *best = Some(w);
    }
}

/// Checks that `vs` is an open circuit in the giant with vol at most `cap` and evaluates it.
pub fn evaluate_circuit(config: &Configuration, giant: &Giant, vs: Vec<Point>, cap: i64) -> Option<Witness> {
    let circuit = Circuit::new(vs).ok()?;
    let k = circuit.len();
    let v = circuit.vertices();
    for i in 0..k {
        if !giant.contains(v[i]) || !config.is_open_between(v[i], v[(i + 1) % k]) {
            return None;
        }
    }
    let vol = circuit.vol();
    if vol > cap {
        return None;
    }
    let count = weighted_interior_count(&circuit, giant.marks());
    Some(Witness { length: k as u64, count, vol, circuit })
}

fn dir_index(a: Point, b: Point) -> usize {
    STEPS.iter().position(|&s| a + s == b).expect("unit step")
}

/// Signed Green-sum weight of the directed edge a -> b: marked points strictly below a
/// horizontal edge, counted positively for leftward and negatively for rightward edges.
fn green(marks: &MarkGrid, a: Point, b: Point) -> i64 {
    if a.y != b.y {
        return 0;
    }
    let below = marks.column_count(a.x.min(b.x), -marks.n, a.y - 1) as i64;
    if b.x < a.x {
        below
    } else {
        -below
    }
}

/// Whether the point just above east of a vertex lies to the left of the turn din -> dout.
fn corner(din: usize, dout: usize) -> i64 {
    let back = (din + 2) % 4;
    let span = (back + 4 - dout) % 4;
    (((4 - dout) % 4) < span) as i64
}

/// Marked points strictly inside a counterclockwise vertex cycle, as a sum of per-step terms.
pub fn strict_interior_by_steps(vs: &[Point], marks: &MarkGrid) -> i64 {
    let k = vs.len();
    (0..k)
        .map(|i| {
            let (u, v, w) = (vs[(i + k - 1) % k], vs[i], vs[(i + 1) % k]);
            let m = marks.is_marked(v) as i64;
            green(marks, v, w) - m * corner(dir_index(u, v), dir_index(v, w))
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateConstants {
    pub c0: f64,
    /// (eps, R): circuits with vol > R and |γ| < vol^(2/3) have |γ| >= (4 - eps) sqrt(vol).
    pub regime: Option<(f64, f64)>,
}

impl CertificateConstants {
    pub fn c0_only() -> Self {
        CertificateConstants { c0: C0, regime: None }
    }

    /// The (4 - eps) regime with the smallest R for which |γ| >= 4 sqrt(vol - |γ|) implies it.
    pub fn with_eps(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 4.0) {
            return Err(Error::InvalidParameter(format!("eps = {eps} outside (0, 4)")));
        }
        let r = (1.0 - (1.0 - eps / 4.0).powi(2)).powi(-3);
        Ok(CertificateConstants { c0: C0, regime: Some((eps, r)) })
    }
}

impl Default for CertificateConstants {
    fn default() -> Self {
        CertificateConstants::with_eps(0.5).expect("valid eps")
    }
}

/// Lower bound on n |γ| / vol(γ) over every circuit with vol(γ) <= cap, independent of the configuration.
pub fn certificate_lower_bound(n: i64, cap: i64, constants: &CertificateConstants) -> f64 {
    let nf = n as f64;
    let cap = cap.max(4) as f64;
    let mut best = constants.c0 * nf / cap.sqrt();
    if let Some((eps, r)) = constants.regime {
        // (|γ| + 4)^2 >= 16 vol for every circuit, by Pick and the l1 isoperimetric inequality.
        best = best.max(nf * (4.0 / cap.sqrt() - 4.0 / cap));
        let small = cap.min(r.max(4.0));
        let mut three = (nf * constants.c0 / small.sqrt()).max(4.0 * nf / small);
        three = three.min(nf / cap.cbrt());
        if cap > r {
            three = three.min((4.0 - eps) * nf / cap.sqrt());
        }
        best = best.max(three);
    }
    best
}

/// Exact enumeration of simple cycles through open giant edges.
struct CycleSearch<'a> {
    lattice: BoxLattice,
    config: &'a Configuration,
    giant: &'a Giant,
    on_path: Vec<bool>,
    path: Vec<Point>,
    max_vertices: usize,
}

trait CycleSink {
    /// Whether a partial cycle with `edges` edges so far and at least `to_go` more can be skipped.
    fn prune(&self, edges: usize, to_go: i64) -> bool;
    fn cycle(&mut self, path: &[Point], twice_area: i64, strict_marked: i64);
}

impl<'a> CycleSearch<'a> {
    fn new(config: &'a Configuration, giant: &'a Giant, max_vertices: usize) -> Self {
        let lattice = config.lattice();
        CycleSearch { lattice, config, giant, on_path: vec![false; lattice.num_vertices()], path: Vec::new(), max_vertices }
    }

    fn run(&mut self, sink: &mut dyn CycleSink) {
        for s in 0..self.lattice.num_vertices() {
            if !self.giant.members[s] {
                continue;
            }
            let sp = self.lattice.point(s);
            self.path.push(sp);
            self.on_path[s] = true;
            self.extend(s, sp, 0, 0, sink);
            self.on_path[s] = false;
            self.path.pop();
        }
    }

    fn extend(&mut self, s: usize, cur: Point, area2: i64, green_sum: i64, sink: &mut dyn CycleSink) {
        let start = self.path[0];
        let nbrs: Vec<Point> = self.config.open_neighbors(cur).collect();
        for v in nbrs {
            let vi = self.lattice.index_unchecked(v);
            let a2 = area2 + cur.x * v.y - v.x * cur.y;
            let g = green_sum + green(self.giant.marks(), cur, v);
            if vi == s {
                if self.path.len() >= 4 && a2 > 0 {
                    let k = self.path.len();
                    let corners: i64 = (0..k)
                        .map(|i| {
                            let (u, w, x) = (self.path[(i + k - 1) % k], self.path[i], self.path[(i + 1) % k]);
                            corner(dir_index(u, w), dir_index(w, x))
                        })
                        .sum();
                    sink.cycle(&self.path, a2, g - corners);
                }
                continue;
            }
            if vi < s || self.on_path[vi] || self.path.len() >= self.max_vertices {
                continue;
            }
            if sink.prune(self.path.len(), v.l1_dist(start).max(1)) {
                continue;
            }
            self.on_path[vi] = true;
            self.path.push(v);
            self.extend(s, v, a2, g, sink);
            self.path.pop();
            self.on_path[vi] = false;
        }
    }
}

struct CappedSink<'a> {
    config: &'a Configuration,
    giant: &'a Giant,
    cap: i64,
    max_count: u64,
    best: Option<Witness>,
}

impl CycleSink for CappedSink<'_> {
    fn prune(&self, edges: usize, to_go: i64) -> bool {
        match &self.best {
            Some(b) => (edges as u128 + to_go as u128) * b.count as u128 > b.length as u128 * self.max_count as u128,
            None => false,
        }
    }

    fn cycle(&mut self, path: &[Point], twice_area: i64, strict_marked: i64) {
        let len = path.len() as i64;
        let vol = (twice_area + len + 2) / 2;
        if vol > self.cap {
            return;
        }
        let count = (strict_marked + len) as u64;
        if let Some(b) = &self.best {
            if (len as u128 * b.count as u128) > (b.length as u128 * count as u128) {
                return;
            }
        }
        if let Some(w) = evaluate_circuit(self.config, self.giant, path.to_vec(), self.cap) {
            debug_assert_eq!(w.count, count);
            keep_best(&mut self.best, w);
        }
    }
}

struct InteriorSink {
    best: Option<(u64, u64, Vec<Point>)>,
}

impl CycleSink for InteriorSink {
    fn prune(&self, _: usize, _: i64) -> bool {
        false
    }

    fn cycle(&mut self, path: &[Point], _: i64, strict_marked: i64) {
        if strict_marked <= 0 {
            return;
        }
        let (l, i) = (path.len() as u64, strict_marked as u64);
        let better = match &self.best {
            None => true,
            Some((bl, bi, _)) => (l as u128 * *bi as u128) < (*bl as u128 * i as u128),
        };
        if better {
            self.best = Some((l, i, path.to_vec()));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiResult {
    pub n: i64,
    pub p: f64,
    pub seed: u64,
    pub sample_index: u64,
    #[serde(rename = "lb", with = "finite_or_null")]
    pub lower_bound: f64,
    #[serde(rename = "ub", with = "finite_or_null")]
    pub upper_bound: f64,
    pub method: String,
    pub witness: Option<Circuit>,
    pub cap: i64,
    pub vol: Option<i64>,
    pub interior_count: Option<u64>,
    pub length: Option<u64>,
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl PhiResult {
    fn new(config: &Configuration, cap: i64, lb: f64, witness: Option<Witness>, method: String) -> PhiResult {
        let ub = witness.as_ref().map_or(f64::INFINITY, Witness::ratio);
        PhiResult {
            n: config.n(),
            p: config.spec.p,
            seed: config.spec.master_seed,
            sample_index: config.sample_index,
            lower_bound: lb.min(ub),
            upper_bound: ub,
            method,
            vol: witness.as_ref().map(|w| w.vol),
            interior_count: witness.as_ref().map(|w| w.count),
            length: witness.as_ref().map(|w| w.length),
            witness: witness.map(|w| w.circuit),
            cap,
        }
    }

    /// Whether no admissible circuit was found; the upper bound is then +infinity.
    pub fn is_empty(&self) -> bool {
        self.witness.is_none()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<PhiResult> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Exact minimum of |γ| / |C ∩ vol(γ)| over open circuits in the largest cluster with vol <= cap.
pub fn brute_force_phi(config: &Configuration, cap: i64) -> Result<PhiResult> {
    if config.n() > BRUTE_FORCE_MAX_N {
        return Err(Error::TooLarge(config.n()));
    }
    let giant = Giant::unique_largest(config).ok_or(Error::NoUniqueLargest)?;
    let best = brute_force_witness(config, &giant, cap);
    let (lb, method) = match &best {
        Some(w) => (w.ratio(), "bruteforce"),
        None => (f64::INFINITY, "bruteforce-empty"),
    };
    Ok(PhiResult::new(config, cap, lb, best, method.into()))
}

fn brute_force_witness(config: &Configuration, giant: &Giant, cap: i64) -> Option<Witness> {
    let mut sink = CappedSink { config, giant, cap, max_count: (cap as u64).min(giant.size as u64), best: None };
    CycleSearch::new(config, giant, cap.max(0) as usize).run(&mut sink);
    sink.best
}

/// Exact minimum of |γ| / (giant vertices strictly inside γ) over all open circuits in the largest
/// cluster, without a volume cap. `None` if no circuit encloses a giant vertex.
pub fn brute_force_interior_ratio(config: &Configuration) -> Result<Option<(u64, u64, Circuit)>> {
    if config.n() > BRUTE_FORCE_MAX_N {
        return Err(Error::TooLarge(config.n()));
    }
    let giant = Giant::unique_largest(config).ok_or(Error::NoUniqueLargest)?;
    let mut sink = InteriorSink { best: None };
    CycleSearch::new(config, &giant, usize::MAX).run(&mut sink);
    Ok(sink.best.map(|(l, i, p)| (l, i, Circuit::new(p).expect("enumerated cycles are circuits"))))
}

/// Directed giant edges with transition weights 1 - t a, where summing a along a
/// counterclockwise circuit gives its strictly interior giant count.
struct LineGraph {
    tails: Vec<Point>,
    /// (from, to, a) over non-backtracking transitions.
    trans: Vec<(u32, u32, i64)>,
}

impl LineGraph {
    fn new(config: &Configuration, giant: &Giant) -> LineGraph {
        let lat = config.lattice();
        let mut id = vec![[u32::MAX; 4]; lat.num_vertices()];
        let mut tails = Vec::new();
        let mut heads = Vec::new();
        for i in 0..lat.num_vertices() {
            if !giant.members[i] {
                continue;
            }
            let p = lat.point(i);
            for (d, s) in STEPS.iter().enumerate() {
                if config.is_open_between(p, p + *s) {
                    id[i][d] = tails.len() as u32;
                    tails.push(p);
                    heads.push((p + *s, d));
                }
            }
        }
        let mut trans = Vec::new();
        for (e, &(v, din)) in heads.iter().enumerate() {
            let vi = lat.index_unchecked(v);
            for dout in 0..4 {
                let f = id[vi][dout];
                if f == u32::MAX || dout == (din + 2) % 4 {
                    continue;
                }
                let a = green(giant.marks(), v, v + STEPS[dout]) - corner(din, dout);
                trans.push((e as u32, f, a));
            }
        }
        LineGraph { tails, trans }
    }

    /// A cycle of negative total weight under den - num a, as (vertex walk, sum of a).
    fn negative_cycle(&self, num: i128, den: i128) -> Option<(Vec<Point>, i64)> {
        let m = self.tails.len();
        let mut dist = vec![0i128; m];
        let mut pred = vec![u32::MAX; m];
        let mut pred_a = vec![0i64; m];
        for _ in 0..=m {
            let mut changed = false;
            for &(from, to, a) in &self.trans {
                let d = dist[from as usize] + den - num * a as i128;
                if d < dist[to as usize] {
                    dist[to as usize] = d;
                    pred[to as usize] = from;
                    pred_a[to as usize] = a;
                    changed = true;
                }
            }
            if !changed {
                return None;
            }
            if let Some(c) = pred_cycle(&pred) {
                let a: i64 = c.iter().map(|&x| pred_a[x]).sum();
                let walk = c.iter().map(|&x| self.tails[x]).collect();
                return Some((walk, a));
            }
        }
        None
    }
}

/// Some cycle of the predecessor graph, in forward order.
fn pred_cycle(pred: &[u32]) -> Option<Vec<usize>> {
    let m = pred.len();
    let mut state = vec![0u32; m];
    for s in 0..m {
        if state[s] != 0 {
            continue;
        }
        let mark = s as u32 + 1;
        let mut x = s;
        while state[x] == 0 {
            state[x] = mark;
            if pred[x] == u32::MAX {
                break;
            }
            x = pred[x] as usize;
        }
        if state[x] == mark && pred[x] != u32::MAX {
            let mut c = vec![x];
            let mut y = pred[x] as usize;
            while y != x {
                c.push(y);
                y = pred[y] as usize;
            }
            c.reverse();
            return Some(c);
        }
    }
    None
}

fn t_as_rational(t: f64) -> (i128, i128) {
    let den = 1i128 << 32;
    ((t * den as f64).round() as i128, den)
}

/// Whether some closed non-backtracking walk through open giant edges has
/// length - t * (strictly interior giant count) < 0. Uses the unique largest cluster as the giant.
pub fn parametric_ratio_test(config: &Configuration, t: f64) -> bool {
    if !(t > 0.0) {
        return false;
    }
    let Some(giant) = Giant::unique_largest(config) else {
        return false;
    };
    let g = LineGraph::new(config, &giant);
    let t = t.min(g.tails.len() as f64 + 1.0);
    let (num, den) = t_as_rational(t);
    g.negative_cycle(num, den).is_some()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricThreshold {
    /// Infimum of t at which the test turns true; +infinity if it never does.
    pub value: f64,
    pub length: u64,
    pub interior: u64,
    /// A closed walk attaining the threshold.
    pub witness: Vec<Point>,
    pub iterations: usize,
}

impl ParametricThreshold {
    /// The implied bound |γ| / |C ∩ vol(γ)| >= t / (1 + t), using that γ itself lies in the giant.
    pub fn phi_bound(&self) -> f64 {
        if self.value.is_finite() {
            self.value / (1.0 + self.value)
        } else {
            1.0
        }
    }
}

/// Exact threshold of `parametric_ratio_test` by Newton steps on the ratio: each negative walk
/// found lowers t to that walk's own ratio until no negative walk remains.
pub fn parametric_threshold(config: &Configuration) -> Result<ParametricThreshold> {
    let giant = Giant::unique_largest(config).ok_or(Error::NoUniqueLargest)?;
    Ok(parametric_threshold_for(config, &giant))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidedCircuit {
    pub witness: Witness,
    /// Largest l-infinity distance from a circuit vertex to the scaled polygonal curve.
    pub distance_to_curve: f64,
    /// eps^2 N.
    pub distance_budget: f64,
    /// (1 + eps) N len(P_r) in the supplied norm.
    pub length_budget: f64,
}

impl GuidedCircuit {
    pub fn within_distance(&self) -> bool {
        self.distance_to_curve <= self.distance_budget
    }

    pub fn within_length(&self) -> bool {
        self.witness.length as f64 <= self.length_budget
    }
}

/// Closes a loop of anchors into a circuit: geodesics between successive anchors, concatenated
/// with first-revisit cuts, and the last geodesic cut at its first return to the path.
fn close_loop(config: &Configuration, bfs: &mut Bfs, anchors: &[Point]) -> Option<Vec<Point>> {
    if anchors.len() < 2 {
        return None;
    }
    let mut path = vec![anchors[0]];
    for pair in anchors.windows(2) {
        let piece = bfs.geodesic(config, pair[0], pair[1])?;
        path = crate::geometry::concatenate(&path, &piece).ok()?;
    }
    let back = bfs.geodesic(config, *path.last()?, anchors[0])?;
    let pos: std::collections::HashMap<Point, usize> = path.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let j = (1..back.len()).find(|&j| pos.contains_key(&back[j]))?;
    let i = pos[&back[j]];
    let mut cycle = path[i..].to_vec();
    cycle.extend_from_slice(&back[1..j]);
    (cycle.len() >= 4).then_some(cycle)
}

fn anchors_for(index: &ClosestVertexIndex, waypoints: &[Vec2]) -> Result<Vec<Point>> {
    let mut anchors: Vec<Point> = Vec::with_capacity(waypoints.len());
    for w in waypoints {
        let c = index.closest(*w)?;
        if anchors.last() != Some(&c) {
            anchors.push(c);
        }
    }
    while anchors.len() > 1 && anchors.first() == anchors.last() {
        anchors.pop();
    }
    Ok(anchors)
}

/// Tries the anchor loop from a few starting offsets and keeps the best valid circuit.
fn circuit_through(
    config: &Configuration,
    giant: &Giant,
    index: &ClosestVertexIndex,
    bfs: &mut Bfs,
    waypoints: &[Vec2],
    cap: i64,
) -> Result<Option<Witness>> {
    let anchors = anchors_for(index, waypoints)?;
    let k = anchors.len();
    if k < 2 {
        return Ok(None);
    }
    let mut best = None;
    for shift in [0, k / 3, (2 * k) / 3] {
        let mut rot = anchors.clone();
        rot.rotate_left(shift);
        if let Some(vs) = close_loop(config, bfs, &rot) {
            if let Some(w) = evaluate_circuit(config, giant, vs, cap) {
                keep_best(&mut best, w);
            }
        }
        if best.is_some() {
            break;
        }
    }
    Ok(best)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 0.25) {
        return Err(Error::InvalidParameter(format!("eps = {eps} outside (0, 1/4)")));
    }
    Ok(())
}

/// Circuit following N ∂Ŵ with N = (1 - eps) sqrt(2) n: an r-polygonal approximation of the
/// normalized Wulff boundary, r = eps^2 N / 8, whose successive closest giant vertices are joined
/// by geodesics. `None` if the result is not a circuit in the giant with vol <= floor(|B(n)|/2).
pub fn wulff_guided_circuit(
    config: &Configuration,
    wulff: &WulffShape,
    eps: f64,
    norm: &NormModel,
) -> Result<Option<GuidedCircuit>> {
    check_eps(eps)?;
    let (lab, giant) = Giant::under_event(config, None);
    let giant = giant.ok_or(Error::NoUniqueLargest)?;
    let index = ClosestVertexIndex::for_config(config, &lab, giant.label);
    let mut bfs = Bfs::new(config.lattice());
    guided_with(config, &giant, &index, &mut bfs, wulff, eps, norm)
}

fn guided_with(
    config: &Configuration,
    giant: &Giant,
    index: &ClosestVertexIndex,
    bfs: &mut Bfs,
    wulff: &WulffShape,
    eps: f64,
    norm: &NormModel,
) -> Result<Option<GuidedCircuit>> {
    let big_n = (1.0 - eps) * std::f64::consts::SQRT_2 * config.n() as f64;
    let r = eps * eps * big_n / 8.0;
    let curve = wulff.normalized_boundary().scaled(big_n, [0.0, 0.0]);
    let poly = polygonal_approx(&curve, r)?;
    let Some(w) = circuit_through(config, giant, index, bfs, &poly.points, volume_cap(config.n()))? else {
        return Ok(None);
    };
    let pts: Vec<Vec2> = w.circuit.vertices().iter().map(|p| p.to_f64()).collect();
    let distance_to_curve = pts.iter().map(|&q| poly.dist_linf(q)).fold(0.0, f64::max);
    Ok(Some(GuidedCircuit {
        distance_to_curve,
        distance_budget: eps * eps * big_n,
        length_budget: (1.0 + eps) * len_norm(&poly, norm),
        witness: w,
    }))
}

/// Points along a closed curve at spacing about `h` in l1, always including its vertices.
fn resample(curve: &PolyCurve, h: f64) -> Vec<Vec2> {
    let mut out = Vec::new();
    for (a, b) in curve.segments() {
        let l = (b[0] - a[0]).abs() + (b[1] - a[1]).abs();
        let k = (l / h).ceil().max(1.0) as usize;
        for i in 0..k {
            let t = i as f64 / k as f64;
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

fn square_waypoints(m: i64) -> Vec<Vec2> {
    let m = m as f64;
    vec![[-m, -m], [m, -m], [m, m], [-m, m], [-m, -m]]
}

/// Full-width rectangles of several heights and offsets, and their transposes. Used when the
/// centred loops find nothing good, as when closed lines cut the box into strips.
fn strip_loops(n: i64) -> Vec<Vec<Vec2>> {
    let nf = n as f64;
    let step = (n / 16).max(1);
    let mut out = Vec::new();
    for half in [(n / 16).max(1), (n / 8).max(1), (n / 4).max(1)] {
        let mut c = -n + half;
        while c + half <= n {
            let (lo, hi) = ((c - half) as f64, (c + half) as f64);
            let ws = vec![[-nf, lo], [nf, lo], [nf, hi], [-nf, hi], [-nf, lo]];
            if let Ok(curve) = PolyCurve::closed(ws) {
                let pts = resample(&curve, 8.0);
                out.push(pts.iter().map(|p| [p[1], p[0]]).rev().collect());
                out.push(pts);
            }
            c += step;
        }
    }
    out
}

/// The boundary of B(m) as a counterclockwise vertex list.
pub fn square_circuit(m: i64) -> Vec<Point> {
    let mut vs = Vec::with_capacity(8 * m as usize);
    for x in -m..m {
        vs.push(Point::new(x, -m));
    }
    for y in -m..m {
        vs.push(Point::new(m, y));
    }
    for x in (-m + 1..=m).rev() {
        vs.push(Point::new(x, m));
    }
    for y in (-m + 1..=m).rev() {
        vs.push(Point::new(-m, y));
    }
    vs
}

/// Improves a witness by local moves that keep it an open circuit in the giant with vol <= cap:
/// filling a reflex corner, pushing a straight run outward by one, and straightening a one-step
/// bump or dent. Each accepted move strictly lowers the ratio; at most `budget` moves are made.
pub fn local_search_improve(config: &Configuration, giant: &Giant, start: &Witness, cap: i64, budget: usize) -> Witness {
    if budget == 0 {
        return start.clone();
    }
    let mut vs = start.circuit.vertices().to_vec();
    let mut on: HashSet<Point> = vs.iter().copied().collect();
    let (mut len, mut count, mut vol) = (start.length as i64, start.count as i64, start.vol);
    let mut moves = 0;
    let open = |a: Point, b: Point| config.is_open_between(a, b);
    let better = |l: i64, c: i64, l0: i64, c0: i64| c > 0 && (l as i128 * c0 as i128) < (l0 as i128 * c as i128);
    'outer: loop {
        let k = vs.len();
        for i in 0..k {
            if moves >= budget {
                break 'outer;
            }
            let step = |j: usize| dir_index(vs[j % k], vs[(j + 1) % k]);
            let (u, a, v) = (vs[(i + k - 1) % k], vs[i], vs[(i + 1) % k]);
            let (din, dout) = (dir_index(u, a), dir_index(a, v));
            // A right turn at a: the cell u, a, v, a' lies outside.
            if dout == (din + 3) % 4 {
                let a2 = u + v - a;
                if !on.contains(&a2) && open(u, a2) && open(a2, v) && vol < cap && better(len, count + 1, len, count) {
                    on.remove(&a);
                    on.insert(a2);
                    vs[i] = a2;
                    count += 1;
                    vol += 1;
                    moves += 1;
                    continue 'outer;
                }
            }
            // Bump or dent: step d, then m >= 1 steps e, then step -d, starting at vertex i.
            let d = step(i);
            let e = step(i + 1);
            if e != d && e != (d + 2) % 4 {
                let mut m = 1;
                while m + 1 < k && step(i + 1 + m) == e {
                    m += 1;
                }
                if step(i + 1 + m) == (d + 2) % 4 && m + 3 <= k {
                    let outward = e == (d + 1) % 4;
                    let base = vs[i];
                    let line: Vec<Point> = (1..m).map(|j| base + STEPS[e] * j as i64).collect();
                    let end = base + STEPS[e] * m as i64;
                    let free = line.iter().all(|p| !on.contains(p));
                    let all_open = (0..m).all(|j| open(base + STEPS[e] * j as i64, base + STEPS[e] * (j as i64 + 1)));
                    let (dl, dc) = if outward { (-2, -(m as i64 + 1)) } else { (-2, m as i64 - 1) };
                    if free && all_open && vol + dc <= cap && better(len + dl, count + dc, len, count) {
                        let removed: Vec<Point> = (0..=m).map(|j| vs[(i + 1 + j) % k]).collect();
                        debug_assert_eq!(vs[(i + m + 2) % k], end);
                        for p in &removed {
                            on.remove(p);
                        }
                        on.extend(line.iter().copied());
                        let mut next = Vec::with_capacity(k);
                        let mut j = (i + m + 2) % k;
                        while j != i {
                            next.push(vs[j]);
                            j = (j + 1) % k;
                        }
                        next.push(base);
                        next.extend(line);
                        vs = next;
                        len += dl;
                        count += dc;
                        vol += dc;
                        moves += 1;
                        continue 'outer;
                    }
                }
            }
            // Push the maximal straight run starting at vertex i outward by one.
            let e = step(i);
            if step(i + k - 1) != e {
                let mut m = 1;
                while m < k && step(i + m) == e {
                    m += 1;
                }
                let out = (e + 3) % 4;
                let shifted: Vec<Point> = (0..=m).map(|j| vs[(i + j) % k] + STEPS[out]).collect();
                let ok = shifted.iter().all(|p| !on.contains(p))
                    && open(vs[i], shifted[0])
                    && open(shifted[m], vs[(i + m) % k])
                    && shifted.windows(2).all(|w| open(w[0], w[1]));
                let dc = m as i64 + 1;
                if ok && vol + dc <= cap && better(len + 2, count + dc, len, count) {
                    for j in 1..m {
                        on.remove(&vs[(i + j) % k]);
                    }
                    let mut next = Vec::with_capacity(k + 2);
                    let mut j = (i + m) % k;
                    while j != (i + 1) % k {
                        next.push(vs[j]);
                        j = (j + 1) % k;
                    }
                    next.extend(shifted.iter().copied());
                    on.extend(shifted);
                    vs = next;
                    len += 2;
                    count += dc;
                    vol += dc;
                    moves += 1;
                    continue 'outer;
                }
            }
        }
        break;
    }
    match evaluate_circuit(config, giant, vs, cap) {
        Some(w) if w.length as i64 == len && w.count as i64 == count && !start.better_than(&w) => w,
        _ => start.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    BruteForce,
    Candidates,
    Parametric,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    pub strategy: Strategy,
    pub eps: f64,
    pub local_search_budget: usize,
    /// Norm whose Wulff shape guides the candidates; l1 when absent.
    pub norm: Option<NormModel>,
    pub certificate: CertificateConstants,
    /// Largest n at which the parametric bound enters the lower bound under `Candidates`.
    pub parametric_max_n: i64,
    /// Giant-density threshold of the uniqueness event; the cached default for p when absent.
    #[serde(default)]
    pub kappa: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            strategy: Strategy::Candidates,
            eps: 0.1,
            local_search_budget: 20_000,
            norm: None,
            certificate: CertificateConstants::default(),
            parametric_max_n: PARAMETRIC_MAX_N,
            kappa: None,
        }
    }
}

impl SolverConfig {
    /// Exhaustive search for n <= 4, candidates otherwise.
    pub fn for_n(n: i64) -> Self {
        let strategy = if n <= BRUTE_FORCE_MAX_N { Strategy::BruteForce } else { Strategy::Candidates };
        SolverConfig { strategy, ..Default::default() }
    }

    pub fn with_norm(mut self, norm: NormModel) -> Self {
        self.norm = Some(norm);
        self
    }

    pub fn validate(&self, n: i64) -> Result<()> {
        check_eps(self.eps)?;
        if self.strategy == Strategy::BruteForce && n > BRUTE_FORCE_MAX_N {
            return Err(Error::TooLarge(n));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PhiOutcome {
    Solved(PhiResult),
    EventFailed { n: i64, p: f64, seed: u64, sample_index: u64 },
}

impl PhiOutcome {
    pub fn result(&self) -> Option<&PhiResult> {
        match self {
            PhiOutcome::Solved(r) => Some(r),
            PhiOutcome::EventFailed { .. } => None,
        }
    }
}

/// Upper bound candidates: Wulff-guided loops at several scales and spacings, and square
/// boundaries at every admissible size, each improved by local search.
pub fn candidate_witnesses(config: &Configuration, giant: &Giant, index: &ClosestVertexIndex, solver: &SolverConfig) -> Result<Vec<Witness>> {
    let n = config.n();
    let cap = volume_cap(n);
    let l1 = NormModel::l1();
    let norm = solver.norm.as_ref().unwrap_or(&l1);
    let wulff = wulff_shape(norm, 64)?;
    let nf = n as f64;
    let mut loops: Vec<Vec<Vec2>> = Vec::new();
    for scale in [0.99, 0.97, 0.94, 0.9, 0.85, 0.75, 0.6] {
        let curve = wulff.normalized_boundary().scaled(scale * std::f64::consts::SQRT_2 * nf, [0.0, 0.0]);
        for h in [1.0, 4.0, 8.0, 16.0] {
            loops.push(resample(&curve, h));
        }
    }
    let m_max = (((2 * n + 1) as f64 / std::f64::consts::SQRT_2 - 1.0) / 2.0).floor() as i64;
    let mut exact_squares = Vec::new();
    for m in 1..=m_max.max(1) {
        if (2 * m + 1) * (2 * m + 1) <= cap {
            exact_squares.push(m);
        }
    }
    for m in [m_max, m_max - 1, m_max - 2, m_max - 4, (3 * m_max) / 4, m_max / 2] {
        if m >= 1 {
            for h in [1.0, 8.0] {
                loops.push(resample(&PolyCurve::closed(square_waypoints(m))?, h));
            }
        }
    }
    let lattice = config.lattice();
    let mut found: Vec<Witness> = loops
        .par_iter()
        .map_init(
            || Bfs::new(lattice),
            |bfs, w| circuit_through(config, giant, index, bfs, w, cap).ok().flatten(),
        )
        .flatten()
        .collect();
    let guided: Vec<Witness> = [solver.eps, solver.eps / 2.0, 0.2]
        .par_iter()
        .map_init(
            || Bfs::new(lattice),
            |bfs, &e| guided_with(config, giant, index, bfs, &wulff, e, norm).ok().flatten().map(|g| g.witness),
        )
        .flatten()
        .collect();
    found.extend(guided);
    found.extend(exact_squares.into_iter().filter_map(|m| evaluate_circuit(config, giant, square_circuit(m), cap)));
    let density = giant.size as f64 / ((2 * n + 1) * (2 * n + 1)) as f64;
    let poor = found.iter().map(Witness::ratio).fold(f64::INFINITY, f64::min) * nf > 1.5 * 2.0 * std::f64::consts::SQRT_2 / density;
    if poor {
        let strips: Vec<Witness> = strip_loops(n)
            .par_iter()
            .map_init(
                || Bfs::new(lattice),
                |bfs, w| circuit_through(config, giant, index, bfs, w, cap).ok().flatten(),
            )
            .flatten()
            .collect();
        found.extend(strips);
    }
    found.sort_by(|a, b| a.cmp_ratio(b).then_with(|| a.circuit.cmp(&b.circuit)));
    found.dedup_by(|a, b| a.circuit == b.circuit);
    found.truncate(8);
    Ok(found
        .par_iter()
        .map(|w| local_search_improve(config, giant, w, cap, solver.local_search_budget))
        .collect())
}

/// Bounds on the isoperimetric constant of the giant: exact for the exhaustive strategy,
/// otherwise a certified lower bound and the best candidate circuit as upper bound.
pub fn phi(config: &Configuration, solver: &SolverConfig) -> Result<PhiOutcome> {
    let n = config.n();
    solver.validate(n)?;
    let (lab, giant) = Giant::under_event(config, solver.kappa);
    let Some(giant) = giant else {
        return Ok(PhiOutcome::EventFailed {
            n,
            p: config.spec.p,
            seed: config.spec.master_seed,
            sample_index: config.sample_index,
        });
    };
    let cap = volume_cap(n);
    if solver.strategy == Strategy::BruteForce {
        let best = brute_force_witness(config, &giant, cap);
        let lb = best.as_ref().map_or(f64::INFINITY, Witness::ratio);
        let method = if best.is_some() { "bruteforce" } else { "bruteforce-empty" };
        return Ok(PhiOutcome::Solved(PhiResult::new(config, cap, lb, best, method.into())));
    }
    let mut methods = vec!["certificate"];
    let mut lb = certificate_lower_bound(n, cap, &solver.certificate) / n as f64;
    let mut best = None;
    if solver.strategy == Strategy::Parametric || n <= solver.parametric_max_n {
        let t = parametric_threshold_for(config, &giant);
        if t.phi_bound() > lb {
            lb = t.phi_bound();
            methods[0] = "parametric";
        }
        if let Some(w) = evaluate_circuit(config, &giant, t.witness, cap) {
            best = Some(w);
        }
    }
    let index = ClosestVertexIndex::for_config(config, &lab, giant.label);
    for w in candidate_witnesses(config, &giant, &index, solver)? {
        keep_best(&mut best, w);
    }
    methods.push(if best.is_some() { "candidates" } else { "candidates-empty" });
    if let Some(w) = &best {
        debug_assert!(lb <= w.ratio() + 1e-12, "lower bound {lb} above witness ratio {}", w.ratio());
    }
    Ok(PhiOutcome::Solved(PhiResult::new(config, cap, lb, best, methods.join("+"))))
}

fn parametric_threshold_for(config: &Configuration, giant: &Giant) -> ParametricThreshold {
    let g = LineGraph::new(config, giant);
    let (mut num, mut den) = (g.tails.len() as i128 + 1, 1i128);
    let mut out = ParametricThreshold { value: f64::INFINITY, length: 0, interior: 0, witness: Vec::new(), iterations: 0 };
    while let Some((walk, a)) = g.negative_cycle(num, den) {
        out.iterations += 1;
        num = walk.len() as i128;
        den = a as i128;
        out.value = walk.len() as f64 / a as f64;
        out.length = walk.len() as u64;
        out.interior = a as u64;
        out.witness = walk;
    }
    out
}
