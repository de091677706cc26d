use crate::error::{io_err, Error, Result};
use crate::lattice::{mix64, BoxLattice, Edge, Point, Rect, STEPS};
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Mutex;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: i64,
    pub p: f64,
    #[serde(rename = "seed")]
    pub master_seed: u64,
}

impl GridSpec {
    /// p = 1 is accepted as the degenerate all-open law; p must otherwise lie in (0, 1).
    pub fn new(n: i64, p: f64, master_seed: u64) -> Result<Self> {
        let spec = GridSpec { n, p, master_seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidParameter(format!("n = {} must be >= 1", self.n)));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidParameter(format!("p = {} outside (0, 1]", self.p)));
        }
        Ok(())
    }

    pub fn lattice(&self) -> BoxLattice {
        BoxLattice::new(self.n)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: GridSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug)]
pub struct Configuration {
    pub spec: GridSpec,
    pub sample_index: u64,
    lattice: BoxLattice,
    open: Vec<bool>,
    forced: BTreeMap<usize, bool>,
    masks: Vec<u8>,
}

impl PartialEq for Configuration {
    fn eq(&self, o: &Self) -> bool {
        self.spec == o.spec
            && self.sample_index == o.sample_index
            && self.open == o.open
            && self.forced == o.forced
    }
}

fn uniform_from_bits(u: u64) -> f64 {
    (u >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn sample_configuration(spec: GridSpec, sample_index: u64) -> Result<Configuration> {
    spec.validate()?;
    let lattice = spec.lattice();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.master_seed);
    rng.set_stream(sample_index);
    // Edge i always consumes the same two words of the stream, so the state of an edge
    // depends only on (seed, sample index, edge id).
    let open = (0..lattice.num_edges())
        .map(|_| spec.p >= 1.0 || uniform_from_bits(rng.next_u64()) < spec.p)
        .collect();
    Ok(Configuration::from_states(spec, sample_index, open))
}

impl Configuration {
    pub fn from_states(spec: GridSpec, sample_index: u64, open: Vec<bool>) -> Configuration {
        let lattice = spec.lattice();
        assert_eq!(open.len(), lattice.num_edges());
        let mut c = Configuration {
            spec,
            sample_index,
            lattice,
            open,
            forced: BTreeMap::new(),
            masks: Vec::new(),
        };
        c.rebuild_masks();
        c
    }

    /// Builds a configuration in which exactly the listed edges are open.
    pub fn with_open_edges(n: i64, edges: &[Edge]) -> Result<Configuration> {
        let spec = GridSpec::new(n, 0.5, 0)?;
        let lattice = spec.lattice();
        let mut open = vec![false; lattice.num_edges()];
        for &e in edges {
            let id = lattice.edge_id(e).ok_or(Error::EdgeOutsideBox(e))?;
            open[id] = true;
        }
        Ok(Configuration::from_states(spec, 0, open))
    }

    pub fn all_open(n: i64) -> Configuration {
        let spec = GridSpec { n, p: 1.0, master_seed: 0 };
        let m = spec.lattice().num_edges();
        Configuration::from_states(spec, 0, vec![true; m])
    }

    pub fn all_closed(n: i64) -> Configuration {
        let spec = GridSpec { n, p: 0.5, master_seed: 0 };
        let m = spec.lattice().num_edges();
        Configuration::from_states(spec, 0, vec![false; m])
    }

    fn rebuild_masks(&mut self) {
        let b = self.lattice;
        let mut masks = vec![0u8; b.num_vertices()];
        for (id, &o) in self.open.iter().enumerate() {
            if !o {
                continue;
            }
            let (a, c) = b.edge(id).endpoints();
            let (ia, ic) = (b.index_unchecked(a), b.index_unchecked(c));
            // a is the lower/left endpoint: c lies east (bit 0) or north (bit 1) of it.
            if c.x > a.x {
                masks[ia] |= 1;
                masks[ic] |= 4;
            } else {
                masks[ia] |= 2;
                masks[ic] |= 8;
            }
        }
        self.masks = masks;
    }

    pub fn n(&self) -> i64 {
        self.spec.n
    }

    pub fn lattice(&self) -> BoxLattice {
        self.lattice
    }

    pub fn edge_states(&self) -> &[bool] {
        &self.open
    }

    pub fn forced_edges(&self) -> &BTreeMap<usize, bool> {
        &self.forced
    }

    pub fn is_open(&self, e: Edge) -> bool {
        self.lattice.edge_id(e).map(|id| self.open[id]).unwrap_or(false)
    }

    pub fn is_open_between(&self, a: Point, b: Point) -> bool {
        Edge::between(a, b).map(|e| self.is_open(e)).unwrap_or(false)
    }

    /// Bit k set iff the edge towards `STEPS[k]` is open.
    #[inline]
    pub fn mask(&self, idx: usize) -> u8 {
        self.masks[idx]
    }

    pub fn open_neighbors(&self, p: Point) -> impl Iterator<Item = Point> + '_ {
        let m = self.lattice.index(p).map(|i| self.masks[i]).unwrap_or(0);
        (0..4).filter(move |k| m >> k & 1 == 1).map(move |k| p + STEPS[k])
    }

    pub fn open_edge_count(&self) -> usize {
        self.open.iter().filter(|&&o| o).count()
    }

    pub fn force_edges(&self, edges: &[Edge], state: bool) -> Result<Configuration> {
        let mut ids = Vec::with_capacity(edges.len());
        for &e in edges {
            ids.push(self.lattice.edge_id(e).ok_or(Error::EdgeOutsideBox(e))?);
        }
        let mut c = self.clone();
        for id in ids {
            c.open[id] = state;
            c.forced.insert(id, state);
        }
        c.rebuild_masks();
        Ok(c)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut header = [0u8; 16];
        header[0..4].copy_from_slice(b"PERC");
        header[4..6].copy_from_slice(&FILE_VERSION.to_le_bytes());
        header[6..8].copy_from_slice(&(self.spec.n as u16).to_le_bytes());
        header[8..16].copy_from_slice(&self.spec.p.to_le_bytes());
        w.write_all(&header)?;
        w.write_all(&self.spec.master_seed.to_le_bytes())?;
        w.write_all(&self.sample_index.to_le_bytes())?;
        let mut bits = vec![0u8; self.open.len().div_ceil(8)];
        for (i, &o) in self.open.iter().enumerate() {
            if o {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bits)?;
        w.write_all(&(self.forced.len() as u32).to_le_bytes())?;
        for (&id, &s) in &self.forced {
            w.write_all(&(id as u32).to_le_bytes())?;
            w.write_all(&[s as u8])?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Configuration> {
        let bad = |m: &str| Error::BadFile(m.to_string());
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| Error::BadFile(e.to_string()))?;
        if buf.len() < 32 || &buf[0..4] != b"PERC" {
            return Err(bad("missing PERC header"));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != FILE_VERSION {
            return Err(Error::BadFile(format!("unsupported version {version}")));
        }
        let n = u16::from_le_bytes([buf[6], buf[7]]) as i64;
        let p = f64::from_le_bytes(buf[8..16].try_into().unwrap());
        let seed = u64::from_le_bytes(buf[16..24].try_into().unwrap());
        let sample_index = u64::from_le_bytes(buf[24..32].try_into().unwrap());
        let spec = GridSpec::new(n, p, seed)?;
        let m = spec.lattice().num_edges();
        let nbytes = m.div_ceil(8);
        let rest = &buf[32..];
        if rest.len() < nbytes + 4 {
            return Err(bad("truncated edge bitset"));
        }
        let open = (0..m).map(|i| rest[i / 8] >> (i % 8) & 1 == 1).collect();
        let rest = &rest[nbytes..];
        let k = u32::from_le_bytes(rest[0..4].try_into().unwrap()) as usize;
        if rest.len() != 4 + 5 * k {
            return Err(bad("bad forced-edge section"));
        }
        let mut c = Configuration::from_states(spec, sample_index, open);
        for j in 0..k {
            let o = 4 + 5 * j;
            let id = u32::from_le_bytes(rest[o..o + 4].try_into().unwrap()) as usize;
            if id >= m {
                return Err(bad("forced edge id out of range"));
            }
            c.forced.insert(id, rest[o + 4] != 0);
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
        self.write_to(&mut f).map_err(io_err(path))?;
        f.flush().map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Configuration> {
        let mut f = std::fs::File::open(path).map_err(io_err(path))?;
        Configuration::read_from(&mut f)
    }
}

pub const FILE_VERSION: u16 = 1;

struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n as u32).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let g = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = g;
            x = g;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] { (ra, rb) } else { (rb, ra) };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
    }
}

#[derive(Clone, Debug)]
pub struct ClusterLabeling {
    pub n: i64,
    /// Labels are numbered in order of first appearance in row-major vertex order.
    pub labels: Vec<u32>,
    pub sizes: Vec<usize>,
    pub diameters: Vec<i64>,
}

impl ClusterLabeling {
    pub fn label_of(&self, p: Point) -> Option<u32> {
        BoxLattice::new(self.n).index(p).map(|i| self.labels[i])
    }

    pub fn num_clusters(&self) -> usize {
        self.sizes.len()
    }

    /// The label of the largest cluster, smallest label on ties.
    pub fn largest(&self) -> u32 {
        let mut best = 0;
        for (l, &s) in self.sizes.iter().enumerate() {
            if s > self.sizes[best] {
                best = l;
            }
        }
        best as u32
    }

    pub fn largest_is_unique(&self) -> bool {
        let big = self.sizes[self.largest() as usize];
        self.sizes.iter().filter(|&&s| s == big).count() == 1
    }

    pub fn members(&self, label: u32) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }
}

fn canonical_labels(
    lattice: BoxLattice,
    uf: &mut UnionFind,
    include: impl Fn(usize) -> bool,
) -> (Vec<u32>, Vec<usize>, Vec<i64>) {
    let nv = lattice.num_vertices();
    let mut root_label = vec![u32::MAX; nv];
    let mut labels = vec![u32::MAX; nv];
    let mut sizes = Vec::new();
    let mut ext: Vec<[i64; 4]> = Vec::new();
    for i in 0..nv {
        if !include(i) {
            continue;
        }
        let r = uf.find(i as u32) as usize;
        if root_label[r] == u32::MAX {
            root_label[r] = sizes.len() as u32;
            sizes.push(0);
            ext.push([i64::MAX, i64::MIN, i64::MAX, i64::MIN]);
        }
        let l = root_label[r];
        labels[i] = l;
        sizes[l as usize] += 1;
        let p = lattice.point(i);
        let e = &mut ext[l as usize];
        let (s, d) = (p.x + p.y, p.x - p.y);
        e[0] = e[0].min(s);
        e[1] = e[1].max(s);
        e[2] = e[2].min(d);
        e[3] = e[3].max(d);
    }
    // The l1 diameter of a planar point set is the larger spread of x+y and x-y.
    let diameters = ext.iter().map(|e| (e[1] - e[0]).max(e[3] - e[2])).collect();
    (labels, sizes, diameters)
}

pub fn label_clusters(config: &Configuration) -> ClusterLabeling {
    let b = config.lattice();
    let mut uf = UnionFind::new(b.num_vertices());
    let s = b.side();
    for i in 0..b.num_vertices() {
        let m = config.mask(i);
        if m & 1 != 0 {
            uf.union(i as u32, (i + 1) as u32);
        }
        if m & 2 != 0 {
            uf.union(i as u32, (i + s) as u32);
        }
    }
    let (labels, sizes, diameters) = canonical_labels(b, &mut uf, |_| true);
    ClusterLabeling { n: b.n, labels, sizes, diameters }
}

/// Clusters of the open subgraph restricted to a union of rectangles: an edge is usable
/// when both endpoints lie in a common rectangle.
#[derive(Clone, Debug)]
pub struct RegionClusters {
    pub n: i64,
    pub rects: Vec<Rect>,
    /// u32::MAX for vertices outside the region.
    pub labels: Vec<u32>,
    pub sizes: Vec<usize>,
}

impl RegionClusters {
    pub fn label_of(&self, p: Point) -> Option<u32> {
        BoxLattice::new(self.n).index(p).map(|i| self.labels[i]).filter(|&l| l != u32::MAX)
    }
}

pub fn label_region(config: &Configuration, rects: &[Rect]) -> Result<RegionClusters> {
    let b = config.lattice();
    for r in rects {
        if r.width() < 1 || r.height() < 1 {
            return Err(Error::DegenerateRect);
        }
        if !b.contains(Point::new(r.x0, r.y0)) || !b.contains(Point::new(r.x1, r.y1)) {
            return Err(Error::InvalidParameter(format!("rectangle {r:?} not inside B({})", b.n)));
        }
    }
    let mut uf = UnionFind::new(b.num_vertices());
    let mut inside = vec![false; b.num_vertices()];
    for r in rects {
        for p in r.points() {
            let i = b.index_unchecked(p);
            inside[i] = true;
            let m = config.mask(i);
            if m & 1 != 0 && p.x < r.x1 {
                uf.union(i as u32, (i + 1) as u32);
            }
            if m & 2 != 0 && p.y < r.y1 {
                uf.union(i as u32, (i + b.side()) as u32);
            }
        }
    }
    let (labels, sizes, _) = canonical_labels(b, &mut uf, |i| inside[i]);
    Ok(RegionClusters { n: b.n, rects: rects.to_vec(), labels, sizes })
}

/// For each cluster of the open subgraph inside `rect`: does it join both pairs of opposite sides?
pub fn crossing_check(config: &Configuration, rect: Rect) -> Result<Vec<bool>> {
    let rc = label_region(config, &[rect])?;
    let k = rc.sizes.len();
    let mut touch = vec![[false; 4]; k];
    for p in rect.points() {
        let l = rc.label_of(p).unwrap() as usize;
        touch[l][0] |= p.x == rect.x0;
        touch[l][1] |= p.x == rect.x1;
        touch[l][2] |= p.y == rect.y0;
        touch[l][3] |= p.y == rect.y1;
    }
    Ok(touch.iter().map(|t| t.iter().all(|&b| b)).collect())
}

fn overlap_connected(rects: &[Rect]) -> bool {
    let k = rects.len();
    let mut seen = vec![false; k];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..k {
            let o = rects[i].intersect(&rects[j]);
            if !seen[j] && o.width() >= 1 && o.height() >= 1 {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// The four overlapping rectangles covering B(n) \ B(m-1).
pub fn annulus_rects(n: i64, m: i64) -> Vec<Rect> {
    vec![
        Rect::new(-n, m, n, n),
        Rect::new(-n, -n, n, -m),
        Rect::new(-n, -n, -m, n),
        Rect::new(m, -n, n, n),
    ]
}

/// For each cluster of the union of `rects`: does it meet every run of at least
/// `interval_len` consecutive vertices on any side of any rectangle?
pub fn strongly_crossing_check(
    config: &Configuration,
    rects: &[Rect],
    interval_len: usize,
) -> Result<Vec<bool>> {
    if rects.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if !overlap_connected(rects) {
        return Err(Error::DisconnectedOverlap);
    }
    let rc = label_region(config, rects)?;
    let k = rc.sizes.len();
    let mut ok = vec![true; k];
    for r in rects {
        let sides: [Vec<Point>; 4] = [
            (r.x0..=r.x1).map(|x| Point::new(x, r.y0)).collect(),
            (r.x0..=r.x1).map(|x| Point::new(x, r.y1)).collect(),
            (r.y0..=r.y1).map(|y| Point::new(r.x0, y)).collect(),
            (r.y0..=r.y1).map(|y| Point::new(r.x1, y)).collect(),
        ];
        for (l, flag) in ok.iter_mut().enumerate() {
            if !*flag {
                continue;
            }
            for side in &sides {
                let mut run = 0;
                for &p in side {
                    if rc.label_of(p) == Some(l as u32) {
                        run = 0;
                    } else {
                        run += 1;
                        if run >= interval_len.max(1) {
                            *flag = false;
                            break;
                        }
                    }
                }
            }
        }
    }
    Ok(ok)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domino {
    pub rect: Rect,
    /// False for the extra dominos shifted or clipped to fit the region boundary.
    pub standard: bool,
}

pub fn domino_cover(region: &[Rect], m: i64) -> Result<Vec<Domino>> {
    if m < 1 {
        return Err(Error::InvalidParameter("domino scale m must be >= 1".into()));
    }
    let region: Vec<Rect> = region.iter().copied().filter(|r| !r.is_empty()).collect();
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let in_region = |p: Point| region.iter().any(|r| r.contains(p));
    let contained = |d: &Rect| region.iter().any(|r| r.contains_rect(d)) || d.points().all(in_region);
    let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
    for r in &region {
        x0 = x0.min(r.x0);
        y0 = y0.min(r.y0);
        x1 = x1.max(r.x1);
        y1 = y1.max(r.y1);
    }
    let mut out = Vec::new();
    for j in y0.div_euclid(m)..=y1.div_euclid(m) {
        for i in x0.div_euclid(m)..=x1.div_euclid(m) {
            let h = Rect::new(i * m, j * m, (i + 2) * m, (j + 1) * m);
            let v = Rect::new(i * m, j * m, (i + 1) * m, (j + 2) * m);
            for d in [h, v] {
                if contained(&d) {
                    out.push(Domino { rect: d, standard: true });
                }
            }
        }
    }
    let covered = |p: Point, out: &[Domino]| out.iter().any(|d| d.rect.contains(p));
    let place = |lo: i64, hi: i64, len: i64, v: i64| {
        if hi - lo >= len {
            let a = v.min(hi - len).max(lo);
            (a, a + len)
        } else {
            (lo, hi)
        }
    };
    for r in &region {
        for p in r.points() {
            if covered(p, &out) {
                continue;
            }
            let horizontal = r.width() >= 2 * m || r.width() >= r.height();
            let (lx, ly) = if horizontal { (2 * m, m) } else { (m, 2 * m) };
            let (a, b) = place(r.x0, r.x1, lx, p.x);
            let (c, d) = place(r.y0, r.y1, ly, p.y);
            out.push(Domino { rect: Rect::new(a, c, b, d), standard: false });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GiantReport {
    pub uniq_event_holds: bool,
    pub giant_label: Option<u32>,
    pub giant_size: usize,
    pub second_largest: usize,
    pub theta_n_global: f64,
}

pub fn small_cluster_bound(n: i64) -> usize {
    (n as f64).ln().powi(5).ceil().max(0.0) as usize
}

pub fn check_uniq_event(labeling: &ClusterLabeling, kappa: f64) -> GiantReport {
    let n = labeling.n;
    let big = kappa * (2 * n) as f64 * (2 * n) as f64;
    let mut order: Vec<usize> = labeling.sizes.clone();
    order.sort_unstable_by(|a, b| b.cmp(a));
    let largest = labeling.largest();
    let giant_size = order[0];
    let second = order.get(1).copied().unwrap_or(0);
    let n_big = labeling.sizes.iter().filter(|&&s| s as f64 >= big).count();
    let holds = n_big == 1 && second <= small_cluster_bound(n);
    GiantReport {
        uniq_event_holds: holds,
        giant_label: if holds { Some(largest) } else { None },
        giant_size,
        second_largest: second,
        theta_n_global: giant_size as f64 / labeling.labels.len() as f64,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub theta_hat: f64,
    pub stderr: f64,
    pub samples: usize,
}

pub fn estimate_theta(p: f64, n: i64, samples: usize, seed: u64) -> Result<ThetaEstimate> {
    let spec = GridSpec::new(n, p, seed)?;
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be >= 1".into()));
    }
    let hits: usize = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let c = sample_configuration(spec, i).expect("validated spec");
            let lab = label_clusters(&c);
            (lab.label_of(Point::ORIGIN) == Some(lab.largest())) as usize
        })
        .sum();
    let t = hits as f64 / samples as f64;
    Ok(ThetaEstimate { theta_hat: t, stderr: (t * (1.0 - t) / samples as f64).sqrt(), samples })
}

static KAPPA_CACHE: Mutex<Option<HashMap<u64, f64>>> = Mutex::new(None);

/// Default giant-density threshold: half of a cached density estimate at this p.
pub fn default_kappa(p: f64) -> f64 {
    if p >= 1.0 {
        return 0.5;
    }
    if let Some(&k) = KAPPA_CACHE.lock().unwrap().get_or_insert_with(HashMap::new).get(&p.to_bits()) {
        return k;
    }
    let est = estimate_theta(p, 48, 200, 0x6b61_7070_61).map(|e| e.theta_hat).unwrap_or(0.0);
    let k = (est / 2.0).clamp(1e-3, 0.5);
    KAPPA_CACHE.lock().unwrap().get_or_insert_with(HashMap::new).insert(p.to_bits(), k);
    k
}

/// Deterministic per-vertex tie-break marks in [0, 1).
pub fn eta_mark(seed: u64, p: Point) -> f64 {
    let h = mix64(seed ^ mix64((p.x as u64) ^ mix64(p.y as u64 ^ 0x5bd1_e995)));
    uniform_from_bits(h)
}
