use super::curve::{linf, segment_intersection, sub, symmetric_difference_area, Norm, PolyCurve, Vec2};
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

const TOL: f64 = 1e-9;

fn segments_cross(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let o = |p: Vec2, q: Vec2, r: Vec2| {
        let v = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
        if v.abs() < 1e-15 {
            0
        } else if v > 0.0 {
            1
        } else {
            -1
        }
    };
    let on = |p: Vec2, q: Vec2, r: Vec2| {
        r[0] >= p[0].min(q[0]) - 1e-15
            && r[0] <= p[0].max(q[0]) + 1e-15
            && r[1] >= p[1].min(q[1]) - 1e-15
            && r[1] <= p[1].max(q[1]) + 1e-15
    };
    let (o1, o2, o3, o4) = (o(a, b, c), o(a, b, d), o(c, d, a), o(c, d, b));
    if o1 != o2 && o3 != o4 && o1 * o2 <= 0 && o3 * o4 <= 0 && (o1 != 0 || o2 != 0) {
        return true;
    }
    (o1 == 0 && on(a, b, c)) || (o2 == 0 && on(a, b, d)) || (o3 == 0 && on(c, d, a)) || (o4 == 0 && on(c, d, b))
}

/// True when the closed curve has no repeated vertex, no degenerate step and no two
/// non-adjacent segments touching.
pub fn is_simple(curve: &PolyCurve) -> bool {
    let p = &curve.points;
    let k = p.len() - 1;
    if k < 3 {
        return false;
    }
    for i in 0..k {
        if p[i] == p[i + 1] {
            return false;
        }
    }
    for i in 0..k {
        for j in i + 1..k {
            let adjacent = j == i + 1 || (i == 0 && j == k - 1);
            if adjacent {
                // Adjacent segments may only share their common vertex: reject folds back.
                let (a, b, c) = if j == i + 1 { (p[i], p[i + 1], p[j + 1]) } else { (p[j], p[0], p[1]) };
                let u = sub(b, a);
                let v = sub(c, b);
                let crs = u[0] * v[1] - u[1] * v[0];
                let dot = u[0] * v[0] + u[1] * v[1];
                if crs.abs() < 1e-15 && dot < 0.0 {
                    return false;
                }
                continue;
            }
            if segments_cross(p[i], p[i + 1], p[j], p[j + 1]) {
                return false;
            }
        }
    }
    true
}

struct Arrangement {
    nodes: Vec<Vec2>,
    /// (u, v) with u < v -> (signed multiplicity in direction u->v, unsigned multiplicity).
    edges: BTreeMap<(usize, usize), (i64, i64)>,
}

fn node_id(nodes: &mut Vec<Vec2>, p: Vec2) -> usize {
    if let Some(i) = nodes.iter().position(|q| linf(sub(*q, p)) <= TOL) {
        return i;
    }
    nodes.push(p);
    nodes.len() - 1
}

fn build_arrangement(curve: &PolyCurve) -> Arrangement {
    let segs: Vec<(Vec2, Vec2)> = curve.segments().filter(|(a, b)| linf(sub(*b, *a)) > TOL).collect();
    let mut nodes = Vec::new();
    for (a, b) in &segs {
        node_id(&mut nodes, *a);
        node_id(&mut nodes, *b);
    }
    for i in 0..segs.len() {
        for j in i + 1..segs.len() {
            if let Some(x) = segment_intersection(segs[i].0, segs[i].1, segs[j].0, segs[j].1) {
                node_id(&mut nodes, x);
            }
        }
    }
    let mut edges = BTreeMap::new();
    for (a, b) in &segs {
        let d = sub(*b, *a);
        let len2 = d[0] * d[0] + d[1] * d[1];
        let mut on: Vec<(f64, usize)> = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, q)| {
                let t = ((q[0] - a[0]) * d[0] + (q[1] - a[1]) * d[1]) / len2;
                let foot = [a[0] + t * d[0], a[1] + t * d[1]];
                (t > -TOL && t < 1.0 + TOL && linf(sub(foot, *q)) <= TOL).then_some((t, i))
            })
            .collect();
        on.sort_by(|x, y| x.0.total_cmp(&y.0));
        on.dedup_by_key(|x| x.1);
        for w in on.windows(2) {
            let (u, v) = (w[0].1, w[1].1);
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            let e = edges.entry(key).or_insert((0, 0));
            e.0 += if u < v { 1 } else { -1 };
            e.1 += 1;
        }
    }
    Arrangement { nodes, edges }
}

fn angle(v: Vec2) -> f64 {
    v[1].atan2(v[0])
}

fn rot(v: Vec2, t: f64) -> Vec2 {
    let (s, c) = t.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn unit(v: Vec2) -> Vec2 {
    let l = v[0].hypot(v[1]);
    [v[0] / l, v[1] / l]
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Slot {
    In(usize),
    Out(usize),
}

/// Replaces a closed curve by a simple closed polygon whose interior differs from the
/// curve's winding hull by area below `eps`, and whose length exceeds the input's by less
/// than `eps`. The polygon follows the boundary of the odd-winding region. Stretches of the
/// trace covered an even number of times become thin strips outside the region and thin
/// slits inside it, which keeps everything on one closed path.
pub fn simplify_to_simple(curve: &PolyCurve, eps: f64, norm: &dyn Norm) -> PolyCurve {
    assert!(curve.closed, "simplify_to_simple needs a closed curve");
    if is_simple(curve) {
        return curve.clone();
    }
    let in_len = curve.len_norm(norm);
    let arr = build_arrangement(curve);
    let scale = {
        let (lo, hi) = curve.bbox();
        linf(sub(hi, lo)).max(1.0)
    };
    let odd_left = |u: usize, v: usize| {
        let (a, b) = (arr.nodes[u], arr.nodes[v]);
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        let left = rot(unit(sub(b, a)), PI / 2.0);
        let probe = [mid[0] + 1e-7 * scale * left[0], mid[1] + 1e-7 * scale * left[1]];
        curve.winding_number(probe) % 2 != 0
    };
    // Half-edges, plus a tie-break for the two copies of an even edge: a strip leaves before
    // it returns when sweeping counterclockwise, a slit the other way round.
    let mut half_edges: Vec<(usize, usize)> = Vec::new();
    let mut strip: Vec<Option<bool>> = Vec::new();
    let mut any_boundary = false;
    for (&(u, v), &(_, m)) in &arr.edges {
        if m % 2 == 1 {
            any_boundary = true;
            half_edges.push(if odd_left(u, v) { (u, v) } else { (v, u) });
            strip.push(None);
        } else {
            let s = !odd_left(u, v);
            half_edges.push((u, v));
            half_edges.push((v, u));
            strip.push(Some(s));
            strip.push(Some(s));
        }
    }
    if !any_boundary {
        let s = (eps.sqrt() / 2.0).min(eps / 8.0);
        let o = curve.points[0];
        return PolyCurve::closed(vec![o, [o[0] + s, o[1]], [o[0] + s, o[1] + s], [o[0], o[1] + s], o]).unwrap();
    }
    let nh = half_edges.len();
    let dir = |from: usize, to: usize| angle(sub(arr.nodes[to], arr.nodes[from])).rem_euclid(2.0 * PI);
    // Slots around each node, sorted counterclockwise with a tiny perturbation for ties.
    let mut slots: HashMap<usize, Vec<(f64, Slot)>> = HashMap::new();
    for (h, &(u, v)) in half_edges.iter().enumerate() {
        let tilt = |out: bool| match strip[h] {
            None => 0.0,
            Some(true) => {
                if out {
                    -1e-9
                } else {
                    1e-9
                }
            }
            Some(false) => {
                if out {
                    1e-9
                } else {
                    -1e-9
                }
            }
        };
        slots.entry(u).or_default().push((dir(u, v) + tilt(true), Slot::Out(h)));
        slots.entry(v).or_default().push((dir(v, u) + tilt(false), Slot::In(h)));
    }
    for s in slots.values_mut() {
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let mut succ = vec![usize::MAX; nh];
    for s in slots.values() {
        let k = s.len();
        for i in 0..k {
            if let Slot::In(h) = s[i].1 {
                let out = (1..=k)
                    .map(|d| s[(i + d) % k].1)
                    .find_map(|x| match x {
                        Slot::Out(o) => Some(o),
                        _ => None,
                    })
                    .unwrap();
                succ[h] = out;
            }
        }
    }
    // Join separate cycles by exchanging successors of consecutive visits to a shared node.
    loop {
        let cycles = cycle_ids(&succ);
        if cycles.iter().all(|&c| c == 0) {
            break;
        }
        let mut merged = false;
        let mut nodes: Vec<&usize> = slots.keys().collect();
        nodes.sort();
        'outer: for v in nodes {
            let ins: Vec<usize> = slots[v]
                .iter()
                .filter_map(|x| match x.1 {
                    Slot::In(h) => Some(h),
                    _ => None,
                })
                .collect();
            for i in 0..ins.len() {
                for j in i + 1..ins.len() {
                    let (a, b) = (ins[i], ins[j]);
                    if cycles[a] == cycles[b] {
                        continue;
                    }
                    succ.swap(a, b);
                    if non_crossing(&slots[v], &succ) {
                        merged = true;
                        break 'outer;
                    }
                    succ.swap(a, b);
                }
            }
        }
        if !merged {
            break;
        }
    }
    // Offset direction and nesting depth for every visit, keyed by the incoming half-edge.
    let mut offset: Vec<(Vec2, i32)> = vec![([0.0, 0.0], 0); nh];
    for s in slots.values() {
        let k = s.len();
        let pos = |x: Slot| s.iter().position(|y| y.1 == x).unwrap();
        for i in 0..k {
            let Slot::In(h) = s[i].1 else { continue };
            let j = pos(Slot::Out(succ[h]));
            let (a_in, a_out) = (s[i].0, s[j].0);
            let r_count = (j + k - i - 1) % k;
            let l_count = (i + k - j - 1) % k;
            let r_span = (a_out - a_in).rem_euclid(2.0 * PI);
            let l_span = 2.0 * PI - r_span;
            let use_r = r_count < l_count || (r_count == l_count && r_span >= l_span);
            let (from, span, count) = if use_r { (a_in, r_span, r_count) } else { (a_out, l_span, l_count) };
            let t = from + span / 2.0;
            offset[h] = ([t.cos(), t.sin()], (count / 2) as i32);
        }
    }
    let mut order = vec![0usize];
    let mut h = succ[0];
    while h != 0 {
        order.push(h);
        h = succ[h];
    }
    let k = order.len();
    let delta0 = eps.min(scale) / (16.0 * (in_len + k as f64 + 1.0));
    let mut best = None;
    // Nested visits sit closer to the node than the visits they wrap around.
    for shrink in [0.25f64, 1.0 / 16.0, 1.0 / 256.0, 1.0 / 4096.0] {
        let mut delta = delta0;
        for _ in 0..10 {
            let mut pts = Vec::with_capacity(k + 1);
            for &h in &order {
                let q = arr.nodes[half_edges[h].1];
                let (d, depth) = offset[h];
                let m = delta * shrink.powi(depth);
                pts.push([q[0] + m * d[0], q[1] + m * d[1]]);
            }
            pts.push(pts[0]);
            let cand = PolyCurve::closed(pts).unwrap();
            let ok = is_simple(&cand)
                && symmetric_difference_area(curve, &cand) < eps
                && cand.len_norm(norm) <= in_len + eps;
            if ok {
                return cand;
            }
            best = Some(cand);
            delta /= 2.0;
        }
    }
    best.unwrap()
}

fn non_crossing(slots: &[(f64, Slot)], succ: &[usize]) -> bool {
    let pos = |x: Slot| slots.iter().position(|y| y.1 == x).unwrap();
    let chords: Vec<(usize, usize)> = slots
        .iter()
        .enumerate()
        .filter_map(|(i, x)| match x.1 {
            Slot::In(h) => {
                let j = pos(Slot::Out(succ[h]));
                Some((i.min(j), i.max(j)))
            }
            _ => None,
        })
        .collect();
    chords.iter().all(|&(a, b)| chords.iter().all(|&(c, d)| !(a < c && c < b && b < d)))
}

fn cycle_ids(succ: &[usize]) -> Vec<usize> {
    let mut id = vec![usize::MAX; succ.len()];
    let mut next = 0;
    for s in 0..succ.len() {
        if id[s] != usize::MAX {
            continue;
        }
        let mut h = s;
        while id[h] == usize::MAX {
            id[h] = next;
            h = succ[h];
        }
        next += 1;
    }
    id
}

#[cfg(test)]
mod tests {
    use super::super::curve::{winding_hull, L1, L2};
    use super::*;

    fn check(curve: &PolyCurve, eps: f64) -> PolyCurve {
        let out = simplify_to_simple(curve, eps, &L2);
        assert!(is_simple(&out), "{out:?}");
        let hull = winding_hull(curve).unwrap();
        let d = symmetric_difference_area(curve, &out);
        assert!(d < eps, "area gap {d} (hull area {})", hull.area);
        assert!(out.len_norm(&L2) <= curve.len_norm(&L2) + eps);
        assert!(out.len_norm(&L1) <= curve.len_norm(&L1) + 2.0 * eps);
        out
    }

    #[test]
    fn simple_input_is_unchanged() {
        let sq = PolyCurve::closed(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
        assert_eq!(simplify_to_simple(&sq, 0.01, &L2), sq);
    }

    #[test]
    fn touching_figure_eight() {
        let eight = PolyCurve::closed(vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [1.0, 1.0],
            [2.0, 1.0],
            [2.0, 2.0],
            [1.0, 2.0],
            [1.0, 1.0],
            [0.0, 1.0],
            [0.0, 0.0],
        ])
        .unwrap();
        assert!(!is_simple(&eight));
        check(&eight, 1e-3);
    }

    #[test]
    fn crossing_bow_tie() {
        let bow = PolyCurve::closed(vec![[0.0, 0.0], [2.0, 2.0], [2.0, 0.0], [0.0, 2.0], [0.0, 0.0]]).unwrap();
        check(&bow, 1e-3);
    }

    #[test]
    fn back_and_forth_segment() {
        let seg = PolyCurve::closed(vec![[0.0, 0.0], [3.0, 0.0], [0.0, 0.0]]).unwrap();
        let out = check(&seg, 0.01);
        assert_eq!(out.points.len(), 5);
    }

    #[test]
    fn squares_joined_by_a_corridor() {
        // Two squares far apart, connected by a segment traversed twice.
        let c = PolyCurve::closed(vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [5.0, 0.0],
            [6.0, 0.0],
            [6.0, 1.0],
            [5.0, 1.0],
            [5.0, 0.0],
            [1.0, 0.0],
            [1.0, 1.0],
            [0.0, 1.0],
            [0.0, 0.0],
        ])
        .unwrap();
        check(&c, 1e-3);
    }

    #[test]
    fn loop_around_twice_with_inner_hole() {
        // Outer square, then an inner square, both counterclockwise: the inner one winds twice.
        let c = PolyCurve::closed(vec![
            [0.0, 0.0],
            [4.0, 0.0],
            [4.0, 4.0],
            [0.0, 4.0],
            [0.0, 0.0],
            [1.0, 1.0],
            [3.0, 1.0],
            [3.0, 3.0],
            [1.0, 3.0],
            [1.0, 1.0],
            [0.0, 0.0],
        ])
        .unwrap();
        check(&c, 1e-3);
    }

    #[test]
    fn nested_visits_at_a_shared_node() {
        let p: Vec<Vec2> = [(0,0),(2,2),(0,0),(0,3),(2,2),(0,2),(3,2),(0,0)].iter().map(|&(x,y)| [x as f64, y as f64]).collect();
        check(&PolyCurve::closed(p).unwrap(), 1e-3);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(500))]
        #[test]
        fn random_integer_polygons(pts in proptest::collection::vec((0i32..7, 0i32..7), 3..12)) {
            let mut p: Vec<Vec2> = pts.iter().map(|&(x, y)| [x as f64, y as f64]).collect();
            p.dedup();
            if p.len() > 1 && p[0] == p[p.len() - 1] {
                p.pop();
            }
            proptest::prop_assume!(p.len() >= 2);
            p.push(p[0]);
            let c = PolyCurve::closed(p).unwrap();
            check(&c, 1e-3);
        }
    }
}
