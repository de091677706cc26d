use perciso::isosolver::{phi, volume_cap, SolverConfig};
use perciso::percolation::{sample_configuration, Configuration, GridSpec};
use perciso::Point;
use std::collections::VecDeque;

// flood fill from scratch, returns membership of the largest open cluster
fn largest_cluster(c: &Configuration) -> Vec<Vec<bool>> {
    let n = c.n();
    let side = (2 * n + 1) as usize;
    let idx = |p: Point| ((p.x + n) as usize, (p.y + n) as usize);
    let mut label = vec![vec![usize::MAX; side]; side];
    let mut sizes = Vec::new();
    for x in -n..=n {
        for y in -n..=n {
            let (i, j) = idx(Point::new(x, y));
            if label[i][j] != usize::MAX {
                continue;
            }
            let id = sizes.len();
            let mut size = 0;
            let mut q = VecDeque::from([Point::new(x, y)]);
            label[i][j] = id;
            while let Some(p) = q.pop_front() {
                size += 1;
                for (dx, dy) in [(1, 0), (0, 1), (-1, 0), (0, -1)] {
                    let r = Point::new(p.x + dx, p.y + dy);
                    if r.x.abs() > n || r.y.abs() > n || !c.is_open_between(p, r) {
                        continue;
                    }
                    let (a, b) = idx(r);
                    if label[a][b] == usize::MAX {
                        label[a][b] = id;
                        q.push_back(r);
                    }
                }
            }
            sizes.push(size);
        }
    }
    let best = (0..sizes.len()).max_by_key(|&i| sizes[i]).unwrap();
    label.iter().map(|row| row.iter().map(|&l| l == best).collect()).collect()
}

// on the circuit, or inside by ray parity
fn in_closed_region(vs: &[Point], p: Point) -> bool {
    let k = vs.len();
    for i in 0..k {
        let (a, b) = (vs[i], vs[(i + 1) % k]);
        if p == a || p == b {
            return true;
        }
    }
    // cast from (x + 1/4, y + 1/2) in quarter units so no vertex is hit
    let (px, py) = (4 * p.x + 1, 4 * p.y + 2);
    let mut inside = false;
    for i in 0..k {
        let (a, b) = (vs[i], vs[(i + 1) % k]);
        let (ay, by) = (4 * a.y, 4 * b.y);
        if (ay > py) != (by > py) && a.x == b.x && 4 * a.x > px {
            inside = !inside;
        }
    }
    inside
}

#[test]
fn solved_witnesses_are_open_giant_circuits_with_reported_counts() {
    let solver = SolverConfig::default();
    let mut solved = 0;
    for (n, p, seed) in [(10, 0.75, 1), (12, 0.8, 2), (16, 0.7, 3), (16, 0.9, 4), (20, 0.75, 5)] {
        for idx in 0..3 {
            let c = sample_configuration(GridSpec::new(n, p, seed).unwrap(), idx).unwrap();
            let Some(r) = phi(&c, &solver).unwrap().result().cloned() else { continue };
            let Some(w) = r.witness.as_ref() else { continue };
            solved += 1;
            let giant = largest_cluster(&c);
            let vs = w.vertices();
            let at = |q: Point| giant[(q.x + n) as usize][(q.y + n) as usize];
            let mut seen = std::collections::HashSet::new();
            for i in 0..vs.len() {
                let (a, b) = (vs[i], vs[(i + 1) % vs.len()]);
                assert_eq!((a.x - b.x).abs() + (a.y - b.y).abs(), 1);
                assert!(c.is_open_between(a, b), "closed edge {a:?}-{b:?}");
                assert!(at(a));
                assert!(seen.insert(a), "repeated vertex {a:?}");
            }
            let mut vol = 0;
            let mut count = 0;
            for x in -n..=n {
                for y in -n..=n {
                    let q = Point::new(x, y);
                    if in_closed_region(vs, q) {
                        vol += 1;
                        count += at(q) as u64;
                    }
                }
            }
            assert_eq!(r.vol, Some(vol));
            assert!(vol <= volume_cap(n));
            assert_eq!(r.interior_count, Some(count));
            assert_eq!(r.length, Some(vs.len() as u64));
            assert!((r.upper_bound - vs.len() as f64 / count as f64).abs() < 1e-12);
            assert!(r.lower_bound <= r.upper_bound + 1e-12);
        }
    }
    assert!(solved >= 10, "only {solved} solved samples");
}
