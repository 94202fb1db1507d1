use proptest::prelude::*;
use rand::Rng;
use std::collections::{HashSet, VecDeque};
use tfrg_core::bits::BitSet;
use tfrg_core::components::*;
use tfrg_core::rng::stream;
use tfrg_core::rw::walk_trace;
use tfrg_core::{TorusGeom, WalkConfig};

fn bernoulli(total: usize, p: f64, seed: u64) -> BitSet {
    let mut rng = stream(seed, &[]);
    let mut b = BitSet::new(total);
    for s in 0..total {
        if rng.random::<f64>() < p {
            b.set(s);
        }
    }
    b
}

fn trace(g: &TorusGeom, u: f64, seed: u64) -> BitSet {
    walk_trace(&WalkConfig::for_level(g.clone(), u, seed)).unwrap().bits
}

/// Nearest-neighbor flood fill on the torus, labels in order of first site.
fn bfs_labels(g: &TorusGeom, occ: &BitSet) -> Vec<u32> {
    let mut labels = vec![0u32; g.total()];
    let mut next = 0;
    for s in 0..g.total() {
        if occ.get(s) || labels[s] != 0 {
            continue;
        }
        next += 1;
        labels[s] = next;
        let mut q = VecDeque::from([s]);
        while let Some(x) = q.pop_front() {
            for y in g.neighbors(x) {
                if !occ.get(y) && labels[y] == 0 {
                    labels[y] = next;
                    q.push_back(y);
                }
            }
        }
    }
    labels
}

fn brute_diameter(g: &TorusGeom, sites: &[usize]) -> usize {
    if sites.len() <= 400 {
        let mut d = 0;
        for &a in sites {
            for &b in sites {
                d = d.max(g.distance(a, b));
            }
        }
        return d;
    }
    // Pairwise distances split by axis: the l_inf maximum is attained on one axis.
    (0..g.dim())
        .map(|axis| {
            let res: HashSet<usize> = sites.iter().map(|&s| g.coord(s, axis)).collect();
            let mut d = 0;
            for &a in &res {
                for &b in &res {
                    d = d.max(tfrg_core::lattice::circular_distance(a, b, g.side()));
                }
            }
            d
        })
        .max()
        .unwrap()
}

/// Winding along `axis` via reachability in the lift to `Z` along that axis.
fn lift_winds(g: &TorusGeom, occ: &BitSet, root: usize, axis: usize) -> bool {
    let n = g.side();
    let mut seen = HashSet::from([(root, 0i64)]);
    let mut q = VecDeque::from([(root, 0i64)]);
    while let Some((x, w)) = q.pop_front() {
        for dir in 0..2 * g.dim() {
            let y = g.step(x, dir);
            if occ.get(y) {
                continue;
            }
            let mut wy = w;
            if dir >> 1 == axis {
                let c = g.coord(x, axis);
                if dir & 1 == 0 && c == n - 1 {
                    wy += 1;
                } else if dir & 1 == 1 && c == 0 {
                    wy -= 1;
                }
            }
            if y == root && wy != 0 {
                return true;
            }
            if seen.insert((y, wy)) {
                q.push_back((y, wy));
            }
        }
    }
    false
}

#[test]
fn labeling_matches_flood_fill() {
    let g = TorusGeom::new(3, 16).unwrap();
    for k in 0..100u64 {
        let occ = if k % 2 == 0 {
            bernoulli(g.total(), 0.2 + 0.6 * (k as f64 / 100.0), k)
        } else {
            trace(&g, 0.5 + 4.0 * (k as f64 / 100.0), k)
        };
        let st = label_components(&Grid::torus(&g), &occ, Adjacency::Nearest);
        let oracle = bfs_labels(&g, &occ);
        assert_eq!(st.labels, oracle, "mask {k}");
        for c in &st.components {
            let members: Vec<usize> = (0..g.total()).filter(|&s| oracle[s] == c.id).collect();
            assert_eq!(c.volume, members.len());
            assert_eq!(c.root, members[0]);
            assert_eq!(c.diameter, brute_diameter(&g, &members), "mask {k} comp {}", c.id);
        }
        if let Some(id) = st.id_max {
            let root = st.component(id).root;
            let expect = (0..3).all(|axis| lift_winds(&g, &occ, root, axis));
            assert_eq!(st.wraps_all_axes, expect, "mask {k}");
            let vmax = st.component(id).volume;
            assert!(st
                .components
                .iter()
                .all(|c| c.volume < vmax || (c.volume == vmax && c.root >= root)));
        }
    }
}

#[test]
fn two_slabs_split_the_torus() {
    let g = TorusGeom::new(3, 10).unwrap();
    let mut occ = BitSet::new(g.total());
    for s in 0..g.total() {
        if matches!(g.coord(s, 2), 0 | 5) {
            occ.set(s);
        }
    }
    let st = label_components(&Grid::torus(&g), &occ, Adjacency::Nearest);
    assert_eq!(st.volumes(), vec![400, 400]);
    assert_eq!(st.component(st.id_max.unwrap()).root, g.site(&[0, 0, 1]));
    assert_eq!(st.component(1).extents, vec![9, 9, 3]);
    assert!(!st.wraps_all_axes);
}

#[test]
fn plane_crossing_is_dual_to_occupied_star_crossing() {
    let g = TorusGeom::new(3, 64).unwrap();
    let n = 64;
    for k in 0..12u64 {
        let occ = if k < 6 {
            bernoulli(g.total(), 0.3 + 0.07 * k as f64, k)
        } else {
            trace(&g, 1.0 + 0.6 * (k - 6) as f64, k)
        };
        for x in [0, g.site(&[0, 0, 31])] {
            let r = plane_analysis(&g, &occ, x, 32);
            let blocked = r.star_diameter.is_some_and(|d| d == n - 1);
            assert_eq!(r.crossing_found, !blocked, "mask {k}");
        }
    }
}

#[test]
fn occupied_row_blocks_crossing() {
    let g = TorusGeom::new(3, 12).unwrap();
    let mut occ = BitSet::new(g.total());
    for b in 0..12 {
        occ.set(g.site(&[4, b, 0]));
    }
    let r = plane_analysis(&g, &occ, 0, 3);
    assert!(!r.crossing_found);
    assert_eq!(r.star_diameter, Some(11));
    // The seed row runs along the first axis and meets the wall once.
    assert_eq!(r.seeds.len(), 11);
    assert!(!r.seeds.contains(&g.site(&[4, 0, 0])));
}

/// Brute-force local criterion: components of each ball found from scratch.
fn brute_uniqueness(g: &TorusGeom, occ: &BitSet, ell: usize) -> (bool, bool) {
    let global = bfs_labels(g, occ);
    let diam = |sites: &[usize]| brute_diameter(g, sites);
    let ball_components = |x: usize, r: usize| -> Vec<Vec<usize>> {
        let inside: HashSet<usize> = (0..g.total())
            .filter(|&s| g.distance(x, s) <= r && !occ.get(s))
            .collect();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for &s in &inside {
            if !seen.insert(s) {
                continue;
            }
            let mut comp = vec![s];
            let mut q = VecDeque::from([s]);
            while let Some(a) = q.pop_front() {
                for b in g.neighbors(a) {
                    if inside.contains(&b) && seen.insert(b) {
                        comp.push(b);
                        q.push_back(b);
                    }
                }
            }
            out.push(comp);
        }
        out
    };
    let mut h1 = true;
    let mut h2 = true;
    for x in 0..g.total() {
        h1 &= ball_components(x, 2 * ell).iter().any(|c| diam(c) >= ell);
        let labels: HashSet<u32> = ball_components(x, 6 * ell)
            .iter()
            .filter(|c| diam(c) >= ell)
            .map(|c| global[c[0]])
            .collect();
        h2 &= labels.len() <= 1;
    }
    (h1, h2)
}

#[test]
fn uniqueness_hypotheses_match_brute_force() {
    let g = TorusGeom::new(3, 14).unwrap();
    for k in 0..6u64 {
        let occ = bernoulli(g.total(), 0.45 + 0.06 * k as f64, 100 + k);
        let fast = uniqueness_check(&g, &occ, 1);
        let (h1, h2) = brute_uniqueness(&g, &occ, 1);
        assert_eq!((fast.hypothesis1, fast.hypothesis2), (h1, h2), "mask {k}");
    }
}

#[test]
fn uniqueness_conclusion_follows_from_hypotheses() {
    let g = TorusGeom::new(3, 30).unwrap();
    let mut held = 0;
    for k in 0..40u64 {
        let u = 0.5 + 0.1 * k as f64;
        let r = uniqueness_check(&g, &trace(&g, u, k), 3);
        if r.hypotheses_hold {
            held += 1;
            assert!(r.conclusion_holds, "mask {k}: {r:?}");
        }
    }
    assert!(held > 0);
}

#[test]
fn local_average_matches_per_site_search() {
    let g = TorusGeom::new(3, 20).unwrap();
    let delta = 0.8;
    let r = ((20f64).powf(delta) / 2.0).floor() as usize;
    for k in 0..4u64 {
        let occ = trace(&g, 1.5 + k as f64, k);
        let mut hits = 0;
        for x in 0..g.total() {
            if occ.get(x) {
                continue;
            }
            let mut seen = HashSet::from([x]);
            let mut q = VecDeque::from([x]);
            let mut ok = false;
            while let Some(a) = q.pop_front() {
                if g.distance(a, x) == r {
                    ok = true;
                    break;
                }
                for b in g.neighbors(a) {
                    if !occ.get(b) && g.distance(b, x) <= r && seen.insert(b) {
                        q.push_back(b);
                    }
                }
            }
            hits += ok as usize;
        }
        let expect = hits as f64 / g.total() as f64;
        assert!((local_average(&g, &occ, delta) - expect).abs() < 1e-12, "mask {k}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn star_components_refine_nn_components(seed in any::<u64>(), p in 0.2f64..0.8) {
        let g = TorusGeom::new(3, 10).unwrap();
        let occ = bernoulli(g.total(), p, seed);
        let grid = Grid::torus(&g);
        let nn = label_components(&grid, &occ, Adjacency::Nearest);
        let star = label_components(&grid, &occ, Adjacency::Star);
        let mut image = vec![0u32; nn.components.len() + 1];
        for s in 0..g.total() {
            let (a, b) = (nn.label(s), star.label(s));
            prop_assert_eq!(a == 0, b == 0);
            if a != 0 {
                prop_assert!(image[a as usize] == 0 || image[a as usize] == b);
                image[a as usize] = b;
            }
        }
        prop_assert!(star.components.len() <= nn.components.len());
        prop_assert_eq!(nn.vacant_count(), g.total() - occ.count_ones());
        prop_assert_eq!(star.vacant_count(), nn.vacant_count());
        let vols = nn.volumes();
        prop_assert!(vols.windows(2).all(|w| w[0] >= w[1]));
    }
}
