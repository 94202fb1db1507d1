//! Connected components of vacant sets: union-find labeling, component
//! statistics, horizontal planes with crossings and seeds, the local
//! uniqueness criterion and local averages of boundary connections.

use crate::bits::BitSet;
use crate::lattice::{circular_distance, TorusGeom};
use crate::rw::VisitedMask;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjacency {
    /// Nearest neighbors, `l_1` distance 1.
    Nearest,
    /// `l_inf` distance 1.
    Star,
}

impl Adjacency {
    /// Neighbor offsets; with `forward` only those whose first nonzero entry is positive.
    pub fn offsets(self, d: usize, forward: bool) -> Vec<Vec<i64>> {
        let mut out = Vec::new();
        match self {
            Adjacency::Nearest => {
                for axis in 0..d {
                    for s in [1, -1] {
                        if forward && s < 0 {
                            continue;
                        }
                        let mut o = vec![0; d];
                        o[axis] = s;
                        out.push(o);
                    }
                }
            }
            Adjacency::Star => {
                for k in 0..3usize.pow(d as u32) {
                    let mut o = vec![0i64; d];
                    let mut rem = k;
                    for x in o.iter_mut().rev() {
                        *x = (rem % 3) as i64 - 1;
                        rem /= 3;
                    }
                    match o.iter().find(|&&x| x != 0) {
                        None => continue,
                        Some(&first) if forward && first < 0 => continue,
                        _ => out.push(o),
                    }
                }
            }
        }
        out
    }
}

/// Cubic grid `{0..side-1}^d`, either periodic (a torus) or with free boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub d: usize,
    pub side: usize,
    pub periodic: bool,
    strides: Vec<usize>,
    total: usize,
}

impl Grid {
    pub fn new(d: usize, side: usize, periodic: bool) -> Self {
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * side;
        }
        Self {
            d,
            side,
            periodic,
            strides,
            total: side.pow(d as u32),
        }
    }

    pub fn torus(geom: &TorusGeom) -> Self {
        Self::new(geom.dim(), geom.side(), true)
    }

    pub fn free_box(d: usize, side: usize) -> Self {
        Self::new(d, side, false)
    }

    #[inline]
    pub fn total(&self) -> usize {
        self.total
    }

    #[inline]
    pub fn coords_into(&self, mut site: usize, out: &mut [usize]) {
        for (c, &s) in out.iter_mut().zip(&self.strides) {
            *c = site / s;
            site %= s;
        }
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut c = vec![0; self.d];
        self.coords_into(site, &mut c);
        c
    }

    pub fn site(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    /// Site at `coords + offset`, `None` when it leaves a free box.
    #[inline]
    pub fn shift(&self, coords: &[usize], offset: &[i64]) -> Option<usize> {
        let n = self.side as i64;
        let mut site = 0;
        for i in 0..self.d {
            let mut c = coords[i] as i64 + offset[i];
            if c < 0 || c >= n {
                if !self.periodic {
                    return None;
                }
                c = c.rem_euclid(n);
            }
            site += c as usize * self.strides[i];
        }
        Some(site)
    }

    /// Distance along one axis: circular on a torus.
    #[inline]
    pub fn axis_distance(&self, a: usize, b: usize) -> usize {
        if self.periodic {
            circular_distance(a, b, self.side)
        } else {
            a.abs_diff(b)
        }
    }
}

/// Disjoint-set forest with union by size and path halving.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        assert!(n <= u32::MAX as usize);
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    #[inline]
    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] as usize != x {
            let p = self.parent[x] as usize;
            self.parent[x] = self.parent[p];
            x = self.parent[x] as usize;
        }
        x
    }

    #[inline]
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra as u32;
        self.size[ra] += self.size[rb];
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    /// Label, starting at 1 in order of the smallest member site.
    pub id: u32,
    /// Smallest member site.
    pub root: usize,
    pub volume: usize,
    /// Per-axis span: the shortest (circular, on a torus) interval covering
    /// the member coordinates, measured in steps.
    pub extents: Vec<usize>,
    /// Exact `l_inf` diameter in the grid metric.
    pub diameter: usize,
}

/// Labeling of the vacant sites of a grid.
#[derive(Debug, Clone)]
pub struct ComponentStats {
    pub grid: Grid,
    pub adjacency: Adjacency,
    /// Component label per site, 0 for occupied sites.
    pub labels: Vec<u32>,
    /// Indexed by `id - 1`.
    pub components: Vec<Component>,
    /// Component ids by decreasing volume, ties by smaller root.
    pub order: Vec<u32>,
    pub id_max: Option<u32>,
    pub id_sec: Option<u32>,
    /// The largest component winds around every axis of the torus.
    pub wraps_all_axes: bool,
}

impl ComponentStats {
    pub fn component(&self, id: u32) -> &Component {
        &self.components[id as usize - 1]
    }

    pub fn volumes(&self) -> Vec<usize> {
        self.order.iter().map(|&id| self.component(id).volume).collect()
    }

    pub fn vacant_count(&self) -> usize {
        self.components.iter().map(|c| c.volume).sum()
    }

    pub fn max_volume(&self) -> usize {
        self.id_max.map_or(0, |id| self.component(id).volume)
    }

    pub fn sec_volume(&self) -> usize {
        self.id_sec.map_or(0, |id| self.component(id).volume)
    }

    #[inline]
    pub fn label(&self, site: usize) -> u32 {
        self.labels[site]
    }
}

/// Labels the vacant sites of a walk trace on its torus.
pub fn label_mask(mask: &VisitedMask, adjacency: Adjacency) -> ComponentStats {
    label_components(&Grid::torus(&mask.geom), &mask.bits, adjacency)
}

/// Union-find labeling of the complement of `occupied`.
pub fn label_components(grid: &Grid, occupied: &BitSet, adjacency: Adjacency) -> ComponentStats {
    assert_eq!(occupied.len(), grid.total());
    let total = grid.total();
    let offsets = adjacency.offsets(grid.d, true);
    let mut uf = UnionFind::new(total);
    let mut c = vec![0usize; grid.d];
    for site in 0..total {
        if occupied.get(site) {
            continue;
        }
        grid.coords_into(site, &mut c);
        for o in &offsets {
            if let Some(t) = grid.shift(&c, o) {
                if !occupied.get(t) {
                    uf.union(site, t);
                }
            }
        }
    }
    // Number components in order of their smallest site.
    let mut labels = vec![0u32; total];
    let mut root_label = vec![0u32; total];
    let mut roots = Vec::new();
    let mut volumes = Vec::new();
    for (site, label) in labels.iter_mut().enumerate() {
        if occupied.get(site) {
            continue;
        }
        let r = uf.find(site);
        if root_label[r] == 0 {
            roots.push(site);
            volumes.push(0usize);
            root_label[r] = roots.len() as u32;
        }
        let id = root_label[r];
        *label = id;
        volumes[id as usize - 1] += 1;
    }
    drop(root_label);
    drop(uf);

    let components = component_geometry(grid, &labels, &roots, &volumes);
    let mut order: Vec<u32> = (1..=components.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&components[a as usize - 1], &components[b as usize - 1]);
        cb.volume.cmp(&ca.volume).then(ca.root.cmp(&cb.root))
    });
    let id_max = order.first().copied();
    let id_sec = order.get(1).copied();
    let wraps_all_axes = grid.periodic
        && id_max.is_some_and(|id| {
            (0..grid.d).all(|axis| winds_around(grid, &labels, id, roots[id as usize - 1], axis, adjacency))
        });
    ComponentStats {
        grid: grid.clone(),
        adjacency,
        labels,
        components,
        order,
        id_max,
        id_sec,
        wraps_all_axes,
    }
}

fn component_geometry(grid: &Grid, labels: &[u32], roots: &[usize], volumes: &[usize]) -> Vec<Component> {
    let k = roots.len();
    // Counting sort of sites by label.
    let mut start = vec![0usize; k + 1];
    for (i, v) in volumes.iter().enumerate() {
        start[i + 1] = start[i] + v;
    }
    let mut fill = start.clone();
    let mut members = vec![0u32; start[k]];
    for (site, &l) in labels.iter().enumerate() {
        if l != 0 {
            let slot = &mut fill[l as usize - 1];
            members[*slot] = site as u32;
            *slot += 1;
        }
    }
    let n = grid.side;
    let mut residues: Vec<usize> = Vec::new();
    let mut seen = BitSet::new(n);
    let mut c = vec![0usize; grid.d];
    (0..k)
        .map(|i| {
            let sites = &members[start[i]..start[i + 1]];
            let mut extents = Vec::with_capacity(grid.d);
            let mut diameter = 0;
            for axis in 0..grid.d {
                residues.clear();
                if sites.len() > n {
                    for &s in sites {
                        grid.coords_into(s as usize, &mut c);
                        seen.set(c[axis]);
                    }
                    for r in seen.ones() {
                        residues.push(r);
                    }
                    for &r in &residues {
                        seen.clear(r);
                    }
                } else {
                    for &s in sites {
                        grid.coords_into(s as usize, &mut c);
                        residues.push(c[axis]);
                    }
                    residues.sort_unstable();
                    residues.dedup();
                }
                let (span, diam) = axis_span_and_diameter(&residues, n, grid.periodic);
                extents.push(span);
                diameter = diameter.max(diam);
            }
            Component {
                id: i as u32 + 1,
                root: roots[i],
                volume: volumes[i],
                extents,
                diameter,
            }
        })
        .collect()
}

/// For sorted distinct residues: the covering span and the largest pairwise distance.
pub(crate) fn axis_span_and_diameter(res: &[usize], n: usize, periodic: bool) -> (usize, usize) {
    let (first, last) = (res[0], res[res.len() - 1]);
    if !periodic {
        return (last - first, last - first);
    }
    let mut max_gap = n - last + first;
    for w in res.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    let span = n - max_gap;
    // Farthest partner of each residue is next to the antipode.
    let mut diam = 0;
    for &a in res {
        let target = (a + n / 2) % n;
        let j = res.partition_point(|&x| x < target);
        for k in [j, j + res.len() - 1] {
            let b = res[k % res.len()];
            diam = diam.max(circular_distance(a, b, n));
        }
        if diam == n / 2 {
            break;
        }
    }
    (span, diam)
}

/// Whether component `id` contains a cycle that winds around `axis`.
fn winds_around(grid: &Grid, labels: &[u32], id: u32, root: usize, axis: usize, adjacency: Adjacency) -> bool {
    let offsets = adjacency.offsets(grid.d, false);
    let n = grid.side as i64;
    let mut winding = vec![i32::MIN; grid.total()];
    let mut queue = VecDeque::new();
    winding[root] = 0;
    queue.push_back(root);
    let mut c = vec![0usize; grid.d];
    while let Some(s) = queue.pop_front() {
        grid.coords_into(s, &mut c);
        let w = winding[s];
        for o in &offsets {
            let t = grid.shift(&c, o).expect("periodic grid");
            if labels[t] != id {
                continue;
            }
            let raw = c[axis] as i64 + o[axis];
            let expected = w + if raw < 0 {
                -1
            } else if raw >= n {
                1
            } else {
                0
            };
            if winding[t] == i32::MIN {
                winding[t] = expected;
                queue.push_back(t);
            } else if winding[t] != expected {
                return true;
            }
        }
    }
    false
}

/// Vacant sites reachable from `start` inside `B(center, r)` of a torus,
/// visited breadth first; `visit` returns true to stop early.
struct BallSearch<'a> {
    grid: &'a Grid,
    occupied: &'a BitSet,
    offsets: Vec<Vec<i64>>,
    stamp: Vec<u32>,
    generation: u32,
    queue: VecDeque<usize>,
    c: Vec<usize>,
}

impl<'a> BallSearch<'a> {
    fn new(grid: &'a Grid, occupied: &'a BitSet, adjacency: Adjacency) -> Self {
        Self {
            grid,
            occupied,
            offsets: adjacency.offsets(grid.d, false),
            stamp: vec![0; grid.total()],
            generation: 0,
            queue: VecDeque::new(),
            c: vec![0; grid.d],
        }
    }

    fn next_generation(&mut self) {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
    }

    fn seen(&self, site: usize) -> bool {
        self.stamp[site] == self.generation
    }

    /// Explores the component of `start` within the ball; `visit` gets the
    /// chart offset of each reached site and may stop the search.
    fn explore(&mut self, center: &[usize], r: usize, start: usize, mut visit: impl FnMut(&[i64]) -> bool) -> bool {
        let n = self.grid.side as i64;
        let mut off = vec![0i64; self.grid.d];
        self.stamp[start] = self.generation;
        self.queue.clear();
        self.queue.push_back(start);
        while let Some(s) = self.queue.pop_front() {
            self.grid.coords_into(s, &mut self.c);
            for i in 0..self.grid.d {
                let mut dlt = self.c[i] as i64 - center[i] as i64;
                if self.grid.periodic {
                    dlt = dlt.rem_euclid(n);
                    if dlt > n / 2 {
                        dlt -= n;
                    }
                }
                off[i] = dlt;
            }
            if visit(&off) {
                return true;
            }
            for o in &self.offsets {
                if let Some(t) = self.grid.shift(&self.c, o) {
                    if self.stamp[t] == self.generation || self.occupied.get(t) {
                        continue;
                    }
                    let inside = (0..self.grid.d).all(|i| {
                        let ci = self.grid.coords_along(t, i);
                        self.grid.axis_distance(ci, center[i]) <= r
                    });
                    if inside {
                        self.stamp[t] = self.generation;
                        self.queue.push_back(t);
                    }
                }
            }
        }
        false
    }
}

impl Grid {
    #[inline]
    fn coords_along(&self, site: usize, axis: usize) -> usize {
        (site / self.strides[axis]) % self.side
    }

    /// Sites of the ball `B(center, r)`, each once.
    fn ball_sites(&self, center: &[usize], r: usize) -> Vec<usize> {
        let n = self.side as i64;
        let width = (2 * r + 1).min(self.side) as i64;
        let lo = if 2 * r + 1 >= self.side { 0 } else { -(r as i64) };
        let mut out = Vec::with_capacity(width.pow(self.d as u32) as usize);
        let mut idx = vec![0i64; self.d];
        'outer: loop {
            let mut site = 0;
            let mut ok = true;
            for i in 0..self.d {
                let base = if lo == 0 { 0 } else { center[i] as i64 };
                let mut c = base + lo + idx[i];
                if self.periodic {
                    c = c.rem_euclid(n);
                } else if c < 0 || c >= n {
                    ok = false;
                }
                site += c.max(0) as usize * self.strides[i];
            }
            if ok {
                out.push(site);
            }
            for i in (0..self.d).rev() {
                idx[i] += 1;
                if idx[i] < width {
                    continue 'outer;
                }
                idx[i] = 0;
            }
            break;
        }
        out
    }
}

/// Report on the horizontal plane through a site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaneReport {
    pub base: usize,
    pub crossing_found: bool,
    /// Smallest torus site of a vacant component of the plane that touches
    /// all four sides of the square `{0..N-1}^2`.
    pub crossing_root: Option<usize>,
    /// Points of the row through `base` (first coordinate varying) that are
    /// connected to `d_i B(y, l)` within the vacant part of the plane.
    pub seeds: Vec<usize>,
    /// Largest `l_inf` diameter of an occupied star-connected set of the
    /// square, `None` when the plane has no occupied site.
    pub star_diameter: Option<usize>,
}

/// Analyzes the plane through `x` in which the first two coordinates vary.
pub fn plane_analysis(geom: &TorusGeom, occupied: &BitSet, x: usize, ell: usize) -> PlaneReport {
    let n = geom.side();
    let xc = geom.coords(x);
    let plane_site = |a: usize, b: usize| {
        let mut c = xc.clone();
        c[0] = a;
        c[1] = b;
        geom.site(&c)
    };
    let mut plane_occ = BitSet::new(n * n);
    for a in 0..n {
        for b in 0..n {
            if occupied.get(plane_site(a, b)) {
                plane_occ.set(a * n + b);
            }
        }
    }
    let square = Grid::free_box(2, n);

    let vacant = label_components(&square, &plane_occ, Adjacency::Nearest);
    let mut crossing_root = None;
    for comp in &vacant.components {
        // A free-box component touches both sides of an axis iff its span is N - 1.
        if comp.extents.iter().all(|&e| e == n - 1) {
            let root = square.coords(comp.root);
            crossing_root = Some(plane_site(root[0], root[1]));
            break;
        }
    }

    let star = label_components(&square, &plane_occ.complement(), Adjacency::Star);
    let star_diameter = star.components.iter().map(|c| c.diameter).max();

    let torus_plane = Grid::new(2, n, true);
    let mut search = BallSearch::new(&torus_plane, &plane_occ, Adjacency::Nearest);
    let seeds = (0..n)
        .filter(|&a| {
            let y = [a, xc[1]];
            let s = torus_plane.site(&y);
            if plane_occ.get(s) {
                return false;
            }
            search.next_generation();
            search.explore(&y, ell, s, |off| off.iter().any(|o| o.unsigned_abs() as usize == ell))
        })
        .map(|a| plane_site(a, xc[1]))
        .collect();

    PlaneReport {
        base: x,
        crossing_found: crossing_root.is_some(),
        crossing_root,
        seeds,
        star_diameter,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniquenessReport {
    /// Every `B(x, 2l)` holds a vacant connected set of diameter at least `l`.
    pub hypothesis1: bool,
    /// Within every `B(x, 6l)`, all such sets lie in one global component.
    pub hypothesis2: bool,
    pub hypotheses_hold: bool,
    /// Exactly one global vacant component has diameter at least `l`.
    pub conclusion_holds: bool,
    pub large_components: usize,
    pub centers_checked: usize,
}

/// Checks the local uniqueness criterion on the vacant set of a torus.
///
/// Centers are every site when `N <= 32` and the grid of stride `l` otherwise.
pub fn uniqueness_check(geom: &TorusGeom, occupied: &BitSet, ell: usize) -> UniquenessReport {
    assert!(ell >= 1);
    let grid = Grid::torus(geom);
    let n = geom.side();
    let stats = label_components(&grid, occupied, Adjacency::Nearest);
    let large: Vec<u32> = stats
        .components
        .iter()
        .filter(|c| c.diameter >= ell)
        .map(|c| c.id)
        .collect();
    let conclusion_holds = large.len() == 1;

    let stride = if n <= 32 { 1 } else { ell };
    let axis_centers: Vec<usize> = (0..n).step_by(stride).collect();
    let centers: Vec<usize> = (0..axis_centers.len().pow(geom.dim() as u32))
        .map(|mut k| {
            let mut c = vec![0; geom.dim()];
            for x in c.iter_mut().rev() {
                *x = axis_centers[k % axis_centers.len()];
                k /= axis_centers.len();
            }
            geom.site(&c)
        })
        .collect();

    let mut search = BallSearch::new(&grid, occupied, Adjacency::Nearest);
    let wraps = |r: usize| 2 * r + 1 >= n;

    let hypothesis1 = if wraps(2 * ell) {
        !large.is_empty()
    } else {
        centers.iter().all(|&x| {
            let xc = geom.coords(x);
            search.next_generation();
            grid.ball_sites(&xc, 2 * ell).into_iter().any(|s| {
                if occupied.get(s) || search.seen(s) {
                    return false;
                }
                let mut lo = vec![i64::MAX; geom.dim()];
                let mut hi = vec![i64::MIN; geom.dim()];
                search.explore(&xc, 2 * ell, s, |off| {
                    for i in 0..off.len() {
                        lo[i] = lo[i].min(off[i]);
                        hi[i] = hi[i].max(off[i]);
                    }
                    (0..off.len()).any(|i| (hi[i] - lo[i]) as usize >= ell)
                })
            })
        })
    };

    // A local set of diameter at least l lies in a global one, so with at
    // most one large global component every center passes.
    let hypothesis2 = if wraps(6 * ell) || large.len() <= 1 {
        large.len() <= 1
    } else {
        let is_large = |l: u32| l != 0 && stats.component(l).diameter >= ell;
        centers.iter().all(|&x| {
            let xc = geom.coords(x);
            let sites = grid.ball_sites(&xc, 6 * ell);
            let mut first = None;
            let mixed = sites
                .iter()
                .map(|&s| stats.label(s))
                .filter(|&l| is_large(l))
                .any(|l| *first.get_or_insert(l) != l);
            if !mixed {
                return true;
            }
            search.next_generation();
            let mut label: Option<u32> = None;
            sites.into_iter().all(|s| {
                if occupied.get(s) || search.seen(s) {
                    return true;
                }
                let mut lo = vec![i64::MAX; geom.dim()];
                let mut hi = vec![i64::MIN; geom.dim()];
                search.explore(&xc, 6 * ell, s, |off| {
                    for i in 0..off.len() {
                        lo[i] = lo[i].min(off[i]);
                        hi[i] = hi[i].max(off[i]);
                    }
                    false
                });
                let big = (0..lo.len()).any(|i| (hi[i] - lo[i]) as usize >= ell);
                if !big {
                    return true;
                }
                let l = stats.label(s);
                match label {
                    None => {
                        label = Some(l);
                        true
                    }
                    Some(prev) => prev == l,
                }
            })
        })
    };

    UniquenessReport {
        hypothesis1,
        hypothesis2,
        hypotheses_hold: hypothesis1 && hypothesis2,
        conclusion_holds,
        large_components: large.len(),
        centers_checked: centers.len(),
    }
}

/// Fraction of sites that are vacant and joined to `d_i B(x, r)` by a vacant
/// path, with `r = floor(N^delta / 2)`.
pub fn local_average(geom: &TorusGeom, occupied: &BitSet, delta: f64) -> f64 {
    let n = geom.side();
    let r = ((n as f64).powf(delta) / 2.0).floor() as usize;
    assert!(
        delta > 0.0 && delta < 1.0 && r >= 1,
        "need delta in (0,1) and N^delta/2 >= 1"
    );
    let grid = Grid::torus(geom);
    let stats = label_components(&grid, occupied, Adjacency::Nearest);
    let mut search = BallSearch::new(&grid, occupied, Adjacency::Nearest);
    let mut hits = 0usize;
    let mut c = vec![0usize; geom.dim()];
    for x in 0..geom.total() {
        let l = stats.label(x);
        if l == 0 {
            continue;
        }
        // A component of diameter below r cannot reach distance r.
        if stats.component(l).diameter < r {
            continue;
        }
        grid.coords_into(x, &mut c);
        search.next_generation();
        if search.explore(&c, r, x, |off| off.iter().any(|o| o.unsigned_abs() as usize == r)) {
            hits += 1;
        }
    }
    hits as f64 / geom.total() as f64
}
