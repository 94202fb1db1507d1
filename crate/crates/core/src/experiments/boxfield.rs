use std::collections::VecDeque;

use crate::bits::BitSet;
use crate::lattice::ZdBox;

/// Nearest-neighbor graph of the box `B(0, r)` in `Z^d`, indexed like
/// [`ZdBox`], with coordinates and `l_inf` norms precomputed.
#[derive(Debug, Clone)]
pub struct BoxGraph {
    pub d: usize,
    pub r: usize,
    bx: ZdBox,
    strides: Vec<usize>,
    coords: Vec<i16>,
    linf: Vec<u16>,
}

impl BoxGraph {
    pub fn new(d: usize, r: usize) -> Self {
        assert!(r < i16::MAX as usize, "box radius {r} too large");
        let bx = ZdBox::new(d, r);
        let side = 2 * r + 1;
        let mut strides = vec![1usize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * side;
        }
        let mut coords = Vec::with_capacity(bx.len() * d);
        let mut linf = Vec::with_capacity(bx.len());
        for p in bx.points() {
            coords.extend(p.0.iter().map(|&x| x as i16));
            linf.push(p.linf() as u16);
        }
        Self {
            d,
            r,
            bx,
            strides,
            coords,
            linf,
        }
    }

    pub fn len(&self) -> usize {
        self.linf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linf.is_empty()
    }

    pub fn linf(&self, i: usize) -> usize {
        self.linf[i] as usize
    }

    pub fn coords(&self, i: usize) -> &[i16] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn index(&self, p: &[i64]) -> Option<usize> {
        self.bx.index(p)
    }

    /// Indices of `B(0, radius)`.
    pub fn ball(&self, radius: usize) -> Vec<usize> {
        ZdBox::new(self.d, radius.min(self.r))
            .points()
            .map(|p| self.bx.index(&p.0).expect("sub-box"))
            .collect()
    }

    fn for_neighbors(&self, i: usize, mut f: impl FnMut(usize)) {
        let r = self.r as i16;
        for (k, &c) in self.coords(i).iter().enumerate() {
            if c < r {
                f(i + self.strides[k]);
            }
            if c > -r {
                f(i - self.strides[k]);
            }
        }
    }

    /// Whether the vacant sites of `B(0, from)` connect to `{|x|_inf = to}`
    /// through vacant sites of `B(0, to)`.
    pub fn connects(&self, vacant: impl Fn(usize) -> bool, from: usize, to: usize) -> bool {
        assert!(
            from <= to && to <= self.r,
            "radii {from} <= {to} <= {} violated",
            self.r
        );
        let mut seen = BitSet::new(self.len());
        let mut queue = VecDeque::new();
        for i in self.ball(from) {
            if vacant(i) {
                if self.linf(i) == to {
                    return true;
                }
                seen.set(i);
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            let mut hit = false;
            self.for_neighbors(i, |j| {
                if !hit && !seen.get(j) && self.linf(j) <= to && vacant(j) {
                    hit = self.linf(j) == to;
                    seen.set(j);
                    queue.push_back(j);
                }
            });
            if hit {
                return true;
            }
        }
        false
    }

    /// Vacant components of `B(0, radius)`: a label per site (`u32::MAX`
    /// outside or occupied) and the `l_inf` diameter of each component.
    pub fn components(&self, vacant: impl Fn(usize) -> bool, radius: usize) -> (Vec<u32>, Vec<usize>) {
        let mut labels = vec![u32::MAX; self.len()];
        let mut diameters = Vec::new();
        let mut queue = VecDeque::new();
        let mut lo = vec![0i16; self.d];
        let mut hi = vec![0i16; self.d];
        for s in self.ball(radius) {
            if labels[s] != u32::MAX || !vacant(s) {
                continue;
            }
            let id = diameters.len() as u32;
            labels[s] = id;
            lo.copy_from_slice(self.coords(s));
            hi.copy_from_slice(self.coords(s));
            queue.push_back(s);
            while let Some(i) = queue.pop_front() {
                for (k, &c) in self.coords(i).iter().enumerate() {
                    lo[k] = lo[k].min(c);
                    hi[k] = hi[k].max(c);
                }
                self.for_neighbors(i, |j| {
                    if labels[j] == u32::MAX && self.linf(j) <= radius && vacant(j) {
                        labels[j] = id;
                        queue.push_back(j);
                    }
                });
            }
            diameters.push(lo.iter().zip(&hi).map(|(a, b)| (b - a) as usize).max().unwrap_or(0));
        }
        (labels, diameters)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_box_connects_everywhere() {
        let g = BoxGraph::new(3, 5);
        assert!(g.connects(|_| true, 0, 5));
        assert!(!g.connects(|i| g.linf(i) != 3, 0, 5));
        assert!(g.connects(|i| g.linf(i) != 3, 4, 5));
    }

    #[test]
    fn components_split_by_a_wall() {
        let g = BoxGraph::new(2, 4);
        let (labels, diam) = g.components(|i| g.coords(i)[0] != 0, 4);
        assert_eq!(diam, vec![8, 8]);
        assert_eq!(labels.iter().filter(|&&l| l == u32::MAX).count(), 9);
        let (_, small) = g.components(|i| g.coords(i)[0] != 0, 2);
        assert_eq!(small, vec![4, 4]);
    }
}
