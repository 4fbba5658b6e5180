//! Interval arithmetic on the circle, used by the overlap measures and the
//! set-approximation experiments.

use super::{wrap_positive, TWO_PI};

/// A set of disjoint arcs, stored as sorted, non-overlapping `[lo, hi]`
/// intervals inside `[0, 2π]`. An arc that crosses the 0/2π seam is split
/// into two pieces, so measures and intersections reduce to plain interval
/// sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcSet {
    pieces: Vec<(f64, f64)>,
}

impl ArcSet {
    pub fn empty() -> Self {
        Self { pieces: Vec::new() }
    }

    pub fn full() -> Self {
        Self {
            pieces: vec![(0.0, TWO_PI)],
        }
    }

    /// The arc centered at `axis` spanning `aperture` radians.
    pub fn from_arc(axis: f64, aperture: f64) -> Self {
        if aperture <= 0.0 {
            return Self::empty();
        }
        if aperture >= TWO_PI {
            return Self::full();
        }
        let lo = wrap_positive(axis - aperture / 2.0);
        let hi = lo + aperture;
        if hi <= TWO_PI {
            Self {
                pieces: vec![(lo, hi)],
            }
        } else {
            Self {
                pieces: vec![(0.0, hi - TWO_PI), (lo, TWO_PI)],
            }
        }
    }

    pub fn measure(&self) -> f64 {
        self.pieces.iter().map(|(lo, hi)| hi - lo).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn intersect(&self, other: &ArcSet) -> ArcSet {
        let mut pieces = Vec::new();
        for &(alo, ahi) in &self.pieces {
            for &(blo, bhi) in &other.pieces {
                let lo = alo.max(blo);
                let hi = ahi.min(bhi);
                if hi > lo {
                    pieces.push((lo, hi));
                }
            }
        }
        pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
        ArcSet { pieces }
    }

    pub fn union(&self, other: &ArcSet) -> ArcSet {
        let mut all: Vec<(f64, f64)> = self
            .pieces
            .iter()
            .chain(other.pieces.iter())
            .copied()
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut pieces: Vec<(f64, f64)> = Vec::with_capacity(all.len());
        for (lo, hi) in all {
            match pieces.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => pieces.push((lo, hi)),
            }
        }
        ArcSet { pieces }
    }

    pub fn contains(&self, theta: f64) -> bool {
        let t = wrap_positive(theta);
        self.pieces.iter().any(|&(lo, hi)| t >= lo && t <= hi)
    }
}
