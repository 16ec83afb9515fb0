//! Per-point assignment tracking and the crack buffer.

use std::collections::BTreeSet;

/// Assignments, distances to the assigned representative, and list sizes.
///
/// The engine keeps two of these: the committed ("true") state that mirrors
/// the physical inverted lists, and the dynamic state that additionally
/// reflects buffered cracks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IndexState {
    pub assignments: Vec<u32>,
    pub distances: Vec<f32>,
    pub histogram: Vec<u32>,
}

impl IndexState {
    pub fn from_assignments(assignments: Vec<u32>, distances: Vec<f32>, nlist: usize) -> Self {
        let histogram = histogram_of(&assignments, nlist);
        Self {
            assignments,
            distances,
            histogram,
        }
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Moves point `p` to crack `to` with distance `dist`, keeping the histogram in step.
    #[inline]
    pub fn reassign(&mut self, p: u32, to: u32, dist: f32) {
        let p = p as usize;
        let from = self.assignments[p] as usize;
        self.histogram[from] -= 1;
        self.histogram[to as usize] += 1;
        self.assignments[p] = to;
        self.distances[p] = dist;
    }

    /// Histogram recomputed from the assignment array.
    pub fn recount(&self) -> Vec<u32> {
        histogram_of(&self.assignments, self.histogram.len())
    }

    pub fn release(&mut self) {
        *self = Self::default();
    }
}

pub fn histogram_of(assignments: &[u32], nlist: usize) -> Vec<u32> {
    let mut h = vec![0u32; nlist];
    for &a in assignments {
        h[a as usize] += 1;
    }
    h
}

/// A crack waiting to be committed: the query it was created around and
/// the points it stole at buffering time.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferedCrack {
    pub vector: Vec<f32>,
    pub provisional_id: u32,
    /// Committed cracks visited by the query that produced this crack.
    pub local_cracks: Vec<u32>,
    pub stolen: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrackBuffer {
    pub cracks: Vec<BufferedCrack>,
    /// Points whose dynamic assignment differs from the committed one.
    pub buffered_points: BTreeSet<u32>,
}

impl CrackBuffer {
    pub fn len(&self) -> usize {
        self.cracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cracks.is_empty()
    }

    pub fn clear(&mut self) {
        self.cracks.clear();
        self.buffered_points.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reassign_keeps_histogram_consistent() {
        let mut s = IndexState::from_assignments(vec![0, 0, 1, 1, 1], vec![1.0; 5], 3);
        assert_eq!(s.histogram, vec![2, 3, 0]);
        s.reassign(2, 2, 0.5);
        s.reassign(0, 2, 0.25);
        assert_eq!(s.histogram, vec![1, 2, 2]);
        assert_eq!(s.recount(), s.histogram);
        assert_eq!(s.distances[0], 0.25);
    }
}
