//! Low-discrepancy Sobol sequence built from direction numbers.
//!
//! Direction numbers follow the Joe–Kuo construction for up to 21
//! dimensions, which covers the five-parameter process space and the paired
//! sample matrices of the sensitivity analysis.
//! An optional digital shift keyed by a seed is available; it is off by
//! default so the plain sequence is reproduced bit-for-bit.

use crate::error::{Error, Result};

const MAX_BITS: u32 = 32;

/// (degree s, coefficient a, initial m values) per dimension after the first.
/// The first dimension is the van der Corput sequence in base 2.
const JOE_KUO: &[(u32, u32, &[u32])] = &[
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
];

/// Highest supported dimensionality.
pub const MAX_DIM: usize = JOE_KUO.len() + 1;

/// Generator state for one Sobol stream of fixed dimensionality.
pub struct SobolSequence {
    dim: usize,
    // direction numbers, v[d][k] scaled by 2^32
    directions: Vec<[u32; MAX_BITS as usize]>,
    x: Vec<u32>,
    index: u64,
    shift: Vec<u32>,
}

impl SobolSequence {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::domain(format!(
                "sobol dimension must be in 1..={MAX_DIM}, got {dim}"
            )));
        }
        let mut directions = Vec::with_capacity(dim);
        // dimension 1: v_k = 2^(32-k)
        let mut v0 = [0u32; MAX_BITS as usize];
        for (k, v) in v0.iter_mut().enumerate() {
            *v = 1u32 << (31 - k);
        }
        directions.push(v0);
        for &(s, a, m_init) in JOE_KUO.iter().take(dim.saturating_sub(1)) {
            let mut m = [0u32; MAX_BITS as usize];
            m[..m_init.len()].copy_from_slice(m_init);
            for k in s as usize..MAX_BITS as usize {
                // recurrence: m_k = 2a_1 m_{k-1} ^ ... ^ 2^s m_{k-s} ^ m_{k-s}
                let mut val = m[k - s as usize] ^ (m[k - s as usize] << s);
                for j in 1..s {
                    if (a >> (s - 1 - j)) & 1 == 1 {
                        val ^= m[k - j as usize] << j;
                    }
                }
                m[k] = val;
            }
            let mut v = [0u32; MAX_BITS as usize];
            for k in 0..MAX_BITS as usize {
                v[k] = m[k] << (31 - k);
            }
            directions.push(v);
        }
        Ok(SobolSequence {
            dim,
            directions,
            x: vec![0; dim],
            index: 0,
            shift: vec![0; dim],
        })
    }

    /// Applies a per-dimension digital XOR shift derived from `seed`.
    pub fn with_digital_shift(mut self, seed: u64) -> Self {
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        for s in self.shift.iter_mut() {
            // splitmix64 step
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            *s = (z ^ (z >> 31)) as u32;
        }
        self
    }

    /// Next point in the unit hypercube (half-open in each coordinate).
    pub fn next_point(&mut self) -> Vec<f64> {
        // Gray-code order: flip the direction number of the lowest zero bit.
        let c = self.index.trailing_ones() as usize;
        self.index += 1;
        let mut out = Vec::with_capacity(self.dim);
        for d in 0..self.dim {
            self.x[d] ^= self.directions[d][c];
            out.push((self.x[d] ^ self.shift[d]) as f64 / (1u64 << 32) as f64);
        }
        out
    }

    /// Generates `n` points, skipping the initial all-zeros sample.
    pub fn sample(&mut self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.next_point()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_dimension_is_van_der_corput() {
        let mut s = SobolSequence::new(1).unwrap();
        let pts: Vec<f64> = s.sample(7).into_iter().map(|p| p[0]).collect();
        // Gray-code order of 1/2, 1/4, 3/4, ...
        assert_eq!(pts[0], 0.5);
        let mut sorted = pts.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(sorted, vec![0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875]);
    }

    #[test]
    fn points_are_distinct_and_in_unit_cube() {
        let mut s = SobolSequence::new(5).unwrap();
        let pts = s.sample(512);
        for p in &pts {
            assert!(p.iter().all(|&v| (0.0..1.0).contains(&v)));
        }
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                assert_ne!(pts[i], pts[j]);
            }
        }
    }

    #[test]
    fn balanced_in_each_coordinate() {
        // the first 2^k points of the raw sequence hit each dyadic half
        // exactly 2^(k-1) times; we skip the all-zeros point, so the lower
        // half is one short
        let mut s = SobolSequence::new(6).unwrap();
        let pts = s.sample(255);
        for d in 0..6 {
            let low = pts.iter().filter(|p| p[d] < 0.5).count();
            assert_eq!(low, 127, "dimension {d} unbalanced");
        }
    }

    #[test]
    fn digital_shift_changes_points_deterministically() {
        let a: Vec<_> = SobolSequence::new(3).unwrap().with_digital_shift(7).sample(16);
        let b: Vec<_> = SobolSequence::new(3).unwrap().with_digital_shift(7).sample(16);
        let c: Vec<_> = SobolSequence::new(3).unwrap().sample(16);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_unsupported_dimension() {
        assert!(SobolSequence::new(0).is_err());
        assert!(SobolSequence::new(MAX_DIM).is_ok());
        assert!(SobolSequence::new(MAX_DIM + 1).is_err());
    }

    #[test]
    fn direction_table_entries_are_admissible() {
        // every initial direction number must be odd and below 2^k, and the
        // polynomial coefficient below 2^(s-1)
        for &(s, a, m) in JOE_KUO {
            assert_eq!(m.len(), s as usize);
            assert!(a < (1 << (s - 1)) || s == 1);
            for (k, &mk) in m.iter().enumerate() {
                assert_eq!(mk % 2, 1);
                assert!(mk < (2u32 << k), "m = {mk} at position {k}");
            }
        }
    }

    #[test]
    fn high_dimensions_stay_balanced() {
        let mut s = SobolSequence::new(MAX_DIM).unwrap();
        let pts = s.sample(511);
        for d in 0..MAX_DIM {
            let low = pts.iter().filter(|p| p[d] < 0.5).count();
            assert_eq!(low, 255, "dimension {d} unbalanced");
        }
    }
}
