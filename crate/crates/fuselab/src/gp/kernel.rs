//! Mixed-input correlation kernel: Gaussian over the quantitative block with
//! per-dimension log10 scales, unit scales over the embedded categorical
//! block.

use nalgebra::DMatrix;

use crate::data::Schema;
use crate::error::{Error, Result};

/// Grouped one-hot encoding of categorical level indices: one block per
/// variable, a single 1 inside each block.
pub fn encode_categorical(levels: &[usize], schema: &Schema) -> Result<Vec<f64>> {
    schema.check_levels(levels)?;
    let mut pi = vec![0.0; schema.total_levels()];
    let mut offset = 0;
    for (cat, &lvl) in schema.cats.iter().zip(levels) {
        pi[offset + lvl] = 1.0;
        offset += cat.cardinality();
    }
    Ok(pi)
}

/// Latent representation h = pi^T A for a mapping matrix A of shape
/// (total levels) x dh.
pub fn embed(pi: &[f64], mapping: &DMatrix<f64>) -> Result<Vec<f64>> {
    if pi.len() != mapping.nrows() {
        return Err(Error::domain(format!(
            "encoding length {} does not match mapping matrix rows {}",
            pi.len(),
            mapping.nrows()
        )));
    }
    let dh = mapping.ncols();
    let mut h = vec![0.0; dh];
    for (k, &w) in pi.iter().enumerate() {
        if w != 0.0 {
            for j in 0..dh {
                h[j] += w * mapping[(k, j)];
            }
        }
    }
    Ok(h)
}

/// Shortcut for one-hot inputs: sums the mapping rows selected by the level
/// indices without materializing the encoding.
pub fn embed_levels(levels: &[usize], schema: &Schema, mapping: &DMatrix<f64>) -> Result<Vec<f64>> {
    schema.check_levels(levels)?;
    let dh = mapping.ncols();
    let mut h = vec![0.0; dh];
    let mut offset = 0;
    for (cat, &lvl) in schema.cats.iter().zip(levels) {
        let row = offset + lvl;
        for j in 0..dh {
            h[j] += mapping[(row, j)];
        }
        offset += cat.cardinality();
    }
    Ok(h)
}

/// Correlation between two points given standardized quantitative coordinates
/// and embedded categorical coordinates:
/// exp(-sum_i 10^omega_i (x_i - x'_i)^2 - sum_j (h_j - h'_j)^2).
pub fn correlation(x: &[f64], x2: &[f64], h: &[f64], h2: &[f64], omega: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), omega.len());
    let mut d = 0.0;
    for i in 0..x.len() {
        let dx = x[i] - x2[i];
        d += 10f64.powf(omega[i]) * dx * dx;
    }
    for j in 0..h.len() {
        let dh = h[j] - h2[j];
        d += dh * dh;
    }
    (-d).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CatVar;
    use approx::assert_relative_eq;

    fn two_cat_schema() -> Schema {
        Schema::quantitative(&[])
            .with_cat(CatVar::new("src", vec!["Cuboid".into(), "Tensile".into()]))
            .with_cat(CatVar::new("alloy", vec!["174".into(), "316".into(), "304".into()]))
    }

    #[test]
    fn one_hot_single_variable() {
        let schema = Schema::quantitative(&[])
            .with_cat(CatVar::new("src", vec!["Cuboid".into(), "Tensile".into()]));
        assert_eq!(encode_categorical(&[0], &schema).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn block_one_hot_two_variables() {
        let pi = encode_categorical(&[1, 1], &two_cat_schema()).unwrap();
        assert_eq!(pi, vec![0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn encoding_has_one_bit_per_variable() {
        let schema = two_cat_schema();
        for a in 0..2 {
            for b in 0..3 {
                let pi = encode_categorical(&[a, b], &schema).unwrap();
                assert_eq!(pi.iter().filter(|&&v| v == 1.0).count(), schema.dt());
            }
        }
        assert!(encode_categorical(&[0, 3], &schema).is_err());
    }

    #[test]
    fn embed_selects_rows() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let h = embed(&[1.0, 0.0], &a).unwrap();
        assert_eq!(h, vec![1.0, 2.0]);
        let zeros = DMatrix::zeros(2, 2);
        assert_eq!(embed(&[0.0, 1.0], &zeros).unwrap(), vec![0.0, 0.0]);
        assert!(embed(&[1.0], &a).is_err());
    }

    #[test]
    fn embed_matches_dense_matrix_multiply_oracle() {
        let schema = two_cat_schema();
        let nlev = schema.total_levels();
        let dh = 3;
        let a = DMatrix::from_fn(nlev, dh, |i, j| ((i * 7 + j * 13) % 11) as f64 * 0.25 - 1.0);
        for l0 in 0..2 {
            for l1 in 0..3 {
                let pi = encode_categorical(&[l0, l1], &schema).unwrap();
                // dense product oracle
                let mut oracle = vec![0.0; dh];
                for k in 0..nlev {
                    for j in 0..dh {
                        oracle[j] += pi[k] * a[(k, j)];
                    }
                }
                assert_eq!(embed(&pi, &a).unwrap(), oracle);
                assert_eq!(embed_levels(&[l0, l1], &schema, &a).unwrap(), oracle);
            }
        }
    }

    #[test]
    fn correlation_is_one_at_zero_distance() {
        let x = [0.3, -1.2];
        let h = [0.5];
        assert_eq!(correlation(&x, &x, &h, &h, &[0.0, 1.0]), 1.0);
    }

    #[test]
    fn correlation_hand_evaluated_unit_distance() {
        let v = correlation(&[0.0], &[1.0], &[], &[], &[0.0]);
        assert_relative_eq!(v, (-1.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn correlation_is_symmetric_and_translation_invariant() {
        let omega = [0.3, -0.5];
        let (a, b) = ([0.1, 2.0], [-0.4, 1.1]);
        let h = ([0.2], [0.9]);
        let v1 = correlation(&a, &b, &h.0, &h.1, &omega);
        let v2 = correlation(&b, &a, &h.1, &h.0, &omega);
        assert_eq!(v1, v2);
        let shifted = correlation(&[1.1, 5.0], &[0.6, 4.1], &h.0, &h.1, &omega);
        assert_relative_eq!(v1, shifted, max_relative = 1e-12);
    }
}
