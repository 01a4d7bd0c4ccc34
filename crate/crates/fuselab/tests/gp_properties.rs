//! Cross-cutting properties of the GP emulator that hold regardless of the
//! training data: affine equivariance of the standardized fit, and positive
//! semi-definiteness of the correlation matrix over random mixed inputs.

use fuselab::data::{CatVar, MixedDataset, MixedInput, Schema};
use fuselab::gp::{kernel, GpConfig, GpModel};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn smooth_dataset(n: usize, seed: u64) -> MixedDataset {
    let schema = Schema::quantitative(&["a", "b"]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<MixedInput> = (0..n)
        .map(|_| MixedInput::quantitative(vec![rng.gen::<f64>(), rng.gen::<f64>()]))
        .collect();
    let responses = inputs
        .iter()
        .map(|p| (3.0 * p.quant[0]).sin() + p.quant[1] * p.quant[1])
        .collect();
    MixedDataset::new(schema, inputs, responses).unwrap()
}

/// Standardizing the outputs makes the internal optimization problem
/// identical for y and a*y + b, so with the same seed the two fits must give
/// predictions related by the same affine map (and scaled spreads).
#[test]
fn fit_is_equivariant_under_affine_response_maps() {
    let base = smooth_dataset(30, 11);
    let (a, b) = (5.0, -7.0);
    let mapped = MixedDataset::new(
        base.schema.clone(),
        base.inputs.clone(),
        base.responses.iter().map(|y| a * y + b).collect(),
    )
    .unwrap();

    let config = GpConfig { n_starts: 3, max_iters: 150, ..Default::default() };
    let m1 = GpModel::fit(&base, &config, 3).unwrap();
    let m2 = GpModel::fit(&mapped, &config, 3).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probes: Vec<MixedInput> = (0..20)
        .map(|_| MixedInput::quantitative(vec![rng.gen::<f64>(), rng.gen::<f64>()]))
        .collect();
    let p1 = m1.predict(&probes).unwrap();
    let p2 = m2.predict(&probes).unwrap();
    for (q1, q2) in p1.iter().zip(&p2) {
        assert!(
            (q2.mean - (a * q1.mean + b)).abs() < 1e-8 * (1.0 + q1.mean.abs()),
            "means not affine-related: {} vs {}",
            q2.mean,
            a * q1.mean + b
        );
        assert!(
            (q2.sd - a.abs() * q1.sd).abs() < 1e-8 * (1.0 + q1.sd),
            "sds not scale-related: {} vs {}",
            q2.sd,
            a.abs() * q1.sd
        );
    }
}

/// Shifting every response by a constant must leave the spread untouched.
#[test]
fn fit_spread_is_translation_invariant() {
    let base = smooth_dataset(25, 4);
    let shifted = MixedDataset::new(
        base.schema.clone(),
        base.inputs.clone(),
        base.responses.iter().map(|y| y + 1000.0).collect(),
    )
    .unwrap();
    let config = GpConfig { n_starts: 2, max_iters: 120, ..Default::default() };
    let m1 = GpModel::fit(&base, &config, 8).unwrap();
    let m2 = GpModel::fit(&shifted, &config, 8).unwrap();
    let probe = [MixedInput::quantitative(vec![0.31, 0.64])];
    let p1 = m1.predict(&probe).unwrap();
    let p2 = m2.predict(&probe).unwrap();
    assert!((p2[0].mean - p1[0].mean - 1000.0).abs() < 1e-7);
    assert!((p2[0].sd - p1[0].sd).abs() < 1e-9 * (1.0 + p1[0].sd));
}

fn correlation_matrix(xs: &[Vec<f64>], hs: &[Vec<f64>], omega: &[f64]) -> DMatrix<f64> {
    let n = xs.len();
    DMatrix::from_fn(n, n, |i, j| kernel::correlation(&xs[i], &xs[j], &hs[i], &hs[j], omega))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// A valid correlation function must produce a positive semi-definite
    /// Gram matrix for any point cloud and any kernel scales in the box.
    #[test]
    fn correlation_gram_matrix_is_psd(
        n in 2usize..40,
        dx in 1usize..4,
        dh in 0usize..3,
        seed in any::<u64>(),
        omega_raw in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dx).map(|_| rng.gen::<f64>()).collect()).collect();
        let hs: Vec<Vec<f64>> = (0..n).map(|_| (0..dh).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect()).collect();
        let omega = &omega_raw[..dx];
        let k = correlation_matrix(&xs, &hs, omega);
        // symmetric with unit diagonal
        for i in 0..n {
            prop_assert!((k[(i, i)] - 1.0).abs() < 1e-14);
            for j in 0..n {
                prop_assert!((k[(i, j)] - k[(j, i)]).abs() < 1e-14);
            }
        }
        // PSD up to round-off: a hair of jitter must make it factorizable
        let jittered = &k + DMatrix::identity(n, n) * 1e-9;
        prop_assert!(jittered.cholesky().is_some(), "Gram matrix not PSD for n={n} dx={dx} dh={dh}");
    }

    /// Correlation is maximal at zero distance and decays monotonically along
    /// rays: moving a point further away can only reduce it.
    #[test]
    fn correlation_decays_along_rays(
        seed in any::<u64>(),
        omega in prop::collection::vec(-3.0f64..3.0, 2),
        t1 in 0.01f64..1.0,
        scale in 1.01f64..5.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = vec![rng.gen::<f64>(), rng.gen::<f64>()];
        let dir = vec![rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5];
        let at = |t: f64| -> Vec<f64> { vec![x0[0] + t * dir[0], x0[1] + t * dir[1]] };
        let c0 = kernel::correlation(&x0, &x0, &[], &[], &omega);
        let c1 = kernel::correlation(&x0, &at(t1), &[], &[], &omega);
        let c2 = kernel::correlation(&x0, &at(t1 * scale), &[], &[], &omega);
        prop_assert!((c0 - 1.0).abs() < 1e-15);
        prop_assert!(c1 <= c0 + 1e-15);
        prop_assert!(c2 <= c1 + 1e-15);
    }
}

/// A categorical fed through the embedding contributes to the distance, so a
/// model trained on level-dependent data must separate the levels.
#[test]
fn embedding_separates_categorical_levels() {
    let schema = Schema::quantitative(&["x"]).with_cat(CatVar::new("g", vec!["lo".into(), "hi".into()]));
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let inputs: Vec<MixedInput> = (0..40)
        .map(|i| MixedInput::new(vec![rng.gen::<f64>()], vec![i % 2]))
        .collect();
    let responses = inputs
        .iter()
        .map(|p| p.quant[0] + if p.levels[0] == 0 { 0.0 } else { 10.0 })
        .collect();
    let data = MixedDataset::new(schema, inputs, responses).unwrap();
    let config = GpConfig { n_starts: 3, max_iters: 200, embed_dim: 1, ..Default::default() };
    let model = GpModel::fit(&data, &config, 5).unwrap();
    let lo = model.predict(&[MixedInput::new(vec![0.5], vec![0])]).unwrap();
    let hi = model.predict(&[MixedInput::new(vec![0.5], vec![1])]).unwrap();
    let gap = hi[0].mean - lo[0].mean;
    assert!((gap - 10.0).abs() < 1.0, "level gap {gap} should be close to 10");
}
