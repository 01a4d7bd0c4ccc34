//! Accuracy assessment, correlation screening, and variance-based
//! sensitivity analysis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MixedDataset, MixedInput};
use crate::domain::{ParamRanges, ProcessParams, ScanRotation};
use crate::fusion::{HierarchyPipeline, Stage};
use crate::sobol::SobolSequence;
use crate::error::{Error, Result};
use crate::gp::{GpConfig, GpModel};

/// The printed accuracy metric: the square root of the mean squared
/// residual. `squared` switches to the conventional mean squared error.
pub fn metric_eq1(y: &[f64], y_hat: &[f64], squared: bool) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::domain(format!(
            "length mismatch: {} measured vs {} predicted",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::domain("metric requires at least one point"));
    }
    let mse = y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y.len() as f64;
    Ok(if squared { mse } else { mse.sqrt() })
}

/// Coefficient of determination, 1 - SS_res / SS_tot.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::domain(format!(
            "length mismatch: {} measured vs {} predicted",
            y.len(),
            y_hat.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::domain("R^2 requires at least two points"));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::domain("R^2 is undefined for constant measurements"));
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Pairwise Pearson correlations of named series; diagonal exactly 1.
pub fn pearson_matrix(columns: &[(String, Vec<f64>)]) -> Result<Vec<Vec<f64>>> {
    if columns.is_empty() {
        return Err(Error::domain("no columns given"));
    }
    let n = columns[0].1.len();
    if n < 2 {
        return Err(Error::domain("correlation requires at least two rows"));
    }
    for (name, vals) in columns {
        if vals.len() != n {
            return Err(Error::domain(format!(
                "column `{name}` has {} rows, expected {n}",
                vals.len()
            )));
        }
    }
    let stats: Vec<(f64, f64)> = columns
        .iter()
        .map(|(name, vals)| {
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            if var <= 0.0 {
                return Err(Error::domain(format!(
                    "column `{name}` is constant; correlation undefined"
                )));
            }
            Ok((mean, var.sqrt()))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![vec![0.0; columns.len()]; columns.len()];
    for i in 0..columns.len() {
        out[i][i] = 1.0;
        for j in i + 1..columns.len() {
            let cov = columns[i]
                .1
                .iter()
                .zip(&columns[j].1)
                .map(|(a, b)| (a - stats[i].0) * (b - stats[j].0))
                .sum::<f64>()
                / n as f64;
            let r = cov / (stats[i].1 * stats[j].1);
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// cross-validation

/// Cross-validation summary. `fold_metrics` holds the held-out metric on the
/// standardized output scale per fold, `None` where the fold's fit failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub fold_metrics: Vec<Option<f64>>,
    pub failed_folds: Vec<usize>,
    /// R^2 assembled from out-of-fold predictions, in output units.
    pub r_squared: f64,
    /// Nugget of a full-data fit (standardized output scale).
    pub noise_variance: Option<f64>,
}

/// Deterministic shuffled partition of `0..n` into `k` folds whose sizes
/// differ by at most one.
pub fn fold_assignments(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::domain(format!("k must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::domain(format!("cannot split {n} rows into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(idx[at..at + size].to_vec());
        at += size;
    }
    Ok(folds)
}

/// k-fold cross-validation: per-fold fit, held-out metric, and an overall
/// out-of-fold R^2. A fold whose fit fails is recorded and skipped.
pub fn kfold_cv(data: &MixedDataset, k: usize, config: &GpConfig, seed: u64) -> Result<CvReport> {
    let folds = fold_assignments(data.len(), k, seed)?;
    let mut fold_metrics = Vec::with_capacity(k);
    let mut failed_folds = Vec::new();
    let mut measured = Vec::new();
    let mut predicted = Vec::new();
    for (f, fold) in folds.iter().enumerate() {
        let train_rows: Vec<usize> = (0..data.len()).filter(|i| !fold.contains(i)).collect();
        let train = data.select(&train_rows);
        let model = match GpModel::fit(&train, config, seed.wrapping_add(f as u64)) {
            Ok(m) => m,
            Err(_) => {
                failed_folds.push(f);
                fold_metrics.push(None);
                continue;
            }
        };
        let held = data.select(fold);
        let preds = model.predict(&held.inputs)?;
        let mut res_std = Vec::with_capacity(fold.len());
        for ((input, &y), pred) in held.inputs.iter().zip(&held.responses).zip(&preds) {
            let sd = model.output_scaler().for_levels(&input.levels).sd;
            res_std.push((y - pred.mean) / sd);
            measured.push(y);
            predicted.push(pred.mean);
        }
        let metric =
            (res_std.iter().map(|r| r * r).sum::<f64>() / res_std.len() as f64).sqrt();
        fold_metrics.push(Some(metric));
    }
    if measured.len() < 2 {
        return Err(Error::numeric("all cross-validation folds failed to fit"));
    }
    let r2 = r_squared(&measured, &predicted)?;
    let noise_variance = GpModel::fit(data, config, seed).ok().map(|m| m.nugget());
    Ok(CvReport {
        k,
        seed,
        fold_metrics,
        failed_folds,
        r_squared: r2,
        noise_variance,
    })
}

/// Noise-variance baseline: the nugget of a single full-data fit, on the
/// standardized output scale.
pub fn estimate_noise_variance(data: &MixedDataset, config: &GpConfig, seed: u64) -> Result<f64> {
    Ok(GpModel::fit(data, config, seed)?.nugget())
}

// ---------------------------------------------------------------------------
// Sobol sensitivity indices

/// Sampling space for sensitivity analysis: quantitative bounds plus
/// categoricals with declared cardinalities. Each categorical occupies one
/// uniform coordinate partitioned into equal sub-intervals per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub quant: Vec<(String, (f64, f64))>,
    pub cats: Vec<(String, usize)>,
}

impl FeatureSpace {
    pub fn dim(&self) -> usize {
        self.quant.len() + self.cats.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.quant
            .iter()
            .map(|(n, _)| n.clone())
            .chain(self.cats.iter().map(|(n, _)| n.clone()))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in &self.quant {
            if !(lo < hi) {
                return Err(Error::domain(format!(
                    "degenerate bounds for `{name}`: [{lo}, {hi}]"
                )));
            }
        }
        for (name, card) in &self.cats {
            if *card < 1 {
                return Err(Error::domain(format!("categorical `{name}` has no levels")));
            }
        }
        Ok(())
    }

    /// Maps one point of the unit hypercube to a model input.
    fn decode(&self, u: &[f64]) -> MixedInput {
        let nq = self.quant.len();
        let quant = self
            .quant
            .iter()
            .zip(u)
            .map(|((_, (lo, hi)), &v)| lo + (hi - lo) * v)
            .collect();
        let levels = self
            .cats
            .iter()
            .zip(&u[nq..])
            .map(|((_, card), &v)| ((v * *card as f64) as usize).min(card - 1))
            .collect();
        MixedInput::new(quant, levels)
    }
}

/// Main and total sensitivity indices per feature, quantitative columns
/// first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SobolReport {
    pub features: Vec<String>,
    pub main: Vec<f64>,
    pub total: Vec<f64>,
    pub n_base: usize,
    pub seed: u64,
}

impl SobolReport {
    /// Features whose main *and* total index fall below the threshold; these
    /// are the candidates for exclusion from downstream stages.
    pub fn negligible(&self, threshold: f64) -> Vec<String> {
        self.features
            .iter()
            .zip(self.main.iter().zip(&self.total))
            .filter(|(_, (&m, &t))| m < threshold && t < threshold)
            .map(|(n, _)| n.clone())
            .collect()
    }
}

/// Saltelli paired-matrix estimator: main indices per Saltelli (2010),
/// total indices per Jansen. Deterministic given the seed.
pub fn sobol_indices(
    model: impl Fn(&MixedInput) -> f64,
    space: &FeatureSpace,
    n_base: usize,
    seed: u64,
) -> Result<SobolReport> {
    space.validate()?;
    if n_base == 0 {
        return Err(Error::domain("n_base must be positive"));
    }
    let d = space.dim();
    if d == 0 {
        return Err(Error::domain("empty feature space"));
    }
    // Low-discrepancy A/B matrices (one 2d-dimensional stream split in two)
    // cut the Monte-Carlo error well below pseudo-random sampling at the
    // same n_base; beyond the generator's dimension limit fall back to
    // seeded pseudo-random draws.
    let (a, b): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match SobolSequence::new(2 * d) {
        Ok(seq) => seq
            .with_digital_shift(seed)
            .sample(n_base)
            .iter()
            .map(|p| (p[..d].to_vec(), p[d..].to_vec()))
            .unzip(),
        Err(_) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sample = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
                (0..n_base)
                    .map(|_| (0..d).map(|_| rng.gen::<f64>()).collect())
                    .collect()
            };
            let a = sample(&mut rng);
            let b = sample(&mut rng);
            (a, b)
        }
    };
    let f_a: Vec<f64> = a.iter().map(|u| model(&space.decode(u))).collect();
    let f_b: Vec<f64> = b.iter().map(|u| model(&space.decode(u))).collect();

    let nn = (2 * n_base) as f64;
    let mean = (f_a.iter().sum::<f64>() + f_b.iter().sum::<f64>()) / nn;
    let variance = (f_a.iter().chain(&f_b).map(|v| (v - mean) * (v - mean)).sum::<f64>()) / nn;
    if variance <= 0.0 {
        return Err(Error::domain("model output has zero variance over the space"));
    }

    let mut main = Vec::with_capacity(d);
    let mut total = Vec::with_capacity(d);
    for i in 0..d {
        let f_ab: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(ra, rb)| {
                let mut u = ra.clone();
                u[i] = rb[i];
                model(&space.decode(&u))
            })
            .collect();
        let s_i = f_b
            .iter()
            .zip(f_ab.iter().zip(&f_a))
            .map(|(fb, (fab, fa))| fb * (fab - fa))
            .sum::<f64>()
            / n_base as f64
            / variance;
        let t_i = f_a
            .iter()
            .zip(&f_ab)
            .map(|(fa, fab)| (fa - fab) * (fa - fab))
            .sum::<f64>()
            / (2.0 * n_base as f64)
            / variance;
        main.push(s_i);
        total.push(t_i);
    }
    Ok(SobolReport {
        features: space.feature_names(),
        main,
        total,
        n_base,
        seed,
    })
}

/// Sensitivity of one pipeline stage's chained predictive mean over the
/// process-parameter box. Scan rotation appears as a categorical feature
/// only when the pipeline was trained with it.
pub fn stage_sensitivity(
    pipeline: &HierarchyPipeline,
    stage: Stage,
    ranges: &ParamRanges,
    n_base: usize,
    seed: u64,
) -> Result<SobolReport> {
    let space = FeatureSpace {
        quant: vec![
            ("power_w".into(), ranges.power_w),
            ("speed_mm_s".into(), ranges.speed_mm_s),
            ("layer_um".into(), ranges.layer_um),
            ("hatch_um".into(), ranges.hatch_um),
        ],
        cats: if pipeline.include_scan_rotation() {
            vec![("scan_rot".into(), 2)]
        } else {
            vec![]
        },
    };
    let model = |u: &MixedInput| -> f64 {
        let sr = match u.levels.first() {
            Some(1) => ScanRotation::Deg90,
            _ => ScanRotation::Deg67,
        };
        let params =
            ProcessParams::from_um(u.quant[0], u.quant[1], u.quant[2], u.quant[3], sr)
                .expect("bounds are positive");
        pipeline
            .predict_stage_mean(stage, std::slice::from_ref(&params))
            .expect("schema fixed by construction")[0]
    };
    sobol_indices(model, &space, n_base, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Schema;
    use approx::assert_relative_eq;

    #[test]
    fn metric_eq1_hand_values() {
        assert_eq!(metric_eq1(&[1.0, 2.0], &[1.0, 2.0], false).unwrap(), 0.0);
        assert_relative_eq!(
            metric_eq1(&[0.0, 0.0], &[3.0, 4.0], false).unwrap(),
            12.5f64.sqrt(),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            metric_eq1(&[0.0, 0.0], &[3.0, 4.0], true).unwrap(),
            12.5,
            max_relative = 1e-12
        );
        // homogeneity of the root form
        let base = metric_eq1(&[1.0, -2.0, 0.5], &[0.0, 1.0, 2.0], false).unwrap();
        let scaled = metric_eq1(&[3.0, -6.0, 1.5], &[0.0, 3.0, 6.0], false).unwrap();
        assert_relative_eq!(scaled, 3.0 * base, max_relative = 1e-12);
        assert!(metric_eq1(&[1.0], &[1.0, 2.0], false).is_err());
        assert!(metric_eq1(&[], &[], false).is_err());
    }

    #[test]
    fn r_squared_basics_and_oracle() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(r_squared(&y, &y).unwrap(), 1.0);
        assert_relative_eq!(r_squared(&y, &[2.5; 4]).unwrap(), 0.0, epsilon = 1e-15);
        assert!(r_squared(&[2.0, 2.0], &[1.0, 3.0]).is_err());

        // independent two-pass oracle on pseudo-random 20-point vectors
        let ys: Vec<f64> = (0..20).map(|i| ((i * 37 % 11) as f64).sin() * 3.0).collect();
        let yh: Vec<f64> = (0..20).map(|i| ((i * 13 % 7) as f64).cos() * 2.0).collect();
        let mean = ys.iter().sum::<f64>() / 20.0;
        let sst: f64 = ys.iter().map(|v| (v - mean).powi(2)).sum();
        let ssr: f64 = ys.iter().zip(&yh).map(|(a, b)| (a - b).powi(2)).sum();
        assert_relative_eq!(r_squared(&ys, &yh).unwrap(), 1.0 - ssr / sst, epsilon = 1e-12);
    }

    #[test]
    fn pearson_basics_and_oracle() {
        let x: Vec<f64> = (0..50).map(|i| ((i * 29 % 17) as f64) * 0.3 - 1.0).collect();
        let lin: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let m = pearson_matrix(&[
            ("x".into(), x.clone()),
            ("lin".into(), lin),
            ("neg".into(), neg),
        ])
        .unwrap();
        assert_relative_eq!(m[0][1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(m[0][2], -1.0, epsilon = 1e-12);
        assert_eq!(m[1][1], 1.0);
        assert_relative_eq!(m[1][2], m[2][1], epsilon = 1e-15);

        // covariance-formula oracle on an unrelated pair
        let y: Vec<f64> = (0..50).map(|i| ((i * 31 % 13) as f64).cos()).collect();
        let m = pearson_matrix(&[("x".into(), x.clone()), ("y".into(), y.clone())]).unwrap();
        let (mx, my) = (
            x.iter().sum::<f64>() / 50.0,
            y.iter().sum::<f64>() / 50.0,
        );
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / 50.0;
        let sx = (x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / 50.0).sqrt();
        let sy = (y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / 50.0).sqrt();
        assert_relative_eq!(m[0][1], cov / (sx * sy), epsilon = 1e-12);

        let err = pearson_matrix(&[("x".into(), x), ("flat".into(), vec![1.0; 50])]).unwrap_err();
        assert!(err.to_string().contains("flat"));
    }

    #[test]
    fn fold_assignment_shapes() {
        // leave-one-out
        let folds = fold_assignments(10, 10, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 1));
        // 270 rows into 5 folds of 54
        let folds = fold_assignments(270, 5, 0).unwrap();
        assert!(folds.iter().all(|f| f.len() == 54));
        // sizes differ by at most one, rows partitioned exactly once
        let folds = fold_assignments(23, 5, 7).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = folds.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert_eq!(fold_assignments(23, 5, 7).unwrap(), fold_assignments(23, 5, 7).unwrap());
        assert!(fold_assignments(4, 5, 0).is_err());
        assert!(fold_assignments(4, 1, 0).is_err());
    }

    fn noisy_line(n: usize, noise_sd: f64, seed: u64) -> MixedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = Schema::quantitative(&["x"]);
        let inputs: Vec<MixedInput> = (0..n)
            .map(|i| MixedInput::quantitative(vec![i as f64 / (n - 1) as f64]))
            .collect();
        let responses = inputs
            .iter()
            .map(|p| {
                let (u1, u2): (f64, f64) = (rng.gen(), rng.gen());
                let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                (3.0 * p.quant[0]).sin() + noise_sd * z
            })
            .collect();
        MixedDataset::new(schema, inputs, responses).unwrap()
    }

    #[test]
    fn kfold_cv_recovers_a_smooth_signal() {
        let data = noisy_line(40, 0.0, 5);
        let config = GpConfig { n_starts: 2, max_iters: 150, ..Default::default() };
        let report = kfold_cv(&data, 5, &config, 9).unwrap();
        assert_eq!(report.fold_metrics.len(), 5);
        assert!(report.failed_folds.is_empty());
        assert!(report.r_squared > 0.99, "R^2 = {}", report.r_squared);
        for m in report.fold_metrics.iter().flatten() {
            assert!(*m < 0.1, "fold metric {m}");
        }
        // bit-reproducible report
        let again = kfold_cv(&data, 5, &config, 9).unwrap();
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn noise_variance_straddles_injected_level() {
        // sin(3x) on [0,1] has sd ~ 0.29, so noise sd 0.066 injects a
        // standardized variance of ~0.05
        let data = noisy_line(80, 0.066, 3);
        let config = GpConfig {
            n_starts: 4,
            max_iters: 400,
            learning_rate: 0.1,
            omega_bounds: (-3.0, -0.3),
            ..Default::default()
        };
        let tau2 = estimate_noise_variance(&data, &config, 1).unwrap();
        assert!((0.02..0.1).contains(&tau2), "tau^2 = {tau2}");
    }

    fn unit_space(d: usize) -> FeatureSpace {
        FeatureSpace {
            quant: (0..d).map(|i| (format!("x{}", i + 1), (-1.0, 1.0))).collect(),
            cats: vec![],
        }
    }

    #[test]
    fn sobol_matches_closed_form_quadratic() {
        // y = x1^2 + x2^2 + x1 x2 + x3^2 + 1e-3 x4^2 on (-1,1)^4
        let f = |u: &MixedInput| {
            let x = &u.quant;
            x[0] * x[0] + x[1] * x[1] + x[0] * x[1] + x[2] * x[2] + 1e-3 * x[3] * x[3]
        };
        let report = sobol_indices(f, &unit_space(4), 8192, 0).unwrap();
        let main = [0.2353, 0.2353, 0.2353, 0.0009];
        let total = [0.5294, 0.5294, 0.2353, 0.0009];
        for i in 0..4 {
            assert!((report.main[i] - main[i]).abs() < 0.02, "main {:?}", report.main);
            assert!((report.total[i] - total[i]).abs() < 0.02, "total {:?}", report.total);
            assert!(report.total[i] >= report.main[i] - 0.02);
        }
        assert_eq!(report.negligible(0.05), vec!["x4".to_string()]);
    }

    #[test]
    fn sobol_additive_model_has_no_interactions() {
        let f = |u: &MixedInput| u.quant[0] + u.quant[1];
        let report = sobol_indices(f, &unit_space(2), 4096, 1).unwrap();
        for i in 0..2 {
            assert!((report.main[i] - report.total[i]).abs() < 0.02);
            assert!((report.main[i] - 0.5).abs() < 0.02);
        }
        assert!(report.main.iter().sum::<f64>() <= 1.02);
    }

    #[test]
    fn sobol_categorical_feature_dominates_when_it_drives_output() {
        let space = FeatureSpace {
            quant: vec![("x".into(), (0.0, 1.0))],
            cats: vec![("src".into(), 3)],
        };
        let f = |u: &MixedInput| u.levels[0] as f64;
        let report = sobol_indices(f, &space, 4096, 2).unwrap();
        assert!(report.main[1] > 0.95, "{:?}", report.main);
        assert!(report.total[0] < 0.02, "{:?}", report.total);

        let flat = sobol_indices(|_| 1.0, &space, 256, 0);
        assert!(flat.is_err());
    }

    #[test]
    fn sobol_is_seeded() {
        let f = |u: &MixedInput| u.quant[0].sin();
        let a = sobol_indices(f, &unit_space(1), 512, 9).unwrap();
        let b = sobol_indices(f, &unit_space(1), 512, 9).unwrap();
        assert_eq!(a.main, b.main);
        assert_eq!(a.total, b.total);
    }
}
