//! Mixed-input Gaussian-process regression with embedded categorical
//! features, configurable mean functions, and MAP training.

pub mod kernel;
pub mod mean;
mod objective;
mod optimizer;

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MixedDataset, MixedInput, Schema};
use crate::error::{Error, Result};
pub use mean::{eval_mean, EvalMode, MeanSpec};
pub use objective::{NUGGET_CEIL, NUGGET_FLOOR};
use objective::{Design, ParamLayout};

/// Training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub mean: MeanSpec,
    /// Latent dimension of the categorical embedding.
    pub embed_dim: usize,
    /// Independent optimizer restarts; the best final loss wins.
    pub n_starts: usize,
    pub max_iters: usize,
    pub learning_rate: f64,
    /// Box for the log10 kernel scales. Tightening the upper end forbids
    /// length scales short enough to interpolate observation noise.
    pub omega_bounds: (f64, f64),
    /// When set, output standardization constants are computed per level of
    /// this categorical variable (for fused outputs on different scales).
    pub source_output_cat: Option<String>,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            mean: MeanSpec::Constant,
            embed_dim: 2,
            n_starts: 8,
            max_iters: 200,
            learning_rate: 0.05,
            omega_bounds: (-3.0, 3.0),
            source_output_cat: None,
        }
    }
}

/// Affine standardization constants for one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub mean: f64,
    pub sd: f64,
}

impl ColumnScaler {
    fn from_values(values: impl Iterator<Item = f64> + Clone) -> ColumnScaler {
        let n = values.clone().count().max(1) as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        ColumnScaler { mean, sd }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.sd + self.mean
    }
}

/// Output standardization: one set of constants, or one per source level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutputScaler {
    Global(ColumnScaler),
    PerSource { cat: usize, by_level: Vec<ColumnScaler> },
}

impl OutputScaler {
    pub fn for_levels(&self, levels: &[usize]) -> ColumnScaler {
        match self {
            OutputScaler::Global(s) => *s,
            OutputScaler::PerSource { cat, by_level } => by_level[levels[*cat]],
        }
    }
}

/// Mean and standard deviation of the predictive distribution, in output
/// units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub sd: f64,
}

impl Prediction {
    pub fn variance(&self) -> f64 {
        self.sd * self.sd
    }
}

/// A trained emulator. Immutable after fitting; prediction is thread-safe.
pub struct GpModel {
    data: MixedDataset,
    config: GpConfig,
    input_scalers: Vec<ColumnScaler>,
    output_scaler: OutputScaler,
    omega: Vec<f64>,
    log_sigma2: f64,
    log_delta: f64,
    mapping: DMatrix<f64>,
    beta: Vec<f64>,
    // derived caches
    x_std: DMatrix<f64>,
    latent: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    delta_eff: f64,
    negative_variance_clamps: AtomicU64,
}

fn standardize_inputs(data: &MixedDataset, scalers: &[ColumnScaler]) -> DMatrix<f64> {
    DMatrix::from_fn(data.len(), data.schema.dx(), |i, j| {
        scalers[j].forward(data.inputs[i].quant[j])
    })
}

fn one_hot_matrix(data: &MixedDataset) -> DMatrix<f64> {
    let nlev = data.schema.total_levels();
    let mut pi = DMatrix::zeros(data.len(), nlev);
    for (i, input) in data.inputs.iter().enumerate() {
        let mut offset = 0;
        for (cat, &lvl) in data.schema.cats.iter().zip(&input.levels) {
            pi[(i, offset + lvl)] = 1.0;
            offset += cat.cardinality();
        }
    }
    pi
}

fn output_scaler_for(data: &MixedDataset, config: &GpConfig) -> Result<OutputScaler> {
    match &config.source_output_cat {
        None => Ok(OutputScaler::Global(ColumnScaler::from_values(
            data.responses.iter().copied(),
        ))),
        Some(name) => {
            let cat = data.schema.cat_index(name).ok_or_else(|| {
                Error::domain(format!("source output column `{name}` is not a categorical"))
            })?;
            let by_level = (0..data.schema.cats[cat].cardinality())
                .map(|lvl| {
                    let vals: Vec<f64> = data
                        .inputs
                        .iter()
                        .zip(&data.responses)
                        .filter(|(inp, _)| inp.levels[cat] == lvl)
                        .map(|(_, &y)| y)
                        .collect();
                    if vals.is_empty() {
                        ColumnScaler { mean: 0.0, sd: 1.0 }
                    } else {
                        ColumnScaler::from_values(vals.iter().copied())
                    }
                })
                .collect();
            Ok(OutputScaler::PerSource { cat, by_level })
        }
    }
}

impl GpModel {
    /// MAP training: the best of `n_starts` guarded gradient descents on the
    /// training loss. Deterministic given the seed.
    pub fn fit(data: &MixedDataset, config: &GpConfig, seed: u64) -> Result<GpModel> {
        if data.len() < 2 {
            return Err(Error::domain(format!(
                "training requires at least 2 points, got {}",
                data.len()
            )));
        }
        let input_scalers: Vec<ColumnScaler> = (0..data.schema.dx())
            .map(|j| ColumnScaler::from_values(data.inputs.iter().map(|r| r.quant[j])))
            .collect();
        let output_scaler = output_scaler_for(data, config)?;

        let x_std = standardize_inputs(data, &input_scalers);
        let pi = one_hot_matrix(data);
        let y_std = DVector::from_fn(data.len(), |i, _| {
            output_scaler.for_levels(&data.inputs[i].levels).forward(data.responses[i])
        });

        let dh = if data.schema.dt() > 0 { config.embed_dim } else { 0 };
        if data.schema.dt() > 0 && (dh == 0 || dh >= data.schema.total_levels()) {
            return Err(Error::domain(format!(
                "embedding dimension must satisfy 1 <= dh < total levels ({}), got {dh}",
                data.schema.total_levels()
            )));
        }
        let layout = ParamLayout {
            dx: data.schema.dx(),
            nlev: data.schema.total_levels(),
            dh,
            n_beta: config.mean.param_count(data.schema.dx(), dh),
        };
        let design = Design::new(x_std.clone(), pi, y_std);

        let adam = optimizer::AdamConfig {
            learning_rate: config.learning_rate,
            max_iters: config.max_iters,
            ..Default::default()
        };
        // flat priors on a box: keeps the search off the flat-kernel ridge
        // (omega -> -inf, sigma^2 -> inf) where interpolation accuracy dies
        if config.omega_bounds.0 >= config.omega_bounds.1 {
            return Err(Error::domain("kernel scale bounds must satisfy lo < hi"));
        }
        let mut bounds: Vec<(f64, f64)> = Vec::with_capacity(layout.len());
        bounds.extend(std::iter::repeat(config.omega_bounds).take(layout.dx));
        bounds.push((-10.0, 10.0)); // log sigma^2
        bounds.push(((1e-10f64).ln(), 0.0)); // log delta
        bounds.extend(std::iter::repeat((-5.0, 5.0)).take(layout.nlev * layout.dh));
        bounds.extend(std::iter::repeat((f64::NEG_INFINITY, f64::INFINITY)).take(layout.n_beta));
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut failures = 0;
        for start in 0..config.n_starts.max(1) {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(start as u64),
            );
            let x0 = init_params(&layout, &config.mean, &mut rng);
            let result = optimizer::minimize(
                |p| objective::evaluate_with_grad(&design, &layout, p, &config.mean),
                |p| objective::evaluate(&design, &layout, p, &config.mean).map(|e| e.loss),
                &x0,
                Some(&bounds),
                &adam,
            );
            match result {
                Some(r) if best.as_ref().map_or(true, |(l, _)| r.loss < *l) => {
                    best = Some((r.loss, r.x));
                }
                Some(_) => {}
                None => failures += 1,
            }
        }
        let (_, params) = best.ok_or_else(|| {
            Error::numeric(format!(
                "all {failures} optimizer starts failed factorization (n = {}, nugget ceiling {NUGGET_CEIL})",
                data.len()
            ))
        })?;
        Self::assemble_from_layout(data.clone(), config.clone(), input_scalers, output_scaler, &layout, &params)
    }

    /// Builds a model from explicit parameters (deserialization, closed-form
    /// test fixtures). Re-derives the factorization.
    pub fn assemble(
        data: MixedDataset,
        config: GpConfig,
        input_scalers: Vec<ColumnScaler>,
        output_scaler: OutputScaler,
        omega: Vec<f64>,
        log_sigma2: f64,
        log_delta: f64,
        mapping: DMatrix<f64>,
        beta: Vec<f64>,
    ) -> Result<GpModel> {
        let dh = mapping.ncols();
        let layout = ParamLayout {
            dx: data.schema.dx(),
            nlev: data.schema.total_levels(),
            dh,
            n_beta: beta.len(),
        };
        let mut params = Vec::with_capacity(layout.len());
        params.extend_from_slice(&omega);
        params.push(log_sigma2);
        params.push(log_delta);
        params.extend(mapping.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()));
        params.extend_from_slice(&beta);
        Self::assemble_from_layout(data, config, input_scalers, output_scaler, &layout, &params)
    }

    fn assemble_from_layout(
        data: MixedDataset,
        config: GpConfig,
        input_scalers: Vec<ColumnScaler>,
        output_scaler: OutputScaler,
        layout: &ParamLayout,
        params: &[f64],
    ) -> Result<GpModel> {
        let x_std = standardize_inputs(&data, &input_scalers);
        let pi = one_hot_matrix(&data);
        let y_std = DVector::from_fn(data.len(), |i, _| {
            output_scaler.for_levels(&data.inputs[i].levels).forward(data.responses[i])
        });
        let design = Design::new(x_std.clone(), pi, y_std);
        let ev = objective::evaluate(&design, layout, params, &config.mean).ok_or_else(|| {
            Error::numeric("covariance factorization failed at the fitted parameters")
        })?;
        Ok(GpModel {
            omega: layout.omega(params).to_vec(),
            log_sigma2: layout.log_sigma2(params),
            log_delta: layout.log_delta(params),
            mapping: layout.mapping(params),
            beta: layout.beta(params).to_vec(),
            latent: ev.latent,
            chol: ev.chol,
            alpha: ev.alpha,
            delta_eff: ev.delta_eff,
            x_std,
            data,
            config,
            input_scalers,
            output_scaler,
            negative_variance_clamps: AtomicU64::new(0),
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.data.schema
    }

    pub fn config(&self) -> &GpConfig {
        &self.config
    }

    pub fn training_data(&self) -> &MixedDataset {
        &self.data
    }

    /// Fitted nugget (standardized output scale), after the floor.
    pub fn nugget(&self) -> f64 {
        self.delta_eff
    }

    pub fn process_variance(&self) -> f64 {
        self.log_sigma2.exp()
    }

    pub fn kernel_scales(&self) -> &[f64] {
        &self.omega
    }

    pub fn embedding_matrix(&self) -> &DMatrix<f64> {
        &self.mapping
    }

    pub fn output_scaler(&self) -> &OutputScaler {
        &self.output_scaler
    }

    /// Times prediction variance was clamped up to zero.
    pub fn negative_variance_clamps(&self) -> u64 {
        self.negative_variance_clamps.load(Ordering::Relaxed)
    }

    fn standardize_point(&self, input: &MixedInput) -> Result<(Vec<f64>, Vec<f64>)> {
        if input.quant.len() != self.data.schema.dx() {
            return Err(Error::domain(format!(
                "expected {} quantitative inputs, got {}",
                self.data.schema.dx(),
                input.quant.len()
            )));
        }
        self.data.schema.check_levels(&input.levels)?;
        let x: Vec<f64> = input
            .quant
            .iter()
            .zip(&self.input_scalers)
            .map(|(&v, s)| s.forward(v))
            .collect();
        let h = kernel::embed_levels(&input.levels, &self.data.schema, &self.mapping)?;
        Ok((x, h))
    }

    /// Predictive mean and variance on the standardized output scale.
    pub fn predict_standardized(&self, input: &MixedInput) -> Result<(f64, f64)> {
        let (x, h) = self.standardize_point(input)?;
        let n = self.data.len();
        let sigma2 = self.process_variance();
        let k = DVector::from_fn(n, |i, _| {
            let xi: Vec<f64> = self.x_std.row(i).iter().copied().collect();
            let hi: Vec<f64> = self.latent.row(i).iter().copied().collect();
            sigma2 * kernel::correlation(&x, &xi, &h, &hi, &self.omega)
        });
        let m = eval_mean(&self.config.mean, &self.beta, &x, &h, EvalMode::Infer, None);
        let mean = m + k.dot(&self.alpha);
        let cinv_k = self.chol.solve(&k);
        let mut var = sigma2 + self.delta_eff - k.dot(&cinv_k);
        if var < 0.0 {
            self.negative_variance_clamps.fetch_add(1, Ordering::Relaxed);
            var = 0.0;
        }
        Ok((mean, var))
    }

    /// Batch prediction in output units.
    pub fn predict(&self, inputs: &[MixedInput]) -> Result<Vec<Prediction>> {
        inputs
            .iter()
            .map(|input| {
                let (mean, var) = self.predict_standardized(input)?;
                let scaler = self.output_scaler.for_levels(&input.levels);
                Ok(Prediction {
                    mean: scaler.inverse(mean),
                    sd: var.sqrt() * scaler.sd,
                })
            })
            .collect()
    }
}

fn init_params(layout: &ParamLayout, mean: &MeanSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut p = Vec::with_capacity(layout.len());
    for _ in 0..layout.dx {
        p.push(rng.gen_range(-1.5..0.5));
    }
    p.push(rng.gen_range(-0.3..0.3)); // log sigma^2, data standardized
    p.push((1e-3f64).ln() + rng.gen_range(-1.0..1.0)); // log delta
    for _ in 0..layout.nlev * layout.dh {
        p.push(rng.gen_range(-1.0..1.0));
    }
    p.extend(mean.init_params(layout.dx, layout.dh, rng));
    p
}

// ---------------------------------------------------------------------------
// serialization

/// On-disk form of a trained model, version `gpmodel_v1`. The factorization
/// is re-derived on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpModelDoc {
    pub version: String,
    pub data: MixedDataset,
    pub config: GpConfig,
    pub input_scalers: Vec<ColumnScaler>,
    pub output_scaler: OutputScaler,
    pub omega: Vec<f64>,
    pub log_sigma2: f64,
    pub log_delta: f64,
    /// Row-major, (total levels) x dh.
    pub mapping: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
}

pub const GPMODEL_VERSION: &str = "gpmodel_v1";

impl GpModel {
    pub fn to_doc(&self) -> GpModelDoc {
        GpModelDoc {
            version: GPMODEL_VERSION.to_string(),
            data: self.data.clone(),
            config: self.config.clone(),
            input_scalers: self.input_scalers.clone(),
            output_scaler: self.output_scaler.clone(),
            omega: self.omega.clone(),
            log_sigma2: self.log_sigma2,
            log_delta: self.log_delta,
            mapping: self
                .mapping
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            beta: self.beta.clone(),
        }
    }

    pub fn from_doc(doc: GpModelDoc) -> Result<GpModel> {
        if doc.version != GPMODEL_VERSION {
            return Err(Error::data(format!(
                "unsupported model version `{}` (expected {GPMODEL_VERSION})",
                doc.version
            )));
        }
        let nlev = doc.data.schema.total_levels();
        let dh = doc.mapping.first().map_or(0, |r| r.len());
        let flat: Vec<f64> = doc.mapping.iter().flatten().copied().collect();
        if flat.len() != nlev * dh {
            return Err(Error::data("mapping matrix shape does not match schema"));
        }
        let mapping = DMatrix::from_row_slice(nlev, dh, &flat);
        GpModel::assemble(
            doc.data,
            doc.config,
            doc.input_scalers,
            doc.output_scaler,
            doc.omega,
            doc.log_sigma2,
            doc.log_delta,
            mapping,
            doc.beta,
        )
    }
}
