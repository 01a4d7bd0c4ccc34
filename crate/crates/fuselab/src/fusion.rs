//! Multi-source dataset fusion by source-indicator augmentation and the
//! four-stage hierarchical pipeline: hardness, engineered porosity, fused
//! yield strength, fused ductility.
//!
//! Downstream stages consume only *predicted* upstream features; the public
//! interface offers no way to wire measured hardness into later stages.

use serde::{Deserialize, Serialize};

use crate::data::{CatVar, MixedDataset, MixedInput, Schema};
use crate::domain::{CuboidRecord, ProcessParams, TensileRecord};
use crate::error::{Error, Result};
use crate::gp::{GpConfig, GpModel, GpModelDoc, MeanSpec, Prediction};

/// Name of the categorical column added by [`fuse`].
pub const SOURCE_COLUMN: &str = "source";

/// Hardness-amplified porosity feature: h * exp(p). Strictly increasing in
/// both arguments; a porosity gap of 1e-5 at h ~ 400 moves the output by
/// ~4e-3, well above a 1e-3 resolution threshold.
pub fn engineered_porosity(hardness_pred: f64, porosity: f64) -> f64 {
    hardness_pred * porosity.exp()
}

/// Row-concatenates tagged datasets and appends a `source` categorical with
/// one level per tag. Row order is dataset order, then original row order.
pub fn fuse(datasets: &[(String, MixedDataset)]) -> Result<MixedDataset> {
    if datasets.len() < 2 {
        return Err(Error::domain(format!(
            "fusion requires at least 2 datasets, got {}",
            datasets.len()
        )));
    }
    for (i, (tag, _)) in datasets.iter().enumerate() {
        if datasets[..i].iter().any(|(t, _)| t == tag) {
            return Err(Error::domain(format!("duplicate source tag `{tag}`")));
        }
    }
    let base = &datasets[0].1.schema;
    if base.cats.iter().any(|c| c.name == SOURCE_COLUMN) {
        return Err(Error::domain(format!(
            "schema already contains a `{SOURCE_COLUMN}` column"
        )));
    }
    for (tag, ds) in &datasets[1..] {
        if ds.schema != *base {
            let mismatched: Vec<&str> = ds
                .schema
                .quant
                .iter()
                .filter(|c| !base.quant.contains(c))
                .chain(base.quant.iter().filter(|c| !ds.schema.quant.contains(c)))
                .map(|s| s.as_str())
                .collect();
            return Err(Error::domain(format!(
                "schema of dataset `{tag}` conflicts with `{}` (mismatched columns: [{}])",
                datasets[0].0,
                mismatched.join(", ")
            )));
        }
    }
    let schema = base.clone().with_cat(CatVar::new(
        SOURCE_COLUMN,
        datasets.iter().map(|(t, _)| t.clone()).collect(),
    ));
    let mut inputs = Vec::new();
    let mut responses = Vec::new();
    for (level, (_, ds)) in datasets.iter().enumerate() {
        for (input, &y) in ds.inputs.iter().zip(&ds.responses) {
            let mut levels = input.levels.clone();
            levels.push(level);
            inputs.push(MixedInput::new(input.quant.clone(), levels));
            responses.push(y);
        }
    }
    MixedDataset::new(schema, inputs, responses)
}

/// Training settings shared by the four stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    /// Re-enables the scan-rotation input dropped by sensitivity screening.
    pub include_scan_rotation: bool,
    pub embed_dim: usize,
    pub n_starts: usize,
    pub max_iters: usize,
    pub learning_rate: f64,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            include_scan_rotation: false,
            embed_dim: 2,
            n_starts: 4,
            max_iters: 250,
            learning_rate: 0.1,
        }
    }
}

impl HierarchyConfig {
    fn stage_config(&self, mean: MeanSpec, fused: bool, schema: &Schema) -> GpConfig {
        let total = schema.total_levels();
        GpConfig {
            mean,
            embed_dim: if total > 1 { self.embed_dim.min(total - 1) } else { self.embed_dim },
            n_starts: self.n_starts,
            max_iters: self.max_iters,
            learning_rate: self.learning_rate,
            source_output_cat: if fused { Some(SOURCE_COLUMN.to_string()) } else { None },
            ..GpConfig::default()
        }
    }
}

/// One of the four pipeline stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Hardness,
    EngineeredPorosity,
    YieldStrength,
    Ductility,
}

/// Chained predictions for one parameter combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensilePrediction {
    pub yield_strength: Prediction,
    pub ductility: Prediction,
    /// Predicted hardness feeding the downstream stages.
    pub hardness_hat: f64,
    /// Predicted engineered porosity.
    pub ep_hat: f64,
}

/// The trained four-stage pipeline. Stages are wired H -> EP -> sigmaY -> ef
/// at construction; downstream stages see only predicted upstream features.
pub struct HierarchyPipeline {
    gp_h: GpModel,
    gp_ep: GpModel,
    gp_ys: GpModel,
    gp_ef: GpModel,
    include_scan_rotation: bool,
}

impl std::fmt::Debug for HierarchyPipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HierarchyPipeline")
            .field("include_scan_rotation", &self.include_scan_rotation)
            .finish_non_exhaustive()
    }
}


const PARAM_COLUMNS: [&str; 4] = ["power_w", "speed_mm_s", "layer_um", "hatch_um"];
const SCAN_ROT_COLUMN: &str = "scan_rot";

fn params_schema(extra: &[&str], include_sr: bool) -> Schema {
    let mut cols: Vec<&str> = PARAM_COLUMNS.to_vec();
    cols.extend_from_slice(extra);
    let schema = Schema::quantitative(&cols);
    if include_sr {
        schema.with_cat(CatVar::new(SCAN_ROT_COLUMN, vec!["67".into(), "90".into()]))
    } else {
        schema
    }
}

fn params_input(p: &ProcessParams, extra: &[f64], include_sr: bool) -> MixedInput {
    let mut quant = p.quant_features().to_vec();
    quant.extend_from_slice(extra);
    let levels = if include_sr { vec![p.scan_rotation.level()] } else { vec![] };
    MixedInput::new(quant, levels)
}

/// Predicts with the source level appended to the categorical indices.
fn fused_input(p: &ProcessParams, extra: &[f64], include_sr: bool, source: usize) -> MixedInput {
    let mut input = params_input(p, extra, include_sr);
    input.levels.push(source);
    input
}

fn stage_err(stage: &str, e: Error) -> Error {
    Error::numeric(format!("stage {stage}: {e}"))
}

/// Trains the four stages in order. Feature augmentation always uses the
/// predictions of the already-trained upstream stages, never measurements.
pub fn train_hierarchy(
    cuboids: &[CuboidRecord],
    tensile: &[TensileRecord],
    config: &HierarchyConfig,
    seed: u64,
) -> Result<HierarchyPipeline> {
    if cuboids.is_empty() {
        return Err(Error::domain("stage GP_H: no cuboid records"));
    }
    if tensile.is_empty() {
        return Err(Error::domain("stage GP_sigmaY: no tensile records (fusion source missing)"));
    }
    let sr = config.include_scan_rotation;

    // stage 1: process parameters -> hardness
    let schema_h = params_schema(&[], sr);
    let data_h = MixedDataset::new(
        schema_h.clone(),
        cuboids.iter().map(|r| params_input(&r.params, &[], sr)).collect(),
        cuboids.iter().map(|r| r.hardness_hv).collect(),
    )?;
    let gp_h = GpModel::fit(&data_h, &config.stage_config(MeanSpec::Constant, false, &schema_h), seed)
        .map_err(|e| stage_err("GP_H", e))?;

    // stage 2: (parameters, predicted hardness) -> engineered porosity
    let h_hat_cuboid: Vec<f64> = gp_h
        .predict(&data_h.inputs)?
        .into_iter()
        .map(|p| p.mean)
        .collect();
    let schema_ep = params_schema(&["h_hat"], sr);
    let data_ep = MixedDataset::new(
        schema_ep.clone(),
        cuboids
            .iter()
            .zip(&h_hat_cuboid)
            .map(|(r, &h)| params_input(&r.params, &[h], sr))
            .collect(),
        cuboids
            .iter()
            .zip(&h_hat_cuboid)
            .map(|(r, &h)| engineered_porosity(h, r.porosity))
            .collect(),
    )?;
    let gp_ep = GpModel::fit(
        &data_ep,
        &config.stage_config(MeanSpec::Constant, false, &schema_ep),
        seed.wrapping_add(1),
    )
    .map_err(|e| stage_err("GP_EP", e))?;

    let ep_hat_cuboid: Vec<f64> = gp_ep
        .predict(&data_ep.inputs)?
        .into_iter()
        .map(|p| p.mean)
        .collect();
    let tensile_params: Vec<ProcessParams> = tensile.iter().map(|r| r.params).collect();
    let (h_hat_tensile, ep_hat_tensile) = predict_features(&gp_h, &gp_ep, &tensile_params, sr)?;

    // stage 3: fused (parameters, h_hat, ep_hat) -> {dummy hardness | sigma_Y}
    let schema_ys = params_schema(&["h_hat", "ep_hat"], sr);
    let cuboid_rows = MixedDataset::new(
        schema_ys.clone(),
        cuboids
            .iter()
            .zip(h_hat_cuboid.iter().zip(&ep_hat_cuboid))
            .map(|(r, (&h, &ep))| params_input(&r.params, &[h, ep], sr))
            .collect(),
        cuboids.iter().map(|r| r.hardness_hv).collect(),
    )?;
    let tensile_rows = MixedDataset::new(
        schema_ys,
        tensile
            .iter()
            .zip(h_hat_tensile.iter().zip(&ep_hat_tensile))
            .map(|(r, (&h, &ep))| params_input(&r.params, &[h, ep], sr))
            .collect(),
        tensile.iter().map(|r| r.yield_mpa).collect(),
    )?;
    let fused_ys = fuse(&[
        ("h".to_string(), cuboid_rows),
        ("ys".to_string(), tensile_rows),
    ])?;
    let gp_ys = GpModel::fit(
        &fused_ys,
        &config.stage_config(MeanSpec::ffnn_3x2(), true, &fused_ys.schema),
        seed.wrapping_add(2),
    )
    .map_err(|e| stage_err("GP_sigmaY", e))?;

    // stage 4: fused (parameters, h_hat, ep_hat, ys_hat) -> {dummy hardness | ef}
    let ys_hat_cuboid: Vec<f64> = predict_ys(&gp_ys, cuboids.iter().map(|r| r.params), &h_hat_cuboid, &ep_hat_cuboid, sr)?;
    let ys_hat_tensile: Vec<f64> =
        predict_ys(&gp_ys, tensile_params.iter().copied(), &h_hat_tensile, &ep_hat_tensile, sr)?;
    let schema_ef = params_schema(&["h_hat", "ep_hat", "ys_hat"], sr);
    let cuboid_rows = MixedDataset::new(
        schema_ef.clone(),
        cuboids
            .iter()
            .enumerate()
            .map(|(i, r)| {
                params_input(&r.params, &[h_hat_cuboid[i], ep_hat_cuboid[i], ys_hat_cuboid[i]], sr)
            })
            .collect(),
        cuboids.iter().map(|r| r.hardness_hv).collect(),
    )?;
    let tensile_rows = MixedDataset::new(
        schema_ef,
        tensile
            .iter()
            .enumerate()
            .map(|(i, r)| {
                params_input(&r.params, &[h_hat_tensile[i], ep_hat_tensile[i], ys_hat_tensile[i]], sr)
            })
            .collect(),
        tensile.iter().map(|r| r.ductility_pct).collect(),
    )?;
    let fused_ef = fuse(&[
        ("h".to_string(), cuboid_rows),
        ("ef".to_string(), tensile_rows),
    ])?;
    let gp_ef = GpModel::fit(
        &fused_ef,
        &config.stage_config(MeanSpec::ffnn_2x2(), true, &fused_ef.schema),
        seed.wrapping_add(3),
    )
    .map_err(|e| stage_err("GP_ef", e))?;

    Ok(HierarchyPipeline {
        gp_h,
        gp_ep,
        gp_ys,
        gp_ef,
        include_scan_rotation: sr,
    })
}

fn predict_features(
    gp_h: &GpModel,
    gp_ep: &GpModel,
    params: &[ProcessParams],
    sr: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let h_inputs: Vec<MixedInput> = params.iter().map(|p| params_input(p, &[], sr)).collect();
    let h_hat: Vec<f64> = gp_h.predict(&h_inputs)?.into_iter().map(|p| p.mean).collect();
    let ep_inputs: Vec<MixedInput> = params
        .iter()
        .zip(&h_hat)
        .map(|(p, &h)| params_input(p, &[h], sr))
        .collect();
    let ep_hat: Vec<f64> = gp_ep.predict(&ep_inputs)?.into_iter().map(|p| p.mean).collect();
    Ok((h_hat, ep_hat))
}

fn predict_ys(
    gp_ys: &GpModel,
    params: impl Iterator<Item = ProcessParams>,
    h_hat: &[f64],
    ep_hat: &[f64],
    sr: bool,
) -> Result<Vec<f64>> {
    let inputs: Vec<MixedInput> = params
        .zip(h_hat.iter().zip(ep_hat))
        .map(|(p, (&h, &ep))| fused_input(&p, &[h, ep], sr, 1))
        .collect();
    Ok(gp_ys.predict(&inputs)?.into_iter().map(|p| p.mean).collect())
}

impl HierarchyPipeline {
    /// Chains the stages: h_hat, ep_hat, then sigma_Y and ef at their real
    /// source levels. Upstream uncertainty is not propagated; reported sds
    /// are the per-stage predictive standard deviations.
    pub fn predict_tensile(&self, params: &[ProcessParams]) -> Result<Vec<TensilePrediction>> {
        let sr = self.include_scan_rotation;
        let (h_hat, ep_hat) = predict_features(&self.gp_h, &self.gp_ep, params, sr)?;
        let ys_inputs: Vec<MixedInput> = params
            .iter()
            .zip(h_hat.iter().zip(&ep_hat))
            .map(|(p, (&h, &ep))| fused_input(p, &[h, ep], sr, 1))
            .collect();
        let ys = self.gp_ys.predict(&ys_inputs)?;
        let ef_inputs: Vec<MixedInput> = params
            .iter()
            .enumerate()
            .map(|(i, p)| fused_input(p, &[h_hat[i], ep_hat[i], ys[i].mean], sr, 1))
            .collect();
        let ef = self.gp_ef.predict(&ef_inputs)?;
        Ok((0..params.len())
            .map(|i| TensilePrediction {
                yield_strength: ys[i],
                ductility: ef[i],
                hardness_hat: h_hat[i],
                ep_hat: ep_hat[i],
            })
            .collect())
    }

    /// Chained predictive mean of one stage's output as a function of the
    /// process parameters alone (used by sensitivity analysis).
    pub fn predict_stage_mean(&self, stage: Stage, params: &[ProcessParams]) -> Result<Vec<f64>> {
        let sr = self.include_scan_rotation;
        match stage {
            Stage::Hardness => {
                let inputs: Vec<MixedInput> =
                    params.iter().map(|p| params_input(p, &[], sr)).collect();
                Ok(self.gp_h.predict(&inputs)?.into_iter().map(|p| p.mean).collect())
            }
            Stage::EngineeredPorosity => {
                Ok(predict_features(&self.gp_h, &self.gp_ep, params, sr)?.1)
            }
            Stage::YieldStrength => Ok(self
                .predict_tensile(params)?
                .into_iter()
                .map(|p| p.yield_strength.mean)
                .collect()),
            Stage::Ductility => Ok(self
                .predict_tensile(params)?
                .into_iter()
                .map(|p| p.ductility.mean)
                .collect()),
        }
    }

    pub fn include_scan_rotation(&self) -> bool {
        self.include_scan_rotation
    }

    pub fn gp_hardness(&self) -> &GpModel {
        &self.gp_h
    }

    pub fn gp_engineered_porosity(&self) -> &GpModel {
        &self.gp_ep
    }

    /// The fused strength stage. Predictions at source level 0 come from the
    /// dummy-hardness rows and are not physical yield strengths.
    pub fn gp_yield(&self) -> &GpModel {
        &self.gp_ys
    }

    /// The fused ductility stage; the same dummy-level caveat applies.
    pub fn gp_ductility(&self) -> &GpModel {
        &self.gp_ef
    }

    pub fn to_doc(&self) -> PipelineDoc {
        PipelineDoc {
            version: PIPELINE_VERSION.to_string(),
            include_scan_rotation: self.include_scan_rotation,
            gp_h: self.gp_h.to_doc(),
            gp_ep: self.gp_ep.to_doc(),
            gp_ys: self.gp_ys.to_doc(),
            gp_ef: self.gp_ef.to_doc(),
        }
    }

    pub fn from_doc(doc: PipelineDoc) -> Result<HierarchyPipeline> {
        if doc.version != PIPELINE_VERSION {
            return Err(Error::data(format!(
                "unsupported pipeline version `{}` (expected {PIPELINE_VERSION})",
                doc.version
            )));
        }
        let sr = doc.include_scan_rotation;
        let pipeline = HierarchyPipeline {
            gp_h: GpModel::from_doc(doc.gp_h)?,
            gp_ep: GpModel::from_doc(doc.gp_ep)?,
            gp_ys: GpModel::from_doc(doc.gp_ys)?,
            gp_ef: GpModel::from_doc(doc.gp_ef)?,
            include_scan_rotation: sr,
        };
        // the wiring is fixed; reject documents whose stage schemas cannot
        // have been produced by train_hierarchy
        let expect = [
            (pipeline.gp_h.schema(), params_schema(&[], sr), "GP_H"),
            (pipeline.gp_ep.schema(), params_schema(&["h_hat"], sr), "GP_EP"),
            (
                pipeline.gp_ys.schema(),
                params_schema(&["h_hat", "ep_hat"], sr).with_cat(CatVar::new(
                    SOURCE_COLUMN,
                    vec!["h".into(), "ys".into()],
                )),
                "GP_sigmaY",
            ),
            (
                pipeline.gp_ef.schema(),
                params_schema(&["h_hat", "ep_hat", "ys_hat"], sr).with_cat(CatVar::new(
                    SOURCE_COLUMN,
                    vec!["h".into(), "ef".into()],
                )),
                "GP_ef",
            ),
        ];
        for (got, want, stage) in expect {
            if *got != want {
                return Err(Error::data(format!(
                    "stage {stage} schema does not match the pipeline wiring"
                )));
            }
        }
        Ok(pipeline)
    }
}

/// On-disk form of a trained pipeline, version `pipeline_v1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineDoc {
    pub version: String,
    pub include_scan_rotation: bool,
    pub gp_h: GpModelDoc,
    pub gp_ep: GpModelDoc,
    pub gp_ys: GpModelDoc,
    pub gp_ef: GpModelDoc,
}

pub const PIPELINE_VERSION: &str = "pipeline_v1";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{generate_doe, ParamRanges};
    use approx::assert_relative_eq;

    #[test]
    fn engineered_porosity_values() {
        assert_eq!(engineered_porosity(400.0, 0.0), 400.0);
        assert_relative_eq!(engineered_porosity(400.0, 0.01), 404.0200668, max_relative = 1e-9);
        // a 1e-5 porosity gap at h ~ 400 stays resolvable above 1e-3
        let gap = engineered_porosity(400.0, 0.02 + 1e-5) - engineered_porosity(400.0, 0.02);
        assert!(gap > 1e-3);
        assert!(engineered_porosity(401.0, 0.02) > engineered_porosity(400.0, 0.02));
    }

    fn toy_dataset(n: usize, shift: f64) -> MixedDataset {
        let schema = Schema::quantitative(&["a", "b"]);
        let inputs: Vec<MixedInput> = (0..n)
            .map(|i| MixedInput::quantitative(vec![i as f64, shift + i as f64 * 0.5]))
            .collect();
        let responses = (0..n).map(|i| shift + i as f64).collect();
        MixedDataset::new(schema, inputs, responses).unwrap()
    }

    #[test]
    fn fuse_concatenates_and_tags() {
        let a = toy_dataset(5, 0.0);
        let b = toy_dataset(3, 10.0);
        let fused = fuse(&[("h".into(), a.clone()), ("ys".into(), b.clone())]).unwrap();
        assert_eq!(fused.len(), 8);
        let src = fused.schema.cat_index(SOURCE_COLUMN).unwrap();
        assert_eq!(fused.schema.cats[src].cardinality(), 2);
        // row order: dataset order, then original order
        assert_eq!(fused.responses[..5], a.responses[..]);
        assert_eq!(fused.responses[5..], b.responses[..]);
        // un-fuse by filtering recovers the originals
        let back = fused.filter_by_level(src, 1);
        assert_eq!(back.responses, b.responses);
        for (got, want) in back.inputs.iter().zip(&b.inputs) {
            assert_eq!(got.quant, want.quant);
        }
    }

    #[test]
    fn fuse_with_self_doubles_rows() {
        let a = toy_dataset(4, 0.0);
        let fused = fuse(&[("x".into(), a.clone()), ("y".into(), a.clone())]).unwrap();
        assert_eq!(fused.len(), 8);
    }

    #[test]
    fn fuse_rejects_conflicts() {
        let a = toy_dataset(4, 0.0);
        let mut b = toy_dataset(4, 0.0);
        b.schema.quant[1] = "c".into();
        let err = fuse(&[("h".into(), a.clone()), ("ys".into(), b)]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('c') && msg.contains('b'), "{msg}");
        assert!(fuse(&[("h".into(), a.clone())]).is_err());
        assert!(fuse(&[("h".into(), a.clone()), ("h".into(), a)]).is_err());
    }

    fn tiny_campaign() -> (Vec<CuboidRecord>, Vec<TensileRecord>) {
        let params = generate_doe(24, &ParamRanges::campaign(), 0, false).unwrap();
        let cuboids: Vec<CuboidRecord> = params
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let ved = crate::domain::compute_ved(&p).unwrap();
                let h = 350.0 + 60.0 * (-((ved - 150.0) / 80.0).powi(2)).exp();
                let por = 0.05 * (-(ved / 120.0)).exp();
                CuboidRecord::new(i as u32, p, por, h).unwrap()
            })
            .collect();
        let tensile: Vec<TensileRecord> = cuboids
            .iter()
            .take(10)
            .map(|c| {
                let ys = 2.6 * c.hardness_hv - 20.0;
                TensileRecord::new(c.id, c.params, ys, ys + 150.0, 14.0 - 0.004 * ys, None)
                    .unwrap()
            })
            .collect();
        (cuboids, tensile)
    }

    fn quick_hierarchy() -> HierarchyConfig {
        HierarchyConfig { n_starts: 2, max_iters: 60, ..Default::default() }
    }

    #[test]
    fn trains_and_predicts_end_to_end() {
        let (cuboids, tensile) = tiny_campaign();
        let pipeline = train_hierarchy(&cuboids, &tensile, &quick_hierarchy(), 11).unwrap();
        let probe: Vec<ProcessParams> = tensile.iter().map(|r| r.params).take(3).collect();
        let preds = pipeline.predict_tensile(&probe).unwrap();
        assert_eq!(preds.len(), 3);
        for p in &preds {
            assert!(p.yield_strength.mean.is_finite() && p.yield_strength.sd >= 0.0);
            assert!(p.ductility.mean.is_finite() && p.ductility.sd >= 0.0);
            assert!(p.hardness_hat > 0.0 && p.ep_hat > 0.0);
        }
        assert!(pipeline.predict_tensile(&[]).unwrap().is_empty());
        // fused stages see n_cuboid + n_tensile rows
        assert_eq!(pipeline.gp_yield().training_data().len(), cuboids.len() + tensile.len());
    }

    #[test]
    fn cuboid_only_input_fails_with_stage_name() {
        let (cuboids, _) = tiny_campaign();
        let err = train_hierarchy(&cuboids, &[], &quick_hierarchy(), 0).unwrap_err();
        assert!(err.to_string().contains("GP_sigmaY"), "{err}");
        let err = train_hierarchy(&[], &[], &quick_hierarchy(), 0).unwrap_err();
        assert!(err.to_string().contains("GP_H"), "{err}");
    }

    #[test]
    fn pipeline_roundtrips_through_json() {
        let (cuboids, tensile) = tiny_campaign();
        let pipeline = train_hierarchy(&cuboids, &tensile, &quick_hierarchy(), 4).unwrap();
        let json = serde_json::to_string(&pipeline.to_doc()).unwrap();
        let restored = HierarchyPipeline::from_doc(serde_json::from_str(&json).unwrap()).unwrap();
        let probe = [tensile[0].params, cuboids[20].params];
        let a = pipeline.predict_tensile(&probe).unwrap();
        let b = restored.predict_tensile(&probe).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x.yield_strength.mean, y.yield_strength.mean, epsilon = 1e-10);
            assert_relative_eq!(x.ductility.sd, y.ductility.sd, epsilon = 1e-10);
        }
    }

    #[test]
    fn from_doc_rejects_rewired_stages() {
        let (cuboids, tensile) = tiny_campaign();
        let pipeline = train_hierarchy(&cuboids, &tensile, &quick_hierarchy(), 4).unwrap();
        let mut doc = pipeline.to_doc();
        std::mem::swap(&mut doc.gp_h, &mut doc.gp_ep);
        let err = HierarchyPipeline::from_doc(doc).unwrap_err();
        assert!(err.to_string().contains("wiring"), "{err}");
        let mut doc = pipeline.to_doc();
        doc.version = "pipeline_v0".into();
        assert!(HierarchyPipeline::from_doc(doc).is_err());
    }
}
