//! Screening optimizer: sample candidate parameter combinations, predict
//! tensile properties, filter by the energy-density window and property
//! thresholds, rank by predictive uncertainty. Plus design-map grids over
//! two free parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{compute_ved, generate_doe, ParamRanges, ProcessParams, ScanRotation};
use crate::error::{Error, Result};
use crate::fusion::{HierarchyPipeline, TensilePrediction};
use crate::gp::OutputScaler;

/// Anything that can predict tensile properties for a parameter batch.
pub trait TensilePredictor {
    fn predict_batch(&self, params: &[ProcessParams]) -> Result<Vec<TensilePrediction>>;

    /// Output-scale standard deviations (yield, ductility) used to put the
    /// two uncertainties on commensurate scales in combined ranking.
    fn uncertainty_scales(&self) -> (f64, f64) {
        (1.0, 1.0)
    }
}

impl TensilePredictor for HierarchyPipeline {
    fn predict_batch(&self, params: &[ProcessParams]) -> Result<Vec<TensilePrediction>> {
        self.predict_tensile(params)
    }

    fn uncertainty_scales(&self) -> (f64, f64) {
        // sd of the real-source output column of each fused stage; the
        // source categorical's second level is the real source
        let scale = |scaler: &OutputScaler| -> f64 {
            match scaler {
                OutputScaler::Global(s) => s.sd,
                OutputScaler::PerSource { by_level, .. } => by_level[1].sd,
            }
        };
        (
            scale(self.gp_yield().output_scaler()),
            scale(self.gp_ductility().output_scaler()),
        )
    }
}

/// Thresholds applied by [`screen`]; `None` disables a filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenFilters {
    /// Energy-density window, J/mm3.
    pub ved: Option<(f64, f64)>,
    /// Minimum predicted yield strength, MPa.
    pub ys_min: Option<f64>,
    /// Minimum predicted strain to failure, percent.
    pub ef_min: Option<f64>,
}

impl Default for ScreenFilters {
    fn default() -> Self {
        ScreenFilters {
            ved: Some((100.0, 200.0)),
            ys_min: Some(1000.0),
            ef_min: Some(12.0),
        }
    }
}

/// How candidate parameter combinations are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampling {
    /// Low-discrepancy design (the default; better coverage at large n).
    LowDiscrepancy,
    Uniform,
}

/// One screened candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub params: ProcessParams,
    pub prediction: TensilePrediction,
    pub ved: f64,
    pub pass_ved: bool,
    pub pass_ys: bool,
    pub pass_ef: bool,
}

impl Candidate {
    pub fn passes(&self) -> bool {
        self.pass_ved && self.pass_ys && self.pass_ef
    }
}

/// The screened cloud plus the configuration snapshot it was produced under.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub filters: ScreenFilters,
    pub sampling: Sampling,
    pub seed: u64,
    /// Output-scale sds (yield, ductility) captured from the predictor.
    pub uncertainty_scales: (f64, f64),
}

impl CandidateSet {
    pub fn passing(&self) -> Vec<&Candidate> {
        self.candidates.iter().filter(|c| c.passes()).collect()
    }
}

/// Samples `n` combinations, predicts, and applies the filters. An empty
/// pass set is not an error; it is visible through [`CandidateSet::passing`].
pub fn screen(
    predictor: &impl TensilePredictor,
    n: usize,
    ranges: &ParamRanges,
    filters: &ScreenFilters,
    sampling: Sampling,
    seed: u64,
) -> Result<CandidateSet> {
    if n == 0 {
        return Err(Error::domain("screening needs at least one sample"));
    }
    if let Some((lo, hi)) = filters.ved {
        if !(lo <= hi) {
            return Err(Error::domain(format!("bad energy-density window [{lo}, {hi}]")));
        }
    }
    let params = match sampling {
        Sampling::LowDiscrepancy => generate_doe(n, ranges, seed, true)?,
        Sampling::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    let u = |r: &mut ChaCha8Rng, (lo, hi): (f64, f64)| r.gen_range(lo..hi);
                    let p = u(&mut rng, ranges.power_w);
                    let v = u(&mut rng, ranges.speed_mm_s);
                    let l = u(&mut rng, ranges.layer_um);
                    let h = u(&mut rng, ranges.hatch_um);
                    let sr = if rng.gen::<f64>() < 0.5 {
                        ScanRotation::Deg67
                    } else {
                        ScanRotation::Deg90
                    };
                    ProcessParams::from_um(p, v, l, h, sr)
                })
                .collect::<Result<_>>()?
        }
    };
    let predictions = predictor.predict_batch(&params)?;
    let candidates = params
        .iter()
        .zip(predictions)
        .map(|(&p, prediction)| {
            let ved = compute_ved(&p)?;
            Ok(Candidate {
                pass_ved: filters.ved.map_or(true, |(lo, hi)| ved >= lo && ved <= hi),
                pass_ys: filters.ys_min.map_or(true, |t| prediction.yield_strength.mean > t),
                pass_ef: filters.ef_min.map_or(true, |t| prediction.ductility.mean > t),
                params: p,
                prediction,
                ved,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CandidateSet {
        candidates,
        filters: filters.clone(),
        sampling,
        seed,
        uncertainty_scales: predictor.uncertainty_scales(),
    })
}

/// Ranking key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankMode {
    Ys,
    Ef,
    Combined,
}

fn rank_key(c: &Candidate, mode: RankMode, scales: (f64, f64)) -> f64 {
    match mode {
        RankMode::Ys => c.prediction.yield_strength.sd,
        RankMode::Ef => c.prediction.ductility.sd,
        RankMode::Combined => {
            let ys = c.prediction.yield_strength.sd / scales.0;
            let ef = c.prediction.ductility.sd / scales.1;
            (ys * ys + ef * ef).sqrt()
        }
    }
}

/// Passed candidates in ascending order of predictive uncertainty. Stable:
/// ties keep sample order.
pub fn rank_by_uncertainty(set: &CandidateSet, mode: RankMode) -> Result<Vec<Candidate>> {
    let mut passed: Vec<Candidate> = set.candidates.iter().filter(|c| c.passes()).cloned().collect();
    if passed.is_empty() {
        return Err(Error::domain("no candidate passed the filters; nothing to rank"));
    }
    passed.sort_by(|a, b| {
        rank_key(a, mode, set.uncertainty_scales)
            .partial_cmp(&rank_key(b, mode, set.uncertainty_scales))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(passed)
}

// ---------------------------------------------------------------------------
// design maps

const AXES: [&str; 4] = ["power_w", "speed_mm_s", "layer_um", "hatch_um"];

/// Rectilinear prediction grid over two free parameters with the others
/// fixed. `objective[i][j]` is ln(ys) + ln(ef), `None` where a prediction is
/// non-positive. Iso-lines trace the energy-density levels 100 and 200.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignMap {
    pub free: (String, String),
    pub fixed: Vec<(String, f64)>,
    pub scan_rotation: ScanRotation,
    /// Strictly increasing grid axes for `free.0` and `free.1`.
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
    pub ys: Vec<Vec<f64>>,
    pub ef: Vec<Vec<f64>>,
    pub ved: Vec<Vec<f64>>,
    pub objective: Vec<Vec<Option<f64>>>,
    /// (level, (axis1, axis2) points on the iso-line inside the grid box).
    pub iso_lines: Vec<(f64, Vec<(f64, f64)>)>,
}

pub const ISO_LEVELS: [f64; 2] = [100.0, 200.0];

fn axis_range(ranges: &ParamRanges, name: &str) -> Result<(f64, f64)> {
    match name {
        "power_w" => Ok(ranges.power_w),
        "speed_mm_s" => Ok(ranges.speed_mm_s),
        "layer_um" => Ok(ranges.layer_um),
        "hatch_um" => Ok(ranges.hatch_um),
        _ => Err(Error::domain(format!(
            "unknown parameter `{name}` (expected one of {AXES:?})"
        ))),
    }
}

fn build_params(values: &[(&str, f64)], sr: ScanRotation) -> Result<ProcessParams> {
    let get = |name: &str| -> f64 {
        values
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
            .expect("all four axes present")
    };
    ProcessParams::from_um(get("power_w"), get("speed_mm_s"), get("layer_um"), get("hatch_um"), sr)
}

fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn design_map(
    predictor: &impl TensilePredictor,
    free: (&str, &str),
    fixed: &[(String, f64)],
    scan_rotation: ScanRotation,
    ranges: &ParamRanges,
    resolution: usize,
) -> Result<DesignMap> {
    if resolution < 2 {
        return Err(Error::domain("grid resolution must be at least 2 per axis"));
    }
    if free.0 == free.1 {
        return Err(Error::domain("the two free axes must differ"));
    }
    let r1 = axis_range(ranges, free.0)?;
    let r2 = axis_range(ranges, free.1)?;
    let mut fixed_vals: Vec<(&str, f64)> = Vec::new();
    for name in AXES {
        if name == free.0 || name == free.1 {
            continue;
        }
        let (_, v) = fixed
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::domain(format!("missing fixed value for `{name}`")))?;
        let (lo, hi) = axis_range(ranges, name)?;
        if !(*v >= lo && *v <= hi) {
            return Err(Error::domain(format!(
                "fixed `{name}` = {v} outside its range [{lo}, {hi}]"
            )));
        }
        fixed_vals.push((name, *v));
    }
    for (name, _) in fixed {
        if name == free.0 || name == free.1 {
            return Err(Error::domain(format!("`{name}` is both free and fixed")));
        }
        axis_range(ranges, name)?;
    }

    let axis1 = linspace(r1, resolution);
    let axis2 = linspace(r2, resolution);
    let mut grid_params = Vec::with_capacity(resolution * resolution);
    for &a in &axis1 {
        for &b in &axis2 {
            let mut vals = fixed_vals.clone();
            vals.push((free.0, a));
            vals.push((free.1, b));
            grid_params.push(build_params(&vals, scan_rotation)?);
        }
    }
    let preds = predictor.predict_batch(&grid_params)?;
    let mut ys = vec![vec![0.0; resolution]; resolution];
    let mut ef = vec![vec![0.0; resolution]; resolution];
    let mut ved = vec![vec![0.0; resolution]; resolution];
    let mut objective = vec![vec![None; resolution]; resolution];
    for i in 0..resolution {
        for j in 0..resolution {
            let p = &preds[i * resolution + j];
            ys[i][j] = p.yield_strength.mean;
            ef[i][j] = p.ductility.mean;
            ved[i][j] = compute_ved(&grid_params[i * resolution + j])?;
            if p.yield_strength.mean > 0.0 && p.ductility.mean > 0.0 {
                objective[i][j] = Some(p.yield_strength.mean.ln() + p.ductility.mean.ln());
            }
        }
    }

    // iso-lines: energy density is linear in power and reciprocal in the
    // other axes, so for each axis1 sample the axis2 value at a given level
    // has a closed form
    let mut iso_lines = Vec::new();
    for level in ISO_LEVELS {
        let mut points = Vec::new();
        for &a in &axis1 {
            let mut vals = fixed_vals.clone();
            vals.push((free.0, a));
            vals.push((free.1, 1.0));
            let ved_at_unit = compute_ved(&build_params(&vals, scan_rotation)?)?;
            let b = if free.1 == "power_w" {
                level / ved_at_unit
            } else {
                ved_at_unit / level
            };
            if b >= r2.0 && b <= r2.1 {
                points.push((a, b));
            }
        }
        iso_lines.push((level, points));
    }

    Ok(DesignMap {
        free: (free.0.to_string(), free.1.to_string()),
        fixed: fixed_vals.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
        scan_rotation,
        axis1,
        axis2,
        ys,
        ef,
        ved,
        objective,
        iso_lines,
    })
}
