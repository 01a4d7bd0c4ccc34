//! Process-parameter types, energy density, design-of-experiments sampling,
//! and raw-measurement reduction.
//!
//! Layer thickness and hatch spacing are stored internally in mm so the
//! energy density comes out directly in J/mm3; constructors take the
//! micrometre values used by the data files.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sobol::SobolSequence;

/// Scan-pattern rotation between successive layers. A two-level categorical;
/// it is never fed to a distance-based kernel as a number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScanRotation {
    Deg67,
    Deg90,
}

impl ScanRotation {
    pub fn degrees(self) -> f64 {
        match self {
            ScanRotation::Deg67 => 67.0,
            ScanRotation::Deg90 => 90.0,
        }
    }

    pub fn from_degrees(deg: f64) -> Result<Self> {
        if (deg - 67.0).abs() < 1e-9 {
            Ok(ScanRotation::Deg67)
        } else if (deg - 90.0).abs() < 1e-9 {
            Ok(ScanRotation::Deg90)
        } else {
            Err(Error::domain(format!(
                "scan rotation must be 67 or 90 degrees, got {deg}"
            )))
        }
    }

    /// Index into the two-level categorical: 67 -> 0, 90 -> 1.
    pub fn level(self) -> usize {
        match self {
            ScanRotation::Deg67 => 0,
            ScanRotation::Deg90 => 1,
        }
    }
}

/// One LPBF process parameter combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessParams {
    /// Laser power, W.
    pub power_w: f64,
    /// Scan speed, mm/s.
    pub speed_mm_s: f64,
    /// Powder layer thickness, mm.
    pub layer_mm: f64,
    /// Hatch spacing, mm.
    pub hatch_mm: f64,
    pub scan_rotation: ScanRotation,
}

impl ProcessParams {
    /// Builds from the unit convention of the data files (layer and hatch in um).
    pub fn from_um(
        power_w: f64,
        speed_mm_s: f64,
        layer_um: f64,
        hatch_um: f64,
        scan_rotation: ScanRotation,
    ) -> Result<Self> {
        let p = ProcessParams {
            power_w,
            speed_mm_s,
            layer_mm: layer_um / 1000.0,
            hatch_mm: hatch_um / 1000.0,
            scan_rotation,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn layer_um(&self) -> f64 {
        self.layer_mm * 1000.0
    }

    pub fn hatch_um(&self) -> f64 {
        self.hatch_mm * 1000.0
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("power_w", self.power_w),
            ("speed_mm_s", self.speed_mm_s),
            ("layer_mm", self.layer_mm),
            ("hatch_mm", self.hatch_mm),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(format!(
                    "process parameter `{name}` must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Quantitative feature vector (power W, speed mm/s, layer um, hatch um).
    pub fn quant_features(&self) -> [f64; 4] {
        [self.power_w, self.speed_mm_s, self.layer_um(), self.hatch_um()]
    }
}

/// Volumetric energy density, J/mm3: power / (speed * hatch * layer).
pub fn compute_ved(params: &ProcessParams) -> Result<f64> {
    params.validate()?;
    Ok(params.power_w / (params.speed_mm_s * params.hatch_mm * params.layer_mm))
}

/// Vickers hardness from indentation force (kgf) and mean diagonal (mm).
pub fn vickers_hv(force_kgf: f64, mean_diagonal_mm: f64) -> Result<f64> {
    if !(force_kgf > 0.0) {
        return Err(Error::domain(format!(
            "indentation force must be positive, got {force_kgf}"
        )));
    }
    if !(mean_diagonal_mm > 0.0) {
        return Err(Error::domain(format!(
            "mean diagonal must be positive, got {mean_diagonal_mm}"
        )));
    }
    Ok(1.8544 * force_kgf / (mean_diagonal_mm * mean_diagonal_mm))
}

/// Statistical median; even-length input returns the mean of the two central
/// order statistics.
pub fn reduce_map_to_median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("cannot take the median of an empty list"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        Ok(sorted[n / 2])
    } else {
        Ok(0.5 * (sorted[n / 2 - 1] + sorted[n / 2]))
    }
}

/// Per-parameter sampling bounds for the DOE, in the data-file units
/// (power W, speed mm/s, layer um, hatch um).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub power_w: (f64, f64),
    pub speed_mm_s: (f64, f64),
    pub layer_um: (f64, f64),
    pub hatch_um: (f64, f64),
}

impl ParamRanges {
    /// Ranges of the 270-point campaign: 80-400 W, 150-1500 mm/s,
    /// 20-75 um layer, 70-120 um hatch.
    pub fn campaign() -> Self {
        ParamRanges {
            power_w: (80.0, 400.0),
            speed_mm_s: (150.0, 1500.0),
            layer_um: (20.0, 75.0),
            hatch_um: (70.0, 120.0),
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("power_w", self.power_w),
            ("speed_mm_s", self.speed_mm_s),
            ("layer_um", self.layer_um),
            ("hatch_um", self.hatch_um),
        ] {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::domain(format!(
                    "degenerate bounds for `{name}`: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    fn scale(&self, unit: &[f64]) -> (f64, f64, f64, f64) {
        let lerp = |(lo, hi): (f64, f64), u: f64| lo + (hi - lo) * u;
        (
            lerp(self.power_w, unit[0]),
            lerp(self.speed_mm_s, unit[1]),
            lerp(self.layer_um, unit[2]),
            lerp(self.hatch_um, unit[3]),
        )
    }

    pub fn contains(&self, p: &ProcessParams) -> bool {
        let inside = |(lo, hi): (f64, f64), v: f64| v >= lo && v <= hi;
        inside(self.power_w, p.power_w)
            && inside(self.speed_mm_s, p.speed_mm_s)
            && inside(self.layer_um, p.layer_um())
            && inside(self.hatch_um, p.hatch_um())
    }
}

/// Low-discrepancy design over the parameter box. The fifth Sobol coordinate
/// is thresholded at 0.5 to pick the scan rotation level. With scrambling off
/// (the default) the output is independent of the seed and bit-reproducible.
pub fn generate_doe(n: usize, ranges: &ParamRanges, seed: u64, scramble: bool) -> Result<Vec<ProcessParams>> {
    if n == 0 {
        return Err(Error::domain("DOE size must be at least 1"));
    }
    ranges.validate()?;
    let mut seq = SobolSequence::new(5)?;
    if scramble {
        seq = seq.with_digital_shift(seed);
    }
    let mut out = Vec::with_capacity(n);
    for u in seq.sample(n) {
        let (p, v, l, h) = ranges.scale(&u);
        let sr = if u[4] < 0.5 { ScanRotation::Deg67 } else { ScanRotation::Deg90 };
        out.push(ProcessParams::from_um(p, v, l, h, sr)?);
    }
    Ok(out)
}

/// One cuboid sample: process parameters plus the reduced surface measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuboidRecord {
    pub id: u32,
    pub params: ProcessParams,
    /// Pore-area fraction in [0, 1].
    pub porosity: f64,
    /// Median of the indentation map, HV0.5.
    pub hardness_hv: f64,
}

impl CuboidRecord {
    pub fn new(id: u32, params: ProcessParams, porosity: f64, hardness_hv: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&porosity) {
            return Err(Error::domain(format!(
                "porosity must lie in [0, 1], got {porosity} (record {id})"
            )));
        }
        if !(hardness_hv > 0.0) {
            return Err(Error::domain(format!(
                "hardness must be positive, got {hardness_hv} (record {id})"
            )));
        }
        Ok(CuboidRecord { id, params, porosity, hardness_hv })
    }
}

/// One tensile condition: medians over the replicate coupons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensileRecord {
    pub id: u32,
    pub params: ProcessParams,
    /// 0.2% offset yield strength, MPa.
    pub yield_mpa: f64,
    /// Ultimate tensile strength, MPa.
    pub ultimate_mpa: f64,
    /// Strain to failure, percent.
    pub ductility_pct: f64,
    /// Optional per-replicate (yield, ultimate, ductility) triples.
    pub replicates: Option<Vec<(f64, f64, f64)>>,
}

impl TensileRecord {
    pub fn new(
        id: u32,
        params: ProcessParams,
        yield_mpa: f64,
        ultimate_mpa: f64,
        ductility_pct: f64,
        replicates: Option<Vec<(f64, f64, f64)>>,
    ) -> Result<Self> {
        if yield_mpa > ultimate_mpa {
            return Err(Error::domain(format!(
                "yield strength {yield_mpa} exceeds ultimate strength {ultimate_mpa} (record {id})"
            )));
        }
        if ductility_pct < 0.0 {
            return Err(Error::domain(format!(
                "ductility must be non-negative, got {ductility_pct} (record {id})"
            )));
        }
        Ok(TensileRecord { id, params, yield_mpa, ultimate_mpa, ductility_pct, replicates })
    }
}
