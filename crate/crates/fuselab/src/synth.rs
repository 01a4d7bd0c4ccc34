//! Synthetic campaign generator: an analytic process-property family with
//! known noise, shaped like the physical datasets (cuboid surface
//! measurements plus a tensile subset). Used by tests wherever a ground
//! truth is required.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    compute_ved, generate_doe, CuboidRecord, ParamRanges, ProcessParams, TensileRecord,
};
use crate::error::{Error, Result};

/// Coefficients of the default analytic family. All responses are smooth
/// over the parameter box. Hardness deliberately carries a non-VED term in
/// (power, speed) so energy density alone cannot explain it; ductility
/// rises then falls in yield strength; scan rotation is ignored throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub h_base: f64,
    pub h_amp: f64,
    pub h_ved_mid: f64,
    pub h_ved_scale: f64,
    pub h_pv_amp: f64,
    pub p_base: f64,
    pub p_amp: f64,
    pub p_decay: f64,
    pub ys_h_coef: f64,
    pub ys_offset: f64,
    pub ys_por_coef: f64,
    pub ef_amp: f64,
    pub ef_center: f64,
    pub ef_width: f64,
    pub ef_floor: f64,
    pub uts_gap: f64,
}

impl Default for GroundTruth {
    fn default() -> Self {
        GroundTruth {
            h_base: 340.0,
            h_amp: 80.0,
            h_ved_mid: 120.0,
            h_ved_scale: 60.0,
            h_pv_amp: 20.0,
            p_base: 0.002,
            p_amp: 0.08,
            p_decay: 40.0,
            ys_h_coef: 2.8,
            ys_offset: -50.0,
            ys_por_coef: 4000.0,
            ef_amp: 18.0,
            ef_center: 950.0,
            ef_width: 250.0,
            ef_floor: 2.0,
            uts_gap: 150.0,
        }
    }
}

impl GroundTruth {
    /// Noiseless hardness, HV.
    pub fn hardness(&self, p: &ProcessParams) -> f64 {
        let ved = compute_ved(p).expect("positive parameters");
        self.h_base
            + self.h_amp * ((ved - self.h_ved_mid) / self.h_ved_scale).tanh()
            + self.h_pv_amp
                * (std::f64::consts::PI * p.power_w / 320.0).sin()
                * (p.speed_mm_s / 1500.0)
    }

    /// Noiseless pore-area fraction, decaying in energy density.
    pub fn porosity(&self, p: &ProcessParams) -> f64 {
        let ved = compute_ved(p).expect("positive parameters");
        self.p_base + self.p_amp * (-ved / self.p_decay).exp()
    }

    /// Noiseless yield strength, MPa: affine in hardness with a porosity
    /// penalty.
    pub fn yield_strength(&self, p: &ProcessParams) -> f64 {
        self.ys_h_coef * self.hardness(p) + self.ys_offset - self.ys_por_coef * self.porosity(p)
    }

    /// Noiseless strain to failure, percent: non-monotone in yield strength.
    pub fn ductility(&self, p: &ProcessParams) -> f64 {
        let ys = self.yield_strength(p);
        let z = (ys - self.ef_center) / self.ef_width;
        self.ef_amp * (-z * z).exp() + self.ef_floor
    }

    pub fn ultimate_strength(&self, p: &ProcessParams) -> f64 {
        self.yield_strength(p) + self.uts_gap
    }
}

/// Per-property noise standard deviations, in output units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub hardness_sd: f64,
    pub porosity_sd: f64,
    pub yield_sd: f64,
    pub ductility_sd: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            hardness_sd: 3.0,
            porosity_sd: 5e-4,
            yield_sd: 10.0,
            ductility_sd: 0.3,
        }
    }
}

impl NoiseSpec {
    pub fn noise_free() -> Self {
        NoiseSpec { hardness_sd: 0.0, porosity_sd: 0.0, yield_sd: 0.0, ductility_sd: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("hardness_sd", self.hardness_sd),
            ("porosity_sd", self.porosity_sd),
            ("yield_sd", self.yield_sd),
            ("ductility_sd", self.ductility_sd),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("noise `{name}` must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Full description of one synthetic campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignSpec {
    pub n_cuboid: usize,
    pub n_tensile: usize,
    /// Draw the tensile parameter sets from the cuboid design (as in the
    /// physical campaign) instead of sampling them independently.
    pub subset: bool,
    pub seed: u64,
    pub ranges: ParamRanges,
    pub noise: NoiseSpec,
    pub truth: GroundTruth,
}

impl Default for CampaignSpec {
    fn default() -> Self {
        CampaignSpec {
            n_cuboid: 270,
            n_tensile: 54,
            subset: true,
            seed: 0,
            ranges: ParamRanges::campaign(),
            noise: NoiseSpec::default(),
            truth: GroundTruth::default(),
        }
    }
}

/// Deterministic synthetic datasets plus the handles for exact noiseless
/// evaluation anywhere in the box.
pub fn generate_campaign(
    spec: &CampaignSpec,
) -> Result<(Vec<CuboidRecord>, Vec<TensileRecord>, GroundTruth)> {
    if spec.n_cuboid == 0 {
        return Err(Error::domain("campaign needs at least one cuboid sample"));
    }
    if spec.subset && spec.n_tensile > spec.n_cuboid {
        return Err(Error::domain(format!(
            "tensile subset of size {} cannot come from {} cuboid sets",
            spec.n_tensile, spec.n_cuboid
        )));
    }
    spec.noise.validate()?;
    let params = generate_doe(spec.n_cuboid, &spec.ranges, spec.seed, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x2545f4914f6cdd1d));
    let noise = |sd: f64, rng: &mut ChaCha8Rng| -> f64 {
        if sd == 0.0 {
            0.0
        } else {
            Normal::new(0.0, sd).unwrap().sample(rng)
        }
    };

    let cuboids: Vec<CuboidRecord> = params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let hardness = (spec.truth.hardness(p) + noise(spec.noise.hardness_sd, &mut rng)).max(1.0);
            let porosity =
                (spec.truth.porosity(p) + noise(spec.noise.porosity_sd, &mut rng)).clamp(0.0, 1.0);
            CuboidRecord::new(i as u32, *p, porosity, hardness)
        })
        .collect::<Result<_>>()?;

    let tensile_params: Vec<ProcessParams> = if spec.subset {
        // deterministic shuffled pick of n_tensile cuboid parameter sets
        let mut idx: Vec<usize> = (0..spec.n_cuboid).collect();
        for i in (1..idx.len()).rev() {
            let j = rand::Rng::gen_range(&mut rng, 0..=i);
            idx.swap(i, j);
        }
        idx.truncate(spec.n_tensile);
        idx.sort_unstable();
        idx.into_iter().map(|i| params[i]).collect()
    } else {
        generate_doe(spec.n_tensile.max(1), &spec.ranges, spec.seed.wrapping_add(1), true)?
    };
    let tensile: Vec<TensileRecord> = tensile_params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let ys = spec.truth.yield_strength(p) + noise(spec.noise.yield_sd, &mut rng);
            let uts = (spec.truth.ultimate_strength(p) + noise(spec.noise.yield_sd, &mut rng))
                .max(ys);
            let ef = (spec.truth.ductility(p) + noise(spec.noise.ductility_sd, &mut rng)).max(0.0);
            TensileRecord::new(i as u32, *p, ys, uts, ef, None)
        })
        .collect::<Result<_>>()?;
    Ok((cuboids, tensile, spec.truth.clone()))
}
