//! File ingestion and export: the cuboid/tensile CSV schemas and image
//! loading for porosity extraction.
//!
//! CSV conventions: UTF-8, `.` decimal separator, comment lines starting
//! with `#`. Layer thickness and hatch spacing travel in micrometres in the
//! files and are converted at this boundary.

use std::path::Path;

use crate::domain::{compute_ved, CuboidRecord, ProcessParams, ScanRotation, TensileRecord};
use crate::error::{Error, Result};
use crate::imaging::GrayImage;

pub const CUBOID_HEADER: [&str; 8] = [
    "id", "power_w", "speed_mm_s", "layer_um", "hatch_um", "scan_rot", "porosity", "hardness_hv",
];
pub const TENSILE_HEADER: [&str; 9] = [
    "id", "power_w", "speed_mm_s", "layer_um", "hatch_um", "scan_rot", "ys_mpa", "uts_mpa",
    "ef_pct",
];
/// Optional per-replicate columns after the tensile medians.
pub const REPLICATE_HEADER: [&str; 9] =
    ["ys_1", "ys_2", "ys_3", "uts_1", "uts_2", "uts_3", "ef_1", "ef_2", "ef_3"];
/// Optional reported-energy-density column; disagreements with the formula
/// are flagged, not fixed.
pub const VED_COLUMN: &str = "ved_j_mm3";

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(format!("cannot open `{}`: {e}", path.display())))
}

fn parse_field(record: &csv::StringRecord, idx: usize, name: &str, row: usize) -> Result<f64> {
    let raw = record
        .get(idx)
        .ok_or_else(|| Error::data(format!("row {row}: missing column `{name}`")))?;
    raw.parse::<f64>()
        .map_err(|_| Error::data(format!("row {row}: `{name}` is not a number: `{raw}`")))
}

struct Columns {
    indices: Vec<usize>,
    ved: Option<usize>,
    replicates: Option<Vec<usize>>,
}

fn resolve_columns(headers: &csv::StringRecord, required: &[&str]) -> Result<Columns> {
    let find = |name: &str| headers.iter().position(|h| h == name);
    let indices = required
        .iter()
        .map(|name| {
            find(name).ok_or_else(|| Error::data(format!("missing required column `{name}`")))
        })
        .collect::<Result<_>>()?;
    let rep: Vec<Option<usize>> = REPLICATE_HEADER.iter().map(|n| find(n)).collect();
    let replicates = if rep.iter().all(|r| r.is_some()) {
        Some(rep.into_iter().flatten().collect())
    } else if rep.iter().any(|r| r.is_some()) {
        return Err(Error::data(
            "replicate columns must be given completely (ys_1..3, uts_1..3, ef_1..3) or not at all",
        ));
    } else {
        None
    };
    Ok(Columns { indices, ved: find(VED_COLUMN), replicates })
}

fn parse_params(
    record: &csv::StringRecord,
    cols: &Columns,
    row: usize,
) -> Result<(u32, ProcessParams)> {
    let id = parse_field(record, cols.indices[0], "id", row)? as u32;
    let power = parse_field(record, cols.indices[1], "power_w", row)?;
    let speed = parse_field(record, cols.indices[2], "speed_mm_s", row)?;
    let layer = parse_field(record, cols.indices[3], "layer_um", row)?;
    let hatch = parse_field(record, cols.indices[4], "hatch_um", row)?;
    let rot = parse_field(record, cols.indices[5], "scan_rot", row)?;
    let params = ProcessParams::from_um(power, speed, layer, hatch, ScanRotation::from_degrees(rot)?)?;
    Ok((id, params))
}

/// Compares a reported energy density against the formula; a relative gap
/// above 1% produces a flag message.
fn check_ved(
    record: &csv::StringRecord,
    cols: &Columns,
    params: &ProcessParams,
    id: u32,
    row: usize,
    flags: &mut Vec<String>,
) -> Result<()> {
    if let Some(idx) = cols.ved {
        let reported = parse_field(record, idx, VED_COLUMN, row)?;
        let computed = compute_ved(params)?;
        if (reported - computed).abs() > 0.01 * computed.abs() {
            flags.push(format!(
                "record {id}: reported energy density {reported} J/mm3 disagrees with the formula ({computed:.1} J/mm3)"
            ));
        }
    }
    Ok(())
}

/// Reads `cuboids.csv`. Returns the records plus any energy-density
/// discrepancy flags.
pub fn read_cuboids(path: &Path) -> Result<(Vec<CuboidRecord>, Vec<String>)> {
    let mut rdr = reader(path)?;
    let cols = resolve_columns(rdr.headers().map_err(|e| Error::data(e.to_string()))?, &CUBOID_HEADER)?;
    let mut records = Vec::new();
    let mut flags = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::data(format!("row {row}: {e}")))?;
        let (id, params) = parse_params(&rec, &cols, row)?;
        check_ved(&rec, &cols, &params, id, row, &mut flags)?;
        let porosity = parse_field(&rec, cols.indices[6], "porosity", row)?;
        let hardness = parse_field(&rec, cols.indices[7], "hardness_hv", row)?;
        records.push(CuboidRecord::new(id, params, porosity, hardness)?);
    }
    Ok((records, flags))
}

/// Reads `tensile.csv`, including the optional replicate columns.
pub fn read_tensile(path: &Path) -> Result<(Vec<TensileRecord>, Vec<String>)> {
    let mut rdr = reader(path)?;
    let cols = resolve_columns(rdr.headers().map_err(|e| Error::data(e.to_string()))?, &TENSILE_HEADER)?;
    let mut records = Vec::new();
    let mut flags = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::data(format!("row {row}: {e}")))?;
        let (id, params) = parse_params(&rec, &cols, row)?;
        check_ved(&rec, &cols, &params, id, row, &mut flags)?;
        let ys = parse_field(&rec, cols.indices[6], "ys_mpa", row)?;
        let uts = parse_field(&rec, cols.indices[7], "uts_mpa", row)?;
        let ef = parse_field(&rec, cols.indices[8], "ef_pct", row)?;
        let replicates = match &cols.replicates {
            None => None,
            Some(idx) => {
                let vals: Vec<f64> = idx
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| parse_field(&rec, i, REPLICATE_HEADER[k], row))
                    .collect::<Result<_>>()?;
                Some((0..3).map(|k| (vals[k], vals[3 + k], vals[6 + k])).collect())
            }
        };
        records.push(TensileRecord::new(id, params, ys, uts, ef, replicates)?);
    }
    Ok((records, flags))
}

fn fmt(v: f64) -> String {
    // shortest round-trip decimal form; deterministic across platforms
    format!("{v}")
}

fn params_fields(id: u32, p: &ProcessParams) -> Vec<String> {
    vec![
        id.to_string(),
        fmt(p.power_w),
        fmt(p.speed_mm_s),
        fmt(p.layer_um()),
        fmt(p.hatch_um()),
        fmt(p.scan_rotation.degrees()),
    ]
}

/// Serializes cuboid records in the ingestion schema. `header_comments` are
/// written first, one `#`-prefixed line each.
pub fn cuboids_to_csv(records: &[CuboidRecord], header_comments: &[String]) -> String {
    let mut out = String::new();
    for line in header_comments {
        out.push_str(&format!("# {line}\n"));
    }
    out.push_str(&CUBOID_HEADER.join(","));
    out.push('\n');
    for r in records {
        let mut fields = params_fields(r.id, &r.params);
        fields.push(fmt(r.porosity));
        fields.push(fmt(r.hardness_hv));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Serializes tensile records; replicate columns are included when every
/// record carries exactly three replicates.
pub fn tensile_to_csv(records: &[TensileRecord], header_comments: &[String]) -> String {
    let with_reps = !records.is_empty()
        && records
            .iter()
            .all(|r| r.replicates.as_ref().map_or(false, |reps| reps.len() == 3));
    let mut out = String::new();
    for line in header_comments {
        out.push_str(&format!("# {line}\n"));
    }
    out.push_str(&TENSILE_HEADER.join(","));
    if with_reps {
        out.push(',');
        out.push_str(&REPLICATE_HEADER.join(","));
    }
    out.push('\n');
    for r in records {
        let mut fields = params_fields(r.id, &r.params);
        fields.push(fmt(r.yield_mpa));
        fields.push(fmt(r.ultimate_mpa));
        fields.push(fmt(r.ductility_pct));
        if with_reps {
            let reps = r.replicates.as_ref().unwrap();
            for k in 0..3 {
                fields.push(fmt(reps[k].0));
            }
            for k in 0..3 {
                fields.push(fmt(reps[k].1));
            }
            for k in 0..3 {
                fields.push(fmt(reps[k].2));
            }
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Loads a PNG or 8-bit TIFF as grayscale. Color inputs are reduced with
/// integer BT.601 weights; 16-bit inputs are rejected.
pub fn load_gray_image(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)
        .map_err(|e| Error::data(format!("cannot read image `{}`: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(buf) => GrayImage::new(w, h, buf.into_raw()),
        image::DynamicImage::ImageRgb8(buf) => GrayImage::from_rgb(w, h, buf.as_raw()),
        image::DynamicImage::ImageRgba8(buf) => {
            let rgb: Vec<u8> = buf
                .as_raw()
                .chunks_exact(4)
                .flat_map(|px| [px[0], px[1], px[2]])
                .collect();
            GrayImage::from_rgb(w, h, &rgb)
        }
        image::DynamicImage::ImageLumaA8(buf) => {
            let data: Vec<u8> = buf.as_raw().chunks_exact(2).map(|px| px[0]).collect();
            GrayImage::new(w, h, data)
        }
        other => Err(Error::data(format!(
            "unsupported pixel format {:?} in `{}` (8-bit grayscale or RGB required)",
            other.color(),
            path.display()
        ))),
    }
}
