//! CSV dataset interchange and JSON sidecars.
//!
//! A dataset is three CSV files: `curves.csv` (one row per (sample,
//! predictor) pair with the grid values), `scalars.csv` (one row per sample)
//! and `response.csv`. Floats are written in Rust's shortest round-trip
//! form, so write→read is lossless.

use crate::model::Dataset;
use crate::{Error, Result};
use ndarray::{Array1, Array2, Array3};
use std::collections::BTreeMap;
use std::path::Path;

pub const CURVES_FILE: &str = "curves.csv";
pub const SCALARS_FILE: &str = "scalars.csv";
pub const RESPONSE_FILE: &str = "response.csv";

pub fn write_curves(path: &Path, curves: &Array3<f64>) -> Result<()> {
    let (n, m, nn) = curves.dim();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample".to_string(), "predictor".to_string()];
    header.extend((0..nn).map(|j| format!("t{j}")));
    w.write_record(&header)?;
    for i in 0..n {
        for l in 0..m {
            let mut rec = vec![i.to_string(), l.to_string()];
            rec.extend((0..nn).map(|j| curves[[i, l, j]].to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_curves(path: &Path) -> Result<Array3<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let header_len = r.headers()?.len();
    if header_len < 3 {
        return Err(Error::Degenerate("curves file has no grid columns".into()));
    }
    let nn = header_len - 2;
    let mut rows: Vec<(usize, usize, Vec<f64>)> = vec![];
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != header_len {
            return Err(Error::Degenerate("ragged curves record".into()));
        }
        let i = parse_usize(rec.get(0).unwrap())?;
        let l = parse_usize(rec.get(1).unwrap())?;
        let vals = rec
            .iter()
            .skip(2)
            .map(parse_f64)
            .collect::<Result<Vec<f64>>>()?;
        rows.push((i, l, vals));
    }
    if rows.is_empty() {
        return Err(Error::Degenerate("empty curves file".into()));
    }
    let n = rows.iter().map(|(i, _, _)| i + 1).max().unwrap();
    let m = rows.iter().map(|(_, l, _)| l + 1).max().unwrap();
    if rows.len() != n * m {
        return Err(Error::Dimension(format!(
            "curves file has {} rows, expected {} ({} samples x {} predictors)",
            rows.len(),
            n * m,
            n,
            m
        )));
    }
    let mut curves = Array3::from_elem((n, m, nn), f64::NAN);
    for (i, l, vals) in rows {
        if !curves[[i, l, 0]].is_nan() {
            return Err(Error::Degenerate(format!(
                "duplicate curves row for sample {i}, predictor {l}"
            )));
        }
        for (j, v) in vals.into_iter().enumerate() {
            curves[[i, l, j]] = v;
        }
    }
    Ok(curves)
}

pub fn write_scalars(path: &Path, scalars: &Array2<f64>) -> Result<()> {
    let (n, q) = scalars.dim();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample".to_string()];
    header.extend((0..q).map(|j| format!("u{j}")));
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec = vec![i.to_string()];
        rec.extend((0..q).map(|j| scalars[[i, j]].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scalars(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let header_len = r.headers()?.len();
    if header_len < 1 {
        return Err(Error::Degenerate("scalars file has no columns".into()));
    }
    let q = header_len - 1;
    let mut rows: Vec<(usize, Vec<f64>)> = vec![];
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != header_len {
            return Err(Error::Degenerate("ragged scalars record".into()));
        }
        let i = parse_usize(rec.get(0).unwrap())?;
        let vals = rec
            .iter()
            .skip(1)
            .map(parse_f64)
            .collect::<Result<Vec<f64>>>()?;
        rows.push((i, vals));
    }
    rows.sort_by_key(|(i, _)| *i);
    for (expect, (i, _)) in rows.iter().enumerate() {
        if *i != expect {
            return Err(Error::Dimension(format!(
                "scalars sample indices not contiguous (missing {expect})"
            )));
        }
    }
    let n = rows.len();
    let mut scalars = Array2::zeros((n, q));
    for (i, vals) in rows {
        for (j, v) in vals.into_iter().enumerate() {
            scalars[[i, j]] = v;
        }
    }
    Ok(scalars)
}

pub fn write_response(path: &Path, response: &Array1<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample", "y"])?;
    for (i, y) in response.iter().enumerate() {
        w.write_record([i.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_response(path: &Path) -> Result<Array1<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows: Vec<(usize, f64)> = vec![];
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Degenerate("response records need sample,y".into()));
        }
        rows.push((
            parse_usize(rec.get(0).unwrap())?,
            parse_f64(rec.get(1).unwrap())?,
        ));
    }
    rows.sort_by_key(|(i, _)| *i);
    for (expect, (i, _)) in rows.iter().enumerate() {
        if *i != expect {
            return Err(Error::Dimension(format!(
                "response sample indices not contiguous (missing {expect})"
            )));
        }
    }
    Ok(Array1::from_iter(rows.into_iter().map(|(_, y)| y)))
}

/// Writes the three dataset files into `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_curves(&dir.join(CURVES_FILE), &data.curves)?;
    write_scalars(&dir.join(SCALARS_FILE), &data.scalars)?;
    write_response(&dir.join(RESPONSE_FILE), &data.response)?;
    Ok(())
}

/// Reads the three dataset files from `dir` and validates consistency.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let curves = read_curves(&dir.join(CURVES_FILE))?;
    let scalars = read_scalars(&dir.join(SCALARS_FILE))?;
    let response = read_response(&dir.join(RESPONSE_FILE))?;
    Dataset::new(curves, scalars, response)
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Degenerate(format!("bad index field '{s}'")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Degenerate(format!("bad float field '{s}'")))
}

/// 64-bit FNV-1a over raw bytes, as fixed-width hex. Used for the sidecar
/// checksums of written files.
pub fn fnv1a64(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

pub fn file_checksum(path: &Path) -> Result<String> {
    Ok(fnv1a64(&std::fs::read(path)?))
}

/// Provenance sidecar written next to generated datasets.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSidecar {
    pub config: crate::simgen::SimConfig,
    pub sigma: f64,
    pub gamma_true: [f64; 2],
    pub true_support: Vec<usize>,
    pub checksums: BTreeMap<String, String>,
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
