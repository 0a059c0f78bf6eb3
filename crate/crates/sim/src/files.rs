//! Track, vehicle and dataset files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use gpmpcc_core::gp::GpDataset;
use gpmpcc_core::linalg::Mat;
use gpmpcc_core::track::Track;
use gpmpcc_core::vehicle::VehicleParams;

use crate::config::{RawConfig, Reader};
use crate::error::SimError;

/// Waypoints from a CSV file with an `x,y` header. `#` starts a comment line.
pub fn load_waypoints(path: &Path) -> Result<Vec<[f64; 2]>, SimError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| SimError::io(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<(f64, f64)>().enumerate() {
        let (x, y) = rec.map_err(|e| SimError::Format { path: path.into(), message: format!("row {}: {e}", i + 1) })?;
        out.push([x, y]);
    }
    Ok(out)
}

pub fn save_waypoints(path: &Path, points: &[[f64; 2]]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| SimError::io(path, e))?;
    w.write_record(["x", "y"]).map_err(|e| SimError::io(path, e))?;
    for p in points {
        w.serialize((p[0], p[1])).map_err(|e| SimError::io(path, e))?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

pub fn load_track(path: &Path, half_width: f64, closed: bool) -> Result<Track, SimError> {
    let pts = load_waypoints(path)?;
    Track::build(&pts, half_width, closed).map_err(|e| SimError::Format { path: path.into(), message: e.to_string() })
}

/// Vehicle parameters from a `[params]` TOML table; missing keys keep the
/// built-in nominal values.
pub fn load_vehicle(path: &Path) -> Result<VehicleParams, SimError> {
    let raw = RawConfig::load(path)?;
    let d = VehicleParams::default();
    let mut r = Reader::new(&raw);
    let p = VehicleParams {
        mass: r.f64("params.mass", d.mass),
        inertia_z: r.f64("params.inertia_z", d.inertia_z),
        lf: r.f64("params.lf", d.lf),
        lr: r.f64("params.lr", d.lr),
        bf: r.f64("params.bf", d.bf),
        cf: r.f64("params.cf", d.cf),
        df: r.f64("params.df", d.df),
        br: r.f64("params.br", d.br),
        cr: r.f64("params.cr", d.cr),
        dr: r.f64("params.dr", d.dr),
        cm1: r.f64("params.cm1", d.cm1),
        cm2: r.f64("params.cm2", d.cm2),
        cr0: r.f64("params.cr0", d.cr0),
        cr2: r.f64("params.cr2", d.cr2),
        steer_max: r.f64("params.steer_max", d.steer_max),
        ts: r.f64("params.ts", d.ts),
    };
    if let Err(e) = p.validate() {
        r.fail("params", e.to_string());
    }
    r.reject_unknown();
    r.finish()?;
    Ok(p)
}

/// Dataset as CSV: `z0..z{n−1},y0..y{m−1}`.
pub fn save_dataset(path: &Path, data: &GpDataset, header_comment: &str) -> Result<(), SimError> {
    let f = File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut f = BufWriter::new(f);
    writeln!(f, "# {header_comment}").map_err(|e| SimError::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    let mut header: Vec<String> = (0..data.input_dim()).map(|i| format!("z{i}")).collect();
    header.extend((0..data.output_dim()).map(|i| format!("y{i}")));
    w.write_record(&header).map_err(|e| SimError::io(path, e))?;
    for j in 0..data.len() {
        let mut row: Vec<String> = data.input(j).iter().map(|v| format!("{v:?}")).collect();
        row.extend(data.targets().row(j).iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(|e| SimError::io(path, e))?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<GpDataset, SimError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(|e| SimError::io(path, e))?;
    let header = rdr.headers().map_err(|e| SimError::io(path, e))?.clone();
    let nz = header.iter().filter(|h| h.starts_with('z')).count();
    let ny = header.len() - nz;
    let mut z = Vec::new();
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| SimError::io(path, e))?;
        let vals: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| SimError::Format { path: path.into(), message: e.to_string() })?;
        z.extend_from_slice(&vals[..nz]);
        y.extend_from_slice(&vals[nz..]);
    }
    let m = z.len() / nz.max(1);
    GpDataset::new(Mat::from_row_slice(m, nz, &z), Mat::from_row_slice(m, ny, &y)).map_err(|e| SimError::Format { path: path.into(), message: e.to_string() })
}
