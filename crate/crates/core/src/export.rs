//! Plot-ready CSV and JSON writers. Floats are written with 17 significant
//! digits so every file round-trips exactly and identical runs give
//! byte-identical output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytic::{FrequencyRoots, ResponsePoint};
use crate::cbc::CbcBranch;
use crate::colloc::PeriodicSolution;
use crate::error::Result;
use crate::ident::{ConfidenceBand, Dataset, FitResult, N_PARAMS};
use crate::openloop::SweepPoint;
use crate::plant::SimulationRecord;
use crate::signal::fmt17;

pub const SIMULATION_HEADER: [&str; 5] = ["t", "x", "forcing", "base_accel", "noise"];
pub const S_CURVE_HEADER: [&str; 4] = ["x_amp", "delta_st", "theta", "stable_hint"];
pub const FRF_HEADER: [&str; 3] = ["zeta", "x_amp", "branch_index"];
pub const COLLOC_HEADER: [&str; 7] = ["delta_st", "omega", "x_amp", "theta", "stable", "mult1_mod", "mult2_mod"];
pub const CBC_HEADER: [&str; 8] = ["b1_target", "phi", "base_accel_amp", "x_amp", "theta", "hh_residual", "fp_iters", "accepted"];
pub const SWEEP_HEADER: [&str; 6] = ["freq_hz", "forcing_amp", "base_accel_amp", "x_amp", "theta", "jumped"];
pub const DATASET_HEADER: [&str; 3] = ["a_base", "zeta", "x_amp"];
pub const BAND_HEADER: [&str; 4] = ["x_amp", "a_base", "lower", "upper"];

fn writer<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    Ok(out)
}

pub fn write_simulation<W: Write>(rec: &SimulationRecord, w: W) -> Result<()> {
    let mut out = writer(w, &SIMULATION_HEADER)?;
    for i in 0..rec.len() {
        out.write_record([fmt17(rec.times[i]), fmt17(rec.x[i]), fmt17(rec.forcing[i]), fmt17(rec.base_accel[i]), fmt17(rec.noise[i])])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_s_curve<W: Write>(curve: &[ResponsePoint], w: W) -> Result<()> {
    let mut out = writer(w, &S_CURVE_HEADER)?;
    for p in curve {
        out.write_record([fmt17(p.x_amp), fmt17(p.delta_st), fmt17(p.theta), p.stable_hint.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// One row per amplitude root; `branch_index` counts roots from the
/// smallest amplitude upwards at each ratio.
pub fn write_frf<W: Write>(frf: &[FrequencyRoots], w: W) -> Result<()> {
    let mut out = writer(w, &FRF_HEADER)?;
    for r in frf {
        for (k, x) in r.roots.iter().enumerate() {
            out.write_record([fmt17(r.zeta), fmt17(*x), k.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_colloc_branch<W: Write>(points: &[PeriodicSolution], w: W) -> Result<()> {
    let mut out = writer(w, &COLLOC_HEADER)?;
    for p in points {
        out.write_record([
            fmt17(p.delta_st),
            fmt17(p.omega),
            fmt17(p.x_amp()),
            fmt17(p.theta()),
            p.stable.to_string(),
            fmt17(p.multipliers[0].modulus()),
            fmt17(p.multipliers[1].modulus()),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_cbc_branch<W: Write>(branch: &CbcBranch, w: W) -> Result<()> {
    let mut out = writer(w, &CBC_HEADER)?;
    for p in &branch.points {
        out.write_record([
            fmt17(p.b1_target),
            fmt17(p.phi),
            fmt17(p.base_accel_amp),
            fmt17(p.x_amp),
            fmt17(p.theta),
            fmt17(p.hh_residual),
            p.fp_iters_used.to_string(),
            p.accepted.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep<W: Write>(points: &[SweepPoint], w: W) -> Result<()> {
    let mut out = writer(w, &SWEEP_HEADER)?;
    for p in points {
        out.write_record([
            fmt17(p.freq_hz),
            fmt17(p.forcing_amp),
            fmt17(p.base_accel_amp),
            fmt17(p.x_amp),
            fmt17(p.theta),
            p.jumped.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(data: &Dataset, w: W) -> Result<()> {
    let mut out = writer(w, &DATASET_HEADER)?;
    for p in &data.points {
        out.write_record([fmt17(p.a_base), fmt17(p.zeta), fmt17(p.x_amp)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_band<W: Write>(band: &ConfidenceBand, w: W) -> Result<()> {
    let mut out = writer(w, &BAND_HEADER)?;
    for p in &band.points {
        out.write_record([fmt17(p.x_amp), fmt17(p.a_base), fmt17(p.lower), fmt17(p.upper)])?;
    }
    out.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize, W: Write>(value: &T, mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Creates `path` and hands a buffered writer to `f`.
pub fn to_file<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// One row of the identification summary: seed-averaged identified values
/// and ESTDs, with the across-seed standard deviation of the identified
/// values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub noise: String,
    pub source: String,
    pub params: [f64; N_PARAMS],
    pub estd: [f64; N_PARAMS],
    pub scatter: [f64; N_PARAMS],
    pub n_seeds: usize,
}

impl TableRow {
    /// Aggregates fits of one (noise, source) cell. An infinite ESTD in any
    /// seed makes the averaged ESTD infinite.
    pub fn aggregate(noise: &str, source: &str, fits: &[&FitResult]) -> Self {
        let n = fits.len();
        let mut params = [f64::NAN; N_PARAMS];
        let mut estd = [f64::NAN; N_PARAMS];
        let mut scatter = [f64::NAN; N_PARAMS];
        if n > 0 {
            for j in 0..N_PARAMS {
                let vals: Vec<f64> = fits.iter().map(|f| f.p_star.to_array()[j]).collect();
                let mean = vals.iter().sum::<f64>() / n as f64;
                params[j] = mean;
                estd[j] = fits.iter().map(|f| f.estd[j]).sum::<f64>() / n as f64;
                scatter[j] = if n > 1 {
                    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
            }
        }
        Self {
            noise: noise.to_string(),
            source: source.to_string(),
            params,
            estd,
            scatter,
            n_seeds: n,
        }
    }
}

pub fn table_header() -> Vec<String> {
    let short = ["mu", "nu", "rho", "b", "c"];
    let long = ["mu_t", "nu_t", "rho_t", "b_t", "c_a"];
    let mut h = vec!["noise".to_string(), "source".to_string()];
    for j in 0..N_PARAMS {
        h.push(long[j].to_string());
        h.push(format!("estd_{}", short[j]));
    }
    for s in short {
        h.push(format!("scatter_{s}"));
    }
    h.push("n_seeds".to_string());
    h
}

pub fn write_table<W: Write>(rows: &[TableRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(table_header())?;
    for r in rows {
        let mut rec = vec![r.noise.clone(), r.source.clone()];
        for j in 0..N_PARAMS {
            rec.push(fmt17(r.params[j]));
            rec.push(fmt17(r.estd[j]));
        }
        rec.extend(r.scatter.iter().map(|v| fmt17(*v)));
        rec.push(r.n_seeds.to_string());
        out.write_record(rec)?;
    }
    out.flush()?;
    Ok(())
}
