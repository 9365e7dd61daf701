//! Stage execution, per-job output layout and the run manifest.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cbc_core::analytic::{self, Fold, TildeParams};
use cbc_core::colloc::{self, CollocOptions, PeriodicSolution};
use cbc_core::compare::{median, spearman};
use cbc_core::experiment::{self, TrialConfig};
use cbc_core::export::{self, to_file, TableRow};
use cbc_core::ident::{self, FitResult, Source};
use cbc_core::openloop::{self, Escape};

use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Analytic S-curve, frequency response and folds.
    Analytic,
    /// Harmonic-balance collocation branch with Floquet stability.
    Colloc,
    /// Open-loop amplitude sweeps and the low-amplitude modal estimate.
    Sweep,
    /// CBC amplitude sweep.
    Cbc,
    /// Both methods per job, identification, table and comparison.
    Identify,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Analytic, Stage::Colloc, Stage::Sweep, Stage::Cbc, Stage::Identify];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Analytic => "analytic",
            Stage::Colloc => "colloc",
            Stage::Sweep => "sweep",
            Stage::Cbc => "cbc",
            Stage::Identify => "identify",
        }
    }

    fn per_job(self) -> bool {
        matches!(self, Stage::Sweep | Stage::Cbc | Stage::Identify)
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub stages: Vec<Stage>,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub command: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub files: Vec<String>,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub key: String,
    pub level_name: String,
    pub level: f64,
    pub seed: u64,
    pub files: Vec<String>,
    pub notes: Vec<String>,
    pub error: Option<String>,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub scenario_name: String,
    pub scenario_sha256: String,
    pub seeds: Vec<u64>,
    pub levels: Vec<(String, f64)>,
    /// Normalized plant parameters the identified values are compared with.
    pub truth: TildeParams,
    pub stages: Vec<StageRecord>,
    pub jobs: Vec<JobRecord>,
    pub wall_clock_s: f64,
}

impl RunManifest {
    pub fn failed_jobs(&self) -> usize {
        self.jobs.iter().filter(|j| j.error.is_some()).count()
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FITS_FILE: &str = "fits.json";
pub const TABLE_FILE: &str = "table.csv";
pub const COMPARISON_FILE: &str = "comparison.json";

/// Identification output of one job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobFits {
    pub level_name: String,
    pub level: f64,
    pub seed: u64,
    pub openloop: Option<FitResult>,
    pub cbc: Option<FitResult>,
}

fn rel(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

/// Runs the requested stages and writes `manifest.json`. Job failures are
/// recorded in the manifest rather than aborting the run.
pub fn execute(scn: &Scenario, sha256: &str, opts: &RunOptions) -> Result<RunManifest> {
    let t0 = Instant::now();
    std::fs::create_dir_all(&opts.out_dir).with_context(|| format!("creating {}", opts.out_dir.display()))?;
    let mut stages: Vec<Stage> = opts.stages.clone();
    stages.sort();
    stages.dedup();
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: opts.command.clone(),
        scenario_name: scn.name.clone(),
        scenario_sha256: sha256.to_string(),
        seeds: opts.seeds.clone(),
        levels: scn.levels(),
        truth: scn.params().tilde(scn.omega_n()),
        stages: Vec::new(),
        jobs: Vec::new(),
        wall_clock_s: 0.0,
    };
    let out = &opts.out_dir;
    for &stage in stages.iter().filter(|s| !s.per_job()) {
        let t = Instant::now();
        let files = match stage {
            Stage::Analytic => analytic_stage(scn, out)?,
            Stage::Colloc => colloc_stage(scn, out)?,
            _ => unreachable!(),
        };
        manifest.stages.push(StageRecord {
            stage,
            files: files.iter().map(|f| rel(out, f)).collect(),
            wall_clock_s: t.elapsed().as_secs_f64(),
        });
    }
    let job_stages: Vec<Stage> = stages.iter().copied().filter(|s| s.per_job()).collect();
    if !job_stages.is_empty() {
        let t = Instant::now();
        let keys: Vec<(String, f64, u64)> = scn
            .levels()
            .into_iter()
            .flat_map(|(name, level)| opts.seeds.iter().map(move |&s| (name.clone(), level, s)))
            .collect();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.jobs).build()?;
        let cfg = scn.trial_config();
        // Collected in key order whatever the completion order.
        let records: Vec<JobRecord> =
            pool.install(|| keys.par_iter().map(|(name, level, seed)| run_job(scn, &cfg, out, &job_stages, name, *level, *seed)).collect());
        manifest.jobs = records;
        let mut files: Vec<String> = Vec::new();
        if job_stages.contains(&Stage::Identify) {
            let fits = load_fits(out, &manifest.jobs)?;
            files = write_summary(manifest.truth, out, &fits)?.iter().map(|f| rel(out, f)).collect();
        }
        for s in job_stages {
            manifest.stages.push(StageRecord {
                stage: s,
                files: if s == Stage::Identify { files.clone() } else { Vec::new() },
                wall_clock_s: t.elapsed().as_secs_f64(),
            });
        }
    }
    manifest.wall_clock_s = t0.elapsed().as_secs_f64();
    to_file(&out.join(MANIFEST_FILE), |w| export::write_json(&manifest, w))?;
    Ok(manifest)
}

fn analytic_stage(scn: &Scenario, out: &Path) -> Result<Vec<PathBuf>> {
    let a = &scn.analytic;
    let omega = 2.0 * PI * scn.control.frequency_hz;
    let tilde = scn.params().tilde(omega);
    let xs = analytic::x_grid(a.x_max, a.points)?;
    let curve = analytic::s_curve(&tilde, &xs)?;
    let zetas: Vec<f64> = (0..a.zeta_points).map(|i| a.zeta_lo + (a.zeta_hi - a.zeta_lo) * i as f64 / (a.zeta_points - 1) as f64).collect();
    let frf = analytic::frequency_response_on(&tilde, a.frf_forcing, &zetas, &xs)?;
    let folds = analytic::find_folds_on(&tilde, &xs)?;
    let s_path = out.join("s_curve.csv");
    let f_path = out.join("frf.csv");
    let j_path = out.join("analytic.json");
    to_file(&s_path, |w| export::write_s_curve(&curve, w))?;
    to_file(&f_path, |w| export::write_frf(&frf, w))?;
    let summary = AnalyticSummary {
        tilde,
        frf_forcing: a.frf_forcing,
        folds: folds.iter().map(|f| FoldRecord::new(*f, scn.plant.c_a_true)).collect(),
    };
    to_file(&j_path, |w| export::write_json(&summary, w))?;
    Ok(vec![s_path, f_path, j_path])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub x_amp: f64,
    pub delta_st: f64,
    /// Base-acceleration amplitude at the fold, `delta_st / c_a`.
    pub base_accel: f64,
}

impl FoldRecord {
    fn new(f: Fold, c_a: f64) -> Self {
        Self {
            x_amp: f.x_amp,
            delta_st: f.delta_st,
            base_accel: f.delta_st / c_a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticSummary {
    pub tilde: TildeParams,
    pub frf_forcing: f64,
    pub folds: Vec<FoldRecord>,
}

fn colloc_stage(scn: &Scenario, out: &Path) -> Result<Vec<PathBuf>> {
    let co = &scn.colloc;
    let params = scn.params();
    let omega = 2.0 * PI * scn.control.frequency_hz;
    let opts = CollocOptions {
        n_harm: co.n_harm,
        ..Default::default()
    };
    let xs: Vec<f64> = (1..=co.points).map(|i| co.x_max * i as f64 / co.points as f64).collect();
    let mut branch: Vec<PeriodicSolution> = Vec::with_capacity(xs.len());
    for &x in &xs {
        let sol = colloc::solve_at_amplitude_with(&params, omega, x, branch.last(), &opts).with_context(|| format!("collocation at X = {x}"))?;
        branch.push(sol);
    }
    let mut folds = Vec::new();
    for i in colloc::turning_indices(&branch) {
        let f = colloc::refine_fold(&params, omega, xs[i - 1], xs[i + 1])?;
        folds.push(FoldRecord::new(
            Fold {
                x_amp: f.x_amp(),
                delta_st: f.delta_st,
            },
            scn.plant.c_a_true,
        ));
    }
    let b_path = out.join("colloc_branch.csv");
    let j_path = out.join("colloc.json");
    to_file(&b_path, |w| export::write_colloc_branch(&branch, w))?;
    to_file(&j_path, |w| export::write_json(&folds, w))?;
    Ok(vec![b_path, j_path])
}

/// Per-job directory name, `N{k}_s{seed}`.
pub fn job_key(level_name: &str, seed: u64) -> String {
    format!("{level_name}_s{seed}")
}

fn run_job(scn: &Scenario, cfg: &TrialConfig, out: &Path, stages: &[Stage], name: &str, level: f64, seed: u64) -> JobRecord {
    let t = Instant::now();
    let key = job_key(name, seed);
    let dir = out.join("jobs").join(&key);
    let mut files = Vec::new();
    let mut notes = Vec::new();
    let error = job_body(scn, cfg, &dir, stages, name, level, seed, &mut files, &mut notes).err().map(|e| format!("{e:#}"));
    eprintln!("job {key}: {} in {:.1} s", if error.is_some() { "failed" } else { "done" }, t.elapsed().as_secs_f64());
    JobRecord {
        key,
        level_name: name.to_string(),
        level,
        seed,
        files: files.iter().map(|f| rel(out, f)).collect(),
        notes,
        error,
        wall_clock_s: t.elapsed().as_secs_f64(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SweepSummary {
    up_jumps: Vec<f64>,
    down_jumps: Vec<f64>,
    up_escape: Option<Escape>,
    down_escape: Option<Escape>,
}

#[allow(clippy::too_many_arguments)]
fn job_body(
    scn: &Scenario,
    cfg: &TrialConfig,
    dir: &Path,
    stages: &[Stage],
    name: &str,
    level: f64,
    seed: u64,
    files: &mut Vec<PathBuf>,
    notes: &mut Vec<String>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let noise = cfg.noise.with_level(level).with_seed(seed);
    let mut write = |file: &str, f: &dyn Fn(&mut std::io::BufWriter<std::fs::File>) -> cbc_core::Result<()>| -> Result<()> {
        let p = dir.join(file);
        to_file(&p, f)?;
        files.push(p);
        Ok(())
    };
    if stages.contains(&Stage::Sweep) {
        let s = &scn.sweeps;
        let modal = openloop::estimate_linear_modal(
            &cfg.plant,
            &noise,
            cfg.force_for_accel(s.linear_a_base),
            (s.linear_f_lo_hz, s.linear_f_hi_hz),
            s.linear_f_step_hz,
            &cfg.openloop.settings,
        );
        match modal {
            Ok(m) => write("modal.json", &|w| export::write_json(&m, w))?,
            Err(e) => notes.push(format!("modal estimate failed: {e}")),
        }
    }
    if stages.contains(&Stage::Identify) {
        let r = experiment::run_trial(cfg, level, seed)?;
        notes.extend(r.notes.iter().cloned());
        write_sweeps(&r.openloop, &mut write)?;
        write("cbc_branch.csv", &|w| export::write_cbc_branch(&r.cbc, w))?;
        write("data_openloop.csv", &|w| export::write_dataset(&r.ol_data, w))?;
        write("data_cbc.csv", &|w| export::write_dataset(&r.cbc_data, w))?;
        let zeta = cfg.zeta();
        let xs = analytic::x_grid(scn.colloc.x_max, 200)?;
        for (tag, fit) in [("openloop", &r.ol_fit), ("cbc", &r.cbc_fit)] {
            if let Some(f) = fit {
                let band = ident::confidence_band(f, zeta, &xs, scn.identification.band_level)?;
                if let Some(wn) = &band.warning {
                    notes.push(format!("{tag} band: {wn}"));
                }
                write(&format!("band_{tag}.csv"), &|w| export::write_band(&band, w))?;
            }
        }
        let fits = JobFits {
            level_name: name.to_string(),
            level,
            seed,
            openloop: r.ol_fit.clone(),
            cbc: r.cbc_fit.clone(),
        };
        write(FITS_FILE, &|w| export::write_json(&fits, w))?;
    } else {
        if stages.contains(&Stage::Sweep) {
            let ol = experiment::run_openloop(cfg, &noise)?;
            for (n, d) in [("up", &ol.up.diagnostic), ("approach", &ol.approach.diagnostic), ("down", &ol.down.diagnostic)] {
                if let Some(d) = d {
                    notes.push(format!("open-loop {n} sweep: {d}"));
                }
            }
            write_sweeps(&ol, &mut write)?;
        }
        if stages.contains(&Stage::Cbc) {
            let br = experiment::run_cbc(cfg, &noise)?;
            if let Some(d) = &br.diagnostic {
                notes.push(format!("CBC sweep: {d}"));
            }
            write("cbc_branch.csv", &|w| export::write_cbc_branch(&br, w))?;
        }
    }
    Ok(())
}

fn write_sweeps<F>(ol: &openloop::BistableSweeps, write: &mut F) -> Result<()>
where
    F: FnMut(&str, &dyn Fn(&mut std::io::BufWriter<std::fs::File>) -> cbc_core::Result<()>) -> Result<()>,
{
    write("sweep_up.csv", &|w| export::write_sweep(&ol.up.points, w))?;
    write("sweep_approach.csv", &|w| export::write_sweep(&ol.approach.points, w))?;
    write("sweep_down.csv", &|w| export::write_sweep(&ol.down.points, w))?;
    let summary = SweepSummary {
        up_jumps: ol.up.jump_forcings(),
        down_jumps: ol.down.jump_forcings(),
        up_escape: ol.up.escape,
        down_escape: ol.down.escape,
    };
    write("sweeps.json", &|w| export::write_json(&summary, w))
}

/// Reads the fits of every successful job listed in the manifest.
pub fn load_fits(out: &Path, jobs: &[JobRecord]) -> Result<Vec<JobFits>> {
    let mut all = Vec::new();
    for j in jobs.iter().filter(|j| j.error.is_none()) {
        let p = out.join("jobs").join(&j.key).join(FITS_FILE);
        if p.exists() {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            all.push(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?);
        }
    }
    Ok(all)
}

/// Seed statistics of one identification source at one noise level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub n_fits: usize,
    pub median_mu_t: f64,
    /// Median over seeds of `|mu_t - truth| / |truth|`.
    pub median_rel_mu_error: f64,
}

/// Open-loop against CBC agreement of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub seed: u64,
    pub delta_mu_t: f64,
    /// Twice the sum of the two ESTDs of `mu_t`.
    pub bound: f64,
    pub within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelComparison {
    pub level_name: String,
    pub level: f64,
    pub openloop: SourceStats,
    pub cbc: SourceStats,
    pub agreement: Vec<Agreement>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub truth: TildeParams,
    pub levels: Vec<LevelComparison>,
    /// Spearman correlation of the open-loop median error against the
    /// noise level; null with fewer than two levels.
    pub openloop_trend: Option<f64>,
    pub cbc_trend: Option<f64>,
}

fn stats(fits: &[&FitResult], truth: f64) -> SourceStats {
    let mus: Vec<f64> = fits.iter().map(|f| f.p_star.mu_t).collect();
    let errs: Vec<f64> = mus.iter().map(|m| ((m - truth) / truth).abs()).collect();
    SourceStats {
        n_fits: fits.len(),
        median_mu_t: median(&mus),
        median_rel_mu_error: median(&errs),
    }
}

/// Table rows and the method comparison, with levels in first-seen order.
pub fn summarize(truth: TildeParams, fits: &[JobFits]) -> (Vec<TableRow>, Comparison) {
    let mut names: Vec<(String, f64)> = Vec::new();
    for f in fits {
        if !names.iter().any(|(n, _)| *n == f.level_name) {
            names.push((f.level_name.clone(), f.level));
        }
    }
    let mut rows = Vec::new();
    let mut levels = Vec::new();
    for (name, level) in names {
        let at: Vec<&JobFits> = fits.iter().filter(|f| f.level_name == name).collect();
        let ol: Vec<&FitResult> = at.iter().filter_map(|f| f.openloop.as_ref()).collect();
        let cb: Vec<&FitResult> = at.iter().filter_map(|f| f.cbc.as_ref()).collect();
        rows.push(TableRow::aggregate(&name, Source::OpenLoop.as_str(), &ol));
        rows.push(TableRow::aggregate(&name, Source::Cbc.as_str(), &cb));
        let agreement = at
            .iter()
            .filter_map(|f| {
                let (o, c) = (f.openloop.as_ref()?, f.cbc.as_ref()?);
                let delta = (o.p_star.mu_t - c.p_star.mu_t).abs();
                let bound = 2.0 * (o.estd[0] + c.estd[0]);
                Some(Agreement {
                    seed: f.seed,
                    delta_mu_t: delta,
                    bound,
                    within: delta <= bound,
                })
            })
            .collect();
        levels.push(LevelComparison {
            level_name: name,
            level,
            openloop: stats(&ol, truth.mu_t),
            cbc: stats(&cb, truth.mu_t),
            agreement,
        });
    }
    let trend = |pick: fn(&LevelComparison) -> f64| {
        let x: Vec<f64> = levels.iter().map(|l| l.level).collect();
        let y: Vec<f64> = levels.iter().map(pick).collect();
        let r = spearman(&x, &y);
        r.is_finite().then_some(r)
    };
    let comparison = Comparison {
        truth,
        openloop_trend: trend(|l| l.openloop.median_rel_mu_error),
        cbc_trend: trend(|l| l.cbc.median_rel_mu_error),
        levels,
    };
    (rows, comparison)
}

/// Writes `table.csv` and `comparison.json` into `out`.
pub fn write_summary(truth: TildeParams, out: &Path, fits: &[JobFits]) -> Result<Vec<PathBuf>> {
    let (rows, cmp) = summarize(truth, fits);
    let t = out.join(TABLE_FILE);
    let c = out.join(COMPARISON_FILE);
    to_file(&t, |w| export::write_table(&rows, w))?;
    to_file(&c, |w| export::write_json(&cmp, w))?;
    Ok(vec![t, c])
}

/// Rebuilds the table and comparison from the manifest in `dir`.
pub fn table_from_manifest(dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let mp = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mp).with_context(|| format!("reading {}", mp.display()))?;
    let manifest: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", mp.display()))?;
    let fits = load_fits(dir, &manifest.jobs)?;
    std::fs::create_dir_all(out)?;
    write_summary(manifest.truth, out, &fits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cbc_core::ident::IdParams;

    fn fit(mu: f64, estd: f64) -> FitResult {
        FitResult {
            p_star: IdParams { mu_t: mu, ..IdParams::GENERIC_INIT },
            residual: 0.0,
            estd: [estd; 5],
            covariance: [[0.0; 5]; 5],
            m: 10,
            converged: true,
            singular_flags: [false; 5],
            evaluations: 1,
        }
    }

    fn job(name: &str, level: f64, seed: u64, ol: f64, cb: f64) -> JobFits {
        JobFits {
            level_name: name.into(),
            level,
            seed,
            openloop: Some(fit(ol, 0.01)),
            cbc: Some(fit(cb, 0.01)),
        }
    }

    #[test]
    fn summary_rows_follow_level_order() {
        let truth = experiment::NOMINAL_TILDE;
        let fits = vec![
            job("N0", 0.0, 0, 0.30, 0.30),
            job("N0", 0.0, 1, 0.31, 0.30),
            job("N3", 300.0, 0, 0.45, 0.31),
            job("N6", 600.0, 0, 0.60, 0.29),
        ];
        let (rows, cmp) = summarize(truth, &fits);
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].noise, "N0");
        assert_eq!(rows[0].n_seeds, 2);
        assert_eq!(rows[5].noise, "N6");
        assert_eq!(cmp.levels[0].agreement.len(), 2);
        assert!(cmp.levels[0].agreement.iter().all(|a| a.within));
        assert!(!cmp.levels[1].agreement[0].within);
        assert_eq!(cmp.openloop_trend, Some(1.0));
    }

    #[test]
    fn empty_summary() {
        let (rows, cmp) = summarize(experiment::NOMINAL_TILDE, &[]);
        assert!(rows.is_empty());
        assert!(cmp.levels.is_empty());
        assert_eq!(cmp.openloop_trend, None);
    }

    #[test]
    fn job_keys() {
        assert_eq!(job_key("N6", 3), "N6_s3");
    }
}
