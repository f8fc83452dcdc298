//! Runs a configuration and writes its output files.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use wqed_core::collision::{prepare_all_excited, prepare_symmetric_dicke, CollisionRun, ObserverSchedule};
use wqed_core::markov::{build_spec, dicke_observables, evolve, LindbladMode};
use wqed_core::observables::{attach_rates, dicke_state, FieldProfile, TimeSeriesRecord};
use wqed_core::{EmitterDensityMatrix, C64};

use crate::compare::{compare_series, Series};
use crate::config::{InitialState, Observable, RunConfig};
use crate::output::{write_metadata, write_profile, write_series, RunMetadata};
use crate::CliError;

/// Results of one run, before or after writing.
pub struct RunOutput {
    pub records: Vec<TimeSeriesRecord>,
    pub profiles: Vec<FieldProfile>,
    pub metadata: RunMetadata,
}

impl RunOutput {
    pub fn series(&self) -> Series {
        Series {
            t: self.records.iter().map(|r| r.t).collect(),
            n_exc: self.records.iter().map(|r| r.n_exc).collect(),
        }
    }
}

fn emitter_reference(cfg: &RunConfig) -> Vec<C64> {
    let n = cfg.n_emitters;
    match cfg.initial_state {
        InitialState::AllExcited => {
            let mut v = vec![C64::new(0.0, 0.0); 1 << n];
            v[(1 << n) - 1] = C64::new(1.0, 0.0);
            v
        }
        InitialState::SymmetricDicke => dicke_state(n, n / 2),
    }
}

fn metadata(cfg: &RunConfig, solver: &str) -> RunMetadata {
    RunMetadata {
        config: cfg.clone(),
        solver: solver.into(),
        version: wqed_core::VERSION.into(),
        ell: cfg.ell(),
        dt: cfg.gamma_dt / cfg.gamma,
        n_steps: 0,
        cumulative_discarded: 0.0,
        final_norm_sq: 1.0,
        max_bond_dim: 1,
        bond_saturation_step: None,
        wall_time_s: 0.0,
        warnings: Vec::new(),
        files: Vec::new(),
    }
}

/// Delayed dynamics by the collision model.
pub fn simulate_collision(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let params = cfg.model_params();
    let mut meta = metadata(cfg, "collision");
    meta.warnings = params.validate()?;
    let initial = match cfg.initial_state {
        InitialState::AllExcited => prepare_all_excited(&params)?,
        InitialState::SymmetricDicke => prepare_symmetric_dicke(&params)?,
    };
    let steps = params.n_steps();
    let stride = cfg.sample_stride.unwrap_or(params.ell).max(1);
    let profile_steps: Vec<usize> = cfg
        .profile_times
        .iter()
        .map(|&gt| ((gt / cfg.gamma_dt).round() as usize).min(steps))
        .collect();
    let schedule = ObserverSchedule {
        stride,
        every_step: true,
        emitter_state: cfg.wants(Observable::EmitterState),
        in_out_entropy: cfg.wants(Observable::InOutEntropy),
        field: cfg.wants(Observable::Field),
        profile_steps: profile_steps.clone(),
        survival_reference: cfg.wants(Observable::Survival).then(|| emitter_reference(cfg)),
        survival_every_step: true,
    };
    let mut sim = CollisionRun::new(params.clone(), initial)?;
    let mut records = vec![sim.record(&schedule, true)?];
    let mut profiles = Vec::new();
    for k in 1..=steps {
        sim.advance()?;
        let chi = sim.state().max_bond_dim();
        if chi >= cfg.chi_max && meta.bond_saturation_step.is_none() {
            warn!("bond dimension reached chi_max = {} at step {k}", cfg.chi_max);
            meta.bond_saturation_step = Some(k);
            meta.warnings.push(format!("bond dimension saturated at step {k}"));
        }
        meta.max_bond_dim = meta.max_bond_dim.max(chi);
        let heavy = k % stride == 0 || k == steps || profile_steps.contains(&k);
        let mut rec = sim.record(&schedule, heavy)?;
        if let Some(p) = rec.profile.take() {
            profiles.push(p);
        }
        records.push(rec);
        if k % (stride * 10) == 0 {
            info!("step {k}/{steps}, N_exc = {:.6}, chi = {chi}", records[records.len() - 1].n_exc);
        }
    }
    if profile_steps.contains(&0) {
        if let Some(p) = records[0].profile.take() {
            profiles.insert(0, p);
        }
    }
    attach_rates(&mut records);
    meta.n_steps = steps;
    meta.cumulative_discarded = sim.state().cumulative_discarded();
    meta.final_norm_sq = sim.state().norm_sqr();
    meta.wall_time_s = start.elapsed().as_secs_f64();
    if let Some(path) = &cfg.checkpoint {
        let f = std::fs::File::create(path).map_err(CliError::io(path))?;
        sim.state().write_checkpoint(std::io::BufWriter::new(f))?;
    }
    Ok(RunOutput { records, profiles, metadata: meta })
}

/// Zero-delay dynamics by the master equation, sampled every `gamma_dt`.
pub fn simulate_markov(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut meta = metadata(cfg, "markov");
    let spec = build_spec(cfg.n_emitters, cfg.gamma, cfg.phi, LindbladMode::General)?;
    let psi = emitter_reference(cfg);
    let rho0 = EmitterDensityMatrix::from_pure(cfg.n_emitters, &psi).map_err(wqed_core::MarkovError::from)?;
    let steps = (cfg.gamma_t_max / cfg.gamma_dt).ceil() as usize;
    let dt = cfg.gamma_dt / cfg.gamma;
    let grid: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let traj = evolve(&spec, &rho0, &grid)?;
    let reference = cfg.wants(Observable::Survival).then_some(psi.as_slice());
    let mut records = dicke_observables(cfg.gamma, &grid, &traj, reference)?;
    if !cfg.wants(Observable::EmitterState) {
        for r in &mut records {
            r.s_ef = None;
            r.negativity = None;
            r.sector_populations = None;
            r.singlets = None;
        }
    }
    meta.n_steps = steps;
    meta.wall_time_s = start.elapsed().as_secs_f64();
    Ok(RunOutput {
        records,
        profiles: Vec::new(),
        metadata: meta,
    })
}

/// Write series, profiles and metadata into `dir`.
pub fn write_outputs(dir: &Path, out: &mut RunOutput, n_emitters: usize) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let name = format!("{}.csv", out.metadata.solver);
    write_series(&dir.join(&name), &out.records, n_emitters)?;
    out.metadata.files = vec![name];
    for p in &out.profiles {
        let name = format!("profile_step{}.csv", p.step);
        write_profile(&dir.join(&name), p)?;
        out.metadata.files.push(name);
    }
    write_metadata(&dir.join("metadata.json"), &out.metadata)
}

/// Run `cfg` with the solver its `eta` selects and write the results to
/// `cfg.output_dir`.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let mut out = if cfg.is_markovian() {
        simulate_markov(cfg)?
    } else {
        simulate_collision(cfg)?
    };
    write_outputs(&cfg.output_dir, &mut out, cfg.n_emitters)?;
    Ok(out)
}

/// Stable per-build name for a sweep point.
pub fn point_name(cfg: &RunConfig) -> String {
    let mut h = DefaultHasher::new();
    serde_json::to_string(cfg).expect("serializable").hash(&mut h);
    format!(
        "N{}_eta{}_gdt{}_chi{}_{:016x}",
        cfg.n_emitters,
        cfg.eta,
        cfg.gamma_dt,
        cfg.chi_max,
        h.finish()
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub name: String,
    pub n_emitters: usize,
    pub eta: f64,
    pub gamma_dt: f64,
    pub chi_max: usize,
    pub cumulative_discarded: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub points: Vec<SweepPoint>,
    /// Largest relative `N_exc` deviation over all pairs of points with the
    /// same emitter number.
    pub max_pairwise_deviation: Option<f64>,
    pub pairs: Vec<(String, String, f64)>,
}

/// Run every sweep point on `threads` workers; each point writes into its
/// own subdirectory of `cfg.output_dir`.
pub fn run_sweep(cfg: &RunConfig, threads: usize) -> Result<SweepSummary, CliError> {
    cfg.validate()?;
    let points = cfg.sweep_points();
    for p in &points {
        p.validate()?;
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<(SweepPoint, Series), CliError>>>> =
        Mutex::new((0..points.len()).map(|_| None).collect());
    let base: PathBuf = cfg.output_dir.clone();
    std::thread::scope(|s| {
        for _ in 0..threads.max(1).min(points.len()) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= points.len() {
                    break;
                }
                let mut p = points[k].clone();
                let name = point_name(&p);
                p.output_dir = base.join(&name);
                if let Some(c) = &p.checkpoint {
                    p.checkpoint = Some(p.output_dir.join(c.file_name().unwrap_or(c.as_os_str())));
                }
                info!("sweep point {name}");
                let r = run_experiment(&p).map(|out| {
                    let meta = &out.metadata;
                    let point = SweepPoint {
                        name,
                        n_emitters: p.n_emitters,
                        eta: p.eta,
                        gamma_dt: p.gamma_dt,
                        chi_max: p.chi_max,
                        cumulative_discarded: meta.cumulative_discarded,
                        wall_time_s: meta.wall_time_s,
                    };
                    (point, out.series())
                });
                results.lock().expect("no poisoned workers")[k] = Some(r);
            });
        }
    });
    let mut done = Vec::new();
    for r in results.into_inner().expect("no poisoned workers") {
        done.push(r.expect("every point ran")?);
    }
    let mut pairs = Vec::new();
    for i in 0..done.len() {
        for j in i + 1..done.len() {
            if done[i].0.n_emitters != done[j].0.n_emitters {
                continue;
            }
            let d = compare_series(&done[i].1, &done[j].1, None)?;
            pairs.push((done[i].0.name.clone(), done[j].0.name.clone(), d.max_relative));
        }
    }
    let max_pairwise_deviation = pairs.iter().map(|p| p.2).reduce(f64::max);
    let summary = SweepSummary {
        points: done.into_iter().map(|d| d.0).collect(),
        max_pairwise_deviation,
        pairs,
    };
    std::fs::create_dir_all(&base).map_err(CliError::io(&base))?;
    let path = base.join("sweep_summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("serializable");
    std::fs::write(&path, text).map_err(CliError::io(&path))?;
    Ok(summary)
}
