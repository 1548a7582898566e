//! Batch experiments on the linkage surface: convergence to the billiard,
//! the certificate pipeline, passage statistics, scans, meshes and plots.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::billiard::{billiard_flow, BilliardState, BilliardTable};
use crate::contour::{count_positive_regions, Grid};
use crate::error::{Error, Result};
use crate::export::{write_csv, write_json, Svg};
use crate::geodesic::{integrate, pushforward_initial, random_initial, RunOptions, ZonePassage};
use crate::horizon::{finite_horizon_search, HorizonGrid, HorizonReport};
use crate::hyperbolicity::{
    anosov_certificate, estimate_kappa, lyapunov_probes, CertificateConfig, CertificateReport, KappaEstimate, KappaSampling, SurfaceSource,
};
use crate::linkage::{build_table, implicit_g, verify_assumptions, wall_component, AssumptionReport, AssumptionSampling, LinkageParams, LinkageSurface, SheetId};
use crate::rng::stream_rng;
use crate::surface::{marching_tetrahedra, Mesh};
use crate::surface::{curvature_blowup_scan, ScanGrid, ScanRow};
use crate::surface::FlattenedSurface;
use crate::torus::{torus_distance, TorusPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Converge,
    Anosov,
    Horizon,
    CurvatureScan,
    ZoneStats,
    Mesh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub params: LinkageParams,
    /// Strictly decreasing, in `(0, 1]`.
    pub eps_list: Vec<f64>,
    pub delta: f64,
    pub nu: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Trajectory or initial-condition count; each experiment has its own default.
    #[serde(default)]
    pub samples: Option<usize>,
    /// Integration time; each experiment has its own default.
    #[serde(default)]
    pub time: Option<f64>,
    #[serde(default)]
    pub convergence: ConvergenceFamily,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind, params: LinkageParams) -> Self {
        Self {
            experiment,
            params,
            eps_list: vec![0.2, 0.1, 0.05, 0.025],
            delta: 0.05,
            nu: 0.5,
            seed: 0,
            output_dir: PathBuf::from("out"),
            samples: None,
            time: None,
            convergence: ConvergenceFamily::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.check()?;
        if self.eps_list.is_empty() {
            return Err(Error::InvalidConfig("eps_list is empty".into()));
        }
        if let Some(e) = self.eps_list.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            return Err(Error::InvalidConfig(format!("epsilon {e} outside (0, 1]")));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidConfig("eps_list must be strictly decreasing".into()));
        }
        for (name, v) in [("delta", self.delta), ("nu", self.nu)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} = {v} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// The compact test set for the convergence experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceFamily {
    /// Exact number of impacts before each test time.
    pub bounces: usize,
    /// Start points per side of the fundamental square.
    pub grid: usize,
    pub directions: usize,
    /// Latest test time.
    pub window: f64,
    pub time_step: f64,
    /// Minimum clearance from `∂D` of start and end points.
    pub interior_margin: f64,
    /// Impacts with `|⟨p, T⟩| > 1 − tangency_margin` exclude the orbit.
    pub tangency_margin: f64,
    pub sheet: SheetId,
}

impl Default for ConvergenceFamily {
    fn default() -> Self {
        Self {
            bounces: 1,
            grid: 8,
            directions: 8,
            window: 4.0,
            time_step: 0.05,
            interior_margin: 0.02,
            tangency_margin: 0.05,
            sheet: SheetId::new(1, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    /// `max dist(π_* Φ_t, Ψ_t π_*)` over the test set.
    pub sup_dist: f64,
    pub n_points: usize,
    pub excluded_grazing: usize,
}

/// An initial condition with its admissible test times (step indices) and
/// the billiard state at each.
#[derive(Debug, Clone)]
pub struct ConvergenceTarget {
    pub start: BilliardState,
    pub checkpoints: Vec<(usize, BilliardState)>,
}

/// Start points on a grid of `Int D` with uniformly spaced directions.
pub fn family_initials(table: &BilliardTable, fam: &ConvergenceFamily) -> Vec<BilliardState> {
    let n = fam.grid.max(1);
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let x = Vector2::new((i as f64 + 0.5) * TAU / n as f64, (j as f64 + 0.5) * TAU / n as f64);
            if table.indicator(&x) > 0.0 || table.wall_clearance(&x) < fam.interior_margin {
                continue;
            }
            for k in 0..fam.directions {
                let a = (k as f64 + 0.5) * TAU / fam.directions as f64;
                out.push(BilliardState::from_angle(TorusPoint::from_lift(&x), a));
            }
        }
    }
    out
}

/// Admissible test times for each start; the second value counts starts
/// dropped for a near-tangential impact.
pub fn compact_targets(table: &BilliardTable, starts: &[BilliardState], fam: &ConvergenceFamily) -> (Vec<ConvergenceTarget>, usize) {
    let steps = (fam.window / fam.time_step).floor() as usize;
    let per: Vec<(Option<ConvergenceTarget>, bool)> = starts
        .par_iter()
        .map(|s0| {
            let Ok(full) = billiard_flow(table, s0, fam.window) else { return (None, true) };
            let mut grazing = false;
            let mut checkpoints = Vec::new();
            for k in 1..=steps {
                let t = k as f64 * fam.time_step;
                let before: Vec<_> = full.bounces.iter().filter(|b| b.time < t).collect();
                if before.len() != fam.bounces {
                    continue;
                }
                if before.iter().any(|b| b.grazing || b.incidence_angle.cos() > 1.0 - fam.tangency_margin) {
                    grazing = true;
                    continue;
                }
                let Ok(end) = billiard_flow(table, s0, t) else { continue };
                if table.wall_clearance(&end.state.q.lift()) < fam.interior_margin {
                    continue;
                }
                checkpoints.push((k, end.state));
            }
            let target = (!checkpoints.is_empty()).then_some(ConvergenceTarget { start: *s0, checkpoints });
            (target, grazing)
        })
        .collect();
    let excluded = per.iter().filter(|(_, g)| *g).count();
    (per.into_iter().filter_map(|(t, _)| t).collect(), excluded)
}

/// Distance on the unit tangent bundle of the table: torus distance plus angle.
pub fn phase_distance(a: &BilliardState, b: &BilliardState) -> f64 {
    let cross = a.p[0] * b.p[1] - a.p[1] * b.p[0];
    torus_distance(&a.q, &b.q) + cross.atan2(a.p.dot(&b.p)).abs()
}

/// Sup distance between projected geodesics and billiard orbits, per `ε`.
pub fn convergence_rows(
    surf: &FlattenedSurface<LinkageSurface>,
    targets: &[ConvergenceTarget],
    excluded: usize,
    eps_list: &[f64],
    fam: &ConvergenceFamily,
) -> Result<Vec<ConvergenceRow>> {
    let n_points = targets.iter().map(|t| t.checkpoints.len()).sum();
    eps_list
        .iter()
        .map(|&eps| {
            let s = surf.with_epsilon(eps);
            let dists: Vec<f64> = targets
                .par_iter()
                .map(|tg| -> Result<f64> {
                    let g0 = pushforward_initial(&s, &tg.start, fam.sheet)?;
                    let last = tg.checkpoints.last().map(|c| c.0).unwrap_or(0);
                    let out = integrate(&s, &g0, last as f64 * fam.time_step, &RunOptions { stride: Some(fam.time_step), ..Default::default() })?;
                    let mut worst: f64 = 0.0;
                    for (k, b) in &tg.checkpoints {
                        let g = out.samples.get(*k).ok_or_else(|| Error::InvalidConfig("missing trajectory sample".into()))?;
                        let proj = BilliardState::new(TorusPoint::new(g.q[0], g.q[1]), Vector2::new(g.p[0], g.p[1]));
                        worst = worst.max(phase_distance(&proj, b));
                    }
                    Ok(worst)
                })
                .collect::<Result<_>>()?;
            Ok(ConvergenceRow { epsilon: eps, sup_dist: dists.iter().copied().fold(0.0, f64::max), n_points, excluded_grazing: excluded })
        })
        .collect()
}

pub fn run_convergence(cfg: &ExperimentConfig) -> Result<Vec<ConvergenceRow>> {
    cfg.validate()?;
    let table = build_table(&cfg.params)?;
    let surf = implicit_g(&cfg.params)?;
    let fam = &cfg.convergence;
    let (targets, excluded) = compact_targets(&table, &family_initials(&table, fam), fam);
    if targets.is_empty() {
        return Err(Error::EmptySample);
    }
    convergence_rows(&surf, &targets, excluded, &cfg.eps_list, fam)
}

/// Sign turning the gradient of the local equation at an unscaled point
/// towards the obstacle behind the nearest wall.
pub fn obstacle_orientation(table: &BilliardTable, x: &Vector3<f64>, grad: &Vector3<f64>) -> f64 {
    let i = wall_component(table, x);
    let base = Vector2::new(x[0], x[1]);
    match table.walls[i].outward_normal(&base) {
        Ok(n) if grad[0] * n[0] + grad[1] * n[1] < 0.0 => -1.0,
        _ => 1.0,
    }
}

/// Settings of the certificate pipeline beyond the experiment config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub assumptions: AssumptionSampling,
    pub kappa: KappaSampling,
    pub lyapunov_probes: usize,
    pub lyapunov_time: f64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self { assumptions: AssumptionSampling::default(), kappa: KappaSampling::default(), lyapunov_probes: 20, lyapunov_time: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonCertificate {
    pub epsilon: f64,
    pub kappa: KappaEstimate,
    pub certificate: CertificateReport,
    pub lyapunov: Vec<f64>,
    pub lyapunov_positive: bool,
    /// Mass one: no small-`ε` guarantee applies.
    pub outside_proven_regime: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub assumptions: AssumptionReport,
    pub horizon_t_max: f64,
    pub per_epsilon: Vec<EpsilonCertificate>,
    pub all_pass: bool,
}

pub fn run_anosov_pipeline(cfg: &ExperimentConfig) -> Result<PipelineReport> {
    run_anosov_pipeline_with(cfg, &PipelineSettings { assumptions: AssumptionSampling { seed: cfg.seed, ..Default::default() }, ..Default::default() })
}

pub fn run_anosov_pipeline_with(cfg: &ExperimentConfig, settings: &PipelineSettings) -> Result<PipelineReport> {
    cfg.validate()?;
    let p = cfg.params;
    let assumptions = verify_assumptions(&p, *cfg.eps_list.last().unwrap_or(&p.epsilon), &settings.assumptions);
    if let Some(name) = assumptions.first_failure() {
        return Err(Error::AssumptionFailed { name: name.into() });
    }
    let t_max = assumptions.horizon.as_ref().map(|h| h.max_free_flight).ok_or(Error::AssumptionFailed { name: "finite horizon".into() })?;
    let table = build_table(&p)?;
    let surf = implicit_g(&p)?;
    let orient = |x: &Vector3<f64>, g: &Vector3<f64>| obstacle_orientation(&table, x, g);
    let mut per_epsilon = Vec::new();
    for &eps in &cfg.eps_list {
        let s = surf.with_epsilon(eps);
        let kappa = estimate_kappa(&s, cfg.delta, eps, &KappaSampling { seed: cfg.seed, ..settings.kappa }, Some(&orient));
        let cc = CertificateConfig {
            delta: cfg.delta,
            epsilon: eps,
            n_samples: cfg.samples.unwrap_or(200),
            time: cfg.time.unwrap_or(1.0),
            horizon_t_max: t_max,
            homothety: None,
            seed: cfg.seed,
        };
        let certificate = anosov_certificate(&SurfaceSource { surf: &s, options: None }, kappa.kappa, &cc)?;
        let lyapunov = lyapunov_probes(&s, settings.lyapunov_probes, settings.lyapunov_time, cfg.seed)?;
        per_epsilon.push(EpsilonCertificate {
            epsilon: eps,
            kappa,
            certificate,
            lyapunov_positive: lyapunov.iter().all(|l| *l > 0.0),
            lyapunov,
            outside_proven_regime: eps >= 1.0,
        });
    }
    let all_pass = per_epsilon.iter().all(|e| e.certificate.pass && e.lyapunov_positive);
    Ok(PipelineReport { assumptions, horizon_t_max: t_max, per_epsilon, all_pass })
}

/// A zone passage tagged with its run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassageRecord {
    pub epsilon: f64,
    pub trajectory: usize,
    #[serde(flatten)]
    pub passage: ZonePassage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneStatsRow {
    pub epsilon: f64,
    pub delta: f64,
    pub kappa: f64,
    pub trajectories: usize,
    pub passages: usize,
    /// Complete passages entering with `|p_x| < 0.5`.
    pub nongrazing: usize,
    pub sqrt_delta: f64,
    pub max_nongrazing_duration: f64,
    pub duration_violations: usize,
    /// Least negative `∫K` over a nongrazing passage.
    pub max_nongrazing_integral_k: f64,
    pub median_nongrazing_integral_k: f64,
    pub nonnegative_integral_k: usize,
    pub max_nongrazing_abs_delta_px: f64,
    /// Complete passages entering with `|p_x| ≥ 0.5` and `∫|K| ≤ 3κ²`.
    pub low_curvature_grazing: usize,
    pub min_grazing_delta_py: f64,
    /// `−2√κ`.
    pub py_bound: f64,
    pub py_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneStats {
    pub rows: Vec<ZoneStatsRow>,
    pub records: Vec<PassageRecord>,
    /// Records breaking a duration, sign, or momentum bound.
    pub flagged: Vec<PassageRecord>,
}

pub const NONGRAZING_PX: f64 = 0.5;

pub fn run_zone_stats(cfg: &ExperimentConfig) -> Result<ZoneStats> {
    cfg.validate()?;
    let surf = implicit_g(&cfg.params)?;
    let table = build_table(&cfg.params)?;
    let label = |x: &Vector3<f64>| wall_component(&table, x);
    let n = cfg.samples.unwrap_or(100);
    let t_end = cfg.time.unwrap_or(20.0);
    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut flagged = Vec::new();
    for &eps in &cfg.eps_list {
        let s = surf.with_epsilon(eps);
        let kappa = estimate_kappa(&s, cfg.delta, eps, &KappaSampling { seed: cfg.seed, ..Default::default() }, None).kappa;
        let runs: Vec<Vec<ZonePassage>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(cfg.seed, i as u64);
                let s0 = random_initial(&s, &mut rng).ok_or(Error::EmptySample)?;
                let ro = RunOptions { zones: Some((cfg.delta, cfg.nu)), labeller: Some(&label), ..Default::default() };
                integrate(&s, &s0, t_end, &ro).map(|r| r.passages)
            })
            .collect::<Result<_>>()?;
        let sqrt_delta = cfg.delta.sqrt();
        let py_bound = -2.0 * kappa.sqrt();
        let mut row = ZoneStatsRow {
            epsilon: eps,
            delta: cfg.delta,
            kappa,
            trajectories: n,
            passages: 0,
            nongrazing: 0,
            sqrt_delta,
            max_nongrazing_duration: 0.0,
            duration_violations: 0,
            max_nongrazing_integral_k: f64::NEG_INFINITY,
            median_nongrazing_integral_k: f64::NAN,
            nonnegative_integral_k: 0,
            max_nongrazing_abs_delta_px: 0.0,
            low_curvature_grazing: 0,
            min_grazing_delta_py: 0.0,
            py_bound,
            py_violations: 0,
        };
        let mut ks = Vec::new();
        for (i, run) in runs.iter().enumerate() {
            for p in run {
                let rec = PassageRecord { epsilon: eps, trajectory: i, passage: *p };
                records.push(rec);
                row.passages += 1;
                if !p.complete {
                    continue;
                }
                let mut bad = false;
                if p.entry_px < NONGRAZING_PX {
                    let dur = p.t_out - p.t_in;
                    row.nongrazing += 1;
                    row.max_nongrazing_duration = row.max_nongrazing_duration.max(dur);
                    row.max_nongrazing_integral_k = row.max_nongrazing_integral_k.max(p.integral_k);
                    row.max_nongrazing_abs_delta_px = row.max_nongrazing_abs_delta_px.max(p.delta_px.abs());
                    ks.push(p.integral_k);
                    if dur > sqrt_delta {
                        row.duration_violations += 1;
                        bad = true;
                    }
                    if p.integral_k >= 0.0 {
                        row.nonnegative_integral_k += 1;
                        bad = true;
                    }
                } else if p.integral_abs_k <= 3.0 * kappa * kappa {
                    row.low_curvature_grazing += 1;
                    row.min_grazing_delta_py = row.min_grazing_delta_py.min(p.min_delta_py);
                    if p.min_delta_py < py_bound {
                        row.py_violations += 1;
                        bad = true;
                    }
                }
                if bad {
                    flagged.push(rec);
                }
            }
        }
        ks.sort_by(f64::total_cmp);
        if !ks.is_empty() {
            row.median_nongrazing_integral_k = ks[ks.len() / 2];
        }
        rows.push(row);
    }
    Ok(ZoneStats { rows, records, flagged })
}

/// A wall point of the linkage surface (on the wall `cos θ + cos φ = 2l − 4`)
/// and the horizontal direction leaving the table there.
pub fn linkage_fold_point(p: &LinkageParams) -> (Vector3<f64>, Vector2<f64>) {
    let a = ((2.0 * p.l - 4.0) / 2.0).acos();
    let v = 0.0;
    let c = (p.r * p.r - v * v).sqrt();
    (Vector3::new(a, a, c), Vector2::new(-a.sin(), -a.sin()).normalize())
}

pub fn run_curvature_scan(cfg: &ExperimentConfig) -> Result<Vec<ScanRow>> {
    cfg.validate()?;
    let surf = implicit_g(&cfg.params)?;
    let (q0, outward) = linkage_fold_point(&cfg.params);
    curvature_blowup_scan(&surf, &q0, &outward, 0.0, cfg.nu, 0.2, &cfg.eps_list, &ScanGrid::default())
}

pub fn run_horizon(cfg: &ExperimentConfig) -> Result<HorizonReport> {
    cfg.validate()?;
    let table = build_table(&cfg.params)?;
    Ok(finite_horizon_search(&table, cfg.time.unwrap_or(50.0), &HorizonGrid { seed: cfg.seed, ..Default::default() }))
}

/// Mesh of `{G = 0}` in metric coordinates `(θ, φ, ε c)`.
pub fn linkage_mesh(p: &LinkageParams, cells: usize) -> Result<Mesh> {
    let surf = implicit_g(p)?;
    let zmax = p.l + p.r + 0.1;
    let n = cells.max(4);
    let mut mesh = marching_tetrahedra(
        &|x| crate::surface::ImplicitSurface::value(&surf.surface, x),
        Vector3::new(0.0, 0.0, -zmax),
        Vector3::new(TAU, TAU, zmax),
        [n, n, n],
    );
    for v in &mut mesh.vertices {
        v[2] *= p.epsilon;
    }
    Ok(mesh)
}

/// Projected geodesics for the table overlay, as `(θ, φ)` paths.
pub fn geodesic_overlay(p: &LinkageParams, count: usize, t_end: f64, seed: u64) -> Result<Vec<Vec<[f64; 2]>>> {
    let surf = implicit_g(p)?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let s0 = random_initial(&surf, &mut rng).ok_or(Error::EmptySample)?;
            let out = integrate(&surf, &s0, t_end, &RunOptions { stride: Some(0.01), ..Default::default() })?;
            Ok(out.samples.iter().map(|s| [s.q[0], s.q[1]]).collect())
        })
        .collect()
}

/// Inputs accepted by [`export_plots`].
#[derive(Debug, Clone, Copy)]
pub enum PlotData<'a> {
    Table(&'a BilliardTable),
    Trajectories { table: &'a BilliardTable, paths: &'a [Vec<[f64; 2]>] },
    Convergence(&'a [ConvergenceRow]),
    Certificate(&'a [EpsilonCertificate]),
}

/// Obstacle pieces of `table` visible in the square `[-π, π]²`.
pub fn obstacles_in_square(table: &BilliardTable) -> usize {
    count_positive_regions(&|x| table.indicator(x), &Grid::centered_square(400))
}

/// Writes one SVG per dataset into `dir`; returns the paths written.
pub fn export_plots(data: &PlotData, dir: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let (name, svg) = match data {
        PlotData::Table(t) => ("table.svg", table_svg(t, &[])),
        PlotData::Trajectories { table, paths } => {
            if paths.is_empty() {
                return Err(Error::EmptyDataset);
            }
            ("trajectories.svg", table_svg(table, paths))
        }
        PlotData::Convergence(rows) => {
            if rows.is_empty() {
                return Err(Error::EmptyDataset);
            }
            ("convergence.svg", convergence_svg(rows))
        }
        PlotData::Certificate(reps) => {
            if reps.is_empty() {
                return Err(Error::EmptyDataset);
            }
            ("certificate.svg", certificate_svg(reps))
        }
    };
    let path = dir.join(name);
    std::fs::write(&path, svg.finish(seed))?;
    Ok(vec![path])
}

fn table_svg(table: &BilliardTable, paths: &[Vec<[f64; 2]>]) -> Svg {
    let mut svg = Svg::new(560.0, 560.0, [-PI, -PI], [PI, PI]);
    // the table in grey, one rectangle per run of interior cells
    let n = 280;
    let h = TAU / n as f64;
    for j in 0..n {
        let y = -PI + (j as f64 + 0.5) * h;
        let mut run: Option<usize> = None;
        for i in 0..=n {
            let inside = i < n && table.indicator(&Vector2::new(-PI + (i as f64 + 0.5) * h, y)) <= 0.0;
            match (inside, run) {
                (true, None) => run = Some(i),
                (false, Some(i0)) => {
                    svg.rect([-PI + i0 as f64 * h, y - 0.5 * h], [-PI + i as f64 * h, y + 0.5 * h + 1e-9], "#bbbbbb");
                    run = None;
                }
                _ => {}
            }
        }
    }
    for (k, path) in paths.iter().enumerate() {
        let colour = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"][k % 5];
        let mut piece: Vec<[f64; 2]> = Vec::new();
        let wrap = |v: f64| (v + PI).rem_euclid(TAU) - PI;
        for q in path {
            let w = [wrap(q[0]), wrap(q[1])];
            if let Some(last) = piece.last() {
                if (w[0] - last[0]).abs() > PI || (w[1] - last[1]).abs() > PI {
                    svg.polyline(&piece, colour, 1.0);
                    piece.clear();
                }
            }
            piece.push(w);
        }
        svg.polyline(&piece, colour, 1.0);
    }
    svg.axes("theta", "phi");
    svg
}

fn log_box(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> ([f64; 2], [f64; 2]) {
    let span = |it: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = it.filter(|v| *v > 0.0).map(f64::log10).collect();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() {
            (lo.floor(), hi.ceil().max(lo.floor() + 1.0))
        } else {
            (0.0, 1.0)
        }
    };
    let (x0, x1) = span(&mut xs.clone());
    let (y0, y1) = span(&mut ys.clone());
    ([x0, y0], [x1, y1])
}

fn convergence_svg(rows: &[ConvergenceRow]) -> Svg {
    let (lo, hi) = log_box(rows.iter().map(|r| r.epsilon), rows.iter().map(|r| r.sup_dist));
    let mut svg = Svg::new(480.0, 360.0, lo, hi);
    let pts: Vec<[f64; 2]> = rows.iter().filter(|r| r.sup_dist > 0.0).map(|r| [r.epsilon.log10(), r.sup_dist.log10()]).collect();
    svg.polyline(&pts, "#1f77b4", 1.5);
    for p in &pts {
        svg.circle(*p, 3.0, "#1f77b4");
    }
    svg.axes("log10 epsilon", "log10 sup distance");
    svg
}

fn certificate_svg(reps: &[EpsilonCertificate]) -> Svg {
    let us = reps.iter().map(|r| r.certificate.min_u);
    let bs = reps.iter().map(|r| r.certificate.lower_bound);
    let (lo, hi) = log_box(reps.iter().map(|r| r.epsilon), us.clone().chain(bs.clone()));
    let mut svg = Svg::new(480.0, 360.0, lo, hi);
    let u: Vec<[f64; 2]> = reps.iter().filter(|r| r.certificate.min_u > 0.0).map(|r| [r.epsilon.log10(), r.certificate.min_u.log10()]).collect();
    let b: Vec<[f64; 2]> = reps.iter().filter(|r| r.certificate.lower_bound > 0.0).map(|r| [r.epsilon.log10(), r.certificate.lower_bound.log10()]).collect();
    svg.polyline(&u, "#2ca02c", 1.5);
    svg.polyline(&b, "#d62728", 1.5);
    for p in &u {
        svg.circle(*p, 3.0, "#2ca02c");
    }
    for p in &b {
        svg.circle(*p, 3.0, "#d62728");
    }
    svg.text([lo[0], hi[1]], "green: min u(T), red: kappa^2/2");
    svg.axes("log10 epsilon", "log10 value");
    svg
}

/// Runs the configured experiment and writes its outputs into
/// `cfg.output_dir`. Returns the files written.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    let seed = cfg.seed;
    let mut written = Vec::new();
    let mut file = |name: &str| -> Result<(std::fs::File, PathBuf)> {
        let path = dir.join(name);
        written.push(path.clone());
        Ok((std::fs::File::create(&path)?, path))
    };
    match cfg.experiment {
        ExperimentKind::Converge => {
            let rows = run_convergence(cfg)?;
            write_csv(file("convergence.csv")?.0, seed, &rows)?;
            write_json(file("convergence.json")?.0, seed, &rows)?;
            written.extend(export_plots(&PlotData::Convergence(&rows), dir, seed)?);
        }
        ExperimentKind::Anosov => {
            let rep = run_anosov_pipeline(cfg)?;
            for e in &rep.per_epsilon {
                write_json(file(&format!("certificate_eps{}.json", e.epsilon))?.0, seed, &e.certificate)?;
            }
            write_json(file("anosov_summary.json")?.0, seed, &rep)?;
            written.extend(export_plots(&PlotData::Certificate(&rep.per_epsilon), dir, seed)?);
        }
        ExperimentKind::Horizon => {
            let rep = run_horizon(cfg)?;
            write_json(file("horizon.json")?.0, seed, &rep)?;
        }
        ExperimentKind::CurvatureScan => {
            let rows = run_curvature_scan(cfg)?;
            write_csv(file("curvature_scan.csv")?.0, seed, &rows)?;
        }
        ExperimentKind::ZoneStats => {
            let stats = run_zone_stats(cfg)?;
            write_csv(file("zone_stats.csv")?.0, seed, &stats.rows)?;
            crate::export::write_jsonl(file("passages.jsonl")?.0, seed, &stats.records)?;
            write_json(file("zone_flagged.json")?.0, seed, &stats.flagged)?;
        }
        ExperimentKind::Mesh => {
            cfg.validate()?;
            let mesh = linkage_mesh(&cfg.params, cfg.samples.unwrap_or(64))?;
            mesh.write_obj(file("surface.obj")?.0, &crate::export::header_line(seed))?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::ImplicitSurface;

    fn params() -> LinkageParams {
        LinkageParams::new(2.8, 0.4, 0.05)
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::new(ExperimentKind::Converge, params());
        assert!(c.validate().is_ok());
        c.eps_list = vec![0.1, 0.2];
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        c.eps_list = vec![0.1];
        c.delta = 1.0;
        assert!(c.validate().is_err());
        let bad = ExperimentConfig::new(ExperimentKind::Converge, LinkageParams::new(2.8, 0.6, 0.05));
        assert!(matches!(bad.validate(), Err(Error::InvalidParams { .. })));
    }

    #[test]
    fn config_round_trips_json() {
        let c = ExperimentConfig::new(ExperimentKind::ZoneStats, params());
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"zone_stats\""));
        let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn grazing_start_is_excluded() {
        let p = params();
        let table = build_table(&p).unwrap();
        // tangent to the wall cos θ + cos φ = 1.6 at θ = φ = acos 0.8
        let a = 0.8f64.acos();
        let dir = Vector2::new(1.0, -1.0).normalize();
        let start = Vector2::new(a, a) - dir * 0.5;
        let s = BilliardState::new(TorusPoint::from_lift(&start), dir);
        let fam = ConvergenceFamily { window: 1.0, ..Default::default() };
        let (targets, excluded) = compact_targets(&table, &[s], &fam);
        assert!(targets.is_empty());
        assert_eq!(excluded, 1);
    }

    #[test]
    fn phase_distance_parts() {
        let a = BilliardState::from_angle(TorusPoint::new(0.1, 0.0), 0.0);
        let b = BilliardState::from_angle(TorusPoint::new(TAU - 0.1, 0.0), 0.5);
        assert!((phase_distance(&a, &b) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn table_shows_five_obstacles() {
        let table = build_table(&params()).unwrap();
        assert_eq!(obstacles_in_square(&table), 5);
    }

    #[test]
    fn fold_point_is_on_the_wall() {
        let p = params();
        let (q0, out) = linkage_fold_point(&p);
        assert!((q0[0].cos() + q0[1].cos() - (2.0 * p.l - 4.0)).abs() < 1e-12);
        let s = implicit_g(&p).unwrap();
        let g = s.local_at(&q0).surface.gradient(&q0);
        assert!(crate::surface::ImplicitSurface::value(&s.surface, &q0).abs() < 1e-9);
        assert!(g[2].abs() / g.norm() < 1e-6);
        assert!(out[0] < 0.0 && out[1] < 0.0);
    }

    #[test]
    fn empty_plot_data_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(export_plots(&PlotData::Convergence(&[]), dir.path(), 0), Err(Error::EmptyDataset)));
    }
}
