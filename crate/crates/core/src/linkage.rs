//! The five-bar linkage with two driven unit cranks, two rods of length
//! `l` meeting at a massless vertex, and a rod of length `r` to a slider on
//! the vertical axis.
//!
//! A configuration is `(θ, φ, c)` on an immersed surface of `T² × ℝ`; its
//! kinetic-energy metric is `dθ² + dφ² + ε²dc²`, so the flattening parameter
//! is the square root of the slider mass.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::billiard::{wall_curvature, BilliardTable, Wall};
use crate::error::{Error, Result};
use crate::horizon::{finite_horizon_search, HorizonGrid, HorizonReport};
use crate::rng::{stream_rng, StreamRng};
use crate::surface::{Branched, FlattenedSurface, ImplicitSurface, SurfaceSampler};
use crate::torus::{CosineSum, ImplicitCurve, TorusPoint};

/// Radicands down to this are treated as zero.
pub const RADICAND_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkageParams {
    pub l: f64,
    pub r: f64,
    pub epsilon: f64,
}

impl LinkageParams {
    pub fn new(l: f64, r: f64, epsilon: f64) -> Self {
        Self { l, r, epsilon }
    }

    /// `Ok` when every condition holds, else the names of the violated ones.
    pub fn check(&self) -> Result<()> {
        let report = validate_params(self);
        if report.valid {
            Ok(())
        } else {
            Err(Error::InvalidParams { violated: report.violated() })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub holds: bool,
    /// Positive exactly when the condition holds.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub conditions: Vec<Condition>,
    pub epsilon_in_range: bool,
    pub valid: bool,
}

impl ValidityReport {
    pub fn violated(&self) -> Vec<String> {
        let mut v: Vec<String> = self.conditions.iter().filter(|c| !c.holds).map(|c| c.name.clone()).collect();
        if !self.epsilon_in_range {
            v.push("0 < epsilon <= 1".into());
        }
        v
    }

    pub fn margins(&self) -> Vec<f64> {
        self.conditions.iter().map(|c| c.margin).collect()
    }
}

pub fn validate_params(p: &LinkageParams) -> ValidityReport {
    let cond = |name: &str, margin: f64| Condition { name: name.into(), holds: margin > 0.0, margin };
    let conditions = vec![
        cond("l + r > 3", p.l + p.r - 3.0),
        cond("l < 3", 3.0 - p.l),
        cond("(l - 2)^2 + r^2 < 1", 1.0 - ((p.l - 2.0).powi(2) + p.r * p.r)),
        cond("r < 1/2", 0.5 - p.r),
    ];
    let epsilon_in_range = p.epsilon > 0.0 && p.epsilon <= 1.0;
    let valid = epsilon_in_range && conditions.iter().all(|c| c.holds) && p.l > 0.0 && p.r > 0.0;
    ValidityReport { conditions, epsilon_in_range, valid }
}

/// One of the four sign choices of the graph formulas over `(θ, φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SheetId {
    pub e_sign: i8,
    pub c_offset_sign: i8,
}

impl SheetId {
    pub const ALL: [SheetId; 4] = [
        SheetId { e_sign: 1, c_offset_sign: 1 },
        SheetId { e_sign: 1, c_offset_sign: -1 },
        SheetId { e_sign: -1, c_offset_sign: 1 },
        SheetId { e_sign: -1, c_offset_sign: -1 },
    ];

    pub fn new(e_sign: i8, c_offset_sign: i8) -> Self {
        Self { e_sign: e_sign.signum(), c_offset_sign: c_offset_sign.signum() }
    }
}

/// Full configuration. Crank tips are `(a, f)` and `(b, g)`, the massless
/// vertex is `(d, e)` and the slider sits at `(0, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkageConfig {
    pub theta: f64,
    pub phi: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl LinkageConfig {
    pub fn a(&self) -> f64 {
        -self.theta.cos() - 2.0
    }
    pub fn f(&self) -> f64 {
        self.theta.sin()
    }
    pub fn b(&self) -> f64 {
        self.phi.cos() + 2.0
    }
    pub fn g(&self) -> f64 {
        self.phi.sin()
    }

    /// Absolute residuals of the five length constraints.
    pub fn residuals(&self, l: f64, r: f64) -> [f64; 5] {
        let (a, b, c, d, e, f, g) = (self.a(), self.b(), self.c, self.d, self.e, self.f(), self.g());
        [
            ((a + 2.0).powi(2) + f * f - 1.0).abs(),
            ((b - 2.0).powi(2) + g * g - 1.0).abs(),
            ((a - d).powi(2) + e * e - l * l).abs(),
            ((b - d).powi(2) + e * e - l * l).abs(),
            (d * d + (c - e).powi(2) - r * r).abs(),
        ]
    }

    pub fn max_residual(&self, l: f64, r: f64) -> f64 {
        self.residuals(l, r).into_iter().fold(0.0, f64::max)
    }
}

fn u_of(theta: f64, phi: f64) -> f64 {
    (theta.cos() + phi.cos() + 4.0) / 2.0
}

fn v_of(theta: f64, phi: f64) -> f64 {
    (theta.cos() - phi.cos()) / 2.0
}

fn clamped_sqrt(x: f64) -> Result<f64> {
    if x < -RADICAND_TOL {
        Err(Error::OutsideDomain { radicand: x })
    } else {
        Ok(x.max(0.0).sqrt())
    }
}

pub fn chart_lift(p: &LinkageParams, base: &TorusPoint, sheet: SheetId) -> Result<LinkageConfig> {
    lift_raw(p.l, p.r, base.theta, base.phi, sheet)
}

fn lift_raw(l: f64, r: f64, theta: f64, phi: f64, sheet: SheetId) -> Result<LinkageConfig> {
    let u = u_of(theta, phi);
    let v = v_of(theta, phi);
    let e = f64::from(sheet.e_sign) * clamped_sqrt(l * l - u * u)?;
    let c = e + f64::from(sheet.c_offset_sign) * clamped_sqrt(r * r - v * v)?;
    // rounding-stable form of (cos φ − cos θ)/2
    Ok(LinkageConfig { theta, phi, c, d: -v, e })
}

/// Which equation represents the surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SheetEquation {
    /// `(c² + E − R)² − 4c²E`, all four sheets at once.
    Product,
    /// `(c − s√E)² − R`: the two sheets with `e` of sign `s`.
    ESign(f64),
    /// `(c − s√R)² − E`: the two sheets with offset sign `s`.
    Offset(f64),
}

/// The configuration surface in `(θ, φ, c)` with `E = l² − u²`,
/// `R = r² − v²`, `u = (cos θ + cos φ + 4)/2`, `v = (cos θ − cos φ)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkageSurface {
    pub l: f64,
    pub r: f64,
    pub equation: SheetEquation,
}

// E and R with their first and second horizontal derivatives.
struct Radicands {
    e: f64,
    de: Vector2<f64>,
    dde: [f64; 3],
    r: f64,
    dr: Vector2<f64>,
    ddr: [f64; 3],
}

impl LinkageSurface {
    pub fn new(p: &LinkageParams) -> Self {
        Self { l: p.l, r: p.r, equation: SheetEquation::Product }
    }

    fn radicands(&self, x: &Vector3<f64>) -> Radicands {
        let (st, ct) = x[0].sin_cos();
        let (sp, cp) = x[1].sin_cos();
        let u = (ct + cp + 4.0) / 2.0;
        let v = (ct - cp) / 2.0;
        let du = Vector2::new(-st / 2.0, -sp / 2.0);
        let ddu = [-ct / 2.0, 0.0, -cp / 2.0];
        let dv = Vector2::new(-st / 2.0, sp / 2.0);
        let ddv = [-ct / 2.0, 0.0, cp / 2.0];
        // entries ordered (θθ, θφ, φφ)
        let idx = [(0, 0), (0, 1), (1, 1)];
        let dde = std::array::from_fn(|k| {
            let (i, j) = idx[k];
            -2.0 * (du[i] * du[j] + u * ddu[k])
        });
        let ddr = std::array::from_fn(|k| {
            let (i, j) = idx[k];
            -2.0 * (dv[i] * dv[j] + v * ddv[k])
        });
        Radicands { e: self.l * self.l - u * u, de: -2.0 * u * du, dde, r: self.r * self.r - v * v, dr: -2.0 * v * dv, ddr }
    }

    /// Value, gradient and Hessian in one pass.
    pub fn jet(&self, x: &Vector3<f64>) -> (f64, Vector3<f64>, Matrix3<f64>) {
        let c = x[2];
        let q = self.radicands(x);
        let sym = |h: [f64; 3], hc: Vector2<f64>, hcc: f64| {
            Matrix3::new(h[0], h[1], hc[0], h[1], h[2], hc[1], hc[0], hc[1], hcc)
        };
        match self.equation {
            SheetEquation::Product => {
                let a = c * c + q.e - q.r;
                let da = q.de - q.dr;
                let dda: [f64; 3] = std::array::from_fn(|k| q.dde[k] - q.ddr[k]);
                let val = a * a - 4.0 * c * c * q.e;
                let g = 2.0 * a * da - 4.0 * c * c * q.de;
                let gc = 4.0 * c * a - 8.0 * c * q.e;
                let idx = [(0, 0), (0, 1), (1, 1)];
                let h: [f64; 3] = std::array::from_fn(|k| {
                    let (i, j) = idx[k];
                    2.0 * da[i] * da[j] + 2.0 * a * dda[k] - 4.0 * c * c * q.dde[k]
                });
                let hc = 4.0 * c * da - 8.0 * c * q.de;
                let hcc = 8.0 * c * c + 4.0 * a - 8.0 * q.e;
                (val, Vector3::new(g[0], g[1], gc), sym(h, hc, hcc))
            }
            SheetEquation::ESign(s) => {
                // (c − s w)² − R with w = √E
                let w = q.e.max(0.0).sqrt().max(f64::MIN_POSITIVE);
                let dw = q.de / (2.0 * w);
                let idx = [(0, 0), (0, 1), (1, 1)];
                let ddw: [f64; 3] = std::array::from_fn(|k| {
                    let (i, j) = idx[k];
                    q.dde[k] / (2.0 * w) - q.de[i] * q.de[j] / (4.0 * w * w * w)
                });
                let m = c - s * w;
                let val = m * m - q.r;
                let g = -2.0 * m * s * dw - q.dr;
                let h: [f64; 3] = std::array::from_fn(|k| {
                    let (i, j) = idx[k];
                    2.0 * dw[i] * dw[j] - 2.0 * m * s * ddw[k] - q.ddr[k]
                });
                (val, Vector3::new(g[0], g[1], 2.0 * m), sym(h, -2.0 * s * dw, 2.0))
            }
            SheetEquation::Offset(s) => {
                let w = q.r.max(0.0).sqrt().max(f64::MIN_POSITIVE);
                let dw = q.dr / (2.0 * w);
                let idx = [(0, 0), (0, 1), (1, 1)];
                let ddw: [f64; 3] = std::array::from_fn(|k| {
                    let (i, j) = idx[k];
                    q.ddr[k] / (2.0 * w) - q.dr[i] * q.dr[j] / (4.0 * w * w * w)
                });
                let m = c - s * w;
                let val = m * m - q.e;
                let g = -2.0 * m * s * dw - q.de;
                let h: [f64; 3] = std::array::from_fn(|k| {
                    let (i, j) = idx[k];
                    2.0 * dw[i] * dw[j] - 2.0 * m * s * ddw[k] - q.dde[k]
                });
                (val, Vector3::new(g[0], g[1], 2.0 * m), sym(h, -2.0 * s * dw, 2.0))
            }
        }
    }

    /// Sheet whose graph value is closest to `x[2]`.
    pub fn nearest_sheet(&self, x: &Vector3<f64>) -> Option<SheetId> {
        SheetId::ALL
            .into_iter()
            .filter_map(|s| lift_raw(self.l, self.r, x[0], x[1], s).ok().map(|cfg| (s, (cfg.c - x[2]).abs())))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(s, _)| s)
    }
}

impl ImplicitSurface for LinkageSurface {
    fn value(&self, x: &Vector3<f64>) -> f64 {
        self.jet(x).0
    }
    fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.jet(x).1
    }
    fn hessian(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        self.jet(x).2
    }

    // Near the walls {E = 0} the two sheets of equal offset sign glue, near
    // {R = 0} the two of equal e sign; the product vanishes to second order
    // where sheets of opposite signs cross at c = 0.
    fn local_chart(&self, x: &Vector3<f64>) -> Option<Self> {
        let q = self.radicands(x);
        let sheet = self.nearest_sheet(x)?;
        let equation = if q.e >= q.r {
            if q.e <= 0.0 {
                return None;
            }
            SheetEquation::ESign(f64::from(sheet.e_sign))
        } else {
            if q.r <= 0.0 {
                return None;
            }
            SheetEquation::Offset(f64::from(sheet.c_offset_sign))
        };
        Some(Self { equation, ..*self })
    }
}

impl SurfaceSampler for LinkageSurface {
    fn sample_point(&self, rng: &mut StreamRng) -> Option<Vector3<f64>> {
        let theta = rng.random_range(0.0..TAU);
        let phi = rng.random_range(0.0..TAU);
        let sheet = SheetId::ALL[rng.random_range(0..4)];
        let cfg = lift_raw(self.l, self.r, theta, phi, sheet).ok()?;
        Some(Vector3::new(theta, phi, cfg.c))
    }
}

impl Branched for LinkageSurface {
    type Branch = SheetId;
    fn lift_point(&self, base: &Vector2<f64>, sheet: SheetId) -> Result<Vector3<f64>> {
        let cfg = lift_raw(self.l, self.r, base[0], base[1], sheet)
            .map_err(|_| Error::NoSuchBranch { theta: base[0], phi: base[1] })?;
        Ok(Vector3::new(base[0], base[1], cfg.c))
    }
}

/// The configuration surface flattened by the slider mass.
pub fn implicit_g(p: &LinkageParams) -> Result<FlattenedSurface<LinkageSurface>> {
    p.check()?;
    Ok(FlattenedSurface::new(LinkageSurface::new(p), p.epsilon, true))
}

/// `D = {cos θ + cos φ ≤ 2l − 4, |cos θ − cos φ| ≤ 2r}`.
pub fn build_table(p: &LinkageParams) -> Result<BilliardTable> {
    p.check()?;
    Ok(table_unchecked(p.l, p.r))
}

pub(crate) fn table_unchecked(l: f64, r: f64) -> BilliardTable {
    BilliardTable::new(vec![
        Wall { curve: ImplicitCurve::new(CosineSum { a: 1.0, b: 1.0 }), level: 2.0 * l - 4.0, inside_sign: 1.0 },
        Wall { curve: ImplicitCurve::new(CosineSum { a: 1.0, b: -1.0 }), level: 2.0 * r, inside_sign: 1.0 },
        Wall { curve: ImplicitCurve::new(CosineSum { a: -1.0, b: 1.0 }), level: 2.0 * r, inside_sign: 1.0 },
    ])
}

/// Index of the wall closest in value to the base of `x`; each wall is a
/// single boundary component of `D`.
pub fn wall_component(table: &BilliardTable, x: &Vector3<f64>) -> usize {
    let base = Vector2::new(x[0], x[1]);
    (0..table.walls.len()).max_by(|&i, &j| table.walls[i].signed(&base).total_cmp(&table.walls[j].signed(&base))).unwrap_or(0)
}

/// Sign polynomial of the boundary curvature of wall `index` in `cos θ`.
pub fn wall_sign_polynomial(p: &LinkageParams, index: usize, cos_theta: f64) -> f64 {
    let k = 2.0 * p.l - 4.0;
    let (r, x) = (p.r, cos_theta);
    match index {
        0 => -k * x * x + k * k * x - k,
        1 => -2.0 * r * x * x + 4.0 * r * r * x - 2.0 * r,
        _ => -2.0 * r * x * x - 4.0 * r * r * x - 2.0 * r,
    }
}

/// Discriminant of [`wall_sign_polynomial`].
pub fn wall_sign_discriminant(p: &LinkageParams, index: usize) -> f64 {
    if index == 0 {
        let k = 2.0 * p.l - 4.0;
        k * k * (k * k - 4.0)
    } else {
        16.0 * p.r * p.r * (p.r * p.r - 1.0)
    }
}

// The sign expression before substituting the wall equation.
fn wall_sign_trig(index: usize, x: &Vector2<f64>) -> f64 {
    let (st, ct) = x[0].sin_cos();
    let (sp, cp) = x[1].sin_cos();
    match index {
        0 => -sp * sp * ct - st * st * cp,
        1 => -sp * sp * ct + st * st * cp,
        _ => sp * sp * ct - st * st * cp,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub pass: bool,
    pub samples: usize,
    /// Smallest margin seen; positive when the check holds.
    pub worst_margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub params: LinkageParams,
    pub validity: ValidityReport,
    pub graph_form: Option<AssumptionCheck>,
    pub vertical_curvature: Option<AssumptionCheck>,
    pub wall_negativity: Option<AssumptionCheck>,
    pub finite_horizon: Option<AssumptionCheck>,
    pub horizon: Option<HorizonReport>,
    pub all_pass: bool,
}

impl AssumptionReport {
    /// Name of the first failing assumption.
    pub fn first_failure(&self) -> Option<&'static str> {
        if !self.validity.valid {
            return Some("parameters");
        }
        let checks = [
            ("graph form", &self.graph_form),
            ("vertical curvature", &self.vertical_curvature),
            ("wall negativity", &self.wall_negativity),
            ("finite horizon", &self.finite_horizon),
        ];
        checks.into_iter().find(|(_, c)| !c.as_ref().is_some_and(|c| c.pass)).map(|(n, _)| n)
    }
}

/// Sample counts for [`verify_assumptions`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionSampling {
    pub interior_points: usize,
    pub vertical_wall_points: usize,
    pub curvature_wall_points: usize,
    /// Interior points are kept at least this far (in wall value) from `∂D`.
    pub interior_margin: f64,
    pub horizon_length: f64,
    pub horizon: HorizonGrid,
    pub seed: u64,
}

impl Default for AssumptionSampling {
    fn default() -> Self {
        Self {
            interior_points: 10_000,
            vertical_wall_points: 1000,
            curvature_wall_points: 10_000,
            interior_margin: 0.02,
            horizon_length: 50.0,
            horizon: HorizonGrid::default(),
            seed: 0,
        }
    }
}

/// Numerical checks of the four hypotheses of the convergence theorem for
/// the linkage surface.
pub fn verify_assumptions(p: &LinkageParams, epsilon_probe: f64, sampling: &AssumptionSampling) -> AssumptionReport {
    let validity = validate_params(p);
    let mut report = AssumptionReport {
        params: *p,
        validity: validity.clone(),
        graph_form: None,
        vertical_curvature: None,
        wall_negativity: None,
        finite_horizon: None,
        horizon: None,
        all_pass: false,
    };
    if !validity.valid {
        return report;
    }
    let table = table_unchecked(p.l, p.r);
    let surf = FlattenedSurface::new(LinkageSurface::new(p), epsilon_probe, true);
    report.graph_form = Some(check_graph_form(&surf, &table, sampling));
    report.vertical_curvature = Some(check_vertical_curvature(&surf, &table, sampling.vertical_wall_points));
    report.wall_negativity = Some(check_wall_negativity(p, &table, sampling.curvature_wall_points));
    let (fh, hr) = check_finite_horizon(p, &table, sampling);
    report.finite_horizon = Some(fh);
    report.horizon = Some(hr);
    report.all_pass = report.first_failure().is_none();
    report
}

fn check_graph_form(surf: &FlattenedSurface<LinkageSurface>, table: &BilliardTable, s: &AssumptionSampling) -> AssumptionCheck {
    let results: Vec<Option<(f64, f64)>> = (0..s.interior_points)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(s.seed, i as u64);
            loop {
                let x = Vector2::new(rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
                if table.indicator(&x) > -s.interior_margin {
                    continue;
                }
                let sheet = SheetId::ALL[rng.random_range(0..4)];
                let pt = surf.surface.lift_point(&x, sheet).ok()?;
                let chart = surf.surface.local_chart(&pt).unwrap_or(surf.surface);
                let g = chart.gradient(&pt);
                let h = (g[2] / g.norm()).abs();
                let nz = surf.nz_from_h(h);
                return Some((h, nz));
            }
        })
        .collect();
    let vals: Vec<(f64, f64)> = results.into_iter().flatten().collect();
    let min_h = vals.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
    let min_nz = vals.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    AssumptionCheck {
        pass: vals.len() == s.interior_points && min_h > 1e-6,
        samples: vals.len(),
        worst_margin: min_h,
        detail: format!("min |H| = {min_h:.6e} off the walls, min |N_z| at probe epsilon = {min_nz:.6e}"),
    }
}

/// Curvature at a wall point of the section of `Σ` by the vertical plane
/// containing the horizontal normal, from the local equation `g(t, z)`.
pub fn vertical_section_curvature(surface: &LinkageSurface, x: &Vector3<f64>, normal: &Vector2<f64>) -> f64 {
    let chart = surface.local_chart(x).unwrap_or(*surface);
    let (_, g, h) = chart.jet(x);
    let n = Vector3::new(normal[0], normal[1], 0.0);
    let gt = g.dot(&n);
    let gz = g[2];
    let gtt = (h * n).dot(&n);
    let gtz = (h * n)[2];
    let gzz = h[(2, 2)];
    let num = gtt * gz * gz - 2.0 * gtz * gt * gz + gzz * gt * gt;
    num / (gt * gt + gz * gz).powf(1.5)
}

fn check_vertical_curvature(surf: &FlattenedSurface<LinkageSurface>, table: &BilliardTable, count: usize) -> AssumptionCheck {
    let mut worst = f64::INFINITY;
    let mut samples = 0;
    let mut max_gap: f64 = 0.0;
    for (wi, wall) in table.walls.iter().enumerate() {
        let pts = match table.wall_points(wi, count / table.walls.len()) {
            Ok(p) => p,
            Err(_) => continue,
        };
        for x in pts {
            let Ok(nrm) = wall.outward_normal(&x) else { continue };
            for sheet in SheetId::ALL {
                let Ok(pt) = surf.surface.lift_point(&x, sheet) else { continue };
                let k = vertical_section_curvature(&surf.surface, &pt, &nrm);
                // closed form: twice the inverse rate of the vanishing radicand
                let q = surf.surface.radicands(&pt);
                let rate = if wi == 0 { q.de.dot(&nrm) } else { q.dr.dot(&nrm) };
                let expect = 2.0 / rate.abs();
                max_gap = max_gap.max((k.abs() - expect).abs() / expect);
                worst = worst.min(k.abs());
                samples += 1;
            }
        }
    }
    AssumptionCheck {
        pass: samples > 0 && worst > 1e-6 && worst.is_finite(),
        samples,
        worst_margin: worst,
        detail: format!("min |section curvature| = {worst:.6e}, max relative gap to closed form = {max_gap:.3e}"),
    }
}

pub fn check_wall_negativity(p: &LinkageParams, table: &BilliardTable, count: usize) -> AssumptionCheck {
    let mut worst = f64::INFINITY;
    let mut samples = 0;
    let mut agree = true;
    let mut max_poly_gap: f64 = 0.0;
    for wi in 0..table.walls.len() {
        let Ok(pts) = table.wall_points(wi, count.div_ceil(table.walls.len())) else {
            agree = false;
            continue;
        };
        for x in pts {
            let Ok(k) = wall_curvature(table, wi, &TorusPoint::new(x[0], x[1])) else {
                agree = false;
                continue;
            };
            let poly = wall_sign_polynomial(p, wi, x[0].cos());
            max_poly_gap = max_poly_gap.max((poly - wall_sign_trig(wi, &x)).abs());
            agree &= (k < 0.0) == (poly < 0.0);
            worst = worst.min(-k);
            samples += 1;
        }
    }
    let discriminants: Vec<f64> = (0..3).map(|i| wall_sign_discriminant(p, i)).collect();
    let leading_negative = 2.0 * p.l - 4.0 > 0.0 && p.r > 0.0;
    AssumptionCheck {
        pass: samples > 0 && agree && worst > 0.0 && max_poly_gap <= 1e-9 && discriminants.iter().all(|&d| d < 0.0) && leading_negative,
        samples,
        worst_margin: worst,
        detail: format!(
            "max wall curvature = {:.6e}, discriminants = [{:.6}, {:.6}, {:.6}], max polynomial gap = {max_poly_gap:.3e}",
            -worst, discriminants[0], discriminants[1], discriminants[2]
        ),
    }
}

fn check_finite_horizon(p: &LinkageParams, table: &BilliardTable, s: &AssumptionSampling) -> (AssumptionCheck, HorizonReport) {
    let analytic = 1.0 - (p.r * p.r + (p.l - 2.0).powi(2));
    let report = finite_horizon_search(table, s.horizon_length, &s.horizon);
    let pass = analytic > 0.0 && report.witness.is_none();
    let check = AssumptionCheck {
        pass,
        samples: report.lines,
        worst_margin: s.horizon_length - report.max_free_flight,
        detail: format!(
            "slope-one obstruction margin = {analytic:.6}, longest free flight = {:.6}, slope one = {:.6}",
            report.max_free_flight, report.slope_one_max
        ),
    };
    (check, report)
}
