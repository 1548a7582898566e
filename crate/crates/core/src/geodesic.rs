//! Unit-speed geodesics on `Σ_ε` with zone events and curvature quadratures.
//!
//! The flow `q̇ = p, ṗ = −N·⟨DN p, p⟩` is integrated in scaled coordinates
//! together with `∫K`, `∫|K|`, the compactified Riccati variable
//! `w = arctan u` (`w′ = −K cos²w − sin²w`) and a Jacobi pair `(J, J′)`.
//! After every accepted step the position is projected back onto
//! `{G_ε = 0}` and the velocity onto the unit tangent sphere.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::billiard::BilliardState;
use crate::error::{Error, Result};
use crate::ode::{compensated_add, dopri_step, step_factor, State, Tolerance};
use crate::rng::StreamRng;
use crate::surface::{sym2_eigenvalues, tangent_basis, Branched, FlattenedSurface, ImplicitSurface, SurfaceSampler, MIN_GRADIENT};

pub const DIM: usize = 11;
type Y = State<DIM>;

const I_INT_K: usize = 6;
const I_INT_ABS_K: usize = 7;
const I_W: usize = 8;
const I_J: usize = 9;
const I_DJ: usize = 10;

/// Renormalise the Jacobi pair when its norm exceeds this.
const JACOBI_RENORM: f64 = 1e8;
/// Events are located to this accuracy in arclength.
pub const EVENT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicState {
    /// Scaled position `(X, Y, Z)` on `{G_ε = 0}`.
    pub q: Vector3<f64>,
    /// Unit tangent velocity.
    pub p: Vector3<f64>,
    pub t: f64,
}

impl GeodesicState {
    pub fn reversed(&self) -> Self {
        Self { q: self.q, p: -self.p, t: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodesicOptions {
    pub tol: Tolerance,
    pub max_step: f64,
    /// Steps are capped by `curvature_step / (1 + |γ₊| + |γ₋|)`.
    pub curvature_step: f64,
    pub min_step: f64,
}

impl GeodesicOptions {
    /// Tolerances near the rounding floor, for reversibility checks on
    /// chaotic trajectories.
    pub fn precise() -> Self {
        Self { tol: Tolerance { rtol: 1e-16, atol: 1e-16 }, ..Default::default() }
    }
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        Self { tol: Tolerance { rtol: 1e-12, atol: 1e-12 }, max_step: 0.05, curvature_step: 0.05, min_step: 1e-14 }
    }
}

/// Pointwise geometry of `Σ_ε` used by the right-hand side.
struct Local {
    grad: Vector3<f64>,
    hess: Matrix3<f64>,
    /// Principal curvatures and their product.
    gamma_plus: f64,
    gamma_minus: f64,
    gauss_k: f64,
}

fn local<S: ImplicitSurface>(surf: &FlattenedSurface<S>, x: &Vector3<f64>) -> Local {
    let e = surf.epsilon;
    let xu = Vector3::new(x[0], x[1], x[2] / e);
    let g = surf.surface.gradient(&xu);
    let h = surf.surface.hessian(&xu);
    let grad = Vector3::new(g[0], g[1], g[2] / e);
    let s = Vector3::new(1.0, 1.0, 1.0 / e);
    let hess = Matrix3::from_fn(|i, j| h[(i, j)] * s[i] * s[j]);
    let gn = grad.norm().max(f64::MIN_POSITIVE);
    let n = grad / gn;
    let (t1, t2) = tangent_basis(&n);
    let a11 = (hess * t1).dot(&t1) / gn;
    let a12 = (hess * t2).dot(&t1) / gn;
    let a22 = (hess * t2).dot(&t2) / gn;
    let (gamma_plus, gamma_minus) = sym2_eigenvalues(&Matrix2::new(a11, a12, a12, a22));
    Local { grad, hess, gamma_plus, gamma_minus, gauss_k: a11 * a22 - a12 * a12 }
}

fn rhs<S: ImplicitSurface>(surf: &FlattenedSurface<S>, y: &Y) -> Y {
    let x = Vector3::new(y[0], y[1], y[2]);
    let p = Vector3::new(y[3], y[4], y[5]);
    let l = local(surf, &x);
    let n2 = l.grad.norm_squared().max(f64::MIN_POSITIVE);
    let acc = -l.grad * ((l.hess * p).dot(&p) / n2);
    let k = l.gauss_k;
    let w = y[I_W];
    let (sw, cw) = w.sin_cos();
    let mut d = Y::zeros();
    d[0] = p[0];
    d[1] = p[1];
    d[2] = p[2];
    d[3] = acc[0];
    d[4] = acc[1];
    d[5] = acc[2];
    d[I_INT_K] = k;
    d[I_INT_ABS_K] = k.abs();
    d[I_W] = -k * cw * cw - sw * sw;
    d[I_J] = y[I_DJ];
    d[I_DJ] = -k * y[I_J];
    d
}

fn project<S: ImplicitSurface>(surf: &FlattenedSurface<S>, y: &mut Y) -> Result<()> {
    project_compensated(surf, y, &mut Y::zeros())
}

// Newton projection of the compensated state `y + lo` onto the surface and
// the unit tangent sphere.
fn project_compensated<S: ImplicitSurface>(surf: &FlattenedSurface<S>, y: &mut Y, lo: &mut Y) -> Result<()> {
    let mut g = Vector3::zeros();
    for _ in 0..8 {
        let x = Vector3::new(y[0], y[1], y[2]);
        g = surf.gradient_scaled(&x);
        let v = surf.value_scaled(&x) + g.dot(&Vector3::new(lo[0], lo[1], lo[2]));
        let n2 = g.norm_squared();
        if n2.sqrt() < MIN_GRADIENT {
            return Err(Error::DegenerateNormal { norm: n2.sqrt() });
        }
        let dx = g * (-v / n2);
        let mut d = Y::zeros();
        d.fixed_rows_mut::<3>(0).copy_from(&dx);
        compensated_add(y, lo, &d);
        if dx.norm() <= 1e-17 * (1.0 + x.norm()) || v == 0.0 {
            break;
        }
    }
    if surf.periodic {
        for k in 0..2 {
            if !(0.0..TAU).contains(&y[k]) {
                y[k] = y[k].rem_euclid(TAU);
            }
        }
    }
    let n = g.normalize();
    let p = Vector3::new(y[3], y[4], y[5]) + Vector3::new(lo[3], lo[4], lo[5]);
    let mut d = Y::zeros();
    d.fixed_rows_mut::<3>(3).copy_from(&(-n * p.dot(&n)));
    compensated_add(y, lo, &d);
    let ph = Vector3::new(y[3], y[4], y[5]);
    let pl = Vector3::new(lo[3], lo[4], lo[5]);
    let s2 = ph.norm_squared() + 2.0 * ph.dot(&pl);
    let mut d = Y::zeros();
    d.fixed_rows_mut::<3>(3).copy_from(&(ph * (1.0 / s2.sqrt() - 1.0)));
    compensated_add(y, lo, &d);
    Ok(())
}

// Same surface with the equation of the sheet through `y`.
fn localize<S: ImplicitSurface + Clone>(surf: &FlattenedSurface<S>, y: &Y) -> FlattenedSurface<S> {
    surf.local_at(&Vector3::new(y[0], y[1], y[2] / surf.epsilon))
}

fn pack(s: &GeodesicState) -> Y {
    let mut y = Y::zeros();
    y[0] = s.q[0];
    y[1] = s.q[1];
    y[2] = s.q[2];
    y[3] = s.p[0];
    y[4] = s.p[1];
    y[5] = s.p[2];
    y[I_J] = 1.0;
    y
}

fn unpack(y: &Y, t: f64) -> GeodesicState {
    GeodesicState { q: Vector3::new(y[0], y[1], y[2]), p: Vector3::new(y[3], y[4], y[5]), t }
}

/// One accepted step of at most `dt`.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub state: GeodesicState,
    pub taken: f64,
    pub suggested: f64,
}

fn step_cap<S: ImplicitSurface>(surf: &FlattenedSurface<S>, y: &Y, opts: &GeodesicOptions) -> f64 {
    let l = local(surf, &Vector3::new(y[0], y[1], y[2]));
    opts.max_step.min(opts.curvature_step / (1.0 + l.gamma_plus.abs() + l.gamma_minus.abs()))
}

fn underflow(t: f64, y: &Y) -> Error {
    Error::StepUnderflow { t, x: y[0], y: y[1], z: y[2] }
}

// Adaptive attempts from (t, y + lo) with initial step h; returns
// (y_new, lo_new, h_taken, h_next).
fn advance<S: ImplicitSurface>(
    surf: &FlattenedSurface<S>,
    t: f64,
    y: &Y,
    lo: &Y,
    dy: &Y,
    mut h: f64,
    opts: &GeodesicOptions,
) -> Result<(Y, Y, f64, f64)> {
    let f = |_t: f64, y: &Y| rhs(surf, y);
    loop {
        if h < opts.min_step {
            return Err(underflow(t, y));
        }
        let trial = dopri_step(&f, t, y, dy, h, &opts.tol);
        if trial.error.is_finite() && trial.error <= 1.0 {
            let mut y1 = *y;
            let mut lo1 = *lo;
            compensated_add(&mut y1, &mut lo1, &trial.delta);
            project_compensated(surf, &mut y1, &mut lo1)?;
            return Ok((y1, lo1, h, h * step_factor(trial.error)));
        }
        let factor = if trial.error.is_finite() { step_factor(trial.error) } else { 0.2 };
        h *= factor;
    }
}

/// One adaptive step of the geodesic equation, at most `dt` long, followed
/// by projection onto the surface and the unit tangent sphere.
pub fn geodesic_step<S: ImplicitSurface + Clone>(surf: &FlattenedSurface<S>, s: &GeodesicState, dt: f64) -> Result<StepOutcome> {
    let opts = GeodesicOptions::default();
    let y = pack(s);
    let surf = &localize(surf, &y);
    let h = dt.min(step_cap(surf, &y, &opts));
    let (y1, _, taken, suggested) = advance(surf, s.t, &y, &Y::zeros(), &rhs(surf, &y), h, &opts)?;
    Ok(StepOutcome { state: unpack(&y1, s.t + taken), taken, suggested })
}

/// Row of a sampled trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub q: Vector3<f64>,
    pub p: Vector3<f64>,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub in_z_delta: bool,
    pub in_v_nu: bool,
}

/// A maximal stay in `Z_δ = {|H| ≤ δ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZonePassage {
    pub t_in: f64,
    pub t_out: f64,
    /// Momentum changes in the wall frame fixed at entry: `y` along the
    /// horizontal wall normal, oriented so the incoming `p_y` is negative.
    pub delta_px: f64,
    pub delta_py: f64,
    /// `inf (p_y(t) − p_y(t_in))` over accepted steps of the passage.
    pub min_delta_py: f64,
    /// `|p_x|` at entry in the wall frame.
    pub entry_px: f64,
    pub integral_k: f64,
    pub integral_abs_k: f64,
    pub entered_v_nu: bool,
    pub component_id: usize,
    /// False when the passage is cut by the start or end of the run.
    pub complete: bool,
}

/// Per-step values for Riccati traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub u: f64,
    pub k: f64,
    /// `J′/J` for the Jacobi field with `J(0) = 1, J′(0) = 0`.
    pub jacobi_u: f64,
}

pub type Labeller<'a> = &'a (dyn Fn(&Vector3<f64>) -> usize + Sync);

#[derive(Clone, Copy, Default)]
pub struct RunOptions<'a> {
    /// `(δ, ν)` for zone events.
    pub zones: Option<(f64, f64)>,
    /// Output stride for trajectory samples.
    pub stride: Option<f64>,
    pub record_steps: bool,
    /// Wall component of an unscaled point, for passage bookkeeping.
    pub labeller: Option<Labeller<'a>>,
    pub options: Option<GeodesicOptions>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunOutput {
    pub end: Option<GeodesicState>,
    pub integral_k: f64,
    pub integral_abs_k: f64,
    /// Riccati solution `u(T)` with `u(0) = 0`.
    pub u_end: f64,
    /// First time `|u|` becomes infinite.
    pub blowup_at: Option<f64>,
    /// Accumulated `log ‖(J, J′)‖`.
    pub jacobi_log: f64,
    pub samples: Vec<TrajectorySample>,
    pub passages: Vec<ZonePassage>,
    pub steps: Vec<StepRecord>,
    pub max_constraint_drift: f64,
    pub max_speed_drift: f64,
    pub accepted_steps: usize,
}

struct OpenPassage {
    t_in: f64,
    frame_x: Vector2<f64>,
    frame_y: Vector2<f64>,
    py_in: f64,
    px_in: f64,
    min_dpy: f64,
    int_k: f64,
    int_abs_k: f64,
    entered_v: bool,
    component: usize,
    complete: bool,
}

struct Ctx<'s, S> {
    surf: &'s FlattenedSurface<S>,
}

impl<'s, S: ImplicitSurface> Ctx<'s, S> {
    fn h_of(&self, y: &Y) -> f64 {
        let x = Vector3::new(y[0], y[1], y[2] / self.surf.epsilon);
        let g = self.surf.surface.gradient(&x);
        g[2] / g.norm().max(f64::MIN_POSITIVE)
    }

    fn nz_of(&self, y: &Y) -> f64 {
        let g = self.surf.gradient_scaled(&Vector3::new(y[0], y[1], y[2]));
        g[2] / g.norm().max(f64::MIN_POSITIVE)
    }

    fn sample(&self, t: f64, y: &Y, zones: Option<(f64, f64)>) -> TrajectorySample {
        let h = self.h_of(y);
        let nz = self.nz_of(y);
        let k = local(self.surf, &Vector3::new(y[0], y[1], y[2])).gauss_k;
        let (in_z, in_v) = match zones {
            Some((d, nu)) => (h.abs() <= d, nz.abs() < 1.0 - nu),
            None => (false, false),
        };
        TrajectorySample { t, q: Vector3::new(y[0], y[1], y[2]), p: Vector3::new(y[3], y[4], y[5]), h, k, in_z_delta: in_z, in_v_nu: in_v }
    }

    fn open(&self, t: f64, y: &Y, labeller: Option<Labeller>, complete: bool) -> OpenPassage {
        let xu = Vector3::new(y[0], y[1], y[2] / self.surf.epsilon);
        let g = self.surf.surface.gradient(&xu);
        let mut nh = Vector2::new(g[0], g[1]);
        if nh.norm() > 0.0 {
            nh /= nh.norm();
        } else {
            nh = Vector2::new(0.0, 1.0);
        }
        let ph = Vector2::new(y[3], y[4]);
        let fy = if ph.dot(&nh) > 0.0 { -nh } else { nh };
        let fx = Vector2::new(fy[1], -fy[0]);
        OpenPassage {
            t_in: t,
            frame_x: fx,
            frame_y: fy,
            py_in: ph.dot(&fy),
            px_in: ph.dot(&fx),
            min_dpy: 0.0,
            int_k: y[I_INT_K],
            int_abs_k: y[I_INT_ABS_K],
            entered_v: false,
            component: labeller.map(|f| f(&xu)).unwrap_or(0),
            complete,
        }
    }

    fn track(&self, o: &mut OpenPassage, y: &Y) {
        let ph = Vector2::new(y[3], y[4]);
        o.min_dpy = o.min_dpy.min(ph.dot(&o.frame_y) - o.py_in);
    }

    fn close(&self, o: OpenPassage, t: f64, y: &Y, complete: bool) -> ZonePassage {
        let ph = Vector2::new(y[3], y[4]);
        let dpy = ph.dot(&o.frame_y) - o.py_in;
        ZonePassage {
            t_in: o.t_in,
            t_out: t,
            delta_px: ph.dot(&o.frame_x) - o.px_in,
            delta_py: dpy,
            min_delta_py: o.min_dpy.min(dpy),
            entry_px: o.px_in.abs(),
            integral_k: y[I_INT_K] - o.int_k,
            integral_abs_k: y[I_INT_ABS_K] - o.int_abs_k,
            entered_v_nu: o.entered_v,
            component_id: o.component,
            complete: o.complete && complete,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum EventKind {
    Zone,
    Vnu,
    Blowup,
}

/// Integrates from `s0` for arclength `t_end`.
pub fn integrate<S: ImplicitSurface + Clone>(surf: &FlattenedSurface<S>, s0: &GeodesicState, t_end: f64, ro: &RunOptions) -> Result<RunOutput> {
    integrate_compensated(surf, pack(s0), Y::zeros(), s0.t, t_end, ro).map(|(out, _, _)| out)
}

// Integration of the compensated state `y + lo`; also returns the final pair.
fn integrate_compensated<S: ImplicitSurface + Clone>(
    surf: &FlattenedSurface<S>,
    mut y: Y,
    mut lo: Y,
    t_start: f64,
    t_end: f64,
    ro: &RunOptions,
) -> Result<(RunOutput, Y, Y)> {
    let opts = ro.options.unwrap_or_default();
    let start_chart = localize(surf, &y);
    project_compensated(&start_chart, &mut y, &mut lo)?;
    let ctx = Ctx { surf: &start_chart };
    let mut t = 0.0;
    let mut out = RunOutput::default();
    let mut h = step_cap(&start_chart, &y, &opts);
    let mut dy = rhs(&start_chart, &y);
    let mut next_sample = 0.0;
    let mut open: Option<OpenPassage> = None;
    let mut in_v = false;

    if let Some((delta, nu)) = ro.zones {
        if ctx.h_of(&y).abs() <= delta {
            let mut o = ctx.open(0.0, &y, ro.labeller, false);
            in_v = ctx.nz_of(&y).abs() < 1.0 - nu;
            o.entered_v = in_v;
            open = Some(o);
        }
    }
    if ro.record_steps {
        out.steps.push(StepRecord { t: 0.0, u: 0.0, k: local(surf, &Vector3::new(y[0], y[1], y[2])).gauss_k, jacobi_u: 0.0 });
    }

    let global = surf;
    while t < t_end {
        let chart = localize(surf, &y);
        let surf = &chart;
        let ctx = Ctx { surf };
        let f = |_t: f64, y: &Y| rhs(surf, y);
        let cap = step_cap(surf, &y, &opts);
        let h_try = h.min(cap).min(t_end - t);
        let last = h_try >= t_end - t;
        let (y1, lo1, taken, next) = advance(surf, t, &y, &lo, &dy, h_try, &opts)?;
        let t1 = if last && taken == h_try { t_end } else { t + taken };
        let dy1 = rhs(surf, &y1);
        let restep = |tau: f64| -> Result<Y> {
            let mut yt = if tau <= 0.0 { y } else { dopri_step(&f, t, &y, &dy, tau, &opts.tol).y };
            project(surf, &mut yt)?;
            Ok(yt)
        };

        // trajectory samples
        if let Some(stride) = ro.stride {
            while next_sample <= t1 + 1e-12 && next_sample <= t_end + 1e-12 {
                let ys = if (next_sample - t1).abs() <= 1e-12 { y1 } else { restep(next_sample - t)? };
                out.samples.push(ctx.sample(next_sample, &ys, ro.zones));
                next_sample = (out.samples.len()) as f64 * stride;
            }
        }

        // events inside the step
        let mut events: Vec<(f64, EventKind)> = Vec::new();
        if let Some((delta, nu)) = ro.zones {
            let ez = |yy: &Y| ctx.h_of(yy).abs() - delta;
            let ev = |yy: &Y| ctx.nz_of(yy).abs() - (1.0 - nu);
            if (ez(&y) <= 0.0) != (ez(&y1) <= 0.0) {
                events.push((locate(&restep, &ez, taken)?, EventKind::Zone));
            }
            if (ev(&y) < 0.0) != (ev(&y1) < 0.0) {
                events.push((locate(&restep, &ev, taken)?, EventKind::Vnu));
            }
        }
        if out.blowup_at.is_none() && y1[I_W].abs() >= FRAC_PI_2 {
            let eb = |yy: &Y| yy[I_W].abs() - FRAC_PI_2;
            events.push((locate(&restep, &eb, taken)?, EventKind::Blowup));
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (tau, kind) in events {
            let ye = restep(tau)?;
            let te = t + tau;
            match kind {
                EventKind::Zone => {
                    if let Some(mut o) = open.take() {
                        ctx.track(&mut o, &ye);
                        out.passages.push(ctx.close(o, te, &ye, true));
                    } else {
                        let mut o = ctx.open(te, &ye, ro.labeller, true);
                        o.entered_v = in_v;
                        open = Some(o);
                    }
                }
                EventKind::Vnu => {
                    in_v = !in_v;
                    if let Some(o) = open.as_mut() {
                        o.entered_v |= in_v;
                    }
                }
                EventKind::Blowup => out.blowup_at = Some(te),
            }
        }
        if let Some(o) = open.as_mut() {
            ctx.track(o, &y1);
        }

        y = y1;
        lo = lo1;
        dy = dy1;
        t = t1;
        h = next;
        out.accepted_steps += 1;

        // Jacobi renormalisation keeps the pair representable
        let jn = y[I_J].hypot(y[I_DJ]);
        if jn > JACOBI_RENORM {
            out.jacobi_log += jn.ln();
            for i in [I_J, I_DJ] {
                y[i] /= jn;
                lo[i] /= jn;
            }
            dy = rhs(surf, &y);
        }

        let gv = global.value_scaled(&Vector3::new(y[0], y[1], y[2])).abs();
        out.max_constraint_drift = out.max_constraint_drift.max(gv);
        let sp = (Vector3::new(y[3], y[4], y[5]).norm() - 1.0).abs();
        out.max_speed_drift = out.max_speed_drift.max(sp);
        if ro.record_steps {
            out.steps.push(StepRecord {
                t,
                u: y[I_W].tan(),
                k: local(surf, &Vector3::new(y[0], y[1], y[2])).gauss_k,
                jacobi_u: y[I_DJ] / y[I_J],
            });
        }
    }
    let end_chart = localize(global, &y);
    let ctx = Ctx { surf: &end_chart };
    if let Some(o) = open.take() {
        out.passages.push(ctx.close(o, t, &y, false));
    }
    out.end = Some(unpack(&y, t_start + t));
    out.integral_k = y[I_INT_K];
    out.integral_abs_k = y[I_INT_ABS_K];
    out.u_end = y[I_W].tan();
    out.jacobi_log += y[I_J].hypot(y[I_DJ]).ln();
    Ok((out, y, lo))
}

/// Integrates for `t_end`, reverses the velocity of the final state without
/// rounding it, integrates back and returns `‖Δq‖ + ‖Δp‖` against `s0`
/// (horizontal offsets taken modulo `2π` on periodic surfaces).
pub fn time_reversal_error<S: ImplicitSurface + Clone>(
    surf: &FlattenedSurface<S>,
    s0: &GeodesicState,
    t_end: f64,
    options: Option<GeodesicOptions>,
) -> Result<f64> {
    let ro = RunOptions { options, ..Default::default() };
    let (_, mut y, mut lo) = integrate_compensated(surf, pack(s0), Y::zeros(), 0.0, t_end, &ro)?;
    for i in 3..6 {
        y[i] = -y[i];
        lo[i] = -lo[i];
    }
    let (_, yb, lob) = integrate_compensated(surf, y, lo, 0.0, t_end, &ro)?;
    let mut dq = Vector3::new(yb[0] - s0.q[0] + lob[0], yb[1] - s0.q[1] + lob[1], yb[2] - s0.q[2] + lob[2]);
    if surf.periodic {
        dq[0] = crate::torus::wrap_signed(dq[0]);
        dq[1] = crate::torus::wrap_signed(dq[1]);
    }
    let dp = Vector3::new(yb[3] + lob[3], yb[4] + lob[4], yb[5] + lob[5]) + s0.p;
    Ok(dq.norm() + dp.norm())
}

// Bisection for the sign change of `e` along the re-stepped state on (0, h].
fn locate(restep: &dyn Fn(f64) -> Result<Y>, e: &dyn Fn(&Y) -> f64, h: f64) -> Result<f64> {
    let mut lo = 0.0;
    let mut hi = h;
    let s_lo = e(&restep(0.0)?) <= 0.0;
    while hi - lo > EVENT_TOL {
        let mid = 0.5 * (lo + hi);
        if (e(&restep(mid)?) <= 0.0) == s_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Integrates to arclength `t_end`, sampling every `1e-3` and reporting
/// each maximal stay in `Z_δ`.
pub fn integrate_with_events<S: ImplicitSurface + Clone>(
    surf: &FlattenedSurface<S>,
    s0: &GeodesicState,
    t_end: f64,
    delta: f64,
    nu: f64,
) -> Result<(Vec<TrajectorySample>, Vec<ZonePassage>)> {
    let ro = RunOptions { zones: Some((delta, nu)), stride: Some(1e-3), ..Default::default() };
    let out = integrate(surf, s0, t_end, &ro)?;
    Ok((out.samples, out.passages))
}

/// Final state after arclength `t_end`.
pub fn flow<S: ImplicitSurface + Clone>(surf: &FlattenedSurface<S>, s0: &GeodesicState, t_end: f64) -> Result<GeodesicState> {
    let out = integrate(surf, s0, t_end, &RunOptions::default())?;
    Ok(out.end.expect("integration returns an end state"))
}

/// Lifts a billiard phase point to the chosen sheet of `Σ` and pushes it
/// forward to `Σ_ε`.
pub fn pushforward_initial<S: ImplicitSurface + Branched + Clone>(
    surf: &FlattenedSurface<S>,
    b: &BilliardState,
    branch: S::Branch,
) -> Result<GeodesicState> {
    let base = b.q.lift();
    let x = surf.surface.lift_point(&base, branch)?;
    let xs = surf.scale(&x);
    let p = surf.local_at(&x).lift_horizontal(&xs, &b.p)?;
    Ok(GeodesicState { q: xs, p, t: 0.0 })
}

/// Point drawn by the surface sampler with a uniformly random unit tangent.
pub fn random_initial<S: ImplicitSurface + SurfaceSampler + Clone>(surf: &FlattenedSurface<S>, rng: &mut StreamRng) -> Option<GeodesicState> {
    for _ in 0..10_000 {
        let Some(x) = surf.surface.sample_point(rng) else { continue };
        let xs = surf.scale(&x);
        let Ok(n) = surf.local_at(&x).normal_scaled(&xs) else { continue };
        let (a, b) = tangent_basis(&n);
        let angle: f64 = rng.random_range(0.0..TAU);
        return Some(GeodesicState { q: xs, p: a * angle.cos() + b * angle.sin(), t: 0.0 });
    }
    None
}

/// Projection `π_*` to the table: base point and normalised horizontal velocity.
pub fn project_to_table(s: &GeodesicState) -> BilliardState {
    BilliardState::new(crate::torus::TorusPoint::new(s.q[0], s.q[1]), Vector2::new(s.p[0], s.p[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{Plane, Sphere, Tube};
    use crate::torus::TorusPoint;

    #[test]
    fn plane_geodesic_is_straight() {
        let s = FlattenedSurface::new(Plane { normal: Vector3::z() }, 1.0, false);
        let p = Vector3::new(0.6, 0.8, 0.0);
        let s0 = GeodesicState { q: Vector3::zeros(), p, t: 0.0 };
        let end = flow(&s, &s0, 1.0).unwrap();
        assert!((end.p - p).norm() < 1e-10);
        assert!((end.q - p).norm() < 1e-10);
    }

    #[test]
    fn great_circle_period() {
        let s = FlattenedSurface::new(Sphere { radius: 1.0 }, 1.0, false);
        let s0 = GeodesicState { q: Vector3::x(), p: Vector3::new(0.0, 0.6, 0.8), t: 0.0 };
        let end = flow(&s, &s0, TAU).unwrap();
        assert!((end.q - s0.q).norm() < 1e-6);
        assert!((end.p - s0.p).norm() < 1e-6);
    }

    #[test]
    fn tube_conserves_axial_momentum() {
        let s = FlattenedSurface::new(Tube, 0.1, false);
        let a: f64 = 0.4;
        let q = s.scale(&Vector3::new(0.0, a.cos(), a.sin()));
        let n = s.normal_scaled(&q).unwrap();
        let t2 = n.cross(&Vector3::x());
        let p = (Vector3::x() * 0.3 + t2 * (1.0f64 - 0.09).sqrt()).normalize();
        let ro = RunOptions { stride: Some(0.01), ..Default::default() };
        let out = integrate(&s, &GeodesicState { q, p, t: 0.0 }, 5.0, &ro).unwrap();
        for smp in &out.samples {
            assert!((smp.p[0] - p[0]).abs() < 1e-8, "{}", smp.p[0] - p[0]);
        }
    }

    #[test]
    fn sphere_riccati_blows_up_at_half_period() {
        // K = 1: u = −tan t
        let s = FlattenedSurface::new(Sphere { radius: 1.0 }, 1.0, false);
        let s0 = GeodesicState { q: Vector3::x(), p: Vector3::y(), t: 0.0 };
        let out = integrate(&s, &s0, 2.0, &RunOptions::default()).unwrap();
        let b = out.blowup_at.unwrap();
        assert!((b - std::f64::consts::FRAC_PI_2).abs() < 1e-6, "{b}");
    }

    #[test]
    fn tube_zone_events_match_closed_form() {
        // H = sin t along a section circle travelled at unit speed (ε = 1)
        let s = FlattenedSurface::new(Tube, 1.0, false);
        let s0 = GeodesicState { q: Vector3::new(0.0, 0.0, 1.0), p: Vector3::new(0.0, 1.0, 0.0), t: 0.0 };
        let delta = 0.2;
        let (_, passages) = integrate_with_events(&s, &s0, 3.0, delta, 0.5).unwrap();
        let complete: Vec<_> = passages.iter().filter(|p| p.complete).collect();
        assert_eq!(complete.len(), 1);
        let p = complete[0];
        // height sin(π/2 − t) = cos t reaches ±δ at t = acos(±δ)
        assert!((p.t_in - delta.acos()).abs() < 1e-9, "{}", p.t_in);
        assert!((p.t_out - (-delta).acos()).abs() < 1e-9);
        assert!(p.entered_v_nu);
        assert!(p.integral_k.abs() < 1e-12);
    }

    #[test]
    fn pushforward_round_trip() {
        let s = FlattenedSurface::new(Sphere { radius: 2.0 }, 0.3, false);
        let b = BilliardState::from_angle(TorusPoint::new(0.4, 0.7), 1.1);
        let g = pushforward_initial(&s, &b, true).unwrap();
        let back = project_to_table(&g);
        assert!((back.q.theta - b.q.theta).abs() < 1e-10 && (back.q.phi - b.q.phi).abs() < 1e-10);
        assert!((back.p - b.p).norm() < 1e-10);
        assert!(g.p.dot(&s.normal_scaled(&g.q).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn sphere_time_reversal() {
        let s = FlattenedSurface::new(Sphere { radius: 1.0 }, 0.5, false);
        let q = s.scale(&Vector3::new(0.6, 0.0, 0.8));
        let p = s.normal_scaled(&q).unwrap().cross(&Vector3::y()).normalize();
        let err = time_reversal_error(&s, &GeodesicState { q, p, t: 0.0 }, 5.0, None).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn step_underflow_is_reported() {
        let s = FlattenedSurface::new(Sphere { radius: 1.0 }, 1.0, false);
        let s0 = GeodesicState { q: Vector3::x(), p: Vector3::y(), t: 0.0 };
        let ro = RunOptions {
            options: Some(GeodesicOptions { tol: Tolerance { rtol: 1e-30, atol: 1e-30 }, min_step: 1e-6, ..Default::default() }),
            ..Default::default()
        };
        assert!(matches!(integrate(&s, &s0, 1.0, &ro), Err(Error::StepUnderflow { .. })));
    }
}
