//! Dormand–Prince 5(4) embedded Runge–Kutta pair.

use nalgebra::SVector;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order weights minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

pub type State<const N: usize> = SVector<f64, N>;

/// Result of one trial step.
#[derive(Debug, Clone, Copy)]
pub struct Trial<const N: usize> {
    pub y: State<N>,
    /// `y − y₀` before rounding into `y`.
    pub delta: State<N>,
    /// Derivative at the new point (first stage of the next step).
    pub dy: State<N>,
    /// Weighted RMS error estimate; accept when `≤ 1`.
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

/// One Dormand–Prince step from `(t, y)` with derivative `dy0 = f(t, y)`.
pub fn dopri_step<const N: usize, F>(f: &F, t: f64, y: &State<N>, dy0: &State<N>, h: f64, tol: &Tolerance) -> Trial<N>
where
    F: Fn(f64, &State<N>) -> State<N>,
{
    let k1 = *dy0;
    let k2 = f(t + C2 * h, &(y + k1 * (h * A21)));
    let k3 = f(t + C3 * h, &(y + (k1 * A31 + k2 * A32) * h));
    let k4 = f(t + C4 * h, &(y + (k1 * A41 + k2 * A42 + k3 * A43) * h));
    let k5 = f(t + C5 * h, &(y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h));
    let k6 = f(t + h, &(y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h));
    let delta = (k1 * B1 + k3 * B3 + k4 * B4 + k5 * B5 + k6 * B6) * h;
    let y1 = y + delta;
    let k7 = f(t + h, &y1);
    let err = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * h;
    let mut acc = 0.0;
    for i in 0..N {
        let scale = tol.atol + tol.rtol * y[i].abs().max(y1[i].abs());
        acc += (err[i] / scale).powi(2);
    }
    Trial { y: y1, delta, dy: k7, error: (acc / N as f64).sqrt() }
}

/// Adds `delta` to the compensated value `(hi, lo)`.
pub fn compensated_add<const N: usize>(hi: &mut State<N>, lo: &mut State<N>, delta: &State<N>) {
    for i in 0..N {
        let t = delta[i] + lo[i];
        let s = hi[i] + t;
        let bb = s - hi[i];
        lo[i] = (hi[i] - (s - bb)) + (t - bb);
        hi[i] = s;
    }
}

/// Step-size factor for the next attempt after a trial with `error`.
pub fn step_factor(error: f64) -> f64 {
    if error == 0.0 {
        5.0
    } else {
        (0.9 * error.powf(-0.2)).clamp(0.2, 5.0)
    }
}
