//! Flattened-surface geodesic flows, the dispersive torus billiards they
//! converge to, Riccati hyperbolicity certificates, and an explicit linkage
//! whose configuration space carries an Anosov geodesic flow.

pub mod billiard;
pub mod contour;
pub mod error;
pub mod experiments;
pub mod export;
pub mod geodesic;
pub mod horizon;
pub mod hyperbolicity;
pub mod linkage;
pub mod ode;
pub mod rng;
pub mod surface;
pub mod torus;

pub use error::{Error, Result};
pub use torus::{segment_curve_crossing, torus_distance, CurveField, ImplicitCurve, LiftedSegment, TorusPoint};
