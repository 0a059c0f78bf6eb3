//! Float functions that work without `std`.

pub use libm::{atan, atan2, cos, exp, fabs, floor, log, sin, sqrt, tan};

pub const PI: f64 = core::f64::consts::PI;
pub const TAU: f64 = core::f64::consts::TAU;

/// Wrap an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a - TAU * floor(a / TAU);
    if w > PI {
        w -= TAU;
    }
    w
}
