//! Nondimensional units.
//!
//! Lengths are scaled by 1000 km and velocities by 10 m/s, so one unit of
//! model time is 1e5 s (about 27.8 h).

use crate::error::{Error, Result};

pub const LENGTH_SCALE_M: f64 = 1.0e6;
pub const VELOCITY_SCALE_MS: f64 = 10.0;
pub const TIME_SCALE_S: f64 = LENGTH_SCALE_M / VELOCITY_SCALE_MS;

pub const CORIOLIS_F0: f64 = 1.0e-4;
pub const REDUCED_GRAVITY: f64 = 0.98;

pub fn seconds(s: f64) -> f64 {
    s / TIME_SCALE_S
}

pub fn minutes(m: f64) -> f64 {
    seconds(60.0 * m)
}

pub fn hours(h: f64) -> f64 {
    seconds(3600.0 * h)
}

pub fn days(d: f64) -> f64 {
    hours(24.0 * d)
}

pub fn to_hours(t: f64) -> f64 {
    t * TIME_SCALE_S / 3600.0
}

pub fn to_days(t: f64) -> f64 {
    to_hours(t) / 24.0
}

/// Coupling coefficient `f0² L² / (g' D)` for a layer of depth `depth_m`.
pub fn coupling_coefficient(depth_m: f64) -> f64 {
    CORIOLIS_F0 * CORIOLIS_F0 * LENGTH_SCALE_M * LENGTH_SCALE_M / (REDUCED_GRAVITY * depth_m)
}

/// Number of whole `step`s in `duration`, rejecting anything that is not an
/// integer multiple (relative slack 1e-9).
pub fn whole_steps(duration: f64, step: f64) -> Result<usize> {
    if !(duration >= 0.0) || !(step > 0.0) {
        return Err(Error::NotStepMultiple { duration, step });
    }
    let n = (duration / step).round();
    if (n * step - duration).abs() > 1e-9 * step.max(duration) {
        return Err(Error::NotStepMultiple { duration, step });
    }
    Ok(n as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupling_from_depths() {
        assert!((coupling_coefficient(6000.0) - 1.7007).abs() < 1e-4);
        assert!((coupling_coefficient(4000.0) - 2.5510).abs() < 1e-4);
        assert!((coupling_coefficient(5750.0) - 1.7746).abs() < 1e-4);
        assert!((coupling_coefficient(4250.0) - 2.4010).abs() < 1e-4);
    }

    #[test]
    fn step_multiples() {
        assert_eq!(whole_steps(days(1.0), minutes(20.0)).unwrap(), 72);
        assert_eq!(whole_steps(days(1.0), minutes(10.0)).unwrap(), 144);
        assert_eq!(whole_steps(0.0, minutes(10.0)).unwrap(), 0);
        assert!(whole_steps(minutes(25.0), minutes(10.0)).is_err());
        assert!((to_hours(hours(3.5)) - 3.5).abs() < 1e-12);
    }
}
