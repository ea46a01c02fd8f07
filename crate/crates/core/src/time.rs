//! Simulated time is kept in integer picoseconds.

pub type Time = u64;

pub const PS_PER_NS: u64 = 1_000;

pub fn ns(v: f64) -> Time {
    (v * PS_PER_NS as f64).round() as Time
}

pub fn to_ns(t: Time) -> f64 {
    t as f64 / PS_PER_NS as f64
}

/// Clock period in picoseconds for a frequency given in MHz.
pub fn period_ps(mhz: f64) -> Time {
    (1.0e6 / mhz).round() as Time
}
