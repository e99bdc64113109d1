//! Simulated time.
//!
//! Time is an integer count of nanoseconds since the start of the run so that
//! event ordering and replay are exact on every platform.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

const NANOS_PER_SEC: f64 = 1e9;

/// Nanoseconds since simulation start.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(nanos: u64) -> Self {
        SimTime(nanos)
    }

    /// Converts seconds to simulated time, rounding to the nearest nanosecond.
    /// Non-finite or huge values saturate at [`SimTime::MAX`].
    pub fn from_secs_f64(secs: f64) -> Self {
        assert!(secs >= 0.0, "negative duration {secs}");
        let nanos = (secs * NANOS_PER_SEC).round();
        if nanos >= u64::MAX as f64 {
            SimTime::MAX
        } else {
            SimTime(nanos as u64)
        }
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    /// Signed difference `self - earlier` in seconds.
    pub fn secs_since(self, earlier: SimTime) -> f64 {
        (self.0 as i128 - earlier.0 as i128) as f64 / NANOS_PER_SEC
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.checked_sub(rhs.0).expect("SimTime underflow"))
    }
}

/// Renders seconds with nine decimals, which is exact at nanosecond resolution.
impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}", self.0 / 1_000_000_000, self.0 % 1_000_000_000)
    }
}

/// Parses the `Display` form (`"12.000500000"`, `"3"`, `"0.5"`) back into exact nanoseconds.
impl std::str::FromStr for SimTime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 9 {
            return Err(format!("more than nanosecond precision in {s:?}"));
        }
        let whole: u64 = whole.parse().map_err(|e| format!("{s:?}: {e}"))?;
        let mut frac_nanos = 0u64;
        if !frac.is_empty() {
            let digits: u64 = frac.parse().map_err(|e| format!("{s:?}: {e}"))?;
            frac_nanos = digits * 10u64.pow(9 - frac.len() as u32);
        }
        Ok(SimTime(whole * 1_000_000_000 + frac_nanos))
    }
}
