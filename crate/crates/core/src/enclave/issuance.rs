//! Yearly compounding bound on the total amount an instance may issue.

use num_bigint::BigUint;
use serde::Serialize;

use crate::impl_codec;
use crate::time::{Timestamp, YEAR};

/// Maximal yearly inflation as the fraction `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InflationRate {
    pub num: u64,
    pub den: u64,
}
impl_codec!(InflationRate { num, den });

impl InflationRate {
    pub fn percent(p: u64) -> Self {
        InflationRate { num: p, den: 100 }
    }

    pub fn zero() -> Self {
        InflationRate { num: 0, den: 1 }
    }

    pub fn is_valid(&self) -> bool {
        self.den > 0
    }
}

/// Number of compounding periods that have started by `now`. The first
/// period opens at creation, so issuance is possible immediately.
pub fn periods_started(created_at: Timestamp, now: Timestamp) -> u64 {
    now.saturating_sub(created_at) / YEAR + 1
}

/// `floor(t_i0 · (1 + rate)^periods)`, saturating at `u64::MAX`.
pub fn allowed_issued(
    t_i0: u64,
    rate: InflationRate,
    created_at: Timestamp,
    now: Timestamp,
) -> u64 {
    if !rate.is_valid() {
        return t_i0;
    }
    let p = periods_started(created_at, now);
    let exp = u32::try_from(p).unwrap_or(u32::MAX);
    let num = BigUint::from(rate.den + rate.num).pow(exp);
    let den = BigUint::from(rate.den).pow(exp);
    let cap = BigUint::from(t_i0) * num / den;
    u64::try_from(cap).unwrap_or(u64::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_year_admits_one_period() {
        let r = InflationRate::percent(10);
        assert_eq!(allowed_issued(1000, r, 0, 0), 1100);
        assert_eq!(allowed_issued(1000, r, 0, YEAR - 1), 1100);
        assert_eq!(allowed_issued(1000, r, 0, YEAR), 1210);
    }

    #[test]
    fn zero_rate_is_flat() {
        assert_eq!(
            allowed_issued(777, InflationRate::zero(), 5, 40 * YEAR),
            777
        );
    }
}
