//! The handful of float routines `core` does not provide.

pub(crate) fn abs(x: f64) -> f64 {
    if x < 0.0 {
        -x
    } else {
        x
    }
}

/// Rounds half away from zero. Values must fit in an `i64`.
pub(crate) fn round_half_away(x: f64) -> i64 {
    let t = x as i64;
    let frac = x - t as f64;
    if frac >= 0.5 {
        t + 1
    } else if frac <= -0.5 {
        t - 1
    } else {
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_matches_half_away_from_zero() {
        assert_eq!(round_half_away(0.5), 1);
        assert_eq!(round_half_away(-0.5), -1);
        assert_eq!(round_half_away(1.49), 1);
        assert_eq!(round_half_away(-2.51), -3);
        assert_eq!(round_half_away(0.0), 0);
        assert_eq!(abs(-3.0), 3.0);
    }
}
