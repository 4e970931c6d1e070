//! Conversions between logarithmic and linear power units.
//!
//! Physics code works in mW; dB and dBm only appear at configuration and
//! reporting boundaries.

use crate::error::{Error, Result};

pub fn dbm_to_mw(dbm: f64) -> Result<f64> {
    if !dbm.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite dBm value {dbm}")));
    }
    Ok(db_to_linear(dbm))
}

pub fn mw_to_dbm(mw: f64) -> Result<f64> {
    if !mw.is_finite() || mw <= 0.0 {
        return Err(Error::InvalidParameter(format!("power must be finite and positive, got {mw} mW")));
    }
    Ok(10.0 * mw.log10())
}

/// `10^(x/10)` without input validation, for table constants.
#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_points() {
        assert_eq!(dbm_to_mw(0.0).unwrap(), 1.0);
        assert!((dbm_to_mw(20.0).unwrap() - 100.0).abs() < 1e-12);
        let back = mw_to_dbm(dbm_to_mw(-137.0).unwrap()).unwrap();
        assert!((back + 137.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(dbm_to_mw(f64::NAN).is_err());
        assert!(dbm_to_mw(f64::INFINITY).is_err());
        assert!(mw_to_dbm(0.0).is_err());
        assert!(mw_to_dbm(-1.0).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(x in -200.0f64..60.0) {
            let back = mw_to_dbm(dbm_to_mw(x).unwrap()).unwrap();
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
