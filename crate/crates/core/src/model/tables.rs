use super::SpreadingFactor;
use crate::units::db_to_linear;

/// Co- and inter-SF capture thresholds in dB. Rows are the SF of the packet
/// being decoded, columns the SF of the interferer.
const SIR_DB: [[f64; 6]; 6] = [
    [1.0, -8.0, -9.0, -9.0, -9.0, -9.0],
    [-11.0, 1.0, -11.0, -12.0, -13.0, -13.0],
    [-15.0, -13.0, 1.0, -13.0, -14.0, -15.0],
    [-19.0, -18.0, -17.0, 1.0, -17.0, -18.0],
    [-22.0, -22.0, -21.0, -20.0, 1.0, -20.0],
    [-25.0, -25.0, -25.0, -24.0, -23.0, 1.0],
];

const SENSITIVITY_DBM: [f64; 6] = [-123.0, -126.0, -129.0, -132.0, -134.5, -137.0];

/// Upper edge (inclusive) of each SF's distance range, meters.
const RANGE_UPPER_M: [f64; 6] = [2_000.0, 4_000.0, 6_000.0, 8_000.0, 10_000.0, 12_000.0];

/// Capture-effect threshold matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SirMatrix {
    db: [[f64; 6]; 6],
    linear: [[f64; 6]; 6],
}

impl Default for SirMatrix {
    fn default() -> Self {
        Self::from_db(SIR_DB)
    }
}

impl SirMatrix {
    pub fn from_db(db: [[f64; 6]; 6]) -> Self {
        let mut linear = [[0.0; 6]; 6];
        for (row, lin_row) in db.iter().zip(linear.iter_mut()) {
            for (v, l) in row.iter().zip(lin_row.iter_mut()) {
                *l = db_to_linear(*v);
            }
        }
        Self { db, linear }
    }

    pub fn threshold_db(&self, target: SpreadingFactor, interferer: SpreadingFactor) -> f64 {
        self.db[target.index()][interferer.index()]
    }

    /// Linear SIR the target must reach to survive the interferer.
    #[inline]
    pub fn threshold(&self, target: SpreadingFactor, interferer: SpreadingFactor) -> f64 {
        self.linear[target.index()][interferer.index()]
    }

    pub fn as_db(&self) -> &[[f64; 6]; 6] {
        &self.db
    }
}

/// Per-SF receiver sensitivity and nominal distance range.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTable {
    dbm: [f64; 6],
    mw: [f64; 6],
    range_upper_m: [f64; 6],
}

impl Default for SensitivityTable {
    fn default() -> Self {
        let mut mw = [0.0; 6];
        for (d, m) in SENSITIVITY_DBM.iter().zip(mw.iter_mut()) {
            *m = db_to_linear(*d);
        }
        Self { dbm: SENSITIVITY_DBM, mw, range_upper_m: RANGE_UPPER_M }
    }
}

impl SensitivityTable {
    pub fn sensitivity_dbm(&self, sf: SpreadingFactor) -> f64 {
        self.dbm[sf.index()]
    }

    #[inline]
    pub fn sensitivity_mw(&self, sf: SpreadingFactor) -> f64 {
        self.mw[sf.index()]
    }

    /// `(lower, upper]` distance range in meters served by `sf`.
    pub fn range_m(&self, sf: SpreadingFactor) -> (f64, f64) {
        let i = sf.index();
        let lower = if i == 0 { 0.0 } else { self.range_upper_m[i - 1] };
        (lower, self.range_upper_m[i])
    }

    pub fn max_range_m(&self) -> f64 {
        self.range_upper_m[5]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sf(v: u8) -> SpreadingFactor {
        SpreadingFactor::new(v).unwrap()
    }

    #[test]
    fn sir_matrix_shape() {
        let m = SirMatrix::default();
        for a in SpreadingFactor::ALL {
            for b in SpreadingFactor::ALL {
                let v = m.threshold_db(a, b);
                if a == b {
                    assert_eq!(v, 1.0);
                } else {
                    assert!(v < 0.0);
                }
            }
        }
        assert_eq!(m.threshold_db(sf(12), sf(7)), -25.0);
        assert_eq!(m.threshold_db(sf(7), sf(12)), -9.0);
        assert_eq!(m.threshold_db(sf(9), sf(8)), -13.0);
    }

    #[test]
    fn sir_linear_values() {
        let m = SirMatrix::default();
        assert!((m.threshold(sf(7), sf(7)) - 1.258_925_411_794_167).abs() < 1e-12);
        assert!((m.threshold(sf(12), sf(7)) - 0.003_162_277_660_168_379).abs() < 1e-15);
        assert!((m.threshold(sf(7), sf(12)) - 0.125_892_541_179_416_7).abs() < 1e-12);
    }

    #[test]
    fn sensitivity_strictly_decreasing() {
        let t = SensitivityTable::default();
        let vals: Vec<f64> = SpreadingFactor::ALL.iter().map(|s| t.sensitivity_dbm(*s)).collect();
        assert_eq!(vals, vec![-123.0, -126.0, -129.0, -132.0, -134.5, -137.0]);
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(t.range_m(sf(7)), (0.0, 2_000.0));
        assert_eq!(t.range_m(sf(11)), (8_000.0, 10_000.0));
    }
}
