//! Yates-corrected chi-squared and Fisher exact tests on 2x2 tables.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::table::ContingencyTable2x2;
use crate::AnalyticsError;

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Relative slack when deciding whether a table is at most as probable as
/// the observed one.
pub const FISHER_TIE_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ChiSquaredYates,
    FisherExact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: Method,
    /// Test statistic; only the chi-squared test has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
}

impl TestResult {
    fn new(method: Method, statistic: Option<f64>, p_value: f64, alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        TestResult { method, statistic, p_value, alpha, significant: p_value < alpha }
    }
}

fn check(t: &ContingencyTable2x2) -> Result<(), AnalyticsError> {
    if t.is_degenerate() {
        Err(AnalyticsError::DegenerateMargin(*t))
    } else {
        Ok(())
    }
}

/// Pearson chi-squared with the continuity correction: each cell contributes
/// `(max(|o - e| - 0.5, 0))^2 / e`; the p-value is the upper tail of the
/// chi-squared distribution with one degree of freedom.
pub fn chi_squared_yates(t: &ContingencyTable2x2, alpha: f64) -> Result<TestResult, AnalyticsError> {
    check(t)?;
    let n = t.total() as f64;
    let rows = t.row_totals();
    let cols = t.column_totals();
    let cells = t.rows();
    let mut statistic = 0.0;
    for (i, row) in cells.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = rows[i] as f64 * cols[j] as f64 / n;
            let dev = ((o as f64 - e).abs() - 0.5).max(0.0);
            statistic += dev * dev / e;
        }
    }
    let dist = ChiSquared::new(1.0).expect("one degree of freedom");
    Ok(TestResult::new(Method::ChiSquaredYates, Some(statistic), dist.sf(statistic), alpha))
}

/// ln(k!) for k in 0..=n.
fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0;
    out.push(acc);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Two-sided Fisher exact test: sums the hypergeometric probabilities of all
/// tables with the observed margins that are no more probable than the
/// observed table.
pub fn fisher_exact(t: &ContingencyTable2x2, alpha: f64) -> Result<TestResult, AnalyticsError> {
    check(t)?;
    let [r1, r2] = t.row_totals();
    let [c1, c2] = t.column_totals();
    let n = t.total();
    let lf = ln_factorials(n);
    let fixed = lf[r1 as usize] + lf[r2 as usize] + lf[c1 as usize] + lf[c2 as usize] - lf[n as usize];
    // probability of the table whose top-left cell is x
    let ln_p = |x: u64| {
        let (a, b, c) = (x, r1 - x, c1 - x);
        let d = r2 - c;
        fixed - lf[a as usize] - lf[b as usize] - lf[c as usize] - lf[d as usize]
    };
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let observed = ln_p(t.a);
    let threshold = observed + FISHER_TIE_TOLERANCE.ln_1p();
    let mut p = 0.0;
    for x in lo..=hi {
        let lp = ln_p(x);
        if lp <= threshold {
            p += lp.exp();
        }
    }
    Ok(TestResult::new(Method::FisherExact, None, p, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: [[u64; 2]; 2]) -> ContingencyTable2x2 {
        ContingencyTable2x2::from_rows(rows)
    }

    #[test]
    fn yates_examples() {
        let r = chi_squared_yates(&t([[10, 5], [0, 5]]), DEFAULT_ALPHA).unwrap();
        assert!((r.statistic.unwrap() - 4.266_666_666_7).abs() < 1e-9);
        assert!((r.p_value - 0.038_867_104).abs() < 5e-9);
        assert!(r.significant);
        let r = chi_squared_yates(&t([[5, 5], [5, 5]]), DEFAULT_ALPHA).unwrap();
        assert_eq!(r.statistic, Some(0.0));
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant);
    }

    #[test]
    fn fisher_examples() {
        let r = fisher_exact(&t([[5, 5], [5, 5]]), DEFAULT_ALPHA).unwrap();
        assert!((r.p_value - 1.0).abs() < 1e-12);
        assert_eq!(r.statistic, None);
    }

    #[test]
    fn degenerate_margins_are_errors() {
        for rows in [[[0, 0], [3, 4]], [[0, 3], [0, 4]], [[0, 0], [0, 0]]] {
            assert!(matches!(chi_squared_yates(&t(rows), 0.05), Err(AnalyticsError::DegenerateMargin(_))));
            assert!(matches!(fisher_exact(&t(rows), 0.05), Err(AnalyticsError::DegenerateMargin(_))));
        }
    }

    #[test]
    fn significance_uses_strict_inequality() {
        let r = TestResult::new(Method::FisherExact, None, 0.05, 0.05);
        assert!(!r.significant);
    }
}
