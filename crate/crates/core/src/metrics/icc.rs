use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-way ANOVA decomposition of `n` subjects rated by `k = 2` raters
/// (truth and prediction) and the single-rating ICC forms derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IccResult {
    /// Consistency form, ICC(3,1).
    pub icc31: f64,
    /// Absolute agreement form, ICC(2,1).
    pub icc21: f64,
    pub bms: f64,
    pub jms: f64,
    pub ems: f64,
    pub n: usize,
    /// Set when between-subject variance vanishes; both values are then 0.
    pub degenerate: bool,
}

pub fn icc(pairs: &[(f64, f64)]) -> Result<IccResult> {
    let n = pairs.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("ICC needs at least 3 pairs, got {n}")));
    }
    let k = 2.0;
    let nf = n as f64;
    let grand = pairs.iter().map(|(a, b)| a + b).sum::<f64>() / (k * nf);
    let col = [
        pairs.iter().map(|p| p.0).sum::<f64>() / nf,
        pairs.iter().map(|p| p.1).sum::<f64>() / nf,
    ];
    let mut ssr = 0.0;
    let mut sst = 0.0;
    for (a, b) in pairs {
        let row = (a + b) / k;
        ssr += k * (row - grand).powi(2);
        sst += (a - grand).powi(2) + (b - grand).powi(2);
    }
    let ssc = nf * col.iter().map(|c| (c - grand).powi(2)).sum::<f64>();
    let sse = (sst - ssr - ssc).max(0.0);
    let bms = ssr / (nf - 1.0);
    let jms = ssc / (k - 1.0);
    let ems = sse / ((nf - 1.0) * (k - 1.0));
    let degenerate = bms <= 0.0 || bms + (k - 1.0) * ems <= 0.0;
    let (icc31, icc21) = if degenerate {
        (0.0, 0.0)
    } else {
        (
            (bms - ems) / (bms + (k - 1.0) * ems),
            (bms - ems) / (bms + (k - 1.0) * ems + k * (jms - ems) / nf),
        )
    };
    Ok(IccResult {
        icc31,
        icc21,
        bms,
        jms,
        ems,
        n,
        degenerate,
    })
}
