use crate::error::{Error, Result};

fn nonempty(pairs: &[(f64, f64)]) -> Result<()> {
    if pairs.is_empty() {
        Err(Error::Degenerate("metric of an empty set".into()))
    } else {
        Ok(())
    }
}

/// Pairs are `(y, y_hat)`.
pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    nonempty(pairs)?;
    let s: f64 = pairs.iter().map(|(y, p)| (p - y) * (p - y)).sum();
    Ok((s / pairs.len() as f64).sqrt())
}

pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    nonempty(pairs)?;
    let s: f64 = pairs.iter().map(|(y, p)| (p - y).abs()).sum();
    Ok(s / pairs.len() as f64)
}

pub fn pearson(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::Degenerate("pearson needs at least two pairs".into()));
    }
    let n = pairs.len() as f64;
    let my = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mp = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (y, p) in pairs {
        let (a, b) = (y - my, p - mp);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("pearson with zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
