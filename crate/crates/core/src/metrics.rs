//! Spearman and Kendall rank correlation, with the tie conventions common in
//! IQA reporting: fractional (average) ranks for SRCC, tau-b for KRCC.

use crate::error::{Error, Result};

fn check_pair(op: &'static str, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            op,
            lhs: x.len(),
            rhs: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooFewValues {
            op,
            min: 2,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{op}: non-finite input")));
    }
    Ok(())
}

/// Fractional ranks (1-based); tied runs share the average of their ranks.
pub fn fractional_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite values"));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(op: &'static str, x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput { op });
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation: Pearson correlation of fractional ranks.
/// Errors on constant input, where the correlation is undefined.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair("srcc", x, y)?;
    let rx = fractional_ranks(x);
    let ry = fractional_ranks(y);
    pearson("srcc", &rx, &ry)
}

/// Kendall tau-b by pair enumeration: concordant minus discordant over the
/// tie-corrected pair counts, `(P - Q) / sqrt((P + Q + T)(P + Q + U))` with
/// T/U the pairs tied only in x / only in y.
pub fn krcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair("krcc", x, y)?;
    let n = x.len();
    let mut concordant = 0u64;
    let mut discordant = 0u64;
    let mut ties_x_only = 0u64;
    let mut ties_y_only = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {}
                (true, false) => ties_x_only += 1,
                (false, true) => ties_y_only += 1,
                (false, false) => {
                    if (dx > 0.0) == (dy > 0.0) {
                        concordant += 1;
                    } else {
                        discordant += 1;
                    }
                }
            }
        }
    }
    let pq = concordant + discordant;
    let denom = ((pq + ties_x_only) as f64 * (pq + ties_y_only) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::ConstantInput { op: "krcc" });
    }
    Ok((concordant as f64 - discordant as f64) / denom)
}
