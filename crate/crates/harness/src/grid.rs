//! Grid arguments: a single value, a comma list, or `start:end:step`
//! (inclusive of `end` when it lies on the lattice).

use romrec_core::{Error, Result};

/// Upper bound on grid length; a typo like `1:1000000:1` is refused.
pub const MAX_GRID: usize = 10_000;

fn bad(s: &str, why: &str) -> Error {
    Error::InvalidArgument(format!("grid {s:?}: {why}"))
}

pub fn parse_usize_grid(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    if let Some((a, rest)) = s.split_once(':') {
        let (b, step) = rest.split_once(':').ok_or_else(|| bad(s, "range needs start:end:step"))?;
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad(s, "not a non-negative integer"));
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if step == 0 {
            return Err(bad(s, "step must be positive"));
        }
        if a > b {
            return Err(bad(s, "start exceeds end"));
        }
        if (b - a) / step >= MAX_GRID {
            return Err(bad(s, "too many points"));
        }
        return Ok((a..=b).step_by(step).collect());
    }
    let out = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| bad(s, "not a non-negative integer")))
        .collect::<Result<Vec<_>>>()?;
    if out.len() > MAX_GRID {
        return Err(bad(s, "too many points"));
    }
    Ok(out)
}

pub fn parse_f64_grid(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    let num = |t: &str| -> Result<f64> {
        let v: f64 = t.trim().parse().map_err(|_| bad(s, "not a number"))?;
        if !v.is_finite() {
            return Err(bad(s, "not finite"));
        }
        Ok(v)
    };
    if let Some((a, rest)) = s.split_once(':') {
        let (b, step) = rest.split_once(':').ok_or_else(|| bad(s, "range needs start:end:step"))?;
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if !(step > 0.0) {
            return Err(bad(s, "step must be positive"));
        }
        if a > b {
            return Err(bad(s, "start exceeds end"));
        }
        let n = ((b - a) / step * (1.0 + 1e-12)).floor();
        if n >= MAX_GRID as f64 {
            return Err(bad(s, "too many points"));
        }
        let out: Vec<f64> = (0..=n as usize).map(|k| a + k as f64 * step).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(bad(s, "not finite"));
        }
        return Ok(out);
    }
    let out = s.split(',').map(num).collect::<Result<Vec<_>>>()?;
    if out.len() > MAX_GRID {
        return Err(bad(s, "too many points"));
    }
    Ok(out)
}
