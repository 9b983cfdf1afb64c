//! Decisions on sampled growth sequences.
//!
//! Sampling cannot certify a bound for all `x`. A sequence of per-shell maxima
//! is called bounded when the outer half of the shells never exceeds the inner
//! half by more than the safety margin, and unbounded when the outer half
//! keeps growing up to the last shell.

use serde::Serialize;

use super::sampling::ShellMax;

/// Relative safety margin applied to every fitted constant.
pub const MARGIN: f64 = 1.05;
const GROWTH_SLOPE: f64 = 0.02;
const SUMMABLE_SLOPE: f64 = -0.2;
const DIVERGENT_SLOPE: f64 = -0.05;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Growth {
    Bounded { sup: f64, index: usize },
    /// `bound` is the margin-inflated constant fitted on the inner half,
    /// which the sample at `index` exceeds.
    Unbounded { index: usize, slope: f64, bound: f64 },
    Inconclusive { reason: String },
}

impl Growth {
    pub fn is_bounded(&self) -> bool {
        matches!(self, Growth::Bounded { .. })
    }

    pub fn is_unbounded(&self) -> bool {
        matches!(self, Growth::Unbounded { .. })
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Classifies per-shell maxima (ordered by increasing scale) as bounded or not.
pub fn assess_growth(stats: &[ShellMax]) -> Growth {
    if stats.iter().any(|s| s.undefined > 0) {
        return Growth::Inconclusive { reason: "undefined samples".into() };
    }
    let seq: Vec<(usize, f64, f64)> = stats
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.point.is_empty())
        .map(|(i, s)| (i, s.scale, s.value))
        .collect();
    assess_values(&seq)
}

/// Same decision on raw `(index, scale, value)` triples.
pub fn assess_values(seq: &[(usize, f64, f64)]) -> Growth {
    let n = seq.len();
    if n < 4 {
        return Growth::Inconclusive { reason: format!("only {n} usable shells") };
    }
    let half = n / 2;
    let head_max = seq[..half].iter().map(|t| t.2).fold(f64::NEG_INFINITY, f64::max);
    let bound = MARGIN * head_max.max(0.0);
    if let Some(t) = seq.iter().find(|t| t.2 == f64::INFINITY) {
        return Growth::Unbounded { index: t.0, slope: f64::INFINITY, bound };
    }
    let (sup_pos, sup) = seq
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, t)| if t.2 > acc.1 { (k, t.2) } else { acc });
    let tail = &seq[half..];
    let tail_max = tail.iter().map(|t| t.2).fold(f64::NEG_INFINITY, f64::max);
    if tail_max <= bound || tail_max <= 0.0 {
        return Growth::Bounded { sup, index: seq[sup_pos].0 };
    }
    let pts: Vec<(f64, f64)> =
        tail.iter().filter(|t| t.2 > 0.0).map(|t| (t.1.ln(), t.2.ln())).collect();
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let slope = if pts.len() >= 2 { ls_slope(&xs, &ys) } else { 0.0 };
    let last = tail[tail.len() - 1];
    if slope > GROWTH_SLOPE && last.2 >= tail_max {
        Growth::Unbounded { index: last.0, slope, bound }
    } else if slope <= 0.0 {
        Growth::Bounded { sup, index: seq[sup_pos].0 }
    } else {
        Growth::Inconclusive { reason: format!("outer shells exceed margin with slope {slope:.3}") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum TailSum {
    /// Shell contributions decay geometrically; `slope` is the fitted
    /// base-2 exponent per dyadic shell.
    Summable { slope: f64 },
    Divergent { slope: f64 },
    Undetermined { slope: f64 },
}

/// Summability of dyadic shell contributions `I_k` on `[2^k, 2^{k+1}]`.
pub fn assess_tail_sum(shells: &[f64]) -> TailSum {
    let n = shells.len();
    if n < 4 || shells.iter().any(|v| v.is_nan() || *v < 0.0) {
        return TailSum::Undetermined { slope: f64::NAN };
    }
    if shells.iter().any(|v| v.is_infinite()) {
        return TailSum::Divergent { slope: f64::INFINITY };
    }
    let tail = &shells[n / 2..];
    let pos: Vec<(f64, f64)> = tail
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(k, v)| (k as f64, v.log2()))
        .collect();
    if pos.len() < tail.len() {
        // underflowed shells: summable if the surviving values decrease
        let decreasing = tail.windows(2).all(|w| w[1] <= w[0]);
        return if decreasing {
            TailSum::Summable { slope: f64::NEG_INFINITY }
        } else {
            TailSum::Undetermined { slope: f64::NAN }
        };
    }
    let xs: Vec<f64> = pos.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pos.iter().map(|p| p.1).collect();
    let slope = ls_slope(&xs, &ys);
    if slope <= SUMMABLE_SLOPE {
        TailSum::Summable { slope }
    } else if slope >= DIVERGENT_SLOPE {
        TailSum::Divergent { slope }
    } else {
        TailSum::Undetermined { slope }
    }
}
