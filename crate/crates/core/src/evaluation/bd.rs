//! Bjøntegaard deltas between two rate-quality curves.

use crate::error::{RdcError, Result};

/// Interpolant fitted to each curve before integration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BdFit {
    /// Least-squares cubic polynomial.
    #[default]
    Cubic,
    /// Monotone piecewise-cubic Hermite through the points.
    Pchip,
}

/// `(rate, quality)` pairs; rates must be positive.
pub type Curve = [(f64, f64)];

enum Fitted {
    Poly([f64; 4]),
    Pchip { xs: Vec<f64>, ys: Vec<f64>, slopes: Vec<f64> },
}

impl Fitted {
    fn new(xs: &[f64], ys: &[f64], fit: BdFit) -> Result<Self> {
        match fit {
            BdFit::Cubic => polyfit3(xs, ys).map(Fitted::Poly),
            BdFit::Pchip => {
                let mut pts: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(RdcError::Parameter("pchip fit needs distinct abscissae".into()));
                }
                let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
                let slopes = pchip_slopes(&xs, &ys);
                Ok(Fitted::Pchip { xs, ys, slopes })
            }
        }
    }

    fn integral(&self, lo: f64, hi: f64) -> f64 {
        match self {
            Fitted::Poly(c) => {
                let prim = |x: f64| c[0] * x + c[1] * x * x / 2.0 + c[2] * x.powi(3) / 3.0 + c[3] * x.powi(4) / 4.0;
                prim(hi) - prim(lo)
            }
            Fitted::Pchip { xs, ys, slopes } => {
                // Two-point Gauss-Legendre is exact for each cubic piece.
                let node = 0.5 / 3f64.sqrt();
                let mut total = 0.0;
                for i in 0..xs.len() - 1 {
                    let (a, b) = (xs[i].max(lo), xs[i + 1].min(hi));
                    if b <= a {
                        continue;
                    }
                    let (mid, half) = ((a + b) / 2.0, b - a);
                    let eval = |x: f64| hermite(xs[i], xs[i + 1], ys[i], ys[i + 1], slopes[i], slopes[i + 1], x);
                    total += half / 2.0 * (eval(mid - node * half) + eval(mid + node * half));
                }
                total
            }
        }
    }
}

fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * h * d0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * h * d1
}

/// Fritsch-Carlson derivative estimates.
fn pchip_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] > 0.0 {
            let (w1, w2) = (2.0 * h[i] + h[i - 1], h[i] + 2.0 * h[i - 1]);
            d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s.signum() != d0.signum() {
            0.0
        } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    d[0] = end(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

/// Least-squares `c0 + c1 x + c2 x² + c3 x³`.
fn polyfit3(xs: &[f64], ys: &[f64]) -> Result<[f64; 4]> {
    let mut a = [[0.0; 5]; 4];
    for (&x, &y) in xs.iter().zip(ys) {
        let pw = [1.0, x, x * x, x * x * x];
        for r in 0..4 {
            for c in 0..4 {
                a[r][c] += pw[r] * pw[c];
            }
            a[r][4] += pw[r] * y;
        }
    }
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("rows");
        if a[pivot][col].abs() < 1e-300 {
            return Err(RdcError::Parameter("degenerate curve for cubic fit".into()));
        }
        a.swap(col, pivot);
        for r in 0..4 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..5 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Ok([0, 1, 2, 3].map(|i| a[i][4] / a[i][i]))
}

fn validate(curve: &Curve, name: &str) -> Result<()> {
    if curve.len() < 4 {
        return Err(RdcError::Parameter(format!("{name} needs at least 4 points, got {}", curve.len())));
    }
    if let Some(&(r, q)) = curve.iter().find(|(r, q)| !(*r > 0.0) || !r.is_finite() || !q.is_finite()) {
        return Err(RdcError::Parameter(format!("{name} has invalid point ({r}, {q})")));
    }
    Ok(())
}

fn overlap(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let bounds = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let ((la, ha), (lb, hb)) = (bounds(a), bounds(b));
    let (lo, hi) = (la.max(lb), ha.min(hb));
    if hi <= lo {
        return Err(RdcError::Parameter("curves do not overlap".into()));
    }
    Ok((lo, hi))
}

fn mean_gap(xa: &[f64], ya: &[f64], xb: &[f64], yb: &[f64], fit: BdFit) -> Result<f64> {
    let (lo, hi) = overlap(xa, xb)?;
    let (fa, fb) = (Fitted::new(xa, ya, fit)?, Fitted::new(xb, yb, fit)?);
    Ok((fb.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo))
}

/// Average quality of `b` minus `a` over their common `log₁₀(rate)` range.
pub fn bd_quality(a: &Curve, b: &Curve, fit: BdFit) -> Result<f64> {
    validate(a, "curve a")?;
    validate(b, "curve b")?;
    let split = |c: &Curve| -> (Vec<f64>, Vec<f64>) { c.iter().map(|&(r, q)| (r.log10(), q)).unzip() };
    let ((xa, ya), (xb, yb)) = (split(a), split(b));
    mean_gap(&xa, &ya, &xb, &yb, fit)
}

/// Average rate change of `b` relative to `a`, in percent, over their common
/// quality range.
pub fn bd_rate(a: &Curve, b: &Curve, fit: BdFit) -> Result<f64> {
    validate(a, "curve a")?;
    validate(b, "curve b")?;
    let split = |c: &Curve| -> (Vec<f64>, Vec<f64>) { c.iter().map(|&(r, q)| (q, r.log10())).unzip() };
    let ((qa, la), (qb, lb)) = (split(a), split(b));
    let gap = mean_gap(&qa, &la, &qb, &lb, fit)?;
    Ok((10f64.powf(gap) - 1.0) * 100.0)
}

/// Both deltas at once.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BdMetric {
    pub quality: f64,
    pub rate_percent: f64,
}

pub fn bd_metric(a: &Curve, b: &Curve, fit: BdFit) -> Result<BdMetric> {
    Ok(BdMetric {
        quality: bd_quality(a, b, fit)?,
        rate_percent: bd_rate(a, b, fit)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve() -> Vec<(f64, f64)> {
        vec![(0.1, 28.0), (0.2, 30.5), (0.4, 33.0), (0.8, 35.2), (1.6, 37.0)]
    }

    #[test]
    fn polyfit_recovers_cubic() {
        let xs: Vec<f64> = (0..7).map(|i| i as f64 * 0.3 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x * x + 0.25 * x * x * x).collect();
        let c = polyfit3(&xs, &ys).unwrap();
        for (got, want) in c.iter().zip([1.0, -2.0, 0.5, 0.25]) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn pchip_integral_of_line_is_exact() {
        let xs = [0.0, 1.0, 2.5, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let f = Fitted::new(&xs, &ys, BdFit::Pchip).unwrap();
        assert!((f.integral(0.5, 3.0) - (9.0 + 3.0 - 0.25 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn identical_curves_give_zero() {
        for fit in [BdFit::Cubic, BdFit::Pchip] {
            let m = bd_metric(&curve(), &curve(), fit).unwrap();
            assert!(m.quality.abs() < 1e-12 && m.rate_percent.abs() < 1e-9);
        }
    }

    #[test]
    fn disjoint_curves_are_rejected() {
        let far: Vec<(f64, f64)> = curve().iter().map(|&(r, q)| (r * 100.0, q + 50.0)).collect();
        assert!(matches!(bd_quality(&curve(), &far, BdFit::Cubic), Err(RdcError::Parameter(_))));
        assert!(bd_quality(&curve()[..3], &curve(), BdFit::Cubic).is_err());
    }
}
