//! Adaptive Gauss-Kronrod quadrature, Wynn's epsilon acceleration, and
//! zero-to-zero integration of `u^(-s) h(u)` for zero-mean periodic `h`.

use std::collections::BinaryHeap;
use std::f64::consts::PI;

use crate::error::{Error, Result};

// 15-point Kronrod abscissae and weights, with the embedded 7-point Gauss
// rule on the odd-indexed abscissae.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
}

/// One G7-K15 panel: Kronrod value and `|K15 - G7|`.
pub fn gauss_kronrod_15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> QuadResult {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    QuadResult { value: kronrod * half, error: ((kronrod - gauss) * half).abs() }
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_panels: usize,
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel, max_panels: 20_000 }
    }

    fn target(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value.abs())
    }
}

struct Panel {
    a: f64,
    b: f64,
    result: QuadResult,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.result.error == other.result.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.result.error.total_cmp(&other.result.error)
    }
}

/// Globally adaptive G7-K15 on `[a, b]`, bisecting the worst panel until
/// the summed error estimate meets the tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult { value: 0.0, error: 0.0 });
    }
    let mut heap = BinaryHeap::new();
    let first = gauss_kronrod_15(&f, a, b);
    let (mut value, mut error) = (first.value, first.error);
    heap.push(Panel { a, b, result: first });
    while error > tol.target(value) {
        if heap.len() >= tol.max_panels {
            return Err(Error::QuadratureFailure { tolerance: tol.target(value), estimate: error });
        }
        let worst = heap.pop().expect("non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // panel cannot be split further in floating point
            return Err(Error::QuadratureFailure { tolerance: tol.target(value), estimate: error });
        }
        let left = gauss_kronrod_15(&f, worst.a, mid);
        let right = gauss_kronrod_15(&f, mid, worst.b);
        value += left.value + right.value - worst.result.value;
        error += left.error + right.error - worst.result.error;
        heap.push(Panel { a: worst.a, b: mid, result: left });
        heap.push(Panel { a: mid, b: worst.b, result: right });
    }
    // re-sum to shed accumulated update rounding
    let value = crate::stats::compensated_sum(heap.iter().map(|p| p.result.value));
    let error = heap.iter().map(|p| p.result.error).sum();
    Ok(QuadResult { value, error })
}

/// Wynn's epsilon algorithm applied to partial sums. Returns the last
/// even-column estimate and the change from the previous one.
pub fn wynn_epsilon(partial_sums: &[f64]) -> QuadResult {
    let n = partial_sums.len();
    if n < 3 {
        let v = *partial_sums.last().unwrap_or(&0.0);
        let e = if n == 2 { (partial_sums[1] - partial_sums[0]).abs() } else { f64::INFINITY };
        return QuadResult { value: v, error: e };
    }
    // columns[k][m] = epsilon_k^(m); odd columns are auxiliary
    let mut prev: Vec<f64> = vec![0.0; n + 1];
    let mut cur: Vec<f64> = partial_sums.to_vec();
    let mut estimates: Vec<f64> = vec![cur[cur.len() - 1]];
    let mut k = 0;
    while cur.len() > 1 {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for m in 0..cur.len() - 1 {
            let diff = cur[m + 1] - cur[m];
            if diff == 0.0 {
                // converged exactly; the column below is undefined
                next.clear();
                break;
            }
            next.push(prev[m + 1] + 1.0 / diff);
        }
        if next.is_empty() {
            break;
        }
        k += 1;
        prev = cur;
        cur = next;
        if k % 2 == 0 {
            estimates.push(cur[cur.len() - 1]);
        }
    }
    let value = *estimates.last().expect("at least one estimate");
    let error = if estimates.len() >= 2 {
        (value - estimates[estimates.len() - 2]).abs()
    } else {
        (partial_sums[n - 1] - partial_sums[n - 2]).abs()
    };
    QuadResult { value, error }
}

/// Zero-mean `2 pi`-periodic weight `cos^j(u) - <cos^j>`.
#[derive(Debug, Clone)]
pub struct CosinePowerWeight {
    j: u32,
    mean: f64,
    /// Zeros within one period `[0, 2 pi)`, ascending.
    zeros: Vec<f64>,
}

impl CosinePowerWeight {
    pub fn new(j: u32) -> Self {
        assert!(j >= 1, "cosine power must be positive");
        let mean = cosine_power_mean(j);
        let zeros = if j % 2 == 1 {
            vec![0.5 * PI, 1.5 * PI]
        } else {
            let c = mean.powf(1.0 / j as f64).acos();
            vec![c, PI - c, PI + c, 2.0 * PI - c]
        };
        Self { j, mean, zeros }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        crate::dynamics::int_power(u.cos(), self.j) - self.mean
    }

    /// The `m`-th zero at or after the first zero `>= 0`, for `m >= 0`.
    fn zero(&self, m: u64) -> f64 {
        let per = self.zeros.len() as u64;
        (m / per) as f64 * 2.0 * PI + self.zeros[(m % per) as usize]
    }

    /// Index of the first zero strictly greater than `u`.
    fn first_zero_after(&self, u: f64) -> u64 {
        let per = self.zeros.len() as u64;
        let period = (u / (2.0 * PI)).floor().max(0.0) as u64;
        let mut m = period * per;
        while self.zero(m) <= u {
            m += 1;
        }
        m
    }
}

/// Period average of `cos^j`: `binom(j, j/2) / 2^j` for even `j`, else 0.
pub fn cosine_power_mean(j: u32) -> f64 {
    if j % 2 == 1 {
        return 0.0;
    }
    let half = j / 2;
    let mut c = 1.0;
    for i in 0..half {
        c *= (j - i) as f64 / (i + 1) as f64;
    }
    c / 2f64.powi(j as i32)
}

const MAX_DIRECT_LOBES: u64 = 2048;
const EPSILON_LOBES: usize = 48;

/// `int_a^b u^(-s) h(u) du` for `s > 1`, with `b = f64::INFINITY` allowed.
///
/// The range is cut at the zeros of `h`; lobes alternate in sign. Short
/// ranges are summed lobe by lobe, long ones go through the Wynn epsilon
/// extrapolation of the lobe partial sums.
pub fn power_weighted_oscillation(
    weight: &CosinePowerWeight,
    s: f64,
    a: f64,
    b: f64,
    tol: Tolerance,
) -> Result<QuadResult> {
    assert!(s > 1.0 && a > 0.0 && b >= a);
    let f = |u: f64| u.powf(-s) * weight.eval(u);
    let m0 = weight.first_zero_after(a);
    let z0 = weight.zero(m0);
    if b <= z0 {
        return integrate(f, a, b, tol);
    }
    let head = integrate(f, a, z0, tol)?;

    let lobes_to_b = if b.is_finite() {
        let mb = weight.first_zero_after(b);
        Some(mb - m0)
    } else {
        None
    };
    match lobes_to_b {
        Some(count) if count <= MAX_DIRECT_LOBES => {
            let mut value = head.value;
            let mut error = head.error;
            let mut lo = z0;
            for m in 1..count {
                let hi = weight.zero(m0 + m);
                let r = integrate(f, lo, hi, tol)?;
                value += r.value;
                error += r.error;
                lo = hi;
            }
            let r = integrate(f, lo, b, tol)?;
            Ok(QuadResult { value: value + r.value, error: error + r.error })
        }
        _ => {
            let tail = lobe_tail(weight, s, m0, tol)?;
            let mut value = head.value + tail.value;
            let mut error = head.error + tail.error;
            if b.is_finite() {
                // |int_b^inf| is at most one lobe of height b^(-s)
                let bound = PI * b.powf(-s);
                if bound > 1e-3 * tol.target(value) {
                    // only the error relative to the whole range matters here
                    let outer = Tolerance { abs: tol.target(value), ..tol };
                    let beyond = power_weighted_oscillation(weight, s, b, f64::INFINITY, outer)?;
                    value -= beyond.value;
                    error += beyond.error;
                }
            }
            Ok(QuadResult { value, error })
        }
    }
}

/// `int_{z_m0}^inf u^(-s) h(u) du` from lobe partial sums.
fn lobe_tail(weight: &CosinePowerWeight, s: f64, m0: u64, tol: Tolerance) -> Result<QuadResult> {
    let f = |u: f64| u.powf(-s) * weight.eval(u);
    let inner = Tolerance { abs: tol.abs * 1e-3, ..tol };
    let mut partial = Vec::with_capacity(EPSILON_LOBES);
    let mut sum = 0.0;
    let mut quad_error = 0.0;
    for m in 0..EPSILON_LOBES as u64 {
        let r = integrate(f, weight.zero(m0 + m), weight.zero(m0 + m + 1), inner)?;
        sum += r.value;
        quad_error += r.error;
        partial.push(sum);
    }
    let est = wynn_epsilon(&partial);
    let error = est.error + quad_error;
    if error > tol.target(est.value).max(tol.abs) * 10.0 {
        return Err(Error::QuadratureFailure { tolerance: tol.target(est.value), estimate: error });
    }
    Ok(QuadResult { value: est.value, error })
}
