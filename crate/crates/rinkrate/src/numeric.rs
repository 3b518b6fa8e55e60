//! Small numerical utilities shared across the crate: stable tail
//! probabilities, log-sum-exp, quantiles, a KS test against Uniform(0,1),
//! autocorrelation/ESS diagnostics, and an adaptive Simpson integrator.

pub const LN_2PI: f64 = 1.8378770664093453;

/// log(Phi(-z)): log of the standard normal upper-tail probability at `z`.
///
/// Uses `erfc` directly while it stays inside the normal f64 range and an
/// asymptotic Mills-ratio expansion beyond, so the result is finite and
/// accurate even for z in the hundreds (where Phi(-z) itself underflows).
pub fn ln_normal_sf(z: f64) -> f64 {
    if z <= 30.0 {
        (0.5 * libm::erfc(z / std::f64::consts::SQRT_2)).ln()
    } else {
        let zi = 1.0 / (z * z);
        // Phi(-z) = phi(z)/z * (1 - 1/z^2 + 3/z^4 - 15/z^6 + 105/z^8 - ...)
        let series_m1 = -zi * (1.0 - 3.0 * zi * (1.0 - 5.0 * zi * (1.0 - 7.0 * zi)));
        -0.5 * z * z - 0.5 * LN_2PI - z.ln() + series_m1.ln_1p()
    }
}

/// log(sum_i exp(x_i)) with the usual max-shift stabilization.
/// Returns -inf for an empty slice or when every entry is -inf.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator). Zero for fewer than two points.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile (type 7). `q` in [0,1]; panics on empty input.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    assert!(!xs.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&q), "quantile level out of range");
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in quantile input"));
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Kolmogorov-Smirnov statistic of `xs` against Uniform(0,1).
pub fn ks_statistic_uniform(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in KS input"));
    let n = v.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in v.iter().enumerate() {
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((x - lo).abs()).max((hi - x).abs());
    }
    d
}

/// Asymptotic two-sided KS p-value with Stephens' small-sample correction.
/// Small arguments use the theta-function form of the Kolmogorov CDF, large
/// ones the alternating exponential series; each converges in a few terms on
/// its side of the switch.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let n = n as f64;
    let t = d * (n.sqrt() + 0.12 + 0.11 / n.sqrt());
    if t <= 0.0 {
        return 1.0;
    }
    if t < 1.18 {
        let factor = (2.0 * std::f64::consts::PI).sqrt() / t;
        let mut cdf = 0.0;
        for k in 1..=20u32 {
            let odd = (2 * k - 1) as f64;
            cdf += (-odd * odd * std::f64::consts::PI * std::f64::consts::PI / (8.0 * t * t)).exp();
        }
        (1.0 - factor * cdf).clamp(0.0, 1.0)
    } else {
        let mut p = 0.0;
        for k in 1..=100u32 {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            let kf = k as f64;
            let term = 2.0 * sign * (-2.0 * kf * kf * t * t).exp();
            p += term;
            if term.abs() < 1e-12 {
                break;
            }
        }
        p.clamp(0.0, 1.0)
    }
}

/// Lag-k autocorrelation of a series (biased estimator, standard for MCMC use).
pub fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    if n <= lag + 1 {
        return 0.0;
    }
    let m = mean(xs);
    let var: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = (0..n - lag).map(|i| (xs[i] - m) * (xs[i + lag] - m)).sum();
    cov / var
}

/// Effective sample size using Geyer's initial positive sequence: sum paired
/// autocorrelations until a pair sum turns negative.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let mut acc = 0.0;
    let mut lag = 1;
    while lag + 1 < n / 2 {
        let pair = autocorrelation(xs, lag) + autocorrelation(xs, lag + 1);
        if pair <= 0.0 {
            break;
        }
        acc += pair;
        lag += 2;
    }
    (n as f64 / (1.0 + 2.0 * acc)).min(n as f64)
}

/// Adaptive Simpson quadrature of `f` on [a,b] to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, fm, whole, tol, 50)
}
