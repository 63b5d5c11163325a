//! Numeric kernels behind the feature catalog. Everything operates on a
//! plain `&[f64]` grid; callers decide what the samples mean.
//!
//! Frequencies are in cycles per sample throughout (the grids are
//! regular, so the physical rate is a constant factor the models never
//! see).

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::stats;

// ---------------------------------------------------------------------------
// Linear algebra (small dense systems only)
// ---------------------------------------------------------------------------

/// Solves A x = b for a small square system, in place, with partial
/// pivoting. Returns None when the system is singular.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

/// Ordinary least squares via normal equations. Each row of `xs` is one
/// observation's regressors. Returns (coefficients, standard errors).
pub fn ols(xs: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = xs.len();
    if n == 0 || n != y.len() {
        return None;
    }
    let p = xs[0].len();
    if n <= p {
        return None;
    }
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, &yi) in xs.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                xtx[i][j] += row[i] * row[j];
            }
            xty[i] += row[i] * yi;
        }
    }
    let coef = solve(xtx.clone(), xty)?;
    // residual variance and (X'X)^-1 diagonal for standard errors
    let mut rss = 0.0;
    for (row, &yi) in xs.iter().zip(y) {
        let pred: f64 = row.iter().zip(&coef).map(|(a, b)| a * b).sum();
        rss += (yi - pred) * (yi - pred);
    }
    let sigma2 = rss / (n - p) as f64;
    let mut se = vec![0.0; p];
    for i in 0..p {
        let mut e = vec![0.0; p];
        e[i] = 1.0;
        let col = solve(xtx.clone(), e)?;
        se[i] = (sigma2 * col[i]).max(0.0).sqrt();
    }
    Some((coef, se))
}

// ---------------------------------------------------------------------------
// Spectral
// ---------------------------------------------------------------------------

/// Unnormalized forward DFT of a real signal; only the first n/2+1 bins
/// are meaningful for real input but the full transform is returned.
pub fn fft(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Welch power spectral density with a Hann window and 50% overlap,
/// sample rate 1. Returns `nperseg/2 + 1` bins.
pub fn welch_psd(x: &[f64], nperseg: usize) -> Vec<f64> {
    let nper = nperseg.min(x.len()).max(2);
    let hop = (nper / 2).max(1);
    let window: Vec<f64> = (0..nper)
        .map(|i| {
            let c = (std::f64::consts::TAU * i as f64 / nper as f64).cos();
            0.5 * (1.0 - c)
        })
        .collect();
    let u: f64 = window.iter().map(|w| w * w).sum();
    let n_out = nper / 2 + 1;
    let mut acc = vec![0.0; n_out];
    let mut segments = 0usize;
    let mut start = 0;
    while start + nper <= x.len() {
        let seg: Vec<f64> = x[start..start + nper]
            .iter()
            .zip(&window)
            .map(|(v, w)| v * w)
            .collect();
        let spec = fft(&seg);
        for (k, slot) in acc.iter_mut().enumerate() {
            let scale = if k == 0 || (nper % 2 == 0 && k == nper / 2) { 1.0 } else { 2.0 };
            *slot += scale * spec[k].norm_sqr() / u;
        }
        segments += 1;
        start += hop;
    }
    if segments == 0 {
        return vec![f64::NAN; n_out];
    }
    acc.iter_mut().for_each(|v| *v /= segments as f64);
    acc
}

/// Centroid, variance, skew, and kurtosis of the magnitude spectrum seen
/// as a distribution over bin index.
pub fn spectrum_moments(mag: &[f64]) -> [f64; 4] {
    let total: f64 = mag.iter().sum();
    if total <= 0.0 || mag.len() < 2 {
        return [f64::NAN; 4];
    }
    let centroid: f64 = mag.iter().enumerate().map(|(k, m)| k as f64 * m).sum::<f64>() / total;
    let m2: f64 = mag
        .iter()
        .enumerate()
        .map(|(k, m)| (k as f64 - centroid).powi(2) * m)
        .sum::<f64>()
        / total;
    if m2 <= 0.0 {
        return [centroid, 0.0, f64::NAN, f64::NAN];
    }
    let m3: f64 = mag
        .iter()
        .enumerate()
        .map(|(k, m)| (k as f64 - centroid).powi(3) * m)
        .sum::<f64>()
        / total;
    let m4: f64 = mag
        .iter()
        .enumerate()
        .map(|(k, m)| (k as f64 - centroid).powi(4) * m)
        .sum::<f64>()
        / total;
    [centroid, m2, m3 / m2.powf(1.5), m4 / (m2 * m2)]
}

/// Shannon entropy (nats) of a 10-bin histogram of the values.
pub fn binned_entropy(x: &[f64], bins: usize) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return 0.0;
    }
    let mut counts = vec![0usize; bins];
    for &v in x {
        let k = (((v - lo) / (hi - lo)) * bins as f64) as usize;
        counts[k.min(bins - 1)] += 1;
    }
    let n = x.len() as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Fraction of the total energy in each of `chunks` equal contiguous
/// chunks.
pub fn energy_ratio_by_chunks(x: &[f64], chunks: usize) -> Vec<f64> {
    let total: f64 = x.iter().map(|v| v * v).sum();
    let mut out = Vec::with_capacity(chunks);
    let base = x.len() / chunks;
    let rem = x.len() % chunks;
    let mut start = 0;
    for c in 0..chunks {
        let len = base + usize::from(c < rem);
        let e: f64 = x[start..start + len].iter().map(|v| v * v).sum();
        out.push(if total > 0.0 { e / total } else { f64::NAN });
        start += len;
    }
    out
}

// ---------------------------------------------------------------------------
// Wavelet
// ---------------------------------------------------------------------------

/// Ricker (Mexican-hat) wavelet on `points` samples with the given width.
pub fn ricker(points: usize, width: f64) -> Vec<f64> {
    let a = 2.0 / ((3.0 * width).sqrt() * std::f64::consts::PI.powf(0.25));
    (0..points)
        .map(|i| {
            let t = i as f64 - (points as f64 - 1.0) / 2.0;
            let q = t / width;
            a * (1.0 - q * q) * (-q * q / 2.0).exp()
        })
        .collect()
}

/// Same-length convolution of the signal with a Ricker wavelet of the
/// given width (kernel span 10x width, capped at the signal length).
pub fn cwt_row(x: &[f64], width: f64) -> Vec<f64> {
    let klen = ((10.0 * width) as usize).clamp(3, x.len());
    let kernel = ricker(klen, width);
    let half = klen / 2;
    let mut out = vec![0.0; x.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &k) in kernel.iter().enumerate() {
            let idx = i as isize + j as isize - half as isize;
            if idx >= 0 && (idx as usize) < x.len() {
                acc += x[idx as usize] * k;
            }
        }
        *slot = acc;
    }
    out
}

// ---------------------------------------------------------------------------
// Autocorrelation
// ---------------------------------------------------------------------------

/// Autocorrelation at the given lag, normalized by the overall variance.
pub fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    if x.len() <= lag || x.len() < 2 {
        return f64::NAN;
    }
    let m = stats::mean(x);
    let var = stats::variance(x, 0);
    if var == 0.0 {
        return f64::NAN;
    }
    let s: f64 = (0..x.len() - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum();
    s / ((x.len() - lag) as f64 * var)
}

/// Partial autocorrelations for lags 1..=max_lag by Durbin-Levinson on
/// the sample autocovariances.
pub fn pacf(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    if n < max_lag + 2 {
        return vec![f64::NAN; max_lag];
    }
    let m = stats::mean(x);
    let c0: f64 = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return vec![f64::NAN; max_lag];
    }
    let rho: Vec<f64> = (1..=max_lag)
        .map(|k| {
            let c: f64 = (0..n - k).map(|i| (x[i] - m) * (x[i + k] - m)).sum::<f64>() / n as f64;
            c / c0
        })
        .collect();
    let mut phi = vec![vec![0.0; max_lag + 1]; max_lag + 1];
    let mut out = Vec::with_capacity(max_lag);
    phi[1][1] = rho[0];
    out.push(rho[0]);
    let mut v = 1.0 - rho[0] * rho[0];
    for k in 2..=max_lag {
        let mut num = rho[k - 1];
        for j in 1..k {
            num -= phi[k - 1][j] * rho[k - 1 - j];
        }
        if v.abs() < 1e-15 {
            out.push(f64::NAN);
            continue;
        }
        let pk = num / v;
        phi[k][k] = pk;
        for j in 1..k {
            phi[k][j] = phi[k - 1][j] - pk * phi[k - 1][k - j];
        }
        v *= 1.0 - pk * pk;
        out.push(pk);
    }
    out
}

// ---------------------------------------------------------------------------
// Entropy and complexity
// ---------------------------------------------------------------------------

fn phi_apen(x: &[f64], m: usize, r: f64) -> f64 {
    let n = x.len();
    let count = n - m + 1;
    let mut sum = 0.0;
    for i in 0..count {
        let mut matches = 0usize;
        for j in 0..count {
            let mut d = 0.0f64;
            for k in 0..m {
                d = d.max((x[i + k] - x[j + k]).abs());
            }
            if d <= r {
                matches += 1;
            }
        }
        sum += (matches as f64 / count as f64).ln();
    }
    sum / count as f64
}

/// Approximate entropy with embedding dimension m and tolerance r
/// (self-matches included, as in the original definition).
pub fn approximate_entropy(x: &[f64], m: usize, r: f64) -> f64 {
    if x.len() < m + 2 || !(r > 0.0) {
        return f64::NAN;
    }
    phi_apen(x, m, r) - phi_apen(x, m + 1, r)
}

/// Sample entropy with embedding dimension m and tolerance r
/// (self-matches excluded). A constant series yields 0.
pub fn sample_entropy(x: &[f64], m: usize, r: f64) -> f64 {
    let n = x.len();
    if n < m + 2 {
        return f64::NAN;
    }
    if !(r > 0.0) {
        // zero tolerance arises from zero variance; every template still
        // matches itself-shifted copies on a constant series
        let constant = x.iter().all(|&v| v == x[0]);
        return if constant { 0.0 } else { f64::NAN };
    }
    let mut b = 0usize; // m matches
    let mut a = 0usize; // m+1 matches
    for i in 0..n - m {
        for j in i + 1..n - m {
            let mut d = 0.0f64;
            for k in 0..m {
                d = d.max((x[i + k] - x[j + k]).abs());
            }
            if d <= r {
                b += 1;
                if (x[i + m] - x[j + m]).abs().max(d) <= r {
                    a += 1;
                }
            }
        }
    }
    if b == 0 || a == 0 {
        return f64::NAN;
    }
    -((a as f64) / (b as f64)).ln()
}

/// Permutation entropy (nats) over ordinal patterns of the given order.
pub fn permutation_entropy(x: &[f64], order: usize) -> f64 {
    if x.len() < order + 1 {
        return f64::NAN;
    }
    let mut counts = std::collections::HashMap::new();
    for w in x.windows(order) {
        let mut idx: Vec<usize> = (0..order).collect();
        idx.sort_by(|&a, &b| w[a].total_cmp(&w[b]));
        counts.entry(idx).and_modify(|c| *c += 1usize).or_insert(1usize);
    }
    let total = (x.len() - order + 1) as f64;
    -counts
        .values()
        .map(|&c| {
            let p = c as f64 / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Lempel-Ziv complexity of the median-binarized series: number of
/// distinct phrases in a left-to-right parse, divided by the length.
pub fn lempel_ziv_complexity(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let med = stats::median(x);
    let bits: Vec<bool> = x.iter().map(|&v| v > med).collect();
    let mut phrases = std::collections::HashSet::new();
    let mut start = 0;
    let mut len = 1;
    while start + len <= bits.len() {
        let phrase = &bits[start..start + len];
        if phrases.contains(phrase) {
            len += 1;
        } else {
            phrases.insert(phrase.to_vec());
            start += len;
            len = 1;
        }
    }
    phrases.len() as f64 / bits.len() as f64
}

/// Complexity-invariant distance: sqrt of the summed squared first
/// differences; optionally on the z-scored series.
pub fn cid_ce(x: &[f64], normalize: bool) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    if normalize {
        let sd = stats::std_dev(x, 0);
        if sd == 0.0 {
            return 0.0;
        }
        let m = stats::mean(x);
        let z: Vec<f64> = x.iter().map(|v| (v - m) / sd).collect();
        return cid_ce(&z, false);
    }
    x.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Trend and dynamics
// ---------------------------------------------------------------------------

/// Slope, intercept, correlation, and slope standard error of the least
/// squares line over sample index.
pub fn linear_trend(x: &[f64]) -> [f64; 4] {
    let n = x.len();
    if n < 3 {
        return [f64::NAN; 4];
    }
    let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mt = stats::mean(&t);
    let mx = stats::mean(x);
    let mut stt = 0.0;
    let mut stx = 0.0;
    let mut sxx = 0.0;
    for i in 0..n {
        stt += (t[i] - mt) * (t[i] - mt);
        stx += (t[i] - mt) * (x[i] - mx);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    let slope = stx / stt;
    let intercept = mx - slope * mt;
    let r = if sxx == 0.0 { f64::NAN } else { stx / (stt * sxx).sqrt() };
    let rss: f64 = (0..n)
        .map(|i| {
            let e = x[i] - (intercept + slope * t[i]);
            e * e
        })
        .sum();
    let stderr = (rss / (n - 2) as f64 / stt).sqrt();
    [slope, intercept, r, stderr]
}

/// Means over consecutive chunks of `width` samples (last partial chunk
/// included).
pub fn aggregate_chunks(x: &[f64], width: usize) -> Vec<f64> {
    x.chunks(width).map(stats::mean).collect()
}

/// AR(p) coefficients [intercept, a1..ap] by least squares.
pub fn ar_coefficients(x: &[f64], p: usize) -> Option<Vec<f64>> {
    if x.len() < 3 * p + 2 {
        return None;
    }
    let mut rows = Vec::with_capacity(x.len() - p);
    let mut y = Vec::with_capacity(x.len() - p);
    for t in p..x.len() {
        let mut row = Vec::with_capacity(p + 1);
        row.push(1.0);
        for k in 1..=p {
            row.push(x[t - k]);
        }
        rows.push(row);
        y.push(x[t]);
    }
    ols(&rows, &y).map(|(coef, _)| coef)
}

/// Coefficients (ascending powers) of a cubic fitted to the binned drift
/// of the series: pairs (x_t, x_{t+1}-x_t) are grouped into `bins`
/// equal-count bins of x and the bin means are fitted.
pub fn friedrich_coefficients(x: &[f64], bins: usize, order: usize) -> Option<Vec<f64>> {
    if x.len() < bins * 2 {
        return None;
    }
    let mut pairs: Vec<(f64, f64)> = x.windows(2).map(|w| (w[0], w[1] - w[0])).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let per = pairs.len() / bins;
    if per == 0 {
        return None;
    }
    let mut rows = Vec::with_capacity(bins);
    let mut y = Vec::with_capacity(bins);
    for b in 0..bins {
        let lo = b * per;
        let hi = if b == bins - 1 { pairs.len() } else { lo + per };
        let bx = stats::mean(&pairs[lo..hi].iter().map(|p| p.0).collect::<Vec<_>>());
        let bd = stats::mean(&pairs[lo..hi].iter().map(|p| p.1).collect::<Vec<_>>());
        let mut row = Vec::with_capacity(order + 1);
        let mut pw = 1.0;
        for _ in 0..=order {
            row.push(pw);
            pw *= bx;
        }
        rows.push(row);
        y.push(bd);
    }
    ols(&rows, &y).map(|(coef, _)| coef)
}

/// Largest root of the fitted drift polynomial inside the data range:
/// the estimated fixed point the dynamics relax toward.
pub fn max_langevin_fixed_point(x: &[f64], bins: usize, order: usize) -> f64 {
    let Some(coef) = friedrich_coefficients(x, bins, order) else {
        return f64::NAN;
    };
    let eval = |v: f64| -> f64 {
        let mut acc = 0.0;
        let mut pw = 1.0;
        for &c in &coef {
            acc += c * pw;
            pw *= v;
        }
        acc
    };
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return f64::NAN;
    }
    let grid = 1000;
    let mut best = f64::NAN;
    let mut prev_v = lo;
    let mut prev_f = eval(lo);
    for i in 1..=grid {
        let v = lo + (hi - lo) * i as f64 / grid as f64;
        let f = eval(v);
        if prev_f == 0.0 {
            best = prev_v;
        } else if prev_f * f < 0.0 {
            // bisect
            let (mut a, mut b) = (prev_v, v);
            let (mut fa, _) = (prev_f, f);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                let fm = eval(m);
                if fa * fm <= 0.0 {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
            }
            best = 0.5 * (a + b);
        }
        prev_v = v;
        prev_f = f;
    }
    best
}

/// Augmented Dickey-Fuller regression (one lagged difference, constant
/// included): returns the t-statistic of the level coefficient and a
/// p-value proxy interpolated from standard critical values.
pub fn adf_stat(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n < 10 {
        return (f64::NAN, f64::NAN);
    }
    let dx: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let mut rows = Vec::with_capacity(n - 2);
    let mut y = Vec::with_capacity(n - 2);
    for t in 1..dx.len() {
        rows.push(vec![1.0, x[t], dx[t - 1]]);
        y.push(dx[t]);
    }
    let Some((coef, se)) = ols(&rows, &y) else {
        return (f64::NAN, f64::NAN);
    };
    if !(se[1] > 0.0) {
        return (f64::NAN, f64::NAN);
    }
    let stat = coef[1] / se[1];
    // piecewise-linear bridge over the constant-only critical values
    const TABLE: [(f64, f64); 9] = [
        (-4.5, 0.0005),
        (-3.43, 0.01),
        (-2.86, 0.05),
        (-2.57, 0.10),
        (-1.94, 0.30),
        (-1.62, 0.45),
        (-0.50, 0.90),
        (0.50, 0.97),
        (2.00, 0.999),
    ];
    let p = if stat <= TABLE[0].0 {
        TABLE[0].1
    } else if stat >= TABLE[TABLE.len() - 1].0 {
        TABLE[TABLE.len() - 1].1
    } else {
        let i = TABLE.iter().position(|&(s, _)| s > stat).unwrap();
        let (s0, p0) = TABLE[i - 1];
        let (s1, p1) = TABLE[i];
        p0 + (p1 - p0) * (stat - s0) / (s1 - s0)
    };
    (stat, p)
}

// ---------------------------------------------------------------------------
// Counts, crossings, peaks, strikes
// ---------------------------------------------------------------------------

pub fn crossings(x: &[f64], level: f64) -> usize {
    x.windows(2)
        .filter(|w| (w[0] >= level) != (w[1] >= level))
        .count()
}

pub fn range_count(x: &[f64], lo: f64, hi: f64) -> usize {
    x.iter().filter(|&&v| v >= lo && v < hi).count()
}

pub fn ratio_beyond_r_sigma(x: &[f64], r: f64) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let m = stats::mean(x);
    let sd = stats::std_dev(x, 0);
    if sd == 0.0 {
        return 0.0;
    }
    x.iter().filter(|&&v| (v - m).abs() > r * sd).count() as f64 / x.len() as f64
}

/// Number of samples that exceed every neighbor within `support` on both
/// sides.
pub fn number_peaks(x: &[f64], support: usize) -> usize {
    if x.len() < 2 * support + 1 {
        return 0;
    }
    (support..x.len() - support)
        .filter(|&i| (1..=support).all(|k| x[i] > x[i - k] && x[i] > x[i + k]))
        .count()
}

pub fn longest_strike(x: &[f64], above: bool) -> usize {
    let m = stats::mean(x);
    let mut best = 0;
    let mut cur = 0;
    for &v in x {
        let hit = if above { v > m } else { v < m };
        if hit {
            cur += 1;
            best = best.max(cur);
        } else {
            cur = 0;
        }
    }
    best
}

/// Smallest relative index where q of the total absolute mass lies left.
pub fn index_mass_quantile(x: &[f64], q: f64) -> f64 {
    let total: f64 = x.iter().map(|v| v.abs()).sum();
    if total == 0.0 || x.is_empty() {
        return f64::NAN;
    }
    let mut acc = 0.0;
    for (i, v) in x.iter().enumerate() {
        acc += v.abs();
        if acc / total >= q {
            return (i + 1) as f64 / x.len() as f64;
        }
    }
    1.0
}

pub fn mean_abs_change(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    x.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (x.len() - 1) as f64
}

pub fn mean_second_derivative_central(x: &[f64]) -> f64 {
    if x.len() < 3 {
        return f64::NAN;
    }
    x.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]) / 2.0).sum::<f64>() / (x.len() - 2) as f64
}

pub fn time_reversal_asymmetry(x: &[f64], lag: usize) -> f64 {
    if x.len() < 2 * lag + 1 {
        return f64::NAN;
    }
    let n = x.len() - 2 * lag;
    (0..n)
        .map(|i| {
            let (a, b, c) = (x[i], x[i + lag], x[i + 2 * lag]);
            c * c * b - b * a * a
        })
        .sum::<f64>()
        / n as f64
}

/// Sample skewness with the bias adjustment used by common dataframe
/// libraries.
pub fn skewness(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 3 {
        return f64::NAN;
    }
    let m = stats::mean(x);
    let s = stats::std_dev(x, 1);
    if s == 0.0 {
        return f64::NAN;
    }
    let m3: f64 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    let g1 = m3 / stats::variance(x, 0).powf(1.5);
    (n * (n - 1.0)).sqrt() / (n - 2.0) * g1
}

/// Excess kurtosis with the standard bias adjustment.
pub fn kurtosis(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 4 {
        return f64::NAN;
    }
    let m = stats::mean(x);
    let s2 = stats::variance(x, 1);
    if s2 == 0.0 {
        return f64::NAN;
    }
    let m4: f64 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>();
    ((n + 1.0) * n / ((n - 1.0) * (n - 2.0) * (n - 3.0))) * (m4 / (s2 * s2))
        - 3.0 * (n - 1.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (t, &v) in x.iter().enumerate() {
                    let ang = -std::f64::consts::TAU * k as f64 * t as f64 / n as f64;
                    acc += Complex64::new(v * ang.cos(), v * ang.sin());
                }
                acc
            })
            .collect()
    }

    #[test]
    fn fft_matches_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &n in &[8usize, 60, 128, 180, 255, 256] {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = fft(&x);
            let slow = naive_dft(&x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-9 * (n as f64), "n={n}");
            }
        }
    }

    #[test]
    fn sine_at_bin_three_dominates() {
        let n = 180;
        let x: Vec<f64> = (0..n)
            .map(|t| (std::f64::consts::TAU * 3.0 * t as f64 / n as f64).sin())
            .collect();
        let spec = fft(&x);
        let mags: Vec<f64> = spec[..n / 2 + 1].iter().map(|c| c.norm()).collect();
        let argmax = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, 3);
    }

    #[test]
    fn welch_concentrates_power_in_the_right_band() {
        // 0.3 cycles/sample sits in the top band of four
        let x: Vec<f64> = (0..2000)
            .map(|t| (std::f64::consts::TAU * 0.3 * t as f64).sin())
            .collect();
        let psd = welch_psd(&x, 256);
        let n = psd.len();
        let band = |k: usize| (k * n) / 4..((k + 1) * n) / 4;
        let powers: Vec<f64> = (0..4).map(|b| psd[band(b)].iter().sum::<f64>()).collect();
        let top = powers
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(top, 2, "powers={powers:?}"); // 0.3/0.5 = 60% of nyquist -> third band
    }

    #[test]
    fn entropy_kernels_on_known_signals() {
        let constant = vec![3.0; 100];
        assert_eq!(binned_entropy(&constant, 10), 0.0);
        assert_eq!(sample_entropy(&constant, 2, 0.0), 0.0);

        // alternating series: one ordinal pattern pair -> ln 2
        let alt: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 0.0 } else { 1.0 }).collect();
        let pe = permutation_entropy(&alt, 3);
        assert!((pe - std::f64::consts::LN_2).abs() < 1e-9, "pe={pe}");

        // uniform noise has higher sample entropy than a smooth sine
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sine: Vec<f64> = (0..400).map(|t| (0.05 * t as f64).sin()).collect();
        let se_noise = sample_entropy(&noise, 2, 0.2 * stats::std_dev(&noise, 0));
        let se_sine = sample_entropy(&sine, 2, 0.2 * stats::std_dev(&sine, 0));
        assert!(se_noise > se_sine, "{se_noise} vs {se_sine}");
        let ae_noise = approximate_entropy(&noise, 2, 0.2 * stats::std_dev(&noise, 0));
        let ae_sine = approximate_entropy(&sine, 2, 0.2 * stats::std_dev(&sine, 0));
        assert!(ae_noise > ae_sine, "{ae_noise} vs {ae_sine}");
    }

    #[test]
    fn entropies_are_scale_invariant_with_relative_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 37.0 * v).collect();
        let r = |v: &[f64]| 0.2 * stats::std_dev(v, 0);
        let a = sample_entropy(&x, 2, r(&x));
        let b = sample_entropy(&y, 2, r(&y));
        assert!((a - b).abs() < 1e-9);
        let c = approximate_entropy(&x, 2, r(&x));
        let d = approximate_entropy(&y, 2, r(&y));
        assert!((c - d).abs() < 1e-9);
    }

    #[test]
    fn linear_trend_on_exact_ramp() {
        let x: Vec<f64> = (0..180).map(f64::from).collect();
        let [slope, intercept, r, stderr] = linear_trend(&x);
        assert!((slope - 1.0).abs() < 1e-12);
        assert!(intercept.abs() < 1e-9);
        assert!((r - 1.0).abs() < 1e-12);
        assert!(stderr.abs() < 1e-9);
    }

    #[test]
    fn ar_recovery_on_synthetic_process() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let true_coefs = [0.4, -0.3, 0.2, -0.1, 0.05];
        let mut x = vec![0.0; 4500 + 50];
        for t in 5..x.len() {
            let mut v = 0.0;
            for (k, c) in true_coefs.iter().enumerate() {
                v += c * x[t - 1 - k];
            }
            x[t] = v + rng.random_range(-0.5..0.5);
        }
        let x = &x[50..];
        let coef = ar_coefficients(x, 5).unwrap();
        assert!(coef[0].abs() < 0.05, "intercept {}", coef[0]);
        for (est, truth) in coef[1..].iter().zip(&true_coefs) {
            assert!((est - truth).abs() < 0.05, "est={est} truth={truth}");
        }
    }

    #[test]
    fn pacf_of_ar1_vanishes_beyond_lag_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let rho = 0.6;
        let mut x = vec![0.0; 6000];
        for t in 1..x.len() {
            x[t] = rho * x[t - 1] + rng.random_range(-1.0..1.0);
        }
        let p = pacf(&x, 5);
        assert!((p[0] - rho).abs() < 0.05, "pacf1={}", p[0]);
        for lag in 1..5 {
            assert!(p[lag].abs() < 0.06, "pacf{}={}", lag + 1, p[lag]);
        }
    }

    #[test]
    fn autocorrelation_of_alternating_series() {
        let x: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((autocorrelation(&x, 1) + 1.0).abs() < 1e-9);
        assert!((autocorrelation(&x, 2) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn counting_kernels() {
        let x = [1.0, -1.0, 2.0, -2.0, 0.5];
        assert_eq!(crossings(&x, 0.0), 4);
        assert_eq!(number_peaks(&[0.0, 1.0, 0.0, 2.0, 0.0], 1), 2);
        assert_eq!(number_peaks(&[0.0, 0.5, 3.0, 0.5, 0.0], 2), 1);
        // a peak must beat every neighbor within the support
        assert_eq!(number_peaks(&[0.0, 1.0, 0.5, 2.0, 0.0], 2), 0);
        assert_eq!(number_peaks(&vec![5.0; 30], 3), 0);
        assert_eq!(longest_strike(&[1.0, 1.0, 1.0, -3.0, 1.0], true), 3);
        assert_eq!(longest_strike(&[1.0, 1.0, 1.0, -3.0, 1.0], false), 1);
        assert_eq!(range_count(&x, -1.5, 1.5), 3);
        // index mass quantile of uniform mass: half the mass at half the length
        let u = vec![1.0; 10];
        assert!((index_mass_quantile(&u, 0.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ratio_beyond_sigma_and_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..20000).map(|_| {
            // rough normal via sum of uniforms
            (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0
        }).collect();
        let r1 = ratio_beyond_r_sigma(&x, 1.0);
        assert!((r1 - 0.317).abs() < 0.02, "r1={r1}");
        assert!(skewness(&x).abs() < 0.05);
        assert!(kurtosis(&x).abs() < 0.1); // excess kurtosis near 0
    }

    #[test]
    fn friedrich_finds_ou_fixed_point() {
        // Ornstein-Uhlenbeck-style relaxation toward 2.0
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut x = vec![0.0];
        for _ in 0..6000 {
            let prev = *x.last().unwrap();
            x.push(prev + 0.05 * (2.0 - prev) + rng.random_range(-0.1..0.1));
        }
        let fp = max_langevin_fixed_point(&x, 30, 3);
        assert!((fp - 2.0).abs() < 0.25, "fixed point {fp}");
        let coef = friedrich_coefficients(&x, 30, 3).unwrap();
        assert_eq!(coef.len(), 4);
        // drift decreases through the fixed point
        assert!(coef[1] < 0.0 || coef[3] < 0.0);
    }

    #[test]
    fn adf_separates_stationary_from_random_walk() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut stationary = vec![0.0];
        let mut walk = vec![0.0];
        for _ in 0..800 {
            let s = *stationary.last().unwrap();
            stationary.push(0.5 * s + rng.random_range(-1.0..1.0));
            let w = *walk.last().unwrap();
            walk.push(w + rng.random_range(-1.0..1.0));
        }
        let (stat_s, p_s) = adf_stat(&stationary);
        let (stat_w, p_w) = adf_stat(&walk);
        assert!(stat_s < -3.43, "stationary stat {stat_s}");
        assert!(p_s < 0.02);
        assert!(stat_w > -2.86, "walk stat {stat_w}");
        assert!(p_w > 0.05);
    }

    #[test]
    fn cwt_responds_to_matching_scale() {
        let x: Vec<f64> = (0..500)
            .map(|t| (std::f64::consts::TAU * t as f64 / 20.0).sin())
            .collect();
        let narrow = cwt_row(&x, 2.0);
        let matched = cwt_row(&x, 5.0);
        let e = |row: &[f64]| row.iter().map(|v| v * v).sum::<f64>();
        assert!(e(&matched) > e(&narrow));
    }

    #[test]
    fn small_solvers() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = solve(a, vec![5.0, 10.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
        assert!(solve(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0]).is_none());

        // OLS on exact line recovers it with zero standard errors
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 2.0 + 3.0 * i as f64).collect();
        let (coef, se) = ols(&rows, &y).unwrap();
        assert!((coef[0] - 2.0).abs() < 1e-9);
        assert!((coef[1] - 3.0).abs() < 1e-9);
        assert!(se[1] < 1e-9);
    }

    #[test]
    fn misc_kernels_reference_values() {
        assert!((mean_abs_change(&[1.0, 3.0, 2.0]) - 1.5).abs() < 1e-12);
        assert!((mean_second_derivative_central(&[0.0, 1.0, 4.0]) - 1.0).abs() < 1e-12);
        // symmetric series has near-zero time-reversal asymmetry
        let sym: Vec<f64> = (0..100).map(|t| (0.2 * t as f64).sin()).collect();
        assert!(time_reversal_asymmetry(&sym, 1).abs() < 0.05);
        assert!((energy_ratio_by_chunks(&[1.0, 1.0, 1.0, 1.0], 4)[0] - 0.25).abs() < 1e-12);
        assert!((cid_ce(&[0.0, 1.0, 0.0], false) - 2.0f64.sqrt()).abs() < 1e-12);
        assert_eq!(cid_ce(&[5.0; 10], true), 0.0);
    }

    #[test]
    fn lz_complexity_orders_signals() {
        let periodic: Vec<f64> = (0..256).map(|i| f64::from(i % 2 == 0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<f64> = (0..256).map(|_| rng.random::<f64>()).collect();
        assert!(lempel_ziv_complexity(&periodic) < lempel_ziv_complexity(&noise));
    }
}
