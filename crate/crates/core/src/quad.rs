//! Numerical integration: adaptive Gauss-Kronrod, Gauss-Legendre panels,
//! nested multi-dimensional rules and shifted Halton QMC.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_64,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Stopping rule for adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_subdivisions: usize,
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Tolerance {
            abs,
            rel,
            max_subdivisions: 2000,
        }
    }

    pub fn with_max_subdivisions(mut self, n: usize) -> Self {
        self.max_subdivisions = n;
        self
    }

    fn target(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value.abs())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::new(1e-12, 1e-8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_err: f64,
    pub evals: usize,
    pub converged: bool,
}

impl QuadResult {
    /// Turns a non-converged result into an error carrying the best estimate.
    pub fn require(self, tol: &Tolerance) -> Result<QuadResult> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::QuadratureNonConvergence {
                estimate: self.value,
                achieved: self.abs_err,
                requested: tol.target(self.value),
            })
        }
    }
}

/// One 15-point Kronrod panel with the QUADPACK error heuristic.
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    let mut resabs = fc.abs() * WGK[7];
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for i in 0..7 {
        let x = h * XGK[i];
        let f1 = f(c - x);
        let f2 = f(c + x);
        fv1[i] = f1;
        fv2[i] = f2;
        resk += WGK[i] * (f1 + f2);
        resabs += WGK[i] * (f1.abs() + f2.abs());
        if i % 2 == 1 {
            resg += WG[i / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * resk;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for i in 0..7 {
        resasc += WGK[i] * ((fv1[i] - mean).abs() + (fv2[i] - mean).abs());
    }
    let result = resk * h;
    let resabs = resabs * h.abs();
    let resasc = resasc * h.abs();
    let mut err = ((resk - resg) * h).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (result, err, resabs)
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Adaptive integration over `[a, b]` starting from the partition given by
/// `breaks` (which must include both endpoints, sorted). Never fails; the
/// `converged` flag reports whether the tolerance was met.
pub fn integrate_breaks_lenient<F: FnMut(f64) -> f64>(
    mut f: F,
    breaks: &[f64],
    tol: &Tolerance,
) -> QuadResult {
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    let mut evals = 0;
    let mut frozen_err = 0.0;
    let mut frozen_val = 0.0;
    for w in breaks.windows(2) {
        if w[1] == w[0] {
            continue;
        }
        let (v, e, _) = gk15(&mut f, w[0], w[1]);
        evals += 15;
        total += v;
        total_err += e;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value: v,
            err: e,
        });
    }
    let mut subdivisions = heap.len();
    while total_err > tol.target(total) && subdivisions < tol.max_subdivisions {
        let Some(seg) = heap.pop() else { break };
        let mid = 0.5 * (seg.a + seg.b);
        // Splitting below floating-point resolution cannot help.
        if !(mid > seg.a && mid < seg.b) || (seg.b - seg.a) < 1e-13 * (seg.a.abs() + seg.b.abs()) {
            frozen_err += seg.err;
            frozen_val += seg.value;
            total_err -= seg.err;
            total -= seg.value;
            if heap.is_empty() {
                break;
            }
            continue;
        }
        let (v1, e1, _) = gk15(&mut f, seg.a, mid);
        let (v2, e2, _) = gk15(&mut f, mid, seg.b);
        evals += 30;
        total += v1 + v2 - seg.value;
        total_err += e1 + e2 - seg.err;
        heap.push(Segment { a: seg.a, b: mid, value: v1, err: e1 });
        heap.push(Segment { a: mid, b: seg.b, value: v2, err: e2 });
        subdivisions += 1;
    }
    // Recompute sums from the live segments to shed accumulated rounding.
    let mut value = frozen_val;
    let mut err = frozen_err;
    for s in heap.iter() {
        value += s.value;
        err += s.err;
    }
    QuadResult {
        value,
        abs_err: err,
        evals,
        converged: err <= tol.target(value),
    }
}

pub fn integrate_lenient<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, tol: &Tolerance) -> QuadResult {
    integrate_breaks_lenient(f, &[a, b], tol)
}

/// Adaptive Gauss-Kronrod integration of `f` over the finite interval `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, tol: &Tolerance) -> Result<QuadResult> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::invalid("integration limits must be finite"));
    }
    integrate_lenient(f, a, b, tol).require(tol)
}

pub fn integrate_breaks<F: FnMut(f64) -> f64>(f: F, breaks: &[f64], tol: &Tolerance) -> Result<QuadResult> {
    if breaks.len() < 2 || breaks.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::invalid("breakpoints must be sorted with at least two entries"));
    }
    integrate_breaks_lenient(f, breaks, tol).require(tol)
}

/// Integral over `[a, inf)` through the map `x = a + s / (1 - s)`.
pub fn integrate_semi_infinite<F: FnMut(f64) -> f64>(mut f: F, a: f64, tol: &Tolerance) -> Result<QuadResult> {
    let g = |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let d = 1.0 - s;
        let v = f(a + s / d) / (d * d);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate_breaks_lenient(g, &[0.0, 0.5, 0.9, 0.99, 1.0], tol).require(tol)
}

/// int_a^inf g(x) cos(w x) dx for a slowly decaying, eventually monotone
/// envelope `env` (|g| <= env). Integrates half-period chunks until the
/// integration-by-parts tail bound 2 env(x)/w falls below the tolerance.
pub fn integrate_oscillatory_tail<F: FnMut(f64) -> f64, E: Fn(f64) -> f64>(
    mut g: F,
    env: E,
    w: f64,
    a: f64,
    tol: &Tolerance,
) -> Result<QuadResult> {
    if w == 0.0 {
        return integrate_semi_infinite(g, a, tol);
    }
    let w = w.abs();
    let half = std::f64::consts::PI / w;
    let chunk = 32.0 * half;
    let mut total = 0.0;
    let mut err = 0.0;
    let mut evals = 0;
    let mut x = a;
    let mut scale = 0.0f64;
    for _ in 0..1_000_000 {
        let breaks: Vec<f64> = (0..=32).map(|i| x + i as f64 * half).collect();
        let r = integrate_breaks_lenient(&mut g, &breaks, &Tolerance { abs: tol.abs * 0.01, ..*tol });
        total += r.value;
        err += r.abs_err;
        evals += r.evals;
        scale = scale.max(total.abs());
        x += chunk;
        let bound = 2.0 * env(x) / w;
        if bound < 0.1 * tol.abs.max(tol.rel * scale) {
            err += bound;
            return QuadResult { value: total, abs_err: err, evals, converged: true }.require(tol);
        }
    }
    QuadResult { value: total, abs_err: err + 2.0 * env(x) / w, evals, converged: false }.require(tol)
}

/// Nested adaptive integration over a box. Inner integrals run with the same
/// relative tolerance; their non-convergence is reflected in `converged`.
pub fn integrate_box<F: FnMut(&[f64]) -> f64>(mut f: F, bounds: &[(f64, f64)], tol: &Tolerance) -> QuadResult {
    let mut x = vec![0.0; bounds.len()];
    let mut ok = true;
    let mut evals = 0usize;
    let r = nested(&mut f, bounds, 0, &mut x, tol, &mut ok, &mut evals);
    QuadResult {
        value: r.value,
        abs_err: r.abs_err,
        evals,
        converged: r.converged && ok,
    }
}

fn nested<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    bounds: &[(f64, f64)],
    level: usize,
    x: &mut Vec<f64>,
    tol: &Tolerance,
    ok: &mut bool,
    evals: &mut usize,
) -> QuadResult {
    let (a, b) = bounds[level];
    if level + 1 == bounds.len() {
        let r = integrate_lenient(
            |t| {
                x[level] = t;
                f(x)
            },
            a,
            b,
            tol,
        );
        *evals += r.evals;
        if !r.converged {
            *ok = false;
        }
        return r;
    }
    let inner_tol = Tolerance {
        abs: tol.abs / (b - a).abs().max(1.0),
        rel: tol.rel * 0.5,
        max_subdivisions: tol.max_subdivisions,
    };
    let mut inner_err = 0.0f64;
    let r = integrate_lenient(
        |t| {
            x[level] = t;
            let v = nested(f, bounds, level + 1, x, &inner_tol, ok, evals);
            inner_err = inner_err.max(v.abs_err);
            v.value
        },
        a,
        b,
        tol,
    );
    QuadResult {
        abs_err: r.abs_err + inner_err * (b - a).abs(),
        ..r
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre order must be positive");
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    // Legendre P_n and its derivative at z.
    let eval = |z: f64| {
        let (mut p0, mut p1) = (1.0, z);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        (p1, n as f64 * (z * p1 - p0) / (z * z - 1.0))
    };
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = eval(z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = eval(z);
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Composite Gauss-Legendre rule on a finite interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PanelRule {
    pub fn new(a: f64, b: f64, panels: usize, order: usize) -> Self {
        let (gx, gw) = gauss_legendre(order);
        let h = (b - a) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let lo = a + p as f64 * h;
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push(lo + 0.5 * h * (x + 1.0));
                weights.push(0.5 * h * w);
            }
        }
        PanelRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn apply<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Van der Corput radical inverse of `i` in base `b`.
pub fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let inv = 1.0 / b as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % b) as f64;
        i /= b;
        f *= inv;
    }
    r
}

/// Randomized QMC over a box: Halton points with independent random shifts
/// (Cranley-Patterson). Returns the mean over shifts and its standard error.
pub fn qmc_box<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    bounds: &[(f64, f64)],
    points: usize,
    shifts: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let d = bounds.len();
    if d == 0 || d > PRIMES.len() {
        return Err(Error::Unsupported(format!("QMC dimension {d} outside 1..={}", PRIMES.len())));
    }
    if shifts < 2 {
        return Err(Error::invalid("QMC needs at least two random shifts for an error bar"));
    }
    let vol: f64 = bounds.iter().map(|(a, b)| b - a).product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut estimates = Vec::with_capacity(shifts);
    let mut x = vec![0.0; d];
    for _ in 0..shifts {
        let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let mut acc = 0.0;
        for i in 0..points {
            for k in 0..d {
                let u = (radical_inverse(i as u64 + 1, PRIMES[k]) + shift[k]).fract();
                x[k] = bounds[k].0 + u * (bounds[k].1 - bounds[k].0);
            }
            acc += f(&x);
        }
        estimates.push(vol * acc / points as f64);
    }
    let m = estimates.iter().sum::<f64>() / shifts as f64;
    let var = estimates.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (shifts - 1) as f64;
    Ok((m, (var / shifts as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn kronrod_weights_sum_to_two() {
        let s: f64 = 2.0 * WGK[..7].iter().sum::<f64>() + WGK[7];
        assert!((s - 2.0).abs() < 1e-14);
        let g: f64 = 2.0 * WG[..3].iter().sum::<f64>() + WG[3];
        assert!((g - 2.0).abs() < 1e-14);
    }

    #[test]
    fn kronrod_is_exact_to_degree_22() {
        for deg in 0..=22 {
            let (v, _, _) = gk15(&mut |x: f64| x.powi(deg), 0.0, 1.0);
            let exact = 1.0 / (deg as f64 + 1.0);
            assert!((v - exact).abs() < 1e-14, "degree {deg}: {v} vs {exact}");
        }
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in [1usize, 2, 5, 12, 33] {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((v - exact).abs() < 1e-13, "n={n} deg={deg}: {v}");
            }
        }
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let tol = Tolerance::new(1e-13, 1e-10);
        let r = integrate(|x: f64| x.powf(-0.5), 0.0, 1.0, &tol).unwrap();
        assert!((r.value - 2.0).abs() < 1e-8, "{r:?}");
    }

    #[test]
    fn semi_infinite_gamma_integral() {
        // Gamma(1/4) = int_0^inf t^{-3/4} e^{-t} dt
        let tol = Tolerance::new(1e-13, 1e-10);
        let r = integrate_semi_infinite(|t: f64| t.powf(-0.75) * (-t).exp(), 0.0, &tol).unwrap();
        assert!((r.value - 3.625_609_908_221_908).abs() < 1e-7, "{r:?}");
    }

    #[test]
    fn gaussian_integral_and_box() {
        let tol = Tolerance::new(1e-14, 1e-11);
        let r = integrate(|x: f64| (-x * x).exp(), -10.0, 10.0, &tol).unwrap();
        assert!((r.value - PI.sqrt()).abs() < 1e-10);
        let b = integrate_box(|x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp(), &[(-8.0, 8.0); 3], &tol);
        assert!(b.converged);
        assert!((b.value - PI.powf(1.5)).abs() < 1e-8, "{b:?}");
    }

    #[test]
    fn non_convergence_is_reported() {
        let tol = Tolerance::new(0.0, 1e-15).with_max_subdivisions(3);
        let e = integrate(|x: f64| (50.0 * x).sin().abs(), 0.0, 10.0, &tol).unwrap_err();
        assert!(matches!(e, Error::QuadratureNonConvergence { .. }));
    }

    #[test]
    fn panels_and_qmc_agree_with_closed_forms() {
        let rule = PanelRule::new(-12.0, 12.0, 16, 16);
        let v = rule.apply(|x| (-x * x / 2.0).exp());
        assert!((v - (2.0 * PI).sqrt()).abs() < 1e-12);
        let (m, se) = qmc_box(|x| x.iter().map(|v| v * v).sum(), &[(0.0, 1.0); 4], 4096, 8, 7).unwrap();
        assert!((m - 4.0 / 3.0).abs() < 1e-3 && se < 1e-3, "{m} {se}");
    }
}
