//! Monte Carlo verification: distances to the chi-square(1) law, empirical
//! covariances against the analytic limits, and log-rate fits.

use crate::chaos::{kappa_and_limits, limit_cov_g, limit_cov_gsq, Estimate, LimitConstants, LimitSettings, M2Quadrature, TvBound};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::models::{scale_factor, SpectralDensity, WaveletSpec};
use crate::quad::Tolerance;
use crate::rng::{replica_seed, rng_from_seed};
use crate::scattering::{Ensemble, Scatterer, TSamples};
use crate::synth::Synthesizer;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use libm::{erf, erfc};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

/// P(N^2 <= x).
pub fn chi2_1_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        erf((0.5 * x).sqrt())
    }
}

/// P(chi2_3 <= x); equals int_0^x s f_1(s) ds.
pub fn chi2_3_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        erf((0.5 * x).sqrt()) - (2.0 * x / PI).sqrt() * (-0.5 * x).exp()
    }
}

/// int_0^x F_1(s) ds = x F_1(x) - F_3(x).
fn chi2_1_cdf_integral(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * chi2_1_cdf(x) - chi2_3_cdf(x)
    }
}

/// int_x^inf (1 - F_1(s)) ds, written without cancellation for large x.
fn chi2_1_upper_tail_integral(x: f64) -> f64 {
    if x <= 0.0 {
        1.0 - x
    } else {
        erfc((0.5 * x).sqrt()) * (1.0 - x) + (2.0 * x / PI).sqrt() * (-0.5 * x).exp()
    }
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples contain non-finite values"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

fn ks_sorted(s: &[f64], cdf: &impl Fn(f64) -> f64) -> f64 {
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    })
}

/// Kolmogorov-Smirnov distance between the empirical law of `samples` and `cdf`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    Ok(ks_sorted(&sorted(samples)?, &cdf))
}

pub fn ks_chi2_1(samples: &[f64]) -> Result<f64> {
    ks_distance(samples, chi2_1_cdf)
}

fn w1_sorted(s: &[f64]) -> f64 {
    let n = s.len();
    let g = chi2_1_cdf_integral;
    let mut total = g(s[0]);
    for i in 1..n {
        let (a, b) = (s[i - 1], s[i]);
        if b <= a {
            continue;
        }
        let c = i as f64 / n as f64;
        let (fa, fb) = (chi2_1_cdf(a), chi2_1_cdf(b));
        total += if fb <= c {
            c * (b - a) - (g(b) - g(a))
        } else if fa >= c {
            (g(b) - g(a)) - c * (b - a)
        } else {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if chi2_1_cdf(mid) < c {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi.abs() {
                    break;
                }
            }
            let x = 0.5 * (lo + hi);
            c * (x - a) - (g(x) - g(a)) + (g(b) - g(x)) - c * (b - x)
        };
    }
    total + chi2_1_upper_tail_integral(s[n - 1])
}

/// Exact Wasserstein-1 distance to chi-square(1): int |F_n - F| dx in closed form.
pub fn w1_chi2_1(samples: &[f64]) -> Result<f64> {
    Ok(w1_sorted(&sorted(samples)?))
}

/// Bootstrap standard error of `stat` over `resamples` resamples with replacement.
pub fn bootstrap_se(samples: &[f64], stat: impl Fn(&[f64]) -> f64 + Sync, resamples: usize, seed: u64) -> Result<f64> {
    if resamples < 2 || samples.is_empty() {
        return Err(Error::invalid("bootstrap needs samples and at least two resamples"));
    }
    let n = samples.len();
    let vals: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(replica_seed(seed, "bootstrap", k as u64));
            let r: Vec<f64> = (0..n).map(|_| samples[rng.random_range(0..n)]).collect();
            stat(&r)
        })
        .collect();
    let m = vals.iter().sum::<f64>() / resamples as f64;
    Ok((vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (resamples as f64 - 1.0)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub n: usize,
    pub ks: f64,
    pub ks_se: f64,
    pub w1: f64,
    pub w1_se: f64,
}

/// KS and W1 to chi-square(1) with bootstrap standard errors.
pub fn chi2_distances(samples: &[f64], resamples: usize, seed: u64) -> Result<DistanceStats> {
    let s = sorted(samples)?;
    let ks = ks_sorted(&s, &chi2_1_cdf);
    let w1 = w1_sorted(&s);
    let ks_se = bootstrap_se(
        &s,
        |r| {
            let mut r = r.to_vec();
            r.sort_by(f64::total_cmp);
            ks_sorted(&r, &chi2_1_cdf)
        },
        resamples,
        replica_seed(seed, "ks", 0),
    )?;
    let w1_se = bootstrap_se(
        &s,
        |r| {
            let mut r = r.to_vec();
            r.sort_by(f64::total_cmp);
            w1_sorted(&r)
        },
        resamples,
        replica_seed(seed, "w1", 0),
    )?;
    Ok(DistanceStats {
        n: s.len(),
        ks,
        ks_se,
        w1,
        w1_se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub j: f64,
    pub value: f64,
    /// Standard error of `value`; zero for exact inputs.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Least-squares slope of log2(value) against j.
    pub slope: f64,
    pub intercept: f64,
    /// 95% parametric-bootstrap interval.
    pub ci: [f64; 2],
    pub used: usize,
    pub excluded: Vec<f64>,
    pub warnings: Vec<String>,
}

fn ls_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

/// Slope of log2(value) vs j. Nonpositive values are dropped with a warning.
/// The interval comes from resampling each value as value + se * N(0,1).
pub fn rate_fit(points: &[RatePoint], resamples: usize, seed: u64) -> Result<RateFit> {
    let mut warnings = Vec::new();
    let mut excluded = Vec::new();
    let used: Vec<RatePoint> = points
        .iter()
        .filter(|p| {
            let ok = p.value > 0.0 && p.value.is_finite();
            if !ok {
                warnings.push(format!("excluded nonpositive value {} at j={}", p.value, p.j));
                excluded.push(p.j);
            }
            ok
        })
        .copied()
        .collect();
    let mut js: Vec<f64> = used.iter().map(|p| p.j).collect();
    js.sort_by(f64::total_cmp);
    js.dedup();
    if js.len() < 3 {
        return Err(Error::invalid(format!(
            "rate fit needs >= 3 distinct j with positive values (have {})",
            js.len()
        )));
    }
    let x: Vec<f64> = used.iter().map(|p| p.j).collect();
    let y: Vec<f64> = used.iter().map(|p| p.value.log2()).collect();
    let (slope, intercept) = ls_fit(&x, &y);
    let mut ci = [slope, slope];
    if used.iter().any(|p| p.se > 0.0) {
        let mut slopes: Vec<f64> = (0..resamples.max(2))
            .into_par_iter()
            .filter_map(|k| {
                let mut rng = rng_from_seed(replica_seed(seed, "rate-fit", k as u64));
                let yb: Option<Vec<f64>> = used
                    .iter()
                    .map(|p| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let v = p.value + p.se * z;
                        (v > 0.0).then(|| v.log2())
                    })
                    .collect();
                yb.map(|yb| ls_fit(&x, &yb).0)
            })
            .collect();
        if slopes.len() < resamples.max(2) {
            warnings.push(format!(
                "{} bootstrap resamples had nonpositive values and were dropped",
                resamples.max(2) - slopes.len()
            ));
        }
        if slopes.len() >= 2 {
            slopes.sort_by(f64::total_cmp);
            ci = [quantile(&slopes, 0.025), quantile(&slopes, 0.975)];
        }
    }
    Ok(RateFit {
        slope,
        intercept,
        ci,
        used: used.len(),
        excluded,
        warnings,
    })
}

/// Covariance matrix over columns of `rows` ([replica][column]) with the
/// standard error of each entry. `zero_mean` uses the known mean 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovMatrix {
    pub values: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub n: usize,
}

pub fn cov_with_se(rows: &[Vec<f64>], zero_mean: bool) -> Result<CovMatrix> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::invalid("covariance needs at least two replicas"));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("ragged sample rows"));
    }
    let means: Vec<f64> = (0..d)
        .map(|c| if zero_mean { 0.0 } else { rows.iter().map(|r| r[c]).sum::<f64>() / n as f64 })
        .collect();
    let mut values = vec![vec![0.0; d]; d];
    let mut se = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in a..d {
            let p: Vec<f64> = rows.iter().map(|r| (r[a] - means[a]) * (r[b] - means[b])).collect();
            let m = p.iter().sum::<f64>() / n as f64;
            let denom = if zero_mean { n as f64 } else { n as f64 - 1.0 };
            let c = m * n as f64 / denom;
            let v = p.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let s = (v / n as f64).sqrt();
            values[a][b] = c;
            values[b][a] = c;
            se[a][b] = s;
            se[b][a] = s;
        }
    }
    Ok(CovMatrix { values, se, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            passed,
            detail,
        }
    }
}

/// True when every check selected by `wanted` passed (empty selects all).
pub fn checks_pass(checks: &[CheckResult], wanted: &[String]) -> bool {
    checks
        .iter()
        .filter(|c| wanted.is_empty() || wanted.iter().any(|w| w == &c.name))
        .all(|c| c.passed)
}

/// A configured experiment: density, wavelet, filter bank and replica ensemble.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub density: SpectralDensity,
    pub wavelet: WaveletSpec,
    pub scatterer: Scatterer,
    pub ensemble: Ensemble,
}

impl Experiment {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        cfg.validate_spans()?;
        let density = cfg.density()?;
        let wavelet = cfg.wavelet()?;
        let scatterer = Scatterer::new(&wavelet, cfg.grid, cfg.scatter)?;
        let ensemble = Ensemble::new(Synthesizer::new(&density, cfg.grid)?, cfg.seed, cfg.replicas);
        Ok(Experiment {
            cfg: cfg.clone(),
            density,
            wavelet,
            scatterer,
            ensemble,
        })
    }

    /// T[prefix, jM](2^{jM} t) for every configured jM, time and replica.
    pub fn sample(&self) -> Result<TSamples> {
        self.scatterer.sample_t(&self.ensemble, &self.cfg.scales_prefix, &self.cfg.jm, &self.cfg.times)
    }

    pub fn limit_constants(&self) -> Result<LimitConstants> {
        let s = LimitSettings {
            rel_tol: self.cfg.tolerances.limit_rel,
            seed: replica_seed(self.cfg.seed, "limits", 0),
            ..LimitSettings::default()
        };
        kappa_and_limits(&self.density, &self.wavelet, &self.cfg.scales_prefix, self.cfg.depth(), &s)
    }

    fn m2(&self) -> Result<Option<M2Quadrature>> {
        if self.cfg.depth() != 2 {
            return Ok(None);
        }
        Ok(Some(M2Quadrature::new(
            &self.density,
            &self.wavelet,
            self.cfg.scales_prefix[0],
            Tolerance::new(0.0, self.cfg.tolerances.quad_rel),
        )?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub jm: i32,
    /// 2^{jM} sigma^2_{jM}: quadrature at depth 2, ensemble mean otherwise.
    pub sigma2_scaled: Estimate,
    /// Samples of 2^{jM} U / (kappa ||psi_hat||^2).
    pub limit_normalized: DistanceStats,
    /// Samples of U / sigma^2_{jM}.
    pub finite_normalized: DistanceStats,
    pub mean_limit_normalized: f64,
    pub tv_bound: Option<TvBound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub depth: usize,
    pub scales_prefix: Vec<i32>,
    pub time: f64,
    pub limits: LimitConstants,
    pub rows: Vec<DistanceRow>,
    pub ks_fit: Option<RateFit>,
    pub checks: Vec<CheckResult>,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Distances to chi-square(1) at the first configured time, one sample per replica.
pub fn distribution_report(exp: &Experiment, samples: &TSamples, limits: &LimitConstants) -> Result<DistanceReport> {
    let cfg = &exp.cfg;
    let tol = &cfg.tolerances;
    let m2 = exp.m2()?;
    let mut rows = Vec::new();
    for (a, &jm) in samples.jms.iter().enumerate() {
        let u: Vec<f64> = samples.rescaled_u(a).iter().map(|r| r[0]).collect();
        let sigma2_scaled = match &m2 {
            Some(q) => q.sigma2_scaled(jm)?,
            None => {
                let (m, se) = mean_se(&u);
                Estimate {
                    value: m,
                    err: se,
                    method: "ensemble mean of 2^jM U".into(),
                }
            }
        };
        let lim: Vec<f64> = u.iter().map(|v| v / limits.limit_variance).collect();
        let fin: Vec<f64> = u.iter().map(|v| v / sigma2_scaled.value).collect();
        let seed = replica_seed(cfg.seed, "distances", jm as u64);
        let limit_normalized = chi2_distances(&lim, tol.bootstrap, seed)?;
        let finite_normalized = chi2_distances(&fin, tol.bootstrap, seed ^ 1)?;
        let tv_bound = match &m2 {
            Some(q) => Some(q.tv_bound(jm)?),
            None => None,
        };
        rows.push(DistanceRow {
            jm,
            sigma2_scaled,
            mean_limit_normalized: mean_se(&lim).0,
            limit_normalized,
            finite_normalized,
            tv_bound,
        });
    }
    let points: Vec<RatePoint> = rows
        .iter()
        .map(|r| RatePoint {
            j: r.jm as f64,
            value: r.limit_normalized.ks,
            se: r.limit_normalized.ks_se,
        })
        .collect();
    let ks_fit = rate_fit(&points, tol.bootstrap, replica_seed(cfg.seed, "ks-fit", 0)).ok();

    let mut checks = Vec::new();
    let lo = rows.iter().min_by_key(|r| r.jm).expect("non-empty jm");
    let hi = rows.iter().max_by_key(|r| r.jm).expect("non-empty jm");
    checks.push(CheckResult::new(
        "ks_max",
        hi.limit_normalized.ks <= tol.ks_max,
        format!("KS at jM={} is {:.4} (limit {})", hi.jm, hi.limit_normalized.ks, tol.ks_max),
    ));
    if lo.jm != hi.jm {
        let sep = tol.se_multiple * (lo.limit_normalized.ks_se.powi(2) + hi.limit_normalized.ks_se.powi(2)).sqrt();
        let gap = lo.limit_normalized.ks - hi.limit_normalized.ks;
        checks.push(CheckResult::new(
            "ks_decreasing",
            gap > sep,
            format!(
                "KS(jM={}) - KS(jM={}) = {gap:.4}, separation needed {sep:.4}",
                lo.jm, hi.jm
            ),
        ));
    }
    if m2.is_some() {
        let bad: Vec<String> = rows
            .iter()
            .filter_map(|r| {
                let b = r.tv_bound.as_ref()?;
                let lim = b.value + tol.se_multiple * r.finite_normalized.ks_se;
                (r.finite_normalized.ks > lim).then(|| format!("jM={}: KS {:.4} > {lim:.4}", r.jm, r.finite_normalized.ks))
            })
            .collect();
        checks.push(CheckResult::new(
            "ks_le_tv_bound",
            bad.is_empty(),
            if bad.is_empty() { "KS <= TV bound + 3 SE at every jM".into() } else { bad.join("; ") },
        ));
    }
    Ok(DistanceReport {
        depth: cfg.depth(),
        scales_prefix: cfg.scales_prefix.clone(),
        time: cfg.times[0],
        limits: limits.clone(),
        rows,
        ks_fit,
        checks,
    })
}

pub fn run_distribution_test(cfg: &ExperimentConfig) -> Result<DistanceReport> {
    let exp = Experiment::new(cfg)?;
    let samples = exp.sample()?;
    distribution_report(&exp, &samples, &exp.limit_constants()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovEntry {
    pub i: usize,
    pub j: usize,
    pub delta: f64,
    pub empirical: f64,
    pub se: f64,
    pub reference: f64,
    pub z: f64,
}

fn entries(times: &[f64], c: &CovMatrix, reference: impl Fn(f64) -> Result<f64>) -> Result<Vec<CovEntry>> {
    let mut out = Vec::new();
    for i in 0..times.len() {
        for j in i..times.len() {
            let delta = times[j] - times[i];
            let r = reference(delta)?;
            let (e, s) = (c.values[i][j], c.se[i][j]);
            out.push(CovEntry {
                i,
                j,
                delta,
                empirical: e,
                se: s,
                reference: r,
                z: if s > 0.0 { (e - r) / s } else { f64::INFINITY },
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceRow {
    pub jm: i32,
    /// Cov(2^jM U) against 2 C_inf(delta)^2.
    pub u: Vec<CovEntry>,
    /// Cov(2^{jM/2} T) against C_inf(delta).
    pub t: Vec<CovEntry>,
    /// Diagonal of Cov(2^jM U) against 2 (kappa ||psi_hat||^2)^2.
    pub u_diag_vs_limit: Vec<CovEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub times: Vec<f64>,
    pub limits: LimitConstants,
    pub rows: Vec<CovarianceRow>,
    pub checks: Vec<CheckResult>,
}

fn all_within(e: &[CovEntry], k: f64) -> bool {
    e.iter().all(|x| x.z.abs() <= k)
}

fn worst(e: &[CovEntry]) -> String {
    e.iter()
        .max_by(|a, b| a.z.abs().total_cmp(&b.z.abs()))
        .map_or(String::new(), |x| format!("worst |z| = {:.2} at delta = {}", x.z.abs(), x.delta))
}

pub fn covariance_report(exp: &Experiment, samples: &TSamples, limits: &LimitConstants) -> Result<CovarianceReport> {
    let cfg = &exp.cfg;
    if cfg.times.len() < 2 {
        return Err(Error::invalid("covariance test needs at least two sample times"));
    }
    let w = &exp.wavelet;
    let mut rows = Vec::new();
    for (a, &jm) in samples.jms.iter().enumerate() {
        let cu = cov_with_se(&samples.rescaled_u(a), false)?;
        let ct = cov_with_se(&samples.rescaled_t(a), true)?;
        let u = entries(&cfg.times, &cu, |d| limit_cov_gsq(limits, w, d))?;
        let t = entries(&cfg.times, &ct, |d| limit_cov_g(limits, w, d))?;
        let diag_ref = 2.0 * limits.limit_variance.powi(2);
        let u_diag_vs_limit = u
            .iter()
            .filter(|e| e.i == e.j)
            .map(|e| CovEntry {
                reference: diag_ref,
                z: (e.empirical - diag_ref) / e.se,
                ..e.clone()
            })
            .collect();
        rows.push(CovarianceRow { jm, u, t, u_diag_vs_limit });
    }
    let k = cfg.tolerances.se_multiple;
    let hi = rows.iter().max_by_key(|r| r.jm).expect("non-empty jm");
    let checks = vec![
        CheckResult::new(
            "cov_u_within_se",
            all_within(&hi.u, k),
            format!("jM={}: {}", hi.jm, worst(&hi.u)),
        ),
        CheckResult::new(
            "cov_u_diag_limit",
            all_within(&hi.u_diag_vs_limit, k),
            format!("jM={}: {}", hi.jm, worst(&hi.u_diag_vs_limit)),
        ),
        CheckResult::new(
            "cov_t_within_se",
            all_within(&hi.t, k),
            format!("jM={}: {}", hi.jm, worst(&hi.t)),
        ),
    ];
    Ok(CovarianceReport {
        times: cfg.times.clone(),
        limits: limits.clone(),
        rows,
        checks,
    })
}

pub fn run_covariance_test(cfg: &ExperimentConfig) -> Result<CovarianceReport> {
    let exp = Experiment::new(cfg)?;
    let samples = exp.sample()?;
    covariance_report(&exp, &samples, &exp.limit_constants()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteCovRow {
    pub jm: i32,
    /// Empirical Cov(2^{jM/2} T) against the finite-scale quadrature C_jM.
    pub entries: Vec<CovEntry>,
    /// C_inf at the same lags.
    pub limit: Vec<f64>,
    /// max |C_jM - C_inf| / C_inf(0).
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteCovReport {
    pub times: Vec<f64>,
    pub rows: Vec<FiniteCovRow>,
    pub checks: Vec<CheckResult>,
}

pub fn finite_cov_report(exp: &Experiment, samples: &TSamples, limits: &LimitConstants) -> Result<FiniteCovReport> {
    let cfg = &exp.cfg;
    let q = exp
        .m2()?
        .ok_or_else(|| Error::Unsupported(format!("finite covariance check needs depth 2 (got {})", cfg.depth())))?;
    let c0 = limits.limit_variance;
    let mut rows = Vec::new();
    for (a, &jm) in samples.jms.iter().enumerate() {
        let ct = cov_with_se(&samples.rescaled_t(a), true)?;
        let e = entries(&cfg.times, &ct, |d| Ok(q.finite_cov(jm, d)?.value))?;
        let limit = e.iter().map(|x| limit_cov_g(limits, &exp.wavelet, x.delta)).collect::<Result<Vec<_>>>()?;
        let gap = e
            .iter()
            .zip(&limit)
            .map(|(x, l)| (x.reference - l).abs() / c0)
            .fold(0.0, f64::max);
        rows.push(FiniteCovRow { jm, entries: e, limit, gap });
    }
    let k = cfg.tolerances.se_multiple;
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| !all_within(&r.entries, k))
        .map(|r| format!("jM={}: {}", r.jm, worst(&r.entries)))
        .collect();
    let mut by_j: Vec<&FiniteCovRow> = rows.iter().collect();
    by_j.sort_by_key(|r| r.jm);
    let decreasing = by_j.windows(2).all(|w| w[1].gap < w[0].gap);
    let checks = vec![
        CheckResult::new(
            "finite_cov_within_se",
            bad.is_empty(),
            if bad.is_empty() { "all entries within tolerance".into() } else { bad.join("; ") },
        ),
        CheckResult::new(
            "finite_cov_gap_decreasing",
            decreasing,
            format!(
                "gaps {:?}",
                by_j.iter().map(|r| (r.jm, r.gap)).collect::<Vec<_>>()
            ),
        ),
    ];
    Ok(FiniteCovReport {
        times: cfg.times.clone(),
        rows,
        checks,
    })
}

pub fn run_finite_cov_check(cfg: &ExperimentConfig) -> Result<FiniteCovReport> {
    let exp = Experiment::new(cfg)?;
    if cfg.depth() != 2 {
        return Err(Error::Unsupported(format!("finite covariance check needs depth 2 (got {})", cfg.depth())));
    }
    let samples = exp.sample()?;
    finite_cov_report(&exp, &samples, &exp.limit_constants()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub bounds: Vec<TvBound>,
    pub fit: RateFit,
    pub checks: Vec<CheckResult>,
}

/// Decay rate of the depth-2 total-variation bound over the configured jM.
pub fn run_rate(cfg: &ExperimentConfig) -> Result<RateReport> {
    cfg.validate()?;
    if cfg.depth() != 2 {
        return Err(Error::Unsupported("the total-variation bound is available for depth 2 only".into()));
    }
    let q = M2Quadrature::new(&cfg.density()?, &cfg.wavelet()?, cfg.scales_prefix[0], Tolerance::new(0.0, 1e-7))?;
    let bounds = cfg.jm.iter().map(|&j| q.tv_bound(j)).collect::<Result<Vec<_>>>()?;
    let points: Vec<RatePoint> = bounds
        .iter()
        .map(|b| RatePoint {
            j: b.j2 as f64,
            value: b.value,
            se: b.err,
        })
        .collect();
    let fit = rate_fit(&points, cfg.tolerances.bootstrap, replica_seed(cfg.seed, "rate", 0))?;
    let [lo, hi] = cfg.tolerances.slope_window;
    let checks = vec![CheckResult::new(
        "tv_slope",
        (lo..=hi).contains(&fit.slope),
        format!("slope {:.4} (window [{lo}, {hi}])", fit.slope),
    )];
    Ok(RateReport { bounds, fit, checks })
}

/// Per-replica T samples as CSV with columns replica,jM,time,value.
pub fn write_samples_csv(samples: &TSamples, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "replica,jM,time,value")?;
    for (a, &jm) in samples.jms.iter().enumerate() {
        for (k, row) in samples.values[a].iter().enumerate() {
            for (t, v) in samples.times.iter().zip(row) {
                writeln!(f, "{k},{jm},{t},{v:e}")?;
            }
        }
    }
    f.flush()?;
    Ok(())
}

/// 2^{jM} scaling shared with the scattering module.
pub fn rescale_factor(jm: i32) -> f64 {
    scale_factor(jm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::ChiSquared;

    fn chi2_samples(n: usize, scale: f64, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        let d = ChiSquared::new(1.0).unwrap();
        (0..n).map(|_| scale * d.sample(&mut rng)).collect()
    }

    #[test]
    fn chi2_cdfs() {
        // P(N^2 <= 1) = P(|N| <= 1)
        assert!((chi2_1_cdf(1.0) - 0.682_689_492_137_086).abs() < 1e-14, "{:e}", chi2_1_cdf(1.0) - 0.682_689_492_137_086);
        assert!((chi2_3_cdf(3.0) - 0.608_374_823_728_911).abs() < 1e-12);
        // d/dx int_0^x F = F
        for x in [0.3, 2.0, 7.5] {
            let h = 1e-5;
            let d = (chi2_1_cdf_integral(x + h) - chi2_1_cdf_integral(x - h)) / (2.0 * h);
            assert!((d - chi2_1_cdf(x)).abs() < 1e-8);
            let t = (chi2_1_upper_tail_integral(x + h) - chi2_1_upper_tail_integral(x - h)) / (2.0 * h);
            assert!((t + 1.0 - chi2_1_cdf(x)).abs() < 1e-8);
        }
        assert!((chi2_1_upper_tail_integral(0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ks_self_distance_is_small() {
        let s = chi2_samples(10_000, 1.0, 1);
        let d = ks_chi2_1(&s).unwrap();
        assert!(d < 1.63 / 100.0, "{d}");
    }

    #[test]
    fn ks_against_doubled_law() {
        let s = chi2_samples(10_000, 2.0, 2);
        let d = ks_chi2_1(&s).unwrap();
        // Oracle: sup_x |F(x) - F(x/2)| on a fine grid.
        let exact = (1..200_000)
            .map(|i| {
                let x = i as f64 * 1e-4;
                (chi2_1_cdf(x) - chi2_1_cdf(x / 2.0)).abs()
            })
            .fold(0.0, f64::max);
        assert!(d > 0.1 && (d - exact).abs() < 0.02, "{d} vs {exact}");
    }

    #[test]
    fn w1_matches_grid_integration() {
        let s = chi2_samples(300, 1.3, 3);
        let w = w1_chi2_1(&s).unwrap();
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        let h = 1e-4;
        let mut acc = 0.0;
        let mut k = 0;
        let mut x = 0.5 * h;
        while x < 80.0 {
            while k < sorted.len() && sorted[k] <= x {
                k += 1;
            }
            acc += (k as f64 / sorted.len() as f64 - chi2_1_cdf(x)).abs() * h;
            x += h;
        }
        assert!((w - acc).abs() < 1e-4, "{w} vs {acc}");
        // W1 between chi2_1 and 2 chi2_1 is E|2S - S| = 1 in the large-sample limit.
        let big = chi2_samples(200_000, 2.0, 4);
        assert!((w1_chi2_1(&big).unwrap() - 1.0).abs() < 0.02);
    }

    #[test]
    fn bootstrap_se_of_mean() {
        let s = chi2_samples(4000, 1.0, 5);
        let se = bootstrap_se(&s, |r| r.iter().sum::<f64>() / r.len() as f64, 500, 6).unwrap();
        let exact = (2.0f64 / 4000.0).sqrt();
        assert!((se / exact - 1.0).abs() < 0.15, "{se} vs {exact}");
    }

    #[test]
    fn distances_are_deterministic() {
        let s = chi2_samples(2000, 1.0, 7);
        let a = chi2_distances(&s, 500, 8).unwrap();
        let b = chi2_distances(&s, 500, 8).unwrap();
        assert_eq!(a, b);
        assert!(a.ks >= 0.0 && a.ks <= 1.0 && a.w1 >= 0.0 && a.ks_se > 0.0);
    }

    #[test]
    fn rate_fit_identities() {
        let pts: Vec<RatePoint> = (4..=10)
            .map(|j| RatePoint {
                j: j as f64,
                value: 3.0 * 2f64.powf(-0.5 * j as f64),
                se: 0.0,
            })
            .collect();
        let f = rate_fit(&pts, 500, 1).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && f.ci == [f.slope, f.slope]);
        let c: Vec<RatePoint> = pts.iter().map(|p| RatePoint { value: 0.7, ..*p }).collect();
        assert!(rate_fit(&c, 500, 1).unwrap().slope.abs() < 1e-12);
        let mut bad = pts.clone();
        bad[0].value = 0.0;
        let f = rate_fit(&bad, 500, 1).unwrap();
        assert_eq!(f.excluded, vec![4.0]);
        assert!(!f.warnings.is_empty());
        assert!(rate_fit(&pts[..2], 500, 1).is_err());
        let noisy: Vec<RatePoint> = pts.iter().map(|p| RatePoint { se: 0.05 * p.value, ..*p }).collect();
        let f = rate_fit(&noisy, 500, 2).unwrap();
        assert!(f.ci[0] < -0.5 && f.ci[1] > -0.5);
    }

    #[test]
    fn covariance_with_se() {
        let mut rng = rng_from_seed(9);
        let rows: Vec<Vec<f64>> = (0..20_000)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                vec![a, 0.6 * a + 0.8 * b]
            })
            .collect();
        let c = cov_with_se(&rows, true).unwrap();
        assert_eq!(c.values[0][1], c.values[1][0]);
        assert!((c.values[0][1] - 0.6).abs() < 3.0 * c.se[0][1]);
        assert!((c.values[1][1] - 1.0).abs() < 3.0 * c.se[1][1]);
        assert!(cov_with_se(&rows[..1], false).is_err());
    }

    #[test]
    fn check_selection() {
        let c = vec![CheckResult::new("a", true, String::new()), CheckResult::new("b", false, String::new())];
        assert!(!checks_pass(&c, &[]));
        assert!(checks_pass(&c, &["a".into()]));
    }
}
