//! Limit constants, finite-scale variances and covariances, the constructive
//! bound constant and the M = 2 total-variation bound.

use super::node::{build_tree, factorial, importance_point, level_coefficient, ChaosContext, InnerSettings, IntegrandNode, Level};
use crate::error::{Error, Result};
use crate::models::{scale_factor, SpectralDensity, WaveletSpec};
use crate::quad::{integrate_box, integrate_breaks, integrate_breaks_lenient, qmc_box, QuadResult, Tolerance};
use crate::rng::{replica_seed, rng_from_seed};
use crate::scattering::{Ensemble, ScatterSettings, Scatterer};
use crate::synth::{GridSpec, Synthesizer};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// A number with its uncertainty and how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Quadrature error estimate or Monte Carlo standard error.
    pub err: f64,
    pub method: String,
}

/// Outer-integral settings for the limit constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitSettings {
    /// Relative tolerance of adaptive outer integrals (dimension <= 3).
    pub rel_tol: f64,
    /// QMC points per shift (dimension >= 4).
    pub qmc_points: usize,
    pub qmc_shifts: usize,
    pub seed: u64,
    pub inner: InnerSettings,
}

impl Default for LimitSettings {
    fn default() -> Self {
        LimitSettings {
            rel_tol: 1e-3,
            qmc_points: 1 << 20,
            qmc_shifts: 8,
            seed: 0x5eed,
            inner: InnerSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CConstant {
    /// r in M_r = 2^{M-1} - 2r.
    pub r: usize,
    /// M_r, the arity of the level-(M-1) integrand.
    pub order: usize,
    pub value: f64,
    pub err: f64,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitConstants {
    pub depth: usize,
    pub scales_prefix: Vec<i32>,
    pub c: Vec<CConstant>,
    pub kappa: f64,
    pub kappa_err: f64,
    pub psi_hat_l2: f64,
    /// kappa * ||psi_hat||^2.
    pub limit_variance: f64,
    pub limit_variance_err: f64,
    pub provenance: String,
    /// "certified" for depth <= 3, "best-effort" beyond.
    pub status: String,
}

fn hyperplane_point(u: &[f64], buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend_from_slice(u);
    buf.push(-u.iter().sum::<f64>());
}

/// c = int |G(u, -sum u)|^2 du over R^{arity-1}.
pub fn c_constant(node: &IntegrandNode, settings: &LimitSettings) -> Result<Estimate> {
    let d = node.arity;
    if d < 2 {
        return Err(Error::invalid("c-constant needs an integrand of arity >= 2"));
    }
    let r = node.context().radius;
    let bounds = vec![(-r, r); d - 1];
    if d - 1 <= 3 {
        let tol = Tolerance::new(1e-300, settings.rel_tol);
        let mut buf = Vec::with_capacity(d);
        let q = integrate_box(
            |u| {
                hyperplane_point(u, &mut buf);
                node.eval(&buf).norm_sqr()
            },
            &bounds,
            &tol,
        );
        let q = q.require(&tol)?;
        Ok(Estimate {
            value: q.value,
            err: q.abs_err,
            method: format!("nested adaptive Gauss-Kronrod, rel {:e}", settings.rel_tol),
        })
    } else {
        // Split the point budget over shifts evaluated in parallel.
        let shifts = settings.qmc_shifts.max(2);
        let ests: Vec<(f64, f64)> = (0..shifts)
            .into_par_iter()
            .map(|s| {
                let mut buf = Vec::with_capacity(d);
                qmc_box(
                    |u| {
                        hyperplane_point(u, &mut buf);
                        node.eval(&buf).norm_sqr()
                    },
                    &bounds,
                    settings.qmc_points,
                    2,
                    replica_seed(settings.seed, "qmc", s as u64),
                )
            })
            .collect::<Result<_>>()?;
        let m = ests.iter().map(|e| e.0).sum::<f64>() / shifts as f64;
        let var = ests.iter().map(|e| (e.0 - m).powi(2)).sum::<f64>() / (shifts - 1) as f64;
        Ok(Estimate {
            value: m,
            err: (var / shifts as f64).sqrt(),
            method: format!("randomized Halton QMC, {} points x {} shifts", settings.qmc_points, 2 * shifts),
        })
    }
}

/// Monte Carlo estimate of the same constant: Gaussian importance sampling
/// in u with two independent unbiased evaluations of G (so inner integrals
/// are sampled too and the product is unbiased for |G|^2).
pub fn c_constant_mc(node: &IntegrandNode, samples: usize, seed: u64) -> Result<Estimate> {
    let d = node.arity;
    if d < 2 || samples < 2 {
        return Err(Error::invalid("c-constant MC needs arity >= 2 and at least two samples"));
    }
    let ctx = node.context();
    let chunks = 64usize;
    let per = samples.div_ceil(chunks);
    let parts: Vec<(f64, f64, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(replica_seed(seed, "c-mc", c as u64));
            let mut buf = Vec::with_capacity(d);
            let (mut s1, mut s2) = (0.0, 0.0);
            let n = per.min(samples.saturating_sub(c * per));
            for _ in 0..n {
                let (u, w) = importance_point(ctx, d - 1, &mut rng);
                hyperplane_point(&u, &mut buf);
                let a = node.eval_mc(&buf, &mut rng);
                let b = node.eval_mc(&buf, &mut rng);
                let v = (a * b.conj()).re * w;
                s1 += v;
                s2 += v * v;
            }
            (s1, s2, n)
        })
        .collect();
    let n: usize = parts.iter().map(|p| p.2).sum();
    let s1: f64 = parts.iter().map(|p| p.0).sum();
    let s2: f64 = parts.iter().map(|p| p.1).sum();
    let m = s1 / n as f64;
    let var = (s2 / n as f64 - m * m).max(0.0) * n as f64 / (n as f64 - 1.0);
    Ok(Estimate {
        value: m,
        err: (var / n as f64).sqrt(),
        method: format!("importance-sampled Monte Carlo, {n} samples"),
    })
}

/// The level-(M-1) integrands whose hyperplane norms give c^{(M_r)}.
pub fn limit_integrands(ctx: &Arc<ChaosContext>, prefix: &[i32]) -> Result<Vec<Arc<IntegrandNode>>> {
    let levels = build_tree(ctx, prefix)?;
    let top = levels.last().expect("non-empty tree");
    Ok(top.g.iter().filter(|g| g.arity > 0).cloned().collect())
}

/// All c^{(M_r)}, kappa and the limit variance kappa * ||psi_hat||^2.
pub fn kappa_and_limits(
    sd: &SpectralDensity,
    w: &WaveletSpec,
    prefix: &[i32],
    depth: usize,
    settings: &LimitSettings,
) -> Result<LimitConstants> {
    if depth < 2 {
        return Err(Error::invalid("limit constants need depth M >= 2"));
    }
    if prefix.len() != depth - 1 {
        return Err(Error::invalid(format!(
            "depth {depth} needs {} prefix scales, got {}",
            depth - 1,
            prefix.len()
        )));
    }
    let ctx = ChaosContext::new(sd, w, prefix[0], settings.inner)?;
    let nodes = limit_integrands(&ctx, prefix)?;
    let mut c = Vec::with_capacity(nodes.len());
    let (mut kappa, mut kappa_err) = (0.0, 0.0);
    for (r, g) in nodes.iter().enumerate() {
        let e = c_constant(g, settings)?;
        let mr = g.arity;
        kappa += factorial(mr) * e.value;
        kappa_err += factorial(mr) * e.err;
        c.push(CConstant {
            r,
            order: mr,
            value: e.value,
            err: e.err,
            method: e.method,
        });
    }
    let l2 = w.l2_norm_sq(&Tolerance::new(1e-14, 1e-12))?;
    Ok(LimitConstants {
        depth,
        scales_prefix: prefix.to_vec(),
        c,
        kappa,
        kappa_err,
        psi_hat_l2: l2,
        limit_variance: kappa * l2,
        limit_variance_err: kappa_err * l2,
        provenance: format!(
            "inner Gauss-Legendre {} nodes/dim on [-{:.4}, {:.4}] ({} panels, cap {}), outer rel {:e}, QMC {}x{}, seed {}",
            settings.inner.order,
            ctx.radius,
            ctx.radius,
            settings.inner.panels,
            settings.inner.max_points,
            settings.rel_tol,
            settings.qmc_points,
            settings.qmc_shifts,
            settings.seed
        ),
        status: if depth <= 3 { "certified" } else { "best-effort" }.into(),
    })
}

/// C_inf(delta) = kappa * int exp(i delta z) |psi_hat(z)|^2 dz.
pub fn limit_cov_g(consts: &LimitConstants, w: &WaveletSpec, delta: f64) -> Result<f64> {
    let (re, im) = w.spectral_autocov(delta, &Tolerance::new(1e-15, 1e-12))?;
    if im.abs() > 1e-10 * consts.psi_hat_l2 {
        return Err(Error::NonRealOutput(im));
    }
    Ok(consts.kappa * re)
}

/// Cov(G^2(t), G^2(t + delta)) = 2 C_inf(delta)^2 for a centered Gaussian G.
pub fn limit_cov_gsq(consts: &LimitConstants, w: &WaveletSpec, delta: f64) -> Result<f64> {
    let c = limit_cov_g(consts, w, delta)?;
    Ok(2.0 * c * c)
}

/// The constructive constant of the pointwise bound
/// |G_level_M(l)| <= C_M prod sqrt(f1(l_k)), from ||f1||_1 and sup |psi_hat|.
pub fn bound_constant_from(depth: usize, f1_l1: f64, psi_sup: f64) -> Result<f64> {
    if depth < 1 {
        return Err(Error::invalid("depth must be >= 1"));
    }
    let mut c = 1.0;
    for m in 2..=depth {
        let half = 1usize << (m - 1);
        let nf = 1usize << (m - 2);
        let mut best = 0.0f64;
        for l in 0..half {
            let mut s = 0.0;
            for r in 0..nf {
                for rp in 0..nf {
                    if let Some((p, coef)) = level_coefficient(m, l, r, rp) {
                        s += coef * f1_l1.powi(p as i32);
                    }
                }
            }
            best = best.max(s);
        }
        c = psi_sup * psi_sup * c * c * best;
    }
    Ok(c)
}

pub fn bound_constant(depth: usize, sd: &SpectralDensity, w: &WaveletSpec, j1: i32) -> Result<f64> {
    let f1 = crate::models::filtered_l1(sd, w, j1, &Tolerance::new(1e-300, 1e-11))?;
    bound_constant_from(depth, f1, w.sup_norm())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundProbe {
    pub level: usize,
    pub label: String,
    pub arity: usize,
    pub constant: f64,
    pub probes: usize,
    /// max |G| / (C prod sqrt f1) over the probes; the bound holds iff <= 1.
    pub max_ratio: f64,
}

impl BoundProbe {
    /// Level 1 attains the bound with equality, so allow rounding slack.
    pub fn holds(&self) -> bool {
        self.max_ratio <= 1.0 + 1e-12
    }
}

/// Checks the pointwise bound for every non-scalar G node of every level at
/// `probes` Gaussian-distributed points.
pub fn probe_bound(levels: &[Level], probes: usize, seed: u64) -> Result<Vec<BoundProbe>> {
    let ctx = levels
        .first()
        .and_then(|l| l.g.first())
        .ok_or_else(|| Error::invalid("empty tree"))?
        .context()
        .clone();
    let sup = ctx.wavelet.sup_norm();
    let mut out = Vec::new();
    for lv in levels {
        let c = bound_constant_from(lv.m, ctx.f1_l1, sup)?;
        for (gi, g) in lv.g.iter().enumerate().filter(|(_, g)| g.arity > 0) {
            let ratios: Vec<f64> = (0..probes)
                .into_par_iter()
                .map(|k| {
                    let mut rng = rng_from_seed(replica_seed(seed, &format!("bound-{}-{gi}", lv.m), k as u64));
                    let (x, _) = importance_point(&ctx, g.arity, &mut rng);
                    let env: f64 = x.iter().map(|&l| ctx.f1(l).sqrt()).product();
                    let v = g.eval(&x).norm();
                    if env > 0.0 {
                        v / (c * env)
                    } else if v == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                })
                .collect();
            out.push(BoundProbe {
                level: lv.m,
                label: g.label.clone(),
                arity: g.arity,
                constant: c,
                probes,
                max_ratio: ratios.into_iter().fold(0.0, f64::max),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityProbe {
    pub label: String,
    pub arity: usize,
    pub radii: Vec<f64>,
    /// Estimates of int_{[-R,R]^d} |node|^2 for each radius, all from one
    /// common importance sample so differences measure shell mass only.
    pub values: Vec<f64>,
    /// Relative change at each doubling.
    pub rel_changes: Vec<f64>,
    pub samples: usize,
}

/// Widening-domain probe of int |node|^2 over boxes of the given radii.
pub fn probe_integrability(node: &IntegrandNode, radii: &[f64], samples: usize, seed: u64) -> Result<IntegrabilityProbe> {
    if node.arity == 0 || radii.len() < 2 {
        return Err(Error::invalid("integrability probe needs a positive-arity node and >= 2 radii"));
    }
    let ctx = node.context();
    let contrib: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(replica_seed(seed, "integrability", k as u64));
            let (x, w) = importance_point(ctx, node.arity, &mut rng);
            let reach = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            (reach, node.eval(&x).norm_sqr() * w)
        })
        .collect();
    let values: Vec<f64> = radii
        .iter()
        .map(|&r| contrib.iter().filter(|c| c.0 <= r).map(|c| c.1).sum::<f64>() / samples as f64)
        .collect();
    let rel_changes = values
        .windows(2)
        .map(|v| if v[1] == 0.0 { 0.0 } else { (v[1] - v[0]).abs() / v[1].abs() })
        .collect();
    Ok(IntegrabilityProbe {
        label: node.label.clone(),
        arity: node.arity,
        radii: radii.to_vec(),
        values,
        rel_changes,
        samples,
    })
}

/// Finite-scale quantities for depth 2, written in the rescaled variable
/// z = 2^{j2} (l1 + l2) so they stay well conditioned for large j2.
pub struct M2Quadrature {
    ctx: Arc<ChaosContext>,
    psi_radius: f64,
    tol: Tolerance,
}

impl M2Quadrature {
    pub fn new(sd: &SpectralDensity, w: &WaveletSpec, j1: i32, tol: Tolerance) -> Result<Self> {
        let ctx = ChaosContext::new(sd, w, j1, InnerSettings::default())?;
        Ok(M2Quadrature {
            psi_radius: w.support_radius(1e-10) * 1.2,
            ctx,
            tol,
        })
    }

    pub fn context(&self) -> &Arc<ChaosContext> {
        &self.ctx
    }

    /// h(s) = int f1(u) f1(s - u) du.
    fn h(&self, s: f64) -> f64 {
        let r = self.ctx.radius;
        let mut b = vec![-r - s.abs(), 0.0f64.min(s), 0.0f64.max(s), r + s.abs()];
        b.dedup();
        let inner = Tolerance {
            rel: self.tol.rel * 0.1,
            abs: 0.0,
            ..self.tol
        };
        integrate_breaks_lenient(|u| self.ctx.f1(u) * self.ctx.f1(s - u), &b, &inner).value
    }

    /// 2 int weight(z) |psi_hat(z)|^2 h(2^{-j2} z) dz (both factors are even in z).
    fn weighted(&self, j2: i32, weight: impl Fn(f64) -> f64) -> Result<QuadResult> {
        let e = 1.0 / scale_factor(j2);
        let w = &self.ctx.wavelet;
        let rp = self.psi_radius;
        let breaks: Vec<f64> = (0..=8).map(|i| rp * i as f64 / 8.0).collect();
        let q = integrate_breaks(|z| weight(z) * w.psi_hat_sq(z) * self.h(e * z), &breaks, &self.tol)?;
        Ok(QuadResult {
            value: 2.0 * q.value,
            abs_err: 2.0 * q.abs_err,
            ..q
        })
    }

    /// 2^{j2} ||F||^2 with F = 2F^{(2)}.
    pub fn norm_f_sq_scaled(&self, j2: i32) -> Result<Estimate> {
        let q = self.weighted(j2, |_| 1.0)?;
        Ok(Estimate {
            value: q.value,
            err: q.abs_err,
            method: format!("rescaled 2-D adaptive quadrature, rel {:e}", self.tol.rel),
        })
    }

    /// sigma^2_{j2} = 2 ||F||^2.
    pub fn sigma2(&self, j2: i32) -> Result<Estimate> {
        let n = self.norm_f_sq_scaled(j2)?;
        let s = 2.0 / scale_factor(j2);
        Ok(Estimate {
            value: s * n.value,
            err: s * n.err,
            method: n.method,
        })
    }

    /// 2^{j2} sigma^2_{j2}.
    pub fn sigma2_scaled(&self, j2: i32) -> Result<Estimate> {
        let n = self.norm_f_sq_scaled(j2)?;
        Ok(Estimate {
            value: 2.0 * n.value,
            err: 2.0 * n.err,
            method: n.method,
        })
    }

    /// C_{j2}(delta) = 2^{j2} Cov(T(2^{j2} t), T(2^{j2}(t + delta))).
    pub fn finite_cov(&self, j2: i32, delta: f64) -> Result<Estimate> {
        let q = self.weighted(j2, |z| (delta * z).cos())?;
        Ok(Estimate {
            value: 2.0 * q.value,
            err: 2.0 * q.abs_err,
            method: format!("rescaled 2-D adaptive quadrature, rel {:e}", self.tol.rel),
        })
    }

    /// 2^{3 j2} ||F (x)_1 F||^2 (unsymmetrized contraction).
    pub fn contraction_norm_sq_scaled(&self, j2: i32) -> Result<Estimate> {
        let e = 1.0 / scale_factor(j2);
        let ctx = &self.ctx;
        let w = &ctx.wavelet;
        let rp = self.psi_radius;
        let ra = ctx.radius;
        let real = w.is_real_even();
        let inner_tol = Tolerance {
            rel: self.tol.rel * 0.1,
            abs: 0.0,
            ..self.tol
        };
        // K(l, y) = a(l) a(e y - l) int f1(l - e x) psi_hat(x) psi_hat(y - x) dx
        let kernel = |l: f64, y: f64| -> f64 {
            let lo = (-rp).max(y - rp);
            let hi = rp.min(y + rp);
            if hi <= lo {
                return 0.0;
            }
            let mut b = vec![lo, hi];
            let pole = l / e;
            if pole > lo && pole < hi {
                b.insert(1, pole);
            }
            let part = |im: bool| {
                integrate_breaks_lenient(
                    |x| {
                        let p = w.psi_hat(x) * w.psi_hat(y - x) * ctx.f1(l - e * x);
                        if im {
                            p.im
                        } else {
                            p.re
                        }
                    },
                    &b,
                    &inner_tol,
                )
                .value
            };
            let k = if real {
                Complex64::new(part(false), 0.0)
            } else {
                Complex64::new(part(false), part(true))
            };
            ctx.f1(l) * ctx.f1(e * y - l) * k.norm_sqr()
        };
        let mid_tol = Tolerance {
            rel: self.tol.rel * 0.3,
            abs: 0.0,
            ..self.tol
        };
        let ybreaks: Vec<f64> = (0..=8).map(|i| -2.0 * rp + 4.0 * rp * i as f64 / 8.0).collect();
        let lbreaks = [-ra, -0.5 * ra, 0.0, 0.5 * ra, ra];
        let q = integrate_breaks(
            |l| integrate_breaks_lenient(|y| kernel(l, y), &ybreaks, &mid_tol).value,
            &lbreaks,
            &self.tol,
        )?;
        Ok(Estimate {
            value: q.value,
            err: q.abs_err,
            method: format!("rescaled 3-D nested adaptive quadrature, rel {:e}", self.tol.rel),
        })
    }

    /// The large-j2 limit of the scaled contraction norm:
    /// int f1^4 * ||psi_hat * psi_hat||^2.
    pub fn contraction_norm_sq_limit(&self) -> Result<f64> {
        let ra = self.ctx.radius;
        let f4 = integrate_breaks(|l| self.ctx.f1(l).powi(4), &[-ra, 0.0, ra], &self.tol)?.value;
        let w = &self.ctx.wavelet;
        let rp = self.psi_radius;
        let conv = |y: f64| -> Complex64 {
            let lo = (-rp).max(y - rp);
            let hi = rp.min(y + rp);
            if hi <= lo {
                return Complex64::new(0.0, 0.0);
            }
            let inner = Tolerance {
                rel: self.tol.rel * 0.1,
                abs: 0.0,
                ..self.tol
            };
            let re = integrate_breaks_lenient(|x| (w.psi_hat(x) * w.psi_hat(y - x)).re, &[lo, hi], &inner).value;
            let im = integrate_breaks_lenient(|x| (w.psi_hat(x) * w.psi_hat(y - x)).im, &[lo, hi], &inner).value;
            Complex64::new(re, im)
        };
        let ybreaks: Vec<f64> = (0..=8).map(|i| -2.0 * rp + 4.0 * rp * i as f64 / 8.0).collect();
        let c2 = integrate_breaks(|y| conv(y).norm_sqr(), &ybreaks, &self.tol)?.value;
        Ok(f4 * c2)
    }

    /// d_TV(U / sigma^2, N^2) <= (2 / sigma^2) * 4 ||F (x)_1 F||.
    pub fn tv_bound(&self, j2: i32) -> Result<TvBound> {
        let s = scale_factor(j2);
        let sig = self.sigma2(j2)?;
        let cn = self.contraction_norm_sq_scaled(j2)?;
        let norm = (cn.value / (s * s * s)).sqrt();
        let value = 8.0 * norm / sig.value;
        let rel = sig.err / sig.value + 0.5 * cn.err / cn.value;
        Ok(TvBound {
            j2,
            value,
            err: value * rel,
            sigma2: sig.value,
            contraction_norm: norm,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvBound {
    pub j2: i32,
    pub value: f64,
    pub err: f64,
    pub sigma2: f64,
    /// ||F (x)_1 F||.
    pub contraction_norm: f64,
}

pub fn tv_bound_m2(sd: &SpectralDensity, w: &WaveletSpec, j1: i32, j2: i32) -> Result<TvBound> {
    M2Quadrature::new(sd, w, j1, Tolerance::new(0.0, 1e-8))?.tv_bound(j2)
}

/// How sigma_finite evaluates the variance.
#[derive(Debug, Clone)]
pub enum SigmaMode {
    /// Depth 2 only.
    Quadrature(Tolerance),
    /// Ensemble mean of U at one sample time, any depth.
    MonteCarlo {
        grid: GridSpec,
        replicas: usize,
        seed: u64,
        time: f64,
    },
}

/// sigma^2_{jM} = E U[j1:M]X(t).
pub fn sigma_finite(sd: &SpectralDensity, w: &WaveletSpec, scales: &[i32], mode: &SigmaMode) -> Result<Estimate> {
    if scales.len() < 2 {
        return Err(Error::invalid("sigma_finite needs depth M >= 2"));
    }
    match mode {
        SigmaMode::Quadrature(tol) => {
            if scales.len() != 2 {
                return Err(Error::Unsupported(format!(
                    "quadrature mode supports depth 2 only (got depth {}); use Monte Carlo",
                    scales.len()
                )));
            }
            M2Quadrature::new(sd, w, scales[0], *tol)?.sigma2(scales[1])
        }
        SigmaMode::MonteCarlo {
            grid,
            replicas,
            seed,
            time,
        } => {
            if *replicas < 2 {
                return Err(Error::invalid("Monte Carlo mode needs at least two replicas"));
            }
            let sc = Scatterer::new(w, *grid, ScatterSettings::default())?;
            let ens = Ensemble::new(Synthesizer::new(sd, *grid)?, *seed, *replicas);
            let (prefix, jm) = scales.split_at(scales.len() - 1);
            let t = sc.sample_t(&ens, prefix, jm, &[*time])?;
            let u: Vec<f64> = t.values[0].iter().map(|r| r[0] * r[0]).collect();
            let n = u.len() as f64;
            let m = u.iter().sum::<f64>() / n;
            let var = u.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
            Ok(Estimate {
                value: m,
                err: (var / n).sqrt(),
                method: format!("ensemble mean of U over {replicas} replicas"),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::node::{base_g1, contract, lift_f};
    use std::f64::consts::PI;

    fn sd() -> SpectralDensity {
        SpectralDensity::gauss_lrd(0.5).unwrap()
    }
    fn mh() -> WaveletSpec {
        WaveletSpec::mexican_hat()
    }

    fn tight() -> LimitSettings {
        LimitSettings {
            rel_tol: 1e-9,
            ..LimitSettings::default()
        }
    }

    #[test]
    fn c2_closed_form_and_single_term_kappa() {
        let lc = kappa_and_limits(&sd(), &mh(), &[0], 2, &tight()).unwrap();
        assert_eq!(lc.c.len(), 1);
        assert_eq!(lc.c[0].order, 2);
        // c = int (8/3) sqrt(pi) ... squared: closed form pi/6.
        assert!((lc.c[0].value - PI / 6.0).abs() < 1e-8, "{}", lc.c[0].value);
        assert!((lc.kappa - 2.0 * lc.c[0].value).abs() < 1e-15);
        assert!((lc.psi_hat_l2 - 2.0 * PI).abs() < 1e-10);
        assert!((lc.limit_variance - 2.0 * PI * PI / 3.0).abs() < 1e-7);
        assert_eq!(lc.status, "certified");
    }

    #[test]
    fn c2_scales_quadratically_with_density() {
        let s = LimitSettings {
            rel_tol: 1e-10,
            ..LimitSettings::default()
        };
        let a = kappa_and_limits(&sd(), &mh(), &[0], 2, &s).unwrap().c[0].value;
        let b = kappa_and_limits(&sd().scaled(2.0), &mh(), &[0], 2, &s).unwrap().c[0].value;
        assert!((b / a - 4.0).abs() < 1e-8);
    }

    #[test]
    fn c2_quadrature_vs_mc() {
        let ctx = ChaosContext::new(&sd(), &mh(), 0, InnerSettings::default()).unwrap();
        let g = base_g1(&ctx);
        let q = c_constant(&g, &tight()).unwrap().value;
        let m = c_constant_mc(&g, 400_000, 11).unwrap();
        assert!(((m.value - q) / q).abs() < 0.01, "{} vs {q}", m.value);
        assert!((m.value - q).abs() < 4.0 * m.err);
    }

    #[test]
    fn depth_three_r1_constant_quadrature_vs_mc() {
        let ctx = ChaosContext::new(&sd(), &mh(), 0, InnerSettings::default()).unwrap();
        let nodes = limit_integrands(&ctx, &[0, 1]).unwrap();
        assert_eq!(nodes.iter().map(|n| n.arity).collect::<Vec<_>>(), vec![4, 2]);
        let s = LimitSettings {
            rel_tol: 1e-6,
            ..LimitSettings::default()
        };
        let q = c_constant(&nodes[1], &s).unwrap();
        let m = c_constant_mc(&nodes[1], 300_000, 12).unwrap();
        assert!(((m.value - q.value) / q.value).abs() < 0.05, "{} vs {}", m.value, q.value);
    }

    #[test]
    fn limit_cov_identities() {
        let lc = kappa_and_limits(&sd(), &mh(), &[0], 2, &tight()).unwrap();
        let w = mh();
        let c0 = limit_cov_g(&lc, &w, 0.0).unwrap();
        assert!((c0 - lc.limit_variance).abs() < 1e-9 * c0);
        for d in [0.3, 1.0, 2.5] {
            let a = limit_cov_g(&lc, &w, d).unwrap();
            let b = limit_cov_g(&lc, &w, -d).unwrap();
            assert!((a - b).abs() < 1e-12 * c0 && a.abs() <= c0);
            let e = lc.kappa * PI / 6.0 * (-d * d / 4.0).exp() * (d.powi(4) - 12.0 * d * d + 12.0);
            assert!((a - e).abs() < 1e-9 * c0, "{a} vs {e}");
            let sq = limit_cov_gsq(&lc, &w, d).unwrap();
            let sq0 = limit_cov_gsq(&lc, &w, 0.0).unwrap();
            assert!(sq >= 0.0);
            assert!((sq0 - 2.0 * lc.limit_variance.powi(2)).abs() < 1e-9 * sq0);
            assert!((sq / sq0 - (a / c0).powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_constant_recursion() {
        assert_eq!(bound_constant_from(1, 3.7, 2.0).unwrap(), 1.0);
        // Depth 2: max over l in {0, 1} of r! C(2,r)^2 a^r = max(1, 4a).
        let s = 1.6;
        for a in [0.1, 0.5, 2.0] {
            let c2 = bound_constant_from(2, a, s).unwrap();
            assert!((c2 - s * s * f64::max(1.0, 4.0 * a)).abs() < 1e-12);
        }
        let mut prev = 0.0;
        for a in [0.1, 0.2, 0.4, 0.8, 1.6] {
            let c = bound_constant_from(3, a, s).unwrap();
            assert!(c >= prev);
            prev = c;
        }
        assert!(bound_constant(3, &sd(), &mh(), 0).unwrap().is_finite());
    }

    #[test]
    fn bound_holds_at_probes_depth_two() {
        let ctx = ChaosContext::new(&sd(), &mh(), 0, InnerSettings::default()).unwrap();
        let levels = build_tree(&ctx, &[0, 2]).unwrap();
        let p = probe_bound(&levels, 1000, 3).unwrap();
        assert_eq!(p.len(), 3);
        for b in p {
            assert!(b.holds(), "{b:?}");
        }
    }

    #[test]
    fn isometry_of_second_level() {
        let q = M2Quadrature::new(&sd(), &mh(), 0, Tolerance::new(0.0, 1e-11)).unwrap();
        let ctx = q.context().clone();
        let f = lift_f(&base_g1(&ctx), 1).unwrap();
        let full = contract(&f, &f, 2).unwrap().eval(&[]).re;
        let s = q.sigma2(1).unwrap().value;
        assert!((2.0 * full - s).abs() < 1e-6 * s, "{} vs {s}", 2.0 * full);
        // The scalar entry of level 2 is 2 ||F||^2 = sigma^2.
        let levels = build_tree(&ctx, &[0, 1]).unwrap();
        let e = levels[1].g[2].eval(&[]);
        assert!(e.re > 0.0 && (e.re - s).abs() < 1e-6 * s);
    }

    #[test]
    fn sigma_direct_two_dimensional_oracle() {
        let q = M2Quadrature::new(&sd(), &mh(), 0, Tolerance::new(0.0, 1e-10)).unwrap();
        let ctx = q.context().clone();
        let w = mh();
        let r = ctx.radius;
        let direct = integrate_box(
            |x| ctx.f1(x[0]) * ctx.f1(x[1]) * w.psi_hat_sq(4.0 * (x[0] + x[1])),
            &[(-r, r), (-r, r)],
            &Tolerance::new(0.0, 1e-9),
        );
        let s = q.sigma2(2).unwrap().value;
        assert!((2.0 * direct.value - s).abs() < 1e-7 * s);
        let c = q.finite_cov(2, 0.0).unwrap().value;
        assert!((c - 4.0 * s).abs() < 1e-9 * c);
    }

    #[test]
    fn sigma_limit_and_quadrature_mode_rules() {
        let q = M2Quadrature::new(&sd(), &mh(), 0, Tolerance::new(0.0, 1e-12)).unwrap();
        let lim = 2.0 * PI * PI / 3.0;
        let gaps: Vec<f64> = [6, 8, 10]
            .iter()
            .map(|&j| ((q.sigma2_scaled(j).unwrap().value - lim) / lim).abs())
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2] && gaps[2] < 0.05, "{gaps:?}");
        let err = sigma_finite(&sd(), &mh(), &[0, 1, 2], &SigmaMode::Quadrature(Tolerance::default())).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn finite_cov_symmetry_and_limit() {
        let q = M2Quadrature::new(&sd(), &mh(), 0, Tolerance::new(0.0, 1e-11)).unwrap();
        let lc = kappa_and_limits(&sd(), &mh(), &[0], 2, &tight()).unwrap();
        let inf = limit_cov_g(&lc, &mh(), 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for j in [6, 8, 10] {
            let a = q.finite_cov(j, 1.0).unwrap().value;
            let b = q.finite_cov(j, -1.0).unwrap().value;
            assert!((a - b).abs() < 1e-12 * a.abs().max(1e-12));
            let gap = (a - inf).abs();
            assert!(gap < prev);
            prev = gap;
        }
    }

    #[test]
    fn contraction_norm_scaling_converges() {
        let q = M2Quadrature::new(&sd(), &mh(), 0, Tolerance::new(0.0, 1e-7)).unwrap();
        let lim = q.contraction_norm_sq_limit().unwrap();
        let v: Vec<f64> = [6, 8, 10].iter().map(|&j| q.contraction_norm_sq_scaled(j).unwrap().value).collect();
        assert!(((v[1] / v[0]) - 1.0).abs() < 0.1 && ((v[2] / v[1]) - 1.0).abs() < 0.1, "{v:?}");
        assert!(((v[2] - lim) / lim).abs() < 0.05, "{v:?} vs {lim}");
    }

    #[test]
    fn contraction_norm_matches_direct_evaluation() {
        // Small j keeps the direct 2-D quadrature of the contracted node easy.
        let q = M2Quadrature::new(&sd(), &mh(), 0, Tolerance::new(0.0, 1e-8)).unwrap();
        let ctx = q.context().clone();
        let f = lift_f(&base_g1(&ctx), 1).unwrap();
        let k = contract(&f, &f, 1).unwrap();
        let r = ctx.radius;
        let direct = integrate_box(|x| k.eval(x).norm_sqr(), &[(-r, r), (-r, r)], &Tolerance::new(0.0, 1e-6));
        let scaled = q.contraction_norm_sq_scaled(1).unwrap().value / 8.0;
        assert!(((direct.value - scaled) / scaled).abs() < 1e-4, "{} vs {scaled}", direct.value);
    }

    #[test]
    fn tv_bound_rate() {
        let q = M2Quadrature::new(&sd(), &mh(), 0, Tolerance::new(0.0, 1e-7)).unwrap();
        let js = [6, 7, 8, 9, 10, 11];
        let b: Vec<f64> = js.iter().map(|&j| q.tv_bound(j).unwrap().value).collect();
        assert!(b.iter().all(|&v| v > 0.0));
        let xs: Vec<f64> = js.iter().map(|&j| j as f64).collect();
        let ys: Vec<f64> = b.iter().map(|v| v.log2()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / 6.0, ys.iter().sum::<f64>() / 6.0);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((-0.7..=-0.3).contains(&slope), "{slope}");
    }

    #[test]
    fn integrability_probe_stabilizes() {
        let ctx = ChaosContext::new(
            &sd(),
            &mh(),
            0,
            InnerSettings {
                order: 32,
                ..InnerSettings::default()
            },
        )
        .unwrap();
        let levels = build_tree(&ctx, &[0, 1]).unwrap();
        let r = ctx.radius;
        for g in levels.iter().flat_map(|l| l.g.iter().chain(l.f.iter())).filter(|g| g.arity > 0) {
            let p = probe_integrability(g, &[r / 4.0, r / 2.0, r, 2.0 * r], 4096, 9).unwrap();
            assert!(p.rel_changes.last().unwrap() < &1e-3, "{p:?}");
        }
    }
}
