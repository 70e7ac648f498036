//! Spectral densities, wavelets and the standing-assumption checks.

use crate::error::{Error, Result};
use crate::quad::{integrate_breaks, integrate_semi_infinite, Tolerance};
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type ComplexFn = Arc<dyn Fn(f64) -> Complex64 + Send + Sync>;

#[derive(Clone)]
enum DensityKind {
    /// C_X(l) = exp(-l^2)
    GaussLrd,
    /// C_X(l) = (l^2 + c2)^(-beta2)
    Rational { c2: f64, beta2: f64 },
    Custom(RealFn),
}

/// Spectral density f(l) = C_X(l) |l|^(beta - 1) of a stationary Gaussian process.
#[derive(Clone)]
pub struct SpectralDensity {
    pub beta: f64,
    pub decay_eps: f64,
    pub label: String,
    scale: f64,
    kind: DensityKind,
}

impl fmt::Debug for SpectralDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralDensity")
            .field("label", &self.label)
            .field("beta", &self.beta)
            .field("decay_eps", &self.decay_eps)
            .field("scale", &self.scale)
            .finish()
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::AssumptionViolated(format!("beta must lie in (0,1), got {beta}")))
    }
}

impl SpectralDensity {
    pub fn gauss_lrd(beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(SpectralDensity {
            beta,
            decay_eps: 1.0,
            label: format!("gauss-lrd:beta={beta}"),
            scale: 1.0,
            kind: DensityKind::GaussLrd,
        })
    }

    pub fn rational(beta: f64, c2: f64, beta2: f64) -> Result<Self> {
        check_beta(beta)?;
        if beta2 <= 0.5 || c2 <= 0.0 {
            return Err(Error::AssumptionViolated(format!(
                "rational density needs beta2 > 1/2 and c2 > 0 (got beta2={beta2}, c2={c2})"
            )));
        }
        Ok(SpectralDensity {
            beta,
            decay_eps: 2.0 * beta2 - beta,
            label: format!("rational:beta={beta},c2={c2},beta2={beta2}"),
            scale: 1.0,
            kind: DensityKind::Rational { c2, beta2 },
        })
    }

    /// User-supplied C_X; the caller vouches for boundedness and decay.
    pub fn custom(
        beta: f64,
        decay_eps: f64,
        label: impl Into<String>,
        cx: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        check_beta(beta)?;
        if decay_eps <= 0.0 {
            return Err(Error::invalid("decay_eps must be positive"));
        }
        Ok(SpectralDensity {
            beta,
            decay_eps,
            label: label.into(),
            scale: 1.0,
            kind: DensityKind::Custom(Arc::new(cx)),
        })
    }

    /// The same density multiplied by a positive constant.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        s.scale *= factor;
        s.label = format!("{}*{}", self.label, factor);
        s
    }

    /// Parses a catalog id such as `gauss-lrd:beta=0.5`.
    pub fn from_id(id: &str) -> Result<Self> {
        let (name, params) = parse_id(id)?;
        let get = |k: &str, d: f64| params.iter().find(|(n, _)| n == k).map(|p| p.1).unwrap_or(d);
        let allowed: &[&str] = match name.as_str() {
            "gauss-lrd" => &["beta"],
            "rational" => &["beta", "c2", "beta2"],
            _ => {
                return Err(Error::UnknownCatalogId {
                    id: id.to_string(),
                    known: "gauss-lrd[:beta=], rational[:beta=,c2=,beta2=]".into(),
                })
            }
        };
        reject_unknown_params(id, &params, allowed)?;
        match name.as_str() {
            "gauss-lrd" => Self::gauss_lrd(get("beta", 0.5)),
            _ => Self::rational(get("beta", 0.5), get("c2", 1.0), get("beta2", 1.0)),
        }
    }

    /// The bounded factor C_X.
    pub fn cx(&self, lambda: f64) -> f64 {
        self.scale
            * match &self.kind {
                DensityKind::GaussLrd => (-lambda * lambda).exp(),
                DensityKind::Rational { c2, beta2 } => (lambda * lambda + c2).powf(-beta2),
                DensityKind::Custom(f) => f(lambda),
            }
    }

    /// f(l) without argument checks; `+inf` at the origin when C_X(0) > 0.
    pub fn f(&self, lambda: f64) -> f64 {
        let c = self.cx(lambda);
        if lambda == 0.0 {
            return if c > 0.0 { f64::INFINITY } else { 0.0 };
        }
        c * lambda.abs().powf(self.beta - 1.0)
    }

    /// Mass of f over `[a, b]` with `0 <= a < b`, exact in the power-law factor:
    /// substituting u = l^beta turns the singular integrand into C_X(u^(1/beta)) / beta.
    pub fn mass(&self, a: f64, b: f64, tol: &Tolerance) -> Result<f64> {
        if !(a >= 0.0 && b > a && b.is_finite()) {
            return Err(Error::invalid(format!("mass interval [{a}, {b}] must satisfy 0 <= a < b")));
        }
        let inv = 1.0 / self.beta;
        let r = integrate_breaks(|u: f64| self.cx(u.powf(inv)) * inv, &[a.powf(self.beta), b.powf(self.beta)], tol)?;
        Ok(r.value)
    }
}

fn parse_id(id: &str) -> Result<(String, Vec<(String, f64)>)> {
    let (name, rest) = match id.split_once(':') {
        Some((n, r)) => (n.trim(), r),
        None => (id.trim(), ""),
    };
    let mut params = Vec::new();
    for kv in rest.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("catalog parameter `{kv}` in `{id}` is not key=value")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("catalog parameter `{kv}` in `{id}` is not a number")))?;
        params.push((k.trim().to_string(), v));
    }
    Ok((name.to_string(), params))
}

fn reject_unknown_params(id: &str, params: &[(String, f64)], allowed: &[&str]) -> Result<()> {
    let bad: Vec<&str> = params
        .iter()
        .map(|(k, _)| k.as_str())
        .filter(|k| !allowed.contains(k))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "unknown parameter(s) {} in `{id}`; allowed: {}",
            bad.join(", "),
            allowed.join(", ")
        )))
    }
}

#[derive(Clone)]
enum WaveletKind {
    MexicanHat,
    Morlet { lambda0: f64 },
    PowerGauss { alpha: f64 },
    Custom(ComplexFn),
}

/// Mother wavelet in the frequency domain, psi_hat(l) = C(l) |l|^alpha near 0.
#[derive(Clone)]
pub struct WaveletSpec {
    pub alpha: f64,
    pub c_psi_hat_at_0: f64,
    pub label: String,
    kind: WaveletKind,
}

impl fmt::Debug for WaveletSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WaveletSpec")
            .field("label", &self.label)
            .field("alpha", &self.alpha)
            .field("c_psi_hat_at_0", &self.c_psi_hat_at_0)
            .finish()
    }
}

const MEXICAN_HAT_NORM: f64 = 2.174_061_545_222_377; // sqrt(8/3) * pi^(1/4)

impl WaveletSpec {
    /// sqrt(8/3) pi^(1/4) l^2 exp(-l^2/2); unit L2 norm in time, ||psi_hat||^2 = 2 pi.
    pub fn mexican_hat() -> Self {
        WaveletSpec {
            alpha: 2.0,
            c_psi_hat_at_0: MEXICAN_HAT_NORM,
            label: "mexican-hat".into(),
            kind: WaveletKind::MexicanHat,
        }
    }

    /// |l| exp(-(|l| - lambda0)^2 / 2), a real even band-pass.
    pub fn morlet(lambda0: f64) -> Result<Self> {
        if !(lambda0 >= 0.0 && lambda0.is_finite()) {
            return Err(Error::invalid("morlet lambda0 must be finite and nonnegative"));
        }
        Ok(WaveletSpec {
            alpha: 1.0,
            c_psi_hat_at_0: (-0.5 * lambda0 * lambda0).exp(),
            label: format!("morlet:lambda0={lambda0}"),
            kind: WaveletKind::Morlet { lambda0 },
        })
    }

    /// |l|^alpha exp(-l^2/2): the vanishing order at 0 is a free parameter.
    pub fn power_gauss(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("power-gauss alpha must be positive and finite"));
        }
        Ok(WaveletSpec {
            alpha,
            c_psi_hat_at_0: 1.0,
            label: format!("power-gauss:alpha={alpha}"),
            kind: WaveletKind::PowerGauss { alpha },
        })
    }

    pub fn custom(
        alpha: f64,
        c_psi_hat_at_0: f64,
        label: impl Into<String>,
        psi_hat: impl Fn(f64) -> Complex64 + Send + Sync + 'static,
    ) -> Self {
        WaveletSpec {
            alpha,
            c_psi_hat_at_0,
            label: label.into(),
            kind: WaveletKind::Custom(Arc::new(psi_hat)),
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        let (name, params) = parse_id(id)?;
        match name.as_str() {
            "mexican-hat" => {
                reject_unknown_params(id, &params, &[])?;
                Ok(Self::mexican_hat())
            }
            "morlet" => {
                reject_unknown_params(id, &params, &["lambda0"])?;
                let l0 = params.iter().find(|p| p.0 == "lambda0").map(|p| p.1).unwrap_or(5.0);
                Self::morlet(l0)
            }
            "power-gauss" => {
                reject_unknown_params(id, &params, &["alpha"])?;
                let a = params.iter().find(|p| p.0 == "alpha").map(|p| p.1).unwrap_or(1.0);
                Self::power_gauss(a)
            }
            _ => Err(Error::UnknownCatalogId {
                id: id.to_string(),
                known: "mexican-hat, morlet[:lambda0=], power-gauss[:alpha=]".into(),
            }),
        }
    }

    /// True when psi_hat is real and even, which the catalog guarantees.
    pub fn is_real_even(&self) -> bool {
        !matches!(self.kind, WaveletKind::Custom(_))
    }

    pub fn psi_hat(&self, lambda: f64) -> Complex64 {
        match &self.kind {
            WaveletKind::MexicanHat => {
                let l2 = lambda * lambda;
                Complex64::new(MEXICAN_HAT_NORM * l2 * (-0.5 * l2).exp(), 0.0)
            }
            WaveletKind::Morlet { lambda0 } => {
                let a = lambda.abs();
                Complex64::new(a * (-0.5 * (a - lambda0).powi(2)).exp(), 0.0)
            }
            WaveletKind::PowerGauss { alpha } => {
                Complex64::new(lambda.abs().powf(*alpha) * (-0.5 * lambda * lambda).exp(), 0.0)
            }
            WaveletKind::Custom(f) => f(lambda),
        }
    }

    /// |psi_hat(l)|^2, real-valued fast path.
    pub fn psi_hat_sq(&self, lambda: f64) -> f64 {
        match &self.kind {
            WaveletKind::Custom(f) => f(lambda).norm_sqr(),
            _ => self.psi_hat(lambda).re.powi(2),
        }
    }

    /// Largest |l| on a scan at which |psi_hat| still exceeds `rel_tol` times its sup.
    pub fn support_radius(&self, rel_tol: f64) -> f64 {
        let sup = self.sup_norm();
        let thr = rel_tol * sup;
        effective_radius(|l| self.psi_hat(l).norm().max(self.psi_hat(-l).norm()), thr, 4096.0)
    }

    /// sup |psi_hat|.
    pub fn sup_norm(&self) -> f64 {
        match &self.kind {
            WaveletKind::MexicanHat => MEXICAN_HAT_NORM * 2.0 / std::f64::consts::E,
            _ => grid_sup(|l| self.psi_hat(l).norm(), 256.0, 1 << 16).0,
        }
    }

    /// ||psi_hat||_2^2 by adaptive quadrature.
    pub fn l2_norm_sq(&self, tol: &Tolerance) -> Result<f64> {
        let r = self.support_radius(1e-12) * 1.5 + 1.0;
        let breaks = symmetric_breaks(r, 16);
        Ok(integrate_breaks(|l| self.psi_hat_sq(l), &breaks, tol)?.value)
    }

    /// Fourier transform of |psi_hat|^2: int exp(i d z) |psi_hat(z)|^2 dz (real part;
    /// the imaginary part is returned separately for diagnostics).
    pub fn spectral_autocov(&self, delta: f64, tol: &Tolerance) -> Result<(f64, f64)> {
        let r = self.support_radius(1e-12) * 1.5 + 1.0;
        let panels = 16 + (r * delta.abs() / PI).ceil() as usize;
        let breaks = symmetric_breaks(r, panels);
        // Both parts may vanish; measure the error against the total mass instead.
        let mass = self.l2_norm_sq(tol)?;
        let t = Tolerance {
            abs: tol.abs.max(tol.rel * mass),
            ..*tol
        };
        let re = integrate_breaks(|z| (delta * z).cos() * self.psi_hat_sq(z), &breaks, &t)?;
        let im = integrate_breaks(|z| (delta * z).sin() * self.psi_hat_sq(z), &breaks, &t)?;
        Ok((re.value, im.value))
    }
}

pub(crate) fn symmetric_breaks(r: f64, panels: usize) -> Vec<f64> {
    let panels = panels.max(2);
    (0..=panels).map(|i| -r + 2.0 * r * i as f64 / panels as f64).collect()
}

/// Scans outward from the origin for the last point where `g` exceeds `thr`.
pub(crate) fn effective_radius(g: impl Fn(f64) -> f64, thr: f64, max: f64) -> f64 {
    let step = 1e-3_f64.max(max / 4_000_000.0);
    let mut last = 0.0;
    let mut l = step;
    let mut since = 0.0;
    while l <= max {
        if g(l) > thr {
            last = l;
            since = 0.0;
        } else {
            since += step;
            // Both catalogs are unimodal in |l|; a long quiet stretch means we are done.
            if last > 0.0 && since > 4.0 * last.max(1.0) {
                break;
            }
        }
        l += step;
    }
    last + step
}

pub(crate) fn grid_sup(g: impl Fn(f64) -> f64, half_width: f64, points: usize) -> (f64, f64) {
    let mut best = (0.0, 0.0);
    for i in 0..=points {
        let l = -half_width + 2.0 * half_width * i as f64 / points as f64;
        let v = g(l);
        if v > best.0 {
            best = (v, l);
        }
    }
    best
}

/// f evaluated with the non-finite argument check.
pub fn eval_density(sd: &SpectralDensity, lambda: f64) -> Result<f64> {
    if !lambda.is_finite() {
        return Err(Error::invalid(format!("density argument must be finite, got {lambda}")));
    }
    Ok(sd.f(lambda))
}

/// psi_hat(2^j l).
pub fn eval_psi_hat_scaled(w: &WaveletSpec, j: i32, lambda: f64) -> Complex64 {
    w.psi_hat(scale_factor(j) * lambda)
}

pub(crate) fn scale_factor(j: i32) -> f64 {
    (j as f64).exp2()
}

/// f(l) |psi_hat_j(l)|^2, the spectral density of the filtered process.
pub fn filtered_density(sd: &SpectralDensity, w: &WaveletSpec, j: i32, lambda: f64) -> f64 {
    if lambda == 0.0 {
        let p0 = w.psi_hat(0.0).norm_sqr();
        let c0 = sd.cx(0.0);
        if p0 != 0.0 || c0 == 0.0 {
            return if c0 == 0.0 { 0.0 } else { f64::INFINITY };
        }
        let e = 2.0 * w.alpha + sd.beta - 1.0;
        return if e > 0.0 {
            0.0
        } else if e == 0.0 {
            c0 * w.c_psi_hat_at_0.powi(2) * scale_factor(j).powf(2.0 * w.alpha)
        } else {
            f64::INFINITY
        };
    }
    sd.f(lambda) * w.psi_hat_sq(scale_factor(j) * lambda)
}

/// Amplitude a(l) = psi_hat_j(l) sqrt(f(l)), the square root of the filtered density
/// with the wavelet's phase.
pub fn amplitude(sd: &SpectralDensity, w: &WaveletSpec, j: i32, lambda: f64) -> Complex64 {
    if lambda == 0.0 {
        return Complex64::new(filtered_density(sd, w, j, 0.0).sqrt(), 0.0);
    }
    eval_psi_hat_scaled(w, j, lambda) * sd.f(lambda).sqrt()
}

/// ||f_{X*psi_j}||_1 by adaptive quadrature over the positive half-line (even integrand).
pub fn filtered_l1(sd: &SpectralDensity, w: &WaveletSpec, j: i32, tol: &Tolerance) -> Result<f64> {
    let s = scale_factor(j);
    let r = w.support_radius(1e-12) * 1.5 / s;
    let mut breaks: Vec<f64> = (0..=32).map(|i| r * i as f64 / 32.0).collect();
    // Refine near the origin where |l|^(beta-1) bends sharply.
    breaks.splice(1..1, [r * 1e-6, r * 1e-4, r * 1e-2]);
    let near = integrate_breaks(|l| filtered_density(sd, w, j, l), &breaks, tol)?;
    let far = integrate_semi_infinite(|l| filtered_density(sd, w, j, l), r, tol)?;
    Ok(2.0 * (near.value + far.value))
}

/// One check in an assumption report; `witness` is the lambda that failed.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub witness: Option<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AssumptionReport {
    pub density: String,
    pub wavelet: String,
    pub checks: Vec<CheckOutcome>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// Probe grid for the assumption checks: `points` values on `[-half_width, half_width]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSettings {
    pub half_width: f64,
    pub points: usize,
    pub j1: i32,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            half_width: 1024.0,
            points: (1 << 20) + 1,
            j1: 0,
        }
    }
}

fn outcome(name: &str, passed: bool, detail: String, witness: Option<f64>) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        passed,
        detail,
        witness: if passed { None } else { witness },
    }
}

/// Numerical probes of the standing assumptions on (f_X, psi_hat).
pub fn check_assumptions(sd: &SpectralDensity, w: &WaveletSpec) -> AssumptionReport {
    check_assumptions_with(sd, w, &ProbeSettings::default())
}

pub fn check_assumptions_with(sd: &SpectralDensity, w: &WaveletSpec, probe: &ProbeSettings) -> AssumptionReport {
    let mut checks = Vec::new();
    let exponent = 2.0 * w.alpha + sd.beta;
    checks.push(outcome(
        "hypothesis_2alpha_plus_beta_ge_1",
        exponent >= 1.0,
        format!("2*alpha + beta = {exponent} (needs >= 1)"),
        Some(0.0),
    ));

    let sup = w.sup_norm();
    let p0 = w.psi_hat(0.0).norm();
    checks.push(outcome(
        "psi_hat_zero_mean",
        p0 <= 1e-12 * sup.max(1.0),
        format!("|psi_hat(0)| = {p0:e}"),
        Some(0.0),
    ));

    let n = probe.points.max(3);
    let grid = |i: usize| -probe.half_width + 2.0 * probe.half_width * i as f64 / (n - 1) as f64;
    let mut herm = (0.0f64, None);
    let mut even = (0.0f64, None);
    let mut neg = None;
    let mut finite_density = None;
    for i in 0..n / 2 {
        let l = grid(i);
        let d = (w.psi_hat(-l) - w.psi_hat(l).conj()).norm();
        if d > herm.0 {
            herm = (d, Some(l));
        }
        let (fa, fb) = (sd.f(l), sd.f(-l));
        if fa.is_finite() && fb.is_finite() {
            let rel = (fa - fb).abs() / fa.abs().max(1e-300);
            if rel > even.0 {
                even = (rel, Some(l));
            }
        }
        if neg.is_none() && (fa < 0.0 || sd.cx(l) < 0.0) {
            neg = Some(l);
        }
        if finite_density.is_none() && l != 0.0 && !fa.is_finite() {
            finite_density = Some(l);
        }
    }
    checks.push(outcome(
        "psi_hat_hermitian",
        herm.0 <= 1e-12 * sup.max(1.0),
        format!("max |psi_hat(-l) - conj psi_hat(l)| = {:e}", herm.0),
        herm.1,
    ));
    checks.push(outcome(
        "density_even",
        even.0 <= 1e-12,
        format!("max relative asymmetry {:e}", even.0),
        even.1,
    ));
    checks.push(outcome(
        "density_nonnegative_finite",
        neg.is_none() && finite_density.is_none(),
        "C_X >= 0 and f finite away from 0".into(),
        neg.or(finite_density),
    ));

    // psi_hat behaves like C(0)|l|^alpha near the origin.
    let mut ratio_err = 0.0f64;
    let mut ratio_witness = None;
    for k in 20..=40 {
        let l = (-(k as f64)).exp2();
        let ratio = w.psi_hat(l).norm() / l.powf(w.alpha);
        let rel = (ratio - w.c_psi_hat_at_0).abs() / w.c_psi_hat_at_0.abs().max(1e-300);
        if rel > ratio_err || !rel.is_finite() {
            ratio_err = if rel.is_finite() { rel } else { f64::INFINITY };
            ratio_witness = Some(l);
        }
    }
    checks.push(outcome(
        "psi_hat_power_law_at_0",
        ratio_err < 1e-4 && w.c_psi_hat_at_0 > 0.0,
        format!("max relative deviation of |psi_hat(l)|/|l|^alpha from C(0) on l in [2^-40, 2^-20]: {ratio_err:e}"),
        ratio_witness,
    ));

    // Integrability of f, |psi_hat| and |psi_hat|^2 on widening domains.
    let tol = Tolerance::new(1e-14, 1e-10);
    let widening = |g: &dyn Fn(f64) -> f64, singular: bool| -> (bool, f64) {
        let mut prev: Option<f64> = None;
        let mut last_rel = f64::INFINITY;
        let mut lim = probe.half_width / 64.0;
        while lim <= probe.half_width {
            let mut br: Vec<f64> = (0..=64).map(|i| lim * i as f64 / 64.0).collect();
            if singular {
                br.splice(1..1, [lim * 1e-9, lim * 1e-6, lim * 1e-3]);
            }
            let v = integrate_breaks(|l: f64| g(l), &br, &tol).map(|r| r.value).unwrap_or(f64::NAN);
            if let Some(p) = prev {
                last_rel = ((v - p) / v).abs();
            }
            prev = Some(v);
            lim *= 2.0;
        }
        (last_rel < 1e-6, last_rel)
    };
    let inv = 1.0 / sd.beta;
    // Through u = l^beta the singular factor disappears.
    let (ok_f, rel_f) = widening(&|u: f64| sd.cx(u.powf(inv)) * inv, false);
    checks.push(outcome(
        "density_integrable",
        ok_f,
        format!("relative change of int f on last domain doubling: {rel_f:e}"),
        Some(probe.half_width),
    ));
    let (ok_p, rel_p) = widening(&|l: f64| w.psi_hat(l).norm() + w.psi_hat(-l).norm(), false);
    checks.push(outcome(
        "psi_hat_l1",
        ok_p && sup.is_finite(),
        format!("relative change of int |psi_hat| on last doubling: {rel_p:e}; sup = {sup}"),
        Some(probe.half_width),
    ));

    // Filtered density: L1 and L_inf.
    let j1 = probe.j1;
    let (ok_l1, rel_l1) = widening(&|l: f64| filtered_density(sd, w, j1, l) + filtered_density(sd, w, j1, -l), true);
    checks.push(outcome(
        "filtered_density_l1",
        ok_l1,
        format!("relative change of ||f_(X*psi_j1)||_1 on last doubling: {rel_l1:e}"),
        Some(probe.half_width),
    ));
    let mut fsup = 0.0f64;
    let mut fsup_at = 0.0;
    for i in 0..n {
        let l = grid(i);
        let v = filtered_density(sd, w, j1, l);
        if v > fsup || !v.is_finite() {
            fsup = v;
            fsup_at = l;
            if !v.is_finite() {
                break;
            }
        }
    }
    // Near-origin growth: the grid alone cannot see a blow-up at 0.
    let near: Vec<(f64, f64)> = (10..=60)
        .map(|k| {
            let l = (-(k as f64)).exp2();
            (l, filtered_density(sd, w, j1, l))
        })
        .collect();
    let near_max = near.iter().map(|p| p.1).fold(0.0, f64::max);
    let tail = near[near.len() - 1];
    let growing = tail.1 > 2.0 * near[near.len() / 2].1 && tail.1 > 1e-300;
    let bounded = fsup.is_finite() && near_max.is_finite() && !growing;
    checks.push(outcome(
        "filtered_density_bounded",
        bounded,
        format!("grid sup {fsup:e} at {fsup_at}; value at 2^-60: {:e}", tail.1),
        Some(if fsup.is_finite() { tail.0 } else { fsup_at }),
    ));

    AssumptionReport {
        density: sd.label.clone(),
        wavelet: w.label.clone(),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ProbeSettings {
        ProbeSettings {
            half_width: 1024.0,
            points: 20_001,
            j1: 0,
        }
    }

    #[test]
    fn density_closed_form_and_symmetry() {
        let sd = SpectralDensity::gauss_lrd(0.5).unwrap();
        assert!((eval_density(&sd, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!((eval_density(&sd, 1.0).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-15);
        for l in [0.1, 0.7, 3.3] {
            assert_eq!(sd.f(l), sd.f(-l));
        }
        assert_eq!(eval_density(&sd, 0.0).unwrap(), f64::INFINITY);
        assert!(eval_density(&sd, f64::NAN).is_err());
    }

    #[test]
    fn mexican_hat_values() {
        let w = WaveletSpec::mexican_hat();
        let expect = (8.0f64 / 3.0).sqrt() * PI.powf(0.25) * (-0.5f64).exp();
        assert!((eval_psi_hat_scaled(&w, 2, 0.25).re - expect).abs() < 1e-14);
        assert_eq!(eval_psi_hat_scaled(&w, 5, 0.0).norm(), 0.0);
        assert_eq!(eval_psi_hat_scaled(&w, 0, 1.3), w.psi_hat(1.3));
        let tol = Tolerance::new(1e-14, 1e-12);
        assert!((w.l2_norm_sq(&tol).unwrap() - 2.0 * PI).abs() < 1e-9);
        let grid = grid_sup(|l| w.psi_hat(l).norm(), 10.0, 200_000).0;
        assert!((w.sup_norm() - grid).abs() < 1e-8);
    }

    #[test]
    fn spectral_autocov_closed_form() {
        // int e^{i d z} |psi_hat|^2 = (pi/6) e^{-d^2/4} (d^4 - 12 d^2 + 12)
        let w = WaveletSpec::mexican_hat();
        let tol = Tolerance::new(1e-14, 1e-12);
        for d in [0.0, 0.5, 1.0, 2.5] {
            let (re, im) = w.spectral_autocov(d, &tol).unwrap();
            let exact = PI / 6.0 * (-d * d / 4.0f64).exp() * (d.powi(4) - 12.0 * d * d + 12.0);
            assert!((re - exact).abs() < 1e-10, "d={d}: {re} vs {exact}");
            assert!(im.abs() < 1e-12);
        }
    }

    #[test]
    fn filtered_density_identities() {
        let sd = SpectralDensity::gauss_lrd(0.5).unwrap();
        let w = WaveletSpec::mexican_hat();
        assert_eq!(filtered_density(&sd, &w, 0, 0.0), 0.0);
        for l in [0.01, 0.5, 2.0] {
            let a = filtered_density(&sd, &w, 1, l);
            assert_eq!(a, filtered_density(&sd, &w, 1, -l));
            let b = eval_density(&sd, l).unwrap() * eval_psi_hat_scaled(&w, 1, l).norm_sqr();
            assert!((a - b).abs() <= 1e-15 * b.max(1e-300));
            assert!((amplitude(&sd, &w, 1, l).norm_sqr() - a).abs() < 1e-14);
        }
    }

    #[test]
    fn filtered_l1_closed_form() {
        // (8/3) sqrt(pi) int |u|^{7/2} e^{-2u^2} du = (8/3) sqrt(pi) Gamma(9/4) / 2^{9/4}
        let sd = SpectralDensity::gauss_lrd(0.5).unwrap();
        let w = WaveletSpec::mexican_hat();
        let tol = Tolerance::new(1e-14, 1e-11);
        let gamma_9_4 = 1.133_003_096_319_346_3;
        let exact = 8.0 / 3.0 * PI.sqrt() * gamma_9_4 / 2f64.powf(2.25);
        let v = filtered_l1(&sd, &w, 0, &tol).unwrap();
        assert!((v - exact).abs() < 1e-9 * exact, "{v} vs {exact}");
    }

    #[test]
    fn mass_matches_power_law_closed_form() {
        let sd = SpectralDensity::gauss_lrd(0.5).unwrap();
        let tol = Tolerance::new(1e-15, 1e-12);
        // With C_X = e^{-l^2}: int_0^inf = Gamma(1/4)/2
        let m = sd.mass(0.0, 12.0, &tol).unwrap();
        assert!((2.0 * m - 3.625_609_908_221_908).abs() < 1e-9);
        // tiny cell near zero: int_0^h l^{-1/2} ~ 2 sqrt(h)
        let h = 1e-8;
        assert!((sd.mass(0.0, h, &tol).unwrap() - 2.0 * h.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn catalog_parsing() {
        assert_eq!(SpectralDensity::from_id("gauss-lrd:beta=0.3").unwrap().beta, 0.3);
        let r = SpectralDensity::from_id("rational:beta=0.5,c2=2,beta2=0.75").unwrap();
        assert!((r.cx(0.0) - 2f64.powf(-0.75)).abs() < 1e-15);
        assert!(SpectralDensity::from_id("rational:beta2=0.4").is_err());
        assert!(SpectralDensity::from_id("gauss-lrd:gamma=1").is_err());
        assert!(matches!(SpectralDensity::from_id("nope"), Err(Error::UnknownCatalogId { .. })));
        assert_eq!(WaveletSpec::from_id("morlet:lambda0=4").unwrap().alpha, 1.0);
        assert!(WaveletSpec::from_id("haar").is_err());
    }

    #[test]
    fn default_catalog_passes_all_checks() {
        let sd = SpectralDensity::gauss_lrd(0.5).unwrap();
        for w in [WaveletSpec::mexican_hat(), WaveletSpec::morlet(5.0).unwrap()] {
            let rep = check_assumptions_with(&sd, &w, &quick());
            assert!(rep.all_passed(), "{:#?}", rep.failures());
        }
        let rat = SpectralDensity::from_id("rational:beta=0.5,c2=1,beta2=1").unwrap();
        let rep = check_assumptions_with(&rat, &WaveletSpec::mexican_hat(), &quick());
        assert!(rep.all_passed(), "{:#?}", rep.failures());
    }

    #[test]
    fn broken_wavelet_fails_mean_zero() {
        let sd = SpectralDensity::gauss_lrd(0.5).unwrap();
        let w = WaveletSpec::custom(2.0, 1.0, "bump", |l: f64| Complex64::new((-l * l).exp(), 0.0));
        let rep = check_assumptions_with(&sd, &w, &quick());
        let c = rep.checks.iter().find(|c| c.name == "psi_hat_zero_mean").unwrap();
        assert!(!c.passed);
        assert_eq!(c.witness, Some(0.0));
    }

    #[test]
    fn weak_vanishing_moment_fails_hypothesis() {
        let sd = SpectralDensity::gauss_lrd(0.3).unwrap();
        let w = WaveletSpec::custom(0.2, 1.0, "weak", |l: f64| Complex64::new(l.abs().powf(0.2) * (-l * l).exp(), 0.0));
        let rep = check_assumptions_with(&sd, &w, &quick());
        assert!(!rep.checks[0].passed);
        let b = rep.checks.iter().find(|c| c.name == "filtered_density_bounded").unwrap();
        assert!(!b.passed, "{b:?}");
    }

    #[test]
    fn power_gauss_catalog_entry() {
        let sd = SpectralDensity::gauss_lrd(0.5).unwrap();
        let ok = WaveletSpec::from_id("power-gauss:alpha=1.5").unwrap();
        assert!((ok.psi_hat(2.0).re - 2f64.powf(1.5) * (-2.0f64).exp()).abs() < 1e-15);
        assert!(check_assumptions_with(&sd, &ok, &quick()).all_passed());
        let weak = WaveletSpec::from_id("power-gauss:alpha=0.2").unwrap();
        let rep = check_assumptions_with(&sd, &weak, &quick());
        assert_eq!(rep.failures()[0].name, "hypothesis_2alpha_plus_beta_ge_1");
        assert!(WaveletSpec::from_id("power-gauss:alpha=0").is_err());
    }
}
