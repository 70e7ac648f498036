//! Spectral synthesis of stationary Gaussian paths and autocovariance oracles.

use crate::error::{Error, Result};
use crate::models::SpectralDensity;
use crate::quad::{integrate_breaks, integrate_oscillatory_tail, integrate_semi_infinite, Tolerance};
use crate::rng::{replica_seed, rng_from_seed};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

/// Uniform sampling grid; the synthesized process has period `n * dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub dt: f64,
}

impl GridSpec {
    pub fn new(n: usize, dt: f64) -> Result<Self> {
        let g = GridSpec { n, dt };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || !self.n.is_power_of_two() {
            return Err(Error::invalid(format!("grid size n={} must be a power of two >= 2", self.n)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("grid spacing dt={} must be positive", self.dt)));
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.n as f64 * self.dt
    }

    pub fn nyquist(&self) -> f64 {
        PI / self.dt
    }

    /// Spacing of the angular frequency grid, 2 pi / (n dt).
    pub fn dlambda(&self) -> f64 {
        2.0 * PI / self.span()
    }

    /// Angular frequency of DFT bin `k` (negative for the upper half).
    pub fn freq(&self, k: usize) -> f64 {
        let n = self.n as i64;
        let k = k as i64;
        let s = if k <= n / 2 { k } else { k - n };
        s as f64 * self.dlambda()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMeta {
    pub density: String,
    pub method: String,
}

/// A sampled real path with its grid and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    pub values: Vec<f64>,
    pub dt: f64,
    pub t0: f64,
    pub seed: u64,
    pub meta: PathMeta,
}

impl SampledPath {
    pub fn new(values: Vec<f64>, dt: f64, t0: f64, seed: u64, meta: PathMeta) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("a path needs at least two samples"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("path dt must be positive"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("path value at index {i} is not finite")));
        }
        Ok(SampledPath { values, dt, t0, seed, meta })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec { n: self.values.len(), dt: self.dt }
    }

    pub fn with_values(&self, values: Vec<f64>, method: &str) -> SampledPath {
        SampledPath {
            values,
            dt: self.dt,
            t0: self.t0,
            seed: self.seed,
            meta: PathMeta {
                density: self.meta.density.clone(),
                method: method.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    /// Largest tolerated fraction of spectral mass above the Nyquist frequency.
    pub max_lost_mass: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { max_lost_mass: 1e-3 }
    }
}

/// Frequency-domain synthesizer for one (density, grid) pair. Cell masses are
/// computed once at construction and shared by every replica.
#[derive(Clone)]
pub struct Synthesizer {
    density: SpectralDensity,
    grid: GridSpec,
    sqrt_mass: Arc<Vec<f64>>,
    total_mass: f64,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Synthesizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Synthesizer")
            .field("density", &self.density.label)
            .field("grid", &self.grid)
            .finish()
    }
}

impl Synthesizer {
    pub fn new(density: &SpectralDensity, grid: GridSpec) -> Result<Self> {
        Self::with_options(density, grid, SynthOptions::default())
    }

    pub fn with_options(density: &SpectralDensity, grid: GridSpec, opts: SynthOptions) -> Result<Self> {
        grid.validate()?;
        let tol = Tolerance::new(1e-300, 1e-10);
        let half = grid.n / 2;
        let dl = grid.dlambda();
        let nyq = grid.nyquist();
        let total = 2.0 * total_half_mass(density, &tol)?;
        let lost = 2.0 * integrate_semi_infinite(|l| density.f(l), nyq, &tol)?.value;
        if lost > opts.max_lost_mass * total {
            return Err(Error::GridTooCoarse(format!(
                "Nyquist frequency {nyq:.4} (dt={}) leaves {:.3e} of the spectral mass unresolved (limit {:.1e})",
                grid.dt,
                lost / total,
                opts.max_lost_mass
            )));
        }
        let masses: Vec<f64> = (0..=half)
            .into_par_iter()
            .map(|k| {
                let c = k as f64 * dl;
                let (a, b) = if k == 0 {
                    (0.0, 0.5 * dl)
                } else if k == half {
                    (c - 0.5 * dl, c)
                } else {
                    (c - 0.5 * dl, c + 0.5 * dl)
                };
                // Cells at 0 and Nyquist merge their mirror halves.
                let m = density.mass(a, b, &tol)?;
                Ok(if k == 0 || k == half { 2.0 * m } else { m })
            })
            .collect::<Result<Vec<f64>>>()?;
        let sqrt_mass = masses.iter().map(|m| m.sqrt()).collect();
        let ifft = FftPlanner::new().plan_fft_inverse(grid.n);
        Ok(Synthesizer {
            density: density.clone(),
            grid,
            sqrt_mass: Arc::new(sqrt_mass),
            total_mass: total,
            ifft,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn density(&self) -> &SpectralDensity {
        &self.density
    }

    /// Per-cell masses for bins 0..=n/2 (positive-frequency cell plus its mirror).
    pub fn cell_masses(&self) -> Vec<f64> {
        let half = self.grid.n / 2;
        self.sqrt_mass
            .iter()
            .enumerate()
            .map(|(k, s)| if k == 0 || k == half { s * s } else { 2.0 * s * s })
            .collect()
    }

    /// int f over the real line by quadrature.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Hermitian DFT coefficients of one replica: the inverse (unnormalized) FFT of
    /// this array is the sampled path.
    pub fn spectrum(&self, seed: u64) -> Vec<Complex64> {
        let n = self.grid.n;
        let half = n / 2;
        let mut rng = rng_from_seed(seed);
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for k in 0..=half {
            let c = if k == 0 || k == half {
                let x: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(self.sqrt_mass[k] * x, 0.0)
            } else {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(a, b) * (self.sqrt_mass[k] * s)
            };
            out[k] = c;
            if k != 0 && k != half {
                out[n - k] = c.conj();
            }
        }
        out
    }

    pub fn synthesize(&self, seed: u64) -> Result<SampledPath> {
        let mut buf = self.spectrum(seed);
        self.ifft.process(&mut buf);
        let values = real_part_checked(&buf)?;
        SampledPath::new(
            values,
            self.grid.dt,
            0.0,
            seed,
            PathMeta {
                density: self.density.label.clone(),
                method: "spectral-cell-mass".into(),
            },
        )
    }

    pub fn synthesize_replica(&self, master: u64, k: u64) -> Result<SampledPath> {
        self.synthesize(replica_seed(master, "synth", k))
    }

    /// `replicas` paths in replica order; identical for any worker count.
    pub fn ensemble(&self, master: u64, replicas: usize) -> Result<Vec<SampledPath>> {
        (0..replicas as u64)
            .into_par_iter()
            .map(|k| self.synthesize_replica(master, k))
            .collect()
    }
}

fn total_half_mass(sd: &SpectralDensity, tol: &Tolerance) -> Result<f64> {
    let head = sd.mass(0.0, 1.0, tol)?;
    let tail = integrate_semi_infinite(|l| sd.f(l), 1.0, tol)?.value;
    Ok(head + tail)
}

/// Real part of an inverse transform, rejecting a non-negligible imaginary residue.
pub(crate) fn real_part_checked(buf: &[Complex64]) -> Result<Vec<f64>> {
    let (mut re2, mut im2) = (0.0, 0.0);
    for c in buf {
        re2 += c.re * c.re;
        im2 += c.im * c.im;
    }
    if re2 > 0.0 && im2 > 1e-20 * re2 {
        return Err(Error::NonRealOutput((im2 / re2).sqrt()));
    }
    Ok(buf.iter().map(|c| c.re).collect())
}

/// Free-function form of [`Synthesizer::synthesize`].
pub fn synthesize(sd: &SpectralDensity, grid: GridSpec, seed: u64) -> Result<SampledPath> {
    Synthesizer::new(sd, grid)?.synthesize(seed)
}

/// R_X(t) = 2 int_0^inf f(l) cos(l t) dl by adaptive quadrature. The singular
/// factor is removed on [0, A] with u = l^beta; the tail uses a semi-infinite map.
pub fn target_autocov(sd: &SpectralDensity, lags: &[f64], tol: &Tolerance) -> Result<Vec<f64>> {
    lags.iter()
        .map(|&t| {
            if !t.is_finite() {
                return Err(Error::invalid(format!("lag {t} is not finite")));
            }
            let t = t.abs();
            let a = 64.0f64.max(if t > 0.0 { 8.0 * PI / t } else { 0.0 });
            let inv = 1.0 / sd.beta;
            let ua = a.powf(sd.beta);
            let osc = ((a * t) / PI).ceil() as usize;
            let panels = (32 + 2 * osc).min(20_000);
            // Panels uniform in l, mapped to u.
            let breaks: Vec<f64> = (0..=panels).map(|i| ua * (i as f64 / panels as f64).powf(sd.beta)).collect();
            let head = integrate_breaks(
                |u: f64| {
                    let l = u.powf(inv);
                    sd.cx(l) * (l * t).cos() * inv
                },
                &breaks,
                tol,
            )?;
            let tail = if t == 0.0 {
                integrate_semi_infinite(|l| sd.f(l), a, tol)?
            } else {
                // C_X is eventually monotone for every catalog density.
                integrate_oscillatory_tail(|l| sd.f(l) * (l * t).cos(), |l| sd.f(l), t, a, tol)?
            };
            Ok(2.0 * (head.value + tail.value))
        })
        .collect()
}

/// Ensemble- and time-averaged autocovariance with standard errors over paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AutocovEstimate {
    pub lags: Vec<usize>,
    pub values: Vec<f64>,
    pub se: Vec<f64>,
}

/// Per-path autocovariance on the guarded window, by zero-padded FFT.
struct AutocovKernel {
    g: usize,
    len: usize,
    m: usize,
    max_lag: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl AutocovKernel {
    fn new(n: usize, max_lag: usize, guard: f64) -> Result<Self> {
        if max_lag >= n {
            return Err(Error::invalid(format!("max_lag {max_lag} must be below n={n}")));
        }
        if !(0.0..0.5).contains(&guard) {
            return Err(Error::invalid("guard fraction must lie in [0, 0.5)"));
        }
        let g = (guard * n as f64).floor() as usize;
        let len = n - 2 * g;
        if max_lag >= len {
            return Err(Error::invalid(format!("max_lag {max_lag} exceeds the guarded window of {len} samples")));
        }
        let m = (2 * len).next_power_of_two();
        let mut planner = FftPlanner::new();
        Ok(AutocovKernel {
            g,
            len,
            m,
            max_lag,
            fwd: planner.plan_fft_forward(m),
            inv: planner.plan_fft_inverse(m),
        })
    }

    fn apply(&self, values: &[f64]) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.m];
        for (b, v) in buf.iter_mut().zip(&values[self.g..self.g + self.len]) {
            b.re = *v;
        }
        self.fwd.process(&mut buf);
        for c in buf.iter_mut() {
            *c = Complex64::new(c.norm_sqr(), 0.0);
        }
        self.inv.process(&mut buf);
        (0..=self.max_lag)
            .map(|h| buf[h].re / (self.m as f64 * (self.len - h) as f64))
            .collect()
    }
}

fn aggregate_autocov(per_path: &[Vec<f64>], max_lag: usize) -> AutocovEstimate {
    let p = per_path.len() as f64;
    let mut values = vec![0.0; max_lag + 1];
    let mut se = vec![0.0; max_lag + 1];
    for h in 0..=max_lag {
        let mean = per_path.iter().map(|v| v[h]).sum::<f64>() / p;
        let var = if per_path.len() > 1 {
            per_path.iter().map(|v| (v[h] - mean).powi(2)).sum::<f64>() / (p - 1.0)
        } else {
            0.0
        };
        values[h] = mean;
        se[h] = (var / p).sqrt();
    }
    AutocovEstimate {
        lags: (0..=max_lag).collect(),
        values,
        se,
    }
}

/// Autocovariance at lags `0..=max_lag` (in samples), using the known zero mean
/// and discarding `guard` of the span at each end of every path.
pub fn empirical_autocov(ensemble: &[SampledPath], max_lag: usize, guard: f64) -> Result<AutocovEstimate> {
    let first = ensemble.first().ok_or_else(|| Error::invalid("empty ensemble"))?;
    let (n, dt) = (first.len(), first.dt);
    if ensemble.iter().any(|p| p.len() != n || p.dt != dt) {
        return Err(Error::invalid("ensemble paths do not share a grid"));
    }
    let k = AutocovKernel::new(n, max_lag, guard)?;
    let per_path: Vec<Vec<f64>> = ensemble.par_iter().map(|p| k.apply(&p.values)).collect();
    Ok(aggregate_autocov(&per_path, max_lag))
}

impl Synthesizer {
    /// Same estimate as [`empirical_autocov`] over replicas `0..replicas` of
    /// `master`, without holding the ensemble in memory.
    pub fn ensemble_autocov(&self, master: u64, replicas: usize, max_lag: usize, guard: f64) -> Result<AutocovEstimate> {
        if replicas == 0 {
            return Err(Error::invalid("empty ensemble"));
        }
        let k = AutocovKernel::new(self.grid.n, max_lag, guard)?;
        let per_path = (0..replicas as u64)
            .into_par_iter()
            .map(|r| Ok(k.apply(&self.synthesize_replica(master, r)?.values)))
            .collect::<Result<Vec<_>>>()?;
        Ok(aggregate_autocov(&per_path, max_lag))
    }
}

const MAGIC: &[u8; 8] = b"STQNPATH";
const FORMAT_VERSION: u32 = 1;

/// Binary layout (little endian): magic[8], version u32, n u64, dt f64, t0 f64,
/// seed u64, then n f64 values.
pub fn write_path_binary(path: &SampledPath, file: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(file)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(path.len() as u64).to_le_bytes())?;
    w.write_all(&path.dt.to_le_bytes())?;
    w.write_all(&path.t0.to_le_bytes())?;
    w.write_all(&path.seed.to_le_bytes())?;
    for v in &path.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_path_binary(file: &Path) -> Result<SampledPath> {
    let mut r = BufReader::new(std::fs::File::open(file)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::MalformedFile("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(Error::MalformedFile(format!("unsupported version {version}")));
    }
    let mut next = |r: &mut BufReader<std::fs::File>| -> Result<[u8; 8]> {
        r.read_exact(&mut b8)?;
        Ok(b8)
    };
    let n = u64::from_le_bytes(next(&mut r)?) as usize;
    let dt = f64::from_le_bytes(next(&mut r)?);
    let t0 = f64::from_le_bytes(next(&mut r)?);
    let seed = u64::from_le_bytes(next(&mut r)?);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(f64::from_le_bytes(next(&mut r)?));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::MalformedFile(format!("{} trailing bytes", rest.len())));
    }
    SampledPath::new(
        values,
        dt,
        t0,
        seed,
        PathMeta {
            density: "unknown".into(),
            method: "file".into(),
        },
    )
}

/// CSV with header `t,value`.
pub fn write_path_csv(path: &SampledPath, file: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(file)?);
    writeln!(w, "t,value")?;
    for (i, v) in path.values.iter().enumerate() {
        writeln!(w, "{},{:e}", path.t0 + i as f64 * path.dt, v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_path_csv(file: &Path) -> Result<SampledPath> {
    let r = BufReader::new(std::fs::File::open(file)?);
    let mut ts = Vec::new();
    let mut vs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "t,value" {
                return Err(Error::MalformedFile(format!("expected header `t,value`, got `{line}`")));
            }
            continue;
        }
        let (t, v) = line
            .split_once(',')
            .ok_or_else(|| Error::MalformedFile(format!("line {}: expected two columns", i + 1)))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::MalformedFile(format!("line {}: bad number `{s}`", i + 1)))
        };
        ts.push(parse(t)?);
        vs.push(parse(v)?);
    }
    if ts.len() < 2 {
        return Err(Error::MalformedFile("fewer than two samples".into()));
    }
    let dt = ts[1] - ts[0];
    SampledPath::new(
        vs,
        dt,
        ts[0],
        0,
        PathMeta {
            density: "unknown".into(),
            method: "csv".into(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_sd() -> SpectralDensity {
        SpectralDensity::gauss_lrd(0.5).unwrap()
    }

    /// Kummer's series 1F1(a; b; z).
    fn hyp1f1(a: f64, b: f64, z: f64) -> f64 {
        let (mut term, mut sum) = (1.0, 1.0);
        for k in 0..500 {
            let k = k as f64;
            term *= (a + k) / (b + k) * z / (k + 1.0);
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    }

    #[test]
    fn autocov_matches_kummer_closed_form() {
        // For C_X = exp(-l^2): R(t) = Gamma(beta/2) 1F1(beta/2; 1/2; -t^2/4).
        let sd = default_sd();
        let tol = Tolerance::new(1e-13, 1e-10);
        let lags = [0.0, 0.5, 1.0, 2.0, -1.0, 7.5];
        let r = target_autocov(&sd, &lags, &tol).unwrap();
        let g = 3.625_609_908_221_908_7;
        for (t, v) in lags.iter().zip(&r) {
            let exact = g * hyp1f1(0.25, 0.5, -t * t / 4.0);
            assert!((v - exact).abs() < 1e-8, "t={t}: {v} vs {exact}");
        }
        assert_eq!(r[2], r[4]);
        assert!(r.iter().all(|v| v.abs() <= r[0]));
    }

    #[test]
    fn autocov_default_density_matches_trapezoid_oracle() {
        // Trapezoid on 2^22 points in u = l^beta, where the integrand is smooth.
        let sd = default_sd();
        let tol = Tolerance::new(1e-13, 1e-10);
        let v = target_autocov(&sd, &[1.0], &tol).unwrap()[0];
        let (umax, n) = (4.0f64, 1usize << 22);
        let h = umax / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let l = (i as f64 * h).powi(2);
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * sd.cx(l) * l.cos() / 0.5;
        }
        let trap = 2.0 * acc * h;
        assert!(((v - trap) / v).abs() < 1e-4, "{v} vs {trap}");
    }

    #[test]
    fn autocov_matches_trapezoid_oracle() {
        // Independent rule: trapezoid on 2^22 points in the desingularised variable.
        let sd = SpectralDensity::from_id("rational:beta=0.5,c2=1,beta2=1").unwrap();
        let tol = Tolerance::new(1e-13, 1e-10);
        let v = target_autocov(&sd, &[1.0], &tol).unwrap()[0];
        let beta = 0.5;
        let lmax: f64 = 4.0e6;
        let umax = lmax.powf(beta);
        let n = 1usize << 22;
        let h = umax / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let u = i as f64 * h;
            let l = u.powf(1.0 / beta);
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * sd.cx(l) * l.cos() / beta;
        }
        let trap = 2.0 * acc * h;
        assert!(((v - trap) / v).abs() < 1e-4, "{v} vs {trap}");
    }

    #[test]
    fn cell_masses_conserve_total() {
        let s = Synthesizer::new(&default_sd(), GridSpec::new(1 << 14, 1.0 / 64.0).unwrap()).unwrap();
        let sum: f64 = s.cell_masses().iter().sum();
        assert!(((sum - s.total_mass()) / s.total_mass()).abs() < 1e-3);
        assert!((s.total_mass() - 3.625_609_908_221_908_7).abs() < 1e-8);
    }

    #[test]
    fn coarse_grid_is_rejected_with_nyquist() {
        let e = Synthesizer::new(&default_sd(), GridSpec::new(1024, 2.0).unwrap()).unwrap_err();
        match e {
            Error::GridTooCoarse(msg) => assert!(msg.contains("Nyquist"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spectrum_is_hermitian_and_path_real() {
        let s = Synthesizer::new(&default_sd(), GridSpec::new(4096, 0.05).unwrap()).unwrap();
        let c = s.spectrum(9);
        let n = c.len();
        for k in 1..n {
            assert_eq!(c[n - k], c[k].conj());
        }
        assert_eq!(c[0].im, 0.0);
        assert_eq!(c[n / 2].im, 0.0);
        let a = s.synthesize(9).unwrap();
        let b = s.synthesize(9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, s.synthesize(10).unwrap().values);
    }

    #[test]
    fn ensemble_independent_of_thread_count() {
        let s = Synthesizer::new(&default_sd(), GridSpec::new(1024, 0.1).unwrap()).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let two = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| s.ensemble(5, 16)).unwrap();
        let b = two.install(|| s.ensemble(5, 16)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[3], s.synthesize_replica(5, 3).unwrap());
    }

    #[test]
    fn ensemble_mean_and_variance() {
        let sd = default_sd();
        let s = Synthesizer::new(&sd, GridSpec::new(256, 0.25).unwrap()).unwrap();
        let reps = 10_000;
        let x: Vec<f64> = (0..reps).map(|k| s.synthesize_replica(77, k).unwrap().values[100]).collect();
        let m = x.iter().sum::<f64>() / reps as f64;
        let v = x.iter().map(|a| a * a).sum::<f64>() / reps as f64;
        let sd_x = v.sqrt();
        assert!(m.abs() < 3.0 * sd_x / (reps as f64).sqrt(), "mean {m}");
        // Var of x^2 for a Gaussian is 2 v^2.
        let target = s.cell_masses().iter().sum::<f64>();
        let se = (2.0f64).sqrt() * target / (reps as f64).sqrt();
        assert!((v - target).abs() < 3.0 * se, "{v} vs {target}");
    }

    #[test]
    fn empirical_autocov_basics() {
        let meta = PathMeta {
            density: "zero".into(),
            method: "test".into(),
        };
        let zero = SampledPath::new(vec![0.0; 64], 0.1, 0.0, 0, meta.clone()).unwrap();
        let e = empirical_autocov(&[zero.clone(), zero], 5, 0.125).unwrap();
        assert!(e.values.iter().all(|v| *v == 0.0));
        let p = SampledPath::new((0..64).map(|i| ((i * 7 % 11) as f64) - 5.0).collect(), 0.1, 0.0, 0, meta.clone()).unwrap();
        let e = empirical_autocov(std::slice::from_ref(&p), 3, 0.0).unwrap();
        let var = p.values.iter().map(|v| v * v).sum::<f64>() / 64.0;
        assert!((e.values[0] - var).abs() < 1e-12);
        let lag2 = (0..62).map(|i| p.values[i] * p.values[i + 2]).sum::<f64>() / 62.0;
        assert!((e.values[2] - lag2).abs() < 1e-12);
        let q = SampledPath::new(vec![1.0; 32], 0.2, 0.0, 0, meta).unwrap();
        assert!(empirical_autocov(&[p, q], 3, 0.0).is_err());
    }

    #[test]
    fn streaming_autocov_matches_in_memory() {
        let s = Synthesizer::new(&default_sd(), GridSpec::new(2048, 0.1).unwrap()).unwrap();
        let paths = s.ensemble(3, 12).unwrap();
        let a = empirical_autocov(&paths, 20, 0.125).unwrap();
        let b = s.ensemble_autocov(3, 12, 20, 0.125).unwrap();
        assert_eq!(a, b);
        assert!(s.ensemble_autocov(3, 0, 20, 0.125).is_err());
    }

    #[test]
    fn binary_and_csv_roundtrip() {
        let s = Synthesizer::new(&default_sd(), GridSpec::new(512, 0.1).unwrap()).unwrap();
        let p = s.synthesize(3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("p.bin");
        write_path_binary(&p, &f).unwrap();
        let q = read_path_binary(&f).unwrap();
        assert_eq!(q.values, p.values);
        assert_eq!((q.dt, q.t0, q.seed), (p.dt, p.t0, p.seed));
        let c = dir.path().join("p.csv");
        write_path_csv(&p, &c).unwrap();
        let r = read_path_csv(&c).unwrap();
        assert_eq!(r.values, p.values);
        std::fs::write(&f, b"garbage!").unwrap();
        assert!(read_path_binary(&f).is_err());
    }
}
