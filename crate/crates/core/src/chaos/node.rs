//! Evaluators for the recursive Wiener-chaos integrands. Nodes are stored at
//! t = 0; the time-t integrand is exp(i t sum(l)) times the stored one.

use crate::error::{Error, Result};
use crate::models::{amplitude, effective_radius, eval_psi_hat_scaled, filtered_density, filtered_l1, SpectralDensity, WaveletSpec};
use crate::quad::{PanelRule, Tolerance};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Inner-integral rule for contractions: Gauss-Legendre panels on the
/// effective support [-R, R] of the base amplitude, split at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSettings {
    /// Nodes per inner dimension.
    pub order: usize,
    /// Panels per dimension (even, so the origin is a panel edge).
    pub panels: usize,
    /// Cap on the tensor-rule size; higher dimensions get fewer nodes each.
    pub max_points: usize,
    /// |a|^2 below this fraction of its peak counts as outside the support.
    pub radius_tol: f64,
}

impl Default for InnerSettings {
    fn default() -> Self {
        InnerSettings {
            order: 96,
            panels: 4,
            max_points: 1 << 18,
            radius_tol: 1e-14,
        }
    }
}

/// Shared data for every node built from one (density, wavelet, j1).
pub struct ChaosContext {
    pub density: SpectralDensity,
    pub wavelet: WaveletSpec,
    pub j1: i32,
    pub inner: InnerSettings,
    /// Effective support radius of f_{X*psi_j1}.
    pub radius: f64,
    /// ||f_{X*psi_j1}||_1.
    pub f1_l1: f64,
    /// Standard deviation of the Gaussian importance density for MC inner integrals.
    pub imp_sigma: f64,
    rules: Vec<Arc<PanelRule>>,
}

impl std::fmt::Debug for ChaosContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChaosContext")
            .field("density", &self.density.label)
            .field("wavelet", &self.wavelet.label)
            .field("j1", &self.j1)
            .field("radius", &self.radius)
            .field("f1_l1", &self.f1_l1)
            .finish()
    }
}

impl ChaosContext {
    pub fn new(sd: &SpectralDensity, w: &WaveletSpec, j1: i32, inner: InnerSettings) -> Result<Arc<Self>> {
        if inner.order == 0 || inner.panels == 0 || !inner.panels.is_multiple_of(2) || !inner.order.is_multiple_of(inner.panels) {
            return Err(Error::invalid("inner order must be a positive multiple of an even panel count"));
        }
        let f1 = |l: f64| filtered_density(sd, w, j1, l);
        let scan = 4096.0 / (j1 as f64).exp2().max(1e-6);
        let peak = crate::models::grid_sup(|l| f1(l).min(f64::MAX), scan.min(512.0), 1 << 18).0;
        let radius = effective_radius(|l| f1(l).max(f1(-l)), inner.radius_tol * peak, scan);
        let tol = Tolerance::new(1e-300, 1e-11);
        let f1_l1 = filtered_l1(sd, w, j1, &tol)?;
        let second = crate::quad::integrate(|l| l * l * f1(l), 0.0, radius, &tol)?.value;
        let rms = (2.0 * second / f1_l1).sqrt();
        let mut rules = Vec::new();
        for r in 1..=8usize {
            let per_dim = (inner.max_points as f64).powf(1.0 / r as f64).floor() as usize;
            let q = inner.order.min(per_dim).max(inner.panels);
            let q = q - q % inner.panels;
            rules.push(Arc::new(PanelRule::new(-radius, radius, inner.panels, q / inner.panels)));
        }
        Ok(Arc::new(ChaosContext {
            density: sd.clone(),
            wavelet: w.clone(),
            j1,
            inner,
            radius,
            f1_l1,
            imp_sigma: 1.25 * rms,
            rules,
        }))
    }

    /// Base amplitude a(l) = psi_hat_j1(l) sqrt(f(l)).
    pub fn amp(&self, l: f64) -> Complex64 {
        amplitude(&self.density, &self.wavelet, self.j1, l)
    }

    /// f_{X*psi_j1}(l) = |a(l)|^2.
    pub fn f1(&self, l: f64) -> f64 {
        filtered_density(&self.density, &self.wavelet, self.j1, l)
    }

    fn rule(&self, r: usize) -> &PanelRule {
        &self.rules[(r - 1).min(self.rules.len() - 1)]
    }

    fn imp_pdf(&self, x: f64) -> f64 {
        let s = self.imp_sigma;
        (-(x * x) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt())
    }
}

#[derive(Debug, Clone)]
pub enum NodeKind {
    /// a(l1) a(l2)
    BaseG1,
    /// child(l) psi_hat(2^j sum(l))
    Lift { child: Arc<IntegrandNode>, j: i32 },
    /// f (x)_r g, optionally symmetrized over argument subsets.
    Contraction {
        left: Arc<IntegrandNode>,
        right: Arc<IntegrandNode>,
        r: usize,
        symmetrized: bool,
    },
    /// sum of coefficient * node, all of equal arity.
    Combination { terms: Vec<(f64, Arc<IntegrandNode>)> },
    /// A constant of arity 0.
    Scalar { value: f64, err: f64 },
}

/// A chaos integrand evaluated at t = 0.
#[derive(Debug, Clone)]
pub struct IntegrandNode {
    pub arity: usize,
    pub kind: NodeKind,
    /// Scales j1..jm used so far.
    pub scales: Vec<i32>,
    pub label: String,
    /// Permutation-symmetric in its arguments.
    pub symmetric: bool,
    /// Argument splits (left block, right block) averaged over by a
    /// symmetrized contraction.
    splits: Vec<(Vec<usize>, Vec<usize>)>,
    ctx: Arc<ChaosContext>,
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    fn heap(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(p.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, p, out);
            let s = if k.is_multiple_of(2) { i } else { 0 };
            p.swap(s, k - 1);
        }
    }
    heap(n, &mut p, &mut out);
    out
}

/// Binomial coefficient as f64.
pub fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

const MAX_PERMUTATION_ARITY: usize = 6;

impl IntegrandNode {
    pub fn context(&self) -> &Arc<ChaosContext> {
        &self.ctx
    }

    /// Time-t integrand: exp(i t sum(l)) times the stored t = 0 integrand.
    pub fn eval_at(&self, t: f64, x: &[f64]) -> Complex64 {
        let s: f64 = x.iter().sum();
        Complex64::from_polar(1.0, t * s) * self.eval(x)
    }

    /// Value at t = 0. Panics if `x.len() != arity`.
    pub fn eval(&self, x: &[f64]) -> Complex64 {
        assert_eq!(x.len(), self.arity, "argument count must equal node arity");
        match &self.kind {
            NodeKind::BaseG1 => self.ctx.amp(x[0]) * self.ctx.amp(x[1]),
            NodeKind::Lift { child, j } => {
                let s: f64 = x.iter().sum();
                let p = eval_psi_hat_scaled(&self.ctx.wavelet, *j, s);
                if p == Complex64::new(0.0, 0.0) {
                    return p;
                }
                child.eval(x) * p
            }
            NodeKind::Combination { terms } => terms.iter().map(|(c, t)| t.eval(x) * *c).sum(),
            NodeKind::Scalar { value, .. } => Complex64::new(*value, 0.0),
            NodeKind::Contraction { left, right, r, symmetrized } => {
                if !*symmetrized {
                    let k = left.arity - r;
                    return contract_at(&self.ctx, left, right, *r, &x[..k], &x[k..]);
                }
                let mut xl = Vec::with_capacity(x.len());
                let mut xr = Vec::with_capacity(x.len());
                let mut acc = Complex64::new(0.0, 0.0);
                for (ls, rs) in &self.splits {
                    xl.clear();
                    xr.clear();
                    xl.extend(ls.iter().map(|&i| x[i]));
                    xr.extend(rs.iter().map(|&i| x[i]));
                    acc += contract_at(&self.ctx, left, right, *r, &xl, &xr);
                }
                acc / self.splits.len() as f64
            }
        }
    }

    /// Unbiased single-sample estimate of `eval(x)` with inner integrals
    /// replaced by Gaussian importance samples.
    pub fn eval_mc<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Complex64 {
        match &self.kind {
            NodeKind::BaseG1 | NodeKind::Scalar { .. } => self.eval(x),
            NodeKind::Lift { child, j } => {
                let s: f64 = x.iter().sum();
                child.eval_mc(x, rng) * eval_psi_hat_scaled(&self.ctx.wavelet, *j, s)
            }
            NodeKind::Combination { terms } => terms.iter().map(|(c, t)| t.eval_mc(x, rng) * *c).sum(),
            NodeKind::Contraction { left, right, r, symmetrized } => {
                if !*symmetrized {
                    let k = left.arity - r;
                    return contract_mc(&self.ctx, left, right, *r, &x[..k], &x[k..], rng);
                }
                let mut acc = Complex64::new(0.0, 0.0);
                for (ls, rs) in &self.splits {
                    let xl: Vec<f64> = ls.iter().map(|&i| x[i]).collect();
                    let xr: Vec<f64> = rs.iter().map(|&i| x[i]).collect();
                    acc += contract_mc(&self.ctx, left, right, *r, &xl, &xr, rng);
                }
                acc / self.splits.len() as f64
            }
        }
    }

    /// Average of `eval` over all argument permutations (test oracle; arity <= 8).
    pub fn eval_permutation_symmetrized(&self, x: &[f64]) -> Complex64 {
        let perms = permutations(self.arity);
        let mut y = vec![0.0; x.len()];
        let mut acc = Complex64::new(0.0, 0.0);
        for p in &perms {
            for (i, &k) in p.iter().enumerate() {
                y[i] = x[k];
            }
            acc += self.eval(&y);
        }
        acc / perms.len() as f64
    }

    /// The same node with inner contractions left unsymmetrized.
    pub fn unsymmetrized(&self) -> IntegrandNode {
        let mut n = self.clone();
        if let NodeKind::Contraction { symmetrized, .. } = &mut n.kind {
            *symmetrized = false;
        }
        n.symmetric = false;
        n.splits.clear();
        n
    }
}

fn contract_at(
    ctx: &ChaosContext,
    left: &IntegrandNode,
    right: &IntegrandNode,
    r: usize,
    xl: &[f64],
    xr: &[f64],
) -> Complex64 {
    if r == 0 {
        let a = left.eval(xl);
        if a == Complex64::new(0.0, 0.0) {
            return a;
        }
        return a * right.eval(xr);
    }
    let rule = ctx.rule(r);
    let q = rule.len();
    let mut la = vec![0.0; r + xl.len()];
    let mut ra = vec![0.0; r + xr.len()];
    la[r..].copy_from_slice(xl);
    ra[r..].copy_from_slice(xr);
    let mut idx = vec![0usize; r];
    let mut acc = Complex64::new(0.0, 0.0);
    loop {
        let mut w = 1.0;
        for d in 0..r {
            let t = rule.nodes[idx[d]];
            la[d] = t;
            ra[d] = -t;
            w *= rule.weights[idx[d]];
        }
        let a = left.eval(&la);
        if a != Complex64::new(0.0, 0.0) {
            acc += a * right.eval(&ra) * w;
        }
        // Odometer increment.
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < q {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == r {
                return acc;
            }
        }
    }
}

fn contract_mc<R: Rng + ?Sized>(
    ctx: &ChaosContext,
    left: &IntegrandNode,
    right: &IntegrandNode,
    r: usize,
    xl: &[f64],
    xr: &[f64],
    rng: &mut R,
) -> Complex64 {
    if r == 0 {
        return left.eval_mc(xl, rng) * right.eval_mc(xr, rng);
    }
    let normal = Normal::new(0.0, ctx.imp_sigma).expect("positive importance scale");
    let mut la = Vec::with_capacity(r + xl.len());
    let mut ra = Vec::with_capacity(r + xr.len());
    let mut w = 1.0;
    for _ in 0..r {
        let t: f64 = normal.sample(rng);
        w /= ctx.imp_pdf(t);
        la.push(t);
        ra.push(-t);
    }
    la.extend_from_slice(xl);
    ra.extend_from_slice(xr);
    left.eval_mc(&la, rng) * right.eval_mc(&ra, rng) * w
}

/// Gaussian importance sample for outer MC integrals: (point, 1/density).
pub(crate) fn importance_point<R: Rng + ?Sized>(ctx: &ChaosContext, d: usize, rng: &mut R) -> (Vec<f64>, f64) {
    let normal = Normal::new(0.0, ctx.imp_sigma).expect("positive importance scale");
    let mut w = 1.0;
    let u = (0..d)
        .map(|_| {
            let t: f64 = normal.sample(rng);
            w /= ctx.imp_pdf(t);
            t
        })
        .collect();
    (u, w)
}

/// The first-layer integrand a(l1) a(l2).
pub fn base_g1(ctx: &Arc<ChaosContext>) -> Arc<IntegrandNode> {
    Arc::new(IntegrandNode {
        arity: 2,
        kind: NodeKind::BaseG1,
        scales: vec![ctx.j1],
        label: "1G2".into(),
        symmetric: true,
        splits: Vec::new(),
        ctx: ctx.clone(),
    })
}

/// Constant node, used for the arity-0 entry of the first level.
pub fn scalar(ctx: &Arc<ChaosContext>, value: f64, err: f64, label: &str, scales: Vec<i32>) -> Arc<IntegrandNode> {
    Arc::new(IntegrandNode {
        arity: 0,
        kind: NodeKind::Scalar { value, err },
        scales,
        label: label.into(),
        symmetric: true,
        splits: Vec::new(),
        ctx: ctx.clone(),
    })
}

/// Multiplies by psi_hat_{j_next}(sum of arguments).
pub fn lift_f(g: &Arc<IntegrandNode>, j_next: i32) -> Result<Arc<IntegrandNode>> {
    if g.arity == 0 {
        return Err(Error::invalid("cannot lift an arity-0 node"));
    }
    let mut scales = g.scales.clone();
    scales.push(j_next);
    Ok(Arc::new(IntegrandNode {
        arity: g.arity,
        kind: NodeKind::Lift { child: g.clone(), j: j_next },
        scales,
        label: format!("lift[{}](j={j_next})", g.label),
        symmetric: g.symmetric,
        splits: Vec::new(),
        ctx: g.ctx.clone(),
    }))
}

/// The r-th contraction f (x)_r g (unsymmetrized).
pub fn contract(f: &Arc<IntegrandNode>, g: &Arc<IntegrandNode>, r: usize) -> Result<Arc<IntegrandNode>> {
    contract_impl(f, g, r, false)
}

/// The symmetrized contraction. Symmetric operands use the exact subset-orbit
/// average; otherwise a full permutation average (arity <= 6).
pub fn contract_sym(f: &Arc<IntegrandNode>, g: &Arc<IntegrandNode>, r: usize) -> Result<Arc<IntegrandNode>> {
    contract_impl(f, g, r, true)
}

fn contract_impl(f: &Arc<IntegrandNode>, g: &Arc<IntegrandNode>, r: usize, sym: bool) -> Result<Arc<IntegrandNode>> {
    if r > f.arity.min(g.arity) {
        return Err(Error::invalid(format!(
            "contraction order {r} exceeds operand arities {} and {}",
            f.arity, g.arity
        )));
    }
    if !Arc::ptr_eq(&f.ctx, &g.ctx) {
        return Err(Error::invalid("contraction operands come from different contexts"));
    }
    let n = f.arity + g.arity - 2 * r;
    let k = f.arity - r;
    let mut scales = f.scales.clone();
    if g.scales.len() > scales.len() {
        scales = g.scales.clone();
    }
    let label = format!("{}({})x{}({})", if sym { "sym " } else { "" }, f.label, r, g.label);
    let base = IntegrandNode {
        arity: n,
        kind: NodeKind::Contraction {
            left: f.clone(),
            right: g.clone(),
            r,
            symmetrized: false,
        },
        scales,
        label,
        symmetric: n <= 1,
        splits: Vec::new(),
        ctx: f.ctx.clone(),
    };
    if !sym || n <= 1 {
        return Ok(Arc::new(base));
    }
    let splits: Vec<(Vec<usize>, Vec<usize>)> = if f.symmetric && g.symmetric {
        combinations(n, k)
            .into_iter()
            .map(|s| {
                let rest = (0..n).filter(|i| !s.contains(i)).collect();
                (s, rest)
            })
            .collect()
    } else if n <= MAX_PERMUTATION_ARITY {
        permutations(n)
            .into_iter()
            .map(|p| (p[..k].to_vec(), p[k..].to_vec()))
            .collect()
    } else {
        return Err(Error::Unsupported(format!(
            "exact symmetrization of a non-symmetric arity-{n} contraction"
        )));
    };
    Ok(Arc::new(IntegrandNode {
        kind: NodeKind::Contraction {
            left: f.clone(),
            right: g.clone(),
            r,
            symmetrized: true,
        },
        symmetric: true,
        splits,
        ..base
    }))
}

/// Linear combination of equal-arity nodes.
pub fn combine(terms: Vec<(f64, Arc<IntegrandNode>)>, arity: usize, label: String) -> Result<Arc<IntegrandNode>> {
    let first = terms.first().ok_or_else(|| Error::invalid("empty combination"))?;
    let ctx = first.1.ctx.clone();
    if terms.iter().any(|(_, t)| t.arity != arity) {
        return Err(Error::invalid("combination terms must share the declared arity"));
    }
    let scales = terms.iter().map(|t| t.1.scales.clone()).max_by_key(|s| s.len()).unwrap_or_default();
    Ok(Arc::new(IntegrandNode {
        arity,
        symmetric: terms.iter().all(|t| t.1.symmetric),
        kind: NodeKind::Combination { terms },
        scales,
        label,
        splits: Vec::new(),
        ctx,
    }))
}

/// Combination coefficient (l-r-r')! C(Mr, l-r-r') C(Mr', l-r-r'), or None when zero.
pub fn level_coefficient(m: usize, l: usize, r: usize, rp: usize) -> Option<(usize, f64)> {
    let half = 1usize << (m - 1);
    let (mr, mrp) = (half - 2 * r, half - 2 * rp);
    let p = l as i64 - r as i64 - rp as i64;
    if p < 0 || p as usize > mr.min(mrp) {
        return None;
    }
    let p = p as usize;
    Some((p, factorial(p) * binom(mr, p) * binom(mrp, p)))
}

/// One level of the recursion: the F nodes and the G nodes indexed by l.
#[derive(Debug, Clone)]
pub struct Level {
    pub m: usize,
    pub f: Vec<Arc<IntegrandNode>>,
    pub g: Vec<Arc<IntegrandNode>>,
}

/// Builds level m from the complete level-(m-1) G list (ordered by l).
pub fn build_level(prev_g: &[Arc<IntegrandNode>], j_next: i32) -> Result<Level> {
    let top = prev_g.first().ok_or_else(|| Error::invalid("empty previous level"))?.arity;
    if !top.is_power_of_two() || top < 2 {
        return Err(Error::invalid("previous level must start with an arity 2^(m-1) node"));
    }
    let m = top.trailing_zeros() as usize + 1;
    let nf = 1usize << (m - 2);
    if prev_g.len() != (top / 2) + 1 {
        return Err(Error::invalid(format!(
            "level {} needs {} G nodes, got {}",
            m - 1,
            top / 2 + 1,
            prev_g.len()
        )));
    }
    for (l, g) in prev_g.iter().enumerate() {
        if g.arity != top - 2 * l {
            return Err(Error::invalid("previous level G nodes are not ordered by arity"));
        }
    }
    let f: Vec<Arc<IntegrandNode>> = prev_g[..nf].iter().map(|g| lift_f(g, j_next)).collect::<Result<_>>()?;
    let mut g_list = Vec::with_capacity(top + 1);
    for l in 0..=top {
        let mut terms: Vec<(f64, Arc<IntegrandNode>)> = Vec::new();
        for r in 0..nf {
            for rp in r..nf {
                if let Some((p, c)) = level_coefficient(m, l, r, rp) {
                    // (r, r') and (r', r) symmetrize to the same function.
                    let c = if r == rp { c } else { 2.0 * c };
                    terms.push((c, contract_sym(&f[r], &f[rp], p)?));
                }
            }
        }
        g_list.push(combine(terms, 2 * top - 2 * l, format!("{m}G({})", 2 * top - 2 * l))?);
    }
    Ok(Level { m, f, g: g_list })
}

/// Levels 1..=M for the scale vector `scales` (length M).
pub fn build_tree(ctx: &Arc<ChaosContext>, scales: &[i32]) -> Result<Vec<Level>> {
    let j1 = *scales.first().ok_or_else(|| Error::invalid("scale vector must be non-empty"))?;
    if j1 != ctx.j1 {
        return Err(Error::invalid(format!("context built for j1={}, scale vector starts at {j1}", ctx.j1)));
    }
    let mut levels = vec![Level {
        m: 1,
        f: Vec::new(),
        g: vec![base_g1(ctx), scalar(ctx, ctx.f1_l1, 0.0, "1G0", vec![j1])],
    }];
    for &j in &scales[1..] {
        let next = build_level(&levels.last().expect("non-empty").g, j)?;
        levels.push(next);
    }
    Ok(levels)
}
