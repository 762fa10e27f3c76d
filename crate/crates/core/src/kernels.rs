//! Patch-wise kernel functions `κ(x, w)` and their analytic gradients.
//!
//! Every kernel is evaluated between all rows of a patch matrix `X[P×n]` and
//! all rows of a filter matrix `W[K×n]`. Dot-product kernels (linear,
//! polynomial, sigmoid) cost one matrix product plus an elementwise map;
//! Gaussian and L² reuse the same product through
//! `‖x − w‖² = ‖x‖² + ‖w‖² − 2·x·w`; L¹ has no product form and runs a direct
//! loop.

use std::fmt;
use std::str::FromStr;

use wide::bytemuck::{cast, cast_slice_mut};
use wide::{f64x8, i64x8};

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};

/// Distances below this are treated as zero when normalizing the L² gradient.
pub const L2_SINGULARITY_EPS: f64 = 1e-12;

/// Smallest value a learnable hyperparameter is projected to after a step.
pub const HYPER_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Linear,
    Polynomial,
    Gaussian,
    L1,
    L2,
    Sigmoid,
}

impl KernelKind {
    pub const ALL: [KernelKind; 6] = [
        KernelKind::Linear,
        KernelKind::Polynomial,
        KernelKind::Gaussian,
        KernelKind::L1,
        KernelKind::L2,
        KernelKind::Sigmoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Polynomial => "polynomial",
            KernelKind::Gaussian => "gaussian",
            KernelKind::L1 => "l1",
            KernelKind::L2 => "l2",
            KernelKind::Sigmoid => "sigmoid",
        }
    }
}

/// A kernel together with its hyperparameters.
///
/// The polynomial degree is fixed at construction; only the balancer `c_p`
/// and the Gaussian `γ_g` may be learned.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum KernelSpec {
    #[default]
    Linear,
    Polynomial {
        degree: u32,
        balance: f64,
        learn_balance: bool,
    },
    Gaussian {
        gamma: f64,
        learn_gamma: bool,
    },
    L1,
    L2,
    Sigmoid,
}

impl KernelSpec {
    pub fn polynomial(degree: u32, balance: f64) -> Self {
        KernelSpec::Polynomial {
            degree,
            balance,
            learn_balance: false,
        }
    }

    pub fn gaussian(gamma: f64) -> Self {
        KernelSpec::Gaussian {
            gamma,
            learn_gamma: false,
        }
    }

    /// Marks the continuous hyperparameter (if any) as trainable.
    pub fn learnable(self) -> Self {
        match self {
            KernelSpec::Polynomial { degree, balance, .. } => KernelSpec::Polynomial {
                degree,
                balance,
                learn_balance: true,
            },
            KernelSpec::Gaussian { gamma, .. } => KernelSpec::Gaussian {
                gamma,
                learn_gamma: true,
            },
            other => other,
        }
    }

    pub fn kind(&self) -> KernelKind {
        match self {
            KernelSpec::Linear => KernelKind::Linear,
            KernelSpec::Polynomial { .. } => KernelKind::Polynomial,
            KernelSpec::Gaussian { .. } => KernelKind::Gaussian,
            KernelSpec::L1 => KernelKind::L1,
            KernelSpec::L2 => KernelKind::L2,
            KernelSpec::Sigmoid => KernelKind::Sigmoid,
        }
    }

    /// The continuous hyperparameter (`c_p` or `γ_g`), if the kernel has one.
    pub fn hyper(&self) -> Option<f64> {
        match *self {
            KernelSpec::Polynomial { balance, .. } => Some(balance),
            KernelSpec::Gaussian { gamma, .. } => Some(gamma),
            _ => None,
        }
    }

    pub fn hyper_is_learnable(&self) -> bool {
        matches!(
            self,
            KernelSpec::Polynomial {
                learn_balance: true,
                ..
            } | KernelSpec::Gaussian { learn_gamma: true, .. }
        )
    }

    /// Returns a copy with the continuous hyperparameter replaced.
    pub fn with_hyper(self, value: f64) -> Self {
        match self {
            KernelSpec::Polynomial {
                degree, learn_balance, ..
            } => KernelSpec::Polynomial {
                degree,
                balance: value,
                learn_balance,
            },
            KernelSpec::Gaussian { learn_gamma, .. } => KernelSpec::Gaussian {
                gamma: value,
                learn_gamma,
            },
            other => other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Polynomial { degree, balance, .. } => {
                if degree < 1 {
                    return Err(Error::Argument("polynomial degree must be >= 1".into()));
                }
                if !(balance >= 0.0 && balance.is_finite()) {
                    return Err(Error::Argument(format!(
                        "polynomial balancer must be >= 0, got {balance}"
                    )));
                }
            }
            KernelSpec::Gaussian { gamma, .. } if !(gamma > 0.0 && gamma.is_finite()) => {
                return Err(Error::Argument(format!("gaussian gamma must be > 0, got {gamma}")));
            }
            _ => {}
        }
        Ok(())
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            KernelSpec::Polynomial {
                degree,
                balance,
                learn_balance,
            } => {
                write!(f, "polynomial(dp={degree},cp={balance}")?;
                if learn_balance {
                    f.write_str(",learn")?;
                }
                f.write_str(")")
            }
            KernelSpec::Gaussian { gamma, learn_gamma } => {
                write!(f, "gaussian(gamma={gamma}")?;
                if learn_gamma {
                    f.write_str(",learn")?;
                }
                f.write_str(")")
            }
            other => f.write_str(other.kind().name()),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    /// Parses `linear`, `l1`, `l2`, `sigmoid`, `polynomial(dp=3,cp=1[,learn])`
    /// or `gaussian(gamma=1[,learn])`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) => {
                let close = s
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Config(format!("kernel spec `{s}` is missing `)`")))?;
                (&s[..open], &close[open + 1..])
            }
            None => (s, ""),
        };
        let mut named = Vec::new();
        let mut learn = false;
        for arg in args.split(',').map(str::trim).filter(|a| !a.is_empty()) {
            if arg == "learn" {
                learn = true;
                continue;
            }
            let (k, v) = arg
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad kernel argument `{arg}` in `{s}`")))?;
            named.push((k.trim(), v.trim()));
        }
        let take = |key: &str| -> Result<&str> {
            named
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Config(format!("kernel `{s}` needs `{key}=`")))
        };
        let number = |key: &str| -> Result<f64> {
            take(key)?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("`{key}` in `{s}`: {e}")))
        };
        let allow = |keys: &[&str]| -> Result<()> {
            match named.iter().find(|(k, _)| !keys.contains(k)) {
                Some((k, _)) => Err(Error::Config(format!("unknown kernel argument `{k}` in `{s}`"))),
                None => Ok(()),
            }
        };
        let spec = match name.trim().to_ascii_lowercase().as_str() {
            "polynomial" | "poly" => {
                allow(&["dp", "cp"])?;
                let degree = take("dp")?
                    .parse::<u32>()
                    .map_err(|e| Error::Config(format!("`dp` in `{s}`: {e}")))?;
                KernelSpec::Polynomial {
                    degree,
                    balance: number("cp")?,
                    learn_balance: learn,
                }
            }
            "gaussian" | "rbf" => {
                allow(&["gamma"])?;
                KernelSpec::Gaussian {
                    gamma: number("gamma")?,
                    learn_gamma: learn,
                }
            }
            simple => {
                if !named.is_empty() || learn {
                    return Err(Error::Config(format!("kernel `{simple}` takes no arguments")));
                }
                match simple {
                    "linear" => KernelSpec::Linear,
                    "l1" => KernelSpec::L1,
                    "l2" => KernelSpec::L2,
                    "sigmoid" => KernelSpec::Sigmoid,
                    other => return Err(Error::Config(format!("unknown kernel `{other}`"))),
                }
            }
        };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug)]
enum Aux {
    None,
    /// Argument of the elementwise map: `x·w + c_p` (polynomial) or `x·w`
    /// (sigmoid).
    Base(Tensor),
    /// `‖x − w‖²` (Gaussian, L²).
    SqDist(Tensor),
}

/// Everything [`kernel_backward`] needs; owns the patch and filter matrices.
#[derive(Debug)]
pub struct KernelCache {
    spec: KernelSpec,
    patches: Tensor,
    filters: Tensor,
    aux: Aux,
}

impl KernelCache {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn patches(&self) -> &Tensor {
        &self.patches
    }

    pub fn filters(&self) -> &Tensor {
        &self.filters
    }
}

#[derive(Clone, Debug)]
pub struct KernelGrads {
    pub patches: Tensor,
    pub filters: Tensor,
    /// Derivative w.r.t. `c_p` / `γ_g`, summed over every (patch, filter) pair.
    /// `None` for kernels without a continuous hyperparameter.
    pub hyper: Option<f64>,
}

fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contains non-finite values")))
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    let chunks = v.chunks_exact(8);
    let tail: f64 = chunks.remainder().iter().map(|x| x * x).sum();
    let acc = chunks.fold(f64x8::splat(0.0), |acc, c| {
        let x = load8(c);
        x.mul_add(x, acc)
    });
    acc.reduce_add() + tail
}

/// Up to eight values as one vector, zero-padded.
fn lanes(src: &[f64]) -> f64x8 {
    let mut buf = [0.0; 8];
    buf[..src.len()].copy_from_slice(src);
    f64x8::from(buf)
}

fn row_sq_norms(t: &Tensor) -> Vec<f64> {
    let (rows, _) = t.matrix_dims().expect("matrix");
    (0..rows).map(|r| sq_norm(t.row(r))).collect()
}

/// `b^degree` elementwise; small degrees get a dedicated loop instead of a
/// `powi` call per element.
fn powi_map(base: &Tensor, degree: u32) -> Tensor {
    match degree {
        0 => base.map(|_| 1.0),
        1 => base.clone(),
        2 => base.map(|b| b * b),
        3 => base.map(|b| b * b * b),
        4 => base.map(|b| {
            let sq = b * b;
            sq * sq
        }),
        d => base.map(|b| b.powi(d as i32)),
    }
}

/// `exp(x)` for `x ≤ 0`, eight lanes. Arguments below −708 give `exp(−708)`
/// rather than subnormals.
#[inline(always)]
fn exp_nonpos(x: f64x8) -> f64x8 {
    const INV_FACT: [f64; 13] = [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ];
    let x = x.max(f64x8::splat(-708.0));
    let r = (x * f64x8::splat(std::f64::consts::LOG2_E)).round_ties_even();
    // ln 2 split in two so the reduction stays exact
    let y = r.mul_neg_add(f64x8::splat(0.693_145_751_953_125), x);
    let y = r.mul_neg_add(f64x8::splat(1.428_606_820_309_417_3e-6), y);
    let poly = INV_FACT.iter().fold(f64x8::splat(1.0 / 6_227_020_800.0), |acc, &c| {
        acc.mul_add(y, f64x8::splat(c))
    });
    let bits: i64x8 = cast(r + f64x8::splat(1023.0 + 4_503_599_627_370_496.0));
    poly * cast::<i64x8, f64x8>(bits << 52)
}

/// Eight values from the front of `src`, zero-padded.
#[inline(always)]
fn load8(src: &[f64]) -> f64x8 {
    match <[f64; 8]>::try_from(src) {
        Ok(a) => f64x8::from(a),
        Err(_) => lanes(src),
    }
}

/// `exp(−γ·d)` elementwise.
fn gaussian_response(sq_dist: &Tensor, gamma: f64) -> Tensor {
    let scale = f64x8::splat(-gamma);
    let mut out = vec![0.0; sq_dist.len()];
    for (o, src) in out.chunks_mut(8).zip(sq_dist.data().chunks(8)) {
        let len = src.len();
        o.copy_from_slice(&exp_nonpos(scale * load8(src)).to_array()[..len]);
    }
    Tensor::new(sq_dist.shape(), out).expect("same shape")
}

/// Squared distances and `exp(−γ·d)` in one sweep over the dot products.
fn gaussian_fused(px: Vec<f64>, filters: &Tensor, dots: Tensor, gamma: f64) -> (Tensor, Tensor) {
    let fw = row_sq_norms(filters);
    let k = fw.len();
    let fw8: Vec<f64x8> = fw.chunks(8).map(lanes).collect();
    let (scale, two, zero) = (f64x8::splat(-gamma), f64x8::splat(2.0), f64x8::splat(0.0));
    let mut sq = dots;
    let mut out = vec![0.0; sq.len()];
    if k.is_multiple_of(8) {
        let per_row = k / 8;
        let rows = sq.data_mut().chunks_exact_mut(k).zip(out.chunks_exact_mut(k)).zip(&px);
        for ((d_row, o_row), &nx) in rows {
            let nx = f64x8::splat(nx);
            let d8: &mut [[f64; 8]] = cast_slice_mut(d_row);
            let o8: &mut [[f64; 8]] = cast_slice_mut(o_row);
            for j in 0..per_row {
                let dist = (nx + fw8[j] - two * f64x8::from(d8[j])).max(zero);
                d8[j] = dist.to_array();
                o8[j] = exp_nonpos(scale * dist).to_array();
            }
        }
    } else {
        let rows = sq.data_mut().chunks_exact_mut(k).zip(out.chunks_exact_mut(k)).zip(&px);
        for ((d_row, o_row), &nx) in rows {
            let nx = f64x8::splat(nx);
            for ((d, o), &nw) in d_row.chunks_mut(8).zip(o_row.chunks_mut(8)).zip(&fw8) {
                let dist = (nx + nw - two * lanes(d)).max(zero);
                let len = d.len();
                d.copy_from_slice(&dist.to_array()[..len]);
                o.copy_from_slice(&exp_nonpos(scale * dist).to_array()[..len]);
            }
        }
    }
    let out = Tensor::new(sq.shape(), out).expect("same shape");
    (out, sq)
}

fn squared_distances(px: Vec<f64>, filters: &Tensor, dots: Tensor) -> Tensor {
    let fw = row_sq_norms(filters);
    let k = fw.len();
    let mut sq = dots;
    for (p, row) in sq.data_mut().chunks_exact_mut(k).enumerate() {
        for (v, &nw) in row.iter_mut().zip(&fw) {
            *v = (px[p] + nw - 2.0 * *v).max(0.0);
        }
    }
    sq
}

/// Evaluates `κ(patch_p, filter_k)` for all pairs, returning `P×K` responses.
pub fn kernel_forward(patches: Tensor, filters: Tensor, spec: &KernelSpec) -> Result<(Tensor, KernelCache)> {
    let (p, n) = patches.matrix_dims()?;
    let (k, n2) = filters.matrix_dims()?;
    if n != n2 {
        return Err(Error::Dimension(format!(
            "patch length {n} (patches {:?}) differs from filter length {n2} (filters {:?})",
            patches.shape(),
            filters.shape()
        )));
    }
    spec.validate()?;
    ensure_finite(&filters, "filters")?;
    // distance kernels need the patch norms anyway; a non-finite entry shows up there
    let patch_norms = match spec.kind() {
        KernelKind::Gaussian | KernelKind::L2 => {
            let norms = row_sq_norms(&patches);
            if !norms.iter().all(|v| v.is_finite()) {
                ensure_finite(&patches, "patches")?;
            }
            norms
        }
        _ => {
            ensure_finite(&patches, "patches")?;
            Vec::new()
        }
    };

    let (responses, aux) = match *spec {
        KernelSpec::Linear => (matmul_a_bt(&patches, &filters)?, Aux::None),
        KernelSpec::Polynomial { degree, balance, .. } => {
            let mut base = matmul_a_bt(&patches, &filters)?;
            base.data_mut().iter_mut().for_each(|s| *s += balance);
            let out = powi_map(&base, degree);
            (out, Aux::Base(base))
        }
        KernelSpec::Sigmoid => {
            let base = matmul_a_bt(&patches, &filters)?;
            (base.map(f64::tanh), Aux::Base(base))
        }
        KernelSpec::Gaussian { gamma, .. } => {
            let dots = matmul_a_bt(&patches, &filters)?;
            let (out, sq_dist) = gaussian_fused(patch_norms, &filters, dots, gamma);
            (out, Aux::SqDist(sq_dist))
        }
        KernelSpec::L2 => {
            let sq_dist = squared_distances(patch_norms, &filters, matmul_a_bt(&patches, &filters)?);
            (sq_dist.map(f64::sqrt), Aux::SqDist(sq_dist))
        }
        KernelSpec::L1 => {
            let mut out = vec![0.0; p * k];
            for (pi, row) in out.chunks_exact_mut(k).enumerate() {
                let x = patches.row(pi);
                for (ki, o) in row.iter_mut().enumerate() {
                    *o = x.iter().zip(filters.row(ki)).map(|(a, b)| (a - b).abs()).sum();
                }
            }
            (Tensor::new(&[p, k], out)?, Aux::None)
        }
    };
    let cache = KernelCache {
        spec: *spec,
        patches,
        filters,
        aux,
    };
    Ok((responses, cache))
}

/// Chain rule for dot-product kernels given `M = upstream ∘ κ'(x·w)`.
fn dot_product_grads(cache: &KernelCache, m: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((matmul(m, &cache.filters)?, matmul_at_b(m, &cache.patches)?))
}

/// Chain rule for kernels of the form `f(x − w)`, whose gradient w.r.t. `x_p`
/// is `scale·Σ_k m[p,k]·(x_p − w_k)` and w.r.t. `w_k` is the negation summed
/// over patches.
fn difference_grads(cache: &KernelCache, m: &Tensor, scale: f64) -> Result<(Tensor, Tensor)> {
    let (p, k) = m.matrix_dims()?;
    let row_sums: Vec<f64> = (0..p).map(|r| m.row(r).iter().sum()).collect();
    let mut col_sums = vec![0.0; k];
    for r in 0..p {
        for (c, v) in col_sums.iter_mut().zip(m.row(r)) {
            *c += v;
        }
    }

    // d/dx: scale·(rowsum(M)∘X − M·W)
    let mut gp = matmul(m, &cache.filters)?;
    let n = cache.patches.shape()[1];
    for (r, row) in gp.data_mut().chunks_exact_mut(n).enumerate() {
        let x = cache.patches.row(r);
        for (g, &xv) in row.iter_mut().zip(x) {
            *g = scale * (row_sums[r] * xv - *g);
        }
    }
    // d/dw: scale·(colsum(M)∘W − Mᵀ·X)
    let mut gf = matmul_at_b(m, &cache.patches)?;
    for (c, row) in gf.data_mut().chunks_exact_mut(n).enumerate() {
        let w = cache.filters.row(c);
        for (g, &wv) in row.iter_mut().zip(w) {
            *g = scale * (col_sums[c] * wv - *g);
        }
    }
    Ok((gp, gf))
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

/// Back-propagates `upstream = ∂L/∂responses` through [`kernel_forward`].
pub fn kernel_backward(cache: &KernelCache, upstream: &Tensor) -> Result<KernelGrads> {
    let p = cache.patches.shape()[0];
    let k = cache.filters.shape()[0];
    upstream.expect_shape(&[p, k], "kernel upstream gradient")?;

    let (patches, filters, hyper) = match (cache.spec, &cache.aux) {
        (KernelSpec::Linear, _) => {
            let (gp, gf) = dot_product_grads(cache, upstream)?;
            (gp, gf, None)
        }
        (KernelSpec::Polynomial { degree, .. }, Aux::Base(base)) => {
            let d = f64::from(degree);
            let m = zip_map(upstream, &powi_map(base, degree - 1), |g, pw| g * d * pw);
            let hyper = m.sum();
            let (gp, gf) = dot_product_grads(cache, &m)?;
            (gp, gf, Some(hyper))
        }
        (KernelSpec::Sigmoid, Aux::Base(base)) => {
            let m = zip_map(upstream, base, |g, s| {
                let t = s.tanh();
                g * (1.0 - t * t)
            });
            let (gp, gf) = dot_product_grads(cache, &m)?;
            (gp, gf, None)
        }
        (KernelSpec::Gaussian { gamma, .. }, Aux::SqDist(sq_dist)) => {
            // ∂κ/∂x = −2γ(x−w)κ, ∂κ/∂w = 2γ(x−w)κ, ∂κ/∂γ = −‖x−w‖²κ
            let m = zip_map(upstream, &gaussian_response(sq_dist, gamma), |g, kv| g * kv);
            let hyper = -m.data().iter().zip(sq_dist.data()).map(|(a, b)| a * b).sum::<f64>();
            let (gp, gf) = difference_grads(cache, &m, -2.0 * gamma)?;
            (gp, gf, Some(hyper))
        }
        (KernelSpec::L2, Aux::SqDist(sq_dist)) => {
            // ∂κ/∂x = (x−w)/κ, ∂κ/∂w = (w−x)/κ, zero at the singularity
            let m = zip_map(upstream, sq_dist, |g, sq| {
                let dist = sq.sqrt();
                if dist < L2_SINGULARITY_EPS {
                    0.0
                } else {
                    g / dist
                }
            });
            let (gp, gf) = difference_grads(cache, &m, 1.0)?;
            (gp, gf, None)
        }
        (KernelSpec::L1, _) => {
            let n = cache.patches.shape()[1];
            let mut gp = vec![0.0; p * n];
            let mut gf = vec![0.0; k * n];
            for pi in 0..p {
                let x = cache.patches.row(pi);
                let g_row = upstream.row(pi);
                let gp_row = &mut gp[pi * n..(pi + 1) * n];
                for (ki, &g) in g_row.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let w = cache.filters.row(ki);
                    let gf_row = &mut gf[ki * n..(ki + 1) * n];
                    for i in 0..n {
                        let s = sign(x[i] - w[i]);
                        gp_row[i] += g * s;
                        gf_row[i] -= g * s;
                    }
                }
            }
            (Tensor::new(&[p, n], gp)?, Tensor::new(&[k, n], gf)?, None)
        }
        (spec, _) => {
            return Err(Error::State(format!("kernel cache does not match spec {spec}")));
        }
    };
    Ok(KernelGrads {
        patches,
        filters,
        hyper,
    })
}

/// `sign` with `sign(0) = 0`.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
