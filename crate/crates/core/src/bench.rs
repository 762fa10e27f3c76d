//! Forward-pass timing of kernel maps against a quadratic Volterra baseline.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::kernels::{kernel_forward, KernelKind, KernelSpec};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchOp {
    Kernel(KernelKind),
    /// `xᵀW₂x + w₁ᵀx` with upper-triangular `W₂`.
    Volterra2,
}

impl BenchOp {
    /// The kernel a kernel op is timed with.
    pub fn spec(self) -> Option<KernelSpec> {
        let BenchOp::Kernel(kind) = self else { return None };
        Some(match kind {
            KernelKind::Linear => KernelSpec::Linear,
            KernelKind::Polynomial => KernelSpec::polynomial(3, 1.0),
            KernelKind::Gaussian => KernelSpec::gaussian(1.0),
            KernelKind::L1 => KernelSpec::L1,
            KernelKind::L2 => KernelSpec::L2,
            KernelKind::Sigmoid => KernelSpec::Sigmoid,
        })
    }
}

impl fmt::Display for BenchOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchOp::Kernel(k) => f.write_str(k.name()),
            BenchOp::Volterra2 => f.write_str("volterra2"),
        }
    }
}

impl FromStr for BenchOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "volterra2" {
            return Ok(BenchOp::Volterra2);
        }
        KernelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .map(BenchOp::Kernel)
            .ok_or_else(|| Error::Config(format!("unknown bench operator `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchCase {
    pub op: BenchOp,
    /// Patch length.
    pub n: usize,
    pub patches: usize,
    pub filters: usize,
    pub reps: usize,
}

impl BenchCase {
    pub fn new(op: BenchOp, n: usize, patches: usize, filters: usize) -> Self {
        Self {
            op,
            n,
            patches,
            filters,
            reps: 5,
        }
    }

    /// Multiply-accumulate count of one forward pass.
    pub fn ops_estimate(&self) -> u64 {
        let (n, p, k) = (self.n as u64, self.patches as u64, self.filters as u64);
        match self.op {
            BenchOp::Volterra2 => p * n * (n + 1) / 2 + p * k * (n * (n + 1) / 2 + n),
            BenchOp::Kernel(_) => p * k * n,
        }
    }
}

/// Extra parameters per filter of the quadratic baseline: `n(n+1)/2 + n`.
pub fn volterra_param_count(n: usize) -> usize {
    n * (n + 1) / 2 + n
}

/// Quadratic Volterra filter response for every patch/filter pair.
/// `quadratic` holds each filter's upper triangle row by row.
pub fn volterra_forward(patches: &Tensor, linear: &Tensor, quadratic: &Tensor) -> Result<Tensor> {
    let (p, n) = patches.matrix_dims()?;
    let (k, n1) = linear.matrix_dims()?;
    let tri = n * (n + 1) / 2;
    if n1 != n {
        return Err(Error::Dimension(format!(
            "linear filters {:?} vs patches {:?}",
            linear.shape(),
            patches.shape()
        )));
    }
    quadratic.expect_shape(&[k, tri], "volterra quadratic filters")?;
    let mut out = vec![0.0; p * k];
    let mut outer = vec![0.0; tri];
    for pi in 0..p {
        let x = patches.row(pi);
        let mut at = 0;
        for i in 0..n {
            for j in i..n {
                outer[at] = x[i] * x[j];
                at += 1;
            }
        }
        for ki in 0..k {
            let quad: f64 = outer.iter().zip(quadratic.row(ki)).map(|(a, b)| a * b).sum();
            let lin: f64 = x.iter().zip(linear.row(ki)).map(|(a, b)| a * b).sum();
            out[pi * k + ki] = quad + lin;
        }
    }
    Tensor::new(&[p, k], out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub case: BenchCase,
    pub median_seconds: f64,
    pub ops: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub const CSV_HEADER: &'static str = "operator,n,P,K,median_seconds";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let c = &r.case;
            let _ = writeln!(
                out,
                "{},{},{},{},{:.9}",
                c.op, c.n, c.patches, c.filters, r.median_seconds
            );
        }
        out
    }

    pub fn time_of(&self, op: BenchOp, n: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.case.op == op && r.case.n == n)
            .map(|r| r.median_seconds)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Times one case: a discarded warm-up, then the median of `reps` runs.
pub fn run_case(case: &BenchCase, seed: u64) -> Result<BenchRow> {
    if case.reps < 3 {
        return Err(Error::Argument(format!(
            "bench needs >= 3 repetitions, got {}",
            case.reps
        )));
    }
    let scale = 1.0 / (case.n as f64).sqrt();
    let patches = Tensor::randn(&[case.patches, case.n], seed)?.map(|v| v * scale);
    let filters = Tensor::randn(&[case.filters, case.n], seed.wrapping_add(1))?.map(|v| v * scale);
    let mut times = Vec::with_capacity(case.reps);

    match case.op {
        BenchOp::Kernel(_) => {
            let spec = case.op.spec().expect("kernel op");
            for rep in 0..=case.reps {
                let (p, f) = (patches.clone(), filters.clone());
                let start = Instant::now();
                let (out, _cache) = kernel_forward(p, f, &spec)?;
                let elapsed = start.elapsed().as_secs_f64();
                std::hint::black_box(&out);
                if rep > 0 {
                    times.push(elapsed);
                }
            }
        }
        BenchOp::Volterra2 => {
            let tri = case.n * (case.n + 1) / 2;
            let quadratic = Tensor::randn(&[case.filters, tri], seed.wrapping_add(2))?.map(|v| v * scale * scale);
            for rep in 0..=case.reps {
                let start = Instant::now();
                let out = volterra_forward(&patches, &filters, &quadratic)?;
                let elapsed = start.elapsed().as_secs_f64();
                std::hint::black_box(&out);
                if rep > 0 {
                    times.push(elapsed);
                }
            }
        }
    }
    Ok(BenchRow {
        case: *case,
        median_seconds: median(times),
        ops: case.ops_estimate(),
    })
}

pub fn run_bench(cases: &[BenchCase]) -> Result<BenchTable> {
    let rows = cases
        .iter()
        .enumerate()
        .map(|(i, c)| run_case(c, 1000 + i as u64))
        .collect::<Result<_>>()?;
    Ok(BenchTable { rows })
}

/// The comparison grid: every kernel at `n = 25, P = 10⁴, K = 16`, plus
/// scaling sweeps in `n` for the Volterra baseline and the L¹ kernel.
pub fn default_cases() -> Vec<BenchCase> {
    let mut cases: Vec<BenchCase> = KernelKind::ALL
        .into_iter()
        .map(|k| BenchCase::new(BenchOp::Kernel(k), 25, 10_000, 16))
        .collect();
    for n in [32, 64, 128, 256] {
        cases.push(BenchCase::new(BenchOp::Volterra2, n, 1_000, 16));
    }
    for n in [32, 64, 128, 256] {
        cases.push(BenchCase::new(BenchOp::Kernel(KernelKind::L1), n, 2_000, 16));
    }
    cases
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volterra_matches_direct_quadratic_form() {
        let n = 4;
        let x = Tensor::randn(&[3, n], 1).unwrap();
        let w1 = Tensor::randn(&[2, n], 2).unwrap();
        let w2 = Tensor::randn(&[2, n * (n + 1) / 2], 3).unwrap();
        let out = volterra_forward(&x, &w1, &w2).unwrap();
        for p in 0..3 {
            for k in 0..2 {
                // expand the packed triangle into a dense upper-triangular matrix
                let mut dense = vec![0.0; n * n];
                let mut at = 0;
                for i in 0..n {
                    for j in i..n {
                        dense[i * n + j] = w2.row(k)[at];
                        at += 1;
                    }
                }
                let xr = x.row(p);
                let mut want: f64 = xr.iter().zip(w1.row(k)).map(|(a, b)| a * b).sum();
                for i in 0..n {
                    for j in 0..n {
                        want += xr[i] * dense[i * n + j] * xr[j];
                    }
                }
                assert!((out.data()[p * 2 + k] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn volterra_parameter_count() {
        assert_eq!(volterra_param_count(25), 325 + 25);
        for n in [32, 64, 128] {
            assert_eq!(volterra_param_count(n), n * (n + 1) / 2 + n);
        }
    }

    #[test]
    fn csv_layout_and_rep_floor() {
        let case = BenchCase {
            reps: 3,
            ..BenchCase::new(BenchOp::Kernel(KernelKind::Polynomial), 9, 50, 4)
        };
        let table = run_bench(&[case]).unwrap();
        let csv = table.to_csv();
        assert!(csv.starts_with("operator,n,P,K,median_seconds\npolynomial,9,50,4,"));
        assert!(run_case(&BenchCase { reps: 2, ..case }, 0).is_err());
        assert_eq!("volterra2".parse::<BenchOp>().unwrap(), BenchOp::Volterra2);
        assert_eq!("l2".parse::<BenchOp>().unwrap(), BenchOp::Kernel(KernelKind::L2));
    }
}
