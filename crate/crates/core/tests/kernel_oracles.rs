mod common;

use common::rel;
use kervolution::{kernel_backward, kernel_forward, KernelSpec, Tensor};

fn rows(v: &[&[f64]]) -> Tensor {
    Tensor::from_rows(v).unwrap()
}

fn single(x: &[f64], w: &[f64], spec: KernelSpec) -> f64 {
    kernel_forward(rows(&[x]), rows(&[w]), &spec).unwrap().0.data()[0]
}

fn all_kernels() -> Vec<KernelSpec> {
    vec![
        KernelSpec::Linear,
        KernelSpec::polynomial(3, 1.0),
        KernelSpec::polynomial(2, 0.5),
        KernelSpec::gaussian(0.7),
        KernelSpec::L1,
        KernelSpec::L2,
        KernelSpec::Sigmoid,
    ]
}

#[test]
fn reference_values() {
    assert_eq!(single(&[3.0, 0.0], &[0.0, 4.0], KernelSpec::L2), 5.0);
    assert_eq!(single(&[3.0, 0.0], &[0.0, 4.0], KernelSpec::L1), 7.0);
    assert_eq!(single(&[1.0, 2.0], &[1.0, 2.0], KernelSpec::gaussian(3.0)), 1.0);
    assert_eq!(single(&[1.0, 0.0], &[1.0, 0.0], KernelSpec::polynomial(3, 1.0)), 8.0);
    assert_eq!(single(&[1.0, 2.0], &[3.0, -1.0], KernelSpec::Linear), 1.0);
    assert!((single(&[0.5], &[1.0], KernelSpec::Sigmoid) - 0.5f64.tanh()).abs() < 1e-15);
}

#[test]
fn every_kernel_is_symmetric() {
    let a = Tensor::randn(&[6, 9], 1).unwrap();
    let b = Tensor::randn(&[5, 9], 2).unwrap();
    for spec in all_kernels() {
        let ab = kernel_forward(a.clone(), b.clone(), &spec).unwrap().0;
        let ba = kernel_forward(b.clone(), a.clone(), &spec).unwrap().0;
        for i in 0..6 {
            for j in 0..5 {
                let (x, y) = (ab.data()[i * 5 + j], ba.data()[j * 6 + i]);
                assert!(rel(x, y) < 1e-12, "{spec}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn expanded_distances_match_direct_sums() {
    let x = Tensor::uniform(&[40, 25], -1.0, 1.0, 3).unwrap();
    let w = Tensor::uniform(&[7, 25], -1.0, 1.0, 4).unwrap();
    let gamma = 0.3;
    let g = kernel_forward(x.clone(), w.clone(), &KernelSpec::gaussian(gamma))
        .unwrap()
        .0;
    let l2 = kernel_forward(x.clone(), w.clone(), &KernelSpec::L2).unwrap().0;
    for p in 0..40 {
        for f in 0..7 {
            let d2: f64 = x.row(p).iter().zip(w.row(f)).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!(rel(g.data()[p * 7 + f], (-gamma * d2).exp()) < 1e-12);
            assert!(rel(l2.data()[p * 7 + f], d2.sqrt()) < 1e-12);
        }
    }
}

#[test]
fn polynomial_matches_expanded_power() {
    // (x·w + c)^3 via the binomial expansion in the dot product
    let x = Tensor::randn(&[30, 5], 5).unwrap();
    let w = Tensor::randn(&[4, 5], 6).unwrap();
    let c = 0.75;
    let k = kernel_forward(x.clone(), w.clone(), &KernelSpec::polynomial(3, c))
        .unwrap()
        .0;
    for p in 0..30 {
        for f in 0..4 {
            let s: f64 = x.row(p).iter().zip(w.row(f)).map(|(a, b)| a * b).sum();
            let expanded = s * s * s + 3.0 * c * s * s + 3.0 * c * c * s + c * c * c;
            // the expansion cancels near s = -c; bound by the size of its terms
            let scale = (s.abs() + c).powi(3);
            assert!((k.data()[p * 4 + f] - expanded).abs() <= 1e-12 * scale);
        }
    }
}

#[test]
fn gaussian_gradients_follow_closed_form() {
    let (x, w, gamma) = ([0.3, -0.2, 0.9], [0.1, 0.4, 0.5], 1.3);
    let spec = KernelSpec::gaussian(gamma).learnable();
    let (out, cache) = kernel_forward(rows(&[&x]), rows(&[&w]), &spec).unwrap();
    let k = out.data()[0];
    let g = kernel_backward(&cache, &Tensor::full(&[1, 1], 1.0)).unwrap();
    let d2: f64 = x.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum();
    for i in 0..3 {
        assert!(rel(g.filters.data()[i], 2.0 * gamma * (x[i] - w[i]) * k) < 1e-12);
        assert!(rel(g.patches.data()[i], -2.0 * gamma * (x[i] - w[i]) * k) < 1e-12);
    }
    assert!(rel(g.hyper.unwrap(), -d2 * k) < 1e-12);
}

#[test]
fn polynomial_balance_gradient() {
    let spec = KernelSpec::polynomial(3, 1.0).learnable();
    let (_, cache) = kernel_forward(rows(&[&[1.0, 0.0]]), rows(&[&[1.0, 0.0]]), &spec).unwrap();
    let g = kernel_backward(&cache, &Tensor::full(&[1, 1], 1.0)).unwrap();
    assert!((g.hyper.unwrap() - 12.0).abs() < 1e-12);
}

#[test]
fn distance_gradients_at_ties_are_zero() {
    let x = [0.5, -1.0];
    for spec in [KernelSpec::L1, KernelSpec::L2] {
        let (_, cache) = kernel_forward(rows(&[&x]), rows(&[&x]), &spec).unwrap();
        let g = kernel_backward(&cache, &Tensor::full(&[1, 1], 1.0)).unwrap();
        assert!(
            g.filters.data().iter().chain(g.patches.data()).all(|&v| v == 0.0),
            "{spec}"
        );
    }
}

#[test]
fn non_finite_inputs_are_rejected() {
    for spec in all_kernels() {
        let bad = rows(&[&[f64::NAN, 1.0]]);
        assert!(
            kernel_forward(bad.clone(), rows(&[&[1.0, 1.0]]), &spec).is_err(),
            "{spec}"
        );
        assert!(kernel_forward(rows(&[&[1.0, 1.0]]), bad, &spec).is_err(), "{spec}");
    }
    assert!(kernel_forward(rows(&[&[1.0, 2.0]]), rows(&[&[1.0, 2.0, 3.0]]), &KernelSpec::Linear).is_err());
}
