//! Linear-kernel kervolution against a direct nested-loop convolution.

use kervolution::layers::Layer;
use kervolution::{KernelSpec, Kerv2d, Kerv2dConfig, PatchGeometry, Tensor};

struct Case {
    n: usize,
    c: usize,
    k: usize,
    hw: (usize, usize),
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
    dilation: (usize, usize),
    groups: usize,
}

fn naive(x: &Tensor, w: &Tensor, b: &Tensor, cs: &Case) -> Tensor {
    let (h, wd) = cs.hw;
    let (kh, kw) = cs.kernel;
    let ho = (h + 2 * cs.pad.0 - cs.dilation.0 * (kh - 1) - 1) / cs.stride.0 + 1;
    let wo = (wd + 2 * cs.pad.1 - cs.dilation.1 * (kw - 1) - 1) / cs.stride.1 + 1;
    let (cin_g, cout_g) = (cs.c / cs.groups, cs.k / cs.groups);
    let mut out = Tensor::zeros(&[cs.n, cs.k, ho, wo]);
    for n in 0..cs.n {
        for k in 0..cs.k {
            let g = k / cout_g;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = b.data()[k];
                    for ci in 0..cin_g {
                        let c = g * cin_g + ci;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * cs.stride.0 + ky * cs.dilation.0) as isize - cs.pad.0 as isize;
                                let ix = (ox * cs.stride.1 + kx * cs.dilation.1) as isize - cs.pad.1 as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((n * cs.c + c) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((k * cin_g + ci) * kh + ky) * kw + kx];
                                s += xv * wv;
                            }
                        }
                    }
                    out.data_mut()[((n * cs.k + k) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    out
}

#[test]
fn forward_matches_direct_loops() {
    let cases = [
        Case {
            n: 2,
            c: 1,
            k: 3,
            hw: (7, 7),
            kernel: (3, 3),
            stride: (1, 1),
            pad: (0, 0),
            dilation: (1, 1),
            groups: 1,
        },
        Case {
            n: 1,
            c: 2,
            k: 4,
            hw: (8, 6),
            kernel: (3, 2),
            stride: (2, 1),
            pad: (1, 2),
            dilation: (1, 1),
            groups: 2,
        },
        Case {
            n: 3,
            c: 3,
            k: 2,
            hw: (9, 9),
            kernel: (2, 3),
            stride: (1, 2),
            pad: (1, 0),
            dilation: (2, 1),
            groups: 1,
        },
        Case {
            n: 1,
            c: 4,
            k: 4,
            hw: (5, 5),
            kernel: (1, 1),
            stride: (1, 1),
            pad: (0, 0),
            dilation: (1, 1),
            groups: 4,
        },
        Case {
            n: 2,
            c: 6,
            k: 3,
            hw: (10, 8),
            kernel: (3, 3),
            stride: (3, 2),
            pad: (2, 1),
            dilation: (2, 2),
            groups: 3,
        },
    ];
    for (i, cs) in cases.iter().enumerate() {
        let geom = PatchGeometry::new(cs.kernel.0, cs.kernel.1)
            .with_stride(cs.stride.0, cs.stride.1)
            .with_pad(cs.pad.0, cs.pad.1)
            .with_dilation(cs.dilation.0, cs.dilation.1);
        let cfg = Kerv2dConfig::new(cs.c, cs.k, geom, KernelSpec::Linear).with_groups(cs.groups);
        let mut layer = Kerv2d::new(cfg, i as u64).unwrap();
        *layer.bias_mut() = Tensor::randn(&[cs.k], 50 + i as u64).unwrap();
        let x = Tensor::randn(&[cs.n, cs.c, cs.hw.0, cs.hw.1], 100 + i as u64).unwrap();
        let got = layer.forward(&x, false).unwrap();
        let want = naive(&x, layer.weight(), layer.bias(), cs);
        assert_eq!(got.shape(), want.shape(), "case {i}");
        assert!(
            got.max_abs_diff(&want) <= 1e-12,
            "case {i}: {}",
            got.max_abs_diff(&want)
        );
    }
}

#[test]
fn one_by_one_identity_filter_passes_input_through() {
    let cfg = Kerv2dConfig::new(1, 1, PatchGeometry::new(1, 1), KernelSpec::Linear).with_bias(false);
    let mut layer = Kerv2d::new(cfg, 0).unwrap();
    layer.weight_mut().fill(1.0);
    let x = Tensor::randn(&[2, 1, 4, 5], 9).unwrap();
    assert_eq!(layer.forward(&x, false).unwrap(), x);
}
