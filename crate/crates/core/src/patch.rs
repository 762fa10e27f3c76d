//! Sliding-window geometry and the im2col / col2im pair.
//!
//! `im2col` lays out every receptive field of an `N×C×H×W` batch as one row of
//! a matrix; row `r` corresponds to output position `(n, oh, ow)` in row-major
//! order and column `c·kh·kw + i·kw + j` to channel `c`, kernel offset `(i, j)`.
//! `col2im` is its exact adjoint (scatter-add).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PaddingMode {
    #[default]
    Zeros,
    /// Out-of-range indices wrap modulo the spatial extent.
    Circular,
}

impl fmt::Display for PaddingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PaddingMode::Zeros => "zeros",
            PaddingMode::Circular => "circular",
        })
    }
}

impl FromStr for PaddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" => Ok(PaddingMode::Zeros),
            "circular" => Ok(PaddingMode::Circular),
            other => Err(Error::Config(format!("unknown padding mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub dilation: (usize, usize),
    pub padding_mode: PaddingMode,
}

impl PatchGeometry {
    /// Square-stride-1, unpadded, undilated window.
    pub fn new(kernel_h: usize, kernel_w: usize) -> Self {
        Self {
            kernel: (kernel_h, kernel_w),
            stride: (1, 1),
            pad: (0, 0),
            dilation: (1, 1),
            padding_mode: PaddingMode::Zeros,
        }
    }

    pub fn with_stride(mut self, stride_h: usize, stride_w: usize) -> Self {
        self.stride = (stride_h, stride_w);
        self
    }

    pub fn with_pad(mut self, pad_h: usize, pad_w: usize) -> Self {
        self.pad = (pad_h, pad_w);
        self
    }

    pub fn with_dilation(mut self, dilation_h: usize, dilation_w: usize) -> Self {
        self.dilation = (dilation_h, dilation_w);
        self
    }

    pub fn with_padding_mode(mut self, mode: PaddingMode) -> Self {
        self.padding_mode = mode;
        self
    }

    pub fn patch_area(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            self.kernel.0,
            self.kernel.1,
            self.stride.0,
            self.stride.1,
            self.dilation.0,
            self.dilation.1,
        ];
        if extents.contains(&0) {
            return Err(Error::Geometry(format!(
                "kernel, stride and dilation must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(H_out, W_out)` for an `H×W` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let axis = |len: usize, k: usize, s: usize, p: usize, d: usize| -> Option<usize> {
            let span = d * (k - 1) + 1;
            let padded = len + 2 * p;
            (padded >= span).then(|| (padded - span) / s + 1)
        };
        let oh = axis(h, self.kernel.0, self.stride.0, self.pad.0, self.dilation.0);
        let ow = axis(w, self.kernel.1, self.stride.1, self.pad.1, self.dilation.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::Geometry(format!(
                "window {:?} (dilation {:?}, pad {:?}) does not fit a {h}x{w} input",
                self.kernel, self.dilation, self.pad
            ))),
        }
    }

    /// Source index along one axis, or `None` for a zero-padded position.
    #[inline]
    fn source(&self, out: usize, k: usize, stride: usize, pad: usize, dil: usize, len: usize) -> Option<usize> {
        let pos = (out * stride + k * dil) as isize - pad as isize;
        match self.padding_mode {
            PaddingMode::Zeros => (pos >= 0 && (pos as usize) < len).then_some(pos as usize),
            PaddingMode::Circular => Some(pos.rem_euclid(len as isize) as usize),
        }
    }
}

fn image_dims(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Dimension(format!("expected an NxCxHxW tensor, got {shape:?}"))),
    }
}

/// Patch matrix of shape `(N·H_out·W_out) × (C·kh·kw)`.
pub fn im2col(input: &Tensor, geom: &PatchGeometry) -> Result<Tensor> {
    let (_, c, _, _) = image_dims(input.shape())?;
    im2col_channels(input, 0, c, geom)
}

/// Like [`im2col`] restricted to channels `first..first + count`.
pub fn im2col_channels(input: &Tensor, first: usize, count: usize, geom: &PatchGeometry) -> Result<Tensor> {
    let (n, c, h, w) = image_dims(input.shape())?;
    if first + count > c || count == 0 {
        return Err(Error::Dimension(format!(
            "channel range {first}..{} outside {c} channels",
            first + count
        )));
    }
    let (oh, ow) = geom.output_size(h, w)?;
    let (kh, kw) = geom.kernel;
    let cols = count * kh * kw;
    let mut out = vec![0.0; n * oh * ow * cols];
    let src = input.data();

    // Source offsets are precomputed per output row/column so the inner loop
    // only indexes.
    let rows_src: Vec<Option<usize>> = (0..oh)
        .flat_map(|y| (0..kh).map(move |i| (y, i)))
        .map(|(y, i)| geom.source(y, i, geom.stride.0, geom.pad.0, geom.dilation.0, h))
        .collect();
    let cols_src: Vec<Option<usize>> = (0..ow)
        .flat_map(|x| (0..kw).map(move |j| (x, j)))
        .map(|(x, j)| geom.source(x, j, geom.stride.1, geom.pad.1, geom.dilation.1, w))
        .collect();

    let mut row = 0;
    for b in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                let dst = &mut out[row * cols..(row + 1) * cols];
                for ch in 0..count {
                    let plane = ((b * c) + first + ch) * h * w;
                    for i in 0..kh {
                        let Some(sy) = rows_src[y * kh + i] else { continue };
                        let base = ch * kh * kw + i * kw;
                        for j in 0..kw {
                            if let Some(sx) = cols_src[x * kw + j] {
                                dst[base + j] = src[plane + sy * w + sx];
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Tensor::new(&[n * oh * ow, cols], out)
}

/// Scatter-add adjoint of [`im2col`], producing a tensor of `out_shape`.
pub fn col2im(cols: &Tensor, geom: &PatchGeometry, out_shape: &[usize]) -> Result<Tensor> {
    let (_, c, _, _) = image_dims(out_shape)?;
    let mut out = Tensor::zeros(out_shape);
    col2im_channels_into(cols, geom, &mut out, 0, c)?;
    Ok(out)
}

/// Accumulates `cols` into channels `first..first + count` of `out`.
pub fn col2im_channels_into(
    cols: &Tensor,
    geom: &PatchGeometry,
    out: &mut Tensor,
    first: usize,
    count: usize,
) -> Result<()> {
    let (n, c, h, w) = image_dims(out.shape())?;
    if first + count > c || count == 0 {
        return Err(Error::Dimension(format!(
            "channel range {first}..{} outside {c} channels",
            first + count
        )));
    }
    let (oh, ow) = geom.output_size(h, w)?;
    let (kh, kw) = geom.kernel;
    let width = count * kh * kw;
    cols.expect_shape(&[n * oh * ow, width], "col2im input")?;

    let rows_src: Vec<Option<usize>> = (0..oh)
        .flat_map(|y| (0..kh).map(move |i| (y, i)))
        .map(|(y, i)| geom.source(y, i, geom.stride.0, geom.pad.0, geom.dilation.0, h))
        .collect();
    let cols_src: Vec<Option<usize>> = (0..ow)
        .flat_map(|x| (0..kw).map(move |j| (x, j)))
        .map(|(x, j)| geom.source(x, j, geom.stride.1, geom.pad.1, geom.dilation.1, w))
        .collect();

    let src = cols.data();
    let dst = out.data_mut();
    let mut row = 0;
    for b in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                let patch = &src[row * width..(row + 1) * width];
                for ch in 0..count {
                    let plane = ((b * c) + first + ch) * h * w;
                    for i in 0..kh {
                        let Some(sy) = rows_src[y * kh + i] else { continue };
                        let base = ch * kh * kw + i * kw;
                        for j in 0..kw {
                            if let Some(sx) = cols_src[x * kw + j] {
                                dst[plane + sy * w + sx] += patch[base + j];
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reads one receptive-field element straight from the image.
    #[allow(clippy::too_many_arguments)]
    fn gather(
        input: &Tensor,
        geom: &PatchGeometry,
        b: usize,
        y: usize,
        x: usize,
        ch: usize,
        i: usize,
        j: usize,
    ) -> f64 {
        let [_, c, h, w] = input.shape() else { unreachable!() };
        let (c, h, w) = (*c, *h as isize, *w as isize);
        let sy = (y * geom.stride.0 + i * geom.dilation.0) as isize - geom.pad.0 as isize;
        let sx = (x * geom.stride.1 + j * geom.dilation.1) as isize - geom.pad.1 as isize;
        let (sy, sx) = match geom.padding_mode {
            PaddingMode::Zeros if sy < 0 || sy >= h || sx < 0 || sx >= w => return 0.0,
            PaddingMode::Zeros => (sy, sx),
            PaddingMode::Circular => (sy.rem_euclid(h), sx.rem_euclid(w)),
        };
        input.data()[((b * c + ch) * h as usize + sy as usize) * w as usize + sx as usize]
    }

    #[test]
    fn one_by_one_kernel_lists_pixels() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let cols = im2col(&x, &PatchGeometry::new(1, 1)).unwrap();
        assert_eq!(cols.shape(), &[4, 1]);
        assert_eq!(cols.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn two_by_two_windows_on_three_by_three() {
        let x = Tensor::new(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let cols = im2col(&x, &PatchGeometry::new(2, 2)).unwrap();
        assert_eq!(cols.shape(), &[4, 4]);
        assert_eq!(cols.row(0), &[1.0, 2.0, 4.0, 5.0]);
        assert_eq!(cols.row(3), &[5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn strided_padded_matches_gather() {
        let x = Tensor::randn(&[2, 3, 8, 8], 11).unwrap();
        for mode in [PaddingMode::Zeros, PaddingMode::Circular] {
            let geom = PatchGeometry::new(3, 3)
                .with_stride(2, 2)
                .with_pad(1, 1)
                .with_padding_mode(mode);
            let cols = im2col(&x, &geom).unwrap();
            let (oh, ow) = geom.output_size(8, 8).unwrap();
            assert_eq!((oh, ow), (4, 4));
            let mut r = 0;
            for b in 0..2 {
                for y in 0..oh {
                    for xx in 0..ow {
                        for ch in 0..3 {
                            for i in 0..3 {
                                for j in 0..3 {
                                    let want = gather(&x, &geom, b, y, xx, ch, i, j);
                                    assert_eq!(cols.row(r)[ch * 9 + i * 3 + j], want);
                                }
                            }
                        }
                        r += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn disjoint_patches_round_trip() {
        let x = Tensor::randn(&[2, 2, 4, 5], 5).unwrap();
        let geom = PatchGeometry::new(1, 1);
        let back = col2im(&im2col(&x, &geom).unwrap(), &geom, x.shape()).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn overlap_counts_accumulate() {
        let ones = Tensor::full(&[1, 1, 3, 3], 1.0);
        let geom = PatchGeometry::new(2, 2);
        let cols = im2col(&ones, &geom).unwrap();
        let back = col2im(&cols, &geom, ones.shape()).unwrap();
        assert_eq!(back.data()[4], 4.0);
        assert_eq!(back.data()[0], 1.0);
        assert_eq!(back.data()[1], 2.0);
    }

    #[test]
    fn bad_geometry_is_rejected() {
        let x = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(matches!(im2col(&x, &PatchGeometry::new(5, 5)), Err(Error::Geometry(_))));
        assert!(matches!(
            im2col(&x, &PatchGeometry::new(2, 2).with_stride(0, 1)),
            Err(Error::Geometry(_))
        ));
        let wrong = Tensor::zeros(&[3, 4]);
        assert!(matches!(
            col2im(&wrong, &PatchGeometry::new(2, 2), &[1, 1, 3, 3]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn circular_shift_permutes_rows() {
        let (h, w) = (6, 7);
        let x = Tensor::randn(&[1, 2, h, w], 3).unwrap();
        let geom = PatchGeometry::new(3, 3)
            .with_pad(1, 1)
            .with_padding_mode(PaddingMode::Circular);
        let (dy, dx) = (2, 5);
        let mut shifted = Tensor::zeros(x.shape());
        for ch in 0..2 {
            for y in 0..h {
                for xx in 0..w {
                    shifted.data_mut()[(ch * h + (y + dy) % h) * w + (xx + dx) % w] = x.data()[(ch * h + y) * w + xx];
                }
            }
        }
        let a = im2col(&x, &geom).unwrap();
        let b = im2col(&shifted, &geom).unwrap();
        for y in 0..h {
            for xx in 0..w {
                let moved = ((y + dy) % h) * w + (xx + dx) % w;
                assert_eq!(b.row(moved), a.row(y * w + xx));
            }
        }
    }
}
