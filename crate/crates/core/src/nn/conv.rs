//! im2col-style unfolding so a 2-D convolution becomes one matrix product.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Shape bookkeeping for a convolution over `channels x height x width`
/// inputs stored channel-major in a flat row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::invalid("convolution needs non-zero channels, kernel and stride"));
        }
        let (ph, pw) = (self.height + 2 * self.padding, self.width + 2 * self.padding);
        if self.kernel > ph || self.kernel > pw {
            return Err(Error::invalid(format!(
                "kernel {} larger than padded input {}x{}",
                self.kernel, ph, pw
            )));
        }
        Ok(())
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Number of output locations, `h_o * w_o`.
    pub fn locations(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Flattened patch length, `C_i * k * k`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    /// Input pixel index for patch entry `col` at output location `loc`, or
    /// `None` when it falls in the zero padding.
    #[inline]
    fn source(&self, loc: usize, col: usize) -> Option<usize> {
        let wo = self.out_width();
        let (oy, ox) = (loc / wo, loc % wo);
        let kk = self.kernel * self.kernel;
        let c = col / kk;
        let (ky, kx) = ((col % kk) / self.kernel, col % self.kernel);
        let y = (oy * self.stride + ky) as isize - self.padding as isize;
        let x = (ox * self.stride + kx) as isize - self.padding as isize;
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            None
        } else {
            Some(c * self.height * self.width + y as usize * self.width + x as usize)
        }
    }
}

/// Unfolds one sample into an `h_o*w_o x C_i*k*k` patch matrix.
///
/// Row `p` is the receptive field of output location `p` (row-major over the
/// output grid); columns run channel, kernel row, kernel column.
pub fn unfold(input: &[f64], geom: &ConvGeometry) -> Result<Matrix> {
    geom.validate()?;
    if input.len() != geom.input_len() {
        return Err(Error::Shape(format!(
            "unfold input has {} values, geometry expects {}",
            input.len(),
            geom.input_len()
        )));
    }
    let (locs, plen) = (geom.locations(), geom.patch_len());
    let mut out = Matrix::zeros(locs, plen);
    for loc in 0..locs {
        let row = out.row_mut(loc);
        for (col, slot) in row.iter_mut().enumerate() {
            if let Some(src) = geom.source(loc, col) {
                *slot = input[src];
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`unfold`]: scatters patch gradients back onto the input grid.
pub fn fold(patches: &Matrix, geom: &ConvGeometry) -> Result<Vec<f64>> {
    if patches.shape() != (geom.locations(), geom.patch_len()) {
        return Err(Error::Shape(format!(
            "fold expects {}x{} patches, got {}x{}",
            geom.locations(),
            geom.patch_len(),
            patches.rows(),
            patches.cols()
        )));
    }
    let mut out = vec![0.0; geom.input_len()];
    for loc in 0..patches.rows() {
        for (col, &g) in patches.row(loc).iter().enumerate() {
            if let Some(src) = geom.source(loc, col) {
                out[src] += g;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(c: usize, h: usize, w: usize, k: usize, stride: usize, padding: usize) -> ConvGeometry {
        ConvGeometry {
            in_channels: c,
            height: h,
            width: w,
            kernel: k,
            stride,
            padding,
        }
    }

    #[test]
    fn hand_enumerated_2x2_patches() {
        let input: Vec<f64> = (1..=9).map(f64::from).collect();
        let u = unfold(&input, &geom(1, 3, 3, 2, 1, 0)).unwrap();
        assert_eq!(u.shape(), (4, 4));
        assert_eq!(u.row(0), &[1.0, 2.0, 4.0, 5.0]);
        assert_eq!(u.row(1), &[2.0, 3.0, 5.0, 6.0]);
        assert_eq!(u.row(2), &[4.0, 5.0, 7.0, 8.0]);
        assert_eq!(u.row(3), &[5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn pointwise_kernel_is_pixel_matrix() {
        let input: Vec<f64> = (0..12).map(f64::from).collect();
        let g = geom(3, 2, 2, 1, 1, 0);
        let u = unfold(&input, &g).unwrap();
        assert_eq!(u.shape(), (4, 3));
        for p in 0..4 {
            for c in 0..3 {
                assert_eq!(u[(p, c)], input[c * 4 + p]);
            }
        }
    }

    #[test]
    fn padding_inserts_zeros() {
        let u = unfold(&[1.0], &geom(1, 1, 1, 3, 1, 1)).unwrap();
        assert_eq!(u.shape(), (1, 9));
        assert_eq!(u.row(0), &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn stride_skips_locations() {
        let g = geom(1, 5, 5, 3, 2, 0);
        assert_eq!((g.out_height(), g.out_width()), (2, 2));
    }

    #[test]
    fn oversized_kernel_rejected() {
        assert!(unfold(&[0.0; 4], &geom(1, 2, 2, 3, 1, 0)).is_err());
        assert!(unfold(&[0.0; 4], &geom(1, 2, 2, 3, 1, 1)).is_ok());
    }

    #[test]
    fn fold_is_adjoint_of_unfold() {
        // <unfold(x), P> == <x, fold(P)>
        let g = geom(2, 4, 3, 2, 1, 1);
        let x: Vec<f64> = (0..g.input_len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut p = Matrix::zeros(g.locations(), g.patch_len());
        for (i, v) in p.as_mut_slice().iter_mut().enumerate() {
            *v = (i as f64 * 0.11).cos();
        }
        let u = unfold(&x, &g).unwrap();
        let lhs: f64 = u.as_slice().iter().zip(p.as_slice()).map(|(a, b)| a * b).sum();
        let f = fold(&p, &g).unwrap();
        let rhs: f64 = x.iter().zip(&f).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
