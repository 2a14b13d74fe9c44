//! Extent arithmetic shared by the kernels, the tape and the shape tracer.

use crate::error::{Error, Result};

/// Geometry of a 2-D or 3-D (transposed) convolution.
///
/// Spatial parameters are stored as `[depth, height, width]`; a 2-D
/// convolution is the special case with unit depth kernel, unit depth
/// stride and zero depth padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeom {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub dilation: [usize; 3],
    pub spatial_rank: usize,
}

impl ConvGeom {
    pub fn conv2d(kernel: [usize; 2], stride: [usize; 2], padding: [usize; 2], dilation: [usize; 2]) -> Self {
        ConvGeom {
            kernel: [1, kernel[0], kernel[1]],
            stride: [1, stride[0], stride[1]],
            padding: [0, padding[0], padding[1]],
            dilation: [1, dilation[0], dilation[1]],
            spatial_rank: 2,
        }
    }

    pub fn conv3d(kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3], dilation: [usize; 3]) -> Self {
        ConvGeom { kernel, stride, padding, dilation, spatial_rank: 3 }
    }

    /// Square `k×k` 2-D convolution with scalar stride / padding / dilation.
    pub fn square(k: usize, stride: usize, padding: usize, dilation: usize) -> Self {
        Self::conv2d([k; 2], [stride; 2], [padding; 2], [dilation; 2])
    }

    pub fn pointwise() -> Self {
        Self::square(1, 1, 0, 1)
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.padding == [0, 0, 0]
    }

    /// Number of kernel taps (product of kernel extents).
    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Kernel extents as they appear in a weight tensor shape.
    pub fn kernel_dims(&self) -> Vec<usize> {
        self.kernel[3 - self.spatial_rank..].to_vec()
    }

    fn validate(&self) -> Result<()> {
        if self.spatial_rank != 2 && self.spatial_rank != 3 {
            return Err(Error::Config(format!("unsupported spatial rank {}", self.spatial_rank)));
        }
        for ax in 0..3 {
            if self.kernel[ax] == 0 || self.stride[ax] == 0 || self.dilation[ax] == 0 {
                return Err(Error::Config(format!(
                    "kernel, stride and dilation must be positive (got {:?}/{:?}/{:?})",
                    self.kernel, self.stride, self.dilation
                )));
            }
        }
        Ok(())
    }

    /// Forward convolution output extents for `[d, h, w]` inputs:
    /// `floor((in + 2·pad − dil·(k−1) − 1) / stride) + 1` per axis.
    pub fn conv_out(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let mut out = [0; 3];
        for ax in 0..3 {
            let span = self.dilation[ax] * (self.kernel[ax] - 1) + 1;
            let padded = input[ax] + 2 * self.padding[ax];
            if padded < span {
                return Err(Error::Config(format!(
                    "convolution axis {ax}: input {} with padding {} is smaller than the dilated kernel span {span}",
                    input[ax], self.padding[ax]
                )));
            }
            out[ax] = (padded - span) / self.stride[ax] + 1;
        }
        Ok(out)
    }

    /// Transposed convolution output extents:
    /// `(in − 1)·stride − 2·pad + dil·(k − 1) + 1` per axis.
    pub fn transpose_out(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let mut out = [0; 3];
        for ax in 0..3 {
            let full = (input[ax] - 1) * self.stride[ax] + self.dilation[ax] * (self.kernel[ax] - 1) + 1;
            let trimmed = full as isize - 2 * self.padding[ax] as isize;
            if trimmed <= 0 {
                return Err(Error::Config(format!(
                    "transposed convolution axis {ax}: computed output extent {trimmed} is not positive"
                )));
            }
            out[ax] = trimmed as usize;
        }
        Ok(out)
    }
}

/// Max-pooling window over the two trailing axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PoolGeom {
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
}

impl PoolGeom {
    pub fn new(kernel: [usize; 2], stride: [usize; 2]) -> Self {
        PoolGeom { kernel, stride }
    }

    pub fn out(&self, input: [usize; 2]) -> Result<[usize; 2]> {
        let mut out = [0; 2];
        for ax in 0..2 {
            if self.kernel[ax] == 0 || self.stride[ax] == 0 {
                return Err(Error::Config("pooling kernel and stride must be positive".into()));
            }
            if self.kernel[ax] > input[ax] {
                return Err(Error::Config(format!(
                    "pooling window {} exceeds input extent {} on axis {ax}",
                    self.kernel[ax], input[ax]
                )));
            }
            out[ax] = (input[ax] - self.kernel[ax]) / self.stride[ax] + 1;
        }
        Ok(out)
    }
}

/// Splits `[B, C, spatial…]` into batch, channels and `[d, h, w]` extents
/// (unit depth for 4-D tensors).
pub fn split_nc_spatial(shape: &[usize], rank: usize, op: &'static str) -> Result<(usize, usize, [usize; 3])> {
    if shape.len() != rank + 2 {
        return Err(Error::shape(
            op,
            format!("expected a rank-{} tensor [B, C, {} spatial], got {shape:?}", rank + 2, rank),
        ));
    }
    let spatial = if rank == 2 { [1, shape[2], shape[3]] } else { [shape[2], shape[3], shape[4]] };
    Ok((shape[0], shape[1], spatial))
}

/// Reassembles `[B, C, spatial…]` from split extents.
pub fn join_nc_spatial(batch: usize, channels: usize, spatial: [usize; 3], rank: usize) -> Vec<usize> {
    let mut s = vec![batch, channels];
    s.extend_from_slice(&spatial[3 - rank..]);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_extent_formula() {
        let g = ConvGeom::square(3, 1, 1, 1);
        assert_eq!(g.conv_out([1, 256, 64]).unwrap(), [1, 256, 64]);
        let d = ConvGeom::square(3, 1, 6, 6);
        assert_eq!(d.conv_out([1, 64, 64]).unwrap(), [1, 64, 64]);
        let t = ConvGeom::conv3d([3, 3, 3], [1, 1, 1], [0, 1, 1], [1, 1, 1]);
        assert_eq!(t.conv_out([5, 8, 8]).unwrap(), [3, 8, 8]);
        assert_eq!(t.conv_out([3, 8, 8]).unwrap(), [1, 8, 8]);
        assert!(t.conv_out([2, 8, 8]).is_err());
    }

    #[test]
    fn transpose_extent_formula() {
        let up = ConvGeom::conv2d([2, 1], [2, 1], [0, 0], [1, 1]);
        assert_eq!(up.transpose_out([1, 64, 64]).unwrap(), [1, 128, 64]);
        let padded = ConvGeom::conv2d([2, 1], [2, 1], [1, 1], [1, 1]);
        // padding 1 on a width-1 kernel axis collapses 64 → 62
        assert_eq!(padded.transpose_out([1, 64, 64]).unwrap(), [1, 126, 62]);
        let bad = ConvGeom::conv2d([1, 1], [1, 1], [1, 1], [1, 1]);
        assert!(bad.transpose_out([1, 1, 1]).is_err());
    }

    #[test]
    fn pool_extent_formula() {
        let p = PoolGeom::new([2, 1], [2, 1]);
        assert_eq!(p.out([256, 64]).unwrap(), [128, 64]);
        assert!(PoolGeom::new([3, 3], [1, 1]).out([2, 5]).is_err());
    }
}
