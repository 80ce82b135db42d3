//! Patch extraction for convolutions on NHWC tensors.
//!
//! A `k×k` convolution is computed as `im2col(x) · W`, which keeps both the
//! forward and the backward pass inside two dense matmuls. The backward of the
//! patch extraction is the scatter-add `col2im`, and vice versa.

use candle_core::{CpuStorage, CustomOp1, Layout, Result, Shape, Tensor, WithDType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PatchGeometry {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.height + 2 * self.pad - self.kernel) / self.stride + 1,
            (self.width + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn col_shape(&self) -> (usize, usize) {
        let (ho, wo) = self.out_hw();
        (self.batch * ho * wo, self.kernel * self.kernel * self.channels)
    }

    /// Visits every (column offset, image offset) pair that lies inside the image.
    #[inline]
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let (ho, wo) = self.out_hw();
        let (k, c) = (self.kernel, self.channels);
        let mut col = 0;
        for b in 0..self.batch {
            for oy in 0..ho {
                for ox in 0..wo {
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if iy >= 0 && (iy as usize) < self.height && ix >= 0 && (ix as usize) < self.width {
                                f(col, ((b * self.height + iy as usize) * self.width + ix as usize) * c);
                            }
                            col += c;
                        }
                    }
                }
            }
        }
    }

    fn gather<T: WithDType>(&self, src: &[T]) -> Vec<T> {
        let (rows, cols) = self.col_shape();
        let c = self.channels;
        let mut out = vec![T::zero(); rows * cols];
        self.for_each(|o, i| out[o..o + c].copy_from_slice(&src[i..i + c]));
        out
    }

    fn scatter<T: WithDType>(&self, src: &[T]) -> Vec<T> {
        let c = self.channels;
        let mut out = vec![T::zero(); self.batch * self.height * self.width * c];
        self.for_each(|o, i| {
            for (dst, v) in out[i..i + c].iter_mut().zip(&src[o..o + c]) {
                *dst += *v;
            }
        });
        out
    }
}

struct Im2Col(PatchGeometry);
struct Col2Im(PatchGeometry);

fn contiguous_slice<'a, T: WithDType>(s: &'a [T], l: &Layout) -> Result<&'a [T]> {
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&s[a..b]),
        None => candle_core::bail!("patch ops expect contiguous input"),
    }
}

macro_rules! dispatch {
    ($storage:expr, $layout:expr, $f:expr) => {
        match $storage {
            CpuStorage::F32(v) => CpuStorage::F32($f(contiguous_slice(v, $layout)?)),
            CpuStorage::F64(v) => CpuStorage::F64($f(contiguous_slice(v, $layout)?)),
            _ => candle_core::bail!("patch ops support f32 and f64 only"),
        }
    };
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        let g = self.0;
        let out = dispatch!(s, l, |v| g.gather(v));
        Ok((out, Shape::from(g.col_shape())))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Col2Im(self.0))?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        let g = self.0;
        let out = dispatch!(s, l, |v| g.scatter(v));
        Ok((out, Shape::from((g.batch, g.height, g.width, g.channels))))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Im2Col(self.0))?))
    }
}

/// Extracts `kernel×kernel` patches of an NHWC tensor into a `(B·Ho·Wo, k·k·C)` matrix.
pub fn im2col(x: &Tensor, kernel: usize, stride: usize, pad: usize) -> Result<Tensor> {
    let (batch, height, width, channels) = x.dims4()?;
    if height + 2 * pad < kernel || width + 2 * pad < kernel {
        candle_core::bail!("kernel {kernel} larger than padded input {height}x{width}");
    }
    let g = PatchGeometry { batch, height, width, channels, kernel, stride, pad };
    x.contiguous()?.apply_op1(Im2Col(g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    #[test]
    fn patches_match_direct_convolution() -> Result<()> {
        let dev = Device::Cpu;
        let x = Tensor::arange(0f64, 2. * 5. * 4. * 3., &dev)?.reshape((2, 5, 4, 3))?;
        let w = Tensor::arange(0f64, 27. * 2., &dev)?.affine(0.01, -0.2)?.reshape((27, 2))?;
        for &(stride, pad) in &[(1, 1), (2, 1), (1, 0)] {
            let ours = im2col(&x, 3, stride, pad)?.matmul(&w)?;
            // candle's NCHW conv with the weight rearranged to (out, in, ky, kx)
            let w_nchw = w.reshape((3, 3, 3, 2))?.permute((3, 2, 0, 1))?.contiguous()?;
            let reference = x.permute((0, 3, 1, 2))?.contiguous()?.conv2d(&w_nchw, pad, stride, 1, 1)?;
            let reference = reference.permute((0, 2, 3, 1))?.flatten_to(2)?;
            let diff = (ours - reference)?.abs()?.max_all()?.to_scalar::<f64>()?;
            assert!(diff < 1e-9, "stride {stride} pad {pad}: {diff}");
        }
        Ok(())
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() -> Result<()> {
        // <im2col(x), y> == <x, col2im(y)> checked through autograd.
        let dev = Device::Cpu;
        let x = Var::from_tensor(&Tensor::randn(0f64, 1., (2, 6, 6, 3), &dev)?)?;
        let y = Tensor::randn(0f64, 1., (2 * 3 * 3, 27), &dev)?;
        let inner = (im2col(x.as_tensor(), 3, 2, 1)? * &y)?.sum_all()?;
        let grads = inner.backward()?;
        let gx = grads.get(x.as_tensor()).unwrap();
        let lhs = inner.to_scalar::<f64>()?;
        let rhs = (x.as_tensor() * gx)?.sum_all()?.to_scalar::<f64>()?;
        assert!((lhs - rhs).abs() < 1e-9);
        Ok(())
    }
}
