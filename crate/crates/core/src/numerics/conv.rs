use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding of `(k - 1) / 2`; preserves `H x W` at stride 1.
    Same,
    Valid,
}

/// Resolved shapes for one 2-D convolution. Layouts are row-major:
/// input `H x W x Cin`, kernel `kh x kw x Cin x Cout`, output `Ho x Wo x Cout`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        (in_h, in_w, cin): (usize, usize, usize),
        (kh, kw, cout): (usize, usize, usize),
        padding: Padding,
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        let (pad_h, pad_w) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::shape(
                        "conv2d",
                        format!("same padding needs odd kernel, got {kh}x{kw}"),
                    ));
                }
                ((kh - 1) / 2, (kw - 1) / 2)
            }
            Padding::Valid => (0, 0),
        };
        if in_h + 2 * pad_h < kh || in_w + 2 * pad_w < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than input {in_h}x{in_w}"),
            ));
        }
        let out_h = (in_h + 2 * pad_h - kh) / stride + 1;
        let out_w = (in_w + 2 * pad_w - kw) / stride + 1;
        Ok(Self {
            in_h,
            in_w,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad_h,
            pad_w,
            out_h,
            out_w,
        })
    }

    pub fn input_len(&self) -> usize {
        self.in_h * self.in_w * self.cin
    }

    pub fn kernel_len(&self) -> usize {
        self.kh * self.kw * self.cin * self.cout
    }

    pub fn output_len(&self) -> usize {
        self.out_h * self.out_w * self.cout
    }

    /// Input row for output row `o` and kernel row `k`, if inside the image.
    #[inline]
    fn in_row(&self, o: usize, k: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.pad_h).filter(|&r| r < self.in_h)
    }

    #[inline]
    fn in_col(&self, o: usize, k: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.pad_w).filter(|&c| c < self.in_w)
    }

    /// `out = conv(input, kernel) + bias`. Overwrites `out`.
    pub fn forward(&self, input: &[f64], kernel: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
        assert_eq!(input.len(), self.input_len());
        assert_eq!(kernel.len(), self.kernel_len());
        assert_eq!(out.len(), self.output_len());
        let cout = self.cout;
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let o = &mut out[(oy * self.out_w + ox) * cout..][..cout];
                match bias {
                    Some(b) => o.copy_from_slice(b),
                    None => o.fill(0.0),
                }
                for ky in 0..self.kh {
                    let Some(iy) = self.in_row(oy, ky) else { continue };
                    for kx in 0..self.kw {
                        let Some(ix) = self.in_col(ox, kx) else { continue };
                        let px = &input[(iy * self.in_w + ix) * self.cin..][..self.cin];
                        let kbase = (ky * self.kw + kx) * self.cin;
                        for (ci, &x) in px.iter().enumerate() {
                            let krow = &kernel[(kbase + ci) * cout..][..cout];
                            for (acc, &k) in o.iter_mut().zip(krow) {
                                *acc += x * k;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates `dkernel` (and `dinput` when given) from the output
    /// gradient. Bias gradient is the per-channel sum of `dout`.
    pub fn backward(
        &self,
        input: &[f64],
        kernel: &[f64],
        dout: &[f64],
        dkernel: &mut [f64],
        mut dinput: Option<&mut [f64]>,
    ) {
        assert_eq!(dout.len(), self.output_len());
        assert_eq!(dkernel.len(), self.kernel_len());
        let cout = self.cout;
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let g = &dout[(oy * self.out_w + ox) * cout..][..cout];
                for ky in 0..self.kh {
                    let Some(iy) = self.in_row(oy, ky) else { continue };
                    for kx in 0..self.kw {
                        let Some(ix) = self.in_col(ox, kx) else { continue };
                        let pbase = (iy * self.in_w + ix) * self.cin;
                        let kbase = (ky * self.kw + kx) * self.cin;
                        for ci in 0..self.cin {
                            let x = input[pbase + ci];
                            let off = (kbase + ci) * cout;
                            let dk = &mut dkernel[off..off + cout];
                            for (d, &gv) in dk.iter_mut().zip(g) {
                                *d += x * gv;
                            }
                            if let Some(di) = dinput.as_deref_mut() {
                                let krow = &kernel[off..off + cout];
                                di[pbase + ci] +=
                                    krow.iter().zip(g).map(|(k, gv)| k * gv).sum::<f64>();
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geometry_for(input: &Tensor, kernel: &Tensor, padding: Padding, stride: usize) -> Result<ConvGeometry> {
    let &[h, w, cin] = input.shape() else {
        return Err(Error::shape("conv2d", format!("input must be HxWxC, got {:?}", input.shape())));
    };
    let &[kh, kw, kcin, cout] = kernel.shape() else {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be khxkwxCinxCout, got {:?}", kernel.shape()),
        ));
    };
    if kcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels but kernel expects {kcin}"),
        ));
    }
    ConvGeometry::new((h, w, cin), (kh, kw, cout), padding, stride)
}

/// Stride-1 convolution (cross-correlation, no kernel flip).
pub fn conv2d(input: &Tensor, kernel: &Tensor, padding: Padding) -> Result<Tensor> {
    conv2d_strided(input, kernel, padding, 1)
}

pub fn conv2d_strided(input: &Tensor, kernel: &Tensor, padding: Padding, stride: usize) -> Result<Tensor> {
    let g = geometry_for(input, kernel, padding, stride)?;
    let mut out = vec![0.0; g.output_len()];
    g.forward(input.data(), kernel.data(), None, &mut out);
    Tensor::new(vec![g.out_h, g.out_w, g.cout], out)
}
