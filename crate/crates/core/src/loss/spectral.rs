use crate::autodiff::{Graph, NodeId};
use crate::error::{KaeError, Result};
use crate::linalg::{fft2, twiddle};
use crate::tensor::{FieldShape, Tensor};

/// `(cos, sin)` DFT matrices of size `n`: entry `(k, m)` is the phase of
/// `2πkm/n`.
fn dft_matrices(n: usize) -> (Tensor, Tensor) {
    let mut c = vec![0.0; n * n];
    let mut s = vec![0.0; n * n];
    for k in 0..n {
        for m in 0..n {
            // twiddle(p, n) = exp(−2πip/n)
            let w = twiddle((k * m) % n, n);
            c[k * n + m] = w.re;
            s[k * n + m] = -w.im;
        }
    }
    (
        Tensor::new(vec![n, n], c).expect("square"),
        Tensor::new(vec![n, n], s).expect("square"),
    )
}

/// `‖|F(x̂)| − |F(x)|‖₁ + ‖Re F(x̂) − Re F(x)‖² + ‖Im F(x̂) − Im F(x)‖²`,
/// with `F` the unnormalized 2-D DFT of each channel, summed over channels
/// and averaged over the batch.
///
/// The transform is applied as dense DFT matrices so gradients flow through
/// it; [`loss_spectral_value`] evaluates the same quantity with the FFT.
pub fn loss_spectral(g: &mut Graph, xhat: NodeId, x: NodeId, shape: FieldShape) -> Result<NodeId> {
    if g.shape(xhat) != g.shape(x) {
        return Err(KaeError::shape(
            "loss_spectral",
            format!("{:?} vs {:?}", g.shape(xhat), g.shape(x)),
        ));
    }
    let batch = match g.shape(x) {
        [b, n] if *n == shape.numel() && *b > 0 => *b,
        s => {
            return Err(KaeError::shape(
                "loss_spectral",
                format!("expected [batch, {}], got {s:?}", shape.numel()),
            ))
        }
    };
    let (h, w) = (shape.height, shape.width);
    let (ch, sh) = dft_matrices(h);
    let (cw, sw) = dft_matrices(w);
    let ch = g.constant(ch);
    let sh = g.constant(sh);
    let cw = g.constant(cw);
    let sw = g.constant(sw);

    let parts = |g: &mut Graph, field: NodeId| -> Result<(NodeId, NodeId, NodeId)> {
        let f = g.reshape(field, &[batch * shape.channels, h, w])?;
        let chx = g.matmul(ch, f)?;
        let shx = g.matmul(sh, f)?;
        let a = g.matmul(chx, cw)?;
        let b = g.matmul(shx, sw)?;
        let re = g.sub(a, b)?;
        let c = g.matmul(shx, cw)?;
        let d = g.matmul(chx, sw)?;
        let im = g.add(c, d)?;
        let im = g.scale(im, -1.0)?;
        let re2 = g.square(re)?;
        let im2 = g.square(im)?;
        let p = g.add(re2, im2)?;
        let amp = g.sqrt(p)?;
        Ok((re, im, amp))
    };
    let (re_a, im_a, amp_a) = parts(g, xhat)?;
    let (re_b, im_b, amp_b) = parts(g, x)?;

    let da = g.sub(amp_a, amp_b)?;
    let da2 = g.square(da)?;
    let l1 = g.sqrt(da2)?;
    let l1 = g.sum(l1)?;
    let dre = g.sub(re_a, re_b)?;
    let dre = g.square(dre)?;
    let dre = g.sum(dre)?;
    let dim = g.sub(im_a, im_b)?;
    let dim = g.square(dim)?;
    let dim = g.sum(dim)?;
    let s = g.add(l1, dre)?;
    let s = g.add(s, dim)?;
    g.scale(s, 1.0 / batch as f64)
}

/// [`loss_spectral`] on plain rows `[B·C·H·W]`, through the FFT.
pub fn loss_spectral_value(
    xhat: &[f64],
    x: &[f64],
    batch: usize,
    shape: FieldShape,
) -> Result<f64> {
    if xhat.len() != x.len() || x.len() != batch * shape.numel() || batch == 0 {
        return Err(KaeError::shape(
            "loss_spectral",
            format!(
                "{} and {} values for {batch} fields of {}",
                xhat.len(),
                x.len(),
                shape.numel()
            ),
        ));
    }
    let plane = shape.spatial();
    let mut total = 0.0;
    for (a, b) in xhat.chunks(plane).zip(x.chunks(plane)) {
        let fa = fft2(a, shape.height, shape.width)?;
        let fb = fft2(b, shape.height, shape.width)?;
        for (u, v) in fa.data.iter().zip(&fb.data) {
            total += (u.norm() - v.norm()).abs();
            total += (u.re - v.re).powi(2) + (u.im - v.im).powi(2);
        }
    }
    Ok(total / batch as f64)
}
