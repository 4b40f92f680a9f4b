use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ktcore::{Dft2, KtVolume};
use crate::lifting::FilterSpec;

/// Hybrid convolution of `rho_hat` with a filter on `Λ`, circular in space and
/// valid in time. Output rows follow the full circular shift set.
///
/// `c` is in lifted column order (`lt`, `lx`, `ly`).
pub fn hybrid_conv(rho_hat: &KtVolume, spec: &FilterSpec, c: &[Complex64]) -> Result<Vec<Complex64>> {
    if rho_hat.grid() != &spec.grid {
        return Err(Error::Shape("volume and filter grids differ".into()));
    }
    if c.len() != spec.support_len() {
        return Err(Error::Shape(format!(
            "filter has {} taps, support holds {}",
            c.len(),
            spec.support_len()
        )));
    }
    let g = spec.grid;
    let n = g.frame_len();
    let dft = Dft2::new(g.p, g.q);

    let mut frames = rho_hat.as_slice().to_vec();
    dft.forward_raw_frames(&mut frames);

    let mut taps = vec![Complex64::new(0.0, 0.0); spec.nt * n];
    for lt in 0..spec.nt {
        for lx in 0..spec.n1 {
            for ly in 0..spec.n2 {
                taps[lt * n + lx * g.q + ly] = c[(lt * spec.n1 + lx) * spec.n2 + ly];
            }
        }
    }
    dft.forward_raw_frames(&mut taps);

    let scale = 1.0 / n as f64;
    let mut out = vec![Complex64::new(0.0, 0.0); spec.k() * n];
    out.par_chunks_mut(n).enumerate().for_each(|(tau, acc)| {
        let t = tau + spec.nt - 1;
        for lt in 0..spec.nt {
            let src = &frames[(t - lt) * n..(t - lt + 1) * n];
            let tap = &taps[lt * n..(lt + 1) * n];
            for ((a, s), h) in acc.iter_mut().zip(src).zip(tap) {
                *a += s * h;
            }
        }
        dft.inverse_raw(acc);
        acc.iter_mut().for_each(|v| *v *= scale);
    });
    Ok(out)
}
