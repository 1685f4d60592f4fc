use crate::autodiff::{Array, Real};
use crate::error::{Error, Result};
use crate::raster::Image;

/// Splits a view into non-overlapping `p × p` patches in row-major patch
/// order; each patch is flattened row-major (rows, columns, channels).
pub fn patchify<T: Real>(view: &Image, patch: usize) -> Result<Array<T>> {
    let mut out = Vec::new();
    patchify_into(view, patch, &mut out)?;
    let n = (view.height / patch) * (view.width / patch);
    Array::new(vec![n, patch * patch * view.channels], out)
}

pub(crate) fn patchify_into<T: Real>(view: &Image, patch: usize, out: &mut Vec<T>) -> Result<()> {
    if patch == 0 || view.height % patch != 0 || view.width % patch != 0 {
        return Err(Error::shape(
            "patchify",
            format!("{}x{} view is not divisible into {patch}px patches", view.height, view.width),
        ));
    }
    let c = view.channels;
    for py in 0..view.height / patch {
        for px in 0..view.width / patch {
            for dy in 0..patch {
                let y = py * patch + dy;
                let start = (y * view.width + px * patch) * c;
                out.extend(view.data[start..start + patch * c].iter().map(|&v| T::lit(v as f64)));
            }
        }
    }
    Ok(())
}

/// Row-stochastic matrix `[dst², src²]` that bilinearly resamples a
/// `src × src` grid onto `dst × dst` (pixel-centre alignment, edge clamp).
pub fn bilinear_matrix<T: Real>(src: usize, dst: usize) -> Result<Array<T>> {
    if src == 0 || dst == 0 {
        return Err(Error::shape("bilinear_matrix", format!("grids must be positive ({src} -> {dst})")));
    }
    let weights_1d = |i: usize| -> [(usize, f64); 2] {
        let f = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = f.floor() as usize;
        let hi = (lo + 1).min(src - 1);
        let t = f - lo as f64;
        [(lo, 1.0 - t), (hi, t)]
    };
    let mut m = vec![0.0f64; dst * dst * src * src];
    for y in 0..dst {
        for x in 0..dst {
            let row = (y * dst + x) * src * src;
            for (sy, wy) in weights_1d(y) {
                for (sx, wx) in weights_1d(x) {
                    m[row + sy * src + sx] += wy * wx;
                }
            }
        }
    }
    Array::from_f64(vec![dst * dst, src * src], &m)
}

/// Resamples a positional table `[1 + G², d]` (row 0 is the `[CLS]` entry)
/// to a `g × g` grid. The `[CLS]` row is copied unchanged.
pub fn interpolate_pos_embed<T: Real>(pos: &Array<T>, target_grid: usize) -> Result<Array<T>> {
    let (rows, d) = (pos.rows(), pos.cols());
    let src = ((rows - 1) as f64).sqrt().round() as usize;
    if pos.ndim() != 2 || src * src + 1 != rows {
        return Err(Error::shape("interpolate_pos_embed", format!("{:?} is not [1 + G², d]", pos.shape())));
    }
    if target_grid == 0 {
        return Err(Error::shape("interpolate_pos_embed", "target grid must be positive"));
    }
    let mut out = pos.row(0).to_vec();
    if target_grid == src {
        return Ok(pos.clone());
    }
    let m = bilinear_matrix::<T>(src, target_grid)?;
    let mut resampled = vec![T::zero(); target_grid * target_grid * d];
    T::gemm(target_grid * target_grid, src * src, d, m.data(), false, &pos.data()[d..], false, &mut resampled, false);
    out.extend(resampled);
    Array::new(vec![1 + target_grid * target_grid, d], out)
}
