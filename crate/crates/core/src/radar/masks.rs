use super::{PointTarget, RadarParams};
use crate::tensor::Tensor;

/// Paints each target's class on axis-aligned ellipses in the RD and RA
/// grids, later targets overwriting earlier ones.
///
/// Ellipse centres are snapped to whole bins, so a row `r` is covered iff
/// `|r − r0| ≤ range half-width` in both masks regardless of the second
/// axis' half-width: the two masks always share their range support.
pub fn render_masks(params: &RadarParams, targets: &[PointTarget]) -> (Tensor<u8>, Tensor<u8>) {
    let mut rd = Tensor::full(vec![params.n_range, params.n_doppler], 0u8);
    let mut ra = Tensor::full(vec![params.n_range, params.n_angle], 0u8);
    for t in targets {
        let [rb, ab, db] = t.bins(params);
        let (r0, a0, d0) = (rb.round(), ab.round(), db.round());
        let [er, ed, ea] = t.extent.map(|e| e.max(1.0));
        paint(&mut rd, r0, d0, er, ed, t.class_id);
        paint(&mut ra, r0, a0, er, ea, t.class_id);
    }
    (rd, ra)
}

fn paint(mask: &mut Tensor<u8>, r0: f64, c0: f64, er: f64, ec: f64, class: u8) {
    let (rows, cols) = (mask.shape()[0] as isize, mask.shape()[1] as isize);
    let r_lo = ((r0 - er).ceil() as isize).max(0);
    let r_hi = ((r0 + er).floor() as isize).min(rows - 1);
    let c_lo = ((c0 - ec).ceil() as isize).max(0);
    let c_hi = ((c0 + ec).floor() as isize).min(cols - 1);
    for r in r_lo..=r_hi {
        for c in c_lo..=c_hi {
            let (dr, dc) = ((r as f64 - r0) / er, (c as f64 - c0) / ec);
            if dr * dr + dc * dc <= 1.0 {
                let off = (r * cols + c) as usize;
                mask.data_mut()[off] = class;
            }
        }
    }
}

/// Sorted range bins holding at least one non-background label.
pub fn range_support(mask: &Tensor<u8>) -> Vec<usize> {
    let cols = mask.shape()[1];
    mask.data()
        .chunks(cols)
        .enumerate()
        .filter(|(_, row)| row.iter().any(|&c| c != 0))
        .map(|(r, _)| r)
        .collect()
}
