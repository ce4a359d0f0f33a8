//! Projection, prediction and the multiresolution transform on uniform
//! dyadic data.

use super::{MRConfig, PREDICTION_WEIGHT};
use crate::error::{Error, Result};
use crate::models::{Boundary, ModelSpec};

/// Mean of two sibling averages.
#[inline]
pub fn project(left: f64, right: f64) -> f64 {
    0.5 * (left + right)
}

/// Predicted averages of the (spatially left, right) children of a cell from
/// its own average and those of its two neighbours.
#[inline]
pub fn predict(parent: f64, left_cousin: f64, right_cousin: f64) -> (f64, f64) {
    let s = PREDICTION_WEIGHT * (right_cousin - left_cousin);
    (parent + s, parent - s)
}

/// Prediction with the offset shrunk so that both children stay inside the
/// range spanned by the three coarse values. Conservative like
/// [`predict`]; differs from it only near local extrema and steep jumps.
#[inline]
pub fn predict_bounded(parent: f64, left_cousin: f64, right_cousin: f64) -> (f64, f64) {
    let lo = parent.min(left_cousin).min(right_cousin);
    let hi = parent.max(left_cousin).max(right_cousin);
    let room = (parent - lo).min(hi - parent);
    let s = (PREDICTION_WEIGHT * (right_cousin - left_cousin)).clamp(-room, room);
    (parent + s, parent - s)
}

#[inline]
pub(crate) fn neighbor_or_self(values: &[f64], i: usize, offset: isize, boundary: Boundary) -> f64 {
    let n = values.len() as isize;
    let j = i as isize + offset;
    let k = match boundary {
        Boundary::Periodic => j.rem_euclid(n),
        Boundary::Transparent => j.clamp(0, n - 1),
    };
    values[k as usize]
}

/// Prediction of both children of cell `p` from a full level of averages.
pub fn predict_pair(level: &[f64], p: usize, boundary: Boundary) -> (f64, f64) {
    predict(
        level[p],
        neighbor_or_self(level, p, -1, boundary),
        neighbor_or_self(level, p, 1, boundary),
    )
}

/// Coarse averages plus one detail per sibling pair on every finer level.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub roots: usize,
    pub boundary: Boundary,
    pub coarse: Vec<f64>,
    /// `details[l - 1]` holds the level-`l` details, indexed by parent.
    pub details: Vec<Vec<f64>>,
}

impl Pyramid {
    pub fn max_level(&self) -> u32 {
        self.details.len() as u32
    }
}

fn level_count(len: usize, roots: usize) -> Result<u32> {
    if roots == 0 || !len.is_multiple_of(roots) || !(len / roots).is_power_of_two() {
        return Err(Error::LengthMismatch { expected: roots * (len / roots.max(1)).next_power_of_two(), actual: len });
    }
    Ok((len / roots).trailing_zeros())
}

pub fn encode(fine: &[f64], roots: usize, boundary: Boundary) -> Result<Pyramid> {
    let levels = level_count(fine.len(), roots)?;
    let mut details = Vec::with_capacity(levels as usize);
    let mut cur = fine.to_vec();
    for _ in 0..levels {
        let parents: Vec<f64> = cur.chunks_exact(2).map(|c| project(c[0], c[1])).collect();
        let d = (0..parents.len()).map(|p| cur[2 * p] - predict_pair(&parents, p, boundary).0).collect();
        details.push(d);
        cur = parents;
    }
    details.reverse();
    Ok(Pyramid { roots, boundary, coarse: cur, details })
}

pub fn decode(pyr: &Pyramid) -> Result<Vec<f64>> {
    if pyr.coarse.len() != pyr.roots {
        return Err(Error::LengthMismatch { expected: pyr.roots, actual: pyr.coarse.len() });
    }
    let mut cur = pyr.coarse.clone();
    for d in &pyr.details {
        if d.len() != cur.len() {
            return Err(Error::LengthMismatch { expected: cur.len(), actual: d.len() });
        }
        let mut next = Vec::with_capacity(2 * cur.len());
        for (p, &dp) in d.iter().enumerate() {
            let (a, b) = predict_pair(&cur, p, pyr.boundary);
            next.push(a + dp);
            next.push(b - dp);
        }
        cur = next;
    }
    Ok(cur)
}

/// `2^(l - L) epsilon`.
pub fn level_tolerance(cfg: &MRConfig, level: u32) -> f64 {
    cfg.epsilon * 2f64.powi(level as i32 - cfg.max_level as i32)
}

/// Zeroes every detail below its level tolerance; returns how many were cut.
pub fn threshold(pyr: &mut Pyramid, cfg: &MRConfig) -> usize {
    let top = pyr.max_level();
    let mut cut = 0;
    for (k, d) in pyr.details.iter_mut().enumerate() {
        let level = k as u32 + 1;
        let eps = cfg.epsilon * 2f64.powi(level as i32 - top as i32);
        for v in d.iter_mut() {
            if v.abs() < eps && *v != 0.0 {
                *v = 0.0;
                cut += 1;
            }
        }
    }
    cut
}

/// Tolerance balancing the thresholding error against the discretization
/// error of the reference scheme.
pub fn reference_tolerance(m: &ModelSpec, cfg: &MRConfig) -> Result<f64> {
    if !(cfg.alpha > 0.0 && cfg.tolerance_factor > 0.0) {
        return Err(Error::Tolerance("alpha and the tolerance factor must be positive".into()));
    }
    let mf = m.max_flux_derivative();
    let ma = m.max_diffusion_coefficient();
    let l = cfg.max_level as f64;
    let c = cfg.tolerance_factor;
    if ma > 0.0 {
        let len = m.domain().length();
        Ok(c * 2f64.powf(-(cfg.alpha + 1.0) * l) / (len * mf + 2f64.powf(-l) * ma))
    } else if mf > 0.0 {
        Ok(c * 2f64.powf(-cfg.alpha * l) / mf)
    } else {
        Err(Error::Tolerance("flux and diffusion both vanish".into()))
    }
}
