use super::{reflect101, BinaryMask, Kernel};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MorphOp {
    Erode,
    Dilate,
    /// `iterations` erosions followed by as many dilations.
    Open,
    /// `iterations` dilations followed by as many erosions.
    Close,
}

/// Binary morphology with reflect-101 borders.
pub fn morphology(m: &BinaryMask, op: MorphOp, k: &Kernel, iterations: usize) -> Result<BinaryMask> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("morphology needs at least one iteration".into()));
    }
    let offsets = k.offsets();
    let repeat = |m: BinaryMask, f: fn(&BinaryMask, &[(isize, isize)]) -> BinaryMask| {
        (0..iterations).fold(m, |acc, _| f(&acc, &offsets))
    };
    Ok(match op {
        MorphOp::Erode => repeat(m.clone(), erode_with),
        MorphOp::Dilate => repeat(m.clone(), dilate_with),
        MorphOp::Open => repeat(repeat(m.clone(), erode_with), dilate_with),
        MorphOp::Close => repeat(repeat(m.clone(), dilate_with), erode_with),
    })
}

pub fn erode(m: &BinaryMask, k: &Kernel) -> BinaryMask {
    erode_with(m, &k.offsets())
}

pub fn dilate(m: &BinaryMask, k: &Kernel) -> BinaryMask {
    dilate_with(m, &k.offsets())
}

fn erode_with(m: &BinaryMask, offsets: &[(isize, isize)]) -> BinaryMask {
    apply(m, offsets, true)
}

fn dilate_with(m: &BinaryMask, offsets: &[(isize, isize)]) -> BinaryMask {
    apply(m, offsets, false)
}

// Erosion = all neighbours set; dilation = any neighbour set.
fn apply(m: &BinaryMask, offsets: &[(isize, isize)], all: bool) -> BinaryMask {
    let (w, h) = m.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        let mut hits = offsets.iter().map(|&(dx, dy)| {
            m.get(reflect101(x as isize + dx, w), reflect101(y as isize + dy, h))
        });
        if all {
            hits.all(|v| v)
        } else {
            hits.any(|v| v)
        }
    })
}
