//! Patch shuffling of images.

use crate::SibError;
use seedmem_core::RngStream;
use seedmem_toyldm::{ToyImage, IMAGE_SIDE};

fn check(patch: usize, perm: Option<&[usize]>) -> Result<usize, SibError> {
    if patch == 0 || !IMAGE_SIDE.is_multiple_of(patch) {
        return Err(SibError::InvalidArgument(format!("patch size {patch} does not divide {IMAGE_SIDE}")));
    }
    let grid = IMAGE_SIDE / patch;
    if let Some(p) = perm {
        let mut seen = vec![false; grid * grid];
        if p.len() != grid * grid || p.iter().any(|&i| i >= seen.len() || std::mem::replace(&mut seen[i], true)) {
            return Err(SibError::InvalidArgument("not a permutation of the patch grid".into()));
        }
    }
    Ok(grid)
}

/// Output patch `i` is input patch `perm[i]` (patches in row-major grid order).
fn apply(image: &ToyImage, patch: usize, grid: usize, perm: &[usize], inverse: bool) -> Result<ToyImage, SibError> {
    let src = image.data();
    let mut out = vec![0f32; src.len()];
    for (dst_p, &src_p) in perm.iter().enumerate() {
        let (from, to) = if inverse { (dst_p, src_p) } else { (src_p, dst_p) };
        let (fr, fc) = (from / grid * patch, from % grid * patch);
        let (tr, tc) = (to / grid * patch, to % grid * patch);
        for r in 0..patch {
            let a = (fr + r) * IMAGE_SIDE + fc;
            let b = (tr + r) * IMAGE_SIDE + tc;
            out[b..b + patch].copy_from_slice(&src[a..a + patch]);
        }
    }
    Ok(ToyImage::new(out, image.label)?)
}

/// Shuffles non-overlapping `patch x patch` tiles with a permutation drawn from `perm_seed`.
pub fn patch_shuffle(image: &ToyImage, patch: usize, perm_seed: u64) -> Result<(ToyImage, Vec<usize>), SibError> {
    let grid = check(patch, None)?;
    let perm = RngStream::new(perm_seed, 0).permutation(grid * grid);
    Ok((apply(image, patch, grid, &perm, false)?, perm))
}

/// Undoes [`patch_shuffle`] given its permutation.
pub fn patch_unshuffle(image: &ToyImage, patch: usize, perm: &[usize]) -> Result<ToyImage, SibError> {
    let grid = check(patch, Some(perm))?;
    apply(image, patch, grid, perm, true)
}

/// Applies an explicit permutation.
pub fn patch_permute(image: &ToyImage, patch: usize, perm: &[usize]) -> Result<ToyImage, SibError> {
    let grid = check(patch, Some(perm))?;
    apply(image, patch, grid, perm, false)
}
