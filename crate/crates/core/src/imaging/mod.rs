//! Patch-based image denoising with an unrolled LGM, PSNR and PGM I/O.

mod denoiser;
mod image;
mod patches;

pub use denoiser::{
    denoise, mean_psnr, train_denoiser, DenoiserEpoch, DenoiserModel, DenoiserTrainConfig,
    PIXEL_SCALE,
};
pub use image::{decode_pgm, encode_pgm, load_image, procedural_image, save_image, Image};
pub use patches::{coverage, extract_patches, patch_count, psnr, reconstruct_average};
