pub mod ap;
pub mod identity;
pub mod quality;

pub use ap::{
    average_precision, map50, map_at, map_by_size, oks_map50, Detection, PRPoint, SizeBin,
    COCO_SIZE_EDGES,
};
pub use quality::{mse, psnr, ssim, PSNR_IDENTICAL};
pub use identity::{identity_attack, IdentityAttackConfig};
