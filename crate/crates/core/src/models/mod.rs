pub mod adversary;
pub mod encdec;
pub mod fit;
pub mod image_net;
pub mod obfuscator;
pub mod utility;

pub use adversary::{recon_loss, DeobfuscatorConfig, DeobfuscatorModel};
pub use encdec::Block;
pub use obfuscator::{ObfuscatorConfig, ObfuscatorModel};
pub use utility::{Task, UtilityAdapter, UtilityConfig};
