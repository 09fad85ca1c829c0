pub mod correction;
pub mod cpl;
pub mod graph;
pub mod meta;
pub mod number;
pub mod packs;
pub mod provider;
pub mod session;
pub mod training_loop;
pub mod value;
pub mod verifier;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
