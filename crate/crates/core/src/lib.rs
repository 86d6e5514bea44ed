#[cfg(feature = "cli")]
pub mod cli;
pub mod cpd;
pub mod datagen;
pub mod downstream;
pub mod numkernel;
pub mod seed;
pub mod verify;
pub mod vqmodel;
