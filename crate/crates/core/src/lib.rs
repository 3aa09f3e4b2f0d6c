pub mod backbone;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod datagen;
pub mod diagnostics;
pub mod federation;
pub mod gradcheck;
pub mod manifest;
pub mod mcr2;
pub mod tensor;
