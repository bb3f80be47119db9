//! IO companions to `csl-core`: config files, annotation ingestion, binary
//! tensor containers, and anchor file formats. The `csl` binary drives
//! these; they are exposed as a library so tests and other tools can build
//! and inspect the same files.

pub mod anchors_io;
pub mod coco;
pub mod config;
pub mod tensor_file;
