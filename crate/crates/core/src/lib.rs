//! Building blocks for a cross-stage lightweight (CSL) object detector.
//!
//! The crate is organized around a small dense NCHW tensor engine whose
//! primitives count the multiply-accumulate operations they actually perform
//! ([`tensor::MacCounter`]), an analytic cost model that predicts those counts
//! in closed form ([`cost`]), and a computation-graph layer ([`graph`]) that
//! assembles CSL modules into a backbone, a five-level feature pyramid, and a
//! full detector with a weight-shared head. A reverse-mode tape ([`tape`])
//! plus a finite-difference harness ([`gradcheck`]) verify the gradients of
//! every primitive and of composed graphs. Anchor clustering ([`anchors`])
//! and box decoding / soft-NMS ([`post`]) round out the detection toolchain.
//!
//! Everything is deterministic: forward passes use a fixed summation order,
//! graph construction is reproducible from a config plus seed, and clustering
//! is seeded. The crate is `no_std`-compatible (with `alloc`); the companion
//! CLI crate carries file formats and IO.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod anchors;
pub mod cost;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod post;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{MacCounter, Real, Shape, Tensor};
