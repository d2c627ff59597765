//! Reference kernels for single-shot oriented object detection on large
//! aerial images.
//!
//! The crate covers the numeric core of such a detector, without any tensor
//! framework:
//!
//! - [`geometry`]: canonical oriented boxes, quads, minimum-area enclosure,
//!   exact rotated IoU.
//! - [`boxcodec`]: delta encoding/decoding between anchors and target boxes.
//! - [`featops`]: dense feature grids, bilinear sampling with analytic
//!   gradients, reference convolution, anchor-guided sampling locations and
//!   offset fields, alignment convolution.
//! - [`orientation`]: actively rotating filters, orientation-sensitive
//!   convolution, orientation max-pooling.
//! - [`anchors`]: pyramid anchor generation and IoU-based assignment.
//! - [`losses`]: focal and smooth-L1 losses and the two-stage multi-task sum.
//! - [`postprocess`]: score filtering and greedy rotated NMS.
//! - [`pipeline`]: window tiling of large images, chip-to-global mapping,
//!   detection merging, and a compositional head forward pass.
//! - [`evalkit`]: greedy detection/ground-truth matching, AP and mAP.
//! - [`ioformats`]: annotation and detection text formats, binary grid dumps.
//!
//! All kernels are generic over the scalar type through [`scalar::Real`];
//! the crate-root aliases pin the default double-precision instantiation
//! that the documented tolerances assume.

pub mod anchors;
pub mod boxcodec;
pub mod evalkit;
pub mod featops;
pub mod geometry;
pub mod ioformats;
pub mod losses;
pub mod orientation;
pub mod pipeline;
pub mod postprocess;
pub mod scalar;

pub use scalar::Real;

/// Double-precision oriented box (the default instantiation).
pub type OrientedBox = geometry::OrientedBox<f64>;
/// Double-precision quadrilateral.
pub type Quad = geometry::Quad<f64>;
/// Double-precision point.
pub type Point = geometry::Point<f64>;
/// Double-precision box delta.
pub type BoxDelta = boxcodec::BoxDelta<f64>;
/// Double-precision feature grid.
pub type FeatureGrid = featops::FeatureGrid<f64>;

/// Single-precision variants of the core value types.
pub type OrientedBox32 = geometry::OrientedBox<f32>;
pub type Quad32 = geometry::Quad<f32>;
pub type Point32 = geometry::Point<f32>;
pub type BoxDelta32 = boxcodec::BoxDelta<f32>;
pub type FeatureGrid32 = featops::FeatureGrid<f32>;
