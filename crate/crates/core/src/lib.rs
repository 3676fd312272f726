//! Multi-view fusion (MVF) spatiotemporal modules for 2-D CNN video backbones.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: the `(n, c, t, h, w)` container and channel split/concat.
//! * [`ops`]: channel-wise 1-D convolutions along T/H/W and the small layer set of the
//!   backbone, each with a hand-written backward pass, plus a finite-difference checker.
//! * [`mvf`]: the fusion module, its residual block, and the reductions to C2D, depthwise
//!   SlowOnly and temporal shift.
//! * [`net`]: backbone presets and executable networks.
//! * [`cost`]: analytical multiply-accumulate and parameter accounting.
//! * [`train`]: synthetic motion clips, SGD with step decay, multi-clip evaluation.
//! * [`io`]: JSON configuration, the `MVFW` weight file and report documents.

pub mod cost;
pub mod error;
pub mod io;
pub mod mvf;
pub mod net;
pub mod ops;
pub mod params;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{concat_channels, split_channels, ChannelSplit, DType, Float, Shape, VideoTensor};
