//! Noncoherent Grassmannian modulation toolkit.
//!
//! Subspace codebooks on the Grassmann manifold, a block-fading channel
//! simulator, maximum-likelihood and clustering detectors (k-means, EM,
//! depth-first cluster discovery), and closed-form performance bounds, with
//! a deterministic experiment runner on top.

pub mod analysis;
pub mod channel;
pub mod constellation;
pub mod detect;
pub mod experiment;
pub mod manifold;
pub mod numerics;
