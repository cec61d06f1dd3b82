//! Hardware-aware mixed-precision quantization of hash-grid neural fields.
//!
//! The crate has five layers, each usable on its own:
//!
//! * [`quantizer`]: uniform fake quantization with straight-through gradients.
//! * [`ngp`]: a small hash-grid model fitted to an image, used as the quality
//!   oracle, plus its trace exporter.
//! * [`sim`]: a trace-driven accelerator timing model, used as the cost
//!   oracle.
//! * [`ddpg`]: the actor-critic agent that picks bit widths.
//! * [`search`]: the episode loop tying the three together.

pub mod ddpg;
pub mod ngp;
pub mod nn;
pub mod optim;
pub mod policy;
pub mod quantizer;
pub mod search;
pub mod sim;

pub use policy::{LayerBits, QuantPolicy, Unit};

/// The guide's chapters, compiled so their snippets run as doctests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/quantization.md")]
    pub mod quantization {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    pub mod oracle {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    pub mod simulator {}
    #[doc = include_str!("../../../book/src/agent.md")]
    pub mod agent {}
    #[doc = include_str!("../../../book/src/search.md")]
    pub mod search {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
