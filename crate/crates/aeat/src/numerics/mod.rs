//! Numerical substrate: autodiff tape, parameter storage, optimizer, special
//! functions, and deterministic random streams.

pub mod optim;
pub mod rng;
pub mod special;
pub mod store;
pub mod tape;

pub use optim::{cosine_lr, AdamW};
pub use rng::RngStream;
pub use store::{GradStore, HostTensor, ParamStore};
pub use tape::{Tape, Var};
