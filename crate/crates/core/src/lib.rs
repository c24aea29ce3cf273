//! Dynamic accountable storage.
//!
//! A client keeps a constant-size IBLT of everything it has stored; the
//! server keeps the blocks plus a tree of IBLTs that lets it answer audits
//! by rebuilding only the leaves around the audited keys.

mod codec;
pub mod error;
pub mod faults;
pub mod iblt;
pub mod iblt_tree;
pub mod pct;
pub mod protocol;
pub mod store;
pub mod tag;

pub use error::{Error, Result};
pub use iblt::{Iblt, IbltCell, IbltParams, Peeled, PurityOracle, Triple};
pub use iblt_tree::IbltTree;
pub use protocol::{setup, AuditOutcome, AuditReport, Client, Config, Server};
pub use store::{DirStore, MemStore, RecordStore};
