//! Coded rebalancing for replicated databases.
//!
//! A file is split into subfiles labelled by ordered tuples of distinct node
//! ids; a node stores a subfile iff its id does not appear in the label. With
//! `K` nodes and labels of length `K - r`, every byte lives on exactly `r`
//! nodes and every node stores `r/K` of the file.
//!
//! On node removal the surviving holders run XOR-coded data exchanges, one per
//! group of `r` lost subfiles, moving `1/(r-1)` of the lost node's storage
//! across the bus. On node addition every old node splits its subfiles into
//! `K+1` relabelled parts and ships one part per subfile to the new node.
//! Both operations end in the same placement family for the new node count,
//! so any sequence of membership changes can be applied.
//!
//! The `parallel` feature (on by default) fans the per-group, per-node and
//! per-scenario work out over rayon. Without it the same code runs
//! sequentially.

pub mod addition;
pub mod baseline;
pub mod error;
pub mod exchange;
pub mod index;
pub mod model;
mod par;
pub mod removal;
pub mod scenario;
pub mod snapshot;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
pub use index::{enumerate_ordered_indices, falling_factorial, NodeId, OrderedIndex};
pub use model::{init_database, ByteRange, ClusterDatabase, FileSpec, Subfile};
pub use transport::{BroadcastChannel, MemoryChannel, SocketChannel, TransmissionLog};
pub use verify::{LoadReport, Rational};
