#![cfg_attr(not(feature = "std"), no_std)]
//! Bytecode-level control-flow recovery across contracts, bounded path extraction,
//! symbolic stack validation, path/opcode graph construction and a graph classifier.

extern crate alloc;

pub mod asm;
pub mod cfg;
pub mod graph;
pub mod hexser;
pub mod isa;
pub mod link;
pub mod linalg;
pub mod model;
pub mod paths;
pub mod symstack;
pub mod word;

pub use cfg::{ContractCfg, EdgeKind, Selector};
pub use link::{link, link_with, LinkOptions, LinkedCfg, NodeRef};
pub use paths::{enumerate_paths, DataPath, PathBounds};
