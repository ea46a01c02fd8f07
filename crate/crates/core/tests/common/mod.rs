//! Reference models shared by the integration suites.
#![allow(dead_code)]

pub mod lru;
pub mod slice;
pub mod votes;
