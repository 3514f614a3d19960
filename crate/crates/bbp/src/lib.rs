//! `bbp` command-line tool and HTTP service.
//!
//! Both front ends drive the same [`bbp_core::audit::AuditState`] operations;
//! a risk report fetched over HTTP is the same document the CLI prints.

pub mod api;
pub mod cli;
pub mod store;
