//! Models and optimizers for backhaul compression in cloud radio access
//! networks.
//!
//! The crate evaluates point-to-point and multiterminal compression of the
//! baseband signals exchanged between base stations and their control unit:
//! Wyner-Ziv (successive side-information) decompression on the uplink and
//! multivariate compression with correlated quantization noise on the
//! downlink. Everything needed for a system-level study is included: a
//! 19-cell hexagonal layout, per-slot fading realizations, a
//! majorization-minimization engine for the weighted sum-rate problems, a
//! proportional-fair scheduler and a Monte-Carlo harness.

pub mod cellgeom;
pub mod channel;
pub mod downlink;
mod error;
pub mod gaussinfo;
pub mod harness;
pub mod mmopt;
pub mod scheduler;
pub mod uplink;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Compression strategy on the backhaul links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionMode {
    /// Each base station signal is compressed independently.
    PointToPoint,
    /// Wyner-Ziv decompression (uplink) or multivariate compression (downlink).
    Multiterminal,
}

impl CompressionMode {
    pub fn label(self) -> &'static str {
        match self {
            CompressionMode::PointToPoint => "p2p",
            CompressionMode::Multiterminal => "mt",
        }
    }
}

impl std::fmt::Display for CompressionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for CompressionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p2p" | "point_to_point" => Ok(CompressionMode::PointToPoint),
            "mt" | "multiterminal" => Ok(CompressionMode::Multiterminal),
            other => Err(Error::Config(format!("unknown compression mode '{other}'"))),
        }
    }
}
