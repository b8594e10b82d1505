//! Joint transmit-power and cache-placement optimization for cache-enabled
//! fiber-wireless (FiWi) networks with mmWave front ends.

pub mod analysis;
pub mod caching;
pub mod channel;
pub mod cli;
pub mod config;
pub mod geometry;
pub mod mckp;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod waterfill;
