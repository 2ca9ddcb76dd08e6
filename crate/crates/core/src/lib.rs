pub mod butler;
pub mod codec;
pub mod crypto;
pub mod distributor;
pub mod naming;
pub mod netsim;
pub mod objects;
pub mod time;
#[cfg(test)]
mod testkit;
