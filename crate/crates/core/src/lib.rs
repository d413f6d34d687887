pub mod abe;
pub mod cli;
pub mod codec;
pub mod crypto;
pub mod directory;
pub mod group;
pub mod policy;
pub mod protocol;
pub mod sim;
