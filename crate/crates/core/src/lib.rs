pub mod numcore;
pub mod textdata;
pub mod policy;
pub mod discriminator;
pub mod ppo;
pub mod eval;
pub mod gail;
pub mod cli;
