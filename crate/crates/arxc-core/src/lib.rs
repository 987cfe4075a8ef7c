pub mod budget;
pub mod config;
pub mod csvio;
pub mod linear;
pub mod norms;
pub mod observer;
pub mod robot;
pub mod sim;
