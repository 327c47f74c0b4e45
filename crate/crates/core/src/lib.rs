pub mod audit;
pub mod backends;
pub mod catalog;
pub mod clock;
pub mod compositor;
pub mod exec;
pub mod geometry;
pub mod installation;
pub mod layout;
pub mod persona;
pub mod pipeline;
pub mod raster;
pub mod synth;
