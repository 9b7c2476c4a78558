pub mod chebyshev;
pub mod config;
pub mod dispersion;
pub mod dtn;
pub mod dynamics;
pub mod energy;
pub mod grid;
pub mod krylov;
pub mod params;
pub mod persist;
pub mod run;
pub mod verify;
