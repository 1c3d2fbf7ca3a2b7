//! Sigmoidal gene circuits: simulation, reaction-diffusion transpilation,
//! pattern compilation and superposition.

pub mod circuit;
pub mod error;
pub mod experiment;
pub mod expr;
pub mod fit;
pub mod grid;
pub mod linalg;
pub mod pattern;
pub mod rd;
pub mod sigmoid;
pub mod spectrum;
pub mod superposition;
pub mod transpile;

pub use error::{Error, Result};
pub use fit::{jones_fit, jones_fit_nested, random_fit_1d, random_unit_search, FitReport, SearchSettings, TrainingSet};
pub use grid::{laplacian_neumann, sample_function, Field, Grid, Grid1D, Grid2D, Point};
pub use linalg::least_squares;
pub use sigmoid::{sigma, sigma_inverse, SigmoidSum, Unit};
pub use spectrum::complexity;
