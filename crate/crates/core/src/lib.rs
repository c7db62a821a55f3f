//! Numerical geometry of warped products and the maps between them.

pub mod catalog;
pub mod clairaut;
pub mod curvature;
pub mod error;
pub mod expr;
pub mod geodesic;
pub mod manifold;
pub mod rmap;
pub mod runner;
pub mod scenario;
pub mod warped;

pub use error::{GeoError, GeoResult};
pub use expr::{Expr, ExprError};
pub use manifold::{ChartManifold, FdConfig, LaplacianSign, ScalarField, VectorField};
pub use rmap::{Frame, ProductRiemannianMap, RiemannianMap, Splitting};
pub use warped::{Factor, LiftedField, WarpedProduct};
