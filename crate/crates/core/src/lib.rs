//! Weak KAM and Aubry-Mather toolkit for time-periodic Lagrangians on flat tori.

pub mod alpha;
pub mod config;
pub mod error;
pub mod form;
pub mod grid;
pub mod io;
pub mod laxoleinik;
pub mod measures;
pub mod pipeline;
pub mod simplex;
pub mod subsolution;
pub mod system;
pub mod verify;

pub use error::{Error, Result};
pub use form::OneForm;
pub use grid::{Node, NodeSet, Point, SpaceTimeGrid, ValueField};
pub use laxoleinik::{CriticalValue, Direction, DpSettings, LaxOleinik, WeakKamAnalysis};
pub use system::{LagrangianSystem, State, TrigPolynomial, TrigTerm};
