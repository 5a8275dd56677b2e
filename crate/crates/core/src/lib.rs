//! Blind separation of convolutive mixtures.
//!
//! Observations are delay-embedded so that FIR demixing becomes a matrix
//! product, whitened, and then unmixed row by row with a fixed-point
//! negentropy iteration. Each new row is projected away from the dominant
//! directions of its lagged correlations with the other rows, which keeps the
//! outputs from being delayed or filtered copies of one another.
//!
//! ```no_run
//! use convbss::{separate, simulate, SeparationConfig, SimulationSpec};
//!
//! let sim = simulate(&SimulationSpec::default())?;
//! let config = SeparationConfig { rank_threshold: 0.995, ..Default::default() };
//! let result = separate(&sim.observations, &config, 2)?;
//! println!("{:?}", result.model.reports());
//! # Ok::<(), convbss::BssError>(())
//! ```

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod reconstruction;
pub mod separation;
pub mod signal;
pub mod simulation;
pub mod whitening;

pub use error::{BssError, Result};
pub use evaluation::{diagonalization_error, match_sources, max_lag_correlation, MatchReport};
pub use pipeline::{align_to_outputs, frame_offset, separate, Separation};
pub use reconstruction::{reconstruct_all, ContributionSet};
pub use separation::{Mode, Nonlinearity, SeparationConfig, SeparationModel, StopNorm};
pub use signal::{MimoFirFilter, MultichannelSignal, StackedSignal};
pub use simulation::{simulate, Simulation, SimulationSpec};
pub use whitening::WhiteningModel;
