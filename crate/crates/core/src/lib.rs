//! Audio fingerprinting and content-based music recommendation.
//!
//! Each track is reduced to one fixed-length vector: the time-averaged power
//! spectrum, MFCCs and chroma of a 60 s segment, followed by twelve tempo and
//! beat statistics. Fingerprints of a corpus are standardized and projected
//! onto the principal axes that retain a target share of variance;
//! recommendations are the nearest tracks in that reduced space.
//!
//! ```no_run
//! use sonaprint::{pipeline, store, PipelineConfig};
//!
//! let config = PipelineConfig::default();
//! let tags = store::load_tags("tags.csv")?;
//! let scan = pipeline::scan("music".as_ref(), Some(&tags), &config, 0)?;
//! let (model, _) = pipeline::build_model(&scan.records, &config)?;
//! for n in pipeline::recommend(&model, "some-track", 3)?.neighbors {
//!     println!("{} {:.3}", n.track_id, n.distance);
//! }
//! # Ok::<(), sonaprint::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod config;
pub mod error;
pub mod fingerprint;
pub mod harmony;
pub mod linalg;
pub mod pipeline;
pub mod recommend;
pub mod rhythm;
pub mod spectral;
pub mod store;
pub mod timbre;

pub use config::PipelineConfig;
pub use error::{Error, Result};
