pub mod chat;
pub mod eval;
pub mod ingest;
pub mod serve;

use std::sync::Arc;

use ragx_core::backends::{Embedder, HashingEmbedder, HASH_EMBEDDER_DIMENSION, HASH_EMBEDDER_TAG};
use ragx_core::pipeline::{BackendKind, PipelineConfig};
use ragx_service::build_embedder;

use crate::CliError;

/// The embedder for `tag`: the hashing embedder for its own tag, otherwise
/// the configured HTTP embedder serving model `tag`. Without a tag the
/// configured embedder is used as is.
pub fn embedder_for(cfg: &PipelineConfig, tag: Option<&str>, dimension: Option<usize>) -> Result<Arc<dyn Embedder>, CliError> {
    match tag {
        Some(HASH_EMBEDDER_TAG) => Ok(Arc::new(HashingEmbedder::new(dimension.unwrap_or(HASH_EMBEDDER_DIMENSION)))),
        Some(model) => {
            let mut b = cfg.backends.embedder.clone();
            if b.kind == BackendKind::Mock {
                return Err(CliError::config_key(
                    "backends.embedder.kind",
                    format!("embedder `{model}` needs an http embedder backend"),
                ));
            }
            b.model = Some(model.to_string());
            if dimension.is_some() {
                b.dimension = dimension;
            }
            Ok(build_embedder(&b)?)
        }
        None => Ok(build_embedder(&cfg.backends.embedder)?),
    }
}
