//! A [`SearchSource`] backed by a remote source service.

use std::time::Duration;

use reqwest::blocking::Client;

use ragx_core::pipeline::{SearchSource, SourceError};
use ragx_core::retrieval::ScoredChunk;

use crate::source_api::{SearchRequest, SearchResponse};

pub struct HttpSource {
    base_url: String,
    client: Client,
}

impl HttpSource {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, reqwest::Error> {
        Ok(HttpSource {
            base_url: base_url.trim_end_matches('/').to_string(),
            client: Client::builder().timeout(timeout).build()?,
        })
    }
}

impl SearchSource for HttpSource {
    fn name(&self) -> &str {
        &self.base_url
    }

    fn search(&self, query: &str, top_k: usize) -> Result<Vec<ScoredChunk>, SourceError> {
        let unreachable = |e: reqwest::Error| SourceError::Unreachable {
            source_name: self.base_url.clone(),
            message: e.to_string(),
        };
        let response = self
            .client
            .post(format!("{}/v1/search", self.base_url))
            .json(&SearchRequest {
                query: query.to_string(),
                top_k,
            })
            .send()
            .map_err(unreachable)?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(SourceError::Failed {
                source_name: self.base_url.clone(),
                message: format!("HTTP {status}: {body}"),
            });
        }
        let body: SearchResponse = response.json().map_err(|e| SourceError::Failed {
            source_name: self.base_url.clone(),
            message: format!("malformed search response: {e}"),
        })?;
        Ok(body.chunks)
    }
}
