use std::collections::BTreeMap;
use std::sync::Arc;

use flame_core::llm::{
    AdmissionGate, ChatBackend, ChatModel, Embedder, LocalEmbedder, MockStore, RemoteEmbedder, RemoteEndpoint,
    RetryPolicy,
};

use crate::config::{BackendConfig, EmbeddingKind, RunConfig};
use crate::error::CliError;

/// Where commands get their models from.
pub trait ModelProvider: Sync {
    fn chat(&self, name: &str) -> Result<Arc<dyn ChatModel>, CliError>;
    fn embedder(&self) -> &dyn Embedder;

    fn chats(&self, names: &[String]) -> Result<Vec<Arc<dyn ChatModel>>, CliError> {
        names.iter().map(|n| self.chat(n)).collect()
    }
}

/// Models built from a [`RunConfig`]: all mocks when a mock directory is
/// set, remote endpoints otherwise. Remote calls share one admission gate.
pub struct Backends {
    mock: Option<Arc<MockStore>>,
    endpoints: BTreeMap<String, BackendConfig>,
    gate: Arc<AdmissionGate>,
    embedder: Arc<dyn Embedder>,
}

impl Backends {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        let mock = match &cfg.mock_dir {
            Some(dir) => Some(Arc::new(MockStore::load(dir)?)),
            None => None,
        };
        let gate = AdmissionGate::new(cfg.parallelism);
        let embedder: Arc<dyn Embedder> = match cfg.embedding.kind {
            EmbeddingKind::Local => Arc::new(LocalEmbedder::new(cfg.embedding.dim)?),
            EmbeddingKind::Remote => Arc::new(RemoteEmbedder {
                endpoint: RemoteEndpoint::from_env(
                    &cfg.embedding.model,
                    cfg.embedding.base_url.as_deref(),
                    RetryPolicy::default(),
                    gate.clone(),
                )?,
            }),
        };
        Ok(Backends {
            mock,
            endpoints: cfg.backends.clone(),
            gate,
            embedder,
        })
    }
}

impl ModelProvider for Backends {
    fn chat(&self, name: &str) -> Result<Arc<dyn ChatModel>, CliError> {
        if let Some(store) = &self.mock {
            return Ok(Arc::new(ChatBackend::mock(name, store.clone())));
        }
        let base_url = self.endpoints.get(name).and_then(|b| b.base_url.as_deref());
        let endpoint = RemoteEndpoint::from_env(name, base_url, RetryPolicy::default(), self.gate.clone())?;
        Ok(Arc::new(ChatBackend::remote(endpoint)))
    }

    fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }
}
