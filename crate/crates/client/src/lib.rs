//! Decision sampling from OpenAI-compatible chat-completions endpoints.
//!
//! [`LlmClient`] requests per-token log-probabilities, retries rate limits
//! and transient server errors with jittered exponential backoff, and bounds
//! in-flight requests. [`LlmBackend`] plugs it into the orchestrator;
//! [`mock::MockServer`] speaks the same protocol for tests.

mod client;
pub mod mock;

use rand_chacha::ChaCha8Rng;

use uprop_core::orchestrator::{DecisionBackend, StepContext};
use uprop_core::{Decision, GenConfig};

pub use client::{ClientConfig, ClientError, ClientStats, LlmClient, Result, COMPLETIONS_PATH, DEFAULT_API_KEY_ENV};
pub use uprop_core::prompt::{ChatMessage, Role};

pub struct LlmBackend {
    client: LlmClient,
}

impl LlmBackend {
    pub fn new(client: LlmClient) -> Self {
        Self { client }
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }
}

fn backend_err(e: ClientError) -> uprop_core::Error {
    uprop_core::Error::Backend(e.to_string())
}

impl DecisionBackend for LlmBackend {
    fn sample(
        &self,
        ctx: &StepContext<'_>,
        n: usize,
        gen: &GenConfig,
        _rng: &mut ChaCha8Rng,
    ) -> uprop_core::Result<Vec<Decision>> {
        self.client.sample_n(&ctx.messages, n, gen).map_err(backend_err)
    }

    fn greedy(&self, ctx: &StepContext<'_>, gen: &GenConfig) -> uprop_core::Result<Decision> {
        self.client.greedy(&ctx.messages, gen).map_err(backend_err)
    }
}
