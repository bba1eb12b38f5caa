use clap::ValueEnum;
use memcap::gateway::mock::MockBackend;
use memcap::gateway::sidecar::SidecarClient;
use memcap::gateway::{GatewayError, Models};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Mock,
    Sidecar,
}

pub enum Backend {
    Mock(MockBackend),
    Sidecar(SidecarClient),
}

impl Backend {
    /// `dim` sets the mock's embedding size and the sidecar's expected
    /// cross-modal dimension.
    pub fn open(kind: BackendKind, seed: u64, dim: Option<usize>, url: Option<&str>) -> Result<Self, GatewayError> {
        match kind {
            BackendKind::Mock => Ok(Backend::Mock(MockBackend::new(
                seed,
                dim.unwrap_or(memcap::memory::DEFAULT_DIMENSION),
            ))),
            BackendKind::Sidecar => {
                let client = match url {
                    Some(u) => SidecarClient::new(u),
                    None => SidecarClient::from_env()?,
                };
                Ok(Backend::Sidecar(match dim {
                    Some(d) => client.with_expected_dim(d),
                    None => client,
                }))
            }
        }
    }

    pub fn models(&self) -> Models<'_, f32> {
        match self {
            Backend::Mock(b) => Models::from_backend(b),
            Backend::Sidecar(c) => Models::from_backend(c),
        }
    }
}
