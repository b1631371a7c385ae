//! The experiment config document (TOML). Relative paths are taken from the
//! directory holding the config file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets;
use crate::evolution::RunConfig;
use crate::gateway::{
    Gateway, GatewayConfig, MockError, MockScript, MockServer, ModelEndpoint, SharedLedger, ENV_API_BASE, ENV_API_KEY,
    ENV_SANDBOX_MODEL,
};
use crate::harness::{SandboxEnv, SessionLimits};
use crate::model::{ModelError, TaskSpecification};
use crate::rollout::RetrievalConfig;
use crate::workspace::WorkspaceConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{what} not found: {path}")]
    Missing { what: &'static str, path: PathBuf },
    #[error("unknown built-in task {0:?}")]
    UnknownTask(String),
    #[error("task must name exactly one of `builtin` or `path`")]
    TaskSource,
    #[error("environment variable {0} is not set")]
    Env(&'static str),
    #[error(transparent)]
    Task(#[from] ModelError),
    #[error(transparent)]
    Mock(#[from] MockError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceSection {
    pub base: PathBuf,
    #[serde(flatten)]
    pub layout: WorkspaceConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EndpointSection {
    /// Falls back to `OPENROUTER_API_BASE`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    /// Defaults to the task's generator model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    pub agent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sandbox_model: Option<String>,
    #[serde(default)]
    pub generator_temperature: f64,
    #[serde(default)]
    pub agent_temperature: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    #[serde(default)]
    pub session: SessionLimits,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSection {
    /// Reply script (TOML or JSON) served by an in-process mock for every endpoint.
    pub script: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliConfig {
    pub workspace: WorkspaceSection,
    pub task: TaskSection,
    #[serde(default)]
    pub data: DataSection,
    pub endpoints: EndpointSection,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockSection>,
}

fn absolutize(dir: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = dir.join(&*p);
    }
}

impl CliConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Loads, resolves relative paths and checks referenced files exist.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut config = Self::from_toml(&text)?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        config.resolve_paths(dir);
        config.check()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, dir: &Path) {
        absolutize(dir, &mut self.workspace.base);
        if let Some(p) = &mut self.workspace.layout.utils_payload {
            absolutize(dir, p);
        }
        for p in [&mut self.task.path, &mut self.data.train, &mut self.data.val, &mut self.data.test].into_iter().flatten() {
            absolutize(dir, p);
        }
        if let Some(m) = &mut self.mock {
            absolutize(dir, &mut m.script);
        }
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let files = [
            ("task file", self.task.path.as_ref()),
            ("train data", self.data.train.as_ref()),
            ("validation data", self.data.val.as_ref()),
            ("test data", self.data.test.as_ref()),
            ("mock script", self.mock.as_ref().map(|m| &m.script)),
            ("utils payload", self.workspace.layout.utils_payload.as_ref()),
        ];
        for (what, path) in files {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(ConfigError::Missing { what, path: p.clone() });
                }
            }
        }
        self.task_spec().map(|_| ())
    }

    pub fn task_spec(&self) -> Result<TaskSpecification, ConfigError> {
        match (&self.task.builtin, &self.task.path) {
            (Some(name), None) => assets::builtin_task(name).ok_or_else(|| ConfigError::UnknownTask(name.clone()))?.map_err(Into::into),
            (None, Some(path)) => Ok(TaskSpecification::load(path)?),
            _ => Err(ConfigError::TaskSource),
        }
    }

    /// Builds both gateways (sharing one usage ledger) and the sandbox
    /// environment. With a `[mock]` section an in-process mock serves every
    /// endpoint; it lives as long as the returned [`Connection`].
    pub async fn connect(&self, spec: &TaskSpecification) -> Result<Connection, ConfigError> {
        let generator_model = self.endpoints.generator.clone().unwrap_or_else(|| spec.generator_model.clone());
        let (base_url, api_key, mock) = match &self.mock {
            Some(m) => {
                let server = MockServer::start(MockScript::load(&m.script)?).await?;
                (server.base_url(), None, Some(server))
            }
            None => {
                let base = match &self.endpoints.base_url {
                    Some(b) => b.clone(),
                    None => std::env::var(ENV_API_BASE).map_err(|_| ConfigError::Env(ENV_API_BASE))?,
                };
                let key = std::env::var(ENV_API_KEY).map_err(|_| ConfigError::Env(ENV_API_KEY))?;
                (base, Some(key), None)
            }
        };
        let endpoint = |model: &str, temperature: f64| ModelEndpoint {
            base_url: base_url.clone(),
            api_key: api_key.clone(),
            model_id: model.to_string(),
            temperature,
        };
        let ledger = SharedLedger::default();
        let generator = Gateway::new(endpoint(&generator_model, self.endpoints.generator_temperature), self.limits.gateway.clone())
            .with_ledger(ledger.clone());
        let agent = Gateway::new(endpoint(&self.endpoints.agent, self.endpoints.agent_temperature), self.limits.gateway.clone())
            .with_ledger(ledger);
        let env = SandboxEnv {
            api_base: Some(base_url.clone()),
            api_key: api_key.clone().or_else(|| mock.as_ref().map(|_| "mock".to_string())),
            sandbox_model: self.endpoints.sandbox_model.clone().or_else(|| std::env::var(ENV_SANDBOX_MODEL).ok()),
            embedding_model: self.endpoints.embedding.clone(),
        };
        Ok(Connection { generator, agent, env, mock: mock.map(Arc::new) })
    }
}

pub struct Connection {
    pub generator: Gateway,
    pub agent: Gateway,
    pub env: SandboxEnv,
    pub mock: Option<Arc<MockServer>>,
}
