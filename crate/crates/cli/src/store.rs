//! `AGP_HOME` layout: `agp.json` for gateway routes and optimizer defaults, `registry/` for
//! one snapshot document per kind.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use agp_core::gateway::{build_gateway, Gateway, ProviderConfig, RouteConfig};
use agp_core::optimizers::OptimizerConfig;
use agp_core::{Error, ResourceHub, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_FILE: &str = "agp.json";
pub const DEFAULT_HOME: &str = ".agp";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgpConfig {
    #[serde(default)]
    pub providers: Vec<ProviderConfig>,
    /// Model id → provider chain.
    #[serde(default)]
    pub routes: BTreeMap<String, RouteConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
}

impl AgpConfig {
    pub fn gateway(&self) -> Result<Gateway> {
        let gw = build_gateway(&self.providers)?;
        for (model, route) in &self.routes {
            gw.set_route(model.clone(), route.clone())?;
        }
        Ok(gw)
    }
}

pub struct Store {
    home: PathBuf,
    pub config: AgpConfig,
}

impl Store {
    /// `--home`, else `AGP_HOME`, else `./.agp`. A missing config file means defaults.
    pub fn open(home: Option<PathBuf>) -> Result<Store> {
        let home = home
            .or_else(|| std::env::var_os("AGP_HOME").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_HOME));
        let path = home.join(CONFIG_FILE);
        let config = if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::PathError {
                path: path.clone(),
                message: e.to_string(),
            })?;
            serde_json::from_str(&text).map_err(|e| Error::ParseError(format!("{}: {e}", path.display())))?
        } else {
            AgpConfig::default()
        };
        Ok(Store { home, config })
    }

    pub fn registry_dir(&self) -> PathBuf {
        self.home.join("registry")
    }

    pub fn load_hub(&self) -> Result<Arc<ResourceHub>> {
        let gateway = Arc::new(self.config.gateway()?);
        Ok(Arc::new(ResourceHub::load_dir(self.registry_dir(), gateway)?))
    }

    pub fn save_hub(&self, hub: &ResourceHub) -> Result<()> {
        hub.save_dir(self.registry_dir())
    }
}
