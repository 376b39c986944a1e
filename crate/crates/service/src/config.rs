use std::fmt;
use std::path::Path;
use std::str::FromStr;

use coopt_core::advisor::AdvisorEndpointConfig;
use coopt_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Standard,
    /// Evaluation delays are forced to zero for every session.
    Test,
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Profile::Standard),
            "test" => Ok(Profile::Test),
            other => Err(Error::Config(format!("unknown profile '{other}' (expected standard or test)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Standard => "standard",
            Profile::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub profile: Profile,
    /// Endpoint used by sessions that ask for the llm policy without their own.
    pub advisor: Option<AdvisorEndpointConfig>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            profile: Profile::Standard,
            advisor: None,
        }
    }
}

/// Environment variables read by [`ServiceConfig::apply_env`].
pub const ENV_HOST: &str = "COOPT_HOST";
pub const ENV_PORT: &str = "COOPT_PORT";
pub const ENV_PROFILE: &str = "COOPT_PROFILE";
pub const ENV_ADVISOR_BASE_URL: &str = "COOPT_ADVISOR_BASE_URL";
pub const ENV_ADVISOR_MODEL: &str = "COOPT_ADVISOR_MODEL";
pub const ENV_ADVISOR_KEY_VAR: &str = "COOPT_ADVISOR_KEY_VAR";

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// File (if any), then the process environment on top.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p)?)?,
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(h) = var(ENV_HOST) {
            self.host = h;
        }
        if let Some(p) = var(ENV_PORT) {
            self.port = p
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_PORT}: '{p}' is not a port number")))?;
        }
        if let Some(p) = var(ENV_PROFILE) {
            self.profile = p.parse()?;
        }
        let url = var(ENV_ADVISOR_BASE_URL);
        let model = var(ENV_ADVISOR_MODEL);
        let key_var = var(ENV_ADVISOR_KEY_VAR);
        if url.is_some() || model.is_some() || key_var.is_some() {
            let advisor = self.advisor.get_or_insert_with(AdvisorEndpointConfig::default);
            if let Some(u) = url {
                advisor.base_url = u;
            }
            if let Some(m) = model {
                advisor.model_name = m;
            }
            if let Some(k) = key_var {
                advisor.api_key_env_var = k;
            }
        }
        Ok(())
    }

    pub fn bind_addr(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn toml_then_env() {
        let mut c = ServiceConfig::from_toml(
            r#"
            port = 9000
            profile = "test"
            [advisor]
            base_url = "http://localhost:1234/v1"
            model_name = "m"
            "#,
        )
        .unwrap();
        assert_eq!((c.port, c.profile), (9000, Profile::Test));
        assert_eq!(c.host, "127.0.0.1");

        let env: HashMap<&str, &str> = [(ENV_PORT, "9100"), (ENV_ADVISOR_KEY_VAR, "MY_KEY")].into();
        c.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.bind_addr(), "127.0.0.1:9100");
        let a = c.advisor.unwrap();
        assert_eq!((a.model_name.as_str(), a.api_key_env_var.as_str()), ("m", "MY_KEY"));
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(ServiceConfig::from_toml("colour = 1").is_err());
        let mut c = ServiceConfig::default();
        assert!(c.apply_env(|k| (k == ENV_PORT).then(|| "eighty".into())).is_err());
        assert!(c.apply_env(|k| (k == ENV_PROFILE).then(|| "fast".into())).is_err());
    }
}
