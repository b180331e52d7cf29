//! TOML scenario files.
//!
//! ```toml
//! rx_antennas = 1
//! noise_N0 = 1.0
//!
//! [receiver]
//! type = "sic_fixed"        # or "sud", "sic_timeshare"
//! base_order = [1, 2, 3, 4] # decoding order, first decoded first
//!
//! [[users]]
//! id = 1
//! antennas = 1
//! channel = [[1.0]]         # rx_antennas rows of `antennas` entries
//! power = { mode = "sum", values = [1.0] }
//! ```
//!
//! User ids are 1-based and must appear as 1, 2, ..., K.

use maccoop_core::{PowerConstraint, ReceiverModel, Scenario, UserSpec};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub rx_antennas: usize,
    #[serde(rename = "noise_N0")]
    pub noise_n0: f64,
    pub receiver: ReceiverEntry,
    pub users: Vec<UserEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiverType {
    Sud,
    SicFixed,
    SicTimeshare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverEntry {
    #[serde(rename = "type")]
    pub kind: ReceiverType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_order: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMode {
    Sum,
    PerAntenna,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerEntry {
    pub mode: PowerMode,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserEntry {
    pub id: usize,
    pub antennas: usize,
    /// Row-major, one row per receive antenna.
    pub channel: Vec<Vec<f64>>,
    pub power: PowerEntry,
}

fn field(path: impl std::fmt::Display, msg: impl std::fmt::Display) -> CliError {
    CliError::User(format!("{path}: {msg}"))
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::User(format!("scenario file: {e}")))
    }

    /// Canonical text; `parse` then `to_text` reproduces it byte for byte.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }

    pub fn to_scenario(&self) -> Result<Scenario, CliError> {
        let m = self.rx_antennas;
        if m == 0 {
            return Err(field("rx_antennas", "must be positive"));
        }
        if self.users.is_empty() {
            return Err(field("users", "at least one user is required"));
        }
        let mut users = Vec::with_capacity(self.users.len());
        for (i, u) in self.users.iter().enumerate() {
            let at = format!("users[{i}]");
            if u.id != i + 1 {
                return Err(field(
                    format!("{at}.id"),
                    format!("expected {} (ids run 1..K in order), found {}", i + 1, u.id),
                ));
            }
            if u.channel.len() != m {
                return Err(field(
                    format!("{at}.channel"),
                    format!("expected {m} rows (one per receive antenna), found {}", u.channel.len()),
                ));
            }
            for (r, row) in u.channel.iter().enumerate() {
                if row.len() != u.antennas {
                    return Err(field(
                        format!("{at}.channel[{r}]"),
                        format!(
                            "expected {} entries (one per transmit antenna), found {}",
                            u.antennas,
                            row.len()
                        ),
                    ));
                }
            }
            let power = match u.power.mode {
                PowerMode::Sum => {
                    if u.power.values.len() != 1 {
                        return Err(field(format!("{at}.power.values"), "sum power takes exactly one value"));
                    }
                    PowerConstraint::SumPower(u.power.values[0])
                }
                PowerMode::PerAntenna => {
                    if u.power.values.len() != u.antennas {
                        return Err(field(
                            format!("{at}.power.values"),
                            format!(
                                "per-antenna power takes {} values, found {}",
                                u.antennas,
                                u.power.values.len()
                            ),
                        ));
                    }
                    PowerConstraint::PerAntenna(u.power.values.clone())
                }
            };
            let h = DMatrix::from_fn(m, u.antennas, |r, c| u.channel[r][c]);
            users.push(UserSpec::new(h, power).map_err(|e| field(&at, e))?);
        }
        let receiver = self.receiver_model()?;
        Scenario::new(users, m, self.noise_n0, receiver).map_err(|e| field("scenario", e))
    }

    fn receiver_model(&self) -> Result<ReceiverModel, CliError> {
        let r = &self.receiver;
        let k = self.users.len();
        if r.weights.is_some() && r.kind != ReceiverType::SicTimeshare {
            return Err(field("receiver.weights", "only used with type \"sic_timeshare\""));
        }
        if r.base_order.is_some() && r.kind != ReceiverType::SicFixed {
            return Err(field("receiver.base_order", "only used with type \"sic_fixed\""));
        }
        Ok(match r.kind {
            ReceiverType::Sud => ReceiverModel::Sud,
            ReceiverType::SicTimeshare => ReceiverModel::SicTimeShare {
                weights: r.weights.clone(),
            },
            ReceiverType::SicFixed => {
                let order = r
                    .base_order
                    .as_ref()
                    .ok_or_else(|| field("receiver.base_order", "required for type \"sic_fixed\""))?;
                if order.len() != k || order.iter().any(|&u| u == 0 || u > k) {
                    return Err(field(
                        "receiver.base_order",
                        format!("must list each user id 1..{k} once"),
                    ));
                }
                ReceiverModel::SicFixed {
                    base_order: order.iter().map(|u| u - 1).collect(),
                }
            }
        })
    }

    pub fn from_scenario(scenario: &Scenario) -> Self {
        let users = scenario
            .users()
            .iter()
            .enumerate()
            .map(|(i, u)| UserEntry {
                id: i + 1,
                antennas: u.antennas(),
                channel: u.channel.row_iter().map(|row| row.iter().copied().collect()).collect(),
                power: match &u.power {
                    PowerConstraint::SumPower(p) => PowerEntry {
                        mode: PowerMode::Sum,
                        values: vec![*p],
                    },
                    PowerConstraint::PerAntenna(caps) => PowerEntry {
                        mode: PowerMode::PerAntenna,
                        values: caps.clone(),
                    },
                },
            })
            .collect();
        let receiver = match scenario.receiver() {
            ReceiverModel::Sud => ReceiverEntry {
                kind: ReceiverType::Sud,
                base_order: None,
                weights: None,
            },
            ReceiverModel::SicFixed { base_order } => ReceiverEntry {
                kind: ReceiverType::SicFixed,
                base_order: Some(base_order.iter().map(|u| u + 1).collect()),
                weights: None,
            },
            ReceiverModel::SicTimeShare { weights } => ReceiverEntry {
                kind: ReceiverType::SicTimeshare,
                base_order: None,
                weights: weights.clone(),
            },
        };
        ScenarioFile {
            rx_antennas: scenario.rx_antennas(),
            noise_n0: scenario.noise(),
            receiver,
            users,
        }
    }
}

pub fn load(path: &std::path::Path) -> Result<Scenario, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::User(format!("cannot read {}: {e}", path.display())))?;
    ScenarioFile::parse(&text)
        .and_then(|f| f.to_scenario())
        .map_err(|e| match e {
            CliError::User(msg) => CliError::User(format!("{}: {msg}", path.display())),
            other => other,
        })
}
