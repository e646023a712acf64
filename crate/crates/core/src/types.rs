//! Domain types shared by every pipeline stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Seconds since the Unix epoch, UTC.
pub type UnixSeconds = i64;

/// Seconds in a day, used for rate conversions.
pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// A 20-byte account identifier, always stored lowercase with a `0x` prefix.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address([u8; 20]);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed address `{0}`: expected 0x followed by 40 hex digits")]
pub struct AddressError(pub String);

impl Address {
    pub const ZERO: Address = Address([0u8; 20]);

    pub fn from_bytes(bytes: [u8; 20]) -> Self {
        Address(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }

    /// Builds an address whose last eight bytes encode `n`. Handy for fixtures.
    pub fn from_low_u64(n: u64) -> Self {
        let mut bytes = [0u8; 20];
        bytes[12..].copy_from_slice(&n.to_be_bytes());
        Address(bytes)
    }

    /// Parses `0x`-prefixed hex of any letter case. Checksum case is not verified.
    pub fn parse(text: &str) -> Result<Self, AddressError> {
        let trimmed = text.trim();
        let digits = trimmed
            .strip_prefix("0x")
            .or_else(|| trimmed.strip_prefix("0X"))
            .ok_or_else(|| AddressError(text.to_string()))?;
        if digits.len() != 40 {
            return Err(AddressError(text.to_string()));
        }
        let mut bytes = [0u8; 20];
        hex::decode_to_slice(digits, &mut bytes).map_err(|_| AddressError(text.to_string()))?;
        Ok(Address(bytes))
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Address {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Address::parse(s)
    }
}

impl Serialize for Address {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Address::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// One source file of a verified contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub content: String,
}

/// The published source of a contract, one or more files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceBundle {
    pub files: Vec<SourceFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_contract: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BundleError {
    #[error("source bundle has no files")]
    Empty,
    #[error("duplicate path `{0}` in source bundle")]
    DuplicatePath(String),
}

impl SourceBundle {
    pub fn single(path: impl Into<String>, content: impl Into<String>) -> Self {
        SourceBundle {
            files: vec![SourceFile { path: path.into(), content: content.into() }],
            entry_contract: None,
        }
    }

    pub fn validate(&self) -> Result<(), BundleError> {
        if self.files.is_empty() {
            return Err(BundleError::Empty);
        }
        let mut seen = std::collections::HashSet::new();
        for file in &self.files {
            if !seen.insert(file.path.as_str()) {
                return Err(BundleError::DuplicatePath(file.path.clone()));
            }
        }
        Ok(())
    }
}

/// On-chain metadata plus (optionally) verified source for one deployed contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractRecord {
    pub address: Address,
    /// Unknown when the export carries no creation transaction for the contract.
    pub creator: Option<Address>,
    pub deployed_at: UnixSeconds,
    #[serde(default)]
    pub compiler_version: String,
    #[serde(default)]
    pub solidity_version: String,
    /// Runtime bytecode as hex; empty for source-only fixtures.
    #[serde(default)]
    pub bytecode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceBundle>,
    #[serde(default)]
    pub tx_received: u64,
    pub verified: bool,
}

impl ContractRecord {
    /// A record with no source and no metadata beyond the address and deployment time.
    pub fn unverified(address: Address, deployed_at: UnixSeconds) -> Self {
        ContractRecord {
            address,
            creator: None,
            deployed_at,
            compiler_version: String::new(),
            solidity_version: String::new(),
            bytecode: String::new(),
            source: None,
            tx_received: 0,
            verified: false,
        }
    }

    /// Attaches a source bundle and marks the record verified.
    pub fn with_source(mut self, source: SourceBundle) -> Self {
        self.source = Some(source);
        self.verified = true;
        self
    }
}

/// The upgrade-pattern taxonomy. Exactly one value per verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UpgradeKind {
    NotUpgradeable,
    ForwardProxy,
    UpgradeableProxyTransparent,
    UpgradeableProxyUUPS,
    UpgradeableProxyDiamond,
    DataSeparation,
    Strategy,
}

impl UpgradeKind {
    pub const ALL: [UpgradeKind; 7] = [
        UpgradeKind::NotUpgradeable,
        UpgradeKind::ForwardProxy,
        UpgradeKind::UpgradeableProxyTransparent,
        UpgradeKind::UpgradeableProxyUUPS,
        UpgradeKind::UpgradeableProxyDiamond,
        UpgradeKind::DataSeparation,
        UpgradeKind::Strategy,
    ];

    /// Forward proxies route requests but cannot be upgraded, so they are excluded here.
    pub fn is_upgradeable(self) -> bool {
        !matches!(self, UpgradeKind::NotUpgradeable | UpgradeKind::ForwardProxy)
    }

    /// Kinds built on `delegatecall` forwarding.
    pub fn is_proxy(self) -> bool {
        matches!(
            self,
            UpgradeKind::ForwardProxy
                | UpgradeKind::UpgradeableProxyTransparent
                | UpgradeKind::UpgradeableProxyUUPS
                | UpgradeKind::UpgradeableProxyDiamond
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            UpgradeKind::NotUpgradeable => "NotUpgradeable",
            UpgradeKind::ForwardProxy => "ForwardProxy",
            UpgradeKind::UpgradeableProxyTransparent => "UpgradeableProxyTransparent",
            UpgradeKind::UpgradeableProxyUUPS => "UpgradeableProxyUUPS",
            UpgradeKind::UpgradeableProxyDiamond => "UpgradeableProxyDiamond",
            UpgradeKind::DataSeparation => "DataSeparation",
            UpgradeKind::Strategy => "Strategy",
        }
    }
}

impl fmt::Display for UpgradeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UpgradeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UpgradeKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown upgrade kind `{s}`"))
    }
}
