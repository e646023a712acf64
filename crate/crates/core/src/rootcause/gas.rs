//! Static deployment-gas estimate. Method-call gas needs execution and is not
//! estimated.

use serde::{Deserialize, Serialize};

pub const BASE_TX_GAS: u64 = 21_000;
pub const CREATE_GAS: u64 = 32_000;
pub const CODE_DEPOSIT_GAS_PER_BYTE: u64 = 200;
pub const CALLDATA_NONZERO_GAS: u64 = 16;
pub const CALLDATA_ZERO_GAS: u64 = 4;
/// Canonical source bytes assumed per deployed code byte when only source is known.
pub const SOURCE_BYTES_PER_CODE_BYTE: usize = 4;

pub const DEPLOYMENT_ONLY_NOTE: &str = "gas comparison covers contract deployment only; method execution gas is not estimated";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GasBasis {
    Bytecode,
    /// Derived from canonical source length; a coarse proxy.
    SourceLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasEstimate {
    pub deploy_gas: u64,
    pub base_tx: u64,
    pub creation: u64,
    pub code_deposit: u64,
    pub calldata: u64,
    pub basis: GasBasis,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GasError {
    #[error("bytecode has odd length {0}")]
    OddLength(usize),
    #[error("bytecode contains a non-hex character")]
    NotHex,
}

fn decode(hex_text: &str) -> Result<Vec<u8>, GasError> {
    let digits = hex_text.trim();
    let digits = digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")).unwrap_or(digits);
    if !digits.len().is_multiple_of(2) {
        return Err(GasError::OddLength(digits.len()));
    }
    hex::decode(digits).map_err(|_| GasError::NotHex)
}

fn assemble(deployed_len: u64, init: &[u8], basis: GasBasis) -> GasEstimate {
    let calldata = init.iter().map(|&b| if b == 0 { CALLDATA_ZERO_GAS } else { CALLDATA_NONZERO_GAS }).sum();
    let code_deposit = CODE_DEPOSIT_GAS_PER_BYTE * deployed_len;
    GasEstimate {
        deploy_gas: BASE_TX_GAS + CREATE_GAS + code_deposit + calldata,
        base_tx: BASE_TX_GAS,
        creation: CREATE_GAS,
        code_deposit,
        calldata,
        basis,
    }
}

/// Estimate from deployed (runtime) code and init code, both hex.
pub fn estimate_deploy_gas(deployed_hex: &str, init_hex: &str) -> Result<GasEstimate, GasError> {
    let deployed = decode(deployed_hex)?;
    let init = decode(init_hex)?;
    Ok(assemble(deployed.len() as u64, &init, GasBasis::Bytecode))
}

/// Estimate when only runtime bytecode is known; it stands in for the init code too.
pub fn estimate_from_bytecode(bytecode_hex: &str) -> Result<GasEstimate, GasError> {
    estimate_deploy_gas(bytecode_hex, bytecode_hex)
}

/// Estimate from canonical source length, treating every code byte as nonzero.
pub fn estimate_from_source_length(source_bytes: usize) -> GasEstimate {
    let code = source_bytes / SOURCE_BYTES_PER_CODE_BYTE;
    assemble(code as u64, &vec![1u8; code], GasBasis::SourceLength)
}
