//! Keccak-256 helpers for event topics and storage-slot constants.

use sha3::{Digest, Keccak256};

pub fn keccak256(data: &[u8]) -> [u8; 32] {
    Keccak256::digest(data).into()
}

/// Topic hash of a canonical event signature such as `Upgraded(address)`.
pub fn event_topic(signature: &str) -> [u8; 32] {
    keccak256(signature.as_bytes())
}

/// `keccak256(label) - 1`, the EIP-1967 storage slot derivation.
pub fn eip1967_slot(label: &str) -> [u8; 32] {
    let mut word = keccak256(label.as_bytes());
    for byte in word.iter_mut().rev() {
        let (value, borrow) = byte.overflowing_sub(1);
        *byte = value;
        if !borrow {
            break;
        }
    }
    word
}

pub fn to_hex_word(word: &[u8; 32]) -> String {
    format!("0x{}", hex::encode(word))
}
