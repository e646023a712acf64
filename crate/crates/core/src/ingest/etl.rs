//! Readers for Ethereum-ETL style CSV exports.
//!
//! Every reader is lossless over data rows: `rows.len() + skipped` equals the
//! number of data rows in the input, and each skipped row has an entry in
//! `errors`.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use csv::StringRecord;

use super::{parse_hex_bytes, parse_timestamp, parse_word, IngestError, Word};
use crate::types::{Address, ContractRecord, UnixSeconds};

/// A problem with one data row. `row` is one-based, excluding the header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvOutcome<T> {
    pub rows: Vec<T>,
    pub skipped: usize,
    pub errors: Vec<RowError>,
}

impl<T> CsvOutcome<T> {
    pub fn input_rows(&self) -> usize {
        self.rows.len() + self.skipped
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EtlLogRow {
    pub log_index: u64,
    pub transaction_hash: Word,
    pub address: Address,
    pub data: Vec<u8>,
    /// At most four; `topics[0]` is the event signature hash when present.
    pub topics: Vec<Word>,
    pub block_number: u64,
    pub block_timestamp: UnixSeconds,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EtlTransactionRow {
    pub hash: Word,
    pub from_address: Address,
    /// Absent for contract creations.
    pub to_address: Option<Address>,
    pub input: Vec<u8>,
    pub block_number: Option<u64>,
    pub block_timestamp: UnixSeconds,
    pub receipt_contract_address: Option<Address>,
}

impl EtlTransactionRow {
    pub fn is_creation(&self) -> bool {
        self.to_address.is_none()
    }
}

/// One internal call from a trace export.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EtlTraceRow {
    pub transaction_hash: Option<Word>,
    pub from_address: Address,
    pub to_address: Option<Address>,
    /// `call`, `delegatecall`, `staticcall`, `callcode`; empty for create traces.
    pub call_type: String,
    pub block_number: u64,
    pub block_timestamp: UnixSeconds,
    /// Position in the export; orders calls within one block.
    pub ordinal: usize,
}

struct Columns {
    index: HashMap<String, usize>,
}

impl Columns {
    fn new(headers: &StringRecord, required: &[&str]) -> Result<Self, IngestError> {
        let index: HashMap<String, usize> =
            headers.iter().enumerate().map(|(i, h)| (h.trim().to_ascii_lowercase(), i)).collect();
        for &name in required {
            if !index.contains_key(name) {
                return Err(IngestError::MissingColumn(name.to_string()));
            }
        }
        Ok(Columns { index })
    }

    fn get<'r>(&self, record: &'r StringRecord, name: &str) -> Option<&'r str> {
        self.index.get(name).and_then(|&i| record.get(i)).map(str::trim)
    }

    fn required<'r>(&self, record: &'r StringRecord, name: &str) -> Result<&'r str, String> {
        self.get(record, name).ok_or_else(|| format!("missing field `{name}`"))
    }
}

fn read_rows<R: Read, T>(
    input: R,
    required: &[&str],
    mut parse: impl FnMut(&Columns, &StringRecord, usize) -> Result<T, String>,
) -> Result<CsvOutcome<T>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let columns = Columns::new(reader.headers()?, required)?;
    let mut outcome = CsvOutcome { rows: Vec::new(), skipped: 0, errors: Vec::new() };
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let parsed = record.map_err(|e| e.to_string()).and_then(|r| parse(&columns, &r, i));
        match parsed {
            Ok(value) => outcome.rows.push(value),
            Err(message) => {
                outcome.skipped += 1;
                outcome.errors.push(RowError { row, message });
            }
        }
    }
    Ok(outcome)
}

fn address_field(columns: &Columns, record: &StringRecord, name: &str) -> Result<Address, String> {
    let text = columns.required(record, name)?;
    Address::parse(text).map_err(|e| e.to_string())
}

fn optional_address(columns: &Columns, record: &StringRecord, name: &str) -> Result<Option<Address>, String> {
    match columns.get(record, name) {
        None | Some("") => Ok(None),
        Some(text) => Address::parse(text).map(Some).map_err(|e| e.to_string()),
    }
}

fn timestamp_field(columns: &Columns, record: &StringRecord, name: &str) -> Result<UnixSeconds, String> {
    let text = columns.required(record, name)?;
    parse_timestamp(text).ok_or_else(|| format!("unparseable timestamp `{text}`"))
}

fn u64_field(columns: &Columns, record: &StringRecord, name: &str) -> Result<u64, String> {
    let text = columns.required(record, name)?;
    text.parse().map_err(|_| format!("`{name}` is not a non-negative integer: `{text}`"))
}

fn word_field(columns: &Columns, record: &StringRecord, name: &str) -> Result<Word, String> {
    let text = columns.required(record, name)?;
    parse_word(text).ok_or_else(|| format!("`{name}` is not a 32-byte hex word: `{text}`"))
}

fn bytes_field(columns: &Columns, record: &StringRecord, name: &str) -> Result<Vec<u8>, String> {
    let text = columns.required(record, name)?;
    parse_hex_bytes(text).ok_or_else(|| format!("`{name}` is not hex: `{text}`"))
}

/// Reads `contracts.csv`. Records come back unverified with no source.
///
/// Required columns: `address`, `bytecode`, `block_timestamp`. Optional:
/// `creator`, `tx_received`, `compiler_version`, `solidity_version`.
pub fn read_etl_contracts<R: Read>(input: R) -> Result<CsvOutcome<ContractRecord>, IngestError> {
    read_rows(input, &["address", "bytecode", "block_timestamp"], |cols, rec, _| {
        let address = address_field(cols, rec, "address")?;
        let deployed_at = timestamp_field(cols, rec, "block_timestamp")?;
        let bytecode = cols.required(rec, "bytecode")?.to_ascii_lowercase();
        let mut record = ContractRecord::unverified(address, deployed_at);
        record.bytecode = bytecode;
        record.creator = optional_address(cols, rec, "creator")?;
        if let Some(text) = cols.get(rec, "tx_received").filter(|t| !t.is_empty()) {
            record.tx_received = text.parse().map_err(|_| format!("`tx_received` is not a count: `{text}`"))?;
        }
        record.compiler_version = cols.get(rec, "compiler_version").unwrap_or_default().to_string();
        record.solidity_version = cols.get(rec, "solidity_version").unwrap_or_default().to_string();
        Ok(record)
    })
}

/// Splits an exported topics field. Exports join with `;` or `,`.
fn split_topics(text: &str) -> Result<Vec<Word>, String> {
    let text = text.trim().trim_start_matches('[').trim_end_matches(']');
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let topics: Vec<Word> = text
        .split([';', ','])
        .map(|t| t.trim().trim_matches(|c| c == '"' || c == '\''))
        .map(|t| parse_word(t).ok_or_else(|| format!("malformed topic `{t}`")))
        .collect::<Result<_, _>>()?;
    if topics.len() > 4 {
        return Err(format!("{} topics; a log carries at most 4", topics.len()));
    }
    Ok(topics)
}

/// Reads `logs.csv`.
pub fn read_etl_logs<R: Read>(input: R) -> Result<CsvOutcome<EtlLogRow>, IngestError> {
    let required = ["log_index", "transaction_hash", "address", "data", "topics", "block_number", "block_timestamp"];
    read_rows(input, &required, |cols, rec, _| {
        Ok(EtlLogRow {
            log_index: u64_field(cols, rec, "log_index")?,
            transaction_hash: word_field(cols, rec, "transaction_hash")?,
            address: address_field(cols, rec, "address")?,
            data: bytes_field(cols, rec, "data")?,
            topics: split_topics(cols.required(rec, "topics")?)?,
            block_number: u64_field(cols, rec, "block_number")?,
            block_timestamp: timestamp_field(cols, rec, "block_timestamp")?,
        })
    })
}

/// Reads `transactions.csv`.
pub fn read_etl_transactions<R: Read>(input: R) -> Result<CsvOutcome<EtlTransactionRow>, IngestError> {
    let required = ["hash", "from_address", "to_address", "input", "block_timestamp"];
    read_rows(input, &required, |cols, rec, _| {
        let row = EtlTransactionRow {
            hash: word_field(cols, rec, "hash")?,
            from_address: address_field(cols, rec, "from_address")?,
            to_address: optional_address(cols, rec, "to_address")?,
            input: bytes_field(cols, rec, "input")?,
            block_number: match cols.get(rec, "block_number") {
                None | Some("") => None,
                Some(_) => Some(u64_field(cols, rec, "block_number")?),
            },
            block_timestamp: timestamp_field(cols, rec, "block_timestamp")?,
            receipt_contract_address: optional_address(cols, rec, "receipt_contract_address")?,
        };
        if row.is_creation() && row.receipt_contract_address.is_none() {
            return Err("creation transaction without receipt_contract_address".into());
        }
        Ok(row)
    })
}

/// Reads `traces.csv`.
pub fn read_etl_traces<R: Read>(input: R) -> Result<CsvOutcome<EtlTraceRow>, IngestError> {
    let required = ["from_address", "to_address", "call_type", "block_number", "block_timestamp"];
    read_rows(input, &required, |cols, rec, ordinal| {
        Ok(EtlTraceRow {
            transaction_hash: match cols.get(rec, "transaction_hash") {
                None | Some("") => None,
                Some(_) => Some(word_field(cols, rec, "transaction_hash")?),
            },
            from_address: address_field(cols, rec, "from_address")?,
            to_address: optional_address(cols, rec, "to_address")?,
            call_type: cols.required(rec, "call_type")?.to_ascii_lowercase(),
            block_number: u64_field(cols, rec, "block_number")?,
            block_timestamp: timestamp_field(cols, rec, "block_timestamp")?,
            ordinal,
        })
    })
}

/// Fills `creator` from creation transactions where the export did not carry it.
pub fn assign_creators(records: &mut [ContractRecord], transactions: &[EtlTransactionRow]) {
    let creators: HashMap<Address, Address> = transactions
        .iter()
        .filter(|t| t.is_creation())
        .filter_map(|t| t.receipt_contract_address.map(|c| (c, t.from_address)))
        .collect();
    for record in records.iter_mut().filter(|r| r.creator.is_none()) {
        record.creator = creators.get(&record.address).copied();
    }
}

/// External transactions received per address.
pub fn count_received(transactions: &[EtlTransactionRow]) -> BTreeMap<Address, u64> {
    let mut counts = BTreeMap::new();
    for to in transactions.iter().filter_map(|t| t.to_address) {
        *counts.entry(to).or_insert(0) += 1;
    }
    counts
}
