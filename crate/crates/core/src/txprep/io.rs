use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::group::TransactionGroup;
use super::types::Transaction;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransactionFormat {
    Csv,
    JsonLines,
}

impl TransactionFormat {
    /// `.csv` is CSV; everything else is JSON lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => TransactionFormat::Csv,
            _ => TransactionFormat::JsonLines,
        }
    }
}

pub fn read_transactions(path: &Path) -> Result<Vec<Transaction>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match TransactionFormat::from_path(path) {
        TransactionFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::Fields).from_reader(file);
            reader
                .deserialize()
                .enumerate()
                .map(|(i, row)| row.map_err(|e| Error::Data(format!("{}: record {}: {e}", path.display(), i + 1))))
                .collect()
        }
        TransactionFormat::JsonLines => read_jsonl(path, BufReader::new(file)),
    }
}

pub fn write_transactions(path: &Path, transactions: &[Transaction]) -> Result<()> {
    match TransactionFormat::from_path(path) {
        TransactionFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
            w.write_record(["account_id", "transaction_id", "date", "amount", "description", "merchant_name"])
                .map_err(|e| Error::Data(e.to_string()))?;
            for t in transactions {
                let date = t.date.to_string();
                let amount = t.amount.to_string();
                w.write_record([
                    t.account_id.as_str(),
                    &t.transaction_id,
                    &date,
                    &amount,
                    &t.description,
                    t.merchant_name.as_deref().unwrap_or(""),
                ])
                .map_err(|e| Error::Data(e.to_string()))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
        TransactionFormat::JsonLines => write_jsonl(path, transactions),
    }
}

pub fn read_groups(path: &Path) -> Result<Vec<TransactionGroup>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(path, BufReader::new(file))
}

pub fn write_groups(path: &Path, groups: &[TransactionGroup]) -> Result<()> {
    write_jsonl(path, groups)
}

/// Reads one JSON document per non-blank line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path, reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{}: line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn read_jsonl_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(path, BufReader::new(file))
}

pub fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| Error::Data(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txprep::{group, Cents, Day};

    fn sample() -> Vec<Transaction> {
        vec![
            Transaction {
                account_id: "a1".into(),
                transaction_id: "t1".into(),
                date: Day::from_ymd(2023, 1, 5).unwrap(),
                amount: Cents(-125_050),
                description: "PAYROLL, ACME \"INC\"".into(),
                merchant_name: None,
            },
            Transaction {
                account_id: "a1".into(),
                transaction_id: "t2".into(),
                date: Day::from_ymd(2023, 1, 6).unwrap(),
                amount: Cents(499),
                description: "NETFLIX.COM 1234".into(),
                merchant_name: Some("Netflix".into()),
            },
        ]
    }

    #[test]
    fn csv_and_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["tx.csv", "tx.jsonl"] {
            let p = dir.path().join(name);
            write_transactions(&p, &sample()).unwrap();
            assert_eq!(read_transactions(&p).unwrap(), sample());
        }
    }

    #[test]
    fn csv_without_merchant_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tx.csv");
        std::fs::write(&p, "account_id,transaction_id,date,amount,description\na,t,2023-01-01,12.50,RENT\n").unwrap();
        let t = read_transactions(&p).unwrap();
        assert_eq!(t[0].amount, Cents(1250));
        assert_eq!(t[0].merchant_name, None);
    }

    #[test]
    fn bad_rows_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tx.csv");
        std::fs::write(&p, "account_id,transaction_id,date,amount,description\na,t,2023-13-01,1,x\n").unwrap();
        assert_eq!(read_transactions(&p).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn groups_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("groups.jsonl");
        let g = group(&sample());
        write_groups(&p, &g).unwrap();
        assert_eq!(read_groups(&p).unwrap(), g);
    }
}
