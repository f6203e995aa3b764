//! Per-epoch metrics CSV and the `final.txt` run summary.

use std::fs;
use std::path::Path;

use ugan_core::train::Losses;

use crate::error::{LabError, Result};

pub const HEADER: [&str; 10] = [
    "epoch",
    "val_acc",
    "loss_D",
    "loss_gG",
    "loss_bG",
    "loss_C1",
    "loss_C2",
    "loss_C3",
    "loss_C4",
    "lambda0_eff",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub val_acc: f64,
    pub losses: Losses,
}

impl EpochRecord {
    fn fields(&self) -> Vec<String> {
        let l = &self.losses;
        let mut out = vec![self.epoch.to_string(), self.val_acc.to_string()];
        out.extend([l.d, l.gg, l.bg, l.c[0], l.c[1], l.c[2], l.c[3], l.lambda0_eff].map(|v| v.to_string()));
        out
    }

    fn from_fields(row: &csv::StringRecord, what: &str) -> Result<Self> {
        if row.len() != HEADER.len() {
            return Err(LabError::format(what, format!("row has {} fields", row.len())));
        }
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse()
                .map_err(|_| LabError::format(what, format!("bad {} value {:?}", HEADER[i], &row[i])))
        };
        let epoch = row[0]
            .parse()
            .map_err(|_| LabError::format(what, format!("bad epoch {:?}", &row[0])))?;
        Ok(EpochRecord {
            epoch,
            val_acc: num(1)?,
            losses: Losses {
                d: num(2)?,
                gg: num(3)?,
                bg: num(4)?,
                c: [num(5)?, num(6)?, num(7)?, num(8)?],
                lambda0_eff: num(9)?,
            },
        })
    }
}

/// Full CSV text for `records`, header first.
pub fn encode_csv(records: &[EpochRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| LabError::format("metrics csv", e.to_string());
    w.write_record(HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record(r.fields()).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| LabError::format("metrics csv", e.to_string()))
}

pub fn parse_csv(bytes: &[u8], what: &str) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| LabError::format(what, e.to_string()))?;
    if header.iter().ne(HEADER) {
        return Err(LabError::format(what, "unexpected header"));
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let rec = EpochRecord::from_fields(&row.map_err(|e| LabError::format(what, e.to_string()))?, what)?;
        if rec.epoch != i as u64 {
            return Err(LabError::format(what, format!("epoch {} in row {i}", rec.epoch)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    parse_csv(&bytes, &path.display().to_string())
}

pub fn write_csv(path: &Path, records: &[EpochRecord]) -> Result<()> {
    fs::write(path, encode_csv(records)?).map_err(|e| LabError::io(path, e))
}

/// Contents of `final.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub test_acc: f64,
    pub best_val_acc: f64,
    pub best_epoch: u64,
    pub epochs: u64,
    pub seed: u64,
    pub config_hash: String,
}

impl RunSummary {
    pub fn encode(&self) -> String {
        format!(
            "test_acc={}\nbest_val_acc={}\nbest_epoch={}\nepochs={}\nseed={}\nconfig_hash={}\n",
            self.test_acc, self.best_val_acc, self.best_epoch, self.epochs, self.seed, self.config_hash
        )
    }

    pub fn parse(text: &str, what: &str) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            text.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| LabError::format(what, format!("missing {key}")))
        };
        let bad = |key: &str| LabError::format(what, format!("bad {key}"));
        let test_acc: f64 = get("test_acc")?.parse().map_err(|_| bad("test_acc"))?;
        if !(0.0..=1.0).contains(&test_acc) {
            return Err(bad("test_acc"));
        }
        Ok(RunSummary {
            test_acc,
            best_val_acc: get("best_val_acc")?.parse().map_err(|_| bad("best_val_acc"))?,
            best_epoch: get("best_epoch")?.parse().map_err(|_| bad("best_epoch"))?,
            epochs: get("epochs")?.parse().map_err(|_| bad("epochs"))?,
            seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
            config_hash: get("config_hash")?.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        RunSummary::parse(&text, &path.display().to_string())
    }
}
