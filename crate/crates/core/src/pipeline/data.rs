use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::chem::parse_smiles;
use crate::protein_encoder::encode_sequence;

use super::PipelineError;

/// Units in which a dataset reports affinities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AffinitySpace {
    PKd,
    Kiba,
    MetzNative,
    /// Dissociation constant in nanomolar; converted to pK_d for training.
    RawKdNm,
}

impl fmt::Display for AffinitySpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AffinitySpace::PKd => "pKd",
            AffinitySpace::Kiba => "kiba",
            AffinitySpace::MetzNative => "metz_native",
            AffinitySpace::RawKdNm => "raw_Kd_nM",
        })
    }
}

impl FromStr for AffinitySpace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "pKd" => Ok(AffinitySpace::PKd),
            "kiba" => Ok(AffinitySpace::Kiba),
            "metz_native" => Ok(AffinitySpace::MetzNative),
            "raw_Kd_nM" => Ok(AffinitySpace::RawKdNm),
            other => Err(format!(
                "unknown affinity space '{other}' (pKd|kiba|metz_native|raw_Kd_nM)"
            )),
        }
    }
}

/// Maps a reported value to the training target: nanomolar K_d becomes
/// `pK_d = −log10(K_d / 1e9)`; every other space passes through.
pub fn transform_affinity(value: f64, space: AffinitySpace) -> Result<f64, PipelineError> {
    match space {
        AffinitySpace::RawKdNm => {
            if value.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || !value.is_finite() {
                return Err(PipelineError::NonPositiveKd(value));
            }
            // log10(1e9) is exactly 9 and log10 is exact at powers of ten,
            // so 1, 100 and 10000 nM give exactly 9, 7 and 5.
            Ok(9.0 - value.log10())
        }
        _ => Ok(value),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub smiles: String,
    pub protein_seq: String,
    /// Value as written in the file; `None` when the column is empty
    /// (allowed for prediction inputs).
    pub affinity: Option<f64>,
    pub affinity_space: AffinitySpace,
}

impl DatasetRecord {
    /// Training target in the transformed space.
    pub fn target(&self) -> Option<Result<f64, PipelineError>> {
        self.affinity.map(|v| transform_affinity(v, self.affinity_space))
    }
}

/// A rejected input row.
#[derive(Clone, Debug, PartialEq)]
pub struct QuarantinedRow {
    /// 1-based line number in the file (the header is line 1).
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub records: Vec<DatasetRecord>,
    pub quarantined: Vec<QuarantinedRow>,
}

impl LoadReport {
    pub fn total_rows(&self) -> usize {
        self.records.len() + self.quarantined.len()
    }
}

pub const CSV_HEADER: [&str; 4] = ["smiles", "protein", "affinity", "space"];

fn parse_row(fields: &csv::StringRecord) -> Result<DatasetRecord, String> {
    if fields.len() != CSV_HEADER.len() {
        return Err(format!("expected 4 fields, found {}", fields.len()));
    }
    let smiles = fields[0].trim();
    parse_smiles(smiles).map_err(|e| format!("smiles: {e:?}: {e}"))?;
    let protein = fields[1].trim();
    encode_sequence(protein, 0).map_err(|e| format!("protein: {e}"))?;
    let space: AffinitySpace = fields[3].parse()?;
    let raw = fields[2].trim();
    let affinity = if raw.is_empty() {
        None
    } else {
        let v: f64 = raw.parse().map_err(|_| format!("affinity '{raw}' is not a number"))?;
        if !v.is_finite() {
            return Err(format!("affinity '{raw}' is not finite"));
        }
        transform_affinity(v, space).map_err(|e| e.to_string())?;
        Some(v)
    };
    Ok(DatasetRecord {
        smiles: smiles.to_string(),
        protein_seq: protein.to_string(),
        affinity,
        affinity_space: space,
    })
}

/// Reads `smiles,protein,affinity,space` CSV text. Rows that fail to parse
/// are quarantined with their line number and reason.
pub fn read_dataset<R: std::io::Read>(reader: R) -> Result<LoadReport, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| PipelineError::HeaderMismatch(e.to_string()))?
        .clone();
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != CSV_HEADER {
        return Err(PipelineError::HeaderMismatch(found.join(",")));
    }
    let mut report = LoadReport::default();
    let mut row = csv::StringRecord::new();
    let mut line = 1;
    loop {
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {
                line = row.position().map_or(line + 1, |p| p.line() as usize);
                match parse_row(&row) {
                    Ok(rec) => report.records.push(rec),
                    Err(reason) => report.quarantined.push(QuarantinedRow { line, reason }),
                }
            }
            Err(e) => {
                line = e.position().map_or(line + 1, |p| p.line() as usize);
                report.quarantined.push(QuarantinedRow {
                    line,
                    reason: e.to_string(),
                });
                if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                    break;
                }
            }
        }
    }
    Ok(report)
}

pub fn load_dataset(path: &Path) -> Result<LoadReport, PipelineError> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::FileUnreadable {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    read_dataset(std::io::BufReader::new(file))
}

/// Writes records in the dataset CSV format.
pub fn write_dataset<W: std::io::Write>(writer: W, records: &[DatasetRecord]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| PipelineError::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        let aff = r.affinity.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.smiles.as_str(), &r.protein_seq, &aff, &r.affinity_space.to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| PipelineError::Io(e.to_string()))
}
