//! On-disk dataset formats.
//!
//! CSV: an optional header line `# n=<int> d=<int> c=<int>` followed by rows
//! `f1,...,fd,label[,id]`.
//!
//! Binary: magic `GLDS1`, then `u64` n, `u64` d, `u64` C, then n·d
//! little-endian `f64` features in row-major order, then n `u32` labels.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use super::Dataset;
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 5] = b"GLDS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Binary,
}

impl DataFormat {
    /// `.csv` maps to CSV, everything else to binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Binary,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "binary" | "bin" => Ok(DataFormat::Binary),
            other => Err(Error::invalid(format!("unknown data format `{other}`"))),
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<Dataset> {
    let path = path.as_ref();
    match format {
        DataFormat::Csv => parse_csv(&fs::read_to_string(path)?, &path.display().to_string()),
        DataFormat::Binary => parse_binary(&fs::read(path)?, &path.display().to_string()),
    }
}

#[derive(Default)]
struct CsvHeader {
    n: Option<usize>,
    d: Option<usize>,
    c: Option<usize>,
}

fn parse_header(line: &str, src: &str, lineno: usize) -> Result<CsvHeader> {
    let mut h = CsvHeader::default();
    for tok in line.trim_start_matches('#').split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| Error::Parse {
            path: src.into(),
            line: lineno,
            msg: format!("malformed header token `{tok}`"),
        })?;
        let v: usize = v.parse().map_err(|_| Error::Parse {
            path: src.into(),
            line: lineno,
            msg: format!("header value `{v}` is not an integer"),
        })?;
        match k {
            "n" => h.n = Some(v),
            "d" => h.d = Some(v),
            "c" => h.c = Some(v),
            _ => {
                return Err(Error::Parse {
                    path: src.into(),
                    line: lineno,
                    msg: format!("unknown header key `{k}`"),
                })
            }
        }
    }
    Ok(h)
}

fn parse_csv(text: &str, src: &str) -> Result<Dataset> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: src.into(),
        line,
        msg,
    };
    let mut header = CsvHeader::default();
    let mut dim: Option<usize> = None;
    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut ids: Vec<String> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if labels.is_empty() && values.is_empty() {
                header = parse_header(line, src, lineno)?;
                dim = header.d;
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        // a trailing non-numeric field is an identifier
        let has_id = fields.len() >= 3 && fields[fields.len() - 1].parse::<f64>().is_err();
        let n_feat = fields.len() - 1 - usize::from(has_id);
        if n_feat == 0 {
            return Err(perr(lineno, "row has no feature columns".into()));
        }
        match dim {
            Some(d) if d != n_feat => {
                return Err(perr(lineno, format!("expected {d} features, found {n_feat}")))
            }
            None => dim = Some(n_feat),
            _ => {}
        }
        for f in &fields[..n_feat] {
            let v: f64 = f
                .parse()
                .map_err(|_| perr(lineno, format!("bad feature value `{f}`")))?;
            if !v.is_finite() {
                return Err(Error::invalid(format!("{src}:{lineno}: non-finite feature `{f}`")));
            }
            values.push(v);
        }
        let lab = fields[n_feat];
        let l: usize = lab
            .parse()
            .map_err(|_| perr(lineno, format!("bad label `{lab}`")))?;
        if let Some(c) = header.c {
            if l >= c {
                return Err(Error::invalid(format!(
                    "{src}:{lineno}: label {l} >= declared class count {c}"
                )));
            }
        }
        labels.push(l);
        if has_id {
            ids.push(fields[n_feat + 1].to_string());
        }
    }

    if labels.is_empty() {
        return Err(perr(1, "no data rows".into()));
    }
    if let Some(n) = header.n {
        if n != labels.len() {
            return Err(perr(1, format!("header declares n={n}, found {} rows", labels.len())));
        }
    }
    if !ids.is_empty() && ids.len() != labels.len() {
        return Err(perr(1, "identifier column present on only some rows".into()));
    }
    let d = dim.unwrap_or(0);
    let c = header
        .c
        .unwrap_or_else(|| (labels.iter().max().unwrap() + 1).max(2));
    let features = Matrix::from_row_slice(labels.len(), d, &values);
    Dataset::new(features, labels, c, (!ids.is_empty()).then_some(ids))
}

fn parse_binary(bytes: &[u8], src: &str) -> Result<Dataset> {
    let perr = |msg: &str| Error::Parse {
        path: src.into(),
        line: 0,
        msg: msg.into(),
    };
    if bytes.len() < 5 + 24 || &bytes[..5] != BINARY_MAGIC {
        return Err(perr("missing GLDS1 header"));
    }
    let u64_at = |off: usize| u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
    let (n, d, c) = (u64_at(5), u64_at(13), u64_at(21));
    let start = 29;
    let need = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(8))
        .and_then(|b| b.checked_add(n * 4))
        .ok_or_else(|| perr("header sizes overflow"))?;
    if bytes.len() != start + need {
        return Err(perr(&format!(
            "expected {} bytes for n={n} d={d}, file has {}",
            start + need,
            bytes.len()
        )));
    }
    let feats = &bytes[start..start + n * d * 8];
    let values: Vec<f64> = feats
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let labels: Vec<usize> = bytes[start + n * d * 8..]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect();
    Dataset::new(Matrix::from_row_slice(n, d, &values), labels, c, None)
}

pub fn save_binary(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(BINARY_MAGIC)?;
    for v in [ds.len(), ds.dim(), ds.num_classes()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    let f = ds.features();
    for i in 0..ds.len() {
        for j in 0..ds.dim() {
            w.write_all(&f[(i, j)].to_le_bytes())?;
        }
    }
    for &l in ds.labels() {
        w.write_all(&(l as u32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// CSV with header; `{:?}` formatting of `f64` round-trips exactly.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# n={} d={} c={}", ds.len(), ds.dim(), ds.num_classes())?;
    let f = ds.features();
    for i in 0..ds.len() {
        for j in 0..ds.dim() {
            write!(w, "{:?},", f[(i, j)])?;
        }
        write!(w, "{}", ds.labels()[i])?;
        if let Some(ids) = ds.ids() {
            write!(w, ",{}", ids[i])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
