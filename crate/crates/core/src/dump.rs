//! Binary embedding dumps and their CSV alternative.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! "DMLE" | version u16 | n u64 | d u32 | has_labels u8 | n x u32 labels | n*d x f32 row-major
//! ```

use std::fs;
use std::path::Path;

use crate::embedding::{EmbeddingMatrix, LabelVector};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DMLE";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 8 + 4 + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDump {
    pub embeddings: EmbeddingMatrix,
    pub labels: Option<LabelVector>,
}

impl EmbeddingDump {
    pub fn new(embeddings: EmbeddingMatrix, labels: Option<LabelVector>) -> Result<Self> {
        if let Some(l) = &labels {
            l.check_len(embeddings.rows())?;
        }
        Ok(Self { embeddings, labels })
    }

    /// Exact byte length of a dump with these dimensions.
    pub fn encoded_len(n: usize, d: usize, has_labels: bool) -> usize {
        HEADER_LEN + if has_labels { 4 * n } else { 0 } + 4 * n * d
    }

    /// Labels, or an error naming `what` needs them.
    pub fn require_labels(&self, what: &str) -> Result<&LabelVector> {
        self.labels
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("{what} needs a labeled dump")))
    }

    /// Values are stored as f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, d) = (self.embeddings.rows(), self.embeddings.dim());
        let mut out = Vec::with_capacity(Self::encoded_len(n, d, self.labels.is_some()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.push(self.labels.is_some() as u8);
        if let Some(l) = &self.labels {
            for &y in l.as_slice() {
                out.extend_from_slice(&y.to_le_bytes());
            }
        }
        for &v in self.embeddings.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dump version {version}")));
        }
        let n = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
        let d = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
        let has_labels = match bytes[18] {
            0 => false,
            1 => true,
            f => return Err(Error::Format(format!("bad label flag {f}"))),
        };
        let n = usize::try_from(n).map_err(|_| Error::Format("row count overflows".into()))?;
        let expected = n
            .checked_mul(d)
            .and_then(|nd| nd.checked_add(if has_labels { n } else { 0 }))
            .and_then(|w| w.checked_mul(4))
            .and_then(|b| b.checked_add(HEADER_LEN));
        if expected != Some(bytes.len()) {
            return Err(Error::Format(format!(
                "dump of {n}x{d} should be {} bytes, found {}",
                expected.map_or("too many".into(), |e| e.to_string()),
                bytes.len()
            )));
        }
        let mut words = bytes[HEADER_LEN..].chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
        let labels = has_labels.then(|| LabelVector::new(words.by_ref().take(n).map(u32::from_le_bytes).collect()));
        let data: Vec<f64> = words.map(|w| f32::from_le_bytes(w) as f64).collect();
        Self::new(EmbeddingMatrix::new(data, n, d)?, labels)
    }

    /// Reads a binary dump, or a CSV file when the extension is `.csv`.
    pub fn read(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            return Self::read_csv(path);
        }
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    /// CSV with header `label,e0,e1,...`. A header without a leading
    /// `label` column yields an unlabeled dump.
    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::parse_csv(csv::Reader::from_path(path).map_err(csv_error)?)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        Self::parse_csv(csv::Reader::from_reader(text.as_bytes()))
    }

    fn parse_csv<R: std::io::Read>(mut reader: csv::Reader<R>) -> Result<Self> {
        let header = reader.headers().map_err(csv_error)?.clone();
        let labeled = header.get(0) == Some("label");
        let d = header.len() - labeled as usize;
        if d == 0 {
            return Err(Error::Format("csv has no embedding columns".into()));
        }
        let (mut data, mut labels) = (Vec::new(), Vec::new());
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(csv_error)?;
            let line = i + 2;
            let mut fields = record.iter();
            if labeled {
                let y = fields.next().unwrap_or("").trim();
                labels.push(
                    y.parse::<u32>()
                        .map_err(|_| Error::Format(format!("csv line {line}: bad label {y:?}")))?,
                );
            }
            for f in fields {
                data.push(
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Format(format!("csv line {line}: bad value {f:?}")))?,
                );
            }
        }
        let n = data.len() / d;
        let labels = labeled.then(|| LabelVector::new(labels));
        Self::new(EmbeddingMatrix::new(data, n, d)?, labels)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingDump {
        let e = EmbeddingMatrix::new(vec![0.6, 0.8, 1.0, 0.0, 0.0, -1.0], 3, 2).unwrap();
        EmbeddingDump::new(e, Some(LabelVector::new(vec![3, 1, 3]))).unwrap()
    }

    #[test]
    fn byte_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(bytes.len(), EmbeddingDump::encoded_len(3, 2, true));
        assert_eq!(bytes.len(), 19 + 12 + 24);
        assert_eq!(&bytes[..4], b"DMLE");
        assert_eq!(bytes[18], 1);
        assert_eq!(u32::from_le_bytes(bytes[19..23].try_into().unwrap()), 3);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().to_bytes();
        let back = EmbeddingDump::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.labels.unwrap().as_slice(), &[3, 1, 3]);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert_eq!(EmbeddingDump::from_bytes(&bytes).unwrap_err().to_string(), "bad magic");
        let bytes = sample().to_bytes();
        assert!(EmbeddingDump::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        assert!(EmbeddingDump::from_bytes(&bytes).is_err());
    }

    #[test]
    fn unlabeled_dump() {
        let e = EmbeddingMatrix::new(vec![1.0, 2.0], 1, 2).unwrap();
        let d = EmbeddingDump::new(e, None).unwrap();
        let bytes = d.to_bytes();
        assert_eq!(bytes.len(), 19 + 8);
        assert_eq!(EmbeddingDump::from_bytes(&bytes).unwrap(), d);
    }

    #[test]
    fn csv_input() {
        let d = EmbeddingDump::from_csv_str("label,e0,e1\n3,0.6,0.8\n1,1,0\n3,0,-1\n").unwrap();
        assert_eq!(d, sample());
        let u = EmbeddingDump::from_csv_str("e0,e1\n0.5,0.5\n").unwrap();
        assert!(u.labels.is_none());
        assert!(EmbeddingDump::from_csv_str("label,e0\nx,1\n").is_err());
    }
}
