//! Array files: a raw little-endian `f64` payload with a JSON sidecar
//! `<path>.json` holding `{"shape", "dtype": "f8", "order": "row-major"}`.
//! Complex arrays interleave `(re, im)` and set `"complex": true`.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Field, Space};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub order: String,
    #[serde(default)]
    pub complex: bool,
}

impl ArrayHeader {
    pub fn new(shape: Vec<usize>, complex: bool) -> Self {
        Self {
            shape,
            dtype: "f8".into(),
            order: "row-major".into(),
            complex,
        }
    }

    /// Number of `f64` values in the payload.
    pub fn payload_len(&self) -> usize {
        self.shape.iter().product::<usize>() * if self.complex { 2 } else { 1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayFile {
    pub header: ArrayHeader,
    pub values: Vec<f64>,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::ArrayFormat {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn write_array(path: &Path, header: &ArrayHeader, values: &[f64]) -> Result<()> {
    if values.len() != header.payload_len() {
        return Err(Error::invalid(
            "array",
            format!("{} values for a header expecting {}", values.len(), header.payload_len()),
        ));
    }
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(io_error(path))?;
    let meta = sidecar(path);
    let json = serde_json::to_string(header).expect("headers always serialize");
    fs::write(&meta, json).map_err(io_error(&meta))
}

pub fn read_array(path: &Path) -> Result<ArrayFile> {
    let meta = sidecar(path);
    let text = fs::read_to_string(&meta).map_err(io_error(&meta))?;
    let header: ArrayHeader = serde_json::from_str(&text).map_err(|e| format_error(&meta, e.to_string()))?;
    if header.dtype != "f8" || header.order != "row-major" {
        return Err(format_error(
            &meta,
            format!("unsupported dtype {} / order {}", header.dtype, header.order),
        ));
    }
    let bytes = fs::read(path).map_err(io_error(path))?;
    if bytes.len() != 8 * header.payload_len() {
        return Err(format_error(
            path,
            format!("{} bytes for shape {:?}", bytes.len(), header.shape),
        ));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of eight")))
        .collect();
    Ok(ArrayFile { header, values })
}

fn shape_of(space: &Space) -> Vec<usize> {
    match space {
        Space::Grid(g) => g.shape().to_vec(),
        Space::Harmonic(h) => h.shape().to_vec(),
        Space::Data(_) | Space::Bins(_) => vec![space.size()],
    }
}

impl Field {
    /// Writes the field; harmonic fields keep their imaginary parts.
    pub fn write(&self, path: &Path) -> Result<()> {
        let complex = self.space().is_harmonic();
        let values: Vec<f64> = if complex {
            self.values().iter().flat_map(|c| [c.re, c.im]).collect()
        } else {
            self.real_values()
        };
        write_array(path, &ArrayHeader::new(shape_of(self.space()), complex), &values)
    }

    /// Reads a field written for `space`.
    pub fn read(space: Space, path: &Path) -> Result<Field> {
        let file = read_array(path)?;
        let expected = ArrayHeader::new(shape_of(&space), space.is_harmonic());
        if file.header.shape != expected.shape || file.header.complex != expected.complex {
            return Err(Error::SpaceMismatch {
                expected: space.to_string(),
                found: format!("array of shape {:?} (complex: {})", file.header.shape, file.header.complex),
            });
        }
        let values = if expected.complex {
            file.values.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
        } else {
            file.values.into_iter().map(Complex64::from).collect()
        };
        Field::new(space, values)
    }
}
