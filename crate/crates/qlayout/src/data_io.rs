//! Dataset files: CSV with a `label` column and IDX archives.

use std::io::Write;
use std::path::Path;

use qlayout_core::dataset::{argmax, one_hot};
use qlayout_core::{Dataset, Tensor};

use crate::error::{Error, Result};

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn labels_to_one_hot(path: &Path, labels: &[usize], classes: Option<usize>) -> Result<Vec<Tensor>> {
    let seen = labels.iter().max().map_or(0, |m| m + 1);
    let k = classes.unwrap_or(seen);
    if seen > k {
        return Err(format_err(path, format!("label {} outside {k} classes", seen - 1)));
    }
    Ok(labels.iter().map(|&c| one_hot(c, k)).collect())
}

/// Reads a CSV file with a header row. The `label` column holds class
/// indices; every other column is a feature. Samples are reshaped to
/// `input_shape` when given.
pub fn load_csv(path: &Path, input_shape: Option<&[usize]>, classes: Option<usize>) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_col = headers
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| format_err(path, "no `label` column in header"))?;
    let width = headers.len() - 1;
    let shape = input_shape.map_or_else(|| vec![width], <[usize]>::to_vec);
    if shape.iter().product::<usize>() != width {
        return Err(format_err(
            path,
            format!("{width} feature columns do not fit shape {shape:?}"),
        ));
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let mut x = Vec::with_capacity(width);
        for (col, field) in record.iter().enumerate() {
            let field = field.trim();
            if col == label_col {
                let c: usize = field
                    .parse()
                    .map_err(|_| format_err(path, format!("row {}: label `{field}` is not a class index", row + 1)))?;
                labels.push(c);
            } else {
                x.push(
                    field
                        .parse::<f64>()
                        .map_err(|_| format_err(path, format!("row {}: `{field}` is not a number", row + 1)))?,
                );
            }
        }
        inputs.push(Tensor::new(shape.clone(), x).map_err(|e| format_err(path, format!("row {}: {e}", row + 1)))?);
    }
    let labels = labels_to_one_hot(path, &labels, classes)?;
    Ok(Dataset::new(path.display().to_string(), inputs, labels)?)
}

/// Writes flattened features `x0..xN` and the class index of each label.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let width = data.inputs()[0].len();
    let mut header: Vec<String> = (0..width).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (x, y) in data.inputs().iter().zip(data.labels()) {
        let mut row: Vec<String> = x.data().iter().map(|v| format!("{v:?}")).collect();
        row.push(argmax(y).to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Idx {
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn read_idx(path: &Path) -> Result<Idx> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(path, "not an IDX file"));
    }
    let (code, ndims) = (bytes[2], bytes[3] as usize);
    let width = match code {
        0x08 | 0x09 => 1,
        0x0B => 2,
        0x0C | 0x0D => 4,
        0x0E => 8,
        other => return Err(format_err(path, format!("unknown IDX type code {other:#04x}"))),
    };
    let head = 4 + 4 * ndims;
    if bytes.len() < head {
        return Err(format_err(path, "IDX header is truncated"));
    }
    let dims: Vec<usize> = bytes[4..head]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != head + count * width {
        return Err(format_err(path, "IDX payload length does not match its dimensions"));
    }
    let body = &bytes[head..];
    let values = body
        .chunks_exact(width)
        .map(|c| match code {
            0x08 => c[0] as f64,
            0x09 => c[0] as i8 as f64,
            0x0B => i16::from_be_bytes([c[0], c[1]]) as f64,
            0x0C => i32::from_be_bytes(c.try_into().expect("4 bytes")) as f64,
            0x0D => f32::from_be_bytes(c.try_into().expect("4 bytes")) as f64,
            _ => f64::from_be_bytes(c.try_into().expect("8 bytes")),
        })
        .collect();
    Ok(Idx { dims, values })
}

/// Reads an IDX image/label pair. Unsigned-byte images are scaled to
/// `[0, 1]`; 2-D samples get a leading channel axis.
pub fn load_idx(images: &Path, labels: &Path, classes: Option<usize>) -> Result<Dataset> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if img.dims.is_empty() || lab.dims.len() != 1 || img.dims[0] != lab.dims[0] {
        return Err(format_err(labels, "label count does not match image count"));
    }
    let bytes = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let scale = if bytes[2] == 0x08 { 1.0 / 255.0 } else { 1.0 };
    let mut shape = img.dims[1..].to_vec();
    if shape.len() == 2 {
        shape.insert(0, 1);
    }
    let per: usize = shape.iter().product();
    let inputs = img
        .values
        .chunks_exact(per.max(1))
        .map(|c| Tensor::new(shape.clone(), c.iter().map(|v| v * scale).collect()))
        .collect::<qlayout_core::Result<Vec<_>>>()?;
    let classes_idx: Vec<usize> = lab.values.iter().map(|&v| v as usize).collect();
    let labels_t = labels_to_one_hot(labels, &classes_idx, classes)?;
    Ok(Dataset::new(images.display().to_string(), inputs, labels_t)?)
}

/// Writes samples as a big-endian f64 IDX file and class indices as unsigned bytes.
pub fn write_idx(images: &Path, labels: &Path, data: &Dataset) -> Result<()> {
    let shape = data.inputs()[0].shape();
    let mut out = vec![0, 0, 0x0E, (shape.len() + 1) as u8];
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    for d in shape {
        out.extend_from_slice(&(*d as u32).to_be_bytes());
    }
    for x in data.inputs() {
        for v in x.data() {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    std::fs::write(images, out).map_err(|e| Error::io(images, e))?;
    let mut lab = vec![0, 0, 0x08, 1];
    lab.extend_from_slice(&(data.len() as u32).to_be_bytes());
    for y in data.labels() {
        let c = argmax(y);
        if c > 255 {
            return Err(format_err(labels, "class index does not fit an unsigned byte"));
        }
        lab.push(c as u8);
    }
    let mut f = std::fs::File::create(labels).map_err(|e| Error::io(labels, e))?;
    f.write_all(&lab).map_err(|e| Error::io(labels, e))?;
    Ok(())
}
