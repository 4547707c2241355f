use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{LdnnError, Result};

/// Which CSV column holds the class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelColumn {
    #[default]
    First,
    Last,
    Index(usize),
}

impl LabelColumn {
    fn resolve(self, fields: usize) -> Option<usize> {
        match self {
            LabelColumn::First => Some(0),
            LabelColumn::Last => fields.checked_sub(1),
            LabelColumn::Index(i) if i < fields => Some(i),
            LabelColumn::Index(_) => None,
        }
    }
}

fn parse_err(name: &str, location: String, message: impl Into<String>) -> LdnnError {
    LdnnError::Parse {
        source_name: name.to_string(),
        location,
        message: message.into(),
    }
}

fn parse_label(field: &str) -> Option<usize> {
    if let Ok(v) = field.parse::<usize>() {
        return Some(v);
    }
    let v: f64 = field.parse().ok()?;
    (v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64).then_some(v as usize)
}

/// Parses CSV text: one instance per line, numeric fields, label in
/// `label_column`. A first line containing any non-numeric field is treated as
/// a header.
pub fn parse_csv<R: Read>(reader: R, name: &str, label_column: LabelColumn) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| parse_err(name, format!("record {}", idx + 1), e.to_string()))?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        let loc = format!("line {line}");
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if idx == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let fields = record.len();
        if fields < 2 {
            return Err(parse_err(name, loc, "need a label and at least one feature"));
        }
        match width {
            None => width = Some(fields),
            Some(w) if w != fields => {
                return Err(parse_err(
                    name,
                    loc,
                    format!("expected {w} fields, found {fields}"),
                ))
            }
            _ => {}
        }
        let label_at = label_column
            .resolve(fields)
            .ok_or_else(|| parse_err(name, loc.clone(), "label column out of range"))?;
        for (c, field) in record.iter().enumerate() {
            if c == label_at {
                let label = parse_label(field).ok_or_else(|| {
                    parse_err(name, loc.clone(), format!("label {field:?} is not a class index"))
                })?;
                labels.push(label);
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    parse_err(name, loc.clone(), format!("field {} ({field:?}) is not numeric", c + 1))
                })?;
                if !v.is_finite() {
                    return Err(parse_err(name, loc.clone(), format!("field {} is not finite", c + 1)));
                }
                features.push(v);
            }
        }
    }
    let width = width.ok_or_else(|| parse_err(name, "end of input".into(), "no data rows"))?;
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(features, width - 1, labels, classes)
}

pub fn load_csv(path: impl AsRef<Path>, label_column: LabelColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| LdnnError::io(path, e))?;
    parse_csv(BufReader::new(file), &path.display().to_string(), label_column)
}

/// Writes `label,feature_1,...,feature_n` lines, no header. Floats use the
/// shortest representation that round-trips.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| LdnnError::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for (row, label) in dataset.rows().zip(dataset.labels()) {
        let mut line = label.to_string();
        for v in row {
            line.push(',');
            line.push_str(&format!("{v:?}"));
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(|e| LdnnError::io(path, e))?;
    }
    out.flush().map_err(|e| LdnnError::io(path, e))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct IdxReader<'a> {
    name: String,
    bytes: &'a [u8],
    offset: usize,
}

impl IdxReader<'_> {
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(parse_err(
                &self.name,
                format!("offset {}", self.offset),
                format!("unexpected end of file (need {n} more bytes)"),
            ));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let m = self.u32()?;
        if m != expected {
            return Err(parse_err(
                &self.name,
                "offset 0".into(),
                format!("bad magic 0x{m:08x}, expected 0x{expected:08x}"),
            ));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| LdnnError::io(path, e))
}

/// Parses IDX image and label files; pixels are scaled to `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8], limit: Option<usize>, name: &str) -> Result<Dataset> {
    let mut img = IdxReader {
        name: format!("{name} (images)"),
        bytes: images,
        offset: 0,
    };
    img.magic(IDX_IMAGES_MAGIC)?;
    let count = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;
    let mut lab = IdxReader {
        name: format!("{name} (labels)"),
        bytes: labels,
        offset: 0,
    };
    lab.magic(IDX_LABELS_MAGIC)?;
    let label_count = lab.u32()? as usize;
    if label_count != count {
        return Err(parse_err(
            &lab.name,
            "offset 4".into(),
            format!("{label_count} labels for {count} images"),
        ));
    }
    if rows == 0 || cols == 0 {
        return Err(parse_err(&img.name, "offset 8".into(), "zero image dimension"));
    }
    let take = limit.map_or(count, |l| l.min(count));
    let pixels = img.take(take * rows * cols)?;
    let features: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let label_bytes = lab.take(take)?;
    let labels: Vec<usize> = label_bytes.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(10));
    let mut ds = Dataset::new(features, rows * cols, labels, classes)?;
    ds.image_shape = Some((rows, cols));
    Ok(ds)
}

pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    load_idx_limited(images, labels, None)
}

/// Like [`load_idx`] but keeps only the first `limit` instances.
pub fn load_idx_limited(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<Dataset> {
    let images = images.as_ref();
    let img = read_file(images)?;
    let lab = read_file(labels.as_ref())?;
    parse_idx(&img, &lab, limit, &images.display().to_string())
}
