//! Dense integer tensors and their CSV file format.
//!
//! ```text
//! # shape=3,4
//! 1,2,3,4
//! ...
//! ```
//!
//! The first line carries the shape; data follows row-major, one line per
//! last-axis slice (a 1-D tensor is a single line). Further `#` lines are
//! comments.

use std::fmt::Display;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Copy> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.is_empty() {
            return Err(Error::invalid("tensor shape", "needs at least one axis"));
        }
        if len != data.len() {
            return Err(Error::length("tensor data", len, data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Result<Self> {
        let len = shape.iter().product();
        Tensor::new(shape, vec![value; len])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "tensor index rank");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            assert!(i < d, "tensor index {i} out of bounds for axis of size {d}");
            acc * d + i
        })
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], v: T) {
        let i = self.offset(index);
        self.data[i] = v;
    }

    /// Sub-tensors along the first axis, flattened.
    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        let width = self.data.len() / self.shape[0].max(1);
        self.data.chunks(width.max(1))
    }
}

impl<T: Copy + FromStr> Tensor<T>
where
    T::Err: Display,
{
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("").trim();
        let dims = header
            .strip_prefix('#')
            .map(str::trim)
            .and_then(|h| h.strip_prefix("shape="))
            .ok_or_else(|| Error::Data("tensor file must start with `# shape=...`".into()))?;
        let shape = dims
            .split(',')
            .map(|d| d.trim().parse::<usize>().map_err(|e| Error::Data(format!("bad shape `{dims}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let body: String = lines.filter(|l| !l.trim_start().starts_with('#')).collect::<Vec<_>>().join("\n");
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());
        let mut data = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Data(e.to_string()))?;
            for field in record.iter().filter(|f| !f.is_empty()) {
                data.push(field.parse::<T>().map_err(|e| Error::Data(format!("bad value `{field}`: {e}")))?);
            }
        }
        Tensor::new(shape, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Tensor::from_csv_str(&text).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

impl<T: Copy + Display> Tensor<T> {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<tensor>", e);
        let dims: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        writeln!(w, "# shape={}", dims.join(",")).map_err(io)?;
        let width = *self.shape.last().unwrap_or(&1);
        for line in self.data.chunks(width.max(1)) {
            let fields: Vec<String> = line.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", fields.join(",")).map_err(io)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}
