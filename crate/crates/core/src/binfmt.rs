//! Little-endian container for named `f32` arrays.
//!
//! Layout:
//!
//! ```text
//! magic        8 bytes
//! version      u32
//! n_meta       u32
//!   key_len u32, key bytes (UTF-8), val_len u32, val bytes (UTF-8)   x n_meta
//! n_arrays     u32
//!   name_len u32, name bytes, ndim u32, dims u64 x ndim             x n_arrays
//! array data   row-major f32, in shape-table order
//! ```

use crate::CoreError;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        NamedArray { name: name.into(), shape, data }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayFile {
    pub magic: [u8; 8],
    pub version: u32,
    pub metadata: BTreeMap<String, String>,
    pub arrays: Vec<NamedArray>,
}

fn fmt_err(e: impl std::fmt::Display) -> CoreError {
    CoreError::Format(e.to_string())
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> Result<String, CoreError> {
    let n = r.read_u32::<LittleEndian>().map_err(fmt_err)? as usize;
    if n > 1 << 24 {
        return Err(CoreError::Format(format!("string length {n} is implausible")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(fmt_err)?;
    String::from_utf8(buf).map_err(fmt_err)
}

impl ArrayFile {
    pub fn new(magic: [u8; 8], version: u32) -> Self {
        ArrayFile { magic, version, metadata: BTreeMap::new(), arrays: Vec::new() }
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedArray, CoreError> {
        self.get(name).ok_or_else(|| CoreError::Format(format!("missing array `{name}`")))
    }

    pub fn meta(&self, key: &str) -> Result<&str, CoreError> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CoreError::Format(format!("missing metadata key `{key}`")))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&self.magic)?;
        w.write_u32::<LittleEndian>(self.version)?;
        w.write_u32::<LittleEndian>(self.metadata.len() as u32)?;
        for (k, v) in &self.metadata {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        w.write_u32::<LittleEndian>(self.arrays.len() as u32)?;
        for a in &self.arrays {
            write_str(w, &a.name)?;
            w.write_u32::<LittleEndian>(a.shape.len() as u32)?;
            for &d in &a.shape {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
        }
        for a in &self.arrays {
            for &v in &a.data {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(r: &mut impl Read, expected_magic: &[u8; 8]) -> Result<Self, CoreError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(fmt_err)?;
        if &magic != expected_magic {
            return Err(CoreError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(expected_magic)
            )));
        }
        let version = r.read_u32::<LittleEndian>().map_err(fmt_err)?;
        let n_meta = r.read_u32::<LittleEndian>().map_err(fmt_err)?;
        let mut metadata = BTreeMap::new();
        for _ in 0..n_meta {
            let k = read_str(r)?;
            let v = read_str(r)?;
            metadata.insert(k, v);
        }
        let n_arr = r.read_u32::<LittleEndian>().map_err(fmt_err)?;
        let mut table = Vec::with_capacity(n_arr as usize);
        for _ in 0..n_arr {
            let name = read_str(r)?;
            let ndim = r.read_u32::<LittleEndian>().map_err(fmt_err)?;
            if ndim > 16 {
                return Err(CoreError::Format(format!("array `{name}` has {ndim} dims")));
            }
            let mut shape = Vec::with_capacity(ndim as usize);
            for _ in 0..ndim {
                shape.push(r.read_u64::<LittleEndian>().map_err(fmt_err)? as usize);
            }
            table.push((name, shape));
        }
        let mut arrays = Vec::with_capacity(table.len());
        for (name, shape) in table {
            let n: usize = shape.iter().product();
            let mut data = vec![0f32; n];
            r.read_f32_into::<LittleEndian>(&mut data).map_err(fmt_err)?;
            arrays.push(NamedArray { name, shape, data });
        }
        Ok(ArrayFile { magic, version, metadata, arrays })
    }

    pub fn from_bytes(bytes: &[u8], expected_magic: &[u8; 8]) -> Result<Self, CoreError> {
        let mut cur = std::io::Cursor::new(bytes);
        let f = Self::read_from(&mut cur, expected_magic)?;
        if (cur.position() as usize) != bytes.len() {
            return Err(CoreError::Format("trailing bytes after array data".into()));
        }
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<(), CoreError> {
        std::fs::write(path, self.to_bytes()).map_err(fmt_err)
    }

    pub fn load(path: &Path, expected_magic: &[u8; 8]) -> Result<Self, CoreError> {
        let bytes = std::fs::read(path).map_err(fmt_err)?;
        Self::from_bytes(&bytes, expected_magic)
    }
}
