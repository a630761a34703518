//! Little-endian binary formats.
//!
//! | format     | layout                                                              |
//! |------------|---------------------------------------------------------------------|
//! | cube       | `"HCUB"`, version u32, P u32, H u32, W u32, f64 band-major row-major |
//! | matrix     | `"HMAT"`, rows u32, cols u32, f64 row-major                          |
//! | checkpoint | `"HCKP"`, version u32, count u32, then per entry: name length u32, UTF-8 name, ndim u32, dims u32…, f64 row-major |
//! | library    | P u32, M u32, f64 column-major (one signature after another)        |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array3, IxDyn};

use crate::hsi::{AbundanceMatrix, EndmemberMatrix, Guidance, HsiCube};
use crate::nets::NbaParams;
use crate::{Error, Result, Scalar, Tensor};

pub const CUBE_MAGIC: &[u8; 4] = b"HCUB";
pub const MATRIX_MAGIC: &[u8; 4] = b"HMAT";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HCKP";
pub const CUBE_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Refuse headers implying more than this many values.
const MAX_VALUES: usize = 1 << 31;

fn magic<R: Read>(r: &mut R, want: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)?;
    if &got != want {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(want),
            String::from_utf8_lossy(&got)
        )));
    }
    Ok(())
}

fn dim<R: Read>(r: &mut R) -> Result<usize> {
    Ok(r.read_u32::<LE>()? as usize)
}

fn put_dim<W: Write>(w: &mut W, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))?;
    Ok(w.write_u32::<LE>(v)?)
}

fn count(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_VALUES)
        .ok_or_else(|| Error::Format(format!("dimensions {dims:?} too large")))
}

fn values<R: Read, T: Scalar>(r: &mut R, n: usize) -> Result<Vec<T>> {
    let mut buf = vec![0f64; n];
    r.read_f64_into::<LE>(&mut buf)?;
    Ok(buf.into_iter().map(T::lit).collect())
}

fn put_values<'a, W: Write, T: Scalar + 'a>(w: &mut W, it: impl IntoIterator<Item = &'a T>) -> Result<()> {
    for v in it {
        w.write_f64::<LE>(v.as_f64())?;
    }
    Ok(())
}

pub fn write_cube<W: Write, T: Scalar>(mut w: W, y: &HsiCube<T>) -> Result<()> {
    w.write_all(CUBE_MAGIC)?;
    w.write_u32::<LE>(CUBE_VERSION)?;
    put_dim(&mut w, y.bands(), "bands")?;
    put_dim(&mut w, y.height(), "height")?;
    put_dim(&mut w, y.width(), "width")?;
    put_values(&mut w, y.data().iter())?;
    Ok(w.flush()?)
}

pub fn read_cube<R: Read, T: Scalar>(mut r: R) -> Result<HsiCube<T>> {
    magic(&mut r, CUBE_MAGIC)?;
    let version = r.read_u32::<LE>()?;
    if version != CUBE_VERSION {
        return Err(Error::Format(format!("unsupported cube version {version}")));
    }
    let (p, h, w) = (dim(&mut r)?, dim(&mut r)?, dim(&mut r)?);
    let n = count(&[p, h, w])?;
    let data = Array3::from_shape_vec((p, h, w), values(&mut r, n)?).expect("length checked");
    HsiCube::new(data)
}

pub fn write_matrix<W: Write, T: Scalar>(mut w: W, m: &Array2<T>) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    put_dim(&mut w, m.nrows(), "rows")?;
    put_dim(&mut w, m.ncols(), "cols")?;
    put_values(&mut w, m.iter())?;
    Ok(w.flush()?)
}

pub fn read_matrix<R: Read, T: Scalar>(mut r: R) -> Result<Array2<T>> {
    magic(&mut r, MATRIX_MAGIC)?;
    let (rows, cols) = (dim(&mut r)?, dim(&mut r)?);
    let n = count(&[rows, cols])?;
    Ok(Array2::from_shape_vec((rows, cols), values(&mut r, n)?).expect("length checked"))
}

/// Named arrays in the checkpoint container.
pub fn write_checkpoint<'a, W: Write, T: Scalar + 'a>(
    mut w: W,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<()> {
    let entries: Vec<_> = entries.into_iter().collect();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LE>(CHECKPOINT_VERSION)?;
    put_dim(&mut w, entries.len(), "entry count")?;
    for (name, t) in entries {
        put_dim(&mut w, name.len(), "name length")?;
        w.write_all(name.as_bytes())?;
        put_dim(&mut w, t.ndim(), "rank")?;
        for &d in t.shape() {
            put_dim(&mut w, d, "dimension")?;
        }
        let t = t.as_standard_layout();
        put_values(&mut w, t.iter())?;
    }
    Ok(w.flush()?)
}

pub fn read_checkpoint<R: Read, T: Scalar>(mut r: R) -> Result<Vec<(String, Tensor<T>)>> {
    magic(&mut r, CHECKPOINT_MAGIC)?;
    let version = r.read_u32::<LE>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n = dim(&mut r)?;
    let mut out = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        let len = dim(&mut r)?;
        if len > 4096 {
            return Err(Error::Format(format!("entry name of {len} bytes")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
        let rank = dim(&mut r)?;
        if rank > 8 {
            return Err(Error::Format(format!("entry {name} has rank {rank}")));
        }
        let dims: Vec<usize> = (0..rank).map(|_| dim(&mut r)).collect::<Result<_>>()?;
        let len = count(&dims)?;
        let t = Tensor::from_shape_vec(IxDyn(&dims), values(&mut r, len)?).expect("length checked");
        out.push((name, t));
    }
    Ok(out)
}

/// Reads a `P × M` signature library.
pub fn read_library<R: Read>(mut r: R) -> Result<Array2<f64>> {
    let (p, m) = (dim(&mut r)?, dim(&mut r)?);
    let n = count(&[p, m])?;
    let v: Vec<f64> = values(&mut r, n)?;
    Ok(Array2::from_shape_fn((p, m), |(b, k)| v[k * p + b]))
}

pub fn write_library<W: Write>(mut w: W, lib: &Array2<f64>) -> Result<()> {
    put_dim(&mut w, lib.nrows(), "bands")?;
    put_dim(&mut w, lib.ncols(), "signatures")?;
    for col in lib.columns() {
        put_values(&mut w, col.iter())?;
    }
    Ok(w.flush()?)
}

pub fn save_params<T: Scalar>(path: &Path, params: &NbaParams<T>) -> Result<()> {
    let named = params.named();
    let entries = named.iter().map(|(n, t)| (n.as_str(), *t));
    write_checkpoint(BufWriter::new(File::create(path)?), entries)
}

/// Loads a checkpoint into `params`, which fixes the expected names and
/// shapes.
pub fn load_params<T: Scalar>(path: &Path, params: &mut NbaParams<T>) -> Result<()> {
    let entries = read_checkpoint(BufReader::new(File::open(path)?))?;
    params.load_named(entries)
}

pub fn save_guidance<T: Scalar>(path: &Path, g: &Guidance<T>) -> Result<()> {
    let e = g.endmembers.matrix().clone().into_dyn();
    let a = g.abundances.to_image().into_dyn();
    write_checkpoint(BufWriter::new(File::create(path)?), [("endmembers", &e), ("abundances", &a)])
}

pub fn load_guidance<T: Scalar>(path: &Path) -> Result<Guidance<T>> {
    let entries = read_checkpoint::<_, T>(BufReader::new(File::open(path)?))?;
    let find = |name: &str| {
        entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::Format(format!("guidance file lacks {name}")))
    };
    let e: Array2<T> = find("endmembers")?
        .into_dimensionality()
        .map_err(|_| Error::Format("guidance endmembers must be 2-D".into()))?;
    let a: Array3<T> = find("abundances")?
        .into_dimensionality()
        .map_err(|_| Error::Format("guidance abundances must be 3-D".into()))?;
    let (r, h, w) = a.dim();
    let a = a.into_shape_with_order((r, h * w)).expect("standard layout");
    Ok(Guidance { endmembers: EndmemberMatrix::new(e), abundances: AbundanceMatrix::new(a, h, w)? })
}

pub fn save_cube<T: Scalar>(path: &Path, y: &HsiCube<T>) -> Result<()> {
    write_cube(BufWriter::new(File::create(path)?), y)
}

pub fn load_cube<T: Scalar>(path: &Path) -> Result<HsiCube<T>> {
    read_cube(BufReader::new(File::open(path)?))
}

pub fn save_matrix<T: Scalar>(path: &Path, m: &Array2<T>) -> Result<()> {
    write_matrix(BufWriter::new(File::create(path)?), m)
}

pub fn load_matrix<T: Scalar>(path: &Path) -> Result<Array2<T>> {
    read_matrix(BufReader::new(File::open(path)?))
}

pub fn load_library(path: &Path) -> Result<Array2<f64>> {
    read_library(BufReader::new(File::open(path)?))
}
