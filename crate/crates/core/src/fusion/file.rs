//! Binary per-image feature container (`<image_id>.pfus`).
//!
//! Layout: magic `PFUS1`, then little-endian u32 `D`, `N_o`, `N_p`, then
//! row-major little-endian f32 blocks: object features (`N_o x D`), object
//! boxes (4 floats each), part features (`N_p x D`), part boxes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::BBox;

use super::ProposalSet;

const MAGIC: &[u8; 5] = b"PFUS1";

pub fn write_feature_file(path: &Path, proposals: &ProposalSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(proposals.feature_dim() as u32)?;
    w.write_u32::<LittleEndian>(proposals.n_objects() as u32)?;
    w.write_u32::<LittleEndian>(proposals.n_parts() as u32)?;
    for v in proposals.object_features().iter() {
        w.write_f32::<LittleEndian>(*v as f32)?;
    }
    for b in proposals.object_boxes() {
        write_box(&mut w, b)?;
    }
    for v in proposals.part_features().iter() {
        w.write_f32::<LittleEndian>(*v as f32)?;
    }
    for b in proposals.part_boxes() {
        write_box(&mut w, b)?;
    }
    w.flush()?;
    Ok(())
}

fn write_box(w: &mut impl Write, b: &BBox) -> Result<()> {
    w.write_f32::<LittleEndian>(b.x_min as f32)?;
    w.write_f32::<LittleEndian>(b.y_min as f32)?;
    w.write_f32::<LittleEndian>(b.x_max as f32)?;
    w.write_f32::<LittleEndian>(b.y_max as f32)?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<ProposalSet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| bad(path, "truncated header"))?;
    if &magic != MAGIC {
        return Err(bad(path, "bad magic"));
    }
    let d = r.read_u32::<LittleEndian>()? as usize;
    let n_o = r.read_u32::<LittleEndian>()? as usize;
    let n_p = r.read_u32::<LittleEndian>()? as usize;

    let object_features = read_matrix(&mut r, n_o, d, path)?;
    let object_boxes = read_boxes(&mut r, n_o, path)?;
    let part_features = read_matrix(&mut r, n_p, d, path)?;
    let part_boxes = read_boxes(&mut r, n_p, path)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad(path, "trailing bytes after payload"));
    }
    ProposalSet::new(object_features, object_boxes, part_features, part_boxes)
}

fn bad(path: &Path, what: &str) -> Error {
    Error::FileFormat(format!("{}: {what}", path.display()))
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize, path: &Path) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(
            r.read_f32::<LittleEndian>()
                .map_err(|_| bad(path, "truncated feature block"))? as f64,
        );
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::Shape(format!("{}: {e}", path.display())))
}

fn read_boxes(r: &mut impl Read, n: usize, path: &Path) -> Result<Vec<BBox>> {
    let mut boxes = Vec::with_capacity(n);
    for _ in 0..n {
        let mut c = [0f64; 4];
        for v in &mut c {
            *v = r
                .read_f32::<LittleEndian>()
                .map_err(|_| bad(path, "truncated box block"))? as f64;
        }
        boxes.push(BBox::new(c[0], c[1], c[2], c[3])?);
    }
    Ok(boxes)
}
