//! Binary model files.
//!
//! Every record starts with one ASCII header line of space-separated fields
//! terminated by `\n`, followed by raw little-endian `f64` payload. Reals in
//! headers use Rust's shortest round-trip formatting, so files round-trip
//! bit-exactly.
//!
//! * `MSDA1 d_in d_out p ridge`, then `d_out * (d_in + 1)` weights row-major
//!   (bias last in each row).
//! * `MSDA1B seed d r n_blocks p ridge`, then three text lines (permutation,
//!   `n_blocks + 1` boundaries, `r` targets), then one `MSDA1` record per block.
//! * `MSDA1S l p ridge squash mode d_0 d_1 ... d_l` with mode `standard` or
//!   `blockwise`, then an `MSDA1B` record when blockwise, then the standard
//!   layers as `MSDA1` records.
//! * `LINM1 loss C d`, then `d` weights and the bias.

use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use faer::Mat;

use crate::classifier::{LinearModel, LossKind};
use crate::error::{Error, Result};
use crate::highdim::{BlockLayer, BlockPlan};
use crate::mda::DenoisingMap;
use crate::stack::{Squash, StackModel};

/// Writes through a temporary file in the target directory, then renames it
/// into place so readers never observe a partial file.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        body(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_f64s(w: &mut dyn Write, values: impl IntoIterator<Item = f64>) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_map(w: &mut dyn Write, map: &DenoisingMap) -> std::io::Result<()> {
    writeln!(
        w,
        "MSDA1 {} {} {} {}",
        map.d_in(),
        map.d_out(),
        map.p(),
        map.ridge()
    )?;
    let wts = map.weights();
    for i in 0..map.d_out() {
        write_f64s(w, (0..=map.d_in()).map(|j| wts[(i, j)]))?;
    }
    Ok(())
}

pub fn write_block_layer(w: &mut dyn Write, layer: &BlockLayer) -> std::io::Result<()> {
    let plan = layer.plan();
    writeln!(
        w,
        "MSDA1B {} {} {} {} {} {}",
        plan.seed(),
        plan.d(),
        plan.r(),
        plan.n_blocks(),
        layer.p(),
        layer.ridge()
    )?;
    writeln!(w, "{}", join(plan.permutation()))?;
    writeln!(w, "{}", join(plan.boundaries()))?;
    writeln!(w, "{}", join(layer.targets()))?;
    for map in layer.maps() {
        write_map(w, map)?;
    }
    Ok(())
}

pub fn write_stack(w: &mut dyn Write, model: &StackModel) -> std::io::Result<()> {
    let mut dims = vec![model.input_dim()];
    dims.extend(model.layer_dims());
    let mode = if model.first_block().is_some() {
        "blockwise"
    } else {
        "standard"
    };
    writeln!(
        w,
        "MSDA1S {} {} {} {} {mode} {}",
        model.layer_count(),
        model.p(),
        model.ridge(),
        model.squash().as_str(),
        join(&dims)
    )?;
    if let Some(block) = model.first_block() {
        write_block_layer(w, block)?;
    }
    for map in model.layers() {
        write_map(w, map)?;
    }
    Ok(())
}

pub fn write_linear(w: &mut dyn Write, model: &LinearModel) -> std::io::Result<()> {
    writeln!(
        w,
        "LINM1 {} {} {}",
        model.loss.as_str(),
        model.c,
        model.dim()
    )?;
    write_f64s(w, model.weights.iter().copied())?;
    write_f64s(w, [model.bias])
}

/// Reads the next header line and checks its magic.
fn header<R: BufRead>(r: &mut R, magic: &str) -> Result<Vec<String>> {
    let fields = line(r)?;
    if fields.first().map(String::as_str) != Some(magic) {
        return Err(Error::Format(format!(
            "expected a {magic} record, found {:?}",
            fields.first().map_or("end of file", String::as_str)
        )));
    }
    Ok(fields[1..].to_vec())
}

fn line<R: BufRead>(r: &mut R) -> Result<Vec<String>> {
    let mut buf = Vec::new();
    r.read_until(b'\n', &mut buf)
        .map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
    if buf.last() != Some(&b'\n') {
        return Err(Error::Format("truncated header line".into()));
    }
    let text =
        std::str::from_utf8(&buf).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    Ok(text.split_ascii_whitespace().map(str::to_owned).collect())
}

fn field<T: std::str::FromStr>(fields: &[String], i: usize, name: &str) -> Result<T> {
    fields
        .get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("missing or invalid header field {name}")))
}

fn arity(fields: &[String], n: usize, magic: &str) -> Result<()> {
    if fields.len() != n {
        return Err(Error::Format(format!(
            "{magic} header has {} fields, expected {n}",
            fields.len()
        )));
    }
    Ok(())
}

fn usize_line<R: BufRead>(r: &mut R, len: usize, name: &str) -> Result<Vec<usize>> {
    let fields = line(r)?;
    if fields.len() != len {
        return Err(Error::Format(format!(
            "{name} has {} entries, expected {len}",
            fields.len()
        )));
    }
    (0..len).map(|i| field(&fields, i, name)).collect()
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated weight payload".into()))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_map<R: BufRead>(r: &mut R) -> Result<DenoisingMap> {
    let h = header(r, "MSDA1")?;
    arity(&h, 4, "MSDA1")?;
    let d_in: usize = field(&h, 0, "d_in")?;
    let d_out: usize = field(&h, 1, "d_out")?;
    let p: f64 = field(&h, 2, "p")?;
    let ridge: f64 = field(&h, 3, "ridge")?;
    let cols = d_in + 1;
    let values = read_f64s(r, d_out * cols)?;
    DenoisingMap::from_weights(
        Mat::from_fn(d_out, cols, |i, j| values[i * cols + j]),
        p,
        ridge,
    )
}

pub fn read_block_layer<R: BufRead>(r: &mut R) -> Result<BlockLayer> {
    let h = header(r, "MSDA1B")?;
    arity(&h, 6, "MSDA1B")?;
    let seed: u64 = field(&h, 0, "seed")?;
    let d: usize = field(&h, 1, "d")?;
    let rr: usize = field(&h, 2, "r")?;
    let n_blocks: usize = field(&h, 3, "n_blocks")?;
    let permutation = usize_line(r, d, "permutation")?;
    let boundaries = usize_line(r, n_blocks + 1, "boundaries")?;
    let targets = usize_line(r, rr, "targets")?;
    let plan = BlockPlan::from_parts(rr, seed, permutation, boundaries)?;
    let maps = (0..n_blocks)
        .map(|_| read_map(r))
        .collect::<Result<Vec<_>>>()?;
    BlockLayer::from_parts(plan, targets, maps)
}

pub fn read_stack<R: BufRead>(r: &mut R) -> Result<StackModel> {
    let h = header(r, "MSDA1S")?;
    let l: usize = field(&h, 0, "l")?;
    arity(&h, 6 + l, "MSDA1S")?;
    let p: f64 = field(&h, 1, "p")?;
    let ridge: f64 = field(&h, 2, "ridge")?;
    let squash =
        Squash::parse(&h[3]).ok_or_else(|| Error::Format(format!("unknown squash {:?}", h[3])))?;
    let blockwise = match h[4].as_str() {
        "standard" => false,
        "blockwise" => true,
        other => return Err(Error::Format(format!("unknown stack mode {other:?}"))),
    };
    let dims: Vec<usize> = (0..=l)
        .map(|i| field(&h, 5 + i, "dims"))
        .collect::<Result<_>>()?;
    let first_block = if blockwise {
        Some(read_block_layer(r)?)
    } else {
        None
    };
    let standard = l
        .checked_sub(usize::from(blockwise))
        .ok_or_else(|| Error::Format("blockwise stack with zero layers".into()))?;
    let layers = (0..standard)
        .map(|_| read_map(r))
        .collect::<Result<Vec<_>>>()?;
    let model = StackModel::from_parts(p, ridge, squash, first_block, layers)?;
    let mut found = vec![model.input_dim()];
    found.extend(model.layer_dims());
    if found != dims {
        return Err(Error::Format(
            "stack header dimensions disagree with its layers".into(),
        ));
    }
    Ok(model)
}

pub fn read_linear<R: BufRead>(r: &mut R) -> Result<LinearModel> {
    let h = header(r, "LINM1")?;
    arity(&h, 3, "LINM1")?;
    let loss =
        LossKind::parse(&h[0]).ok_or_else(|| Error::Format(format!("unknown loss {:?}", h[0])))?;
    let c: f64 = field(&h, 1, "C")?;
    let d: usize = field(&h, 2, "d")?;
    let mut values = read_f64s(r, d + 1)?;
    let bias = values.pop().unwrap();
    Ok(LinearModel {
        weights: values,
        bias,
        c,
        loss,
    })
}

fn load<T>(path: &Path, read: impl FnOnce(&mut &[u8]) -> Result<T>) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = bytes.as_slice();
    let value = read(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes in {}",
            cursor.len(),
            path.display()
        )));
    }
    Ok(value)
}

pub fn save_map(path: &Path, map: &DenoisingMap) -> Result<()> {
    write_atomic(path, |w| write_map(w, map))
}

pub fn load_map(path: &Path) -> Result<DenoisingMap> {
    load(path, |r| read_map(r))
}

pub fn save_stack(path: &Path, model: &StackModel) -> Result<()> {
    write_atomic(path, |w| write_stack(w, model))
}

pub fn load_stack(path: &Path) -> Result<StackModel> {
    load(path, |r| read_stack(r))
}

pub fn save_linear(path: &Path, model: &LinearModel) -> Result<()> {
    write_atomic(path, |w| write_linear(w, model))
}

pub fn load_linear(path: &Path) -> Result<LinearModel> {
    load(path, |r| read_linear(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::highdim::{make_plan, train_block_layer};
    use crate::matrix::DataMatrix;
    use crate::mda::CorruptionSpec;
    use crate::stack::{BlockwiseConfig, StackConfig};

    fn toy() -> DataMatrix {
        let cols = (0..15)
            .map(|j| {
                (0..6)
                    .filter(|i| (i + j) % 3 != 0)
                    .map(|i| (i, (1 + (i * j) % 4) as f64))
                    .collect()
            })
            .collect::<Vec<Vec<_>>>();
        DataMatrix::from_sparse_columns(6, cols).unwrap()
    }

    fn bytes(f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Vec<u8> {
        let mut out = Vec::new();
        f(&mut out).unwrap();
        out
    }

    #[test]
    fn map_layout() {
        let map = DenoisingMap::from_weights(Mat::from_fn(1, 2, |_, j| j as f64 + 0.5), 0.25, 1e-5)
            .unwrap();
        let b = bytes(|w| write_map(w, &map));
        let head = b"MSDA1 1 1 0.25 0.00001\n";
        assert_eq!(&b[..head.len()], head);
        assert_eq!(&b[head.len()..head.len() + 8], &0.5f64.to_le_bytes());
        assert_eq!(b.len(), head.len() + 16);
        assert_eq!(read_map(&mut b.as_slice()).unwrap(), map);
    }

    #[test]
    fn stack_round_trip() {
        let x = toy();
        let model = StackModel::train(&x, &StackConfig::new(0.3, 2)).unwrap();
        let b = bytes(|w| write_stack(w, &model));
        assert_eq!(read_stack(&mut b.as_slice()).unwrap(), model);
        assert!(b.starts_with(b"MSDA1S 2 0.3 0.00001 tanh standard 6 6 6\n"));
    }

    #[test]
    fn blockwise_stack_round_trip() {
        let x = toy();
        let config = StackConfig::new(0.5, 2).blockwise(BlockwiseConfig {
            targets: vec![0, 2, 4],
            block_size: 4,
            seed: 7,
        });
        let model = StackModel::train(&x, &config).unwrap();
        let b = bytes(|w| write_stack(w, &model));
        let back = read_stack(&mut b.as_slice()).unwrap();
        assert_eq!(back, model);
        assert_eq!(bytes(|w| write_stack(w, &back)), b);
    }

    #[test]
    fn block_layer_round_trip() {
        let x = toy();
        let plan = make_plan(6, 2, 3, 1).unwrap();
        let layer =
            train_block_layer(&x, &[1, 3], &plan, CorruptionSpec::new(0.4).unwrap(), 1e-5).unwrap();
        let b = bytes(|w| write_block_layer(w, &layer));
        assert_eq!(read_block_layer(&mut b.as_slice()).unwrap(), layer);
    }

    #[test]
    fn linear_round_trip() {
        let model = LinearModel {
            weights: vec![1.5, -0.25, 1e-300],
            bias: -3.0,
            c: 10.0,
            loss: LossKind::Logistic,
        };
        let b = bytes(|w| write_linear(w, &model));
        assert!(b.starts_with(b"LINM1 logistic 10 3\n"));
        assert_eq!(read_linear(&mut b.as_slice()).unwrap(), model);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let map = DenoisingMap::from_weights(Mat::zeros(2, 3), 0.5, 0.0).unwrap();
        let b = bytes(|w| write_map(w, &map));
        assert!(matches!(
            read_map(&mut &b[..b.len() - 1]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            read_stack(&mut b.as_slice()),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            read_map(&mut &b"MSDA1 2\n"[..]),
            Err(Error::Format(_))
        ));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let mut extra = b.clone();
        extra.push(0);
        fs::write(&path, extra).unwrap();
        assert!(matches!(load_map(&path), Err(Error::Format(_))));
        save_map(&path, &map).unwrap();
        assert_eq!(load_map(&path).unwrap(), map);
    }
}
