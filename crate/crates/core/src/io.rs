//! CSV outputs and binary checkpoints.
//!
//! Every CSV starts with one `#` line listing the columns, the config hash
//! and run parameters; values use Rust's shortest round-trip float format so
//! identical runs give identical bytes.
//!
//! Binary blocks are little-endian: an 8-byte magic (`QHFPEW01` for a
//! single field, `QHFPES01` for a hierarchy state), then `Np`, `M` and the
//! number of `(2Np+1) × M` blocks as `u64`. State files carry `t` and `dt`
//! as two `f64` before the blocks.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::grid::{Field, PhaseSpaceGrid};
use crate::propagator::{HeomState, StateLayout, StepRecord};

pub const FIELD_MAGIC: &[u8; 8] = b"QHFPEW01";
pub const STATE_MAGIC: &[u8; 8] = b"QHFPES01";
const MAGIC_STEM: &[u8; 5] = b"QHFPE";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("empty output path")]
    EmptyPath,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: not a qhfpe {kind} file")]
    BadMagic { path: PathBuf, kind: &'static str },
    #[error("{path}: unsupported format version {found:?}")]
    Version { path: PathBuf, found: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn check_path(path: &Path) -> Result<(), IoError> {
    if path.as_os_str().is_empty() {
        Err(IoError::EmptyPath)
    } else {
        Ok(())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

/// Writes `# col1,col2 | meta` followed by the rows.
pub fn write_table<W: Write>(mut out: W, columns: &[&str], meta: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> std::io::Result<()> {
    write!(out, "# {}", columns.join(","))?;
    if !meta.is_empty() {
        write!(out, " | {meta}")?;
    }
    writeln!(out)?;
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.write_all(b",")?;
            }
            write!(out, "{v:e}")?;
            first = false;
        }
        writeln!(out)?;
    }
    out.flush()
}

pub fn write_table_file(path: &Path, columns: &[&str], meta: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), IoError> {
    check_path(path)?;
    let file = File::create(path).map_err(io_err(path))?;
    write_table(BufWriter::new(file), columns, meta, rows).map_err(io_err(path))
}

/// `(n, θ_m, value)` triples, row-major.
pub fn write_field_csv<W: Write>(out: W, grid: &PhaseSpaceGrid, field: &Field, meta: &str) -> std::io::Result<()> {
    let (rows, m) = grid.shape();
    let theta = grid.theta();
    let data = (0..rows).flat_map(|r| (0..m).map(move |j| (r, j))).map(|(r, j)| vec![grid.n_of_row(r) as f64, theta[j], field.get(r, j)]);
    write_table(out, &["n", "theta", "value"], meta, data)
}

pub fn write_step_log<W: Write>(out: W, log: &[StepRecord], meta: &str) -> std::io::Result<()> {
    let rows = log.iter().map(|r| vec![r.t, r.dt, r.err, if r.accepted { 1.0 } else { 0.0 }]);
    write_table(out, &["t", "dt", "err", "accepted"], meta, rows)
}

fn header(magic: &[u8; 8], rows: usize, cols: usize, count: usize) -> [u8; 32] {
    let mut h = [0u8; 32];
    h[..8].copy_from_slice(magic);
    h[8..16].copy_from_slice(&(((rows - 1) / 2) as u64).to_le_bytes());
    h[16..24].copy_from_slice(&(cols as u64).to_le_bytes());
    h[24..32].copy_from_slice(&(count as u64).to_le_bytes());
    h
}

fn write_f64s<W: Write>(out: &mut W, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(input: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    input.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

/// Returns `(Np, M, count)` after checking the magic.
fn read_header<R: Read>(input: &mut R, path: &Path, magic: &[u8; 8], kind: &'static str) -> Result<(usize, usize, usize), IoError> {
    let mut h = [0u8; 32];
    input.read_exact(&mut h).map_err(|_| IoError::BadMagic { path: path.into(), kind })?;
    if &h[..8] != magic {
        if h[..5] == MAGIC_STEM[..] && h[5] == magic[5] {
            return Err(IoError::Version { path: path.into(), found: String::from_utf8_lossy(&h[6..8]).into_owned() });
        }
        return Err(IoError::BadMagic { path: path.into(), kind });
    }
    let word = |i: usize| u64::from_le_bytes(h[i..i + 8].try_into().expect("8 bytes")) as usize;
    Ok((word(8), word(16), word(24)))
}

pub fn save_field(path: &Path, field: &Field) -> Result<(), IoError> {
    check_path(path)?;
    let (rows, cols) = field.shape();
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    out.write_all(&header(FIELD_MAGIC, rows, cols, 1)).map_err(io_err(path))?;
    write_f64s(&mut out, field.values()).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn load_field(path: &Path, grid: &PhaseSpaceGrid) -> Result<Field, IoError> {
    check_path(path)?;
    let mut input = BufReader::new(File::open(path).map_err(io_err(path))?);
    let (np, m, count) = read_header(&mut input, path, FIELD_MAGIC, "field")?;
    if np != grid.momentum_cutoff() || m != grid.cols() || count != 1 {
        return Err(IoError::Format {
            path: path.into(),
            message: format!("field is Np={np}, M={m}, count={count}; grid is Np={}, M={}", grid.momentum_cutoff(), grid.cols()),
        });
    }
    let values = read_f64s(&mut input, grid.cells()).map_err(io_err(path))?;
    Field::from_values(grid, values).map_err(|e| IoError::Format { path: path.into(), message: e.to_string() })
}

pub fn save_checkpoint(path: &Path, state: &HeomState) -> Result<(), IoError> {
    check_path(path)?;
    let layout = state.layout();
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    out.write_all(&header(STATE_MAGIC, layout.rows, layout.cols, layout.ados)).map_err(io_err(path))?;
    write_f64s(&mut out, &[state.t, state.dt]).map_err(io_err(path))?;
    write_f64s(&mut out, state.data()).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<HeomState, IoError> {
    check_path(path)?;
    let mut input = BufReader::new(File::open(path).map_err(io_err(path))?);
    let (np, m, ados) = read_header(&mut input, path, STATE_MAGIC, "state")?;
    let layout = StateLayout { ados, rows: 2 * np + 1, cols: m };
    let td = read_f64s(&mut input, 2).map_err(io_err(path))?;
    let data = read_f64s(&mut input, layout.len()).map_err(io_err(path))?;
    let mut rest = Vec::new();
    input.read_to_end(&mut rest).map_err(io_err(path))?;
    if !rest.is_empty() {
        return Err(IoError::Format { path: path.into(), message: format!("{} trailing bytes", rest.len()) });
    }
    HeomState::from_data(layout, td[0], td[1], data).map_err(|e| IoError::Format { path: path.into(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layout = StateLayout { ados: 4, rows: 9, cols: 8 };
        let data: Vec<f64> = (0..layout.len()).map(|_| rng.gen_range(-1e3..1e3) * rng.gen::<f64>().powi(9)).collect();
        let state = HeomState::from_data(layout, 12.5, 3.25e-3, data).unwrap();
        save_checkpoint(&path, &state).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.layout(), layout);
        assert_eq!(back.t.to_bits(), state.t.to_bits());
        assert!(back.data().iter().zip(state.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, 32 + 16 + 8 * layout.len());
    }

    #[test]
    fn rejects_wrong_magic_version_and_empty_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        let state = HeomState::zeros(StateLayout { ados: 1, rows: 3, cols: 8 });
        save_checkpoint(&path, &state).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[7] = b'9';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(IoError::Version { .. })));
        bytes[..8].copy_from_slice(b"GARBAGE!");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(IoError::BadMagic { .. })));
        assert!(matches!(save_checkpoint(Path::new(""), &state), Err(IoError::EmptyPath)));
        assert!(matches!(load_checkpoint(Path::new("")), Err(IoError::EmptyPath)));
        // A field file is not a state file.
        let grid = PhaseSpaceGrid::new(1, 8, 1.0).unwrap();
        save_field(&path, &Field::zeros(&grid)).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(IoError::BadMagic { .. })));
    }

    #[test]
    fn field_round_trip_and_shape_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let grid = PhaseSpaceGrid::new(3, 8, 1.0).unwrap();
        let f = Field::from_fn(&grid, |n, th| n as f64 + th.sin());
        save_field(&path, &f).unwrap();
        assert_eq!(load_field(&path, &grid).unwrap(), f);
        let other = PhaseSpaceGrid::new(2, 8, 1.0).unwrap();
        assert!(matches!(load_field(&path, &other), Err(IoError::Format { .. })));
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_table(&mut buf, &["theta", "P"], "config=abc beta=1", vec![vec![0.0, 0.5], vec![1.5, -2e-7]]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# theta,P | config=abc beta=1\n0e0,5e-1\n1.5e0,-2e-7\n");
        let grid = PhaseSpaceGrid::new(1, 8, 1.0).unwrap();
        let mut buf = Vec::new();
        write_field_csv(&mut buf, &grid, &Field::zeros(&grid), "").unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 8);
        assert!(text.starts_with("# n,theta,value\n-1e0,0e0,0e0\n"));
        let mut buf = Vec::new();
        write_step_log(&mut buf, &[StepRecord { t: 0.0, dt: 0.1, err: 1e-11, accepted: true, seconds: 0.3 }], "x").unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# t,dt,err,accepted | x\n0e0,1e-1,1e-11,1e0\n");
    }
}
