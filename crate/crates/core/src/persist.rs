//! Binary state files and atomic artifact writes.
//!
//! Checkpoint layout, all little-endian: the tag `WWDAMP01`, `u64` N, `f64` t, then N values
//! of eta and N values of psi. A states file starts with `WWSTAT01`, `u64` N, `u64` record
//! count and `f64` accumulated dissipation (NaN when not recorded), followed by records laid
//! out like a checkpoint body.

use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::dynamics::SurfaceState;
use crate::grid::Field;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WWDAMP01";
pub const STATES_MAGIC: &[u8; 8] = b"WWSTAT01";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad header: expected tag {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("file is truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("file has {0} trailing bytes")]
    Trailing(usize),
    #[error("implausible node count {0}")]
    BadSize(u64),
}

/// Writes through a temporary file in the destination directory, then renames it into place.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        // NamedTempFile defaults to owner-only, which is wrong for published artifacts
        builder.permissions(fs::Permissions::from_mode(0o644));
    }
    let tmp = builder.tempfile_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn write_f64s(w: &mut dyn Write, values: &[f64]) -> io::Result<()> {
    values.iter().try_for_each(|v| w.write_all(&v.to_le_bytes()))
}

fn write_record(w: &mut dyn Write, state: &SurfaceState) -> io::Result<()> {
    w.write_all(&state.t.to_le_bytes())?;
    write_f64s(w, &state.eta.values)?;
    write_f64s(w, &state.psi.values)
}

pub fn encode_checkpoint(state: &SurfaceState, w: &mut dyn Write) -> io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(state.eta.len() as u64).to_le_bytes())?;
    write_record(w, state)
}

pub fn write_checkpoint(path: &Path, state: &SurfaceState) -> io::Result<()> {
    write_atomic(path, |w| encode_checkpoint(state, w))
}

pub fn write_states(path: &Path, states: &[&SurfaceState], dissipated: Option<f64>) -> io::Result<()> {
    let n = states.first().map_or(0, |s| s.eta.len());
    write_atomic(path, |w| {
        w.write_all(STATES_MAGIC)?;
        w.write_all(&(n as u64).to_le_bytes())?;
        w.write_all(&(states.len() as u64).to_le_bytes())?;
        w.write_all(&dissipated.unwrap_or(f64::NAN).to_le_bytes())?;
        states.iter().try_for_each(|s| write_record(w, s))
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, total: usize) -> Result<&'a [u8], PersistError> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(PersistError::Truncated { expected: total, found: self.bytes.len() });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn word(&mut self, total: usize) -> Result<[u8; 8], PersistError> {
        Ok(self.take(8, total)?.try_into().expect("eight bytes"))
    }

    fn f64s(&mut self, n: usize, total: usize) -> Result<Vec<f64>, PersistError> {
        Ok(self.take(8 * n, total)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect())
    }

    fn record(&mut self, n: usize, total: usize) -> Result<SurfaceState, PersistError> {
        let t = f64::from_le_bytes(self.word(total)?);
        let eta = self.f64s(n, total)?;
        let psi = self.f64s(n, total)?;
        Ok(SurfaceState { t, eta: Field::even(eta), psi: Field::even(psi) })
    }
}

fn header<'a>(bytes: &'a [u8], magic: &[u8; 8]) -> Result<(Cursor<'a>, usize), PersistError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let tag = cur.take(8, 16)?;
    if tag != magic {
        return Err(PersistError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(tag).into_owned(),
        });
    }
    let n = u64::from_le_bytes(cur.word(16)?);
    // keeps the size arithmetic below from overflowing on garbage
    if n == 0 || n > 1 << 24 {
        return Err(PersistError::BadSize(n));
    }
    Ok((cur, n as usize))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SurfaceState, PersistError> {
    let (mut cur, n) = header(bytes, CHECKPOINT_MAGIC)?;
    let total = 16 + 8 + 16 * n;
    let state = cur.record(n, total)?;
    if bytes.len() > total {
        return Err(PersistError::Trailing(bytes.len() - total));
    }
    Ok(state)
}

pub fn read_checkpoint(path: &Path) -> Result<SurfaceState, PersistError> {
    decode_checkpoint(&fs::read(path)?)
}

/// Stored trajectory states and the dissipation recorded alongside them.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredStates {
    pub states: Vec<SurfaceState>,
    pub dissipated: Option<f64>,
}

pub fn decode_states(bytes: &[u8]) -> Result<StoredStates, PersistError> {
    let (mut cur, n) = header(bytes, STATES_MAGIC)?;
    let count = u64::from_le_bytes(cur.word(32)?);
    let record = 8 + 16 * n;
    let total = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(record))
        .and_then(|b| b.checked_add(32))
        .ok_or(PersistError::BadSize(count))?;
    let dissipated = f64::from_le_bytes(cur.word(total)?);
    let states = (0..count).map(|_| cur.record(n, total)).collect::<Result<Vec<_>, _>>()?;
    if bytes.len() > total {
        return Err(PersistError::Trailing(bytes.len() - total));
    }
    Ok(StoredStates { states, dissipated: (!dissipated.is_nan()).then_some(dissipated) })
}

pub fn read_states(path: &Path) -> Result<StoredStates, PersistError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_states(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, t: f64) -> SurfaceState {
        let eta: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 1e-3).collect();
        let psi: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos() / 3.0).collect();
        SurfaceState { t, eta: Field::even(eta), psi: Field::even(psi) }
    }

    fn encode(state: &SurfaceState) -> Vec<u8> {
        let mut bytes = Vec::new();
        encode_checkpoint(state, &mut bytes).unwrap();
        bytes
    }

    #[test]
    fn zero_state_roundtrip() {
        let s = SurfaceState { t: 0.0, eta: Field::zeros(32), psi: Field::zeros(32) };
        assert_eq!(decode_checkpoint(&encode(&s)).unwrap(), s);
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let mut bytes = encode(&sample(16, 1.5));
        bytes[7] = b'2';
        assert!(matches!(decode_checkpoint(&bytes), Err(PersistError::BadMagic { .. })));
    }

    #[test]
    fn truncated_and_padded_files_are_rejected() {
        let bytes = encode(&sample(16, 1.5));
        for cut in [0, 5, 12, 20, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(PersistError::Truncated { .. })), "cut {cut}");
        }
        let mut padded = bytes.clone();
        padded.push(0);
        assert!(matches!(decode_checkpoint(&padded), Err(PersistError::Trailing(1))));
    }

    #[test]
    fn states_roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("states.bin");
        let a = sample(16, 0.0);
        let b = sample(16, 0.25);
        write_states(&path, &[&a, &b], Some(0.125)).unwrap();
        let back = read_states(&path).unwrap();
        assert_eq!(back.states, vec![a.clone(), b]);
        assert_eq!(back.dissipated, Some(0.125));
        write_states(&path, &[&a], None).unwrap();
        assert_eq!(read_states(&path).unwrap().dissipated, None);
    }

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        write_checkpoint(&path, &sample(16, 2.0)).unwrap();
        let failed = write_atomic(&path, |_| Err(io::Error::other("boom")));
        assert!(failed.is_err());
        assert_eq!(read_checkpoint(&path).unwrap(), sample(16, 2.0));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
