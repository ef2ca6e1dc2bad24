//! On-disk formats for grids and optimizer checkpoints.
//!
//! Binary grid: `b"SDFG"`, version `u32`, resolution `u32`, origin `3 x f64`,
//! spacing `f64`, then `N^3` values as `f64`, all little endian, index
//! `i + N*(j + N*k)` (x fastest).
//!
//! Adam sidecar: `b"SDFA"`, version `u32`, resolution `u32`, step count `u64`,
//! `lr, beta1, beta2, eps` as `f64`, then the first and second moments.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridGeometry, SdfGrid};
use crate::optim::{AdamParams, AdamState};
use crate::real::Real;
use crate::vec3::Vec3;

pub const GRID_MAGIC: &[u8; 4] = b"SDFG";
pub const ADAM_MAGIC: &[u8; 4] = b"SDFA";
pub const FORMAT_VERSION: u32 = 1;

const GRID_HEADER_LEN: usize = 4 + 4 + 4 + 3 * 8 + 8;
const ADAM_HEADER_LEN: usize = 4 + 4 + 4 + 8 + 4 * 8;

pub fn encode_grid<T: Real>(grid: &SdfGrid<T>) -> Vec<u8> {
    let n = grid.resolution();
    let mut out = Vec::with_capacity(GRID_HEADER_LEN + 8 * grid.values().len());
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for a in 0..3 {
        out.extend_from_slice(&grid.origin()[a].as_f64().to_le_bytes());
    }
    out.extend_from_slice(&grid.spacing().as_f64().to_le_bytes());
    for v in grid.values() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    out
}

/// Little-endian reader that reports truncation instead of panicking.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.bytes.len() - self.pos < n {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> std::result::Result<usize, String> {
        if self.take(4)? != magic {
            return Err(format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let n = self.u32()? as usize;
        if n < 2 {
            return Err(format!("resolution {n} < 2"));
        }
        Ok(n)
    }

    fn values<T: Real>(&mut self, count: usize) -> std::result::Result<Vec<T>, String> {
        let raw = self.take(count.checked_mul(8).ok_or("size overflow")?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    fn finish(&self) -> std::result::Result<(), String> {
        if self.pos != self.bytes.len() {
            return Err(format!("{} trailing bytes", self.bytes.len() - self.pos));
        }
        Ok(())
    }
}

pub fn decode_grid<T: Real>(bytes: &[u8], path: &Path) -> Result<SdfGrid<T>> {
    let bad = |reason: String| Error::format("grid container", path, reason);
    let mut c = Cursor { bytes, pos: 0 };
    let n = c.header(GRID_MAGIC).map_err(bad)?;
    let mut origin = [0.0; 3];
    for o in &mut origin {
        *o = c.f64().map_err(bad)?;
    }
    let spacing = c.f64().map_err(bad)?;
    let values = c.values(n * n * n).map_err(bad)?;
    c.finish().map_err(bad)?;
    let geo = GridGeometry::new(n, Vec3::from_f64(origin[0], origin[1], origin[2]), T::lit(spacing))
        .map_err(|e| bad(e.to_string()))?;
    SdfGrid::new(geo, values).map_err(|e| bad(e.to_string()))
}

pub fn write_grid<T: Real>(grid: &SdfGrid<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_grid(grid)).map_err(|e| Error::io(path, e))
}

pub fn read_grid<T: Real>(path: &Path) -> Result<SdfGrid<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grid(&bytes, path)
}

/// Text dump: `resolution`, origin, spacing, then one value per line.
/// Values use Rust's shortest round-trip formatting, so the dump is lossless.
pub fn grid_to_text<T: Real>(grid: &SdfGrid<T>) -> String {
    let o = grid.origin();
    let mut s = format!(
        "{}\n{:?} {:?} {:?}\n{:?}\n",
        grid.resolution(),
        o.x.as_f64(),
        o.y.as_f64(),
        o.z.as_f64(),
        grid.spacing().as_f64()
    );
    for v in grid.values() {
        s.push_str(&format!("{:?}\n", v.as_f64()));
    }
    s
}

pub fn grid_from_text<T: Real>(text: &str, path: &Path) -> Result<SdfGrid<T>> {
    let bad = |line: usize, reason: String| Error::format("grid text dump", path, format!("line {line}: {reason}"));
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| lines.next().ok_or_else(|| bad(0, format!("missing {what}")));
    let num = |line: usize, tok: &str| tok.parse::<f64>().map_err(|e| bad(line, format!("'{tok}': {e}")));

    let (ln, l) = next("resolution")?;
    let n: usize = l.parse().map_err(|e| bad(ln, format!("'{l}': {e}")))?;
    let (ln, l) = next("origin")?;
    let o = l.split_whitespace().map(|t| num(ln, t)).collect::<Result<Vec<_>>>()?;
    if o.len() != 3 {
        return Err(bad(ln, format!("expected 3 origin components, got {}", o.len())));
    }
    let (ln, l) = next("spacing")?;
    let spacing = num(ln, l)?;
    let geo = GridGeometry::new(n, Vec3::from_f64(o[0], o[1], o[2]), T::lit(spacing)).map_err(|e| bad(1, e.to_string()))?;
    let mut values = Vec::with_capacity(geo.vertex_count());
    for (ln, l) in lines {
        if l.is_empty() {
            continue;
        }
        values.push(T::lit(num(ln, l)?));
    }
    if values.len() != geo.vertex_count() {
        return Err(bad(0, format!("expected {} values, got {}", geo.vertex_count(), values.len())));
    }
    SdfGrid::new(geo, values).map_err(|e| bad(0, e.to_string()))
}

pub fn encode_adam<T: Real>(state: &AdamState<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(ADAM_HEADER_LEN + 16 * state.m.len());
    out.extend_from_slice(ADAM_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(state.resolution() as u32).to_le_bytes());
    out.extend_from_slice(&state.step_count.to_le_bytes());
    let p = state.params;
    for x in [p.lr, p.beta1, p.beta2, p.eps] {
        out.extend_from_slice(&x.as_f64().to_le_bytes());
    }
    for x in state.m.iter().chain(&state.v) {
        out.extend_from_slice(&x.as_f64().to_le_bytes());
    }
    out
}

pub fn decode_adam<T: Real>(bytes: &[u8], path: &Path) -> Result<AdamState<T>> {
    let bad = |reason: String| Error::format("Adam checkpoint", path, reason);
    let mut c = Cursor { bytes, pos: 0 };
    let n = c.header(ADAM_MAGIC).map_err(bad)?;
    let steps = c.u64().map_err(bad)?;
    let mut p = [0.0; 4];
    for x in &mut p {
        *x = c.f64().map_err(bad)?;
    }
    let len = n * n * n;
    let m = c.values(len).map_err(bad)?;
    let v = c.values(len).map_err(bad)?;
    c.finish().map_err(bad)?;
    let params = AdamParams {
        lr: T::lit(p[0]),
        beta1: T::lit(p[1]),
        beta2: T::lit(p[2]),
        eps: T::lit(p[3]),
    };
    AdamState::from_parts(n, params, steps, m, v).map_err(|e| bad(e.to_string()))
}

pub fn write_adam<T: Real>(state: &AdamState<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_adam(state)).map_err(|e| Error::io(path, e))
}

pub fn read_adam<T: Real>(path: &Path) -> Result<AdamState<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_adam(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::init_torus;

    fn torus() -> SdfGrid<f64> {
        init_torus(9, Vec3::zero(), 0.3, 0.1, Vec3::splat(-0.5), 0.125).unwrap()
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.sdfg");
        let g = torus();
        write_grid(&g, &path).unwrap();
        let back: SdfGrid<f64> = read_grid(&path).unwrap();
        assert_eq!(back, g);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"SDFG");
        assert_eq!(bytes.len(), GRID_HEADER_LEN + 8 * 729);
        // value (1, 0, 0) is the second entry
        let second = f64::from_le_bytes(bytes[GRID_HEADER_LEN + 8..GRID_HEADER_LEN + 16].try_into().unwrap());
        assert_eq!(second, g.value(1, 0, 0));
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let p = Path::new("x");
        let bytes = encode_grid(&torus());
        assert!(decode_grid::<f64>(&bytes[..bytes.len() - 1], p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_grid::<f64>(&extra, p).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode_grid::<f64>(&magic, p).is_err());
        let mut nan = bytes;
        nan[GRID_HEADER_LEN..GRID_HEADER_LEN + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_grid::<f64>(&nan, p).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let g = torus();
        let text = grid_to_text(&g);
        assert_eq!(text.lines().count(), 3 + 729);
        let back: SdfGrid<f64> = grid_from_text(&text, Path::new("t")).unwrap();
        assert_eq!(back, g);
        let err = grid_from_text::<f64>("9\n0 0 0\n0.1\nabc\n", Path::new("t")).unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }

    #[test]
    fn adam_round_trip_is_exact() {
        let mut s = AdamState::new(3, AdamParams::default()).unwrap();
        s.step_count = 7;
        s.m[4] = 0.25;
        s.v[26] = 1e-9;
        let back: AdamState<f64> = decode_adam(&encode_adam(&s), Path::new("a")).unwrap();
        assert_eq!(back, s);
        assert!(decode_adam::<f64>(&encode_grid(&torus()), Path::new("a")).is_err());
    }
}
