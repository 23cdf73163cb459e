//! Ensemble serialization: the `WPE1` columnar binary dump and a CSV export
//! of per-step summary statistics.
//!
//! `WPE1` layout, little endian:
//!   magic `b"WPE1"`, then `steps`, `dim`, `num_paths`, `seed` as u64,
//!   `direction` as one byte (0 forward, 1 reversed), then node values as
//!   f64, path-major (`path, node, coord`).

use std::io::{Read, Write};

use super::{increment_moments, Direction, PathCursor, PathEnsemble};
use crate::error::{LabError, Result};

pub const WPE1_MAGIC: &[u8; 4] = b"WPE1";

/// Header of a `WPE1` dump.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wpe1Header {
    pub steps: u64,
    pub dim: u64,
    pub num_paths: u64,
    pub seed: u64,
    pub direction: Direction,
}

/// Streams the ensemble's node values to `w` in `WPE1` format.
pub fn write_wpe1(e: &PathEnsemble, w: &mut impl Write) -> Result<()> {
    w.write_all(WPE1_MAGIC)?;
    for v in [
        e.grid().steps() as u64,
        e.dimension() as u64,
        e.num_paths() as u64,
        e.seed(),
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&[match e.direction() {
        Direction::Forward => 0u8,
        Direction::Reversed => 1u8,
    }])?;
    let mut cursor = PathCursor::new(e);
    for p in 0..e.num_paths() {
        cursor.load(e, p);
        for x in &cursor.nodes {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a `WPE1` dump back: header plus the flat node-value array.
pub fn read_wpe1(r: &mut impl Read) -> Result<(Wpe1Header, Vec<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WPE1_MAGIC {
        return Err(LabError::InvalidParameter("bad WPE1 magic".into()));
    }
    let mut u = [0u8; 8];
    let mut next = || -> Result<u64> {
        r.read_exact(&mut u)?;
        Ok(u64::from_le_bytes(u))
    };
    let steps = next()?;
    let dim = next()?;
    let num_paths = next()?;
    let seed = next()?;
    let mut dir = [0u8; 1];
    r.read_exact(&mut dir)?;
    let direction = match dir[0] {
        0 => Direction::Forward,
        1 => Direction::Reversed,
        other => {
            return Err(LabError::InvalidParameter(format!(
                "bad WPE1 direction byte {other}"
            )))
        }
    };
    let count = (num_paths * (steps + 1) * dim) as usize;
    let mut body = vec![0.0f64; count];
    let mut buf = [0u8; 8];
    for x in body.iter_mut() {
        r.read_exact(&mut buf)?;
        *x = f64::from_le_bytes(buf);
    }
    Ok((
        Wpe1Header {
            steps,
            dim,
            num_paths,
            seed,
            direction,
        },
        body,
    ))
}

/// CSV of per-step increment statistics: one row per `(step, coord)`.
pub fn write_summary_csv(e: &PathEnsemble, w: &mut impl Write) -> Result<()> {
    let moments = increment_moments(e);
    writeln!(w, "# talagrand-lab v1")?;
    writeln!(w, "step,t_left,coord,incr_mean,incr_var")?;
    let d = e.dimension();
    for k in 0..e.grid().steps() {
        for c in 0..d {
            writeln!(
                w,
                "{},{},{},{},{}",
                k,
                fmt12(e.grid().node(k)),
                c,
                fmt12(moments.means[k * d + c]),
                fmt12(moments.variances[k * d + c]),
            )?;
        }
    }
    Ok(())
}

/// Formats with 12 significant digits; used by every CSV the workspace emits.
pub fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wiener::{sample_paths, TimeGrid};

    #[test]
    fn wpe1_round_trip() {
        let g = TimeGrid::new(8).unwrap();
        let e = sample_paths(g, 2, 7, 13).unwrap().reversed();
        let mut buf = Vec::new();
        write_wpe1(&e, &mut buf).unwrap();
        let (header, body) = read_wpe1(&mut buf.as_slice()).unwrap();
        assert_eq!(header.steps, 8);
        assert_eq!(header.dim, 2);
        assert_eq!(header.num_paths, 7);
        assert_eq!(header.seed, 13);
        assert_eq!(header.direction, Direction::Reversed);
        assert_eq!(body, e.materialize());
    }

    #[test]
    fn summary_csv_has_versioned_header() {
        let g = TimeGrid::new(4).unwrap();
        let e = sample_paths(g, 1, 64, 3).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&e, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# talagrand-lab v1\n"));
        assert_eq!(text.lines().count(), 2 + 4);
    }
}
