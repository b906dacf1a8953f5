//! Artifact writers: trace CSV, P5 grayscale snapshots, value
//! histograms, and the run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use mfopt::segmentation::IterRecord;
use mfopt::{LevelSetField, ScalarField2D};

use crate::error::Result;

pub const TRACE_HEADER: &str = "iter,fidelity,perimeter,total,volume,multiplier,phi_change_l2,wall_ms";

/// Write the optimization trace. Floats use shortest round-trip
/// formatting so reruns are bit-identical; `wall_ms` is rounded to an
/// integer per the trace schema.
pub fn write_trace_csv(path: &Path, trace: &[IterRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TRACE_HEADER}")?;
    for row in trace {
        let e = &row.energy;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            row.iter,
            e.fidelity,
            e.perimeter,
            e.total,
            e.volume,
            e.multiplier,
            row.phi_change_l2,
            row.wall_ms.round() as u64,
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Binary PGM (P5, maxval 255); values are clamped to [0, 1] and mapped
/// linearly to [0, 255]. Row 0 of the field is the top image row.
pub fn write_pgm(path: &Path, field: &ScalarField2D) -> Result<()> {
    let (nx, ny) = (field.grid().nx(), field.grid().ny());
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{nx} {ny}\n255\n")?;
    let mut row = vec![0u8; nx];
    for iy in 0..ny {
        for (ix, slot) in row.iter_mut().enumerate() {
            *slot = (field.at(ix, iy).clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        w.write_all(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read back a P5 PGM written by [`write_pgm`] (tests and tooling).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let data = std::fs::read(path)?;
    let header_err = || {
        crate::error::CliError::Config(format!("{}: not a P5 PGM", path.display()))
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 && pos < data.len() {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&data[start..pos]).map_err(|_| header_err())?);
    }
    if fields.len() != 4 || fields[0] != "P5" || fields[3] != "255" {
        return Err(header_err());
    }
    let nx: usize = fields[1].parse().map_err(|_| header_err())?;
    let ny: usize = fields[2].parse().map_err(|_| header_err())?;
    pos += 1; // single whitespace byte after maxval
    if data.len() < pos + nx * ny {
        return Err(header_err());
    }
    Ok((nx, ny, data[pos..pos + nx * ny].to_vec()))
}

/// 64-bin histogram of phi over [0, 1] as `bin_lo,bin_hi,count` rows.
pub fn write_histogram(path: &Path, phi: &LevelSetField, bins: usize) -> Result<()> {
    let counts = histogram_counts(phi, bins);
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "bin_lo,bin_hi,count")?;
    for (i, c) in counts.iter().enumerate() {
        let lo = i as f64 / bins as f64;
        let hi = (i + 1) as f64 / bins as f64;
        writeln!(w, "{lo},{hi},{c}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn histogram_counts(phi: &LevelSetField, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for &v in phi.field().values() {
        let idx = ((v * bins as f64) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
}

/// `key = value` lines, already sorted by the caller.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (k, v) in entries {
        writeln!(w, "{k} = {v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a trace CSV back into `(iter, [fidelity, perimeter, total,
/// volume, multiplier, phi_change_l2, wall_ms])` rows.
pub fn read_trace_csv(path: &Path) -> Result<Vec<(u64, Vec<f64>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != TRACE_HEADER {
        return Err(crate::error::CliError::Config(format!(
            "{}: unexpected trace header `{header}`",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for line in lines {
        let mut cols = line.split(',');
        let iter: u64 = cols
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| crate::error::CliError::Config("bad trace row".into()))?;
        let vals: std::result::Result<Vec<f64>, _> = cols.map(|c| c.parse::<f64>()).collect();
        rows.push((
            iter,
            vals.map_err(|_| crate::error::CliError::Config("bad trace row".into()))?,
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mfopt::{BoundaryMode, Grid2D};

    #[test]
    fn pgm_round_trips() {
        let g = Grid2D::unit(8, BoundaryMode::Mirror).unwrap();
        let f = ScalarField2D::from_fn(g, |ix, iy| (ix * 8 + iy) as f64 / 63.0);
        let dir = std::env::temp_dir().join("mfopt_pgm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.pgm");
        write_pgm(&path, &f).unwrap();
        let (nx, ny, bytes) = read_pgm(&path).unwrap();
        assert_eq!((nx, ny), (8, 8));
        assert_eq!(bytes[0], (f.at(0, 0) * 255.0).round() as u8);
        assert_eq!(bytes[63], (f.at(7, 7) * 255.0).round() as u8);
    }

    #[test]
    fn histogram_counts_sum_to_pixels() {
        let g = Grid2D::unit(16, BoundaryMode::Mirror).unwrap();
        let phi =
            LevelSetField::clamped(ScalarField2D::from_fn(g, |ix, _| ix as f64 / 15.0));
        let counts = histogram_counts(&phi, 64);
        assert_eq!(counts.iter().sum::<u64>(), 256);
        // phi = 1.0 lands in the last bin, not out of range.
        assert!(counts[63] >= 16);
    }
}
