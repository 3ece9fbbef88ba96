//! Scalar-field CSV and PGM heatmap writers shared by the exports.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::phantom::Grid;
use crate::{Error, Result};

/// Write `x_mm,y_mm[,z_mm],<name>` rows in cell order. Floats use the
/// shortest round-trip form, so a reload reproduces the values exactly.
pub fn write_scalar_csv(path: &Path, grid: &Grid, values: &[f64], name: &str) -> Result<()> {
    debug_assert_eq!(values.len(), grid.n_cells());
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    if grid.is_2d() {
        writeln!(f, "x_mm,y_mm,{name}")?;
    } else {
        writeln!(f, "x_mm,y_mm,z_mm,{name}")?;
    }
    for idx in 0..grid.n_cells() {
        let c = grid.center_of(idx);
        if grid.is_2d() {
            writeln!(f, "{},{},{}", c[0] * 1e3, c[1] * 1e3, values[idx])?;
        } else {
            writeln!(
                f,
                "{},{},{},{}",
                c[0] * 1e3,
                c[1] * 1e3,
                c[2] * 1e3,
                values[idx]
            )?;
        }
    }
    Ok(())
}

/// Read a scalar CSV produced by [`write_scalar_csv`], validating the row
/// count and that coordinates land on the grid's cell centers.
pub fn read_scalar_csv(path: &Path, grid: &Grid) -> Result<Vec<f64>> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Io(format!("{}: empty file", path.display())))??;
    let coord_cols = if grid.is_2d() { 2 } else { 3 };
    if header.split(',').count() != coord_cols + 1 {
        return Err(Error::Io(format!(
            "{}: header `{header}` does not match grid dimensionality",
            path.display()
        )));
    }
    let mut values = Vec::with_capacity(grid.n_cells());
    let half = grid.spacing * 0.5e3;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = lineno + 2;
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != coord_cols + 1 {
            return Err(Error::Io(format!("line {row}: wrong column count")));
        }
        let idx = values.len();
        if idx >= grid.n_cells() {
            return Err(Error::Io(format!("line {row}: more rows than grid cells")));
        }
        let c = grid.center_of(idx);
        for (a, p) in parts[..coord_cols].iter().enumerate() {
            let v: f64 = p
                .trim()
                .parse()
                .map_err(|_| Error::Io(format!("line {row}: bad coordinate `{p}`")))?;
            if (v - c[a] * 1e3).abs() > half {
                return Err(Error::Io(format!(
                    "line {row}: coordinate {v} mm off-grid (expected {} mm)",
                    c[a] * 1e3
                )));
            }
        }
        let v: f64 = parts[coord_cols]
            .trim()
            .parse()
            .map_err(|_| Error::Io(format!("line {row}: bad value `{}`", parts[coord_cols])))?;
        values.push(v);
    }
    if values.len() != grid.n_cells() {
        return Err(Error::Io(format!(
            "{}: {} rows, expected {}",
            path.display(),
            values.len(),
            grid.n_cells()
        )));
    }
    Ok(values)
}

/// 8-bit binary PGM heatmap of the central z slice, max-normalized.
/// Returns the maximum used for the scale (0 for an all-zero map).
/// Non-finite cells render black.
pub fn write_pgm(path: &Path, grid: &Grid, values: &[f64]) -> Result<f64> {
    debug_assert_eq!(values.len(), grid.n_cells());
    let k = grid.nz / 2;
    let mut maxv = 0.0f64;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let v = values[grid.idx(i, j, k)];
            if v.is_finite() {
                maxv = maxv.max(v);
            }
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "P5")?;
    writeln!(f, "{} {}", grid.nx, grid.ny)?;
    writeln!(f, "255")?;
    let mut row = Vec::with_capacity(grid.nx);
    for j in (0..grid.ny).rev() {
        row.clear();
        for i in 0..grid.nx {
            let v = values[grid.idx(i, j, k)];
            let byte = if v.is_finite() && maxv > 0.0 {
                ((v / maxv) * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            };
            row.push(byte);
        }
        f.write_all(&row)?;
    }
    Ok(maxv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_csv_round_trip_exact() {
        let grid = Grid::new(5, 4, 1, 1e-3, [-2e-3, -1.5e-3, 0.0]);
        let values: Vec<f64> = (0..20).map(|i| (i as f64 * 0.731).sin() * 1e3).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        write_scalar_csv(&p, &grid, &values, "value").unwrap();
        let back = read_scalar_csv(&p, &grid).unwrap();
        assert_eq!(back, values);
    }

    #[test]
    fn pgm_has_expected_header_and_size() {
        let grid = Grid::new(3, 2, 1, 1e-3, [0.0; 3]);
        let values = vec![0.0, 0.5, 1.0, 2.0, 1.5, 0.25];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.pgm");
        let maxv = write_pgm(&p, &grid, &values).unwrap();
        assert_eq!(maxv, 2.0);
        let bytes = std::fs::read(&p).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 6);
    }
}
