//! Brute-force oracle: `evaluate_position` on every point of a lattice
//! spanning the flight bounds.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use uavtwin::env::Environment;
use uavtwin::scene::{Aabb, Vec3};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx < 1 || ny < 1 || nz < 1 {
            return Err(CliError::Config(format!("grid dims must be >= 1 (got {nx}x{ny}x{nz})")));
        }
        Ok(Self { nx, ny, nz })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major with `iz` fastest.
    pub fn linear(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.ny + iy) * self.nz + iz
    }

    pub fn unravel(&self, k: usize) -> (usize, usize, usize) {
        (k / (self.ny * self.nz), (k / self.nz) % self.ny, k % self.nz)
    }

    /// Evenly spaced from min to max inclusive; a single point sits at the
    /// center of that axis.
    pub fn point(&self, bounds: &Aabb, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let axis = |lo: f64, hi: f64, i: usize, n: usize| {
            if n == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        Vec3::new(
            axis(bounds.min.x, bounds.max.x, ix, self.nx),
            axis(bounds.min.y, bounds.max.y, iy, self.ny),
            axis(bounds.min.z, bounds.max.z, iz, self.nz),
        )
    }
}

impl FromStr for Grid {
    type Err = CliError;

    /// Parses `NXxNYxNZ`, e.g. `11x11x5`.
    fn from_str(s: &str) -> Result<Self> {
        let dims: Vec<usize> = s
            .split(['x', 'X'])
            .map(|d| d.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CliError::Config(format!("grid `{s}` is not NXxNYxNZ")))?;
        match dims[..] {
            [nx, ny, nz] => Self::new(nx, ny, nz),
            _ => Err(CliError::Config(format!("grid `{s}` is not NXxNYxNZ"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: (usize, usize, usize),
    pub position: Vec3,
    pub reward: f64,
    pub sinr_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub grid: Grid,
    /// In linear-index order.
    pub rows: Vec<SweepRow>,
    /// Linear index of the best reward; ties go to the lowest index.
    pub argmax: usize,
}

impl SweepResult {
    pub fn best(&self) -> &SweepRow {
        &self.rows[self.argmax]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let receivers = self.rows.first().map_or(0, |r| r.sinr_db.len());
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path.display(), e))?;
        let mut header: Vec<String> = ["ix", "iy", "iz", "x", "y", "z", "reward"].map(String::from).to_vec();
        header.extend((1..=receivers).map(|r| format!("sinr_db_r{r}")));
        w.write_record(&header).map_err(|e| CliError::io(path.display(), e))?;
        for r in &self.rows {
            let (ix, iy, iz) = r.index;
            let mut rec = vec![ix.to_string(), iy.to_string(), iz.to_string()];
            rec.extend([r.position.x, r.position.y, r.position.z, r.reward].map(|v| v.to_string()));
            rec.extend(r.sinr_db.iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| CliError::io(path.display(), e))?;
        }
        w.flush().map_err(|e| CliError::io(path.display(), e))
    }
}

/// Evaluates every lattice point in parallel; rows come back in linear
/// order regardless of scheduling.
pub fn sweep(env: &Environment, grid: Grid) -> Result<SweepResult> {
    let bounds = env.scene().bounds;
    let rows = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let index = grid.unravel(k);
            let position = grid.point(&bounds, index.0, index.1, index.2);
            let (reward, reports) = env
                .evaluate_position(position)
                .map_err(|e| CliError::Runtime(format!("sweep point {index:?}: {e}")))?;
            Ok(SweepRow {
                index,
                position,
                reward,
                sinr_db: reports.iter().map(|r| r.sinr_db).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut argmax = 0;
    for (k, r) in rows.iter().enumerate() {
        if r.reward > rows[argmax].reward {
            argmax = k;
        }
    }
    Ok(SweepResult { grid, rows, argmax })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_grid_specs() {
        assert_eq!("11x11x5".parse::<Grid>().unwrap(), Grid { nx: 11, ny: 11, nz: 5 });
        assert!("11x11".parse::<Grid>().is_err());
        assert!("0x1x1".parse::<Grid>().is_err());
        assert!("ax1x1".parse::<Grid>().is_err());
    }

    #[test]
    fn linear_index_round_trips() {
        let g = Grid::new(3, 4, 5).unwrap();
        for k in 0..g.len() {
            let (ix, iy, iz) = g.unravel(k);
            assert_eq!(g.linear(ix, iy, iz), k);
        }
    }

    #[test]
    fn lattice_spans_bounds() {
        let b = Aabb::new(Vec3::new(0.0, 10.0, 20.0), Vec3::new(100.0, 30.0, 60.0));
        let g = Grid::new(11, 3, 1).unwrap();
        assert_eq!(g.point(&b, 0, 0, 0), Vec3::new(0.0, 10.0, 40.0));
        assert_eq!(g.point(&b, 10, 2, 0), Vec3::new(100.0, 30.0, 40.0));
        assert_eq!(g.point(&b, 5, 1, 0), Vec3::new(50.0, 20.0, 40.0));
    }
}
