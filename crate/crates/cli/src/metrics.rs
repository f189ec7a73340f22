//! Episode CSV output and the smoothing used by plots and acceptance.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use uavtwin::ppo::EpisodeMetrics;

use crate::error::{CliError, Result};

/// Column names of `episodes.csv` for `receivers` receivers.
pub fn episode_header(receivers: usize) -> Vec<String> {
    let mut h = vec!["episode".to_string(), "return".to_string()];
    h.extend((1..=receivers).map(|r| format!("sinr_db_r{r}")));
    h.extend((1..=receivers).map(|r| format!("capacity_r{r}")));
    h.extend(["capacity_sum", "policy_loss", "value_loss", "entropy"].map(String::from));
    h
}

pub fn episode_row(m: &EpisodeMetrics) -> Vec<String> {
    let mut row = vec![m.episode.to_string(), m.episode_return.to_string()];
    row.extend(m.sinr_db.iter().map(f64::to_string));
    row.extend(m.capacity.iter().map(f64::to_string));
    row.extend([m.capacity_sum, m.policy_loss, m.value_loss, m.entropy].map(|v| v.to_string()));
    row
}

/// Streams rows to `episodes.csv`, flushing after every episode so an
/// interrupted run leaves a readable prefix.
pub struct EpisodeWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl EpisodeWriter {
    pub fn create(path: &Path, receivers: usize) -> Result<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path.display(), e))?;
        let mut inner = csv::Writer::from_writer(BufWriter::new(file));
        inner
            .write_record(episode_header(receivers))
            .and_then(|_| inner.flush().map_err(Into::into))
            .map_err(|e| CliError::io(path.display(), e))?;
        Ok(Self { inner })
    }

    pub fn append(&mut self, m: &EpisodeMetrics) -> Result<()> {
        self.inner
            .write_record(episode_row(m))
            .and_then(|_| self.inner.flush().map_err(Into::into))
            .map_err(|e| CliError::io("episodes.csv", e))
    }
}

/// Columns of a parsed `episodes.csv`, keyed by header name.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTable {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl EpisodeTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(path.display(), e))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| CliError::io(path.display(), e))?
            .iter()
            .map(String::from)
            .collect();
        let mut columns = vec![Vec::new(); header.len()];
        for record in reader.records() {
            let record = record.map_err(|e| CliError::io(path.display(), e))?;
            for (col, field) in columns.iter_mut().zip(record.iter()) {
                col.push(
                    field
                        .parse()
                        .map_err(|e| CliError::io(format!("{}: `{field}`", path.display()), e))?,
                );
            }
        }
        Ok(Self { header, columns })
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(&self.columns[i])
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn receivers(&self) -> usize {
        self.header.iter().filter(|h| h.starts_with("sinr_db_r")).count()
    }
}

/// Trailing moving average; the first `window - 1` points average over
/// what is available.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut sum = 0.0;
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            sum += v;
            if i >= window {
                sum -= values[i - window];
            }
            sum / (i + 1).min(window) as f64
        })
        .collect()
}

/// Ratio of the mean of the `window`-smoothed series over the last `span`
/// points to its mean over the first `span` points.
pub fn trend_ratio(values: &[f64], window: usize, span: usize) -> Option<f64> {
    if values.len() < span || span == 0 {
        return None;
    }
    let ma = moving_average(values, window);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first = mean(&ma[..span]);
    let last = mean(&ma[ma.len() - span..]);
    (first > 0.0).then(|| last / first)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_warms_up() {
        let ma = moving_average(&[1.0, 3.0, 5.0, 7.0], 2);
        assert_eq!(ma, vec![1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn trend_ratio_of_doubling_series() {
        let v: Vec<f64> = (0..100).map(|i| if i < 50 { 1.0 } else { 2.0 }).collect();
        let r = trend_ratio(&v, 1, 50).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
        assert_eq!(trend_ratio(&v[..10], 10, 50), None);
    }

    #[test]
    fn header_lists_receivers_in_order() {
        let h = episode_header(2);
        assert_eq!(
            h,
            [
                "episode",
                "return",
                "sinr_db_r1",
                "sinr_db_r2",
                "capacity_r1",
                "capacity_r2",
                "capacity_sum",
                "policy_loss",
                "value_loss",
                "entropy"
            ]
        );
    }
}
