use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::metrics::MetricSeries;
use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::token::EpisodeTrace;

/// Tracks files written into an output directory and deletes them unless
/// [`OutputGuard::commit`] is reached.
#[derive(Debug)]
pub struct OutputGuard {
    dir: PathBuf,
    written: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new(), committed: false })
    }

    pub fn write<F: FnOnce(&Path) -> Result<()>>(&mut self, name: &str, f: F) -> Result<PathBuf> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        f(&path)?;
        Ok(path)
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

/// Long format: `t,metric,value,ci_half_width,trials`.
pub fn write_metrics_csv(path: &Path, metrics: &[MetricSeries]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["t", "metric", "value", "ci_half_width", "trials"]).map_err(|e| Error::csv(path, e))?;
    for m in metrics {
        for k in 0..m.times.len() {
            w.write_record([
                m.times[k].to_string(),
                m.name.clone(),
                m.values[k].to_string(),
                m.half_widths[k].to_string(),
                m.trials.to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `t,holder,visited_count,token_sq_err,mean_last_seen_sq_err`.
pub fn write_trace_csv(path: &Path, trace: &EpisodeTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["t", "holder", "visited_count", "token_sq_err", "mean_last_seen_sq_err"])
        .map_err(|e| Error::csv(path, e))?;
    for k in 0..trace.times.len() {
        w.write_record([
            trace.times[k].to_string(),
            trace.holder[k].to_string(),
            trace.visited_count[k].to_string(),
            trace.token_sq_err[k].to_string(),
            trace.last_seen_sq_err[k].to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Wide format: `t` followed by one column per series (values only). All
/// series must share their ticks.
pub fn write_comparison_csv(path: &Path, series: &[&MetricSeries]) -> Result<()> {
    let Some(first) = series.first() else {
        return Err(Error::MissingTrace("comparison"));
    };
    if series.iter().any(|s| s.times != first.times) {
        return Err(Error::Config("compared series recorded different ticks".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header: Vec<&str> = std::iter::once("t").chain(series.iter().map(|s| s.name.as_str())).collect();
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (k, t) in first.times.iter().enumerate() {
        let row: Vec<String> =
            std::iter::once(t.to_string()).chain(series.iter().map(|s| s.values[k].to_string())).collect();
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(super) fn write_metadata(path: &Path, cfg: &ExperimentConfig, normalizer: f64) -> Result<()> {
    let mut meta = toml::Table::new();
    meta.insert("seed".into(), toml::Value::Integer(cfg.seed as i64));
    meta.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    meta.insert("normalizer".into(), "theta_norm_squared".into());
    meta.insert("normalizer_value".into(), normalizer.into());
    meta.insert("trials".into(), toml::Value::Integer(cfg.trials as i64));
    meta.insert("horizon".into(), toml::Value::Integer(cfg.horizon as i64));
    meta.insert(
        "algorithms".into(),
        toml::Value::Array(cfg.algorithms.iter().map(|a| a.name().into()).collect()),
    );
    let mut doc = toml::Table::new();
    doc.insert("metadata".into(), meta.into());
    if let Some(echo) = &cfg.echo {
        doc.insert("config".into(), echo.clone().into());
    }
    let text = toml::to_string(&doc).map_err(|e| Error::Config(format!("cannot serialize metadata: {e}")))?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
