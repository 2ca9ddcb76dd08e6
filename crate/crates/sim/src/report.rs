//! Rendering of the metrics report.

use std::str::FromStr;

use warp_core::netsim::MetricsReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    /// Aligned text for people.
    #[default]
    Table,
    /// `key=value` lines, readable back with [`MetricsReport::parse_kv`].
    Kv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "table" => Ok(Format::Table),
            "kv" => Ok(Format::Kv),
            other => Err(format!("unknown format `{other}`, expected `table` or `kv`")),
        }
    }
}

pub fn report(metrics: &MetricsReport, format: Format) -> String {
    match format {
        Format::Table => metrics.render_table(),
        Format::Kv => metrics.render_kv(),
    }
}
