use std::io::Write;

use serde_json::json;

use super::ensemble::{factorial_moment_of, mean_var_of, EnsembleSummary};
use crate::error::Result;

/// Factorial moments written per output time.
const CSV_MOMENT_ORDERS: usize = 4;

/// One row per `(t, statistic, index)`; histogram rows are written only for
/// nonzero counts and mass histograms are flattened row-major.
pub fn write_summary_csv<W: Write>(summary: &EnsembleSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "statistic", "index", "value"])?;
    for ts in &summary.times {
        let t = ts.t.to_string();
        let tot = ts.total();
        let mut row = |stat: &str, index: usize, value: String| w.write_record([t.as_str(), stat, &index.to_string(), &value]);
        row("replicas", 0, tot.replicas.to_string())?;
        for (n, &c) in tot.number_hist.iter().enumerate().filter(|(_, c)| **c > 0) {
            row("number_hist", n, c.to_string())?;
        }
        let (mean, var) = mean_var_of(&tot.number_hist);
        row("mean_n", 0, mean.to_string())?;
        row("var_n", 0, var.to_string())?;
        for j in 1..=CSV_MOMENT_ORDERS.min(summary.config.n0) {
            row("factorial_moment", j, factorial_moment_of(&tot.number_hist, j).to_string())?;
        }
        row("overflow", 0, tot.overflow.to_string())?;
        for (o, hist) in tot.mass_hist.iter().enumerate() {
            let name = format!("mass_hist_{}", o + 1);
            for (i, &c) in hist.iter().enumerate().filter(|(_, c)| **c > 0) {
                row(&name, i, c.to_string())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn summary_manifest(summary: &EnsembleSummary) -> serde_json::Value {
    json!({
        "kind": "ensemble",
        "code_version": env!("CARGO_PKG_VERSION"),
        "config": summary.config,
    })
}

pub fn write_summary_manifest<W: Write>(summary: &EnsembleSummary, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, &summary_manifest(summary))?;
    writeln!(out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marcus_lushnikov::{run_ensemble, EnsembleConfig};
    use crate::model::MassGrid;

    #[test]
    fn csv_and_manifest() {
        let cfg = EnsembleConfig::new(4, 1.0, 20, 7, vec![0.0, 1.0]).with_histograms(MassGrid::new(10.0, 5).unwrap(), 2);
        let s = run_ensemble(&cfg).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,statistic,index,value\n0,replicas,0,20\n0,number_hist,4,20\n"));
        assert!(text.contains("1,factorial_moment,1,"));
        let mut m = Vec::new();
        write_summary_manifest(&s, &mut m).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&m).unwrap();
        assert_eq!(v["config"]["seed"], 7);
        assert_eq!(v["config"]["f0"]["kind"], "exponential");
        let back: EnsembleConfig = serde_json::from_value(v["config"].clone()).unwrap();
        assert_eq!(back, cfg);
    }
}
