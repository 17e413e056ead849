//! Sweep and ratio reporting: fixed CSV headers, six significant
//! digits, byte-stable output for a fixed seed.

use crate::error::Result;
use crate::simenv::OracleSummary;
use crate::types::ModuleId;
use std::path::Path;

pub const SIG_DIGITS: usize = 6;

pub const SWEEP_HEADER: &str = "lambda,r_task,cost,filter_low,filter_mid,filter_high,entity_low,entity_mid,entity_high,temporal_low,temporal_mid,temporal_high,topic_low,topic_mid,topic_high,summary_low,summary_mid,summary_high";

pub const ORACLE_HEADER: &str = "lambda,r_task,cost,objective";

pub const RATIOS_HEADER: &str = "module,low,mid,high";

/// One sweep point: a trained policy's validation metrics at one
/// lambda.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierRow {
    pub lambda: f64,
    pub r_task: f64,
    pub cost: f64,
    pub tier_ratios: [[f64; 3]; 5],
}

/// Formats with `sig` significant digits in plain decimal notation.
pub fn format_sig(x: f64, sig: usize) -> String {
    assert!(sig >= 1);
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return format!("{:.*}", sig - 1, 0.0);
    }
    let sci = format!("{:e}", x.abs());
    let exp: i32 = sci
        .split('e')
        .nth(1)
        .expect("scientific notation has an exponent")
        .parse()
        .expect("exponent parses");
    let decimals = (sig as i32 - 1 - exp).max(0) as usize;
    format!("{:.*}", decimals, x)
}

fn ratio_cells(ratios: &[[f64; 3]; 5]) -> String {
    let mut cells = Vec::with_capacity(15);
    for row in ratios {
        for &ratio in row {
            cells.push(format_sig(ratio, SIG_DIGITS));
        }
    }
    cells.join(",")
}

/// Renders the sweep CSV, header included, one row per lambda.
pub fn sweep_csv(rows: &[FrontierRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            format_sig(row.lambda, SIG_DIGITS),
            format_sig(row.r_task, SIG_DIGITS),
            format_sig(row.cost, SIG_DIGITS),
            ratio_cells(&row.tier_ratios),
        ));
    }
    out
}

pub fn write_sweep_csv(path: &Path, rows: &[FrontierRow]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, sweep_csv(rows))?;
    Ok(())
}

/// Renders oracle frontier rows.
pub fn oracle_csv(rows: &[OracleSummary]) -> String {
    let mut out = String::from(ORACLE_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            format_sig(row.lambda, SIG_DIGITS),
            format_sig(row.mean_r_task, SIG_DIGITS),
            format_sig(row.mean_cost, SIG_DIGITS),
            format_sig(row.mean_objective, SIG_DIGITS),
        ));
    }
    out
}

pub fn write_oracle_csv(path: &Path, rows: &[OracleSummary]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, oracle_csv(rows))?;
    Ok(())
}

/// Renders per-module tier ratios as CSV lines in module order.
pub fn ratios_csv(ratios: &[[f64; 3]; 5]) -> String {
    let mut out = String::from(RATIOS_HEADER);
    out.push('\n');
    for module in ModuleId::ORDER {
        let r = ratios[module.index()];
        out.push_str(&format!(
            "{},{},{},{}\n",
            module.name(),
            format_sig(r[0], SIG_DIGITS),
            format_sig(r[1], SIG_DIGITS),
            format_sig(r[2], SIG_DIGITS),
        ));
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..rx.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx.sqrt() * vy.sqrt())
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*a].partial_cmp(&values[*b]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[order[k]] = rank;
        }
        i = j + 1;
    }
    out
}
