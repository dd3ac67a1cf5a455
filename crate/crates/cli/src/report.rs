use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

use crate::run::{Manifest, Verdict};

const BARS: [char; 8] = ['▁', '▂', '▃', '▄', '▅', '▆', '▇', '█'];

/// Text sparkline of `ys` resampled to at most `width` points; log scale when
/// all values are positive.
pub fn sparkline(ys: &[f64], width: usize) -> String {
    if ys.is_empty() || width == 0 {
        return String::new();
    }
    let log = ys.iter().all(|&y| y > 0.0);
    let tr = |y: f64| if log { y.log10() } else { y };
    let n = ys.len().min(width);
    let pts: Vec<f64> = (0..n).map(|k| tr(ys[k * (ys.len() - 1) / (n - 1).max(1)])).collect();
    let lo = pts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    pts.iter()
        .map(|&y| {
            let k = if hi > lo { ((y - lo) / (hi - lo) * 7.0).round() as usize } else { 0 };
            BARS[k.min(7)]
        })
        .collect()
}

fn num(v: &Value) -> String {
    match v {
        Value::Number(n) => n.as_f64().map_or_else(|| n.to_string(), |x| format!("{x:.6e}")),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

pub fn render(dir: &Path) -> anyhow::Result<String> {
    let m = Manifest::load(dir)?;
    let s = &m.summary;
    let mut out = String::new();
    writeln!(out, "run        {}", dir.display())?;
    writeln!(out, "kind       {}", m.kind)?;
    writeln!(out, "seed       {}", m.config.seed)?;
    let verdict = match m.verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
        Verdict::None => "n/a",
    };
    writeln!(out, "verdict    {verdict}")?;

    match m.kind.as_str() {
        "simulate" => {
            let rows = meanfield::flow::persist::load_scalars(dir)?;
            let e: Vec<f64> = rows.iter().map(|r| r.energy).collect();
            writeln!(out, "energy     {}", sparkline(&e, 60))?;
            writeln!(out, "E(0)       {}", num(&s["energy_initial"]))?;
            writeln!(out, "E(T)       {}", num(&s["energy_final"]))?;
            writeln!(out, "monotone   {}", s["monotone"])?;
            writeln!(out, "balance    {}", num(&s["balance_error"]))?;
            writeln!(out, "halvings   {}", s["halvings"])?;
        }
        "stability" => {
            writeln!(out, "C_hat      {}", num(&s["c_hat"]))?;
            writeln!(out, "exact W2   {}", s["exact_w2"])?;
            if let Some(rows) = s["rows"].as_array() {
                let w: Vec<f64> = rows.iter().filter_map(|r| r["w2"].as_f64()).collect();
                writeln!(out, "W2(t)      {}", sparkline(&w, 60))?;
                writeln!(out, "{:>10} {:>14} {:>14} {:>14}  ok", "t", "W2", "log growth", "bound")?;
                for r in rows {
                    writeln!(
                        out,
                        "{:>10.4} {:>14.6e} {:>14.6e} {:>14.6e}  {}",
                        r["t"].as_f64().unwrap_or(f64::NAN),
                        r["w2"].as_f64().unwrap_or(f64::NAN),
                        r["log_growth"].as_f64().unwrap_or(f64::NAN),
                        r["bound"].as_f64().unwrap_or(f64::NAN),
                        r["holds"]
                    )?;
                }
            }
        }
        "escape-scalar" => {
            if s["constructed"] == Value::Bool(false) {
                writeln!(out, "no escape set: {}", s["reason"].as_str().unwrap_or("?"))?;
            } else {
                let l = &s["ledger"];
                writeln!(out, "case       {}", l["case"].as_str().unwrap_or("?"))?;
                for key in ["eta", "epsilon", "w_min", "beta", "r_bar", "tau", "c", "theta_radius"] {
                    writeln!(out, "{key:<10} {}", num(&l[key]))?;
                }
                for r in s["reports"].as_array().into_iter().flatten() {
                    writeln!(
                        out,
                        "  {:<18} min rate {}  linear dev {}  {}",
                        r["perturbation"].as_str().unwrap_or("?"),
                        num(&r["min_rate"]),
                        num(&r["max_linear_deviation"]),
                        if r["pass"] == Value::Bool(true) { "PASS" } else { "FAIL" }
                    )?;
                }
            }
        }
        "escape-vector" => {
            let c = &s["cond"];
            writeln!(out, "cond       lhs {}  rhs {}  pass {}", num(&c["lhs"]), num(&c["rhs"]), c["pass"])?;
            if let Some(w) = c["delta_window"].as_array() {
                writeln!(out, "delta      [{}, {}]", num(&w[0]), num(&w[1]))?;
            }
            if !s["local"].is_null() {
                writeln!(out, "c1         {}", num(&s["local"]["c1"]))?;
                writeln!(out, "c2         {}", num(&s["local"]["c2"]))?;
            }
            if !s["certificate"].is_null() {
                writeln!(out, "epsilon    {}", num(&s["certificate"]["epsilon"]))?;
            }
            for r in s["reports"].as_array().into_iter().flatten() {
                writeln!(
                    out,
                    "  {:<18} exits {}  min alignment {}  {}",
                    r["perturbation"].as_str().unwrap_or("?"),
                    r["exits"],
                    num(&r["min_alignment"]),
                    if r["pass"] == Value::Bool(true) { "PASS" } else { "FAIL" }
                )?;
            }
        }
        "hardmax-scan" => {
            let gaps: Vec<f64> = s["sup_gaps"].as_array().into_iter().flatten().filter_map(Value::as_f64).collect();
            writeln!(out, "sup gaps   {}", sparkline(&gaps, 60))?;
            for (r, g) in s["r_grid"].as_array().into_iter().flatten().zip(&gaps) {
                writeln!(out, "  r = {:<10} gap {g:.6e}", num(r))?;
            }
            writeln!(out, "decreasing {}", s["strictly_decreasing"])?;
        }
        "sigmoid-asymptotics" => {
            writeln!(out, "limit      {}", num(&s["limit"]))?;
            for r in s["rows"].as_array().into_iter().flatten() {
                writeln!(out, "  r = {:<10} gap {}  se {}", num(&r["r"]), num(&r["gap"]), num(&r["gap_stderr"]))?;
            }
        }
        "w2-selftest" => {
            writeln!(out, "exact gap  {}", num(&s["max_exact_gap"]))?;
            writeln!(out, "sliced gap {}", num(&s["max_sliced_gap_1d"]))?;
        }
        _ => {}
    }

    writeln!(out, "files")?;
    for f in &m.files {
        let size = std::fs::metadata(dir.join(f)).map(|md| md.len()).unwrap_or(0);
        writeln!(out, "  {f:<40} {size:>10} B")?;
    }
    Ok(out)
}
