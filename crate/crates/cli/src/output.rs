//! Writing run artifacts: arrays, JSON, JSON lines, TSV tables and gnuplot
//! scripts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ncf_core::grid::{ArrayHeader, Field};
use ncf_core::inference::RunHistory;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Creates `dir` and collects the names of the files written into it.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(CliError::io(root))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Every file written so far, sorted.
    pub fn files(&self) -> Vec<String> {
        let mut f = self.written.clone();
        f.sort();
        f
    }

    fn record(&mut self, name: &str) {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
    }

    pub fn text(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(CliError::io(parent))?;
        }
        fs::write(&path, content).map_err(CliError::io(&path))?;
        self.record(name);
        Ok(())
    }

    /// `<name>.f8` plus its sidecar.
    pub fn field(&mut self, name: &str, field: &Field) -> Result<()> {
        let file = format!("{name}.f8");
        let path = self.path(&file);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(CliError::io(parent))?;
        }
        field.write(&path)?;
        self.record(&file);
        self.record(&format!("{file}.json"));
        Ok(())
    }

    /// A real vector in the array format.
    pub fn vector(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let file = format!("{name}.f8");
        ncf_core::grid::write_array(&self.path(&file), &ArrayHeader::new(vec![values.len()], false), values)?;
        self.record(&file);
        self.record(&format!("{file}.json"));
        Ok(())
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
        s.push('\n');
        self.text(name, &s)
    }

    /// `<prefix>history.jsonl` without wall times, which go to
    /// `<prefix>timing.jsonl` so the history stays reproducible.
    pub fn history(&mut self, prefix: &str, history: &RunHistory) -> Result<()> {
        let mut records = String::new();
        let mut timing = String::new();
        for r in history.without_timing().records() {
            records.push_str(&jsonl_without_timing(r));
            records.push('\n');
        }
        for r in history.records() {
            let line = serde_json::json!({ "iteration": r.iteration, "wall_time": r.wall_time });
            timing.push_str(&line.to_string());
            timing.push('\n');
        }
        self.text(&format!("{prefix}history.jsonl"), &records)?;
        self.text(&format!("{prefix}timing.jsonl"), &timing)
    }

    /// Tab-separated columns under a `#` header line.
    pub fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let mut s = format!("# {}\n", header.join("\t"));
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.10e}")).collect();
            s.push_str(&cells.join("\t"));
            s.push('\n');
        }
        self.text(name, &s)
    }

    /// A 2D map as a whitespace matrix, first index down the rows.
    pub fn matrix(&mut self, name: &str, shape: &[usize], values: &[f64]) -> Result<()> {
        let mut s = String::new();
        for row in values.chunks(shape[1]) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.10e}")).collect();
            let _ = writeln!(s, "{}", cells.join(" "));
        }
        self.text(name, &s)
    }
}

fn jsonl_without_timing(r: &ncf_core::inference::IterationRecord) -> String {
    let mut v = serde_json::to_value(r).expect("records serialize");
    if let Some(map) = v.as_object_mut() {
        map.remove("wall_time");
    }
    v.to_string()
}

/// Quotes a file name for gnuplot.
fn q(name: &str) -> String {
    format!("'{name}'")
}

/// 1D reconstruction: signal with a one-sigma band and samples, spectrum.
pub fn plot_1d(samples: usize, truth_signal: bool, truth_spectrum: bool) -> String {
    let mut s = String::from(
        "# gnuplot script; run inside the output directory\n\
         set terminal pngcairo size 1000,800\n\
         set output 'reconstruction.png'\n\
         set multiplot layout 2,1\n\
         set title 'signal'\n\
         set xlabel 'x'\n",
    );
    let mut parts = Vec::new();
    if samples > 0 {
        parts.push(format!(
            "for [i=2:{}] {} using 1:i with lines lc rgb '#d8d8d8' notitle",
            samples + 1,
            q("signal_samples.tsv")
        ));
    }
    parts.push(format!(
        "{} using 1:3:4 with filledcurves lc rgb '#b0c4ff' title 'one sigma'",
        q("signal.tsv")
    ));
    parts.push("'' using 1:2 with lines lw 2 lc rgb '#1f3fbf' title 'reconstruction'".into());
    if truth_signal {
        parts.push("'' using 1:5 with lines lc rgb 'black' title 'truth'".into());
    }
    let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
    s.push_str(&spectrum_block(truth_spectrum));
    s.push_str("unset multiplot\n");
    s
}

/// 2D reconstruction: maps side by side, then the spectrum.
pub fn plot_2d(maps: &[(&str, &str)], truth_spectrum: bool) -> String {
    let mut s = String::from(
        "# gnuplot script; run inside the output directory\n\
         set terminal pngcairo size 1400,900\n\
         set output 'reconstruction.png'\n",
    );
    let _ = writeln!(s, "set multiplot layout 2,{}", maps.len().max(1));
    s.push_str("set size ratio -1\nset view map\nunset key\n");
    for (file, title) in maps {
        let _ = writeln!(s, "set title '{title}'\nplot {} matrix with image", q(file));
    }
    s.push_str("set size noratio\nset key\n");
    s.push_str(&spectrum_block(truth_spectrum));
    s.push_str("unset multiplot\n");
    s
}

fn spectrum_block(truth: bool) -> String {
    let mut s = String::from(
        "set title 'power spectrum'\n\
         set xlabel '|k|'\n\
         set logscale xy\n",
    );
    let mut parts = vec![format!("{} using 1:2 with linespoints title 'reconstruction'", q("spectrum.tsv"))];
    if truth {
        parts.push("'' using 1:3 with lines lc rgb 'black' title 'truth'".into());
    }
    let _ = writeln!(s, "plot {}", parts.join(", "));
    s.push_str("unset logscale\n");
    s
}

/// KL curves of both loops with the reference level.
pub fn plot_bench(reference: f64) -> String {
    format!(
        "# gnuplot script; run inside the output directory\n\
         set terminal pngcairo size 900,600\n\
         set output 'convergence.png'\n\
         set title 'KL divergence per iteration'\n\
         set xlabel 'iteration'\n\
         set logscale x\n\
         plot 'kl.tsv' using 1:2 with lines lw 2 title 'reformulated', \\\n     \
         '' using 1:3 with lines lw 2 title 'legacy', \\\n     \
         {reference:.10e} with lines dt 2 lc rgb 'black' title 'reference'\n"
    )
}
