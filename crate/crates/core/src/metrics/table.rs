//! Ablation summary table: one row per training configuration, PSNR/SSIM
//! columns per scene, rendered as aligned text (best value per column
//! starred) and as CSV.

use super::MetricsError;
use std::path::Path;

/// Final holdout metrics of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub config: String,
    pub scene: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    configs: Vec<String>,
    scenes: Vec<String>,
    /// Row-major `configs × scenes`; `None` where no run was recorded.
    cells: Vec<Option<(f64, f64)>>,
}

fn position_or_push(names: &mut Vec<String>, name: &str) -> usize {
    match names.iter().position(|n| n == name) {
        Some(i) => i,
        None => {
            names.push(name.to_string());
            names.len() - 1
        }
    }
}

impl AblationTable {
    /// Builds the table in first-appearance order; a repeated
    /// (config, scene) pair keeps the latest run.
    pub fn from_runs(runs: &[RunSummary]) -> Self {
        let mut configs = Vec::new();
        let mut scenes = Vec::new();
        let mut entries = Vec::new();
        for r in runs {
            let row = position_or_push(&mut configs, &r.config);
            let col = position_or_push(&mut scenes, &r.scene);
            entries.push((row, col, (r.psnr_db, r.ssim)));
        }
        let mut cells = vec![None; configs.len() * scenes.len()];
        for (row, col, value) in entries {
            cells[row * scenes.len() + col] = Some(value);
        }
        Self { configs, scenes, cells }
    }

    pub fn configs(&self) -> &[String] {
        &self.configs
    }

    pub fn scenes(&self) -> &[String] {
        &self.scenes
    }

    pub fn cell(&self, config: &str, scene: &str) -> Option<(f64, f64)> {
        let row = self.configs.iter().position(|c| c == config)?;
        let col = self.scenes.iter().position(|s| s == scene)?;
        self.cells[row * self.scenes.len() + col]
    }

    /// Highest value in each (scene, metric) column; ties all count as best.
    fn column_best(&self, col: usize, metric: usize) -> Option<f64> {
        self.configs
            .iter()
            .enumerate()
            .filter_map(|(row, _)| self.cells[row * self.scenes.len() + col])
            .map(|(p, s)| if metric == 0 { p } else { s })
            .fold(None, |best, v| match best {
                Some(b) if b >= v => Some(b),
                _ => Some(v),
            })
    }

    fn cell_text(&self, row: usize, col: usize, metric: usize) -> String {
        match self.cells[row * self.scenes.len() + col] {
            None => "-".to_string(),
            Some((p, s)) => {
                let v = if metric == 0 { p } else { s };
                let txt = if metric == 0 { format!("{p:.2}") } else { format!("{s:.4}") };
                if Some(v) == self.column_best(col, metric) {
                    format!("**{txt}**")
                } else {
                    txt
                }
            }
        }
    }

    /// Aligned monospace rendering; the best value per column is starred.
    pub fn render_text(&self) -> String {
        let mut header = vec!["config".to_string()];
        for scene in &self.scenes {
            header.push(format!("{scene} psnr_db"));
            header.push(format!("{scene} ssim"));
        }
        let mut rows = vec![header];
        for (r, config) in self.configs.iter().enumerate() {
            let mut row = vec![config.clone()];
            for c in 0..self.scenes.len() {
                row.push(self.cell_text(r, c, 0));
                row.push(self.cell_text(r, c, 1));
            }
            rows.push(row);
        }
        let cols = rows[0].len();
        let widths: Vec<usize> =
            (0..cols).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    if c == 0 {
                        format!("{cell:<width$}", width = widths[0])
                    } else {
                        format!("{cell:>width$}", width = widths[c])
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (cols - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }

    /// Wide CSV mirroring the text table; absent cells are empty fields.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("config");
        for scene in &self.scenes {
            out.push_str(&format!(",{scene}_psnr_db,{scene}_ssim"));
        }
        out.push('\n');
        for (r, config) in self.configs.iter().enumerate() {
            out.push_str(config);
            for c in 0..self.scenes.len() {
                match self.cells[r * self.scenes.len() + c] {
                    Some((p, s)) => out.push_str(&format!(",{p},{s}")),
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, text_path: &Path, csv_path: &Path) -> Result<(), MetricsError> {
        for (path, content) in [(text_path, self.render_text()), (csv_path, self.render_csv())] {
            std::fs::write(path, content)
                .map_err(|source| MetricsError::Io { path: path.display().to_string(), source })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(config: &str, scene: &str, psnr_db: f64, ssim: f64) -> RunSummary {
        RunSummary { config: config.into(), scene: scene.into(), psnr_db, ssim }
    }

    #[test]
    fn single_run_renders_single_starred_row() {
        let t = AblationTable::from_runs(&[run("full", "grid", 31.254, 0.91237)]);
        let text = t.render_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3, "header, rule, one row:\n{text}");
        assert!(lines[2].starts_with("full"));
        assert!(lines[2].contains("**31.25**"));
        assert!(lines[2].contains("**0.9124**"));
    }

    #[test]
    fn best_value_is_starred_per_column() {
        let t = AblationTable::from_runs(&[
            run("full", "grid", 31.0, 0.90),
            run("no_rs", "grid", 28.5, 0.95),
        ]);
        let text = t.render_text();
        assert!(text.contains("**31.00**"));
        assert!(!text.contains("**28.50**"));
        assert!(text.contains("**0.9500**"));
        assert!(!text.contains("**0.9000**"));
    }

    #[test]
    fn csv_round_trips_full_precision() {
        let a = run("full", "grid", 31.0625, 0.9121093750001);
        let b = run("full", "room", 24.123456789, 0.75);
        let t = AblationTable::from_runs(&[a.clone(), b.clone()]);
        let csv = t.render_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "config,grid_psnr_db,grid_ssim,room_psnr_db,room_ssim");
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields[0], "full");
        assert_eq!(fields[1].parse::<f64>().unwrap(), a.psnr_db);
        assert_eq!(fields[2].parse::<f64>().unwrap(), a.ssim);
        assert_eq!(fields[3].parse::<f64>().unwrap(), b.psnr_db);
        assert_eq!(fields[4].parse::<f64>().unwrap(), b.ssim);
    }

    #[test]
    fn missing_pairs_render_as_dashes_and_empty_fields() {
        let t = AblationTable::from_runs(&[
            run("full", "grid", 30.0, 0.9),
            run("full", "room", 25.0, 0.8),
            run("no_rs", "grid", 28.0, 0.85),
        ]);
        assert!(t.render_text().contains(" -"));
        assert!(t.render_csv().lines().nth(2).unwrap().ends_with(",,"));
        assert_eq!(t.cell("no_rs", "room"), None);
        assert_eq!(t.cell("full", "room"), Some((25.0, 0.8)));
    }

    #[test]
    fn later_duplicate_overwrites_and_order_is_first_appearance() {
        let t = AblationTable::from_runs(&[
            run("b", "s", 1.0, 0.1),
            run("a", "s", 2.0, 0.2),
            run("b", "s", 3.0, 0.3),
        ]);
        assert_eq!(t.configs(), ["b".to_string(), "a".to_string()]);
        assert_eq!(t.cell("b", "s"), Some((3.0, 0.3)));
        let files = tempfile::tempdir().unwrap();
        let txt = files.path().join("table.txt");
        let csv = files.path().join("table.csv");
        t.write(&txt, &csv).unwrap();
        assert!(txt.exists() && csv.exists());
    }
}
