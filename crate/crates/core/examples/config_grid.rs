//! Parses a run configuration and an ablation grid from TOML, expands the grid,
//! and shows how invalid settings are reported.

use idrr::config::{GridSpec, RunConfig};

const CONFIG: &str = r#"
[task]
mode = "four-way"
max_len = 50

[model]
block = "recurrent"
layers = 3
"#;

const GRID: &str = r#"
[axes]
"model.layers" = [1, 2]
"train.learning_rate" = [0.001, 0.01]
"#;

fn main() -> idrr::Result<()> {
    let mut cfg = RunConfig::parse(CONFIG, "inline")?;
    cfg.model.word = false;
    cfg.validate()?;
    println!("task {} with {} labels", cfg.task_mode()?, cfg.label_space()?.len());

    let grid = GridSpec::parse(GRID, "grid")?;
    let rows = grid.rows(&cfg)?;
    for row in &rows {
        println!("{}", row.label);
    }

    let bad = cfg.with_override("model.layers", &toml::Value::Integer(0))?;
    println!("rejected: {}", bad.validate().unwrap_err());
    println!("rows={}", rows.len());
    Ok(())
}
