//! Calibrate the gate threshold from unguided runs, then sweep eta from
//! always-open to never-open and report the accuracy/semantic-score trend.
//!
//! Usage: eta_sweep [MODELS_DIR] [DATA_DIR] [OUT_DIR] [N_PER_CELL]

use std::path::PathBuf;

use emodiff::cli::ModelBundle;
use emodiff::eval::{calibrate_eta, embed_set, sweep_eta};
use emodiff::glyphs::Dataset;
use emodiff::synthesis::GuidanceConfig;

fn main() -> emodiff::Result<()> {
    let mut args = std::env::args().skip(1);
    let models_dir: PathBuf = args.next().unwrap_or_else(|| "target/models".into()).into();
    let data_dir: PathBuf = args.next().unwrap_or_else(|| "target/data".into()).into();
    let out: PathBuf = args.next().unwrap_or_else(|| "target/sweep".into()).into();
    let n_per_cell: usize = args.next().map(|s| s.parse().expect("N_PER_CELL")).unwrap_or(8);
    std::fs::create_dir_all(&out)?;

    let bundle = ModelBundle::load(&models_dir)?;
    let models = bundle.models();
    let judges = bundle.judges();
    let cfg = GuidanceConfig::default();

    let eta = calibrate_eta(8, 60.0, &models, &cfg, 100)?;
    println!("calibrated eta (60th percentile of unguided s_clip): {eta:.3}");

    let dataset = Dataset::load(&data_dir)?;
    let images: Vec<_> = dataset.samples.iter().map(|s| s.image.clone()).collect();
    let reference = embed_set(&images, &bundle.embedder)?;

    let grid = [f32::NEG_INFINITY, eta - 2.0, eta, eta + 2.0, f32::INFINITY];
    let report = sweep_eta(&grid, n_per_cell, &models, &judges, &reference, &cfg, 200)?;
    for row in &report.report.rows {
        println!(
            "{:<14} acc(agnostic) {:.3}  semantic {:+.3}  FD(toy) {:.2}",
            row.condition, row.acc_agnostic, row.semantic, row.fd_toy
        );
    }
    println!(
        "rank(accuracy, eta) = {:+.3}   rank(semantic, eta) = {:+.3}",
        report.rank_acc_eta, report.rank_sem_eta
    );
    report.report.write_csv(&out.join("sweep.csv"))?;
    emodiff::plot::plot_sweep(&report, &out.join("sweep.png"))?;
    println!("artifacts in {}", out.display());
    Ok(())
}
