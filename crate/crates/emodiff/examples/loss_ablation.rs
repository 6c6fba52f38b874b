//! Compare the four loss-term combinations (target-only, +L_sim, +L_inh,
//! full) on accuracy, wheel-neighbor confusion, and inherent-emotion
//! capture rate.
//!
//! Usage: loss_ablation [MODELS_DIR] [OUT_DIR] [N_RUNS]

use std::path::PathBuf;

use emodiff::cli::ModelBundle;
use emodiff::eval::ablate_losses;
use emodiff::synthesis::GuidanceConfig;

fn main() -> emodiff::Result<()> {
    let mut args = std::env::args().skip(1);
    let models_dir: PathBuf = args.next().unwrap_or_else(|| "target/models".into()).into();
    let out: PathBuf = args.next().unwrap_or_else(|| "target/ablation".into()).into();
    let n_runs: usize = args.next().map(|s| s.parse().expect("N_RUNS")).unwrap_or(16);
    std::fs::create_dir_all(&out)?;

    let bundle = ModelBundle::load(&models_dir)?;
    let cfg = GuidanceConfig { eta: f32::NEG_INFINITY, ..Default::default() };
    let report = ablate_losses(n_runs, &bundle.models(), &bundle.judges(), &cfg, 300)?;
    println!(
        "{:<12} {:>10} {:>10} {:>10} {:>10}",
        "combo", "acc_guide", "acc_agn", "confusion", "capture"
    );
    for row in &report.rows {
        println!(
            "{:<12} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            row.combo, row.acc_guide, row.acc_agnostic, row.neighbor_confusion, row.inherent_capture
        );
    }
    report.write_csv(&out.join("ablation.csv"))?;
    println!("wrote {}", out.join("ablation.csv").display());
    Ok(())
}
