//! Metrics and ablation reports: emotion accuracy under multiple judges,
//! Fréchet distance on embedder features ("FD (toy)" — an analog of FID,
//! not the same statistic), semantic score, intra-class variance, eta
//! sweeps, and loss-term ablations.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::generate_vanilla;
use crate::emotion::{EmotionLabel, ALL_EMOTIONS, N_EMOTIONS};
use crate::error::{EmodiffError, Result};
use crate::glyphs::{encode_image, PromptTokens, Vocab, ALL_BACKGROUNDS, ALL_SHAPES};
use crate::models::{EmotionClassifier, JointEmbedder};
use crate::synthesis::{generate, GuidanceConfig, Models};

// ---------------------------------------------------------------------------
// Core metrics
// ---------------------------------------------------------------------------

/// Fraction of images whose classifier argmax matches the target label.
pub fn emotion_accuracy(
    images: &[Array3<f32>],
    targets: &[EmotionLabel],
    classifier: &EmotionClassifier,
) -> Result<f32> {
    if images.is_empty() || images.len() != targets.len() {
        return Err(EmodiffError::InvalidArgument(format!(
            "need equal nonempty image/target sets, got {} and {}",
            images.len(),
            targets.len()
        )));
    }
    let mut correct = 0usize;
    for (img, target) in images.iter().zip(targets) {
        if classifier.predict(&encode_image(img))? == *target {
            correct += 1;
        }
    }
    Ok(correct as f32 / images.len() as f32)
}

/// Mean cosine similarity between paired images and prompts (no temperature
/// scaling, matching the conventional score).
pub fn semantic_score(
    images: &[Array3<f32>],
    prompts: &[PromptTokens],
    embedder: &JointEmbedder,
) -> Result<f32> {
    if images.is_empty() || images.len() != prompts.len() {
        return Err(EmodiffError::InvalidArgument(format!(
            "need equal nonempty image/prompt sets, got {} and {}",
            images.len(),
            prompts.len()
        )));
    }
    let mut total = 0.0f64;
    for (img, prompt) in images.iter().zip(prompts) {
        total += embedder.cosine(&encode_image(img), prompt)? as f64;
    }
    Ok((total / images.len() as f64) as f32)
}

/// Mean over classes of the mean squared deviation of unit-norm features
/// from their class centroid. Every present class needs at least 2 samples.
pub fn intra_class_variance(
    images: &[Array3<f32>],
    labels: &[EmotionLabel],
    embedder: &JointEmbedder,
) -> Result<f32> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(EmodiffError::InvalidArgument(
            "need equal nonempty image/label sets".into(),
        ));
    }
    let mut feats: Vec<Vec<Array1<f32>>> = vec![Vec::new(); N_EMOTIONS];
    for (img, label) in images.iter().zip(labels) {
        feats[label.id()].push(embedder.embed_image(&encode_image(img))?);
    }
    let mut class_vars = Vec::new();
    for (id, class) in feats.iter().enumerate() {
        match class.len() {
            0 => continue,
            1 => {
                return Err(EmodiffError::InvalidArgument(format!(
                    "class {} has a single sample; variance undefined",
                    EmotionLabel::from_id(id)?.name()
                )))
            }
            n => {
                let dim = class[0].len();
                let mut centroid = Array1::<f32>::zeros(dim);
                for f in class {
                    centroid += f;
                }
                centroid /= n as f32;
                let var = class
                    .iter()
                    .map(|f| (f - &centroid).mapv(|v| v * v).sum() as f64)
                    .sum::<f64>()
                    / n as f64;
                class_vars.push(var);
            }
        }
    }
    if class_vars.is_empty() {
        return Err(EmodiffError::InvalidArgument("no classes present".into()));
    }
    Ok((class_vars.iter().sum::<f64>() / class_vars.len() as f64) as f32)
}

// ---------------------------------------------------------------------------
// Fréchet distance
// ---------------------------------------------------------------------------

/// Ridge added to both covariances when a set is too small for a full-rank
/// estimate (n <= dim). Applied symmetrically, so FD(A, A) stays 0.
pub const COV_SHRINKAGE: f64 = 1e-3;

fn mean_and_cov(feats: &Array2<f32>, shrink: bool) -> (Vec<f64>, Array2<f64>) {
    let (n, d) = (feats.nrows(), feats.ncols());
    let mut mean = vec![0.0f64; d];
    for row in feats.rows() {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += *v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut cov = Array2::<f64>::zeros((d, d));
    for row in feats.rows() {
        let centered: Vec<f64> = row
            .iter()
            .zip(&mean)
            .map(|(v, m)| *v as f64 - m)
            .collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += centered[i] * centered[j] / denom;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    if shrink {
        for i in 0..d {
            cov[(i, i)] += COV_SHRINKAGE;
        }
    }
    (mean, cov)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; returns
/// (eigenvalues, eigenvectors as columns).
fn jacobi_eigen(mut a: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() < 1e-12 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[(p, q)].abs() < 1e-15 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    (eig, v)
}

/// Symmetric matrix square root, clipping tiny negative eigenvalues at 0.
fn sym_sqrt(a: &Array2<f64>) -> Array2<f64> {
    let (eig, v) = jacobi_eigen(a.clone());
    let n = a.nrows();
    let mut out = Array2::<f64>::zeros((n, n));
    for k in 0..n {
        let s = eig[k].max(0.0).sqrt();
        if s == 0.0 {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += s * v[(i, k)] * v[(j, k)];
            }
        }
    }
    out
}

/// Fréchet distance between the Gaussian moment fits of two feature sets:
/// |mu_a - mu_b|^2 + tr(Ca + Cb - 2 (Ca^(1/2) Cb Ca^(1/2))^(1/2)).
pub fn frechet_distance(feats_a: &Array2<f32>, feats_b: &Array2<f32>) -> Result<f32> {
    let d = feats_a.ncols();
    if d == 0 || feats_b.ncols() != d {
        return Err(EmodiffError::ShapeMismatch {
            expected: format!("feature dim {d}"),
            got: format!("{}", feats_b.ncols()),
        });
    }
    if feats_a.nrows() < 2 || feats_b.nrows() < 2 {
        return Err(EmodiffError::InvalidArgument(
            "need at least 2 samples per set".into(),
        ));
    }
    // Shrink both covariances whenever either set is rank-deficient, keeping
    // the statistic symmetric in its arguments.
    let shrink = feats_a.nrows() <= d || feats_b.nrows() <= d;
    let (mu_a, cov_a) = mean_and_cov(feats_a, shrink);
    let (mu_b, cov_b) = mean_and_cov(feats_b, shrink);

    let mean_term: f64 = mu_a
        .iter()
        .zip(&mu_b)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let sa = sym_sqrt(&cov_a);
    let m = sa.dot(&cov_b).dot(&sa);
    // m is symmetric up to roundoff; symmetrize before the eigensolve.
    let m = (&m + &m.t()) * 0.5;
    let (eig, _) = jacobi_eigen(m);
    let tr_sqrt: f64 = eig.iter().map(|e| e.max(0.0).sqrt()).sum();
    let tr_a: f64 = (0..d).map(|i| cov_a[(i, i)]).sum();
    let tr_b: f64 = (0..d).map(|i| cov_b[(i, i)]).sum();
    let fd = mean_term + tr_a + tr_b - 2.0 * tr_sqrt;
    Ok(fd.max(0.0) as f32)
}

/// Embed a set of images into an embedder feature matrix.
pub fn embed_set(images: &[Array3<f32>], embedder: &JointEmbedder) -> Result<Array2<f32>> {
    if images.is_empty() {
        return Err(EmodiffError::InvalidArgument("empty image set".into()));
    }
    let dim = embedder.cfg.embed_dim;
    let mut out = Array2::zeros((images.len(), dim));
    for (i, img) in images.iter().enumerate() {
        out.row_mut(i).assign(&embedder.embed_image(&encode_image(img))?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Rank correlation
// ---------------------------------------------------------------------------

fn ranks(xs: &[f32]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f32], ys: &[f32]) -> Result<f32> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(EmodiffError::InvalidArgument(
            "need two equal-length series of length >= 2".into(),
        ));
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok((cov / (vx * vy).sqrt()) as f32)
}

// ---------------------------------------------------------------------------
// Run batches and reports
// ---------------------------------------------------------------------------

/// Deterministic emotion-neutral prompt for run index `i`.
///
/// Batch runners pair index `i` with target emotion `i % 8`, so the shape
/// advances once per block of eight runs: every block pairs one shape with
/// all eight targets, keeping prompt content uncorrelated with the target.
pub fn neutral_prompt(i: usize) -> String {
    let shape = ALL_SHAPES[(i / N_EMOTIONS) % ALL_SHAPES.len()];
    let background = ALL_BACKGROUNDS[(i / (N_EMOTIONS * ALL_SHAPES.len())) % ALL_BACKGROUNDS.len()];
    let position = crate::glyphs::POSITION_NAMES[i % 9];
    format!(
        "a {} on a {} background at the {position}",
        shape.name(),
        background.name()
    )
}

/// A batch of guided generations: targets cycle the 8 emotions, prompts
/// cycle neutral glyph descriptions, seeds derive from `seed` and the index.
pub struct RunBatch {
    pub images: Vec<Array3<f32>>,
    pub targets: Vec<EmotionLabel>,
    pub prompts: Vec<PromptTokens>,
    pub traces: Vec<crate::synthesis::SynthesisTrace>,
}

pub fn run_guided_batch(
    n: usize,
    models: &Models,
    cfg: &GuidanceConfig,
    seed: u64,
) -> Result<RunBatch> {
    let vocab = Vocab::default();
    let mut batch = RunBatch {
        images: Vec::with_capacity(n),
        targets: Vec::with_capacity(n),
        prompts: Vec::with_capacity(n),
        traces: Vec::with_capacity(n),
    };
    for i in 0..n {
        let target = ALL_EMOTIONS[i % N_EMOTIONS];
        let prompt = neutral_prompt(i);
        let run_seed = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let (image, trace) = generate(Some(&prompt), target, models, cfg, run_seed)?;
        batch.images.push(image);
        batch.targets.push(target);
        batch.prompts.push(vocab.tokenize(&prompt)?);
        batch.traces.push(trace);
    }
    Ok(batch)
}

/// Matching unguided batch: same prompts and seeds, no emotion guidance.
pub fn run_vanilla_batch(
    n: usize,
    models: &Models,
    cfg: &GuidanceConfig,
    seed: u64,
) -> Result<(Vec<Array3<f32>>, Vec<EmotionLabel>, Vec<PromptTokens>)> {
    let vocab = Vocab::default();
    let mut images = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut prompts = Vec::with_capacity(n);
    for i in 0..n {
        let prompt = neutral_prompt(i);
        let run_seed = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        images.push(generate_vanilla(&prompt, models.denoiser, cfg, run_seed)?);
        targets.push(ALL_EMOTIONS[i % N_EMOTIONS]);
        prompts.push(vocab.tokenize(&prompt)?);
    }
    Ok((images, targets, prompts))
}

/// One row of an evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub condition: String,
    pub n: usize,
    pub acc_guide: f32,
    pub acc_agnostic: f32,
    /// Accuracy under the reduced-data classifier, when one is supplied.
    pub acc_reduced: f32,
    pub fd_toy: f32,
    pub semantic: f32,
    pub intra_class_var: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| EmodiffError::InvalidArgument(format!("csv open: {e}")))?;
        w.write_record([
            "condition",
            "n",
            "acc_guide",
            "acc_agnostic",
            "acc_reduced",
            "fd_toy",
            "semantic",
            "intra_class_var",
            "config_hash",
        ])
        .map_err(|e| EmodiffError::InvalidArgument(format!("csv write: {e}")))?;
        for r in &self.rows {
            w.write_record([
                r.condition.clone(),
                r.n.to_string(),
                format!("{:.6}", r.acc_guide),
                format!("{:.6}", r.acc_agnostic),
                format!("{:.6}", r.acc_reduced),
                format!("{:.6}", r.fd_toy),
                format!("{:.6}", r.semantic),
                format!("{:.6}", r.intra_class_var),
                self.config_hash.clone(),
            ])
            .map_err(|e| EmodiffError::InvalidArgument(format!("csv write: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Hash of a guidance config for report provenance.
pub fn config_hash(cfg: &GuidanceConfig) -> String {
    let text = format!("{cfg:?}");
    format!("{:x}", Sha256::digest(text.as_bytes()))[..16].to_string()
}

/// Judges beyond the guide classifier carried by [`Models`].
pub struct Judges<'a> {
    pub agnostic: &'a EmotionClassifier,
    pub reduced: Option<&'a EmotionClassifier>,
}

/// Score one labeled image set against a reference feature set.
pub fn score_condition(
    condition: &str,
    images: &[Array3<f32>],
    targets: &[EmotionLabel],
    prompts: &[PromptTokens],
    reference: &Array2<f32>,
    models: &Models,
    judges: &Judges,
) -> Result<EvalRow> {
    let feats = embed_set(images, models.embedder)?;
    let var = match intra_class_variance(images, targets, models.embedder) {
        Ok(v) => v,
        // Sweeps with few runs per cell can leave singleton classes; report
        // NaN rather than failing the whole sweep.
        Err(_) => f32::NAN,
    };
    Ok(EvalRow {
        condition: condition.to_string(),
        n: images.len(),
        acc_guide: emotion_accuracy(images, targets, models.classifier)?,
        acc_agnostic: emotion_accuracy(images, targets, judges.agnostic)?,
        acc_reduced: match judges.reduced {
            Some(c) => emotion_accuracy(images, targets, c)?,
            None => f32::NAN,
        },
        fd_toy: frechet_distance(&feats, reference)?,
        semantic: semantic_score(images, prompts, models.embedder)?,
        intra_class_var: var,
    })
}

// ---------------------------------------------------------------------------
// Eta sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub report: EvalReport,
    pub etas: Vec<f32>,
    /// Spearman correlation of agnostic accuracy with eta.
    pub rank_acc_eta: f32,
    /// Spearman correlation of semantic score with eta.
    pub rank_sem_eta: f32,
}

/// Sweep the gate threshold over a grid; each cell runs `n_per_cell` guided
/// generations. The grid must span always-open to never-open behavior.
pub fn sweep_eta(
    etas: &[f32],
    n_per_cell: usize,
    models: &Models,
    judges: &Judges,
    reference: &Array2<f32>,
    cfg: &GuidanceConfig,
    seed: u64,
) -> Result<SweepReport> {
    if etas.len() < 3 {
        return Err(EmodiffError::InvalidArgument(
            "eta grid needs at least 3 values".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut accs = Vec::new();
    let mut sems = Vec::new();
    for &eta in etas {
        let cell_cfg = GuidanceConfig { eta, ..cfg.clone() };
        let batch = run_guided_batch(n_per_cell, models, &cell_cfg, seed)?;
        let row = score_condition(
            &format!("eta={eta}"),
            &batch.images,
            &batch.targets,
            &batch.prompts,
            reference,
            models,
            judges,
        )?;
        accs.push(row.acc_agnostic);
        sems.push(row.semantic);
        rows.push(row);
    }
    // Rank statistics against the finite order of the grid; +/-inf sort
    // correctly under total_cmp so no special casing is needed.
    let rank_acc_eta = spearman(etas, &accs)?;
    let rank_sem_eta = spearman(etas, &sems)?;
    Ok(SweepReport {
        report: EvalReport {
            config_hash: config_hash(cfg),
            rows,
        },
        etas: etas.to_vec(),
        rank_acc_eta,
        rank_sem_eta,
    })
}

// ---------------------------------------------------------------------------
// Loss ablation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub combo: String,
    pub lambda1: f32,
    pub lambda2: f32,
    pub n: usize,
    pub acc_guide: f32,
    pub acc_agnostic: f32,
    /// Fraction of outputs classified as a wheel neighbor of the target
    /// (derived metric, not from the source method).
    pub neighbor_confusion: f32,
    /// Fraction of outputs classified as the captured inherent emotion,
    /// among runs where it differed from the target (derived metric).
    pub inherent_capture: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub config_hash: String,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| EmodiffError::InvalidArgument(format!("csv open: {e}")))?;
        w.write_record([
            "combo",
            "lambda1",
            "lambda2",
            "n",
            "acc_guide",
            "acc_agnostic",
            "neighbor_confusion",
            "inherent_capture",
            "config_hash",
        ])
        .map_err(|e| EmodiffError::InvalidArgument(format!("csv write: {e}")))?;
        for r in &self.rows {
            w.write_record([
                r.combo.clone(),
                r.lambda1.to_string(),
                r.lambda2.to_string(),
                r.n.to_string(),
                format!("{:.6}", r.acc_guide),
                format!("{:.6}", r.acc_agnostic),
                format!("{:.6}", r.neighbor_confusion),
                format!("{:.6}", r.inherent_capture),
                self.config_hash.clone(),
            ])
            .map_err(|e| EmodiffError::InvalidArgument(format!("csv write: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn ablation_row(
    combo: &str,
    lambda1: f32,
    lambda2: f32,
    n_runs: usize,
    models: &Models,
    judges: &Judges,
    cfg: &GuidanceConfig,
    seed: u64,
) -> Result<AblationRow> {
    let cell_cfg = GuidanceConfig {
        lambda1,
        lambda2,
        ..cfg.clone()
    };
    let batch = run_guided_batch(n_runs, models, &cell_cfg, seed)?;
    let mut neighbor = 0usize;
    let mut inherent_hits = 0usize;
    let mut inherent_total = 0usize;
    for ((img, target), trace) in batch
        .images
        .iter()
        .zip(&batch.targets)
        .zip(&batch.traces)
    {
        let predicted = judges.agnostic.predict(&encode_image(img))?;
        if models
            .wheel
            .similar_emotions(*target)
            .contains(&predicted)
        {
            neighbor += 1;
        }
        if let Some(name) = &trace.y_inh {
            let y_inh = EmotionLabel::parse(name)?;
            if y_inh != *target {
                inherent_total += 1;
                if predicted == y_inh {
                    inherent_hits += 1;
                }
            }
        }
    }
    Ok(AblationRow {
        combo: combo.to_string(),
        lambda1,
        lambda2,
        n: n_runs,
        acc_guide: emotion_accuracy(&batch.images, &batch.targets, models.classifier)?,
        acc_agnostic: emotion_accuracy(&batch.images, &batch.targets, judges.agnostic)?,
        neighbor_confusion: neighbor as f32 / n_runs as f32,
        inherent_capture: if inherent_total > 0 {
            inherent_hits as f32 / inherent_total as f32
        } else {
            f32::NAN
        },
    })
}

/// Compare the four loss-term combinations: target-only, +L_sim, +L_inh,
/// and the full loss.
pub fn ablate_losses(
    n_runs: usize,
    models: &Models,
    judges: &Judges,
    cfg: &GuidanceConfig,
    seed: u64,
) -> Result<AblationReport> {
    let combos = [
        ("target-only", 0.0, 0.0),
        ("+L_sim", 0.0, cfg.lambda2),
        ("+L_inh", cfg.lambda1, 0.0),
        ("full", cfg.lambda1, cfg.lambda2),
    ];
    let mut rows = Vec::new();
    for (name, l1, l2) in combos {
        rows.push(ablation_row(
            name, l1, l2, n_runs, models, judges, cfg, seed,
        )?);
    }
    Ok(AblationReport {
        config_hash: config_hash(cfg),
        rows,
    })
}

// ---------------------------------------------------------------------------
// Eta calibration
// ---------------------------------------------------------------------------

/// Calibrate the gate threshold: run unguided syntheses (gate pinned shut),
/// pool every per-step s_clip value, and return the requested percentile.
/// The source method's threshold is specific to real CLIP logits, so the
/// toy embedder needs its own scale.
pub fn calibrate_eta(
    n_runs: usize,
    percentile: f32,
    models: &Models,
    cfg: &GuidanceConfig,
    seed: u64,
) -> Result<f32> {
    if !(0.0..=100.0).contains(&percentile) {
        return Err(EmodiffError::InvalidArgument(format!(
            "percentile must be in [0, 100], got {percentile}"
        )));
    }
    if n_runs == 0 {
        return Err(EmodiffError::InvalidArgument("need at least 1 run".into()));
    }
    let closed = GuidanceConfig {
        eta: f32::INFINITY,
        ..cfg.clone()
    };
    let mut values = Vec::new();
    for i in 0..n_runs {
        let prompt = neutral_prompt(i);
        let run_seed = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let target = ALL_EMOTIONS[i % N_EMOTIONS];
        let (_, trace) = generate(Some(&prompt), target, models, &closed, run_seed)?;
        values.extend(trace.steps.iter().map(|s| s.s_clip));
    }
    values.sort_by(f32::total_cmp);
    let idx = ((percentile as f64 / 100.0) * (values.len() - 1) as f64).round() as usize;
    Ok(values[idx])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn frechet_identical_sets_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = crate::nn::he_normal(&mut rng, 40, 8, 1.0);
        let fd = frechet_distance(&a, &a).unwrap();
        assert!(fd.abs() < 1e-6, "fd = {fd}");
    }

    #[test]
    fn frechet_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = crate::nn::he_normal(&mut rng, 50, 6, 1.0);
        let b = crate::nn::he_normal(&mut rng, 60, 6, 1.5);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-6);
        assert!(ab >= 0.0);
    }

    #[test]
    fn frechet_one_dimensional_gaussians() {
        // Closed form for 1-D Gaussians: (mu1-mu2)^2 + (s1-s2)^2 = 1 here.
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d0 = Normal::new(0.0f32, 1.0).unwrap();
        let d1 = Normal::new(1.0f32, 1.0).unwrap();
        let a = Array2::from_shape_fn((n, 1), |_| d0.sample(&mut rng));
        let b = Array2::from_shape_fn((n, 1), |_| d1.sample(&mut rng));
        let fd = frechet_distance(&a, &b).unwrap();
        assert!((fd - 1.0).abs() < 0.1, "fd = {fd}");
    }

    #[test]
    fn frechet_shrinkage_on_small_sets() {
        // n <= dim would make the covariance singular without the ridge.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = crate::nn::he_normal(&mut rng, 5, 8, 1.0);
        let b = crate::nn::he_normal(&mut rng, 5, 8, 1.0);
        let fd = frechet_distance(&a, &b).unwrap();
        assert!(fd.is_finite() && fd >= 0.0);
    }

    #[test]
    fn spearman_monotone_and_ties() {
        let x = [1.0f32, 2.0, 3.0, 4.0];
        let inc = [0.1f32, 0.5, 0.7, 0.9];
        let dec = [0.9f32, 0.7, 0.5, 0.1];
        assert!((spearman(&x, &inc).unwrap() - 1.0).abs() < 1e-6);
        assert!((spearman(&x, &dec).unwrap() + 1.0).abs() < 1e-6);
        let flat = [0.5f32, 0.5, 0.5, 0.5];
        assert_eq!(spearman(&x, &flat).unwrap(), 0.0);
    }

    #[test]
    fn variance_zero_for_duplicates_and_relabel_invariant() {
        let img = crate::glyphs::render_glyph(&crate::glyphs::GlyphSpec {
            shape: crate::glyphs::Shape::Circle,
            background: crate::glyphs::Background::Gray,
            position: 4,
            emotion: EmotionLabel::Awe,
            jitter_seed: 0,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let embedder =
            crate::models::JointEmbedder::new(crate::models::EmbedderConfig::default(), &mut rng);
        let images = vec![img.clone(), img.clone(), img.clone(), img];
        let labels = vec![
            EmotionLabel::Fear,
            EmotionLabel::Fear,
            EmotionLabel::Awe,
            EmotionLabel::Awe,
        ];
        let v = intra_class_variance(&images, &labels, &embedder).unwrap();
        assert!(v.abs() < 1e-8);
        // Permuting which class is which leaves the mean variance unchanged.
        let relabeled = vec![
            EmotionLabel::Anger,
            EmotionLabel::Anger,
            EmotionLabel::Sadness,
            EmotionLabel::Sadness,
        ];
        let v2 = intra_class_variance(&images, &relabeled, &embedder).unwrap();
        assert!((v - v2).abs() < 1e-9);
    }

    #[test]
    fn singleton_class_rejected() {
        let img = crate::glyphs::render_glyph(&crate::glyphs::GlyphSpec {
            shape: crate::glyphs::Shape::Bar,
            background: crate::glyphs::Background::Dark,
            position: 0,
            emotion: EmotionLabel::Fear,
            jitter_seed: 0,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let embedder =
            crate::models::JointEmbedder::new(crate::models::EmbedderConfig::default(), &mut rng);
        let err = intra_class_variance(&[img], &[EmotionLabel::Fear], &embedder);
        assert!(err.is_err());
    }

    #[test]
    fn untrained_classifier_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let classifier =
            crate::models::EmotionClassifier::new(crate::models::ClassifierArch::Guide, &mut rng);
        let data = crate::glyphs::generate_dataset(400, 0.0, 7).unwrap();
        let images: Vec<_> = data.samples.iter().map(|s| s.image.clone()).collect();
        // Random targets decorrelated from the images.
        let targets: Vec<_> = (0..400).map(|i| ALL_EMOTIONS[(i * 3 + 1) % 8]).collect();
        let acc = emotion_accuracy(&images, &targets, &classifier).unwrap();
        assert!((acc - 0.125).abs() < 0.08, "acc = {acc}");
    }

    #[test]
    fn neutral_prompts_tokenize() {
        let vocab = Vocab::default();
        for i in 0..64 {
            vocab.tokenize(&neutral_prompt(i)).unwrap();
        }
    }
}
