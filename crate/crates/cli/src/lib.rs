//! Command implementations behind the `cpsde` binary.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cpsde::chem::sequence_string;
use cpsde::cyclization::make_spec;
use cpsde::data_io::{
    gen_synthetic_dataset, parse_complex, write_complex, write_pdb, ComplexRecord,
    SyntheticOptions,
};
use cpsde::denoiser::{init_params, Receptor};
use cpsde::metrics::{backbone_coords, diversity, validity_report, BOND_TOLERANCE};
use cpsde::router::init_router;
use cpsde::sampler::{
    run, FixedSequence, NeuralDenoiser, NeuralRouter, RandomSequence, SamplerOptions,
    SequenceRouter,
};
use cpsde::tensor::{read_archive_bytes, write_archive_bytes, ParamSet};
use cpsde::train::{train_denoiser, train_router, TrainOptions};
use cpsde::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use config::{RunConfig, SeqMode};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn meta_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

/// Writes the archive and a `.meta` file with the model keys, the kind and
/// the archive's sha256. Returns the hash.
pub fn save_checkpoint(
    params: &ParamSet,
    path: &Path,
    kind: &str,
    config: &RunConfig,
    extra: &str,
) -> Result<String> {
    create_parent(path)?;
    let bytes = write_archive_bytes(params);
    let hash = sha256_hex(&bytes);
    fs::write(path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    let meta = format!(
        "# kind {kind}\n# sha256 {hash}\n{extra}{}",
        config.model_text()
    );
    fs::write(meta_path(path), meta)?;
    Ok(hash)
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub sha256: String,
    /// Model keys as saved.
    pub config: RunConfig,
    pub meta: String,
}

fn meta_field<'a>(meta: &'a str, name: &str) -> Option<&'a str> {
    meta.lines()
        .filter_map(|l| l.strip_prefix("# "))
        .find_map(|l| l.strip_prefix(name)?.strip_prefix(' '))
        .map(str::trim)
}

/// Reads an archive, checks it against its `.meta` hash and kind, and
/// applies the saved model keys over `base`.
pub fn load_checkpoint(path: &Path, kind: &str, base: &RunConfig) -> Result<Checkpoint> {
    let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let mpath = meta_path(path);
    let meta = fs::read_to_string(&mpath).with_context(|| format!("reading {}", mpath.display()))?;
    let sha256 = sha256_hex(&bytes);
    match meta_field(&meta, "sha256") {
        Some(h) if h == sha256 => {}
        Some(h) => bail!(
            "{} does not match its metadata hash ({h} vs {sha256})",
            path.display()
        ),
        None => bail!("{} has no sha256 line", mpath.display()),
    }
    if meta_field(&meta, "kind") != Some(kind) {
        bail!("{} is not a {kind} checkpoint", path.display());
    }
    let mut config = base.clone();
    config.apply_text(&meta, &mpath)?;
    config.validate()?;
    Ok(Checkpoint {
        params: read_archive_bytes(&bytes)?,
        sha256,
        config,
        meta,
    })
}

/// The configured dataset: synthetic complexes or every `.complex` file of a
/// directory (or a single file), in name order.
pub fn load_dataset(config: &RunConfig) -> Result<Vec<ComplexRecord>> {
    if config.dataset == "synthetic" {
        return Ok(gen_synthetic_dataset(
            config.n_complexes,
            config.data_seed,
            &SyntheticOptions::default(),
        )?);
    }
    let path = Path::new(&config.dataset);
    if path.is_file() {
        return Ok(vec![parse_complex(path)?]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("reading dataset {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "complex"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .complex files in {}", path.display());
    }
    files
        .iter()
        .map(|f| parse_complex(f).map_err(anyhow::Error::from))
        .collect()
}

fn train_options(config: &RunConfig, base: TrainOptions) -> TrainOptions {
    TrainOptions {
        steps: config.steps,
        optimizer: config.optimizer,
        seed: config.seed,
        schedule: config.schedule,
        harmonic: config.harmonic,
        sigma_p: config.sigma_p,
        ..base
    }
}

/// Writes `n_complexes` synthetic complexes to `out_dir`.
pub fn cmd_gen_data(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = gen_synthetic_dataset(
        config.n_complexes,
        config.data_seed,
        &SyntheticOptions::default(),
    )?;
    fs::create_dir_all(&config.out_dir)?;
    let mut paths = Vec::new();
    for rec in &data {
        let p = config.out_dir.join(format!("{}.complex", rec.id));
        write_complex(rec, &p)?;
        paths.push(p);
    }
    Ok(paths)
}

fn loss_log_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".loss.txt");
    PathBuf::from(s)
}

/// Trains the denoiser and writes the checkpoint and its loss curve. On
/// divergence the last good parameters are still written.
pub fn cmd_train_denoiser(config: &RunConfig) -> Result<PathBuf> {
    let data = load_dataset(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_params(&config.model, &mut rng);
    let opts = train_options(config, TrainOptions::denoiser());
    let path = &config.denoiser_ckpt;
    match train_denoiser(&mut params, &config.model, &data, &opts) {
        Ok(log) => {
            save_checkpoint(&params, path, "denoiser", config, "")?;
            fs::write(loss_log_path(path), log.to_text())?;
            eprintln!(
                "denoiser: loss {:.4} -> {:.4} (10-step means), saved {}",
                log.head_mean(10),
                log.tail_mean(10),
                path.display()
            );
            Ok(path.clone())
        }
        Err(e @ Error::Divergence { .. }) => {
            save_checkpoint(&params, path, "denoiser", config, "")?;
            Err(anyhow!(e).context(format!("last good parameters saved to {}", path.display())))
        }
        Err(e) => Err(e.into()),
    }
}

/// Trains the router against the frozen denoiser checkpoint, verifying the
/// denoiser is unchanged by hash before and after.
pub fn cmd_train_router(config: &RunConfig) -> Result<PathBuf> {
    let den = load_checkpoint(&config.denoiser_ckpt, "denoiser", config)?;
    let data = load_dataset(config)?;
    let model = den.config.model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut router = init_router(&model, &mut rng);
    let mut opts = train_options(config, TrainOptions::router());
    opts.harmonic = den.config.harmonic;
    opts.schedule = den.config.schedule;
    let before = sha256_hex(&write_archive_bytes(&den.params));
    let result = train_router(&mut router, &den.params, &model, &data, &opts);
    let after = sha256_hex(&write_archive_bytes(&den.params));
    let on_disk = sha256_hex(&fs::read(&config.denoiser_ckpt)?);
    if before != after || on_disk != den.sha256 {
        bail!("denoiser parameters changed during router training");
    }
    let extra = format!("# denoiser_sha256 {}\n", den.sha256);
    let path = &config.router_ckpt;
    match result {
        Ok(log) => {
            save_checkpoint(&router, path, "router", &den.config, &extra)?;
            fs::write(loss_log_path(path), log.to_text())?;
            eprintln!(
                "router: loss {:.4} -> {:.4} (10-step means), denoiser hash {} unchanged, saved {}",
                log.head_mean(10),
                log.tail_mean(10),
                &den.sha256[..12],
                path.display()
            );
            Ok(path.clone())
        }
        Err(e @ Error::Divergence { .. }) => {
            save_checkpoint(&router, path, "router", &den.config, &extra)?;
            Err(anyhow!(e).context(format!("last good parameters saved to {}", path.display())))
        }
        Err(e) => Err(e.into()),
    }
}

fn sampling_receptor(config: &RunConfig) -> Result<Receptor> {
    match &config.receptor {
        Some(p) => Ok(parse_complex(p)?.receptor),
        None => Ok(load_dataset(config)?.remove(0).receptor),
    }
}

/// Seed of sample `k` at length `n`: independent streams per (length, k).
pub fn sample_seed(base: u64, n: usize, k: usize) -> u64 {
    base.wrapping_mul(1_000_003)
        .wrapping_add((n as u64) << 32)
        .wrapping_add(k as u64)
}

#[derive(Clone, Debug, Default)]
pub struct SampleSummary {
    pub written: Vec<PathBuf>,
    pub failures: Vec<String>,
}

/// Samples `n_samples` peptides per length. Per-sample failures are logged
/// and the batch continues.
pub fn cmd_sample(config: &RunConfig) -> Result<SampleSummary> {
    let den = load_checkpoint(&config.denoiser_ckpt, "denoiser", config)?;
    let model = den.config.model.clone();
    let denoiser = NeuralDenoiser {
        params: den.params,
        config: model.clone(),
    };
    let mut router: Box<dyn SequenceRouter> = match config.seq_mode {
        SeqMode::Router => {
            let r = load_checkpoint(&config.router_ckpt, "router", config)?;
            if meta_field(&r.meta, "denoiser_sha256") != Some(den.sha256.as_str()) {
                eprintln!("warning: router was trained against a different denoiser");
            }
            Box::new(NeuralRouter {
                params: r.params,
                config: model,
                decode: config.decode,
            })
        }
        SeqMode::Fixed => Box::new(FixedSequence),
        SeqMode::Random => Box::new(RandomSequence),
    };
    // the noise operator must match the one the denoiser was trained with
    if config.harmonic != den.config.harmonic {
        eprintln!(
            "warning: using harmonic = {} from the denoiser checkpoint",
            den.config.harmonic
        );
    }
    let receptor = sampling_receptor(config)?;
    let opts = SamplerOptions {
        n_steps: config.n_steps,
        epsilon: config.epsilon,
        schedule: den.config.schedule,
        harmonic: den.config.harmonic,
        sigma_p: config.sigma_p,
        ..SamplerOptions::default()
    };
    fs::create_dir_all(&config.out_dir)?;
    let mut summary = SampleSummary::default();
    let mut sequences = String::new();
    let mut report = format!("# config\n{}\n", config.to_text());
    for n in config.lengths() {
        let mut backbones = Vec::new();
        for k in 0..config.n_samples {
            let name = format!("{}_{n}_{k}", config.ctype);
            let seed = sample_seed(config.seed, n, k);
            let result = make_spec(config.ctype, n)
                .and_then(|spec| run(&spec, &receptor, &denoiser, router.as_mut(), &opts, seed))
                .and_then(|s| {
                    let pdb = config.out_dir.join(format!("{name}.pdb"));
                    write_pdb(&s.coords, &s.graph, &pdb)?;
                    fs::write(config.out_dir.join(format!("{name}.log")), s.sidecar())?;
                    let rep = validity_report(&s.coords, &s.graph)?;
                    Ok((s, rep, pdb))
                });
            match result {
                Ok((s, rep, pdb)) => {
                    let seq = sequence_string(&s.sequence);
                    let _ = writeln!(sequences, "{name} {seq}");
                    let _ = writeln!(
                        report,
                        "[{name}]\nseed {seed}\nsequence {seq}\nbond_fraction_within_{BOND_TOLERANCE} {:.4}\n{rep}\n",
                        rep.bond_fraction_within(BOND_TOLERANCE)
                    );
                    backbones.push(backbone_coords(&s.coords, &s.graph));
                    eprintln!("{name}: {seq}");
                    summary.written.push(pdb);
                }
                Err(e) => {
                    eprintln!("{name}: failed: {e}");
                    let _ = writeln!(report, "[{name}]\nfailed {e}\n");
                    summary.failures.push(format!("{name}: {e}"));
                }
            }
        }
        if let Ok(d) = diversity(&backbones) {
            let _ = writeln!(report, "[diversity {}_{n}]\nbackbone {d:.4}\n", config.ctype);
        }
    }
    let _ = writeln!(
        report,
        "[summary]\nwritten {}\nfailed {}",
        summary.written.len(),
        summary.failures.len()
    );
    fs::write(config.out_dir.join("sequences.txt"), sequences)?;
    fs::write(config.out_dir.join("report.txt"), report)?;
    if summary.written.is_empty() {
        bail!("every sample failed");
    }
    Ok(summary)
}

pub const CHECK_IDS: [&str; 10] = ["1", "2", "3", "4", "5", "6", "7", "8", "9", "10"];

/// Runs the selected criteria, printing one line each as it finishes.
/// Returns the lines and whether all passed.
pub fn cmd_check(config: &RunConfig) -> Result<(Vec<String>, bool)> {
    use cpsde::check;
    let ids: Vec<&str> = if config.checks == "all" {
        CHECK_IDS.to_vec()
    } else {
        config.checks.split(',').map(str::trim).collect()
    };
    if let Some(bad) = ids.iter().find(|i| !CHECK_IDS.contains(i)) {
        bail!("unknown check id `{bad}`");
    }
    let s = config.seed;
    let mut models = None;
    let mut lines = Vec::new();
    let mut all = true;
    for id in ids {
        let outcome = match id {
            "1" => check::kernel_sde_consistency(20_000, 2_000, s + 11),
            "2" => check::prior_correctness(50_000, s + 12),
            "3" => check::score_exactness(s + 13),
            "4" => check::equivariance_check(100, s + 14),
            "5" => check::denoiser_gradient_check(s),
            "6" => check::desk_training(
                models.get_or_insert_with(|| check::train_overfit(2000, s + 16)),
            ),
            "7" => check::sampling_invariants(config.n_steps, s + 17),
            "8" => check::structural_sanity(
                models.get_or_insert_with(|| check::train_overfit(2000, s + 16)),
                20,
                config.n_steps,
            ),
            "9" => check::layout_check(),
            _ => check::oracle_collapse(config.n_steps, s + 20),
        };
        println!("{outcome}");
        all &= outcome.passed();
        lines.push(outcome.to_string());
    }
    Ok((lines, all))
}
