//! Command implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use confill_core::baselines::blend_baseline;
use confill_core::bench::{parse_methods, run_benchmark, BenchSetup, MethodId};
use confill_core::confill::{calibrate_gamma, trace_tsv, ConFill, Discrepancy, GammaTable};
use confill_core::denoiser::{load_checkpoint, save_checkpoint, train, CheckpointMeta};
use confill_core::features::{CellGrid, ExternalFeatures, FeatureExtractor, Weighting};
use confill_core::imaging::{gen_toy_dataset, read_mask_pgm, read_pgm, write_pgm, MaskKind, PatternKind, ToyDatasetSpec};
use confill_core::{rng, Denoiser, Error, Image, NoiseSchedule};
use serde::Serialize;

use crate::config::{required, RunConfig, UsageError};
use crate::{Command, Common};

/// 0 success, 1 usage, 2 input/output or contract, 3 numerical failure.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) => 1,
                e if e.is_numerical() => 3,
                _ => 2,
            };
        }
    }
    2
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            out,
            count,
            size,
            kinds,
            common,
        } => gen_data(&out, count, size, kinds.as_deref(), &common),
        Command::Train { data, out, common } => {
            let mut cfg = prepare(&common)?;
            let data = required(&data, &cfg.paths.data, "data")?;
            let out = required(&out, &cfg.paths.out, "out")?;
            cfg.paths.data = Some(data.clone());
            cfg.paths.out = Some(out.clone());
            cmd_train(&cfg, &data, &out)
        }
        Command::Inpaint {
            model,
            image,
            mask,
            out,
            method,
            trace,
            raw,
            gamma,
            external,
            common,
        } => {
            let mut cfg = prepare(&common)?;
            let p = &mut cfg.paths;
            p.model = Some(required(&model, &p.model, "model")?);
            p.image = Some(required(&image, &p.image, "image")?);
            p.mask = Some(required(&mask, &p.mask, "mask")?);
            p.out = Some(required(&out, &p.out, "out")?);
            p.trace = trace.or(p.trace.take());
            p.raw = raw.or(p.raw.take());
            p.gamma = gamma.or(p.gamma.take());
            p.external = external.or(p.external.take());
            let method: MethodId = method.parse()?;
            cmd_inpaint(&mut cfg, method)
        }
        Command::Bench {
            model,
            data,
            out,
            methods,
            masks,
            count,
            gamma,
            jobs,
            timing,
            common,
        } => {
            let mut cfg = prepare(&common)?;
            let p = &mut cfg.paths;
            p.model = Some(required(&model, &p.model, "model")?);
            p.data = Some(required(&data, &p.data, "data")?);
            p.out = Some(required(&out, &p.out, "out")?);
            p.gamma = gamma.or(p.gamma.take());
            let methods = parse_methods(&methods)?;
            let kinds = masks
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<confill_core::Result<Vec<MaskKind>>>()?;
            if jobs == 0 {
                return Err(UsageError("--jobs must be at least 1".into()).into());
            }
            cmd_bench(&mut cfg, &methods, &kinds, count, jobs, timing)
        }
        Command::Calibrate {
            model,
            data,
            out,
            method,
            common,
        } => {
            let mut cfg = prepare(&common)?;
            let p = &mut cfg.paths;
            p.model = Some(required(&model, &p.model, "model")?);
            p.data = Some(required(&data, &p.data, "data")?);
            p.out = Some(required(&out, &p.out, "out")?);
            let method: MethodId = method.parse()?;
            let kind = method
                .discrepancy()
                .ok_or_else(|| UsageError("calibration needs a guided method".into()))?;
            cmd_calibrate(&mut cfg, kind)
        }
        Command::Features {
            image,
            mask,
            out,
            external,
            common,
        } => {
            let mut cfg = prepare(&common)?;
            let p = &mut cfg.paths;
            p.image = Some(required(&image, &p.image, "image")?);
            p.out = Some(required(&out, &p.out, "out")?);
            p.mask = mask.or(p.mask.take());
            p.external = external.or(p.external.take());
            cmd_features(&cfg)
        }
    }
}

/// Load and validate the configuration and resolve the seed.
fn prepare(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.resolve_seed(common.seed)?;
    cfg.validate()?;
    Ok(cfg)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn echo_config(cfg: &RunConfig) {
    println!("{}", cfg.to_json());
}

#[derive(Serialize)]
struct Manifest<'a> {
    spec: &'a ToyDatasetSpec,
    files: Vec<String>,
}

fn gen_data(out: &Path, count: usize, size: usize, kinds: Option<&str>, common: &Common) -> Result<()> {
    let mut cfg = prepare(common)?;
    let seed = cfg.seed.unwrap_or(0);
    let kinds = match kinds {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<confill_core::Result<Vec<PatternKind>>>()?,
        None => PatternKind::ALL.to_vec(),
    };
    let spec = ToyDatasetSpec {
        count,
        size,
        seed,
        kinds,
    };
    spec.validate()?;
    cfg.paths.out = Some(out.to_path_buf());
    echo_config(&cfg);
    let images = gen_toy_dataset(&spec)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut files = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let name = format!("img_{i:05}.pgm");
        write(&out.join(&name), write_pgm(img))?;
        files.push(name);
    }
    let manifest = serde_json::to_string_pretty(&Manifest { spec: &spec, files })?;
    write(&out.join("manifest.json"), manifest + "\n")?;
    println!("wrote {} images to {}", images.len(), out.display());
    Ok(())
}

/// Every `img_*.pgm` in `dir`, in name order.
fn load_dataset(dir: &Path) -> Result<Vec<Image>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading dataset directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("img_") && n.ends_with(".pgm"))
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Contract(format!("no img_*.pgm files in {}", dir.display())).into());
    }
    names
        .iter()
        .map(|p| read_pgm(&read(p)?).with_context(|| format!("decoding {}", p.display())))
        .collect()
}

fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    echo_config(cfg);
    let images = load_dataset(data)?;
    let sched = cfg.schedule.build()?;
    let (params, report) = train(&images, &sched, &cfg.train)?;
    write(out, save_checkpoint(&params, &CheckpointMeta::new(&sched, cfg.train.seed)))?;
    println!(
        "trained {} steps: initial loss {:.6}, final loss {:.6}",
        report.steps, report.initial_loss, report.final_loss
    );
    Ok(())
}

fn load_model(cfg: &mut RunConfig, path: &Path) -> Result<(Denoiser, NoiseSchedule)> {
    let (params, meta) = load_checkpoint(&read(path)?).with_context(|| format!("loading {}", path.display()))?;
    let sched = meta.schedule()?;
    cfg.schedule = *sched.config();
    Ok((Denoiser::new(params, sched.timesteps()), sched))
}

fn load_external(path: Option<&Path>) -> Result<Option<ExternalFeatures>> {
    path.map(|p| ExternalFeatures::read(&read(p)?).with_context(|| format!("decoding {}", p.display())))
        .transpose()
}

fn load_gamma(path: Option<&Path>) -> Result<Option<GammaTable>> {
    path.map(|p| {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        GammaTable::from_json(&text).with_context(|| format!("decoding {}", p.display()))
    })
    .transpose()
}

fn cmd_inpaint(cfg: &mut RunConfig, method: MethodId) -> Result<()> {
    let p = cfg.paths.clone();
    let (net, sched) = load_model(cfg, p.model.as_deref().expect("set"))?;
    let image = read_pgm(&read(p.image.as_deref().expect("set"))?).context("decoding --image")?;
    let mask = read_mask_pgm(&read(p.mask.as_deref().expect("set"))?).context("decoding --mask")?;
    let external = load_external(p.external.as_deref())?;
    let gamma = load_gamma(p.gamma.as_deref())?;
    echo_config(cfg);
    if mask.width() != image.width() || mask.height() != image.height() {
        return Err(Error::Contract(format!(
            "mask is {}x{} but image is {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        ))
        .into());
    }
    let seed = rng::derive(cfg.confill.seed, "inpaint");
    let out = match method.discrepancy() {
        None => blend_baseline(&net, &sched, &image, &mask, seed)?,
        Some(kind) => ConFill {
            net: &net,
            sched: &sched,
            features: &cfg.features,
            cfg: &cfg.confill,
            kind,
            external: external.as_ref(),
        }
        .inpaint(&image, &mask, gamma.as_ref(), seed)?,
    };
    write(p.out.as_deref().expect("set"), write_pgm(&out.composite))?;
    if let Some(raw) = &p.raw {
        write(raw, write_pgm(&out.raw))?;
    }
    if let Some(trace) = &p.trace {
        write(trace, trace_tsv(&out.trace))?;
    }
    println!("processed {} steps with {} rewinds", out.trace.len(), out.jumps);
    Ok(())
}

fn calibrate_for(
    cfg: &RunConfig,
    net: &Denoiser,
    sched: &NoiseSchedule,
    images: &[Image],
    kind: Discrepancy,
) -> Result<GammaTable> {
    Ok(calibrate_gamma(net, sched, images, &cfg.features, kind, &cfg.confill)?)
}

fn cmd_bench(
    cfg: &mut RunConfig,
    methods: &[MethodId],
    kinds: &[MaskKind],
    count: Option<usize>,
    jobs: usize,
    timing: bool,
) -> Result<()> {
    let p = cfg.paths.clone();
    let (net, sched) = load_model(cfg, p.model.as_deref().expect("set"))?;
    let mut images = load_dataset(p.data.as_deref().expect("set"))?;
    let fixed_gamma = load_gamma(p.gamma.as_deref())?;
    echo_config(cfg);
    let mut gammas = Vec::new();
    for kind in methods.iter().filter_map(|m| m.discrepancy()) {
        let table = match &fixed_gamma {
            Some(g) => g.clone(),
            None => calibrate_for(cfg, &net, &sched, &images, kind)?,
        };
        gammas.push((kind, table));
    }
    if let Some(n) = count {
        images.truncate(n);
    }
    let setup = BenchSetup {
        net: &net,
        sched: &sched,
        features: &cfg.features,
        cfg: &cfg.confill,
        gammas,
        timing,
        jobs,
    };
    let report = run_benchmark(&images, kinds, methods, &setup, cfg.seed.unwrap_or(0))?;
    write(p.out.as_deref().expect("set"), report.to_csv()?)?;
    for s in &report.summary {
        println!(
            "{} {} n={} median_ssim={:.6} mean_ssim={:.6} median_mse={:.6e} mean_mse={:.6e}",
            s.method, s.mask_kind, s.count, s.median_ssim, s.mean_ssim, s.median_mse, s.mean_mse
        );
    }
    Ok(())
}

fn cmd_calibrate(cfg: &mut RunConfig, kind: Discrepancy) -> Result<()> {
    let p = cfg.paths.clone();
    let (net, sched) = load_model(cfg, p.model.as_deref().expect("set"))?;
    let images = load_dataset(p.data.as_deref().expect("set"))?;
    echo_config(cfg);
    let table = calibrate_for(cfg, &net, &sched, &images, kind)?;
    write(p.out.as_deref().expect("set"), table.to_json() + "\n")?;
    println!("calibrated {} steps on {} images", table.timesteps(), images.len().min(cfg.confill.calib_images));
    Ok(())
}

/// Affine map of `values` onto [0, 1]: `value = offset + scale * pixel`.
/// A constant map is written at full intensity with `scale` equal to the value.
fn normalise(values: &Image) -> (Image, f64, f64) {
    let lo = values.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (offset, scale) = if hi > lo {
        (lo, hi - lo)
    } else if hi != 0.0 {
        (0.0, hi)
    } else {
        (0.0, 1.0)
    };
    (values.map(|v| (v - offset) / scale), offset, scale)
}

fn cmd_features(cfg: &RunConfig) -> Result<()> {
    let p = &cfg.paths;
    let image = read_pgm(&read(p.image.as_deref().expect("set"))?).context("decoding --image")?;
    let mask = p
        .mask
        .as_deref()
        .map(|m| read_mask_pgm(&read(m)?).context("decoding --mask"))
        .transpose()?;
    let external = load_external(p.external.as_deref())?;
    echo_config(cfg);
    let extractor = FeatureExtractor::new(cfg.features.clone())?;
    let grid = CellGrid::build(
        &extractor,
        &image,
        mask.as_ref(),
        rng::derive(cfg.confill.seed, "cell-grid"),
        Weighting::Adaptive,
        external.as_ref(),
    )?;
    let out = p.out.as_deref().expect("set");
    let maps: [(&str, Image); 4] = [
        ("rho", grid.paint(|c| c.weight)),
        ("var", grid.paint(|c| c.variance)),
        ("ed", grid.paint(|c| c.edge_density)),
        ("samples", grid.paint(|c| c.samples.len() as f64)),
    ];
    for (name, map) in maps {
        let (scaled, offset, scale) = normalise(&map);
        write(&out.join(format!("{name}.pgm")), write_pgm(&scaled))?;
        println!("{name} offset={offset:e} scale={scale:e}");
    }
    Ok(())
}
