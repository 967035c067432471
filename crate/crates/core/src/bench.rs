//! Seeded benchmark sweep over images, mask kinds and methods.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crate::baselines::blend_baseline;
use crate::confill::{ConFill, ConFillConfig, Discrepancy, GammaTable, InpaintOutput};
use crate::denoiser::NoisePredictor;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::imaging::{make_mask, Image, MaskKind};
use crate::metrics::{format_psnr, masked_mse, masked_ssim, psnr};
use crate::rng;
use crate::schedule::NoiseSchedule;

/// A completion method under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MethodId {
    ConfillCad,
    ConfillWd,
    ConfillL2,
    Blend,
}

impl MethodId {
    pub const ALL: [MethodId; 4] = [
        MethodId::ConfillCad,
        MethodId::ConfillWd,
        MethodId::ConfillL2,
        MethodId::Blend,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodId::ConfillCad => "confill_cad",
            MethodId::ConfillWd => "confill_wd",
            MethodId::ConfillL2 => "confill_l2",
            MethodId::Blend => "blend",
        }
    }

    /// The guidance discrepancy, or `None` for the replacement baseline.
    pub fn discrepancy(self) -> Option<Discrepancy> {
        match self {
            MethodId::ConfillCad => Some(Discrepancy::Cad),
            MethodId::ConfillWd => Some(Discrepancy::Wasserstein),
            MethodId::ConfillL2 => Some(Discrepancy::L2),
            MethodId::Blend => None,
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown method '{s}'")))
    }
}

/// Parse a comma-separated method list; an empty string gives no methods.
pub fn parse_methods(list: &str) -> Result<Vec<MethodId>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

/// One benchmark cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub image_id: usize,
    pub mask_kind: MaskKind,
    pub method: MethodId,
    pub seed: u64,
    pub masked_mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub wall_ms: f64,
    pub steps_processed: usize,
    pub jumps_taken: usize,
}

/// Aggregates of one (method, mask kind) group.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSummary {
    pub method: MethodId,
    pub mask_kind: MaskKind,
    pub count: usize,
    pub median_mse: f64,
    pub mean_mse: f64,
    pub median_ssim: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub summary: Vec<BenchSummary>,
}

pub const CSV_HEADER: [&str; 10] = [
    "image_id",
    "mask_kind",
    "method",
    "seed",
    "masked_mse",
    "psnr_db",
    "ssim",
    "wall_ms",
    "steps_processed",
    "jumps_taken",
];

impl BenchReport {
    /// Rows as CSV with a header line, in sweep order.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.image_id.to_string(),
                r.mask_kind.name().to_string(),
                r.method.name().to_string(),
                r.seed.to_string(),
                format!("{:.9e}", r.masked_mse),
                format_psnr(r.psnr_db),
                format!("{:.9}", r.ssim),
                format!("{:.3}", r.wall_ms),
                r.steps_processed.to_string(),
                r.jumps_taken.to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn group(&self, method: MethodId, kind: MaskKind) -> Option<&BenchSummary> {
        self.summary.iter().find(|s| s.method == method && s.mask_kind == kind)
    }
}

/// Median of a non-empty slice, averaging the two middle values.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fixed inputs shared by every cell.
pub struct BenchSetup<'a> {
    pub net: &'a dyn NoisePredictor,
    pub sched: &'a NoiseSchedule,
    pub features: &'a FeatureConfig,
    pub cfg: &'a ConFillConfig,
    /// Calibrated tables per discrepancy; missing kinds calibrate per image.
    pub gammas: Vec<(Discrepancy, GammaTable)>,
    /// Record wall-clock time; otherwise `wall_ms` is 0 so reports stay
    /// byte-reproducible.
    pub timing: bool,
    /// Worker threads, at least 1.
    pub jobs: usize,
}

/// Seed of the mask drawn for `(image, kind)`; shared by all methods.
pub fn mask_seed(global: u64, image: usize, kind: MaskKind) -> u64 {
    rng::derive_indexed(global, "bench-mask", &[image as u64, kind_index(kind)])
}

/// Seed of the sampler for one cell.
pub fn cell_seed(global: u64, image: usize, kind: MaskKind, method: MethodId) -> u64 {
    rng::derive_indexed(global, "bench-cell", &[image as u64, kind_index(kind), method.index()])
}

fn kind_index(kind: MaskKind) -> u64 {
    MaskKind::ALL.iter().position(|&k| k == kind).expect("listed") as u64
}

fn run_cell(
    setup: &BenchSetup<'_>,
    image: &Image,
    image_id: usize,
    kind: MaskKind,
    method: MethodId,
    global: u64,
) -> Result<BenchRow> {
    if image.width() != image.height() {
        return Err(Error::contract("benchmark images must be square"));
    }
    let mask = make_mask(kind, mask_seed(global, image_id, kind), image.width())?;
    let seed = cell_seed(global, image_id, kind, method);
    let start = Instant::now();
    let out: InpaintOutput = match method.discrepancy() {
        None => blend_baseline(setup.net, setup.sched, image, &mask, seed)?,
        Some(kind) => {
            let gamma = setup.gammas.iter().find(|(k, _)| *k == kind).map(|(_, g)| g);
            let sampler = ConFill {
                net: setup.net,
                sched: setup.sched,
                features: setup.features,
                cfg: setup.cfg,
                kind,
                external: None,
            };
            sampler.inpaint(image, &mask, gamma, seed)?
        }
    };
    let wall_ms = if setup.timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    for (i, &known) in mask.known().iter().enumerate() {
        if known && out.composite.data()[i] != image.data()[i] {
            return Err(Error::contract("composite altered a known pixel"));
        }
    }
    let mse = masked_mse(&out.composite, image, &mask)?;
    Ok(BenchRow {
        image_id,
        mask_kind: kind,
        method,
        seed,
        masked_mse: mse,
        psnr_db: psnr(mse),
        ssim: masked_ssim(&out.composite, image, &mask)?,
        wall_ms,
        steps_processed: out.trace.len(),
        jumps_taken: out.jumps,
    })
}

/// Cartesian sweep `images x kinds x methods`. Cells run on `setup.jobs`
/// threads; rows are reported in sweep order regardless.
pub fn run_benchmark(
    images: &[Image],
    kinds: &[MaskKind],
    methods: &[MethodId],
    setup: &BenchSetup<'_>,
    seed: u64,
) -> Result<BenchReport> {
    let mut cells = Vec::new();
    for (i, image) in images.iter().enumerate() {
        for &kind in kinds {
            for &method in methods {
                cells.push((i, image, kind, method));
            }
        }
    }
    let results: Vec<Mutex<Option<Result<BenchRow>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let at = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(i, image, kind, method)) = cells.get(at) else {
            break;
        };
        let row = run_cell(setup, image, i, kind, method, seed);
        *results[at].lock().expect("unpoisoned") = Some(row);
    };
    let jobs = setup.jobs.max(1).min(cells.len().max(1));
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(worker);
            }
        });
    }
    let rows = results
        .into_iter()
        .map(|m| m.into_inner().expect("unpoisoned").expect("every cell ran"))
        .collect::<Result<Vec<_>>>()?;
    let mut summary = Vec::new();
    for &method in methods {
        for &kind in kinds {
            let group: Vec<&BenchRow> = rows.iter().filter(|r| r.method == method && r.mask_kind == kind).collect();
            if group.is_empty() {
                continue;
            }
            let mse: Vec<f64> = group.iter().map(|r| r.masked_mse).collect();
            let ssim: Vec<f64> = group.iter().map(|r| r.ssim).collect();
            summary.push(BenchSummary {
                method,
                mask_kind: kind,
                count: group.len(),
                median_mse: median(&mse),
                mean_mse: mse.iter().sum::<f64>() / mse.len() as f64,
                median_ssim: median(&ssim),
                mean_ssim: ssim.iter().sum::<f64>() / ssim.len() as f64,
            });
        }
    }
    Ok(BenchReport { rows, summary })
}
