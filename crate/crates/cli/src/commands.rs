//! The pipeline subcommands. Each command reads XRFC containers,
//! runs one stage, writes its outputs plus a run manifest, and is
//! deterministic for a fixed seed and thread count.

use std::path::Path;

use serde::Serialize;
use xrf_restore::container::{read_container, write_container, write_dictionary_csv, Container};
use xrf_restore::init::{kmeans_dictionary, nnls_abundance, KMeansConfig, NnlsConfig};
use xrf_restore::mcr::{mcr_als, McrConfig};
use xrf_restore::metrics::{band_map, evaluate, Band};
use xrf_restore::objective::ObjectiveConfig;
use xrf_restore::phantom::{make_phantom, PhantomConfig};
use xrf_restore::rng::Mix64;
use xrf_restore::sim::{ground_truth_rates, simulate_scan, speedup_dwell, SimConfig};
use xrf_restore::solver::{recover_rates, solve, SolveReport, SolverConfig};
use xrf_restore::volume::{Abundance, CountVolume, Dictionary, RateVolume, RgbImage};
use xrf_restore::{Error, Result};

use crate::manifest::RunManifest;
use crate::pgm::write_pgm16;
use crate::settings::Settings;

fn load_counts(path: &Path) -> Result<CountVolume> {
    read_container(path)?.into_counts()
}

fn load_rates(path: &Path) -> Result<RateVolume> {
    read_container(path)?.into_rates()
}

fn load_rgb(path: &Path) -> Result<RgbImage> {
    read_container(path)?.into_rgb()
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn objective_config(settings: &Settings, dwell: f64) -> Result<ObjectiveConfig> {
    let cfg = ObjectiveConfig::new(dwell)?
        .with_lambda_tv(settings.lambda_tv)
        .with_lambda_en(settings.lambda_en)
        .with_alpha(settings.alpha)
        .with_beta(settings.beta);
    cfg.validate()?;
    Ok(cfg)
}

fn solver_config(settings: &Settings) -> SolverConfig {
    SolverConfig {
        patience: settings.patience,
        max_iters: settings.max_iters,
        lasso_tau: settings.lasso_tau,
        prune_every: settings.prune_every,
        alt_block: settings.alt_block,
        ..SolverConfig::default()
    }
}

fn mcr_config(settings: &Settings) -> McrConfig {
    McrConfig {
        atoms: settings.atoms,
        max_outer: settings.mcr_max_outer,
        tol: settings.mcr_tol,
        seed: settings.seed,
    }
}

/// K-means initialization followed by the regularized Poisson solve.
fn fit_solver(
    x: &CountVolume,
    img: &RgbImage,
    settings: &Settings,
) -> Result<(Dictionary, Abundance, SolveReport)> {
    let x_mat = x.to_matrix();
    let km = KMeansConfig::new(settings.seed).with_clusters(settings.atoms);
    let d0 = kmeans_dictionary(&x_mat, &km)?;
    let a0 = nnls_abundance(&x_mat, &d0, &NnlsConfig::default())?;
    let obj = objective_config(settings, x.dwell_s)?;
    solve(x, img, &d0, &a0, &obj, &solver_config(settings))
}

#[derive(Clone, Copy, Debug)]
pub struct PhantomParams {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub m_true: usize,
    pub regions: usize,
    pub peak_rate: f64,
    pub rgb_correlation: f64,
}

pub fn cmd_phantom(
    params: &PhantomParams,
    output: &Path,
    settings: &Settings,
) -> Result<RunManifest> {
    std::fs::create_dir_all(output)?;
    let cfg = PhantomConfig {
        height: params.height,
        width: params.width,
        channels: params.channels,
        m_true: params.m_true,
        regions: params.regions,
        peak_rate: params.peak_rate,
        rgb_correlation: params.rgb_correlation,
        seed: settings.seed,
    };
    let (rates, img, d, a) = make_phantom(&cfg)?;

    let mut m = RunManifest::new("phantom", settings);
    for (label, container) in [
        ("rates", Container::from(rates)),
        ("rgb", Container::from(img)),
        ("dict_true", Container::from(d)),
        ("abund_true", Container::from(a)),
    ] {
        let path = output.join(format!("{label}.xrfc"));
        write_container(&container, &path)?;
        m.output(label, &path);
    }
    m.param("height", params.height);
    m.param("width", params.width);
    m.param("channels", params.channels);
    m.param("m_true", params.m_true);
    m.param("regions", params.regions);
    m.param("peak_rate", params.peak_rate);
    m.param("rgb_correlation", params.rgb_correlation);
    Ok(m)
}

pub fn cmd_simulate(
    input: &Path,
    dwell: f64,
    output: &Path,
    settings: &Settings,
) -> Result<RunManifest> {
    std::fs::create_dir_all(output)?;
    let rates = load_rates(input)?;
    let x = simulate_scan(&rates, &SimConfig::new(dwell, settings.seed)?)?;
    let path = output.join("counts.xrfc");
    write_container(&Container::from(x), &path)?;

    let mut m = RunManifest::new("simulate", settings);
    m.param("dwell", dwell);
    m.input("rates", input);
    m.output("counts", &path);
    Ok(m)
}

pub fn cmd_denoise(
    input: &Path,
    rgb: &Path,
    output: &Path,
    settings: &Settings,
) -> Result<RunManifest> {
    std::fs::create_dir_all(output)?;
    let x = load_counts(input)?;
    let img = load_rgb(rgb)?;
    let (d, a, report) = fit_solver(&x, &img, settings)?;
    let est = recover_rates(&d, &a, x.dwell_s, x.order())?;

    let mut m = RunManifest::new("denoise", settings);
    m.input("counts", input);
    m.input("rgb", rgb);
    let rates_path = output.join("rates.xrfc");
    write_container(&Container::from(est), &rates_path)?;
    m.output("rates", &rates_path);
    let dict_path = output.join("dict.xrfc");
    write_container(&Container::from(d.clone()), &dict_path)?;
    m.output("dict", &dict_path);
    let dict_csv = output.join("dict.csv");
    write_dictionary_csv(&d, &dict_csv)?;
    m.output("dict_csv", &dict_csv);
    let abund_path = output.join("abund.xrfc");
    write_container(&Container::from(a), &abund_path)?;
    m.output("abund", &abund_path);
    let report_path = output.join("report.json");
    write_json(&report, &report_path)?;
    m.output("report", &report_path);
    Ok(m)
}

pub fn cmd_baseline(input: &Path, output: &Path, settings: &Settings) -> Result<RunManifest> {
    std::fs::create_dir_all(output)?;
    let x = load_counts(input)?;
    let (d, a, est, report) = mcr_als(&x, &mcr_config(settings))?;

    let mut m = RunManifest::new("baseline", settings);
    m.input("counts", input);
    let rates_path = output.join("rates.xrfc");
    write_container(&Container::from(est), &rates_path)?;
    m.output("rates", &rates_path);
    let dict_path = output.join("dict.xrfc");
    write_container(&Container::from(d), &dict_path)?;
    m.output("dict", &dict_path);
    let abund_path = output.join("abund.xrfc");
    write_container(&Container::from(a), &abund_path)?;
    m.output("abund", &abund_path);
    let report_path = output.join("report.json");
    write_json(&report, &report_path)?;
    m.output("report", &report_path);
    Ok(m)
}

/// Parse a band list of the form "label:lo:hi,label:lo:hi".
pub fn parse_bands(spec: &str) -> Result<Vec<Band>> {
    spec.split(',')
        .map(|part| {
            let bits: Vec<&str> = part.split(':').collect();
            if bits.len() != 3 {
                return Err(Error::Config(format!(
                    "band {part:?} must look like label:lo:hi"
                )));
            }
            let lo: usize = bits[1]
                .parse()
                .map_err(|e| Error::Config(format!("band {part:?}: bad lo: {e}")))?;
            let hi: usize = bits[2]
                .parse()
                .map_err(|e| Error::Config(format!("band {part:?}: bad hi: {e}")))?;
            Ok(Band::new(bits[0], lo, hi))
        })
        .collect()
}

fn safe_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

pub fn cmd_evaluate(
    input: &Path,
    gt: &Path,
    bands_spec: Option<&str>,
    maps: bool,
    output: &Path,
    settings: &Settings,
) -> Result<RunManifest> {
    std::fs::create_dir_all(output)?;
    let est = load_rates(input)?;
    let reference = load_counts(gt)?;
    let bands = match bands_spec {
        Some(spec) => parse_bands(spec)?,
        None => Vec::new(),
    };
    let result = evaluate(&est, &reference, &bands)?;

    let mut m = RunManifest::new("evaluate", settings);
    m.input("estimate", input);
    m.input("reference", gt);
    if let Some(spec) = bands_spec {
        m.param("bands", spec);
    }
    m.param("maps", maps);
    let eval_path = output.join("eval.json");
    write_json(&result, &eval_path)?;
    m.output("eval", &eval_path);

    if maps {
        let gt_rates = ground_truth_rates(&reference);
        for band in &bands {
            let est_map = band_map(&est, band)?;
            let gt_map = band_map(&gt_rates, band)?;
            // One shared gray scale per band so the pair is comparable.
            let scale = gt_map.iter().cloned().fold(0.0, f64::max);
            let stem = safe_label(&band.label);
            let est_path = output.join(format!("est_{stem}.pgm"));
            write_pgm16(&est_map, scale, &est_path)?;
            m.output(&format!("map_est_{stem}"), &est_path);
            let gt_path = output.join(format!("gt_{stem}.pgm"));
            write_pgm16(&gt_map, scale, &gt_path)?;
            m.output(&format!("map_gt_{stem}"), &gt_path);
        }
    }
    Ok(m)
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub factor: f64,
    pub dwell: f64,
    pub method: &'static str,
    pub mse: f64,
    pub psnr: f64,
    pub pnll: f64,
}

/// Per-factor scan seed, derived so each dwell gets an independent but
/// reproducible noise realization.
pub fn derive_scan_seed(seed: u64, factor: f64) -> u64 {
    Mix64::new(seed ^ factor.to_bits()).next_u64()
}

fn score(
    method: &'static str,
    factor: f64,
    dwell: f64,
    est: &RateVolume,
    reference: &CountVolume,
) -> Result<SweepRow> {
    let ev = evaluate(est, reference, &[])?;
    Ok(SweepRow {
        factor,
        dwell,
        method,
        mse: ev.mse,
        psnr: ev.psnr,
        pnll: ev.pnll,
    })
}

fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut text = String::from("dwell,method,mse,psnr,pnll\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.dwell, r.method, r.mse, r.psnr, r.pnll
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// The dwell-time experiment: treat `reference` as ground truth,
/// re-simulate scans at each speedup factor, restore them with every
/// method, and score everything against the reference. Writes the CSV
/// and per-run solver reports; returns the rows.
pub fn run_sweep(
    reference: &CountVolume,
    img: &RgbImage,
    output: &Path,
    settings: &Settings,
) -> Result<Vec<SweepRow>> {
    std::fs::create_dir_all(output)?;
    let (height, width, _) = reference.dims();
    if img.dims() != (height, width) {
        return Err(Error::ShapeMismatch(format!(
            "image is {:?}, scan grid is {:?}",
            img.dims(),
            (height, width)
        )));
    }
    let t_ref = reference.dwell_s;
    let gt = ground_truth_rates(reference);
    let mut rows = Vec::new();

    for &factor in &settings.factors {
        let dwell = speedup_dwell(t_ref, factor)?;
        let scan_seed = derive_scan_seed(settings.seed, factor);
        let x = simulate_scan(&gt, &SimConfig::new(dwell, scan_seed)?)?;

        let raw = ground_truth_rates(&x);
        rows.push(score("raw", factor, dwell, &raw, reference)?);

        let (_, _, mcr_est, mcr_report) = mcr_als(&x, &mcr_config(settings))?;
        write_json(&mcr_report, &output.join(format!("report_mcr-als_f{factor}.json")))?;
        rows.push(score("mcr-als", factor, dwell, &mcr_est, reference)?);

        let (d, a, report) = fit_solver(&x, img, settings)?;
        write_json(&report, &output.join(format!("report_ours_f{factor}.json")))?;
        let est = recover_rates(&d, &a, dwell, x.order())?;
        rows.push(score("ours", factor, dwell, &est, reference)?);
    }

    write_sweep_csv(&rows, &output.join("sweep.csv"))?;
    Ok(rows)
}

pub fn cmd_sweep(
    input: &Path,
    rgb: &Path,
    output: &Path,
    settings: &Settings,
) -> Result<RunManifest> {
    let reference = load_counts(input)?;
    let img = load_rgb(rgb)?;
    run_sweep(&reference, &img, output, settings)?;

    let mut m = RunManifest::new("sweep", settings);
    m.input("reference", input);
    m.input("rgb", rgb);
    m.output("csv", &output.join("sweep.csv"));
    for &factor in &settings.factors {
        for method in ["mcr-als", "ours"] {
            let name = format!("report_{method}_f{factor}");
            m.output(&name, &output.join(format!("{name}.json")));
        }
    }
    Ok(m)
}
