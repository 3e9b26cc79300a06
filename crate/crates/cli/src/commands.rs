use std::path::Path;

use pixdisc::certify::{global_certificate, CertificateReport, CertifyConfig, MNIST_TABLE};
use pixdisc::classifier::{prototype_fit, Classifier, ClassifierRegistry};
use pixdisc::codebook::{binning_codes, BuilderParams, BuilderRegistry};
use pixdisc::discretize::Discretizer;
use pixdisc::hardness::{fragmentation_report, neighborhood_map, value_histogram_csv};
use pixdisc::ideal_model::{validate_lemma1, IdealModelParams, Layout};
use pixdisc::ingest::{
    build_histogram, encode_cifar10, encode_idx, summarize, DatasetFormat, DatasetLocation, Split,
};
use pixdisc::{Codebook, DistanceMetric, Error, LabeledDataset, Result};
use serde_json::json;

use crate::args::*;
use crate::output::{write_atomic, write_csv, write_report, ManifestBuilder};

pub const EPS_NOTE: &str = "epsilon is caller-chosen; presets use the usual attack budgets \
                            (0.3 unit scale for MNIST, 8 in pixel units for CIFAR-10)";

fn format_of(f: Format) -> DatasetFormat {
    match f {
        Format::Idx => DatasetFormat::Idx,
        Format::Cifar10 => DatasetFormat::Cifar10,
    }
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    }
}

fn metric_of(m: MetricArg) -> DistanceMetric {
    match m {
        MetricArg::Linf => DistanceMetric::Linf,
        MetricArg::L1 => DistanceMetric::L1,
        MetricArg::L2 => DistanceMetric::L2,
    }
}

fn to_byte(scale: Scale, v: f64, flag: &str) -> Result<f64> {
    scale.to_byte(v).map_err(|e| Error::config(format!("--{flag}: {e}")))
}

/// Accepts either the directory holding the files or a root with the
/// conventional subdirectory names.
pub fn locate(args: &DatasetArgs, split: Split) -> DatasetLocation {
    let format = format_of(args.format);
    let direct = DatasetLocation {
        format,
        dir: args.data_dir.clone(),
        split,
    };
    if direct.files().iter().all(|f| f.exists()) {
        return direct;
    }
    let sub = match format {
        DatasetFormat::Idx => "mnist",
        DatasetFormat::Cifar10 => "cifar-10-batches-bin",
    };
    let nested = DatasetLocation {
        dir: args.data_dir.join(sub),
        ..direct.clone()
    };
    if nested.files().iter().all(|f| f.exists()) {
        nested
    } else {
        direct
    }
}

fn load_split(args: &DatasetArgs, split: Split, manifest: &mut ManifestBuilder) -> Result<LabeledDataset> {
    let loc = locate(args, split);
    log::info!("loading {} {} from {}", format_of(args.format).name(), split.name(), loc.dir.display());
    let mut ds = loc.load()?;
    if let Some(n) = args.limit {
        ds.images.truncate(n);
        ds.labels.truncate(n);
    }
    manifest.dataset(split.name(), ds.len(), ds.digest());
    Ok(ds)
}

fn load(args: &DatasetArgs, manifest: &mut ManifestBuilder) -> Result<LabeledDataset> {
    load_split(args, split_of(args.split), manifest)
}

fn dataset_channels(ds: &LabeledDataset, args: &DatasetArgs) -> usize {
    ds.channels().unwrap_or(match args.format {
        Format::Idx => 1,
        Format::Cifar10 => 3,
    })
}

fn load_codebook(codes: &CodesArgs, channels: usize) -> Result<Codebook> {
    match (&codes.codes, codes.binning_k) {
        (Some(path), _) => Codebook::load(path),
        (None, Some(k)) => binning_codes(k, channels),
        (None, None) => Err(Error::config("either --codes or --binning-k is required")),
    }
}

fn sidecar_write(path: &Path, manifest: &ManifestBuilder, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes)?;
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    let text = serde_json::to_string_pretty(&manifest.finish())? + "\n";
    write_atomic(&path.with_file_name(name), text.as_bytes())
}

pub fn ingest(args: &IngestArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("ingest", args);
    let mut ds = load(&args.dataset, &mut m)?;
    if let Some(t) = args.filter_dark {
        let before = ds.len();
        ds = ds.filter_dark(t);
        log::info!("dark filter kept {} of {before} images", ds.len());
    }
    let hist = build_histogram(&ds)?;
    let s = summarize(&ds, &hist);
    println!(
        "images={} shape={}x{}x{} classes={} pixels={} distinct={} sha256={}",
        s.images, s.height, s.width, s.channels, s.num_classes, s.pixels, s.distinct_values, s.digest
    );
    if let Some(out) = &args.out {
        write_report(out, &m.finish(), &s)?;
    }
    Ok(())
}

pub fn codebook_build(args: &BuildArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("codebook build", args);
    let (algo, k, r) = match args.preset {
        Some(CodebookPreset::Mnist) => (Algo::Density, 2, 153.0),
        Some(CodebookPreset::Cifar10) => (Algo::Density, 300, 16.0),
        None => {
            let algo = args.algo.ok_or_else(|| Error::config("--algo is required"))?;
            let k = args.k.ok_or_else(|| Error::config("--k is required"))?;
            let r = match (algo, args.r) {
                (Algo::Density, None) => return Err(Error::config("density codes need --r")),
                (_, r) => to_byte(args.r_scale, r.unwrap_or(0.0), "r")?,
            };
            (algo, k, r)
        }
    };
    m.seed(args.seed);
    let ds = load(&args.dataset, &mut m)?;
    let hist = build_histogram(&ds)?;
    let params = BuilderParams {
        k,
        r,
        metric: metric_of(args.metric),
        seed: args.seed,
        max_iterations: args.max_iterations,
        candidate_cap: args.candidate_cap,
    };
    let builder = BuilderRegistry::default().create(algo.name(), &params)?;
    let cb = builder.build(&hist)?;
    m.codebook(cb.digest());
    println!(
        "{} codes from {} (k={k}, r={r}){}",
        cb.len(),
        builder.name(),
        if cb.is_short() { ", histogram exhausted early" } else { "" }
    );
    sidecar_write(&args.out, &m, cb.to_json()?.as_bytes())
}

pub fn discretize(args: &DiscretizeArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("discretize", args);
    let ds = load(&args.dataset, &mut m)?;
    let cb = load_codebook(&args.codes, dataset_channels(&ds, &args.dataset))?;
    m.codebook(cb.digest());
    let out_ds = Discretizer::from_codebook(cb)?.discretize_dataset(&ds)?;
    let target = DatasetLocation {
        format: format_of(args.dataset.format),
        dir: args.out.clone(),
        split: split_of(args.dataset.split),
    };
    let files = target.files();
    match target.format {
        DatasetFormat::Idx => {
            let (images, labels) = encode_idx(&out_ds)?;
            write_atomic(&files[0], &images)?;
            write_atomic(&files[1], &labels)?;
        }
        DatasetFormat::Cifar10 => {
            let per_file = out_ds.len().div_ceil(files.len()).max(1);
            for (i, path) in files.iter().enumerate() {
                let lo = (i * per_file).min(out_ds.len());
                let hi = ((i + 1) * per_file).min(out_ds.len());
                let part = LabeledDataset::new(
                    out_ds.images[lo..hi].to_vec(),
                    out_ds.labels[lo..hi].to_vec(),
                    out_ds.num_classes,
                )?;
                write_atomic(path, &encode_cifar10(&part)?)?;
            }
        }
    }
    let text = serde_json::to_string_pretty(&m.finish())? + "\n";
    write_atomic(&args.out.join("manifest.json"), text.as_bytes())?;
    println!("wrote {} discretized images to {}", out_ds.len(), args.out.display());
    Ok(())
}

pub fn hardness_cdf(args: &CdfArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("hardness cdf", args);
    let eps = to_byte(args.eps.eps_scale, args.eps.eps, "eps")?;
    let ds = load(&args.dataset, &mut m)?;
    let cb = load_codebook(&args.codes, dataset_channels(&ds, &args.dataset))?;
    m.codebook(cb.digest());
    let d = Discretizer::from_codebook(cb)?;
    let mut rep = fragmentation_report(&ds, &d, eps)?;
    rep.eps_note = Some(EPS_NOTE.to_string());
    println!(
        "median measure {:.6} (median sum log2|C_i| = {:.3}) over {} images, k={}, eps={eps}",
        rep.median_measure(),
        rep.median_log2_product(),
        rep.measures.len(),
        rep.k
    );
    let manifest = m.finish();
    write_csv(&args.out, &manifest, &rep.cdf_csv())?;
    if let Some(path) = &args.report {
        let doc = json!({
            "k": rep.k,
            "eps": rep.eps,
            "codebook_digest": rep.codebook_digest,
            "median_measure": rep.median_measure(),
            "median_log2_product": rep.median_log2_product(),
            "eps_note": rep.eps_note,
            "measures": rep.measures,
            "log2_products": rep.log2_products,
        });
        write_report(path, &manifest, &doc)?;
    }
    Ok(())
}

pub fn hardness_neighborhoods(args: &NeighborhoodArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("hardness neighborhoods", args);
    let eps = to_byte(args.eps.eps_scale, args.eps.eps, "eps")?;
    let ds = load(&args.dataset, &mut m)?;
    let hist = build_histogram(&ds)?;
    let map = neighborhood_map(&hist, eps);
    let at = map
        .argmax
        .map(|p| format!("{:?}", p.values()))
        .unwrap_or_else(|| "-".into());
    println!("max_neighborhood={} at {at} (eps={eps}, {} distinct values)", map.max, map.entries.len());
    let manifest = m.finish();
    write_csv(&args.out, &manifest, &map.to_csv())?;
    if let Some(path) = &args.summary {
        let doc = json!({
            "eps": eps,
            "max": map.max,
            "argmax": map.argmax.map(|p| p.values().to_vec()),
            "distinct_values": map.entries.len(),
            "total_pixels": hist.total_count(),
        });
        write_report(path, &manifest, &doc)?;
    }
    Ok(())
}

pub fn hardness_histogram(args: &HistogramArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("hardness histogram", args);
    let ds = load(&args.dataset, &mut m)?;
    let hist = build_histogram(&ds)?;
    write_csv(&args.out, &m.finish(), &value_histogram_csv(&hist))
}

fn load_classifier(
    args: &CertifyArgs,
    cb: &Codebook,
    m: &mut ManifestBuilder,
) -> Result<Box<dyn Classifier>> {
    if let Some(path) = &args.model {
        return ClassifierRegistry::default().load(path);
    }
    let train = load_split(&args.dataset, Split::Train, m)?;
    let clf = prototype_fit(&train, &Discretizer::from_codebook(cb.clone())?)?;
    if let Some(path) = &args.save_model {
        let text = serde_json::to_string(&clf.to_json())? + "\n";
        write_atomic(path, text.as_bytes())?;
    }
    Ok(Box::new(clf))
}

pub fn certify(args: &CertifyArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("certify", args);
    let cb = Codebook::load(&args.codes)?;
    m.codebook(cb.digest());
    let clf = load_classifier(args, &cb, &mut m)?;
    let ds = load(&args.dataset, &mut m)?;
    if let Some(img) = ds.images.first() {
        if img.shape() != clf.input_shape() {
            return Err(Error::structural(format!(
                "classifier expects {:?} images, dataset has {:?}",
                clf.input_shape(),
                img.shape()
            )));
        }
    }
    let rows: Vec<(f64, u32)> = match args.preset {
        Some(CertifyPreset::MnistTable) => MNIST_TABLE.iter().map(|&(e, b)| (e * 255.0, b)).collect(),
        None => {
            let eps = args.eps.ok_or_else(|| Error::config("--eps is required"))?;
            vec![(to_byte(args.eps_scale, eps, "eps")?, args.budget_bits)]
        }
    };
    let mut reports: Vec<CertificateReport> = Vec::with_capacity(rows.len());
    for (eps, b) in rows {
        let mut cfg = CertifyConfig::new(eps, b, args.delta)?;
        cfg.keep_verdicts = args.verdicts;
        let rep = global_certificate(&ds, &cb, clf.as_ref(), &cfg)?;
        println!(
            "eps={:.4} b={} unable={:.4} success={:.4} fail={:.4} s_hat={:.4} s_hat_star={:.4}",
            rep.epsilon, rep.b, rep.unable, rep.success, rep.fail, rep.s_hat, rep.s_hat_star
        );
        reports.push(rep);
    }
    let manifest = m.finish();
    if args.preset.is_some() {
        write_report(&args.out, &manifest, &json!({ "rows": reports }))
    } else {
        write_report(&args.out, &manifest, &reports[0])
    }
}

pub fn idealmodel_validate(args: &ValidateArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("idealmodel validate", args);
    m.seed(args.seed);
    let params = IdealModelParams {
        channels: args.channels,
        d: args.d,
        num_images: args.images,
        seed: args.seed,
        layout: match args.layout {
            LayoutArg::Diagonal => Layout::Diagonal,
            LayoutArg::Random => Layout::Random,
        },
        delta: args.delta,
        ..IdealModelParams::new(args.k, args.gamma, args.sigma)
    };
    let rep = validate_lemma1(&params, args.trials)?;
    println!(
        "recovery {}/{} = {:.4} (nu={:.4}, r={:.4}, premise {})",
        rep.recovered,
        rep.trials,
        rep.recovery_rate,
        rep.nu,
        rep.r,
        if rep.premise_holds { "holds" } else { "violated" }
    );
    for f in rep.failures.iter().take(5) {
        println!("  trial {} failed: {}", f.trial, f.reason);
    }
    write_report(&args.out, &m.finish(), &rep)
}
