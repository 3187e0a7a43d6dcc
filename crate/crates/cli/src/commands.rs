//! Subcommand bodies.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::anyhow;
use curvefeat::container::{Payload, TensorRecord};
use curvefeat::curvelet::{fdct_forward, fdct_inverse, CurveletCoeffs, CurveletGeometry};
use curvefeat::metrics::{accuracy, auc, gates_report as build_report, group_items, ScoredItem};
use curvefeat::pgm::write_pgm;
use curvefeat::pipeline::{EnhancedStack, FeatureEnhancer, NUM_COLOURS, STACK_CHANNELS};
use curvefeat::regularizer::{L1Schedule, RegConfig};
use curvefeat::scale_masks::NUM_BANDS;
use curvefeat::train::checkpoint::{from_records, to_records, Checkpoint};
use curvefeat::train::{
    evaluate, make_synthetic, split_pairs, train as run_training, AdamConfig, Example, FafeModel, SyntheticConfig,
    SyntheticSample, TrainConfig, TrainState,
};
use curvefeat::wedge_gate::GateVector;
use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;

use crate::io::{
    fail, read_list, read_records, read_rgb, write_atomic, write_png, write_records, Class, CliResult, CoreContext,
};
use crate::{GeometryArgs, RegArgs, SyntheticArgs};

fn geometry(h: usize, w: usize, scales: usize, angles: usize) -> CliResult<Arc<CurveletGeometry>> {
    CurveletGeometry::new(h, w, scales, angles)
        .map(Arc::new)
        .core_as(Class::Geometry, || format!("geometry for a {h}x{w} image"))
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let records = read_records(path)?;
    from_records(&records).core_as(Class::Checkpoint, || format!("loading {}", path.display()))
}

/// Fails with the checkpoint class when the image does not fit the model.
fn check_fits(g: &CurveletGeometry, image: &Array3<f64>, what: &Path) -> CliResult<()> {
    let (_, h, w) = image.dim();
    if (h, w) != g.dims() {
        return Err(fail(
            Class::Checkpoint,
            anyhow!(
                "{} is {h}x{w} but the checkpoint expects {}x{}",
                what.display(),
                g.height(),
                g.width()
            ),
        ));
    }
    Ok(())
}

pub fn transform(input: &Path, args: &GeometryArgs, out: &Path) -> CliResult<()> {
    let rgb = read_rgb(input)?;
    let (_, h, w) = rgb.dim();
    let g = geometry(h, w, args.scales, args.angles)?;
    let coeffs = (0..NUM_COLOURS)
        .into_par_iter()
        .map(|c| fdct_forward(&rgb.index_axis(Axis(0), c).to_owned(), &g))
        .collect::<curvefeat::Result<Vec<_>>>()
        .core(|| "forward transform".into())?;
    let mut records = Vec::with_capacity(NUM_COLOURS * g.num_wedges());
    for (channel, c) in coeffs.iter().enumerate() {
        for (wedge, data) in g.wedges().iter().zip(c.wedges()) {
            let rec = TensorRecord::new(
                vec![data.nrows(), data.ncols()],
                Payload::C128(data.iter().copied().collect()),
            )
            .core(|| "building record".into())?
            .with("channel", channel)
            .with("wedge", wedge.index)
            .with("scale", wedge.scale)
            .with("angle", wedge.angle)
            .with("height", h)
            .with("width", w)
            .with("scales", g.num_scales())
            .with("angles", g.angles_at_scale2());
            records.push(rec);
        }
    }
    write_records(out, &records)?;
    println!("wedge scale angle rows cols");
    for wedge in g.wedges() {
        println!(
            "{} {} {} {} {}",
            wedge.index, wedge.scale, wedge.angle, wedge.tile.0, wedge.tile.1
        );
    }
    println!("{} wedges per channel, {} records", g.num_wedges(), records.len());
    Ok(())
}

pub fn reconstruct(input: &Path, out: &Path) -> CliResult<()> {
    let records = read_records(input)?;
    let bad = |msg: String| fail(Class::Io, anyhow!("{}: {msg}", input.display()));
    let first = records.first().ok_or_else(|| bad("no records".into()))?;
    let meta = |r: &TensorRecord, k: &str| {
        r.parse::<usize>(k)
            .core_as(Class::Io, || format!("{}", input.display()))
    };
    let g = geometry(
        meta(first, "height")?,
        meta(first, "width")?,
        meta(first, "scales")?,
        meta(first, "angles")?,
    )?;
    let mut channels: BTreeMap<usize, Vec<Option<Array2<_>>>> = BTreeMap::new();
    for r in &records {
        let (channel, wedge) = (meta(r, "channel")?, meta(r, "wedge")?);
        let Payload::C128(values) = &r.payload else {
            return Err(bad(format!("channel {channel} wedge {wedge} is not complex f64")));
        };
        if r.dims.len() != 2 || wedge == 0 || wedge > g.num_wedges() {
            return Err(bad(format!(
                "channel {channel} wedge {wedge} does not fit the geometry"
            )));
        }
        let slot = channels.entry(channel).or_insert_with(|| vec![None; g.num_wedges()]);
        slot[wedge - 1] =
            Some(Array2::from_shape_vec((r.dims[0], r.dims[1]), values.clone()).map_err(|e| bad(e.to_string()))?);
    }
    let mut planes = Vec::with_capacity(channels.len());
    for (channel, wedges) in channels {
        let wedges = wedges
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad(format!("channel {channel} is missing wedges")))?;
        let coeffs = CurveletCoeffs::new(Arc::clone(&g), wedges).core_as(Class::Io, || format!("channel {channel}"))?;
        planes.push(fdct_inverse(&coeffs).core(|| "inverse transform".into())?);
    }
    let (h, w) = g.dims();
    let image = Array3::from_shape_fn((planes.len(), h, w), |(c, y, x)| planes[c][[y, x]]);
    if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        let rgb = match image.dim().0 {
            3 => image,
            1 => Array3::from_shape_fn((3, h, w), |(_, y, x)| image[[0, y, x]]),
            n => return Err(bad(format!("{n} channels cannot be written as PNG"))),
        };
        write_png(out, &rgb)
    } else {
        let rec = TensorRecord::new(vec![image.dim().0, h, w], Payload::F64(image.iter().copied().collect()))
            .core(|| "building record".into())?;
        write_records(out, &[rec])
    }
}

fn stack_record(stack: &EnhancedStack, g: &CurveletGeometry) -> CliResult<TensorRecord> {
    let (_, h, w) = stack.data.dim();
    let layout: Vec<String> = ["r", "g", "b"]
        .iter()
        .flat_map(|c| (1..=NUM_BANDS).map(move |b| format!("{c}.band{b}")))
        .collect();
    Ok(TensorRecord::new(
        vec![STACK_CHANNELS, h, w],
        Payload::F32(stack.data.iter().map(|&v| v as f32).collect()),
    )
    .core(|| "building record".into())?
    .with("channels", layout.join(" "))
    .with("scales", g.num_scales())
    .with("angles", g.angles_at_scale2()))
}

pub fn enhance(input: &Path, checkpoint: Option<&Path>, args: &GeometryArgs, out: &Path) -> CliResult<()> {
    let rgb = read_rgb(input)?;
    let (_, h, w) = rgb.dim();
    let enhancer = match checkpoint {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            check_fits(ck.model.geometry(), &rgb, input)?;
            ck.model.enhancer
        }
        None => FeatureEnhancer::neutral(geometry(h, w, args.scales, args.angles)?)
            .core_as(Class::Geometry, || "building the enhancer".into())?,
    };
    let stack = enhancer.enhance_image(&rgb).core(|| "enhancing".into())?;
    write_records(out, &[stack_record(&stack, &enhancer.geometry)?])
}

pub struct TrainArgs {
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub size: usize,
    pub scales: usize,
    pub angles: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub test_fraction: f64,
    pub data: SyntheticArgs,
    pub reg: RegArgs,
}

impl RegArgs {
    fn to_config(&self) -> RegConfig {
        RegConfig {
            l_min: self.l_min,
            l_max: self.l_max,
            lambda_max: self.lambda_max,
            lambda_cls: self.lambda_cls,
            schedule: match self.l1_constant {
                Some(v) => L1Schedule::Constant(v),
                None => L1Schedule::Stepped {
                    base: self.l1_base,
                    increment: self.l1_increment,
                    every: self.l1_every,
                },
            },
            m_total: self.m_total,
        }
    }
}

fn band_choice(band: usize) -> Option<usize> {
    (band != 0).then_some(band)
}

fn synthetic(n: usize, g: &CurveletGeometry, band: usize, factor: f64, seed: u64) -> CliResult<Vec<SyntheticSample>> {
    if g.height() != g.width() {
        return Err(fail(Class::Geometry, anyhow!("synthetic data needs a square geometry")));
    }
    let cfg = SyntheticConfig {
        size: g.height(),
        num_scales: g.num_scales(),
        angles: g.angles_at_scale2(),
        factor,
        doctored_band: band_choice(band),
        ..Default::default()
    };
    make_synthetic(n, &cfg, seed).core_as(Class::Geometry, || "generating synthetic data".into())
}

fn examples(samples: &[SyntheticSample]) -> Vec<Example<'_>> {
    samples
        .iter()
        .map(|s| Example {
            image: &s.image,
            label: s.label,
        })
        .collect()
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let reg = a.reg.to_config();
    reg.validate().map_err(|e| fail(Class::Other, anyhow!(e)))?;
    let (model, start) = match &a.checkpoint {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            (ck.model, ck.epoch)
        }
        None => {
            let g = geometry(a.size, a.size, a.scales, a.angles)?;
            let m = FafeModel::init(g, a.hidden, a.seed).core_as(Class::Geometry, || "building the model".into())?;
            (m, 0)
        }
    };
    let data_seed = a.data.data_seed.unwrap_or(a.seed);
    let data = synthetic(
        a.data.samples,
        model.geometry(),
        a.data.doctored_band,
        a.data.factor,
        data_seed,
    )?;
    let (train_set, test_set) = split_pairs(&data, a.test_fraction, data_seed);
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        adam: AdamConfig {
            lr: a.lr,
            weight_decay: a.weight_decay,
            ..Default::default()
        },
        reg: reg.clone(),
        hidden: a.hidden,
        seed: a.seed,
    };
    let mut state = TrainState::new(model, &cfg);
    state.epoch = start;
    let history = run_training(&mut state, &examples(&train_set), &cfg).core(|| "training".into())?;
    for r in &history.records {
        println!(
            "epoch {} loss {:.5} bce {:.5} acc {:.4} gates {:.2}/{:.2}/{:.2}",
            r.epoch, r.loss, r.bce, r.accuracy, r.gate_counts[0], r.gate_counts[1], r.gate_counts[2]
        );
    }
    std::fs::create_dir_all(&a.out).map_err(|e| fail(Class::Io, e))?;
    let ck = Checkpoint {
        model: state.model,
        reg,
        epoch: state.epoch,
    };
    write_records(
        &a.out.join("checkpoint.cft"),
        &to_records(&ck).core(|| "checkpoint".into())?,
    )?;
    write_atomic(&a.out.join("history.csv"), history.to_csv().as_bytes())?;
    if !test_set.is_empty() {
        let (items, report) = evaluate(&ck.model, &examples(&test_set)).core(|| "evaluating".into())?;
        println!("test Acc {}", accuracy(&items, 0.5).core(|| "accuracy".into())?);
        if let Ok(v) = auc(&items) {
            println!("test AUC {v}");
        }
        let means = report.band_means();
        for (b, m) in means.iter().enumerate() {
            if let Some(m) = m {
                println!("band {} mean activation {m:.4}", b + 1);
            }
        }
    }
    Ok(())
}

/// Where evaluation images come from.
pub enum Source {
    List(PathBuf),
    Synthetic {
        n: usize,
        band: usize,
        factor: f64,
        seed: u64,
    },
    Missing,
}

impl Source {
    pub fn pick(list: Option<PathBuf>, synthetic: Option<usize>, band: usize, factor: f64, seed: u64) -> Self {
        match (list, synthetic) {
            (Some(p), _) => Source::List(p),
            (None, Some(n)) => Source::Synthetic { n, band, factor, seed },
            (None, None) => Source::Missing,
        }
    }

    /// Images with labels and group ids. `fit` is the geometry a
    /// checkpoint demands, if any.
    fn load(
        &self,
        geometry_for_synthetic: &CurveletGeometry,
        fit: Option<&CurveletGeometry>,
    ) -> CliResult<Vec<(Array3<f64>, u8, String)>> {
        match self {
            Source::List(path) => {
                let entries = read_list(path)?;
                entries
                    .iter()
                    .enumerate()
                    .map(|(i, e)| {
                        let img = read_rgb(&e.path)?;
                        if let Some(g) = fit {
                            check_fits(g, &img, &e.path)?;
                        }
                        Ok((img, e.label, e.group.clone().unwrap_or_else(|| i.to_string())))
                    })
                    .collect()
            }
            Source::Synthetic { n, band, factor, seed } => {
                Ok(synthetic(*n, geometry_for_synthetic, *band, *factor, *seed)?
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| (s.image, s.label, i.to_string()))
                    .collect())
            }
            Source::Missing => Err(fail(Class::Other, anyhow!("give --list or --synthetic"))),
        }
    }
}

fn read_scores(path: &Path) -> CliResult<Vec<ScoredItem>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        fail(
            Class::Io,
            anyhow::Error::new(e).context(format!("reading {}", path.display())),
        )
    })?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 0 && line.starts_with("group")) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || {
            fail(
                Class::Io,
                anyhow!("{}:{}: expected group,score,label", path.display(), n + 1),
            )
        };
        if f.len() != 3 {
            return Err(bad());
        }
        let score: f64 = f[1].parse().map_err(|_| bad())?;
        let label: u8 = match f[2] {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad()),
        };
        out.push(ScoredItem::single(f[0], score, label));
    }
    Ok(out)
}

pub fn eval(
    checkpoint: Option<&Path>,
    scores: Option<&Path>,
    source: Source,
    threshold: f64,
    out: Option<&Path>,
) -> CliResult<()> {
    let items = match scores {
        Some(p) => read_scores(p)?,
        None => {
            let path = checkpoint.ok_or_else(|| fail(Class::Other, anyhow!("eval on images needs --checkpoint")))?;
            let ck = load_checkpoint(path)?;
            let g = ck.model.geometry();
            let data = source.load(g, Some(g))?;
            let probs = data
                .par_iter()
                .map(|(img, _, _)| ck.model.predict(img).map(|(p, _)| p))
                .collect::<curvefeat::Result<Vec<_>>>()
                .core(|| "scoring".into())?;
            data.iter()
                .zip(probs)
                .map(|((_, label, group), p)| ScoredItem::single(group.clone(), p, *label))
                .collect()
        }
    };
    let grouped = group_items(&items);
    let acc = accuracy(&grouped, threshold).core(|| "accuracy".into())?;
    let area = auc(&grouped).core(|| "AUC".into())?;
    println!("Acc {acc}");
    println!("AUC {area}");
    if let Some(p) = out {
        let mut s = String::from("group,score,label\n");
        for it in &grouped {
            let _ = writeln!(s, "{},{},{}", it.group, it.mean_score(), it.label);
        }
        write_atomic(p, s.as_bytes())?;
    }
    Ok(())
}

pub fn gates_report(
    checkpoint: Option<&Path>,
    source: Source,
    args: &GeometryArgs,
    size: usize,
    out: &Path,
) -> CliResult<()> {
    let (enhancer, fitted) = match checkpoint {
        Some(p) => (load_checkpoint(p)?.model.enhancer, true),
        None => {
            let side = match &source {
                Source::List(path) => {
                    let first = read_list(path)?
                        .into_iter()
                        .next()
                        .ok_or_else(|| fail(Class::Data, anyhow!("{} lists no images", path.display())))?;
                    let (_, h, w) = read_rgb(&first.path)?.dim();
                    (h, w)
                }
                _ => (size, size),
            };
            let g = geometry(side.0, side.1, args.scales, args.angles)?;
            (
                FeatureEnhancer::neutral(g).core_as(Class::Geometry, || "building the enhancer".into())?,
                false,
            )
        }
    };
    let g = Arc::clone(&enhancer.geometry);
    let data = source.load(&g, Some(&g))?;
    if data.is_empty() {
        return Err(fail(Class::Data, anyhow!("no images to report on")));
    }
    if !fitted {
        eprintln!("note: no checkpoint given; reporting the neutral gates");
    }
    let gates: Vec<Vec<GateVector>> = data
        .par_iter()
        .map(|(img, _, _)| enhancer.enhance_image_with_gates(img).map(|(_, gv)| gv))
        .collect::<curvefeat::Result<_>>()
        .core(|| "gating".into())?;
    let report = build_report(&g, &gates).core(|| "building the report".into())?;
    std::fs::create_dir_all(out).map_err(|e| fail(Class::Io, e))?;
    write_atomic(&out.join("gates.csv"), report.to_csv().as_bytes())?;
    let mut rows = String::from("sample,channel,wedge,scale,angle,score,gate\n");
    for (i, per_channel) in gates.iter().enumerate() {
        for (c, gv) in per_channel.iter().enumerate() {
            for (w, (s, gate)) in g.wedges().iter().zip(gv.scores.iter().zip(&gv.gates)) {
                let _ = writeln!(rows, "{i},{c},{},{},{},{s},{gate}", w.index, w.scale, w.angle);
            }
        }
    }
    write_atomic(&out.join("gate_samples.csv"), rows.as_bytes())?;
    let pgm = |values: &Array2<f64>, lo: f64, hi: f64| -> CliResult<Vec<u8>> {
        let mut buf = Vec::new();
        write_pgm(&mut buf, values, lo, hi).core(|| "encoding PGM".into())?;
        Ok(buf)
    };
    write_atomic(&out.join("gates.pgm"), &pgm(&report.heatmap, 0.0, 1.0)?)?;
    for band in 1..=NUM_BANDS {
        let mosaic = enhancer.masks.band_mosaic(&g, band);
        write_atomic(&out.join(format!("mask_band{band}.pgm")), &pgm(&mosaic, -1.0, 2.0)?)?;
    }
    println!("wedge scale angle band activation mean_score");
    for w in &report.wedges {
        println!(
            "{} {} {} {} {:.4} {:.4}",
            w.wedge, w.scale, w.angle, w.band, w.activation, w.mean_score
        );
    }
    Ok(())
}
