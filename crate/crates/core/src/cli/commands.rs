use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Command, Io, Mode};
use crate::corpus::{
    patches_from_tensor, patches_to_tensor, read_annotations, read_embeddings, read_global, read_ppm, write_ppm,
    Image, Manifest, ManifestEntry, ObjectPatch, SceneAnnotation, Split,
};
use crate::error::{io_at, Error, Result};
use crate::eval::{contact_sheet, run_trials, EvalCorpus, MetricsReport, SubsetFamily, TrialSpec};
use crate::segment::{mask_visualization, mean_foreground_rgb, read_mask, remap_and_extract, write_mask, ForegroundMask};
use crate::similarity::{read_joint, write_joint, CandidateIndex, JointLayout, JointRepresentation};
use crate::synth::{generate, write_corpus, SplitSizes, SynthConfig};
use crate::vae::{
    load_checkpoint, save_checkpoint, trace_csv, train, Architecture, TrainConfig, VaeModel, DEFAULT_HIDDEN,
};
use crate::{corpus, pipeline};

/// Fixed artifact layout below the output directory.
pub mod layout {
    pub use crate::synth::layout::*;
    pub const MASKS: &str = "masks";
    pub const MASK_VIS: &str = "masks/vis";
    pub const SEGMENT_SUMMARY: &str = "masks/summary.json";
    pub const PATCHES: &str = "patches";
    pub const MASKED: &str = "masked";
    pub const CHECKPOINT: &str = "vae/model.oavm";
    pub const LOSS_TRACE: &str = "vae/loss.csv";
    pub const REPS: &str = "reps";
    pub const REPS_META: &str = "meta.json";
    pub const RANKINGS: &str = "rankings";
    pub const REPORTS: &str = "reports";
    pub const METRICS_JSON: &str = "metrics.json";
    pub const METRICS_CSV: &str = "metrics.csv";
    pub const SHEETS: &str = "contact_sheets";
    pub const SUMMARY_CSV: &str = "reports/summary.csv";
}

pub(super) fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenSynthetic {
            seed,
            n,
            out,
            train,
            queries,
            grid,
            patch_px,
            objects,
            n_y,
            marker,
            noise,
            colour_weight,
            config,
        } => {
            let cfg = match config {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(io_at(&p))?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => {
                    let (grid_h, grid_w) = parse_pair(&grid, 'x')?;
                    let (min_objects, max_objects) = parse_pair(&objects, '-')?;
                    SynthConfig {
                        seed,
                        n_images: n,
                        grid_h,
                        grid_w,
                        patch_px,
                        min_objects,
                        max_objects,
                        n_y,
                        background_marker: marker,
                        noise_sigma: noise,
                        colour_weight,
                        ..SynthConfig::default()
                    }
                }
            };
            gen_synthetic(&cfg, train, queries, &out)
        }
        Command::Import {
            io,
            images,
            embeddings,
            globals,
            annotations,
            split,
        } => import(&io, &images, &embeddings, globals.as_deref(), annotations.as_deref(), split),
        Command::Segment { io, t, no_refine } => segment(&io, t, !no_refine),
        Command::ExtractPatches { io } => extract_patches(&io),
        Command::MaskApply { io } => mask_apply(&io),
        Command::TrainVae {
            io,
            lr,
            beta,
            latent,
            epochs,
            batch_size,
            seed,
            max_patches,
        } => {
            let cfg = TrainConfig {
                learning_rate: lr,
                batch_size,
                epochs,
                seed,
                ..TrainConfig::default()
            };
            train_vae(&io, &cfg, beta, latent, max_patches)
        }
        Command::Embed { io, mode, checkpoint } => embed(&io, mode, checkpoint),
        Command::Retrieve { io, mode, queries, top } => retrieve(&io, mode, &queries, top),
        Command::Evaluate {
            io,
            mode,
            k,
            trials,
            queries,
            candidates,
            seed,
            families,
            sheets,
        } => {
            let spec = TrialSpec {
                n_trials: trials,
                queries_per_trial: queries,
                candidate_pool_size: candidates,
                k,
                seed,
            };
            evaluate(&io, mode, &spec, &families, sheets)
        }
        Command::Report { out } => report(&out),
    }
}

fn parse_pair(s: &str, sep: char) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("expected two integers separated by {sep:?}, got {s:?}"));
    let (a, b) = s.split_once(sep).ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(io_at(p))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    if let Some(parent) = p.parent() {
        create_dir(parent)?;
    }
    fs::write(p, text).map_err(io_at(p))
}

fn load_manifest(io: &Io) -> Result<Manifest> {
    let m = Manifest::load(&io.manifest_path())?;
    if m.is_empty() {
        return Err(Error::Schema(format!("empty manifest: {}", io.manifest_path().display())));
    }
    Ok(m)
}

fn mask_path(out: &Path, id: &str) -> PathBuf {
    out.join(layout::MASKS).join(format!("{id}.oamk"))
}

fn load_image(m: &Manifest, e: &ManifestEntry) -> Result<Image> {
    let mut img = read_ppm(&m.resolve(&e.image_path))?;
    img.id = e.image_id.clone();
    Ok(img)
}

fn load_mask(out: &Path, id: &str) -> Result<ForegroundMask> {
    let m = read_mask(&mask_path(out, id))?;
    if m.image_id != id {
        return Err(Error::Schema(format!("mask file for {id} names {}", m.image_id)));
    }
    Ok(m)
}

fn gen_synthetic(cfg: &SynthConfig, train: Option<usize>, queries: Option<usize>, out: &Path) -> Result<()> {
    cfg.validate()?;
    let mut splits = SplitSizes::for_total(cfg.n_images);
    if let Some(t) = train {
        splits.train = t;
    }
    if let Some(q) = queries {
        splits.queries = q;
    }
    if splits.train + splits.queries > cfg.n_images {
        return Err(Error::Config(format!(
            "{} training and {} query images exceed the corpus of {}",
            splits.train, splits.queries, cfg.n_images
        )));
    }
    splits.candidates = cfg.n_images - splits.train - splits.queries;
    let scenes = generate(cfg)?;
    create_dir(out)?;
    let path = write_corpus(cfg, &scenes, splits, out)?;
    info!(
        "wrote {} scenes ({} train, {} query, {} candidates) to {}",
        scenes.len(),
        splits.train,
        splits.queries,
        splits.candidates,
        path.display()
    );
    Ok(())
}

fn list_stems(dir: &Path, ext: &str) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_at(dir))? {
        let p = entry.map_err(io_at(dir))?.path();
        if p.extension().is_some_and(|e| e == ext) {
            if let Some(stem) = p.file_stem() {
                out.insert(stem.to_string_lossy().into_owned(), p);
            }
        }
    }
    Ok(out)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).map_err(io_at(p))
}

fn import(
    io: &Io,
    images: &Path,
    embeddings: &Path,
    globals: Option<&Path>,
    annotations: Option<&Path>,
    split: Split,
) -> Result<()> {
    let manifest_path = io.manifest_path();
    let mut entries = if manifest_path.exists() {
        Manifest::load(&manifest_path)?.entries
    } else {
        Vec::new()
    };
    let anns: BTreeMap<String, SceneAnnotation> = match annotations {
        Some(p) => read_annotations(p)?
            .into_iter()
            .map(|a| (a.image_id.clone(), a))
            .collect(),
        None => BTreeMap::new(),
    };
    let imgs = list_stems(images, "ppm")?;
    let embs = list_stems(embeddings, "oadf")?;
    let globs = globals.map(|g| list_stems(g, "oadf")).transpose()?;
    let mut added = 0;
    for (id, emb) in &embs {
        let Some(img) = imgs.get(id) else {
            warn!("{id}: embeddings without an image; skipped");
            continue;
        };
        // validate before recording
        let set = read_embeddings(emb)?;
        let image = read_ppm(img)?;
        let probe = ForegroundMask::new(id.clone(), set.grid_h, set.grid_w, vec![false; set.patches()], crate::segment::MaskPass::First)?;
        mean_foreground_rgb(&image, &probe)?;
        let global_feature_path = match &globs {
            Some(g) => {
                let p = g
                    .get(id)
                    .ok_or_else(|| Error::Schema(format!("{id}: no global feature in the globals directory")))?;
                read_global(p)?;
                Some(absolute(p)?)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            image_id: id.clone(),
            split,
            image_path: absolute(img)?,
            embedding_path: absolute(emb)?,
            global_feature_path,
            annotation: anns.get(id).cloned(),
        });
        added += 1;
    }
    create_dir(&io.out)?;
    let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    Manifest::new(root, entries)?.save(&manifest_path)?;
    info!("imported {added} images into {}", manifest_path.display());
    Ok(())
}

#[derive(Serialize)]
struct BatchSummary {
    images: Vec<String>,
    refined: bool,
}

fn segment(io: &Io, t: usize, refine: bool) -> Result<()> {
    if t < 2 {
        return Err(Error::Config("batch size t must be at least 2".into()));
    }
    let m = load_manifest(io)?;
    let sets = m
        .entries
        .par_iter()
        .map(|e| {
            let mut s = read_embeddings(&m.resolve(&e.embedding_path))?;
            s.image_id = e.image_id.clone();
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let segs = pipeline::segment_all(&sets, t, refine)?;
    let masks = pipeline::best_masks(&segs);
    create_dir(&io.out.join(layout::MASK_VIS))?;
    masks.par_iter().try_for_each(|mask| {
        write_mask(mask, &mask_path(&io.out, &mask.image_id))?;
        let vis = mask_visualization(mask, 8);
        write_ppm(&vis, &io.out.join(layout::MASK_VIS).join(format!("{}.ppm", mask.image_id)))
    })?;
    let summary: Vec<BatchSummary> = segs
        .iter()
        .map(|s| BatchSummary {
            images: s.first.iter().map(|m| m.image_id.clone()).collect(),
            refined: s.refined.is_some(),
        })
        .collect();
    write_text(&io.out.join(layout::SEGMENT_SUMMARY), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    info!("segmented {} images in {} batches", masks.len(), segs.len());
    Ok(())
}

fn extract_patches(io: &Io) -> Result<()> {
    let m = load_manifest(io)?;
    let dir = io.out.join(layout::PATCHES);
    create_dir(&dir)?;
    m.entries.par_iter().try_for_each(|e| {
        let mask = load_mask(&io.out, &e.image_id)?;
        let (_, patches) = remap_and_extract(&load_image(&m, e)?, &mask)?;
        if patches.is_empty() {
            warn!("{}: empty foreground, no patches written", e.image_id);
            return Ok(());
        }
        corpus::oadf::write(&patches_to_tensor(&patches), &dir.join(format!("{}.oadf", e.image_id)))
    })
}

fn mask_apply(io: &Io) -> Result<()> {
    let m = load_manifest(io)?;
    let dir = io.out.join(layout::MASKED);
    create_dir(&dir)?;
    m.entries.par_iter().try_for_each(|e| {
        let mask = load_mask(&io.out, &e.image_id)?;
        let (masked, _) = remap_and_extract(&load_image(&m, e)?, &mask)?;
        write_ppm(&masked, &dir.join(format!("{}.ppm", e.image_id)))
    })
}

/// Patches of one image, or `None` when it has no foreground.
fn load_patches(out: &Path, id: &str) -> Result<Option<Vec<ObjectPatch>>> {
    let mask = load_mask(out, id)?;
    if mask.count() == 0 {
        return Ok(None);
    }
    let path = out.join(layout::PATCHES).join(format!("{id}.oadf"));
    let indices: Vec<usize> = mask.foreground().collect();
    Ok(Some(patches_from_tensor(id, &indices, corpus::oadf::read(&path)?)?))
}

fn train_vae(io: &Io, cfg: &TrainConfig, beta: f64, latent: usize, max_patches: usize) -> Result<()> {
    cfg.validate()?;
    let m = load_manifest(io)?;
    let per_image = m
        .split(Split::Train)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|e| load_patches(&io.out, &e.image_id))
        .collect::<Result<Vec<_>>>()?;
    let mut patches: Vec<ObjectPatch> = per_image.into_iter().flatten().flatten().collect();
    if max_patches > 0 {
        patches.truncate(max_patches);
    }
    if patches.is_empty() {
        return Err(Error::Config("no object patches in the training split".into()));
    }
    let arch = Architecture {
        latent,
        hidden: DEFAULT_HIDDEN,
        ..Architecture::default()
    };
    let mut model = VaeModel::new(arch, beta, cfg.seed)?;
    let refs: Vec<&[f32]> = patches.iter().map(ObjectPatch::pixels).collect();
    info!("training on {} patches", refs.len());
    let trace = train(&mut model, &refs, cfg, |e, _| {
        info!("epoch {} total {:.4} recon {:.4} kl {:.4}", e.epoch, e.total, e.recon, e.kl)
    })?;
    let ckpt = io.out.join(layout::CHECKPOINT);
    create_dir(ckpt.parent().expect("nested path"))?;
    save_checkpoint(&model, &ckpt)?;
    write_text(&io.out.join(layout::LOSS_TRACE), &trace_csv(&trace))
}

#[derive(Debug, Serialize, Deserialize)]
struct RepsMeta {
    mode: String,
    n_g: usize,
    n_z: usize,
    images: Vec<String>,
}

fn reps_dir(out: &Path, mode: Mode) -> PathBuf {
    out.join(layout::REPS).join(mode.name())
}

fn embed(io: &Io, mode: Mode, checkpoint: Option<PathBuf>) -> Result<()> {
    let m = load_manifest(io)?;
    let model = match mode {
        Mode::Global => None,
        _ => Some(load_checkpoint(&checkpoint.unwrap_or_else(|| io.out.join(layout::CHECKPOINT)))?),
    };
    let entries: Vec<&ManifestEntry> = m.entries.iter().filter(|e| e.split != Split::Train).collect();
    let built = entries
        .par_iter()
        .map(|e| -> Result<Option<JointRepresentation>> {
            let global = match (&e.global_feature_path, mode) {
                (Some(p), _) => {
                    let mut g = read_global(&m.resolve(p))?;
                    g.image_id = e.image_id.clone();
                    Some(g)
                }
                (None, Mode::Latent) => None,
                (None, _) => return Err(Error::Schema(format!("{} has no global feature", e.image_id))),
            };
            if mode == Mode::Global {
                return JointRepresentation::global_only(&global.expect("checked")).map(Some);
            }
            let Some(patches) = load_patches(&io.out, &e.image_id)? else {
                warn!("{}: no foreground; excluded from retrieval", e.image_id);
                return Ok(None);
            };
            let refs: Vec<&[f32]> = patches.iter().map(ObjectPatch::pixels).collect();
            let latents = model.as_ref().expect("loaded").encode_means(&refs)?;
            match mode {
                Mode::Joint => crate::similarity::build_joint(&global.expect("checked"), &latents).map(Some),
                _ => {
                    let n_z = latents[0].len();
                    JointRepresentation::new(e.image_id.clone(), 0, n_z, latents.concat()).map(Some)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let reps: Vec<JointRepresentation> = built.into_iter().flatten().collect();
    let Some(first) = reps.first() else {
        return Err(Error::Schema("no image produced a representation".into()));
    };
    let layout_ = first.layout();
    let dir = reps_dir(&io.out, mode);
    create_dir(&dir)?;
    reps.par_iter()
        .try_for_each(|r| write_joint(r, &dir.join(format!("{}.oadf", r.image_id))))?;
    let meta = RepsMeta {
        mode: mode.name().into(),
        n_g: layout_.n_g,
        n_z: layout_.n_z,
        images: reps.iter().map(|r| r.image_id.clone()).collect(),
    };
    write_text(&dir.join(layout::REPS_META), &(serde_json::to_string_pretty(&meta)? + "\n"))
}

fn load_reps(out: &Path, mode: Mode) -> Result<BTreeMap<String, JointRepresentation>> {
    let dir = reps_dir(out, mode);
    let meta_path = dir.join(layout::REPS_META);
    let text = fs::read_to_string(&meta_path).map_err(io_at(&meta_path))?;
    let meta: RepsMeta = serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", meta_path.display())))?;
    let lay = JointLayout {
        n_g: meta.n_g,
        n_z: meta.n_z,
    };
    meta.images
        .par_iter()
        .map(|id| Ok((id.clone(), read_joint(&dir.join(format!("{id}.oadf")), lay)?)))
        .collect()
}

fn retrieve(io: &Io, mode: Mode, queries: &[String], top: usize) -> Result<()> {
    let m = load_manifest(io)?;
    let reps = load_reps(&io.out, mode)?;
    let mut cands: Vec<JointRepresentation> = m
        .split(Split::Candidates)
        .filter_map(|e| reps.get(&e.image_id).cloned())
        .collect();
    cands.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let index = CandidateIndex::new(&cands)?;
    let qids: Vec<String> = if queries.is_empty() {
        m.split(Split::ValidationQuery).map(|e| e.image_id.clone()).collect()
    } else {
        queries.to_vec()
    };
    let dir = io.out.join(layout::RANKINGS).join(mode.name());
    create_dir(&dir)?;
    qids.par_iter().try_for_each(|q| {
        let Some(rep) = reps.get(q) else {
            warn!("{q}: no representation; skipped");
            return Ok(());
        };
        let mut ranked = index.rank(rep)?;
        ranked.entries.retain(|e| &e.candidate_id != q);
        if top > 0 {
            ranked.entries.truncate(top);
        }
        write_text(&dir.join(format!("{q}.csv")), &ranked.to_csv())
    })
}

fn evaluate(io: &Io, mode: Mode, spec: &TrialSpec, families: &[String], sheets: usize) -> Result<()> {
    spec.validate()?;
    let m = load_manifest(io)?;
    let corpus = EvalCorpus::from_manifest(&m)?;
    let reps = load_reps(&io.out, mode)?;
    let fams: Vec<SubsetFamily> = if families.is_empty() {
        SubsetFamily::defaults(&corpus.schema())
    } else {
        families
            .iter()
            .map(|f| SubsetFamily::parse(f).map_err(|e| Error::Config(e.to_string())))
            .collect::<Result<_>>()?
    };

    // mean foreground colour, when masks are available
    let ids: Vec<&ManifestEntry> = m.entries.iter().filter(|e| e.split != Split::Train).collect();
    let have_masks = ids.iter().all(|e| mask_path(&io.out, &e.image_id).exists());
    let colours = if have_masks {
        let pairs = ids
            .par_iter()
            .map(|e| {
                let mask = load_mask(&io.out, &e.image_id)?;
                Ok(mean_foreground_rgb(&load_image(&m, e)?, &mask)?.map(|c| (e.image_id.clone(), c)))
            })
            .collect::<Result<Vec<_>>>()?;
        Some(pairs.into_iter().flatten().collect::<BTreeMap<_, _>>())
    } else {
        None
    };

    let run = run_trials(&corpus, &reps, spec, &fams, colours.as_ref())?;
    let dir = io.out.join(layout::REPORTS).join(mode.name());
    write_text(&dir.join(layout::METRICS_JSON), &run.report.to_json()?)?;
    write_text(&dir.join(layout::METRICS_CSV), &run.report.to_csv())?;

    let sheet_dir = dir.join(layout::SHEETS);
    create_dir(&sheet_dir)?;
    if let Some(first) = run.rankings.first() {
        for ranked in first.iter().take(sheets) {
            let load = |id: &str| -> Result<Image> {
                let e = m.get(id).ok_or_else(|| Error::Schema(format!("{id} not in manifest")))?;
                load_image(&m, e)
            };
            let query = load(&ranked.query_id)?;
            let retrieved = ranked.ids().map(load).collect::<Result<Vec<_>>>()?;
            let sheet = contact_sheet(&ranked.query_id, &query, &retrieved, 64)?;
            write_ppm(&sheet, &sheet_dir.join(format!("trial0_{}.ppm", ranked.query_id)))?;
        }
    }
    for r in &run.report.families {
        info!(
            "{:<12} top-k {:.3} ± {:.3}  weighted {:.3} ± {:.3}  error {:.3} ± {:.3}",
            r.name,
            r.top_k_precision.mean,
            r.top_k_precision.std,
            r.weighted_precision.mean,
            r.weighted_precision.std,
            r.error_rate.mean,
            r.error_rate.std
        );
    }
    Ok(())
}

fn report(out: &Path) -> Result<()> {
    let dir = out.join(layout::REPORTS);
    let mut modes: Vec<(String, MetricsReport)> = Vec::new();
    for entry in fs::read_dir(&dir).map_err(io_at(&dir))? {
        let p = entry.map_err(io_at(&dir))?.path().join(layout::METRICS_JSON);
        if p.is_file() {
            let text = fs::read_to_string(&p).map_err(io_at(&p))?;
            let r: MetricsReport =
                serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", p.display())))?;
            let name = p
                .parent()
                .and_then(Path::file_name)
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            modes.push((name, r));
        }
    }
    if modes.is_empty() {
        return Err(Error::Schema(format!("no metrics reports under {}", dir.display())));
    }
    modes.sort_by(|a, b| a.0.cmp(&b.0));
    let mut csv = String::from("mode,family,top_k_precision_mean,top_k_precision_std,weighted_precision_mean,weighted_precision_std,error_rate_mean,error_rate_std\n");
    let mut table = format!("{:<10} {:<12} {:>16} {:>16} {:>16}\n", "mode", "family", "top-k", "weighted", "error");
    for (name, r) in &modes {
        for f in &r.families {
            let _ = writeln!(
                csv,
                "{name},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
                f.name,
                f.top_k_precision.mean,
                f.top_k_precision.std,
                f.weighted_precision.mean,
                f.weighted_precision.std,
                f.error_rate.mean,
                f.error_rate.std
            );
            let pm = |v: &crate::eval::MeanStd| format!("{:.1} ± {:.1}", 100.0 * v.mean, 100.0 * v.std);
            let _ = writeln!(
                table,
                "{name:<10} {:<12} {:>16} {:>16} {:>16}",
                f.name,
                pm(&f.top_k_precision),
                pm(&f.weighted_precision),
                pm(&f.error_rate)
            );
        }
    }
    write_text(&out.join(layout::SUMMARY_CSV), &csv)?;
    print!("{table}");
    Ok(())
}
