//! Procedural scenes with ground truth: images, annotations, masks and
//! synthetic backbone embeddings with controllable attribute salience.
//!
//! Embedding coordinates are laid out in disjoint blocks
//! `[shape | size | material | colour | background marker | filler]`;
//! every coordinate also carries Gaussian noise.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    write_annotations, write_embeddings, write_global, write_ppm, Attribute, GlobalFeature, Image, Manifest,
    ManifestEntry, PatchEmbeddingSet, SceneAnnotation, SceneObject, Split,
};
use crate::error::{io_at, Error, Result};
use crate::segment::{write_mask, ForegroundMask, MaskPass};

pub const SHAPES: [&str; 3] = ["cube", "sphere", "cylinder"];
pub const SIZES: [&str; 2] = ["small", "large"];
pub const MATERIALS: [&str; 2] = ["rubber", "metal"];
pub const COLOURS: [(&str, [u8; 3]); 8] = [
    ("gray", [87, 87, 87]),
    ("red", [173, 35, 35]),
    ("blue", [42, 75, 215]),
    ("green", [29, 105, 20]),
    ("brown", [129, 74, 25]),
    ("purple", [129, 38, 192]),
    ("cyan", [41, 208, 208]),
    ("yellow", [255, 238, 51]),
];

const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_images: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Side of one patch cell in pixels.
    pub patch_px: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub n_shapes: usize,
    pub n_sizes: usize,
    pub n_materials: usize,
    pub n_colours: usize,
    /// Side, in patches, of the square block occupied by each size.
    pub size_blocks: Vec<usize>,
    pub n_y: usize,
    pub shape_weight: f64,
    pub size_weight: f64,
    pub material_weight: f64,
    pub colour_weight: f64,
    pub background_marker: f64,
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_images: 100,
            grid_h: 8,
            grid_w: 8,
            patch_px: 16,
            min_objects: 3,
            max_objects: 10,
            n_shapes: 3,
            n_sizes: 2,
            n_materials: 2,
            n_colours: 8,
            size_blocks: vec![1, 2],
            n_y: 48,
            shape_weight: 1.0,
            size_weight: 1.0,
            material_weight: 1.0,
            colour_weight: 0.01,
            background_marker: 4.0,
            noise_sigma: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        let vocab = [
            ("shapes", self.n_shapes, SHAPES.len()),
            ("sizes", self.n_sizes, SIZES.len()),
            ("materials", self.n_materials, MATERIALS.len()),
            ("colours", self.n_colours, COLOURS.len()),
        ];
        for (name, n, max) in vocab {
            if n == 0 || n > max {
                return cfg(format!("{name} vocabulary must be between 1 and {max}, got {n}"));
            }
        }
        if self.size_blocks.len() < self.n_sizes || self.size_blocks[..self.n_sizes].contains(&0) {
            return cfg(format!("need a positive block side for each of the {} sizes", self.n_sizes));
        }
        if self.grid_h == 0 || self.grid_w == 0 || self.patch_px == 0 {
            return cfg("grid and patch size must be positive".into());
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return cfg(format!("bad object range {}..={}", self.min_objects, self.max_objects));
        }
        let weights = [
            self.shape_weight,
            self.size_weight,
            self.material_weight,
            self.colour_weight,
            self.background_marker,
            self.noise_sigma,
        ];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return cfg("weights and noise must be finite and nonnegative".into());
        }
        if self.n_y < self.marker_index() + 1 {
            return cfg(format!("n_y = {} is too small for the attribute blocks", self.n_y));
        }
        let largest = self.size_blocks[..self.n_sizes].iter().max().copied().unwrap_or(1);
        if largest > self.grid_h || largest > self.grid_w {
            return cfg("an object block does not fit in the grid".into());
        }
        Ok(())
    }

    fn offsets(&self) -> [usize; 4] {
        let s = 0;
        let d = s + self.n_shapes;
        let m = d + self.n_sizes;
        let c = m + self.n_materials;
        [s, d, m, c]
    }

    /// Coordinate of the background marker.
    pub fn marker_index(&self) -> usize {
        self.offsets()[3] + self.n_colours
    }

    /// Coordinate range of the colour block.
    pub fn colour_block(&self) -> std::ops::Range<usize> {
        let c = self.offsets()[3];
        c..c + self.n_colours
    }

    pub fn width(&self) -> usize {
        self.grid_w * self.patch_px
    }

    pub fn height(&self) -> usize {
        self.grid_h * self.patch_px
    }
}

/// Attribute values as vocabulary indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectSpec {
    pub shape: usize,
    pub size: usize,
    pub material: usize,
    pub colour: usize,
    /// Top-left patch of the object's block.
    pub row: usize,
    pub col: usize,
}

impl ObjectSpec {
    pub fn to_object(self) -> SceneObject {
        SceneObject {
            shape: SHAPES[self.shape].into(),
            size: SIZES[self.size].into(),
            material: MATERIALS[self.material].into(),
            colour: Some(COLOURS[self.colour].0.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub image: Image,
    pub annotation: SceneAnnotation,
    pub objects: Vec<ObjectSpec>,
    pub truth: ForegroundMask,
    pub embeddings: PatchEmbeddingSet,
    /// Global feature of the background-masked image.
    pub global_masked: GlobalFeature,
    pub global_raw: GlobalFeature,
    /// Owning object of each patch, `None` for background.
    pub assignment: Vec<Option<usize>>,
}

pub fn image_id(index: usize) -> String {
    format!("syn{index:05}")
}

/// Generate `config.n_images` scenes. Scene `i` draws from its own stream of
/// a generator seeded with `config.seed`, so scenes can be produced in any
/// order and the result depends on the seed alone.
pub fn generate(config: &SynthConfig) -> Result<Vec<SynthScene>> {
    config.validate()?;
    (0..config.n_images)
        .into_par_iter()
        .map(|i| generate_scene(config, i))
        .collect()
}

fn scene_rng(config: &SynthConfig, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    rng
}

/// Choose non-overlapping top-left corners by uniform choice among the free
/// positions, restarting the layout when an object no longer fits.
fn place(config: &SynthConfig, sizes: &[usize], rng: &mut ChaCha8Rng, id: &str) -> Result<Vec<(usize, usize)>> {
    let (gh, gw) = (config.grid_h, config.grid_w);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let mut taken = vec![false; gh * gw];
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            let side = config.size_blocks[s];
            let free: Vec<(usize, usize)> = (0..=gh - side)
                .flat_map(|r| (0..=gw - side).map(move |c| (r, c)))
                .filter(|&(r, c)| (r..r + side).all(|rr| (c..c + side).all(|cc| !taken[rr * gw + cc])))
                .collect();
            if free.is_empty() {
                break;
            }
            let (r, c) = free[rng.random_range(0..free.len())];
            for rr in r..r + side {
                for cc in c..c + side {
                    taken[rr * gw + cc] = true;
                }
            }
            out.push((r, c));
        }
        if out.len() == sizes.len() {
            return Ok(out);
        }
    }
    Err(Error::Generation(format!(
        "{id}: could not place {} objects without overlap after {PLACEMENT_ATTEMPTS} attempts",
        sizes.len()
    )))
}

pub fn generate_scene(config: &SynthConfig, index: usize) -> Result<SynthScene> {
    let id = image_id(index);
    let mut rng = scene_rng(config, index);
    let n_obj = rng.random_range(config.min_objects..=config.max_objects);
    let mut objects: Vec<ObjectSpec> = (0..n_obj)
        .map(|_| ObjectSpec {
            shape: rng.random_range(0..config.n_shapes),
            size: rng.random_range(0..config.n_sizes),
            material: rng.random_range(0..config.n_materials),
            colour: rng.random_range(0..config.n_colours),
            row: 0,
            col: 0,
        })
        .collect();
    let sizes: Vec<usize> = objects.iter().map(|o| o.size).collect();
    for (o, (r, c)) in objects.iter_mut().zip(place(config, &sizes, &mut rng, &id)?) {
        o.row = r;
        o.col = c;
    }
    let reference = rng.random_range(0..n_obj);

    let (gh, gw) = (config.grid_h, config.grid_w);
    let mut assignment = vec![None; gh * gw];
    for (k, o) in objects.iter().enumerate() {
        let side = config.size_blocks[o.size];
        for r in o.row..o.row + side {
            for c in o.col..o.col + side {
                assignment[r * gw + c] = Some(k);
            }
        }
    }

    let image = render(config, &id, &objects, &mut rng)?;
    let (embeddings, global_masked, global_raw) = embed(config, &id, &objects, &assignment, &mut rng)?;
    let truth = ForegroundMask::new(
        id.clone(),
        gh,
        gw,
        assignment.iter().map(Option::is_some).collect(),
        MaskPass::First,
    )?;
    let annotation = SceneAnnotation {
        image_id: id,
        objects: objects.iter().map(|o| o.to_object()).collect(),
        reference_object_index: Some(reference),
    };
    Ok(SynthScene {
        image,
        annotation,
        objects,
        truth,
        embeddings,
        global_masked,
        global_raw,
        assignment,
    })
}

fn render(config: &SynthConfig, id: &str, objects: &[ObjectSpec], rng: &mut ChaCha8Rng) -> Result<Image> {
    let (w, h, p) = (config.width(), config.height(), config.patch_px);
    let mut px = Vec::with_capacity(w * h * 3);
    for _ in 0..w * h {
        let v = 0.5 + rng.random_range(-0.03f32..0.03);
        px.extend([v, v, v]);
    }
    for o in objects {
        let side = config.size_blocks[o.size] * p;
        let (top, left) = (o.row * p, o.col * p);
        let base = COLOURS[o.colour].1.map(|c| c as f32 / 255.0);
        let half = side as f32 / 2.0;
        let reach = half - 1.0;
        for r in 0..side {
            for c in 0..side {
                let (dy, dx) = (r as f32 + 0.5 - half, c as f32 + 0.5 - half);
                let inside = match o.shape {
                    0 => dx.abs() <= reach && dy.abs() <= reach,
                    1 => dx * dx + dy * dy <= reach * reach,
                    _ => dx.abs() + dy.abs() <= reach,
                };
                if !inside {
                    continue;
                }
                // metal: two-tone 2x2 checker dither
                let dark = o.material == 1 && ((r / 2) + (c / 2)) % 2 == 1;
                let f = if dark { 0.55 } else { 1.0 };
                let i = ((top + r) * w + left + c) * 3;
                for ch in 0..3 {
                    px[i + ch] = base[ch] * f;
                }
            }
        }
    }
    Image::new(id, w, h, px)
}

type Embedded = (PatchEmbeddingSet, GlobalFeature, GlobalFeature);

fn embed(
    config: &SynthConfig,
    id: &str,
    objects: &[ObjectSpec],
    assignment: &[Option<usize>],
    rng: &mut ChaCha8Rng,
) -> Result<Embedded> {
    let n_y = config.n_y;
    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let [s0, d0, m0, c0] = config.offsets();
    let marker = config.marker_index();
    let mut data = Vec::with_capacity(assignment.len() * n_y);
    for owner in assignment {
        let mut v: Vec<f64> = (0..n_y).map(|_| noise.sample(rng)).collect();
        match owner {
            None => v[marker] += config.background_marker,
            Some(k) => {
                let o = objects[*k];
                v[s0 + o.shape] += config.shape_weight;
                v[d0 + o.size] += config.size_weight;
                v[m0 + o.material] += config.material_weight;
                v[c0 + o.colour] += config.colour_weight;
            }
        }
        data.extend(v.into_iter().map(|x| x as f32));
    }
    let set = PatchEmbeddingSet::new(id, config.grid_h, config.grid_w, n_y, data)?;

    let colour = config.colour_block();
    let mean_of = |keep: &dyn Fn(usize) -> bool| -> Vec<f32> {
        let mut acc = vec![0.0f64; n_y];
        let mut n = 0usize;
        for p in (0..set.patches()).filter(|&p| keep(p)) {
            for (a, &v) in acc.iter_mut().zip(set.embedding(p)) {
                *a += v as f64;
            }
            n += 1;
        }
        for (i, a) in acc.iter_mut().enumerate() {
            *a = if colour.contains(&i) { 0.0 } else { *a / n.max(1) as f64 };
        }
        acc.into_iter().map(|x| x as f32).collect()
    };
    let masked = GlobalFeature::new(id, mean_of(&|p| assignment[p].is_some()))?;
    let raw = GlobalFeature::new(id, mean_of(&|_| true))?;
    Ok((set, masked, raw))
}

/// Exhaustive matching oracle: for every query's reference object, the set
/// of candidate ids containing an object equal on all attributes of
/// `subset`.
pub fn brute_force_retrieval_truth(
    scenes: &BTreeMap<String, SceneAnnotation>,
    queries: &[String],
    candidates: &[String],
    subset: &[Attribute],
) -> BTreeMap<String, BTreeSet<String>> {
    let field = |o: &SceneObject, a: Attribute| -> Option<String> {
        match a {
            Attribute::Shape => Some(o.shape.clone()),
            Attribute::Size => Some(o.size.clone()),
            Attribute::Material => Some(o.material.clone()),
            Attribute::Colour => o.colour.clone(),
        }
    };
    let mut out = BTreeMap::new();
    for q in queries {
        let qs = &scenes[q];
        let Some(ri) = qs.reference_object_index else {
            continue;
        };
        let reference = &qs.objects[ri];
        let mut valid = BTreeSet::new();
        for c in candidates {
            let mut hit = false;
            for o in &scenes[c].objects {
                let mut all = true;
                for &a in subset {
                    if field(o, a) != field(reference, a) {
                        all = false;
                    }
                }
                hit |= all;
            }
            if hit {
                valid.insert(c.clone());
            }
        }
        out.insert(q.clone(), valid);
    }
    out
}

/// Number of images in each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub queries: usize,
    pub candidates: usize,
}

impl SplitSizes {
    /// One third train, one sixth queries, the rest candidates.
    pub fn for_total(n: usize) -> Self {
        let train = n / 3;
        let queries = n / 6;
        Self {
            train,
            queries,
            candidates: n - train - queries,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.queries + self.candidates
    }

    pub fn split_of(&self, index: usize) -> Split {
        if index < self.train {
            Split::Train
        } else if index < self.train + self.queries {
            Split::ValidationQuery
        } else {
            Split::Candidates
        }
    }
}

/// Paths of a corpus written by [`write_corpus`], relative to its root.
pub mod layout {
    pub const MANIFEST: &str = "manifest.jsonl";
    pub const ANNOTATIONS: &str = "annotations.jsonl";
    pub const CONFIG: &str = "synth_config.json";
    pub const IMAGES: &str = "images";
    pub const EMBEDDINGS: &str = "embeddings";
    pub const GLOBALS: &str = "globals";
    pub const GLOBALS_RAW: &str = "globals_raw";
    pub const TRUTH_MASKS: &str = "masks_truth";
}

/// Write scenes in the corpus formats and return the manifest path.
pub fn write_corpus(config: &SynthConfig, scenes: &[SynthScene], splits: SplitSizes, root: &Path) -> Result<PathBuf> {
    if splits.total() != scenes.len() {
        return Err(Error::Config(format!(
            "split sizes add up to {}, corpus has {} images",
            splits.total(),
            scenes.len()
        )));
    }
    for dir in [layout::IMAGES, layout::EMBEDDINGS, layout::GLOBALS, layout::GLOBALS_RAW, layout::TRUTH_MASKS] {
        let d = root.join(dir);
        fs::create_dir_all(&d).map_err(io_at(&d))?;
    }
    let rel = |dir: &str, id: &str, ext: &str| PathBuf::from(dir).join(format!("{id}.{ext}"));
    let entries: Vec<ManifestEntry> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let id = &s.annotation.image_id;
            let image_path = rel(layout::IMAGES, id, "ppm");
            let embedding_path = rel(layout::EMBEDDINGS, id, "oadf");
            let global_path = rel(layout::GLOBALS, id, "oadf");
            write_ppm(&s.image, &root.join(&image_path))?;
            write_embeddings(&s.embeddings, &root.join(&embedding_path))?;
            write_global(&s.global_masked, &root.join(&global_path))?;
            write_global(&s.global_raw, &root.join(rel(layout::GLOBALS_RAW, id, "oadf")))?;
            write_mask(&s.truth, &root.join(rel(layout::TRUTH_MASKS, id, "oamk")))?;
            Ok(ManifestEntry {
                image_id: id.clone(),
                split: splits.split_of(i),
                image_path,
                embedding_path,
                global_feature_path: Some(global_path),
                annotation: Some(s.annotation.clone()),
            })
        })
        .collect::<Result<_>>()?;
    let annotations: Vec<SceneAnnotation> = scenes.iter().map(|s| s.annotation.clone()).collect();
    write_annotations(&annotations, &root.join(layout::ANNOTATIONS))?;
    let cfg_path = root.join(layout::CONFIG);
    let mut cfg_text = serde_json::to_string_pretty(config)?;
    cfg_text.push('\n');
    fs::write(&cfg_path, cfg_text).map_err(io_at(&cfg_path))?;
    let manifest = Manifest::new(root, entries)?;
    let path = root.join(layout::MANIFEST);
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_images: 6,
            seed: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(a[0].image, c[0].image);
    }

    #[test]
    fn scenes_are_consistent() {
        for s in generate(&small()).unwrap() {
            let n = s.annotation.objects.len();
            assert!((3..=10).contains(&n));
            for k in 0..n {
                assert!(s.assignment.contains(&Some(k)), "object {k} owns no patch");
            }
            let fg: Vec<bool> = s.assignment.iter().map(Option::is_some).collect();
            assert_eq!(s.truth.bits, fg);
            assert!(s.embeddings.data().iter().all(|v| v.is_finite()));
            let colour = small().colour_block();
            assert!(colour.clone().all(|i| s.global_masked.values[i] == 0.0));
            assert!(s.annotation.reference_object().is_some());
        }
    }

    #[test]
    fn noiseless_embeddings_follow_the_block_layout() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            n_images: 1,
            ..SynthConfig::default()
        };
        let s = generate_scene(&cfg, 0).unwrap();
        let marker = cfg.marker_index();
        for (p, owner) in s.assignment.iter().enumerate() {
            let e = s.embeddings.embedding(p);
            match owner {
                None => assert_eq!(e[marker], 4.0),
                Some(k) => {
                    let o = s.objects[*k];
                    assert_eq!(e[o.shape], 1.0);
                    assert_eq!(e[3 + o.size], 1.0);
                    assert_eq!(e[5 + o.material], 1.0);
                    assert_eq!(e[7 + o.colour], 0.01);
                    assert_eq!(e[marker], 0.0);
                }
            }
        }
    }

    #[test]
    fn crowded_grid_is_a_generation_error() {
        let cfg = SynthConfig {
            grid_h: 2,
            grid_w: 2,
            min_objects: 3,
            max_objects: 3,
            size_blocks: vec![2, 2],
            ..SynthConfig::default()
        };
        assert!(matches!(generate_scene(&cfg, 0), Err(Error::Generation(_))));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(SynthConfig { n_colours: 9, ..small() }.validate().is_err());
        assert!(SynthConfig { n_y: 10, ..small() }.validate().is_err());
        assert!(SynthConfig { min_objects: 4, max_objects: 3, ..small() }.validate().is_err());
    }

    #[test]
    fn split_sizes() {
        let s = SplitSizes::for_total(600);
        assert_eq!((s.train, s.queries, s.candidates), (200, 100, 300));
        assert_eq!(s.split_of(199), Split::Train);
        assert_eq!(s.split_of(200), Split::ValidationQuery);
        assert_eq!(s.split_of(300), Split::Candidates);
    }
}
