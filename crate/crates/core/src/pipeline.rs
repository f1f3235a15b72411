//! End-to-end runs over dataset directories, shared by the CLI and tests.
//!
//! Every run processes images on a rayon pool of the requested size and
//! collects results in input order, so outputs do not depend on the
//! worker count.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{generate_pseudo_dataset, item_seed, JitterParams, RNG_VERSION};
use crate::classes::{NucleusClass, N_CLASSES};
use crate::cost::{ClassCounts, CostMatrix, CostRule};
use crate::error::{Error, Result};
use crate::hover::{compute_hover_maps, compute_np_target};
use crate::instance::canonicalize;
use crate::io;
use crate::metrics::{counts_from, evaluate, report_to_csv, LabelledImage, MetricsReport};
use crate::postprocess::{postprocess, PostprocessParams, ProbabilityMaps};
use crate::stain::{estimate_stain_profile, normalize_to_template, StainProfile};
use crate::synth;

/// Value of the `schema` field accepted by [`PipelineConfig`].
pub const CONFIG_SCHEMA: &str = "nuclei-pipeline/1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigPaths {
    /// Ground-truth dataset directory (`<stem>.inst.png` + `<stem>.class.png`).
    pub masks: Option<PathBuf>,
    /// RGB tiles for stain normalization.
    pub images: Option<PathBuf>,
    /// Predicted dataset directory, same layout as `masks`.
    pub predictions: Option<PathBuf>,
    /// Stain profile JSON used as normalization template.
    pub template: Option<PathBuf>,
    /// Output directory; created when missing.
    pub output: Option<PathBuf>,
}

fn default_class_names() -> Vec<String> {
    NucleusClass::ALL.iter().map(|c| c.name().to_string()).collect()
}

fn default_workers() -> usize {
    1
}

/// One JSON document configuring every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema: String,
    #[serde(default)]
    pub paths: ConfigPaths,
    #[serde(default)]
    pub postprocess: PostprocessParams,
    #[serde(default)]
    pub jitter: JitterParams,
    #[serde(default)]
    pub cost_rule: CostRule,
    /// Display names for class ids 1..=6.
    #[serde(default = "default_class_names")]
    pub class_names: Vec<String>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema: CONFIG_SCHEMA.into(),
            paths: ConfigPaths::default(),
            postprocess: PostprocessParams::default(),
            jitter: JitterParams::default(),
            cost_rule: CostRule::default(),
            class_names: default_class_names(),
            workers: default_workers(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&io::read_text(path)?)
    }

    /// Checks the schema, parameters and that every input path exists.
    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported schema {:?} (expected {CONFIG_SCHEMA:?})",
                self.schema
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.class_names.len() != N_CLASSES || self.class_names.iter().any(String::is_empty) {
            return Err(Error::Config(format!(
                "class_names needs {N_CLASSES} non-empty names"
            )));
        }
        self.postprocess.validate()?;
        self.jitter.validate()?;
        let p = &self.paths;
        for (name, path) in [
            ("masks", &p.masks),
            ("images", &p.images),
            ("predictions", &p.predictions),
            ("template", &p.template),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "paths.{name} does not exist: {}",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Run `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Err(Error::InvalidParameter("workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Write NP and HoVer targets for every instance map in `in_dir`.
///
/// Returns the processed stems. Maps are canonicalized first.
pub fn run_targets(in_dir: &Path, out_dir: &Path) -> Result<Vec<String>> {
    let stems = io::stems_with_suffix(in_dir, io::INSTANCE_SUFFIX)?;
    if stems.is_empty() {
        warn!("no *{} files in {}", io::INSTANCE_SUFFIX, in_dir.display());
        return Ok(stems);
    }
    stems.par_iter().try_for_each(|stem| -> Result<()> {
        let map = io::read_instance_map(&in_dir.join(format!("{stem}{}", io::INSTANCE_SUFFIX)))?;
        let map = canonicalize(&map);
        io::write_np_target(&out_dir.join(format!("{stem}{}", io::NP_SUFFIX)), &compute_np_target(&map))?;
        io::write_hover(&out_dir.join(format!("{stem}{}", io::HOVER_SUFFIX)), &compute_hover_maps(&map))
    })?;
    info!("wrote targets for {} image(s)", stems.len());
    Ok(stems)
}

/// Post-process one set of network outputs read from grid files.
pub fn run_postprocess(
    np: &Path,
    hover: &Path,
    nc: &Path,
    params: &PostprocessParams,
) -> Result<LabelledImage> {
    let (h, w, np_prob) = io::read_np_prob(np)?;
    let hv = io::read_hover(hover)?;
    let nc_prob = io::read_nc_prob(nc)?;
    crate::instance::check_shape((h, w), hv.shape())?;
    let (instances, classes) = postprocess(&ProbabilityMaps::new(np_prob, hv, nc_prob)?, params)?;
    LabelledImage::new(instances, classes)
}

/// Evaluate every prediction against the ground truth of the same stem.
pub fn run_evaluate(pred_dir: &Path, gt_dir: &Path) -> Result<MetricsReport> {
    let pred = io::read_dataset(pred_dir)?;
    let gt = io::read_dataset(gt_dir)?;
    let pred_stems: Vec<&str> = pred.iter().map(|e| e.stem.as_str()).collect();
    let gt_stems: Vec<&str> = gt.iter().map(|e| e.stem.as_str()).collect();
    let mut missing: Vec<String> = pred_stems
        .iter()
        .filter(|s| !gt_stems.contains(s))
        .chain(gt_stems.iter().filter(|s| !pred_stems.contains(s)))
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::MissingPairs(missing));
    }
    let pairs = pred
        .par_iter()
        .zip(&gt)
        .map(|(p, g)| Ok((p.load()?, g.load()?)))
        .collect::<Result<Vec<_>>>()?;
    evaluate(&pairs)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Write `report.json` and `report.csv` into `out_dir`.
pub fn write_report(out_dir: &Path, report: &MetricsReport) -> Result<()> {
    io::write_text(&out_dir.join("report.json"), &to_json(report))?;
    io::write_text(&out_dir.join("report.csv"), &report_to_csv(report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub rng: String,
    pub params: JitterParams,
    pub n_sources: usize,
    pub n_generated: usize,
}

/// Generate `count` jittered pairs from a dataset into `out_dir`, named
/// `pseudo_00000`, `pseudo_00001`, ...
pub fn run_augment(in_dir: &Path, out_dir: &Path, count: usize, params: &JitterParams) -> Result<AugmentSummary> {
    let sources = io::read_dataset(in_dir)?
        .par_iter()
        .map(|e| e.load())
        .collect::<Result<Vec<_>>>()?;
    let generated = generate_pseudo_dataset(&sources, count, params)?;
    generated
        .par_iter()
        .enumerate()
        .try_for_each(|(i, img)| io::write_labelled(out_dir, &format!("pseudo_{i:05}"), img))?;
    let summary = AugmentSummary {
        rng: RNG_VERSION.into(),
        params: *params,
        n_sources: sources.len(),
        n_generated: generated.len(),
    };
    io::write_text(&out_dir.join("augment.json"), &to_json(&summary))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizeSummary {
    pub normalized: Vec<String>,
    /// Tiles without estimable stains, copied unchanged.
    pub passed_through: Vec<String>,
}

/// Restain every `*.png` in `in_dir` to `template`.
pub fn run_normalize(template: &StainProfile, in_dir: &Path, out_dir: &Path) -> Result<NormalizeSummary> {
    let stems = io::stems_with_suffix(in_dir, ".png")?;
    let outcomes = stems
        .par_iter()
        .map(|stem| -> Result<bool> {
            let img = io::read_rgb(&in_dir.join(format!("{stem}.png")))?;
            let out_path = out_dir.join(format!("{stem}.png"));
            match normalize_to_template(&img, template) {
                Ok(out) => io::write_rgb(&out_path, &out).map(|_| true),
                Err(e @ (Error::NoTissue { .. } | Error::DegenerateStains(_))) => {
                    warn!("{stem}: {e}; copying unchanged");
                    io::write_rgb(&out_path, &img).map(|_| false)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<bool>>>()?;
    let mut summary = NormalizeSummary {
        normalized: Vec::new(),
        passed_through: Vec::new(),
    };
    for (stem, ok) in stems.into_iter().zip(outcomes) {
        if ok {
            summary.normalized.push(stem);
        } else {
            summary.passed_through.push(stem);
        }
    }
    Ok(summary)
}

pub fn run_estimate_profile(tile: &Path) -> Result<StainProfile> {
    estimate_stain_profile(&io::read_rgb(tile)?)
}

/// Cost matrix from per-class counts given in report order
/// (pla, neu, epi, lym, eos, con).
pub fn run_cost_matrix(counts: &[u64], rule: CostRule) -> Result<CostMatrix> {
    if counts.len() != N_CLASSES {
        return Err(Error::LengthMismatch {
            expected: N_CLASSES,
            actual: counts.len(),
        });
    }
    CostMatrix::from_counts(&ClassCounts::new(counts.to_vec())?, rule)
}

/// Header names for a report-order cost matrix built from a class-id name table.
pub fn report_order_names(class_names: &[String]) -> Vec<&str> {
    NucleusClass::REPORT_ORDER
        .iter()
        .map(|c| class_names.get(c.id() as usize - 1).map_or(c.abbrev(), String::as_str))
        .collect()
}

/// Demo bundle settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoParams {
    pub seed: u64,
    pub n_scenes: usize,
    pub n_touching_pairs: usize,
    pub n_pseudo: usize,
}

impl Default for DemoParams {
    fn default() -> Self {
        DemoParams {
            seed: 0,
            n_scenes: 50,
            n_touching_pairs: 100,
            n_pseudo: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub params: DemoParams,
    pub mpq_plus: f64,
    pub r2_overall: f64,
    pub scenes_reproduced_exactly: usize,
    pub touching_pairs_split: usize,
    pub pseudo_pairs: usize,
    pub template_profile: StainProfile,
    pub restained_max_channel_diff: u8,
}

/// Synthetic end-to-end run writing a bundle under `out_dir`:
///
/// - `gt/`: synthetic scenes; `targets/`: NP and HoVer targets
/// - `outputs/`: oracle network outputs as grid files
/// - `pred/`: post-processed predictions; `report.json`, `report.csv`
/// - `cost_matrix.csv` from the scenes' class counts
/// - `pseudo/`: jittered pseudo ground truth
/// - `stain/`: two stainings of one scene, the template and the restained tile
/// - `summary.json`
pub fn run_demo(params: &DemoParams, out_dir: &Path) -> Result<DemoSummary> {
    let gt_dir = out_dir.join("gt");
    let scenes: Vec<LabelledImage> = (0..params.n_scenes)
        .into_par_iter()
        .map(|i| synth::blob_scene(item_seed(params.seed, i as u64), &synth::SceneParams::default()))
        .collect();
    let stems: Vec<String> = (0..scenes.len()).map(|i| format!("scene_{i:03}")).collect();
    stems
        .par_iter()
        .zip(&scenes)
        .try_for_each(|(stem, s)| io::write_labelled(&gt_dir, stem, s))?;
    run_targets(&gt_dir, &out_dir.join("targets"))?;

    let outputs = out_dir.join("outputs");
    let pred_dir = out_dir.join("pred");
    let post = PostprocessParams::default();
    stems.par_iter().zip(&scenes).try_for_each(|(stem, s)| -> Result<()> {
        let pred = synth::oracle_prediction(s);
        let (h, w) = pred.shape();
        let np_path = outputs.join(format!("{stem}.np.f32"));
        let hv_path = outputs.join(format!("{stem}.hover.f32"));
        let nc_path = outputs.join(format!("{stem}.nc.f32"));
        io::write_np_prob(&np_path, h, w, pred.np_prob())?;
        io::write_hover(&hv_path, pred.hover())?;
        io::write_nc_prob(&nc_path, pred.nc_prob())?;
        let out = run_postprocess(&np_path, &hv_path, &nc_path, &post)?;
        io::write_labelled(&pred_dir, stem, &out)
    })?;
    let report = run_evaluate(&pred_dir, &gt_dir)?;
    write_report(out_dir, &report)?;
    let reproduced = stems
        .par_iter()
        .zip(&scenes)
        .map(|(stem, s)| -> Result<bool> {
            let e = io::DatasetEntry {
                stem: stem.clone(),
                instances: pred_dir.join(format!("{stem}{}", io::INSTANCE_SUFFIX)),
                classes: pred_dir.join(format!("{stem}{}", io::CLASS_SUFFIX)),
            };
            Ok(e.load()? == *s)
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&b| b)
        .count();

    let split = (0..params.n_touching_pairs)
        .into_par_iter()
        .map(|i| -> Result<bool> {
            let pair = synth::touching_pair(item_seed(params.seed ^ 0x7061_6972, i as u64));
            let (inst, _) = postprocess(&synth::oracle_prediction(&pair), &post)?;
            Ok(inst.max_label() == 2)
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&b| b)
        .count();

    let mut totals = [0u64; N_CLASSES];
    for s in &scenes {
        for (t, c) in totals.iter_mut().zip(counts_from(&s.instances, &s.classes)?.0) {
            *t += c;
        }
    }
    match run_cost_matrix(&totals, CostRule::MaxRatio) {
        Ok(m) => {
            let names: Vec<&str> = NucleusClass::REPORT_ORDER.iter().map(|c| c.abbrev()).collect();
            io::write_text(&out_dir.join("cost_matrix.csv"), &m.to_csv(&names))?;
        }
        Err(e) => warn!("skipping cost matrix: {e}"),
    }

    let jitter = JitterParams {
        seed: params.seed,
        ..JitterParams::default()
    };
    let pseudo = run_augment(&gt_dir, &out_dir.join("pseudo"), params.n_pseudo, &jitter)?;

    let stain_dir = out_dir.join("stain");
    let first = scenes.first().ok_or(Error::EmptySource)?;
    let (h, w) = first.instances.shape();
    let conc = synth::stain_concentrations(params.seed, &first.instances);
    let reference = StainProfile::from_columns([0.65, 0.70, 0.29], [0.07, 0.99, 0.11], [1.0, 1.0]);
    let shifted = StainProfile::from_columns([0.55, 0.76, 0.35], [0.16, 0.96, 0.22], [1.0, 1.0]);
    let a = reference.render(h, w, &conc)?;
    let b = shifted.render(h, w, &conc)?;
    io::write_rgb(&stain_dir.join("reference.png"), &a)?;
    let source_dir = stain_dir.join("source");
    io::write_rgb(&source_dir.join("shifted.png"), &b)?;
    let template = estimate_stain_profile(&a)?;
    io::write_text(&stain_dir.join("template.json"), &to_json(&template))?;
    run_normalize(&template, &source_dir, &stain_dir.join("normalized"))?;
    let restained = io::read_rgb(&stain_dir.join("normalized").join("shifted.png"))?;
    let expected = normalize_to_template(&a, &template)?;
    let diff = expected
        .as_slice()
        .iter()
        .zip(restained.as_slice())
        .map(|(x, y)| x.abs_diff(*y))
        .max()
        .unwrap_or(0);

    let summary = DemoSummary {
        params: *params,
        mpq_plus: report.pq.mpq_plus,
        r2_overall: report.r2.overall,
        scenes_reproduced_exactly: reproduced,
        touching_pairs_split: split,
        pseudo_pairs: pseudo.n_generated,
        template_profile: template,
        restained_max_channel_diff: diff,
    };
    io::write_text(&out_dir.join("summary.json"), &to_json(&summary))?;
    Ok(summary)
}
