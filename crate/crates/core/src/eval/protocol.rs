//! Training and evaluation of one resolved protocol on extracted features.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_rates, decide, select_threshold_eer, ConfusionCounts};
use super::report::{Cell, EvalReport, MethodRow, Slice, SCHEMA_VERSION};
use crate::classify::{
    assemble_pfv, concat_features, majority_vote_video, train_fusion_classifier, FrameProbabilitySeries,
    ModelTarget, ProbabilityFeatureVector, SvmModel, SvmParams,
};
use crate::error::{PadError, Result};
use crate::features::{check_extractor_ids, FeatureVector};
use crate::model::{subject_folds, Label, PropertyKind, ResolvedProtocol, SampleRecord};

/// Feature vectors of one sample: (D, I, S) per retained frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFeatures {
    pub sample_id: String,
    pub frames: Vec<[FeatureVector; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ClassifierConfig {
    /// Per-property frame classifiers.
    #[serde(default)]
    pub stage1: SvmParams,
    /// Classifier on probability feature vectors; always RBF.
    #[serde(default)]
    pub fusion: SvmParams,
    /// Standardize features with training mean and deviation.
    #[serde(default)]
    pub standardize: bool,
    /// Also train one frame classifier on concatenated feature vectors.
    #[serde(default)]
    pub concatenated_features: bool,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Frame-probability thresholds per property, (D, I, S).
    pub property: [f64; 3],
    pub fused: f64,
    pub concatenated: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub stage1: [SvmModel; 3],
    pub fusion: SvmModel,
    pub concatenated: Option<SvmModel>,
    pub thresholds: Thresholds,
}

pub const METHOD_NAMES: [&str; 3] = ["Depth", "Illuminant", "Saliency"];
pub const FUSED: &str = "Fused";
pub const CONCATENATED_FEATURES: &str = "Concatenated features";
pub const FUSION_MODE: &str = "stacked per-property probabilities";

fn lookup<'a>(features: &'a BTreeMap<String, SampleFeatures>, r: &SampleRecord) -> Result<&'a SampleFeatures> {
    let f = features
        .get(&r.sample_id)
        .ok_or_else(|| PadError::Internal(format!("no features for sample {}", r.sample_id)))?;
    if f.frames.is_empty() {
        return Err(PadError::InvalidInput(format!("sample {} has no frames", r.sample_id)));
    }
    Ok(f)
}

/// One frame-level design matrix: a row per frame, with the owning sample.
struct FrameRows {
    x: Vec<Vec<f64>>,
    labels: Vec<Label>,
    /// Index into the record list for each row.
    owner: Vec<usize>,
}

fn frame_rows(
    records: &[SampleRecord],
    features: &BTreeMap<String, SampleFeatures>,
    which: Option<PropertyKind>,
) -> Result<FrameRows> {
    let mut rows = FrameRows {
        x: Vec::new(),
        labels: Vec::new(),
        owner: Vec::new(),
    };
    for (i, r) in records.iter().enumerate() {
        for frame in &lookup(features, r)?.frames {
            rows.x.push(match which {
                Some(k) => frame[k.index()].to_f64(),
                None => concat_features([&frame[0], &frame[1], &frame[2]])?,
            });
            rows.labels.push(r.label);
            rows.owner.push(i);
        }
    }
    Ok(rows)
}

fn subset(rows: &FrameRows, keep: impl Fn(usize) -> bool) -> (Vec<Vec<f64>>, Vec<Label>) {
    let mut x = Vec::new();
    let mut l = Vec::new();
    for (i, row) in rows.x.iter().enumerate() {
        if keep(rows.owner[i]) {
            x.push(row.clone());
            l.push(rows.labels[i]);
        }
    }
    (x, l)
}

/// Frame classifier with its out-of-fold decision values on train and its
/// decision values on dev, grouped per record.
struct FrameStage {
    model: SvmModel,
    oof: Vec<(usize, Vec<f64>)>,
    dev: Vec<(usize, Vec<f64>)>,
    threshold: f64,
}

fn group_by_owner(owner: &[usize], values: Vec<f64>) -> Vec<(usize, Vec<f64>)> {
    let mut out: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (o, v) in owner.iter().zip(values) {
        out.entry(*o).or_default().push(v);
    }
    out.into_iter().collect()
}

fn labelled(groups: &[(usize, Vec<f64>)], records: &[SampleRecord]) -> Vec<(f64, Label)> {
    groups
        .iter()
        .flat_map(|(o, d)| {
            let l = records[*o].label;
            d.iter().map(move |&v| (v, l))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn train_frame_stage(
    protocol: &ResolvedProtocol,
    features: &BTreeMap<String, SampleFeatures>,
    which: Option<PropertyKind>,
    target: ModelTarget,
    extractor_id: &str,
    cfg: &ClassifierConfig,
    digest: &str,
    folds: &[usize],
) -> Result<FrameStage> {
    let train = frame_rows(&protocol.train, features, which)?;
    let train_model = |x: &[Vec<f64>], l: &[Label]| {
        SvmModel::train(x, l, &cfg.stage1, target, extractor_id, cfg.standardize, protocol.seed, digest)
    };
    let mut model = train_model(&train.x, &train.labels)?;

    let k = folds.iter().copied().max().map_or(0, |m| m + 1);
    let per_fold: Vec<Vec<(usize, f64)>> = (0..k)
        .into_par_iter()
        .map(|f| -> Result<Vec<(usize, f64)>> {
            let (x, l) = subset(&train, |o| folds[o] != f);
            let m = train_model(&x, &l)?;
            Ok(train
                .x
                .iter()
                .enumerate()
                .filter(|(i, _)| folds[train.owner[*i]] == f)
                .map(|(i, x)| (i, m.decision(x)))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut d = vec![0.0; train.x.len()];
    for (i, v) in per_fold.into_iter().flatten() {
        d[i] = v;
    }
    let oof = group_by_owner(&train.owner, d);

    let dev = frame_rows(&protocol.dev, features, which)?;
    let dev_d: Vec<f64> = dev.x.iter().map(|x| model.decision(x)).collect();
    let dev = group_by_owner(&dev.owner, dev_d);

    // calibration and threshold on dev, or on out-of-fold scores
    let pairs = if protocol.folds.is_some() {
        labelled(&oof, &protocol.train)
    } else {
        labelled(&dev, &protocol.dev)
    };
    model.calibrate(&pairs)?;
    let probs: Vec<(f64, Label)> = pairs.iter().map(|&(d, l)| (model.platt.prob(d), l)).collect();
    let threshold = select_threshold_eer(&probs)?;
    Ok(FrameStage {
        model,
        oof,
        dev,
        threshold,
    })
}

fn series_for(model: &SvmModel, sample: &SampleFeatures, kind: PropertyKind) -> FrameProbabilitySeries {
    FrameProbabilitySeries {
        sample_id: sample.sample_id.clone(),
        property: kind,
        probs: sample.frames.iter().map(|f| model.prob(&f[kind.index()].to_f64())).collect(),
    }
}

/// Probability feature vectors of `records` from grouped decision values
/// (selected by `pick`) and the calibrated stage-1 sigmoids.
fn pfvs_from(
    stages: &[FrameStage],
    records: &[SampleRecord],
    pick: impl Fn(&FrameStage) -> &Vec<(usize, Vec<f64>)>,
) -> Result<Vec<(ProbabilityFeatureVector, Label)>> {
    (0..records.len())
        .map(|o| {
            let series: Vec<FrameProbabilitySeries> = PropertyKind::ALL
                .iter()
                .map(|&k| {
                    let st = &stages[k.index()];
                    let d = pick(st).iter().find(|(i, _)| *i == o).map(|x| &x.1);
                    FrameProbabilitySeries {
                        sample_id: records[o].sample_id.clone(),
                        property: k,
                        probs: d.map_or(Vec::new(), |d| d.iter().map(|&v| st.model.platt.prob(v)).collect()),
                    }
                })
                .collect();
            Ok((assemble_pfv(&series)?, records[o].label))
        })
        .collect()
}

/// Folds for stacking: the protocol's k-fold split, or subject-disjoint
/// folds of the train split.
fn stacking_folds(protocol: &ResolvedProtocol) -> Result<Vec<usize>> {
    if let Some(f) = &protocol.folds {
        return Ok(f.clone());
    }
    let subjects: BTreeSet<(&str, &str)> = protocol
        .train
        .iter()
        .map(|r| (r.dataset_name.as_str(), r.subject_id.as_str()))
        .collect();
    subject_folds(&protocol.train, subjects.len().min(STACKING_FOLDS), protocol.seed)
}

pub const STACKING_FOLDS: usize = 5;

/// Trains stage-1 models, the fusion model and all thresholds.
///
/// The fusion model learns from out-of-fold probability feature vectors of
/// the train split. Sigmoids and thresholds are fitted on dev, or on
/// out-of-fold scores when the protocol has no dev split.
pub fn train_models(
    protocol: &ResolvedProtocol,
    features: &BTreeMap<String, SampleFeatures>,
    cfg: &ClassifierConfig,
    digest: &str,
) -> Result<TrainedModels> {
    if protocol.folds.is_none() && protocol.dev.is_empty() {
        return Err(PadError::Protocol("no dev samples and no k-fold split".into()));
    }
    let mut all_vectors = Vec::new();
    for r in protocol.train.iter().chain(&protocol.dev) {
        for f in &lookup(features, r)?.frames {
            all_vectors.extend(f.iter());
        }
    }
    let extractor_id = check_extractor_ids(all_vectors)?.unwrap_or_default();
    let folds = stacking_folds(protocol)?;

    let stage = |which: Option<PropertyKind>, target: ModelTarget| {
        train_frame_stage(protocol, features, which, target, &extractor_id, cfg, digest, &folds)
    };
    let stages: Vec<FrameStage> = PropertyKind::ALL
        .par_iter()
        .map(|&k| stage(Some(k), ModelTarget::property(k)))
        .collect::<Result<_>>()?;
    let concat = if cfg.concatenated_features {
        Some(stage(None, ModelTarget::Concatenated)?)
    } else {
        None
    };
    let stage1: [SvmModel; 3] = std::array::from_fn(|i| stages[i].model.clone());

    let train_pfvs = pfvs_from(&stages, &protocol.train, |s| &s.oof)?;
    let mut fusion = train_fusion_classifier(&train_pfvs, &cfg.fusion, protocol.seed, digest)?;
    let calib: Vec<(f64, Label)> = if protocol.folds.is_some() {
        let k = folds.iter().copied().max().map_or(0, |m| m + 1);
        let mut oof = vec![0.0; train_pfvs.len()];
        for f in 0..k {
            let part: Vec<_> = train_pfvs
                .iter()
                .zip(&folds)
                .filter(|(_, &g)| g != f)
                .map(|(p, _)| p.clone())
                .collect();
            let m = train_fusion_classifier(&part, &cfg.fusion, protocol.seed, digest)?;
            for (i, (p, _)) in train_pfvs.iter().enumerate() {
                if folds[i] == f {
                    oof[i] = m.decision(&p.values());
                }
            }
        }
        oof.iter().zip(&train_pfvs).map(|(&d, (_, l))| (d, *l)).collect()
    } else {
        pfvs_from(&stages, &protocol.dev, |s| &s.dev)?
            .iter()
            .map(|(p, l)| (fusion.decision(&p.values()), *l))
            .collect()
    };
    fusion.calibrate(&calib)?;
    let probs: Vec<(f64, Label)> = calib.iter().map(|&(d, l)| (fusion.platt.prob(d), l)).collect();
    let fused_threshold = select_threshold_eer(&probs)?;

    Ok(TrainedModels {
        thresholds: Thresholds {
            property: std::array::from_fn(|i| stages[i].threshold),
            fused: fused_threshold,
            concatenated: concat.as_ref().map(|c| c.threshold),
        },
        stage1,
        fusion,
        concatenated: concat.map(|c| c.model),
    })
}

/// Video-level decision of every method for one sample: (D, I, S, fused,
/// concatenated features).
pub fn predict_sample(models: &TrainedModels, sample: &SampleFeatures) -> Result<Vec<Label>> {
    let mut out = Vec::with_capacity(5);
    let mut series = Vec::with_capacity(3);
    for k in PropertyKind::ALL {
        let s = series_for(&models.stage1[k.index()], sample, k);
        out.push(majority_vote_video(&s, models.thresholds.property[k.index()])?);
        series.push(s);
    }
    let pfv = assemble_pfv(&series)?;
    out.push(decide(models.fusion.prob(&pfv.values()), models.thresholds.fused));
    if let (Some(m), Some(t)) = (&models.concatenated, models.thresholds.concatenated) {
        let s = FrameProbabilitySeries {
            sample_id: sample.sample_id.clone(),
            property: PropertyKind::Depth,
            probs: sample
                .frames
                .iter()
                .map(|f| Ok(m.prob(&concat_features([&f[0], &f[1], &f[2]])?)))
                .collect::<Result<_>>()?,
        };
        out.push(majority_vote_video(&s, t)?);
    }
    Ok(out)
}

fn cell(counts: ConfusionCounts) -> Result<Cell> {
    Ok(Cell {
        rates: compute_rates(&counts)?,
        counts,
    })
}

/// Scores the test records. `attack_types` fixes the slice columns; slices
/// without test attacks stay empty.
pub fn evaluate_models(
    models: &TrainedModels,
    test: &[SampleRecord],
    features: &BTreeMap<String, SampleFeatures>,
    attack_types: &[String],
    protocol_summary: &str,
    seed: u64,
    digest: &str,
) -> Result<EvalReport> {
    let predictions: Vec<Vec<Label>> = test
        .par_iter()
        .map(|r| predict_sample(models, lookup(features, r)?))
        .collect::<Result<_>>()?;
    let mut names: Vec<&str> = METHOD_NAMES.to_vec();
    names.push(FUSED);
    if models.concatenated.is_some() {
        names.push(CONCATENATED_FEATURES);
    }
    let thresholds: Vec<f64> = models
        .thresholds
        .property
        .iter()
        .copied()
        .chain([models.thresholds.fused])
        .chain(models.thresholds.concatenated)
        .collect();
    let mut rows = Vec::new();
    for (m, name) in names.iter().enumerate() {
        let pairs = |keep: &dyn Fn(&SampleRecord) -> bool| {
            ConfusionCounts::from_pairs(test.iter().zip(&predictions).filter(|(r, _)| keep(r)).map(|(r, p)| (r.label, p[m])))
        };
        let overall = cell(pairs(&|_| true))?;
        let mut slices = Vec::new();
        for t in attack_types {
            let counts = pairs(&|r| r.label == Label::Bonafide || r.attack_type.as_deref() == Some(t.as_str()));
            slices.push(Slice {
                attack_type: t.clone(),
                cell: if counts.attacks_total == 0 { None } else { Some(cell(counts)?) },
            });
        }
        rows.push(MethodRow {
            method: name.to_string(),
            threshold: thresholds[m],
            overall,
            slices,
        });
    }
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        protocol: protocol_summary.to_string(),
        fusion_mode: FUSION_MODE.to_string(),
        seed,
        config_digest: digest.to_string(),
        attack_types: attack_types.to_vec(),
        rows,
    })
}

/// Sorted attack types present anywhere in the protocol.
pub fn attack_types_of(protocol: &ResolvedProtocol) -> Vec<String> {
    let set: BTreeSet<String> = protocol
        .train
        .iter()
        .chain(&protocol.dev)
        .chain(&protocol.test)
        .filter_map(|r| r.attack_type.clone())
        .collect();
    set.into_iter().collect()
}

/// Trains on train/dev (or k-fold) and reports on test.
pub fn run_protocol(
    protocol: &ResolvedProtocol,
    features: &BTreeMap<String, SampleFeatures>,
    cfg: &ClassifierConfig,
    protocol_summary: &str,
    digest: &str,
) -> Result<(EvalReport, TrainedModels)> {
    let models = train_models(protocol, features, cfg, digest)?;
    let report = evaluate_models(
        &models,
        &protocol.test,
        features,
        &attack_types_of(protocol),
        protocol_summary,
        protocol.seed,
        digest,
    )?;
    Ok((report, models))
}
