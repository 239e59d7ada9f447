//! Two-stage classification: per-property frame SVMs with calibrated
//! probabilities, the probability feature vector, and the fusion SVM.

pub mod model_file;
pub mod platt;
pub mod svm;

use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};
use crate::features::{check_extractor_ids, FeatureVector, Standardizer};
use crate::model::{Label, PropertyKind};

pub use platt::{platt_fit, Platt};
pub use svm::{scale_gamma, svm_train, ClassWeight, Kernel, KernelKind, SvmParams, SvmSolution};

/// What a model scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTarget {
    Depth,
    Illuminant,
    Saliency,
    /// Second stage on probability feature vectors.
    Fusion,
    /// One frame SVM on the three feature vectors concatenated.
    Concatenated,
}

impl ModelTarget {
    pub fn property(kind: PropertyKind) -> Self {
        match kind {
            PropertyKind::Depth => ModelTarget::Depth,
            PropertyKind::Illuminant => ModelTarget::Illuminant,
            PropertyKind::Saliency => ModelTarget::Saliency,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelTarget::Depth => "depth",
            ModelTarget::Illuminant => "illuminant",
            ModelTarget::Saliency => "saliency",
            ModelTarget::Fusion => "fusion",
            ModelTarget::Concatenated => "concatenated",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [
            ModelTarget::Depth,
            ModelTarget::Illuminant,
            ModelTarget::Saliency,
            ModelTarget::Fusion,
            ModelTarget::Concatenated,
        ]
        .into_iter()
        .find(|t| t.name() == s)
    }
}

/// Trained classifier. Decision values are positive for attacks; `platt`
/// maps them to attack probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub support_vectors: Vec<Vec<f64>>,
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub platt: Platt,
    pub c_param: f64,
    /// Multipliers of C for (bonafide, attack).
    pub class_weights: [f64; 2],
    pub target: ModelTarget,
    pub extractor_id: String,
    pub standardizer: Option<Standardizer>,
    pub seed: u64,
    pub tol: f64,
    pub config_digest: String,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    /// Trains on raw rows; labels are +1 attack, -1 bonafide.
    #[allow(clippy::too_many_arguments)]
    pub fn train(
        x: &[Vec<f64>],
        labels: &[Label],
        params: &SvmParams,
        target: ModelTarget,
        extractor_id: &str,
        standardize: bool,
        seed: u64,
        config_digest: &str,
    ) -> Result<SvmModel> {
        let standardizer = if standardize { Some(Standardizer::fit(x)?) } else { None };
        let scaled;
        let rows = match &standardizer {
            Some(s) => {
                scaled = x.iter().map(|r| s.apply(r)).collect::<Vec<_>>();
                &scaled
            }
            None => x,
        };
        let y: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
        let sol = svm_train(rows, &y, params)?;
        log::debug!(
            "{} model: {} support vectors, {} iterations, KKT gap {:.2e}",
            target.name(),
            sol.support_vectors.len(),
            sol.iterations,
            sol.kkt_gap
        );
        Ok(SvmModel {
            kernel: sol.kernel,
            support_vectors: sol.support_vectors,
            dual_coefs: sol.dual_coefs,
            bias: sol.bias,
            platt: Platt::default(),
            c_param: params.c,
            class_weights: sol.class_weights,
            target,
            extractor_id: extractor_id.to_string(),
            standardizer,
            seed,
            tol: params.tol,
            config_digest: config_digest.to_string(),
        })
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        let scaled;
        let x = match &self.standardizer {
            Some(s) => {
                scaled = s.apply(x);
                &scaled[..]
            }
            None => x,
        };
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, c)| c * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias
    }

    pub fn prob(&self, x: &[f64]) -> f64 {
        self.platt.prob(self.decision(x))
    }

    /// Fits the sigmoid on held-out `(decision value, label)` pairs.
    pub fn calibrate(&mut self, dev_scores: &[(f64, Label)]) -> Result<()> {
        let pairs: Vec<(f64, bool)> = dev_scores.iter().map(|&(s, l)| (s, l == Label::Attack)).collect();
        self.platt = platt_fit(&pairs)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameProbabilitySeries {
    pub sample_id: String,
    pub property: PropertyKind,
    pub probs: Vec<f64>,
}

pub fn predict_frame_probabilities(model: &SvmModel, features: &[FeatureVector]) -> Result<FrameProbabilitySeries> {
    let first = features
        .first()
        .ok_or_else(|| PadError::InvalidInput("no frames to score".into()))?;
    for f in features {
        if ModelTarget::property(f.kind) != model.target {
            return Err(PadError::PropertyMismatch {
                expected: model.target.name().into(),
                found: f.kind.name().into(),
            });
        }
        if f.sample_id != first.sample_id {
            return Err(PadError::InvalidInput(format!(
                "frames of {} and {} in one series",
                first.sample_id, f.sample_id
            )));
        }
    }
    check_extractor_ids(std::iter::once(&FeatureVector {
        extractor_id: model.extractor_id.clone(),
        ..first.clone()
    })
    .chain(features))?;
    Ok(FrameProbabilitySeries {
        sample_id: first.sample_id.clone(),
        property: first.kind,
        probs: features.iter().map(|f| model.prob(&f.to_f64())).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityFeatureVector {
    pub sample_id: String,
    pub p_depth: f64,
    pub p_illuminant: f64,
    pub p_saliency: f64,
}

impl ProbabilityFeatureVector {
    /// (D, I, S)
    pub fn values(&self) -> [f64; 3] {
        [self.p_depth, self.p_illuminant, self.p_saliency]
    }
}

pub fn series_mean(probs: &[f64]) -> f64 {
    probs.iter().sum::<f64>() / probs.len() as f64
}

/// Mean frame probability per property, ordered (D, I, S).
pub fn assemble_pfv(series: &[FrameProbabilitySeries]) -> Result<ProbabilityFeatureVector> {
    let mut p = [0.0; 3];
    let sample_id = series.first().map(|s| s.sample_id.clone()).unwrap_or_default();
    for kind in PropertyKind::ALL {
        let mut found = series.iter().filter(|s| s.property == kind);
        let s = found.next().ok_or(PadError::MissingSeries(kind))?;
        if found.next().is_some() {
            return Err(PadError::InvalidInput(format!("two {kind} series for {sample_id}")));
        }
        if s.sample_id != sample_id {
            return Err(PadError::InvalidInput(format!(
                "series of {} and {} cannot form one vector",
                sample_id, s.sample_id
            )));
        }
        if s.probs.is_empty() {
            return Err(PadError::InvalidInput(format!("empty {kind} series for {sample_id}")));
        }
        p[kind.index()] = series_mean(&s.probs);
    }
    Ok(ProbabilityFeatureVector {
        sample_id,
        p_depth: p[0],
        p_illuminant: p[1],
        p_saliency: p[2],
    })
}

/// RBF SVM on probability feature vectors. Calibrate with
/// [`SvmModel::calibrate`] on held-out vectors afterwards.
pub fn train_fusion_classifier(
    pfvs: &[(ProbabilityFeatureVector, Label)],
    params: &SvmParams,
    seed: u64,
    config_digest: &str,
) -> Result<SvmModel> {
    let x: Vec<Vec<f64>> = pfvs.iter().map(|(p, _)| p.values().to_vec()).collect();
    let labels: Vec<Label> = pfvs.iter().map(|(_, l)| *l).collect();
    let params = SvmParams {
        kernel: KernelKind::Rbf,
        ..params.clone()
    };
    SvmModel::train(&x, &labels, &params, ModelTarget::Fusion, "pfv", false, seed, config_digest)
}

/// Attack iff more than half of the frames exceed `threshold`; exactly half
/// also counts as attack.
pub fn majority_vote_video(series: &FrameProbabilitySeries, threshold: f64) -> Result<Label> {
    if series.probs.is_empty() {
        return Err(PadError::InvalidInput(format!("empty series for {}", series.sample_id)));
    }
    let above = series.probs.iter().filter(|&&p| p > threshold).count();
    Ok(if 2 * above >= series.probs.len() {
        Label::Attack
    } else {
        Label::Bonafide
    })
}

/// Concatenates the (D, I, S) feature vectors of one frame.
pub fn concat_features(parts: [&FeatureVector; 3]) -> Result<Vec<f64>> {
    for (kind, f) in PropertyKind::ALL.iter().zip(parts) {
        if f.kind != *kind {
            return Err(PadError::PropertyMismatch {
                expected: kind.name().into(),
                found: f.kind.name().into(),
            });
        }
    }
    Ok(parts.iter().flat_map(|f| f.to_f64()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FEATURE_DIM;

    fn series(kind: PropertyKind, probs: &[f64]) -> FrameProbabilitySeries {
        FrameProbabilitySeries {
            sample_id: "v".into(),
            property: kind,
            probs: probs.to_vec(),
        }
    }

    fn pfv(p: f64) -> ProbabilityFeatureVector {
        ProbabilityFeatureVector {
            sample_id: String::new(),
            p_depth: p,
            p_illuminant: p,
            p_saliency: p,
        }
    }

    #[test]
    fn pfv_of_constant_series() {
        let s: Vec<_> = PropertyKind::ALL.iter().map(|&k| series(k, &[0.5, 0.5])).collect();
        assert_eq!(assemble_pfv(&s).unwrap().values(), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn pfv_depth_mean_and_order() {
        let s = vec![
            series(PropertyKind::Saliency, &[0.1]),
            series(PropertyKind::Depth, &[0.2, 0.4, 0.9]),
            series(PropertyKind::Illuminant, &[0.3, 0.3]),
        ];
        let v = assemble_pfv(&s).unwrap();
        assert_eq!(v.p_depth, 0.5);
        assert_eq!(v.values(), [0.5, 0.3, 0.1]);
    }

    #[test]
    fn pfv_errors() {
        let two = vec![series(PropertyKind::Depth, &[0.2]), series(PropertyKind::Saliency, &[0.2])];
        assert!(matches!(assemble_pfv(&two), Err(PadError::MissingSeries(PropertyKind::Illuminant))));
        let empty: Vec<_> = PropertyKind::ALL.iter().map(|&k| series(k, &[])).collect();
        assert!(assemble_pfv(&empty).is_err());
    }

    #[test]
    fn majority_vote_cases() {
        let v = |p: &[f64]| majority_vote_video(&series(PropertyKind::Depth, p), 0.5).unwrap();
        assert_eq!(v(&[0.9, 0.8, 0.1]), Label::Attack);
        assert_eq!(v(&[0.4]), Label::Bonafide);
        assert_eq!(v(&[0.9, 0.1]), Label::Attack);
        assert_eq!(v(&[0.5, 0.5, 0.9]), Label::Bonafide);
        assert!(majority_vote_video(&series(PropertyKind::Depth, &[]), 0.5).is_err());
    }

    #[test]
    fn hand_built_model_probability() {
        let model = SvmModel {
            kernel: Kernel::Rbf { gamma: 0.5 },
            support_vectors: vec![vec![1.0; FEATURE_DIM]],
            dual_coefs: vec![2.0],
            bias: -0.25,
            platt: Platt { a: -1.5, b: 0.1 },
            c_param: 1.0,
            class_weights: [1.0, 1.0],
            target: ModelTarget::Depth,
            extractor_id: "fallback-v1".into(),
            standardizer: None,
            seed: 0,
            tol: 1e-3,
            config_digest: String::new(),
        };
        let mut v = vec![1.0f32; FEATURE_DIM];
        v[0] = 2.0;
        v[1] = 0.0;
        let f = FeatureVector::new(v, PropertyKind::Depth, "v", 0, "fallback-v1").unwrap();
        let series = predict_frame_probabilities(&model, std::slice::from_ref(&f)).unwrap();
        assert_eq!(series.probs.len(), 1);
        // ||x - sv||^2 = 2, K = exp(-1)
        let s = 2.0 * (-1.0f64).exp() - 0.25;
        let expected = 1.0 / (1.0 + (-1.5 * s + 0.1).exp());
        assert!((series.probs[0] - expected).abs() <= 1e-9);

        let dup = predict_frame_probabilities(&model, &[f.clone(), f.clone()]).unwrap();
        assert_eq!(dup.probs[0], dup.probs[1]);

        let mut wrong = f.clone();
        wrong.kind = PropertyKind::Saliency;
        assert!(matches!(predict_frame_probabilities(&model, &[wrong]), Err(PadError::PropertyMismatch { .. })));
        let mut other = f;
        other.extractor_id = "resnet".into();
        assert!(matches!(predict_frame_probabilities(&model, &[other]), Err(PadError::ExtractorMismatch { .. })));
    }

    #[test]
    fn fusion_separates_clusters() {
        let mut train = Vec::new();
        for k in 0..20 {
            let d = (k as f64 * 0.61).sin() * 0.05;
            train.push((pfv(0.9 + d), Label::Attack));
            train.push((pfv(0.1 - d), Label::Bonafide));
        }
        let mut m = train_fusion_classifier(&train, &SvmParams::default(), 1, "").unwrap();
        assert!(matches!(m.kernel, Kernel::Rbf { .. }));
        let dev: Vec<_> = train.iter().map(|(p, l)| (m.decision(&p.values()), *l)).collect();
        m.calibrate(&dev).unwrap();
        for k in 0..10 {
            let d = (k as f64 * 1.3).cos() * 0.05;
            assert!(m.prob(&pfv(0.9 + d).values()) > 0.5);
            assert!(m.prob(&pfv(0.1 + d).values()) < 0.5);
        }
        let one: Vec<_> = train.iter().filter(|t| t.1 == Label::Attack).cloned().collect();
        assert!(train_fusion_classifier(&one, &SvmParams::default(), 1, "").is_err());
    }

    #[test]
    fn standardized_model_scales_inputs() {
        let x = vec![vec![100.0, 0.0], vec![102.0, 0.0], vec![110.0, 0.0], vec![112.0, 0.0]];
        let labels = [Label::Bonafide, Label::Bonafide, Label::Attack, Label::Attack];
        let m = SvmModel::train(&x, &labels, &SvmParams::linear(1.0), ModelTarget::Depth, "e", true, 0, "").unwrap();
        assert!(m.standardizer.is_some());
        assert!(m.decision(&[101.0, 0.0]) < 0.0 && m.decision(&[111.0, 0.0]) > 0.0);
    }
}
