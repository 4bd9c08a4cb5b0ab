use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{train_mlp, Layer, Mlp, MlpConfig};
use super::FearModelError;
use crate::signal::{FeatureWindow, N_FEATURES};

pub const DEFAULT_K: usize = 5;
pub const MODEL_FORMAT: &str = "spiderp-fear-ensemble";
pub const MODEL_VERSION: u32 = 1;

/// Window label counts for one subject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectLabels {
    pub id: String,
    pub positives: usize,
    pub total: usize,
}

impl SubjectLabels {
    /// Per-subject counts of labeled windows, ordered by subject id.
    pub fn tally(windows: &[FeatureWindow]) -> Vec<Self> {
        let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for w in windows {
            if let Some(label) = w.fr_label {
                let c = counts.entry(&w.subject_id).or_default();
                c.0 += label as usize;
                c.1 += 1;
            }
        }
        counts
            .into_iter()
            .map(|(id, (positives, total))| Self {
                id: id.to_string(),
                positives,
                total,
            })
            .collect()
    }

    fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.positives as f64 / self.total as f64
        }
    }
}

/// Partitions subjects into `k` folds whose sizes differ by at most one.
///
/// Subjects are visited by decreasing positive-window fraction (ties by id)
/// and each goes to the non-full fold with the lowest positive-window
/// fraction so far, then the fewest subjects, then the lowest index.
pub fn group_kfold(subjects: &[SubjectLabels], k: usize) -> Result<Vec<Vec<String>>, FearModelError> {
    if k < 2 || k > subjects.len() {
        return Err(FearModelError::TooFewSubjects {
            k,
            subjects: subjects.len(),
        });
    }
    let mut order: Vec<&SubjectLabels> = subjects.iter().collect();
    order.sort_by(|a, b| b.fraction().total_cmp(&a.fraction()).then_with(|| a.id.cmp(&b.id)));

    let n = subjects.len();
    let capacity: Vec<usize> = (0..k).map(|i| n / k + usize::from(i < n % k)).collect();
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); k];
    let mut pos = vec![0usize; k];
    let mut tot = vec![0usize; k];
    for s in order {
        let fold_fraction = |f: usize| if tot[f] == 0 { 0.0 } else { pos[f] as f64 / tot[f] as f64 };
        let best = (0..k)
            .filter(|&f| folds[f].len() < capacity[f])
            .min_by(|&a, &b| {
                fold_fraction(a)
                    .total_cmp(&fold_fraction(b))
                    .then(folds[a].len().cmp(&folds[b].len()))
                    .then(a.cmp(&b))
            })
            .expect("capacities sum to the subject count");
        folds[best].push(s.id.clone());
        pos[best] += s.positives;
        tot[best] += s.total;
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(folds)
}

/// K networks, each trained with one subject fold held out.
#[derive(Debug, Clone, PartialEq)]
pub struct FrEnsemble {
    pub members: Vec<Mlp>,
    /// `folds[i]` holds the subjects member `i` never saw.
    pub folds: Vec<Vec<String>>,
    pub config: MlpConfig,
}

#[derive(Debug, Clone)]
pub struct TrainedEnsemble {
    pub ensemble: FrEnsemble,
    /// Accuracy of member `i` on fold `i` at threshold 0.5.
    pub fold_accuracy: Vec<f64>,
    pub epoch_losses: Vec<Vec<f64>>,
}

impl TrainedEnsemble {
    pub fn mean_fold_accuracy(&self) -> f64 {
        self.fold_accuracy.iter().sum::<f64>() / self.fold_accuracy.len() as f64
    }
}

/// Trains one member per fold on the labeled windows of all other folds.
/// Member `i` uses seed `config.seed + i`.
pub fn train_ensemble(
    windows: &[FeatureWindow],
    k: usize,
    config: &MlpConfig,
) -> Result<TrainedEnsemble, FearModelError> {
    config.validate()?;
    let labeled: Vec<&FeatureWindow> = windows.iter().filter(|w| w.fr_label.is_some()).collect();
    if labeled.is_empty() {
        return Err(FearModelError::NoLabeledWindows);
    }
    let folds = group_kfold(&SubjectLabels::tally(windows), k)?;
    let fold_of: HashMap<&str, usize> = folds
        .iter()
        .enumerate()
        .flat_map(|(i, f)| f.iter().map(move |id| (id.as_str(), i)))
        .collect();

    let results: Vec<_> = (0..k)
        .into_par_iter()
        .map(|i| {
            let (held, train): (Vec<&FeatureWindow>, Vec<&FeatureWindow>) = labeled
                .iter()
                .copied()
                .partition(|w| fold_of[w.subject_id.as_str()] == i);
            let xs: Vec<&[f64]> = train.iter().map(|w| &w.features[..]).collect();
            let ys: Vec<f64> = train.iter().map(|w| label(w)).collect();
            let member_config = MlpConfig {
                seed: config.seed.wrapping_add(i as u64),
                ..config.clone()
            };
            let trained = train_mlp(&xs, &ys, &member_config)?;
            let correct = held
                .iter()
                .filter(|w| (trained.mlp.predict(&w.features) > 0.5) == (label(w) == 1.0))
                .count();
            let accuracy = if held.is_empty() {
                f64::NAN
            } else {
                correct as f64 / held.len() as f64
            };
            Ok((trained, accuracy))
        })
        .collect::<Result<_, FearModelError>>()?;

    let mut members = Vec::with_capacity(k);
    let mut fold_accuracy = Vec::with_capacity(k);
    let mut epoch_losses = Vec::with_capacity(k);
    for (trained, acc) in results {
        members.push(trained.mlp);
        epoch_losses.push(trained.epoch_losses);
        fold_accuracy.push(acc);
    }
    Ok(TrainedEnsemble {
        ensemble: FrEnsemble {
            members,
            folds,
            config: config.clone(),
        },
        fold_accuracy,
        epoch_losses,
    })
}

fn label(w: &FeatureWindow) -> f64 {
    f64::from(w.fr_label.unwrap_or(0))
}

impl FrEnsemble {
    /// Mean of the member probabilities (not a majority vote).
    pub fn score_features(&self, features: &[f64; N_FEATURES]) -> Result<f64, FearModelError> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(FearModelError::NonFiniteFeature);
        }
        let sum: f64 = self.members.iter().map(|m| m.predict(features)).sum();
        Ok(sum / self.members.len() as f64)
    }

    pub fn score(&self, window: &FeatureWindow) -> Result<f64, FearModelError> {
        self.score_features(&window.features)
    }

    pub fn to_file_string(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            config: self.config.clone(),
            folds: self.folds.clone(),
            members: self
                .members
                .iter()
                .map(|m| MemberFile {
                    layers: m
                        .layers
                        .iter()
                        .map(|l| LayerFile {
                            n_in: l.n_in,
                            n_out: l.n_out,
                            weights: l.weights.iter().map(|&v| fmt17(v)).collect(),
                            bias: l.bias.iter().map(|&v| fmt17(v)).collect(),
                        })
                        .collect(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_file_str(s: &str) -> Result<Self, FearModelError> {
        let file: ModelFile =
            serde_json::from_str(s).map_err(|e| FearModelError::ModelFile(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(FearModelError::ModelFile(format!(
                "unsupported format {} v{}",
                file.format, file.version
            )));
        }
        let members = file
            .members
            .into_iter()
            .map(|m| {
                let layers = m
                    .layers
                    .into_iter()
                    .map(|l| {
                        let weights = parse_all(&l.weights)?;
                        let bias = parse_all(&l.bias)?;
                        if weights.len() != l.n_in * l.n_out || bias.len() != l.n_out {
                            return Err(FearModelError::ModelFile("layer shape mismatch".into()));
                        }
                        Ok(Layer { n_in: l.n_in, n_out: l.n_out, weights, bias })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Mlp { layers })
            })
            .collect::<Result<Vec<_>, FearModelError>>()?;
        if members.len() < 2 || members.len() != file.folds.len() {
            return Err(FearModelError::ModelFile("need one member per fold, at least 2".into()));
        }
        Ok(Self {
            members,
            folds: file.folds,
            config: file.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), FearModelError> {
        std::fs::write(path, self.to_file_string())
            .map_err(|e| FearModelError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, FearModelError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| FearModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_file_str(&s)
    }
}

/// 17 significant digits, enough to round-trip any f64.
fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_all(values: &[String]) -> Result<Vec<f64>, FearModelError> {
    values
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| FearModelError::ModelFile(format!("bad number {s:?}")))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    config: MlpConfig,
    folds: Vec<Vec<String>>,
    members: Vec<MemberFile>,
}

#[derive(Serialize, Deserialize)]
struct MemberFile {
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    n_in: usize,
    n_out: usize,
    weights: Vec<String>,
    bias: Vec<String>,
}
