use serde::{Deserialize, Serialize};

use crate::simulator::DialogMode;

/// Mode predictions made during one episode, turn by turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeModes {
    pub truth: DialogMode,
    pub predictions: Vec<DialogMode>,
}

impl EpisodeModes {
    /// Most frequent prediction; ties go to the first turn's prediction.
    pub fn majority(&self) -> Option<DialogMode> {
        let first = *self.predictions.first()?;
        let free = self.predictions.iter().filter(|m| **m == DialogMode::Free).count();
        let guided = self.predictions.len() - free;
        Some(match free.cmp(&guided) {
            std::cmp::Ordering::Greater => DialogMode::Free,
            std::cmp::Ordering::Less => DialogMode::Guided,
            std::cmp::Ordering::Equal => first,
        })
    }

    pub fn is_consistent(&self) -> bool {
        self.predictions.windows(2).all(|w| w[0] == w[1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeMetrics {
    /// Macro F1 of the per-episode majority prediction.
    pub f1: f64,
    /// Fraction of episodes whose prediction never changes.
    pub consistency: f64,
}

/// Episodes without predictions are ignored. Classes that occur neither in
/// the labels nor in the predictions do not enter the macro average.
pub fn mode_prediction_metrics(episodes: &[EpisodeModes]) -> ModeMetrics {
    let scored: Vec<(DialogMode, DialogMode)> = episodes
        .iter()
        .filter_map(|e| e.majority().map(|p| (e.truth, p)))
        .collect();
    if scored.is_empty() {
        return ModeMetrics {
            f1: 0.0,
            consistency: 0.0,
        };
    }
    let mut f1s = Vec::new();
    for class in [DialogMode::Guided, DialogMode::Free] {
        let tp = scored.iter().filter(|(t, p)| *t == class && *p == class).count() as f64;
        let fp = scored.iter().filter(|(t, p)| *t != class && *p == class).count() as f64;
        let fn_ = scored.iter().filter(|(t, p)| *t == class && *p != class).count() as f64;
        if tp + fp + fn_ == 0.0 {
            continue;
        }
        f1s.push(2.0 * tp / (2.0 * tp + fp + fn_));
    }
    let with_predictions = episodes.iter().filter(|e| !e.predictions.is_empty());
    let consistent = with_predictions.clone().filter(|e| e.is_consistent()).count();
    ModeMetrics {
        f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
        consistency: consistent as f64 / with_predictions.count() as f64,
    }
}
