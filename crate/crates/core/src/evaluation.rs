//! Classical baselines scored on one point set.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{agglomerative, kmeans, BaselineError, KMeansConfig, Linkage};
use crate::metrics::{EvalReport, MetricsError};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Kmeans,
    Average,
    Complete,
    Ward,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 4] =
        [BaselineMethod::Kmeans, BaselineMethod::Average, BaselineMethod::Complete, BaselineMethod::Ward];

    /// Report label.
    pub fn label(self) -> &'static str {
        match self {
            BaselineMethod::Kmeans => "k-means",
            BaselineMethod::Average => "AC-Average",
            BaselineMethod::Complete => "AC-Complete",
            BaselineMethod::Ward => "AC-Ward",
        }
    }

    pub fn cluster(self, x: &Tensor, k: usize, seed: u64) -> Result<Vec<usize>, BaselineError> {
        let result = match self {
            BaselineMethod::Kmeans => kmeans(x, k, seed, &KMeansConfig::default())?,
            BaselineMethod::Average => agglomerative(x, k, Linkage::Average)?,
            BaselineMethod::Complete => agglomerative(x, k, Linkage::Complete)?,
            BaselineMethod::Ward => agglomerative(x, k, Linkage::Ward)?,
        };
        Ok(result.labels)
    }
}

impl FromStr for BaselineMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kmeans" => Ok(BaselineMethod::Kmeans),
            "average" => Ok(BaselineMethod::Average),
            "complete" => Ok(BaselineMethod::Complete),
            "ward" => Ok(BaselineMethod::Ward),
            _ => Err(format!("unknown baseline {s:?} (expected kmeans, average, complete or ward)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Runs each baseline on `points` and scores it.
pub fn baseline_reports(
    points: &Tensor,
    truth: Option<&[usize]>,
    k: usize,
    seed: u64,
    space: &str,
    split: &str,
    methods: &[BaselineMethod],
) -> Result<Vec<EvalReport>, EvalError> {
    methods
        .iter()
        .map(|m| {
            log::info!("{space}/{split}: {}", m.label());
            let labels = m.cluster(points, k, seed)?;
            Ok(EvalReport::score(m.label(), split, space, &labels, truth, k)?)
        })
        .collect()
}
