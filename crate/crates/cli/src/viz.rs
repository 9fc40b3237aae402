//! Plot-data emitters: per-level score distributions, 2-D feature
//! projections and data-fraction sweep curves.
//!
//! Emitters write a CSV plus a versioned JSON sidecar (same path, `.json`
//! extension). They are pure functions of (weights, corpus): re-running
//! produces byte-identical files. An existing sidecar written by a newer
//! schema version is never overwritten.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dcmetric_core::corpus::{encode_pair, MultiLevelExample, SimpleTokenizer, Vocabulary};
use dcmetric_core::model::{MetricModel, Mode};
use dcmetric_core::pca::project_2d;
use dcmetric_core::stats::five_number_summary;

use crate::error::{Result, ToolError};
use crate::pipeline::SweepRow;

pub const DUMP_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub count: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Per-level score samples plus summary quantiles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreDistributionDump {
    pub schema_version: u32,
    pub levels: Vec<LevelSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureProjectionDump {
    pub schema_version: u32,
    pub method: String,
    pub explained_variance: [f64; 2],
    pub points: usize,
}

/// Shared guard: refuses to overwrite a sidecar produced by a newer schema.
fn check_sidecar_version(path: &Path) -> Result<()> {
    #[derive(Deserialize)]
    struct VersionOnly {
        schema_version: u32,
    }
    if path.exists() {
        let text = fs::read_to_string(path)?;
        if let Ok(v) = serde_json::from_str::<VersionOnly>(&text) {
            if v.schema_version > DUMP_SCHEMA_VERSION {
                return Err(ToolError::DumpVersion {
                    found: v.schema_version,
                    supported: DUMP_SCHEMA_VERSION,
                });
            }
        }
    }
    Ok(())
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Loads a score-distribution sidecar, rejecting newer schema versions.
pub fn load_score_dump(sidecar: &Path) -> Result<ScoreDistributionDump> {
    let text = fs::read_to_string(sidecar)?;
    let dump: ScoreDistributionDump = serde_json::from_str(&text)
        .map_err(|e| ToolError::Other(format!("bad dump sidecar: {e}")))?;
    if dump.schema_version > DUMP_SCHEMA_VERSION {
        return Err(ToolError::DumpVersion {
            found: dump.schema_version,
            supported: DUMP_SCHEMA_VERSION,
        });
    }
    Ok(dump)
}

/// Scores every pair of the corpus, groups by coherence level, writes
/// `level,score` CSV rows plus a quantile sidecar.
pub fn emit_score_distribution(
    model: &MetricModel,
    vocab: &Vocabulary,
    corpus: &[MultiLevelExample],
    out_csv: &Path,
) -> Result<ScoreDistributionDump> {
    if corpus.is_empty() {
        return Err(ToolError::Other("empty corpus".into()));
    }
    let sidecar = sidecar_path(out_csv);
    check_sidecar_version(&sidecar)?;

    let num_levels = corpus.iter().map(|ex| ex.num_levels()).max().unwrap_or(0);
    let mut per_level: Vec<Vec<f64>> = vec![Vec::new(); num_levels];
    let mut csv = String::from("level,score\n");
    for ex in corpus {
        for (j, level) in ex.levels.iter().enumerate() {
            for resp in level {
                let pair = encode_pair(
                    &ex.context,
                    resp,
                    vocab,
                    &SimpleTokenizer,
                    model.config.max_seq_len,
                )?;
                let score = model.forward_score(&pair)?;
                per_level[j].push(score);
                csv.push_str(&format!("{},{}\n", j + 1, score));
            }
        }
    }

    let levels = per_level
        .iter()
        .enumerate()
        .filter(|(_, scores)| !scores.is_empty())
        .map(|(j, scores)| {
            let [min, q25, median, q75, max] = five_number_summary(scores)?;
            Ok(LevelSummary {
                level: j + 1,
                count: scores.len(),
                min,
                q25,
                median,
                q75,
                max,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dump = ScoreDistributionDump {
        schema_version: DUMP_SCHEMA_VERSION,
        levels,
    };
    fs::write(out_csv, csv)?;
    fs::write(&sidecar, serde_json::to_string_pretty(&dump)? + "\n")?;
    Ok(dump)
}

/// Pools encoder features for every pair, projects onto the top two
/// principal components and writes `level,x,y` CSV rows plus metadata.
pub fn emit_feature_projection(
    model: &MetricModel,
    vocab: &Vocabulary,
    corpus: &[MultiLevelExample],
    out_csv: &Path,
) -> Result<FeatureProjectionDump> {
    let sidecar = sidecar_path(out_csv);
    check_sidecar_version(&sidecar)?;

    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for ex in corpus {
        for (j, level) in ex.levels.iter().enumerate() {
            for resp in level {
                let pair = encode_pair(
                    &ex.context,
                    resp,
                    vocab,
                    &SimpleTokenizer,
                    model.config.max_seq_len,
                )?;
                let cache = model.forward(&pair, Mode::Inference)?;
                features.push(cache.pooled().to_vec());
                labels.push(j + 1);
            }
        }
    }
    let projection = project_2d(&features)?;

    let mut csv = String::from("level,x,y\n");
    for (label, point) in labels.iter().zip(&projection.coords) {
        csv.push_str(&format!("{label},{},{}\n", point[0], point[1]));
    }
    let dump = FeatureProjectionDump {
        schema_version: DUMP_SCHEMA_VERSION,
        method: "pca".into(),
        explained_variance: projection.explained,
        points: labels.len(),
    };
    fs::write(out_csv, csv)?;
    fs::write(&sidecar, serde_json::to_string_pretty(&dump)? + "\n")?;
    Ok(dump)
}

/// Writes sweep rows as `objective,fraction,avg_correlation`, sorted by
/// objective then fraction ascending.
pub fn emit_sweep_curves(rows: &[SweepRow], out_csv: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(ToolError::Other("empty sweep report".into()));
    }
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.objective
            .cmp(b.objective)
            .then(a.fraction.partial_cmp(&b.fraction).unwrap())
    });
    let mut csv = String::from("objective,fraction,avg_correlation\n");
    for row in sorted {
        csv.push_str(&format!(
            "{},{},{}\n",
            row.objective, row.fraction, row.report.average
        ));
    }
    fs::write(out_csv, csv)?;
    Ok(())
}
