//! Versioned JSON documents for profiles, plans and noise reports, and the
//! per-trial CSV table.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use qlayout_core::layout::{LayoutPlan, PlanMode, QuantLevel, QuantLevelSet};
use qlayout_core::network::outer_index;
use qlayout_core::noise::NoiseReport;
use qlayout_core::sensitivity::SensitivityProfile;

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Any document body tagged with its kind and schema version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: u32,
    pub kind: String,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(kind: &str, body: T) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: kind.into(),
            body,
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json(value)?).map_err(|e| Error::io(path, e))
}

/// Reads a versioned document, checking its kind and schema version.
pub fn read_doc<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Versioned<T> = serde_json::from_str(&text)?;
    if doc.kind != kind {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("expected a `{kind}` document, found `{}`", doc.kind),
        });
    }
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema {
            kind: kind.into(),
            found: doc.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(doc.body)
}

pub fn profile_doc(profile: &SensitivityProfile) -> Versioned<SensitivityProfile> {
    Versioned::new("sensitivity_profile", profile.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppliesTo {
    Activation,
    Params,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub layer_index: usize,
    /// Position counted from the loss (loss = 1).
    pub outer_index: usize,
    pub level_id: String,
    pub max_error: f64,
    pub applies_to: AppliesTo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDoc {
    pub mode: PlanMode,
    pub provenance: String,
    pub levels: QuantLevelSet,
    pub layers: Vec<PlanEntry>,
    /// Present for split plans: the parameter side uses its own copy of the
    /// level multiset, rescaled to the parameter-bearing layers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl PlanDoc {
    pub fn new(plan: &LayoutPlan, levels: &QuantLevelSet) -> Self {
        let n = plan.len();
        let entry = |k: usize, l: &QuantLevel, applies_to| PlanEntry {
            layer_index: k,
            outer_index: outer_index(n - 1, k),
            level_id: l.id.clone(),
            max_error: l.max_error,
            applies_to,
        };
        let mut layers = Vec::new();
        for (k, (a, p)) in plan.activation.iter().zip(&plan.params).enumerate() {
            match (plan.mode, p) {
                (PlanMode::Shared, Some(_)) => layers.push(entry(k, a, AppliesTo::Both)),
                (_, None) => layers.push(entry(k, a, AppliesTo::Activation)),
                (PlanMode::Split, Some(p)) => {
                    layers.push(entry(k, a, AppliesTo::Activation));
                    layers.push(entry(k, p, AppliesTo::Params));
                }
            }
        }
        Self {
            mode: plan.mode,
            provenance: plan.provenance.clone(),
            levels: levels.clone(),
            layers,
            note: (plan.mode == PlanMode::Split)
                .then(|| "parameter levels consume a separate copy of the level multiset".to_string()),
        }
    }

    pub fn to_plan(&self) -> Result<LayoutPlan> {
        let n = self.layers.iter().map(|e| e.layer_index + 1).max().unwrap_or(0);
        let find = |id: &str| {
            self.levels
                .entries()
                .iter()
                .find(|e| e.level.id == id)
                .map(|e| e.level.clone())
                .ok_or_else(|| Error::Config(format!("plan refers to unknown level `{id}`")))
        };
        let mut activation: Vec<Option<QuantLevel>> = vec![None; n];
        let mut params = vec![None; n];
        for e in &self.layers {
            let l = find(&e.level_id)?;
            match e.applies_to {
                AppliesTo::Activation => activation[e.layer_index] = Some(l),
                AppliesTo::Params => params[e.layer_index] = Some(l),
                AppliesTo::Both => {
                    activation[e.layer_index] = Some(l.clone());
                    params[e.layer_index] = Some(l);
                }
            }
        }
        let activation = activation
            .into_iter()
            .enumerate()
            .map(|(k, l)| l.ok_or_else(|| Error::Config(format!("plan has no activation level for layer {k}"))))
            .collect::<Result<Vec<_>>>()?;
        let plan = LayoutPlan {
            mode: self.mode,
            provenance: self.provenance.clone(),
            activation,
            params,
        };
        plan.validate(&self.levels)?;
        Ok(plan)
    }
}

pub fn report_doc(report: &NoiseReport) -> Versioned<NoiseReport> {
    Versioned::new("noise_report", report.clone())
}

/// One row per trial: `algorithm,trial,seed,baseline_loss,noisy_loss,delta`.
pub fn write_trials_csv(path: &Path, reports: &[(String, NoiseReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["algorithm", "trial", "seed", "baseline_loss", "noisy_loss", "delta"])?;
    for (name, r) in reports {
        for (t, (loss, delta)) in r.trial_losses.iter().zip(&r.deltas).enumerate() {
            w.write_record([
                name.clone(),
                t.to_string(),
                r.seed.to_string(),
                format!("{:?}", r.baseline_loss),
                format!("{loss:?}"),
                format!("{delta:?}"),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use qlayout_core::layout::{plan_gradient, plan_storage_aware, sigma_levels};

    #[test]
    fn plan_doc_round_trip() {
        let p = SensitivityProfile::from_input_norms(&[4.0, 3.0, 2.0, 1.0], 1).with_param_norms(&[
            Some(1.0),
            None,
            Some(5.0),
            None,
        ]);
        let set = QuantLevelSet::partition(sigma_levels(), 4).unwrap();
        for plan in [
            plan_gradient(&p, &set).unwrap(),
            plan_storage_aware(&p, &p, &set, PlanMode::Split).unwrap(),
        ] {
            let doc = PlanDoc::new(&plan, &set);
            let json = serde_json::to_string(&Versioned::new("layout_plan", doc)).unwrap();
            let back: Versioned<PlanDoc> = serde_json::from_str(&json).unwrap();
            assert_eq!(back.schema_version, SCHEMA_VERSION);
            assert_eq!(back.body.to_plan().unwrap(), plan);
        }
    }

    #[test]
    fn outer_index_counts_from_loss() {
        let p = SensitivityProfile::from_input_norms(&[1.0, 2.0, 3.0], 1);
        let set = QuantLevelSet::partition(sigma_levels(), 3).unwrap();
        let doc = PlanDoc::new(&plan_gradient(&p, &set).unwrap(), &set);
        let idx: Vec<usize> = doc.layers.iter().map(|e| e.outer_index).collect();
        assert_eq!(idx, vec![3, 2, 1]);
    }

    #[test]
    fn wrong_kind_or_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let p = SensitivityProfile::from_input_norms(&[1.0], 1);
        write_json(&path, &profile_doc(&p)).unwrap();
        assert_eq!(read_doc::<SensitivityProfile>(&path, "sensitivity_profile").unwrap(), p);
        assert!(read_doc::<SensitivityProfile>(&path, "noise_report").is_err());
        let mut doc = profile_doc(&p);
        doc.schema_version = 99;
        write_json(&path, &doc).unwrap();
        assert!(matches!(
            read_doc::<SensitivityProfile>(&path, "sensitivity_profile"),
            Err(Error::Schema { found: 99, .. })
        ));
    }
}
