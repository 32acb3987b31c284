//! Layer-to-precision assignment.
//!
//! A plan gives every noise site (the tensor entering each stage, the loss
//! included) an activation level and, for parameter-bearing layers, a
//! parameter level. The planners pair levels sorted by descending
//! `max_error` with layers sorted by ascending sensitivity, which minimizes
//! `sum_i s_i * q_i` over all arrangements of the multiset (rearrangement
//! inequality). Ties in sensitivity go to the lower layer index.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sensitivity::SensitivityProfile;

/// Upper limit on distinct assignments visited by [`plan_bruteforce`].
pub const BRUTEFORCE_LIMIT: u128 = 1_000_000;

const TAG_RANDOM: u64 = 0x4A4D;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantLevel {
    pub id: String,
    /// Largest elementwise error the level may introduce.
    pub max_error: f64,
    /// Converting a value from a coarser level into this one is exact.
    pub lossless_upconvert: bool,
}

impl QuantLevel {
    pub fn new(id: impl Into<String>, max_error: f64) -> Self {
        Self {
            id: id.into(),
            max_error,
            lossless_upconvert: true,
        }
    }

    /// The error-free level.
    pub fn exact() -> Self {
        Self::new("exact", 0.0)
    }

    pub fn lossy(mut self) -> Self {
        self.lossless_upconvert = false;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |detail: &str| {
            Err(Error::InvalidLevel {
                id: self.id.clone(),
                detail: detail.to_string(),
            })
        };
        if self.id.is_empty() {
            return bad("empty id");
        }
        if !self.max_error.is_finite() || self.max_error < 0.0 {
            return bad("max_error must be finite and non-negative");
        }
        if self.max_error == 0.0 && self.id != "exact" {
            return bad("only the `exact` level may have max_error 0");
        }
        Ok(())
    }
}

/// The four noise magnitudes of the reference experiments.
pub fn sigma_levels() -> Vec<QuantLevel> {
    vec![
        QuantLevel::new("sigma1", 1e-3),
        QuantLevel::new("sigma2", 1e-5),
        QuantLevel::new("sigma3", 1e-7),
        QuantLevel::new("sigma4", 1e-10),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCount {
    pub level: QuantLevel,
    pub count: usize,
}

/// A multiset of levels, kept sorted by descending `max_error` (stable).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantLevelSet {
    entries: Vec<LevelCount>,
}

impl QuantLevelSet {
    pub fn new(entries: Vec<(QuantLevel, usize)>) -> Result<Self> {
        let mut seen: BTreeMap<&str, &QuantLevel> = BTreeMap::new();
        for (level, _) in &entries {
            level.validate()?;
            if let Some(other) = seen.insert(&level.id, level) {
                if other != level {
                    return Err(Error::InvalidLevel {
                        id: level.id.clone(),
                        detail: "id used for two different levels".into(),
                    });
                }
            }
        }
        let mut merged: Vec<LevelCount> = Vec::new();
        for (level, count) in entries {
            match merged.iter_mut().find(|e| e.level.id == level.id) {
                Some(e) => e.count += count,
                None => merged.push(LevelCount { level, count }),
            }
        }
        merged.sort_by(|a, b| b.level.max_error.total_cmp(&a.level.max_error));
        Ok(Self { entries: merged })
    }

    /// Splits `n` slots over `levels` as evenly as possible; the remainder
    /// goes to the coarsest levels.
    pub fn partition(levels: Vec<QuantLevel>, n: usize) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidConfig("level list is empty".into()));
        }
        let mut set = Self::new(levels.into_iter().map(|l| (l, 0)).collect())?;
        let k = set.entries.len();
        for (i, e) in set.entries.iter_mut().enumerate() {
            e.count = n / k + usize::from(i < n % k);
        }
        Ok(set)
    }

    pub fn entries(&self) -> &[LevelCount] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.count).sum()
    }

    /// Every slot, coarsest first.
    pub fn expanded(&self) -> Vec<QuantLevel> {
        self.entries
            .iter()
            .flat_map(|e| core::iter::repeat_n(e.level.clone(), e.count))
            .collect()
    }

    /// The same levels with counts rescaled to sum to `n` (largest
    /// remainder, ties to coarser levels).
    pub fn resized(&self, n: usize) -> Self {
        let total = self.total();
        let mut entries = self.entries.clone();
        if total == 0 {
            return Self { entries };
        }
        let mut rems: Vec<(usize, usize)> = Vec::with_capacity(entries.len());
        let mut used = 0;
        for (i, e) in entries.iter_mut().enumerate() {
            let scaled = e.count * n;
            e.count = scaled / total;
            used += e.count;
            rems.push((scaled % total, i));
        }
        rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in rems.iter().take(n - used) {
            entries[i].count += 1;
        }
        Self { entries }
    }

    /// Number of distinct arrangements of the multiset over `total()` slots.
    pub fn arrangements(&self) -> Option<u128> {
        let mut count: u128 = 1;
        let mut placed: u128 = 0;
        for e in &self.entries {
            for j in 1..=e.count as u128 {
                placed += 1;
                count = count.checked_mul(placed)? / j;
            }
        }
        Some(count)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// Parameters and incoming activation of a layer share one level.
    Shared,
    /// Parameter and activation levels are assigned independently.
    Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutPlan {
    pub mode: PlanMode,
    pub provenance: String,
    /// Level of the tensor entering each site, input to output.
    pub activation: Vec<QuantLevel>,
    /// Level of each layer's parameters; `None` for parameter-free stages.
    pub params: Vec<Option<QuantLevel>>,
}

impl LayoutPlan {
    fn shared(provenance: &str, activation: Vec<QuantLevel>, has_params: &[bool]) -> Self {
        let params = activation
            .iter()
            .zip(has_params)
            .map(|(l, &p)| p.then(|| l.clone()))
            .collect();
        Self {
            mode: PlanMode::Shared,
            provenance: provenance.into(),
            activation,
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.activation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activation.is_empty()
    }

    /// Drops parameter levels on stages without parameters.
    pub fn with_param_mask(mut self, has_params: &[bool]) -> Self {
        for (p, &has) in self.params.iter_mut().zip(has_params) {
            if !has {
                *p = None;
            }
        }
        self
    }

    pub fn activation_errors(&self) -> Vec<f64> {
        self.activation.iter().map(|l| l.max_error).collect()
    }

    /// Checks that activations consume `levels` exactly, and so do parameter
    /// levels in split mode (rescaled to the parameter-bearing count).
    pub fn validate(&self, levels: &QuantLevelSet) -> Result<()> {
        if self.params.len() != self.activation.len() {
            return Err(Error::NotABijection(format!(
                "{} activation levels but {} parameter entries",
                self.activation.len(),
                self.params.len()
            )));
        }
        check_multiset("activation", self.activation.iter(), levels)?;
        if self.mode == PlanMode::Split {
            let assigned: Vec<&QuantLevel> = self.params.iter().flatten().collect();
            check_multiset("parameter", assigned.iter().copied(), &levels.resized(assigned.len()))?;
        }
        Ok(())
    }
}

fn check_multiset<'a>(
    aspect: &str,
    assigned: impl Iterator<Item = &'a QuantLevel>,
    levels: &QuantLevelSet,
) -> Result<()> {
    let mut remaining: BTreeMap<&str, (usize, &QuantLevel)> = levels
        .entries
        .iter()
        .map(|e| (e.level.id.as_str(), (e.count, &e.level)))
        .collect();
    for l in assigned {
        match remaining.get_mut(l.id.as_str()) {
            Some((n, level)) if *n > 0 && *level == l => *n -= 1,
            _ => {
                return Err(Error::NotABijection(format!(
                    "{aspect} level `{}` used more often than available",
                    l.id
                )))
            }
        }
    }
    if let Some((id, _)) = remaining.iter().find(|(_, (n, _))| *n > 0) {
        return Err(Error::NotABijection(format!("{aspect} level `{id}` left unused")));
    }
    Ok(())
}

/// Pairs the coarsest levels with the smallest keys.
pub fn assign_by_key(keys: &[f64], levels: &QuantLevelSet) -> Result<Vec<QuantLevel>> {
    if levels.total() != keys.len() {
        return Err(Error::LevelCount {
            levels: levels.total(),
            units: keys.len(),
        });
    }
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    let sorted = levels.expanded();
    let mut out = vec![QuantLevel::exact(); keys.len()];
    for (pos, &layer) in order.iter().enumerate() {
        out[layer] = sorted[pos].clone();
    }
    Ok(out)
}

fn has_params(profile: &SensitivityProfile) -> Vec<bool> {
    (0..profile.len()).map(|k| profile.has_params(k)).collect()
}

/// Levels by ascending input-gradient norm, shared between activation and parameters.
pub fn plan_gradient(profile: &SensitivityProfile, levels: &QuantLevelSet) -> Result<LayoutPlan> {
    let norms = profile.input_norms()?;
    let assigned = assign_by_key(&norms, levels)?;
    Ok(LayoutPlan::shared("gradient", assigned, &has_params(profile)))
}

/// `(1/m) sum_i input_grad_norm_i * max_error(activation level_i)`.
pub fn bound_value(profile: &SensitivityProfile, plan: &LayoutPlan) -> Result<f64> {
    let norms = profile.input_norms()?;
    if norms.len() != plan.len() {
        return Err(Error::PlanMismatch {
            plan: plan.len(),
            network: norms.len(),
        });
    }
    Ok(weighted_sum(&norms, &plan.activation) / profile.sample_count.max(1) as f64)
}

fn weighted_sum(norms: &[f64], levels: &[QuantLevel]) -> f64 {
    norms.iter().zip(levels).map(|(n, l)| n * l.max_error).sum()
}

/// Coarsest level at the input, precision non-decreasing toward the output.
///
/// Requires every finer level to accept lossless conversion from coarser ones.
pub fn plan_trivial(levels: &QuantLevelSet, n_layers: usize) -> Result<LayoutPlan> {
    if levels.total() != n_layers {
        return Err(Error::LevelCount {
            levels: levels.total(),
            units: n_layers,
        });
    }
    for coarse in &levels.entries {
        for fine in &levels.entries {
            if fine.level.max_error < coarse.level.max_error && !fine.level.lossless_upconvert {
                return Err(Error::LossyUpconvert {
                    coarse: coarse.level.id.clone(),
                    fine: fine.level.id.clone(),
                });
            }
        }
    }
    Ok(LayoutPlan::shared("trivial", levels.expanded(), &vec![true; n_layers]))
}

/// Plan for a network whose parameters carry storage error.
///
/// Shared mode ranks layers by input norm plus parameter norm. Split mode
/// ranks activations by input norm and parameters by parameter norm; the
/// parameter side gets its own copy of the multiset, rescaled to the number
/// of parameter-bearing layers.
pub fn plan_storage_aware(
    input_profile: &SensitivityProfile,
    param_profile: &SensitivityProfile,
    levels: &QuantLevelSet,
    mode: PlanMode,
) -> Result<LayoutPlan> {
    let inputs = input_profile.input_norms()?;
    let params = param_profile.param_norms()?;
    if inputs.len() != params.len() {
        return Err(Error::PlanMismatch {
            plan: params.len(),
            network: inputs.len(),
        });
    }
    let mask: Vec<bool> = params.iter().map(Option::is_some).collect();
    match mode {
        PlanMode::Shared => {
            let keys: Vec<f64> = inputs.iter().zip(&params).map(|(a, b)| a + b.unwrap_or(0.0)).collect();
            let assigned = assign_by_key(&keys, levels)?;
            Ok(LayoutPlan::shared("storage_aware", assigned, &mask))
        }
        PlanMode::Split => {
            let activation = assign_by_key(&inputs, levels)?;
            let bearing: Vec<usize> = (0..params.len()).filter(|&k| mask[k]).collect();
            let keys: Vec<f64> = bearing.iter().map(|&k| params[k].unwrap_or(0.0)).collect();
            let param_levels = assign_by_key(&keys, &levels.resized(bearing.len()))?;
            let mut out = vec![None; params.len()];
            for (&k, l) in bearing.iter().zip(param_levels) {
                out[k] = Some(l);
            }
            Ok(LayoutPlan {
                mode: PlanMode::Split,
                provenance: "storage_aware".into(),
                activation,
                params: out,
            })
        }
    }
}

/// Levels by ascending Hessian trace.
///
/// A parameter-free stage is ranked with the trace of the nearest preceding
/// parameter-bearing layer (the first following one if none precedes), so
/// the pairing still consumes the multiset over every site.
pub fn plan_hessian_baseline(profile: &SensitivityProfile, levels: &QuantLevelSet) -> Result<LayoutPlan> {
    let traces = profile.traces()?;
    let first = traces.iter().flatten().next().copied().ok_or(Error::MissingStatistic {
        stat: "hessian_trace",
        layer: 0,
    })?;
    let mut last = first;
    let keys: Vec<f64> = traces
        .iter()
        .map(|t| {
            if let Some(t) = t {
                last = *t;
            }
            last
        })
        .collect();
    let assigned = assign_by_key(&keys, levels)?;
    Ok(LayoutPlan::shared("hessian_baseline", assigned, &has_params(profile)))
}

pub enum Objective<'a> {
    Bound,
    /// Any plan score, for example a simulated loss change.
    Custom(&'a mut dyn FnMut(&LayoutPlan) -> Result<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BruteForce {
    pub plan: LayoutPlan,
    pub value: f64,
    /// Distinct assignments evaluated.
    pub evaluated: u64,
}

/// Exhaustive search over distinct shared-mode assignments.
///
/// Assignments are visited in lexicographic order of level rank (coarsest
/// level = rank 0) and the first minimizer is kept.
pub fn plan_bruteforce(
    profile: &SensitivityProfile,
    levels: &QuantLevelSet,
    mut objective: Objective<'_>,
) -> Result<BruteForce> {
    let n = profile.len();
    if levels.total() != n {
        return Err(Error::LevelCount {
            levels: levels.total(),
            units: n,
        });
    }
    let count = levels.arrangements().unwrap_or(u128::MAX);
    if count > BRUTEFORCE_LIMIT {
        return Err(Error::SearchSpace {
            count,
            limit: BRUTEFORCE_LIMIT,
        });
    }
    let norms = match objective {
        Objective::Bound => Some(profile.input_norms()?),
        Objective::Custom(_) => None,
    };
    let distinct: Vec<&QuantLevel> = levels.entries.iter().map(|e| &e.level).collect();
    let mut ranks: Vec<usize> = levels
        .entries
        .iter()
        .enumerate()
        .flat_map(|(i, e)| core::iter::repeat_n(i, e.count))
        .collect();
    let mask = has_params(profile);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut evaluated = 0u64;
    loop {
        let value = match (&mut objective, &norms) {
            (Objective::Bound, Some(norms)) => {
                let s: f64 = norms.iter().zip(&ranks).map(|(v, &r)| v * distinct[r].max_error).sum();
                s / profile.sample_count.max(1) as f64
            }
            (Objective::Custom(f), _) => f(&rank_plan(&ranks, &distinct, &mask))?,
            (Objective::Bound, None) => unreachable!(),
        };
        evaluated += 1;
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, ranks.clone()));
        }
        if !next_permutation(&mut ranks) {
            break;
        }
    }
    let (value, ranks) = best.expect("at least one assignment");
    Ok(BruteForce {
        plan: rank_plan(&ranks, &distinct, &mask),
        value,
        evaluated,
    })
}

fn rank_plan(ranks: &[usize], distinct: &[&QuantLevel], mask: &[bool]) -> LayoutPlan {
    let activation = ranks.iter().map(|&r| distinct[r].clone()).collect();
    LayoutPlan::shared("bruteforce", activation, mask)
}

/// Next lexicographic permutation in place; `false` after the last one.
fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// A uniformly shuffled shared-mode assignment, the `index`-th of a family.
pub fn plan_random(
    profile: &SensitivityProfile,
    levels: &QuantLevelSet,
    seed: u64,
    index: usize,
) -> Result<LayoutPlan> {
    if levels.total() != profile.len() {
        return Err(Error::LevelCount {
            levels: levels.total(),
            units: profile.len(),
        });
    }
    let mut assigned = levels.expanded();
    rng::shuffle(&mut rng::stream(seed, &[TAG_RANDOM, index as u64]), &mut assigned);
    let mut plan = LayoutPlan::shared("random", assigned, &has_params(profile));
    plan.provenance = format!("random_{index}");
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn levels(qs: &[f64]) -> QuantLevelSet {
        QuantLevelSet::new(qs.iter().map(|&q| (QuantLevel::new(format!("q{q:e}"), q), 1)).collect()).unwrap()
    }

    fn errors(plan: &LayoutPlan) -> Vec<f64> {
        plan.activation_errors()
    }

    #[test]
    fn gradient_plan_pairs_sorted_sequences() {
        let p = SensitivityProfile::from_input_norms(&[5.0, 0.2, 3.1, 0.01], 1);
        let plan = plan_gradient(&p, &levels(&[1e-3, 1e-5, 1e-5, 1e-7])).unwrap();
        assert_eq!(errors(&plan), vec![1e-7, 1e-5, 1e-5, 1e-3]);
        let b = bound_value(&p, &plan).unwrap();
        let expected = 5.0 * 1e-7 + 0.2 * 1e-5 + 3.1 * 1e-5 + 0.01 * 1e-3;
        assert!((b - expected).abs() <= 1e-18);
        assert!((b - 4.35e-5).abs() <= 1e-18);
        let bf = plan_bruteforce(&p, &levels(&[1e-3, 1e-5, 1e-5, 1e-7]), Objective::Bound).unwrap();
        assert_eq!(bf.evaluated, 12);
        assert!((bf.value - b).abs() <= 1e-18);
    }

    #[test]
    fn identical_levels_give_identity_order() {
        let p = SensitivityProfile::from_input_norms(&[3.0, 1.0, 2.0], 1);
        let set = QuantLevelSet::new(vec![(QuantLevel::new("a", 1e-3), 3)]).unwrap();
        let plan = plan_gradient(&p, &set).unwrap();
        assert!(plan.activation.iter().all(|l| l.id == "a"));
        plan.validate(&set).unwrap();
    }

    #[test]
    fn multinomial_count_and_lexicographic_tie() {
        let set = QuantLevelSet::new(vec![
            (QuantLevel::new("a", 1e-3), 2),
            (QuantLevel::new("b", 1e-5), 1),
            (QuantLevel::new("c", 1e-7), 1),
        ])
        .unwrap();
        assert_eq!(set.arrangements(), Some(12));
        let p = SensitivityProfile::from_input_norms(&[1.0, 1.0], 1);
        let tie = QuantLevelSet::new(vec![(QuantLevel::new("a", 1e-3), 1), (QuantLevel::new("b", 1e-3), 1)]).unwrap();
        let bf = plan_bruteforce(&p, &tie, Objective::Bound).unwrap();
        assert_eq!(bf.evaluated, 2);
        assert_eq!(bf.plan.activation[0].id, "a");
    }

    #[test]
    fn zero_errors_bound_zero() {
        let p = SensitivityProfile::from_input_norms(&[1.0, 2.0], 1);
        let set = QuantLevelSet::new(vec![(QuantLevel::exact(), 2)]).unwrap();
        assert_eq!(bound_value(&p, &plan_gradient(&p, &set).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let p = SensitivityProfile::from_input_norms(&[1.0, 2.0], 1);
        assert!(matches!(
            plan_gradient(&p, &levels(&[1e-3])),
            Err(Error::LevelCount { levels: 1, units: 2 })
        ));
    }

    #[test]
    fn trivial_plan_follows_precision_upward() {
        let set = levels(&[1e-15, 1e-3, 1e-7]);
        let plan = plan_trivial(&set, 3).unwrap();
        assert_eq!(errors(&plan), vec![1e-3, 1e-7, 1e-15]);
        let one = plan_trivial(&levels(&[1e-3]), 1).unwrap();
        assert_eq!(errors(&one), vec![1e-3]);
        let lossy = QuantLevelSet::new(vec![
            (QuantLevel::new("fp16", 1e-3), 1),
            (QuantLevel::new("fp32", 1e-7).lossy(), 1),
        ])
        .unwrap();
        let err = plan_trivial(&lossy, 2).unwrap_err();
        assert_eq!(
            err,
            Error::LossyUpconvert {
                coarse: "fp16".into(),
                fine: "fp32".into()
            }
        );
    }

    #[test]
    fn storage_aware_shared_with_zero_param_norms_matches_gradient() {
        let p = SensitivityProfile::from_input_norms(&[0.5, 2.0, 0.1, 1.0], 1).with_param_norms(&[
            Some(0.0),
            Some(0.0),
            None,
            Some(0.0),
        ]);
        let set = levels(&[1e-3, 1e-5, 1e-7, 1e-10]);
        let a = plan_storage_aware(&p, &p, &set, PlanMode::Shared).unwrap();
        let b = plan_gradient(&p, &set).unwrap();
        assert_eq!(a.activation, b.activation);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn storage_aware_equal_inputs_follow_param_norms() {
        let p = SensitivityProfile::from_input_norms(&[1.0, 1.0, 1.0], 1).with_param_norms(&[
            Some(3.0),
            Some(1.0),
            Some(2.0),
        ]);
        let plan = plan_storage_aware(&p, &p, &levels(&[1e-3, 1e-5, 1e-7]), PlanMode::Shared).unwrap();
        assert_eq!(errors(&plan), vec![1e-7, 1e-3, 1e-5]);
    }

    #[test]
    fn split_mode_uses_a_rescaled_copy_for_params() {
        let p = SensitivityProfile::from_input_norms(&[4.0, 3.0, 2.0, 1.0], 1).with_param_norms(&[
            Some(1.0),
            None,
            Some(5.0),
            None,
        ]);
        let set = levels(&[1e-3, 1e-5, 1e-7, 1e-10]);
        let plan = plan_storage_aware(&p, &p, &set, PlanMode::Split).unwrap();
        assert_eq!(errors(&plan), vec![1e-10, 1e-7, 1e-5, 1e-3]);
        let params: Vec<Option<f64>> = plan.params.iter().map(|l| l.as_ref().map(|l| l.max_error)).collect();
        assert_eq!(params, vec![Some(1e-3), None, Some(1e-5), None]);
        plan.validate(&set).unwrap();
    }

    #[test]
    fn hessian_baseline_sorts_traces() {
        let p = SensitivityProfile::from_input_norms(&[0.0; 3], 1).with_traces(&[Some(10.0), Some(1.0), Some(5.0)]);
        let plan = plan_hessian_baseline(&p, &levels(&[1e-3, 1e-5, 1e-7])).unwrap();
        assert_eq!(errors(&plan), vec![1e-7, 1e-3, 1e-5]);
        let eq = SensitivityProfile::from_input_norms(&[0.0; 3], 1).with_traces(&[Some(1.0); 3]);
        let plan = plan_hessian_baseline(&eq, &levels(&[1e-3, 1e-5, 1e-7])).unwrap();
        assert_eq!(errors(&plan), vec![1e-3, 1e-5, 1e-7]);
        let none = SensitivityProfile::from_input_norms(&[0.0; 3], 1).with_param_norms(&[Some(1.0), None, None]);
        assert!(matches!(
            plan_hessian_baseline(&none, &levels(&[1e-3, 1e-5, 1e-7])),
            Err(Error::MissingStatistic { .. })
        ));
    }

    #[test]
    fn param_free_stages_rank_with_preceding_trace() {
        let p = SensitivityProfile::from_input_norms(&[0.0; 4], 1).with_traces(&[Some(9.0), None, Some(1.0), None]);
        let set = QuantLevelSet::new(vec![(QuantLevel::new("a", 1e-3), 2), (QuantLevel::new("b", 1e-7), 2)]).unwrap();
        let plan = plan_hessian_baseline(&p, &set).unwrap();
        let ids: Vec<&str> = plan.activation.iter().map(|l| l.id.as_str()).collect();
        assert_eq!(ids, vec!["b", "b", "a", "a"]);
        assert!(plan.params[1].is_none());
    }

    #[test]
    fn partition_gives_remainder_to_coarse_levels() {
        let set = QuantLevelSet::partition(sigma_levels(), 10).unwrap();
        let counts: Vec<usize> = set.entries().iter().map(|e| e.count).collect();
        assert_eq!(counts, vec![3, 3, 2, 2]);
        let r = set.resized(5);
        assert_eq!(r.total(), 5);
        let counts: Vec<usize> = r.entries().iter().map(|e| e.count).collect();
        assert_eq!(counts, vec![2, 1, 1, 1]);
    }

    #[test]
    fn invalid_levels_rejected() {
        assert!(QuantLevelSet::new(vec![(QuantLevel::new("z", 0.0), 1)]).is_err());
        assert!(QuantLevelSet::new(vec![(QuantLevel::new("n", -1.0), 1)]).is_err());
        assert!(QuantLevelSet::new(vec![(QuantLevel::new("a", 1e-3), 1), (QuantLevel::new("a", 1e-5), 1)]).is_err());
    }

    #[test]
    fn validate_catches_overuse() {
        let set = levels(&[1e-3, 1e-5]);
        let p = SensitivityProfile::from_input_norms(&[1.0, 2.0], 1);
        let mut plan = plan_gradient(&p, &set).unwrap();
        plan.activation[0] = plan.activation[1].clone();
        assert!(matches!(plan.validate(&set), Err(Error::NotABijection(_))));
    }

    #[test]
    fn random_plans_are_valid_and_seeded() {
        let p = SensitivityProfile::from_input_norms(&[1.0; 6], 1);
        let set = QuantLevelSet::partition(sigma_levels(), 6).unwrap();
        let a = plan_random(&p, &set, 3, 0).unwrap();
        a.validate(&set).unwrap();
        assert_eq!(a, plan_random(&p, &set, 3, 0).unwrap());
        assert_eq!(a.provenance, "random_0");
    }

    #[test]
    fn search_space_guard() {
        let p = SensitivityProfile::from_input_norms(&[1.0; 12], 1);
        let set = QuantLevelSet::new(
            (0..12)
                .map(|i| (QuantLevel::new(format!("l{i}"), 1.0 + i as f64), 1))
                .collect(),
        )
        .unwrap();
        assert!(matches!(
            plan_bruteforce(&p, &set, Objective::Bound),
            Err(Error::SearchSpace { .. })
        ));
    }
}
