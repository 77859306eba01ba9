//! Spatial-reuse group formation.
//!
//! A group is a set of AP-STA pairs, at most one per AP, that can all be
//! served in the same TXOP while every receiver keeps its SINR at or above
//! the capture threshold. A plan partitions every pair into exactly one
//! group, so each pair is scheduled with the same multiplicity.
//!
//! Plans are ranked by proportional fairness over pairs: a pair served by
//! group `g` earns `p_tx(g) * n_i(g)` packets per contention win on
//! average, where `p_tx(g)` is the chance the group is triggered and
//! `n_i(g)` is the pair's A-MPDU size at its in-group MCS. The optimizer
//! maximizes the product of those shares, i.e. the sum of their logs.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::deployment::Deployment;
use crate::error::GroupingError;
use crate::params::SimParams;
use crate::phy::{self, LinkMap, McsEntry};

/// Pair counts above this use the greedy planner instead of exact search.
pub const EXACT_SEARCH_LIMIT: usize = 24;

/// Relative tolerance under which two plan objectives count as tied.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Policy {
    /// Groups of any size.
    Unc,
    /// At most two pairs per group.
    Max2,
}

impl Policy {
    pub fn max_size(self) -> Option<usize> {
        match self {
            Policy::Unc => None,
            Policy::Max2 => Some(2),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Unc => "UNC",
            Policy::Max2 => "MAX2",
        })
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "UNC" => Ok(Policy::Unc),
            "MAX2" => Ok(Policy::Max2),
            other => Err(format!("unknown grouping policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairLink {
    pub ap: usize,
    pub sta: usize,
    pub solo_mcs: McsEntry,
    pub solo_snr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrGroup {
    /// Sorted by STA index.
    pub members: Vec<PairLink>,
    /// MCS of each member with every other member transmitting.
    pub per_member_mcs: Vec<McsEntry>,
    pub per_member_sinr: Vec<f64>,
}

impl SrGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn stas(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.sta).collect()
    }

    pub fn aps(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.ap).collect()
    }

    pub fn contains(&self, ap: usize, sta: usize) -> bool {
        self.members.iter().any(|m| m.ap == ap && m.sta == sta)
    }

    /// A-MPDU size of each member in a coordinated TXOP.
    pub fn packets_per_member(&self, params: &SimParams) -> Vec<u32> {
        self.per_member_mcs.iter().map(|m| phy::max_aggregation(m, params, true)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPlan {
    pub policy: Policy,
    /// Canonical order: sorted by smallest member STA.
    pub groups: Vec<SrGroup>,
    pub quality: Vec<f64>,
    /// Sum over pairs of ln(p_tx(group) * packets).
    pub objective: f64,
    pub exact: bool,
}

/// Solo link of every associated pair (in STA order); `None` when the pair
/// has no usable link for coordination (SNR below capture threshold, no
/// MCS, or not a single frame fits in a TXOP).
pub fn pair_links(deployment: &Deployment, params: &SimParams, links: &LinkMap) -> Vec<Option<PairLink>> {
    (0..deployment.num_stas())
        .map(|sta| {
            let ap = deployment.association[sta];
            let snr = links.snr_db(sta, ap);
            let mcs = phy::select_mcs(snr, &params.mcs_table)?;
            (snr >= params.capture_threshold && phy::max_aggregation(&mcs, params, true) > 0)
                .then_some(PairLink { ap, sta, solo_mcs: mcs, solo_snr: snr })
        })
        .collect()
}

fn evaluate_group(members: &[PairLink], params: &SimParams, links: &LinkMap) -> Option<SrGroup> {
    let aps: Vec<usize> = members.iter().map(|m| m.ap).collect();
    let mut per_member_mcs = Vec::with_capacity(members.len());
    let mut per_member_sinr = Vec::with_capacity(members.len());
    for m in members {
        let others: Vec<usize> = aps.iter().copied().filter(|&a| a != m.ap).collect();
        let sinr = links.sinr_db(m.sta, m.ap, &others);
        if sinr < params.capture_threshold {
            return None;
        }
        let mcs = phy::select_mcs(sinr, &params.mcs_table)?;
        if phy::max_aggregation(&mcs, params, true) == 0 {
            return None;
        }
        per_member_mcs.push(mcs);
        per_member_sinr.push(sinr);
    }
    Some(SrGroup { members: members.to_vec(), per_member_mcs, per_member_sinr })
}

/// Every compatible group of at most `max_size` pairs, in lexicographic
/// order of member STA indices. Compatibility is checked per subset: each
/// member's SINR is recomputed with all other members active.
pub fn enumerate_compatible_groups(deployment: &Deployment, params: &SimParams, max_size: Option<usize>) -> Vec<SrGroup> {
    let links = LinkMap::new(deployment, params).expect("deployment distances are positive");
    let pairs = pair_links(deployment, params, &links);
    enumerate_with(&pairs, deployment.num_aps(), params, &links, max_size)
}

fn enumerate_with(
    pairs: &[Option<PairLink>],
    num_aps: usize,
    params: &SimParams,
    links: &LinkMap,
    max_size: Option<usize>,
) -> Vec<SrGroup> {
    let cap = max_size.unwrap_or(usize::MAX);
    let usable: Vec<PairLink> = pairs.iter().flatten().copied().collect();
    let mut out = Vec::new();
    let mut chosen: Vec<PairLink> = Vec::new();
    let mut used_ap = vec![false; num_aps];
    // Depth-first over STA order yields lexicographic order directly.
    fn walk(
        start: usize,
        usable: &[PairLink],
        chosen: &mut Vec<PairLink>,
        used_ap: &mut [bool],
        cap: usize,
        params: &SimParams,
        links: &LinkMap,
        out: &mut Vec<SrGroup>,
    ) {
        for i in start..usable.len() {
            let p = usable[i];
            if used_ap[p.ap] {
                continue;
            }
            chosen.push(p);
            used_ap[p.ap] = true;
            if let Some(g) = evaluate_group(chosen, params, links) {
                out.push(g);
            }
            if chosen.len() < cap {
                walk(i + 1, usable, chosen, used_ap, cap, params, links, out);
            }
            used_ap[p.ap] = false;
            chosen.pop();
        }
    }
    walk(0, &usable, &mut chosen, &mut used_ap, cap, params, links, &mut out);
    out
}

/// Probability that `group` is the one triggered by a contention win:
/// each AP wins with probability 1/K and then cycles over its `G_a` groups.
pub fn transmission_probability(group: &SrGroup, groups_per_ap: &[usize]) -> f64 {
    let k = groups_per_ap.len() as f64;
    group.members.iter().map(|m| 1.0 / k / groups_per_ap[m.ap] as f64).sum()
}

/// Expected packets delivered per contention win attributable to `group`:
/// `p_tx(group) * sum of member A-MPDU sizes`.
pub fn group_quality(group: &SrGroup, groups_per_ap: &[usize], params: &SimParams) -> f64 {
    let packets: u32 = group.packets_per_member(params).iter().sum();
    transmission_probability(group, groups_per_ap) * f64::from(packets)
}

/// Log share of every member: ln(p_tx * n_i), summed in member order.
fn log_share(group: &SrGroup, groups_per_ap: &[usize], params: &SimParams) -> f64 {
    let p = transmission_probability(group, groups_per_ap);
    group.packets_per_member(params).iter().fold(0.0, |acc, &n| acc + (p * f64::from(n)).ln())
}

/// Objective of a partition given in canonical order.
pub fn plan_objective(groups: &[SrGroup], groups_per_ap: &[usize], params: &SimParams) -> f64 {
    groups.iter().fold(0.0, |acc, g| acc + log_share(g, groups_per_ap, params))
}

/// Groups containing a pair of each AP in any exact cover: every AP's
/// pairs land in distinct groups, so this equals its pair count.
pub fn groups_per_ap(deployment: &Deployment) -> Vec<usize> {
    (0..deployment.num_aps()).map(|ap| deployment.stas_of(ap).count()).collect()
}

struct Search<'a> {
    candidates: &'a [SrGroup],
    /// Candidate indices containing each STA, in lexicographic order.
    by_sta: Vec<Vec<usize>>,
    /// Contribution of each candidate and its per-STA member mask.
    value: Vec<f64>,
    mask: Vec<u64>,
    /// Best contribution any candidate offers each STA.
    best_pair: Vec<f64>,
    n: usize,
    chosen: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_> {
    fn bound(&self, covered: u64) -> f64 {
        (0..self.n).filter(|&s| covered & (1 << s) == 0).map(|s| self.best_pair[s]).sum()
    }

    fn improves(&self, value: f64) -> bool {
        match &self.best {
            None => true,
            Some((b, _)) => value > b + TIE_EPS * b.abs().max(1.0),
        }
    }

    fn run(&mut self, covered: u64, acc: f64) {
        let full = if self.n == 64 { u64::MAX } else { (1u64 << self.n) - 1 };
        if covered == full {
            if self.improves(acc) {
                self.best = Some((acc, self.chosen.clone()));
            }
            return;
        }
        if !self.improves(acc + self.bound(covered)) {
            return;
        }
        let first = (0..self.n).find(|&s| covered & (1 << s) == 0).expect("uncovered pair");
        for idx in 0..self.by_sta[first].len() {
            let c = self.by_sta[first][idx];
            if self.mask[c] & covered != 0 {
                continue;
            }
            self.chosen.push(c);
            self.run(covered | self.mask[c], acc + self.value[c]);
            self.chosen.pop();
        }
    }
}

/// Best partition of all pairs into compatible groups under `policy`.
///
/// Exact branch-and-bound over exact covers for up to
/// [`EXACT_SEARCH_LIMIT`] pairs; equal objectives resolve to the
/// lexicographically smallest partition. Larger instances fall back to
/// [`greedy_plan`].
pub fn optimize_plan(deployment: &Deployment, params: &SimParams, policy: Policy) -> Result<GroupPlan, GroupingError> {
    let links = LinkMap::new(deployment, params).expect("deployment distances are positive");
    let pairs = pair_links(deployment, params, &links);
    if let Some(sta) = pairs.iter().position(Option::is_none) {
        return Err(GroupingError::UnusableLink { ap: deployment.association[sta], sta });
    }
    let candidates = enumerate_with(&pairs, deployment.num_aps(), params, &links, policy.max_size());
    let counts = groups_per_ap(deployment);
    let n = pairs.len();
    if n > EXACT_SEARCH_LIMIT {
        return Ok(greedy_plan(&candidates, n, &counts, params, policy));
    }
    let value: Vec<f64> = candidates.iter().map(|g| log_share(g, &counts, params)).collect();
    let mask: Vec<u64> = candidates.iter().map(|g| g.members.iter().fold(0u64, |m, p| m | 1 << p.sta)).collect();
    let mut by_sta = vec![Vec::new(); n];
    let mut best_pair = vec![f64::NEG_INFINITY; n];
    for (c, g) in candidates.iter().enumerate() {
        let p = transmission_probability(g, &counts);
        for (m, pk) in g.members.iter().zip(g.packets_per_member(params)) {
            by_sta[m.sta].push(c);
            best_pair[m.sta] = best_pair[m.sta].max((p * f64::from(pk)).ln());
        }
    }
    for list in &mut by_sta {
        list.sort_by(|&a, &b| candidates[a].stas().cmp(&candidates[b].stas()));
    }
    let mut search = Search { candidates: &candidates, by_sta, value, mask, best_pair, n, chosen: Vec::new(), best: None };
    search.run(0, 0.0);
    let (objective, chosen) = search.best.ok_or(GroupingError::Infeasible)?;
    let groups: Vec<SrGroup> = chosen.iter().map(|&c| search.candidates[c].clone()).collect();
    Ok(finish_plan(groups, objective, &counts, params, policy, true))
}

fn finish_plan(groups: Vec<SrGroup>, objective: f64, counts: &[usize], params: &SimParams, policy: Policy, exact: bool) -> GroupPlan {
    let quality = groups.iter().map(|g| group_quality(g, counts, params)).collect();
    GroupPlan { policy, groups, quality, objective, exact }
}

/// Greedy cover: repeatedly take, for the lowest uncovered pair, the
/// disjoint candidate with the largest gain over serving its members alone.
pub fn greedy_plan(candidates: &[SrGroup], n: usize, counts: &[usize], params: &SimParams, policy: Policy) -> GroupPlan {
    let solo: Vec<f64> = {
        let mut s = vec![f64::NEG_INFINITY; n];
        for g in candidates.iter().filter(|g| g.len() == 1) {
            s[g.members[0].sta] = log_share(g, counts, params);
        }
        s
    };
    let mut covered = vec![false; n];
    let mut groups = Vec::new();
    while let Some(first) = covered.iter().position(|c| !c) {
        let best = candidates
            .iter()
            .filter(|g| g.members.iter().any(|m| m.sta == first) && g.members.iter().all(|m| !covered[m.sta]))
            .map(|g| (log_share(g, counts, params) - g.members.iter().map(|m| solo[m.sta]).sum::<f64>(), g))
            .fold(None::<(f64, &SrGroup)>, |acc, (v, g)| match acc {
                Some((bv, _)) if bv >= v => acc,
                _ => Some((v, g)),
            })
            .expect("singleton always available")
            .1;
        for m in &best.members {
            covered[m.sta] = true;
        }
        groups.push(best.clone());
    }
    groups.sort_by_key(|g| g.stas());
    let objective = plan_objective(&groups, counts, params);
    finish_plan(groups, objective, counts, params, policy, false)
}

/// The unique group serving `(ap, sta)`.
pub fn plan_lookup(plan: &GroupPlan, ap: usize, sta: usize) -> Result<&SrGroup, GroupingError> {
    plan.groups.iter().find(|g| g.contains(ap, sta)).ok_or(GroupingError::PairNotFound { ap, sta })
}

impl GroupPlan {
    /// Index into `groups` for every STA.
    pub fn group_of_sta(&self, num_stas: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; num_stas];
        for (i, g) in self.groups.iter().enumerate() {
            for m in &g.members {
                if m.sta < num_stas {
                    out[m.sta] = Some(i);
                }
            }
        }
        out
    }

    /// Checks the exact-cover property against a deployment.
    pub fn covers(&self, deployment: &Deployment) -> bool {
        let mut seen = BTreeSet::new();
        for g in &self.groups {
            let mut aps = BTreeSet::new();
            for m in &g.members {
                if m.sta >= deployment.num_stas()
                    || deployment.association[m.sta] != m.ap
                    || !seen.insert(m.sta)
                    || !aps.insert(m.ap)
                {
                    return false;
                }
            }
        }
        seen.len() == deployment.num_stas()
    }

    /// One line per group: members as `ap:sta`, then per-member MCS and
    /// SINR, then the group quality.
    pub fn export(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# policy={} objective={:.6} exact={}", self.policy, self.objective, self.exact);
        for (g, q) in self.groups.iter().zip(&self.quality) {
            let members: Vec<String> = g.members.iter().map(|m| format!("{}:{}", m.ap, m.sta)).collect();
            let mcs: Vec<String> = g.per_member_mcs.iter().map(|m| m.index.to_string()).collect();
            let sinr: Vec<String> = g.per_member_sinr.iter().map(|s| format!("{s:.2}")).collect();
            let _ = writeln!(out, "{} mcs={} sinr={} quality={q:.4}", members.join(","), mcs.join(","), sinr.join(","));
        }
        out
    }

    /// SHA-256 of [`GroupPlan::export`], hex encoded.
    pub fn digest(&self) -> String {
        Sha256::digest(self.export().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Singleton plan: every pair alone, at its solo MCS.
    pub fn singletons(deployment: &Deployment, params: &SimParams) -> Result<GroupPlan, GroupingError> {
        let links = LinkMap::new(deployment, params).expect("deployment distances are positive");
        let pairs = pair_links(deployment, params, &links);
        let counts = groups_per_ap(deployment);
        let mut groups = Vec::new();
        for (sta, p) in pairs.iter().enumerate() {
            let p = p.ok_or(GroupingError::UnusableLink { ap: deployment.association[sta], sta })?;
            groups.push(SrGroup { members: vec![p], per_member_mcs: vec![p.solo_mcs], per_member_sinr: vec![p.solo_snr] });
        }
        let objective = plan_objective(&groups, &counts, params);
        Ok(finish_plan(groups, objective, &counts, params, Policy::Unc, false))
    }
}
