//! Patch selection: picks a fixed-size subset of a bag's patches to serve as
//! visual prompts, driven by mixture posteriors or simpler baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::{responsibilities, Centroids, GmmModel};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Em,
    Cluster,
    Random,
    None,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Em,
        Strategy::Cluster,
        Strategy::Random,
        Strategy::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Em => "em",
            Strategy::Cluster => "cluster",
            Strategy::Random => "random",
            Strategy::None => "none",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown selection strategy `{s}`")))
    }
}

/// Why a patch ended up in the selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    RareCluster,
    TopMax,
    TopMin,
    RandomPad,
    ClusterNearest,
    Random,
    Unscreened,
}

impl Provenance {
    pub fn label(self) -> &'static str {
        match self {
            Provenance::RareCluster => "rare-cluster",
            Provenance::TopMax => "top-max-posterior",
            Provenance::TopMin => "top-min-posterior",
            Provenance::RandomPad => "random-pad",
            Provenance::ClusterNearest => "cluster-nearest",
            Provenance::Random => "random",
            Provenance::Unscreened => "unscreened",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pick {
    pub index: usize,
    pub provenance: Provenance,
    pub class: Option<usize>,
    pub posterior: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub picks: Vec<Pick>,
    pub strategy: Strategy,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.picks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.picks.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.picks.iter().map(|p| p.index).collect()
    }

    /// Rows of `bag` in selection order.
    pub fn gather(&self, bag: &Matrix) -> Matrix {
        bag.select_rows(&self.indices())
    }

    /// Tab-separated `index, class, posterior, provenance` rows.
    pub fn to_text(&self) -> String {
        let mut s = String::from("index\tclass\tposterior\tprovenance\n");
        for p in &self.picks {
            let class = p.class.map_or_else(|| "-".to_string(), |c| c.to_string());
            let post = p
                .posterior
                .map_or_else(|| "-".to_string(), |v| format!("{v}"));
            s.push_str(&format!(
                "{}\t{class}\t{post}\t{}\n",
                p.index,
                p.provenance.label()
            ));
        }
        s
    }
}

fn check_budget(n_s: usize, n_p: usize) -> Result<()> {
    if n_s == 0 || n_s > n_p {
        return Err(Error::Selection(format!(
            "cannot select {n_s} of {n_p} patches"
        )));
    }
    Ok(())
}

/// Per-class top-K size: `max(1, ⌊N_S / (4·C_h)⌋)` on each side.
pub fn default_top_k(n_s: usize, c_h: usize) -> usize {
    (n_s / (4 * c_h.max(1))).max(1)
}

pub fn select_em(bag: &Matrix, model: &GmmModel, n_s: usize, seed: u64) -> Result<SelectionResult> {
    select_em_with_k(
        bag,
        model,
        n_s,
        default_top_k(n_s, model.components()),
        seed,
    )
}

/// Mixture-posterior selection with an explicit per-side top-K.
///
/// Classes with fewer than `N_S/32` patches are taken whole; classes with at
/// least `N_S/16` contribute their K highest- and K lowest-posterior patches;
/// classes in between contribute nothing. The remainder is filled with a
/// seeded random sample of unselected patches. If the picks overflow, top-K
/// picks closest to the bag's mean posterior are dropped first.
pub fn select_em_with_k(
    bag: &Matrix,
    model: &GmmModel,
    n_s: usize,
    k: usize,
    seed: u64,
) -> Result<SelectionResult> {
    let n_p = bag.rows();
    check_budget(n_s, n_p)?;
    let resp = responsibilities(bag, model)?;
    let post = &resp.max_posterior;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); model.components()];
    for (i, &c) in resp.class.iter().enumerate() {
        members[c].push(i);
    }
    let rare_below = n_s as f64 / 32.0;
    let top_from = n_s as f64 / 16.0;

    let mut chosen = vec![false; n_p];
    let mut rare = Vec::new();
    let mut top = Vec::new();
    for idx in &members {
        let count = idx.len() as f64;
        if count == 0.0 {
            continue;
        }
        if count < rare_below {
            for &i in idx {
                chosen[i] = true;
                rare.push((i, Provenance::RareCluster));
            }
        } else if count >= top_from {
            let mut by_post = idx.clone();
            by_post.sort_by(|&a, &b| post[b].total_cmp(&post[a]).then(a.cmp(&b)));
            for &i in by_post.iter().take(k) {
                chosen[i] = true;
                top.push((i, Provenance::TopMax));
            }
            by_post.sort_by(|&a, &b| post[a].total_cmp(&post[b]).then(a.cmp(&b)));
            for &i in by_post
                .iter()
                .filter(|&&i| !chosen[i])
                .take(k)
                .collect::<Vec<_>>()
            {
                chosen[i] = true;
                top.push((i, Provenance::TopMin));
            }
        }
    }

    if rare.len() + top.len() > n_s {
        let mean = post.iter().sum::<f64>() / n_p as f64;
        // highest priority first; ties keep the lower index
        let rank = |v: &mut Vec<(usize, Provenance)>| {
            v.sort_by(|a, b| {
                (post[b.0] - mean)
                    .abs()
                    .total_cmp(&(post[a.0] - mean).abs())
                    .then(a.0.cmp(&b.0))
            })
        };
        if rare.len() >= n_s {
            rank(&mut rare);
            rare.truncate(n_s);
            top.clear();
        } else {
            rank(&mut top);
            top.truncate(n_s - rare.len());
        }
        chosen.fill(false);
        for &(i, _) in rare.iter().chain(&top) {
            chosen[i] = true;
        }
    }

    let mut picks: Vec<Pick> = rare
        .into_iter()
        .chain(top)
        .map(|(index, provenance)| Pick {
            index,
            provenance,
            class: Some(resp.class[index]),
            posterior: Some(post[index]),
        })
        .collect();
    let free: Vec<usize> = (0..n_p).filter(|&i| !chosen[i]).collect();
    let need = n_s - picks.len();
    for j in rand::seq::index::sample(&mut seeded(seed), free.len(), need) {
        let index = free[j];
        picks.push(Pick {
            index,
            provenance: Provenance::RandomPad,
            class: Some(resp.class[index]),
            posterior: Some(post[index]),
        });
    }
    Ok(SelectionResult {
        picks,
        strategy: Strategy::Em,
    })
}

/// Proportional allocation: each cluster gets `round(count/N_p · N_S)` of
/// its patches nearest the centroid. Overflow drops the globally farthest
/// picks; shortfall takes the globally nearest unselected patches.
pub fn select_cluster(bag: &Matrix, centroids: &Centroids, n_s: usize) -> Result<SelectionResult> {
    let n_p = bag.rows();
    check_budget(n_s, n_p)?;
    if bag.cols() != centroids.vectors.cols() {
        return Err(Error::Dimension {
            op: "select_cluster",
            left: bag.shape(),
            right: centroids.vectors.shape(),
        });
    }
    let nearest: Vec<(usize, f64)> = bag.row_iter().map(|p| centroids.nearest(p)).collect();
    let by_dist = |a: &usize, b: &usize| nearest[*a].1.total_cmp(&nearest[*b].1).then(a.cmp(b));
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); centroids.count()];
    for (i, &(c, _)) in nearest.iter().enumerate() {
        members[c].push(i);
    }
    let mut chosen = Vec::with_capacity(n_s);
    for idx in &mut members {
        let quota = (idx.len() as f64 / n_p as f64 * n_s as f64).round() as usize;
        idx.sort_by(by_dist);
        chosen.extend(idx.iter().take(quota));
    }
    chosen.sort_by(by_dist);
    chosen.truncate(n_s);
    if chosen.len() < n_s {
        let mut taken = vec![false; n_p];
        chosen.iter().for_each(|&i| taken[i] = true);
        let mut rest: Vec<usize> = (0..n_p).filter(|&i| !taken[i]).collect();
        rest.sort_by(by_dist);
        chosen.extend(rest.into_iter().take(n_s - chosen.len()));
    }
    Ok(SelectionResult {
        picks: chosen
            .into_iter()
            .map(|index| Pick {
                index,
                provenance: Provenance::ClusterNearest,
                class: Some(nearest[index].0),
                posterior: None,
            })
            .collect(),
        strategy: Strategy::Cluster,
    })
}

/// Seeded uniform sample without replacement, in ascending index order.
pub fn select_random(n_p: usize, n_s: usize, seed: u64) -> Result<SelectionResult> {
    check_budget(n_s, n_p)?;
    let mut idx = rand::seq::index::sample(&mut seeded(seed), n_p, n_s).into_vec();
    idx.sort_unstable();
    Ok(SelectionResult {
        picks: idx
            .into_iter()
            .map(|index| Pick {
                index,
                provenance: Provenance::Random,
                class: None,
                posterior: None,
            })
            .collect(),
        strategy: Strategy::Random,
    })
}

/// Every patch, in bag order.
pub fn select_all(n_p: usize) -> SelectionResult {
    SelectionResult {
        picks: (0..n_p)
            .map(|index| Pick {
                index,
                provenance: Provenance::Unscreened,
                class: None,
                posterior: None,
            })
            .collect(),
        strategy: Strategy::None,
    }
}

/// Dispatches on `strategy`. `model` is required for `Em` and `centroids`
/// for `Cluster`.
pub fn select(
    strategy: Strategy,
    bag: &Matrix,
    model: Option<&GmmModel>,
    centroids: Option<&Centroids>,
    n_s: usize,
    seed: u64,
) -> Result<SelectionResult> {
    match strategy {
        Strategy::Em => {
            let model = model
                .ok_or_else(|| Error::Selection("em selection needs a mixture model".into()))?;
            select_em(bag, model, n_s, seed)
        }
        Strategy::Cluster => {
            let c = centroids
                .ok_or_else(|| Error::Selection("cluster selection needs centroids".into()))?;
            select_cluster(bag, c, n_s)
        }
        Strategy::Random => select_random(bag.rows(), n_s, seed),
        Strategy::None => Ok(select_all(bag.rows())),
    }
}
