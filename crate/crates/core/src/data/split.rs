use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DIRICHLET_RETRIES: usize = 20;

/// Fixed heterogeneous Credit layout: (points, positives) per client.
pub const UCI_CREDIT_LAYOUT: [(usize, usize); 10] = [
    (36, 2),
    (36, 2),
    (36, 2),
    (36, 2),
    (36, 2),
    (67, 44),
    (67, 44),
    (67, 44),
    (67, 44),
    (67, 44),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Homogeneous,
    Dirichlet,
    UciCreditFixed,
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub clients: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub seed: u64,
    /// Index lists for `explicit` splits.
    pub shards: Option<Vec<Vec<usize>>>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            kind: SplitKind::Homogeneous,
            clients: 2,
            alpha1: 1.0,
            alpha2: 0.5,
            seed: 0,
            shards: None,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::config("split.clients must be at least 1"));
        }
        if !(self.alpha1 > 0.0 && self.alpha2 > 0.0) {
            return Err(Error::config("split alphas must be positive"));
        }
        match self.kind {
            SplitKind::UciCreditFixed if self.clients != UCI_CREDIT_LAYOUT.len() => Err(Error::config(
                format!("uci_credit_fixed split has {} clients", UCI_CREDIT_LAYOUT.len()),
            )),
            SplitKind::Explicit => match &self.shards {
                Some(s) if s.len() == self.clients => Ok(()),
                _ => Err(Error::config("explicit split needs `shards` with one list per client")),
            },
            _ => Ok(()),
        }
    }
}

/// Disjoint client shards over training indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardAssignment {
    pub shards: Vec<Vec<usize>>,
    /// `K x C` per-class counts.
    pub per_class_counts: Vec<Vec<usize>>,
}

impl ShardAssignment {
    pub fn new(shards: Vec<Vec<usize>>, labels: &[usize], class_count: usize) -> Result<Self> {
        let mut per_class_counts = vec![vec![0; class_count]; shards.len()];
        for (k, shard) in shards.iter().enumerate() {
            for &i in shard {
                let l = *labels
                    .get(i)
                    .ok_or_else(|| Error::Split(format!("index {i} out of range")))?;
                if l >= class_count {
                    return Err(Error::Split(format!("label {l} outside [0, {class_count})")));
                }
                per_class_counts[k][l] += 1;
            }
        }
        Ok(ShardAssignment {
            shards,
            per_class_counts,
        })
    }

    pub fn client_count(&self) -> usize {
        self.shards.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.shards.iter().map(Vec::len).sum()
    }

    /// Checks that the shards are pairwise disjoint and that none is empty.
    pub fn check_disjoint(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (k, shard) in self.shards.iter().enumerate() {
            if shard.is_empty() {
                return Err(Error::Split(format!("client {k} has no data")));
            }
            for &i in shard {
                if i >= n {
                    return Err(Error::Split(format!("index {i} out of range")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Split(format!("index {i} assigned twice")));
                }
            }
        }
        Ok(())
    }
}

/// Splits integer `total` proportionally to `quotas` (which should sum to
/// `total`): floors first, then the largest fractional parts get the rest,
/// lower index first on ties.
pub fn largest_remainder(quotas: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.max(0.0).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Source of client-size and per-client class proportions.
pub trait ProportionSampler {
    fn client_weights(&mut self, clients: usize) -> Vec<f64>;
    fn class_mix(&mut self, classes: usize) -> Vec<f64>;
}

/// Symmetric Dirichlet draws via normalized Gamma variates.
#[derive(Debug)]
pub struct DirichletSampler<R> {
    pub alpha1: f64,
    pub alpha2: f64,
    pub rng: R,
}

fn symmetric_dirichlet<R: Rng>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut g: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let s: f64 = g.iter().sum();
    if s > 0.0 && s.is_finite() {
        g.iter_mut().for_each(|x| *x /= s);
    } else {
        // Every variate underflowed: all mass lands on one coordinate.
        g.iter_mut().for_each(|x| *x = 0.0);
        g[rng.random_range(0..n)] = 1.0;
    }
    g
}

impl<R: Rng> ProportionSampler for DirichletSampler<R> {
    fn client_weights(&mut self, clients: usize) -> Vec<f64> {
        symmetric_dirichlet(self.alpha1, clients, &mut self.rng)
    }

    fn class_mix(&mut self, classes: usize) -> Vec<f64> {
        symmetric_dirichlet(self.alpha2, classes, &mut self.rng)
    }
}

/// Nested-Dirichlet heterogeneous split with an explicit proportion source.
///
/// Client `k` gets class mass `p_k q_kc`; each class is divided across clients
/// in proportion to that mass by largest-remainder rounding, and its shuffled
/// indices are handed out contiguously. Draws are repeated (up to 20 times)
/// while any client ends up empty.
pub fn dirichlet_split_with<S: ProportionSampler, R: Rng>(
    labels: &[usize],
    class_count: usize,
    clients: usize,
    sampler: &mut S,
    rng: &mut R,
) -> Result<ShardAssignment> {
    if clients == 0 {
        return Err(Error::config("need at least one client"));
    }
    if labels.len() < clients {
        return Err(Error::Split(format!("{} points cannot fill {clients} clients", labels.len())));
    }
    let mut by_class = vec![Vec::new(); class_count];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l)
            .ok_or_else(|| Error::Split(format!("label {l} outside [0, {class_count})")))?
            .push(i);
    }
    for _ in 0..DIRICHLET_RETRIES {
        let p = sampler.client_weights(clients);
        let q: Vec<Vec<f64>> = (0..clients).map(|_| sampler.class_mix(class_count)).collect();
        let mut counts = vec![vec![0usize; class_count]; clients];
        for (c, idx) in by_class.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let mass: Vec<f64> = (0..clients).map(|k| p[k] * q[k][c]).collect();
            let total: f64 = mass.iter().sum();
            let quotas: Vec<f64> = if total > 0.0 && total.is_finite() {
                mass.iter().map(|m| idx.len() as f64 * m / total).collect()
            } else {
                vec![idx.len() as f64 / clients as f64; clients]
            };
            for (k, n) in largest_remainder(&quotas, idx.len()).into_iter().enumerate() {
                counts[k][c] = n;
            }
        }
        if counts.iter().any(|row| row.iter().sum::<usize>() == 0) {
            continue;
        }
        let mut shards = vec![Vec::new(); clients];
        for (c, idx) in by_class.iter().enumerate() {
            let mut idx = idx.clone();
            idx.shuffle(rng);
            let mut start = 0;
            for k in 0..clients {
                shards[k].extend_from_slice(&idx[start..start + counts[k][c]]);
                start += counts[k][c];
            }
        }
        for s in &mut shards {
            s.sort_unstable();
        }
        return Ok(ShardAssignment {
            shards,
            per_class_counts: counts,
        });
    }
    Err(Error::Split(format!(
        "a client stayed empty after {DIRICHLET_RETRIES} Dirichlet draws"
    )))
}

pub fn dirichlet_split(labels: &[usize], class_count: usize, spec: &SplitSpec) -> Result<ShardAssignment> {
    spec.validate()?;
    let mut sampler = DirichletSampler {
        alpha1: spec.alpha1,
        alpha2: spec.alpha2,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_5eed_5eed_5eed);
    dirichlet_split_with(labels, class_count, spec.clients, &mut sampler, &mut rng)
}

/// IID split: classes are shuffled and dealt round-robin, so shard sizes and
/// per-class counts differ by at most one.
pub fn homogeneous_split(labels: &[usize], class_count: usize, clients: usize, seed: u64) -> Result<ShardAssignment> {
    if clients == 0 || labels.len() < clients {
        return Err(Error::Split(format!("{} points cannot fill {clients} clients", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = vec![Vec::new(); class_count];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut shards = vec![Vec::new(); clients];
    let mut next = 0;
    for mut idx in by_class {
        idx.shuffle(&mut rng);
        for i in idx {
            shards[next % clients].push(i);
            next += 1;
        }
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    ShardAssignment::new(shards, labels, class_count)
}

/// The fixed ten-client Credit split: five clients with 36 points (2
/// positive) and five with 67 points (44 positive). Positives (class 1) and
/// negatives are shuffled separately under `seed`; positives are dealt first,
/// in client order, then negatives.
pub fn uci_credit_fixed_split(labels: &[usize], seed: u64) -> Result<ShardAssignment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    let need_pos: usize = UCI_CREDIT_LAYOUT.iter().map(|l| l.1).sum();
    let need_neg: usize = UCI_CREDIT_LAYOUT.iter().map(|l| l.0 - l.1).sum();
    if pos.len() < need_pos || neg.len() < need_neg {
        return Err(Error::Split(format!(
            "fixed credit split needs {need_pos} positives and {need_neg} negatives, have {} and {}",
            pos.len(),
            neg.len()
        )));
    }
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut shards = vec![Vec::new(); UCI_CREDIT_LAYOUT.len()];
    let mut pi = pos.into_iter();
    for (k, &(_, p)) in UCI_CREDIT_LAYOUT.iter().enumerate() {
        shards[k].extend(pi.by_ref().take(p));
    }
    let mut ni = neg.into_iter();
    for (k, &(n, p)) in UCI_CREDIT_LAYOUT.iter().enumerate() {
        shards[k].extend(ni.by_ref().take(n - p));
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    ShardAssignment::new(shards, labels, 2)
}

/// Dispatches on `spec.kind`.
pub fn split_dataset(labels: &[usize], class_count: usize, spec: &SplitSpec) -> Result<ShardAssignment> {
    spec.validate()?;
    let assignment = match spec.kind {
        SplitKind::Homogeneous => homogeneous_split(labels, class_count, spec.clients, spec.seed)?,
        SplitKind::Dirichlet => dirichlet_split(labels, class_count, spec)?,
        SplitKind::UciCreditFixed => {
            if class_count != 2 {
                return Err(Error::config("uci_credit_fixed split needs a binary dataset"));
            }
            uci_credit_fixed_split(labels, spec.seed)?
        }
        SplitKind::Explicit => {
            let shards = spec.shards.clone().expect("validated");
            ShardAssignment::new(shards, labels, class_count)?
        }
    };
    assignment.check_disjoint(labels.len())?;
    Ok(assignment)
}
