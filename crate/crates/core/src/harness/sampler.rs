//! PK batch sampling: `P` distinct identities × `K` observations each.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};

fn group(labels: &[usize], k: usize) -> (Vec<Vec<usize>>, usize) {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let present = by_class.iter().filter(|v| !v.is_empty()).count();
    let eligible: Vec<Vec<usize>> = by_class.into_iter().filter(|v| v.len() >= k).collect();
    let skipped = present - eligible.len();
    (eligible, skipped)
}

/// One batch of `p·k` record indices: `p` distinct labels drawn uniformly
/// among those with at least `k` records, `k` distinct records each.
pub fn pk_sample<R: Rng + ?Sized>(
    labels: &[usize],
    p: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let (eligible, _) = group(labels, k);
    if p == 0 || k == 0 || eligible.len() < p {
        return Err(Error::invalid(format!(
            "cannot draw {p} identities with {k} observations each: only {} qualify",
            eligible.len()
        )));
    }
    let mut batch = Vec::with_capacity(p * k);
    for members in eligible.choose_multiple(rng, p) {
        batch.extend(members.choose_multiple(rng, k));
    }
    Ok(batch)
}

/// Epoch-wise PK sampler. An epoch is `⌈N/P⌉` batches that together cover
/// every eligible identity at least once; observations of an identity are
/// drawn without replacement until its pool is exhausted.
#[derive(Clone, Debug)]
pub struct PkSampler {
    classes: Vec<Vec<usize>>,
    pools: Vec<Vec<usize>>,
    p: usize,
    k: usize,
    skipped: usize,
}

impl PkSampler {
    pub fn new(labels: &[usize], p: usize, k: usize) -> Result<Self> {
        let (classes, skipped) = group(labels, k);
        if p == 0 || k == 0 || classes.len() < p {
            return Err(Error::invalid(format!(
                "PK sampling with p={p}, k={k} needs {p} identities with {k} observations; {} qualify",
                classes.len()
            )));
        }
        Ok(PkSampler {
            pools: vec![Vec::new(); classes.len()],
            classes,
            p,
            k,
            skipped,
        })
    }

    /// Identities left out because they have fewer than `k` observations.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.classes.len().div_ceil(self.p)
    }

    fn draw<R: Rng + ?Sized>(&mut self, class: usize, rng: &mut R, out: &mut Vec<usize>) {
        let start = out.len();
        while out.len() - start < self.k {
            if self.pools[class].is_empty() {
                let taken = &out[start..];
                let mut fresh: Vec<usize> = self.classes[class]
                    .iter()
                    .copied()
                    .filter(|i| !taken.contains(i))
                    .collect();
                fresh.shuffle(rng);
                self.pools[class] = fresh;
            }
            out.push(self.pools[class].pop().expect("refilled pool"));
        }
    }

    pub fn epoch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<Vec<usize>> {
        let n = self.classes.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut batches = Vec::with_capacity(self.batches_per_epoch());
        for chunk in order.chunks(self.p) {
            let mut ids = chunk.to_vec();
            if ids.len() < self.p {
                let rest: Vec<usize> = (0..n).filter(|c| !ids.contains(c)).collect();
                ids.extend(rest.choose_multiple(rng, self.p - chunk.len()));
            }
            let mut batch = Vec::with_capacity(self.p * self.k);
            for c in ids {
                self.draw(c, rng, &mut batch);
            }
            batches.push(batch);
        }
        batches
    }
}
