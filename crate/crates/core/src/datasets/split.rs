use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::derive_seed;

use super::RelevanceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
    /// Split each (item, label) stratum separately.
    pub stratify: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.3,
            val: 0.3,
            test: 0.4,
            seed: 0,
            stratify: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidConfig(format!(
                "split fractions {f:?} must lie in [0, 1]"
            )));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("split fractions {f:?} must sum to 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<RelevanceRecord>,
    pub val: Vec<RelevanceRecord>,
    pub test: Vec<RelevanceRecord>,
}

/// Largest-remainder apportionment of `n` over `fractions`. Ties in the
/// remainder go to the earlier part.
pub fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - sizes[a] as f64;
        let rb = exact[b] - sizes[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Seeded train/validation/test partition. Output order within each part
/// follows the input order.
pub fn split(records: &[RelevanceRecord], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let fractions = [spec.train, spec.val, spec.test];
    let mut strata: BTreeMap<(u8, u8), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = if spec.stratify { (r.item_id, r.label) } else { (0, 0) };
        strata.entry(key).or_default().push(i);
    }

    let mut part_of = vec![0usize; records.len()];
    for ((item, label), mut idx) in strata {
        let sizes = apportion(idx.len(), &fractions);
        if let Some(p) = (0..3).find(|&p| fractions[p] > 0.0 && sizes[p] == 0) {
            let name = ["train", "val", "test"][p];
            return Err(Error::Data(format!(
                "stratum item {item} label {label} has {} records, too few to give the {name} split one",
                idx.len()
            )));
        }
        let stratum = ((item as u64) << 8) | label as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "split", stratum));
        idx.shuffle(&mut rng);
        let mut cursor = 0;
        for (p, size) in sizes.into_iter().enumerate() {
            for &i in &idx[cursor..cursor + size] {
                part_of[i] = p;
            }
            cursor += size;
        }
    }

    let mut out = Split::default();
    for (r, p) in records.iter().zip(part_of) {
        match p {
            0 => out.train.push(r.clone()),
            1 => out.val.push(r.clone()),
            _ => out.test.push(r.clone()),
        }
    }
    Ok(out)
}
