use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const TAG_STRATIFY: u64 = 0x7374_7261;

/// Iterative stratification into a selected subset of `round(fraction * n)`
/// items and its complement; returns the selected indices, ascending.
///
/// The rarest label among unassigned items is handled first; each of its
/// items goes to the subset with the greatest remaining demand for that
/// label, then the greatest remaining total demand, then a seeded draw.
/// Subsets with no remaining capacity are never chosen, which pins the size.
pub fn iterative_stratified_sample(labels: &[Vec<u8>], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config("fraction", format!("must lie in (0, 1), got {fraction}")));
    }
    let n = labels.len();
    let l = labels.first().map_or(0, Vec::len);
    if labels.iter().any(|r| r.len() != l) {
        return Err(Error::Dimension {
            op: "iterative_stratified_sample",
            left: vec![n, l],
            right: labels.iter().map(Vec::len).collect(),
        });
    }
    let take = (fraction * n as f64).round() as usize;
    let ratios = [take as f64 / n.max(1) as f64, (n - take) as f64 / n.max(1) as f64];
    let mut capacity = [take as i64, (n - take) as i64];
    let mut demand: Vec<[f64; 2]> = (0..l)
        .map(|j| {
            let count = labels.iter().filter(|r| r[j] != 0).count() as f64;
            [ratios[0] * count, ratios[1] * count]
        })
        .collect();

    let mut rng = SplitMix64::stream(seed, TAG_STRATIFY, 0);
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    let mut remaining = n;

    let mut place = |i: usize, label: Option<usize>, assigned: &mut Vec<Option<usize>>, capacity: &mut [i64; 2], demand: &mut Vec<[f64; 2]>| {
        let open: Vec<usize> = (0..2).filter(|&s| capacity[s] > 0).collect();
        let best = |key: &dyn Fn(usize) -> f64, among: &[usize]| -> Vec<usize> {
            let top = among.iter().map(|&s| key(s)).fold(f64::NEG_INFINITY, f64::max);
            among.iter().copied().filter(|&s| key(s) == top).collect()
        };
        let mut tied = open;
        if let Some(j) = label {
            let d = demand[j];
            tied = best(&|s| d[s], &tied);
        }
        if tied.len() > 1 {
            let c = *capacity;
            tied = best(&|s| c[s] as f64, &tied);
        }
        let s = if tied.len() > 1 {
            tied[rng.below(tied.len() as u64) as usize]
        } else {
            tied[0]
        };
        assigned[i] = Some(s);
        capacity[s] -= 1;
        for (j, &y) in labels[i].iter().enumerate() {
            if y != 0 {
                demand[j][s] -= 1.0;
            }
        }
    };

    while remaining > 0 {
        // Rarest label by remaining positives, lowest index on ties.
        let rarest = (0..l)
            .map(|j| (j, (0..n).filter(|&i| assigned[i].is_none() && labels[i][j] != 0).count()))
            .filter(|&(_, c)| c > 0)
            .min_by_key(|&(j, c)| (c, j));
        match rarest {
            Some((j, _)) => {
                for i in 0..n {
                    if assigned[i].is_none() && labels[i][j] != 0 {
                        place(i, Some(j), &mut assigned, &mut capacity, &mut demand);
                        remaining -= 1;
                    }
                }
            }
            None => {
                for i in 0..n {
                    if assigned[i].is_none() {
                        place(i, None, &mut assigned, &mut capacity, &mut demand);
                        remaining -= 1;
                    }
                }
            }
        }
    }
    Ok((0..n).filter(|&i| assigned[i] == Some(0)).collect())
}
