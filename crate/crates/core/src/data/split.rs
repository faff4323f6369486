use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numcore::RngStream;

/// Classes with fewer positives than this are not stratified.
const MIN_STRATIFIABLE: usize = 3;

/// Result of a three-way split.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Row indices of each part into the source dataset.
    pub indices: [Vec<usize>; 3],
    /// One message per class that could not be stratified.
    pub warnings: Vec<String>,
}

/// Splits by fractions (e.g. 0.70 / 0.15 / 0.15), sizes rounded by largest
/// remainder so they sum to `N`.
pub fn stratified_split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
        return Err(Error::Config(format!("split fractions must be positive, got {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {total}, expected 1")));
    }
    let n = dataset.len();
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: [usize; 3] = [0; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &s in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[s] += 1;
        left -= 1;
    }
    stratified_split_counts(dataset, counts, seed)
}

/// Iterative multi-label stratification into parts of exactly `counts` rows.
///
/// The rarest remaining label is handled first: each of its unassigned
/// samples goes to the part that still wants the most positives of that
/// label, ties broken by remaining capacity and then by the random stream.
/// Samples carrying no stratifiable label fill the remaining capacity.
pub fn stratified_split_counts(dataset: &Dataset, counts: [usize; 3], seed: u64) -> Result<Split> {
    let n = dataset.len();
    if counts.iter().sum::<usize>() != n {
        return Err(Error::Config(format!(
            "split sizes {counts:?} do not sum to dataset size {n}"
        )));
    }
    let labels = dataset.labels();
    let c = labels.cols();
    let mut rng = RngStream::named(seed, "split");

    let positives = labels.column_counts();
    let mut warnings = Vec::new();
    let stratified: Vec<bool> = positives
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            if p < MIN_STRATIFIABLE {
                warnings.push(format!(
                    "class {k} ({}) has {p} positives; not stratified",
                    dataset.class_names()[k]
                ));
                false
            } else {
                true
            }
        })
        .collect();

    let frac: Vec<f64> = counts.iter().map(|&s| s as f64 / n.max(1) as f64).collect();
    let mut capacity = counts.map(|s| s as i64);
    let mut wanted: Vec<[f64; 3]> = positives
        .iter()
        .map(|&p| [p as f64 * frac[0], p as f64 * frac[1], p as f64 * frac[2]])
        .collect();

    let mut assignment: Vec<Option<usize>> = vec![None; n];
    let mut remaining: Vec<usize> = positives.clone();
    let mut pool: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut pool);

    loop {
        let next = (0..c)
            .filter(|&k| stratified[k] && remaining[k] > 0)
            .min_by_key(|&k| (remaining[k], k));
        let Some(k) = next else { break };
        for &i in &pool {
            if assignment[i].is_some() || !labels.get(i, k) {
                continue;
            }
            let part = choose_part(&wanted[k], &capacity, &mut rng);
            assignment[i] = Some(part);
            capacity[part] -= 1;
            for (j, &y) in labels.row(i).iter().enumerate() {
                if y {
                    wanted[j][part] -= 1.0;
                    remaining[j] -= 1;
                }
            }
        }
    }

    for &i in &pool {
        if assignment[i].is_none() {
            let part = (0..3)
                .max_by_key(|&s| (capacity[s], std::cmp::Reverse(s)))
                .expect("three parts");
            assignment[i] = Some(part);
            capacity[part] -= 1;
        }
    }

    let mut indices: [Vec<usize>; 3] = Default::default();
    for (i, part) in assignment.iter().enumerate() {
        indices[part.expect("every row assigned")].push(i);
    }
    Ok(Split {
        train: dataset.subset(&indices[0]),
        val: dataset.subset(&indices[1]),
        test: dataset.subset(&indices[2]),
        indices,
        warnings,
    })
}

fn choose_part(wanted: &[f64; 3], capacity: &[i64; 3], rng: &mut RngStream) -> usize {
    let open: Vec<usize> = (0..3).filter(|&s| capacity[s] > 0).collect();
    let best_want = open.iter().map(|&s| wanted[s]).fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = open.iter().copied().filter(|&s| wanted[s] == best_want).collect();
    let best_cap = tied.iter().map(|&s| capacity[s]).max().unwrap_or(0);
    let tied: Vec<usize> = tied.into_iter().filter(|&s| capacity[s] == best_cap).collect();
    if tied.len() == 1 {
        tied[0]
    } else {
        tied[rng.below(tied.len())]
    }
}
