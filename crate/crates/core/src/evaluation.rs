//! All-rank top-K evaluation, group fairness gaps, embedding export and the
//! clustering diagnostic.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};

use crate::dataset::{InteractionGraph, SensitivePartition};
use crate::encoder::EmbeddingTable;
use crate::error::{Error, Result};

/// Score-descending, id-ascending order.
fn rank_cmp(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Every item not in `exclude`, best first; ties go to the lower item id.
pub fn rank_items(h: &EmbeddingTable, u: usize, exclude: &[usize]) -> Vec<usize> {
    let scores: Vec<f64> = h.items().dot(&h.user(u)).to_vec();
    ranked_from_scores(&scores, exclude, scores.len())
}

/// The first `k` entries of the full ranking of `scores` with `exclude`
/// removed.
fn ranked_from_scores(scores: &[f64], exclude: &[usize], k: usize) -> Vec<usize> {
    let mut skip = vec![false; scores.len()];
    for &i in exclude {
        if i < skip.len() {
            skip[i] = true;
        }
    }
    let mut ids: Vec<usize> = (0..scores.len()).filter(|&i| !skip[i]).collect();
    let k = k.min(ids.len());
    if k < ids.len() && k > 0 {
        ids.select_nth_unstable_by(k - 1, |&a, &b| rank_cmp(scores, a, b));
        ids.truncate(k);
    }
    ids.sort_unstable_by(|&a, &b| rank_cmp(scores, a, b));
    ids.truncate(k);
    ids
}

/// `|top-k ∩ test| / |test|`; `None` when `test` is empty.
pub fn recall_at_k(ranked: &[usize], test_items: &[usize], k: usize) -> Option<f64> {
    if test_items.is_empty() {
        return None;
    }
    let hits = ranked.iter().take(k).filter(|i| test_items.contains(i)).count();
    Some(hits as f64 / test_items.len() as f64)
}

/// Binary-relevance NDCG with a `log₂(p + 1)` discount; `None` when `test`
/// is empty.
pub fn ndcg_at_k(ranked: &[usize], test_items: &[usize], k: usize) -> Option<f64> {
    if test_items.is_empty() {
        return None;
    }
    let disc = |p: usize| 1.0 / ((p + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| test_items.contains(i))
        .map(|(p, _)| disc(p + 1))
        .sum();
    let idcg: f64 = (1..=k.min(test_items.len())).map(disc).sum();
    Some(dcg / idcg)
}

/// Group means of a per-user metric over the users present in `values`.
pub fn group_means(values: &[(usize, f64)], partition: &SensitivePartition) -> Result<(f64, f64)> {
    let mut sum = [0.0; 2];
    let mut n = [0usize; 2];
    for &(u, x) in values {
        if u >= partition.n_users() {
            return Err(Error::Shape(format!(
                "user {u} outside partition of {} users",
                partition.n_users()
            )));
        }
        let g = partition.label(u) as usize;
        sum[g] += x;
        n[g] += 1;
    }
    if n[0] == 0 || n[1] == 0 {
        return Err(Error::Data(format!(
            "group fairness needs evaluated users in both groups (got {} and {})",
            n[0], n[1]
        )));
    }
    Ok((sum[0] / n[0] as f64, sum[1] / n[1] as f64))
}

/// `|mean_{s=0} − mean_{s=1}|` over the users present in `values`.
pub fn group_fairness(values: &[(usize, f64)], partition: &SensitivePartition) -> Result<f64> {
    let (a, b) = group_means(values, partition)?;
    Ok((a - b).abs())
}

/// Metrics at one cutoff.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffMetrics {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub phi_r: f64,
    pub phi_n: f64,
    pub group0_recall: f64,
    pub group1_recall: f64,
    pub group0_ndcg: f64,
    pub group1_ndcg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub cutoffs: Vec<CutoffMetrics>,
    pub n_eval_users: usize,
}

impl MetricsReport {
    pub fn at(&self, k: usize) -> Option<&CutoffMetrics> {
        self.cutoffs.iter().find(|c| c.k == k)
    }

    /// Flat JSON object with keys such as `recall@10` and `phi_r@10`;
    /// `prefix` is prepended to every metric key.
    pub fn to_json_map(&self, prefix: &str) -> Map<String, Value> {
        let mut m = Map::new();
        for c in &self.cutoffs {
            let k = c.k;
            for (name, v) in [
                ("recall", c.recall),
                ("ndcg", c.ndcg),
                ("phi_r", c.phi_r),
                ("phi_n", c.phi_n),
                ("group0_recall", c.group0_recall),
                ("group1_recall", c.group1_recall),
                ("group0_ndcg", c.group0_ndcg),
                ("group1_ndcg", c.group1_ndcg),
            ] {
                m.insert(format!("{prefix}{name}@{k}"), Value::from(v));
            }
        }
        m.insert(format!("{prefix}n_eval_users"), Value::from(self.n_eval_users));
        m
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Value::Object(self.to_json_map(""))).expect("finite metrics")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Data(format!("metrics report: {e}")))?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Data("metrics report is not a JSON object".into()))?;
        let mut ks: Vec<usize> = obj
            .keys()
            .filter_map(|key| key.strip_prefix("recall@"))
            .filter_map(|k| k.parse().ok())
            .collect();
        ks.sort_unstable();
        let get = |name: &str| -> Result<f64> {
            obj.get(name)
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::Data(format!("metrics report lacks `{name}`")))
        };
        let cutoffs = ks
            .into_iter()
            .map(|k| {
                Ok(CutoffMetrics {
                    k,
                    recall: get(&format!("recall@{k}"))?,
                    ndcg: get(&format!("ndcg@{k}"))?,
                    phi_r: get(&format!("phi_r@{k}"))?,
                    phi_n: get(&format!("phi_n@{k}"))?,
                    group0_recall: get(&format!("group0_recall@{k}"))?,
                    group1_recall: get(&format!("group1_recall@{k}"))?,
                    group0_ndcg: get(&format!("group0_ndcg@{k}"))?,
                    group1_ndcg: get(&format!("group1_ndcg@{k}"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cutoffs,
            n_eval_users: get("n_eval_users")? as usize,
        })
    }
}

/// Per-user held-out items. Users without any training interaction are
/// dropped.
pub fn targets_by_user(train: &InteractionGraph, targets: &[(usize, usize)]) -> Vec<(usize, Vec<usize>)> {
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); train.n_users()];
    for &(u, v) in targets {
        per_user[u].push(v);
    }
    per_user
        .into_iter()
        .enumerate()
        .filter(|(u, items)| !items.is_empty() && train.user_degree(*u) > 0)
        .map(|(u, mut items)| {
            items.sort_unstable();
            items.dedup();
            (u, items)
        })
        .collect()
}

/// Ranks all non-training items for every user with held-out `targets` and
/// aggregates recall, NDCG and the group gaps at each cutoff in `ks`.
pub fn evaluate(
    h: &EmbeddingTable,
    train: &InteractionGraph,
    targets: &[(usize, usize)],
    partition: &SensitivePartition,
    ks: &[usize],
) -> Result<MetricsReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config(format!("cutoffs must be positive, got {ks:?}")));
    }
    if h.n_users() != train.n_users() || h.n_items() != train.n_items() {
        return Err(Error::Shape(format!(
            "embeddings cover {} users / {} items, graph has {} / {}",
            h.n_users(),
            h.n_items(),
            train.n_users(),
            train.n_items()
        )));
    }
    if partition.n_users() != train.n_users() {
        return Err(Error::Shape(format!(
            "partition covers {} users, graph has {}",
            partition.n_users(),
            train.n_users()
        )));
    }
    let users = targets_by_user(train, targets);
    let k_max = *ks.iter().max().expect("non-empty");
    let mut recall: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(users.len()); ks.len()];
    let mut ndcg = recall.clone();
    let items_t = h.items().t().to_owned();
    for chunk in users.chunks(256) {
        let rows: Vec<usize> = chunk.iter().map(|(u, _)| *u).collect();
        let uh = h.users().select(Axis(0), &rows);
        let scores = uh.dot(&items_t);
        for (r, (u, test)) in chunk.iter().enumerate() {
            let exclude: Vec<usize> = train.user_items(*u).iter().map(|&(_, v)| v as usize).collect();
            let row = scores.row(r);
            let ranked = ranked_from_scores(row.as_slice().expect("contiguous"), &exclude, k_max);
            for (ki, &k) in ks.iter().enumerate() {
                recall[ki].push((*u, recall_at_k(&ranked, test, k).expect("non-empty")));
                ndcg[ki].push((*u, ndcg_at_k(&ranked, test, k).expect("non-empty")));
            }
        }
    }
    let mean = |v: &[(usize, f64)]| v.iter().map(|x| x.1).sum::<f64>() / v.len().max(1) as f64;
    let cutoffs = ks
        .iter()
        .enumerate()
        .map(|(ki, &k)| {
            let (g0r, g1r) = group_means(&recall[ki], partition)?;
            let (g0n, g1n) = group_means(&ndcg[ki], partition)?;
            Ok(CutoffMetrics {
                k,
                recall: mean(&recall[ki]),
                ndcg: mean(&ndcg[ki]),
                phi_r: (g0r - g1r).abs(),
                phi_n: (g0n - g1n).abs(),
                group0_recall: g0r,
                group1_recall: g1r,
                group0_ndcg: g0n,
                group1_ndcg: g1n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        cutoffs,
        n_eval_users: users.len(),
    })
}

/// CSV `node_id,role,group,dim_0..dim_{d-1}`; items carry group `-`.
pub fn embeddings_csv(h: &EmbeddingTable, partition: &SensitivePartition) -> Result<String> {
    if partition.n_users() != h.n_users() {
        return Err(Error::Shape(format!(
            "partition covers {} users, embeddings {}",
            partition.n_users(),
            h.n_users()
        )));
    }
    let mut out = String::from("node_id,role,group");
    for j in 0..h.dim() {
        let _ = write!(out, ",dim_{j}");
    }
    out.push('\n');
    for (i, row) in h.matrix().rows().into_iter().enumerate() {
        if i < h.n_users() {
            let _ = write!(out, "{i},user,{}", partition.label(i));
        } else {
            let _ = write!(out, "{i},item,-");
        }
        for x in row {
            let _ = write!(out, ",{x:.16e}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_embeddings(h: &EmbeddingTable, partition: &SensitivePartition, path: &Path) -> Result<()> {
    std::fs::write(path, embeddings_csv(h, partition)?).map_err(|e| Error::io(path, e))
}

/// Parses an exported embedding CSV back into a table.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let d = header.split(',').count().saturating_sub(3);
    let mut values = Vec::new();
    let mut n_users = 0;
    let mut n_rows = 0;
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg,
        };
        if fields.len() != d + 3 {
            return Err(bad(format!("expected {} fields, found {}", d + 3, fields.len())));
        }
        if fields[1] == "user" {
            n_users += 1;
        }
        for f in &fields[3..] {
            values.push(f.parse::<f64>().map_err(|e| bad(format!("`{f}`: {e}")))?);
        }
        n_rows += 1;
    }
    let m = Array2::from_shape_vec((n_rows, d), values).map_err(|e| Error::Shape(e.to_string()))?;
    EmbeddingTable::new(m, n_users)
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means++ followed by Lloyd iterations; returns cluster ids.
pub fn kmeans(x: ArrayView2<'_, f64>, k: usize, seed: u64) -> Vec<usize> {
    let n = x.nrows();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Array2::zeros((k, x.ncols()));
    centers.row_mut(0).assign(&x.row(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut j = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if t < w {
                    j = i;
                    break;
                }
                t -= w;
            }
            j
        } else {
            rng.gen_range(0..n)
        };
        centers.row_mut(c).assign(&x.row(pick));
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(x.row(i), centers.row(c)));
        }
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..300 {
        let mut changed = false;
        for i in 0..n {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(x.row(i), centers.row(a)).total_cmp(&sq_dist(x.row(i), centers.row(b))))
                .expect("k > 0");
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centers.dim());
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let mut row = sums.row_mut(assign[i]);
            row += &x.row(i);
            counts[assign[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
    }
    assign
}

/// `2 I(C; Y) / (H(C) + H(Y))`; zero when either labelling is constant.
pub fn nmi(clusters: &[usize], labels: &[usize]) -> f64 {
    let n = clusters.len();
    if n == 0 || n != labels.len() {
        return 0.0;
    }
    let kc = clusters.iter().max().map_or(0, |m| m + 1);
    let ky = labels.iter().max().map_or(0, |m| m + 1);
    let mut joint = Array2::<f64>::zeros((kc, ky));
    for (&c, &y) in clusters.iter().zip(labels) {
        joint[[c, y]] += 1.0;
    }
    joint /= n as f64;
    let pc: Array1<f64> = joint.sum_axis(Axis(1));
    let py: Array1<f64> = joint.sum_axis(Axis(0));
    let h = |p: &Array1<f64>| -p.iter().filter(|&&q| q > 0.0).map(|&q| q * q.ln()).sum::<f64>();
    let (hc, hy) = (h(&pc), h(&py));
    if hc <= 0.0 || hy <= 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for c in 0..kc {
        for y in 0..ky {
            let p = joint[[c, y]];
            if p > 0.0 {
                mi += p * (p / (pc[c] * py[y])).ln();
            }
        }
    }
    (2.0 * mi / (hc + hy)).clamp(0.0, 1.0)
}

/// NMI between a seeded k-means clustering of the user rows and the
/// sensitive groups.
pub fn embedding_nmi(users: ArrayView2<'_, f64>, partition: &SensitivePartition, k_clusters: usize, seed: u64) -> Result<f64> {
    if users.nrows() != partition.n_users() {
        return Err(Error::Shape(format!(
            "{} user rows for {} labelled users",
            users.nrows(),
            partition.n_users()
        )));
    }
    if users.nrows() < k_clusters {
        return Err(Error::Data(format!(
            "{} users cannot form {k_clusters} clusters",
            users.nrows()
        )));
    }
    let clusters = kmeans(users, k_clusters, seed);
    let labels: Vec<usize> = partition.labels().iter().map(|&s| s as usize).collect();
    Ok(nmi(&clusters, &labels))
}

/// Median NMI of randomly relabelled users, a reference level for
/// [`embedding_nmi`].
pub fn permutation_null_nmi(users: ArrayView2<'_, f64>, partition: &SensitivePartition, seeds: u64) -> Result<f64> {
    let mut vals = Vec::new();
    for seed in 0..seeds {
        let mut labels = partition.labels().to_vec();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let p = crate::dataset::partition_users(&labels)?;
        vals.push(embedding_nmi(users, &p, 2, seed)?);
    }
    vals.sort_by(f64::total_cmp);
    Ok(vals[vals.len() / 2])
}

/// User rows of a table as an owned matrix.
pub fn user_rows(h: &EmbeddingTable) -> Array2<f64> {
    h.matrix().slice(s![..h.n_users(), ..]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_graph, partition_users};
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    fn items_table(scores: &[f64]) -> EmbeddingTable {
        // One user with embedding (1), items carry their score.
        let mut m = Array2::zeros((scores.len() + 1, 1));
        m[[0, 0]] = 1.0;
        for (i, &s) in scores.iter().enumerate() {
            m[[i + 1, 0]] = s;
        }
        EmbeddingTable::new(m, 1).unwrap()
    }

    #[test]
    fn rank_examples() {
        let h = items_table(&[0.9, 0.1, 0.5]);
        assert_eq!(rank_items(&h, 0, &[]), vec![0, 2, 1]);
        assert_eq!(rank_items(&h, 0, &[0]), vec![2, 1]);
        let tied = items_table(&[0.5, 0.7, 0.5, 0.5]);
        assert_eq!(rank_items(&tied, 0, &[]), vec![1, 0, 2, 3]);
        assert_eq!(ranked_from_scores(&[0.5, 0.7, 0.5, 0.5], &[], 2), vec![1, 0]);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[3, 1, 2], &[1, 7], 2), Some(0.5));
        assert_eq!(recall_at_k(&[3, 1, 2], &[1, 3], 2), Some(1.0));
        assert_eq!(recall_at_k(&[3, 1, 2], &[], 2), None);
        // Oracle: exhaustive set intersection.
        let ranked = [4, 0, 3, 1, 2];
        let test = [0, 2];
        for k in 1..=5 {
            let hits = ranked[..k].iter().filter(|i| test.contains(i)).count();
            assert_eq!(recall_at_k(&ranked, &test, k), Some(hits as f64 / 2.0));
        }
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[5, 1], &[5], 10), Some(1.0));
        assert!((ndcg_at_k(&[1, 5], &[5], 2).unwrap() - 0.630930).abs() < 1e-6);
        assert_eq!(ndcg_at_k(&[1, 2], &[5], 2), Some(0.0));
    }

    #[test]
    fn fairness_examples() {
        let p = partition_users(&[0, 0, 1, 1, 1, 0]).unwrap();
        let vals = [(0, 0.4), (1, 0.6), (2, 0.2), (3, 0.4), (4, 0.3)];
        let phi = group_fairness(&vals, &p).unwrap();
        assert!((phi - 0.2).abs() < 1e-12);
        let same: Vec<(usize, f64)> = (0..6).map(|u| (u, 0.3)).collect();
        assert_eq!(group_fairness(&same, &p).unwrap(), 0.0);
        // Six-user hand computation: group 0 = {0,1,5}, group 1 = {2,3,4}.
        let six = [(0, 1.0), (1, 0.5), (5, 0.0), (2, 0.25), (3, 0.25), (4, 1.0)];
        assert!((group_fairness(&six, &p).unwrap() - (0.5 - 0.5)).abs() < 1e-12);
        assert!(group_fairness(&[(0, 1.0)], &p).is_err());
    }

    #[test]
    fn perfect_embeddings_score_one() {
        // Four users, four items; each user's held-out item is their own axis.
        let mut m = Array2::zeros((8, 4));
        for u in 0..4 {
            m[[u, u]] = 1.0;
            m[[4 + u, u]] = 1.0;
        }
        let h = EmbeddingTable::new(m, 4).unwrap();
        let train = build_graph(&[(0, 1), (1, 2), (2, 3), (3, 0)], 4, 4);
        let p = partition_users(&[0, 1, 0, 1]).unwrap();
        let r = evaluate(&h, &train, &[(0, 0), (1, 1), (2, 2), (3, 3)], &p, &[1, 2]).unwrap();
        for c in &r.cutoffs {
            assert_eq!((c.recall, c.ndcg, c.phi_r, c.phi_n), (1.0, 1.0, 0.0, 0.0));
        }
        assert_eq!(r.n_eval_users, 4);
    }

    #[test]
    fn swapped_groups_keep_phi() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Array2::from_shape_simple_fn((14, 3), || StandardNormal.sample(&mut rng));
        let h = EmbeddingTable::new(m, 6).unwrap();
        let train = build_graph(&[(0, 0), (1, 1), (2, 2), (3, 3), (4, 4), (5, 5)], 6, 8);
        let targets = [(0, 3), (1, 6), (2, 7), (3, 1), (4, 2), (5, 0), (5, 7)];
        let p = partition_users(&[0, 1, 1, 0, 1, 0]).unwrap();
        let a = evaluate(&h, &train, &targets, &p, &[2, 5]).unwrap();
        let b = evaluate(&h, &train, &targets, &p.swapped(), &[2, 5]).unwrap();
        for (x, y) in a.cutoffs.iter().zip(&b.cutoffs) {
            assert_eq!(x.phi_r, y.phi_r);
            assert_eq!(x.phi_n, y.phi_n);
        }
        assert_eq!(a, evaluate(&h, &train, &targets, &p, &[2, 5]).unwrap());
    }

    #[test]
    fn report_json_round_trip() {
        let r = MetricsReport {
            cutoffs: vec![CutoffMetrics {
                k: 10,
                recall: 0.25,
                ndcg: 0.3,
                phi_r: 0.01,
                phi_n: 0.02,
                group0_recall: 0.255,
                group1_recall: 0.245,
                group0_ndcg: 0.31,
                group1_ndcg: 0.29,
            }],
            n_eval_users: 5,
        };
        let text = r.to_json();
        assert!(text.contains("\"recall@10\""));
        assert_eq!(MetricsReport::from_json(&text).unwrap(), r);
    }

    #[test]
    fn export_round_trip() {
        let m = array![[0.1, 1.0 / 3.0], [-2.5e-7, 7.0], [1e300, -0.0]];
        let h = EmbeddingTable::new(m.clone(), 2).unwrap();
        let p = partition_users(&[0, 1]).unwrap();
        let csv = embeddings_csv(&h, &p).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "node_id,role,group,dim_0,dim_1");
        assert_eq!(lines.iter().filter(|l| l.contains(",user,")).count(), 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        export_embeddings(&h, &p, &path).unwrap();
        let back = read_embeddings(&path).unwrap();
        assert_eq!(back.matrix(), &m);
        assert_eq!(back.n_users(), 2);
    }

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    #[test]
    fn nmi_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x = Array2::zeros((40, 2));
        let mut labels = vec![0u8; 40];
        for i in 0..40 {
            let c = if i % 2 == 0 { -5.0 } else { 5.0 };
            labels[i] = (i % 2) as u8;
            x[[i, 0]] = c + 0.1 * normal(&mut rng);
            x[[i, 1]] = 0.1 * normal(&mut rng);
        }
        let p = partition_users(&labels).unwrap();
        assert!(embedding_nmi(x.view(), &p, 2, 1).unwrap() > 0.99);

        let same = Array2::from_elem((40, 2), 1.0);
        assert_eq!(embedding_nmi(same.view(), &p, 2, 1).unwrap(), 0.0);

        let mut vals: Vec<f64> = (0..10)
            .map(|seed| {
                let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
                let y = Array2::from_shape_simple_fn((200, 4), || StandardNormal.sample(&mut r));
                let l: Vec<u8> = (0..200).map(|_| r.gen_range(0..2)).collect();
                embedding_nmi(y.view(), &partition_users(&l).unwrap(), 2, seed).unwrap()
            })
            .collect();
        vals.sort_by(f64::total_cmp);
        assert!(vals[5] < 0.1, "{vals:?}");
    }

    #[test]
    fn nmi_is_label_permutation_invariant() {
        let c = [0, 0, 1, 1, 2, 2, 1];
        let y = [1, 1, 0, 0, 0, 1, 0];
        let c2: Vec<usize> = c.iter().map(|&x| (x + 1) % 3).collect();
        assert!((nmi(&c, &y) - nmi(&c2, &y)).abs() < 1e-12);
        assert!((nmi(&[0, 0, 1, 1], &[0, 0, 1, 1]) - 1.0).abs() < 1e-12);
    }
}
