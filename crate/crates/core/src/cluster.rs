//! k-means over province diversity series, with silhouette-based choice
//! of k.

use std::ops::RangeInclusive;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::diversity::DiversitySeries;
use crate::error::{Error, Result};
use crate::io::{write_atomic, write_json};

pub const MAX_ITERATIONS: usize = 300;
pub const DEFAULT_RESTARTS: usize = 10;
/// Provinces with more absent days than this fraction are left out.
pub const MAX_ABSENT_FRACTION: f64 = 0.5;

/// Rectangular provinces × dates table without gaps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesMatrix {
    pub provinces: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<Vec<f64>>,
    /// Provinces removed for having too many absent days.
    pub dropped: Vec<String>,
}

impl SeriesMatrix {
    pub fn new(provinces: Vec<String>, dates: Vec<NaiveDate>, values: Vec<Vec<f64>>) -> Result<Self> {
        if provinces.len() != values.len() || values.iter().any(|r| r.len() != dates.len()) {
            return Err(Error::InvalidArgument("series matrix is not rectangular".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("series matrix has non-finite values".into()));
        }
        Ok(Self {
            provinces,
            dates,
            values,
            dropped: Vec::new(),
        })
    }

    /// Builds the matrix from per-province series sharing one date axis.
    /// Gaps are filled by linear interpolation (constant past the ends).
    pub fn from_series(series: &[DiversitySeries]) -> Result<Self> {
        let dates = series.first().map(|s| s.dates.clone()).unwrap_or_default();
        if series.iter().any(|s| s.dates != dates) {
            return Err(Error::InvalidArgument("series have different date axes".into()));
        }
        let mut m = Self::new(Vec::new(), dates, Vec::new())?;
        for s in series {
            match impute(&s.values) {
                Some(row) => {
                    m.provinces.push(s.province.clone());
                    m.values.push(row);
                }
                None => m.dropped.push(s.province.clone()),
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.values.len()
    }
}

/// Linear interpolation over gaps; `None` if more than half is missing.
pub fn impute(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    let absent = values.len() - known.len();
    if known.is_empty() || absent as f64 > MAX_ABSENT_FRACTION * values.len() as f64 {
        return None;
    }
    let mut out = Vec::with_capacity(values.len());
    let mut next = 0;
    for i in 0..values.len() {
        while next < known.len() && known[next].0 < i {
            next += 1;
        }
        let v = match (next.checked_sub(1).map(|p| known[p]), known.get(next)) {
            (_, Some(&(j, v))) if j == i => v,
            (Some((a, va)), Some(&(b, vb))) => va + (vb - va) * (i - a) as f64 / (b - a) as f64,
            (Some((_, va)), None) => va,
            (None, Some(&(_, vb))) => vb,
            (None, None) => unreachable!(),
        };
        out.push(v);
    }
    Some(out)
}

/// Per-date spread of one cluster's members.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    pub k: usize,
    /// Cluster label per matrix row.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Σ over rows of the squared distance to the assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
}

impl Clustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Mean ± std band per cluster and date.
    pub fn bands(&self, matrix: &SeriesMatrix) -> Vec<Vec<Band>> {
        (0..self.k)
            .map(|c| {
                let members: Vec<&Vec<f64>> = matrix
                    .values
                    .iter()
                    .zip(&self.assignments)
                    .filter(|(_, &a)| a == c)
                    .map(|(r, _)| r)
                    .collect();
                let n = members.len() as f64;
                (0..matrix.dates.len())
                    .map(|t| {
                        let col = members.iter().map(|r| r[t]);
                        let mean = col.clone().sum::<f64>() / n;
                        let var = col.clone().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                        Band {
                            mean,
                            std: var.sqrt(),
                            min: col.clone().fold(f64::INFINITY, f64::min),
                            max: col.fold(f64::NEG_INFINITY, f64::max),
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

fn means(data: &[Vec<f64>], assign: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dims = data.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dims]; k];
    let mut counts = vec![0usize; k];
    for (row, &a) in data.iter().zip(assign) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(row) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

/// Gives each empty cluster the point farthest from its own centroid,
/// taken from a cluster that can spare one.
fn fill_empty(data: &[Vec<f64>], assign: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assign.iter() {
        sizes[a] += 1;
    }
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        let mut far: Option<(usize, f64)> = None;
        for (i, row) in data.iter().enumerate() {
            if sizes[assign[i]] < 2 {
                continue;
            }
            let d = sq_dist(row, &centroids[assign[i]]);
            if far.is_none_or(|(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        let (i, _) = far.expect("k <= rows leaves a cluster with a spare point");
        sizes[assign[i]] -= 1;
        sizes[j] = 1;
        assign[i] = j;
        centroids[j] = data[i].clone();
    }
}

fn lloyd(data: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> Clustering {
    let k = centroids.len();
    let mut assign: Vec<usize> = data.iter().map(|r| nearest(r, &centroids)).collect();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        fill_empty(data, &mut assign, &mut centroids);
        centroids = means(data, &assign, k);
        let next: Vec<usize> = data.iter().map(|r| nearest(r, &centroids)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    fill_empty(data, &mut assign, &mut centroids);
    let centroids = means(data, &assign, k);
    let inertia = data
        .iter()
        .zip(&assign)
        .map(|(r, &a)| sq_dist(r, &centroids[a]))
        .sum();
    Clustering {
        k,
        assignments: assign,
        centroids,
        inertia,
        iterations,
    }
}

/// k-means++ seeding: each next centre is drawn with probability
/// proportional to the squared distance to the nearest chosen centre.
fn seed_centroids(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![data[rng.gen_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = data.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            while d2[chosen] == 0.0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.gen_range(0..data.len())
        };
        centroids.push(data[pick].clone());
        for (i, r) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn better(a: Clustering, b: Clustering) -> Clustering {
    if b.inertia < a.inertia {
        b
    } else {
        a
    }
}

/// Best of `restarts` seeded Lloyd runs. Restart `r` draws from the ChaCha
/// stream `r` of `seed`, so results do not depend on thread scheduling.
pub fn kmeans(matrix: &SeriesMatrix, k: usize, seed: u64, restarts: usize) -> Result<Clustering> {
    let n = matrix.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} with {n} series")));
    }
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be positive".into()));
    }
    let runs: Vec<Clustering> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            lloyd(&matrix.values, seed_centroids(&matrix.values, k, &mut rng))
        })
        .collect();
    Ok(runs.into_iter().reduce(better).expect("restarts > 0"))
}

/// Lloyd run started from `prev`'s centroids plus the point farthest from
/// its centroid. Its inertia never exceeds `prev`'s.
fn split_farthest(data: &[Vec<f64>], prev: &Clustering) -> Clustering {
    let far = data
        .iter()
        .zip(&prev.assignments)
        .enumerate()
        .map(|(i, (r, &a))| (i, sq_dist(r, &prev.centroids[a])))
        .fold((0, f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best })
        .0;
    let mut init = prev.centroids.clone();
    init.push(data[far].clone());
    lloyd(data, init)
}

/// Mean silhouette; points in singleton clusters score 0.
pub fn silhouette(data: &[Vec<f64>], assign: &[usize], k: usize) -> f64 {
    let n = data.len();
    let mut sizes = vec![0usize; k];
    for &a in assign {
        sizes[a] += 1;
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            if sizes[assign[i]] < 2 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[assign[j]] += sq_dist(&data[i], &data[j]).sqrt();
                }
            }
            let a = sums[assign[i]] / (sizes[assign[i]] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != assign[i] && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 && b.is_finite() {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .sum();
    total / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KDiagnostic {
    pub k: usize,
    pub inertia: f64,
    pub silhouette: Option<f64>,
    /// I(k−1) − 2·I(k) + I(k+1), where defined.
    pub second_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSelection {
    pub k_star: usize,
    /// Set when every series is identical and no k > 1 is meaningful.
    pub degenerate: bool,
    pub elbow_k: Option<usize>,
    pub diagnostics: Vec<KDiagnostic>,
    pub best: Clustering,
}

/// Runs k-means for every k in `k_range` and picks k* by the largest mean
/// silhouette (ties → smaller k). Inertia alone always favours larger k,
/// so the elbow (largest second difference of inertia) is only reported.
pub fn select_k(matrix: &SeriesMatrix, k_range: RangeInclusive<usize>, seed: u64, restarts: usize) -> Result<KSelection> {
    let n = matrix.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("no series to cluster".into()));
    }
    let data = &matrix.values;
    let lo = (*k_range.start()).max(2);
    let hi = (*k_range.end()).min(n);

    let one = lloyd(data, vec![means(data, &vec![0; n], 1).remove(0)]);
    if one.inertia <= 1e-24 || lo > hi {
        return Ok(KSelection {
            k_star: 1,
            degenerate: true,
            elbow_k: None,
            diagnostics: vec![KDiagnostic {
                k: 1,
                inertia: one.inertia,
                silhouette: None,
                second_difference: None,
            }],
            best: one,
        });
    }

    // k = lo-1 anchors the first second difference; k = 1 is closed form.
    let mut fits: Vec<Clustering> = Vec::new();
    let mut prev = if lo == 2 { one } else { kmeans(matrix, lo - 1, seed, restarts)? };
    let anchor = prev.inertia;
    for k in lo..=hi {
        let fit = better(kmeans(matrix, k, seed, restarts)?, split_farthest(data, &prev));
        prev = fit.clone();
        fits.push(fit);
    }
    let sil: Vec<f64> = fits.iter().map(|f| silhouette(data, &f.assignments, f.k)).collect();
    let inertia: Vec<f64> = std::iter::once(anchor).chain(fits.iter().map(|f| f.inertia)).collect();
    let diagnostics: Vec<KDiagnostic> = fits
        .iter()
        .enumerate()
        .map(|(i, f)| KDiagnostic {
            k: f.k,
            inertia: f.inertia,
            silhouette: Some(sil[i]),
            second_difference: inertia.get(i + 2).map(|next| inertia[i] - 2.0 * inertia[i + 1] + next),
        })
        .collect();
    let argmax = |vals: &mut dyn Iterator<Item = (usize, f64)>| {
        vals.fold(None, |best: Option<(usize, f64)>, (k, v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((k, v)),
        })
        .map(|(k, _)| k)
    };
    let k_star = argmax(&mut diagnostics.iter().filter_map(|d| d.silhouette.map(|s| (d.k, s)))).unwrap_or(lo);
    let elbow_k = argmax(&mut diagnostics.iter().filter_map(|d| d.second_difference.map(|s| (d.k, s))));
    let best = fits.swap_remove(k_star - lo);
    Ok(KSelection {
        k_star,
        degenerate: false,
        elbow_k,
        diagnostics,
        best,
    })
}

#[derive(Serialize)]
struct ClusterExport<'a> {
    k_star: usize,
    degenerate: bool,
    elbow_k: Option<usize>,
    diagnostics: &'a [KDiagnostic],
    assignments: Vec<(&'a str, usize)>,
    dates: &'a [NaiveDate],
    centroids: &'a [Vec<f64>],
    bands: Vec<Vec<Band>>,
    dropped: &'a [String],
}

/// JSON with the k table, assignments, centroids and bands.
pub fn write_selection_json(matrix: &SeriesMatrix, sel: &KSelection, path: &Path) -> Result<()> {
    let export = ClusterExport {
        k_star: sel.k_star,
        degenerate: sel.degenerate,
        elbow_k: sel.elbow_k,
        diagnostics: &sel.diagnostics,
        assignments: matrix
            .provinces
            .iter()
            .map(String::as_str)
            .zip(sel.best.assignments.iter().copied())
            .collect(),
        dates: &matrix.dates,
        centroids: &sel.best.centroids,
        bands: sel.best.bands(matrix),
        dropped: &matrix.dropped,
    };
    write_json(path, &export)
}

/// `cluster,province` member lists.
pub fn write_members_csv(matrix: &SeriesMatrix, clustering: &Clustering, path: &Path) -> Result<()> {
    let mut rows: Vec<(usize, &str)> = clustering
        .assignments
        .iter()
        .copied()
        .zip(matrix.provinces.iter().map(String::as_str))
        .collect();
    rows.sort();
    write_atomic(path, |w| {
        writeln!(w, "cluster,province")?;
        for (c, p) in rows {
            writeln!(w, "{c},{p}")?;
        }
        Ok(())
    })
}
