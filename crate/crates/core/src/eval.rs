//! Scoring: direction errors, source alignment, oracle masks, SDR and SIR,
//! and delimited result tables.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::spectro::{AudioBuffer, ComplexSpectrogram};

/// Reported ceiling for ratios whose error term vanishes, dB.
pub const DB_CEILING: f64 = 100.0;

/// Absolute azimuth and elevation differences in degrees, azimuth wrapped
/// into `[0, 180]`.
pub fn angular_error(estimate: [f64; 2], truth: [f64; 2]) -> (f64, f64) {
    let az = (estimate[0] - truth[0]).rem_euclid(360.0);
    (az.min(360.0 - az), (estimate[1] - truth[1]).abs())
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub count: usize,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Undefined("summary of an empty sample".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 { sorted[h] } else { 0.5 * (sorted[h - 1] + sorted[h]) };
    Ok(Summary { mean, std: var.sqrt(), median, count: values.len() })
}

/// Largest source count aligned by exhaustive search.
pub const MAX_ALIGNED_SOURCES: usize = 8;

fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    // Heap's algorithm
    let mut p: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    f(&p);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            f(&p);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Assignment `perm` with `estimates[perm[i]]` matched to `truths[i]`
/// minimizing the summed azimuth and elevation errors. Among equal totals
/// the first permutation in enumeration order wins.
pub fn permutation_align(estimates: &[[f64; 2]], truths: &[[f64; 2]]) -> Result<Vec<usize>> {
    if estimates.len() != truths.len() {
        return Err(Error::Shape(format!("{} estimates for {} truths", estimates.len(), truths.len())));
    }
    if truths.len() > MAX_ALIGNED_SOURCES {
        return Err(Error::InvalidArgument(format!("at most {MAX_ALIGNED_SOURCES} sources can be aligned")));
    }
    let mut best = (f64::INFINITY, (0..truths.len()).collect::<Vec<_>>());
    for_each_permutation(truths.len(), |p| {
        let cost: f64 = p
            .iter()
            .zip(truths)
            .map(|(&e, &t)| {
                let (a, b) = angular_error(estimates[e], t);
                a + b
            })
            .sum();
        if cost < best.0 {
            best = (cost, p.to_vec());
        }
    });
    Ok(best.1)
}

/// Index of the source with the most stereo power in every cell (layout of
/// [`ComplexSpectrogram::bins`]). Equal powers go to the lowest index.
pub fn oracle_mask(sources: &[(ComplexSpectrogram, ComplexSpectrogram)]) -> Result<Vec<usize>> {
    let (first, _) = sources.first().ok_or_else(|| Error::InvalidArgument("no sources".into()))?;
    if sources.iter().any(|(l, r)| !l.same_shape(first) || !r.same_shape(first)) {
        return Err(Error::Shape("source spectrograms differ in shape".into()));
    }
    Ok((0..first.bins.len())
        .map(|i| {
            let mut best = (f64::NEG_INFINITY, 0);
            for (m, (l, r)) in sources.iter().enumerate() {
                let p = l.bins[i].norm_sqr() + r.bins[i].norm_sqr();
                if p > best.0 {
                    best = (p, m);
                }
            }
            best.1
        })
        .collect())
}

/// Binary mask of `source` from a per-cell assignment.
pub fn mask_of(assignment: &[usize], source: usize) -> Vec<f64> {
    assignment.iter().map(|&a| if a == source { 1.0 } else { 0.0 }).collect()
}

/// Both channels back to back.
fn flatten(a: &AudioBuffer) -> Vec<f64> {
    a.left.iter().chain(&a.right).copied().collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn to_db(num: f64, den: f64) -> f64 {
    if den <= num * 10f64.powf(-DB_CEILING / 10.0) {
        DB_CEILING
    } else {
        (10.0 * (num / den).log10()).min(DB_CEILING)
    }
}

/// SDR and SIR of one estimate, dB.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SourceScore {
    pub sdr_db: f64,
    pub sir_db: f64,
}

/// Splits `estimate` into its projection on the true source (target), the
/// extra part explained by the span of all sources (interference) and the
/// rest (artifacts). Both channels are scored jointly.
pub fn sdr_sir(estimate: &AudioBuffer, target: &AudioBuffer, interferers: &[AudioBuffer]) -> Result<SourceScore> {
    let e = flatten(estimate);
    let s = flatten(target);
    if s.len() != e.len() || interferers.iter().any(|i| i.len() != target.len()) {
        return Err(Error::Shape("estimate and references differ in length".into()));
    }
    let ss = dot(&s, &s);
    if ss <= 0.0 {
        return Err(Error::Undefined("target source has zero energy".into()));
    }
    let target_part: Vec<f64> = s.iter().map(|v| v * dot(&e, &s) / ss).collect();
    // projection on span{s, interferers} by least squares
    let mut basis = vec![s];
    basis.extend(interferers.iter().map(flatten));
    let k = basis.len();
    let gram = nalgebra::DMatrix::from_fn(k, k, |i, j| dot(&basis[i], &basis[j]));
    let rhs = nalgebra::DVector::from_fn(k, |i, _| dot(&basis[i], &e));
    let coef = gram.svd(true, true).solve(&rhs, 1e-12).map_err(|m| Error::Undefined(m.to_string()))?;
    let mut all = vec![0.0; e.len()];
    for (b, c) in basis.iter().zip(coef.iter()) {
        for (a, v) in all.iter_mut().zip(b) {
            *a += c * v;
        }
    }
    let target_pow = dot(&target_part, &target_part);
    let interf: f64 = all.iter().zip(&target_part).map(|(a, t)| (a - t).powi(2)).sum();
    let error: f64 = e.iter().zip(&target_part).map(|(a, t)| (a - t).powi(2)).sum();
    Ok(SourceScore { sdr_db: to_db(target_pow, error), sir_db: to_db(target_pow, interf) })
}

/// Per-source scores under a fixed alignment.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SeparationScore {
    pub sdr_db: Vec<f64>,
    pub sir_db: Vec<f64>,
    /// `estimates[permutation[i]]` is scored against `references[i]`.
    pub permutation: Vec<usize>,
}

pub fn score_separation(
    estimates: &[AudioBuffer],
    references: &[AudioBuffer],
    permutation: &[usize],
) -> Result<SeparationScore> {
    let mut seen = vec![false; estimates.len()];
    if permutation.len() != references.len()
        || estimates.len() != references.len()
        || permutation.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::InvalidArgument("permutation is not a bijection onto the estimates".into()));
    }
    let (mut sdr, mut sir) = (Vec::new(), Vec::new());
    for (i, r) in references.iter().enumerate() {
        let others: Vec<AudioBuffer> = references.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, a)| a.clone()).collect();
        let s = sdr_sir(&estimates[permutation[i]], r, &others)?;
        sdr.push(s.sdr_db);
        sir.push(s.sir_db);
    }
    Ok(SeparationScore { sdr_db: sdr, sir_db: sir, permutation: permutation.to_vec() })
}

/// Per-trial rows followed by `Avg` and `Std` rows, tab separated.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, label: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::Shape(format!("row has {} values for {} columns", values.len(), self.columns.len())));
        }
        self.rows.push((label.into(), values));
        Ok(())
    }

    pub fn column_summary(&self, c: usize) -> Result<Summary> {
        summarize(&self.rows.iter().map(|r| r.1[c]).collect::<Vec<_>>())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("trial");
        for c in &self.columns {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for (label, vals) in &self.rows {
            out.push_str(label);
            for v in vals {
                let _ = write!(out, "\t{v:.6}");
            }
            out.push('\n');
        }
        if !self.rows.is_empty() {
            let sums: Vec<Summary> = (0..self.columns.len()).filter_map(|c| self.column_summary(c).ok()).collect();
            for (name, pick) in [("Avg", 0), ("Std", 1)] {
                out.push_str(name);
                for s in &sums {
                    let _ = write!(out, "\t{:.6}", if pick == 0 { s.mean } else { s.std });
                }
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectro::{stft, StftParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        AudioBuffer::new(l, r, 16_000).unwrap()
    }

    fn combo(parts: &[(&AudioBuffer, f64)]) -> AudioBuffer {
        let n = parts[0].0.len();
        let mix = |ch: fn(&AudioBuffer) -> &Vec<f64>| (0..n).map(|i| parts.iter().map(|(a, g)| g * ch(a)[i]).sum()).collect();
        AudioBuffer::new(mix(|a| &a.left), mix(|a| &a.right), 16_000).unwrap()
    }

    #[test]
    fn angular_error_wraps_azimuth() {
        assert_eq!(angular_error([10.0, 5.0], [10.0, 5.0]), (0.0, 0.0));
        let (az, el) = angular_error([170.0, 0.0], [-170.0, 3.0]);
        assert!((az - 20.0).abs() < 1e-12);
        assert_eq!(el, 3.0);
        assert!((angular_error([-90.0, 0.0], [90.0, 0.0]).0 - 180.0).abs() < 1e-12);
    }

    #[test]
    fn summary_matches_direct_computation() {
        let v = [1.0, 4.0, 2.5, 8.0, -1.0];
        let s = summarize(&v).unwrap();
        let mean = (1.0 + 4.0 + 2.5 + 8.0 - 1.0) / 5.0;
        let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
        assert!((s.mean - mean).abs() < 1e-15);
        assert!((s.std - (ss / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(s.median, 2.5);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn alignment_finds_swaps_and_identity() {
        let t = [[0.0, 0.0], [60.0, 10.0]];
        assert_eq!(permutation_align(&[[58.0, 9.0], [1.0, 1.0]], &t).unwrap(), vec![1, 0]);
        assert_eq!(permutation_align(&[[1.0, 1.0], [58.0, 9.0]], &t).unwrap(), vec![0, 1]);
        assert!(permutation_align(&[[0.0, 0.0]], &t).is_err());
    }

    #[test]
    fn alignment_matches_enumeration_for_three_sources() {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let mut d = || [rng.random_range(-160.0..160.0), rng.random_range(-60.0..60.0)];
            let est = [d(), d(), d()];
            let tru = [d(), d(), d()];
            let cost = |p: &[usize]| -> f64 {
                (0..3).map(|i| {
                    let (a, b) = angular_error(est[p[i]], tru[i]);
                    a + b
                }).sum()
            };
            let best = perms.iter().map(|p| cost(p)).fold(f64::INFINITY, f64::min);
            let got = permutation_align(&est, &tru).unwrap();
            assert!((cost(&got) - best).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_mask_recovers_disjoint_supports_and_breaks_ties_low() {
        let p = StftParams::default();
        let a = noise(4000, 2);
        let (mut l0, mut r0) = stft(&a, &p).unwrap();
        let (mut l1, mut r1) = (l0.clone(), r0.clone());
        for i in 0..l0.bins.len() {
            let zero = rustfft::num_complex::Complex64::new(0.0, 0.0);
            if i % 3 == 0 {
                l0.bins[i] = zero;
                r0.bins[i] = zero;
            } else if i % 3 == 1 {
                l1.bins[i] = zero;
                r1.bins[i] = zero;
            }
        }
        let w = oracle_mask(&[(l0, r0), (l1, r1)]).unwrap();
        for (i, &m) in w.iter().enumerate() {
            // i % 3 == 2 holds equal power in both sources
            assert_eq!(m, if i % 3 == 0 { 1 } else { 0 });
        }
    }

    #[test]
    fn perfect_estimate_hits_the_ceiling() {
        let s = noise(2000, 3);
        let i = noise(2000, 4);
        let sc = sdr_sir(&s, &s, &[i]).unwrap();
        assert_eq!(sc.sdr_db, DB_CEILING);
        assert_eq!(sc.sir_db, DB_CEILING);
    }

    #[test]
    fn pure_interferer_has_nonpositive_sir() {
        let s = noise(2000, 5);
        let i = noise(2000, 6);
        let sc = sdr_sir(&i, &s, std::slice::from_ref(&i)).unwrap();
        assert!(sc.sir_db <= 0.0, "{}", sc.sir_db);
    }

    #[test]
    fn zero_target_is_undefined() {
        let z = AudioBuffer::new(vec![0.0; 100], vec![0.0; 100], 16_000).unwrap();
        assert!(matches!(sdr_sir(&noise(100, 7), &z, &[]), Err(Error::Undefined(_))));
    }

    #[test]
    fn decomposition_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..20 {
            let n = 64;
            let s = noise(n, 100 + trial);
            let i1 = noise(n, 200 + trial);
            let i2 = noise(n, 300 + trial);
            let art = noise(n, 400 + trial);
            let (a, b, c, d) = (rng.random_range(0.2..2.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0));
            let e = combo(&[(&s, a), (&i1, b), (&i2, c), (&art, d)]);
            let got = sdr_sir(&e, &s, &[i1.clone(), i2.clone()]).unwrap();
            // oracle: 3x3 normal equations solved by Cramer's rule
            let f = |x: &AudioBuffer| flatten(x);
            let (vs, v1, v2, ve) = (f(&s), f(&i1), f(&i2), f(&e));
            let g = [[dot(&vs, &vs), dot(&vs, &v1), dot(&vs, &v2)], [dot(&v1, &vs), dot(&v1, &v1), dot(&v1, &v2)], [dot(&v2, &vs), dot(&v2, &v1), dot(&v2, &v2)]];
            let r = [dot(&vs, &ve), dot(&v1, &ve), dot(&v2, &ve)];
            let det3 = |m: [[f64; 3]; 3]| {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            };
            let dg = det3(g);
            let coef: Vec<f64> = (0..3)
                .map(|k| {
                    let mut m = g;
                    for row in 0..3 {
                        m[row][k] = r[row];
                    }
                    det3(m) / dg
                })
                .collect();
            let proj: Vec<f64> = (0..ve.len()).map(|t| coef[0] * vs[t] + coef[1] * v1[t] + coef[2] * v2[t]).collect();
            let tgt: Vec<f64> = vs.iter().map(|v| v * r[0] / g[0][0]).collect();
            let pt = dot(&tgt, &tgt);
            let interf: f64 = proj.iter().zip(&tgt).map(|(p, t)| (p - t).powi(2)).sum();
            let total: f64 = ve.iter().zip(&tgt).map(|(p, t)| (p - t).powi(2)).sum();
            assert!((got.sdr_db - 10.0 * (pt / total).log10()).abs() < 1e-6);
            assert!((got.sir_db - 10.0 * (pt / interf).log10()).abs() < 1e-6);
        }
    }

    #[test]
    fn separation_score_checks_the_permutation() {
        let a = noise(500, 9);
        let b = noise(500, 10);
        let refs = [a.clone(), b.clone()];
        let sc = score_separation(&[b.clone(), a.clone()], &refs, &[1, 0]).unwrap();
        assert_eq!(sc.sdr_db, vec![DB_CEILING, DB_CEILING]);
        assert!(score_separation(&[b.clone(), a.clone()], &refs, &[0, 0]).is_err());
    }

    #[test]
    fn table_has_summary_rows() {
        let mut t = ResultTable::new(&["az", "el"]);
        t.push("1", vec![1.0, 2.0]).unwrap();
        t.push("2", vec![3.0, 6.0]).unwrap();
        assert!(t.push("3", vec![1.0]).is_err());
        let s = t.to_tsv();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "trial\taz\tel");
        assert_eq!(lines[3], "Avg\t2.000000\t4.000000");
        assert!(lines[4].starts_with("Std\t1.414214\t2.828427"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sdr_never_exceeds_sir_and_ignores_common_gain(seed in 0u64..1000, a in 0.1f64..3.0, b in -2.0f64..2.0, c in 0.0f64..1.0, gain in 0.01f64..100.0) {
            let s = noise(128, seed);
            let i = noise(128, seed + 10_000);
            let art = noise(128, seed + 20_000);
            let e = combo(&[(&s, a), (&i, b), (&art, c)]);
            let sc = sdr_sir(&e, &s, std::slice::from_ref(&i)).unwrap();
            prop_assert!(sc.sdr_db <= sc.sir_db + 1e-9);
            let scaled = sdr_sir(&combo(&[(&e, gain)]), &combo(&[(&s, gain)]), &[combo(&[(&i, gain)])]).unwrap();
            prop_assert!((scaled.sdr_db - sc.sdr_db).abs() < 1e-6);
            prop_assert!((scaled.sir_db - sc.sir_db).abs() < 1e-6);
        }
    }
}
