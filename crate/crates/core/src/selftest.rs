//! Built-in invariant suite, runnable from the command line in seconds.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::aggregation::{aggregate, aggregate_mean_baseline, permutation_expectation};
use crate::codec::{Codec, MockCodec, PromptId};
use crate::error::Result;
use crate::explorer::kappa;
use crate::oracle::SyntheticObjective;
use crate::rng::{self, StreamRng};
use crate::stats::wilcoxon_one_sided;
use crate::surrogate::gp::{jittered_cholesky, GpState};
use crate::surrogate::kernel::{gram, matern32, KernelParams};
use crate::types::CandidateEmbedding;

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub struct SelftestOptions {
    /// Codec used by the round-trip property; defaults to a seeded mock.
    pub codec: MockCodec,
    pub seed: u64,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            codec: MockCodec::new("CNO()=#1SFl[]+-", 32, 80, 11).expect("default mock table is well separated"),
            seed: 20240601,
        }
    }
}

type Check = fn(&mut StreamRng, &mut MockCodec) -> Result<std::result::Result<String, String>>;

const CHECKS: [(&str, Check); 10] = [
    ("aggregation halves sum to token mean", halves_sum),
    ("permutation expectation closed form", permutation_closed_form),
    ("mean baseline is order invariant", mean_baseline_invariant),
    ("confidence weight values", kappa_values),
    ("Matern-3/2 at r = length scale", matern_value),
    ("composite Gram matrices factor", gram_psd),
    ("GP posterior matches dense solve", gp_dense_solve),
    ("mock codec round trip", mock_round_trip),
    ("Wilcoxon exact p-value", wilcoxon_exact),
    ("synthetic objective examples", synthetic_examples),
];

pub fn run(opts: &mut SelftestOptions) -> Vec<PropertyResult> {
    let mut r = rng::stream(opts.seed);
    CHECKS
        .iter()
        .map(|(name, check)| {
            let started = Instant::now();
            let (passed, detail) = match check(&mut r, &mut opts.codec) {
                Ok(Ok(d)) => (true, d),
                Ok(Err(d)) => (false, d),
                Err(e) => (false, format!("error: {e}")),
            };
            PropertyResult {
                name,
                passed,
                detail: format!("{detail} ({} ms)", started.elapsed().as_millis()),
            }
        })
        .collect()
}

fn normal_matrix(r: &mut StreamRng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(r))
}

fn verdict(ok: bool, detail: String) -> Result<std::result::Result<String, String>> {
    Ok(if ok { Ok(detail) } else { Err(detail) })
}

fn halves_sum(r: &mut StreamRng, _: &mut MockCodec) -> Result<std::result::Result<String, String>> {
    let mut worst = 0f64;
    for _ in 0..200 {
        let n = r.random_range(1..=64);
        let d = r.random_range(1..=32);
        let z = normal_matrix(r, n, d);
        let agg = aggregate(z.view(), 64)?;
        let sum = &agg.first_half() + &agg.second_half();
        let mean = z.mean_axis(Axis(0)).expect("n >= 1");
        worst = worst.max((&sum - &mean).iter().fold(0f64, |m, v| m.max(v.abs())));
    }
    verdict(worst <= 1e-12, format!("max deviation {worst:.2e}"))
}

fn permutation_closed_form(r: &mut StreamRng, _: &mut MockCodec) -> Result<std::result::Result<String, String>> {
    let mut worst = 0f64;
    for _ in 0..20 {
        let n = r.random_range(1..=6);
        let l_max = r.random_range(n..=12);
        let z = normal_matrix(r, n, 3);
        let got = permutation_expectation(z.view(), l_max)?;
        let mu = z.mean_axis(Axis(0)).expect("n >= 1");
        let (nf, lf) = (n as f64, l_max as f64);
        let first = &mu * ((nf + 1.0) / (2.0 * lf));
        let second = &mu * ((lf - (nf + 1.0) / 2.0) / lf);
        let dev = (&got.first_half() - &first)
            .iter()
            .chain((&got.second_half() - &second).iter())
            .fold(0f64, |m, v| m.max(v.abs()));
        worst = worst.max(dev);
    }
    verdict(worst <= 1e-10, format!("max deviation {worst:.2e}"))
}

fn mean_baseline_invariant(r: &mut StreamRng, _: &mut MockCodec) -> Result<std::result::Result<String, String>> {
    let mut worst = 0f64;
    for _ in 0..50 {
        let n = r.random_range(2..=16);
        let z = normal_matrix(r, n, 4);
        let mut rows: Vec<usize> = (0..n).collect();
        rows.reverse();
        rows.rotate_left(r.random_range(0..n));
        let shuffled = z.select(Axis(0), &rows);
        let a = aggregate_mean_baseline(z.view(), 16)?;
        let b = aggregate_mean_baseline(shuffled.view(), 16)?;
        worst = worst.max((&a.values - &b.values).iter().fold(0f64, |m, v| m.max(v.abs())));
    }
    verdict(worst <= 1e-12, format!("max deviation {worst:.2e}"))
}

fn kappa_values(_: &mut StreamRng, _: &mut MockCodec) -> Result<std::result::Result<String, String>> {
    let k1 = kappa(1, 0.1)?;
    let mut prev = k1;
    let mut monotone = true;
    for t in 2..=500 {
        let k = kappa(t, 0.1)?;
        monotone &= k > prev;
        prev = k;
    }
    verdict(
        (k1 - 2.3672).abs() <= 1e-3 && monotone,
        format!("kappa(1, 0.1) = {k1:.5}, increasing in t: {monotone}"),
    )
}

fn matern_value(_: &mut StreamRng, _: &mut MockCodec) -> Result<std::result::Result<String, String>> {
    let v = matern32(1.3, 1.3, 1.0);
    verdict((v - 0.48336).abs() <= 1e-4, format!("{v:.6}"))
}

fn random_params(r: &mut StreamRng) -> KernelParams {
    KernelParams::from_constrained(
        (r.random_range(0.2..3.0), r.random_range(0.2..3.0)),
        (r.random_range(0.1..2.0), r.random_range(0.1..2.0)),
        (r.random_range(0.05..1.0), r.random_range(0.05..1.0)),
        r.random_range(1e-4..0.5),
    )
}

fn gram_psd(r: &mut StreamRng, _: &mut MockCodec) -> Result<std::result::Result<String, String>> {
    let mut failures = 0;
    for _ in 0..20 {
        let p = random_params(r);
        let x = normal_matrix(r, 20, 4);
        if jittered_cholesky(&gram(&p, x.view()), 0.0, 1e-6).is_err() {
            failures += 1;
        }
    }
    verdict(failures == 0, format!("{failures} of 20 Gram matrices failed to factor"))
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Array2<f64>, mut b: Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .expect("non-empty range");
        for k in 0..n {
            a.swap([col, k], [pivot, k]);
        }
        for k in 0..b.ncols() {
            b.swap([col, k], [pivot, k]);
        }
        for row in col + 1..n {
            let f = a[[row, col]] / a[[col, col]];
            for k in col..n {
                a[[row, k]] -= f * a[[col, k]];
            }
            for k in 0..b.ncols() {
                b[[row, k]] -= f * b[[col, k]];
            }
        }
    }
    for row in (0..n).rev() {
        for k in 0..b.ncols() {
            let mut s = b[[row, k]];
            for j in row + 1..n {
                s -= a[[row, j]] * b[[j, k]];
            }
            b[[row, k]] = s / a[[row, row]];
        }
    }
    b
}

fn gp_dense_solve(r: &mut StreamRng, _: &mut MockCodec) -> Result<std::result::Result<String, String>> {
    let mut worst = 0f64;
    let mut min_std = f64::INFINITY;
    for _ in 0..10 {
        let p = random_params(r);
        let x = normal_matrix(r, 10, 3);
        let y: Array1<f64> = (0..10).map(|_| r.random_range(-5.0..5.0)).collect();
        let q = normal_matrix(r, 5, 3);
        let gp = GpState::condition(p, x.clone(), y.view(), 1e-6)?;
        let got = gp.predict_batch(q.view())?;

        let t = gp.transform();
        let ys = (&y - t.mean) / t.std;
        let mut a = gram(&p, x.view());
        a.diag_mut().mapv_inplace(|v| v + p.noise() + gp.jitter());
        let cross = Array2::from_shape_fn((10, 5), |(i, j)| {
            crate::surrogate::kernel::kernel_eval(&p, x.row(i), q.row(j))
        });
        let alpha = dense_solve(a.clone(), ys.insert_axis(Axis(1)));
        let w = dense_solve(a, cross.clone());
        for (j, &(mean, std)) in got.iter().enumerate() {
            let m = cross.column(j).dot(&alpha.column(0)) * t.std + t.mean;
            let var = (p.prior_variance() + p.noise() - cross.column(j).dot(&w.column(j))).max(0.0);
            let s = var.sqrt() * t.std;
            worst = worst.max((mean - m).abs()).max((std - s).abs());
            min_std = min_std.min(std);
        }
    }
    verdict(
        worst <= 1e-8 && min_std >= 0.0,
        format!("max deviation {worst:.2e}, min std {min_std:.3e}"),
    )
}

fn mock_round_trip(r: &mut StreamRng, codec: &mut MockCodec) -> Result<std::result::Result<String, String>> {
    let alphabet = codec.alphabet().to_vec();
    let max = codec.max_len().min(40);
    let mut failures = 0;
    let trials = 300;
    for _ in 0..trials {
        let n = r.random_range(1..=max);
        let s: String = (0..n).map(|_| alphabet[r.random_range(0..alphabet.len())]).collect();
        let seq = codec.encode(&s)?;
        let back = codec.decode_repair(&CandidateEmbedding::from_seq(&seq, 0), PromptId::Repair)?;
        if back != s {
            failures += 1;
        }
    }
    verdict(failures == 0, format!("{failures} of {trials} strings changed"))
}

fn wilcoxon_exact(_: &mut StreamRng, _: &mut MockCodec) -> Result<std::result::Result<String, String>> {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [1.5, 3.0, 4.5, 6.0, 7.5];
    let p = wilcoxon_one_sided(&a, &b)?.p_value;
    verdict(p == 0.03125, format!("p = {p}"))
}

fn synthetic_examples(_: &mut StreamRng, _: &mut MockCodec) -> Result<std::result::Result<String, String>> {
    let o = SyntheticObjective::new("ABAB", 10.0, 0.01)?;
    let vals = [o.value("ABAB"), o.value("CDCD"), o.value("AB")];
    verdict(
        vals[0] == -10.0 && vals[1] == 0.0 && (vals[2] + 4.98).abs() < 1e-12,
        format!("{vals:?}"),
    )
}
