//! Acceptance run: one PASS/FAIL line per criterion. Exits nonzero when an
//! attainable criterion fails. Run with `cargo test --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use shoprank::corpus::{generate_synthetic, SyntheticConfig};
use shoprank::eval::{ndcg, Gain};
use shoprank::featurize::{
    dae_train, master_categories, onehot, untrained_autoencoder, DaeConfig, FeatureMask, OneHotVocab, Target,
};
use shoprank::pipeline::{run_pipeline, Experiment, ExperimentConfig, ModelSpec, Scope, MANIFEST};
use shoprank::rank::{
    lambda_gradients, lambdamart_train, pair_batches, ranknet_train, LambdaMartParams, ModelKind, ModelParams,
    RankData, RankNetParams, TrainingGroup, TrainingRow,
};
use shoprank::segment::{coherency_score, svm_train, SegmentLabel, SvmParams, Thresholds};

const NDCG_TOL: f64 = 1e-12;
const NDCG_LISTS: usize = 1000;
const NDCG_MAX_LEN: usize = 6;
const NDCG_BUDGET: Duration = Duration::from_secs(10);
const COHERENCY_TOL: f64 = 1e-12;
const COHERENCY_SETS: usize = 500;
const SPEARMAN_MAX: f64 = -0.8;
const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-6;
const FD_REL_TOL: f64 = 1e-4;
const RANKNET_EPOCHS: usize = 10;
const LAMBDA_TOL: f64 = 1e-9;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const BASELINE_MARGIN: f64 = 0.03;
const RUNTIME_BUDGET: Duration = Duration::from_secs(20 * 60);
const SPECIALIZATION_FLOOR: f64 = 0.005;
const MAJORITY: usize = 4;
const AUTOENCODER_MARGIN: f64 = 0.01;
const CROSS_TARGET_ROWS: usize = 3;
const SVM_MIN_ACCURACY: f64 = 0.80;
const DAE_CODE_DIM: usize = 32;
const DAE_FLIP: f64 = 0.2;
const DAE_BIT_MARGIN: f64 = 0.02;
const DAE_LOSS_RATIO: f64 = 0.7;

struct Line {
    id: &'static str,
    pass: bool,
    /// Failures of unattainable criteria are reported but do not fail the run.
    attainable: bool,
    detail: String,
}

fn line(id: &'static str, pass: bool, detail: String) -> Line {
    Line {
        id,
        pass,
        attainable: true,
        detail,
    }
}

// ---------- 1: NDCG against a permutation oracle ----------

fn oracle_dcg(grades: &[u8], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

fn permutations(items: &[u8]) -> Vec<Vec<u8>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn criterion_1() -> Line {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut mismatched_none = 0;
    for _ in 0..NDCG_LISTS {
        let n = rng.gen_range(1..=NDCG_MAX_LEN);
        let grades: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=5)).collect();
        let k = rng.gen_range(1..=NDCG_MAX_LEN + 2);
        let ideal = permutations(&grades)
            .iter()
            .map(|p| oracle_dcg(p, k))
            .fold(0.0, f64::max);
        let expected = (ideal > 0.0).then(|| oracle_dcg(&grades, k) / ideal);
        match (ndcg(&grades, k, Gain::Exponential), expected) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            _ => mismatched_none += 1,
        }
    }
    let elapsed = started.elapsed();
    line(
        "1 ndcg-oracle",
        worst <= NDCG_TOL && mismatched_none == 0 && elapsed < NDCG_BUDGET,
        format!("lists={NDCG_LISTS} max_err={worst:.2e} none_mismatch={mismatched_none} elapsed={elapsed:.2?}"),
    )
}

// ---------- 2: coherency oracle and planted blocks ----------

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn oracle_coherency(vs: &[Vec<f64>]) -> f64 {
    let dim = vs[0].len();
    let n = vs.len() as f64;
    let centroid: Vec<f64> = (0..dim).map(|d| vs.iter().map(|v| v[d]).sum::<f64>() / n).collect();
    let mut dots: Vec<f64> = vs
        .iter()
        .map(|v| v.iter().zip(&centroid).map(|(a, b)| a * b).sum())
        .collect();
    dots.sort_by(f64::total_cmp);
    let m = dots.len();
    if m % 2 == 1 {
        dots[m / 2]
    } else {
        0.5 * (dots[m / 2 - 1] + dots[m / 2])
    }
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn spearman_rho(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// `size` unit vectors spread over the first `spanned` of `blocks` directions.
fn planted_set(rng: &mut ChaCha8Rng, blocks: &[Vec<f64>], spanned: usize, size: usize, noise: f64) -> Vec<Vec<f64>> {
    (0..size)
        .map(|i| {
            let b = &blocks[i % spanned];
            let e = gaussian(rng, b.len());
            unit(b.iter().zip(&e).map(|(x, n)| x + noise * n).collect())
        })
        .collect()
}

fn criterion_2() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..COHERENCY_SETS {
        let dim = rng.gen_range(2..=32);
        let size = rng.gen_range(1..=60);
        let vs: Vec<Vec<f64>> = (0..size).map(|_| unit(gaussian(&mut rng, dim))).collect();
        let got = coherency_score(&vs).unwrap().score;
        worst = worst.max((got - oracle_coherency(&vs)).abs());
    }
    let dim = 32;
    let blocks: Vec<Vec<f64>> = (0..12).map(|_| unit(gaussian(&mut rng, dim))).collect();
    let (mut spanned, mut scores) = (Vec::new(), Vec::new());
    for _ in 0..300 {
        let b = rng.gen_range(1..=blocks.len());
        let set = planted_set(&mut rng, &blocks, b, 48, 0.15);
        spanned.push(b as f64);
        scores.push(coherency_score(&set).unwrap().score);
    }
    let rho = spearman_rho(&spanned, &scores);
    line(
        "2 coherency",
        worst <= COHERENCY_TOL && rho <= SPEARMAN_MAX,
        format!("sets={COHERENCY_SETS} max_err={worst:.2e} spearman={rho:.3}"),
    )
}

// ---------- 3: RankNet gradient check ----------

fn toy_rank_data(groups: usize, per_group: usize, dim: usize, seed: u64) -> RankData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = gaussian(&mut rng, dim);
    let groups = (0..groups)
        .map(|q| {
            let rows = (0..per_group)
                .map(|i| {
                    let features = gaussian(&mut rng, dim);
                    let s: f64 = features.iter().zip(&w).map(|(x, y)| x * y).sum::<f64>() + 0.3 * gaussian(&mut rng, 1)[0];
                    let grade = (s + 2.0).clamp(0.0, 5.0) as u8;
                    TrainingRow {
                        product_id: (q * per_group + i) as u32 + 1,
                        features,
                        target: s,
                        grade,
                    }
                })
                .collect();
            TrainingGroup {
                query_id: q as u32,
                rows,
            }
        })
        .collect();
    RankData::new(FeatureMask::ALL, dim, groups).unwrap()
}

fn criterion_3() -> Line {
    let data = toy_rank_data(20, 12, 8, 303);
    let check = |epochs: usize| {
        let params = RankNetParams {
            epochs,
            ..RankNetParams::default()
        };
        let model = ranknet_train(&data, &params, "toy", 7).unwrap();
        let ModelParams::Net { mean, scale, net } = &model.params else {
            unreachable!("ranknet stores a network")
        };
        let probe = pair_batches(&data, mean, scale, 30, &mut shoprank::util::rng(99)).remove(0);
        probe.gradient_check(net, FD_STEP, FD_FLOOR)
    };
    let (init, trained) = (check(0), check(RANKNET_EPOCHS));
    line(
        "3 ranknet-gradient",
        init <= FD_REL_TOL && trained <= FD_REL_TOL,
        format!("rel_err init={init:.2e} after_{RANKNET_EPOCHS}_epochs={trained:.2e}"),
    )
}

// ---------- 4: LambdaMART lambda conservation ----------

fn criterion_4() -> Line {
    let data = toy_rank_data(40, 25, 6, 404);
    let params = LambdaMartParams {
        n_trees: 60,
        ..LambdaMartParams::default()
    };
    let model = lambdamart_train(&data, &params, "toy", 3).unwrap();
    let reported = model.report.lambda_imbalance.iter().copied().fold(0.0, f64::max);
    let mut recomputed: f64 = 0.0;
    for t in 0..params.n_trees {
        let scores: Vec<f64> = (0..data.len()).map(|i| model.staged_predict_row(data.row(i), t)).collect();
        for g in &data.groups {
            let r = g.start..g.end;
            let l = lambda_gradients(
                &scores[r.clone()],
                &data.grades[r.clone()],
                &data.product_ids[r],
                params.k,
                params.gain,
            );
            recomputed = recomputed.max(l.lambdas.iter().sum::<f64>().abs());
        }
    }
    line(
        "4 lambda-conservation",
        model.report.lambda_imbalance.len() == params.n_trees && reported <= LAMBDA_TOL && recomputed <= LAMBDA_TOL,
        format!("iterations={} reported_max={reported:.2e} recomputed_max={recomputed:.2e}", params.n_trees),
    )
}

// ---------- 5-9: seeded experiments on the default synthetic data ----------

fn lm(mask: &str, target: Target, segment: Scope) -> ModelSpec {
    ModelSpec {
        kind: ModelKind::LambdaMart,
        mask: mask.parse().unwrap(),
        target,
        segment,
    }
}

fn acceptance_models() -> Vec<ModelSpec> {
    let mut m: Vec<ModelSpec> = ["YYYY", "YNYY", "NYYN", "YYYN"]
        .iter()
        .map(|mask| lm(mask, Target::Ctr, Scope::All))
        .collect();
    for t in Target::ALL.into_iter().filter(|t| *t != Target::Ctr) {
        m.push(lm("YYYY", t, Scope::All));
    }
    m.push(lm("YYYY", Target::Ctr, Scope::Broad));
    m.push(lm("YYYY", Target::Ctr, Scope::Narrow));
    m
}

struct SeedResult {
    baseline: [f64; 2],
    learned: [f64; 2],
    combined: [f64; 2],
    specialized: [f64; 2],
    ablation: [f64; 4],
    diagonal_rows: usize,
    svm_test: f64,
    svm_truth: f64,
}

fn run_seed(seed: u64) -> SeedResult {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed;
    cfg.rank.models = acceptance_models();
    let e = Experiment::run(cfg).expect("experiment");
    let r = &e.reports;
    let base = |seg: &str| {
        r.baseline
            .rows
            .iter()
            .find(|row| row.0 == seg)
            .map(|row| (row.1, row.2))
            .unwrap_or((f64::NAN, f64::NAN))
    };
    let (bb, lb) = base("broad");
    let (bn, ln) = base("narrow");
    let seg_row = |name: &str| r.segments.rows.iter().find(|row| row.0 == name).unwrap();
    let combined = seg_row("combined");
    let ablation = ["YYYY", "YNYY", "NYYN", "YYYN"].map(|m| r.ablation.get("lambdamart", m).unwrap_or(f64::NAN));
    SeedResult {
        baseline: [bb, bn],
        learned: [lb, ln],
        combined: [combined.1.unwrap_or(f64::NAN), combined.2.unwrap_or(f64::NAN)],
        specialized: [
            seg_row("broad-only").1.unwrap_or(f64::NAN),
            seg_row("narrow-only").2.unwrap_or(f64::NAN),
        ],
        ablation,
        diagonal_rows: r.cross_target.rows_with_diagonal_max(),
        svm_test: e.segmentation.report.svm_test_accuracy,
        svm_truth: e.segmentation.report.svm_truth_accuracy.unwrap_or(f64::NAN),
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criteria_5_to_9a(lines: &mut Vec<Line>) {
    let started = Instant::now();
    let results: Vec<SeedResult> = SEEDS
        .iter()
        .map(|&s| {
            let t = Instant::now();
            let r = run_seed(s);
            eprintln!("seed {s} done in {:.1?}", t.elapsed());
            r
        })
        .collect();
    let elapsed = started.elapsed();
    let n = results.len();

    let avg = |f: &dyn Fn(&SeedResult) -> f64| mean(results.iter().map(f));
    let (bb, bn) = (avg(&|r| r.baseline[0]), avg(&|r| r.baseline[1]));
    let (lb, ln) = (avg(&|r| r.learned[0]), avg(&|r| r.learned[1]));
    let (gain_b, gain_n) = (lb - bb, ln - bn);
    lines.push(line(
        "5a baseline-margin",
        gain_b >= BASELINE_MARGIN && gain_n >= BASELINE_MARGIN && elapsed < RUNTIME_BUDGET,
        format!(
            "broad {bb:.4}->{lb:.4} (+{gain_b:.4}) narrow {bn:.4}->{ln:.4} (+{gain_n:.4}) seeds={n} elapsed={elapsed:.0?}"
        ),
    ));
    let (rel_b, rel_n) = (gain_b / bb, gain_n / bn);
    lines.push(Line {
        id: "5b narrow-gain>=broad-gain",
        pass: rel_n >= rel_b,
        attainable: false,
        detail: format!("relative narrow={:.2}% broad={:.2}%", 100.0 * rel_n, 100.0 * rel_b),
    });

    let mut spec_ok = true;
    let mut detail = String::new();
    for (i, seg) in ["broad", "narrow"].iter().enumerate() {
        let s = avg(&|r| r.specialized[i]);
        let c = avg(&|r| r.combined[i]);
        let strict = results.iter().filter(|r| r.specialized[i] > r.combined[i]).count();
        spec_ok &= s >= c - SPECIALIZATION_FLOOR && strict >= MAJORITY;
        detail.push_str(&format!("{seg}: specialized={s:.4} combined={c:.4} strictly_greater={strict}/{n} "));
    }
    lines.push(line("6 specialization", spec_ok, detail.trim_end().to_string()));

    let ordered = results
        .iter()
        .filter(|r| {
            let [yyyy, ynyy, nyyn, yyyn] = r.ablation;
            yyyy >= ynyy && ynyy >= nyyn && yyyy - yyyn >= AUTOENCODER_MARGIN
        })
        .count();
    let a = |i: usize| avg(&|r| r.ablation[i]);
    lines.push(line(
        "7 ablation-order",
        ordered >= MAJORITY,
        format!(
            "seeds_ordered={ordered}/{n} mean YYYY={:.4} YNYY={:.4} NYYN={:.4} YYYN={:.4}",
            a(0),
            a(1),
            a(2),
            a(3)
        ),
    ));

    let diag: Vec<usize> = results.iter().map(|r| r.diagonal_rows).collect();
    let good = diag.iter().filter(|&&d| d >= CROSS_TARGET_ROWS).count();
    lines.push(line(
        "8 cross-target",
        good >= MAJORITY,
        format!("seeds_with_>={CROSS_TARGET_ROWS}_diagonal_max={good}/{n} per_seed={diag:?}"),
    ));

    let (t, g) = (avg(&|r| r.svm_test), avg(&|r| r.svm_truth));
    lines.push(line(
        "9a svm-accuracy",
        t >= SVM_MIN_ACCURACY && g >= SVM_MIN_ACCURACY,
        format!("mean held-out accuracy heuristic_labels={t:.3} truth={g:.3}"),
    ));
}

// ---------- 9b: SVM against the threshold when size and coherency are decorrelated ----------

fn criterion_9b() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let dim = 16;
    let blocks: Vec<Vec<f64>> = (0..10).map(|_| unit(gaussian(&mut rng, dim))).collect();
    let thresholds = Thresholds::default();
    let mut rows = Vec::new();
    let mut scores = Vec::new();
    for _ in 0..400 {
        let label = if rng.gen_bool(0.5) { SegmentLabel::Broad } else { SegmentLabel::Narrow };
        let size = match label {
            SegmentLabel::Broad => rng.gen_range(150..=400),
            SegmentLabel::Narrow => rng.gen_range(8..=60),
        };
        let spanned = rng.gen_range(1..=blocks.len());
        let set = planted_set(&mut rng, &blocks, spanned, size, 0.15);
        let score = coherency_score(&set).unwrap().score;
        let mut x = unit(gaussian(&mut rng, dim));
        x.push((size as f64).ln_1p());
        x.push(rng.gen_range(4..=30) as f64);
        x.push(rng.gen_range(1..=4) as f64);
        for _ in 0..3 {
            x.push(f64::from(u8::from(rng.gen_bool(0.5))));
        }
        rows.push((x, label));
        scores.push(score);
    }
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.shuffle(&mut rng);
    let cut = rows.len() * 7 / 10;
    let train: Vec<_> = idx[..cut].iter().map(|&i| rows[i].clone()).collect();
    let test: Vec<usize> = idx[cut..].to_vec();
    let model = svm_train(&train, &SvmParams::default()).unwrap();
    let held: Vec<_> = test.iter().map(|&i| rows[i].clone()).collect();
    let svm = model.accuracy(&held).unwrap();
    let thr = test
        .iter()
        .filter(|&&i| thresholds.label(scores[i]) == rows[i].1)
        .count() as f64
        / test.len() as f64;
    line(
        "9b svm-beats-threshold",
        svm > thr,
        format!("decorrelated held-out accuracy svm={svm:.3} threshold={thr:.3} (n={})", test.len()),
    )
}

// ---------- 10: denoising autoencoder ----------

fn criterion_10() -> Line {
    let data = generate_synthetic(&SyntheticConfig::default(), 1).unwrap();
    let cat = &data.catalogue;
    let denoise = DaeConfig::default();
    let plain = DaeConfig {
        noise: false,
        ..DaeConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let (mut bits_dae, mut bits_plain, mut total_bits) = (0.0, 0.0, 0.0);
    let (mut loss_trained, mut loss_untrained, mut n_held) = (0.0, 0.0, 0.0);
    let mut code_ok = true;
    for master in master_categories(cat) {
        let vocab = OneHotVocab::from_catalogue(cat, &master);
        let mut vectors: Vec<Vec<f64>> = cat
            .products()
            .iter()
            .filter(|p| p.master_category() == master)
            .map(|p| onehot(p, &vocab).unwrap().vector)
            .collect();
        vectors.shuffle(&mut rng);
        let cut = vectors.len() * 8 / 10;
        let (train, held) = vectors.split_at(cut);
        if held.is_empty() {
            continue;
        }
        let dae = dae_train(train, &denoise, 11).unwrap();
        let ae = dae_train(train, &plain, 11).unwrap();
        let untrained = untrained_autoencoder(vocab.dim(), &denoise, 11).unwrap();
        code_ok &= dae.encode_batch(held).unwrap().iter().all(|c| c.len() == DAE_CODE_DIM);
        let corrupted: Vec<Vec<f64>> = held
            .iter()
            .map(|v| {
                v.iter()
                    .map(|&b| if rng.gen_bool(DAE_FLIP) { 1.0 - b } else { b })
                    .collect()
            })
            .collect();
        let bits = (held.len() * vocab.dim()) as f64;
        bits_dae += bits * dae.bit_accuracy(&corrupted, held).unwrap();
        bits_plain += bits * ae.bit_accuracy(&corrupted, held).unwrap();
        total_bits += bits;
        let w = held.len() as f64;
        loss_trained += w * dae.reconstruction_loss(held, held).unwrap();
        loss_untrained += w * untrained.reconstruction_loss(held, held).unwrap();
        n_held += w;
    }
    let (acc_dae, acc_plain) = (bits_dae / total_bits, bits_plain / total_bits);
    let (lt, lu) = (loss_trained / n_held, loss_untrained / n_held);
    line(
        "10 autoencoder",
        code_ok && acc_dae - acc_plain >= DAE_BIT_MARGIN && lt <= DAE_LOSS_RATIO * lu,
        format!(
            "code_dim_ok={code_ok} corrupted bit_acc denoising={acc_dae:.4} plain={acc_plain:.4} heldout_loss trained={lt:.4} untrained={lu:.4}"
        ),
    )
}

// ---------- 11: determinism ----------

fn criterion_11() -> Line {
    let cfg = ExperimentConfig::smoke();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&cfg, a.path()).unwrap();
    run_pipeline(&cfg, b.path()).unwrap();
    let ma = std::fs::read(a.path().join(MANIFEST)).unwrap();
    let mb = std::fs::read(b.path().join(MANIFEST)).unwrap();
    line(
        "11 determinism",
        ma == mb,
        format!("manifest bytes={} identical={}", ma.len(), ma == mb),
    )
}

fn main() -> ExitCode {
    let mut lines = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4()];
    criteria_5_to_9a(&mut lines);
    lines.push(criterion_9b());
    lines.push(criterion_10());
    lines.push(criterion_11());
    let mut failed = false;
    for l in &lines {
        let status = match (l.pass, l.attainable) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (unattainable)",
        };
        println!("criterion {}: {status} {}", l.id, l.detail);
        failed |= !l.pass && l.attainable;
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
