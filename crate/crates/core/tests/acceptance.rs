//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; the process fails if any
//! criterion does.

use std::fs;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dcnt::autodiff::{ParamStore, Tape, Tensor};
use dcnt::cluster::run_clustering;
use dcnt::dcm::{Dcm, DcmConfig};
use dcnt::gradsuite;
use dcnt::io::{ClassMap, LabelMap, ProbMap};
use dcnt::model::{loss, DcntModel, ModelConfig};
use dcnt::nn::Init;
use dcnt::pipeline::{evaluate, hard_vote, run_inference_set, soft_vote, train, TrainConfig};
use dcnt::synth::{synth_scene, SceneSpec};
use dcnt::trispec::{compute_capacity, generate_set, linear_stretch, RawImage, TrispecOptions};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1 --------------------------------------------------------------------------

fn capacity_table() -> Outcome {
    let expected = [(3, 1), (5, 10), (6, 20), (9, 84), (10, 120), (15, 455), (18, 816)];
    let got: Vec<(usize, usize)> = expected.iter().map(|&(g, _)| (g, compute_capacity(g).unwrap_or(0))).collect();
    check(got == expected, format!("{got:?}"))
}

// 2 --------------------------------------------------------------------------

fn stretch_oracle(raw: &[f64]) -> Vec<u8> {
    let mut sorted = raw.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // floor(0.02·(n−1)) and ceil(0.98·(n−1)) in exact integer arithmetic.
    let lo_rank = (2 * (n - 1)) / 100;
    let hi_rank = (98 * (n - 1) + 99) / 100;
    let (p, q) = (sorted[lo_rank], sorted[hi_rank]);
    if p == q {
        return vec![0; n];
    }
    raw.iter()
        .map(|&x| {
            if x <= p {
                0
            } else if x >= q {
                255
            } else {
                (255.0 * (x - p) / (q - p)).round() as u8
            }
        })
        .collect()
}

fn stretch_matches_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..200 {
        let (h, w) = (rng.random_range(1..24), rng.random_range(1..24));
        let coarse = rng.random_bool(0.3);
        let data: Vec<f64> = (0..3 * h * w)
            .map(|_| {
                let v: f64 = rng.random_range(-50.0..900.0);
                if coarse {
                    (v / 100.0).round()
                } else {
                    v
                }
            })
            .collect();
        let raw = RawImage { height: h, width: w, data: data.clone() };
        let got = linear_stretch(&raw).map_err(|e| e.to_string())?.image.data;
        let want = stretch_oracle(&data);
        if got != want {
            return Err(format!("case {case} ({h}x{w}) differs from the oracle"));
        }
        for i in 0..data.len() {
            for j in 0..data.len() {
                if data[i] < data[j] && got[i] > got[j] {
                    return Err(format!("case {case}: stretch is not monotone"));
                }
            }
        }
    }
    Ok("200 random images bit-exact, monotone, within [0, 255]".into())
}

// 3 --------------------------------------------------------------------------

fn gradient_suite() -> Outcome {
    let entries = gradsuite::run_suite(0).map_err(|e| e.to_string())?;
    let worst = entries.iter().max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error)).unwrap();
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name).collect();
    check(
        failed.is_empty(),
        format!(
            "{} blocks, worst {} at {:.2e}{}",
            entries.len(),
            worst.name,
            worst.report.max_rel_error,
            if failed.is_empty() { String::new() } else { format!(", failing: {failed:?}") }
        ),
    )
}

// 4 --------------------------------------------------------------------------

/// Dense soft clustering written directly from the definitions: regular grid
/// initialization, affinities over the full N×Z matrix restricted by an
/// explicit cell-neighborhood test, weighted-mean updates and a final argmax.
fn clustering_oracle(f: &[f64], c: usize, h: usize, w: usize, rows: usize, cols: usize, t: usize) -> (Vec<usize>, Vec<f64>) {
    let n = h * w;
    let z = rows * cols;
    let cell = |j: usize| {
        let (y, x) = (j / w, j % w);
        let r = (0..rows).rev().find(|&r| r * h / rows <= y).unwrap();
        let k = (0..cols).rev().find(|&k| k * w / cols <= x).unwrap();
        (r, k)
    };
    let allowed = |j: usize, i: usize| {
        let (r, k) = cell(j);
        let (ri, ki) = (i / cols, i % cols);
        r.abs_diff(ri) <= 1 && k.abs_diff(ki) <= 1
    };
    let feat = |j: usize, k: usize| f[k * n + j];
    let mut centers = vec![0.0; z * c];
    let mut counts = vec![0.0; z];
    for j in 0..n {
        let (r, k) = cell(j);
        let i = r * cols + k;
        counts[i] += 1.0;
        for ch in 0..c {
            centers[i * c + ch] += feat(j, ch);
        }
    }
    for i in 0..z {
        for ch in 0..c {
            centers[i * c + ch] /= counts[i];
        }
    }
    let mut affinity = vec![0.0; n * z];
    for _ in 0..t {
        for j in 0..n {
            for i in 0..z {
                let d: f64 = (0..c).map(|ch| (feat(j, ch) - centers[i * c + ch]).powi(2)).sum();
                affinity[j * z + i] = if allowed(j, i) { (-d).exp() } else { 0.0 };
            }
        }
        for i in 0..z {
            let mass: f64 = (0..n).map(|j| affinity[j * z + i]).sum();
            if mass == 0.0 {
                continue;
            }
            for ch in 0..c {
                centers[i * c + ch] = (0..n).map(|j| affinity[j * z + i] * feat(j, ch)).sum::<f64>() / mass;
            }
        }
    }
    let labels = (0..n)
        .map(|j| {
            let mut best = 0;
            for i in 1..z {
                if affinity[j * z + i] > affinity[j * z + best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    (labels, centers)
}

fn clustering_matches_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (c, h, w) = (4, 8, 8);
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for case in 0..50 {
        let f: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        // At Z = 4 every window covers all clusters; at Z = 16 it excludes some.
        for (z, rows, cols) in [(4, 2, 2), (16, 4, 4)] {
            for t in [1, 3, 5] {
                let tape = Tape::new();
                let var = tape.constant(Tensor::new(&[c, h, w], f.clone()).unwrap());
                let got = run_clustering(var, z, t).map_err(|e| e.to_string())?;
                let (labels, centers) = clustering_oracle(&f, c, h, w, rows, cols, t);
                if got.labels != labels {
                    return Err(format!("case {case}, Z={z}, T={t}: hard labels differ"));
                }
                let err = got.centers.value().data().iter().zip(&centers).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst = worst.max(err);
                if err > 1e-6 {
                    return Err(format!("case {case}, Z={z}, T={t}: centers differ by {err:.2e}"));
                }
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} runs, identical labels, max center error {worst:.2e}"))
}

// 5 --------------------------------------------------------------------------

fn zeroed_dcm_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for (seed, use_rac) in [(1u64, false), (2, false), (3, true)] {
        let cfg = DcmConfig { channels: 32, areas: 16, iterations: 3, heads: 2, use_rac, ..DcmConfig::default() };
        let mut store = ParamStore::new();
        let dcm = Dcm::new(&mut Init::new(&mut store, seed), "dcm", cfg).map_err(|e| e.to_string())?;
        dcm.zero_output_projections(&mut store);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
        let (c, h, w) = (32, 8, 10);
        let f: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();

        // Depthwise 3×3 positional encoding evaluated directly.
        let kernel = &store.get(dcm.regional_pos.weight).value;
        let bias = &store.get(dcm.regional_pos.bias).value;
        let mut shifted = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias.data()[ch];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (yy, xx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                            if (0..h as isize).contains(&yy) && (0..w as isize).contains(&xx) {
                                acc += kernel.data()[ch * 9 + ky * 3 + kx] * f[ch * h * w + yy as usize * w + xx as usize];
                            }
                        }
                    }
                    shifted[ch * h * w + y * w + x] = f[ch * h * w + y * w + x] + acc;
                }
            }
        }
        let mut expected = f.clone();
        for _ in 0..(1 + usize::from(use_rac)) {
            expected.extend_from_slice(&shifted);
        }

        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let out = dcm.forward(&p, tape.constant(Tensor::new(&[c, h, w], f).unwrap())).map_err(|e| e.to_string())?;
        let got = out.output.value();
        if got.len() != expected.len() {
            return Err(format!("output has {} values, expected {}", got.len(), expected.len()));
        }
        worst = worst.max(got.data().iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    check(worst < 1e-6, format!("max deviation {worst:.2e}"))
}

// 6 --------------------------------------------------------------------------

fn voting_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for draw in 0..500 {
        let classes = rng.random_range(1..=4usize);
        let m = rng.random_range(1..=6usize);
        let mut probs = Vec::with_capacity(m);
        let mut maps = Vec::with_capacity(m);
        for _ in 0..m {
            let labels: Vec<u16> = (0..9).map(|_| rng.random_range(1..=classes as u16)).collect();
            let mut values = vec![0f32; classes * 9];
            for (p, &l) in labels.iter().enumerate() {
                values[(l as usize - 1) * 9 + p] = 1.0;
            }
            probs.push(ProbMap::new(classes, 3, 3, values).unwrap());
            maps.push(ClassMap::new(3, 3, labels).unwrap());
        }
        let argmaxes: Vec<ClassMap> = probs.iter().map(ProbMap::argmax).collect();
        if argmaxes != maps {
            return Err(format!("draw {draw}: argmax of one-hot map changed labels"));
        }
        let soft = soft_vote(&probs).map_err(|e| e.to_string())?;
        let hard = hard_vote(&argmaxes).map_err(|e| e.to_string())?;
        if soft != hard {
            return Err(format!("draw {draw}: soft {:?} vs hard {:?}", soft.labels, hard.labels));
        }
    }
    Ok("500 draws identical".into())
}

// 7 --------------------------------------------------------------------------

fn metrics_oracle(pred: &[u16], truth: &[u16]) -> (f64, f64, f64) {
    let k = pred.iter().chain(truth).copied().max().unwrap() as usize;
    let mut m = vec![vec![0.0f64; k + 1]; k + 1];
    for (&p, &t) in pred.iter().zip(truth) {
        if t != 0 {
            m[t as usize][p as usize] += 1.0;
        }
    }
    let n: f64 = m.iter().flatten().sum();
    let diag: f64 = (1..=k).map(|i| m[i][i]).sum();
    let recalls: Vec<f64> =
        (1..=k).filter_map(|i| {
            let row: f64 = m[i].iter().sum();
            (row > 0.0).then(|| m[i][i] / row)
        }).collect();
    let pe: f64 = (1..=k).map(|i| m[i].iter().sum::<f64>() * (1..=k).map(|t| m[t][i]).sum::<f64>()).sum::<f64>() / (n * n);
    let oa = diag / n;
    (oa, recalls.iter().sum::<f64>() / recalls.len() as f64, (oa - pe) / (1.0 - pe))
}

fn metrics_match_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let (h, w) = (rng.random_range(1..12), rng.random_range(2..12));
        let classes = rng.random_range(2..=6u16);
        let pred: Vec<u16> = (0..h * w).map(|_| rng.random_range(1..=classes)).collect();
        let mut truth: Vec<u16> = (0..h * w).map(|_| if rng.random_bool(0.25) { 0 } else { rng.random_range(1..=classes) }).collect();
        truth[0] = 1;
        truth[1] = 2;
        let m = evaluate(&ClassMap::new(h, w, pred.clone()).unwrap(), &LabelMap::new(h, w, truth.clone()).unwrap())
            .map_err(|e| e.to_string())?;
        let (oa, aa, kappa) = metrics_oracle(&pred, &truth);
        let err = (m.oa - oa).abs().max((m.aa - aa).abs()).max((m.kappa - kappa).abs());
        if !(err <= 1e-12) {
            return Err(format!("case {case}: deviation {err:.2e}"));
        }
        worst = worst.max(err);
    }
    let truth = LabelMap::new(2, 2, vec![1, 2, 2, 1]).unwrap();
    let perfect = evaluate(&ClassMap::new(2, 2, vec![1, 2, 2, 1]).unwrap(), &truth).unwrap();
    let balanced = evaluate(&ClassMap::new(2, 2, vec![1, 1, 2, 2]).unwrap(), &truth).unwrap();
    check(
        perfect.kappa == 1.0 && balanced.kappa == 0.0,
        format!("100 pairs, max deviation {worst:.2e}; perfect kappa {}, [[1,1],[1,1]] kappa {}", perfect.kappa, balanced.kappa),
    )
}

// 8 --------------------------------------------------------------------------

fn desk_trainability() -> Outcome {
    let start = Instant::now();
    let spec = SceneSpec { train_per_class: 100, ..SceneSpec::new(32, 32, 20, 3) };
    let scene = synth_scene(&spec, 1).map_err(|e| e.to_string())?;
    let set = generate_set(&scene.cube, 5, TrispecOptions::default()).map_err(|e| e.to_string())?;
    let mut model = DcntModel::new(ModelConfig::desk(3), 1).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { epochs: 30, batch: 1, seed: 1, val_fraction: 0.0, ..TrainConfig::default() };
    let report = train(&set, &scene.train, &mut model, &cfg).map_err(|e| e.to_string())?;
    let out = run_inference_set(&model, &set.images, Some(&scene.train), None, 1).map_err(|e| e.to_string())?;
    let best_single = out.per_image.iter().map(|m| m.oa).fold(0.0, f64::max);
    let soft = out.soft_metrics.as_ref().unwrap().oa;
    let hard = out.hard_metrics.as_ref().unwrap().oa;
    let secs = start.elapsed().as_secs_f64();
    check(
        set.capacity() == 10 && report.losses.len() == 300 && soft >= 0.95 && soft.min(hard) >= best_single - 0.02 && secs < 600.0,
        format!(
            "M={}, {} iterations, soft-vote OA {soft:.4}, hard-vote OA {hard:.4}, best single {best_single:.4}, {secs:.0} s",
            set.capacity(),
            report.losses.len()
        ),
    )
}

// 9 --------------------------------------------------------------------------

fn loss_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let classes = rng.random_range(2..=9usize);
        let (h, w) = (rng.random_range(1..6), rng.random_range(2..6));
        let mut labels: Vec<u16> = (0..h * w).map(|_| if rng.random_bool(0.5) { 0 } else { rng.random_range(1..=classes as u16) }).collect();
        labels[0] = 1;
        labels[1] = 0;
        let level = rng.random_range(-3.0..3.0);
        let tape = Tape::new();
        let main = tape.leaf(Tensor::full(&[classes, h, w], level));
        let aux = tape.leaf(Tensor::full(&[classes, h, w], -level));
        let l = loss(main, aux, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((l.value().item() - 1.4 * (classes as f64).ln()).abs());
        tape.backward(l).map_err(|e| e.to_string())?;
        for g in [main.grad().unwrap(), aux.grad().unwrap()] {
            for (p, _) in labels.iter().enumerate().filter(|(_, &t)| t == 0) {
                if (0..classes).any(|c| g.data()[c * h * w + p] != 0.0) {
                    return Err(format!("nonzero gradient at unlabeled pixel {p}"));
                }
            }
        }
    }
    check(worst < 1e-6, format!("max |loss − 1.4·ln C| = {worst:.2e}; unlabeled gradients exactly zero"))
}

// 10 -------------------------------------------------------------------------

fn training_is_deterministic() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let run = |args: &[&str]| {
        let code = dcnt::cli::dispatch(std::iter::once("dcnt").chain(args.iter().copied()));
        if code == 0 {
            Ok(())
        } else {
            Err(format!("`dcnt {}` exited with {code}", args.join(" ")))
        }
    };
    let p = |name: &str| d.join(name).to_string_lossy().into_owned();
    run(&["--seed", "5", "synth", "--out", &p("scene"), "--height", "16", "--width", "16", "--bands", "12", "--per-class", "10"])?;
    run(&["generate", "--cube", &p("scene/cube.hsc"), "--groups", "4", "--out", &p("set")])?;
    fs::write(d.join("run.conf"), "train.epochs = 2\ntrain.val_fraction = 0.25\ndcm.Z = 4\ndcm.T = 2\n").unwrap();
    let mut outputs = Vec::new();
    for r in ["a", "b"] {
        fs::create_dir_all(d.join(r)).unwrap();
        run(&["--seed", "11", "train", "--set", &p("set"), "--labels", &p("scene/train.lbl"), "--config", &p("run.conf"), "--out", &p(&format!("{r}/model.ckpt"))])?;
        let read = |f: &str| fs::read(d.join(r).join(f)).unwrap();
        outputs.push([read("model.ckpt"), read("train_log.csv"), read("val_log.csv"), read("model.ckpt.conf")]);
    }
    let lines = outputs[0][1].iter().filter(|&&b| b == b'\n').count() - 1;
    check(
        outputs[0] == outputs[1] && lines > 0,
        format!("{lines} logged iterations; checkpoints, logs and configs byte-identical"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("capacity table", capacity_table),
        ("stretch oracle", stretch_matches_oracle),
        ("gradient suite", gradient_suite),
        ("clustering oracle", clustering_matches_oracle),
        ("structural identity", zeroed_dcm_identity),
        ("voting equivalence", voting_equivalence),
        ("metrics oracle", metrics_match_oracle),
        ("desk-scale trainability", desk_trainability),
        ("loss sanity", loss_sanity),
        ("determinism", training_is_deterministic),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}; {secs:.1} s)", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {:>2} {name}: FAIL ({detail}; {secs:.1} s)", i + 1);
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}

