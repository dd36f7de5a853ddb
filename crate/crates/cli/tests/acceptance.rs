//! Acceptance suite. Runs every criterion, prints one PASS or FAIL line for
//! each and exits non-zero when any fails.

use std::collections::HashMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thairom_core::curation::{materialize_training_file, upsample_weight, CurationConfig, Materialize};
use thairom_core::data::{parse_labeled, EvalItem, Label, NamePair, WeightedPair};
use thairom_core::decoding::{beam_decode, greedy_decode, BeamConfig, Hypothesis, StepModel};
use thairom_core::fixtures;
use thairom_core::metrics::{any_token_accuracy, cer, char_bleu, corpus_cer, first_token_accuracy, levenshtein, levenshtein_slices};
use thairom_core::model::optim::{lr_at, optimizer_step, AdamState, AdamW};
use thairom_core::model::tokenizer::{ByteTokenizer, VOCAB_SIZE};
use thairom_core::model::train::{accumulate, Example};
use thairom_core::model::{Checkpoint, TrainConfig, Transformer, TransformerConfig};
use thairom_core::phonetics::{weighted_feature_edit_distance, FeatureTable};
use thairom_core::selector::{fit_forest, threshold_sweep, ForestConfig, DEFAULT_THRESHOLDS};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("metric oracles", metric_oracles),
        ("bleu sanity", bleu_sanity),
        ("phonetic distance properties", phonetic_properties),
        ("selector", selector),
        ("upsampling", upsampling),
        ("model numerics", model_numerics),
        ("optimizer and schedule", optimizer_and_schedule),
        ("toy end to end", toy_end_to_end),
        ("beam oracle", beam_oracle),
        ("reproducibility", reproducibility),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}; {secs:.1}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why}; {secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    check!(took < limit, "took {:.1}s, limit {}s", took.as_secs_f64(), limit.as_secs());
    Ok(())
}

const ALPHABET: &[char] = &['a', 'b', 'c', 'k', 'o', 'A', 'ก', 'า', 'ม', 'น', '่', 'é'];

fn random_string(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

/// Edit distance by plain recursion over every alignment.
fn lev_oracle(a: &[char], b: &[char]) -> usize {
    match (a.split_last(), b.split_last()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            if x == y {
                return lev_oracle(ra, rb);
            }
            1 + lev_oracle(ra, b).min(lev_oracle(a, rb)).min(lev_oracle(ra, rb))
        }
    }
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let a = random_string(&mut rng, 0, 8);
        let b = random_string(&mut rng, 0, 8);
        let want = lev_oracle(&a.chars().collect::<Vec<_>>(), &b.chars().collect::<Vec<_>>());
        check!(levenshtein(&a, &b) == want, "levenshtein({a:?}, {b:?}) != {want}");
    }

    // (thai, references, ranked predictions). Hand tally per item:
    // top-1 hit, any-of-3 hit, edits to the closest reference, its length.
    let fixture: [(&str, &[&str], &[&str]); 10] = [
        ("สมชาย", &["somchai"], &["somchai", "somchay"]), // hit hit 0/7
        ("สมศรี", &["somsri", "somsi"], &["somsi"]), // hit hit 0/5
        ("วันชาย", &["wanchai"], &["wanchay", "wanchai"]), // miss hit 1/7
        ("อนันต์", &["anan", "anant"], &["Anan"]), // hit hit 0/4
        ("มานี", &["mani"], &["manee", "mani", "maanee"]), // miss hit 2/4
        ("ประเสริฐ", &["prasert"], &["prasoet", "prased", "prasert"]), // miss hit 2/7
        ("ชัย", &["chai"], &["chay"]), // miss miss 1/4
        ("สุดา", &["suda"], &[]), // miss miss 4/4
        ("ทอง", &["thong", "tong"], &["tong", "thong"]), // hit hit 0/4
        ("กมล", &["kamon"], &["kamol", "kamon"]), // miss hit 1/5
    ];
    let items: Vec<EvalItem> = fixture.iter().map(|(t, r, _)| EvalItem::new(t, r).unwrap()).collect();
    let top1: Vec<&str> = fixture.iter().map(|(_, _, p)| p.first().copied().unwrap_or("")).collect();
    let top3: Vec<Vec<&str>> = fixture.iter().map(|(_, _, p)| p.to_vec()).collect();
    let refs: Vec<&[&str]> = fixture.iter().map(|(_, r, _)| *r).collect();
    let ft = first_token_accuracy(&top1, &items).map_err(|e| e.to_string())?;
    let at = any_token_accuracy(&top3, &items).map_err(|e| e.to_string())?;
    let c = corpus_cer(&top1, &refs).map_err(|e| e.to_string())?;
    check!(ft == 0.4, "first-token accuracy {ft}, want 4/10");
    check!(at == 0.8, "any-token accuracy {at}, want 8/10");
    check!((c - 11.0 / 51.0).abs() < 1e-12, "corpus CER {c}, want 11/51");
    let one = cer("wanchay", "wanchai").map_err(|e| e.to_string())?;
    check!((one - 1.0 / 7.0).abs() < 1e-12, "cer(wanchay, wanchai) = {one}");
    within(start, Duration::from_secs(5))?;
    Ok("1000 oracle pairs, 10-item fixture".into())
}

fn bleu_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let x = random_string(&mut rng, 1, 20);
        let b = char_bleu(&x, &[&x]).map_err(|e| e.to_string())?;
        check!(b == 100.0, "char_bleu({x:?}, [itself]) = {b}");
    }
    // abcd vs abce: unigrams 3/4, bigrams 2/3, trigrams 1/2, the 4-gram
    // misses and smooths to 1/(2*1); equal lengths, so no brevity penalty.
    let want = 100.0 * (0.75f64 * (2.0 / 3.0) * 0.5 * 0.5).powf(0.25);
    let got = char_bleu("abcd", &["abce"]).map_err(|e| e.to_string())?;
    check!((got - want).abs() < 1e-6, "char_bleu(abcd, [abce]) = {got}, want {want}");
    Ok(format!("identity on 100 strings, worked example {got:.6}"))
}

fn phonetic_properties() -> Outcome {
    let table = FeatureTable::builtin();
    let segs: Vec<String> = table.segments().map(str::to_string).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seq = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let n = rng.random_range(0..=6);
        (0..n).map(|_| segs.choose(rng).unwrap().clone()).collect()
    };
    let d = |a: &[String], b: &[String]| weighted_feature_edit_distance(a, b, &table).unwrap();
    for _ in 0..500 {
        let (a, b, c) = (seq(&mut rng), seq(&mut rng), seq(&mut rng));
        let (ab, ba, bc, ac) = (d(&a, &b), d(&b, &a), d(&b, &c), d(&a, &c));
        check!((ab - ba).abs() < 1e-9, "asymmetric on {a:?} / {b:?}: {ab} vs {ba}");
        check!(ac <= ab + bc + 1e-9, "triangle fails on {a:?} {b:?} {c:?}");
        for (x, y, dxy) in [(&a, &b, ab), (&b, &c, bc), (&a, &c, ac)] {
            let plain = levenshtein_slices(x, y) as f64;
            check!(dxy <= plain + 1e-9, "{dxy} exceeds plain edit distance {plain} on {x:?} / {y:?}");
        }
    }
    let one = |s: &str| vec![s.to_string()];
    let (pb, pa) = (d(&one("p"), &one("b")), d(&one("p"), &one("a")));
    check!(pb < pa, "p/b {pb} is not below p/a {pa}");
    Ok(format!("500 triples, p/b {pb:.3} < p/a {pa:.3}"))
}

fn selector() -> Outcome {
    let rows = parse_labeled(fixtures::SYNTHETIC_LABELED_TSV).map_err(|e| e.to_string())?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(4));
    let (train_idx, test_idx) = order.split_at(150);
    let pick = |idx: &[usize]| -> (Vec<[f64; 9]>, Vec<bool>) {
        idx.iter().map(|&i| (rows[i].record.features(), rows[i].label == Label::Positive)).unzip()
    };
    let (xtr, ytr) = pick(train_idx);
    let (xte, yte) = pick(test_idx);
    let config = ForestConfig::default();
    let w = vec![1.0; xtr.len()];
    let a = fit_forest(&xtr, &ytr, &w, &config).map_err(|e| e.to_string())?;
    let b = fit_forest(&xtr, &ytr, &w, &config).map_err(|e| e.to_string())?;
    check!(a.to_json() == b.to_json(), "two fits with one seed differ");
    let sum: f64 = a.feature_importances().iter().sum();
    check!((sum - 1.0).abs() <= 1e-9, "importances sum to {sum}");

    let rows = threshold_sweep(&a, &xte, &yte, &DEFAULT_THRESHOLDS).map_err(|e| e.to_string())?;
    let acc = rows[0].accuracy;
    check!(rows[0].threshold == 0.5, "first threshold is {}", rows[0].threshold);
    check!(acc >= 0.95, "held-out accuracy {acc} at 0.5");
    for pair in rows.windows(2) {
        check!(
            pair[1].recall <= pair[0].recall,
            "recall rises from {} at {} to {} at {}",
            pair[0].recall,
            pair[0].threshold,
            pair[1].recall,
            pair[1].threshold
        );
    }
    let recalls: Vec<String> = rows.iter().map(|r| format!("{:.2}", r.recall)).collect();
    Ok(format!("held-out accuracy {acc:.3}, recall {}", recalls.join(" ")))
}

fn upsampling() -> Outcome {
    let config = CurationConfig::default();
    let w = |p: f64| upsample_weight(p, &config).map_err(|e| e.to_string());
    check!(w(0.95)? == 1, "0.95 -> {}", w(0.95)?);
    check!(w(1.0)? == 20, "1.0 -> {}", w(1.0)?);
    check!(w(0.975)? == 11, "0.975 -> {}", w(0.975)?);
    let mut seen = std::collections::BTreeSet::new();
    for i in 0..=500 {
        seen.insert(w(0.95 + i as f64 * 1e-4)?);
    }
    check!(seen == (1..=20).collect(), "grid weights {seen:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let thai = ['ก', 'ม', 'น', 'า', 'ส'];
    let latin = ['a', 'k', 'm', 'n', 's'];
    let mut pairs = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let t: String = (0..rng.random_range(1..6)).map(|_| *thai.choose(&mut rng).unwrap()).collect();
        let l: String = (0..rng.random_range(1..6)).map(|_| *latin.choose(&mut rng).unwrap()).collect();
        let p = rng.random_range(0.95..=1.0);
        pairs.push(WeightedPair {
            pair: NamePair::new(&t, &l).map_err(|e| e.to_string())?,
            probability: p,
            weight: w(p)?,
        });
    }
    let total: usize = pairs.iter().map(|p| p.weight as usize).sum();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("train.tsv");
    let written = materialize_training_file(&pairs, Materialize::Replicate, &path).map_err(|e| e.to_string())?;
    let lines = fs::read_to_string(&path).map_err(|e| e.to_string())?.lines().count() - 1;
    check!(written == total && lines == total, "wrote {written} rows, file has {lines}, weights sum to {total}");
    Ok(format!("grid covers 1..20, {total} replicated rows"))
}

fn model_numerics() -> Outcome {
    let start = Instant::now();
    let mut model = Transformer::new(&TransformerConfig::tiny(), 11).map_err(|e| e.to_string())?;
    let a = Example::new("กา", "ka", 1.0);
    let b = Example::new("มานี", "mani", 2.0);
    let batch = [&a, &b];
    let loss = |m: &Transformer| {
        let mut g = m.zero_grads();
        accumulate(m, &batch, None, &mut g).unwrap()
    };
    let mut grads = model.zero_grads();
    accumulate(&model, &batch, None, &mut grads).map_err(|e| e.to_string())?;
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for t in 0..model.params().len() {
        let mut num = vec![0.0; grads[t].len()];
        for (k, slot) in num.iter_mut().enumerate() {
            let orig = model.params()[t].data[k];
            model.params_mut()[t].data[k] = orig + eps;
            let up = loss(&model);
            model.params_mut()[t].data[k] = orig - eps;
            let down = loss(&model);
            model.params_mut()[t].data[k] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&num.iter().zip(&grads[t]).map(|(x, y)| x - y).collect::<Vec<_>>());
        let rel = diff / norm(&num).max(norm(&grads[t])).max(1e-8);
        check!(rel <= 1e-3, "{}: relative error {rel:.2e}", model.params()[t].name);
        worst = worst.max(rel);
    }

    let model = Transformer::new(&TransformerConfig::tiny(), 3).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ids = |rng: &mut ChaCha8Rng, n: usize| -> Vec<u32> { (0..n).map(|_| rng.random_range(3..VOCAB_SIZE as u32)).collect() };
    for round in 0..50 {
        let rows = rng.random_range(1..4);
        let len = rng.random_range(2..9);
        let src: Vec<Vec<u32>> = (0..rows).map(|_| {
            let n = rng.random_range(1..8);
            ids(&mut rng, n)
        }).collect();
        let dec: Vec<Vec<u32>> = (0..rows).map(|_| ids(&mut rng, len)).collect();
        let cut = rng.random_range(0..len);
        let mut edited = dec.clone();
        for row in &mut edited {
            for id in &mut row[cut..] {
                *id = rng.random_range(0..VOCAB_SIZE as u32);
            }
        }
        let x = model.forward(&src, &dec).map_err(|e| e.to_string())?;
        let y = model.forward(&src, &edited).map_err(|e| e.to_string())?;
        for r in 0..rows {
            for t in 0..cut {
                let same = x.at(r, t).iter().zip(y.at(r, t)).all(|(p, q)| p.to_bits() == q.to_bits());
                check!(same, "batch {round}: position {t} changed after editing from {cut}");
            }
        }
    }

    let tok = ByteTokenizer;
    for _ in 0..10_000 {
        let n = rng.random_range(0..12);
        let s: String = (0..n)
            .map(|_| match rng.random_range(0..3) {
                0 => rng.random_range(' '..='~'),
                1 => rng.random_range('\u{0E01}'..='\u{0E5B}'),
                _ => rng.random::<char>(),
            })
            .collect();
        let back = tok.decode(&tok.encode(&s)).map_err(|e| e.to_string())?;
        check!(back == s, "round trip of {s:?} gave {back:?}");
    }
    within(start, Duration::from_secs(120))?;
    Ok(format!("worst gradient error {worst:.1e}, 50 causal batches, 10000 round trips"))
}

fn optimizer_and_schedule() -> Outcome {
    let opt = AdamW {
        lr: 0.1,
        weight_decay: 0.01,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    // Zero gradient: only the decoupled decay moves the parameter.
    let mut p = vec![2.0, -0.5];
    let mut state = AdamState::new([2]);
    optimizer_step(&mut [p.as_mut_slice()], &[vec![0.0, 0.0]], &[true], &mut state, &opt).map_err(|e| e.to_string())?;
    check!((p[0] - 1.998).abs() <= 1e-12 && (p[1] + 0.4995).abs() <= 1e-12, "decay step gave {p:?}");

    let opt = AdamW {
        lr: 0.01,
        weight_decay: 0.1,
        ..opt
    };
    let grads = [0.5, -0.3];
    let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        m = opt.beta1 * m + (1.0 - opt.beta1) * g;
        v = opt.beta2 * v + (1.0 - opt.beta2) * g * g;
        let mh = m / (1.0 - opt.beta1.powi(t));
        let vh = v / (1.0 - opt.beta2.powi(t));
        theta -= opt.lr * (mh / (vh.sqrt() + opt.eps) + opt.weight_decay * theta);
    }
    let mut p = vec![1.0];
    let mut state = AdamState::new([1]);
    for g in grads {
        optimizer_step(&mut [p.as_mut_slice()], &[vec![g]], &[true], &mut state, &opt).map_err(|e| e.to_string())?;
    }
    check!((p[0] - theta).abs() <= 1e-10, "two steps gave {}, hand value {theta}", p[0]);

    let lr = lr_at(5000, &TrainConfig::default(), 100_000).map_err(|e| e.to_string())?;
    check!(lr == 0.001, "lr at step 5000 is {lr}");
    Ok(format!("two-step value {theta:.12}, peak lr {lr}"))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_thairom")
}

fn run(dir: &Path, args: &[&str]) -> Result<Output, String> {
    let out = Command::new(bin()).current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("thairom {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(out)
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

const TOY_CONFIG: &str = "preset = toy
epochs = 1000
learning_rate = 0.003
weight_decay = 0.0
warmup_steps = 50
grad_accum_steps = 1
batch_size = 32
eval_steps = 500
save_steps = 2000
max_steps = 2000
eval_max_length = 32
";

fn toy_end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let pairs = fixtures::toy_pairs();
    let mut eval = String::from("thai\tref1\n");
    for p in &pairs {
        eval.push_str(&format!("{}\t{}\n", p.pair.thai(), p.pair.latin()));
    }
    fs::write(d.join("pairs.tsv"), fixtures::TOY_PAIRS_TSV).map_err(|e| e.to_string())?;
    fs::write(d.join("eval.tsv"), eval).map_err(|e| e.to_string())?;
    fs::write(d.join("toy.cfg"), TOY_CONFIG).map_err(|e| e.to_string())?;
    run(d, &["train", "--config", "toy.cfg", "--train", "pairs.tsv", "--valid", "pairs.tsv", "--out", "ckpt"])?;
    run(d, &["evaluate", "--ckpt", "ckpt/best", "--eval", "eval.tsv", "--out", "report.json"])?;
    let report = read_json(&d.join("report.json"))?;
    let ft = report["first_token_accuracy"].as_f64().ok_or("report lacks first_token_accuracy")?;
    let c = report["cer"].as_f64().ok_or("report lacks cer")?;
    check!(ft >= 0.95, "first-token accuracy {ft}");
    check!(c <= 0.05, "CER {c}");

    let model = Checkpoint::load(&d.join("ckpt/best")).and_then(|c| c.to_model()).map_err(|e| e.to_string())?;
    let width_one = BeamConfig {
        beam_width: 1,
        k: 1,
        max_length: 64,
        length_penalty: 1.0,
    };
    for p in &pairs {
        let src = ByteTokenizer.encode(p.pair.thai());
        let beam = beam_decode(&model, &src, &width_one).map_err(|e| e.to_string())?;
        let greedy = greedy_decode(&model, &src, 64).map_err(|e| e.to_string())?;
        check!(beam[0].ids == greedy, "width-1 beam differs from greedy on {}", p.pair.thai());
    }
    let top = run(d, &["translit", "--ckpt", "ckpt/best", "--text", "อนันต์"])?;
    let stdout = String::from_utf8_lossy(&top.stdout);
    let first = stdout.lines().next().unwrap_or("");
    check!(first.split('\t').nth(1) == Some("anan"), "translit top line {first:?}");
    within(start, Duration::from_secs(15 * 60))?;
    Ok(format!("first-token accuracy {ft:.2}, CER {c:.4}"))
}

/// A tiny network whose output is cut down to the first five token ids.
struct FiveTokens(Transformer);

impl StepModel for FiveTokens {
    type State = <Transformer as StepModel>::State;

    fn vocab_size(&self) -> usize {
        5
    }

    fn eos_id(&self) -> u32 {
        1
    }

    fn start(&self, src: &[u32]) -> thairom_core::decoding::Result<Self::State> {
        self.0.start(src)
    }

    fn next_log_probs(&self, state: &Self::State, prefix: &[u32]) -> thairom_core::decoding::Result<Vec<f64>> {
        let full = self.0.next_log_probs(state, prefix)?;
        let lse = full[..5].iter().map(|x| x.exp()).sum::<f64>().ln();
        Ok(full[..5].iter().map(|x| x - lse).collect())
    }
}

fn beam_oracle() -> Outcome {
    let model = FiveTokens(Transformer::new(&TransformerConfig::tiny(), 17).map_err(|e| e.to_string())?);
    let config = BeamConfig {
        beam_width: 25,
        k: 25,
        max_length: 3,
        length_penalty: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for round in 0..20 {
        let n = rng.random_range(1..6);
        let src: Vec<u32> = (0..n).map(|_| rng.random_range(3..VOCAB_SIZE as u32)).collect();
        let got = beam_decode(&model, &src, &config).map_err(|e| e.to_string())?;

        // Every sequence that ends at its first eos, plus the eos-free ones
        // cut at the length limit.
        let state = model.start(&src).map_err(|e| e.to_string())?;
        let mut done: Vec<(Vec<u32>, f64)> = Vec::new();
        let mut open: Vec<(Vec<u32>, f64)> = Vec::new();
        let mut memo: HashMap<Vec<u32>, Vec<f64>> = HashMap::new();
        let mut frontier = vec![(Vec::new(), 0.0)];
        while let Some((prefix, sum)) = frontier.pop() {
            let lp = memo
                .entry(prefix.clone())
                .or_insert_with(|| model.next_log_probs(&state, &prefix).unwrap())
                .clone();
            for tok in 0..5u32 {
                let mut ids = prefix.clone();
                ids.push(tok);
                let s = sum + lp[tok as usize];
                if tok == 1 {
                    done.push((ids, s));
                } else if ids.len() == 3 {
                    open.push((ids, s));
                } else {
                    frontier.push((ids, s));
                }
            }
        }
        let score = |ids: &[u32], s: f64| s / ids.len() as f64;
        let rank = |v: &mut Vec<(Vec<u32>, f64)>| {
            v.sort_by(|a, b| score(&b.0, b.1).total_cmp(&score(&a.0, a.1)).then_with(|| a.0.cmp(&b.0)))
        };
        rank(&mut done);
        rank(&mut open);
        let fill = 25usize.saturating_sub(done.len());
        let mut want: Vec<(Vec<u32>, f64)> = done.into_iter().take(25).chain(open.into_iter().take(fill)).collect();
        rank(&mut want);

        check!(got.len() == want.len(), "round {round}: {} results, oracle has {}", got.len(), want.len());
        for (h, (ids, s)) in got.iter().zip(&want) {
            let Hypothesis { ids: got_ids, score: got_score, .. } = h;
            check!(got_ids == ids, "round {round}: beam gave {got_ids:?}, oracle {ids:?}");
            let want_score = score(ids, *s);
            check!((got_score - want_score).abs() < 1e-12, "round {round}: score {got_score} vs {want_score}");
        }
    }
    Ok("20 sources, width 25, 25 results each".into())
}

const TINY_CONFIG: &str = "preset = tiny
epochs = 5
learning_rate = 0.003
warmup_steps = 2
grad_accum_steps = 1
batch_size = 8
eval_steps = 3
save_steps = 3
max_steps = 6
eval_max_length = 12
";

/// Every subcommand in order, run inside `dir`. Returns the stdout of each.
fn pipeline(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    fs::write(dir.join("pairs.tsv"), fixtures::TOY_PAIRS_TSV).map_err(|e| e.to_string())?;
    fs::write(dir.join("labeled.tsv"), fixtures::SYNTHETIC_LABELED_TSV).map_err(|e| e.to_string())?;
    fs::write(dir.join("eval.tsv"), fixtures::TOY_EVAL_TSV).map_err(|e| e.to_string())?;
    fs::write(dir.join("tiny.cfg"), TINY_CONFIG).map_err(|e| e.to_string())?;
    let g = ["--threads", "1", "--seed", "7"];
    let steps: [&[&str]; 9] = [
        &["rtgs", "สมชาย", "วันชาย", "อนันต์"],
        &["features", "--pairs", "pairs.tsv", "--out", "features.tsv"],
        &["select-train", "--data", "labeled.tsv", "--out", "forest.json", "--trees", "60", "--cv", "3"],
        &["select-eval", "--forest", "forest.json", "--data", "labeled.tsv", "--out", "sweep.json"],
        &["select-score", "--forest", "forest.json", "--data", "labeled.tsv", "--out", "scored.tsv"],
        &["curate", "--candidates", "scored.tsv", "--eval", "eval.tsv", "--out-dir", "curated", "--valid-frac", "0.1", "--test-frac", "0.1"],
        &["train", "--config", "tiny.cfg", "--train", "curated/train.tsv", "--valid", "curated/valid.tsv", "--out", "ckpt"],
        &["translit", "--ckpt", "ckpt/best", "--text", "สมชาย"],
        &["evaluate", "--ckpt", "ckpt/best", "--eval", "eval.tsv", "--out", "report.json", "--predictions", "predictions.tsv"],
    ];
    steps
        .iter()
        .map(|args| {
            let all: Vec<&str> = g.iter().chain(args.iter()).copied().collect();
            run(dir, &all).map(|o| o.stdout)
        })
        .collect()
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn reproducibility() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let out_a = pipeline(a.path())?;
    let out_b = pipeline(b.path())?;
    for (i, (x, y)) in out_a.iter().zip(&out_b).enumerate() {
        check!(x == y, "stdout of step {} differs", i + 1);
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    check!(fa == fb, "runs wrote different file sets");
    for f in &fa {
        let x = fs::read(a.path().join(f)).map_err(|e| e.to_string())?;
        let y = fs::read(b.path().join(f)).map_err(|e| e.to_string())?;
        check!(x == y, "{} differs between runs", f.display());
    }
    Ok(format!("9 subcommands, {} files identical", fa.len()))
}
