//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `AIDIM_ACCEPTANCE` selects criteria (e.g. `1,2,5`); all run by default.
//! `AIDIM_ACCEPTANCE_OUT` keeps experiment artifacts in that directory
//! instead of a temporary one. Failures are reported but only change the
//! exit status when `AIDIM_ACCEPTANCE_STRICT` is set.

use std::path::{Path, PathBuf};
use std::time::Instant;

use aidim::certificates::{kl, kl_inv, mtl_fast_bound, pinsker_bound, BoundInputs};
use aidim::compression::arith::table_bits;
use aidim::compression::codes::{write_index_stream, GLOBAL_R_GRID, LOCAL_R_GRID};
use aidim::compression::{
    arithmetic_decode, arithmetic_encode, decode_bundle, encode_bundle, kmeans_1d, kraft_check, BitString, BitWriter,
    Codebook, CodebookKind, DecodedBundle, EncodedBundle, FrequencyTable, HyperGrids,
};
use aidim::linalg::network::{forward_backward, Activation, NetworkSpec};
use aidim::linalg::rng::{gaussian_vec, RngStream};
use aidim::model::SubspaceModel;
use aidim::projector::KroneckerProjector;
use aidim_cli::commands::cmd_certify_raw;
use aidim_cli::experiments::{run_end_to_end, run_hypothesis, run_trend, EndToEndSetup, HypothesisSetup, TrendSetup};
use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 1. certificates from published inputs

/// name, n, m, single (error, bits), multi-task (error, l(E), l_E), expected single / slow / fast.
const PUBLISHED: [(&str, u64, u64, f64, f64, f64, f64, f64, f64, f64, f64); 8] = [
    ("MNIST SP", 30, 2000, 0.2337166667, 855.4, 0.1013333333, 2323.0, 508.0, 0.6117491312, 0.230214984, 0.196062041),
    ("MNIST PL", 30, 2000, 0.1938833333, 854.3, 0.06601666667, 14887.0, 4796.0, 0.5757100215, 0.403684887, 0.349680301),
    ("Folktables", 60, 900, 0.2796666667, 212.6, 0.2717407407, 1586.0, 686.0, 0.5661945176, 0.3936706623, 0.3877731184),
    ("Products", 60, 2000, 0.1598, 216.4, 0.139025, 1192.0, 1128.0, 0.3318849222, 0.2216718483, 0.2025765654),
    ("CIFAR10 CNN", 100, 453, 0.3044591611, 542.5, 0.3054304636, 2358.0, 4144.0, 0.8740668621, 0.5293339401, 0.5270862451),
    ("CIFAR10 ViT", 30, 1248, 0.1813034188, 861.2, 0.1057959402, 3109.0, 1747.0, 0.6595277537, 0.3188806644, 0.2802076705),
    ("CIFAR100 CNN", 100, 450, 0.6393333333, 542.0, 0.6266888889, 4209.0, 3341.0, 0.9935, 0.8686, 0.8296961353),
    ("CIFAR100 ViT", 30, 1250, 0.31424, 1842.9, 0.2742666667, 11512.0, 4957.0, 0.9054053342, 0.6650633922, 0.6575062514),
];

fn criterion_1(dir: &Path) -> Check {
    let entries: Vec<_> = PUBLISHED
        .iter()
        .map(|&(name, n, m, es, bs, e, lm, lt, ..)| {
            json!({
                "name": name, "n": n, "m": m, "emp_risk": e, "bits_meta": lm, "bits_multitask": lt,
                "single": { "emp_risk": es, "bits": bs }
            })
        })
        .collect();
    let inputs = dir.join("published.json");
    std::fs::write(&inputs, serde_json::to_string(&entries).unwrap()).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for delta in [0.01, 0.02, 0.05, 0.1] {
        let out = dir.join(format!("delta-{delta}"));
        std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
        let results = cmd_certify_raw(&inputs, Some(delta), &out).map_err(|e| e.to_string())?;
        for (r, p) in results.iter().zip(&PUBLISHED) {
            let single = r.single.as_ref().ok_or("missing single-task result")?.kl;
            for (got, want) in [
                (single, p.8),
                (r.certificate.slow_rate.value, p.9),
                (r.certificate.fast_rate.value, p.10),
            ] {
                worst = worst.max((got - want).abs());
                checked += 1;
            }
        }
    }
    ensure(worst <= 0.01, format!("{checked} values over δ ∈ {{0.01, 0.02, 0.05, 0.1}}, max |error| {worst:.4}"))
}

// ---------------------------------------------------------------------------
// 2. bit accounting

fn criterion_2() -> Check {
    let table = table_bits(10, 300);
    let codebook = Codebook::new((0..10).map(|i| f16::from_f64(i as f64)).collect(), CodebookKind::Local).map_err(|e| e.to_string())?;
    let cb = codebook.payload_bits();
    ensure(table == 90 && cb == 160, format!("count table {table} bits, codebook {cb} bits"))
}

// ---------------------------------------------------------------------------
// 3. joint versus separate coding

fn stream_bits(indices: &[usize], r: usize) -> usize {
    let mut w = BitWriter::new();
    write_index_stream(&mut w, indices, r).unwrap();
    w.len()
}

fn criterion_3() -> Check {
    let (n, k, r) = (60usize, 5usize, 10usize);
    let weights: Vec<f64> = (0..r).map(|i| 0.55f64.powi(i as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(431);
    let mut draw = || {
        let mut u = rng.gen::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        r - 1
    };
    let indices: Vec<usize> = (0..n * k).map(|_| draw()).collect();
    let codebook_bits = 16 * r;
    let joint = codebook_bits + stream_bits(&indices, r);
    let separate = codebook_bits + indices.chunks(k).map(|c| stream_bits(c, r)).sum::<usize>();
    let ratio = joint as f64 / separate as f64;
    ensure(
        ratio < 0.6,
        format!("joint {joint} bits vs separate {separate} bits ({:.2} vs {:.2} per task), ratio {ratio:.3}", joint as f64 / n as f64, separate as f64 / n as f64),
    )
}

// ---------------------------------------------------------------------------
// 4. codec round trip and Kraft

fn random_bundle(rng: &mut ChaCha8Rng, seed: u64) -> Result<EncodedBundle, String> {
    let grids = HyperGrids {
        l: vec![2, 4, 8, 16],
        k: vec![1, 2, 3, 4],
        lr: vec![0.1, 0.01],
    };
    let hidden = rng.gen_range(2..12);
    let spec = NetworkSpec::mlp(rng.gen_range(1..6), &[hidden], rng.gen_range(2..5), Activation::Relu);
    let n = rng.gen_range(1..8);
    let k = grids.k[rng.gen_range(0..grids.k.len())];
    let l = grids.l[rng.gen_range(0..grids.l.len())];
    let s = RngStream::new(seed);
    let mut m = SubspaceModel::<f32>::shared(spec, s.derive("theta0"), n, k, l, s.derive("proj"), s.derive("init"))
        .map_err(|e| e.to_string())?;
    let values: Vec<f32> = gaussian_vec(&s.derive("values"), m.trainable_len());
    m.set_trainables(&values).map_err(|e| e.to_string())?;
    let (v, a) = values.split_at(k * l);
    let f = |x: &[f32]| x.iter().map(|&y| f64::from(y)).collect::<Vec<_>>();
    let rg = GLOBAL_R_GRID[rng.gen_range(0..GLOBAL_R_GRID.len())];
    let rl = LOCAL_R_GRID[rng.gen_range(0..LOCAL_R_GRID.len())];
    let g = kmeans_1d(&f(v), rg, 3, &s.derive("g"), CodebookKind::Global).and_then(|c| c.padded_to(rg));
    let lo = kmeans_1d(&f(a), rl, 3, &s.derive("l"), CodebookKind::Local).and_then(|c| c.padded_to(rl));
    let (g, lo) = (g.map_err(|e| e.to_string())?, lo.map_err(|e| e.to_string())?);
    encode_bundle(&m, &g, &lo, &grids, rng.gen_range(0..2)).map_err(|e| e.to_string())
}

fn bundle_round_trips(b: &EncodedBundle) -> Result<(), String> {
    let bytes = b.to_bytes().map_err(|e| e.to_string())?;
    let back = EncodedBundle::from_bytes(&bytes).map_err(|e| e.to_string())?;
    if &back != b {
        return Err("parsed bundle differs".into());
    }
    let dec: DecodedBundle<f32> = decode_bundle(&back).map_err(|e| e.to_string())?;
    let again = encode_bundle(&dec.model, &dec.global, &dec.local, &b.header.grids, dec.lr_index)
        .and_then(|e| e.to_bytes())
        .map_err(|e| e.to_string())?;
    if again != bytes {
        return Err("re-encoding the decoded model changed the bytes".into());
    }
    let twice: DecodedBundle<f32> = decode_bundle(&EncodedBundle::from_bytes(&again).unwrap()).unwrap();
    if twice.model.trainables() != dec.model.trainables() {
        return Err("decoded coefficients differ between passes".into());
    }
    Ok(())
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..100 {
        let b = random_bundle(&mut rng, 1000 + i)?;
        bundle_round_trips(&b).map_err(|e| format!("bundle {i}: {e}"))?;
    }

    let mut words = 0;
    for n in 1..=3u32 {
        let codes: Vec<BitString> = (0..1usize << n)
            .map(|mask| {
                let idx: Vec<usize> = (0..n).map(|i| mask >> i & 1).collect();
                let mut w = BitWriter::new();
                write_index_stream(&mut w, &idx, 2).unwrap();
                w.finish()
            })
            .collect();
        let rep = kraft_check(&codes);
        if !rep.passed() {
            return Err(format!("Kraft failed for N={n}: {rep:?}"));
        }
        words += codes.len();
    }

    let mut worst_slack = f64::NEG_INFINITY;
    for t in 0..100 {
        let r = rng.gen_range(2..=40);
        let len = rng.gen_range(1..=3000);
        let skew: f64 = rng.gen_range(0.2..1.0);
        let weights: Vec<f64> = (0..r).map(|i| skew.powi(i as i32) + 1e-3).collect();
        let total: f64 = weights.iter().sum();
        let idx: Vec<usize> = (0..len)
            .map(|_| {
                let mut u = rng.gen::<f64>() * total;
                weights.iter().position(|w| {
                    let hit = u < *w;
                    u -= w;
                    hit
                }).unwrap_or(r - 1)
            })
            .collect();
        let table = FrequencyTable::from_indices(&idx, r).map_err(|e| e.to_string())?;
        let mut w = BitWriter::new();
        let bits = arithmetic_encode(&idx, &table, &mut w).map_err(|e| e.to_string())?;
        let code = w.finish();
        let (back, used) = arithmetic_decode(&mut code.reader(), &table).map_err(|e| e.to_string())?;
        if back != idx || used != bits {
            return Err(format!("table {t}: arithmetic round trip failed"));
        }
        let slack = bits as f64 - table.ideal_bits();
        worst_slack = worst_slack.max(slack);
        if slack > 16.0 {
            return Err(format!("table {t}: {bits} bits vs entropy {:.1}", table.ideal_bits()));
        }
    }
    Ok(format!(
        "100 bundles bit-exact; {words} codewords prefix-free with Σ2^-len ≤ 1; stream ≤ entropy + {worst_slack:.2} bits"
    ))
}

// ---------------------------------------------------------------------------
// 5. numerical core

fn fd_check(m: &mut SubspaceModel<f64>, task: Option<usize>, x: &[f64], y: &[usize]) -> f64 {
    let loss = |m: &SubspaceModel<f64>| {
        let theta = m.realize(task).unwrap();
        forward_backward(m.spec(), &theta, x, y, None).loss_sum / y.len() as f64
    };
    let theta = m.realize(task).unwrap();
    let mut g = vec![0.0; theta.len()];
    forward_backward(m.spec(), &theta, x, y, Some(&mut g));
    let analytic = m.coefficient_grad(task, &g).unwrap().flatten();
    let base = m.trainables();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] += h;
        m.set_trainables(&p).unwrap();
        let up = loss(m);
        p[i] -= 2.0 * h;
        m.set_trainables(&p).unwrap();
        let down = loss(m);
        let fd = (up - down) / (2.0 * h);
        let scale = fd.abs().max(analytic[i].abs());
        if scale > 1e-6 {
            worst = worst.max((fd - analytic[i]).abs() / scale);
        }
    }
    m.set_trainables(&base).unwrap();
    worst
}

fn dense_oracle(p: &KroneckerProjector<f64>) -> Vec<f64> {
    let ((_, d1c), (d2r, d2c)) = p.factor_shapes();
    let (q1, q2) = p.factors();
    let (big_d, d) = (p.ambient_dim(), p.coeff_dim());
    let mut dense = vec![0.0; big_d * d];
    for row in 0..big_d {
        let (i1, i2) = (row / d2r, row % d2r);
        for col in 0..d {
            let (j1, j2) = (col / d2c, col % d2c);
            dense[row * d + col] = q1[i1 * d1c + j1] * q2[i2 * d2c + j2] * p.scale();
        }
    }
    dense
}

fn criterion_5() -> Check {
    let spec = NetworkSpec::mlp(12, &[40, 24], 3, Activation::Elu);
    let params = spec.param_count();
    let s = RngStream::new(55);
    let x: Vec<f64> = gaussian_vec(&s.derive("x"), 16 * 12);
    let y: Vec<usize> = (0..16).map(|i| i % 3).collect();

    let mut single = SubspaceModel::<f64>::single(spec.clone(), s.derive("t0"), 12, s.derive("p")).unwrap();
    single.set_trainables(&gaussian_vec(&s.derive("w"), 12)).unwrap();
    let mut shared = SubspaceModel::<f64>::shared(spec.clone(), s.derive("t0"), 3, 3, 6, s.derive("p"), s.derive("v")).unwrap();
    let t: Vec<f64> = gaussian_vec(&s.derive("a"), shared.trainable_len());
    shared.set_trainables(&t).unwrap();
    let basis = shared.basis().unwrap().clone();
    let mut transfer = SubspaceModel::<f64>::transfer(spec.clone(), s.derive("t0"), basis, 4, s.derive("p2")).unwrap();
    let t: Vec<f64> = gaussian_vec(&s.derive("b"), transfer.trainable_len());
    transfer.set_trainables(&t).unwrap();
    let grad_err = fd_check(&mut single, None, &x, &y)
        .max(fd_check(&mut shared, Some(1), &x, &y))
        .max(fd_check(&mut transfer, None, &x, &y));
    if grad_err >= 1e-4 {
        return Err(format!("gradient relative error {grad_err:.2e} (D={params})"));
    }

    let mut kron_err = 0.0f64;
    for big_d in 1..=64usize {
        for d in 1..=64usize {
            let p = KroneckerProjector::<f64>::new(big_d, d, RngStream::new((big_d * 100 + d) as u64)).unwrap();
            let dense = dense_oracle(&p);
            let w: Vec<f64> = gaussian_vec(&RngStream::new(d as u64), d);
            let g: Vec<f64> = gaussian_vec(&RngStream::new(big_d as u64 + 7), big_d);
            let pw = p.apply_f64(&w);
            let ptg = p.adjoint_f64(&g);
            for i in 0..big_d {
                let want: f64 = (0..d).map(|j| dense[i * d + j] * w[j]).sum();
                kron_err = kron_err.max((pw[i] - want).abs());
            }
            for j in 0..d {
                let want: f64 = (0..big_d).map(|i| dense[i * d + j] * g[i]).sum();
                kron_err = kron_err.max((ptg[j] - want).abs());
            }
        }
    }
    if kron_err > 1e-10 {
        return Err(format!("Kronecker apply/adjoint error {kron_err:.2e}"));
    }

    let mut kl_err = 0.0f64;
    for i in 0..1000 {
        let q = (i % 50) as f64 / 49.0 * 0.9;
        let b = 10f64.powf(-6.0 + 6.0 * (i / 50) as f64 / 19.0);
        let p = kl_inv(q, b);
        if p < 1.0 - 1e-12 {
            kl_err = kl_err.max((kl(q, p) - b).abs());
        }
        kl_err = kl_err.max((kl_inv(q, 0.0) - q).abs());
    }
    if kl_err > 1e-7 {
        return Err(format!("kl_inv error {kl_err:.2e}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let inputs = BoundInputs {
            n: rng.gen_range(1..200),
            m: rng.gen_range(1..5000),
            delta: rng.gen_range(0.001..1.0),
            emp_risk: rng.gen_range(0.0..1.0),
            bits_meta: rng.gen_range(0.0..50_000.0),
            bits_multitask: rng.gen_range(0.0..50_000.0),
        };
        let (fast, pinsker) = (mtl_fast_bound(&inputs), pinsker_bound(&inputs));
        if fast > pinsker + 1e-12 {
            return Err(format!("fast {fast} > Pinsker {pinsker} at {inputs:?}"));
        }
    }
    Ok(format!(
        "gradient rel err {grad_err:.1e} (D={params}); Kronecker err {kron_err:.1e}; kl_inv err {kl_err:.1e} (q ≤ 0.9, b ≤ 1); fast ≤ Pinsker on 1000 inputs"
    ))
}

// ---------------------------------------------------------------------------
// 6–8. experiments

fn criterion_6(dir: &Path) -> Check {
    let r = run_hypothesis(&HypothesisSetup::default(), dir).map_err(|e| e.to_string())?;
    let show = |a: &aidim_cli::experiments::HypothesisArm| {
        let dim = |s: &aidim_cli::commands::SearchReport| {
            s.result.best_amortized.map_or("not reached".to_string(), |a| format!("{:.2}", *a.numer() as f64 / *a.denom() as f64))
        };
        format!("rank {}: ID {} AID {} ratio {}", a.rank, dim(&a.id), dim(&a.aid), a.ratio.map_or("-".into(), |x| format!("{x:.3}")))
    };
    let related = r.related.ratio.is_some_and(|x| x <= 0.5);
    let unrelated = r.unrelated.ratio.is_some_and(|x| x >= 0.9);
    ensure(related && unrelated, format!("{}; {}", show(&r.related), show(&r.unrelated)))
}

fn criterion_7(dir: &Path) -> Check {
    let r = run_trend(&TrendSetup::default(), dir).map_err(|e| e.to_string())?;
    let points: Vec<String> = r
        .setup
        .n_sweep
        .iter()
        .zip(&r.aid)
        .map(|(n, a)| format!("n={n}: {}", a.map_or("not reached".into(), |a| format!("{a:.2}"))))
        .collect();
    ensure(r.nonincreasing, format!("AID {}", points.join(", ")))
}

fn criterion_8(dir: &Path) -> Check {
    let r = run_end_to_end(&EndToEndSetup::default(), dir).map_err(|e| e.to_string())?;
    let fast = r.certificate.certificate.fast_rate.value;
    let single = r.certificate.single.as_ref().map_or(f64::INFINITY, |s| s.kl);
    let (tr, sc) = (r.transfer.transfer.bound, r.transfer.scratch.bound);
    ensure(
        fast < 1.0 && fast < single && tr < sc,
        format!(
            "fast rate {fast:.4} (ℓ̂ {:.4}, {:.1} bits/task) vs single task {single:.4}; transfer {tr:.4} vs scratch {sc:.4}",
            r.encode.emp_risk, r.encode.bits_per_task
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let selected: Option<Vec<u32>> = std::env::var("AIDIM_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let keep = std::env::var_os("AIDIM_ACCEPTANCE_OUT").map(PathBuf::from);
    let temp = tempfile::tempdir().expect("temporary directory");
    let root = keep.unwrap_or_else(|| temp.path().to_path_buf());

    let criteria: [(u32, &str, &dyn Fn(&Path) -> Check); 8] = [
        (1, "certificate reproduction", &criterion_1),
        (2, "bit accounting", &|_| criterion_2()),
        (3, "joint vs separate coding", &|_| criterion_3()),
        (4, "codec round trip and Kraft", &|_| criterion_4()),
        (5, "numerical core", &|_| criterion_5()),
        (6, "AID vs ID on teacher tasks", &criterion_6),
        (7, "AID trend in n", &criterion_7),
        (8, "end-to-end certificates", &criterion_8),
    ];
    let (mut passed, mut failed) = (0, 0);
    for (id, name, run) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            println!("SKIP {id} {name}");
            continue;
        }
        let dir = root.join(format!("criterion-{id}"));
        std::fs::create_dir_all(&dir).expect("artifact directory");
        let start = Instant::now();
        let outcome = run(&dir);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => {
                passed += 1;
                println!("PASS {id} {name} [{secs:.1}s]: {detail}");
            }
            Err(detail) => {
                failed += 1;
                println!("FAIL {id} {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    println!("acceptance: {passed} passed, {failed} failed");
    if failed > 0 && std::env::var_os("AIDIM_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
