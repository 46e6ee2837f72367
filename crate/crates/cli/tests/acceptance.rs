//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and exits
//! nonzero if any failed.

#[path = "../../core/tests/support/oracle.rs"]
mod oracle;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode, Output};
use std::time::Instant;

use tq3d::eval::{
    bound_mse, coordinate_samples, coordinate_variance, ks_statistic, lower_bound_mse,
    measure_dmse_with, BOUND_CONSTANT,
};
use tq3d::gsplat::{
    compress_cloud, decompress_cloud, parse_ply, prune_opacity, write_ply, CompressOptions,
    CompressedScene, GaussianCloud, RAW_RECORD_LEN,
};
use tq3d::quantizer::{group_entries, ungroup_entries};
use tq3d::rotation::GaussianStream;
use tq3d::tensors::{
    attention, attention_error_with, compress_tensor, decompress_tensor, default_scale,
    gaussian_matrix, kv_ratio, write_tensor, TensorFile,
};
use tq3d::{BetaCodebook, Matrix, Quantizer, Rotation};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: tq3d::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// Reference whole-vector distortions at d = 45 for b = 1..4.
const TARGETS_45: [f64; 4] = [0.363, 0.1175, 0.0345, 0.0095];

fn distortion_at_45() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let rotation = std::sync::Arc::new(lib(Rotation::haar(45, 0))?);
    for bits in 1..=4u8 {
        let q = lib(Quantizer::new(
            rotation.clone(),
            lib(BetaCodebook::solve(45, bits))?,
        ))?;
        let r = lib(measure_dmse_with(&q, 20_000, 0))?;
        let target = TARGETS_45[usize::from(bits - 1)];
        ensure((r.mean_mse / target - 1.0).abs() <= 0.10, || {
            format!(
                "b={bits}: mean {:.5} not within 10% of {target}",
                r.mean_mse
            )
        })?;
        let ceiling = bound_mse(bits) * (1.0 + 3.0 * r.std_err / r.mean_mse);
        ensure(r.mean_mse <= ceiling, || {
            format!("b={bits}: mean {:.5} above bound {ceiling:.5}", r.mean_mse)
        })?;
        parts.push(format!("b{bits}={:.5}", r.mean_mse));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{} in {secs:.1}s", parts.join(" ")))
}

fn lower_bound_sandwich() -> Outcome {
    let mut parts = Vec::new();
    for bits in 1..=4u8 {
        let q = lib(Quantizer::build(45, bits, 1))?;
        let r = lib(measure_dmse_with(&q, 2_000, 1))?;
        ensure(r.mean_mse >= 0.5 * lower_bound_mse(bits), || {
            format!("b={bits}: {:.6} below half of 4^-b", r.mean_mse)
        })?;
        let ratio = bound_mse(bits) / lower_bound_mse(bits);
        ensure((ratio / 2.72 - 1.0).abs() <= 0.01, || {
            format!("bound ratio {ratio}")
        })?;
        parts.push(format!(
            "b{bits}={:.2}x4^-b",
            r.mean_mse / lower_bound_mse(bits)
        ));
    }
    Ok(parts.join(" "))
}

fn coordinate_law() -> Outcome {
    let start = Instant::now();
    let critical = 1.63 / 5000f64.sqrt();
    let mut parts = Vec::new();
    for dim in [16usize, 45, 1024] {
        let mut samples = lib(coordinate_samples(dim, 5000, 3))?;
        let ks = lib(ks_statistic(dim, &mut samples))?;
        ensure(ks < critical, || {
            format!("d={dim}: KS {ks:.4} >= {critical:.4}")
        })?;
        // 100k samples put the 2% tolerance at about 4.5 standard errors.
        let var = lib(coordinate_variance(dim, 100_000, 3))?;
        let rel = var * dim as f64 - 1.0;
        ensure(rel.abs() <= 0.02, || {
            format!("d={dim}: variance off by {:.2}%", 100.0 * rel)
        })?;
        parts.push(format!("d{dim}: KS={ks:.4} var={:+.2}%", 100.0 * rel));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{} in {secs:.1}s", parts.join(", ")))
}

fn oracle_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for dim in [3usize, 45, 1024] {
        for bits in 1..=4u8 {
            let cb = lib(BetaCodebook::solve(dim, bits))?;
            let (reference, _) = oracle::sphere_codebook(dim, bits);
            for (a, b) in cb.centroids().iter().zip(&reference) {
                worst = worst.max((a - b).abs());
            }
            if dim == 3 {
                // uniform on [-1, 1]: centroids at cell midpoints
                let levels = 1usize << bits;
                for (i, c) in cb.centroids().iter().enumerate() {
                    let exact = -1.0 + (2 * i + 1) as f64 / levels as f64;
                    ensure((c - exact).abs() <= 1e-9, || {
                        format!("d=3 b={bits}: centroid {i} is {c}")
                    })?;
                }
                let exact = 1.0 / (levels * levels) as f64;
                ensure((cb.expected_distortion() - exact).abs() <= 1e-9, || {
                    format!("d=3 b={bits}: distortion {}", cb.expected_distortion())
                })?;
            }
        }
    }
    ensure(worst <= 1e-6, || {
        format!("max centroid difference {worst:.2e}")
    })?;
    Ok(format!("max centroid difference {worst:.1e}"))
}

fn cloud_from_stream(n: usize, sh_dim: usize, sh_sigma: f64, seed: u64) -> GaussianCloud {
    let mut g = GaussianStream::new(seed, 7);
    let mut cloud = GaussianCloud::with_capacity(n, sh_dim);
    for _ in 0..n {
        let mut take = |k: usize, sigma: f64, out: &mut Vec<f32>| {
            for _ in 0..k {
                out.push((g.next_gaussian() * sigma) as f32);
            }
        };
        take(3, 1.0, &mut cloud.positions);
        take(4, 1.0, &mut cloud.quaternions);
        take(3, 1.0, &mut cloud.scales);
        take(1, 2.0, &mut cloud.opacities);
        take(3, 1.0, &mut cloud.dc);
        take(sh_dim, sh_sigma, &mut cloud.sh_rest);
        cloud.count += 1;
    }
    cloud
}

fn sh_error_scaling() -> Outcome {
    let start = Instant::now();
    let cloud = cloud_from_stream(50_000, 45, (0.0055f64 / 45.0).sqrt(), 5);
    let gamma_sq = cloud.mean_sh_norm_sq();
    let scene = lib(compress_cloud(&cloud, 3, 0, &CompressOptions::default()))?;
    let back = lib(decompress_cloud(&scene))?;
    let mse = cloud
        .sh_rest
        .iter()
        .zip(&back.sh_rest)
        .map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2))
        .sum::<f64>()
        / cloud.count as f64;
    let secs = start.elapsed().as_secs_f64();
    ensure(mse <= 0.00024, || {
        format!("mean SH error {mse:.6} above 0.00024")
    })?;
    ensure((1.0 / 1.5..=1.5).contains(&(mse / 0.00018)), || {
        format!("mean SH error {mse:.6} not within 1.5x of 0.00018")
    })?;
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "mean gamma^2={gamma_sq:.5} SH mse={mse:.6} in {secs:.1}s"
    ))
}

fn storage_accounting() -> Outcome {
    for (n, sh_dim, bits) in [
        (1000usize, 45usize, 3u8),
        (333, 24, 2),
        (17, 9, 4),
        (5, 45, 8),
        (40, 0, 3),
    ] {
        let cloud = cloud_from_stream(n, sh_dim, 0.1, 9);
        let scene = lib(compress_cloud(&cloud, bits, 1, &CompressOptions::default()))?;
        let sh_bytes = 4 + (sh_dim * usize::from(bits)).div_ceil(8);
        let expected = n * (RAW_RECORD_LEN + sh_bytes);
        ensure(scene.payload_len() == expected, || {
            format!(
                "N={n} d={sh_dim} b={bits}: payload {} != {expected}",
                scene.payload_len()
            )
        })?;
        ensure(scene.to_bytes().len() == scene.total_len(), || {
            "container length mismatch".into()
        })?;
    }
    let table: [(u8, f64); 6] = [
        (1, 31.0),
        (2, 15.8),
        (3, 10.6),
        (4, 7.9),
        (5, 6.4),
        (8, 4.0),
    ];
    for (bits, want) in table {
        let got = kv_ratio(1024, bits);
        ensure((got * 10.0).round() / 10.0 == want, || {
            format!("b={bits}: kv ratio {got:.3} != {want}")
        })?;
    }
    Ok("payload law on 5 scenes, kv ratios 31.0/15.8/10.6/7.9/6.4/4.0".into())
}

fn raw_fields(c: &GaussianCloud) -> [&Vec<f32>; 5] {
    [&c.positions, &c.quaternions, &c.scales, &c.opacities, &c.dc]
}

fn bits_of(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn ply_round_trip() -> Outcome {
    let cloud = cloud_from_stream(2_001, 45, 0.05, 11);
    let ply = write_ply(&cloud);
    let parsed = lib(parse_ply(&ply))?;
    ensure(parsed == cloud, || "PLY parse does not invert write".into())?;
    for embed in [false, true] {
        let scene = lib(compress_cloud(
            &parsed,
            3,
            4,
            &CompressOptions {
                embed_rotation: embed,
            },
        ))?;
        let stored = lib(CompressedScene::from_bytes(&scene.to_bytes()))?;
        let out_ply = write_ply(&lib(decompress_cloud(&stored))?);
        let back = lib(parse_ply(&out_ply))?;
        ensure(
            back.count == cloud.count && back.sh_dim == cloud.sh_dim,
            || "count or SH width changed".into(),
        )?;
        for (a, b) in raw_fields(&cloud).iter().zip(raw_fields(&back)) {
            ensure(bits_of(a) == bits_of(b), || {
                "unquantized field not bit-exact".into()
            })?;
        }
    }

    let mut fixture = cloud_from_stream(5, 9, 0.1, 2);
    fixture.opacities = vec![-4.6, 0.0, 4.6, -2.0, 2.0];
    let expect = [
        (0.0, vec![-4.6, 0.0, 4.6, -2.0, 2.0]),
        (0.05, vec![0.0, 4.6, -2.0, 2.0]),
        (0.5, vec![0.0, 4.6, 2.0]),
        (0.9, vec![4.6]),
        (1.0, vec![]),
    ];
    let mut previous = usize::MAX;
    for (tau, kept) in expect {
        let pruned = lib(prune_opacity(&fixture, tau))?;
        ensure(pruned.opacities == kept, || {
            format!("tau={tau}: kept {:?}", pruned.opacities)
        })?;
        ensure(pruned.count <= previous, || {
            format!("tau={tau}: count grew")
        })?;
        previous = pruned.count;
    }
    let mut previous = usize::MAX;
    for step in 0..=20 {
        let n = lib(prune_opacity(&cloud, f64::from(step) / 20.0))?.count;
        ensure(n <= previous, || format!("prune count grew at step {step}"))?;
        previous = n;
    }
    Ok("2001 Gaussians bit-exact through TQ3D (seeded and embedded), prune fixtures exact".into())
}

fn grouping() -> Outcome {
    for (n, d_f) in [
        (1usize, 2usize),
        (1001, 2),
        (50, 3),
        (17, 4),
        (9, 8),
        (64, 16),
    ] {
        let table = gaussian_matrix(n, d_f, 3, n as u64);
        let (grouped, meta) = lib(group_entries(&table, 16))?;
        ensure(grouped.cols() >= 16, || {
            format!("effective width {}", grouped.cols())
        })?;
        let back = lib(ungroup_entries(&grouped, &meta, n))?;
        ensure(back == table, || {
            format!("N={n} d_f={d_f}: grouping not lossless")
        })?;
    }

    let table = gaussian_matrix(1001, 2, 4, 0);
    let (grouped, meta) = lib(group_entries(&table, 16))?;
    ensure(meta.effective_dim() == 16, || "expected d_eff = 16".into())?;
    let g = meta.group as f64;
    let ct = lib(compress_tensor(&grouped, 8, 2))?;
    let recon = lib(decompress_tensor(&ct))?;
    let (mut err, mut allowed) = (0.0, 0.0);
    for (x, y) in grouped.iter_rows().zip(recon.iter_rows()) {
        let norm_sq: f64 = x.iter().map(|v| f64::from(*v).powi(2)).sum();
        err += x
            .iter()
            .zip(y)
            .map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2))
            .sum::<f64>()
            / g;
        allowed += norm_sq * BOUND_CONSTANT * 4f64.powi(-8) / g;
    }
    let rows = grouped.rows() as f64;
    let (err, allowed) = (err / rows, allowed / rows);
    ensure(err <= allowed, || {
        format!("per-entry MSE {err:.3e} above {allowed:.3e}")
    })?;
    Ok(format!(
        "lossless on 6 shapes; b=8 per-entry MSE {err:.2e} <= {allowed:.2e}"
    ))
}

fn attention_monotone() -> Outcome {
    let (dim, n) = (1024, 64);
    let q = gaussian_matrix(n, dim, 0, 10);
    let k = gaussian_matrix(n, dim, 0, 11);
    let v = gaussian_matrix(n, dim, 0, 12);
    let scale = default_scale();
    let kr = std::sync::Arc::new(lib(Rotation::haar(dim, 0))?);
    let vr = std::sync::Arc::new(lib(Rotation::haar(dim, 1))?);
    let mut mses = Vec::new();
    for bits in 2..=8u8 {
        let cb = lib(BetaCodebook::solve(dim, bits))?;
        let kq = lib(Quantizer::new(kr.clone(), cb.clone()))?;
        let vq = lib(Quantizer::new(vr.clone(), cb))?;
        mses.push(lib(attention_error_with(&q, &k, &v, &kq, &vq, scale))?.output_mse);
    }
    for (i, pair) in mses.windows(2).enumerate() {
        let ratio = pair[0] / pair[1];
        ensure((2.0..=8.0).contains(&ratio), || {
            format!("b={}->{}: ratio {ratio:.2} outside [2, 8]", i + 2, i + 3)
        })?;
    }

    // Q = 0 makes the weights uniform, so the output is the mean value row.
    let zero = Matrix::zeros(4, dim);
    let out = lib(attention(&zero, &k, &v, scale))?;
    let mut worst: f64 = 0.0;
    for c in 0..dim {
        let mean = (0..n).map(|r| f64::from(v.row(r)[c])).sum::<f64>() / n as f64;
        for r in 0..zero.rows() {
            worst = worst.max((f64::from(out.row(r)[c]) - mean).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("Q=0 deviation {worst:.2e}"))?;
    let listed: Vec<String> = mses.iter().map(|m| format!("{m:.2e}")).collect();
    Ok(format!(
        "output mse b2..8 = {}; Q=0 deviation {worst:.1e}",
        listed.join(" ")
    ))
}

fn run_cli(dir: &Path, threads: &str, args: &[&str]) -> Result<Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tq3d"))
        .args(args)
        .current_dir(dir)
        .env("TQ_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "`tq3d {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })?;
    Ok(out)
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let write =
        |name: &str, bytes: &[u8]| std::fs::write(d.join(name), bytes).map_err(|e| e.to_string());
    write(
        "scene.ply",
        &write_ply(&cloud_from_stream(300, 45, 0.05, 13)),
    )?;
    write(
        "kv.tqtn",
        &write_tensor(&TensorFile::from_matrix(&gaussian_matrix(40, 64, 2, 0))),
    )?;
    write(
        "table.tqtn",
        &write_tensor(&TensorFile::from_matrix(&gaussian_matrix(37, 3, 2, 1))),
    )?;

    let commands: &[(&[&str], &[&str])] = &[
        (
            &["codebook", "--dim", "45", "--bits", "3", "--out", "cb.OUT"],
            &["cb.OUT"],
        ),
        (
            &[
                "compress-gs",
                "scene.ply",
                "--bits",
                "3",
                "--seed",
                "7",
                "--prune-opacity",
                "0.3",
                "--out",
                "s.OUT",
            ],
            &["s.OUT"],
        ),
        (
            &[
                "compress-gs",
                "scene.ply",
                "--bits",
                "2",
                "--embed-rotation",
                "--out",
                "e.OUT",
            ],
            &["e.OUT"],
        ),
        (
            &["decompress-gs", "s.OUT", "--out", "back.OUT"],
            &["back.OUT"],
        ),
        (
            &[
                "prune-gs",
                "scene.ply",
                "--prune-opacity",
                "0.5",
                "--sh-degree",
                "1",
                "--out",
                "p.OUT",
            ],
            &["p.OUT"],
        ),
        (
            &[
                "compress-tensor",
                "kv.tqtn",
                "--bits",
                "4",
                "--seed",
                "3",
                "--out",
                "kv.OUT",
            ],
            &["kv.OUT"],
        ),
        (
            &[
                "compress-tensor",
                "table.tqtn",
                "--bits",
                "8",
                "--out",
                "t.OUT",
            ],
            &["t.OUT"],
        ),
        (
            &["decompress-tensor", "kv.OUT", "--out", "kvb.OUT"],
            &["kvb.OUT"],
        ),
        (
            &[
                "decompress-tensor",
                "t.OUT",
                "--entry-dim",
                "3",
                "--entries",
                "37",
                "--out",
                "tb.OUT",
            ],
            &["tb.OUT"],
        ),
        (
            &[
                "attn-eval",
                "--dim",
                "64",
                "--queries",
                "8",
                "--keys",
                "16",
                "--bits",
                "2,4",
                "--out",
                "a.OUT",
            ],
            &["a.OUT"],
        ),
        (
            &[
                "eval", "--dim", "32", "--bits", "1,3", "--trials", "500", "--seed", "5",
                "--format", "csv", "--out", "ev.OUT",
            ],
            &["ev.OUT"],
        ),
        (&["ratio", "scene.ply", "--bits", "3"], &[]),
        (
            &[
                "ratio", "--count", "232743", "--sh-dim", "45", "--bits", "3",
            ],
            &[],
        ),
    ];
    for (args, outputs) in commands {
        let mut runs = Vec::new();
        for threads in ["1", "4"] {
            let out = run_cli(d, threads, args)?;
            let mut files = Vec::new();
            for f in *outputs {
                files.push(std::fs::read(d.join(f)).map_err(|e| format!("{f}: {e}"))?);
            }
            runs.push((out.stdout, files));
        }
        ensure(runs[0] == runs[1], || {
            format!("`tq3d {}` output differs between runs", args.join(" "))
        })?;
    }
    Ok(format!(
        "{} invocations byte-identical across runs and thread counts",
        commands.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        (
            "distortion at d=45 matches targets and stays under the upper bound",
            distortion_at_45,
        ),
        (
            "distortion stays above half the lower bound",
            lower_bound_sandwich,
        ),
        (
            "rotated coordinates follow the sphere marginal",
            coordinate_law,
        ),
        (
            "codebook solver agrees with the brute-force oracle",
            oracle_equivalence,
        ),
        (
            "SH error scales with the mean squared norm",
            sh_error_scaling,
        ),
        ("storage accounting and KV ratios", storage_accounting),
        ("PLY round trip and pruning", ply_round_trip),
        ("entry grouping and grouped quantization error", grouping),
        ("attention error falls with bit width", attention_monotone),
        ("CLI outputs are deterministic", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
