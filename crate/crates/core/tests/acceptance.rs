//! End-to-end acceptance checks, one line of output per criterion.
//!
//! Run everything with `cargo test -p irp-core --test acceptance`, or pick
//! criteria by number: `cargo test -p irp-core --test acceptance -- 2 4`.
//! Datasets are cached under the target directory after the first run.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use irp_core::action::{ClothAction, ClothActionBox, DeltaAction, RopeAction};
use irp_core::baselines::{DeltaRegConfig, DeltaRegModel, SysIdModel};
use irp_core::dataset::{generate, sha256_hex, Dataset, GenConfig, Split};
use irp_core::eval::{
    episodes_csv, run_cloth_eval, run_embodiment, run_matrix, run_online_adaptation, EvalConfig, Method, MethodKit,
    ResultsTable, CLOTH_GOAL_RANGE,
};
use irp_core::irp::{run_episode, sample_deltas, IrpConfig};
use irp_core::params::{RopeParams, WorldVariant};
use irp_core::predictor::{KnnConfig, KnnPredictor, MlpNet, Predictor};
use irp_core::raster::{mean_keypoint_distance, min_distance};
use irp_core::sim::rope::RopeSim;
use irp_core::sim::RopePlant;
use irp_core::{Goal, RngStream, Task};

use common::{mean, variance};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn knn_kit(ds: &Arc<Dataset>) -> MethodKit {
    let mut kit = MethodKit::new(ds.clone());
    let knn = KnnPredictor::build(ds.clone(), KnnConfig::default()).unwrap();
    kit.pred = Some(Arc::new(knn) as Arc<dyn Predictor>);
    kit
}

fn rope_kit() -> &'static MethodKit {
    static KIT: OnceLock<MethodKit> = OnceLock::new();
    KIT.get_or_init(|| knn_kit(&common::rope6()))
}

fn cm(x: f64) -> String {
    format!("{:.2} cm", 100.0 * x)
}

/// Rows for `methods` on `n_interp` interpolation and `n_extrap`
/// extrapolation cells.
fn two_split_matrix(kit: &MethodKit, methods: &[Method], cfg: &EvalConfig, n_interp: usize, n_extrap: usize) -> ResultsTable {
    let a = run_matrix(kit, methods, &[Split::TestInterp], &EvalConfig { n_cells: n_interp, ..cfg.clone() }).unwrap();
    let b = run_matrix(kit, methods, &[Split::TestExtrap], &EvalConfig { n_cells: n_extrap, ..cfg.clone() }).unwrap();
    ResultsTable {
        rows: a.rows.into_iter().chain(b.rows).collect(),
        ..a
    }
}

fn c1_oracle_convergence() -> Outcome {
    let ds = common::rope6();
    let kit = MethodKit::new(ds.clone());
    let reach = 2.0 * ds.grid_spec.cell_size();
    let cfg = EvalConfig {
        n_goals: 2,
        d_stop: reach,
        ..EvalConfig::simulation(1)
    };
    let t = two_split_matrix(&kit, &[Method::IrpGt], &cfg, 2, 3);
    let best: Vec<f64> = t
        .rows
        .iter()
        .map(|r| r.distances.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let hits = best.iter().filter(|&&d| d <= reach).count();
    outcome(
        hits >= 9 && best.len() == 10,
        format!("{hits}/{} pairs within {} (worst best-distance {})", best.len(), cm(reach), cm(best.iter().copied().fold(0.0, f64::max))),
    )
}

/// The simulation matrix shared by the improvement and ablation checks.
fn sim_matrix() -> &'static ResultsTable {
    static T: OnceLock<ResultsTable> = OnceLock::new();
    T.get_or_init(|| {
        run_matrix(
            rope_kit(),
            &[Method::Irp, Method::ConstSigma],
            &[Split::TestInterp, Split::TestExtrap],
            &EvalConfig::simulation(0),
        )
        .unwrap()
    })
}

fn c2_relative_improvement() -> Outcome {
    let t = sim_matrix();
    let last = t.budget - 1;
    let red = |split: &str| 1.0 - t.mean_at("irp", Some(split), last) / t.mean_at("irp", Some(split), 0);
    let (ri, re) = (red("test_interp"), red("test_extrap"));
    let n = |split: &str| t.select("irp", Some(split)).count();
    outcome(
        ri >= 0.8 && re >= 0.6,
        format!(
            "reduction interp {:.1}% (n={}, {} -> {}), extrap {:.1}% (n={}, {} -> {})",
            100.0 * ri,
            n("test_interp"),
            cm(t.mean_at("irp", Some("test_interp"), 0)),
            cm(t.mean_at("irp", Some("test_interp"), last)),
            100.0 * re,
            n("test_extrap"),
            cm(t.mean_at("irp", Some("test_extrap"), 0)),
            cm(t.mean_at("irp", Some("test_extrap"), last)),
        ),
    )
}

fn c3_domain_shift_ordering() -> Outcome {
    let kit = rope_kit();
    let cfg = EvalConfig {
        n_goals: 5,
        ..EvalConfig::deployment(0)
    };
    let methods = [Method::Irp, Method::OptSim, Method::Avg, Method::IterLinear];
    let t = two_split_matrix(kit, &methods, &cfg, 3, 2);
    let last = cfg.max_step - 1;
    // per-rope means: (method, cell) -> distances
    let mut per: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in &t.rows {
        let step = if r.method == "iter_linear" { 8 } else { last };
        per.entry((r.method.clone(), r.cell)).or_default().push(r.at(step));
    }
    let cells: Vec<usize> = t.select("irp", None).map(|r| r.cell).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let m = |method: &str, c: usize| mean(&per[&(method.to_string(), c)]);
    let wins = |other: &str| cells.iter().filter(|&&c| m("irp", c) < m(other, c)).count();
    let (w_opt, w_avg, w_lin) = (wins("optsim"), wins("avg"), wins("iter_linear"));
    let overall = |method: &str| mean(&cells.iter().map(|&c| m(method, c)).collect::<Vec<_>>());
    let means_ok = overall("irp") < overall("optsim") && overall("irp") < overall("avg") && overall("irp") < overall("iter_linear");
    outcome(
        means_ok && w_opt >= 4 && w_avg >= 4 && w_lin >= 4 && cells.len() == 5,
        format!(
            "IRP {} vs OptSim {} ({w_opt}/5), AVG {} ({w_avg}/5), iterLinear@9 {} ({w_lin}/5)",
            cm(overall("irp")),
            cm(overall("optsim")),
            cm(overall("avg")),
            cm(overall("iter_linear"))
        ),
    )
}

fn c4_ablation_ordering() -> Outcome {
    let t = sim_matrix();
    let last = t.budget - 1;
    let finals = |m: &str| t.select(m, None).map(|r| r.at(last)).collect::<Vec<f64>>();
    let (a, c) = (finals("irp"), finals("const_sigma"));
    outcome(
        mean(&a) <= mean(&c) && variance(&a) <= variance(&c),
        format!(
            "adaptive mean {} var {:.3e} m² vs const mean {} var {:.3e} m²",
            cm(mean(&a)),
            variance(&a),
            cm(mean(&c)),
            variance(&c)
        ),
    )
}

fn c5_online_adaptation() -> Outcome {
    let swap = 5;
    let cfg = EvalConfig {
        max_step: swap + 7,
        ..EvalConfig::simulation(0)
    };
    let t = run_online_adaptation(rope_kit(), &cfg, Some(swap), 5).unwrap();
    let m = |i: usize| t.mean_at("irp", None, i);
    let spike = m(swap);
    let recovered = (swap + 1..=swap + 6).map(m).fold(f64::INFINITY, f64::min);
    outcome(
        spike > m(swap - 1) && recovered < 0.5 * spike,
        format!("step {} {} -> step {} {} -> best of next 6 {}", swap, cm(m(swap - 1)), swap + 1, cm(spike), cm(recovered)),
    )
}

fn c6_embodiment() -> Outcome {
    let cfg = EvalConfig {
        n_goals: 10,
        ..EvalConfig::simulation(0)
    };
    let links = WorldVariant::EMBODIMENT_LINKS;
    let t = run_embodiment(rope_kit(), &cfg, &links).unwrap();
    let last = cfg.max_step - 1;
    let rows = |l: f64| t.rows.iter().filter(move |r| r.variant == format!("link_{l:.1}"));
    let at = |l: f64, i: usize| mean(&rows(l).map(|r| r.at(i)).collect::<Vec<_>>());
    let first: Vec<f64> = links.iter().map(|&l| at(l, 0)).collect();
    let improve: Vec<f64> = links.iter().map(|&l| 1.0 - at(l, last) / at(l, 0)).collect();
    let finals: Vec<Vec<Vec<f64>>> = links.iter().map(|&l| rows(l).map(|r| r.final_action.clone()).collect()).collect();
    let gap = |i: usize, j: usize| {
        mean(
            &finals[i]
                .iter()
                .zip(&finals[j])
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                .collect::<Vec<_>>(),
        )
    };
    let gaps = [gap(0, 1), gap(0, 2), gap(1, 2)];
    outcome(
        first[0] > first[1] && first[2] > first[1] && improve.iter().all(|&x| x >= 0.6) && gaps.iter().all(|&g| g > 0.05),
        format!(
            "step-1 {} / {} / {}; improvement {:.0}% / {:.0}% / {:.0}%; action gaps {:.3} {:.3} {:.3}",
            cm(first[0]),
            cm(first[1]),
            cm(first[2]),
            100.0 * improve[0],
            100.0 * improve[1],
            100.0 * improve[2],
            gaps[0],
            gaps[1],
            gaps[2]
        ),
    )
}

fn c7_cloth_ordering() -> Outcome {
    let ds = common::cloth6();
    let mut kit = knn_kit(&ds);
    kit.deltareg = Some(Arc::new(DeltaRegModel::fit(&ds, DeltaRegConfig::default()).unwrap()));
    let cfg = EvalConfig {
        n_cells: 5,
        n_goals: 11,
        ..EvalConfig::simulation(0)
    };
    let t = run_cloth_eval(&kit, &Method::CLOTH, &cfg, CLOTH_GOAL_RANGE).unwrap();
    let last = cfg.max_step - 1;
    let f = |m: &str| t.mean_at(m, None, last);
    let (irp, dr, he) = (f("irp"), f("deltareg"), f("iter_heuristic"));
    let zero = t.rows.iter().flat_map(|r| &r.distances).any(|&d| d == 0.0);
    outcome(
        irp < dr && irp < he && !zero && t.errors().is_empty(),
        format!(
            "final IRP {} (step 1 {}), DeltaReg {}, iterHeuristic {}, any zero: {zero}",
            cm(irp),
            cm(t.mean_at("irp", None, 0)),
            cm(dr),
            cm(he)
        ),
    )
}

fn c8_numerical_invariants() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    // network gradient against central differences
    let net = MlpNet::new(16, 6, 9, 5);
    let mut rng = RngStream::new(8, "gradcheck");
    let x: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
    let y: Vec<f64> = (0..9).map(|_| if rng.uniform() < 0.5 { 1.0 } else { 0.0 }).collect();
    let mut grad = vec![0.0; net.params.len()];
    net.loss_and_grad(&x, &y, &mut grad);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let i = rng.index(net.params.len());
        let eps = 1e-4;
        let (mut plus, mut minus) = (net.clone(), net.clone());
        plus.params[i] += eps;
        minus.params[i] -= eps;
        let fd = (plus.loss(&x, &y) - minus.loss(&x, &y)) / (2.0 * eps);
        if (fd - grad[i]).abs() > 1e-10 {
            worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()));
        }
    }
    ok &= worst < 1e-3;
    notes.push(format!("grad rel err {worst:.1e}"));

    // link constraints during a fast whip; energy once the arm stops
    let mut params = RopeParams::new(1.0, 0.04);
    params.joint_damping = 0.0;
    let a = RopeAction::new(3.14, -30.0, -290.0).unwrap();
    let mut sim = RopeSim::new(&params, &a, &WorldVariant::training(), 0).unwrap();
    let mut strain: f64 = 0.0;
    let mut e0 = None;
    let mut drift: f64 = 0.0;
    let scale = params.mass() * 9.81 * params.total_length();
    while sim.time() < 4.0 {
        sim.step().unwrap();
        strain = strain.max(sim.max_link_strain());
        if sim.time() >= sim.arm_motion_end() {
            let e = sim.energy();
            let base = *e0.get_or_insert(e);
            drift = drift.max((e - base) / scale);
        }
    }
    ok &= strain < 1e-3 && drift <= 0.01;
    notes.push(format!("max strain {:.3}%", 100.0 * strain));
    notes.push(format!("energy rise {:.3}%", 100.0 * drift));

    // action normalization round trip
    let mut rt: f64 = 0.0;
    for i in 0..=20 {
        let u = i as f64 / 20.0;
        let v = [u, (u * 7.0).fract(), (u * 13.0).fract()];
        let back = RopeAction::denormalize(&v).unwrap().normalize().unwrap();
        rt = rt.max(v.iter().zip(&back).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max));
        let w = [u, 1.0 - u, (u * 3.0).fract(), (u * 5.0).fract()];
        let bx = ClothActionBox::default();
        let back = ClothAction::denormalize(&w, &bx).unwrap().normalize(&bx).unwrap();
        rt = rt.max(w.iter().zip(&back).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max));
    }
    ok &= rt <= 1e-12;
    notes.push(format!("round trip {rt:.1e}"));

    // sampler standard deviation at d = 0.2 m
    let cfg = IrpConfig {
        n_samples: 1000,
        ..IrpConfig::default()
    };
    let mut stream = RngStream::new(3, "moments");
    let draws: Vec<f64> = (0..34)
        .flat_map(|_| sample_deltas(0.2, 3, &cfg, &mut stream))
        .flat_map(|DeltaAction(v)| v)
        .collect();
    let sd = variance(&draws).sqrt();
    ok &= (sd / 0.1 - 1.0).abs() < 0.02;
    notes.push(format!("sampler sd {sd:.4} over {} draws", draws.len()));

    outcome(ok, notes.join(", "))
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = GenConfig::desk(Task::Rope, 21).with_param_dims(4, 4).unwrap();
    cfg.action_dims = vec![3, 3, 3];
    cfg.repeats = 2;
    let files: Vec<String> = (0..2)
        .map(|i| {
            let mut ds = generate(&cfg).unwrap();
            ds.split().unwrap();
            let p = dir.path().join(format!("d{i}.irpd"));
            ds.save(&p).unwrap();
            irp_core::dataset::file_hash(&p).unwrap()
        })
        .collect();
    let gen_same = files[0] == files[1];

    let ds = common::small_rope();
    let knn = KnnPredictor::build(ds.clone(), KnnConfig::default()).unwrap();
    let p = ds.cells(Split::TestInterp)[0];
    let g = ds.sample_goals(p, 1, 4).unwrap().remove(0);
    let init = ds.avg_action(&g).unwrap().action;
    let replay = || {
        let plant = RopePlant::new(ds.rope_params(p).unwrap(), WorldVariant::deployment(), 17);
        let cfg = IrpConfig {
            max_step: 6,
            ..IrpConfig::default()
        };
        sha256_hex(run_episode(&plant, &g, &knn, &init, &cfg, &ds.grid_spec, 17).unwrap().to_jsonl().as_bytes())
    };
    let ep_same = replay() == replay();

    let mut kit = knn_kit(&ds);
    kit.sysid = Some(Arc::new(SysIdModel::fit(&ds).unwrap()));
    kit.deltareg = Some(Arc::new(DeltaRegModel::fit(&ds, DeltaRegConfig::default()).unwrap()));
    let mcfg = EvalConfig {
        n_cells: 1,
        n_goals: 3,
        max_step: 4,
        ..EvalConfig::simulation(9)
    };
    let matrix = || {
        let t = run_matrix(&kit, &Method::SIM_MATRIX, &[Split::TestInterp, Split::TestExtrap], &mcfg).unwrap();
        sha256_hex(episodes_csv(&t).as_bytes())
    };
    let (m1, m2) = (matrix(), matrix());
    let matrix_same = m1 == m2;
    outcome(
        gen_same && ep_same && matrix_same,
        format!(
            "dataset {} ({}), episode replay {}, matrix csv {} ({})",
            if gen_same { "identical" } else { "DIFFERS" },
            &files[0][..12],
            if ep_same { "identical" } else { "DIFFERS" },
            if matrix_same { "identical" } else { "DIFFERS" },
            &m1[..12]
        ),
    )
}

fn c10_oracle_equivalence() -> Outcome {
    let ds = common::rope6();
    let mut rng = RngStream::new(10, "pairs");
    let test: Vec<usize> = ds.cells(Split::TestInterp).into_iter().chain(ds.cells(Split::TestExtrap)).collect();
    let mut mismatches = 0;
    for i in 0..20 {
        let p = test[rng.index(test.len())];
        let g = ds.sample_goals(p, 1, 100 + i).unwrap().remove(0);
        let opt = ds.brute_force_optimal(p, &g).unwrap();
        // independent re-scan with the exact polyline metric
        let mut best = (f64::INFINITY, 0usize);
        for a in 0..ds.n_actions() {
            let d = mean(
                &(0..ds.repeats)
                    .map(|r| min_distance(&ds.trajectory(p, a, r), &g).unwrap())
                    .collect::<Vec<_>>(),
            );
            if d < best.0 {
                best = (d, a);
            }
        }
        if (best.0 - opt.distance).abs() > 1e-12 || best.1 != opt.action_idx {
            mismatches += 1;
        }
    }

    // reachability by construction, on a set with repeat noise
    let mut noisy = GenConfig::desk(Task::Rope, 5).with_param_dims(4, 4).unwrap();
    noisy.action_dims = vec![4, 4, 4];
    let noisy = common::dataset("noisy_rope", &noisy);
    let mut over = 0;
    let mut worst: f64 = 0.0;
    for p in 0..noisy.n_params() {
        let radius = noisy.repeat_noise_radius(p);
        for g in noisy.sample_goals(p, 10, 3).unwrap() {
            let d = noisy.brute_force_optimal(p, &g).unwrap().distance;
            worst = worst.max(d / radius.max(1e-12));
            if d > radius {
                over += 1;
            }
        }
    }

    // cloth: the same re-scan with the keypoint metric
    let cloth = common::cloth6();
    let p = cloth.cells(Split::TestExtrap)[0];
    let g = cloth.sample_goals(p, 1, 1).unwrap().remove(0);
    let opt = cloth.brute_force_optimal(p, &g).unwrap();
    let rescan = (0..cloth.n_actions())
        .map(|a| {
            let kp = cloth.trajectory(p, a, 0).final_keypoints.unwrap();
            mean_keypoint_distance(&kp, &g).unwrap()
        })
        .fold(f64::INFINITY, f64::min);
    let cloth_ok = (rescan - opt.distance).abs() < 1e-12 && matches!(g, Goal::Cloth(_));

    outcome(
        mismatches == 0 && over == 0 && cloth_ok,
        format!(
            "{mismatches}/20 rope re-scan mismatches, {over}/{} goals beyond the noise radius (worst ratio {worst:.2}), cloth re-scan {}",
            noisy.n_params() * 10,
            if cloth_ok { "agrees" } else { "DIFFERS" }
        ),
    )
}

fn main() {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "oracle convergence", c1_oracle_convergence),
        (2, "relative improvement", c2_relative_improvement),
        (3, "ordering under domain shift", c3_domain_shift_ordering),
        (4, "sampling ablation", c4_ablation_ordering),
        (5, "online adaptation", c5_online_adaptation),
        (6, "embodiment", c6_embodiment),
        (7, "cloth ordering", c7_cloth_ordering),
        (8, "numerical invariants", c8_numerical_invariants),
        (9, "determinism", c9_determinism),
        (10, "oracle equivalence", c10_oracle_equivalence),
    ];
    // failures are reported through the outcome line
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = Vec::new();
    let mut out = std::io::stdout();
    for (n, name, f) in criteria {
        if !picked.is_empty() && !picked.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !o.pass {
            failed.push(n);
        }
        writeln!(
            out,
            "criterion {n:>2} {name}: {} - {} [{:.0}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        )
        .unwrap();
        out.flush().unwrap();
    }
    if !failed.is_empty() {
        writeln!(out, "failed criteria: {failed:?}").unwrap();
        std::process::exit(1);
    }
}
