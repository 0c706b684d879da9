//! Behavior gate for the whole crate: nine end-to-end criteria, one
//! pass/fail line each. Run with `--nocapture` to watch the report live;
//! the final assert repeats every line on failure.
//!
//! The suite is deliberately self-contained: the small-case oracles here
//! re-derive every kernel from scratch (explicit coupling enumeration,
//! early-sqrt double loops) rather than calling back into the library.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trajsim_core::autodiff::gradcheck::{check_gradients, check_graph};
use trajsim_core::autodiff::{ParamStore, Tape, Tensor, Var};
use trajsim_core::config::RunConfig;
use trajsim_core::ddbm::{bridge_stats, sample_bridge, BridgeSchedule};
use trajsim_core::heuristics::{build_matrix, frechet_xy, hausdorff_xy, sspd_xy};
use trajsim_core::ranking::{
    listnet_loss, listnet_on_tape, mse_on_tape, rd_listnet_loss, rd_listnet_on_tape, rd_weights,
    score_on_tape, softmax_entropy, total_loss, LossWeights,
};
use trajsim_core::retrieval::{evaluate_suite, hr_at_k, recall_t_at_k, Ranking};
use trajsim_core::sam::{
    encode_on_tape, gps_features, grid_features, init_params, BoundParams, PreEncoderKind,
    SamConfig,
};
use trajsim_core::synth::random_walk_clusters;
use trajsim_core::traj::{make_grid, split_dataset, to_grid_sequence};
use trajsim_core::train::{encode_all, finetune, pretrain};
use trajsim_core::{
    BoundingBox, DistanceMode, GridSpec, MetricTag, Point, Trajectory,
};

type CriterionResult = Result<String, String>;

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Local oracles, written independently of the library kernels.

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    (dx * dx + dy * dy).sqrt()
}

/// Minimum over explicit monotone coupling paths of the maximum paired
/// distance. Exponential; fine for n <= 6.
fn brute_frechet(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    fn walk(a: &[[f64; 2]], b: &[[f64; 2]], i: usize, j: usize, running: f64, best: &mut f64) {
        let m = running.max(dist(a[i], b[j]));
        if m >= *best {
            return;
        }
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = m;
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, m, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, m, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, m, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn brute_hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    fn directed(xs: &[[f64; 2]], ys: &[[f64; 2]]) -> f64 {
        xs.iter()
            .map(|&p| {
                ys.iter()
                    .map(|&q| dist(p, q))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }
    directed(a, b).max(directed(b, a))
}

fn brute_sspd(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    fn seg_dist(p: [f64; 2], s: [f64; 2], e: [f64; 2]) -> f64 {
        let ex = e[0] - s[0];
        let ey = e[1] - s[1];
        let len2 = ex * ex + ey * ey;
        if len2 == 0.0 {
            return dist(p, s);
        }
        let t = ((p[0] - s[0]) * ex + (p[1] - s[1]) * ey) / len2;
        if t <= 0.0 {
            dist(p, s)
        } else if t >= 1.0 {
            dist(p, e)
        } else {
            f64::hypot(p[0] - (s[0] + t * ex), p[1] - (s[1] + t * ey))
        }
    }
    fn directed(xs: &[[f64; 2]], ys: &[[f64; 2]]) -> f64 {
        let total: f64 = xs
            .iter()
            .map(|&p| {
                if ys.len() == 1 {
                    dist(p, ys[0])
                } else {
                    ys.windows(2)
                        .map(|w| seg_dist(p, w[0], w[1]))
                        .fold(f64::INFINITY, f64::min)
                }
            })
            .sum();
        total / xs.len() as f64
    }
    0.5 * (directed(a, b) + directed(b, a))
}

fn rand_pts(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)])
        .collect()
}

// ---------------------------------------------------------------------------
// Criteria.

fn kernels_match_oracles() -> CriterionResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let pairs = 600;
    for p in 0..pairs {
        let na = rng.gen_range(1..=6);
        let nb = rng.gen_range(1..=6);
        let a = rand_pts(&mut rng, na);
        let b = rand_pts(&mut rng, nb);

        let f = frechet_xy(&a, &b);
        let f_oracle = brute_frechet(&a, &b);
        if f != f_oracle {
            return Err(format!("pair {p}: frechet {f} vs coupling oracle {f_oracle}"));
        }
        let h = hausdorff_xy(&a, &b);
        let h_oracle = brute_hausdorff(&a, &b);
        if h != h_oracle {
            return Err(format!("pair {p}: hausdorff {h} vs double-loop oracle {h_oracle}"));
        }
        let s = sspd_xy(&a, &b);
        let s_oracle = brute_sspd(&a, &b);
        if (s - s_oracle).abs() > 1e-9 {
            return Err(format!("pair {p}: sspd {s} vs segment oracle {s_oracle}"));
        }
    }
    if start.elapsed() > Duration::from_secs(60) {
        return Err(format!("took {:.1?}, budget 60s", start.elapsed()));
    }
    Ok(format!("{pairs} random pairs, n <= 6"))
}

fn metric_order_and_triangle() -> CriterionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for p in 0..1000 {
        let na = rng.gen_range(2..=20);
        let nb = rng.gen_range(2..=20);
        let a = rand_pts(&mut rng, na);
        let b = rand_pts(&mut rng, nb);
        let f = frechet_xy(&a, &b);
        let h = hausdorff_xy(&a, &b);
        if f < h - 1e-9 {
            return Err(format!("pair {p}: frechet {f} below hausdorff {h}"));
        }
    }
    for p in 0..1000 {
        let pts: Vec<Vec<[f64; 2]>> = (0..3)
            .map(|_| {
                let n = rng.gen_range(2..=15);
                rand_pts(&mut rng, n)
            })
            .collect();
        let ab = hausdorff_xy(&pts[0], &pts[1]);
        let bc = hausdorff_xy(&pts[1], &pts[2]);
        let ac = hausdorff_xy(&pts[0], &pts[2]);
        if ac > ab + bc + 1e-9 {
            return Err(format!("triple {p}: {ac} > {ab} + {bc}"));
        }
    }
    Ok("1000 ordering pairs, 1000 triangle triples".into())
}

fn matrix_performance_and_thread_identity() -> CriterionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let trajs: Vec<Trajectory> = (0..1000)
        .map(|i| {
            let n = rng.gen_range(32..=64);
            let mut x: f64 = rng.gen_range(0.2..0.8);
            let mut y: f64 = rng.gen_range(0.2..0.8);
            let pts = (0..n)
                .map(|_| {
                    x = (x + rng.gen_range(-0.01..0.01)).clamp(0.0, 1.0);
                    y = (y + rng.gen_range(-0.01..0.01)).clamp(0.0, 1.0);
                    Point::new(x, y)
                })
                .collect();
            Trajectory::new(format!("t{i:04}"), pts)
        })
        .collect();
    let mean_len =
        trajs.iter().map(|t| t.len()).sum::<usize>() as f64 / trajs.len() as f64;

    let build_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(fail)?
            .install(|| build_matrix(&trajs, MetricTag::Frechet, DistanceMode::Planar))
            .map_err(fail)
    };

    let t0 = Instant::now();
    let m8 = build_with(8)?;
    let elapsed = t0.elapsed();
    if elapsed > Duration::from_secs(300) {
        return Err(format!("8-thread build took {elapsed:.1?}, budget 300s"));
    }
    let m1 = build_with(1)?;
    let m4 = build_with(4)?;
    for i in 0..1000 {
        for j in 0..1000 {
            let bits = m8.get(i, j).to_bits();
            if m1.get(i, j).to_bits() != bits || m4.get(i, j).to_bits() != bits {
                return Err(format!("entry ({i}, {j}) differs across thread counts"));
            }
        }
    }
    Ok(format!(
        "1000x1000, mean length {mean_len:.1}, built in {elapsed:.1?}, bitwise equal at 1/4/8 threads"
    ))
}

fn gradient_suite() -> CriterionResult {
    let start = Instant::now();

    // Per-op graphs. Structural ops are routed through gelu so a
    // mis-wired adjoint cannot hide behind a uniform covector.
    type Build = fn(&mut Tape, &[Var]) -> trajsim_core::Result<Var>;
    let x34 = ("x", 3, 4);
    let cases: Vec<(&str, Vec<(&str, usize, usize)>, Build)> = vec![
        ("matmul", vec![x34, ("y", 4, 2)], |t, v| {
            let h = t.matmul(v[0], v[1])?;
            t.gelu(h)
        }),
        ("add", vec![x34, ("y", 3, 4)], |t, v| {
            let h = t.add(v[0], v[1])?;
            t.gelu(h)
        }),
        ("sub", vec![x34, ("y", 3, 4)], |t, v| {
            let h = t.sub(v[0], v[1])?;
            t.gelu(h)
        }),
        ("mul", vec![x34, ("y", 3, 4)], |t, v| {
            let h = t.mul(v[0], v[1])?;
            t.gelu(h)
        }),
        ("add_row_broadcast", vec![x34, ("y", 1, 4)], |t, v| {
            let h = t.add_row_broadcast(v[0], v[1])?;
            t.gelu(h)
        }),
        ("sub_col_broadcast", vec![x34, ("y", 3, 1)], |t, v| {
            let h = t.sub_col_broadcast(v[0], v[1])?;
            t.gelu(h)
        }),
        ("scale", vec![x34], |t, v| {
            let h = t.scale(v[0], 1.7)?;
            t.gelu(h)
        }),
        ("add_const", vec![x34], |t, v| {
            let h = t.add_const(v[0], 0.37)?;
            t.gelu(h)
        }),
        ("scale_by_scalar", vec![x34, ("y", 1, 1)], |t, v| {
            let h = t.scale_by_scalar(v[0], v[1])?;
            t.gelu(h)
        }),
        ("transpose", vec![x34], |t, v| {
            let h = t.transpose(v[0])?;
            t.gelu(h)
        }),
        ("concat_cols", vec![("x", 3, 2), ("y", 3, 3)], |t, v| {
            let h = t.concat_cols(&[v[0], v[1]])?;
            t.gelu(h)
        }),
        ("concat_rows", vec![("x", 2, 4), ("y", 3, 4)], |t, v| {
            let h = t.concat_rows(&[v[0], v[1]])?;
            t.gelu(h)
        }),
        ("slice_cols", vec![("x", 3, 5)], |t, v| {
            let h = t.slice_cols(v[0], 1, 3)?;
            t.gelu(h)
        }),
        ("slice_rows", vec![("x", 5, 3)], |t, v| {
            let h = t.slice_rows(v[0], 1, 3)?;
            t.gelu(h)
        }),
        ("softmax_rows", vec![x34], |t, v| {
            let h = t.softmax_rows(v[0])?;
            t.gelu(h)
        }),
        ("log_sum_exp_rows", vec![x34], |t, v| {
            let h = t.log_sum_exp_rows(v[0])?;
            t.gelu(h)
        }),
        ("layer_norm", vec![x34, ("g", 1, 4), ("b", 1, 4)], |t, v| {
            let h = t.layer_norm(v[0], v[1], v[2])?;
            t.gelu(h)
        }),
        ("gelu", vec![x34], |t, v| t.gelu(v[0])),
        ("sigmoid", vec![x34], |t, v| t.sigmoid(v[0])),
        ("tanh", vec![x34], |t, v| t.tanh(v[0])),
        ("exp", vec![x34], |t, v| t.exp(v[0])),
        ("sqrt", vec![x34], |t, v| {
            let sq = t.mul(v[0], v[0])?;
            let pos = t.add_const(sq, 0.1)?;
            t.sqrt(pos)
        }),
        ("sum", vec![x34], |t, v| {
            let h = t.gelu(v[0])?;
            t.sum(h)
        }),
        ("mean", vec![x34], |t, v| {
            let h = t.gelu(v[0])?;
            t.mean(h)
        }),
        ("mean_rows", vec![("x", 5, 3)], |t, v| {
            let h = t.gelu(v[0])?;
            t.mean_rows(h)
        }),
    ];
    for (name, shapes, build) in &cases {
        for seed in 0..20 {
            let rep = check_graph(seed, shapes, build).map_err(fail)?;
            if !rep.passes(1e-3) {
                return Err(format!(
                    "op {name} seed {seed}: {} (rel {})",
                    rep.worst, rep.max_rel_err
                ));
            }
        }
    }

    // Full chain: three 5-point trajectories through the dual-attention
    // encoder (d=8, 2 heads, 1 layer) into the combined regression +
    // list losses, differentiated through the per-trajectory tapes.
    let sam = SamConfig {
        d: 8,
        d_hid: 16,
        layers: 1,
        heads: 2,
        epsilon: 0.5,
        pre_encoder: PreEncoderKind::Linear,
    };
    let bbox = BoundingBox::new(0.0, 1.0, 0.0, 1.0).map_err(fail)?;
    let grid = make_grid(bbox, 20_000.0).map_err(fail)?;
    let w = LossWeights::default();
    let target = |i: usize, j: usize| (-0.37 * (i as f64 - j as f64).abs()).exp();

    struct Enc {
        tape: Tape,
        params: BoundParams,
        var: Var,
        emb: Tensor,
    }
    let encode1 = |st: &ParamStore, tr: &Trajectory| -> trajsim_core::Result<Enc> {
        let seq = to_grid_sequence(tr, &grid)?;
        let g = gps_features(tr, &grid)?;
        let c = grid_features(&seq, &grid)?;
        let mut tape = Tape::new();
        let params = BoundParams::bind(&mut tape, st)?;
        let gv = tape.leaf(g)?;
        let cv = tape.leaf(c)?;
        let var = encode_on_tape(&mut tape, &params, &sam, gv, cv)?;
        let emb = tape.value(var).clone();
        Ok(Enc { tape, params, var, emb })
    };
    let head = |embs: &[Tensor]| -> trajsim_core::Result<(Tape, Vec<Var>, Var)> {
        let b = embs.len();
        let mut tape = Tape::new();
        let leaves: Vec<Var> = embs
            .iter()
            .map(|e| tape.leaf(e.clone()))
            .collect::<trajsim_core::Result<_>>()?;
        let mut score = vec![vec![None::<Var>; b]; b];
        let mut flat = Vec::new();
        let mut tgts = Vec::new();
        for i in 0..b {
            for j in (i + 1)..b {
                let s = score_on_tape(&mut tape, leaves[i], leaves[j])?;
                score[i][j] = Some(s);
                score[j][i] = Some(s);
                flat.push(s);
                tgts.push(target(i, j));
            }
        }
        let pred = tape.concat_cols(&flat)?;
        let mut loss = mse_on_tape(&mut tape, pred, &tgts)?;
        for (gamma, list) in [
            (w.gamma1, listnet_on_tape as fn(&mut Tape, Var, &[f64]) -> trajsim_core::Result<Var>),
            (w.gamma2, rd_listnet_on_tape),
        ] {
            let mut terms = Vec::new();
            for q in 0..b {
                let cands: Vec<usize> = (0..b).filter(|&c| c != q).collect();
                let row: Vec<Var> = cands.iter().map(|&c| score[q][c].unwrap()).collect();
                let r: Vec<f64> = cands.iter().map(|&c| target(q, c)).collect();
                let s_row = tape.concat_cols(&row)?;
                terms.push(list(&mut tape, s_row, &r)?);
            }
            let stacked = tape.concat_cols(&terms)?;
            let sum = tape.sum(stacked)?;
            let scaled = tape.scale(sum, gamma / b as f64)?;
            loss = tape.add(loss, scaled)?;
        }
        Ok((tape, leaves, loss))
    };

    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let trajs: Vec<Trajectory> = (0..3)
            .map(|q| {
                Trajectory::new(
                    format!("g{q}"),
                    (0..5)
                        .map(|_| Point::new(rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)))
                        .collect(),
                )
            })
            .collect();
        let mut store = init_params(&sam, 9000 + seed).map_err(fail)?;

        let encs: Vec<Enc> = trajs
            .iter()
            .map(|t| encode1(&store, t))
            .collect::<trajsim_core::Result<_>>()
            .map_err(fail)?;
        let embs: Vec<Tensor> = encs.iter().map(|e| e.emb.clone()).collect();
        let (ht, leaves, loss) = head(&embs).map_err(fail)?;
        let hg = ht.backward(loss).map_err(fail)?;
        store.zero_grads();
        for (i, e) in encs.iter().enumerate() {
            let seed_grad = hg.of(leaves[i], &e.emb);
            let g = e.tape.backward_seeded(e.var, seed_grad).map_err(fail)?;
            e.params.accumulate_into(&g, &mut store).map_err(fail)?;
        }
        let analytic: IndexMap<String, Tensor> = store
            .names()
            .map(|n| (n.to_string(), store.grad(n).unwrap().clone()))
            .collect();

        let rep = check_gradients(
            &mut store,
            &analytic,
            |st| {
                let encs: Vec<Enc> = trajs
                    .iter()
                    .map(|t| encode1(st, t))
                    .collect::<trajsim_core::Result<_>>()?;
                let embs: Vec<Tensor> = encs.iter().map(|e| e.emb.clone()).collect();
                let (ht, _, loss) = head(&embs)?;
                Ok(ht.value(loss).item())
            },
            1e-5,
        )
        .map_err(fail)?;
        if !rep.passes(1e-3) {
            return Err(format!(
                "full chain seed {seed}: {} (rel {})",
                rep.worst, rep.max_rel_err
            ));
        }
    }

    if start.elapsed() > Duration::from_secs(120) {
        return Err(format!("took {:.1?}, budget 120s", start.elapsed()));
    }
    Ok(format!(
        "{} op graphs and the full encoder chain, 20 seeds each",
        cases.len()
    ))
}

fn bridge_suite() -> CriterionResult {
    let linear = BridgeSchedule::new(0.1, 20.0).map_err(fail)?;
    let constant = BridgeSchedule::new(2.0, 2.0).map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let e0 = Tensor::uniform(6, 2, -1.0, 1.0, &mut rng);
    let et = Tensor::uniform(6, 2, -1.0, 1.0, &mut rng);

    for s in [&linear, &constant] {
        let (m0, s0) = bridge_stats(s, &e0, &et, 0.0).map_err(fail)?;
        if m0 != e0 || s0 != 0.0 {
            return Err("t=0 does not pin to the start embedding exactly".into());
        }
        let (mt, st) = bridge_stats(s, &e0, &et, 1.0).map_err(fail)?;
        if mt != et || st != 0.0 {
            return Err("t=T does not pin to the end embedding exactly".into());
        }
        for i in 0..1000 {
            let t = i as f64 / 999.0;
            let v = s.bridge_var(t).map_err(fail)?;
            if v < 0.0 {
                return Err(format!("negative bridge variance {v} at t={t}"));
            }
        }
    }

    let g0 = Tensor::uniform(1, 4, -1.0, 1.0, &mut rng);
    let gt = Tensor::uniform(1, 4, -1.0, 1.0, &mut rng);
    let n = 100_000usize;
    let mut sums = vec![0.0f64; 4];
    let mut mu = Tensor::zeros(1, 4);
    let mut sigma = 0.0;
    for _ in 0..n {
        let s = sample_bridge(&linear, &g0, &gt, &g0, &gt, 0.5, &mut rng).map_err(fail)?;
        for (k, v) in s.e_gps_t.data.iter().enumerate() {
            sums[k] += v;
        }
        mu = s.mu_hat;
        sigma = s.sigma_hat;
    }
    let bound = 4.0 * sigma / (n as f64).sqrt();
    for k in 0..4 {
        let err = (sums[k] / n as f64 - mu.data[k]).abs();
        if err > bound {
            return Err(format!(
                "MC mean off by {err:.2e} in coordinate {k}, bound {bound:.2e}"
            ));
        }
    }
    Ok(format!(
        "endpoints exact, variance >= 0 on 1000-point grid, MC mean of {n} draws within {bound:.1e}"
    ))
}

fn loss_identities() -> CriterionResult {
    let r = vec![0.9, -0.4, 0.1, 2.0, -1.3, 0.6, 0.0];
    let ln = listnet_loss(&r, &r).map_err(fail)?;
    let ent = softmax_entropy(&r);
    if (ln - ent).abs() > 1e-12 {
        return Err(format!("listnet(r, r) = {ln} vs entropy {ent}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for _ in 0..50 {
        let s: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let shifted: Vec<f64> = s.iter().map(|v| v + 3.7).collect();
        let a = listnet_loss(&s, &r).map_err(fail)?;
        let b = listnet_loss(&shifted, &r).map_err(fail)?;
        if (a - b).abs() > 1e-12 {
            return Err(format!("listnet shift changed loss by {:.2e}", (a - b).abs()));
        }
        let c = rd_listnet_loss(&s, &r).map_err(fail)?;
        let d = rd_listnet_loss(&shifted, &r).map_err(fail)?;
        if (c - d).abs() > 1e-12 {
            return Err(format!("decayed shift changed loss by {:.2e}", (c - d).abs()));
        }
    }

    let w = rd_weights(&r).map_err(fail)?;
    let top = r
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    if w[top] != 1.0 {
        return Err(format!("top-rank weight is {}, want exactly 1", w[top]));
    }

    let lw = LossWeights::default();
    for _ in 0..50 {
        let m = rng.gen_range(0.0..2.0);
        let l = rng.gen_range(0.0..2.0);
        let d = rng.gen_range(0.0..2.0);
        if total_loss(m, l, d, &lw) != m + lw.gamma1 * l + lw.gamma2 * d {
            return Err("total loss is not exactly linear in its terms".into());
        }
    }
    Ok("entropy identity, shift invariance, unit top weight, exact linearity".into())
}

/// Shared corpus for the two training criteria: 300 cluster-structured
/// random walks over the unit square with SSPD ground truth.
struct Corpus {
    trajs: Vec<Trajectory>,
    matrix: trajsim_core::DistanceMatrix,
    split: trajsim_core::DatasetSplit,
    grid: GridSpec,
    test_idx: Vec<usize>,
    test_ids: Vec<String>,
}

fn synthetic_corpus() -> Result<Corpus, String> {
    let trajs = random_walk_clusters(10, 30, 32, 11).map_err(fail)?;
    let matrix = build_matrix(&trajs, MetricTag::Sspd, DistanceMode::Planar).map_err(fail)?;
    let ids: Vec<String> = trajs.iter().map(|t| t.id.clone()).collect();
    let split = split_dataset(&ids, 0).map_err(fail)?;
    let bbox = BoundingBox::new(0.0, 1.0, 0.0, 1.0).map_err(fail)?;
    let grid = make_grid(bbox, 10_000.0).map_err(fail)?;
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let test_idx: Vec<usize> = split.test.iter().map(|id| index[id.as_str()]).collect();
    let test_ids = split.test.clone();
    Ok(Corpus {
        trajs,
        matrix,
        split,
        grid,
        test_idx,
        test_ids,
    })
}

fn base_config() -> RunConfig {
    RunConfig {
        d: 16,
        d_hid: Some(32),
        heads: 4,
        resample_len: 16,
        batch_size: 64,
        lr: 0.01,
        finetune_epochs: 30,
        finetune_patience: 30,
        pretrain_epochs: 20,
        pretrain_patience: 20,
        seed: 1,
        ..RunConfig::default()
    }
}

fn hr_of(corpus: &Corpus, store: &ParamStore, sam: &SamConfig) -> Result<(f64, f64), String> {
    let test: Vec<Trajectory> = corpus.test_idx.iter().map(|&i| corpus.trajs[i].clone()).collect();
    let embs = encode_all(&test, &corpus.grid, sam, store).map_err(fail)?;
    let truth = corpus.matrix.submatrix(&corpus.test_idx).map_err(fail)?;
    let report =
        evaluate_suite(&embs, &corpus.test_ids, &truth, &[1, 5], &[]).map_err(fail)?;
    Ok((report.hr[0].1, report.hr[1].1))
}

fn desk_scale_learning() -> CriterionResult {
    let start = Instant::now();
    let corpus = synthetic_corpus()?;
    let cfg = base_config();
    let sam = cfg.sam_config();

    let out = finetune(&corpus.trajs, &corpus.matrix, &corpus.split, &corpus.grid, &cfg, None)
        .map_err(fail)?;
    let (hr1, hr5) = hr_of(&corpus, &out.store, &sam)?;
    let chance = 1.0 / (corpus.test_idx.len() as f64 - 1.0);
    if hr1 < 5.0 * chance {
        return Err(format!("HR@1 {hr1:.3} below 5x chance {:.3}", 5.0 * chance));
    }
    if hr5 < 0.3 {
        return Err(format!("HR@5 {hr5:.3} below 0.3"));
    }

    let mut with_lists = 0.0;
    let mut mse_only = 0.0;
    for seed in [1u64, 2, 3] {
        let mut ranked = cfg.clone();
        ranked.seed = seed;
        let r = if seed == cfg.seed {
            out.store.clone()
        } else {
            finetune(&corpus.trajs, &corpus.matrix, &corpus.split, &corpus.grid, &ranked, None)
                .map_err(fail)?
                .store
        };
        with_lists += hr_of(&corpus, &r, &sam)?.0 / 3.0;

        let mut plain = ranked.clone();
        plain.gamma1 = 0.0;
        plain.gamma2 = 0.0;
        let p = finetune(&corpus.trajs, &corpus.matrix, &corpus.split, &corpus.grid, &plain, None)
            .map_err(fail)?
            .store;
        mse_only += hr_of(&corpus, &p, &sam)?.0 / 3.0;
    }
    if with_lists < mse_only {
        return Err(format!(
            "3-seed mean HR@1 with list losses {with_lists:.3} below MSE-only {mse_only:.3}"
        ));
    }
    if start.elapsed() > Duration::from_secs(900) {
        return Err(format!("took {:.1?}, budget 900s", start.elapsed()));
    }
    Ok(format!(
        "HR@1 {hr1:.3} (chance {chance:.4}), HR@5 {hr5:.3}; 3-seed mean HR@1 {with_lists:.3} vs MSE-only {mse_only:.3}"
    ))
}

fn pretraining_accelerates_convergence() -> CriterionResult {
    let corpus = synthetic_corpus()?;
    let mut cfg = base_config();
    cfg.gamma1 = 0.0;
    cfg.gamma2 = 0.0;
    cfg.seed = 9;
    // Convergence speed is only visible mid-descent: at a high learning
    // rate both runs hit the same eval-loss floor and the head start
    // cancels out. Slow the optimizer down and stop before the floor.
    cfg.lr = 0.001;
    cfg.finetune_epochs = 16;
    cfg.finetune_patience = 16;

    let pre = pretrain(&corpus.trajs, &corpus.split, &corpus.grid, &cfg).map_err(fail)?;
    let cold = finetune(&corpus.trajs, &corpus.matrix, &corpus.split, &corpus.grid, &cfg, None)
        .map_err(fail)?;
    let warm = finetune(
        &corpus.trajs,
        &corpus.matrix,
        &corpus.split,
        &corpus.grid,
        &cfg,
        Some(pre.store),
    )
    .map_err(fail)?;

    let goal = cold.log.last().unwrap().eval_loss;
    let cold_needed = cold
        .log
        .iter()
        .position(|e| e.eval_loss <= goal)
        .unwrap()
        + 1;
    let warm_needed = match warm.log.iter().position(|e| e.eval_loss <= goal) {
        Some(e) => e + 1,
        None => return Err(format!("warm start never reached the cold final loss {goal:.6}")),
    };
    let budget = 0.7 * cold_needed as f64;
    if warm_needed as f64 > budget {
        return Err(format!(
            "warm start needed {warm_needed} epochs vs cold {cold_needed} (budget {budget:.1})"
        ));
    }
    Ok(format!(
        "cold final loss reached in {warm_needed} epochs vs {cold_needed} cold (budget {budget:.1})"
    ))
}

fn retrieval_fixtures() -> CriterionResult {
    let mk = |ids: &[&str]| Ranking {
        query_id: "q".into(),
        ordered: ids.iter().map(|s| s.to_string()).collect(),
    };
    let pred = mk(&["a", "b", "c", "d", "e", "x", "y", "z"]);
    let truth = mk(&["a", "b", "x", "y", "z", "c", "d", "e"]);
    let hr = hr_at_k(&pred, &truth, 5).map_err(fail)?;
    if hr != 0.4 {
        return Err(format!("overlap fixture gave {hr}, want 0.4"));
    }

    let names: Vec<String> = (0..22).map(|i| format!("c{i:02}")).collect();
    let full = Ranking {
        query_id: "q".into(),
        ordered: names.clone(),
    };
    let all_in = recall_t_at_k(&full, &full, 5, 20).map_err(fail)?;
    if all_in != 1.0 {
        return Err(format!("full-containment fixture gave {all_in}, want 1.0"));
    }

    let mut reordered = names;
    reordered.swap(3, 20);
    reordered.swap(4, 21);
    let partial = Ranking {
        query_id: "q".into(),
        ordered: reordered,
    };
    let three_of_five = recall_t_at_k(&partial, &full, 5, 20).map_err(fail)?;
    if three_of_five != 0.6 {
        return Err(format!("partial fixture gave {three_of_five}, want 0.6"));
    }
    Ok("overlap 0.4, containment 1.0, partial recall 0.6".into())
}

// ---------------------------------------------------------------------------

fn panic_text(p: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).into()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic".into()
    }
}

#[test]
fn acceptance() {
    let criteria: Vec<(&str, fn() -> CriterionResult)> = vec![
        ("kernels match exhaustive oracles", kernels_match_oracles),
        ("metric order and triangle inequality", metric_order_and_triangle),
        (
            "matrix build speed and thread-count identity",
            matrix_performance_and_thread_identity,
        ),
        ("finite-difference gradient suite", gradient_suite),
        ("bridge endpoints, variance, MC mean", bridge_suite),
        ("ranking loss identities", loss_identities),
        ("desk-scale retrieval learning", desk_scale_learning),
        ("bridge pretraining speeds up convergence", pretraining_accelerates_convergence),
        ("hand-computed retrieval fixtures", retrieval_fixtures),
    ];

    let mut lines = Vec::new();
    let mut failed = 0usize;
    for (name, f) in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f));
        let took = start.elapsed();
        let line = match outcome {
            Ok(Ok(detail)) => format!("[PASS] {name}: {detail} [{took:.1?}]"),
            Ok(Err(why)) => {
                failed += 1;
                format!("[FAIL] {name}: {why} [{took:.1?}]")
            }
            Err(p) => {
                failed += 1;
                format!("[FAIL] {name}: panicked: {} [{took:.1?}]", panic_text(&*p))
            }
        };
        println!("{line}");
        lines.push(line);
    }
    println!(
        "--- {} of {} acceptance criteria passed ---",
        criteria.len() - failed,
        criteria.len()
    );
    assert_eq!(failed, 0, "\n{}", lines.join("\n"));
}
