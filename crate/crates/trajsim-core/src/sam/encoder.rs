//! Parameter layout, initialization, and tape graph builders for the
//! encoder.
//!
//! Parameters live in a [`ParamStore`] under fixed names: the shared
//! pre-encoder under `pe.*`, and per layer `l` and direction `dir` (gps or
//! grid) the projections `l{l}.{dir}.wq|wk|wv`, fusion vectors
//! `l{l}.{dir}.lq|lk|lv`, feed-forward `l{l}.{dir}.ff1|ff2.w|b`, and layer
//! norm `l{l}.{dir}.norm.g|b`. Projection weights start uniform in
//! ±1/sqrt(fan_in); biases and fusion vectors start at zero, which makes
//! both attention scale factors exp(0) = 1.

use indexmap::IndexMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Grads, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::sam::{gps_features, grid_features, PreEncoderKind, SamConfig};
use crate::traj::{GridSequence, GridSpec, Trajectory};

pub(crate) const DIRS: [&str; 2] = ["gps", "grid"];

fn uniform_fan_in(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    Tensor::uniform(rows, cols, -bound, bound, rng)
}

/// Freshly initialized parameters for `cfg`, deterministic in `seed`.
pub fn init_params(cfg: &SamConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let d = cfg.d;

    match cfg.pre_encoder {
        PreEncoderKind::Linear => {
            store.insert("pe.w", uniform_fan_in(2, d, &mut rng))?;
            store.insert("pe.b", Tensor::zeros(1, d))?;
        }
        PreEncoderKind::Lstm => {
            store.insert("pe.wx", uniform_fan_in(2, 4 * d, &mut rng))?;
            store.insert("pe.wh", uniform_fan_in(d, 4 * d, &mut rng))?;
            store.insert("pe.b", Tensor::zeros(1, 4 * d))?;
        }
    }

    for l in 0..cfg.layers {
        for dir in DIRS {
            for w in ["wq", "wk", "wv"] {
                store.insert(&format!("l{l}.{dir}.{w}"), uniform_fan_in(d, d, &mut rng))?;
            }
            for lam in ["lq", "lk", "lv"] {
                store.insert(&format!("l{l}.{dir}.{lam}"), Tensor::zeros(1, d))?;
            }
            store.insert(&format!("l{l}.{dir}.ff1.w"), uniform_fan_in(d, cfg.d_hid, &mut rng))?;
            store.insert(&format!("l{l}.{dir}.ff1.b"), Tensor::zeros(1, cfg.d_hid))?;
            store.insert(&format!("l{l}.{dir}.ff2.w"), uniform_fan_in(cfg.d_hid, d, &mut rng))?;
            store.insert(&format!("l{l}.{dir}.ff2.b"), Tensor::zeros(1, d))?;
            store.insert(&format!("l{l}.{dir}.norm.g"), Tensor::filled(1, d, 1.0))?;
            store.insert(&format!("l{l}.{dir}.norm.b"), Tensor::zeros(1, d))?;
        }
    }
    Ok(store)
}

/// Check that `store` holds exactly the parameters `cfg` requires, with the
/// right shapes.
pub fn validate_params(cfg: &SamConfig, store: &ParamStore) -> Result<()> {
    let expected = init_params(cfg, 0)?;
    for (name, t) in expected.iter() {
        let got = store.get(name).map_err(|_| {
            Error::Shape(format!("checkpoint is missing parameter '{name}'"))
        })?;
        if got.shape() != t.shape() {
            return Err(Error::Shape(format!(
                "parameter '{name}' is {}x{}, expected {}x{}",
                got.rows, got.cols, t.rows, t.cols
            )));
        }
    }
    if store.len() != expected.len() {
        let extra: Vec<&str> = store
            .names()
            .filter(|&n| !expected.contains(n))
            .collect();
        return Err(Error::Shape(format!(
            "checkpoint has unexpected parameters: {extra:?}"
        )));
    }
    Ok(())
}

/// Tape leaves for every parameter of a store, so one backward pass yields
/// gradients for all of them.
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Result<BoundParams> {
        let mut vars = IndexMap::new();
        for (name, t) in store.iter() {
            vars.insert(name.to_string(), tape.leaf(t.clone())?);
        }
        Ok(BoundParams { vars })
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Shape(format!("unbound parameter '{name}'")))
    }

    /// Add this tape's parameter gradients into the store.
    pub fn accumulate_into(&self, grads: &Grads, store: &mut ParamStore) -> Result<()> {
        for (name, &var) in &self.vars {
            if let Some(g) = grads.get(var) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}

/// One LSTM cell update. `x` is 1 x in, `h`/`c` are 1 x d, `wx` is in x 4d,
/// `wh` is d x 4d, `b` is 1 x 4d with gate order (input, forget, cell,
/// output). Returns the new (h, c).
pub fn lstm_step(
    tape: &mut Tape,
    x: Var,
    h: Var,
    c: Var,
    wx: Var,
    wh: Var,
    b: Var,
) -> Result<(Var, Var)> {
    let d = tape.value(h).cols;
    let xg = tape.matmul(x, wx)?;
    let hg = tape.matmul(h, wh)?;
    let lin = tape.add(xg, hg)?;
    let gates = tape.add(lin, b)?;
    if tape.value(gates).cols != 4 * d {
        return Err(Error::Shape(format!(
            "lstm gates are 1x{}, expected 1x{}",
            tape.value(gates).cols,
            4 * d
        )));
    }
    let i_raw = tape.slice_cols(gates, 0, d)?;
    let f_raw = tape.slice_cols(gates, d, d)?;
    let g_raw = tape.slice_cols(gates, 2 * d, d)?;
    let o_raw = tape.slice_cols(gates, 3 * d, d)?;
    let i = tape.sigmoid(i_raw)?;
    let f = tape.sigmoid(f_raw)?;
    let g = tape.tanh(g_raw)?;
    let o = tape.sigmoid(o_raw)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_new = tape.add(fc, ig)?;
    let ct = tape.tanh(c_new)?;
    let h_new = tape.mul(o, ct)?;
    Ok((h_new, c_new))
}

/// Map n x 2 features to the n x d initial representation.
pub fn pre_encode(
    tape: &mut Tape,
    params: &BoundParams,
    cfg: &SamConfig,
    features: Var,
) -> Result<Var> {
    let (n, ch) = tape.value(features).shape();
    if ch != 2 {
        return Err(Error::Shape(format!(
            "pre-encoder expects 2 feature channels, got {ch}"
        )));
    }
    match cfg.pre_encoder {
        PreEncoderKind::Linear => {
            let w = params.var("pe.w")?;
            let b = params.var("pe.b")?;
            let xw = tape.matmul(features, w)?;
            tape.add_row_broadcast(xw, b)
        }
        PreEncoderKind::Lstm => {
            let wx = params.var("pe.wx")?;
            let wh = params.var("pe.wh")?;
            let b = params.var("pe.b")?;
            let mut h = tape.leaf(Tensor::zeros(1, cfg.d))?;
            let mut c = tape.leaf(Tensor::zeros(1, cfg.d))?;
            let mut states = Vec::with_capacity(n);
            for t in 0..n {
                let x = tape.slice_rows(features, t, 1)?;
                let (h_new, c_new) = lstm_step(tape, x, h, c, wx, wh, b)?;
                h = h_new;
                c = c_new;
                states.push(h);
            }
            tape.concat_rows(&states)
        }
    }
}

/// The attention stage of one direction: multi-head
/// (lambda_self * A_self + lambda_cross * A_cross) V with heads
/// concatenated, before the feed-forward block. `A_cross` compares Q
/// against K; `A_self` compares K against V.
pub fn saa_core(
    tape: &mut Tape,
    params: &BoundParams,
    cfg: &SamConfig,
    layer: usize,
    dir: &str,
    zq: Var,
    zkv: Var,
) -> Result<Var> {
    let (n, d) = tape.value(zq).shape();
    if d != cfg.d {
        return Err(Error::Shape(format!(
            "attention input is {n}x{d}, config expects width {}",
            cfg.d
        )));
    }
    if tape.value(zkv).shape() != (n, d) {
        let (kr, kc) = tape.value(zkv).shape();
        return Err(Error::Shape(format!(
            "attention inputs disagree: {n}x{d} against {kr}x{kc}"
        )));
    }
    let p = |suffix: &str| params.var(&format!("l{layer}.{dir}.{suffix}"));

    let q = tape.matmul(zq, p("wq")?)?;
    let k = tape.matmul(zkv, p("wk")?)?;
    let v = tape.matmul(zkv, p("wv")?)?;

    let lam_qk = tape.mul(p("lq")?, p("lk")?)?;
    let lam_qk_sum = tape.sum(lam_qk)?;
    let lam_cross = tape.exp(lam_qk_sum)?;
    let lam_kv = tape.mul(p("lk")?, p("lv")?)?;
    let lam_kv_sum = tape.sum(lam_kv)?;
    let lam_self = tape.exp(lam_kv_sum)?;

    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for hd in 0..cfg.heads {
        let qh = tape.slice_cols(q, hd * dh, dh)?;
        let kh = tape.slice_cols(k, hd * dh, dh)?;
        let vh = tape.slice_cols(v, hd * dh, dh)?;

        let kt = tape.transpose(kh)?;
        let qk = tape.matmul(qh, kt)?;
        let qk_scaled = tape.scale(qk, scale)?;
        let a_cross = tape.softmax_rows(qk_scaled)?;

        let vt = tape.transpose(vh)?;
        let kv = tape.matmul(kh, vt)?;
        let kv_scaled = tape.scale(kv, scale)?;
        let a_self = tape.softmax_rows(kv_scaled)?;

        let self_part = tape.scale_by_scalar(a_self, lam_self)?;
        let cross_part = tape.scale_by_scalar(a_cross, lam_cross)?;
        let mixed = tape.add(self_part, cross_part)?;
        heads.push(tape.matmul(mixed, vh)?);
    }
    tape.concat_cols(&heads)
}

/// One full attention block: [`saa_core`] followed by the residual
/// feed-forward, normalized as Norm(Z + FFN(Z)).
pub fn saa(
    tape: &mut Tape,
    params: &BoundParams,
    cfg: &SamConfig,
    layer: usize,
    dir: &str,
    zq: Var,
    zkv: Var,
) -> Result<Var> {
    let z = saa_core(tape, params, cfg, layer, dir, zq, zkv)?;
    let p = |suffix: &str| params.var(&format!("l{layer}.{dir}.{suffix}"));

    let f1 = tape.matmul(z, p("ff1.w")?)?;
    let f1b = tape.add_row_broadcast(f1, p("ff1.b")?)?;
    let act = tape.gelu(f1b)?;
    let f2 = tape.matmul(act, p("ff2.w")?)?;
    let ffn = tape.add_row_broadcast(f2, p("ff2.b")?)?;

    let res = tape.add(z, ffn)?;
    tape.layer_norm(res, p("norm.g")?, p("norm.b")?)
}

/// One dual layer: both directions read the previous layer's outputs.
pub fn dual_saa_layer(
    tape: &mut Tape,
    params: &BoundParams,
    cfg: &SamConfig,
    layer: usize,
    z_gps: Var,
    z_grid: Var,
) -> Result<(Var, Var)> {
    let gps_out = saa(tape, params, cfg, layer, "gps", z_gps, z_grid)?;
    let grid_out = saa(tape, params, cfg, layer, "grid", z_grid, z_gps)?;
    Ok((gps_out, grid_out))
}

/// Full encoder up to the fused n x d sequence (no pooling).
pub fn encode_sequence(
    tape: &mut Tape,
    params: &BoundParams,
    cfg: &SamConfig,
    gps_feat: Var,
    grid_feat: Var,
) -> Result<Var> {
    if tape.value(gps_feat).rows != tape.value(grid_feat).rows {
        return Err(Error::Shape(format!(
            "feature lengths disagree: {} GPS rows against {} grid rows",
            tape.value(gps_feat).rows,
            tape.value(grid_feat).rows
        )));
    }
    let mut z_gps = pre_encode(tape, params, cfg, gps_feat)?;
    let mut z_grid = pre_encode(tape, params, cfg, grid_feat)?;
    for l in 0..cfg.layers {
        let (g, r) = dual_saa_layer(tape, params, cfg, l, z_gps, z_grid)?;
        z_gps = g;
        z_grid = r;
    }
    let gps_part = tape.scale(z_gps, cfg.epsilon)?;
    let grid_part = tape.scale(z_grid, 1.0 - cfg.epsilon)?;
    tape.add(gps_part, grid_part)
}

/// Full encoder to the pooled 1 x d embedding.
pub fn encode_on_tape(
    tape: &mut Tape,
    params: &BoundParams,
    cfg: &SamConfig,
    gps_feat: Var,
    grid_feat: Var,
) -> Result<Var> {
    let seq = encode_sequence(tape, params, cfg, gps_feat, grid_feat)?;
    tape.mean_rows(seq)
}

/// Encode one trajectory to its d-vector embedding.
pub fn encode(
    traj: &Trajectory,
    seq: &GridSequence,
    grid: &GridSpec,
    cfg: &SamConfig,
    store: &ParamStore,
) -> Result<Tensor> {
    if traj.len() != seq.len() {
        return Err(Error::Shape(format!(
            "trajectory '{}' has {} points but its grid sequence has {}",
            traj.id,
            traj.len(),
            seq.len()
        )));
    }
    let gps = gps_features(traj, grid)?;
    let cells = grid_features(seq, grid)?;
    let mut tape = Tape::new();
    let params = BoundParams::bind(&mut tape, store)?;
    let g = tape.leaf(gps)?;
    let c = tape.leaf(cells)?;
    let emb = encode_on_tape(&mut tape, &params, cfg, g, c)?;
    Ok(tape.value(emb).clone())
}
