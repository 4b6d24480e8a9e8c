//! The energy model: conditionals, CD-m sampling, gradients, parameter
//! updates, per-map least-squares recovery, and reconstruction error.
//!
//! All chain products live in the scaled space of [`chain_product`]; recovered
//! maps are un-scaled by 1/s back toward pixel space before they are reported
//! or compared.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{
    bernoulli_sample, chain_product, chain_scale, full_convolve_flipped, matmul, lstsq_solve_cut,
    sigmoid_map, softplus, valid_correlate, Mat, LSTSQ_SV_CUTOFF,
};
use crate::rng::SplitRng;

/// Normalization choice for the reconstruction error J(N) = sum / (N * f(N)).
/// f must be monotone increasing in N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FChoice {
    /// f(N) = N (default; denominator N^2)
    Linear,
    /// f(N) = N^2
    Quadratic,
    /// f(N) = 1 + log2(N)
    Log2,
}

impl FChoice {
    pub fn eval(self, n: usize) -> f64 {
        let nf = n as f64;
        match self {
            FChoice::Linear => nf,
            FChoice::Quadratic => nf * nf,
            FChoice::Log2 => 1.0 + nf.log2(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" | "n" => Ok(FChoice::Linear),
            "quadratic" | "n2" => Ok(FChoice::Quadratic),
            "log2" => Ok(FChoice::Log2),
            other => Err(Error::Config(format!("unknown f choice '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FChoice::Linear => "linear",
            FChoice::Quadratic => "quadratic",
            FChoice::Log2 => "log2",
        }
    }
}

impl Default for FChoice {
    fn default() -> Self {
        FChoice::Linear
    }
}

/// Parameters of one multiplicative-unit model at a fixed relational order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Relational order N >= 2: number of time-adjacent maps per unit.
    pub order: usize,
    /// K kernels of side n_w.
    pub kernels: Vec<Mat>,
    /// One scalar bias per hidden layer.
    pub hidden_biases: Vec<f64>,
    /// Bias on the multiplicative unit, side n_v.
    pub unit_bias: Mat,
    /// Additive per-map corrections applied during recovery, side n_v each.
    pub map_offsets: Vec<Mat>,
}

impl ModelParams {
    pub fn new(
        order: usize,
        kernels: Vec<Mat>,
        hidden_biases: Vec<f64>,
        unit_bias: Mat,
        map_offsets: Vec<Mat>,
    ) -> Result<Self> {
        if order < 2 {
            return Err(Error::Shape(format!("relational order must be >= 2, got {order}")));
        }
        if kernels.is_empty() {
            return Err(Error::Shape("need at least one kernel".into()));
        }
        let n_w = kernels[0].side()?;
        for k in &kernels {
            if k.side()? != n_w {
                return Err(Error::Shape("kernels have unequal sides".into()));
            }
        }
        let n_v = unit_bias.side()?;
        if n_w > n_v {
            return Err(Error::Shape(format!(
                "kernel side {n_w} exceeds unit side {n_v}"
            )));
        }
        if hidden_biases.len() != kernels.len() {
            return Err(Error::Shape(format!(
                "{} hidden biases for {} kernels",
                hidden_biases.len(),
                kernels.len()
            )));
        }
        if map_offsets.len() != order {
            return Err(Error::Shape(format!(
                "{} map offsets for order {order}",
                map_offsets.len()
            )));
        }
        for o in &map_offsets {
            if o.side()? != n_v {
                return Err(Error::Shape("map offset side differs from unit side".into()));
            }
        }
        Ok(Self { order, kernels, hidden_biases, unit_bias, map_offsets })
    }

    /// Gaussian-initialized parameters.
    pub fn init_random(
        order: usize,
        k: usize,
        n_w: usize,
        n_v: usize,
        sigma: f64,
        rng: &mut SplitRng,
    ) -> Result<Self> {
        let kernels = (0..k)
            .map(|_| Mat::from_fn(n_w, n_w, |_, _| rng.gaussian(0.0, sigma)))
            .collect();
        let hidden_biases = (0..k).map(|_| rng.gaussian(0.0, sigma)).collect();
        let unit_bias = Mat::from_fn(n_v, n_v, |_, _| rng.gaussian(0.0, sigma));
        let map_offsets = (0..order).map(|_| Mat::zeros(n_v, n_v)).collect();
        Self::new(order, kernels, hidden_biases, unit_bias, map_offsets)
    }

    pub fn num_kernels(&self) -> usize {
        self.kernels.len()
    }

    pub fn unit_side(&self) -> usize {
        self.unit_bias.rows()
    }

    pub fn kernel_side(&self) -> usize {
        self.kernels[0].rows()
    }

    /// Hidden side N_h = N_v - N_w + 1.
    pub fn hidden_side(&self) -> usize {
        self.unit_side() - self.kernel_side() + 1
    }
}

/// K binary feature maps of side N_h.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStack {
    pub layers: Vec<Mat>,
}

impl HiddenStack {
    pub fn new(layers: Vec<Mat>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("hidden stack needs at least one layer".into()));
        }
        let side = layers[0].side()?;
        for l in &layers {
            if l.side()? != side {
                return Err(Error::Shape("hidden layers have unequal sides".into()));
            }
            if l.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Domain("hidden layer entry not in {0,1}".into()));
            }
        }
        Ok(Self { layers })
    }
}

/// Gradients and reconstructions produced by one CD-m pass.
#[derive(Debug, Clone)]
pub struct CdResult {
    pub grad_kernels: Vec<Mat>,
    pub grad_hidden_biases: Vec<f64>,
    pub grad_unit_bias: Mat,
    pub grad_map_offsets: Vec<Mat>,
    /// The v_n^(m): recovered maps in pixel space.
    pub recon_maps: Vec<Mat>,
    /// O^(m): mean-field unit after m steps.
    pub recon_unit: Mat,
}

fn check_maps(maps: &[Mat], params: &ModelParams) -> Result<()> {
    if maps.len() != params.order {
        return Err(Error::Shape(format!(
            "{} maps for order-{} model",
            maps.len(),
            params.order
        )));
    }
    for (i, m) in maps.iter().enumerate() {
        if m.side()? != params.unit_side() {
            return Err(Error::Shape(format!(
                "map {i} is {}x{}, model expects side {}",
                m.rows(),
                m.cols(),
                params.unit_side()
            )));
        }
    }
    Ok(())
}

/// Scalar energy E(v_1..v_N, h). Bias terms are summed elementwise products.
pub fn energy(maps: &[Mat], hidden: &HiddenStack, params: &ModelParams) -> Result<f64> {
    check_maps(maps, params)?;
    if hidden.layers.len() != params.num_kernels() {
        return Err(Error::Shape(format!(
            "{} hidden layers for {} kernels",
            hidden.layers.len(),
            params.num_kernels()
        )));
    }
    let o = chain_product(maps)?;
    let mut e = 0.0;
    for (k, h) in hidden.layers.iter().enumerate() {
        let corr = valid_correlate(&o, &params.kernels[k])?;
        e -= corr.dot(h)?;
        e -= params.hidden_biases[k] * h.sum();
    }
    e -= params.unit_bias.dot(&o)?;
    Ok(e)
}

/// P(h^k = 1 | O): sigmoid(W^k * O + c_k) per layer.
pub fn hidden_probs(o: &Mat, params: &ModelParams) -> Result<Vec<Mat>> {
    if o.side()? != params.unit_side() {
        return Err(Error::Shape(format!(
            "unit is {}x{}, model expects side {}",
            o.rows(),
            o.cols(),
            params.unit_side()
        )));
    }
    params
        .kernels
        .iter()
        .zip(&params.hidden_biases)
        .map(|(w, &c)| Ok(sigmoid_map(&valid_correlate(o, w)?.map(|v| v + c))))
        .collect()
}

/// Convenience: the multiplicative unit and its hidden probabilities in one go.
pub fn chain_and_probs(maps: &[Mat], params: &ModelParams) -> Result<(Mat, Vec<Mat>)> {
    check_maps(maps, params)?;
    let o = chain_product(maps)?;
    let probs = hidden_probs(&o, params)?;
    Ok((o, probs))
}

pub fn sample_hidden(probs: &[Mat], rng: &mut SplitRng) -> Result<HiddenStack> {
    let layers = probs
        .iter()
        .map(|p| bernoulli_sample(p, rng))
        .collect::<Result<Vec<_>>>()?;
    HiddenStack::new(layers)
}

/// Pre-sigmoid input to the unit conditional: sum_k Wbar^k * h^k + B.
fn unit_field(layers: &[Mat], params: &ModelParams) -> Result<Mat> {
    if layers.len() != params.num_kernels() {
        return Err(Error::Shape(format!(
            "{} hidden layers for {} kernels",
            layers.len(),
            params.num_kernels()
        )));
    }
    let mut acc = params.unit_bias.clone();
    for (h, w) in layers.iter().zip(&params.kernels) {
        if h.side()? != params.hidden_side() {
            return Err(Error::Shape(format!(
                "hidden layer side {} does not match N_h = {}",
                h.rows(),
                params.hidden_side()
            )));
        }
        acc = acc.add(&full_convolve_flipped(h, w)?)?;
    }
    Ok(acc)
}

/// Mean-field reconstruction of the multiplicative unit,
/// P(O = 1 | h) = sigmoid(sum_k Wbar^k * h^k + B). Never binarized.
pub fn unit_mean(hidden: &HiddenStack, params: &ModelParams) -> Result<Mat> {
    Ok(sigmoid_map(&unit_field(&hidden.layers, params)?))
}

/// Mean-field unit from hidden probabilities instead of a binary sample;
/// used by deterministic evaluation.
pub fn unit_mean_from_probs(probs: &[Mat], params: &ModelParams) -> Result<Mat> {
    Ok(sigmoid_map(&unit_field(probs, params)?))
}

/// Product of a run of raw maps, or identity for an empty run.
fn raw_product(maps: &[Mat], side: usize) -> Result<Mat> {
    let mut acc = Mat::identity(side);
    for m in maps {
        acc = matmul(&acc, m)?;
    }
    Ok(acc)
}

/// Cascaded least-squares recovery of each map from the generative unit.
///
/// Position 0 solves against the right-product of the other maps, the last
/// position against the left-product, interior positions by a nested solve
/// stripping the right side first. The factor products carry the chain scale
/// s per map, so each recovered map comes out as s times the pixel map; it is
/// un-scaled by 1/s, gets its offset added, and is clamped to [0,1]. Offsets
/// and the intensity clamp live in pixel space.
pub fn recover_maps(o_bar: &Mat, maps: &[Mat], params: &ModelParams) -> Result<Vec<Mat>> {
    recover_maps_cut(o_bar, maps, params, LSTSQ_SV_CUTOFF)
}

/// [`recover_maps`] with a caller-chosen relative singular-value cutoff.
///
/// Near-rank-deficient maps (digit images) leave tiny singular directions in
/// the factor products; solving through them amplifies mean-field noise in
/// `o_bar` by orders of magnitude. Training paths pass a stiff cutoff
/// (`RunConfig::recovery_cutoff`) to damp that amplification; the default
/// entry point keeps the sharp cutoff so noiseless factorizations stay exact.
pub fn recover_maps_cut(
    o_bar: &Mat,
    maps: &[Mat],
    params: &ModelParams,
    rel_cutoff: f64,
) -> Result<Vec<Mat>> {
    check_maps(maps, params)?;
    let side = params.unit_side();
    if o_bar.side()? != side {
        return Err(Error::Shape(format!(
            "generative unit side {} does not match model side {side}",
            o_bar.rows()
        )));
    }
    let n = maps.len();
    let s = chain_scale(side, n);
    let mut out = Vec::with_capacity(n);
    for pos in 0..n {
        let left = raw_product(&maps[..pos], side)?.scale(s.powi(pos as i32));
        let right = raw_product(&maps[pos + 1..], side)?.scale(s.powi((n - 1 - pos) as i32));
        let recovered = (|| -> Result<Mat> {
            // strip the right factor: Y * right = O  =>  Y = lstsq(right^T, O^T)^T
            let y = if pos + 1 < n {
                lstsq_solve_cut(&right.transpose(), &o_bar.transpose(), rel_cutoff)?.transpose()
            } else {
                o_bar.clone()
            };
            // strip the left factor: left * X = Y
            if pos > 0 {
                lstsq_solve_cut(&left, &y, rel_cutoff)
            } else {
                Ok(y)
            }
        })()
        .map_err(|e| Error::Numeric(format!("recovery of map {pos} failed: {e}")))?;
        let corrected = recovered.scale(1.0 / s).add(&params.map_offsets[pos])?;
        out.push(corrected.map(|v| v.clamp(0.0, 1.0)));
    }
    Ok(out)
}

/// One m-step contrastive-divergence pass over a unit's maps.
///
/// Positive statistics are taken at the data (step 0), negative at step m;
/// the hidden probability map acts as the correlation kernel, so kernel
/// gradients come out at side N_w.
pub fn cd_m_step(
    maps: &[Mat],
    params: &ModelParams,
    m: usize,
    rng: &mut SplitRng,
) -> Result<CdResult> {
    cd_m_step_cut(maps, params, m, rng, LSTSQ_SV_CUTOFF)
}

/// [`cd_m_step`] with a caller-chosen recovery cutoff; see
/// [`recover_maps_cut`] for why training paths damp the recovery solve.
pub fn cd_m_step_cut(
    maps: &[Mat],
    params: &ModelParams,
    m: usize,
    rng: &mut SplitRng,
    recovery_cutoff: f64,
) -> Result<CdResult> {
    if m < 1 {
        return Err(Error::Domain("CD step count must be >= 1".into()));
    }
    check_maps(maps, params)?;
    let o0 = chain_product(maps)?;
    let p0 = hidden_probs(&o0, params)?;

    let mut o = o0.clone();
    let mut probs = p0.clone();
    let mut v: Vec<Mat> = maps.to_vec();
    for _ in 0..m {
        let h = sample_hidden(&probs, rng)?;
        let o_bar = unit_mean(&h, params)?;
        v = recover_maps_cut(&o_bar, &v, params, recovery_cutoff)?;
        o = o_bar;
        probs = hidden_probs(&o, params)?;
    }
    let pm = probs;

    // kernel and hidden-bias statistics are shared across the hidden map, so
    // average them over its area; otherwise the pinned rate eta explodes them
    let inv_area = 1.0 / (params.hidden_side() * params.hidden_side()) as f64;
    let grad_kernels = p0
        .iter()
        .zip(&pm)
        .map(|(pos, neg)| {
            Ok(valid_correlate(&o0, pos)?
                .sub(&valid_correlate(&o, neg)?)?
                .scale(inv_area))
        })
        .collect::<Result<Vec<_>>>()?;
    let grad_hidden_biases = p0
        .iter()
        .zip(&pm)
        .map(|(pos, neg)| (pos.sum() - neg.sum()) * inv_area)
        .collect();
    let grad_unit_bias = o0.sub(&o)?;
    let grad_map_offsets = maps
        .iter()
        .zip(&v)
        .map(|(orig, recon)| orig.sub(recon))
        .collect::<Result<Vec<_>>>()?;

    Ok(CdResult {
        grad_kernels,
        grad_hidden_biases,
        grad_unit_bias,
        grad_map_offsets,
        recon_maps: v,
        recon_unit: o,
    })
}

/// Gradient-ascent update with a single rate eta across every parameter
/// group; pure (returns new params).
pub fn apply_update(params: &ModelParams, grads: &CdResult, eta: f64) -> Result<ModelParams> {
    let kernels = params
        .kernels
        .iter()
        .zip(&grads.grad_kernels)
        .map(|(w, g)| w.add(&g.scale(eta)))
        .collect::<Result<Vec<_>>>()?;
    let hidden_biases = params
        .hidden_biases
        .iter()
        .zip(&grads.grad_hidden_biases)
        .map(|(c, g)| c + eta * g)
        .collect();
    let unit_bias = params.unit_bias.add(&grads.grad_unit_bias.scale(eta))?;
    let map_offsets = params
        .map_offsets
        .iter()
        .zip(&grads.grad_map_offsets)
        .map(|(b, g)| b.add(&g.scale(eta)))
        .collect::<Result<Vec<_>>>()?;
    ModelParams::new(params.order, kernels, hidden_biases, unit_bias, map_offsets)
}

/// Normalized reconstruction error J = sum_n 1/2 ||orig_n - recon_n||^2 / (N f(N)).
pub fn recon_error_j(orig: &[Mat], recon: &[Mat], f_choice: FChoice) -> Result<f64> {
    if orig.len() != recon.len() {
        return Err(Error::Shape(format!(
            "{} original maps vs {} reconstructions",
            orig.len(),
            recon.len()
        )));
    }
    let n = orig.len();
    let mut total = 0.0;
    for (o, r) in orig.iter().zip(recon) {
        total += 0.5 * o.sub(r)?.frob_sq();
    }
    Ok(total / (n as f64 * f_choice.eval(n)))
}

/// Bound on the hidden-configuration enumeration in [`exact_grad`].
pub const EXACT_GRAD_MAX_HIDDEN: usize = 16;

/// Exact log-likelihood of the unit under the model with binary unit entries:
/// log sum_h e^{-E(O,h)} - log sum_{O' in {0,1}, h} e^{-E(O',h)}.
/// The visible sum is carried out analytically per hidden configuration; the
/// hidden sum is enumerated, which restricts use to tiny models.
pub fn exact_log_likelihood(maps: &[Mat], params: &ModelParams) -> Result<f64> {
    let enumeration = enumerate_hidden(maps, params)?;
    Ok(log_sum_exp(&enumeration.log_pos) - log_sum_exp(&enumeration.log_neg))
}

/// Exact gradient of [`exact_log_likelihood`]: positive statistics at the data
/// minus model-expected statistics. Map offsets do not enter the energy, so
/// their gradient slots are zero.
pub fn exact_grad(maps: &[Mat], params: &ModelParams) -> Result<CdResult> {
    let e = enumerate_hidden(maps, params)?;
    let o = &e.unit;
    let n_w = params.kernel_side();
    let n_v = params.unit_side();
    let k_count = params.num_kernels();

    let pos_w = softmax(&e.log_pos);
    let neg_w = softmax(&e.log_neg);

    let mut grad_kernels = vec![Mat::zeros(n_w, n_w); k_count];
    let mut grad_hidden_biases = vec![0.0; k_count];
    let mut neg_unit = Mat::zeros(n_v, n_v);

    for (cfg_idx, cfg) in e.configs.iter().enumerate() {
        let wp = pos_w[cfg_idx];
        let wn = neg_w[cfg_idx];
        let mean_unit = sigmoid_map(&cfg.field);
        for k in 0..k_count {
            let h = &cfg.layers[k];
            if wp != 0.0 {
                let g = valid_correlate(o, h)?;
                grad_kernels[k] = grad_kernels[k].add(&g.scale(wp))?;
            }
            if wn != 0.0 {
                let g = valid_correlate(&mean_unit, h)?;
                grad_kernels[k] = grad_kernels[k].sub(&g.scale(wn))?;
            }
            grad_hidden_biases[k] += (wp - wn) * h.sum();
        }
        if wn != 0.0 {
            neg_unit = neg_unit.add(&mean_unit.scale(wn))?;
        }
    }
    let grad_unit_bias = o.sub(&neg_unit)?;
    let grad_map_offsets = vec![Mat::zeros(n_v, n_v); params.order];
    let recon_maps = maps.to_vec();

    Ok(CdResult {
        grad_kernels,
        grad_hidden_biases,
        grad_unit_bias,
        grad_map_offsets,
        recon_maps,
        recon_unit: neg_unit,
    })
}

struct HiddenConfig {
    layers: Vec<Mat>,
    /// M(h) = sum_k Wbar^k * h^k + B
    field: Mat,
}

struct Enumeration {
    unit: Mat,
    configs: Vec<HiddenConfig>,
    /// log e^{-E(O,h)} per config
    log_pos: Vec<f64>,
    /// log sum_{O'} e^{-E(O',h)} per config
    log_neg: Vec<f64>,
}

fn enumerate_hidden(maps: &[Mat], params: &ModelParams) -> Result<Enumeration> {
    check_maps(maps, params)?;
    let n_h = params.hidden_side();
    let k_count = params.num_kernels();
    let units = k_count * n_h * n_h;
    if units > EXACT_GRAD_MAX_HIDDEN {
        return Err(Error::Domain(format!(
            "exact enumeration over {units} hidden units exceeds the bound of {EXACT_GRAD_MAX_HIDDEN}"
        )));
    }
    let o = chain_product(maps)?;
    let mut configs = Vec::with_capacity(1 << units);
    let mut log_pos = Vec::with_capacity(1 << units);
    let mut log_neg = Vec::with_capacity(1 << units);
    for mask in 0u32..(1u32 << units) {
        let layers: Vec<Mat> = (0..k_count)
            .map(|k| {
                Mat::from_fn(n_h, n_h, |i, j| {
                    let bit = k * n_h * n_h + i * n_h + j;
                    f64::from((mask >> bit) & 1)
                })
            })
            .collect();
        let field = unit_field(&layers, params)?;
        let bias_term: f64 = layers
            .iter()
            .zip(&params.hidden_biases)
            .map(|(h, &c)| c * h.sum())
            .sum();
        // -E(O,h) = <O, M(h)> + sum_k c_k |h^k|
        log_pos.push(o.dot(&field)? + bias_term);
        // sum over binary O' factorizes into a product of (1 + e^{M_ij})
        log_neg.push(bias_term + field.data().iter().map(|&m| softplus(m)).sum::<f64>());
        configs.push(HiddenConfig { layers, field });
    }
    Ok(Enumeration { unit: o, configs, log_pos, log_neg })
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
