//! Independent oracles and check routines shared by the integration tests
//! and the acceptance target.
#![allow(dead_code)]

use ufs_lab::gan::{
    generator_objective, interpolate, penalty_with_grads, Architecture, DiscriminatorNet, GanState,
    GeneratorNet, LinearHead, LossKind, TrainConfig, Trainer,
};
use ufs_lab::numerics::{
    finite_diff_grad, gaussian_sample, AdamState, LayerSpec, Sequential, FD_STEP,
};
use ufs_lab::selection::{SelectionConfig, SelectionMode};
use ufs_lab::ufs::{apply_suppression, UfsConfig};
use ufs_lab::{Result, SeededRng, Tensor};

// ---------------------------------------------------------------- matrices

pub type Mat = Vec<Vec<f64>>;

pub fn eye(n: usize) -> Mat {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for k in 0..m {
            for j in 0..p {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn mat_lin(a: &Mat, b: &Mat, sa: f64, sb: f64) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| sa * x + sb * y).collect())
        .collect()
}

/// Gauss–Jordan inverse with partial pivoting.
pub fn mat_inv(a: &Mat) -> Mat {
    let n = a.len();
    let mut m: Mat = a
        .iter()
        .zip(eye(n))
        .map(|(r, e)| r.iter().copied().chain(e).collect())
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(c, p);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                let row_c = m[c].clone();
                for (v, pc) in m[r].iter_mut().zip(row_c) {
                    *v -= f * pc;
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Principal square root by the Denman–Beavers iteration.
pub fn denman_beavers_sqrt(a: &Mat) -> Mat {
    let mut y = a.clone();
    let mut z = eye(a.len());
    for _ in 0..100 {
        let yi = mat_inv(&y);
        let zi = mat_inv(&z);
        let ny = mat_lin(&y, &zi, 0.5, 0.5);
        let nz = mat_lin(&z, &yi, 0.5, 0.5);
        let delta: f64 = ny
            .iter()
            .flatten()
            .zip(y.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .sum();
        y = ny;
        z = nz;
        if delta < 1e-15 {
            break;
        }
    }
    y
}

fn trace(a: &Mat) -> f64 {
    (0..a.len()).map(|i| a[i][i]).sum()
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2(ΣaΣb)^½)` with the root of the
/// non-symmetric product taken by Denman–Beavers.
pub fn frechet_oracle(mu_a: &[f64], sa: &Mat, mu_b: &[f64], sb: &Mat) -> f64 {
    let mean: f64 = mu_a.iter().zip(mu_b).map(|(a, b)| (a - b).powi(2)).sum();
    let root = denman_beavers_sqrt(&mat_mul(sa, sb));
    mean + trace(sa) + trace(sb) - 2.0 * trace(&root)
}

pub fn tensor_to_mat(t: &Tensor) -> Mat {
    t.to_rows()
}

/// Random SPD matrix `A Aᵀ + 0.1 I`.
pub fn random_spd(d: usize, rng: &mut SeededRng) -> Mat {
    let a: Mat = (0..d)
        .map(|_| (0..d).map(|_| rng.normal()).collect())
        .collect();
    let at: Mat = (0..d).map(|i| (0..d).map(|j| a[j][i]).collect()).collect();
    mat_lin(&mat_mul(&a, &at), &eye(d), 1.0, 0.1)
}

// ------------------------------------------------------------- PRDC oracle

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prdc {
    pub precision: f64,
    pub recall: f64,
    pub density: f64,
    pub coverage: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn kth_radius(points: &Mat, i: usize, k: usize) -> f64 {
    let mut d: Vec<f64> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, p)| dist(&points[i], p))
        .collect();
    d.sort_by(f64::total_cmp);
    d[k - 1]
}

/// Direct enumeration of the definitions, one ball at a time.
pub fn prdc_oracle(real: &Mat, fake: &Mat, k: usize) -> Prdc {
    let rr: Vec<f64> = (0..real.len()).map(|i| kth_radius(real, i, k)).collect();
    let fr: Vec<f64> = (0..fake.len()).map(|j| kth_radius(fake, j, k)).collect();
    let inside = |p: &[f64], c: &[f64], r: f64| dist(p, c) <= r;
    let precision = fake
        .iter()
        .filter(|f| real.iter().zip(&rr).any(|(r, &rad)| inside(f, r, rad)))
        .count() as f64
        / fake.len() as f64;
    let recall = real
        .iter()
        .filter(|r| fake.iter().zip(&fr).any(|(f, &rad)| inside(r, f, rad)))
        .count() as f64
        / real.len() as f64;
    let mut hits = 0usize;
    for f in fake {
        for (r, &rad) in real.iter().zip(&rr) {
            if inside(f, r, rad) {
                hits += 1;
            }
        }
    }
    let density = hits as f64 / (k * fake.len()) as f64;
    let coverage = real
        .iter()
        .zip(&rr)
        .filter(|(r, &rad)| fake.iter().any(|f| inside(f, r, rad)))
        .count() as f64
        / real.len() as f64;
    Prdc {
        precision,
        recall,
        density,
        coverage,
    }
}

// ------------------------------------------------------------ sort oracle

/// Top/bottom-k by a full stable sort; ties keep the lower index.
pub fn selection_oracle(scores: &[f64], k: usize, top: bool) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
    // Stable sort on the key alone keeps index order among equal scores.
    if top {
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    } else {
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    }
    let mut idx: Vec<usize> = pairs[..k].iter().map(|p| p.1).collect();
    idx.sort();
    idx
}

// -------------------------------------------------------- gradient checks

/// Relative error, but absolute when both sides are below 1e-8. A gradient
/// that is exactly zero (e.g. the head bias under a WGAN loss) shows up in
/// central differences as ~1e-11 of cancellation noise.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a.sub(b).expect("shapes differ").norm();
    let scale = a.norm().max(b.norm());
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

fn upstream_loss(out: &Tensor, g: &Tensor) -> f64 {
    out.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
}

fn with_param(net: &Sequential, j: usize, p: &Tensor) -> Sequential {
    let mut n = net.clone();
    *n.params_mut()[j] = p.clone();
    n
}

/// Worst relative error over the input and every parameter gradient of
/// `Σ G ⊙ net(x)` for a random upstream `G`.
pub fn check_sequential(net: &Sequential, x: &Tensor, rng: &mut SeededRng) -> Result<f64> {
    let (out, trace) = net.forward(x)?;
    let g = gaussian_sample(rng, out.shape(), 0.0, 1.0)?;
    let grads = net.backward(&trace, &g)?;
    let fx = finite_diff_grad(
        |xp| Ok(Tensor::scalar(upstream_loss(&net.infer(xp)?, &g))),
        x,
        FD_STEP,
    )?;
    let mut worst = relative_error(&grads.input, &fx);
    for (j, p) in net.params().into_iter().enumerate() {
        let fp = finite_diff_grad(
            |pp| {
                Ok(Tensor::scalar(upstream_loss(
                    &with_param(net, j, pp).infer(x)?,
                    &g,
                )))
            },
            p,
            FD_STEP,
        )?;
        worst = worst.max(relative_error(&grads.params[j], &fp));
    }
    Ok(worst)
}

/// Values bounded away from zero so kinked activations stay differentiable.
pub fn away_from_zero(shape: &[usize], rng: &mut SeededRng) -> Result<Tensor> {
    let t = gaussian_sample(rng, shape, 0.0, 1.0)?;
    Ok(t.map(|v| v.signum() * (0.1 + v.abs())))
}

fn tanh_disc(input: usize, rng: &mut SeededRng) -> Result<DiscriminatorNet> {
    let specs = [
        LayerSpec::Dense {
            inputs: input,
            outputs: 5,
        },
        LayerSpec::Tanh,
        LayerSpec::Dense {
            inputs: 5,
            outputs: 4,
        },
        LayerSpec::Tanh,
    ];
    let body = Sequential::with_init_std(&specs, rng, 0.7)?;
    let head = LinearHead::new(gaussian_sample(rng, &[4], 0.0, 1.0)?, 0.3);
    DiscriminatorNet::from_parts(body, head, &[input])
}

fn tanh_conv_disc(rng: &mut SeededRng) -> Result<DiscriminatorNet> {
    let specs = [
        LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 3,
            kernel: 3,
            stride: 2,
        },
        LayerSpec::Tanh,
        LayerSpec::Conv2d {
            in_channels: 3,
            out_channels: 4,
            kernel: 2,
            stride: 1,
        },
        LayerSpec::Tanh,
        LayerSpec::GlobalSumPool,
    ];
    let body = Sequential::with_init_std(&specs, rng, 0.5)?;
    let head = LinearHead::new(gaussian_sample(rng, &[4], 0.0, 1.0)?, -0.2);
    DiscriminatorNet::from_parts(body, head, &[1, 7, 7])
}

fn disc_with_param(d: &DiscriminatorNet, j: usize, p: &Tensor) -> DiscriminatorNet {
    let mut n = d.clone();
    *n.params_mut()[j] = p.clone();
    n
}

/// Scores bounded away from the hinge kinks at ±1.
fn hinge_safe_scores(n: usize, rng: &mut SeededRng) -> Result<Tensor> {
    let t = gaussian_sample(rng, &[n], 0.0, 1.5)?;
    Ok(t.map(|v| {
        if (v.abs() - 1.0).abs() < 0.05 {
            v + 0.2
        } else {
            v
        }
    }))
}

/// Adversarial loss gradients with respect to scores and, through a tanh
/// discriminator, all of its parameters.
fn check_loss(kind: LossKind, rng: &mut SeededRng) -> Result<f64> {
    let loss = ufs_lab::gan::AdversarialLoss::new(kind);
    let real = hinge_safe_scores(5, rng)?;
    let fake = hinge_safe_scores(6, rng)?;
    let (_, gr, gf) = loss.discriminator_loss(&real, &fake)?;
    let fr = finite_diff_grad(
        |r| Ok(Tensor::scalar(loss.discriminator_loss(r, &fake)?.0)),
        &real,
        FD_STEP,
    )?;
    let ff = finite_diff_grad(
        |f| Ok(Tensor::scalar(loss.discriminator_loss(&real, f)?.0)),
        &fake,
        FD_STEP,
    )?;
    let mut worst = relative_error(&gr, &fr).max(relative_error(&gf, &ff));

    let d = tanh_disc(3, rng)?;
    let xr = gaussian_sample(rng, &[4, 3], 0.0, 1.0)?;
    let xf = gaussian_sample(rng, &[4, 3], 0.0, 1.0)?;
    let total = |d: &DiscriminatorNet| -> Result<f64> {
        Ok(loss.discriminator_loss(&d.scores(&xr)?, &d.scores(&xf)?)?.0)
    };
    let pr = d.forward(&xr)?;
    let pf = d.forward(&xf)?;
    let (_, g_r, g_f) = loss.discriminator_loss(&pr.scores, &pf.scores)?;
    let (mut grads, _) = d.backward_scores(&pr, &g_r)?;
    let (gfk, _) = d.backward_scores(&pf, &g_f)?;
    for (a, b) in grads.iter_mut().zip(&gfk) {
        a.add_assign(b)?;
    }
    for (j, p) in d.params().into_iter().enumerate() {
        let fp = finite_diff_grad(
            |pp| Ok(Tensor::scalar(total(&disc_with_param(&d, j, pp))?)),
            p,
            FD_STEP,
        )?;
        worst = worst.max(relative_error(&grads[j], &fp));
    }
    Ok(worst)
}

/// Gradient-penalty parameter gradient (a second-order quantity).
fn check_penalty(d: &DiscriminatorNet, x_hat: &Tensor) -> Result<f64> {
    let lambda = 10.0;
    let pg = penalty_with_grads(d, x_hat, lambda)?;
    let mut worst: f64 = 0.0;
    for (j, p) in d.params().into_iter().enumerate() {
        let fp = finite_diff_grad(
            |pp| {
                Ok(Tensor::scalar(
                    penalty_with_grads(&disc_with_param(d, j, pp), x_hat, lambda)?.value,
                ))
            },
            p,
            FD_STEP,
        )?;
        worst = worst.max(relative_error(&pg.param_grads[j], &fp));
    }
    // Input gradient of D itself, used inside the penalty.
    let fx = finite_diff_grad(|x| Ok(Tensor::scalar(d.scores(x)?.sum())), x_hat, FD_STEP)?;
    worst = worst.max(relative_error(&pg.input_grads, &fx));
    Ok(worst)
}

fn tanh_generator(rng: &mut SeededRng) -> Result<GeneratorNet> {
    let specs = [
        LayerSpec::Dense {
            inputs: 3,
            outputs: 6,
        },
        LayerSpec::Tanh,
        LayerSpec::Dense {
            inputs: 6,
            outputs: 2,
        },
    ];
    GeneratorNet::from_parts(3, Sequential::with_init_std(&specs, rng, 0.7)?, &[2])
}

/// Full generator gradient of the masked, top-k selected objective, with
/// the suppression mask and the selected set held fixed.
pub fn check_masked_generator(rng: &mut SeededRng) -> Result<f64> {
    let g = tanh_generator(rng)?;
    let d = tanh_disc(2, rng)?;
    let mut cfg = TrainConfig::new(6, 100, LossKind::WganGp);
    cfg.ufs = Some(UfsConfig::new(0.5, 1.0, 1.5));
    cfg.selection = Some(SelectionConfig::new(SelectionMode::Top, 4, 3));
    let mut state = GanState::new(g, d, &cfg)?;
    state.iteration = 30;
    let yr = state
        .discriminator
        .body
        .infer(&gaussian_sample(rng, &[8, 2], 1.0, 1.0)?)?;
    let yf = state
        .discriminator
        .body
        .infer(&gaussian_sample(rng, &[8, 2], -1.0, 1.0)?)?;
    let w = state.discriminator.head.weight.clone();
    state.stats.update(&w, &yr, &yf)?;

    let z = gaussian_sample(rng, &[6, 3], 0.0, 1.0)?;
    let gp = state.generator.forward(&z)?;
    let dp = state.discriminator.forward(&gp.samples)?;
    let obj = generator_objective(&state, &cfg, &dp.features, rng)?;
    let gx = state
        .discriminator
        .backward_features(&dp, &obj.feature_grad)?;
    let analytic = state.generator.backward(&gp, &gx)?;

    let s = obj.suppression.clone();
    let sel = obj.selected.clone();
    let d = &state.discriminator;
    let fixed = |gen: &GeneratorNet| -> Result<f64> {
        let y = d.body.infer(&gen.infer(&z)?)?;
        let scores = apply_suppression(&y, &s, &d.head)?;
        Ok(-sel.iter().map(|&i| scores.data()[i]).sum::<f64>() / sel.len() as f64)
    };
    let mut worst: f64 = 0.0;
    for (j, p) in state.generator.body.params().into_iter().enumerate() {
        let fp = finite_diff_grad(
            |pp| {
                let mut gen = state.generator.clone();
                *gen.body.params_mut()[j] = pp.clone();
                Ok(Tensor::scalar(fixed(&gen)?))
            },
            p,
            FD_STEP,
        )?;
        worst = worst.max(relative_error(&analytic[j], &fp));
    }
    Ok(worst)
}

/// Named worst-case relative errors for one seed of the gradient suite.
pub fn gradient_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = SeededRng::new(seed);
    let r = &mut rng;
    let mut out = Vec::new();
    let one = |spec: LayerSpec, r: &mut SeededRng| Sequential::with_init_std(&[spec], r, 0.7);

    let net = one(
        LayerSpec::Dense {
            inputs: 4,
            outputs: 3,
        },
        r,
    )?;
    let x = gaussian_sample(r, &[3, 4], 0.0, 1.0)?;
    out.push(("dense", check_sequential(&net, &x, r)?));

    let net = one(
        LayerSpec::Conv2d {
            in_channels: 2,
            out_channels: 3,
            kernel: 3,
            stride: 2,
        },
        r,
    )?;
    let x = gaussian_sample(r, &[2, 2, 7, 7], 0.0, 1.0)?;
    out.push(("conv2d", check_sequential(&net, &x, r)?));

    let x = away_from_zero(&[3, 5], r)?;
    out.push((
        "leaky_relu",
        check_sequential(&one(LayerSpec::LeakyRelu { slope: 0.2 }, r)?, &x, r)?,
    ));
    out.push(("relu", check_sequential(&one(LayerSpec::Relu, r)?, &x, r)?));
    out.push(("tanh", check_sequential(&one(LayerSpec::Tanh, r)?, &x, r)?));

    let x = gaussian_sample(r, &[2, 3, 4, 4], 0.0, 1.0)?;
    out.push((
        "global_sum_pool",
        check_sequential(&one(LayerSpec::GlobalSumPool, r)?, &x, r)?,
    ));

    let mlp = Sequential::with_init_std(
        &[
            LayerSpec::Dense {
                inputs: 3,
                outputs: 6,
            },
            LayerSpec::Tanh,
            LayerSpec::Dense {
                inputs: 6,
                outputs: 5,
            },
            LayerSpec::Tanh,
            LayerSpec::Dense {
                inputs: 5,
                outputs: 2,
            },
        ],
        r,
        0.7,
    )?;
    let x = gaussian_sample(r, &[4, 3], 0.0, 1.0)?;
    out.push(("composite_mlp", check_sequential(&mlp, &x, r)?));

    let conv = tanh_conv_disc(r)?;
    let x = gaussian_sample(r, &[2, 1, 7, 7], 0.0, 1.0)?;
    out.push(("composite_conv", check_sequential(&conv.body, &x, r)?));

    out.push(("wgan_loss", check_loss(LossKind::Wgan, r)?));
    out.push(("hinge_loss", check_loss(LossKind::Hinge, r)?));

    let d = tanh_disc(3, r)?;
    let real = gaussian_sample(r, &[4, 3], 0.0, 1.0)?;
    let fake = gaussian_sample(r, &[4, 3], 0.0, 1.0)?;
    let x_hat = interpolate(&real, &fake, r)?;
    out.push(("gradient_penalty_mlp", check_penalty(&d, &x_hat)?));
    let x_hat = gaussian_sample(r, &[2, 1, 7, 7], 0.0, 1.0)?;
    out.push(("gradient_penalty_conv", check_penalty(&conv, &x_hat)?));

    out.push(("masked_generator_objective", check_masked_generator(r)?));
    Ok(out)
}

// ------------------------------------------------------- reference loop

/// Training loop built from the network, loss and optimizer primitives
/// only, with no suppression or selection code. It consumes randomness in
/// the same order as the library trainer.
pub struct ReferenceLoop {
    pub g: GeneratorNet,
    pub d: DiscriminatorNet,
    pub opt_g: AdamState,
    pub opt_d: AdamState,
    pub rng: SeededRng,
    pub batch: usize,
    pub n_critic: usize,
    pub lambda: f64,
}

impl ReferenceLoop {
    pub fn d_step(&mut self, real: &Tensor) -> Result<f64> {
        let n = real.rows();
        let z = self.g.latent(n, &mut self.rng)?;
        let fake = self.g.infer(&z)?;
        let pr = self.d.forward(real)?;
        let pf = self.d.forward(&fake)?;
        let (nr, nf) = (pr.scores.len() as f64, pf.scores.len() as f64);
        let loss = pf.scores.mean() - pr.scores.mean();
        let (mut grads, _) = self
            .d
            .backward_scores(&pr, &Tensor::full(&[n], -1.0 / nr))?;
        let (gf, _) = self.d.backward_scores(&pf, &Tensor::full(&[n], 1.0 / nf))?;
        for (a, b) in grads.iter_mut().zip(&gf) {
            a.add_assign(b)?;
        }
        let x_hat = interpolate(real, &fake, &mut self.rng)?;
        let pg = penalty_with_grads(&self.d, &x_hat, self.lambda)?;
        for (a, b) in grads.iter_mut().zip(&pg.param_grads) {
            a.add_assign(b)?;
        }
        self.opt_d.step(&mut self.d.params_mut(), &grads)?;
        Ok(loss + pg.value)
    }

    pub fn g_step(&mut self) -> Result<f64> {
        let z = self.g.latent(self.batch, &mut self.rng)?;
        let gp = self.g.forward(&z)?;
        let dp = self.d.forward(&gp.samples)?;
        let n = dp.scores.len() as f64;
        let loss = -dp.scores.data().iter().sum::<f64>() / n;
        let mut gy = Tensor::zeros(dp.features.shape());
        let w = self.d.head.weight.data();
        for i in 0..gy.rows() {
            for (g, &wc) in gy.row_mut(i).iter_mut().zip(w) {
                *g = -wc / n;
            }
        }
        let gx = self.d.backward_features(&dp, &gy)?;
        let grads = self.g.backward(&gp, &gx)?;
        self.opt_g.step(&mut self.g.body.params_mut(), &grads)?;
        Ok(loss)
    }
}

/// Ring-style data batches from a dedicated stream.
pub fn ring_batch(n: usize, rng: &mut SeededRng) -> Result<Tensor> {
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let a = rng.below(8) as f64 * std::f64::consts::TAU / 8.0;
        rows.push(vec![
            2.0 * a.cos() + 0.02 * rng.normal(),
            2.0 * a.sin() + 0.02 * rng.normal(),
        ]);
    }
    Tensor::from_rows(&rows)
}

/// Runs `iters` iterations of the library trainer (UFS and selection off)
/// and of the reference loop from identical initial states. Returns the
/// number of iterations whose losses and parameters were bit-identical.
pub fn baseline_equivalence(iters: usize, seed: u64) -> Result<usize> {
    let mut init = SeededRng::new(seed);
    let (g, d) = Architecture::Points.build(&[2], &mut init)?;
    let mut cfg = TrainConfig::new(16, iters as u64, LossKind::WganGp);
    cfg.n_critic = Some(2);
    let state = GanState::new(g.clone(), d.clone(), &cfg)?;
    let mut lib = Trainer::new(cfg.clone(), state, SeededRng::new(seed + 1))?;
    let mut reference = ReferenceLoop {
        opt_g: AdamState::new(cfg.adam, &g.body.params())?,
        opt_d: AdamState::new(cfg.adam, &d.params())?,
        g,
        d,
        rng: SeededRng::new(seed + 1),
        batch: cfg.batch_size,
        n_critic: cfg.critic_steps(),
        lambda: cfg.loss.gp_lambda,
    };
    let mut data_a = SeededRng::new(seed + 2);
    let mut data_b = SeededRng::new(seed + 2);
    let bits = |ts: Vec<&Tensor>| -> Vec<u64> {
        ts.iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    };
    for it in 0..iters {
        let (ld, lg) = lib.iteration(|n| ring_batch(n, &mut data_a))?;
        let mut rd = f64::NAN;
        for _ in 0..reference.n_critic {
            let real = ring_batch(reference.batch, &mut data_b)?;
            rd = reference.d_step(&real)?;
        }
        let rg = reference.g_step()?;
        let same = ld.to_bits() == rd.to_bits()
            && lg.to_bits() == rg.to_bits()
            && bits(lib.state.generator.body.params()) == bits(reference.g.body.params())
            && bits(lib.state.discriminator.params()) == bits(reference.d.params());
        if !same {
            return Ok(it);
        }
    }
    Ok(iters)
}

// ------------------------------------------------------------- criteria
//
// Each check returns a one-line detail on success and a description of the
// first violation on failure.

pub type Check = std::result::Result<String, String>;

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Worst error of the full gradient suite over `seeds` seeds.
pub fn check_gradients(seeds: u64, tol: f64) -> Check {
    let start = std::time::Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for seed in 0..seeds {
        for (name, err) in gradient_suite(1000 + seed).map_err(fail)? {
            if !(err < tol) {
                return Err(format!("{name} at seed {seed}: relative error {err:e}"));
            }
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some(w) => w.1 = w.1.max(err),
                None => worst.push((name, err)),
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        return Err(format!("suite took {secs:.1}s"));
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    Ok(format!(
        "{} checks × {seeds} seeds, worst {max:.2e}, {secs:.1}s",
        worst.len()
    ))
}

/// Suppression configs drawn in the ring and half-suppression examples.
pub const GRID_CONFIGS: [(f64, f64, f64); 2] = [(0.5, 1.0, 1.5), (0.0, 1.0, 1.0)];

/// `compute_suppression` against `ε − clamp(R, α, β)` on a 1000-point grid.
pub fn check_suppression_grid() -> Check {
    let grid: Vec<f64> = (0..1000).map(|i| -1.0 + 4.0 * i as f64 / 999.0).collect();
    let r = Tensor::new(vec![1000, 1], grid.clone()).map_err(fail)?;
    let mut worst: f64 = 0.0;
    for (a, b, e) in GRID_CONFIGS {
        let s = ufs_lab::ufs::compute_suppression(&r, &UfsConfig::new(a, b, e)).map_err(fail)?;
        for (&rv, &sv) in grid.iter().zip(s.values().data()) {
            let want = e - rv.clamp(a, b);
            worst = worst.max((sv - want).abs());
        }
    }
    // Landmarks from the worked examples.
    let f = ufs_lab::ufs::suppression_value;
    let marks = [
        (f(0.3, 0.5, 1.0, 1.5), 1.0),
        (f(1.2, 0.5, 1.0, 1.5), 0.5),
        (f(-0.5, 0.0, 1.0, 1.0), 1.0),
        (f(2.0, 0.0, 1.0, 1.0), 0.0),
    ];
    for (got, want) in marks {
        worst = worst.max((got - want).abs());
    }
    if worst <= 1e-12 {
        Ok(format!("2 configs × 1000 points, max |ΔS| = {worst:.1e}"))
    } else {
        Err(format!("max |ΔS| = {worst:e}"))
    }
}

/// Bounds `ε−β ≤ S ≤ ε−α` and monotone non-increase in R, on scalar ratios
/// and on full masks built from random statistics and features.
pub fn check_suppression_properties(cases: u32) -> Check {
    use proptest::prelude::*;
    use proptest::test_runner::{Config, TestRunner};
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let scalar = (
        -5.0..5.0f64,
        0.0..4.0f64,
        -3.0..5.0f64,
        -50.0..50.0f64,
        0.0..10.0f64,
    );
    runner
        .run(&scalar, |(alpha, width, eps, r1, dr)| {
            let beta = alpha + width;
            let f = |r| ufs_lab::ufs::suppression_value(r, alpha, beta, eps);
            let (s1, s2) = (f(r1), f(r1 + dr));
            prop_assert!(s1 <= eps - alpha && s1 >= eps - beta);
            prop_assert!(
                s2 <= s1,
                "not monotone: S({r1}) = {s1}, S({}) = {s2}",
                r1 + dr
            );
            Ok(())
        })
        .map_err(fail)?;
    let masks = (any::<u64>(), 0.0..2.0f64, 0.0..3.0f64);
    runner
        .run(&masks, |(seed, alpha, width)| {
            let mut rng = SeededRng::new(seed);
            let c = 1 + rng.below(6);
            let cfg = UfsConfig::new(alpha, alpha + width, alpha + width + rng.uniform());
            let w = gaussian_sample(&mut rng, &[c], 0.0, 1.0).unwrap();
            let mut stats = ufs_lab::ufs::FeatureStats::new(c, 0.0).unwrap();
            let yr = gaussian_sample(&mut rng, &[5, c], 1.0, 1.0).unwrap();
            let yf = gaussian_sample(&mut rng, &[5, c], -1.0, 1.0).unwrap();
            stats.update(&w, &yr, &yf).unwrap();
            let y = gaussian_sample(&mut rng, &[7, c], 0.0, 2.0).unwrap();
            let s = ufs_lab::ufs::suppression_for(&stats, &w, &y, &cfg).unwrap();
            let (lo, hi) = (cfg.epsilon - cfg.beta, cfg.epsilon - cfg.alpha);
            for &v in s.values().data() {
                prop_assert!(
                    v >= lo - 1e-15 && v <= hi + 1e-15,
                    "S = {v} outside [{lo}, {hi}]"
                );
            }
            Ok(())
        })
        .map_err(fail)?;
    Ok(format!("{cases} scalar cases + {cases} mask cases"))
}

/// The eight tuned (α, β, ε) triplets with their reported labels.
pub const REGIME_TABLE: [(f64, f64, f64, &str); 8] = [
    (0.0, 1.0, 1.0, "Dismission"),
    (1.0, 2.0, 2.5, "Suppression"),
    (1.0, 2.0, 3.0, "Suppression"),
    (1.0, 3.0, 3.0, "Dismission"),
    (1.0, 1.2, 2.0, "Suppression"),
    (1.0, 1.3, 2.0, "Suppression"),
    (1.0, 1.4, 2.0, "Suppression"),
    (1.0, 1.5, 2.0, "Suppression"),
];

pub fn check_regime_table() -> Check {
    use ufs_lab::ufs::{classify_mode, Regime};
    for (a, b, e, label) in REGIME_TABLE {
        let got = match classify_mode(&UfsConfig::new(a, b, e)).map_err(fail)? {
            Regime::Suppression => "Suppression",
            Regime::Dismission => "Dismission",
        };
        if got != label {
            return Err(format!(
                "({a}, {b}, {e}) classified {got}, expected {label}"
            ));
        }
    }
    Ok("8/8 rows".into())
}

/// Builds a convolutional discriminator on `1×side×side` images with
/// populated statistics and a non-trivial suppression mask for `x`.
pub fn cam_fixture(
    side: usize,
    n: usize,
    seed: u64,
) -> Result<(DiscriminatorNet, Tensor, ufs_lab::ufs::SuppressionMatrix)> {
    let mut rng = SeededRng::new(seed);
    let (_, d) = Architecture::Images.build(&[1, side, side], &mut rng)?;
    let c = d.channels();
    let mut stats = ufs_lab::ufs::FeatureStats::new(c, 0.0)?;
    let real = gaussian_sample(&mut rng, &[8, 1, side, side], 0.3, 0.5)?;
    let fake = gaussian_sample(&mut rng, &[8, 1, side, side], -0.3, 0.5)?;
    let (yr, _) = d.forward_split(&real)?;
    let (yf, _) = d.forward_split(&fake)?;
    stats.update(&d.head.weight, &yr, &yf)?;
    let x = gaussian_sample(&mut rng, &[n, 1, side, side], 0.0, 0.7)?;
    let (y, _) = d.forward_split(&x)?;
    let s =
        ufs_lab::ufs::suppression_for(&stats, &d.head.weight, &y, &UfsConfig::new(0.5, 1.0, 1.5))?;
    Ok((d, x, s))
}

/// `∂ȳ/∂Y = w ⊗ S` exactly; CAM decomposition and score identities.
pub fn check_masking_identities(seeds: u64) -> Check {
    use ufs_lab::attribution::{compute_cam, CamVariant};
    let (mut split_err, mut score_err, mut grad_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut fractional = 0usize;
    for seed in 0..seeds {
        let (d, x, s) = cam_fixture(16, 4, seed).map_err(fail)?;
        fractional += s
            .values()
            .data()
            .iter()
            .filter(|&&v| v > 0.0 && v < 1.0)
            .count();

        // Mask derivative through the head: upstream 1 on each score.
        let (y, scores) = d.forward_split(&x).map_err(fail)?;
        let masked = y.mul(s.values()).map_err(fail)?;
        let (_, _, gy) = d
            .head
            .backward(&masked, &Tensor::full(&[y.rows()], 1.0))
            .map_err(fail)?;
        let dy = gy.mul(s.values()).map_err(fail)?;
        for i in 0..y.rows() {
            for (c, &g) in dy.row(i).iter().enumerate() {
                let want = d.head.weight.data()[c] * s.values().row(i)[c];
                if g.to_bits() != want.to_bits() {
                    return Err(format!("∂ȳ/∂Y[{i},{c}] = {g}, w·S = {want}"));
                }
            }
        }
        // Independent check of the same derivative by perturbation.
        let bump = 0.25;
        for (i, c) in [(0, 0), (1, 5), (3, 127)] {
            let mut yp = y.clone();
            yp.row_mut(i)[c] += bump;
            let a = apply_suppression(&yp, &s, &d.head).map_err(fail)?;
            let b = apply_suppression(&y, &s, &d.head).map_err(fail)?;
            let fd = (a.data()[i] - b.data()[i]) / bump;
            grad_err = grad_err.max((fd - dy.row(i)[c]).abs());
        }

        let cam = compute_cam(&d, &x, Some(&s), CamVariant::Cam).map_err(fail)?;
        let kept = compute_cam(&d, &x, Some(&s), CamVariant::CamUfs).map_err(fail)?;
        let sup = compute_cam(&d, &x, Some(&s), CamVariant::CamSup).map_err(fail)?;
        for i in 0..x.rows() {
            let sum = kept[i].values.add(&sup[i].values).map_err(fail)?;
            split_err = split_err.max(sum.max_abs_diff(&cam[i].values));
            score_err = score_err.max((cam[i].values.sum() + d.head.b() - scores.data()[i]).abs());
        }
    }
    if fractional == 0 {
        return Err("fixture produced no fractional mask entries".into());
    }
    if grad_err > 1e-9 {
        return Err(format!("perturbed ȳ disagrees with w·S by {grad_err:e}"));
    }
    if split_err > 1e-10 {
        return Err(format!("|CAM_UFS + CAM_SUP − CAM| = {split_err:e}"));
    }
    if score_err > 1e-9 {
        return Err(format!("|ΣCAM + b − score| = {score_err:e}"));
    }
    Ok(format!(
        "∂ȳ/∂Y bit-exact; split {split_err:.1e}; score {score_err:.1e}"
    ))
}

/// Shifting an image by the body's total stride shifts its CAM by one cell.
pub fn check_cam_translation(seed: u64) -> Check {
    use ufs_lab::attribution::{compute_cam, CamVariant};
    let mut rng = SeededRng::new(seed);
    let (_, d) = Architecture::Images
        .build(&[1, 32, 32], &mut rng)
        .map_err(fail)?;
    let x = gaussian_sample(&mut rng, &[1, 1, 32, 32], 0.0, 1.0).map_err(fail)?;
    let mut shifted = Tensor::zeros(&[1, 1, 32, 32]);
    for r in 0..32 {
        for c in 8..32 {
            shifted.set(&[0, 0, r, c], x.get(&[0, 0, r, c - 8]));
        }
    }
    let a = &compute_cam(&d, &x, None, CamVariant::Cam).map_err(fail)?[0].values;
    let b = &compute_cam(&d, &shifted, None, CamVariant::Cam).map_err(fail)?[0].values;
    let (h, w) = (a.shape()[0], a.shape()[1]);
    let mut worst: f64 = 0.0;
    for i in 0..h {
        for j in 0..w - 1 {
            worst = worst.max((a.get(&[i, j]) - b.get(&[i, j + 1])).abs());
        }
    }
    if worst <= 1e-12 {
        Ok(format!("{h}×{w} map, max deviation {worst:.1e}"))
    } else {
        Err(format!("shifted CAM deviates by {worst:e}"))
    }
}

/// `select_indices` against the stable-sort oracle for every n ≤ 64 and
/// every k, on tie-heavy and continuous scores.
pub fn check_selection_oracle() -> Check {
    use ufs_lab::selection::{select_indices, SelectionMode};
    let mut rng = SeededRng::new(99);
    let mut calls = 0;
    for n in 1..=64 {
        for ties in [true, false] {
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    if ties {
                        rng.below(4) as f64
                    } else {
                        rng.normal()
                    }
                })
                .collect();
            let t = Tensor::vector(scores.clone()).map_err(fail)?;
            for k in 1..=n {
                for (mode, top) in [(SelectionMode::Top, true), (SelectionMode::Bottom, false)] {
                    let got = select_indices(&t, k, mode, &mut rng).map_err(fail)?;
                    let want = selection_oracle(&scores, k, top);
                    if got != want {
                        return Err(format!("n={n} k={k} {mode:?}: {got:?} vs {want:?}"));
                    }
                    calls += 1;
                }
            }
        }
    }
    Ok(format!("{calls} (n, k, mode, score-set) cases"))
}

/// `manifold_metrics` against brute-force ball enumeration.
pub fn check_manifold_oracle() -> Check {
    let mut rng = SeededRng::new(5);
    let mut instances = 0;
    for m in 2..=12usize {
        for n in 2..=12usize {
            for lattice in [false, true] {
                let k = 1 + rng.below(m.min(n) - 1);
                let d = 1 + rng.below(3);
                let pt = |rng: &mut SeededRng| -> Vec<f64> {
                    (0..d)
                        .map(|_| {
                            if lattice {
                                rng.below(4) as f64
                            } else {
                                rng.normal()
                            }
                        })
                        .collect()
                };
                let real: Mat = (0..m).map(|_| pt(&mut rng)).collect();
                let fake: Mat = (0..n).map(|_| pt(&mut rng)).collect();
                let want = prdc_oracle(&real, &fake, k);
                let got = ufs_lab::eval::manifold_metrics(
                    &Tensor::from_rows(&real).map_err(fail)?,
                    &Tensor::from_rows(&fake).map_err(fail)?,
                    k,
                )
                .map_err(fail)?;
                let diffs = [
                    got.precision - want.precision,
                    got.recall - want.recall,
                    got.density - want.density,
                    got.coverage - want.coverage,
                ];
                if diffs.iter().any(|v| v.abs() > 1e-12) {
                    return Err(format!(
                        "M={m} N={n} k={k} lattice={lattice}: {got:?} vs {want:?}"
                    ));
                }
                instances += 1;
            }
        }
    }
    Ok(format!("{instances} instances, M,N ∈ [2,12]"))
}

/// Fréchet distance against the 1-D closed form and a 3-D Denman–Beavers
/// oracle.
pub fn check_frechet_oracle() -> Check {
    use ufs_lab::eval::{fit_gaussian, frechet_distance};
    let mut rng = SeededRng::new(11);
    let (mut e1, mut e3): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let (mu_a, sd_a, mu_b, sd_b) = (
            rng.normal(),
            0.5 + rng.uniform(),
            rng.normal(),
            0.5 + rng.uniform(),
        );
        let a = gaussian_sample(&mut rng, &[40, 1], mu_a, sd_a).map_err(fail)?;
        let b = gaussian_sample(&mut rng, &[30, 1], mu_b, sd_b).map_err(fail)?;
        let (fa, fb) = (
            fit_gaussian(&a).map_err(fail)?,
            fit_gaussian(&b).map_err(fail)?,
        );
        let (ma, mb) = (fa.mean.data()[0], fb.mean.data()[0]);
        let (sa, sb) = (
            fa.covariance.data()[0].sqrt(),
            fb.covariance.data()[0].sqrt(),
        );
        let closed = (ma - mb).powi(2) + (sa - sb).powi(2);
        e1 = e1.max((frechet_distance(&fa, &fb).map_err(fail)? - closed).abs());

        let a = gaussian_sample(&mut rng, &[50, 3], 0.0, 1.0).map_err(fail)?;
        let mix = random_spd(3, &mut rng);
        let b = Tensor::from_rows(&mat_mul(&a.to_rows(), &mix)).map_err(fail)?;
        let (fa, fb) = (
            fit_gaussian(&a).map_err(fail)?,
            fit_gaussian(&b).map_err(fail)?,
        );
        let cov = |f: &ufs_lab::eval::GaussianFit| {
            Tensor::new(vec![3, 3], f.covariance.data().to_vec())
                .unwrap()
                .to_rows()
        };
        let want = frechet_oracle(fa.mean.data(), &cov(&fa), fb.mean.data(), &cov(&fb));
        e3 = e3.max((frechet_distance(&fa, &fb).map_err(fail)? - want).abs());
    }
    if e1 > 1e-9 {
        return Err(format!("1-D closed form off by {e1:e}"));
    }
    if e3 > 1e-6 {
        return Err(format!("3-D oracle off by {e3:e}"));
    }
    Ok(format!("1-D max {e1:.1e}, 3-D max {e3:.1e}"))
}

/// Kept counts equal `⌈r·N⌉`, and a 1e6-magnitude outlier is never kept.
pub fn check_instance_selection(seeds: u64) -> Check {
    use ufs_lab::selection::{instance_select, CovarianceMode, InstanceSelectionConfig};
    for n in [4usize, 7, 10, 33, 100] {
        for r in [0.3, 0.5, 0.75, 0.9, 1.0] {
            if r * (n as f64) < 2.0 {
                continue;
            }
            let mut rng = SeededRng::new(n as u64);
            let data = gaussian_sample(&mut rng, &[n, 2], 0.0, 1.0).map_err(fail)?;
            let keep = instance_select(&data, &InstanceSelectionConfig::new(r)).map_err(fail)?;
            let want = (r * n as f64).ceil() as usize;
            if keep.len() != want {
                return Err(format!("N={n} r={r}: kept {} (want {want})", keep.len()));
            }
        }
    }
    let mut trials = 0;
    for seed in 0..seeds {
        let mut rng = SeededRng::new(seed);
        let mut data = gaussian_sample(&mut rng, &[120, 2], 0.0, 1.0).map_err(fail)?;
        let at = rng.below(120);
        let angle = rng.uniform() * std::f64::consts::TAU;
        data.row_mut(at)
            .copy_from_slice(&[1e6 * angle.cos(), 1e6 * angle.sin()]);
        for r in [0.1, 0.5, 0.9] {
            for covariance in [CovarianceMode::FullShrinkage, CovarianceMode::Diagonal] {
                let cfg = InstanceSelectionConfig {
                    covariance,
                    ..InstanceSelectionConfig::new(r)
                };
                let keep = instance_select(&data, &cfg).map_err(fail)?;
                if keep.contains(&at) {
                    return Err(format!(
                        "seed {seed} r={r} {covariance:?}: outlier {at} kept"
                    ));
                }
                trials += 1;
            }
        }
    }
    Ok(format!(
        "counts exact; outlier pruned in {trials}/{trials} trials"
    ))
}

/// Bit-identity of the library loop (UFS and selection off) with the
/// reference loop, plus invariance of discriminator updates to UFS.
pub fn check_baseline_equivalence(iters: usize) -> Check {
    let same = baseline_equivalence(iters, 21).map_err(fail)?;
    if same != iters {
        return Err(format!(
            "diverged from the reference loop at iteration {same}"
        ));
    }
    // Along a UFS + top-k trajectory, a discriminator step taken with UFS
    // switched off must produce bit-identical parameters and statistics.
    let mut init = SeededRng::new(3);
    let (g, d) = Architecture::Points.build(&[2], &mut init).map_err(fail)?;
    let mut cfg = TrainConfig::new(16, 40, LossKind::WganGp);
    cfg.ufs = Some(UfsConfig::dismission());
    cfg.selection = Some(SelectionConfig::new(SelectionMode::Top, 16, 8));
    let state = GanState::new(g, d, &cfg).map_err(fail)?;
    let mut with = Trainer::new(cfg, state, SeededRng::new(4)).map_err(fail)?;
    let mut data = SeededRng::new(5);
    for it in 0..40 {
        let real = ring_batch(16, &mut data).map_err(fail)?;
        let mut without = with.clone();
        without.cfg.ufs = None;
        without.cfg.selection = None;
        let a = with.train_discriminator_step(&real).map_err(fail)?;
        let b = without.train_discriminator_step(&real).map_err(fail)?;
        let bits = |t: &Trainer| -> Vec<u64> {
            t.state
                .discriminator
                .params()
                .iter()
                .flat_map(|p| p.data().iter().map(|v| v.to_bits()))
                .collect()
        };
        if a.loss.to_bits() != b.loss.to_bits()
            || bits(&with) != bits(&without)
            || with.state.stats != without.state.stats
        {
            return Err(format!("discriminator step {it} depends on UFS"));
        }
        with.train_generator_step().map_err(fail)?;
    }
    Ok(format!(
        "{iters} iterations bit-identical; 40 D steps UFS-invariant"
    ))
}
