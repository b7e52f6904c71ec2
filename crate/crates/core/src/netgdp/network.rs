use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, GdpConfig, NetError, TrainTrace, DIVERGENCE_CHECK_EVERY};
use crate::harmonics::SphereDim;
use crate::ntk::gaussian_weights;
use crate::spectral::{check_on_sphere, SpectralProjector};
use crate::target::TrainingSet;

/// Weights of `f(W, x) = (1/√m) Σ_r a_r σ(w_r·x) + (1/√m) w_aug · F(W(0), x)`
/// with `F(W(0), x)_r = 1{w_r(0)·x >= 0}`.
///
/// Rows `2j` and `2j+1` share their initial weights and carry opposite signs
/// `a`, so the network output is exactly zero at initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub w: Array2<f64>,
    pub w_aug: Array1<f64>,
    pub a: Array1<f64>,
    pub w0: Array2<f64>,
    pub kappa: f64,
    pub seed: u64,
    /// Number of GDP steps applied since initialization.
    pub step: usize,
}

pub fn init_network(m: usize, d: SphereDim, kappa: f64, seed: u64) -> Result<NetworkState, NetError> {
    if m < 2 || m % 2 != 0 {
        return Err(NetError::OddWidth(m));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(NetError::BadKappa(kappa));
    }
    let dd = d.get();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = gaussian_weights(m / 2, dd, kappa, &mut rng);
    let mut w0 = Array2::<f64>::zeros((m, dd));
    let mut a = Array1::<f64>::zeros(m);
    for (j, row) in half.rows().into_iter().enumerate() {
        w0.row_mut(2 * j).assign(&row);
        w0.row_mut(2 * j + 1).assign(&row);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        a[2 * j + 1] = sign;
        a[2 * j] = -sign;
    }
    Ok(NetworkState {
        w: w0.clone(),
        w_aug: Array1::zeros(m),
        a,
        w0,
        kappa,
        seed,
        step: 0,
    })
}

#[inline]
fn relu(z: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        0.0
    }
}

#[inline]
fn active(z: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Rows per block when evaluating large batches, so the `batch × m`
/// pre-activation matrix stays around 32 MB.
fn block_rows(m: usize) -> usize {
    (4 << 20) / m.max(1)
}

impl NetworkState {
    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>, NetError> {
        if x.ncols() != self.d() {
            return Err(NetError::DimensionMismatch(format!(
                "inputs have {} columns, network expects {}",
                x.ncols(),
                self.d()
            )));
        }
        check_on_sphere(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let mut out = Array1::zeros(x.nrows());
        let step = block_rows(self.m()).max(1);
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + step).min(x.nrows());
            let block = x.slice(ndarray::s![start..end, ..]);
            let pre = block.dot(&self.w.t());
            let pre0 = block.dot(&self.w0.t());
            out.slice_mut(ndarray::s![start..end])
                .assign(&self.output_from(pre.view(), pre0.view()));
            start = end;
        }
        out
    }

    /// Outputs from pre-activations `X W^T` and `X W(0)^T`.
    fn output_from(&self, pre: ArrayView2<'_, f64>, pre0: ArrayView2<'_, f64>) -> Array1<f64> {
        let scale = 1.0 / (self.m() as f64).sqrt();
        let mut out = Array1::zeros(pre.nrows());
        for (i, o) in out.iter_mut().enumerate() {
            let z = pre.row(i);
            let z0 = pre0.row(i);
            // Pairwise so the symmetric initialization cancels exactly.
            let mut relu_sum = 0.0;
            for j in 0..self.m() / 2 {
                let (r, s) = (2 * j, 2 * j + 1);
                relu_sum += self.a[r] * relu(z[r]) + self.a[s] * relu(z[s]);
            }
            let mut aug = 0.0;
            for (wa, zz) in self.w_aug.iter().zip(z0.iter()) {
                aug += wa * active(*zz);
            }
            *o = scale * (relu_sum + aug);
        }
        out
    }

    /// `max_r ‖w_r - w_r(0)‖`.
    pub fn max_movement(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (row, row0) in self.w.rows().into_iter().zip(self.w0.rows()) {
            let mut s = 0.0;
            for (a, b) in row.iter().zip(row0.iter()) {
                s += (a - b) * (a - b);
            }
            best = best.max(s.sqrt());
        }
        best
    }
}

/// Training data with the frozen augmented features `F(W(0), S)` cached.
struct Stepper<'a> {
    s: ArrayView2<'a, f64>,
    y: ArrayView1<'a, f64>,
    /// `S W(0)^T`, constant during training.
    pre0: Array2<f64>,
}

impl<'a> Stepper<'a> {
    fn new(net: &NetworkState, s: ArrayView2<'a, f64>, y: ArrayView1<'a, f64>) -> Result<Self, NetError> {
        if s.ncols() != net.d() {
            return Err(NetError::DimensionMismatch(format!(
                "features have {} columns, network expects {}",
                s.ncols(),
                net.d()
            )));
        }
        if s.nrows() != y.len() {
            return Err(NetError::DimensionMismatch(format!(
                "{} features but {} responses",
                s.nrows(),
                y.len()
            )));
        }
        Ok(Self {
            s,
            y,
            pre0: s.dot(&net.w0.t()),
        })
    }

    fn residual(&self, net: &NetworkState, pre: ArrayView2<'_, f64>) -> Array1<f64> {
        net.output_from(pre, self.pre0.view()) - &self.y
    }

    fn current_residual(&self, net: &NetworkState) -> Array1<f64> {
        let pre = self.s.dot(&net.w.t());
        self.residual(net, pre.view())
    }

    /// One GDP step; returns `u(t)` computed from the pre-step weights.
    fn step(&self, net: &mut NetworkState, p: &SpectralProjector, eta: f64) -> Result<Array1<f64>, NetError> {
        let n = self.s.nrows();
        let m = net.m();
        let pre = self.s.dot(&net.w.t());
        let u = self.residual(net, pre.view());
        let g = p.apply(u.view())?;
        let coef = -eta / (n as f64 * (m as f64).sqrt());

        // First layer: Δw_r = coef · a_r Σ_i 1{w_r·x_i >= 0} g_i x_i.
        let mut gated = pre;
        Zip::from(gated.rows_mut()).and(&g).for_each(|mut row, &gi| {
            row.mapv_inplace(|z| active(z) * gi);
        });
        let mut delta = gated.t().dot(&self.s);
        Zip::from(delta.rows_mut()).and(&net.a).for_each(|mut row, &ar| {
            row *= coef * ar;
        });
        net.w += &delta;

        // Augmented weights: Δw_aug = coef · F(W(0), S)^T g.
        let mut acc = Array1::<f64>::zeros(m);
        for (row0, &gi) in self.pre0.rows().into_iter().zip(g.iter()) {
            Zip::from(&mut acc).and(row0).for_each(|a, &z| *a += active(z) * gi);
        }
        net.w_aug.scaled_add(coef, &acc);
        net.step += 1;
        Ok(u)
    }
}

/// Applies one GDP step in place and returns the pre-step residual `u(t) = ŷ(t) - y`.
pub fn gdp_step<'a>(
    net: &mut NetworkState,
    s: ArrayView2<'a, f64>,
    y: ArrayView1<'a, f64>,
    p: &SpectralProjector,
    eta: f64,
) -> Result<Array1<f64>, NetError> {
    if p.n() != s.nrows() {
        return Err(NetError::DimensionMismatch(format!(
            "projector is {}x{0} but there are {} samples",
            p.n(),
            s.nrows()
        )));
    }
    let stepper = Stepper::new(net, s, y)?;
    stepper.step(net, p, eta)
}

/// Runs `cfg.steps` GDP steps on the finite-width network.
pub fn train(
    mut net: NetworkState,
    ts: &TrainingSet,
    p: &SpectralProjector,
    cfg: &GdpConfig,
) -> Result<(NetworkState, TrainTrace), NetError> {
    if cfg.backend != Backend::FiniteWidth {
        return Err(NetError::BackendMismatch {
            configured: cfg.backend,
            called: Backend::FiniteWidth,
        });
    }
    let n = ts.n();
    cfg.validate(n)?;
    if p.rank() != cfg.rank || p.n() != n {
        return Err(NetError::DimensionMismatch(format!(
            "projector (n = {}, rank = {}) does not match config rank {} with n = {n}",
            p.n(),
            p.rank(),
            cfg.rank
        )));
    }
    let stepper = Stepper::new(&net, ts.features.view(), ts.y.view())?;
    let sqrt_m = (net.m() as f64).sqrt();
    let sqrt_n = (n as f64).sqrt();
    let mut trace = TrainTrace::default();
    let mut c_u: f64 = 0.0;

    for t in 0..=cfg.steps {
        // Measured on W(t), before step t+1 moves it.
        let movement = net.max_movement();
        let u = if t < cfg.steps {
            stepper.step(&mut net, p, cfg.eta)?
        } else {
            stepper.current_residual(&net)
        };
        let res_sq = u.dot(&u);
        if (t % DIVERGENCE_CHECK_EVERY == 0 || t == cfg.steps) && !(res_sq.is_finite() && movement.is_finite()) {
            return Err(NetError::NumericalDivergence { step: t });
        }
        c_u = c_u.max(res_sq.sqrt() / sqrt_n);
        trace.push(res_sq, n, movement, cfg.eta * c_u * t as f64 / sqrt_m);
    }
    Ok((net, trace))
}
