//! Loss terms, the composite loss, ADAM, and the full-batch training loop.

use ndarray::Array2;

use crate::hsi::{AbundanceMatrix, EndmemberMatrix, Guidance, HsiCube};
use crate::metrics::{score, Scores};
use crate::ndgraph::{Graph, Var};
use crate::nets::{nba_forward, nba_graph, Nba, NbaNodes, NbaOutputs, NbaParams};
use crate::{Error, Result, Scalar, Tensor};

/// Weights of the composite loss (`α1..α3`) and of the two RED terms
/// (`α4`, `α5`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub alpha5: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha1: 0.1, alpha2: 0.001, alpha3: 1.0, alpha4: 0.001, alpha5: 0.001 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha1, self.alpha2, self.alpha3, self.alpha4, self.alpha5];
        if all.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative, got {all:?}")));
        }
        Ok(())
    }
}

fn half_sq_residual<T: Scalar>(op: &'static str, y: &Array2<T>, yh: &Array2<T>) -> Result<T> {
    if y.dim() != yh.dim() {
        return Err(Error::shape(op, y.shape(), yh.shape()));
    }
    let s = y.iter().zip(yh.iter()).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
    Ok(s * T::lit(0.5))
}

fn product<T: Scalar>(op: &'static str, e: &Array2<T>, a: &Array2<T>) -> Result<Array2<T>> {
    if e.ncols() != a.nrows() {
        return Err(Error::shape(op, e.shape(), a.shape()));
    }
    Ok(e.dot(a))
}

/// `½‖Y − Ê A_G‖²`.
pub fn loss_e<T: Scalar>(y: &HsiCube<T>, e_hat: &EndmemberMatrix<T>, a_g: &AbundanceMatrix<T>) -> Result<T> {
    let yh = product("loss_E", e_hat.matrix(), a_g.matrix())?;
    half_sq_residual("loss_E", &y.to_flat(), &yh)
}

/// `½‖Y − E_G Â‖²`.
pub fn loss_a<T: Scalar>(y: &HsiCube<T>, a_hat: &AbundanceMatrix<T>, e_g: &EndmemberMatrix<T>) -> Result<T> {
    let yh = product("loss_A", e_g.matrix(), a_hat.matrix())?;
    half_sq_residual("loss_A", &y.to_flat(), &yh)
}

/// `½‖Y − Ŷ‖²`.
pub fn loss_bu<T: Scalar>(y: &HsiCube<T>, y_hat: &HsiCube<T>) -> Result<T> {
    half_sq_residual("loss_BU", &y.to_flat(), &y_hat.to_flat())
}

/// Fixed augmented-Lagrangian data of the outer RED loop:
/// penalties `(μ_E/2)‖X_E − Ê − d_E‖²` and `(μ_A/2)‖X_A − Â − d_A‖²`.
#[derive(Clone, Debug)]
pub struct AugTerms<T> {
    pub x_e: Array2<T>,
    pub d_e: Array2<T>,
    pub mu_e: f64,
    pub x_a: Array2<T>,
    pub d_a: Array2<T>,
    pub mu_a: f64,
}

/// Loss nodes on a graph.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub l_e: Var,
    pub l_a: Var,
    pub l_bu: Var,
    pub total: Var,
}

fn half_sq_node<T: Scalar>(g: &mut Graph<T>, target: Var, est: Var) -> Result<Var> {
    let r = g.sub(target, est)?;
    let s = g.sum_squares(r);
    Ok(g.scale(s, T::lit(0.5)))
}

fn penalty<T: Scalar>(g: &mut Graph<T>, x: &Array2<T>, d: &Array2<T>, mu: f64, est: Var) -> Result<Var> {
    let c = g.constant((x - d).into_dyn());
    let r = g.sub(c, est)?;
    let s = g.sum_squares(r);
    Ok(g.scale(s, T::lit(0.5 * mu)))
}

/// `α1 L_E + α2 L_A + α3 L_BU`, plus the two RED penalties when `aug` is
/// given. `y` is the `P × N` observation node.
pub fn composite_loss<T: Scalar>(
    g: &mut Graph<T>,
    y: Var,
    nodes: &NbaNodes,
    guidance: &Guidance<T>,
    w: &LossWeights,
    aug: Option<&AugTerms<T>>,
) -> Result<LossNodes> {
    let e_g = g.constant(guidance.endmembers.matrix().clone().into_dyn());
    let a_g = g.constant(guidance.abundances.matrix().clone().into_dyn());
    let ea = g.matmul(nodes.endmembers, a_g)?;
    let l_e = half_sq_node(g, y, ea)?;
    let ea = g.matmul(e_g, nodes.abundances)?;
    let l_a = half_sq_node(g, y, ea)?;
    let l_bu = half_sq_node(g, y, nodes.reconstruction)?;

    let t1 = g.scale(l_e, T::lit(w.alpha1));
    let t2 = g.scale(l_a, T::lit(w.alpha2));
    let t3 = g.scale(l_bu, T::lit(w.alpha3));
    let mut total = g.add(t1, t2)?;
    total = g.add(total, t3)?;
    if let Some(aug) = aug {
        let pe = penalty(g, &aug.x_e, &aug.d_e, aug.mu_e, nodes.endmembers)?;
        let pa = penalty(g, &aug.x_a, &aug.d_a, aug.mu_a, nodes.abundances)?;
        total = g.add(total, pe)?;
        total = g.add(total, pa)?;
    }
    Ok(LossNodes { l_e, l_a, l_bu, total })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.85, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// First/second moments per parameter plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.raw_dim())).collect();
        let v = m.clone();
        AdamState { config, m, v, step: 0 }
    }

    /// One bias-corrected ADAM update. Every gradient is checked before
    /// any parameter changes; a non-finite entry aborts with the name of
    /// the offending parameter.
    pub fn update(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>], names: &[String]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {} values and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
            if g.iter().any(|v| !v.is_finite()) {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::NonFinite { what: format!("gradient of {name}"), epoch: self.step as usize });
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one, eps) = (T::one(), T::lit(c.eps));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::lit(c.lr);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i];
            ndarray::Zip::from(&mut **p)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub weights: LossWeights,
}

/// Losses of one epoch, evaluated at the parameters before that epoch's
/// update, with aligned scores when ground truth is attached.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_e: f64,
    pub l_a: f64,
    pub l_bu: f64,
    pub total: f64,
    pub scores: Option<Scores>,
}

/// A recorded forward pass, tied to the epoch it was taken at.
pub struct Forward<T> {
    graph: Graph<T>,
    vars: Nba<Var>,
    nodes: NbaNodes,
    epoch: usize,
    height: usize,
    width: usize,
}

impl<T: Scalar> Forward<T> {
    pub fn outputs(&self) -> Result<NbaOutputs<T>> {
        self.nodes.outputs(&self.graph, self.height, self.width)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

/// Full-batch NBA trainer on a single cube.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    y: HsiCube<T>,
    guidance: Guidance<T>,
    params: NbaParams<T>,
    names: Vec<String>,
    adam: AdamState<T>,
    weights: LossWeights,
    epoch: usize,
    truth: Option<(EndmemberMatrix<T>, AbundanceMatrix<T>)>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(y: HsiCube<T>, guidance: Guidance<T>, params: NbaParams<T>, config: TrainConfig) -> Result<Self> {
        config.weights.validate()?;
        config.adam.validate()?;
        let (p, n) = (y.bands(), y.pixels());
        let (ge, ga) = (&guidance.endmembers, &guidance.abundances);
        if ge.bands() != p || ga.pixels() != n || ge.count() != ga.count() {
            return Err(Error::shape("trainer guidance", &[ge.bands(), ge.count()], &[ga.count(), ga.pixels()]));
        }
        let names = params.named().into_iter().map(|(n, _)| n).collect();
        let adam = AdamState::new(config.adam, params.named().into_iter().map(|(_, t)| t));
        Ok(Trainer { y, guidance, params, names, adam, weights: config.weights, epoch: 0, truth: None })
    }

    /// Attaches ground truth so each epoch record carries aligned scores.
    pub fn with_truth(mut self, e: EndmemberMatrix<T>, a: AbundanceMatrix<T>) -> Self {
        self.truth = Some((e, a));
        self
    }

    pub fn params(&self) -> &NbaParams<T> {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn cube(&self) -> &HsiCube<T> {
        &self.y
    }

    pub fn guidance(&self) -> &Guidance<T> {
        &self.guidance
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn adam(&self) -> &AdamState<T> {
        &self.adam
    }

    /// Outputs at the current parameters.
    pub fn outputs(&self) -> Result<NbaOutputs<T>> {
        nba_forward(&self.y, &self.params)
    }

    /// Forward pass at the current parameters, kept for a later
    /// [`Trainer::update`].
    pub fn forward(&self) -> Result<Forward<T>> {
        let mut graph = Graph::new();
        let vars = self.params.bind(&mut graph);
        let nodes = nba_graph(&mut graph, &self.y, &vars)?;
        Ok(Forward { graph, vars, nodes, epoch: self.epoch, height: self.y.height(), width: self.y.width() })
    }

    /// Loss → backward → ADAM on a forward pass taken at the current
    /// parameters. On a non-finite loss or gradient the parameters are
    /// left at their last good values.
    pub fn update(&mut self, fwd: Forward<T>, aug: Option<&AugTerms<T>>) -> Result<EpochRecord> {
        if fwd.epoch != self.epoch {
            return Err(Error::Contract(format!(
                "forward pass from epoch {} used at epoch {}",
                fwd.epoch, self.epoch
            )));
        }
        let Forward { graph: mut g, vars, nodes, .. } = fwd;
        let y = g.constant(self.y.to_flat().into_dyn());
        let loss = composite_loss(&mut g, y, &nodes, &self.guidance, &self.weights, aug)?;
        let scalar = |v: Var| g.value(v).iter().next().copied().unwrap_or_else(T::zero).as_f64();
        let (l_e, l_a, l_bu, total) = (scalar(loss.l_e), scalar(loss.l_a), scalar(loss.l_bu), scalar(loss.total));
        if !total.is_finite() {
            return Err(Error::NonFinite { what: "loss".into(), epoch: self.epoch });
        }
        let scores = match &self.truth {
            Some((te, ta)) => {
                let out = nodes.outputs(&g, self.y.height(), self.y.width())?;
                Some(score(te, ta, &out.endmembers, &out.abundances)?)
            }
            None => None,
        };
        g.backward(loss.total)?;
        let grads = vars.grads(&g);
        let grad_refs: Vec<&Tensor<T>> = grads.named().into_iter().map(|(_, t)| t).collect();
        let mut leaves = self.params.leaves_mut();
        self.adam.update(&mut leaves, &grad_refs, &self.names).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { what, epoch: self.epoch },
            other => other,
        })?;
        let rec = EpochRecord { epoch: self.epoch, l_e, l_a, l_bu, total, scores };
        self.epoch += 1;
        Ok(rec)
    }

    /// One full epoch.
    pub fn step(&mut self, aug: Option<&AugTerms<T>>) -> Result<EpochRecord> {
        let fwd = self.forward()?;
        self.update(fwd, aug)
    }

    /// Runs `epochs` epochs with fixed (or no) augmented terms.
    pub fn train(&mut self, epochs: usize, aug: Option<&AugTerms<T>>) -> Result<Vec<EpochRecord>> {
        let mut trace = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let rec = self.step(aug)?;
            if rec.epoch % 100 == 0 {
                log::debug!("epoch {} total {:.6e}", rec.epoch, rec.total);
            }
            trace.push(rec);
        }
        Ok(trace)
    }
}

/// Writes a per-epoch trace as CSV.
pub fn write_trace<W: std::io::Write>(mut w: W, trace: &[EpochRecord]) -> Result<()> {
    let with_scores = trace.iter().any(|r| r.scores.is_some());
    write!(w, "epoch,L_E,L_A,L_BU,total")?;
    if with_scores {
        write!(w, ",RMSE,AAD,SAD")?;
    }
    writeln!(w)?;
    for r in trace {
        write!(w, "{},{:e},{:e},{:e},{:e}", r.epoch, r.l_e, r.l_a, r.l_bu, r.total)?;
        if with_scores {
            match &r.scores {
                Some(s) => write!(w, ",{:e},{:e},{:e}", s.rmse, s.aad, s.sad_mean)?,
                None => write!(w, ",,,")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}
