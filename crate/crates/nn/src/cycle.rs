//! Cycle training of a pair of tree mappers.
//!
//! `M: A → B` and `N: B → A` are independently parameterised
//! [`TreeMapper`]s. Per sample:
//!
//! ```text
//! L_run(M, D_B, A, B) = (D_B(M(a)) - 1)² + λ ‖M(a) - b‖²
//! L_run(N, D_A, B, A) = (D_A(N(b)) - 1)² + λ ‖N(b) - a‖²
//! L_cyc(M, N)         = ‖N(M(a)) - a‖₁ + ‖M(N(b)) - b‖₁
//! L                   = L_run(M) + L_run(N) + α L_cyc
//! ```
//!
//! The adversarial terms are least-squares GAN losses; the discriminators
//! see the mean of a tree's node vectors and are updated in a separate step.
//! Batch losses are means over samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::Mlp;
use crate::error::NnError;
use crate::graph::{Graph, Var};
use crate::params::{Adam, AdamConfig, ParamGrads, ParamId, ParamStore};
use crate::tensor::{Scalar, Shape, Tensor};
use crate::tree::{TreeMapper, TreeMapperConfig, TreeShape};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CycleConfig {
    /// Weight of the cycle-consistency loss.
    pub alpha: f64,
    /// Weight of the squared-error prediction term inside each `L_run`.
    pub l2_weight: f64,
    /// Extra squared-error weight on the focus node, when a sample has one.
    pub focus_weight: f64,
    /// Least-squares adversarial terms; off means pure L2 regression.
    pub adversarial: bool,
    /// Off trains `M` alone as a plain encoder-decoder regressor.
    pub cycle: bool,
    pub disc_hidden: usize,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            l2_weight: 1.0,
            focus_weight: 0.0,
            adversarial: true,
            cycle: true,
            disc_hidden: 16,
        }
    }
}

/// A paired training example on one shared tree shape.
#[derive(Debug, Clone)]
pub struct CycleSample<T: Scalar> {
    pub shape: TreeShape,
    pub a: Vec<Vec<T>>,
    pub b: Vec<Vec<T>>,
    /// Nodes whose prediction error counts in the L2 terms; `None` means all.
    pub mask: Option<Vec<bool>>,
    pub focus: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub run_m: Var,
    pub run_n: Var,
    pub cyc: Var,
    pub total: Var,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub run_m: f64,
    pub run_n: f64,
    pub cyc: f64,
    pub total: f64,
}

pub struct CycleModel<T: Scalar> {
    pub mapper: TreeMapperConfig,
    pub cfg: CycleConfig,
    pub m: TreeMapper,
    pub n: TreeMapper,
    pub d_a: Mlp,
    pub d_b: Mlp,
    pub store: ParamStore<T>,
    disc_start: usize,
}

impl<T: Scalar> CycleModel<T> {
    pub fn new(mapper: TreeMapperConfig, cfg: CycleConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let m = TreeMapper::new(&mut store, "M", mapper, &mut rng);
        let n = TreeMapper::new(&mut store, "N", mapper, &mut rng);
        let disc_start = store.len();
        let d_a = Mlp::new(&mut store, "D_A", mapper.input, cfg.disc_hidden, &mut rng);
        let d_b = Mlp::new(&mut store, "D_B", mapper.input, cfg.disc_hidden, &mut rng);
        // Start both maps at the identity so early training refines rather than rebuilds.
        if mapper.residual {
            m.zero_output(&mut store);
            n.zero_output(&mut store);
        }
        Self {
            mapper,
            cfg,
            m,
            n,
            d_a,
            d_b,
            store,
            disc_start,
        }
    }

    fn is_generator(&self, id: ParamId) -> bool {
        id.index() < self.disc_start
    }

    fn stack(g: &mut Graph<T>, rows: &[Vec<T>]) -> Var {
        let cols = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        g.constant(Tensor::new(Shape::new(rows.len(), cols), data))
    }

    fn pool(g: &mut Graph<T>, m: Var) -> Result<Var, NnError> {
        let n = g.shape(m).rows;
        let s = g.sum_rows(m)?;
        g.scale(s, T::lit(1.0 / n as f64))
    }

    fn squared_error(
        &self,
        g: &mut Graph<T>,
        pred: Var,
        target: Var,
        sample: &CycleSample<T>,
    ) -> Result<Var, NnError> {
        let mut diff = g.sub(pred, target)?;
        if let Some(mask) = &sample.mask {
            let cols = g.shape(pred).cols;
            let data = mask
                .iter()
                .flat_map(|&m| std::iter::repeat_n(if m { T::one() } else { T::zero() }, cols))
                .collect();
            let mv = g.constant(Tensor::new(g.shape(pred), data));
            diff = g.mul(diff, mv)?;
        }
        let sq = g.mul(diff, diff)?;
        let mut err = g.sum(sq)?;
        if let (Some(f), true) = (sample.focus, self.cfg.focus_weight > 0.0) {
            let picked = g.slice_rows(diff, f, 1)?;
            let fsq = g.mul(picked, picked)?;
            let fsum = g.sum(fsq)?;
            let fw = g.scale(fsum, T::lit(self.cfg.focus_weight))?;
            err = g.add(err, fw)?;
        }
        g.scale(err, T::lit(self.cfg.l2_weight))
    }

    fn run_loss(
        &self,
        g: &mut Graph<T>,
        disc: &Mlp,
        pred: Var,
        target: Var,
        sample: &CycleSample<T>,
    ) -> Result<Var, NnError> {
        let l2 = self.squared_error(g, pred, target, sample)?;
        if !self.cfg.adversarial {
            return Ok(l2);
        }
        let pooled = Self::pool(g, pred)?;
        let score = disc.forward(g, &self.store, pooled)?;
        let off = g.add_scalar(score, -T::one())?;
        let adv = g.mul(off, off)?;
        let adv = g.sum(adv)?;
        g.add(adv, l2)
    }

    fn map_rows(
        &self,
        g: &mut Graph<T>,
        mapper: &TreeMapper,
        shape: &TreeShape,
        m: Var,
    ) -> Result<Var, NnError> {
        let rows = (0..shape.len())
            .map(|i| g.slice_rows(m, i, 1))
            .collect::<Result<Vec<_>, _>>()?;
        let out = mapper.forward(g, &self.store, shape, &rows)?;
        g.stack_rows(&out)
    }

    fn map_inputs(
        &self,
        g: &mut Graph<T>,
        mapper: &TreeMapper,
        shape: &TreeShape,
        rows: &[Vec<T>],
    ) -> Result<Var, NnError> {
        let inputs: Vec<Var> = rows.iter().map(|r| g.row(r)).collect();
        let out = mapper.forward(g, &self.store, shape, &inputs)?;
        g.stack_rows(&out)
    }

    /// Records all four losses for one sample. Returns the loss handles and
    /// the (still attached) predictions `M(a)` and `N(b)`.
    pub fn sample_losses(
        &self,
        g: &mut Graph<T>,
        s: &CycleSample<T>,
    ) -> Result<(LossVars, Var, Var), NnError> {
        if s.a.len() != s.shape.len() || s.b.len() != s.shape.len() {
            return Err(NnError::ShapeMismatch {
                op: "cycle sample",
                left: Shape::new(s.a.len(), s.b.len()),
                right: Shape::row(s.shape.len()),
            });
        }
        let a = Self::stack(g, &s.a);
        let b = Self::stack(g, &s.b);
        let ma = self.map_inputs(g, &self.m, &s.shape, &s.a)?;
        let run_m = self.run_loss(g, &self.d_b, ma, b, s)?;
        let zero = g.constant(Tensor::scalar(T::zero()));
        if !self.cfg.cycle {
            return Ok((
                LossVars {
                    run_m,
                    run_n: zero,
                    cyc: zero,
                    total: run_m,
                },
                ma,
                ma,
            ));
        }
        let nb = self.map_inputs(g, &self.n, &s.shape, &s.b)?;
        let run_n = self.run_loss(g, &self.d_a, nb, a, s)?;
        let nma = self.map_rows(g, &self.n, &s.shape, ma)?;
        let mnb = self.map_rows(g, &self.m, &s.shape, nb)?;
        let d1 = g.sub(nma, a)?;
        let d1 = g.abs(d1)?;
        let l1a = g.sum(d1)?;
        let d2 = g.sub(mnb, b)?;
        let d2 = g.abs(d2)?;
        let l1b = g.sum(d2)?;
        let cyc = g.add(l1a, l1b)?;
        let runs = g.add(run_m, run_n)?;
        let weighted = g.scale(cyc, T::lit(self.cfg.alpha))?;
        let total = g.add(runs, weighted)?;
        Ok((
            LossVars {
                run_m,
                run_n,
                cyc,
                total,
            },
            ma,
            nb,
        ))
    }

    /// Batch-mean losses without updating anything.
    pub fn losses(&self, batch: &[CycleSample<T>]) -> Result<LossValues, NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let mut acc = LossValues::default();
        for s in batch {
            let mut g = Graph::new();
            let (l, _, _) = self.sample_losses(&mut g, s)?;
            acc.run_m += g.value(l.run_m).item().as_f64();
            acc.run_n += g.value(l.run_n).item().as_f64();
            acc.cyc += g.value(l.cyc).item().as_f64();
            acc.total += g.value(l.total).item().as_f64();
        }
        let k = batch.len() as f64;
        Ok(LossValues {
            run_m: acc.run_m / k,
            run_n: acc.run_n / k,
            cyc: acc.cyc / k,
            total: acc.total / k,
        })
    }

    fn disc_loss(
        &self,
        g: &mut Graph<T>,
        disc: &Mlp,
        real: Var,
        fake: Var,
    ) -> Result<Var, NnError> {
        let fake = g.detach(fake);
        let pr = Self::pool(g, real)?;
        let pf = Self::pool(g, fake)?;
        let sr = disc.forward(g, &self.store, pr)?;
        let sf = disc.forward(g, &self.store, pf)?;
        let off = g.add_scalar(sr, -T::one())?;
        let lr = g.mul(off, off)?;
        let lf = g.mul(sf, sf)?;
        let l = g.add(lr, lf)?;
        g.sum(l)
    }

    /// Gradients of the generator loss and, when adversarial, the discriminator loss.
    fn sample_grads(
        &self,
        s: &CycleSample<T>,
    ) -> Result<(ParamGrads<T>, ParamGrads<T>, f64), NnError> {
        let mut g = Graph::new();
        let (l, ma, nb) = self.sample_losses(&mut g, s)?;
        let mut gen = ParamGrads::for_store(&self.store);
        g.backward(l.total).accumulate_params(&g, &mut gen);
        let mut disc = ParamGrads::for_store(&self.store);
        if self.cfg.adversarial {
            let b = Self::stack(&mut g, &s.b);
            let mut dl = self.disc_loss(&mut g, &self.d_b, b, ma)?;
            if self.cfg.cycle {
                let a = Self::stack(&mut g, &s.a);
                let da = self.disc_loss(&mut g, &self.d_a, a, nb)?;
                dl = g.add(dl, da)?;
            }
            g.backward(dl).accumulate_params(&g, &mut disc);
        }
        Ok((gen, disc, g.value(l.total).item().as_f64()))
    }

    /// One pass over `samples` in mini-batches; returns the mean total loss.
    pub fn train_epoch(
        &mut self,
        samples: &[CycleSample<T>],
        opt: &mut CycleOptimizer<T>,
        batch: usize,
    ) -> Result<f64, NnError> {
        if samples.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let mut total = 0.0;
        for chunk in samples.chunks(batch.max(1)) {
            let results: Vec<_> = {
                use rayon::prelude::*;
                let this = &*self;
                chunk.par_iter().map(|s| this.sample_grads(s)).collect()
            };
            let mut gen = ParamGrads::for_store(&self.store);
            let mut disc = ParamGrads::for_store(&self.store);
            for r in results {
                let (gs, ds, loss) = r?;
                gen.merge(&gs);
                disc.merge(&ds);
                total += loss;
            }
            let k = T::lit(1.0 / chunk.len() as f64);
            gen.scale(k);
            disc.scale(k);
            let gen = self.filter(gen, true);
            let disc = self.filter(disc, false);
            opt.gen.step(&mut self.store, &gen);
            if self.cfg.adversarial {
                opt.disc.step(&mut self.store, &disc);
            }
        }
        Ok(total / samples.len() as f64)
    }

    fn filter(&self, grads: ParamGrads<T>, generator: bool) -> ParamGrads<T> {
        let mut out = ParamGrads::for_store(&self.store);
        for id in self.store.ids() {
            if self.is_generator(id) == generator {
                if let Some(g) = grads.get(id) {
                    out.add(id, g);
                }
            }
        }
        out
    }

    /// Forward map `M` on one tree.
    pub fn predict(&self, shape: &TreeShape, inputs: &[Vec<T>]) -> Result<Vec<Vec<T>>, NnError> {
        let mut g = Graph::new();
        let out = self.map_inputs(&mut g, &self.m, shape, inputs)?;
        let v = g.value(out);
        Ok((0..shape.len()).map(|r| v.row_slice(r).to_vec()).collect())
    }

    pub fn hyperparameters(&self) -> serde_json::Value {
        serde_json::json!({ "mapper": self.mapper, "cycle": self.cfg })
    }

    pub fn save(&self, dir: &std::path::Path, name: &str) -> Result<(), NnError> {
        self.store.save(dir, name, self.hyperparameters())
    }

    pub fn load(dir: &std::path::Path, name: &str) -> Result<Self, NnError> {
        let (store, hyper) = ParamStore::load(dir, name)?;
        let mapper: TreeMapperConfig = serde_json::from_value(hyper["mapper"].clone())?;
        let cfg: CycleConfig = serde_json::from_value(hyper["cycle"].clone())?;
        let mut model = Self::new(mapper, cfg, 0);
        if model.store.len() != store.len() {
            return Err(NnError::Checkpoint(
                "parameter count does not match architecture".into(),
            ));
        }
        for id in store.ids() {
            if store.get(id).shape() != model.store.get(id).shape() {
                return Err(NnError::Checkpoint(format!(
                    "shape mismatch for {}",
                    store.name(id)
                )));
            }
        }
        model.store = store;
        Ok(model)
    }
}

pub struct CycleOptimizer<T: Scalar> {
    gen: Adam<T>,
    disc: Adam<T>,
}

impl<T: Scalar> CycleOptimizer<T> {
    pub fn new(model: &CycleModel<T>, cfg: AdamConfig) -> Self {
        Self {
            gen: Adam::new(&model.store, cfg),
            disc: Adam::new(&model.store, cfg),
        }
    }
}
