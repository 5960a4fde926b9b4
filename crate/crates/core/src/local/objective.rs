use std::fmt;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{self, Batch, DiagCurvature, ModelSpec, ParamVector};

/// A client's data term: a sum of per-example losses over `len()` examples.
pub trait DataLoss: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Summed loss and gradient over `rows`, or over every example when `None`.
    fn value_and_grad(&self, w: &[f64], rows: Option<&[usize]>) -> Result<(f64, Vec<f64>)>;

    /// Diagonal Gauss-Newton curvature over all examples.
    fn diag_curvature(&self, w: &[f64]) -> Result<DiagCurvature>;

    /// Full Hessian when the loss can provide one cheaply.
    fn hessian(&self, w: &[f64]) -> Result<Option<Array2<f64>>>;
}

/// Cross-entropy of a model over a fixed batch.
#[derive(Clone, Debug)]
pub struct ModelLoss {
    pub spec: ModelSpec,
    pub batch: Batch,
}

impl ModelLoss {
    pub fn new(spec: ModelSpec, batch: Batch) -> Self {
        ModelLoss { spec, batch }
    }
}

impl DataLoss for ModelLoss {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn len(&self) -> usize {
        self.batch.len()
    }

    fn value_and_grad(&self, w: &[f64], rows: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let (v, g) = match rows {
            None => model::nll_and_grad(&self.spec, w, &self.batch)?,
            Some(r) => model::nll_and_grad(&self.spec, w, &self.batch.select(r))?,
        };
        Ok((v, g.into_inner()))
    }

    fn diag_curvature(&self, w: &[f64]) -> Result<DiagCurvature> {
        model::diag_ggn(&self.spec, w, self.batch.inputs.view())
    }

    fn hessian(&self, w: &[f64]) -> Result<Option<Array2<f64>>> {
        model::glm_hessian(&self.spec, w, self.batch.inputs.view(), self.batch.weights.as_deref())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// `scale * coef^T w`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearTerm {
    pub coef: Vec<f64>,
    pub scale: f64,
}

/// `1/2 (w - anchor)^T diag(metric) (w - anchor)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxTerm {
    pub anchor: Vec<f64>,
    pub metric: Vec<f64>,
}

/// Signed soft-label cross-entropy over memory inputs. The batch carries the
/// soft targets and the per-point weights `tau_i`.
#[derive(Clone, Debug)]
pub struct FuncTerm {
    pub spec: ModelSpec,
    pub batch: Batch,
    pub sign: Sign,
}

/// Composite client or server objective
///
/// `base_scale * base(w) + s a^T w - 1/2 w^T V w + 1/2 |w - anchor|^2_M
///  + 1/2 l2 |w|^2 + sum_j sign_j * CE_j(w)`.
#[derive(Clone, Debug, Default)]
pub struct ObjectiveSpec<'a> {
    pub base: Option<&'a dyn DataLoss>,
    pub base_scale: f64,
    pub linear: Option<LinearTerm>,
    /// Diagonal `V`, entering with a minus sign.
    pub quad_dual: Option<Vec<f64>>,
    pub prox: Option<ProxTerm>,
    pub l2: Option<f64>,
    pub func_terms: Vec<FuncTerm>,
}

/// Per-component objective values, used for diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ComponentValues {
    pub base: f64,
    pub linear: f64,
    pub quad_dual: f64,
    pub prox: f64,
    pub l2: f64,
    pub func: f64,
}

impl ComponentValues {
    pub fn total(&self) -> f64 {
        self.base + self.linear + self.quad_dual + self.prox + self.l2 + self.func
    }
}

impl<'a> ObjectiveSpec<'a> {
    pub fn new(base: Option<&'a dyn DataLoss>) -> Self {
        ObjectiveSpec {
            base,
            base_scale: 1.0,
            ..Default::default()
        }
    }

    pub fn with_linear(mut self, coef: Vec<f64>, scale: f64) -> Self {
        self.linear = Some(LinearTerm { coef, scale });
        self
    }

    pub fn with_quad_dual(mut self, v: Vec<f64>) -> Self {
        self.quad_dual = Some(v);
        self
    }

    pub fn with_prox(mut self, anchor: Vec<f64>, metric: Vec<f64>) -> Self {
        self.prox = Some(ProxTerm { anchor, metric });
        self
    }

    pub fn with_l2(mut self, l2: f64) -> Self {
        self.l2 = Some(l2);
        self
    }

    pub fn with_base_scale(mut self, scale: f64) -> Self {
        self.base_scale = scale;
        self
    }

    pub fn with_func_term(mut self, term: FuncTerm) -> Self {
        self.func_terms.push(term);
        self
    }

    /// Number of examples in the data term (0 without one).
    pub fn data_len(&self) -> usize {
        self.base.map_or(0, |b| b.len())
    }

    /// Checks that every component has dimension `p`.
    pub fn validate(&self, p: usize) -> Result<()> {
        let check = |name: &str, len: usize| {
            if len == p {
                Ok(())
            } else {
                Err(Error::shape(format!("{name} has dimension {len}, expected {p}")))
            }
        };
        if let Some(b) = self.base {
            check("data loss", b.dim())?;
        }
        if let Some(l) = &self.linear {
            check("linear dual", l.coef.len())?;
        }
        if let Some(v) = &self.quad_dual {
            check("quadratic dual", v.len())?;
        }
        if let Some(prox) = &self.prox {
            check("prox anchor", prox.anchor.len())?;
            check("prox metric", prox.metric.len())?;
            if prox.metric.iter().any(|&m| m < 0.0) {
                return Err(Error::config("prox metric entries must be nonnegative"));
            }
        }
        for t in &self.func_terms {
            check("function-space term", t.spec.param_count())?;
        }
        Ok(())
    }

    pub fn components(&self, w: &[f64]) -> Result<ComponentValues> {
        let mut out = ComponentValues::default();
        if let Some(b) = self.base {
            out.base = self.base_scale * b.value_and_grad(w, None)?.0;
        }
        let mut scratch = vec![0.0; w.len()];
        out.linear = self.linear_part(w, &mut scratch);
        out.quad_dual = self.quad_dual_part(w, &mut scratch);
        out.prox = self.prox_part(w, &mut scratch);
        out.l2 = self.l2_part(w, &mut scratch);
        out.func = self.func_part(w, &mut scratch)?;
        Ok(out)
    }

    fn linear_part(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let Some(l) = &self.linear else { return 0.0 };
        let mut v = 0.0;
        for ((g, &a), &x) in grad.iter_mut().zip(&l.coef).zip(w) {
            v += a * x;
            *g += l.scale * a;
        }
        l.scale * v
    }

    fn quad_dual_part(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let Some(vd) = &self.quad_dual else { return 0.0 };
        let mut v = 0.0;
        for ((g, &d), &x) in grad.iter_mut().zip(vd).zip(w) {
            v -= 0.5 * d * x * x;
            *g -= d * x;
        }
        v
    }

    fn prox_part(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let Some(p) = &self.prox else { return 0.0 };
        let mut v = 0.0;
        for (((g, &m), &a), &x) in grad.iter_mut().zip(&p.metric).zip(&p.anchor).zip(w) {
            let d = x - a;
            v += 0.5 * m * d * d;
            *g += m * d;
        }
        v
    }

    fn l2_part(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let Some(l2) = self.l2 else { return 0.0 };
        let mut v = 0.0;
        for (g, &x) in grad.iter_mut().zip(w) {
            v += 0.5 * l2 * x * x;
            *g += l2 * x;
        }
        v
    }

    fn func_part(&self, w: &[f64], grad: &mut [f64]) -> Result<f64> {
        let mut v = 0.0;
        for t in &self.func_terms {
            if t.batch.is_empty() {
                continue;
            }
            let (fv, fg) = model::nll_and_grad(&t.spec, w, &t.batch)?;
            let s = t.sign.factor();
            v += s * fv;
            for (g, x) in grad.iter_mut().zip(fg.iter()) {
                *g += s * x;
            }
        }
        Ok(v)
    }

    /// Value and gradient of every term except the data loss.
    pub fn extra_value_and_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; w.len()];
        let mut v = self.linear_part(w, &mut grad);
        v += self.quad_dual_part(w, &mut grad);
        v += self.prox_part(w, &mut grad);
        v += self.l2_part(w, &mut grad);
        v += self.func_part(w, &mut grad)?;
        Ok((v, grad))
    }

    /// Exact objective value and gradient.
    pub fn value_and_grad(&self, w: &[f64]) -> Result<(f64, ParamVector)> {
        self.step_value_and_grad(w, None, 1.0)
    }

    /// Stochastic estimate used by minibatch steps: data loss over `rows`
    /// plus `fraction` times every other term.
    pub fn step_value_and_grad(
        &self,
        w: &[f64],
        rows: Option<&[usize]>,
        fraction: f64,
    ) -> Result<(f64, ParamVector)> {
        let (mut v, mut grad) = self.extra_value_and_grad(w)?;
        if fraction != 1.0 {
            v *= fraction;
            grad.iter_mut().for_each(|g| *g *= fraction);
        }
        if let Some(b) = self.base {
            if !b.is_empty() {
                let (bv, bg) = b.value_and_grad(w, rows)?;
                v += self.base_scale * bv;
                for (g, x) in grad.iter_mut().zip(bg) {
                    *g += self.base_scale * x;
                }
            }
        }
        Ok((v, ParamVector(grad)))
    }

    /// Full Hessian, when the data loss and all function-space terms are
    /// linear models (or absent).
    pub fn hessian(&self, w: &[f64]) -> Result<Option<Array2<f64>>> {
        let p = w.len();
        let mut h = match self.base {
            Some(b) if !b.is_empty() => match b.hessian(w)? {
                Some(h) => h * self.base_scale,
                None => return Ok(None),
            },
            _ => Array2::zeros((p, p)),
        };
        for t in &self.func_terms {
            if t.batch.is_empty() {
                continue;
            }
            match model::glm_hessian(&t.spec, w, t.batch.inputs.view(), t.batch.weights.as_deref())? {
                Some(fh) => h.scaled_add(t.sign.factor(), &fh),
                None => return Ok(None),
            }
        }
        for j in 0..p {
            if let Some(v) = &self.quad_dual {
                h[[j, j]] -= v[j];
            }
            if let Some(prox) = &self.prox {
                h[[j, j]] += prox.metric[j];
            }
            if let Some(l2) = self.l2 {
                h[[j, j]] += l2;
            }
        }
        Ok(Some(h))
    }
}
