use std::collections::BTreeMap;
use std::rc::Rc;

use super::{Graph, Result, Tensor, TensorError, Value};

/// Learnable tensors keyed by dot-separated path, iterated in path order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    params: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a parameter; paths must be unique.
    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) {
        let path = path.into();
        let prev = self.params.insert(path.clone(), value);
        assert!(prev.is_none(), "duplicate parameter path `{path}`");
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.params
            .get(path)
            .ok_or_else(|| TensorError::UnknownParameter(path.to_string()))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(path)
            .ok_or_else(|| TensorError::UnknownParameter(path.to_string()))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar elements.
    pub fn num_elements(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Creates one gradient-tracking leaf per parameter in `graph`.
    pub fn bind(&self, graph: &Graph) -> BoundParams {
        BoundParams {
            values: Rc::new(
                self.params
                    .iter()
                    .map(|(k, v)| (k.clone(), graph.param(v.clone())))
                    .collect(),
            ),
        }
    }
}

/// Parameters bound into a particular graph.
#[derive(Clone)]
pub struct BoundParams {
    values: Rc<BTreeMap<String, Value>>,
}

impl BoundParams {
    pub fn get(&self, path: &str) -> Result<&Value> {
        self.values
            .get(path)
            .ok_or_else(|| TensorError::UnknownParameter(path.to_string()))
    }

    /// Gradients accumulated by backward; parameters that the root did not
    /// depend on get zeros.
    pub fn gradients(&self) -> Gradients {
        Gradients {
            grads: self
                .values
                .iter()
                .map(|(k, v)| {
                    let g = v.grad().unwrap_or_else(|| vec![0.0; v.tensor().len()]);
                    (k.clone(), g)
                })
                .collect(),
        }
    }
}

/// Flat gradients keyed like the [`ParameterSet`] they came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        Self {
            grads: params
                .iter()
                .map(|(k, v)| (k.clone(), vec![0.0; v.len()]))
                .collect(),
        }
    }

    /// Gradients with the given values, keyed like `values`.
    pub fn from_params(values: &ParameterSet) -> Self {
        Self {
            grads: values
                .iter()
                .map(|(k, v)| (k.clone(), v.data().to_vec()))
                .collect(),
        }
    }

    pub fn get(&self, path: &str) -> Option<&[f64]> {
        self.grads.get(path).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.grads.iter()
    }

    /// `self += other * factor`, path by path.
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (k, g) in &other.grads {
            let acc = self
                .grads
                .entry(k.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b * factor);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.grads
            .values_mut()
            .flat_map(|g| g.iter_mut())
            .for_each(|v| *v *= factor);
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter path and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares backward gradients against central differences for every
/// element of every parameter. The relative error of one element is
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
///
/// `f` must build a deterministic scalar from the bound parameters.
pub fn grad_check<F, E>(params: &ParameterSet, eps: f64, mut f: F) -> Result<GradCheckReport, E>
where
    F: FnMut(&Graph, &BoundParams) -> Result<Value, E>,
    E: From<TensorError>,
{
    let non_finite = |what: &str| E::from(TensorError::NumericFailure(what.to_string()));

    let graph = Graph::new();
    let bound = params.bind(&graph);
    let root = f(&graph, &bound)?;
    if !root.item().is_finite() {
        return Err(non_finite("objective is not finite"));
    }
    root.backward()?;
    let analytic = bound.gradients();

    // Later evaluations reuse the bound leaves: the graph is cut back to them
    // and only the perturbed element is rewritten.
    let leaves = graph.len();
    let mut eval = |value: &Value, idx: usize, x: f64| -> Result<f64, E> {
        graph.truncate(leaves);
        graph.set_leaf_element(value.id, idx, x);
        let v = f(&graph, &bound)?.item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(non_finite("objective is not finite under perturbation"))
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (path, tensor) in params.iter() {
        let value = bound.get(path)?.clone();
        let grads = analytic.get(path).expect("bound from the same set");
        for (idx, &a) in grads.iter().enumerate() {
            if !a.is_finite() {
                return Err(non_finite("analytic gradient is not finite"));
            }
            let orig = tensor.data()[idx];
            let plus = eval(&value, idx, orig + eps)?;
            let minus = eval(&value, idx, orig - eps)?;
            graph.set_leaf_element(value.id, idx, orig);

            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((path.clone(), idx));
                }
            }
        }
    }
    Ok(report)
}
