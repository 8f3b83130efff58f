use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Frozen parameters enter the tape as constants and are skipped by optimizers.
    pub trainable: bool,
}

/// Owned collection of named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    /// Number of scalars across all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn trainable_numel(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// All values concatenated in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }
}

/// Lazily binds parameters of one [`ParamSet`] into a tape, one leaf per
/// parameter per tape.
pub struct Binding<'a> {
    set: &'a ParamSet,
    vars: Vec<Option<Var>>,
    frozen: bool,
}

impl<'a> Binding<'a> {
    pub fn new(set: &'a ParamSet) -> Self {
        Self {
            set,
            vars: vec![None; set.len()],
            frozen: false,
        }
    }

    /// Binds every parameter as a constant, whatever its trainable flag.
    pub fn frozen(set: &'a ParamSet) -> Self {
        Self {
            frozen: true,
            ..Self::new(set)
        }
    }

    pub fn set(&self) -> &'a ParamSet {
        self.set
    }

    pub fn var(&mut self, tape: &mut Tape, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let p = self.set.get(id);
        let v = tape.leaf(p.value.clone(), p.trainable && !self.frozen);
        self.vars[id.0] = Some(v);
        v
    }

    /// Whether the parameter was used by the recorded computation.
    pub fn is_bound(&self, id: ParamId) -> bool {
        self.vars[id.0].is_some()
    }

    /// One gradient per parameter; zeros for parameters that were never
    /// bound or that the loss does not reach.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.set
            .iter()
            .map(|(id, p)| match self.vars[id.0] {
                Some(v) => grads.wrt(v),
                None => Tensor::zeros(p.value.shape()),
            })
            .collect()
    }
}
