use std::rc::Rc;

use super::{prefixed, Ctx, Layer, ParamVisitor, Value};
use crate::error::{Error, Result};
use crate::reversible::{Bijector, Chain};
use crate::tensor::Var;

/// Composition of layers applied in list order.
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

pub fn sequential(layers: Vec<Box<dyn Layer>>) -> Result<Sequential> {
    Sequential::new(layers)
}

impl Sequential {
    pub fn new(mut layers: Vec<Box<dyn Layer>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("sequential needs at least one layer".into()));
        }
        let mut next = 0;
        for l in &mut layers {
            next = l.set_layer_index(next);
        }
        Ok(Sequential { layers })
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer>] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Layer for Sequential {
    fn name(&self) -> &str {
        "sequential"
    }

    fn call(&mut self, input: Value, ctx: &mut Ctx) -> Result<Value> {
        let mut v = input;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            v = layer.call(v, ctx).map_err(|e| e.in_layer(i, layer.name()))?;
        }
        Ok(v)
    }

    fn losses(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| l.losses()).collect()
    }

    fn visit_parameters(&mut self, visitor: &mut ParamVisitor<'_>) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let prefix = i.to_string();
            layer.visit_parameters(&mut prefixed(&prefix, visitor));
        }
    }

    fn set_layer_index(&mut self, index: u64) -> u64 {
        self.layers.iter_mut().fold(index, |i, l| l.set_layer_index(i))
    }

    fn bijector(&self) -> Option<Rc<dyn Bijector>> {
        let parts = self.layers.iter().map(|l| l.bijector()).collect::<Option<Vec<_>>>()?;
        Some(Rc::new(Chain(parts)))
    }

    fn reverse(&mut self, input: Value, ctx: &mut Ctx) -> Result<Value> {
        let mut v = input;
        let n = self.layers.len();
        for (j, layer) in self.layers.iter_mut().rev().enumerate() {
            let i = n - 1 - j;
            v = layer.reverse(v, ctx).map_err(|e| e.in_layer(i, layer.name()))?;
        }
        Ok(v)
    }

    fn log_det_jacobian(&mut self, x: &Var, ctx: &mut Ctx) -> Result<Var> {
        let mut total: Option<Var> = None;
        let mut v = Value::Tensor(x.clone());
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let ldj = layer
                .log_det_jacobian(v.tensor(), ctx)
                .map_err(|e| e.in_layer(i, layer.name()))?;
            total = Some(match total {
                None => ldj,
                Some(t) => t.add(&ldj)?,
            });
            v = layer.call(v, ctx).map_err(|e| e.in_layer(i, layer.name()))?;
        }
        Ok(total.expect("non-empty"))
    }
}
