use super::tensor::{Param, Tensor};

/// A named storage slot exposed by a module: either a trainable parameter or a
/// non-trainable buffer such as batch-norm running statistics.
pub enum Slot<'a> {
    Param(&'a mut Param),
    Buffer(&'a mut Tensor),
}

/// Anything that owns parameters. Composite modules forward `visit` to their
/// children with a dotted prefix, which gives every tensor a stable name used
/// by optimizers and checkpoints.
pub trait Module {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn zero_grads<M: Module + ?Sized>(m: &mut M) {
    m.visit("", &mut |_, slot| {
        if let Slot::Param(p) = slot {
            p.zero_grad();
        }
    });
}

/// Number of trainable scalars.
pub fn param_count<M: Module + ?Sized>(m: &mut M) -> usize {
    let mut n = 0;
    m.visit("", &mut |_, slot| {
        if let Slot::Param(p) = slot {
            n += p.value.len();
        }
    });
    n
}

/// Snapshot of every parameter and buffer by name, in visit order.
pub fn named_tensors<M: Module + ?Sized>(m: &mut M) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, slot| {
        let t = match slot {
            Slot::Param(p) => p.value.clone(),
            Slot::Buffer(b) => b.clone(),
        };
        out.push((name.to_string(), t));
    });
    out
}

/// Snapshot of every parameter gradient by name.
pub fn named_grads<M: Module + ?Sized>(m: &mut M) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, slot| {
        if let Slot::Param(p) = slot {
            out.push((name.to_string(), p.grad.clone()));
        }
    });
    out
}
