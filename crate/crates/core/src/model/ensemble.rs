use super::{infer, ModelConfig};
use crate::error::{shape_err, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// An element of the dihedral group of the square: optional horizontal
/// flip followed by `rot` counter-clockwise quarter turns.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct Dihedral {
    pub rot: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { rot: 0, flip: false };

    pub fn all() -> [Dihedral; 8] {
        let mut out = [Dihedral::IDENTITY; 8];
        for (i, d) in out.iter_mut().enumerate() {
            *d = Dihedral { rot: (i % 4) as u8, flip: i >= 4 };
        }
        out
    }

    pub fn swaps_axes(self) -> bool {
        self.rot % 2 == 1
    }

    pub fn apply<T: Scalar>(self, t: &Tensor<T>) -> Tensor<T> {
        let mut cur = if self.flip { hflip(t) } else { t.clone() };
        for _ in 0..self.rot % 4 {
            cur = rot90(&cur);
        }
        cur
    }

    pub fn invert<T: Scalar>(self, t: &Tensor<T>) -> Tensor<T> {
        let mut cur = t.clone();
        for _ in 0..(4 - self.rot % 4) % 4 {
            cur = rot90(&cur);
        }
        if self.flip {
            hflip(&cur)
        } else {
            cur
        }
    }
}

fn hflip<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    Tensor::from_fn(s, |n, c, y, x| t.at(n, c, y, s.w - 1 - x))
}

/// Quarter turn counter-clockwise: `(h, w) -> (w, h)`.
fn rot90<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, s.w, s.h), |n, c, y, x| t.at(n, c, x, s.w - 1 - y))
}

/// Pairwise sum, so that identical inputs average back to themselves exactly.
fn tree_sum<T: Scalar>(mut items: Vec<Tensor<T>>) -> Result<Tensor<T>> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a.add(&b)?),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop().map_or_else(|| shape_err("self_ensemble", "no outputs"), Ok)
}

/// Averages `model` over the eight dihedral transforms of `x`, undoing each
/// transform on the corresponding output.
pub fn self_ensemble<T: Scalar>(
    x: &Tensor<T>,
    mut model: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    let mut outs = Vec::with_capacity(8);
    for d in Dihedral::all() {
        outs.push(d.invert(&model(&d.apply(x))?));
    }
    let first = outs[0].shape();
    if let Some(bad) = outs.iter().find(|o| o.shape() != first) {
        return shape_err("self_ensemble", format!("transformed outputs disagree: {} vs {first}", bad.shape()));
    }
    Ok(tree_sum(outs)?.scale(T::of(0.125)))
}

pub fn self_ensemble_infer<T: Scalar>(cfg: &ModelConfig, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    self_ensemble(x, |t| infer(cfg, params, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_quarter_turns_are_identity() {
        let t = Tensor::<f32>::from_fn([1, 2, 3, 5], |_, c, y, x| (c * 100 + y * 10 + x) as f32);
        let mut cur = t.clone();
        for _ in 0..4 {
            cur = rot90(&cur);
        }
        assert_eq!(cur, t);
        assert_eq!(rot90(&t).shape(), Shape::new(1, 2, 5, 3));
    }

    #[test]
    fn group_elements_are_distinct() {
        let t = Tensor::<f32>::from_fn([1, 1, 3, 3], |_, _, y, x| (y * 3 + x) as f32);
        let imgs: Vec<_> = Dihedral::all().iter().map(|d| d.apply(&t)).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(imgs[i], imgs[j], "{i} vs {j}");
            }
        }
    }
}
