use candle_core::backprop::GradStore;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use super::schedule::annealed_lr;
use crate::error::{config, Result};
use crate::nets::{Component, ComponentBundle};

/// Adam settings shared by every component group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimHyper {
    pub lr: f64,
    pub decay: f64,
    /// Decay used instead of `decay` for the generator and the imputation discriminator.
    pub fast_decay: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimHyper {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            decay: 10.0,
            fast_decay: None,
            beta1: 0.8,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Group {
    component: Component,
    opt: AdamW,
    decay: f64,
}

/// One Adam optimiser per component so each follows its own annealing.
pub struct OptimizerSet {
    groups: Vec<Group>,
    hyper: OptimHyper,
}

impl OptimizerSet {
    pub fn new(bundle: &ComponentBundle, components: &[Component], hyper: OptimHyper) -> Result<Self> {
        if !(hyper.lr >= 0.0) || !(0.0..1.0).contains(&hyper.beta1) || !(0.0..1.0).contains(&hyper.beta2) {
            return config(format!("invalid optimiser settings {hyper:?}"));
        }
        let mut groups = Vec::new();
        for &c in components {
            let vars = bundle.vars(c);
            if vars.is_empty() {
                continue;
            }
            let decay = match (c, hyper.fast_decay) {
                (Component::R | Component::D2, Some(fast)) => fast,
                _ => hyper.decay,
            };
            let opt = AdamW::new(
                vars,
                ParamsAdamW {
                    lr: hyper.lr,
                    beta1: hyper.beta1,
                    beta2: hyper.beta2,
                    eps: hyper.eps,
                    weight_decay: 0.0,
                },
            )?;
            groups.push(Group { component: c, opt, decay });
        }
        Ok(Self { groups, hyper })
    }

    pub fn components(&self) -> Vec<Component> {
        self.groups.iter().map(|g| g.component).collect()
    }

    /// Anneals every group's rate to progress `p`, then applies `grads`.
    pub fn step(&mut self, grads: &GradStore, p: f64) -> Result<()> {
        for g in &mut self.groups {
            g.opt.set_learning_rate(annealed_lr(self.hyper.lr, g.decay, p));
            g.opt.step(grads)?;
        }
        Ok(())
    }

    pub fn learning_rate(&self, c: Component) -> Option<f64> {
        self.groups.iter().find(|g| g.component == c).map(|g| g.opt.learning_rate())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_horizontal_patch_mask, ImageShape, InputLayout};
    use crate::nets::ArchitectureSpec;
    use candle_core::{DType, Device, Tensor};

    fn bundle() -> ComponentBundle {
        let shape = ImageShape::new(1, 4, 2);
        let mask = make_horizontal_patch_mask(shape, 0.5).unwrap();
        ComponentBundle::new(
            ArchitectureSpec::mlp_tabular(InputLayout::Image(shape), mask, 2),
            0,
            DType::F64,
            &Device::Cpu,
        )
        .unwrap()
    }

    fn loss(b: &ComponentBundle) -> Tensor {
        let x = Tensor::ones((3, 4), DType::F64, &Device::Cpu).unwrap();
        b.g1_forward(&x).unwrap().sum_all().unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let b = bundle();
        let before = b.snapshot().unwrap();
        let mut opt = OptimizerSet::new(&b, &Component::ALL, OptimHyper { lr: 0.0, ..Default::default() }).unwrap();
        opt.step(&loss(&b).backward().unwrap(), 0.0).unwrap();
        assert_eq!(b.snapshot().unwrap(), before);
    }

    #[test]
    fn only_listed_components_move() {
        let b = bundle();
        let before = b.snapshot().unwrap();
        let mut opt = OptimizerSet::new(&b, &[Component::F], OptimHyper::default()).unwrap();
        opt.step(&loss(&b).backward().unwrap(), 0.0).unwrap();
        assert_eq!(b.snapshot().unwrap(), before);
        let mut opt = OptimizerSet::new(&b, &[Component::G1], OptimHyper::default()).unwrap();
        opt.step(&loss(&b).backward().unwrap(), 0.0).unwrap();
        let after = b.snapshot().unwrap();
        for ((name, a), (_, c)) in after.iter().zip(&before) {
            assert_eq!(name.starts_with("g1."), a != c, "{name}");
        }
    }

    #[test]
    fn fast_decay_applies_to_generator_and_imputation_discriminator() {
        let b = bundle();
        let hyper = OptimHyper { fast_decay: Some(30.0), ..Default::default() };
        let mut opt = OptimizerSet::new(&b, &Component::ALL, hyper).unwrap();
        opt.step(&loss(&b).backward().unwrap(), 1.0).unwrap();
        let slow = 0.01 / 11f64.powf(0.75);
        let fast = 0.01 / 31f64.powf(0.75);
        assert!((opt.learning_rate(Component::G1).unwrap() - slow).abs() < 1e-15);
        assert!((opt.learning_rate(Component::R).unwrap() - fast).abs() < 1e-15);
        assert!((opt.learning_rate(Component::D2).unwrap() - fast).abs() < 1e-15);
    }
}
