//! Least-squares objective `f(x) = 1/2 ||F(x) - T||_F^2` with matrix-free
//! Jacobian and Hessian actions.

use nalgebra::DVector;

use crate::kernels::{self, Expanded, Structure};
use crate::model::{BlockTermModel, ModelError};
use crate::tensor::DenseTensor;

/// Model, target and cached residual `Z = F(x) - T` for the current parameters.
#[derive(Clone, Debug)]
pub struct ResidualState {
    structure: Structure,
    model: BlockTermModel,
    blocks: Vec<Expanded>,
    target: DenseTensor,
    residual: DenseTensor,
    params: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianMode {
    GaussNewton,
    Full,
}

impl ResidualState {
    pub fn new(model: BlockTermModel, target: DenseTensor) -> Result<Self, ModelError> {
        if model.dims() != target.dims() {
            return Err(ModelError::Inconsistent(format!(
                "model shape {:?} does not match target {:?}",
                model.dims(),
                target.dims()
            )));
        }
        let structure = Structure::of(&model);
        let blocks = model.expanded_blocks();
        let params = model.pack().data;
        let residual = kernels::reconstruct_sum(&blocks, model.dims())
            .sub(&target)
            .expect("shapes checked");
        Ok(Self {
            structure,
            model,
            blocks,
            target,
            residual,
            params,
        })
    }

    /// Replaces the free parameters and refreshes the residual.
    pub fn set_params(&mut self, x: &DVector<f64>) -> Result<(), ModelError> {
        self.model.assign(x.as_slice())?;
        self.params.copy_from(x);
        self.refresh();
        Ok(())
    }

    /// Replaces the whole model (same layout) and refreshes the residual.
    pub fn set_model(&mut self, model: BlockTermModel) -> Result<(), ModelError> {
        if model.layout() != self.model.layout() {
            return Err(ModelError::Inconsistent("model layout changed".into()));
        }
        self.params = model.pack().data;
        self.model = model;
        self.refresh();
        Ok(())
    }

    fn refresh(&mut self) {
        self.blocks = self.model.expanded_blocks();
        let mut z = kernels::reconstruct_sum(&self.blocks, self.model.dims());
        z.axpy(-1.0, &self.target).expect("same shape");
        self.residual = z;
    }

    pub fn model(&self) -> &BlockTermModel {
        &self.model
    }

    pub fn target(&self) -> &DenseTensor {
        &self.target
    }

    pub fn residual(&self) -> &DenseTensor {
        &self.residual
    }

    pub fn params(&self) -> &DVector<f64> {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.structure.n_params
    }

    pub fn objective(&self) -> f64 {
        0.5 * self.residual.data().iter().map(|v| v * v).sum::<f64>()
    }

    /// `||F - T|| / ||T||`.
    pub fn relative_residual(&self) -> f64 {
        let t = self.target.frobenius_norm();
        let z = self.residual.frobenius_norm();
        if t > 0.0 {
            z / t
        } else {
            z
        }
    }

    pub fn gradient(&self) -> DVector<f64> {
        let g = kernels::adjoint_all(&self.structure, &self.blocks, &self.residual);
        DVector::from_vec(self.structure.reduce(&g))
    }

    /// `J v` as a flat vector of length `prod(n_k)` in column-major order.
    pub fn jacobian_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.n_params(), "parameter vector length");
        let tangents = self.structure.expand(v.as_slice());
        let t = kernels::jacobian_tensor(&self.blocks, &tangents, self.model.dims());
        DVector::from_vec(t.into_data())
    }

    /// `J^T w` for `w` of length `prod(n_k)`.
    pub fn jacobian_adjoint_apply(&self, w: &DVector<f64>) -> DVector<f64> {
        let y = DenseTensor::new(self.model.dims().to_vec(), w.as_slice().to_vec())
            .expect("w must have the target's length");
        let g = kernels::adjoint_all(&self.structure, &self.blocks, &y);
        DVector::from_vec(self.structure.reduce(&g))
    }

    pub fn gauss_newton_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.n_params(), "parameter vector length");
        let tangents = self.structure.expand(v.as_slice());
        let g = kernels::gauss_newton_expanded(&self.structure, &self.blocks, &tangents);
        DVector::from_vec(self.structure.reduce(&g))
    }

    /// Residual-weighted second-order part `Q v` of the Hessian.
    pub fn residual_curvature_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.n_params(), "parameter vector length");
        let tangents = self.structure.expand(v.as_slice());
        let g = kernels::residual_curvature_expanded(
            &self.structure,
            &self.blocks,
            &tangents,
            &self.residual,
        );
        DVector::from_vec(self.structure.reduce(&g))
    }

    pub fn hessian(&self, mode: HessianMode) -> HessianOperator<'_> {
        HessianOperator { state: self, mode }
    }
}

/// Matrix-free Hessian of the objective at a fixed state.
#[derive(Clone, Copy, Debug)]
pub struct HessianOperator<'a> {
    state: &'a ResidualState,
    mode: HessianMode,
}

impl<'a> HessianOperator<'a> {
    pub fn new(state: &'a ResidualState, mode: HessianMode) -> Self {
        Self { state, mode }
    }

    pub fn mode(&self) -> HessianMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.state.n_params()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut hv = self.state.gauss_newton_apply(v);
        if self.mode == HessianMode::Full {
            hv += self.state.residual_curvature_apply(v);
        }
        hv
    }
}

pub fn objective(state: &ResidualState) -> f64 {
    state.objective()
}

pub fn gradient(state: &ResidualState) -> DVector<f64> {
    state.gradient()
}

pub fn hessian_apply(op: &HessianOperator<'_>, v: &DVector<f64>) -> DVector<f64> {
    op.apply(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_random;

    #[test]
    fn exact_model_has_zero_objective_and_gradient() {
        let t = BlockTermModel::new(&[4, 3, 3], 2, &[vec![2, 2, 2]], &[2, 1]).unwrap();
        let truth = init_random(&t, 5, 1.0);
        let target = truth.reconstruct();
        let s = ResidualState::new(truth, target).unwrap();
        assert!(s.objective() < 1e-24);
        assert!(s.gradient().norm() < 1e-10);
    }

    #[test]
    fn zero_model_objective_is_half_squared_norm() {
        let t = BlockTermModel::new(&[4, 3, 3], 2, &[], &[2]).unwrap();
        let target = init_random(
            &BlockTermModel::new(&[4, 3, 3], 2, &[], &[1]).unwrap(),
            2,
            1.0,
        )
        .reconstruct();
        let s = ResidualState::new(t, target.clone()).unwrap();
        assert!((s.objective() - 0.5 * target.frobenius_norm().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_elementwise_loop() {
        let t = BlockTermModel::new(&[3, 4, 2], 1, &[vec![2, 1, 2]], &[2]).unwrap();
        let m = init_random(&t, 9, 1.0);
        let target = init_random(&t, 10, 1.0).reconstruct();
        let f = m.reconstruct();
        let mut acc = 0.0;
        for i in 0..f.len() {
            acc += (f.data()[i] - target.data()[i]).powi(2);
        }
        let s = ResidualState::new(m, target).unwrap();
        assert!((s.objective() - 0.5 * acc).abs() < 1e-10 * acc.max(1.0));
    }

    #[test]
    fn zero_direction_maps_to_zero() {
        let t = BlockTermModel::new(&[3, 3, 2], 2, &[vec![2, 2, 2]], &[2]).unwrap();
        let m = init_random(&t, 1, 1.0);
        let s = ResidualState::new(m.clone(), m.reconstruct()).unwrap();
        let z = DVector::zeros(s.n_params());
        assert_eq!(s.jacobian_apply(&z).norm(), 0.0);
        assert_eq!(s.hessian(HessianMode::Full).apply(&z).norm(), 0.0);
    }
}
