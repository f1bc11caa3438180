//! Per-level feature fields and the kernels they induce.
//!
//! Level `l` carries the kernel `K(x, y) = <phi(x), phi(y)> * K_b(x, y)` where
//! `K_b` is the separable B-spline kernel at the level width and `phi` is
//! either a constant vector or an MLP applied to Bézier-interpolated
//! per-voxel features.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bspline::{bezier_kernel, bezier_kernel_grad};
use crate::error::{Error, Result};
use crate::geometry::{Point, Vector};
use crate::hierarchy::VoxelHierarchy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "none" | "linear" => Some(Activation::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out x in` weight matrix.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Format("MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i}: bias length {} vs {} outputs",
                    l.bias.len(),
                    l.weight.nrows()
                )));
            }
            if i > 0 && layers[i - 1].weight.nrows() != l.weight.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} expects {} inputs but previous layer emits {}",
                    l.weight.ncols(),
                    layers[i - 1].weight.nrows()
                )));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("layer {i} has non-finite parameters")));
            }
        }
        if layers.last().unwrap().activation != Activation::None {
            return Err(Error::Format("final MLP layer must be linear".into()));
        }
        Ok(Self { layers })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            layers: vec![DenseLayer {
                weight: DMatrix::identity(dim, dim),
                bias: DVector::zeros(dim),
                activation: Activation::None,
            }],
        }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn forward(&self, input: &DVector<f64>) -> DVector<f64> {
        let mut h = input.clone();
        for l in &self.layers {
            h = &l.weight * h + &l.bias;
            if l.activation == Activation::Relu {
                h.apply(|v| *v = v.max(0.0));
            }
        }
        h
    }

    /// Output and Jacobian `d out / d in`. ReLU contributes slope 0 at 0.
    pub fn forward_jacobian(&self, input: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let mut h = input.clone();
        let mut jac = DMatrix::identity(input.len(), input.len());
        for l in &self.layers {
            h = &l.weight * h + &l.bias;
            jac = &l.weight * jac;
            if l.activation == Activation::Relu {
                for r in 0..h.len() {
                    if h[r] > 0.0 {
                        continue;
                    }
                    h[r] = 0.0;
                    jac.row_mut(r).fill(0.0);
                }
            }
        }
        (h, jac)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedField {
    pub feature_dim: usize,
    /// Row-major `voxel_count x feature_dim` features in hierarchy order.
    pub features: Vec<f64>,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureField {
    Constant(DVector<f64>),
    Learned(LearnedField),
}

/// Kernels of every level of a hierarchy.
#[derive(Debug, Clone)]
pub struct KernelModel {
    hierarchy: Arc<VoxelHierarchy>,
    fields: Vec<FeatureField>,
    dim: usize,
    concat_position: bool,
    /// Per level: `<c, c>` for constant fields.
    constant_sq: Vec<f64>,
    /// Per level: `phi` at every voxel center (row-major), learned fields only.
    center_phi: Vec<Vec<f64>>,
}

impl KernelModel {
    /// Constant field `e_1` in `R^dim` at every level, so `K = K_b`.
    pub fn constant(hierarchy: Arc<VoxelHierarchy>, dim: usize) -> Self {
        let mut e1 = DVector::zeros(dim.max(1));
        e1[0] = 1.0;
        let fields = vec![FeatureField::Constant(e1); hierarchy.levels()];
        Self::new(hierarchy, fields, false).expect("unit constant field is valid")
    }

    pub fn new(
        hierarchy: Arc<VoxelHierarchy>,
        fields: Vec<FeatureField>,
        concat_position: bool,
    ) -> Result<Self> {
        if fields.len() != hierarchy.levels() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} levels, hierarchy has {}",
                fields.len(),
                hierarchy.levels()
            )));
        }
        let dim = match &fields[0] {
            FeatureField::Constant(c) => c.len(),
            FeatureField::Learned(f) => f.mlp.output_dim(),
        };
        let mut constant_sq = Vec::with_capacity(fields.len());
        for (i, f) in fields.iter().enumerate() {
            let level = i + 1;
            match f {
                FeatureField::Constant(c) => {
                    if c.len() != dim {
                        return Err(Error::DimensionMismatch(format!(
                            "level {level} has dimension {}, expected {dim}",
                            c.len()
                        )));
                    }
                    if c.iter().any(|v| !v.is_finite()) || c.norm_squared() == 0.0 {
                        return Err(Error::InvalidConfig(format!(
                            "constant field at level {level} must be finite and non-zero"
                        )));
                    }
                    constant_sq.push(c.norm_squared());
                }
                FeatureField::Learned(lf) => {
                    let expected_in = lf.feature_dim + if concat_position { 3 } else { 0 };
                    if lf.mlp.input_dim() != expected_in || lf.mlp.output_dim() != dim {
                        return Err(Error::DimensionMismatch(format!(
                            "level {level} MLP maps {} -> {}, expected {expected_in} -> {dim}",
                            lf.mlp.input_dim(),
                            lf.mlp.output_dim()
                        )));
                    }
                    let voxels = hierarchy.len(level);
                    if lf.features.len() != voxels * lf.feature_dim {
                        return Err(Error::DimensionMismatch(format!(
                            "level {level} carries {} feature values, hierarchy needs {}",
                            lf.features.len(),
                            voxels * lf.feature_dim
                        )));
                    }
                    constant_sq.push(0.0);
                }
            }
        }
        let mut model = Self {
            hierarchy,
            fields,
            dim,
            concat_position,
            constant_sq,
            center_phi: Vec::new(),
        };
        model.center_phi = (1..=model.levels())
            .map(|l| match &model.fields[l - 1] {
                FeatureField::Constant(_) => Vec::new(),
                FeatureField::Learned(_) => {
                    let h = &model.hierarchy;
                    h.keys(l)
                        .iter()
                        .flat_map(|k| model.eval_phi(l, &h.center(l, k)).data.as_vec().clone())
                        .collect()
                }
            })
            .collect();
        Ok(model)
    }

    pub fn hierarchy(&self) -> &VoxelHierarchy {
        &self.hierarchy
    }

    pub fn hierarchy_arc(&self) -> &Arc<VoxelHierarchy> {
        &self.hierarchy
    }

    pub fn levels(&self) -> usize {
        self.hierarchy.levels()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn concat_position(&self) -> bool {
        self.concat_position
    }

    pub fn field(&self, level: usize) -> &FeatureField {
        &self.fields[level - 1]
    }

    pub fn fields(&self) -> &[FeatureField] {
        &self.fields
    }

    fn mlp_input(&self, level: usize, lf: &LearnedField, x: &Point) -> DVector<f64> {
        let u = self
            .hierarchy
            .interpolate_feature(level, x, &lf.features, lf.feature_dim);
        if self.concat_position {
            DVector::from_iterator(
                u.len() + 3,
                u.iter().copied().chain(x.coords.iter().copied()),
            )
        } else {
            u
        }
    }

    pub fn eval_phi(&self, level: usize, x: &Point) -> DVector<f64> {
        match &self.fields[level - 1] {
            FeatureField::Constant(c) => c.clone(),
            FeatureField::Learned(lf) => lf.mlp.forward(&self.mlp_input(level, lf, x)),
        }
    }

    /// `phi(x)` and its `dim x 3` Jacobian with respect to `x`.
    pub fn eval_phi_jacobian(&self, level: usize, x: &Point) -> (DVector<f64>, DMatrix<f64>) {
        match &self.fields[level - 1] {
            FeatureField::Constant(c) => (c.clone(), DMatrix::zeros(c.len(), 3)),
            FeatureField::Learned(lf) => {
                let k = lf.feature_dim;
                let extra = if self.concat_position { 3 } else { 0 };
                let mut input = DVector::zeros(k + extra);
                let mut d_input = DMatrix::zeros(k + extra, 3);
                self.hierarchy.for_each_support_grad(level, x, |j, w, g| {
                    let z = &lf.features[j * k..(j + 1) * k];
                    for r in 0..k {
                        input[r] += w * z[r];
                        for a in 0..3 {
                            d_input[(r, a)] += z[r] * g[a];
                        }
                    }
                });
                if self.concat_position {
                    for a in 0..3 {
                        input[k + a] = x[a];
                        d_input[(k + a, a)] = 1.0;
                    }
                }
                let (phi, jac) = lf.mlp.forward_jacobian(&input);
                (phi, jac * d_input)
            }
        }
    }

    pub fn eval_kernel(&self, level: usize, x: &Point, y: &Point) -> f64 {
        let kb = bezier_kernel(x, y, self.hierarchy.width(level));
        if kb == 0.0 {
            return 0.0;
        }
        let dot = match &self.fields[level - 1] {
            FeatureField::Constant(_) => self.constant_sq[level - 1],
            FeatureField::Learned(_) => self.eval_phi(level, x).dot(&self.eval_phi(level, y)),
        };
        dot * kb
    }

    /// Gradient of [`Self::eval_kernel`] with respect to `x`.
    pub fn eval_kernel_grad(&self, level: usize, x: &Point, y: &Point) -> Vector {
        let (kb, gb) = bezier_kernel_grad(x, y, self.hierarchy.width(level));
        match &self.fields[level - 1] {
            FeatureField::Constant(_) => gb * self.constant_sq[level - 1],
            FeatureField::Learned(_) => {
                let (px, jx) = self.eval_phi_jacobian(level, x);
                let py = self.eval_phi(level, y);
                let jt: DVector<f64> = jx.transpose() * &py;
                Vector::new(jt[0], jt[1], jt[2]) * kb + gb * px.dot(&py)
            }
        }
    }

    /// Call `f(global_index, K(x, c_j))` for every voxel whose kernel is
    /// non-zero at `x`, level by level.
    pub fn for_each_kernel(&self, x: &Point, mut f: impl FnMut(usize, f64)) {
        let h = &self.hierarchy;
        for l in 1..=self.levels() {
            let off = h.offset(l);
            match &self.fields[l - 1] {
                FeatureField::Constant(_) => {
                    let s = self.constant_sq[l - 1];
                    h.for_each_support(l, x, |j, kb| f(off + j, s * kb));
                }
                FeatureField::Learned(_) => {
                    let px = self.eval_phi(l, x);
                    let cache = &self.center_phi[l - 1];
                    let d = self.dim;
                    h.for_each_support(l, x, |j, kb| {
                        let dot: f64 = px.iter().zip(&cache[j * d..(j + 1) * d]).map(|(a, b)| a * b).sum();
                        f(off + j, dot * kb)
                    });
                }
            }
        }
    }

    /// As [`Self::for_each_kernel`] with the gradient with respect to `x`.
    pub fn for_each_kernel_grad(&self, x: &Point, mut f: impl FnMut(usize, f64, Vector)) {
        let h = &self.hierarchy;
        for l in 1..=self.levels() {
            let off = h.offset(l);
            match &self.fields[l - 1] {
                FeatureField::Constant(_) => {
                    let s = self.constant_sq[l - 1];
                    h.for_each_support_grad(l, x, |j, kb, g| f(off + j, s * kb, g * s));
                }
                FeatureField::Learned(_) => {
                    let (px, jx) = self.eval_phi_jacobian(l, x);
                    let jt: DMatrix<f64> = jx.transpose();
                    let cache = &self.center_phi[l - 1];
                    let d = self.dim;
                    h.for_each_support_grad(l, x, |j, kb, g| {
                        let py = &cache[j * d..(j + 1) * d];
                        let mut dot = 0.0;
                        let mut jp = Vector::zeros();
                        for (r, &p) in py.iter().enumerate() {
                            dot += px[r] * p;
                            jp += Vector::new(jt[(0, r)], jt[(1, r)], jt[(2, r)]) * p;
                        }
                        f(off + j, dot * kb, jp * kb + g * dot)
                    });
                }
            }
        }
    }

    fn check_alpha(&self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.hierarchy.total_len() {
            return Err(Error::SizeMismatch {
                expected: self.hierarchy.total_len(),
                actual: alpha.len(),
            });
        }
        Ok(())
    }

    /// `f(x) = sum_j alpha_j K(x, c_j)`.
    pub fn eval_field(&self, alpha: &[f64], x: &Point) -> Result<f64> {
        self.check_alpha(alpha)?;
        Ok(self.field_unchecked(alpha, x))
    }

    pub fn eval_field_grad(&self, alpha: &[f64], x: &Point) -> Result<Vector> {
        self.check_alpha(alpha)?;
        Ok(self.field_grad_unchecked(alpha, x).1)
    }

    pub(crate) fn field_unchecked(&self, alpha: &[f64], x: &Point) -> f64 {
        let mut acc = 0.0;
        self.for_each_kernel(x, |j, k| acc += alpha[j] * k);
        acc
    }

    pub(crate) fn field_grad_unchecked(&self, alpha: &[f64], x: &Point) -> (f64, Vector) {
        let mut v = 0.0;
        let mut g = Vector::zeros();
        self.for_each_kernel_grad(x, |j, k, kg| {
            v += alpha[j] * k;
            g += kg * alpha[j];
        });
        (v, g)
    }
}
