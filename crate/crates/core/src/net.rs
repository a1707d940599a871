//! Fully connected ReLU networks of constant width with a clipped output,
//! their flat parameter layout and exact gradients of the empirical risk.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::Dataset;

/// Shape of a network with `hidden_layers` ReLU layers of width `width`
/// on `input_dim` inputs, together with the parameter box `[-box_bound,
/// box_bound]` and the output clip level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub box_bound: f64,
    pub clip: f64,
}

/// Position of one affine layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    /// Offset of the row-major weight block.
    pub weights: usize,
    /// Offset of the shift vector.
    pub shifts: usize,
    pub rows: usize,
    pub cols: usize,
}

impl NetworkArch {
    pub fn new(input_dim: usize, hidden_layers: usize, width: usize, box_bound: f64, clip: f64) -> Result<Self> {
        let arch = NetworkArch {
            input_dim,
            hidden_layers,
            width,
            box_bound,
            clip,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_layers == 0 || self.width == 0 {
            return Err(Error::config(format!(
                "architecture needs p, L, r >= 1 (got p={}, L={}, r={})",
                self.input_dim, self.hidden_layers, self.width
            )));
        }
        if !(self.box_bound >= 1.0) || !self.box_bound.is_finite() {
            return Err(Error::config(format!(
                "box bound B must be >= 1, got {}",
                self.box_bound
            )));
        }
        if !(self.clip >= 1.0) || !self.clip.is_finite() {
            return Err(Error::config(format!("clip level C must be >= 1, got {}", self.clip)));
        }
        Ok(())
    }

    /// Total number of weights and shifts, `(p+1)r + (L-1)(r+1)r + r + 1`.
    pub fn param_count(&self) -> usize {
        let (p, l, r) = (self.input_dim, self.hidden_layers, self.width);
        (p + 1) * r + (l - 1) * (r + 1) * r + r + 1
    }

    /// Layer `layer` in `1..=L+1`.
    pub fn layer(&self, layer: usize) -> LayerLayout {
        assert!(
            layer >= 1 && layer <= self.hidden_layers + 1,
            "layer {layer} out of range"
        );
        let (p, r) = (self.input_dim, self.width);
        let first = (p + 1) * r;
        let hidden = (r + 1) * r;
        let start = if layer == 1 { 0 } else { first + (layer - 2) * hidden };
        let cols = if layer == 1 { p } else { r };
        let rows = if layer == self.hidden_layers + 1 { 1 } else { r };
        LayerLayout {
            weights: start,
            shifts: start + rows * cols,
            rows,
            cols,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = LayerLayout> + '_ {
        (1..=self.hidden_layers + 1).map(|l| self.layer(l))
    }

    /// Flat index of `W^(layer)[row, col]`.
    pub fn weight_index(&self, layer: usize, row: usize, col: usize) -> usize {
        let ll = self.layer(layer);
        assert!(row < ll.rows && col < ll.cols);
        ll.weights + row * ll.cols + col
    }

    /// Flat index of `v^(layer)[row]`.
    pub fn shift_index(&self, layer: usize, row: usize) -> usize {
        let ll = self.layer(layer);
        assert!(row < ll.rows);
        ll.shifts + row
    }

    /// Factor `4 (2rB)^L (|x|_1 v 1)` bounding `|f_a(x) - f_b(x)| / |a - b|_inf`
    /// for parameters `a, b` in the box.
    pub fn lipschitz_bound(&self, x: &[f64]) -> f64 {
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        4.0 * (2.0 * self.width as f64 * self.box_bound).powi(self.hidden_layers as i32) * l1.max(1.0)
    }

    fn check_params(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::shape(format!(
                "parameter vector has length {}, architecture needs {}",
                theta.len(),
                self.param_count()
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::shape(format!(
                "input has dimension {}, architecture needs {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Unclipped network output `g_theta(x)`.
    pub fn forward_raw(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        self.check_params(theta)?;
        self.check_input(x)?;
        Ok(Forward::new(self).raw(self, theta, x))
    }

    /// Clipped output `f_theta(x) = (-C) v (g_theta(x) ^ C)`.
    pub fn forward_clipped(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        Ok(self.clamp(self.forward_raw(theta, x)?))
    }

    #[inline]
    pub fn clamp(&self, g: f64) -> f64 {
        g.clamp(-self.clip, self.clip)
    }

    /// Empirical risk `R_n(f_theta)` over `data`.
    pub fn empirical_risk(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        self.check_params(theta)?;
        self.check_data(data)?;
        let mut fw = Forward::new(self);
        let sum = crate::numeric::pairwise_sum(
            &(0..data.len())
                .map(|i| {
                    let r = data.y()[i] - self.clamp(fw.raw(self, theta, data.x(i)));
                    r * r
                })
                .collect::<Vec<_>>(),
        );
        Ok(sum / data.len() as f64)
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.is_empty() {
            return Err(Error::domain("empty dataset"));
        }
        if data.input_dim() != self.input_dim {
            return Err(Error::shape(format!(
                "dataset has {} features, architecture needs {}",
                data.input_dim(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// `R_n(f_theta)` and its gradient with respect to every coordinate of
    /// `theta` (inactive coordinates included).
    ///
    /// Subgradient conventions: ReLU'(0) = 0 and the clip has derivative 0
    /// at and beyond `±C`. Per-sample contributions are reduced pairwise in
    /// a fixed order.
    pub fn risk_and_grad(&self, theta: &[f64], data: &Dataset) -> Result<(f64, Vec<f64>)> {
        self.check_params(theta)?;
        self.check_data(data)?;
        let n = data.len();
        let p = self.param_count();
        let mut depth = 1;
        while (PAIRWISE_BLOCK << (depth - 1)) < n {
            depth += 1;
        }
        let mut grad = vec![0.0; p];
        let mut spare: Vec<Vec<f64>> = (0..depth).map(|_| vec![0.0; p]).collect();
        let mut bp = Backprop::new(self);
        let sum = bp.accumulate(self, theta, data, 0, n, &mut grad, &mut spare);
        let inv_n = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv_n);
        Ok((sum * inv_n, grad))
    }

    /// Gradient of the empirical risk (see [`NetworkArch::risk_and_grad`]).
    pub fn grad_empirical_risk(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        Ok(self.risk_and_grad(theta, data)?.1)
    }
}

const PAIRWISE_BLOCK: usize = 32;

/// Scratch buffers for repeated forward passes.
pub struct Forward {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Forward {
    pub fn new(arch: &NetworkArch) -> Self {
        let len = arch.width.max(arch.input_dim);
        Forward {
            a: vec![0.0; len],
            b: vec![0.0; len],
        }
    }

    /// `g_theta(x)` without shape checks.
    pub fn raw(&mut self, arch: &NetworkArch, theta: &[f64], x: &[f64]) -> f64 {
        self.a[..x.len()].copy_from_slice(x);
        let mut in_len = x.len();
        for l in 1..=arch.hidden_layers {
            let ll = arch.layer(l);
            for j in 0..ll.rows {
                let row = &theta[ll.weights + j * ll.cols..ll.weights + (j + 1) * ll.cols];
                let z: f64 = row.iter().zip(&self.a[..in_len]).map(|(w, v)| w * v).sum::<f64>() + theta[ll.shifts + j];
                self.b[j] = if z > 0.0 { z } else { 0.0 };
            }
            std::mem::swap(&mut self.a, &mut self.b);
            in_len = ll.rows;
        }
        let out = arch.layer(arch.hidden_layers + 1);
        let row = &theta[out.weights..out.weights + out.cols];
        row.iter().zip(&self.a[..in_len]).map(|(w, v)| w * v).sum::<f64>() + theta[out.shifts]
    }

    pub fn clipped(&mut self, arch: &NetworkArch, theta: &[f64], x: &[f64]) -> f64 {
        arch.clamp(self.raw(arch, theta, x))
    }
}

struct Backprop {
    /// Post-activations `x^(0), ..., x^(L)`.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Backprop {
    fn new(arch: &NetworkArch) -> Self {
        let mut acts = vec![vec![0.0; arch.input_dim]];
        acts.extend((0..arch.hidden_layers).map(|_| vec![0.0; arch.width]));
        Backprop {
            acts,
            delta: vec![0.0; arch.width],
            delta_prev: vec![0.0; arch.width],
        }
    }

    /// Sum of squared residuals over `lo..hi`; the summed (unnormalised)
    /// gradient is written to `out`.
    #[allow(clippy::too_many_arguments)]
    fn accumulate(
        &mut self,
        arch: &NetworkArch,
        theta: &[f64],
        data: &Dataset,
        lo: usize,
        hi: usize,
        out: &mut [f64],
        spare: &mut [Vec<f64>],
    ) -> f64 {
        if hi - lo <= PAIRWISE_BLOCK {
            out.iter_mut().for_each(|g| *g = 0.0);
            let mut sum = 0.0;
            for i in lo..hi {
                sum += self.sample(arch, theta, data.x(i), data.y()[i], out);
            }
            return sum;
        }
        let mid = lo + (hi - lo) / 2;
        let left = self.accumulate(arch, theta, data, lo, mid, out, spare);
        let (first, rest) = spare.split_first_mut().expect("pairwise depth");
        let right = self.accumulate(arch, theta, data, mid, hi, first, rest);
        out.iter_mut().zip(first.iter()).for_each(|(o, f)| *o += f);
        left + right
    }

    /// Adds the gradient of `(y - f_theta(x))^2` to `out`; returns the loss.
    fn sample(&mut self, arch: &NetworkArch, theta: &[f64], x: &[f64], y: f64, out: &mut [f64]) -> f64 {
        let big_l = arch.hidden_layers;
        self.acts[0].copy_from_slice(x);
        for l in 1..=big_l {
            let ll = arch.layer(l);
            let (prev, cur) = self.acts.split_at_mut(l);
            let input = &prev[l - 1];
            let output = &mut cur[0];
            for j in 0..ll.rows {
                let row = &theta[ll.weights + j * ll.cols..ll.weights + (j + 1) * ll.cols];
                let z: f64 = row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>() + theta[ll.shifts + j];
                output[j] = if z > 0.0 { z } else { 0.0 };
            }
        }
        let top = arch.layer(big_l + 1);
        let last = &self.acts[big_l];
        let g = theta[top.weights..top.weights + top.cols]
            .iter()
            .zip(last)
            .map(|(w, v)| w * v)
            .sum::<f64>()
            + theta[top.shifts];
        let f = arch.clamp(g);
        let resid = y - f;
        if !(g > -arch.clip && g < arch.clip) {
            return resid * resid;
        }
        let c = -2.0 * resid;
        for (k, v) in last.iter().enumerate() {
            out[top.weights + k] += c * v;
        }
        out[top.shifts] += c;
        for (k, v) in last.iter().enumerate() {
            self.delta[k] = if *v > 0.0 { c * theta[top.weights + k] } else { 0.0 };
        }
        for l in (1..=big_l).rev() {
            let ll = arch.layer(l);
            let input = &self.acts[l - 1];
            for j in 0..ll.rows {
                let d = self.delta[j];
                if d == 0.0 {
                    continue;
                }
                let base = ll.weights + j * ll.cols;
                for (k, v) in input.iter().enumerate() {
                    out[base + k] += d * v;
                }
                out[ll.shifts + j] += d;
            }
            if l > 1 {
                for k in 0..ll.cols {
                    self.delta_prev[k] = if input[k] > 0.0 {
                        (0..ll.rows)
                            .map(|j| theta[ll.weights + j * ll.cols + k] * self.delta[j])
                            .sum()
                    } else {
                        0.0
                    };
                }
                std::mem::swap(&mut self.delta, &mut self.delta_prev);
            }
        }
        resid * resid
    }
}

/// Flat parameter vector `theta`, laid out as `W^(1)` (row-major), `v^(1)`,
/// `W^(2)`, ..., `W^(L+1)`, `v^(L+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    /// Checks the length against `arch` and membership in its box.
    pub fn for_arch(arch: &NetworkArch, values: Vec<f64>) -> Result<Self> {
        arch.check_params(&values)?;
        let v = ParamVector(values);
        if !v.in_box(arch.box_bound) {
            return Err(Error::domain("parameter vector leaves the box [-B, B]^P"));
        }
        Ok(v)
    }

    pub fn in_box(&self, bound: f64) -> bool {
        self.0.iter().all(|v| v.abs() <= bound)
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// Sorted, duplicate-free set of active parameter indices (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActiveSet(Vec<usize>);

impl ActiveSet {
    pub fn empty() -> Self {
        ActiveSet(Vec::new())
    }

    /// Every index of a `dim`-dimensional parameter.
    pub fn full(dim: usize) -> Self {
        ActiveSet((0..dim).collect())
    }

    /// Sorts and deduplicates; rejects indices `>= dim`.
    pub fn new(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&last) = indices.last() {
            if last >= dim {
                return Err(Error::domain(format!("active index {last} >= dimension {dim}")));
            }
        }
        Ok(ActiveSet(indices))
    }

    /// Indices of the nonzero entries of `theta`.
    pub fn support_of(theta: &[f64]) -> Self {
        ActiveSet(
            theta
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, _)| i)
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    /// Indices in `0..dim` not in the set, ascending.
    pub fn complement(&self, dim: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(dim - self.0.len());
        let mut it = self.0.iter().peekable();
        for i in 0..dim {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                out.push(i);
            }
        }
        out
    }

    pub fn with(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        if let Err(pos) = v.binary_search(&i) {
            v.insert(pos, i);
        }
        ActiveSet(v)
    }

    pub fn without(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        if let Ok(pos) = v.binary_search(&i) {
            v.remove(pos);
        }
        ActiveSet(v)
    }

    /// `theta_i == 0` for every `i` outside the set.
    pub fn consistent(&self, theta: &[f64]) -> bool {
        let mut it = self.0.iter().peekable();
        for (i, v) in theta.iter().enumerate() {
            if it.peek() == Some(&&i) {
                it.next();
            } else if *v != 0.0 {
                return false;
            }
        }
        it.peek().is_none()
    }
}
