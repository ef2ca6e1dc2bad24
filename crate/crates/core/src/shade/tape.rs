//! Minimal reverse-mode automatic differentiation, used to cross-check the
//! hand-derived shading derivatives.

use crate::grid::{corner_offset, SdfGrid};
use crate::real::Real;
use crate::scene::{Light, Ray};
use crate::tracer::HitRecord;

use super::{PixelTape, DEGENERATE_NORMAL_NORM};

#[derive(Clone, Copy, Debug)]
enum Op {
    Input,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Sqrt(usize),
    /// max(0, x)
    Relu(usize),
}

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Wengert list of scalar operations.
#[derive(Debug, Default)]
pub struct Tape<T> {
    values: Vec<T>,
    ops: Vec<Op>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    fn push(&mut self, value: T, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    /// Independent variable (or constant; constants simply go unused).
    pub fn input(&mut self, value: T) -> Var {
        self.push(value, Op::Input)
    }

    pub fn value(&self, v: Var) -> T {
        self.values[v.0]
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(self.values[a.0] + self.values[b.0], Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(self.values[a.0] - self.values[b.0], Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(self.values[a.0] * self.values[b.0], Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.push(self.values[a.0] / self.values[b.0], Op::Div(a.0, b.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.push(self.values[a.0].sqrt(), Op::Sqrt(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.push(self.values[a.0].max(T::zero()), Op::Relu(a.0))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let c = self.input(c);
        self.mul(a, c)
    }

    pub fn sum(&mut self, vars: &[Var]) -> Var {
        let mut acc = vars[0];
        for v in &vars[1..] {
            acc = self.add(acc, *v);
        }
        acc
    }

    /// Adjoint of every recorded value with respect to `output`.
    pub fn gradient(&self, output: Var) -> Vec<T> {
        let mut adj = vec![T::zero(); self.values.len()];
        adj[output.0] = T::one();
        for i in (0..=output.0).rev() {
            let g = adj[i];
            if g == T::zero() {
                continue;
            }
            match self.ops[i] {
                Op::Input => {}
                Op::Add(a, b) => {
                    adj[a] += g;
                    adj[b] += g;
                }
                Op::Sub(a, b) => {
                    adj[a] += g;
                    adj[b] -= g;
                }
                Op::Mul(a, b) => {
                    adj[a] += g * self.values[b];
                    adj[b] += g * self.values[a];
                }
                Op::Div(a, b) => {
                    let vb = self.values[b];
                    adj[a] += g / vb;
                    adj[b] -= g * self.values[a] / (vb * vb);
                }
                Op::Sqrt(a) => adj[a] += g / (T::lit(2.0) * self.values[i]),
                Op::Relu(a) => {
                    if self.values[a] > T::zero() {
                        adj[a] += g;
                    }
                }
            }
        }
        adj
    }
}

/// Same function as [`super::shade_pixel`], differentiated by recording it
/// on a [`Tape`].
pub fn shade_pixel_taped<T: Real>(hit: &HitRecord<T>, grid: &SdfGrid<T>, light: &Light<T>, view: &Ray<T>) -> PixelTape<T> {
    let geo = grid.geometry();
    let n = geo.resolution();
    let cell = hit.cell;
    let h = geo.spacing();
    let mut tape = Tape::new();

    // leaves for the 4x4x4 block, skipping coordinates outside the lattice
    let mut leaves: Vec<(usize, Var)> = Vec::with_capacity(64);
    let mut leaf_of = std::collections::HashMap::new();
    for ok in 0..4 {
        for oj in 0..4 {
            for oi in 0..4 {
                let c = [cell[0] + oi, cell[1] + oj, cell[2] + ok];
                if c.iter().any(|&x| x == 0 || x > n) {
                    continue;
                }
                let idx = geo.index(c[0] - 1, c[1] - 1, c[2] - 1);
                let var = tape.input(grid.values()[idx]);
                leaves.push((idx, var));
                leaf_of.insert(idx, var);
            }
        }
    }

    let corner = |m: usize| {
        let (dx, dy, dz) = corner_offset(m);
        [cell[0] + dx, cell[1] + dy, cell[2] + dz]
    };

    // f(s) with constant weights
    let u_s = geo.local_in_cell(cell, hit.s);
    let w_s = crate::grid::trilinear_weights(u_s);
    let terms: Vec<Var> = (0..8)
        .map(|m| {
            let [i, j, k] = corner(m);
            let d = leaf_of[&geo.index(i, j, k)];
            tape.scale(d, w_s[m])
        })
        .collect();
    let f_s = tape.sum(&terms);

    // local coordinates of p = s + f(s) v in the hit cell
    let base = geo.vertex_position(cell[0], cell[1], cell[2]);
    let one = tape.input(T::one());
    let mut u = Vec::with_capacity(3);
    for a in 0..3 {
        let off = tape.input((hit.s[a] - base[a]) / h);
        let step = tape.scale(f_s, view.direction[a] / h);
        u.push(tape.add(off, step));
    }
    let one_minus: Vec<Var> = u.iter().map(|&ua| tape.sub(one, ua)).collect();

    // blended gradient
    let mut g = Vec::with_capacity(3);
    for axis in 0..3 {
        let mut parts = Vec::with_capacity(8);
        for m in 0..8 {
            let [i, j, k] = corner(m);
            let st = geo.gradient_stencil(i, j, k)[axis];
            let hi = tape.scale(leaf_of[&st[0].0], st[0].1);
            let lo = tape.scale(leaf_of[&st[1].0], st[1].1);
            let comp = tape.add(hi, lo);
            let (dx, dy, dz) = corner_offset(m);
            let wx = if dx == 1 { u[0] } else { one_minus[0] };
            let wy = if dy == 1 { u[1] } else { one_minus[1] };
            let wz = if dz == 1 { u[2] } else { one_minus[2] };
            let wxy = tape.mul(wx, wy);
            let w = tape.mul(wxy, wz);
            parts.push(tape.mul(w, comp));
        }
        g.push(tape.sum(&parts));
    }

    let sq: Vec<Var> = g.iter().map(|&c| tape.mul(c, c)).collect();
    let norm_sq = tape.sum(&sq);
    let norm = tape.sqrt(norm_sq);
    if tape.value(norm) < T::lit(DEGENERATE_NORMAL_NORM) {
        return PixelTape::constant(light.ambient);
    }
    let l = -light.direction;
    let dots: Vec<Var> = (0..3).map(|a| tape.scale(g[a], l[a])).collect();
    let g_dot_l = tape.sum(&dots);
    let cos = tape.div(g_dot_l, norm);
    let diffuse = tape.relu(cos);
    let lit = tape.scale(diffuse, light.albedo * light.intensity);
    let ambient = tape.input(light.ambient);
    let pixel = tape.add(ambient, lit);

    let adj = tape.gradient(pixel);
    let mut out = PixelTape::constant(tape.value(pixel));
    leaves.sort_by_key(|(idx, _)| *idx);
    for (idx, var) in leaves {
        let gr = adj[var.0];
        if gr != T::zero() {
            out.sample_indices.push(idx);
            out.sample_grads.push(gr);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tape_differentiates_a_rational_expression() {
        // f(x, y) = sqrt(x * y) / (x - y) at (4, 1)
        let mut t = Tape::<f64>::new();
        let x = t.input(4.0);
        let y = t.input(1.0);
        let xy = t.mul(x, y);
        let r = t.sqrt(xy);
        let dxy = t.sub(x, y);
        let f = t.div(r, dxy);
        assert!((t.value(f) - 2.0 / 3.0).abs() < 1e-15);
        let g = t.gradient(f);
        // df/dx = y/(2 sqrt(xy)(x-y)) - sqrt(xy)/(x-y)^2
        let dfdx = 1.0 / (2.0 * 2.0 * 3.0) - 2.0 / 9.0;
        let dfdy = 4.0 / (2.0 * 2.0 * 3.0) + 2.0 / 9.0;
        assert!((g[x.0] - dfdx).abs() < 1e-15);
        assert!((g[y.0] - dfdy).abs() < 1e-15);
    }

    #[test]
    fn relu_blocks_negative_inputs() {
        let mut t = Tape::<f64>::new();
        let x = t.input(-0.5);
        let r = t.relu(x);
        let two = t.input(2.0);
        let out = t.mul(r, two);
        assert_eq!(t.value(out), 0.0);
        assert_eq!(t.gradient(out)[x.0], 0.0);
    }
}
