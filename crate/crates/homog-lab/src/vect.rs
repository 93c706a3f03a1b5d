//! Small stack-allocated vectors for dimensions 2 and 3.
//!
//! Everything in the crate works in R^2 or R^3, so a fixed [f64; 3] buffer
//! with an explicit dimension avoids heap traffic in the assembly loops.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vect {
    dim: usize,
    a: [f64; 3],
}

impl Vect {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=3).contains(&dim), "dimension must be 1, 2 or 3");
        Vect { dim, a: [0.0; 3] }
    }

    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = Vect::zeros(dim);
        v.a[i] = 1.0;
        v
    }

    pub fn from_slice(s: &[f64]) -> Self {
        let mut v = Vect::zeros(s.len());
        v.a[..s.len()].copy_from_slice(s);
        v
    }

    pub fn new2(x: f64, y: f64) -> Self {
        Vect { dim: 2, a: [x, y, 0.0] }
    }

    pub fn new3(x: f64, y: f64, z: f64) -> Self {
        Vect { dim: 3, a: [x, y, z] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.a[..self.dim]
    }

    pub fn dot(&self, other: &Vect) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let mut s = 0.0;
        for i in 0..self.dim {
            s += self.a[i] * other.a[i];
        }
        s
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, c: f64) -> Vect {
        let mut v = *self;
        for i in 0..self.dim {
            v.a[i] *= c;
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|x| x.is_finite())
    }

    /// Componentwise reduction mod 1 into [0,1), used for torus coordinates.
    pub fn frac(&self) -> Vect {
        let mut v = *self;
        for i in 0..self.dim {
            v.a[i] = v.a[i].rem_euclid(1.0);
        }
        v
    }
}

impl Index<usize> for Vect {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        debug_assert!(i < self.dim);
        &self.a[i]
    }
}

impl IndexMut<usize> for Vect {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        debug_assert!(i < self.dim);
        &mut self.a[i]
    }
}

impl Add for Vect {
    type Output = Vect;
    fn add(self, o: Vect) -> Vect {
        debug_assert_eq!(self.dim, o.dim);
        let mut v = self;
        for i in 0..self.dim {
            v.a[i] += o.a[i];
        }
        v
    }
}

impl AddAssign for Vect {
    fn add_assign(&mut self, o: Vect) {
        debug_assert_eq!(self.dim, o.dim);
        for i in 0..self.dim {
            self.a[i] += o.a[i];
        }
    }
}

impl Sub for Vect {
    type Output = Vect;
    fn sub(self, o: Vect) -> Vect {
        debug_assert_eq!(self.dim, o.dim);
        let mut v = self;
        for i in 0..self.dim {
            v.a[i] -= o.a[i];
        }
        v
    }
}

impl Neg for Vect {
    type Output = Vect;
    fn neg(self) -> Vect {
        self.scale(-1.0)
    }
}

impl Mul<f64> for Vect {
    type Output = Vect;
    fn mul(self, c: f64) -> Vect {
        self.scale(c)
    }
}

impl Serialize for Vect {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vect {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        if !(1..=3).contains(&v.len()) {
            return Err(serde::de::Error::custom("vector must have 1 to 3 components"));
        }
        Ok(Vect::from_slice(&v))
    }
}

/// Small symmetric n x n matrix (n <= 3), row-major in a fixed buffer.
/// Used for operator Jacobians and Kačanov secants.
#[derive(Clone, Copy, Debug)]
pub struct SmallMat {
    dim: usize,
    a: [f64; 9],
}

impl SmallMat {
    pub fn zeros(dim: usize) -> Self {
        SmallMat { dim, a: [0.0; 9] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = SmallMat::zeros(dim);
        for i in 0..dim {
            m.a[i * dim + i] = 1.0;
        }
        m
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        let mut m = SmallMat::zeros(dim);
        for i in 0..dim {
            m.a[i * dim + i] = c;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.dim + j] = v;
    }

    pub fn add_assign(&mut self, o: &SmallMat) {
        for k in 0..self.dim * self.dim {
            self.a[k] += o.a[k];
        }
    }

    /// Rank-one update m += c * v v^T.
    pub fn add_outer(&mut self, c: f64, v: &Vect) {
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.a[i * self.dim + j] += c * v[i] * v[j];
            }
        }
    }

    pub fn mul_vec(&self, v: &Vect) -> Vect {
        let mut r = Vect::zeros(self.dim);
        for i in 0..self.dim {
            let mut s = 0.0;
            for j in 0..self.dim {
                s += self.get(i, j) * v[j];
            }
            r[i] = s;
        }
        r
    }

    /// Quadratic form w^T m v.
    pub fn quad(&self, w: &Vect, v: &Vect) -> f64 {
        self.mul_vec(v).dot(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_ops() {
        let a = Vect::new2(1.0, 2.0);
        let b = Vect::new2(3.0, -1.0);
        assert_eq!((a + b).as_slice(), &[4.0, 1.0]);
        assert_eq!((a - b).as_slice(), &[-2.0, 3.0]);
        assert_eq!(a.dot(&b), 1.0);
        assert_eq!(Vect::new2(3.0, 4.0).norm(), 5.0);
    }

    #[test]
    fn frac_wraps_into_unit_cell() {
        let v = Vect::new2(1.25, -0.25).frac();
        assert!((v[0] - 0.25).abs() < 1e-15);
        assert!((v[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn small_mat_outer() {
        let mut m = SmallMat::identity(2);
        m.add_outer(2.0, &Vect::new2(1.0, 1.0));
        let r = m.mul_vec(&Vect::new2(1.0, 0.0));
        assert_eq!(r.as_slice(), &[3.0, 2.0]);
    }
}
