//! Second-order forward-mode derivatives over a handful of local variables.

#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub g: Vec<f64>,
    /// Row-major `n x n` Hessian.
    pub h: Vec<f64>,
}

impl Jet {
    pub fn constant(v: f64, n: usize) -> Self {
        Jet {
            v,
            g: vec![0.0; n],
            h: vec![0.0; n * n],
        }
    }

    pub fn var(v: f64, i: usize, n: usize) -> Self {
        let mut j = Jet::constant(v, n);
        j.g[i] = 1.0;
        j
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn add(&self, o: &Jet) -> Jet {
        Jet {
            v: self.v + o.v,
            g: self.g.iter().zip(&o.g).map(|(a, b)| a + b).collect(),
            h: self.h.iter().zip(&o.h).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        self.add(&o.scale(-1.0))
    }

    pub fn scale(&self, k: f64) -> Jet {
        Jet {
            v: self.v * k,
            g: self.g.iter().map(|a| a * k).collect(),
            h: self.h.iter().map(|a| a * k).collect(),
        }
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        let n = self.dim();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] = self.v * o.h[i * n + j]
                    + o.v * self.h[i * n + j]
                    + self.g[i] * o.g[j]
                    + self.g[j] * o.g[i];
            }
        }
        Jet {
            v: self.v * o.v,
            g: self.g.iter().zip(&o.g).map(|(a, b)| self.v * b + o.v * a).collect(),
            h,
        }
    }

    pub fn square(&self) -> Jet {
        self.mul(self)
    }

    /// Applies a scalar function given its value and first two derivatives.
    pub fn chain(&self, f: f64, df: f64, d2f: f64) -> Jet {
        let n = self.dim();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] = df * self.h[i * n + j] + d2f * self.g[i] * self.g[j];
            }
        }
        Jet {
            v: f,
            g: self.g.iter().map(|a| df * a).collect(),
            h,
        }
    }

    pub fn recip(&self) -> Jet {
        let v = self.v;
        self.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }

    pub fn div(&self, o: &Jet) -> Jet {
        self.mul(&o.recip())
    }
}
