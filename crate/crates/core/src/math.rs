pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = m · x` for a row-major `rows × x.len()` matrix.
pub(crate) fn matvec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (row, o) in m.chunks_exact(cols).zip(out.iter_mut()) {
        *o = dot(row, x);
    }
}

/// `out += mᵀ · y` for a row-major `y.len() × out.len()` matrix.
pub(crate) fn matvec_t_acc(m: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (row, &yi) in m.chunks_exact(cols).zip(y) {
        if yi == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * yi;
        }
    }
}

/// `m += y xᵀ`.
pub(crate) fn outer_acc(m: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, &yi) in m.chunks_exact_mut(cols).zip(y) {
        if yi == 0.0 {
            continue;
        }
        for (w, xj) in row.iter_mut().zip(x) {
            *w += yi * xj;
        }
    }
}

pub(crate) fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// 64-bit FNV-1a, used for config fingerprints.
pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub(crate) fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub(crate) fn write_f64(&mut self, v: f64) {
        self.write_u64(v.to_bits());
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}
