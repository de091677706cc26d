/// Lower bound on |circuit| / sqrt(vol) over all lattice circuits. The unit square attains it.
pub const C0: f64 = 2.0;
