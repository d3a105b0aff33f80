//! Seeded value-noise scalar field used as the ground texture.

/// Multi-octave value noise over the world square, values in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueNoise {
    seed: u64,
    world_side: f64,
}

const OCTAVES: [(f64, f64); 3] = [(6.0, 0.55), (14.0, 0.30), (33.0, 0.15)];

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, octave: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix64(
        seed ^ splitmix64(octave.wrapping_mul(0x1000_0000_01B3) ^ splitmix64(ix as u64 ^ splitmix64(iy as u64))),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

impl ValueNoise {
    pub fn new(seed: u64, world_side: f64) -> Self {
        Self { seed, world_side }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn world_side(&self) -> f64 {
        self.world_side
    }

    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let mut value = 0.0;
        for (octave, &(cells, weight)) in OCTAVES.iter().enumerate() {
            let gx = x / self.world_side * cells;
            let gy = y / self.world_side * cells;
            let x0 = gx.floor();
            let y0 = gy.floor();
            let tx = smoothstep(gx - x0);
            let ty = smoothstep(gy - y0);
            let (ix, iy) = (x0 as i64, y0 as i64);
            let o = octave as u64;
            let v00 = lattice(self.seed, o, ix, iy);
            let v10 = lattice(self.seed, o, ix + 1, iy);
            let v01 = lattice(self.seed, o, ix, iy + 1);
            let v11 = lattice(self.seed, o, ix + 1, iy + 1);
            let a = v00 + (v10 - v00) * tx;
            let b = v01 + (v11 - v01) * tx;
            value += weight * (a + (b - a) * ty);
        }
        value.clamp(0.0, 1.0)
    }
}
