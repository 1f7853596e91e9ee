use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::Image;

/// `size x size` patches whose anchors advance by `size - overlap`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub size: usize,
    pub overlap: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            size: 4,
            overlap: 2,
        }
    }
}

impl PatchConfig {
    pub fn new(size: usize, overlap: usize) -> Result<Self> {
        let cfg = Self { size, overlap };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.overlap >= self.size {
            return Err(Error::InadmissiblePatch(format!(
                "need 0 <= overlap < size, got size={} overlap={}",
                self.size, self.overlap
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn stride(&self) -> usize {
        self.size - self.overlap
    }

    /// Checks `(H - p) mod (p - o) == 0` and `(W - p) mod (p - o) == 0`.
    pub fn check_admissible(&self, height: usize, width: usize) -> Result<()> {
        self.validate()?;
        let (p, s) = (self.size, self.stride());
        for (name, n) in [("height", height), ("width", width)] {
            if n < p {
                return Err(Error::InadmissiblePatch(format!(
                    "{name} {n} is smaller than the patch size {p}"
                )));
            }
            if (n - p) % s != 0 {
                return Err(Error::InadmissiblePatch(format!(
                    "({name} - p) mod (p - o) = ({n} - {p}) mod {s} = {} != 0",
                    (n - p) % s
                )));
            }
        }
        Ok(())
    }

    /// Patch grid dimensions `(rows, cols)`; assumes admissibility.
    #[inline]
    pub fn grid(&self, height: usize, width: usize) -> (usize, usize) {
        let s = self.stride();
        ((height - self.size) / s + 1, (width - self.size) / s + 1)
    }

    pub fn num_patches(&self, height: usize, width: usize) -> usize {
        let (r, c) = self.grid(height, width);
        r * c
    }
}

/// `p^2 x N_patches` matrix; column `k` is the patch at grid position `k`
/// (row-major over the grid), vectorized column-major within the patch.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMatrix {
    pub config: PatchConfig,
    pub height: usize,
    pub width: usize,
    pub matrix: DMatrix<f64>,
}

impl PatchMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    fn check_consistent(&self) -> Result<()> {
        self.config.check_admissible(self.height, self.width)?;
        let p = self.config.size;
        let n = self.config.num_patches(self.height, self.width);
        if self.matrix.nrows() != p * p || self.matrix.ncols() != n {
            return Err(Error::InadmissiblePatch(format!(
                "patch matrix is {}x{}, expected {}x{} for a {}x{} image",
                self.matrix.nrows(),
                self.matrix.ncols(),
                p * p,
                n,
                self.height,
                self.width
            )));
        }
        Ok(())
    }
}

pub fn patch_extract(u: &Image, cfg: PatchConfig) -> Result<PatchMatrix> {
    let (h, w) = u.dims();
    cfg.check_admissible(h, w)?;
    let (p, s) = (cfg.size, cfg.stride());
    let (gr, gc) = cfg.grid(h, w);
    let mut m = DMatrix::zeros(p * p, gr * gc);
    for gi in 0..gr {
        for gj in 0..gc {
            let mut col = m.column_mut(gi * gc + gj);
            for dj in 0..p {
                for di in 0..p {
                    col[dj * p + di] = u[(gi * s + di, gj * s + dj)];
                }
            }
        }
    }
    Ok(PatchMatrix {
        config: cfg,
        height: h,
        width: w,
        matrix: m,
    })
}

/// `P^T Y`: every patch entry summed back into its source pixel.
pub fn patch_adjoint(pm: &PatchMatrix) -> Result<Image> {
    pm.check_consistent()?;
    let cfg = pm.config;
    let (p, s) = (cfg.size, cfg.stride());
    let (gr, gc) = cfg.grid(pm.height, pm.width);
    let mut out = Image::zeros(pm.height, pm.width);
    for gi in 0..gr {
        for gj in 0..gc {
            let col = pm.matrix.column(gi * gc + gj);
            for dj in 0..p {
                for di in 0..p {
                    out[(gi * s + di, gj * s + dj)] += col[dj * p + di];
                }
            }
        }
    }
    Ok(out)
}

/// Number of patches covering each pixel (the diagonal of `P^T P`).
pub fn overlap_counts(cfg: PatchConfig, height: usize, width: usize) -> Result<Image> {
    cfg.check_admissible(height, width)?;
    let p = cfg.size;
    patch_adjoint(&PatchMatrix {
        config: cfg,
        height,
        width,
        matrix: DMatrix::from_element(p * p, cfg.num_patches(height, width), 1.0),
    })
}

/// Left inverse `(P^T P)^{-1} P^T`: overlapping contributions are averaged.
pub fn patch_reconstruct(pm: &PatchMatrix) -> Result<Image> {
    let sum = patch_adjoint(pm)?;
    let counts = overlap_counts(pm.config, pm.height, pm.width)?;
    Ok(sum.zip_map(&counts, |x, c| x / c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(p: usize, o: usize) -> PatchConfig {
        PatchConfig::new(p, o).unwrap()
    }

    #[test]
    fn matrix_dimensions() {
        let u = Image::from_fn(4, 4, |i, j| (i * 4 + j) as f64);
        let pm = patch_extract(&u, cfg(4, 2)).unwrap();
        assert_eq!((pm.rows(), pm.cols()), (16, 1));
        // column-major vectorization of the whole image
        for dj in 0..4 {
            for di in 0..4 {
                assert_eq!(pm.matrix[(dj * 4 + di, 0)], u[(di, dj)]);
            }
        }
        let pm = patch_extract(&Image::zeros(6, 6), cfg(4, 2)).unwrap();
        assert_eq!((pm.rows(), pm.cols()), (16, 4));
        let pm = patch_extract(&Image::zeros(64, 64), cfg(4, 2)).unwrap();
        assert_eq!((pm.rows(), pm.cols()), (16, 961));
    }

    #[test]
    fn inadmissible_names_condition() {
        let err = patch_extract(&Image::zeros(7, 6), cfg(4, 2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("height") && msg.contains("mod"), "{msg}");
        let err = patch_extract(&Image::zeros(6, 9), cfg(4, 2)).unwrap_err();
        assert!(err.to_string().contains("width"));
        assert!(PatchConfig::new(4, 4).is_err());
    }

    #[test]
    fn overlap_count_map() {
        let c = overlap_counts(cfg(4, 2), 6, 6).unwrap();
        assert_eq!(c[(0, 0)], 1.0);
        assert_eq!(c[(5, 5)], 1.0);
        assert_eq!(c[(2, 2)], 4.0);
        assert_eq!(c[(3, 3)], 4.0);
        assert_eq!(c[(0, 2)], 2.0);
    }

    #[test]
    fn reconstruct_is_left_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = Image::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let back = patch_reconstruct(&patch_extract(&u, cfg(4, 2)).unwrap()).unwrap();
        assert!(back.max_abs_diff(&u) < 1e-12);
    }

    #[test]
    fn disjoint_patches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = Image::from_fn(8, 12, |_, _| rng.random_range(-1.0..1.0));
        let pm = patch_extract(&u, cfg(4, 0)).unwrap();
        assert_eq!(patch_adjoint(&pm).unwrap(), u);
        assert_eq!(patch_reconstruct(&pm).unwrap(), patch_adjoint(&pm).unwrap());
    }

    #[test]
    fn zero_matrix_adjoint() {
        let pm = patch_extract(&Image::zeros(6, 6), cfg(4, 2)).unwrap();
        assert_eq!(patch_adjoint(&pm).unwrap(), Image::zeros(6, 6));
    }

    #[test]
    fn inconsistent_matrix_rejected() {
        let mut pm = patch_extract(&Image::zeros(6, 6), cfg(4, 2)).unwrap();
        pm.matrix = DMatrix::zeros(16, 3);
        assert!(patch_adjoint(&pm).is_err());
    }

    #[test]
    fn patch_count_matches_enumeration() {
        for h in 1..=16 {
            for w in 1..=16 {
                for p in 1..=h.min(w) {
                    for o in 0..p {
                        let c = cfg(p, o);
                        if c.check_admissible(h, w).is_err() {
                            continue;
                        }
                        // brute-force: anchors reachable by stride that fit
                        let s = p - o;
                        let mut n = 0;
                        for i in 0..h {
                            for j in 0..w {
                                if i % s == 0 && j % s == 0 && i + p <= h && j + p <= w {
                                    n += 1;
                                }
                            }
                        }
                        assert_eq!(c.num_patches(h, w), n, "h={h} w={w} p={p} o={o}");
                    }
                }
            }
        }
    }
}
