//! Hybrid coefficient network: a dense input layer followed by per-level
//! groups of trainable sparse prolongations and low-rank residual layers.
//!
//! The network maps a parameter vector to the finite element coefficients of
//! the finest level. Group j operates at the dof count n_j of level j; for
//! j >= 2 it starts with a prolongation layer whose sparsity pattern is
//! frozen to that of the two-level transfer matrix P_j and whose values are
//! trainable (initialized to P_j). Residual layers act as
//! z -> z + A sigma(W z + b) with A in R^{n x r}, W in R^{r x n}, b in R^r;
//! zero-initialized layers are exact identities, which keeps the recorded
//! loss continuous across depth insertions.
//!
//! Forward evaluation writes a tape; `backward` replays it for an exact
//! reverse-mode vector-Jacobian product over the flat parameter vector
//! (layer-major, input to output, A/W/b within a residual layer).

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SparseMatrix};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use std::io::{Read, Write};

pub const LEAKY_SLOPE: f64 = 1e-3;

/// max(x, 1e-3 x).
pub fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// Subgradient choice: slope 1 at the kink.
pub fn leaky_relu_prime(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Low-rank residual update z -> z + A sigma(W z + b).
#[derive(Debug, Clone)]
pub struct ResLayer {
    pub a: DenseMatrix, // n x r
    pub w: DenseMatrix, // r x n
    pub b: Vec<f64>,    // r
}

impl ResLayer {
    pub fn zeros(width: usize, rank: usize) -> Self {
        ResLayer {
            a: DenseMatrix::zeros(width, rank),
            w: DenseMatrix::zeros(rank, width),
            b: vec![0.0; rank],
        }
    }

    /// Identity layer that can actually start training: A = 0 keeps the
    /// output exactly unchanged, while random W and b make the gradient of A
    /// nonzero. An all-zero layer is a stationary point of every loss (the
    /// gradients of A, W and b all contain a factor that vanishes at zero),
    /// so a fully zero initialization would freeze the layer forever under
    /// deterministic full-batch optimization.
    pub fn dormant(width: usize, rank: usize, rng: &mut impl rand::Rng) -> Self {
        let normal = Normal::new(0.0, 1e-3f64.sqrt()).unwrap();
        let mut w = DenseMatrix::zeros(rank, width);
        for v in w.data_mut() {
            *v = normal.sample(rng);
        }
        let b = (0..rank).map(|_| normal.sample(rng)).collect();
        ResLayer {
            a: DenseMatrix::zeros(width, rank),
            w,
            b,
        }
    }

    pub fn width(&self) -> usize {
        self.a.rows()
    }

    pub fn rank(&self) -> usize {
        self.b.len()
    }

    pub fn param_count(&self) -> usize {
        2 * self.width() * self.rank() + self.rank()
    }
}

/// Sparse prolongation with trainable values on a frozen pattern.
#[derive(Debug, Clone)]
pub struct ProlongLayer {
    pub q: SparseMatrix,
}

/// One per-level group: optional prolongation into this level's width, then
/// a stack of residual layers.
#[derive(Debug, Clone)]
pub struct Group {
    pub prolong: Option<ProlongLayer>,
    pub layers: Vec<ResLayer>,
    pub width: usize,
    pub rank: usize,
}

#[derive(Debug, Clone)]
pub struct HybridNetwork {
    pub input_w: DenseMatrix, // n_1 x d_p
    pub input_b: Vec<f64>,
    pub groups: Vec<Group>,
    pub seed: u64,
    /// Number of layers inserted after construction; salts the init stream
    /// of each inserted layer.
    pub insertions: u64,
}

/// Intermediate values recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    input: Vec<f64>,
    input_preact: Vec<f64>,
    groups: Vec<GroupTape>,
    shape_tag: (usize, usize),
}

#[derive(Debug, Clone, Default)]
struct GroupTape {
    prolong_input: Option<Vec<f64>>,
    layers: Vec<LayerTape>,
}

#[derive(Debug, Clone)]
struct LayerTape {
    input: Vec<f64>,
    preact: Vec<f64>,
}

/// Builds the network with the initialization used throughout: input layer
/// Gaussian with mean zero and variance 1e-3, prolongation values equal to
/// the transfer matrices, residual layers zero (exact identities).
pub fn init_network(
    d_p: usize,
    widths: &[usize],
    prolongs: Vec<Option<SparseMatrix>>,
    rank: usize,
    layers_per_group: &[usize],
    seed: u64,
) -> HybridNetwork {
    assert!(!widths.is_empty());
    assert_eq!(widths.len(), prolongs.len());
    assert_eq!(widths.len(), layers_per_group.len());
    assert!(rank >= 1);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-3f64.sqrt()).unwrap();
    let mut input_w = DenseMatrix::zeros(widths[0], d_p);
    for v in input_w.data_mut() {
        *v = normal.sample(&mut rng);
    }
    let input_b: Vec<f64> = (0..widths[0]).map(|_| normal.sample(&mut rng)).collect();

    let mut groups = Vec::with_capacity(widths.len());
    for (j, (&width, prolong)) in widths.iter().zip(prolongs).enumerate() {
        if let Some(p) = &prolong {
            assert_eq!(p.rows(), width, "group {j} prolongation rows");
            assert_eq!(
                p.cols(),
                widths[j - 1],
                "group {j} prolongation columns"
            );
        } else {
            assert!(j == 0, "only the first group may omit its prolongation");
        }
        groups.push(Group {
            prolong: prolong.map(|q| ProlongLayer { q }),
            layers: (0..layers_per_group[j])
                .map(|_| ResLayer::dormant(width, rank, &mut rng))
                .collect(),
            width,
            rank,
        });
    }
    HybridNetwork {
        input_w,
        input_b,
        groups,
        seed,
        insertions: 0,
    }
}

impl HybridNetwork {
    pub fn input_dim(&self) -> usize {
        self.input_w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.groups.last().map_or(self.input_b.len(), |g| g.width)
    }

    pub fn total_layers(&self) -> usize {
        self.groups.iter().map(|g| g.layers.len()).sum()
    }

    pub fn param_count(&self) -> usize {
        let mut n = self.input_w.rows() * self.input_w.cols() + self.input_b.len();
        for g in &self.groups {
            if let Some(p) = &g.prolong {
                n += p.q.nnz();
            }
            n += g.layers.iter().map(ResLayer::param_count).sum::<usize>();
        }
        n
    }

    /// Appends one dormant residual layer (A = 0) to the group; the network
    /// output is bit-identical for every input before and after.
    pub fn insert_layer(&mut self, group: usize) {
        self.insertions += 1;
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(self.seed ^ (0x9e37_79b9 + self.insertions));
        let g = &mut self.groups[group];
        let layer = ResLayer::dormant(g.width, g.rank, &mut rng);
        g.layers.push(layer);
    }

    pub fn forward(&self, p: &[f64]) -> Result<(Vec<f64>, Tape)> {
        if p.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: p.len(),
                context: "network input",
            });
        }
        let mut preact = self.input_w.mul_vec(p)?;
        for (t, b) in preact.iter_mut().zip(&self.input_b) {
            *t += b;
        }
        let mut z: Vec<f64> = preact.iter().map(|&t| leaky_relu(t)).collect();
        let mut tape = Tape {
            input: p.to_vec(),
            input_preact: preact,
            groups: Vec::with_capacity(self.groups.len()),
            shape_tag: (self.param_count(), self.output_dim()),
        };
        for g in &self.groups {
            let mut gt = GroupTape::default();
            if let Some(pl) = &g.prolong {
                gt.prolong_input = Some(z.clone());
                z = pl.q.mul_vec(&z)?;
            }
            for layer in &g.layers {
                let input = z.clone();
                let mut t = layer.w.mul_vec(&z)?;
                for (ti, bi) in t.iter_mut().zip(&layer.b) {
                    *ti += bi;
                }
                let s: Vec<f64> = t.iter().map(|&ti| leaky_relu(ti)).collect();
                // z += A s
                for (row, zi) in z.iter_mut().enumerate() {
                    let arow = layer.a.row(row);
                    let mut acc = 0.0;
                    for (aik, sk) in arow.iter().zip(&s) {
                        acc += aik * sk;
                    }
                    *zi += acc;
                }
                gt.layers.push(LayerTape { input, preact: t });
            }
            tape.groups.push(gt);
        }
        Ok((z, tape))
    }

    /// Exact vector-Jacobian product: gradient of cotangent' * output with
    /// respect to the flat parameter vector.
    pub fn backward(&self, tape: &Tape, cotangent: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.param_count()];
        self.backward_into(tape, cotangent, &mut grad)?;
        Ok(grad)
    }

    /// Like [`backward`](Self::backward) but accumulates (+=) into a caller
    /// buffer, avoiding a parameter-sized allocation per sample.
    pub fn backward_into(&self, tape: &Tape, cotangent: &[f64], grad: &mut [f64]) -> Result<()> {
        if tape.shape_tag != (self.param_count(), self.output_dim())
            || tape.groups.len() != self.groups.len()
        {
            return Err(Error::TapeMismatch(
                "tape was recorded by a network of a different shape".into(),
            ));
        }
        if cotangent.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: cotangent.len(),
                context: "backward cotangent",
            });
        }
        if grad.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: grad.len(),
                context: "backward accumulator",
            });
        }
        let offsets = self.layout_offsets();
        let mut g = cotangent.to_vec();

        for (gi, group) in self.groups.iter().enumerate().rev() {
            let gt = &tape.groups[gi];
            if gt.layers.len() != group.layers.len() {
                return Err(Error::TapeMismatch(format!(
                    "group {gi}: tape has {} layer records, network has {}",
                    gt.layers.len(),
                    group.layers.len()
                )));
            }
            for (li, layer) in group.layers.iter().enumerate().rev() {
                let rec = &gt.layers[li];
                let (n, r) = (layer.width(), layer.rank());
                let s: Vec<f64> = rec.preact.iter().map(|&t| leaky_relu(t)).collect();
                let off = offsets.layer(gi, li);
                // dA = outer(g, s)
                for row in 0..n {
                    let base = off + row * r;
                    for k in 0..r {
                        grad[base + k] += g[row] * s[k];
                    }
                }
                // h = (A' g) .* sigma'(t)
                let mut h = vec![0.0; r];
                for row in 0..n {
                    let arow = layer.a.row(row);
                    let grow = g[row];
                    for k in 0..r {
                        h[k] += arow[k] * grow;
                    }
                }
                for (hk, t) in h.iter_mut().zip(&rec.preact) {
                    *hk *= leaky_relu_prime(*t);
                }
                // dW = outer(h, z), db = h
                let woff = off + n * r;
                for k in 0..r {
                    let base = woff + k * n;
                    for col in 0..n {
                        grad[base + col] += h[k] * rec.input[col];
                    }
                }
                let boff = woff + r * n;
                for k in 0..r {
                    grad[boff + k] += h[k];
                }
                // cotangent through the residual branch: g += W' h
                for k in 0..r {
                    let wrow = layer.w.row(k);
                    let hk = h[k];
                    for col in 0..n {
                        g[col] += wrow[col] * hk;
                    }
                }
            }
            if let Some(pl) = &group.prolong {
                let z_in = gt.prolong_input.as_ref().ok_or_else(|| {
                    Error::TapeMismatch(format!("group {gi}: missing prolongation record"))
                })?;
                let off = offsets.prolong(gi);
                let indptr = pl.q.indptr();
                let indices = pl.q.indices();
                for row in 0..pl.q.rows() {
                    let grow = g[row];
                    for k in indptr[row]..indptr[row + 1] {
                        grad[off + k] += grow * z_in[indices[k]];
                    }
                }
                g = pl.q.mul_transpose_vec(&g)?;
            }
        }
        // input layer: h = g .* sigma'(t)
        let h: Vec<f64> = g
            .iter()
            .zip(&tape.input_preact)
            .map(|(gi, t)| gi * leaky_relu_prime(*t))
            .collect();
        let d = self.input_dim();
        for (row, hrow) in h.iter().enumerate() {
            for (col, pcol) in tape.input.iter().enumerate() {
                grad[row * d + col] += hrow * pcol;
            }
        }
        let boff = self.input_w.rows() * d;
        for (k, hk) in h.iter().enumerate() {
            grad[boff + k] += hk;
        }
        Ok(())
    }

    /// Flat parameter vector: input W then b, then per group the
    /// prolongation values followed by each layer's A, W, b.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.input_w.data());
        out.extend_from_slice(&self.input_b);
        for g in &self.groups {
            if let Some(p) = &g.prolong {
                out.extend_from_slice(p.q.values());
            }
            for layer in &g.layers {
                out.extend_from_slice(layer.a.data());
                out.extend_from_slice(layer.w.data());
                out.extend_from_slice(&layer.b);
            }
        }
        out
    }

    pub fn set_params_flat(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: theta.len(),
                context: "flat parameter vector",
            });
        }
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&theta[pos..pos + dst.len()]);
            pos += dst.len();
        };
        take(self.input_w.data_mut());
        take(&mut self.input_b);
        for g in &mut self.groups {
            if let Some(p) = &mut g.prolong {
                take(p.q.values_mut());
            }
            for layer in &mut g.layers {
                take(layer.a.data_mut());
                take(layer.w.data_mut());
                take(&mut layer.b);
            }
        }
        Ok(())
    }

    fn layout_offsets(&self) -> Offsets {
        let mut prolong = Vec::with_capacity(self.groups.len());
        let mut layer = Vec::with_capacity(self.groups.len());
        let mut pos = self.input_w.rows() * self.input_w.cols() + self.input_b.len();
        for g in &self.groups {
            if let Some(p) = &g.prolong {
                prolong.push(pos);
                pos += p.q.nnz();
            } else {
                prolong.push(usize::MAX);
            }
            let mut this = Vec::with_capacity(g.layers.len());
            for l in &g.layers {
                this.push(pos);
                pos += l.param_count();
            }
            layer.push(this);
        }
        Offsets { prolong, layer }
    }
}

struct Offsets {
    prolong: Vec<usize>,
    layer: Vec<Vec<usize>>,
}

impl Offsets {
    fn prolong(&self, group: usize) -> usize {
        self.prolong[group]
    }

    fn layer(&self, group: usize, layer: usize) -> usize {
        self.layer[group][layer]
    }
}

// ---------------------------------------------------------------------------
// checkpoint io: versioned little-endian binary, bit-exact round trip

const CHECKPOINT_MAGIC: &[u8; 4] = b"HNET";
const CHECKPOINT_VERSION: u32 = 1;

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64s(w: &mut impl Write, vs: &[f64]) -> std::io::Result<()> {
    write_u64(w, vs.len() as u64)?;
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_u64s(w: &mut impl Write, vs: &[usize]) -> std::io::Result<()> {
    write_u64(w, vs.len() as u64)?;
    for &v in vs {
        write_u64(w, v as u64)?;
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s(r: &mut impl Read) -> Result<Vec<f64>> {
    let n = read_u64(r)? as usize;
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

fn read_u64s(r: &mut impl Read) -> Result<Vec<usize>> {
    let n = read_u64(r)? as usize;
    (0..n).map(|_| read_u64(r).map(|v| v as usize)).collect()
}

impl HybridNetwork {
    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_u64(&mut w, self.seed)?;
        write_u64(&mut w, self.insertions)?;
        write_u64(&mut w, self.input_w.rows() as u64)?;
        write_u64(&mut w, self.input_w.cols() as u64)?;
        write_u64(&mut w, self.groups.len() as u64)?;
        for g in &self.groups {
            write_u64(&mut w, g.width as u64)?;
            write_u64(&mut w, g.rank as u64)?;
            match &g.prolong {
                Some(p) => {
                    w.write_all(&[1u8])?;
                    write_u64(&mut w, p.q.rows() as u64)?;
                    write_u64(&mut w, p.q.cols() as u64)?;
                    write_u64s(&mut w, p.q.indptr())?;
                    write_u64s(&mut w, p.q.indices())?;
                }
                None => w.write_all(&[0u8])?,
            }
            write_u64(&mut w, g.layers.len() as u64)?;
        }
        write_f64s(&mut w, &self.params_flat())?;
        Ok(())
    }

    pub fn load_checkpoint(path: &std::path::Path) -> Result<HybridNetwork> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut ver = [0u8; 4];
        r.read_exact(&mut ver)?;
        if u32::from_le_bytes(ver) != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                u32::from_le_bytes(ver)
            )));
        }
        let seed = read_u64(&mut r)?;
        let insertions = read_u64(&mut r)?;
        let n1 = read_u64(&mut r)? as usize;
        let d = read_u64(&mut r)? as usize;
        let n_groups = read_u64(&mut r)? as usize;
        let mut groups = Vec::with_capacity(n_groups);
        for _ in 0..n_groups {
            let width = read_u64(&mut r)? as usize;
            let rank = read_u64(&mut r)? as usize;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let prolong = if tag[0] == 1 {
                let rows = read_u64(&mut r)? as usize;
                let cols = read_u64(&mut r)? as usize;
                let indptr = read_u64s(&mut r)?;
                let indices = read_u64s(&mut r)?;
                let nnz = indices.len();
                Some(ProlongLayer {
                    q: SparseMatrix::from_raw(rows, cols, indptr, indices, vec![0.0; nnz]),
                })
            } else {
                None
            };
            let n_layers = read_u64(&mut r)? as usize;
            groups.push(Group {
                prolong,
                layers: (0..n_layers).map(|_| ResLayer::zeros(width, rank)).collect(),
                width,
                rank,
            });
        }
        let theta = read_f64s(&mut r)?;
        let mut net = HybridNetwork {
            input_w: DenseMatrix::zeros(n1, d),
            input_b: vec![0.0; n1],
            groups,
            seed,
            insertions,
        };
        net.set_params_flat(&theta)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    #[test]
    fn leaky_relu_values() {
        assert_eq!(leaky_relu(2.0), 2.0);
        assert_eq!(leaky_relu(-2.0), -0.002);
        assert_eq!(leaky_relu(0.0), 0.0);
        assert_eq!(leaky_relu_prime(3.0), 1.0);
        assert_eq!(leaky_relu_prime(-3.0), 1e-3);
        assert_eq!(leaky_relu_prime(0.0), 1.0);
    }

    fn toy_prolong() -> SparseMatrix {
        // 6 x 4, a P1-like pattern
        SparseMatrix::from_triplets(
            6,
            4,
            &[
                (0, 0, 1.0),
                (1, 1, 1.0),
                (2, 2, 1.0),
                (3, 3, 1.0),
                (4, 0, 0.5),
                (4, 1, 0.5),
                (5, 2, 0.5),
                (5, 3, 0.5),
            ],
        )
    }

    fn toy_net(seed: u64) -> HybridNetwork {
        init_network(
            2,
            &[4, 6],
            vec![None, Some(toy_prolong())],
            3,
            &[1, 2],
            seed,
        )
    }

    #[test]
    fn zero_initialized_residual_layers_are_identities() {
        let net = toy_net(7);
        // with zero res layers the output is the prolonged input image
        let p = [0.3, -1.2];
        let (out, _) = net.forward(&p).unwrap();
        let mut z: Vec<f64> = net
            .input_w
            .mul_vec(&p)
            .unwrap()
            .iter()
            .zip(&net.input_b)
            .map(|(t, b)| leaky_relu(t + b))
            .collect();
        z = toy_prolong().mul_vec(&z).unwrap();
        assert_eq!(out, z);
    }

    #[test]
    fn equal_seeds_give_bit_identical_parameters() {
        assert_eq!(toy_net(42).params_flat(), toy_net(42).params_flat());
        assert_ne!(toy_net(42).params_flat(), toy_net(43).params_flat());
    }

    #[test]
    fn parameter_count_by_shape_arithmetic() {
        let net = toy_net(1);
        // input: 4*2 + 4; group 1: one layer at width 4 rank 3; group 2:
        // prolongation nnz 8 plus two layers at width 6 rank 3
        let expect = (4 * 2 + 4) + (4 * 3 + 3 * 4 + 3) + 8 + 2 * (6 * 3 + 3 * 6 + 3);
        assert_eq!(net.param_count(), expect);
        assert_eq!(net.params_flat().len(), expect);
    }

    #[test]
    fn insert_layer_is_output_invariant_and_grows_parameters() {
        let mut net = toy_net(3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        // give the existing layers nonzero weights first
        let theta: Vec<f64> = (0..net.param_count())
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        net.set_params_flat(&theta).unwrap();
        let inputs: Vec<[f64; 2]> = (0..10)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let before: Vec<Vec<f64>> = inputs
            .iter()
            .map(|p| net.forward(p).unwrap().0)
            .collect();
        let count_before = net.param_count();
        net.insert_layer(1);
        assert_eq!(net.param_count(), count_before + (6 * 3 + 3 * 6 + 3));
        for (p, want) in inputs.iter().zip(&before) {
            let (got, _) = net.forward(p).unwrap();
            assert_eq!(&got, want, "output changed by zero-init insertion");
        }
    }

    #[test]
    fn output_is_affine_in_a() {
        // doubling A of one layer exactly doubles the residual branch
        let mut net = toy_net(5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let theta: Vec<f64> = (0..net.param_count())
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        net.set_params_flat(&theta).unwrap();
        // zero all layers except group 0 layer 0 so the branch is isolated
        for g in 1..net.groups.len() {
            for l in &mut net.groups[g].layers {
                *l = ResLayer::zeros(l.width(), l.rank());
            }
        }
        let p = [0.4, 0.9];
        let (base, _) = net.forward(&p).unwrap();
        let a0 = net.groups[0].layers[0].a.clone();
        for (dst, src) in net.groups[0].layers[0]
            .a
            .data_mut()
            .iter_mut()
            .zip(a0.data())
        {
            *dst = 2.0 * src;
        }
        let (doubled, _) = net.forward(&p).unwrap();
        // identify the branch by zeroing A
        for v in net.groups[0].layers[0].a.data_mut() {
            *v = 0.0;
        }
        let (trunk, _) = net.forward(&p).unwrap();
        for i in 0..base.len() {
            let branch = base[i] - trunk[i];
            assert!(
                (doubled[i] - (trunk[i] + 2.0 * branch)).abs() <= 1e-12 * (1.0 + branch.abs()),
                "component {i}"
            );
        }
    }

    #[test]
    fn forward_backward_is_deterministic() {
        let mut net = toy_net(23);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        let theta: Vec<f64> = (0..net.param_count())
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        net.set_params_flat(&theta).unwrap();
        let p = [0.1, -0.7];
        let (o1, t1) = net.forward(&p).unwrap();
        let (o2, t2) = net.forward(&p).unwrap();
        assert_eq!(o1, o2);
        let cot: Vec<f64> = (0..o1.len()).map(|i| (i as f64 + 1.0) * 0.1).collect();
        assert_eq!(
            net.backward(&t1, &cot).unwrap(),
            net.backward(&t2, &cot).unwrap()
        );
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let net = toy_net(2);
        let (out, tape) = net.forward(&[0.5, 0.5]).unwrap();
        let grad = net.backward(&tape, &vec![0.0; out.len()]).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_dense_layer_gradient_is_outer_product() {
        // network with one group, no layers: output = sigma(W p + b)
        let net = init_network(2, &[3], vec![None], 1, &[0], 9);
        let p = [0.7, -0.2];
        let (out, tape) = net.forward(&p).unwrap();
        let cot = [1.0, -2.0, 0.5];
        let grad = net.backward(&tape, &cot).unwrap();
        // dW[i][j] = cot_i * sigma'(t_i) * p_j, db[i] = cot_i * sigma'(t_i)
        let mut t = net.input_w.mul_vec(&p).unwrap();
        for (ti, bi) in t.iter_mut().zip(&net.input_b) {
            *ti += bi;
        }
        for i in 0..3 {
            let h = cot[i] * leaky_relu_prime(t[i]);
            for j in 0..2 {
                assert!((grad[i * 2 + j] - h * p[j]).abs() < 1e-15);
            }
            assert!((grad[6 + i] - h).abs() < 1e-15);
        }
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut net = toy_net(31);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(37);
        let theta: Vec<f64> = (0..net.param_count())
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        net.set_params_flat(&theta).unwrap();
        let p = [0.35, -0.8];
        let cot: Vec<f64> = (0..net.output_dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let (_, tape) = net.forward(&p).unwrap();
        let grad = net.backward(&tape, &cot).unwrap();
        let scalar = |net: &mut HybridNetwork, theta: &[f64]| -> f64 {
            net.set_params_flat(theta).unwrap();
            let (out, _) = net.forward(&p).unwrap();
            out.iter().zip(&cot).map(|(o, c)| o * c).sum()
        };
        let h = 1e-5;
        let mut checked = 0;
        for k in (0..theta.len()).step_by(theta.len() / 40 + 1) {
            // skip coordinates whose preactivation sits near the kink
            let mut tp = theta.clone();
            tp[k] += h;
            let fp = scalar(&mut net, &tp);
            tp[k] -= 2.0 * h;
            let fm = scalar(&mut net, &tp);
            let fd = (fp - fm) / (2.0 * h);
            let diff = (grad[k] - fd).abs();
            assert!(
                diff <= 1e-5 * (1.0 + fd.abs().max(grad[k].abs())),
                "coordinate {k}: analytic {} vs fd {fd}",
                grad[k]
            );
            checked += 1;
        }
        assert!(checked >= 20);
        net.set_params_flat(&theta).unwrap();
    }

    #[test]
    fn prolongation_pattern_is_preserved_by_updates() {
        let mut net = toy_net(41);
        let pattern_before: Vec<(usize, usize)> = net.groups[1]
            .prolong
            .as_ref()
            .unwrap()
            .q
            .iter()
            .map(|(r, c, _)| (r, c))
            .collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        for _ in 0..5 {
            let theta: Vec<f64> = (0..net.param_count())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            net.set_params_flat(&theta).unwrap();
        }
        let q = &net.groups[1].prolong.as_ref().unwrap().q;
        let pattern_after: Vec<(usize, usize)> = q.iter().map(|(r, c, _)| (r, c)).collect();
        assert_eq!(pattern_before, pattern_after);
        // entries outside the pattern were never materialized, so a dense
        // reconstruction has exact zeros there
        let dense = q.to_dense();
        for r in 0..dense.rows() {
            for c in 0..dense.cols() {
                if !pattern_before.contains(&(r, c)) {
                    assert_eq!(dense[(r, c)], 0.0);
                }
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let mut net = toy_net(53);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(59);
        let theta: Vec<f64> = (0..net.param_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        net.set_params_flat(&theta).unwrap();
        let dir = std::env::temp_dir().join(format!("hnet-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.ckpt");
        net.save_checkpoint(&path).unwrap();
        let loaded = HybridNetwork::load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params_flat(), net.params_flat());
        assert_eq!(loaded.seed, net.seed);
        let p = [0.2, 0.4];
        assert_eq!(loaded.forward(&p).unwrap().0, net.forward(&p).unwrap().0);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn tape_mismatch_is_detected() {
        let net = toy_net(61);
        let mut other = toy_net(61);
        other.insert_layer(0);
        let (_, tape) = net.forward(&[0.1, 0.2]).unwrap();
        let cot = vec![1.0; other.output_dim()];
        assert!(other.backward(&tape, &cot).is_err());
    }
}
