//! Blur kernels (point-spread functions) and basis kernel sets.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{ensure, Error, Result};

const SUM_TOLERANCE: f64 = 1e-6;

/// A square, odd-sized, non-negative kernel whose taps sum to one.
///
/// Taps are row-major; the center tap sits at `(size / 2, size / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    taps: Vec<f64>,
}

impl Kernel {
    /// Validates the taps as given.
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        ensure!(size % 2 == 1, Parameter, "kernel side must be odd, got {size}");
        ensure!(taps.len() == size * size, Dimension, "kernel of side {size} needs {} taps, got {}", size * size, taps.len());
        ensure!(taps.iter().all(|t| t.is_finite() && *t >= 0.0), Invariant, "kernel taps must be finite and non-negative");
        let sum: f64 = taps.iter().sum();
        ensure!((sum - 1.0).abs() <= SUM_TOLERANCE, Invariant, "kernel taps sum to {sum}, expected 1");
        Ok(Kernel { size, taps })
    }

    /// Zeroes negative taps and rescales to unit sum.
    pub fn normalized(size: usize, mut taps: Vec<f64>) -> Result<Self> {
        for t in taps.iter_mut() {
            if !t.is_finite() || *t < 0.0 {
                *t = 0.0;
            }
        }
        let sum: f64 = taps.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Numerical("kernel has no positive mass".into()));
        }
        taps.iter_mut().for_each(|t| *t /= sum);
        Self::new(size, taps)
    }

    pub fn delta(size: usize) -> Result<Self> {
        ensure!(size % 2 == 1, Parameter, "kernel side must be odd, got {size}");
        let mut taps = vec![0.0; size * size];
        taps[(size / 2) * size + size / 2] = 1.0;
        Self::new(size, taps)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    #[inline]
    pub fn tap(&self, row: usize, col: usize) -> f64 {
        self.taps[row * self.size + col]
    }

    /// Taps with their offsets `(dy, dx)` relative to the center.
    pub fn offsets(&self) -> impl Iterator<Item = (isize, isize, f64)> + '_ {
        let r = self.radius() as isize;
        self.taps.iter().enumerate().map(move |(i, &t)| ((i / self.size) as isize - r, (i % self.size) as isize - r, t))
    }

    /// Largest distance between the centers of two non-zero taps.
    pub fn support_diameter(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self.offsets().filter(|&(_, _, t)| t > 0.0).map(|(y, x, _)| (y as f64, x as f64)).collect();
        let mut best = 0.0f64;
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                best = best.max(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt());
            }
        }
        best
    }

    /// Re-embeds the kernel in a larger odd side, keeping the center.
    pub fn padded_to(&self, size: usize) -> Result<Kernel> {
        ensure!(size % 2 == 1 && size >= self.size, Parameter, "cannot pad side {} to {size}", self.size);
        let off = (size - self.size) / 2;
        let mut taps = vec![0.0; size * size];
        for r in 0..self.size {
            for c in 0..self.size {
                taps[(r + off) * size + c + off] = self.tap(r, c);
            }
        }
        Kernel::new(size, taps)
    }

    /// Plain-text form: a header line `S id`, then `S` rows of `S` taps.
    pub fn to_text(&self, id: usize) -> String {
        let mut s = format!("{} {}\n", self.size, id);
        for row in self.taps.chunks(self.size) {
            let line: Vec<String> = row.iter().map(|t| format!("{t}")).collect();
            writeln!(s, "{}", line.join(" ")).unwrap();
        }
        s
    }

    /// Parses the plain-text form, returning the kernel and its id.
    pub fn from_text(text: &str) -> Result<(Kernel, usize)> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty kernel file".into()))?;
        let mut head = header.split_whitespace();
        let parse_usize = |s: Option<&str>| -> Result<usize> {
            s.ok_or_else(|| Error::Format("kernel header must be `S id`".into()))?
                .parse()
                .map_err(|_| Error::Format(format!("bad kernel header `{header}`")))
        };
        let size = parse_usize(head.next())?;
        let id = parse_usize(head.next())?;
        let mut taps = Vec::with_capacity(size * size);
        for line in lines {
            for tok in line.split_whitespace() {
                taps.push(tok.parse::<f64>().map_err(|_| Error::Format(format!("bad kernel tap `{tok}`")))?);
            }
        }
        Ok((Kernel::new(size, taps)?, id))
    }

    pub fn save(&self, path: &Path, id: usize) -> Result<()> {
        std::fs::write(path, self.to_text(id)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Kernel, usize)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Largest absolute per-tap difference.
    pub fn max_tap_difference(&self, other: &Kernel) -> f64 {
        let size = self.size.max(other.size);
        let a = self.padded_to(size).expect("odd sizes");
        let b = other.padded_to(size).expect("odd sizes");
        a.taps.iter().zip(&b.taps).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    }
}

/// An ordered set of `R >= 1` kernels sharing one side length.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisKernelSet {
    kernels: Vec<Kernel>,
}

impl BasisKernelSet {
    pub fn new(kernels: Vec<Kernel>) -> Result<Self> {
        ensure!(!kernels.is_empty(), Parameter, "a basis needs at least one kernel");
        let s = kernels[0].size();
        ensure!(kernels.iter().all(|k| k.size() == s), Dimension, "basis kernels must share one side length");
        Ok(BasisKernelSet { kernels })
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels[0].size()
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn get(&self, r: usize) -> &Kernel {
        &self.kernels[r]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Kernel> {
        self.kernels.iter()
    }

    /// First `r` kernels, as a nested sub-basis.
    pub fn prefix(&self, r: usize) -> Result<Self> {
        ensure!(r >= 1 && r <= self.len(), Parameter, "prefix length {r} out of 1..={}", self.len());
        Self::new(self.kernels[..r].to_vec())
    }

    /// Kernel `perm[i]` becomes entry `i`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        ensure!(perm.len() == self.len(), Parameter, "permutation length mismatch");
        Self::new(perm.iter().map(|&p| self.kernels[p].clone()).collect())
    }

    /// Writes `k{r}.txt` files (1-based class numbers) into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::with_capacity(self.len());
        for (r, k) in self.kernels.iter().enumerate() {
            let p = dir.join(format!("k{}.txt", r + 1));
            k.save(&p, r + 1)?;
            paths.push(p);
        }
        Ok(paths)
    }

    pub fn load_files(paths: &[std::path::PathBuf]) -> Result<Self> {
        let kernels = paths.iter().map(|p| Kernel::load(p).map(|(k, _)| k)).collect::<Result<Vec<_>>>()?;
        Self::new(kernels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_is_valid() {
        let k = Kernel::delta(5).unwrap();
        assert_eq!(k.tap(2, 2), 1.0);
        assert_eq!(k.support_diameter(), 0.0);
    }

    #[test]
    fn rejects_invalid_kernels() {
        assert!(Kernel::new(2, vec![0.25; 4]).is_err());
        assert!(Kernel::new(1, vec![0.5]).is_err());
        assert!(Kernel::new(3, vec![-0.1, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(Kernel::normalized(1, vec![-1.0]).is_err());
    }

    #[test]
    fn normalization_clips_negatives() {
        let k = Kernel::normalized(3, vec![-1.0, 1.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(k.tap(0, 0), 0.0);
        assert!((k.tap(0, 1) - 0.25).abs() < 1e-15);
        assert!((k.tap(1, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let taps: Vec<f64> = (0..9).map(|i| (i as f64 + 0.3).sqrt()).collect();
        let k = Kernel::normalized(3, taps).unwrap();
        let (back, id) = Kernel::from_text(&k.to_text(7)).unwrap();
        assert_eq!(id, 7);
        assert_eq!(back, k);
        assert!(k.to_text(7).starts_with("3 7\n"));
    }

    #[test]
    fn malformed_text_is_a_format_error() {
        assert!(matches!(Kernel::from_text(""), Err(Error::Format(_))));
        assert!(matches!(Kernel::from_text("3 x\n"), Err(Error::Format(_))));
        assert!(matches!(Kernel::from_text("1 1\nabc"), Err(Error::Format(_))));
    }

    #[test]
    fn basis_requires_shared_side() {
        let a = Kernel::delta(3).unwrap();
        let b = Kernel::delta(5).unwrap();
        assert!(BasisKernelSet::new(vec![a.clone(), b]).is_err());
        assert!(BasisKernelSet::new(vec![]).is_err());
        let set = BasisKernelSet::new(vec![a.clone(), a]).unwrap();
        assert_eq!(set.prefix(1).unwrap().len(), 1);
    }
}
