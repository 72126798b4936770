//! Triangular moire lattice geometry and initial exciton / electron fillings.
//!
//! Sites are labelled by integer Bravais coordinates `(n, m)` with
//! `0 <= n < n_cols`, `0 <= m < n_rows`, stored row-major (`index = m * n_cols + n`).
//! The position of site `(n, m)` is `n a (1, 0) + m a (1/2, sqrt(3)/2)` in units
//! of the optical wavelength. Boundaries are open.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Commensurate ordered exciton arrangements on the triangular lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// 2x2 superlattice, `n` and `m` both even.
    Quarter,
    /// sqrt(3) x sqrt(3) sublattice, `(n + 2m) mod 3 == 0`.
    Third,
    /// Row stripes, `m` even.
    Half,
    /// Honeycomb complement of [`Pattern::Third`].
    TwoThirds,
    Full,
}

impl Pattern {
    pub const ALL: [Pattern; 5] = [
        Pattern::Quarter,
        Pattern::Third,
        Pattern::Half,
        Pattern::TwoThirds,
        Pattern::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Quarter => "quarter",
            Pattern::Third => "third",
            Pattern::Half => "half",
            Pattern::TwoThirds => "two_thirds",
            Pattern::Full => "full",
        }
    }

    /// Nominal filling fraction on a commensurate lattice.
    pub fn fraction(self) -> f64 {
        match self {
            Pattern::Quarter => 0.25,
            Pattern::Third => 1.0 / 3.0,
            Pattern::Half => 0.5,
            Pattern::TwoThirds => 2.0 / 3.0,
            Pattern::Full => 1.0,
        }
    }

    pub fn contains(self, n: usize, m: usize) -> bool {
        match self {
            Pattern::Quarter => n.is_multiple_of(2) && m.is_multiple_of(2),
            Pattern::Third => (n + 2 * m).is_multiple_of(3),
            Pattern::Half => m.is_multiple_of(2),
            Pattern::TwoThirds => !(n + 2 * m).is_multiple_of(3),
            Pattern::Full => true,
        }
    }

    /// Bravais translations `(dn, dm)` that map the pattern onto itself.
    pub fn superlattice_translations(self) -> [(usize, usize); 2] {
        match self {
            Pattern::Quarter => [(2, 0), (0, 2)],
            Pattern::Third | Pattern::TwoThirds => [(3, 0), (1, 1)],
            Pattern::Half => [(1, 0), (0, 2)],
            Pattern::Full => [(1, 0), (0, 1)],
        }
    }

    fn check_commensurate(self, n_rows: usize, n_cols: usize) -> Result<()> {
        let requirement = match self {
            Pattern::Quarter if !n_rows.is_multiple_of(2) || !n_cols.is_multiple_of(2) => {
                "n_rows and n_cols divisible by 2"
            }
            Pattern::Third | Pattern::TwoThirds if !n_cols.is_multiple_of(3) => "n_cols divisible by 3",
            Pattern::Half if !n_rows.is_multiple_of(2) => "n_rows divisible by 2",
            _ => return Ok(()),
        };
        Err(Error::Incommensurate {
            pattern: self.name(),
            requirement,
            n_rows,
            n_cols,
        })
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown pattern `{s}`"))
    }
}

/// How many electrons to dope into the sites left free by the excitons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Doping {
    /// `round(f_e * N)` electrons, spread evenly over the free sites.
    Fraction(f64),
    /// Every site without an exciton is blocked (`f_e = 1 - f_x`).
    Complementary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfiguration {
    pub n_rows: usize,
    pub n_cols: usize,
    pub a_over_lambda: f64,
    /// Site positions in units of the wavelength.
    pub positions: Vec<[f64; 2]>,
    /// Exciton present at `t = 0`.
    pub occupancy: Vec<bool>,
    /// Electron-doped site, excluded from the exciton dynamics.
    pub blocked: Vec<bool>,
    /// Seed used by [`random_filling`], if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub fn build_triangular(n_rows: usize, n_cols: usize, a_over_lambda: f64) -> Result<LatticeConfiguration> {
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::InvalidLattice(format!(
            "lattice dimensions must be positive, got {n_rows}x{n_cols}"
        )));
    }
    if !(a_over_lambda > 0.0 && a_over_lambda.is_finite()) {
        return Err(Error::InvalidLattice(format!(
            "lattice constant a/lambda must be positive, got {a_over_lambda}"
        )));
    }
    let half_sqrt3 = 3f64.sqrt() / 2.0;
    let mut positions = Vec::with_capacity(n_rows * n_cols);
    for m in 0..n_rows {
        for n in 0..n_cols {
            let (n, m) = (n as f64, m as f64);
            positions.push([a_over_lambda * (n + 0.5 * m), a_over_lambda * half_sqrt3 * m]);
        }
    }
    let n_sites = positions.len();
    Ok(LatticeConfiguration {
        n_rows,
        n_cols,
        a_over_lambda,
        positions,
        occupancy: vec![false; n_sites],
        blocked: vec![false; n_sites],
        seed: None,
    })
}

/// Occupy the canonical ordered pattern; the lattice must be commensurate.
pub fn ordered_filling(lattice: &LatticeConfiguration, pattern: Pattern) -> Result<LatticeConfiguration> {
    pattern.check_commensurate(lattice.n_rows, lattice.n_cols)?;
    ordered_filling_truncated(lattice, pattern)
}

/// Occupy the pattern sites that fit inside the (open) lattice, without a
/// commensurability check. The realised filling is [`LatticeConfiguration::f_x`].
pub fn ordered_filling_truncated(
    lattice: &LatticeConfiguration,
    pattern: Pattern,
) -> Result<LatticeConfiguration> {
    let mut out = lattice.clone();
    for idx in 0..out.n_sites() {
        let (n, m) = out.coords(idx);
        let on = pattern.contains(n, m);
        if on && out.blocked[idx] {
            return Err(Error::Overfilled {
                requested: out.pattern_size(pattern),
                available: out.n_active(),
            });
        }
        out.occupancy[idx] = on;
    }
    Ok(out)
}

/// Occupy exactly `round(f_x * N)` unblocked sites, drawn uniformly without
/// replacement from a ChaCha8 stream seeded with `seed`.
pub fn random_filling(lattice: &LatticeConfiguration, f_x: f64, seed: u64) -> Result<LatticeConfiguration> {
    if !(0.0..=1.0).contains(&f_x) {
        return Err(Error::FillingOutOfRange(f_x));
    }
    let requested = (f_x * lattice.n_sites() as f64).round() as usize;
    let free: Vec<usize> = (0..lattice.n_sites()).filter(|&i| !lattice.blocked[i]).collect();
    if requested > free.len() {
        return Err(Error::Overfilled {
            requested,
            available: free.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = lattice.clone();
    out.occupancy.iter_mut().for_each(|o| *o = false);
    for k in rand::seq::index::sample(&mut rng, free.len(), requested) {
        out.occupancy[free[k]] = true;
    }
    out.seed = Some(seed);
    Ok(out)
}

/// Excitons on the pattern sites, electrons on the complementary sites.
///
/// Pattern sites are taken as they fit inside the open lattice (see
/// [`ordered_filling_truncated`]); electron sites never overlap excitons.
pub fn doped_configuration(
    lattice: &LatticeConfiguration,
    exciton_pattern: Pattern,
    doping: Doping,
) -> Result<LatticeConfiguration> {
    let mut clean = lattice.clone();
    clean.blocked.iter_mut().for_each(|b| *b = false);
    let mut out = ordered_filling_truncated(&clean, exciton_pattern)?;
    let free: Vec<usize> = (0..out.n_sites()).filter(|&i| !out.occupancy[i]).collect();
    let n_electrons = match doping {
        Doping::Complementary => free.len(),
        Doping::Fraction(f_e) => {
            if !(0.0..=1.0).contains(&f_e) {
                return Err(Error::FillingOutOfRange(f_e));
            }
            (f_e * out.n_sites() as f64).round() as usize
        }
    };
    if n_electrons > free.len() {
        return Err(Error::Overfilled {
            requested: n_electrons,
            available: free.len(),
        });
    }
    // evenly spaced picks among the free sites
    for k in 0..n_electrons {
        out.blocked[free[k * free.len() / n_electrons]] = true;
    }
    Ok(out)
}

impl LatticeConfiguration {
    pub fn n_sites(&self) -> usize {
        self.positions.len()
    }

    /// Bravais coordinates `(n, m)` of a site index.
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.n_cols, idx / self.n_cols)
    }

    pub fn index(&self, n: usize, m: usize) -> usize {
        m * self.n_cols + n
    }

    /// Indices of the sites that carry exciton degrees of freedom.
    pub fn active_sites(&self) -> Vec<usize> {
        (0..self.n_sites()).filter(|&i| !self.blocked[i]).collect()
    }

    pub fn n_active(&self) -> usize {
        self.blocked.iter().filter(|b| !**b).count()
    }

    pub fn n_occupied(&self) -> usize {
        self.occupancy.iter().filter(|o| **o).count()
    }

    pub fn n_blocked(&self) -> usize {
        self.blocked.iter().filter(|b| **b).count()
    }

    pub fn f_x(&self) -> f64 {
        self.n_occupied() as f64 / self.n_sites() as f64
    }

    pub fn f_e(&self) -> f64 {
        self.n_blocked() as f64 / self.n_sites() as f64
    }

    /// Occupancy restricted to the active sites, in active-site order.
    pub fn active_occupancy(&self) -> Vec<bool> {
        self.active_sites().into_iter().map(|i| self.occupancy[i]).collect()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let [xi, yi] = self.positions[i];
        let [xj, yj] = self.positions[j];
        (xi - xj).hypot(yi - yj)
    }

    /// Unordered nearest-neighbour pairs (separation equal to `a`).
    pub fn nearest_neighbors(&self) -> Vec<(usize, usize)> {
        let a = self.a_over_lambda;
        let mut pairs = Vec::new();
        for i in 0..self.n_sites() {
            for j in i + 1..self.n_sites() {
                if (self.distance(i, j) - a).abs() < 1e-9 * a {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }

    fn pattern_size(&self, pattern: Pattern) -> usize {
        (0..self.n_sites())
            .filter(|&i| {
                let (n, m) = self.coords(i);
                pattern.contains(n, m)
            })
            .count()
    }

    /// Check the structural invariants; used after deserialisation.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_rows * self.n_cols;
        if n == 0 || self.positions.len() != n || self.occupancy.len() != n || self.blocked.len() != n {
            return Err(Error::InvalidLattice(format!(
                "expected {n} sites in positions/occupancy/blocked"
            )));
        }
        if let Some(i) = (0..n).find(|&i| self.occupancy[i] && self.blocked[i]) {
            return Err(Error::InvalidLattice(format!("site {i} is both occupied and blocked")));
        }
        for i in 0..n {
            for j in i + 1..n {
                if self.distance(i, j) < 1e-12 {
                    return Err(Error::DuplicateSites(i, j));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let lattice: Self = serde_json::from_str(text)?;
        lattice.validate()?;
        Ok(lattice)
    }
}
