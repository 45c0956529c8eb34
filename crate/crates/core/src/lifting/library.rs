use std::collections::HashSet;
use std::fmt;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One candidate scalar function of the (normalized) state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LibraryEntry {
    Constant,
    Sin { var: usize },
    Cos { var: usize },
    /// Product of two or more distinct coordinates.
    Product { vars: Vec<usize> },
    /// `x^exponent`; non-integer exponents use the shifted base `x + shift`.
    Power { var: usize, exponent: f64 },
    /// `(1 + 0.25 x^2)^exponent`.
    QuadraticRoot { var: usize, exponent: f64 },
    Exp { var: usize },
    /// `exp(-0.2 x^2)`.
    Gaussian { var: usize },
    /// `exp(-|x - center|^2 / width^2)`.
    Rbf { center: Vec<f64>, width: f64 },
    /// Probabilists' Hermite polynomial `He_degree(x)`.
    Hermite { var: usize, degree: u32 },
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

impl fmt::Display for LibraryEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use LibraryEntry::*;
        match self {
            Constant => write!(f, "1"),
            Sin { var } => write!(f, "sin(x{})", var + 1),
            Cos { var } => write!(f, "cos(x{})", var + 1),
            Product { vars } => {
                let names: Vec<String> = vars.iter().map(|v| format!("x{}", v + 1)).collect();
                write!(f, "{}", names.join("*"))
            }
            Power { var, exponent } => write!(f, "x{}^{}", var + 1, fmt_num(*exponent)),
            QuadraticRoot { var, exponent } => {
                write!(f, "(1+0.25*x{}^2)^{}", var + 1, fmt_num(*exponent))
            }
            Exp { var } => write!(f, "exp(x{})", var + 1),
            Gaussian { var } => write!(f, "exp(-0.2*x{}^2)", var + 1),
            Rbf { center, width } => {
                let c: Vec<String> = center.iter().map(|v| format!("{v:.4}")).collect();
                write!(f, "rbf([{}], {width:.4})", c.join(","))
            }
            Hermite { var, degree } => write!(f, "He{}(x{})", degree, var + 1),
        }
    }
}

/// `He_n` via the three-term recurrence `He_{k+1} = x He_k - k He_{k-1}`.
pub fn hermite(degree: u32, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if degree == 0 {
        return prev;
    }
    for k in 1..degree {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

impl LibraryEntry {
    /// True if the entry reproduces a raw state coordinate exactly.
    pub fn is_state_coordinate(&self) -> bool {
        match self {
            LibraryEntry::Product { vars } => vars.len() == 1,
            LibraryEntry::Power { exponent, .. } => *exponent == 1.0,
            LibraryEntry::Hermite { degree, .. } => *degree == 1,
            _ => false,
        }
    }

    fn max_var(&self) -> Option<usize> {
        use LibraryEntry::*;
        match self {
            Constant | Rbf { .. } => None,
            Product { vars } => vars.iter().copied().max(),
            Sin { var }
            | Cos { var }
            | Power { var, .. }
            | QuadraticRoot { var, .. }
            | Exp { var }
            | Gaussian { var }
            | Hermite { var, .. } => Some(*var),
        }
    }

    pub fn evaluate(&self, x: &[f64], power_shift: f64) -> Result<f64> {
        use LibraryEntry::*;
        let v = match self {
            Constant => 1.0,
            Sin { var } => x[*var].sin(),
            Cos { var } => x[*var].cos(),
            Product { vars } => vars.iter().map(|&i| x[i]).product(),
            Power { var, exponent } => {
                if exponent.fract() == 0.0 {
                    x[*var].powi(*exponent as i32)
                } else {
                    let base = x[*var] + power_shift;
                    if base <= 0.0 {
                        return Err(Error::LiftingDomain {
                            entry: self.to_string(),
                            value: x[*var],
                        });
                    }
                    base.powf(*exponent)
                }
            }
            QuadraticRoot { var, exponent } => (1.0 + 0.25 * x[*var] * x[*var]).powf(*exponent),
            Exp { var } => x[*var].exp(),
            Gaussian { var } => (-0.2 * x[*var] * x[*var]).exp(),
            Rbf { center, width } => {
                let d2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                (-d2 / (width * width)).exp()
            }
            Hermite { var, degree } => hermite(*degree, x[*var]),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::LiftingDomain {
                entry: self.to_string(),
                value: f64::NAN,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Constant,
    Sin,
    Cos,
    Products,
    Powers,
    QuadraticRoots,
    Exp,
    Gaussian,
    Rbf,
    Hermite,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "constant" => Family::Constant,
            "sin" => Family::Sin,
            "cos" => Family::Cos,
            "products" => Family::Products,
            "powers" => Family::Powers,
            "quadratic_roots" => Family::QuadraticRoots,
            "exp" => Family::Exp,
            "gaussian" => Family::Gaussian,
            "rbf" => Family::Rbf,
            "hermite" => Family::Hermite,
            other => return Err(Error::Config(format!("unknown library family `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LibraryConfig {
    pub families: Vec<Family>,
    /// Largest subset size for cross products; `None` means all coordinates.
    pub max_product_size: Option<usize>,
    pub powers: Vec<f64>,
    pub quadratic_root_exponents: Vec<f64>,
    pub rbf_count: usize,
    /// `None`: median pairwise distance between the chosen centers.
    pub rbf_width: Option<f64>,
    pub rbf_seed: u64,
    pub hermite_degrees: Vec<u32>,
    /// Shift applied to the base of non-integer powers.
    pub power_shift: f64,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self {
            families: vec![
                Family::Sin,
                Family::Cos,
                Family::Products,
                Family::Powers,
                Family::QuadraticRoots,
                Family::Exp,
                Family::Gaussian,
                Family::Rbf,
                Family::Hermite,
            ],
            max_product_size: None,
            powers: vec![-0.5, 0.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0],
            quadratic_root_exponents: vec![-0.5, 0.5],
            rbf_count: 9,
            rbf_width: None,
            rbf_seed: 0,
            hermite_degrees: vec![2, 3, 4],
            power_shift: 1e-3,
        }
    }
}

impl LibraryConfig {
    pub fn only(families: &[Family]) -> Self {
        Self {
            families: families.to_vec(),
            ..Self::default()
        }
    }
}

/// Ordered candidate functions over an `dim`-dimensional state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionLibrary {
    pub dim: usize,
    pub entries: Vec<LibraryEntry>,
    pub power_shift: f64,
}

/// Subsets of `0..n` with sizes in `2..=max_size`, by size then lexicographic.
fn product_subsets(n: usize, max_size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for size in 2..=max_size.min(n) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.clone());
            // advance to the next combination
            let mut i = size;
            while i > 0 && idx[i - 1] == n - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

fn median_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut d = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let s: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

impl FunctionLibrary {
    /// Builds the ordered library. `samples` (normalized states) are only
    /// needed when the RBF family is enabled; centers are drawn from them.
    pub fn build(config: &LibraryConfig, dim: usize, samples: &[Vec<f64>]) -> Result<Self> {
        if config.families.is_empty() {
            return Err(Error::Config("library has no enabled families".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("state dimension must be positive".into()));
        }
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for fam in &config.families {
            if !seen.insert(*fam) {
                continue;
            }
            match fam {
                Family::Constant => entries.push(LibraryEntry::Constant),
                Family::Sin => entries.extend((0..dim).map(|var| LibraryEntry::Sin { var })),
                Family::Cos => entries.extend((0..dim).map(|var| LibraryEntry::Cos { var })),
                Family::Products => {
                    let max = config.max_product_size.unwrap_or(dim);
                    entries.extend(
                        product_subsets(dim, max)
                            .into_iter()
                            .map(|vars| LibraryEntry::Product { vars }),
                    );
                }
                Family::Powers => {
                    for &exponent in &config.powers {
                        if exponent == 1.0 || exponent == 0.0 {
                            continue;
                        }
                        entries.extend((0..dim).map(|var| LibraryEntry::Power { var, exponent }));
                    }
                }
                Family::QuadraticRoots => {
                    for &exponent in &config.quadratic_root_exponents {
                        entries.extend(
                            (0..dim).map(|var| LibraryEntry::QuadraticRoot { var, exponent }),
                        );
                    }
                }
                Family::Exp => entries.extend((0..dim).map(|var| LibraryEntry::Exp { var })),
                Family::Gaussian => {
                    entries.extend((0..dim).map(|var| LibraryEntry::Gaussian { var }))
                }
                Family::Hermite => {
                    for &degree in &config.hermite_degrees {
                        if degree < 2 {
                            continue;
                        }
                        entries.extend((0..dim).map(|var| LibraryEntry::Hermite { var, degree }));
                    }
                }
                Family::Rbf => {
                    if config.rbf_count == 0 {
                        continue;
                    }
                    if samples.len() < config.rbf_count {
                        return Err(Error::InvalidArgument(format!(
                            "RBF family needs at least {} samples, got {}",
                            config.rbf_count,
                            samples.len()
                        )));
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(config.rbf_seed);
                    let mut picks = sample(&mut rng, samples.len(), config.rbf_count).into_vec();
                    picks.sort_unstable();
                    let centers: Vec<Vec<f64>> =
                        picks.into_iter().map(|i| samples[i].clone()).collect();
                    if centers.iter().any(|c| c.len() != dim) {
                        return Err(Error::dim("RBF center", dim, centers[0].len()));
                    }
                    let width = config
                        .rbf_width
                        .unwrap_or_else(|| median_pairwise_distance(&centers));
                    entries.extend(
                        centers
                            .into_iter()
                            .map(|center| LibraryEntry::Rbf { center, width }),
                    );
                }
            }
        }
        // Duplicate RBF centers can arise from repeated samples.
        let mut keys = HashSet::new();
        entries.retain(|e| keys.insert(serde_json::to_string(e).unwrap_or_default()));
        let lib = Self {
            dim,
            entries,
            power_shift: config.power_shift,
        };
        if let Some(bad) = lib.entries.iter().find(|e| e.max_var().is_some_and(|v| v >= dim)) {
            return Err(Error::InvalidArgument(format!("entry {bad} exceeds state dimension")));
        }
        Ok(lib)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Row of candidate values at a normalized state.
    pub fn evaluate_row(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.dim {
            return Err(Error::dim("library evaluation", self.dim, x.len()));
        }
        let mut row = DVector::zeros(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            row[i] = e.evaluate(x, self.power_shift)?;
        }
        Ok(row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_of_three_coordinates() {
        let lib = FunctionLibrary::build(&LibraryConfig::only(&[Family::Products]), 3, &[]).unwrap();
        let names: Vec<String> = lib.entries.iter().map(|e| e.to_string()).collect();
        assert_eq!(names, ["x1*x2", "x1*x3", "x2*x3", "x1*x2*x3"]);
        assert_eq!(lib.len(), 4);
    }

    #[test]
    fn product_size_cap() {
        let cfg = LibraryConfig {
            max_product_size: Some(2),
            ..LibraryConfig::only(&[Family::Products])
        };
        let lib = FunctionLibrary::build(&cfg, 9, &[]).unwrap();
        assert_eq!(lib.len(), 36);
    }

    #[test]
    fn default_library_for_nine_states() {
        let samples: Vec<Vec<f64>> = (0..30).map(|k| vec![k as f64 / 30.0; 9]).collect();
        let lib = FunctionLibrary::build(&LibraryConfig::default(), 9, &samples).unwrap();
        // 9 sin + 9 cos + 502 products + 81 powers + 18 roots + 9 exp
        // + 9 gaussian + 9 rbf + 27 hermite
        assert_eq!(lib.len(), 673);
        assert!(lib.entries.iter().all(|e| !e.is_state_coordinate()));
    }

    #[test]
    fn sin_family_vanishes_at_origin() {
        let lib = FunctionLibrary::build(&LibraryConfig::only(&[Family::Sin]), 9, &[]).unwrap();
        let row = lib.evaluate_row(&[0.0; 9]).unwrap();
        assert!(row.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_probe_is_one() {
        let lib = FunctionLibrary::build(
            &LibraryConfig::only(&[Family::Constant, Family::Sin]),
            2,
            &[],
        )
        .unwrap();
        for x in [[0.3, -2.0], [10.0, 4.0]] {
            assert_eq!(lib.evaluate_row(&x).unwrap()[0], 1.0);
        }
    }

    #[test]
    fn fractional_power_domain_guard() {
        let e = LibraryEntry::Power {
            var: 0,
            exponent: -0.5,
        };
        assert!(e.evaluate(&[0.0], 1e-3).is_ok());
        let err = e.evaluate(&[-0.5], 1e-3).unwrap_err();
        assert!(matches!(err, Error::LiftingDomain { entry, .. } if entry == "x1^-0.5"));
        // integer powers need no guard
        let sq = LibraryEntry::Power {
            var: 0,
            exponent: 2.0,
        };
        assert_eq!(sq.evaluate(&[-0.5], 1e-3).unwrap(), 0.25);
    }

    #[test]
    fn hermite_recurrence_matches_closed_forms() {
        for x in [-1.3, 0.0, 0.4, 2.2] {
            assert!((hermite(2, x) - (x * x - 1.0)).abs() < 1e-12);
            assert!((hermite(3, x) - (x.powi(3) - 3.0 * x)).abs() < 1e-12);
            assert!((hermite(4, x) - (x.powi(4) - 6.0 * x * x + 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_family_list_is_an_error() {
        assert!(FunctionLibrary::build(&LibraryConfig::only(&[]), 3, &[]).is_err());
    }

    #[test]
    fn rbf_needs_samples() {
        assert!(FunctionLibrary::build(&LibraryConfig::only(&[Family::Rbf]), 3, &[]).is_err());
    }
}
