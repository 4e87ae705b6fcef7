//! Experiment inputs: the Hadamard hard class and synthetic classes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{ClassFile, HypothesisClass, LabelDist, SeededRng};
use crate::error::{Error, Result};

/// Sylvester–Hadamard matrix of order `2^n`: `[[1,1],[1,-1]]^{⊗n}`.
pub fn hadamard(n: u32) -> Result<Vec<Vec<i32>>> {
    if n == 0 || n > 14 {
        return Err(Error::InvalidParameter {
            field: "n",
            message: format!("order exponent must be in 1..=14, got {n}"),
        });
    }
    let mut h = vec![vec![1i32]];
    for _ in 0..n {
        let size = h.len();
        let mut next = vec![vec![0i32; 2 * size]; 2 * size];
        for (i, row) in h.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                next[i][j] = v;
                next[i][j + size] = v;
                next[i + size][j] = v;
                next[i + size][j + size] = -v;
            }
        }
        h = next;
    }
    Ok(h)
}

/// Smallest horizon for which the two-point separation `a` stays at most 1.
pub fn hard_horizon_threshold(k: usize, epsilon: f64) -> f64 {
    k as f64 / (9.0 * hard_privacy_factor(epsilon))
}

fn hard_privacy_factor(epsilon: f64) -> f64 {
    (epsilon.exp_m1().powi(2)).min(1.0) * epsilon.exp()
}

/// `a = √(K / (9T·min{(e^ε−1)², 1}·e^ε))`.
pub fn hard_a(k: usize, horizon: usize, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter {
            field: "epsilon",
            message: format!("must be positive and finite, got {epsilon}"),
        });
    }
    if k == 0 {
        return Err(Error::InvalidParameter {
            field: "k",
            message: "needs at least one pair".into(),
        });
    }
    let minimum = hard_horizon_threshold(k, epsilon);
    if (horizon as f64) < minimum {
        return Err(Error::HorizonTooShort { horizon, minimum });
    }
    Ok((k as f64 / (9.0 * horizon as f64 * hard_privacy_factor(epsilon))).sqrt())
}

/// Two-point class over `N = 2^n` labels: pair `i` differs along column
/// `i + 1` of the Hadamard matrix by `a/N` per entry.
#[derive(Debug, Clone)]
pub struct HardInstance {
    pub n: u32,
    pub k: usize,
    pub a: f64,
    pub class: HypothesisClass,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HardInstanceFile {
    #[serde(flatten)]
    class: ClassFile,
    a: f64,
    n: u32,
}

/// Minimal `n` with `K ≤ 2^n − 1`.
fn order_for(k: usize) -> u32 {
    let mut n = 1;
    while (1usize << n) - 1 < k {
        n += 1;
    }
    n
}

pub fn build_hard_instance(k: usize, horizon: usize, epsilon: f64) -> Result<HardInstance> {
    let a = hard_a(k, horizon, epsilon)?;
    let n = order_for(k);
    let h = hadamard(n)?;
    let size = h.len();
    let nf = size as f64;
    let mut dists = Vec::with_capacity(2 * k);
    for i in 0..k {
        let col = i + 1;
        let first: Vec<f64> = (0..size)
            .map(|y| if h[y][col] == 1 { 0.0 } else { 2.0 / nf })
            .collect();
        let second: Vec<f64> = (0..size)
            .map(|y| first[y] + h[y][col] as f64 * a / nf)
            .collect();
        dists.push(LabelDist::from_probs(first)?);
        dists.push(LabelDist::from_probs(second)?);
    }
    Ok(HardInstance {
        n,
        k,
        a,
        class: HypothesisClass::constant(dists)?,
    })
}

impl HardInstance {
    pub fn labels(&self) -> usize {
        1 << self.n
    }

    /// `(p_{i,1}, p_{i,2})` for the 0-based pair index `i`.
    pub fn pair(&self, i: usize) -> (&LabelDist, &LabelDist) {
        let get = |j: usize| match &self.class.hypotheses()[j] {
            crate::domain::Hypothesis::Constant(p) => p,
            crate::domain::Hypothesis::Table(_) => unreachable!("hard classes are constant"),
        };
        (get(2 * i), get(2 * i + 1))
    }

    /// Closed form `ln(2/(2 − a/2))` of `KL(p_{i,1}, (p_{i,1}+p_{i,2})/2)`.
    pub fn mixture_kl_closed_form(&self) -> f64 {
        (2.0 / (2.0 - self.a / 2.0)).ln()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = HardInstanceFile {
            class: self.class.to_file(),
            a: self.a,
            n: self.n,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: HardInstanceFile = serde_json::from_str(text)?;
        let class = HypothesisClass::from_file(&file.class)?;
        if class.len() % 2 != 0 || (1usize << file.n) != class.label_count() {
            return Err(Error::InvalidClass(
                "hard instance needs an even class over 2^n labels".into(),
            ));
        }
        Ok(Self {
            n: file.n,
            k: class.len() / 2,
            a: file.a,
            class,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// K constant hypotheses with entries `E^{1/α}` (E standard exponential),
/// normalized. Large `α` gives near-uniform rows.
pub fn random_instance(
    k: usize,
    m: usize,
    alpha: f64,
    rng: &mut SeededRng,
) -> Result<HypothesisClass> {
    if k == 0 {
        return Err(Error::InvalidParameter {
            field: "k",
            message: "class must be non-empty".into(),
        });
    }
    if m < 2 {
        return Err(Error::InvalidParameter {
            field: "m",
            message: format!("needs at least two labels, got {m}"),
        });
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter {
            field: "alpha",
            message: format!("must be positive and finite, got {alpha}"),
        });
    }
    let mut dists = Vec::with_capacity(k);
    while dists.len() < k {
        let w: Vec<f64> = (0..m)
            .map(|_| (-rng.uniform_open_low().ln()).powf(1.0 / alpha))
            .collect();
        match LabelDist::from_weights(&w) {
            Ok(d) => dists.push(d),
            // every draw underflowed; redraw the row
            Err(Error::AllZero) => continue,
            Err(e) => return Err(e),
        }
    }
    HypothesisClass::constant(dists)
}

/// Hypothesis `j` is uniform on labels `j·M/K .. (j+1)·M/K`; requires `K | M`.
pub fn block_uniform_instance(k: usize, m: usize) -> Result<HypothesisClass> {
    if k == 0 || m < 2 || m % k != 0 {
        return Err(Error::InvalidParameter {
            field: "m",
            message: format!("need K >= 1 dividing M >= 2, got K={k}, M={m}"),
        });
    }
    let width = m / k;
    let dists = (0..k)
        .map(|j| {
            let w: Vec<f64> = (0..m)
                .map(|y| if y / width == j { 1.0 } else { 0.0 })
                .collect();
            LabelDist::from_weights(&w)
        })
        .collect::<Result<Vec<_>>>()?;
    HypothesisClass::constant(dists)
}

/// K point masses on K labels.
pub fn identity_instance(k: usize) -> Result<HypothesisClass> {
    block_uniform_instance(k, k)
}
