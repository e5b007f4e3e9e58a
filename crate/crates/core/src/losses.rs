//! Hard-label cross entropy, soft-label cross entropy and KL divergence, with
//! their gradients with respect to the student's logits.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{softmax_unchecked, LabelDistribution};

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    HardCe,
    SoftCe,
    SoftKl,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::HardCe, LossKind::SoftCe, LossKind::SoftKl];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::HardCe => "hard-ce",
            LossKind::SoftCe => "soft-ce",
            LossKind::SoftKl => "soft-kl",
        }
    }

    pub fn uses_soft_targets(self) -> bool {
        !matches!(self, LossKind::HardCe)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hard-ce" | "hardce" | "ohe" | "hard" => Ok(LossKind::HardCe),
            "soft-ce" | "softce" | "ce" => Ok(LossKind::SoftCe),
            "soft-kl" | "softkl" | "kl" => Ok(LossKind::SoftKl),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss strategy {other:?} (expected hard-ce, soft-ce or soft-kl)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossStrategy {
    pub kind: LossKind,
    pub temperature: f64,
}

impl LossStrategy {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            temperature: 1.0,
        }
    }

    pub fn with_temperature(kind: LossKind, temperature: f64) -> Result<Self> {
        let s = Self { kind, temperature };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Hard(usize),
    Soft(LabelDistribution),
}

impl Target {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Target::Hard(_) => "hard",
            Target::Soft(_) => "soft",
        }
    }

    /// Label used for validation scoring: the hard label or the soft argmax.
    pub fn label(&self) -> usize {
        match self {
            Target::Hard(y) => *y,
            Target::Soft(q) => q.argmax().0,
        }
    }
}

#[inline]
fn clamped_ln(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0).ln()
}

pub fn ce_hard(p: &LabelDistribution, y: usize) -> Result<f64> {
    let probs = p.probs();
    if y >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label: y,
            k: probs.len(),
        });
    }
    Ok(-clamped_ln(probs[y]))
}

pub fn ce_soft(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    same_len(p, q)?;
    Ok(-p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(&pi, &qi)| if qi == 0.0 { 0.0 } else { qi * clamped_ln(pi) })
        .sum::<f64>())
}

/// `KL(q || p)` with `q` the teacher target and `p` the student prediction.
pub fn kl_div(q: &LabelDistribution, p: &LabelDistribution) -> Result<f64> {
    same_len(p, q)?;
    Ok(q.probs()
        .iter()
        .zip(p.probs())
        .map(|(&qi, &pi)| {
            if qi == 0.0 {
                0.0
            } else {
                qi * (qi.ln() - clamped_ln(pi))
            }
        })
        .sum())
}

pub fn entropy(q: &LabelDistribution) -> f64 {
    -q.probs()
        .iter()
        .map(|&qi| if qi == 0.0 { 0.0 } else { qi * qi.ln() })
        .sum::<f64>()
}

fn same_len(p: &LabelDistribution, q: &LabelDistribution) -> Result<()> {
    if p.k() != q.k() {
        return Err(Error::LengthMismatch {
            left: p.k(),
            right: q.k(),
        });
    }
    Ok(())
}

fn check_target(strategy: &LossStrategy, target: &Target, k: usize) -> Result<()> {
    match (strategy.kind, target) {
        (LossKind::HardCe, Target::Hard(y)) => {
            if *y >= k {
                return Err(Error::LabelOutOfRange { label: *y, k });
            }
        }
        (LossKind::SoftCe | LossKind::SoftKl, Target::Soft(q)) => {
            if q.k() != k {
                return Err(Error::LengthMismatch {
                    left: k,
                    right: q.k(),
                });
            }
        }
        (kind, t) => {
            return Err(Error::TargetMismatch {
                strategy: kind.name(),
                target: t.kind_name(),
            })
        }
    }
    Ok(())
}

/// Loss of `logits` under `strategy`, with the student distribution taken at
/// the strategy's temperature.
pub fn loss(strategy: &LossStrategy, logits: &[f64], target: &Target) -> Result<f64> {
    check_target(strategy, target, logits.len())?;
    let p = student_distribution(strategy, logits)?;
    match (strategy.kind, target) {
        (LossKind::HardCe, Target::Hard(y)) => ce_hard(&p, *y),
        (LossKind::SoftCe, Target::Soft(q)) => ce_soft(&p, q),
        (LossKind::SoftKl, Target::Soft(q)) => kl_div(q, &p),
        _ => unreachable!("checked above"),
    }
}

fn student_distribution(strategy: &LossStrategy, logits: &[f64]) -> Result<LabelDistribution> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite(format!("logits {logits:?}")));
    }
    let t = strategy.temperature;
    let scaled: Vec<f64> = logits.iter().map(|z| z / t).collect();
    Ok(LabelDistribution::new_unchecked(softmax_unchecked(&scaled)))
}

/// d loss / d logits: `(p - target) / T` with `p = softmax(logits / T)`.
pub fn grad_logits(strategy: &LossStrategy, logits: &[f64], target: &Target) -> Result<Vec<f64>> {
    check_target(strategy, target, logits.len())?;
    let mut out = vec![0.0; logits.len()];
    let p = student_distribution(strategy, logits)?;
    write_grad(strategy, p.probs(), target, &mut out);
    Ok(out)
}

/// Loss and logit gradient in one pass, without input validation.
pub(crate) fn loss_and_grad(
    strategy: &LossStrategy,
    logits: &[f64],
    target: &Target,
    grad: &mut [f64],
) -> f64 {
    let t = strategy.temperature;
    let scaled: Vec<f64> = logits.iter().map(|z| z / t).collect();
    let p = softmax_unchecked(&scaled);
    write_grad(strategy, &p, target, grad);
    match target {
        Target::Hard(y) => -clamped_ln(p[*y]),
        Target::Soft(q) => {
            let cross: f64 = -p
                .iter()
                .zip(q.probs())
                .map(|(&pi, &qi)| if qi == 0.0 { 0.0 } else { qi * clamped_ln(pi) })
                .sum::<f64>();
            match strategy.kind {
                LossKind::SoftKl => cross - entropy(q),
                _ => cross,
            }
        }
    }
}

fn write_grad(strategy: &LossStrategy, p: &[f64], target: &Target, out: &mut [f64]) {
    let inv_t = 1.0 / strategy.temperature;
    match target {
        Target::Hard(y) => {
            for (i, (o, &pi)) in out.iter_mut().zip(p).enumerate() {
                let onehot = if i == *y { 1.0 } else { 0.0 };
                *o = (pi - onehot) * inv_t;
            }
        }
        Target::Soft(q) => {
            for ((o, &pi), &qi) in out.iter_mut().zip(p).zip(q.probs()) {
                *o = (pi - qi) * inv_t;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dist(p: &[f64]) -> LabelDistribution {
        LabelDistribution::new(p.to_vec()).unwrap()
    }

    fn random_dist<R: Rng>(rng: &mut R, k: usize) -> LabelDistribution {
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>().powi(3)).collect();
        let s: f64 = raw.iter().sum();
        LabelDistribution::new(raw.iter().map(|v| v / s).collect()).unwrap()
    }

    #[test]
    fn ce_hard_cases() {
        assert_eq!(ce_hard(&dist(&[0.0, 1.0]), 1).unwrap(), 0.0);
        approx::assert_abs_diff_eq!(
            ce_hard(&LabelDistribution::uniform(10), 3).unwrap(),
            10f64.ln(),
            epsilon = 1e-12
        );
        approx::assert_abs_diff_eq!(
            ce_hard(&dist(&[1.0, 0.0]), 1).unwrap(),
            1e12f64.ln(),
            epsilon = 1e-12
        );
        assert!(ce_hard(&dist(&[1.0, 0.0]), 2).is_err());
    }

    #[test]
    fn ce_soft_cases() {
        let p = dist(&[0.2, 0.5, 0.3]);
        assert_eq!(
            ce_soft(&p, &LabelDistribution::one_hot(3, 1)).unwrap(),
            ce_hard(&p, 1).unwrap()
        );
        let u = LabelDistribution::uniform(10);
        approx::assert_abs_diff_eq!(ce_soft(&u, &u).unwrap(), 10f64.ln(), epsilon = 1e-12);
        assert!(ce_soft(&p, &LabelDistribution::uniform(2)).is_err());
    }

    #[test]
    fn kl_cases() {
        let p = dist(&[0.2, 0.5, 0.3]);
        assert_eq!(kl_div(&p, &p).unwrap(), 0.0);
        approx::assert_abs_diff_eq!(
            kl_div(&dist(&[1.0, 0.0]), &dist(&[0.5, 0.5])).unwrap(),
            2f64.ln(),
            epsilon = 1e-15
        );
        assert!(kl_div(&p, &LabelDistribution::uniform(4)).is_err());
    }

    #[test]
    fn strategy_target_mismatch() {
        let hard = LossStrategy::new(LossKind::HardCe);
        let soft = LossStrategy::new(LossKind::SoftKl);
        let q = Target::Soft(LabelDistribution::uniform(3));
        assert!(matches!(
            grad_logits(&hard, &[0.0; 3], &q),
            Err(Error::TargetMismatch { .. })
        ));
        assert!(grad_logits(&soft, &[0.0; 3], &Target::Hard(0)).is_err());
        assert!(LossStrategy::with_temperature(LossKind::SoftKl, 0.0).is_err());
    }

    #[test]
    fn gradient_vanishes_at_target() {
        let logits = [0.3, -1.2, 2.0];
        let p = crate::model::softmax(&logits).unwrap();
        for kind in [LossKind::SoftCe, LossKind::SoftKl] {
            let g =
                grad_logits(&LossStrategy::new(kind), &logits, &Target::Soft(p.clone())).unwrap();
            assert!(g.iter().all(|v| v.abs() < 1e-15));
        }
        // Hard target reached in the limit of a dominant logit.
        let g = grad_logits(
            &LossStrategy::new(LossKind::HardCe),
            &[800.0, 0.0],
            &Target::Hard(0),
        )
        .unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn finite_difference_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for trial in 0..300 {
            let k = rng.random_range(2..12);
            let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0..4.0)).collect();
            let kind = LossKind::ALL[trial % 3];
            let t = [1.0, 0.5, 2.5][trial % 3];
            let strategy = LossStrategy::with_temperature(kind, t).unwrap();
            let target = if kind == LossKind::HardCe {
                Target::Hard(rng.random_range(0..k))
            } else {
                Target::Soft(random_dist(&mut rng, k))
            };
            let g = grad_logits(&strategy, &logits, &target).unwrap();
            for i in 0..k {
                let mut plus = logits.clone();
                let mut minus = logits.clone();
                plus[i] += h;
                minus[i] -= h;
                let fd = (loss(&strategy, &plus, &target).unwrap()
                    - loss(&strategy, &minus, &target).unwrap())
                    / (2.0 * h);
                // Central differences at this step carry ~1e-9 absolute
                // rounding noise, so tiny gradients are compared absolutely.
                let rel = (fd - g[i]).abs() / g[i].abs().max(fd.abs()).max(1e-2);
                worst = worst.max(rel);
            }
        }
        assert!(worst <= 1e-6, "worst relative error {worst}");
    }

    proptest! {
        #[test]
        fn kl_ce_entropy_identity(seed in any::<u64>(), k in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_dist(&mut rng, k);
            let q = random_dist(&mut rng, k);
            let kl = kl_div(&q, &p).unwrap();
            let ce = ce_soft(&p, &q).unwrap();
            prop_assert!((kl - ce + entropy(&q)).abs() <= 1e-12);
            prop_assert!(kl >= -1e-12);
            prop_assert!(ce >= entropy(&q) - 1e-12);
        }

        #[test]
        fn soft_gradients_coincide_and_sum_to_zero(
            logits in proptest::collection::vec(-20f64..20.0, 2..10),
            seed in any::<u64>(),
            t in 0.2f64..5.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = Target::Soft(random_dist(&mut rng, logits.len()));
            let a = grad_logits(&LossStrategy::with_temperature(LossKind::SoftCe, t).unwrap(), &logits, &q).unwrap();
            let b = grad_logits(&LossStrategy::with_temperature(LossKind::SoftKl, t).unwrap(), &logits, &q).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            prop_assert!(a.iter().sum::<f64>().abs() <= 1e-12);
            let hard = grad_logits(&LossStrategy::with_temperature(LossKind::HardCe, t).unwrap(), &logits, &Target::Hard(0)).unwrap();
            prop_assert!(hard.iter().sum::<f64>().abs() <= 1e-12);
        }
    }
}
