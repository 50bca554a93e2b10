//! The 4-prompt × 10-response toy world, its four initialisation scenarios,
//! and the preference-pair stream.

use std::fmt;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numfmt::g9;

pub const ON_POLICY_LIKELIHOOD: f64 = 0.12;
pub const OFF_POLICY_LIKELIHOOD: f64 = 0.02;

/// Response indices are partitioned into chosen, rejected and unseen blocks.
/// Prompt `i`'s optimal response is chosen response `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToySpace {
    pub n_prompts: usize,
    pub n_responses: usize,
    pub chosen: Range<usize>,
    pub rejected: Range<usize>,
    pub unseen: Range<usize>,
}

impl ToySpace {
    pub fn standard() -> Self {
        Self {
            n_prompts: 4,
            n_responses: 10,
            chosen: 0..4,
            rejected: 4..8,
            unseen: 8..10,
        }
    }

    pub fn optimal_of(&self, prompt: usize) -> usize {
        self.chosen.start + prompt
    }
}

impl Default for ToySpace {
    fn default() -> Self {
        Self::standard()
    }
}

/// Which sides of the preference data are sampled on-policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    /// chosen on, rejected on
    S1,
    /// chosen off, rejected on
    S2,
    /// chosen on, rejected off
    S3,
    /// chosen off, rejected off
    S4,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4];

    /// `(chosen_on_policy, rejected_on_policy)`.
    pub fn flags(&self) -> (bool, bool) {
        match self {
            Scenario::S1 => (true, true),
            Scenario::S2 => (false, true),
            Scenario::S3 => (true, false),
            Scenario::S4 => (false, false),
        }
    }

    pub fn number(&self) -> usize {
        match self {
            Scenario::S1 => 1,
            Scenario::S2 => 2,
            Scenario::S3 => 3,
            Scenario::S4 => 4,
        }
    }

    /// Accepts `1`..`4` or `s1`..`s4`.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.trim_start_matches('s') {
            "1" => Some(Scenario::S1),
            "2" => Some(Scenario::S2),
            "3" => Some(Scenario::S3),
            "4" => Some(Scenario::S4),
            _ => None,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.number())
    }
}

fn likelihood(on_policy: bool) -> f64 {
    if on_policy {
        ON_POLICY_LIKELIHOOD
    } else {
        OFF_POLICY_LIKELIHOOD
    }
}

/// Target output rows for the SFT fit. The residual mass is split evenly over
/// the unseen block; the last unseen entry absorbs rounding so rows sum to 1.
pub fn init_targets(space: &ToySpace, scenario: Scenario) -> Vec<Vec<f64>> {
    let (chosen_on, rejected_on) = scenario.flags();
    let mut row = vec![0.0; space.n_responses];
    for a in space.chosen.clone() {
        row[a] = likelihood(chosen_on);
    }
    for a in space.rejected.clone() {
        row[a] = likelihood(rejected_on);
    }
    let assigned: f64 = row.iter().sum();
    let n_unseen = space.unseen.len();
    let share = (1.0 - assigned) / n_unseen as f64;
    for a in space.unseen.clone() {
        row[a] = share;
    }
    if let Some(last) = space.unseen.clone().last() {
        let others: f64 = row
            .iter()
            .enumerate()
            .filter(|(a, _)| *a != last)
            .map(|(_, v)| v)
            .sum();
        row[last] = 1.0 - others;
    }
    vec![row; space.n_prompts]
}

/// Rows are prompts, columns are responses.
pub fn targets_csv(targets: &[Vec<f64>]) -> String {
    let n = targets.first().map_or(0, Vec::len);
    let mut out = String::from("prompt");
    for a in 0..n {
        out.push_str(&format!(",a{a}"));
    }
    out.push('\n');
    for (x, row) in targets.iter().enumerate() {
        out.push_str(&x.to_string());
        for v in row {
            out.push(',');
            out.push_str(&g9(*v));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PreferencePair {
    pub prompt: usize,
    pub chosen: usize,
    pub rejected: usize,
}

/// Where a pair's rejected response comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairingMode {
    /// Uniform over the designated rejected block.
    #[default]
    RejectedSet,
    /// Uniform over the other prompts' optimal responses.
    OtherChosen,
}

impl PairingMode {
    pub fn name(&self) -> &'static str {
        match self {
            PairingMode::RejectedSet => "rejected-set",
            PairingMode::OtherChosen => "other-chosen",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rejected-set" | "rejected_set" => Some(PairingMode::RejectedSet),
            "other-chosen" | "other_chosen" => Some(PairingMode::OtherChosen),
            _ => None,
        }
    }

    /// Every pair this mode can emit for `prompt`.
    pub fn candidates(&self, space: &ToySpace, prompt: usize) -> Vec<usize> {
        match self {
            PairingMode::RejectedSet => space.rejected.clone().collect(),
            PairingMode::OtherChosen => space
                .chosen
                .clone()
                .filter(|&a| a != space.optimal_of(prompt))
                .collect(),
        }
    }
}

/// Seeded pair stream. Prompts cycle 0, 1, 2, 3, ... across batches.
#[derive(Debug, Clone)]
pub struct PairSampler {
    space: ToySpace,
    mode: PairingMode,
    rng: ChaCha8Rng,
    next_prompt: usize,
}

impl PairSampler {
    pub fn new(space: ToySpace, mode: PairingMode, rng: ChaCha8Rng) -> Self {
        Self {
            space,
            mode,
            rng,
            next_prompt: 0,
        }
    }

    pub fn from_seed(space: ToySpace, mode: PairingMode, seed: u64) -> Self {
        Self::new(space, mode, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn sample(&mut self, batch_size: usize) -> Vec<PreferencePair> {
        (0..batch_size)
            .map(|_| {
                let prompt = self.next_prompt;
                self.next_prompt = (self.next_prompt + 1) % self.space.n_prompts;
                let candidates = self.mode.candidates(&self.space, prompt);
                let rejected = candidates[self.rng.random_range(0..candidates.len())];
                PreferencePair {
                    prompt,
                    chosen: self.space.optimal_of(prompt),
                    rejected,
                }
            })
            .collect()
    }
}

/// Every pair a sampler in `mode` can produce, in prompt-major order.
pub fn all_pairs(space: &ToySpace, mode: PairingMode) -> Vec<PreferencePair> {
    (0..space.n_prompts)
        .flat_map(|prompt| {
            mode.candidates(space, prompt)
                .into_iter()
                .map(move |rejected| PreferencePair {
                    prompt,
                    chosen: space.optimal_of(prompt),
                    rejected,
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_space_partitions_responses() {
        let s = ToySpace::standard();
        let mut seen = vec![0; s.n_responses];
        for a in s
            .chosen
            .clone()
            .chain(s.rejected.clone())
            .chain(s.unseen.clone())
        {
            seen[a] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
        let mut optimal: Vec<usize> = (0..4).map(|x| s.optimal_of(x)).collect();
        optimal.sort();
        assert_eq!(optimal, vec![0, 1, 2, 3]);
    }

    #[test]
    fn scenario_targets() {
        let s = ToySpace::standard();
        let s1 = init_targets(&s, Scenario::S1);
        for row in &s1 {
            assert!(row[..8].iter().all(|&v| v == 0.12));
            assert!((row[8] - 0.02).abs() < 1e-15 && (row[9] - 0.02).abs() < 1e-15);
        }
        let s4 = init_targets(&s, Scenario::S4);
        for row in &s4 {
            assert!(row[..8].iter().all(|&v| v == 0.02));
            assert!((row[8] - 0.42).abs() < 1e-15 && (row[9] - 0.42).abs() < 1e-15);
        }
        let s2 = init_targets(&s, Scenario::S2);
        assert_eq!(
            &s2[0][..8],
            &[0.02, 0.02, 0.02, 0.02, 0.12, 0.12, 0.12, 0.12]
        );
        let s3 = init_targets(&s, Scenario::S3);
        assert_eq!(
            &s3[0][..8],
            &[0.12, 0.12, 0.12, 0.12, 0.02, 0.02, 0.02, 0.02]
        );
        for sc in Scenario::ALL {
            for row in init_targets(&s, sc) {
                assert_eq!(row.iter().sum::<f64>(), 1.0, "{sc}");
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn scenario_parsing() {
        assert_eq!(Scenario::parse("1"), Some(Scenario::S1));
        assert_eq!(Scenario::parse("S4"), Some(Scenario::S4));
        assert_eq!(Scenario::parse("5"), None);
        assert_eq!(Scenario::S3.flags(), (true, false));
    }

    #[test]
    fn targets_csv_layout() {
        let csv = targets_csv(&init_targets(&ToySpace::standard(), Scenario::S1));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "prompt,a0,a1,a2,a3,a4,a5,a6,a7,a8,a9");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,0.12,"));
    }

    #[test]
    fn pairs_follow_the_diagonal_and_round_robin() {
        let mut sampler = PairSampler::from_seed(ToySpace::standard(), PairingMode::RejectedSet, 3);
        let pairs = sampler.sample(10);
        for (i, p) in pairs.iter().enumerate() {
            assert_eq!(p.prompt, i % 4);
            assert_eq!(p.chosen, p.prompt);
            assert!((4..8).contains(&p.rejected));
        }
        let mut other = PairSampler::from_seed(ToySpace::standard(), PairingMode::OtherChosen, 3);
        for p in other.sample(100) {
            assert!(p.rejected < 4 && p.rejected != p.prompt);
        }
    }

    #[test]
    fn rejected_draws_are_uniform() {
        let mut sampler =
            PairSampler::from_seed(ToySpace::standard(), PairingMode::RejectedSet, 11);
        let n = 400_000;
        let mut counts = [0usize; 4];
        for p in sampler.sample(n) {
            counts[p.rejected - 4] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // χ² with 3 degrees of freedom: mean 3, sd √6.
        assert!(chi2 < 3.0 + 3.0 * 6f64.sqrt(), "chi2 = {chi2}");
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let run = |seed| {
            PairSampler::from_seed(ToySpace::standard(), PairingMode::RejectedSet, seed).sample(64)
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn all_pairs_enumerates_the_dataset() {
        let s = ToySpace::standard();
        assert_eq!(all_pairs(&s, PairingMode::RejectedSet).len(), 16);
        assert_eq!(all_pairs(&s, PairingMode::OtherChosen).len(), 12);
    }
}
