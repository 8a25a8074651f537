// SPDX-License-Identifier: Apache-2.0

//! Verbosity and templatedness of function text, and the false-positive
//! association analyses built on them.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pylex::{scan, string_body, Token, TokenKind};
use crate::stats::{average_ranks, mean, pearson, percentile_interval, pop_sd, t_two_sided_p};
use crate::{Error, Result};

/// Lexical tokens of `source`: names and keywords, numbers, strings,
/// operators and punctuation, and whole comments. Layout is dropped.
/// Never fails; text that does not lex is still split best-effort.
pub fn tokenize(source: &str) -> Vec<&str> {
    scan(source)
        .tokens
        .into_iter()
        .filter(Token::is_lexical)
        .map(|t| t.text)
        .collect()
}

/// `1 - H / ln V` over the token frequency distribution, where `V` is the
/// number of distinct tokens. One when `V <= 1`.
pub fn templatedness<S: AsRef<str>>(tokens: &[S]) -> f64 {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in tokens {
        *counts.entry(t.as_ref()).or_default() += 1;
    }
    let v = counts.len();
    if v <= 1 {
        return 1.0;
    }
    let n = tokens.len() as f64;
    let mut freqs: Vec<usize> = counts.into_values().collect();
    freqs.sort_unstable();
    let h: f64 = freqs
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    (1.0 - h / (v as f64).ln()).clamp(0.0, 1.0)
}

/// The five unstandardised verbosity measures.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RawFeatures {
    pub avg_line_length: f64,
    pub blank_ratio: f64,
    pub comment_ratio: f64,
    pub docstring_length: f64,
    pub token_count: f64,
}

pub const FEATURE_NAMES: [&str; 5] = [
    "avg_line_length",
    "blank_ratio",
    "comment_ratio",
    "docstring_length",
    "token_count",
];

impl RawFeatures {
    pub fn of(source: &str) -> Self {
        let lines: Vec<&str> = source.lines().collect();
        let total = lines.len();
        if total == 0 {
            return RawFeatures::default();
        }
        let chars: usize = lines.iter().map(|l| l.chars().count()).sum();
        let blank = lines.iter().filter(|l| l.trim().is_empty()).count();
        let comment = lines
            .iter()
            .filter(|l| l.trim_start().starts_with('#'))
            .count();
        RawFeatures {
            avg_line_length: chars as f64 / total as f64,
            blank_ratio: blank as f64 / total as f64,
            comment_ratio: comment as f64 / total as f64,
            docstring_length: docstring_length(source) as f64,
            token_count: tokenize(source).len() as f64,
        }
    }

    fn as_array(&self) -> [f64; 5] {
        [
            self.avg_line_length,
            self.blank_ratio,
            self.comment_ratio,
            self.docstring_length,
            self.token_count,
        ]
    }
}

/// Characters of the first statement-position string literal (the body's
/// first statement for a function, the first statement otherwise).
pub fn docstring_length(source: &str) -> usize {
    let s = scan(source);
    let mut logical: Vec<Vec<Token<'_>>> = Vec::new();
    let mut cur = Vec::new();
    for t in s.tokens {
        match t.kind {
            TokenKind::Newline => {
                if !cur.is_empty() {
                    logical.push(std::mem::take(&mut cur));
                }
            }
            TokenKind::Comment | TokenKind::Nl | TokenKind::Indent | TokenKind::Dedent => {}
            _ => cur.push(t),
        }
    }
    if !cur.is_empty() {
        logical.push(cur);
    }
    let mut lines = logical.iter().skip_while(|l| l[0].is_op("@"));
    let Some(first) = lines.next() else {
        return 0;
    };
    let kw = if first[0].is_name("async") { first.get(1) } else { first.first() };
    let is_header = kw.is_some_and(|k| k.is_name("def") || k.is_name("class"));
    let candidate: &[Token<'_>] = if is_header {
        match header_colon(first) {
            Some(c) if c + 1 < first.len() => &first[c + 1..],
            Some(_) => match lines.next() {
                Some(l) => l,
                None => return 0,
            },
            None => return 0,
        }
    } else {
        first
    };
    if candidate.is_empty() || !candidate.iter().all(|t| t.kind == TokenKind::String) {
        return 0;
    }
    candidate.iter().map(|t| string_body(t.text).chars().count()).sum()
}

fn header_colon(line: &[Token<'_>]) -> Option<usize> {
    let mut depth = 0usize;
    for (i, t) in line.iter().enumerate() {
        if t.kind != TokenKind::Op {
            continue;
        }
        match t.text {
            "(" | "[" | "{" => depth += 1,
            ")" | "]" | "}" => depth = depth.saturating_sub(1),
            ":" if depth == 0 => return Some(i),
            _ => {}
        }
    }
    None
}

/// Per-feature mean and standard deviation over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub mean: [f64; 5],
    pub sd: [f64; 5],
}

impl CorpusStats {
    pub fn fit(rows: &[RawFeatures]) -> Self {
        let mut mean_ = [0.0; 5];
        let mut sd = [0.0; 5];
        for k in 0..5 {
            let col: Vec<f64> = rows.iter().map(|r| r.as_array()[k]).collect();
            mean_[k] = mean(&col);
            sd[k] = pop_sd(&col);
        }
        CorpusStats { mean: mean_, sd }
    }

    fn z(&self, raw: &RawFeatures) -> Result<[f64; 5]> {
        let x = raw.as_array();
        let mut z = [0.0; 5];
        for k in 0..5 {
            if !(self.sd[k] > 0.0) {
                return Err(Error::DegenerateFeature(FEATURE_NAMES[k].into()));
            }
            z[k] = (x[k] - self.mean[k]) / self.sd[k];
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerbosityFeatures {
    pub avg_line_length: f64,
    pub blank_ratio: f64,
    pub comment_ratio: f64,
    pub docstring_length: f64,
    pub token_count: f64,
    /// Mean z-score of line length, blank ratio, comment ratio, docstring length.
    pub composite_verbosity: f64,
    /// As above plus the token-count z-score.
    pub composite_verbosity_size: f64,
    pub templatedness: f64,
}

impl VerbosityFeatures {
    pub fn as_vec(&self) -> Vec<f64> {
        vec![
            self.avg_line_length,
            self.blank_ratio,
            self.comment_ratio,
            self.docstring_length,
            self.token_count,
            self.composite_verbosity,
            self.composite_verbosity_size,
            self.templatedness,
        ]
    }

    pub const NAMES: [&'static str; 8] = [
        "avg_line_length",
        "blank_ratio",
        "comment_ratio",
        "docstring_length",
        "token_count",
        "composite_verbosity",
        "composite_verbosity_size",
        "templatedness",
    ];
}

pub fn verbosity_features(source: &str, corpus: &CorpusStats) -> Result<VerbosityFeatures> {
    let raw = RawFeatures::of(source);
    let z = corpus.z(&raw)?;
    Ok(VerbosityFeatures {
        avg_line_length: raw.avg_line_length,
        blank_ratio: raw.blank_ratio,
        comment_ratio: raw.comment_ratio,
        docstring_length: raw.docstring_length,
        token_count: raw.token_count,
        composite_verbosity: z[..4].iter().sum::<f64>() / 4.0,
        composite_verbosity_size: z.iter().sum::<f64>() / 5.0,
        templatedness: templatedness(&tokenize(source)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spearman {
    pub rho: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Rank correlation (average ranks for ties) with the Student-t test on
/// `n - 2` degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::invalid("spearman needs two samples of equal length >= 3"));
    }
    let n = x.len();
    let rho = pearson(&average_ranks(x), &average_ranks(y)).ok_or(Error::ZeroRankVariance)?;
    let df = (n - 2) as f64;
    let t_stat = if rho.abs() >= 1.0 {
        rho.signum() * f64::INFINITY
    } else {
        rho * (df / (1.0 - rho * rho)).sqrt()
    };
    Ok(Spearman {
        rho,
        t_stat,
        p_value: t_two_sided_p(t_stat, df),
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecileBin {
    pub decile: usize,
    pub n: usize,
    pub feature_lo: f64,
    pub feature_hi: f64,
    pub mean_fp: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecileAnalysis {
    pub bins: Vec<DecileBin>,
    /// OLS slope of decile mean FP rate on decile number (1..=10).
    pub slope: f64,
    pub slope_ci: (f64, f64),
}

const BINS: usize = 10;

fn slope_on_index(means: &[f64]) -> f64 {
    let xs: Vec<f64> = (1..=means.len()).map(|i| i as f64).collect();
    let mx = mean(&xs);
    let my = mean(means);
    let num: f64 = xs.iter().zip(means).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

/// Mean false-positive rate per equal-count feature decile, with 95%
/// percentile-bootstrap intervals (flags resampled within each decile).
pub fn decile_fp_analysis(
    features: &[f64],
    fp_flags: &[bool],
    bootstrap_b: usize,
    seed: u64,
) -> Result<DecileAnalysis> {
    if features.len() != fp_flags.len() {
        return Err(Error::invalid("features and flags differ in length"));
    }
    let n = features.len();
    if n < BINS * BINS {
        return Err(Error::invalid(format!(
            "decile analysis needs at least {} observations, got {n}",
            BINS * BINS
        )));
    }
    if bootstrap_b == 0 {
        return Err(Error::invalid("bootstrap replications must be positive"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| features[a].total_cmp(&features[b]));
    let bins: Vec<&[usize]> = (0..BINS)
        .map(|b| &order[b * n / BINS..(b + 1) * n / BINS])
        .collect();
    let flag_means: Vec<f64> = bins
        .iter()
        .map(|ix| ix.iter().filter(|&&i| fp_flags[i]).count() as f64 / ix.len() as f64)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(bootstrap_b); BINS];
    let mut slopes = Vec::with_capacity(bootstrap_b);
    let mut means = vec![0.0; BINS];
    for _ in 0..bootstrap_b {
        for (b, ix) in bins.iter().enumerate() {
            let hits = (0..ix.len())
                .filter(|_| fp_flags[ix[rng.random_range(0..ix.len())]])
                .count();
            means[b] = hits as f64 / ix.len() as f64;
            draws[b].push(means[b]);
        }
        slopes.push(slope_on_index(&means));
    }

    let out_bins = bins
        .iter()
        .zip(draws)
        .enumerate()
        .map(|(b, (ix, d))| {
            let (lo, hi) = percentile_interval(d, 0.95);
            DecileBin {
                decile: b + 1,
                n: ix.len(),
                feature_lo: features[ix[0]],
                feature_hi: features[*ix.last().unwrap()],
                mean_fp: flag_means[b],
                ci_lo: lo,
                ci_hi: hi,
            }
        })
        .collect();
    Ok(DecileAnalysis {
        bins: out_bins,
        slope: slope_on_index(&flag_means),
        slope_ci: percentile_interval(slopes, 0.95),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn tokenize_basics() {
        assert_eq!(tokenize("x = 1"), vec!["x", "=", "1"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("f(a)  # note\n"), vec!["f", "(", "a", ")", "# note"]);
    }

    // Hand-counted fixture: every line lists its token count.
    const FIXTURE: [(&str, usize); 50] = [
        ("import os", 2),
        ("import sys as system", 4),
        ("from collections import defaultdict", 4),
        ("", 0),
        ("", 0),
        ("def load(path, mode='r'):", 10),
        ("    \"\"\"Read a file.\"\"\"", 1),
        ("    # open the handle", 1),
        ("    with open(path, mode) as fh:", 10),
        ("        data = fh.read()", 7),
        ("    return data", 2),
        ("", 0),
        ("", 0),
        ("class Counter:", 3),
        ("    def __init__(self):", 6),
        ("        self.counts = defaultdict(int)", 8),
        ("", 0),
        ("    def add(self, key, n=1):", 12),
        ("        self.counts[key] += n", 8),
        ("        return self", 2),
        ("", 0),
        ("    def top(self, k):", 8),
        ("        items = sorted(self.counts.items(),", 12),
        ("                       key=lambda kv: -kv[1])", 11),
        ("        return items[:k]", 6),
        ("", 0),
        ("", 0),
        ("def main(argv):", 6),
        ("    c = Counter()", 5),
        ("    for arg in argv[1:]:", 9),
        ("        if arg.startswith('-'):", 8),
        ("            continue", 1),
        ("        c.add(arg)", 6),
        ("    total = 0", 3),
        ("    while total < 10:", 5),
        ("        total += 2 ** 2", 5),
        ("    x = [i * i for i in range(5)]", 14),
        ("    y = {'a': 1, \"b\": 2.5}", 11),
        ("    z = (x, y) if x else None", 11),
        ("    print(f\"{total}\", file=system.stderr)", 10),
        ("    assert total >= 10, 'too small'", 6),
        ("    try:", 2),
        ("        os.remove('tmp')", 6),
        ("    except OSError as e:", 5),
        ("        pass", 1),
        ("    return c.top(3)", 7),
        ("", 0),
        ("", 0),
        ("if __name__ == '__main__':", 5),
        ("    main(system.argv)", 6),
    ];

    #[test]
    fn token_count_matches_hand_count() {
        let src: String = FIXTURE.iter().map(|(l, _)| format!("{l}\n")).collect();
        let expected: usize = FIXTURE.iter().map(|(_, n)| n).sum();
        assert_eq!(src.lines().count(), 50);
        for (line, n) in FIXTURE {
            assert_eq!(tokenize(line).len(), n, "line {line:?}");
        }
        assert_eq!(tokenize(&src).len(), expected);
    }

    #[test]
    fn blank_and_comment_ratios() {
        let src = "def f():\n    # c\n\n    a = 1\n\n    b = 2\n    c = 3\n    d = 4\n    e = 5\n    return a\n";
        let r = RawFeatures::of(src);
        assert_eq!(r.blank_ratio, 0.2);
        assert_eq!(r.comment_ratio, 0.1);
    }

    #[test]
    fn docstring_positions() {
        assert_eq!(docstring_length("def f():\n    \"\"\"Hello.\"\"\"\n    return 1\n"), 6);
        assert_eq!(docstring_length("@d\ndef f(): 'ab'\n"), 2);
        assert_eq!(docstring_length("def f():\n    x = 'no'\n"), 0);
        assert_eq!(docstring_length("'''mod'''\nx = 1\n"), 3);
    }

    #[test]
    fn templatedness_extremes() {
        assert_eq!(templatedness(&["a", "a", "a"]), 1.0);
        assert!(templatedness(&["a", "b", "c", "d"]).abs() < 1e-12);
        assert_eq!(templatedness::<&str>(&[]), 1.0);
    }

    #[test]
    fn zero_sd_names_the_feature() {
        let raws = vec![RawFeatures::of("x = 1\n"), RawFeatures::of("y = 22\n\n")];
        let stats = CorpusStats::fit(&raws);
        match verbosity_features("x = 1\n", &stats) {
            Err(Error::DegenerateFeature(name)) => assert_eq!(name, "comment_ratio"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn composites_average_z_scores() {
        let srcs = [
            "def a():\n    return 1\n",
            "def b():\n    '''doc'''\n    # c\n\n    return 2\n",
            "def c(x, y):\n    # one\n    # two\n    return x + y\n",
        ];
        let raws: Vec<_> = srcs.iter().map(|s| RawFeatures::of(s)).collect();
        let stats = CorpusStats::fit(&raws);
        let f = verbosity_features(srcs[1], &stats).unwrap();
        let z: Vec<f64> = (0..5)
            .map(|k| (raws[1].as_array()[k] - stats.mean[k]) / stats.sd[k])
            .collect();
        assert!((f.composite_verbosity - z[..4].iter().sum::<f64>() / 4.0).abs() < 1e-12);
        assert!((f.composite_verbosity_size - z.iter().sum::<f64>() / 5.0).abs() < 1e-12);
    }

    fn brute_force_spearman(x: &[f64], y: &[f64]) -> f64 {
        // rank_i = #{j: v_j < v_i} + (#{j: v_j == v_i} + 1) / 2
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|a| {
                    let less = v.iter().filter(|b| *b < a).count() as f64;
                    let eq = v.iter().filter(|b| *b == a).count() as f64;
                    less + (eq + 1.0) / 2.0
                })
                .collect()
        };
        let (rx, ry) = (rank(x), rank(y));
        let n = x.len() as f64;
        let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
        let mut num = 0.0;
        let mut dx = 0.0;
        let mut dy = 0.0;
        for i in 0..x.len() {
            num += (rx[i] - mx) * (ry[i] - my);
            dx += (rx[i] - mx) * (rx[i] - mx);
            dy += (ry[i] - my) * (ry[i] - my);
        }
        num / (dx * dy).sqrt()
    }

    #[test]
    fn spearman_fixture_matches_brute_force() {
        let x = [
            3.1, 0.4, 2.2, 5.0, 2.2, 7.7, 1.0, 9.9, 4.4, 0.4, 6.1, 8.0, 3.3, 2.2, 5.5, 7.0, 1.5,
            9.0, 4.0, 6.6,
        ];
        let y = [
            1.0, 2.0, 2.0, 4.5, 0.3, 8.0, 1.1, 7.5, 3.0, 2.0, 5.0, 9.0, 2.5, 1.2, 6.0, 6.0, 0.2,
            9.5, 4.0, 5.5,
        ];
        let s = spearman(&x, &y).unwrap();
        assert!((s.rho - brute_force_spearman(&x, &y)).abs() < 1e-12);
        let t = s.rho * (18.0 / (1.0 - s.rho * s.rho)).sqrt();
        assert!((s.t_stat - t).abs() < 1e-12);
        assert!(s.p_value < 1e-3);
    }

    #[test]
    fn spearman_monotone_cases_and_errors() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &[2.0, 4.0, 8.0, 16.0]).unwrap().rho, 1.0);
        assert_eq!(spearman(&x, &[9.0, 4.0, 1.0, 0.0]).unwrap().rho, -1.0);
        assert!(matches!(spearman(&x, &[1.0; 4]), Err(Error::ZeroRankVariance)));
        assert!(spearman(&x[..2], &x[..2]).is_err());
    }

    #[test]
    fn deciles_all_false() {
        let f: Vec<f64> = (0..200).map(f64::from).collect();
        let a = decile_fp_analysis(&f, &vec![false; 200], 200, 1).unwrap();
        for b in &a.bins {
            assert_eq!((b.mean_fp, b.ci_lo, b.ci_hi), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn deciles_top_indicator() {
        let f: Vec<f64> = (0..100).rev().map(f64::from).collect();
        let flags: Vec<bool> = f.iter().map(|&v| v >= 90.0).collect();
        let a = decile_fp_analysis(&f, &flags, 100, 3).unwrap();
        for b in &a.bins {
            let expect = if b.decile == 10 { 1.0 } else { 0.0 };
            assert_eq!(b.mean_fp, expect);
        }
        assert!(a.slope > 0.0);
    }

    #[test]
    fn deciles_independent_flags_show_no_trend() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 5000;
        let f: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let flags: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.1).collect();
        let a = decile_fp_analysis(&f, &flags, 500, 5).unwrap();
        assert!(a.slope_ci.0 <= 0.0 && 0.0 <= a.slope_ci.1, "{:?}", a.slope_ci);
        let b = decile_fp_analysis(&f, &flags, 500, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deciles_need_enough_rows() {
        assert!(decile_fp_analysis(&[1.0; 99], &[false; 99], 10, 0).is_err());
    }

    proptest! {
        #[test]
        fn templatedness_renaming_invariant(toks in proptest::collection::vec(0u8..6, 1..40)) {
            let a: Vec<String> = toks.iter().map(|t| format!("t{t}")).collect();
            let b: Vec<String> = toks.iter().map(|t| format!("renamed_{}", 5 - t)).collect();
            prop_assert!((templatedness(&a) - templatedness(&b)).abs() < 1e-12);
            let t = templatedness(&a);
            prop_assert!((0.0..=1.0).contains(&t));
        }

        #[test]
        fn spearman_monotone_transform_invariant(
            pairs in proptest::collection::vec((-50i32..50, -50i32..50), 3..30)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let xt: Vec<f64> = x.iter().map(|v| (v / 10.0).exp()).collect();
            if let (Ok(a), Ok(b)) = (spearman(&x, &y), spearman(&xt, &y)) {
                prop_assert!((a.rho - b.rho).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicated_token_never_decreases_templatedness() {
        // Duplicating the most frequent token concentrates the distribution.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let len = rng.random_range(2..30);
            let toks: Vec<u8> = (0..len).map(|_| rng.random_range(0..5)).collect();
            let mut counts = [0usize; 5];
            for &t in &toks {
                counts[t as usize] += 1;
            }
            let top = (0..5).max_by_key(|&i| counts[i]).unwrap() as u8;
            let mut more = toks.clone();
            more.push(top);
            let s = |v: &[u8]| v.iter().map(|t| t.to_string()).collect::<Vec<_>>();
            assert!(templatedness(&s(&more)) >= templatedness(&s(&toks)) - 1e-12);
        }
    }
}
