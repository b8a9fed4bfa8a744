use std::fmt;

use crate::corpus::{Attribute, SceneAnnotation, SceneObject};
use crate::error::{Error, Result};

/// A nonempty set of attributes, kept in canonical (S, D, M, C) order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributeSubset(Vec<Attribute>);

impl AttributeSubset {
    pub fn new(attrs: impl IntoIterator<Item = Attribute>) -> Result<Self> {
        let mut v: Vec<Attribute> = attrs.into_iter().collect();
        v.sort();
        v.dedup();
        if v.is_empty() {
            return Err(Error::arg("attribute subset must be nonempty"));
        }
        Ok(Self(v))
    }

    pub fn single(attr: Attribute) -> Self {
        Self(vec![attr])
    }

    /// Parse a code such as `"SDM"` or `"SC"`.
    pub fn parse(code: &str) -> Result<Self> {
        let attrs = code
            .chars()
            .map(|c| Attribute::from_code(c).ok_or_else(|| Error::arg(format!("unknown attribute code {c:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(attrs)
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.0
    }

    pub fn contains(&self, attr: Attribute) -> bool {
        self.0.contains(&attr)
    }

    pub fn with(&self, attr: Attribute) -> Self {
        Self::new(self.0.iter().copied().chain([attr])).expect("nonempty")
    }

    pub fn code(&self) -> String {
        self.0.iter().map(|a| a.code()).collect()
    }
}

impl fmt::Display for AttributeSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

/// Whether `scene` holds an object equal to `reference` on every attribute
/// of `subset`.
pub fn attribute_match(reference: &SceneObject, scene: &SceneAnnotation, subset: &AttributeSubset) -> Result<bool> {
    for &a in subset.attributes() {
        if reference.get(a).is_none() {
            return Err(Error::Schema(format!("reference object has no {a}")));
        }
        if !scene.has_attribute(a) {
            return Err(Error::Schema(format!("scene {} has objects without {a}", scene.image_id)));
        }
    }
    Ok(scene
        .objects
        .iter()
        .any(|o| subset.attributes().iter().all(|&a| o.get(a) == reference.get(a))))
}

/// Fraction of matches among the first `k` ranks. Lists shorter than `k`
/// still divide by `k`.
pub fn top_k_precision(matches: &[bool], k: usize) -> f64 {
    assert!(k > 0, "k must be positive");
    matches.iter().take(k).filter(|m| **m).count() as f64 / k as f64
}

/// `H_k = 1 + 1/2 + ... + 1/k`.
pub fn harmonic(k: usize) -> f64 {
    (1..=k).map(|i| 1.0 / i as f64).sum()
}

/// Rank-weighted precision with weight `1/i` at rank `i`, normalised by
/// `H_k` so that a perfect top-k scores 1.
pub fn weighted_precision(matches: &[bool], k: usize) -> f64 {
    assert!(k > 0, "k must be positive");
    let hit: f64 = matches
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(i, _)| 1.0 / (i + 1) as f64)
        .sum();
    hit / harmonic(k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRate {
    pub rate: f64,
    /// Queries that had at least one valid candidate.
    pub evaluated: usize,
    /// Queries whose pool held no valid candidate at all.
    pub excluded: usize,
}

/// Share of queries without a match in their top `k`, among queries whose
/// full ranked pool (`matches` covers every candidate) has at least one
/// valid candidate.
pub fn error_rate(per_query: &[Vec<bool>], k: usize) -> ErrorRate {
    let mut evaluated = 0;
    let mut failed = 0;
    for m in per_query {
        if !m.iter().any(|x| *x) {
            continue;
        }
        evaluated += 1;
        if !m.iter().take(k).any(|x| *x) {
            failed += 1;
        }
    }
    ErrorRate {
        rate: if evaluated == 0 { 0.0 } else { failed as f64 / evaluated as f64 },
        evaluated,
        excluded: per_query.len() - evaluated,
    }
}

/// All subsets of `base` with exactly `size` elements, in lexicographic
/// order of positions.
pub fn subsets_of_size(base: &[Attribute], size: usize) -> Vec<AttributeSubset> {
    fn go(base: &[Attribute], size: usize, start: usize, cur: &mut Vec<Attribute>, out: &mut Vec<AttributeSubset>) {
        if cur.len() == size {
            out.push(AttributeSubset::new(cur.iter().copied()).expect("nonempty"));
            return;
        }
        for i in start..base.len() {
            cur.push(base[i]);
            go(base, size, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if size > 0 && size <= base.len() {
        go(base, size, 0, &mut Vec::new(), &mut out);
    }
    out
}

/// A named group of subsets whose metrics are averaged together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetFamily {
    pub name: String,
    pub subsets: Vec<AttributeSubset>,
}

impl SubsetFamily {
    pub fn single(attr: Attribute) -> Self {
        Self {
            name: attr.code().to_string(),
            subsets: vec![AttributeSubset::single(attr)],
        }
    }

    /// Size-`i` subsets of `base`, optionally each extended with colour
    /// (the "+C" variant).
    pub fn powerset(base: &[Attribute], i: usize, plus_colour: bool) -> Result<Self> {
        let mut subsets = subsets_of_size(base, i);
        if subsets.is_empty() {
            return Err(Error::arg(format!("no subsets of size {i} in a base of {}", base.len())));
        }
        let code: String = base.iter().map(|a| a.code()).collect();
        let mut name = format!("P{i}({code})");
        if plus_colour {
            subsets = subsets.iter().map(|s| s.with(Attribute::Colour)).collect();
            subsets.dedup();
            name.push_str("+C");
        }
        Ok(Self { name, subsets })
    }

    /// Parse `"S"`, `"SD"` (a single subset) or `"P2(SDM)"`, `"P3(SDM)+C"`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if let Some(rest) = t.strip_prefix('P') {
            let (body, plus) = match rest.strip_suffix("+C") {
                Some(b) => (b, true),
                None => (rest, false),
            };
            let open = body.find('(').ok_or_else(|| Error::arg(format!("bad family {t:?}")))?;
            let i: usize = body[..open]
                .parse()
                .map_err(|_| Error::arg(format!("bad family size in {t:?}")))?;
            let inner = body[open + 1..]
                .strip_suffix(')')
                .ok_or_else(|| Error::arg(format!("bad family {t:?}")))?;
            let base = AttributeSubset::parse(inner)?;
            return Self::powerset(base.attributes(), i, plus);
        }
        let s = AttributeSubset::parse(t)?;
        Ok(Self {
            name: s.code(),
            subsets: vec![s],
        })
    }

    /// The default family list for a schema: each attribute alone, then
    /// every size of the geometry powerset with and without colour.
    pub fn defaults(schema: &[Attribute]) -> Vec<Self> {
        let mut out: Vec<Self> = schema.iter().map(|&a| Self::single(a)).collect();
        let base: Vec<Attribute> = schema.iter().copied().filter(|&a| a != Attribute::Colour).collect();
        let colour = schema.contains(&Attribute::Colour);
        for i in 1..=base.len() {
            out.push(Self::powerset(&base, i, false).expect("size within base"));
        }
        if colour {
            for i in 1..=base.len() {
                out.push(Self::powerset(&base, i, true).expect("size within base"));
            }
        }
        out
    }
}

/// Unweighted mean of `metric` over the family's subsets.
pub fn powerset_eval(family: &SubsetFamily, mut metric: impl FnMut(&AttributeSubset) -> f64) -> f64 {
    let total: f64 = family.subsets.iter().map(&mut metric).sum();
    total / family.subsets.len() as f64
}

pub fn colour_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
