//! Decorated trees for the Duhamel expansion of cubic NLS with multiplicative
//! noise: rule-driven generation, order, symmetry factors, elementary
//! differentials and two evaluations of the iterated integral of a tree, an
//! exact quadrature on a fine Brownian path and the closed-form discretisation
//! used by the schemes.

use std::fmt;

use crate::error::{Error, Result};
use crate::noise::{BrownianPath, SmoothingOperator};
use crate::spectral::{phi1_imag, SpectralField, Wavevector, C64, I};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    /// `t₁`: free propagator `e^{-it|k|²}`
    Propagator,
    /// `t₂`: time integral `-i ∫ e^{is|k|²} ⋯`
    Integral,
    /// `l`: noise, always terminal
    Noise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeDecoration {
    pub kind: EdgeKind,
    pub conj: bool,
}

impl EdgeDecoration {
    pub fn new(kind: EdgeKind, conj: bool) -> Self {
        EdgeDecoration { kind, conj }
    }
}

impl fmt::Display for EdgeDecoration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = u8::from(self.conj);
        match self.kind {
            EdgeKind::Propagator => write!(f, "I_{{(t1,{p})}}"),
            EdgeKind::Integral => write!(f, "I_{{(t2,{p})}}"),
            EdgeKind::Noise => write!(f, "Ξ_{{(l,{p})}}"),
        }
    }
}

/// Order in `t`, stored in half units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Order(pub u32);

impl Order {
    pub fn from_f64(x: f64) -> Option<Order> {
        let h = 2.0 * x;
        (h >= 0.0 && (h - h.round()).abs() < 1e-9).then(|| Order(h.round() as u32))
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 2.0
    }

    /// Largest integer `ℓ` with `ℓ <= self`.
    pub fn floor(self) -> u32 {
        self.0 / 2
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

impl std::str::FromStr for Order {
    type Err = Error;

    fn from_str(s: &str) -> Result<Order> {
        let s = s.trim();
        let value = if let Some((a, b)) = s.split_once('/') {
            let a: f64 = a.trim().parse().map_err(|_| Error::UnsupportedOrder(s.into()))?;
            let b: f64 = b.trim().parse().map_err(|_| Error::UnsupportedOrder(s.into()))?;
            a / b
        } else {
            s.parse().map_err(|_| Error::UnsupportedOrder(s.into()))?
        };
        Order::from_f64(value).ok_or_else(|| Error::UnsupportedOrder(s.into()))
    }
}

/// Planted tree `I_o(λ^n_k F)`: the edge leaving the parent, the time-monomial
/// index of the node it reaches, and the planted trees of the forest `F`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DecoratedTree {
    pub edge: EdgeDecoration,
    pub monomial: u32,
    pub children: Vec<DecoratedTree>,
}

fn sort_class(t: &DecoratedTree) -> u8 {
    match (t.edge.kind, t.children.is_empty(), t.edge.conj) {
        (EdgeKind::Noise, _, _) => 3,
        (_, false, _) => 0,
        (_, true, true) => 1,
        (_, true, false) => 2,
    }
}

impl DecoratedTree {
    pub fn new(kind: EdgeKind, conj: bool, children: Vec<DecoratedTree>) -> Self {
        DecoratedTree { edge: EdgeDecoration::new(kind, conj), monomial: 0, children }.canonical()
    }

    /// `I_{(t₁,p)}(λ_k)`
    pub fn leaf(conj: bool) -> Self {
        Self::new(EdgeKind::Propagator, conj, vec![])
    }

    /// `Ξ_{(l,p)}(λ_k)`
    pub fn noise(conj: bool) -> Self {
        Self::new(EdgeKind::Noise, conj, vec![])
    }

    /// `I_{(t₁,p)}(λ_k T)`
    pub fn propagate(conj: bool, inner: DecoratedTree) -> Self {
        Self::new(EdgeKind::Propagator, conj, vec![inner])
    }

    /// `I_{(t₂,p)}(λ_k F)`
    pub fn integral(conj: bool, children: Vec<DecoratedTree>) -> Self {
        Self::new(EdgeKind::Integral, conj, children)
    }

    /// Children sorted: inner propagator edges first, then conjugate leaves, plain
    /// leaves and noises, ties broken structurally. Leaves are labelled `k₁, k₂, …`
    /// in depth-first order of this arrangement.
    pub fn canonical(mut self) -> Self {
        self.children = self.children.into_iter().map(DecoratedTree::canonical).collect();
        self.children.sort_by(|a, b| (sort_class(a), a).cmp(&(sort_class(b), b)));
        self
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn has_noise_child(&self) -> bool {
        self.children.iter().any(|c| c.edge.kind == EdgeKind::Noise)
    }

    /// Number of leaves (propagator and noise).
    pub fn leaf_count(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(DecoratedTree::leaf_count).sum()
        }
    }

    /// Every conjugation bit toggled, child order preserved.
    pub fn flipped(&self) -> Self {
        DecoratedTree {
            edge: EdgeDecoration::new(self.edge.kind, !self.edge.conj),
            monomial: self.monomial,
            children: self.children.iter().map(DecoratedTree::flipped).collect(),
        }
    }

    /// `|T|_ord`: monomials plus 1 for each time integral, where an integral whose
    /// forest contains a noise counts 1/2 in total.
    pub fn order(&self) -> Order {
        let own = match self.edge.kind {
            EdgeKind::Integral if self.has_noise_child() => 1,
            EdgeKind::Integral => 2,
            _ => 0,
        };
        Order(own + 2 * self.monomial + self.children.iter().map(|c| c.order().0).sum::<u32>())
    }

    /// Symmetry factor of the edge-decorated shape.
    pub fn symmetry(&self) -> u64 {
        let mut s = 1u64;
        let mut i = 0;
        while i < self.children.len() {
            let mut j = i;
            while j < self.children.len() && self.children[j] == self.children[i] {
                j += 1;
            }
            let gamma = (j - i) as u64;
            s *= self.children[i].symmetry().pow(gamma as u32) * (1..=gamma).product::<u64>();
            i = j;
        }
        s
    }

    fn check_planted_children(&self) -> Result<()> {
        for c in &self.children {
            if c.edge.kind == EdgeKind::Noise && !c.is_leaf() {
                return Err(Error::Tree("noise edges must be terminal".into()));
            }
            c.check_planted_children()?;
        }
        Ok(())
    }

    /// Frequency decoration of every node in preorder, from leaf frequencies in
    /// depth-first order.
    pub fn node_frequencies(&self, leaves: &[Wavevector]) -> Result<Vec<Wavevector>> {
        if leaves.len() != self.leaf_count() {
            return Err(Error::Tree(format!("{} leaf frequencies for {} leaves", leaves.len(), self.leaf_count())));
        }
        self.check_planted_children()?;
        let mut out = Vec::new();
        let mut cursor = 0;
        self.collect_frequencies(leaves, &mut cursor, &mut out);
        Ok(out)
    }

    fn collect_frequencies(&self, leaves: &[Wavevector], cursor: &mut usize, out: &mut Vec<Wavevector>) -> Wavevector {
        let slot = out.len();
        out.push(Wavevector::default());
        let k = if self.is_leaf() {
            let k = leaves[*cursor];
            *cursor += 1;
            k
        } else {
            let mut acc = Wavevector::default();
            for c in &self.children {
                let kc = c.collect_frequencies(leaves, cursor, out);
                acc = if c.edge.conj { acc - kc } else { acc + kc };
            }
            if self.edge.conj {
                -acc
            } else {
                acc
            }
        };
        out[slot] = k;
        k
    }

    /// Check `(-1)^{p(e_u)} f(u) = Σ_{(u,v)} (-1)^{p(e)} f(v)` at every inner node.
    pub fn frequencies_consistent(&self, freqs: &[Wavevector]) -> bool {
        let mut cursor = 0;
        self.check_node(freqs, &mut cursor).is_some()
    }

    fn check_node(&self, freqs: &[Wavevector], cursor: &mut usize) -> Option<Wavevector> {
        let own = *freqs.get(*cursor)?;
        *cursor += 1;
        if !self.is_leaf() {
            let mut acc = Wavevector::default();
            for c in &self.children {
                let kc = c.check_node(freqs, cursor)?;
                acc = if c.edge.conj { acc - kc } else { acc + kc };
            }
            let lhs = if self.edge.conj { -own } else { own };
            if lhs != acc {
                return None;
            }
        }
        Some(own)
    }

    /// Bracket notation, e.g. `I_{(t2,0)}(λ_k I_{(t1,1)}(λ_{k1}) …)`.
    pub fn bracket(&self) -> String {
        let mut next = 1;
        self.bracket_inner("k", &mut next)
    }

    fn bracket_inner(&self, label: &str, next: &mut usize) -> String {
        if self.is_leaf() {
            let s = format!("{}(λ_{{k{}}})", self.edge, *next);
            *next += 1;
            return s;
        }
        let mut parts = Vec::new();
        for c in &self.children {
            let first = *next;
            let n = c.leaf_count();
            let child_label = (first..first + n).map(|i| i.to_string()).collect::<String>();
            parts.push(c.bracket_inner(&format!("k{child_label}"), next));
        }
        let lam = if label.len() == 1 { format!("λ_{label}") } else { format!("λ_{{{label}}}") };
        let lam = if self.monomial > 0 { format!("{lam}^{}", self.monomial) } else { lam };
        format!("{}({} {})", self.edge, lam, parts.join(" "))
    }

    /// Symbolic elementary differential `Υ(T)(v)`.
    pub fn upsilon_pattern(&self) -> Result<UpsilonPattern> {
        let mut factors = Vec::new();
        let mut next = 1;
        let coeff = self.upsilon_walk(&mut next, &mut factors)?;
        Ok(UpsilonPattern { coeff, factors })
    }

    fn upsilon_walk(&self, next: &mut usize, factors: &mut Vec<(usize, bool)>) -> Result<u64> {
        if self.is_leaf() {
            if self.edge.kind == EdgeKind::Propagator {
                factors.push((*next, self.edge.conj));
            }
            *next += 1;
            return Ok(1);
        }
        let mut coeff = 1;
        for c in &self.children {
            coeff *= c.upsilon_walk(next, factors)?;
        }
        if self.edge.kind == EdgeKind::Integral {
            let n = self.children.iter().filter(|c| c.edge.kind == EdgeKind::Propagator && !c.edge.conj).count();
            let m = self.children.iter().filter(|c| c.edge.kind == EdgeKind::Propagator && c.edge.conj).count();
            // p_0 = v²v̄, p_1 = v̄²v, f_0 = v, f_1 = v̄
            let (a, b) = match (self.has_noise_child(), self.edge.conj) {
                (true, false) => (1, 0),
                (true, true) => (0, 1),
                (false, false) => (2, 1),
                (false, true) => (1, 2),
            };
            if (n, m) != (a, b) {
                return Err(Error::Tree(format!(
                    "forest with {n} plain and {m} conjugate edges does not saturate the nonlinearity"
                )));
            }
            coeff *= (1..=a as u64).product::<u64>() * (1..=b as u64).product::<u64>();
        }
        Ok(coeff)
    }

    /// `Υ(T)(v)` for concrete leaf frequencies.
    pub fn upsilon(&self, v: &SpectralField, leaves: &[Wavevector]) -> Result<C64> {
        let pattern = self.upsilon_pattern()?;
        if leaves.len() != self.leaf_count() {
            return Err(Error::Tree("leaf frequency count mismatch".into()));
        }
        let mut acc = C64::new(pattern.coeff as f64, 0.0);
        for &(label, conj) in &pattern.factors {
            let z = v.coeff(&leaves[label - 1]);
            acc *= if conj { z.conj() } else { z };
        }
        Ok(acc)
    }
}

/// `coeff · Π v_{k_i}` or `v̄_{k_i}` factors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpsilonPattern {
    pub coeff: u64,
    /// `(leaf label, conjugated)`
    pub factors: Vec<(usize, bool)>,
}

impl fmt::Display for UpsilonPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body: Vec<String> = self
            .factors
            .iter()
            .map(|&(i, c)| if c { format!("v̄_{{k{i}}}") } else { format!("v_{{k{i}}}") })
            .collect();
        if self.coeff == 1 {
            write!(f, "{}", body.join(" "))
        } else {
            write!(f, "{} {}", self.coeff, body.join(" "))
        }
    }
}

/// Admissible child decorations for the monomial nonlinearity `u^N ū^M` with
/// linear multiplicative noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rule {
    pub n: usize,
    pub m: usize,
}

impl Rule {
    pub fn cubic_nls() -> Self {
        Rule { n: 2, m: 1 }
    }

    /// `R((t, p))` as multisets of child decorations.
    pub fn children(&self, edge: EdgeDecoration) -> Vec<Vec<EdgeDecoration>> {
        let p = edge.conj;
        let t1 = |c| EdgeDecoration::new(EdgeKind::Propagator, c);
        match edge.kind {
            EdgeKind::Noise => vec![vec![]],
            EdgeKind::Propagator => vec![vec![], vec![EdgeDecoration::new(EdgeKind::Integral, p)]],
            EdgeKind::Integral => {
                let mut poly = vec![t1(p); self.n];
                poly.extend(std::iter::repeat(t1(!p)).take(self.m));
                vec![poly, vec![t1(p), EdgeDecoration::new(EdgeKind::Noise, p)]]
            }
        }
    }

    /// All trees hanging from an edge with decoration `edge` of order at most `budget`.
    fn grow(&self, edge: EdgeDecoration, budget: u32) -> Vec<DecoratedTree> {
        let mut out = Vec::new();
        for forest in self.children(edge) {
            let own = match edge.kind {
                EdgeKind::Integral if forest.iter().any(|e| e.kind == EdgeKind::Noise) => 1,
                EdgeKind::Integral => 2,
                _ => 0,
            };
            if own > budget {
                continue;
            }
            let mut partial: Vec<(Vec<DecoratedTree>, u32)> = vec![(vec![], own)];
            for child in &forest {
                let mut extended = Vec::new();
                for (trees, used) in &partial {
                    for c in self.grow(*child, budget - used) {
                        let o = c.order().0;
                        let mut t = trees.clone();
                        t.push(c);
                        extended.push((t, used + o));
                    }
                }
                partial = extended;
            }
            for (children, _) in partial {
                out.push(DecoratedTree { edge, monomial: 0, children }.canonical());
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

/// `𝒯₀^{r,k}(R)`: planted trees `I_{(t₁,0)}(λ_k ⋯)` of order at most `r`, sorted by
/// order then structure.
pub fn generate(rule: &Rule, r_max: Order) -> Result<Vec<DecoratedTree>> {
    if !(1..=3).contains(&r_max.0) {
        return Err(Error::UnsupportedOrder(r_max.to_string()));
    }
    let mut trees = rule.grow(EdgeDecoration::new(EdgeKind::Propagator, false), r_max.0);
    trees.sort_by(|a, b| (a.order(), a).cmp(&(b.order(), b)));
    Ok(trees)
}

/// The seven iterated integrals appearing up to order 3/2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NamedTree {
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
}

impl NamedTree {
    pub const ALL: [NamedTree; 7] =
        [NamedTree::T1, NamedTree::T2, NamedTree::T3, NamedTree::T4, NamedTree::T5, NamedTree::T6, NamedTree::T7];

    pub fn label(self) -> &'static str {
        match self {
            NamedTree::T1 => "T1",
            NamedTree::T2 => "T2",
            NamedTree::T3 => "T3",
            NamedTree::T4 => "T4",
            NamedTree::T5 => "T5",
            NamedTree::T6 => "T6",
            NamedTree::T7 => "T7",
        }
    }

    /// The tree hanging below `I_{(t₁,0)}(λ_k ⋅)`, rooted at a `t₂` edge.
    pub fn tree(self) -> DecoratedTree {
        use DecoratedTree as D;
        let t1 = || D::integral(false, vec![D::leaf(true), D::leaf(false), D::leaf(false)]);
        let t2 = || D::integral(false, vec![D::leaf(false), D::noise(false)]);
        let t3 = || D::integral(false, vec![D::propagate(false, t2()), D::noise(false)]);
        match self {
            NamedTree::T1 => t1(),
            NamedTree::T2 => t2(),
            NamedTree::T3 => t3(),
            NamedTree::T4 => D::integral(false, vec![D::leaf(true), D::propagate(false, t2()), D::leaf(false)]),
            NamedTree::T5 => {
                let inner = D::integral(true, vec![D::leaf(true), D::noise(true)]);
                D::integral(false, vec![D::propagate(true, inner), D::leaf(false), D::leaf(false)])
            }
            NamedTree::T6 => D::integral(false, vec![D::propagate(false, t1()), D::noise(false)]),
            NamedTree::T7 => D::integral(false, vec![D::propagate(false, t3()), D::noise(false)]),
        }
    }

    pub fn planted(self) -> DecoratedTree {
        DecoratedTree::propagate(false, self.tree())
    }

    /// Recognize a planted tree or its `t₂` subtree.
    pub fn identify(tree: &DecoratedTree) -> Option<NamedTree> {
        let canon = tree.clone().canonical();
        NamedTree::ALL.into_iter().find(|n| n.tree() == canon || n.planted() == canon)
    }
}

/// `I_{(t₁,0)}(λ_k)`: the free evolution of the initial datum.
pub fn initial_datum_tree() -> DecoratedTree {
    DecoratedTree::leaf(false)
}

/// Trees of `𝒯₀^{r,k}(R)` in the conventional order `I(λ_k), T₁, T₂, …`, with labels.
pub fn listing(r: Order) -> Result<Vec<(String, DecoratedTree)>> {
    let trees = generate(&Rule::cubic_nls(), r)?;
    let mut named: Vec<(Option<NamedTree>, DecoratedTree)> =
        trees.into_iter().map(|t| (if t.is_leaf() { None } else { NamedTree::identify(&t) }, t)).collect();
    named.sort_by(|a, b| {
        let key = |x: &(Option<NamedTree>, DecoratedTree)| (!x.1.is_leaf(), x.0.is_none(), x.0);
        key(a).cmp(&key(b)).then_with(|| a.1.cmp(&b.1))
    });
    Ok(named
        .into_iter()
        .enumerate()
        .map(|(i, (n, t))| {
            let label = match (t.is_leaf(), n) {
                (true, _) => "I(λ_k)".to_string(),
                (false, Some(n)) => n.label().to_string(),
                (false, None) => format!("U{i}"),
            };
            (label, t)
        })
        .collect())
}

/// `P(k₁,k₂,k₃) = 2|k₁|² - 2k₁·(k₂+k₃) + 2k₂·k₃`, the phase of the cubic interaction
/// `k = -k₁ + k₂ + k₃`.
pub fn resonance_polynomial(k1: Wavevector, k2: Wavevector, k3: Wavevector) -> i64 {
    2 * k1.norm_sq() - 2 * k1.dot(&(k2 + k3)) + 2 * k2.dot(&k3)
}

/// `(P_dom, P_low)` with `P_dom = 2|k₁|²`.
pub fn resonance_split(k1: Wavevector, k2: Wavevector, k3: Wavevector) -> (i64, i64) {
    let p = resonance_polynomial(k1, k2, k3);
    let dom = 2 * k1.norm_sq();
    (dom, p - dom)
}

/// Inputs for evaluating the iterated integral of one tree over `[0, t]`: `t` is
/// the horizon of `path`, and `path`'s fine grid is the quadrature grid.
#[derive(Clone, Copy, Debug)]
pub struct TreeIntegralContext<'a> {
    pub leaves: &'a [Wavevector],
    pub path: &'a BrownianPath,
    pub phi: &'a SmoothingOperator,
}

impl<'a> TreeIntegralContext<'a> {
    pub fn t(&self) -> f64 {
        self.path.horizon()
    }

    fn mode(&self, k: &Wavevector) -> Result<usize> {
        self.path
            .grid()
            .index_of(k)
            .ok_or_else(|| Error::Tree(format!("noise frequency {:?} outside the path's band", k.0)))
    }

    fn phi_at(&self, k: &Wavevector) -> Result<C64> {
        Ok(self.phi.coeffs()[self.mode(k)?])
    }

    /// `W_k(s_j) - W_k(0)` for `j = 0..=n_fine`.
    fn brownian(&self, k: &Wavevector) -> Result<Vec<C64>> {
        let m = self.mode(k)?;
        let mut w = Vec::with_capacity(self.path.n_fine() + 1);
        let mut acc = C64::new(0.0, 0.0);
        w.push(acc);
        for j in 0..self.path.n_fine() {
            acc += self.path.fine_increments(j)[m];
            w.push(acc);
        }
        Ok(w)
    }

    fn increments(&self, k: &Wavevector) -> Result<Vec<C64>> {
        let m = self.mode(k)?;
        Ok((0..self.path.n_fine()).map(|j| self.path.fine_increments(j)[m]).collect())
    }

    fn times(&self) -> Vec<f64> {
        let dt = self.path.dt_fine();
        (0..=self.path.n_fine()).map(|j| j as f64 * dt).collect()
    }
}

fn cumulative_trapezoid(values: &[C64], dt: f64) -> Vec<C64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = C64::new(0.0, 0.0);
    out.push(acc);
    for w in values.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

fn cumulative_ito(values: &[C64], dw: &[C64]) -> Vec<C64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = C64::new(0.0, 0.0);
    out.push(acc);
    for (v, d) in values.iter().zip(dw) {
        acc += v * d;
        out.push(acc);
    }
    out
}

fn eval_tree(tree: &DecoratedTree, ctx: &TreeIntegralContext, cursor: &mut usize) -> Result<(Vec<C64>, Wavevector)> {
    if tree.edge.conj {
        let (v, k) = eval_tree(&tree.flipped(), ctx, cursor)?;
        return Ok((v.into_iter().map(|z| z.conj()).collect(), k));
    }
    let times = ctx.times();
    let dt = ctx.path.dt_fine();
    match tree.edge.kind {
        EdgeKind::Noise => Err(Error::Tree("noise edge evaluated outside a time integral".into())),
        EdgeKind::Propagator => {
            let (mut values, k) = if tree.is_leaf() {
                let k = ctx.leaves[*cursor];
                *cursor += 1;
                (vec![C64::new(1.0, 0.0); times.len()], k)
            } else {
                forest(tree, ctx, cursor)?
            };
            let k2 = k.norm_sq() as f64;
            for (v, s) in values.iter_mut().zip(&times) {
                *v *= C64::from_polar(s.powi(tree.monomial as i32), -s * k2);
            }
            Ok((values, k))
        }
        EdgeKind::Integral => {
            let mut noise = None;
            let mut plain = Vec::new();
            let mut acc_k = Wavevector::default();
            let mut values = vec![C64::new(1.0, 0.0); times.len()];
            for c in &tree.children {
                if c.edge.kind == EdgeKind::Noise {
                    if !c.is_leaf() || noise.is_some() {
                        return Err(Error::Tree("at most one terminal noise per integral".into()));
                    }
                    let kbar = ctx.leaves[*cursor];
                    *cursor += 1;
                    noise = Some(kbar);
                    acc_k = acc_k + kbar;
                } else {
                    let (v, kc) = eval_tree(c, ctx, cursor)?;
                    values.iter_mut().zip(&v).for_each(|(a, b)| *a *= b);
                    acc_k = if c.edge.conj { acc_k - kc } else { acc_k + kc };
                    plain.push(kc);
                }
            }
            let k2 = acc_k.norm_sq() as f64;
            for (v, s) in values.iter_mut().zip(&times) {
                *v *= C64::from_polar(s.powi(tree.monomial as i32), s * k2);
            }
            let integrated = match noise {
                Some(kbar) => {
                    let phi = ctx.phi_at(&kbar)?;
                    let dw: Vec<C64> = ctx.increments(&kbar)?.into_iter().map(|d| phi * d).collect();
                    cumulative_ito(&values, &dw)
                }
                None => cumulative_trapezoid(&values, dt),
            };
            Ok((integrated.into_iter().map(|z| -I * z).collect(), acc_k))
        }
    }
}

fn forest(tree: &DecoratedTree, ctx: &TreeIntegralContext, cursor: &mut usize) -> Result<(Vec<C64>, Wavevector)> {
    let mut values = vec![C64::new(1.0, 0.0); ctx.path.n_fine() + 1];
    let mut k = Wavevector::default();
    for c in &tree.children {
        if c.edge.kind == EdgeKind::Noise {
            return Err(Error::Tree("noise below a propagator edge".into()));
        }
        let (v, kc) = eval_tree(c, ctx, cursor)?;
        values.iter_mut().zip(&v).for_each(|(a, b)| *a *= b);
        k = if c.edge.conj { k - kc } else { k + kc };
    }
    Ok((values, k))
}

/// `(Π T)(s)` on the fine grid `s_j = j·dt`, `j = 0..=n_fine`, by nested composite
/// trapezoid (deterministic layers) and left-point Itô sums (stochastic layers).
pub fn pi_exact_trajectory(tree: &DecoratedTree, ctx: &TreeIntegralContext) -> Result<Vec<C64>> {
    if ctx.leaves.len() != tree.leaf_count() {
        return Err(Error::Tree(format!("{} leaf frequencies for {} leaves", ctx.leaves.len(), tree.leaf_count())));
    }
    let mut cursor = 0;
    Ok(eval_tree(tree, ctx, &mut cursor)?.0)
}

/// `(Π T)(t)` at the horizon of the context's path.
pub fn pi_exact(tree: &DecoratedTree, ctx: &TreeIntegralContext) -> Result<C64> {
    Ok(*pi_exact_trajectory(tree, ctx)?.last().expect("non-empty grid"))
}

/// Closed-form discretisation `(Π^{n,r} T)(t)` on the same path as [`pi_exact`].
///
/// Implemented triples: `(T₁|T₂|T₃, 1, 1)`, `(T₁..T₇, 2, 3/2)` and `(T₄, n, r >= 2)`.
pub fn pi_discrete(tree: NamedTree, ctx: &TreeIntegralContext, n: u32, r: Order) -> Result<C64> {
    use NamedTree::*;
    let unimplemented = || Error::UnimplementedDiscretisation { tree: tree.label().into(), n, r: r.to_string() };
    let needed = tree.tree().leaf_count();
    if ctx.leaves.len() != needed {
        return Err(Error::Tree(format!("{} leaf frequencies for {needed} leaves", ctx.leaves.len())));
    }
    let low = n == 1 && r == Order(2);
    let high = n == 2 && r == Order(3);
    let k = ctx.leaves;
    let t = ctx.t();
    let dt = ctx.path.dt_fine();
    let times = ctx.times();
    let trapz = |v: &[C64]| *cumulative_trapezoid(v, dt).last().expect("non-empty");
    let ito = |v: &[C64], dw: &[C64]| v.iter().zip(dw).map(|(a, b)| a * b).sum::<C64>();
    match tree {
        T1 if low => Ok(-I * t * phi1_imag(2.0 * t * k[0].norm_sq() as f64)),
        T1 if high => Ok(-I * t),
        T2 if low => Ok(-I * ctx.phi_at(&k[1])? * ctx.brownian(&k[1])?[ctx.path.n_fine()]),
        T2 if high => {
            let phi = ctx.phi_at(&k[1])?;
            let dw = ctx.increments(&k[1])?;
            let weighted = ito(&times.iter().map(|&s| C64::new(s, 0.0)).collect::<Vec<_>>(), &dw);
            let total: C64 = dw.iter().sum();
            let p = (k[1].norm_sq() + 2 * k[0].dot(&k[1])) as f64;
            Ok(-I * phi * total + phi * p * weighted)
        }
        T3 if low || high => {
            let w2 = ctx.brownian(&k[1])?;
            let dw3 = ctx.increments(&k[2])?;
            Ok(-ctx.phi_at(&k[1])? * ctx.phi_at(&k[2])? * ito(&w2, &dw3))
        }
        T4 if high => Ok(-ctx.phi_at(&k[1])? * trapz(&ctx.brownian(&k[1])?)),
        T4 if r.0 >= 4 => {
            let kk = k[0] + k[1] - k[2] + k[3];
            let k12 = k[0] + k[1];
            let p1 = (kk.norm_sq() + k[2].norm_sq() - k12.norm_sq() - k[3].norm_sq()) as f64;
            let p2 = (k12.norm_sq() - k[0].norm_sq()) as f64;
            let w = ctx.brownian(&k[1])?;
            let phi = ctx.phi_at(&k[1])?;
            let mut acc = C64::new(0.0, 0.0);
            let mut fact = 1.0;
            for l in 0..=(r.floor() - 2) {
                if l > 0 {
                    fact *= l as f64;
                }
                let coeff = I.powu(l) * (p1 + p2).powi(l as i32) / fact;
                let integrand: Vec<C64> = times.iter().zip(&w).map(|(s, wv)| coeff * s.powi(l as i32) * wv).collect();
                acc += trapz(&integrand);
            }
            Ok(-phi * acc)
        }
        T5 if high => Ok((ctx.phi_at(&k[1])? * trapz(&ctx.brownian(&k[1])?)).conj()),
        T6 if high => {
            let dw = ctx.increments(&k[3])?;
            let s: Vec<C64> = times.iter().map(|&s| C64::new(s, 0.0)).collect();
            Ok(-ctx.phi_at(&k[3])? * ito(&s, &dw))
        }
        T7 if high => {
            let w2 = ctx.brownian(&k[1])?;
            let dw3 = ctx.increments(&k[2])?;
            let dw4 = ctx.increments(&k[3])?;
            let inner = cumulative_ito(&w2, &dw3);
            let phis = ctx.phi_at(&k[1])? * ctx.phi_at(&k[2])? * ctx.phi_at(&k[3])?;
            Ok(I * phis * ito(&inner, &dw4))
        }
        _ => Err(unimplemented()),
    }
}
