//! Truncation bounds for the hyperparameters α₁..α₄, β₁..β₄.
//!
//! Each row has a low bound, a high bound and a TND scale. A bound is either
//! a constant or a linear expression in earlier ladder symbols, written
//! `"expr:-2.0*mu_a - alpha3"` in JSON. Symbols are resolved in ladder order
//! α₁, α₂, μ_a, α₃, α₄, β₁, β₂, μ_b, β₃, β₄, so a bound may only refer to
//! symbols that come before its own row.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Ladder symbols a bound expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sym {
    Alpha(usize),
    Beta(usize),
    MuA,
    MuB,
}

impl Sym {
    /// Position in the resolution order.
    pub fn order(self) -> usize {
        match self {
            Sym::Alpha(1) => 0,
            Sym::Alpha(2) => 1,
            Sym::MuA => 2,
            Sym::Alpha(3) => 3,
            Sym::Alpha(4) => 4,
            Sym::Beta(1) => 5,
            Sym::Beta(2) => 6,
            Sym::MuB => 7,
            Sym::Beta(3) => 8,
            Sym::Beta(4) => 9,
            _ => unreachable!("invalid symbol index"),
        }
    }

    fn parse(s: &str) -> Option<Sym> {
        Some(match s {
            "alpha1" => Sym::Alpha(1),
            "alpha2" => Sym::Alpha(2),
            "alpha3" => Sym::Alpha(3),
            "alpha4" => Sym::Alpha(4),
            "beta1" => Sym::Beta(1),
            "beta2" => Sym::Beta(2),
            "beta3" => Sym::Beta(3),
            "beta4" => Sym::Beta(4),
            "mu_a" => Sym::MuA,
            "mu_b" => Sym::MuB,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Sym::Alpha(1) => "alpha1",
            Sym::Alpha(2) => "alpha2",
            Sym::Alpha(3) => "alpha3",
            Sym::Alpha(4) => "alpha4",
            Sym::Beta(1) => "beta1",
            Sym::Beta(2) => "beta2",
            Sym::Beta(3) => "beta3",
            Sym::Beta(4) => "beta4",
            Sym::MuA => "mu_a",
            Sym::MuB => "mu_b",
            _ => unreachable!(),
        }
    }
}

/// Values resolved so far, indexed by [`Sym::order`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SymValues([Option<f64>; 10]);

impl SymValues {
    pub fn set(&mut self, s: Sym, v: f64) {
        self.0[s.order()] = Some(v);
    }

    pub fn get(&self, s: Sym) -> Option<f64> {
        self.0[s.order()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearExpr {
    constant: f64,
    terms: Vec<(f64, Sym)>,
}

impl LinearExpr {
    pub fn parse(src: &str) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("bound expression `{src}`: {m}"));
        let tokens = tokenize(src).map_err(|m| bad(&m))?;
        let mut constant = 0.0;
        let mut terms = Vec::new();
        let mut i = 0;
        let mut first = true;
        while i < tokens.len() {
            let mut sign = 1.0;
            match &tokens[i] {
                Tok::Plus => i += 1,
                Tok::Minus => {
                    sign = -1.0;
                    i += 1;
                }
                _ if first => {}
                _ => return Err(bad("expected + or -")),
            }
            first = false;
            // term := num | sym | num '*' sym | sym '*' num
            let (coef, sym) = match (tokens.get(i), tokens.get(i + 1), tokens.get(i + 2)) {
                (Some(Tok::Num(c)), Some(Tok::Star), Some(Tok::Sym(s))) => {
                    i += 3;
                    (*c, Some(*s))
                }
                (Some(Tok::Sym(s)), Some(Tok::Star), Some(Tok::Num(c))) => {
                    i += 3;
                    (*c, Some(*s))
                }
                (Some(Tok::Num(c)), _, _) => {
                    i += 1;
                    (*c, None)
                }
                (Some(Tok::Sym(s)), _, _) => {
                    i += 1;
                    (1.0, Some(*s))
                }
                _ => return Err(bad("expected a number or symbol")),
            };
            match sym {
                Some(s) => terms.push((sign * coef, s)),
                None => constant += sign * coef,
            }
        }
        if first {
            return Err(bad("empty expression"));
        }
        Ok(Self { constant, terms })
    }

    pub fn eval(&self, ctx: &SymValues) -> Option<f64> {
        let mut v = self.constant;
        for (c, s) in &self.terms {
            v += c * ctx.get(*s)?;
        }
        Some(v)
    }

    fn symbols(&self) -> impl Iterator<Item = Sym> + '_ {
        self.terms.iter().map(|(_, s)| *s)
    }

    /// Interval of the expression when each symbol ranges over `range(sym)`.
    fn interval(&self, range: &dyn Fn(Sym) -> (f64, f64)) -> (f64, f64) {
        let mut lo = self.constant;
        let mut hi = self.constant;
        for (c, s) in &self.terms {
            let (a, b) = range(*s);
            let (p, q) = (c * a, c * b);
            lo += p.min(q);
            hi += p.max(q);
        }
        (lo, hi)
    }
}

impl fmt::Display for LinearExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (c, s) in &self.terms {
            if first {
                write!(f, "{c:?}*{}", s.name())?;
            } else if *c < 0.0 {
                write!(f, " - {:?}*{}", -c, s.name())?;
            } else {
                write!(f, " + {c:?}*{}", s.name())?;
            }
            first = false;
        }
        if first {
            write!(f, "{:?}", self.constant)
        } else if self.constant < 0.0 {
            write!(f, " - {:?}", -self.constant)
        } else if self.constant > 0.0 {
            write!(f, " + {:?}", self.constant)
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Sym(Sym),
    Plus,
    Minus,
    Star,
}

fn tokenize(src: &str) -> std::result::Result<Vec<Tok>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push(Tok::Plus);
                i += 1
            }
            '-' => {
                out.push(Tok::Minus);
                i += 1
            }
            '*' => {
                out.push(Tok::Star);
                i += 1
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit() || chars[i] == '.' || chars[i] == 'e')
                {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                out.push(Tok::Num(
                    s.parse().map_err(|_| format!("bad number `{s}`"))?,
                ));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                out.push(Tok::Sym(
                    Sym::parse(&s).ok_or_else(|| format!("unknown symbol `{s}`"))?,
                ));
            }
            other => return Err(format!("unexpected character `{other}`")),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bound {
    Const(f64),
    Expr(LinearExpr),
}

impl Bound {
    pub fn eval(&self, ctx: &SymValues) -> Option<f64> {
        match self {
            Bound::Const(v) => Some(*v),
            Bound::Expr(e) => e.eval(ctx),
        }
    }

    fn expr(src: &str) -> Self {
        Bound::Expr(LinearExpr::parse(src).expect("built-in expression"))
    }
}

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bound::Const(v) => s.serialize_f64(*v),
            Bound::Expr(e) => s.serialize_str(&format!("expr:{e}")),
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Bound::Const(v)),
            Repr::Str(s) => {
                let body = s.strip_prefix("expr:").ok_or_else(|| {
                    serde::de::Error::custom("string bounds must start with `expr:`")
                })?;
                LinearExpr::parse(body)
                    .map(Bound::Expr)
                    .map_err(serde::de::Error::custom)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub low: Bound,
    pub high: Bound,
    pub scale: f64,
}

impl BoundRow {
    fn constant(low: f64, high: f64, scale: f64) -> Self {
        Self {
            low: Bound::Const(low),
            high: Bound::Const(high),
            scale,
        }
    }

    pub fn resolve(&self, ctx: &SymValues) -> Option<(f64, f64)> {
        Some((self.low.eval(ctx)?, self.high.eval(ctx)?))
    }
}

/// Bounds and scales for the eight hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub alpha1: BoundRow,
    pub alpha2: BoundRow,
    pub alpha3: BoundRow,
    pub alpha4: BoundRow,
    pub beta1: BoundRow,
    pub beta2: BoundRow,
    pub beta3: BoundRow,
    pub beta4: BoundRow,
}

impl Default for HyperBounds {
    /// Values fitted to breaker trip-coil test data.
    fn default() -> Self {
        Self {
            alpha1: BoundRow::constant(-16.4337, 0.4163, 0.7799),
            alpha2: BoundRow::constant(-14.6490, 0.9114, 0.3252),
            alpha3: BoundRow {
                low: Bound::Const(0.5046),
                high: Bound::expr("-2.0*mu_a"),
                scale: 0.4067,
            },
            alpha4: BoundRow {
                low: Bound::Const(-0.9018),
                high: Bound::expr("-2.0*mu_a - alpha3"),
                scale: 3.0522,
            },
            beta1: BoundRow::constant(0.3111, 12.2278, 3.9211),
            beta2: BoundRow::constant(0.9645, 4.1683, 4.3033),
            beta3: BoundRow {
                low: Bound::Const(-0.9957),
                high: Bound::expr("2.0*mu_b"),
                scale: 2.7465,
            },
            beta4: BoundRow {
                low: Bound::Const(-0.6837),
                high: Bound::expr("2.0*mu_b - beta3"),
                scale: 0.3458,
            },
        }
    }
}

/// Hyperparameter index in `HyperParams` order (α₁..α₄ = 0..3, β₁..β₄ = 4..7).
pub fn row_symbol(i: usize) -> Sym {
    if i < 4 {
        Sym::Alpha(i + 1)
    } else {
        Sym::Beta(i - 3)
    }
}

impl HyperBounds {
    pub fn row(&self, i: usize) -> &BoundRow {
        match i {
            0 => &self.alpha1,
            1 => &self.alpha2,
            2 => &self.alpha3,
            3 => &self.alpha4,
            4 => &self.beta1,
            5 => &self.beta2,
            6 => &self.beta3,
            7 => &self.beta4,
            _ => panic!("row index {i} out of range"),
        }
    }

    pub fn row_mut(&mut self, i: usize) -> &mut BoundRow {
        match i {
            0 => &mut self.alpha1,
            1 => &mut self.alpha2,
            2 => &mut self.alpha3,
            3 => &mut self.alpha4,
            4 => &mut self.beta1,
            5 => &mut self.beta2,
            6 => &mut self.beta3,
            7 => &mut self.beta4,
            _ => panic!("row index {i} out of range"),
        }
    }

    /// Checks scales and that expressions only use earlier symbols.
    pub fn validate(&self) -> Result<()> {
        for i in 0..8 {
            let row = self.row(i);
            let own = row_symbol(i);
            if !(row.scale > 0.0) {
                return Err(Error::Config(format!(
                    "{}: scale must be positive",
                    own.name()
                )));
            }
            for b in [&row.low, &row.high] {
                if let Bound::Expr(e) = b {
                    if let Some(s) = e.symbols().find(|s| s.order() >= own.order()) {
                        return Err(Error::Config(format!(
                            "{}: bound refers to `{}`, which is resolved later",
                            own.name(),
                            s.name()
                        )));
                    }
                }
            }
            if let (Bound::Const(lo), Bound::Const(hi)) = (&row.low, &row.high) {
                if !(lo < hi) {
                    return Err(Error::Config(format!(
                        "{}: low must be below high",
                        own.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Contracts every row about its midpoint by `factor[i]` (1 = unchanged).
    /// Expression bounds are left alone.
    pub fn shrink(&self, factors: &[f64; 8]) -> Result<Self> {
        let mut out = self.clone();
        for (i, &f) in factors.iter().enumerate() {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!(
                    "shrink factor must lie in (0, 1], got {f}"
                )));
            }
            let row = out.row_mut(i);
            if let (Bound::Const(lo), Bound::Const(hi)) = (&row.low, &row.high) {
                let mid = 0.5 * (lo + hi);
                let half = 0.5 * (hi - lo) * f;
                row.low = Bound::Const(mid - half);
                row.high = Bound::Const(mid + half);
            }
        }
        out.validate()?;
        Ok(out)
    }

    /// Conservative constant interval for each row, found by interval
    /// arithmetic over the ranges of referenced symbols.
    pub fn outer_box(&self) -> [(f64, f64); 8] {
        let mut out = [(0.0, 0.0); 8];
        let mut ranges: [(f64, f64); 10] = [(0.0, 0.0); 10];
        for s in [
            Sym::Alpha(1),
            Sym::Alpha(2),
            Sym::MuA,
            Sym::Alpha(3),
            Sym::Alpha(4),
            Sym::Beta(1),
            Sym::Beta(2),
            Sym::MuB,
            Sym::Beta(3),
            Sym::Beta(4),
        ] {
            let range_of = |x: Sym| ranges[x.order()];
            let r = match s {
                Sym::MuA => {
                    let (a1, a2) = (range_of(Sym::Alpha(1)), range_of(Sym::Alpha(2)));
                    (a1.0 + a2.0.min(0.0), a1.1)
                }
                Sym::MuB => {
                    let (b1, b2) = (range_of(Sym::Beta(1)), range_of(Sym::Beta(2)));
                    (b1.0, b1.1 + b2.1.max(0.0))
                }
                _ => {
                    let i = match s {
                        Sym::Alpha(k) => k - 1,
                        Sym::Beta(k) => k + 3,
                        _ => unreachable!(),
                    };
                    let row = self.row(i);
                    let side = |b: &Bound, lower: bool| match b {
                        Bound::Const(v) => *v,
                        Bound::Expr(e) => {
                            let (lo, hi) = e.interval(&range_of);
                            if lower {
                                lo
                            } else {
                                hi
                            }
                        }
                    };
                    let r = (side(&row.low, true), side(&row.high, false));
                    out[i] = r;
                    r
                }
            };
            ranges[s.order()] = r;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_table_expressions() {
        let e = LinearExpr::parse("-2.0*mu_a - alpha3").unwrap();
        let mut ctx = SymValues::default();
        ctx.set(Sym::MuA, -3.0);
        assert_eq!(e.eval(&ctx), None);
        ctx.set(Sym::Alpha(3), 1.5);
        assert_eq!(e.eval(&ctx), Some(4.5));
        assert_eq!(LinearExpr::parse("2*mu_b").unwrap().eval(&ctx), None);
        assert!(LinearExpr::parse("2*gamma").is_err());
        assert!(LinearExpr::parse("").is_err());
        let e = LinearExpr::parse("mu_b*0.5 + 1").unwrap();
        ctx.set(Sym::MuB, 4.0);
        assert_eq!(e.eval(&ctx), Some(3.0));
    }

    #[test]
    fn json_round_trip_of_defaults() {
        let b = HyperBounds::default();
        let s = serde_json::to_string(&b).unwrap();
        assert!(s.contains("\"expr:-2.0*mu_a - 1.0*alpha3\""), "{s}");
        let back: HyperBounds = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
        b.validate().unwrap();
    }

    #[test]
    fn rejects_forward_references() {
        let mut b = HyperBounds::default();
        b.alpha1.high = Bound::expr("2.0*mu_a");
        assert!(b.validate().is_err());
    }

    #[test]
    fn outer_box_covers_dependent_rows() {
        let b = HyperBounds::default().outer_box();
        assert_eq!(b[0], (-16.4337, 0.4163));
        // alpha3 high = -2 mu_a with mu_a >= -16.4337 - 14.649
        assert!((b[2].1 - 2.0 * (16.4337 + 14.6490)).abs() < 1e-9);
        assert!(b[6].1 > 30.0);
    }
}
