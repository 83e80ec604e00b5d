//! Finite security lattices and array-extended levels.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("unknown security level `{0}`")]
    UnknownLevel(String),
    #[error("duplicate security level `{0}`")]
    DuplicateLevel(String),
    #[error("order is not antisymmetric: `{0}` and `{1}` are mutually below each other")]
    NotAntisymmetric(String, String),
    #[error("levels `{0}` and `{1}` have no least upper bound")]
    NoLub(String, String),
    #[error("lattice has no least element")]
    NoBottom,
    #[error("lattice is empty")]
    Empty,
    #[error("array levels with different contents cannot be joined: {0} and {1}")]
    ContentMismatch(String, String),
    #[error("too many levels ({0}); at most 255 are supported")]
    TooLarge(usize),
}

/// Index of a level inside its [`Lattice`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Level(pub u8);

/// A level, or an array reference level carrying the level of its contents.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExtLevel {
    Simple(Level),
    Array(Level, Box<ExtLevel>),
}

impl ExtLevel {
    pub fn array(outer: Level, content: ExtLevel) -> Self {
        ExtLevel::Array(outer, Box::new(content))
    }

    pub fn outer(&self) -> Level {
        match self {
            ExtLevel::Simple(k) | ExtLevel::Array(k, _) => *k,
        }
    }

    pub fn is_array(&self) -> bool {
        matches!(self, ExtLevel::Array(..))
    }

    pub fn content(&self) -> Option<&ExtLevel> {
        match self {
            ExtLevel::Simple(_) => None,
            ExtLevel::Array(_, c) => Some(c),
        }
    }

    fn with_outer(&self, k: Level) -> Self {
        match self {
            ExtLevel::Simple(_) => ExtLevel::Simple(k),
            ExtLevel::Array(_, c) => ExtLevel::Array(k, c.clone()),
        }
    }
}

impl From<Level> for ExtLevel {
    fn from(k: Level) -> Self {
        ExtLevel::Simple(k)
    }
}

/// Stack types are top-first: index 0 is the top of the operand stack.
pub type StackType = Vec<ExtLevel>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lattice {
    names: Vec<String>,
    leq: Vec<Vec<bool>>,
    lub: Vec<Vec<u8>>,
    bottom: Level,
    top: Level,
}

impl Default for Lattice {
    fn default() -> Self {
        Lattice::two_point()
    }
}

impl Lattice {
    /// The two-point lattice `L <= H`.
    pub fn two_point() -> Self {
        Lattice::from_hasse(&["L", "H"], &[("L", "H")]).expect("two-point lattice is valid")
    }

    /// Builds a lattice from level names and covering edges `(lower, upper)`.
    #[allow(clippy::needless_range_loop)]
    pub fn from_hasse<S: AsRef<str>>(names: &[S], edges: &[(S, S)]) -> Result<Self, LatticeError> {
        let n = names.len();
        if n == 0 {
            return Err(LatticeError::Empty);
        }
        if n > 255 {
            return Err(LatticeError::TooLarge(n));
        }
        let mut index = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.as_ref().to_string(), i).is_some() {
                return Err(LatticeError::DuplicateLevel(name.as_ref().to_string()));
            }
        }
        let lookup = |s: &str| index.get(s).copied().ok_or_else(|| LatticeError::UnknownLevel(s.to_string()));
        let mut leq = vec![vec![false; n]; n];
        for (i, row) in leq.iter_mut().enumerate() {
            row[i] = true;
        }
        for (a, b) in edges {
            let (a, b) = (lookup(a.as_ref())?, lookup(b.as_ref())?);
            leq[a][b] = true;
        }
        // Warshall closure.
        for k in 0..n {
            for i in 0..n {
                if leq[i][k] {
                    for j in 0..n {
                        if leq[k][j] {
                            leq[i][j] = true;
                        }
                    }
                }
            }
        }
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        for i in 0..n {
            for j in (i + 1)..n {
                if leq[i][j] && leq[j][i] {
                    return Err(LatticeError::NotAntisymmetric(names[i].clone(), names[j].clone()));
                }
            }
        }
        let mut lub = vec![vec![0u8; n]; n];
        for a in 0..n {
            for b in 0..n {
                let uppers: Vec<usize> = (0..n).filter(|&u| leq[a][u] && leq[b][u]).collect();
                let least = uppers
                    .iter()
                    .copied()
                    .find(|&u| uppers.iter().all(|&v| leq[u][v]))
                    .ok_or_else(|| LatticeError::NoLub(names[a].clone(), names[b].clone()))?;
                lub[a][b] = least as u8;
            }
        }
        let bottom = (0..n).find(|&b| (0..n).all(|x| leq[b][x])).ok_or(LatticeError::NoBottom)?;
        let top = (1..n).fold(0usize, |acc, x| lub[acc][x] as usize);
        Ok(Lattice { names, leq, lub, bottom: Level(bottom as u8), top: Level(top as u8) })
    }

    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn levels(&self) -> impl Iterator<Item = Level> + '_ {
        (0..self.names.len()).map(|i| Level(i as u8))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Covering pairs of the order, in index order.
    pub fn hasse_edges(&self) -> Vec<(Level, Level)> {
        let n = self.size();
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a == b || !self.leq[a][b] {
                    continue;
                }
                let covered = (0..n).any(|c| c != a && c != b && self.leq[a][c] && self.leq[c][b]);
                if !covered {
                    out.push((Level(a as u8), Level(b as u8)));
                }
            }
        }
        out
    }

    pub fn level(&self, name: &str) -> Result<Level, LatticeError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| Level(i as u8))
            .ok_or_else(|| LatticeError::UnknownLevel(name.to_string()))
    }

    pub fn name(&self, k: Level) -> &str {
        &self.names[k.0 as usize]
    }

    pub fn bottom(&self) -> Level {
        self.bottom
    }

    pub fn top(&self) -> Level {
        self.top
    }

    pub fn leq(&self, a: Level, b: Level) -> bool {
        self.leq[a.0 as usize][b.0 as usize]
    }

    pub fn lub(&self, a: Level, b: Level) -> Level {
        Level(self.lub[a.0 as usize][b.0 as usize])
    }

    pub fn lub_all<I: IntoIterator<Item = Level>>(&self, it: I) -> Level {
        it.into_iter().fold(self.bottom, |acc, k| self.lub(acc, k))
    }

    pub fn ext_leq(&self, a: &ExtLevel, b: &ExtLevel) -> bool {
        match (a, b) {
            (ExtLevel::Array(ka, ca), ExtLevel::Array(kb, cb)) => ca == cb && self.leq(*ka, *kb),
            _ => self.leq(a.outer(), b.outer()),
        }
    }

    /// `⊔ext` on two extended levels. Arrays keep their content; two arrays
    /// must agree on it.
    pub fn ext_lub(&self, a: &ExtLevel, b: &ExtLevel) -> Result<ExtLevel, LatticeError> {
        let k = self.lub(a.outer(), b.outer());
        match (a, b) {
            (ExtLevel::Simple(_), ExtLevel::Simple(_)) => Ok(ExtLevel::Simple(k)),
            (ExtLevel::Array(_, c), ExtLevel::Simple(_)) | (ExtLevel::Simple(_), ExtLevel::Array(_, c)) => {
                Ok(ExtLevel::Array(k, c.clone()))
            }
            (ExtLevel::Array(_, ca), ExtLevel::Array(_, cb)) if ca == cb => Ok(ExtLevel::Array(k, ca.clone())),
            _ => Err(LatticeError::ContentMismatch(self.render_ext(a), self.render_ext(b))),
        }
    }

    /// `k ⊔ext e`: raises the outer level of `e`, keeping its shape.
    pub fn raise(&self, k: Level, e: &ExtLevel) -> ExtLevel {
        e.with_outer(self.lub(k, e.outer()))
    }

    /// Join used at control-flow merges. Incompatible shapes collapse to a
    /// simple level, which later array accesses reject.
    pub fn merge(&self, a: &ExtLevel, b: &ExtLevel) -> ExtLevel {
        self.ext_lub(a, b)
            .ok()
            .filter(|_| a.is_array() == b.is_array())
            .unwrap_or_else(|| ExtLevel::Simple(self.lub(a.outer(), b.outer())))
    }

    pub fn lift(&self, k: Level, st: &[ExtLevel]) -> StackType {
        st.iter().map(|e| self.raise(k, e)).collect()
    }

    pub fn stack_leq(&self, a: &[ExtLevel], b: &[ExtLevel]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| self.ext_leq(x, y))
    }

    pub fn render_ext(&self, e: &ExtLevel) -> String {
        match e {
            ExtLevel::Simple(k) => self.name(*k).to_string(),
            ExtLevel::Array(k, c) => format!("{}[{}]", self.name(*k), self.render_ext(c)),
        }
    }

    pub fn render_stack(&self, st: &[ExtLevel]) -> String {
        let items: Vec<String> = st.iter().map(|e| self.render_ext(e)).collect();
        format!("[{}]", items.join(", "))
    }

    /// Parses `H`, `L[H]`, `H[L[H]]`.
    pub fn parse_ext(&self, s: &str) -> Result<ExtLevel, LatticeError> {
        let s = s.trim();
        match s.find('[') {
            None => Ok(ExtLevel::Simple(self.level(s)?)),
            Some(open) => {
                let inner = s[open + 1..].strip_suffix(']').ok_or_else(|| LatticeError::UnknownLevel(s.to_string()))?;
                Ok(ExtLevel::array(self.level(s[..open].trim())?, self.parse_ext(inner)?))
            }
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}
