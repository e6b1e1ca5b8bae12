//! Post-critically finite self-similar structures: words, identified vertex
//! sets V_n, cell graphs, self-similar measures and address sampling.

use std::collections::VecDeque;
use std::fmt;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::StructureError;

/// A finite word over the alphabet {0, ..., N-1}.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Word(Vec<u8>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn new(letters: Vec<u8>, alphabet_size: usize) -> Result<Self, StructureError> {
        if let Some(&l) = letters.iter().find(|&&l| l as usize >= alphabet_size) {
            return Err(StructureError::LetterOutOfRange {
                letter: l as usize,
                size: alphabet_size,
            });
        }
        Ok(Word(letters))
    }

    /// Word with the given lexicographic index among all words of length `len`.
    pub fn from_index(mut index: usize, len: usize, alphabet_size: usize) -> Self {
        let mut letters = vec![0u8; len];
        for slot in letters.iter_mut().rev() {
            *slot = (index % alphabet_size) as u8;
            index /= alphabet_size;
        }
        Word(letters)
    }

    pub fn letters(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Lexicographic index among words of the same length.
    pub fn index(&self, alphabet_size: usize) -> usize {
        word_index(&self.0, alphabet_size)
    }

    pub fn child(&self, letter: u8) -> Word {
        let mut v = self.0.clone();
        v.push(letter);
        Word(v)
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v)
    }

    pub fn parent(&self) -> Option<Word> {
        if self.0.is_empty() {
            None
        } else {
            Some(Word(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    /// Prefix order `self <= other`.
    pub fn is_prefix_of(&self, other: &[u8]) -> bool {
        other.len() >= self.0.len() && other[..self.0.len()] == self.0[..]
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("-");
        }
        for &l in &self.0 {
            write!(f, "{}", letter_char(l))?;
        }
        Ok(())
    }
}

fn letter_char(l: u8) -> char {
    if l < 10 {
        (b'0' + l) as char
    } else {
        (b'a' + (l - 10)) as char
    }
}

/// Render an address as a compact string (digits, then lowercase letters).
pub fn address_string(letters: &[u8]) -> String {
    letters.iter().map(|&l| letter_char(l)).collect()
}

pub fn word_index(letters: &[u8], alphabet_size: usize) -> usize {
    letters
        .iter()
        .fold(0usize, |acc, &l| acc * alphabet_size + l as usize)
}

/// An identification F_i(q) = F_j(q').
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Gluing {
    pub a: (usize, usize),
    pub b: (usize, usize),
}

/// Boundary vertex `q` equals F_i(q').
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedRule {
    pub q: usize,
    pub letter: usize,
    pub image_of: usize,
}

/// Planar affine contraction x -> A x + b stored row-wise as [[a11, a12, b1], [a21, a22, b2]].
pub type Affine = [[f64; 3]; 2];

pub fn apply_affine(m: &Affine, x: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * x[0] + m[0][1] * x[1] + m[0][2],
        m[1][0] * x[0] + m[1][1] * x[1] + m[1][2],
    ]
}

/// Declarative description of a structure, as read from a config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub alphabet_size: usize,
    pub boundary: Vec<String>,
    /// Entries of the form `"i:q = j:q'"`.
    pub gluings: Vec<String>,
    /// Entries of the form `"q = i:q'"`: boundary vertex q is F_i(q').
    pub fixed: Vec<String>,
    #[serde(default)]
    pub maps: Option<Vec<Affine>>,
    #[serde(default)]
    pub boundary_coords: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub contraction_levels: Option<Vec<u32>>,
    #[serde(default)]
    pub r_star: Option<f64>,
}

/// A p.c.f. self-similar structure given combinatorially, with optional planar geometry.
#[derive(Clone)]
pub struct PcfStructure {
    name: String,
    alphabet_size: usize,
    labels: Vec<String>,
    gluings: Vec<Gluing>,
    fixed: Vec<FixedRule>,
    maps: Option<Vec<Affine>>,
    boundary_coords: Option<Vec<[f64; 2]>>,
    contraction_levels: Vec<u32>,
    r_star: Option<f64>,
    level1: Vec<u32>,
    level1_count: usize,
    tables: Arc<Mutex<Vec<Arc<VertexTable>>>>,
}

impl fmt::Debug for PcfStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PcfStructure")
            .field("name", &self.name)
            .field("alphabet_size", &self.alphabet_size)
            .field("boundary", &self.labels)
            .finish()
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn parse_cell_ref(s: &str, labels: &[String], n: usize) -> Result<(usize, usize), StructureError> {
    let (i, q) = s
        .split_once(':')
        .ok_or_else(|| StructureError::Malformed(s.to_string()))?;
    let i: usize = i
        .trim()
        .parse()
        .map_err(|_| StructureError::Malformed(s.to_string()))?;
    if i >= n {
        return Err(StructureError::LetterOutOfRange { letter: i, size: n });
    }
    Ok((i, label_index(q.trim(), labels)?))
}

fn label_index(q: &str, labels: &[String]) -> Result<usize, StructureError> {
    labels
        .iter()
        .position(|l| l == q)
        .ok_or_else(|| StructureError::UnknownLabel(q.to_string()))
}

impl PcfStructure {
    pub fn from_spec(spec: &StructureSpec) -> Result<Self, StructureError> {
        let n = spec.alphabet_size;
        let labels = spec.boundary.clone();
        let mut gluings = Vec::new();
        for g in &spec.gluings {
            let (l, r) = g
                .split_once('=')
                .ok_or_else(|| StructureError::Malformed(g.clone()))?;
            let a = parse_cell_ref(l, &labels, n)?;
            let b = parse_cell_ref(r, &labels, n)?;
            if a.0 == b.0 {
                return Err(StructureError::SelfGluing(g.clone()));
            }
            gluings.push(Gluing { a, b });
        }
        let mut fixed = Vec::new();
        for f in &spec.fixed {
            let (l, r) = f
                .split_once('=')
                .ok_or_else(|| StructureError::Malformed(f.clone()))?;
            let q = label_index(l.trim(), &labels)?;
            let (letter, image_of) = parse_cell_ref(r, &labels, n)?;
            fixed.push(FixedRule {
                q,
                letter,
                image_of,
            });
        }
        Self::new(
            spec.name.clone().unwrap_or_else(|| "custom".to_string()),
            n,
            labels,
            gluings,
            fixed,
            spec.maps.clone(),
            spec.boundary_coords.clone(),
            spec.contraction_levels.clone(),
            spec.r_star,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: String,
        alphabet_size: usize,
        labels: Vec<String>,
        gluings: Vec<Gluing>,
        fixed: Vec<FixedRule>,
        maps: Option<Vec<Affine>>,
        boundary_coords: Option<Vec<[f64; 2]>>,
        contraction_levels: Option<Vec<u32>>,
        r_star: Option<f64>,
    ) -> Result<Self, StructureError> {
        let n = alphabet_size;
        if n < 2 {
            return Err(StructureError::AlphabetTooSmall(n));
        }
        let b = labels.len();
        if b < 2 {
            return Err(StructureError::BoundaryTooSmall(b));
        }
        for g in &gluings {
            for (i, q) in [g.a, g.b] {
                if i >= n {
                    return Err(StructureError::LetterOutOfRange { letter: i, size: n });
                }
                if q >= b {
                    return Err(StructureError::Malformed(format!("boundary index {q}")));
                }
            }
            if g.a.0 == g.b.0 {
                return Err(StructureError::SelfGluing(format!(
                    "{}:{} = {}:{}",
                    g.a.0, labels[g.a.1], g.b.0, labels[g.b.1]
                )));
            }
        }
        for f in &fixed {
            if f.letter >= n {
                return Err(StructureError::LetterOutOfRange {
                    letter: f.letter,
                    size: n,
                });
            }
            if f.q >= b || f.image_of >= b {
                return Err(StructureError::Malformed("fixed rule".to_string()));
            }
        }

        let mut uf = UnionFind::new(n * b + b);
        for g in &gluings {
            uf.union(g.a.0 * b + g.a.1, g.b.0 * b + g.b.1);
        }
        for f in &fixed {
            uf.union(n * b + f.q, f.letter * b + f.image_of);
        }
        for q in 0..b {
            for q2 in q + 1..b {
                if uf.find(n * b + q) == uf.find(n * b + q2) {
                    return Err(StructureError::BoundaryCollapse(
                        labels[q].clone(),
                        labels[q2].clone(),
                    ));
                }
            }
        }
        for i in 0..n {
            for q in 0..b {
                for q2 in q + 1..b {
                    if uf.find(i * b + q) == uf.find(i * b + q2) {
                        return Err(StructureError::Degenerate {
                            cell: i,
                            a: labels[q].clone(),
                            b: labels[q2].clone(),
                        });
                    }
                }
            }
        }
        let mut class_id = vec![u32::MAX; n * b + b];
        for q in 0..b {
            let r = uf.find(n * b + q);
            class_id[r] = q as u32;
        }
        for q in 0..b {
            let r = uf.find(n * b + q);
            if !(0..n * b).any(|e| uf.find(e) == r) {
                return Err(StructureError::BoundaryNotFixed(labels[q].clone()));
            }
        }
        let mut next = b as u32;
        let mut level1 = vec![0u32; n * b];
        for (e, slot) in level1.iter_mut().enumerate() {
            let r = uf.find(e);
            if class_id[r] == u32::MAX {
                class_id[r] = next;
                next += 1;
            }
            *slot = class_id[r];
        }
        let level1_count = next as usize;

        // connectivity of the level-1 cell graph
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if !seen[j]
                    && level1[i * b..(i + 1) * b]
                        .iter()
                        .any(|v| level1[j * b..(j + 1) * b].contains(v))
                {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(StructureError::Disconnected);
        }

        let contraction_levels = contraction_levels.unwrap_or_else(|| vec![1; n]);
        if contraction_levels.len() != n || contraction_levels.contains(&0) {
            return Err(StructureError::Config(
                "contraction_levels needs one positive entry per letter".to_string(),
            ));
        }
        if let Some(r) = r_star {
            if !(r > 0.0 && r < 1.0) {
                return Err(StructureError::Config(format!("r_star {r} not in (0,1)")));
            }
        }
        if let Some(maps) = &maps {
            if maps.len() != n {
                return Err(StructureError::Geometry(format!(
                    "{} maps for {} letters",
                    maps.len(),
                    n
                )));
            }
        }
        if let Some(c) = &boundary_coords {
            if c.len() != b {
                return Err(StructureError::Geometry(format!(
                    "{} boundary coordinates for {} labels",
                    c.len(),
                    b
                )));
            }
        }
        if maps.is_some() != boundary_coords.is_some() {
            return Err(StructureError::Geometry(
                "maps and boundary_coords must be given together".to_string(),
            ));
        }
        if let (Some(maps), Some(coords)) = (&maps, &boundary_coords) {
            let close = |x: [f64; 2], y: [f64; 2]| (x[0] - y[0]).hypot(x[1] - y[1]) < 1e-9;
            for f in &fixed {
                if !close(coords[f.q], apply_affine(&maps[f.letter], coords[f.image_of])) {
                    return Err(StructureError::Geometry(format!(
                        "{} is not F_{}({})",
                        labels[f.q], f.letter, labels[f.image_of]
                    )));
                }
            }
            for g in &gluings {
                let x = apply_affine(&maps[g.a.0], coords[g.a.1]);
                let y = apply_affine(&maps[g.b.0], coords[g.b.1]);
                if !close(x, y) {
                    return Err(StructureError::Geometry(format!(
                        "gluing {}:{} = {}:{} does not match the maps",
                        g.a.0, labels[g.a.1], g.b.0, labels[g.b.1]
                    )));
                }
            }
        }

        Ok(PcfStructure {
            name,
            alphabet_size: n,
            labels,
            gluings,
            fixed,
            maps,
            boundary_coords,
            contraction_levels,
            r_star,
            level1,
            level1_count,
            tables: Arc::new(Mutex::new(Vec::new())),
        })
    }

    /// The Sierpinski gasket with vertices (0,0), (1,0), (1/2, sqrt(3)/2).
    pub fn sierpinski() -> Self {
        let p = [[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]];
        let maps = p
            .iter()
            .map(|c| [[0.5, 0.0, c[0] / 2.0], [0.0, 0.5, c[1] / 2.0]])
            .collect();
        let g = |i, q, j, q2| Gluing {
            a: (i, q),
            b: (j, q2),
        };
        Self::new(
            "sg".to_string(),
            3,
            vec!["q0".into(), "q1".into(), "q2".into()],
            vec![g(0, 1, 1, 0), g(0, 2, 2, 0), g(1, 2, 2, 1)],
            (0..3)
                .map(|q| FixedRule {
                    q,
                    letter: q,
                    image_of: q,
                })
                .collect(),
            Some(maps),
            Some(p.to_vec()),
            None,
            Some(0.5),
        )
        .expect("built-in gasket is valid")
    }

    /// The unit interval split in halves.
    pub fn interval() -> Self {
        Self::new(
            "interval".to_string(),
            2,
            vec!["q0".into(), "q1".into()],
            vec![Gluing {
                a: (0, 1),
                b: (1, 0),
            }],
            vec![
                FixedRule {
                    q: 0,
                    letter: 0,
                    image_of: 0,
                },
                FixedRule {
                    q: 1,
                    letter: 1,
                    image_of: 1,
                },
            ],
            Some(vec![
                [[0.5, 0.0, 0.0], [0.0, 0.5, 0.0]],
                [[0.5, 0.0, 0.5], [0.0, 0.5, 0.0]],
            ]),
            Some(vec![[0.0, 0.0], [1.0, 0.0]]),
            None,
            Some(0.5),
        )
        .expect("built-in interval is valid")
    }

    /// The three-dimensional Sierpinski gasket (tetrahedron), combinatorial only.
    pub fn tetrahedron() -> Self {
        let mut gluings = Vec::new();
        for i in 0..4 {
            for j in i + 1..4 {
                gluings.push(Gluing {
                    a: (i, j),
                    b: (j, i),
                });
            }
        }
        Self::new(
            "sg3".to_string(),
            4,
            (0..4).map(|q| format!("q{q}")).collect(),
            gluings,
            (0..4)
                .map(|q| FixedRule {
                    q,
                    letter: q,
                    image_of: q,
                })
                .collect(),
            None,
            None,
            None,
            Some(0.5),
        )
        .expect("built-in tetrahedron is valid")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "sg" => Some(Self::sierpinski()),
            "interval" => Some(Self::interval()),
            "sg3" | "tetrahedron" => Some(Self::tetrahedron()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn boundary_size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn gluings(&self) -> &[Gluing] {
        &self.gluings
    }

    pub fn fixed_rules(&self) -> &[FixedRule] {
        &self.fixed
    }

    pub fn maps(&self) -> Option<&[Affine]> {
        self.maps.as_deref()
    }

    pub fn boundary_coords(&self) -> Option<&[[f64; 2]]> {
        self.boundary_coords.as_deref()
    }

    pub fn has_geometry(&self) -> bool {
        self.maps.is_some()
    }

    pub fn contraction_levels(&self) -> &[u32] {
        &self.contraction_levels
    }

    pub fn r_star(&self) -> Option<f64> {
        self.r_star
    }

    /// Level-1 vertex id of the corner F_i(q).
    pub fn level1_id(&self, letter: usize, q: usize) -> usize {
        self.level1[letter * self.labels.len() + q] as usize
    }

    pub fn level1_count(&self) -> usize {
        self.level1_count
    }

    /// Number of cells at level n.
    pub fn cell_count(&self, n: usize) -> usize {
        self.alphabet_size.pow(n as u32)
    }

    /// Boundary label represented by a point whose address starts with `letter`
    /// and continues with the same letter: the fixed point of F_letter if declared.
    pub fn corner_for_letter(&self, letter: usize) -> usize {
        self.fixed
            .iter()
            .find(|f| f.letter == letter && f.q == f.image_of)
            .map(|f| f.q)
            .unwrap_or(0)
    }

    /// Identified vertex table of level n (cached).
    pub fn table(&self, n: usize) -> Arc<VertexTable> {
        let mut cache = self.tables.lock().expect("table cache poisoned");
        if cache.is_empty() {
            cache.push(Arc::new(self.level0_table()));
        }
        while cache.len() <= n {
            let prev = cache.last().cloned().expect("nonempty");
            cache.push(Arc::new(self.refine(&prev)));
        }
        cache[n].clone()
    }

    fn level0_table(&self) -> VertexTable {
        let b = self.boundary_size();
        VertexTable {
            level: 0,
            alphabet_size: self.alphabet_size,
            boundary_size: b,
            vertex_count: b,
            cell_vertices: (0..b as u32).collect(),
            coords: self.boundary_coords.clone(),
        }
    }

    fn refine(&self, prev: &VertexTable) -> VertexTable {
        let n_letters = self.alphabet_size;
        let b = self.boundary_size();
        let inner = self.level1_count - b;
        let old = prev.vertex_count;
        let cells = prev.cell_count();
        let mut cell_vertices = Vec::with_capacity(cells * n_letters * b);
        for w in 0..cells {
            let parent = prev.cell(w);
            for i in 0..n_letters {
                for q in 0..b {
                    let x = self.level1_id(i, q);
                    let id = if x < b {
                        parent[x]
                    } else {
                        (old + w * inner + (x - b)) as u32
                    };
                    cell_vertices.push(id);
                }
            }
        }
        let vertex_count = old + cells * inner;
        let coords = match (&self.maps, &prev.coords, &self.boundary_coords) {
            (Some(maps), Some(prev_coords), Some(bc)) => {
                let mut c = prev_coords.clone();
                c.resize(vertex_count, [0.0, 0.0]);
                for w in 0..cells {
                    let word = Word::from_index(w, prev.level, n_letters);
                    for i in 0..n_letters {
                        for q in 0..b {
                            let x = self.level1_id(i, q);
                            if x >= b {
                                let id = old + w * inner + (x - b);
                                let mut pt = apply_affine(&maps[i], bc[q]);
                                for &l in word.letters().iter().rev() {
                                    pt = apply_affine(&maps[l as usize], pt);
                                }
                                c[id] = pt;
                            }
                        }
                    }
                }
                Some(c)
            }
            _ => None,
        };
        VertexTable {
            level: prev.level + 1,
            alphabet_size: n_letters,
            boundary_size: b,
            vertex_count,
            cell_vertices,
            coords,
        }
    }

    /// Image of a point under F_{letters}.
    pub fn map_point(&self, letters: &[u8], x: [f64; 2]) -> Option<[f64; 2]> {
        let maps = self.maps.as_ref()?;
        let mut pt = x;
        for &l in letters.iter().rev() {
            pt = apply_affine(&maps[l as usize], pt);
        }
        Some(pt)
    }

    /// Planar location of the point with the given (truncated) address.
    pub fn address_point(&self, letters: &[u8]) -> Option<[f64; 2]> {
        let c = self.boundary_coords.as_ref()?;
        let k = c.len() as f64;
        let centroid = [
            c.iter().map(|p| p[0]).sum::<f64>() / k,
            c.iter().map(|p| p[1]).sum::<f64>() / k,
        ];
        self.map_point(letters, centroid)
    }

    /// Contraction ratio of F_i (operator norm of its linear part, if geometry exists,
    /// otherwise r_*^{j_i}).
    pub fn contraction_ratio(&self, letter: usize) -> Option<f64> {
        if let Some(maps) = &self.maps {
            let m = maps[letter];
            let a = nalgebra::Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]);
            let sv = a.singular_values();
            return Some(sv[0].max(sv[1]));
        }
        self.r_star
            .map(|r| r.powi(self.contraction_levels[letter] as i32))
    }

    /// Diameter of the level-0 boundary (Euclidean), if geometry exists.
    pub fn boundary_diameter(&self) -> Option<f64> {
        let c = self.boundary_coords.as_ref()?;
        let mut d: f64 = 0.0;
        for a in c {
            for b in c {
                d = d.max((a[0] - b[0]).hypot(a[1] - b[1]));
            }
        }
        Some(d)
    }
}

/// Identified vertex set V_n together with the corner ids of every level-n cell.
#[derive(Clone, Debug)]
pub struct VertexTable {
    level: usize,
    alphabet_size: usize,
    boundary_size: usize,
    vertex_count: usize,
    cell_vertices: Vec<u32>,
    coords: Option<Vec<[f64; 2]>>,
}

impl VertexTable {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn boundary_size(&self) -> usize {
        self.boundary_size
    }

    pub fn cell_count(&self) -> usize {
        self.cell_vertices.len() / self.boundary_size
    }

    /// Corner ids (ordered by boundary label) of the cell with lexicographic index `w`.
    pub fn cell(&self, w: usize) -> &[u32] {
        &self.cell_vertices[w * self.boundary_size..(w + 1) * self.boundary_size]
    }

    /// Vertex id of F_w(q).
    pub fn id(&self, w: &[u8], q: usize) -> usize {
        debug_assert_eq!(w.len(), self.level);
        self.cell(word_index(w, self.alphabet_size))[q] as usize
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    /// Cells containing each vertex, sorted lexicographically (so the first entry is
    /// the tie-break owner of a shared vertex).
    pub fn incidence(&self) -> Vec<Vec<u32>> {
        let mut inc = vec![Vec::new(); self.vertex_count];
        for w in 0..self.cell_count() {
            for &v in self.cell(w) {
                inc[v as usize].push(w as u32);
            }
        }
        inc
    }
}

/// Convenience wrapper matching the operation name used throughout the crate.
pub fn build_vertex_table(structure: &PcfStructure, n: usize) -> Arc<VertexTable> {
    structure.table(n)
}

/// The cell graph (T_n, E_n^*): cells adjacent iff they share an identified vertex.
#[derive(Clone, Debug)]
pub struct CellGraph {
    pub level: usize,
    pub cells: usize,
    pub edges: Vec<(u32, u32)>,
    pub neighbors: Vec<Vec<u32>>,
}

pub fn cell_adjacency(structure: &PcfStructure, n: usize) -> CellGraph {
    let table = structure.table(n);
    let cells = table.cell_count();
    let mut edges = Vec::new();
    for list in table.incidence() {
        for (a, &v) in list.iter().enumerate() {
            for &w in &list[a + 1..] {
                edges.push((v.min(w), v.max(w)));
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    let mut neighbors = vec![Vec::new(); cells];
    for &(a, b) in &edges {
        neighbors[a as usize].push(b);
        neighbors[b as usize].push(a);
    }
    for n in &mut neighbors {
        n.sort_unstable();
    }
    CellGraph {
        level: n,
        cells,
        edges,
        neighbors,
    }
}

impl CellGraph {
    /// Cells within graph distance `m` of `w` (Gamma_M(w)), sorted.
    pub fn ball(&self, w: usize, m: usize) -> Vec<u32> {
        let mut dist = vec![usize::MAX; self.cells];
        dist[w] = 0;
        let mut queue = VecDeque::from([w]);
        while let Some(v) = queue.pop_front() {
            if dist[v] == m {
                continue;
            }
            for &u in &self.neighbors[v] {
                if dist[u as usize] == usize::MAX {
                    dist[u as usize] = dist[v] + 1;
                    queue.push_back(u as usize);
                }
            }
        }
        (0..self.cells as u32)
            .filter(|&v| dist[v as usize] != usize::MAX)
            .collect()
    }

    pub fn is_connected_subset(&self, set: &[u32]) -> bool {
        if set.is_empty() {
            return true;
        }
        let mut inside = vec![false; self.cells];
        for &c in set {
            inside[c as usize] = true;
        }
        let mut seen = vec![false; self.cells];
        let mut queue = VecDeque::from([set[0] as usize]);
        seen[set[0] as usize] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &u in &self.neighbors[v] {
                let u = u as usize;
                if inside[u] && !seen[u] {
                    seen[u] = true;
                    count += 1;
                    queue.push_back(u);
                }
            }
        }
        count == set.len()
    }
}

/// Self-similar probability measure with weights theta_i.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfSimilarMeasure {
    weights: Vec<f64>,
}

impl SelfSimilarMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self, StructureError> {
        if weights.len() < 2 {
            return Err(StructureError::AlphabetTooSmall(weights.len()));
        }
        if weights.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(StructureError::Measure("weights must lie in (0,1)".into()));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(StructureError::Measure(format!("weights sum to {s}")));
        }
        Ok(SelfSimilarMeasure { weights })
    }

    pub fn uniform(n: usize) -> Self {
        SelfSimilarMeasure {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cell_mass(&self, w: &[u8]) -> f64 {
        w.iter().map(|&l| self.weights[l as usize]).product()
    }

    /// Masses of all level-n cells in lexicographic order.
    pub fn level_masses(&self, n: usize) -> Vec<f64> {
        let mut m = vec![1.0];
        for _ in 0..n {
            m = m
                .iter()
                .flat_map(|&x| self.weights.iter().map(move |&t| x * t))
                .collect();
        }
        m
    }

    fn draw_letter(&self, u: f64) -> u8 {
        let mut acc = 0.0;
        for (i, &t) in self.weights.iter().enumerate() {
            acc += t;
            if u < acc {
                return i as u8;
            }
        }
        (self.weights.len() - 1) as u8
    }
}

/// Random points of the fractal drawn from a self-similar measure, stored as
/// fixed-depth addresses.
#[derive(Clone, Debug)]
pub struct SampleCloud {
    depth: usize,
    seed: u64,
    addresses: Vec<u8>,
    coords: Option<Vec<[f64; 2]>>,
}

/// The RNG owned by stream `index` of `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn sample_measure(
    structure: &PcfStructure,
    measure: &SelfSimilarMeasure,
    count: usize,
    depth: usize,
    seed: u64,
) -> Result<SampleCloud, StructureError> {
    if count == 0 || depth == 0 {
        return Err(StructureError::Config(
            "sample count and depth must be positive".into(),
        ));
    }
    if measure.weights().len() != structure.alphabet_size() {
        return Err(StructureError::Measure(
            "measure and structure alphabets differ".into(),
        ));
    }
    let addresses: Vec<u8> = (0..count)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut rng = stream_rng(seed, i as u64);
            (0..depth)
                .map(|_| measure.draw_letter(rng.gen::<f64>()))
                .collect::<Vec<u8>>()
        })
        .collect();
    let coords = if structure.has_geometry() {
        Some(
            addresses
                .par_chunks(depth)
                .map(|a| structure.address_point(a).expect("geometry present"))
                .collect(),
        )
    } else {
        None
    };
    Ok(SampleCloud {
        depth,
        seed,
        addresses,
        coords,
    })
}

impl SampleCloud {
    pub fn len(&self) -> usize {
        self.addresses.len() / self.depth
    }

    pub fn is_empty(&self) -> bool {
        self.addresses.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn address(&self, i: usize) -> &[u8] {
        &self.addresses[i * self.depth..(i + 1) * self.depth]
    }

    pub fn coord(&self, i: usize) -> Option<[f64; 2]> {
        self.coords.as_ref().map(|c| c[i])
    }

    /// Empirical cell frequencies at level n.
    pub fn cell_frequencies(&self, n: usize, alphabet_size: usize) -> Vec<f64> {
        assert!(n <= self.depth);
        let mut counts = vec![0usize; alphabet_size.pow(n as u32)];
        for i in 0..self.len() {
            counts[word_index(&self.address(i)[..n], alphabet_size)] += 1;
        }
        let total = self.len() as f64;
        counts.into_iter().map(|c| c as f64 / total).collect()
    }

    /// CSV export with columns index, address, x, y.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,address,x,y\n");
        for i in 0..self.len() {
            let (x, y) = match self.coord(i) {
                Some(c) => (c[0].to_string(), c[1].to_string()),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!("{},{},{},{}\n", i, address_string(self.address(i)), x, y));
        }
        out
    }
}

/// log of the scale function g(w) = rho_w^{-1/(p-1)}.
fn log_scale(rho: &[f64], p: f64, w: &[u8]) -> f64 {
    -w.iter().map(|&l| rho[l as usize].ln()).sum::<f64>() / (p - 1.0)
}

/// Relative slack used when comparing g(w) with s, so that s = g(w) computed two
/// different ways still lands on w.
const SCALE_SLACK: f64 = 1e-12;

/// The partition Lambda_s = { w : g(parent(w)) > s >= g(w) }, with Lambda_s = {empty}
/// for s >= 1.
pub fn partition_scale(rho: &[f64], p: f64, s: f64) -> Vec<Word> {
    assert!(s > 0.0 && p > 1.0);
    assert!(rho.iter().all(|&r| r > 1.0), "partition_scale needs rho_i > 1");
    let ls = s.ln() + SCALE_SLACK;
    let mut out = Vec::new();
    let mut stack = vec![Vec::<u8>::new()];
    while let Some(w) = stack.pop() {
        if log_scale(rho, p, &w) <= ls {
            out.push(Word(w));
        } else {
            for l in (0..rho.len() as u8).rev() {
                let mut c = w.clone();
                c.push(l);
                stack.push(c);
            }
        }
    }
    out
}

/// Length of the unique prefix of `address` lying in Lambda_s, or None if the address
/// is too short to reach scale s.
pub fn scale_prefix_len(rho: &[f64], p: f64, s: f64, address: &[u8]) -> Option<usize> {
    let ls = s.ln() + SCALE_SLACK;
    let mut acc = 0.0;
    if acc <= ls {
        return Some(0);
    }
    for (k, &l) in address.iter().enumerate() {
        acc -= rho[l as usize].ln() / (p - 1.0);
        if acc <= ls {
            return Some(k + 1);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_index_roundtrip() {
        for idx in 0..81 {
            let w = Word::from_index(idx, 4, 3);
            assert_eq!(w.index(3), idx);
        }
        assert_eq!(Word::from_index(5, 2, 3).letters(), &[1, 2]);
    }

    #[test]
    fn rejects_letters_outside_alphabet() {
        assert!(Word::new(vec![0, 3], 3).is_err());
    }

    #[test]
    fn sg_vertex_counts() {
        let sg = PcfStructure::sierpinski();
        for n in 0..7 {
            let expect = 3 * (3usize.pow(n as u32) + 1) / 2;
            assert_eq!(sg.table(n).vertex_count(), expect);
        }
    }

    #[test]
    fn level_consistent_ids() {
        let sg = PcfStructure::sierpinski();
        let t2 = sg.table(2);
        let t3 = sg.table(3);
        for w in 0..t2.cell_count() {
            let word = Word::from_index(w, 2, 3);
            for q in 0..3 {
                // F_w(q) = F_{w q}(q) for the gasket
                let deeper = word.child(q as u8);
                assert_eq!(t2.id(word.letters(), q), t3.id(deeper.letters(), q));
            }
        }
    }

    #[test]
    fn coordinates_match_gluings() {
        let sg = PcfStructure::sierpinski();
        let t = sg.table(1);
        let c = t.coords().unwrap();
        assert!((c[t.id(&[0], 1)][0] - 0.5).abs() < 1e-15);
        assert!(c[t.id(&[0], 1)][1].abs() < 1e-15);
    }

    #[test]
    fn single_letter_rejected() {
        let r = PcfStructure::new(
            "x".into(),
            1,
            vec!["a".into(), "b".into()],
            vec![],
            vec![],
            None,
            None,
            None,
            None,
        );
        assert_eq!(r.unwrap_err(), StructureError::AlphabetTooSmall(1));
    }

    #[test]
    fn degenerate_cell_rejected() {
        let mut spec = sg_spec();
        spec.gluings.push("0:q1 = 1:q1".into());
        assert!(matches!(
            PcfStructure::from_spec(&spec),
            Err(StructureError::Degenerate { .. }) | Err(StructureError::BoundaryCollapse(..))
        ));
    }

    #[test]
    fn disconnected_rejected() {
        let mut spec = sg_spec();
        spec.gluings = vec!["0:q1 = 1:q0".into()];
        spec.maps = None;
        spec.boundary_coords = None;
        assert_eq!(
            PcfStructure::from_spec(&spec).unwrap_err(),
            StructureError::Disconnected
        );
    }

    #[test]
    fn spec_roundtrip_matches_builtin() {
        let s = PcfStructure::from_spec(&sg_spec()).unwrap();
        let b = PcfStructure::sierpinski();
        for n in 0..4 {
            assert_eq!(s.table(n).cell_vertices, b.table(n).cell_vertices);
        }
    }

    fn sg_spec() -> StructureSpec {
        toml::from_str(
            r#"
alphabet_size = 3
boundary = ["q0", "q1", "q2"]
gluings = ["0:q1 = 1:q0", "0:q2 = 2:q0", "1:q2 = 2:q1"]
fixed = ["q0 = 0:q0", "q1 = 1:q1", "q2 = 2:q2"]
maps = [[[0.5, 0.0, 0.0], [0.0, 0.5, 0.0]],
        [[0.5, 0.0, 0.5], [0.0, 0.5, 0.0]],
        [[0.5, 0.0, 0.25], [0.0, 0.5, 0.4330127018922193]]]
boundary_coords = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.8660254037844386]]
"#,
        )
        .unwrap()
    }

    #[test]
    fn cell_graph_counts() {
        let sg = PcfStructure::sierpinski();
        let g0 = cell_adjacency(&sg, 0);
        assert_eq!((g0.cells, g0.edges.len()), (1, 0));
        let g1 = cell_adjacency(&sg, 1);
        assert_eq!((g1.cells, g1.edges.len()), (3, 3));
        let g2 = cell_adjacency(&sg, 2);
        assert_eq!((g2.cells, g2.edges.len()), (9, 12));
    }

    #[test]
    fn partition_at_one_and_first_level() {
        let rho = [5.0 / 3.0; 3];
        assert_eq!(partition_scale(&rho, 2.0, 1.0), vec![Word::empty()]);
        let w1 = partition_scale(&rho, 2.0, 0.6);
        assert_eq!(w1.len(), 3);
        assert!(w1.iter().all(|w| w.len() == 1));
    }

    #[test]
    fn measure_masses_sum_to_one() {
        let m = SelfSimilarMeasure::new(vec![0.2, 0.3, 0.5]).unwrap();
        for n in 0..=10 {
            let s: f64 = m.level_masses(n).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_frequencies_and_determinism() {
        let sg = PcfStructure::sierpinski();
        let m = SelfSimilarMeasure::uniform(3);
        let c = sample_measure(&sg, &m, 300_000, 12, 11).unwrap();
        for f in c.cell_frequencies(1, 3) {
            assert!((f - 1.0 / 3.0).abs() < 0.005);
        }
        let c2 = sample_measure(&sg, &m, 300_000, 12, 11).unwrap();
        assert_eq!(c.addresses, c2.addresses);
        assert_eq!(c.coords, c2.coords);
    }
}
