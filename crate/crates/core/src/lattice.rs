//! Lattice points and symmetric jump kernels on `Z^d`.

use crate::error::{invalid, Error, Result};
use crate::special::zeta;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// A point of the integer lattice `Z^d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint(Vec<i64>);

impl LatticePoint {
    pub fn new(coords: Vec<i64>) -> Self {
        assert!(!coords.is_empty(), "lattice points need d >= 1");
        Self(coords)
    }

    pub fn origin(d: usize) -> Self {
        Self::new(vec![0; d])
    }

    /// The `i`-th standard basis vector (zero-based).
    pub fn unit(d: usize, i: usize) -> Self {
        let mut c = vec![0; d];
        c[i] = 1;
        Self(c)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn norm_sq(&self) -> i64 {
        self.0.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    pub fn l1(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).sum()
    }

    pub fn neg(&self) -> Self {
        Self(self.0.iter().map(|c| -c).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim());
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim());
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, k: i64) -> Self {
        Self(self.0.iter().map(|c| c * k).collect())
    }

    /// Canonical representative of the orbit under `z -> -z`.
    pub fn canonical_sign(&self) -> Self {
        let n = self.neg();
        if n < *self {
            n
        } else {
            self.clone()
        }
    }

    /// Coordinates sorted by absolute value after removing signs; equal for
    /// all points in one orbit of the signed permutation group.
    pub fn hyperoctahedral_key(&self) -> Vec<i64> {
        let mut k: Vec<i64> = self.0.iter().map(|c| c.abs()).collect();
        k.sort_unstable();
        k
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Angular profile `H` of a power-law tail on the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Angular {
    Constant(f64),
    /// `H(u) = sum_j w_j u_j^2`, even and continuous.
    Quadratic(Vec<f64>),
}

impl Angular {
    pub fn eval(&self, u: &[f64]) -> f64 {
        match self {
            Angular::Constant(h) => *h,
            Angular::Quadratic(w) => w.iter().zip(u).map(|(w, x)| w * x * x).sum(),
        }
    }

    /// Lower bound of `H` on the sphere.
    pub fn min_value(&self) -> f64 {
        match self {
            Angular::Constant(h) => *h,
            Angular::Quadratic(w) => w.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn is_permutation_invariant(&self) -> bool {
        match self {
            Angular::Constant(_) => true,
            Angular::Quadratic(w) => w.windows(2).all(|p| p[0] == p[1]),
        }
    }
}

/// How the power-law tail beyond the stored radius is handled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TailExtension {
    /// Rates beyond the radius are dropped and the rest renormalized.
    Truncated,
    /// One-dimensional kernel `a(z) = |z|^-(1+alpha) / (2 zeta(1+alpha))`
    /// kept on all of `Z`: entries up to the radius are stored and the
    /// remainder (of total rate `tail_mass`) enters the symbol analytically.
    Analytic { tail_mass: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSpec {
    pub alpha: f64,
    pub angular: Angular,
    pub truncation_radius: usize,
    pub extension: TailExtension,
    /// Estimated rate beyond the truncation radius relative to the stored
    /// rate; zero for analytic tails.
    pub omitted_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VarianceClass {
    Finite,
    Heavy(f64),
}

impl VarianceClass {
    /// Exponent of `|phi(theta)|` at the origin: 2 for finite variance.
    pub fn exponent(&self) -> f64 {
        match self {
            VarianceClass::Finite => 2.0,
            VarianceClass::Heavy(a) => *a,
        }
    }
}

/// Outcome of [`validate_rates`] / [`JumpKernel::validate`].
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub symmetric: bool,
    pub zero_row_sum: bool,
    pub positive: bool,
    pub irreducible: bool,
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.symmetric && self.zero_row_sum && self.positive && self.irreducible
    }
}

/// Symmetric, spatially homogeneous jump kernel `a(z)` on `Z^d`.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpKernel {
    dimension: usize,
    entries: Vec<(LatticePoint, f64)>,
    diag_rate: f64,
    tail: Option<TailSpec>,
}

pub const ROW_SUM_TOL: f64 = 1e-12;

impl JumpKernel {
    /// Lattice Laplacian `kappa * Delta`: rate `kappa / (2d)` to each
    /// nearest neighbour.
    pub fn simple(d: usize, kappa: f64) -> Result<Self> {
        if d < 1 {
            return Err(invalid("dimension must be at least 1"));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(invalid(format!("kappa must be positive, got {kappa}")));
        }
        let r = kappa / (2.0 * d as f64);
        let mut entries = Vec::with_capacity(2 * d);
        for i in 0..d {
            let e = LatticePoint::unit(d, i);
            entries.push((e.neg(), r));
            entries.push((e, r));
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self { dimension: d, entries, diag_rate: -kappa, tail: None })
    }

    /// Power-law kernel `H(z/|z|) / |z|^(d+alpha)` on `0 < |z| <= radius`,
    /// renormalized to unit total jump rate.
    pub fn heavy_tail(d: usize, alpha: f64, angular: Angular, radius: usize) -> Result<Self> {
        check_heavy_params(d, alpha, &angular)?;
        let r2max = (radius * radius) as i64;
        let mut raw = Vec::new();
        let (mut total, mut comp) = (0.0f64, 0.0f64);
        for z in ball_points(d, radius) {
            let n2 = z.norm_sq();
            if n2 == 0 || n2 > r2max {
                continue;
            }
            let n = (n2 as f64).sqrt();
            let u: Vec<f64> = z.coords().iter().map(|&c| c as f64 / n).collect();
            let rate = angular.eval(&u) / n.powf(d as f64 + alpha);
            let y = rate - comp;
            let t = total + y;
            comp = (t - total) - y;
            total = t;
            raw.push((z, rate));
        }
        raw.sort_by(|a, b| a.0.cmp(&b.0));
        if raw.is_empty() || total <= 0.0 {
            return Err(Error::DegenerateKernel(format!(
                "no lattice points with 0 < |z| <= {radius}"
            )));
        }
        let entries: Vec<_> = raw.into_iter().map(|(z, r)| (z, r / total)).collect();
        // continuum estimate of the dropped mass beyond the radius
        let h = angular.min_value().max(0.0);
        let sphere = sphere_area(d);
        let omitted = h * sphere * (radius as f64 + 0.5).powf(-alpha) / alpha;
        let tail = TailSpec {
            alpha,
            angular,
            truncation_radius: radius,
            extension: TailExtension::Truncated,
            omitted_fraction: omitted / total,
        };
        let k = Self { dimension: d, entries, diag_rate: -1.0, tail: Some(tail) };
        k.check_constructed()?;
        Ok(k)
    }

    /// Untruncated one-dimensional power-law kernel
    /// `a(z) = |z|^-(1+alpha) / (2 zeta(1+alpha))`, unit total rate.
    ///
    /// Rates with `|z| <= radius` are stored explicitly (lattice oracles and
    /// the simulator use them); the symbol includes the full tail.
    pub fn heavy_tail_1d(alpha: f64, radius: usize) -> Result<Self> {
        check_heavy_params(1, alpha, &Angular::Constant(1.0))?;
        if radius < 1 {
            return Err(Error::DegenerateKernel("radius must be at least 1".into()));
        }
        let s = 1.0 + alpha;
        let c = 0.5 / zeta(s);
        let mut entries = Vec::with_capacity(2 * radius);
        let mut stored = 0.0;
        for n in 1..=radius as i64 {
            let r = c * (n as f64).powf(-s);
            stored += 2.0 * r;
            entries.push((LatticePoint::new(vec![n]), r));
            entries.push((LatticePoint::new(vec![-n]), r));
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let tail_mass = 1.0 - stored;
        let tail = TailSpec {
            alpha,
            angular: Angular::Constant(2.0 * c),
            truncation_radius: radius,
            extension: TailExtension::Analytic { tail_mass },
            omitted_fraction: 0.0,
        };
        let k = Self { dimension: 1, entries, diag_rate: -1.0, tail: Some(tail) };
        k.check_constructed()?;
        Ok(k)
    }

    /// Heavy-tailed kernel with the default radius: untruncated in `d = 1`;
    /// for `d >= 2` the smallest radius with omitted tail mass below `1e-6`
    /// of the kept mass, capped so the stencil stays tractable.
    pub fn heavy_tail_default(d: usize, alpha: f64) -> Result<Self> {
        if d == 1 {
            return Self::heavy_tail_1d(alpha, DEFAULT_RADIUS_1D);
        }
        let radius = default_radius(d, alpha);
        Self::heavy_tail(d, alpha, Angular::Constant(1.0), radius)
    }

    /// General kernel from off-diagonal rates; `a(0)` is set to minus their
    /// sum. Rejects anything failing [`validate_rates`].
    pub fn from_rates(d: usize, rates: Vec<(LatticePoint, f64)>) -> Result<Self> {
        let diag: f64 = -rates.iter().map(|r| r.1).sum::<f64>();
        Self::from_parts(d, rates, diag, None)
    }

    fn from_parts(
        d: usize,
        rates: Vec<(LatticePoint, f64)>,
        diag: f64,
        tail: Option<TailSpec>,
    ) -> Result<Self> {
        let tail_mass = match &tail {
            Some(TailSpec { extension: TailExtension::Analytic { tail_mass }, .. }) => *tail_mass,
            _ => 0.0,
        };
        let report = validate_rates(d, &rates, diag + tail_mass);
        if !report.passed() {
            return Err(Error::InvalidKernel(report.problems.join("; ")));
        }
        let mut entries = rates;
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self { dimension: d, entries, diag_rate: diag, tail })
    }

    fn check_constructed(&self) -> Result<()> {
        let r = self.validate();
        if r.passed() {
            Ok(())
        } else {
            Err(Error::InvalidKernel(r.problems.join("; ")))
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Off-diagonal rates `(z, a(z))`, sorted by `z`.
    pub fn entries(&self) -> &[(LatticePoint, f64)] {
        &self.entries
    }

    /// `a(0) < 0`.
    pub fn diag_rate(&self) -> f64 {
        self.diag_rate
    }

    /// Total jump rate `|a(0)|`.
    pub fn jump_rate(&self) -> f64 {
        -self.diag_rate
    }

    pub fn tail(&self) -> Option<&TailSpec> {
        self.tail.as_ref()
    }

    /// Rate carried analytically beyond the stored entries (zero unless the
    /// tail is [`TailExtension::Analytic`]).
    pub fn analytic_tail_mass(&self) -> f64 {
        match &self.tail {
            Some(TailSpec { extension: TailExtension::Analytic { tail_mass }, .. }) => *tail_mass,
            _ => 0.0,
        }
    }

    pub fn variance_class(&self) -> VarianceClass {
        match &self.tail {
            None => VarianceClass::Finite,
            Some(t) => VarianceClass::Heavy(t.alpha),
        }
    }

    pub fn rate(&self, z: &LatticePoint) -> f64 {
        if z.is_origin() {
            return self.diag_rate;
        }
        self.entries
            .binary_search_by(|e| e.0.cmp(z))
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    /// Off-diagonal rates with `|z|_inf <= radius`, including rates of the
    /// analytic tail beyond the stored entries.
    pub fn jump_rates_within(&self, radius: i64) -> Vec<(LatticePoint, f64)> {
        let mut out: Vec<_> = self
            .entries
            .iter()
            .filter(|(z, _)| z.coords().iter().all(|c| c.abs() <= radius))
            .cloned()
            .collect();
        if let Some(TailSpec { extension: TailExtension::Analytic { .. }, alpha, angular, truncation_radius, .. }) =
            &self.tail
        {
            let c = match angular {
                Angular::Constant(h) => 0.5 * h,
                Angular::Quadratic(_) => unreachable!("analytic tails are radial"),
            };
            for n in (*truncation_radius as i64 + 1)..=radius {
                let r = c * (n as f64).powf(-(1.0 + alpha));
                out.push((LatticePoint::new(vec![n]), r));
                out.push((LatticePoint::new(vec![-n]), r));
            }
            out.sort_by(|a, b| a.0.cmp(&b.0));
        }
        out
    }

    /// Largest `|z|_inf` among stored entries.
    pub fn stencil_radius(&self) -> i64 {
        self.entries
            .iter()
            .flat_map(|(z, _)| z.coords().iter().map(|c| c.abs()))
            .max()
            .unwrap_or(0)
    }

    /// True if the support is contained in `{+-e_1, ..., +-e_d}`.
    pub fn is_axis_nearest_neighbour(&self) -> bool {
        self.tail.is_none() && self.entries.iter().all(|(z, _)| z.l1() == 1)
    }

    /// Whether `a(z)` is unchanged by flipping the sign of any one coordinate.
    pub fn is_reflection_symmetric(&self) -> bool {
        let d = self.dimension();
        self.entries.iter().all(|(z, r)| {
            (0..d).all(|j| {
                let mut c = z.coords().to_vec();
                c[j] = -c[j];
                (self.rate(&LatticePoint::new(c)) - r).abs() <= 1e-14 * r.abs()
            })
        })
    }

    pub fn validate(&self) -> ValidationReport {
        validate_rates(self.dimension, &self.entries, self.diag_rate + self.analytic_tail_mass())
    }

    /// Stable 64-bit FNV-1a hash of the serialized form.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    /// Key-value text form; rates in 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::from("brw-kernel v1\n");
        s += &format!("dimension {}\n", self.dimension);
        s += &format!("diagonal {}\n", fmt17(self.diag_rate));
        if let Some(t) = &self.tail {
            s += &format!("tail alpha {} radius {} ", fmt17(t.alpha), t.truncation_radius);
            match t.extension {
                TailExtension::Truncated => s += "extension truncated ",
                TailExtension::Analytic { tail_mass } => {
                    s += &format!("extension analytic {} ", fmt17(tail_mass))
                }
            }
            s += &format!("omitted {} ", fmt17(t.omitted_fraction));
            match &t.angular {
                Angular::Constant(h) => s += &format!("angular constant {}\n", fmt17(*h)),
                Angular::Quadratic(w) => {
                    s += "angular quadratic";
                    for x in w {
                        s += &format!(" {}", fmt17(*x));
                    }
                    s += "\n";
                }
            }
        }
        for (z, r) in &self.entries {
            s += "rate";
            for c in z.coords() {
                s += &format!(" {c}");
            }
            s += &format!(" {}\n", fmt17(*r));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
        let mut dim = None;
        let mut diag = None;
        let mut tail = None;
        let mut rates = Vec::new();
        let mut saw_header = false;
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !saw_header {
                if line != "brw-kernel v1" {
                    return Err(perr(ln, "expected header 'brw-kernel v1'"));
                }
                saw_header = true;
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let num = |t: &str| t.parse::<f64>().map_err(|_| perr(ln, "bad number"));
            match toks[0] {
                "dimension" => {
                    let d: usize =
                        toks.get(1).and_then(|t| t.parse().ok()).ok_or(perr(ln, "bad dimension"))?;
                    if d < 1 {
                        return Err(perr(ln, "dimension must be >= 1"));
                    }
                    dim = Some(d);
                }
                "diagonal" => diag = Some(num(toks.get(1).ok_or(perr(ln, "missing value"))?)?),
                "tail" => tail = Some(parse_tail(&toks[1..]).map_err(|m| perr(ln, &m))?),
                "rate" => {
                    let d = dim.ok_or(perr(ln, "rate before dimension"))?;
                    if toks.len() != d + 2 {
                        return Err(perr(ln, "rate line needs d coordinates and a value"));
                    }
                    let mut c = Vec::with_capacity(d);
                    for t in &toks[1..=d] {
                        c.push(t.parse::<i64>().map_err(|_| perr(ln, "bad coordinate"))?);
                    }
                    rates.push((LatticePoint::new(c), num(toks[d + 1])?));
                }
                _ => return Err(perr(ln, "unknown key")),
            }
        }
        let d = dim.ok_or(perr(0, "missing dimension"))?;
        let diag = diag.ok_or(perr(0, "missing diagonal"))?;
        Self::from_parts(d, rates, diag, tail)
    }
}

fn parse_tail(toks: &[&str]) -> std::result::Result<TailSpec, String> {
    let mut alpha = None;
    let mut radius = None;
    let mut extension = TailExtension::Truncated;
    let mut omitted = 0.0;
    let mut angular = Angular::Constant(1.0);
    let f = |t: Option<&&str>| -> std::result::Result<f64, String> {
        t.ok_or("missing value")?.parse::<f64>().map_err(|_| "bad number".to_string())
    };
    let mut i = 0;
    while i < toks.len() {
        match toks[i] {
            "alpha" => {
                alpha = Some(f(toks.get(i + 1))?);
                i += 2;
            }
            "radius" => {
                radius = Some(
                    toks.get(i + 1).and_then(|t| t.parse().ok()).ok_or("bad radius")?,
                );
                i += 2;
            }
            "omitted" => {
                omitted = f(toks.get(i + 1))?;
                i += 2;
            }
            "extension" => match toks.get(i + 1) {
                Some(&"truncated") => {
                    extension = TailExtension::Truncated;
                    i += 2;
                }
                Some(&"analytic") => {
                    extension = TailExtension::Analytic { tail_mass: f(toks.get(i + 2))? };
                    i += 3;
                }
                _ => return Err("bad extension".into()),
            },
            "angular" => {
                match toks.get(i + 1) {
                    Some(&"constant") => angular = Angular::Constant(f(toks.get(i + 2))?),
                    Some(&"quadratic") => {
                        let w: std::result::Result<Vec<f64>, String> =
                            toks[i + 2..].iter().map(|t| f(Some(t))).collect();
                        angular = Angular::Quadratic(w?);
                    }
                    _ => return Err("bad angular".into()),
                }
                break;
            }
            _ => return Err(format!("unknown tail key '{}'", toks[i])),
        }
    }
    let alpha = alpha.ok_or("tail needs alpha")?;
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err("alpha must lie in (0, 2)".into());
    }
    Ok(TailSpec {
        alpha,
        angular,
        truncation_radius: radius.ok_or("tail needs radius")?,
        extension,
        omitted_fraction: omitted,
    })
}

pub const DEFAULT_RADIUS_1D: usize = 64;

/// Smallest radius with continuum-estimated tail ratio below `1e-6`,
/// capped at 24 (`d = 2`) or 6 (`d >= 3`).
pub fn default_radius(d: usize, alpha: f64) -> usize {
    let cap = match d {
        1 => 1 << 20,
        2 => 24,
        _ => 6,
    };
    let sphere = sphere_area(d);
    // kept mass is at least the nearest-neighbour shell
    let kept = 2.0 * d as f64;
    let mut r = 1usize;
    while r < cap {
        let omitted = sphere * (r as f64 + 0.5).powf(-alpha) / alpha;
        if omitted < 1e-6 * kept {
            break;
        }
        r += 1;
    }
    r
}

fn check_heavy_params(d: usize, alpha: f64, angular: &Angular) -> Result<()> {
    if d < 1 {
        return Err(invalid("dimension must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(invalid(format!("alpha must lie in (0, 2), got {alpha}")));
    }
    if let Angular::Quadratic(w) = angular {
        if w.len() != d {
            return Err(invalid("angular weights must have length d"));
        }
    }
    if !(angular.min_value() > 0.0) {
        return Err(invalid("angular profile H must be strictly positive"));
    }
    Ok(())
}

fn sphere_area(d: usize) -> f64 {
    use std::f64::consts::PI;
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => {
            let h = d as f64 / 2.0;
            2.0 * PI.powf(h) / statrs::function::gamma::gamma(h)
        }
    }
}

/// All points of the cube `{-r..r}^d`.
pub(crate) fn ball_points(d: usize, r: usize) -> Vec<LatticePoint> {
    let r = r as i64;
    let side = (2 * r + 1) as usize;
    let count = side.pow(d as u32);
    let mut out = Vec::with_capacity(count);
    for mut idx in 0..count {
        let mut c = vec![0i64; d];
        for x in c.iter_mut() {
            *x = (idx % side) as i64 - r;
            idx /= side;
        }
        out.push(LatticePoint(c));
    }
    out
}

/// Check symmetry, conservativity, positivity and irreducibility of a set of
/// off-diagonal rates with diagonal `diag`.
pub fn validate_rates(d: usize, rates: &[(LatticePoint, f64)], diag: f64) -> ValidationReport {
    let mut rep = ValidationReport {
        symmetric: true,
        zero_row_sum: true,
        positive: true,
        irreducible: true,
        problems: Vec::new(),
    };
    let mut map: BTreeMap<&LatticePoint, f64> = BTreeMap::new();
    for (z, r) in rates {
        if z.dim() != d {
            rep.positive = false;
            rep.problems.push(format!("point {z} has wrong dimension"));
            continue;
        }
        if z.is_origin() {
            rep.positive = false;
            rep.problems.push("off-diagonal list contains the origin".into());
            continue;
        }
        if map.insert(z, *r).is_some() {
            rep.positive = false;
            rep.problems.push(format!("duplicate rate for {z}"));
        }
        if !(*r > 0.0 && r.is_finite()) {
            rep.positive = false;
            rep.problems.push(format!("rate at {z} is not strictly positive"));
        }
    }
    if !(diag < 0.0) {
        rep.positive = false;
        rep.problems.push("a(0) must be strictly negative".into());
    }
    for (z, r) in &map {
        if map.get(&z.neg()) != Some(r) {
            rep.symmetric = false;
            rep.problems.push(format!("a({z}) != a(-{z})"));
            break;
        }
    }
    let sum: f64 = map.values().sum::<f64>() + diag;
    if sum.abs() > ROW_SUM_TOL {
        rep.zero_row_sum = false;
        rep.problems.push(format!("row sum is {sum:e}, not zero"));
    }
    let support: Vec<&LatticePoint> = map.keys().copied().collect();
    if !generates_full_lattice(d, &support) {
        rep.irreducible = false;
        rep.problems.push("support does not generate Z^d".into());
    }
    rep
}

/// True if the integer span of `vectors` is all of `Z^d`: the Hermite
/// normal form has rank `d` and unit determinant.
pub fn generates_full_lattice(d: usize, vectors: &[&LatticePoint]) -> bool {
    let mut rows: Vec<Vec<i128>> =
        vectors.iter().map(|v| v.coords().iter().map(|&c| c as i128).collect()).collect();
    let mut det: i128 = 1;
    let mut top = 0;
    for col in 0..d {
        // Euclid on the column until a single nonzero entry remains at `top`
        loop {
            let mut best: Option<usize> = None;
            for r in top..rows.len() {
                if rows[r][col] != 0
                    && best.map_or(true, |b| rows[r][col].abs() < rows[b][col].abs())
                {
                    best = Some(r);
                }
            }
            let Some(b) = best else { return false };
            rows.swap(top, b);
            let mut done = true;
            for r in top + 1..rows.len() {
                let q = rows[r][col] / rows[top][col];
                if q != 0 {
                    for c in col..d {
                        rows[r][c] -= q * rows[top][c];
                    }
                }
                if rows[r][col] != 0 {
                    done = false;
                }
            }
            if done {
                break;
            }
        }
        det *= rows[top][col].abs();
        top += 1;
    }
    det == 1
}

pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i64]) -> LatticePoint {
        LatticePoint::new(c.to_vec())
    }

    #[test]
    fn simple_kernel_rates() {
        let k = JumpKernel::simple(1, 1.0).unwrap();
        assert_eq!(k.rate(&p(&[1])), 0.5);
        assert_eq!(k.rate(&p(&[-1])), 0.5);
        assert_eq!(k.diag_rate(), -1.0);
        let k = JumpKernel::simple(3, 1.0).unwrap();
        assert_eq!(k.entries().len(), 6);
        assert!(k.entries().iter().all(|e| e.1 == 1.0 / 6.0));
        let k = JumpKernel::simple(2, 2.0).unwrap();
        assert_eq!(k.entries().len(), 4);
        assert!(k.entries().iter().all(|e| e.1 == 0.5));
        assert_eq!(k.diag_rate(), -2.0);
        assert_eq!(k.variance_class(), VarianceClass::Finite);
    }

    #[test]
    fn simple_kernel_rejects_bad_params() {
        assert!(matches!(JumpKernel::simple(0, 1.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(JumpKernel::simple(2, 0.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(JumpKernel::simple(2, -1.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn heavy_kernel_shells() {
        let k = JumpKernel::heavy_tail(1, 0.5, Angular::Constant(1.0), 1).unwrap();
        assert_eq!(k.rate(&p(&[1])), 0.5);
        let k = JumpKernel::heavy_tail(1, 0.5, Angular::Constant(1.0), 3).unwrap();
        let r1 = k.rate(&p(&[1]));
        assert!((k.rate(&p(&[2])) / r1 - 2f64.powf(-1.5)).abs() < 1e-15);
        assert!((k.rate(&p(&[-3])) / r1 - 3f64.powf(-1.5)).abs() < 1e-15);
        assert_eq!(k.variance_class(), VarianceClass::Heavy(0.5));
        let k = JumpKernel::heavy_tail(1, 1.5, Angular::Constant(1.0), 4).unwrap();
        assert_eq!(k.variance_class(), VarianceClass::Heavy(1.5));
    }

    #[test]
    fn heavy_kernel_normalization_extended_precision() {
        // recompute the normalizing sum with compensated summation of the
        // raw weights and compare each normalized rate
        let k = JumpKernel::heavy_tail(2, 1.0, Angular::Constant(1.0), 10).unwrap();
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for z in ball_points(2, 10) {
            let n2 = z.norm_sq();
            if n2 == 0 || n2 > 100 {
                continue;
            }
            let y = (n2 as f64).powf(-1.5) - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        let total: f64 = k.entries().iter().map(|e| e.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((k.rate(&p(&[1, 0])) - 1.0 / s).abs() < 1e-15);
        assert!((k.diag_rate() + 1.0).abs() == 0.0);
    }

    #[test]
    fn heavy_kernel_errors() {
        assert!(matches!(
            JumpKernel::heavy_tail(1, 2.0, Angular::Constant(1.0), 3),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            JumpKernel::heavy_tail(1, 0.0, Angular::Constant(1.0), 3),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            JumpKernel::heavy_tail(2, 1.0, Angular::Constant(1.0), 0),
            Err(Error::DegenerateKernel(_))
        ));
    }

    #[test]
    fn analytic_tail_kernel_conserves_rate() {
        let k = JumpKernel::heavy_tail_1d(0.5, 64).unwrap();
        let stored: f64 = k.entries().iter().map(|e| e.1).sum();
        assert!((stored + k.analytic_tail_mass() - 1.0).abs() < 1e-14);
        assert!(k.analytic_tail_mass() > 0.0);
        assert!(k.validate().passed());
    }

    #[test]
    fn validation_cases() {
        assert!(JumpKernel::simple(2, 1.0).unwrap().validate().passed());
        let even = vec![(p(&[2]), 0.5), (p(&[-2]), 0.5)];
        let rep = validate_rates(1, &even, -1.0);
        assert!(!rep.irreducible && rep.symmetric && rep.zero_row_sum);
        let skew = vec![(p(&[1]), 0.6), (p(&[-1]), 0.4)];
        let rep = validate_rates(1, &skew, -1.0);
        assert!(!rep.symmetric);
        assert!(matches!(JumpKernel::from_rates(1, skew), Err(Error::InvalidKernel(_))));
        // {1, 2} steps generate Z even though neither alone... 2 and 3 do too
        let mixed = vec![(p(&[2]), 0.25), (p(&[-2]), 0.25), (p(&[3]), 0.25), (p(&[-3]), 0.25)];
        assert!(validate_rates(1, &mixed, -1.0).passed());
        // d = 2: (1,1) and (1,-1) span an index-2 sublattice
        let diag = vec![
            (p(&[1, 1]), 0.25),
            (p(&[-1, -1]), 0.25),
            (p(&[1, -1]), 0.25),
            (p(&[-1, 1]), 0.25),
        ];
        assert!(!validate_rates(2, &diag, -1.0).irreducible);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let kernels = [
            JumpKernel::simple(3, 0.7).unwrap(),
            JumpKernel::heavy_tail(2, 1.3, Angular::Constant(1.0), 4).unwrap(),
            JumpKernel::heavy_tail_1d(0.5, 16).unwrap(),
        ];
        for k in kernels {
            let back = JumpKernel::from_text(&k.to_text()).unwrap();
            assert_eq!(back, k);
        }
    }

    #[test]
    fn text_parse_errors() {
        assert!(matches!(JumpKernel::from_text("nope"), Err(Error::Parse { .. })));
        let t = "brw-kernel v1\ndimension 1\ndiagonal -1\nrate 1 0.6\nrate -1 0.4\n";
        assert!(matches!(JumpKernel::from_text(t), Err(Error::InvalidKernel(_))));
    }
}
