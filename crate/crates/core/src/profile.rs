//! Nested region timers, time breakdowns and climate throughput metrics.
//!
//! Each worker owns a [`Profiler`]; trees are merged by region path when
//! reporting. Times are kept in integer nanoseconds so merged totals do not
//! depend on merge order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("exit from {got:?} while {expected:?} is innermost")]
    MismatchedExit { expected: Option<String>, got: String },
    #[error("regions still open: {0:?}")]
    OpenRegions(Vec<String>),
    #[error("no time recorded")]
    Empty,
    #[error("{0} must be positive and finite, got {1}")]
    NonPositive(&'static str, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    MpeCompute,
    CpeCompute,
    Comm,
    Io,
    Idle,
}

impl Category {
    pub const ALL: [Category; 5] =
        [Category::MpeCompute, Category::CpeCompute, Category::Comm, Category::Io, Category::Idle];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::MpeCompute => "MPE_COMPUTE",
            Category::CpeCompute => "CPE_COMPUTE",
            Category::Comm => "COMM",
            Category::Io => "IO",
            Category::Idle => "IDLE",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    name: String,
    category: Category,
    inclusive_ns: u64,
    calls: u64,
    children: Vec<usize>,
}

/// Timer tree. Node 0 is an unnamed root that is never timed itself.
#[derive(Debug, Clone)]
pub struct Profiler {
    nodes: Vec<Node>,
    open: Vec<(usize, Instant)>,
}

impl Default for Profiler {
    fn default() -> Self {
        Self::new()
    }
}

impl Profiler {
    pub fn new() -> Self {
        let root = Node {
            name: String::new(),
            category: Category::MpeCompute,
            inclusive_ns: 0,
            calls: 0,
            children: Vec::new(),
        };
        Profiler { nodes: vec![root], open: Vec::new() }
    }

    fn current(&self) -> usize {
        self.open.last().map_or(0, |&(n, _)| n)
    }

    fn child(&mut self, parent: usize, name: &str, category: Category) -> usize {
        let found = self.nodes[parent]
            .children
            .iter()
            .copied()
            .find(|&c| self.nodes[c].name == name && self.nodes[c].category == category);
        found.unwrap_or_else(|| {
            let id = self.nodes.len();
            self.nodes.push(Node { name: name.to_string(), category, inclusive_ns: 0, calls: 0, children: Vec::new() });
            self.nodes[parent].children.push(id);
            id
        })
    }

    fn children_ns(&self, n: usize) -> u64 {
        self.nodes[n].children.iter().map(|&c| self.nodes[c].inclusive_ns).sum()
    }

    pub fn enter(&mut self, name: &str, category: Category) {
        let id = self.child(self.current(), name, category);
        self.open.push((id, Instant::now()));
    }

    pub fn exit(&mut self, name: &str) -> Result<(), ProfileError> {
        let now = Instant::now();
        match self.open.last() {
            Some(&(id, _)) if self.nodes[id].name == name => {}
            other => {
                return Err(ProfileError::MismatchedExit {
                    expected: other.map(|&(id, _)| self.nodes[id].name.clone()),
                    got: name.to_string(),
                })
            }
        }
        let (id, start) = self.open.pop().expect("checked above");
        let node = &mut self.nodes[id];
        node.inclusive_ns += (now - start).as_nanos() as u64;
        node.calls += 1;
        // Externally attributed children may exceed the measured span.
        let floor = self.children_ns(id);
        let node = &mut self.nodes[id];
        node.inclusive_ns = node.inclusive_ns.max(floor);
        Ok(())
    }

    /// Runs `f` inside a region.
    pub fn time<R>(&mut self, name: &str, category: Category, f: impl FnOnce() -> R) -> R {
        self.enter(name, category);
        let out = f();
        self.exit(name).expect("region opened above");
        out
    }

    /// Books an already measured span as a closed child of the innermost
    /// open region, for time measured elsewhere such as barrier waits.
    pub fn add_elapsed(&mut self, name: &str, category: Category, elapsed: Duration) {
        let id = self.child(self.current(), name, category);
        let node = &mut self.nodes[id];
        node.inclusive_ns += elapsed.as_nanos() as u64;
        node.calls += 1;
    }

    pub fn open_regions(&self) -> Vec<String> {
        self.open.iter().map(|&(id, _)| self.nodes[id].name.clone()).collect()
    }

    fn ensure_closed(&self) -> Result<(), ProfileError> {
        if self.open.is_empty() {
            Ok(())
        } else {
            Err(ProfileError::OpenRegions(self.open_regions()))
        }
    }

    /// Adds `other`'s closed regions into this tree, matching by path.
    pub fn merge(&mut self, other: &Profiler) -> Result<(), ProfileError> {
        self.ensure_closed()?;
        other.ensure_closed()?;
        self.merge_node(0, other, 0);
        Ok(())
    }

    fn merge_node(&mut self, into: usize, other: &Profiler, from: usize) {
        for &c in &other.nodes[from].children {
            let src = &other.nodes[c];
            let dst = self.child(into, &src.name, src.category);
            self.nodes[dst].inclusive_ns += src.inclusive_ns;
            self.nodes[dst].calls += src.calls;
            self.merge_node(dst, other, c);
        }
    }

    /// Closed regions in depth-first order, siblings sorted by name then
    /// category.
    pub fn regions(&self) -> Result<Vec<RegionSummary>, ProfileError> {
        self.ensure_closed()?;
        let mut out = Vec::new();
        self.walk(0, "", None, &mut out);
        Ok(out)
    }

    fn walk(&self, n: usize, prefix: &str, component: Option<&str>, out: &mut Vec<RegionSummary>) {
        let mut kids = self.nodes[n].children.clone();
        kids.sort_by(|&a, &b| {
            let (x, y) = (&self.nodes[a], &self.nodes[b]);
            (&x.name, x.category).cmp(&(&y.name, y.category))
        });
        for c in kids {
            let node = &self.nodes[c];
            let path = if prefix.is_empty() { node.name.clone() } else { format!("{prefix}/{}", node.name) };
            let component = component.unwrap_or(&node.name);
            let exclusive_ns = node.inclusive_ns.saturating_sub(self.children_ns(c));
            out.push(RegionSummary {
                path: path.clone(),
                component: component.to_string(),
                category: node.category,
                calls: node.calls,
                inclusive_seconds: node.inclusive_ns as f64 * 1e-9,
                exclusive_seconds: exclusive_ns as f64 * 1e-9,
                exclusive_ns,
            });
            self.walk(c, &path, Some(component), out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub path: String,
    /// Name of the top-level region this one sits under.
    pub component: String,
    pub category: Category,
    pub calls: u64,
    pub inclusive_seconds: f64,
    pub exclusive_seconds: f64,
    #[serde(skip)]
    exclusive_ns: u64,
}

/// Shares of total exclusive time, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub total_seconds: f64,
    /// All five categories, zero shares included.
    pub by_category: BTreeMap<String, f64>,
    /// Top-level regions, except that IDLE time of any component is pooled
    /// under `"IDLE"`.
    pub by_component: BTreeMap<String, f64>,
}

pub fn breakdown_report(p: &Profiler) -> Result<Breakdown, ProfileError> {
    let regions = p.regions()?;
    let total_ns: u64 = regions.iter().map(|r| r.exclusive_ns).sum();
    if total_ns == 0 {
        return Err(ProfileError::Empty);
    }
    let pct = |ns: u64| 100.0 * ns as f64 / total_ns as f64;
    let mut cat_ns: BTreeMap<String, u64> = Category::ALL.iter().map(|c| (c.as_str().to_string(), 0)).collect();
    let mut comp_ns: BTreeMap<String, u64> = BTreeMap::new();
    for r in &regions {
        *cat_ns.get_mut(r.category.as_str()).expect("all categories seeded") += r.exclusive_ns;
        let key = if r.category == Category::Idle { "IDLE" } else { r.component.as_str() };
        *comp_ns.entry(key.to_string()).or_default() += r.exclusive_ns;
    }
    Ok(Breakdown {
        total_seconds: total_ns as f64 * 1e-9,
        by_category: cat_ns.into_iter().map(|(k, v)| (k, pct(v))).collect(),
        by_component: comp_ns.into_iter().map(|(k, v)| (k, pct(v))).collect(),
    })
}

/// Region structure, which is reproducible, separated from timings, which
/// are not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub structure: Vec<RegionShape>,
    pub timing: TimingSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionShape {
    pub path: String,
    pub category: Category,
    pub calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSection {
    pub regions: Vec<RegionTiming>,
    pub breakdown: Breakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTiming {
    pub path: String,
    pub inclusive_seconds: f64,
    pub exclusive_seconds: f64,
}

impl ProfileReport {
    pub fn build(p: &Profiler) -> Result<Self, ProfileError> {
        let regions = p.regions()?;
        let breakdown = breakdown_report(p)?;
        Ok(ProfileReport {
            structure: regions
                .iter()
                .map(|r| RegionShape { path: r.path.clone(), category: r.category, calls: r.calls })
                .collect(),
            timing: TimingSection {
                regions: regions
                    .iter()
                    .map(|r| RegionTiming {
                        path: r.path.clone(),
                        inclusive_seconds: r.inclusive_seconds,
                        exclusive_seconds: r.exclusive_seconds,
                    })
                    .collect(),
                breakdown,
            },
        })
    }

    /// `path,category,calls,inclusive_seconds,exclusive_seconds` per region.
    pub fn regions_csv(&self) -> String {
        let mut out = String::from("path,category,calls,inclusive_seconds,exclusive_seconds\n");
        for (s, t) in self.structure.iter().zip(&self.timing.regions) {
            let _ = writeln!(
                out,
                "{},{},{},{:.9},{:.9}",
                s.path,
                s.category.as_str(),
                s.calls,
                t.inclusive_seconds,
                t.exclusive_seconds
            );
        }
        out
    }

    /// `kind,name,percent` for every category and component share.
    pub fn breakdown_csv(&self) -> String {
        let mut out = String::from("kind,name,percent\n");
        let b = &self.timing.breakdown;
        for (k, v) in &b.by_category {
            let _ = writeln!(out, "category,{k},{v:.4}");
        }
        for (k, v) in &b.by_component {
            let _ = writeln!(out, "component,{k},{v:.4}");
        }
        out
    }
}

const SECONDS_PER_DAY: f64 = 86400.0;

fn positive(what: &'static str, v: f64) -> Result<f64, ProfileError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ProfileError::NonPositive(what, v))
    }
}

/// Simulated days per wall-clock day.
pub fn compute_sdpd(simulated_days: f64, wall_seconds: f64) -> Result<f64, ProfileError> {
    positive("wall_seconds", wall_seconds)?;
    if !simulated_days.is_finite() || simulated_days < 0.0 {
        return Err(ProfileError::NonPositive("simulated_days", simulated_days));
    }
    Ok(simulated_days * SECONDS_PER_DAY / wall_seconds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputMetric {
    pub simulated_days: f64,
    pub wall_seconds: f64,
    pub sdpd: f64,
    pub sypd: f64,
}

impl ThroughputMetric {
    pub fn new(simulated_days: f64, wall_seconds: f64) -> Result<Self, ProfileError> {
        let sdpd = compute_sdpd(simulated_days, wall_seconds)?;
        Ok(ThroughputMetric { simulated_days, wall_seconds, sdpd, sypd: sdpd / 365.0 })
    }
}

/// Achieved speedup over ideal speedup between two `(processes, sdpd)`
/// points.
pub fn scaling_efficiency(base: (f64, f64), scaled: (f64, f64)) -> Result<f64, ProfileError> {
    let (pb, sb) = (positive("base processes", base.0)?, positive("base sdpd", base.1)?);
    let (ps, ss) = (positive("scaled processes", scaled.0)?, positive("scaled sdpd", scaled.1)?);
    Ok((ss / sb) / (ps / pb))
}
