//! Hierarchical netlists: block instances, pin references, flattening and
//! canonical identity.

mod canon;
mod spice;

use std::fmt;
use std::sync::{Arc, OnceLock};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::library::BlockType;

pub use canon::{canonical_digest, mirrored_digest, refined_colors, CanonicalDigest};
pub use spice::{device_names, export_spice, format_si, node_names, DeviceSize, SizingVector, SpiceError};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Doping {
    N,
    P,
}

impl Doping {
    pub const BOTH: [Doping; 2] = [Doping::N, Doping::P];

    pub fn complement(self) -> Doping {
        match self {
            Doping::N => Doping::P,
            Doping::P => Doping::N,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Doping::N => 'n',
            Doping::P => 'p',
        }
    }
}

impl fmt::Display for Doping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviceKind {
    NormalTransistor,
    DiodeTransistor,
    Capacitor,
}

impl DeviceKind {
    pub fn is_transistor(self) -> bool {
        !matches!(self, DeviceKind::Capacitor)
    }

    /// Terminal names in flattening order.
    pub fn terminals(self) -> &'static [&'static str] {
        match self {
            DeviceKind::Capacitor => &["plus", "minus"],
            _ => &["gate", "drain", "source"],
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NetRole {
    Signal,
    SupplyRailPositive,
    SupplyRailNegative,
    BiasInput,
    Internal,
}

/// A pin of some descendant, addressed by child indices from the owning
/// instance. An empty path names one of the instance's own pins.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PinRef {
    pub path: Vec<u16>,
    pub pin: Arc<str>,
}

impl PinRef {
    pub fn new(path: Vec<u16>, pin: &str) -> PinRef {
        PinRef { path, pin: Arc::from(pin) }
    }

    pub fn child(index: usize, pin: &str) -> PinRef {
        PinRef::new(vec![index as u16], pin)
    }

    pub fn own(pin: &str) -> PinRef {
        PinRef::new(Vec::new(), pin)
    }

    fn prefixed(&self, head: u16) -> PinRef {
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.push(head);
        path.extend_from_slice(&self.path);
        PinRef { path, pin: self.pin.clone() }
    }
}

impl fmt::Display for PinRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.path {
            write!(f, "{p}.")?;
        }
        write!(f, "{}", self.pin)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetlistError {
    #[error("unknown pin `{pin}` on instance `{owner}`")]
    UnknownPin { owner: String, pin: String },
    #[error("path {path:?} leaves the instance tree below `{owner}`")]
    BadPath { owner: String, path: Vec<u16> },
    #[error("pin `{pin}` of `{owner}` does not resolve to a device terminal")]
    Dangling { owner: String, pin: String },
}

#[derive(Clone, Debug)]
pub struct BlockInstance {
    pub name: String,
    pub block_type: BlockType,
    pub doping: Option<Doping>,
    pub children: Vec<Arc<BlockInstance>>,
    pub device: Option<(DeviceKind, Option<Doping>)>,
    pub connections: Vec<(PinRef, PinRef)>,
    pub pin_map: IndexMap<String, PinRef>,
    cache: Cache,
}

#[derive(Clone, Debug, Default)]
struct Cache {
    devices: OnceLock<usize>,
    transistors: OnceLock<usize>,
    flat: OnceLock<Arc<FlatNetlist>>,
    digest: OnceLock<CanonicalDigest>,
}

impl BlockInstance {
    pub fn leaf(name: &str, kind: DeviceKind, doping: Option<Doping>) -> BlockInstance {
        let block_type = match kind {
            DeviceKind::NormalTransistor => BlockType::Nt,
            DeviceKind::DiodeTransistor => BlockType::Dt,
            DeviceKind::Capacitor => BlockType::Cap,
        };
        BlockInstance {
            name: name.to_string(),
            block_type,
            doping,
            children: Vec::new(),
            device: Some((kind, doping)),
            connections: Vec::new(),
            pin_map: IndexMap::new(),
            cache: Cache::default(),
        }
    }

    pub fn composite(
        name: String,
        block_type: BlockType,
        doping: Option<Doping>,
        children: Vec<Arc<BlockInstance>>,
        connections: Vec<(PinRef, PinRef)>,
        pin_map: IndexMap<String, PinRef>,
    ) -> BlockInstance {
        BlockInstance {
            name,
            block_type,
            doping,
            children,
            device: None,
            connections,
            pin_map,
            cache: Cache::default(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.device.is_some()
    }

    pub fn device_count(&self) -> usize {
        *self.cache.devices.get_or_init(|| {
            if self.is_leaf() {
                1
            } else {
                self.children.iter().map(|c| c.device_count()).sum()
            }
        })
    }

    /// Number of transistor leaves (n_T).
    pub fn n_t(&self) -> usize {
        *self.cache.transistors.get_or_init(|| match self.device {
            Some((kind, _)) => usize::from(kind.is_transistor()),
            None => self.children.iter().map(|c| c.n_t()).sum(),
        })
    }

    pub fn has_pin(&self, pin: &str) -> bool {
        match self.device {
            Some((kind, _)) => kind.terminals().contains(&pin),
            None => self.pin_map.contains_key(pin),
        }
    }

    pub fn pin_names(&self) -> Vec<&str> {
        match self.device {
            Some((kind, _)) => kind.terminals().to_vec(),
            None => self.pin_map.keys().map(|s| s.as_str()).collect(),
        }
    }

    /// The descendant at `path`.
    pub fn at(&self, path: &[u16]) -> Option<&BlockInstance> {
        let mut node = self;
        for &i in path {
            node = node.children.get(i as usize)?;
        }
        Some(node)
    }

    /// Returns a copy with the nets of `a` and `b` merged.
    pub fn connect(&self, a: PinRef, b: PinRef) -> Result<BlockInstance, NetlistError> {
        self.resolve(&a)?;
        self.resolve(&b)?;
        let mut out = self.clone();
        out.cache = Cache::default();
        if a != b {
            out.connections.push((a, b));
        }
        Ok(out)
    }

    /// Maps a pin reference to a global terminal index (3 per device).
    pub fn resolve(&self, r: &PinRef) -> Result<usize, NetlistError> {
        let mut node = self;
        let mut offset = 0usize;
        for &i in &r.path {
            let i = i as usize;
            if i >= node.children.len() {
                return Err(NetlistError::BadPath { owner: node.name.clone(), path: r.path.clone() });
            }
            offset += node.children[..i].iter().map(|c| c.device_count()).sum::<usize>();
            node = &node.children[i];
        }
        node.resolve_own(&r.pin, offset, 0)
    }

    fn resolve_own(&self, pin: &str, offset: usize, depth: usize) -> Result<usize, NetlistError> {
        if let Some((kind, _)) = self.device {
            let t = kind
                .terminals()
                .iter()
                .position(|p| *p == pin)
                .ok_or_else(|| NetlistError::UnknownPin { owner: self.name.clone(), pin: pin.to_string() })?;
            return Ok(offset * 3 + t);
        }
        let target = self
            .pin_map
            .get(pin)
            .ok_or_else(|| NetlistError::UnknownPin { owner: self.name.clone(), pin: pin.to_string() })?;
        if target.path.is_empty() || depth > 64 {
            return Err(NetlistError::Dangling { owner: self.name.clone(), pin: pin.to_string() });
        }
        let mut node = self;
        let mut off = offset;
        for &i in &target.path {
            let i = i as usize;
            if i >= node.children.len() {
                return Err(NetlistError::BadPath { owner: node.name.clone(), path: target.path.clone() });
            }
            off += node.children[..i].iter().map(|c| c.device_count()).sum::<usize>();
            node = &node.children[i];
        }
        node.resolve_own(&target.pin, off, depth + 1)
    }

    pub fn flatten(&self) -> Result<Arc<FlatNetlist>, NetlistError> {
        if let Some(f) = self.cache.flat.get() {
            return Ok(f.clone());
        }
        let flat = Arc::new(flatten_uncached(self)?);
        Ok(self.cache.flat.get_or_init(|| flat).clone())
    }

    /// Flattened view; panics only if the instance was built from invalid
    /// pin references, which construction code rules out.
    pub fn flat(&self) -> Arc<FlatNetlist> {
        self.flatten().expect("instance flattens")
    }

    pub fn digest(&self) -> CanonicalDigest {
        *self.cache.digest.get_or_init(|| canonical_digest(&self.flat()))
    }

    /// One-line decomposition tree, e.g. `a_s[tc_s[dp], b_s[cb_simple], ...]`.
    pub fn decomposition(&self) -> String {
        if self.is_leaf() {
            return self.name.clone();
        }
        let inner: Vec<String> = self.children.iter().map(|c| c.decomposition()).collect();
        format!("{}({})", self.name, inner.join(","))
    }

    /// Rebuilds the instance with its children in a different order and all
    /// references rewritten. Used to check permutation invariance.
    pub fn permute_children(&self, order: &[usize]) -> BlockInstance {
        assert_eq!(order.len(), self.children.len());
        let mut inverse = vec![0u16; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new as u16;
        }
        let remap = |r: &PinRef| {
            let mut r = r.clone();
            if let Some(first) = r.path.first_mut() {
                *first = inverse[*first as usize];
            }
            r
        };
        let mut out = self.clone();
        out.cache = Cache::default();
        out.children = order.iter().map(|&i| self.children[i].clone()).collect();
        out.connections = self.connections.iter().map(|(a, b)| (remap(a), remap(b))).collect();
        out.pin_map = self.pin_map.iter().map(|(k, v)| (k.clone(), remap(v))).collect();
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FlatDevice {
    pub kind: DeviceKind,
    pub doping: Option<Doping>,
    /// Child-index path from the root instance.
    pub path: Vec<u16>,
    /// Block types from the root down to (excluding) the leaf.
    pub ancestry: Vec<BlockType>,
}

impl FlatDevice {
    pub fn is_transistor(&self) -> bool {
        self.kind.is_transistor()
    }

    pub fn within(&self, t: BlockType) -> bool {
        self.ancestry.contains(&t)
    }
}

/// Device-level netlist: devices plus the net partition of their terminals.
#[derive(Clone, Debug, Serialize)]
pub struct FlatNetlist {
    pub devices: Vec<FlatDevice>,
    /// Net id for terminal `3 * device + k`; capacitors use only k = 0, 1.
    pub terminal_net: Vec<u32>,
    pub net_count: usize,
    /// Top-level pins and the net they sit on.
    pub pins: IndexMap<String, u32>,
}

pub const GATE: usize = 0;
pub const DRAIN: usize = 1;
pub const SOURCE: usize = 2;

impl FlatNetlist {
    pub fn net(&self, device: usize, terminal: usize) -> u32 {
        self.terminal_net[device * 3 + terminal]
    }

    pub fn pin_net(&self, pin: &str) -> Option<u32> {
        self.pins.get(pin).copied()
    }

    pub fn transistors(&self) -> impl Iterator<Item = (usize, &FlatDevice)> {
        self.devices.iter().enumerate().filter(|(_, d)| d.is_transistor())
    }

    pub fn transistor_count(&self) -> usize {
        self.transistors().count()
    }

    /// True if some transistor drain sits on `net`.
    pub fn has_drain(&self, net: u32) -> bool {
        self.transistors().any(|(i, _)| self.net(i, DRAIN) == net)
    }

    pub fn same_net(&self, a: (usize, usize), b: (usize, usize)) -> bool {
        self.net(a.0, a.1) == self.net(b.0, b.1)
    }

    /// Role of a net derived from the pin names it carries.
    pub fn net_role(&self, net: u32) -> NetRole {
        let mut role = NetRole::Internal;
        for (name, &n) in &self.pins {
            if n != net {
                continue;
            }
            role = match name.as_str() {
                "vdd" => return NetRole::SupplyRailPositive,
                "vss" => return NetRole::SupplyRailNegative,
                "p_bias" => return NetRole::BiasInput,
                _ => NetRole::Signal,
            };
        }
        role
    }

    /// Pin labels per net, sorted, used for coloring.
    pub fn net_labels(&self) -> Vec<Vec<&str>> {
        let mut labels = vec![Vec::new(); self.net_count];
        for (name, &n) in &self.pins {
            labels[n as usize].push(name.as_str());
        }
        for l in &mut labels {
            l.sort_unstable();
        }
        labels
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

fn flatten_uncached(root: &BlockInstance) -> Result<FlatNetlist, NetlistError> {
    let n = root.device_count();
    let mut devices = Vec::with_capacity(n);
    let mut uf = UnionFind((0..3 * n).collect());
    let mut stack_types = Vec::new();
    collect(root, root, &mut Vec::new(), &mut stack_types, &mut devices, &mut uf)?;
    for (i, d) in devices.iter().enumerate() {
        if d.kind == DeviceKind::DiodeTransistor {
            uf.union(3 * i + GATE, 3 * i + DRAIN);
        }
    }
    let mut ids = vec![u32::MAX; 3 * n];
    let mut terminal_net = vec![u32::MAX; 3 * n];
    let mut next = 0u32;
    for (i, d) in devices.iter().enumerate() {
        let used = if d.is_transistor() { 3 } else { 2 };
        for k in 0..used {
            let r = uf.find(3 * i + k);
            if ids[r] == u32::MAX {
                ids[r] = next;
                next += 1;
            }
            terminal_net[3 * i + k] = ids[r];
        }
    }
    let mut pins = IndexMap::new();
    for name in root.pin_names() {
        let t = root.resolve(&PinRef::own(name))?;
        let r = uf.find(t);
        if ids[r] == u32::MAX {
            return Err(NetlistError::Dangling { owner: root.name.clone(), pin: name.to_string() });
        }
        pins.insert(name.to_string(), ids[r]);
    }
    Ok(FlatNetlist { devices, terminal_net, net_count: next as usize, pins })
}

fn collect(
    root: &BlockInstance,
    node: &BlockInstance,
    path: &mut Vec<u16>,
    types: &mut Vec<BlockType>,
    devices: &mut Vec<FlatDevice>,
    uf: &mut UnionFind,
) -> Result<(), NetlistError> {
    if let Some((kind, doping)) = node.device {
        devices.push(FlatDevice { kind, doping, path: path.clone(), ancestry: types.clone() });
        return Ok(());
    }
    for (a, b) in &node.connections {
        let pa = prefix(path, a);
        let pb = prefix(path, b);
        let ta = root.resolve(&pa)?;
        let tb = root.resolve(&pb)?;
        uf.union(ta, tb);
    }
    types.push(node.block_type);
    for (i, c) in node.children.iter().enumerate() {
        path.push(i as u16);
        collect(root, c, path, types, devices, uf)?;
        path.pop();
    }
    types.pop();
    Ok(())
}

fn prefix(path: &[u16], r: &PinRef) -> PinRef {
    let mut out = r.clone();
    for &h in path.iter().rev() {
        out = out.prefixed(h);
    }
    out
}
