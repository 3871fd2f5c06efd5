//! Isomorphism-invariant digests of flattened netlists.
//!
//! The netlist is viewed as a bipartite graph of devices and nets. Vertices
//! are colored by device doping or by the sorted pin labels of a net, edges by
//! the set of terminals joining a device to a net. Color refinement followed
//! by individualization yields a canonical vertex order; the digest is the
//! SHA-256 of the certificate written in that order.

use std::fmt;

use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::{DeviceKind, Doping, FlatNetlist};

#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalDigest(pub [u8; 32]);

impl CanonicalDigest {
    pub fn hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// 16 hex characters, used for file names.
    pub fn short(&self) -> String {
        self.hex()[..16].to_string()
    }
}

impl fmt::Debug for CanonicalDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CanonicalDigest({})", self.short())
    }
}

impl fmt::Display for CanonicalDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hex())
    }
}

impl Serialize for CanonicalDigest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.hex())
    }
}

pub fn canonical_digest(flat: &FlatNetlist) -> CanonicalDigest {
    digest_graph(&Graph::build(flat, false))
}

/// Digest of the netlist with every doping (and rail label) swapped.
pub fn mirrored_digest(flat: &FlatNetlist) -> CanonicalDigest {
    digest_graph(&Graph::build(flat, true))
}

fn digest_graph(g: &Graph) -> CanonicalDigest {
    let cert = g.canonical_certificate();
    let mut h = Sha256::new();
    h.update(&cert);
    CanonicalDigest(h.finalize().into())
}

/// Stable vertex coloring after refinement, exposed for structural analyses.
pub fn refined_colors(flat: &FlatNetlist) -> Vec<u32> {
    let g = Graph::build(flat, false);
    let mut c = g.initial_colors();
    g.refine(&mut c);
    c
}

pub(crate) struct Graph {
    labels: Vec<String>,
    adj: Vec<Vec<(u8, u32)>>,
}

fn swap_label(l: &str) -> &str {
    match l {
        "vdd" => "vss",
        "vss" => "vdd",
        "rail_n" => "rail_p",
        "rail_p" => "rail_n",
        other => other,
    }
}

impl Graph {
    pub(crate) fn build(flat: &FlatNetlist, mirrored: bool) -> Graph {
        let nd = flat.devices.len();
        let mut labels = Vec::with_capacity(nd + flat.net_count);
        for d in &flat.devices {
            let dop = d.doping.map(|p| if mirrored { p.complement() } else { p });
            labels.push(match (d.kind, dop) {
                (DeviceKind::Capacitor, _) => "c".to_string(),
                (_, Some(Doping::N)) => "t:n".to_string(),
                (_, Some(Doping::P)) => "t:p".to_string(),
                (_, None) => "t".to_string(),
            });
        }
        for pins in flat.net_labels() {
            let mut names: Vec<&str> = pins.iter().map(|p| if mirrored { swap_label(p) } else { p }).collect();
            names.sort_unstable();
            labels.push(format!("net:{}", names.join(",")));
        }
        let mut adj = vec![Vec::new(); nd + flat.net_count];
        for (i, d) in flat.devices.iter().enumerate() {
            let used = if d.is_transistor() { 3 } else { 2 };
            let mut masks: Vec<(u32, u8)> = Vec::with_capacity(3);
            for k in 0..used {
                let n = flat.net(i, k);
                match masks.iter_mut().find(|(m, _)| *m == n) {
                    Some((_, bits)) => *bits |= 1 << k,
                    None => masks.push((n, 1 << k)),
                }
            }
            for (n, bits) in masks {
                let nv = (nd as u32) + n;
                adj[i].push((bits, nv));
                adj[nv as usize].push((bits, i as u32));
            }
        }
        Graph { labels, adj }
    }

    fn initial_colors(&self) -> Vec<u32> {
        let mut uniq: Vec<&String> = self.labels.iter().collect();
        uniq.sort_unstable();
        uniq.dedup();
        self.labels.iter().map(|l| uniq.binary_search(&l).unwrap() as u32).collect()
    }

    /// Equitable refinement; colors are ranks of sorted signatures, so they
    /// depend only on the isomorphism class of the colored graph.
    fn refine(&self, colors: &mut Vec<u32>) {
        let mut classes = count_classes(colors);
        loop {
            let sigs: Vec<(u32, Vec<(u8, u32)>)> = (0..colors.len())
                .map(|v| {
                    let mut nb: Vec<(u8, u32)> = self.adj[v].iter().map(|&(e, u)| (e, colors[u as usize])).collect();
                    nb.sort_unstable();
                    (colors[v], nb)
                })
                .collect();
            let mut order: Vec<usize> = (0..sigs.len()).collect();
            order.sort_by(|&a, &b| sigs[a].cmp(&sigs[b]));
            let mut next = vec![0u32; colors.len()];
            let mut rank = 0u32;
            for w in 0..order.len() {
                if w > 0 && sigs[order[w]] != sigs[order[w - 1]] {
                    rank += 1;
                }
                next[order[w]] = rank;
            }
            let n = rank as usize + 1;
            *colors = next;
            if n == classes {
                return;
            }
            classes = n;
        }
    }

    fn canonical_certificate(&self) -> Vec<u8> {
        let mut colors = self.initial_colors();
        self.refine(&mut colors);
        let mut best: Option<Vec<u8>> = None;
        self.search(colors, &mut best);
        best.unwrap_or_default()
    }

    fn search(&self, colors: Vec<u32>, best: &mut Option<Vec<u8>>) {
        let n = colors.len();
        let mut sizes = vec![0usize; n];
        for &c in &colors {
            sizes[c as usize] += 1;
        }
        let target = (0..n).find(|&c| sizes[c] > 1);
        let Some(target) = target else {
            let cert = self.certificate(&colors);
            if best.as_ref().is_none_or(|b| cert < *b) {
                *best = Some(cert);
            }
            return;
        };
        let members: Vec<usize> = (0..n).filter(|&v| colors[v] as usize == target).collect();
        for v in members {
            let mut c: Vec<u32> = colors.iter().enumerate().map(|(x, &k)| 2 * k + u32::from(x != v)).collect();
            compact(&mut c);
            self.refine(&mut c);
            self.search(c, best);
        }
    }

    fn certificate(&self, colors: &[u32]) -> Vec<u8> {
        let n = colors.len();
        let mut order = vec![0usize; n];
        for v in 0..n {
            order[colors[v] as usize] = v;
        }
        let mut out = Vec::with_capacity(n * 16);
        for &v in &order {
            out.extend_from_slice(self.labels[v].as_bytes());
            out.push(0);
        }
        for &v in &order {
            let mut nb: Vec<(u32, u8)> = self.adj[v].iter().map(|&(e, u)| (colors[u as usize], e)).collect();
            nb.sort_unstable();
            out.extend_from_slice(&(nb.len() as u32).to_be_bytes());
            for (p, e) in nb {
                out.extend_from_slice(&p.to_be_bytes());
                out.push(e);
            }
        }
        out
    }
}

fn count_classes(colors: &[u32]) -> usize {
    let mut c = colors.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

fn compact(colors: &mut [u32]) {
    let mut uniq = colors.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    for c in colors.iter_mut() {
        *c = uniq.binary_search(c).unwrap() as u32;
    }
}
