//! Byte-level message encoding shared by the simulated ranks.
//!
//! Every rank stores the same coarse mesh (the same roots in the same
//! order), so elements of the global forest are named *structurally*: the
//! ordinal of their root plus the path of child slots leading down to
//! them.  A whole element set is encoded by walking each participating
//! tree once and emitting, per visited node, an 8-bit mask of the child
//! slots whose subtrees contain set members.  A zero mask marks a set
//! member and terminates the descent; a nonzero mask is followed by the
//! node's refinement type so that a receiver that has pruned this region
//! can rebuild the intermediate structure instead of merely following it.
//!
//! All integers are little-endian.

use crate::error::Error;
use crate::ncmesh::NCMesh;
use crate::Result;

/// Growable byte buffer with primitive writers.
#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Writer {
        Writer { buf: Vec::new() }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn take(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor over a received byte message.
#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Decode(format!(
                "message truncated: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Encodes `set` (live element ids, not necessarily leaves) into `w`.
///
/// The set must be an antichain of the forest: no member may be an
/// ancestor of another, since a zero mask both marks a member and stops
/// the descent.  Returns the members in canonical stream order (root
/// ordinal, then depth-first by child slot) so that per-element payloads
/// can be appended in a cross-rank reproducible order.
pub fn encode_element_set(mesh: &NCMesh, set: &[u32], w: &mut Writer) -> Result<Vec<u32>> {
    use std::collections::HashSet;
    let members: HashSet<u32> = set.iter().copied().collect();

    // Mark every node whose subtree contains a member.
    let mut touched: HashSet<u32> = HashSet::new();
    for &m in set {
        if mesh.element(m).is_none() {
            return Err(Error::BadElement(m));
        }
        let mut id = m;
        loop {
            if !touched.insert(id) {
                break;
            }
            let parent = mesh.element(id).unwrap().parent;
            if parent == crate::ncmesh::NIL {
                break;
            }
            id = parent;
        }
    }

    let roots: Vec<(u32, u32)> = mesh
        .roots()
        .iter()
        .enumerate()
        .filter(|&(_, r)| touched.contains(r))
        .map(|(ord, &r)| (ord as u32, r))
        .collect();
    w.u32(roots.len() as u32);

    let mut order = Vec::with_capacity(set.len());
    for &(ordinal, root) in &roots {
        w.u32(ordinal);
        encode_node(mesh, root, &members, &touched, w, &mut order)?;
    }
    Ok(order)
}

fn encode_node(
    mesh: &NCMesh,
    id: u32,
    members: &std::collections::HashSet<u32>,
    touched: &std::collections::HashSet<u32>,
    w: &mut Writer,
    order: &mut Vec<u32>,
) -> Result<()> {
    let el = mesh.element(id).expect("dead element in touched set");
    if members.contains(&id) {
        if !el.is_leaf() && el.child_ids().iter().any(|c| touched.contains(c)) {
            return Err(Error::InconsistentMesh(format!(
                "element set is not an antichain: {id} and a descendant are both members"
            )));
        }
        w.u8(0);
        order.push(id);
        return Ok(());
    }
    if el.is_leaf() {
        return Err(Error::InconsistentMesh(format!(
            "leaf {id} marked as containing set members but is not one"
        )));
    }
    let kids = el.child_ids();
    let mut mask = 0u8;
    for (slot, &c) in kids.iter().enumerate() {
        if touched.contains(&c) {
            mask |= 1 << slot;
        }
    }
    debug_assert!(mask != 0);
    w.u8(mask);
    w.u8(el.ref_type().expect("refined element has a ref_type"));
    let kids = kids.to_vec();
    for (slot, c) in kids.into_iter().enumerate() {
        if mask & (1 << slot) != 0 {
            encode_node(mesh, c, members, touched, w, order)?;
        }
    }
    Ok(())
}

/// Decodes an element set against `mesh`, returning the members in
/// stream order (matching [`encode_element_set`]'s return value on the
/// sending side).
///
/// When `realize` is false the mesh must already contain every interior
/// node of the stream (the normal case for messages about shared ghost
/// structure).  When `realize` is true, pruned regions are rebuilt by
/// refining local leaves with the refinement types carried by the
/// stream — this is how migrated subtrees are reconstructed.
pub fn decode_element_set(mesh: &mut NCMesh, r: &mut Reader, realize: bool) -> Result<Vec<u32>> {
    let nroots = r.u32()? as usize;
    let mut out = Vec::new();
    for _ in 0..nroots {
        let ordinal = r.u32()? as usize;
        let root = *mesh
            .roots()
            .get(ordinal)
            .ok_or_else(|| Error::Decode(format!("root ordinal {ordinal} out of range")))?;
        decode_node(mesh, root, r, realize, &mut out)?;
    }
    Ok(out)
}

fn decode_node(
    mesh: &mut NCMesh,
    id: u32,
    r: &mut Reader,
    realize: bool,
    out: &mut Vec<u32>,
) -> Result<()> {
    let mask = r.u8()?;
    if mask == 0 {
        out.push(id);
        return Ok(());
    }
    let ref_type = r.u8()?;
    let el = mesh.element(id).ok_or(Error::BadElement(id))?;
    let kids: Vec<u32> = if el.is_leaf() {
        if !realize {
            return Err(Error::Decode(format!(
                "stream descends into element {id} which is an unrealized leaf here"
            )));
        }
        mesh.refine(id, ref_type)?
    } else {
        if el.ref_type() != Some(ref_type) {
            return Err(Error::Decode(format!(
                "element {id} is refined with type {:?} but the stream says {ref_type}",
                el.ref_type()
            )));
        }
        el.child_ids().to_vec()
    };
    for (slot, c) in kids.iter().enumerate() {
        if mask & (1 << slot) != 0 {
            decode_node(mesh, *c, r, realize, out)?;
        }
    }
    if mask >> kids.len() != 0 {
        return Err(Error::Decode(format!(
            "mask {mask:#010b} addresses child slots beyond the {} children of element {id}",
            kids.len()
        )));
    }
    Ok(())
}
