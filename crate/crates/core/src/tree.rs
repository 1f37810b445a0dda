//! Arena representation of the full generation tree.
//!
//! Nodes are stored level by level. Children of a node are contiguous and
//! ordered by token, so `(node, token)` maps to `first_child[node] + token`.

use crate::error::{Error, Result};
use crate::mdp::{MdpSpec, Prefix, TokenId};

const NO_CHILD: u32 = u32::MAX;

#[derive(Clone, Debug)]
pub struct GenerationTree {
    vocab: usize,
    horizon: usize,
    num_prompts: usize,
    parent: Vec<u32>,
    token: Vec<u32>,
    depth: Vec<u16>,
    first_child: Vec<u32>,
    /// `level_start[d]..level_start[d + 1]` are the nodes at depth `d`.
    level_start: Vec<usize>,
}

impl GenerationTree {
    /// Builds the tree for every prompt. `cap` bounds the total node count.
    pub fn build(spec: &MdpSpec, cap: u128) -> Result<Self> {
        spec.validate()?;
        let per_prompt = spec
            .tree_node_count()
            .and_then(|n| n.checked_add(1))
            .and_then(|n| n.checked_mul(spec.num_prompts() as u128));
        match per_prompt {
            Some(n) if n <= cap && n <= (NO_CHILD as u128) => {}
            Some(n) => return Err(Error::TooLarge { required: n, cap }),
            None => return Err(Error::TooLarge { required: u128::MAX, cap }),
        }

        let vocab = spec.vocab_size;
        let mut parent = Vec::new();
        let mut token = Vec::new();
        let mut depth = Vec::new();
        let mut first_child = Vec::new();
        let mut level_start = vec![0usize];

        for _ in 0..spec.num_prompts() {
            parent.push(NO_CHILD);
            token.push(NO_CHILD);
            depth.push(0u16);
            first_child.push(NO_CHILD);
        }
        level_start.push(parent.len());

        // reusable path buffer for completion checks
        let mut path: Vec<TokenId> = Vec::with_capacity(spec.horizon);
        for d in 0..spec.horizon {
            let (lo, hi) = (level_start[d], level_start[d + 1]);
            for node in lo..hi {
                if d > 0 {
                    path.clear();
                    let mut cur = node;
                    while depth[cur] > 0 {
                        path.push(TokenId(token[cur]));
                        cur = parent[cur] as usize;
                    }
                    path.reverse();
                    if spec.is_complete(&path) {
                        continue;
                    }
                }
                first_child[node] = parent.len() as u32;
                for a in 0..vocab {
                    parent.push(node as u32);
                    token.push(a as u32);
                    depth.push((d + 1) as u16);
                    first_child.push(NO_CHILD);
                }
            }
            level_start.push(parent.len());
        }

        Ok(Self {
            vocab,
            horizon: spec.horizon,
            num_prompts: spec.num_prompts(),
            parent,
            token,
            depth,
            first_child,
            level_start,
        })
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    /// Nodes at depth `< horizon` (those that may own a policy row).
    pub fn interior_len(&self) -> usize {
        self.level_start[self.horizon]
    }

    pub fn level(&self, d: usize) -> std::ops::Range<usize> {
        self.level_start[d]..self.level_start[d + 1]
    }

    pub fn roots(&self) -> std::ops::Range<usize> {
        self.level(0)
    }

    pub fn depth(&self, node: usize) -> usize {
        self.depth[node] as usize
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        match self.parent[node] {
            NO_CHILD => None,
            p => Some(p as usize),
        }
    }

    pub fn token(&self, node: usize) -> Option<TokenId> {
        match self.token[node] {
            NO_CHILD => None,
            t => Some(TokenId(t)),
        }
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.first_child[node] == NO_CHILD
    }

    /// Children in token order; empty for leaves.
    pub fn children(&self, node: usize) -> std::ops::Range<usize> {
        match self.first_child[node] {
            NO_CHILD => 0..0,
            c => c as usize..c as usize + self.vocab,
        }
    }

    pub fn child(&self, node: usize, a: TokenId) -> Option<usize> {
        match self.first_child[node] {
            NO_CHILD => None,
            c => Some(c as usize + a.index()),
        }
    }

    pub fn prompt_of(&self, mut node: usize) -> usize {
        while let Some(p) = self.parent(node) {
            node = p;
        }
        node
    }

    /// Reconstructs the prefix a node stands for.
    pub fn prefix(&self, node: usize) -> Prefix {
        let mut tokens = Vec::with_capacity(self.depth(node));
        let mut cur = node;
        while let Some(p) = self.parent(cur) {
            tokens.push(TokenId(self.token[cur]));
            cur = p;
        }
        tokens.reverse();
        Prefix::new(cur, tokens)
    }

    /// Node index of a prefix, if it is in the tree.
    pub fn find(&self, prefix: &Prefix) -> Option<usize> {
        if prefix.prompt_id >= self.num_prompts {
            return None;
        }
        let mut node = prefix.prompt_id;
        for &a in &prefix.tokens {
            if a.index() >= self.vocab {
                return None;
            }
            node = self.child(node, a)?;
        }
        Some(node)
    }

    /// Leaves (complete trajectories) in node order.
    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&n| self.is_leaf(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_horizon_shape() {
        let spec = MdpSpec::new(2, 4).unwrap();
        let tree = GenerationTree::build(&spec, 1000).unwrap();
        assert_eq!(tree.len(), 31);
        assert_eq!(tree.len() - tree.num_prompts(), 30);
        assert_eq!(tree.leaves().count(), 16);
        assert_eq!(tree.interior_len(), 15);
    }

    #[test]
    fn prefix_find_round_trip() {
        let spec = MdpSpec::new(3, 3).unwrap().with_prompt_count(2).unwrap();
        let tree = GenerationTree::build(&spec, 10_000).unwrap();
        for n in 0..tree.len() {
            let p = tree.prefix(n);
            assert_eq!(tree.find(&p), Some(n));
            assert_eq!(p.tokens.len(), tree.depth(n));
        }
    }

    #[test]
    fn unique_parent_edge() {
        let spec = MdpSpec::new(3, 3).unwrap();
        let tree = GenerationTree::build(&spec, 10_000).unwrap();
        for n in 1..tree.len() {
            let p = tree.parent(n).unwrap();
            let a = tree.token(n).unwrap();
            assert_eq!(tree.child(p, a), Some(n));
        }
    }

    #[test]
    fn terminal_token_prunes_subtrees() {
        let spec = MdpSpec::new(2, 3).unwrap().with_terminal(TokenId(1)).unwrap();
        let tree = GenerationTree::build(&spec, 1000).unwrap();
        // leaves: 1, 01, 001, 000
        assert_eq!(tree.leaves().count(), 4);
        assert_eq!(tree.len(), 7);
    }

    #[test]
    fn cap_enforced() {
        let spec = MdpSpec::new(4, 12).unwrap();
        assert!(matches!(GenerationTree::build(&spec, 2_000_000), Err(Error::TooLarge { .. })));
    }
}
