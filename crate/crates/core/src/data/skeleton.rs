use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joint_names: Vec<String>,
    /// Parent of each joint; the root has `-1`.
    pub parents: Vec<i64>,
    /// Left/right joint pairs swapped by a horizontal flip.
    pub flip_pairs: Vec<(usize, usize)>,
    pub root_index: usize,
}

impl Skeleton {
    pub fn new(
        joint_names: Vec<String>,
        parents: Vec<i64>,
        flip_pairs: Vec<(usize, usize)>,
        root_index: usize,
    ) -> Result<Self> {
        let s = Skeleton {
            joint_names,
            parents,
            flip_pairs,
            root_index,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(format!("invalid skeleton: {msg}")));
        let j = self.parents.len();
        if j == 0 || self.joint_names.len() != j {
            return bad(format!("{} names for {j} parents", self.joint_names.len()));
        }
        if self.root_index >= j {
            return bad(format!("root {} out of range", self.root_index));
        }
        for (i, &p) in self.parents.iter().enumerate() {
            let is_root = i == self.root_index;
            if is_root != (p < 0 || p as usize == i) {
                return bad(format!("joint {i} has parent {p}"));
            }
            if !is_root && p as usize >= j {
                return bad(format!("joint {i} has parent {p} out of range"));
            }
        }
        // Every joint must reach the root without revisiting a joint.
        for start in 0..j {
            let mut cur = start;
            for _ in 0..=j {
                if cur == self.root_index {
                    break;
                }
                cur = self.parents[cur] as usize;
            }
            if cur != self.root_index {
                return bad(format!("joint {start} is on a cycle"));
            }
        }
        let mut seen = vec![false; j];
        for &(l, r) in &self.flip_pairs {
            if l >= j || r >= j || l == r || seen[l] || seen[r] {
                return bad(format!("flip pair ({l}, {r}) is out of range or overlaps"));
            }
            seen[l] = true;
            seen[r] = true;
        }
        Ok(())
    }

    /// Joints ordered so that every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let mut order = vec![self.root_index];
        let mut i = 0;
        while i < order.len() {
            let p = order[i];
            for (c, &parent) in self.parents.iter().enumerate() {
                if c != self.root_index && parent as usize == p {
                    order.push(c);
                }
            }
            i += 1;
        }
        order
    }

    /// `perm[j]` is the joint whose data lands on joint `j` after a flip.
    pub fn flip_permutation(&self) -> Result<Vec<usize>> {
        if self.flip_pairs.is_empty() {
            return Err(Error::MissingFlipPairs);
        }
        let mut perm: Vec<usize> = (0..self.num_joints()).collect();
        for &(l, r) in &self.flip_pairs {
            perm.swap(l, r);
        }
        Ok(perm)
    }
}

/// 17-joint Human3.6M-style skeleton rooted at the pelvis.
pub fn default_h36m17_skeleton() -> Skeleton {
    let names = [
        "pelvis",
        "r_hip",
        "r_knee",
        "r_ankle",
        "l_hip",
        "l_knee",
        "l_ankle",
        "spine",
        "thorax",
        "neck",
        "head",
        "l_shoulder",
        "l_elbow",
        "l_wrist",
        "r_shoulder",
        "r_elbow",
        "r_wrist",
    ];
    Skeleton::new(
        names.iter().map(|s| s.to_string()).collect(),
        vec![-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15],
        vec![(1, 4), (2, 5), (3, 6), (11, 14), (12, 15), (13, 16)],
        0,
    )
    .expect("built-in skeleton is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h36m17_structure() {
        let s = default_h36m17_skeleton();
        assert_eq!(s.num_joints(), 17);
        assert_eq!(s.root_index, 0);
        assert_eq!(s.topological_order().len(), 17);
        let lateral: Vec<usize> = s.flip_pairs.iter().flat_map(|&(l, r)| [l, r]).collect();
        let mut sorted = lateral.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), lateral.len());
        assert_eq!(sorted, vec![1, 2, 3, 4, 5, 6, 11, 12, 13, 14, 15, 16]);
        for (l, r) in &s.flip_pairs {
            let (nl, nr) = (&s.joint_names[*l], &s.joint_names[*r]);
            assert_eq!(nl[2..], nr[2..]);
            assert_ne!(nl[..2], nr[..2]);
        }
    }

    #[test]
    fn rejects_bad_skeletons() {
        let names = |n: usize| (0..n).map(|i| i.to_string()).collect::<Vec<_>>();
        assert!(Skeleton::new(names(3), vec![-1, 2, 1], vec![], 0).is_err());
        assert!(Skeleton::new(names(3), vec![-1, 0, 5], vec![], 0).is_err());
        assert!(Skeleton::new(names(3), vec![-1, 0, 0], vec![(1, 2), (2, 1)], 0).is_err());
        assert!(Skeleton::new(names(2), vec![-1, 0, 0], vec![], 0).is_err());
        let s = Skeleton::new(names(3), vec![-1, 0, 0], vec![], 0).unwrap();
        assert!(matches!(s.flip_permutation(), Err(Error::MissingFlipPairs)));
    }
}
