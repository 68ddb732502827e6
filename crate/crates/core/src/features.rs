//! Comparator-only view of an array through `k` index variables.
//!
//! Layout: for every variable pair `i < j` a 6-block
//! `[v_i<v_j, v_i=v_j, v_i>v_j, A[v_i]<A[v_j], A[v_i]=A[v_j], A[v_i]>A[v_j]]`,
//! then for every variable `i` its left-neighbour block followed by its
//! right-neighbour block (4 entries each).

use std::cmp::Ordering;

/// `6 k(k-1)/2 + 4k + 4k`.
pub const fn comparison_width(k: usize) -> usize {
    6 * k * (k - 1) / 2 + 8 * k
}

const fn pair_index(i: usize, j: usize, k: usize) -> usize {
    // rank of (i, j), i < j, in row-major order over the strict upper triangle
    i * k - i * (i + 1) / 2 + (j - i - 1)
}

fn push_ordering(out: &mut Vec<f64>, ord: Ordering) {
    out.push(f64::from(ord == Ordering::Less));
    out.push(f64::from(ord == Ordering::Equal));
    out.push(f64::from(ord == Ordering::Greater));
}

/// Appends `comparison_width(vars.len())` features to `out`.
pub fn write_comparison_features(
    array: &[i64],
    low: usize,
    high: usize,
    vars: &[usize],
    out: &mut Vec<f64>,
) {
    let k = vars.len();
    for i in 0..k {
        for j in i + 1..k {
            push_ordering(out, vars[i].cmp(&vars[j]));
            push_ordering(out, array[vars[i]].cmp(&array[vars[j]]));
        }
    }
    for &v in vars {
        if v == low {
            out.extend_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        } else {
            let ord = array[v].cmp(&array[v - 1]);
            out.push(0.0);
            out.push(f64::from(ord == Ordering::Greater));
            out.push(f64::from(ord == Ordering::Equal));
            out.push(f64::from(ord == Ordering::Less));
        }
        if v == high {
            out.extend_from_slice(&[0.0, 0.0, 0.0, 1.0]);
        } else {
            let ord = array[v].cmp(&array[v + 1]);
            out.push(f64::from(ord == Ordering::Greater));
            out.push(f64::from(ord == Ordering::Equal));
            out.push(f64::from(ord == Ordering::Less));
            out.push(0.0);
        }
    }
}

fn read_ordering(block: &[f64]) -> Ordering {
    if block[0] > 0.5 {
        Ordering::Less
    } else if block[1] > 0.5 {
        Ordering::Equal
    } else {
        Ordering::Greater
    }
}

/// Typed reader over a comparison-feature block.
#[derive(Debug, Clone, Copy)]
pub struct ComparisonView<'a> {
    features: &'a [f64],
    k: usize,
}

impl<'a> ComparisonView<'a> {
    pub fn new(features: &'a [f64], k: usize) -> Self {
        assert!(features.len() >= comparison_width(k));
        ComparisonView { features, k }
    }

    fn pair_block(&self, i: usize, j: usize) -> (&'a [f64], bool) {
        let (a, b, flipped) = if i < j { (i, j, false) } else { (j, i, true) };
        let off = 6 * pair_index(a, b, self.k);
        (&self.features[off..off + 6], flipped)
    }

    /// `v_i` compared with `v_j`.
    pub fn var_cmp(&self, i: usize, j: usize) -> Ordering {
        if i == j {
            return Ordering::Equal;
        }
        let (block, flipped) = self.pair_block(i, j);
        let ord = read_ordering(&block[..3]);
        if flipped {
            ord.reverse()
        } else {
            ord
        }
    }

    /// `A[v_i]` compared with `A[v_j]`.
    pub fn val_cmp(&self, i: usize, j: usize) -> Ordering {
        if i == j {
            return Ordering::Equal;
        }
        let (block, flipped) = self.pair_block(i, j);
        let ord = read_ordering(&block[3..]);
        if flipped {
            ord.reverse()
        } else {
            ord
        }
    }

    fn neighbour_offset(&self) -> usize {
        3 * self.k * (self.k - 1)
    }

    /// `A[v_i]` compared with `A[v_i - 1]`; `None` when `v_i` is at `low`.
    pub fn left(&self, i: usize) -> Option<Ordering> {
        let off = self.neighbour_offset() + 8 * i;
        let b = &self.features[off..off + 4];
        if b[0] > 0.5 {
            None
        } else if b[1] > 0.5 {
            Some(Ordering::Greater)
        } else if b[2] > 0.5 {
            Some(Ordering::Equal)
        } else {
            Some(Ordering::Less)
        }
    }

    /// `A[v_i]` compared with `A[v_i + 1]`; `None` when `v_i` is at `high`.
    pub fn right(&self, i: usize) -> Option<Ordering> {
        let off = self.neighbour_offset() + 8 * i + 4;
        let b = &self.features[off..off + 4];
        if b[3] > 0.5 {
            None
        } else if b[0] > 0.5 {
            Some(Ordering::Greater)
        } else if b[1] > 0.5 {
            Some(Ordering::Equal)
        } else {
            Some(Ordering::Less)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_for_four_variables() {
        assert_eq!(comparison_width(4), 68);
        assert_eq!(comparison_width(1), 8);
    }

    #[test]
    fn pair_indices_are_dense() {
        let k = 4;
        let mut seen = vec![];
        for i in 0..k {
            for j in i + 1..k {
                seen.push(pair_index(i, j, k));
            }
        }
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn view_reads_back_relations() {
        let a = [5, 3, 9, 3];
        let vars = [1, 2, 3, 0];
        let mut f = Vec::new();
        write_comparison_features(&a, 0, 3, &vars, &mut f);
        let v = ComparisonView::new(&f, 4);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(v.var_cmp(i, j), vars[i].cmp(&vars[j]));
                assert_eq!(v.val_cmp(i, j), a[vars[i]].cmp(&a[vars[j]]));
            }
            let p = vars[i];
            let l = (p > 0).then(|| a[p].cmp(&a[p - 1]));
            let r = (p < 3).then(|| a[p].cmp(&a[p + 1]));
            assert_eq!(v.left(i), l);
            assert_eq!(v.right(i), r);
        }
    }
}
