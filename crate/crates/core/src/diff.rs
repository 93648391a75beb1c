//! Line-level longest-common-subsequence diff.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffOp {
    Equal,
    /// Line present only in the left sequence.
    Delete,
    /// Line present only in the right sequence.
    Insert,
}

/// Edit script turning `a` into `b`. Within a changed region deletions are
/// emitted before insertions.
pub fn lcs_diff<T: PartialEq>(a: &[T], b: &[T]) -> Vec<DiffOp> {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let suffix = a[prefix..]
        .iter()
        .rev()
        .zip(b[prefix..].iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    let am = &a[prefix..a.len() - suffix];
    let bm = &b[prefix..b.len() - suffix];

    let mut ops = vec![DiffOp::Equal; prefix];
    ops.extend(lcs_core(am, bm));
    ops.extend(std::iter::repeat_n(DiffOp::Equal, suffix));
    ops
}

fn lcs_core<T: PartialEq>(a: &[T], b: &[T]) -> Vec<DiffOp> {
    let (n, m) = (a.len(), b.len());
    let width = m + 1;
    // table[i][j] = LCS length of a[i..] and b[j..]
    let mut table = vec![0u32; (n + 1) * width];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i * width + j] = if a[i] == b[j] {
                table[(i + 1) * width + j + 1] + 1
            } else {
                table[(i + 1) * width + j].max(table[i * width + j + 1])
            };
        }
    }

    let mut raw = Vec::with_capacity(n + m);
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j] {
            raw.push(DiffOp::Equal);
            i += 1;
            j += 1;
        } else if table[(i + 1) * width + j] >= table[i * width + j + 1] {
            raw.push(DiffOp::Delete);
            i += 1;
        } else {
            raw.push(DiffOp::Insert);
            j += 1;
        }
    }
    raw.extend(std::iter::repeat_n(DiffOp::Delete, n - i));
    raw.extend(std::iter::repeat_n(DiffOp::Insert, m - j));

    // Put deletions first inside each changed run.
    let mut ops = Vec::with_capacity(raw.len());
    let mut k = 0;
    while k < raw.len() {
        if raw[k] == DiffOp::Equal {
            ops.push(DiffOp::Equal);
            k += 1;
            continue;
        }
        let start = k;
        while k < raw.len() && raw[k] != DiffOp::Equal {
            k += 1;
        }
        let dels = raw[start..k].iter().filter(|o| **o == DiffOp::Delete).count();
        ops.extend(std::iter::repeat_n(DiffOp::Delete, dels));
        ops.extend(std::iter::repeat_n(DiffOp::Insert, k - start - dels));
    }
    ops
}
