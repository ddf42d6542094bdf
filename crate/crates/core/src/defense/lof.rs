//! Local outlier factor over Euclidean distance.
//!
//! A query that coincides with a training row is scored with that one row
//! left out, so scoring the training set reproduces the classic LOF values.

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Lof {
    rows: Vec<Vec<f64>>,
    k: usize,
    k_dist: Vec<f64>,
    lrd: Vec<f64>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `k` nearest `(index, distance)` pairs, ignoring `skip`.
fn nearest(rows: &[Vec<f64>], x: &[f64], k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = rows
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, r)| (i, dist(r, x)))
        .collect();
    d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    d.truncate(k);
    d
}

fn local_density(neighbors: &[(usize, f64)], k_dist: &[f64]) -> f64 {
    let reach: f64 = neighbors.iter().map(|&(o, d)| d.max(k_dist[o])).sum::<f64>() / neighbors.len() as f64;
    1.0 / (reach + 1e-10)
}

impl Lof {
    pub(crate) fn fit(rows: &[Vec<f64>], neighbors: usize) -> Self {
        let k = neighbors.min(rows.len() - 1).max(1);
        let knn: Vec<Vec<(usize, f64)>> = (0..rows.len()).map(|i| nearest(rows, &rows[i], k, Some(i))).collect();
        let k_dist: Vec<f64> = knn.iter().map(|n| n.last().map_or(0.0, |p| p.1)).collect();
        let lrd = knn.iter().map(|n| local_density(n, &k_dist)).collect();
        Self {
            rows: rows.to_vec(),
            k,
            k_dist,
            lrd,
        }
    }

    pub(crate) fn score(&self, x: &[f64]) -> f64 {
        let skip = self.rows.iter().position(|r| r.as_slice() == x);
        let knn = nearest(&self.rows, x, self.k, skip);
        let lrd = local_density(&knn, &self.k_dist);
        knn.iter().map(|&(o, _)| self.lrd[o]).sum::<f64>() / knn.len() as f64 / lrd
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_square() {
        // Unit square corners: every point's 2-distance is 1, reach distances all 1, LOF = 1.
        let rows = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let m = Lof::fit(&rows, 2);
        for r in &rows {
            assert!((m.score(r) - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn hand_computed_line() {
        // Points 0, 1, 2, 10 on a line with k = 1.
        // k-dist: 1, 1, 1, 8. lrd: 1, 1, 1, 1/8. LOF(10) = lrd(2)/lrd(10) = 8.
        let rows: Vec<Vec<f64>> = [0.0, 1.0, 2.0, 10.0].iter().map(|&v| vec![v]).collect();
        let m = Lof::fit(&rows, 1);
        assert!((m.score(&[10.0]) - 8.0).abs() < 1e-6);
        assert!((m.score(&[1.0]) - 1.0).abs() < 1e-6);
    }
}
