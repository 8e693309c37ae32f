use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

use super::TriMesh;

/// Cotangent Laplacian in positive semidefinite form: `L_ij = -w_ij` for
/// each edge and `L_ii = sum_j w_ij`, with `w_ij = (cot a + cot b) / 2`.
#[derive(Clone, Debug)]
pub struct CotanLaplacian {
    pub matrix: CsrMatrix,
    /// Edges whose weight came out negative and was clamped to zero.
    pub clamped: usize,
}

pub fn cotangent_laplacian(mesh: &TriMesh) -> Result<CotanLaplacian> {
    let table = mesh.edge_table();
    let v = mesh.vertices();
    let faces = mesh.faces();
    let mut trip = Vec::with_capacity(table.len() * 4);
    let mut clamped = 0;
    for (e, &[a, b]) in table.edges.iter().enumerate() {
        let inc = table.faces_of(e);
        if inc.len() > 2 {
            return Err(Error::NonManifoldEdge {
                a: a as usize,
                b: b as usize,
                count: inc.len(),
            });
        }
        let mut w = 0.0;
        for &f in inc {
            let t = faces[f as usize];
            let c = t.into_iter().find(|&x| x != a && x != b).unwrap();
            let (pa, pb, pc) = (v[a as usize], v[b as usize], v[c as usize]);
            let (ea, eb) = (pa - pc, pb - pc);
            let cross = ea.cross(&eb).norm();
            if cross > 0.0 {
                w += 0.5 * ea.dot(&eb) / cross;
            }
        }
        if w < 0.0 {
            clamped += 1;
            w = 0.0;
        }
        let (a, b) = (a as usize, b as usize);
        trip.push((a, b, -w));
        trip.push((b, a, -w));
    }
    // The diagonal is the negated off-diagonal row sum, in column order.
    let n = mesh.vertex_count();
    let off = CsrMatrix::from_triplets(n, n, trip.iter().copied());
    for i in 0..n {
        let d: f64 = off.row(i).1.iter().sum();
        trip.push((i, i, -d));
    }
    Ok(CotanLaplacian {
        matrix: CsrMatrix::from_triplets(n, n, trip),
        clamped,
    })
}
