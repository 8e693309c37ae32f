use log::{debug, warn};
use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use rayon::prelude::*;

use super::{forward_targets, model_to_frame_rms, FitParams};
use crate::body::{skin, SkinnedModel, SwingTwistPose};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::linalg::{conjugate_gradient, CsrMatrix, SkylineLdl};
use crate::mesh::{cotangent_laplacian, SpatialIndex, TriMesh};

const MAX_OUTER: usize = 10;
/// Relative weight of `|v - v_template|^2` inside the regularizer. The
/// Laplacian alone ignores rigid translations of each connected component.
const ANCHOR: f64 = 1e-6;
/// Largest envelope handed to the direct solver.
const DIRECT_ENVELOPE: usize = 40_000_000;

#[derive(Clone, Debug)]
pub struct ShapeResult {
    pub model: SkinnedModel,
    /// Pooled RMS model-to-frame distance over the input frames.
    pub residual_before: f64,
    pub residual_after: f64,
    pub energy: Vec<(f64, f64)>,
    /// Joints whose rest offsets were held fixed because the data did not
    /// determine them.
    pub frozen_joints: Vec<usize>,
    pub iterations: usize,
}

/// Skinned positions are affine in the template vertices and in the joint
/// rest offsets (rotations depend on the pose alone). Per frame this holds
/// the posed vertices and the per-vertex 3x3 template derivative.
struct FramePose<'a> {
    frame: &'a TriMesh,
    pose: &'a SwingTwistPose,
    index: SpatialIndex,
    face_normals: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
    gate: f64,
    /// d x_v / d y_v.
    a: Vec<Matrix3<f64>>,
}

fn shifted_template(model: &SkinnedModel, d: Vec3) -> Result<SkinnedModel> {
    let offsets: Vec<Vec3> = model.skeleton.joints.iter().map(|j| j.offset).collect();
    model.with_shape(model.template.vertices().iter().map(|p| p + d).collect(), &offsets)
}

fn template_jacobian(model: &SkinnedModel, pose: &SwingTwistPose, x: &TriMesh) -> Result<Vec<Matrix3<f64>>> {
    let mut a = vec![Matrix3::zeros(); x.vertex_count()];
    for k in 0..3 {
        let xs = skin(&shifted_template(model, Vec3::ith(k, 1.0))?, pose)?;
        for (v, m) in a.iter_mut().enumerate() {
            m.set_column(k, &(xs.vertices()[v] - x.vertices()[v]));
        }
    }
    Ok(a)
}

/// Columns of d x / d offsets for every vertex, `3 * joints` per vertex.
fn offset_jacobian(model: &SkinnedModel, pose: &SwingTwistPose, x: &TriMesh) -> Result<Vec<Vec3>> {
    let nj = model.joint_count();
    let nv = x.vertex_count();
    let base: Vec<Vec3> = model.skeleton.joints.iter().map(|j| j.offset).collect();
    let cols: Vec<Vec<Vec3>> = (0..3 * nj)
        .into_par_iter()
        .map(|c| {
            let mut off = base.clone();
            off[c / 3][c % 3] += 1.0;
            let m = model.with_shape(model.template.vertices().to_vec(), &off)?;
            let xs = skin(&m, pose)?;
            Ok(xs.vertices().iter().zip(x.vertices()).map(|(a, b)| a - b).collect())
        })
        .collect::<Result<_>>()?;
    let mut d = vec![Vec3::zeros(); nv * 3 * nj];
    for (c, col) in cols.iter().enumerate() {
        for v in 0..nv {
            d[v * 3 * nj + c] = col[v];
        }
    }
    Ok(d)
}

/// Block-sparse 3x3 pattern of the template system, taken from `L^T L`
/// (which covers every pair of vertices sharing a face).
struct BlockSystem {
    ltl: CsrMatrix,
    values: Vec<f64>,
}

impl BlockSystem {
    fn new(ltl: CsrMatrix) -> Self {
        let n = ltl.nnz() * 9;
        BlockSystem {
            ltl,
            values: vec![0.0; n],
        }
    }

    fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    fn row_start(&self, a: usize, i: usize) -> usize {
        let (rp, _) = self.ltl.pattern();
        9 * rp[a] + 3 * i * (rp[a + 1] - rp[a])
    }

    fn add_block(&mut self, a: usize, b: usize, m: &Matrix3<f64>) {
        let (rp, ci) = self.ltl.pattern();
        let k = ci[rp[a]..rp[a + 1]]
            .binary_search(&b)
            .expect("block inside the Laplacian pattern");
        for i in 0..3 {
            let s = self.row_start(a, i) + 3 * k;
            for j in 0..3 {
                self.values[s + j] += m[(i, j)];
            }
        }
    }

    /// Scalar matrix `blocks + lambda * ((L^T L + anchor I) kron I3) + diag(extra)`.
    fn assemble(&self, lambda: f64, extra: &[f64]) -> CsrMatrix {
        let nv = self.ltl.nrows();
        let mut row_ptr = Vec::with_capacity(3 * nv + 1);
        let mut col_idx = Vec::with_capacity(self.values.len());
        let mut values = self.values.clone();
        row_ptr.push(0);
        for a in 0..nv {
            let (cols, lv) = self.ltl.row(a);
            for i in 0..3 {
                let s = self.row_start(a, i);
                for (k, (&b, &l)) in cols.iter().zip(lv).enumerate() {
                    for j in 0..3 {
                        col_idx.push(3 * b + j);
                        if i == j {
                            values[s + 3 * k + j] += lambda * l;
                        }
                        if b == a && i == j {
                            values[s + 3 * k + j] += lambda * ANCHOR + extra[3 * a + i];
                        }
                    }
                }
                row_ptr.push(col_idx.len());
            }
        }
        CsrMatrix::from_raw(3 * nv, 3 * nv, row_ptr, col_idx, values)
    }
}

enum Solver {
    Direct(SkylineLdl),
    Iterative(CsrMatrix),
}

impl Solver {
    fn new(a: CsrMatrix) -> Result<Self> {
        let (env, perm) = SkylineLdl::envelope(&a);
        if env <= DIRECT_ENVELOPE {
            Ok(Solver::Direct(SkylineLdl::factor_with_ordering(&a, perm)?))
        } else {
            Ok(Solver::Iterative(a))
        }
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        match self {
            Solver::Direct(f) => f.solve(b),
            Solver::Iterative(a) => {
                let mut x = vec![0.0; b.len()];
                let out = conjugate_gradient(a, b, &mut x, 1e-12, 20 * b.len());
                if !out.converged {
                    warn!("shape solve stopped at relative residual {:.2e}", out.relative_residual);
                }
                x
            }
        }
    }
}

/// Correspondences of one frame: forward model vertex to frame plane, and
/// reverse frame vertex to a barycentric point on the posed model.
struct FrameTerms {
    forward: Vec<(u32, Vec3, Vec3)>,
    reverse: Vec<([u32; 3], [f64; 3], Vec3, Vec3)>,
}

fn frame_terms(fp: &FramePose, posed: &TriMesh, params: &FitParams) -> FrameTerms {
    let forward = forward_targets(posed, &fp.index, &fp.face_normals, fp.gate, params.max_normal_angle)
        .into_iter()
        .map(|t| (t.vertex, t.point, t.normal))
        .collect();
    let cos_gate = params.max_normal_angle.to_radians().cos();
    let pindex = SpatialIndex::new(posed);
    let pnormals = posed.face_normals();
    let faces = posed.faces();
    let reverse = fp
        .frame
        .vertices()
        .par_iter()
        .zip(&fp.vertex_normals)
        .filter_map(|(q, n)| {
            let hit = pindex.closest_point_within(q, fp.gate)?;
            (pnormals[hit.face as usize].dot(n) >= cos_gate).then_some((faces[hit.face as usize], hit.bary, *q, *n))
        })
        .collect();
    FrameTerms { forward, reverse }
}

fn data_energy(posed: &TriMesh, t: &FrameTerms) -> f64 {
    let x = posed.vertices();
    let f: f64 = t.forward.iter().map(|(v, c, n)| n.dot(&(x[*v as usize] - c)).powi(2)).sum();
    let r: f64 = t
        .reverse
        .iter()
        .map(|(tri, b, q, n)| {
            let p = x[tri[0] as usize] * b[0] + x[tri[1] as usize] * b[1] + x[tri[2] as usize] * b[2];
            n.dot(&(p - q)).powi(2)
        })
        .sum();
    f + r
}

fn regularizer_energy(l: &CsrMatrix, y: &[Vec3], y0: &[Vec3]) -> f64 {
    let d: Vec<Vec3> = y.iter().zip(y0).map(|(a, b)| a - b).collect();
    let lap: f64 = l.mul_vec3(&d).iter().map(|v| v.norm_squared()).sum();
    lap + ANCHOR * d.iter().map(|v| v.norm_squared()).sum::<f64>()
}

fn pooled_residual(model: &SkinnedModel, frames: &[FramePose]) -> Result<f64> {
    let mut s = 0.0;
    let mut n = 0;
    for fp in frames {
        let posed = skin(model, fp.pose)?;
        let r = model_to_frame_rms(&posed, &fp.index);
        s += r * r * posed.vertex_count() as f64;
        n += posed.vertex_count();
    }
    Ok((s / n.max(1) as f64).sqrt())
}

/// Refines template vertices and joint rest offsets against posed frames:
/// bidirectional point-to-plane data over all frames plus
/// `laplacian_weight * |L (v - v_template)|^2` with the cotangent Laplacian
/// of the input template, and a `1e-6` times smaller pull towards the
/// template itself. Skinning weights and connectivity are kept.
pub fn adapt_shape(
    model: &SkinnedModel,
    frames: &[(&TriMesh, &SwingTwistPose)],
    params: &FitParams,
) -> Result<ShapeResult> {
    params.validate()?;
    model.validate()?;
    if frames.is_empty() {
        return Err(Error::InvalidParameter("shape adaptation needs at least one posed frame".into()));
    }
    let nv = model.template.vertex_count();
    let nj = model.joint_count();
    let no = 3 * nj;
    let lambda = params.laplacian_weight;
    let l = cotangent_laplacian(&model.template)?.matrix;
    let ltl = l.mul_mat(&l);
    let y0 = model.template.vertices().to_vec();

    let prepared = frames
        .iter()
        .map(|&(frame, pose)| {
            if frame.face_count() == 0 {
                return Err(Error::EmptyMesh);
            }
            let x = skin(model, pose)?;
            Ok(FramePose {
                frame,
                pose,
                index: SpatialIndex::new(frame),
                face_normals: frame.face_normals(),
                vertex_normals: frame.vertex_normals(),
                gate: params.gate(frame),
                a: template_jacobian(model, pose, &x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let residual_before = pooled_residual(model, &prepared)?;
    let mut current = model.clone();
    let mut trace = Vec::new();
    let mut frozen = vec![false; nj];
    let mut order = model.skeleton.topological_order();
    order.reverse();
    let mut sys = BlockSystem::new(ltl.clone());
    let mut iterations = 0;
    let mut best: Option<(f64, SkinnedModel)> = None;

    for it in 0..MAX_OUTER.min(params.max_iters) {
        iterations = it + 1;
        sys.clear();
        let mut a_yo = DMatrix::<f64>::zeros(3 * nv, no);
        let mut a_oo = DMatrix::<f64>::zeros(no, no);
        let mut b_y = vec![0.0; 3 * nv];
        let mut b_o = DVector::<f64>::zeros(no);
        let mut e0 = 0.0;
        for fp in &prepared {
            let posed = skin(&current, fp.pose)?;
            let terms = frame_terms(fp, &posed, params);
            e0 += data_energy(&posed, &terms);
            let d = offset_jacobian(&current, fp.pose, &posed)?;
            let x = posed.vertices();
            let dcol = |v: usize| &d[v * no..(v + 1) * no];
            let mut add = |verts: &[(usize, f64)], n: &Vec3, r: f64| {
                let mut jo = DVector::<f64>::zeros(no);
                // Row of the residual with respect to (y, offsets).
                let jy: Vec<(usize, Vec3)> = verts.iter().map(|&(v, w)| (v, fp.a[v].transpose() * n * w)).collect();
                for c in 0..no {
                    jo[c] = verts.iter().map(|&(v, w)| n.dot(&dcol(v)[c]) * w).sum();
                }
                for &(va, ga) in &jy {
                    for &(vb, gb) in &jy {
                        sys.add_block(va, vb, &(ga * gb.transpose()));
                    }
                    for i in 0..3 {
                        b_y[3 * va + i] -= ga[i] * r;
                        for c in 0..no {
                            a_yo[(3 * va + i, c)] += ga[i] * jo[c];
                        }
                    }
                }
                a_oo.ger(1.0, &jo, &jo, 1.0);
                b_o.axpy(-r, &jo, 1.0);
            };
            for (v, c, n) in &terms.forward {
                let v = *v as usize;
                add(&[(v, 1.0)], n, n.dot(&(x[v] - c)));
            }
            for (tri, bary, q, n) in &terms.reverse {
                let verts = [
                    (tri[0] as usize, bary[0]),
                    (tri[1] as usize, bary[1]),
                    (tri[2] as usize, bary[2]),
                ];
                let p = verts.iter().fold(Vec3::zeros(), |acc, &(v, w)| acc + x[v] * w);
                add(&verts, n, n.dot(&(p - q)));
            }
        }
        // Regularizer gradient: lambda (L^T L + anchor) (y - y0).
        let y = current.template.vertices();
        let diff: Vec<Vec3> = y.iter().zip(&y0).map(|(a, b)| a - b).collect();
        let lg = ltl.mul_vec3(&diff);
        for v in 0..nv {
            for i in 0..3 {
                b_y[3 * v + i] -= lambda * (lg[v][i] + ANCHOR * diff[v][i]);
            }
        }
        e0 += lambda * regularizer_energy(&l, y, &y0);
        // Fresh correspondences give the true energy of `current`; once it
        // rises the fixed-correspondence steps have started to drift.
        if let Some((best_e, _)) = &best {
            if e0 > *best_e {
                debug!("adapt_shape: energy rose at iteration {it}, keeping the previous shape");
                break;
            }
        }
        best = Some((e0, current.clone()));

        let data_diag = sys.assemble(0.0, &vec![0.0; 3 * nv]).diagonal();
        let dscale = data_diag.iter().fold(0.0f64, |m, d| m.max(*d)).max(1e-300);
        let mut damping = 1e-12;
        let mut accepted = None;
        for _ in 0..6 {
            let extra: Vec<f64> = data_diag.iter().map(|d| damping * d.max(1e-3 * dscale)).collect();
            let solver = Solver::new(sys.assemble(lambda, &extra))?;
            let z_y = solver.solve(&b_y);
            // Schur complement on the offsets.
            let mut zo = DMatrix::<f64>::zeros(3 * nv, no);
            let cols: Vec<Vec<f64>> = (0..no)
                .into_par_iter()
                .map(|c| solver.solve(a_yo.column(c).as_slice()))
                .collect();
            for (c, col) in cols.iter().enumerate() {
                zo.set_column(c, &DVector::from_column_slice(col));
            }
            let s = &a_oo - a_yo.transpose() * &zo;
            let rhs = &b_o - a_yo.transpose() * DVector::from_column_slice(&z_y);
            let delta_o = solve_offsets(&s, &rhs, &order, &mut frozen);
            let zd = &zo * &delta_o;
            let delta_y: Vec<Vec3> = (0..nv)
                .map(|v| Vec3::new(z_y[3 * v] - zd[3 * v], z_y[3 * v + 1] - zd[3 * v + 1], z_y[3 * v + 2] - zd[3 * v + 2]))
                .collect();
            let new_y: Vec<Vec3> = y.iter().zip(&delta_y).map(|(a, d)| a + d).collect();
            let new_o: Vec<Vec3> = current
                .skeleton
                .joints
                .iter()
                .enumerate()
                .map(|(j, jt)| jt.offset + Vec3::new(delta_o[3 * j], delta_o[3 * j + 1], delta_o[3 * j + 2]))
                .collect();
            let trial = current.with_shape(new_y.clone(), &new_o)?;
            let mut e1 = lambda * regularizer_energy(&l, &new_y, &y0);
            // Judged with fresh correspondences, so tangential drift that
            // only helps the linearized problem is rejected.
            for fp in &prepared {
                let posed = skin(&trial, fp.pose)?;
                e1 += data_energy(&posed, &frame_terms(fp, &posed, params));
            }
            if e1 <= e0 {
                let moved = (delta_y.iter().map(|d| d.norm_squared()).sum::<f64>() / nv as f64).sqrt();
                accepted = Some((trial, e1, moved.max(delta_o.amax())));
                break;
            }
            damping = (damping * 100.0).max(1e-6);
        }
        let Some((trial, e1, moved)) = accepted else {
            debug!("adapt_shape: no decreasing step at iteration {it}");
            break;
        };
        trace.push((e0, e1));
        current = trial;
        if moved < params.convergence_tol {
            break;
        }
    }

    if let Some((_, m)) = best {
        current = m;
    }
    let frozen_joints: Vec<usize> = (0..nj).filter(|&j| frozen[j]).collect();
    if !frozen_joints.is_empty() {
        let names: Vec<&str> = frozen_joints.iter().map(|&j| model.skeleton.joints[j].name.as_str()).collect();
        warn!("joint offsets not determined by the data, kept fixed: {}", names.join(", "));
    }
    let mut residual_after = pooled_residual(&current, &prepared)?;
    if residual_after > residual_before {
        warn!("shape refinement did not lower the residual ({residual_before:.3e} -> {residual_after:.3e}); keeping the input shape");
        current = model.clone();
        residual_after = residual_before;
    }
    Ok(ShapeResult {
        model: current,
        residual_before,
        residual_after,
        energy: trace,
        frozen_joints,
        iterations,
    })
}

/// Solves the offset system over a growing set of joints, visited leaves
/// first. A joint joins only if its block stays well conditioned given the
/// joints already in; otherwise its offset is frozen. Ancestors whose
/// offsets act exactly like a descendant's (unrotated chains) thus freeze
/// while the descendant stays free.
fn solve_offsets(s: &DMatrix<f64>, rhs: &DVector<f64>, order: &[usize], frozen: &mut [bool]) -> DVector<f64> {
    let nj = frozen.len();
    let scale = (0..3 * nj).map(|i| s[(i, i)]).fold(0.0f64, f64::max);
    let mut active: Vec<usize> = Vec::new();
    for &j in order {
        if frozen[j] {
            continue;
        }
        let own = s.fixed_view::<3, 3>(3 * j, 3 * j).into_owned();
        let mut cond = own;
        if !active.is_empty() {
            let idx: Vec<usize> = active.iter().flat_map(|&a| (0..3).map(move |k| 3 * a + k)).collect();
            let saa = DMatrix::from_fn(idx.len(), idx.len(), |r, c| s[(idx[r], idx[c])]);
            let saj = DMatrix::from_fn(idx.len(), 3, |r, c| s[(idx[r], 3 * j + c)]);
            if let Some(ch) = saa.cholesky() {
                let x = ch.solve(&saj);
                let red = saj.transpose() * x;
                cond -= Matrix3::from_fn(|r, c| red[(r, c)]);
            }
        }
        let e_own = SymmetricEigen::new((own + own.transpose()) * 0.5).eigenvalues;
        let e_cond = SymmetricEigen::new((cond + cond.transpose()) * 0.5).eigenvalues;
        let ok = scale > 0.0 && e_own.max() > 1e-12 * scale && e_cond.min() > 1e-8 * e_own.max();
        if ok {
            active.push(j);
        } else {
            frozen[j] = true;
        }
    }
    let mut out = DVector::zeros(3 * nj);
    if active.is_empty() {
        return out;
    }
    let free: Vec<usize> = active.iter().flat_map(|&a| (0..3).map(move |k| 3 * a + k)).collect();
    let m = DMatrix::from_fn(free.len(), free.len(), |a, b| s[(free[a], free[b])]);
    let r = DVector::from_fn(free.len(), |a, _| rhs[free[a]]);
    match m.cholesky() {
        Some(c) => {
            let x = c.solve(&r);
            for (a, &i) in free.iter().enumerate() {
                out[i] = x[a];
            }
        }
        None => {
            for &j in &active {
                frozen[j] = true;
            }
        }
    }
    out
}
