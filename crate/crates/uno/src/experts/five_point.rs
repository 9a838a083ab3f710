//! Essential-matrix estimation: Nistér five-point minimal solver inside
//! RANSAC, with cheirality-based decomposition and degeneracy detection.
//!
//! The minimal solver reduces the ten cubic constraints on the essential
//! matrix to a single degree-10 polynomial in one unknown and finds its roots
//! as companion-matrix eigenvalues; roots with |imag| > 1e-8 are discarded.

use nalgebra::{DMatrix, Matrix3, UnitQuaternion, Vector2, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{triangulate_midpoint, CameraIntrinsics, Pose};
use crate::rng::Stream;

use super::EgoMotionCandidate;

/// RANSAC configuration for the geometric decoder.
#[derive(Debug, Clone)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier threshold on the Sampson distance, in pixels.
    pub threshold_px: f64,
    /// Below this inlier ratio the geometry is declared degenerate.
    pub min_inlier_ratio: f64,
    /// Median angular residual (radians) of a rotation-only fit below which
    /// the pair is declared a pure-rotation degeneracy.
    pub pure_rotation_residual_rad: f64,
    /// Minimum ray parallax for cheirality triangulation.
    pub min_parallax_rad: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            iterations: 200,
            threshold_px: 1.0,
            min_inlier_ratio: 0.3,
            pure_rotation_residual_rad: 1e-3,
            min_parallax_rad: 5e-5,
        }
    }
}

/// Result of the geometric decoder: the relative-pose candidate (pose of the
/// second frame expressed in the first, unit translation, no scale) plus the
/// RANSAC inlier indices for downstream anchor weighting.
#[derive(Debug, Clone)]
pub struct FivePointResult {
    pub candidate: EgoMotionCandidate,
    pub inliers: Vec<usize>,
}

// ---------------------------------------------------------------------------
// Polynomials in (x, y, z) up to degree three.
//
// Linear:    [x, y, z, 1]
// Quadratic: [x², xy, xz, y², yz, z², x, y, z, 1]
// Cubic:     [x³, y³, x²y, xy², x²z, x², y²z, y², xyz, xy,
//             xz², xz, x, yz², yz, y, z³, z², z, 1]
//
// The cubic ordering puts the ten monomials eliminated by Gauss-Jordan first;
// the trailing ten group as x·(z²,z,1), y·(z²,z,1), 1·(z³,z²,z,1).
// ---------------------------------------------------------------------------

type Lin = [f64; 4];
type Quad = [f64; 10];
type Cubic = [f64; 20];

const LIN_EXP: [(u8, u8, u8); 4] = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0)];
const QUAD_EXP: [(u8, u8, u8); 10] = [
    (2, 0, 0),
    (1, 1, 0),
    (1, 0, 1),
    (0, 2, 0),
    (0, 1, 1),
    (0, 0, 2),
    (1, 0, 0),
    (0, 1, 0),
    (0, 0, 1),
    (0, 0, 0),
];
const CUBIC_EXP: [(u8, u8, u8); 20] = [
    (3, 0, 0),
    (0, 3, 0),
    (2, 1, 0),
    (1, 2, 0),
    (2, 0, 1),
    (2, 0, 0),
    (0, 2, 1),
    (0, 2, 0),
    (1, 1, 1),
    (1, 1, 0),
    (1, 0, 2),
    (1, 0, 1),
    (1, 0, 0),
    (0, 1, 2),
    (0, 1, 1),
    (0, 1, 0),
    (0, 0, 3),
    (0, 0, 2),
    (0, 0, 1),
    (0, 0, 0),
];

fn cubic_index(e: (u8, u8, u8)) -> usize {
    CUBIC_EXP
        .iter()
        .position(|&m| m == e)
        .expect("exponent within cubic degree")
}

fn mul_lin_lin(a: &Lin, b: &Lin) -> Quad {
    let mut out = [0.0; 10];
    for (ia, &ea) in LIN_EXP.iter().enumerate() {
        if a[ia] == 0.0 {
            continue;
        }
        for (ib, &eb) in LIN_EXP.iter().enumerate() {
            let e = (ea.0 + eb.0, ea.1 + eb.1, ea.2 + eb.2);
            let idx = QUAD_EXP
                .iter()
                .position(|&m| m == e)
                .expect("exponent within quadratic degree");
            out[idx] += a[ia] * b[ib];
        }
    }
    out
}

fn mul_quad_lin(a: &Quad, b: &Lin) -> Cubic {
    let mut out = [0.0; 20];
    for (ia, &ea) in QUAD_EXP.iter().enumerate() {
        if a[ia] == 0.0 {
            continue;
        }
        for (ib, &eb) in LIN_EXP.iter().enumerate() {
            if b[ib] == 0.0 {
                continue;
            }
            let e = (ea.0 + eb.0, ea.1 + eb.1, ea.2 + eb.2);
            out[cubic_index(e)] += a[ia] * b[ib];
        }
    }
    out
}

fn quad_add(a: &Quad, b: &Quad) -> Quad {
    std::array::from_fn(|i| a[i] + b[i])
}

fn quad_scale(a: &Quad, s: f64) -> Quad {
    a.map(|v| v * s)
}

fn cubic_add(a: &Cubic, b: &Cubic) -> Cubic {
    std::array::from_fn(|i| a[i] + b[i])
}

fn cubic_sub(a: &Cubic, b: &Cubic) -> Cubic {
    std::array::from_fn(|i| a[i] - b[i])
}

fn cubic_scale(a: &Cubic, s: f64) -> Cubic {
    a.map(|v| v * s)
}

/// Dense univariate polynomial, coefficients by ascending power.
#[derive(Debug, Clone)]
struct UniPoly(Vec<f64>);

impl UniPoly {
    fn zero(deg: usize) -> Self {
        UniPoly(vec![0.0; deg + 1])
    }

    fn mul(&self, other: &UniPoly) -> UniPoly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, &a) in self.0.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        UniPoly(out)
    }

    fn add(&self, other: &UniPoly) -> UniPoly {
        let n = self.0.len().max(other.0.len());
        let mut out = vec![0.0; n];
        for (i, &a) in self.0.iter().enumerate() {
            out[i] += a;
        }
        for (i, &b) in other.0.iter().enumerate() {
            out[i] += b;
        }
        UniPoly(out)
    }

    fn sub(&self, other: &UniPoly) -> UniPoly {
        let n = self.0.len().max(other.0.len());
        let mut out = vec![0.0; n];
        for (i, &a) in self.0.iter().enumerate() {
            out[i] += a;
        }
        for (i, &b) in other.0.iter().enumerate() {
            out[i] -= b;
        }
        UniPoly(out)
    }

    /// Multiply by z.
    fn shift(&self) -> UniPoly {
        let mut out = vec![0.0];
        out.extend_from_slice(&self.0);
        UniPoly(out)
    }

    fn eval(&self, z: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * z + c)
    }

    /// Real roots via companion-matrix eigenvalues; imaginary parts above
    /// `imag_tol` are discarded.
    fn real_roots(&self, imag_tol: f64) -> Vec<f64> {
        let mut coeffs = self.0.clone();
        while coeffs.len() > 1 && coeffs.last().unwrap().abs() < 1e-12 {
            coeffs.pop();
        }
        let n = coeffs.len() - 1;
        if n == 0 {
            return Vec::new();
        }
        let lead = coeffs[n];
        let companion = DMatrix::from_fn(n, n, |r, c| {
            if c == n - 1 {
                -coeffs[r] / lead
            } else if r == c + 1 {
                1.0
            } else {
                0.0
            }
        });
        companion
            .complex_eigenvalues()
            .iter()
            .filter(|ev| ev.im.abs() <= imag_tol)
            .map(|ev| ev.re)
            .collect()
    }
}

/// Linear-in-(x,y,z,1) entries of E = x E1 + y E2 + z E3 + E4.
type LinMat = [[Lin; 3]; 3];

fn lin_mat(e1: &Matrix3<f64>, e2: &Matrix3<f64>, e3: &Matrix3<f64>, e4: &Matrix3<f64>) -> LinMat {
    std::array::from_fn(|r| {
        std::array::from_fn(|c| [e1[(r, c)], e2[(r, c)], e3[(r, c)], e4[(r, c)]])
    })
}

/// The ten cubic constraints: det(E) = 0 and 2·E·Eᵀ·E − tr(E·Eᵀ)·E = 0.
fn essential_constraints(m: &LinMat) -> Vec<Cubic> {
    let mut rows = Vec::with_capacity(10);

    // det(E)
    let minor = |r0: usize, r1: usize, c0: usize, c1: usize| -> Quad {
        let a = mul_lin_lin(&m[r0][c0], &m[r1][c1]);
        let b = mul_lin_lin(&m[r0][c1], &m[r1][c0]);
        quad_add(&a, &quad_scale(&b, -1.0))
    };
    let det = {
        let m00 = minor(1, 2, 1, 2);
        let m01 = minor(1, 2, 0, 2);
        let m02 = minor(1, 2, 0, 1);
        let t0 = mul_quad_lin(&m00, &m[0][0]);
        let t1 = mul_quad_lin(&m01, &m[0][1]);
        let t2 = mul_quad_lin(&m02, &m[0][2]);
        cubic_add(&cubic_sub(&t0, &t1), &t2)
    };
    rows.push(det);

    // G = E Eᵀ (quadratic entries), tr(G) quadratic
    let g: [[Quad; 3]; 3] = std::array::from_fn(|r| {
        std::array::from_fn(|c| {
            let mut acc = [0.0; 10];
            for k in 0..3 {
                acc = quad_add(&acc, &mul_lin_lin(&m[r][k], &m[c][k]));
            }
            acc
        })
    });
    let trace = quad_add(&quad_add(&g[0][0], &g[1][1]), &g[2][2]);

    for r in 0..3 {
        for c in 0..3 {
            // (2 G E − tr(G) E)_{rc}
            let mut acc = [0.0; 20];
            for k in 0..3 {
                acc = cubic_add(&acc, &mul_quad_lin(&g[r][k], &m[k][c]));
            }
            let acc = cubic_scale(&acc, 2.0);
            let tr_term = mul_quad_lin(&trace, &m[r][c]);
            rows.push(cubic_sub(&acc, &tr_term));
        }
    }
    rows
}

/// Gauss-Jordan reduce the 10x20 system over the first ten columns.
fn gauss_jordan(rows: &mut [Cubic]) -> bool {
    let n = rows.len();
    for col in 0..10 {
        let mut pivot = col;
        for r in col..n {
            if rows[r][col].abs() > rows[pivot][col].abs() {
                pivot = r;
            }
        }
        if rows[pivot][col].abs() < 1e-14 {
            return false;
        }
        rows.swap(col, pivot);
        let p = rows[col][col];
        for v in rows[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = rows[r][col];
            if f == 0.0 {
                continue;
            }
            for c in 0..20 {
                let sub = f * rows[col][c];
                rows[r][c] -= sub;
            }
        }
    }
    true
}

/// x-, y- and constant-group polynomials in z of a reduced row.
fn row_groups(row: &Cubic) -> (UniPoly, UniPoly, UniPoly) {
    // basis columns 10..19 = [xz², xz, x, yz², yz, y, z³, z², z, 1]
    let px = UniPoly(vec![row[12], row[11], row[10]]);
    let py = UniPoly(vec![row[15], row[14], row[13]]);
    let pc = UniPoly(vec![row[19], row[18], row[17], row[16]]);
    (px, py, pc)
}

/// Up to ten essential-matrix candidates from exactly five correspondences in
/// normalized image coordinates.
pub fn essential_minimal(
    pts1: &[Vector2<f64>],
    pts2: &[Vector2<f64>],
) -> Result<Vec<Matrix3<f64>>> {
    if pts1.len() != 5 || pts2.len() != 5 {
        return Err(Error::InvalidArgument(format!(
            "minimal solver needs exactly 5 correspondences, got {}",
            pts1.len()
        )));
    }
    // Null space of the 5x9 epipolar constraint matrix; pad square so the
    // full right-singular basis is available.
    let mut a = DMatrix::<f64>::zeros(9, 9);
    for (i, (p1, p2)) in pts1.iter().zip(pts2).enumerate() {
        let row = [
            p2[0] * p1[0],
            p2[0] * p1[1],
            p2[0],
            p2[1] * p1[0],
            p2[1] * p1[1],
            p2[1],
            p1[0],
            p1[1],
            1.0,
        ];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateGeometry("SVD failed on constraint matrix".into()))?;
    let basis = |r: usize| -> Matrix3<f64> {
        let row = v_t.row(r);
        Matrix3::new(
            row[0], row[1], row[2], row[3], row[4], row[5], row[6], row[7], row[8],
        )
    };
    let (e1, e2, e3, e4) = (basis(5), basis(6), basis(7), basis(8));

    let m = lin_mat(&e1, &e2, &e3, &e4);
    let mut rows = essential_constraints(&m);
    if !gauss_jordan(&mut rows) {
        return Ok(Vec::new());
    }

    // Eliminate the quadratic pivots pairwise: row(x²z) − z·row(x²) etc.
    // Pivot rows in the cubic ordering: 4=x²z, 5=x², 6=y²z, 7=y², 8=xyz, 9=xy.
    let reduced_rows: Vec<(UniPoly, UniPoly, UniPoly)> = [(4, 5), (6, 7), (8, 9)]
        .iter()
        .map(|&(hi, lo)| {
            let (ex, ey, ec) = row_groups(&rows[hi]);
            let (fx, fy, fc) = row_groups(&rows[lo]);
            (
                ex.sub(&fx.shift()),
                ey.sub(&fy.shift()),
                ec.sub(&fc.shift()),
            )
        })
        .collect();

    // det of the 3x3 polynomial matrix [kx ky kc; lx ly lc; mx my mc]
    let (kx, ky, kc) = &reduced_rows[0];
    let (lx, ly, lc) = &reduced_rows[1];
    let (mx, my, mc) = &reduced_rows[2];
    let det = kx
        .mul(&ly.mul(mc).sub(&lc.mul(my)))
        .sub(&ky.mul(&lx.mul(mc).sub(&lc.mul(mx))))
        .add(&kc.mul(&lx.mul(my).sub(&ly.mul(mx))));

    let mut candidates = Vec::new();
    for z in det.real_roots(1e-8) {
        // Solve the 3x2 linear system for (x, y) at this root.
        let a = nalgebra::Matrix3x2::new(
            kx.eval(z),
            ky.eval(z),
            lx.eval(z),
            ly.eval(z),
            mx.eval(z),
            my.eval(z),
        );
        let b = Vector3::new(-kc.eval(z), -lc.eval(z), -mc.eval(z));
        let normal = a.transpose() * a;
        let rhs = a.transpose() * b;
        let Some(inv) = normal.try_inverse() else {
            continue;
        };
        let xy = inv * rhs;
        let e = e1 * xy[0] + e2 * xy[1] + e3 * z + e4;
        let norm = e.norm();
        if norm > 1e-12 {
            candidates.push(e / norm);
        }
    }
    Ok(candidates)
}

/// First-order (Sampson) epipolar distance in normalized coordinates.
pub fn sampson_distance(e: &Matrix3<f64>, p1: &Vector2<f64>, p2: &Vector2<f64>) -> f64 {
    let x1 = Vector3::new(p1[0], p1[1], 1.0);
    let x2 = Vector3::new(p2[0], p2[1], 1.0);
    let ex1 = e * x1;
    let etx2 = e.transpose() * x2;
    let num = x2.dot(&ex1);
    let den = ex1[0] * ex1[0] + ex1[1] * ex1[1] + etx2[0] * etx2[0] + etx2[1] * etx2[1];
    if den <= 0.0 {
        return f64::INFINITY;
    }
    (num * num / den).sqrt()
}

/// Decompose E into the cheirality-consistent (R, t), where `X2 = R X1 + t`
/// and |t| = 1. The decomposition with the majority of positive triangulated
/// depths wins; a tie is a degeneracy error.
fn decompose_essential(
    e: &Matrix3<f64>,
    pts1: &[Vector2<f64>],
    pts2: &[Vector2<f64>],
    min_parallax_rad: f64,
) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let svd = nalgebra::SVD::new(*e, true, true);
    let mut u = svd
        .u
        .ok_or_else(|| Error::DegenerateGeometry("SVD failed on E".into()))?;
    let mut v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateGeometry("SVD failed on E".into()))?;
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t = u.column(2).into_owned();

    let mut best: Option<(usize, Matrix3<f64>, Vector3<f64>)> = None;
    let mut tie = false;
    for (r, tv) in [(r1, t), (r1, -t), (r2, t), (r2, -t)] {
        // Pose of camera 2 in frame 1 for triangulation.
        let r_q = UnitQuaternion::from_matrix(&r);
        let pose_2_in_1 = Pose::new(r_q.inverse(), -(r_q.inverse() * tv));
        let mut votes = 0usize;
        for (p1, p2) in pts1.iter().zip(pts2) {
            if let Some((x1, _)) = triangulate_midpoint(p1, p2, &pose_2_in_1, min_parallax_rad) {
                let x2 = r * x1 + tv;
                if x1[2] > 0.0 && x2[2] > 0.0 {
                    votes += 1;
                }
            }
        }
        match &best {
            Some((v, _, _)) if votes == *v => tie = true,
            Some((v, _, _)) if votes > *v => {
                best = Some((votes, r, tv));
                tie = false;
            }
            None => best = Some((votes, r, tv)),
            _ => {}
        }
    }
    match best {
        Some((votes, r, tv)) if votes > 0 && !tie => Ok((r, tv)),
        _ => Err(Error::DegenerateGeometry(
            "cheirality vote tied or empty".into(),
        )),
    }
}

/// Best rotation-only fit of the bearing directions (Kabsch) and its median
/// angular residual, used to detect pure-rotation degeneracy.
fn rotation_only_residual(pts1: &[Vector2<f64>], pts2: &[Vector2<f64>]) -> f64 {
    let bearings = |pts: &[Vector2<f64>]| -> Vec<Vector3<f64>> {
        pts.iter()
            .map(|p| Vector3::new(p[0], p[1], 1.0).normalize())
            .collect()
    };
    let b1 = bearings(pts1);
    let b2 = bearings(pts2);
    let mut cov = Matrix3::zeros();
    for (a, b) in b1.iter().zip(&b2) {
        cov += b * a.transpose();
    }
    let svd = nalgebra::SVD::new(cov, true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return f64::INFINITY;
    };
    let d = (u * v_t).determinant();
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    let r = u * s * v_t;
    let mut residuals: Vec<f64> = b1
        .iter()
        .zip(&b2)
        .map(|(a, b)| {
            let ra = r * a;
            ra.dot(b).clamp(-1.0, 1.0).acos()
        })
        .collect();
    residuals.sort_by(|a, b| a.total_cmp(b));
    residuals[residuals.len() / 2]
}

/// Geometric five-point decoder with RANSAC.
///
/// `matches` are pixel pairs `(p_first, p_second)`. The returned candidate is
/// the pose of the second frame expressed in the first frame with unit
/// translation and no scale; confidence is the inlier ratio.
pub fn five_point_ransac(
    matches: &[(Vector2<f64>, Vector2<f64>)],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
    rng: &mut Stream,
) -> Result<FivePointResult> {
    if matches.len() < 5 {
        return Err(Error::InsufficientMatches {
            got: matches.len(),
            need: 5,
        });
    }
    let pts1: Vec<Vector2<f64>> = matches
        .iter()
        .map(|(p, _)| k.normalize(p[0], p[1]))
        .collect();
    let pts2: Vec<Vector2<f64>> = matches
        .iter()
        .map(|(_, p)| k.normalize(p[0], p[1]))
        .collect();

    if rotation_only_residual(&pts1, &pts2) < cfg.pure_rotation_residual_rad {
        return Err(Error::DegenerateGeometry(
            "pure rotation: translation unobservable".into(),
        ));
    }

    let threshold = cfg.threshold_px / (0.5 * (k.fx + k.fy));
    let n = matches.len();

    // MSAC scoring: sum of squared Sampson distances truncated at the
    // threshold. Lower is better, and an exact model strictly beats a
    // perturbed one that happens to catch the same consensus set.
    let msac = |e: &Matrix3<f64>| -> f64 {
        (0..n)
            .map(|i| {
                let d = sampson_distance(e, &pts1[i], &pts2[i]);
                (d * d).min(threshold * threshold)
            })
            .sum()
    };

    let mut best_e: Option<Matrix3<f64>> = None;
    let mut best_score = f64::INFINITY;

    for _ in 0..cfg.iterations {
        // Five distinct indices.
        let mut idx = [0usize; 5];
        let mut filled = 0;
        while filled < 5 {
            let c = (rng.random::<u64>() as usize) % n;
            if !idx[..filled].contains(&c) {
                idx[filled] = c;
                filled += 1;
            }
        }
        let s1: Vec<Vector2<f64>> = idx.iter().map(|&i| pts1[i]).collect();
        let s2: Vec<Vector2<f64>> = idx.iter().map(|&i| pts2[i]).collect();
        let Ok(candidates) = essential_minimal(&s1, &s2) else {
            continue;
        };
        for e in candidates {
            let score = msac(&e);
            if score < best_score {
                best_score = score;
                best_e = Some(e);
            }
        }
    }

    let Some(e0) = best_e else {
        return Err(Error::DegenerateGeometry(
            "no essential-matrix candidate survived".into(),
        ));
    };
    let count = |e: &Matrix3<f64>| -> usize {
        (0..n)
            .filter(|&i| sampson_distance(e, &pts1[i], &pts2[i]) < threshold)
            .count()
    };
    let inlier_ratio = count(&e0) as f64 / n as f64;
    if inlier_ratio < cfg.min_inlier_ratio {
        return Err(Error::DegenerateGeometry(format!(
            "inlier ratio {inlier_ratio:.3} below {}",
            cfg.min_inlier_ratio
        )));
    }

    let inliers: Vec<usize> = (0..n)
        .filter(|&i| sampson_distance(&e0, &pts1[i], &pts2[i]) < threshold)
        .collect();

    // Linear re-estimation on all inliers, projected back onto the essential
    // manifold; adopted only when it strictly improves the robust score.
    let refined = refit_essential(&pts1, &pts2, &inliers).unwrap_or(e0);
    let e_final = if msac(&refined) < best_score {
        refined
    } else {
        e0
    };
    let inliers: Vec<usize> = (0..n)
        .filter(|&i| sampson_distance(&e_final, &pts1[i], &pts2[i]) < threshold)
        .collect();
    let confidence = inliers.len() as f64 / n as f64;

    let in1: Vec<Vector2<f64>> = inliers.iter().map(|&i| pts1[i]).collect();
    let in2: Vec<Vector2<f64>> = inliers.iter().map(|&i| pts2[i]).collect();
    let (r, t) = decompose_essential(&e_final, &in1, &in2, cfg.min_parallax_rad)?;

    // (R, t) maps frame-1 coordinates to frame-2; store the pose of frame 2
    // in frame 1 (the edge measurement convention).
    let r_q = UnitQuaternion::from_matrix(&r);
    let rotation = r_q.inverse();
    let t_norm = -(rotation * t);

    Ok(FivePointResult {
        candidate: EgoMotionCandidate {
            rotation,
            t_norm: t_norm.normalize(),
            scale: None,
            confidence,
        },
        inliers,
    })
}

fn refit_essential(
    pts1: &[Vector2<f64>],
    pts2: &[Vector2<f64>],
    inliers: &[usize],
) -> Option<Matrix3<f64>> {
    if inliers.len() < 8 {
        return None;
    }
    let rows = inliers.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (r, &i) in inliers.iter().enumerate() {
        let (p1, p2) = (pts1[i], pts2[i]);
        let row = [
            p2[0] * p1[0],
            p2[0] * p1[1],
            p2[0],
            p2[1] * p1[0],
            p2[1] * p1[1],
            p2[1],
            p1[0],
            p1[1],
            1.0,
        ];
        for (c, v) in row.iter().enumerate() {
            a[(r, c)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let row = v_t.row(v_t.nrows() - 1);
    let e = Matrix3::new(
        row[0], row[1], row[2], row[3], row[4], row[5], row[6], row[7], row[8],
    );
    // Project onto the essential manifold: singular values (1, 1, 0).
    let svd = nalgebra::SVD::new(e, true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
    Some(u * s * v_t)
}
