//! Linear-Gaussian inference for the per-step input.
//!
//! Given Gaussian priors on each scalar input `u_k ~ N(m_k, V_k)` and
//! weighted Gaussian observations of the outputs, [`smooth`] computes the
//! exact posterior mean and variance of every `u_k` in time linear in the
//! horizon. The implementation is a forward covariance (Kalman) filter paired
//! with a backward dual recursion that carries the quantities `(xi, W)` from
//! which the input moments follow directly; no matrix inversion is performed.
//! Vector observations are processed as L sequential scalar updates, which
//! keeps the inversion-free property for L > 1.
//!
//! [`batch_posterior`] solves the same problem by dense linear algebra on the
//! stacked input-to-output map. It exists as an independent oracle for
//! testing the recursions and is guarded to small horizons.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{LtiModel, Target};

/// Gaussian prior on each scalar input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPrior {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl InputPrior {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::Config(format!(
                "input prior mean/variance lengths differ: {} vs {}",
                mean.len(),
                var.len()
            )));
        }
        if let Some(i) = var.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!(
                "input prior variance at step {} must be finite and > 0",
                i + 1
            )));
        }
        if let Some(i) = mean.iter().position(|m| !m.is_finite()) {
            return Err(Error::Config(format!(
                "input prior mean at step {} is not finite",
                i + 1
            )));
        }
        Ok(InputPrior { mean, var })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Posterior moments of each scalar input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPosterior {
    pub u_hat: Vec<f64>,
    pub v_u: Vec<f64>,
}

/// Per-step observation specification: target vector and effective variance.
///
/// A step with weight zero carries no observation (`r = None`); a positive
/// weight `w` turns into the effective per-component variance `r = s2 / w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsSpec {
    pub y: Vec<DVector<f64>>,
    pub r: Vec<Option<f64>>,
}

impl ObsSpec {
    pub fn new(target: &Target, s2: f64) -> Result<Self> {
        if !(s2 > 0.0) || !s2.is_finite() {
            return Err(Error::Config(format!("s2 must be finite and > 0, got {s2}")));
        }
        target.validate()?;
        let r = target
            .weights
            .iter()
            .map(|&w| if w > 0.0 { Some(s2 / w) } else { None })
            .collect();
        Ok(ObsSpec {
            y: target.values.clone(),
            r,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

fn check_dims(model: &LtiModel, obs: &ObsSpec, prior: &InputPrior) -> Result<usize> {
    model.validate()?;
    let k = prior.len();
    if k == 0 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    if obs.len() != k || obs.r.len() != k {
        return Err(Error::Config(format!(
            "observation spec has {} steps but prior has {}",
            obs.len(),
            k
        )));
    }
    let l = model.output_dim();
    for (i, y) in obs.y.iter().enumerate() {
        if y.len() != l {
            return Err(Error::Config(format!(
                "observation at step {} has dimension {}, expected {}",
                i + 1,
                y.len(),
                l
            )));
        }
    }
    Ok(k)
}

/// Pre-update filter moments stored for the backward pass, flattened into
/// contiguous buffers (one record per processed scalar observation).
struct ForwardPass {
    /// `means[rec*n .. rec*n+n]` is the pre-update state mean of record `rec`.
    means: Vec<f64>,
    /// `covs[rec*n*n ..]` is the pre-update covariance in row-major order
    /// (symmetric, so the storage order does not matter).
    covs: Vec<f64>,
    /// Cumulative record count; `rec_end[k]` is the total after step `k+1`.
    rec_end: Vec<usize>,
    log_evidence: f64,
}

/// Model data unpacked into plain buffers for the recursions.
/// `a_rm` is the transition matrix in row-major order.
struct Unpacked {
    n: usize,
    a_rm: Vec<f64>,
    b: Vec<f64>,
    drift: Vec<f64>,
    x0: Vec<f64>,
    c_rows: Vec<Vec<f64>>,
}

impl Unpacked {
    fn new(model: &LtiModel) -> Self {
        let n = model.state_dim();
        let l = model.output_dim();
        let mut a_rm = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a_rm[i * n + j] = model.a[(i, j)];
            }
        }
        Unpacked {
            n,
            a_rm,
            b: model.b.iter().copied().collect(),
            drift: model.drift.iter().copied().collect(),
            x0: model.x0.iter().copied().collect(),
            c_rows: (0..l)
                .map(|j| model.c.row(j).iter().copied().collect())
                .collect(),
        }
    }

    fn a_fixed<const N: usize>(&self) -> [[f64; N]; N] {
        let mut a = [[0.0; N]; N];
        for i in 0..N {
            a[i].copy_from_slice(&self.a_rm[i * N..(i + 1) * N]);
        }
        a
    }

    fn vec_fixed<const N: usize>(v: &[f64]) -> [f64; N] {
        let mut out = [0.0; N];
        out.copy_from_slice(v);
        out
    }
}

/// The forward covariance filter. State dimensions up to four run on
/// stack-allocated fixed-size arrays; larger models fall back to the
/// general path. Both paths compute identical quantities.
fn forward_pass(
    model: &LtiModel,
    obs: &ObsSpec,
    prior: &InputPrior,
    k_total: usize,
) -> Result<ForwardPass> {
    let un = Unpacked::new(model);
    match un.n {
        1 => forward_fixed::<1>(&un, obs, prior, k_total),
        2 => forward_fixed::<2>(&un, obs, prior, k_total),
        3 => forward_fixed::<3>(&un, obs, prior, k_total),
        4 => forward_fixed::<4>(&un, obs, prior, k_total),
        _ => forward_dyn(&un, obs, prior, k_total),
    }
}

fn forward_fixed<const N: usize>(
    un: &Unpacked,
    obs: &ObsSpec,
    prior: &InputPrior,
    k_total: usize,
) -> Result<ForwardPass> {
    let a = un.a_fixed::<N>();
    let b = Unpacked::vec_fixed::<N>(&un.b);
    let drift = Unpacked::vec_fixed::<N>(&un.drift);
    let c_rows: Vec<[f64; N]> = un.c_rows.iter().map(|r| Unpacked::vec_fixed::<N>(r)).collect();

    let mut m = Unpacked::vec_fixed::<N>(&un.x0);
    let mut p = [[0.0; N]; N]; // x0 is known exactly
    let mut m_new = [0.0; N];
    let mut p_tmp = [[0.0; N]; N];
    let mut pc = [0.0; N];
    let mut kgain = [0.0; N];

    let l = c_rows.len();
    let obs_count = obs.r.iter().filter(|r| r.is_some()).count();
    let mut means = Vec::with_capacity(obs_count * l * N);
    let mut covs = Vec::with_capacity(obs_count * l * N * N);
    let mut rec_end = Vec::with_capacity(k_total);
    let mut records = 0usize;
    let mut log_evidence = 0.0;

    for k in 0..k_total {
        // predict: m = A m + B m_u + d
        let mu = prior.mean[k];
        for i in 0..N {
            let mut acc = drift[i] + b[i] * mu;
            for t in 0..N {
                acc += a[i][t] * m[t];
            }
            m_new[i] = acc;
        }
        m = m_new;

        // P = A P A' + V_u B B', symmetric by construction
        for i in 0..N {
            for j in 0..N {
                let mut acc = 0.0;
                for t in 0..N {
                    acc += a[i][t] * p[t][j];
                }
                p_tmp[i][j] = acc;
            }
        }
        let vu = prior.var[k];
        for i in 0..N {
            for j in 0..=i {
                let mut acc = vu * b[i] * b[j];
                for t in 0..N {
                    acc += p_tmp[i][t] * a[j][t];
                }
                p[i][j] = acc;
                p[j][i] = acc;
            }
        }

        if let Some(r) = obs.r[k] {
            let y = &obs.y[k];
            for (j, crow) in c_rows.iter().enumerate() {
                means.extend_from_slice(&m);
                for row in &p {
                    covs.extend_from_slice(row);
                }
                records += 1;

                // pc = P c, s = c'P c + r, e = y - c'm
                let mut s = r;
                let mut e = y[j];
                for i in 0..N {
                    let mut acc = 0.0;
                    for t in 0..N {
                        acc += p[i][t] * crow[t];
                    }
                    pc[i] = acc;
                    s += crow[i] * acc;
                    e -= crow[i] * m[i];
                }
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::Numeric {
                        step: k + 1,
                        detail: format!("innovation variance {s} in output component {}", j + 1),
                    });
                }
                log_evidence -= 0.5 * ((2.0 * std::f64::consts::PI * s).ln() + e * e / s);
                for i in 0..N {
                    kgain[i] = pc[i] / s;
                    m[i] += kgain[i] * e;
                }
                for i in 0..N {
                    for t in 0..=i {
                        let v = 0.5 * (p[i][t] - kgain[i] * pc[t] + p[t][i] - kgain[t] * pc[i]);
                        p[i][t] = v;
                        p[t][i] = v;
                    }
                }
            }
        }
        rec_end.push(records);

        if !m.iter().all(|v| v.is_finite()) || !p.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::Numeric {
                step: k + 1,
                detail: "non-finite filtered state".into(),
            });
        }
    }
    Ok(ForwardPass {
        means,
        covs,
        rec_end,
        log_evidence,
    })
}

fn forward_dyn(
    un: &Unpacked,
    obs: &ObsSpec,
    prior: &InputPrior,
    k_total: usize,
) -> Result<ForwardPass> {
    let n = un.n;
    let a_rm = &un.a_rm;
    let b = &un.b;
    let drift = &un.drift;
    let c_rows = &un.c_rows;
    let l = c_rows.len();

    let mut m = un.x0.clone();
    let mut p = vec![0.0; n * n]; // x0 is known exactly
    let mut m_new = vec![0.0; n];
    let mut p_tmp = vec![0.0; n * n];
    let mut pc = vec![0.0; n];
    let mut kgain = vec![0.0; n];

    let obs_count = obs.r.iter().filter(|r| r.is_some()).count();
    let mut means = Vec::with_capacity(obs_count * l * n);
    let mut covs = Vec::with_capacity(obs_count * l * n * n);
    let mut rec_end = Vec::with_capacity(k_total);
    let mut records = 0usize;
    let mut log_evidence = 0.0;

    for k in 0..k_total {
        // predict: m = A m + B m_u + d
        let mu = prior.mean[k];
        for i in 0..n {
            let mut acc = drift[i] + b[i] * mu;
            for t in 0..n {
                acc += a_rm[i * n + t] * m[t];
            }
            m_new[i] = acc;
        }
        m.copy_from_slice(&m_new);

        // P = A P A' + V_u B B', symmetric by construction
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for t in 0..n {
                    acc += a_rm[i * n + t] * p[t * n + j];
                }
                p_tmp[i * n + j] = acc;
            }
        }
        let vu = prior.var[k];
        for i in 0..n {
            for j in 0..=i {
                let mut acc = vu * b[i] * b[j];
                for t in 0..n {
                    acc += p_tmp[i * n + t] * a_rm[j * n + t];
                }
                p[i * n + j] = acc;
                p[j * n + i] = acc;
            }
        }

        if let Some(r) = obs.r[k] {
            let y = &obs.y[k];
            for (j, crow) in c_rows.iter().enumerate() {
                means.extend_from_slice(&m);
                covs.extend_from_slice(&p);
                records += 1;

                // pc = P c, s = c'P c + r, e = y - c'm
                let mut s = r;
                let mut e = y[j];
                for i in 0..n {
                    let mut acc = 0.0;
                    for t in 0..n {
                        acc += p[i * n + t] * crow[t];
                    }
                    pc[i] = acc;
                    s += crow[i] * acc;
                    e -= crow[i] * m[i];
                }
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::Numeric {
                        step: k + 1,
                        detail: format!("innovation variance {s} in output component {}", j + 1),
                    });
                }
                log_evidence -= 0.5 * ((2.0 * std::f64::consts::PI * s).ln() + e * e / s);
                for i in 0..n {
                    kgain[i] = pc[i] / s;
                    m[i] += kgain[i] * e;
                }
                for i in 0..n {
                    for t in 0..=i {
                        let v = 0.5
                            * (p[i * n + t] - kgain[i] * pc[t] + p[t * n + i]
                                - kgain[t] * pc[i]);
                        p[i * n + t] = v;
                        p[t * n + i] = v;
                    }
                }
            }
        }
        rec_end.push(records);

        if !m.iter().all(|v| v.is_finite()) || !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric {
                step: k + 1,
                detail: "non-finite filtered state".into(),
            });
        }
    }
    Ok(ForwardPass {
        means,
        covs,
        rec_end,
        log_evidence,
    })
}

/// Computes the posterior mean and variance of every input by the
/// forward-backward recursion. Runtime and memory are linear in the horizon.
pub fn smooth(model: &LtiModel, obs: &ObsSpec, prior: &InputPrior) -> Result<InputPosterior> {
    smooth_with_evidence(model, obs, prior).map(|(post, _)| post)
}

/// Log of the Gaussian marginal of the observations under the input prior,
/// accumulated as the prediction-error decomposition of the forward pass.
/// Skipped observations contribute zero.
pub fn log_evidence(model: &LtiModel, obs: &ObsSpec, prior: &InputPrior) -> Result<f64> {
    let k_total = check_dims(model, obs, prior)?;
    Ok(forward_pass(model, obs, prior, k_total)?.log_evidence)
}

/// [`smooth`] and [`log_evidence`] in a single forward-backward sweep.
pub fn smooth_with_evidence(
    model: &LtiModel,
    obs: &ObsSpec,
    prior: &InputPrior,
) -> Result<(InputPosterior, f64)> {
    let k_total = check_dims(model, obs, prior)?;
    let un = Unpacked::new(model);
    let fwd = match un.n {
        1 => forward_fixed::<1>(&un, obs, prior, k_total),
        2 => forward_fixed::<2>(&un, obs, prior, k_total),
        3 => forward_fixed::<3>(&un, obs, prior, k_total),
        4 => forward_fixed::<4>(&un, obs, prior, k_total),
        _ => forward_dyn(&un, obs, prior, k_total),
    }?;
    let (u_hat, v_u) = match un.n {
        1 => backward_fixed::<1>(&un, obs, prior, &fwd, k_total),
        2 => backward_fixed::<2>(&un, obs, prior, &fwd, k_total),
        3 => backward_fixed::<3>(&un, obs, prior, &fwd, k_total),
        4 => backward_fixed::<4>(&un, obs, prior, &fwd, k_total),
        _ => backward_dyn(&un, obs, prior, &fwd, k_total),
    }?;
    Ok((InputPosterior { u_hat, v_u }, fwd.log_evidence))
}

/// Backward dual recursion on fixed-size arrays. `(xi, w)` are the duals on
/// the pre-observation edge of the current step once its observations have
/// been reversed; the input moments follow from projecting them onto `B`.
fn backward_fixed<const N: usize>(
    un: &Unpacked,
    obs: &ObsSpec,
    prior: &InputPrior,
    fwd: &ForwardPass,
    k_total: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let a = un.a_fixed::<N>();
    let b = Unpacked::vec_fixed::<N>(&un.b);
    let c_rows: Vec<[f64; N]> = un.c_rows.iter().map(|r| Unpacked::vec_fixed::<N>(r)).collect();
    let l = c_rows.len();

    let mut xi = [0.0; N];
    let mut w = [[0.0; N]; N];
    let mut pc = [0.0; N];
    let mut kgain = [0.0; N];
    let mut wk = [0.0; N];
    let mut sv = [0.0; N];
    let mut sm = [[0.0; N]; N];

    let mut u_hat = vec![0.0; k_total];
    let mut v_u = vec![0.0; k_total];

    for k in (0..k_total).rev() {
        if let Some(r) = obs.r[k] {
            let y = &obs.y[k];
            let rec_base = if k == 0 { 0 } else { fwd.rec_end[k - 1] };
            // reverse the scalar updates in the opposite of filter order
            for j in (0..l).rev() {
                let rec = rec_base + j;
                let m_pre = &fwd.means[rec * N..rec * N + N];
                let p_pre = &fwd.covs[rec * N * N..(rec + 1) * N * N];
                let crow = &c_rows[j];

                let mut s = r;
                let mut e = y[j];
                for i in 0..N {
                    let mut acc = 0.0;
                    for t in 0..N {
                        acc += p_pre[i * N + t] * crow[t];
                    }
                    pc[i] = acc;
                    s += crow[i] * acc;
                    e -= crow[i] * m_pre[i];
                }
                for i in 0..N {
                    kgain[i] = pc[i] / s;
                }

                // xi <- F' xi - c e/s  with  F = I - kgain c'
                let mut t_dot = 0.0;
                for i in 0..N {
                    t_dot += kgain[i] * xi[i];
                }
                let coeff = -t_dot - e / s;
                for i in 0..N {
                    xi[i] += coeff * crow[i];
                }

                // W <- F' W F + c c'/s
                let mut q = 0.0;
                for i in 0..N {
                    let mut acc = 0.0;
                    for t in 0..N {
                        acc += w[i][t] * kgain[t];
                    }
                    wk[i] = acc;
                    q += kgain[i] * acc;
                }
                let qq = q + 1.0 / s;
                for i in 0..N {
                    for t in 0..N {
                        w[i][t] += qq * crow[i] * crow[t] - crow[i] * wk[t] - wk[i] * crow[t];
                    }
                }
            }
        }

        // input moments from the duals on the pre-observation edge
        let mut bt_xi = 0.0;
        let mut bt_w_b = 0.0;
        for i in 0..N {
            bt_xi += b[i] * xi[i];
            let mut acc = 0.0;
            for t in 0..N {
                acc += w[i][t] * b[t];
            }
            bt_w_b += b[i] * acc;
        }
        u_hat[k] = prior.mean[k] - prior.var[k] * bt_xi;
        v_u[k] = (prior.var[k] - prior.var[k] * prior.var[k] * bt_w_b).max(0.0);
        if !u_hat[k].is_finite() || !v_u[k].is_finite() {
            return Err(Error::Numeric {
                step: k + 1,
                detail: "non-finite input posterior".into(),
            });
        }

        // propagate through the dynamics: xi <- A' xi, W <- A' W A
        for i in 0..N {
            let mut acc = 0.0;
            for t in 0..N {
                acc += a[t][i] * xi[t];
            }
            sv[i] = acc;
        }
        xi = sv;
        for i in 0..N {
            for j in 0..N {
                let mut acc = 0.0;
                for t in 0..N {
                    acc += a[t][i] * w[t][j];
                }
                sm[i][j] = acc;
            }
        }
        for i in 0..N {
            for j in 0..=i {
                let mut acc_ij = 0.0;
                let mut acc_ji = 0.0;
                for t in 0..N {
                    acc_ij += sm[i][t] * a[t][j];
                    acc_ji += sm[j][t] * a[t][i];
                }
                let v = 0.5 * (acc_ij + acc_ji);
                w[i][j] = v;
                w[j][i] = v;
            }
        }
    }

    Ok((u_hat, v_u))
}

fn backward_dyn(
    un: &Unpacked,
    obs: &ObsSpec,
    prior: &InputPrior,
    fwd: &ForwardPass,
    k_total: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = un.n;
    let a_rm = &un.a_rm;
    let b = &un.b;
    let c_rows = &un.c_rows;
    let l = c_rows.len();

    let mut xi = vec![0.0; n];
    let mut w = vec![0.0; n * n];
    let mut pc = vec![0.0; n];
    let mut kgain = vec![0.0; n];
    let mut wk = vec![0.0; n];
    let mut sv = vec![0.0; n];
    let mut sm = vec![0.0; n * n];

    let mut u_hat = vec![0.0; k_total];
    let mut v_u = vec![0.0; k_total];

    for k in (0..k_total).rev() {
        if let Some(r) = obs.r[k] {
            let y = &obs.y[k];
            let rec_base = if k == 0 { 0 } else { fwd.rec_end[k - 1] };
            // reverse the scalar updates in the opposite of filter order
            for j in (0..l).rev() {
                let rec = rec_base + j;
                let m_pre = &fwd.means[rec * n..rec * n + n];
                let p_pre = &fwd.covs[rec * n * n..(rec + 1) * n * n];
                let crow = &c_rows[j];

                let mut s = r;
                let mut e = y[j];
                for i in 0..n {
                    let mut acc = 0.0;
                    for t in 0..n {
                        acc += p_pre[i * n + t] * crow[t];
                    }
                    pc[i] = acc;
                    s += crow[i] * acc;
                    e -= crow[i] * m_pre[i];
                }
                for i in 0..n {
                    kgain[i] = pc[i] / s;
                }

                // xi <- F' xi - c e/s  with  F = I - kgain c'
                let mut t_dot = 0.0;
                for i in 0..n {
                    t_dot += kgain[i] * xi[i];
                }
                let coeff = -t_dot - e / s;
                for i in 0..n {
                    xi[i] += coeff * crow[i];
                }

                // W <- F' W F + c c'/s
                let mut q = 0.0;
                for i in 0..n {
                    let mut acc = 0.0;
                    for t in 0..n {
                        acc += w[i * n + t] * kgain[t];
                    }
                    wk[i] = acc;
                    q += kgain[i] * acc;
                }
                let qq = q + 1.0 / s;
                for i in 0..n {
                    for t in 0..n {
                        w[i * n + t] +=
                            qq * crow[i] * crow[t] - crow[i] * wk[t] - wk[i] * crow[t];
                    }
                }
            }
        }

        // input moments from the duals on the pre-observation edge
        let mut bt_xi = 0.0;
        let mut bt_w_b = 0.0;
        for i in 0..n {
            bt_xi += b[i] * xi[i];
            let mut acc = 0.0;
            for t in 0..n {
                acc += w[i * n + t] * b[t];
            }
            bt_w_b += b[i] * acc;
        }
        u_hat[k] = prior.mean[k] - prior.var[k] * bt_xi;
        v_u[k] = (prior.var[k] - prior.var[k] * prior.var[k] * bt_w_b).max(0.0);
        if !u_hat[k].is_finite() || !v_u[k].is_finite() {
            return Err(Error::Numeric {
                step: k + 1,
                detail: "non-finite input posterior".into(),
            });
        }

        // propagate through the dynamics: xi <- A' xi, W <- A' W A
        for i in 0..n {
            let mut acc = 0.0;
            for t in 0..n {
                acc += a_rm[t * n + i] * xi[t];
            }
            sv[i] = acc;
        }
        xi.copy_from_slice(&sv);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for t in 0..n {
                    acc += a_rm[t * n + i] * w[t * n + j];
                }
                sm[i * n + j] = acc;
            }
        }
        for i in 0..n {
            for j in 0..=i {
                let mut acc_ij = 0.0;
                let mut acc_ji = 0.0;
                for t in 0..n {
                    acc_ij += sm[i * n + t] * a_rm[t * n + j];
                    acc_ji += sm[j * n + t] * a_rm[t * n + i];
                }
                let v = 0.5 * (acc_ij + acc_ji);
                w[i * n + j] = v;
                w[j * n + i] = v;
            }
        }
    }

    Ok((u_hat, v_u))
}

/// Maximum horizon accepted by [`batch_posterior`].
pub const BATCH_GUARD: usize = 200;

/// Stacked affine response `y = G u + g0` of the full horizon, with one row
/// block of `L` outputs per step.
pub(crate) fn batch_linear_map(model: &LtiModel, k_total: usize) -> (DMatrix<f64>, DVector<f64>) {
    let l = model.output_dim();
    let mut g = DMatrix::<f64>::zeros(k_total * l, k_total);
    let mut g0 = DVector::<f64>::zeros(k_total * l);

    // drift and initial-state response
    let mut x = model.x0.clone();
    for k in 0..k_total {
        x = &model.a * &x + &model.drift;
        g0.rows_mut(k * l, l).copy_from(&(&model.c * &x));
    }
    // impulse responses: h_m = C A^m B fills the m-th subdiagonal block
    let mut h = model.b.clone();
    for m in 0..k_total {
        let ch = &model.c * &h;
        for j in 0..(k_total - m) {
            g.view_mut(((j + m) * l, j), (l, 1)).copy_from(&ch);
        }
        h = &model.a * &h;
    }
    (g, g0)
}

/// Dense-oracle posterior over the whole input vector.
///
/// Builds the stacked map `y = G u + g0` and solves the whitened
/// least-squares system (observation rows scaled by `1/sqrt(r)`, prior rows
/// by `1/sqrt(V)`) by QR, which avoids squaring the condition number of the
/// normal equations. The marginal variances come from the inverse triangular
/// factor. Refuses horizons above [`BATCH_GUARD`].
pub fn batch_posterior(
    model: &LtiModel,
    obs: &ObsSpec,
    prior: &InputPrior,
) -> Result<InputPosterior> {
    let k_total = check_dims(model, obs, prior)?;
    if k_total > BATCH_GUARD {
        return Err(Error::Guard(format!(
            "batch_posterior horizon {k_total} exceeds guard {BATCH_GUARD}"
        )));
    }
    let l = model.output_dim();
    let (g, g0) = batch_linear_map(model, k_total);

    let obs_rows: usize = obs.r.iter().filter(|r| r.is_some()).count() * l;
    let mut stacked = DMatrix::<f64>::zeros(obs_rows + k_total, k_total);
    let mut rhs = DVector::<f64>::zeros(obs_rows + k_total);
    let mut row_idx = 0;
    for k in 0..k_total {
        if let Some(r) = obs.r[k] {
            let scale = 1.0 / r.sqrt();
            for j in 0..l {
                for kk in 0..k_total {
                    stacked[(row_idx, kk)] = scale * g[(k * l + j, kk)];
                }
                rhs[row_idx] = scale * (obs.y[k][j] - g0[k * l + j]);
                row_idx += 1;
            }
        }
    }
    for k in 0..k_total {
        let scale = 1.0 / prior.var[k].sqrt();
        stacked[(row_idx + k, k)] = scale;
        rhs[row_idx + k] = scale * prior.mean[k];
    }

    let qr = stacked.qr();
    let r_mat = qr.r();
    let mut qtb = rhs;
    qr.q_tr_mul(&mut qtb);
    let mean = r_mat
        .solve_upper_triangular(&qtb.rows(0, k_total).into_owned())
        .ok_or_else(|| Error::Numeric {
            step: 0,
            detail: "stacked least-squares system is rank deficient".into(),
        })?;

    // posterior covariance is (R'R)^-1 = R^-1 R^-T, so the marginal
    // variances are the squared row norms of R^-1
    let r_inv = r_mat
        .solve_upper_triangular(&DMatrix::<f64>::identity(k_total, k_total))
        .ok_or_else(|| Error::Numeric {
            step: 0,
            detail: "triangular factor is singular".into(),
        })?;
    let v_u = (0..k_total)
        .map(|k| (0..k_total).map(|j| r_inv[(k, j)] * r_inv[(k, j)]).sum())
        .collect();

    Ok(InputPosterior {
        u_hat: mean.iter().copied().collect(),
        v_u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Target;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn integrator() -> LtiModel {
        LtiModel::without_drift(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[0.0]),
        )
        .unwrap()
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        n_max: usize,
        l_max: usize,
        k_max: usize,
    ) -> (LtiModel, ObsSpec, InputPrior) {
        let n = rng.gen_range(1..=n_max);
        let l = rng.gen_range(1..=l_max);
        let k = rng.gen_range(1..=k_max);
        // no stability constraint: moduli above 1 are allowed
        let scale = rng.gen_range(0.3..1.08);
        let a = DMatrix::from_fn(n, n, |_, _| scale * rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let c = DMatrix::from_fn(l, n, |_, _| rng.gen_range(-1.0..1.0));
        let d = DVector::from_fn(n, |_, _| rng.gen_range(-0.3..0.3));
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let model = LtiModel::new(a, b, c, d, x0).unwrap();

        let values = (0..k)
            .map(|_| DVector::from_fn(l, |_, _| rng.gen_range(-2.0..2.0)))
            .collect();
        let weights: Vec<f64> = (0..k)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    0.0
                } else {
                    rng.gen_range(0.1..3.0)
                }
            })
            .collect();
        let s2 = rng.gen_range(0.01..2.0);
        let r = weights
            .iter()
            .map(|&w| if w > 0.0 { Some(s2 / w) } else { None })
            .collect();
        let obs = ObsSpec { y: values, r };

        let mean = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let var = (0..k).map(|_| rng.gen_range(0.05..4.0)).collect();
        let prior = InputPrior::new(mean, var).unwrap();
        (model, obs, prior)
    }

    #[test]
    fn single_step_scalar_update() {
        let model = integrator();
        let target = Target::uniform(vec![DVector::from_row_slice(&[1.0])]).unwrap();
        let obs = ObsSpec::new(&target, 1.0).unwrap();
        let prior = InputPrior::new(vec![0.0], vec![1.0]).unwrap();
        let post = smooth(&model, &obs, &prior).unwrap();
        assert_abs_diff_eq!(post.u_hat[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(post.v_u[0], 0.5, epsilon = 1e-12);

        // evidence is the one-dimensional marginal N(1; 0, V + r)
        let le = log_evidence(&model, &obs, &prior).unwrap();
        let expected = -0.5 * ((2.0 * std::f64::consts::PI * 2.0).ln() + 1.0 / 2.0);
        assert_abs_diff_eq!(le, expected, epsilon = 1e-12);
    }

    #[test]
    fn no_observations_returns_prior() {
        let model = integrator();
        let k = 5;
        let obs = ObsSpec {
            y: vec![DVector::from_row_slice(&[0.0]); k],
            r: vec![None; k],
        };
        let prior = InputPrior::new(
            vec![0.3, -0.2, 0.8, 0.0, 1.4],
            vec![0.5, 1.0, 2.0, 0.25, 1.5],
        )
        .unwrap();
        let post = smooth(&model, &obs, &prior).unwrap();
        for k in 0..k {
            assert_abs_diff_eq!(post.u_hat[k], prior.mean[k], epsilon = 1e-14);
            assert_abs_diff_eq!(post.v_u[k], prior.var[k], epsilon = 1e-14);
        }
        assert_abs_diff_eq!(log_evidence(&model, &obs, &prior).unwrap(), 0.0);
    }

    #[test]
    fn matches_batch_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..60 {
            let (model, obs, prior) = random_instance(&mut rng, 5, 2, 12);
            let fast = smooth(&model, &obs, &prior).unwrap();
            let dense = batch_posterior(&model, &obs, &prior).unwrap();
            for k in 0..prior.len() {
                let tol = 1e-8 * (1.0 + dense.u_hat[k].abs());
                assert!(
                    (fast.u_hat[k] - dense.u_hat[k]).abs() <= tol,
                    "mean mismatch at step {}: {} vs {}",
                    k + 1,
                    fast.u_hat[k],
                    dense.u_hat[k]
                );
                let tol = 1e-8 * (1.0 + dense.v_u[k].abs());
                assert!(
                    (fast.v_u[k] - dense.v_u[k]).abs() <= tol,
                    "variance mismatch at step {}: {} vs {}",
                    k + 1,
                    fast.v_u[k],
                    dense.v_u[k]
                );
            }
        }
    }

    #[test]
    fn posterior_variance_bounded_by_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let (model, obs, prior) = random_instance(&mut rng, 5, 2, 20);
            let post = smooth(&model, &obs, &prior).unwrap();
            for k in 0..prior.len() {
                assert!(post.v_u[k] >= 0.0);
                assert!(
                    post.v_u[k] <= prior.var[k] + 1e-10,
                    "step {}: posterior {} exceeds prior {}",
                    k + 1,
                    post.v_u[k],
                    prior.var[k]
                );
            }
        }
    }

    #[test]
    fn integrator_batch_map_is_cumulative_sum() {
        let (g, g0) = batch_linear_map(&integrator(), 3);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if j <= i { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(g[(i, j)], expected);
            }
            assert_abs_diff_eq!(g0[i], 0.0);
        }
    }

    #[test]
    fn batch_flat_prior_is_least_squares() {
        // K = N with invertible stacked map: the posterior mean solves the
        // system exactly when the prior carries no information
        let model = integrator();
        let k = 3;
        let target = Target::uniform(vec![
            DVector::from_row_slice(&[0.7]),
            DVector::from_row_slice(&[0.2]),
            DVector::from_row_slice(&[1.1]),
        ])
        .unwrap();
        let obs = ObsSpec::new(&target, 0.5).unwrap();
        let prior = InputPrior::new(vec![0.0; k], vec![1e10; k]).unwrap();
        let post = batch_posterior(&model, &obs, &prior).unwrap();
        // cumulative sums of u must equal the targets: u = (0.7, -0.5, 0.9)
        assert_abs_diff_eq!(post.u_hat[0], 0.7, epsilon = 1e-6);
        assert_abs_diff_eq!(post.u_hat[1], -0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(post.u_hat[2], 0.9, epsilon = 1e-6);
    }

    #[test]
    fn evidence_matches_dense_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..25 {
            let (model, obs, prior) = random_instance(&mut rng, 3, 2, 8);
            let le = log_evidence(&model, &obs, &prior).unwrap();

            // dense construction: the observed components are jointly
            // N(G m + g0, G diag(V) G' + R)
            let k = prior.len();
            let l = model.output_dim();
            let (g, g0) = batch_linear_map(&model, k);
            let mut rows = Vec::new();
            for step in 0..k {
                if obs.r[step].is_some() {
                    for j in 0..l {
                        rows.push(step * l + j);
                    }
                }
            }
            if rows.is_empty() {
                assert_abs_diff_eq!(le, 0.0);
                continue;
            }
            let m = rows.len();
            let mut gw = DMatrix::<f64>::zeros(m, k);
            let mut resid = DVector::<f64>::zeros(m);
            let mut s = DMatrix::<f64>::zeros(m, m);
            for (i, &row) in rows.iter().enumerate() {
                gw.row_mut(i).copy_from(&g.row(row));
                let step = row / l;
                let j = row % l;
                let mut pred = g0[row];
                for kk in 0..k {
                    pred += g[(row, kk)] * prior.mean[kk];
                }
                resid[i] = obs.y[step][j] - pred;
                s[(i, i)] = obs.r[step].unwrap();
            }
            for i in 0..m {
                for jj in 0..m {
                    let mut acc = 0.0;
                    for kk in 0..k {
                        acc += gw[(i, kk)] * prior.var[kk] * gw[(jj, kk)];
                    }
                    s[(i, jj)] += acc;
                }
            }
            let chol = nalgebra::Cholesky::new(s.clone()).unwrap();
            let alpha = chol.solve(&resid);
            let logdet: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
            let dense = -0.5
                * (m as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + resid.dot(&alpha));
            assert_abs_diff_eq!(le, dense, epsilon = 1e-7 * (1.0 + dense.abs()));
        }
    }

    #[test]
    fn batch_guard_enforced() {
        let model = integrator();
        let k = BATCH_GUARD + 1;
        let target = Target::uniform(vec![DVector::from_row_slice(&[0.0]); k]).unwrap();
        let obs = ObsSpec::new(&target, 1.0).unwrap();
        let prior = InputPrior::new(vec![0.0; k], vec![1.0; k]).unwrap();
        match batch_posterior(&model, &obs, &prior) {
            Err(Error::Guard(_)) => {}
            other => panic!("expected guard error, got {other:?}"),
        }
    }

    #[test]
    fn overflow_reports_step_index() {
        // exploding dynamics overflow the covariance within a few steps
        let model = LtiModel::without_drift(
            DMatrix::from_row_slice(1, 1, &[1e200]),
            DVector::from_row_slice(&[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[1.0]),
        )
        .unwrap();
        let k = 6;
        let target = Target::uniform(vec![DVector::from_row_slice(&[0.0]); k]).unwrap();
        let obs = ObsSpec::new(&target, 1.0).unwrap();
        let prior = InputPrior::new(vec![0.0; k], vec![1.0; k]).unwrap();
        match smooth(&model, &obs, &prior) {
            Err(Error::Numeric { step, .. }) => assert!(step >= 1 && step <= k),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn prior_length_mismatch_rejected() {
        let model = integrator();
        let target = Target::uniform(vec![DVector::from_row_slice(&[0.0]); 3]).unwrap();
        let obs = ObsSpec::new(&target, 1.0).unwrap();
        let prior = InputPrior::new(vec![0.0; 2], vec![1.0; 2]).unwrap();
        assert!(matches!(smooth(&model, &obs, &prior), Err(Error::Config(_))));
    }
}
