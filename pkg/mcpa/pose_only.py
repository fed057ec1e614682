"""Multi-camera pose-only constraint.

A track's 3D point is never stored. It is implied by two base rays: the
primary ray fixes the direction and the secondary ray fixes the depth

    s = lambda / theta,
    theta  = |f_s x R_ps f_p|,
    lambda = |f_s x (v_s - R_ps v_p - t_ps)|,

and every other observation i of the track is predicted up to scale by

    Y = lambda * R_pi f_p + theta * (R_pi v_p + t_pi - v_i).

The residual compares Y / |Y| with the observed direction f_i. For the left
residual the primary ray is the left base l and the secondary is r; the
right residual swaps the roles.

``evaluate_rows`` is the vectorized kernel used by the optimizer. The
per-observation functions below wrap it for single residuals.
"""

from dataclasses import dataclass

import numpy as np

from mcpa.exceptions import DegenerateParallax
from mcpa.geometry import skew_batch
from mcpa.models import ObservationRay, Pose, ResidualBlock, ScaleResult, Track

MIN_THETA = 1e-10
_TINY = 1e-300


@dataclass
class RayRows:
    """One ray per row: direction, vertex and pose index."""

    f: np.ndarray
    v: np.ndarray
    pose_id: np.ndarray

    @classmethod
    def from_ray(cls, ray: ObservationRay) -> "RayRows":
        return cls(
            np.asarray(ray.f, dtype=float)[None, :],
            np.asarray(ray.v, dtype=float)[None, :],
            np.array([ray.pose_id]),
        )


@dataclass
class RowEvaluation:
    e: np.ndarray
    Y: np.ndarray
    theta: np.ndarray
    lam: np.ndarray
    jac_target: np.ndarray | None = None
    jac_primary: np.ndarray | None = None
    jac_secondary: np.ndarray | None = None


def _apply(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("nij,nj->ni", m, x)


def _apply_transposed(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("nji,nj->ni", m, x)


def _relative(rotations, translations, a, b):
    """Rows of R_ab = R_b R_a^T, t_ab = t_b - R_ab t_a; exact (I, 0) where a == b."""
    ra, rb = rotations[a], rotations[b]
    r_ab = np.einsum("nij,nkj->nik", rb, ra)
    t_ab = translations[b] - _apply(r_ab, translations[a])
    same = a == b
    if np.any(same):
        r_ab[same] = np.eye(3)
        t_ab[same] = 0.0
    return r_ab, t_ab


def evaluate_rows(
    rotations: np.ndarray,
    translations: np.ndarray,
    primary: RayRows,
    secondary: RayRows,
    target: RayRows,
    jacobians: bool = False,
) -> RowEvaluation:
    """Residuals of ``target`` predicted from (primary, secondary) base rays.

    Jacobians are d e / d (phi, t) of the target, primary and secondary poses,
    each (N, 3, 6), taken as if the three poses were independent. Callers sum
    blocks that share a pose id.
    """
    pp, ps, pt = primary.pose_id, secondary.pose_id, target.pose_id

    r_ps, t_ps = _relative(rotations, translations, pp, ps)
    u_body = np.cross(secondary.f, _apply(r_ps, primary.f))
    theta = np.linalg.norm(u_body, axis=1)
    m_body = np.cross(secondary.f, secondary.v - _apply(r_ps, primary.v) - t_ps)
    lam = np.linalg.norm(m_body, axis=1)

    r_pt, t_pt = _relative(rotations, translations, pp, pt)
    p = _apply(r_pt, primary.f)
    w = _apply(r_pt, primary.v) + t_pt - target.v
    Y = lam[:, None] * p + theta[:, None] * w
    y_norm = np.maximum(np.linalg.norm(Y, axis=1), _TINY)
    y_hat = Y / y_norm[:, None]
    result = RowEvaluation(e=y_hat - target.f, Y=Y, theta=theta, lam=lam)
    if not jacobians:
        return result

    n = len(theta)
    rot_p, rot_s, rot_t = rotations[pp], rotations[ps], rotations[pt]

    # world-frame ray directions and vertices of the two base rays
    d_p = _apply_transposed(rot_p, primary.f)
    c_p = _apply_transposed(rot_p, primary.v - translations[pp])
    d_s = _apply_transposed(rot_s, secondary.f)
    c_s = _apply_transposed(rot_s, secondary.v - translations[ps])
    b = c_p - c_s

    u = np.cross(d_s, d_p)
    u_norm = np.linalg.norm(u, axis=1)
    g_theta = u / np.maximum(u_norm, _TINY)[:, None]
    m = np.cross(d_s, b)
    m_norm = np.linalg.norm(m, axis=1)
    g_lam = np.where(m_norm[:, None] > 1e-15, m / np.maximum(m_norm, _TINY)[:, None], 0.0)

    dtheta_dphi_s = -np.cross(np.cross(g_theta, d_p), d_s)
    dlam_dphi_s = -np.cross(np.cross(g_lam, b), d_s) - np.cross(np.cross(g_lam, d_s), c_s)
    dlam_dt_s = _apply(rot_s, np.cross(g_lam, d_s))

    dY_dphi_s = p[:, :, None] * dlam_dphi_s[:, None, :] + w[:, :, None] * dtheta_dphi_s[:, None, :]
    dY_dt_s = p[:, :, None] * dlam_dt_s[:, None, :]

    q = lam[:, None] * d_p + theta[:, None] * c_p
    dY_dphi_t = -rot_t @ skew_batch(q)
    dY_dt_t = theta[:, None, None] * np.broadcast_to(np.eye(3), (n, 3, 3))

    # Y is invariant under a rigid change of world frame applied to all poses
    dY_dphi_p = -dY_dphi_s - dY_dphi_t
    r_ps_raw = np.einsum("nij,nkj->nik", rot_s, rot_p)
    r_pt_raw = np.einsum("nij,nkj->nik", rot_t, rot_p)
    dY_dt_p = -dY_dt_s @ r_ps_raw - theta[:, None, None] * r_pt_raw

    de_dY = (np.eye(3)[None] - y_hat[:, :, None] * y_hat[:, None, :]) / y_norm[:, None, None]
    result.jac_target = de_dY @ np.concatenate([dY_dphi_t, dY_dt_t], axis=2)
    result.jac_primary = de_dY @ np.concatenate([dY_dphi_p, dY_dt_p], axis=2)
    result.jac_secondary = de_dY @ np.concatenate([dY_dphi_s, dY_dt_s], axis=2)
    return result


# --- single-observation API ---

def _stack(poses: list[Pose]) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.array([p.rotation for p in poses], dtype=float),
        np.array([p.translation for p in poses], dtype=float),
    )


def relative_pose(pose_a: Pose, pose_b: Pose) -> tuple[np.ndarray, np.ndarray]:
    r_ab = pose_b.rotation @ pose_a.rotation.T
    return r_ab, pose_b.translation - r_ab @ pose_a.translation


def scale_left(obs_l: ObservationRay, obs_r: ObservationRay, pose_l: Pose, pose_r: Pose) -> ScaleResult:
    """Depth of the left base ray, triangulated against the right one."""
    if obs_l.pose_id == obs_r.pose_id:
        r_lr, t_lr = np.eye(3), np.zeros(3)
    else:
        r_lr, t_lr = relative_pose(pose_l, pose_r)
    theta = float(np.linalg.norm(np.cross(obs_r.f, r_lr @ obs_l.f)))
    lam = float(np.linalg.norm(np.cross(obs_r.f, obs_r.v - r_lr @ obs_l.v - t_lr)))
    if theta < MIN_THETA:
        raise DegenerateParallax(f"base rays are parallel (theta={theta:.3g})")
    return ScaleResult(s=lam / theta, lam=lam, theta=theta)


def scale_right(obs_l: ObservationRay, obs_r: ObservationRay, pose_l: Pose, pose_r: Pose) -> ScaleResult:
    return scale_left(obs_r, obs_l, pose_r, pose_l)


def reconstruct_from_base(obs_l: ObservationRay, pose_l: Pose, s_l: float) -> np.ndarray:
    return pose_l.rotation.T @ (s_l * obs_l.f + obs_l.v - pose_l.translation)


def _residual(track: Track, i: int, poses: list[Pose], right: bool, jacobians: bool) -> ResidualBlock:
    if track.base is None:
        raise ValueError(f"track {track.track_id} has no base pair")
    primary, secondary = (track.base.r, track.base.l) if right else (track.base.l, track.base.r)
    if i == primary:
        raise ValueError("target observation must differ from the primary base")
    prim, sec, tgt = track.ray(primary), track.ray(secondary), track.ray(i)
    rotations, translations = _stack(poses)
    ev = evaluate_rows(
        rotations, translations,
        RayRows.from_ray(prim), RayRows.from_ray(sec), RayRows.from_ray(tgt),
        jacobians=jacobians,
    )
    if ev.theta[0] < MIN_THETA:
        raise DegenerateParallax(f"track {track.track_id}: base rays are parallel")

    block = ResidualBlock(e=ev.e[0], Y=ev.Y[0], pose_ids=(tgt.pose_id, prim.pose_id, sec.pose_id))
    if jacobians:
        jac_primary, jac_secondary = ev.jac_primary[0], ev.jac_secondary[0]
        if not right:
            block.jac_l, block.jac_r = jac_primary, jac_secondary
        else:
            block.jac_l, block.jac_r = jac_secondary, jac_primary
        block.jac_i = ev.jac_target[0]
        for pid, jac in ((tgt.pose_id, block.jac_i), (prim.pose_id, jac_primary), (sec.pose_id, jac_secondary)):
            block.blocks[pid] = block.blocks.get(pid, 0.0) + jac
    return block


def residual_left(track: Track, i: int, poses: list[Pose]) -> ResidualBlock:
    return _residual(track, i, poses, right=False, jacobians=False)


def residual_right(track: Track, i: int, poses: list[Pose]) -> ResidualBlock:
    return _residual(track, i, poses, right=True, jacobians=False)


def residual_jacobians(track: Track, i: int, poses: list[Pose], right: bool = False) -> ResidualBlock:
    """Residual with analytic Jacobians. ``right`` selects the right-primary family."""
    return _residual(track, i, poses, right=right, jacobians=True)
