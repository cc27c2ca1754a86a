"""
平方根信息滤波 VIO

误差状态排列: [当前 IMU 15 维 (δθ, δp, δv, δbg, δba) | 克隆位姿 6 维 × n | 路标 3 维 × m]
- 旋转误差在机体系右乘 (R ← R·Exp(δθ)); 位置/速度/克隆位置/路标误差在世界系加性,
  与 MSCKF 的 update_state 一致, 因此 emit_odometry 直接输出名义世界位姿
- 克隆与路标只在滑动窗口内保留, 边缘化通过重排列后的 QR 去掉对应列
- 因子 R 满足 RᵀR = 信息矩阵, d 为右端项; 每次更新后注入增量并令 d = 0
"""

from dataclasses import dataclass, field
from typing import List, Dict, Optional, Tuple, Sequence

import numpy as np
import scipy.linalg

try:
    from ..model_types import MonoHydraError, FilterConfig, GateConfig, NoiseSpec
    from ..utils.geometry import (
        Pose,
        CameraIntrinsics,
        R_BC,
        camera_pose,
        exp_so3_quat,
        quat_multiply,
        quat_to_matrix,
        exp_so3,
        skew,
        backproject,
        projection_jacobian,
    )
    from ..tools.sim_world import ImuWindow, GRAVITY
    from ..tools.vio_frontend import Track, DepthFactor, huber
except ImportError:
    from monohydra.model_types import MonoHydraError, FilterConfig, GateConfig, NoiseSpec
    from monohydra.utils.geometry import (
        Pose,
        CameraIntrinsics,
        R_BC,
        camera_pose,
        exp_so3_quat,
        quat_multiply,
        quat_to_matrix,
        exp_so3,
        skew,
        backproject,
        projection_jacobian,
    )
    from monohydra.tools.sim_world import ImuWindow, GRAVITY
    from monohydra.tools.vio_frontend import Track, DepthFactor, huber

IMU_DIM = 15
CLONE_DIM = 6
LANDMARK_DIM = 3
TH, POS, VEL, BG, BA = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)
R_CB = R_BC.T
DEGENERATE_DIAGONAL = 1e-12
PROCESS_REGULARIZATION = 1e-12


class EstimatorDegenerateError(MonoHydraError):
    """平方根因子奇异, 无法回代"""


class DimensionMismatchError(MonoHydraError):
    """残差块与状态维度不一致"""


class ImuOrderError(MonoHydraError):
    """IMU 时间戳不单调"""


@dataclass
class Clone:
    frame_id: int
    timestamp: float
    pose: Pose


@dataclass
class NavState:
    frame_id: int
    timestamp: float
    pose: Pose  # T_WB
    velocity: np.ndarray
    gyro_bias: np.ndarray
    accel_bias: np.ndarray
    clones: List[Clone] = field(default_factory=list)
    landmarks: Dict[int, np.ndarray] = field(default_factory=dict)
    last_imu: Optional[Tuple[float, np.ndarray, np.ndarray]] = None

    @property
    def dim(self) -> int:
        return IMU_DIM + CLONE_DIM * len(self.clones) + LANDMARK_DIM * len(self.landmarks)

    def clone_offset(self, index: int) -> int:
        return IMU_DIM + CLONE_DIM * index

    def landmark_offset(self, track_id: int) -> int:
        base = IMU_DIM + CLONE_DIM * len(self.clones)
        return base + LANDMARK_DIM * list(self.landmarks).index(track_id)

    def window_frames(self) -> List[int]:
        return [c.frame_id for c in self.clones] + [self.frame_id]

    def frame_pose(self, frame_id: int) -> Optional[Tuple[Pose, int]]:
        """窗口内某帧的机体位姿与其 [δθ, δp] 列偏移"""
        if frame_id == self.frame_id:
            return self.pose, 0
        for i, c in enumerate(self.clones):
            if c.frame_id == frame_id:
                return c.pose, self.clone_offset(i)
        return None

    def copy(self) -> "NavState":
        return NavState(
            self.frame_id,
            self.timestamp,
            self.pose,
            self.velocity.copy(),
            self.gyro_bias.copy(),
            self.accel_bias.copy(),
            list(self.clones),
            {k: v.copy() for k, v in self.landmarks.items()},
            self.last_imu,
        )


@dataclass
class SqrtState:
    R: np.ndarray
    d: np.ndarray
    nav: NavState
    info: Dict[str, float] = field(default_factory=dict)
    floored: Tuple[int, ...] = ()  # 最近一次 QR 更新中被正则化的列


@dataclass
class ImuNoise:
    gyro: float
    accel: float
    gyro_bias: float
    accel_bias: float

    @classmethod
    def from_spec(cls, noise: NoiseSpec, cfg: FilterConfig) -> "ImuNoise":
        return cls(
            max(noise.gyro_noise, cfg.gyro_noise_floor),
            max(noise.accel_noise, cfg.accel_noise_floor),
            max(noise.gyro_bias, cfg.gyro_bias_floor),
            max(noise.accel_bias, cfg.accel_bias_floor),
        )


@dataclass
class VisualObservation:
    track_id: int
    frame_id: int
    pixel: np.ndarray
    weight: float = 1.0


@dataclass
class LinearBlock:
    A: np.ndarray
    b: np.ndarray


@dataclass
class OdometryRecord:
    frame_id: int
    timestamp: float
    pose: Pose
    covariance: np.ndarray  # (RᵀR)⁻¹ 中 [δθ, δp] 的对角线


# ---------- 工具函数 ----------
def _finalize(R: np.ndarray, d: np.ndarray, floor: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """对角线取非负号, 小于下限的对角元被正则化; 返回被正则化的列号"""
    R = np.triu(R)
    sign = np.sign(np.diag(R))
    sign[sign == 0] = 1.0
    R = R * sign[:, None]
    d = d * sign
    idx = np.flatnonzero(np.diag(R) < floor)
    R[idx, idx] = floor
    return R, d, idx


def _qr_r(M: np.ndarray) -> np.ndarray:
    return scipy.linalg.qr(M, mode="r", check_finite=False)[0]


def initial_state(
    pose: Pose,
    velocity: np.ndarray,
    timestamp: float,
    frame_id: int,
    cfg: FilterConfig,
) -> SqrtState:
    """以先验标准差构造初始平方根因子"""
    sig = np.concatenate(
        [
            np.full(3, cfg.prior_sigma_rotation),
            np.full(3, cfg.prior_sigma_position),
            np.full(3, cfg.prior_sigma_velocity),
            np.full(3, cfg.prior_sigma_gyro_bias),
            np.full(3, cfg.prior_sigma_accel_bias),
        ]
    )
    nav = NavState(
        frame_id,
        timestamp,
        pose.relabel("body", "world"),
        np.asarray(velocity, dtype=float).copy(),
        np.zeros(3),
        np.zeros(3),
    )
    return SqrtState(np.diag(1.0 / sig), np.zeros(IMU_DIM), nav)


def _reorder_and_eliminate(
    M: np.ndarray, rhs: np.ndarray, marg: Sequence[int], keep: Sequence[int], floor: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """列重排为 [marg | keep] 后做 QR, 丢掉被边缘化的行列"""
    m = len(marg)
    order = list(marg) + list(keep)
    aug = np.hstack([M[:, order], rhs[:, None]])
    Ra = _qr_r(aug)
    n_keep = len(keep)
    R = np.zeros((n_keep, n_keep))
    d = np.zeros(n_keep)
    rows = min(Ra.shape[0], m + n_keep) - m
    if rows > 0:
        R[:rows] = Ra[m : m + rows, m : m + n_keep]
        d[:rows] = Ra[m : m + rows, -1]
    return _finalize(R, d, floor)


# ---------- 传播 ----------
def _integrate(nav: NavState, samples, noise: ImuNoise):
    """中点积分均值, 同时累积误差状态转移 Φ 与过程噪声 Q"""
    q = nav.pose.quat.copy()
    p = nav.pose.translation.copy()
    v = nav.velocity.copy()
    bg, ba = nav.gyro_bias, nav.accel_bias
    Phi = np.eye(IMU_DIM)
    Q = np.zeros((IMU_DIM, IMU_DIM))
    I3 = np.eye(3)
    for (t0, g0, a0), (t1, g1, a1) in zip(samples[:-1], samples[1:]):
        dt = t1 - t0
        w = 0.5 * (g0 + g1) - bg
        f0, f1 = a0 - ba, a1 - ba
        R0 = quat_to_matrix(q)
        dq = exp_so3_quat(w * dt)
        q = quat_multiply(q, dq)
        q /= np.linalg.norm(q)
        R1 = quat_to_matrix(q)
        a_w = 0.5 * (R0 @ f0 + R1 @ f1) + GRAVITY
        p = p + v * dt + 0.5 * a_w * dt * dt
        v = v + a_w * dt

        f_mid = 0.5 * (f0 + f1)
        F = np.eye(IMU_DIM)
        F[TH, TH] = exp_so3(w * dt).T
        F[TH, BG] = -I3 * dt
        F[VEL, TH] = -R0 @ skew(f_mid) * dt
        F[VEL, BA] = -R0 * dt
        F[POS, TH] = -0.5 * R0 @ skew(f_mid) * dt * dt
        F[POS, VEL] = I3 * dt
        F[POS, BA] = -0.5 * R0 * dt * dt
        G = np.zeros((IMU_DIM, 12))
        G[TH, 0:3] = -I3 * dt
        G[VEL, 3:6] = -R0 * dt
        G[POS, 3:6] = -0.5 * R0 * dt * dt
        G[BG, 6:9] = I3 * dt
        G[BA, 9:12] = I3 * dt
        sigma = np.repeat(
            [noise.gyro**2, noise.accel**2, noise.gyro_bias**2, noise.accel_bias**2], 3
        ) / dt
        Phi = F @ Phi
        Q = F @ Q @ F.T + (G * sigma) @ G.T
    return q, p, v, Phi, Q


def propagate(
    state: SqrtState,
    imu: ImuWindow,
    noise: ImuNoise,
    frame_id: Optional[int] = None,
    clone: bool = True,
    floor: float = 1e-9,
) -> SqrtState:
    """IMU 传播: 中点积分均值, 平方根因子经过程噪声白化的转移方程做一次 QR

    Args:
        state: 先验
        imu: 本帧 IMU 窗口, 时间戳严格递增且晚于上次样本
        noise: 滤波器假设的噪声密度
        frame_id: 传播后的当前帧号
        clone: 是否把传播前的位姿保留为克隆 (否则边缘化)
        floor: 对角正则化下限

    Returns:
        新的 SqrtState
    """
    ts = np.asarray(imu.timestamps, dtype=float)
    if len(ts) == 0:
        raise ImuOrderError("empty IMU window")
    if np.any(np.diff(ts) <= 0):
        raise ImuOrderError("IMU timestamps are not strictly increasing")
    nav = state.nav
    if nav.last_imu is not None and ts[0] <= nav.last_imu[0]:
        raise ImuOrderError(f"IMU sample {ts[0]} is not after the previous sample {nav.last_imu[0]}")

    samples = [] if nav.last_imu is None else [nav.last_imu]
    samples += [(float(t), imu.gyro[k].copy(), imu.accel[k].copy()) for k, t in enumerate(ts)]
    new_nav = nav.copy()
    new_nav.last_imu = samples[-1]
    new_nav.timestamp = samples[-1][0]
    if frame_id is not None:
        new_nav.frame_id = frame_id
    if len(samples) < 2:
        return SqrtState(state.R.copy(), state.d.copy(), new_nav, dict(state.info))

    q, p, v, Phi, Q = _integrate(nav, samples, noise)
    Q = 0.5 * (Q + Q.T) + PROCESS_REGULARIZATION * np.eye(IMU_DIM)
    L = np.linalg.cholesky(Q)
    W = scipy.linalg.solve_triangular(L, np.eye(IMU_DIM), lower=True)

    # ---------- 联合矩阵: 列 [旧 IMU | 其余 | 新 IMU] ----------
    n = nav.dim
    M = np.zeros((n + IMU_DIM, n + IMU_DIM))
    M[:n, :n] = state.R
    M[n:, :IMU_DIM] = -W @ Phi
    M[n:, n:] = W
    rhs = np.concatenate([state.d, np.zeros(IMU_DIM)])

    n_clones = len(nav.clones)
    clone_cols = list(range(IMU_DIM, IMU_DIM + CLONE_DIM * n_clones))
    landmark_cols = list(range(IMU_DIM + CLONE_DIM * n_clones, n))
    new_imu = list(range(n, n + IMU_DIM))
    if clone:
        marg = list(range(6, IMU_DIM))
        keep = new_imu + clone_cols + list(range(0, 6)) + landmark_cols
        new_nav.clones = nav.clones + [Clone(nav.frame_id, nav.timestamp, nav.pose)]
    else:
        marg = list(range(IMU_DIM))
        keep = new_imu + clone_cols + landmark_cols
    R, d, floored = _reorder_and_eliminate(M, rhs, marg, keep, floor)

    new_nav.pose = Pose(q, p, "body", "world")
    new_nav.velocity = v
    return SqrtState(R, d, new_nav, {"regularized": float(len(floored) > 0)})


def marginalize(state: SqrtState, clone_frames: Sequence[int] = (), landmarks: Sequence[int] = (), floor: float = 1e-9) -> SqrtState:
    """边缘化指定的克隆 (按帧号) 与路标 (按轨迹号)"""
    nav = state.nav
    clone_frames = [f for f in clone_frames if any(c.frame_id == f for c in nav.clones)]
    landmarks = [t for t in landmarks if t in nav.landmarks]
    if not clone_frames and not landmarks:
        return state
    marg = []
    for f in clone_frames:
        i = [c.frame_id for c in nav.clones].index(f)
        off = nav.clone_offset(i)
        marg += list(range(off, off + CLONE_DIM))
    for t in landmarks:
        off = nav.landmark_offset(t)
        marg += list(range(off, off + LANDMARK_DIM))
    marg_set = set(marg)
    keep = [c for c in range(nav.dim) if c not in marg_set]
    R, d, floored = _reorder_and_eliminate(state.R, state.d, marg, keep, floor)
    new_nav = nav.copy()
    new_nav.clones = [c for c in nav.clones if c.frame_id not in clone_frames]
    for t in landmarks:
        del new_nav.landmarks[t]
    return SqrtState(R, d, new_nav, {"regularized": float(len(floored) > 0)})


def add_landmark(state: SqrtState, track_id: int, X: np.ndarray) -> SqrtState:
    """追加一个无先验信息的路标 (对角为 0, 依赖随后的观测行)"""
    n = state.nav.dim
    R = np.zeros((n + LANDMARK_DIM, n + LANDMARK_DIM))
    R[:n, :n] = state.R
    d = np.concatenate([state.d, np.zeros(LANDMARK_DIM)])
    nav = state.nav.copy()
    nav.landmarks[track_id] = np.asarray(X, dtype=float).copy()
    return SqrtState(R, d, nav, dict(state.info))


# ---------- 残差 ----------
def _camera_point(pose: Pose, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    R_b = pose.rotation
    X_b = R_b.T @ (X - pose.translation)
    return R_CB @ X_b, X_b


def _point_jacobians(pose: Pose, X_b: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """∂X_c/∂δθ, ∂X_c/∂δp, ∂X_c/∂δX"""
    R_bT = pose.rotation.T
    return R_CB @ skew(X_b), -R_CB @ R_bT, R_CB @ R_bT


def predict_pixel(nav: NavState, track_id: int, frame_id: int, K: CameraIntrinsics) -> Optional[np.ndarray]:
    fp = nav.frame_pose(frame_id)
    if fp is None or track_id not in nav.landmarks:
        return None
    X_c, _ = _camera_point(fp[0], nav.landmarks[track_id])
    if X_c[2] <= 0:
        return None
    return np.array([K.fx * X_c[0] / X_c[2] + K.cx, K.fy * X_c[1] / X_c[2] + K.cy])


def stack_residuals(
    state: SqrtState,
    observations: Sequence[VisualObservation],
    depth_factors: Sequence[DepthFactor],
    K: CameraIntrinsics,
    cfg: FilterConfig,
    gates: GateConfig,
    imu_residual: Optional[LinearBlock] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """白化残差堆叠

    视觉行按 √w/σ_px 缩放; 深度行 r = z − π_z 按 √(λ_d·η·w_huber)/σ_d 缩放;
    IMU 行 (可选) 已由调用方按过程噪声白化。

    Returns:
        (A, b): 线性化后 ‖Aδ − b‖² 即白化残差平方和
    """
    nav = state.nav
    n = nav.dim
    rows_A: List[np.ndarray] = []
    rows_b: List[np.ndarray] = []

    for obs in observations:
        if obs.weight <= 0 or obs.track_id not in nav.landmarks:
            continue
        fp = nav.frame_pose(obs.frame_id)
        if fp is None:
            continue
        pose, off = fp
        X = nav.landmarks[obs.track_id]
        X_c, X_b = _camera_point(pose, X)
        if X_c[2] <= cfg.min_landmark_depth:
            continue
        Jpi = projection_jacobian(X_c, K)
        J_th, J_p, J_X = _point_jacobians(pose, X_b)
        pred = np.array([K.fx * X_c[0] / X_c[2] + K.cx, K.fy * X_c[1] / X_c[2] + K.cy])
        s = np.sqrt(obs.weight) / cfg.sigma_px
        A = np.zeros((2, n))
        A[:, off : off + 3] = s * Jpi @ J_th
        A[:, off + 3 : off + 6] = s * Jpi @ J_p
        lo = nav.landmark_offset(obs.track_id)
        A[:, lo : lo + 3] = s * Jpi @ J_X
        rows_A.append(A)
        rows_b.append(s * (np.asarray(obs.pixel, dtype=float) - pred))

    for f in depth_factors:
        if f.eta <= 0 or f.track_id not in nav.landmarks:
            continue
        X = nav.landmarks[f.track_id]
        X_c, X_b = _camera_point(nav.pose, X)
        if X_c[2] <= cfg.min_landmark_depth:
            continue
        r = f.z - X_c[2]
        _, w_h = huber(r / f.sigma, gates.huber_delta)
        s = np.sqrt(gates.lambda_d * f.eta * w_h) / f.sigma
        J_th, J_p, J_X = _point_jacobians(nav.pose, X_b)
        A = np.zeros((1, n))
        A[0, 0:3] = s * J_th[2]
        A[0, 3:6] = s * J_p[2]
        lo = nav.landmark_offset(f.track_id)
        A[0, lo : lo + 3] = s * J_X[2]
        rows_A.append(A)
        rows_b.append(np.array([s * r]))

    if imu_residual is not None:
        A_imu = np.atleast_2d(np.asarray(imu_residual.A, dtype=float))
        b_imu = np.asarray(imu_residual.b, dtype=float).reshape(-1)
        if A_imu.shape[1] != n or A_imu.shape[0] != b_imu.shape[0]:
            raise DimensionMismatchError(
                f"IMU block {A_imu.shape} / {b_imu.shape} does not match state dimension {n}"
            )
        rows_A.append(A_imu)
        rows_b.append(b_imu)

    if not rows_A:
        return np.zeros((0, n)), np.zeros(0)
    return np.vstack(rows_A), np.concatenate(rows_b)


# ---------- 更新 ----------
def qr_update(prior: SqrtState, A: np.ndarray, b: np.ndarray, floor: float = 1e-9) -> SqrtState:
    """QR([R d; A b]) 得到新因子与右端项, 丢弃部分的范数作为残差 ε"""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    n = prior.R.shape[0]
    if A.shape[0] == 0:
        return prior
    if A.ndim != 2 or A.shape[1] != n or A.shape[0] != b.shape[0]:
        raise DimensionMismatchError(f"measurement block {A.shape}/{b.shape} vs state dimension {n}")
    if np.any(np.abs(np.tril(prior.R, -1)) > 0):
        raise DimensionMismatchError("prior square-root factor is not upper triangular")
    stacked = np.vstack([np.hstack([prior.R, prior.d[:, None]]), np.hstack([A, b[:, None]])])
    Ra = _qr_r(stacked)
    R = Ra[:n, :n].copy()
    d = Ra[:n, n].copy()
    eps = float(abs(Ra[n, n])) if Ra.shape[0] > n else 0.0
    R, d, floored = _finalize(R, d, floor)
    info = {"residual_norm": eps, "rank_deficient": float(len(floored) > 0)}
    return SqrtState(R, d, prior.nav, info, tuple(int(i) for i in floored))


def inject(nav: NavState, delta: np.ndarray) -> NavState:
    """把误差状态增量注入名义状态"""
    new = nav.copy()

    def _apply(pose: Pose, dth: np.ndarray, dp: np.ndarray) -> Pose:
        q = quat_multiply(pose.quat, exp_so3_quat(dth))
        return Pose(q, pose.translation + dp, pose.frame_from, pose.frame_to)

    new.pose = _apply(nav.pose, delta[TH], delta[POS])
    new.velocity = nav.velocity + delta[VEL]
    new.gyro_bias = nav.gyro_bias + delta[BG]
    new.accel_bias = nav.accel_bias + delta[BA]
    clones = []
    for i, c in enumerate(nav.clones):
        off = nav.clone_offset(i)
        clones.append(Clone(c.frame_id, c.timestamp, _apply(c.pose, delta[off : off + 3], delta[off + 3 : off + 6])))
    new.clones = clones
    for tid in nav.landmarks:
        off = nav.landmark_offset(tid)
        new.landmarks[tid] = nav.landmarks[tid] + delta[off : off + 3]
    return new


def back_substitute(state: SqrtState) -> Tuple[np.ndarray, SqrtState]:
    """回代求 Rδ = d, 注入增量并令 d = 0

    QR 更新中 IMU 或克隆列 (运动状态) 被正则化说明运动退化, 直接报错;
    只有路标列被正则化时照常回代

    Returns:
        (δ, 更新后的 SqrtState)
    """
    diag = np.abs(np.diag(state.R))
    if diag.size and np.min(diag) < DEGENERATE_DIAGONAL:
        raise EstimatorDegenerateError(f"square-root factor diagonal {np.min(diag):.3e} below 1e-12")
    n_motion = diag.size if state.nav is None else IMU_DIM + CLONE_DIM * len(state.nav.clones)
    motion = [i for i in state.floored if i < n_motion]
    if motion:
        raise EstimatorDegenerateError(f"motion states {motion} lost rank in the QR update")
    if not np.any(state.d):
        return np.zeros_like(state.d), state
    delta = scipy.linalg.solve_triangular(state.R, state.d, lower=False, check_finite=False)
    return delta, SqrtState(state.R, np.zeros_like(state.d), inject(state.nav, delta), dict(state.info))


def solve_normal_equations(prior: SqrtState, A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """稠密法方程参考解 (RᵀR + AᵀA)δ = Rᵀd + Aᵀb, Jacobi 均衡后求解"""
    H = prior.R.T @ prior.R
    g = prior.R.T @ prior.d
    if A.shape[0]:
        H = H + A.T @ A
        g = g + A.T @ b
    scale = 1.0 / np.sqrt(np.maximum(np.diag(H), 1e-300))
    Hs = H * scale[:, None] * scale[None, :]
    y = scipy.linalg.solve(Hs, g * scale, assume_a="pos", check_finite=False)
    return y * scale


def emit_odometry(state: SqrtState) -> OdometryRecord:
    """当前位姿与 (RᵀR)⁻¹ 中 [δθ, δp] 块的对角线"""
    n = state.R.shape[0]
    Rinv = scipy.linalg.solve_triangular(state.R, np.eye(n), lower=False, check_finite=False)
    cov_diag = np.sum(Rinv[:6] ** 2, axis=1)
    nav = state.nav
    return OdometryRecord(nav.frame_id, nav.timestamp, nav.pose, cov_diag)


# ---------- 路标初始化 ----------
def _ray_world(T_WC: Pose, pixel: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    d = backproject(pixel, 1.0, K)
    return T_WC.rotation @ (d / np.linalg.norm(d))


def triangulate(
    observations: Sequence[Tuple[Pose, np.ndarray, float]],
    K: CameraIntrinsics,
    min_parallax_deg: float,
) -> Optional[np.ndarray]:
    """多视图线性三角化; 视差不足时用首帧深度采样沿射线播种

    Args:
        observations: (机体位姿, 像素, 深度采样) 列表, 按时间排序, 至少两个
        K: 相机内参
        min_parallax_deg: 最小视差角

    Returns:
        世界系路标或 None
    """
    if len(observations) < 2:
        return None
    cams = [camera_pose(pose) for pose, _, _ in observations]
    rays = [_ray_world(T, px, K) for T, (_, px, _) in zip(cams, observations)]
    cos = [float(np.clip(rays[0] @ r, -1.0, 1.0)) for r in rays[1:]]
    parallax = np.degrees(np.arccos(min(cos)))
    if parallax > min_parallax_deg:
        A = np.zeros((3, 3))
        b = np.zeros(3)
        for T, r in zip(cams, rays):
            P = np.eye(3) - np.outer(r, r)
            A += P
            b += P @ T.translation
        if np.linalg.cond(A) > 1e8:
            return None
        return np.linalg.solve(A, b)
    _, px0, z0 = observations[0]
    if z0 <= 0:
        return None
    return cams[0].transform(backproject(px0, z0, K))


class SqrtVioEstimator:
    """逐帧驱动平方根滤波: 传播、路标管理、量测更新、里程计输出"""

    def __init__(
        self,
        cfg: FilterConfig,
        gates: GateConfig,
        K: CameraIntrinsics,
        noise: ImuNoise,
        initial_pose: Pose,
        initial_velocity: np.ndarray,
        timestamp: float = 0.0,
        frame_id: int = 0,
    ):
        self.cfg = cfg
        self.gates = gates
        self.K = K
        self.noise = noise
        self.state = initial_state(initial_pose, initial_velocity, timestamp, frame_id, cfg)
        self.new_landmarks: List[int] = []
        self.last_oracle_error: Optional[float] = None
        self.oracle_errors: List[float] = []
        self.last_residual_norm = 0.0
        self.last_counts: Dict[str, int] = {}

    @property
    def nav(self) -> NavState:
        return self.state.nav

    def body_rate(self) -> np.ndarray:
        if self.nav.last_imu is None:
            return np.zeros(3)
        return self.nav.last_imu[1] - self.nav.gyro_bias

    def propagate(self, imu: ImuWindow, frame_id: int) -> None:
        self.state = propagate(self.state, imu, self.noise, frame_id, True, self.cfg.regularization_floor)
        excess = len(self.nav.clones) - self.cfg.window
        if excess > 0:
            old = [c.frame_id for c in self.nav.clones[:excess]]
            self.state = marginalize(self.state, clone_frames=old, floor=self.cfg.regularization_floor)

    def reprojection_error(self, track_id: int, pixel: np.ndarray) -> Optional[float]:
        pred = predict_pixel(self.nav, track_id, self.nav.frame_id, self.K)
        if pred is None:
            return None
        return float(np.linalg.norm(np.asarray(pixel) - pred))

    def manage_landmarks(self, tracks: Sequence[Track]) -> Dict[str, int]:
        """边缘化丢失或离群的路标, 为新轨迹初始化路标"""
        frame_id = self.nav.frame_id
        active = {t.track_id: t for t in tracks}
        drop = []
        for tid in self.nav.landmarks:
            track = active.get(tid)
            obs = track.at(frame_id) if track is not None else None
            if obs is None:
                drop.append(tid)
                continue
            err = self.reprojection_error(tid, obs.pixel)
            if err is None or err > self.cfg.max_visual_residual_px:
                drop.append(tid)
        if drop:
            self.state = marginalize(self.state, landmarks=drop, floor=self.cfg.regularization_floor)

        self.new_landmarks = []
        window = set(self.nav.window_frames())
        capacity = self.cfg.max_landmarks - len(self.nav.landmarks)
        for tid in sorted(active):
            if capacity <= 0:
                break
            if tid in self.nav.landmarks:
                continue
            obs = [o for o in active[tid].observations if o.frame_id in window and o.w > 0]
            if len(obs) < 2:
                continue
            views = [(self.nav.frame_pose(o.frame_id)[0], o.pixel, o.z) for o in obs]
            X = triangulate(views, self.K, self.cfg.min_parallax_deg)
            if X is None or not self._consistent(X, obs):
                continue
            self.state = add_landmark(self.state, tid, X)
            self.new_landmarks.append(tid)
            capacity -= 1
        return {"dropped": len(drop), "initialized": len(self.new_landmarks)}

    def _consistent(self, X: np.ndarray, obs) -> bool:
        for o in obs:
            pose, _ = self.nav.frame_pose(o.frame_id)
            X_c, _ = _camera_point(pose, X)
            if X_c[2] <= self.cfg.min_landmark_depth:
                return False
            pred = np.array([self.K.fx * X_c[0] / X_c[2] + self.K.cx, self.K.fy * X_c[1] / X_c[2] + self.K.cy])
            if np.linalg.norm(pred - o.pixel) > self.cfg.max_visual_residual_px:
                return False
        return True

    def visual_observations(self, tracks: Sequence[Track]) -> List[VisualObservation]:
        """在状态内路标的当前观测; 新初始化路标附带窗口内全部历史观测"""
        frame_id = self.nav.frame_id
        window = set(self.nav.window_frames())
        new = set(self.new_landmarks)
        out = []
        for track in tracks:
            if track.track_id not in self.nav.landmarks:
                continue
            if track.track_id in new:
                for o in track.observations:
                    if o.frame_id in window:
                        out.append(VisualObservation(track.track_id, o.frame_id, o.pixel, o.w))
            else:
                o = track.at(frame_id)
                if o is not None:
                    out.append(VisualObservation(track.track_id, frame_id, o.pixel, o.w))
        return out

    def update(self, tracks: Sequence[Track], depth_factors: Sequence[DepthFactor] = ()) -> np.ndarray:
        """一次量测更新 (一轮 IRLS), 返回增量"""
        obs = self.visual_observations(tracks)
        A, b = stack_residuals(self.state, obs, depth_factors, self.K, self.cfg, self.gates)
        self.last_counts = {"visual_rows": 2 * len(obs), "depth_factors": len(depth_factors)}
        if A.shape[0] == 0:
            return np.zeros(self.nav.dim)
        reference = solve_normal_equations(self.state, A, b) if self.cfg.oracle_check else None
        self.state = qr_update(self.state, A, b, self.cfg.regularization_floor)
        self.last_residual_norm = self.state.info.get("residual_norm", 0.0)
        delta, self.state = back_substitute(self.state)
        if reference is not None:
            err = float(np.linalg.norm(delta - reference) / max(np.linalg.norm(reference), 1e-12))
            self.last_oracle_error = err
            self.oracle_errors.append(err)
        return delta

    def emit(self) -> OdometryRecord:
        return emit_odometry(self.state)


if __name__ == "__main__":
    prior = SqrtState(np.eye(2), np.zeros(2), None)
    post = qr_update(prior, np.array([[1.0, 0.0]]), np.array([1.0]))
    print("【QR 更新】:", scipy.linalg.solve_triangular(post.R, post.d))
