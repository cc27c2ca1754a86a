"""
SE(3)/SO(3) 李群运算与针孔相机模型

约定:
- 四元数按 (x, y, z, w) 存储, 与 scipy Rotation 一致
- 李代数 6 维向量排列为 [角速度; 线速度]
- Pose(frame_from=B, frame_to=W) 把 B 系中的点映射到 W 系
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy.spatial.transform import Rotation

try:
    from ..model_types import MonoHydraError
except ImportError:
    from monohydra.model_types import MonoHydraError

SMALL_ANGLE = 1e-8
TAYLOR_ANGLE = 1e-2
PI_MARGIN = 1e-6


class GeometryError(MonoHydraError):
    """几何运算错误"""


class BehindCameraError(GeometryError):
    """点位于相机后方"""


class InvalidDepthError(GeometryError):
    """深度非正"""


class DegenerateRotationError(GeometryError):
    """旋转角接近 π, 对数映射不唯一"""


class FrameMismatchError(GeometryError):
    """位姿复合的坐标系不匹配"""


def skew(v: np.ndarray) -> np.ndarray:
    """3 维向量的反对称矩阵 [v]x"""
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]], dtype=float
    )


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton 四元数乘积 q1 ⊗ q2 (xyzw)"""
    x1, y1, z1, w1 = q1
    x2, y2, z2, w2 = q2
    return np.array(
        [
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    q = Rotation.from_matrix(R).as_quat()
    return q if q[3] >= 0 else -q


def _normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise GeometryError(f"invalid quaternion {q}")
    return q / n


def exp_so3_quat(omega: np.ndarray) -> np.ndarray:
    """so(3) 指数映射, 返回单位四元数"""
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    if theta < SMALL_ANGLE:
        half = 0.5 * omega * (1.0 - theta * theta / 24.0)
        return _normalize(np.array([half[0], half[1], half[2], 1.0 - theta * theta / 8.0]))
    axis = omega / theta
    s = np.sin(0.5 * theta)
    return np.array([axis[0] * s, axis[1] * s, axis[2] * s, np.cos(0.5 * theta)])


def exp_so3(omega: np.ndarray) -> np.ndarray:
    """so(3) 指数映射, 返回旋转矩阵"""
    return quat_to_matrix(exp_so3_quat(omega))


def log_so3_quat(q: np.ndarray) -> np.ndarray:
    """单位四元数的对数映射; 角度 ≥ π − 1e-6 时报错"""
    q = _normalize(q)
    if q[3] < 0:
        q = -q
    v = q[:3]
    vn = float(np.linalg.norm(v))
    theta = 2.0 * np.arctan2(vn, q[3])
    if theta >= np.pi - PI_MARGIN:
        raise DegenerateRotationError(f"rotation angle {theta:.9f} too close to pi")
    if vn < 0.5 * SMALL_ANGLE:
        return 2.0 * v / q[3]
    return theta * v / vn


def log_so3(R: np.ndarray) -> np.ndarray:
    return log_so3_quat(matrix_to_quat(R))


def _v_matrix(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    t2 = theta * theta
    if theta < TAYLOR_ANGLE:
        # 1 − cos θ 与 θ − sin θ 在小角度下相消, 改用级数
        a = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        b = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        a = (1.0 - np.cos(theta)) / t2
        b = (theta - np.sin(theta)) / (t2 * theta)
    return np.eye(3) + a * W + b * W @ W


def _v_inverse(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    t2 = theta * theta
    if theta < TAYLOR_ANGLE:
        coef = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        coef = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / t2
    return np.eye(3) - 0.5 * W + coef * W @ W


@dataclass(frozen=True, eq=False)
class Twist:
    """李代数元素 [angular; linear]"""

    angular: np.ndarray
    linear: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angular", np.asarray(self.angular, dtype=float).reshape(3))
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float).reshape(3))
        if not (np.all(np.isfinite(self.angular)) and np.all(np.isfinite(self.linear))):
            raise GeometryError("twist has non-finite entries")

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.angular, self.linear])

    @classmethod
    def from_vector(cls, xi: np.ndarray) -> "Twist":
        xi = np.asarray(xi, dtype=float).reshape(6)
        return cls(xi[:3], xi[3:])


@dataclass(frozen=True, eq=False)
class Pose:
    """SE(3) 刚体变换, 旋转以单位四元数存储"""

    quat: np.ndarray
    translation: np.ndarray
    frame_from: str = ""
    frame_to: str = ""

    def __post_init__(self):
        object.__setattr__(self, "quat", _normalize(np.asarray(self.quat, dtype=float).reshape(4)))
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=float).reshape(3).copy()
        )

    @classmethod
    def identity(cls, frame_from: str = "", frame_to: str = "") -> "Pose":
        return cls(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3), frame_from, frame_to)

    @classmethod
    def from_rt(cls, R: np.ndarray, t: np.ndarray, frame_from: str = "", frame_to: str = "") -> "Pose":
        return cls(matrix_to_quat(np.asarray(R, dtype=float)), t, frame_from, frame_to)

    @classmethod
    def from_matrix(cls, T: np.ndarray, frame_from: str = "", frame_to: str = "") -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls.from_rt(T[:3, :3], T[:3, 3], frame_from, frame_to)

    @classmethod
    def from_yaw(cls, yaw: float, t: np.ndarray, frame_from: str = "", frame_to: str = "") -> "Pose":
        return cls(np.array([0.0, 0.0, np.sin(0.5 * yaw), np.cos(0.5 * yaw)]), t, frame_from, frame_to)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other; self.frame_from 必须等于 other.frame_to (两者都有标注时)"""
        if self.frame_from and other.frame_to and self.frame_from != other.frame_to:
            raise FrameMismatchError(
                f"cannot compose {self.frame_to}<-{self.frame_from} with "
                f"{other.frame_to}<-{other.frame_from}"
            )
        q = quat_multiply(self.quat, other.quat)
        t = self.rotation @ other.translation + self.translation
        return Pose(q, t, other.frame_from, self.frame_to)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        q_inv = np.array([-self.quat[0], -self.quat[1], -self.quat[2], self.quat[3]])
        t_inv = -(quat_to_matrix(q_inv) @ self.translation)
        return Pose(q_inv, t_inv, self.frame_to, self.frame_from)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """变换单点 (3,) 或点集 (N, 3)"""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def adjoint(self) -> np.ndarray:
        """伴随矩阵, 作用于 [angular; linear]"""
        R = self.rotation
        Ad = np.zeros((6, 6))
        Ad[:3, :3] = R
        Ad[3:, 3:] = R
        Ad[3:, :3] = skew(self.translation) @ R
        return Ad

    def relabel(self, frame_from: str = "", frame_to: str = "") -> "Pose":
        return Pose(self.quat, self.translation, frame_from, frame_to)

    def yaw(self) -> float:
        R = self.rotation
        return float(np.arctan2(R[1, 0], R[0, 0]))

    def __repr__(self) -> str:
        return (
            f"Pose(t={np.round(self.translation, 6).tolist()}, "
            f"q={np.round(self.quat, 6).tolist()}, {self.frame_to}<-{self.frame_from})"
        )


def exp_se3(xi: Union[Twist, np.ndarray]) -> Pose:
    """se(3) 指数映射"""
    if not isinstance(xi, Twist):
        xi = Twist.from_vector(xi)
    q = exp_so3_quat(xi.angular)
    t = _v_matrix(xi.angular) @ xi.linear
    return Pose(q, t)


def log_se3(T: Pose) -> Twist:
    """SE(3) 对数映射"""
    omega = log_so3_quat(T.quat)
    v = _v_inverse(omega) @ T.translation
    return Twist(omega, v)


def ad_twist(xi: np.ndarray) -> np.ndarray:
    """李代数伴随 ad(ξ), ξ = [ω; v]"""
    xi = np.asarray(xi, dtype=float)
    ad = np.zeros((6, 6))
    ad[:3, :3] = skew(xi[:3])
    ad[3:, 3:] = skew(xi[:3])
    ad[3:, :3] = skew(xi[3:])
    return ad


def right_jacobian_inv_se3(xi: np.ndarray) -> np.ndarray:
    """J_r^{-1}(ξ) 的二阶级数 I + ad(ξ)/2 + ad(ξ)²/12, 无除法, 零附近不退化"""
    ad = ad_twist(xi)
    return np.eye(6) + 0.5 * ad + ad @ ad / 12.0


class CameraIntrinsics(BaseModel):
    """针孔相机内参"""

    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float
    width: int = Field(gt=0)
    height: int = Field(gt=0)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def in_bounds(self, pixel: np.ndarray) -> np.ndarray:
        """像素最近整数位置是否在图像内; 支持 (2,) 或 (N, 2)"""
        pixel = np.asarray(pixel, dtype=float)
        u = np.rint(pixel[..., 0])
        v = np.rint(pixel[..., 1])
        return (u >= 0) & (u <= self.width - 1) & (v >= 0) & (v <= self.height - 1)


def project(P: np.ndarray, K: CameraIntrinsics) -> Tuple[np.ndarray, float]:
    """相机系点投影到像素, 返回 (pixel, depth)"""
    P = np.asarray(P, dtype=float)
    z = float(P[2])
    if not z > 0:
        raise BehindCameraError(f"point {P.tolist()} is behind the camera")
    pixel = np.array([K.fx * P[0] / z + K.cx, K.fy * P[1] / z + K.cy])
    return pixel, z


def project_points(P: np.ndarray, K: CameraIntrinsics) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """批量投影 (N, 3) → 像素 (N, 2), 深度 (N,), 前方掩码 (N,)"""
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    z = P[:, 2]
    front = z > 0
    safe = np.where(front, z, 1.0)
    pixels = np.stack([K.fx * P[:, 0] / safe + K.cx, K.fy * P[:, 1] / safe + K.cy], axis=1)
    return pixels, z, front


def projection_jacobian(P: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """∂pixel/∂P, 2x3"""
    x, y, z = P
    return np.array(
        [
            [K.fx / z, 0.0, -K.fx * x / (z * z)],
            [0.0, K.fy / z, -K.fy * y / (z * z)],
        ]
    )


def backproject(pixel: np.ndarray, depth: float, K: CameraIntrinsics) -> np.ndarray:
    """像素与深度反投影为相机系点"""
    if not depth > 0:
        raise InvalidDepthError(f"depth {depth} must be positive")
    u, v = float(pixel[0]), float(pixel[1])
    return np.array([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, float(depth)])


def pixel_rays(K: CameraIntrinsics) -> np.ndarray:
    """每个像素中心的相机系射线 (z 分量为 1), 形状 (H, W, 3)"""
    u, v = np.meshgrid(np.arange(K.width, dtype=float), np.arange(K.height, dtype=float))
    return np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)


def backproject_map(depth: np.ndarray, K: CameraIntrinsics) -> Tuple[np.ndarray, np.ndarray]:
    """整幅深度图反投影, 返回 (H, W, 3) 点网格与有效掩码"""
    depth = np.asarray(depth, dtype=float)
    valid = np.isfinite(depth) & (depth > 0)
    points = pixel_rays(K) * np.where(valid, depth, 0.0)[..., None]
    return points, valid


# 机体系: x 前, y 左, z 上; 相机系: z 前, x 右, y 下
R_BC = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
T_BC = Pose(np.array([-0.5, 0.5, -0.5, 0.5]), np.zeros(3), "camera", "body")


def camera_pose(T_WB: Pose) -> Pose:
    """机体位姿 → 相机位姿 T_WC"""
    return T_WB.relabel("body", T_WB.frame_to or "world") @ T_BC


def propagate_points(depth: np.ndarray, K: CameraIntrinsics, T: Pose) -> Tuple[np.ndarray, np.ndarray]:
    """反投影深度图并按相对位姿变换: P' = T·P

    Args:
        depth: (H, W) 深度图, 无效处为 0
        K: 相机内参
        T: 源相机系到目标相机系的相对位姿

    Returns:
        (N, 3) 目标系点, (H, W) 有效掩码 (点按行优先顺序对应有效像素)
    """
    points, valid = backproject_map(depth, K)
    return T.transform(points[valid]), valid


if __name__ == "__main__":
    xi = Twist([0.1, -0.2, 0.3], [1.0, 2.0, 3.0])
    T = exp_se3(xi)
    print("【exp/log】:", T, log_se3(T).vector)
    K = CameraIntrinsics(fx=100, fy=100, cx=0, cy=0, width=10, height=10)
    print("【project】:", project(np.array([0.0, 0.0, 2.0]), K))
