"""
数据类型定义: 场景规格、噪声、各阶段配置、运行报告
"""

from typing import List, Dict, Optional, Tuple, Any, Literal
from pydantic import BaseModel, Field, model_validator

# 跟踪器
from .utils.stage_tracker import StageTracker
from .utils.frame_tracker import FrameTracker


class MonoHydraError(Exception):
    """包内所有可预期错误的基类"""


class SpecError(MonoHydraError):
    """场景规格无效"""


class ConfigError(MonoHydraError):
    """运行配置无效或无法解析"""


Box3 = Tuple[float, float, float, float, float, float]  # xmin, ymin, zmin, xmax, ymax, zmax
Footprint = Tuple[float, float, float, float]  # xmin, ymin, xmax, ymax


class RoomSpec(BaseModel):
    """房间: 轴对齐矩形地面轮廓"""

    id: int
    name: str = "room"
    footprint: Footprint
    wall_height: float = Field(default=2.6, gt=0)

    @model_validator(mode="after")
    def _check_footprint(self):
        xmin, ymin, xmax, ymax = self.footprint
        if not (xmin < xmax and ymin < ymax):
            raise ValueError(f"room {self.id}: empty footprint {self.footprint}")
        return self


class DoorwaySpec(BaseModel):
    """两个房间共享墙上的门洞"""

    rooms: Tuple[int, int]
    center: Tuple[float, float]
    width: float = Field(default=1.0, gt=0)
    height: float = Field(default=2.0, gt=0)


class ObjectSpec(BaseModel):
    """静态物体"""

    label: str
    box: Box3
    room_id: int

    @model_validator(mode="after")
    def _check_box(self):
        b = self.box
        if not (b[0] < b[3] and b[1] < b[4] and b[2] < b[5]):
            raise ValueError(f"object {self.label}: degenerate box {b}")
        return self


class DynamicAgentSpec(BaseModel):
    """沿闭合路径匀速行走的动态体"""

    label: str = "person"
    waypoints: List[Tuple[float, float]]
    speed: float = Field(default=0.8, ge=0)
    size: Tuple[float, float, float] = (0.5, 0.5, 1.7)
    landmarks: int = Field(default=24, ge=0)

    @model_validator(mode="after")
    def _check_path(self):
        if len(self.waypoints) < 1:
            raise ValueError("dynamic agent needs at least one waypoint")
        return self


class SceneSpec(BaseModel):
    """合成室内场景"""

    name: str = "scene"
    floor_z: float = -1.2
    wall_thickness: float = Field(default=0.1, gt=0)
    rooms: List[RoomSpec]
    doorways: List[DoorwaySpec] = []
    objects: List[ObjectSpec] = []
    dynamic_agents: List[DynamicAgentSpec] = []
    label_set: List[str]
    dynamic_classes: List[str] = ["person"]
    structural_classes: List[str] = ["floor", "wall", "ceiling"]
    static_landmarks: int = Field(default=800, ge=0)

    @model_validator(mode="after")
    def _check_scene(self):
        if len(set(self.label_set)) != len(self.label_set):
            raise ValueError("label_set has duplicate classes")
        for name in self.structural_classes:
            if name not in self.label_set:
                raise ValueError(f"structural class {name!r} missing from label_set")
        room_ids = [r.id for r in self.rooms]
        if len(set(room_ids)) != len(room_ids):
            raise ValueError("duplicate room ids")
        rooms = {r.id: r for r in self.rooms}
        for obj in self.objects:
            if obj.label not in self.label_set:
                raise ValueError(f"object class {obj.label!r} not in label_set")
            if obj.room_id not in rooms:
                raise ValueError(f"object {obj.label!r} references unknown room {obj.room_id}")
            xmin, ymin, xmax, ymax = rooms[obj.room_id].footprint
            b = obj.box
            if b[0] < xmin or b[1] < ymin or b[3] > xmax or b[4] > ymax:
                raise ValueError(f"object {obj.label!r} leaves room {obj.room_id} footprint")
        for agent in self.dynamic_agents:
            if agent.label not in self.label_set:
                raise ValueError(f"agent class {agent.label!r} not in label_set")
        for name in self.dynamic_classes:
            if name not in self.label_set:
                raise ValueError(f"dynamic class {name!r} not in label_set")
        for door in self.doorways:
            for rid in door.rooms:
                if rid not in rooms:
                    raise ValueError(f"doorway references unknown room {rid}")
        return self

    def label_id(self, name: str) -> int:
        return self.label_set.index(name)

    def dynamic_ids(self) -> List[int]:
        return [self.label_id(c) for c in self.dynamic_classes]

    def structural_ids(self) -> List[int]:
        return [self.label_id(c) for c in self.structural_classes]


class NoiseSpec(BaseModel):
    """传感器噪声 (代替网络预测误差)"""

    depth_sigma0: float = Field(default=0.0, ge=0)
    depth_sigma1: float = Field(default=0.0, ge=0)
    label_flip_prob: float = Field(default=0.0, ge=0, le=1)
    flicker_amplitude: float = Field(default=0.0, ge=0)
    gyro_noise: float = Field(default=0.0, ge=0)
    accel_noise: float = Field(default=0.0, ge=0)
    gyro_bias: float = Field(default=0.0, ge=0)
    accel_bias: float = Field(default=0.0, ge=0)
    descriptor_noise: float = Field(default=0.0, ge=0)
    pixel_noise: float = Field(default=0.0, ge=0)
    seed: int = Field(default=0, ge=0)


class MotionProfile(BaseModel):
    """平面、仅偏航的运动轨迹"""

    kind: Literal["line", "corridor_loop", "room_scan", "figure_eight"] = "corridor_loop"
    velocity: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    extent_x: float = Field(default=2.5, gt=0)
    extent_y: float = Field(default=1.0, gt=0)
    laps: int = Field(default=1, ge=1)
    period: Optional[float] = Field(default=None, gt=0)
    scan_amplitude: float = Field(default=0.6, ge=0)
    scan_frequency: float = Field(default=0.25, ge=0)


class SimConfig(BaseModel):
    """模拟器速率、分辨率与内参"""

    duration: float = Field(default=10.0, ge=0)
    frame_rate: float = Field(default=20.0, gt=0)
    imu_rate: float = Field(default=400.0, gt=0)
    width: int = Field(default=160, gt=0)
    height: int = Field(default=120, gt=0)
    fx: float = Field(default=120.0, gt=0)
    fy: float = Field(default=120.0, gt=0)
    cx: float = 80.0
    cy: float = 60.0
    d_max_render: float = Field(default=10.0, gt=0)
    descriptor_dim: int = Field(default=32, ge=2)
    profile: MotionProfile = MotionProfile()
    noise: NoiseSpec = NoiseSpec()

    @model_validator(mode="after")
    def _check_rates(self):
        ratio = self.imu_rate / self.frame_rate
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("imu_rate must be an integer multiple of frame_rate")
        return self

    @property
    def imu_per_frame(self) -> int:
        return int(round(self.imu_rate / self.frame_rate))


class GateConfig(BaseModel):
    """稀疏深度因子的门控与权重"""

    tau_omega: float = Field(default=0.8, gt=0)
    tau_pi: float = Field(default=2.0, gt=0)
    s_d: int = Field(default=4, gt=0)
    lambda_d: float = Field(default=1.0, gt=0)
    sigma0: float = Field(default=0.05, gt=0)
    sigma1: float = Field(default=0.02, gt=0)
    ratio_threshold: float = Field(default=0.7, gt=0, lt=1)
    huber_delta: float = Field(default=1.345, gt=0)


class FilterConfig(BaseModel):
    """平方根信息滤波器参数"""

    window: int = Field(default=8, ge=1)
    sigma_px: float = Field(default=1.0, gt=0)
    regularization_floor: float = Field(default=1e-9, gt=0)
    max_landmarks: int = Field(default=60, ge=0)
    min_parallax_deg: float = Field(default=1.0, ge=0)
    max_visual_residual_px: float = Field(default=10.0, gt=0)
    min_landmark_depth: float = Field(default=0.1, gt=0)
    oracle_check: bool = False
    prior_sigma_rotation: float = Field(default=1e-3, gt=0)
    prior_sigma_position: float = Field(default=1e-3, gt=0)
    prior_sigma_velocity: float = Field(default=0.05, gt=0)
    prior_sigma_gyro_bias: float = Field(default=0.01, gt=0)
    prior_sigma_accel_bias: float = Field(default=0.1, gt=0)
    # 滤波器假设的 IMU 噪声下限, 零噪声模拟时保持过程噪声可逆
    gyro_noise_floor: float = Field(default=1e-4, gt=0)
    accel_noise_floor: float = Field(default=1e-3, gt=0)
    gyro_bias_floor: float = Field(default=1e-6, gt=0)
    accel_bias_floor: float = Field(default=1e-5, gt=0)


class VioConfig(BaseModel):
    gates: GateConfig = GateConfig()
    filter: FilterConfig = FilterConfig()


class BinConfig(BaseModel):
    """自适应深度分箱"""

    d_min: float = Field(default=0.1, gt=0)
    d_max: float = 10.0
    n_bins: int = Field(default=64, ge=1)

    @model_validator(mode="after")
    def _check_range(self):
        if not self.d_min < self.d_max:
            raise ValueError("d_min must be smaller than d_max")
        return self


class DepthHeadConfig(BinConfig):
    silog_lambda: float = Field(default=0.85, ge=0, le=1)
    aux_weights: List[float] = [1.0, 1.0, 1.0]


class FusionConfig(BaseModel):
    """时序位姿扭曲融合"""

    K: int = Field(default=0, ge=0)
    delta_d: float = Field(default=0.15, gt=0)
    dynamic_classes: List[str] = ["person"]
    epsilon: float = Field(default=1e-9, gt=0)


class MappingConfig(BaseModel):
    voxel_size: float = Field(default=0.1, gt=0)
    min_voxels: int = Field(default=5, ge=1)
    place_spacing: float = Field(default=1.0, gt=0)
    place_height: float = 0.0
    place_clearance: float = Field(default=0.3, ge=0)
    carve_stride: int = Field(default=4, ge=1)


class PoseGraphConfig(BaseModel):
    sigma_odom_t: float = Field(default=0.01, gt=0)
    sigma_odom_r: float = Field(default=0.005, gt=0)
    sigma_lc_t: float = Field(default=0.005, gt=0)
    sigma_lc_r: float = Field(default=0.002, gt=0)
    loop_radius: float = Field(default=1.0, gt=0)
    min_separation: int = Field(default=30, ge=1)
    accept_radius: float = Field(default=0.5, gt=0)
    loop_noise_t: float = Field(default=0.0, ge=0)
    loop_noise_r: float = Field(default=0.0, ge=0)
    max_iters: int = Field(default=20, ge=1)
    tol: float = Field(default=1e-8, gt=0)
    initial_damping: float = Field(default=1e-4, gt=0)


class MetricsConfig(BaseModel):
    object_radius: float = Field(default=0.5, gt=0)
    box_iou: float = Field(default=0.25, gt=0, le=1)
    place_radius: float = Field(default=0.5, gt=0)
    association_tolerance: float = Field(default=0.02, gt=0)
    ate_align: Literal["none", "rigid"] = "rigid"
    epsilon: float = Field(default=1e-9, gt=0)


class FeatureFlags(BaseModel):
    """消融开关"""

    depth_factors: bool = False
    semantic_mask: bool = False
    temporal_K: int = Field(default=0, ge=0)

    def label(self) -> str:
        if not self.depth_factors and not self.semantic_mask and self.temporal_K == 0:
            return "baseline"
        parts = []
        if self.depth_factors:
            parts.append("depth")
        if self.semantic_mask:
            parts.append("mask")
        if self.temporal_K > 0 or (self.depth_factors and self.semantic_mask):
            parts.append(f"K={self.temporal_K}")
        return "+".join(parts)


class RunConfig(BaseModel):
    """一次完整运行的配置"""

    model_config = {"extra": "forbid"}

    name: str = "run"
    scene: str = "scenes/two_rooms.json"
    seed: int = Field(default=7, ge=0)
    output_dir: str = "runs"
    flags: FeatureFlags = FeatureFlags()
    sim: SimConfig = SimConfig()
    vio: VioConfig = VioConfig()
    depth_head: DepthHeadConfig = DepthHeadConfig()
    fusion: FusionConfig = FusionConfig()
    mapping: MappingConfig = MappingConfig()
    pose_graph: PoseGraphConfig = PoseGraphConfig()
    metrics: MetricsConfig = MetricsConfig()

    @model_validator(mode="after")
    def _sync(self):
        # 窗口长度与噪声种子各只有一个来源
        self.fusion.K = self.flags.temporal_K
        self.sim.noise.seed = self.seed
        return self


class LoopCandidate(BaseModel):
    """回环候选"""

    pair: Tuple[int, int]
    distance: float
    accepted: bool = False
    gt_distance: Optional[float] = None


class RunReport(BaseModel):
    """运行报告 (JSON)"""

    label: str
    name: str
    n_frames: int
    metrics: Dict[str, float]
    relative: Dict[str, str] = {}
    counters: Dict[str, int] = {}
    config: Dict[str, Any]


class TrackerContext(BaseModel):
    """跟踪器上下文"""

    model_config = {"arbitrary_types_allowed": True}

    stage_tracker: StageTracker
    frame_tracker: FrameTracker
