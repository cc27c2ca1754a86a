"""
各处理阶段: 模拟器、深度头数值、VIO 前端/滤波器、时序融合、位姿图、建图、评估
"""
