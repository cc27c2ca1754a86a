"""
monohydra: 单目 RGB+IMU 度量语义 SLAM 流水线与合成室内世界模拟器
"""

__version__ = '0.1.0'
