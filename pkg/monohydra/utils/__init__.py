"""
共享工具: 几何、场景图、读写、跟踪器
"""
