#!/usr/bin/env python3
"""
monohydra 运行脚本
用法: python run_pipeline.py {simulate|run|ablate|report} [--config 文件] [--set key=value ...]
"""

import sys
from monohydra.harness import main

if __name__ == "__main__":
    if len(sys.argv) < 2:
        print("用法: python run_pipeline.py {simulate|run|ablate|report} [--config 文件] [--set key=value ...]")
        sys.exit(2)
    sys.exit(main(sys.argv[1:]))
