#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
CVID: Conditional Variational Image Deraining

Thin entry-point shim. All logic lives in cvid.cli so it's importable for
packaging (`pip install -e .` provides a `cvid` console command too).

License: MIT
"""

import sys

from cvid.cli import main

if __name__ == "__main__":
    sys.exit(main())
