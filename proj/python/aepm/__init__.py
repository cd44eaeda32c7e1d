"""Probabilistic knee-angle estimation from whole-body joint angles.

Thin wrapper over the C++ core. When the compiled extension is not
installed next to this package (development builds), set AEPM_EXT_DIR to
the directory containing the built `_aepm` module.
"""

import os
import sys

try:
    from ._aepm import *  # noqa: F401,F403
    from ._aepm import __doc__ as _core_doc  # noqa: F401
except ImportError:  # development tree: extension lives in the build dir
    _ext_dir = os.environ.get("AEPM_EXT_DIR")
    if not _ext_dir:
        raise
    sys.path.insert(0, _ext_dir)
    from _aepm import *  # noqa: F401,F403
