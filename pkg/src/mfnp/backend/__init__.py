"""Kernel backend selection.

The compiled Cython core is used when it is importable; otherwise the
pure-numpy fallback takes over. ``MFNP_BACKEND=python`` or
``MFNP_BACKEND=compiled`` forces the choice (the latter raises if the
extension was never built). Everything above this package is agnostic to
which implementation is active.
"""

import os

from . import _pykern


def _select():
    forced = os.environ.get("MFNP_BACKEND", "").strip().lower()
    if forced in ("python", "py"):
        return _pykern
    try:
        from . import _ckern
    except ImportError:
        if forced in ("compiled", "c"):
            raise ImportError(
                "MFNP_BACKEND=compiled but the mfnp.backend._ckern extension "
                "is not built; run `pip install -e . --no-build-isolation`"
            )
        return _pykern
    return _ckern


kernels = _select()
BACKEND = kernels.NAME


def available_backends():
    """Return the importable kernel modules keyed by name."""
    out = {_pykern.NAME: _pykern}
    try:
        from . import _ckern

        out[_ckern.NAME] = _ckern
    except ImportError:
        pass
    return out
