"""Hot-loop kernels: compiled when available, numpy fallback otherwise.

Set ``FXFUSION_PURE_PYTHON=1`` to force the fallback. ``BACKEND`` names the
implementation in use.
"""

import os

from . import _pykernels as python

compiled = None
if not os.environ.get("FXFUSION_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

gibbs_sweep = _impl.gibbs_sweep
grow_tree = _impl.grow_tree
predict_tree = _impl.predict_tree
row_products = _impl.row_products

__all__ = ["BACKEND", "compiled", "python", "gibbs_sweep", "grow_tree", "predict_tree", "row_products"]
