"""Backend selection for the hot selection kernels.

The compiled extension is used when it was built; otherwise, or when the
``UADET_PURE_PYTHON`` environment variable is set to a non-empty value, the
pure-Python twin is used.  ``BACKEND`` names the active one.
"""
import os

if os.environ.get("UADET_PURE_PYTHON"):
    from ._kernels_py import hard_nms, iou_matrix, soft_nms_select
    BACKEND = "python"
else:
    try:
        from ._kernels import hard_nms, iou_matrix, soft_nms_select
        BACKEND = "cython"
    except ImportError:
        from ._kernels_py import hard_nms, iou_matrix, soft_nms_select
        BACKEND = "python"

__all__ = ["BACKEND", "hard_nms", "iou_matrix", "soft_nms_select"]
